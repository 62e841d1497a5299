//! Named parameter tensors of a fusion operator and their flat view.
//!
//! The flat view lists a node's own tensors in layout order, followed by each
//! composite branch in turn. Every scalar therefore has one global index.

use std::hash::{DefaultHasher, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{FusionSpec, Scheme};
use crate::error::{FusionError, Result};
use crate::tensor::DenseTensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: DenseTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    entries: Vec<ParamEntry>,
    branches: Vec<FusionParams>,
}

/// One tensor slot of a layout: name, shape and the fan-in used for init.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

impl Slot {
    fn new(name: impl Into<String>, shape: &[usize], fan_in: usize) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            fan_in,
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Own tensor slots of `spec` (composite branches are laid out separately).
pub fn layout(spec: &FusionSpec) -> Vec<Slot> {
    let [i, j] = spec.input_dims;
    let k = spec.output_dim;
    match &spec.scheme {
        Scheme::Block {
            core: [l, m, n],
            blocks: r,
            slice_rank,
        } => {
            let (l, m, n, r) = (*l, *m, *n, *r);
            let mut slots = vec![
                Slot::new("A", &[i, l * r], i),
                Slot::new("B", &[j, m * r], j),
                Slot::new("C", &[k, n * r], n * r),
            ];
            for b in 0..r {
                match slice_rank {
                    None => slots.push(Slot::new(format!("D{b}"), &[l, m, n], l * m)),
                    Some(rho) => {
                        slots.push(Slot::new(format!("U{b}"), &[n, *rho, l], l));
                        slots.push(Slot::new(format!("V{b}"), &[n, *rho, m], m));
                    }
                }
            }
            slots
        }
        Scheme::Tucker {
            core: [l, m, n],
            slice_rank,
        } => {
            let (l, m, n) = (*l, *m, *n);
            let mut slots = vec![
                Slot::new("A", &[i, l], i),
                Slot::new("B", &[j, m], j),
                Slot::new("C", &[k, n], n),
            ];
            match slice_rank {
                None => slots.push(Slot::new("D", &[l, m, n], l * m)),
                Some(rho) => {
                    slots.push(Slot::new("U", &[n, *rho, l], l));
                    slots.push(Slot::new("V", &[n, *rho, m], m));
                }
            }
            slots
        }
        Scheme::Cp { rank } => vec![
            Slot::new("A", &[i, *rank], i),
            Slot::new("B", &[j, *rank], j),
            Slot::new("C", &[k, *rank], *rank),
        ],
        Scheme::Mcb { sketch_dim, .. } => vec![Slot::new("W", &[k, *sketch_dim], *sketch_dim)],
        Scheme::LinearSum { hidden: d } => vec![
            Slot::new("P1", &[i, *d], i),
            Slot::new("P2", &[j, *d], j),
            Slot::new("W", &[k, *d], *d),
        ],
        Scheme::ConcatMlp { hidden: h } => {
            let h = *h;
            vec![
                Slot::new("W1", &[h, i + j], i + j),
                Slot::new("b1", &[h], i + j),
                Slot::new("W2", &[h, h], h),
                Slot::new("b2", &[h], h),
                Slot::new("W3", &[k, h], h),
                Slot::new("b3", &[k], h),
            ]
        }
        Scheme::Mfb {
            factor_rank,
            pooled_dim,
        } => {
            let ko = factor_rank * pooled_dim;
            vec![
                Slot::new("U", &[i, ko], i),
                Slot::new("V", &[j, ko], j),
                Slot::new("W", &[k, *pooled_dim], *pooled_dim),
            ]
        }
        Scheme::Mfh {
            cascade,
            factor_rank,
            pooled_dim,
        } => {
            let ko = factor_rank * pooled_dim;
            let mut slots = Vec::with_capacity(2 * cascade + 1);
            for q in 0..*cascade {
                slots.push(Slot::new(format!("U{q}"), &[i, ko], i));
                slots.push(Slot::new(format!("V{q}"), &[j, ko], j));
            }
            let concat = cascade * pooled_dim;
            slots.push(Slot::new("W", &[k, concat], concat));
            slots
        }
        Scheme::Composite { branches } => {
            let concat: usize = branches.iter().map(|b| b.output_dim).sum();
            vec![Slot::new("W", &[k, concat], concat)]
        }
    }
}

fn branch_specs(spec: &FusionSpec) -> &[FusionSpec] {
    match &spec.scheme {
        Scheme::Composite { branches } => branches,
        _ => &[],
    }
}

/// Fills every tensor i.i.d. uniform on `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_params(spec: &FusionSpec, seed: u64) -> FusionParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_with(spec, &mut rng)
}

fn init_with(spec: &FusionSpec, rng: &mut ChaCha8Rng) -> FusionParams {
    let entries = layout(spec)
        .into_iter()
        .map(|slot| {
            let bound = 1.0 / (slot.fan_in as f64).sqrt();
            let data = (0..slot.len())
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            ParamEntry {
                name: slot.name,
                tensor: DenseTensor::new(slot.shape, data).expect("layout shapes are valid"),
            }
        })
        .collect();
    let branches = branch_specs(spec).iter().map(|b| init_with(b, rng)).collect();
    FusionParams { entries, branches }
}

impl FusionParams {
    pub fn zeros(spec: &FusionSpec) -> Self {
        let entries = layout(spec)
            .into_iter()
            .map(|slot| ParamEntry {
                tensor: DenseTensor::zeros(&slot.shape),
                name: slot.name,
            })
            .collect();
        let branches = branch_specs(spec).iter().map(FusionParams::zeros).collect();
        Self { entries, branches }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: DenseTensor::zeros(e.tensor.shape()),
                })
                .collect(),
            branches: self.branches.iter().map(FusionParams::zeros_like).collect(),
        }
    }

    /// Rebuilds parameters for `spec` from a flat vector.
    pub fn from_flat(spec: &FusionSpec, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(spec);
        p.load_flat(flat)?;
        Ok(p)
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn branches(&self) -> &[FusionParams] {
        &self.branches
    }

    pub fn branches_mut(&mut self) -> &mut [FusionParams] {
        &mut self.branches
    }

    pub fn get(&self, name: &str) -> Option<&DenseTensor> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseTensor> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.tensor)
    }

    pub(crate) fn tensor(&self, idx: usize) -> &[f64] {
        self.entries[idx].tensor.data()
    }

    pub(crate) fn tensor_mut(&mut self, idx: usize) -> &mut [f64] {
        self.entries[idx].tensor.data_mut()
    }

    /// Total number of scalars, including branches.
    pub fn len(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum::<usize>()
            + self.branches.iter().map(FusionParams::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        self.flatten_into(&mut out);
        out
    }

    fn flatten_into(&self, out: &mut Vec<f64>) {
        for e in &self.entries {
            out.extend_from_slice(e.tensor.data());
        }
        for b in &self.branches {
            b.flatten_into(out);
        }
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(FusionError::shape("flat parameter vector", self.len(), flat.len()));
        }
        self.load_from(flat);
        Ok(())
    }

    fn load_from<'a>(&mut self, mut flat: &'a [f64]) -> &'a [f64] {
        for e in &mut self.entries {
            let n = e.tensor.len();
            e.tensor.data_mut().copy_from_slice(&flat[..n]);
            flat = &flat[n..];
        }
        for b in &mut self.branches {
            flat = b.load_from(flat);
        }
        flat
    }

    /// `(global offset, qualified name, len)` for every tensor in flat order.
    pub fn index(&self) -> Vec<(usize, String, usize)> {
        let mut out = Vec::new();
        self.index_into("", &mut 0, &mut out);
        out
    }

    fn index_into(&self, prefix: &str, offset: &mut usize, out: &mut Vec<(usize, String, usize)>) {
        for e in &self.entries {
            out.push((*offset, format!("{prefix}{}", e.name), e.tensor.len()));
            *offset += e.tensor.len();
        }
        for (b, branch) in self.branches.iter().enumerate() {
            branch.index_into(&format!("{prefix}branch{b}."), offset, out);
        }
    }

    /// Checks that the tensor names and shapes match `spec`'s layout.
    pub fn check_layout(&self, spec: &FusionSpec) -> Result<()> {
        let slots = layout(spec);
        if slots.len() != self.entries.len() {
            return Err(FusionError::Contract(format!(
                "{} parameter tensors for a {} spec that needs {}",
                self.entries.len(),
                spec.kind(),
                slots.len()
            )));
        }
        for (slot, e) in slots.iter().zip(&self.entries) {
            if slot.name != e.name || slot.shape != e.tensor.shape() {
                return Err(FusionError::Contract(format!(
                    "parameter `{}` {:?} does not match slot `{}` {:?}",
                    e.name,
                    e.tensor.shape(),
                    slot.name,
                    slot.shape
                )));
            }
        }
        let specs = branch_specs(spec);
        if specs.len() != self.branches.len() {
            return Err(FusionError::Contract(format!(
                "{} branch parameter sets for {} branches",
                self.branches.len(),
                specs.len()
            )));
        }
        for (s, b) in specs.iter().zip(&self.branches) {
            b.check_layout(s)?;
        }
        Ok(())
    }

    /// Hash of every scalar's bit pattern, used to detect stale tapes.
    pub(crate) fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash_into(&mut h);
        h.finish()
    }

    fn hash_into(&self, h: &mut DefaultHasher) {
        for e in &self.entries {
            for x in e.tensor.data() {
                h.write_u64(x.to_bits());
            }
        }
        for b in &self.branches {
            b.hash_into(h);
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for e in &mut self.entries {
            e.tensor.data_mut().iter_mut().for_each(|x| *x *= alpha);
        }
        for b in &mut self.branches {
            b.scale(alpha);
        }
    }

    pub fn add_assign(&mut self, other: &FusionParams) {
        for (a, b) in self.entries.iter_mut().zip(&other.entries) {
            for (x, y) in a.tensor.data_mut().iter_mut().zip(b.tensor.data()) {
                *x += y;
            }
        }
        for (a, b) in self.branches.iter_mut().zip(&other.branches) {
            a.add_assign(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::spec::SchemeKind;

    fn sample_specs() -> Vec<FusionSpec> {
        let b = |s| FusionSpec::new([3, 4], 2, s).unwrap();
        let block = FusionSpec::block([3, 4], 2, [2, 2, 3], 2, None).unwrap();
        vec![
            b(Scheme::LinearSum { hidden: 3 }),
            b(Scheme::ConcatMlp { hidden: 5 }),
            b(Scheme::Mcb { sketch_dim: 6, seed: 1 }),
            b(Scheme::Tucker { core: [2, 3, 2], slice_rank: None }),
            b(Scheme::Tucker { core: [2, 3, 2], slice_rank: Some(2) }),
            b(Scheme::Cp { rank: 3 }),
            b(Scheme::Mfb { factor_rank: 2, pooled_dim: 3 }),
            b(Scheme::Mfh { cascade: 2, factor_rank: 2, pooled_dim: 3 }),
            block.clone(),
            FusionSpec::block([3, 4], 2, [2, 3, 2], 3, Some(2)).unwrap(),
            FusionSpec::composite(vec![block, b(Scheme::Cp { rank: 2 })], 3).unwrap(),
        ]
    }

    #[test]
    fn flat_length_matches_closed_form() {
        for spec in sample_specs() {
            let p = init_params(&spec, 3);
            assert_eq!(p.flatten().len(), spec.param_count(), "{}", spec.kind());
            let slots: usize = layout(&spec).iter().map(Slot::len).sum();
            assert!(slots <= spec.param_count());
        }
    }

    #[test]
    fn block_flat_length_by_enumeration() {
        let spec = FusionSpec::block([4, 4], 3, [2, 2, 2], 2, None).unwrap();
        let p = init_params(&spec, 0);
        let enumerated: usize = p.entries().iter().map(|e| e.tensor.data().iter().count()).sum();
        assert_eq!(enumerated, 4 * 4 + 4 * 4 + 3 * 4 + 2 * 8);
        assert_eq!(enumerated, 60);
    }

    #[test]
    fn cp_flat_length() {
        let spec = FusionSpec::cp([10, 10], 10, 5).unwrap();
        assert_eq!(init_params(&spec, 9).len(), 150);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        for spec in sample_specs() {
            let a = init_params(&spec, 42);
            let b = init_params(&spec, 42);
            assert_eq!(a.flatten(), b.flatten());
            assert_ne!(a.flatten(), init_params(&spec, 43).flatten());
            for (slot, e) in layout(&spec).iter().zip(a.entries()) {
                let bound = 1.0 / (slot.fan_in as f64).sqrt();
                assert!(e.tensor.data().iter().all(|x| x.abs() <= bound));
            }
        }
    }

    #[test]
    fn flat_round_trip_is_bit_exact() {
        for spec in sample_specs() {
            let p = init_params(&spec, 5);
            let q = FusionParams::from_flat(&spec, &p.flatten()).unwrap();
            assert_eq!(p, q);
            q.check_layout(&spec).unwrap();
        }
    }

    #[test]
    fn index_covers_every_scalar() {
        let spec = sample_specs().pop().unwrap();
        assert_eq!(spec.kind(), SchemeKind::Composite);
        let p = init_params(&spec, 1);
        let idx = p.index();
        let mut next = 0;
        for (off, _, len) in &idx {
            assert_eq!(*off, next);
            next += len;
        }
        assert_eq!(next, p.len());
        assert!(idx.iter().any(|(_, n, _)| n == "branch1.C"));
    }

    #[test]
    fn wrong_flat_length() {
        let spec = FusionSpec::cp([2, 2], 2, 1).unwrap();
        assert!(FusionParams::from_flat(&spec, &[0.0; 5]).is_err());
    }
}
