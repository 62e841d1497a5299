//! Forward evaluation, analytic backward and full-tensor reconstruction for
//! every scheme.

use super::block_term;
use super::cascade;
use super::params::FusionParams;
use super::spec::{FusionSpec, Scheme, SchemeKind};
use crate::error::{FusionError, Result};
use crate::sketch::{
    circular_convolve, circular_correlate, count_sketch, count_sketch_adjoint, SketchPlan,
};
use crate::tensor::{add_outer, matvec, outer3, t_matvec, DenseTensor};

/// Intermediates cached by [`fuse_forward`] for the matching backward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    spec: FusionSpec,
    fingerprint: u64,
    x1: Vec<f64>,
    x2: Vec<f64>,
    cache: Cache,
}

impl Tape {
    pub fn inputs(&self) -> (&[f64], &[f64]) {
        (&self.x1, &self.x2)
    }
}

#[derive(Clone, Debug)]
enum Cache {
    BlockTerm(block_term::Cache),
    Cascade(cascade::Cache),
    Cp {
        xh1: Vec<f64>,
        xh2: Vec<f64>,
        h: Vec<f64>,
    },
    Mcb {
        s1: Vec<f64>,
        s2: Vec<f64>,
        phi: Vec<f64>,
    },
    LinearSum {
        h: Vec<f64>,
    },
    ConcatMlp {
        x: Vec<f64>,
        a1: Vec<f64>,
        h1: Vec<f64>,
        a2: Vec<f64>,
        h2: Vec<f64>,
    },
    Composite {
        branches: Vec<Tape>,
        concat: Vec<f64>,
    },
}

/// Gradients of `<dy, y>` with respect to every parameter and both inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: FusionParams,
    pub dx1: Vec<f64>,
    pub dx2: Vec<f64>,
}

/// The two count-sketch plans of an MCB operator. The second plan is seeded
/// with `seed + 1`.
pub fn mcb_plans(spec: &FusionSpec) -> Result<(SketchPlan, SketchPlan)> {
    match spec.scheme {
        Scheme::Mcb { sketch_dim, seed } => Ok((
            SketchPlan::from_seed(spec.input_dims[0], sketch_dim, seed)?,
            SketchPlan::from_seed(spec.input_dims[1], sketch_dim, seed.wrapping_add(1))?,
        )),
        _ => Err(FusionError::InvalidSpec(format!(
            "{} has no sketch plans",
            spec.kind()
        ))),
    }
}

fn check_inputs(spec: &FusionSpec, x1: &[f64], x2: &[f64]) -> Result<()> {
    let [i, j] = spec.input_dims;
    if x1.len() != i {
        return Err(FusionError::shape(
            format!("{} first input projection", spec.kind()),
            i,
            x1.len(),
        ));
    }
    if x2.len() != j {
        return Err(FusionError::shape(
            format!("{} second input projection", spec.kind()),
            j,
            x2.len(),
        ));
    }
    Ok(())
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.max(0.0)).collect()
}

fn add_bias(v: &mut [f64], b: &[f64]) {
    v.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn fuse_forward(
    spec: &FusionSpec,
    params: &FusionParams,
    x1: &[f64],
    x2: &[f64],
) -> Result<(Vec<f64>, Tape)> {
    params.check_layout(spec)?;
    forward_unchecked(spec, params, x1, x2)
}

fn forward_unchecked(
    spec: &FusionSpec,
    p: &FusionParams,
    x1: &[f64],
    x2: &[f64],
) -> Result<(Vec<f64>, Tape)> {
    check_inputs(spec, x1, x2)?;
    let [i, j] = spec.input_dims;
    let k = spec.output_dim;
    let (y, cache) = match &spec.scheme {
        Scheme::Block { .. } | Scheme::Tucker { .. } => {
            let d = block_term::Dims::of(spec).expect("block-term scheme");
            let (y, c) = block_term::forward(&d, p, x1, x2);
            (y, Cache::BlockTerm(c))
        }
        Scheme::Mfb { .. } | Scheme::Mfh { .. } => {
            let d = cascade::Dims::of(spec).expect("cascade scheme");
            let (y, c) = cascade::forward(&d, p, x1, x2);
            (y, Cache::Cascade(c))
        }
        Scheme::Cp { rank } => {
            let xh1 = t_matvec(p.tensor(0), i, *rank, x1);
            let xh2 = t_matvec(p.tensor(1), j, *rank, x2);
            let h = hadamard(&xh1, &xh2);
            let y = matvec(p.tensor(2), k, *rank, &h);
            (y, Cache::Cp { xh1, xh2, h })
        }
        Scheme::Mcb { sketch_dim, .. } => {
            let (p1, p2) = mcb_plans(spec)?;
            let s1 = count_sketch(x1, &p1)?;
            let s2 = count_sketch(x2, &p2)?;
            let phi = circular_convolve(&s1, &s2)?;
            let y = matvec(p.tensor(0), k, *sketch_dim, &phi);
            (y, Cache::Mcb { s1, s2, phi })
        }
        Scheme::LinearSum { hidden } => {
            let mut h = t_matvec(p.tensor(0), i, *hidden, x1);
            add_bias(&mut h, &t_matvec(p.tensor(1), j, *hidden, x2));
            let y = matvec(p.tensor(2), k, *hidden, &h);
            (y, Cache::LinearSum { h })
        }
        Scheme::ConcatMlp { hidden } => {
            let h = *hidden;
            let x: Vec<f64> = x1.iter().chain(x2).copied().collect();
            let mut a1 = matvec(p.tensor(0), h, i + j, &x);
            add_bias(&mut a1, p.tensor(1));
            let h1 = relu(&a1);
            let mut a2 = matvec(p.tensor(2), h, h, &h1);
            add_bias(&mut a2, p.tensor(3));
            let h2 = relu(&a2);
            let mut y = matvec(p.tensor(4), k, h, &h2);
            add_bias(&mut y, p.tensor(5));
            (y, Cache::ConcatMlp { x, a1, h1, a2, h2 })
        }
        Scheme::Composite { branches } => {
            let mut tapes = Vec::with_capacity(branches.len());
            let mut concat = Vec::new();
            let (mut o1, mut o2) = (0, 0);
            for (b, bp) in branches.iter().zip(p.branches()) {
                let [bi, bj] = b.input_dims;
                let (yb, tb) = forward_unchecked(b, bp, &x1[o1..o1 + bi], &x2[o2..o2 + bj])?;
                concat.extend(yb);
                tapes.push(tb);
                o1 += bi;
                o2 += bj;
            }
            let y = matvec(p.tensor(0), k, concat.len(), &concat);
            (
                y,
                Cache::Composite {
                    branches: tapes,
                    concat,
                },
            )
        }
    };
    Ok((
        y,
        Tape {
            spec: spec.clone(),
            fingerprint: p.fingerprint(),
            x1: x1.to_vec(),
            x2: x2.to_vec(),
            cache,
        },
    ))
}

/// Forward value only.
pub fn fuse(spec: &FusionSpec, params: &FusionParams, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
    fuse_forward(spec, params, x1, x2).map(|(y, _)| y)
}

pub fn fuse_backward(
    spec: &FusionSpec,
    params: &FusionParams,
    tape: &Tape,
    dy: &[f64],
) -> Result<Gradients> {
    let mut g = params.zeros_like();
    let (dx1, dx2) = fuse_backward_into(spec, params, tape, dy, &mut g)?;
    Ok(Gradients {
        params: g,
        dx1,
        dx2,
    })
}

/// Accumulates parameter gradients into `grads`; returns the input gradients.
pub fn fuse_backward_into(
    spec: &FusionSpec,
    params: &FusionParams,
    tape: &Tape,
    dy: &[f64],
    grads: &mut FusionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if tape.spec != *spec {
        return Err(FusionError::Contract(format!(
            "tape was recorded for a {} spec, backward called with {}",
            tape.spec.kind(),
            spec.kind()
        )));
    }
    if tape.fingerprint != params.fingerprint() {
        return Err(FusionError::Contract(
            "stale tape: parameters changed since the forward pass".into(),
        ));
    }
    grads.check_layout(spec)?;
    if dy.len() != spec.output_dim {
        return Err(FusionError::shape("output gradient", spec.output_dim, dy.len()));
    }
    Ok(backward_unchecked(spec, params, tape, dy, grads))
}

fn backward_unchecked(
    spec: &FusionSpec,
    p: &FusionParams,
    tape: &Tape,
    dy: &[f64],
    g: &mut FusionParams,
) -> (Vec<f64>, Vec<f64>) {
    let [i, j] = spec.input_dims;
    let k = spec.output_dim;
    let (x1, x2) = (&tape.x1[..], &tape.x2[..]);
    match (&spec.scheme, &tape.cache) {
        (Scheme::Block { .. } | Scheme::Tucker { .. }, Cache::BlockTerm(c)) => {
            let d = block_term::Dims::of(spec).expect("block-term scheme");
            block_term::backward(&d, p, c, x1, x2, dy, g)
        }
        (Scheme::Mfb { .. } | Scheme::Mfh { .. }, Cache::Cascade(c)) => {
            let d = cascade::Dims::of(spec).expect("cascade scheme");
            cascade::backward(&d, p, c, x1, x2, dy, g)
        }
        (Scheme::Cp { rank }, Cache::Cp { xh1, xh2, h }) => {
            add_outer(g.tensor_mut(2), dy, h);
            let dh = t_matvec(p.tensor(2), k, *rank, dy);
            let dxh1 = hadamard(&dh, xh2);
            let dxh2 = hadamard(&dh, xh1);
            add_outer(g.tensor_mut(0), x1, &dxh1);
            add_outer(g.tensor_mut(1), x2, &dxh2);
            (
                matvec(p.tensor(0), i, *rank, &dxh1),
                matvec(p.tensor(1), j, *rank, &dxh2),
            )
        }
        (Scheme::Mcb { sketch_dim, .. }, Cache::Mcb { s1, s2, phi }) => {
            let (p1, p2) = mcb_plans(spec).expect("validated spec");
            add_outer(g.tensor_mut(0), dy, phi);
            let dphi = t_matvec(p.tensor(0), k, *sketch_dim, dy);
            let ds1 = circular_correlate(&dphi, s2);
            let ds2 = circular_correlate(&dphi, s1);
            (count_sketch_adjoint(&ds1, &p1), count_sketch_adjoint(&ds2, &p2))
        }
        (Scheme::LinearSum { hidden }, Cache::LinearSum { h }) => {
            add_outer(g.tensor_mut(2), dy, h);
            let dh = t_matvec(p.tensor(2), k, *hidden, dy);
            add_outer(g.tensor_mut(0), x1, &dh);
            add_outer(g.tensor_mut(1), x2, &dh);
            (
                matvec(p.tensor(0), i, *hidden, &dh),
                matvec(p.tensor(1), j, *hidden, &dh),
            )
        }
        (Scheme::ConcatMlp { hidden }, Cache::ConcatMlp { x, a1, h1, a2, h2 }) => {
            let h = *hidden;
            add_outer(g.tensor_mut(4), dy, h2);
            g.tensor_mut(5).iter_mut().zip(dy).for_each(|(a, b)| *a += b);
            let dh2 = t_matvec(p.tensor(4), k, h, dy);
            let da2: Vec<f64> = dh2
                .iter()
                .zip(a2)
                .map(|(d, &a)| if a > 0.0 { *d } else { 0.0 })
                .collect();
            add_outer(g.tensor_mut(2), &da2, h1);
            g.tensor_mut(3).iter_mut().zip(&da2).for_each(|(a, b)| *a += b);
            let dh1 = t_matvec(p.tensor(2), h, h, &da2);
            let da1: Vec<f64> = dh1
                .iter()
                .zip(a1)
                .map(|(d, &a)| if a > 0.0 { *d } else { 0.0 })
                .collect();
            add_outer(g.tensor_mut(0), &da1, x);
            g.tensor_mut(1).iter_mut().zip(&da1).for_each(|(a, b)| *a += b);
            let dx = t_matvec(p.tensor(0), h, i + j, &da1);
            (dx[..i].to_vec(), dx[i..].to_vec())
        }
        (Scheme::Composite { branches }, Cache::Composite { branches: tapes, concat }) => {
            add_outer(g.tensor_mut(0), dy, concat);
            let dconcat = t_matvec(p.tensor(0), k, concat.len(), dy);
            let mut dx1 = Vec::with_capacity(i);
            let mut dx2 = Vec::with_capacity(j);
            let mut off = 0;
            for (b, (bs, tb)) in branches.iter().zip(tapes).enumerate() {
                let kb = bs.output_dim;
                let (d1, d2) = backward_unchecked(
                    bs,
                    &p.branches()[b],
                    tb,
                    &dconcat[off..off + kb],
                    &mut g.branches_mut()[b],
                );
                dx1.extend(d1);
                dx2.extend(d2);
                off += kb;
            }
            (dx1, dx2)
        }
        _ => unreachable!("tape cache matches its recorded spec"),
    }
}

/// Evaluates a composite on one `(x_s, x_o)` pair per branch.
pub fn composite_fuse(
    spec: &FusionSpec,
    params: &FusionParams,
    inputs: &[(Vec<f64>, Vec<f64>)],
) -> Result<Vec<f64>> {
    let Scheme::Composite { branches } = &spec.scheme else {
        return Err(FusionError::InvalidSpec(format!(
            "composite_fuse on a {} spec",
            spec.kind()
        )));
    };
    if inputs.len() != branches.len() {
        return Err(FusionError::shape("composite branch inputs", branches.len(), inputs.len()));
    }
    let x1: Vec<f64> = inputs.iter().flat_map(|(a, _)| a.iter().copied()).collect();
    let x2: Vec<f64> = inputs.iter().flat_map(|(_, b)| b.iter().copied()).collect();
    for (b, (a, c)) in branches.iter().zip(inputs) {
        check_inputs(b, a, c)?;
    }
    fuse(spec, params, &x1, &x2)
}

/// The tensor `T` with `fuse(x1, x2) = T x_1 x1 x_2 x2`, for bilinear schemes.
pub fn reconstruct_full_tensor(spec: &FusionSpec, params: &FusionParams) -> Result<DenseTensor> {
    params.check_layout(spec)?;
    let kind = spec.kind();
    let [i, j] = spec.input_dims;
    let k = spec.output_dim;
    match &spec.scheme {
        Scheme::Block { .. } | Scheme::Tucker { .. } => {
            let d = block_term::Dims::of(spec).expect("block-term scheme");
            Ok(block_term::reconstruct_sum(&d, params))
        }
        Scheme::Mfb { .. } => {
            let d = cascade::Dims::of(spec).expect("cascade scheme");
            Ok(cascade::reconstruct_mfb(&d, params))
        }
        Scheme::Cp { rank } => {
            let (a, b, c) = (params.tensor(0), params.tensor(1), params.tensor(2));
            let mut t = DenseTensor::zeros(&[i, j, k]);
            for r in 0..*rank {
                let ar: Vec<f64> = (0..i).map(|x| a[x * rank + r]).collect();
                let br: Vec<f64> = (0..j).map(|x| b[x * rank + r]).collect();
                let cr: Vec<f64> = (0..k).map(|x| c[x * rank + r]).collect();
                let term = outer3(&ar, &br, &cr)?;
                t.data_mut()
                    .iter_mut()
                    .zip(term.data())
                    .for_each(|(o, v)| *o += v);
            }
            Ok(t)
        }
        Scheme::Mcb { sketch_dim, .. } => {
            let (p1, p2) = mcb_plans(spec)?;
            let d = *sketch_dim;
            let w = params.tensor(0);
            Ok(DenseTensor::from_fn3([i, j, k], |a, b, c| {
                let bucket = (p1.buckets()[a] + p2.buckets()[b]) % d;
                let sign = f64::from(p1.signs()[a] * p2.signs()[b]);
                sign * w[c * d + bucket]
            }))
        }
        _ => Err(FusionError::Unsupported(kind.name())),
    }
}

/// BLOCK/Tucker tensor via the assembled block-superdiagonal core.
pub fn reconstruct_via_superdiag(spec: &FusionSpec, params: &FusionParams) -> Result<DenseTensor> {
    params.check_layout(spec)?;
    let d = block_term::Dims::of(spec).ok_or(FusionError::Unsupported(spec.kind().name()))?;
    Ok(block_term::reconstruct_superdiag(&d, params))
}

/// Dense `L x M x N` cores of a BLOCK/Tucker operator, expanding slice factors.
pub fn core_blocks(spec: &FusionSpec, params: &FusionParams) -> Result<Vec<DenseTensor>> {
    params.check_layout(spec)?;
    let d = block_term::Dims::of(spec).ok_or(FusionError::Unsupported(spec.kind().name()))?;
    Ok(block_term::materialize_cores(&d, params))
}

/// Per-group scalar counts: factor matrices individually, all core tensors as `core`.
pub fn param_breakdown(spec: &FusionSpec) -> Vec<(String, usize)> {
    let mut out: Vec<(String, usize)> = Vec::new();
    let is_core = |name: &str| {
        matches!(spec.kind(), SchemeKind::Block | SchemeKind::Tucker | SchemeKind::Mutan)
            && name.starts_with(['D', 'U', 'V'])
    };
    for slot in super::params::layout(spec) {
        let group = if is_core(&slot.name) {
            "core".to_string()
        } else {
            slot.name.clone()
        };
        match out.iter_mut().find(|(g, _)| *g == group) {
            Some((_, n)) => *n += slot.len(),
            None => out.push((group, slot.len())),
        }
    }
    if let Scheme::Composite { branches } = &spec.scheme {
        for (b, bs) in branches.iter().enumerate() {
            out.push((format!("branch{b}"), bs.param_count()));
        }
    }
    out
}
