//! Count sketch projections and circular convolution.
//!
//! The sketch of an outer product `x ∘ y` under the induced pair plan equals
//! the circular convolution of the two individual sketches, which is what
//! lets MCB approximate a full bilinear interaction in `d` dimensions.

use rand::RngCore;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::error::{FusionError, Result};

/// Hash buckets and random signs of a count sketch `R^n -> R^d`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchPlan {
    input_dim: usize,
    sketch_dim: usize,
    bucket: Vec<usize>,
    sign: Vec<i8>,
    seed: Option<u64>,
}

impl SketchPlan {
    /// Draws buckets uniformly over `[0, d)` and signs over `{+1, -1}` from a
    /// SplitMix64 stream, so the same `seed` gives the same plan everywhere.
    pub fn from_seed(input_dim: usize, sketch_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || sketch_dim == 0 {
            return Err(FusionError::InvalidSpec(format!(
                "sketch dims must be positive (n={input_dim}, d={sketch_dim})"
            )));
        }
        let mut rng = SplitMix64::seed_from_u64(seed);
        let mut bucket = Vec::with_capacity(input_dim);
        let mut sign = Vec::with_capacity(input_dim);
        for _ in 0..input_dim {
            // multiply-shift range reduction keeps this independent of rand's sampler internals
            let b = ((rng.next_u64() as u128 * sketch_dim as u128) >> 64) as usize;
            bucket.push(b);
            sign.push(if rng.next_u64() >> 63 == 0 { 1 } else { -1 });
        }
        Ok(Self {
            input_dim,
            sketch_dim,
            bucket,
            sign,
            seed: Some(seed),
        })
    }

    pub fn from_parts(sketch_dim: usize, bucket: Vec<usize>, sign: Vec<i8>) -> Result<Self> {
        if bucket.is_empty() || bucket.len() != sign.len() {
            return Err(FusionError::shape("sketch signs", bucket.len(), sign.len()));
        }
        if let Some(&b) = bucket.iter().find(|&&b| b >= sketch_dim) {
            return Err(FusionError::Index {
                index: b,
                limit: sketch_dim,
            });
        }
        if sign.iter().any(|&s| s != 1 && s != -1) {
            return Err(FusionError::InvalidSpec("sketch signs must be +1 or -1".into()));
        }
        Ok(Self {
            input_dim: bucket.len(),
            sketch_dim,
            bucket,
            sign,
            seed: None,
        })
    }

    /// Plan on the row-major flattening of `a`'s input ⊗ `b`'s input:
    /// bucket `(h_a(i) + h_b(j)) mod d`, sign `s_a(i) s_b(j)`.
    pub fn pair(a: &SketchPlan, b: &SketchPlan) -> Result<Self> {
        if a.sketch_dim != b.sketch_dim {
            return Err(FusionError::shape("paired sketch dim", a.sketch_dim, b.sketch_dim));
        }
        let d = a.sketch_dim;
        let mut bucket = Vec::with_capacity(a.input_dim * b.input_dim);
        let mut sign = Vec::with_capacity(a.input_dim * b.input_dim);
        for i in 0..a.input_dim {
            for j in 0..b.input_dim {
                bucket.push((a.bucket[i] + b.bucket[j]) % d);
                sign.push(a.sign[i] * b.sign[j]);
            }
        }
        Self::from_parts(d, bucket, sign)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn sketch_dim(&self) -> usize {
        self.sketch_dim
    }

    pub fn buckets(&self) -> &[usize] {
        &self.bucket
    }

    pub fn signs(&self) -> &[i8] {
        &self.sign
    }

    /// `None` for plans built from explicit parts.
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    #[inline]
    pub(crate) fn sign_f64(&self, i: usize) -> f64 {
        f64::from(self.sign[i])
    }
}

/// `out[j] = Σ_{i: bucket[i] = j} sign[i] v[i]`.
pub fn count_sketch(v: &[f64], plan: &SketchPlan) -> Result<Vec<f64>> {
    if v.len() != plan.input_dim {
        return Err(FusionError::shape("count sketch input", plan.input_dim, v.len()));
    }
    let mut out = vec![0.0; plan.sketch_dim];
    for (i, &x) in v.iter().enumerate() {
        out[plan.bucket[i]] += plan.sign_f64(i) * x;
    }
    Ok(out)
}

/// Transpose of [`count_sketch`]: `out[i] = sign[i] g[bucket[i]]`.
pub(crate) fn count_sketch_adjoint(g: &[f64], plan: &SketchPlan) -> Vec<f64> {
    (0..plan.input_dim)
        .map(|i| plan.sign_f64(i) * g[plan.bucket[i]])
        .collect()
}

/// `out[k] = Σ_j a[j] b[(k - j) mod d]`, evaluated directly.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(FusionError::shape("circular convolution", a.len(), b.len()));
    }
    let d = a.len();
    let mut out = vec![0.0; d];
    for (k, o) in out.iter_mut().enumerate() {
        for (j, &aj) in a.iter().enumerate() {
            *o += aj * b[(k + d - j) % d];
        }
    }
    Ok(out)
}

/// Adjoint of `a ↦ a ⊛ b`: `out[j] = Σ_k g[k] b[(k - j) mod d]`.
pub(crate) fn circular_correlate(g: &[f64], b: &[f64]) -> Vec<f64> {
    let d = g.len();
    (0..d)
        .map(|j| (0..d).map(|k| g[k] * b[(k + d - j) % d]).sum())
        .collect()
}
