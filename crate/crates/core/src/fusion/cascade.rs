//! MFB and its cascaded form MFH.
//!
//! Block `q` projects both inputs to `k*o` dims, multiplies them elementwise
//! and multiplies again by block `q-1`'s pre-pool product (all ones for the
//! first block). Each product is sum-pooled over consecutive windows of `k`
//! to `o` dims; the pooled vectors are concatenated and mapped to `K` by `W`.
//! MFB is the single-block case.

use super::params::FusionParams;
use super::spec::{FusionSpec, Scheme};
use crate::tensor::{add_outer, matvec, t_matvec, DenseTensor};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims {
    i: usize,
    j: usize,
    k: usize,
    q: usize,
    rank: usize,
    pooled: usize,
}

impl Dims {
    pub(crate) fn of(spec: &FusionSpec) -> Option<Dims> {
        let [i, j] = spec.input_dims;
        let (q, rank, pooled) = match spec.scheme {
            Scheme::Mfb {
                factor_rank,
                pooled_dim,
            } => (1, factor_rank, pooled_dim),
            Scheme::Mfh {
                cascade,
                factor_rank,
                pooled_dim,
            } => (cascade, factor_rank, pooled_dim),
            _ => return None,
        };
        Some(Dims {
            i,
            j,
            k: spec.output_dim,
            q,
            rank,
            pooled,
        })
    }

    fn width(&self) -> usize {
        self.rank * self.pooled
    }

    fn u(&self, q: usize) -> usize {
        2 * q
    }

    fn v(&self, q: usize) -> usize {
        2 * q + 1
    }

    fn w(&self) -> usize {
        2 * self.q
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Cache {
    p1: Vec<Vec<f64>>,
    p2: Vec<Vec<f64>>,
    // e[q] is block q's pre-pool product
    e: Vec<Vec<f64>>,
    pooled: Vec<f64>,
}

fn sum_pool(e: &[f64], window: usize) -> impl Iterator<Item = f64> + '_ {
    e.chunks_exact(window).map(|w| w.iter().sum())
}

pub(crate) fn forward(d: &Dims, p: &FusionParams, x1: &[f64], x2: &[f64]) -> (Vec<f64>, Cache) {
    let width = d.width();
    let mut p1 = Vec::with_capacity(d.q);
    let mut p2 = Vec::with_capacity(d.q);
    let mut e: Vec<Vec<f64>> = Vec::with_capacity(d.q);
    let mut pooled = Vec::with_capacity(d.q * d.pooled);
    for q in 0..d.q {
        let a = t_matvec(p.tensor(d.u(q)), d.i, width, x1);
        let b = t_matvec(p.tensor(d.v(q)), d.j, width, x2);
        let mut eq: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        if let Some(prev) = e.last() {
            eq.iter_mut().zip(prev).for_each(|(x, y)| *x *= y);
        }
        pooled.extend(sum_pool(&eq, d.rank));
        p1.push(a);
        p2.push(b);
        e.push(eq);
    }
    let y = matvec(p.tensor(d.w()), d.k, d.q * d.pooled, &pooled);
    (y, Cache { p1, p2, e, pooled })
}

pub(crate) fn backward(
    d: &Dims,
    p: &FusionParams,
    cache: &Cache,
    x1: &[f64],
    x2: &[f64],
    dy: &[f64],
    g: &mut FusionParams,
) -> (Vec<f64>, Vec<f64>) {
    let width = d.width();
    add_outer(g.tensor_mut(d.w()), dy, &cache.pooled);
    let dpooled = t_matvec(p.tensor(d.w()), d.k, d.q * d.pooled, dy);

    let mut dx1 = vec![0.0; d.i];
    let mut dx2 = vec![0.0; d.j];
    // gradient flowing into e[q] from block q+1
    let mut carry = vec![0.0; width];
    for q in (0..d.q).rev() {
        let de: Vec<f64> = (0..width)
            .map(|t| dpooled[q * d.pooled + t / d.rank] + carry[t])
            .collect();
        let (a, b) = (&cache.p1[q], &cache.p2[q]);
        let prev = if q > 0 { Some(&cache.e[q - 1]) } else { None };
        let scale = |t: usize| prev.map_or(1.0, |e| e[t]);
        let da: Vec<f64> = (0..width).map(|t| de[t] * b[t] * scale(t)).collect();
        let db: Vec<f64> = (0..width).map(|t| de[t] * a[t] * scale(t)).collect();
        carry = (0..width).map(|t| de[t] * a[t] * b[t]).collect();

        add_outer(g.tensor_mut(d.u(q)), x1, &da);
        add_outer(g.tensor_mut(d.v(q)), x2, &db);
        for (o, v) in dx1.iter_mut().zip(matvec(p.tensor(d.u(q)), d.i, width, &da)) {
            *o += v;
        }
        for (o, v) in dx2.iter_mut().zip(matvec(p.tensor(d.v(q)), d.j, width, &db)) {
            *o += v;
        }
    }
    (dx1, dx2)
}

/// Full tensor of a single-block MFB:
/// `T[i, j, c] = Σ_p W[c, p] Σ_w U[i, pk + w] V[j, pk + w]`.
pub(crate) fn reconstruct_mfb(d: &Dims, p: &FusionParams) -> DenseTensor {
    debug_assert_eq!(d.q, 1);
    let width = d.width();
    let (u, v, w) = (p.tensor(d.u(0)), p.tensor(d.v(0)), p.tensor(d.w()));
    DenseTensor::from_fn3([d.i, d.j, d.k], |i, j, c| {
        (0..d.pooled)
            .map(|pp| {
                let inner: f64 = (0..d.rank)
                    .map(|t| {
                        let col = pp * d.rank + t;
                        u[i * width + col] * v[j * width + col]
                    })
                    .sum();
                w[c * d.pooled + pp] * inner
            })
            .sum()
    })
}
