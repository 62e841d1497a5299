//! Shared kernel for BLOCK and Tucker/MUTAN.
//!
//! Both lay out `A (I x LR)`, `B (J x MR)`, `C (K x NR)` followed by the
//! cores, so Tucker is evaluated as the `R = 1` case of the same code.
//! Slice-factored cores store `U_r (N x ρ x L)` and `V_r (N x ρ x M)` with
//! `D_r[:, :, n] = Σ_ρ U_r[n, ρ, :] ∘ V_r[n, ρ, :]` and are never materialized
//! on the forward path.

use super::params::FusionParams;
use super::spec::{FusionSpec, Scheme};
use crate::tensor::{
    add_outer, assemble_block_superdiag, chunk, dot, matvec, mode_n_product, t_matvec,
    DenseTensor,
};

#[derive(Clone, Copy, Debug)]
pub(crate) struct Dims {
    i: usize,
    j: usize,
    k: usize,
    l: usize,
    m: usize,
    n: usize,
    r: usize,
    rho: Option<usize>,
}

const A: usize = 0;
const B: usize = 1;
const C: usize = 2;

impl Dims {
    pub(crate) fn of(spec: &FusionSpec) -> Option<Dims> {
        let [i, j] = spec.input_dims;
        let k = spec.output_dim;
        let (core, r, rho) = match &spec.scheme {
            Scheme::Block {
                core,
                blocks,
                slice_rank,
            } => (*core, *blocks, *slice_rank),
            Scheme::Tucker { core, slice_rank } => (*core, 1, *slice_rank),
            _ => return None,
        };
        let [l, m, n] = core;
        Some(Dims {
            i,
            j,
            k,
            l,
            m,
            n,
            r,
            rho,
        })
    }

    fn full_core(&self, b: usize) -> usize {
        3 + b
    }

    fn factor_u(&self, b: usize) -> usize {
        3 + 2 * b
    }

    fn factor_v(&self, b: usize) -> usize {
        4 + 2 * b
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Cache {
    xh1: Vec<f64>,
    xh2: Vec<f64>,
    z: Vec<f64>,
    // per-block N x ρ projections of the chunks onto U_r / V_r rows
    u: Vec<f64>,
    v: Vec<f64>,
}

pub(crate) fn forward(d: &Dims, p: &FusionParams, x1: &[f64], x2: &[f64]) -> (Vec<f64>, Cache) {
    let xh1 = t_matvec(p.tensor(A), d.i, d.l * d.r, x1);
    let xh2 = t_matvec(p.tensor(B), d.j, d.m * d.r, x2);
    let mut z = Vec::with_capacity(d.n * d.r);
    let mut u_all = Vec::new();
    let mut v_all = Vec::new();
    for b in 0..d.r {
        let a = chunk(&xh1, b, d.l).expect("chunk within LR");
        let c = chunk(&xh2, b, d.m).expect("chunk within MR");
        match d.rho {
            None => z.extend(contract_core(p.tensor(d.full_core(b)), d, a, c)),
            Some(rho) => {
                let uf = p.tensor(d.factor_u(b));
                let vf = p.tensor(d.factor_v(b));
                for n in 0..d.n {
                    let mut zn = 0.0;
                    for q in 0..rho {
                        let row = n * rho + q;
                        let un = dot(&uf[row * d.l..(row + 1) * d.l], a);
                        let vn = dot(&vf[row * d.m..(row + 1) * d.m], c);
                        u_all.push(un);
                        v_all.push(vn);
                        zn += un * vn;
                    }
                    z.push(zn);
                }
            }
        }
    }
    let y = matvec(p.tensor(C), d.k, d.n * d.r, &z);
    (
        y,
        Cache {
            xh1,
            xh2,
            z,
            u: u_all,
            v: v_all,
        },
    )
}

/// `(D x_1 a) x_2 b` for a full `L x M x N` core.
fn contract_core(core: &[f64], d: &Dims, a: &[f64], b: &[f64]) -> Vec<f64> {
    let (m, n) = (d.m, d.n);
    let mut t = vec![0.0; m * n];
    for (l, &al) in a.iter().enumerate() {
        let slab = &core[l * m * n..(l + 1) * m * n];
        for (tv, &dv) in t.iter_mut().zip(slab) {
            *tv += dv * al;
        }
    }
    let mut z = vec![0.0; n];
    for (mi, &bm) in b.iter().enumerate() {
        for (zn, &tv) in z.iter_mut().zip(&t[mi * n..(mi + 1) * n]) {
            *zn += tv * bm;
        }
    }
    z
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
    let nr = d.n * d.r;
    add_outer(g.tensor_mut(C), dy, &cache.z);
    let dz = t_matvec(p.tensor(C), d.k, nr, dy);

    let mut dxh1 = vec![0.0; d.l * d.r];
    let mut dxh2 = vec![0.0; d.m * d.r];
    for b in 0..d.r {
        let a = &cache.xh1[b * d.l..(b + 1) * d.l];
        let c = &cache.xh2[b * d.m..(b + 1) * d.m];
        let dzb = &dz[b * d.n..(b + 1) * d.n];
        let da = b * d.l..(b + 1) * d.l;
        let db = b * d.m..(b + 1) * d.m;
        match d.rho {
            None => {
                let core = p.tensor(d.full_core(b));
                let gcore = g.tensor_mut(d.full_core(b));
                for l in 0..d.l {
                    for m in 0..d.m {
                        let ab = a[l] * c[m];
                        let base = (l * d.m + m) * d.n;
                        let mut acc = 0.0;
                        for n in 0..d.n {
                            gcore[base + n] += ab * dzb[n];
                            acc += core[base + n] * dzb[n];
                        }
                        dxh1[da.start + l] += acc * c[m];
                        dxh2[db.start + m] += acc * a[l];
                    }
                }
            }
            Some(rho) => {
                let off = b * d.n * rho;
                let uf = p.tensor(d.factor_u(b));
                let vf = p.tensor(d.factor_v(b));
                let mut du = vec![0.0; d.n * rho * d.l];
                let mut dv = vec![0.0; d.n * rho * d.m];
                for n in 0..d.n {
                    for q in 0..rho {
                        let row = n * rho + q;
                        let su = dzb[n] * cache.v[off + row];
                        let sv = dzb[n] * cache.u[off + row];
                        for l in 0..d.l {
                            du[row * d.l + l] += su * a[l];
                            dxh1[da.start + l] += su * uf[row * d.l + l];
                        }
                        for m in 0..d.m {
                            dv[row * d.m + m] += sv * c[m];
                            dxh2[db.start + m] += sv * vf[row * d.m + m];
                        }
                    }
                }
                accumulate(g.tensor_mut(d.factor_u(b)), &du);
                accumulate(g.tensor_mut(d.factor_v(b)), &dv);
            }
        }
    }

    add_outer(g.tensor_mut(A), x1, &dxh1);
    add_outer(g.tensor_mut(B), x2, &dxh2);
    let dx1 = matvec(p.tensor(A), d.i, d.l * d.r, &dxh1);
    let dx2 = matvec(p.tensor(B), d.j, d.m * d.r, &dxh2);
    (dx1, dx2)
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// The `R` cores as dense `L x M x N` tensors, expanding slice factors.
pub(crate) fn materialize_cores(d: &Dims, p: &FusionParams) -> Vec<DenseTensor> {
    (0..d.r)
        .map(|b| match d.rho {
            None => DenseTensor::new(vec![d.l, d.m, d.n], p.tensor(d.full_core(b)).to_vec())
                .expect("core shape"),
            Some(rho) => {
                let uf = p.tensor(d.factor_u(b));
                let vf = p.tensor(d.factor_v(b));
                DenseTensor::from_fn3([d.l, d.m, d.n], |l, m, n| {
                    (0..rho)
                        .map(|q| {
                            let row = n * rho + q;
                            uf[row * d.l + l] * vf[row * d.m + m]
                        })
                        .sum()
                })
            }
        })
        .collect()
}

/// Columns `[start, start + width)` of a row-major `rows x cols` matrix, transposed.
fn column_block_t(m: &[f64], rows: usize, cols: usize, start: usize, width: usize) -> DenseTensor {
    let mut out = vec![0.0; width * rows];
    for r in 0..rows {
        for c in 0..width {
            out[c * rows + r] = m[r * cols + start + c];
        }
    }
    DenseTensor::matrix(width, rows, out).expect("column block shape")
}

/// `T = Σ_r D_r x_1 A_r x_2 B_r x_3 C_r`, one block at a time.
pub(crate) fn reconstruct_sum(d: &Dims, p: &FusionParams) -> DenseTensor {
    let cores = materialize_cores(d, p);
    let mut t = DenseTensor::zeros(&[d.i, d.j, d.k]);
    for (b, core) in cores.iter().enumerate() {
        let ar = column_block_t(p.tensor(A), d.i, d.l * d.r, b * d.l, d.l);
        let br = column_block_t(p.tensor(B), d.j, d.m * d.r, b * d.m, d.m);
        let cr = column_block_t(p.tensor(C), d.k, d.n * d.r, b * d.n, d.n);
        let term = mode_n_product(core, &ar, 1)
            .and_then(|x| mode_n_product(&x, &br, 2))
            .and_then(|x| mode_n_product(&x, &cr, 3))
            .expect("block shapes agree");
        for (o, v) in t.data_mut().iter_mut().zip(term.data()) {
            *o += v;
        }
    }
    t
}

/// `T = D^bd x_1 A x_2 B x_3 C` through the assembled superdiagonal core.
pub(crate) fn reconstruct_superdiag(d: &Dims, p: &FusionParams) -> DenseTensor {
    let dbd = assemble_block_superdiag(&materialize_cores(d, p)).expect("uniform blocks");
    let at = column_block_t(p.tensor(A), d.i, d.l * d.r, 0, d.l * d.r);
    let bt = column_block_t(p.tensor(B), d.j, d.m * d.r, 0, d.m * d.r);
    let ct = column_block_t(p.tensor(C), d.k, d.n * d.r, 0, d.n * d.r);
    mode_n_product(&dbd, &at, 1)
        .and_then(|x| mode_n_product(&x, &bt, 2))
        .and_then(|x| mode_n_product(&x, &ct, 3))
        .expect("superdiagonal shapes agree")
}
