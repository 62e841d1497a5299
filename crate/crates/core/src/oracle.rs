//! Brute-force reference paths. Nothing here shares code with the
//! structured operators in [`crate::fusion`]; they exist to check them.

use crate::error::{FusionError, Result};
use crate::tensor::DenseTensor;

/// `y_k = Σ_i Σ_j T_ijk x1_i x2_j` as a plain triple loop.
pub fn bilinear_direct(t: &DenseTensor, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
    let [i_dim, j_dim, k_dim] = t.dims3()?;
    if x1.len() != i_dim {
        return Err(FusionError::shape("bilinear_direct x1", i_dim, x1.len()));
    }
    if x2.len() != j_dim {
        return Err(FusionError::shape("bilinear_direct x2", j_dim, x2.len()));
    }
    let mut y = vec![0.0; k_dim];
    for (k, yk) in y.iter_mut().enumerate() {
        for (i, &a) in x1.iter().enumerate() {
            for (j, &b) in x2.iter().enumerate() {
                *yk += t.get3(i, j, k) * a * b;
            }
        }
    }
    Ok(y)
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central differences `(f(θ + s e_i) - f(θ - s e_i)) / 2s` per coordinate.
pub fn finite_diff_grad(f: impl Fn(&[f64]) -> f64, theta: &[f64], step: f64) -> Vec<f64> {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Pivot threshold `1e-9 * max|m_ij|`.
pub fn default_rank_tol(m: &DenseTensor) -> f64 {
    1e-9 * m.max_abs()
}

/// Rank by Gaussian elimination with partial pivoting; pivots with magnitude
/// at or below `tol` count as zero.
pub fn matrix_rank_bruteforce(m: &DenseTensor, tol: f64) -> Result<usize> {
    let [rows, cols] = m.dims2()?;
    let mut a = m.data().to_vec();
    let mut rank = 0;
    for col in 0..cols {
        if rank == rows {
            break;
        }
        let (pivot, best) = (rank..rows)
            .map(|r| (r, a[r * cols + col].abs()))
            .fold((rank, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if best <= tol {
            continue;
        }
        if pivot != rank {
            for c in 0..cols {
                a.swap(pivot * cols + c, rank * cols + c);
            }
        }
        let p = a[rank * cols + col];
        for r in rank + 1..rows {
            let factor = a[r * cols + col] / p;
            if factor == 0.0 {
                continue;
            }
            for c in col..cols {
                a[r * cols + c] -= factor * a[rank * cols + c];
            }
        }
        rank += 1;
    }
    Ok(rank)
}

/// Max over coordinates of `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(analytic: &[f64], reference: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}
