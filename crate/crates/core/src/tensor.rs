//! Dense order-1..3 tensors and the multilinear primitives the fusion
//! operators are assembled from.
//!
//! Storage is a flat row-major `Vec<f64>` (last index fastest). Modes are
//! numbered from 1, and always refer to the axes of the tensor that is passed
//! in: contracting a vector along mode 1 of an `I x J x K` tensor yields a
//! `J x K` matrix whose modes are then 1 and 2.

use std::fmt;

use crate::error::{FusionError, Result};

#[derive(Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(FusionError::InvalidShape(format!(
                "order must be 1, 2 or 3, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(FusionError::InvalidShape(format!(
                "zero-sized dimension in {shape:?}"
            )));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(FusionError::shape("tensor data", len, data.len()));
        }
        Ok(Self { shape, data })
    }

    /// Panics on an invalid shape; intended for shapes derived from a validated spec.
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self::new(shape.to_vec(), vec![0.0; len]).expect("valid shape")
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(&[n, n]);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn3(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(dims.to_vec(), data).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn dims3(&self) -> Result<[usize; 3]> {
        match self.shape[..] {
            [a, b, c] => Ok([a, b, c]),
            _ => Err(FusionError::InvalidShape(format!(
                "expected an order-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self) -> Result<[usize; 2]> {
        match self.shape[..] {
            [a, b] => Ok([a, b]),
            _ => Err(FusionError::InvalidShape(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    #[inline]
    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn get3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + k]
    }

    #[inline]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let idx = (i * self.shape[1] + j) * self.shape[2] + k;
        self.data[idx] = v;
    }

    pub fn transpose(&self) -> Result<DenseTensor> {
        let [r, c] = self.dims2()?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        DenseTensor::matrix(c, r, out)
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Copies the mode-3 slice `t[:, :, k]` out as a matrix.
    pub fn slice3(&self, k: usize) -> Result<DenseTensor> {
        let [a, b, c] = self.dims3()?;
        if k >= c {
            return Err(FusionError::Index { index: k, limit: c });
        }
        let data = (0..a)
            .flat_map(|i| (0..b).map(move |j| (i, j)))
            .map(|(i, j)| self.get3(i, j, k))
            .collect();
        DenseTensor::matrix(a, b, data)
    }
}

impl fmt::Debug for DenseTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DenseTensor{:?}{:?}", self.shape, self.data)
    }
}

fn check_mode(t: &DenseTensor, mode: usize) -> Result<usize> {
    if mode == 0 || mode > t.order() {
        return Err(FusionError::Index {
            index: mode,
            limit: t.order(),
        });
    }
    Ok(mode - 1)
}

/// Mode-`n` product of `t` with a matrix (`shape[n] x q`, replacing that axis
/// by `q`) or with a vector of length `shape[n]` (contracting the axis away).
pub fn mode_n_product(t: &DenseTensor, m: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    let axis = check_mode(t, mode)?;
    let n = t.shape[axis];
    let m_rows = m.shape[0];
    if m_rows != n || m.order() > 2 {
        return Err(FusionError::shape(format!("mode-{mode} product"), n, m_rows));
    }
    let q = if m.order() == 2 { m.shape[1] } else { 1 };
    let contracting = m.order() == 1;
    if contracting && t.order() == 1 {
        return Err(FusionError::InvalidShape(
            "contracting the only mode of a vector yields a scalar".into(),
        ));
    }

    let outer: usize = t.shape[..axis].iter().product();
    let inner: usize = t.shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * q * inner];
    for o in 0..outer {
        for p in 0..n {
            let src = o * n * inner + p * inner;
            for c in 0..q {
                let w = m.data[p * q + c];
                if w == 0.0 {
                    continue;
                }
                let dst = o * q * inner + c * inner;
                for r in 0..inner {
                    out[dst + r] += t.data[src + r] * w;
                }
            }
        }
    }

    let mut shape = t.shape.clone();
    if contracting {
        shape.remove(axis);
    } else {
        shape[axis] = q;
    }
    DenseTensor::new(shape, out)
}

/// `T x_1 x1 x_2 x2` for an order-3 tensor: the bilinear map of the two inputs.
pub fn contract12(t: &DenseTensor, x1: &[f64], x2: &[f64]) -> Result<Vec<f64>> {
    let first = mode_n_product(t, &DenseTensor::vector(x1.to_vec())?, 1)?;
    Ok(mode_n_product(&first, &DenseTensor::vector(x2.to_vec())?, 1)?.into_data())
}

/// Mode-`n` matricization: rows indexed by mode `n`, columns by the other two
/// modes in ascending order, row-major.
pub fn unfold(t: &DenseTensor, mode: usize) -> Result<DenseTensor> {
    let dims = t.dims3()?;
    let axis = check_mode(t, mode)?;
    let rest: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (ra, rb) = (dims[rest[0]], dims[rest[1]]);
    let mut out = vec![0.0; t.len()];
    let mut idx = [0usize; 3];
    for row in 0..dims[axis] {
        idx[axis] = row;
        for a in 0..ra {
            idx[rest[0]] = a;
            for b in 0..rb {
                idx[rest[1]] = b;
                out[row * ra * rb + a * rb + b] = t.get3(idx[0], idx[1], idx[2]);
            }
        }
    }
    DenseTensor::matrix(dims[axis], ra * rb, out)
}

/// Inverse of [`unfold`] for a target order-3 shape.
pub fn refold(m: &DenseTensor, mode: usize, dims: [usize; 3]) -> Result<DenseTensor> {
    let [rows, cols] = m.dims2()?;
    if !(1..=3).contains(&mode) {
        return Err(FusionError::Index { index: mode, limit: 3 });
    }
    let axis = mode - 1;
    let rest: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
    let (ra, rb) = (dims[rest[0]], dims[rest[1]]);
    if rows != dims[axis] || cols != ra * rb {
        return Err(FusionError::shape(
            format!("refold mode-{mode}"),
            dims.iter().product(),
            rows * cols,
        ));
    }
    let mut out = DenseTensor::zeros(&dims);
    let mut idx = [0usize; 3];
    for row in 0..rows {
        idx[axis] = row;
        for a in 0..ra {
            idx[rest[0]] = a;
            for b in 0..rb {
                idx[rest[1]] = b;
                out.set3(idx[0], idx[1], idx[2], m.data[row * cols + a * rb + b]);
            }
        }
    }
    Ok(out)
}

pub fn outer3(a: &[f64], b: &[f64], c: &[f64]) -> Result<DenseTensor> {
    if a.is_empty() || b.is_empty() || c.is_empty() {
        return Err(FusionError::InvalidShape("outer product of an empty vector".into()));
    }
    Ok(DenseTensor::from_fn3([a.len(), b.len(), c.len()], |i, j, k| {
        a[i] * b[j] * c[k]
    }))
}

/// Places `R` equally shaped `L x M x N` blocks along the superdiagonal of an
/// `LR x MR x NR` tensor.
pub fn assemble_block_superdiag(blocks: &[DenseTensor]) -> Result<DenseTensor> {
    let first = blocks
        .first()
        .ok_or_else(|| FusionError::InvalidShape("no blocks to assemble".into()))?;
    let [l, m, n] = first.dims3()?;
    let r = blocks.len();
    let mut out = DenseTensor::zeros(&[l * r, m * r, n * r]);
    for (b, block) in blocks.iter().enumerate() {
        if block.shape() != first.shape() {
            return Err(FusionError::InvalidShape(format!(
                "block {b} has shape {:?}, expected {:?}",
                block.shape(),
                first.shape()
            )));
        }
        for i in 0..l {
            for j in 0..m {
                for k in 0..n {
                    out.set3(b * l + i, b * m + j, b * n + k, block.get3(i, j, k));
                }
            }
        }
    }
    Ok(out)
}

/// The `r`-th contiguous chunk `[r*size, (r+1)*size)` of `v` (0-based).
pub fn chunk(v: &[f64], r: usize, size: usize) -> Result<&[f64]> {
    if size == 0 || !v.len().is_multiple_of(size) {
        return Err(FusionError::InvalidShape(format!(
            "length {} is not divisible by chunk size {size}",
            v.len()
        )));
    }
    let count = v.len() / size;
    if r >= count {
        return Err(FusionError::Index { index: r, limit: count });
    }
    Ok(&v[r * size..(r + 1) * size])
}

// Slice kernels shared by the fusion operators. Matrices are row-major.

/// `out = M^T x` for `M` of shape `rows x cols` (`x` has length `rows`).
pub(crate) fn t_matvec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (i, &xi) in x.iter().enumerate().take(rows) {
        let row = &m[i * cols..(i + 1) * cols];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += w * xi;
        }
    }
    out
}

/// `out = M x` for `M` of shape `rows x cols`.
pub(crate) fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|i| dot(&m[i * cols..(i + 1) * cols], x))
        .collect()
}

/// `grad += a b^T` for a `len(a) x len(b)` gradient buffer.
pub(crate) fn add_outer(grad: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let row = &mut grad[i * cols..(i + 1) * cols];
        for (g, &bj) in row.iter_mut().zip(b) {
            *g += ai * bj;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ijk_sum() -> DenseTensor {
        DenseTensor::from_fn3([2, 2, 2], |i, j, k| (i + j + k) as f64)
    }

    #[test]
    fn mode1_basis_vector_selects_slice() {
        let out = mode_n_product(&ijk_sum(), &DenseTensor::vector(vec![1.0, 0.0]).unwrap(), 1)
            .unwrap();
        assert_eq!(out.shape(), &[2, 2]);
        assert_eq!(out.data(), &[0.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn two_contractions_match_nested_loops() {
        let t = ijk_sum();
        // nested-loop reference
        let mut expected = [0.0; 2];
        for (k, e) in expected.iter_mut().enumerate() {
            for i in 0..2 {
                for j in 0..2 {
                    *e += t.get3(i, j, k);
                }
            }
        }
        assert_eq!(expected, [4.0, 8.0]);
        let got = contract12(&t, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
        assert_eq!(got, expected);
    }

    #[test]
    fn identity_matrix_on_each_mode() {
        let t = DenseTensor::from_fn3([2, 3, 4], |i, j, k| (i * 12 + j * 4 + k) as f64 * 0.5 - 3.0);
        for mode in 1..=3 {
            let n = t.shape()[mode - 1];
            let out = mode_n_product(&t, &DenseTensor::identity(n), mode).unwrap();
            assert_eq!(out, t);
        }
    }

    #[test]
    fn mode_product_dimension_mismatch() {
        let err = mode_n_product(&ijk_sum(), &DenseTensor::vector(vec![1.0; 3]).unwrap(), 2)
            .unwrap_err();
        match err {
            FusionError::Shape { context, expected, actual } => {
                assert!(context.contains("mode-2"));
                assert_eq!((expected, actual), (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mode_product_replaces_dimension() {
        let t = DenseTensor::from_fn3([2, 3, 4], |i, j, k| (i + 2 * j + 3 * k) as f64);
        let m = DenseTensor::matrix(3, 5, (0..15).map(|x| x as f64).collect()).unwrap();
        let out = mode_n_product(&t, &m, 2).unwrap();
        assert_eq!(out.shape(), &[2, 5, 4]);
        let mut expected = 0.0;
        for p in 0..3 {
            expected += t.get3(1, p, 2) * m.get2(p, 4);
        }
        assert_eq!(out.get3(1, 4, 2), expected);
    }

    #[test]
    fn unfold_index_arithmetic() {
        let t = DenseTensor::from_fn3([2, 2, 2], |i, j, k| (4 * i + 2 * j + k) as f64);
        let m1 = unfold(&t, 1).unwrap();
        assert_eq!(m1.shape(), &[2, 4]);
        assert_eq!(m1.data(), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        // mode 2: rows j, columns (i, k)
        let m2 = unfold(&t, 2).unwrap();
        assert_eq!(m2.data(), &[0.0, 1.0, 4.0, 5.0, 2.0, 3.0, 6.0, 7.0]);
        // mode 3: rows k, columns (i, j)
        let m3 = unfold(&t, 3).unwrap();
        assert_eq!(m3.data(), &[0.0, 2.0, 4.0, 6.0, 1.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn unfold_scalar_tensor() {
        let t = DenseTensor::new(vec![1, 1, 1], vec![2.5]).unwrap();
        let m = unfold(&t, 2).unwrap();
        assert_eq!(m.shape(), &[1, 1]);
        assert_eq!(m.data(), &[2.5]);
    }

    #[test]
    fn unfold_rejects_matrices() {
        let m = DenseTensor::identity(3);
        assert!(matches!(unfold(&m, 1), Err(FusionError::InvalidShape(_))));
    }

    #[test]
    fn outer3_indicator() {
        let t = outer3(&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let expected = if i == 0 && j == 1 { 1.0 } else { 0.0 };
                    assert_eq!(t.get3(i, j, k), expected);
                }
            }
        }
        assert_eq!(outer3(&[2.0], &[3.0], &[4.0]).unwrap().data(), &[24.0]);
    }

    #[test]
    fn superdiag_degenerate_and_scalar_blocks() {
        let block = DenseTensor::from_fn3([2, 3, 2], |i, j, k| (i * 6 + j * 2 + k) as f64);
        assert_eq!(assemble_block_superdiag(std::slice::from_ref(&block)).unwrap(), block);

        let a = DenseTensor::new(vec![1, 1, 1], vec![3.0]).unwrap();
        let b = DenseTensor::new(vec![1, 1, 1], vec![-7.0]).unwrap();
        let t = assemble_block_superdiag(&[a, b]).unwrap();
        assert_eq!(t.shape(), &[2, 2, 2]);
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let expected = match (i, j, k) {
                        (0, 0, 0) => 3.0,
                        (1, 1, 1) => -7.0,
                        _ => 0.0,
                    };
                    assert_eq!(t.get3(i, j, k), expected);
                }
            }
        }
    }

    #[test]
    fn superdiag_rejects_mixed_shapes() {
        let a = DenseTensor::zeros(&[1, 1, 1]);
        let b = DenseTensor::zeros(&[1, 2, 1]);
        assert!(assemble_block_superdiag(&[a, b]).is_err());
        assert!(assemble_block_superdiag(&[]).is_err());
    }

    #[test]
    fn chunk_slices() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(chunk(&v, 0, 2).unwrap(), &[1.0, 2.0]);
        assert_eq!(chunk(&v, 1, 2).unwrap(), &[3.0, 4.0]);
        assert_eq!(chunk(&v, 2, 2), Err(FusionError::Index { index: 2, limit: 2 }));
        assert!(chunk(&v, 0, 3).is_err());
    }

    #[test]
    fn new_validates() {
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::new(vec![], vec![]).is_err());
        assert!(DenseTensor::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
        assert!(DenseTensor::new(vec![2, 0], vec![]).is_err());
    }
}
