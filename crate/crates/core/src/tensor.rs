//! Dense row-major `f64` tensors and the forward kernels used by the graph.
//!
//! Most kernels operate on rank-2 tensors. A rank-1 tensor of length `n` is
//! accepted wherever a row vector is expected and is treated as `1 x n`.

use crate::error::{dim_err, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || numel != data.len() {
            return Err(Error::InvalidShape {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "tensor dimensions must be positive"
        );
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![n], data).expect("vector must be nonempty")
    }

    /// Single-row matrix `1 x n`.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::new(vec![1, n], data).expect("row must be nonempty")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Rows when viewed as a matrix.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return dim_err(op, &self.shape, &other.shape);
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return dim_err("add_assign", &self.shape, &other.shape);
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    fn check_row(&self, row: &Self, op: &'static str) -> Result<()> {
        if row.numel() != self.cols() || row.rows() != 1 {
            return dim_err(op, &self.shape, &row.shape);
        }
        Ok(())
    }

    /// Adds `row` (length `cols`) to every row.
    pub fn add_row(&self, row: &Self) -> Result<Self> {
        self.check_row(row, "add_row")?;
        let c = self.cols();
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(c) {
            for (v, b) in chunk.iter_mut().zip(&row.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Multiplies every row elementwise by `row`.
    pub fn mul_row(&self, row: &Self) -> Result<Self> {
        self.check_row(row, "mul_row")?;
        let c = self.cols();
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(c) {
            for (v, b) in chunk.iter_mut().zip(&row.data) {
                *v *= b;
            }
        }
        Ok(out)
    }

    /// Multiplies every row `i` by the scalar `col[i]`.
    pub fn mul_col(&self, col: &Self) -> Result<Self> {
        let c = self.cols();
        if col.numel() != self.rows() || col.cols() != 1 {
            return dim_err("mul_col", &self.shape, &col.shape);
        }
        let mut out = self.clone();
        for (chunk, s) in out.data.chunks_mut(c).zip(&col.data) {
            for v in chunk.iter_mut() {
                *v *= s;
            }
        }
        Ok(out)
    }

    fn as_matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.len() {
            1 => Ok((1, self.shape[0])),
            2 => Ok((self.shape[0], self.shape[1])),
            _ => dim_err(op, &self.shape, &[]),
        }
    }

    /// `op(self) · op(other)` where `op` optionally transposes.
    pub fn matmul_t(&self, other: &Self, trans_a: bool, trans_b: bool) -> Result<Self> {
        let (ar, ac) = self.as_matrix_dims("matmul")?;
        let (br, bc) = other.as_matrix_dims("matmul")?;
        let (m, k) = if trans_a { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if trans_b { (bc, br) } else { (br, bc) };
        if k != k2 {
            return dim_err("matmul", &self.shape, &other.shape);
        }
        let (rsa, csa) = if trans_a { (1, ac as isize) } else { (ac as isize, 1) };
        let (rsb, csb) = if trans_b { (1, bc as isize) } else { (bc as isize, 1) };
        let mut out = vec![0.0; m * n];
        // SAFETY: strides describe exactly the row-major buffers above, and
        // `out` has room for m x n elements.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                rsa,
                csa,
                other.data.as_ptr(),
                rsb,
                csb,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Self::new(vec![m, n], out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        self.matmul_t(other, false, false)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.as_matrix_dims("transpose")?;
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self::new(vec![c, r], out)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn gelu(&self) -> Self {
        self.map(gelu)
    }

    pub fn exp(&self) -> Self {
        self.map(f64::exp)
    }

    pub fn log(&self) -> Result<Self> {
        if let Some(bad) = self.data.iter().find(|&&v| v.is_nan() || v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("nonpositive argument {bad}"),
            });
        }
        Ok(self.map(f64::ln))
    }

    pub fn clamp_min(&self, min: f64) -> Self {
        self.map(|v| v.max(min))
    }

    /// Numerically stable softmax. `axis` 1 normalizes each row, `axis` 0
    /// each column; rank-1 tensors only accept axis 0.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        match (self.shape.len(), axis) {
            (1, 0) | (2, 1) => Ok(self.softmax_rows()),
            (2, 0) => self.transpose()?.softmax_rows().transpose(),
            _ => Err(Error::Contract(format!(
                "softmax axis {axis} invalid for shape {:?}",
                self.shape
            ))),
        }
    }

    fn softmax_rows(&self) -> Self {
        let c = self.cols();
        let mut out = self.clone();
        for row in out.data.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        out
    }

    /// Concatenates rank-2 tensors along `axis`.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let (r0, c0) = first.as_matrix_dims("concat")?;
        match axis {
            0 => {
                let mut data = Vec::new();
                let mut rows = 0;
                for p in parts {
                    let (r, c) = p.as_matrix_dims("concat")?;
                    if c != c0 {
                        return dim_err("concat", first.shape(), p.shape());
                    }
                    rows += r;
                    data.extend_from_slice(&p.data);
                }
                Self::new(vec![rows, c0], data)
            }
            1 => {
                let mut cols = 0;
                for p in parts {
                    let (r, c) = p.as_matrix_dims("concat")?;
                    if r != r0 {
                        return dim_err("concat", first.shape(), p.shape());
                    }
                    cols += c;
                }
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for p in parts {
                        data.extend_from_slice(p.row_slice(i));
                    }
                }
                Self::new(vec![r0, cols], data)
            }
            _ => Err(Error::Contract(format!("concat axis {axis} unsupported"))),
        }
    }

    /// `len` rows (`axis` 0) or columns (`axis` 1) starting at `start`.
    pub fn slice(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let (r, c) = self.as_matrix_dims("slice")?;
        let bound = if axis == 0 { r } else { c };
        if axis > 1 || len == 0 || start + len > bound {
            return Err(Error::Index {
                op: "slice",
                index: start + len,
                bound,
            });
        }
        if axis == 0 {
            Self::new(vec![len, c], self.data[start * c..(start + len) * c].to_vec())
        } else {
            let mut data = Vec::with_capacity(r * len);
            for i in 0..r {
                data.extend_from_slice(&self.data[i * c + start..i * c + start + len]);
            }
            Self::new(vec![r, len], data)
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    /// Column means, `1 x cols`.
    pub fn mean_rows(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; c];
        for row in self.data.chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        Self::row(out)
    }

    /// Rows of `self` selected by `ids`.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Self> {
        let (r, c) = self.as_matrix_dims("gather_rows")?;
        if ids.is_empty() {
            return Err(Error::Contract("gather_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= r {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: id,
                    bound: r,
                });
            }
            data.extend_from_slice(self.row_slice(id));
        }
        Self::new(vec![ids.len(), c], data)
    }

    /// Zero-mean, unit-variance normalization of each row. Returns the output
    /// and the per-row inverse standard deviations.
    pub fn normalize_rows(&self, eps: f64) -> (Self, Vec<f64>) {
        let c = self.cols();
        let mut out = self.clone();
        let mut inv_std = Vec::with_capacity(self.rows());
        for row in out.data.chunks_mut(c) {
            let mu = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mu) * is;
            }
            inv_std.push(is);
        }
        (out, inv_std)
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + (GELU_C * (v + 0.044715 * v * v * v)).tanh())
}

pub(crate) fn gelu_grad(v: f64) -> f64 {
    let u = GELU_C * (v + 0.044715 * v * v * v);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&Tensor::identity(2)).unwrap(), a);
    }

    #[test]
    fn matmul_transposes_match_explicit() {
        let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.0, -2.0]).unwrap();
        let abt = a.matmul_t(&b, false, true).unwrap();
        assert_eq!(abt, a.matmul(&b.transpose().unwrap()).unwrap());
        let atb = a.matmul_t(&b, true, false).unwrap();
        assert_eq!(atb, a.transpose().unwrap().matmul(&b).unwrap());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        match a.matmul(&b) {
            Err(Error::Dimension { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn softmax_symmetric_and_activations() {
        let s = Tensor::vector(vec![0.0, 0.0]).softmax(0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        assert_eq!(Tensor::scalar(0.0).sigmoid().item().unwrap(), 0.5);
        assert_eq!(Tensor::scalar(0.0).tanh().item().unwrap(), 0.0);
    }

    #[test]
    fn softmax_columns() {
        let a = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 3.0]).unwrap();
        let s = a.softmax(0).unwrap();
        assert!((s.get2(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.get2(0, 1) + s.get2(1, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn log_rejects_nonpositive() {
        assert!(matches!(
            Tensor::vector(vec![1.0, 0.0]).log(),
            Err(Error::Domain { .. })
        ));
    }

    #[test]
    fn concat_and_slice() {
        let a = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(1, 3, vec![3.0, 4.0, 5.0]).unwrap();
        let c = Tensor::concat(&[&a, &b], 1).unwrap();
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(c.slice(1, 2, 3).unwrap(), b);
        assert!(Tensor::concat(&[&a, &b], 0).is_err());
    }

    #[test]
    fn invalid_shape_rejected() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
    }
}
