//! Dense row-major 2-D tensors of f64.
//!
//! Shapes in this crate are small except for the wide output layer, which is
//! a single matmul, so there are no views or strides: every tensor owns its
//! buffer.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::DimensionMismatch {
        op,
        lhs_rows: a.rows,
        lhs_cols: a.cols,
        rhs_rows: b.rows,
        rhs_cols: b.cols,
    }
}

impl Tensor {
    /// Construction with invariant checks: the buffer length must match the
    /// shape and every entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != rows * cols {
            return Err(Error::Usage(format!(
                "tensor buffer of length {} does not match shape {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "tensor entries must be finite, found {bad}"
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    /// Internal constructor for values produced by already-checked arithmetic.
    pub(crate) fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
        debug_assert_eq!(data.len(), rows * cols);
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Tensor {
        Tensor::raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::raw(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_tensor(&self, i: usize) -> Tensor {
        Tensor::raw(1, self.cols, self.row(i).to_vec())
    }

    /// Exact bit equality, for determinism tests.
    pub fn bits_eq(&self, other: &Tensor) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    // ---- matrix products ------------------------------------------------

    /// `self (m x k) * other (k x n)`. Rows of the left operand are
    /// processed in blocks so each row of the right operand streams through
    /// cache once per block; the order is fixed, so repeated products are
    /// bit-identical.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(dim_err("matmul", self, other));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        let ad = &self.data;
        let bd = &other.data;
        let mut i = 0;
        while i + 8 <= m {
            let block = &mut out[i * n..(i + 8) * n];
            let (c0, rest) = block.split_at_mut(n);
            let (c1, rest) = rest.split_at_mut(n);
            let (c2, rest) = rest.split_at_mut(n);
            let (c3, rest) = rest.split_at_mut(n);
            let (c4, rest) = rest.split_at_mut(n);
            let (c5, rest) = rest.split_at_mut(n);
            let (c6, c7) = rest.split_at_mut(n);
            for l in 0..k {
                let brow = &bd[l * n..(l + 1) * n];
                let a0 = ad[i * k + l];
                let a1 = ad[(i + 1) * k + l];
                let a2 = ad[(i + 2) * k + l];
                let a3 = ad[(i + 3) * k + l];
                let a4 = ad[(i + 4) * k + l];
                let a5 = ad[(i + 5) * k + l];
                let a6 = ad[(i + 6) * k + l];
                let a7 = ad[(i + 7) * k + l];
                for j in 0..n {
                    let b = brow[j];
                    c0[j] += a0 * b;
                    c1[j] += a1 * b;
                    c2[j] += a2 * b;
                    c3[j] += a3 * b;
                    c4[j] += a4 * b;
                    c5[j] += a5 * b;
                    c6[j] += a6 * b;
                    c7[j] += a7 * b;
                }
            }
            i += 8;
        }
        while i < m {
            let arow = &ad[i * k..(i + 1) * k];
            let crow = &mut out[i * n..(i + 1) * n];
            for (l, &a_il) in arow.iter().enumerate() {
                let brow = &bd[l * n..(l + 1) * n];
                for (c, &b) in crow.iter_mut().zip(brow) {
                    *c += a_il * b;
                }
            }
            i += 1;
        }
        Ok(Tensor::raw(m, n, out))
    }

    /// `self (m x k) * other^T (n x k)` without materializing the transpose.
    pub(crate) fn matmul_nt(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.cols {
            return Err(dim_err("matmul_nt", self, other));
        }
        let (m, k, n) = (self.rows, self.cols, other.rows);
        let mut out = vec![0.0; m * n];
        let ad = &self.data;
        let mut i = 0;
        // 8 left rows share each streamed right row
        while i + 8 <= m {
            let a0 = &ad[i * k..(i + 1) * k];
            let a1 = &ad[(i + 1) * k..(i + 2) * k];
            let a2 = &ad[(i + 2) * k..(i + 3) * k];
            let a3 = &ad[(i + 3) * k..(i + 4) * k];
            let a4 = &ad[(i + 4) * k..(i + 5) * k];
            let a5 = &ad[(i + 5) * k..(i + 6) * k];
            let a6 = &ad[(i + 6) * k..(i + 7) * k];
            let a7 = &ad[(i + 7) * k..(i + 8) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
                let (mut s4, mut s5, mut s6, mut s7) = (0.0, 0.0, 0.0, 0.0);
                for l in 0..k {
                    let b = brow[l];
                    s0 += a0[l] * b;
                    s1 += a1[l] * b;
                    s2 += a2[l] * b;
                    s3 += a3[l] * b;
                    s4 += a4[l] * b;
                    s5 += a5[l] * b;
                    s6 += a6[l] * b;
                    s7 += a7[l] * b;
                }
                out[i * n + j] = s0;
                out[(i + 1) * n + j] = s1;
                out[(i + 2) * n + j] = s2;
                out[(i + 3) * n + j] = s3;
                out[(i + 4) * n + j] = s4;
                out[(i + 5) * n + j] = s5;
                out[(i + 6) * n + j] = s6;
                out[(i + 7) * n + j] = s7;
            }
            i += 8;
        }
        while i < m {
            let arow = &ad[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &other.data[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (a, b) in arow.iter().zip(brow) {
                    acc += a * b;
                }
                out[i * n + j] = acc;
            }
            i += 1;
        }
        Ok(Tensor::raw(m, n, out))
    }

    /// `self^T (k x m) * other (m x n)` without materializing the transpose.
    pub(crate) fn matmul_tn(&self, other: &Tensor) -> Result<Tensor> {
        if self.rows != other.rows {
            return Err(dim_err("matmul_tn", self, other));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; k * n];
        let ad = &self.data;
        let bd = &other.data;
        let mut i = 0;
        while i + 8 <= m {
            let a0 = &ad[i * k..(i + 1) * k];
            let a1 = &ad[(i + 1) * k..(i + 2) * k];
            let a2 = &ad[(i + 2) * k..(i + 3) * k];
            let a3 = &ad[(i + 3) * k..(i + 4) * k];
            let a4 = &ad[(i + 4) * k..(i + 5) * k];
            let a5 = &ad[(i + 5) * k..(i + 6) * k];
            let a6 = &ad[(i + 6) * k..(i + 7) * k];
            let a7 = &ad[(i + 7) * k..(i + 8) * k];
            let b0 = &bd[i * n..(i + 1) * n];
            let b1 = &bd[(i + 1) * n..(i + 2) * n];
            let b2 = &bd[(i + 2) * n..(i + 3) * n];
            let b3 = &bd[(i + 3) * n..(i + 4) * n];
            let b4 = &bd[(i + 4) * n..(i + 5) * n];
            let b5 = &bd[(i + 5) * n..(i + 6) * n];
            let b6 = &bd[(i + 6) * n..(i + 7) * n];
            let b7 = &bd[(i + 7) * n..(i + 8) * n];
            for l in 0..k {
                let orow = &mut out[l * n..(l + 1) * n];
                let (w0, w1, w2, w3) = (a0[l], a1[l], a2[l], a3[l]);
                let (w4, w5, w6, w7) = (a4[l], a5[l], a6[l], a7[l]);
                for j in 0..n {
                    orow[j] += w0 * b0[j] + w1 * b1[j] + w2 * b2[j] + w3 * b3[j]
                        + w4 * b4[j] + w5 * b5[j] + w6 * b6[j] + w7 * b7[j];
                }
            }
            i += 8;
        }
        while i < m {
            let arow = &ad[i * k..(i + 1) * k];
            let brow = &bd[i * n..(i + 1) * n];
            for (l, &a_il) in arow.iter().enumerate() {
                let orow = &mut out[l * n..(l + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a_il * b;
                }
            }
            i += 1;
        }
        Ok(Tensor::raw(k, n, out))
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Tensor::raw(self.cols, self.rows, out)
    }

    // ---- elementwise ----------------------------------------------------

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape() != other.shape() {
            return Err(dim_err(op, self, other));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::raw(self.rows, self.cols, data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    /// In-place `self += other`; shapes must already match.
    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(|v| v + c)
    }

    /// Row broadcast: `row` must be 1 x cols.
    fn check_row(&self, row: &Tensor, op: &'static str) -> Result<()> {
        if row.rows != 1 || row.cols != self.cols {
            return Err(dim_err(op, self, row));
        }
        Ok(())
    }

    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        self.check_row(row, "add_row")?;
        let mut out = self.data.clone();
        for r in out.chunks_mut(self.cols) {
            for (o, &b) in r.iter_mut().zip(&row.data) {
                *o += b;
            }
        }
        Ok(Tensor::raw(self.rows, self.cols, out))
    }

    pub fn sub_row(&self, row: &Tensor) -> Result<Tensor> {
        self.check_row(row, "sub_row")?;
        let mut out = self.data.clone();
        for r in out.chunks_mut(self.cols) {
            for (o, &b) in r.iter_mut().zip(&row.data) {
                *o -= b;
            }
        }
        Ok(Tensor::raw(self.rows, self.cols, out))
    }

    pub fn mul_row(&self, row: &Tensor) -> Result<Tensor> {
        self.check_row(row, "mul_row")?;
        let mut out = self.data.clone();
        for r in out.chunks_mut(self.cols) {
            for (o, &b) in r.iter_mut().zip(&row.data) {
                *o *= b;
            }
        }
        Ok(Tensor::raw(self.rows, self.cols, out))
    }

    pub fn div_row(&self, row: &Tensor) -> Result<Tensor> {
        self.check_row(row, "div_row")?;
        let mut out = self.data.clone();
        for r in out.chunks_mut(self.cols) {
            for (o, &b) in r.iter_mut().zip(&row.data) {
                *o /= b;
            }
        }
        Ok(Tensor::raw(self.rows, self.cols, out))
    }

    // ---- reductions -------------------------------------------------------

    fn check_nonempty(&self, what: &str) -> Result<()> {
        if self.data.is_empty() {
            return Err(Error::Domain(format!("{what} over an empty tensor")));
        }
        Ok(())
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column sums: m x n -> 1 x n.
    pub fn sum_axis0(&self) -> Tensor {
        let mut out = vec![0.0; self.cols];
        for r in self.data.chunks(self.cols) {
            for (o, &v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        Tensor::raw(1, self.cols, out)
    }

    /// Row sums: m x n -> m x 1.
    pub fn sum_axis1(&self) -> Tensor {
        let out = self.data.chunks(self.cols).map(|r| r.iter().sum()).collect();
        Tensor::raw(self.rows, 1, out)
    }

    pub fn max_all(&self) -> Result<f64> {
        self.check_nonempty("max")?;
        Ok(self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
    }

    /// Row maxima with argmax (ties broken by lowest index): m x n -> m x 1.
    pub fn max_axis1(&self) -> Result<(Tensor, Vec<usize>)> {
        self.check_nonempty("max")?;
        let mut vals = Vec::with_capacity(self.rows);
        let mut args = Vec::with_capacity(self.rows);
        for r in self.data.chunks(self.cols) {
            let (mut best, mut arg) = (r[0], 0);
            for (j, &v) in r.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    arg = j;
                }
            }
            vals.push(best);
            args.push(arg);
        }
        Ok((Tensor::raw(self.rows, 1, vals), args))
    }

    /// Column maxima with argmax (ties broken by lowest index): m x n -> 1 x n.
    pub fn max_axis0(&self) -> Result<(Tensor, Vec<usize>)> {
        self.check_nonempty("max")?;
        let mut vals = self.data[..self.cols].to_vec();
        let mut args = vec![0usize; self.cols];
        for (i, r) in self.data.chunks(self.cols).enumerate().skip(1) {
            for (j, &v) in r.iter().enumerate() {
                if v > vals[j] {
                    vals[j] = v;
                    args[j] = i;
                }
            }
        }
        Ok((Tensor::raw(1, self.cols, vals), args))
    }

    /// Row-wise log-sum-exp via the max-shift trick: m x n -> m x 1.
    /// Inputs of magnitude up to ~700 never overflow.
    pub fn logsumexp_axis1(&self) -> Result<Tensor> {
        self.check_nonempty("logsumexp")?;
        let out = self
            .data
            .chunks(self.cols)
            .map(logsumexp_slice)
            .collect();
        Ok(Tensor::raw(self.rows, 1, out))
    }

    /// Column-wise log-sum-exp: m x n -> 1 x n.
    pub fn logsumexp_axis0(&self) -> Result<Tensor> {
        self.check_nonempty("logsumexp")?;
        let t = self.transpose();
        let col = t.logsumexp_axis1()?;
        Ok(Tensor::raw(1, self.cols, col.data))
    }

    /// Log-sum-exp over every entry.
    pub fn logsumexp_all(&self) -> Result<f64> {
        self.check_nonempty("logsumexp")?;
        Ok(logsumexp_slice(&self.data))
    }
}

/// Max-shifted log-sum-exp of a non-empty slice.
pub fn logsumexp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Numerically stable log(1 + e^x).
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, stable for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
