use std::fmt;

use crate::error::{GenliError, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2D({}x{}) {:?}", self.rows, self.cols, self.data)
    }
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2D { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor2D { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(GenliError::config(format!(
                "tensor payload has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Tensor2D { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(GenliError::config("ragged rows"));
        }
        Ok(Tensor2D { rows: rows.len(), cols, data: rows.concat() })
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Tensor2D { rows: 1, cols: data.len(), data }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor2D::zeros(n, n);
        for i in 0..n {
            t.set(i, i, 1.0);
        }
        t
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn reshaped(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(GenliError::config(format!("cannot reshape {}x{} into {rows}x{cols}", self.rows, self.cols)));
        }
        self.rows = rows;
        self.cols = cols;
        Ok(self)
    }

    pub fn transpose(&self) -> Tensor2D {
        let mut out = Tensor2D::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &Tensor2D) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self · other`, shapes `(m,k)·(k,n)`.
    pub fn matmul(&self, other: &Tensor2D) -> Result<Tensor2D> {
        if self.cols != other.rows {
            return Err(GenliError::config(format!(
                "matmul shape mismatch: {}x{} · {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor2D::zeros(self.rows, other.cols);
        gemm(false, false, 1.0, self, other, 0.0, &mut out);
        Ok(out)
    }
}

/// `c = alpha · op(a) · op(b) + beta · c` where `op` optionally transposes.
pub(crate) fn gemm(trans_a: bool, trans_b: bool, alpha: f64, a: &Tensor2D, b: &Tensor2D, beta: f64, c: &mut Tensor2D) {
    let (m, k) = if trans_a { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if trans_b { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "gemm inner dimension");
    assert_eq!((c.rows, c.cols), (m, n), "gemm output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if trans_b { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents describe exactly the row-major buffers above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Tensor2D, b: &Tensor2D) -> Tensor2D {
        let mut out = Tensor2D::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn gemm_transposes_match_naive() {
        let a = Tensor2D::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor2D::from_vec(3, 4, (0..12).map(f64::from).collect()).unwrap();
        let mut c = Tensor2D::zeros(2, 4);
        gemm(true, false, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, naive(&a.transpose(), &b));

        let mut d = Tensor2D::filled(3, 3, 1.0);
        gemm(false, true, 2.0, &a, &a, 1.0, &mut d);
        let mut expect = naive(&a, &a.transpose());
        expect.data_mut().iter_mut().for_each(|v| *v = 2.0 * *v + 1.0);
        assert_eq!(d, expect);
    }

    #[test]
    fn matmul_rejects_bad_shapes() {
        let a = Tensor2D::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(GenliError::Config(_))));
    }
}
