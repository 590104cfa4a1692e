use nalgebra::Vector3;

use crate::{Error, Result};

/// Dense row-major matrix of `f64`; every tape value is one of these.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            rows: 1,
            cols: 1,
            data: vec![v],
        }
    }

    /// `n × 1` column.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    /// `1 × n` row.
    pub fn row(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// `n × 3`, one point per row.
    pub fn from_points(points: &[Vector3<f64>]) -> Self {
        Self {
            rows: points.len(),
            cols: 3,
            data: points.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    pub fn to_points(&self) -> Vec<Vector3<f64>> {
        debug_assert_eq!(self.cols, 3);
        self.data
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect()
    }

    pub fn point(&self, row: usize) -> Vector3<f64> {
        let i = row * self.cols;
        Vector3::new(self.data[i], self.data[i + 1], self.data[i + 2])
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// The single entry of a `1 × 1` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `out (+)= op(a) · op(b)` where `op` optionally transposes.
pub(crate) fn gemm(
    a: &Tensor,
    trans_a: bool,
    b: &Tensor,
    trans_b: bool,
    out: &mut Tensor,
    accumulate: bool,
) {
    let (m, k) = if trans_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (k2, n) = if trans_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.shape(), (m, n), "output shape");
    let (rsa, csa) = if trans_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if trans_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the strides above describe `a`, `b` and `out` exactly, and the
    // shapes were checked, so every access stays inside the three buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_product_for_all_transposes() {
        let a = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let mut out = Tensor::zeros(2, 2);
        gemm(&a, false, &b, false, &mut out, false);
        assert_eq!(out.data(), &[58.0, 64.0, 139.0, 154.0]);

        // aᵀ·aᵀᵀ = aᵀa (3×3)
        let mut ata = Tensor::zeros(3, 3);
        gemm(&a, true, &a, false, &mut ata, false);
        assert_eq!(ata.get(0, 0), 17.0);
        assert_eq!(ata.get(1, 2), 2.0 * 3.0 + 5.0 * 6.0);

        let mut aat = Tensor::zeros(2, 2);
        gemm(&a, false, &a, true, &mut aat, false);
        assert_eq!(aat.data(), &[14.0, 32.0, 32.0, 77.0]);

        gemm(&a, false, &b, false, &mut out, true);
        assert_eq!(out.data(), &[116.0, 128.0, 278.0, 308.0]);
    }

    #[test]
    fn shape_checked_constructor() {
        assert!(Tensor::new(2, 2, vec![0.0; 3]).is_err());
        assert_eq!(Tensor::scalar(2.5).item(), 2.5);
        let pts = vec![Vector3::new(1.0, 2.0, 3.0), Vector3::new(4.0, 5.0, 6.0)];
        assert_eq!(Tensor::from_points(&pts).to_points(), pts);
    }
}
