//! Minimal dense row-major matrix used for trajectories, feature matrices
//! and network weights. The three GEMM flavors the training loop needs are
//! delegated to `matrixmultiply`, everything else is plain slices.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape/data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    /// Gather the given rows into a new matrix (minibatch assembly).
    pub fn gather_rows(&self, indices: &[usize]) -> Mat {
        let mut out = Mat::zeros(indices.len(), self.cols);
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).copy_from_slice(self.row(i));
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// c = a · bᵀ with a: [m×k], b: [n×k] → c: [m×n].
pub fn matmul_nt(a: &Mat, b: &Mat, c: &mut Mat) {
    assert_eq!(a.cols, b.cols);
    assert_eq!((c.rows, c.cols), (a.rows, b.rows));
    gemm(
        a.rows, a.cols, b.rows,
        a, a.cols as isize, 1,
        b, 1, b.cols as isize,
        c,
    );
}

/// c = a · b with a: [m×k], b: [k×n] → c: [m×n].
pub fn matmul_nn(a: &Mat, b: &Mat, c: &mut Mat) {
    assert_eq!(a.cols, b.rows);
    assert_eq!((c.rows, c.cols), (a.rows, b.cols));
    gemm(
        a.rows, a.cols, b.cols,
        a, a.cols as isize, 1,
        b, b.cols as isize, 1,
        c,
    );
}

/// c = aᵀ · b with a: [k×m], b: [k×n] → c: [m×n].
pub fn matmul_tn(a: &Mat, b: &Mat, c: &mut Mat) {
    assert_eq!(a.rows, b.rows);
    assert_eq!((c.rows, c.cols), (a.cols, b.cols));
    gemm(
        a.cols, a.rows, b.cols,
        a, 1, a.cols as isize,
        b, b.cols as isize, 1,
        c,
    );
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize, k: usize, n: usize,
    a: &Mat, rsa: isize, csa: isize,
    b: &Mat, rsb: isize, csb: isize,
    c: &mut Mat,
) {
    unsafe {
        matrixmultiply::dgemm(
            m, k, n,
            1.0,
            a.data.as_ptr(), rsa, csa,
            b.data.as_ptr(), rsb, csb,
            0.0,
            c.data.as_mut_ptr(), c.cols as isize, 1,
        );
    }
}
