//! Small dense kernels shared by the projection and oracle code.
//!
//! The central piece is [`ThresholdLu`], a complete-pivoting LU whose rank
//! decision compares every pivot against a relative threshold. It yields the
//! detected rank, a kernel basis, and the set of linearly independent rows.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative pivot threshold: machine epsilon times the largest dimension.
pub fn default_pivot_tol(rows: usize, cols: usize) -> f64 {
    f64::EPSILON * rows.max(cols).max(1) as f64
}

pub fn inf_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn mat_inf_norm(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn is_finite_vec(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn is_finite_mat(m: &Mat) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// In-place `(A + Aᵀ) / 2`.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

/// Relative L∞ distance `‖a − b‖∞ / max(1, ‖b‖∞)`.
pub fn rel_inf_diff(a: &Vector, b: &Vector) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a
        .iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    diff / inf_norm(b).max(1.0)
}

pub fn rel_mat_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a
        .iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    diff / mat_inf_norm(b).max(1.0)
}

/// Stacks matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[&Mat], cols: usize) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        debug_assert_eq!(b.ncols(), cols);
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn vstack_vec(blocks: &[&Vector]) -> Vector {
    let rows: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = Vector::zeros(rows);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.len()).copy_from(*b);
        r += b.len();
    }
    out
}

/// Complete-pivoting LU factorization `P A Q = L U` with threshold-based
/// nonzero-pivot decisions.
///
/// A pivot counts as nonzero when its magnitude exceeds
/// `pivot_tol · |first pivot|`; elimination stops at the first pivot that
/// fails the test, which fixes the rank.
#[derive(Debug, Clone)]
pub struct ThresholdLu {
    rows: usize,
    cols: usize,
    /// Packed factors: strict lower part holds L (unit diagonal), upper part U.
    lu: Mat,
    /// `row_perm[i]` is the original row placed at position `i`.
    row_perm: Vec<usize>,
    /// `col_perm[j]` is the original column placed at position `j`.
    col_perm: Vec<usize>,
    rank: usize,
    max_pivot: f64,
    pivot_tol: f64,
}

impl ThresholdLu {
    pub fn new(a: &Mat, pivot_tol: f64) -> Self {
        let (m, n) = a.shape();
        let mut lu = a.clone();
        let mut row_perm: Vec<usize> = (0..m).collect();
        let mut col_perm: Vec<usize> = (0..n).collect();
        let steps = m.min(n);
        let mut rank = 0;
        let mut max_pivot = 0.0_f64;

        for k in 0..steps {
            let (mut pr, mut pc, mut best) = (k, k, -1.0_f64);
            for j in k..n {
                for i in k..m {
                    let v = lu[(i, j)].abs();
                    if v > best {
                        best = v;
                        pr = i;
                        pc = j;
                    }
                }
            }
            if k == 0 {
                max_pivot = best;
            }
            if best <= pivot_tol * max_pivot || best == 0.0 {
                break;
            }
            if pr != k {
                lu.swap_rows(pr, k);
                row_perm.swap(pr, k);
            }
            if pc != k {
                lu.swap_columns(pc, k);
                col_perm.swap(pc, k);
            }
            let pivot = lu[(k, k)];
            for i in (k + 1)..m {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                if factor != 0.0 {
                    for j in (k + 1)..n {
                        let ukj = lu[(k, j)];
                        lu[(i, j)] -= factor * ukj;
                    }
                }
            }
            rank += 1;
        }

        Self {
            rows: m,
            cols: n,
            lu,
            row_perm,
            col_perm,
            rank,
            max_pivot,
            pivot_tol,
        }
    }

    pub fn with_default_tol(a: &Mat) -> Self {
        Self::new(a, default_pivot_tol(a.nrows(), a.ncols()))
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn pivot_tol(&self) -> f64 {
        self.pivot_tol
    }

    pub fn max_pivot(&self) -> f64 {
        self.max_pivot
    }

    /// Original indices of the rows selected as pivots; they are linearly
    /// independent and span the row space.
    pub fn pivot_rows(&self) -> Vec<usize> {
        let mut rows = self.row_perm[..self.rank].to_vec();
        rows.sort_unstable();
        rows
    }

    /// Index of the first rejected pivot, if the matrix is rank deficient.
    pub fn first_rejected_pivot(&self) -> Option<usize> {
        (self.rank < self.rows.min(self.cols)).then_some(self.rank)
    }

    /// Kernel basis with `cols − rank` columns, `Q [−U₁₁⁻¹U₁₂; I]`.
    pub fn kernel(&self) -> Mat {
        let (n, r) = (self.cols, self.rank);
        let dim = n - r;
        let mut k = Mat::zeros(n, dim);
        // Permuted kernel: rows r.. are identity, rows ..r solve U11 w = -U12 e.
        for c in 0..dim {
            let mut w = vec![0.0; r];
            for i in (0..r).rev() {
                let mut acc = -self.lu[(i, r + c)];
                for j in (i + 1)..r {
                    acc -= self.lu[(i, j)] * w[j];
                }
                w[i] = acc / self.lu[(i, i)];
            }
            for (i, wi) in w.iter().enumerate() {
                k[(self.col_perm[i], c)] = *wi;
            }
            k[(self.col_perm[r + c], c)] = 1.0;
        }
        k
    }

    /// Solves `A x = b` for square full-rank `A`. Returns `None` when rank deficient.
    pub fn solve(&self, b: &Mat) -> Option<Mat> {
        let n = self.rows;
        if self.rows != self.cols || self.rank < n {
            return None;
        }
        let mut x = Mat::zeros(n, b.ncols());
        for c in 0..b.ncols() {
            let mut y: Vec<f64> = (0..n).map(|i| b[(self.row_perm[i], c)]).collect();
            for i in 0..n {
                for j in 0..i {
                    y[i] -= self.lu[(i, j)] * y[j];
                }
            }
            for i in (0..n).rev() {
                for j in (i + 1)..n {
                    y[i] -= self.lu[(i, j)] * y[j];
                }
                y[i] /= self.lu[(i, i)];
            }
            for (i, yi) in y.iter().enumerate() {
                x[(self.col_perm[i], c)] = *yi;
            }
        }
        Some(x)
    }

    pub fn solve_vec(&self, b: &Vector) -> Option<Vector> {
        let m = Mat::from_column_slice(b.len(), 1, b.as_slice());
        self.solve(&m).map(|x| x.column(0).into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_rank_square_solve() {
        let a = Mat::from_row_slice(3, 3, &[4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 5.0]);
        let lu = ThresholdLu::with_default_tol(&a);
        assert_eq!(lu.rank(), 3);
        let b = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        let x = lu.solve_vec(&b).unwrap();
        assert!(inf_norm(&(&a * x - b)) < 1e-14);
        assert_eq!(lu.kernel().ncols(), 0);
    }

    #[test]
    fn duplicated_rows_detected() {
        let a = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0, 0.0, 1.0, 1.0]);
        let lu = ThresholdLu::with_default_tol(&a);
        assert_eq!(lu.rank(), 2);
        let k = lu.kernel();
        assert_eq!(k.ncols(), 1);
        assert!(mat_inf_norm(&(&a * &k)) < 1e-14);
        assert_eq!(lu.pivot_rows().len(), 2);
        assert!(lu.solve_vec(&Vector::zeros(3)).is_none());
        assert_eq!(lu.first_rejected_pivot(), Some(2));
    }

    #[test]
    fn zero_matrix_has_full_kernel() {
        let a = Mat::zeros(2, 3);
        let lu = ThresholdLu::with_default_tol(&a);
        assert_eq!(lu.rank(), 0);
        let k = lu.kernel();
        assert_eq!(k.shape(), (3, 3));
        assert_eq!(ThresholdLu::with_default_tol(&k).rank(), 3);
    }

    #[test]
    fn wide_matrix_kernel() {
        let a = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let k = ThresholdLu::with_default_tol(&a).kernel();
        assert_eq!(k.shape(), (2, 1));
        assert_eq!(k[(0, 0)], 0.0);
        assert_eq!(k[(1, 0)], 1.0);
    }
}
