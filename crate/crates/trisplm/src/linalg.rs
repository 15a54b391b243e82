//! Dense Householder QR with column pivoting, plus the null-space basis
//! extraction the constraint elimination needs.
//!
//! nalgebra's QR only materializes the thin Q, while the smoothness
//! constraints want the trailing columns of the full Q (the orthogonal
//! complement of the constraint rows). The factorization below stores the
//! reflectors packed in the input matrix and expands exactly the columns we
//! need. Column-major slices keep the inner loops contiguous.

use nalgebra::DMatrix;

/// `A P = Q R` with column pivoting; rank is decided by comparing the R
/// diagonal against `rel_tol` times its largest entry.
pub struct PivotedQr {
    rows: usize,
    cols: usize,
    /// Column-major packed factors: R on and above the diagonal, Householder
    /// vectors (normalized to leading 1, which is implicit) below.
    data: Vec<f64>,
    taus: Vec<f64>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: &DMatrix<f64>, rel_tol: f64) -> Self {
        let (rows, cols) = a.shape();
        let mut data = a.as_slice().to_vec();
        let kmax = rows.min(cols);
        let mut taus = vec![0.0; kmax];

        let mut norms2: Vec<f64> =
            (0..cols).map(|j| data[j * rows..(j + 1) * rows].iter().map(|v| v * v).sum()).collect();
        let mut norms2_orig = norms2.clone();

        let mut rank = kmax;
        let mut max_diag = 0.0f64;
        for k in 0..kmax {
            let mut pivot = k;
            for j in (k + 1)..cols {
                if norms2[j] > norms2[pivot] {
                    pivot = j;
                }
            }
            if pivot != k {
                for i in 0..rows {
                    data.swap(k * rows + i, pivot * rows + i);
                }
                norms2.swap(k, pivot);
                norms2_orig.swap(k, pivot);
            }

            let x_norm = {
                let col = &data[k * rows + k..(k + 1) * rows];
                col.iter().map(|v| v * v).sum::<f64>().sqrt()
            };
            if k == 0 {
                max_diag = x_norm;
            }
            if x_norm <= rel_tol * max_diag {
                rank = k;
                break;
            }

            let akk = data[k * rows + k];
            let alpha = if akk >= 0.0 { -x_norm } else { x_norm };
            let v0 = akk - alpha;
            let tau = -v0 / alpha;
            for i in (k + 1)..rows {
                data[k * rows + i] /= v0;
            }
            data[k * rows + k] = alpha;
            taus[k] = tau;

            for j in (k + 1)..cols {
                let (left, right) = data.split_at_mut(j * rows);
                let v = &left[k * rows + k + 1..k * rows + rows];
                let col = &mut right[k..rows];
                let mut dot = col[0];
                for (vi, ci) in v.iter().zip(&col[1..]) {
                    dot += vi * ci;
                }
                let w = tau * dot;
                col[0] -= w;
                for (vi, ci) in v.iter().zip(col[1..].iter_mut()) {
                    *ci -= w * vi;
                }
                let t = col[0];
                norms2[j] = (norms2[j] - t * t).max(0.0);
                // Downdating loses accuracy once the residual norm is tiny;
                // recompute it exactly then.
                if norms2[j] <= 1e-8 * norms2_orig[j] {
                    norms2[j] = col[1..].iter().map(|v| v * v).sum();
                }
            }
        }

        // With pivoting the diagonal is non-increasing, but scan anyway in
        // case the loop ran to completion.
        let mut detected = rank;
        for k in 0..rank {
            if data[k * rows + k].abs() <= rel_tol * max_diag {
                detected = k;
                break;
            }
        }

        PivotedQr { rows, cols, data, taus, rank: detected }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Diagonal of R (length min(rows, cols)).
    pub fn r_diagonal(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|k| self.data[k * self.rows + k]).collect()
    }

    /// Columns `rank..rows` of the full Q: an orthonormal basis of the
    /// orthogonal complement of the factored matrix's column span.
    pub fn null_basis(&self) -> DMatrix<f64> {
        let m = self.rows;
        let width = m - self.rank;
        let mut q = vec![0.0f64; m * width];
        for c in 0..width {
            q[c * m + self.rank + c] = 1.0;
        }
        for k in (0..self.rank).rev() {
            let tau = self.taus[k];
            let v = &self.data[k * self.rows + k + 1..(k + 1) * self.rows];
            for c in 0..width {
                let col = &mut q[c * m + k..(c + 1) * m];
                let mut dot = col[0];
                for (vi, ci) in v.iter().zip(&col[1..]) {
                    dot += vi * ci;
                }
                let w = tau * dot;
                col[0] -= w;
                for (vi, ci) in v.iter().zip(col[1..].iter_mut()) {
                    *ci -= w * vi;
                }
            }
        }
        DMatrix::from_vec(m, width, q)
    }
}

/// In-place lower Cholesky factorization, blocked so the trailing update
/// runs through gemm. Returns false on a non-positive pivot. On success the
/// strict upper triangle is zeroed, leaving a plain lower-triangular matrix.
///
/// nalgebra's own Cholesky is unblocked; for the grid covariance matrices
/// (order ~10^4) the blocked variant is several times faster.
pub fn cholesky_lower_blocked(a: &mut DMatrix<f64>, block: usize) -> bool {
    let n = a.nrows();
    assert_eq!(a.ncols(), n);
    let block = block.max(8);
    let mut k = 0;
    while k < n {
        let nb = block.min(n - k);
        // Unblocked factorization of the diagonal block; earlier panels have
        // already been folded into it by the trailing updates.
        for j in k..k + nb {
            let mut d = a[(j, j)];
            for t in k..j {
                d -= a[(j, t)] * a[(j, t)];
            }
            if d <= 0.0 || !d.is_finite() {
                return false;
            }
            let ljj = d.sqrt();
            a[(j, j)] = ljj;
            for i in (j + 1)..(k + nb) {
                let mut s = a[(i, j)];
                for t in k..j {
                    s -= a[(i, t)] * a[(j, t)];
                }
                a[(i, j)] = s / ljj;
            }
        }
        let rest = n - k - nb;
        if rest > 0 {
            // Panel solve: L21 = A21 L11^-T, column by column.
            for j in k..k + nb {
                let ljj = a[(j, j)];
                for t in k..j {
                    let ljt = a[(j, t)];
                    if ljt != 0.0 {
                        let (col_t, col_j) = {
                            let ptr = a.as_mut_slice();
                            let (left, right) = ptr.split_at_mut(j * n);
                            (&left[t * n + k + nb..t * n + n], &mut right[k + nb..n])
                        };
                        for (ci, vi) in col_j.iter_mut().zip(col_t) {
                            *ci -= ljt * vi;
                        }
                    }
                }
                let col_j = &mut a.as_mut_slice()[j * n + k + nb..(j + 1) * n];
                for ci in col_j.iter_mut() {
                    *ci /= ljj;
                }
            }
            // Trailing update A22 -= L21 L21' on the lower block triangle.
            let panel = a.view((k + nb, k), (rest, nb)).clone_owned();
            let mut jb = 0;
            while jb < rest {
                let wb = block.min(rest - jb);
                let rows = rest - jb;
                let pi = panel.view((jb, 0), (rows, nb));
                let pj = panel.view((jb, 0), (wb, nb)).transpose();
                let mut target = a.view_mut((k + nb + jb, k + nb + jb), (rows, wb));
                target.gemm(-1.0, &pi, &pj, 1.0);
                jb += wb;
            }
        }
        k += nb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    true
}
