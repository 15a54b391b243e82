//! Block-diagonal energy (roughness) penalty: gamma' P gamma equals the
//! integral over the domain of
//! (D_xx f)^2 + 2 (D_xy f)^2 + (D_yy f)^2 for f = B gamma.
//!
//! Each triangle contributes one block. The second Cartesian partials of
//! every basis function are expressed in degree-(d-2) B-form via the
//! derivative recurrence, and products are integrated exactly with the
//! closed-form Bernstein product integral; no quadrature is involved.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::basis::{cartesian_directions, dir_derivative_coeffs, gram_matrix, SplineSpace};
use crate::mesh::Triangulation;

#[derive(Debug, Error)]
pub enum PenaltyError {
    #[error("energy order {0} is not supported (only order 2 is implemented)")]
    UnsupportedOrder(u32),
    #[error("degree {0} spline has identically vanishing second derivatives; the penalty needs degree >= 2")]
    DegreeTooSmall(u32),
}

/// Symmetric positive semidefinite K x K penalty, stored as one dense block
/// per triangle.
#[derive(Debug, Clone)]
pub struct PenaltyMatrix {
    blocks: Vec<DMatrix<f64>>,
    block_size: usize,
}

impl PenaltyMatrix {
    pub fn n_cols(&self) -> usize {
        self.blocks.len() * self.block_size
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// gamma' P gamma.
    pub fn quadratic_form(&self, gamma: &DVector<f64>) -> f64 {
        assert_eq!(gamma.len(), self.n_cols());
        let nb = self.block_size;
        self.blocks
            .iter()
            .enumerate()
            .map(|(t, block)| {
                let local = gamma.rows(t * nb, nb);
                (block * &local).dot(&local)
            })
            .sum()
    }

    /// P q for a dense K x m matrix q, exploiting the block structure.
    pub fn mul_dense(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(q.nrows(), self.n_cols());
        let nb = self.block_size;
        let mut out = DMatrix::zeros(q.nrows(), q.ncols());
        for (t, block) in self.blocks.iter().enumerate() {
            let rows = q.rows(t * nb, nb);
            out.rows_mut(t * nb, nb).copy_from(&(block * rows));
        }
        out
    }

    /// q' P q, the reduced penalty used by the estimator.
    pub fn project(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let pq = self.mul_dense(q);
        let mut out = q.tr_mul(&pq);
        // Exact symmetry keeps the downstream Cholesky honest.
        for i in 0..out.nrows() {
            for j in 0..i {
                let s = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        out
    }
}

/// Assemble the order-`upsilon` energy penalty. Only `upsilon = 2` is
/// supported; the parameter exists so callers state the order explicitly.
pub fn assemble_penalty(
    mesh: &Triangulation,
    space: &SplineSpace,
    upsilon: u32,
) -> Result<PenaltyMatrix, PenaltyError> {
    if upsilon != 2 {
        return Err(PenaltyError::UnsupportedOrder(upsilon));
    }
    let d = space.degree();
    if d < 2 {
        return Err(PenaltyError::DegreeTooSmall(d));
    }
    let nb = space.block_size();
    let nb2 = ((d - 1) * d / 2) as usize;

    let blocks = (0..mesh.triangle_count())
        .map(|t| {
            let tri = mesh.triangle_points(t);
            let dirs = cartesian_directions(tri);
            let gram = gram_matrix(mesh.area(t), d - 2);

            // Columns: degree-(d-2) coefficients of D_xx, D_xy, D_yy of each
            // basis function.
            let mut cxx = DMatrix::zeros(nb2, nb);
            let mut cxy = DMatrix::zeros(nb2, nb);
            let mut cyy = DMatrix::zeros(nb2, nb);
            let mut unit = vec![0.0; nb];
            for a in 0..nb {
                unit[a] = 1.0;
                let dx = dir_derivative_coeffs(d, dirs[0], &unit).expect("valid direction");
                let dy = dir_derivative_coeffs(d, dirs[1], &unit).expect("valid direction");
                let dxx = dir_derivative_coeffs(d - 1, dirs[0], &dx).expect("valid direction");
                let dxy = dir_derivative_coeffs(d - 1, dirs[1], &dx).expect("valid direction");
                let dyy = dir_derivative_coeffs(d - 1, dirs[1], &dy).expect("valid direction");
                cxx.column_mut(a).copy_from_slice(&dxx);
                cxy.column_mut(a).copy_from_slice(&dxy);
                cyy.column_mut(a).copy_from_slice(&dyy);
                unit[a] = 0.0;
            }

            let mut block = cxx.tr_mul(&(&gram * &cxx))
                + cyy.tr_mul(&(&gram * &cyy))
                + 2.0 * cxy.tr_mul(&(&gram * &cxy));
            for i in 0..nb {
                for j in 0..i {
                    let s = 0.5 * (block[(i, j)] + block[(j, i)]);
                    block[(i, j)] = s;
                    block[(j, i)] = s;
                }
            }
            block
        })
        .collect();

    Ok(PenaltyMatrix { blocks, block_size: nb })
}
