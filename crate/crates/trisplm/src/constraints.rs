//! Smoothness constraints across interior edges and their QR null space.
//!
//! For the spline to be C^r over the whole domain, the B-coefficients of
//! neighboring triangles must satisfy linear cross-edge conditions. With
//! triangles relabeled as tau = <v1, v2, v3> and tau~ = <v4, v3, v2>
//! sharing the edge <v2, v3>, the order-s condition reads
//!
//!   gamma~_{s,j,k} = sum_{l+m+q=s} gamma_{l, k+m, j+q} B^s_{lmq}(v4)
//!
//! for all j + k = d - s, where B^s_{lmq}(v4) is evaluated at the
//! barycentric coordinates of v4 with respect to tau. Stacking all
//! conditions gives H gamma = 0; a QR factorization of H' yields an
//! orthonormal basis Q2 of its null space, so gamma = Q2 theta
//! parameterizes exactly the feasible splines.

use nalgebra::{DMatrix, DVector};

use crate::basis::{bernstein_eval, local_index, multi_indices, SplineSpace};
use crate::linalg::PivotedQr;
use crate::mesh::{BaryCoord, Triangulation};

/// Rank tolerance for the QR of H', relative to the largest R diagonal.
pub const RANK_TOL: f64 = 1e-10;

/// One smoothness condition: a sparse row of H.
#[derive(Debug, Clone)]
pub struct ConstraintRow {
    /// Interior edge (lo, hi vertex index) this condition lives on.
    pub edge: [usize; 2],
    /// Smoothness order s in 0..=r.
    pub order: u32,
    /// (global column, coefficient) pairs; touches exactly two triangle
    /// blocks.
    pub entries: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct ConstraintMatrix {
    n_cols: usize,
    rows: Vec<ConstraintRow>,
}

impl ConstraintMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rows(&self) -> &[ConstraintRow] {
        &self.rows
    }

    /// H gamma.
    pub fn mul_vec(&self, gamma: &DVector<f64>) -> DVector<f64> {
        assert_eq!(gamma.len(), self.n_cols);
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| row.entries.iter().map(|&(c, v)| v * gamma[c]).sum()),
        )
    }

    /// max |(H gamma)_i|.
    pub fn max_violation(&self, gamma: &DVector<f64>) -> f64 {
        self.mul_vec(gamma).abs().max()
    }

    /// Dense H' (n_cols x n_rows), the input of the null-space QR.
    pub fn dense_transpose(&self) -> DMatrix<f64> {
        let mut ht = DMatrix::zeros(self.n_cols, self.rows.len());
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in &row.entries {
                ht[(c, r)] = v;
            }
        }
        ht
    }
}

/// Orthonormal basis of the null space of H.
#[derive(Debug, Clone)]
pub struct NullBasis {
    /// K x (K - rank) matrix with orthonormal columns spanning {H gamma = 0}.
    pub q2: DMatrix<f64>,
    /// Numerical rank of H.
    pub rank: usize,
}

impl NullBasis {
    pub fn dim(&self) -> usize {
        self.q2.ncols()
    }
}

/// Assemble the C^r smoothness conditions for every interior edge. The
/// result is purely geometric: it depends on the mesh and the space, never
/// on data.
pub fn assemble_h(mesh: &Triangulation, space: &SplineSpace) -> ConstraintMatrix {
    let d = space.degree();
    let r = space.smoothness();
    let nb = space.block_size();
    let mut rows = Vec::new();

    for edge in mesh.interior_edges() {
        let [va, vb] = edge.vertices;
        let (base, other) = (edge.triangles[0], edge.triangles[1]);
        let opp_base = opposite_vertex(mesh, base, va, vb);
        let opp_other = opposite_vertex(mesh, other, va, vb);

        // Barycentric coordinates of the far vertex of `other` with respect
        // to `base`, reordered to the role order (v1, v2, v3) = (opp, va, vb).
        let w_storage = mesh.barycentric_in(base, mesh.vertices()[opp_other]);
        let role_of = |vertex: usize| -> usize {
            mesh.triangles()[base]
                .iter()
                .position(|&v| v == vertex)
                .expect("vertex belongs to triangle")
        };
        let b4 = BaryCoord {
            weights: [w_storage[role_of(opp_base)], w_storage[role_of(va)], w_storage[role_of(vb)]],
            triangle: base,
        };

        for s in 0..=r {
            let smooth_indices = multi_indices(s);
            for j in (0..=(d - s)).rev() {
                let k = d - s - j;
                let mut entries = Vec::with_capacity(1 + smooth_indices.len());
                // gamma~ entry: exponents v4 -> s, v3 (=vb) -> j, v2 (=va) -> k.
                entries.push((
                    other * nb + storage_index(mesh, other, d, &[(opp_other, s), (vb, j), (va, k)]),
                    1.0,
                ));
                for &[l, m, q] in &smooth_indices {
                    let weight = bernstein_eval(s, [l, m, q], &b4).expect("consistent index");
                    // gamma entry: exponents v1 -> l, v2 (=va) -> k+m, v3 (=vb) -> j+q.
                    entries.push((
                        base * nb
                            + storage_index(
                                mesh,
                                base,
                                d,
                                &[(opp_base, l), (va, k + m), (vb, j + q)],
                            ),
                        -weight,
                    ));
                }
                rows.push(ConstraintRow { edge: [va, vb], order: s, entries });
            }
        }
    }

    ConstraintMatrix { n_cols: space.dimension(mesh), rows }
}

/// Null-space basis of H via column-pivoted QR of H'. An empty H yields the
/// identity basis.
pub fn nullspace(h: &ConstraintMatrix) -> NullBasis {
    if h.n_rows() == 0 {
        return NullBasis { q2: DMatrix::identity(h.n_cols(), h.n_cols()), rank: 0 };
    }
    let qr = PivotedQr::new(&h.dense_transpose(), RANK_TOL);
    NullBasis { q2: qr.null_basis(), rank: qr.rank() }
}

fn opposite_vertex(mesh: &Triangulation, tri: usize, a: usize, b: usize) -> usize {
    *mesh.triangles()[tri]
        .iter()
        .find(|&&v| v != a && v != b)
        .expect("triangle has a vertex off the shared edge")
}

/// Local index of the B-coefficient whose exponents are given per vertex id.
fn storage_index(mesh: &Triangulation, tri: usize, d: u32, exps: &[(usize, u32); 3]) -> usize {
    let tri_verts = mesh.triangles()[tri];
    let mut stored = [0u32; 3];
    for &(vertex, e) in exps {
        let pos = tri_verts.iter().position(|&v| v == vertex).expect("vertex belongs to triangle");
        stored[pos] = e;
    }
    local_index(d, stored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::polynomial_bform;
    use crate::mesh::{unit_square_two_triangles, Point, Triangulation};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn skewed_two_triangles() -> Triangulation {
        Triangulation::new(
            vec![
                Point::new(0.0, 0.0),
                Point::new(1.1, -0.2),
                Point::new(0.9, 1.3),
                Point::new(-0.7, 0.8),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_has_no_constraints() {
        let mesh = Triangulation::new(
            vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let space = SplineSpace::default_space();
        let h = assemble_h(&mesh, &space);
        assert_eq!(h.n_rows(), 0);
        let basis = nullspace(&h);
        assert_eq!(basis.rank, 0);
        assert_eq!(basis.q2, DMatrix::identity(21, 21));
    }

    #[test]
    fn row_counts_match_edge_formula() {
        let mesh = unit_square_two_triangles();
        let h = assemble_h(&mesh, &SplineSpace::new(1, 0).unwrap());
        assert_eq!(h.n_rows(), 2);
        let h = assemble_h(&mesh, &SplineSpace::new(5, 1).unwrap());
        assert_eq!(h.n_rows(), 11);
        for row in h.rows() {
            assert_eq!(row.edge, [0, 2]);
            let blocks: std::collections::BTreeSet<usize> =
                row.entries.iter().map(|&(c, _)| c / 21).collect();
            assert_eq!(blocks.len(), 2);
        }
    }

    #[test]
    fn affine_functions_satisfy_c0_constraints() {
        let mesh = skewed_two_triangles();
        let space = SplineSpace::new(1, 0).unwrap();
        let h = assemble_h(&mesh, &space);
        let gamma = DVector::from_vec(polynomial_bform(
            &mesh,
            &space,
            &[(0, 0, 0.4), (1, 0, -1.3), (0, 1, 2.2)],
        ));
        assert!(h.max_violation(&gamma) <= 1e-12 * gamma.abs().max());
    }

    #[test]
    fn quintics_satisfy_c1_constraints() {
        let mesh = skewed_two_triangles();
        let space = SplineSpace::new(5, 1).unwrap();
        let h = assemble_h(&mesh, &space);
        let poly =
            [(5, 0, 0.3), (0, 5, -0.7), (2, 3, 1.9), (3, 1, -0.25), (1, 1, 0.8), (0, 0, 1.0)];
        let gamma = DVector::from_vec(polynomial_bform(&mesh, &space, &poly));
        let scale = gamma.abs().max();
        assert!(
            h.max_violation(&gamma) <= 1e-10 * scale,
            "violation {} vs scale {}",
            h.max_violation(&gamma),
            scale
        );
    }

    #[test]
    fn null_dimension_on_two_triangles_d5_r1() {
        let mesh = unit_square_two_triangles();
        let space = SplineSpace::new(5, 1).unwrap();
        let h = assemble_h(&mesh, &space);
        let basis = nullspace(&h);
        assert_eq!(basis.rank, 11);
        assert_eq!(basis.dim(), 42 - 11);

        // SVD oracle for the rank.
        let dense = h.dense_transpose().transpose();
        let svals = dense.singular_values();
        let svd_rank = svals.iter().filter(|&&s| s > 1e-10 * svals[0]).count();
        assert_eq!(basis.rank, svd_rank);
    }

    #[test]
    fn null_basis_is_orthonormal_and_annihilated() {
        let mesh = skewed_two_triangles();
        let space = SplineSpace::new(5, 1).unwrap();
        let h = assemble_h(&mesh, &space);
        let basis = nullspace(&h);
        let gram = basis.q2.tr_mul(&basis.q2);
        assert!((&gram - DMatrix::identity(basis.dim(), basis.dim())).abs().max() <= 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = DVector::from_fn(basis.dim(), |_, _| rng.gen_range(-1.0..1.0));
        let gamma = &basis.q2 * &theta;
        assert!(h.max_violation(&gamma) <= 1e-10 * theta.norm());
    }

    #[test]
    fn feasible_vectors_lie_in_the_basis_span() {
        let mesh = skewed_two_triangles();
        let space = SplineSpace::new(5, 1).unwrap();
        let h = assemble_h(&mesh, &space);
        let basis = nullspace(&h);
        let gamma = DVector::from_vec(polynomial_bform(
            &mesh,
            &space,
            &[(2, 3, 1.0), (1, 0, -2.0), (4, 1, 0.6)],
        ));
        let projected = &basis.q2 * basis.q2.tr_mul(&gamma);
        assert!((&projected - &gamma).norm() <= 1e-9 * gamma.norm());
    }

    #[test]
    fn assembly_is_deterministic() {
        let mesh = skewed_two_triangles();
        let space = SplineSpace::new(5, 1).unwrap();
        let h1 = assemble_h(&mesh, &space);
        let h2 = assemble_h(&mesh, &space);
        assert_eq!(h1.n_rows(), h2.n_rows());
        for (a, b) in h1.rows().iter().zip(h2.rows()) {
            assert_eq!(a.entries, b.entries);
        }
    }
}
