//! Bernstein-Bezier form of bivariate polynomials over triangles: basis
//! evaluation, directional derivatives via the degree-lowering recurrence,
//! exact integration of basis products, and assembly of the n x K
//! evaluation matrix.
//!
//! B-coefficients are indexed by multi-indices (i, j, k) with i+j+k = d,
//! listed with i descending, then j descending. Globally, coefficients are
//! triangle-major: triangle t owns the contiguous block
//! `t * block_size .. (t+1) * block_size`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mesh::{BaryCoord, Point, Triangulation};

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("multi-index ({0}, {1}, {2}) does not sum to degree {3}")]
    IndexMismatch(u32, u32, u32, u32),
    #[error("barycentric direction ({0}, {1}, {2}) does not sum to zero")]
    NotADirection(f64, f64, f64),
    #[error("degree {got} is too small (need at least {need})")]
    DegreeTooSmall { got: u32, need: u32 },
    #[error("smoothness {r} requires degree >= {} (got {d})", r + 1)]
    SmoothnessTooHigh { d: u32, r: u32 },
    #[error("{} point(s) fall outside the mesh (first indices: {:?})", count, sample)]
    PointsOutside { count: usize, sample: Vec<usize> },
}

/// The spline space `S_d^r` over a triangulation: piecewise degree-d
/// polynomials with r-th order smoothness across interior edges.
#[derive(Debug, Clone)]
pub struct SplineSpace {
    degree: u32,
    smoothness: u32,
    indices: Vec<[u32; 3]>,
}

impl SplineSpace {
    /// Default space: quintic with C^1 smoothness, the lowest degree with
    /// full approximation power for r = 1.
    pub fn default_space() -> Self {
        Self::new(5, 1).unwrap()
    }

    pub fn new(degree: u32, smoothness: u32) -> Result<Self, BasisError> {
        if degree < 1 {
            return Err(BasisError::DegreeTooSmall { got: degree, need: 1 });
        }
        if degree < smoothness + 1 {
            return Err(BasisError::SmoothnessTooHigh { d: degree, r: smoothness });
        }
        Ok(SplineSpace { degree, smoothness, indices: multi_indices(degree) })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn smoothness(&self) -> u32 {
        self.smoothness
    }

    /// Multi-indices (i, j, k) with i+j+k = d in canonical order.
    pub fn local_indices(&self) -> &[[u32; 3]] {
        &self.indices
    }

    /// Number of basis functions per triangle: (d+1)(d+2)/2.
    pub fn block_size(&self) -> usize {
        self.indices.len()
    }

    /// Total coefficient count K = N * block_size.
    pub fn dimension(&self, mesh: &Triangulation) -> usize {
        mesh.triangle_count() * self.block_size()
    }
}

/// Multi-indices of degree d, i descending then j descending.
pub fn multi_indices(d: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::with_capacity(((d + 1) * (d + 2) / 2) as usize);
    for i in (0..=d).rev() {
        for j in (0..=d - i).rev() {
            out.push([i, j, d - i - j]);
        }
    }
    out
}

/// Position of (i, j, k) in the canonical ordering of its degree.
pub fn local_index(d: u32, ijk: [u32; 3]) -> usize {
    debug_assert_eq!(ijk[0] + ijk[1] + ijk[2], d);
    let rem = d - ijk[0];
    (rem * (rem + 1) / 2 + rem - ijk[1]) as usize
}

const MAX_FACTORIAL: usize = 40;

fn factorial(n: u32) -> f64 {
    static TABLE: std::sync::OnceLock<[f64; MAX_FACTORIAL]> = std::sync::OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [1.0; MAX_FACTORIAL];
        for i in 1..MAX_FACTORIAL {
            t[i] = t[i - 1] * i as f64;
        }
        t
    });
    table[n as usize]
}

fn binomial(n: u32, k: u32) -> f64 {
    factorial(n) / (factorial(k) * factorial(n - k))
}

/// Evaluate the degree-d Bernstein polynomial B_{ijk} at barycentric
/// coordinates b: (d! / (i! j! k!)) b1^i b2^j b3^k.
pub fn bernstein_eval(d: u32, ijk: [u32; 3], b: &BaryCoord) -> Result<f64, BasisError> {
    let [i, j, k] = ijk;
    if i + j + k != d {
        return Err(BasisError::IndexMismatch(i, j, k, d));
    }
    let coef = factorial(d) / (factorial(i) * factorial(j) * factorial(k));
    Ok(coef
        * b.weights[0].powi(i as i32)
        * b.weights[1].powi(j as i32)
        * b.weights[2].powi(k as i32))
}

/// Values of all degree-d Bernstein polynomials at `b`, in canonical order.
pub fn bernstein_row(d: u32, weights: [f64; 3]) -> Vec<f64> {
    // Powers are precomputed; with d <= ~10 this is the whole cost.
    let dp = d as usize;
    let mut pow = [[0.0f64; 16]; 3];
    for c in 0..3 {
        pow[c][0] = 1.0;
        for e in 1..=dp {
            pow[c][e] = pow[c][e - 1] * weights[c];
        }
    }
    multi_indices(d)
        .iter()
        .map(|&[i, j, k]| {
            factorial(d) / (factorial(i) * factorial(j) * factorial(k))
                * pow[0][i as usize]
                * pow[1][j as usize]
                * pow[2][k as usize]
        })
        .collect()
}

/// Evaluate a degree-d patch with local coefficients `coeffs` at `weights`.
pub fn eval_patch(d: u32, coeffs: &[f64], weights: [f64; 3]) -> f64 {
    bernstein_row(d, weights).iter().zip(coeffs).map(|(b, c)| b * c).sum()
}

/// Directional derivative of a B-form: coefficients of degree d-1 for the
/// derivative along a barycentric direction a (a1 + a2 + a3 = 0):
/// c'_{ijk} = d (a1 c_{i+1,j,k} + a2 c_{i,j+1,k} + a3 c_{i,j,k+1}).
pub fn dir_derivative_coeffs(
    d: u32,
    direction: [f64; 3],
    coeffs: &[f64],
) -> Result<Vec<f64>, BasisError> {
    let [a1, a2, a3] = direction;
    if (a1 + a2 + a3).abs() > 1e-9 * (a1.abs() + a2.abs() + a3.abs()).max(1e-300) {
        return Err(BasisError::NotADirection(a1, a2, a3));
    }
    if d < 1 {
        return Err(BasisError::DegreeTooSmall { got: d, need: 1 });
    }
    assert_eq!(coeffs.len(), ((d + 1) * (d + 2) / 2) as usize);
    let out = multi_indices(d - 1)
        .iter()
        .map(|&[i, j, k]| {
            d as f64
                * (a1 * coeffs[local_index(d, [i + 1, j, k])]
                    + a2 * coeffs[local_index(d, [i, j + 1, k])]
                    + a3 * coeffs[local_index(d, [i, j, k + 1])])
        })
        .collect();
    Ok(out)
}

/// Barycentric directions of the Cartesian unit vectors e_x and e_y for a
/// triangle: row c of the result is (grad b_1, grad b_2, grad b_3) dotted
/// with e_c.
pub fn cartesian_directions(tri: [Point; 3]) -> [[f64; 3]; 2] {
    let [v1, v2, v3] = tri;
    let det = (v2.y - v3.y) * (v1.x - v3.x) + (v3.x - v2.x) * (v1.y - v3.y);
    let g1 = [(v2.y - v3.y) / det, (v3.x - v2.x) / det];
    let g2 = [(v3.y - v1.y) / det, (v1.x - v3.x) / det];
    let g3 = [-g1[0] - g2[0], -g1[1] - g2[1]];
    [[g1[0], g2[0], g3[0]], [g1[1], g2[1], g3[1]]]
}

/// Cartesian gradient of a degree-d patch at a barycentric point.
pub fn eval_patch_gradient(tri: [Point; 3], d: u32, coeffs: &[f64], weights: [f64; 3]) -> [f64; 2] {
    let dirs = cartesian_directions(tri);
    let mut grad = [0.0; 2];
    for c in 0..2 {
        let dc =
            dir_derivative_coeffs(d, dirs[c], coeffs).expect("cartesian directions sum to zero");
        grad[c] = eval_patch(d - 1, &dc, weights);
    }
    grad
}

/// Exact integral over a triangle of the product of two Bernstein basis
/// polynomials of degrees d1 and d2:
/// `Area * C(a1+b1,a1) C(a2+b2,a2) C(a3+b3,a3) / (C(d1+d2,d1) C(d1+d2+2,2))`.
pub fn integrate_pair(
    area: f64,
    d1: u32,
    d2: u32,
    alpha: [u32; 3],
    beta: [u32; 3],
) -> Result<f64, BasisError> {
    if alpha.iter().sum::<u32>() != d1 {
        return Err(BasisError::IndexMismatch(alpha[0], alpha[1], alpha[2], d1));
    }
    if beta.iter().sum::<u32>() != d2 {
        return Err(BasisError::IndexMismatch(beta[0], beta[1], beta[2], d2));
    }
    let num = binomial(alpha[0] + beta[0], alpha[0])
        * binomial(alpha[1] + beta[1], alpha[1])
        * binomial(alpha[2] + beta[2], alpha[2]);
    let den = binomial(d1 + d2, d1) * binomial(d1 + d2 + 2, 2);
    Ok(area * num / den)
}

/// Gram matrix of all degree-d basis functions on a triangle of the given
/// area, in canonical order.
pub fn gram_matrix(area: f64, d: u32) -> DMatrix<f64> {
    let idx = multi_indices(d);
    let nb = idx.len();
    DMatrix::from_fn(nb, nb, |r, c| {
        integrate_pair(area, d, d, idx[r], idx[c]).expect("indices are consistent")
    })
}

/// Sparse n x K evaluation matrix: row i holds the basis values at point i
/// in the block of its containing triangle, zeros elsewhere.
#[derive(Debug, Clone)]
pub struct EvalMatrix {
    n_cols: usize,
    block: usize,
    rows: Vec<EvalRow>,
}

#[derive(Debug, Clone)]
pub struct EvalRow {
    /// First global column of this row's block (= triangle * block size).
    pub offset: usize,
    pub values: Vec<f64>,
}

impl EvalMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn rows(&self) -> &[EvalRow] {
        &self.rows
    }

    /// B * q for a dense K x m matrix q.
    pub fn mul_dense(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(q.nrows(), self.n_cols);
        let m = q.ncols();
        let mut out = DMatrix::zeros(self.rows.len(), m);
        for (r, row) in self.rows.iter().enumerate() {
            for c in 0..m {
                let mut acc = 0.0;
                for (t, &v) in row.values.iter().enumerate() {
                    acc += v * q[(row.offset + t, c)];
                }
                out[(r, c)] = acc;
            }
        }
        out
    }

    /// B * gamma for a K-vector gamma.
    pub fn mul_vec(&self, gamma: &DVector<f64>) -> DVector<f64> {
        assert_eq!(gamma.len(), self.n_cols);
        DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| {
                row.values.iter().enumerate().map(|(t, &v)| v * gamma[row.offset + t]).sum()
            }),
        )
    }

    /// B' * y accumulated into a dense K-vector.
    pub fn transpose_mul_vec(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.rows.len());
        let mut out = DVector::zeros(self.n_cols);
        for (r, row) in self.rows.iter().enumerate() {
            for (t, &v) in row.values.iter().enumerate() {
                out[row.offset + t] += v * y[r];
            }
        }
        out
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.rows[r].values.iter().sum()
    }

    pub fn block_size(&self) -> usize {
        self.block
    }
}

/// Build the evaluation matrix for a set of points. Every point must locate
/// inside the mesh; the error reports the offending indices.
pub fn assemble_eval_matrix(
    mesh: &Triangulation,
    space: &SplineSpace,
    points: &[Point],
) -> Result<EvalMatrix, BasisError> {
    let block = space.block_size();
    let mut rows = Vec::with_capacity(points.len());
    let mut outside = Vec::new();
    for (i, &p) in points.iter().enumerate() {
        match mesh.locate(p) {
            Some(hit) => rows.push(EvalRow {
                offset: hit.triangle * block,
                values: bernstein_row(space.degree(), hit.weights),
            }),
            None => outside.push(i),
        }
    }
    if !outside.is_empty() {
        let count = outside.len();
        outside.truncate(10);
        return Err(BasisError::PointsOutside { count, sample: outside });
    }
    Ok(EvalMatrix { n_cols: space.dimension(mesh), block, rows })
}

/// Evaluate the spline with global coefficients `gamma` at a point, or None
/// if the point is outside the mesh.
pub fn eval_spline(
    mesh: &Triangulation,
    space: &SplineSpace,
    gamma: &DVector<f64>,
    p: Point,
) -> Option<f64> {
    let hit = mesh.locate(p)?;
    let block = space.block_size();
    let local = &gamma.as_slice()[hit.triangle * block..(hit.triangle + 1) * block];
    Some(eval_patch(space.degree(), local, hit.weights))
}

/// Exact B-form coefficients of a bivariate polynomial given as monomial
/// terms (x_exp, y_exp, coefficient). Each triangle's coefficients are
/// found by interpolation at its domain points; for total degree <= d the
/// representation is exact, so the result satisfies every smoothness
/// constraint automatically.
pub fn polynomial_bform(
    mesh: &Triangulation,
    space: &SplineSpace,
    terms: &[(u32, u32, f64)],
) -> Vec<f64> {
    let d = space.degree();
    let nb = space.block_size();
    let idx = space.local_indices();
    let eval_poly = |p: Point| -> f64 {
        terms.iter().map(|&(a, b, c)| c * p.x.powi(a as i32) * p.y.powi(b as i32)).sum()
    };
    let mut gamma = vec![0.0; space.dimension(mesh)];
    for t in 0..mesh.triangle_count() {
        let [v1, v2, v3] = mesh.triangle_points(t);
        let dom: Vec<Point> = idx
            .iter()
            .map(|&[i, j, k]| {
                let w = d as f64;
                Point::new(
                    (i as f64 * v1.x + j as f64 * v2.x + k as f64 * v3.x) / w,
                    (i as f64 * v1.y + j as f64 * v2.y + k as f64 * v3.y) / w,
                )
            })
            .collect();
        let mat = DMatrix::from_fn(nb, nb, |r, c| {
            let w = [
                idx[r][0] as f64 / d as f64,
                idx[r][1] as f64 / d as f64,
                idx[r][2] as f64 / d as f64,
            ];
            factorial(d) / (factorial(idx[c][0]) * factorial(idx[c][1]) * factorial(idx[c][2]))
                * w[0].powi(idx[c][0] as i32)
                * w[1].powi(idx[c][1] as i32)
                * w[2].powi(idx[c][2] as i32)
        });
        let rhs = DVector::from_iterator(nb, dom.iter().map(|&p| eval_poly(p)));
        let local = mat.lu().solve(&rhs).expect("Bernstein collocation is invertible");
        gamma[t * nb..(t + 1) * nb].copy_from_slice(local.as_slice());
    }
    gamma
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_square_two_triangles;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng as _, SeedableRng as _};
    use rand_chacha::ChaCha8Rng;

    fn bary(w: [f64; 3]) -> BaryCoord {
        BaryCoord { weights: w, triangle: 0 }
    }

    #[test]
    fn ordering_and_lookup_agree() {
        for d in 1..=6 {
            let idx = multi_indices(d);
            assert_eq!(idx.len(), ((d + 1) * (d + 2) / 2) as usize);
            for (pos, &ijk) in idx.iter().enumerate() {
                assert_eq!(local_index(d, ijk), pos);
            }
        }
        assert_eq!(multi_indices(2)[0], [2, 0, 0]);
        assert_eq!(multi_indices(2)[1], [1, 1, 0]);
        assert_eq!(multi_indices(2)[3], [0, 2, 0]);
    }

    #[test]
    fn vertex_basis_is_one_at_its_vertex() {
        let v = bernstein_eval(3, [3, 0, 0], &bary([1.0, 0.0, 0.0])).unwrap();
        assert_relative_eq!(v, 1.0);
    }

    #[test]
    fn midedge_basis_at_centroid() {
        let v = bernstein_eval(2, [1, 1, 0], &bary([1.0 / 3.0; 3])).unwrap();
        assert_relative_eq!(v, 2.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn index_mismatch_is_rejected() {
        assert!(bernstein_eval(3, [1, 1, 0], &bary([1.0 / 3.0; 3])).is_err());
        assert!(integrate_pair(1.0, 2, 2, [1, 1, 1], [2, 0, 0]).is_err());
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let coeffs = vec![1.0; multi_indices(4).len()];
        let d = dir_derivative_coeffs(4, [0.5, -0.25, -0.25], &coeffs).unwrap();
        for c in d {
            assert_relative_eq!(c, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn derivative_of_x_on_reference_triangle() {
        // s(x, y) = x has B-coefficients (0, 1, 0) for degree 1 on the
        // reference triangle <(0,0), (1,0), (0,1)>.
        let tri = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        let dirs = cartesian_directions(tri);
        let dx = dir_derivative_coeffs(1, dirs[0], &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(dx.len(), 1);
        assert_relative_eq!(dx[0], 1.0, epsilon = 1e-14);
        let dy = dir_derivative_coeffs(1, dirs[1], &[0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(dy[0], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn gradient_of_affine_patch_is_constant() {
        // Degree-1 patch: gradient is the same everywhere, so all second
        // derivatives vanish.
        let tri = [Point::new(0.2, -0.1), Point::new(1.3, 0.4), Point::new(0.3, 1.1)];
        let coeffs = [0.7, -0.2, 1.5];
        let g0 = eval_patch_gradient(tri, 1, &coeffs, [1.0, 0.0, 0.0]);
        let g1 = eval_patch_gradient(tri, 1, &coeffs, [0.2, 0.3, 0.5]);
        assert_relative_eq!(g0[0], g1[0], epsilon = 1e-13);
        assert_relative_eq!(g0[1], g1[1], epsilon = 1e-13);
    }

    #[test]
    fn non_direction_is_rejected() {
        assert!(dir_derivative_coeffs(2, [1.0, 0.0, 0.0], &vec![0.0; 6]).is_err());
    }

    #[test]
    fn integrate_constants_gives_area() {
        let v = integrate_pair(2.5, 0, 0, [0, 0, 0], [0, 0, 0]).unwrap();
        assert_relative_eq!(v, 2.5, epsilon = 1e-15);
    }

    #[test]
    fn integrate_single_basis_against_closed_form() {
        // Integral of one degree-d basis function is Area / C(d+2, 2).
        for d in 1..=5u32 {
            for &ijk in &multi_indices(d) {
                let v = integrate_pair(1.0, d, 0, ijk, [0, 0, 0]).unwrap();
                assert_relative_eq!(v, 1.0 / binomial(d + 2, 2), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn integrate_pair_is_symmetric() {
        let v1 = integrate_pair(1.7, 3, 5, [1, 2, 0], [2, 2, 1]).unwrap();
        let v2 = integrate_pair(1.7, 5, 3, [2, 2, 1], [1, 2, 0]).unwrap();
        assert_relative_eq!(v1, v2, epsilon = 1e-15);
    }

    #[test]
    fn eval_matrix_centroid_row_degree_one() {
        let mesh = unit_square_two_triangles();
        let space = SplineSpace::new(1, 0).unwrap();
        let b = assemble_eval_matrix(&mesh, &space, &[Point::new(2.0 / 3.0, 1.0 / 3.0)]).unwrap();
        assert_eq!(b.rows()[0].offset, 0);
        for v in &b.rows()[0].values {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn eval_matrix_reports_outside_points() {
        let mesh = unit_square_two_triangles();
        let space = SplineSpace::default_space();
        let err =
            assemble_eval_matrix(&mesh, &space, &[Point::new(0.5, 0.5), Point::new(3.0, 3.0)])
                .unwrap_err();
        match err {
            BasisError::PointsOutside { count, sample } => {
                assert_eq!(count, 1);
                assert_eq!(sample, vec![1]);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn polynomial_bform_reproduces_monomials() {
        let mesh = unit_square_two_triangles();
        let space = SplineSpace::default_space();
        let d = space.degree();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for a in 0..=d {
            for b in 0..=(d - a) {
                let gamma = DVector::from_vec(polynomial_bform(&mesh, &space, &[(a, b, 1.0)]));
                for _ in 0..200 {
                    let p = Point::new(rng.gen::<f64>(), rng.gen::<f64>());
                    let s = eval_spline(&mesh, &space, &gamma, p).unwrap();
                    let truth = p.x.powi(a as i32) * p.y.powi(b as i32);
                    assert!(
                        (s - truth).abs() <= 1e-9,
                        "monomial x^{a} y^{b} at ({}, {}): {s} vs {truth}",
                        p.x,
                        p.y
                    );
                }
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mesh = unit_square_two_triangles();
        let space = SplineSpace::new(4, 0).unwrap();
        let nb = space.block_size();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let coeffs: Vec<f64> = (0..nb).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = 0;
            let tri = mesh.triangle_points(t);
            let p = Point::new(rng.gen_range(0.3..0.7), rng.gen_range(0.05..0.25));
            let w = mesh.barycentric_in(t, p);
            let grad = eval_patch_gradient(tri, space.degree(), &coeffs, w);
            let h = 1e-5;
            let fd = |q: Point| eval_patch(space.degree(), &coeffs, mesh.barycentric_in(t, q));
            let gx = (fd(Point::new(p.x + h, p.y)) - fd(Point::new(p.x - h, p.y))) / (2.0 * h);
            let gy = (fd(Point::new(p.x, p.y + h)) - fd(Point::new(p.x, p.y - h))) / (2.0 * h);
            assert!((grad[0] - gx).abs() <= 1e-6, "{} vs {}", grad[0], gx);
            assert!((grad[1] - gy).abs() <= 1e-6, "{} vs {}", grad[1], gy);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(w1 in 0.0f64..1.0, w2 in 0.0f64..1.0, d in 1u32..7) {
            prop_assume!(w1 + w2 <= 1.0);
            let b = bary([w1, w2, 1.0 - w1 - w2]);
            let sum: f64 = multi_indices(d)
                .iter()
                .map(|&ijk| bernstein_eval(d, ijk, &b).unwrap())
                .sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn eval_rows_sum_to_one(x in 0.001f64..0.999, y in 0.001f64..0.999) {
            let mesh = unit_square_two_triangles();
            let space = SplineSpace::default_space();
            let b = assemble_eval_matrix(&mesh, &space, &[Point::new(x, y)]).unwrap();
            prop_assert!((b.row_sum(0) - 1.0).abs() <= 1e-12);
        }
    }
}
