//! Shared test oracles: exact triangle quadrature, dense assemblies, a
//! direct solver for the constrained (saddle-point) normal equations, and
//! an independent evaluator for second derivatives of B-form patches.
//!
//! These deliberately avoid the production assembly paths they are used to
//! check: integration here is numeric quadrature (exact for polynomials of
//! the tested degrees), the constrained solve keeps the Lagrange
//! multipliers explicit instead of eliminating the constraints.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use trisplm::basis::{bernstein_eval, local_index, multi_indices, EvalMatrix, SplineSpace};
use trisplm::constraints::ConstraintMatrix;
use trisplm::mesh::{BaryCoord, Point, Triangulation};
use trisplm::penalty::PenaltyMatrix;

/// Gauss-Legendre nodes and weights on [0, 1], computed by Newton iteration
/// on the Legendre polynomial (machine precision).
pub fn gauss_legendre_01(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        // Initial guess on [-1, 1].
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out.push(((x + 1.0) / 2.0, w / 2.0));
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    out
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Quadrature nodes (physical points with barycentric coordinates) and
/// weights on a triangle via the Duffy map; exact for polynomials of total
/// degree <= 2*ng - 2. Weights sum to the triangle area.
pub fn triangle_quadrature(tri: [Point; 3], ng: usize) -> Vec<(Point, [f64; 3], f64)> {
    let gl = gauss_legendre_01(ng);
    let [v1, v2, v3] = tri;
    let area2 = ((v2.x - v1.x) * (v3.y - v1.y) - (v3.x - v1.x) * (v2.y - v1.y)).abs();
    let mut out = Vec::with_capacity(ng * ng);
    for &(u, wu) in &gl {
        for &(v, wv) in &gl {
            // Reference coordinates with the Duffy weight u.
            let xi = u * (1.0 - v);
            let eta = u * v;
            let b = [1.0 - xi - eta, xi, eta];
            let p = Point::new(
                b[0] * v1.x + b[1] * v2.x + b[2] * v3.x,
                b[0] * v1.y + b[1] * v2.y + b[2] * v3.y,
            );
            out.push((p, b, area2 * u * wu * wv));
        }
    }
    out
}

/// Numerically integrate a function of (point, barycentric) over a triangle.
pub fn integrate_on_triangle(
    tri: [Point; 3],
    ng: usize,
    f: impl Fn(Point, [f64; 3]) -> f64,
) -> f64 {
    triangle_quadrature(tri, ng).into_iter().map(|(p, b, w)| w * f(p, b)).sum()
}

/// Value of a directional derivative of a degree-d patch, computed from the
/// raw coefficient differences (independent of the production
/// degree-lowering code path).
pub fn directional_derivative_value(d: u32, coeffs: &[f64], dir: [f64; 3], bary: [f64; 3]) -> f64 {
    let b = BaryCoord { weights: bary, triangle: 0 };
    multi_indices(d - 1)
        .iter()
        .map(|&[i, j, k]| {
            let delta = dir[0] * coeffs[local_index(d, [i + 1, j, k])]
                + dir[1] * coeffs[local_index(d, [i, j + 1, k])]
                + dir[2] * coeffs[local_index(d, [i, j, k + 1])];
            d as f64 * delta * bernstein_eval(d - 1, [i, j, k], &b).unwrap()
        })
        .sum()
}

/// Second directional derivative value via two coefficient differences.
pub fn second_directional_derivative_value(
    d: u32,
    coeffs: &[f64],
    dir_a: [f64; 3],
    dir_b: [f64; 3],
    bary: [f64; 3],
) -> f64 {
    assert!(d >= 2);
    let b = BaryCoord { weights: bary, triangle: 0 };
    let shift = |idx: [u32; 3], e: usize| {
        let mut out = idx;
        out[e] += 1;
        out
    };
    multi_indices(d - 2)
        .iter()
        .map(|&idx| {
            let mut acc = 0.0;
            for (ea, &wa) in dir_a.iter().enumerate() {
                for (eb, &wb) in dir_b.iter().enumerate() {
                    acc += wa * wb * coeffs[local_index(d, shift(shift(idx, ea), eb))];
                }
            }
            (d * (d - 1)) as f64 * acc * bernstein_eval(d - 2, idx, &b).unwrap()
        })
        .sum()
}

/// Barycentric directions of the Cartesian axes, derived from the affine
/// map of the triangle (gradients of the barycentric coordinates).
pub fn cartesian_dirs(tri: [Point; 3]) -> [[f64; 3]; 2] {
    let [v1, v2, v3] = tri;
    let det = (v2.y - v3.y) * (v1.x - v3.x) + (v3.x - v2.x) * (v1.y - v3.y);
    let g1 = [(v2.y - v3.y) / det, (v3.x - v2.x) / det];
    let g2 = [(v3.y - v1.y) / det, (v1.x - v3.x) / det];
    [[g1[0], g2[0], -g1[0] - g2[0]], [g1[1], g2[1], -g1[1] - g2[1]]]
}

/// The bending-energy integrand (f_xx^2 + 2 f_xy^2 + f_yy^2) of a patch,
/// integrated by quadrature; the oracle route for the penalty matrix.
pub fn energy_by_quadrature(
    mesh: &Triangulation,
    space: &SplineSpace,
    gamma: &DVector<f64>,
) -> f64 {
    let d = space.degree();
    let nb = space.block_size();
    let ng = (d as usize).max(2) + 2;
    (0..mesh.triangle_count())
        .map(|t| {
            let tri = mesh.triangle_points(t);
            let dirs = cartesian_dirs(tri);
            let local = &gamma.as_slice()[t * nb..(t + 1) * nb];
            integrate_on_triangle(tri, ng, |_, b| {
                let fxx = second_directional_derivative_value(d, local, dirs[0], dirs[0], b);
                let fxy = second_directional_derivative_value(d, local, dirs[0], dirs[1], b);
                let fyy = second_directional_derivative_value(d, local, dirs[1], dirs[1], b);
                fxx * fxx + 2.0 * fxy * fxy + fyy * fyy
            })
        })
        .sum()
}

pub fn dense_from_eval(eval: &EvalMatrix) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(eval.n_rows(), eval.n_cols());
    for (r, row) in eval.rows().iter().enumerate() {
        for (t, &v) in row.values.iter().enumerate() {
            out[(r, row.offset + t)] = v;
        }
    }
    out
}

pub fn dense_from_penalty(p: &PenaltyMatrix) -> DMatrix<f64> {
    let nb = p.block_size();
    let k = p.n_cols();
    let mut out = DMatrix::zeros(k, k);
    for (t, block) in p.blocks().iter().enumerate() {
        out.view_mut((t * nb, t * nb), (nb, nb)).copy_from(block);
    }
    out
}

pub fn dense_from_constraints(h: &ConstraintMatrix) -> DMatrix<f64> {
    h.dense_transpose().transpose()
}

/// Direct solution of the constrained penalized least squares problem via
/// the saddle-point (KKT) system
///
///   [ Z'Z      Z'B          0  ] [beta ]   [ Z'Y ]
///   [ B'Z   B'B + lambda P  H' ] [gamma] = [ B'Y ]
///   [ 0        H            0  ] [nu   ]   [  0  ]
///
/// solved by SVD (H may have dependent rows; beta and gamma are unique).
pub fn kkt_solve(
    z: &DMatrix<f64>,
    b: &DMatrix<f64>,
    h: &DMatrix<f64>,
    p: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> (DVector<f64>, DVector<f64>) {
    let np = z.ncols();
    let k = b.ncols();
    let r = h.nrows();
    let dim = np + k + r;
    let mut s = DMatrix::zeros(dim, dim);
    s.view_mut((0, 0), (np, np)).copy_from(&z.tr_mul(z));
    s.view_mut((0, np), (np, k)).copy_from(&z.tr_mul(b));
    s.view_mut((np, 0), (k, np)).copy_from(&b.tr_mul(z));
    s.view_mut((np, np), (k, k)).copy_from(&(b.tr_mul(b) + p * lambda));
    s.view_mut((np, np + k), (k, r)).copy_from(&h.transpose());
    s.view_mut((np + k, np), (r, k)).copy_from(h);
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, np).copy_from(&z.tr_mul(y));
    rhs.rows_mut(np, k).copy_from(&b.tr_mul(y));
    let sol = s.svd(true, true).solve(&rhs, 1e-12).expect("saddle system solve");
    (DVector::from(sol.rows(0, np).clone_owned()), DVector::from(sol.rows(np, k).clone_owned()))
}

/// A random coefficient vector projected onto the constrained space.
pub fn random_constrained_gamma(q2: &DMatrix<f64>, rng: &mut impl rand::Rng) -> DVector<f64> {
    let theta = DVector::from_fn(q2.ncols(), |_, _| rng.gen_range(-1.0..1.0));
    q2 * theta
}

/// Four-triangle fan of the unit square (center vertex).
pub fn unit_square_fan() -> Triangulation {
    Triangulation::new(
        vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
            Point::new(0.5, 0.5),
        ],
        vec![[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]],
    )
    .unwrap()
}
