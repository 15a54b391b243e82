//! The penalized constrained least-squares estimator for the partially
//! linear model Y = Z'beta + g(X) + eps.
//!
//! With B the basis evaluation matrix, H the smoothness constraints and P
//! the roughness penalty, the fit minimizes
//! `||Y - Z beta - B gamma||^2 + lambda gamma' P gamma` subject to
//! `H gamma = 0`. The constraint is eliminated by gamma = Q2 theta, after
//! which the estimators have closed forms built from the blocks
//! V22 = Q2'(B'B + lambda P)Q2 and the two Schur complements:
//!
//!   beta  = U11 Z'(I - B Q2 V22^-1 Q2'B') Y
//!   theta = U22 Q2'B'(I - Z (Z'Z)^-1 Z') Y
//!
//! The effective degrees of freedom tr(S(lambda)) reduce by trace cycling
//! to p plus an (K - rank)-dimensional trace, so no n x n matrix is ever
//! formed. GCV over a lambda grid picks the smoothing parameter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::basis::{assemble_eval_matrix, eval_patch, BasisError, EvalMatrix, SplineSpace};
use crate::constraints::{assemble_h, nullspace, ConstraintMatrix, NullBasis};
use crate::mesh::{Point, Triangulation};
use crate::penalty::{assemble_penalty, PenaltyError, PenaltyMatrix};

/// 97.5% standard normal quantile used for the 95% confidence intervals.
pub const Z_975: f64 = 1.959964;

#[derive(Debug, Error)]
pub enum PlmError {
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Penalty(#[from] PenaltyError),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("lambda must be positive, got {0}")]
    NonPositiveLambda(f64),
    #[error("lambda grid is empty")]
    EmptyGrid,
    #[error("Z'Z is singular: covariate columns are collinear")]
    CollinearCovariates,
    #[error("system is numerically singular at lambda = {lambda:e}; try a larger penalty or a coarser triangulation")]
    SingularSystem { lambda: f64 },
    #[error("degrees of freedom {df:.3} reach the sample size {n}; the fit interpolates and sigma^2 is not estimable")]
    DegreesOfFreedomExhausted { df: f64, n: usize },
    #[error("(Z - Zhat)'(Z - Zhat) is singular: a covariate is fully explained by location")]
    CovarianceSingular,
    #[error("no lambda on the grid produced a usable fit")]
    AllLambdasFailed,
    #[error("fit file parse error: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Default smoothing grid: 10 values of lambda with log10 equally spaced
/// between -6 and 7.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..10).map(|i| 10f64.powf(-6.0 + 13.0 * i as f64 / 9.0)).collect()
}

/// Data-independent part of the fit for one (mesh, space) pair: smoothness
/// constraints, their null-space basis, and the penalty with its reduction
/// Q2' P Q2. Building this is the expensive step; it is reused across
/// datasets on the same mesh.
#[derive(Debug, Clone)]
pub struct SplineModel {
    space: SplineSpace,
    constraints: ConstraintMatrix,
    null_basis: NullBasis,
    penalty: PenaltyMatrix,
    reduced_penalty: DMatrix<f64>,
}

impl SplineModel {
    pub fn new(mesh: &Triangulation, space: SplineSpace) -> Result<Self, PlmError> {
        let constraints = assemble_h(mesh, &space);
        let null_basis = nullspace(&constraints);
        let penalty = assemble_penalty(mesh, &space, 2)?;
        let reduced_penalty = penalty.project(&null_basis.q2);
        Ok(SplineModel { space, constraints, null_basis, penalty, reduced_penalty })
    }

    pub fn space(&self) -> &SplineSpace {
        &self.space
    }

    pub fn constraints(&self) -> &ConstraintMatrix {
        &self.constraints
    }

    pub fn null_basis(&self) -> &NullBasis {
        &self.null_basis
    }

    pub fn penalty(&self) -> &PenaltyMatrix {
        &self.penalty
    }

    /// Dimension of the constrained spline space, K - rank(H).
    pub fn reduced_dim(&self) -> usize {
        self.null_basis.dim()
    }
}

/// One dataset bound to a [`SplineModel`]: the response, covariates and the
/// reduced design E = B Q2 with its cached cross products.
pub struct PlmProblem<'m> {
    model: &'m SplineModel,
    eval: EvalMatrix,
    y: DVector<f64>,
    z: DMatrix<f64>,
    lambda_grid: Vec<f64>,
    // Cached cross products (lambda independent).
    e: DMatrix<f64>,   // n x m
    ete: DMatrix<f64>, // m x m
    etz: DMatrix<f64>, // m x p
    zty: DVector<f64>, // p
    ztz_chol: Option<Cholesky<f64, Dyn>>,
    /// C2 = E'(I - Z (Z'Z)^-1 Z')E, the U22 block at lambda = 0.
    c2: DMatrix<f64>,
    /// F' with F = Lz^-1 Z'E, so C2 = E'E - F'F.
    f_t: DMatrix<f64>,
    /// E'(I - Z (Z'Z)^-1 Z')Y, the right-hand side of the theta system.
    ety_proj: DVector<f64>,
}

/// Estimates at one fixed lambda.
#[derive(Debug, Clone)]
pub struct LambdaFit {
    pub lambda: f64,
    pub beta: DVector<f64>,
    pub theta: DVector<f64>,
    pub gamma: DVector<f64>,
    pub rss: f64,
    pub df: f64,
    pub gcv: f64,
}

/// Covariance output for the parametric part.
#[derive(Debug, Clone)]
pub struct Covariance {
    /// Sigma_n = (Z - Zhat)'(Z - Zhat) / (n sigma^2).
    pub sigma_n: DMatrix<f64>,
    pub se: DVector<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
}

/// Full fit summary at the GCV-selected lambda.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub degree: u32,
    pub smoothness: u32,
    pub beta_hat: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub gamma_hat: DVector<f64>,
    pub lambda: f64,
    pub sigma2_hat: f64,
    pub df: f64,
    pub sigma_n: DMatrix<f64>,
    pub se: DVector<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
    /// (lambda, GCV) over the whole grid; failed solves carry infinity.
    pub gcv_trace: Vec<(f64, f64)>,
}

struct Factors {
    /// Cholesky of U22^-1 = C2 + lambda G.
    u22_inv: Cholesky<f64, Dyn>,
}

impl<'m> PlmProblem<'m> {
    /// Assemble the problem: locate the points, build the reduced design and
    /// cache every lambda-independent cross product. `z` may have zero
    /// columns for pure smoothing.
    pub fn new(
        model: &'m SplineModel,
        mesh: &Triangulation,
        points: &[Point],
        z: DMatrix<f64>,
        y: DVector<f64>,
        lambda_grid: Vec<f64>,
    ) -> Result<Self, PlmError> {
        let n = points.len();
        let p = z.ncols();
        if y.len() != n {
            return Err(PlmError::DimensionMismatch(format!(
                "{} responses for {} points",
                y.len(),
                n
            )));
        }
        if p > 0 && z.nrows() != n {
            return Err(PlmError::DimensionMismatch(format!(
                "Z has {} rows for {} points",
                z.nrows(),
                n
            )));
        }
        if n <= p {
            return Err(PlmError::DimensionMismatch(format!(
                "need more observations ({n}) than covariates ({p})"
            )));
        }
        if lambda_grid.is_empty() {
            return Err(PlmError::EmptyGrid);
        }
        if let Some(&bad) = lambda_grid.iter().find(|&&l| !(l > 0.0)) {
            return Err(PlmError::NonPositiveLambda(bad));
        }

        let eval = assemble_eval_matrix(mesh, &model.space, points)?;
        let q2 = &model.null_basis.q2;
        let e = eval.mul_dense(q2);
        let ete = e.tr_mul(&e);
        let ety = e.tr_mul(&y);
        let etz = e.tr_mul(&z);
        let zty = z.tr_mul(&y);
        let ztz = z.tr_mul(&z);

        let (ztz_chol, c2, f_t, ety_proj) = if p > 0 {
            let chol = Cholesky::new(ztz.clone()).ok_or(PlmError::CollinearCovariates)?;
            // F = Lz^-1 Z'E, so that C2 = E'E - F'F.
            let mut zte = etz.transpose();
            chol.l_dirty().solve_lower_triangular_mut(&mut zte);
            let f_t = zte.transpose();
            let c2 = &ete - &f_t * f_t.transpose();
            let alpha = chol.solve(&zty);
            let ety_proj = &ety - &etz * alpha;
            (Some(chol), c2, f_t, ety_proj)
        } else {
            (None, ete.clone(), DMatrix::zeros(e.ncols(), 0), ety.clone())
        };

        Ok(PlmProblem {
            model,
            eval,
            y,
            z,
            lambda_grid,
            e,
            ete,
            etz,
            zty,
            ztz_chol,
            c2,
            f_t,
            ety_proj,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.z.ncols()
    }

    pub fn model(&self) -> &SplineModel {
        self.model
    }

    pub fn eval_matrix(&self) -> &EvalMatrix {
        &self.eval
    }

    pub fn lambda_grid(&self) -> &[f64] {
        &self.lambda_grid
    }

    fn factorize(&self, lambda: f64) -> Result<Factors, PlmError> {
        if !(lambda > 0.0) {
            return Err(PlmError::NonPositiveLambda(lambda));
        }
        let g = &self.model.reduced_penalty;
        let u22_inv = chol_with_jitter(&self.c2 + g * lambda, lambda)?;
        Ok(Factors { u22_inv })
    }

    /// Point estimates, residual sum of squares, degrees of freedom and GCV
    /// at a fixed lambda.
    pub fn solve_at(&self, lambda: f64) -> Result<LambdaFit, PlmError> {
        let factors = self.factorize(lambda)?;
        self.solve_with(&factors, lambda)
    }

    fn solve_with(&self, factors: &Factors, lambda: f64) -> Result<LambdaFit, PlmError> {
        let n = self.n();
        let p = self.p();

        // theta = U22 Q2'B'(I - Z (Z'Z)^-1 Z')Y.
        let theta = factors.u22_inv.solve(&self.ety_proj);

        // beta from the first block of the joint normal equations,
        // Z'Z beta = Z'(Y - E theta); identical to the U11 form but without
        // a second m x m factorization per lambda.
        let beta = match &self.ztz_chol {
            Some(chol) => chol.solve(&(&self.zty - self.etz.tr_mul(&theta))),
            None => DVector::zeros(0),
        };

        let gamma = &self.model.null_basis.q2 * &theta;
        let mut resid = self.y.clone() - &self.e * &theta;
        if p > 0 {
            resid -= &self.z * &beta;
        }
        let rss = resid.norm_squared();
        let df = self.trace_from(factors, lambda);
        let denom = n as f64 - df;
        let gcv =
            if denom > 1e-9 * n as f64 { n as f64 * rss / (denom * denom) } else { f64::INFINITY };
        Ok(LambdaFit { lambda, beta, theta, gamma, rss, df, gcv })
    }

    /// tr(S(lambda)) without forming any n x n matrix:
    /// tr(S) = tr(U11 U11^-1) + tr(U22 C2) = p + tr((C2 + lambda G)^-1 C2).
    pub fn hat_trace(&self, lambda: f64) -> Result<f64, PlmError> {
        let factors = self.factorize(lambda)?;
        Ok(self.trace_from(&factors, lambda))
    }

    fn trace_from(&self, factors: &Factors, lambda: f64) -> f64 {
        let m = self.e.ncols();
        let n = self.n();
        let p = self.p();
        let l = factors.u22_inv.l_dirty();

        let smooth_df = if n + p < m {
            // tr(A^-1 C2) = ||L^-1 E'||_F^2 - ||L^-1 F'||_F^2.
            let mut et = self.e.transpose();
            l.solve_lower_triangular_mut(&mut et);
            let mut t = et.norm_squared();
            if p > 0 {
                let mut ft = self.f_t.clone();
                l.solve_lower_triangular_mut(&mut ft);
                t -= ft.norm_squared();
            }
            t
        } else {
            // tr(A^-1 C2) = m - lambda tr(A^-1 G), and tr(A^-1 G) is the
            // trace of L^-1 (L^-1 G)' since G is symmetric.
            let mut x = self.model.reduced_penalty.clone();
            l.solve_lower_triangular_mut(&mut x);
            let mut xt = x.transpose();
            l.solve_lower_triangular_mut(&mut xt);
            m as f64 - lambda * xt.trace()
        };
        p as f64 + smooth_df
    }

    /// Error variance estimate rss / (n - df); requires df < n.
    pub fn sigma2(&self, fit: &LambdaFit) -> Result<f64, PlmError> {
        let n = self.n();
        if fit.df >= n as f64 {
            return Err(PlmError::DegreesOfFreedomExhausted { df: fit.df, n });
        }
        Ok(fit.rss / (n as f64 - fit.df))
    }

    /// Covariance of beta via Sigma_n: Zhat' = Z'E V22^-1 E', W = Z - Zhat,
    /// Var(beta) = sigma^2 (W'W)^-1, confidence level 95%.
    pub fn covariance(&self, fit: &LambdaFit, sigma2: f64) -> Result<Covariance, PlmError> {
        let p = self.p();
        if p == 0 {
            return Ok(Covariance {
                sigma_n: DMatrix::zeros(0, 0),
                se: DVector::zeros(0),
                ci_lower: DVector::zeros(0),
                ci_upper: DVector::zeros(0),
            });
        }
        let g = &self.model.reduced_penalty;
        let v22 = chol_with_jitter(&self.ete + g * fit.lambda, fit.lambda)?;
        let t = v22.solve(&self.etz); // m x p
        let zhat = &self.e * t; // n x p
        let w = &self.z - zhat;
        let wtw = w.tr_mul(&w);
        // A covariate explained by location leaves a residual that is zero
        // up to roundoff; its "standard error" would be pure noise.
        for j in 0..p {
            if wtw[(j, j)] <= 1e-10 * self.z.column(j).norm_squared() {
                return Err(PlmError::CovarianceSingular);
            }
        }
        let n = self.n() as f64;
        let sigma_n = &wtw / (n * sigma2);
        let chol = Cholesky::new(wtw).ok_or(PlmError::CovarianceSingular)?;
        let var = chol.inverse() * sigma2;
        let se = DVector::from_iterator(p, (0..p).map(|j| var[(j, j)].sqrt()));
        let ci_lower = &fit.beta - &se * Z_975;
        let ci_upper = &fit.beta + &se * Z_975;
        Ok(Covariance { sigma_n, se, ci_lower, ci_upper })
    }

    /// Fit over the whole lambda grid and keep the GCV minimizer (ties go to
    /// the smaller lambda). The returned result carries the full GCV trace,
    /// the variance estimate and the coefficient inference.
    pub fn gcv_select(&self) -> Result<FitResult, PlmError> {
        let mut grid = self.lambda_grid.clone();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut trace = Vec::with_capacity(grid.len());
        let mut best: Option<LambdaFit> = None;
        for &lambda in &grid {
            match self.solve_at(lambda) {
                Ok(fit) => {
                    trace.push((lambda, fit.gcv));
                    let better = match &best {
                        Some(b) => fit.gcv < b.gcv,
                        None => fit.gcv.is_finite(),
                    };
                    if better {
                        best = Some(fit);
                    }
                }
                Err(_) => trace.push((lambda, f64::INFINITY)),
            }
        }
        let fit = best.ok_or(PlmError::AllLambdasFailed)?;
        let sigma2 = self.sigma2(&fit)?;
        let cov = self.covariance(&fit, sigma2)?;
        Ok(FitResult {
            degree: self.model.space.degree(),
            smoothness: self.model.space.smoothness(),
            beta_hat: fit.beta,
            theta_hat: fit.theta,
            gamma_hat: fit.gamma,
            lambda: fit.lambda,
            sigma2_hat: sigma2,
            df: fit.df,
            sigma_n: cov.sigma_n,
            se: cov.se,
            ci_lower: cov.ci_lower,
            ci_upper: cov.ci_upper,
            gcv_trace: trace,
        })
    }
}

fn chol_with_jitter(mat: DMatrix<f64>, lambda: f64) -> Result<Cholesky<f64, Dyn>, PlmError> {
    let trace = mat.trace();
    let m = mat.nrows();
    match Cholesky::new(mat.clone()) {
        Some(c) => Ok(c),
        None => {
            let mut jittered = mat;
            let ridge = 1e-12 * trace / m as f64;
            for i in 0..m {
                jittered[(i, i)] += ridge;
            }
            Cholesky::new(jittered).ok_or(PlmError::SingularSystem { lambda })
        }
    }
}

/// Point predictions: g_hat alone and, when covariates are supplied,
/// y_hat = z'beta + g_hat. Points outside the mesh are flagged rather than
/// extrapolated.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub g_hat: Option<f64>,
    pub y_hat: Option<f64>,
}

pub fn predict(
    fit: &FitResult,
    mesh: &Triangulation,
    new_points: &[Point],
    new_z: Option<&DMatrix<f64>>,
) -> Result<Vec<Prediction>, PlmError> {
    let space = SplineSpace::new(fit.degree, fit.smoothness)?;
    let nb = space.block_size();
    if fit.gamma_hat.len() != space.dimension(mesh) {
        return Err(PlmError::DimensionMismatch(format!(
            "{} spline coefficients for a mesh needing {}",
            fit.gamma_hat.len(),
            space.dimension(mesh)
        )));
    }
    let p = fit.beta_hat.len();
    if let Some(z) = new_z {
        if z.nrows() != new_points.len() || z.ncols() != p {
            return Err(PlmError::DimensionMismatch(format!(
                "Z is {}x{}, expected {}x{}",
                z.nrows(),
                z.ncols(),
                new_points.len(),
                p
            )));
        }
    }
    Ok(new_points
        .iter()
        .enumerate()
        .map(|(i, &pt)| match mesh.locate(pt) {
            Some(hit) => {
                let local = &fit.gamma_hat.as_slice()[hit.triangle * nb..(hit.triangle + 1) * nb];
                let g = eval_patch(space.degree(), local, hit.weights);
                let zb = match new_z {
                    Some(z) => z.row(i).transpose().dot(&fit.beta_hat),
                    None => 0.0,
                };
                Prediction { g_hat: Some(g), y_hat: Some(g + zb) }
            }
            None => Prediction { g_hat: None, y_hat: None },
        })
        .collect())
}

impl FitResult {
    /// Plain-text serialization; floats use shortest round-trip formatting,
    /// so identical fits produce identical bytes.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = String::new();
        out.push_str("trisplm-fit 1\n");
        out.push_str(&format!("degree = {}\n", self.degree));
        out.push_str(&format!("smoothness = {}\n", self.smoothness));
        out.push_str(&format!("lambda = {}\n", self.lambda));
        out.push_str(&format!("sigma2_hat = {}\n", self.sigma2_hat));
        out.push_str(&format!("df = {}\n", self.df));
        out.push_str(&format!("beta_hat = {}\n", join(self.beta_hat.as_slice())));
        out.push_str(&format!("se = {}\n", join(self.se.as_slice())));
        out.push_str(&format!("ci_lower = {}\n", join(self.ci_lower.as_slice())));
        out.push_str(&format!("ci_upper = {}\n", join(self.ci_upper.as_slice())));
        let trace: Vec<f64> = self.gcv_trace.iter().flat_map(|&(l, g)| [l, g]).collect();
        out.push_str(&format!("gcv_trace = {}\n", join(&trace)));
        out.push_str(&format!("gamma_hat = {}\n", join(self.gamma_hat.as_slice())));
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PlmError> {
        let mut fields = std::collections::BTreeMap::new();
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| PlmError::Parse("empty file".into()))?;
        if !header.starts_with("trisplm-fit") {
            return Err(PlmError::Parse("missing fit header".into()));
        }
        for line in lines {
            if let Some((key, value)) = line.split_once('=') {
                fields.insert(key.trim().to_string(), value.trim().to_string());
            }
        }
        let get = |key: &str| {
            fields.get(key).ok_or_else(|| PlmError::Parse(format!("missing field {key}")))
        };
        let scalar = |key: &str| -> Result<f64, PlmError> {
            get(key)?.parse().map_err(|_| PlmError::Parse(format!("invalid number in {key}")))
        };
        let vector = |key: &str| -> Result<Vec<f64>, PlmError> {
            get(key)?
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| PlmError::Parse(format!("invalid number in {key}"))))
                .collect()
        };
        let trace_flat = vector("gcv_trace")?;
        if trace_flat.len() % 2 != 0 {
            return Err(PlmError::Parse("gcv_trace must hold (lambda, gcv) pairs".into()));
        }
        let beta = vector("beta_hat")?;
        Ok(FitResult {
            degree: scalar("degree")? as u32,
            smoothness: scalar("smoothness")? as u32,
            beta_hat: DVector::from_vec(beta),
            theta_hat: DVector::zeros(0),
            gamma_hat: DVector::from_vec(vector("gamma_hat")?),
            lambda: scalar("lambda")?,
            sigma2_hat: scalar("sigma2_hat")?,
            df: scalar("df")?,
            sigma_n: DMatrix::zeros(0, 0),
            se: DVector::from_vec(vector("se")?),
            ci_lower: DVector::from_vec(vector("ci_lower")?),
            ci_upper: DVector::from_vec(vector("ci_upper")?),
            gcv_trace: trace_flat.chunks(2).map(|c| (c[0], c[1])).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), PlmError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, PlmError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
