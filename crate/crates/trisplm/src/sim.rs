//! Simulation benchmarks: the horseshoe-domain study (example 1) and the
//! unit-square study with a Matern random field (example 2), with a
//! Monte-Carlo harness aggregating RMSE / SE / MSPE statistics.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::basis::{assemble_eval_matrix, EvalMatrix, SplineSpace};
use crate::matern::{FieldError, FieldSampler, MaternCovariance};
use crate::mesh::{Point, Triangulation};
use crate::plm::{default_lambda_grid, FitResult, PlmError, PlmProblem, SplineModel};

// Horseshoe geometry, following the soap-film smoothing test bed: the spine
// is the half circle of radius R_SPINE around the origin (x <= 0) extended
// by two horizontal arms of length ARM_LEN; the domain is the tube of half
// width HALF_WIDTH around the spine, with rounded caps at the arm ends.
pub const R_SPINE: f64 = 0.5;
pub const HALF_WIDTH: f64 = 0.4;
pub const ARM_LEN: f64 = 3.0;

/// Evaluation grid for example 1: 201 x 501 points on [-1, 4] x [-1, 1].
pub const GRID1_NX: usize = 501;
pub const GRID1_NY: usize = 201;

/// Evaluation grid for example 2: 101 x 101 points on the unit square.
pub const GRID2_N: usize = 101;

pub const BETA_TRUE: [f64; 2] = [-1.0, 1.0];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("replicate {replicate}: {source}")]
    Replicate {
        replicate: usize,
        #[source]
        source: PlmError,
    },
    #[error(transparent)]
    Fit(#[from] PlmError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("{failed} of {total} replicates failed (first: {first})")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Test surface on the horseshoe: arc length along the spine plus the
/// squared offset from it; `None` outside the domain.
pub fn horseshoe_test_function(x: f64, y: f64) -> Option<f64> {
    let q = std::f64::consts::FRAC_PI_2 * R_SPINE;
    let (along, off) = if x >= 0.0 {
        if y > 0.0 {
            (q + x, y - R_SPINE)
        } else {
            (-q - x, -R_SPINE - y)
        }
    } else {
        (-(y / x).atan() * R_SPINE, x.hypot(y) - R_SPINE)
    };
    let outside = off.abs() > HALF_WIDTH
        || (x > ARM_LEN && (x - ARM_LEN).powi(2) + off * off > HALF_WIDTH * HALF_WIDTH);
    if outside {
        None
    } else {
        Some(along + off * off)
    }
}

/// Structured horseshoe triangulation: cross sections with nodes at offsets
/// {-HALF_WIDTH, 0, +HALF_WIDTH} swept along the spine (`bend_segments`
/// angular steps around the bend, `arm_segments` steps per arm), plus
/// triangle fans closing the rounded caps.
pub fn horseshoe_mesh(
    bend_segments: usize,
    arm_segments: usize,
    cap_segments: usize,
) -> Triangulation {
    assert!(bend_segments >= 2 && arm_segments >= 1 && cap_segments >= 2);
    let radii = [R_SPINE - HALF_WIDTH, R_SPINE, R_SPINE + HALF_WIDTH];
    let mut vertices: Vec<Point> = Vec::new();

    // Bend stations, swept from angle pi/2 to 3 pi/2. The end directions are
    // written exactly so arm stations share those vertices bit for bit.
    let mut bend: Vec<[usize; 3]> = Vec::new();
    for i in 0..=bend_segments {
        let dir = if i == 0 {
            [0.0, 1.0]
        } else if i == bend_segments {
            [0.0, -1.0]
        } else {
            let phi = std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * i as f64 / bend_segments as f64;
            [phi.cos(), phi.sin()]
        };
        let mut ids = [0; 3];
        for (j, &r) in radii.iter().enumerate() {
            ids[j] = vertices.len();
            vertices.push(Point::new(r * dir[0], r * dir[1]));
        }
        bend.push(ids);
    }

    // Arm stations; station 0 reuses the bend end.
    let mut top = vec![bend[0]];
    let mut bot = vec![bend[bend_segments]];
    for i in 1..=arm_segments {
        let x = ARM_LEN * i as f64 / arm_segments as f64;
        for (arm, sign) in [(&mut top, 1.0), (&mut bot, -1.0)] {
            let mut ids = [0; 3];
            for (j, &r) in radii.iter().enumerate() {
                ids[j] = vertices.len();
                vertices.push(Point::new(x, sign * r));
            }
            arm.push(ids);
        }
    }

    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let quads = |stations: &[[usize; 3]], triangles: &mut Vec<[usize; 3]>| {
        for w in stations.windows(2) {
            for j in 0..2 {
                let (a, b, c, d) = (w[0][j], w[1][j], w[1][j + 1], w[0][j + 1]);
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
    };
    quads(&bend, &mut triangles);
    quads(&top, &mut triangles);
    quads(&bot, &mut triangles);

    // Caps: fans around (ARM_LEN, +-R_SPINE) from inner to outer rim.
    for (ids, sign) in [(top[arm_segments], 1.0), (bot[arm_segments], -1.0f64)] {
        let center = ids[1];
        let mut rim = vec![ids[0]];
        for i in 1..cap_segments {
            let theta = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * i as f64 / cap_segments as f64;
            rim.push(vertices.len());
            vertices.push(Point::new(
                ARM_LEN + HALF_WIDTH * theta.cos(),
                sign * (R_SPINE + HALF_WIDTH * theta.sin()),
            ));
        }
        rim.push(ids[2]);
        for w in rim.windows(2) {
            triangles.push([center, w[0], w[1]]);
        }
    }

    Triangulation::new(vertices, triangles).expect("horseshoe construction is conforming")
}

/// The horseshoe benchmark domain: its triangulation, the grid points inside
/// the domain (all of which locate inside the mesh), and the true surface
/// there. `full_grid` selects the 201 x 501 grid, otherwise a coarse 41 x
/// 101 grid for fast tests.
pub fn horseshoe_domain(full_grid: bool) -> (Triangulation, Vec<Point>, Vec<f64>) {
    let mesh = horseshoe_mesh(6, 7, 4);
    let (nx, ny) = if full_grid { (GRID1_NX, GRID1_NY) } else { (101, 41) };
    let mut points = Vec::new();
    let mut values = Vec::new();
    for iy in 0..ny {
        let y = -1.0 + 2.0 * iy as f64 / (ny - 1) as f64;
        for ix in 0..nx {
            let x = -1.0 + 5.0 * ix as f64 / (nx - 1) as f64;
            if let Some(g) = horseshoe_test_function(x, y) {
                if mesh.locate(Point::new(x, y)).is_some() {
                    points.push(Point::new(x, y));
                    values.push(g);
                }
            }
        }
    }
    (mesh, points, values)
}

/// True surface for example 2 on the unit square.
pub fn example2_test_function(x: f64, y: f64) -> f64 {
    5.0 * (2.0 * std::f64::consts::PI * (x * x + y * y)).sin()
}

/// Uniform triangle mesh of the unit square: (n-1)^2 cells, two triangles
/// each.
pub fn unit_square_grid_mesh(nodes_per_side: usize) -> Triangulation {
    let n = nodes_per_side;
    assert!(n >= 2);
    let mut vertices = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            vertices.push(Point::new(ix as f64 / (n - 1) as f64, iy as f64 / (n - 1) as f64));
        }
    }
    let mut triangles = Vec::new();
    for iy in 0..n - 1 {
        for ix in 0..n - 1 {
            let a = iy * n + ix;
            let b = a + 1;
            let c = a + n + 1;
            let d = a + n;
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    Triangulation::new(vertices, triangles).expect("structured grid is conforming")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Example {
    One,
    Two,
}

/// Benchmark meshes for example 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ex2Mesh {
    /// 8 triangles, 9 vertices.
    Triangles8,
    /// 32 triangles, 25 vertices.
    Triangles32,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub example: Example,
    /// Correlation knob between Z2 and location (0.0 or 0.7 in the study).
    pub rho: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub sigma_eps: f64,
    /// Matern field scale for example 2.
    pub sigma_xi: f64,
    /// Diagonal nugget for the field covariance factorization.
    pub nugget: f64,
    pub ex2_mesh: Ex2Mesh,
}

impl SimConfig {
    pub fn new(example: Example, rho: f64, seed: u64) -> Self {
        SimConfig {
            example,
            rho,
            n: 200,
            replicates: 100,
            seed,
            sigma_eps: 0.5,
            sigma_xi: 1.0,
            nugget: 1e-8,
            ex2_mesh: Ex2Mesh::Triangles32,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(SimError::Config(format!("rho = {} outside [0, 1]", self.rho)));
        }
        if self.n < 30 {
            return Err(SimError::Config(format!("n = {} below the minimum of 30", self.n)));
        }
        if self.replicates == 0 {
            return Err(SimError::Config("need at least one replicate".into()));
        }
        Ok(())
    }
}

/// One simulated dataset for example 1.
pub struct Dataset {
    pub points: Vec<Point>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub g_true: DVector<f64>,
    pub beta_true: [f64; 2],
}

fn draw_z2(rho: f64, x: Point, u: f64) -> f64 {
    (std::f64::consts::PI * (rho * (x.x * x.x + x.y * x.y) + (1.0 - rho) * u)).cos()
}

/// Shared state across example-1 replicates: mesh, constraint and penalty
/// setup, and the evaluation grid with its basis matrix.
pub struct Example1Context {
    pub mesh: Triangulation,
    pub model: SplineModel,
    pub grid_points: Vec<Point>,
    pub g_grid: Vec<f64>,
    grid_eval: EvalMatrix,
}

impl Example1Context {
    pub fn new(full_grid: bool) -> Result<Self, SimError> {
        let (mesh, grid_points, g_grid) = horseshoe_domain(full_grid);
        let model = SplineModel::new(&mesh, SplineSpace::default_space()).map_err(SimError::Fit)?;
        let grid_eval = assemble_eval_matrix(&mesh, model.space(), &grid_points)
            .map_err(|e| SimError::Fit(e.into()))?;
        Ok(Example1Context { mesh, model, grid_points, g_grid, grid_eval })
    }

    /// Locations drawn uniformly without replacement from the interior grid
    /// points; Z1 ~ U[-1,1], U ~ U[-1,1], Z2 = cos(pi (rho |x|^2 +
    /// (1 - rho) U)), Y = Z'beta + g + eps.
    pub fn generate(&self, config: &SimConfig, replicate: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(replicate as u64));
        let idx = rand::seq::index::sample(&mut rng, self.grid_points.len(), config.n);
        let points: Vec<Point> = idx.iter().map(|i| self.grid_points[i]).collect();
        let g_true = DVector::from_iterator(config.n, idx.iter().map(|i| self.g_grid[i]));
        let mut z = DMatrix::zeros(config.n, 2);
        let mut y = DVector::zeros(config.n);
        for i in 0..config.n {
            let z1: f64 = rng.gen_range(-1.0..1.0);
            let u: f64 = rng.gen_range(-1.0..1.0);
            let z2 = draw_z2(config.rho, points[i], u);
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * config.sigma_eps;
            z[(i, 0)] = z1;
            z[(i, 1)] = z2;
            y[i] = BETA_TRUE[0] * z1 + BETA_TRUE[1] * z2 + g_true[i] + eps;
        }
        Dataset { points, z, y, g_true, beta_true: BETA_TRUE }
    }
}

/// Shared state across example-2 replicates, including the factored grid
/// covariance of the Matern field (the expensive part, built once).
pub struct Example2Context {
    pub mesh: Triangulation,
    pub model: SplineModel,
    pub grid_points: Vec<Point>,
    pub g_grid: Vec<f64>,
    grid_eval: EvalMatrix,
    sampler: FieldSampler,
    covariance: MaternCovariance,
}

/// Grid-wide data of one example-2 replicate. Y is realized at every grid
/// point (signal, field and noise); the training rows are a subsample.
pub struct Example2Replicate {
    pub z_grid: DMatrix<f64>,
    pub y_grid: DVector<f64>,
    pub train: Vec<usize>,
}

impl Example2Context {
    pub fn new(mesh_choice: Ex2Mesh, sigma_xi: f64, nugget: f64) -> Result<Self, SimError> {
        let mesh = match mesh_choice {
            Ex2Mesh::Triangles8 => unit_square_grid_mesh(3),
            Ex2Mesh::Triangles32 => unit_square_grid_mesh(5),
        };
        let model = SplineModel::new(&mesh, SplineSpace::default_space()).map_err(SimError::Fit)?;
        let mut grid_points = Vec::with_capacity(GRID2_N * GRID2_N);
        for iy in 0..GRID2_N {
            for ix in 0..GRID2_N {
                grid_points.push(Point::new(
                    ix as f64 / (GRID2_N - 1) as f64,
                    iy as f64 / (GRID2_N - 1) as f64,
                ));
            }
        }
        let g_grid: Vec<f64> =
            grid_points.iter().map(|p| example2_test_function(p.x, p.y)).collect();
        let grid_eval = assemble_eval_matrix(&mesh, model.space(), &grid_points)
            .map_err(|e| SimError::Fit(e.into()))?;
        let covariance = MaternCovariance::new(sigma_xi * sigma_xi, 1.0, nugget);
        let sampler = FieldSampler::new(&grid_points, &covariance)?;
        Ok(Example2Context { mesh, model, grid_points, g_grid, grid_eval, sampler, covariance })
    }

    pub fn covariance(&self) -> &MaternCovariance {
        &self.covariance
    }

    pub fn generate(&self, config: &SimConfig, replicate: usize) -> Example2Replicate {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(replicate as u64));
        let m = self.grid_points.len();
        let xi = self.sampler.sample(&mut rng);
        let mut z_grid = DMatrix::zeros(m, 2);
        let mut y_grid = DVector::zeros(m);
        for i in 0..m {
            let z1: f64 = rng.gen_range(-1.0..1.0);
            let u: f64 = rng.gen_range(-1.0..1.0);
            let z2 = draw_z2(config.rho, self.grid_points[i], u);
            let eps: f64 = rng.sample::<f64, _>(StandardNormal) * config.sigma_eps;
            z_grid[(i, 0)] = z1;
            z_grid[(i, 1)] = z2;
            y_grid[i] = BETA_TRUE[0] * z1 + BETA_TRUE[1] * z2 + self.g_grid[i] + xi[i] + eps;
        }
        let train: Vec<usize> = rand::seq::index::sample(&mut rng, m, config.n).iter().collect();
        Example2Replicate { z_grid, y_grid, train }
    }
}

/// Aggregated Monte-Carlo report for one (example, rho) configuration.
#[derive(Debug, Clone)]
pub struct McReport {
    pub example: Example,
    pub rho: f64,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub rmse_beta: [f64; 2],
    pub rmse_sigma: f64,
    /// Root of the average squared prediction error, on the same scale as
    /// the RMSE columns of the benchmark tables. Example 1 measures g_hat
    /// against the true surface over the interior grid; example 2 measures
    /// y_hat against the realized Y over the full grid.
    pub mspe: f64,
    pub se_mc: [f64; 2],
    pub se_mean: [f64; 2],
    pub se_median: [f64; 2],
    pub se_mad: [f64; 2],
    /// Replicates whose 95% interval covered the true coefficient.
    pub ci_cover: [usize; 2],
    pub failures: usize,
    /// Field assumption documented in the report header (example 2).
    pub matern_note: Option<String>,
}

struct ReplicateOutcome {
    beta: [f64; 2],
    se: [f64; 2],
    sigma_hat: f64,
    cover: [bool; 2],
    mspe: f64,
}

fn summarize(fit: &FitResult, mspe: f64) -> ReplicateOutcome {
    ReplicateOutcome {
        beta: [fit.beta_hat[0], fit.beta_hat[1]],
        se: [fit.se[0], fit.se[1]],
        sigma_hat: fit.sigma2_hat.sqrt(),
        cover: [
            fit.ci_lower[0] <= BETA_TRUE[0] && BETA_TRUE[0] <= fit.ci_upper[0],
            fit.ci_lower[1] <= BETA_TRUE[1] && BETA_TRUE[1] <= fit.ci_upper[1],
        ],
        mspe,
    }
}

/// Linear-interpolation quantile of pre-sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn aggregate(
    config: &SimConfig,
    outcomes: Vec<Result<ReplicateOutcome, (usize, PlmError)>>,
    matern_note: Option<String>,
) -> Result<McReport, SimError> {
    let total = outcomes.len();
    let failures: Vec<&(usize, PlmError)> =
        outcomes.iter().filter_map(|r| r.as_ref().err()).collect();
    if failures.len() * 10 >= total {
        let first = &failures[0];
        return Err(SimError::TooManyFailures {
            failed: failures.len(),
            total,
            first: format!("replicate {}: {}", first.0, first.1),
        });
    }
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|r| r.as_ref().ok()).collect();
    let r = ok.len() as f64;

    let mut rmse_beta = [0.0; 2];
    let mut se_mc = [0.0; 2];
    let mut se_mean = [0.0; 2];
    let mut se_median = [0.0; 2];
    let mut se_mad = [0.0; 2];
    let mut ci_cover = [0usize; 2];
    for j in 0..2 {
        let betas: Vec<f64> = ok.iter().map(|o| o.beta[j]).collect();
        let ses: Vec<f64> = ok.iter().map(|o| o.se[j]).collect();
        rmse_beta[j] = (betas.iter().map(|b| (b - BETA_TRUE[j]).powi(2)).sum::<f64>() / r).sqrt();
        let mean = betas.iter().sum::<f64>() / r;
        se_mc[j] = if ok.len() > 1 {
            (betas.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
        } else {
            0.0
        };
        se_mean[j] = ses.iter().sum::<f64>() / r;
        let mut sorted = ses;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        se_median[j] = quantile(&sorted, 0.5);
        se_mad[j] = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.349;
        ci_cover[j] = ok.iter().filter(|o| o.cover[j]).count();
    }
    let rmse_sigma =
        (ok.iter().map(|o| (o.sigma_hat - config.sigma_eps).powi(2)).sum::<f64>() / r).sqrt();
    let mspe = (ok.iter().map(|o| o.mspe).sum::<f64>() / r).sqrt();

    Ok(McReport {
        example: config.example,
        rho: config.rho,
        n: config.n,
        replicates: config.replicates,
        seed: config.seed,
        rmse_beta,
        rmse_sigma,
        mspe,
        se_mc,
        se_mean,
        se_median,
        se_mad,
        ci_cover,
        failures: failures.len(),
        matern_note,
    })
}

fn check_sample_size(n: usize, available: usize) -> Result<(), SimError> {
    if n > available {
        return Err(SimError::Config(format!(
            "n = {n} exceeds the {available} interior grid points"
        )));
    }
    Ok(())
}

/// Example-1 Monte Carlo with a prebuilt context. Replicates are
/// independent; failures are tolerated up to 10% and reported.
pub fn run_mc_example1(ctx: &Example1Context, config: &SimConfig) -> Result<McReport, SimError> {
    config.validate()?;
    check_sample_size(config.n, ctx.grid_points.len())?;
    let outcomes: Vec<Result<ReplicateOutcome, (usize, PlmError)>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let data = ctx.generate(config, rep);
            let run = || -> Result<ReplicateOutcome, PlmError> {
                let problem = PlmProblem::new(
                    &ctx.model,
                    &ctx.mesh,
                    &data.points,
                    data.z.clone(),
                    data.y.clone(),
                    default_lambda_grid(),
                )?;
                let fit = problem.gcv_select()?;
                let g_hat = ctx.grid_eval.mul_vec(&fit.gamma_hat);
                let mspe = ctx
                    .g_grid
                    .iter()
                    .zip(g_hat.iter())
                    .map(|(t, e)| (t - e) * (t - e))
                    .sum::<f64>()
                    / ctx.g_grid.len() as f64;
                Ok(summarize(&fit, mspe))
            };
            run().map_err(|e| (rep, e))
        })
        .collect();
    aggregate(config, outcomes, None)
}

/// Example-2 Monte Carlo with a prebuilt context.
pub fn run_mc_example2(ctx: &Example2Context, config: &SimConfig) -> Result<McReport, SimError> {
    config.validate()?;
    check_sample_size(config.n, ctx.grid_points.len())?;
    let outcomes: Vec<Result<ReplicateOutcome, (usize, PlmError)>> = (0..config.replicates)
        .into_par_iter()
        .map(|rep| {
            let data = ctx.generate(config, rep);
            let run = || -> Result<ReplicateOutcome, PlmError> {
                let points: Vec<Point> = data.train.iter().map(|&i| ctx.grid_points[i]).collect();
                let z = DMatrix::from_fn(points.len(), 2, |r, c| data.z_grid[(data.train[r], c)]);
                let y = DVector::from_iterator(
                    points.len(),
                    data.train.iter().map(|&i| data.y_grid[i]),
                );
                let problem =
                    PlmProblem::new(&ctx.model, &ctx.mesh, &points, z, y, default_lambda_grid())?;
                let fit = problem.gcv_select()?;
                let g_hat = ctx.grid_eval.mul_vec(&fit.gamma_hat);
                let y_hat = &data.z_grid * &fit.beta_hat + g_hat;
                let mspe = (&data.y_grid - y_hat).norm_squared() / data.y_grid.len() as f64;
                Ok(summarize(&fit, mspe))
            };
            run().map_err(|e| (rep, e))
        })
        .collect();
    let note = format!(
        "matern nu=1 range=1 variance={} nugget={}",
        config.sigma_xi * config.sigma_xi,
        config.nugget
    );
    aggregate(config, outcomes, Some(note))
}

/// Build the context for `config` and run the Monte Carlo.
pub fn run_mc(config: &SimConfig) -> Result<McReport, SimError> {
    config.validate()?;
    match config.example {
        Example::One => {
            let ctx = Example1Context::new(true)?;
            run_mc_example1(&ctx, config)
        }
        Example::Two => {
            let ctx = Example2Context::new(config.ex2_mesh, config.sigma_xi, config.nugget)?;
            run_mc_example2(&ctx, config)
        }
    }
}

impl McReport {
    /// CSV report: one row per statistic, preceded by comment lines pinning
    /// the configuration (and the field assumption for example 2).
    pub fn to_csv(&self) -> String {
        let example = match self.example {
            Example::One => 1,
            Example::Two => 2,
        };
        let mut out = String::new();
        out.push_str("# trisplm simulation report\n");
        out.push_str(&format!(
            "# example={} rho={} n={} replicates={} seed={} failures={}\n",
            example, self.rho, self.n, self.replicates, self.seed, self.failures
        ));
        if let Some(note) = &self.matern_note {
            out.push_str(&format!("# {note}\n"));
        }
        out.push_str("example,rho,method,statistic,value\n");
        {
            let mut row = |stat: &str, value: f64| {
                out.push_str(&format!("{},{},BPST,{},{}\n", example, self.rho, stat, value));
            };
            row("rmse_beta1", self.rmse_beta[0]);
            row("rmse_beta2", self.rmse_beta[1]);
            row("rmse_sigma", self.rmse_sigma);
            match self.example {
                Example::One => row("mspe_g", self.mspe),
                Example::Two => row("mspe_y", self.mspe),
            }
            for j in 0..2 {
                let tag = j + 1;
                row(&format!("se_mc_beta{tag}"), self.se_mc[j]);
                row(&format!("se_mean_beta{tag}"), self.se_mean[j]);
                row(&format!("se_median_beta{tag}"), self.se_median[j]);
                row(&format!("se_mad_beta{tag}"), self.se_mad[j]);
                row(&format!("ci_cover_beta{tag}"), self.ci_cover[j] as f64);
            }
        }
        out
    }
}

/// Grid predictions of replicate 0, for contour plotting: "x,y,g_hat" for
/// example 1, "x,y,g_hat,y_hat" for example 2.
pub fn grid_predictions_csv(config: &SimConfig) -> Result<String, SimError> {
    config.validate()?;
    let wrap = |e: PlmError| SimError::Replicate { replicate: 0, source: e };
    let mut out = String::new();
    match config.example {
        Example::One => {
            let ctx = Example1Context::new(true)?;
            let data = ctx.generate(config, 0);
            let problem = PlmProblem::new(
                &ctx.model,
                &ctx.mesh,
                &data.points,
                data.z,
                data.y,
                default_lambda_grid(),
            )
            .map_err(wrap)?;
            let fit = problem.gcv_select().map_err(wrap)?;
            let g_hat = ctx.grid_eval.mul_vec(&fit.gamma_hat);
            out.push_str("x,y,g_hat\n");
            for (p, g) in ctx.grid_points.iter().zip(g_hat.iter()) {
                out.push_str(&format!("{},{},{}\n", p.x, p.y, g));
            }
        }
        Example::Two => {
            let ctx = Example2Context::new(config.ex2_mesh, config.sigma_xi, config.nugget)?;
            let data = ctx.generate(config, 0);
            let points: Vec<Point> = data.train.iter().map(|&i| ctx.grid_points[i]).collect();
            let z = DMatrix::from_fn(points.len(), 2, |r, c| data.z_grid[(data.train[r], c)]);
            let y =
                DVector::from_iterator(points.len(), data.train.iter().map(|&i| data.y_grid[i]));
            let problem =
                PlmProblem::new(&ctx.model, &ctx.mesh, &points, z, y, default_lambda_grid())
                    .map_err(wrap)?;
            let fit = problem.gcv_select().map_err(wrap)?;
            let g_hat = ctx.grid_eval.mul_vec(&fit.gamma_hat);
            let y_hat = &data.z_grid * &fit.beta_hat + &g_hat;
            out.push_str("x,y,g_hat,y_hat\n");
            for ((p, g), yh) in ctx.grid_points.iter().zip(g_hat.iter()).zip(y_hat.iter()) {
                out.push_str(&format!("{},{},{},{}\n", p.x, p.y, g, yh));
            }
        }
    }
    Ok(out)
}
