//! Command-line front end: mesh tooling, model fitting, prediction, the
//! simulation benchmarks and the housing study.
//!
//! Exit codes: 0 success, 2 mesh validation failure, 3 data outside the
//! mesh, 64 usage error, 1 anything else.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};

use trisplm::basis::{BasisError, SplineSpace};
use trisplm::housing;
use trisplm::mesh::{MeshError, Point, Triangulation};
use trisplm::plm::{self, FitResult, PlmError, PlmProblem, SplineModel};
use trisplm::sim::{self, Ex2Mesh, Example, SimConfig};

const EXIT_OK: u8 = 0;
const EXIT_FAILURE: u8 = 1;
const EXIT_MESH_INVALID: u8 = 2;
const EXIT_OUTSIDE: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "trisplm",
    version,
    about = "Partially linear models with penalized bivariate splines over triangulations"
)]
struct Cli {
    /// Worker cap for parallel sections (lambda grid, replicates, folds).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate, refine and measure a triangulation file.
    Mesh(MeshArgs),
    /// Fit the partially linear model to a data CSV.
    Fit(FitArgs),
    /// Evaluate a stored fit at new points.
    Predict(PredictArgs),
    /// Run a simulation benchmark and emit its report CSV.
    Simulate(SimulateArgs),
    /// California housing study: coefficients and optional k-fold CV.
    Housing(HousingArgs),
}

#[derive(Args)]
struct MeshArgs {
    /// Input mesh file.
    input: PathBuf,
    /// Output mesh file (required with --refine).
    output: Option<PathBuf>,
    /// Number of uniform refinement passes.
    #[arg(long, default_value_t = 0)]
    refine: usize,
    /// Print triangle count, mesh size and shape parameter.
    #[arg(long)]
    quality: bool,
}

#[derive(Args)]
struct FitArgs {
    /// Data CSV with header columns x1,x2[,z1..zp],y.
    #[arg(long)]
    data: PathBuf,
    /// Mesh file for the spatial domain.
    #[arg(long)]
    mesh: PathBuf,
    /// Where to write the fit file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    degree: u32,
    #[arg(long, default_value_t = 1)]
    smoothness: u32,
    /// Smoothing grid as log10 lo:hi:count (default -6:7:10).
    #[arg(long, value_parser = parse_lambda_grid, allow_hyphen_values = true)]
    lambda_grid: Option<LambdaGrid>,
}

#[derive(Args)]
struct PredictArgs {
    /// Fit file produced by `fit`.
    #[arg(long)]
    fit: PathBuf,
    /// Mesh file the fit was computed on.
    #[arg(long)]
    mesh: PathBuf,
    /// Points CSV with header columns x1,x2[,z1..zp].
    #[arg(long)]
    points: PathBuf,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Benchmark example: 1 (horseshoe) or 2 (unit square with a random
    /// field).
    #[arg(long)]
    example: u8,
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Seed (falls back to TRISPLM_SEED, then 1).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 0.5)]
    sigma_eps: f64,
    /// Example-2 mesh: 8 or 32 triangles.
    #[arg(long, default_value_t = 32)]
    ex2_mesh: usize,
    /// Report CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write replicate-0 grid predictions for contour plotting.
    #[arg(long)]
    grid_out: Option<PathBuf>,
}

#[derive(Args)]
struct HousingArgs {
    /// Housing CSV (StatLib cadata layout with headers).
    #[arg(long)]
    data: PathBuf,
    /// Mesh file; when omitted, the built-in California mesh is used.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Refinement passes for the built-in California mesh.
    #[arg(long, default_value_t = 2)]
    refine: usize,
    /// Run k-fold cross validation after the full fit.
    #[arg(long)]
    cv: bool,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    degree: u32,
    #[arg(long, default_value_t = 1)]
    smoothness: u32,
}

#[derive(Clone)]
struct LambdaGrid(Vec<f64>);

fn parse_lambda_grid(s: &str) -> Result<LambdaGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err("expected log10 grid as lo:hi:count".into());
    }
    let lo: f64 = parts[0].parse().map_err(|_| "invalid lo".to_string())?;
    let hi: f64 = parts[1].parse().map_err(|_| "invalid hi".to_string())?;
    let count: usize = parts[2].parse().map_err(|_| "invalid count".to_string())?;
    if count == 0 {
        return Err("count must be at least 1".into());
    }
    if count == 1 {
        return Ok(LambdaGrid(vec![10f64.powf(lo)]));
    }
    Ok(LambdaGrid(
        (0..count).map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64)).collect(),
    ))
}

fn env_seed() -> u64 {
    std::env::var("TRISPLM_SEED").ok().and_then(|s| s.parse().ok()).unwrap_or(1)
}

fn main() -> ExitCode {
    // Dying quietly on a closed pipe (e.g. ` | head`) is the expected
    // behavior for a line-oriented tool.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(threads) = cli.parallelism {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    let code = match cli.command {
        Command::Mesh(args) => cmd_mesh(args),
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Housing(args) => cmd_housing(args),
    };
    match code {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[derive(Debug)]
struct CliError {
    message: String,
    code: u8,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        self.code
    }

    fn usage(msg: impl Into<String>) -> Self {
        CliError { message: msg.into(), code: EXIT_USAGE }
    }

    fn other(msg: impl std::fmt::Display) -> Self {
        CliError { message: msg.to_string(), code: EXIT_FAILURE }
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        let code = match e {
            MeshError::Io(_) | MeshError::Parse { .. } => EXIT_FAILURE,
            _ => EXIT_MESH_INVALID,
        };
        CliError { message: e.to_string(), code }
    }
}

impl From<PlmError> for CliError {
    fn from(e: PlmError) -> Self {
        let code = match e {
            PlmError::Basis(BasisError::PointsOutside { .. }) => EXIT_OUTSIDE,
            _ => EXIT_FAILURE,
        };
        CliError { message: e.to_string(), code }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::other(e)
    }
}

fn cmd_mesh(args: MeshArgs) -> Result<(), CliError> {
    let mut mesh = Triangulation::load(&args.input)?;
    for _ in 0..args.refine {
        mesh = mesh.refine();
    }
    if args.quality {
        let q = mesh.quality()?;
        println!("triangles = {}", q.triangle_count);
        println!("mesh_size = {}", q.mesh_size);
        println!("shape_param = {}", q.shape_param);
    }
    if let Some(out) = &args.output {
        mesh.save(out)?;
        println!("wrote {} triangles to {}", mesh.triangle_count(), out.display());
    } else if args.refine > 0 {
        return Err(CliError::usage("--refine needs an output path"));
    }
    Ok(())
}

/// Parse a data CSV with header x1,x2[,z1..zp][,y]; returns points, the
/// z block, and y when present.
fn read_data_csv(
    path: &PathBuf,
    need_y: bool,
) -> Result<(Vec<Point>, DMatrix<f64>, Option<DVector<f64>>), CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| CliError::other("empty data file"))?;
    let names: Vec<String> = header.split(',').map(|s| s.trim().to_ascii_lowercase()).collect();
    let col = |name: &str| names.iter().position(|n| n == name);
    let cx1 = col("x1").ok_or_else(|| CliError::usage("missing column x1"))?;
    let cx2 = col("x2").ok_or_else(|| CliError::usage("missing column x2"))?;
    let cy = col("y");
    if need_y && cy.is_none() {
        return Err(CliError::usage("missing column y"));
    }
    let mut zcols = Vec::new();
    for p in 1.. {
        match col(&format!("z{p}")) {
            Some(c) => zcols.push(c),
            None => break,
        }
    }

    let mut points = Vec::new();
    let mut zrows: Vec<Vec<f64>> = Vec::new();
    let mut yvals = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        let get = |c: usize| -> Result<f64, CliError> {
            fields
                .get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| CliError::other(format!("data row {}: bad field", i + 2)))
        };
        points.push(Point::new(get(cx1)?, get(cx2)?));
        zrows.push(zcols.iter().map(|&c| get(c)).collect::<Result<_, _>>()?);
        if let Some(cy) = cy {
            yvals.push(get(cy)?);
        }
    }
    let n = points.len();
    let p = zcols.len();
    let z = DMatrix::from_fn(n, p, |r, c| zrows[r][c]);
    let y = cy.map(|_| DVector::from_vec(yvals));
    Ok((points, z, y))
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let mesh = Triangulation::load(&args.mesh)?;
    let (points, z, y) = read_data_csv(&args.data, true)?;
    let y = y.expect("y required");
    let space = SplineSpace::new(args.degree, args.smoothness).map_err(PlmError::from)?;
    let model = SplineModel::new(&mesh, space)?;
    let grid = args.lambda_grid.map(|g| g.0).unwrap_or_else(plm::default_lambda_grid);
    let p = z.ncols();
    let problem = PlmProblem::new(&model, &mesh, &points, z, y, grid)?;
    let fit = problem.gcv_select()?;

    println!(
        "n = {}, p = {}, K = {}, reduced dim = {}",
        points.len(),
        p,
        model.space().dimension(&mesh),
        model.reduced_dim()
    );
    println!("lambda = {}", fit.lambda);
    println!("df = {}", fit.df);
    println!("sigma2_hat = {}", fit.sigma2_hat);
    for j in 0..fit.beta_hat.len() {
        println!(
            "beta[{}] = {} (se = {}, 95% CI = [{}, {}])",
            j + 1,
            fit.beta_hat[j],
            fit.se[j],
            fit.ci_lower[j],
            fit.ci_upper[j]
        );
    }
    if let Some(out) = &args.out {
        fit.save(out).map_err(CliError::from)?;
        println!("wrote fit to {}", out.display());
    }
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), CliError> {
    let mesh = Triangulation::load(&args.mesh)?;
    let fit = FitResult::load(&args.fit)?;
    let (points, z, _) = read_data_csv(&args.points, false)?;
    let p = fit.beta_hat.len();
    let z_opt = if p == 0 {
        None
    } else if z.ncols() == p {
        Some(&z)
    } else if z.ncols() == 0 {
        None
    } else {
        return Err(CliError::usage(format!(
            "points file has {} z columns, fit expects {} (or none)",
            z.ncols(),
            p
        )));
    };
    let preds = plm::predict(&fit, &mesh, &points, z_opt)?;
    let mut out = String::from("x,y,g_hat,y_hat,status\n");
    for (pt, pred) in points.iter().zip(&preds) {
        match (pred.g_hat, pred.y_hat) {
            (Some(g), Some(yh)) => {
                out.push_str(&format!("{},{},{},{},inside\n", pt.x, pt.y, g, yh))
            }
            _ => out.push_str(&format!("{},{},,,outside\n", pt.x, pt.y)),
        }
    }
    match &args.out {
        Some(path) => std::fs::write(path, out)?,
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let example = match args.example {
        1 => Example::One,
        2 => Example::Two,
        other => return Err(CliError::usage(format!("unknown example {other}"))),
    };
    let ex2_mesh = match args.ex2_mesh {
        8 => Ex2Mesh::Triangles8,
        32 => Ex2Mesh::Triangles32,
        other => return Err(CliError::usage(format!("ex2-mesh must be 8 or 32, got {other}"))),
    };
    let mut config = SimConfig::new(example, args.rho, args.seed.unwrap_or_else(env_seed));
    config.replicates = args.replicates;
    config.n = args.n;
    config.sigma_eps = args.sigma_eps;
    config.ex2_mesh = ex2_mesh;

    let report = sim::run_mc(&config).map_err(CliError::other)?;
    let csv = report.to_csv();
    match &args.out {
        Some(path) => std::fs::write(path, &csv)?,
        None => print!("{csv}"),
    }
    if let Some(path) = &args.grid_out {
        let grid = sim::grid_predictions_csv(&config).map_err(CliError::other)?;
        std::fs::write(path, grid)?;
    }
    Ok(())
}

fn cmd_housing(args: HousingArgs) -> Result<(), CliError> {
    let (records, dropped) = housing::load_housing(&args.data).map_err(CliError::other)?;
    println!("records = {}, dropped = {}", records.len(), dropped);
    let mesh = match &args.mesh {
        Some(path) => Triangulation::load(path)?,
        None => housing::california_mesh(args.refine),
    };
    println!("mesh triangles = {}", mesh.triangle_count());
    let space = SplineSpace::new(args.degree, args.smoothness).map_err(PlmError::from)?;
    let model = SplineModel::new(&mesh, space)?;

    let (fit, design) = housing::fit_full(&records, &mesh, &model).map_err(CliError::other)?;
    println!("in-mesh records = {}, excluded = {}", design.points.len(), design.excluded);
    println!("lambda = {}, df = {}, sigma2_hat = {}", fit.lambda, fit.df, fit.sigma2_hat);
    for (j, name) in housing::COVARIATE_NAMES.iter().enumerate() {
        println!(
            "{name}: {:.4} (se = {:.4}, 95% CI = [{:.4}, {:.4}])",
            fit.beta_hat[j], fit.se[j], fit.ci_lower[j], fit.ci_upper[j]
        );
    }

    if args.cv {
        let report = housing::kfold_cv(
            &records,
            &mesh,
            &model,
            args.folds,
            args.seed.unwrap_or_else(env_seed),
        )
        .map_err(CliError::other)?;
        for (k, (m, b)) in report.fold_mspe.iter().zip(&report.baseline_fold_mspe).enumerate() {
            println!("fold {}: mspe = {:.4} (baseline {:.4})", k + 1, m, b);
        }
        println!(
            "mean mspe = {:.4} (baseline {:.4}, skipped predictions = {})",
            report.mean_mspe, report.baseline_mean_mspe, report.skipped_predictions
        );
    }
    Ok(())
}
