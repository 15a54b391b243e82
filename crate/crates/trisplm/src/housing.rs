//! California house-value study: data ingestion, the semiparametric model
//! log(Value) = Z'beta + g(Longitude, Latitude), and 5-fold cross-validated
//! prediction error against a covariates-only least-squares baseline.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{Point, Triangulation};
use crate::plm::{default_lambda_grid, FitResult, PlmError, PlmProblem, SplineModel};

#[derive(Debug, Error)]
pub enum HousingError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column {0} in the housing CSV header")]
    MissingColumn(&'static str),
    #[error("line {line}: {msg}")]
    BadRow { line: usize, msg: String },
    #[error("no usable records")]
    Empty,
    #[error("k = {0} folds out of range (2..=20)")]
    BadFoldCount(usize),
    #[error("fold {fold}: {source}")]
    FoldFit {
        fold: usize,
        #[source]
        source: PlmError,
    },
    #[error(transparent)]
    Fit(#[from] PlmError),
}

/// One census block group, with derived per-household averages.
#[derive(Debug, Clone, Copy)]
pub struct HousingRecord {
    pub longitude: f64,
    pub latitude: f64,
    pub med_value: f64,
    pub med_income: f64,
    pub age: f64,
    pub ave_bedrms: f64,
    pub ave_occup: f64,
    pub households: f64,
}

/// Loose bounding box around California (degrees), used for record
/// validation.
const LON_RANGE: (f64, f64) = (-125.5, -113.5);
const LAT_RANGE: (f64, f64) = (31.5, 42.5);

/// Parse the housing CSV. Columns are located by header name
/// (longitude, latitude, medianHouseValue, medianIncome, housingMedianAge,
/// totalBedrooms, households, population); averages are derived per
/// household. Rows where a logarithm would be undefined, or with
/// coordinates outside California, are dropped and counted.
pub fn parse_housing(text: &str) -> Result<(Vec<HousingRecord>, usize), HousingError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(HousingError::Empty)?;
    let names: Vec<&str> = header.split(',').map(|s| s.trim()).collect();
    let find = |name: &'static str| -> Result<usize, HousingError> {
        names
            .iter()
            .position(|&n| n.eq_ignore_ascii_case(name))
            .ok_or(HousingError::MissingColumn(name))
    };
    let c_lon = find("longitude")?;
    let c_lat = find("latitude")?;
    let c_value = find("medianHouseValue")?;
    let c_income = find("medianIncome")?;
    let c_age = find("housingMedianAge")?;
    let c_bedrms = find("totalBedrooms")?;
    let c_households = find("households")?;
    let c_population = find("population")?;

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(|s| s.trim()).collect();
        let get = |c: usize| -> Result<f64, HousingError> {
            fields
                .get(c)
                .ok_or_else(|| HousingError::BadRow { line: i + 1, msg: "too few fields".into() })?
                .parse()
                .map_err(|_| HousingError::BadRow {
                    line: i + 1,
                    msg: format!("invalid number {:?}", fields[c]),
                })
        };
        let longitude = get(c_lon)?;
        let latitude = get(c_lat)?;
        let med_value = get(c_value)?;
        let med_income = get(c_income)?;
        let age = get(c_age)?;
        let total_bedrms = get(c_bedrms)?;
        let households = get(c_households)?;
        let population = get(c_population)?;

        let positive = med_value > 0.0
            && age > 0.0
            && total_bedrms > 0.0
            && households > 0.0
            && population > 0.0;
        let in_box = (LON_RANGE.0..=LON_RANGE.1).contains(&longitude)
            && (LAT_RANGE.0..=LAT_RANGE.1).contains(&latitude);
        if !positive || !in_box {
            dropped += 1;
            continue;
        }
        records.push(HousingRecord {
            longitude,
            latitude,
            med_value,
            med_income,
            age,
            ave_bedrms: total_bedrms / households,
            ave_occup: population / households,
            households,
        });
    }
    if records.is_empty() {
        return Err(HousingError::Empty);
    }
    Ok((records, dropped))
}

pub fn load_housing(
    path: impl AsRef<std::path::Path>,
) -> Result<(Vec<HousingRecord>, usize), HousingError> {
    parse_housing(&std::fs::read_to_string(path)?)
}

/// Coarse California boundary polygon (longitude, latitude), drawn with a
/// margin so every block group, offshore islands included, falls inside.
const CALIFORNIA_POLYGON: [(f64, f64); 11] = [
    (-113.9, 32.4), // southeast corner
    (-113.9, 35.1), // east side along the river
    (-119.7, 39.1), // Nevada diagonal
    (-119.7, 42.2), // northeast
    (-124.8, 42.2), // northwest
    (-124.8, 39.5), // north coast
    (-123.5, 37.6), // off San Francisco
    (-122.3, 36.0), // off Monterey
    (-121.3, 34.3), // off Point Conception
    (-119.5, 32.9), // south of the Channel Islands
    (-117.6, 32.2), // off San Diego
];

const CALIFORNIA_TRIANGLES: [[usize; 3]; 9] = [
    [0, 1, 10],
    [1, 9, 10],
    [1, 8, 9],
    [1, 2, 8],
    [2, 7, 8],
    [2, 6, 7],
    [2, 5, 6],
    [2, 3, 5],
    [3, 4, 5],
];

/// Triangulation of the California polygon, uniformly refined `refine`
/// times (9 * 4^refine triangles; the study default refine = 2 gives 144).
pub fn california_mesh(refine: usize) -> Triangulation {
    let vertices = CALIFORNIA_POLYGON.iter().map(|&(lon, lat)| Point::new(lon, lat)).collect();
    let mut mesh = Triangulation::new(vertices, CALIFORNIA_TRIANGLES.to_vec())
        .expect("California polygon triangulation is conforming");
    for _ in 0..refine {
        mesh = mesh.refine();
    }
    mesh
}

/// Design pieces for the semiparametric model. Column order:
/// [MedInc, log Age, log AveBedrms, log AveOccup, log Hhd]; the response is
/// log(Value); no intercept column (any constant is absorbed into g).
pub struct HousingDesign {
    pub points: Vec<Point>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Records excluded because they fall outside the mesh.
    pub excluded: usize,
}

pub const COVARIATE_NAMES: [&str; 5] =
    ["MedInc", "log(Age)", "log(AveBedrms)", "log(AveOccup)", "log(Hhd)"];

pub fn build_design(records: &[HousingRecord], mesh: &Triangulation) -> HousingDesign {
    let mut kept = Vec::with_capacity(records.len());
    let mut excluded = 0usize;
    for rec in records {
        let p = Point::new(rec.longitude, rec.latitude);
        if mesh.locate(p).is_some() {
            kept.push((p, rec));
        } else {
            excluded += 1;
        }
    }
    let n = kept.len();
    let mut z = DMatrix::zeros(n, 5);
    let mut y = DVector::zeros(n);
    let mut points = Vec::with_capacity(n);
    for (i, (p, rec)) in kept.into_iter().enumerate() {
        points.push(p);
        z[(i, 0)] = rec.med_income;
        z[(i, 1)] = rec.age.ln();
        z[(i, 2)] = rec.ave_bedrms.ln();
        z[(i, 3)] = rec.ave_occup.ln();
        z[(i, 4)] = rec.households.ln();
        y[i] = rec.med_value.ln();
    }
    HousingDesign { points, z, y, excluded }
}

/// Fit the full semiparametric model on all records inside the mesh.
pub fn fit_full(
    records: &[HousingRecord],
    mesh: &Triangulation,
    model: &SplineModel,
) -> Result<(FitResult, HousingDesign), HousingError> {
    let design = build_design(records, mesh);
    let problem = PlmProblem::new(
        model,
        mesh,
        &design.points,
        design.z.clone(),
        design.y.clone(),
        default_lambda_grid(),
    )?;
    let fit = problem.gcv_select()?;
    Ok((fit, design))
}

/// 5-fold CV report: per-fold and mean squared prediction error of
/// log(Value), for the semiparametric model and for the covariates-only
/// least-squares baseline on the same folds.
#[derive(Debug, Clone)]
pub struct CvReport {
    pub fold_mspe: Vec<f64>,
    pub mean_mspe: f64,
    pub baseline_fold_mspe: Vec<f64>,
    pub baseline_mean_mspe: f64,
    /// Held-out points outside the training mesh (excluded, counted).
    pub skipped_predictions: usize,
}

/// Seeded k-fold cross validation. Folds partition the in-mesh records
/// exactly; each fold is predicted from a fit on the others.
pub fn kfold_cv(
    records: &[HousingRecord],
    mesh: &Triangulation,
    model: &SplineModel,
    k: usize,
    seed: u64,
) -> Result<CvReport, HousingError> {
    if !(2..=20).contains(&k) {
        return Err(HousingError::BadFoldCount(k));
    }
    let design = build_design(records, mesh);
    let n = design.points.len();
    if n < k {
        return Err(HousingError::Empty);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let fold_of: Vec<usize> = {
        let mut f = vec![0usize; n];
        for (rank, &i) in order.iter().enumerate() {
            f[i] = rank % k;
        }
        f
    };

    let results: Vec<Result<(f64, f64, usize), HousingError>> = (0..k)
        .into_par_iter()
        .map(|fold| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();

            let tr_points: Vec<Point> = train.iter().map(|&i| design.points[i]).collect();
            let tr_z = DMatrix::from_fn(train.len(), 5, |r, c| design.z[(train[r], c)]);
            let tr_y = DVector::from_iterator(train.len(), train.iter().map(|&i| design.y[i]));

            let problem = PlmProblem::new(
                model,
                mesh,
                &tr_points,
                tr_z.clone(),
                tr_y.clone(),
                default_lambda_grid(),
            )
            .map_err(|e| HousingError::FoldFit { fold, source: e })?;
            let fit =
                problem.gcv_select().map_err(|e| HousingError::FoldFit { fold, source: e })?;

            let te_points: Vec<Point> = test.iter().map(|&i| design.points[i]).collect();
            let te_z = DMatrix::from_fn(test.len(), 5, |r, c| design.z[(test[r], c)]);
            let preds = crate::plm::predict(&fit, mesh, &te_points, Some(&te_z))
                .map_err(|e| HousingError::FoldFit { fold, source: e })?;
            let mut sse = 0.0;
            let mut used = 0usize;
            let mut skipped = 0usize;
            for (j, pred) in preds.iter().enumerate() {
                match pred.y_hat {
                    Some(yh) => {
                        let err = yh - design.y[test[j]];
                        sse += err * err;
                        used += 1;
                    }
                    None => skipped += 1,
                }
            }

            // Covariates-only least squares with intercept on the same split.
            let beta = ols_with_intercept(&tr_z, &tr_y)
                .ok_or(HousingError::FoldFit { fold, source: PlmError::CollinearCovariates })?;
            let mut sse_ols = 0.0;
            for (j, &i) in test.iter().enumerate() {
                let mut yh = beta[0];
                for c in 0..5 {
                    yh += beta[c + 1] * te_z[(j, c)];
                }
                let err = yh - design.y[i];
                sse_ols += err * err;
            }

            Ok((sse / used as f64, sse_ols / test.len() as f64, skipped))
        })
        .collect();

    let mut fold_mspe = Vec::with_capacity(k);
    let mut baseline_fold_mspe = Vec::with_capacity(k);
    let mut skipped_predictions = 0usize;
    for r in results {
        let (mspe, ols, skipped) = r?;
        fold_mspe.push(mspe);
        baseline_fold_mspe.push(ols);
        skipped_predictions += skipped;
    }
    let mean_mspe = fold_mspe.iter().sum::<f64>() / k as f64;
    let baseline_mean_mspe = baseline_fold_mspe.iter().sum::<f64>() / k as f64;
    Ok(CvReport {
        fold_mspe,
        mean_mspe,
        baseline_fold_mspe,
        baseline_mean_mspe,
        skipped_predictions,
    })
}

/// Ordinary least squares with an intercept column; returns
/// [intercept, coefficients...].
pub fn ols_with_intercept(z: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let n = z.nrows();
    let p = z.ncols();
    let mut x = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        x[(i, 0)] = 1.0;
        for c in 0..p {
            x[(i, c + 1)] = z[(i, c)];
        }
    }
    let xtx = x.tr_mul(&x);
    let xty = x.tr_mul(y);
    Cholesky::new(xtx).map(|chol| chol.solve(&xty))
}
