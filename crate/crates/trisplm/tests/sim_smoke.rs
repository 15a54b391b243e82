//! Small-replicate smoke runs of the Monte-Carlo harness: seeded
//! determinism, report schema, and sane single-replicate statistics.

use trisplm::sim::{
    run_mc_example1, run_mc_example2, Ex2Mesh, Example, Example1Context, Example2Context, SimConfig,
};

#[test]
fn example1_smoke_and_determinism() {
    let t0 = std::time::Instant::now();
    let ctx = Example1Context::new(false).unwrap();
    eprintln!("example1 context: {:?} (m = {})", t0.elapsed(), ctx.model.reduced_dim());

    let mut config = SimConfig::new(Example::One, 0.0, 42);
    config.replicates = 3;
    let t1 = std::time::Instant::now();
    let report = run_mc_example1(&ctx, &config).unwrap();
    eprintln!("3 replicates: {:?}", t1.elapsed());
    eprintln!(
        "rmse_beta = {:?}, rmse_sigma = {}, mspe_g = {}, se_mean = {:?}, se_mc = {:?}",
        report.rmse_beta, report.rmse_sigma, report.mspe, report.se_mean, report.se_mc
    );
    assert_eq!(report.failures, 0);
    assert!(report.rmse_beta[0] < 0.5);
    assert!(report.mspe < 2.0, "mspe {}", report.mspe);

    let again = run_mc_example1(&ctx, &config).unwrap();
    assert_eq!(report.to_csv(), again.to_csv());
}

#[test]
fn example2_smoke() {
    let t0 = std::time::Instant::now();
    let ctx = Example2Context::new(Ex2Mesh::Triangles32, 1.0, 1e-8).unwrap();
    eprintln!("example2 context: {:?} (m = {})", t0.elapsed(), ctx.model.reduced_dim());

    let mut config = SimConfig::new(Example::Two, 0.0, 7);
    config.replicates = 2;
    let t1 = std::time::Instant::now();
    let report = run_mc_example2(&ctx, &config).unwrap();
    eprintln!("2 replicates: {:?}", t1.elapsed());
    eprintln!(
        "rmse_beta = {:?}, rmse_sigma = {}, mspe_y = {}",
        report.rmse_beta, report.rmse_sigma, report.mspe
    );
    assert_eq!(report.failures, 0);
    assert!(report.mspe < 5.0, "mspe {}", report.mspe);
    assert!(report.to_csv().contains("mspe_y"));
}

#[test]
fn single_replicate_report_is_the_replicate() {
    let ctx = Example1Context::new(false).unwrap();
    let mut config = SimConfig::new(Example::One, 0.0, 3);
    config.replicates = 1;
    let report = run_mc_example1(&ctx, &config).unwrap();
    // Degenerate aggregation: RMSE is the absolute error of the single
    // replicate, the Monte-Carlo SE is undefined (reported as 0), and the
    // SE quantiles collapse onto the single estimate.
    assert_eq!(report.se_mc, [0.0, 0.0]);
    assert_eq!(report.se_mean, report.se_median);
    assert_eq!(report.se_mad, [0.0, 0.0]);
    assert!(report.ci_cover[0] <= 1 && report.ci_cover[1] <= 1);
}

#[test]
fn example2_response_variance_exceeds_noise_floor() {
    let ctx = Example2Context::new(Ex2Mesh::Triangles8, 1.0, 1e-8).unwrap();
    let config = SimConfig::new(Example::Two, 0.0, 5);
    let data = ctx.generate(&config, 0);
    let n = data.y_grid.len() as f64;
    let mean = data.y_grid.iter().sum::<f64>() / n;
    let var = data.y_grid.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    // The field and the surface add variance on top of sigma_eps^2 = 0.25.
    assert!(var > 0.25 * 2.0, "variance {var}");
}

#[test]
fn beta_rmse_shrinks_with_sample_size() {
    let ctx = Example1Context::new(false).unwrap();
    let mut rmse = Vec::new();
    for n in [200usize, 800] {
        let mut config = SimConfig::new(Example::One, 0.0, 17);
        config.n = n;
        config.replicates = 30;
        let report = run_mc_example1(&ctx, &config).unwrap();
        rmse.push(report.rmse_beta[0]);
    }
    let ratio = rmse[1] / rmse[0];
    assert!(ratio < 0.8, "rmse ratio {ratio} (values {rmse:?})");
}

#[test]
fn invalid_configurations_are_rejected() {
    let mut config = SimConfig::new(Example::One, 1.4, 1);
    assert!(config.validate().is_err());
    config.rho = 0.5;
    config.n = 10;
    assert!(config.validate().is_err());
    config.n = 200;
    config.replicates = 0;
    assert!(config.validate().is_err());
}

#[test]
fn example1_noise_has_the_configured_moments() {
    let ctx = Example1Context::new(false).unwrap();
    let mut config = SimConfig::new(Example::One, 0.0, 23);
    config.n = 200;
    // eps = Y - beta' Z - g by construction; pool a few replicates.
    let mut eps = Vec::new();
    for rep in 0..5 {
        let d = ctx.generate(&config, rep);
        for i in 0..config.n {
            eps.push(d.y[i] + d.z[(i, 0)] - d.z[(i, 1)] - d.g_true[i]);
        }
    }
    let n = eps.len() as f64;
    let mean = eps.iter().sum::<f64>() / n;
    let sd = (eps.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(mean.abs() < 0.05, "noise mean {mean}");
    assert!((sd - 0.5).abs() < 0.05, "noise sd {sd}");
}
