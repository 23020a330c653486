use kroncov::estimators::{self, PenaltyPlan};
use kroncov::glasso::GlassoOptions;
use kroncov::harness::{self, EstimatorKind, ExperimentConfig, RmseRow};
use kroncov::sampler::{sample_cov, sample_matrix_normal};
use kroncov::SpdMatrix;

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        p: 4,
        f: 3,
        n_grid: vec![8, 16],
        n_mc: 3,
        estimators: vec![
            EstimatorKind::Kglasso,
            EstimatorKind::Ff,
            EstimatorKind::FfThres,
            EstimatorKind::Glasso,
            EstimatorKind::Scm,
        ],
        ..ExperimentConfig::default()
    }
}

fn csv_bytes(rows: &[RmseRow]) -> Vec<u8> {
    let mut out = Vec::new();
    harness::write_report_to(rows, &mut out).unwrap();
    out
}

fn row(estimator: &str, n: usize, precision: f64) -> RmseRow {
    RmseRow {
        estimator: estimator.into(),
        n,
        rmse_precision: precision,
        rmse_precision_sd: 0.01,
        rmse_covariance: 0.5,
        rmse_covariance_sd: f64::NAN,
        runtime_ms: f64::NAN,
        seed: 7,
    }
}

#[test]
fn report_round_trip_keeps_nan_as_empty_field() {
    let rows = vec![row("kglasso", 20, 0.125), row("ff", 10, f64::NAN), row("ff", 5, 1.0 / 3.0)];
    let bytes = csv_bytes(&rows);
    let text = String::from_utf8(bytes.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("ff,5,"));
    assert!(lines[2].starts_with("ff,10,,"));
    assert!(lines[3].starts_with("kglasso,20,"));

    let back = harness::read_report_from(bytes.as_slice()).unwrap();
    assert_eq!(back.len(), 3);
    assert!(back[1].rmse_precision.is_nan());
    assert_eq!(back[0].rmse_precision, 1.0 / 3.0);
    assert!(back.iter().all(|r| r.runtime_ms.is_nan() && r.rmse_covariance_sd.is_nan()));
    assert_eq!(csv_bytes(&back), bytes);
}

#[test]
fn empty_report_is_header_only() {
    let text = String::from_utf8(csv_bytes(&[])).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(harness::read_report_from(text.as_bytes()).unwrap().is_empty());
    assert!(harness::read_report_from("a,b\n1,2\n".as_bytes()).is_err());
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let cfg = small_config();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| harness::run_example(&cfg).unwrap())
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(csv_bytes(&one.rows), csv_bytes(&three.rows));
    assert_eq!(one.rows.len(), 10);
    assert_eq!(one.provenance, three.provenance);
    assert_eq!(one.dual_failures, 0);
    // SCM precision is unavailable while n < pf
    let scm = one.row(EstimatorKind::Scm, 8).unwrap();
    assert!(scm.rmse_precision.is_nan());
    assert!(scm.rmse_covariance.is_finite());
}

#[test]
fn seed_changes_the_report() {
    let cfg = small_config();
    let other = ExperimentConfig {
        master_seed: 8,
        ..small_config()
    };
    let a = harness::run_example(&cfg).unwrap();
    let b = harness::run_example(&other).unwrap();
    assert_ne!(csv_bytes(&a.rows), csv_bytes(&b.rows));
    assert_ne!(a.provenance.config_hash, b.provenance.config_hash);
}

#[test]
fn undersized_trials_are_voided_for_every_estimator() {
    // p/f = 3 needs n >= 4
    let cfg = ExperimentConfig {
        p: 6,
        f: 2,
        n_grid: vec![2, 12],
        n_mc: 2,
        estimators: vec![EstimatorKind::Kglasso, EstimatorKind::Ff],
        ..ExperimentConfig::default()
    };
    let report = harness::run_example(&cfg).unwrap();
    assert_eq!(report.voided.len(), 2);
    assert!(report.voided.iter().all(|v| v.n == 2 && v.error.contains("SampleSizeTooSmall")));
    for kind in [EstimatorKind::Kglasso, EstimatorKind::Ff] {
        assert!(report.row(kind, 2).unwrap().rmse_precision.is_nan());
        assert!(report.row(kind, 12).unwrap().rmse_precision.is_finite());
    }
}

#[test]
fn kglasso_fixed_point_is_stable_under_resume() {
    let cfg = ExperimentConfig::default();
    let model = cfg.fixed_model().unwrap();
    let data = sample_matrix_normal(&model, 40, 3).unwrap();
    let s = sample_cov(&data, 20, 10).unwrap();
    let plan = PenaltyPlan::new(20, 10, 40, 0.4, 0.4);
    let opts = GlassoOptions::default();
    let first = estimators::kglasso(&s, &plan, &SpdMatrix::identity(20), 1e-6, 200, &opts).unwrap();
    assert!(first.converged);
    let again = estimators::kglasso_resume(&s, &plan, &first, 1e-6, 200, &opts).unwrap();
    assert!(again.converged);
    assert!(again.outer_iters <= 2, "resume took {} iterations", again.outer_iters);
    let before = *first.objective_trace.last().unwrap();
    let after = *again.objective_trace.last().unwrap();
    assert!(after <= before + 1e-8 && before - after <= 1e-4, "{before} -> {after}");
}

#[test]
fn scm_covariance_error_decays_like_root_n() {
    let cfg = ExperimentConfig {
        p: 3,
        f: 2,
        n_grid: vec![50, 100, 200, 400, 800],
        n_mc: 40,
        estimators: vec![EstimatorKind::Scm],
        ..ExperimentConfig::default()
    };
    let report = harness::run_example(&cfg).unwrap();
    let n: Vec<f64> = cfg.n_grid.iter().map(|&v| v as f64).collect();
    let rmse: Vec<f64> = cfg
        .n_grid
        .iter()
        .map(|&v| report.row(EstimatorKind::Scm, v).unwrap().rmse_covariance)
        .collect();
    let slope = harness::loglog_slope(&n, &rmse);
    assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
}

#[test]
fn single_column_factor_runs() {
    let cfg = ExperimentConfig {
        p: 5,
        f: 1,
        n_grid: vec![10],
        n_mc: 2,
        estimators: vec![EstimatorKind::Kglasso, EstimatorKind::Ff, EstimatorKind::Scm],
        ..ExperimentConfig::default()
    };
    let report = harness::run_example(&cfg).unwrap();
    assert!(report.voided.is_empty());
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.iter().all(|r| r.rmse_covariance.is_finite()));
}
