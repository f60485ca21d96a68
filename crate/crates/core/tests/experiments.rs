use std::f64::consts::PI;
use std::sync::Arc;

use mildls::adaptivity::RefinementMode;
use mildls::elements::quadrature::gauss_legendre;
use mildls::elements::Family;
use mildls::experiments::{lookup, read_csv, run, run_levels, true_error, ExperimentConfig, CSV_HEADER};
use mildls::mesh::{initial_mesh_rect, uniform_refine};
use mildls::spaces::{build_space, DiscreteField};

/// ∫_a^b f with 20 Gauss points on each of `pieces` equal subintervals.
fn integrate(a: f64, b: f64, pieces: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (t, w) = gauss_legendre(20);
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|k| {
            let lo = a + k as f64 * h;
            t.iter().zip(&w).map(|(t, w)| 0.5 * h * w * f(lo + 0.5 * h * (t + 1.0))).sum::<f64>()
        })
        .sum()
}

#[test]
fn zero_approximation_error_is_the_graph_norm_of_the_solution() {
    // In polar coordinates around the origin the rectangle is r < R(θ), and
    // |∇u*|² = 1/(4r), |u*|² = r sin²(θ/2). With p* = ∇u* and div p* = 0,
    // the squared graph norm is ∫∫ (2/(4r) + r sin²(θ/2)) r dr dθ
    //                          = ∫ R/2 + R³ sin²(θ/2)/3 dθ.
    let inner = |r: f64, th: f64| r / 2.0 + r.powi(3) * (th / 2.0).sin().powi(2) / 3.0;
    let oracle = integrate(0.0, PI / 4.0, 8, |th| inner(1.0 / th.cos(), th))
        + integrate(PI / 4.0, 3.0 * PI / 4.0, 8, |th| inner(1.0 / th.sin(), th))
        + integrate(3.0 * PI / 4.0, PI, 8, |th| inner(-1.0 / th.cos(), th));

    let problem = lookup("singular-mixed").unwrap();
    for mesh in [initial_mesh_rect(), uniform_refine(&uniform_refine(&initial_mesh_rect()))] {
        let mesh = Arc::new(mesh);
        let p = Arc::new(build_space(mesh.clone(), Family::RaviartThomas, 0, None).unwrap());
        let u = Arc::new(build_space(mesh, Family::Lagrange, 1, None).unwrap());
        let err = true_error(&DiscreteField::zeros(p), &DiscreteField::zeros(u), &problem).unwrap();
        let rel = (err.combined.powi(2) - oracle).abs() / oracle;
        assert!(rel <= 1e-6, "{} vs {oracle}: {rel:e}", err.combined.powi(2));
    }
}

fn quick_config(dir: &std::path::Path) -> ExperimentConfig {
    ExperimentConfig {
        problem: "singular-mixed".into(),
        q: 0,
        mode: RefinementMode::Adaptive,
        max_dofs: 1500,
        probe_max_dofs: 200,
        output_dir: dir.to_path_buf(),
        ..ExperimentConfig::default()
    }
}

#[test]
fn polynomial_problem_is_solved_exactly_on_every_level() {
    let cfg = ExperimentConfig { problem: "poly-linear".into(), max_levels: 2, probe_max_dofs: 0, ..ExperimentConfig::default() };
    let rows = run_levels(&cfg, |_| {}).unwrap();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r.true_error <= 1e-10, "{}", r.true_error);
    }
}

#[test]
fn rerunning_a_study_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (ra, rb) = (run(&quick_config(a.path()), |_| {}).unwrap(), run(&quick_config(b.path()), |_| {}).unwrap());
    for (x, y) in [(&ra.csv, &rb.csv), (&ra.plot_script, &rb.plot_script), (&ra.rates, &rb.rates)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
}

#[test]
fn csv_rows_satisfy_column_identities() {
    let dir = tempfile::tempdir().unwrap();
    let summary = run(&quick_config(dir.path()), |_| {}).unwrap();
    let text = std::fs::read_to_string(&summary.csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    let rows = read_csv(&summary.csv).unwrap();
    assert_eq!(rows.len(), summary.rows.len());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.level, i);
        let parts = r.lambda_b_hdiv.powi(2) + r.lambda_c_h1.powi(2) + r.flux_l2.powi(2) + r.div_l2.powi(2);
        assert!((r.e_global.powi(2) - parts).abs() <= 1e-12 * parts);
        assert!((r.effectivity - r.e_global / r.true_error).abs() <= 1e-12 * r.effectivity);
        assert_eq!(r.wall_time_ms, 0.0);
        assert!(r.lambda_c_semi <= r.lambda_c_h1);
        if r.trial_dofs <= 200 {
            assert!(r.gamma_hat_d > 0.0 && r.gamma_hat_d <= 1.0 + 1e-10);
            assert!(r.gamma_hat_n > 0.0 && r.gamma_hat_n <= 1.0 + 1e-10);
        } else {
            assert!(r.gamma_hat_d.is_nan() && r.gamma_hat_n.is_nan());
        }
    }
    // 16 significant digits in scientific notation.
    let field = text.lines().nth(1).unwrap().split(',').nth(3).unwrap();
    let mantissa = field.split('e').next().unwrap();
    assert_eq!(mantissa.chars().filter(|c| c.is_ascii_digit()).count(), 16, "{field}");
    let script = std::fs::read_to_string(&summary.plot_script).unwrap();
    assert!(script.contains("logscale") && script.contains(".csv"));
    let rates = std::fs::read_to_string(&summary.rates).unwrap();
    assert!(rates.contains("rate_true_error_last_half"));
}

#[test]
fn invalid_configurations_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_config(dir.path());
    cfg.q = 2;
    assert!(run(&cfg, |_| {}).is_err());
    let mut cfg = quick_config(dir.path());
    cfg.problem = "unknown".into();
    assert!(run(&cfg, |_| {}).is_err());
    let mut cfg = quick_config(dir.path());
    cfg.theta = 0.0;
    assert!(run(&cfg, |_| {}).is_err());
}
