//! Named problems, true errors, convergence rates and the study driver.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::adaptivity::{adaptive_loop, LambdaCNorm, LevelRecord, LoopConfig, MarkingConfig, MarkingStrategy, RefinementMode};
use crate::assembly::{AssemblyOptions, ProblemData, ScalarFn};
use crate::elements::{graded_triangle_quadrature, triangle_quadrature, TriangleRule};
use crate::error::{Error, Result};
use crate::mesh::{initial_mesh_rect, initial_mesh_rect_tagged, BoundaryPart, Triangulation};
use crate::spaces::{DiscreteField, TestMeshMode};
use crate::verification::probe_system;

pub type VectorFn = Arc<dyn Fn([f64; 2]) -> [f64; 2] + Send + Sync>;

#[derive(Clone)]
pub struct ExactSolution {
    pub u: ScalarFn,
    pub grad: VectorFn,
}

impl ExactSolution {
    pub fn new(
        u: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        grad: impl Fn([f64; 2]) -> [f64; 2] + Send + Sync + 'static,
    ) -> Self {
        Self { u: Arc::new(u), grad: Arc::new(grad) }
    }
}

#[derive(Clone)]
pub struct RegistryProblem {
    pub name: &'static str,
    pub description: &'static str,
    pub root: fn() -> Triangulation,
    pub data: ProblemData,
    pub exact: Option<ExactSolution>,
}

impl std::fmt::Debug for RegistryProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RegistryProblem").field("name", &self.name).finish_non_exhaustive()
    }
}

/// Angle in [0, π] measured from the positive x-axis.
fn polar(x: [f64; 2]) -> (f64, f64) {
    (x[0].hypot(x[1]), x[1].atan2(x[0]))
}

pub fn singular_u(x: [f64; 2]) -> f64 {
    let (r, th) = polar(x);
    r.sqrt() * (0.5 * th).sin()
}

pub fn singular_grad(x: [f64; 2]) -> [f64; 2] {
    let (r, th) = polar(x);
    let s = 0.5 / r.sqrt();
    [-s * (0.5 * th).sin(), s * (0.5 * th).cos()]
}

fn smooth_u(x: [f64; 2]) -> f64 {
    use std::f64::consts::PI;
    (PI * x[0]).sin() * (PI * x[1]).sinh()
}

fn smooth_grad(x: [f64; 2]) -> [f64; 2] {
    use std::f64::consts::PI;
    [PI * (PI * x[0]).cos() * (PI * x[1]).sinh(), PI * (PI * x[0]).sin() * (PI * x[1]).cosh()]
}

fn all_dirichlet_rect() -> Triangulation {
    initial_mesh_rect_tagged(|_, _| BoundaryPart::Dirichlet)
}

pub fn registry() -> Vec<RegistryProblem> {
    vec![
        RegistryProblem {
            name: "singular-mixed",
            description: "u = r^(1/2) sin(θ/2) on (−1,1)×(0,1), Neumann on [−1,0]×{0}",
            root: initial_mesh_rect,
            data: ProblemData::poisson(|_| 0.0, singular_u, |_| 0.0).with_singular_point([0.0, 0.0]),
            exact: Some(ExactSolution::new(singular_u, singular_grad)),
        },
        RegistryProblem {
            name: "poly-linear",
            description: "u = x + y on (−1,1)×(0,1), Neumann on [−1,0]×{0}",
            root: initial_mesh_rect,
            data: ProblemData::poisson(|_| 0.0, |x| x[0] + x[1], |_| -1.0),
            exact: Some(ExactSolution::new(|x| x[0] + x[1], |_| [1.0, 1.0])),
        },
        RegistryProblem {
            name: "smooth",
            description: "u = sin(πx) sinh(πy) on (−1,1)×(0,1), Dirichlet everywhere",
            root: all_dirichlet_rect,
            data: ProblemData::poisson(|_| 0.0, smooth_u, |_| 0.0),
            exact: Some(ExactSolution::new(smooth_u, smooth_grad)),
        },
    ]
}

pub fn lookup(name: &str) -> Result<RegistryProblem> {
    registry().into_iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<_> = registry().iter().map(|p| p.name).collect();
        Error::UnknownProblem(format!("{name} (known: {})", known.join(", ")))
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrueError {
    /// ‖p* − p‖_{H(div)}.
    pub err_hdiv_p: f64,
    /// ‖u* − u‖_{H¹}.
    pub err_h1_u: f64,
    pub combined: f64,
}

/// Levels and base exactness of the graded rule on triangles touching a
/// singular point.
pub const GRADED_TRUE_ERROR_LEVELS: usize = 20;
pub const GRADED_TRUE_ERROR_BASE: usize = 12;

/// Errors against an exact pair with flux p* = `flux` and div p* = `div_flux`.
pub fn true_error_with(
    p: &DiscreteField,
    u: &DiscreteField,
    exact: &ExactSolution,
    flux: &(dyn Fn([f64; 2]) -> [f64; 2] + Sync),
    div_flux: &(dyn Fn([f64; 2]) -> f64 + Sync),
    singular: &[[f64; 2]],
) -> Result<TrueError> {
    let mesh = p.space().mesh();
    let degree = 2 * p.space().basis().polynomial_degree().max(u.space().basis().polynomial_degree()) + 6;
    let regular = triangle_quadrature(degree);
    let base = triangle_quadrature(GRADED_TRUE_ERROR_BASE);
    let graded: Vec<TriangleRule> =
        (0..3).map(|v| graded_triangle_quadrature(v, GRADED_TRUE_ERROR_LEVELS, &base)).collect();
    let mut acc = [0.0f64; 4];
    for t in 0..mesh.n_triangles() {
        let verts = mesh.triangle_vertices(t);
        let hit = verts.iter().position(|v| singular.iter().any(|s| (v.x - s[0]).hypot(v.y - s[1]) <= 1e-14));
        let rule = hit.map_or(&regular, |i| &graded[i]);
        let det = p.space().element_map(t).det;
        let (ps, us) = (p.eval(t, &rule.points), u.eval(t, &rule.points));
        for (k, (pt, w)) in rule.iter().enumerate() {
            let x = p.space().element_map(t).to_physical(pt);
            let crate::spaces::FieldSample::Vector { value: pv, divergence } = ps[k] else { unreachable!() };
            let crate::spaces::FieldSample::Scalar { value: uv, gradient } = us[k] else { unreachable!() };
            let (f, g) = (flux(x), (exact.grad)(x));
            let wk = w * det;
            acc[0] += wk * ((f[0] - pv[0]).powi(2) + (f[1] - pv[1]).powi(2));
            acc[1] += wk * (div_flux(x) - divergence).powi(2);
            acc[2] += wk * ((exact.u)(x) - uv).powi(2);
            acc[3] += wk * ((g[0] - gradient[0]).powi(2) + (g[1] - gradient[1]).powi(2));
        }
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("true error"));
    }
    let (hdiv, h1) = (acc[0] + acc[1], acc[2] + acc[3]);
    Ok(TrueError { err_hdiv_p: hdiv.sqrt(), err_h1_u: h1.sqrt(), combined: (hdiv + h1).sqrt() })
}

/// Errors of (p, u) against a registry problem's exact solution.
pub fn true_error(p: &DiscreteField, u: &DiscreteField, problem: &RegistryProblem) -> Result<TrueError> {
    let exact = problem.exact.as_ref().ok_or_else(|| Error::MissingExactSolution(problem.name.to_string()))?;
    let data = &problem.data;
    let flux = |x: [f64; 2]| {
        let a = (data.a)(x);
        let g = (exact.grad)(x);
        [a[0][0] * g[0] + a[0][1] * g[1], a[1][0] * g[0] + a[1][1] * g[1]]
    };
    // div p* = B u* − g.
    let div_flux = |x: [f64; 2]| data.reaction(x) * (exact.u)(x) - (data.g)(x);
    true_error_with(p, u, exact, &flux, &div_flux, &data.singular_points)
}

fn slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: points.len() });
    }
    if points.iter().any(|&(d, v)| !(d > 0.0) || !(v > 0.0)) {
        return Err(Error::NonFinite("rate needs positive DOF counts and values"));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(-sxy / sxx)
}

/// Negated least-squares slope of log(value) against log(dofs) over the last
/// half of the history (at least 4 points overall).
pub fn rate(history: &[(f64, f64)]) -> Result<f64> {
    if history.len() < 4 {
        return Err(Error::TooFewPoints { needed: 4, got: history.len() });
    }
    slope(&history[history.len() / 2..])
}

/// Same fit over exactly the last `k` points.
pub fn rate_last(history: &[(f64, f64)], k: usize) -> Result<f64> {
    if history.len() < k || k < 2 {
        return Err(Error::TooFewPoints { needed: k.max(2), got: history.len() });
    }
    slope(&history[history.len() - k..])
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub problem: String,
    pub q: usize,
    pub mode: RefinementMode,
    pub theta: f64,
    pub marking: MarkingStrategy,
    pub max_dofs: usize,
    pub max_levels: usize,
    pub test_mesh: TestMeshMode,
    pub lambda_c_norm: LambdaCNorm,
    /// Inf-sup probes run on levels with at most this many trial DOFs.
    pub probe_max_dofs: usize,
    pub volume_degree: Option<usize>,
    pub graded_levels: usize,
    /// Writes measured wall time instead of 0 in the timing column.
    pub timing: bool,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: "singular-mixed".into(),
            q: 0,
            mode: RefinementMode::Adaptive,
            theta: 0.6,
            marking: MarkingStrategy::DoerflerSquared,
            max_dofs: 100_000,
            max_levels: 200,
            test_mesh: TestMeshMode::Matched,
            lambda_c_norm: LambdaCNorm::Full,
            probe_max_dofs: 5_000,
            volume_degree: None,
            graded_levels: 30,
            timing: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Parse(format!("invalid value '{value}' for {key}")))
}

impl ExperimentConfig {
    /// Applies one `key=value` setting; keys match the CLI flag names.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "problem" => self.problem = value.to_string(),
            "q" => self.q = parse_num(&key, value)?,
            "mode" => self.mode = value.parse()?,
            "theta" => self.theta = parse_num(&key, value)?,
            "marking" => {
                self.marking = match value {
                    "theta" => MarkingStrategy::DoerflerSquared,
                    "theta-squared" => MarkingStrategy::DoerflerThetaSquared,
                    _ => return Err(Error::Parse(format!("unknown marking '{value}' (expected theta or theta-squared)"))),
                }
            }
            "max-dofs" => self.max_dofs = parse_num(&key, value)?,
            "max-levels" => self.max_levels = parse_num(&key, value)?,
            "test-mesh" => self.test_mesh = value.parse()?,
            "lambda-c-norm" => {
                self.lambda_c_norm = match value {
                    "full" => LambdaCNorm::Full,
                    "semi" => LambdaCNorm::Seminorm,
                    _ => return Err(Error::Parse(format!("unknown lambda-c-norm '{value}' (expected full or semi)"))),
                }
            }
            "probe-max-dofs" => self.probe_max_dofs = parse_num(&key, value)?,
            "volume-degree" => self.volume_degree = Some(parse_num(&key, value)?),
            "graded-levels" => self.graded_levels = parse_num(&key, value)?,
            "timing" => self.timing = parse_num(&key, value)?,
            "out" | "output-dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::Parse(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Reads `key=value` lines; `#` starts a comment.
    pub fn apply_file_contents(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value, got '{line}'", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.q > 1 {
            return Err(Error::Config(format!("q must be 0 or 1, got {}", self.q)));
        }
        MarkingConfig { theta: self.theta, strategy: self.marking }.validate()?;
        if self.theta >= 1.0 {
            return Err(Error::Config(format!("theta must lie in (0, 1), got {}", self.theta)));
        }
        lookup(&self.problem)?;
        Ok(())
    }

    pub fn loop_config(&self) -> LoopConfig {
        let mut cfg = LoopConfig::new(self.q, self.mode, self.max_dofs);
        cfg.marking = MarkingConfig { theta: self.theta, strategy: self.marking };
        cfg.max_levels = self.max_levels;
        cfg.test_mesh = self.test_mesh;
        cfg.estimator.lambda_c_norm = self.lambda_c_norm;
        cfg.assembly = AssemblyOptions { volume_degree: self.volume_degree, graded_levels: self.graded_levels, ..AssemblyOptions::default() };
        cfg
    }

    pub fn stem(&self) -> String {
        format!("{}_q{}_{}_{}", self.problem, self.q, self.mode.name(), self.test_mesh.name())
    }
}

pub const CSV_HEADER: &str = "level,trial_dofs,total_dofs,E_global,lambda_b_hdiv,lambda_c_semi,lambda_c_h1,flux_l2,div_l2,true_error,effectivity,gamma_hat_D,gamma_hat_N,wall_time_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub level: usize,
    pub trial_dofs: usize,
    pub total_dofs: usize,
    pub e_global: f64,
    pub lambda_b_hdiv: f64,
    pub lambda_c_semi: f64,
    pub lambda_c_h1: f64,
    pub flux_l2: f64,
    pub div_l2: f64,
    pub true_error: f64,
    pub effectivity: f64,
    pub gamma_hat_d: f64,
    pub gamma_hat_n: f64,
    pub wall_time_ms: f64,
}

impl CsvRow {
    pub fn from_record(record: &LevelRecord, gammas: (Option<f64>, Option<f64>), timing: bool) -> Self {
        let r = &record.report;
        Self {
            level: record.level,
            trial_dofs: record.trial_dofs(),
            total_dofs: record.total_dofs(),
            e_global: r.e_global,
            lambda_b_hdiv: r.lambda_b_hdiv_sq.sqrt(),
            lambda_c_semi: r.lambda_c_semi_sq.sqrt(),
            lambda_c_h1: r.lambda_c_h1_sq.sqrt(),
            flux_l2: r.flux_sq.sqrt(),
            div_l2: r.div_sq.sqrt(),
            true_error: r.true_error.unwrap_or(f64::NAN),
            effectivity: r.effectivity.unwrap_or(f64::NAN),
            gamma_hat_d: gammas.0.unwrap_or(f64::NAN),
            gamma_hat_n: gammas.1.unwrap_or(f64::NAN),
            wall_time_ms: if timing { record.elapsed_ms } else { 0.0 },
        }
    }

    pub fn to_line(&self) -> String {
        let reals = [
            self.e_global,
            self.lambda_b_hdiv,
            self.lambda_c_semi,
            self.lambda_c_h1,
            self.flux_l2,
            self.div_l2,
            self.true_error,
            self.effectivity,
            self.gamma_hat_d,
            self.gamma_hat_n,
            self.wall_time_ms,
        ];
        let mut line = format!("{},{},{}", self.level, self.trial_dofs, self.total_dofs);
        for v in reals {
            write!(line, ",{v:.15e}").expect("writing to a String");
        }
        line
    }

    pub fn parse(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 14 {
            return Err(Error::Parse(format!("expected 14 columns, got {}", f.len())));
        }
        let r = |i: usize| parse_num::<f64>(CSV_HEADER.split(',').nth(i).unwrap_or("column"), f[i]);
        Ok(Self {
            level: parse_num("level", f[0])?,
            trial_dofs: parse_num("trial_dofs", f[1])?,
            total_dofs: parse_num("total_dofs", f[2])?,
            e_global: r(3)?,
            lambda_b_hdiv: r(4)?,
            lambda_c_semi: r(5)?,
            lambda_c_h1: r(6)?,
            flux_l2: r(7)?,
            div_l2: r(8)?,
            true_error: r(9)?,
            effectivity: r(10)?,
            gamma_hat_d: r(11)?,
            gamma_hat_n: r(12)?,
            wall_time_ms: r(13)?,
        })
    }
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => return Err(Error::Parse(format!("unexpected CSV header {other:?}"))),
    }
    lines.filter(|l| !l.trim().is_empty()).map(CsvRow::parse).collect()
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub rows: Vec<CsvRow>,
    pub csv: PathBuf,
    pub plot_script: PathBuf,
    pub rates: PathBuf,
    pub rate_estimator: Option<f64>,
    pub rate_true_error: Option<f64>,
}

/// Runs the refinement loop without touching the file system.
pub fn run_levels(cfg: &ExperimentConfig, mut on_row: impl FnMut(&CsvRow)) -> Result<Vec<CsvRow>> {
    cfg.validate()?;
    let problem = lookup(&cfg.problem)?;
    let root = (problem.root)();
    let loop_cfg = cfg.loop_config();
    let te = |p: &DiscreteField, u: &DiscreteField| true_error(p, u, &problem).map(|e| e.combined);
    let mut rows = Vec::new();
    adaptive_loop(&root, &problem.data, &loop_cfg, problem.exact.as_ref().map(|_| &te as _), |rec| {
        let gammas = if rec.trial_dofs() <= cfg.probe_max_dofs {
            let (d, n) = probe_system(&rec.spaces, &loop_cfg.assembly)?;
            (Some(d.gamma_hat), n.map(|n| n.gamma_hat))
        } else {
            (None, None)
        };
        let row = CsvRow::from_record(rec, gammas, cfg.timing);
        on_row(&row);
        rows.push(row);
        Ok(())
    })?;
    Ok(rows)
}

fn history(rows: &[CsvRow], value: impl Fn(&CsvRow) -> f64) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.trial_dofs as f64, value(r))).filter(|p| p.1.is_finite() && p.1 > 0.0).collect()
}

pub fn rates_summary(cfg: &ExperimentConfig, rows: &[CsvRow]) -> (String, Option<f64>, Option<f64>) {
    let est = history(rows, |r| r.e_global);
    let err = history(rows, |r| r.true_error);
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    line("problem", cfg.problem.clone());
    line("q", cfg.q.to_string());
    line("mode", cfg.mode.name().into());
    line("test_mesh", cfg.test_mesh.name().into());
    line("theta", cfg.theta.to_string());
    line("lambda_c_norm", format!("{:?}", cfg.lambda_c_norm).to_lowercase());
    line("levels", rows.len().to_string());
    line("final_trial_dofs", rows.last().map_or(0, |r| r.trial_dofs).to_string());
    let fmt = |r: Result<f64>| r.map_or_else(|e| format!("n/a ({e})"), |v| format!("{v:.6}"));
    let (re, rt) = (rate(&est).ok(), rate(&err).ok());
    line("rate_estimator_last_half", fmt(rate(&est)));
    line("rate_true_error_last_half", fmt(rate(&err)));
    line("rate_estimator_last3", fmt(rate_last(&est, 3)));
    line("rate_true_error_last3", fmt(rate_last(&err, 3)));
    let eff: Vec<f64> = rows.iter().rev().take(6).map(|r| r.effectivity).filter(|v| v.is_finite()).collect();
    if !eff.is_empty() {
        let (lo, hi) = eff.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
        line("effectivity_final6_min", format!("{lo:.6}"));
        line("effectivity_final6_max", format!("{hi:.6}"));
    }
    (out, re, rt)
}

pub fn plot_script(stem: &str) -> String {
    format!(
        "# gnuplot script; run with: gnuplot {stem}.gp\n\
         set datafile separator ','\n\
         set key autotitle columnhead\n\
         set terminal pngcairo size 900,600\n\
         set grid\n\
         set xlabel 'trial DOFs'\n\
         set output '{stem}_convergence.png'\n\
         set logscale xy\n\
         plot '{stem}.csv' using 2:4 with linespoints title 'estimator E', \\\n\
         \x20    '' using 2:10 with linespoints title 'true error'\n\
         set output '{stem}_effectivity.png'\n\
         unset logscale y\n\
         plot '{stem}.csv' using 2:11 with linespoints title 'E / true error'\n"
    )
}

/// Runs a study and writes `<stem>.csv`, `<stem>.gp` and `<stem>_rates.txt`
/// into the output directory.
pub fn run(cfg: &ExperimentConfig, on_row: impl FnMut(&CsvRow)) -> Result<RunSummary> {
    let rows = run_levels(cfg, on_row)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let stem = cfg.stem();
    let csv = cfg.output_dir.join(format!("{stem}.csv"));
    let plot = cfg.output_dir.join(format!("{stem}.gp"));
    let rates_path = cfg.output_dir.join(format!("{stem}_rates.txt"));
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.to_line());
        text.push('\n');
    }
    std::fs::write(&csv, text)?;
    std::fs::write(&plot, plot_script(&stem))?;
    let (summary, re, rt) = rates_summary(cfg, &rows);
    std::fs::write(&rates_path, summary)?;
    Ok(RunSummary { rows, csv, plot_script: plot, rates: rates_path, rate_estimator: re, rate_true_error: rt })
}

#[derive(Clone, Debug)]
pub struct ProbeRow {
    pub level: usize,
    pub trial_dofs: usize,
    pub gamma_hat_d: f64,
    pub gamma_hat_n: Option<f64>,
}

/// Inf-sup probes along the first `levels` levels of an adaptive run.
pub fn probe_history(cfg: &ExperimentConfig, levels: usize) -> Result<Vec<ProbeRow>> {
    cfg.validate()?;
    let problem = lookup(&cfg.problem)?;
    let root = (problem.root)();
    let mut loop_cfg = cfg.loop_config();
    loop_cfg.max_levels = levels;
    let mut rows = Vec::new();
    adaptive_loop(&root, &problem.data, &loop_cfg, None, |rec| {
        let (d, n) = probe_system(&rec.spaces, &loop_cfg.assembly)?;
        rows.push(ProbeRow { level: rec.level, trial_dofs: rec.trial_dofs(), gamma_hat_d: d.gamma_hat, gamma_hat_n: n.map(|n| n.gamma_hat) });
        Ok(())
    })?;
    Ok(rows)
}

/// Parses the `key=value` file at `path` on top of the defaults.
pub fn config_from_file(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    cfg.apply_file_contents(&std::fs::read_to_string(path)?)?;
    Ok(cfg)
}

/// Sorted `key = value` dump of a configuration, one per line.
pub fn describe(cfg: &ExperimentConfig) -> String {
    let mut m = BTreeMap::new();
    m.insert("problem", cfg.problem.clone());
    m.insert("q", cfg.q.to_string());
    m.insert("mode", cfg.mode.name().to_string());
    m.insert("theta", cfg.theta.to_string());
    m.insert("max-dofs", cfg.max_dofs.to_string());
    m.insert("test-mesh", cfg.test_mesh.name().to_string());
    m.insert("out", cfg.output_dir.display().to_string());
    m.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}
