//! Error estimation, bulk marking and the adaptive refinement loop.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use crate::assembly::{assemble_system, AssemblyOptions, BlockSystem, ProblemData};
use crate::error::{Error, Result};
use crate::mesh::{refine, uniform_refine, BoundaryPart, EdgeKey, Triangulation};
use crate::solver::{elementwise_ls_residual, solve_saddle, SolveResult, SolverOptions};
use crate::spaces::{DiscreteField, SystemSpaces, TestMeshMode};

/// Norm of λ_c entering the global estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LambdaCNorm {
    /// ‖∇λ_c‖², the norm of the Neumann test Gram.
    Seminorm,
    /// ‖λ_c‖² + ‖∇λ_c‖².
    Full,
}

#[derive(Clone, Debug)]
pub struct EstimatorOptions {
    pub lambda_c_norm: LambdaCNorm,
    /// Quadrature exactness for elementwise norms; `None` picks 2·(q+2) + 4.
    pub degree: Option<usize>,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { lambda_c_norm: LambdaCNorm::Full, degree: None }
    }
}

#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub lambda_b_hdiv_sq: f64,
    pub lambda_c_semi_sq: f64,
    pub lambda_c_h1_sq: f64,
    /// ‖p − A∇u‖².
    pub flux_sq: f64,
    /// ‖Bu − div p − g‖².
    pub div_sq: f64,
    pub lambda_c_norm: LambdaCNorm,
    pub e_global: f64,
    /// η_K² per triangle of the trial mesh.
    pub eta_sq: Vec<f64>,
    pub true_error: Option<f64>,
    pub effectivity: Option<f64>,
}

impl ErrorReport {
    pub fn lambda_c_sq(&self) -> f64 {
        match self.lambda_c_norm {
            LambdaCNorm::Seminorm => self.lambda_c_semi_sq,
            LambdaCNorm::Full => self.lambda_c_h1_sq,
        }
    }

    pub fn parts_sum(&self) -> f64 {
        self.lambda_b_hdiv_sq + self.lambda_c_sq() + self.flux_sq + self.div_sq
    }

    pub fn with_true_error(mut self, err: f64) -> Self {
        self.true_error = Some(err);
        self.effectivity = (err > 0.0).then(|| self.e_global / err);
        self
    }
}

/// For every boundary-touching triangle of `test`, the triangle of `trial`
/// sharing its longest facet on `part` (ties go to the first local edge).
pub fn facet_assignment(test: &Triangulation, trial: &Triangulation, part: BoundaryPart) -> Result<Vec<(usize, usize)>> {
    let trial_facets: HashMap<EdgeKey, usize> =
        trial.part_edges(part).into_iter().map(|e| (trial.edge_key(e), trial.edge_triangles(e)[0])).collect();
    let mut best: Vec<Option<(f64, usize)>> = vec![None; test.n_triangles()];
    for e in test.part_edges(part) {
        let t = test.edge_triangles(e)[0];
        let len = test.edge_length(e);
        let owner = *trial_facets.get(&test.edge_key(e)).ok_or_else(|| Error::FacetMismatch {
            part,
            detail: format!("test facet {:?} has no counterpart on the trial mesh", test.edge(e)),
        })?;
        if best[t].is_none_or(|(l, _)| len > l) {
            best[t] = Some((len, owner));
        }
    }
    Ok(best.into_iter().enumerate().filter_map(|(t, b)| b.map(|(_, k)| (t, k))).collect())
}

fn default_degree(q: usize) -> usize {
    2 * (q + 2) + 4
}

/// Global estimator with all four residual parts and local indicators.
pub fn global_estimator(
    result: &SolveResult,
    system: &BlockSystem,
    data: &ProblemData,
    opts: &EstimatorOptions,
) -> Result<ErrorReport> {
    let q = system.spaces.q;
    let degree = opts.degree.unwrap_or(default_degree(q));
    let volume = elementwise_ls_residual(&result.p, &result.u, data, degree)?;
    let mut eta_sq: Vec<f64> = volume.iter().map(|v| v[0] + v[1]).collect();
    let (flux_sq, div_sq) = volume.iter().fold((0.0, 0.0), |(a, b), v| (a + v[0], b + v[1]));

    let trial = result.p.space().mesh();
    let lb = result.lambda_b.cell_norms_sq(degree);
    for (tp, k) in facet_assignment(result.lambda_b.space().mesh(), trial, BoundaryPart::Dirichlet)? {
        eta_sq[k] += lb[tp][0] + lb[tp][1];
    }
    let lc = result.lambda_c.cell_norms_sq(degree);
    let lc_local = |v: [f64; 2]| match opts.lambda_c_norm {
        LambdaCNorm::Seminorm => v[1],
        LambdaCNorm::Full => v[0] + v[1],
    };
    for (tp, k) in facet_assignment(result.lambda_c.space().mesh(), trial, BoundaryPart::Neumann)? {
        eta_sq[k] += lc_local(lc[tp]);
    }

    let lambda_b_hdiv_sq = system.a_b.quad_form(result.lambda_b.coeffs()).max(0.0);
    let lambda_c_semi_sq = system.a_c.quad_form(result.lambda_c.coeffs()).max(0.0);
    let lambda_c_l2_sq: f64 = lc.iter().map(|v| v[0]).sum();
    let mut report = ErrorReport {
        lambda_b_hdiv_sq,
        lambda_c_semi_sq,
        lambda_c_h1_sq: lambda_c_semi_sq + lambda_c_l2_sq,
        flux_sq,
        div_sq,
        lambda_c_norm: opts.lambda_c_norm,
        e_global: 0.0,
        eta_sq,
        true_error: None,
        effectivity: None,
    };
    report.e_global = report.parts_sum().sqrt();
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MarkingStrategy {
    /// Σ_M η² ≥ θ Σ η².
    DoerflerSquared,
    /// Σ_M η² ≥ θ² Σ η².
    DoerflerThetaSquared,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkingConfig {
    pub theta: f64,
    pub strategy: MarkingStrategy,
}

impl Default for MarkingConfig {
    fn default() -> Self {
        Self { theta: 0.6, strategy: MarkingStrategy::DoerflerSquared }
    }
}

impl MarkingConfig {
    pub fn new(theta: f64) -> Result<Self> {
        let cfg = Self { theta, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::Config(format!("theta must lie in (0, 1], got {}", self.theta)));
        }
        Ok(())
    }

    fn fraction(&self) -> f64 {
        match self.strategy {
            MarkingStrategy::DoerflerSquared => self.theta,
            MarkingStrategy::DoerflerThetaSquared => self.theta * self.theta,
        }
    }
}

/// Smallest set of triangles carrying the bulk fraction of Σ η², chosen
/// greedily by decreasing η² with ties broken by triangle id. Returned sorted
/// by decreasing indicator.
pub fn mark(eta_sq: &[f64], cfg: &MarkingConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if let Some(v) = eta_sq.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!("indicators must be finite and nonnegative, got {v}")));
    }
    let mut order: Vec<usize> = (0..eta_sq.len()).collect();
    order.sort_by(|&a, &b| eta_sq[b].total_cmp(&eta_sq[a]).then(a.cmp(&b)));
    // Summing in the same order as the greedy scan makes θ = 1 reach the total.
    let total: f64 = order.iter().map(|&i| eta_sq[i]).sum();
    if total == 0.0 {
        return Ok(Vec::new());
    }
    let target = cfg.fraction() * total;
    let mut acc = 0.0;
    let mut marked = Vec::new();
    for i in order {
        if acc >= target {
            break;
        }
        acc += eta_sq[i];
        marked.push(i);
    }
    Ok(marked)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RefinementMode {
    Uniform,
    Adaptive,
}

impl RefinementMode {
    pub fn name(self) -> &'static str {
        match self {
            RefinementMode::Uniform => "uniform",
            RefinementMode::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for RefinementMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(RefinementMode::Uniform),
            "adaptive" => Ok(RefinementMode::Adaptive),
            _ => Err(Error::Parse(format!("unknown refinement mode '{s}' (expected uniform or adaptive)"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoopConfig {
    pub q: usize,
    pub mode: RefinementMode,
    pub marking: MarkingConfig,
    /// No level with more trial DOFs than this is solved.
    pub max_dofs: usize,
    pub max_levels: usize,
    pub test_mesh: TestMeshMode,
    pub assembly: AssemblyOptions,
    pub solver: SolverOptions,
    pub estimator: EstimatorOptions,
}

impl LoopConfig {
    pub fn new(q: usize, mode: RefinementMode, max_dofs: usize) -> Self {
        Self {
            q,
            mode,
            marking: MarkingConfig::default(),
            max_dofs,
            max_levels: 200,
            test_mesh: TestMeshMode::Matched,
            assembly: AssemblyOptions::default(),
            solver: SolverOptions::default(),
            estimator: EstimatorOptions::default(),
        }
    }
}

/// One solved level of a refinement history.
#[derive(Clone, Debug)]
pub struct LevelRecord {
    pub level: usize,
    pub mesh: Arc<Triangulation>,
    pub spaces: SystemSpaces,
    pub result: SolveResult,
    pub report: ErrorReport,
    /// Triangles marked for the next refinement (all of them in uniform mode).
    pub marked: Vec<usize>,
    pub elapsed_ms: f64,
}

impl LevelRecord {
    pub fn trial_dofs(&self) -> usize {
        self.spaces.trial_dofs()
    }

    pub fn total_dofs(&self) -> usize {
        self.spaces.total_dofs()
    }
}

pub type TrueErrorFn<'a> = &'a (dyn Fn(&DiscreteField, &DiscreteField) -> Result<f64> + Sync);

/// Solve, estimate, mark, refine. The test meshes are rederived from `root`
/// on every level. `observe` sees each level as soon as it is solved.
pub fn adaptive_loop(
    root: &Triangulation,
    data: &ProblemData,
    cfg: &LoopConfig,
    true_error: Option<TrueErrorFn<'_>>,
    mut observe: impl FnMut(&LevelRecord) -> Result<()>,
) -> Result<Vec<LevelRecord>> {
    if cfg.q > 1 {
        return Err(Error::Config(format!("trial order q must be 0 or 1, got {}", cfg.q)));
    }
    cfg.marking.validate()?;
    let mut mesh = Arc::new(root.clone());
    let mut history = Vec::new();
    for level in 0..cfg.max_levels {
        let start = Instant::now();
        mesh.check_conformity()?;
        let spaces = SystemSpaces::build(root, mesh.clone(), cfg.q, cfg.test_mesh)?;
        if spaces.trial_dofs() > cfg.max_dofs && level > 0 {
            break;
        }
        let system = assemble_system(&spaces, data, &cfg.assembly)?;
        let result = solve_saddle(&system, &cfg.solver)?;
        let elapsed_ms = start.elapsed().as_secs_f64() * 1e3;
        let mut report = global_estimator(&result, &system, data, &cfg.estimator)?;
        if let Some(f) = true_error {
            report = report.with_true_error(f(&result.p, &result.u)?);
        }
        let marked = match cfg.mode {
            RefinementMode::Uniform => (0..mesh.n_triangles()).collect(),
            RefinementMode::Adaptive => mark(&report.eta_sq, &cfg.marking)?,
        };
        let record = LevelRecord { level, mesh: mesh.clone(), spaces, result, report, marked, elapsed_ms };
        observe(&record)?;
        let next = match cfg.mode {
            RefinementMode::Uniform => uniform_refine(&mesh),
            RefinementMode::Adaptive if record.marked.is_empty() => {
                history.push(record);
                break;
            }
            RefinementMode::Adaptive => refine(&mesh, &record.marked)?,
        };
        history.push(record);
        mesh = Arc::new(next);
    }
    Ok(history)
}
