//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any criterion failed.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mildls::adaptivity::{adaptive_loop, mark, LoopConfig, MarkingConfig, MarkingStrategy, RefinementMode};
use mildls::assembly::{assemble_gram_h1semi, assemble_gram_hdiv, AssemblyOptions};
use mildls::elements::{edge_quadrature, Family};
use mildls::experiments::{lookup, probe_history, rate, rate_last, run, run_levels, CsvRow, ExperimentConfig};
use mildls::mesh::{derive_boundary_matched_mesh, BoundaryPart, Triangulation};
use mildls::solver::smallest_eigenvalue;
use mildls::spaces::{build_space, DiscreteField, TestMeshMode};
use mildls::verification::manufactured_suite;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let out = f();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    println!(
        "{} criterion {id} ({name}): {} [{:.1} s of {:.0} s]",
        if pass { "PASS" } else { "FAIL" },
        out.detail,
        elapsed.as_secs_f64(),
        budget.as_secs_f64()
    );
    pass
}

fn study(problem: &str, q: usize, mode: RefinementMode, max_dofs: usize) -> Vec<CsvRow> {
    let cfg = ExperimentConfig { problem: problem.into(), q, mode, max_dofs, probe_max_dofs: 0, ..ExperimentConfig::default() };
    run_levels(&cfg, |_| {}).unwrap()
}

fn error_history(rows: &[CsvRow]) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.trial_dofs as f64, r.true_error)).collect()
}

fn exactness() -> Outcome {
    let cases = manufactured_suite(1e-9).unwrap();
    let worst = cases.iter().map(|c| c.true_error.max(c.multiplier)).fold(0.0, f64::max);
    let pass = cases.len() == 16 && cases.iter().all(|c| c.true_error <= 1e-9 && c.multiplier <= 1e-9);
    Outcome { pass, detail: format!("{} cases, worst error/multiplier {worst:.2e}", cases.len()) }
}

fn smooth_rates() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for q in 0..=1 {
        let rows = study("smooth", q, RefinementMode::Uniform, 100_000);
        let r = rate_last(&error_history(&rows), 3).unwrap();
        let target = (q + 1) as f64 / 2.0;
        pass &= rows.len() >= 6 && (r - target).abs() <= 0.1;
        detail.push(format!("q={q}: {r:.4} over {} levels (target {target})", rows.len()));
    }
    Outcome { pass, detail: detail.join("; ") }
}

fn singular_uniform_rate() -> Outcome {
    let rows = study("singular-mixed", 0, RefinementMode::Uniform, 100_000);
    let r = rate_last(&error_history(&rows), 3).unwrap();
    Outcome { pass: rows.len() >= 7 && (r - 0.25).abs() <= 0.05, detail: format!("{r:.4} over {} levels (target 0.25)", rows.len()) }
}

fn adaptive_rates(runs: &[Vec<CsvRow>; 2]) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (q, (rows, (target, tol))) in runs.iter().zip([(0.5, 0.10), (1.0, 0.15)]).enumerate() {
        let r = rate(&error_history(rows)).unwrap();
        pass &= rows.len() >= 15 && (r - target).abs() <= tol;
        detail.push(format!(
            "q={q}: {r:.4} over {} levels up to {} trial DOFs (target {target} ± {tol})",
            rows.len(),
            rows.last().unwrap().trial_dofs
        ));
    }
    Outcome { pass, detail: detail.join("; ") }
}

fn effectivity_stability(runs: &[Vec<CsvRow>; 2]) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (q, rows) in runs.iter().enumerate() {
        let tail: Vec<f64> = rows[rows.len().saturating_sub(6)..].iter().map(|r| r.effectivity).collect();
        let (lo, hi) = (tail.iter().cloned().fold(f64::INFINITY, f64::min), tail.iter().cloned().fold(0.0, f64::max));
        pass &= tail.len() == 6 && lo > 0.0 && hi / lo <= 2.0;
        detail.push(format!("q={q}: effectivity in [{lo:.3}, {hi:.3}], ratio {:.3}", hi / lo));
    }
    Outcome { pass, detail: detail.join("; ") }
}

fn probe_stability() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for q in 0..=1 {
        for mode in [TestMeshMode::Matched, TestMeshMode::Full] {
            let cfg = ExperimentConfig { q, test_mesh: mode, ..ExperimentConfig::default() };
            let rows = probe_history(&cfg, 5).unwrap();
            let (d0, n0) = (rows[0].gamma_hat_d, rows[0].gamma_hat_n.unwrap_or(f64::NAN));
            let min_d = rows.iter().map(|r| r.gamma_hat_d).fold(f64::INFINITY, f64::min);
            let min_n = rows.iter().map(|r| r.gamma_hat_n.unwrap_or(f64::NAN)).fold(f64::INFINITY, f64::min);
            pass &= rows.len() >= 5 && min_d >= 0.5 * d0 && min_n >= 0.5 * n0;
            detail.push(format!("q={q} {}: D {d0:.3}->min {min_d:.3}, N {n0:.3}->min {min_n:.3}", mode.name()));
        }
    }
    Outcome { pass, detail: detail.join("; ") }
}

/// Largest L₂ jump of the normal (RT) or full (Lagrange) trace over interior edges.
fn worst_jump(field: &DiscreteField) -> f64 {
    let mesh = field.space().mesh();
    let rule = edge_quadrature(12);
    let mut worst = 0.0f64;
    for e in 0..mesh.n_edges() {
        let tris = mesh.edge_triangles(e);
        if tris.len() != 2 {
            continue;
        }
        let [a, b] = mesh.edge(e);
        let (p, q) = (mesh.vertex(a), mesh.vertex(b));
        let len = mesh.edge_length(e);
        let n = [(q.y - p.y) / len, (p.x - q.x) / len];
        let x: Vec<[f64; 2]> = rule.iter().map(|(s, _)| [p.x + s * (q.x - p.x), p.y + s * (q.y - p.y)]).collect();
        let side = |t: usize| {
            let map = field.space().element_map(t);
            field.eval(t, &x.iter().map(|&x| map.to_reference(x)).collect::<Vec<_>>())
        };
        let (l, r) = (side(tris[0]), side(tris[1]));
        let mut jump = 0.0;
        for (k, (_, w)) in rule.iter().enumerate() {
            let d = if field.space().basis().family().is_vector() {
                let (u, v) = (l[k].vector(), r[k].vector());
                (u[0] - v[0]) * n[0] + (u[1] - v[1]) * n[1]
            } else {
                l[k].scalar() - r[k].scalar()
            };
            jump += w * len * d * d;
        }
        worst = worst.max(jump.sqrt());
    }
    worst
}

fn structural_invariants() -> Outcome {
    let mut failures = Vec::new();
    let problem = lookup("singular-mixed").unwrap();
    let root: Triangulation = (problem.root)();
    let mut hist = Vec::new();
    let mut ratio = 0.0f64;
    for q in 0..=1 {
        let cfg = LoopConfig::new(q, RefinementMode::Adaptive, 100_000);
        hist = adaptive_loop(&root, &problem.data, &cfg, None, |_| Ok(())).unwrap();
        // (#T_D − #T_0) / #Γ_D facets, per part, stays below a fixed constant.
        let mut ratios = Vec::new();
        for rec in &hist {
            if !rec.mesh.is_conforming() {
                failures.push(format!("q={q} level {} not conforming", rec.level));
            }
            if (rec.mesh.total_area() - 2.0).abs() > 1e-12 {
                failures.push(format!("q={q} level {} area {}", rec.level, rec.mesh.total_area()));
            }
            let r = [BoundaryPart::Dirichlet, BoundaryPart::Neumann].map(|part| {
                let matched = derive_boundary_matched_mesh(&root, &rec.mesh, part).unwrap();
                (matched.n_triangles() - root.n_triangles()) as f64 / rec.mesh.part_edges(part).len() as f64
            });
            ratios.push(r[0].max(r[1]));
        }
        let worst = ratios.iter().cloned().fold(0.0, f64::max);
        ratio = ratio.max(worst);
        if worst > 8.0 {
            failures.push(format!("q={q} matched-mesh ratio {worst:.2}"));
        }
    }

    let last = hist.last().unwrap();
    let opts = AssemblyOptions::default();
    for mode in [TestMeshMode::Matched, TestMeshMode::Full] {
        let s = mildls::spaces::SystemSpaces::build(&root, last.mesh.clone(), 1, mode).unwrap();
        for (name, m) in [("A_b", assemble_gram_hdiv(&s.yb, &opts).unwrap()), ("A_c", assemble_gram_h1semi(&s.yc, &opts).unwrap())] {
            if m.symmetry_defect() > 1e-12 * m.max_abs() || smallest_eigenvalue(&m) <= 0.0 {
                failures.push(format!("{name} not SPD ({})", mode.name()));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut jump = 0.0f64;
    for (family, degree) in [(Family::RaviartThomas, 0), (Family::RaviartThomas, 1), (Family::Lagrange, 1), (Family::Lagrange, 2)] {
        let space = Arc::new(build_space(last.mesh.clone(), family, degree, None).unwrap());
        let coeffs = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        jump = jump.max(worst_jump(&DiscreteField::new(space, coeffs).unwrap()));
    }
    if jump > 1e-10 {
        failures.push(format!("conformity jump {jump:.2e}"));
    }

    for _ in 0..200 {
        let n = rng.gen_range(1..80);
        let eta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let theta = rng.gen_range(0.05..0.95);
        let marked = mark(&eta, &MarkingConfig { theta, strategy: MarkingStrategy::DoerflerSquared }).unwrap();
        let total: f64 = eta.iter().sum();
        let mut sorted = eta.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let sum: f64 = marked.iter().map(|&i| eta[i]).sum();
        let smaller: f64 = sorted[..marked.len().saturating_sub(1)].iter().sum();
        if sum < theta * total * (1.0 - 1e-12) || (!marked.is_empty() && smaller >= theta * total) {
            failures.push("marked set not minimal".into());
            break;
        }
    }

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let files: Vec<Vec<u8>> = dirs
        .iter()
        .map(|d| {
            let cfg = ExperimentConfig { max_dofs: 2000, probe_max_dofs: 300, output_dir: d.path().to_path_buf(), ..ExperimentConfig::default() };
            std::fs::read(run(&cfg, |_| {}).unwrap().csv).unwrap()
        })
        .collect();
    if files[0] != files[1] {
        failures.push("CSV differs between runs".into());
    }

    let detail = if failures.is_empty() {
        format!("{} adaptive meshes checked, max jump {jump:.1e}, matched-mesh ratio {ratio:.2}", hist.len())
    } else {
        failures.join("; ")
    };
    Outcome { pass: failures.is_empty(), detail }
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut results = vec![
        report(1, "exactness", secs(5), exactness),
        report(2, "smooth uniform rates", secs(60), smooth_rates),
        report(3, "singular uniform rate", secs(120), singular_uniform_rate),
    ];

    let runs = [0, 1].map(|q| {
        let t = Instant::now();
        let rows = study("singular-mixed", q, RefinementMode::Adaptive, 100_000);
        (rows, t.elapsed())
    });
    let slowest = runs.iter().map(|r| r.1).max().unwrap();
    let runs = runs.map(|r| r.0);
    results.push(report(4, "singular adaptive rates", secs(600), || {
        let mut out = adaptive_rates(&runs);
        out.pass &= slowest <= secs(600);
        out.detail += &format!("; slowest run {:.1} s", slowest.as_secs_f64());
        out
    }));
    results.push(report(5, "effectivity stability", secs(600), || effectivity_stability(&runs)));
    results.push(report(6, "inf-sup probes", secs(120), probe_stability));
    results.push(report(7, "structural invariants", secs(60), structural_invariants));

    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, &ok)| !ok).map(|(i, _)| i + 1).collect();
    if failed.is_empty() {
        println!("acceptance: all 7 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
