//! Inf-sup probes against enriched test spaces and manufactured-solution checks.

use std::sync::Arc;

use faer::{Mat, Side};

use crate::assembly::{
    assemble_coupling_dirichlet, assemble_coupling_neumann, assemble_gram_h1semi, assemble_gram_hdiv, assemble_system,
    AssemblyOptions, ProblemData,
};
use crate::elements::Family;
use crate::error::{Error, Result};
use crate::mesh::{initial_mesh_rect, refine, uniform_refine, BoundaryPart, Triangulation};
use crate::solver::{solve_saddle, SolverOptions, SpdFactor};
use crate::spaces::{build_space, interpolate_scalar, DiscreteField, interpolate_vector, FeSpace, SystemSpaces, TestMeshMode};
use crate::sparse::SparseMatrix;

#[derive(Clone, Debug)]
pub struct InfSupProbe {
    pub gamma_hat: f64,
    pub trial_dofs: usize,
    /// Trial DOFs with nonzero trace on the probed boundary part.
    pub boundary_dofs: usize,
    pub reference_space: String,
}

/// Gram-projected boundary form Cᵀ A⁻¹ C on the columns `cols`.
pub fn projected_form(a: &SparseMatrix, c: &SparseMatrix, cols: &[usize]) -> Result<Mat<f64>> {
    let factor = SpdFactor::new(a, "probe test Gram")?;
    let ct = c.transpose();
    let mut rhs = Mat::zeros(c.nrows(), cols.len());
    for (k, &j) in cols.iter().enumerate() {
        for (i, v) in ct.row(j) {
            rhs[(i, k)] = v;
        }
    }
    let x = factor.solve_mat(&rhs);
    let mut g = Mat::zeros(cols.len(), cols.len());
    for k in 0..cols.len() {
        let col: Vec<f64> = (0..x.nrows()).map(|i| x[(i, k)]).collect();
        let y = c.transpose_mul_vec(&col);
        for (r, &j) in cols.iter().enumerate() {
            g[(r, k)] = y[j];
        }
    }
    Ok(Mat::from_fn(g.nrows(), g.ncols(), |i, j| 0.5 * (g[(i, j)] + g[(j, i)])))
}

/// sqrt of the smallest eigenvalue of G v = μ G_ref v, with G_ref SPD.
pub fn generalized_infsup(g: &Mat<f64>, g_ref: &Mat<f64>) -> Result<f64> {
    let n = g.nrows();
    if n == 0 {
        return Err(Error::ProbeUndefined("no trial direction with nonzero trace".into()));
    }
    let llt = g_ref
        .llt(Side::Lower)
        .map_err(|_| Error::ProbeUndefined("reference boundary form is singular".into()))?;
    let l = llt.L();
    // L⁻¹ G L⁻ᵀ by two triangular solves.
    let mut y = g.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, y.as_mut(), faer::Par::Seq);
    let mut z = y.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, z.as_mut(), faer::Par::Seq);
    let sym = Mat::from_fn(n, n, |i, j| 0.5 * (z[(i, j)] + z[(j, i)]));
    let ev = sym
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| Error::ProbeUndefined("eigenvalue iteration failed".into()))?;
    let min = ev.into_iter().fold(f64::INFINITY, f64::min);
    Ok(min.max(0.0).sqrt())
}

/// Columns with a coupling entry above roundoff relative to the largest one.
fn nonzero_columns(c: &SparseMatrix) -> Vec<usize> {
    let cut = 1e-11 * c.max_abs();
    let ct = c.transpose();
    (0..ct.nrows()).filter(|&j| ct.row(j).any(|(_, v)| v.abs() > cut)).collect()
}

fn probe(
    trial: &FeSpace,
    test: (&SparseMatrix, &SparseMatrix),
    reference: (&SparseMatrix, &SparseMatrix),
    description: String,
) -> Result<InfSupProbe> {
    let cols = nonzero_columns(reference.1);
    let g = projected_form(test.0, test.1, &cols)?;
    let g_ref = projected_form(reference.0, reference.1, &cols)?;
    Ok(InfSupProbe {
        gamma_hat: generalized_infsup(&g, &g_ref)?,
        trial_dofs: trial.n_dofs(),
        boundary_dofs: cols.len(),
        reference_space: description,
    })
}

/// Ratio of the discrete Dirichlet trace dual norm over `yb` to the one over
/// `yb_ref`, minimized over trial functions with nonzero trace on Γ_D.
pub fn infsup_probe_dirichlet(u: &FeSpace, yb: &FeSpace, yb_ref: &FeSpace, opts: &AssemblyOptions) -> Result<InfSupProbe> {
    let test = (assemble_gram_hdiv(yb, opts)?, assemble_coupling_dirichlet(yb, u, opts)?);
    let reference = (assemble_gram_hdiv(yb_ref, opts)?, assemble_coupling_dirichlet(yb_ref, u, opts)?);
    let desc = format!("RT{} on {} triangles", yb_ref.degree(), yb_ref.mesh().n_triangles());
    probe(u, (&test.0, &test.1), (&reference.0, &reference.1), desc)
}

/// Neumann analogue of [`infsup_probe_dirichlet`] with H¹-seminorm Grams.
pub fn infsup_probe_neumann(p: &FeSpace, yc: &FeSpace, yc_ref: &FeSpace, opts: &AssemblyOptions) -> Result<InfSupProbe> {
    let test = (assemble_gram_h1semi(yc, opts)?, assemble_coupling_neumann(yc, p, opts)?);
    let reference = (assemble_gram_h1semi(yc_ref, opts)?, assemble_coupling_neumann(yc_ref, p, opts)?);
    let desc = format!("P{} on {} triangles", yc_ref.degree(), yc_ref.mesh().n_triangles());
    probe(p, (&test.0, &test.1), (&reference.0, &reference.1), desc)
}

/// Enriched reference test spaces: one uniform refinement of each test mesh
/// and one polynomial degree more.
pub fn reference_spaces(spaces: &SystemSpaces) -> Result<(FeSpace, FeSpace)> {
    let (yb, yc) = (&spaces.yb, &spaces.yc);
    let yb_ref = build_space(Arc::new(uniform_refine(yb.mesh())), Family::RaviartThomas, yb.degree() + 1, yb.constraint())?;
    let yc_ref = build_space(Arc::new(uniform_refine(yc.mesh())), Family::Lagrange, yc.degree() + 1, yc.constraint())?;
    Ok((yb_ref, yc_ref))
}

/// Both probes for a system; the Neumann probe is `None` when Γ_N is empty.
pub fn probe_system(spaces: &SystemSpaces, opts: &AssemblyOptions) -> Result<(InfSupProbe, Option<InfSupProbe>)> {
    let (yb_ref, yc_ref) = reference_spaces(spaces)?;
    let d = infsup_probe_dirichlet(&spaces.u, &spaces.yb, &yb_ref, opts)?;
    let n = if spaces.p.mesh().has_part(BoundaryPart::Neumann) {
        Some(infsup_probe_neumann(&spaces.p, &spaces.yc, &yc_ref, opts)?)
    } else {
        None
    };
    Ok((d, n))
}

#[derive(Clone, Debug)]
pub struct ManufacturedCase {
    pub q: usize,
    pub diffusion: [f64; 2],
    pub reaction: f64,
    pub mode: TestMeshMode,
    pub solution: &'static str,
    /// max |coefficient error| of (p, u) against their interpolants.
    pub trial_error: f64,
    /// max(‖λ_b‖_{H(div)}, ‖λ_c‖_{H¹}).
    pub multiplier: f64,
    /// ‖p − p*‖²_{H(div)} + ‖u − u*‖²_{H¹}, square-rooted.
    pub true_error: f64,
    pub passed: bool,
}

/// Polynomial solution of degree q + 1 on the mixed rectangle.
pub fn manufactured_problem(q: usize, a: [f64; 2], b: f64) -> (ProblemData, fn([f64; 2]) -> f64, fn([f64; 2]) -> [f64; 2]) {
    let (u, grad): (fn([f64; 2]) -> f64, fn([f64; 2]) -> [f64; 2]) = if q == 0 {
        (|x| x[0] + x[1], |_| [1.0, 1.0])
    } else {
        (|x| x[0] * x[0] - x[1] * x[1], |x| [2.0 * x[0], -2.0 * x[1]])
    };
    let lap = if q == 0 { 0.0 } else { 2.0 * a[0] - 2.0 * a[1] };
    // The Neumann part lies on y = 0 with outward normal (0, −1).
    let data = ProblemData::poisson(move |x| b * u(x) - lap, u, move |x| -a[1] * grad(x)[1])
        .with_diffusion(move |_| [[a[0], 0.0], [0.0, a[1]]]);
    let data = if b != 0.0 { data.with_reaction(move |_| b) } else { data };
    (data, u, grad)
}

/// Runs every manufactured case on a locally refined mesh. Each case passes
/// when trial, multiplier and true errors are all at most `tol`.
pub fn manufactured_suite(tol: f64) -> Result<Vec<ManufacturedCase>> {
    let root = initial_mesh_rect();
    let mesh = Arc::new(refine(&uniform_refine(&root), &[0, 3, 5])?);
    let mut out = Vec::new();
    for q in [0, 1] {
        for diffusion in [[1.0, 1.0], [2.0, 1.0]] {
            for reaction in [0.0, 1.0] {
                for mode in [TestMeshMode::Matched, TestMeshMode::Full] {
                    out.push(run_case(&root, mesh.clone(), q, diffusion, reaction, mode, tol)?);
                }
            }
        }
    }
    Ok(out)
}

fn run_case(
    root: &Triangulation,
    mesh: Arc<Triangulation>,
    q: usize,
    diffusion: [f64; 2],
    reaction: f64,
    mode: TestMeshMode,
    tol: f64,
) -> Result<ManufacturedCase> {
    let (data, u, grad) = manufactured_problem(q, diffusion, reaction);
    let spaces = SystemSpaces::build(root, mesh, q, mode)?;
    let opts = AssemblyOptions::default();
    let sys = assemble_system(&spaces, &data, &opts)?;
    let r = solve_saddle(&sys, &SolverOptions::default())?;
    let flux = move |x: [f64; 2]| {
        let g = grad(x);
        [diffusion[0] * g[0], diffusion[1] * g[1]]
    };
    let ui = interpolate_scalar(&spaces.u, u)?;
    let pi = interpolate_vector(&spaces.p, flux)?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let trial_error = diff(r.u.coeffs(), ui.coeffs()).max(diff(r.p.coeffs(), pi.coeffs()));
    let norm = |f: &DiscreteField| f.cell_norms_sq(2 * q + 6).iter().map(|c| c[0] + c[1]).sum::<f64>().sqrt();
    let multiplier = norm(&r.lambda_b).max(norm(&r.lambda_c));
    let exact = crate::experiments::ExactSolution::new(u, grad);
    let div_exact = move |x: [f64; 2]| reaction * u(x) - (data.g)(x);
    let true_error = crate::experiments::true_error_with(&r.p, &r.u, &exact, &|x| flux(x), &div_exact, &[])?.combined;
    let solution = if q == 0 { "x+y" } else { "x^2-y^2" };
    let passed = trial_error <= tol && multiplier <= tol && true_error <= tol;
    Ok(ManufacturedCase { q, diffusion, reaction, mode, solution, trial_error, multiplier, true_error, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd(n: usize, rng: &mut ChaCha8Rng) -> Mat<f64> {
        let r = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        &r * r.transpose() + Mat::<f64>::identity(n, n)
    }

    #[test]
    fn identical_forms_give_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = spd(5, &mut rng);
        assert!((generalized_infsup(&g, &g).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn basis_change_leaves_probe_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (g, g_ref) = (spd(6, &mut rng), spd(6, &mut rng));
        let g = &g * faer::Scale(0.1);
        let base = generalized_infsup(&g, &g_ref).unwrap();
        let r = Mat::from_fn(6, 6, |i, j| if i == j { 2.0 } else { rng.gen_range(-0.3..0.3) });
        let moved = generalized_infsup(&(r.transpose() * &g * &r), &(r.transpose() * &g_ref * &r)).unwrap();
        assert!((base - moved).abs() < 1e-10);
    }

    #[test]
    fn empty_trace_is_undefined() {
        assert!(generalized_infsup(&Mat::zeros(0, 0), &Mat::zeros(0, 0)).is_err());
    }

    #[test]
    fn same_test_space_gives_unit_ratio() {
        let root = initial_mesh_rect();
        let spaces = SystemSpaces::build(&root, Arc::new(root.clone()), 0, TestMeshMode::Matched).unwrap();
        let opts = AssemblyOptions::default();
        let d = infsup_probe_dirichlet(&spaces.u, &spaces.yb, &spaces.yb, &opts).unwrap();
        assert!((d.gamma_hat - 1.0).abs() < 1e-10);
        let n = infsup_probe_neumann(&spaces.p, &spaces.yc, &spaces.yc, &opts).unwrap();
        assert!((n.gamma_hat - 1.0).abs() < 1e-10);
    }

    #[test]
    fn initial_mesh_probes_are_positive() {
        let root = initial_mesh_rect();
        for q in [0, 1] {
            let spaces = SystemSpaces::build(&root, Arc::new(root.clone()), q, TestMeshMode::Matched).unwrap();
            let (d, n) = probe_system(&spaces, &AssemblyOptions::default()).unwrap();
            let n = n.unwrap();
            assert!(d.gamma_hat > 0.0 && d.gamma_hat <= 1.0 + 1e-12, "{d:?}");
            assert!(n.gamma_hat > 0.0 && n.gamma_hat <= 1.0 + 1e-12, "{n:?}");
        }
    }
}
