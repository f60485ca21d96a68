use std::sync::Arc;

use mildls::assembly::{assemble_system, AssemblyOptions, ProblemData};
use mildls::mesh::{initial_mesh_rect, refine, uniform_refine};
use mildls::solver::{residual_functionals, solve_saddle, SolverOptions};
use mildls::spaces::{interpolate_scalar, interpolate_vector, SystemSpaces, TestMeshMode};

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn manufactured(q: usize, a: [f64; 2], b: f64) -> (ProblemData, impl Fn([f64; 2]) -> f64 + Clone, impl Fn([f64; 2]) -> [f64; 2] + Clone) {
    let (u, grad): (fn([f64; 2]) -> f64, fn([f64; 2]) -> [f64; 2]) = if q == 0 {
        (|x| x[0] + x[1], |_| [1.0, 1.0])
    } else {
        (|x| x[0] * x[0] - x[1] * x[1], |x| [2.0 * x[0], -2.0 * x[1]])
    };
    let lap = if q == 0 { 0.0 } else { 2.0 * a[0] - 2.0 * a[1] };
    let flux = move |x: [f64; 2]| {
        let g = grad(x);
        [a[0] * g[0], a[1] * g[1]]
    };
    // On the Neumann part y = 0 the outward normal is (0, −1).
    let data = ProblemData::poisson(move |x| b * u(x) - lap, u, move |x| -flux(x)[1])
        .with_diffusion(move |_| [[a[0], 0.0], [0.0, a[1]]])
        .with_reaction(move |_| b);
    (data, u, flux)
}

#[test]
fn manufactured_solutions_are_reproduced() {
    let root = initial_mesh_rect();
    let mesh = refine(&uniform_refine(&root), &[0, 3, 5]).unwrap();
    let mesh = Arc::new(mesh);
    for q in [0, 1] {
        for a in [[1.0, 1.0], [2.0, 1.0]] {
            for b in [0.0, 1.0] {
                for mode in [TestMeshMode::Matched, TestMeshMode::Full] {
                    let (data, u, flux) = manufactured(q, a, b);
                    let spaces = SystemSpaces::build(&root, mesh.clone(), q, mode).unwrap();
                    let sys = assemble_system(&spaces, &data, &AssemblyOptions::default()).unwrap();
                    let r = solve_saddle(&sys, &SolverOptions::default()).unwrap();
                    let ui = interpolate_scalar(&spaces.u, u.clone()).unwrap();
                    let pi = interpolate_vector(&spaces.p, flux.clone()).unwrap();
                    let eu = max_diff(r.u.coeffs(), ui.coeffs());
                    let ep = max_diff(r.p.coeffs(), pi.coeffs());
                    let lb = r.lambda_b.coeffs().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let lc = r.lambda_c.coeffs().iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let res = residual_functionals(&r, &sys, &data).unwrap();
                    assert!(eu < 1e-9 && ep < 1e-9 && lb < 1e-9 && lc < 1e-9, "q={q} a={a:?} b={b} {mode:?}: {eu:e} {ep:e} {lb:e} {lc:e} {res:?}");
                }
            }
        }
    }
}
