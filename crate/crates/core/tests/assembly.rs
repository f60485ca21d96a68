use std::sync::Arc;

use mildls::assembly::{
    assemble_boundary_load, assemble_coupling_dirichlet, assemble_coupling_neumann, assemble_gram_h1semi,
    assemble_gram_hdiv, assemble_ls_gram, assemble_system, AssemblyOptions, ProblemData,
};
use mildls::elements::quadrature::gauss_legendre;
use mildls::elements::{edge_quadrature, Family};
use mildls::experiments::lookup;
use mildls::mesh::{initial_mesh_rect, refine, uniform_refine, BoundaryPart, Triangulation};
use mildls::solver::smallest_eigenvalue;
use mildls::spaces::{build_space, interpolate_scalar, interpolate_vector, DiscreteField, FeSpace, SystemSpaces, TestMeshMode};
use mildls::sparse::SparseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn local_mesh() -> Triangulation {
    let root = initial_mesh_rect();
    refine(&uniform_refine(&root), &[0, 4, 11]).unwrap()
}

fn assert_symmetric(m: &SparseMatrix, what: &str) {
    let defect = m.symmetry_defect();
    assert!(defect <= 1e-12 * m.max_abs(), "{what}: symmetry defect {defect:e}");
}

#[test]
fn test_grams_are_symmetric_positive_definite() {
    let root = initial_mesh_rect();
    let mesh = Arc::new(local_mesh());
    let opts = AssemblyOptions::default();
    for q in 0..=1 {
        for mode in [TestMeshMode::Matched, TestMeshMode::Full] {
            let s = SystemSpaces::build(&root, mesh.clone(), q, mode).unwrap();
            let a_b = assemble_gram_hdiv(&s.yb, &opts).unwrap();
            let a_c = assemble_gram_h1semi(&s.yc, &opts).unwrap();
            assert_symmetric(&a_b, "A_b");
            assert_symmetric(&a_c, "A_c");
            assert!(smallest_eigenvalue(&a_b) > 0.0);
            assert!(smallest_eigenvalue(&a_c) > 0.0);
        }
    }
}

#[test]
fn ls_gram_and_full_system_are_symmetric() {
    let root = initial_mesh_rect();
    let mesh = Arc::new(local_mesh());
    let opts = AssemblyOptions::default();
    let data = ProblemData::poisson(|x| x[0], |_| 1.0, |_| 0.0)
        .with_diffusion(|_| [[2.0, 0.5], [0.5, 1.0]])
        .with_reaction(|x| 1.0 + x[1]);
    for q in 0..=1 {
        let s = SystemSpaces::build(&root, mesh.clone(), q, TestMeshMode::Matched).unwrap();
        let m = assemble_ls_gram(&s.p, &s.u, &data, &opts).unwrap();
        assert_symmetric(&m, "M_LS");
        let lo = smallest_eigenvalue(&m);
        assert!(lo >= -1e-12 * m.max_abs(), "M_LS smallest eigenvalue {lo:e}");
        let full = assemble_system(&s, &data, &opts).unwrap().full_matrix();
        assert_symmetric(&full, "block matrix");
    }
}

fn random_field(space: &Arc<FeSpace>, rng: &mut ChaCha8Rng) -> DiscreteField {
    let coeffs = (0..space.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    DiscreteField::new(space.clone(), coeffs).unwrap()
}

/// ∫ over `part` of (test trace) · (trial trace), summed edge by edge on the
/// trial mesh; the test triangle is the one sharing the same edge.
fn edge_oracle(test: &DiscreteField, trial: &DiscreteField, part: BoundaryPart) -> f64 {
    let fine = trial.space().mesh();
    let coarse = test.space().mesh();
    let rule = edge_quadrature(16);
    let mut total = 0.0;
    for e in fine.part_edges(part) {
        let ce = coarse.part_edges(part).into_iter().find(|&c| coarse.edge_key(c) == fine.edge_key(e)).unwrap();
        let (tf, tc) = (fine.edge_triangles(e)[0], coarse.edge_triangles(ce)[0]);
        let [a, b] = fine.edge(e);
        let (p, q) = (fine.vertex(a), fine.vertex(b));
        let len = fine.edge_length(e);
        // Outward normal: rotate the tangent and flip it away from the owning triangle.
        let mut n = [(q.y - p.y) / len, (p.x - q.x) / len];
        let c = fine.triangle_vertices(tf).iter().fold([0.0, 0.0], |s, v| [s[0] + v.x / 3.0, s[1] + v.y / 3.0]);
        if (c[0] - p.x) * n[0] + (c[1] - p.y) * n[1] > 0.0 {
            n = [-n[0], -n[1]];
        }
        for (s, w) in rule.iter() {
            let x = [p.x + s * (q.x - p.x), p.y + s * (q.y - p.y)];
            let ft = trial.eval(tf, &[trial.space().element_map(tf).to_reference(x)])[0];
            let ct = test.eval(tc, &[test.space().element_map(tc).to_reference(x)])[0];
            let trace = |v: [f64; 2]| v[0] * n[0] + v[1] * n[1];
            let (fv, cv) = match (ft, ct) {
                (mildls::spaces::FieldSample::Scalar { value, .. }, c) => (value, trace(c.vector())),
                (f, mildls::spaces::FieldSample::Scalar { value, .. }) => (trace(f.vector()), value),
                _ => unreachable!(),
            };
            total += w * len * fv * cv;
        }
    }
    total
}

#[test]
fn couplings_match_edgewise_oracle() {
    let root = initial_mesh_rect();
    let mesh = Arc::new(local_mesh());
    let opts = AssemblyOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for q in 0..=1 {
        for mode in [TestMeshMode::Matched, TestMeshMode::Full] {
            let s = SystemSpaces::build(&root, mesh.clone(), q, mode).unwrap();
            let c_d = assemble_coupling_dirichlet(&s.yb, &s.u, &opts).unwrap();
            let c_n = assemble_coupling_neumann(&s.yc, &s.p, &opts).unwrap();
            for _ in 0..3 {
                let (v, w) = (random_field(&s.yb, &mut rng), random_field(&s.u, &mut rng));
                let form: f64 = v.coeffs().iter().zip(c_d.mul_vec(w.coeffs())).map(|(a, b)| a * b).sum();
                let oracle = edge_oracle(&v, &w, BoundaryPart::Dirichlet);
                assert!((form - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()), "C_D q={q}: {form} vs {oracle}");
                let (mu, p) = (random_field(&s.yc, &mut rng), random_field(&s.p, &mut rng));
                let form: f64 = mu.coeffs().iter().zip(c_n.mul_vec(p.coeffs())).map(|(a, b)| a * b).sum();
                let oracle = edge_oracle(&mu, &p, BoundaryPart::Neumann);
                assert!((form - oracle).abs() <= 1e-12 * (1.0 + oracle.abs()), "C_N q={q}: {form} vs {oracle}");
            }
        }
    }
}

#[test]
fn dirichlet_coupling_rows_vanish_away_from_the_boundary() {
    let mesh = Arc::new(local_mesh());
    let opts = AssemblyOptions::default();
    let yb = Arc::new(build_space(mesh.clone(), Family::RaviartThomas, 1, Some(BoundaryPart::Neumann)).unwrap());
    let u = Arc::new(build_space(mesh.clone(), Family::Lagrange, 1, None).unwrap());
    let c = assemble_coupling_dirichlet(&yb, &u, &opts).unwrap();
    let mut on_boundary = vec![false; yb.n_dofs()];
    for e in mesh.part_edges(BoundaryPart::Dirichlet) {
        let t = mesh.edge_triangles(e)[0];
        let local = mesh.tri_edges(t).iter().position(|&x| x == e).unwrap();
        for k in 0..2 {
            if let Some(g) = yb.cell_dofs(t)[local * 2 + k].global {
                on_boundary[g] = true;
            }
        }
    }
    for (i, &b) in on_boundary.iter().enumerate() {
        let row_max = c.row(i).map(|(_, v)| v.abs()).fold(0.0, f64::max);
        if b {
            assert!(row_max > 1e-3);
        } else {
            assert!(row_max <= 1e-13, "row {i}: {row_max:e}");
        }
    }
}

#[test]
fn neumann_coupling_of_unit_normal_flux_against_hat() {
    // Γ_N = [−1,0]×{0} is split at (−0.5, 0) after one uniform refinement.
    let mesh = Arc::new(uniform_refine(&initial_mesh_rect()));
    let opts = AssemblyOptions::default();
    let yc = Arc::new(build_space(mesh.clone(), Family::Lagrange, 1, Some(BoundaryPart::Dirichlet)).unwrap());
    let p = Arc::new(build_space(mesh.clone(), Family::RaviartThomas, 0, None).unwrap());
    let c = assemble_coupling_neumann(&yc, &p, &opts).unwrap();
    let hat = (0..mesh.n_vertices())
        .find(|&v| (mesh.vertex(v).x + 0.5).abs() < 1e-15 && mesh.vertex(v).y == 0.0)
        .unwrap();
    let g_hat = (0..mesh.n_triangles())
        .flat_map(|t| mesh.triangle(t).v.into_iter().zip(yc.cell_dofs(t).iter().copied()))
        .find(|(v, _)| *v == hat)
        .and_then(|(_, d)| d.global)
        .unwrap();
    // Outward normal on y = 0 is (0, −1).
    let unit = interpolate_vector(&p, |_| [0.0, -1.0]).unwrap();
    let y = c.mul_vec(unit.coeffs());
    assert!((y[g_hat] - 0.5).abs() < 1e-14, "{}", y[g_hat]);
    let tangential = interpolate_vector(&p, |_| [1.0, 0.0]).unwrap();
    assert!(c.mul_vec(tangential.coeffs()).iter().all(|v| v.abs() < 1e-14));
}

#[test]
fn seminorm_gram_of_bubble_matches_tensor_oracle() {
    let mesh = Arc::new(local_mesh());
    let opts = AssemblyOptions::default();
    let space = Arc::new(build_space(mesh, Family::Lagrange, 4, Some(BoundaryPart::Dirichlet)).unwrap());
    let w = |x: [f64; 2]| (1.0 - x[0] * x[0]) * x[1] * (1.0 - x[1]);
    let grad = |x: [f64; 2]| [-2.0 * x[0] * x[1] * (1.0 - x[1]), (1.0 - x[0] * x[0]) * (1.0 - 2.0 * x[1])];
    let field = interpolate_scalar(&space, w).unwrap();
    let k = assemble_gram_h1semi(&space, &opts).unwrap();
    let form = k.quad_form(field.coeffs());
    // Tensor Gauss rule on the rectangle, exact for the degree-6 integrand.
    let (t, w8) = gauss_legendre(8);
    let mut oracle = 0.0;
    for (i, &s) in t.iter().enumerate() {
        for (j, &r) in t.iter().enumerate() {
            let g = grad([s, 0.5 * (r + 1.0)]);
            oracle += w8[i] * w8[j] * 0.5 * (g[0] * g[0] + g[1] * g[1]);
        }
    }
    assert!((form - oracle).abs() <= 1e-10, "{form} vs {oracle}");
}

#[test]
fn doubling_quadrature_leaves_polynomial_assembly_unchanged() {
    let root = initial_mesh_rect();
    let mesh = Arc::new(local_mesh());
    let data = lookup("poly-linear").unwrap().data.with_reaction(|x| 1.0 + x[0]);
    for q in 0..=1 {
        let s = SystemSpaces::build(&root, mesh.clone(), q, TestMeshMode::Matched).unwrap();
        let base = AssemblyOptions::default();
        let degree = 2 * (q + 2) + 4;
        let doubled = AssemblyOptions { volume_degree: Some(2 * degree), boundary_extra: 2 * base.boundary_extra + 8, ..base };
        let (a, b) = (assemble_system(&s, &data, &base).unwrap(), assemble_system(&s, &data, &doubled).unwrap());
        for (x, y) in [(&a.a_b, &b.a_b), (&a.a_c, &b.a_c), (&a.m_ls, &b.m_ls), (&a.c_d, &b.c_d), (&a.c_n, &b.c_n)] {
            let diff = x
                .triplets()
                .map(|(i, j, v)| (v - y.get(i, j)).abs())
                .chain(y.triplets().map(|(i, j, v)| (v - x.get(i, j)).abs()))
                .fold(0.0, f64::max);
            assert!(diff <= 1e-12 * x.max_abs(), "q={q}: {diff:e} of {:e}", x.max_abs());
        }
        for (x, y) in [(&a.rhs_b, &b.rhs_b), (&a.rhs_c, &b.rhs_c), (&a.rhs_pu, &b.rhs_pu)] {
            let diff = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff <= 1e-12, "q={q}: {diff:e}");
        }
    }
}

#[test]
fn singular_datum_vanishes_on_positive_axis() {
    let problem = lookup("singular-mixed").unwrap();
    let mesh = Arc::new(initial_mesh_rect());
    let opts = AssemblyOptions::default();
    let yb = Arc::new(build_space(mesh.clone(), Family::RaviartThomas, 1, Some(BoundaryPart::Neumann)).unwrap());
    let load =
        assemble_boundary_load(&yb, BoundaryPart::Dirichlet, &*problem.data.h_d, &problem.data.singular_points, &opts)
            .unwrap();
    let origin = (0..mesh.n_vertices()).find(|&v| mesh.vertex(v).x == 0.0 && mesh.vertex(v).y == 0.0).unwrap();
    let right = (0..mesh.n_vertices()).find(|&v| mesh.vertex(v).x == 1.0 && mesh.vertex(v).y == 0.0).unwrap();
    let e = mesh.find_edge(origin, right).unwrap();
    let t = mesh.edge_triangles(e)[0];
    let local = mesh.tri_edges(t).iter().position(|&x| x == e).unwrap();
    for k in 0..2 {
        let g = yb.cell_dofs(t)[local * 2 + k].global.unwrap();
        assert_eq!(load[g], 0.0);
    }
    assert!(load.iter().any(|v| v.abs() > 1e-3));
}
