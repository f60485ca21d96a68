//! Block elimination for the saddle-point system.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt as SparseLlt;
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::assembly::{BlockSystem, ProblemData};
use crate::elements::triangle_quadrature;
use crate::error::{Error, Result};
use crate::spaces::DiscreteField;
use crate::sparse::{SparseMatrix, TripletBuilder};

/// Dense eigenvalue diagnostics are skipped above this dimension.
pub const DENSE_DIAGNOSTIC_LIMIT: usize = 4000;

/// Sparse Cholesky factor of an SPD matrix.
pub struct SpdFactor {
    n: usize,
    llt: Option<SparseLlt<usize, f64>>,
}

impl std::fmt::Debug for SpdFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpdFactor").field("n", &self.n).finish_non_exhaustive()
    }
}

impl SpdFactor {
    pub fn new(m: &SparseMatrix, name: &'static str) -> Result<Self> {
        let n = m.nrows();
        if n != m.ncols() {
            return Err(Error::SpaceMismatch(format!("{name} is {}x{}", m.nrows(), m.ncols())));
        }
        if n == 0 {
            return Ok(Self { n, llt: None });
        }
        match m.to_faer().sp_cholesky(Side::Lower) {
            Ok(llt) => Ok(Self { n, llt: Some(llt) }),
            Err(_) => Err(Error::NotPositiveDefinite { name, smallest_eigenvalue: smallest_eigenvalue(m) }),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let Some(llt) = &self.llt else { return Vec::new() };
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = llt.solve(&rhs);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }

    pub fn solve_mat(&self, b: &Mat<f64>) -> Mat<f64> {
        assert_eq!(b.nrows(), self.n);
        match &self.llt {
            Some(llt) => llt.solve(b),
            None => Mat::zeros(0, b.ncols()),
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix by dense decomposition, or NaN
/// when the matrix is too large for a dense diagnostic.
pub fn smallest_eigenvalue(m: &SparseMatrix) -> f64 {
    if m.nrows() == 0 || m.nrows() > DENSE_DIAGNOSTIC_LIMIT {
        return f64::NAN;
    }
    match m.to_dense().self_adjoint_eigenvalues(Side::Lower) {
        Ok(ev) => ev.into_iter().fold(f64::INFINITY, f64::min),
        Err(_) => f64::NAN,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverMode {
    /// Sparse Cholesky of the Schur complement.
    Direct,
    /// Jacobi-preconditioned conjugate gradients on the Schur complement,
    /// stopping at the given relative residual reduction.
    ConjugateGradient { tol: f64, max_iterations: usize },
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub mode: SolverMode,
    /// Bound on ‖Kz − f‖∞ / (‖K‖∞‖z‖∞ + ‖f‖∞) for the full block system.
    pub residual_tol: f64,
    /// Columns per batch when applying A⁻¹ to a coupling block.
    pub chunk: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { mode: SolverMode::Direct, residual_tol: 1e-9, chunk: 256 }
    }
}

impl SolverOptions {
    pub fn conjugate_gradient(tol: f64) -> Self {
        Self { mode: SolverMode::ConjugateGradient { tol, max_iterations: 20_000 }, ..Self::default() }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolverStats {
    pub schur_dim: usize,
    pub schur_nnz: usize,
    /// Trial DOFs coupled to the Dirichlet and Neumann test spaces.
    pub boundary_coupled: [usize; 2],
    pub iterations: Option<usize>,
    pub refinement_steps: usize,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub lambda_b: DiscreteField,
    pub lambda_c: DiscreteField,
    pub p: DiscreteField,
    pub u: DiscreteField,
    /// ‖Kz − f‖∞ of the full block system.
    pub block_residual: f64,
    /// Normwise relative version of `block_residual`.
    pub relative_residual: f64,
    pub stats: SolverStats,
}

impl SolveResult {
    /// Trial unknowns (p, u) as one vector.
    pub fn trial_vector(&self) -> Vec<f64> {
        self.p.coeffs().iter().chain(self.u.coeffs()).copied().collect()
    }

    pub fn full_vector(&self) -> Vec<f64> {
        [self.lambda_b.coeffs(), self.lambda_c.coeffs(), self.p.coeffs(), self.u.coeffs()].concat()
    }
}

/// Dense Cᵀ A⁻¹ C restricted to the nonzero columns of C.
fn coupled_schur(a: &SpdFactor, c: &SparseMatrix, chunk: usize) -> (Vec<usize>, Mat<f64>) {
    let ct = c.transpose();
    let cols: Vec<usize> = (0..ct.nrows()).filter(|&j| ct.row(j).next().is_some()).collect();
    let k = cols.len();
    let mut g = Mat::zeros(k, k);
    for start in (0..k).step_by(chunk.max(1)) {
        let end = (start + chunk).min(k);
        let mut rhs = Mat::zeros(c.nrows(), end - start);
        for (jj, &j) in cols[start..end].iter().enumerate() {
            for (i, v) in ct.row(j) {
                rhs[(i, jj)] = v;
            }
        }
        let x = a.solve_mat(&rhs);
        let block: Vec<Vec<f64>> = (0..end - start)
            .into_par_iter()
            .map(|jj| {
                let col: Vec<f64> = (0..x.nrows()).map(|i| x[(i, jj)]).collect();
                let y = c.transpose_mul_vec(&col);
                cols.iter().map(|&r| y[r]).collect()
            })
            .collect();
        for (jj, col) in block.into_iter().enumerate() {
            for (r, v) in col.into_iter().enumerate() {
                g[(r, start + jj)] = v;
            }
        }
    }
    (cols, g)
}

/// Schur complement S = M + C_Dᵀ A_b⁻¹ C_D + C_Nᵀ A_c⁻¹ C_N on (p, u).
pub struct SchurSystem {
    pub matrix: SparseMatrix,
    pub factor_b: SpdFactor,
    pub factor_c: SpdFactor,
    pub boundary_coupled: [usize; 2],
}

pub fn schur_complement(system: &BlockSystem, chunk: usize) -> Result<SchurSystem> {
    let factor_b = SpdFactor::new(&system.a_b, "Dirichlet test Gram")?;
    let factor_c = SpdFactor::new(&system.a_c, "Neumann test Gram")?;
    let np = system.n_p();
    let n = np + system.n_u();
    let (cols_d, g_d) = coupled_schur(&factor_b, &system.c_d, chunk);
    let (cols_n, g_n) = coupled_schur(&factor_c, &system.c_n, chunk);
    let mut b = TripletBuilder::with_capacity(n, n, system.m_ls.nnz() + cols_d.len().pow(2) + cols_n.len().pow(2));
    for (i, j, v) in system.m_ls.triplets() {
        b.push(i, j, v);
    }
    for (cols, g, offset) in [(&cols_n, &g_n, 0), (&cols_d, &g_d, np)] {
        for (a, &i) in cols.iter().enumerate() {
            for (c, &j) in cols.iter().enumerate() {
                b.push(offset + i, offset + j, 0.5 * (g[(a, c)] + g[(c, a)]));
            }
        }
    }
    Ok(SchurSystem { matrix: b.build(true), factor_b, factor_c, boundary_coupled: [cols_d.len(), cols_n.len()] })
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn row_sum_norm(m: &SparseMatrix) -> f64 {
    (0..m.nrows()).map(|i| m.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

fn pcg(s: &SparseMatrix, rhs: &[f64], tol: f64, max_iterations: usize) -> Result<(Vec<f64>, usize)> {
    let n = rhs.len();
    let inv_diag: Vec<f64> = (0..n)
        .map(|i| {
            let d = s.get(i, i);
            if d > 0.0 { 1.0 / d } else { 1.0 }
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let r0 = dot(&r, &r).sqrt();
    if r0 == 0.0 {
        return Ok((x, 0));
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iterations {
        let sp = s.mul_vec(&p);
        let alpha = rz / dot(&p, &sp);
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(Error::SingularSchur);
        }
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * sp[i];
        }
        let res = dot(&r, &r).sqrt();
        if res <= tol * r0 {
            return Ok((x, it));
        }
        z = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let res = dot(&r, &r).sqrt() / r0;
    Err(Error::NoConvergence { iterations: max_iterations, residual: res })
}

/// Solves the block system by eliminating both multipliers.
pub fn solve_saddle(system: &BlockSystem, opts: &SolverOptions) -> Result<SolveResult> {
    let schur = schur_complement(system, opts.chunk)?;
    let np = system.n_p();
    let ab_rhs = schur.factor_b.solve_vec(&system.rhs_b);
    let ac_rhs = schur.factor_c.solve_vec(&system.rhs_c);
    let from_c = system.c_n.transpose_mul_vec(&ac_rhs);
    let from_b = system.c_d.transpose_mul_vec(&ab_rhs);
    let reduced: Vec<f64> = from_c
        .iter()
        .chain(&from_b)
        .zip(&system.rhs_pu)
        .map(|(a, r)| a - r)
        .collect();

    let mut stats = SolverStats {
        schur_dim: schur.matrix.nrows(),
        schur_nnz: schur.matrix.nnz(),
        boundary_coupled: schur.boundary_coupled,
        ..SolverStats::default()
    };
    let x = match opts.mode {
        SolverMode::Direct => {
            let factor = SpdFactor::new(&schur.matrix, "Schur complement").map_err(|_| Error::SingularSchur)?;
            let mut x = factor.solve_vec(&reduced);
            // One step of iterative refinement tightens the Schur residual.
            let r: Vec<f64> = schur.matrix.mul_vec(&x).iter().zip(&reduced).map(|(a, b)| b - a).collect();
            if norm_inf(&r) > 0.0 {
                let dx = factor.solve_vec(&r);
                x.iter_mut().zip(dx).for_each(|(a, d)| *a += d);
                stats.refinement_steps = 1;
            }
            x
        }
        SolverMode::ConjugateGradient { tol, max_iterations } => {
            let (x, it) = pcg(&schur.matrix, &reduced, tol, max_iterations)?;
            stats.iterations = Some(it);
            x
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSchur);
    }
    let (xp, xu) = x.split_at(np);
    let rb: Vec<f64> = system.c_d.mul_vec(xu).iter().zip(&system.rhs_b).map(|(c, r)| r - c).collect();
    let rc: Vec<f64> = system.c_n.mul_vec(xp).iter().zip(&system.rhs_c).map(|(c, r)| r - c).collect();
    let lambda_b = schur.factor_b.solve_vec(&rb);
    let lambda_c = schur.factor_c.solve_vec(&rc);

    let z = [lambda_b.as_slice(), lambda_c.as_slice(), xp, xu].concat();
    let k = system.full_matrix();
    let f = system.full_rhs();
    let residual: Vec<f64> = k.mul_vec(&z).iter().zip(&f).map(|(a, b)| a - b).collect();
    let block_residual = norm_inf(&residual);
    let scale = row_sum_norm(&k) * norm_inf(&z) + norm_inf(&f);
    let relative_residual = if scale > 0.0 { block_residual / scale } else { block_residual };
    let check = match opts.mode {
        SolverMode::Direct => opts.residual_tol,
        SolverMode::ConjugateGradient { tol, .. } => opts.residual_tol.max(tol),
    };
    if !(relative_residual <= check) {
        return Err(Error::NoConvergence { iterations: stats.iterations.unwrap_or(0), residual: relative_residual });
    }
    let sp = &system.spaces;
    Ok(SolveResult {
        lambda_b: DiscreteField::new(sp.yb.clone(), lambda_b)?,
        lambda_c: DiscreteField::new(sp.yc.clone(), lambda_c)?,
        p: DiscreteField::new(sp.p.clone(), xp.to_vec())?,
        u: DiscreteField::new(sp.u.clone(), xu.to_vec())?,
        block_residual,
        relative_residual,
        stats,
    })
}

/// Elementwise ‖p − A∇u‖²_{L₂(K)} and ‖Bu − div p − g‖²_{L₂(K)}.
pub fn elementwise_ls_residual(
    p: &DiscreteField,
    u: &DiscreteField,
    data: &ProblemData,
    degree: usize,
) -> Result<Vec<[f64; 2]>> {
    let (ps, us) = (p.space(), u.space());
    if ps.mesh().n_triangles() != us.mesh().n_triangles() {
        return Err(Error::SpaceMismatch("flux and scalar fields live on different meshes".into()));
    }
    let rule = triangle_quadrature(degree);
    let vt = ps.basis().tabulate_vector(&rule.points);
    let st = us.basis().tabulate_scalar(&rule.points);
    let out: Vec<Result<[f64; 2]>> = (0..ps.mesh().n_triangles())
        .into_par_iter()
        .map(|t| {
            let map = ps.element_map(t);
            let a = (data.a)(map.to_physical([1.0 / 3.0, 1.0 / 3.0]));
            let (lp, lu) = (ps.local_coeffs(t, p.coeffs()), us.local_coeffs(t, u.coeffs()));
            let mut acc = [0.0; 2];
            for (k, w) in rule.weights.iter().enumerate() {
                let x = map.to_physical(rule.points[k]);
                let (mut v, mut div) = ([0.0; 2], 0.0);
                for (i, c) in lp.iter().enumerate() {
                    let val = vt.values[k * vt.dim + i];
                    v[0] += c * val[0];
                    v[1] += c * val[1];
                    div += c * vt.divergences[k * vt.dim + i];
                }
                let (v, div) = (map.piola(v), map.piola_divergence(div));
                let (mut s, mut g) = (0.0, [0.0; 2]);
                for (i, c) in lu.iter().enumerate() {
                    s += c * st.values[k * st.dim + i];
                    let gr = st.gradients[k * st.dim + i];
                    g[0] += c * gr[0];
                    g[1] += c * gr[1];
                }
                let g = map.map_gradient(g);
                let ag = [a[0][0] * g[0] + a[0][1] * g[1], a[1][0] * g[0] + a[1][1] * g[1]];
                let wk = w * map.det;
                acc[0] += wk * ((v[0] - ag[0]).powi(2) + (v[1] - ag[1]).powi(2));
                acc[1] += wk * (data.reaction(x) * s - div - (data.g)(x)).powi(2);
            }
            if acc.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("least-squares residual"));
            }
            Ok(acc)
        })
        .collect();
    out.into_iter().collect()
}

/// Norms of the four residual components of the least-squares functional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualFunctionals {
    /// ‖λ_b‖ in the Dirichlet test Gram.
    pub dual_d: f64,
    /// ‖λ_c‖ in the Neumann test Gram.
    pub dual_n: f64,
    pub l2_field: f64,
    pub l2_div: f64,
}

impl ResidualFunctionals {
    /// Value of the minimized least-squares functional.
    pub fn functional(&self) -> f64 {
        self.dual_d.powi(2) + self.dual_n.powi(2) + self.l2_field.powi(2) + self.l2_div.powi(2)
    }
}

pub fn residual_functionals(result: &SolveResult, system: &BlockSystem, data: &ProblemData) -> Result<ResidualFunctionals> {
    let degree = 2 * (system.spaces.q + 1) + 4;
    let parts = elementwise_ls_residual(&result.p, &result.u, data, degree)?;
    let (f, d) = parts.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    Ok(ResidualFunctionals {
        dual_d: system.a_b.quad_form(result.lambda_b.coeffs()).max(0.0).sqrt(),
        dual_n: system.a_c.quad_form(result.lambda_c.coeffs()).max(0.0).sqrt(),
        l2_field: f.sqrt(),
        l2_div: d.sqrt(),
    })
}
