//! Bilinear forms and load vectors of the least-squares saddle-point system.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::elements::{edge_quadrature, graded_edge_quadrature, triangle_quadrature, EdgeRule, Family};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryPart, EdgeKey, Triangulation, LOCAL_EDGES};
use crate::spaces::{FeSpace, SystemSpaces};
use crate::sparse::{SparseMatrix, TripletBuilder};

pub type ScalarFn = Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync>;

/// Data of −div A∇u + Bu = g with u = h_D on Γ_D and A∇u·n = h_N on Γ_N.
///
/// `a` is sampled once per element at the centroid; `b` is a pointwise
/// reaction coefficient.
#[derive(Clone)]
pub struct ProblemData {
    pub a: MatrixFn,
    pub b: Option<ScalarFn>,
    pub g: ScalarFn,
    pub h_d: ScalarFn,
    pub h_n: ScalarFn,
    /// Points where data or solution are singular; boundary and volume
    /// integrals touching them use graded quadrature.
    pub singular_points: Vec<[f64; 2]>,
}

impl std::fmt::Debug for ProblemData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProblemData")
            .field("has_reaction", &self.b.is_some())
            .field("singular_points", &self.singular_points)
            .finish_non_exhaustive()
    }
}

impl ProblemData {
    /// Poisson data with A = I and no reaction.
    pub fn poisson(
        g: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        h_d: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
        h_n: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            a: Arc::new(|_| [[1.0, 0.0], [0.0, 1.0]]),
            b: None,
            g: Arc::new(g),
            h_d: Arc::new(h_d),
            h_n: Arc::new(h_n),
            singular_points: Vec::new(),
        }
    }

    pub fn zero() -> Self {
        Self::poisson(|_| 0.0, |_| 0.0, |_| 0.0)
    }

    pub fn with_diffusion(mut self, a: impl Fn([f64; 2]) -> [[f64; 2]; 2] + Send + Sync + 'static) -> Self {
        self.a = Arc::new(a);
        self
    }

    pub fn with_reaction(mut self, b: impl Fn([f64; 2]) -> f64 + Send + Sync + 'static) -> Self {
        self.b = Some(Arc::new(b));
        self
    }

    pub fn with_singular_point(mut self, p: [f64; 2]) -> Self {
        self.singular_points.push(p);
        self
    }

    /// Multiplies g, h_D and h_N by `factor`, keeping the operator.
    pub fn scaled(&self, factor: f64) -> Self {
        let (g, h_d, h_n) = (self.g.clone(), self.h_d.clone(), self.h_n.clone());
        Self {
            a: self.a.clone(),
            b: self.b.clone(),
            g: Arc::new(move |x| factor * g(x)),
            h_d: Arc::new(move |x| factor * h_d(x)),
            h_n: Arc::new(move |x| factor * h_n(x)),
            singular_points: self.singular_points.clone(),
        }
    }

    pub fn reaction(&self, x: [f64; 2]) -> f64 {
        self.b.as_ref().map_or(0.0, |b| b(x))
    }

    fn diffusion_at(&self, x: [f64; 2]) -> Result<[[f64; 2]; 2]> {
        let a = (self.a)(x);
        if a.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("diffusion coefficient"));
        }
        let (tr, det) = (a[0][0] + a[1][1], a[0][0] * a[1][1] - a[0][1] * a[1][0]);
        let smallest = 0.5 * tr - (0.25 * tr * tr - det).max(0.0).sqrt();
        if (a[0][1] - a[1][0]).abs() > 1e-14 * tr.abs() || !(smallest > 0.0) {
            return Err(Error::NotPositiveDefinite { name: "diffusion coefficient", smallest_eigenvalue: smallest });
        }
        Ok(a)
    }
}

#[derive(Clone, Debug)]
pub struct AssemblyOptions {
    /// Volume quadrature exactness; `None` uses 2·(max polynomial degree) + 2.
    pub volume_degree: Option<usize>,
    /// Added to the volume exactness for boundary integrals.
    pub boundary_extra: usize,
    /// Halvings of the graded edge rule near singular points.
    pub graded_levels: usize,
    pub parallel: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { volume_degree: None, boundary_extra: 4, graded_levels: 30, parallel: true }
    }
}

impl AssemblyOptions {
    pub fn serial() -> Self {
        Self { parallel: false, ..Self::default() }
    }

    fn volume_degree_for(&self, spaces: &[&FeSpace]) -> usize {
        let p = spaces.iter().map(|s| s.basis().polynomial_degree()).max().unwrap_or(0);
        self.volume_degree.unwrap_or(2 * p + 2).max(1)
    }
}

fn assemble_cells<F>(nrows: usize, ncols: usize, n_cells: usize, parallel: bool, symmetric: bool, local: F) -> Result<SparseMatrix>
where
    F: Fn(usize) -> Result<Vec<(usize, usize, f64)>> + Sync,
{
    let blocks: Vec<Result<Vec<(usize, usize, f64)>>> = if parallel {
        (0..n_cells).into_par_iter().map(&local).collect()
    } else {
        (0..n_cells).map(&local).collect()
    };
    let mut builder = TripletBuilder::new(nrows, ncols);
    for block in blocks {
        for (i, j, v) in block? {
            if !v.is_finite() {
                return Err(Error::NonFinite("matrix entry"));
            }
            builder.push(i, j, v);
        }
    }
    Ok(builder.build(symmetric))
}

fn assemble_cell_vector<F>(n: usize, n_cells: usize, parallel: bool, local: F) -> Result<Vec<f64>>
where
    F: Fn(usize) -> Result<Vec<(usize, f64)>> + Sync,
{
    let blocks: Vec<Result<Vec<(usize, f64)>>> = if parallel {
        (0..n_cells).into_par_iter().map(&local).collect()
    } else {
        (0..n_cells).map(&local).collect()
    };
    let mut out = vec![0.0; n];
    for block in blocks {
        for (i, v) in block? {
            if !v.is_finite() {
                return Err(Error::NonFinite("load vector entry"));
            }
            out[i] += v;
        }
    }
    Ok(out)
}

fn require_family(space: &FeSpace, family: Family, what: &str) -> Result<()> {
    if space.family() != family {
        return Err(Error::SpaceMismatch(format!("{what} needs a {} space, got {}", family.name(), space.family().name())));
    }
    Ok(())
}

/// ∫ v·w + div v div w over the mesh of an RT space.
pub fn assemble_gram_hdiv(space: &FeSpace, opts: &AssemblyOptions) -> Result<SparseMatrix> {
    require_family(space, Family::RaviartThomas, "H(div) Gram")?;
    let rule = triangle_quadrature(opts.volume_degree_for(&[space]));
    let tab = space.basis().tabulate_vector(&rule.points);
    let dim = tab.dim;
    let n = space.n_dofs();
    assemble_cells(n, n, space.mesh().n_triangles(), opts.parallel, true, |t| {
        let map = space.element_map(t);
        let dofs = space.cell_dofs(t);
        let mut local = vec![0.0; dim * dim];
        for (k, w) in rule.weights.iter().enumerate() {
            let vals: Vec<[f64; 2]> = (0..dim).map(|i| map.piola(tab.values[k * dim + i])).collect();
            let divs = &tab.divergences[k * dim..(k + 1) * dim];
            for i in 0..dim {
                for j in 0..dim {
                    local[i * dim + j] +=
                        w * (map.det * (vals[i][0] * vals[j][0] + vals[i][1] * vals[j][1]) + divs[i] * divs[j] / map.det);
                }
            }
        }
        Ok(scatter(dofs, dofs, &local))
    })
}

/// ∫ ∇v·∇w over the mesh of a constrained Lagrange space.
pub fn assemble_gram_h1semi(space: &FeSpace, opts: &AssemblyOptions) -> Result<SparseMatrix> {
    require_family(space, Family::Lagrange, "H¹ seminorm Gram")?;
    if space.constraint().is_none() {
        return Err(Error::SpaceMismatch("H¹ seminorm Gram needs a space with an essential constraint".into()));
    }
    assemble_stiffness(space, opts)
}

fn assemble_stiffness(space: &FeSpace, opts: &AssemblyOptions) -> Result<SparseMatrix> {
    let rule = triangle_quadrature(opts.volume_degree_for(&[space]));
    let tab = space.basis().tabulate_scalar(&rule.points);
    let dim = tab.dim;
    let n = space.n_dofs();
    assemble_cells(n, n, space.mesh().n_triangles(), opts.parallel, true, |t| {
        let map = space.element_map(t);
        let dofs = space.cell_dofs(t);
        let mut local = vec![0.0; dim * dim];
        for (k, w) in rule.weights.iter().enumerate() {
            let g: Vec<[f64; 2]> = (0..dim).map(|i| map.map_gradient(tab.gradients[k * dim + i])).collect();
            for i in 0..dim {
                for j in 0..dim {
                    local[i * dim + j] += w * map.det * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
                }
            }
        }
        Ok(scatter(dofs, dofs, &local))
    })
}

/// ∫ v w over the mesh of a scalar space.
pub fn assemble_mass(space: &FeSpace, opts: &AssemblyOptions) -> Result<SparseMatrix> {
    if space.family().is_vector() {
        return Err(Error::SpaceMismatch("scalar mass matrix of a vector space".into()));
    }
    let rule = triangle_quadrature(opts.volume_degree_for(&[space]));
    let tab = space.basis().tabulate_scalar(&rule.points);
    let dim = tab.dim;
    let n = space.n_dofs();
    assemble_cells(n, n, space.mesh().n_triangles(), opts.parallel, true, |t| {
        let map = space.element_map(t);
        let dofs = space.cell_dofs(t);
        let mut local = vec![0.0; dim * dim];
        for (k, w) in rule.weights.iter().enumerate() {
            let v = &tab.values[k * dim..(k + 1) * dim];
            for i in 0..dim {
                for j in 0..dim {
                    local[i * dim + j] += w * map.det * v[i] * v[j];
                }
            }
        }
        Ok(scatter(dofs, dofs, &local))
    })
}

/// Full H¹ Gram (mass plus stiffness) of a Lagrange space.
pub fn assemble_gram_h1(space: &FeSpace, opts: &AssemblyOptions) -> Result<SparseMatrix> {
    require_family(space, Family::Lagrange, "H¹ Gram")?;
    let stiff = assemble_stiffness(space, opts)?;
    let mass = assemble_mass(space, opts)?;
    let mut b = TripletBuilder::with_capacity(stiff.nrows(), stiff.ncols(), stiff.nnz() + mass.nnz());
    for (i, j, v) in stiff.triplets().chain(mass.triplets()) {
        b.push(i, j, v);
    }
    Ok(b.build(true))
}

fn scatter(rows: &[crate::spaces::LocalDof], cols: &[crate::spaces::LocalDof], local: &[f64]) -> Vec<(usize, usize, f64)> {
    let nc = cols.len();
    let mut out = Vec::with_capacity(rows.len() * nc);
    for (i, ri) in rows.iter().enumerate() {
        let Some(gi) = ri.global else { continue };
        for (j, cj) in cols.iter().enumerate() {
            let Some(gj) = cj.global else { continue };
            out.push((gi, gj, ri.sign * cj.sign * local[i * nc + j]));
        }
    }
    out
}

fn same_mesh(a: &Triangulation, b: &Triangulation) -> bool {
    std::ptr::eq(a, b) || (a.vertices() == b.vertices() && a.triangles().iter().zip(b.triangles()).all(|(x, y)| x.v == y.v) && a.n_triangles() == b.n_triangles())
}

/// Gram of (q, w) ↦ (q − A∇w, Bw − div q) in L₂ × L₂ on P × U, with the
/// P unknowns first.
pub fn assemble_ls_gram(p: &FeSpace, u: &FeSpace, data: &ProblemData, opts: &AssemblyOptions) -> Result<SparseMatrix> {
    require_family(p, Family::RaviartThomas, "flux trial space")?;
    require_family(u, Family::Lagrange, "scalar trial space")?;
    if !same_mesh(p.mesh(), u.mesh()) {
        return Err(Error::SpaceMismatch("flux and scalar trial spaces live on different meshes".into()));
    }
    let mut degree = opts.volume_degree_for(&[p, u]);
    if data.b.is_some() && opts.volume_degree.is_none() {
        degree += 2;
    }
    let rule = triangle_quadrature(degree);
    let vt = p.basis().tabulate_vector(&rule.points);
    let st = u.basis().tabulate_scalar(&rule.points);
    let (dp, du) = (vt.dim, st.dim);
    let np = p.n_dofs();
    let n = np + u.n_dofs();
    let mesh = p.mesh();
    assemble_cells(n, n, mesh.n_triangles(), opts.parallel, true, |t| {
        let map = p.element_map(t);
        let centroid = map.to_physical([1.0 / 3.0, 1.0 / 3.0]);
        let a = data.diffusion_at(centroid)?;
        let d = dp + du;
        let mut local = vec![0.0; d * d];
        for (k, w) in rule.weights.iter().enumerate() {
            let x = map.to_physical(rule.points[k]);
            let b = data.reaction(x);
            let wk = w * map.det;
            // Rows of the operator image: (field_x, field_y, scalar) per basis function.
            let mut img = Vec::with_capacity(d);
            for i in 0..dp {
                let v = map.piola(vt.values[k * dp + i]);
                let div = map.piola_divergence(vt.divergences[k * dp + i]);
                img.push([v[0], v[1], -div]);
            }
            for i in 0..du {
                let g = map.map_gradient(st.gradients[k * du + i]);
                let ag = [a[0][0] * g[0] + a[0][1] * g[1], a[1][0] * g[0] + a[1][1] * g[1]];
                img.push([-ag[0], -ag[1], b * st.values[k * du + i]]);
            }
            for i in 0..d {
                for j in 0..d {
                    let (x, y) = (&img[i], &img[j]);
                    local[i * d + j] += wk * (x[0] * y[0] + x[1] * y[1] + x[2] * y[2]);
                }
            }
        }
        let dofs: Vec<_> = p
            .cell_dofs(t)
            .iter()
            .copied()
            .chain(u.cell_dofs(t).iter().map(|l| crate::spaces::LocalDof { global: l.global.map(|g| g + np), sign: l.sign }))
            .collect();
        Ok(scatter(&dofs, &dofs, &local))
    })
}

/// A piece of boundary shared by a test-mesh edge and a trial-mesh edge.
#[derive(Clone, Copy, Debug)]
pub struct BoundarySegment {
    pub test_tri: usize,
    pub trial_tri: usize,
    pub start: [f64; 2],
    pub end: [f64; 2],
    /// Unit outward normal.
    pub normal: [f64; 2],
}

impl BoundarySegment {
    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }

    pub fn point(&self, s: f64) -> [f64; 2] {
        [self.start[0] + s * (self.end[0] - self.start[0]), self.start[1] + s * (self.end[1] - self.start[1])]
    }
}

fn owner_and_normal(mesh: &Triangulation, e: usize) -> (usize, [f64; 2]) {
    let t = mesh.edge_triangles(e)[0];
    let local = mesh.tri_edges(t).iter().position(|&x| x == e).expect("edge belongs to its triangle");
    let v = mesh.triangle(t).v;
    let [a, b] = LOCAL_EDGES[local];
    let (pa, pb) = (mesh.vertex(v[a]), mesh.vertex(v[b]));
    let len = (pb.x - pa.x).hypot(pb.y - pa.y);
    (t, [(pb.y - pa.y) / len, (pa.x - pb.x) / len])
}

/// Splits the `part` boundary into pieces on which both the test and trial
/// meshes are smooth. Matching facets are paired directly; otherwise
/// collinear overlaps are computed.
pub fn boundary_segments(test: &Triangulation, trial: &Triangulation, part: BoundaryPart) -> Result<Vec<BoundarySegment>> {
    let trial_edges = trial.part_edges(part);
    let lookup: HashMap<EdgeKey, usize> = trial_edges.iter().map(|&e| (trial.edge_key(e), e)).collect();
    let mut out = Vec::new();
    let mut covered = 0.0;
    let mut total_test = 0.0;
    for e in test.part_edges(part) {
        let (test_tri, normal) = owner_and_normal(test, e);
        let [lo, hi] = test.edge(e);
        let (a, b) = (test.vertex(lo), test.vertex(hi));
        let len = test.edge_length(e);
        total_test += len;
        if let Some(&f) = lookup.get(&test.edge_key(e)) {
            let (trial_tri, _) = owner_and_normal(trial, f);
            out.push(BoundarySegment { test_tri, trial_tri, start: [a.x, a.y], end: [b.x, b.y], normal });
            covered += len;
            continue;
        }
        let dir = [(b.x - a.x) / len, (b.y - a.y) / len];
        let mut pieces = Vec::new();
        for &f in &trial_edges {
            let [c, d] = trial.edge(f).map(|i| trial.vertex(i));
            let off = |p: crate::mesh::Vertex| ((p.x - a.x) * dir[1] - (p.y - a.y) * dir[0]).abs();
            let tol = 1e-12 * len.max(1.0);
            if off(c) > tol || off(d) > tol {
                continue;
            }
            let sc = (c.x - a.x) * dir[0] + (c.y - a.y) * dir[1];
            let sd = (d.x - a.x) * dir[0] + (d.y - a.y) * dir[1];
            let (s0, s1) = (sc.min(sd).max(0.0), sc.max(sd).min(len));
            if s1 - s0 > tol {
                pieces.push((s0, s1, f));
            }
        }
        pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (s0, s1, f) in pieces {
            let (trial_tri, _) = owner_and_normal(trial, f);
            let at = |s: f64| [a.x + s * dir[0], a.y + s * dir[1]];
            out.push(BoundarySegment { test_tri, trial_tri, start: at(s0), end: at(s1), normal });
            covered += s1 - s0;
        }
    }
    let total_trial: f64 = trial_edges.iter().map(|&f| trial.edge_length(f)).sum();
    let scale = total_trial.max(total_test).max(1.0);
    if (covered - total_test).abs() > 1e-10 * scale || (covered - total_trial).abs() > 1e-10 * scale {
        return Err(Error::FacetMismatch {
            part,
            detail: format!("test facets cover {covered}, test part {total_test}, trial part {total_trial}"),
        });
    }
    Ok(out)
}

fn segment_rule(seg: &BoundarySegment, degree: usize, singular: &[[f64; 2]], levels: usize) -> EdgeRule {
    let near = |p: [f64; 2], s: [f64; 2]| (p[0] - s[0]).hypot(p[1] - s[1]) <= 1e-14 * seg.length().max(1.0);
    // Seven Gauss points per graded piece.
    let base = || edge_quadrature(13);
    if singular.iter().any(|&s| near(seg.start, s)) {
        graded_edge_quadrature(0, levels, &base())
    } else if singular.iter().any(|&s| near(seg.end, s)) {
        graded_edge_quadrature(1, levels, &base())
    } else {
        edge_quadrature(degree)
    }
}

/// Normal traces ψ·n of the global basis functions of an RT space at a
/// physical boundary point on triangle `t`.
fn normal_traces(space: &FeSpace, t: usize, x: [f64; 2], n: [f64; 2]) -> Vec<(Option<usize>, f64)> {
    let map = space.element_map(t);
    let vals = space.basis().vector_values(map.to_reference(x));
    space
        .cell_dofs(t)
        .iter()
        .zip(vals)
        .map(|(d, v)| {
            let pv = map.piola(v);
            (d.global, d.sign * (pv[0] * n[0] + pv[1] * n[1]))
        })
        .collect()
}

fn scalar_traces(space: &FeSpace, t: usize, x: [f64; 2]) -> Vec<(Option<usize>, f64)> {
    let map = space.element_map(t);
    let vals = space.basis().values(map.to_reference(x));
    space.cell_dofs(t).iter().zip(vals).map(|(d, v)| (d.global, d.sign * v)).collect()
}

fn boundary_pairing(
    test: &FeSpace,
    trial: &FeSpace,
    part: BoundaryPart,
    opts: &AssemblyOptions,
    singular: &[[f64; 2]],
) -> Result<SparseMatrix> {
    let segments = boundary_segments(test.mesh(), trial.mesh(), part)?;
    let degree = opts.volume_degree_for(&[test, trial]) + opts.boundary_extra;
    let mut b = TripletBuilder::new(test.n_dofs(), trial.n_dofs());
    for seg in &segments {
        let rule = segment_rule(seg, degree, singular, opts.graded_levels);
        let len = seg.length();
        for (s, w) in rule.iter() {
            let x = seg.point(s);
            let (rows, cols) = if test.family().is_vector() {
                (normal_traces(test, seg.test_tri, x, seg.normal), scalar_traces(trial, seg.trial_tri, x))
            } else {
                (scalar_traces(test, seg.test_tri, x), normal_traces(trial, seg.trial_tri, x, seg.normal))
            };
            for &(gi, vi) in &rows {
                let Some(gi) = gi else { continue };
                for &(gj, vj) in &cols {
                    let Some(gj) = gj else { continue };
                    let v = w * len * vi * vj;
                    if !v.is_finite() {
                        return Err(Error::NonFinite("boundary coupling entry"));
                    }
                    b.push(gi, gj, v);
                }
            }
        }
    }
    Ok(b.build(false))
}

/// ∫_{Γ_D} w (μ·n) ds with rows indexed by the RT test space.
pub fn assemble_coupling_dirichlet(yb: &FeSpace, u: &FeSpace, opts: &AssemblyOptions) -> Result<SparseMatrix> {
    require_family(yb, Family::RaviartThomas, "Dirichlet test space")?;
    require_family(u, Family::Lagrange, "scalar trial space")?;
    boundary_pairing(yb, u, BoundaryPart::Dirichlet, opts, &[])
}

/// ∫_{Γ_N} (q·n) μ ds with rows indexed by the Lagrange test space.
pub fn assemble_coupling_neumann(yc: &FeSpace, p: &FeSpace, opts: &AssemblyOptions) -> Result<SparseMatrix> {
    require_family(yc, Family::Lagrange, "Neumann test space")?;
    require_family(p, Family::RaviartThomas, "flux trial space")?;
    boundary_pairing(yc, p, BoundaryPart::Neumann, opts, &[])
}

/// ∫ f (ψ·n) ds (vector space) or ∫ f φ ds (scalar space) over `part`.
pub fn assemble_boundary_load(
    space: &FeSpace,
    part: BoundaryPart,
    f: &(dyn Fn([f64; 2]) -> f64 + Send + Sync),
    singular: &[[f64; 2]],
    opts: &AssemblyOptions,
) -> Result<Vec<f64>> {
    let segments = boundary_segments(space.mesh(), space.mesh(), part)?;
    let degree = opts.volume_degree_for(&[space]) + opts.boundary_extra;
    let mut out = vec![0.0; space.n_dofs()];
    for seg in &segments {
        let rule = segment_rule(seg, degree, singular, opts.graded_levels);
        let len = seg.length();
        for (s, w) in rule.iter() {
            let x = seg.point(s);
            let fx = f(x);
            if !fx.is_finite() {
                return Err(Error::NonFinite("boundary datum"));
            }
            let traces = if space.family().is_vector() {
                normal_traces(space, seg.test_tri, x, seg.normal)
            } else {
                scalar_traces(space, seg.test_tri, x)
            };
            for (g, v) in traces {
                if let Some(g) = g {
                    out[g] += w * len * fx * v;
                }
            }
        }
    }
    Ok(out)
}

/// Volume load of the trial pair: (∫ g div ψ, −∫ g B φ), P entries first.
pub fn assemble_volume_load(p: &FeSpace, u: &FeSpace, data: &ProblemData, opts: &AssemblyOptions) -> Result<Vec<f64>> {
    let rule = triangle_quadrature(opts.volume_degree_for(&[p, u]) + 2);
    let vt = p.basis().tabulate_vector(&rule.points);
    let st = u.basis().tabulate_scalar(&rule.points);
    let np = p.n_dofs();
    assemble_cell_vector(np + u.n_dofs(), p.mesh().n_triangles(), opts.parallel, |t| {
        let map = p.element_map(t);
        let mut out = Vec::new();
        let (pd, ud) = (p.cell_dofs(t), u.cell_dofs(t));
        let mut lp = vec![0.0; vt.dim];
        let mut lu = vec![0.0; st.dim];
        for (k, w) in rule.weights.iter().enumerate() {
            let x = map.to_physical(rule.points[k]);
            let g = (data.g)(x);
            if !g.is_finite() {
                return Err(Error::NonFinite("volume datum"));
            }
            // det J cancels against the Piola scaling of the divergence.
            for (i, l) in lp.iter_mut().enumerate() {
                *l += w * g * vt.divergences[k * vt.dim + i];
            }
            let gb = g * data.reaction(x);
            for (i, l) in lu.iter_mut().enumerate() {
                *l -= w * map.det * gb * st.values[k * st.dim + i];
            }
        }
        for (d, v) in pd.iter().zip(&lp) {
            if let Some(gi) = d.global {
                out.push((gi, d.sign * v));
            }
        }
        for (d, v) in ud.iter().zip(&lu) {
            if let Some(gi) = d.global {
                out.push((np + gi, d.sign * v));
            }
        }
        Ok(out)
    })
}

/// ∫ g² over the trial mesh.
pub fn volume_data_norm_sq(mesh: &Triangulation, data: &ProblemData, degree: usize) -> f64 {
    let rule = triangle_quadrature(degree);
    (0..mesh.n_triangles())
        .map(|t| {
            let [a, b, c] = mesh.triangle_vertices(t);
            let det = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
            rule.iter()
                .map(|(p, w)| {
                    let x = [a.x + (b.x - a.x) * p[0] + (c.x - a.x) * p[1], a.y + (b.y - a.y) * p[0] + (c.y - a.y) * p[1]];
                    w * det * (data.g)(x).powi(2)
                })
                .sum::<f64>()
        })
        .sum()
}

/// Load vectors of the saddle-point system.
#[derive(Clone, Debug)]
pub struct LoadVectors {
    pub rhs_b: Vec<f64>,
    pub rhs_c: Vec<f64>,
    pub rhs_pu: Vec<f64>,
}

pub fn assemble_rhs(spaces: &SystemSpaces, data: &ProblemData, opts: &AssemblyOptions) -> Result<LoadVectors> {
    Ok(LoadVectors {
        rhs_b: assemble_boundary_load(&spaces.yb, BoundaryPart::Dirichlet, data.h_d.as_ref(), &data.singular_points, opts)?,
        rhs_c: assemble_boundary_load(&spaces.yc, BoundaryPart::Neumann, data.h_n.as_ref(), &data.singular_points, opts)?,
        rhs_pu: assemble_volume_load(&spaces.p, &spaces.u, data, opts)?,
    })
}

/// The four-block saddle-point system with unknowns (λ_b, λ_c, p, u).
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub spaces: SystemSpaces,
    pub a_b: SparseMatrix,
    pub a_c: SparseMatrix,
    /// n_b × n_u.
    pub c_d: SparseMatrix,
    /// n_c × n_p.
    pub c_n: SparseMatrix,
    /// (n_p + n_u)², P block first.
    pub m_ls: SparseMatrix,
    pub rhs_b: Vec<f64>,
    pub rhs_c: Vec<f64>,
    pub rhs_pu: Vec<f64>,
    /// ∫ g², the constant term of the volume least-squares residual.
    pub g_norm_sq: f64,
}

pub fn assemble_system(spaces: &SystemSpaces, data: &ProblemData, opts: &AssemblyOptions) -> Result<BlockSystem> {
    let loads = assemble_rhs(spaces, data, opts)?;
    let degree = opts.volume_degree_for(&[&spaces.p, &spaces.u]) + 2;
    Ok(BlockSystem {
        a_b: assemble_gram_hdiv(&spaces.yb, opts)?,
        a_c: assemble_gram_h1semi(&spaces.yc, opts)?,
        c_d: boundary_pairing(&spaces.yb, &spaces.u, BoundaryPart::Dirichlet, opts, &data.singular_points)?,
        c_n: boundary_pairing(&spaces.yc, &spaces.p, BoundaryPart::Neumann, opts, &data.singular_points)?,
        m_ls: assemble_ls_gram(&spaces.p, &spaces.u, data, opts)?,
        rhs_b: loads.rhs_b,
        rhs_c: loads.rhs_c,
        rhs_pu: loads.rhs_pu,
        g_norm_sq: volume_data_norm_sq(spaces.p.mesh(), data, degree),
        spaces: spaces.clone(),
    })
}

impl BlockSystem {
    pub fn n_b(&self) -> usize {
        self.a_b.nrows()
    }

    pub fn n_c(&self) -> usize {
        self.a_c.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.spaces.p.n_dofs()
    }

    pub fn n_u(&self) -> usize {
        self.spaces.u.n_dofs()
    }

    pub fn n_total(&self) -> usize {
        self.n_b() + self.n_c() + self.n_p() + self.n_u()
    }

    /// [[A_b,0,0,C_D],[0,A_c,C_N,0],[0,C_Nᵀ,−M_pp,−M_pu],[C_Dᵀ,0,−M_puᵀ,−M_uu]].
    pub fn full_matrix(&self) -> SparseMatrix {
        let (nb, nc, np) = (self.n_b(), self.n_c(), self.n_p());
        let n = self.n_total();
        let (ob, oc, ox) = (0, nb, nb + nc);
        let mut b = TripletBuilder::new(n, n);
        for (i, j, v) in self.a_b.triplets() {
            b.push(ob + i, ob + j, v);
        }
        for (i, j, v) in self.a_c.triplets() {
            b.push(oc + i, oc + j, v);
        }
        for (i, j, v) in self.c_d.triplets() {
            b.push(ob + i, ox + np + j, v);
            b.push(ox + np + j, ob + i, v);
        }
        for (i, j, v) in self.c_n.triplets() {
            b.push(oc + i, ox + j, v);
            b.push(ox + j, oc + i, v);
        }
        for (i, j, v) in self.m_ls.triplets() {
            b.push(ox + i, ox + j, -v);
        }
        b.build(true)
    }

    pub fn full_rhs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_total());
        out.extend_from_slice(&self.rhs_b);
        out.extend_from_slice(&self.rhs_c);
        out.extend_from_slice(&self.rhs_pu);
        out
    }
}
