//! Global finite-element spaces on a triangulation.

use std::sync::Arc;

use crate::elements::{ElementMap, Family, ReferenceBasis};
use crate::error::{Error, Result};
use crate::mesh::{derive_boundary_matched_mesh, BoundaryPart, Triangulation, LOCAL_EDGES};

/// Global image of one local basis function. `global` is `None` when the DOF
/// has been eliminated by the essential constraint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalDof {
    pub global: Option<usize>,
    pub sign: f64,
}

#[derive(Debug)]
pub struct FeSpace {
    mesh: Arc<Triangulation>,
    basis: Arc<ReferenceBasis>,
    constraint: Option<BoundaryPart>,
    n_dofs: usize,
    local: Vec<LocalDof>,
    maps: Vec<ElementMap>,
}

/// Builds a conforming space. Numbering runs over vertices, then edges, then
/// cells, each in mesh order; constrained DOFs are skipped.
pub fn build_space(
    mesh: Arc<Triangulation>,
    family: Family,
    degree: usize,
    constraint: Option<BoundaryPart>,
) -> Result<FeSpace> {
    let basis = Arc::new(ReferenceBasis::new(family, degree)?);
    FeSpace::new(mesh, basis, constraint)
}

impl FeSpace {
    pub fn new(mesh: Arc<Triangulation>, basis: Arc<ReferenceBasis>, constraint: Option<BoundaryPart>) -> Result<Self> {
        if let Some(part) = constraint {
            if basis.family() == Family::DiscontinuousLagrange {
                return Err(Error::UnsupportedElement { family: "discontinuous Lagrange with constraint", degree: basis.degree() });
            }
            if !mesh.has_part(part) {
                return Err(Error::SpaceMismatch(format!("constraint part {} is absent from the mesh", part.tag())));
            }
        }
        let [nv, ne, nc] = basis.dofs_per_entity();
        let mut next = 0usize;
        let mut take = |count: usize, constrained: bool| {
            if count == 0 || constrained {
                None
            } else {
                let start = next;
                next += count;
                Some(start)
            }
        };
        let on_part_vertex = constraint.map(|p| mesh.part_vertices(p));
        let vertex_start: Vec<Option<usize>> = (0..mesh.n_vertices())
            .map(|v| take(nv, on_part_vertex.as_ref().is_some_and(|m| m[v])))
            .collect();
        let edge_start: Vec<Option<usize>> = (0..mesh.n_edges())
            .map(|e| take(ne, constraint.is_some() && mesh.edge_part(e) == constraint))
            .collect();
        let cell_start: Vec<Option<usize>> = (0..mesh.n_triangles()).map(|_| take(nc, false)).collect();
        let n_dofs = next;

        let dim = basis.dim();
        let mut local = Vec::with_capacity(dim * mesh.n_triangles());
        let mut maps = Vec::with_capacity(mesh.n_triangles());
        for t in 0..mesh.n_triangles() {
            let v = mesh.triangle(t).v;
            maps.push(ElementMap::new(mesh.triangle_vertices(t))?);
            if basis.family() == Family::DiscontinuousLagrange {
                let start = cell_start[t].expect("cell DOFs are never constrained");
                local.extend((0..dim).map(|i| LocalDof { global: Some(start + i), sign: 1.0 }));
                continue;
            }
            for &vi in &v {
                for j in 0..nv {
                    local.push(LocalDof { global: vertex_start[vi].map(|s| s + j), sign: 1.0 });
                }
            }
            let edges = mesh.tri_edges(t);
            for (i, [a, b]) in LOCAL_EDGES.iter().enumerate() {
                let forward = v[*a] < v[*b];
                let start = edge_start[edges[i]];
                for j in 0..ne {
                    let dof = match basis.family() {
                        Family::RaviartThomas => {
                            // Reversing the parametrisation flips the normal and
                            // maps L_k(t) to L_k(−t) = (−1)^k L_k(t).
                            let sign = if forward || j % 2 == 1 { 1.0 } else { -1.0 };
                            LocalDof { global: start.map(|s| s + j), sign }
                        }
                        _ => {
                            let k = if forward { j } else { ne - 1 - j };
                            LocalDof { global: start.map(|s| s + k), sign: 1.0 }
                        }
                    };
                    local.push(dof);
                }
            }
            for j in 0..nc {
                local.push(LocalDof { global: cell_start[t].map(|s| s + j), sign: 1.0 });
            }
        }
        Ok(Self { mesh, basis, constraint, n_dofs, local, maps })
    }

    pub fn mesh(&self) -> &Arc<Triangulation> {
        &self.mesh
    }

    pub fn basis(&self) -> &Arc<ReferenceBasis> {
        &self.basis
    }

    pub fn family(&self) -> Family {
        self.basis.family()
    }

    pub fn degree(&self) -> usize {
        self.basis.degree()
    }

    pub fn constraint(&self) -> Option<BoundaryPart> {
        self.constraint
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn local_dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn cell_dofs(&self, t: usize) -> &[LocalDof] {
        let d = self.basis.dim();
        &self.local[t * d..(t + 1) * d]
    }

    pub fn element_map(&self, t: usize) -> &ElementMap {
        &self.maps[t]
    }

    /// Signed local coefficients of a global vector on triangle `t`.
    pub fn local_coeffs(&self, t: usize, coeffs: &[f64]) -> Vec<f64> {
        self.cell_dofs(t).iter().map(|d| d.global.map_or(0.0, |g| d.sign * coeffs[g])).collect()
    }
}

/// A point evaluation of a discrete field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldSample {
    Scalar { value: f64, gradient: [f64; 2] },
    Vector { value: [f64; 2], divergence: f64 },
}

impl FieldSample {
    pub fn scalar(&self) -> f64 {
        match self {
            FieldSample::Scalar { value, .. } => *value,
            FieldSample::Vector { .. } => panic!("vector sample has no scalar value"),
        }
    }

    pub fn vector(&self) -> [f64; 2] {
        match self {
            FieldSample::Vector { value, .. } => *value,
            FieldSample::Scalar { gradient, .. } => *gradient,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteField {
    space: Arc<FeSpace>,
    coeffs: Vec<f64>,
}

impl DiscreteField {
    pub fn new(space: Arc<FeSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.n_dofs() {
            return Err(Error::SpaceMismatch(format!(
                "{} coefficients for a space with {} DOFs",
                coeffs.len(),
                space.n_dofs()
            )));
        }
        Ok(Self { space, coeffs })
    }

    pub fn zeros(space: Arc<FeSpace>) -> Self {
        let n = space.n_dofs();
        Self { space, coeffs: vec![0.0; n] }
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Evaluates on triangle `t` at reference points.
    pub fn eval(&self, t: usize, points: &[[f64; 2]]) -> Vec<FieldSample> {
        let space = &self.space;
        let local = space.local_coeffs(t, &self.coeffs);
        let map = space.element_map(t);
        let basis = space.basis();
        points
            .iter()
            .map(|&p| {
                if basis.family().is_vector() {
                    let (vals, divs) = (basis.vector_values(p), basis.divergences(p));
                    let mut v = [0.0; 2];
                    let mut d = 0.0;
                    for ((c, val), div) in local.iter().zip(&vals).zip(&divs) {
                        v[0] += c * val[0];
                        v[1] += c * val[1];
                        d += c * div;
                    }
                    FieldSample::Vector { value: map.piola(v), divergence: map.piola_divergence(d) }
                } else {
                    let (vals, grads) = (basis.values(p), basis.gradients(p));
                    let mut value = 0.0;
                    let mut g = [0.0; 2];
                    for ((c, val), grad) in local.iter().zip(&vals).zip(&grads) {
                        value += c * val;
                        g[0] += c * grad[0];
                        g[1] += c * grad[1];
                    }
                    FieldSample::Scalar { value, gradient: map.map_gradient(g) }
                }
            })
            .collect()
    }
}

impl DiscreteField {
    /// Per-triangle squared L₂ norms `[‖v‖², ‖div v‖²]` for RT fields and
    /// `[‖v‖², ‖∇v‖²]` for scalar fields.
    pub fn cell_norms_sq(&self, degree: usize) -> Vec<[f64; 2]> {
        let rule = crate::elements::triangle_quadrature(degree);
        let space = &self.space;
        let basis = space.basis();
        let dim = basis.dim();
        let vector = basis.family().is_vector();
        let (vals, derivs): (Vec<[f64; 2]>, Vec<[f64; 2]>) = if vector {
            let t = basis.tabulate_vector(&rule.points);
            (t.values, t.divergences.iter().map(|&d| [d, 0.0]).collect())
        } else {
            let t = basis.tabulate_scalar(&rule.points);
            (t.values.iter().map(|&v| [v, 0.0]).collect(), t.gradients)
        };
        (0..space.mesh().n_triangles())
            .map(|t| {
                let map = space.element_map(t);
                let local = space.local_coeffs(t, &self.coeffs);
                let mut acc = [0.0; 2];
                for (k, w) in rule.weights.iter().enumerate() {
                    let (mut v, mut d) = ([0.0; 2], [0.0; 2]);
                    for (i, c) in local.iter().enumerate() {
                        let (a, b) = (vals[k * dim + i], derivs[k * dim + i]);
                        v[0] += c * a[0];
                        v[1] += c * a[1];
                        d[0] += c * b[0];
                        d[1] += c * b[1];
                    }
                    let (v, d) = if vector {
                        (map.piola(v), [map.piola_divergence(d[0]), 0.0])
                    } else {
                        (v, map.map_gradient(d))
                    };
                    let wk = w * map.det;
                    acc[0] += wk * (v[0] * v[0] + v[1] * v[1]);
                    acc[1] += wk * (d[0] * d[0] + d[1] * d[1]);
                }
                acc
            })
            .collect()
    }
}

/// Free-function form of [`DiscreteField::eval`].
pub fn eval_field(field: &DiscreteField, t: usize, points: &[[f64; 2]]) -> Vec<FieldSample> {
    field.eval(t, points)
}

/// Nodal interpolation into a scalar space. Constrained DOFs stay zero.
pub fn interpolate_scalar(space: &Arc<FeSpace>, f: impl Fn([f64; 2]) -> f64) -> Result<DiscreteField> {
    if space.family().is_vector() {
        return Err(Error::SpaceMismatch("scalar interpolation into a vector space".into()));
    }
    interpolate_dofs(space, |map, basis| basis.apply_dofs(|p| [f(map.to_physical(p)), 0.0]))
}

/// Moment interpolation into a Raviart-Thomas space. Constrained DOFs stay zero.
pub fn interpolate_vector(space: &Arc<FeSpace>, f: impl Fn([f64; 2]) -> [f64; 2]) -> Result<DiscreteField> {
    if !space.family().is_vector() {
        return Err(Error::SpaceMismatch("vector interpolation into a scalar space".into()));
    }
    interpolate_dofs(space, |map, basis| basis.apply_dofs(|p| map.piola_pullback(f(map.to_physical(p)))))
}

fn interpolate_dofs(
    space: &Arc<FeSpace>,
    local_values: impl Fn(&ElementMap, &ReferenceBasis) -> Vec<f64>,
) -> Result<DiscreteField> {
    let mut coeffs = vec![0.0; space.n_dofs()];
    for t in 0..space.mesh().n_triangles() {
        let values = local_values(space.element_map(t), space.basis());
        for (dof, v) in space.cell_dofs(t).iter().zip(values) {
            if let Some(g) = dof.global {
                coeffs[g] = dof.sign * v;
            }
        }
    }
    for c in &coeffs {
        if !c.is_finite() {
            return Err(Error::NonFinite("interpolated coefficient"));
        }
    }
    DiscreteField::new(space.clone(), coeffs)
}

/// Mesh used for the boundary test spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TestMeshMode {
    /// Coarsest descendants of the root whose boundary facets match the trial mesh.
    Matched,
    /// The trial mesh itself.
    Full,
}

impl TestMeshMode {
    pub fn name(self) -> &'static str {
        match self {
            TestMeshMode::Matched => "matched",
            TestMeshMode::Full => "full",
        }
    }
}

impl std::str::FromStr for TestMeshMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "matched" => Ok(TestMeshMode::Matched),
            "full" => Ok(TestMeshMode::Full),
            _ => Err(Error::Parse(format!("unknown test mesh mode '{s}' (expected matched or full)"))),
        }
    }
}

/// Trial pair (p, u) on the working mesh and the two boundary test spaces.
#[derive(Clone, Debug)]
pub struct SystemSpaces {
    pub q: usize,
    pub mode: TestMeshMode,
    /// RT_{q+1} on the Dirichlet test mesh, normal trace zero on the Neumann part.
    pub yb: Arc<FeSpace>,
    /// Lagrange of degree q+2 on the Neumann test mesh, zero on the Dirichlet part.
    pub yc: Arc<FeSpace>,
    /// RT_q on the working mesh.
    pub p: Arc<FeSpace>,
    /// Lagrange of degree q+1 on the working mesh.
    pub u: Arc<FeSpace>,
}

impl SystemSpaces {
    pub fn build(root: &Triangulation, mesh: Arc<Triangulation>, q: usize, mode: TestMeshMode) -> Result<Self> {
        if q > 1 {
            return Err(Error::UnsupportedElement { family: "trial order", degree: q });
        }
        let (mesh_d, mesh_n) = match mode {
            TestMeshMode::Full => (mesh.clone(), mesh.clone()),
            TestMeshMode::Matched => (
                Arc::new(derive_boundary_matched_mesh(root, &mesh, BoundaryPart::Dirichlet)?),
                Arc::new(derive_boundary_matched_mesh(root, &mesh, BoundaryPart::Neumann)?),
            ),
        };
        let guard = |m: &Triangulation, part| m.has_part(part).then_some(part);
        let yb_constraint = guard(&mesh_d, BoundaryPart::Neumann);
        let yc_constraint = guard(&mesh_n, BoundaryPart::Dirichlet);
        Ok(Self {
            q,
            mode,
            yb: Arc::new(build_space(mesh_d, Family::RaviartThomas, q + 1, yb_constraint)?),
            yc: Arc::new(build_space(mesh_n, Family::Lagrange, q + 2, yc_constraint)?),
            p: Arc::new(build_space(mesh.clone(), Family::RaviartThomas, q, None)?),
            u: Arc::new(build_space(mesh, Family::Lagrange, q + 1, None)?),
        })
    }

    pub fn trial_dofs(&self) -> usize {
        self.p.n_dofs() + self.u.n_dofs()
    }

    pub fn total_dofs(&self) -> usize {
        self.yb.n_dofs() + self.yc.n_dofs() + self.trial_dofs()
    }
}
