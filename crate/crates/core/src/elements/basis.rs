//! Reference-element bases built by inverting the DOF matrix over a monomial
//! spanning set.

use faer::linalg::solvers::Solve;
use faer::Mat;

use super::quadrature::{edge_quadrature, triangle_quadrature};
use crate::error::{Error, Result};
use crate::mesh::LOCAL_EDGES;

pub const REFERENCE_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Lagrange,
    RaviartThomas,
    DiscontinuousLagrange,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Lagrange => "Lagrange",
            Family::RaviartThomas => "Raviart-Thomas",
            Family::DiscontinuousLagrange => "discontinuous Lagrange",
        }
    }

    pub fn is_vector(self) -> bool {
        self == Family::RaviartThomas
    }
}

#[derive(Clone, Copy, Debug)]
enum Monomial {
    Scalar(i32, i32),
    /// x^a y^b in one vector component.
    Component(usize, i32, i32),
    /// (x, y) x^a y^b.
    Radial(i32, i32),
}

fn pow(x: f64, k: i32) -> f64 {
    if k <= 0 {
        1.0
    } else {
        x.powi(k)
    }
}

impl Monomial {
    fn value(self, [x, y]: [f64; 2]) -> f64 {
        match self {
            Monomial::Scalar(a, b) => pow(x, a) * pow(y, b),
            _ => unreachable!("scalar evaluation of a vector monomial"),
        }
    }

    fn gradient(self, [x, y]: [f64; 2]) -> [f64; 2] {
        match self {
            Monomial::Scalar(a, b) => [
                if a > 0 { a as f64 * pow(x, a - 1) * pow(y, b) } else { 0.0 },
                if b > 0 { b as f64 * pow(x, a) * pow(y, b - 1) } else { 0.0 },
            ],
            _ => unreachable!("gradient of a vector monomial"),
        }
    }

    fn vector(self, [x, y]: [f64; 2]) -> [f64; 2] {
        match self {
            Monomial::Component(0, a, b) => [pow(x, a) * pow(y, b), 0.0],
            Monomial::Component(_, a, b) => [0.0, pow(x, a) * pow(y, b)],
            Monomial::Radial(a, b) => {
                let m = pow(x, a) * pow(y, b);
                [x * m, y * m]
            }
            Monomial::Scalar(..) => unreachable!("vector evaluation of a scalar monomial"),
        }
    }

    fn divergence(self, [x, y]: [f64; 2]) -> f64 {
        match self {
            Monomial::Component(0, a, b) if a > 0 => a as f64 * pow(x, a - 1) * pow(y, b),
            Monomial::Component(1, a, b) if b > 0 => b as f64 * pow(x, a) * pow(y, b - 1),
            Monomial::Component(..) => 0.0,
            Monomial::Radial(a, b) => (a + b + 2) as f64 * pow(x, a) * pow(y, b),
            Monomial::Scalar(..) => unreachable!("divergence of a scalar monomial"),
        }
    }
}

fn scalar_monomials(degree: i32) -> Vec<Monomial> {
    let mut out = Vec::new();
    for total in 0..=degree {
        for b in 0..=total {
            out.push(Monomial::Scalar(total - b, b));
        }
    }
    out
}

/// Legendre polynomial of degree k at t ∈ [-1, 1].
pub fn legendre(k: usize, t: f64) -> f64 {
    let (mut p0, mut p1) = (1.0, t);
    if k == 0 {
        return 1.0;
    }
    for n in 2..=k {
        let p2 = ((2 * n - 1) as f64 * t * p1 - (n - 1) as f64 * p0) / n as f64;
        p0 = p1;
        p1 = p2;
    }
    p1
}

/// Nodal or moment-based basis on the reference triangle.
///
/// Local DOF order: vertex DOFs, then edge DOFs (local edge 0, 1, 2, each
/// listed along the counter-clockwise edge direction), then cell DOFs.
#[derive(Clone, Debug)]
pub struct ReferenceBasis {
    family: Family,
    degree: usize,
    dofs_per_entity: [usize; 3],
    monomials: Vec<Monomial>,
    /// Row `i` holds the monomial coefficients of basis function `i`.
    coeffs: Vec<f64>,
    nodes: Vec<[f64; 2]>,
    functionals: Option<RtFunctionals>,
}

/// Basis values at a set of reference points, indexed `[point * dim + i]`.
#[derive(Clone, Debug)]
pub struct ScalarTabulation {
    pub n_points: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub gradients: Vec<[f64; 2]>,
}

#[derive(Clone, Debug)]
pub struct VectorTabulation {
    pub n_points: usize,
    pub dim: usize,
    pub values: Vec<[f64; 2]>,
    pub divergences: Vec<f64>,
}

fn lattice_nodes(k: usize) -> Vec<[f64; 2]> {
    let h = 1.0 / k as f64;
    let mut nodes = REFERENCE_VERTICES.to_vec();
    for [p, q] in LOCAL_EDGES {
        let (a, b) = (REFERENCE_VERTICES[p], REFERENCE_VERTICES[q]);
        for j in 1..k {
            let s = j as f64 * h;
            nodes.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
        }
    }
    for j in 1..k {
        for i in 1..k - j {
            nodes.push([i as f64 * h, j as f64 * h]);
        }
    }
    nodes
}

fn invert(dof_matrix: &Mat<f64>) -> Mat<f64> {
    let n = dof_matrix.nrows();
    dof_matrix.partial_piv_lu().solve(Mat::<f64>::identity(n, n))
}

/// Continuous Lagrange basis on the principal lattice, degree 1 to 4.
pub fn lagrange_basis(degree: usize) -> Result<ReferenceBasis> {
    if !(1..=4).contains(&degree) {
        return Err(Error::UnsupportedElement { family: Family::Lagrange.name(), degree });
    }
    let nodes = lattice_nodes(degree);
    let interior = nodes.len() - 3 - 3 * (degree - 1);
    Ok(nodal_basis(Family::Lagrange, degree, nodes, [1, degree - 1, interior]))
}

/// Discontinuous Lagrange basis, degree 0 to 3; every DOF belongs to the cell.
pub fn discontinuous_lagrange_basis(degree: usize) -> Result<ReferenceBasis> {
    if degree > 3 {
        return Err(Error::UnsupportedElement { family: Family::DiscontinuousLagrange.name(), degree });
    }
    let nodes = if degree == 0 { vec![[1.0 / 3.0, 1.0 / 3.0]] } else { lattice_nodes(degree) };
    let n = nodes.len();
    Ok(nodal_basis(Family::DiscontinuousLagrange, degree, nodes, [0, 0, n]))
}

fn nodal_basis(family: Family, degree: usize, nodes: Vec<[f64; 2]>, dofs_per_entity: [usize; 3]) -> ReferenceBasis {
    let monomials = scalar_monomials(degree as i32);
    let n = monomials.len();
    debug_assert_eq!(n, nodes.len());
    let dof_matrix = Mat::from_fn(n, n, |i, j| monomials[j].value(nodes[i]));
    let inv = invert(&dof_matrix);
    let coeffs = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| inv[(j, i)]).collect();
    ReferenceBasis { family, degree, dofs_per_entity, monomials, coeffs, nodes, functionals: None }
}

/// Raviart–Thomas basis of degree 0 to 3 (dimension (q+1)(q+3)).
///
/// Edge DOFs are normal moments ∫_e (v·n) L_k ds against Legendre
/// polynomials in the counter-clockwise edge parameter, with n the outward
/// unit normal. Cell DOFs are moments against (m, 0) and (0, m) for the
/// monomials m of degree at most q − 1.
pub fn rt_basis(degree: usize) -> Result<ReferenceBasis> {
    if degree > 3 {
        return Err(Error::UnsupportedElement { family: Family::RaviartThomas.name(), degree });
    }
    let q = degree as i32;
    let mut monomials = Vec::new();
    for comp in 0..2 {
        for m in scalar_monomials(q) {
            let Monomial::Scalar(a, b) = m else { unreachable!() };
            monomials.push(Monomial::Component(comp, a, b));
        }
    }
    for b in 0..=q {
        monomials.push(Monomial::Radial(q - b, b));
    }
    let n = monomials.len();
    debug_assert_eq!(n, (degree + 1) * (degree + 3));
    let functionals = rt_functionals(degree);
    let dof_matrix = Mat::from_fn(n, n, |i, j| functionals.apply(i, |p| monomials[j].vector(p)));
    let inv = invert(&dof_matrix);
    let coeffs = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| inv[(j, i)]).collect();
    Ok(ReferenceBasis {
        family: Family::RaviartThomas,
        degree,
        dofs_per_entity: [0, degree + 1, degree * (degree + 1)],
        monomials,
        coeffs,
        nodes: Vec::new(),
        functionals: Some(functionals),
    })
}

/// Quadrature-based DOF functionals of the reference RT element.
#[derive(Clone, Debug)]
struct RtFunctionals {
    degree: usize,
    edge_rule: super::quadrature::EdgeRule,
    cell_rule: super::quadrature::TriangleRule,
    cell_moments: Vec<(usize, Monomial)>,
}

fn rt_functionals(degree: usize) -> RtFunctionals {
    let cell_moments = if degree == 0 {
        Vec::new()
    } else {
        (0..2).flat_map(|c| scalar_monomials(degree as i32 - 1).into_iter().map(move |m| (c, m))).collect()
    };
    RtFunctionals {
        degree,
        // Exact for the polynomial RT space; data moments use the same rule.
        edge_rule: edge_quadrature(2 * degree + 6),
        cell_rule: triangle_quadrature(2 * degree + 6),
        cell_moments,
    }
}

impl RtFunctionals {
    fn count(&self) -> usize {
        3 * (self.degree + 1) + self.cell_moments.len()
    }

    fn apply(&self, i: usize, f: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
        let per_edge = self.degree + 1;
        if i < 3 * per_edge {
            let (edge, k) = (i / per_edge, i % per_edge);
            let [p, q] = LOCAL_EDGES[edge];
            let (a, b) = (REFERENCE_VERTICES[p], REFERENCE_VERTICES[q]);
            // Outward normal scaled by the edge length, so the moment is per unit arc length.
            let nu = [b[1] - a[1], a[0] - b[0]];
            self.edge_rule
                .iter()
                .map(|(s, w)| {
                    let v = f([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
                    w * (v[0] * nu[0] + v[1] * nu[1]) * legendre(k, 2.0 * s - 1.0)
                })
                .sum()
        } else {
            let (comp, m) = self.cell_moments[i - 3 * per_edge];
            self.cell_rule.iter().map(|(p, w)| w * f(p)[comp] * m.value(p)).sum()
        }
    }
}

impl ReferenceBasis {
    pub fn new(family: Family, degree: usize) -> Result<Self> {
        match family {
            Family::Lagrange => lagrange_basis(degree),
            Family::RaviartThomas => rt_basis(degree),
            Family::DiscontinuousLagrange => discontinuous_lagrange_basis(degree),
        }
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// DOF counts per (vertex, edge, cell).
    pub fn dofs_per_entity(&self) -> [usize; 3] {
        self.dofs_per_entity
    }

    pub fn dim(&self) -> usize {
        self.monomials.len()
    }

    /// Polynomial degree of the functions (RT_q contains degree q + 1 terms).
    pub fn polynomial_degree(&self) -> usize {
        match self.family {
            Family::RaviartThomas => self.degree + 1,
            _ => self.degree,
        }
    }

    /// Interpolation nodes of nodal families, in local DOF order.
    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    fn combine<T: Copy, const N: usize>(&self, raw: &[T], lift: impl Fn(T) -> [f64; N]) -> Vec<[f64; N]> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut acc = [0.0; N];
                for (c, &r) in self.coeffs[i * n..(i + 1) * n].iter().zip(raw) {
                    let v = lift(r);
                    for k in 0..N {
                        acc[k] += c * v[k];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn values(&self, p: [f64; 2]) -> Vec<f64> {
        assert!(!self.family.is_vector(), "scalar values of a vector basis");
        let raw: Vec<f64> = self.monomials.iter().map(|m| m.value(p)).collect();
        self.combine(&raw, |v| [v]).into_iter().map(|[v]| v).collect()
    }

    pub fn gradients(&self, p: [f64; 2]) -> Vec<[f64; 2]> {
        assert!(!self.family.is_vector(), "gradients of a vector basis");
        let raw: Vec<[f64; 2]> = self.monomials.iter().map(|m| m.gradient(p)).collect();
        self.combine(&raw, |v| v)
    }

    pub fn vector_values(&self, p: [f64; 2]) -> Vec<[f64; 2]> {
        assert!(self.family.is_vector(), "vector values of a scalar basis");
        let raw: Vec<[f64; 2]> = self.monomials.iter().map(|m| m.vector(p)).collect();
        self.combine(&raw, |v| v)
    }

    pub fn divergences(&self, p: [f64; 2]) -> Vec<f64> {
        assert!(self.family.is_vector(), "divergence of a scalar basis");
        let raw: Vec<f64> = self.monomials.iter().map(|m| m.divergence(p)).collect();
        self.combine(&raw, |v| [v]).into_iter().map(|[v]| v).collect()
    }

    pub fn tabulate_scalar(&self, points: &[[f64; 2]]) -> ScalarTabulation {
        let dim = self.dim();
        let mut values = Vec::with_capacity(points.len() * dim);
        let mut gradients = Vec::with_capacity(points.len() * dim);
        for &p in points {
            values.extend(self.values(p));
            gradients.extend(self.gradients(p));
        }
        ScalarTabulation { n_points: points.len(), dim, values, gradients }
    }

    pub fn tabulate_vector(&self, points: &[[f64; 2]]) -> VectorTabulation {
        let dim = self.dim();
        let mut values = Vec::with_capacity(points.len() * dim);
        let mut divergences = Vec::with_capacity(points.len() * dim);
        for &p in points {
            values.extend(self.vector_values(p));
            divergences.extend(self.divergences(p));
        }
        VectorTabulation { n_points: points.len(), dim, values, divergences }
    }

    /// Applies the reference DOF functionals to a reference-domain field.
    /// Scalar families evaluate at nodes (`f(p)[0]`); RT uses moments.
    pub fn apply_dofs(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        match self.family {
            Family::RaviartThomas => {
                let functionals = self.functionals.as_ref().expect("RT basis carries its functionals");
                (0..functionals.count()).map(|i| functionals.apply(i, &f)).collect()
            }
            _ => self.nodes.iter().map(|&p| f(p)[0]).collect(),
        }
    }
}
