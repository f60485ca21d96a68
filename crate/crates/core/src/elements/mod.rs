//! Reference elements, quadrature and reference-to-physical maps.

pub mod basis;
pub mod map;
pub mod quadrature;

pub use basis::{discontinuous_lagrange_basis, lagrange_basis, rt_basis, Family, ReferenceBasis};
pub use map::ElementMap;
pub use quadrature::{
    edge_quadrature, graded_edge_quadrature, graded_triangle_quadrature, triangle_quadrature, EdgeRule,
    QuadratureRule, TriangleRule,
};
