use crate::error::{Error, Result};
use crate::mesh::Vertex;

/// Affine map x = x0 + J x̂ from the reference triangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementMap {
    pub origin: [f64; 2],
    pub jacobian: [[f64; 2]; 2],
    pub det: f64,
    /// J⁻ᵀ, used for gradients.
    pub inv_transpose: [[f64; 2]; 2],
}

impl ElementMap {
    pub fn new(v: [Vertex; 3]) -> Result<Self> {
        let jacobian = [[v[1].x - v[0].x, v[2].x - v[0].x], [v[1].y - v[0].y, v[2].y - v[0].y]];
        Self::from_jacobian([v[0].x, v[0].y], jacobian)
    }

    pub fn from_jacobian(origin: [f64; 2], jacobian: [[f64; 2]; 2]) -> Result<Self> {
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::DegenerateElement(det));
        }
        let inv_transpose = [
            [jacobian[1][1] / det, -jacobian[1][0] / det],
            [-jacobian[0][1] / det, jacobian[0][0] / det],
        ];
        Ok(Self { origin, jacobian, det, inv_transpose })
    }

    pub fn identity() -> Self {
        Self::from_jacobian([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]]).expect("identity is regular")
    }

    pub fn to_physical(&self, p: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        [self.origin[0] + j[0][0] * p[0] + j[0][1] * p[1], self.origin[1] + j[1][0] * p[0] + j[1][1] * p[1]]
    }

    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        let (dx, dy) = (x[0] - self.origin[0], x[1] - self.origin[1]);
        // J⁻¹ = (J⁻ᵀ)ᵀ
        let it = &self.inv_transpose;
        [it[0][0] * dx + it[1][0] * dy, it[0][1] * dx + it[1][1] * dy]
    }

    /// Physical gradient of a mapped scalar: J⁻ᵀ ∇̂.
    pub fn map_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        let it = &self.inv_transpose;
        [it[0][0] * g[0] + it[0][1] * g[1], it[1][0] * g[0] + it[1][1] * g[1]]
    }

    /// Contravariant Piola transform J v̂ / det J.
    pub fn piola(&self, v: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        [(j[0][0] * v[0] + j[0][1] * v[1]) / self.det, (j[1][0] * v[0] + j[1][1] * v[1]) / self.det]
    }

    pub fn piola_divergence(&self, div: f64) -> f64 {
        div / self.det
    }

    /// Inverse Piola transform det J · J⁻¹ v.
    pub fn piola_pullback(&self, v: [f64; 2]) -> [f64; 2] {
        let it = &self.inv_transpose;
        [self.det * (it[0][0] * v[0] + it[1][0] * v[1]), self.det * (it[0][1] * v[0] + it[1][1] * v[1])]
    }
}
