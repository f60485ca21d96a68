//! Quadrature on the reference triangle {(0,0), (1,0), (0,1)} and on [0, 1].

/// Points and weights on a reference domain; weights sum to its measure.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule<P> {
    pub points: Vec<P>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly.
    pub degree: usize,
}

pub type TriangleRule = QuadratureRule<[f64; 2]>;
pub type EdgeRule = QuadratureRule<f64>;

impl<P: Copy> QuadratureRule<P> {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (P, f64)> + '_ {
        self.points.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n > 0, "gauss_legendre needs at least one point");
    if n == 1 {
        return (vec![0.0], vec![2.0]);
    }
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Gauss rule on [0, 1] exact for polynomials of the given degree.
pub fn edge_quadrature(degree: usize) -> EdgeRule {
    let n = degree / 2 + 1;
    let (x, w) = gauss_legendre(n);
    EdgeRule {
        points: x.iter().map(|&t| 0.5 * (t + 1.0)).collect(),
        weights: w.iter().map(|&wi| 0.5 * wi).collect(),
        degree: 2 * n - 1,
    }
}

/// Composite rule on [0, 1] with subintervals shrinking geometrically (ratio
/// 1/2) toward `singular_endpoint` (0 or 1). `levels` halvings give
/// `levels + 1` subintervals, each carrying a copy of `base`.
pub fn graded_edge_quadrature(singular_endpoint: u8, levels: usize, base: &EdgeRule) -> EdgeRule {
    assert!(levels >= 1, "graded rule needs at least one level");
    let mut breaks = Vec::with_capacity(levels + 2);
    breaks.push(0.0);
    for k in (0..levels).rev() {
        breaks.push(0.5f64.powi(k as i32 + 1));
    }
    breaks.push(1.0);
    let mut points = Vec::with_capacity((levels + 1) * base.len());
    let mut weights = Vec::with_capacity(points.capacity());
    for pair in breaks.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        for (s, w) in base.iter() {
            let x = a + (b - a) * s;
            points.push(if singular_endpoint == 0 { x } else { 1.0 - x });
            weights.push((b - a) * w);
        }
    }
    EdgeRule { points, weights, degree: base.degree }
}

fn symmetric_orbits(orbits: &[(f64, f64)], centroid: Option<f64>, degree: usize) -> TriangleRule {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    if let Some(w) = centroid {
        points.push([1.0 / 3.0, 1.0 / 3.0]);
        weights.push(0.5 * w);
    }
    for &(a, w) in orbits {
        let b = 1.0 - 2.0 * a;
        for p in [[a, a], [b, a], [a, b]] {
            points.push(p);
            weights.push(0.5 * w);
        }
    }
    TriangleRule { points, weights, degree }
}

/// Rule on the reference triangle exact for polynomials of the given degree.
///
/// Symmetric rules are used up to degree 5; higher degrees fall back to a
/// collapsed tensor Gauss rule.
pub fn triangle_quadrature(degree: usize) -> TriangleRule {
    match degree {
        0 | 1 => symmetric_orbits(&[], Some(1.0), 1),
        2 => symmetric_orbits(&[(1.0 / 6.0, 1.0 / 3.0)], None, 2),
        3 | 4 => symmetric_orbits(
            &[(0.445_948_490_915_965, 0.223_381_589_678_011), (0.091_576_213_509_771, 0.109_951_743_655_322)],
            None,
            4,
        ),
        5 => {
            let s = 15f64.sqrt();
            symmetric_orbits(
                &[((6.0 - s) / 21.0, (155.0 - s) / 1200.0), ((6.0 + s) / 21.0, (155.0 + s) / 1200.0)],
                Some(9.0 / 40.0),
                5,
            )
        }
        _ => collapsed_gauss(degree),
    }
}

/// Duffy-collapsed tensor Gauss rule: x = u, y = v (1 - u).
pub fn collapsed_gauss(degree: usize) -> TriangleRule {
    let n = (degree + 2).div_ceil(2);
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for i in 0..n {
        let u = 0.5 * (x[i] + 1.0);
        for j in 0..n {
            let v = 0.5 * (x[j] + 1.0);
            points.push([u, v * (1.0 - u)]);
            weights.push(0.25 * w[i] * w[j] * (1.0 - u));
        }
    }
    TriangleRule { points, weights, degree: 2 * n - 2 }
}

/// Composite rule on the reference triangle refined geometrically toward
/// one vertex (0, 1 or 2). Each level cuts off the corner triangle at half
/// size and covers the remaining trapezoid with two triangles.
pub fn graded_triangle_quadrature(singular_vertex: usize, levels: usize, base: &TriangleRule) -> TriangleRule {
    let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let s = corners[singular_vertex];
    let mut b = corners[(singular_vertex + 1) % 3];
    let mut c = corners[(singular_vertex + 2) % 3];
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut push = |p0: [f64; 2], p1: [f64; 2], p2: [f64; 2]| {
        let area2 = ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])).abs();
        for (q, w) in base.iter() {
            points.push([
                p0[0] + (p1[0] - p0[0]) * q[0] + (p2[0] - p0[0]) * q[1],
                p0[1] + (p1[1] - p0[1]) * q[0] + (p2[1] - p0[1]) * q[1],
            ]);
            weights.push(w * area2);
        }
    };
    for _ in 0..levels {
        let mb = [(s[0] + b[0]) * 0.5, (s[1] + b[1]) * 0.5];
        let mc = [(s[0] + c[0]) * 0.5, (s[1] + c[1]) * 0.5];
        push(mb, b, c);
        push(mb, c, mc);
        b = mb;
        c = mc;
    }
    push(s, b, c);
    TriangleRule { points, weights, degree: base.degree }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// ∫_T̂ x^a y^b = a! b! / (a + b + 2)!
    fn monomial_integral(a: u32, b: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn basic_integrals() {
        for d in 0..=12 {
            let r = triangle_quadrature(d);
            let area: f64 = r.weights.iter().sum();
            assert!((area - 0.5).abs() < 1e-14, "degree {d}");
            let ix: f64 = r.iter().map(|(p, w)| w * p[0]).sum();
            assert!((ix - 1.0 / 6.0).abs() < 1e-14, "degree {d}");
        }
        let e = edge_quadrature(3);
        let s3: f64 = e.iter().map(|(s, w)| w * s.powi(3)).sum();
        assert!((s3 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn triangle_rules_are_exact_for_every_monomial() {
        for d in 0..=14 {
            let r = triangle_quadrature(d);
            assert!(r.degree >= d);
            for a in 0..=d as u32 {
                for b in 0..=(d as u32 - a) {
                    let got: f64 = r.iter().map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32)).sum();
                    let want = monomial_integral(a, b);
                    assert!((got - want).abs() <= 1e-13 * want, "degree {d}: x^{a} y^{b}: {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn edge_rules_are_exact() {
        for d in 0..=20 {
            let r = edge_quadrature(d);
            for k in 0..=d as i32 {
                let got: f64 = r.iter().map(|(s, w)| w * s.powi(k)).sum();
                assert!((got - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "degree {d}, s^{k}");
            }
        }
    }

    #[test]
    fn graded_edge_rule() {
        let base = edge_quadrature(7);
        let r = graded_edge_quadrature(0, 30, &base);
        let sqrt: f64 = r.iter().map(|(s, w)| w * s.sqrt()).sum();
        let seven_point = graded_edge_quadrature(0, 30, &edge_quadrature(13));
        let sqrt7: f64 = seven_point.iter().map(|(s, w)| w * s.sqrt()).sum();
        assert!((sqrt - 2.0 / 3.0).abs() < 1e-8, "{sqrt}");
        assert!((sqrt7 - 2.0 / 3.0).abs() < 1e-10, "{sqrt7}");
        for levels in [1, 3, 17] {
            for end in [0, 1] {
                let r = graded_edge_quadrature(end, levels, &base);
                let lin: f64 = r.iter().map(|(s, w)| w * s).sum();
                assert!((lin - 0.5).abs() < 1e-15);
            }
        }
        let mirrored = graded_edge_quadrature(1, 30, &edge_quadrature(13));
        let v: f64 = mirrored.iter().map(|(s, w)| w * (1.0 - s).sqrt()).sum();
        assert!((v - 2.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn graded_edge_error_decreases_with_levels() {
        let base = edge_quadrature(7);
        let mut last = f64::INFINITY;
        for levels in 5..=30 {
            let r = graded_edge_quadrature(0, levels, &base);
            let err = (r.iter().map(|(s, w)| w * s.sqrt()).sum::<f64>() - 2.0 / 3.0).abs();
            assert!(err <= last, "levels {levels}: {err} > {last}");
            last = err;
        }
    }

    #[test]
    fn graded_triangle_rule_is_exact_and_resolves_corner() {
        let base = triangle_quadrature(7);
        for v in 0..3 {
            let r = graded_triangle_quadrature(v, 6, &base);
            let area: f64 = r.weights.iter().sum();
            assert!((area - 0.5).abs() < 1e-14);
            let xy2: f64 = r.iter().map(|(p, w)| w * p[0] * p[1] * p[1]).sum();
            assert!((xy2 - monomial_integral(1, 2)).abs() < 1e-15);
        }
        // ∫_T̂ r^{-1} dA = √2 · asinh(1) with r measured from the origin.
        let want = std::f64::consts::SQRT_2 * 1f64.asinh();
        let f = |p: [f64; 2]| 1.0 / p[0].hypot(p[1]);
        let err = |levels: usize, base: &TriangleRule| {
            let r = graded_triangle_quadrature(0, levels, base);
            (r.iter().map(|(p, w)| w * f(p)).sum::<f64>() - want).abs() / want
        };
        assert!(err(20, &base) < err(2, &base));
        assert!(err(20, &base) < 1e-5);
        assert!(err(20, &triangle_quadrature(12)) < 1e-6);
    }
}
