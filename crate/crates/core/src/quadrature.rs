//! Quadrature on triangles, segments, clipped polygons and curved boundary arcs.
//!
//! Curved boundary facets are integrated on the exact boundary curve: a point
//! at chord parameter `t` is pushed along the chord normal onto `{phi = 0}`,
//! and the arc-length and cone Jacobians use the derivative of that map.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{cross, signed_area, LevelSetDomain, Point, Vector};
use crate::mesh::{ActiveMesh, EdgeKind, Facet, PolytopicElement};

pub const MAX_TRIANGLE_DEGREE: usize = 20;
const MAX_GAUSS_POINTS: usize = 40;
const KERNEL_SAMPLES: usize = 12;

#[derive(Debug, Clone, Default)]
pub struct QuadRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub exactness: usize,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(*p))
            .sum()
    }

    fn append(&mut self, other: QuadRule) {
        self.points.extend(other.points);
        self.weights.extend(other.weights);
    }
}

/// A facet rule; every point carries the unit normal of the facet there.
#[derive(Debug, Clone, Default)]
pub struct FacetRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub normals: Vec<Vector>,
    pub exactness: usize,
}

impl FacetRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn integrate(&self, f: impl Fn(Point, Vector) -> f64) -> f64 {
        (0..self.len())
            .map(|i| self.weights[i] * f(self.points[i], self.normals[i]))
            .sum()
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]` with `n` points.
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static TABLE: OnceLock<Vec<(Vec<f64>, Vec<f64>)>> = OnceLock::new();
    let table = TABLE.get_or_init(|| (0..=MAX_GAUSS_POINTS).map(compute_gauss_legendre).collect());
    &table[n.clamp(1, MAX_GAUSS_POINTS)]
}

fn compute_gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = n.max(1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Newton on P_n from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { x } else { p1 };
            let pn1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
            let dx = pn / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        // map [-1, 1] -> [0, 1]
        nodes[n - 1 - i] = 0.5 * (x + 1.0);
        weights[n - 1 - i] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Points per direction for a collapsed product rule exact to `degree`.
fn collapsed_points(degree: usize) -> usize {
    (degree + 3) / 2
}

/// Rule on the reference triangle `(0,0), (1,0), (0,1)` as `(xi, eta, weight)`.
fn reference_triangle(degree: usize) -> Result<&'static [(f64, f64, f64)]> {
    static TABLE: OnceLock<Vec<Vec<(f64, f64, f64)>>> = OnceLock::new();
    if degree > MAX_TRIANGLE_DEGREE {
        return Err(Error::UnsupportedDegree {
            degree,
            max: MAX_TRIANGLE_DEGREE,
        });
    }
    let table = TABLE.get_or_init(|| {
        (0..=MAX_TRIANGLE_DEGREE)
            .map(|d| {
                let (u, wu) = gauss_legendre(collapsed_points(d));
                let mut rule = Vec::with_capacity(u.len() * u.len());
                for (a, wa) in u.iter().zip(wu) {
                    for (b, wb) in u.iter().zip(wu) {
                        // Duffy collapse: x = a, y = b (1 - a)
                        rule.push((*a, b * (1.0 - a), wa * wb * (1.0 - a)));
                    }
                }
                rule
            })
            .collect()
    });
    Ok(&table[degree])
}

/// Rule on the physical triangle `tri`, exact for total degree `degree`.
pub fn triangle_rule(tri: &[Point; 3], degree: usize) -> Result<QuadRule> {
    let reference = reference_triangle(degree)?;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let jac = cross(&e1, &e2).abs();
    let mut rule = QuadRule {
        points: Vec::with_capacity(reference.len()),
        weights: Vec::with_capacity(reference.len()),
        exactness: degree,
    };
    for &(xi, eta, w) in reference {
        rule.points.push(tri[0] + e1 * xi + e2 * eta);
        rule.weights.push(w * jac);
    }
    Ok(rule)
}

/// Gauss–Legendre rule on the segment `[a, b]` exact for `degree`.
pub fn segment_rule(a: Point, b: Point, degree: usize) -> Result<QuadRule> {
    let length = (b - a).norm();
    if length < 1e-14 {
        return Err(Error::DegenerateSegment { length });
    }
    let (t, w) = gauss_legendre((degree + 1).div_ceil(2).max(1));
    Ok(QuadRule {
        points: t.iter().map(|t| a + (b - a) * *t).collect(),
        weights: w.iter().map(|w| w * length).collect(),
        exactness: degree,
    })
}

/// The exact boundary curve between two boundary points `a` and `b`.
///
/// `gamma(t) = a + t (b - a) + s(t) n_c` with `n_c` the outward chord normal
/// and `s(t)` the signed offset that puts `gamma(t)` on `{phi = 0}`.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryArc<'a> {
    pub a: Point,
    pub b: Point,
    pub chord_normal: Vector,
    pub domain: &'a LevelSetDomain,
}

impl<'a> BoundaryArc<'a> {
    pub fn new(a: Point, b: Point, domain: &'a LevelSetDomain) -> Self {
        let d = b - a;
        let chord_normal = Vector::new(d.y, -d.x) / d.norm();
        Self {
            a,
            b,
            chord_normal,
            domain,
        }
    }

    /// Point on the boundary at chord parameter `t`, located to floating-point
    /// resolution (a fixed `phi` tolerance would dominate on tiny elements).
    pub fn point(&self, t: f64) -> Result<Point> {
        if t <= 0.0 {
            return Ok(self.a);
        }
        if t >= 1.0 {
            return Ok(self.b);
        }
        let p0 = self.a + (self.b - self.a) * t;
        let phi0 = self.domain.phi(p0);
        if phi0 == 0.0 {
            return Ok(p0);
        }
        let dir = if phi0 < 0.0 {
            self.chord_normal
        } else {
            -self.chord_normal
        };
        let mut step = 0.25 * (self.b - self.a).norm();
        for _ in 0..60 {
            let q = p0 + dir * step;
            if self.domain.phi(q) * phi0 < 0.0 {
                return self.domain.segment_root(p0, q, 0.0);
            }
            step *= 2.0;
        }
        Err(Error::NoCrossing {
            phi_a: phi0,
            phi_b: phi0,
        })
    }

    /// Point and parameter derivative `gamma'(t)`.
    pub fn point_and_tangent(&self, t: f64) -> Result<(Point, Vector)> {
        let p = self.point(t)?;
        let chord = self.b - self.a;
        let grad = self.domain.gradient(p);
        let denom = grad.dot(&self.chord_normal);
        if denom.abs() < 1e-8 * grad.norm().max(1e-300) {
            return Err(Error::NormalUndefined { x: p.x, y: p.y });
        }
        let ds = -grad.dot(&chord) / denom;
        Ok((p, chord + self.chord_normal * ds))
    }

    /// Samples `(gamma, gamma', weight)` over `n_sub` equal parameter pieces.
    fn samples(&self, degree: usize, n_sub: usize) -> Result<Vec<(Point, Vector, f64)>> {
        let n_sub = n_sub.max(1);
        let (t, w) = gauss_legendre(collapsed_points(degree));
        let dt = 1.0 / n_sub as f64;
        let mut out = Vec::with_capacity(n_sub * t.len());
        for piece in 0..n_sub {
            for (ti, wi) in t.iter().zip(w) {
                let (p, tangent) = self.point_and_tangent((piece as f64 + ti) * dt)?;
                out.push((p, tangent, wi * dt));
            }
        }
        Ok(out)
    }
}

/// Rule on a boundary facet lying on the curved part of the boundary.
pub fn curved_facet_rule(
    facet: &Facet,
    domain: &LevelSetDomain,
    degree: usize,
    n_sub: usize,
) -> Result<FacetRule> {
    let (a, b) = facet.endpoints;
    if (b - a).norm() < 1e-14 {
        return Err(Error::DegenerateSegment {
            length: (b - a).norm(),
        });
    }
    let arc = BoundaryArc::new(a, b, domain);
    let samples = arc.samples(degree, n_sub)?;
    let mut rule = FacetRule {
        exactness: degree,
        ..Default::default()
    };
    for (p, tangent, w) in samples {
        rule.points.push(p);
        rule.weights.push(w * tangent.norm());
        rule.normals.push(domain.outward_normal(p)?);
    }
    Ok(rule)
}

/// Rule on a straight facet with its constant normal.
pub fn straight_facet_rule(facet: &Facet, degree: usize) -> Result<FacetRule> {
    let seg = segment_rule(facet.endpoints.0, facet.endpoints.1, degree)?;
    let normals = vec![facet.normal; seg.len()];
    Ok(FacetRule {
        points: seg.points,
        weights: seg.weights,
        normals,
        exactness: degree,
    })
}

pub fn facet_rule(
    facet: &Facet,
    domain: &LevelSetDomain,
    degree: usize,
    n_sub: usize,
) -> Result<FacetRule> {
    if facet.curved {
        curved_facet_rule(facet, domain, degree, n_sub)
    } else {
        straight_facet_rule(facet, degree)
    }
}

/// Volume rule on a clipped element by fanning from a kernel point.
///
/// Straight edges produce ordinary triangles; curved edges produce curved
/// cones `apex + xi (gamma(t) - apex)` integrated on the exact arc.
pub fn polytope_rule(
    element: &PolytopicElement,
    domain: &LevelSetDomain,
    degree: usize,
    n_sub: usize,
) -> Result<QuadRule> {
    if !element.is_cut && element.num_edges() == 3 {
        let tri = [
            element.vertices[0],
            element.vertices[1],
            element.vertices[2],
        ];
        return triangle_rule(&tri, degree);
    }
    let fan = fan_rules(element, domain, degree, n_sub)?;
    let mut rule = QuadRule {
        exactness: degree,
        ..Default::default()
    };
    for cone in fan.cones {
        rule.append(cone);
    }
    Ok(rule)
}

/// Sub-element cones over every edge from a common apex.
#[derive(Debug, Clone)]
pub struct Fan {
    pub apex: Point,
    /// One rule per element edge, in edge order.
    pub cones: Vec<QuadRule>,
}

pub fn fan_rules(
    element: &PolytopicElement,
    domain: &LevelSetDomain,
    degree: usize,
    n_sub: usize,
) -> Result<Fan> {
    let arcs: Vec<Option<Vec<(Point, Vector, f64)>>> = (0..element.num_edges())
        .map(|i| match element.edge_kinds[i] {
            EdgeKind::Boundary { curved: true } => {
                let (s, t) = element.edge(i);
                BoundaryArc::new(s, t, domain)
                    .samples(degree + 1, n_sub)
                    .map(Some)
            }
            _ => Ok(None),
        })
        .collect::<Result<_>>()?;

    let apex = find_apex(element, &arcs).ok_or(Error::NonStarShaped {
        element: element.id,
    })?;
    let (xi, wxi) = gauss_legendre(collapsed_points(degree));
    let mut cones = Vec::with_capacity(element.num_edges());
    for i in 0..element.num_edges() {
        let (s, t) = element.edge(i);
        let cone = match &arcs[i] {
            None => triangle_rule(&[apex, s, t], degree)?,
            Some(samples) => {
                let mut rule = QuadRule {
                    exactness: degree,
                    ..Default::default()
                };
                for (g, tangent, w) in samples {
                    let jac = cross(&(g - apex), tangent);
                    for (x, wx) in xi.iter().zip(wxi) {
                        rule.points.push(apex + (g - apex) * *x);
                        rule.weights.push(w * wx * x * jac);
                    }
                }
                rule
            }
        };
        cones.push(cone);
    }
    Ok(Fan { apex, cones })
}

/// Star-shapedness margin of the fan from `apex` (positive when valid).
fn fan_margin(
    element: &PolytopicElement,
    arcs: &[Option<Vec<(Point, Vector, f64)>>],
    apex: &Point,
) -> f64 {
    let scale = element.h_k * element.h_k;
    let mut margin = f64::INFINITY;
    for i in 0..element.num_edges() {
        let (s, t) = element.edge(i);
        let m = match &arcs[i] {
            None => signed_area(apex, &s, &t),
            Some(samples) => samples
                .iter()
                .map(|(g, tangent, _)| cross(&(g - apex), tangent))
                .fold(f64::INFINITY, f64::min),
        };
        margin = margin.min(m / scale);
    }
    margin
}

fn find_apex(
    element: &PolytopicElement,
    arcs: &[Option<Vec<(Point, Vector, f64)>>],
) -> Option<Point> {
    const MIN_MARGIN: f64 = 1e-12;
    let centroid = element.centroid();
    if fan_margin(element, arcs, &centroid) > MIN_MARGIN {
        return Some(centroid);
    }
    // sample convex combinations of the vertices and keep the best
    let n = element.num_edges();
    let mut best: Option<(f64, Point)> = None;
    for i in 0..n {
        for j in 0..n {
            for k in 1..KERNEL_SAMPLES {
                let lambda = k as f64 / KERNEL_SAMPLES as f64;
                let a = nalgebra::center(&element.vertices[i], &element.vertices[j]);
                let p = a + (centroid - a) * lambda;
                let m = fan_margin(element, arcs, &p);
                if m > MIN_MARGIN && best.is_none_or(|(bm, _)| m > bm) {
                    best = Some((m, p));
                }
            }
        }
    }
    best.map(|(_, p)| p)
}

/// Volume and facet rules for every element and facet of a mesh.
#[derive(Debug, Clone)]
pub struct QuadratureTable {
    pub volume: Vec<QuadRule>,
    pub facets: Vec<FacetRule>,
    pub volume_degree: usize,
    pub facet_degree: usize,
}

impl QuadratureTable {
    pub fn build(
        mesh: &ActiveMesh,
        volume_degree: usize,
        facet_degree: usize,
        n_sub: usize,
    ) -> Result<Self> {
        let volume = mesh
            .elements
            .iter()
            .map(|e| polytope_rule(e, &mesh.domain, volume_degree, n_sub))
            .collect::<Result<Vec<_>>>()?;
        let facets = mesh
            .facets
            .iter()
            .map(|f| facet_rule(f, &mesh.domain, facet_degree, n_sub))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            volume,
            facets,
            volume_degree,
            facet_degree,
        })
    }

    pub fn volume_rule(&self, element: usize) -> Result<&QuadRule> {
        self.volume.get(element).ok_or(Error::QuadratureMissing {
            what: "element",
            index: element,
        })
    }

    pub fn facet_rule(&self, facet: usize) -> Result<&FacetRule> {
        self.facets.get(facet).ok_or(Error::QuadratureMissing {
            what: "facet",
            index: facet,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoundingBox, BOUNDARY_TOL};
    use crate::mesh::{build_active_mesh, build_background, clip_element, FacetKind};

    fn p(x: f64, y: f64) -> Point {
        Point::new(x, y)
    }

    /// Closed form of the integral of x^a y^b over the unit reference triangle.
    fn reference_monomial(a: u32, b: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(f64::from).product::<f64>();
        fact(a) * fact(b) / fact(a + b + 2)
    }

    #[test]
    fn gauss_legendre_weights_and_exactness() {
        for n in 1..=20 {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(w.iter().all(|&w| w > 0.0));
            let k = 2 * n - 1;
            let integral: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(k as i32)).sum();
            assert!((integral - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n = {n}");
        }
    }

    #[test]
    fn triangle_rule_examples() {
        let tri = [p(0.0, 0.0), p(1.0, 0.0), p(0.0, 1.0)];
        assert!((triangle_rule(&tri, 1).unwrap().measure() - 0.5).abs() < 1e-15);
        let r = triangle_rule(&tri, 4).unwrap();
        assert!((r.integrate(|q| q.x * q.x * q.y * q.y) - 1.0 / 180.0).abs() < 1e-15);
        assert!(matches!(
            triangle_rule(&tri, 21),
            Err(Error::UnsupportedDegree {
                degree: 21,
                max: 20
            })
        ));
    }

    #[test]
    fn triangle_rule_is_exact_to_its_degree() {
        let tri = [p(0.0, 0.0), p(1.0, 0.0), p(0.0, 1.0)];
        for d in 0..=MAX_TRIANGLE_DEGREE {
            let r = triangle_rule(&tri, d).unwrap();
            assert!(r.weights.iter().all(|&w| w > 0.0));
            for a in 0..=d as u32 {
                let b = d as u32 - a;
                let exact = reference_monomial(a, b);
                let got = r.integrate(|q| q.x.powi(a as i32) * q.y.powi(b as i32));
                assert!(
                    ((got - exact) / exact).abs() < 1e-12,
                    "degree {d}, x^{a} y^{b}"
                );
            }
        }
    }

    #[test]
    fn segment_rule_examples() {
        let r = segment_rule(p(0.0, 0.0), p(1.0, 0.0), 3).unwrap();
        assert!((r.integrate(|q| q.x.powi(3)) - 0.25).abs() < 1e-15);
        let r = segment_rule(p(0.1, 0.2), p(0.7, -0.6), 5).unwrap();
        assert!((r.measure() - 1.0).abs() < 1e-14);
        assert!(matches!(
            segment_rule(p(1.0, 1.0), p(1.0, 1.0), 2),
            Err(Error::DegenerateSegment { .. })
        ));
    }

    #[test]
    fn clipped_square_element_area_matches_shoelace() {
        let sq = LevelSetDomain::square();
        let e = clip_element(
            &[p(0.9, 0.9), p(1.2, 0.9), p(0.9, 1.2)],
            0,
            &sq,
            BOUNDARY_TOL,
        )
        .unwrap();
        let r = polytope_rule(&e, &sq, 3, 8).unwrap();
        assert!((r.measure() - e.area).abs() < 1e-13);
    }

    #[test]
    fn uncut_element_uses_the_triangle_rule() {
        let sq = LevelSetDomain::square();
        let bg = build_background(sq.covering_box(), 0.25).unwrap();
        let mesh = build_active_mesh(&bg, &sq, BOUNDARY_TOL).unwrap();
        let e = &mesh.elements[3];
        let r = polytope_rule(e, &sq, 4, 8).unwrap();
        let t = triangle_rule(&[e.vertices[0], e.vertices[1], e.vertices[2]], 4).unwrap();
        assert_eq!(r.points, t.points);
        assert_eq!(r.weights, t.weights);
    }

    #[test]
    fn disc_volume_and_circumference_are_exact() {
        let d = LevelSetDomain::disc(1.0);
        let bg = build_background(d.covering_box(), 0.0625).unwrap();
        let mesh = build_active_mesh(&bg, &d, BOUNDARY_TOL).unwrap();
        let table = QuadratureTable::build(&mesh, 4, 4, 8).unwrap();
        let area: f64 = table.volume.iter().map(|r| r.measure()).sum();
        assert!((area - std::f64::consts::PI).abs() < 1e-10, "{area}");
        let second_moment: f64 = table
            .volume
            .iter()
            .map(|r| r.integrate(|q| q.x * q.x + q.y * q.y))
            .sum();
        assert!((second_moment - std::f64::consts::PI / 2.0).abs() < 1e-10);
        let circumference: f64 = mesh
            .boundary_facets()
            .map(|f| table.facets[f.id].measure())
            .sum();
        assert!(
            (circumference - 2.0 * std::f64::consts::PI).abs() < 1e-10,
            "{circumference}"
        );
        for f in mesh.boundary_facets() {
            let r = &table.facets[f.id];
            for (q, n) in r.points.iter().zip(&r.normals) {
                assert!((n - q.coords / q.coords.norm()).norm() < 1e-5);
                assert!(d.phi(*q).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn curved_rule_is_insensitive_to_subdivision() {
        let d = LevelSetDomain::disc(1.0);
        let bg = build_background(d.covering_box(), 0.125).unwrap();
        let mesh = build_active_mesh(&bg, &d, BOUNDARY_TOL).unwrap();
        for e in mesh.elements.iter().filter(|e| e.has_curved_edge()) {
            let coarse = polytope_rule(e, &d, 6, 8)
                .unwrap()
                .integrate(|q| q.x * q.x + q.y * q.y);
            let fine = polytope_rule(e, &d, 6, 64)
                .unwrap()
                .integrate(|q| q.x * q.x + q.y * q.y);
            assert!((coarse - fine).abs() < 1e-6 * e.h_k * e.h_k);
        }
    }

    #[test]
    fn straight_boundary_facets_have_exact_length() {
        let sq = LevelSetDomain::square();
        let bg = build_background(BoundingBox::square(-0.213, 1.287), 0.125).unwrap();
        let mesh = build_active_mesh(&bg, &sq, BOUNDARY_TOL).unwrap();
        for f in mesh.facets.iter().filter(|f| f.kind == FacetKind::Boundary) {
            let r = facet_rule(f, &sq, 5, 8).unwrap();
            assert!((r.measure() - f.length()).abs() < 1e-15);
        }
    }
}
