//! Implicit domain descriptions.
//!
//! A domain is the open set `{phi < 0}` of a level-set function `phi`. The two
//! built-in shapes are the unit square `[0, 1]^2`, described by a
//! piecewise-linear level set whose zero set is exactly the square's boundary,
//! and a disc. Custom level sets can be supplied as closures.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Point2, Vector2};

use crate::error::{Error, Result};

pub type Point = Point2<f64>;
pub type Vector = Vector2<f64>;

/// Default absolute tolerance on `phi` for boundary classification.
pub const BOUNDARY_TOL: f64 = 1e-12;

/// Step of the central differences used for level-set gradients.
pub const NORMAL_FD_STEP: f64 = 1e-6;

const MAX_BISECTIONS: usize = 200;

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    pub fn new(min: Point, max: Point) -> Self {
        Self { min, max }
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self::new(Point::new(lo, lo), Point::new(hi, hi))
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Self {
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Self { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Point {
        Point::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
        )
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn translated(&self, shift: Vector) -> Self {
        Self::new(self.min + shift, self.max + shift)
    }
}

/// Classification of a point against the level set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointClass {
    Inside,
    Outside,
    OnBoundary,
}

pub type LevelSetFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Shape {
    /// The unit square `[0, 1]^2`.
    Square,
    Disc {
        center: Point,
        radius: f64,
    },
    Custom {
        phi: LevelSetFn,
        /// Whether boundary pieces between clip points are curved.
        curved: bool,
        /// Kinks of the zero level set that clipping must preserve.
        corners: Vec<Point>,
    },
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Square => write!(f, "Square"),
            Shape::Disc { center, radius } => {
                write!(
                    f,
                    "Disc {{ center: ({}, {}), radius: {} }}",
                    center.x, center.y, radius
                )
            }
            Shape::Custom {
                curved, corners, ..
            } => {
                write!(
                    f,
                    "Custom {{ curved: {curved}, corners: {} }}",
                    corners.len()
                )
            }
        }
    }
}

/// A bounded domain `{phi < 0}`.
#[derive(Debug, Clone)]
pub struct LevelSetDomain {
    name: String,
    shape: Shape,
    bounding_box: BoundingBox,
    corners: Vec<Point>,
}

impl LevelSetDomain {
    /// Unit square with level set `|x-1/2| + |y-1/2| + ||x-1/2| - |y-1/2|| - 1`.
    pub fn square() -> Self {
        Self {
            name: "square".into(),
            shape: Shape::Square,
            bounding_box: BoundingBox::square(0.0, 1.0),
            corners: vec![
                Point::new(0.0, 0.0),
                Point::new(1.0, 0.0),
                Point::new(1.0, 1.0),
                Point::new(0.0, 1.0),
            ],
        }
    }

    /// Disc centred at the origin with level set `x^2 + y^2 - r^2`.
    pub fn disc(radius: f64) -> Self {
        Self::disc_at(Point::origin(), radius)
    }

    pub fn disc_at(center: Point, radius: f64) -> Self {
        let r = Vector::new(radius, radius);
        Self {
            name: "disc".into(),
            shape: Shape::Disc { center, radius },
            bounding_box: BoundingBox::new(center - r, center + r),
            corners: Vec::new(),
        }
    }

    pub fn custom(
        name: impl Into<String>,
        phi: impl Fn(Point) -> f64 + Send + Sync + 'static,
        bounding_box: BoundingBox,
        curved: bool,
        corners: Vec<Point>,
    ) -> Self {
        Self {
            name: name.into(),
            shape: Shape::Custom {
                phi: Arc::new(phi),
                curved,
                corners: corners.clone(),
            },
            bounding_box,
            corners,
        }
    }

    /// Looks a built-in domain up by name.
    pub fn from_name(name: &str, radius: f64) -> Result<Self> {
        match name {
            "square" => Ok(Self::square()),
            "disc" => Ok(Self::disc(radius)),
            other => Err(Error::UnknownProblem(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// Rectangle containing `{phi <= 0}`.
    pub fn bounding_box(&self) -> BoundingBox {
        self.bounding_box
    }

    /// Covering box for the background triangulation.
    ///
    /// The square uses `[-0.25, 1.25]^2`, the disc `center +- 1.25 r`; custom
    /// domains pad their bounding box by a quarter of its extent.
    pub fn covering_box(&self) -> BoundingBox {
        match &self.shape {
            Shape::Square => BoundingBox::square(-0.25, 1.25),
            Shape::Disc { center, radius } => {
                let r = Vector::new(1.25 * radius, 1.25 * radius);
                BoundingBox::new(center - r, center + r)
            }
            Shape::Custom { .. } => {
                let b = self.bounding_box;
                let pad = Vector::new(0.25 * b.width(), 0.25 * b.height());
                BoundingBox::new(b.min - pad, b.max + pad)
            }
        }
    }

    pub fn has_curved_boundary(&self) -> bool {
        match &self.shape {
            Shape::Square => false,
            Shape::Disc { .. } => true,
            Shape::Custom { curved, .. } => *curved,
        }
    }

    pub fn corners(&self) -> &[Point] {
        &self.corners
    }

    /// Area of `{phi < 0}` when known in closed form.
    pub fn exact_area(&self) -> Option<f64> {
        match &self.shape {
            Shape::Square => Some(1.0),
            Shape::Disc { radius, .. } => Some(std::f64::consts::PI * radius * radius),
            Shape::Custom { .. } => None,
        }
    }

    /// Evaluates the level-set function.
    #[inline]
    pub fn phi(&self, p: Point) -> f64 {
        match &self.shape {
            Shape::Square => {
                let ax = (p.x - 0.5).abs();
                let ay = (p.y - 0.5).abs();
                ax + ay + (ax - ay).abs() - 1.0
            }
            Shape::Disc { center, radius } => {
                let dx = p.x - center.x;
                let dy = p.y - center.y;
                dx * dx + dy * dy - radius * radius
            }
            Shape::Custom { phi, .. } => phi(p),
        }
    }

    pub fn classify(&self, p: Point, tol: f64) -> PointClass {
        classify_value(self.phi(p), tol)
    }

    /// Locates the boundary on the segment `[a, b]` by bisection.
    ///
    /// The endpoints are put in lexicographic order first, so the result does
    /// not depend on the orientation of the segment. Neighbouring clipped
    /// elements rely on this to share identical boundary vertices.
    pub fn segment_root(&self, a: Point, b: Point, tol: f64) -> Result<Point> {
        let (a, b) = if (a.x, a.y) <= (b.x, b.y) {
            (a, b)
        } else {
            (b, a)
        };
        let phi_a = self.phi(a);
        let phi_b = self.phi(b);
        if !(phi_a * phi_b < 0.0) {
            return Err(Error::NoCrossing { phi_a, phi_b });
        }
        let (mut lo, mut hi) = if phi_a < 0.0 { (a, b) } else { (b, a) };
        for _ in 0..MAX_BISECTIONS {
            let mid = lo + 0.5 * (hi - lo);
            let value = self.phi(mid);
            if value.abs() <= tol {
                return Ok(mid);
            }
            if mid == lo || mid == hi {
                // floating-point resolution reached
                return Ok(if self.phi(lo).abs() <= self.phi(hi).abs() {
                    lo
                } else {
                    hi
                });
            }
            if value < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Err(Error::NonConvergence {
            what: "segment root bisection",
            iterations: MAX_BISECTIONS,
        })
    }

    /// Central-difference gradient of `phi`.
    pub fn gradient(&self, p: Point) -> Vector {
        let h = NORMAL_FD_STEP;
        let dx = Vector::new(h, 0.0);
        let dy = Vector::new(0.0, h);
        Vector::new(
            (self.phi(p + dx) - self.phi(p - dx)) / (2.0 * h),
            (self.phi(p + dy) - self.phi(p - dy)) / (2.0 * h),
        )
    }

    /// Outward unit normal `grad phi / |grad phi|`.
    pub fn outward_normal(&self, p: Point) -> Result<Vector> {
        let g = self.gradient(p);
        let norm = g.norm();
        if norm < 1e-8 {
            return Err(Error::NormalUndefined { x: p.x, y: p.y });
        }
        Ok(g / norm)
    }
}

#[inline]
pub fn classify_value(phi: f64, tol: f64) -> PointClass {
    if phi.abs() <= tol {
        PointClass::OnBoundary
    } else if phi < 0.0 {
        PointClass::Inside
    } else {
        PointClass::Outside
    }
}

/// Signed area of the triangle `(a, b, c)`; positive when counterclockwise.
#[inline]
pub fn signed_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

/// Shoelace area of a closed polygon.
pub fn polygon_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    let mut twice = 0.0;
    for i in 0..n {
        let p = &vertices[i];
        let q = &vertices[(i + 1) % n];
        twice += p.x * q.y - q.x * p.y;
    }
    0.5 * twice
}

#[inline]
pub fn cross(a: &Vector, b: &Vector) -> f64 {
    a.x * b.y - a.y * b.x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_level_set_values() {
        let sq = LevelSetDomain::square();
        assert_eq!(sq.phi(Point::new(0.5, 0.5)), -1.0);
        assert!(sq.phi(Point::new(0.4, 0.0)).abs() < 1e-15);
        assert!(sq.phi(Point::new(1.0, 0.3)).abs() < 1e-15);
    }

    #[test]
    fn disc_level_set_values() {
        let d = LevelSetDomain::disc(1.0);
        assert_eq!(d.phi(Point::new(1.0, 0.0)), 0.0);
        assert_eq!(d.phi(Point::origin()), -1.0);
    }

    #[test]
    fn classify_examples() {
        let sq = LevelSetDomain::square();
        let d = LevelSetDomain::disc(1.0);
        assert_eq!(sq.classify(Point::new(0.5, 0.5), 1e-12), PointClass::Inside);
        assert_eq!(d.classify(Point::new(2.0, 0.0), 1e-12), PointClass::Outside);
        assert_eq!(
            d.classify(Point::new(1.0, 0.0), 1e-12),
            PointClass::OnBoundary
        );
    }

    #[test]
    fn segment_root_examples() {
        let d = LevelSetDomain::disc(1.0);
        let r = d
            .segment_root(Point::new(0.9, 0.0), Point::new(1.1, 0.0), 1e-12)
            .unwrap();
        assert!((r - Point::new(1.0, 0.0)).norm() < 1e-12);

        let sq = LevelSetDomain::square();
        let r = sq
            .segment_root(Point::new(0.95, 0.5), Point::new(1.05, 0.5), 1e-12)
            .unwrap();
        assert!((r - Point::new(1.0, 0.5)).norm() < 1e-12);

        let err = d
            .segment_root(Point::origin(), Point::new(0.5, 0.0), 1e-12)
            .unwrap_err();
        assert!(matches!(err, Error::NoCrossing { .. }));
    }

    #[test]
    fn segment_root_is_orientation_independent() {
        let d = LevelSetDomain::disc(1.0);
        let a = Point::new(0.3, 0.2);
        let b = Point::new(1.4, 0.9);
        let r1 = d.segment_root(a, b, 1e-12).unwrap();
        let r2 = d.segment_root(b, a, 1e-12).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn disc_normal_is_radial() {
        let d = LevelSetDomain::disc(1.0);
        let p = Point::new(0.6, 0.8);
        let n = d.outward_normal(p).unwrap();
        assert!((n - Vector::new(0.6, 0.8)).norm() < 1e-8);
    }

    #[test]
    fn normal_undefined_at_flat_point() {
        let flat = LevelSetDomain::custom(
            "flat",
            |_| 1.0,
            BoundingBox::square(0.0, 1.0),
            false,
            vec![],
        );
        assert!(matches!(
            flat.outward_normal(Point::new(0.5, 0.5)),
            Err(Error::NormalUndefined { .. })
        ));
    }

    #[test]
    fn polygon_area_of_unit_square() {
        let v = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        assert_eq!(polygon_area(&v), 1.0);
    }
}
