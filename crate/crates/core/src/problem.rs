//! Manufactured Stokes solutions with closed-form velocity, pressure and forcing.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::Matrix2;

use crate::error::{Error, Result};
use crate::geometry::{LevelSetDomain, Point, Vector};
use crate::quadrature::gauss_legendre;

pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(Point) -> Vector + Send + Sync>;
/// `grad[(c, d)] = d u_c / d x_d`.
pub type TensorField = Arc<dyn Fn(Point) -> Matrix2<f64> + Send + Sync>;

/// Exact `(u, p)` with forcing `f = -Δu + ∇p`, divergence-free `u`, `u = 0` on
/// the boundary and zero-mean `p`.
#[derive(Clone)]
pub struct ManufacturedProblem {
    pub name: String,
    pub domain: LevelSetDomain,
    pub velocity: VectorField,
    pub velocity_gradient: TensorField,
    pub pressure: ScalarField,
    pub forcing: VectorField,
}

impl fmt::Debug for ManufacturedProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ManufacturedProblem")
            .field("name", &self.name)
            .field("domain", &self.domain)
            .finish()
    }
}

/// Default disc radius.
pub const DISC_RADIUS: f64 = 1.0;
/// Decay rate of the disc solution.
pub const DISC_DECAY: f64 = 1.5 * PI;

/// Looks up a built-in problem: `square` or `disc`.
pub fn make_problem(name: &str) -> Result<ManufacturedProblem> {
    match name {
        "square" => Ok(ManufacturedProblem::square()),
        "disc" => Ok(ManufacturedProblem::disc(DISC_RADIUS)),
        other => Err(Error::UnknownProblem(other.to_string())),
    }
}

impl ManufacturedProblem {
    /// Trigonometric solution on the unit square.
    pub fn square() -> Self {
        let tau = 2.0 * PI;
        let velocity = move |x: Point| {
            let (cx, sx) = ((tau * x.x).cos(), (tau * x.x).sin());
            let (cy, sy) = ((tau * x.y).cos(), (tau * x.y).sin());
            Vector::new((cx - 1.0) * sy, -(cy - 1.0) * sx)
        };
        let velocity_gradient = move |x: Point| {
            let (cx, sx) = ((tau * x.x).cos(), (tau * x.x).sin());
            let (cy, sy) = ((tau * x.y).cos(), (tau * x.y).sin());
            Matrix2::new(
                -tau * sx * sy,
                tau * (cx - 1.0) * cy,
                -tau * (cy - 1.0) * cx,
                tau * sy * sx,
            )
        };
        let pressure = move |x: Point| (tau * x.x).sin() * (tau * x.y).cos();
        let forcing = move |x: Point| {
            let (cx, sx) = ((tau * x.x).cos(), (tau * x.x).sin());
            let (cy, sy) = ((tau * x.y).cos(), (tau * x.y).sin());
            let k2 = tau * tau;
            Vector::new(
                k2 * sy * (2.0 * cx - 1.0) + tau * cx * cy,
                -k2 * sx * (2.0 * cy - 1.0) - tau * sx * sy,
            )
        };
        Self {
            name: "square".into(),
            domain: LevelSetDomain::square(),
            velocity: Arc::new(velocity),
            velocity_gradient: Arc::new(velocity_gradient),
            pressure: Arc::new(pressure),
            forcing: Arc::new(forcing),
        }
    }

    /// Rotational solution on the disc of radius `r`, with `F(s) = (s - r^2) e^{-ks/2}`,
    /// `u = (-y F, x F)` and `p = (s - r^2)^2 (2y^2 + x^2) e^{-ks} / 2` shifted to zero mean.
    pub fn disc(r: f64) -> Self {
        let k = DISC_DECAY;
        let r2 = r * r;
        let f0 = move |s: f64| (s - r2) * (-0.5 * k * s).exp();
        let f1 = move |s: f64| (-0.5 * k * s).exp() * (1.0 - 0.5 * k * (s - r2));
        let f2 = move |s: f64| (-0.5 * k * s).exp() * (-k + 0.25 * k * k * (s - r2));
        let g0 = move |s: f64| 0.5 * (s - r2).powi(2) * (-k * s).exp();
        let g1 = move |s: f64| (-k * s).exp() * ((s - r2) - 0.5 * k * (s - r2).powi(2));
        let mean = disc_pressure_mean(r, k);

        let velocity = move |x: Point| {
            let f = f0(x.x * x.x + x.y * x.y);
            Vector::new(-x.y * f, x.x * f)
        };
        let velocity_gradient = move |x: Point| {
            let s = x.x * x.x + x.y * x.y;
            let (f, df) = (f0(s), f1(s));
            Matrix2::new(
                -2.0 * x.x * x.y * df,
                -f - 2.0 * x.y * x.y * df,
                f + 2.0 * x.x * x.x * df,
                2.0 * x.x * x.y * df,
            )
        };
        let pressure = move |x: Point| {
            let s = x.x * x.x + x.y * x.y;
            g0(s) * (2.0 * x.y * x.y + x.x * x.x) - mean
        };
        let forcing = move |x: Point| {
            let s = x.x * x.x + x.y * x.y;
            let lap = 8.0 * f1(s) + 4.0 * s * f2(s);
            let (g, dg) = (g0(s), g1(s));
            let h = 2.0 * x.y * x.y + x.x * x.x;
            let px = 2.0 * x.x * dg * h + 2.0 * x.x * g;
            let py = 2.0 * x.y * dg * h + 4.0 * x.y * g;
            Vector::new(x.y * lap + px, -x.x * lap + py)
        };
        Self {
            name: "disc".into(),
            domain: LevelSetDomain::disc(r),
            velocity: Arc::new(velocity),
            velocity_gradient: Arc::new(velocity_gradient),
            pressure: Arc::new(pressure),
            forcing: Arc::new(forcing),
        }
    }

    /// Cubic solution on the disc: `u = curl (s - r^2)^2 = 4 (s - r^2) (y, -x)`, `p = x`.
    ///
    /// It lies in the velocity space for `p >= 3`, so the discrete solution
    /// must reproduce it up to round-off and quadrature error.
    pub fn disc_cubic(r: f64) -> Self {
        let r2 = r * r;
        let velocity = move |x: Point| {
            let w = 4.0 * (x.x * x.x + x.y * x.y - r2);
            Vector::new(w * x.y, -w * x.x)
        };
        let velocity_gradient = move |x: Point| {
            let w = 4.0 * (x.x * x.x + x.y * x.y - r2);
            Matrix2::new(
                8.0 * x.x * x.y,
                w + 8.0 * x.y * x.y,
                -w - 8.0 * x.x * x.x,
                -8.0 * x.x * x.y,
            )
        };
        Self {
            name: "disc-cubic".into(),
            domain: LevelSetDomain::disc(r),
            velocity: Arc::new(velocity),
            velocity_gradient: Arc::new(velocity_gradient),
            pressure: Arc::new(|x: Point| x.x),
            forcing: Arc::new(|x: Point| Vector::new(-32.0 * x.y + 1.0, 32.0 * x.x)),
        }
    }

    pub fn divergence(&self, x: Point) -> f64 {
        (self.velocity_gradient)(x).trace()
    }
}

/// Mean of the unshifted disc pressure, `(3π/2) ∫_0^r (ρ²-r²)² ρ³ e^{-kρ²} dρ / (π r²)`.
fn disc_pressure_mean(r: f64, k: f64) -> f64 {
    let (t, w) = gauss_legendre(30);
    let integral: f64 = t
        .iter()
        .zip(w)
        .map(|(t, w)| {
            let rho = r * t;
            let s = rho * rho;
            w * r * (s - r * r).powi(2) * rho.powi(3) * (-k * s).exp()
        })
        .sum();
    1.5 * PI * integral / (PI * r * r)
}
