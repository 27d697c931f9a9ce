//! Discontinuous polynomial spaces built directly on physical elements.
//!
//! Each element carries an orthonormal basis of `P^p(K)`, obtained by
//! Gram–Schmidt on monomials scaled to the element bounding box. Velocity
//! uses degree `p` for both components, pressure degree `p - 1`.

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Error, Result};
use crate::geometry::{Point, Vector};
use crate::mesh::{ActiveMesh, PolytopicElement};
use crate::quadrature::{QuadRule, QuadratureTable};

/// Relative pivot size below which a basis is rejected as singular.
pub const PIVOT_FLOOR: f64 = 1e-13;

/// Dimension of `P^p` in two variables.
pub fn dim_for_degree(p: usize) -> usize {
    (p + 1) * (p + 2) / 2
}

/// Exponents `(a, b)` of `x^a y^b` in graded lexicographic order.
pub fn monomial_exponents(p: usize) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(dim_for_degree(p));
    for d in 0..=p as u32 {
        for a in (0..=d).rev() {
            out.push((a, d - a));
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct ElementBasis {
    pub element: usize,
    pub degree: usize,
    pub dim: usize,
    pub center: Point,
    /// Half-widths of the element bounding box.
    pub scale: Vector,
    /// Row `i` holds the monomial coefficients of basis function `i` (lower triangular).
    pub coeffs: DMatrix<f64>,
    exponents: Vec<(u32, u32)>,
}

impl ElementBasis {
    fn monomials(&self, x: Point, values: &mut [f64], grads: &mut [Vector]) {
        let xi = (x.x - self.center.x) / self.scale.x;
        let eta = (x.y - self.center.y) / self.scale.y;
        let p = self.degree;
        let mut px = [1.0; 12];
        let mut py = [1.0; 12];
        for k in 1..=p {
            px[k] = px[k - 1] * xi;
            py[k] = py[k - 1] * eta;
        }
        for (j, &(a, b)) in self.exponents.iter().enumerate() {
            let (a, b) = (a as usize, b as usize);
            values[j] = px[a] * py[b];
            let dx = if a > 0 {
                a as f64 * px[a - 1] * py[b] / self.scale.x
            } else {
                0.0
            };
            let dy = if b > 0 {
                b as f64 * px[a] * py[b - 1] / self.scale.y
            } else {
                0.0
            };
            grads[j] = Vector::new(dx, dy);
        }
    }

    /// Values and gradients of all basis functions at `x`, written into the buffers.
    pub fn eval_into(&self, x: Point, values: &mut [f64], grads: &mut [Vector]) {
        let mut mv = [0.0; 66];
        let mut mg = [Vector::zeros(); 66];
        self.monomials(x, &mut mv[..self.dim], &mut mg[..self.dim]);
        for i in 0..self.dim {
            let (mut v, mut g) = (0.0, Vector::zeros());
            for j in 0..=i {
                let c = self.coeffs[(i, j)];
                v += c * mv[j];
                g += mg[j] * c;
            }
            values[i] = v;
            grads[i] = g;
        }
    }

    pub fn eval(&self, x: Point) -> (DVector<f64>, Vec<Vector>) {
        let mut values = DVector::zeros(self.dim);
        let mut grads = vec![Vector::zeros(); self.dim];
        self.eval_into(x, values.as_mut_slice(), &mut grads);
        (values, grads)
    }

    pub fn values(&self, x: Point) -> DVector<f64> {
        self.eval(x).0
    }

    /// Value of the polynomial with local coefficients `c`.
    pub fn combine(&self, c: &[f64], x: Point) -> (f64, Vector) {
        let (v, g) = self.eval(x);
        let value = v.iter().zip(c).map(|(a, b)| a * b).sum();
        let grad = g
            .iter()
            .zip(c)
            .fold(Vector::zeros(), |acc, (g, b)| acc + g * *b);
        (value, grad)
    }

    /// The basis of the leading `P^q` subspace (same functions, truncated).
    pub fn truncated(&self, q: usize) -> ElementBasis {
        let dim = dim_for_degree(q);
        ElementBasis {
            element: self.element,
            degree: q,
            dim,
            center: self.center,
            scale: self.scale,
            coeffs: self.coeffs.view((0, 0), (dim, dim)).into_owned(),
            exponents: self.exponents[..dim].to_vec(),
        }
    }
}

/// Orthonormal basis of `P^degree(K)` under the discrete inner product of `rule`.
///
/// Modified Gram–Schmidt with one reorthogonalization pass runs on the
/// weighted sample vectors of the scaled monomials.
pub fn build_basis(
    element: &PolytopicElement,
    rule: &QuadRule,
    degree: usize,
) -> Result<ElementBasis> {
    if degree > 10 {
        return Err(Error::UnsupportedDegree { degree, max: 10 });
    }
    let dim = dim_for_degree(degree);
    let center = element.bbox.center();
    let scale = Vector::new(0.5 * element.bbox.width(), 0.5 * element.bbox.height());
    let mut basis = ElementBasis {
        element: element.id,
        degree,
        dim,
        center,
        scale,
        coeffs: DMatrix::identity(dim, dim),
        exponents: monomial_exponents(degree),
    };

    let nq = rule.len();
    let mut samples = DMatrix::zeros(nq, dim);
    let mut mv = vec![0.0; dim];
    let mut mg = vec![Vector::zeros(); dim];
    for (q, (x, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
        basis.monomials(*x, &mut mv, &mut mg);
        let sw = w.sqrt();
        for j in 0..dim {
            samples[(q, j)] = sw * mv[j];
        }
    }

    let mut coeffs = DMatrix::zeros(dim, dim);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut v = samples.column(i).into_owned();
        let original = v.norm();
        let mut c = DVector::zeros(dim);
        c[i] = 1.0;
        for _pass in 0..2 {
            for j in 0..i {
                let r = ortho[j].dot(&v);
                v.axpy(-r, &ortho[j], 1.0);
                c -= coeffs.row(j).transpose() * r;
            }
        }
        let norm = v.norm();
        if !(norm >= PIVOT_FLOOR * original) || original == 0.0 {
            return Err(Error::NumericallySingular {
                element: element.id,
                pivot: norm / original,
            });
        }
        v /= norm;
        coeffs.set_row(i, &(c / norm).transpose());
        ortho.push(v);
    }
    basis.coeffs = coeffs;
    Ok(basis)
}

/// Coefficients of the element-wise L² projection of `f` onto the basis.
pub fn l2_project(f: impl Fn(Point) -> f64, rule: &QuadRule, basis: &ElementBasis) -> DVector<f64> {
    let mut out = DVector::zeros(basis.dim);
    let mut v = vec![0.0; basis.dim];
    let mut g = vec![Vector::zeros(); basis.dim];
    for (x, w) in rule.points.iter().zip(&rule.weights) {
        basis.eval_into(*x, &mut v, &mut g);
        let fx = w * f(*x);
        for i in 0..basis.dim {
            out[i] += fx * v[i];
        }
    }
    out
}

/// Global numbering: all velocity dofs, then pressure, then the mean multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    pub num_elements: usize,
    /// Scalar velocity dofs per element.
    pub dv: usize,
    /// Pressure dofs per element.
    pub dp: usize,
}

impl DofMap {
    pub fn new(num_elements: usize, degree: usize) -> Self {
        Self {
            num_elements,
            dv: dim_for_degree(degree),
            dp: dim_for_degree(degree - 1),
        }
    }

    pub fn n_u(&self) -> usize {
        2 * self.num_elements * self.dv
    }

    pub fn n_p(&self) -> usize {
        self.num_elements * self.dp
    }

    pub fn total(&self) -> usize {
        self.n_u() + self.n_p() + 1
    }

    /// First dof of velocity component `c` on element `k`.
    pub fn velocity(&self, k: usize, c: usize) -> usize {
        2 * k * self.dv + c * self.dv
    }

    pub fn pressure(&self, k: usize) -> usize {
        self.n_u() + k * self.dp
    }

    pub fn multiplier(&self) -> usize {
        self.n_u() + self.n_p()
    }
}

/// Velocity and pressure bases on every active element.
#[derive(Debug, Clone)]
pub struct Spaces {
    pub degree: usize,
    pub velocity: Vec<ElementBasis>,
    pub pressure: Vec<ElementBasis>,
    pub dofs: DofMap,
}

impl Spaces {
    pub fn build(mesh: &ActiveMesh, quad: &QuadratureTable, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidConfig(
                "velocity degree must be at least 1".into(),
            ));
        }
        let velocity = mesh
            .elements
            .iter()
            .map(|e| build_basis(e, quad.volume_rule(e.id)?, degree))
            .collect::<Result<Vec<_>>>()?;
        let pressure = velocity.iter().map(|b| b.truncated(degree - 1)).collect();
        Ok(Self {
            degree,
            velocity,
            pressure,
            dofs: DofMap::new(mesh.num_elements(), degree),
        })
    }

    /// Element-wise L² projection of a vector field, laid out as velocity dofs.
    pub fn interpolate_velocity(
        &self,
        quad: &QuadratureTable,
        f: impl Fn(Point) -> Vector,
    ) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dofs.n_u());
        for (k, basis) in self.velocity.iter().enumerate() {
            let rule = quad.volume_rule(k)?;
            for c in 0..2 {
                let coeffs = l2_project(|x| f(x)[c], rule, basis);
                out.rows_mut(self.dofs.velocity(k, c), self.dofs.dv)
                    .copy_from(&coeffs);
            }
        }
        Ok(out)
    }

    /// Element-wise L² projection of a scalar field, laid out as pressure dofs (from 0).
    pub fn interpolate_pressure(
        &self,
        quad: &QuadratureTable,
        f: impl Fn(Point) -> f64,
    ) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.dofs.n_p());
        for (k, basis) in self.pressure.iter().enumerate() {
            let coeffs = l2_project(&f, quad.volume_rule(k)?, basis);
            out.rows_mut(k * self.dofs.dp, self.dofs.dp)
                .copy_from(&coeffs);
        }
        Ok(out)
    }

    /// Velocity value and gradient (`grad[(c, d)] = d u_c / d x_d`) of a velocity vector.
    pub fn eval_velocity(&self, u: &[f64], k: usize, x: Point) -> (Vector, Matrix2<f64>) {
        let (v, g) = self.velocity[k].eval(x);
        let mut value = Vector::zeros();
        let mut grad = Matrix2::zeros();
        for c in 0..2 {
            let off = self.dofs.velocity(k, c);
            for i in 0..self.dofs.dv {
                value[c] += u[off + i] * v[i];
                grad[(c, 0)] += u[off + i] * g[i].x;
                grad[(c, 1)] += u[off + i] * g[i].y;
            }
        }
        (value, grad)
    }

    /// Pressure value of a pressure vector (indexed from 0) on element `k`.
    pub fn eval_pressure(&self, p: &[f64], k: usize, x: Point) -> f64 {
        let v = self.pressure[k].values(x);
        let off = k * self.dofs.dp;
        (0..self.dofs.dp).map(|i| p[off + i] * v[i]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{LevelSetDomain, BOUNDARY_TOL};
    use crate::mesh::{build_active_mesh, build_background};
    use crate::quadrature::polytope_rule;

    fn disc_mesh(h: f64) -> (ActiveMesh, QuadratureTable) {
        let d = LevelSetDomain::disc(1.0);
        let bg = build_background(d.covering_box(), h).unwrap();
        let mesh = build_active_mesh(&bg, &d, BOUNDARY_TOL).unwrap();
        let quad = QuadratureTable::build(&mesh, 8, 8, 8).unwrap();
        (mesh, quad)
    }

    #[test]
    fn exponents_are_graded_lexicographic() {
        assert_eq!(
            monomial_exponents(2),
            vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        );
        assert_eq!(dim_for_degree(2), 6);
        assert_eq!(dim_for_degree(3), 10);
    }

    #[test]
    fn degree_zero_basis_is_normalized_constant() {
        let (mesh, quad) = disc_mesh(0.25);
        let e = &mesh.elements[0];
        let b = build_basis(e, &quad.volume[0], 0).unwrap();
        let (v, g) = b.eval(e.centroid());
        let area = quad.volume[0].measure();
        assert!((v[0] - area.powf(-0.5)).abs() < 1e-12 * v[0]);
        assert_eq!(g[0], Vector::zeros());
    }

    #[test]
    fn gram_matrix_is_identity_on_cut_elements() {
        let (mesh, quad) = disc_mesh(0.125);
        for e in mesh.elements.iter().filter(|e| e.is_cut) {
            let b = build_basis(e, &quad.volume[e.id], 3).unwrap();
            let oracle = polytope_rule(e, &mesh.domain, 10, 16).unwrap();
            let mut gram = DMatrix::<f64>::zeros(b.dim, b.dim);
            for (x, w) in oracle.points.iter().zip(&oracle.weights) {
                let v = b.values(*x);
                gram += v.clone() * v.transpose() * *w;
            }
            let err = (gram - DMatrix::identity(b.dim, b.dim)).abs().max();
            assert!(err < 1e-10, "element {} err {err:e}", e.id);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (mesh, quad) = disc_mesh(0.25);
        let e = mesh.elements.iter().find(|e| e.is_cut).unwrap();
        let b = build_basis(e, &quad.volume[e.id], 3).unwrap();
        // step relative to the element size keeps truncation error small
        let h = 1e-6 * e.h_k;
        for k in 0..20 {
            let t = k as f64 / 20.0;
            let x = e.centroid() + Vector::new(0.3 * t - 0.1, 0.2 * (1.0 - t) - 0.05) * e.h_k;
            let (_, g) = b.eval(x);
            let fx =
                (b.values(x + Vector::new(h, 0.0)) - b.values(x - Vector::new(h, 0.0))) / (2.0 * h);
            let fy =
                (b.values(x + Vector::new(0.0, h)) - b.values(x - Vector::new(0.0, h))) / (2.0 * h);
            for i in 0..b.dim {
                let scale = 1.0 + g[i].norm();
                assert!(
                    (fx[i] - g[i].x).abs() < 1e-7 * scale,
                    "{} vs {}",
                    fx[i],
                    g[i].x
                );
                assert!((fy[i] - g[i].y).abs() < 1e-7 * scale);
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_reproduces_means() {
        let (mesh, quad) = disc_mesh(0.25);
        let e = mesh.elements.iter().find(|e| e.is_cut).unwrap();
        let rule = &quad.volume[e.id];
        let b = build_basis(e, rule, 2).unwrap();
        let c = DVector::from_fn(b.dim, |i, _| (i as f64 + 1.0).sin());
        let f = |x: Point| b.combine(c.as_slice(), x).0;
        let proj = l2_project(f, rule, &b);
        assert!((proj - &c).amax() < 1e-11);

        let b0 = b.truncated(0);
        let mean_x = rule.integrate(|x| x.x) / rule.measure();
        let proj = l2_project(|x| x.x, rule, &b0);
        assert!((b0.combine(proj.as_slice(), e.centroid()).0 - mean_x).abs() < 1e-12);
    }

    #[test]
    fn truncation_matches_a_direct_lower_degree_basis() {
        let (mesh, quad) = disc_mesh(0.25);
        let e = mesh.elements.iter().find(|e| e.is_cut).unwrap();
        let rule = &quad.volume[e.id];
        let high = build_basis(e, rule, 3).unwrap().truncated(2);
        let low = build_basis(e, rule, 2).unwrap();
        assert!((high.coeffs - low.coeffs).amax() < 1e-8);
    }

    #[test]
    fn dof_layout() {
        let d = DofMap::new(5, 2);
        assert_eq!(
            (d.dv, d.dp, d.n_u(), d.n_p(), d.total()),
            (6, 3, 60, 15, 76)
        );
        assert_eq!(d.velocity(1, 1), 18);
        assert_eq!(d.pressure(2), 66);
        assert_eq!(d.multiplier(), 75);
    }
}
