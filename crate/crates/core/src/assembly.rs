//! Interior-penalty forms, Nitsche boundary terms and the bordered saddle system.
//!
//! Jumps and averages on an interior facet use the lower-id neighbour as the
//! plus side: `[[v]] = v+ - v-`, `{v} = (v+ + v-) / 2`, and the facet normal
//! points out of the plus side. Boundary terms are applied once per boundary
//! facet with the outward normal of the domain.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::Result;
use crate::fespace::{monomial_exponents, ElementBasis, Spaces};
use crate::geometry::{BoundingBox, Point, Vector};
use crate::mesh::{ActiveMesh, FacetKind};
use crate::quadrature::{FacetRule, QuadRule, QuadratureTable};
use crate::sparse::{BlockAccumulator, CsrMatrix};

pub const DEFAULT_SIGMA_CONST: f64 = 4.0;

/// Facet-wise penalty `sigma(F) = C p^2 / h_F`.
#[derive(Debug, Clone)]
pub struct PenaltyField {
    pub sigma_const: f64,
    pub values: Vec<f64>,
}

impl PenaltyField {
    /// `h_F` from element diameters: `min(h_K+, h_K-)` inside, `h_K` on the boundary.
    pub fn new(mesh: &ActiveMesh, degree: usize, sigma_const: f64) -> Self {
        let values = mesh
            .facets
            .iter()
            .map(|f| penalty_value(sigma_const, degree, f.h_f))
            .collect();
        Self {
            sigma_const,
            values,
        }
    }

    /// Like [`PenaltyField::new`], but every facet of a cut element also gets
    /// at least the penalty [`cut_facet_bound`] that provably controls the
    /// consistency terms on it. Facets between uncut elements are unchanged.
    pub fn shape_aware(
        mesh: &ActiveMesh,
        quad: &QuadratureTable,
        degree: usize,
        sigma_const: f64,
    ) -> Result<Self> {
        let mut field = Self::new(mesh, degree, sigma_const);
        for f in &mesh.facets {
            let sides = [Some(f.neighbors.0), f.neighbors.1];
            if sides.iter().flatten().any(|&k| mesh.elements[k].is_cut) {
                field.values[f.id] =
                    field.values[f.id].max(cut_facet_bound(mesh, quad, degree, f.id)?);
            }
        }
        Ok(field)
    }
}

/// `max ||q||^2_F / ||q||^2_K` over polynomials `q` of degree `degree`.
pub fn trace_inverse_constant(volume: &QuadRule, facet: &FacetRule, degree: usize) -> Option<f64> {
    let bbox = BoundingBox::from_points(&volume.points);
    let c = bbox.center();
    let hs = Vector::new(0.5 * bbox.width(), 0.5 * bbox.height()).map(|v| v.max(f64::MIN_POSITIVE));
    let exps = monomial_exponents(degree);
    let n = exps.len();
    let eval = |x: &Point| {
        DVector::from_iterator(
            n,
            exps.iter().map(|&(a, b)| {
                ((x.x - c.x) / hs.x).powi(a as i32) * ((x.y - c.y) / hs.y).powi(b as i32)
            }),
        )
    };
    let gram = |points: &[Point], weights: &[f64]| {
        let mut g = DMatrix::zeros(n, n);
        for (x, w) in points.iter().zip(weights) {
            let v = eval(x);
            g += &v * v.transpose() * *w;
        }
        g
    };
    let l = gram(&volume.points, &volume.weights).cholesky()?.l();
    let linv = l.try_inverse()?;
    let reduced = &linv * gram(&facet.points, &facet.weights) * linv.transpose();
    Some(
        SymmetricEigen::new((&reduced + reduced.transpose()) * 0.5)
            .eigenvalues
            .max(),
    )
}

/// Penalty on facet `F` that makes the velocity form coercive on its own.
///
/// With `C(K, F)` the trace inverse constant of gradients (degree `p - 1`)
/// and `N_K` the number of facets of `K`, Young's inequality gives
/// `a(v, v) >= sum_F (sigma_F - s_F) ||[[v]]||_F^2` for
/// `s_F = N_K C(K, F)` on boundary facets and
/// `s_F = (N_K+ C(K+, F) + N_K- C(K-, F)) / 4` on interior ones.
pub fn cut_facet_bound(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    degree: usize,
    facet: usize,
) -> Result<f64> {
    let f = &mesh.facets[facet];
    let rule = quad.facet_rule(facet)?;
    let side = |k: usize| -> Result<f64> {
        let e = &mesh.elements[k];
        let c = trace_inverse_constant(quad.volume_rule(k)?, rule, degree.saturating_sub(1))
            .unwrap_or(0.0);
        Ok(e.num_edges() as f64 * c)
    };
    Ok(match f.neighbors {
        (k, Some(l)) => 0.25 * (side(k)? + side(l)?),
        (k, None) => side(k)?,
    })
}

pub fn penalty_value(sigma_const: f64, degree: usize, h_f: f64) -> f64 {
    sigma_const * (degree * degree) as f64 / h_f
}

/// How the gradients inside the facet consistency terms are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    /// Element-wise L² projection of the gradient onto `P^p`.
    Projected,
    /// The broken gradient itself.
    Direct,
}

/// The assembled saddle-point problem
/// `[[A, B^T, 0], [B, 0, m], [0, m^T, 0]] (u, p, lambda) = (f, 0, 0)`.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    /// One velocity component block; `A` acts on both components identically.
    pub a_scalar: CsrMatrix,
    /// Pressure rows, velocity columns.
    pub b: CsrMatrix,
    /// Pressure basis integrals `int_K psi_i`.
    pub m: DVector<f64>,
    pub rhs_u: DVector<f64>,
    pub spaces_dofs: crate::fespace::DofMap,
}

impl SaddleSystem {
    pub fn n_u(&self) -> usize {
        self.spaces_dofs.n_u()
    }

    pub fn n_p(&self) -> usize {
        self.spaces_dofs.n_p()
    }

    pub fn size(&self) -> usize {
        self.spaces_dofs.total()
    }

    /// Velocity component `c` of a velocity vector in scalar-block numbering.
    pub fn gather_component(&self, u: &[f64], c: usize) -> Vec<f64> {
        let d = &self.spaces_dofs;
        let mut out = vec![0.0; d.num_elements * d.dv];
        for k in 0..d.num_elements {
            let src = d.velocity(k, c);
            out[k * d.dv..(k + 1) * d.dv].copy_from_slice(&u[src..src + d.dv]);
        }
        out
    }

    pub fn scatter_component(&self, comp: &[f64], c: usize, u: &mut [f64]) {
        let d = &self.spaces_dofs;
        for k in 0..d.num_elements {
            let dst = d.velocity(k, c);
            u[dst..dst + d.dv].copy_from_slice(&comp[k * d.dv..(k + 1) * d.dv]);
        }
    }

    /// `A u` for a full velocity vector.
    pub fn apply_a(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_u()];
        for c in 0..2 {
            let uc = self.gather_component(u, c);
            let yc = self.a_scalar.mul_vec(&uc);
            self.scatter_component(&yc, c, &mut out);
        }
        out
    }

    /// The full velocity block in global numbering.
    pub fn velocity_matrix(&self) -> CsrMatrix {
        let d = self.spaces_dofs;
        CsrMatrix::from_rows(d.n_u(), d.n_u(), |row, out| {
            let (k, c, i) = (row / (2 * d.dv), (row / d.dv) % 2, row % d.dv);
            for (col, v) in self.a_scalar.row(k * d.dv + i) {
                let (l, j) = (col / d.dv, col % d.dv);
                out.push((d.velocity(l, c) + j, v));
            }
        })
    }

    /// The complete bordered matrix in global numbering (symmetric).
    pub fn bordered_matrix(&self) -> CsrMatrix {
        let d = self.spaces_dofs;
        let a = self.velocity_matrix();
        let bt = self.b.transpose();
        let (n_u, n_p) = (d.n_u(), d.n_p());
        CsrMatrix::from_rows(d.total(), d.total(), |row, out| {
            if row < n_u {
                out.extend(a.row(row));
                out.extend(bt.row(row).map(|(j, v)| (n_u + j, v)));
            } else if row < n_u + n_p {
                let r = row - n_u;
                out.extend(self.b.row(r));
                out.push((d.multiplier(), self.m[r]));
            } else {
                out.extend(self.m.iter().enumerate().map(|(j, v)| (n_u + j, *v)));
            }
        })
    }

    /// Full right-hand side `(f, 0, 0)`.
    pub fn rhs(&self) -> Vec<f64> {
        let mut r = vec![0.0; self.size()];
        r[..self.n_u()].copy_from_slice(self.rhs_u.as_slice());
        r
    }

    /// Writes the bordered matrix and right-hand side as triplets.
    pub fn write_dump(&self, mut out: impl Write) -> Result<()> {
        self.bordered_matrix().write_triplets(&mut out)?;
        writeln!(out, "% rhs")?;
        for (i, v) in self.rhs().iter().enumerate() {
            writeln!(out, "{i} {v:.17e}")?;
        }
        Ok(())
    }
}

/// Values and gradients of one element basis at one point.
struct Trace {
    values: Vec<f64>,
    /// Gradients used in the consistency terms (projected or direct).
    flux: Vec<Vector>,
}

/// Coefficients of the L² projection of every basis gradient, per component.
struct GradientProjection {
    /// `coeffs[c][i * dim + j]` = coefficient of `phi_i` in the projection of `d_c phi_j`.
    coeffs: [Vec<f64>; 2],
}

impl GradientProjection {
    fn new(basis: &ElementBasis, rule: &crate::quadrature::QuadRule) -> Self {
        let dim = basis.dim;
        let mut coeffs = [vec![0.0; dim * dim], vec![0.0; dim * dim]];
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let (v, g) = basis.eval(*x);
            for (c, target) in coeffs.iter_mut().enumerate() {
                for i in 0..dim {
                    for j in 0..dim {
                        target[i * dim + j] += w * g[j][c] * v[i];
                    }
                }
            }
        }
        Self { coeffs }
    }
}

struct TraceEvaluator<'a> {
    spaces: &'a Spaces,
    projections: Option<Vec<GradientProjection>>,
}

impl<'a> TraceEvaluator<'a> {
    fn new(spaces: &'a Spaces, quad: &QuadratureTable, mode: GradientMode) -> Result<Self> {
        let projections = match mode {
            GradientMode::Direct => None,
            GradientMode::Projected => Some(
                spaces
                    .velocity
                    .iter()
                    .enumerate()
                    .map(|(k, b)| Ok(GradientProjection::new(b, quad.volume_rule(k)?)))
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        Ok(Self {
            spaces,
            projections,
        })
    }

    fn eval(&self, k: usize, x: Point) -> Trace {
        let basis = &self.spaces.velocity[k];
        let (v, g) = basis.eval(x);
        let values: Vec<f64> = v.iter().copied().collect();
        let flux = match &self.projections {
            None => g.clone(),
            Some(p) => {
                let dim = basis.dim;
                let pc = &p[k].coeffs;
                (0..dim)
                    .map(|j| {
                        let mut s = Vector::zeros();
                        for i in 0..dim {
                            s += Vector::new(pc[0][i * dim + j], pc[1][i * dim + j]) * values[i];
                        }
                        s
                    })
                    .collect()
            }
        };
        Trace { values, flux }
    }
}

/// Scalar velocity-component block of the interior-penalty form.
pub fn assemble_velocity_block(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    spaces: &Spaces,
    penalty: &PenaltyField,
    mode: GradientMode,
) -> Result<CsrMatrix> {
    assemble_velocity_form(mesh, quad, spaces, penalty, mode, 1.0)
}

/// Gram matrix of the velocity norm `||grad v||^2 + ||sigma^1/2 v||_Gamma^2 + sum_F ||sigma^1/2 [[v]]||_F^2`
/// (one component): the interior-penalty form without the consistency terms.
pub fn assemble_norm_block(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    spaces: &Spaces,
    penalty: &PenaltyField,
) -> Result<CsrMatrix> {
    assemble_velocity_form(mesh, quad, spaces, penalty, GradientMode::Direct, 0.0)
}

fn assemble_velocity_form(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    spaces: &Spaces,
    penalty: &PenaltyField,
    mode: GradientMode,
    consistency_weight: f64,
) -> Result<CsrMatrix> {
    let dv = spaces.dofs.dv;
    let mut acc = BlockAccumulator::new(mesh.element_couplings(), dv, dv);
    let traces = TraceEvaluator::new(spaces, quad, mode)?;
    let cw = consistency_weight;

    for (k, basis) in spaces.velocity.iter().enumerate() {
        let rule = quad.volume_rule(k)?;
        let block = acc.block_mut(k, k);
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let (_, g) = basis.eval(*x);
            for i in 0..dv {
                for j in i..dv {
                    block[i * dv + j] += w * g[i].dot(&g[j]);
                }
            }
        }
    }

    for facet in &mesh.facets {
        let rule = quad.facet_rule(facet.id)?;
        let sigma = penalty.values[facet.id];
        match facet.kind {
            FacetKind::Boundary => {
                let k = facet.neighbors.0;
                let block = acc.block_mut(k, k);
                for q in 0..rule.len() {
                    let (x, w, n) = (rule.points[q], rule.weights[q], rule.normals[q]);
                    let t = traces.eval(k, x);
                    for i in 0..dv {
                        for j in i..dv {
                            block[i * dv + j] += w
                                * (cw
                                    * (-t.values[i] * t.flux[j].dot(&n)
                                        - t.values[j] * t.flux[i].dot(&n))
                                    + sigma * t.values[i] * t.values[j]);
                        }
                    }
                }
            }
            FacetKind::Interior => {
                let (k0, k1) = (
                    facet.neighbors.0,
                    facet.neighbors.1.expect("interior facet"),
                );
                let n = facet.normal;
                for q in 0..rule.len() {
                    let (x, w) = (rule.points[q], rule.weights[q]);
                    let sides = [
                        (k0, 1.0, traces.eval(k0, x)),
                        (k1, -1.0, traces.eval(k1, x)),
                    ];
                    for (s, (ks, sign_s, ts)) in sides.iter().enumerate() {
                        for (t, (kt, sign_t, tt)) in sides.iter().enumerate() {
                            if *kt < *ks || (s == 1 && t == 0 && ks == kt) {
                                continue;
                            }
                            let same = ks == kt;
                            let block = acc.block_mut(*ks, *kt);
                            for i in 0..dv {
                                let j0 = if same { i } else { 0 };
                                for j in j0..dv {
                                    // row: test function i on side s, column: trial j on side t
                                    let consistency =
                                        -0.5 * tt.flux[j].dot(&n) * sign_s * ts.values[i]
                                            - 0.5 * ts.flux[i].dot(&n) * sign_t * tt.values[j];
                                    let jump =
                                        sigma * sign_s * sign_t * ts.values[i] * tt.values[j];
                                    block[i * dv + j] += w * (cw * consistency + jump);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    acc.mirror_upper();
    Ok(block_csr(&acc, mesh.num_elements(), dv, dv, |l, j| {
        l * dv + j
    }))
}

fn block_csr(
    acc: &BlockAccumulator,
    num_elements: usize,
    rows: usize,
    ncols: usize,
    col_of: impl Fn(usize, usize) -> usize,
) -> CsrMatrix {
    let cols = acc.block_cols;
    let total_cols = num_elements * ncols;
    CsrMatrix::from_rows(num_elements * rows, total_cols, |row, out| {
        let (k, i) = (row / rows, row % rows);
        for &l in acc.couplings(k) {
            let block = acc.block(k, l);
            for j in 0..cols {
                out.push((col_of(l, j), block[i * cols + j]));
            }
        }
    })
}

/// Pressure-velocity coupling `-int p div v + sum_F int [[v]].n {p} + int_Gamma (v.n) p`.
pub fn assemble_b(mesh: &ActiveMesh, quad: &QuadratureTable, spaces: &Spaces) -> Result<CsrMatrix> {
    let (dv, dp) = (spaces.dofs.dv, spaces.dofs.dp);
    let mut acc = BlockAccumulator::new(mesh.element_couplings(), dp, 2 * dv);

    for k in 0..mesh.num_elements() {
        let rule = quad.volume_rule(k)?;
        let block = acc.block_mut(k, k);
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let (_, g) = spaces.velocity[k].eval(*x);
            let psi = spaces.pressure[k].values(*x);
            for m in 0..dp {
                for c in 0..2 {
                    for i in 0..dv {
                        block[m * 2 * dv + c * dv + i] -= w * psi[m] * g[i][c];
                    }
                }
            }
        }
    }

    for facet in &mesh.facets {
        let rule = quad.facet_rule(facet.id)?;
        match facet.kind {
            FacetKind::Boundary => {
                let k = facet.neighbors.0;
                let block = acc.block_mut(k, k);
                for q in 0..rule.len() {
                    let (x, w, n) = (rule.points[q], rule.weights[q], rule.normals[q]);
                    let v = spaces.velocity[k].values(x);
                    let psi = spaces.pressure[k].values(x);
                    for m in 0..dp {
                        for c in 0..2 {
                            for i in 0..dv {
                                block[m * 2 * dv + c * dv + i] += w * psi[m] * v[i] * n[c];
                            }
                        }
                    }
                }
            }
            FacetKind::Interior => {
                let (k0, k1) = (
                    facet.neighbors.0,
                    facet.neighbors.1.expect("interior facet"),
                );
                let n = facet.normal;
                for q in 0..rule.len() {
                    let (x, w) = (rule.points[q], rule.weights[q]);
                    let v = [spaces.velocity[k0].values(x), spaces.velocity[k1].values(x)];
                    let psi = [spaces.pressure[k0].values(x), spaces.pressure[k1].values(x)];
                    let ks = [k0, k1];
                    for s in 0..2 {
                        for t in 0..2 {
                            let sign_t = if t == 0 { 1.0 } else { -1.0 };
                            let block = acc.block_mut(ks[s], ks[t]);
                            for m in 0..dp {
                                for c in 0..2 {
                                    for i in 0..dv {
                                        block[m * 2 * dv + c * dv + i] +=
                                            w * 0.5 * psi[s][m] * sign_t * v[t][i] * n[c];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let dofs = spaces.dofs;
    Ok(block_csr_b(
        &acc,
        mesh.num_elements(),
        dp,
        dofs.n_u(),
        |l, j| 2 * l * dv + j,
    ))
}

fn block_csr_b(
    acc: &BlockAccumulator,
    num_elements: usize,
    rows: usize,
    ncols: usize,
    col_of: impl Fn(usize, usize) -> usize,
) -> CsrMatrix {
    let cols = acc.block_cols;
    CsrMatrix::from_rows(num_elements * rows, ncols, |row, out| {
        let (k, i) = (row / rows, row % rows);
        for &l in acc.couplings(k) {
            let block = acc.block(k, l);
            for j in 0..cols {
                out.push((col_of(l, j), block[i * cols + j]));
            }
        }
    })
}

/// The integrated-by-parts form `int v.grad p - sum_F int {v}.n [[p]]`.
pub fn assemble_b_by_parts(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    spaces: &Spaces,
) -> Result<CsrMatrix> {
    let (dv, dp) = (spaces.dofs.dv, spaces.dofs.dp);
    let mut acc = BlockAccumulator::new(mesh.element_couplings(), dp, 2 * dv);
    for k in 0..mesh.num_elements() {
        let rule = quad.volume_rule(k)?;
        let block = acc.block_mut(k, k);
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let v = spaces.velocity[k].values(*x);
            let (_, gpsi) = spaces.pressure[k].eval(*x);
            for m in 0..dp {
                for c in 0..2 {
                    for i in 0..dv {
                        block[m * 2 * dv + c * dv + i] += w * v[i] * gpsi[m][c];
                    }
                }
            }
        }
    }
    for facet in mesh.interior_facets() {
        let rule = quad.facet_rule(facet.id)?;
        let (k0, k1) = (
            facet.neighbors.0,
            facet.neighbors.1.expect("interior facet"),
        );
        let n = facet.normal;
        for q in 0..rule.len() {
            let (x, w) = (rule.points[q], rule.weights[q]);
            let v = [spaces.velocity[k0].values(x), spaces.velocity[k1].values(x)];
            let psi = [spaces.pressure[k0].values(x), spaces.pressure[k1].values(x)];
            let ks = [k0, k1];
            for s in 0..2 {
                let sign_s = if s == 0 { 1.0 } else { -1.0 };
                for t in 0..2 {
                    let block = acc.block_mut(ks[s], ks[t]);
                    for m in 0..dp {
                        for c in 0..2 {
                            for i in 0..dv {
                                block[m * 2 * dv + c * dv + i] -=
                                    w * 0.5 * v[t][i] * n[c] * sign_s * psi[s][m];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(block_csr_b(
        &acc,
        mesh.num_elements(),
        dp,
        spaces.dofs.n_u(),
        |l, j| 2 * l * dv + j,
    ))
}

/// Load vector `int f . v` over all velocity basis functions.
pub fn assemble_rhs(
    quad: &QuadratureTable,
    spaces: &Spaces,
    f: impl Fn(Point) -> Vector,
) -> Result<DVector<f64>> {
    let d = spaces.dofs;
    let mut rhs = DVector::zeros(d.n_u());
    for (k, basis) in spaces.velocity.iter().enumerate() {
        let rule = quad.volume_rule(k)?;
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let v = basis.values(*x);
            let fx = f(*x);
            for c in 0..2 {
                let off = d.velocity(k, c);
                for i in 0..d.dv {
                    rhs[off + i] += w * fx[c] * v[i];
                }
            }
        }
    }
    Ok(rhs)
}

/// Integrals of the pressure basis functions (the mean-constraint vector).
pub fn pressure_means(quad: &QuadratureTable, spaces: &Spaces) -> Result<DVector<f64>> {
    let d = spaces.dofs;
    let mut m = DVector::zeros(d.n_p());
    for (k, basis) in spaces.pressure.iter().enumerate() {
        let rule = quad.volume_rule(k)?;
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let psi = basis.values(*x);
            for i in 0..d.dp {
                m[k * d.dp + i] += w * psi[i];
            }
        }
    }
    Ok(m)
}

pub fn assemble_system(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    spaces: &Spaces,
    penalty: &PenaltyField,
    f: impl Fn(Point) -> Vector,
) -> Result<SaddleSystem> {
    Ok(SaddleSystem {
        a_scalar: assemble_velocity_block(mesh, quad, spaces, penalty, GradientMode::Projected)?,
        b: assemble_b(mesh, quad, spaces)?,
        m: pressure_means(quad, spaces)?,
        rhs_u: assemble_rhs(quad, spaces, f)?,
        spaces_dofs: spaces.dofs,
    })
}
