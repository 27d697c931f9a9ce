//! Error norms, mesh-dependent energy norms, convergence rates and the
//! stability estimators (discrete coercivity and inf-sup constants).

use faer::linalg::solvers::Solve;
use faer::Col;
use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{PenaltyField, SaddleSystem};
use crate::error::{Error, Result};
use crate::fespace::{monomial_exponents, Spaces};
use crate::geometry::{polygon_area, signed_area, Point, Vector};
use crate::mesh::{ActiveMesh, EdgeKind, FacetKind};
use crate::quadrature::{fan_rules, polytope_rule, triangle_rule, QuadRule, QuadratureTable};
use crate::sparse::{dot, CsrMatrix};

/// Relative tolerance of the coercivity estimator.
pub const COERCIVITY_TOL: f64 = 1e-6;
/// `lambda_min(A)` below this multiple of `max |A|` is round-off, not coercivity.
pub const COERCIVITY_FLOOR: f64 = 1e-12;
/// Relative tolerance of the inf-sup estimator.
pub const INFSUP_TOL: f64 = 1e-5;
pub const EIGEN_MAX_ITERATIONS: usize = 500;
/// Allowed deviation of a mesh-size ratio from 2.
pub const HALVING_TOL: f64 = 1e-12;

/// Errors of one refinement level.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// Covering-mesh size `h`; rates are computed in this quantity.
    pub h_max: f64,
    /// Largest active-element diameter.
    pub max_diameter: f64,
    /// `||u - u_h||_1` with broken gradients.
    pub vel_h1: f64,
    /// `||p - p_h||` after mean normalization of both.
    pub pres_l2: f64,
    pub energy_u: Option<f64>,
    pub energy_p: Option<f64>,
    pub dofs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ErrorReport>,
    /// `vel_rates[i]` is the rate between rows `i - 1` and `i` (`None` for the first row).
    pub vel_rates: Vec<Option<f64>>,
    pub pres_rates: Vec<Option<f64>>,
    pub vel_mean: Option<f64>,
    pub pres_mean: Option<f64>,
}

/// `log2(e0 / e1)`.
pub fn rate(e0: f64, e1: f64) -> f64 {
    (e0 / e1).log2()
}

fn mean(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Rates between consecutive rows and their arithmetic means.
pub fn convergence_rates(rows: Vec<ErrorReport>) -> Result<ConvergenceTable> {
    let mut vel_rates = vec![None];
    let mut pres_rates = vec![None];
    for (i, w) in rows.windows(2).enumerate() {
        if ((w[0].h_max / w[1].h_max) - 2.0).abs() > HALVING_TOL {
            return Err(Error::NonHalvingSequence {
                index: i,
                h0: w[0].h_max,
                h1: w[1].h_max,
            });
        }
        vel_rates.push(Some(rate(w[0].vel_h1, w[1].vel_h1)));
        pres_rates.push(Some(rate(w[0].pres_l2, w[1].pres_l2)));
    }
    vel_rates.truncate(rows.len());
    pres_rates.truncate(rows.len());
    let (vel_mean, pres_mean) = (mean(&vel_rates), mean(&pres_rates));
    Ok(ConvergenceTable {
        rows,
        vel_rates,
        pres_rates,
        vel_mean,
        pres_mean,
    })
}

/// `(sum_K int_K |u - u_h|^2 + |grad u - grad u_h|^2)^{1/2}` on the rules of `quad`.
pub fn h1_error(
    quad: &QuadratureTable,
    spaces: &Spaces,
    u_h: &[f64],
    u: impl Fn(Point) -> Vector,
    grad_u: impl Fn(Point) -> Matrix2<f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..spaces.velocity.len() {
        let rule = quad.volume_rule(k)?;
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let (v, g) = spaces.eval_velocity(u_h, k, *x);
            total += w * ((u(*x) - v).norm_squared() + (grad_u(*x) - g).norm_squared());
        }
    }
    Ok(total.max(0.0).sqrt())
}

/// Mean of a discrete pressure over the active mesh.
pub fn discrete_pressure_mean(quad: &QuadratureTable, spaces: &Spaces, p_h: &[f64]) -> Result<f64> {
    let (mut integral, mut area) = (0.0, 0.0);
    for k in 0..spaces.pressure.len() {
        let rule = quad.volume_rule(k)?;
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            integral += w * spaces.eval_pressure(p_h, k, *x);
            area += w;
        }
    }
    Ok(if area > 0.0 { integral / area } else { 0.0 })
}

/// Mean of a scalar field over the active mesh.
pub fn field_mean(quad: &QuadratureTable, f: impl Fn(Point) -> f64) -> f64 {
    let area: f64 = quad.volume.iter().map(QuadRule::measure).sum();
    let integral: f64 = quad.volume.iter().map(|r| r.integrate(&f)).sum();
    if area > 0.0 {
        integral / area
    } else {
        0.0
    }
}

/// `||(p - mean p) - (p_h - mean p_h)||`.
pub fn l2_pressure_error(
    quad: &QuadratureTable,
    spaces: &Spaces,
    p_h: &[f64],
    p: impl Fn(Point) -> f64,
) -> Result<f64> {
    let pm = field_mean(quad, &p);
    let phm = discrete_pressure_mean(quad, spaces, p_h)?;
    let mut total = 0.0;
    for k in 0..spaces.pressure.len() {
        let rule = quad.volume_rule(k)?;
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let e = (p(*x) - pm) - (spaces.eval_pressure(p_h, k, *x) - phm);
            total += w * e * e;
        }
    }
    Ok(total.sqrt())
}

/// The mesh-dependent norms `|||v|||` and `|||q|||` of broken fields.
///
/// `vel(k, x)` returns the value and gradient of `v` restricted to element `k`,
/// `pres(k, x)` the value of `q` on element `k`. The elemental boundary terms
/// carry the factor ½ and are summed over active (clipped) elements.
pub fn energy_norms(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    degree: usize,
    penalty: &PenaltyField,
    vel: impl Fn(usize, Point) -> (Vector, Matrix2<f64>),
    pres: impl Fn(usize, Point) -> f64,
) -> Result<(f64, f64)> {
    let inv_p2 = 1.0 / (degree * degree) as f64;
    let (mut eu, mut ep) = (0.0, 0.0);
    for k in 0..mesh.num_elements() {
        let rule = quad.volume_rule(k)?;
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            eu += w * vel(k, *x).1.norm_squared();
            let q = pres(k, *x);
            ep += w * q * q;
        }
    }
    for f in &mesh.facets {
        let rule = quad.facet_rule(f.id)?;
        let sigma = penalty.values[f.id];
        let plus = f.neighbors.0;
        for ((x, w), n) in rule.points.iter().zip(&rule.weights).zip(&rule.normals) {
            let (v, g) = vel(plus, *x);
            let q = pres(plus, *x);
            match (f.kind, f.neighbors.1) {
                (FacetKind::Boundary, _) | (_, None) => {
                    eu += w * (sigma * v.norm_squared() + inv_p2 * f.h_f * (g * n).norm_squared());
                    ep += w * inv_p2 * f.h_f * q * q;
                }
                (FacetKind::Interior, Some(minus)) => {
                    let (vm, _) = vel(minus, *x);
                    let qm = pres(minus, *x);
                    eu += w * sigma * (v - vm).norm_squared();
                    ep += w * inv_p2 * f.h_f * (q - qm) * (q - qm);
                }
            }
        }
    }
    // ½ sum_K ||p^-1 h_K^1/2 (grad v . n, q)||^2 over the element boundary
    for e in &mesh.elements {
        for &fid in &e.facets {
            let rule = quad.facet_rule(fid)?;
            for ((x, w), n) in rule.points.iter().zip(&rule.weights).zip(&rule.normals) {
                let (_, g) = vel(e.id, *x);
                let q = pres(e.id, *x);
                eu += 0.5 * w * inv_p2 * e.h_k * (g * n).norm_squared();
                ep += 0.5 * w * inv_p2 * e.h_k * q * q;
            }
        }
    }
    Ok((eu.sqrt(), ep.sqrt()))
}

/// Energy norms of the discrete error `(u - u_h, p - p_h)`, pressures mean-normalized.
#[allow(clippy::too_many_arguments)]
pub fn energy_error(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    spaces: &Spaces,
    penalty: &PenaltyField,
    u_h: &[f64],
    p_h: &[f64],
    u: impl Fn(Point) -> Vector,
    grad_u: impl Fn(Point) -> Matrix2<f64>,
    p: impl Fn(Point) -> f64,
) -> Result<(f64, f64)> {
    let pm = field_mean(quad, &p);
    let phm = discrete_pressure_mean(quad, spaces, p_h)?;
    energy_norms(
        mesh,
        quad,
        spaces.degree,
        penalty,
        |k, x| {
            let (v, g) = spaces.eval_velocity(u_h, k, x);
            (u(x) - v, grad_u(x) - g)
        },
        |k, x| (p(x) - pm) - (spaces.eval_pressure(p_h, k, x) - phm),
    )
}

/// Largest ratio `|||v||| / |||v|||_{V^c}` over `samples` random discrete velocities.
pub fn norm_equivalence_ratio(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    spaces: &Spaces,
    penalty: &PenaltyField,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let u: Vec<f64> = (0..spaces.dofs.n_u())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let full = energy_norms(
            mesh,
            quad,
            spaces.degree,
            penalty,
            |k, x| spaces.eval_velocity(&u, k, x),
            |_, _| 0.0,
        )?
        .0;
        let vc = energy_norms_vc(mesh, quad, spaces, penalty, &u)?.max(f64::MIN_POSITIVE);
        worst = worst.max(full / vc);
    }
    Ok(worst)
}

/// `|||v|||_{V^c}` of a discrete velocity, evaluated on the rules of `quad`.
fn energy_norms_vc(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    spaces: &Spaces,
    penalty: &PenaltyField,
    u: &[f64],
) -> Result<f64> {
    let mut total = 0.0;
    for k in 0..mesh.num_elements() {
        let rule = quad.volume_rule(k)?;
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            total += w * spaces.eval_velocity(u, k, *x).1.norm_squared();
        }
    }
    for f in &mesh.facets {
        let rule = quad.facet_rule(f.id)?;
        let sigma = penalty.values[f.id];
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let v = spaces.eval_velocity(u, f.neighbors.0, *x).0;
            let jump = match f.neighbors.1 {
                Some(m) => v - spaces.eval_velocity(u, m, *x).0,
                None => v,
            };
            total += w * sigma * jump.norm_squared();
        }
    }
    Ok(total.sqrt())
}

fn random_unit(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let nx = dot(&x, &x).sqrt();
    x.iter_mut().for_each(|v| *v /= nx);
    x
}

fn try_cholesky(
    a: &CsrMatrix,
    shift: f64,
) -> Option<faer::sparse::linalg::solvers::Llt<usize, f64>> {
    let shifted = a.shifted(shift).ok()?.to_faer().ok()?;
    shifted.sp_cholesky(faer::Side::Lower).ok()
}

/// Smallest eigenvalue of the symmetric velocity block.
///
/// The shift is bracketed by Cholesky success between a Gershgorin lower
/// bound and the smallest diagonal entry, then refined by shifted inverse
/// iteration with Rayleigh quotients.
pub fn coercivity_estimate(system: &SaddleSystem) -> Result<f64> {
    smallest_eigenvalue(&system.a_scalar)
}

pub fn smallest_eigenvalue(a: &CsrMatrix) -> Result<f64> {
    let n = a.nrows;
    if n == 0 {
        return Ok(0.0);
    }
    let diag = a.diagonal();
    let scale = diag
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
        .max(a.max_abs());
    let gershgorin = (0..n)
        .map(|i| {
            let off: f64 = a
                .row(i)
                .filter(|(j, _)| *j != i)
                .map(|(_, v)| v.abs())
                .sum();
            diag[i] - off
        })
        .fold(f64::INFINITY, f64::min);
    let mut lo = gershgorin - 1e-6 * scale;
    let mut hi = diag.iter().copied().fold(f64::INFINITY, f64::min);
    let mut factor = try_cholesky(a, lo).ok_or(Error::NonConvergence {
        what: "coercivity shift bracket",
        iterations: 0,
    })?;
    for _ in 0..60 {
        if hi - lo <= 1e-3 * (hi.abs() + 1e-10 * scale) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        match try_cholesky(a, mid) {
            Some(f) => {
                lo = mid;
                factor = f;
            }
            None => hi = mid,
        }
    }

    let mut x = random_unit(n, 0x5eed);
    let mut lambda = f64::NAN;
    for _ in 0..EIGEN_MAX_ITERATIONS {
        let y = factor.solve(Col::from_fn(n, |i| x[i]));
        let ny = (0..n).map(|i| y[i] * y[i]).sum::<f64>().sqrt();
        x = (0..n).map(|i| y[i] / ny).collect();
        let next = dot(&x, &a.mul_vec(&x));
        if (next - lambda).abs() <= COERCIVITY_TOL * next.abs().max(1e-12 * scale) {
            return Ok(next);
        }
        lambda = next;
    }
    Err(Error::NonConvergence {
        what: "coercivity estimate",
        iterations: EIGEN_MAX_ITERATIONS,
    })
}

/// Discrete inf-sup constant of `b` with respect to the velocity Gram `norm_u`
/// (one component) and the pressure Gram `norm_p` (identity when `None`).
///
/// Computes the smallest eigenvalue of `B N_u^{-1} B^T q = beta^2 N_p q` on
/// mean-free pressures by inverse iteration on the deflated dense Schur
/// complement and returns `beta`.
pub fn infsup_estimate(
    system: &SaddleSystem,
    norm_u: &CsrMatrix,
    norm_p: Option<&DMatrix<f64>>,
) -> Result<f64> {
    let n_p = system.n_p();
    let n_s = norm_u.nrows;
    if n_p == 0 {
        return Ok(0.0);
    }
    if system.b.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let llt = norm_u
        .to_faer()?
        .sp_cholesky(faer::Side::Lower)
        .map_err(|_| Error::SingularSystem {
            reason: "velocity norm matrix is not positive definite".into(),
        })?;
    let bt = system.b.transpose();
    let mut s = DMatrix::zeros(n_p, n_p);
    let mut col = vec![0.0; n_p];
    for j in 0..n_p {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = 1.0;
        let bj = bt.mul_vec(&col);
        let mut w = vec![0.0; system.n_u()];
        for c in 0..2 {
            let comp = system.gather_component(&bj, c);
            let sol = llt.solve(Col::from_fn(n_s, |i| comp[i]));
            let sol: Vec<f64> = (0..n_s).map(|i| sol[i]).collect();
            system.scatter_component(&sol, c, &mut w);
        }
        let sj = system.b.mul_vec(&w);
        for i in 0..n_p {
            s[(i, j)] = sj[i];
        }
    }
    let s = (&s + s.transpose()) * 0.5;

    // reduce to the standard problem L^-1 S L^-T with N_p = L L^T
    let (s, l) = match norm_p {
        None => (s, None),
        Some(np) => {
            let l = np.clone().cholesky().ok_or(Error::SingularSystem {
                reason: "pressure norm matrix".into(),
            })?;
            let lm = l.l();
            let linv = lm.clone().try_inverse().ok_or(Error::SingularSystem {
                reason: "pressure norm factor".into(),
            })?;
            (&linv * s * linv.transpose(), Some(lm))
        }
    };
    let mut m = system.m.clone();
    if let Some(l) = &l {
        m = l.transpose() * m;
    }
    let m = m.normalize();
    let proj = DMatrix::identity(n_p, n_p) - &m * m.transpose();
    let gamma = s.trace().max(f64::MIN_POSITIVE);
    let deflated = &proj * &s * &proj + &m * m.transpose() * gamma;
    let Some(chol) = deflated.clone().cholesky() else {
        return Ok(0.0);
    };

    let mut x = DVector::from_vec(random_unit(n_p, 0x1f5));
    x -= &m * m.dot(&x);
    let mut lambda = f64::NAN;
    for _ in 0..EIGEN_MAX_ITERATIONS {
        let mut y = chol.solve(&x);
        y -= &m * m.dot(&y);
        x = y.normalize();
        let next = x.dot(&(&deflated * &x));
        if (next - lambda).abs() <= INFSUP_TOL * next.abs() {
            return Ok(next.max(0.0).sqrt());
        }
        lambda = next;
    }
    Err(Error::NonConvergence {
        what: "inf-sup estimate",
        iterations: EIGEN_MAX_ITERATIONS,
    })
}

/// Outcome of one audit over a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditOutcome {
    pub checked: usize,
    /// Worst observed value of the audited quantity.
    pub worst: f64,
    pub passed: bool,
}

/// Ear-clipping triangulation of a simple counterclockwise polygon.
pub fn ear_clip(vertices: &[Point]) -> Vec<[Point; 3]> {
    let mut idx: Vec<usize> = (0..vertices.len()).collect();
    let mut out = Vec::new();
    let scale = polygon_area(vertices).abs().max(f64::MIN_POSITIVE);
    while idx.len() > 3 {
        let n = idx.len();
        let ear = (0..n).find(|&i| {
            let (a, b, c) = (
                vertices[idx[(i + n - 1) % n]],
                vertices[idx[i]],
                vertices[idx[(i + 1) % n]],
            );
            if signed_area(&a, &b, &c) <= 1e-14 * scale {
                return false;
            }
            idx.iter().all(|&j| {
                let p = vertices[j];
                if p == a || p == b || p == c {
                    return true;
                }
                !(signed_area(&a, &b, &p) >= 0.0
                    && signed_area(&b, &c, &p) >= 0.0
                    && signed_area(&c, &a, &p) >= 0.0)
            })
        });
        // degenerate input: drop the flattest vertex
        let i = ear.unwrap_or_else(|| {
            (0..n)
                .min_by(|&i, &j| {
                    let area = |i: usize| {
                        signed_area(
                            &vertices[idx[(i + n - 1) % n]],
                            &vertices[idx[i]],
                            &vertices[idx[(i + 1) % n]],
                        )
                        .abs()
                    };
                    area(i).total_cmp(&area(j))
                })
                .unwrap()
        });
        let (a, b, c) = (
            vertices[idx[(i + n - 1) % n]],
            vertices[idx[i]],
            vertices[idx[(i + 1) % n]],
        );
        if ear.is_some() {
            out.push([a, b, c]);
        }
        idx.remove(i);
    }
    if idx.len() == 3 {
        out.push([vertices[idx[0]], vertices[idx[1]], vertices[idx[2]]]);
    }
    out
}

/// Compares the fan rule of every straight-sided cut element with an
/// ear-clipping oracle on all scaled monomials up to `degree`.
///
/// The error is measured relative to `int |monomial|`, so cancellation
/// does not inflate the ratio.
pub fn quadrature_audit(
    mesh: &ActiveMesh,
    degree: usize,
    n_sub: usize,
    tol: f64,
) -> Result<AuditOutcome> {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for e in mesh
        .elements
        .iter()
        .filter(|e| e.is_cut && !e.has_curved_edge())
    {
        let rule = polytope_rule(e, &mesh.domain, degree, n_sub)?;
        let oracle = ear_clip(&e.vertices)
            .iter()
            .map(|t| triangle_rule(t, degree))
            .collect::<Result<Vec<_>>>()?;
        let c = e.bbox.center();
        let hs = Vector::new(0.5 * e.bbox.width(), 0.5 * e.bbox.height())
            .map(|v| v.max(f64::MIN_POSITIVE));
        for (a, b) in monomial_exponents(degree) {
            let mono = |x: Point| {
                ((x.x - c.x) / hs.x).powi(a as i32) * ((x.y - c.y) / hs.y).powi(b as i32)
            };
            let value = rule.integrate(mono);
            let reference: f64 = oracle.iter().map(|r| r.integrate(mono)).sum();
            let magnitude: f64 = oracle.iter().map(|r| r.integrate(|x| mono(x).abs())).sum();
            worst = worst.max((value - reference).abs() / magnitude.max(f64::MIN_POSITIVE));
        }
        checked += 1;
    }
    Ok(AuditOutcome {
        checked,
        worst,
        passed: worst <= tol,
    })
}

/// Element Gram matrix of a basis on a rule.
pub fn gram_matrix(basis: &crate::fespace::ElementBasis, rule: &QuadRule) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(basis.dim, basis.dim);
    for (x, w) in rule.points.iter().zip(&rule.weights) {
        let v = basis.values(*x);
        g += &v * v.transpose() * *w;
    }
    g
}

/// `max |Gram - I|` of the velocity bases on independent rules of degree `degree`.
pub fn orthonormality_audit(
    mesh: &ActiveMesh,
    spaces: &Spaces,
    degree: usize,
    n_sub: usize,
    tol: f64,
) -> Result<AuditOutcome> {
    let mut worst: f64 = 0.0;
    for (e, basis) in mesh.elements.iter().zip(&spaces.velocity) {
        let rule = polytope_rule(e, &mesh.domain, degree, n_sub)?;
        let g = gram_matrix(basis, &rule) - DMatrix::identity(basis.dim, basis.dim);
        worst = worst.max(g.amax());
    }
    Ok(AuditOutcome {
        checked: mesh.num_elements(),
        worst,
        passed: worst < tol,
    })
}

/// Trace inverse inequality `||v||_F^2 <= (p+1)(p+2) / min_F (d . n) ||v||_{K_F}^2`
/// on the boundary edges of cut elements, with `d = x - apex` and `K_F` the
/// fan cone over the edge. Reports the largest observed ratio of the two sides.
pub fn trace_inverse_audit(
    mesh: &ActiveMesh,
    quad: &QuadratureTable,
    spaces: &Spaces,
    n_sub: usize,
    max_elements: usize,
    trials: usize,
    seed: u64,
) -> Result<AuditOutcome> {
    let p = spaces.degree;
    let constant = ((p + 1) * (p + 2)) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let boundary_elements = mesh.elements.iter().filter(|e| {
        e.edge_kinds
            .iter()
            .any(|k| matches!(k, EdgeKind::Boundary { .. }))
    });
    for e in boundary_elements.take(max_elements) {
        let basis = &spaces.velocity[e.id];
        let fan = fan_rules(e, &mesh.domain, 2 * p, n_sub)?;
        for (i, kind) in e.edge_kinds.iter().enumerate() {
            if !matches!(kind, EdgeKind::Boundary { .. }) {
                continue;
            }
            let facet_rule = quad.facet_rule(e.facets[i])?;
            let (s, t) = e.edge(i);
            let mut samples: Vec<(Point, Vector)> = facet_rule
                .points
                .iter()
                .copied()
                .zip(facet_rule.normals.iter().copied())
                .collect();
            let chord = t - s;
            let chord_normal = Vector::new(chord.y, -chord.x).normalize();
            samples.push((s, chord_normal));
            samples.push((t, chord_normal));
            let min_dn = samples
                .iter()
                .map(|(x, n)| (x - fan.apex).dot(n))
                .fold(f64::INFINITY, f64::min);
            if min_dn <= 0.0 {
                continue;
            }
            let bound = constant / min_dn;
            for _ in 0..trials {
                let c: Vec<f64> = (0..basis.dim)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                let value = |x: Point| basis.combine(&c, x).0;
                let lhs: f64 = facet_rule
                    .points
                    .iter()
                    .zip(&facet_rule.weights)
                    .map(|(x, w)| w * value(*x).powi(2))
                    .sum();
                let rhs = fan.cones[i].integrate(|x| value(x).powi(2));
                worst = worst.max(lhs / (bound * rhs));
            }
            checked += 1;
        }
    }
    Ok(AuditOutcome {
        checked,
        worst,
        passed: worst <= 1.0,
    })
}

/// Empirical constant `C` of `||grad v||_K <= C p^2 / h_K ||v||_K`, maximized over
/// elements: `sqrt(lambda_max(G)) h_K / p^2` with `G` the gradient Gram matrix of
/// the orthonormal basis.
pub fn inverse_constant(mesh: &ActiveMesh, quad: &QuadratureTable, spaces: &Spaces) -> Result<f64> {
    let p2 = (spaces.degree * spaces.degree) as f64;
    let mut worst: f64 = 0.0;
    for (e, basis) in mesh.elements.iter().zip(&spaces.velocity) {
        let rule = quad.volume_rule(e.id)?;
        let mut g = DMatrix::zeros(basis.dim, basis.dim);
        let mut mass = DMatrix::zeros(basis.dim, basis.dim);
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let (v, grads) = basis.eval(*x);
            let gx = DVector::from_iterator(basis.dim, grads.iter().map(|g| g.x));
            let gy = DVector::from_iterator(basis.dim, grads.iter().map(|g| g.y));
            g += (&gx * gx.transpose() + &gy * gy.transpose()) * *w;
            mass += &v * v.transpose() * *w;
        }
        // generalized problem against the (nearly identity) mass matrix
        let Some(l) = mass.cholesky() else { continue };
        let linv = l
            .l()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::identity(basis.dim, basis.dim));
        let reduced = &linv * g * linv.transpose();
        let lmax = SymmetricEigen::new((&reduced + reduced.transpose()) * 0.5)
            .eigenvalues
            .max();
        worst = worst.max(lmax.max(0.0).sqrt() * e.h_k / p2);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_norm_block, assemble_system};
    use crate::geometry::{LevelSetDomain, BOUNDARY_TOL};
    use crate::mesh::{build_active_mesh, build_background};
    use crate::problem::ManufacturedProblem;

    fn report(h: f64, u: f64, p: f64) -> ErrorReport {
        ErrorReport {
            h_max: h,
            max_diameter: h,
            vel_h1: u,
            pres_l2: p,
            energy_u: None,
            energy_p: None,
            dofs: 0,
        }
    }

    #[test]
    fn rate_of_first_square_levels() {
        let t = convergence_rates(vec![
            report(0.25, 1.469461, 0.8756151),
            report(0.125, 0.871741, 0.4336638),
        ])
        .unwrap();
        // the tabulated errors carry 7 digits; rounding them moves the rate by up to
        // (0.5e-6 / 0.871741 + 0.5e-6 / 1.469461) / ln 2 ≈ 1.3e-6
        assert!((t.vel_rates[1].unwrap() - 0.7533148).abs() < 1.3e-6);
        assert!((t.pres_rates[1].unwrap() - 1.0137197).abs() < 1.3e-6);
        assert_eq!(t.vel_rates[0], None);
    }

    #[test]
    fn trivial_rates_and_means() {
        let t = convergence_rates(vec![
            report(1.0, 0.8, 1.0),
            report(0.5, 0.2, 1.0),
            report(0.25, 0.05, 1.0),
        ])
        .unwrap();
        assert_eq!(t.vel_rates, vec![None, Some(2.0), Some(2.0)]);
        assert_eq!(t.pres_rates[2], Some(0.0));
        assert_eq!(t.vel_mean, Some(2.0));
        let single = convergence_rates(vec![report(1.0, 1.0, 1.0)]).unwrap();
        assert_eq!(single.vel_mean, None);
    }

    #[test]
    fn non_halving_sizes_are_rejected() {
        let err =
            convergence_rates(vec![report(1.0, 1.0, 1.0), report(0.3, 0.5, 0.5)]).unwrap_err();
        assert!(matches!(err, Error::NonHalvingSequence { index: 0, .. }));
    }

    #[test]
    fn smallest_eigenvalue_of_identity_and_diagonal() {
        assert!((smallest_eigenvalue(&CsrMatrix::identity(10)).unwrap() - 1.0).abs() < 1e-9);
        let d = CsrMatrix::from_rows(4, 4, |i, out| out.push((i, [3.0, -2.0, 5.0, 7.0][i])));
        assert!((smallest_eigenvalue(&d).unwrap() + 2.0).abs() < 1e-6);
    }

    #[test]
    fn smallest_eigenvalue_of_laplacian() {
        // 1D Dirichlet Laplacian: 2 - 2 cos(pi / (n + 1))
        let n = 30;
        let a = CsrMatrix::from_rows(n, n, |i, out| {
            if i > 0 {
                out.push((i - 1, -1.0));
            }
            out.push((i, 2.0));
            if i + 1 < n {
                out.push((i + 1, -1.0));
            }
        });
        let exact = 2.0 - 2.0 * (std::f64::consts::PI / (n + 1) as f64).cos();
        assert!((smallest_eigenvalue(&a).unwrap() - exact).abs() < 1e-5 * exact);
    }

    #[test]
    fn ear_clipping_preserves_area() {
        let l_shape = [
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 2.0),
            Point::new(0.0, 2.0),
        ];
        let tris = ear_clip(&l_shape);
        assert_eq!(tris.len(), 4);
        let area: f64 = tris.iter().map(|t| signed_area(&t[0], &t[1], &t[2])).sum();
        assert!((area - 3.0).abs() < 1e-14);
        assert!(tris.iter().all(|t| signed_area(&t[0], &t[1], &t[2]) > 0.0));
    }

    struct Level {
        mesh: ActiveMesh,
        quad: QuadratureTable,
        spaces: Spaces,
    }

    fn level(domain: LevelSetDomain, h: f64, p: usize, qdeg: usize) -> Level {
        let bg = build_background(domain.covering_box(), h).unwrap();
        let mesh = build_active_mesh(&bg, &domain, BOUNDARY_TOL).unwrap();
        let quad = QuadratureTable::build(&mesh, qdeg, qdeg, 16).unwrap();
        let spaces = Spaces::build(&mesh, &quad, p).unwrap();
        Level { mesh, quad, spaces }
    }

    #[test]
    fn zero_fields_have_zero_norms() {
        let l = level(LevelSetDomain::disc(1.0), 0.625, 2, 8);
        let pen = PenaltyField::new(&l.mesh, 2, 4.0);
        let zu = vec![0.0; l.spaces.dofs.n_u()];
        let zp = vec![0.0; l.spaces.dofs.n_p()];
        assert_eq!(
            h1_error(
                &l.quad,
                &l.spaces,
                &zu,
                |_| Vector::zeros(),
                |_| Matrix2::zeros()
            )
            .unwrap(),
            0.0
        );
        assert_eq!(
            l2_pressure_error(&l.quad, &l.spaces, &zp, |_| 0.0).unwrap(),
            0.0
        );
        let (eu, ep) = energy_norms(
            &l.mesh,
            &l.quad,
            2,
            &pen,
            |_, _| (Vector::zeros(), Matrix2::zeros()),
            |_, _| 0.0,
        )
        .unwrap();
        assert_eq!((eu, ep), (0.0, 0.0));
    }

    #[test]
    fn pressure_error_ignores_constant_shifts() {
        let l = level(LevelSetDomain::disc(1.0), 0.625, 2, 8);
        let f = |x: Point| x.x * x.y + x.y;
        let ph = l
            .spaces
            .interpolate_pressure(&l.quad, |x| x.x * x.y)
            .unwrap();
        let e0 = l2_pressure_error(&l.quad, &l.spaces, ph.as_slice(), f).unwrap();
        let e1 = l2_pressure_error(&l.quad, &l.spaces, ph.as_slice(), |x| f(x) + 3.5).unwrap();
        assert!((e0 - e1).abs() < 1e-12 * (1.0 + e0));
    }

    #[test]
    fn interpolation_errors_converge_at_the_expected_rates() {
        let pb = ManufacturedProblem::square();
        let p = 2;
        let errors: Vec<(f64, f64)> = [0.25, 0.125, 0.0625]
            .iter()
            .map(|&h| {
                let l = level(pb.domain.clone(), h, p, 2 * p + 4);
                let uh = l
                    .spaces
                    .interpolate_velocity(&l.quad, |x| (pb.velocity)(x))
                    .unwrap();
                let ph = l
                    .spaces
                    .interpolate_pressure(&l.quad, |x| (pb.pressure)(x))
                    .unwrap();
                (
                    h1_error(
                        &l.quad,
                        &l.spaces,
                        uh.as_slice(),
                        |x| (pb.velocity)(x),
                        |x| (pb.velocity_gradient)(x),
                    )
                    .unwrap(),
                    l2_pressure_error(&l.quad, &l.spaces, ph.as_slice(), |x| (pb.pressure)(x))
                        .unwrap(),
                )
            })
            .collect();
        let ru = rate(errors[1].0, errors[2].0);
        let rp = rate(errors[1].1, errors[2].1);
        assert!((ru - 2.0).abs() < 0.25, "velocity rate {ru}");
        assert!((rp - 2.0).abs() < 0.25, "pressure rate {rp}");
    }

    #[test]
    fn energy_norm_dominates_gradient_norm() {
        let l = level(LevelSetDomain::disc(1.0), 0.625, 2, 8);
        let pen = PenaltyField::new(&l.mesh, 2, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u: Vec<f64> = (0..l.spaces.dofs.n_u())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let (eu, _) = energy_norms(
            &l.mesh,
            &l.quad,
            2,
            &pen,
            |k, x| l.spaces.eval_velocity(&u, k, x),
            |_, _| 0.0,
        )
        .unwrap();
        let grad = h1_error(
            &l.quad,
            &l.spaces,
            &u,
            |_| Vector::zeros(),
            |_| Matrix2::zeros(),
        )
        .unwrap();
        assert!(eu > 0.0 && eu * eu >= grad * grad - l2_sq(&l, &u) - 1e-12);
        let ratio = norm_equivalence_ratio(&l.mesh, &l.quad, &l.spaces, &pen, 10, 7).unwrap();
        assert!(ratio.is_finite() && ratio >= 1.0);
    }

    fn l2_sq(l: &Level, u: &[f64]) -> f64 {
        (0..l.mesh.num_elements())
            .map(|k| {
                l.quad.volume[k].integrate(|x| l.spaces.eval_velocity(u, k, x).0.norm_squared())
            })
            .sum()
    }

    #[test]
    fn norm_block_matches_vc_norm() {
        let l = level(LevelSetDomain::disc(1.0), 0.625, 2, 8);
        let pen = PenaltyField::new(&l.mesh, 2, 4.0);
        let n = assemble_norm_block(&l.mesh, &l.quad, &l.spaces, &pen).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u: Vec<f64> = (0..l.spaces.dofs.n_u())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let d = l.spaces.dofs;
        let comps: Vec<Vec<f64>> = (0..2)
            .map(|c| {
                (0..d.num_elements)
                    .flat_map(|k| (0..d.dv).map(move |i| (k, i)))
                    .map(|(k, i)| u[d.velocity(k, c) + i])
                    .collect()
            })
            .collect();
        let gram: f64 = comps.iter().map(|x| dot(x, &n.mul_vec(x))).sum();
        let vc = energy_norms_vc(&l.mesh, &l.quad, &l.spaces, &pen, &u).unwrap();
        assert!((gram - vc * vc).abs() < 1e-10 * gram);
    }

    #[test]
    fn coercivity_depends_on_the_penalty() {
        let pb = ManufacturedProblem::square();
        let l = level(pb.domain.clone(), 0.125, 1, 4);
        let f = |x: Point| (pb.forcing)(x);
        let good = assemble_system(
            &l.mesh,
            &l.quad,
            &l.spaces,
            &PenaltyField::new(&l.mesh, 1, 4.0),
            f,
        )
        .unwrap();
        let bad = assemble_system(
            &l.mesh,
            &l.quad,
            &l.spaces,
            &PenaltyField::new(&l.mesh, 1, 1e-3),
            f,
        )
        .unwrap();
        let lg = coercivity_estimate(&good).unwrap();
        let lb = coercivity_estimate(&bad).unwrap();
        assert!(lg > 0.0, "{lg}");
        assert!(lb <= 1e-6 * lg, "{lb}");
    }

    #[test]
    fn infsup_is_positive_and_zero_for_zero_b() {
        let pb = ManufacturedProblem::square();
        let l = level(pb.domain.clone(), 0.25, 2, 6);
        let pen = PenaltyField::new(&l.mesh, 2, 4.0);
        let mut sys =
            assemble_system(&l.mesh, &l.quad, &l.spaces, &pen, |x| (pb.forcing)(x)).unwrap();
        let n = assemble_norm_block(&l.mesh, &l.quad, &l.spaces, &pen).unwrap();
        let beta = infsup_estimate(&sys, &n, None).unwrap();
        assert!(beta > 0.0 && beta < 10.0, "{beta}");
        let with_identity =
            infsup_estimate(&sys, &n, Some(&DMatrix::identity(sys.n_p(), sys.n_p()))).unwrap();
        assert!((beta - with_identity).abs() < 1e-4 * beta);
        sys.b.values.iter_mut().for_each(|v| *v = 0.0);
        assert_eq!(infsup_estimate(&sys, &n, None).unwrap(), 0.0);
    }

    #[test]
    fn audits_pass_on_a_cut_square() {
        let domain = LevelSetDomain::square();
        let bbox = domain.covering_box().translated(Vector::new(0.037, 0.011));
        let bg = build_background(bbox, 0.125).unwrap();
        let mesh = build_active_mesh(&bg, &domain, BOUNDARY_TOL).unwrap();
        let q = quadrature_audit(&mesh, 6, 8, 1e-12).unwrap();
        assert!(q.checked >= 20 && q.passed, "{q:?}");
        let quad = QuadratureTable::build(&mesh, 6, 6, 8).unwrap();
        let spaces = Spaces::build(&mesh, &quad, 2).unwrap();
        let o = orthonormality_audit(&mesh, &spaces, 10, 8, 1e-9).unwrap();
        assert!(o.passed, "{o:?}");
        let t = trace_inverse_audit(&mesh, &quad, &spaces, 8, 20, 50, 1).unwrap();
        assert!(t.checked > 0 && t.passed, "{t:?}");
        let c = inverse_constant(&mesh, &quad, &spaces).unwrap();
        assert!(c.is_finite() && c > 0.0);
    }

    #[test]
    fn trace_audit_on_the_disc() {
        let l = level(LevelSetDomain::disc(1.0), 0.3125, 2, 8);
        let t = trace_inverse_audit(&l.mesh, &l.quad, &l.spaces, 16, 20, 50, 2).unwrap();
        assert!(t.checked >= 20 && t.passed, "{t:?}");
    }
}
