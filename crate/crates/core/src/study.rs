//! Refinement studies and stability diagnostics driven by a flat configuration.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::Matrix2;

use crate::analysis::{
    coercivity_estimate, convergence_rates, energy_error, h1_error, infsup_estimate,
    inverse_constant, l2_pressure_error, norm_equivalence_ratio, orthonormality_audit,
    quadrature_audit, trace_inverse_audit, ConvergenceTable, ErrorReport, COERCIVITY_FLOOR,
};
use crate::assembly::{
    assemble_norm_block, assemble_system, PenaltyField, SaddleSystem, DEFAULT_SIGMA_CONST,
};
use crate::error::{Error, Result};
use crate::fespace::Spaces;
use crate::geometry::{LevelSetDomain, Point, Vector, BOUNDARY_TOL};
use crate::mesh::{build_active_mesh, build_background, ActiveMesh};
use crate::problem::{make_problem, ManufacturedProblem};
use crate::quadrature::{polytope_rule, QuadratureTable};
use crate::solver::{solve, SolutionFields, SolverOptions, DEFAULT_TOLERANCE};

pub const CSV_HEADER: &str = "h_max,vel_h1_error,vel_rate,pres_l2_error,pres_rate";
/// Floor of the default `max(8, 2p + 2)` Gauss pieces per curved facet.
pub const DEFAULT_CURVED_SUBDIVISIONS: usize = 8;
/// Levels examined by the diagnostics.
pub const DIAGNOSTIC_LEVELS: usize = 3;
/// Allowed relative spread of the inf-sup constant across levels.
pub const INFSUP_SPREAD: f64 = 0.2;

/// How the facet penalty `C p^2 / h_F` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyScaling {
    /// Element diameters.
    Diameter,
    /// Diameters, raised on facets of cut elements to a computed coercivity bound.
    ShapeAware,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    /// `square` or `disc`.
    pub domain: String,
    /// Velocity degree; the pressure degree is one less.
    pub order: usize,
    pub levels: usize,
    /// Coarsest covering-mesh size; the domain default when `None`.
    pub h0: Option<f64>,
    pub sigma_const: f64,
    /// Overrides the volume and facet quadrature degree `2p + 2`.
    pub quad_degree: Option<usize>,
    /// Gauss pieces per curved boundary facet; defaults to `max(8, 2p + 2)`.
    pub curved_subdivisions: Option<usize>,
    /// CSV path; the plot files are written next to it.
    pub out: PathBuf,
    pub seed: u64,
    pub radius: f64,
    /// Translation of the covering box (moves the square's boundary off the mesh lines).
    pub box_shift: Vector,
    pub tolerance: f64,
    pub energy_norms: bool,
    pub penalty: PenaltyScaling,
    pub dump_mesh: Option<PathBuf>,
    pub dump_system: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            domain: "square".into(),
            order: 1,
            levels: 3,
            h0: None,
            sigma_const: DEFAULT_SIGMA_CONST,
            quad_degree: None,
            curved_subdivisions: None,
            out: PathBuf::from("study.csv"),
            seed: 0,
            radius: 1.0,
            box_shift: Vector::zeros(),
            tolerance: DEFAULT_TOLERANCE,
            energy_norms: false,
            penalty: PenaltyScaling::ShapeAware,
            dump_mesh: None,
            dump_system: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "cannot parse `{value}` for `{key}` as a boolean"
        ))),
    }
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected `key = value`", n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl StudyConfig {
    /// Sets one option; keys use underscores or dashes interchangeably.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.replace('-', "_").as_str() {
            "domain" => self.domain = value.trim().to_string(),
            "order" => self.order = parse(key, value)?,
            "levels" => self.levels = parse(key, value)?,
            "h0" => self.h0 = Some(parse(key, value)?),
            "sigma_const" => self.sigma_const = parse(key, value)?,
            "quad_degree" => self.quad_degree = Some(parse(key, value)?),
            "curved_subdivisions" => self.curved_subdivisions = Some(parse(key, value)?),
            "out" => self.out = PathBuf::from(value.trim()),
            "seed" => self.seed = parse(key, value)?,
            "radius" => self.radius = parse(key, value)?,
            "box_shift" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 2 {
                    return Err(Error::InvalidConfig(format!(
                        "`{key}` expects `dx,dy`, got `{value}`"
                    )));
                }
                self.box_shift = Vector::new(parse(key, parts[0])?, parse(key, parts[1])?);
            }
            "tolerance" => self.tolerance = parse(key, value)?,
            "energy_norms" => self.energy_norms = parse_bool(key, value)?,
            "penalty" => {
                self.penalty = match value.trim() {
                    "shape" => PenaltyScaling::ShapeAware,
                    "diameter" => PenaltyScaling::Diameter,
                    other => {
                        return Err(Error::InvalidConfig(format!(
                            "`penalty` must be `shape` or `diameter`, got `{other}`"
                        )))
                    }
                }
            }
            "dump_mesh" => self.dump_mesh = Some(PathBuf::from(value.trim())),
            "dump_system" => self.dump_system = Some(PathBuf::from(value.trim())),
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (k, v) in parse_key_values(text)? {
            config.set(&k, &v)?;
        }
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.domain != "square" && self.domain != "disc" {
            return Err(Error::UnknownProblem(self.domain.clone()));
        }
        if self.order == 0 {
            return bad("order must be at least 1".into());
        }
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if let Some(h) = self.h0 {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("h0 must be positive, got {h}"));
            }
        }
        if !(self.sigma_const > 0.0 && self.sigma_const.is_finite()) {
            return bad(format!(
                "sigma_const must be positive, got {}",
                self.sigma_const
            ));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if self.curved_subdivisions == Some(0) {
            return bad("curved_subdivisions must be at least 1".into());
        }
        if !(self.tolerance > 0.0) {
            return bad(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            ));
        }
        Ok(())
    }

    pub fn subdivisions(&self) -> usize {
        self.curved_subdivisions
            .unwrap_or(DEFAULT_CURVED_SUBDIVISIONS.max(2 * self.order + 2))
    }

    /// Coarsest mesh size: `2^-2` for the square, `r / 1.6` for the disc.
    pub fn base_size(&self) -> f64 {
        self.h0.unwrap_or(if self.domain == "disc" {
            0.625 * self.radius
        } else {
            0.25
        })
    }

    /// `h_i = h0 2^-i`.
    pub fn level_size(&self, level: usize) -> f64 {
        self.base_size() / f64::powi(2.0, level as i32)
    }

    pub fn quadrature_degree(&self) -> usize {
        self.quad_degree.unwrap_or(2 * self.order + 2)
    }

    /// Quadrature degree of the error integrals.
    pub fn error_degree(&self) -> usize {
        self.quadrature_degree().max(2 * self.order + 4)
    }

    pub fn problem(&self) -> Result<ManufacturedProblem> {
        match self.domain.as_str() {
            "disc" => Ok(ManufacturedProblem::disc(self.radius)),
            name => make_problem(name),
        }
    }
}

/// Mesh, quadrature, spaces and penalty of one level.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub h: f64,
    pub mesh: ActiveMesh,
    pub quad: QuadratureTable,
    pub spaces: Spaces,
    pub penalty: PenaltyField,
}

pub fn discretize(domain: &LevelSetDomain, h: f64, config: &StudyConfig) -> Result<Discretization> {
    let background = build_background(domain.covering_box().translated(config.box_shift), h)?;
    let mesh = build_active_mesh(&background, domain, BOUNDARY_TOL)?;
    let q = config.quadrature_degree();
    let quad = QuadratureTable::build(&mesh, q, q, config.subdivisions())?;
    let spaces = Spaces::build(&mesh, &quad, config.order)?;
    let penalty = match config.penalty {
        PenaltyScaling::Diameter => PenaltyField::new(&mesh, config.order, config.sigma_const),
        PenaltyScaling::ShapeAware => {
            PenaltyField::shape_aware(&mesh, &quad, config.order, config.sigma_const)?
        }
    };
    Ok(Discretization {
        h,
        mesh,
        quad,
        spaces,
        penalty,
    })
}

impl Discretization {
    pub fn assemble(&self, problem: &ManufacturedProblem) -> Result<SaddleSystem> {
        assemble_system(&self.mesh, &self.quad, &self.spaces, &self.penalty, |x| {
            (problem.forcing)(x)
        })
    }

    /// Errors of a discrete solution against the exact one.
    pub fn errors(
        &self,
        problem: &ManufacturedProblem,
        fields: &SolutionFields,
        config: &StudyConfig,
    ) -> Result<ErrorReport> {
        let d = config.error_degree();
        let quad = QuadratureTable::build(&self.mesh, d, d, config.subdivisions())?;
        let u = |x: Point| (problem.velocity)(x);
        let gu = |x: Point| -> Matrix2<f64> { (problem.velocity_gradient)(x) };
        let p = |x: Point| (problem.pressure)(x);
        let vel_h1 = h1_error(&quad, &self.spaces, fields.u.as_slice(), u, gu)?;
        let pres_l2 = l2_pressure_error(&quad, &self.spaces, fields.p.as_slice(), p)?;
        let (energy_u, energy_p) = if config.energy_norms {
            let (eu, ep) = energy_error(
                &self.mesh,
                &quad,
                &self.spaces,
                &self.penalty,
                fields.u.as_slice(),
                fields.p.as_slice(),
                u,
                gu,
                p,
            )?;
            (Some(eu), Some(ep))
        } else {
            (None, None)
        };
        Ok(ErrorReport {
            h_max: self.h,
            max_diameter: self.mesh.h_max(),
            vel_h1,
            pres_l2,
            energy_u,
            energy_p,
            dofs: self.spaces.dofs.total(),
        })
    }
}

/// Result of a study: the table of completed levels and the error that stopped it, if any.
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    pub table: ConvergenceTable,
    pub failure: Option<(usize, Error)>,
}

fn level_path(path: &Path, level: usize, levels: usize) -> PathBuf {
    if levels == 1 {
        return path.to_path_buf();
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_L{level}.{}", ext.to_string_lossy()),
        None => format!("{stem}_L{level}"),
    };
    path.with_file_name(name)
}

/// Solves one level and measures its errors.
pub fn run_level(
    problem: &ManufacturedProblem,
    config: &StudyConfig,
    level: usize,
) -> Result<ErrorReport> {
    let h = config.level_size(level);
    let disc = discretize(&problem.domain, h, config)?;
    if let Some(path) = &config.dump_mesh {
        disc.mesh
            .write_polygons(fs::File::create(level_path(path, level, config.levels))?)?;
    }
    let system = disc.assemble(problem)?;
    if let Some(path) = &config.dump_system {
        system.write_dump(std::io::BufWriter::new(fs::File::create(level_path(
            path,
            level,
            config.levels,
        ))?))?;
    }
    let options = SolverOptions {
        tolerance: config.tolerance,
        ..SolverOptions::default()
    };
    let fields = solve(&system, &options)?;
    let report = disc.errors(problem, &fields, config)?;
    info!(
        "level {level}: h = {h}, {} elements, {} dofs, {} iterations, H1 error {:.4e}, L2 pressure error {:.4e}",
        disc.mesh.num_elements(),
        report.dofs,
        fields.iterations,
        report.vel_h1,
        report.pres_l2
    );
    Ok(report)
}

/// Runs every level, writes the CSV table and the plot files, and returns the table.
///
/// A failing level stops the study; the completed levels are still written.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    let problem = config.problem()?;
    let mut rows = Vec::new();
    let mut failure = None;
    for level in 0..config.levels {
        match run_level(&problem, config, level) {
            Ok(r) => rows.push(r),
            Err(e) => {
                warn!("level {level} failed: {e}");
                failure = Some((level, e));
                break;
            }
        }
    }
    let table = convergence_rates(rows)?;
    write_outputs(&table, &config.out)?;
    Ok(StudyOutcome { table, failure })
}

fn fmt_rate(r: Option<f64>) -> String {
    r.map(|r| format!("{r:.7}")).unwrap_or_default()
}

/// The table as CSV, one row per level and a final `mean` row.
pub fn render_csv(table: &ConvergenceTable) -> String {
    let mut s = String::new();
    writeln!(s, "{CSV_HEADER}").unwrap();
    for (i, r) in table.rows.iter().enumerate() {
        writeln!(
            s,
            "{},{:.7e},{},{:.7e},{}",
            r.h_max,
            r.vel_h1,
            fmt_rate(table.vel_rates[i]),
            r.pres_l2,
            fmt_rate(table.pres_rates[i])
        )
        .unwrap();
    }
    writeln!(
        s,
        "mean,,{},,{}",
        fmt_rate(table.vel_mean),
        fmt_rate(table.pres_mean)
    )
    .unwrap();
    s
}

/// Two-column `h error` data for log-log plots.
pub fn render_plot_data(table: &ConvergenceTable, pressure: bool) -> String {
    let mut s = String::from(if pressure {
        "# h pres_l2_error\n"
    } else {
        "# h vel_h1_error\n"
    });
    for r in &table.rows {
        writeln!(
            s,
            "{} {:.10e}",
            r.h_max,
            if pressure { r.pres_l2 } else { r.vel_h1 }
        )
        .unwrap();
    }
    s
}

/// Paths of the velocity and pressure plot files belonging to a CSV path.
pub fn plot_paths(csv: &Path) -> (PathBuf, PathBuf) {
    let stem = csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "study".into());
    (
        csv.with_file_name(format!("{stem}_velocity.dat")),
        csv.with_file_name(format!("{stem}_pressure.dat")),
    )
}

pub fn write_outputs(table: &ConvergenceTable, csv: &Path) -> Result<()> {
    if let Some(dir) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(csv)?.write_all(render_csv(table).as_bytes())?;
    let (vel, pres) = plot_paths(csv);
    fs::write(vel, render_plot_data(table, false))?;
    fs::write(pres, render_plot_data(table, true))?;
    Ok(())
}

/// One line of the diagnostics report; `passed == None` marks a skipped check.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticLine {
    pub name: String,
    pub passed: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticReport {
    pub lines: Vec<DiagnosticLine>,
}

impl DiagnosticReport {
    fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.lines.push(DiagnosticLine {
            name: name.into(),
            passed: Some(passed),
            detail: detail.into(),
        });
    }

    fn skip(&mut self, name: impl Into<String>, detail: impl Into<String>) {
        self.lines.push(DiagnosticLine {
            name: name.into(),
            passed: None,
            detail: detail.into(),
        });
    }

    /// True when no check failed.
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed != Some(false))
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            let tag = match l.passed {
                Some(true) => "PASS",
                Some(false) => "FAIL",
                None => "SKIP",
            };
            writeln!(s, "{tag} {}: {}", l.name, l.detail).unwrap();
        }
        writeln!(
            s,
            "{}",
            if self.passed() {
                "diagnostics passed"
            } else {
                "diagnostics FAILED"
            }
        )
        .unwrap();
        s
    }
}

/// Coercivity, inf-sup, quadrature and inverse-inequality checks on the
/// coarsest levels of a study.
pub fn run_diagnostics(config: &StudyConfig) -> Result<DiagnosticReport> {
    config.validate()?;
    let problem = config.problem()?;
    let mut report = DiagnosticReport::default();
    let mut betas = Vec::new();
    let levels = config.levels.min(DIAGNOSTIC_LEVELS);
    for level in 0..levels {
        let h = config.level_size(level);
        let tag = |name: &str| format!("{name} [h = {h}]");
        let disc = discretize(&problem.domain, h, config)?;
        let system = disc.assemble(&problem)?;

        let asym = system.a_scalar.max_asymmetry();
        report.check(
            tag("symmetry"),
            asym == 0.0,
            format!("max |A - A^T| = {asym:e}"),
        );

        let lambda = coercivity_estimate(&system)?;
        let floor = COERCIVITY_FLOOR * system.a_scalar.max_abs();
        report.check(
            tag("coercivity"),
            lambda > floor,
            format!(
                "lambda_min(A) = {lambda:.6e} (sigma_const = {})",
                config.sigma_const
            ),
        );

        let norm_u = assemble_norm_block(&disc.mesh, &disc.quad, &disc.spaces, &disc.penalty)?;
        let beta = infsup_estimate(&system, &norm_u, None)?;
        report.check(tag("inf-sup"), beta > 0.0, format!("beta_h = {beta:.6e}"));
        betas.push(beta);

        let q = quadrature_audit(
            &disc.mesh,
            2 * config.order + 2,
            config.subdivisions(),
            1e-12,
        )?;
        if q.checked > 0 {
            report.check(
                tag("quadrature exactness"),
                q.passed,
                format!(
                    "{} straight cut elements, worst relative error {:.3e}",
                    q.checked, q.worst
                ),
            );
        } else {
            report.skip(
                tag("quadrature exactness"),
                "no straight-sided cut elements",
            );
        }
        if disc.mesh.elements.iter().any(|e| e.has_curved_edge()) {
            let worst = curved_quadrature_consistency(
                &disc.mesh,
                2 * config.order + 2,
                config.subdivisions(),
            )?;
            report.check(
                tag("curved quadrature"),
                worst < 1e-8,
                format!("relative change under 4x arc refinement {worst:.3e}"),
            );
        }

        let o = orthonormality_audit(
            &disc.mesh,
            &disc.spaces,
            2 * config.order + 4,
            4 * config.subdivisions(),
            1e-9,
        )?;
        report.check(
            tag("basis orthonormality"),
            o.passed,
            format!("max |Gram - I| = {:.3e}", o.worst),
        );

        let t = trace_inverse_audit(
            &disc.mesh,
            &disc.quad,
            &disc.spaces,
            config.subdivisions(),
            20,
            50,
            config.seed,
        )?;
        if t.checked == 0 {
            report.skip(tag("trace inverse inequality"), "no cut boundary facets");
        } else {
            report.check(
                tag("trace inverse inequality"),
                t.passed,
                format!("{} boundary facets, worst ratio {:.3}", t.checked, t.worst),
            );
        }

        let c = inverse_constant(&disc.mesh, &disc.quad, &disc.spaces)?;
        report.check(
            tag("H1-L2 inverse estimate"),
            c.is_finite(),
            format!("empirical constant {c:.4}"),
        );

        let ratio = norm_equivalence_ratio(
            &disc.mesh,
            &disc.quad,
            &disc.spaces,
            &disc.penalty,
            100,
            config.seed,
        )?;
        report.check(
            tag("norm equivalence"),
            ratio.is_finite(),
            format!("max |||v||| / |||v|||_Vc = {ratio:.4}"),
        );
    }
    if levels < 2 {
        report.skip(
            "inf-sup stability across levels",
            "needs at least two levels",
        );
    } else {
        let (lo, hi) = betas.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), b| {
            (lo.min(*b), hi.max(*b))
        });
        let spread = (hi - lo) / hi;
        report.check(
            "inf-sup stability across levels",
            spread < INFSUP_SPREAD,
            format!("relative spread {spread:.4}"),
        );
    }
    Ok(report)
}

/// Largest relative change of the curved-element volume rules (area and first
/// moments) when the arc subdivision is refined fourfold.
fn curved_quadrature_consistency(mesh: &ActiveMesh, degree: usize, n_sub: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for e in mesh.elements.iter().filter(|e| e.has_curved_edge()) {
        let coarse = polytope_rule(e, &mesh.domain, degree, n_sub)?;
        let fine = polytope_rule(e, &mesh.domain, degree, 4 * n_sub)?;
        let c = e.centroid();
        for f in [
            |_: Vector| 1.0,
            |d: Vector| d.x,
            |d: Vector| d.y,
            |d: Vector| d.x * d.y,
        ] {
            let g = |x: Point| f((x - c) / e.h_k);
            let scale = fine.integrate(|x| g(x).abs()).max(f64::MIN_POSITIVE);
            worst = worst.max((coarse.integrate(g) - fine.integrate(g)).abs() / scale);
        }
    }
    Ok(worst)
}
