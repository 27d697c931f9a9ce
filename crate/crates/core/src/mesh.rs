//! Covering triangulation and the active mesh of clipped polytopic elements.
//!
//! The background mesh is a structured grid of squares, each split into two
//! counterclockwise triangles along the same diagonal. Triangles inside the
//! domain become active elements unchanged; triangles cut by the boundary are
//! clipped to `tri ∩ {phi <= 0}`, producing polygons whose boundary part is a
//! single (possibly curved) facet between two root vertices.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::geometry::{
    classify_value, polygon_area, signed_area, BoundingBox, LevelSetDomain, Point, PointClass,
    Vector,
};
use crate::quadrature::BoundaryArc;

/// Clips whose area falls below this fraction of the parent are discarded.
pub const AREA_FLOOR: f64 = 1e-14;

const AUDIT_SAMPLES_PER_AXIS: usize = 100;

#[derive(Debug, Clone)]
pub struct BackgroundMesh {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub bbox: BoundingBox,
}

impl BackgroundMesh {
    pub fn triangle_vertices(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.nodes[a], self.nodes[b], self.nodes[c]]
    }

    /// Index of a background triangle containing `p`, if `p` lies in the grid.
    pub fn locate(&self, p: &Point) -> Option<usize> {
        let u = (p.x - self.bbox.min.x) / self.h;
        let v = (p.y - self.bbox.min.y) / self.h;
        if u < 0.0 || v < 0.0 || u > self.nx as f64 || v > self.ny as f64 {
            return None;
        }
        let i = (u.floor() as usize).min(self.nx - 1);
        let j = (v.floor() as usize).min(self.ny - 1);
        let cell = j * self.nx + i;
        let (fu, fv) = (u - i as f64, v - j as f64);
        Some(if fu >= fv { 2 * cell } else { 2 * cell + 1 })
    }

    /// Largest triangle diameter.
    pub fn max_diameter(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| diameter(&self.triangle_vertices(t)))
            .fold(0.0, f64::max)
    }
}

/// Uniform `nx × ny` grid of squares of side `h`, split along the `(0,0)-(1,1)` diagonal.
pub fn build_background(bbox: BoundingBox, h: f64) -> Result<BackgroundMesh> {
    let (width, height) = (bbox.width(), bbox.height());
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::DegenerateBox { width, height });
    }
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "mesh size must be positive, got {h}"
        )));
    }
    let nx = ((width / h) - 1e-9).ceil().max(1.0) as usize;
    let ny = ((height / h) - 1e-9).ceil().max(1.0) as usize;
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            nodes.push(Point::new(
                bbox.min.x + i as f64 * h,
                bbox.min.y + j as f64 * h,
            ));
        }
    }
    let node = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (
                node(i, j),
                node(i + 1, j),
                node(i + 1, j + 1),
                node(i, j + 1),
            );
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let grid_box = BoundingBox::new(
        bbox.min,
        bbox.min + Vector::new(nx as f64 * h, ny as f64 * h),
    );
    Ok(BackgroundMesh {
        nodes,
        triangles,
        h,
        nx,
        ny,
        bbox: grid_box,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementClass {
    Inside,
    Cut,
    Outside,
}

/// Classifies a triangle from its vertices, centroid, edge midpoints and
/// [`edge_samples`] of its edges.
pub fn classify_element(tri: &[Point; 3], domain: &LevelSetDomain, tol: f64) -> ElementClass {
    let [a, b, c] = *tri;
    let samples = [
        a,
        b,
        c,
        Point::from((a.coords + b.coords + c.coords) / 3.0),
        nalgebra::center(&a, &b),
        nalgebra::center(&b, &c),
        nalgebra::center(&c, &a),
    ];
    let values = samples.map(|p| domain.phi(p));
    if values.iter().all(|&v| v < -tol) {
        ElementClass::Inside
    } else if values[3] > tol
        && (0..3).all(|k| {
            edge_samples(tri[k], tri[(k + 1) % 3], domain, tol)
                .1
                .iter()
                .all(|&v| v > tol)
        })
        && !domain
            .corners()
            .iter()
            .any(|c| strictly_inside_triangle(c, tri))
    {
        // a domain corner can poke into a triangle away from its edges
        ElementClass::Outside
    } else {
        ElementClass::Cut
    }
}

/// Provenance of one polygon edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// Part of local edge `k` (from vertex `k` to `k + 1`) of the parent triangle.
    Background(usize),
    /// Part of the domain boundary crossing the parent triangle.
    Boundary { curved: bool },
}

#[derive(Debug, Clone)]
pub struct PolytopicElement {
    pub id: usize,
    pub parent_triangle: usize,
    /// Counterclockwise vertices; edge `i` runs from vertex `i` to vertex `i + 1`.
    pub vertices: Vec<Point>,
    pub edge_kinds: Vec<EdgeKind>,
    /// Facet id of every edge, parallel to `edge_kinds`.
    pub facets: Vec<usize>,
    pub h_k: f64,
    pub area: f64,
    pub bbox: BoundingBox,
    pub is_cut: bool,
}

impl PolytopicElement {
    fn new(
        parent_triangle: usize,
        vertices: Vec<Point>,
        edge_kinds: Vec<EdgeKind>,
        is_cut: bool,
    ) -> Self {
        let h_k = diameter(&vertices);
        let area = polygon_area(&vertices);
        let bbox = BoundingBox::from_points(&vertices);
        Self {
            id: 0,
            parent_triangle,
            vertices,
            edge_kinds,
            facets: Vec::new(),
            h_k,
            area,
            bbox,
            is_cut,
        }
    }

    pub fn num_edges(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge(&self, i: usize) -> (Point, Point) {
        (
            self.vertices[i],
            self.vertices[(i + 1) % self.vertices.len()],
        )
    }

    /// Vertex average, used as the fan apex for sub-triangulation.
    pub fn vertex_centroid(&self) -> Point {
        let sum = self
            .vertices
            .iter()
            .fold(Vector::zeros(), |acc, p| acc + p.coords);
        Point::from(sum / self.vertices.len() as f64)
    }

    /// Area centroid of the polygon.
    pub fn centroid(&self) -> Point {
        let n = self.vertices.len();
        let (mut cx, mut cy, mut twice) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.x * q.y - q.x * p.y;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
            twice += w;
        }
        if twice.abs() < f64::MIN_POSITIVE {
            return self.vertex_centroid();
        }
        Point::new(cx / (3.0 * twice), cy / (3.0 * twice))
    }

    pub fn has_curved_edge(&self) -> bool {
        self.edge_kinds
            .iter()
            .any(|k| matches!(k, EdgeKind::Boundary { curved: true }))
    }
}

/// Clips a Cut triangle against the domain.
///
/// Vertices with `phi < -tol` are kept, vertices within `tol` of the boundary
/// are kept as boundary vertices, and every edge with a strict sign change
/// contributes a bisection root. Consecutive triangle-edge pieces that do not
/// meet are joined along the boundary, passing through any domain corners
/// that lie inside the triangle. A triangle may therefore carry several
/// boundary facets, e.g. when a diagonal cuts off a domain corner.
pub fn clip_element(
    tri: &[Point; 3],
    parent: usize,
    domain: &LevelSetDomain,
    tol: f64,
) -> Result<PolytopicElement> {
    let parent_area = signed_area(&tri[0], &tri[1], &tri[2]);
    let length_floor = 1e-14 * diameter(tri);

    let mut pieces: [Option<(Point, Point)>; 3] = [None; 3];
    for k in 0..3 {
        let (a, b) = (tri[k], tri[(k + 1) % 3]);
        pieces[k] = edge_piece(a, b, domain, tol, parent)?;
    }

    let mut segments: Vec<(Point, Point, EdgeKind)> = Vec::with_capacity(6);
    let mut first_start: Option<Point> = None;
    let mut current_end: Option<Point> = None;
    for (k, piece) in pieces.iter().enumerate() {
        let Some((s, t)) = *piece else { continue };
        match current_end {
            Some(end) if (end - s).norm() > length_floor => {
                push_boundary_path(&mut segments, end, s, tri, domain, tol);
            }
            Some(_) => {}
            None => first_start = Some(s),
        }
        segments.push((s, t, EdgeKind::Background(k)));
        current_end = Some(t);
    }
    let (Some(start), Some(end)) = (first_start, current_end) else {
        return Err(Error::EmptyClip { triangle: parent });
    };
    if (end - start).norm() > length_floor {
        push_boundary_path(&mut segments, end, start, tri, domain, tol);
    }

    segments.retain(|(s, t, _)| (t - s).norm() > length_floor);
    // a lens between one chord and the boundary arc: split the arc so the
    // polygon has a positive area and an interior fan apex
    if segments.len() == 2 {
        if let Some(i) = segments
            .iter()
            .position(|seg| seg.2 == EdgeKind::Boundary { curved: true })
        {
            let (s, t, kind) = segments[i];
            let mid = BoundaryArc::new(s, t, domain).point(0.5)?;
            segments.splice(i..=i, [(s, mid, kind), (mid, t, kind)]);
        }
    }
    let vertices: Vec<Point> = segments.iter().map(|(s, _, _)| *s).collect();
    let kinds: Vec<EdgeKind> = segments.iter().map(|(_, _, k)| *k).collect();
    if vertices.len() < 3 || polygon_area(&vertices) < AREA_FLOOR * parent_area {
        return Err(Error::EmptyClip { triangle: parent });
    }
    let is_cut = !(vertices.len() == 3 && vertices.iter().zip(tri.iter()).all(|(v, t)| v == t));
    Ok(PolytopicElement::new(parent, vertices, kinds, is_cut))
}

/// Samples per triangle edge used to detect boundary crossings.
const EDGE_SAMPLES: usize = 16;

/// Samples of the edge `a -> b` (taken in lexicographic endpoint order) and
/// their level-set values.
///
/// Uniform samples alone miss a short stretch of the edge inside the domain,
/// e.g. where the disc bulges just past a chord or a diagonal clips a square
/// corner. Around every sampled local minimum of `phi` that is not already
/// inside, a golden-section search looks for such a stretch and adds its
/// deepest point. `phi` restricted to a line is convex for convex domains, so
/// the search is exact there.
fn edge_samples(a: Point, b: Point, domain: &LevelSetDomain, tol: f64) -> (Vec<Point>, Vec<f64>) {
    let (a, b) = if (a.x, a.y) <= (b.x, b.y) {
        (a, b)
    } else {
        (b, a)
    };
    let n = EDGE_SAMPLES;
    let at = |t: f64| match t {
        0.0 => a,
        1.0 => b,
        t => a + (b - a) * t,
    };
    let ts: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let values: Vec<f64> = ts.iter().map(|&t| domain.phi(at(t))).collect();
    let mut samples: Vec<(f64, f64)> = ts.iter().copied().zip(values.iter().copied()).collect();
    for i in 0..=n {
        let local_min =
            (i == 0 || values[i] <= values[i - 1]) && (i == n || values[i] <= values[i + 1]);
        if values[i] < -tol || !local_min {
            continue;
        }
        let (t, v) = golden_section(
            |t| domain.phi(at(t)),
            ts[i.saturating_sub(1)],
            ts[(i + 1).min(n)],
        );
        if v < -tol {
            samples.push((t, v));
        }
    }
    samples.sort_by(|x, y| x.0.total_cmp(&y.0));
    samples.dedup_by(|x, y| x.0 == y.0);
    samples.into_iter().map(|(t, v)| (at(t), v)).unzip()
}

/// Minimizer of a unimodal `f` on `[lo, hi]`.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERATIONS {
        if f1 <= f2 {
            hi = x2;
            (x2, f2) = (x1, f1);
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            (x1, f1) = (x2, f2);
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

const GOLDEN_ITERATIONS: usize = 80;

/// Portion of the triangle edge `a -> b` inside the closed domain, in walk order.
///
/// Sampling always runs in lexicographic endpoint order, which makes the
/// computed roots identical for the two triangles sharing the edge.
fn edge_piece(
    a: Point,
    b: Point,
    domain: &LevelSetDomain,
    tol: f64,
    parent: usize,
) -> Result<Option<(Point, Point)>> {
    if (a.x, a.y) > (b.x, b.y) {
        return Ok(edge_piece(b, a, domain, tol, parent)?.map(|(s, t)| (t, s)));
    }
    use PointClass::*;
    let (points, values) = edge_samples(a, b, domain, tol);
    let n = points.len() - 1;
    let classes: Vec<PointClass> = values.iter().map(|&v| classify_value(v, tol)).collect();

    // maximal runs of samples in the closed domain, extended to where the
    // classification flips; a run that starts on the boundary continues an
    // edge lying along it
    // pieces within the tolerance band of a single point only touch the boundary
    let floor = (1e-14 * (b - a).norm()).max(CORNER_SNAP * tol);
    let mut pieces: Vec<(Point, Point)> = Vec::new();
    let mut i = 0;
    while i <= n {
        if classes[i] == Outside {
            i += 1;
            continue;
        }
        let (lo, mut hi) = (i, i);
        while hi < n && classes[hi + 1] != Outside {
            hi += 1;
        }
        i = hi + 1;
        let start = match classes[lo] {
            _ if lo == 0 => points[0],
            Inside => domain.segment_root(points[lo - 1], points[lo], 0.0)?,
            _ => closed_domain_limit(points[lo - 1], points[lo], domain, tol),
        };
        let end = match classes[hi] {
            _ if hi == n => points[n],
            Inside => domain.segment_root(points[hi], points[hi + 1], 0.0)?,
            _ => closed_domain_limit(points[hi + 1], points[hi], domain, tol),
        };
        if (end - start).norm() > floor {
            pieces.push((start, end));
        }
    }
    match pieces.as_slice() {
        [] => Ok(None),
        [piece] => Ok(Some(*piece)),
        _ => Err(Error::MultiComponent { triangle: parent }),
    }
}

/// Bisects between `outside` and `inside` (closed domain) for the point where
/// the classification changes; returns the closed-domain side.
fn closed_domain_limit(
    mut outside: Point,
    mut inside: Point,
    domain: &LevelSetDomain,
    tol: f64,
) -> Point {
    for _ in 0..200 {
        let mid = nalgebra::center(&outside, &inside);
        if mid == outside || mid == inside {
            break;
        }
        if domain.classify(mid, tol) == PointClass::Outside {
            outside = mid;
        } else {
            inside = mid;
        }
    }
    // along a straight boundary piece the flip is at a domain corner, smeared
    // by the tolerance band
    domain
        .corners()
        .iter()
        .copied()
        .find(|c| (c - inside).norm() <= CORNER_SNAP * tol)
        .unwrap_or(inside)
}

/// Distance, in units of the boundary tolerance, within which limits snap to corners.
const CORNER_SNAP: f64 = 1e3;

fn push_boundary_path(
    segments: &mut Vec<(Point, Point, EdgeKind)>,
    from: Point,
    to: Point,
    tri: &[Point; 3],
    domain: &LevelSetDomain,
    tol: f64,
) {
    let curved = domain.has_curved_boundary();
    let mut corners: Vec<Point> = domain
        .corners()
        .iter()
        .copied()
        .filter(|c| strictly_inside_triangle(c, tri) && domain.phi(*c).abs() <= tol)
        .collect();
    let on_boundary = |p: &Point, q: &Point| domain.phi(nalgebra::center(p, q)).abs() <= 1e3 * tol;
    let mut current = from;
    while let Some(pos) = corners.iter().position(|c| on_boundary(&current, c)) {
        let corner = corners.swap_remove(pos);
        segments.push((current, corner, EdgeKind::Boundary { curved }));
        current = corner;
    }
    segments.push((current, to, EdgeKind::Boundary { curved }));
}

fn strictly_inside_triangle(p: &Point, tri: &[Point; 3]) -> bool {
    let area = signed_area(&tri[0], &tri[1], &tri[2]);
    let eps = 1e-12 * area;
    signed_area(p, &tri[1], &tri[2]) > eps
        && signed_area(&tri[0], p, &tri[2]) > eps
        && signed_area(&tri[0], &tri[1], p) > eps
}

pub fn diameter(points: &[Point]) -> f64 {
    let mut d: f64 = 0.0;
    for (i, p) in points.iter().enumerate() {
        for q in &points[i + 1..] {
            d = d.max((p - q).norm());
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacetKind {
    Interior,
    Boundary,
}

#[derive(Debug, Clone)]
pub struct Facet {
    pub id: usize,
    pub kind: FacetKind,
    pub endpoints: (Point, Point),
    /// `(plus, minus)`; boundary facets have no minus side.
    pub neighbors: (usize, Option<usize>),
    /// Unit normal pointing out of `neighbors.0` (the chord normal for curved facets).
    pub normal: Vector,
    pub h_f: f64,
    pub curved: bool,
}

impl Facet {
    pub fn length(&self) -> f64 {
        (self.endpoints.1 - self.endpoints.0).norm()
    }

    pub fn is_boundary(&self) -> bool {
        self.kind == FacetKind::Boundary
    }
}

#[derive(Debug, Clone)]
pub struct ActiveMesh {
    pub elements: Vec<PolytopicElement>,
    pub facets: Vec<Facet>,
    pub background: BackgroundMesh,
    pub domain: LevelSetDomain,
    pub tol: f64,
}

impl ActiveMesh {
    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn total_area(&self) -> f64 {
        self.elements.iter().map(|e| e.area).sum()
    }

    pub fn interior_facets(&self) -> impl Iterator<Item = &Facet> {
        self.facets.iter().filter(|f| f.kind == FacetKind::Interior)
    }

    pub fn boundary_facets(&self) -> impl Iterator<Item = &Facet> {
        self.facets.iter().filter(|f| f.kind == FacetKind::Boundary)
    }

    /// Largest element diameter.
    pub fn h_max(&self) -> f64 {
        self.elements.iter().map(|e| e.h_k).fold(0.0, f64::max)
    }

    /// Sorted element neighbourhoods (each element plus its facet neighbours).
    pub fn element_couplings(&self) -> Vec<Vec<usize>> {
        let mut couplings: Vec<Vec<usize>> = (0..self.elements.len()).map(|k| vec![k]).collect();
        for f in self.interior_facets() {
            let (a, b) = (
                f.neighbors.0,
                f.neighbors.1.expect("interior facet has two neighbours"),
            );
            couplings[a].push(b);
            couplings[b].push(a);
        }
        for c in &mut couplings {
            c.sort_unstable();
            c.dedup();
        }
        couplings
    }

    /// Writes one line per element: `id x0 y0 x1 y1 ...`.
    pub fn write_polygons(&self, mut out: impl Write) -> Result<()> {
        writeln!(
            out,
            "# element_id x0 y0 x1 y1 ... (counterclockwise vertices)"
        )?;
        for e in &self.elements {
            write!(out, "{}", e.id)?;
            for v in &e.vertices {
                write!(out, " {:.17e} {:.17e}", v.x, v.y)?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Keeps inside triangles, clips cut ones, and builds the facet skeleton.
pub fn build_active_mesh(
    background: &BackgroundMesh,
    domain: &LevelSetDomain,
    tol: f64,
) -> Result<ActiveMesh> {
    let mut elements = Vec::new();
    let mut element_of_triangle = vec![None; background.triangles.len()];
    for t in 0..background.triangles.len() {
        let tri = background.triangle_vertices(t);
        let element = match classify_element(&tri, domain, tol) {
            ElementClass::Outside => continue,
            ElementClass::Inside => PolytopicElement::new(
                t,
                tri.to_vec(),
                vec![
                    EdgeKind::Background(0),
                    EdgeKind::Background(1),
                    EdgeKind::Background(2),
                ],
                false,
            ),
            ElementClass::Cut => match clip_element(&tri, t, domain, tol) {
                Ok(e) => e,
                Err(Error::EmptyClip { .. }) => continue,
                Err(e) => return Err(e),
            },
        };
        element_of_triangle[t] = Some(elements.len());
        elements.push(PolytopicElement {
            id: elements.len(),
            ..element
        });
    }

    // background edge -> (triangle, local edge) incidences
    let mut edge_triangles: HashMap<(usize, usize), Vec<usize>> =
        HashMap::with_capacity(3 * background.triangles.len() / 2);
    for (t, tri) in background.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            edge_triangles
                .entry((a.min(b), a.max(b)))
                .or_default()
                .push(t);
        }
    }

    let mut facets: Vec<Facet> = Vec::new();
    let mut shared: HashMap<(usize, usize), usize> = HashMap::new();
    for k in 0..elements.len() {
        let parent = elements[k].parent_triangle;
        let tri = background.triangles[parent];
        let mut ids = Vec::with_capacity(elements[k].num_edges());
        for i in 0..elements[k].num_edges() {
            let (s, t) = elements[k].edge(i);
            let outward = outward_normal(&s, &t);
            let id = match elements[k].edge_kinds[i] {
                EdgeKind::Background(local) => {
                    let (a, b) = (tri[local], tri[(local + 1) % 3]);
                    let key = (a.min(b), a.max(b));
                    let neighbor = edge_triangles[&key]
                        .iter()
                        .copied()
                        .find(|&other| other != parent)
                        .and_then(|other| element_of_triangle[other]);
                    match neighbor {
                        Some(n) if shares_edge_piece(&elements[n], background, key, &s, &t) => {
                            if let Some(&id) = shared.get(&key) {
                                id
                            } else {
                                let id = facets.len();
                                let h_f = elements[k].h_k.min(elements[n].h_k);
                                facets.push(Facet {
                                    id,
                                    kind: FacetKind::Interior,
                                    endpoints: (s, t),
                                    neighbors: (k, Some(n)),
                                    normal: outward,
                                    h_f,
                                    curved: false,
                                });
                                shared.insert(key, id);
                                id
                            }
                        }
                        _ => {
                            push_boundary_facet(&mut facets, k, &elements[k], s, t, outward, false)
                        }
                    }
                }
                EdgeKind::Boundary { curved } => {
                    push_boundary_facet(&mut facets, k, &elements[k], s, t, outward, curved)
                }
            };
            ids.push(id);
        }
        elements[k].facets = ids;
    }

    let mesh = ActiveMesh {
        elements,
        facets,
        background: background.clone(),
        domain: domain.clone(),
        tol,
    };
    audit_coverage(&mesh, &element_of_triangle)?;
    Ok(mesh)
}

fn push_boundary_facet(
    facets: &mut Vec<Facet>,
    k: usize,
    element: &PolytopicElement,
    s: Point,
    t: Point,
    normal: Vector,
    curved: bool,
) -> usize {
    let id = facets.len();
    facets.push(Facet {
        id,
        kind: FacetKind::Boundary,
        endpoints: (s, t),
        neighbors: (k, None),
        normal,
        h_f: element.h_k,
        curved,
    });
    id
}

fn shares_edge_piece(
    element: &PolytopicElement,
    background: &BackgroundMesh,
    key: (usize, usize),
    s: &Point,
    t: &Point,
) -> bool {
    let tri = background.triangles[element.parent_triangle];
    (0..element.num_edges()).any(|i| match element.edge_kinds[i] {
        EdgeKind::Background(local) => {
            let (a, b) = (tri[local], tri[(local + 1) % 3]);
            let (p, q) = element.edge(i);
            (a.min(b), a.max(b)) == key && p == *t && q == *s
        }
        EdgeKind::Boundary { .. } => false,
    })
}

fn outward_normal(s: &Point, t: &Point) -> Vector {
    let d = t - s;
    Vector::new(d.y, -d.x) / d.norm()
}

/// Every sampled point with `phi < -tol` must fall in an active parent triangle.
fn audit_coverage(mesh: &ActiveMesh, element_of_triangle: &[Option<usize>]) -> Result<()> {
    let b = mesh.domain.bounding_box();
    let n = AUDIT_SAMPLES_PER_AXIS;
    for j in 0..n {
        for i in 0..n {
            let p = Point::new(
                b.min.x + (i as f64 + 0.5) / n as f64 * b.width(),
                b.min.y + (j as f64 + 0.5) / n as f64 * b.height(),
            );
            if classify_value(mesh.domain.phi(p), mesh.tol) != PointClass::Inside {
                continue;
            }
            let covered = mesh
                .background
                .locate(&p)
                .and_then(|t| element_of_triangle[t])
                .is_some();
            if !covered {
                return Err(Error::UncoveredDomain { x: p.x, y: p.y });
            }
        }
    }
    Ok(())
}
