//! Planar geometry for the two-node lattice: convex polygons and segments in
//! `[0, 1]^2`, their decomposition into partition cells, and their images
//! under the cell-wise affine branches of `T`.
//!
//! Cells are numbered row-major from the bottom-left: the cell with column
//! `j1` (along `x1`) and row `j2` (along `x2`) has index `j2 * k + j1`.

mod checks;
mod forest;

pub use checks::*;
pub use forest::*;

use rand::Rng;
use robust::{orient2d, Coord};
use serde::{Deserialize, Serialize};

use crate::error::{CmlError, Result};
use crate::lattice::{Lattice, TopologyKind};
use crate::maps::{Branch, PiecewiseLinearMap};

/// Polygons below this area are dropped as slivers by default.
pub const DEFAULT_SLIVER_AREA: f64 = 1e-15;
/// Segments below this length are dropped as slivers by default.
pub const DEFAULT_SLIVER_LENGTH: f64 = 1e-12;
/// Slack used when checking that mapped vertices stay inside the unit square.
const UNIT_SQUARE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    fn coord(self) -> Coord<f64> {
        Coord { x: self.x, y: self.y }
    }

    pub fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn lerp(self, o: Point, t: f64) -> Point {
        Point::new(self.x + t * (o.x - self.x), self.y + t * (o.y - self.y))
    }

    /// Signed distance to the diagonal, `(x1 - x2) / sqrt 2`.
    pub fn diag_offset(self) -> f64 {
        (self.x - self.y) / std::f64::consts::SQRT_2
    }
}

/// Exact sign of the turn `a -> b -> c` (positive for counterclockwise).
pub fn orient(a: Point, b: Point, c: Point) -> f64 {
    orient2d(a.coord(), b.coord(), c.coord())
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Shoelace area taken relative to the first vertex (positive for counterclockwise order).
fn signed_area(v: &[Point]) -> f64 {
    if v.len() < 3 {
        return 0.0;
    }
    let o = v[0];
    let mut s = 0.0;
    for w in v[1..].windows(2) {
        s += cross(o, w[0], w[1]);
    }
    0.5 * s
}

/// Convex polygon with counterclockwise vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

impl ConvexPolygon {
    /// Accepts either orientation; clockwise input is reversed.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        dedup_ring(&mut vertices);
        if vertices.len() < 3 {
            return Err(CmlError::Domain("a polygon needs at least 3 distinct vertices".into()));
        }
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        let p = ConvexPolygon { vertices };
        if !p.is_convex() {
            return Err(CmlError::Domain("vertices do not form a convex polygon".into()));
        }
        Ok(p)
    }

    fn from_ccw_unchecked(vertices: Vec<Point>) -> Self {
        ConvexPolygon { vertices }
    }

    pub fn rect(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        ConvexPolygon::new(vec![
            Point::new(x0, y0),
            Point::new(x1, y0),
            Point::new(x1, y1),
            Point::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices).abs()
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        let (sx, sy) = self
            .vertices
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p.x, b + p.y));
        Point::new(sx / n, sy / n)
    }

    /// Every turn is left or straight, up to a relative tolerance.
    pub fn is_convex(&self) -> bool {
        let v = &self.vertices;
        let n = v.len();
        let scale = self.diameter_bound().powi(2);
        (0..n).all(|i| {
            let (a, b, c) = (v[i], v[(i + 1) % n], v[(i + 2) % n]);
            orient(a, b, c) >= -1e-12 * scale
        })
    }

    fn diameter_bound(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi.x - lo.x).hypot(hi.y - lo.y)
    }

    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Closed containment using exact orientation tests.
    pub fn contains(&self, p: Point) -> bool {
        let v = &self.vertices;
        let n = v.len();
        (0..n).all(|i| orient(v[i], v[(i + 1) % n], p) >= 0.0)
    }
}

fn dedup_ring(v: &mut Vec<Point>) {
    v.dedup();
    while v.len() > 1 && v.first() == v.last() {
        v.pop();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub p: Point,
    pub q: Point,
}

impl Segment {
    pub fn new(p: Point, q: Point) -> Result<Self> {
        if p == q {
            return Err(CmlError::Domain("segment endpoints coincide".into()));
        }
        Ok(Segment { p, q })
    }

    pub fn length(&self) -> f64 {
        self.p.dist(self.q)
    }

    /// `dx2 / dx1`; infinite for vertical segments.
    pub fn slope(&self) -> f64 {
        let dx = self.q.x - self.p.x;
        let dy = self.q.y - self.p.y;
        if dx == 0.0 {
            f64::INFINITY
        } else {
            dy / dx
        }
    }

    pub fn midpoint(&self) -> Point {
        self.p.lerp(self.q, 0.5)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Polygon(ConvexPolygon),
    Segment(Segment),
}

impl Shape {
    /// Area for polygons, length for segments.
    pub fn measure(&self) -> f64 {
        match self {
            Shape::Polygon(p) => p.area(),
            Shape::Segment(s) => s.length(),
        }
    }

    pub fn points(&self) -> Vec<Point> {
        match self {
            Shape::Polygon(p) => p.vertices().to_vec(),
            Shape::Segment(s) => vec![s.p, s.q],
        }
    }

    /// Range of `x1 - x2` over the shape.
    pub fn diag_range(&self) -> (f64, f64) {
        self.points()
            .iter()
            .map(|p| p.x - p.y)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
    }

    /// Whether the shape meets `O_eps = {|x1 - x2| / sqrt 2 <= eps}`.
    pub fn meets_strip(&self, eps: f64) -> bool {
        let t = std::f64::consts::SQRT_2 * eps;
        let (lo, hi) = self.diag_range();
        lo <= t && hi >= -t
    }

    fn in_unit_square(&self) -> bool {
        self.points()
            .iter()
            .all(|p| (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y))
    }
}

/// Tiling of `[0, 1]^2` by the products of the branch intervals of a map.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition2D {
    bounds: Vec<f64>,
    branches: Vec<Branch>,
}

impl Partition2D {
    pub fn for_map(map: &PiecewiseLinearMap) -> Self {
        let mut bounds = vec![0.0];
        bounds.extend(map.cuts());
        bounds.push(1.0);
        Partition2D {
            bounds,
            branches: map.branches().to_vec(),
        }
    }

    /// Cells per axis.
    pub fn k(&self) -> usize {
        self.bounds.len() - 1
    }

    /// Interior breakpoints.
    pub fn cuts(&self) -> &[f64] {
        &self.bounds[1..self.bounds.len() - 1]
    }

    pub fn cell_count(&self) -> usize {
        self.k() * self.k()
    }

    pub fn cell_index(&self, j1: usize, j2: usize) -> usize {
        j2 * self.k() + j1
    }

    pub fn cell_coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.k(), cell / self.k())
    }

    pub fn interval(&self, j: usize) -> (f64, f64) {
        (self.bounds[j], self.bounds[j + 1])
    }

    /// Closed bounds `(x1 range, x2 range)` of a cell.
    pub fn cell_bounds(&self, cell: usize) -> ((f64, f64), (f64, f64)) {
        let (j1, j2) = self.cell_coords(cell);
        (self.interval(j1), self.interval(j2))
    }

    /// Cell of a point under the map's endpoint conventions.
    pub fn locate(&self, p: Point) -> Result<usize> {
        let find = |v: f64| {
            self.branches
                .iter()
                .position(|b| b.contains(v))
                .ok_or_else(|| CmlError::Domain(format!("coordinate {v} outside [0, 1]")))
        };
        Ok(self.cell_index(find(p.x)?, find(p.y)?))
    }

    pub fn in_closed_cell(&self, cell: usize, p: Point) -> bool {
        let ((x0, x1), (y0, y1)) = self.cell_bounds(cell);
        p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1
    }

    /// The single closed cell holding the whole shape, if any.
    pub fn containing_cell(&self, shape: &Shape) -> Option<usize> {
        let pts = shape.points();
        let c = pts.iter().fold(Point::new(0.0, 0.0), |a, p| {
            Point::new(a.x + p.x, a.y + p.y)
        });
        let centre = Point::new(c.x / pts.len() as f64, c.y / pts.len() as f64);
        let cell = self.locate(centre).ok()?;
        pts.iter()
            .all(|&p| self.in_closed_cell(cell, p))
            .then_some(cell)
    }

    /// Human-readable description of the cell numbering.
    pub fn numbering(&self) -> String {
        format!(
            "row-major from bottom-left: index = j2 * {k} + j1, j1 along x1, j2 along x2",
            k = self.k()
        )
    }
}

/// Sliver thresholds for clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliverPolicy {
    pub min_area: f64,
    pub min_length: f64,
}

impl Default for SliverPolicy {
    fn default() -> Self {
        SliverPolicy {
            min_area: DEFAULT_SLIVER_AREA,
            min_length: DEFAULT_SLIVER_LENGTH,
        }
    }
}

/// Pieces of a shape, one per cell it meets, plus the measure dropped as slivers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipResult {
    pub pieces: Vec<(usize, Shape)>,
    pub dropped_measure: f64,
    pub dropped_count: usize,
}

/// Keeps the part of a polygon on the side of an axis-parallel line given by `keep`.
fn clip_axis(v: &[Point], axis_x: bool, at: f64, keep_below: bool) -> Vec<Point> {
    let coord = |p: &Point| if axis_x { p.x } else { p.y };
    let inside = |p: &Point| {
        if keep_below {
            coord(p) <= at
        } else {
            coord(p) >= at
        }
    };
    let n = v.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let a = v[i];
        let b = v[(i + 1) % n];
        let (ia, ib) = (inside(&a), inside(&b));
        if ia {
            out.push(a);
        }
        if ia != ib {
            let t = (at - coord(&a)) / (coord(&b) - coord(&a));
            let mut p = a.lerp(b, t);
            // Place the crossing exactly on the cut.
            if axis_x {
                p.x = at;
            } else {
                p.y = at;
            }
            out.push(p);
        }
    }
    out
}

/// Keeps the part of a polygon left of (or on) the directed line `a -> b`.
pub(crate) fn clip_half_plane(v: &[Point], a: Point, b: Point) -> Vec<Point> {
    let n = v.len();
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let p = v[i];
        let q = v[(i + 1) % n];
        let sp = orient(a, b, p);
        let sq = orient(a, b, q);
        if sp >= 0.0 {
            out.push(p);
        }
        if (sp >= 0.0) != (sq >= 0.0) {
            out.push(p.lerp(q, sp / (sp - sq)));
        }
    }
    out
}

fn finish_piece(mut v: Vec<Point>, min_area: f64) -> (Option<ConvexPolygon>, f64) {
    dedup_ring(&mut v);
    let area = signed_area(&v).abs();
    if v.len() < 3 || area < min_area {
        return (None, area);
    }
    (Some(ConvexPolygon::from_ccw_unchecked(v)), area)
}

/// Splits a polygon or segment along the partition's cut lines.
pub fn clip_to_cells(shape: &Shape, partition: &Partition2D, policy: &SliverPolicy) -> Result<ClipResult> {
    if !shape.in_unit_square() {
        return Err(CmlError::Usage("shape is not contained in [0, 1]^2".into()));
    }
    match shape {
        Shape::Polygon(p) => Ok(clip_polygon(p, partition, policy.min_area)),
        Shape::Segment(s) => Ok(clip_segment(s, partition, policy.min_length)),
    }
}

fn overlapping(bounds: &[f64], lo: f64, hi: f64) -> impl Iterator<Item = usize> + '_ {
    (0..bounds.len() - 1).filter(move |&j| bounds[j] <= hi && bounds[j + 1] >= lo)
}

fn clip_polygon(poly: &ConvexPolygon, part: &Partition2D, min_area: f64) -> ClipResult {
    let (lo, hi) = poly.bbox();
    let mut res = ClipResult {
        pieces: Vec::new(),
        dropped_measure: 0.0,
        dropped_count: 0,
    };
    for j1 in overlapping(&part.bounds, lo.x, hi.x) {
        let (x0, x1) = part.interval(j1);
        let mut col = poly.vertices().to_vec();
        if lo.x < x0 {
            col = clip_axis(&col, true, x0, false);
        }
        if hi.x > x1 {
            col = clip_axis(&col, true, x1, true);
        }
        if col.len() < 3 {
            continue;
        }
        for j2 in overlapping(&part.bounds, lo.y, hi.y) {
            let (y0, y1) = part.interval(j2);
            let mut cell = col.clone();
            if lo.y < y0 {
                cell = clip_axis(&cell, false, y0, false);
            }
            if hi.y > y1 {
                cell = clip_axis(&cell, false, y1, true);
            }
            if cell.is_empty() {
                continue;
            }
            match finish_piece(cell, min_area) {
                (Some(p), _) => res.pieces.push((part.cell_index(j1, j2), Shape::Polygon(p))),
                (None, a) => {
                    if a > 0.0 {
                        res.dropped_measure += a;
                        res.dropped_count += 1;
                    }
                }
            }
        }
    }
    res
}

fn clip_segment(seg: &Segment, part: &Partition2D, min_length: f64) -> ClipResult {
    let (p, q) = (seg.p, seg.q);
    let mut ts = vec![0.0, 1.0];
    for &cut in part.cuts() {
        for (a, b) in [(p.x, q.x), (p.y, q.y)] {
            if (a < cut && cut < b) || (b < cut && cut < a) {
                ts.push((cut - a) / (b - a));
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    let point_at = |t: f64| {
        let mut r = p.lerp(q, t);
        // Snap crossings onto the cut they were computed from.
        for &cut in part.cuts() {
            if (r.x - cut).abs() <= 4.0 * f64::EPSILON {
                r.x = cut;
            }
            if (r.y - cut).abs() <= 4.0 * f64::EPSILON {
                r.y = cut;
            }
        }
        r
    };
    let mut res = ClipResult {
        pieces: Vec::new(),
        dropped_measure: 0.0,
        dropped_count: 0,
    };
    for w in ts.windows(2) {
        let a = if w[0] == 0.0 { p } else { point_at(w[0]) };
        let b = if w[1] == 1.0 { q } else { point_at(w[1]) };
        let len = a.dist(b);
        if len < min_length || a == b {
            if len > 0.0 {
                res.dropped_measure += len;
                res.dropped_count += 1;
            }
            continue;
        }
        let cell = part
            .locate(a.lerp(b, 0.5))
            .expect("segment inside the unit square");
        res.pieces.push((cell, Shape::Segment(Segment { p: a, q: b })));
    }
    res
}

/// The affine map `T` restricted to one cell: `z -> m z + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellAffine {
    pub m: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl CellAffine {
    pub fn for_cell(lat: &Lattice, partition: &Partition2D, cell: usize) -> Result<Self> {
        if lat.topology().kind() != TopologyKind::TwoNode {
            return Err(CmlError::Usage("geometry is defined for the two-node lattice".into()));
        }
        let (j1, j2) = partition.cell_coords(cell);
        let br = lat.map().branches();
        let (b1, b2) = (br[j1], br[j2]);
        let mix = lat.mix();
        let (a, b, c, d) = (mix[(0, 0)], mix[(0, 1)], mix[(1, 0)], mix[(1, 1)]);
        Ok(CellAffine {
            m: [[a * b1.slope, b * b2.slope], [c * b1.slope, d * b2.slope]],
            t: [
                a * b1.intercept + b * b2.intercept,
                c * b1.intercept + d * b2.intercept,
            ],
        })
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.m[0][0] * p.x + self.m[0][1] * p.y + self.t[0],
            self.m[1][0] * p.x + self.m[1][1] * p.y + self.t[1],
        )
    }
}

fn snap_unit(p: Point) -> Result<Point> {
    let fix = |v: f64| {
        if (0.0..=1.0).contains(&v) {
            Ok(v)
        } else if v >= -UNIT_SQUARE_TOL && v < 0.0 {
            Ok(0.0)
        } else if v > 1.0 && v <= 1.0 + UNIT_SQUARE_TOL {
            Ok(1.0)
        } else {
            Err(CmlError::Internal(format!("mapped vertex coordinate {v} left [0, 1]")))
        }
    };
    Ok(Point::new(fix(p.x)?, fix(p.y)?))
}

/// Image of a component under the affine branch of its cell.
pub fn map_component(comp: &Component, lat: &Lattice) -> Result<Shape> {
    let part = Partition2D::for_map(lat.map());
    let aff = CellAffine::for_cell(lat, &part, comp.cell)?;
    map_shape(&comp.shape, &aff)
}

pub(crate) fn map_shape(shape: &Shape, aff: &CellAffine) -> Result<Shape> {
    match shape {
        Shape::Polygon(p) => {
            let mut v = p
                .vertices()
                .iter()
                .map(|&q| snap_unit(aff.apply(q)))
                .collect::<Result<Vec<_>>>()?;
            if aff.det() < 0.0 {
                v.reverse();
            }
            dedup_ring(&mut v);
            Ok(Shape::Polygon(ConvexPolygon::from_ccw_unchecked(v)))
        }
        Shape::Segment(s) => Ok(Shape::Segment(Segment {
            p: snap_unit(aff.apply(s.p))?,
            q: snap_unit(aff.apply(s.q))?,
        })),
    }
}

/// Slope of the image of a line of slope `k` under the two-node coupling.
pub fn slope_transform(k: f64, c: f64) -> f64 {
    if k.is_infinite() {
        return if c == 0.0 { f64::INFINITY } else { (1.0 - c) / c };
    }
    let den = (1.0 - c) + c * k;
    if den == 0.0 {
        return f64::INFINITY;
    }
    (c + (1.0 - c) * k) / den
}

/// Rectangle aligned with a polygon's diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundingRect {
    pub center: Point,
    /// Unit vector along the long side.
    pub axis: Point,
    pub length: f64,
    pub width: f64,
}

impl BoundingRect {
    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    pub fn corners(&self) -> [Point; 4] {
        let (u, n) = (self.axis, Point::new(-self.axis.y, self.axis.x));
        let (hl, hw) = (self.length / 2.0, self.width / 2.0);
        let at = |a: f64, b: f64| {
            Point::new(
                self.center.x + a * u.x + b * n.x,
                self.center.y + a * u.y + b * n.y,
            )
        };
        [at(-hl, -hw), at(hl, -hw), at(hl, hw), at(-hl, hw)]
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let (u, n) = (self.axis, Point::new(-self.axis.y, self.axis.x));
        let d = Point::new(p.x - self.center.x, p.y - self.center.y);
        let a = d.x * u.x + d.y * u.y;
        let b = d.x * n.x + d.y * n.y;
        a.abs() <= self.length / 2.0 + tol && b.abs() <= self.width / 2.0 + tol
    }
}

/// Farthest vertex pair of a convex polygon by rotating calipers.
pub fn diameter_pair(poly: &ConvexPolygon) -> (Point, Point) {
    let v = poly.vertices();
    let n = v.len();
    let mut best = (v[0], v[1], v[0].dist(v[1]));
    let mut j = 1;
    for i in 0..n {
        let ni = (i + 1) % n;
        while cross(v[i], v[ni], v[(j + 1) % n]).abs() > cross(v[i], v[ni], v[j]).abs() {
            j = (j + 1) % n;
        }
        for (a, b) in [(v[i], v[j]), (v[ni], v[j])] {
            let d = a.dist(b);
            if d > best.2 {
                best = (a, b, d);
            }
        }
    }
    (best.0, best.1)
}

/// Rectangle with long side parallel to the polygon's diameter and of the same
/// length, containing the polygon. Checks `area(rect) / 2 <= area(poly) <= area(rect)`.
pub fn bounding_rectangle(poly: &ConvexPolygon) -> Result<BoundingRect> {
    let (a, b) = diameter_pair(poly);
    let length = a.dist(b);
    let u = Point::new((b.x - a.x) / length, (b.y - a.y) / length);
    let n = Point::new(-u.y, u.x);
    let (mut lo_u, mut hi_u, mut lo_n, mut hi_n) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in poly.vertices() {
        let pu = p.x * u.x + p.y * u.y;
        let pn = p.x * n.x + p.y * n.y;
        lo_u = lo_u.min(pu);
        hi_u = hi_u.max(pu);
        lo_n = lo_n.min(pn);
        hi_n = hi_n.max(pn);
    }
    let (mu, mn) = ((lo_u + hi_u) / 2.0, (lo_n + hi_n) / 2.0);
    let rect = BoundingRect {
        center: Point::new(mu * u.x + mn * n.x, mu * u.y + mn * n.y),
        axis: u,
        length,
        width: hi_n - lo_n,
    };
    let (ra, pa) = (rect.area(), poly.area());
    // Shoelace error scales with the squared coordinate size, not the area.
    let tol = 1e-9 * ra + 64.0 * f64::EPSILON * length * length;
    if !(0.5 * ra <= pa + tol && pa <= ra + tol) {
        return Err(CmlError::Internal(format!(
            "rectangle sandwich failed: rect area {ra}, polygon area {pa}"
        )));
    }
    Ok(rect)
}

/// Area of `poly ∩ O_eps` with `O_eps = {|x1 - x2| <= sqrt 2 * eps}`.
pub fn strip_area(poly: &ConvexPolygon, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(CmlError::Usage(format!("strip half-width must be positive, got {eps}")));
    }
    Ok(strip_clip(poly, std::f64::consts::SQRT_2 * eps)
        .map(|v| signed_area(&v).abs())
        .unwrap_or(0.0))
}

/// `poly ∩ {|x1 - x2| <= t}`; `None` when empty.
fn strip_clip(poly: &ConvexPolygon, t: f64) -> Option<Vec<Point>> {
    // x1 - x2 <= t: left of the upward line through (0, -t) and (t, 0).
    // x1 - x2 >= -t: left of the downward line through (0, t) and (-t, 0).
    let (a1, b1, a2, b2) = if t > 0.0 {
        (Point::new(0.0, -t), Point::new(t, 0.0), Point::new(0.0, t), Point::new(-t, 0.0))
    } else {
        (Point::new(0.0, 0.0), Point::new(1.0, 1.0), Point::new(1.0, 1.0), Point::new(0.0, 0.0))
    };
    let v = clip_half_plane(poly.vertices(), a1, b1);
    if v.len() < 3 {
        return None;
    }
    let v = clip_half_plane(&v, a2, b2);
    (v.len() >= 3).then_some(v)
}

/// Random convex polygon: hull of `n` uniform points in the given box.
pub fn random_convex_polygon<R: Rng>(
    rng: &mut R,
    (x0, x1): (f64, f64),
    (y0, y1): (f64, f64),
    n: usize,
) -> ConvexPolygon {
    loop {
        let pts: Vec<Point> = (0..n.max(3))
            .map(|_| {
                Point::new(
                    x0 + (x1 - x0) * rng.random::<f64>(),
                    y0 + (y1 - y0) * rng.random::<f64>(),
                )
            })
            .collect();
        let hull = convex_hull(pts);
        if hull.len() >= 3 && signed_area(&hull) > 0.0 {
            return ConvexPolygon::from_ccw_unchecked(hull);
        }
    }
}

/// Counterclockwise convex hull (monotone chain), collinear points dropped.
pub fn convex_hull(mut pts: Vec<Point>) -> Vec<Point> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && orient(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::MapKind;
    use crate::rng::stream_rng;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn part(kind: MapKind) -> Partition2D {
        Partition2D::for_map(&PiecewiseLinearMap::standard(kind))
    }

    fn square(a: f64, b: f64) -> Shape {
        Shape::Polygon(ConvexPolygon::rect(a, b, a, b).unwrap())
    }

    #[test]
    fn partition_numbering() {
        let p = part(MapKind::Triple3);
        assert_eq!(p.k(), 3);
        assert_eq!(p.cell_index(2, 1), 5);
        assert_eq!(p.cell_coords(5), (2, 1));
        assert_eq!(p.locate(Point::new(0.1, 0.9)).unwrap(), 6);
        let d = part(MapKind::Doubling2);
        assert_eq!(d.locate(Point::new(0.5, 0.2)).unwrap(), 1);
    }

    #[test]
    fn polygon_orientation_and_convexity() {
        let cw = vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ];
        let p = ConvexPolygon::new(cw).unwrap();
        assert!(signed_area(p.vertices()) > 0.0);
        assert_eq!(p.area(), 1.0);
        let dart = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.2, 0.2),
            Point::new(0.0, 1.0),
        ];
        assert!(ConvexPolygon::new(dart).is_err());
    }

    #[test]
    fn clip_examples() {
        let pol = SliverPolicy::default();
        let d = part(MapKind::Doubling2);
        let r = clip_to_cells(&square(0.1, 0.2), &d, &pol).unwrap();
        assert_eq!(r.pieces.len(), 1);
        assert_eq!(r.pieces[0].0, 0);

        let r = clip_to_cells(&square(0.4, 0.6), &d, &pol).unwrap();
        assert_eq!(r.pieces.len(), 4);
        let total: f64 = r.pieces.iter().map(|(_, s)| s.measure()).sum();
        assert_relative_eq!(total, 0.04, max_relative = 1e-12);

        let seg = Shape::Segment(Segment::new(Point::new(0.3, 0.7), Point::new(0.7, 0.3)).unwrap());
        let r = clip_to_cells(&seg, &d, &pol).unwrap();
        assert_eq!(r.pieces.len(), 2);
        let ends: Vec<Point> = r
            .pieces
            .iter()
            .flat_map(|(_, s)| s.points())
            .collect();
        assert!(ends.contains(&Point::new(0.5, 0.5)));
    }

    #[test]
    fn clip_rejects_shapes_outside_unit_square() {
        let s = Shape::Polygon(ConvexPolygon::rect(0.5, 1.5, 0.0, 1.0).unwrap());
        assert!(matches!(
            clip_to_cells(&s, &part(MapKind::Doubling2), &SliverPolicy::default()),
            Err(CmlError::Usage(_))
        ));
    }

    #[test]
    fn map_component_examples() {
        let lat = Lattice::two_node(MapKind::Doubling2, 0.1).unwrap();
        let comp = Component::root(square(0.0, 0.25), 0);
        let img = map_component(&comp, &lat).unwrap();
        assert_relative_eq!(img.measure(), 0.2, max_relative = 1e-12);

        let diag = Shape::Segment(Segment::new(Point::new(0.1, 0.1), Point::new(0.3, 0.3)).unwrap());
        match map_component(&Component::root(diag, 0), &lat).unwrap() {
            Shape::Segment(s) => {
                assert_eq!(s.p.x, s.p.y);
                assert_eq!(s.q.x, s.q.y);
            }
            _ => unreachable!(),
        }

        let lat0 = Lattice::two_node(MapKind::Doubling2, 0.0).unwrap();
        let img = map_component(&Component::root(square(0.0, 0.5), 0), &lat0).unwrap();
        let (lo, hi) = match &img {
            Shape::Polygon(p) => p.bbox(),
            _ => unreachable!(),
        };
        assert_eq!((lo, hi), (Point::new(0.0, 0.0), Point::new(1.0, 1.0)));
    }

    #[test]
    fn slope_transform_examples() {
        for c in [0.0, 0.1, 0.25, 0.4] {
            assert_eq!(slope_transform(1.0, c), 1.0);
            assert_eq!(slope_transform(-1.0, c), -1.0);
        }
        assert_abs_diff_eq!(slope_transform(0.0, 0.2), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(slope_transform(f64::INFINITY, 0.2), 4.0, epsilon = 1e-15);
        assert_eq!(slope_transform(-4.0, 0.2), f64::INFINITY);
    }

    #[test]
    fn bounding_rectangle_examples() {
        let r = ConvexPolygon::rect(0.1, 0.5, 0.2, 0.3).unwrap();
        let b = bounding_rectangle(&r).unwrap();
        assert_relative_eq!(b.length, (0.4f64).hypot(0.1), max_relative = 1e-12);
        for &v in r.vertices() {
            assert!(b.contains(v, 1e-12));
        }

        let h = 3f64.sqrt() / 2.0;
        let tri = ConvexPolygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.5, h),
        ])
        .unwrap();
        let b = bounding_rectangle(&tri).unwrap();
        assert_relative_eq!(b.length, 1.0, max_relative = 1e-12);
        assert_relative_eq!(b.width, h, max_relative = 1e-12);

        let thin = ConvexPolygon::new(vec![
            Point::new(0.1, 0.1),
            Point::new(0.9, 0.9),
            Point::new(0.9, 0.9 + 1e-13),
        ])
        .unwrap();
        let b = bounding_rectangle(&thin).unwrap();
        assert!(b.width < 1e-12);
    }

    #[test]
    fn calipers_match_brute_force() {
        let mut rng = stream_rng(3, 0);
        for _ in 0..500 {
            let p = random_convex_polygon(&mut rng, (0.0, 1.0), (0.0, 1.0), 12);
            let v = p.vertices();
            let mut best: f64 = 0.0;
            for a in v {
                for b in v {
                    best = best.max(a.dist(*b));
                }
            }
            let (a, b) = diameter_pair(&p);
            assert_relative_eq!(a.dist(b), best, max_relative = 1e-12);
        }
    }

    #[test]
    fn strip_area_examples() {
        let unit = ConvexPolygon::rect(0.0, 1.0, 0.0, 1.0).unwrap();
        assert_relative_eq!(strip_area(&unit, 1.0).unwrap(), 1.0, max_relative = 1e-12);
        for t in [0.1, 0.25, 0.5, 0.9] {
            let eps = t / std::f64::consts::SQRT_2;
            let want = 1.0 - (1.0 - t) * (1.0 - t);
            assert_relative_eq!(strip_area(&unit, eps).unwrap(), want, max_relative = 1e-12);
        }
        let far = ConvexPolygon::rect(0.0, 0.1, 0.8, 0.9).unwrap();
        assert_eq!(strip_area(&far, 0.1).unwrap(), 0.0);
        assert!(strip_area(&far, 0.0).is_err());
    }
}
