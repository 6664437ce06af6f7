//! Empirical checkers for the geometric claims about the two-node lattice.

use serde::Serialize;

use super::{
    bounding_rectangle, clip_to_cells, iterate_components, map_shape, segment_iterate, strip_area,
    CellAffine, ConvexPolygon, ForestError, ForestOptions, Partition2D, Point, Segment, Shape,
};
use crate::error::{CmlError, Result};
use crate::lattice::Lattice;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CenterCaptureReport {
    /// The image touches every cell of the partition.
    pub applicable: bool,
    /// `applicable` and the centre lies in the image.
    pub captured: bool,
    pub center_inside: bool,
    /// `area(T(omega) ∩ O_eps) / area(T(omega))`.
    pub ratio: f64,
    pub bound: f64,
    pub ratio_ok: bool,
}

impl CenterCaptureReport {
    /// A counterexample is an applicable case where either claim fails.
    pub fn is_counterexample(&self) -> bool {
        self.applicable && !(self.center_inside && self.ratio_ok)
    }
}

/// Maps `omega` (inside one cell) once and checks whether a full-touching image
/// captures `(1/2, 1/2)` and keeps an `eps^2 / 2` share of its area near the diagonal.
pub fn check_center_capture(omega: &ConvexPolygon, lat: &Lattice, eps: f64) -> Result<CenterCaptureReport> {
    let part = Partition2D::for_map(lat.map());
    let shape = Shape::Polygon(omega.clone());
    let cell = part
        .containing_cell(&shape)
        .ok_or_else(|| CmlError::Usage("omega must lie in a single partition cell".into()))?;
    let aff = CellAffine::for_cell(lat, &part, cell)?;
    let img = match map_shape(&shape, &aff)? {
        Shape::Polygon(p) => p,
        Shape::Segment(_) => unreachable!("polygons map to polygons"),
    };
    let clipped = clip_to_cells(&Shape::Polygon(img.clone()), &part, &Default::default())?;
    let mut touched = vec![false; part.cell_count()];
    for (c, _) in &clipped.pieces {
        touched[*c] = true;
    }
    let applicable = touched.iter().all(|&t| t);
    let center_inside = img.contains(Point::new(0.5, 0.5));
    let area = img.area();
    let ratio = if area > 0.0 { strip_area(&img, eps)? / area } else { 0.0 };
    let bound = 0.5 * eps * eps;
    Ok(CenterCaptureReport {
        applicable,
        captured: applicable && center_inside,
        center_inside,
        ratio,
        bound,
        ratio_ok: ratio >= bound,
    })
}

/// Fraction of a slope −1 segment lying outside `O_r0 = {|x1 - x2| / sqrt 2 <= r0}`.
///
/// A slope −1 segment crosses the diagonal at a right angle, so its chord inside
/// `O_r0` is at most `2 r0` long in the same Euclidean length.
pub fn segment_outside_fraction(seg: &Segment, r0: f64) -> Result<f64> {
    if !(r0 > 0.0) {
        return Err(CmlError::Usage(format!("r0 must be positive, got {r0}")));
    }
    if (seg.slope() + 1.0).abs() > 1e-9 {
        return Err(CmlError::Usage(format!("segment slope {} is not -1", seg.slope())));
    }
    let len = seg.length();
    if len < 3.0 * r0 * (1.0 - 1e-12) {
        return Err(CmlError::Usage(format!("segment length {len} is below 3 r0 = {}", 3.0 * r0)));
    }
    let (d0, d1) = (seg.p.diag_offset(), seg.q.diag_offset());
    // d(t) = d0 + t (d1 - d0); inside where |d(t)| <= r0.
    let inside = if d0 == d1 {
        if d0.abs() <= r0 {
            1.0
        } else {
            0.0
        }
    } else {
        let ta = (-r0 - d0) / (d1 - d0);
        let tb = (r0 - d0) / (d1 - d0);
        let (lo, hi) = (ta.min(tb).max(0.0), ta.max(tb).min(1.0));
        (hi - lo).max(0.0)
    };
    let frac = 1.0 - inside;
    if frac < 1.0 / 3.0 - 1e-12 {
        return Err(CmlError::Internal(format!("outside fraction {frac} fell below 1/3")));
    }
    Ok(frac)
}

/// `(2 d_l / eps) (i + 1) 2^i`.
pub fn component_growth_bound(d_l: f64, eps: f64, i: usize) -> f64 {
    2.0 * d_l / eps * (i as f64 + 1.0) * 2f64.powi(i as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub long_side: f64,
    pub eps: f64,
    pub counts: Vec<usize>,
    pub bounds: Vec<f64>,
    /// First depth whose count exceeds its bound.
    pub first_violation: Option<usize>,
}

/// Compares the forest's per-depth counts with the component-growth bound,
/// taking `d_l` as the long side of the polygon's bounding rectangle.
pub fn component_growth_check(
    poly: &ConvexPolygon,
    lat: &Lattice,
    k: usize,
    eps: f64,
    opts: &ForestOptions,
) -> std::result::Result<GrowthReport, ForestError> {
    let d_l = bounding_rectangle(poly)?.length;
    if !(eps > 0.0 && eps <= d_l) {
        return Err(CmlError::Usage(format!("eps must lie in (0, d_l = {d_l}], got {eps}")).into());
    }
    let forest = iterate_components(&Shape::Polygon(poly.clone()), lat, k, opts)?;
    let counts = forest.counts();
    let bounds: Vec<f64> = (0..counts.len()).map(|i| component_growth_bound(d_l, eps, i)).collect();
    let first_violation = counts.iter().zip(&bounds).position(|(&n, &b)| n as f64 > b);
    Ok(GrowthReport {
        long_side: d_l,
        eps,
        counts,
        bounds,
        first_violation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StripWindowReport {
    /// Window length `M = floor(log_{2(1-2c)} 3) + 1`.
    pub m: usize,
    /// Number of components meeting `O_r0` at depths `0..=M`.
    pub in_strip: Vec<usize>,
    pub max_in_strip: usize,
    pub holds: bool,
}

/// Window length for the strip-component claim; requires `2(1 - 2c) > 1`.
pub fn strip_window_length(c: f64) -> Result<usize> {
    let e = 2.0 * (1.0 - 2.0 * c);
    if !(e > 1.0) {
        return Err(CmlError::Usage(format!("need 2(1 - 2c) > 1, got {e}")));
    }
    Ok((3f64.ln() / e.ln()).floor() as usize + 1)
}

/// Follows a short slope −1 segment inside `O_r0` for `M` steps and counts the
/// components that meet `O_r0`; the claim is at most three at every depth.
/// `theta2` and `r0` are inputs and must satisfy
/// `(2(1-2c))^i theta2 < 2 r0 < 2^-i` for `i = 1..=M`.
pub fn strip_window_check(
    seg: &Segment,
    lat: &Lattice,
    r0: f64,
    theta2: f64,
    opts: &ForestOptions,
) -> std::result::Result<StripWindowReport, ForestError> {
    let c = lat.c();
    if !(c < 0.25) {
        return Err(CmlError::Usage(format!("coupling must be below 1/4, got {c}")).into());
    }
    if lat.map().slope_magnitude() != 2.0 {
        return Err(CmlError::Usage("the strip-window check is stated for slope 2".into()).into());
    }
    let m = strip_window_length(c)?;
    let e = 2.0 * (1.0 - 2.0 * c);
    for i in 1..=m {
        let lo = e.powi(i as i32) * theta2;
        let hi = 2f64.powi(-(i as i32));
        if !(lo < 2.0 * r0 && 2.0 * r0 < hi) {
            return Err(CmlError::Usage(format!(
                "constraint (2(1-2c))^{i} theta2 < 2 r0 < 2^-{i} fails: {lo} < {} < {hi}",
                2.0 * r0
            ))
            .into());
        }
    }
    if (seg.slope() + 1.0).abs() > 1e-9 {
        return Err(CmlError::Usage("segment must have slope -1".into()).into());
    }
    if seg.length() >= theta2 {
        return Err(CmlError::Usage(format!("segment length must be below theta2 = {theta2}")).into());
    }
    let t = std::f64::consts::SQRT_2 * r0;
    if [seg.p, seg.q].iter().any(|p| (p.x - p.y).abs() > t) {
        return Err(CmlError::Usage("segment must lie inside O_r0".into()).into());
    }
    let forest = segment_iterate(seg, lat, m, opts)?;
    let in_strip: Vec<usize> = forest
        .levels
        .iter()
        .map(|l| l.iter().filter(|c| c.shape.meets_strip(r0)).count())
        .collect();
    let max_in_strip = in_strip.iter().copied().max().unwrap_or(0);
    Ok(StripWindowReport {
        m,
        in_strip,
        max_in_strip,
        holds: max_in_strip <= 3,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodSetViolation {
    pub depth: usize,
    pub index: usize,
    pub offspring: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodSetReport {
    /// Small components whose offspring were counted.
    pub checked: usize,
    pub max_offspring: usize,
    pub first_violation: Option<GoodSetViolation>,
}

impl GoodSetReport {
    pub fn is_good(&self) -> bool {
        self.first_violation.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoodSetParams {
    pub d_measure: f64,
    pub delta: f64,
    pub m0: usize,
    pub a: usize,
    pub horizon: usize,
}

/// For every component up to `horizon` with measure at most `delta * d_measure`,
/// counts its components `m0` steps later and compares with `a`.
pub fn good_set_check(
    shape: &Shape,
    lat: &Lattice,
    p: &GoodSetParams,
    opts: &ForestOptions,
) -> std::result::Result<GoodSetReport, ForestError> {
    if p.m0 == 0 {
        return Err(CmlError::Usage("m0 must be at least 1".into()).into());
    }
    let part = Partition2D::for_map(lat.map());
    if part.containing_cell(shape).is_none() {
        return Err(CmlError::Usage("shape must lie in a single partition cell".into()).into());
    }
    let small = p.delta * p.d_measure;
    if shape.measure() > small {
        return Err(CmlError::Usage(format!(
            "shape measure {} exceeds delta * D = {small}",
            shape.measure()
        ))
        .into());
    }
    let forest = iterate_components(shape, lat, p.horizon + p.m0, opts)?;
    let mut report = GoodSetReport {
        checked: 0,
        max_offspring: 0,
        first_violation: None,
    };
    for d in 0..=p.horizon {
        let mut offspring = vec![0usize; forest.levels[d].len()];
        for a in forest.ancestors(d, p.m0) {
            offspring[a] += 1;
        }
        for (i, comp) in forest.levels[d].iter().enumerate() {
            if comp.measure() > small {
                continue;
            }
            report.checked += 1;
            report.max_offspring = report.max_offspring.max(offspring[i]);
            if offspring[i] > p.a && report.first_violation.is_none() {
                report.first_violation = Some(GoodSetViolation {
                    depth: d,
                    index: i,
                    offspring: offspring[i],
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::MapKind;
    use approx::assert_relative_eq;

    #[test]
    fn capture_applies_when_image_touches_all_cells() {
        let lat = Lattice::two_node(MapKind::Doubling2, 0.1).unwrap();
        // Image of the cell corner square around (0.25, 0.25) covers the centre.
        let om = ConvexPolygon::rect(0.2, 0.3, 0.2, 0.3).unwrap();
        let r = check_center_capture(&om, &lat, 0.1).unwrap();
        assert!(r.applicable && r.captured && r.ratio_ok);

        let small = ConvexPolygon::rect(0.1, 0.12, 0.1, 0.12).unwrap();
        let r = check_center_capture(&small, &lat, 0.1).unwrap();
        assert!(!r.applicable && !r.captured);

        let straddle = ConvexPolygon::rect(0.4, 0.6, 0.1, 0.2).unwrap();
        assert!(check_center_capture(&straddle, &lat, 0.1).is_err());
    }

    #[test]
    fn outside_fraction_examples() {
        let r0 = 0.01;
        let far = Segment::new(Point::new(0.1, 0.9), Point::new(0.2, 0.8)).unwrap();
        assert_eq!(segment_outside_fraction(&far, r0).unwrap(), 1.0);
        let h = 1.5 * r0 / std::f64::consts::SQRT_2;
        let centred = Segment::new(Point::new(0.5 - h, 0.5 + h), Point::new(0.5 + h, 0.5 - h)).unwrap();
        assert_relative_eq!(segment_outside_fraction(&centred, r0).unwrap(), 1.0 / 3.0, max_relative = 1e-9);
        let short = Segment::new(Point::new(0.5, 0.5), Point::new(0.501, 0.499)).unwrap();
        assert!(segment_outside_fraction(&short, r0).is_err());
    }

    #[test]
    fn window_length() {
        assert_eq!(strip_window_length(0.2).unwrap(), 7);
        assert!(strip_window_length(0.3).is_err());
    }

    #[test]
    fn growth_bound_value() {
        assert_eq!(component_growth_bound(0.01, 0.01, 0), 2.0);
        assert_eq!(component_growth_bound(0.01, 0.005, 2), 4.0 * 3.0 * 4.0);
    }

    #[test]
    fn one_cell_orbit_is_trivially_good() {
        // Near the fixed corner (0, 0) a tiny square stays in cell 0 for many steps.
        let lat = Lattice::two_node(MapKind::Doubling2, 0.1).unwrap();
        let s = Shape::Polygon(ConvexPolygon::rect(1e-6, 2e-6, 1e-6, 2e-6).unwrap());
        let p = GoodSetParams {
            d_measure: 1.0,
            delta: 0.25,
            m0: 3,
            a: 1,
            horizon: 5,
        };
        let r = good_set_check(&s, &lat, &p, &ForestOptions::default()).unwrap();
        assert!(r.is_good());
        assert_eq!(r.checked, 6);
        assert_eq!(r.max_offspring, 1);
    }
}
