//! Standalone SVG plots drawn from tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::table::Table;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;
const PALETTE: [&str; 7] = ["#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const BELOW: &str = "#1f77b4";
const ABOVE: &str = "#d62728";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PlotError {
    #[error("empty plot: {0}")]
    Empty(String),
    #[error("column '{0}' is not in the table")]
    MissingColumn(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlotKind {
    /// Polylines, one per value of `group`; with a threshold, segments above it get a second colour.
    Line {
        group: Option<String>,
        threshold: Option<f64>,
        log_y: bool,
    },
    /// Markers, optionally with the least-squares line.
    Scatter { fit: bool },
    /// Filled cells centred on `(x, y)`, shaded by `value`.
    Heatmap { value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x: String,
    pub y: String,
    pub kind: PlotKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<Fit> {
    let n = xs.len() as f64;
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(Fit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn numeric(t: &Table, col: &str) -> Result<Vec<Option<f64>>, PlotError> {
    let cells = t.cells(col).ok_or_else(|| PlotError::MissingColumn(col.to_string()))?;
    Ok(cells.map(|c| c.as_f64().filter(|v| v.is_finite())).collect())
}

/// Tick positions covering `[lo, hi]` at a 1-2-5 step.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.0e}");
    }
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.04 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
    log_y: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let y = if self.log_y { y.log10() } else { y };
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn new(xs: &[f64], ys: &[f64], extra_y: Option<f64>, log_y: bool) -> Self {
        let fold = |v: &mut dyn Iterator<Item = f64>| v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        let x = fold(&mut xs.iter().copied());
        let tr = |v: f64| if log_y { v.log10() } else { v };
        let y = fold(&mut ys.iter().copied().chain(extra_y).map(tr));
        Frame {
            x: padded(x.0, x.1),
            y: padded(y.0, y.1),
            log_y,
        }
    }

    fn axes(&self, out: &mut String, spec: &PlotSpec) {
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{y1}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
            x1 - x0,
            y0 - y1
        );
        for t in ticks(self.x.0, self.x.1) {
            let p = self.px(t);
            let _ = writeln!(
                out,
                r##"<line x1="{p:.2}" y1="{y0}" x2="{p:.2}" y2="{:.2}" stroke="#444"/><text x="{p:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"##,
                y0 + 5.0,
                y0 + 18.0,
                label(t)
            );
        }
        let yt = if self.log_y {
            let (a, b) = (self.y.0.ceil() as i32, self.y.1.floor() as i32);
            (a..=b).map(|e| (e as f64, format!("1e{e}"))).collect::<Vec<_>>()
        } else {
            ticks(self.y.0, self.y.1).into_iter().map(|t| (t, label(t))).collect()
        };
        for (t, text) in yt {
            let p = HEIGHT - BOTTOM - (t - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{p:.2}" x2="{x0}" y2="{p:.2}" stroke="#444"/><text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{text}</text>"##,
                x0 - 5.0,
                x0 - 8.0,
                p + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 12.0,
            esc(&spec.x)
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(&spec.y)
        );
    }
}

fn header(spec: &PlotSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        esc(&spec.title)
    );
    out
}

fn marker(out: &mut String, x: f64, y: f64, color: &str) {
    let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
}

fn polyline(out: &mut String, pts: &[(f64, f64)], color: &str) {
    let mut s = String::new();
    for (i, (x, y)) in pts.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    let _ = writeln!(out, r#"<polyline points="{s}" fill="none" stroke="{color}" stroke-width="1.2"/>"#);
}

/// Renders `table` according to `spec`.
pub fn emit_svg(table: &Table, spec: &PlotSpec) -> Result<String, PlotError> {
    if table.is_empty() {
        return Err(PlotError::Empty(format!("'{}' has no rows", spec.title)));
    }
    let xs = numeric(table, &spec.x)?;
    let ys = numeric(table, &spec.y)?;
    match &spec.kind {
        PlotKind::Line { group, threshold, log_y } => {
            let groups: Vec<String> = match group {
                Some(g) => table
                    .cells(g)
                    .ok_or_else(|| PlotError::MissingColumn(g.clone()))?
                    .map(|c| c.to_string())
                    .collect(),
                None => vec![String::new(); table.rows.len()],
            };
            line_plot(spec, &xs, &ys, &groups, *threshold, *log_y)
        }
        PlotKind::Scatter { fit } => scatter_plot(spec, &xs, &ys, *fit),
        PlotKind::Heatmap { value } => heatmap(spec, &xs, &ys, &numeric(table, value)?),
    }
}

fn pairs(xs: &[Option<f64>], ys: &[Option<f64>], log_y: bool) -> Vec<(usize, f64, f64)> {
    xs.iter()
        .zip(ys)
        .enumerate()
        .filter_map(|(i, (x, y))| Some((i, (*x)?, (*y)?)))
        .filter(|(_, _, y)| !log_y || *y > 0.0)
        .collect()
}

fn line_plot(
    spec: &PlotSpec,
    xs: &[Option<f64>],
    ys: &[Option<f64>],
    groups: &[String],
    threshold: Option<f64>,
    log_y: bool,
) -> Result<String, PlotError> {
    let pts = pairs(xs, ys, log_y);
    if pts.is_empty() {
        return Err(PlotError::Empty(format!("no plottable points in '{}'", spec.title)));
    }
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for &(i, x, y) in &pts {
        let g = groups[i].as_str();
        if !series.contains_key(g) {
            order.push(g);
        }
        series.entry(g).or_default().push((x, y));
    }
    let all_x: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let all_y: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let frame = Frame::new(&all_x, &all_y, threshold.filter(|t| !log_y || *t > 0.0), log_y);
    let mut out = header(spec);
    frame.axes(&mut out, spec);

    for (k, g) in order.iter().enumerate() {
        let s = &series[g];
        let base = PALETTE[k % PALETTE.len()];
        let screen: Vec<(f64, f64)> = s.iter().map(|&(x, y)| (frame.px(x), frame.py(y))).collect();
        let _ = writeln!(out, r#"<g class="series" data-name="{}">"#, esc(g));
        if screen.len() == 1 {
            let color = match threshold {
                Some(t) if s[0].1 > t => ABOVE,
                Some(_) => BELOW,
                None => base,
            };
            marker(&mut out, screen[0].0, screen[0].1, color);
        } else if let Some(t) = threshold.filter(|_| order.len() == 1) {
            // Each segment takes the colour of its right endpoint; runs of one colour share a polyline.
            let mut start = 0;
            for i in 1..screen.len() {
                let above = s[i].1 > t;
                let next_differs = i + 1 < screen.len() && (s[i + 1].1 > t) != above;
                if next_differs || i + 1 == screen.len() {
                    polyline(&mut out, &screen[start..=i], if above { ABOVE } else { BELOW });
                    start = i;
                }
            }
        } else {
            polyline(&mut out, &screen, base);
        }
        let _ = writeln!(out, "</g>");
    }
    if let Some(t) = threshold.filter(|t| !log_y || *t > 0.0) {
        let y = frame.py(t);
        let _ = writeln!(
            out,
            r##"<line class="threshold" data-value="{t:?}" x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#555" stroke-dasharray="5,4"/>"##,
            WIDTH - RIGHT
        );
    }
    if order.len() > 1 {
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="64" height="{:.2}" fill="white" fill-opacity="0.85" stroke="#bbb"/>"##,
            WIDTH - RIGHT - 74.0,
            TOP + 2.0,
            15.0 * order.len() as f64 + 4.0
        );
        for (k, g) in order.iter().enumerate() {
            let y = TOP + 14.0 + 15.0 * k as f64;
            let x = WIDTH - RIGHT - 70.0;
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#,
                y - 4.0,
                x + 16.0,
                y - 4.0,
                PALETTE[k % PALETTE.len()],
                x + 20.0,
                y,
                esc(g)
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn scatter_plot(spec: &PlotSpec, xs: &[Option<f64>], ys: &[Option<f64>], fit: bool) -> Result<String, PlotError> {
    let pts = pairs(xs, ys, false);
    if pts.is_empty() {
        return Err(PlotError::Empty(format!("no plottable points in '{}'", spec.title)));
    }
    let x: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
    let line = if fit { least_squares(&x, &y) } else { None };
    let frame = Frame::new(&x, &y, None, false);
    let mut out = header(spec);
    frame.axes(&mut out, spec);
    if let Some(f) = line {
        let (a, b) = frame.x;
        let _ = writeln!(
            out,
            r##"<g class="fit" data-slope="{:?}" data-intercept="{:?}" data-r2="{:?}">"##,
            f.slope, f.intercept, f.r2
        );
        // Clip the fitted line to the frame by sampling it across the x range.
        let seg: Vec<(f64, f64)> = (0..=64)
            .map(|i| a + (b - a) * i as f64 / 64.0)
            .map(|v| (v, f.intercept + f.slope * v))
            .filter(|&(_, w)| w >= frame.y.0 && w <= frame.y.1)
            .map(|(v, w)| (frame.px(v), frame.py(w)))
            .collect();
        if seg.len() > 1 {
            polyline(&mut out, &seg, ABOVE);
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="12">y = {} + {} x, R² = {:.4}</text>"#,
            LEFT + 10.0,
            TOP + 18.0,
            label(f.intercept),
            label(f.slope),
            f.r2
        );
        let _ = writeln!(out, "</g>");
    }
    for (px, py) in x.iter().zip(&y) {
        marker(&mut out, frame.px(*px), frame.py(*py), BELOW);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn min_gap(v: &[f64]) -> Option<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s.windows(2).map(|w| w[1] - w[0]).reduce(f64::min)
}

fn heatmap(spec: &PlotSpec, xs: &[Option<f64>], ys: &[Option<f64>], vs: &[Option<f64>]) -> Result<String, PlotError> {
    let cells: Vec<(f64, f64, f64)> = xs
        .iter()
        .zip(ys)
        .zip(vs)
        .filter_map(|((x, y), v)| Some(((*x)?, (*y)?, (*v)?)))
        .collect();
    if cells.is_empty() {
        return Err(PlotError::Empty(format!("no plottable cells in '{}'", spec.title)));
    }
    let x: Vec<f64> = cells.iter().map(|c| c.0).collect();
    let y: Vec<f64> = cells.iter().map(|c| c.1).collect();
    let wx = min_gap(&x).unwrap_or(1.0);
    let wy = min_gap(&y).unwrap_or(1.0);
    let lo_x = x.iter().copied().fold(f64::INFINITY, f64::min) - wx / 2.0;
    let hi_x = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) + wx / 2.0;
    let lo_y = y.iter().copied().fold(f64::INFINITY, f64::min) - wy / 2.0;
    let hi_y = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) + wy / 2.0;
    let frame = Frame {
        x: (lo_x, hi_x),
        y: (lo_y, hi_y),
        log_y: false,
    };
    let vmax = cells.iter().map(|c| c.2).fold(0.0, f64::max);
    let mut out = header(spec);
    out.push_str("<g shape-rendering=\"crispEdges\">\n");
    for &(cx, cy, v) in &cells {
        let t = if vmax > 0.0 { (v / vmax).clamp(0.0, 1.0) } else { 0.0 };
        // White to dark blue.
        let r = (255.0 * (1.0 - 0.9 * t)) as u8;
        let g = (255.0 * (1.0 - 0.7 * t)) as u8;
        let b = (255.0 * (1.0 - 0.35 * t)) as u8;
        let (x0, x1) = (frame.px(cx - wx / 2.0), frame.px(cx + wx / 2.0));
        let (y0, y1) = (frame.py(cy + wy / 2.0), frame.py(cy - wy / 2.0));
        let _ = writeln!(
            out,
            r##"<rect x="{x0:.2}" y="{y0:.2}" width="{:.2}" height="{:.2}" fill="#{r:02x}{g:02x}{b:02x}"/>"##,
            x1 - x0,
            y1 - y0
        );
    }
    out.push_str("</g>\n");
    frame.axes(&mut out, spec);
    out.push_str("</svg>\n");
    Ok(out)
}
