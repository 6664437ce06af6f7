//! One runner per experiment. Each turns a resolved config into a result bundle.

use cml_core::diagnostics::*;
use cml_core::geometry::*;
use cml_core::lattice::{transverse_stability, OrbitOptions};
use cml_core::lemma_calc::*;
use cml_core::precision::{Arithmetic, BigArith, F64Arith};
use cml_core::rng::{stream_rng, uniform_state};
use cml_core::{CouplingTopology, Lattice, MapKind, PiecewiseLinearMap, PrecisionMode, State, TopologyKind};
use rayon::prelude::*;
use serde_json::json;

use crate::config::*;
use crate::svg::{least_squares, PlotKind, PlotSpec};
use crate::table::{Cell, Table};
use crate::{CliError, ResultBundle};

/// Evaluates `$body` with `$ar` bound to the arithmetic selected by `$mode`.
macro_rules! with_arith {
    ($mode:expr, $ar:ident => $body:expr) => {
        match $mode {
            PrecisionMode::F64 => {
                let $ar = F64Arith;
                $body
            }
            PrecisionMode::Big { bits } => {
                let $ar = BigArith::new(bits);
                $body
            }
        }
    };
}

fn line(title: String, x: &str, y: &str, threshold: Option<f64>, log_y: bool) -> PlotSpec {
    PlotSpec {
        title,
        x: x.into(),
        y: y.into(),
        kind: PlotKind::Line {
            group: None,
            threshold,
            log_y,
        },
    }
}

/// Fills in values the runner would otherwise draw implicitly, so the echo pins them.
pub fn resolve(cfg: &mut ExperimentConfig) -> Result<(), CliError> {
    if let Params::RunOrbit(p) = &mut cfg.params {
        if p.initial.is_none() {
            let n = cfg.lattice.as_ref().map_or(2, |l| l.n.unwrap_or(2));
            p.initial = Some(uniform_state(&mut stream_rng(cfg.seed, 0), n));
        }
    }
    Ok(())
}

pub fn run_orbit(cfg: &ExperimentConfig, p: &RunOrbitParams) -> Result<ResultBundle, CliError> {
    let lat = cfg.lattice().build()?;
    let initial = p.initial.clone().ok_or_else(|| CliError::Config("initial state unresolved".into()))?;
    let s0 = State::new(initial)?;
    if s0.dim() != lat.n() {
        return Err(CliError::Config(format!(
            "initial state has {} coordinates, lattice has {} nodes",
            s0.dim(),
            lat.n()
        )));
    }
    let opts = OrbitOptions {
        steps: p.steps,
        sample_every: p.sample_every,
        metric: cfg.metric,
        record_itinerary: p.record_itinerary,
        seed: Some(cfg.seed),
        dither_seed: p.dither.then_some(cfg.seed),
    };
    let rec = with_arith!(cfg.precision, ar => lat.orbit_with(ar, &s0, &opts))?;

    let mut cols = vec!["step".to_string(), "distance".into(), "above_threshold".into()];
    cols.extend((1..=lat.n()).map(|i| format!("x{i}")));
    if p.record_itinerary {
        cols.push("cells".into());
    }
    let mut table = Table::new(&cols);
    for (s, &step) in rec.states.iter().zip(&rec.sample_steps) {
        let d = rec.distances[step];
        let mut row: Vec<Cell> = vec![step.into(), d.into(), (d > p.threshold).into()];
        row.extend(s.x.iter().map(|&v| Cell::Num(v)));
        if let Some(it) = &rec.itinerary {
            row.push(match step {
                0 => Cell::Empty,
                t => it[t - 1].iter().map(|c| c.to_string()).collect::<Vec<_>>().join("-").into(),
            });
        }
        table.push(row);
    }

    let above = rec.distances.iter().filter(|&&d| d > p.threshold).count();
    let (par, perp) = lyapunov_analytic(lat.map().slope_magnitude(), lat.c());
    let results = json!({
        "final_distance": rec.distances.last(),
        "min_distance": rec.distances.iter().copied().fold(f64::INFINITY, f64::min),
        "max_distance": rec.distances.iter().copied().fold(0.0, f64::max),
        "fraction_above_threshold": above as f64 / rec.distances.len() as f64,
        "lyapunov_parallel": par,
        "lyapunov_transverse": perp,
    });
    Ok(ResultBundle::new(
        table,
        results,
        Some(line(
            format!("{} c = {}: distance to the diagonal", lat.map().kind(), lat.c()),
            "step",
            "distance",
            Some(p.threshold),
            false,
        )),
    ))
}

/// Mean distance to the diagonal over steps `[w0, w1)` of a dithered orbit.
fn window_mean<A: Arithmetic>(
    ar: A,
    lat: &Lattice,
    s0: &State,
    dither: Option<u64>,
    w: [usize; 2],
    metric: DistanceMetric,
) -> cml_core::Result<f64> {
    let mut st = lat.stepper(ar);
    if let Some(d) = dither {
        st.enable_dither(d);
    }
    let mut x: Vec<A::Num> = s0.x.iter().map(|&v| st.ar.from_f64(v)).collect();
    let mut sum = 0.0;
    for t in 0..w[1] {
        if t > 0 {
            st.step_in_place(&mut x)?;
        }
        if t >= w[0] {
            sum += diagonal_distance_num(&st.ar, &x, metric);
        }
    }
    Ok(sum / (w[1] - w[0]) as f64)
}

pub fn sweep(cfg: &ExperimentConfig, p: &SweepParams) -> Result<ResultBundle, CliError> {
    if p.c_values.is_empty() || p.trials == 0 {
        return Err(CliError::Config("sweep needs at least one coupling and one trial".into()));
    }
    if p.window[0] > p.window[1] {
        return Err(CliError::Config("window start exceeds its end".into()));
    }
    p.regime.validate()?;
    let spec = cfg.lattice();
    let lats = p.c_values.iter().map(|&c| spec.build_at(c)).collect::<Result<Vec<_>, _>>()?;
    let n = lats[0].n();
    let use_window = p.window[1] > p.window[0];

    let jobs: Vec<(usize, usize)> = (0..lats.len()).flat_map(|i| (0..p.trials).map(move |t| (i, t))).collect();
    let runs = jobs
        .par_iter()
        .map(|&(i, trial)| {
            let lat = &lats[i];
            let s0 = State::new(uniform_state(&mut stream_rng(cfg.seed, trial as u64), n))?;
            let rp = RegimeParams {
                dither_seed: p.regime.dither_seed.map(|d| d.wrapping_add(trial as u64)),
                ..p.regime
            };
            let v = with_arith!(cfg.precision, ar => classify_regime_with(ar, lat, &s0, &rp, cfg.metric))?;
            let w = if use_window {
                Some(with_arith!(cfg.precision, ar => window_mean(ar, lat, &s0, rp.dither_seed, p.window, cfg.metric))?)
            } else {
                None
            };
            Ok::<_, cml_core::CmlError>((i, trial, v, w))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut table = Table::new(&[
        "c",
        "regime",
        "synchronized",
        "intermittent",
        "undetermined",
        "min_alternations",
        "max_final_distance",
        "window_distance",
        "transverse_stable",
    ]);
    let mut trials_json = Vec::new();
    for (i, &c) in p.c_values.iter().enumerate() {
        let rs: Vec<_> = runs.iter().filter(|r| r.0 == i).collect();
        let count = |g: Regime| rs.iter().filter(|r| r.2.regime == g).count();
        let first = rs[0].2.regime;
        let regime = if rs.iter().all(|r| r.2.regime == first) { first.as_str() } else { "mixed" };
        let window = use_window.then(|| rs.iter().map(|r| r.3.unwrap_or(0.0)).sum::<f64>() / rs.len() as f64);
        table.push(vec![
            c.into(),
            regime.into(),
            count(Regime::Synchronized).into(),
            count(Regime::Intermittent).into(),
            count(Regime::Undetermined).into(),
            rs.iter().map(|r| r.2.evidence.alternations).min().unwrap_or(0).into(),
            rs.iter().map(|r| r.2.evidence.final_distance).fold(0.0, f64::max).into(),
            window.into(),
            rs[0].2.evidence.transverse_stable.into(),
        ]);
        for r in rs {
            trials_json.push(json!({
                "c": c,
                "trial": r.1,
                "regime": r.2.regime,
                "evidence": r.2.evidence,
                "window_distance": r.3,
            }));
        }
    }
    let y = if use_window { "window_distance" } else { "max_final_distance" };
    let title = format!("{} {} n = {}: {y} against coupling", spec.map, spec.topology, n);
    Ok(ResultBundle::new(table, json!({ "trials": trials_json }), Some(line(title, "c", y, None, false))))
}

pub fn escape(cfg: &ExperimentConfig, p: &EscapeParamsConfig) -> Result<ResultBundle, CliError> {
    if p.c_values.is_empty() {
        return Err(CliError::Config("escape-time needs at least one coupling".into()));
    }
    let spec = cfg.lattice();
    let slope = PiecewiseLinearMap::standard(spec.map).slope_magnitude();
    let cstar = critical_coupling(slope)?;
    let mut table = Table::new(&["c", "inv_gap", "trials", "excluded", "mean_steps", "stddev", "theoretical"]);
    let mut stats = Vec::new();
    for (i, &c) in p.c_values.iter().enumerate() {
        if c == cstar {
            return Err(CliError::Config(format!("c = {c} is the critical coupling")));
        }
        let lat = spec.build_at(c)?;
        let ep = EscapeParams {
            inner: p.inner,
            outer: p.outer,
            trials: p.trials,
            seed: cfg.seed.wrapping_add(i as u64),
            precision: cfg.precision,
            step_cap: p.step_cap,
        };
        let s = escape_time_with(&lat, &ep)?;
        if s.excluded > 0 {
            log::warn!("c = {c}: {} trials did not escape within {} steps", s.excluded, p.step_cap);
        }
        table.push(vec![
            c.into(),
            (1.0 / (c - cstar).abs()).into(),
            s.trials.into(),
            s.excluded.into(),
            (s.trials > 0).then_some(s.mean_steps).into(),
            (s.trials > 0).then_some(s.stddev).into(),
            s.theoretical.into(),
        ]);
        stats.push(s);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = stats
        .iter()
        .filter(|s| s.trials > 0)
        .map(|s| (1.0 / (s.c - cstar).abs(), s.mean_steps))
        .unzip();
    let fit = least_squares(&xs, &ys);
    let results = json!({
        "critical_coupling": cstar,
        "stats": stats,
        "fit": fit.map(|f| json!({ "slope": f.slope, "intercept": f.intercept, "r2": f.r2 })),
    });
    let plot = PlotSpec {
        title: format!("{}: mean escape time against 1/|c - {cstar}|", spec.map),
        x: "inv_gap".into(),
        y: "mean_steps".into(),
        kind: PlotKind::Scatter { fit: true },
    };
    Ok(ResultBundle::new(table, results, Some(plot)))
}

fn point(v: [f64; 2]) -> Point {
    Point::new(v[0], v[1])
}

pub fn geometry(cfg: &ExperimentConfig, p: &GeometryParams) -> Result<ResultBundle, CliError> {
    let lat = cfg.lattice().build()?;
    if lat.topology().kind() != TopologyKind::TwoNode {
        return Err(CliError::Config("geometry-trace needs the two_node topology".into()));
    }
    if let Some(eps) = p.strip_eps {
        if !(eps > 0.0) {
            return Err(CliError::Config("strip_eps must be positive".into()));
        }
    }
    let shape = match &p.shape {
        ShapeSpec::Polygon { vertices } => Shape::Polygon(ConvexPolygon::new(vertices.iter().copied().map(point).collect())?),
        ShapeSpec::Segment { p, q } => Shape::Segment(Segment::new(point(*p), point(*q))?),
    };
    let opts = ForestOptions {
        cap: p.cap,
        sliver: SliverPolicy {
            min_area: p.sliver_area,
            min_length: p.sliver_length,
        },
    };
    let (forest, aborted) = match iterate_components(&shape, &lat, p.depth, &opts) {
        Ok(f) => (f, None),
        Err(ForestError::CapExceeded { partial, .. }) => {
            let msg = format!(
                "component cap {} exceeded at depth {}; depths 0..={} kept",
                p.cap,
                partial.max_depth() + 1,
                partial.max_depth()
            );
            (*partial, Some(msg))
        }
        Err(ForestError::Cml(e)) => return Err(e.into()),
    };

    let mut cols = vec!["depth", "count", "total_measure", "growth", "dropped_measure", "dropped_count"];
    if p.strip_eps.is_some() {
        cols.push("in_strip");
    }
    let mut table = Table::new(&cols);
    let summary = forest.summary();
    for (d, s) in summary.iter().enumerate() {
        let growth = (d > 0).then(|| s.total_measure / summary[d - 1].total_measure);
        let mut row: Vec<Cell> = vec![
            s.depth.into(),
            s.count.into(),
            s.total_measure.into(),
            growth.into(),
            s.dropped_measure.into(),
            s.dropped_count.into(),
        ];
        if let Some(eps) = p.strip_eps {
            row.push(forest.levels[d].iter().filter(|c| c.shape.meets_strip(eps)).count().into());
        }
        table.push(row);
    }

    let mut jsonl = String::new();
    for r in forest.records() {
        jsonl.push_str(&serde_json::to_string(&r).expect("record serializes"));
        jsonl.push('\n');
    }
    let k = lat.map().slope_magnitude();
    let per_step = match shape {
        Shape::Polygon(_) => json!(k * k * (1.0 - 2.0 * lat.c()).abs()),
        Shape::Segment(_) => json!([k * (1.0 - 2.0 * lat.c()).abs(), k]),
    };
    let results = json!({
        "cells_per_axis": forest.cells_per_axis,
        "cell_numbering": Partition2D::for_map(lat.map()).numbering(),
        "measure_growth_per_step": per_step,
        "depths": summary,
        "aborted": aborted,
    });
    let title = format!("{} c = {}: components per depth", lat.map().kind(), lat.c());
    let mut b = ResultBundle::new(table, results, Some(line(title, "depth", "count", None, true)));
    b.extra.push(("components.jsonl".into(), jsonl));
    b.partial = aborted;
    Ok(b)
}

pub fn lemma(p: &LemmaParamsConfig) -> Result<ResultBundle, CliError> {
    let slope = PiecewiseLinearMap::standard(p.map).slope_magnitude();
    let batch = p.is_batch();
    let mut cols = vec![
        "set_kind", "c", "a", "m0", "delta1", "mu", "e_plus", "e_minus", "mu_upper", "d", "F", "N0", "n0_clamped", "c1",
        "corollary_bound",
    ];
    if p.measure_ratio.is_some() {
        cols.push("k");
    }
    cols.push("status");
    let mut table = Table::new(&cols);
    let mut single = None;
    let mut feasible = 0;
    for kind in p.set_kind.values() {
        for c in p.c.values() {
            for a in p.a.values() {
                for m0 in p.m0.values() {
                    for delta1 in p.delta1.values() {
                        for mu in p.mu.values() {
                            let lp = LemmaParams { a, m0, delta1, mu };
                            let outcome = expansion_rates(slope, c, kind).and_then(|rates| {
                                let rep = iterative_constants(&rates, &lp)?;
                                let k = p.measure_ratio.map(|r| k_of_n(r, &rates, delta1)).transpose()?;
                                Ok((rep, k))
                            });
                            let kind_name = match kind {
                                SetKind::Measurable => "measurable",
                                SetKind::Curve => "curve",
                            };
                            let mut row: Vec<Cell> =
                                vec![kind_name.into(), c.into(), a.into(), m0.into(), delta1.into(), mu.into()];
                            match outcome {
                                Ok((rep, k)) => {
                                    feasible += 1;
                                    row.extend([
                                        rep.rates.e_plus.into(),
                                        rep.rates.e_minus.into(),
                                        rep.mu_upper.into(),
                                        rep.d.into(),
                                        rep.f.into(),
                                        rep.n0.into(),
                                        rep.n0_clamped.into(),
                                        rep.c1.into(),
                                        rep.corollary_bound.into(),
                                    ]);
                                    if p.measure_ratio.is_some() {
                                        row.push(k.into());
                                    }
                                    row.push("ok".into());
                                    single = Some(json!({ "report": rep, "k": k }));
                                }
                                Err(e) if batch => {
                                    row.extend((0..9).map(|_| Cell::Empty));
                                    if p.measure_ratio.is_some() {
                                        row.push(Cell::Empty);
                                    }
                                    row.push(e.to_string().into());
                                }
                                Err(e) => return Err(e.into()),
                            }
                            table.push(row);
                        }
                    }
                }
            }
        }
    }
    let results = if batch {
        json!({ "rows": table.rows.len(), "feasible": feasible })
    } else {
        single.expect("single mode returns early on error")
    };
    let plot = (feasible > 0).then(|| PlotSpec {
        title: format!("{}: N0 against mu", p.map),
        x: "mu".into(),
        y: "N0".into(),
        kind: PlotKind::Scatter { fit: false },
    });
    Ok(ResultBundle::new(table, results, plot))
}

pub fn density(cfg: &ExperimentConfig, p: &DensityParams) -> Result<ResultBundle, CliError> {
    let lat = cfg.lattice().build()?;
    if p.runs == 0 {
        return Err(CliError::Config("density needs at least one run".into()));
    }
    let mode = match p.mode {
        DensityMode::Auto if lat.c() == 0.0 && lat.map().kind() == MapKind::Doubling2 => DensityMode::Ensemble,
        DensityMode::Auto => DensityMode::Orbit,
        m => m,
    };
    let hists = (0..p.runs)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            match mode {
                DensityMode::Ensemble => ensemble_density(
                    &lat,
                    &EnsembleOptions {
                        orbits: p.orbits,
                        length: p.length,
                        bins: p.bins,
                        bits: p.bits,
                        seed,
                    },
                ),
                _ => {
                    let s0 = State::new(uniform_state(&mut stream_rng(cfg.seed, i as u64), lat.n()))?;
                    let opts = DensityOptions {
                        steps: p.steps,
                        burn_in: p.burn_in,
                        bins: p.bins,
                        dither_seed: Some(seed),
                    };
                    with_arith!(cfg.precision, ar => empirical_density_with(ar, &lat, &s0, &opts))
                }
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let bins = p.bins;
    let mut cols: Vec<String> = ["j1", "j2", "x1", "x2"].iter().map(|s| s.to_string()).collect();
    cols.extend((0..p.runs).map(|i| format!("density_{i}")));
    let mut table = Table::new(&cols);
    let scale = (bins * bins) as f64;
    for j2 in 0..bins {
        for j1 in 0..bins {
            let mut row: Vec<Cell> = vec![
                j1.into(),
                j2.into(),
                ((j1 as f64 + 0.5) / bins as f64).into(),
                ((j2 as f64 + 0.5) / bins as f64).into(),
            ];
            row.extend(hists.iter().map(|h| Cell::Num(h.count(j1, j2) as f64 / h.total.max(1) as f64 * scale)));
            table.push(row);
        }
    }
    let mut pairwise = Vec::new();
    for i in 0..hists.len() {
        for j in i + 1..hists.len() {
            pairwise.push(json!({ "runs": [i, j], "l1": density_distance(&hists[i], &hists[j])? }));
        }
    }
    let runs: Vec<_> = hists
        .iter()
        .map(|h| {
            json!({
                "total": h.total,
                "distance_to_uniform": h.distance_to_uniform(),
                "diagonal_mass": h.diagonal_mass(),
                "near_diagonal_mass": h.near_diagonal_mass(),
            })
        })
        .collect();
    let mode_name = match mode {
        DensityMode::Ensemble => "ensemble",
        _ => "orbit",
    };
    let results = json!({ "mode": mode_name, "runs": runs, "pairwise_l1": pairwise });
    let plot = PlotSpec {
        title: format!("{} c = {}: occupation density (run 0)", lat.map().kind(), lat.c()),
        x: "x1".into(),
        y: "x2".into(),
        kind: PlotKind::Heatmap { value: "density_0".into() },
    };
    Ok(ResultBundle::new(table, results, Some(plot)))
}

pub fn stability(p: &StabilityParams) -> Result<ResultBundle, CliError> {
    if p.n_values.is_empty() {
        return Err(CliError::Config("stability needs at least one n".into()));
    }
    let slope = PiecewiseLinearMap::standard(p.map).slope_magnitude();
    let mut table = Table::new(&["topology", "n", "c", "max_transverse", "sync_possible"]);
    let mut per_n = Vec::new();
    for &n in &p.n_values {
        let topo = CouplingTopology::new(p.topology, n)?;
        let max = topo.max_coupling();
        if !(p.c_step > 0.0 && p.c_step < max) {
            return Err(CliError::Config(format!("c_step must lie in (0, {max}) for n = {n}")));
        }
        let mut window: Option<(f64, f64)> = None;
        let mut points = 0;
        let mut stable = 0;
        // Grid points as k / m when the step is 1/m, so they print as written.
        let m = (1.0 / p.c_step).round();
        let exact = ((1.0 / p.c_step) - m).abs() < 1e-9;
        for k in 1.. {
            let c = if exact { k as f64 / m } else { k as f64 * p.c_step };
            // Open interval: stop short of the maximal coupling.
            if c >= max - 1e-12 {
                break;
            }
            let r = transverse_stability(topo, c, slope)?;
            points += 1;
            if r.sync_possible {
                stable += 1;
                window = Some(window.map_or((c, c), |(lo, _)| (lo, c)));
            }
            table.push(vec![
                p.topology.as_str().into(),
                n.into(),
                c.into(),
                r.max_transverse.into(),
                r.sync_possible.into(),
            ]);
        }
        per_n.push(json!({
            "n": n,
            "max_coupling": max,
            "points": points,
            "sync_points": stable,
            "stable_range": window.map(|(lo, hi)| [lo, hi]),
        }));
    }
    let plot = PlotSpec {
        title: format!("{} {}: largest transverse multiplier", p.map, p.topology),
        x: "c".into(),
        y: "max_transverse".into(),
        kind: PlotKind::Line {
            group: Some("n".into()),
            threshold: Some(1.0),
            log_y: false,
        },
    };
    Ok(ResultBundle::new(table, json!({ "per_n": per_n }), Some(plot)))
}
