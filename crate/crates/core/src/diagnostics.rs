//! Synchronization diagnostics: distance to the diagonal, regime
//! classification, Lyapunov exponents, escape times and occupation histograms.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CmlError, Result};
use crate::lattice::{transverse_stability, Lattice, State, TopologyKind};
use crate::precision::{Arithmetic, BigArith, F64Arith, PrecisionMode};
use crate::rng::{stream_rng, uniform_num};

/// Trials that have not escaped after this many steps are excluded.
pub const ESCAPE_STEP_CAP: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// `max_i x_i - min_i x_i`; equals `|x1 - x2|` for two nodes.
    #[default]
    PairwiseMax,
    /// Euclidean distance to the diagonal line.
    EuclideanToDiagonal,
}

impl DistanceMetric {
    pub fn as_str(&self) -> &'static str {
        match self {
            DistanceMetric::PairwiseMax => "pairwise_max",
            DistanceMetric::EuclideanToDiagonal => "euclidean_to_diagonal",
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DistanceMetric {
    type Err = CmlError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise_max" => Ok(DistanceMetric::PairwiseMax),
            "euclidean_to_diagonal" => Ok(DistanceMetric::EuclideanToDiagonal),
            _ => Err(CmlError::Config(format!("unknown distance metric '{s}'"))),
        }
    }
}

pub fn diagonal_distance(s: &State, metric: DistanceMetric) -> f64 {
    diagonal_distance_num(&F64Arith, &s.x, metric)
}

/// Distance to the diagonal evaluated in the working arithmetic, so tiny
/// offsets are not lost to cancellation before conversion.
pub fn diagonal_distance_num<A: Arithmetic>(ar: &A, x: &[A::Num], metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::PairwiseMax => {
            let mut lo = &x[0];
            let mut hi = &x[0];
            for v in &x[1..] {
                if ar.cmp(v, lo).is_lt() {
                    lo = v;
                }
                if ar.cmp(v, hi).is_gt() {
                    hi = v;
                }
            }
            ar.to_f64(&ar.sub(hi, lo))
        }
        DistanceMetric::EuclideanToDiagonal => {
            let sum = x[1..].iter().fold(x[0].clone(), |a, v| ar.add(&a, v));
            let mean = ar.mul(&sum, &ar.ratio(1, x.len() as i64));
            let ss = x.iter().fold(ar.zero(), |a, v| {
                let d = ar.sub(v, &mean);
                ar.add(&a, &ar.mul(&d, &d))
            });
            ar.to_f64(&ss).max(0.0).sqrt()
        }
    }
}

/// `(ln k, ln |k (1 - 2c)|)`; the second entry is `-inf` at `c = 1/2`.
pub fn lyapunov_analytic(slope_magnitude: f64, c: f64) -> (f64, f64) {
    let perp = (slope_magnitude * (1.0 - 2.0 * c)).abs();
    let lambda_perp = if perp == 0.0 {
        f64::NEG_INFINITY
    } else {
        perp.ln()
    };
    (slope_magnitude.ln(), lambda_perp)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Time averages of `ln |f'(x_1)|` and `ln |(1 - 2c) f'(x_1)|` along an orbit.
pub fn lyapunov_empirical(lat: &Lattice, s0: &State, steps: usize) -> Result<(f64, f64)> {
    if lat.topology().kind() != TopologyKind::TwoNode {
        return Err(CmlError::Usage(
            "empirical Lyapunov exponents are defined for the two-node lattice".into(),
        ));
    }
    if steps == 0 {
        return Err(CmlError::Usage("need at least one step".into()));
    }
    let factor = (1.0 - 2.0 * lat.c()).abs();
    let mut par = CompensatedSum::default();
    let mut perp = CompensatedSum::default();
    let mut st = lat.stepper(F64Arith);
    let mut x = s0.x.clone();
    for _ in 0..steps {
        let d = lat.map().derivative(x[0])?.abs();
        par.add(d.ln());
        perp.add((factor * d).ln());
        st.step_in_place(&mut x)?;
    }
    let n = steps as f64;
    let out = (par.value() / n, perp.value() / n);
    let (a_par, a_perp) = lyapunov_analytic(lat.map().slope_magnitude(), lat.c());
    debug_assert!((out.0 - a_par).abs() <= 1e-12);
    debug_assert!(out.1 == a_perp || (out.1 - a_perp).abs() <= 1e-12);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeParams {
    pub eps_enter: f64,
    pub r0: f64,
    pub sync_tol: f64,
    pub transient: usize,
    pub horizon: usize,
    pub min_alternations: usize,
    /// Seed of the diagonal dither (see [`crate::lattice`]); `None` steps exactly.
    pub dither_seed: Option<u64>,
}

impl Default for RegimeParams {
    fn default() -> Self {
        RegimeParams {
            eps_enter: 1e-3,
            r0: 0.05,
            sync_tol: 1e-12,
            transient: 1_000,
            horizon: 1_000_000,
            min_alternations: 5,
            dither_seed: Some(0),
        }
    }
}

/// Number of trailing steps that must stay under `sync_tol`.
pub const SYNC_TAIL: usize = 100;

impl RegimeParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.eps_enter && self.eps_enter < self.r0 && self.r0 < 1.0) {
            return Err(CmlError::Config(format!(
                "regime thresholds need 0 < eps_enter < r0 < 1 (got {} and {})",
                self.eps_enter, self.r0
            )));
        }
        if !(self.sync_tol < self.eps_enter) {
            return Err(CmlError::Config("sync_tol must be below eps_enter".into()));
        }
        if self.horizon < SYNC_TAIL || self.transient >= self.horizon {
            return Err(CmlError::Config(format!(
                "horizon must be at least {SYNC_TAIL} and exceed the transient"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Synchronized,
    Intermittent,
    Undetermined,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Synchronized => "synchronized",
            Regime::Intermittent => "intermittent",
            Regime::Undetermined => "undetermined",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeEvidence {
    /// Completed (enter, exit) cycles after the transient.
    pub alternations: usize,
    /// Entries into the `eps_enter` neighbourhood after the transient.
    pub entries: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub final_distance: f64,
    pub tail_synchronized: bool,
    pub transverse_stable: bool,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeVerdict {
    pub regime: Regime,
    pub evidence: RegimeEvidence,
}

pub fn classify_regime(
    lat: &Lattice,
    s0: &State,
    p: &RegimeParams,
    metric: DistanceMetric,
) -> Result<RegimeVerdict> {
    classify_regime_with(F64Arith, lat, s0, p, metric)
}

pub fn classify_regime_with<A: Arithmetic>(
    ar: A,
    lat: &Lattice,
    s0: &State,
    p: &RegimeParams,
    metric: DistanceMetric,
) -> Result<RegimeVerdict> {
    p.validate()?;
    if s0.dim() != lat.n() {
        return Err(CmlError::Usage("state dimension does not match lattice".into()));
    }
    let gate = transverse_stability(lat.topology(), lat.c(), lat.map().slope_magnitude())?;
    let mut st = lat.stepper(ar);
    if let Some(seed) = p.dither_seed {
        st.enable_dither(seed);
    }
    let mut x: Vec<A::Num> = s0.x.iter().map(|&v| st.ar.from_f64(v)).collect();

    let mut inside = false;
    let mut entries = 0;
    let mut alternations = 0;
    let mut min_d = f64::INFINITY;
    let mut max_d: f64 = 0.0;
    let mut tail_ok = true;
    let mut d = diagonal_distance_num(&st.ar, &x, metric);
    for t in 1..=p.horizon {
        st.step_in_place(&mut x)?;
        d = diagonal_distance_num(&st.ar, &x, metric);
        if t > p.horizon - SYNC_TAIL && d >= p.sync_tol {
            tail_ok = false;
        }
        if t <= p.transient {
            continue;
        }
        min_d = min_d.min(d);
        max_d = max_d.max(d);
        if !inside && d < p.eps_enter {
            inside = true;
            entries += 1;
        } else if inside && d >= p.r0 {
            inside = false;
            alternations += 1;
        }
    }

    let mut diagnostic = None;
    let regime = if tail_ok {
        if gate.sync_possible {
            Regime::Synchronized
        } else {
            diagnostic = Some(format!(
                "orbit collapsed onto the diagonal although the largest transverse multiplier is \
                 {:.6} >= 1; likely a finite-precision artefact",
                gate.max_transverse
            ));
            Regime::Undetermined
        }
    } else if alternations >= p.min_alternations {
        Regime::Intermittent
    } else {
        Regime::Undetermined
    };
    Ok(RegimeVerdict {
        regime,
        evidence: RegimeEvidence {
            alternations,
            entries,
            min_distance: min_d,
            max_distance: max_d,
            final_distance: d,
            tail_synchronized: tail_ok,
            transverse_stable: gate.sync_possible,
            diagnostic,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeStats {
    pub c: f64,
    /// Trials that escaped and enter the statistics.
    pub trials: usize,
    /// Trials dropped for not escaping within the step cap.
    pub excluded: usize,
    pub mean_steps: f64,
    pub stddev: f64,
    pub theoretical: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeParams {
    pub inner: f64,
    pub outer: f64,
    pub trials: usize,
    pub seed: u64,
    pub precision: PrecisionMode,
    pub step_cap: u64,
}

impl EscapeParams {
    pub fn new(inner: f64, outer: f64, trials: usize, seed: u64) -> Self {
        EscapeParams {
            inner,
            outer,
            trials,
            seed,
            precision: PrecisionMode::big_default(),
            step_cap: ESCAPE_STEP_CAP,
        }
    }
}

/// Escape times from `inner` to `outer` in extended precision (128 bits).
pub fn escape_time(
    lat: &Lattice,
    inner: f64,
    outer: f64,
    trials: usize,
    seed: u64,
) -> Result<EscapeStats> {
    escape_time_with(lat, &EscapeParams::new(inner, outer, trials, seed))
}

pub fn escape_time_with(lat: &Lattice, p: &EscapeParams) -> Result<EscapeStats> {
    if lat.topology().kind() != TopologyKind::TwoNode {
        return Err(CmlError::Usage("escape times are defined for the two-node lattice".into()));
    }
    if !(0.0 < p.inner && p.inner < p.outer && p.outer < 0.5) {
        return Err(CmlError::Usage(format!(
            "need 0 < inner < outer << 1, got inner = {}, outer = {}",
            p.inner, p.outer
        )));
    }
    if p.trials == 0 {
        return Err(CmlError::Usage("need at least one trial".into()));
    }
    let (_, lambda_perp) = lyapunov_analytic(lat.map().slope_magnitude(), lat.c());
    if !(lambda_perp > 0.0) {
        return Err(CmlError::Usage(format!(
            "c = {} is not in the intermittent regime (transverse exponent {lambda_perp})",
            lat.c()
        )));
    }
    let results: Vec<Result<Option<u64>>> = match p.precision {
        PrecisionMode::F64 => run_escape_trials(F64Arith, lat, p),
        PrecisionMode::Big { bits } => run_escape_trials(BigArith::new(bits), lat, p),
    };
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut excluded = 0usize;
    for r in results {
        match r? {
            Some(steps) => {
                n += 1;
                let v = steps as f64;
                let delta = v - mean;
                mean += delta / n as f64;
                m2 += delta * (v - mean);
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} escape trials did not escape within {} steps", p.step_cap);
    }
    let stddev = if n > 1 { (m2 / (n - 1) as f64).sqrt() } else { 0.0 };
    Ok(EscapeStats {
        c: lat.c(),
        trials: n,
        excluded,
        mean_steps: if n > 0 { mean } else { f64::NAN },
        stddev,
        theoretical: (p.outer / p.inner).ln() / lambda_perp,
    })
}

fn run_escape_trials<A: Arithmetic + Clone>(
    ar: A,
    lat: &Lattice,
    p: &EscapeParams,
) -> Vec<Result<Option<u64>>> {
    (0..p.trials as u64)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream_rng(p.seed, trial);
            let mut st = lat.stepper(ar.clone());
            st.enable_dither(rng.next_u64());
            let delta = if rng.random::<bool>() { p.inner } else { -p.inner };
            // u uniform on [inner, 1 - inner] with random bits down to the working precision.
            let span = st.ar.from_f64(1.0 - 2.0 * p.inner);
            let u = st.ar.mul(&span, &uniform_num(&st.ar, &mut rng));
            let x0 = st.ar.add(&u, &st.ar.from_f64(p.inner));
            let x1 = st.ar.add(&x0, &st.ar.from_f64(delta));
            let mut x = vec![x0, x1];
            for step in 1..=p.step_cap {
                st.step_in_place(&mut x)?;
                if diagonal_distance_num(&st.ar, &x, DistanceMetric::PairwiseMax) > p.outer {
                    return Ok(Some(step));
                }
            }
            Ok(None)
        })
        .collect()
}

/// Occupation counts on a `bins x bins` grid over `[0, 1]^2`, row-major from
/// the bottom-left cell (`index = j2 * bins + j1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityHistogram {
    pub bins_per_axis: usize,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl DensityHistogram {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(CmlError::Usage("histogram needs at least one bin".into()));
        }
        Ok(DensityHistogram {
            bins_per_axis: bins,
            counts: vec![0; bins * bins],
            total: 0,
        })
    }

    pub fn bin_of(&self, v: f64) -> usize {
        ((v * self.bins_per_axis as f64) as usize).min(self.bins_per_axis - 1)
    }

    pub fn add(&mut self, x1: f64, x2: f64) {
        let i = self.bin_of(x2) * self.bins_per_axis + self.bin_of(x1);
        self.counts[i] += 1;
        self.total += 1;
    }

    pub fn count(&self, j1: usize, j2: usize) -> u64 {
        self.counts[j2 * self.bins_per_axis + j1]
    }

    pub fn normalized(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn merge(&mut self, other: &DensityHistogram) -> Result<()> {
        if other.bins_per_axis != self.bins_per_axis {
            return Err(CmlError::Usage("cannot merge histograms on different grids".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.total += other.total;
        Ok(())
    }

    /// L1 distance from the uniform density on the same grid.
    pub fn distance_to_uniform(&self) -> f64 {
        let u = 1.0 / self.counts.len() as f64;
        self.normalized().iter().map(|p| (p - u).abs()).sum()
    }

    /// Mass in cells that meet the diagonal.
    pub fn diagonal_mass(&self) -> f64 {
        let n = self.bins_per_axis;
        let m: u64 = (0..n).map(|j| self.count(j, j)).sum();
        m as f64 / self.total.max(1) as f64
    }

    /// Mass in cells adjacent to (but off) the diagonal.
    pub fn near_diagonal_mass(&self) -> f64 {
        let n = self.bins_per_axis;
        let m: u64 = (0..n.saturating_sub(1))
            .map(|j| self.count(j, j + 1) + self.count(j + 1, j))
            .sum();
        m as f64 / self.total.max(1) as f64
    }
}

/// Occupation histogram of a dithered double-precision orbit (dither seed 0).
pub fn empirical_density(
    lat: &Lattice,
    s0: &State,
    steps: usize,
    burn_in: usize,
    bins: usize,
) -> Result<DensityHistogram> {
    let opts = DensityOptions {
        steps,
        burn_in,
        bins,
        dither_seed: Some(0),
    };
    empirical_density_with(F64Arith, lat, s0, &opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityOptions {
    /// Recorded points.
    pub steps: usize,
    /// Unrecorded leading steps.
    pub burn_in: usize,
    pub bins: usize,
    pub dither_seed: Option<u64>,
}

pub fn empirical_density_with<A: Arithmetic>(
    ar: A,
    lat: &Lattice,
    s0: &State,
    opts: &DensityOptions,
) -> Result<DensityHistogram> {
    let x: Vec<A::Num> = s0.x.iter().map(|&v| ar.from_f64(v)).collect();
    empirical_density_from(ar, lat, x, opts)
}

/// Like [`empirical_density_with`] but starting from a state already in the working arithmetic.
pub fn empirical_density_from<A: Arithmetic>(
    ar: A,
    lat: &Lattice,
    mut x: Vec<A::Num>,
    opts: &DensityOptions,
) -> Result<DensityHistogram> {
    if lat.topology().kind() != TopologyKind::TwoNode {
        return Err(CmlError::Usage("densities are defined for the two-node lattice".into()));
    }
    if x.len() != 2 {
        return Err(CmlError::Usage("state dimension does not match lattice".into()));
    }
    let mut h = DensityHistogram::new(opts.bins)?;
    let mut st = lat.stepper(ar);
    if let Some(seed) = opts.dither_seed {
        st.enable_dither(seed);
    }
    for _ in 0..opts.burn_in {
        st.step_in_place(&mut x)?;
    }
    for _ in 0..opts.steps {
        st.step_in_place(&mut x)?;
        h.add(st.ar.to_f64(&x[0]), st.ar.to_f64(&x[1]));
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    pub orbits: usize,
    /// Recorded points per orbit.
    pub length: usize,
    pub bins: usize,
    pub bits: usize,
    pub seed: u64,
}

/// Merged histogram of many short wide-precision orbits with random starts.
///
/// A binary floating-point orbit of the uncoupled doubling map loses one bit
/// per step and ends on a dyadic point; keeping every orbit shorter than the
/// mantissa, and starting it from random bits at full width, avoids that.
pub fn ensemble_density(lat: &Lattice, opts: &EnsembleOptions) -> Result<DensityHistogram> {
    if lat.topology().kind() != TopologyKind::TwoNode {
        return Err(CmlError::Usage("densities are defined for the two-node lattice".into()));
    }
    if opts.length >= opts.bits {
        return Err(CmlError::Usage(format!(
            "orbit length {} must stay below the mantissa width {}",
            opts.length, opts.bits
        )));
    }
    let ar = BigArith::new(opts.bits);
    let dopts = DensityOptions {
        steps: opts.length,
        burn_in: 0,
        bins: opts.bins,
        dither_seed: None,
    };
    let parts = (0..opts.orbits)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(opts.seed, i as u64);
            let x = vec![uniform_num(&ar, &mut rng), uniform_num(&ar, &mut rng)];
            empirical_density_from(ar, lat, x, &dopts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut h = DensityHistogram::new(opts.bins)?;
    for p in &parts {
        h.merge(p)?;
    }
    Ok(h)
}

/// L1 distance between the normalized histograms, in `[0, 2]`.
pub fn density_distance(h1: &DensityHistogram, h2: &DensityHistogram) -> Result<f64> {
    if h1.bins_per_axis != h2.bins_per_axis {
        return Err(CmlError::Usage(format!(
            "histogram grids differ ({} vs {} bins per axis)",
            h1.bins_per_axis, h2.bins_per_axis
        )));
    }
    Ok(h1
        .normalized()
        .iter()
        .zip(h2.normalized())
        .map(|(a, b)| (a - b).abs())
        .sum())
}
