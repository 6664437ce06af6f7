//! Coupling topologies, the lattice map `T(x) = (I + cA) f(x)`, orbits and spectra.
//!
//! Stepping uses the Laplacian form `x_i' = y_i + c * sum_j (y_j - y_i)` over
//! the neighbours of `i`, with `y = f(x)`. This equals `(I + cA) y` and keeps
//! synchronized states exactly synchronized in floating point, since every
//! difference `y_j - y_i` vanishes on the diagonal.
//!
//! Binary floating point has a blind spot for slope-2 maps: `2x` is exact, so
//! each step shifts one bit out of the orbit and after about one mantissa
//! width of steps the orbit sits on a dyadic point such as `1/2`, a branch
//! cut. A stepper can optionally add one shared random offset of order one
//! ulp to all coordinates after each step ("diagonal dither"). This restores
//! the fresh low-order bits a typical real orbit would carry, while leaving
//! coordinate differences and the diagonal untouched.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{diagonal_distance_num, DistanceMetric};
use crate::error::{CmlError, Result};
use crate::maps::{CompiledMap, MapKind, PiecewiseLinearMap};
use crate::precision::{Arithmetic, F64Arith, PrecisionMode};
use crate::rng::stream_rng;

/// Coordinates this close outside `[0, 1]` are clamped after a step.
pub const STATE_CLAMP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    TwoNode,
    Ring,
    Global,
}

impl TopologyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TopologyKind::TwoNode => "two_node",
            TopologyKind::Ring => "ring",
            TopologyKind::Global => "global",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopologyKind {
    type Err = CmlError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_node" => Ok(TopologyKind::TwoNode),
            "ring" => Ok(TopologyKind::Ring),
            "global" => Ok(TopologyKind::Global),
            _ => Err(CmlError::Config(format!("unknown topology '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingTopology {
    kind: TopologyKind,
    n: usize,
}

impl CouplingTopology {
    pub fn new(kind: TopologyKind, n: usize) -> Result<Self> {
        match kind {
            TopologyKind::TwoNode if n != 2 => Err(CmlError::Config(format!(
                "two_node topology has exactly 2 nodes, got n = {n}"
            ))),
            // The ring row (-2, 1, ..., 1) counts the single neighbour twice at n = 2.
            TopologyKind::Ring if n < 3 => Err(CmlError::Config(format!(
                "ring topology needs n >= 3 (use two_node for n = 2), got n = {n}"
            ))),
            TopologyKind::Global if n < 2 => Err(CmlError::Config(format!(
                "global topology needs n >= 2, got n = {n}"
            ))),
            _ => Ok(CouplingTopology { kind, n }),
        }
    }

    pub fn two_node() -> Self {
        CouplingTopology {
            kind: TopologyKind::TwoNode,
            n: 2,
        }
    }

    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest admissible coupling strength.
    pub fn max_coupling(&self) -> f64 {
        match self.kind {
            TopologyKind::TwoNode => 1.0,
            TopologyKind::Ring => 0.5,
            TopologyKind::Global => 1.0 / (self.n as f64 - 1.0),
        }
    }

    pub fn check_coupling(&self, c: f64) -> Result<()> {
        let hi = self.max_coupling();
        if c.is_finite() && (0.0..=hi).contains(&c) {
            Ok(())
        } else {
            Err(CmlError::Config(format!(
                "coupling c = {c} outside the admissible range [0, {hi}] for {} with n = {}",
                self.kind, self.n
            )))
        }
    }

    /// The coupling matrix `A` (row sums zero).
    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut a = DMatrix::zeros(n, n);
        for (i, nbrs) in self.neighbors().iter().enumerate() {
            for &j in nbrs {
                a[(i, j)] += 1.0;
            }
            a[(i, i)] = -(nbrs.len() as f64);
        }
        a
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let n = self.n;
        match self.kind {
            TopologyKind::TwoNode => vec![vec![1], vec![0]],
            TopologyKind::Ring => (0..n).map(|i| vec![(i + n - 1) % n, (i + 1) % n]).collect(),
            TopologyKind::Global => (0..n)
                .map(|i| (0..n).filter(|&j| j != i).collect())
                .collect(),
        }
    }
}

/// Sampled point of the phase space `[0, 1]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: Vec<f64>,
}

impl State {
    pub fn new(x: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(CmlError::Domain("empty state".into()));
        }
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CmlError::Domain(format!("state coordinate {v} outside [0, 1]")));
        }
        Ok(State { x })
    }

    pub fn diagonal(a: f64, n: usize) -> Result<Self> {
        State::new(vec![a; n])
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Lattice {
    topology: CouplingTopology,
    c: f64,
    map: PiecewiseLinearMap,
    #[serde(skip)]
    mix: DMatrix<f64>,
    #[serde(skip)]
    neighbors: Vec<Vec<usize>>,
}

impl Lattice {
    pub fn new(topology: CouplingTopology, c: f64, map: PiecewiseLinearMap) -> Result<Self> {
        topology.check_coupling(c)?;
        if c == 0.0 && map.kind() == MapKind::Doubling2 {
            log::warn!(
                "uncoupled doubling map: binary floating point orbits collapse to 0 after about \
                 mantissa-width steps; use extended precision for long runs"
            );
        }
        let mix = match topology.kind() {
            TopologyKind::TwoNode => DMatrix::from_row_slice(2, 2, &[1.0 - c, c, c, 1.0 - c]),
            _ => {
                let mut m = topology.coupling_matrix() * c;
                for i in 0..topology.n() {
                    m[(i, i)] += 1.0;
                }
                m
            }
        };
        Ok(Lattice {
            neighbors: topology.neighbors(),
            topology,
            c,
            map,
            mix,
        })
    }

    pub fn two_node(kind: MapKind, c: f64) -> Result<Self> {
        Lattice::new(CouplingTopology::two_node(), c, PiecewiseLinearMap::standard(kind))
    }

    pub fn topology(&self) -> CouplingTopology {
        self.topology
    }

    pub fn n(&self) -> usize {
        self.topology.n()
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn map(&self) -> &PiecewiseLinearMap {
        &self.map
    }

    /// `I + cA`.
    pub fn mix(&self) -> &DMatrix<f64> {
        &self.mix
    }

    pub fn neighbors(&self) -> &[Vec<usize>] {
        &self.neighbors
    }

    pub fn stepper<A: Arithmetic>(&self, ar: A) -> Stepper<'_, A> {
        Stepper::new(self, ar)
    }

    pub fn step(&self, s: &State) -> Result<State> {
        self.check_state(s)?;
        let mut st = self.stepper(F64Arith);
        let mut x = s.x.clone();
        st.step_in_place(&mut x)?;
        Ok(State { x })
    }

    fn check_state(&self, s: &State) -> Result<()> {
        if s.dim() != self.n() {
            return Err(CmlError::Usage(format!(
                "state has {} coordinates, lattice has {} nodes",
                s.dim(),
                self.n()
            )));
        }
        State::new(s.x.clone()).map(|_| ())
    }

    /// Runs an orbit in double precision.
    pub fn orbit(
        &self,
        s0: &State,
        steps: usize,
        sample_every: usize,
        metric: DistanceMetric,
    ) -> Result<TrajectoryRecord> {
        self.orbit_with(F64Arith, s0, &OrbitOptions::new(steps, sample_every, metric))
    }

    /// Runs an orbit in the given arithmetic.
    pub fn orbit_with<A: Arithmetic>(
        &self,
        ar: A,
        s0: &State,
        opts: &OrbitOptions,
    ) -> Result<TrajectoryRecord> {
        self.check_state(s0)?;
        if opts.sample_every == 0 {
            return Err(CmlError::Usage("sample_every must be at least 1".into()));
        }
        let mut st = self.stepper(ar);
        if let Some(seed) = opts.dither_seed {
            st.enable_dither(seed);
        }
        let mut x: Vec<A::Num> = s0.x.iter().map(|&v| st.ar.from_f64(v)).collect();
        let mut rec = TrajectoryRecord {
            states: vec![s0.clone()],
            sample_steps: vec![0],
            distances: Vec::with_capacity(opts.steps + 1),
            itinerary: opts.record_itinerary.then(Vec::new),
            steps: opts.steps,
            seed: opts.seed,
            metric: opts.metric,
            precision: st.ar.mode().to_string(),
        };
        rec.distances
            .push(diagonal_distance_num(&st.ar, &x, opts.metric));
        for t in 1..=opts.steps {
            let cells = st.step_in_place(&mut x)?;
            if let Some(it) = rec.itinerary.as_mut() {
                it.push(cells.to_vec());
            }
            rec.distances
                .push(diagonal_distance_num(&st.ar, &x, opts.metric));
            if t % opts.sample_every == 0 {
                rec.states.push(State {
                    x: x.iter().map(|v| st.ar.to_f64(v)).collect(),
                });
                rec.sample_steps.push(t);
            }
        }
        Ok(rec)
    }

    /// Jacobian of `T` at `s`; the flag is set when some coordinate sits on a breakpoint.
    pub fn jacobian_at(&self, s: &State) -> Result<(DMatrix<f64>, bool)> {
        self.check_state(s)?;
        let cuts = self.map.cuts();
        let mut on_cut = false;
        let mut j = self.mix.clone();
        for (col, &v) in s.x.iter().enumerate() {
            on_cut |= cuts.contains(&v);
            let d = self.map.derivative(v)?;
            for row in 0..self.n() {
                j[(row, col)] *= d;
            }
        }
        Ok((j, on_cut))
    }
}

/// Orbit recording policy.
#[derive(Debug, Clone)]
pub struct OrbitOptions {
    pub steps: usize,
    pub sample_every: usize,
    pub metric: DistanceMetric,
    pub record_itinerary: bool,
    pub seed: Option<u64>,
    /// Seed of the diagonal dither stream; `None` steps exactly.
    pub dither_seed: Option<u64>,
}

impl OrbitOptions {
    pub fn new(steps: usize, sample_every: usize, metric: DistanceMetric) -> Self {
        OrbitOptions {
            steps,
            sample_every,
            metric,
            record_itinerary: false,
            seed: None,
            dither_seed: None,
        }
    }
}

/// Sampled orbit. `distances` and `itinerary` hold one entry per step
/// (`distances[0]` belongs to the initial state, `itinerary[t]` to step `t + 1`);
/// `states` holds step 0 and every `sample_every`-th step.
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRecord {
    pub states: Vec<State>,
    pub sample_steps: Vec<usize>,
    pub distances: Vec<f64>,
    pub itinerary: Option<Vec<Vec<u8>>>,
    pub steps: usize,
    pub seed: Option<u64>,
    pub metric: DistanceMetric,
    pub precision: String,
}

/// Reusable stepping context for one lattice in one arithmetic.
pub struct Stepper<'a, A: Arithmetic> {
    lat: &'a Lattice,
    pub ar: A,
    map: CompiledMap<A::Num>,
    c: A::Num,
    lo: A::Num,
    hi: A::Num,
    y: Vec<A::Num>,
    cells: Vec<u8>,
    dither: Option<(ChaCha8Rng, f64)>,
}

/// Stream index reserved for dither draws, disjoint from per-trial streams.
const DITHER_STREAM: u64 = u64::MAX;

impl<'a, A: Arithmetic> Stepper<'a, A> {
    fn new(lat: &'a Lattice, ar: A) -> Self {
        let map = lat.map.compile(&ar);
        Stepper {
            c: ar.from_f64(lat.c),
            lo: ar.from_f64(-STATE_CLAMP_TOL),
            hi: ar.from_f64(1.0 + STATE_CLAMP_TOL),
            y: Vec::with_capacity(lat.n()),
            cells: vec![0; lat.n()],
            dither: None,
            lat,
            map,
            ar,
        }
    }

    pub fn lattice(&self) -> &Lattice {
        self.lat
    }

    /// Turns on diagonal dither with amplitude of about one unit in the last place at 1.
    pub fn enable_dither(&mut self, seed: u64) {
        let bits = match self.ar.mode() {
            PrecisionMode::F64 => 52,
            PrecisionMode::Big { bits } => bits - 1,
        };
        self.dither = Some((stream_rng(seed, DITHER_STREAM), 2f64.powi(-(bits as i32))));
    }

    /// Applies `T` to `x` in place and returns the branch index used per coordinate.
    pub fn step_in_place(&mut self, x: &mut [A::Num]) -> Result<&[u8]> {
        let ar = &self.ar;
        self.y.clear();
        for (i, xi) in x.iter().enumerate() {
            let (yi, b) = self.map.evaluate(ar, xi)?;
            self.y.push(yi);
            self.cells[i] = b as u8;
        }
        for (i, nbrs) in self.lat.neighbors.iter().enumerate() {
            let yi = &self.y[i];
            let mut acc: Option<A::Num> = None;
            for &j in nbrs {
                let d = ar.sub(&self.y[j], yi);
                acc = Some(match acc {
                    None => d,
                    Some(a) => ar.add(&a, &d),
                });
            }
            let v = match acc {
                Some(a) => ar.add(yi, &ar.mul(&self.c, &a)),
                None => yi.clone(),
            };
            x[i] = self.clamp_state(v)?;
        }
        if let Some((rng, scale)) = self.dither.as_mut() {
            let eta = ar.from_f64((2.0 * rng.random::<f64>() - 1.0) * *scale);
            let (zero, one) = (ar.zero(), ar.one());
            for xi in x.iter_mut() {
                let v = ar.add(xi, &eta);
                *xi = if ar.cmp(&v, &zero).is_lt() {
                    zero.clone()
                } else if ar.cmp(&v, &one).is_gt() {
                    one.clone()
                } else {
                    v
                };
            }
        }
        Ok(&self.cells)
    }

    fn clamp_state(&self, v: A::Num) -> Result<A::Num> {
        let ar = &self.ar;
        let zero = ar.zero();
        let one = ar.one();
        if ar.cmp(&v, &zero) == Ordering::Less {
            if ar.cmp(&v, &self.lo) == Ordering::Less {
                return Err(CmlError::Internal(format!(
                    "coordinate {} left [0, 1] beyond clamp tolerance",
                    ar.to_f64(&v)
                )));
            }
            return Ok(zero);
        }
        if ar.cmp(&v, &one) == Ordering::Greater {
            if ar.cmp(&v, &self.hi) == Ordering::Greater {
                return Err(CmlError::Internal(format!(
                    "coordinate {} left [0, 1] beyond clamp tolerance",
                    ar.to_f64(&v)
                )));
            }
            return Ok(one);
        }
        Ok(v)
    }
}

/// Full spectrum of `slope * (I + cA)`; index 0 is the eigenvalue along `e = (1, ..., 1)`.
pub fn coupling_eigenvalues(
    topology: CouplingTopology,
    c: f64,
    slope_magnitude: f64,
) -> Result<Vec<f64>> {
    topology.check_coupling(c)?;
    let n = topology.n();
    let s = slope_magnitude;
    Ok(match topology.kind() {
        TopologyKind::TwoNode => vec![s, s * (1.0 - 2.0 * c)],
        TopologyKind::Ring => (0..n)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                s * (1.0 - 2.0 * c + 2.0 * c * theta.cos())
            })
            .collect(),
        TopologyKind::Global => std::iter::once(s)
            .chain(std::iter::repeat_n(s * (1.0 - n as f64 * c), n - 1))
            .collect(),
    })
}

/// Numerical spectrum of `slope * (I + cA)`, ascending.
pub fn numerical_eigenvalues(topology: CouplingTopology, c: f64, slope_magnitude: f64) -> Vec<f64> {
    let mut m = topology.coupling_matrix() * c;
    for i in 0..topology.n() {
        m[(i, i)] += 1.0;
    }
    m *= slope_magnitude;
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub max_transverse: f64,
    pub sync_possible: bool,
}

pub fn transverse_stability(
    topology: CouplingTopology,
    c: f64,
    slope_magnitude: f64,
) -> Result<StabilityReport> {
    let ev = coupling_eigenvalues(topology, c, slope_magnitude)?;
    let max_transverse = ev[1..].iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(StabilityReport {
        max_transverse,
        sync_possible: max_transverse < 1.0,
    })
}
