//! Experiment configuration.
//!
//! A config file is JSON. Loading fills in every default, and the resolved
//! config is what gets echoed into the result metadata, so feeding the echo
//! back in reproduces the run.

use std::fmt;
use std::path::Path;

use clap::ValueEnum;
use cml_core::diagnostics::{DistanceMetric, RegimeParams, ESCAPE_STEP_CAP};
use cml_core::geometry::{DEFAULT_COMPONENT_CAP, DEFAULT_SLIVER_AREA, DEFAULT_SLIVER_LENGTH};
use cml_core::lemma_calc::SetKind;
use cml_core::{CouplingTopology, Lattice, MapKind, PiecewiseLinearMap, PrecisionMode, TopologyKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    RunOrbit,
    Sweep,
    EscapeTime,
    GeometryTrace,
    LemmaConstants,
    Density,
    Stability,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::RunOrbit => "run-orbit",
            Experiment::Sweep => "sweep",
            Experiment::EscapeTime => "escape-time",
            Experiment::GeometryTrace => "geometry-trace",
            Experiment::LemmaConstants => "lemma-constants",
            Experiment::Density => "density",
            Experiment::Stability => "stability",
        }
    }

    fn default_precision(&self) -> PrecisionMode {
        match self {
            Experiment::EscapeTime => PrecisionMode::big_default(),
            _ => PrecisionMode::F64,
        }
    }

    /// Whether the experiment takes a `lattice` block, and whether that block carries `c`.
    fn lattice_use(&self) -> LatticeUse {
        match self {
            Experiment::RunOrbit | Experiment::Density | Experiment::GeometryTrace => LatticeUse::WithCoupling,
            Experiment::Sweep | Experiment::EscapeTime => LatticeUse::CouplingFromGrid,
            Experiment::LemmaConstants | Experiment::Stability => LatticeUse::None,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

enum LatticeUse {
    WithCoupling,
    CouplingFromGrid,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub map: MapKind,
    #[serde(default = "default_topology")]
    pub topology: TopologyKind,
    /// Number of nodes; defaults to 2 for `two_node` and is required otherwise.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
}

fn default_topology() -> TopologyKind {
    TopologyKind::TwoNode
}

impl LatticeSpec {
    pub fn topology(&self) -> Result<CouplingTopology, CliError> {
        let n = match (self.topology, self.n) {
            (TopologyKind::TwoNode, None) => 2,
            (_, Some(n)) => n,
            (kind, None) => return Err(CliError::Config(format!("lattice.n is required for the {kind} topology"))),
        };
        Ok(CouplingTopology::new(self.topology, n)?)
    }

    /// Lattice at the configured coupling.
    pub fn build(&self) -> Result<Lattice, CliError> {
        let c = self.c.ok_or_else(|| CliError::Config("lattice.c is required".into()))?;
        self.build_at(c)
    }

    pub fn build_at(&self, c: f64) -> Result<Lattice, CliError> {
        Ok(Lattice::new(self.topology()?, c, PiecewiseLinearMap::standard(self.map))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOrbitParams {
    /// Initial state; drawn uniformly from the seed when absent.
    pub initial: Option<Vec<f64>>,
    pub steps: usize,
    pub sample_every: usize,
    /// Distances above this are drawn in a second colour.
    pub threshold: f64,
    /// Applies the seeded diagonal dither after each step.
    pub dither: bool,
    pub record_itinerary: bool,
}

impl Default for RunOrbitParams {
    fn default() -> Self {
        RunOrbitParams {
            initial: None,
            steps: 10_000,
            sample_every: 1,
            threshold: 0.05,
            dither: false,
            record_itinerary: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub c_values: Vec<f64>,
    /// Random initial states per coupling.
    pub trials: usize,
    pub regime: RegimeParams,
    /// Steps `[start, end)` over which the distance is averaged.
    pub window: [usize; 2],
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            c_values: (0..10).map(|i| i as f64 / 20.0).collect(),
            trials: 10,
            regime: RegimeParams {
                horizon: 100_000,
                ..Default::default()
            },
            window: [80_000, 81_000],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscapeParamsConfig {
    pub c_values: Vec<f64>,
    pub inner: f64,
    pub outer: f64,
    pub trials: usize,
    pub step_cap: u64,
}

impl Default for EscapeParamsConfig {
    fn default() -> Self {
        EscapeParamsConfig {
            c_values: vec![0.10, 0.15, 0.20, 0.225, 0.24],
            inner: 1e-12,
            outer: 1e-6,
            trials: 200,
            step_cap: ESCAPE_STEP_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Polygon { vertices: Vec<[f64; 2]> },
    Segment { p: [f64; 2], q: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryParams {
    pub shape: ShapeSpec,
    pub depth: usize,
    /// Aborts once a depth holds more components than this.
    pub cap: usize,
    pub sliver_area: f64,
    pub sliver_length: f64,
    /// When set, components meeting the strip `|x1 - x2| <= sqrt(2) eps` are counted.
    pub strip_eps: Option<f64>,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            shape: ShapeSpec::Polygon {
                vertices: vec![[0.2, 0.2], [0.21, 0.2], [0.21, 0.21], [0.2, 0.21]],
            },
            depth: 6,
            cap: DEFAULT_COMPONENT_CAP,
            sliver_area: DEFAULT_SLIVER_AREA,
            sliver_length: DEFAULT_SLIVER_LENGTH,
            strip_eps: None,
        }
    }
}

/// A scalar or a list of values to scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }

    fn is_scalar(&self) -> bool {
        matches!(self, OneOrMany::One(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaParamsConfig {
    pub map: MapKind,
    pub set_kind: OneOrMany<SetKind>,
    pub c: OneOrMany<f64>,
    pub a: OneOrMany<u64>,
    pub m0: OneOrMany<u32>,
    pub delta1: OneOrMany<f64>,
    pub mu: OneOrMany<f64>,
    /// When set, also reports the step count after which this measure ratio reaches `delta1`.
    pub measure_ratio: Option<f64>,
}

impl Default for LemmaParamsConfig {
    fn default() -> Self {
        LemmaParamsConfig {
            map: MapKind::Doubling2,
            set_kind: OneOrMany::One(SetKind::Measurable),
            c: OneOrMany::One(0.1),
            a: OneOrMany::One(2),
            m0: OneOrMany::One(1),
            delta1: OneOrMany::One(0.25),
            mu: OneOrMany::One(1.1),
            measure_ratio: None,
        }
    }
}

impl LemmaParamsConfig {
    pub fn is_batch(&self) -> bool {
        !(self.set_kind.is_scalar()
            && self.c.is_scalar()
            && self.a.is_scalar()
            && self.m0.is_scalar()
            && self.delta1.is_scalar()
            && self.mu.is_scalar())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMode {
    /// `ensemble` for the uncoupled doubling lattice, `orbit` otherwise.
    Auto,
    /// One long dithered orbit per run.
    Orbit,
    /// Many short wide-precision orbits per run.
    Ensemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityParams {
    pub mode: DensityMode,
    /// Independent runs, compared pairwise.
    pub runs: usize,
    pub bins: usize,
    pub steps: usize,
    pub burn_in: usize,
    pub orbits: usize,
    pub length: usize,
    pub bits: usize,
}

impl Default for DensityParams {
    fn default() -> Self {
        DensityParams {
            mode: DensityMode::Auto,
            runs: 2,
            bins: 64,
            steps: 10_000_000,
            burn_in: 1_000,
            orbits: 100_000,
            length: 100,
            bits: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityParams {
    pub map: MapKind,
    pub topology: TopologyKind,
    pub n_values: Vec<usize>,
    /// Grid spacing on the open interval `(0, max coupling)`.
    pub c_step: f64,
}

impl Default for StabilityParams {
    fn default() -> Self {
        StabilityParams {
            map: MapKind::Doubling2,
            topology: TopologyKind::Ring,
            n_values: (6..=12).collect(),
            c_step: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Params {
    RunOrbit(RunOrbitParams),
    Sweep(SweepParams),
    EscapeTime(EscapeParamsConfig),
    GeometryTrace(GeometryParams),
    LemmaConstants(LemmaParamsConfig),
    Density(DensityParams),
    Stability(StabilityParams),
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub name: String,
    pub seed: u64,
    pub precision: PrecisionMode,
    pub metric: DistanceMetric,
    pub out: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice: Option<LatticeSpec>,
    pub params: Params,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Experiment,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    precision: Option<PrecisionMode>,
    #[serde(default)]
    metric: DistanceMetric,
    #[serde(default)]
    out: Option<String>,
    #[serde(default)]
    lattice: Option<LatticeSpec>,
    #[serde(default)]
    params: Option<serde_json::Value>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<String>,
    pub seed: Option<u64>,
    pub precision: Option<PrecisionMode>,
}

fn typed<T: DeserializeOwned + Default>(v: Option<serde_json::Value>) -> Result<T, CliError> {
    match v {
        None | Some(serde_json::Value::Null) => Ok(T::default()),
        Some(v) => serde_json::from_value(v).map_err(|e| CliError::Config(format!("params: {e}"))),
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path, expected: Experiment, ov: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text, expected, ov)
    }

    pub fn from_json(text: &str, expected: Experiment, ov: &Overrides) -> Result<Self, CliError> {
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if raw.experiment != expected {
            return Err(CliError::Config(format!(
                "config is for '{}' but '{}' was requested",
                raw.experiment, expected
            )));
        }
        let exp = raw.experiment;
        let params = match exp {
            Experiment::RunOrbit => Params::RunOrbit(typed(raw.params)?),
            Experiment::Sweep => Params::Sweep(typed(raw.params)?),
            Experiment::EscapeTime => Params::EscapeTime(typed(raw.params)?),
            Experiment::GeometryTrace => Params::GeometryTrace(typed(raw.params)?),
            Experiment::LemmaConstants => Params::LemmaConstants(typed(raw.params)?),
            Experiment::Density => Params::Density(typed(raw.params)?),
            Experiment::Stability => Params::Stability(typed(raw.params)?),
        };
        let mut lattice = raw.lattice;
        match (exp.lattice_use(), &mut lattice) {
            (LatticeUse::None, Some(_)) => {
                return Err(CliError::Config(format!("{exp} takes no lattice block")));
            }
            (LatticeUse::None, None) => {}
            (_, None) => return Err(CliError::Config(format!("{exp} needs a lattice block"))),
            (LatticeUse::CouplingFromGrid, Some(l)) if l.c.is_some() => {
                return Err(CliError::Config(format!(
                    "{exp} scans c_values; remove lattice.c"
                )));
            }
            (LatticeUse::WithCoupling, Some(l)) if l.c.is_none() => {
                return Err(CliError::Config("lattice.c is required".into()));
            }
            (_, Some(l)) => {
                // Written out so the echo carries no implicit node count.
                l.n = Some(l.topology()?.n());
            }
        }
        let name = raw.name.unwrap_or_else(|| exp.as_str().to_string());
        if name.is_empty() || name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("invalid output name '{name}'")));
        }
        let cfg = ExperimentConfig {
            experiment: exp,
            name,
            seed: ov.seed.unwrap_or(raw.seed),
            precision: ov.precision.or(raw.precision).unwrap_or(exp.default_precision()),
            metric: raw.metric,
            out: ov.out.clone().or(raw.out).unwrap_or_else(|| ".".into()),
            lattice,
            params,
        };
        if let Some(l) = &cfg.lattice {
            if l.c.is_some() {
                l.build()?;
            } else {
                l.topology()?;
            }
        }
        Ok(cfg)
    }

    pub fn lattice(&self) -> &LatticeSpec {
        self.lattice.as_ref().expect("lattice presence is checked on load")
    }

    /// The config as echoed in result metadata.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn load(text: &str, exp: Experiment) -> Result<ExperimentConfig, CliError> {
        ExperimentConfig::from_json(text, exp, &Overrides::default())
    }

    #[test]
    fn defaults_are_filled_in() {
        let cfg = load(
            r#"{"experiment": "run-orbit", "lattice": {"map": "doubling2", "c": 0.3}}"#,
            Experiment::RunOrbit,
        )
        .unwrap();
        assert_eq!(cfg.name, "run-orbit");
        assert_eq!(cfg.precision, PrecisionMode::F64);
        assert_eq!(cfg.lattice().n, Some(2));
        let Params::RunOrbit(p) = &cfg.params else { panic!() };
        assert_eq!(p.steps, 10_000);
        let echo = cfg.to_json();
        assert_eq!(echo["params"]["threshold"], 0.05);
        assert_eq!(echo["metric"], "pairwise_max");
    }

    #[test]
    fn echo_round_trips() {
        let cfg = load(
            r#"{"experiment": "sweep", "seed": 3, "lattice": {"map": "triple3"}, "params": {"trials": 2}}"#,
            Experiment::Sweep,
        )
        .unwrap();
        let again = load(&cfg.to_json().to_string(), Experiment::Sweep).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        for text in [
            r#"{"experiment": "stability", "colour": "red"}"#,
            r#"{"experiment": "stability", "params": {"n_value": [3]}}"#,
            r#"{"experiment": "run-orbit", "lattice": {"map": "doubling2", "c": 0.1, "k": 2}}"#,
        ] {
            let exp: Experiment = if text.contains("stability") { Experiment::Stability } else { Experiment::RunOrbit };
            assert!(matches!(load(text, exp), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn lattice_block_rules() {
        assert!(load(r#"{"experiment": "density"}"#, Experiment::Density).is_err());
        assert!(load(r#"{"experiment": "sweep", "lattice": {"map": "doubling2", "c": 0.1}}"#, Experiment::Sweep).is_err());
        assert!(load(r#"{"experiment": "stability", "lattice": {"map": "doubling2"}}"#, Experiment::Stability).is_err());
        assert!(load(
            r#"{"experiment": "run-orbit", "lattice": {"map": "doubling2", "topology": "ring", "n": 6, "c": 0.6}}"#,
            Experiment::RunOrbit
        )
        .is_err());
        assert!(load(r#"{"experiment": "run-orbit", "lattice": {"map": "doubling2", "topology": "ring", "c": 0.1}}"#, Experiment::RunOrbit).is_err());
    }

    #[test]
    fn experiment_mismatch_and_overrides() {
        let text = r#"{"experiment": "escape-time", "lattice": {"map": "doubling2"}}"#;
        assert!(load(text, Experiment::Sweep).is_err());
        let cfg = load(text, Experiment::EscapeTime).unwrap();
        assert_eq!(cfg.precision, PrecisionMode::Big { bits: 128 });
        let ov = Overrides {
            out: Some("x".into()),
            seed: Some(9),
            precision: Some(PrecisionMode::F64),
        };
        let cfg = ExperimentConfig::from_json(text, Experiment::EscapeTime, &ov).unwrap();
        assert_eq!((cfg.seed, cfg.precision, cfg.out.as_str()), (9, PrecisionMode::F64, "x"));
    }

    #[test]
    fn lemma_batch_detection() {
        let single = LemmaParamsConfig::default();
        assert!(!single.is_batch());
        let batch = LemmaParamsConfig {
            mu: OneOrMany::Many(vec![1.05, 1.1]),
            ..Default::default()
        };
        assert!(batch.is_batch());
    }
}
