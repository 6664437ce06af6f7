//! Closed-form constants: expansion rates, iterative-lemma parameters,
//! critical couplings and the tent-lattice threshold.
//!
//! Logarithms in arbitrary bases are natural-log ratios.

use serde::{Deserialize, Serialize};

use crate::error::{CmlError, Result};

/// Relative distance to an integer below which a floor argument is snapped to it.
pub const FLOOR_SNAP_REL: f64 = 1e-9;

/// `floor(x)`, except that values within [`FLOOR_SNAP_REL`] of an integer are
/// treated as that integer, so `log_4(16) = 1.9999999999999998` floors to 2.
pub fn floor_snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= FLOOR_SNAP_REL * r.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

pub fn log_base(base: f64, x: f64) -> f64 {
    x.ln() / base.ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetKind {
    Measurable,
    Curve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionRates {
    pub e_plus: f64,
    pub e_minus: f64,
    pub set_kind: SetKind,
}

impl ExpansionRates {
    pub fn new(e_plus: f64, e_minus: f64, set_kind: SetKind) -> Result<Self> {
        if !(e_minus > 0.0 && e_plus >= e_minus) {
            return Err(CmlError::Parameter(format!(
                "expansion rates need E+ >= E- > 0, got ({e_plus}, {e_minus})"
            )));
        }
        Ok(ExpansionRates {
            e_plus,
            e_minus,
            set_kind,
        })
    }
}

/// Per-step expansion rates of the two-node lattice on one cell.
pub fn expansion_rates(slope_magnitude: f64, c: f64, set_kind: SetKind) -> Result<ExpansionRates> {
    let k = slope_magnitude;
    let shrink = (1.0 - 2.0 * c).abs();
    let (e_plus, e_minus) = match set_kind {
        SetKind::Measurable => (k * k * shrink, k * k * shrink),
        SetKind::Curve => (k, k * shrink),
    };
    if e_minus <= 1.0 {
        log::warn!("lower expansion rate {e_minus} <= 1 at c = {c}");
    }
    ExpansionRates::new(e_plus, e_minus, set_kind)
}

/// `log_{E+}(E- / a^{1/m0})`, the per-step net growth exponent.
fn growth_log(rates: &ExpansionRates, a: u64, m0: u32) -> f64 {
    log_base(rates.e_plus, rates.e_minus / (a as f64).powf(1.0 / m0 as f64))
}

fn check_feasible(rates: &ExpansionRates, a: u64, m0: u32) -> Result<()> {
    if a == 0 || m0 == 0 {
        return Err(CmlError::Parameter("a and m0 must be positive".into()));
    }
    let cap = rates.e_minus.powi(m0 as i32);
    if !((a as f64) < cap) {
        return Err(CmlError::Feasibility(format!(
            "the bound a < E-^m0 fails: a = {a}, E-^m0 = {cap} (E- = {}, m0 = {m0})",
            rates.e_minus
        )));
    }
    Ok(())
}

/// Upper end of the admissible `mu` range; `+inf` when the log term equals 1.
pub fn mu_upper_bound(rates: &ExpansionRates, a: u64, m0: u32) -> Result<f64> {
    check_feasible(rates, a, m0)?;
    let denom = 1.0 - growth_log(rates, a, m0);
    Ok(if denom <= 0.0 { f64::INFINITY } else { 1.0 / denom })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaParams {
    pub a: u64,
    pub m0: u32,
    pub delta1: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub rates: ExpansionRates,
    pub params: LemmaParams,
    pub mu_upper: f64,
    pub d: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "N0")]
    pub n0: u64,
    /// Unclamped `log_mu(log2 F / d)` before flooring.
    pub n0_raw: f64,
    pub n0_clamped: bool,
    /// Limit of `d` as `mu -> 1+`.
    pub d_limit: f64,
    /// `log_{E+}(E- a^{-1/m0}) / F`, the small-`mu` form of the corollary bound.
    pub corollary_bound: f64,
    /// `prod_{j > N0} (1 - F 2^{-d mu^j})`.
    pub c1: f64,
}

/// Evaluates `d`, `F(c)`, `N0` and the corollary constants.
pub fn iterative_constants(rates: &ExpansionRates, p: &LemmaParams) -> Result<LemmaReport> {
    let mu_upper = mu_upper_bound(rates, p.a, p.m0)?;
    if !(p.delta1 > 0.0 && p.delta1 < 1.0) {
        return Err(CmlError::Parameter(format!(
            "delta1 must lie in (0, 1), got {}",
            p.delta1
        )));
    }
    if !(p.mu > 1.0 && p.mu < mu_upper) {
        return Err(CmlError::Parameter(format!(
            "mu must satisfy 1 < mu < {mu_upper}, got {}",
            p.mu
        )));
    }
    let g = growth_log(rates, p.a, p.m0);
    let d = 1.0 - (1.0 - g) * p.mu;
    if !(d > 0.0) {
        return Err(CmlError::Parameter(format!(
            "d = {d} is not positive; mu = {} breaks mu < (1 - log(E-/a^(1/m0)))^-1",
            p.mu
        )));
    }
    let base = rates.e_minus / (p.a as f64).powf(1.0 / p.m0 as f64);
    let f = p.a as f64 * base.powf(1.0 - log_base(rates.e_plus, p.delta1));
    let n0_raw = log_base(p.mu, f.log2() / d);
    let floored = floor_snap(n0_raw);
    let n0_clamped = !(floored >= 0.0);
    let n0 = if n0_clamped { 0 } else { floored as u64 };
    Ok(LemmaReport {
        rates: *rates,
        params: *p,
        mu_upper,
        d,
        f,
        n0,
        n0_raw,
        n0_clamped,
        d_limit: g,
        corollary_bound: g / f,
        c1: corollary_c1(f, d, p.mu, n0),
    })
}

/// `prod_{j = N0 + 1}^inf (1 - F 2^{-d mu^j})`, truncated once the next factor
/// differs from 1 by less than 1e-16. The factor at `j = N0` itself is not
/// positive by the choice of `N0`, so the product starts one index later.
pub fn corollary_c1(f: f64, d: f64, mu: f64, n0: u64) -> f64 {
    let mut prod = 1.0;
    let mut j = n0 + 1;
    loop {
        let term = f * 2f64.powf(-d * mu.powf(j as f64));
        if term < 1e-16 || j > n0 + 100_000 {
            break;
        }
        prod *= 1.0 - term;
        if prod <= 0.0 {
            return 0.0;
        }
        j += 1;
    }
    prod
}

/// `floor(-log_{E+}(ratio / delta1))` for `ratio = M(Omega) / M(D)`.
pub fn k_of_n(measure_ratio: f64, rates: &ExpansionRates, delta1: f64) -> Result<u64> {
    if !(measure_ratio > 0.0 && measure_ratio <= 1.0) {
        return Err(CmlError::Usage(format!(
            "measure ratio must lie in (0, 1], got {measure_ratio}"
        )));
    }
    if measure_ratio > delta1 {
        return Err(CmlError::Usage(format!(
            "measure ratio {measure_ratio} exceeds delta1 = {delta1}"
        )));
    }
    let v = floor_snap(-log_base(rates.e_plus, measure_ratio / delta1));
    Ok(v.max(0.0) as u64)
}

/// The `c` at which `|k (1 - 2c)| = 1`.
pub fn critical_coupling(slope_magnitude: f64) -> Result<f64> {
    if !(slope_magnitude > 1.0) {
        return Err(CmlError::Domain(format!(
            "slope magnitude must exceed 1, got {slope_magnitude}"
        )));
    }
    Ok((1.0 - 1.0 / slope_magnitude) / 2.0)
}

/// Coupling below which the `n`-node tent lattice is shown to have a unique ACIM.
pub fn tent_lattice_threshold(n: u32) -> Result<f64> {
    if n < 2 {
        return Err(CmlError::Domain(format!("need n >= 2, got {n}")));
    }
    // 1/2 - (2^n - 1)^(1/n) / 4 = -expm1(ln(1 - 2^-n) / n) / 2, free of cancellation.
    let t = -2f64.powi(-(n as i32));
    Ok(-(t.ln_1p() / n as f64).exp_m1() / 2.0)
}
