//! Piecewise linear expanding interval maps.
//!
//! Every map here has constant slope magnitude `k` and breakpoints at
//! multiples of `1/k`. Branch intervals carry explicit endpoint conventions;
//! lookup is first-match over the ordered branch list, so a point shared by
//! two closed endpoints belongs to the earlier branch.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CmlError, Result};
use crate::precision::Arithmetic;

/// Rounding slack accepted by [`PiecewiseLinearMap::evaluate`] before clamping, in ulps.
const CLAMP_ULPS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Doubling2,
    Triple3,
    NegTriple3,
    Tent2,
}

impl MapKind {
    pub const ALL: [MapKind; 4] = [
        MapKind::Doubling2,
        MapKind::Triple3,
        MapKind::NegTriple3,
        MapKind::Tent2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MapKind::Doubling2 => "doubling2",
            MapKind::Triple3 => "triple3",
            MapKind::NegTriple3 => "neg_triple3",
            MapKind::Tent2 => "tent2",
        }
    }
}

impl fmt::Display for MapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MapKind {
    type Err = CmlError;

    fn from_str(s: &str) -> Result<Self> {
        MapKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CmlError::Config(format!("unknown map kind '{s}'")))
    }
}

/// One affine piece `x -> slope * x + intercept` on an interval of `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
    pub slope: f64,
    pub intercept: f64,
}

impl Branch {
    pub fn contains(&self, x: f64) -> bool {
        let above = x > self.lo || (self.lo_closed && x == self.lo);
        let below = x < self.hi || (self.hi_closed && x == self.hi);
        above && below
    }

    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearMap {
    kind: MapKind,
    branches: Vec<Branch>,
    /// Slope magnitude; breakpoints sit at `j / denom` for `j = 1..denom`.
    denom: u32,
}

impl PiecewiseLinearMap {
    /// Builds one of the standard maps with its exact branch table.
    pub fn standard(kind: MapKind) -> Self {
        let b = |lo: f64, hi: f64, lo_closed, hi_closed, slope, intercept| Branch {
            lo,
            hi,
            lo_closed,
            hi_closed,
            slope,
            intercept,
        };
        let (branches, denom) = match kind {
            MapKind::Doubling2 => (
                vec![
                    b(0.0, 0.5, true, false, 2.0, 0.0),
                    b(0.5, 1.0, true, true, 2.0, -1.0),
                ],
                2,
            ),
            MapKind::Triple3 => (
                vec![
                    b(0.0, 1.0 / 3.0, true, false, 3.0, 0.0),
                    b(1.0 / 3.0, 2.0 / 3.0, true, false, 3.0, -1.0),
                    b(2.0 / 3.0, 1.0, true, true, 3.0, -2.0),
                ],
                3,
            ),
            MapKind::NegTriple3 => (
                vec![
                    b(0.0, 1.0 / 3.0, true, true, -3.0, 1.0),
                    b(1.0 / 3.0, 2.0 / 3.0, false, true, -3.0, 2.0),
                    b(2.0 / 3.0, 1.0, false, true, -3.0, 3.0),
                ],
                3,
            ),
            MapKind::Tent2 => (
                vec![
                    b(0.0, 0.5, true, false, 2.0, 0.0),
                    b(0.5, 1.0, true, true, -2.0, 2.0),
                ],
                2,
            ),
        };
        PiecewiseLinearMap {
            kind,
            branches,
            denom,
        }
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    /// Constant `|f'|`.
    pub fn slope_magnitude(&self) -> f64 {
        self.denom as f64
    }

    /// Interior breakpoints, increasing.
    pub fn cuts(&self) -> Vec<f64> {
        self.branches.iter().skip(1).map(|b| b.lo).collect()
    }

    /// Interior breakpoints as exact fractions `(j, k)`.
    pub fn cut_fractions(&self) -> Vec<(i64, i64)> {
        (1..self.denom as i64)
            .map(|j| (j, self.denom as i64))
            .collect()
    }

    fn check_domain(x: f64) -> Result<()> {
        if (0.0..=1.0).contains(&x) {
            Ok(())
        } else {
            Err(CmlError::Domain(format!("x = {x} is outside [0, 1]")))
        }
    }

    pub fn branch_index(&self, x: f64) -> Result<usize> {
        Self::check_domain(x)?;
        self.branches
            .iter()
            .position(|b| b.contains(x))
            .ok_or_else(|| CmlError::Internal(format!("no branch of {} contains {x}", self.kind)))
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let b = &self.branches[self.branch_index(x)?];
        let y = b.apply(x);
        clamp_unit(y, (b.slope * x).abs().max(b.intercept.abs()).max(1.0))
    }

    pub fn derivative(&self, x: f64) -> Result<f64> {
        Ok(self.branches[self.branch_index(x)?].slope)
    }

    /// Precomputes branch data in the given arithmetic for repeated evaluation.
    pub fn compile<A: Arithmetic>(&self, ar: &A) -> CompiledMap<A::Num> {
        let cuts = self
            .cut_fractions()
            .into_iter()
            .map(|(n, d)| ar.ratio(n, d))
            .collect();
        let branches = self
            .branches
            .iter()
            .map(|b| CompiledBranch {
                lo_closed: b.lo_closed,
                hi_closed: b.hi_closed,
                slope: ar.from_f64(b.slope),
                intercept: ar.from_f64(b.intercept),
            })
            .collect();
        CompiledMap {
            cuts,
            branches,
            zero: ar.zero(),
            one: ar.one(),
            tol: ar.from_f64(CLAMP_ULPS * 3.0 * f64::EPSILON),
        }
    }
}

fn clamp_unit(y: f64, scale: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&y) {
        return Ok(y);
    }
    let tol = CLAMP_ULPS * f64::EPSILON * scale;
    if y < 0.0 && y >= -tol {
        Ok(0.0)
    } else if y > 1.0 && y <= 1.0 + tol {
        Ok(1.0)
    } else {
        Err(CmlError::Internal(format!(
            "map value {y} escaped [0, 1] beyond rounding tolerance"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct CompiledBranch<N> {
    lo_closed: bool,
    hi_closed: bool,
    pub slope: N,
    pub intercept: N,
}

/// Branch table lowered into a particular [`Arithmetic`].
#[derive(Debug, Clone)]
pub struct CompiledMap<N> {
    cuts: Vec<N>,
    branches: Vec<CompiledBranch<N>>,
    zero: N,
    one: N,
    tol: N,
}

impl<N: Clone> CompiledMap<N> {
    /// First-match branch lookup; `x` is assumed to lie in `[0, 1]`.
    pub fn branch_index<A: Arithmetic<Num = N>>(&self, ar: &A, x: &N) -> usize {
        let last = self.branches.len() - 1;
        for (i, br) in self.branches.iter().enumerate().take(last) {
            let hi = &self.cuts[i];
            match ar.cmp(x, hi) {
                Ordering::Less => return i,
                Ordering::Equal if br.hi_closed => return i,
                _ => {}
            }
            // The next branch must accept x; with the standard tables an open
            // upper end is always paired with a closed lower end and vice versa.
            debug_assert!(self.branches[i + 1].lo_closed || br.hi_closed);
        }
        last
    }

    pub fn branch(&self, i: usize) -> &CompiledBranch<N> {
        &self.branches[i]
    }

    /// Evaluates `f(x)` and returns it with the branch index used.
    pub fn evaluate<A: Arithmetic<Num = N>>(&self, ar: &A, x: &N) -> Result<(N, usize)> {
        let i = self.branch_index(ar, x);
        let br = &self.branches[i];
        let y = ar.add(&ar.mul(&br.slope, x), &br.intercept);
        Ok((self.clamp(ar, y)?, i))
    }

    /// Clamps values within tolerance of `[0, 1]`; errors beyond that.
    pub fn clamp<A: Arithmetic<Num = N>>(&self, ar: &A, y: N) -> Result<N> {
        if ar.cmp(&y, &self.zero) == Ordering::Less {
            if ar.cmp(&ar.abs(&y), &self.tol) != Ordering::Greater {
                return Ok(self.zero.clone());
            }
            return Err(CmlError::Internal(format!(
                "coordinate {} escaped [0, 1]",
                ar.to_f64(&y)
            )));
        }
        if ar.cmp(&y, &self.one) == Ordering::Greater {
            if ar.cmp(&ar.sub(&y, &self.one), &self.tol) != Ordering::Greater {
                return Ok(self.one.clone());
            }
            return Err(CmlError::Internal(format!(
                "coordinate {} escaped [0, 1]",
                ar.to_f64(&y)
            )));
        }
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::precision::{BigArith, F64Arith};
    use proptest::prelude::*;

    fn map(kind: MapKind) -> PiecewiseLinearMap {
        PiecewiseLinearMap::standard(kind)
    }

    #[test]
    fn standard_branch_tables() {
        let d = map(MapKind::Doubling2);
        assert_eq!(d.branches().len(), 2);
        let s: Vec<_> = d.branches().iter().map(|b| (b.slope, b.intercept)).collect();
        assert_eq!(s, vec![(2.0, 0.0), (2.0, -1.0)]);

        let t = map(MapKind::Triple3);
        let s: Vec<_> = t.branches().iter().map(|b| (b.slope, b.intercept)).collect();
        assert_eq!(s, vec![(3.0, 0.0), (3.0, -1.0), (3.0, -2.0)]);

        let n = map(MapKind::NegTriple3);
        let s: Vec<_> = n.branches().iter().map(|b| (b.slope, b.intercept)).collect();
        assert_eq!(s, vec![(-3.0, 1.0), (-3.0, 2.0), (-3.0, 3.0)]);
        // [0,1/3], (1/3,2/3], (2/3,1]
        assert!(n.branches()[0].hi_closed && !n.branches()[1].lo_closed);
    }

    #[test]
    fn unknown_kind_is_config_error() {
        assert!(matches!("logistic".parse::<MapKind>(), Err(CmlError::Config(_))));
        assert_eq!("neg_triple3".parse::<MapKind>().unwrap(), MapKind::NegTriple3);
    }

    #[test]
    fn evaluate_examples() {
        assert_eq!(map(MapKind::Doubling2).evaluate(0.75).unwrap(), 0.5);
        assert_eq!(map(MapKind::Triple3).evaluate(0.5).unwrap(), 0.5);
        assert_eq!(map(MapKind::NegTriple3).evaluate(1.0 / 3.0).unwrap(), 0.0);
        assert_eq!(map(MapKind::Tent2).evaluate(0.75).unwrap(), 0.5);
        assert!(matches!(
            map(MapKind::Doubling2).evaluate(1.5),
            Err(CmlError::Domain(_))
        ));
        assert!(map(MapKind::Doubling2).evaluate(f64::NAN).is_err());
    }

    #[test]
    fn branch_index_examples() {
        assert_eq!(map(MapKind::Doubling2).branch_index(0.5).unwrap(), 1);
        assert_eq!(map(MapKind::Triple3).branch_index(0.0).unwrap(), 0);
        assert_eq!(map(MapKind::NegTriple3).branch_index(1.0 / 3.0).unwrap(), 0);
        assert_eq!(map(MapKind::NegTriple3).branch_index(1.0).unwrap(), 2);
        assert_eq!(map(MapKind::Triple3).branch_index(1.0).unwrap(), 2);
    }

    #[test]
    fn derivative_examples() {
        let d = map(MapKind::Doubling2);
        for x in [0.0, 0.2, 0.5, 0.99, 1.0] {
            assert_eq!(d.derivative(x).unwrap(), 2.0);
        }
        assert_eq!(map(MapKind::NegTriple3).derivative(0.9).unwrap(), -3.0);
        assert_eq!(map(MapKind::Tent2).derivative(0.75).unwrap(), -2.0);
    }

    #[test]
    fn compiled_lookup_agrees_at_breakpoints() {
        let ar = F64Arith;
        for kind in MapKind::ALL {
            let m = map(kind);
            let cm = m.compile(&ar);
            for x in [0.0, 0.5, 1.0 / 3.0, 2.0 / 3.0, 1.0, 0.25, 0.9] {
                assert_eq!(cm.branch_index(&ar, &x), m.branch_index(x).unwrap(), "{kind} {x}");
                let (y, _) = cm.evaluate(&ar, &x).unwrap();
                assert_eq!(y, m.evaluate(x).unwrap());
            }
        }
    }

    #[test]
    fn compiled_big_uses_exact_thirds() {
        let ar = BigArith::new(128);
        let cm = map(MapKind::Triple3).compile(&ar);
        let third = ar.ratio(1, 3);
        assert_eq!(cm.branch_index(&ar, &third), 1);
        let (y, _) = cm.evaluate(&ar, &third).unwrap();
        assert!(ar.to_f64(&y).abs() < 1e-30);
        let neg = map(MapKind::NegTriple3).compile(&ar);
        assert_eq!(neg.branch_index(&ar, &third), 0);
    }

    proptest! {
        #[test]
        fn images_stay_in_unit_interval(x in 0.0f64..=1.0, k in 0usize..4) {
            let m = map(MapKind::ALL[k]);
            let y = m.evaluate(x).unwrap();
            prop_assert!((0.0..=1.0).contains(&y));
            prop_assert_eq!(m.derivative(x).unwrap().abs(), m.slope_magnitude());
        }

        #[test]
        fn exactly_one_branch_contains(x in 0.0f64..=1.0, k in 0usize..4) {
            let m = map(MapKind::ALL[k]);
            let hits = m.branches().iter().filter(|b| b.contains(x)).count();
            prop_assert_eq!(hits, 1);
        }
    }
}
