//! Independent oracles shared by integration tests and the acceptance suite.
#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use cml_core::precision::big_to_f64;

const P: usize = 320;
// Correct rounding of exact results such as 4^(1/2) can stall; 320 bits leaves ample margin without it.
const RM: RoundingMode = RoundingMode::None;

pub struct Hp {
    cc: Consts,
}

impl Hp {
    pub fn new() -> Self {
        Hp {
            cc: Consts::new().expect("constants cache"),
        }
    }

    pub fn num(&self, v: f64) -> BigFloat {
        BigFloat::from_f64(v, P)
    }

    pub fn int(&self, v: i64) -> BigFloat {
        BigFloat::from_i64(v, P)
    }

    pub fn ln(&mut self, x: &BigFloat) -> BigFloat {
        x.ln(P, RM, &mut self.cc)
    }

    pub fn log(&mut self, base: &BigFloat, x: &BigFloat) -> BigFloat {
        self.ln(x).div(&self.ln(base), P, RM)
    }

    pub fn pow(&mut self, x: &BigFloat, e: &BigFloat) -> BigFloat {
        x.pow(e, P, RM, &mut self.cc)
    }

    pub fn f(&self, x: &BigFloat) -> f64 {
        big_to_f64(x)
    }
}

/// `(d, F, N0)` of the iterative lemma evaluated at 320 bits.
pub fn lemma_chain(e_plus: f64, e_minus: f64, a: u64, m0: u32, delta1: f64, mu: f64) -> (f64, f64, i64) {
    let mut hp = Hp::new();
    let (ep, em, a_b, mu_b) = (hp.num(e_plus), hp.num(e_minus), hp.int(a as i64), hp.num(mu));
    let one = hp.int(1);
    let inv_m0 = one.div(&hp.int(m0 as i64), P, RM);
    let root = hp.pow(&a_b, &inv_m0);
    let base = em.div(&root, P, RM);
    let g = hp.log(&ep, &base);
    let d = one.sub(&one.sub(&g, P, RM).mul(&mu_b, P, RM), P, RM);
    let dl = hp.num(delta1);
    let expo = one.sub(&hp.log(&ep, &dl), P, RM);
    let f = a_b.mul(&hp.pow(&base, &expo), P, RM);
    let two = hp.int(2);
    let lf = hp.log(&two, &f);
    let inner = lf.div(&d, P, RM);
    let n0_raw = hp.log(&mu_b, &inner);
    let n0 = hp.f(&n0_raw).floor() as i64;
    (hp.f(&d), hp.f(&f), n0)
}

/// `1/2 - (2^n - 1)^{1/n} / 4` at 320 bits.
pub fn tent_threshold(n: u32) -> f64 {
    let mut hp = Hp::new();
    let m = hp.int((1i64 << n) - 1);
    let e = hp.int(1).div(&hp.int(n as i64), P, RM);
    let root = hp.pow(&m, &e);
    let v = hp.num(0.5).sub(&root.div(&hp.int(4), P, RM), P, RM);
    hp.f(&v)
}
