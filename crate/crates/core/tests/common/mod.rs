//! Helpers shared by the integration tests.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

const TERMS: u64 = 200;

/// Natural log of a positive big integer from its leading 60 bits.
fn ln_bigint(x: &BigInt) -> f64 {
    assert!(x.is_positive());
    let bits = x.bits();
    let shift = bits.saturating_sub(60);
    let top: BigInt = x >> shift;
    let top: u64 = top.try_into().unwrap();
    (top as f64).ln() + shift as f64 * std::f64::consts::LN_2
}

fn ln_rational(q: &BigRational) -> f64 {
    ln_bigint(q.numer()) - ln_bigint(q.denom())
}

/// `lambda` as an exact rational (every test value is a multiple of 1/4).
fn exact(lambda: f64) -> BigRational {
    let quarters = (lambda * 4.0).round();
    assert_eq!(quarters / 4.0, lambda);
    BigRational::new(BigInt::from(quarters as i64), BigInt::from(4))
}

/// `ln P(Poisson(lambda) > x)` as `-lambda + ln sum_{j=m}^{m+199} lambda^j / j!`
/// with `m = floor(x) + 1`.
pub fn oracle_log_sf(lambda: f64, x: f64) -> f64 {
    let l = exact(lambda);
    let m = x.floor() as u64 + 1;
    let mut term = BigRational::one();
    for j in 1..=m {
        term = term * &l / BigRational::from_integer(BigInt::from(j));
    }
    let mut sum = BigRational::zero();
    for j in m..m + TERMS {
        sum += &term;
        term = term * &l / BigRational::from_integer(BigInt::from(j + 1));
    }
    -lambda + ln_rational(&sum)
}
