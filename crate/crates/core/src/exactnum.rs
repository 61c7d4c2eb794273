//! Exact rationals and ℓ-adic valuations.
//!
//! Every density, measure and correction factor in the crate is a
//! [`Rational`]: an arbitrary-precision fraction kept in lowest terms with a
//! positive denominator. Equality is therefore syntactic, which is what the
//! fixture comparisons rely on.

use std::fmt;
use std::iter::{Product, Sum};
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

pub use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// An exact rational number in canonical form.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rational(BigRational);

impl Rational {
    /// Builds `num/den`. Panics when `den` is zero.
    pub fn new(num: impl Into<BigInt>, den: impl Into<BigInt>) -> Self {
        Rational(BigRational::new(num.into(), den.into()))
    }

    pub fn integer(n: impl Into<BigInt>) -> Self {
        Rational(BigRational::from_integer(n.into()))
    }

    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    /// `count / total` for enumeration results.
    pub fn ratio(count: u64, total: u64) -> Self {
        Rational::new(count, total)
    }

    /// `base^exp` for a possibly negative exponent.
    pub fn power(base: u64, exp: i64) -> Self {
        let b = BigInt::from(base);
        let p = num_traits::pow(b, exp.unsigned_abs() as usize);
        if exp >= 0 {
            Rational::integer(p)
        } else {
            Rational::new(1, p)
        }
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn recip(&self) -> Self {
        Rational(self.0.recip())
    }

    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Decimal rendering truncated (not rounded) to `places` digits, in the
    /// style `0.22115`.
    pub fn decimal(&self, places: usize) -> String {
        let scale = num_traits::pow(BigInt::from(10), places);
        let neg = self.is_negative();
        let abs = self.0.abs();
        let scaled = (abs.numer() * &scale).div_floor(abs.denom());
        let (int, frac) = scaled.div_rem(&scale);
        let sign = if neg { "-" } else { "" };
        if places == 0 {
            return format!("{sign}{int}");
        }
        format!("{sign}{int}.{:0>width$}", frac.to_string(), width = places)
    }

    /// Checks the canonical-form invariant: gcd(|num|, den) = 1 and den > 0.
    pub fn is_canonical(&self) -> bool {
        self.denom().is_positive() && self.numer().gcd(self.denom()).is_one()
    }

    pub fn as_big_rational(&self) -> &BigRational {
        &self.0
    }
}

impl From<i64> for Rational {
    fn from(n: i64) -> Self {
        Rational::integer(n)
    }
}

impl From<BigRational> for Rational {
    fn from(r: BigRational) -> Self {
        Rational(r)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidInput(format!("not a rational: {s:?}"));
        let s = s.trim();
        match s.split_once('/') {
            Some((n, d)) => {
                let n: BigInt = n.trim().parse().map_err(|_| bad())?;
                let d: BigInt = d.trim().parse().map_err(|_| bad())?;
                if d.is_zero() {
                    return Err(bad());
                }
                Ok(Rational::new(n, d))
            }
            None => Ok(Rational::integer(s.parse::<BigInt>().map_err(|_| bad())?)),
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl $trait<Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational(self.0.$method(rhs.0))
            }
        }
        impl<'a> $trait<&'a Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: &'a Rational) -> Rational {
                Rational(self.0.$method(&rhs.0))
            }
        }
        impl<'a> $trait<Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational((&self.0).$method(rhs.0))
            }
        }
        impl<'a, 'b> $trait<&'b Rational> for &'a Rational {
            type Output = Rational;
            fn $method(self, rhs: &'b Rational) -> Rational {
                Rational((&self.0).$method(&rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
forward_binop!(Div, div);

impl AddAssign<&Rational> for Rational {
    fn add_assign(&mut self, rhs: &Rational) {
        self.0 += &rhs.0;
    }
}

impl AddAssign for Rational {
    fn add_assign(&mut self, rhs: Rational) {
        self.0 += rhs.0;
    }
}

impl SubAssign<&Rational> for Rational {
    fn sub_assign(&mut self, rhs: &Rational) {
        self.0 -= &rhs.0;
    }
}

impl MulAssign<&Rational> for Rational {
    fn mul_assign(&mut self, rhs: &Rational) {
        self.0 *= &rhs.0;
    }
}

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Self {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

impl<'a> Sum<&'a Rational> for Rational {
    fn sum<I: Iterator<Item = &'a Rational>>(iter: I) -> Self {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

impl Product for Rational {
    fn product<I: Iterator<Item = Rational>>(iter: I) -> Self {
        iter.fold(Rational::one(), |acc, x| acc * x)
    }
}

/// An ℓ-adic valuation; zero has infinite valuation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Valuation {
    Finite(i64),
    Infinite,
}

impl Valuation {
    pub fn finite(self) -> Option<i64> {
        match self {
            Valuation::Finite(v) => Some(v),
            Valuation::Infinite => None,
        }
    }
}

impl fmt::Display for Valuation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Valuation::Finite(v) => write!(f, "{v}"),
            Valuation::Infinite => write!(f, "+inf"),
        }
    }
}

/// Trial-division primality test; `ell` is always small in this crate.
pub fn is_prime_big(n: &BigInt) -> bool {
    if n < &BigInt::from(2) {
        return false;
    }
    match n.to_u64() {
        Some(v) => is_prime_u64(v),
        None => {
            let mut d = BigInt::from(2);
            while &d * &d <= *n {
                if (n % &d).is_zero() {
                    return false;
                }
                d += 1;
            }
            true
        }
    }
}

pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    if n.is_multiple_of(2) {
        return n == 2;
    }
    let mut d = 3u64;
    while d * d <= n {
        if n.is_multiple_of(d) {
            return false;
        }
        d += 2;
    }
    true
}

fn require_prime(ell: &BigInt) -> Result<()> {
    if is_prime_big(ell) {
        Ok(())
    } else {
        Err(Error::NotPrime { value: ell.to_string() })
    }
}

fn int_valuation(mut n: BigInt, ell: &BigInt) -> (i64, BigInt) {
    let mut v = 0;
    loop {
        let (q, r) = n.div_rem(ell);
        if !r.is_zero() {
            return (v, n);
        }
        n = q;
        v += 1;
    }
}

/// The ℓ-adic valuation of a rational; `Infinite` exactly for zero.
pub fn v_ell(x: &Rational, ell: &BigInt) -> Result<Valuation> {
    require_prime(ell)?;
    if x.is_zero() {
        return Ok(Valuation::Infinite);
    }
    let (vn, _) = int_valuation(x.numer().abs(), ell);
    let (vd, _) = int_valuation(x.denom().clone(), ell);
    Ok(Valuation::Finite(vn - vd))
}

/// True iff the denominator of `x` is a power of ℓ, i.e. `x ∈ Z[1/ℓ]`.
pub fn in_z_inv_ell(x: &Rational, ell: &BigInt) -> Result<bool> {
    require_prime(ell)?;
    let (_, rest) = int_valuation(x.denom().clone(), ell);
    Ok(rest.is_one())
}

/// `Σ_{k ≥ start} ℓ^{-k·step} = ℓ^{-start·step} / (1 − ℓ^{-step})`.
pub fn geometric_tail(ell: u64, step: u32, start: u32) -> Rational {
    assert!(step >= 1, "geometric_tail needs a positive exponent step");
    let ratio = Rational::power(ell, -(step as i64));
    let first = Rational::power(ell, -(step as i64) * start as i64);
    first / (Rational::one() - ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    fn big(n: i64) -> BigInt {
        BigInt::from(n)
    }

    #[test]
    fn valuation_examples() {
        assert_eq!(v_ell(&Rational::zero(), &big(3)).unwrap(), Valuation::Infinite);
        assert_eq!(v_ell(&Rational::one(), &big(5)).unwrap(), Valuation::Finite(0));
        assert_eq!(v_ell(&r(18, 25), &big(5)).unwrap(), Valuation::Finite(-2));
        assert_eq!(v_ell(&r(-18, 25), &big(3)).unwrap(), Valuation::Finite(2));
        assert!(matches!(v_ell(&r(1, 2), &big(6)), Err(Error::NotPrime { .. })));
    }

    #[test]
    fn z_inv_ell_examples() {
        let x = r(23, 104) * Rational::integer(93184);
        assert!(in_z_inv_ell(&x, &big(3)).unwrap());
        assert!(in_z_inv_ell(&r(1, 2), &big(2)).unwrap());
        assert!(!in_z_inv_ell(&r(1, 6), &big(2)).unwrap());
        assert!(in_z_inv_ell(&r(7, 1), &big(2)).unwrap());
    }

    #[test]
    fn geometric_tail_examples() {
        assert_eq!(geometric_tail(3, 2, 1), r(1, 8));
        assert_eq!(geometric_tail(2, 1, 0), r(2, 1));
        assert_eq!(geometric_tail(3, 6, 1), r(1, 728));
    }

    #[test]
    fn display_and_parse() {
        assert_eq!(r(4, -6).to_string(), "-2/3");
        assert_eq!(r(6, 3).to_string(), "2");
        assert_eq!("16801/18816".parse::<Rational>().unwrap(), r(16801, 18816));
        assert_eq!("-4".parse::<Rational>().unwrap(), r(-4, 1));
        assert!("1/0".parse::<Rational>().is_err());
        assert!("x".parse::<Rational>().is_err());
        assert_eq!(r(23, 104).decimal(5), "0.22115");
        assert_eq!(r(1, 1).decimal(3), "1.000");
    }

    #[test]
    fn canonical_after_arithmetic() {
        let x = r(2, 4) + r(1, 6) - r(3, 9);
        assert!(x.is_canonical());
        assert_eq!(x, r(1, 3));
    }

    #[test]
    fn large_intermediates_do_not_overflow() {
        let mut acc = Rational::zero();
        for k in 0..200 {
            acc += &Rational::power(13, -k);
        }
        assert!(acc.denom().bits() > 64);
        assert!(acc.is_canonical());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn nonzero_rational() -> impl Strategy<Value = Rational> {
            (-10_000i64..10_000, 1i64..10_000)
                .prop_filter("nonzero", |(n, _)| *n != 0)
                .prop_map(|(n, d)| Rational::new(n, d))
        }

        proptest! {
            #[test]
            fn valuation_is_additive(x in nonzero_rational(), y in nonzero_rational(), ell in prop::sample::select(vec![2i64, 3, 5, 7, 13])) {
                let vx = v_ell(&x, &big(ell)).unwrap().finite().unwrap();
                let vy = v_ell(&y, &big(ell)).unwrap().finite().unwrap();
                let vxy = v_ell(&(&x * &y), &big(ell)).unwrap().finite().unwrap();
                prop_assert_eq!(vxy, vx + vy);
            }

            #[test]
            fn geometric_tail_telescopes(ell in prop::sample::select(vec![2u64, 3, 5, 13]), step in 1u32..5, start in 0u32..6) {
                let diff = geometric_tail(ell, step, start) - geometric_tail(ell, step, start + 1);
                prop_assert_eq!(diff, Rational::power(ell, -((start * step) as i64)));
            }

            #[test]
            fn string_round_trip(n in -1_000_000i64..1_000_000, d in 1i64..1_000_000) {
                let x = Rational::new(n, d);
                prop_assert!(x.is_canonical());
                prop_assert_eq!(x.to_string().parse::<Rational>().unwrap(), x);
            }
        }
    }
}
