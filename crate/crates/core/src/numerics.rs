//! Exact rationals and certified rational enclosures.
//!
//! Every coordinate of the construction is an exact [`Rational`]. Values of
//! the limit function are only known to lie inside an [`Enclosure`], a closed
//! rational interval whose width is the certified error bound.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Exact reduced fraction with a positive denominator.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(BigRational);

impl Rational {
    /// Reduce `num/den`, moving the sign onto the numerator.
    pub fn new(num: impl Into<BigInt>, den: impl Into<BigInt>) -> Result<Self> {
        let den = den.into();
        if den.is_zero() {
            return invalid("zero denominator");
        }
        Ok(Rational(BigRational::new(num.into(), den)))
    }

    pub fn from_integer(n: impl Into<BigInt>) -> Self {
        Rational(BigRational::from_integer(n.into()))
    }

    /// Shorthand for small literals; panics on a zero denominator.
    pub fn frac(num: i64, den: i64) -> Self {
        Self::new(num, den).expect("nonzero denominator")
    }

    pub fn zero() -> Self {
        Rational(BigRational::zero())
    }

    pub fn one() -> Self {
        Rational(BigRational::one())
    }

    /// `2^k` for any integer exponent.
    pub fn pow2(k: i64) -> Self {
        let p = BigInt::one() << k.unsigned_abs();
        if k >= 0 {
            Self::from_integer(p)
        } else {
            Rational(BigRational::new_raw(BigInt::one(), p))
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

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn abs(&self) -> Self {
        Rational(self.0.abs())
    }

    pub fn recip(&self) -> Result<Self> {
        if self.is_zero() {
            return invalid("reciprocal of zero");
        }
        Ok(Rational(self.0.recip()))
    }

    /// Midpoint of `self` and `other`.
    pub fn midpoint(&self, other: &Rational) -> Rational {
        (self + other) / Rational::from_integer(2)
    }

    pub fn floor(&self) -> BigInt {
        self.0.floor().to_integer()
    }

    /// Smallest `k` with `2^k >= self`; `self` must be positive.
    pub fn ceil_log2(&self) -> Result<i64> {
        if !self.is_positive() {
            return invalid("log2 of a nonpositive rational");
        }
        let mut k = self.numer().bits() as i64 - self.denom().bits() as i64 - 1;
        while Rational::pow2(k) < *self {
            k += 1;
        }
        while Rational::pow2(k - 1) >= *self {
            k -= 1;
        }
        Ok(k)
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Decimal rendering rounded half away from zero to `digits` places.
    /// Display only; never parsed back.
    pub fn to_decimal(&self, digits: usize) -> String {
        let scale = BigInt::from(10u32).pow(digits as u32);
        let scaled = self.0.abs() * BigRational::from_integer(scale.clone());
        let rounded = (scaled + BigRational::new(BigInt::one(), BigInt::from(2)))
            .floor()
            .to_integer();
        let (int, frac) = rounded.div_rem(&scale);
        let sign = if self.is_negative() && !rounded.is_zero() {
            "-"
        } else {
            ""
        };
        if digits == 0 {
            format!("{sign}{int}")
        } else {
            format!("{sign}{int}.{:0>width$}", frac, width = digits)
        }
    }

    pub fn min(self, other: Rational) -> Rational {
        if other < self {
            other
        } else {
            self
        }
    }

    pub fn max(self, other: Rational) -> Rational {
        if other > self {
            other
        } else {
            self
        }
    }

    pub fn as_big(&self) -> &BigRational {
        &self.0
    }
}

impl From<i64> for Rational {
    fn from(n: i64) -> Self {
        Rational::from_integer(n)
    }
}

impl From<BigRational> for Rational {
    fn from(r: BigRational) -> Self {
        Rational(r)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.numer(), self.0.denom())
    }
}

impl fmt::Debug for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Rational {
    type Err = Error;

    /// Accepts `num/den` or a bare integer.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(s.to_string());
        let parse_int = |t: &str| -> Result<BigInt> {
            let t = t.trim();
            if t.is_empty() || t.starts_with('+') && t.len() == 1 {
                return Err(bad());
            }
            t.parse::<BigInt>().map_err(|_| bad())
        };
        match s.split_once('/') {
            Some((n, d)) => {
                let den = parse_int(d)?;
                if den.sign() == Sign::NoSign {
                    return Err(bad());
                }
                Rational::new(parse_int(n)?, den)
            }
            None => Ok(Rational::from_integer(parse_int(s)?)),
        }
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
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
        impl $trait<&Rational> for &Rational {
            type Output = Rational;
            fn $method(self, rhs: &Rational) -> Rational {
                Rational((&self.0).$method(&rhs.0))
            }
        }
        impl $trait<Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational(self.0.$method(rhs.0))
            }
        }
        impl $trait<&Rational> for Rational {
            type Output = Rational;
            fn $method(self, rhs: &Rational) -> Rational {
                Rational(self.0.$method(&rhs.0))
            }
        }
        impl $trait<Rational> for &Rational {
            type Output = Rational;
            fn $method(self, rhs: Rational) -> Rational {
                Rational((&self.0).$method(rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);
// Division by zero panics, as for the underlying big rationals.
forward_binop!(Div, div);

impl Neg for Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-self.0)
    }
}

impl Neg for &Rational {
    type Output = Rational;
    fn neg(self) -> Rational {
        Rational(-&self.0)
    }
}

impl std::iter::Sum for Rational {
    fn sum<I: Iterator<Item = Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

impl<'a> std::iter::Sum<&'a Rational> for Rational {
    fn sum<I: Iterator<Item = &'a Rational>>(iter: I) -> Rational {
        iter.fold(Rational::zero(), |acc, x| acc + x)
    }
}

/// Closed interval `[lo, hi]` certified to contain a real value.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Enclosure {
    lo: Rational,
    hi: Rational,
}

impl Enclosure {
    pub fn new(lo: Rational, hi: Rational) -> Result<Self> {
        if lo > hi {
            return invalid(format!("enclosure bounds out of order: [{lo}, {hi}]"));
        }
        Ok(Enclosure { lo, hi })
    }

    /// Enclosure of the two endpoints in whichever order they come.
    pub fn spanning(a: Rational, b: Rational) -> Self {
        if a <= b {
            Enclosure { lo: a, hi: b }
        } else {
            Enclosure { lo: b, hi: a }
        }
    }

    pub fn point(v: Rational) -> Self {
        Enclosure {
            lo: v.clone(),
            hi: v,
        }
    }

    pub fn lo(&self) -> &Rational {
        &self.lo
    }

    pub fn hi(&self) -> &Rational {
        &self.hi
    }

    pub fn width(&self) -> Rational {
        &self.hi - &self.lo
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn midpoint(&self) -> Rational {
        self.lo.midpoint(&self.hi)
    }

    pub fn contains(&self, v: &Rational) -> bool {
        &self.lo <= v && v <= &self.hi
    }

    pub fn is_subset_of(&self, other: &Enclosure) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn intersects(&self, other: &Enclosure) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }

    /// Smallest enclosure containing both arguments.
    pub fn hull(&self, other: &Enclosure) -> Enclosure {
        Enclosure {
            lo: self.lo.clone().min(other.lo.clone()),
            hi: self.hi.clone().max(other.hi.clone()),
        }
    }

    /// Interval difference `self - other`.
    pub fn sub(&self, other: &Enclosure) -> Enclosure {
        Enclosure {
            lo: &self.lo - &other.hi,
            hi: &self.hi - &other.lo,
        }
    }

    /// Multiplication by an exact scalar of either sign.
    pub fn scale(&self, k: &Rational) -> Enclosure {
        Enclosure::spanning(&self.lo * k, &self.hi * k)
    }

    /// Lower bound on `|v|` over the enclosure (zero when it straddles zero).
    pub fn magnitude_lower(&self) -> Rational {
        if self.lo.is_positive() {
            self.lo.clone()
        } else if self.hi.is_negative() {
            -&self.hi
        } else {
            Rational::zero()
        }
    }
}

impl fmt::Display for Enclosure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl fmt::Debug for Enclosure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn r(n: i64, d: i64) -> Rational {
        Rational::frac(n, d)
    }

    fn enc(a: Rational, b: Rational) -> Enclosure {
        Enclosure::new(a, b).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(Rational::new(2, 4).unwrap().to_string(), "1/2");
        assert_eq!(Rational::new(-3, -6).unwrap().to_string(), "1/2");
        assert_eq!(Rational::new(0, 7).unwrap().to_string(), "0/1");
        assert!(matches!(
            Rational::new(1, 0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("3/16".parse::<Rational>().unwrap(), r(3, 16));
        assert_eq!("-4/8".parse::<Rational>().unwrap(), r(-1, 2));
        assert_eq!("7".parse::<Rational>().unwrap(), r(7, 1));
        assert_eq!(r(7, 1).to_string(), "7/1");
        for bad in ["", "1/", "/2", "1/0", "a/b", "1.5", "1/2/3"] {
            assert!(bad.parse::<Rational>().is_err(), "{bad}");
        }
    }

    #[test]
    fn serde_uses_fraction_strings() {
        let json = serde_json::to_string(&r(-5, 10)).unwrap();
        assert_eq!(json, "\"-1/2\"");
        let back: Rational = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r(-1, 2));
    }

    #[test]
    fn pow2_and_log2() {
        assert_eq!(Rational::pow2(3), r(8, 1));
        assert_eq!(Rational::pow2(-3), r(1, 8));
        assert_eq!(r(9, 1).ceil_log2().unwrap(), 4);
        assert_eq!(r(8, 1).ceil_log2().unwrap(), 3);
        assert_eq!(r(1, 3).ceil_log2().unwrap(), -1);
        assert_eq!(r(1, 4).ceil_log2().unwrap(), -2);
    }

    #[test]
    fn decimal_rendering() {
        assert_eq!(r(1, 3).to_decimal(4), "0.3333");
        assert_eq!(r(2, 3).to_decimal(2), "0.67");
        assert_eq!(r(-1, 8).to_decimal(2), "-0.13");
        assert_eq!(r(5, 1).to_decimal(0), "5");
    }

    #[test]
    fn hull_examples() {
        let a = enc(r(0, 1), r(1, 4));
        let b = enc(r(1, 8), r(1, 2));
        assert_eq!(a.hull(&b), enc(r(0, 1), r(1, 2)));
        let p = Enclosure::point(r(1, 3));
        assert_eq!(p.hull(&p), p);
        let z = Enclosure::point(r(0, 1));
        let o = Enclosure::point(r(1, 1));
        assert_eq!(z.hull(&o), enc(r(0, 1), r(1, 1)));
    }

    #[test]
    fn enclosure_rejects_reversed_bounds() {
        assert!(Enclosure::new(r(1, 2), r(1, 3)).is_err());
    }

    fn arb_rational() -> impl Strategy<Value = Rational> {
        (-10_000i64..10_000, 1i64..10_000).prop_map(|(n, d)| r(n, d))
    }

    fn arb_enclosure() -> impl Strategy<Value = Enclosure> {
        (arb_rational(), arb_rational()).prop_map(|(a, b)| Enclosure::spanning(a, b))
    }

    proptest! {
        #[test]
        fn field_identities(a in arb_rational(), b in arb_rational()) {
            prop_assert_eq!((&a + &b) - &b, a.clone());
            if !a.is_zero() {
                prop_assert_eq!(&a * a.recip().unwrap(), Rational::one());
            }
            prop_assert!(a.denom() > &BigInt::zero());
            prop_assert!(a.numer().gcd(a.denom()).is_one());
        }

        #[test]
        fn display_parse_roundtrip(a in arb_rational()) {
            prop_assert_eq!(a.to_string().parse::<Rational>().unwrap(), a);
        }

        #[test]
        fn hull_laws(a in arb_enclosure(), b in arb_enclosure(), c in arb_enclosure()) {
            prop_assert_eq!(a.hull(&b), b.hull(&a));
            prop_assert_eq!(a.hull(&b).hull(&c), a.hull(&b.hull(&c)));
            prop_assert_eq!(a.hull(&a), a.clone());
            prop_assert!(a.is_subset_of(&a.hull(&b)));
        }
    }
}
