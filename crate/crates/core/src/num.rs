//! Scalar abstraction for the analytic pipeline.
//!
//! All closed-form computations (moments, quadratic forms, normal equations,
//! allocation) are generic over [`Real`]. Two instantiations are provided:
//! plain `f64`, and [`DoubleDouble`], an unevaluated sum of two `f64` with
//! roughly 31 significant digits.
//!
//! The second one matters: geometric model families with several expansion
//! rates produce covariance submatrices whose condition number grows like
//! `2^{2(γ^q - γ^2)(ℓ + ℓ0)}`. Around condition 1e13 the f64 route loses
//! three to four digits in exactly the quantities the variance comparisons
//! are about, while the double-double route keeps ~18 digits of headroom.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar used by the analytic (non-sampling) computations.
pub trait Real:
    Copy
    + PartialEq
    + PartialOrd
    + fmt::Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// Short name used in diagnostics ("f64" or "dd").
    const NAME: &'static str;

    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    /// Nearest f64 (exact for `f64`, the high word plus low word for dd).
    fn to_f64(self) -> f64;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    /// Machine epsilon of the representation.
    fn epsilon() -> f64;
    /// Exact power of two. Exponents of interest stay well inside f64 range.
    fn exp2i(e: i32) -> Self;
    fn is_finite(self) -> bool;

    /// `2^x`, exact whenever `x` is integral.
    fn pow2(x: f64) -> Self {
        if x.fract() == 0.0 && x.abs() < 1000.0 {
            Self::exp2i(x as i32)
        } else {
            Self::from_f64(x.exp2())
        }
    }

    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    fn max_val(self, other: Self) -> Self {
        if self > other {
            self
        } else {
            other
        }
    }

    fn recip(self) -> Self {
        Self::one() / self
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn epsilon() -> f64 {
        f64::EPSILON
    }
    fn exp2i(e: i32) -> Self {
        f64::exp2(e as f64)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Error-free transform: `a + b = s + e` exactly, no magnitude assumption.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let e = (a - (s - bb)) + (b - bb);
    (s, e)
}

/// Error-free transform assuming `|a| >= |b|`.
#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let e = b - (s - a);
    (s, e)
}

/// Error-free product via fused multiply-add.
#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let e = a.mul_add(b, -p);
    (p, e)
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
///
/// Classic Dekker/Knuth double-double arithmetic; about 31 significant
/// decimal digits. Only the operations the toolkit needs are implemented.
#[derive(Clone, Copy, Default)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

pub type DD = DoubleDouble;

impl DoubleDouble {
    pub const ZERO: Self = DoubleDouble { hi: 0.0, lo: 0.0 };
    pub const ONE: Self = DoubleDouble { hi: 1.0, lo: 0.0 };

    #[inline]
    pub fn new(hi: f64, lo: f64) -> Self {
        let (s, e) = quick_two_sum(hi, lo);
        DoubleDouble { hi: s, lo: e }
    }

    #[inline]
    pub fn from_f64(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn hi(self) -> f64 {
        self.hi
    }

    #[inline]
    pub fn lo(self) -> f64 {
        self.lo
    }

    #[inline]
    fn add_dd(self, rhs: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, rhs.hi);
        let (t1, t2) = two_sum(self.lo, rhs.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (s1, s2) = quick_two_sum(s1, s2 + t2);
        DoubleDouble { hi: s1, lo: s2 }
    }

    #[inline]
    fn mul_dd(self, rhs: Self) -> Self {
        let (p1, p2) = two_prod(self.hi, rhs.hi);
        let p2 = p2 + (self.hi * rhs.lo + self.lo * rhs.hi);
        let (s, e) = quick_two_sum(p1, p2);
        DoubleDouble { hi: s, lo: e }
    }

    #[inline]
    fn div_dd(self, rhs: Self) -> Self {
        let q1 = self.hi / rhs.hi;
        let r = self.add_dd(-(rhs.mul_dd(Self::from_f64(q1))));
        let q2 = r.hi / rhs.hi;
        let r = r.add_dd(-(rhs.mul_dd(Self::from_f64(q2))));
        let q3 = r.hi / rhs.hi;
        let (s, e) = quick_two_sum(q1, q2);
        Self::new(s, e + q3)
    }

    pub fn sqrt_dd(self) -> Self {
        if self.hi == 0.0 && self.lo == 0.0 {
            return Self::ZERO;
        }
        // One dd Newton step on an f64 seed doubles the correct digits.
        let y = self.hi.sqrt();
        let ydd = Self::from_f64(y);
        let r = self.add_dd(-(ydd.mul_dd(ydd)));
        ydd.add_dd(Self::from_f64(r.hi / (2.0 * y)))
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self.add_dd(rhs)
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        self.add_dd(-rhs)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        self.mul_dd(rhs)
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        self.div_dd(rhs)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl AddAssign for DoubleDouble {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        *self = self.add_dd(rhs);
    }
}

impl SubAssign for DoubleDouble {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        *self = self.add_dd(-rhs);
    }
}

impl MulAssign for DoubleDouble {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = self.mul_dd(rhs);
    }
}

impl PartialEq for DoubleDouble {
    fn eq(&self, other: &Self) -> bool {
        self.hi == other.hi && self.lo == other.lo
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            ord => ord,
        }
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dd({:e}, {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.hi + self.lo)
    }
}

impl Real for DoubleDouble {
    const NAME: &'static str = "dd";

    fn zero() -> Self {
        Self::ZERO
    }
    fn one() -> Self {
        Self::ONE
    }
    fn from_f64(x: f64) -> Self {
        Self::from_f64(x)
    }
    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
    fn sqrt(self) -> Self {
        self.sqrt_dd()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 || (self.hi == 0.0 && self.lo < 0.0) {
            -self
        } else {
            self
        }
    }
    fn epsilon() -> f64 {
        4.93e-32
    }
    fn exp2i(e: i32) -> Self {
        Self::from_f64(f64::exp2(e as f64))
    }
    fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(x: f64) -> DD {
        DD::from_f64(x)
    }

    #[test]
    fn add_tracks_cancellation_below_f64() {
        // (1 + 2^-80) - 1 vanishes in f64 but not in dd.
        let tiny = DD::exp2i(-80);
        let x = (DD::ONE + tiny) - DD::ONE;
        assert_eq!(x.to_f64(), f64::exp2(-80.0));
    }

    #[test]
    fn mul_recovers_low_part() {
        // (1 + 2^-30)^2 = 1 + 2^-29 + 2^-60 exactly, representable in dd.
        let x = DD::ONE + DD::exp2i(-30);
        let sq = x * x;
        let expect = DD::ONE + DD::exp2i(-29) + DD::exp2i(-60);
        assert_eq!((sq - expect).to_f64(), 0.0);
    }

    #[test]
    fn div_roundtrip() {
        let a = dd(3.7) / dd(1.3);
        let back = a * dd(1.3) - dd(3.7);
        assert!(back.to_f64().abs() < 1e-30);
    }

    #[test]
    fn sqrt_squares_back() {
        let a = dd(2.0).sqrt_dd();
        let err = (a * a - dd(2.0)).to_f64().abs();
        assert!(err < 1e-30, "err = {err:e}");
    }

    #[test]
    fn ordering_uses_low_word() {
        let a = DD::ONE + DD::exp2i(-80);
        assert!(a > DD::ONE);
        assert!(DD::ONE < a);
    }

    #[test]
    fn pow2_integral_is_exact() {
        let x = <DD as Real>::pow2(-60.0);
        assert_eq!(x.to_f64(), f64::exp2(-60.0));
        assert_eq!(x.lo(), 0.0);
    }
}
