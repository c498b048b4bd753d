//! Outward-rounded interval arithmetic.

use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// A closed interval `[lo, hi]`. Every operation returns an interval that
/// contains the exact image of its arguments.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn down(x: f64) -> f64 {
    x.next_down()
}

fn up(x: f64) -> f64 {
    x.next_up()
}

/// Widening for library functions that are accurate to a few ulps.
fn down2(x: f64) -> f64 {
    x.next_down().next_down()
}

fn up2(x: f64) -> f64 {
    x.next_up().next_up()
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan(), "empty interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    /// `max(|lo|, |hi|)`.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    /// Intersection, or `None` when disjoint.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn abs(&self) -> Interval {
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            Interval::new(-self.hi, -self.lo)
        } else {
            Interval::new(0.0, self.mag())
        }
    }

    /// Range of the derivative of `|x|`, taking `[-1, 1]` across zero.
    pub fn sign(&self) -> Interval {
        if self.lo > 0.0 {
            Interval::point(1.0)
        } else if self.hi < 0.0 {
            Interval::point(-1.0)
        } else {
            Interval::new(
                if self.lo < 0.0 { -1.0 } else { 0.0 },
                if self.hi > 0.0 { 1.0 } else { 0.0 },
            )
        }
    }

    pub fn exp(&self) -> Interval {
        Interval::new(down2(self.lo.exp()).max(0.0), up2(self.hi.exp()))
    }

    /// Natural logarithm; `None` unless the interval is strictly positive.
    pub fn ln(&self) -> Option<Interval> {
        (self.lo > 0.0).then(|| Interval::new(down2(self.lo.ln()), up2(self.hi.ln())))
    }

    pub fn cos(&self) -> Interval {
        self.trig(0.0)
    }

    pub fn sin(&self) -> Interval {
        // sin(x) = cos(x - π/2)
        self.trig(0.5 * PI)
    }

    /// Range of `cos(x - phase)`.
    fn trig(&self, phase: f64) -> Interval {
        if !self.is_finite() || self.width() >= 2.0 * PI {
            return Interval::new(-1.0, 1.0);
        }
        let f = |x: f64| (x - phase).cos();
        let (a, b) = (f(self.lo), f(self.hi));
        // The shifted argument carries a rounding error of order ulp(x).
        let pad = 4.0 * f64::EPSILON * (1.0 + self.mag());
        let mut lo = down2(a.min(b) - pad);
        let mut hi = up2(a.max(b) + pad);
        // Extrema of cos(x - phase) sit at x = phase + kπ. A small relative
        // slack makes multiples on the boundary count as inside.
        let slack = 1e-12 * (1.0 + self.mag());
        let k_lo = ((self.lo - phase - slack) / PI).ceil() as i64;
        let k_hi = ((self.hi - phase + slack) / PI).floor() as i64;
        for k in k_lo..=k_hi {
            if k.rem_euclid(2) == 0 {
                hi = 1.0;
            } else {
                lo = -1.0;
            }
        }
        Interval::new(lo.max(-1.0), hi.min(1.0))
    }

    /// Integer power.
    pub fn powi(&self, n: i32) -> Option<Interval> {
        if n == 0 {
            return Some(Interval::point(1.0));
        }
        if n < 0 {
            return Interval::point(1.0).checked_div(&self.powi(-n)?);
        }
        let widen = |x: f64, upward: bool| {
            let rel = (n as f64 + 2.0) * f64::EPSILON * x.abs();
            if upward {
                up(x + rel)
            } else {
                down(x - rel)
            }
        };
        let (a, b) = (self.lo.powi(n), self.hi.powi(n));
        if n % 2 == 1 {
            Some(Interval::new(widen(a, false), widen(b, true)))
        } else if self.lo >= 0.0 {
            Some(Interval::new(widen(a, false).max(0.0), widen(b, true)))
        } else if self.hi <= 0.0 {
            Some(Interval::new(widen(b, false).max(0.0), widen(a, true)))
        } else {
            Some(Interval::new(0.0, widen(a.max(b), true)))
        }
    }

    /// Division; `None` when the divisor contains zero.
    pub fn checked_div(&self, rhs: &Interval) -> Option<Interval> {
        if rhs.contains_zero() {
            return None;
        }
        let c = [self.lo / rhs.lo, self.lo / rhs.hi, self.hi / rhs.lo, self.hi / rhs.hi];
        Some(Interval::new(down(min4(c)), up(max4(c))))
    }

    /// Splits at the midpoint.
    pub fn bisect(&self) -> (Interval, Interval) {
        let m = self.mid();
        (Interval::new(self.lo, m), Interval::new(m, self.hi))
    }
}

fn min4(c: [f64; 4]) -> f64 {
    c.iter().copied().fold(f64::INFINITY, f64::min)
}

fn max4(c: [f64; 4]) -> f64 {
    c.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        Interval::new(down(self.lo + rhs.lo), up(self.hi + rhs.hi))
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, rhs: Interval) -> Interval {
        Interval::new(down(self.lo - rhs.hi), up(self.hi - rhs.lo))
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let c = [self.lo * rhs.lo, self.lo * rhs.hi, self.hi * rhs.lo, self.hi * rhs.hi];
        if c.iter().any(|v| v.is_nan()) {
            return Interval::new(f64::NEG_INFINITY, f64::INFINITY);
        }
        let (lo, hi) = (min4(c), max4(c));
        // Products that are exactly zero need no widening.
        Interval::new(
            if lo == 0.0 { 0.0 } else { down(lo) },
            if hi == 0.0 { 0.0 } else { up(hi) },
        )
    }
}

impl Div for Interval {
    type Output = Interval;
    /// Panics if `rhs` contains zero; use [`Interval::checked_div`].
    fn div(self, rhs: Interval) -> Interval {
        self.checked_div(&rhs)
            .expect("interval division by an interval containing zero")
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_encloses() {
        let a = Interval::new(1.0, 2.0);
        let b = Interval::new(-3.0, 0.5);
        let s = a + b;
        assert!(s.lo <= -2.0 && s.hi >= 2.5);
        let p = a * b;
        assert!(p.lo <= -6.0 && p.hi >= 1.0);
        assert!(a.checked_div(&b).is_none());
        let q = b / a;
        assert!(q.lo <= -3.0 && q.hi >= 0.5);
    }

    #[test]
    fn thin_intervals_round_outward() {
        let third = Interval::point(1.0) / Interval::point(3.0);
        assert!(third.lo < third.hi);
        assert!(third.contains(1.0 / 3.0));
        let z = Interval::point(0.0) * Interval::new(-1.0, 1.0);
        assert_eq!(z, Interval::point(0.0));
    }

    #[test]
    fn cos_range_reduction() {
        let c = Interval::new(-0.1, 0.1).cos();
        assert_eq!(c.hi, 1.0);
        assert!(c.lo <= (0.1f64).cos());
        let c = Interval::new(3.0, 3.5).cos();
        assert_eq!(c.lo, -1.0);
        let c = Interval::new(0.5, 1.0).cos();
        assert!(c.lo <= 1.0f64.cos() && c.hi >= 0.5f64.cos() && c.hi < 1.0);
        let s = Interval::new(1.0, 2.0).sin();
        assert_eq!(s.hi, 1.0);
        assert_eq!(Interval::new(0.0, 7.0).cos(), Interval::new(-1.0, 1.0));
    }

    #[test]
    fn powers() {
        let x = Interval::new(-2.0, 1.0);
        let sq = x.powi(2).unwrap();
        assert_eq!(sq.lo, 0.0);
        assert!(sq.hi >= 4.0);
        let cube = x.powi(3).unwrap();
        assert!(cube.lo <= -8.0 && cube.hi >= 1.0);
        assert!(x.powi(-1).is_none());
        assert!(Interval::new(-1.0, 0.0).ln().is_none());
        let l = Interval::new(1.0, std::f64::consts::E).ln().unwrap();
        assert!(l.lo <= 0.0 && l.hi >= 1.0);
    }

    #[test]
    fn abs_and_sign() {
        assert_eq!(Interval::new(-3.0, 2.0).abs(), Interval::new(0.0, 3.0));
        assert_eq!(Interval::new(-3.0, -2.0).abs(), Interval::new(2.0, 3.0));
        assert_eq!(Interval::new(-3.0, 2.0).sign(), Interval::new(-1.0, 1.0));
        assert_eq!(Interval::new(0.5, 2.0).sign(), Interval::point(1.0));
    }
}
