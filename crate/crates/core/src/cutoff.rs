//! Smooth componentwise clamp `F_A` applied to the particle drift.
//!
//! `f_A(x) = x` on `[-A, A]` and `f_A(x) = +-A` beyond `+-(A + 1)`. On
//! `(A, A + 1)` the bridge is `A + p(x - A)` with the quintic
//! `p(t) = t - 6t^3 + 8t^4 - 3t^5`, the unique degree-5 polynomial matching
//! value, slope and curvature at both ends. It is extended to negative
//! arguments by oddness. `p'` ranges over roughly `[-0.512, 1]`, so
//! `|f_A'| <= 1` holds without rescaling.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("cutoff level must be positive and finite, got {0}")]
pub struct CutoffError(pub f64);

/// Largest value of the bridge polynomial `p` on `[0, 1]`, attained at `t = 1/3`.
pub const BRIDGE_MAX_OVERSHOOT: f64 = 16.0 / 81.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    a: f64,
}

#[inline]
fn bridge(t: f64) -> f64 {
    let t2 = t * t;
    t * (1.0 + t2 * (-6.0 + t * (8.0 - 3.0 * t)))
}

#[inline]
fn bridge_d1(t: f64) -> f64 {
    let t2 = t * t;
    1.0 + t2 * (-18.0 + t * (32.0 - 15.0 * t))
}

#[inline]
fn bridge_d2(t: f64) -> f64 {
    t * (-36.0 + t * (96.0 - 60.0 * t))
}

impl Cutoff {
    pub fn new(a: f64) -> Result<Self, CutoffError> {
        if a > 0.0 && a.is_finite() {
            Ok(Self { a })
        } else {
            Err(CutoffError(a))
        }
    }

    pub fn level(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let ax = x.abs();
        let v = if ax <= self.a {
            return x;
        } else if ax >= self.a + 1.0 {
            self.a
        } else {
            self.a + bridge(ax - self.a)
        };
        v.copysign(x)
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax <= self.a {
            1.0
        } else if ax >= self.a + 1.0 {
            0.0
        } else {
            bridge_d1(ax - self.a)
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        let ax = x.abs();
        if ax <= self.a || ax >= self.a + 1.0 {
            0.0
        } else {
            bridge_d2(ax - self.a).copysign(x)
        }
    }

    /// Apply `f_A` to every component of `v`.
    #[inline]
    pub fn apply(&self, v: &mut [f64]) {
        for c in v.iter_mut() {
            *c = self.eval(*c);
        }
    }
}

/// Apply an optional cutoff; `None` leaves the values unchanged.
#[inline]
pub fn apply_cutoff(cutoff: Option<&Cutoff>, v: &mut [f64]) {
    if let Some(c) = cutoff {
        c.apply(v);
    }
}
