//! Theoretical convergence exponents and admissibility windows.
//!
//! Every formula is generic over [`Scalar`], so the same code runs in `f64`
//! and in exact rational arithmetic.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::Num;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RateError {
    #[error("the admissible window for alpha is empty: {0}")]
    EmptyWindow(String),
    #[error("delta must lie in (0, 1), got {0}")]
    DeltaOutOfRange(String),
    #[error("invalid rate query: {0}")]
    Invalid(String),
}

pub trait Scalar: Num + PartialOrd + Clone + Debug {
    fn from_int(i: i64) -> Self;
}

impl Scalar for f64 {
    fn from_int(i: i64) -> Self {
        i as f64
    }
}

impl Scalar for Ratio<i64> {
    fn from_int(i: i64) -> Self {
        Ratio::from_integer(i)
    }
}

/// Integrability exponent, possibly infinite.
#[derive(Debug, Clone, PartialEq)]
pub enum Exponent<T> {
    Finite(T),
    Infinite,
}

impl Exponent<f64> {
    pub fn from_f64(r: f64) -> Self {
        if r.is_infinite() {
            Self::Infinite
        } else {
            Self::Finite(r)
        }
    }
}

fn min<T: Scalar>(a: T, b: T) -> T {
    if a <= b {
        a
    } else {
        b
    }
}

fn max<T: Scalar>(a: T, b: T) -> T {
    if a >= b {
        a
    } else {
        b
    }
}

fn half<T: Scalar>() -> T {
    T::one() / T::from_int(2)
}

/// `kappa_r = max(0, d (1 - 2/r))`, equal to `d` at `r = inf`.
pub fn kappa<T: Scalar>(d: usize, r: &Exponent<T>) -> T {
    let df = T::from_int(d as i64);
    match r {
        Exponent::Infinite => df,
        Exponent::Finite(r) => max(T::zero(), df * (T::one() - T::from_int(2) / r.clone())),
    }
}

/// `rho = min(alpha zeta, (1 - alpha (d + kappa_r)) / 2)` and whether
/// `0 < alpha < 1/(d + kappa_r)`.
pub fn theoretical_rate<T: Scalar>(d: usize, alpha: T, zeta: T, r: &Exponent<T>) -> (T, bool) {
    let dk = T::from_int(d as i64) + kappa(d, r);
    let rho = min(alpha.clone() * zeta, half::<T>() * (T::one() - alpha.clone() * dk.clone()));
    let admissible = alpha > T::zero() && alpha * dk < T::one();
    (rho, admissible)
}

/// `rho~ = min(alpha zeta, 1/2 - alpha d)` and whether
/// `0 < alpha < 1/(d + 2 beta + kappa_r~)`.
pub fn theoretical_rate_singular<T: Scalar>(
    d: usize,
    alpha: T,
    zeta: T,
    beta: T,
    r_tilde: &Exponent<T>,
) -> (T, bool) {
    let df = T::from_int(d as i64);
    let rho = min(alpha.clone() * zeta, half::<T>() - alpha.clone() * df.clone());
    let bound = df + T::from_int(2) * beta + kappa(d, r_tilde);
    let admissible = alpha > T::zero() && alpha * bound < T::one();
    (rho, admissible)
}

/// The `alpha` balancing both terms of the rate, and the rate it attains.
pub fn best_alpha<T: Scalar>(d: usize, zeta: T, r: &Exponent<T>) -> Result<(T, T), RateError> {
    if !(zeta > T::zero()) {
        return Err(RateError::EmptyWindow(format!("zeta = {zeta:?} leaves no positive rate")));
    }
    let dk = T::from_int(d as i64) + kappa(d, r);
    let alpha = T::one() / (T::from_int(2) * zeta.clone() + dk);
    let rho = alpha.clone() * zeta;
    Ok((alpha, rho))
}

/// Singular-class optimum `alpha* = 1/(2 zeta + 2d)`, clipped to the window
/// when `(beta, r~)` are given.
pub fn best_alpha_singular<T: Scalar>(
    d: usize,
    zeta: T,
    window: Option<(T, &Exponent<T>)>,
) -> Result<(T, T), RateError> {
    if !(zeta > T::zero()) {
        return Err(RateError::EmptyWindow(format!("zeta = {zeta:?} leaves no positive rate")));
    }
    let df = T::from_int(d as i64);
    let mut alpha = T::one() / (T::from_int(2) * (zeta.clone() + df.clone()));
    if let Some((beta, r_tilde)) = window {
        let upper = T::one() / (df.clone() + T::from_int(2) * beta + kappa(d, r_tilde));
        if !(upper > T::zero()) {
            return Err(RateError::EmptyWindow(format!("upper bound {upper:?}")));
        }
        alpha = min(alpha, upper);
    }
    let rho = min(alpha.clone() * zeta, half::<T>() - alpha.clone() * df);
    Ok((alpha, rho))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SobolevExponent<T> {
    pub gamma: T,
    /// `gamma / beta`.
    pub factor: T,
    /// Whether `gamma > d / (r~ - delta)`, which gives a Hölder embedding.
    pub embeds: bool,
}

/// `gamma = beta r~ (r~ - 1 - delta) / ((r~ - delta)(r~ - 1))`.
pub fn sobolev_rate_exponent<T: Scalar>(
    d: usize,
    beta: T,
    r_tilde: T,
    delta: T,
) -> Result<SobolevExponent<T>, RateError> {
    if !(delta > T::zero() && delta < T::one()) {
        return Err(RateError::DeltaOutOfRange(format!("{delta:?}")));
    }
    let one = T::one();
    if !(r_tilde > one.clone() + delta.clone()) {
        return Err(RateError::Invalid(format!("r~ = {r_tilde:?} must exceed 1 + delta")));
    }
    let factor = r_tilde.clone() * (r_tilde.clone() - one.clone() - delta.clone())
        / ((r_tilde.clone() - delta.clone()) * (r_tilde.clone() - one));
    let gamma = beta * factor.clone();
    let embeds = gamma.clone() * (r_tilde - delta) > T::from_int(d as i64);
    Ok(SobolevExponent { gamma, factor, embeds })
}

#[cfg(test)]
mod tests {
    use super::*;

    type Q = Ratio<i64>;

    fn q(n: i64, d: i64) -> Q {
        Q::new(n, d)
    }

    #[test]
    fn biot_savart_rate_is_one_sixth() {
        let (rho, ok) = theoretical_rate(2, q(1, 6), q(1, 1), &Exponent::Infinite);
        assert_eq!(rho, q(1, 6));
        assert!(ok);
        let (rho, _) = theoretical_rate(2, 0.25, 1.0, &Exponent::Finite(2.0));
        assert_eq!(rho, 0.25);
        assert!(!theoretical_rate(2, 0.0, 1.0, &Exponent::Infinite).1);
    }

    #[test]
    fn best_alpha_rational() {
        for d in 1..=3usize {
            let (a, rho) = best_alpha(d, q(1, 1), &Exponent::Infinite).unwrap();
            assert_eq!(a, q(1, 2 * (d as i64 + 1)));
            assert_eq!(rho, a);
            let (a, rho) = best_alpha_singular(d, q(1, 1), None).unwrap();
            assert_eq!(a, q(1, 2 * (d as i64 + 1)));
            assert_eq!(rho, a);
        }
        assert!(best_alpha(2, 0.0, &Exponent::Infinite).is_err());
    }

    #[test]
    fn singular_rate() {
        let (rho, ok) = theoretical_rate_singular(2, q(1, 10), q(1, 1), q(9, 10), &Exponent::Finite(q(10, 1)));
        assert_eq!(rho, q(1, 10));
        assert!(ok);
        let (_, ok) = theoretical_rate_singular(2, q(1, 4), q(1, 1), q(9, 10), &Exponent::Finite(q(10, 1)));
        assert!(!ok);
    }

    #[test]
    fn sobolev_exponent() {
        let s = sobolev_rate_exponent(2, q(9, 10), q(10, 1), q(1, 10)).unwrap();
        // 0.9 * (10 * 8.9) / (9.9 * 9)
        assert_eq!(s.gamma, q(9, 10) * q(890, 891));
        assert!(s.gamma < q(9, 10));
        assert!((sobolev_rate_exponent(2, 0.9, 10.0, 0.1).unwrap().gamma - 0.898_989_9).abs() < 1e-6);
        assert!(matches!(sobolev_rate_exponent(2, 0.9, 10.0, 1.0), Err(RateError::DeltaOutOfRange(_))));
    }
}
