//! Weighted point sets, deposition of `u^N = V^N * mu^N`, and grid norms.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::grid::{GridField, GridSpec, Spectral};
use crate::mollifier::MollifierSpec;
use crate::pde::lp_norm_values;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("not a probability measure: {0}")]
    NonProbability(String),
    #[error("bump support radius {support:.3e} covers fewer than 2 cells of width {dx:.3e}")]
    BumpUnderresolved { support: f64, dx: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Atoms with nonnegative weights summing to one, row-major `M x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPointSet {
    pub d: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl WeightedPointSet {
    pub fn new(d: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self, MeasureError> {
        if d == 0 || points.len() != d * weights.len() {
            return Err(MeasureError::Invalid(format!(
                "{} coordinates do not form {} points in dimension {d}",
                points.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(MeasureError::NonProbability("negative or NaN weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MeasureError::NonProbability(format!("weights sum to {total}")));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(MeasureError::Invalid("non-finite coordinate".into()));
        }
        Ok(Self { d, points, weights })
    }

    /// Empirical measure with weight `1/M` on each point.
    pub fn uniform(d: usize, points: Vec<f64>) -> Result<Self, MeasureError> {
        let m = points.len() / d.max(1);
        if m == 0 {
            return Err(MeasureError::NonProbability("empty point set".into()));
        }
        if points.len() != m * d || points.iter().any(|x| !x.is_finite()) {
            return Err(MeasureError::Invalid("coordinates must be finite and complete".into()));
        }
        // equal weights are normalized by construction; a running sum of many
        // copies of 1/m can drift past the 1e-12 check
        Ok(Self { d, points, weights: vec![1.0 / m as f64; m] })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }
}

/// Deposited field and the number of points that had to be wrapped.
#[derive(Debug, Clone, PartialEq)]
pub struct Deposit {
    pub field: GridField,
    pub wrapped: usize,
}

const DEPOSIT_CHUNK: usize = 256;

/// Deposit `V^N * mu` on the grid.
///
/// Each atom's discrete bump is rescaled to carry exactly its weight, so the
/// Riemann mass of the result is one up to rounding even when the bump spans
/// only a few cells.
pub fn deposit_un(points: &WeightedPointSet, mollifier: &MollifierSpec, spec: GridSpec) -> Result<Deposit, MeasureError> {
    if points.d != spec.d || mollifier.d != spec.d {
        return Err(MeasureError::Invalid("dimension mismatch between points, mollifier and grid".into()));
    }
    let rn = mollifier.support_radius();
    let dx = spec.dx();
    if rn < 2.0 * dx {
        return Err(MeasureError::BumpUnderresolved { support: rn, dx });
    }
    if rn >= spec.l {
        return Err(MeasureError::Invalid(format!("bump radius {rn} does not fit in the half-width {}", spec.l)));
    }
    let d = spec.d;
    let g = spec.g as i64;
    let cell = spec.cell_volume();
    let n = points.len();
    let chunks: Vec<(Vec<(usize, f64)>, usize)> = (0..n.div_ceil(DEPOSIT_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut out = Vec::new();
            let mut wrapped = 0;
            let mut idx_buf: Vec<usize> = Vec::new();
            let mut val_buf: Vec<f64> = Vec::new();
            for k in c * DEPOSIT_CHUNK..((c + 1) * DEPOSIT_CHUNK).min(n) {
                let mut x = [0.0; 3];
                let mut moved = false;
                for a in 0..d {
                    let (y, m) = spec.wrap(points.point(k)[a]);
                    x[a] = y;
                    moved |= m;
                }
                wrapped += moved as usize;
                let mut lo = [0i64; 3];
                let mut cnt = [0i64; 3];
                for a in 0..d {
                    let first = ((x[a] - rn + spec.l) / dx).ceil() as i64;
                    let last = ((x[a] + rn + spec.l) / dx).floor() as i64;
                    lo[a] = first;
                    cnt[a] = last - first + 1;
                }
                idx_buf.clear();
                val_buf.clear();
                let total: i64 = cnt[..d].iter().product();
                let mut sum = 0.0;
                for flat in 0..total {
                    let mut rem = flat;
                    let mut r2 = 0.0;
                    let mut mi = [0usize; 3];
                    for a in (0..d).rev() {
                        let i = lo[a] + rem % cnt[a];
                        rem /= cnt[a];
                        let dxa = -spec.l + i as f64 * dx - x[a];
                        r2 += dxa * dxa;
                        mi[a] = i.rem_euclid(g) as usize;
                    }
                    let v = mollifier.eval_vn_radial(r2.sqrt());
                    if v > 0.0 {
                        idx_buf.push(mi[..d].iter().fold(0, |acc, &i| acc * spec.g + i));
                        val_buf.push(v);
                        sum += v;
                    }
                }
                if sum > 0.0 {
                    let scale = points.weights[k] / (sum * cell);
                    out.extend(idx_buf.iter().zip(&val_buf).map(|(&i, &v)| (i, v * scale)));
                }
            }
            (out, wrapped)
        })
        .collect();
    let mut values = vec![0.0; spec.len()];
    let mut wrapped = 0;
    for (list, w) in chunks {
        wrapped += w;
        for (i, v) in list {
            values[i] += v;
        }
    }
    Ok(Deposit { field: GridField { spec, values }, wrapped })
}

pub fn lp_norm(field: &GridField, p: f64) -> f64 {
    lp_norm_values(&field.values, field.spec.cell_volume(), p)
}

/// `||f||_1 + ||f||_r`.
pub fn l1_cap_lr(field: &GridField, r: f64) -> f64 {
    lp_norm(field, 1.0) + lp_norm(field, r)
}

/// Bessel-potential norm `||F^{-1}((1 + |xi|^2)^{beta/2} F f)||_r`.
pub fn bessel_norm(field: &GridField, beta: f64, r: f64, spectral: &Spectral) -> f64 {
    let spec = field.spec;
    let xi2 = spectral.xi_squared();
    let hat = spectral.forward(&field.values);
    if r == 2.0 {
        let s: f64 = hat.iter().zip(&xi2).map(|(c, &k2)| c.norm_sqr() * (1.0 + k2).powf(beta)).sum();
        return (s * spec.cell_volume() / spec.len() as f64).sqrt();
    }
    let weighted: Vec<Complex64> = hat.iter().zip(&xi2).map(|(c, &k2)| c * (1.0 + k2).powf(0.5 * beta)).collect();
    lp_norm_values(&spectral.inverse_real(weighted), spec.cell_volume(), r)
}
