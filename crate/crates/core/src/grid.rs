//! Uniform periodic grids on `[-L, L)^d` and their discrete Fourier transform.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("field has {got} values, grid expects {expected}")]
    SizeMismatch { expected: usize, got: usize },
}

/// Geometry of a periodic grid: `g` points per axis on `[-l, l)^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub d: usize,
    pub g: usize,
    pub l: f64,
}

impl GridSpec {
    pub fn new(d: usize, g: usize, l: f64) -> Result<Self, GridError> {
        if !(1..=3).contains(&d) {
            return Err(GridError::Invalid(format!("dimension must be 1, 2 or 3, got {d}")));
        }
        if g < 4 || !g.is_power_of_two() {
            return Err(GridError::Invalid(format!("points per axis must be a power of two >= 4, got {g}")));
        }
        if !(l > 0.0) || !l.is_finite() {
            return Err(GridError::Invalid(format!("half-width must be positive, got {l}")));
        }
        Ok(Self { d, g, l })
    }

    pub fn len(&self) -> usize {
        self.g.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.l / self.g as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.dx().powi(self.d as i32)
    }

    /// Coordinate of node `i` along any axis.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.dx()
    }

    /// Angular wavenumber of FFT bin `k` along any axis.
    #[inline]
    pub fn wavenumber(&self, k: usize) -> f64 {
        let signed = if k < self.g / 2 { k as f64 } else { k as f64 - self.g as f64 };
        std::f64::consts::PI * signed / self.l
    }

    /// Row-major multi-index of flat index `idx` (axis 0 slowest).
    #[inline]
    pub fn unravel(&self, mut idx: usize, out: &mut [usize]) {
        for a in (0..self.d).rev() {
            out[a] = idx % self.g;
            idx /= self.g;
        }
    }

    /// Coordinates of the node with flat index `idx`.
    pub fn node(&self, idx: usize, out: &mut [f64]) {
        let mut mi = [0usize; 3];
        self.unravel(idx, &mut mi[..self.d]);
        for a in 0..self.d {
            out[a] = self.coord(mi[a]);
        }
    }

    /// Wrap a coordinate into `[-l, l)`; returns the wrapped value and whether it moved.
    #[inline]
    pub fn wrap(&self, x: f64) -> (f64, bool) {
        if x >= -self.l && x < self.l {
            return (x, false);
        }
        let w = 2.0 * self.l;
        let mut y = (x + self.l).rem_euclid(w) - self.l;
        if y >= self.l {
            y -= w;
        }
        (y, true)
    }
}

/// Real scalar field sampled on a grid, row-major with axis 0 slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != spec.len() {
            return Err(GridError::SizeMismatch { expected: spec.len(), got: values.len() });
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self { spec, values: vec![0.0; spec.len()] }
    }

    /// Sample `f` at every node.
    pub fn from_fn<F: Fn(&[f64]) -> f64 + Sync>(spec: GridSpec, f: F) -> Self {
        let values = (0..spec.len())
            .into_par_iter()
            .map(|idx| {
                let mut x = [0.0; 3];
                spec.node(idx, &mut x[..spec.d]);
                f(&x[..spec.d])
            })
            .collect();
        Self { spec, values }
    }

    /// Riemann-sum integral.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Periodic multilinear interpolation at `x`.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        interpolate_periodic(&self.spec, &self.values, x)
    }
}

/// Periodic multilinear interpolation of row-major `values` at `x`.
#[inline]
pub fn interpolate_periodic(spec: &GridSpec, values: &[f64], x: &[f64]) -> f64 {
    let g = spec.g;
    let dx = spec.dx();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..spec.d {
        let u = (x[a] + spec.l) / dx;
        let fl = u.floor();
        frac[a] = u - fl;
        base[a] = (fl as i64).rem_euclid(g as i64) as usize;
    }
    let mut acc = 0.0;
    for corner in 0..(1usize << spec.d) {
        let mut w = 1.0;
        let mut idx = 0usize;
        for a in 0..spec.d {
            let bit = (corner >> a) & 1;
            let i = if bit == 1 { (base[a] + 1) % g } else { base[a] };
            w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
            idx = idx * g + i;
        }
        acc += w * values[idx];
    }
    acc
}

/// Multi-dimensional FFT on a fixed grid.
///
/// The forward transform is unnormalized; the inverse divides by `g^d`.
/// Each 1-D line transform is independent, so results do not depend on how
/// lines are scheduled across threads.
#[derive(Clone)]
pub struct Spectral {
    spec: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// Wavenumbers per bin.
    pub freqs: Vec<f64>,
    /// Wavenumbers with the Nyquist bin zeroed, for odd (derivative-type) symbols.
    pub freqs_odd: Vec<f64>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("spec", &self.spec).finish()
    }
}

impl Spectral {
    pub fn new(spec: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(spec.g);
        let inverse = planner.plan_fft_inverse(spec.g);
        let freqs: Vec<f64> = (0..spec.g).map(|k| spec.wavenumber(k)).collect();
        let mut freqs_odd = freqs.clone();
        freqs_odd[spec.g / 2] = 0.0;
        Self { spec, forward, inverse, freqs, freqs_odd }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    pub fn forward_complex(&self, data: &mut [Complex64]) {
        self.transform(data, &self.forward);
    }

    /// Inverse transform, returning the real part.
    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / self.spec.len() as f64;
        data.into_iter().map(|c| c.re * scale).collect()
    }

    fn transform(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let g = self.spec.g;
        let n = self.spec.len();
        let mut stride = 1usize;
        for _axis in (0..self.spec.d).rev() {
            if stride == 1 {
                data.par_chunks_mut(g).for_each_init(
                    || vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()],
                    |scratch, line| plan.process_with_scratch(line, scratch),
                );
            } else {
                // each block of g*stride values holds `stride` interleaved lines
                let block = g * stride;
                data.par_chunks_mut(block).for_each_init(
                    || {
                        (
                            vec![Complex64::new(0.0, 0.0); g],
                            vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()],
                        )
                    },
                    |(line, scratch), chunk| {
                        for inner in 0..stride {
                            for k in 0..g {
                                line[k] = chunk[k * stride + inner];
                            }
                            plan.process_with_scratch(line, scratch);
                            for k in 0..g {
                                chunk[k * stride + inner] = line[k];
                            }
                        }
                    },
                );
            }
            stride *= g;
        }
        debug_assert_eq!(stride, n);
    }

    /// `|xi|^2` for every mode, row-major.
    pub fn xi_squared(&self) -> Vec<f64> {
        let spec = self.spec;
        (0..spec.len())
            .map(|idx| {
                let mut mi = [0usize; 3];
                spec.unravel(idx, &mut mi[..spec.d]);
                (0..spec.d).map(|a| self.freqs[mi[a]].powi(2)).sum()
            })
            .collect()
    }

    /// Component `axis` of the odd wavevector for every mode.
    pub fn xi_component_odd(&self, axis: usize) -> Vec<f64> {
        let spec = self.spec;
        (0..spec.len())
            .map(|idx| {
                let mut mi = [0usize; 3];
                spec.unravel(idx, &mut mi[..spec.d]);
                self.freqs_odd[mi[axis]]
            })
            .collect()
    }
}
