//! Pseudo-spectral solver for `du/dt = Δu - ∇·(u F_A(K * u))` on a torus.
//!
//! Time stepping works on the mild form: the heat semigroup is applied
//! exactly in Fourier space and the nonlinear flux is treated explicitly
//! (exponential Euler, with an optional trapezoidal corrector). The
//! divergence is applied spectrally, so the zero mode, and with it the total
//! mass, is never touched.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::cutoff::{apply_cutoff, Cutoff};
use crate::grid::{GridError, GridField, GridSpec, Spectral};
use crate::kernel::{KernelError, KernelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid PDE input: {0}")]
    InvalidInput(String),
    #[error("the run did not complete (blow-up detected at t = {0})")]
    NotCompleted(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Exponential Euler.
    Euler,
    /// Exponential Euler predictor with a trapezoidal corrector.
    Heun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Times at which snapshots are kept; rounded to the nearest step.
    pub snapshot_times: Vec<f64>,
    /// Integrability exponent of the norm trace; `inf` uses the grid maximum.
    pub r: f64,
    pub scheme: Scheme,
    pub blowup_guard: f64,
    pub cutoff: Option<Cutoff>,
}

impl PdeConfig {
    pub fn new(dt: f64, t_end: f64, r: f64) -> Self {
        Self {
            dt,
            t_end,
            snapshot_times: vec![t_end],
            r,
            scheme: Scheme::Euler,
            blowup_guard: 1e6,
            cutoff: None,
        }
    }

    fn validate(&self) -> Result<(), PdeError> {
        let mut errs = Vec::new();
        if !(self.dt > 0.0) {
            errs.push(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            errs.push(format!("final time must be finite and nonnegative, got {}", self.t_end));
        }
        if !(self.r >= 1.0) {
            errs.push(format!("norm exponent r must be >= 1, got {}", self.r));
        }
        if !(self.blowup_guard > 0.0) {
            errs.push("blow-up guard must be positive".into());
        }
        if self.snapshot_times.iter().any(|&t| !(0.0..=self.t_end + 0.5 * self.dt).contains(&t)) {
            errs.push("snapshot times must lie in [0, t_end]".into());
        }
        if self.snapshot_times.windows(2).any(|w| w[1] <= w[0]) {
            errs.push("snapshot times must be strictly increasing".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PdeError::InvalidInput(errs.join("; ")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    BlowUpDetected { t_blow: f64 },
}

/// One row of the norm trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSample {
    pub t: f64,
    pub l1: f64,
    pub lr: f64,
    pub mass: f64,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeRun {
    pub snapshots: Vec<(f64, GridField)>,
    pub norm_trace: Vec<NormSample>,
    pub status: RunStatus,
    pub r: f64,
}

impl PdeRun {
    pub fn mass_trace(&self) -> Vec<f64> {
        self.norm_trace.iter().map(|s| s.mass).collect()
    }

    /// `max_t (||u_t||_1 + ||u_t||_r)`.
    pub fn max_l1_cap_lr(&self) -> f64 {
        self.norm_trace.iter().map(|s| s.l1 + s.lr).fold(0.0, f64::max)
    }

    /// Snapshot pair bracketing `t` and the linear weight of the later one.
    pub fn bracket(&self, t: f64) -> (&GridField, &GridField, f64) {
        let snaps = &self.snapshots;
        if t <= snaps[0].0 || snaps.len() == 1 {
            return (&snaps[0].1, &snaps[0].1, 0.0);
        }
        let k = snaps.partition_point(|(ts, _)| *ts <= t);
        if k >= snaps.len() {
            let last = &snaps[snaps.len() - 1].1;
            return (last, last, 0.0);
        }
        let (t0, f0) = &snaps[k - 1];
        let (t1, f1) = &snaps[k];
        (f0, f1, (t - t0) / (t1 - t0))
    }
}

/// Cutoff level `A = C_{K,d} max_t ||u_t||_{L^1 cap L^r}` from a completed run.
pub fn compute_cutoff_a(run: &PdeRun, c_kd: f64) -> Result<f64, PdeError> {
    match run.status {
        RunStatus::Completed => Ok(c_kd * run.max_l1_cap_lr()),
        RunStatus::BlowUpDetected { t_blow } => Err(PdeError::NotCompleted(t_blow)),
    }
}

/// Riemann-sum `L^p` norm of raw grid values.
pub fn lp_norm_values(values: &[f64], cell_volume: f64, p: f64) -> f64 {
    if p.is_infinite() {
        values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    } else if p == 1.0 {
        values.iter().map(|v| v.abs()).sum::<f64>() * cell_volume
    } else if p == 2.0 {
        (values.iter().map(|v| v * v).sum::<f64>() * cell_volume).sqrt()
    } else {
        (values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * cell_volume).powf(1.0 / p)
    }
}

/// Spectral operators tied to one kernel and one grid.
#[derive(Debug, Clone)]
pub struct PdeSolver {
    spectral: Spectral,
    kernel: KernelSpec,
    xi2: Vec<f64>,
    xi_odd: Vec<Vec<f64>>,
    /// `sigma_K = i * symbol[j]` per velocity component.
    symbol: Vec<Vec<f64>>,
}

impl PdeSolver {
    pub fn new(spec: GridSpec, kernel: &KernelSpec) -> Result<Self, PdeError> {
        if spec.d != kernel.d() {
            return Err(PdeError::InvalidInput(format!(
                "grid dimension {} differs from kernel dimension {}",
                spec.d,
                kernel.d()
            )));
        }
        // fail early on kernels without a closed-form symbol
        kernel.symbol_multiplier(1.0)?;
        let spectral = Spectral::new(spec);
        let xi2 = spectral.xi_squared();
        let xi_odd: Vec<Vec<f64>> = (0..spec.d).map(|a| spectral.xi_component_odd(a)).collect();
        let mut symbol = vec![vec![0.0; spec.len()]; spec.d];
        let mut xi = [0.0; 3];
        let mut dir = [0.0; 3];
        for idx in 0..spec.len() {
            let m = kernel.symbol_multiplier(xi2[idx])?;
            for a in 0..spec.d {
                xi[a] = xi_odd[a][idx];
            }
            kernel.apply_direction(m, &xi[..spec.d], &mut dir[..spec.d]);
            for a in 0..spec.d {
                symbol[a][idx] = dir[a];
            }
        }
        Ok(Self { spectral, kernel: *kernel, xi2, xi_odd, symbol })
    }

    pub fn spec(&self) -> &GridSpec {
        self.spectral.spec()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// Exact heat flow: every mode multiplied by `exp(-|xi|^2 t)`.
    pub fn heat_propagate(&self, field: &GridField, t: f64) -> GridField {
        if t == 0.0 {
            return field.clone();
        }
        let mut hat = self.spectral.forward(&field.values);
        hat.par_iter_mut().zip(&self.xi2).for_each(|(c, &k2)| *c *= (-k2 * t).exp());
        GridField { spec: field.spec, values: self.spectral.inverse_real(hat) }
    }

    fn velocity_from_hat(&self, u_hat: &[Complex64]) -> Vec<Vec<f64>> {
        self.symbol
            .iter()
            .map(|sym| {
                let w: Vec<Complex64> =
                    u_hat.par_iter().zip(sym).map(|(c, &s)| Complex64::new(-s * c.im, s * c.re)).collect();
                self.spectral.inverse_real(w)
            })
            .collect()
    }

    /// `K * u` on the grid, one field per component.
    pub fn velocity(&self, u: &GridField) -> Vec<GridField> {
        let hat = self.spectral.forward(&u.values);
        self.velocity_from_hat(&hat)
            .into_iter()
            .map(|values| GridField { spec: u.spec, values })
            .collect()
    }

    /// Fourier coefficients of `div(u F_A(K * u))`.
    fn divergence_hat(&self, u: &[f64], u_hat: &[Complex64], cutoff: Option<&Cutoff>) -> Vec<Complex64> {
        let d = self.spec().d;
        let mut vel = self.velocity_from_hat(u_hat);
        if let Some(c) = cutoff {
            let n = u.len();
            let mut buf = vec![0.0; d];
            for i in 0..n {
                for a in 0..d {
                    buf[a] = vel[a][i];
                }
                apply_cutoff(Some(c), &mut buf);
                for a in 0..d {
                    vel[a][i] = buf[a];
                }
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); u.len()];
        for a in 0..d {
            let mut flux: Vec<Complex64> =
                u.par_iter().zip(&vel[a]).map(|(&ui, &wi)| Complex64::new(ui * wi, 0.0)).collect();
            self.spectral.forward_complex(&mut flux);
            out.par_iter_mut()
                .zip(&flux)
                .zip(&self.xi_odd[a])
                .for_each(|((o, f), &k)| *o += Complex64::new(-k * f.im, k * f.re));
        }
        out
    }

    /// `div(u F_A(K * u))` on the grid.
    pub fn flux_divergence(&self, u: &GridField, cutoff: Option<&Cutoff>) -> GridField {
        let hat = self.spectral.forward(&u.values);
        let div = self.divergence_hat(&u.values, &hat, cutoff);
        GridField { spec: u.spec, values: self.spectral.inverse_real(div) }
    }

    fn step_hat(&self, u_hat: &[Complex64], dt: f64, scheme: Scheme, cutoff: Option<&Cutoff>) -> Vec<Complex64> {
        let u = self.spectral.inverse_real(u_hat.to_vec());
        let n0 = if self.kernel.is_zero() {
            None
        } else {
            Some(self.divergence_hat(&u, u_hat, cutoff))
        };
        let decay: Vec<f64> = self.xi2.par_iter().map(|&k2| (-k2 * dt).exp()).collect();
        let Some(n0) = n0 else {
            return u_hat.iter().zip(&decay).map(|(c, &e)| c * e).collect();
        };
        let pred: Vec<Complex64> =
            u_hat.par_iter().zip(&n0).zip(&decay).map(|((c, nl), &e)| (c - nl * dt) * e).collect();
        match scheme {
            Scheme::Euler => pred,
            Scheme::Heun => {
                let up = self.spectral.inverse_real(pred.clone());
                let n1 = self.divergence_hat(&up, &pred, cutoff);
                u_hat
                    .par_iter()
                    .zip(&n0)
                    .zip(&n1)
                    .zip(&decay)
                    .map(|(((c, a), b), &e)| (c - a * (0.5 * dt)) * e - b * (0.5 * dt))
                    .collect()
            }
        }
    }

    /// One step of size `dt`.
    pub fn pde_step(&self, u: &GridField, dt: f64, scheme: Scheme, cutoff: Option<&Cutoff>) -> GridField {
        let hat = self.spectral.forward(&u.values);
        let new = self.step_hat(&hat, dt, scheme, cutoff);
        GridField { spec: u.spec, values: self.spectral.inverse_real(new) }
    }

    fn sample(&self, t: f64, values: &[f64], r: f64) -> NormSample {
        let dv = self.spec().cell_volume();
        NormSample {
            t,
            l1: lp_norm_values(values, dv, 1.0),
            lr: lp_norm_values(values, dv, r),
            mass: values.iter().sum::<f64>() * dv,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// Integrate from `u0` to `cfg.t_end`, stopping early on blow-up.
    pub fn solve(&self, u0: &GridField, cfg: &PdeConfig) -> Result<PdeRun, PdeError> {
        cfg.validate()?;
        if u0.spec != *self.spec() {
            return Err(PdeError::InvalidInput("initial field lives on a different grid".into()));
        }
        let mass = u0.integral();
        if (mass - 1.0).abs() > 1e-6 {
            return Err(PdeError::InvalidInput(format!("initial mass must be 1 +- 1e-6, got {mass}")));
        }
        if u0.min() < -1e-12 {
            return Err(PdeError::InvalidInput("initial density must be nonnegative".into()));
        }
        let steps = (cfg.t_end / cfg.dt).round() as usize;
        let snap_steps: Vec<usize> = cfg.snapshot_times.iter().map(|t| (t / cfg.dt).round() as usize).collect();
        let mut snapshots = Vec::with_capacity(snap_steps.len());
        let mut next_snap = 0;
        let mut trace = Vec::with_capacity(steps + 1);

        let mut hat = self.spectral.forward(&u0.values);
        let mut values = u0.values.clone();
        let cutoff = cfg.cutoff.as_ref();
        for step in 0..=steps {
            let t = step as f64 * cfg.dt;
            if step > 0 {
                hat = self.step_hat(&hat, cfg.dt, cfg.scheme, cutoff);
                values = self.spectral.inverse_real(hat.clone());
            }
            let s = self.sample(t, &values, cfg.r);
            trace.push(s);
            if !s.lr.is_finite() || !s.l1.is_finite() || s.lr > cfg.blowup_guard || values.iter().any(|v| !v.is_finite())
            {
                return Ok(PdeRun {
                    snapshots,
                    norm_trace: trace,
                    status: RunStatus::BlowUpDetected { t_blow: t },
                    r: cfg.r,
                });
            }
            while next_snap < snap_steps.len() && snap_steps[next_snap] == step {
                snapshots.push((t, GridField { spec: u0.spec, values: values.clone() }));
                next_snap += 1;
            }
        }
        Ok(PdeRun { snapshots, norm_trace: trace, status: RunStatus::Completed, r: cfg.r })
    }
}

/// Isotropic Gaussian density with variance `var` per coordinate, centred at `mean`.
pub fn gaussian_density(x: &[f64], mean: &[f64], var: f64) -> f64 {
    let d = x.len() as i32;
    let r2: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    (2.0 * std::f64::consts::PI * var).powi(-d).sqrt() * (-r2 / (2.0 * var)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;

    fn gaussian(spec: GridSpec, var: f64) -> GridField {
        let zero = vec![0.0; spec.d];
        GridField::from_fn(spec, |x| gaussian_density(x, &zero, var))
    }

    fn sup_rel(a: &GridField, b: &GridField) -> f64 {
        let m = b.max_abs();
        a.values.iter().zip(&b.values).fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs())) / m
    }

    #[test]
    fn heat_flow_on_gaussians() {
        for d in 1..=2 {
            let spec = GridSpec::new(d, 256, 4.0).unwrap();
            let k = KernelSpec::new(KernelFamily::Zero, d).unwrap();
            let s = PdeSolver::new(spec, &k).unwrap();
            for (var, t) in [(0.1, 0.05), (0.2, 0.05), (0.05, 0.02)] {
                let out = s.heat_propagate(&gaussian(spec, var), t);
                let exact = gaussian(spec, var + 2.0 * t);
                assert!(sup_rel(&out, &exact) < 1e-6, "d={d} var={var} t={t}");
                assert!((out.integral() - 1.0).abs() < 1e-12);
            }
            let g = gaussian(spec, 0.1);
            assert_eq!(s.heat_propagate(&g, 0.0), g);
        }
    }

    #[test]
    fn zero_kernel_step_is_heat_flow() {
        let spec = GridSpec::new(2, 64, 4.0).unwrap();
        let k = KernelSpec::new(KernelFamily::Zero, 2).unwrap();
        let s = PdeSolver::new(spec, &k).unwrap();
        let g = gaussian(spec, 0.3);
        let a = s.pde_step(&g, 0.01, Scheme::Euler, None);
        let b = s.heat_propagate(&g, 0.01);
        assert!(sup_rel(&a, &b) < 1e-13);
    }

    #[test]
    fn keller_segel_step_conserves_mass() {
        let spec = GridSpec::new(2, 64, 6.0).unwrap();
        let k = KernelSpec::new(KernelFamily::KellerSegel { chi: 4.0 * std::f64::consts::PI }, 2).unwrap();
        let s = PdeSolver::new(spec, &k).unwrap();
        let g = gaussian(spec, 0.5);
        for scheme in [Scheme::Euler, Scheme::Heun] {
            let a = s.pde_step(&g, 0.01, scheme, None);
            assert!((a.integral() - g.integral()).abs() < 1e-12);
        }
    }

    #[test]
    fn attractive_repulsive_is_rejected() {
        let spec = GridSpec::new(2, 16, 4.0).unwrap();
        let k = KernelSpec::new(KernelFamily::AttractiveRepulsive { a: 0.5, b: 0.2, va: 1.0, vb: 1.0 }, 2).unwrap();
        assert!(matches!(PdeSolver::new(spec, &k), Err(PdeError::Kernel(KernelError::UnsupportedSymbol(_)))));
    }

    #[test]
    fn cutoff_level_from_run() {
        let spec = GridSpec::new(1, 128, 6.0).unwrap();
        let k = KernelSpec::new(KernelFamily::Zero, 1).unwrap();
        let s = PdeSolver::new(spec, &k).unwrap();
        let run = s.solve(&gaussian(spec, 0.2), &PdeConfig::new(0.01, 0.2, 2.0)).unwrap();
        let a1 = compute_cutoff_a(&run, 1.0).unwrap();
        assert!(a1 >= 1.0);
        assert_eq!(compute_cutoff_a(&run, 2.0).unwrap(), 2.0 * a1);
        assert!(run.max_l1_cap_lr() >= run.norm_trace[0].l1);
    }

    #[test]
    fn invalid_initial_mass() {
        let spec = GridSpec::new(1, 64, 6.0).unwrap();
        let k = KernelSpec::new(KernelFamily::Zero, 1).unwrap();
        let s = PdeSolver::new(spec, &k).unwrap();
        let mut g = gaussian(spec, 0.2);
        g.values.iter_mut().for_each(|v| *v *= 2.0);
        assert!(matches!(s.solve(&g, &PdeConfig::new(0.01, 0.1, 2.0)), Err(PdeError::InvalidInput(_))));
    }
}
