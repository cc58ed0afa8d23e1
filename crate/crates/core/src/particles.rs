//! Euler-Maruyama simulation of the mollified particle system
//!
//! `dX^i = F_A((1/N) sum_k (K * V^N)(X^i - X^k)) dt + sqrt(2) dW^i`.
//!
//! The drift is either summed pairwise through a [`ForceTable`] or obtained
//! from the identity `(1/N) sum_k (K * V^N)(x - X^k) = (K * u^N)(x)` by
//! depositing `u^N` on a grid and applying the kernel symbol.

use rayon::prelude::*;
use thiserror::Error;

use crate::cutoff::{apply_cutoff, Cutoff};
use crate::grid::{interpolate_periodic, GridField, GridSpec};
use crate::kernel::{KernelError, KernelSpec};
use crate::measures::{deposit_un, MeasureError, WeightedPointSet};
use crate::mollifier::{ForceTable, MollifierError, MollifierSpec};
use crate::pde::{gaussian_density, PdeError, PdeSolver};
use crate::rng::{CounterRng, Purpose};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParticleError {
    #[error("invalid initial law: {0}")]
    BadMixture(String),
    #[error("invalid particle input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Mollifier(#[from] MollifierError),
    #[error(transparent)]
    Pde(#[from] PdeError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic variance per coordinate.
    pub var: f64,
}

/// Finite isotropic Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialLaw {
    d: usize,
    components: Vec<GaussianComponent>,
}

impl InitialLaw {
    pub fn gaussian(d: usize, mean: Vec<f64>, var: f64) -> Result<Self, ParticleError> {
        Self::mixture(d, vec![GaussianComponent { weight: 1.0, mean, var }])
    }

    pub fn mixture(d: usize, components: Vec<GaussianComponent>) -> Result<Self, ParticleError> {
        if components.is_empty() {
            return Err(ParticleError::BadMixture("no components".into()));
        }
        for (j, c) in components.iter().enumerate() {
            if c.mean.len() != d || c.mean.iter().any(|m| !m.is_finite()) {
                return Err(ParticleError::BadMixture(format!("component {j} mean is not a finite {d}-vector")));
            }
            if !(c.var > 0.0 && c.var.is_finite()) {
                return Err(ParticleError::BadMixture(format!("component {j} variance {} is not positive", c.var)));
            }
            if !(c.weight > 0.0) {
                return Err(ParticleError::BadMixture(format!("component {j} weight {} is not positive", c.weight)));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ParticleError::BadMixture(format!("weights sum to {total}")));
        }
        Ok(Self { d, components })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.components.iter().map(|c| c.weight * gaussian_density(x, &c.mean, c.var)).sum()
    }

    /// Density sampled on a grid.
    pub fn on_grid(&self, spec: GridSpec) -> GridField {
        GridField::from_fn(spec, |x| self.density(x))
    }

    /// `n` i.i.d. samples; sample `i` depends only on `(seed, i)`.
    pub fn sample(&self, n: usize, rng: &CounterRng) -> Vec<f64> {
        let d = self.d;
        let mut pos = vec![0.0; n * d];
        pos.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
            let j = if self.components.len() == 1 {
                0
            } else {
                let u = rng.uniforms(Purpose::Component, i as u64, 0, 0)[0];
                let mut acc = 0.0;
                let mut pick = self.components.len() - 1;
                for (j, c) in self.components.iter().enumerate() {
                    acc += c.weight;
                    if u <= acc {
                        pick = j;
                        break;
                    }
                }
                pick
            };
            let c = &self.components[j];
            rng.normals(Purpose::Initial, i as u64, 0, x);
            let s = c.var.sqrt();
            for (v, m) in x.iter_mut().zip(&c.mean) {
                *v = m + s * *v;
            }
        });
        pos
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub d: usize,
    /// Row-major `N x d`.
    pub positions: Vec<f64>,
    pub t: f64,
    /// Steps taken so far; indexes the noise stream.
    pub step: u64,
}

impl ParticleState {
    pub fn new(d: usize, positions: Vec<f64>) -> Result<Self, ParticleError> {
        if d == 0 || positions.is_empty() || !positions.len().is_multiple_of(d) {
            return Err(ParticleError::Invalid(format!("{} coordinates in dimension {d}", positions.len())));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(ParticleError::Invalid("non-finite coordinate".into()));
        }
        Ok(Self { d, positions, t: 0.0, step: 0 })
    }

    pub fn n(&self) -> usize {
        self.positions.len() / self.d
    }

    pub fn empirical(&self) -> WeightedPointSet {
        WeightedPointSet::uniform(self.d, self.positions.clone()).expect("finite positions")
    }
}

/// Drift together with how often the cutoff was active.
#[derive(Debug, Clone, PartialEq)]
pub struct Drift {
    pub values: Vec<f64>,
    /// Components whose raw value fell outside `[-A, A]`.
    pub saturated: usize,
}

fn finish_drift(mut values: Vec<f64>, cutoff: Option<&Cutoff>) -> Drift {
    let saturated = match cutoff {
        Some(c) => values.iter().filter(|v| v.abs() > c.level()).count(),
        None => 0,
    };
    apply_cutoff(cutoff, &mut values);
    Drift { values, saturated }
}

/// `F_A((1/N) sum_k (K * V^N)(X^i - X^k))` by direct summation, self term included.
pub fn drift_direct(d: usize, positions: &[f64], table: &ForceTable, cutoff: Option<&Cutoff>) -> Drift {
    let n = positions.len() / d;
    let inv_n = 1.0 / n as f64;
    let mut values = vec![0.0; n * d];
    values.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        let xi = &positions[i * d..(i + 1) * d];
        let mut diff = [0.0; 3];
        let mut f = [0.0; 3];
        let mut acc = [0.0; 3];
        for k in 0..n {
            let xk = &positions[k * d..(k + 1) * d];
            for a in 0..d {
                diff[a] = xi[a] - xk[a];
            }
            table.interaction_force_into(&diff[..d], &mut f[..d]);
            for a in 0..d {
                acc[a] += f[a];
            }
        }
        for a in 0..d {
            out[a] = acc[a] * inv_n;
        }
    });
    finish_drift(values, cutoff)
}

/// The same drift through `K * u^N` on a grid, interpolated multilinearly.
pub fn drift_grid(
    d: usize,
    positions: &[f64],
    mollifier: &MollifierSpec,
    solver: &PdeSolver,
    cutoff: Option<&Cutoff>,
) -> Result<Drift, ParticleError> {
    let points = WeightedPointSet::uniform(d, positions.to_vec())?;
    let u = deposit_un(&points, mollifier, *solver.spec())?.field;
    let vel = solver.velocity(&u);
    Ok(finish_drift(sample_field(d, positions, &vel), cutoff))
}

/// Multilinear interpolation of a vector field at every position.
pub fn sample_field(d: usize, positions: &[f64], field: &[GridField]) -> Vec<f64> {
    let spec = field[0].spec;
    let mut values = vec![0.0; positions.len()];
    values.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
        let x = &positions[i * d..(i + 1) * d];
        for a in 0..d {
            out[a] = interpolate_periodic(&spec, &field[a].values, x);
        }
    });
    values
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriftPath {
    Direct,
    Grid,
    /// Grid when the kernel has a symbol and `N > 2048`, direct otherwise.
    Auto,
}

/// Prepared drift evaluator for one `(kernel, mollifier, N)`.
pub enum DriftEngine {
    Zero { d: usize },
    Direct { table: Box<ForceTable>, cutoff: Option<Cutoff> },
    Grid { solver: Box<PdeSolver>, mollifier: MollifierSpec, cutoff: Option<Cutoff> },
}

/// Settings for building the force table of the direct path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableSettings {
    pub resolution: usize,
    pub tol: f64,
}

impl Default for TableSettings {
    fn default() -> Self {
        Self { resolution: 2048, tol: 1e-6 }
    }
}

impl DriftEngine {
    /// `mollifier` must already be scaled for the particle count `n`.
    pub fn build(
        kernel: &KernelSpec,
        mollifier: &MollifierSpec,
        n: usize,
        path: DriftPath,
        grid: GridSpec,
        table: TableSettings,
        cutoff: Option<Cutoff>,
    ) -> Result<Self, ParticleError> {
        if kernel.is_zero() {
            return Ok(Self::Zero { d: kernel.d() });
        }
        let use_grid = match path {
            DriftPath::Direct => false,
            DriftPath::Grid => true,
            DriftPath::Auto => n > 2048 && kernel.symbol_multiplier(1.0).is_ok(),
        };
        if use_grid {
            let solver = PdeSolver::new(grid, kernel)?;
            Ok(Self::Grid { solver: Box::new(solver), mollifier: *mollifier, cutoff })
        } else {
            let t = ForceTable::build(kernel, mollifier, table.resolution, table.tol)?;
            Ok(Self::Direct { table: Box::new(t), cutoff })
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero { .. })
    }

    pub fn drift(&self, d: usize, positions: &[f64]) -> Result<Drift, ParticleError> {
        match self {
            Self::Zero { .. } => Ok(Drift { values: vec![0.0; positions.len()], saturated: 0 }),
            Self::Direct { table, cutoff } => Ok(drift_direct(d, positions, table, cutoff.as_ref())),
            Self::Grid { solver, mollifier, cutoff } => drift_grid(d, positions, mollifier, solver, cutoff.as_ref()),
        }
    }
}

/// One Euler-Maruyama step: `X <- X + b dt + sqrt(2 dt) xi` with `xi` drawn
/// from the stream `(seed, particle, step)`.
pub fn em_step(state: &mut ParticleState, dt: f64, drift: &[f64], rng: Option<&CounterRng>) {
    let d = state.d;
    let step = state.step;
    let s = (2.0 * dt).sqrt();
    state.positions.par_chunks_mut(d).enumerate().for_each(|(i, x)| {
        let mut xi = [0.0; 3];
        if let Some(rng) = rng {
            rng.normals(Purpose::Noise, i as u64, step, &mut xi[..d]);
        }
        for a in 0..d {
            x[a] += drift[i * d + a] * dt + s * xi[a];
        }
    });
    state.step += 1;
    state.t = state.step as f64 * dt;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Rounded to the nearest step; `t_end` is always included.
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
    /// Disabling the noise turns the scheme into explicit Euler.
    pub noise: bool,
}

/// Step indices at which snapshots are taken.
pub fn snapshot_steps(dt: f64, t_end: f64, times: &[f64]) -> (u64, Vec<u64>) {
    let total = (t_end / dt).round() as u64;
    let mut steps: Vec<u64> = times.iter().map(|t| ((t / dt).round() as u64).min(total)).collect();
    steps.push(total);
    steps.sort_unstable();
    steps.dedup();
    (total, steps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub d: usize,
    /// `(t, positions)` per snapshot.
    pub snapshots: Vec<(f64, Vec<f64>)>,
    /// Fraction of drift components where the cutoff was active.
    pub saturation_fraction: f64,
}

impl Trajectory {
    /// `u^N` at every snapshot.
    pub fn fields(&self, mollifier: &MollifierSpec, spec: GridSpec) -> Result<Vec<(f64, GridField)>, ParticleError> {
        self.snapshots
            .iter()
            .map(|(t, p)| {
                let pts = WeightedPointSet::uniform(self.d, p.clone())?;
                Ok((*t, deposit_un(&pts, mollifier, spec)?.field))
            })
            .collect()
    }
}

/// Run the particle system from i.i.d. samples of `init`.
pub fn simulate(init: &InitialLaw, engine: &DriftEngine, cfg: &SimConfig) -> Result<Trajectory, ParticleError> {
    if !(cfg.dt > 0.0 && cfg.t_end >= 0.0) || cfg.n == 0 {
        return Err(ParticleError::Invalid(format!("need dt > 0, t_end >= 0, n > 0 (got {}, {}, {})", cfg.dt, cfg.t_end, cfg.n)));
    }
    let d = init.d();
    let rng = CounterRng::new(cfg.seed);
    let mut state = ParticleState::new(d, init.sample(cfg.n, &rng))?;
    let (total, steps) = snapshot_steps(cfg.dt, cfg.t_end, &cfg.snapshot_times);
    let mut snapshots = Vec::with_capacity(steps.len());
    let mut next = 0;
    let mut saturated = 0usize;
    let noise = cfg.noise.then_some(&rng);
    let zero = vec![0.0; state.positions.len()];
    loop {
        if next < steps.len() && steps[next] == state.step {
            snapshots.push((state.step as f64 * cfg.dt, state.positions.clone()));
            next += 1;
        }
        if state.step >= total {
            break;
        }
        if engine.is_zero() {
            em_step(&mut state, cfg.dt, &zero, noise);
        } else {
            let drift = engine.drift(d, &state.positions)?;
            saturated += drift.saturated;
            em_step(&mut state, cfg.dt, &drift.values, noise);
        }
        if state.positions.iter().any(|x| !x.is_finite()) {
            return Err(ParticleError::Invalid(format!("non-finite position at step {}", state.step)));
        }
    }
    let evals = (total as usize * state.positions.len()).max(1);
    Ok(Trajectory { d, snapshots, saturation_fraction: saturated as f64 / evals as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;

    fn table(family: KernelFamily, d: usize) -> ForceTable {
        let k = KernelSpec::new(family, d).unwrap();
        let m = MollifierSpec::new(d, 1.0, 0.25, 64).unwrap();
        ForceTable::build(&k, &m, 1024, 1e-6).unwrap()
    }

    #[test]
    fn pair_drift_is_antisymmetric() {
        let t = table(KernelFamily::KellerSegel { chi: 1.0 }, 2);
        let c = Cutoff::new(0.5).unwrap();
        let pos = [0.1, -0.2, 0.35, 0.05];
        let dr = drift_direct(2, &pos, &t, Some(&c)).values;
        assert_eq!(dr[0], -dr[2]);
        assert_eq!(dr[1], -dr[3]);
    }

    #[test]
    fn collinear_middle_particle_feels_nothing() {
        let t = table(KernelFamily::Riesz { s: 0.5, attractive: false }, 2);
        let pos = [-0.3, 0.0, 0.0, 0.0, 0.3, 0.0];
        let dr = drift_direct(2, &pos, &t, None).values;
        assert!(dr[2].abs() < 1e-15 && dr[3] == 0.0);
        assert!(dr[0] < 0.0 && dr[4] > 0.0);
    }

    #[test]
    fn noiseless_zero_drift_is_static() {
        let mut s = ParticleState::new(2, vec![0.5, 1.5, -2.0, 3.0]).unwrap();
        let before = s.positions.clone();
        em_step(&mut s, 0.1, &[0.0; 4], None);
        assert_eq!(s.positions, before);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn mixture_validation() {
        assert!(matches!(InitialLaw::gaussian(2, vec![0.0, 0.0], 0.0), Err(ParticleError::BadMixture(_))));
        let c = |w: f64| GaussianComponent { weight: w, mean: vec![0.0], var: 1.0 };
        assert!(InitialLaw::mixture(1, vec![c(0.5), c(0.4)]).is_err());
        assert!(InitialLaw::mixture(1, vec![]).is_err());
        assert!(InitialLaw::mixture(1, vec![c(0.5), c(0.5)]).is_ok());
    }

    #[test]
    fn snapshot_step_rounding() {
        let (total, steps) = snapshot_steps(0.01, 0.5, &[0.1, 0.25, 0.1]);
        assert_eq!(total, 50);
        assert_eq!(steps, vec![10, 25, 50]);
    }
}
