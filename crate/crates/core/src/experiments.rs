//! Monte-Carlo harnesses: convergence-rate sweeps over `N` and the coupling
//! gap between the particle system and McKean-Vlasov copies.

use rayon::prelude::*;
use thiserror::Error;

use crate::cutoff::Cutoff;
use crate::grid::{GridField, GridSpec};
use crate::kernel::KernelSpec;
use crate::kr::{kr_distance, KrError, KrOptions, Measure};
use crate::measures::{deposit_un, lp_norm, WeightedPointSet};
use crate::mollifier::MollifierSpec;
use crate::particles::{
    em_step, sample_field, snapshot_steps, DriftEngine, DriftPath, InitialLaw, ParticleError, ParticleState, SimConfig,
    TableSettings,
};
use crate::pde::{PdeError, PdeRun, PdeSolver, RunStatus};
use crate::rates::{theoretical_rate, Exponent};
use crate::rng::{derive_seed, CounterRng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error(transparent)]
    Particle(#[from] ParticleError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Kr(#[from] KrError),
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

impl From<crate::mollifier::MollifierError> for ExperimentError {
    fn from(e: crate::mollifier::MollifierError) -> Self {
        Self::Particle(e.into())
    }
}

impl From<crate::measures::MeasureError> for ExperimentError {
    fn from(e: crate::measures::MeasureError) -> Self {
        Self::Particle(e.into())
    }
}

/// Everything shared by the particle runs of one experiment.
#[derive(Debug, Clone)]
pub struct Setup {
    pub kernel: KernelSpec,
    pub init: InitialLaw,
    /// Grid for `u^N`; also the PDE grid and the grid of the grid drift path.
    pub grid: GridSpec,
    pub radius: f64,
    pub alpha: f64,
    pub table: TableSettings,
    pub dt: f64,
    pub t_end: f64,
    pub drift_path: DriftPath,
    pub cutoff: Option<Cutoff>,
    /// Integrability exponent of the `L^1 cap L^r` error.
    pub r: f64,
}

impl Setup {
    pub fn mollifier(&self, n: usize) -> Result<MollifierSpec, ExperimentError> {
        Ok(MollifierSpec::new(self.grid.d, self.radius, self.alpha, n)?)
    }

    pub fn engine(&self, n: usize) -> Result<DriftEngine, ExperimentError> {
        let m = self.mollifier(n)?;
        Ok(DriftEngine::build(&self.kernel, &m, n, self.drift_path, self.grid, self.table, self.cutoff)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorNorm {
    L1,
    /// `||.||_1 + ||.||_r`.
    L1Lr,
    /// Kantorovich-Rubinstein distance between `mu^N` and `u`.
    Kr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub n: usize,
    pub reps: usize,
    pub mean_err: f64,
    pub std_err: f64,
    /// Per-replication errors in replication order.
    pub errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// Decay exponent: minus the least-squares slope of `log err` against `log N`.
    pub slope: f64,
    /// Jackknife 95% half-width of `slope` (NaN with fewer than three rows).
    pub slope_ci: f64,
    pub rho_theory: f64,
    pub admissible: bool,
    pub norm: ErrorNorm,
}

/// Least-squares decay exponent of `y ~ C x^{-slope}` and its jackknife
/// 95% half-width.
pub fn fit_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    fn ls(pts: &[(f64, f64)]) -> f64 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        -sxy / sxx
    }
    let pts: Vec<(f64, f64)> = x.iter().zip(y).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let slope = ls(&pts);
    if pts.len() < 3 {
        return (slope, f64::NAN);
    }
    let loo: Vec<f64> = (0..pts.len())
        .map(|k| {
            let rest: Vec<(f64, f64)> = pts.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, p)| *p).collect();
            ls(&rest)
        })
        .collect();
    let m = loo.len() as f64;
    let mean = loo.iter().sum::<f64>() / m;
    let var = (m - 1.0) / m * loo.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>();
    (slope, 1.96 * var.sqrt())
}

/// Theoretical exponent for the setup, with the interaction exponent taken at
/// its supremum over admissible integrability.
pub fn rho_for(setup: &Setup) -> (f64, bool) {
    let d = setup.grid.d;
    let zeta = setup.kernel.meta().zeta.zeta(d, f64::INFINITY);
    theoretical_rate(d, setup.alpha, zeta, &Exponent::from_f64(setup.r))
}

fn require_completed(reference: &PdeRun) -> Result<(), ExperimentError> {
    match reference.status {
        RunStatus::Completed => Ok(()),
        RunStatus::BlowUpDetected { t_blow } => Err(PdeError::NotCompleted(t_blow).into()),
    }
}

fn snapshot_error(
    norm: ErrorNorm,
    r: f64,
    points: &[f64],
    mollifier: &MollifierSpec,
    exact: &GridField,
    kr: &KrOptions,
) -> Result<f64, ExperimentError> {
    let spec = exact.spec;
    let mu = WeightedPointSet::uniform(spec.d, points.to_vec())?;
    if norm == ErrorNorm::Kr {
        // the torus is unwrapped into the box so both measures live on one domain
        let wrapped: Vec<f64> = mu.points.iter().map(|&x| spec.wrap(x).0).collect();
        let mu = WeightedPointSet::uniform(spec.d, wrapped)?;
        return Ok(kr_distance(Measure::Points(&mu), Measure::Grid(exact), kr)?);
    }
    let un = deposit_un(&mu, mollifier, spec)?.field;
    let diff = GridField { spec, values: un.values.iter().zip(&exact.values).map(|(a, b)| a - b).collect() };
    Ok(match norm {
        ErrorNorm::L1 => lp_norm(&diff, 1.0),
        _ => lp_norm(&diff, 1.0) + lp_norm(&diff, r),
    })
}

/// `sup_t` of the selected error between the particle system and the
/// reference PDE run, for every `N` and replication.
pub fn rate_sweep(
    setup: &Setup,
    reference: &PdeRun,
    n_list: &[usize],
    reps: usize,
    norm: ErrorNorm,
    kr: &KrOptions,
    seed: u64,
) -> Result<RateReport, ExperimentError> {
    require_completed(reference)?;
    if reps == 0 || n_list.is_empty() {
        return Err(ExperimentError::Invalid("need at least one N and one replication".into()));
    }
    let times: Vec<f64> = reference.snapshots.iter().map(|(t, _)| *t).collect();
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut rows = Vec::with_capacity(ns.len());
    for &n in &ns {
        let mollifier = setup.mollifier(n)?;
        let engine = setup.engine(n)?;
        let errors: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let cfg = SimConfig {
                    n,
                    dt: setup.dt,
                    t_end: setup.t_end,
                    snapshot_times: times.clone(),
                    seed: derive_seed(seed, n as u64, rep as u64),
                    noise: true,
                };
                let traj = crate::particles::simulate(&setup.init, &engine, &cfg)?;
                let mut worst = 0.0f64;
                for (t, pos) in &traj.snapshots {
                    let exact = nearest_snapshot(reference, *t);
                    worst = worst.max(snapshot_error(norm, setup.r, pos, &mollifier, exact, kr)?);
                }
                Ok(worst)
            })
            .collect::<Result<_, ExperimentError>>()?;
        let mean = errors.iter().sum::<f64>() / reps as f64;
        let std = if reps > 1 {
            (errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (reps - 1) as f64).sqrt()
        } else {
            0.0
        };
        rows.push(RateRow { n, reps, mean_err: mean, std_err: std, errors });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.mean_err).collect();
    let (slope, slope_ci) = fit_slope(&x, &y);
    let (rho_theory, admissible) = rho_for(setup);
    Ok(RateReport { rows, slope, slope_ci, rho_theory, admissible, norm })
}

fn nearest_snapshot(run: &PdeRun, t: f64) -> &GridField {
    &run.snapshots
        .iter()
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .expect("reference has snapshots")
        .1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosRow {
    pub n: usize,
    pub rep: usize,
    /// `max_i sup_t |X^i_t - X~^i_t|`.
    pub gap: f64,
}

/// Largest spacing between reference snapshots allowed, in particle steps.
pub const MAX_SNAPSHOT_SPACING_STEPS: f64 = 8.0;

/// Couple the particle system with copies driven by the PDE velocity
/// `K * u_t`, sharing initial positions and Brownian increments.
pub fn chaos_coupling(
    setup: &Setup,
    reference: &PdeRun,
    n_list: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<ChaosRow>, ExperimentError> {
    require_completed(reference)?;
    let snaps = &reference.snapshots;
    if snaps.is_empty() || snaps[0].0 > 0.0 || snaps[snaps.len() - 1].0 + 1e-12 < setup.t_end {
        return Err(ExperimentError::Invalid("reference snapshots must cover [0, T]".into()));
    }
    let max_gap = MAX_SNAPSHOT_SPACING_STEPS * setup.dt * (1.0 + 1e-9);
    if snaps.windows(2).any(|w| w[1].0 - w[0].0 > max_gap) {
        return Err(ExperimentError::Invalid(format!(
            "reference snapshot spacing exceeds {MAX_SNAPSHOT_SPACING_STEPS} particle steps"
        )));
    }
    let velocities: Option<Vec<Vec<GridField>>> = if setup.kernel.is_zero() {
        None
    } else {
        let solver = PdeSolver::new(setup.grid, &setup.kernel)?;
        Some(snaps.iter().map(|(_, u)| solver.velocity(u)).collect())
    };
    let d = setup.grid.d;
    let mut rows = Vec::new();
    for &n in n_list {
        let engine = setup.engine(n)?;
        let gaps: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let rng = CounterRng::new(derive_seed(seed, n as u64, rep as u64));
                let start = setup.init.sample(n, &rng);
                let mut x = ParticleState::new(d, start.clone())?;
                let mut y = ParticleState::new(d, start)?;
                let (total, _) = snapshot_steps(setup.dt, setup.t_end, &[]);
                let mut gap = 0.0f64;
                for _ in 0..total {
                    let t = x.t;
                    let bx = engine.drift(d, &x.positions)?.values;
                    let by = match &velocities {
                        None => vec![0.0; y.positions.len()],
                        Some(v) => mean_field_drift(d, &y.positions, reference, v, t),
                    };
                    em_step(&mut x, setup.dt, &bx, Some(&rng));
                    em_step(&mut y, setup.dt, &by, Some(&rng));
                    for (a, b) in x.positions.chunks(d).zip(y.positions.chunks(d)) {
                        let dist = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                        gap = gap.max(dist);
                    }
                }
                Ok(gap)
            })
            .collect::<Result<_, ExperimentError>>()?;
        rows.extend(gaps.into_iter().enumerate().map(|(rep, gap)| ChaosRow { n, rep, gap }));
    }
    Ok(rows)
}

/// `(K * u_t)(y)`, linear in time between snapshots and multilinear in space.
fn mean_field_drift(d: usize, pos: &[f64], run: &PdeRun, vel: &[Vec<GridField>], t: f64) -> Vec<f64> {
    let snaps = &run.snapshots;
    let k = snaps.partition_point(|(ts, _)| *ts <= t).clamp(1, snaps.len());
    let (i0, i1) = if k >= snaps.len() { (snaps.len() - 1, snaps.len() - 1) } else { (k - 1, k) };
    let w = if i0 == i1 { 0.0 } else { ((t - snaps[i0].0) / (snaps[i1].0 - snaps[i0].0)).clamp(0.0, 1.0) };
    let a = sample_field(d, pos, &vel[i0]);
    if w == 0.0 {
        return a;
    }
    let b = sample_field(d, pos, &vel[i1]);
    a.iter().zip(&b).map(|(p, q)| (1.0 - w) * p + w * q).collect()
}
