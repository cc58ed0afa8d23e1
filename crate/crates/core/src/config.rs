//! Line-oriented experiment configuration.
//!
//! Each non-blank line is `section.key = value`; `#` starts a comment. Lists
//! are comma separated, and the component means of `init.means` are
//! separated by `;`. Every key has a default, so an empty file is a valid
//! (zero-kernel) configuration.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::cutoff::Cutoff;
use crate::experiments::{ErrorNorm, Setup};
use crate::grid::GridSpec;
use crate::kernel::{KernelFamily, KernelSpec};
use crate::kr::KrOptions;
use crate::mollifier::MollifierSpec;
use crate::particles::{DriftPath, GaussianComponent, InitialLaw, TableSettings};
use crate::pde::{PdeConfig, Scheme};
use crate::rates::theoretical_rate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("configuration is invalid:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutoffSetting {
    None,
    Fixed(f64),
    /// Derived from the reference PDE run.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kernel: KernelFamily,
    pub d: usize,
    pub g: usize,
    pub l: f64,
    pub radius: f64,
    pub alpha: f64,
    pub table_resolution: usize,
    pub table_tol: f64,
    pub init: Vec<GaussianComponent>,
    pub n: Vec<usize>,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub cutoff_a: CutoffSetting,
    pub drift_path: DriftPath,
    pub pde_dt: f64,
    pub snapshots: Vec<f64>,
    pub r: f64,
    pub scheme: Scheme,
    pub blowup_guard: f64,
    pub reps: usize,
    pub norm: ErrorNorm,
    pub kr_resolution: usize,
    pub output_dir: String,
}

/// What the configuration will be used for; selects the cross-field checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Pde,
    Simulate,
    Rate,
    Chaos,
}

const KEYS: &[&str] = &[
    "kernel.family",
    "kernel.s",
    "kernel.attractive",
    "kernel.chi",
    "kernel.a",
    "kernel.b",
    "kernel.va",
    "kernel.vb",
    "grid.d",
    "grid.g",
    "grid.l",
    "mollifier.radius",
    "mollifier.alpha",
    "mollifier.table_resolution",
    "mollifier.table_tol",
    "init.weights",
    "init.means",
    "init.vars",
    "particles.n",
    "particles.dt",
    "particles.t_end",
    "particles.seed",
    "particles.cutoff_a",
    "particles.drift_path",
    "pde.dt",
    "pde.snapshots",
    "pde.r",
    "pde.scheme",
    "pde.blowup_guard",
    "experiment.reps",
    "experiment.norm",
    "experiment.kr_resolution",
    "output.dir",
];

fn parse_f64(s: &str) -> Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        t => f64::from_str(t).map_err(|_| format!("`{s}` is not a number")),
    }
}

fn parse_list<T, F: Fn(&str) -> Result<T, String>>(s: &str, f: F) -> Result<Vec<T>, String> {
    s.split([',', ' ', '\t']).filter(|t| !t.is_empty()).map(f).collect()
}

fn parse_int<T: FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
}

fn fmt_list<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    /// Parse and check syntax; every problem is reported, not just the first.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut errors = Vec::new();
        let mut map: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected `section.key = value`", no + 1));
                continue;
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                errors.push(format!("line {}: unknown key `{key}`", no + 1));
                continue;
            }
            if let Some((first, _)) = map.insert(key, (no + 1, value.trim())) {
                errors.push(format!("line {}: `{key}` already set on line {first}", no + 1));
            }
        }
        let field = |key: &str, errors: &mut Vec<String>| -> Option<&str> {
            map.get(key).map(|(_, v)| *v).filter(|v| {
                if v.is_empty() {
                    errors.push(format!("`{key}` has an empty value"));
                    false
                } else {
                    true
                }
            })
        };
        macro_rules! read {
            ($key:expr, $parse:expr, $default:expr) => {
                match field($key, &mut errors) {
                    None => $default,
                    Some(v) => match $parse(v) {
                        Ok(x) => x,
                        Err(e) => {
                            errors.push(format!("`{}`: {}", $key, e));
                            $default
                        }
                    },
                }
            };
        }

        let d: usize = read!("grid.d", parse_int, 2);
        let family_str: String = read!("kernel.family", |v: &str| Ok::<_, String>(v.to_ascii_lowercase()), "zero".into());
        let s = read!("kernel.s", parse_f64, 0.0);
        let attractive = read!(
            "kernel.attractive",
            |v: &str| match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("`{v}` is not true or false")),
            },
            false
        );
        let chi = read!("kernel.chi", parse_f64, 4.0 * std::f64::consts::PI);
        let a = read!("kernel.a", parse_f64, 0.5);
        let b = read!("kernel.b", parse_f64, 0.25);
        let va = read!("kernel.va", parse_f64, 1.0);
        let vb = read!("kernel.vb", parse_f64, 1.0);
        let kernel = match family_str.as_str() {
            "zero" => KernelFamily::Zero,
            "riesz" => KernelFamily::Riesz { s, attractive },
            "coulomb" => KernelFamily::Coulomb,
            "biot-savart" => KernelFamily::BiotSavart,
            "keller-segel" => KernelFamily::KellerSegel { chi },
            "attractive-repulsive" => KernelFamily::AttractiveRepulsive { a, b, va, vb },
            other => {
                errors.push(format!("`kernel.family`: unknown family `{other}`"));
                KernelFamily::Zero
            }
        };

        let weights: Vec<f64> = read!("init.weights", |v| parse_list(v, parse_f64), vec![1.0]);
        let means: Vec<Vec<f64>> = read!(
            "init.means",
            |v: &str| v.split(';').map(|m| parse_list(m, parse_f64)).collect::<Result<Vec<_>, _>>(),
            vec![vec![0.0; d]]
        );
        let vars: Vec<f64> = read!("init.vars", |v| parse_list(v, parse_f64), vec![0.25]);
        let mut init = Vec::new();
        if weights.len() != means.len() || weights.len() != vars.len() {
            errors.push(format!(
                "`init.*`: {} weights, {} means and {} variances do not match",
                weights.len(),
                means.len(),
                vars.len()
            ));
        } else {
            for ((w, m), v) in weights.iter().zip(means).zip(&vars) {
                init.push(GaussianComponent { weight: *w, mean: m, var: *v });
            }
        }

        let t_end = read!("particles.t_end", parse_f64, 0.5);
        let cfg = Self {
            kernel,
            d,
            g: read!("grid.g", parse_int, 128),
            l: read!("grid.l", parse_f64, 4.0),
            radius: read!("mollifier.radius", parse_f64, 1.0),
            alpha: read!("mollifier.alpha", parse_f64, 0.25),
            table_resolution: read!("mollifier.table_resolution", parse_int, 2048),
            table_tol: read!("mollifier.table_tol", parse_f64, 1e-6),
            init,
            n: read!("particles.n", |v| parse_list(v, parse_int), vec![1024]),
            dt: read!("particles.dt", parse_f64, 0.01),
            t_end,
            seed: read!("particles.seed", parse_int, 0),
            cutoff_a: read!(
                "particles.cutoff_a",
                |v: &str| match v {
                    "auto" => Ok(CutoffSetting::Auto),
                    "none" => Ok(CutoffSetting::None),
                    x => parse_f64(x).map(CutoffSetting::Fixed),
                },
                CutoffSetting::Auto
            ),
            drift_path: read!(
                "particles.drift_path",
                |v: &str| match v {
                    "direct" => Ok(DriftPath::Direct),
                    "grid" => Ok(DriftPath::Grid),
                    "auto" => Ok(DriftPath::Auto),
                    x => Err(format!("`{x}` is not direct, grid or auto")),
                },
                DriftPath::Auto
            ),
            pde_dt: read!("pde.dt", parse_f64, 1e-3),
            snapshots: read!("pde.snapshots", |v| parse_list(v, parse_f64), default_snapshots(t_end)),
            r: read!("pde.r", parse_f64, f64::NAN),
            scheme: read!(
                "pde.scheme",
                |v: &str| match v {
                    "euler" => Ok(Scheme::Euler),
                    "heun" => Ok(Scheme::Heun),
                    x => Err(format!("`{x}` is not euler or heun")),
                },
                Scheme::Euler
            ),
            blowup_guard: read!("pde.blowup_guard", parse_f64, 1e6),
            reps: read!("experiment.reps", parse_int, 10),
            norm: read!(
                "experiment.norm",
                |v: &str| match v {
                    "l1" => Ok(ErrorNorm::L1),
                    "l1lr" => Ok(ErrorNorm::L1Lr),
                    "kr" => Ok(ErrorNorm::Kr),
                    x => Err(format!("`{x}` is not l1, l1lr or kr")),
                },
                ErrorNorm::L1Lr
            ),
            kr_resolution: read!("experiment.kr_resolution", parse_int, 64),
            output_dir: read!("output.dir", |v: &str| Ok::<_, String>(v.to_string()), "out".to_string()),
        };
        let mut cfg = cfg;
        if cfg.r.is_nan() {
            cfg.r = cfg.default_r();
        }
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(errors))
        }
    }

    /// Twice the lower end of the kernel's integrability window.
    fn default_r(&self) -> f64 {
        match KernelSpec::new(self.kernel, self.d) {
            Ok(k) if !k.is_zero() => {
                let m = k.meta().r_admissible_min;
                if m.is_finite() {
                    (2.0 * m).max(2.0)
                } else {
                    f64::INFINITY
                }
            }
            _ => 2.0,
        }
    }

    /// Canonical text form; parsing it gives back an identical configuration.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("kernel.family", self.kernel.name().into());
        match self.kernel {
            KernelFamily::Riesz { s, attractive } => {
                line("kernel.s", s.to_string());
                line("kernel.attractive", attractive.to_string());
            }
            KernelFamily::KellerSegel { chi } => line("kernel.chi", chi.to_string()),
            KernelFamily::AttractiveRepulsive { a, b, va, vb } => {
                line("kernel.a", a.to_string());
                line("kernel.b", b.to_string());
                line("kernel.va", va.to_string());
                line("kernel.vb", vb.to_string());
            }
            _ => {}
        }
        line("grid.d", self.d.to_string());
        line("grid.g", self.g.to_string());
        line("grid.l", self.l.to_string());
        line("mollifier.radius", self.radius.to_string());
        line("mollifier.alpha", self.alpha.to_string());
        line("mollifier.table_resolution", self.table_resolution.to_string());
        line("mollifier.table_tol", self.table_tol.to_string());
        line("init.weights", fmt_list(&self.init.iter().map(|c| c.weight).collect::<Vec<_>>()));
        line(
            "init.means",
            self.init.iter().map(|c| fmt_list(&c.mean)).collect::<Vec<_>>().join("; "),
        );
        line("init.vars", fmt_list(&self.init.iter().map(|c| c.var).collect::<Vec<_>>()));
        line("particles.n", fmt_list(&self.n));
        line("particles.dt", self.dt.to_string());
        line("particles.t_end", self.t_end.to_string());
        line("particles.seed", self.seed.to_string());
        line(
            "particles.cutoff_a",
            match self.cutoff_a {
                CutoffSetting::None => "none".into(),
                CutoffSetting::Auto => "auto".into(),
                CutoffSetting::Fixed(a) => a.to_string(),
            },
        );
        line(
            "particles.drift_path",
            match self.drift_path {
                DriftPath::Direct => "direct",
                DriftPath::Grid => "grid",
                DriftPath::Auto => "auto",
            }
            .into(),
        );
        line("pde.dt", self.pde_dt.to_string());
        line("pde.snapshots", fmt_list(&self.snapshots));
        line("pde.r", self.r.to_string());
        line(
            "pde.scheme",
            match self.scheme {
                Scheme::Euler => "euler",
                Scheme::Heun => "heun",
            }
            .into(),
        );
        line("pde.blowup_guard", self.blowup_guard.to_string());
        line("experiment.reps", self.reps.to_string());
        line(
            "experiment.norm",
            match self.norm {
                ErrorNorm::L1 => "l1",
                ErrorNorm::L1Lr => "l1lr",
                ErrorNorm::Kr => "kr",
            }
            .into(),
        );
        line("experiment.kr_resolution", self.kr_resolution.to_string());
        line("output.dir", self.output_dir.clone());
        s
    }

    /// Cross-field checks for `task`, all collected before anything runs.
    pub fn validate(&self, task: Task) -> Result<(), ConfigError> {
        let mut e = Vec::new();
        let kernel = match KernelSpec::new(self.kernel, self.d) {
            Ok(k) => Some(k),
            Err(err) => {
                e.push(format!("kernel: {err}"));
                None
            }
        };
        let grid = match GridSpec::new(self.d, self.g, self.l) {
            Ok(g) => Some(g),
            Err(err) => {
                e.push(format!("grid: {err}"));
                None
            }
        };
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            e.push(format!("mollifier.radius = {} must be positive", self.radius));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            e.push(format!("mollifier.alpha = {} must lie in [0, 1)", self.alpha));
        }
        if self.table_resolution < 16 {
            e.push("mollifier.table_resolution must be at least 16".into());
        }
        if !(self.table_tol > 0.0 && self.table_tol < 1.0) {
            e.push(format!("mollifier.table_tol = {} must lie in (0, 1)", self.table_tol));
        }
        if let Err(err) = InitialLaw::mixture(self.d, self.init.clone()) {
            e.push(format!("init: {err}"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            e.push(format!("particles.dt = {} must be positive", self.dt));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            e.push(format!("particles.t_end = {} must be positive", self.t_end));
        } else if self.dt > 0.0 && ((self.t_end / self.dt).round() * self.dt - self.t_end).abs() > 1e-9 * self.t_end {
            e.push(format!("particles.t_end = {} is not a whole number of steps of {}", self.t_end, self.dt));
        }
        if let CutoffSetting::Fixed(a) = self.cutoff_a {
            if Cutoff::new(a).is_err() {
                e.push(format!("particles.cutoff_a = {a} must be positive, `auto` or `none`"));
            }
        }
        if !(self.pde_dt > 0.0 && self.pde_dt.is_finite()) {
            e.push(format!("pde.dt = {} must be positive", self.pde_dt));
        }
        if self.snapshots.iter().any(|t| !(*t >= 0.0 && *t <= self.t_end)) {
            e.push(format!("pde.snapshots must lie in [0, {}]", self.t_end));
        }
        if !(self.r >= 1.0) {
            e.push(format!("pde.r = {} must be at least 1", self.r));
        }
        if !(self.blowup_guard > 0.0) {
            e.push("pde.blowup_guard must be positive".into());
        }
        if self.reps == 0 {
            e.push("experiment.reps must be at least 1".into());
        }
        if self.kr_resolution < 2 {
            e.push("experiment.kr_resolution must be at least 2".into());
        }
        let needs_particles = matches!(task, Task::Simulate | Task::Rate | Task::Chaos);
        if needs_particles && self.n.is_empty() {
            e.push("particles.n must list at least one particle count".into());
        }
        if let (Some(k), Some(g)) = (kernel, grid) {
            let needs_pde = task != Task::Simulate || self.cutoff_a == CutoffSetting::Auto && !k.is_zero();
            let has_symbol = k.symbol_multiplier(1.0).is_ok();
            if needs_pde && !has_symbol {
                e.push(format!("kernel {} has no Fourier symbol, so the PDE cannot be solved", k.family().name()));
            }
            if !k.is_zero() && self.r <= k.meta().r_admissible_min {
                e.push(format!("pde.r = {} must exceed {} for this kernel", self.r, k.meta().r_admissible_min));
            }
            if needs_particles {
                for &n in &self.n {
                    if n == 0 {
                        e.push("particles.n entries must be positive".into());
                        continue;
                    }
                    if self.radius > 0.0 && (0.0..1.0).contains(&self.alpha) {
                        if let Ok(m) = MollifierSpec::new(self.d, self.radius, self.alpha, n) {
                            let rn = m.support_radius();
                            if rn < 2.0 * g.dx() {
                                e.push(format!(
                                    "N = {n}: bump radius {rn:.4} covers fewer than 2 cells of width {:.4}",
                                    g.dx()
                                ));
                            }
                            if rn >= g.l {
                                e.push(format!("N = {n}: bump radius {rn:.4} does not fit in the domain"));
                            }
                        }
                    }
                }
                if self.drift_path == DriftPath::Grid && !has_symbol {
                    e.push("particles.drift_path = grid needs a kernel with a Fourier symbol".into());
                }
            }
            if matches!(task, Task::Rate | Task::Chaos) {
                let zeta = k.meta().zeta.zeta(self.d, f64::INFINITY);
                let (_, ok) = theoretical_rate(self.d, self.alpha, zeta, &crate::rates::Exponent::from_f64(self.r));
                if !ok && !k.is_zero() {
                    e.push(format!(
                        "mollifier.alpha = {} is outside the admissible window for d = {} and r = {}",
                        self.alpha, self.d, self.r
                    ));
                }
            }
            if task == Task::Chaos {
                let mut ts = self.snapshots.clone();
                ts.sort_by(f64::total_cmp);
                let covers = ts.first() == Some(&0.0) && ts.last().is_some_and(|t| (t - self.t_end).abs() < 1e-12);
                let spaced = ts.windows(2).all(|w| w[1] - w[0] <= 8.0 * self.dt * (1.0 + 1e-9));
                if !covers || !spaced {
                    e.push(format!(
                        "pde.snapshots must run from 0 to {} with spacing at most 8 particle steps ({})",
                        self.t_end,
                        8.0 * self.dt
                    ));
                }
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(e))
        }
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        KernelSpec::new(self.kernel, self.d).expect("validated")
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::new(self.d, self.g, self.l).expect("validated")
    }

    pub fn initial_law(&self) -> InitialLaw {
        InitialLaw::mixture(self.d, self.init.clone()).expect("validated")
    }

    pub fn pde_config(&self) -> PdeConfig {
        PdeConfig {
            dt: self.pde_dt,
            t_end: self.t_end,
            snapshot_times: self.snapshots.clone(),
            r: self.r,
            scheme: self.scheme,
            blowup_guard: self.blowup_guard,
            cutoff: None,
        }
    }

    pub fn kr_options(&self) -> KrOptions {
        KrOptions { resolution: self.kr_resolution, ..KrOptions::default() }
    }

    /// Experiment setup with the cutoff level already resolved.
    pub fn setup(&self, cutoff: Option<Cutoff>) -> Setup {
        Setup {
            kernel: self.kernel_spec(),
            init: self.initial_law(),
            grid: self.grid_spec(),
            radius: self.radius,
            alpha: self.alpha,
            table: TableSettings { resolution: self.table_resolution, tol: self.table_tol },
            dt: self.dt,
            t_end: self.t_end,
            drift_path: self.drift_path,
            cutoff,
            r: self.r,
        }
    }
}

/// Eleven equally spaced times from 0 to `t_end`.
fn default_snapshots(t_end: f64) -> Vec<f64> {
    (0..=10).map(|i| t_end * i as f64 / 10.0).collect()
}
