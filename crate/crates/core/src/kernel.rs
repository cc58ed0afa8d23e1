//! Catalog of singular interaction kernels.
//!
//! Every catalog kernel is isotropic up to a fixed rotation: it can be
//! written `K(x) = k(|x|) P x / |x|` where `k` is a signed radial profile and
//! `P` is either the identity or, for Biot-Savart, the quarter turn
//! `(x1, x2) -> (-x2, x1)`. The same structure holds in Fourier space, where
//! `sigma_K(xi) = i m(|xi|) P xi` for a real multiplier `m`.

use std::f64::consts::PI;
use std::fmt;

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::quadrature::{QuadError, TanhSinh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel outside the catalog: {0}")]
    OutOfCatalog(String),
    #[error("kernel evaluated at its singularity x = 0")]
    DomainError,
    #[error("no closed-form Fourier symbol for the {0} kernel")]
    UnsupportedSymbol(&'static str),
    #[error("divergent kernel norm: {0}")]
    DivergentNorm(String),
    #[error("dimension mismatch: kernel has d = {expected}, got a point of length {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}

/// Interaction kernel families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelFamily {
    Zero,
    /// `K_s = -sign grad V_s` with `V_s = |x|^{-s}` (`-log|x|` when `s = 0`).
    Riesz { s: f64, attractive: bool },
    /// Bare Coulomb force `-grad V_C`.
    Coulomb,
    /// `(1/pi) x^perp / |x|^2`, planar only.
    BiotSavart,
    /// Chemotactic attraction `-chi grad(Newtonian potential)`.
    KellerSegel { chi: f64 },
    /// Force `-grad V` of `V(r) = va r^{-a} - vb r^{-b}`.
    AttractiveRepulsive { a: f64, b: f64, va: f64, vb: f64 },
}

impl KernelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            KernelFamily::Zero => "zero",
            KernelFamily::Riesz { .. } => "riesz",
            KernelFamily::Coulomb => "coulomb",
            KernelFamily::BiotSavart => "biot-savart",
            KernelFamily::KellerSegel { .. } => "keller-segel",
            KernelFamily::AttractiveRepulsive { .. } => "attractive-repulsive",
        }
    }
}

/// How the interaction exponent `zeta` of the Holder-mapping property is
/// obtained for a kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZetaRule {
    /// `zeta = 1` for every admissible parameter choice.
    One,
    /// `zeta(z) = 1 - d/z` for an integrability exponent `z in (d, inf]`.
    OneMinusDOverZ,
}

impl ZetaRule {
    pub fn zeta(&self, d: usize, z: f64) -> f64 {
        match self {
            ZetaRule::One => 1.0,
            ZetaRule::OneMinusDOverZ => {
                if z.is_infinite() {
                    1.0
                } else {
                    1.0 - d as f64 / z
                }
            }
        }
    }
}

/// Integrability and regularity parameters a kernel admits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionMeta {
    /// `K in L^p(B_1)` for every `1 <= p < p_sup` (and `p = inf` when `p_sup = inf`).
    pub p_sup: f64,
    /// `K in L^q(B_1^c)` for every `q > q_inf` and for `q = inf`.
    pub q_inf: f64,
    /// Lower end of the open window for the integrability exponent `r`.
    pub r_admissible_min: f64,
    pub zeta: ZetaRule,
    pub singular_class: bool,
    /// Singularity exponent `s` of the matching Riesz kernel (`|K| ~ |x|^{-(s+1)}` at 0).
    pub riesz_exponent: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    d: usize,
    meta: AssumptionMeta,
}

/// Surface area of the unit sphere in `R^d`.
pub fn unit_sphere_area(d: usize) -> f64 {
    2.0 * PI.powf(d as f64 / 2.0) / libm::tgamma(d as f64 / 2.0)
}

/// Constant `C` in `F[x/|x|^{s+2}](xi) = -i xi C |xi|^{s-d}`.
pub fn riesz_field_constant(d: usize, s: f64) -> f64 {
    let df = d as f64;
    PI.powf(df / 2.0) * 2f64.powf(df - s - 1.0) * libm::tgamma((df - s) / 2.0)
        / libm::tgamma(s / 2.0 + 1.0)
}

impl KernelSpec {
    pub fn new(family: KernelFamily, d: usize) -> Result<Self, KernelError> {
        if d == 0 {
            return Err(KernelError::OutOfCatalog("dimension must be at least 1".into()));
        }
        let df = d as f64;
        let power_meta = |k: f64, zeta: ZetaRule, singular: bool, s: Option<f64>| {
            // |K| ~ |x|^{-k}; L^p near 0 iff kp < d, L^q at infinity iff kq > d.
            let crit = if k > 0.0 { df / k } else { f64::INFINITY };
            let r_min = if k > 0.0 { df / (df - k) } else { 1.0 };
            AssumptionMeta {
                p_sup: crit,
                q_inf: crit,
                r_admissible_min: r_min,
                zeta,
                singular_class: singular,
                riesz_exponent: s,
            }
        };
        let meta = match family {
            KernelFamily::Zero => AssumptionMeta {
                p_sup: f64::INFINITY,
                q_inf: 1.0,
                r_admissible_min: 1.0,
                zeta: ZetaRule::One,
                singular_class: false,
                riesz_exponent: None,
            },
            KernelFamily::Riesz { s, .. } => {
                if !(s >= 0.0) {
                    return Err(KernelError::OutOfCatalog(format!("Riesz exponent s = {s} must be >= 0")));
                }
                if s >= df - 1.0 {
                    return Err(KernelError::OutOfCatalog(format!(
                        "Riesz exponent s = {s} is not below d - 1 = {}; the kernel is not locally integrable",
                        d - 1
                    )));
                }
                let singular = s > df - 2.0;
                let zeta = if singular { ZetaRule::One } else { ZetaRule::OneMinusDOverZ };
                power_meta(s + 1.0, zeta, singular, Some(s))
            }
            KernelFamily::Coulomb => {
                if d < 2 {
                    return Err(KernelError::OutOfCatalog(
                        "the Coulomb kernel is not locally integrable for d = 1".into(),
                    ));
                }
                let s = df - 2.0;
                power_meta(s + 1.0, ZetaRule::OneMinusDOverZ, false, Some(s))
            }
            KernelFamily::BiotSavart => {
                if d != 2 {
                    return Err(KernelError::OutOfCatalog(format!("Biot-Savart requires d = 2, got d = {d}")));
                }
                power_meta(1.0, ZetaRule::OneMinusDOverZ, false, Some(0.0))
            }
            KernelFamily::KellerSegel { chi } => {
                if !(chi > 0.0) || !chi.is_finite() {
                    return Err(KernelError::OutOfCatalog(format!("Keller-Segel needs chi > 0, got {chi}")));
                }
                power_meta(df - 1.0, ZetaRule::OneMinusDOverZ, false, Some(df - 2.0))
            }
            KernelFamily::AttractiveRepulsive { a, b, va, vb } => {
                if !(a > 0.0 && b > 0.0 && va > 0.0 && vb > 0.0) {
                    return Err(KernelError::OutOfCatalog(
                        "attractive-repulsive needs a, b, va, vb > 0".into(),
                    ));
                }
                let hi = a.max(b);
                let lo = a.min(b);
                if hi >= df - 1.0 {
                    return Err(KernelError::OutOfCatalog(format!(
                        "attractive-repulsive exponent {hi} is not below d - 1 = {}",
                        d - 1
                    )));
                }
                let singular = hi > df - 2.0;
                let zeta = if singular { ZetaRule::One } else { ZetaRule::OneMinusDOverZ };
                let p_sup = df / (hi + 1.0);
                let q_inf = df / (lo + 1.0);
                let p_conj = p_sup / (p_sup - 1.0);
                let q_conj = q_inf / (q_inf - 1.0);
                AssumptionMeta {
                    p_sup,
                    q_inf,
                    r_admissible_min: p_conj.max(q_conj),
                    zeta,
                    singular_class: singular,
                    riesz_exponent: Some(hi),
                }
            }
        };
        Ok(Self { family, d, meta })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn meta(&self) -> &AssumptionMeta {
        &self.meta
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, KernelFamily::Zero)
    }

    /// Whether the kernel points along `x^perp` rather than `x`.
    pub fn is_rotational(&self) -> bool {
        matches!(self.family, KernelFamily::BiotSavart)
    }

    /// Signed radial profile `k(rho)` with `K(x) = k(|x|) P x/|x|`.
    pub fn radial_profile(&self, rho: f64) -> f64 {
        let df = self.d as f64;
        match self.family {
            KernelFamily::Zero => 0.0,
            KernelFamily::Riesz { s, attractive } => {
                let sign = if attractive { -1.0 } else { 1.0 };
                let factor = if s == 0.0 { 1.0 } else { s };
                sign * factor * rho.powf(-(s + 1.0))
            }
            KernelFamily::Coulomb => {
                let factor = if self.d == 2 { 1.0 } else { df - 2.0 };
                factor * rho.powf(-(df - 1.0))
            }
            KernelFamily::BiotSavart => 1.0 / (PI * rho),
            KernelFamily::KellerSegel { chi } => -chi / unit_sphere_area(self.d) * rho.powf(1.0 - df),
            KernelFamily::AttractiveRepulsive { a, b, va, vb } => {
                a * va * rho.powf(-(a + 1.0)) - b * vb * rho.powf(-(b + 1.0))
            }
        }
    }

    /// `k(rho) rho^m`, evaluated without intermediate overflow near the origin.
    pub fn weighted_profile(&self, rho: f64, m: f64) -> f64 {
        let df = self.d as f64;
        match self.family {
            KernelFamily::Zero => 0.0,
            KernelFamily::Riesz { s, attractive } => {
                let sign = if attractive { -1.0 } else { 1.0 };
                let factor = if s == 0.0 { 1.0 } else { s };
                sign * factor * rho.powf(m - s - 1.0)
            }
            KernelFamily::Coulomb => {
                let factor = if self.d == 2 { 1.0 } else { df - 2.0 };
                factor * rho.powf(m - df + 1.0)
            }
            KernelFamily::BiotSavart => rho.powf(m - 1.0) / PI,
            KernelFamily::KellerSegel { chi } => -chi / unit_sphere_area(self.d) * rho.powf(m + 1.0 - df),
            KernelFamily::AttractiveRepulsive { a, b, va, vb } => {
                a * va * rho.powf(m - a - 1.0) - b * vb * rho.powf(m - b - 1.0)
            }
        }
    }

    /// `ln |k(rho)|`, finite for tiny `rho` where `k` itself overflows.
    pub fn log_abs_profile(&self, rho: f64) -> f64 {
        let lr = rho.ln();
        if let Some((c, k)) = self.power_law() {
            return c.ln() - k * lr;
        }
        match self.family {
            KernelFamily::AttractiveRepulsive { a, b, va, vb } => {
                // factor out the dominant power near the origin
                let (hi, lo, chi, clo) = if a >= b { (a, b, a * va, -b * vb) } else { (b, a, -b * vb, a * va) };
                -(hi + 1.0) * lr + (chi + clo * rho.powf(hi - lo)).abs().ln()
            }
            _ => f64::NEG_INFINITY,
        }
    }

    /// `(c, k)` with `|K(x)| = c |x|^{-k}` when the kernel is a pure power law.
    pub fn power_law(&self) -> Option<(f64, f64)> {
        let df = self.d as f64;
        match self.family {
            KernelFamily::Zero | KernelFamily::AttractiveRepulsive { .. } => None,
            KernelFamily::Riesz { s, .. } => Some((if s == 0.0 { 1.0 } else { s }, s + 1.0)),
            KernelFamily::Coulomb => Some((if self.d == 2 { 1.0 } else { df - 2.0 }, df - 1.0)),
            KernelFamily::BiotSavart => Some((1.0 / PI, 1.0)),
            KernelFamily::KellerSegel { chi } => Some((chi / unit_sphere_area(self.d), df - 1.0)),
        }
    }

    /// Closed-form kernel value at `x != 0`, written into `out`.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), KernelError> {
        if x.len() != self.d || out.len() != self.d {
            return Err(KernelError::DimensionMismatch { expected: self.d, got: x.len() });
        }
        let rho2: f64 = x.iter().map(|v| v * v).sum();
        if rho2 == 0.0 {
            return Err(KernelError::DomainError);
        }
        let rho = rho2.sqrt();
        let c = self.radial_profile(rho) / rho;
        self.apply_direction(c, x, out);
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, KernelError> {
        let mut out = vec![0.0; self.d];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    /// `out = c * P x`.
    #[inline]
    pub(crate) fn apply_direction(&self, c: f64, x: &[f64], out: &mut [f64]) {
        if self.is_rotational() {
            out[0] = -c * x[1];
            out[1] = c * x[0];
        } else {
            for (o, xi) in out.iter_mut().zip(x) {
                *o = c * xi;
            }
        }
    }

    /// Real multiplier `m(|xi|^2)` with `sigma_K(xi) = i m P xi`; zero at `xi = 0`.
    pub fn symbol_multiplier(&self, xi_sq: f64) -> Result<f64, KernelError> {
        if let KernelFamily::AttractiveRepulsive { .. } = self.family {
            return Err(KernelError::UnsupportedSymbol(self.family.name()));
        }
        if xi_sq == 0.0 {
            return Ok(0.0);
        }
        let df = self.d as f64;
        let m = match self.family {
            KernelFamily::Zero => 0.0,
            KernelFamily::Riesz { s, attractive } => {
                let sign = if attractive { -1.0 } else { 1.0 };
                let factor = if s == 0.0 { 1.0 } else { s };
                -sign * factor * riesz_field_constant(self.d, s) * xi_sq.powf((s - df) / 2.0)
            }
            KernelFamily::Coulomb => {
                let (c, _) = self.power_law().expect("Coulomb is a power law");
                -c * unit_sphere_area(self.d) / xi_sq
            }
            KernelFamily::BiotSavart => -2.0 / xi_sq,
            KernelFamily::KellerSegel { chi } => chi / xi_sq,
            KernelFamily::AttractiveRepulsive { .. } => unreachable!(),
        };
        Ok(m)
    }

    /// Fourier symbol `sigma_K(xi)` under `F[f](xi) = int f(x) e^{-i xi.x} dx`.
    pub fn fourier_symbol(&self, xi: &[f64]) -> Result<Vec<Complex64>, KernelError> {
        if xi.len() != self.d {
            return Err(KernelError::DimensionMismatch { expected: self.d, got: xi.len() });
        }
        let xi_sq: f64 = xi.iter().map(|v| v * v).sum();
        let m = self.symbol_multiplier(xi_sq)?;
        let mut dir = vec![0.0; self.d];
        self.apply_direction(m, xi, &mut dir);
        Ok(dir.into_iter().map(|v| Complex64::new(0.0, v)).collect())
    }

    fn admissible_p(&self, p: f64) -> bool {
        p >= 1.0 && (p < self.meta.p_sup || (p.is_infinite() && self.meta.p_sup.is_infinite()))
    }

    fn admissible_q(&self, q: f64) -> bool {
        q >= 1.0 && (q.is_infinite() || q > self.meta.q_inf)
    }

    /// `(||K||_{L^p(B_1)}, ||K||_{L^q(B_1^c)})` by radial quadrature.
    pub fn kernel_norms(&self, p: f64, q: f64, quad: &TanhSinh) -> Result<(f64, f64), KernelError> {
        if self.is_zero() {
            return Ok((0.0, 0.0));
        }
        if !self.admissible_p(p) {
            return Err(KernelError::DivergentNorm(format!(
                "K is not in L^{p}(B_1); need p < {}",
                self.meta.p_sup
            )));
        }
        if !self.admissible_q(q) {
            return Err(KernelError::DivergentNorm(format!(
                "K is not in L^{q}(B_1^c); need q > {}",
                self.meta.q_inf
            )));
        }
        let sphere = unit_sphere_area(self.d);
        let dm1 = self.d as i32 - 1;
        let inside = if p.is_infinite() {
            // bounded near the origin: only Keller-Segel in d = 1
            self.radial_profile(0.5).abs()
        } else {
            let v = quad.integrate(|r| (p * self.log_abs_profile(r) + dm1 as f64 * r.ln()).exp(), 0.0, 1.0)?;
            (sphere * v.value).powf(1.0 / p)
        };
        let outside = if q.is_infinite() {
            sup_outside_unit_ball(|r| self.radial_profile(r).abs())
        } else {
            let v = quad.integrate_to_inf(|r| self.radial_profile(r).abs().powf(q) * r.powi(dm1), 1.0)?;
            (sphere * v.value).powf(1.0 / q)
        };
        Ok((inside, outside))
    }

    /// Closed-form norms for power-law kernels, `None` otherwise.
    pub fn closed_form_norms(&self, p: f64, q: f64) -> Option<(f64, f64)> {
        let (c, k) = self.power_law()?;
        if !self.admissible_p(p) || !self.admissible_q(q) {
            return None;
        }
        let df = self.d as f64;
        let sphere = unit_sphere_area(self.d);
        let inside = if p.is_infinite() { c } else { (sphere * c.powf(p) / (df - k * p)).powf(1.0 / p) };
        let outside = if q.is_infinite() { c } else { (sphere * c.powf(q) / (k * q - df)).powf(1.0 / q) };
        Some((inside, outside))
    }

    /// Exponents `(p, q)` used for the uniform drift bound at integrability `r`.
    pub fn drift_bound_exponents(&self, r: f64) -> Result<(f64, f64), KernelError> {
        let r_conj = conjugate(r);
        let p = if self.meta.p_sup.is_infinite() {
            f64::INFINITY
        } else {
            let lo = r_conj.max(1.0);
            if lo >= self.meta.p_sup {
                return Err(KernelError::DivergentNorm(format!(
                    "r = {r} is too small: need r > {}",
                    self.meta.r_admissible_min
                )));
            }
            0.5 * (lo + self.meta.p_sup)
        };
        let q = if self.meta.q_inf.is_infinite() {
            f64::INFINITY
        } else {
            2.0 * r_conj.max(self.meta.q_inf).max(1.0)
        };
        Ok((p, q))
    }

    /// Constant `C_{K,d}` with `||K * f||_inf <= C_{K,d} (||f||_1 + ||f||_r)`.
    pub fn drift_bound_constant(&self, r: f64, quad: &TanhSinh) -> Result<DriftBound, KernelError> {
        if self.is_zero() {
            return Ok(DriftBound { constant: 0.0, p: f64::INFINITY, q: 1.0, inside: 0.0, outside: 0.0 });
        }
        let (p, q) = self.drift_bound_exponents(r)?;
        let (inside, outside) = self.kernel_norms(p, q, quad)?;
        Ok(DriftBound { constant: inside + outside, p, q, inside, outside })
    }

    pub fn assumption_report(&self) -> AssumptionReport {
        let singular_window = if self.meta.singular_class {
            self.meta.riesz_exponent.map(|s| (2.0 - self.d as f64 + s, 1.0))
        } else {
            None
        };
        AssumptionReport {
            family: self.family.name(),
            d: self.d,
            p_sup: self.meta.p_sup,
            q_inf: self.meta.q_inf,
            r_admissible_min: self.meta.r_admissible_min,
            singular_class: self.meta.singular_class,
            zeta: self.meta.zeta,
            singular_window,
            has_symbol: self.symbol_multiplier(1.0).is_ok(),
        }
    }
}

/// Holder conjugate exponent.
pub fn conjugate(p: f64) -> f64 {
    if p.is_infinite() {
        1.0
    } else if p <= 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

fn sup_outside_unit_ball<F: Fn(f64) -> f64>(f: F) -> f64 {
    // profiles are monotone or have a single bump; a log-spaced scan is plenty
    (0..=4000)
        .map(|i| f(10f64.powf(i as f64 * 1e-3)))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftBound {
    pub constant: f64,
    pub p: f64,
    pub q: f64,
    pub inside: f64,
    pub outside: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub family: &'static str,
    pub d: usize,
    pub p_sup: f64,
    pub q_inf: f64,
    pub r_admissible_min: f64,
    pub singular_class: bool,
    pub zeta: ZetaRule,
    /// Open window for `beta - d/r_tilde` in the singular class.
    pub singular_window: Option<(f64, f64)>,
    pub has_symbol: bool,
}

impl fmt::Display for AssumptionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "family            {}", self.family)?;
        writeln!(f, "dimension         {}", self.d)?;
        writeln!(f, "p (inside B_1)    ({})^-", fmt_exp(self.p_sup))?;
        writeln!(f, "q (outside B_1)   ({})^+", fmt_exp(self.q_inf))?;
        writeln!(f, "r lower bound     ({})^+", fmt_exp(self.r_admissible_min))?;
        let class = if self.singular_class { "singular" } else { "standard" };
        writeln!(f, "class             {class}")?;
        match self.zeta {
            ZetaRule::One => writeln!(f, "zeta              1")?,
            ZetaRule::OneMinusDOverZ => writeln!(f, "zeta(z)           1 - {}/z, z in ({}, inf]", self.d, self.d)?,
        }
        if let Some((lo, hi)) = self.singular_window {
            writeln!(f, "beta - d/r~       in ({lo}, {hi}), r~ > {}", self.d)?;
        }
        write!(f, "fourier symbol    {}", if self.has_symbol { "yes" } else { "no" })
    }
}

fn fmt_exp(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}
