//! The bump mollifier `V`, its moderate scaling `V^N`, and the tabulated
//! regularized force `K * V^N`.

use rayon::prelude::*;
use thiserror::Error;

use crate::kernel::{unit_sphere_area, KernelError, KernelSpec};
use crate::quadrature::TanhSinh;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MollifierError {
    #[error("invalid mollifier: {0}")]
    InvalidSpec(String),
    #[error("force table quadrature failed: {0}")]
    QuadratureFailure(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Unnormalised radial bump profile `exp(-1/(1-t^2))` on `t in [0, 1)`.
#[inline]
pub fn bump_profile(t: f64) -> f64 {
    let one_minus = (1.0 - t) * (1.0 + t);
    if one_minus <= 0.0 {
        0.0
    } else {
        (-1.0 / one_minus).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifierSpec {
    pub d: usize,
    /// Support radius `R` of `V`.
    pub radius: f64,
    pub alpha: f64,
    pub n: usize,
    /// `V(x) = norm_const * bump_profile(|x|/R)`.
    pub norm_const: f64,
    /// `int_0^1 t^{d-1} bump_profile(t) dt`, reused by the mass function.
    radial_moment: f64,
}

impl MollifierSpec {
    pub fn new(d: usize, radius: f64, alpha: f64, n: usize) -> Result<Self, MollifierError> {
        if d == 0 {
            return Err(MollifierError::InvalidSpec("dimension must be at least 1".into()));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(MollifierError::InvalidSpec(format!("radius must be positive, got {radius}")));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(MollifierError::InvalidSpec(format!("alpha must lie in [0, 1], got {alpha}")));
        }
        if n == 0 {
            return Err(MollifierError::InvalidSpec("N must be at least 1".into()));
        }
        let dm1 = d as i32 - 1;
        let quad = TanhSinh::with_tol(1e-14).truncate(3.5);
        let radial_moment = quad
            .integrate(|t| t.powi(dm1) * bump_profile(t), 0.0, 1.0)
            .map_err(|e| MollifierError::QuadratureFailure(e.to_string()))?
            .value;
        let norm_const = 1.0 / (radius.powi(d as i32) * unit_sphere_area(d) * radial_moment);
        Ok(Self { d, radius, alpha, n, norm_const, radial_moment })
    }

    /// Same bump at a different particle count.
    pub fn with_n(&self, n: usize) -> Self {
        Self { n: n.max(1), ..*self }
    }

    /// `N^alpha`.
    pub fn scale(&self) -> f64 {
        (self.n as f64).powf(self.alpha)
    }

    /// Support radius `R N^{-alpha}` of `V^N`.
    pub fn support_radius(&self) -> f64 {
        self.radius / self.scale()
    }

    pub fn eval_v_radial(&self, rho: f64) -> f64 {
        self.norm_const * bump_profile(rho / self.radius)
    }

    pub fn eval_v(&self, x: &[f64]) -> f64 {
        self.eval_v_radial(norm(x))
    }

    pub fn eval_vn_radial(&self, rho: f64) -> f64 {
        let s = self.scale();
        s.powi(self.d as i32) * self.eval_v_radial(s * rho)
    }

    pub fn eval_vn(&self, x: &[f64]) -> f64 {
        self.eval_vn_radial(norm(x))
    }

    /// Mass of `V^N` inside the ball of radius `rho`.
    pub fn mass_within(&self, rho: f64, quad: &TanhSinh) -> Result<f64, MollifierError> {
        let t = rho / self.support_radius();
        if t >= 1.0 {
            return Ok(1.0);
        }
        if t <= 0.0 {
            return Ok(0.0);
        }
        let dm1 = self.d as i32 - 1;
        let v = quad
            .integrate(|u| u.powi(dm1) * bump_profile(u), 0.0, t)
            .map_err(|e| MollifierError::QuadratureFailure(e.to_string()))?;
        Ok(v.value / self.radial_moment)
    }
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Tabulated `K * V^N`.
///
/// By isotropy the convolution has the same form as the kernel,
/// `(K * V^N)(x) = h(|x|) P x/|x|`, so only the radial profile `h` is stored.
/// The table is uniform on `[0, 2 R_N]` and geometric beyond, up to the
/// far-field switch radius where the raw kernel takes over.
#[derive(Debug, Clone)]
pub struct ForceTable {
    kernel: KernelSpec,
    mollifier: MollifierSpec,
    core_radius: f64,
    core: Vec<f64>,
    far: Vec<f64>,
    far_log_step: f64,
    far_field_switch_radius: f64,
    tol: f64,
}

/// How the radial profile of `K * V^N` is computed.
#[derive(Debug, Clone, Copy)]
enum Profile {
    Zero,
    /// Kernels with `|K| ~ |x|^{1-d}` are gradients of harmonic functions, so
    /// the field of a radial density equals `k(rho)` times the enclosed mass.
    Newton,
    Quadrature,
}

impl ForceTable {
    pub fn build(
        kernel: &KernelSpec,
        mollifier: &MollifierSpec,
        resolution: usize,
        tol: f64,
    ) -> Result<Self, MollifierError> {
        if kernel.d() != mollifier.d {
            return Err(MollifierError::InvalidSpec(format!(
                "kernel dimension {} differs from mollifier dimension {}",
                kernel.d(),
                mollifier.d
            )));
        }
        if resolution < 2 {
            return Err(MollifierError::InvalidSpec("table resolution must be at least 2".into()));
        }
        if !(tol > 0.0) {
            return Err(MollifierError::InvalidSpec(format!("table tolerance must be positive, got {tol}")));
        }
        let rn = mollifier.support_radius();
        let mut table = Self {
            kernel: *kernel,
            mollifier: *mollifier,
            core_radius: rn,
            core: Vec::new(),
            far: Vec::new(),
            far_log_step: 0.0,
            far_field_switch_radius: 0.0,
            tol,
        };
        let profile = table.profile_kind();
        if let Profile::Zero = profile {
            return Ok(table);
        }
        let switch = match profile {
            Profile::Newton => rn,
            _ => table.find_switch_radius(tol)?,
        };
        table.far_field_switch_radius = switch;
        table.core_radius = switch.min(2.0 * rn);
        let core_step = table.core_radius / resolution as f64;
        table.core = (0..=resolution)
            .into_par_iter()
            .map(|i| if i == 0 { Ok(0.0) } else { table.exact_radial(i as f64 * core_step) })
            .collect::<Result<_, _>>()?;
        if switch > table.core_radius {
            let step = (switch / table.core_radius).ln() / resolution as f64;
            table.far_log_step = step;
            let r0 = table.core_radius;
            table.far = (0..=resolution)
                .into_par_iter()
                .map(|i| table.exact_radial(r0 * (i as f64 * step).exp()))
                .collect::<Result<_, _>>()?;
        }
        Ok(table)
    }

    fn profile_kind(&self) -> Profile {
        if self.kernel.is_zero() {
            return Profile::Zero;
        }
        match self.kernel.power_law() {
            Some((_, k)) if (k - (self.kernel.d() as f64 - 1.0)).abs() < 1e-15 => Profile::Newton,
            _ => Profile::Quadrature,
        }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn mollifier(&self) -> &MollifierSpec {
        &self.mollifier
    }

    pub fn far_field_switch_radius(&self) -> f64 {
        self.far_field_switch_radius
    }

    /// Radius covered by the table.
    pub fn table_radius(&self) -> f64 {
        self.far_field_switch_radius
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Radial profile `h` of `K * V^N` by fresh quadrature.
    pub fn exact_radial(&self, rho: f64) -> Result<f64, MollifierError> {
        if rho == 0.0 {
            return Ok(0.0);
        }
        match self.profile_kind() {
            Profile::Zero => Ok(0.0),
            Profile::Newton => {
                let quad = TanhSinh::with_tol(1e-13).truncate(3.5);
                Ok(self.kernel.radial_profile(rho) * self.mollifier.mass_within(rho, &quad)?)
            }
            Profile::Quadrature => self.radial_by_quadrature(rho),
        }
    }

    fn radial_by_quadrature(&self, rho: f64) -> Result<f64, MollifierError> {
        let rn = self.mollifier.support_radius();
        let d = self.mollifier.d;
        let k = &self.kernel;
        let m = &self.mollifier;
        let fail = |e: crate::quadrature::QuadError| MollifierError::QuadratureFailure(format!("at rho = {rho}: {e}"));
        let peak = m.eval_vn_radial(0.0);
        let outer_quad = TanhSinh::with_tol(1e-11).abs_floor(1e-15 * peak * rn.powi(d as i32));
        let lo = (rho - rn).max(0.0);
        let hi = rho + rn;
        let mut breaks = vec![lo];
        let split = (rn - rho).abs();
        if split > lo && split < hi {
            breaks.push(split);
        }
        breaks.push(hi);

        if d == 1 {
            let f = |r: f64| k.radial_profile(r) * (m.eval_vn_radial((rho - r).abs()) - m.eval_vn_radial(rho + r));
            let mut total = 0.0;
            for w in breaks.windows(2) {
                total += outer_quad.integrate(f, w[0], w[1]).map_err(fail)?.value;
            }
            return Ok(total);
        }

        let inner_quad = TanhSinh::with_tol(1e-12).truncate(3.5).abs_floor(1e-16 * peak);
        let sphere = unit_sphere_area(d - 1);
        let pow_sin = d as i32 - 2;
        let rn2 = rn * rn;
        let inner = |r: f64| -> Result<f64, MollifierError> {
            // points y = r w with |rho e1 - y| < rn satisfy cos(theta) > c0
            let c0 = (rho * rho + r * r - rn2) / (2.0 * rho * r);
            if c0 >= 1.0 {
                return Ok(0.0);
            }
            let theta_max = if c0 <= -1.0 { std::f64::consts::PI } else { c0.acos() };
            let g = |th: f64| {
                let half = (0.5 * th).sin();
                let dist2 = (rho - r) * (rho - r) + 4.0 * rho * r * half * half;
                th.cos() * th.sin().powi(pow_sin) * m.eval_vn_radial(dist2.sqrt())
            };
            Ok(inner_quad.integrate(g, 0.0, theta_max).map_err(fail)?.value)
        };
        let mut total = 0.0;
        for w in breaks.windows(2) {
            // the first error raised inside the integrand is kept and returned
            let err = std::cell::RefCell::new(None);
            let f = |r: f64| match inner(r) {
                Ok(v) => k.weighted_profile(r, d as f64 - 1.0) * v,
                Err(e) => {
                    err.borrow_mut().get_or_insert(e);
                    0.0
                }
            };
            let v = outer_quad.integrate(f, w[0], w[1]).map_err(fail)?;
            if let Some(e) = err.into_inner() {
                return Err(e);
            }
            total += v.value;
        }
        Ok(sphere * total)
    }

    /// Smallest geometric candidate radius beyond which `K * V^N` agrees with
    /// `K` to relative tolerance `tol` at every larger candidate.
    fn find_switch_radius(&self, tol: f64) -> Result<f64, MollifierError> {
        const STEPS_PER_OCTAVE: usize = 4;
        const OCTAVES: usize = 12;
        let rn = self.mollifier.support_radius();
        let candidates: Vec<f64> = (0..=STEPS_PER_OCTAVE * OCTAVES)
            .map(|j| rn * 2f64.powf(j as f64 / STEPS_PER_OCTAVE as f64))
            .collect();
        let errs: Vec<f64> = candidates
            .par_iter()
            .map(|&rho| {
                let h = self.exact_radial(rho)?;
                let k = self.kernel.radial_profile(rho);
                Ok(((h - k) / k).abs())
            })
            .collect::<Result<_, MollifierError>>()?;
        let mut switch = None;
        for (rho, e) in candidates.iter().zip(&errs).rev() {
            if *e < tol {
                switch = Some(*rho);
            } else {
                break;
            }
        }
        switch.ok_or_else(|| {
            MollifierError::QuadratureFailure(format!(
                "relative far-field error {:.3e} at rho = {:.3e} exceeds tol = {tol:e}",
                errs.last().copied().unwrap_or(f64::NAN),
                candidates.last().copied().unwrap_or(f64::NAN)
            ))
        })
    }

    /// Interpolated radial profile.
    pub fn radial(&self, rho: f64) -> f64 {
        if self.core.is_empty() {
            return 0.0;
        }
        if rho >= self.far_field_switch_radius {
            return self.kernel.radial_profile(rho);
        }
        if rho < self.core_radius {
            let n = self.core.len() - 1;
            let u = rho / self.core_radius * n as f64;
            let i = (u as usize).min(n - 1);
            let w = u - i as f64;
            return self.core[i] * (1.0 - w) + self.core[i + 1] * w;
        }
        let n = self.far.len() - 1;
        let u = (rho / self.core_radius).ln() / self.far_log_step;
        let i = (u.max(0.0) as usize).min(n - 1);
        let r0 = self.core_radius * (i as f64 * self.far_log_step).exp();
        let r1 = self.core_radius * ((i + 1) as f64 * self.far_log_step).exp();
        let w = ((rho - r0) / (r1 - r0)).clamp(0.0, 1.0);
        self.far[i] * (1.0 - w) + self.far[i + 1] * w
    }

    /// `(K * V^N)(x)` written into `out`; exactly odd and zero at the origin.
    #[inline]
    pub fn interaction_force_into(&self, x: &[f64], out: &mut [f64]) {
        let rho2: f64 = x.iter().map(|v| v * v).sum();
        if rho2 == 0.0 || self.core.is_empty() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let rho = rho2.sqrt();
        let c = self.radial(rho) / rho;
        self.kernel.apply_direction(c, x, out);
    }

    pub fn interaction_force(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.interaction_force_into(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;

    fn lcg(state: &mut u64) -> f64 {
        *state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn unit_mass_on_fine_grid() {
        let m = MollifierSpec::new(1, 1.0, 0.5, 1).unwrap();
        let g = 512;
        let dx = 2.0 / g as f64;
        let s: f64 = (0..g).map(|i| m.eval_v(&[-1.0 + (i as f64 + 0.5) * dx])).sum::<f64>() * dx;
        assert!((s - 1.0).abs() < 1e-8, "{s}");
    }

    #[test]
    fn vn_mass_and_support() {
        let q = TanhSinh::with_tol(1e-13).truncate(3.5);
        for d in 1..=3 {
            for n in [10usize, 100] {
                let m = MollifierSpec::new(d, 0.7, 0.3, n).unwrap();
                let rn = m.support_radius();
                let dm1 = d as i32 - 1;
                let mass = unit_sphere_area(d)
                    * q.integrate(|r| r.powi(dm1) * m.eval_vn_radial(r), 0.0, rn).unwrap().value;
                assert!((mass - 1.0).abs() < 1e-8, "d={d} n={n} mass={mass}");
                assert_eq!(m.eval_vn_radial(1.01 * rn), 0.0);
            }
        }
        let m = MollifierSpec::new(2, 1.0, 0.4, 1).unwrap();
        assert_eq!(m.eval_vn(&[0.3, 0.2]), m.eval_v(&[0.3, 0.2]));
        assert_eq!(m.eval_v(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn v_is_even() {
        let m = MollifierSpec::new(2, 1.0, 0.4, 5).unwrap();
        let mut st = 1u64;
        for _ in 0..100 {
            let x = [lcg(&mut st), lcg(&mut st)];
            assert_eq!(m.eval_v(&x), m.eval_v(&[-x[0], -x[1]]));
            assert!(m.eval_v(&x) >= 0.0);
        }
    }

    #[test]
    fn zero_kernel_table() {
        let k = KernelSpec::new(KernelFamily::Zero, 2).unwrap();
        let m = MollifierSpec::new(2, 1.0, 0.25, 16).unwrap();
        let t = ForceTable::build(&k, &m, 64, 1e-6).unwrap();
        assert_eq!(t.interaction_force(&[0.1, 0.2]), vec![0.0, 0.0]);
        assert_eq!(t.radial(3.0), 0.0);
    }

    #[test]
    fn newton_kernel_matches_raw_outside_support() {
        let k = KernelSpec::new(KernelFamily::Riesz { s: 0.0, attractive: false }, 2).unwrap();
        let m = MollifierSpec::new(2, 1.0, 0.25, 16).unwrap();
        let t = ForceTable::build(&k, &m, 256, 1e-6).unwrap();
        let rho = 3.0 * m.support_radius();
        let x = [rho / 2f64.sqrt(), rho / 2f64.sqrt()];
        let a = t.interaction_force(&x);
        let b = k.eval(&x).unwrap();
        for (ai, bi) in a.iter().zip(&b) {
            assert!((ai - bi).abs() < 1e-6 * bi.abs());
        }
    }

    #[test]
    fn generic_quadrature_agrees_with_newton_shortcut() {
        // Coulomb in d = 3 is harmonic; compare the closed Newton profile with
        // the double integral
        let k = KernelSpec::new(KernelFamily::Coulomb, 3).unwrap();
        let m = MollifierSpec::new(3, 1.0, 0.0, 1).unwrap();
        let t = ForceTable::build(&k, &m, 8, 1e-6).unwrap();
        for rho in [0.05, 0.3, 0.7, 0.99, 1.5] {
            let a = t.exact_radial(rho).unwrap();
            let b = t.radial_by_quadrature(rho).unwrap();
            assert!((a - b).abs() < 1e-9 * a.abs().max(1e-3), "rho={rho} newton={a} quad={b}");
        }
    }

    #[test]
    fn riesz_half_table() {
        let k = KernelSpec::new(KernelFamily::Riesz { s: 0.5, attractive: false }, 2).unwrap();
        let m = MollifierSpec::new(2, 1.0, 0.25, 16).unwrap();
        let tol = 1e-6;
        let t = ForceTable::build(&k, &m, 512, tol).unwrap();
        let sw = t.far_field_switch_radius();
        assert!(sw > m.support_radius());
        let h = t.exact_radial(sw).unwrap();
        let raw = k.radial_profile(sw);
        assert!(((h - raw) / raw).abs() < tol);
        let f0 = t.interaction_force(&[0.0, 0.0]);
        assert_eq!(f0, vec![0.0, 0.0]);
        assert!(t.exact_radial(1e-9).unwrap().abs() < 1e-8);
    }

    #[test]
    fn interpolation_matches_fresh_quadrature() {
        let k = KernelSpec::new(KernelFamily::KellerSegel { chi: 1.0 }, 2).unwrap();
        let m = MollifierSpec::new(2, 1.0, 0.25, 16).unwrap();
        let tol = 1e-6;
        let t = ForceTable::build(&k, &m, 4096, tol).unwrap();
        let scale = t.core.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut st = 5u64;
        for _ in 0..1000 {
            let rho = 0.5 * (lcg(&mut st) + 1.0) * t.table_radius();
            let diff = (t.radial(rho) - t.exact_radial(rho).unwrap()).abs();
            assert!(diff < 10.0 * tol * scale, "rho={rho} diff={diff}");
        }
    }

    #[test]
    fn forces_are_exactly_odd() {
        let m = MollifierSpec::new(2, 1.0, 0.25, 16).unwrap();
        for fam in [KernelFamily::BiotSavart, KernelFamily::KellerSegel { chi: 2.0 }] {
            let k = KernelSpec::new(fam, 2).unwrap();
            let t = ForceTable::build(&k, &m, 128, 1e-6).unwrap();
            let mut st = 9u64;
            for _ in 0..100 {
                let x = [lcg(&mut st), lcg(&mut st)];
                let a = t.interaction_force(&x);
                let b = t.interaction_force(&[-x[0], -x[1]]);
                assert_eq!(a[0], -b[0]);
                assert_eq!(a[1], -b[1]);
            }
            let far = [2.0, 1.0];
            assert_eq!(t.interaction_force(&far), k.eval(&far).unwrap());
        }
    }
}
