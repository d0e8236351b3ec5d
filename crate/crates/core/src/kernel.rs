//! Collision kernels `B(|v - v*|, theta) sin^{d-2}(theta) = Phi(|v - v*|) beta(d theta)`.
//!
//! The velocity part is the canonical power law `Phi(z) = C z^gamma`, capped
//! at `phi_cap` for soft potentials so the thinning majorant stays finite.
//! The angular part has infinite mass near `theta = 0` (no cutoff), so every
//! simulation works with the measure restricted to `[eps_theta, pi]`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::geometry::{DeviationAngle, SphereDirection};
use crate::math::{self, adaptive_simpson, sphere_area};

/// Default grazing cutoff.
pub const DEFAULT_EPS_THETA: f64 = 1e-3;
/// Default soft-potential cap, as a multiple of `C`.
pub const DEFAULT_CAP_FACTOR: f64 = 1e6;

const QUAD_TOL: f64 = 1e-13;

/// Inverse-power interaction `1/r^s` in dimension 3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PowerLawSpec {
    s: f64,
}

impl PowerLawSpec {
    pub fn new(s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 3.0) {
            return Err(Error::domain(
                "inverse-power exponent s must lie in (3, inf)",
            ));
        }
        Ok(PowerLawSpec { s })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// `gamma = (s - 5)/(s - 1)`.
    pub fn gamma(&self) -> f64 {
        (self.s - 5.0) / (self.s - 1.0)
    }

    /// `nu = 2/(s - 1)`.
    pub fn nu(&self) -> f64 {
        2.0 / (self.s - 1.0)
    }
}

/// Piecewise-linear tabulated angular density on `[theta_0, pi]`, zero below
/// `theta_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularTable {
    theta: Vec<f64>,
    beta: Vec<f64>,
}

impl AngularTable {
    pub fn new(theta: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if theta.len() != beta.len() || theta.len() < 2 {
            return Err(Error::domain(
                "angular table needs at least two (theta, beta) rows",
            ));
        }
        if theta.windows(2).any(|w| !(w[0] < w[1])) || theta[0] < 0.0 {
            return Err(Error::domain(
                "angular table abscissae must increase from theta >= 0",
            ));
        }
        if libm::fabs(theta[theta.len() - 1] - PI) > 1e-9 {
            return Err(Error::domain("angular table must end at theta = pi"));
        }
        if beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::domain(
                "angular table densities must be finite and nonnegative",
            ));
        }
        Ok(AngularTable { theta, beta })
    }

    pub fn density(&self, t: f64) -> f64 {
        let n = self.theta.len();
        if t < self.theta[0] || t > self.theta[n - 1] {
            return 0.0;
        }
        let k = match self.theta.partition_point(|&x| x <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let (t0, t1) = (self.theta[k], self.theta[k + 1]);
        let w = (t - t0) / (t1 - t0);
        self.beta[k] + w * (self.beta[k + 1] - self.beta[k])
    }

    /// `int_lo^hi theta^power beta(theta) d theta` by adaptive quadrature on
    /// each linear piece.
    fn integrate(&self, lo: f64, hi: f64, power: i32) -> f64 {
        let mut total = 0.0;
        for w in self.theta.windows(2) {
            let a = w[0].max(lo);
            let b = w[1].min(hi);
            if a < b {
                total += adaptive_simpson(
                    |t| libm::pow(t, power as f64) * self.density(t),
                    a,
                    b,
                    QUAD_TOL,
                );
            }
        }
        total
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AngularDensity {
    /// `beta(theta) = strength * theta^{-1-nu}` on `(0, pi]`.
    PowerLaw {
        nu: f64,
        strength: f64,
    },
    /// Bounded density `beta(theta) = strength` on `(0, pi]`.
    MaxwellUniform {
        strength: f64,
    },
    UserTable(AngularTable),
}

/// Truncation constants of an angular measure at cutoff `eps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AngularConstants {
    /// `|S^{d-2}| int_eps^pi beta`: total mass of retained collisions.
    pub s_eps: f64,
    /// `|S^{d-2}| int_0^eps theta beta`: deflection carried by dropped grazing collisions.
    pub alpha_eps: f64,
    /// `int_eps^pi theta beta`: first angular moment of the retained part.
    pub kappa1_eps: f64,
    /// `int_0^pi theta beta`, the untruncated first moment.
    pub kappa1: f64,
    /// `|S^{d-2}|`.
    pub sphere: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AngularMeasure {
    pub density: AngularDensity,
    /// Grazing cutoff: collisions with `theta < eps_theta` are not simulated.
    pub eps_theta: f64,
    /// Optional smaller cutoff for the proposal clock. Proposals below
    /// `eps_theta` are drawn and rejected, which lets runs at different
    /// cutoffs share one random stream and stay pathwise nested.
    pub proposal_eps: Option<f64>,
    /// Records whether `beta(d theta) = b(cos theta) d theta` with `b`
    /// nondecreasing, convex and C^1. Not checked at run time.
    pub monotone_convex: bool,
}

impl AngularMeasure {
    pub fn power_law(nu: f64, strength: f64, eps_theta: f64) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(Error::domain(
                "angular singularity exponent nu must be positive",
            ));
        }
        if !(nu < 1.0) {
            return Err(Error::domain(
                "nu >= 1 makes int theta beta(d theta) infinite (moderate singularity required)",
            ));
        }
        let m = AngularMeasure {
            density: AngularDensity::PowerLaw { nu, strength },
            eps_theta,
            proposal_eps: None,
            monotone_convex: true,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn maxwell_uniform(strength: f64, eps_theta: f64) -> Result<Self> {
        let m = AngularMeasure {
            density: AngularDensity::MaxwellUniform { strength },
            eps_theta,
            proposal_eps: None,
            monotone_convex: true,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn user_table(table: AngularTable, eps_theta: f64) -> Result<Self> {
        let m = AngularMeasure {
            density: AngularDensity::UserTable(table),
            eps_theta,
            proposal_eps: None,
            monotone_convex: false,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_proposal_eps(mut self, eps: f64) -> Result<Self> {
        self.proposal_eps = Some(eps);
        self.validate()?;
        Ok(self)
    }

    pub fn with_eps_theta(mut self, eps: f64) -> Result<Self> {
        self.eps_theta = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_theta > 0.0 && self.eps_theta < PI) {
            return Err(Error::domain(
                "grazing cutoff eps_theta must lie in (0, pi)",
            ));
        }
        if let Some(p) = self.proposal_eps {
            if !(p > 0.0 && p <= self.eps_theta) {
                return Err(Error::domain("proposal cutoff must lie in (0, eps_theta]"));
            }
        }
        match &self.density {
            AngularDensity::PowerLaw { nu, strength } => {
                if !(*nu > 0.0 && *nu < 1.0) {
                    return Err(Error::domain(
                        "power-law angular exponent nu must lie in (0, 1)",
                    ));
                }
                if !(*strength > 0.0 && strength.is_finite()) {
                    return Err(Error::domain("angular strength must be positive"));
                }
            }
            AngularDensity::MaxwellUniform { strength } => {
                if !(*strength > 0.0 && strength.is_finite()) {
                    return Err(Error::domain("angular strength must be positive"));
                }
            }
            AngularDensity::UserTable(_) => {}
        }
        Ok(())
    }

    pub fn nu(&self) -> Option<f64> {
        match self.density {
            AngularDensity::PowerLaw { nu, .. } => Some(nu),
            _ => None,
        }
    }

    /// Cutoff used by the event clock: `proposal_eps` if set, else `eps_theta`.
    pub fn clock_eps(&self) -> f64 {
        self.proposal_eps.unwrap_or(self.eps_theta)
    }

    pub fn beta(&self, theta: f64) -> f64 {
        match &self.density {
            AngularDensity::PowerLaw { nu, strength } => strength * libm::pow(theta, -1.0 - nu),
            AngularDensity::MaxwellUniform { strength } => *strength,
            AngularDensity::UserTable(t) => t.density(theta),
        }
    }

    /// `int_eps^pi beta`, without the sphere factor.
    fn mass_above(&self, eps: f64) -> f64 {
        match &self.density {
            AngularDensity::PowerLaw { nu, strength } => {
                strength * (libm::pow(eps, -nu) - libm::pow(PI, -nu)) / nu
            }
            AngularDensity::MaxwellUniform { strength } => strength * (PI - eps),
            AngularDensity::UserTable(t) => t.integrate(eps, PI, 0),
        }
    }

    /// `int_lo^hi theta beta`.
    fn first_moment(&self, lo: f64, hi: f64) -> f64 {
        match &self.density {
            AngularDensity::PowerLaw { nu, strength } => {
                let e = 1.0 - nu;
                strength * (libm::pow(hi, e) - libm::pow(lo, e)) / e
            }
            AngularDensity::MaxwellUniform { strength } => strength * (hi * hi - lo * lo) / 2.0,
            AngularDensity::UserTable(t) => t.integrate(lo, hi, 1),
        }
    }

    /// Truncation constants at an arbitrary cutoff in `(0, pi]`.
    pub fn constants_at(&self, eps: f64, dim: usize) -> Result<AngularConstants> {
        self.validate()?;
        if dim < 2 {
            return Err(Error::domain("dimension must be at least 2"));
        }
        if !(eps > 0.0 && eps <= PI) {
            return Err(Error::domain("cutoff must lie in (0, pi]"));
        }
        let sphere = sphere_area(dim - 2);
        let kappa1 = self.first_moment(0.0, PI);
        let below = self.first_moment(0.0, eps);
        Ok(AngularConstants {
            s_eps: sphere * self.mass_above(eps),
            alpha_eps: sphere * below,
            kappa1_eps: kappa1 - below,
            kappa1,
            sphere,
        })
    }

    pub fn constants(&self, dim: usize) -> Result<AngularConstants> {
        self.constants_at(self.eps_theta, dim)
    }

    /// Inverse of the normalized CDF of `beta` restricted to `[eps, pi]`.
    pub fn quantile(&self, eps: f64, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let theta = match &self.density {
            AngularDensity::PowerLaw { nu, .. } => {
                let lo = libm::pow(eps, -nu);
                let hi = libm::pow(PI, -nu);
                libm::pow(lo - u * (lo - hi), -1.0 / nu)
            }
            AngularDensity::MaxwellUniform { .. } => eps + u * (PI - eps),
            AngularDensity::UserTable(t) => table_quantile(t, eps, u),
        };
        theta.clamp(eps, PI)
    }

    /// Sample a deviation angle from the truncated, normalized measure on
    /// `[eps_theta, pi]` by inversion of the uniform `u`.
    pub fn sample_theta(&self, u: f64) -> DeviationAngle {
        DeviationAngle::new(self.quantile(self.eps_theta, u)).expect("quantile lies in [eps, pi]")
    }
}

fn table_quantile(t: &AngularTable, eps: f64, u: f64) -> f64 {
    let total = t.integrate(eps, PI, 0);
    let target = u * total;
    // Locate the segment, then bisect inside it.
    let mut acc = 0.0;
    let mut lo = eps;
    for w in t.theta.windows(2) {
        let a = w[0].max(eps);
        let b = w[1];
        if b <= eps {
            continue;
        }
        let piece = t.integrate(a, b, 0);
        if acc + piece >= target || b >= PI {
            let (mut x0, mut x1) = (a, b);
            for _ in 0..100 {
                let mid = 0.5 * (x0 + x1);
                if acc + t.integrate(a, mid, 0) < target {
                    x0 = mid;
                } else {
                    x1 = mid;
                }
            }
            return 0.5 * (x0 + x1);
        }
        acc += piece;
        lo = b;
    }
    lo
}

/// Draw `xi` uniformly on `S^{d-2}`; for `d = 2`, `+1` or `-1` with equal odds.
///
/// The number of random draws depends on `d` only.
pub fn sample_xi_into<R: RngCore + ?Sized>(dim: usize, rng: &mut R, out: &mut [f64]) {
    match dim {
        2 => out[0] = if math::uniform(rng) < 0.5 { -1.0 } else { 1.0 },
        3 => {
            let (s, c) = libm::sincos(2.0 * PI * math::uniform(rng));
            out[0] = c;
            out[1] = s;
        }
        _ => {
            math::fill_normal(rng, &mut out[..dim - 1]);
            let n = math::norm(&out[..dim - 1]);
            if n > 0.0 {
                out[..dim - 1].iter_mut().for_each(|x| *x /= n);
            } else {
                out[..dim - 1].iter_mut().for_each(|x| *x = 0.0);
                out[0] = 1.0;
            }
        }
    }
}

pub fn sample_xi<R: RngCore + ?Sized>(dim: usize, rng: &mut R) -> Result<SphereDirection> {
    if dim < 2 {
        return Err(Error::domain("dimension must be at least 2"));
    }
    let mut out = alloc::vec![0.0; dim - 1];
    sample_xi_into(dim, rng, &mut out);
    SphereDirection::from_unnormalized(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollisionKernel {
    pub gamma: f64,
    /// Upper constant `C` in `Phi(z) <= C z^gamma`.
    pub phi_upper: f64,
    /// Lower constant `c` in `Phi(z) >= c z^gamma`; only used by bound reasoning.
    pub phi_lower: Option<f64>,
    pub phi_cap: f64,
    pub angular: AngularMeasure,
    pub dim: usize,
}

impl CollisionKernel {
    pub fn new(gamma: f64, phi_upper: f64, angular: AngularMeasure, dim: usize) -> Result<Self> {
        let k = CollisionKernel {
            gamma,
            phi_upper,
            phi_lower: None,
            phi_cap: DEFAULT_CAP_FACTOR * phi_upper,
            angular,
            dim,
        };
        k.validate()?;
        Ok(k)
    }

    /// Kernel of the inverse-power interaction in `d = 3`, with unit
    /// constants and the default cutoff.
    pub fn from_inverse_power(spec: PowerLawSpec) -> Result<Self> {
        let angular = AngularMeasure::power_law(spec.nu(), 1.0, DEFAULT_EPS_THETA)?;
        CollisionKernel::new(spec.gamma(), 1.0, angular, 3)
    }

    pub fn with_lower(mut self, c: f64) -> Result<Self> {
        self.phi_lower = Some(c);
        self.validate()?;
        Ok(self)
    }

    pub fn with_cap(mut self, cap: f64) -> Result<Self> {
        self.phi_cap = cap;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::domain("dimension must be at least 2"));
        }
        if !(self.gamma > -(self.dim as f64) && self.gamma <= 1.0) {
            return Err(Error::domain("gamma must lie in (-d, 1]"));
        }
        if !(self.phi_upper > 0.0 && self.phi_upper.is_finite()) {
            return Err(Error::domain("Phi upper constant C must be positive"));
        }
        if let Some(c) = self.phi_lower {
            if !(c > 0.0 && c <= self.phi_upper) {
                return Err(Error::domain("Phi lower constant must satisfy 0 < c <= C"));
            }
        }
        if !(self.phi_cap > 0.0 && self.phi_cap.is_finite()) {
            return Err(Error::domain("phi_cap must be positive and finite"));
        }
        self.angular.validate()
    }

    /// `Phi(z) = C z^gamma`, capped at `phi_cap` when `gamma < 0`.
    #[inline]
    pub fn phi(&self, z: f64) -> f64 {
        let c = self.phi_upper;
        if self.gamma == 0.0 {
            c
        } else if self.gamma > 0.0 {
            c * libm::pow(z, self.gamma)
        } else if z == 0.0 {
            self.phi_cap
        } else {
            (c * libm::pow(z, self.gamma)).min(self.phi_cap)
        }
    }

    pub fn angular_constants(&self) -> Result<AngularConstants> {
        self.angular.constants(self.dim)
    }

    /// Total proposal mass `|S^{d-2}| int_{clock_eps}^pi beta` driving the event clock.
    pub fn clock_mass(&self) -> f64 {
        let eps = self.angular.clock_eps();
        sphere_area(self.dim - 2) * self.angular.mass_above(eps)
    }

    /// Sample a proposal angle on `[clock_eps, pi]`.
    pub fn sample_clock_theta(&self, u: f64) -> f64 {
        self.angular.quantile(self.angular.clock_eps(), u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_power_exponents() {
        let k = CollisionKernel::from_inverse_power(PowerLawSpec::new(7.0).unwrap()).unwrap();
        assert!((k.gamma - 1.0 / 3.0).abs() < 1e-15);
        assert!((k.angular.nu().unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let k = CollisionKernel::from_inverse_power(PowerLawSpec::new(5.0).unwrap()).unwrap();
        assert_eq!(k.gamma, 0.0);
        assert_eq!(k.angular.nu(), Some(0.5));
        assert!(PowerLawSpec::new(3.0).is_err());
        assert!(PowerLawSpec::new(2.5).is_err());
    }

    #[test]
    fn phi_examples() {
        let ang = AngularMeasure::power_law(0.5, 1.0, 1e-3).unwrap();
        let maxwell = CollisionKernel::new(0.0, 2.5, ang.clone(), 3).unwrap();
        for z in [0.0, 0.1, 1.0, 7.0] {
            assert_eq!(maxwell.phi(z), 2.5);
        }
        let hard = CollisionKernel::new(1.0 / 3.0, 1.0, ang.clone(), 3).unwrap();
        assert!((hard.phi(8.0) - 2.0).abs() < 1e-15);
        assert_eq!(hard.phi(1.0), 1.0);
        let soft = CollisionKernel::new(-0.5, 1.0, ang, 3)
            .unwrap()
            .with_cap(100.0)
            .unwrap();
        assert_eq!(soft.phi(0.0), 100.0);
        assert_eq!(soft.phi(1e-9), 100.0);
        assert_eq!(soft.phi(1.0), 1.0);
    }

    #[test]
    fn angular_validation() {
        assert!(AngularMeasure::power_law(1.5, 1.0, 1e-3).is_err());
        assert!(AngularMeasure::power_law(1.0, 1.0, 1e-3).is_err());
        assert!(AngularMeasure::power_law(0.5, 1.0, 0.0).is_err());
        assert!(AngularMeasure::power_law(0.5, 1.0, PI).is_err());
        let m = AngularMeasure::power_law(0.5, 1.0, 1e-2).unwrap();
        assert!(m.clone().with_proposal_eps(2e-2).is_err());
        assert!(m.with_proposal_eps(1e-3).is_ok());
        let ang = AngularMeasure::power_law(0.5, 1.0, 1e-3).unwrap();
        assert!(CollisionKernel::new(-3.0, 1.0, ang.clone(), 3).is_err());
        assert!(CollisionKernel::new(1.2, 1.0, ang.clone(), 3).is_err());
        assert!(CollisionKernel::new(0.5, 1.0, ang.clone(), 3)
            .unwrap()
            .with_lower(2.0)
            .is_err());
    }

    #[test]
    fn closed_form_constants() {
        let m = AngularMeasure::power_law(0.5, 1.0, 0.01).unwrap();
        let c = m.constants(3).unwrap();
        let expected_s = 2.0 * PI * (10.0 - 1.0 / PI.sqrt()) / 0.5;
        assert!((c.s_eps - expected_s).abs() < 1e-10);
        assert!((c.s_eps - 118.57).abs() < 0.01);
        assert!((c.alpha_eps - 2.0 * PI * 0.1 / 0.5).abs() < 1e-12);
        assert!((c.kappa1 - c.kappa1_eps - 0.1 / 0.5).abs() < 1e-12);
        let near_pi = m.constants_at(PI, 3).unwrap();
        assert!(near_pi.s_eps.abs() < 1e-12);
    }

    #[test]
    fn quantile_endpoints_and_median() {
        let m = AngularMeasure::power_law(0.5, 1.0, 0.01).unwrap();
        assert!((m.sample_theta(0.0).get() - 0.01).abs() < 1e-15);
        assert!((m.sample_theta(1.0).get() - PI).abs() < 1e-12);
        assert!((m.sample_theta(0.5).get() - 0.03584).abs() < 5e-6);
    }

    #[test]
    fn uniform_density_quantile() {
        let m = AngularMeasure::maxwell_uniform(1.0, 0.5).unwrap();
        assert!((m.sample_theta(0.5).get() - (0.5 + (PI - 0.5) / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn table_matches_uniform_density() {
        let table = AngularTable::new(vec![0.0, 1.0, PI], vec![2.0, 2.0, 2.0]).unwrap();
        let t = AngularMeasure::user_table(table, 0.25).unwrap();
        let u = AngularMeasure::maxwell_uniform(2.0, 0.25).unwrap();
        let (ct, cu) = (t.constants(3).unwrap(), u.constants(3).unwrap());
        assert!((ct.s_eps - cu.s_eps).abs() < 1e-10);
        assert!((ct.alpha_eps - cu.alpha_eps).abs() < 1e-10);
        assert!((ct.kappa1_eps - cu.kappa1_eps).abs() < 1e-10);
        for q in [0.0, 0.1, 0.5, 0.9, 1.0] {
            assert!((t.quantile(0.25, q) - u.quantile(0.25, q)).abs() < 1e-9);
        }
    }
}
