//! Theoretical envelopes for the distance between two solutions and for
//! moments of one solution.
//!
//! * log-Lipschitz (Osgood) comparison: the maximal solution of
//!   `rho' = mu(rho)`, `rho(0) = a`, characterized by `int_a^rho dy/mu = t`;
//! * its closed form for `mu(x) = K x (1 + |log x|)`, used for hard potentials;
//! * the exponential envelope used for soft potentials;
//! * moment diagnostics and the first-moment envelopes.

use alloc::vec::Vec;
use core::cell::Cell;
use core::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::kernel::{CollisionKernel, PowerLawSpec};
use crate::math::{self, adaptive_simpson};
use crate::points::Points;

/// Relative accuracy of the inversion in `log rho`.
const INVERSION_TOL: f64 = 1e-13;
const QUAD_TOL: f64 = 1e-13;
/// `log rho` beyond which the comparison solution is reported as blown up.
const LOG_CEILING: f64 = 700.0;

/// A time-indexed envelope.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl BoundCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::SizeMismatch {
                left: times.len(),
                right: values.len(),
            });
        }
        check_grid(&times)?;
        if values.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::domain("envelope values must be nonnegative"));
        }
        Ok(BoundCurve { times, values })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times.iter().copied().zip(self.values.iter().copied())
    }
}

fn check_grid(t: &[f64]) -> Result<()> {
    if t.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::domain("time grid must be finite and nonnegative"));
    }
    if t.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("time grid must be sorted"));
    }
    Ok(())
}

/// `int_{e^lo}^{e^hi} dy / mu(y)` under `y = e^s`. Flags a nonpositive or
/// NaN rate through `bad`; an overflowing rate contributes no time.
fn log_integral<M: Fn(f64) -> f64>(mu: &M, lo: f64, hi: f64, bad: &Cell<bool>) -> f64 {
    // Probe the rate first: near a zero of `mu` the quadrature would refine
    // without end.
    const PROBES: usize = 64;
    for k in 0..=PROBES {
        let s = lo + (hi - lo) * k as f64 / PROBES as f64;
        if !(mu(libm::exp(s)) > 0.0) {
            bad.set(true);
        }
    }
    if bad.get() {
        return 0.0;
    }
    adaptive_simpson(
        |s| {
            let y = libm::exp(s);
            let m = mu(y);
            if !(m > 0.0) {
                bad.set(true);
                return 0.0;
            }
            y / m
        },
        lo,
        hi,
        QUAD_TOL,
    )
}

/// Maximal solution of `rho' = mu(rho)` from `rho(0) = a`, evaluated on
/// `t_grid` by numeric inversion of `int_a^rho dy/mu(y) = t`.
///
/// `mu` must be positive and nondecreasing on `(0, inf)`. With `a = 0` the
/// curve is identically zero, which is the uniqueness statement for rates
/// with `int_0 dy/mu = inf`. Blow-up is reported as `+inf`.
pub fn yudovitch_bound<M: Fn(f64) -> f64>(a: f64, mu: M, t_grid: &[f64]) -> Result<BoundCurve> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(Error::domain(
            "initial value must be finite and nonnegative",
        ));
    }
    check_grid(t_grid)?;
    if a == 0.0 {
        return Ok(BoundCurve {
            times: t_grid.to_vec(),
            values: alloc::vec![0.0; t_grid.len()],
        });
    }
    let bad = Cell::new(false);
    let mut values = Vec::with_capacity(t_grid.len());
    // March along the grid: each value solves the increment from the last.
    let mut s_prev = libm::log(a);
    let mut t_prev = 0.0;
    for &t in t_grid {
        let dt = t - t_prev;
        if s_prev >= LOG_CEILING {
            values.push(f64::INFINITY);
            continue;
        }
        if dt == 0.0 {
            values.push(libm::exp(s_prev));
            continue;
        }
        let mut lo = s_prev;
        let mut step = 1.0;
        let mut hi = s_prev + step;
        let mut acc = log_integral(&mu, lo, hi, &bad);
        while acc < dt && hi < LOG_CEILING && !bad.get() {
            lo = hi;
            step *= 2.0;
            hi = (lo + step).min(LOG_CEILING);
            acc += log_integral(&mu, lo, hi, &bad);
        }
        if bad.get() {
            return Err(Error::domain("rate function must be positive"));
        }
        if acc < dt {
            s_prev = LOG_CEILING;
            values.push(f64::INFINITY);
            continue;
        }
        // The root lies in [lo, hi]; measure the remaining time from `lo`
        // and solve by Newton steps kept inside the bracket.
        let need = dt - (acc - log_integral(&mu, lo, hi, &bad));
        let base = lo;
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = log_integral(&mu, base, x, &bad) - need;
            if g < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let y = libm::exp(x);
            let slope = y / mu(y);
            let mut next = x - g / slope;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            let done = libm::fabs(next - x) <= INVERSION_TOL * (1.0 + libm::fabs(x))
                || hi - lo <= INVERSION_TOL * (1.0 + libm::fabs(lo));
            x = next;
            if done {
                break;
            }
        }
        if bad.get() {
            return Err(Error::domain("rate function must be positive"));
        }
        s_prev = x;
        t_prev = t;
        values.push(libm::exp(s_prev));
    }
    Ok(BoundCurve {
        times: t_grid.to_vec(),
        values,
    })
}

/// `x (1 + |log x|)`, the log-Lipschitz modulus.
pub fn log_lipschitz_rate(x: f64) -> f64 {
    x * (1.0 + libm::fabs(libm::log(x)))
}

/// Time for `rho' = rho (1 + |log rho|)` to travel from `a` to `rho`
/// (negative if `rho < a`).
pub fn log_lipschitz_time(a: f64, rho: f64) -> f64 {
    let phase = |x: f64| {
        let l = libm::log(x);
        if l <= 0.0 {
            -libm::log(1.0 - l)
        } else {
            libm::log(1.0 + l)
        }
    };
    phase(rho) - phase(a)
}

/// Closed-form solution of `rho' = K rho (1 + |log rho|)`, `rho(0) = a`:
/// `exp(1 - (1 - log a) e^{-K t})` while `rho <= 1`, then
/// `exp(e^{K (t - t_1)} - 1)` after it crosses 1 at `t_1`.
pub fn log_lipschitz_envelope(a: f64, k: f64, t: f64) -> f64 {
    if a == 0.0 {
        return 0.0;
    }
    let kt = k * t;
    let la = libm::log(a);
    if la <= 0.0 {
        let w0 = 1.0 - la;
        let t1 = libm::log(w0);
        if kt <= t1 {
            return libm::exp(1.0 - w0 * libm::exp(-kt));
        }
        libm::exp(libm::exp(kt - t1) - 1.0)
    } else {
        libm::exp((1.0 + la) * libm::exp(kt) - 1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HardStabilityParams {
    /// Rate constant of the log-Lipschitz comparison.
    pub k_eps: f64,
    /// Exponential-moment factor `sup_t int e^{eps |v|^gamma} (f_t + f~_t)`.
    pub c_exp: f64,
    /// Exponent of the exponential moment that `c_exp` refers to.
    pub eps: f64,
}

impl HardStabilityParams {
    pub fn new(k_eps: f64, c_exp: f64, eps: f64) -> Result<Self> {
        for x in [k_eps, c_exp, eps] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::domain(
                    "hard-potential constants must be positive and finite",
                ));
            }
        }
        Ok(HardStabilityParams { k_eps, c_exp, eps })
    }

    pub fn rate(&self) -> f64 {
        self.k_eps * self.c_exp
    }
}

/// Log-Lipschitz envelope seeded at `d1_0`, in closed form.
pub fn hard_bound(params: &HardStabilityParams, d1_0: f64, t_grid: &[f64]) -> Result<BoundCurve> {
    if !(d1_0 >= 0.0 && d1_0.is_finite()) {
        return Err(Error::domain(
            "initial distance must be finite and nonnegative",
        ));
    }
    check_grid(t_grid)?;
    let k = params.rate();
    let values = t_grid
        .iter()
        .map(|&t| log_lipschitz_envelope(d1_0, k, t))
        .collect();
    Ok(BoundCurve {
        times: t_grid.to_vec(),
        values,
    })
}

/// Same envelope by quadrature and inversion, for cross-checking.
pub fn hard_bound_numeric(
    params: &HardStabilityParams,
    d1_0: f64,
    t_grid: &[f64],
) -> Result<BoundCurve> {
    let k = params.rate();
    yudovitch_bound(d1_0, move |x| k * log_lipschitz_rate(x), t_grid)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SoftStabilityParams {
    pub k_p: f64,
    /// Time integrals of the two solutions' `L^p` norms.
    pub lp_integrals: [f64; 2],
    pub p: f64,
}

impl SoftStabilityParams {
    /// Requires `p > d/(d + gamma)`.
    pub fn new(k_p: f64, lp_integrals: [f64; 2], p: f64, dim: usize, gamma: f64) -> Result<Self> {
        if !(k_p >= 0.0 && k_p.is_finite()) || lp_integrals.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::domain(
                "soft-potential constants must be finite and nonnegative",
            ));
        }
        let d = dim as f64;
        if !(d + gamma > 0.0 && p > d / (d + gamma)) {
            return Err(Error::domain(
                "integrability exponent must exceed d/(d + gamma)",
            ));
        }
        Ok(SoftStabilityParams {
            k_p,
            lp_integrals,
            p,
        })
    }
}

/// `d1_0 exp(K_p (C + C~ + t))`.
pub fn soft_bound(params: &SoftStabilityParams, d1_0: f64, t: f64) -> f64 {
    let [c, ct] = params.lp_integrals;
    d1_0 * libm::exp(params.k_p * (c + ct + t))
}

/// `(1/N) sum_i exp(eps |v_i|^s)`, or `+inf` if a term overflows.
pub fn exp_moment(v: &Points, eps: f64, s_exp: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::domain("exponential-moment rate must be positive"));
    }
    if !(s_exp > 0.0 && s_exp < 2.0) {
        return Err(Error::domain("exponential-moment power must lie in (0, 2)"));
    }
    if v.is_empty() {
        return Err(Error::domain("moment of an empty ensemble"));
    }
    let mut acc = 0.0;
    for x in v.iter() {
        let term = libm::exp(eps * libm::pow(math::norm(x), s_exp));
        if !term.is_finite() {
            return Ok(f64::INFINITY);
        }
        acc += term;
    }
    Ok(acc / v.len() as f64)
}

/// `(1/N) sum_i |v_i|^p`.
pub fn moment(v: &Points, p: f64) -> Result<f64> {
    if !(p >= 0.0) {
        return Err(Error::domain("moment order must be nonnegative"));
    }
    if v.is_empty() {
        return Err(Error::domain("moment of an empty ensemble"));
    }
    let s: f64 = v.iter().map(|x| libm::pow(math::norm(x), p)).sum();
    Ok(s / v.len() as f64)
}

/// Inputs for the first-moment envelope of very soft potentials
/// (`1 + gamma < 0`), where it runs through an `L^p` a-priori estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpBranch {
    /// `||f_0||_{L^p}`.
    pub lp_norm: f64,
    /// Growth constant of `d/dt ||f||_p <= c (1 + ||f||_p^2)`.
    pub growth: f64,
    /// Constant of `int |v - v_*|^{1+gamma} f(dv_*) <= c_lp ||f||_p`.
    pub lp_const: f64,
}

/// Envelope for `int |v| f_t(dv)` with the truncated first angular moment.
///
/// For `1 + gamma >= 0`: `exp(C kappa1_eps |S^{d-2}| t)(m1_0 + 1)`. Otherwise
/// `m1_0 + A int_0^t tan(atan ||f_0||_p + c s) ds + A' t` before the `L^p`
/// blow-up horizon, and `+inf` after it.
pub fn first_moment_bound(
    m1_0: f64,
    kernel: &CollisionKernel,
    t: f64,
    lp: Option<&LpBranch>,
) -> Result<f64> {
    if !(m1_0 >= 0.0 && t >= 0.0) {
        return Err(Error::domain("first moment and time must be nonnegative"));
    }
    let c = kernel.angular_constants()?;
    let scale = kernel.phi_upper * c.kappa1_eps * c.sphere;
    if 1.0 + kernel.gamma >= 0.0 {
        return Ok(libm::exp(scale * t) * (m1_0 + 1.0));
    }
    let lp = lp.ok_or(Error::MissingLpNorm)?;
    if !(lp.lp_norm >= 0.0 && lp.growth > 0.0 && lp.lp_const >= 0.0) {
        return Err(Error::domain(
            "L^p branch constants must be nonnegative, growth positive",
        ));
    }
    if t >= tstar(lp.lp_norm, lp.growth) {
        return Ok(f64::INFINITY);
    }
    let a = scale / 2.0 * lp.lp_const;
    let a_prime = scale / 2.0;
    let c0 = libm::atan(lp.lp_norm);
    let tan_integral =
        (libm::log(libm::cos(c0)) - libm::log(libm::cos(c0 + lp.growth * t))) / lp.growth;
    Ok(m1_0 + a * tan_integral + a_prime * t)
}

/// Blow-up horizon `(pi/2 - atan ||f_0||_p)/c` of the `L^p` estimate.
pub fn tstar(lp_norm: f64, c: f64) -> f64 {
    (FRAC_PI_2 - libm::atan(lp_norm)) / c
}

/// `q_0 = gamma^2/(nu + gamma)`: moments of order above `q_0` are needed
/// for well-posedness with soft potentials.
pub fn moment_threshold(spec: &PowerLawSpec) -> f64 {
    let g = spec.gamma();
    g * g / (spec.nu() + g)
}

/// `d1_0 exp(4 C kappa1_eps |S^{d-2}| t)`: Gronwall applied to the
/// contraction integrand when `Phi` is constant.
pub fn maxwell_envelope(d1_0: f64, kernel: &CollisionKernel, t: f64) -> Result<f64> {
    let c = kernel.angular_constants()?;
    Ok(d1_0 * libm::exp(4.0 * c.kappa1_eps * c.sphere * kernel.phi_upper * t))
}

/// Observation `(d1(0), t, d1(t))` used to calibrate an envelope constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub d1_0: f64,
    pub t: f64,
    pub d1: f64,
}

/// Smallest `K` such that the log-Lipschitz envelope dominates every
/// observation. Observations at `t = 0` or below their start are ignored.
pub fn fit_hard_constant(obs: &[Observation]) -> Result<f64> {
    let mut k: f64 = 0.0;
    for o in obs {
        if !(o.d1_0 > 0.0 && o.d1 >= 0.0 && o.t >= 0.0) {
            return Err(Error::domain(
                "calibration needs positive starts and nonnegative values",
            ));
        }
        if o.d1 <= o.d1_0 || o.t == 0.0 {
            continue;
        }
        k = k.max(log_lipschitz_time(o.d1_0, o.d1) / o.t);
    }
    Ok(k)
}

/// Smallest `K_p` such that `d1_0 exp(K_p (lp_sum + t))` dominates every
/// observation.
pub fn fit_soft_constant(obs: &[Observation], lp_sum: f64) -> Result<f64> {
    let mut k: f64 = 0.0;
    for o in obs {
        if !(o.d1_0 > 0.0 && o.d1 >= 0.0 && o.t >= 0.0) {
            return Err(Error::domain(
                "calibration needs positive starts and nonnegative values",
            ));
        }
        if o.d1 <= o.d1_0 || lp_sum + o.t == 0.0 {
            continue;
        }
        k = k.max(libm::log(o.d1 / o.d1_0) / (lp_sum + o.t));
    }
    Ok(k)
}

/// Least-squares slope of `log y` against `t`, over positive samples.
pub fn log_growth_rate(t: &[f64], y: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, v)| **v > 0.0)
        .map(|(a, b)| (*a, libm::log(*b)))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}
