//! Post-collisional kinematics in dimension `d >= 2`.
//!
//! The sphere of admissible post-collisional directions is parameterized by
//! a deviation angle `theta` and a direction `xi` on `S^{d-2}`:
//!
//! ```text
//! v' = v + (cos(theta) - 1)/2 (v - v*) + sin(theta)/2 Gamma(v - v*, xi)
//! Gamma(X, xi) = |X| S_X(Pi(xi))
//! ```
//!
//! `S_X` is the reflection through the hyperplane orthogonal to
//! `e_d - X/|X|` (identity when `X/|X| = e_d`) and `Pi` pads `xi` with a
//! trailing zero. [`xi_zero`] realizes the measure-preserving re-indexing of
//! `S^{d-2}` that aligns the parameterizations attached to two different
//! relative velocities `X` and `Y`, with `|Gamma(X,xi) - Gamma(Y,xi0)| <= 3|X - Y|`.
//!
//! The `*_into` functions work on raw slices and never allocate; the typed
//! wrappers are for callers outside the hot loop.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{dot, norm};

/// Below this `|e_d - X/|X||` the reflection `S_X` is taken as the identity.
pub const REFLECTION_IDENTITY_TOL: f64 = 1e-14;
/// Below this `|X/|X| - Y/|Y||` the two axes are treated as aligned and
/// `xi_zero` returns its argument.
pub const ALIGNED_TOL: f64 = 1e-14;
/// Below this `|X/|X| + Y/|Y||` the rotation plane is fixed by convention.
pub const ANTIPODAL_TOL: f64 = 1e-12;
/// Unit-norm tolerance for [`SphereDirection`].
pub const UNIT_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Velocity(Vec<f64>);

impl Velocity {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.len() < 2 {
            return Err(Error::domain("velocities live in dimension d >= 2"));
        }
        if components.iter().any(|x| !x.is_finite()) {
            return Err(Error::domain("velocity component is not finite"));
        }
        Ok(Velocity(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for Velocity {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// A point of `S^{d-2}`, stored with `d - 1` components. For `d = 2` this is
/// a single value in `{-1, +1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphereDirection(Vec<f64>);

impl SphereDirection {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::domain(
                "sphere direction needs at least one component",
            ));
        }
        let n = norm(&components);
        if !n.is_finite() || libm::fabs(n - 1.0) > UNIT_TOL {
            return Err(Error::domain("sphere direction must have unit norm"));
        }
        if components.len() == 1 && libm::fabs(components[0]) != 1.0 {
            return Err(Error::domain("S^0 direction must be exactly -1 or +1"));
        }
        Ok(SphereDirection(components))
    }

    /// Normalize an arbitrary nonzero vector onto the sphere.
    pub fn from_unnormalized(mut components: Vec<f64>) -> Result<Self> {
        let n = norm(&components);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        if components.len() == 1 {
            components[0] = libm::copysign(1.0, components[0]);
        } else {
            components.iter_mut().for_each(|x| *x /= n);
        }
        Ok(SphereDirection(components))
    }

    /// Dimension `d` of the velocity space this direction parameterizes.
    pub fn velocity_dim(&self) -> usize {
        self.0.len() + 1
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct DeviationAngle(f64);

impl DeviationAngle {
    pub fn new(theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= core::f64::consts::PI) {
            return Err(Error::domain("deviation angle must lie in (0, pi]"));
        }
        Ok(DeviationAngle(theta))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Scratch space for the allocation-free kernels below.
#[derive(Clone, Debug)]
pub struct Scratch {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    p: Vec<f64>,
}

impl Scratch {
    pub fn new(dim: usize) -> Self {
        Scratch {
            a: vec![0.0; dim],
            b: vec![0.0; dim],
            c: vec![0.0; dim],
            d: vec![0.0; dim],
            p: vec![0.0; dim],
        }
    }
}

fn check_dims(x: &[f64], xi: &[f64]) -> Result<()> {
    if x.len() < 2 || xi.len() + 1 != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len().saturating_sub(1),
            found: xi.len(),
        });
    }
    Ok(())
}

/// `Pi(xi) = (xi_1, ..., xi_{d-1}, 0)`.
pub fn embed_pi(xi: &SphereDirection) -> Velocity {
    let mut out = xi.0.clone();
    out.push(0.0);
    Velocity(out)
}

/// `out = S_X(w)`. `x` must be nonzero.
pub fn reflect_into(x: &[f64], w: &[f64], out: &mut [f64]) {
    let d = x.len();
    let nx = norm(x);
    let mut uu = 0.0;
    let mut wu = 0.0;
    for k in 0..d {
        let ek = if k + 1 == d { 1.0 } else { 0.0 };
        let uk = ek - x[k] / nx;
        uu += uk * uk;
        wu += w[k] * uk;
    }
    if libm::sqrt(uu) < REFLECTION_IDENTITY_TOL {
        out.copy_from_slice(w);
        return;
    }
    let scale = 2.0 * wu / uu;
    for k in 0..d {
        let ek = if k + 1 == d { 1.0 } else { 0.0 };
        out[k] = w[k] - scale * (ek - x[k] / nx);
    }
}

/// Reflection `S_X` through the hyperplane `(e_d - X/|X|)^perp`.
pub fn symmetry_sx(x: &Velocity, w: &Velocity) -> Result<Velocity> {
    if x.dim() != w.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: w.dim(),
        });
    }
    if norm(&x.0) == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut out = vec![0.0; x.dim()];
    reflect_into(&x.0, &w.0, &mut out);
    Ok(Velocity(out))
}

/// `out = Gamma(X, xi)`. `x` must be nonzero; `tmp` is a length-`d` buffer.
pub fn gamma_into(x: &[f64], xi: &[f64], tmp: &mut [f64], out: &mut [f64]) {
    let d = x.len();
    tmp[..d - 1].copy_from_slice(xi);
    tmp[d - 1] = 0.0;
    reflect_into(x, tmp, out);
    let nx = norm(x);
    out.iter_mut().for_each(|o| *o *= nx);
}

/// `Gamma(X, xi) = |X| S_X(Pi(xi))`, a unitary parameterization of
/// `C_X = { U : |U| = |X|, <U, X> = 0 }`.
pub fn gamma_param(x: &Velocity, xi: &SphereDirection) -> Result<Velocity> {
    check_dims(&x.0, &xi.0)?;
    if norm(&x.0) == 0.0 {
        return Err(Error::ZeroVector);
    }
    let d = x.dim();
    let mut tmp = vec![0.0; d];
    let mut out = vec![0.0; d];
    gamma_into(&x.0, &xi.0, &mut tmp, &mut out);
    Ok(Velocity(out))
}

/// Apply the in-plane rotation carrying unit vector `a` onto unit vector
/// `b` (identity on the orthogonal complement of the plane). `perp` receives
/// the unit vector completing `a` to an orthonormal basis of the plane.
fn rotate_into(a: &[f64], b: &[f64], w: &[f64], perp: &mut [f64], out: &mut [f64]) {
    let d = a.len();
    let mut c = dot(a, b);
    let mut sum_sq = 0.0;
    for k in 0..d {
        let s = a[k] + b[k];
        sum_sq += s * s;
    }
    let s;
    if libm::sqrt(sum_sq) < ANTIPODAL_TOL {
        // Antipodal axes: rotate by pi in the plane of `a` and the first
        // canonical basis vector not parallel to it.
        let k = (0..d).find(|&k| libm::fabs(a[k]) < 1.0 - 1e-8).unwrap_or(0);
        for (m, p) in perp.iter_mut().enumerate() {
            *p = if m == k { 1.0 } else { 0.0 } - a[k] * a[m];
        }
        let np = norm(perp);
        perp.iter_mut().for_each(|p| *p /= np);
        c = -1.0;
        s = 0.0;
    } else {
        for k in 0..d {
            perp[k] = b[k] - c * a[k];
        }
        let np = norm(perp);
        perp.iter_mut().for_each(|p| *p /= np);
        s = np;
    }
    let wa = dot(w, a);
    let wp = dot(w, perp);
    for k in 0..d {
        out[k] = w[k] + (c - 1.0) * (wa * a[k] + wp * perp[k]) + s * (wa * perp[k] - wp * a[k]);
    }
}

/// `out = xi0(X, Y, xi)`; `x`, `y` nonzero, `out.len() == d - 1`.
pub fn xi_zero_into(x: &[f64], y: &[f64], xi: &[f64], scratch: &mut Scratch, out: &mut [f64]) {
    let d = x.len();
    let nx = norm(x);
    let ny = norm(y);
    let Scratch { a, b, c, d: e, p } = scratch;
    let mut diff = 0.0;
    for k in 0..d {
        a[k] = x[k] / nx;
        b[k] = y[k] / ny;
        let t = a[k] - b[k];
        diff += t * t;
    }
    if libm::sqrt(diff) < ALIGNED_TOL {
        out.copy_from_slice(xi);
        return;
    }
    // e = S_X(Pi(xi)), the unit version of Gamma(X, xi).
    c[..d - 1].copy_from_slice(xi);
    c[d - 1] = 0.0;
    reflect_into(x, c, e);
    // c = R_{X,Y} e, then e = S_Y(c) = Pi(xi0).
    rotate_into(a, b, e, p, c);
    reflect_into(y, c, e);
    if d == 2 {
        out[0] = if e[0] < 0.0 { -1.0 } else { 1.0 };
        return;
    }
    let n = norm(&e[..d - 1]);
    for k in 0..d - 1 {
        out[k] = e[k] / n;
    }
}

/// The re-indexing `xi -> xi0(X, Y, xi)` of `S^{d-2}` defined by
/// `Gamma(Y, xi0) = |Y|/|X| R_{X,Y}(Gamma(X, xi))`.
pub fn xi_zero(x: &Velocity, y: &Velocity, xi: &SphereDirection) -> Result<SphereDirection> {
    check_dims(&x.0, &xi.0)?;
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    if norm(&x.0) == 0.0 || norm(&y.0) == 0.0 {
        return Err(Error::ZeroVector);
    }
    let mut scratch = Scratch::new(x.dim());
    let mut out = vec![0.0; x.dim() - 1];
    xi_zero_into(&x.0, &y.0, &xi.0, &mut scratch, &mut out);
    Ok(SphereDirection(out))
}

/// Write `(v', v'_*)` for the collision `(v, v_*, theta, xi)`. A vanishing
/// relative velocity leaves both particles unchanged.
pub fn post_collision_into(
    v: &[f64],
    vs: &[f64],
    cos_theta: f64,
    sin_theta: f64,
    xi: &[f64],
    scratch: &mut Scratch,
    out_v: &mut [f64],
    out_vs: &mut [f64],
) {
    let d = v.len();
    let Scratch {
        a: x, b: tmp, c: g, ..
    } = scratch;
    let mut zero = true;
    for k in 0..d {
        x[k] = v[k] - vs[k];
        zero &= x[k] == 0.0;
    }
    if zero {
        out_v.copy_from_slice(v);
        out_vs.copy_from_slice(vs);
        return;
    }
    gamma_into(&x[..d], xi, tmp, g);
    let along = 0.5 * (cos_theta - 1.0);
    let across = 0.5 * sin_theta;
    for k in 0..d {
        let dv = along * x[k] + across * g[k];
        out_v[k] = v[k] + dv;
        out_vs[k] = vs[k] - dv;
    }
}

/// Post-collisional velocities `(v', v'_*)`. Momentum and energy are
/// conserved; `|v' - v| = |v - v_*| sqrt((1 - cos theta)/2)`.
pub fn post_collision(
    v: &Velocity,
    vstar: &Velocity,
    theta: DeviationAngle,
    xi: &SphereDirection,
) -> Result<(Velocity, Velocity)> {
    check_dims(&v.0, &xi.0)?;
    if v.dim() != vstar.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            found: vstar.dim(),
        });
    }
    let d = v.dim();
    let mut scratch = Scratch::new(d);
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let (s, c) = libm::sincos(theta.get());
    post_collision_into(&v.0, &vstar.0, c, s, &xi.0, &mut scratch, &mut a, &mut b);
    Ok((Velocity(a), Velocity(b)))
}
