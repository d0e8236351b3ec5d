//! Event-driven simulation of the N-particle Kac process.
//!
//! Each unordered pair `{i, j}` collides at rate `Phi(|v_i - v_j|) S_eps / N`
//! (Kac scaling), so the empirical measure follows the homogeneous
//! Boltzmann equation with the truncated kernel as `N` grows. Events are
//! proposed at the constant majorant rate `(N - 1)/2 * Lambda * S_eps` and
//! accepted with probability `Phi / Lambda`. No time step is involved.
//!
//! Every proposal consumes the same number of random draws whatever its
//! outcome, so two runs sharing a seed stay aligned event by event even when
//! their kernels differ in `Phi` or in the grazing cutoff.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{post_collision_into, Scratch};
use crate::kernel::{sample_xi_into, CollisionKernel};
use crate::math;
use crate::points::Points;
use crate::rng::{stream_rng, SimRng};

/// Distribution of the initial velocities.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialKind {
    /// Independent components `N(mean_k, variance)`. A one-element mean is
    /// broadcast to every component.
    Gaussian { mean: Vec<f64>, variance: f64 },
    /// Mixture: first component with probability `weight`.
    TwoGaussians {
        means: [Vec<f64>; 2],
        variance: f64,
        weight: f64,
    },
    /// Uniform on the closed ball of the given radius.
    UniformBall { radius: f64 },
    /// Explicit velocities, e.g. read from a file by the caller.
    Explicit(Points),
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialSpec {
    pub kind: InitialKind,
    pub seed: u64,
}

fn broadcast(mean: &[f64], d: usize) -> Result<Vec<f64>> {
    match mean.len() {
        0 => Ok(vec![0.0; d]),
        1 => Ok(vec![mean[0]; d]),
        n if n == d => Ok(mean.to_vec()),
        n => Err(Error::DimensionMismatch {
            expected: d,
            found: n,
        }),
    }
}

fn finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

impl InitialSpec {
    pub fn new(kind: InitialKind, seed: u64) -> Self {
        InitialSpec { kind, seed }
    }

    /// Draw `n` i.i.d. velocities in dimension `d`, deterministically in the seed.
    pub fn sample(&self, n: usize, d: usize) -> Result<Points> {
        if d < 2 {
            return Err(Error::domain("dimension must be at least 2"));
        }
        let mut rng = stream_rng(self.seed, 0);
        let mut out = Points::zeros(d, n);
        match &self.kind {
            InitialKind::Gaussian { mean, variance } => {
                let mean = broadcast(mean, d)?;
                if !(finite(&mean) && variance.is_finite() && *variance >= 0.0) {
                    return Err(Error::domain(
                        "gaussian parameters must be finite, variance >= 0",
                    ));
                }
                let sd = libm::sqrt(*variance);
                for i in 0..n {
                    let row = out.get_mut(i);
                    math::fill_normal(&mut rng, row);
                    for (x, m) in row.iter_mut().zip(&mean) {
                        *x = m + sd * *x;
                    }
                }
            }
            InitialKind::TwoGaussians {
                means,
                variance,
                weight,
            } => {
                let m0 = broadcast(&means[0], d)?;
                let m1 = broadcast(&means[1], d)?;
                if !(finite(&m0) && finite(&m1) && variance.is_finite() && *variance >= 0.0) {
                    return Err(Error::domain(
                        "gaussian parameters must be finite, variance >= 0",
                    ));
                }
                if !(0.0..=1.0).contains(weight) {
                    return Err(Error::domain("mixture weight must lie in [0, 1]"));
                }
                let sd = libm::sqrt(*variance);
                for i in 0..n {
                    let pick = math::uniform(&mut rng);
                    let m = if pick < *weight { &m0 } else { &m1 };
                    let row = out.get_mut(i);
                    math::fill_normal(&mut rng, row);
                    for (x, mk) in row.iter_mut().zip(m) {
                        *x = mk + sd * *x;
                    }
                }
            }
            InitialKind::UniformBall { radius } => {
                if !(radius.is_finite() && *radius >= 0.0) {
                    return Err(Error::domain("ball radius must be finite and nonnegative"));
                }
                for i in 0..n {
                    let row = out.get_mut(i);
                    math::fill_normal(&mut rng, row);
                    let r = radius * libm::pow(math::uniform(&mut rng), 1.0 / d as f64);
                    let len = math::norm(row);
                    for x in row.iter_mut() {
                        *x = if len > 0.0 { *x * r / len } else { 0.0 };
                    }
                }
            }
            InitialKind::Explicit(p) => {
                if p.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: p.dim(),
                    });
                }
                if p.len() != n {
                    return Err(Error::SizeMismatch {
                        left: n,
                        right: p.len(),
                    });
                }
                if !finite(p.as_slice()) {
                    return Err(Error::domain("explicit velocities must be finite"));
                }
                out = p.clone();
            }
        }
        Ok(out)
    }
}

/// Thinning majorant `Lambda >= Phi(|v_i - v_j|)` over all pairs.
///
/// For `gamma > 0` every relative speed is at most `2 sqrt(sum |v_i|^2)`,
/// which energy conservation keeps fixed.
pub fn majorant_for(points: &Points, kernel: &CollisionKernel) -> f64 {
    if kernel.gamma == 0.0 {
        kernel.phi_upper
    } else if kernel.gamma > 0.0 {
        let r = libm::sqrt(points.total_energy());
        kernel.phi_upper * libm::pow(2.0 * r, kernel.gamma)
    } else {
        kernel.phi_cap
    }
}

/// Total proposal rate for `n` particles at majorant `lambda`.
pub fn proposal_rate(n: usize, lambda: f64, kernel: &CollisionKernel) -> f64 {
    (n as f64 - 1.0) / 2.0 * lambda * kernel.clock_mass()
}

/// Random inputs of one proposed event. Drawn in a fixed order and number.
#[derive(Clone, Debug)]
pub(crate) struct Proposal {
    pub i: usize,
    pub j: usize,
    pub u: f64,
    pub theta: f64,
}

pub(crate) fn draw_pair(rng: &mut SimRng, n: usize) -> (usize, usize) {
    let i = ((math::uniform(rng) * n as f64) as usize).min(n - 1);
    let mut j = ((math::uniform(rng) * (n - 1) as f64) as usize).min(n - 2);
    if j >= i {
        j += 1;
    }
    (i, j)
}

pub(crate) fn draw_proposal(
    rng: &mut SimRng,
    n: usize,
    kernel: &CollisionKernel,
    xi: &mut [f64],
) -> Proposal {
    let (i, j) = draw_pair(rng, n);
    let u = math::uniform(rng);
    let theta = kernel.sample_clock_theta(math::uniform(rng));
    sample_xi_into(kernel.dim, rng, xi);
    Proposal { i, j, u, theta }
}

/// Outcome of one proposal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    pub accepted: bool,
}

/// Velocities at one recorded time.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub velocities: Points,
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    velocities: Points,
    time: f64,
    collisions: u64,
    proposals: u64,
    seed: u64,
    rng: SimRng,
    majorant: Option<f64>,
    next_event: Option<f64>,
    scratch: Scratch,
    xi: Vec<f64>,
    out_a: Vec<f64>,
    out_b: Vec<f64>,
}

impl Ensemble {
    /// Sample the initial state and attach a dynamics stream seeded by
    /// `spec.seed` on stream 0.
    pub fn init(spec: &InitialSpec, n: usize, d: usize) -> Result<Self> {
        Self::init_stream(spec, n, d, 0)
    }

    pub fn init_stream(spec: &InitialSpec, n: usize, d: usize, replica: u64) -> Result<Self> {
        let v = spec.sample(n, d)?;
        Self::from_points(v, spec.seed, replica)
    }

    pub fn from_points(velocities: Points, seed: u64, replica: u64) -> Result<Self> {
        if velocities.len() < 2 {
            return Err(Error::domain("an ensemble needs at least two particles"));
        }
        let d = velocities.dim();
        if d < 2 {
            return Err(Error::domain("dimension must be at least 2"));
        }
        Ok(Ensemble {
            velocities,
            time: 0.0,
            collisions: 0,
            proposals: 0,
            seed,
            // The initial sampler uses stream 0 of `seed`; dynamics use a
            // distinct stream so init and evolution never share draws.
            rng: stream_rng(seed, replica.wrapping_add(1) << 32),
            majorant: None,
            next_event: None,
            scratch: Scratch::new(d),
            xi: vec![0.0; d - 1],
            out_a: vec![0.0; d],
            out_b: vec![0.0; d],
        })
    }

    pub fn velocities(&self) -> &Points {
        &self.velocities
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn collision_count(&self) -> u64 {
        self.collisions
    }

    pub fn proposal_count(&self) -> u64 {
        self.proposals
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.velocities.dim()
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            time: self.time,
            velocities: self.velocities.clone(),
        }
    }

    /// Majorant for this ensemble, computed once and then cached: it
    /// depends only on conserved quantities.
    pub fn majorant_rate(&mut self, kernel: &CollisionKernel) -> f64 {
        *self
            .majorant
            .get_or_insert_with(|| majorant_for(&self.velocities, kernel))
    }

    fn check_kernel(&self, kernel: &CollisionKernel) -> Result<()> {
        if kernel.dim != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: kernel.dim,
            });
        }
        Ok(())
    }

    fn next_event_time(&mut self, kernel: &CollisionKernel) -> f64 {
        if let Some(t) = self.next_event {
            return t;
        }
        let lambda = self.majorant_rate(kernel);
        let rate = proposal_rate(self.len(), lambda, kernel);
        let t = self.time + math::exponential(&mut self.rng, rate);
        self.next_event = Some(t);
        t
    }

    /// Process exactly one proposal, real or fictitious.
    pub fn step(&mut self, kernel: &CollisionKernel) -> Result<Event> {
        self.check_kernel(kernel)?;
        let t = self.next_event_time(kernel);
        if !t.is_finite() {
            return Err(Error::domain(
                "proposal rate is zero; the ensemble cannot evolve",
            ));
        }
        Ok(self.fire(kernel, t))
    }

    fn fire(&mut self, kernel: &CollisionKernel, t: f64) -> Event {
        self.time = t;
        self.next_event = None;
        self.proposals += 1;
        let lambda = self.majorant_rate(kernel);
        let n = self.len();
        let p = draw_proposal(&mut self.rng, n, kernel, &mut self.xi);
        let (vi, vj) = (self.velocities.get(p.i), self.velocities.get(p.j));
        let phi = kernel.phi(math::distance(vi, vj));
        debug_assert!(phi <= lambda * (1.0 + 1e-12));
        let accepted = p.theta >= kernel.angular.eps_theta && p.u * lambda < phi;
        if accepted {
            let (s, c) = libm::sincos(p.theta);
            post_collision_into(
                vi,
                vj,
                c,
                s,
                &self.xi,
                &mut self.scratch,
                &mut self.out_a,
                &mut self.out_b,
            );
            let (a, b) = self.velocities.pair_mut(p.i, p.j);
            a.copy_from_slice(&self.out_a);
            b.copy_from_slice(&self.out_b);
            self.collisions += 1;
        }
        Event {
            time: t,
            i: p.i,
            j: p.j,
            theta: p.theta,
            accepted,
        }
    }

    /// Evolve up to time `until`, processing every proposal at or before it.
    /// The pending proposal time survives the call, so splitting a run into
    /// several `advance_to` calls does not change the trajectory.
    pub fn advance_to(&mut self, kernel: &CollisionKernel, until: f64) -> Result<()> {
        self.check_kernel(kernel)?;
        if until < self.time {
            return Err(Error::domain("cannot advance backwards in time"));
        }
        loop {
            let t = self.next_event_time(kernel);
            if t > until {
                break;
            }
            self.fire(kernel, t);
        }
        self.time = until;
        Ok(())
    }

    /// Evolve to `t_end`, recording snapshots at each checkpoint. With no
    /// checkpoints a single snapshot at `t_end` is returned.
    pub fn run(
        &mut self,
        kernel: &CollisionKernel,
        t_end: f64,
        checkpoints: &[f64],
    ) -> Result<Vec<Snapshot>> {
        check_checkpoints(self.time, t_end, checkpoints)?;
        let mut out = Vec::with_capacity(checkpoints.len().max(1));
        if checkpoints.is_empty() {
            self.advance_to(kernel, t_end)?;
            out.push(self.snapshot());
            return Ok(out);
        }
        for &c in checkpoints {
            self.advance_to(kernel, c)?;
            out.push(self.snapshot());
        }
        self.advance_to(kernel, t_end)?;
        Ok(out)
    }
}

pub(crate) fn check_checkpoints(t0: f64, t_end: f64, checkpoints: &[f64]) -> Result<()> {
    if !(t_end.is_finite() && t_end >= t0) {
        return Err(Error::domain(
            "final time must be finite and not before the current time",
        ));
    }
    if checkpoints.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::domain("checkpoints must be sorted"));
    }
    if checkpoints.iter().any(|&c| !(c >= t0 && c <= t_end)) {
        return Err(Error::domain(
            "checkpoints must lie within [current time, T]",
        ));
    }
    Ok(())
}
