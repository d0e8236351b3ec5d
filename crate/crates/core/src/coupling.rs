//! Joint evolution of two particle systems driven by common noise.
//!
//! Both systems share the event clock, the pair choice, the acceptance
//! uniform and the angle `(theta, xi)`. With `m = min(Phi, Phi~)` and
//! `M = max(Phi, Phi~)` for the chosen pair, a draw `u Lambda < m` makes both
//! systems collide, the second one with the re-indexed direction
//! `xi_0(v_i - v_j, v~_i - v~_j, xi)`; `m <= u Lambda < M` moves only the
//! system with the larger rate; anything above is fictitious. Each marginal
//! is therefore an exact copy of the single-system process.
//!
//! Between checkpoints particles stay paired by index. At a checkpoint the
//! optimal matching is computed, the contraction integrand `H` is evaluated
//! on it, and (optionally) the second system is re-indexed along it.

use alloc::vec;
use alloc::vec::Vec;

use crate::ensemble::{check_checkpoints, draw_proposal, majorant_for, proposal_rate};
use crate::error::{Error, Result};
use crate::geometry::{post_collision_into, xi_zero_into, Scratch};
use crate::kernel::CollisionKernel;
use crate::math;
use crate::points::Points;
use crate::rng::{stream_rng, SimRng};
use crate::transport::{w1_exact, TransportPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Channel {
    Both,
    FirstOnly,
    SecondOnly,
    Fictitious,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelCounts {
    pub both: u64,
    pub first_only: u64,
    pub second_only: u64,
    pub fictitious: u64,
}

impl ChannelCounts {
    fn record(&mut self, c: Channel) {
        match c {
            Channel::Both => self.both += 1,
            Channel::FirstOnly => self.first_only += 1,
            Channel::SecondOnly => self.second_only += 1,
            Channel::Fictitious => self.fictitious += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.both + self.first_only + self.second_only + self.fictitious
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoupledEvent {
    pub time: f64,
    pub i: usize,
    pub j: usize,
    pub theta: f64,
    pub channel: Channel,
}

#[derive(Clone, Debug)]
pub struct CoupledEnsemble {
    first: Points,
    second: Points,
    time: f64,
    seed: u64,
    rng: SimRng,
    counts: ChannelCounts,
    majorant: Option<f64>,
    next_event: Option<f64>,
    scratch: Scratch,
    xi: Vec<f64>,
    xi0: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    out_a: Vec<f64>,
    out_b: Vec<f64>,
}

impl CoupledEnsemble {
    /// Pair `first[i]` with `second[i]`. Dynamics use the same stream as a
    /// single [`crate::ensemble::Ensemble`] with this seed and replica.
    pub fn new(first: Points, second: Points, seed: u64, replica: u64) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::SizeMismatch {
                left: first.len(),
                right: second.len(),
            });
        }
        if first.dim() != second.dim() {
            return Err(Error::DimensionMismatch {
                expected: first.dim(),
                found: second.dim(),
            });
        }
        if first.len() < 2 {
            return Err(Error::domain("an ensemble needs at least two particles"));
        }
        let d = first.dim();
        Ok(CoupledEnsemble {
            first,
            second,
            time: 0.0,
            seed,
            rng: stream_rng(seed, replica.wrapping_add(1) << 32),
            counts: ChannelCounts::default(),
            majorant: None,
            next_event: None,
            scratch: Scratch::new(d),
            xi: vec![0.0; d - 1],
            xi0: vec![0.0; d - 1],
            x: vec![0.0; d],
            y: vec![0.0; d],
            out_a: vec![0.0; d],
            out_b: vec![0.0; d],
        })
    }

    pub fn first(&self) -> &Points {
        &self.first
    }

    pub fn second(&self) -> &Points {
        &self.second
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn counts(&self) -> ChannelCounts {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    /// `(1/N) sum_i |v_i - v~_i|` for the current index pairing.
    pub fn pairing_distance(&self) -> f64 {
        self.first.mean_pair_distance(&self.second)
    }

    /// Shared majorant: the larger of the two single-system majorants.
    pub fn majorant_rate(&mut self, kernel: &CollisionKernel) -> f64 {
        let (a, b) = (&self.first, &self.second);
        *self
            .majorant
            .get_or_insert_with(|| majorant_for(a, kernel).max(majorant_for(b, kernel)))
    }

    /// Re-index the second system so that `second[i]` becomes the old
    /// `second[matching[i]]`.
    pub fn repair(&mut self, matching: &[usize]) -> Result<()> {
        if matching.len() != self.len() {
            return Err(Error::PlanMismatch {
                plan: matching.len(),
                n: self.len(),
            });
        }
        self.second = self.second.permuted(matching);
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

    pub fn coupled_step(&mut self, kernel: &CollisionKernel) -> Result<CoupledEvent> {
        if kernel.dim != self.first.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.first.dim(),
                found: kernel.dim,
            });
        }
        let t = self.next_event_time(kernel);
        if !t.is_finite() {
            return Err(Error::domain(
                "proposal rate is zero; the ensembles cannot evolve",
            ));
        }
        Ok(self.fire(kernel, t))
    }

    fn fire(&mut self, kernel: &CollisionKernel, t: f64) -> CoupledEvent {
        self.time = t;
        self.next_event = None;
        let lambda = self.majorant_rate(kernel);
        let n = self.len();
        let p = draw_proposal(&mut self.rng, n, kernel, &mut self.xi);
        let d = self.first.dim();
        let mut zero_x = true;
        let mut zero_y = true;
        {
            let (ai, aj) = (self.first.get(p.i), self.first.get(p.j));
            let (bi, bj) = (self.second.get(p.i), self.second.get(p.j));
            for k in 0..d {
                self.x[k] = ai[k] - aj[k];
                self.y[k] = bi[k] - bj[k];
                zero_x &= self.x[k] == 0.0;
                zero_y &= self.y[k] == 0.0;
            }
        }
        let phi_a = kernel.phi(math::norm(&self.x));
        let phi_b = kernel.phi(math::norm(&self.y));
        let lo = phi_a.min(phi_b);
        let hi = phi_a.max(phi_b);
        let level = p.u * lambda;
        let channel = if p.theta < kernel.angular.eps_theta {
            Channel::Fictitious
        } else if level < lo {
            Channel::Both
        } else if level < hi {
            if phi_a > phi_b {
                Channel::FirstOnly
            } else {
                Channel::SecondOnly
            }
        } else {
            Channel::Fictitious
        };
        let (s, c) = libm::sincos(p.theta);
        if matches!(channel, Channel::Both | Channel::FirstOnly) {
            let (vi, vj) = (self.first.get(p.i), self.first.get(p.j));
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
            let (a, b) = self.first.pair_mut(p.i, p.j);
            a.copy_from_slice(&self.out_a);
            b.copy_from_slice(&self.out_b);
        }
        if matches!(channel, Channel::Both | Channel::SecondOnly) {
            if channel == Channel::Both && !zero_x && !zero_y {
                xi_zero_into(&self.x, &self.y, &self.xi, &mut self.scratch, &mut self.xi0);
            } else {
                self.xi0.copy_from_slice(&self.xi);
            }
            let (vi, vj) = (self.second.get(p.i), self.second.get(p.j));
            post_collision_into(
                vi,
                vj,
                c,
                s,
                &self.xi0,
                &mut self.scratch,
                &mut self.out_a,
                &mut self.out_b,
            );
            let (a, b) = self.second.pair_mut(p.i, p.j);
            a.copy_from_slice(&self.out_a);
            b.copy_from_slice(&self.out_b);
        }
        self.counts.record(channel);
        CoupledEvent {
            time: t,
            i: p.i,
            j: p.j,
            theta: p.theta,
            channel,
        }
    }

    /// Process every proposal up to and including time `until`.
    pub fn advance_to(&mut self, kernel: &CollisionKernel, until: f64) -> Result<()> {
        if kernel.dim != self.first.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.first.dim(),
                found: kernel.dim,
            });
        }
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
}

/// Contraction integrand evaluated on a matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Integrand {
    /// The full `H`.
    pub h: f64,
    /// Drift carried by truncated grazing collisions:
    /// `(alpha_eps/2)(1/N^2) sum (Phi ^ Phi~)(|v| + |v~| + |v_*| + |v~_*|)`.
    pub grazing: f64,
}

/// `H = (kappa1_eps |S^{d-2}|/2)(1/N^2) sum_{i,j} [8 (Phi ^ Phi~)|v_i - v~_i| +
/// (Phi - Phi~)_+ |v_i - v_j| + (Phi~ - Phi)_+ |v~_i - v~_j|]`, where
/// `v~_i` is the partner of `v_i` under the plan. The diagonal `i = j` is
/// included, as in the double integral against the coupling.
pub fn evaluate_h(
    plan: &TransportPlan,
    a: &Points,
    b: &Points,
    kernel: &CollisionKernel,
) -> Result<f64> {
    Ok(evaluate_integrand(plan, a, b, kernel)?.h)
}

pub fn evaluate_integrand(
    plan: &TransportPlan,
    a: &Points,
    b: &Points,
    kernel: &CollisionKernel,
) -> Result<Integrand> {
    let n = a.len();
    if b.len() != n {
        return Err(Error::SizeMismatch {
            left: n,
            right: b.len(),
        });
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    if plan.len() != n {
        return Err(Error::PlanMismatch {
            plan: plan.len(),
            n,
        });
    }
    let consts = kernel
        .angular
        .constants_at(kernel.angular.eps_theta, a.dim())?;
    let partner = |i: usize| b.get(plan.matching[i]);
    let gap: Vec<f64> = (0..n)
        .map(|i| math::distance(a.get(i), partner(i)))
        .collect();
    let speed: Vec<f64> = (0..n)
        .map(|i| math::norm(a.get(i)) + math::norm(partner(i)))
        .collect();

    // The summand is symmetric in (i, j) except for the `|v_i - v~_i|`
    // factor, so the off-diagonal pairs are visited once.
    let phi0 = kernel.phi(0.0);
    let mut sum = 0.0;
    let mut drift = 0.0;
    for i in 0..n {
        sum += 8.0 * phi0 * gap[i];
        drift += phi0 * 2.0 * speed[i];
    }
    for i in 0..n {
        let (ai, bi) = (a.get(i), partner(i));
        for j in i + 1..n {
            let (aj, bj) = (a.get(j), partner(j));
            let za = math::distance(ai, aj);
            let zb = math::distance(bi, bj);
            let pa = kernel.phi(za);
            let pb = kernel.phi(zb);
            let lo = pa.min(pb);
            sum += 8.0 * lo * (gap[i] + gap[j]);
            sum += 2.0 * ((pa - pb).max(0.0) * za + (pb - pa).max(0.0) * zb);
            drift += 2.0 * lo * (speed[i] + speed[j]);
        }
    }
    let nn = (n * n) as f64;
    Ok(Integrand {
        h: consts.kappa1_eps * consts.sphere / 2.0 * sum / nn,
        grazing: consts.alpha_eps / 2.0 * drift / nn,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoupledRunOptions {
    /// Re-index the second system along the optimal matching at checkpoints.
    pub repair: bool,
    /// Add the integrated grazing drift to the right-hand side.
    pub alpha_in_rhs: bool,
}

impl Default for CoupledRunOptions {
    fn default() -> Self {
        CoupledRunOptions {
            repair: true,
            alpha_in_rhs: false,
        }
    }
}

/// One checkpoint of a coupled run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LedgerRow {
    pub t: f64,
    /// Exact W1 between the two empirical measures.
    pub d1: f64,
    /// Mean distance of the index pairing before any re-indexing.
    pub h_pair: f64,
    pub h: f64,
    /// Trapezoidal integral of `H` from 0 to `t`.
    pub int_h: f64,
    /// `d1(0) + int_H` (plus the integrated grazing drift when enabled).
    pub rhs_bound: f64,
    pub counts: ChannelCounts,
}

impl LedgerRow {
    /// `d1(t) <= rhs_bound + tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.d1 <= self.rhs_bound + tol
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CouplingLedger {
    pub rows: Vec<LedgerRow>,
}

impl CouplingLedger {
    pub fn predicate_holds(&self, tol: f64) -> bool {
        self.rows.iter().all(|r| r.holds(tol))
    }
}

/// Run the coupled process to `t_end`, filling a ledger row at `t = 0` and at
/// each checkpoint. `observe` sees the plan and state at every checkpoint,
/// before any re-indexing.
pub fn run_coupled<F>(
    c: &mut CoupledEnsemble,
    kernel: &CollisionKernel,
    t_end: f64,
    checkpoints: &[f64],
    options: CoupledRunOptions,
    mut observe: F,
) -> Result<CouplingLedger>
where
    F: FnMut(&CoupledEnsemble, &TransportPlan),
{
    check_checkpoints(c.time(), t_end, checkpoints)?;
    let mut ledger = CouplingLedger::default();
    let mut d1_start = 0.0;
    let mut prev: Option<(f64, f64, f64)> = None;
    let mut int_h = 0.0;
    let mut int_g = 0.0;
    let start = c.time();
    let times = core::iter::once(start).chain(checkpoints.iter().copied().filter(|&t| t > start));
    for t in times {
        c.advance_to(kernel, t)?;
        let plan = w1_exact(&c.first, &c.second)?;
        let h_pair = c.pairing_distance();
        let integrand = evaluate_integrand(&plan, &c.first, &c.second, kernel)?;
        match prev {
            None => d1_start = plan.cost,
            Some((tp, hp, gp)) => {
                int_h += 0.5 * (t - tp) * (hp + integrand.h);
                int_g += 0.5 * (t - tp) * (gp + integrand.grazing);
            }
        }
        prev = Some((t, integrand.h, integrand.grazing));
        let rhs = d1_start + int_h + if options.alpha_in_rhs { int_g } else { 0.0 };
        ledger.rows.push(LedgerRow {
            t,
            d1: plan.cost,
            h_pair,
            h: integrand.h,
            int_h,
            rhs_bound: rhs,
            counts: c.counts(),
        });
        observe(c, &plan);
        if options.repair {
            c.repair(&plan.matching)?;
        }
    }
    c.advance_to(kernel, t_end)?;
    Ok(ledger)
}
