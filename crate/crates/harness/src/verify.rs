//! Pass/fail predicates over finished replicas.

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::{PlotRow, ReplicaResult, Stat};
use kinetic_core::bounds::{
    fit_hard_constant, fit_soft_constant, log_growth_rate, log_lipschitz_envelope, maxwell_envelope, Observation,
};
use kinetic_core::kernel::CollisionKernel;

/// Energy may drift by rounding only.
pub const ENERGY_TOL: f64 = 1e-9;
/// Slack on the Maxwell growth-rate ceiling.
pub const RATE_SLACK: f64 = 0.15;

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub check: String,
    /// Checkpoint the verdict refers to, if any.
    pub t: Option<f64>,
    pub passed: bool,
    pub statistic: f64,
    pub threshold: f64,
}

impl Verdict {
    fn at_most(check: &str, t: Option<f64>, statistic: f64, threshold: f64) -> Self {
        Verdict { check: check.into(), t, passed: statistic <= threshold, statistic, threshold }
    }

    fn at_least(check: &str, t: Option<f64>, statistic: f64, threshold: f64) -> Self {
        Verdict { check: check.into(), t, passed: statistic >= threshold, statistic, threshold }
    }
}

/// Finite-ensemble tolerance `5 (se + 2/sqrt(N))`; an absent error counts as zero.
pub fn tau_n(se: Option<f64>, n: usize) -> f64 {
    5.0 * (se.unwrap_or(0.0) + 2.0 / (n as f64).sqrt())
}

fn ledger_index(r: &ReplicaResult, t: f64) -> Option<usize> {
    r.ledger.as_ref()?.rows.iter().position(|row| row.t == t)
}

fn d1_at(replicas: &[ReplicaResult], k: usize) -> Vec<f64> {
    replicas.iter().map(|r| r.ledger.as_ref().map_or(f64::NAN, |l| l.rows[k].d1)).collect()
}

/// `d1(t) <= d1(0) + int H + tau_N` per replica at each time in `times`, and
/// the share of replicas that hold at all of them.
pub fn contraction_verdicts(replicas: &[ReplicaResult], times: &[f64], pass_fraction: f64) -> Vec<Verdict> {
    let Some(first) = replicas.first() else { return Vec::new() };
    let n = first.n;
    let mut all_ok = vec![true; replicas.len()];
    let mut out = Vec::new();
    for &t in times {
        let Some(k) = ledger_index(first, t) else { continue };
        let tau = tau_n(Stat::of(&d1_at(replicas, k)).se, n);
        let mut held = 0;
        for (ok, r) in all_ok.iter_mut().zip(replicas) {
            let row = &r.ledger.as_ref().expect("coupled replica").rows[k];
            if row.holds(tau) {
                held += 1;
            } else {
                *ok = false;
            }
        }
        out.push(Verdict::at_least("contraction", Some(t), held as f64 / replicas.len() as f64, pass_fraction));
    }
    let share = all_ok.iter().filter(|&&x| x).count() as f64 / replicas.len() as f64;
    out.push(Verdict::at_least("contraction_all_checkpoints", None, share, pass_fraction));
    out
}

/// Fitted growth rate of `log d1` for the replica mean against its ceiling
/// `(1 + slack) 4 C kappa1_eps |S^{d-2}|`.
pub fn growth_rate_verdict(replicas: &[ReplicaResult], kernel: &CollisionKernel) -> Result<Verdict> {
    let c = kernel.angular_constants()?;
    let ceiling = (1.0 + RATE_SLACK) * 8.0 * c.kappa1_eps * c.sphere / 2.0 * kernel.phi_upper;
    let rows = replicas.first().and_then(|r| r.ledger.as_ref()).map_or(0, |l| l.rows.len());
    let t: Vec<f64> = (0..rows).map(|k| replicas[0].ledger.as_ref().unwrap().rows[k].t).collect();
    let mean: Vec<f64> = (0..rows).map(|k| Stat::of(&d1_at(replicas, k)).mean).collect();
    let rate = log_growth_rate(&t, &mean).unwrap_or(0.0);
    Ok(Verdict::at_most("growth_rate", None, rate, ceiling))
}

pub fn energy_verdict(replicas: &[ReplicaResult]) -> Verdict {
    let worst = replicas.iter().flat_map(|r| &r.moments).map(|m| m.energy_drift).fold(0.0, f64::max);
    Verdict::at_most("energy_drift", None, worst, ENERGY_TOL)
}

/// Largest `m1 / envelope` over both systems; `None` when no envelope is available.
pub fn moment_verdict(replicas: &[ReplicaResult]) -> Option<Verdict> {
    let mut worst: f64 = 0.0;
    for m in replicas.iter().flat_map(|r| &r.moments) {
        let pairs = [(Some(m.m1), Some(m.m1_bound)), (m.m1_tilde, m.m1_tilde_bound)];
        for (v, b) in pairs {
            if let (Some(v), Some(b)) = (v, b) {
                if b.is_nan() {
                    return None;
                }
                worst = worst.max(v / b);
            }
        }
    }
    Some(Verdict::at_most("first_moment", None, worst, 1.0))
}

/// Functional form of a stability envelope.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnvelopeShape {
    /// `exp(1 - (1 - log d) e^{-K t})`.
    LogLipschitz,
    /// `d exp(K (lp_sum + t))`.
    Exponential { lp_sum: f64 },
}

impl EnvelopeShape {
    pub fn value(self, k: f64, d1_0: f64, t: f64) -> f64 {
        match self {
            EnvelopeShape::LogLipschitz => log_lipschitz_envelope(d1_0, k, t),
            EnvelopeShape::Exponential { lp_sum } => d1_0 * (k * (lp_sum + t)).exp(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            EnvelopeShape::LogLipschitz => "log_lipschitz_envelope",
            EnvelopeShape::Exponential { .. } => "exponential_envelope",
        }
    }
}

/// Replicas sharing one initial distance: those used for fitting and those
/// held out for testing.
#[derive(Clone, Copy, Debug)]
pub struct EnvelopeGroup<'a> {
    pub calibration: &'a [ReplicaResult],
    pub test: &'a [ReplicaResult],
}

fn observations(replicas: &[ReplicaResult]) -> Vec<Observation> {
    let mut out = Vec::new();
    for r in replicas {
        let Some(l) = &r.ledger else { continue };
        let d1_0 = l.rows[0].d1;
        out.extend(l.rows.iter().skip(1).map(|row| Observation { d1_0, t: row.t, d1: row.d1 }));
    }
    out
}

/// Smallest constant making the envelope dominate every calibration replica.
pub fn fit_envelope(shape: EnvelopeShape, groups: &[EnvelopeGroup<'_>]) -> Result<f64> {
    let obs: Vec<Observation> = groups.iter().flat_map(|g| observations(g.calibration)).collect();
    Ok(match shape {
        EnvelopeShape::LogLipschitz => fit_hard_constant(&obs)?,
        EnvelopeShape::Exponential { lp_sum } => fit_soft_constant(&obs, lp_sum)?,
    })
}

/// Mean held-out `d1(t)` against the envelope from the mean `d1(0)`, within
/// `tau_N`, at every recorded time after the start.
pub fn envelope_verdicts(shape: EnvelopeShape, k: f64, groups: &[EnvelopeGroup<'_>]) -> Vec<Verdict> {
    let mut out = Vec::new();
    for g in groups {
        let Some(first) = g.test.first() else { continue };
        let Some(l) = &first.ledger else { continue };
        let d1_0 = Stat::of(&d1_at(g.test, 0)).mean;
        for (k_row, row) in l.rows.iter().enumerate().skip(1) {
            let s = Stat::of(&d1_at(g.test, k_row));
            let bound = shape.value(k, d1_0, row.t) + tau_n(s.se, first.n);
            out.push(Verdict::at_most(shape.name(), Some(row.t), s.mean, bound));
        }
    }
    out
}

/// Normalized distances `d1(t)/d1(0)` of groups started at different
/// distances agree within `2 tau_N` at every recorded time.
pub fn collapse_verdicts(groups: &[&[ReplicaResult]]) -> Vec<Verdict> {
    let ratio = |reps: &[ReplicaResult], k: usize| -> Stat {
        let xs: Vec<f64> = reps
            .iter()
            .map(|r| {
                let l = r.ledger.as_ref().expect("coupled replica");
                l.rows[k].d1 / l.rows[0].d1
            })
            .collect();
        Stat::of(&xs)
    };
    let mut out = Vec::new();
    for pair in groups.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let (Some(ra), Some(_)) = (a.first(), b.first()) else { continue };
        let rows = ra.ledger.as_ref().map_or(0, |l| l.rows.len());
        for k in 1..rows {
            let (sa, sb) = (ratio(a, k), ratio(b, k));
            let se = match (sa.se, sb.se) {
                (Some(x), Some(y)) => Some((x * x + y * y).sqrt()),
                _ => None,
            };
            let t = ra.ledger.as_ref().unwrap().rows[k].t;
            out.push(Verdict::at_most("collapse", Some(t), (sa.mean - sb.mean).abs(), 2.0 * tau_n(se, ra.n)));
        }
    }
    out
}

/// All verdicts of a verify-mode run, plus the `(t, d1, envelope)` plot series.
pub fn verify_report(
    cfg: &ExperimentConfig,
    kernel: &CollisionKernel,
    replicas: &[ReplicaResult],
    calibration: &[ReplicaResult],
) -> Result<(Vec<Verdict>, Vec<PlotRow>)> {
    let times: Vec<f64> = cfg.checkpoints.clone();
    let mut verdicts = contraction_verdicts(replicas, &times, cfg.pass_fraction);
    verdicts.push(energy_verdict(replicas));
    verdicts.extend(moment_verdict(replicas));

    let groups = [EnvelopeGroup { calibration, test: replicas }];
    let envelope: Option<Box<dyn Fn(f64, f64) -> f64>> = if kernel.gamma == 0.0 {
        verdicts.push(growth_rate_verdict(replicas, kernel)?);
        let k = kernel.clone();
        Some(Box::new(move |d, t| maxwell_envelope(d, &k, t).unwrap_or(f64::NAN)))
    } else {
        let (shape, fixed) = if kernel.gamma > 0.0 {
            (EnvelopeShape::LogLipschitz, cfg.k_eps.map(|k| k * cfg.c_exp))
        } else {
            (EnvelopeShape::Exponential { lp_sum: cfg.lp_sum }, cfg.k_p)
        };
        let k = match fixed {
            Some(k) => Some(k),
            None if !calibration.is_empty() => Some(fit_envelope(shape, &groups)?),
            None => None,
        };
        k.map(|k| {
            verdicts.extend(envelope_verdicts(shape, k, &groups));
            Box::new(move |d, t| shape.value(k, d, t)) as Box<dyn Fn(f64, f64) -> f64>
        })
    };

    let mut plot = Vec::new();
    if let Some(first) = replicas.first().and_then(|r| r.ledger.as_ref()) {
        let d1_0 = Stat::of(&d1_at(replicas, 0)).mean;
        for (k, row) in first.rows.iter().enumerate() {
            if !cfg.is_checkpoint(row.t) {
                continue;
            }
            let env = match &envelope {
                Some(f) => f(d1_0, row.t),
                None => {
                    let rhs: Vec<f64> = replicas.iter().map(|r| r.ledger.as_ref().unwrap().rows[k].rhs_bound).collect();
                    Stat::of(&rhs).mean
                }
            };
            plot.push(PlotRow { t: row.t, d1: Stat::of(&d1_at(replicas, k)).mean, envelope: env });
        }
    }
    Ok((verdicts, plot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use kinetic_core::coupling::{ChannelCounts, CouplingLedger, LedgerRow};

    fn replica(rows: &[(f64, f64, f64)]) -> ReplicaResult {
        ReplicaResult {
            index: 0,
            seed: 0,
            n: 10_000,
            ledger: Some(CouplingLedger {
                rows: rows
                    .iter()
                    .map(|&(t, d1, rhs)| LedgerRow {
                        t,
                        d1,
                        h_pair: d1,
                        h: 0.0,
                        int_h: rhs - rows[0].1,
                        rhs_bound: rhs,
                        counts: ChannelCounts::default(),
                    })
                    .collect(),
            }),
            moments: Vec::new(),
            snapshots: Vec::new(),
            snapshots_tilde: Vec::new(),
            seconds: 0.0,
        }
    }

    #[test]
    fn tolerance_formula() {
        assert!((tau_n(Some(0.01), 100) - 5.0 * 0.21).abs() < 1e-15);
        assert_eq!(tau_n(None, 400), 0.5);
    }

    #[test]
    fn contraction_counts_failing_replicas() {
        // One outlier among eleven: its excess d exceeds tau_N = 5 (d/11 + 2/100).
        let good = replica(&[(0.0, 0.1, 0.1), (1.0, 0.2, 0.2)]);
        let bad = replica(&[(0.0, 0.1, 0.1), (1.0, 5.0, 0.2)]);
        let mut reps = vec![good.clone(); 10];
        reps.push(bad);
        let v = contraction_verdicts(&reps, &[1.0], 0.95);
        assert!(!v.last().unwrap().passed);
        assert!(contraction_verdicts(&reps, &[1.0], 0.9).last().unwrap().passed);
        let v = contraction_verdicts(&[good.clone(), good], &[1.0], 0.9);
        assert!(v.iter().all(|x| x.passed));
    }

    #[test]
    fn fitted_envelope_dominates_its_calibration() {
        let cal = [replica(&[(0.0, 0.01, 0.0), (1.0, 0.05, 0.0), (2.0, 0.09, 0.0)])];
        let groups = [EnvelopeGroup { calibration: &cal, test: &cal }];
        let k = fit_envelope(EnvelopeShape::LogLipschitz, &groups).unwrap();
        assert!(EnvelopeShape::LogLipschitz.value(k, 0.01, 1.0) >= 0.05 - 1e-12);
        assert!(EnvelopeShape::LogLipschitz.value(k, 0.01, 2.0) >= 0.09 - 1e-12);
        assert!(envelope_verdicts(EnvelopeShape::LogLipschitz, k, &groups).iter().all(|v| v.passed));
    }

    #[test]
    fn collapse_detects_different_shapes() {
        let a = [replica(&[(0.0, 0.1, 0.0), (1.0, 0.2, 0.0)])];
        let b = [replica(&[(0.0, 0.01, 0.0), (1.0, 0.02, 0.0)])];
        let c = [replica(&[(0.0, 0.01, 0.0), (1.0, 0.2, 0.0)])];
        assert!(collapse_verdicts(&[&a, &b]).iter().all(|v| v.passed));
        assert!(!collapse_verdicts(&[&a, &c]).iter().all(|v| v.passed));
    }
}
