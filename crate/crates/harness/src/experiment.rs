//! Replica orchestration: one seed per replica, fanned out over a worker
//! pool and merged back in seed order.

use crate::config::{BoundKind, ExperimentConfig, InitConfig, Mode, TildeConfig};
use crate::error::{HarnessError, Result};
use crate::verify::{self, Verdict};
use kinetic_core::bounds::{
    exp_moment, first_moment_bound, hard_bound, maxwell_envelope, moment, soft_bound, BoundCurve,
    HardStabilityParams, LpBranch, SoftStabilityParams,
};
use kinetic_core::coupling::{run_coupled, CoupledEnsemble, CoupledRunOptions, CouplingLedger};
use kinetic_core::ensemble::{Ensemble, InitialKind, InitialSpec, Snapshot};
use kinetic_core::kernel::CollisionKernel;
use kinetic_core::transport::{w1_exact, TransportPlan};
use kinetic_core::Points;
use rayon::prelude::*;
use std::time::Instant;

/// Offset separating the seed of an independently drawn second system.
const TILDE_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Moments of one recorded time.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    pub m1: f64,
    pub m1_bound: f64,
    /// Second system of a coupled run.
    pub m1_tilde: Option<f64>,
    pub m1_tilde_bound: Option<f64>,
    pub m2: f64,
    /// Largest relative energy change over the simulated systems.
    pub energy_drift: f64,
    pub exp_moment: f64,
}

#[derive(Clone, Debug)]
pub struct ReplicaResult {
    pub index: usize,
    pub seed: u64,
    pub n: usize,
    /// Full coupling ledger, including the `t = 0` row.
    pub ledger: Option<CouplingLedger>,
    /// One row per recorded time, starting at `t = 0`.
    pub moments: Vec<MomentRow>,
    pub snapshots: Vec<Snapshot>,
    /// Second-system snapshots of a coupled run, aligned with `snapshots`.
    pub snapshots_tilde: Vec<Snapshot>,
    pub seconds: f64,
}

impl ReplicaResult {
    pub fn d1_0(&self) -> Option<f64> {
        self.ledger.as_ref().and_then(|l| l.rows.first()).map(|r| r.d1)
    }
}

/// Mean and standard error over replicas; the error is absent below two.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub se: Option<f64>,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = (xs.len() >= 2).then(|| {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        });
        Stat { mean, se }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub t: f64,
    pub d1: Option<Stat>,
    pub h: Option<Stat>,
    pub m1: Stat,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlotRow {
    pub t: f64,
    pub d1: f64,
    pub envelope: f64,
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub replicas: Vec<ReplicaResult>,
    /// Replicas used only to calibrate envelope constants.
    pub calibration: Vec<ReplicaResult>,
    /// One row per configured checkpoint.
    pub aggregate: Vec<AggregateRow>,
    pub verdicts: Vec<Verdict>,
    pub plot: Vec<PlotRow>,
    pub plan: Option<(TransportPlan, Points, Points)>,
    pub curve: Option<BoundCurve>,
    /// Wall-clock seconds of the whole run. Never written to result files.
    pub seconds: f64,
}

impl RunReport {
    fn empty(cfg: &ExperimentConfig) -> Self {
        RunReport {
            config: cfg.clone(),
            replicas: Vec::new(),
            calibration: Vec::new(),
            aggregate: Vec::new(),
            verdicts: Vec::new(),
            plot: Vec::new(),
            plan: None,
            curve: None,
            seconds: 0.0,
        }
    }

    /// Every verdict passed (vacuously true outside verify mode).
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

pub fn initial_spec(init: &InitConfig, seed: u64) -> Result<InitialSpec> {
    let kind = match init {
        InitConfig::Gaussian { mean, variance } => InitialKind::Gaussian { mean: mean.clone(), variance: *variance },
        InitConfig::TwoGaussians { mean_a, mean_b, variance, weight } => InitialKind::TwoGaussians {
            means: [mean_a.clone(), mean_b.clone()],
            variance: *variance,
            weight: *weight,
        },
        InitConfig::UniformBall { radius } => InitialKind::UniformBall { radius: *radius },
        InitConfig::File(path) => InitialKind::Explicit(crate::io::read_points(path)?),
    };
    Ok(InitialSpec::new(kind, seed))
}

/// The two initial clouds of a coupled replica.
pub fn initial_pair(cfg: &ExperimentConfig, seed: u64) -> Result<(Points, Points)> {
    let a = initial_spec(&cfg.init, seed)?.sample(cfg.n, cfg.dim)?;
    let b = match &cfg.init_tilde {
        TildeConfig::Same => a.clone(),
        TildeConfig::Dilate(delta) => {
            let m1 = moment(&a, 1.0)?;
            if m1 == 0.0 {
                return Err(HarnessError::invalid("cannot dilate a cloud with zero first moment"));
            }
            let f = 1.0 + delta / m1;
            Points::new(cfg.dim, a.as_slice().iter().map(|x| f * x).collect())?
        }
        TildeConfig::Shift(delta) => {
            let data = a.as_slice().iter().enumerate().map(|(k, x)| if k % cfg.dim == 0 { x + delta } else { *x });
            Points::new(cfg.dim, data.collect())?
        }
        TildeConfig::Independent(init) => {
            initial_spec(init, seed.wrapping_add(TILDE_SEED_SALT))?.sample(cfg.n, cfg.dim)?
        }
    };
    Ok((a, b))
}

struct Reference {
    m1_0: f64,
    energy_0: f64,
}

impl Reference {
    fn of(p: &Points) -> Result<Self> {
        Ok(Reference { m1_0: moment(p, 1.0)?, energy_0: p.total_energy() })
    }

    fn drift(&self, p: &Points) -> f64 {
        let e = p.total_energy();
        if self.energy_0 == 0.0 {
            e
        } else {
            (e - self.energy_0).abs() / self.energy_0
        }
    }
}

fn moment_bound(m1_0: f64, kernel: &CollisionKernel, t: f64, cfg: &ExperimentConfig) -> f64 {
    let lp = cfg.bound.as_ref().and_then(|b| {
        b.lp_norm.map(|lp_norm| LpBranch { lp_norm, growth: b.lp_growth, lp_const: b.lp_const })
    });
    first_moment_bound(m1_0, kernel, t, lp.as_ref()).unwrap_or(f64::NAN)
}

fn simulate_replica(cfg: &ExperimentConfig, kernel: &CollisionKernel, index: usize, seed: u64) -> Result<ReplicaResult> {
    let start = Instant::now();
    let points = initial_spec(&cfg.init, seed)?.sample(cfg.n, cfg.dim)?;
    let reference = Reference::of(&points)?;
    let mut e = Ensemble::from_points(points, seed, index as u64)?;
    let mut moments = Vec::new();
    let mut snapshots = Vec::new();
    for t in cfg.record_times() {
        e.advance_to(kernel, t)?;
        let v = e.velocities();
        moments.push(MomentRow {
            t,
            m1: moment(v, 1.0)?,
            m1_bound: moment_bound(reference.m1_0, kernel, t, cfg),
            m1_tilde: None,
            m1_tilde_bound: None,
            m2: moment(v, 2.0)?,
            energy_drift: reference.drift(v),
            exp_moment: exp_moment(v, cfg.exp_moment_eps, cfg.exp_moment_s)?,
        });
        if cfg.snapshots && cfg.is_checkpoint(t) {
            snapshots.push(e.snapshot());
        }
    }
    e.advance_to(kernel, cfg.t_end)?;
    Ok(ReplicaResult {
        index,
        seed,
        n: cfg.n,
        ledger: None,
        moments,
        snapshots,
        snapshots_tilde: Vec::new(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn couple_replica(cfg: &ExperimentConfig, kernel: &CollisionKernel, index: usize, seed: u64) -> Result<ReplicaResult> {
    let start = Instant::now();
    let (a, b) = initial_pair(cfg, seed)?;
    let (ref_a, ref_b) = (Reference::of(&a)?, Reference::of(&b)?);
    let mut c = CoupledEnsemble::new(a, b, seed, index as u64)?;
    let options = CoupledRunOptions { repair: cfg.repair, alpha_in_rhs: cfg.rhs_alpha };
    let mut moments = Vec::new();
    let (mut snapshots, mut snapshots_tilde) = (Vec::new(), Vec::new());
    let mut failure = None;
    let mut observe = |c: &CoupledEnsemble, _: &TransportPlan| {
        let t = c.time();
        if cfg.snapshots && cfg.is_checkpoint(t) {
            snapshots.push(Snapshot { time: t, velocities: c.first().clone() });
            snapshots_tilde.push(Snapshot { time: t, velocities: c.second().clone() });
        }
        let row = (|| -> Result<MomentRow> {
            let (v, w) = (c.first(), c.second());
            let t = c.time();
            Ok(MomentRow {
                t,
                m1: moment(v, 1.0)?,
                m1_bound: moment_bound(ref_a.m1_0, kernel, t, cfg),
                m1_tilde: Some(moment(w, 1.0)?),
                m1_tilde_bound: Some(moment_bound(ref_b.m1_0, kernel, t, cfg)),
                m2: moment(v, 2.0)?,
                energy_drift: ref_a.drift(v).max(ref_b.drift(w)),
                exp_moment: exp_moment(v, cfg.exp_moment_eps, cfg.exp_moment_s)?,
            })
        })();
        match row {
            Ok(r) => moments.push(r),
            Err(e) => failure = Some(e),
        }
    };
    let checkpoints: Vec<f64> = cfg.checkpoints.iter().copied().filter(|&t| t > 0.0).collect();
    let ledger = run_coupled(&mut c, kernel, cfg.t_end, &checkpoints, options, &mut observe)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(ReplicaResult {
        index,
        seed,
        n: cfg.n,
        ledger: Some(ledger),
        moments,
        snapshots,
        snapshots_tilde,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn tag(index: usize, seed: u64) -> impl FnOnce(HarnessError) -> HarnessError {
    move |e| HarnessError::Replica { index, seed, source: Box::new(e) }
}

/// Run every `(index, seed)` job on a pool of `workers` threads. Results come
/// back in job order whatever the thread count.
fn fan_out<F>(jobs: &[(usize, u64)], workers: usize, run: F) -> Result<Vec<ReplicaResult>>
where
    F: Fn(usize, u64) -> Result<ReplicaResult> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::invalid(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<ReplicaResult>> =
        pool.install(|| jobs.par_iter().map(|&(i, s)| run(i, s).map_err(tag(i, s))).collect());
    results.into_iter().collect()
}

fn aggregate(cfg: &ExperimentConfig, replicas: &[ReplicaResult]) -> Vec<AggregateRow> {
    let times = cfg.record_times();
    let mut out = Vec::new();
    for (k, &t) in times.iter().enumerate() {
        if !cfg.is_checkpoint(t) {
            continue;
        }
        let column = |f: &dyn Fn(&ReplicaResult) -> Option<f64>| -> Option<Stat> {
            let xs: Option<Vec<f64>> = replicas.iter().map(f).collect();
            xs.filter(|x| !x.is_empty()).map(|x| Stat::of(&x))
        };
        let ledger_col = |g: fn(&kinetic_core::coupling::LedgerRow) -> f64| {
            column(&|r: &ReplicaResult| r.ledger.as_ref().map(|l| g(&l.rows[k])))
        };
        out.push(AggregateRow {
            t,
            d1: ledger_col(|r| r.d1),
            h: ledger_col(|r| r.h),
            m1: column(&|r: &ReplicaResult| Some(r.moments[k].m1)).unwrap_or(Stat { mean: f64::NAN, se: None }),
        });
    }
    out
}

fn run_bounds(cfg: &ExperimentConfig) -> Result<BoundCurve> {
    let b = cfg.bound.as_ref().ok_or_else(|| HarnessError::invalid("bounds mode needs bound"))?;
    let times = cfg.checkpoints.clone();
    let curve = match b.kind {
        BoundKind::Hard => {
            let k = cfg.k_eps.ok_or_else(|| HarnessError::invalid("bound needs k_eps"))?;
            let params = HardStabilityParams::new(k, cfg.c_exp, cfg.kernel.eps_theta)?;
            hard_bound(&params, b.d1_0.unwrap_or(0.0), &times)?
        }
        BoundKind::Soft => {
            let k = cfg.k_p.ok_or_else(|| HarnessError::invalid("bound needs k_p"))?;
            let params = SoftStabilityParams::new(k, cfg.lp_integrals, cfg.p, cfg.dim, cfg.kernel.gamma)?;
            let d = b.d1_0.unwrap_or(0.0);
            BoundCurve::new(times.clone(), times.iter().map(|&t| soft_bound(&params, d, t)).collect())?
        }
        BoundKind::FirstMoment => {
            let kernel = cfg.kernel.build(cfg.dim)?;
            let lp = b.lp_norm.map(|lp_norm| LpBranch { lp_norm, growth: b.lp_growth, lp_const: b.lp_const });
            let m = b.m1_0.unwrap_or(0.0);
            let values =
                times.iter().map(|&t| first_moment_bound(m, &kernel, t, lp.as_ref())).collect::<kinetic_core::Result<_>>()?;
            BoundCurve::new(times.clone(), values)?
        }
        BoundKind::Maxwell => {
            let kernel = cfg.kernel.build(cfg.dim)?;
            let d = b.d1_0.unwrap_or(0.0);
            let values =
                times.iter().map(|&t| maxwell_envelope(d, &kernel, t)).collect::<kinetic_core::Result<_>>()?;
            BoundCurve::new(times.clone(), values)?
        }
    };
    Ok(curve)
}

/// Run the experiment described by `cfg` on `workers` threads.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RunReport> {
    let start = Instant::now();
    let mut report = RunReport::empty(cfg);
    let jobs: Vec<(usize, u64)> = cfg.seeds.iter().copied().enumerate().collect();
    match cfg.mode {
        Mode::W1 => {
            let (pa, pb) = (cfg.points_a.as_ref(), cfg.points_b.as_ref());
            let a = crate::io::read_points(pa.ok_or_else(|| HarnessError::invalid("points_a missing"))?)?;
            let b = crate::io::read_points(pb.ok_or_else(|| HarnessError::invalid("points_b missing"))?)?;
            for p in [&a, &b] {
                if (cfg.n != 0 && p.len() != cfg.n) || p.dim() != cfg.dim {
                    return Err(HarnessError::invalid(format!(
                        "point file holds {} points in dimension {}, config says N = {} d = {}",
                        p.len(),
                        p.dim(),
                        cfg.n,
                        cfg.dim
                    )));
                }
            }
            let plan = w1_exact(&a, &b)?;
            report.plan = Some((plan, a, b));
        }
        Mode::Bounds => report.curve = Some(run_bounds(cfg)?),
        Mode::Simulate => {
            let kernel = cfg.kernel.build(cfg.dim)?;
            report.replicas = fan_out(&jobs, workers, |i, s| simulate_replica(cfg, &kernel, i, s))?;
            report.aggregate = aggregate(cfg, &report.replicas);
        }
        Mode::Couple | Mode::Verify => {
            let kernel = cfg.kernel.build(cfg.dim)?;
            report.replicas = fan_out(&jobs, workers, |i, s| couple_replica(cfg, &kernel, i, s))?;
            if cfg.mode == Mode::Verify && !cfg.calibration_seeds.is_empty() {
                let base = cfg.seeds.len();
                let cal: Vec<(usize, u64)> =
                    cfg.calibration_seeds.iter().enumerate().map(|(k, &s)| (base + k, s)).collect();
                report.calibration = fan_out(&cal, workers, |i, s| couple_replica(cfg, &kernel, i, s))?;
            }
            report.aggregate = aggregate(cfg, &report.replicas);
            if cfg.mode == Mode::Verify {
                let (verdicts, plot) = verify::verify_report(cfg, &kernel, &report.replicas, &report.calibration)?;
                report.verdicts = verdicts;
                report.plot = plot;
            }
        }
    }
    report.seconds = start.elapsed().as_secs_f64();
    Ok(report)
}
