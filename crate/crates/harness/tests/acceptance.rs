//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test -p kinetic-harness --test acceptance -- 4 7`.
//! A criterion listed in `KNOWN_UNATTAINABLE` is expected to fail; the run
//! exits nonzero if it unexpectedly passes or if any other criterion fails.

use kinetic_core::bounds::{
    hard_bound, hard_bound_numeric, log_lipschitz_rate, moment_threshold, tstar, yudovitch_bound, HardStabilityParams,
};
use kinetic_core::geometry::{gamma_param, post_collision, xi_zero, DeviationAngle, Velocity};
use kinetic_core::kernel::{sample_xi, AngularMeasure, CollisionKernel, PowerLawSpec};
use kinetic_core::math::{distance, dot, norm, uniform};
use kinetic_core::rng::stream_rng;
use kinetic_core::transport::{verify_duality, w1_bruteforce, w1_exact};
use kinetic_core::Points;
use kinetic_harness::experiment::{ReplicaResult, RunReport, Stat};
use kinetic_harness::verify::{
    collapse_verdicts, envelope_verdicts, fit_envelope, EnvelopeGroup, EnvelopeShape, ENERGY_TOL,
};
use kinetic_harness::{emit, parse_config, run_experiment, Format};
use std::cell::OnceCell;
use std::f64::consts::{E, FRAC_PI_4, LN_2, PI};
use std::time::Instant;

/// Criteria that cannot hold as stated, with the reason.
const KNOWN_UNATTAINABLE: &[(u32, &str)] =
    &[(9, "q0(3.01) = gamma^2/(nu + gamma) = 197.02, which is not 200 to three significant figures")];

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into() }
    }
}

fn within_time(o: Outcome, start: Instant, limit: f64) -> Outcome {
    let s = start.elapsed().as_secs_f64();
    if !limit.is_finite() {
        return Outcome::new(o.passed, format!("{}; {s:.1} s", o.detail));
    }
    Outcome::new(o.passed && s < limit, format!("{}; {s:.1} s of {limit:.0} s allowed", o.detail))
}

// ---------------------------------------------------------------- runs

const N: usize = 2000;
const CHECKPOINTS: usize = 5;

fn grid(t_end: f64) -> String {
    (1..=CHECKPOINTS).map(|k| format!("{}", t_end * k as f64 / CHECKPOINTS as f64)).collect::<Vec<_>>().join(",")
}

fn seeds(range: std::ops::Range<u64>) -> String {
    range.map(|s| s.to_string()).collect::<Vec<_>>().join(",")
}

fn maxwell_kernel(eps: f64) -> CollisionKernel {
    let spec = PowerLawSpec::new(5.0).unwrap();
    let ang = AngularMeasure::power_law(spec.nu(), 1.0, eps).unwrap();
    CollisionKernel::new(0.0, 1.0, ang, 3).unwrap()
}

/// Horizon with `kappa1_eps |S^{d-2}| C T = 2`.
fn maxwell_horizon() -> f64 {
    let c = maxwell_kernel(1e-3).angular_constants().unwrap();
    2.0 / (c.kappa1_eps * c.sphere)
}

fn run(text: &str) -> RunReport {
    let cfg = parse_config(text).unwrap_or_else(|e| panic!("config: {e}\n{text}"));
    run_experiment(&cfg, 1).unwrap_or_else(|e| panic!("run: {e}"))
}

const HARD_DELTAS: [f64; 3] = [1e-1, 1e-2, 1e-3];
const HARD_T: f64 = 0.5;
const HARD_CAL: std::ops::Range<u64> = 101..104;
const HARD_TEST: std::ops::Range<u64> = 1..6;

const SOFT_DELTAS: [f64; 2] = [1e-1, 1e-2];
const SOFT_T: f64 = 0.1;
const SOFT_CAP: f64 = 100.0;

const EPS_LEVELS: [f64; 3] = [4e-3, 2e-3, 1e-3];

#[derive(Default)]
struct Runs {
    maxwell: OnceCell<RunReport>,
    hard: OnceCell<Vec<RunReport>>,
    soft: OnceCell<Vec<RunReport>>,
    truncation: OnceCell<Vec<RunReport>>,
}

impl Runs {
    fn maxwell(&self) -> &RunReport {
        self.maxwell.get_or_init(|| {
            let t = maxwell_horizon();
            run(&format!(
                "mode=verify\ns=5\nN={N}\nT={t}\ncheckpoints={}\nseeds={}\ninit=gaussian\ninit_tilde=dilate delta=0.1",
                grid(t),
                seeds(1..11)
            ))
        })
    }

    fn hard(&self) -> &[RunReport] {
        self.hard.get_or_init(|| {
            let all = seeds(HARD_TEST.start..HARD_TEST.end).to_string() + "," + &seeds(HARD_CAL);
            HARD_DELTAS
                .iter()
                .map(|d| {
                    run(&format!(
                        "mode=couple\ns=7\nN={N}\nT={HARD_T}\ncheckpoints={}\nseeds={all}\ninit_tilde=dilate delta={d}",
                        grid(HARD_T)
                    ))
                })
                .collect()
        })
    }

    fn soft(&self) -> &[RunReport] {
        self.soft.get_or_init(|| {
            SOFT_DELTAS
                .iter()
                .map(|d| {
                    run(&format!(
                        "mode=couple\ns={}\nphi_cap={SOFT_CAP}\nN={N}\nT={SOFT_T}\ncheckpoints={}\nseeds={}\ninit_tilde=dilate delta={d}",
                        11.0 / 3.0,
                        grid(SOFT_T),
                        seeds(1..6)
                    ))
                })
                .collect()
        })
    }

    fn truncation(&self) -> &[RunReport] {
        self.truncation.get_or_init(|| {
            let t = maxwell_horizon();
            EPS_LEVELS
                .iter()
                .map(|eps| {
                    run(&format!(
                        "mode=couple\nsnapshots=true\ns=5\neps_theta={eps}\neps_proposal=1e-3\nN={N}\nT={t}\ncheckpoints={}\nseeds={}\ninit_tilde=dilate delta=0.1",
                        grid(t),
                        seeds(1..11)
                    ))
                })
                .collect()
        })
    }
}

fn d1_series(r: &ReplicaResult) -> Vec<f64> {
    r.ledger.as_ref().unwrap().rows.iter().map(|row| row.d1).collect()
}

// ---------------------------------------------------------------- criteria

fn geometry() -> Outcome {
    let start = Instant::now();
    let mut rng = stream_rng(2024, 1);
    let cases = 100_000;
    let (mut bound_fail, mut worst_identity, mut worst_energy, mut worst_momentum) = (0usize, 0.0f64, 0.0f64, 0.0f64);
    for d in 2..=4 {
        for _ in 0..cases {
            let mut draw = || -> Vec<f64> { (0..d).map(|_| 20.0 * uniform(&mut rng) - 10.0).collect() };
            let (v, vs, w, ws) = (draw(), draw(), draw(), draw());
            let theta = PI * (1.0 - uniform(&mut rng));
            let xi = sample_xi(d, &mut rng).unwrap();
            let x: Vec<f64> = v.iter().zip(&vs).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = w.iter().zip(&ws).map(|(a, b)| a - b).collect();
            let (xv, yv) = (Velocity::new(x.clone()).unwrap(), Velocity::new(y.clone()).unwrap());
            let xi0 = xi_zero(&xv, &yv, &xi).unwrap();
            let gx = gamma_param(&xv, &xi).unwrap();
            let gy = gamma_param(&yv, &xi0).unwrap();
            if distance(gx.as_slice(), gy.as_slice()) > 3.0 * distance(&x, &y) + 1e-9 {
                bound_fail += 1;
            }
            let (a, b) = post_collision(
                &Velocity::new(v.clone()).unwrap(),
                &Velocity::new(vs.clone()).unwrap(),
                DeviationAngle::new(theta).unwrap(),
                &xi,
            )
            .unwrap();
            let (a, b) = (a.as_slice(), b.as_slice());
            let rel = norm(&x);
            let exact = rel * ((1.0 - theta.cos()) / 2.0).sqrt();
            worst_identity = worst_identity.max((distance(a, &v) - exact).abs());
            let e0 = dot(&v, &v) + dot(&vs, &vs);
            let e1 = dot(a, a) + dot(b, b);
            worst_energy = worst_energy.max((e1 - e0).abs() / e0);
            let scale = norm(&v) + norm(&vs);
            for k in 0..d {
                worst_momentum = worst_momentum.max(((a[k] + b[k]) - (v[k] + vs[k])).abs() / scale);
            }
        }
    }
    let ok = bound_fail == 0 && worst_identity <= 1e-10 && worst_energy <= 1e-12 && worst_momentum <= 1e-12;
    within_time(
        Outcome::new(
            ok,
            format!(
                "3e5 cases: {bound_fail} bound violations, deflection error {worst_identity:.1e}, energy {worst_energy:.1e}, momentum {worst_momentum:.1e}"
            ),
        ),
        start,
        10.0,
    )
}

fn transport() -> Outcome {
    let start = Instant::now();
    let mut rng = stream_rng(77, 1);
    let cloud = |n: usize, d: usize, rng: &mut kinetic_core::rng::SimRng| -> Points {
        Points::new(d, (0..n * d).map(|_| 10.0 * uniform(rng) - 5.0).collect()).unwrap()
    };
    let (mut worst_gap, mut certs) = (0.0f64, 0usize);
    for k in 0..500 {
        let n = 1 + k % 8;
        let d = 1 + (k / 8) % 3;
        let (a, b) = (cloud(n, d, &mut rng), cloud(n, d, &mut rng));
        let exact = w1_exact(&a, &b).unwrap();
        let brute = w1_bruteforce(&a, &b).unwrap();
        worst_gap = worst_gap.max((exact.cost - brute.cost).abs());
        if verify_duality(&exact, &a, &b).unwrap() {
            certs += 1;
        }
    }
    let mut axiom_fail = 0;
    for k in 0..200 {
        let n = 1 + k % 8;
        let d = 1 + (k / 8) % 3;
        let (a, b, c) = (cloud(n, d, &mut rng), cloud(n, d, &mut rng), cloud(n, d, &mut rng));
        let w = |p: &Points, q: &Points| w1_exact(p, q).unwrap().cost;
        let (ab, ba, bc, ac) = (w(&a, &b), w(&b, &a), w(&b, &c), w(&a, &c));
        if (ab - ba).abs() > 1e-9 || ac > ab + bc + 1e-9 || w(&a, &a).abs() > 1e-9 || ab < 0.0 {
            axiom_fail += 1;
        }
    }
    let ok = worst_gap <= 1e-12 && certs == 500 && axiom_fail == 0;
    within_time(
        Outcome::new(
            ok,
            format!("500 instances: max gap {worst_gap:.1e}, {certs}/500 certificates; {axiom_fail}/200 axiom failures"),
        ),
        start,
        30.0,
    )
}

fn angular_sampling() -> Outcome {
    let start = Instant::now();
    let (nu, eps) = (0.5, 1e-3);
    let m = AngularMeasure::power_law(nu, 1.0, eps).unwrap();
    let mut rng = stream_rng(3, 1);
    let n = 1_000_000;
    let mut xs: Vec<f64> = (0..n).map(|_| m.sample_theta(uniform(&mut rng)).get()).collect();
    xs.sort_by(f64::total_cmp);
    let cdf = |t: f64| (eps.powf(-nu) - t.powf(-nu)) / (eps.powf(-nu) - PI.powf(-nu));
    let mut ks: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        ks = ks.max((f - i as f64 / n as f64).abs()).max(((i + 1) as f64 / n as f64 - f).abs());
    }
    within_time(Outcome::new(ks < 0.01, format!("KS distance {ks:.2e} on 1e6 samples")), start, 10.0)
}

fn maxwell_coupling(runs: &Runs) -> Outcome {
    let start = Instant::now();
    let r = runs.maxwell();
    let all = r.verdicts.iter().find(|v| v.check == "contraction_all_checkpoints").unwrap();
    let per_cp = r.verdicts.iter().filter(|v| v.check == "contraction").all(|v| v.passed);
    let rate = r.verdicts.iter().find(|v| v.check == "growth_rate").unwrap();
    let ok = all.passed && per_cp && rate.passed;
    within_time(
        Outcome::new(
            ok,
            format!(
                "{:.0}% of replicas hold at every checkpoint; log d1 growth rate {:.2e} against ceiling {:.3}",
                100.0 * all.statistic,
                rate.statistic,
                rate.threshold
            ),
        ),
        start,
        600.0,
    )
}

fn split(r: &RunReport, set: std::ops::Range<u64>) -> Vec<ReplicaResult> {
    r.replicas.iter().filter(|x| set.contains(&x.seed)).cloned().collect()
}

fn hard_shape(runs: &Runs) -> Outcome {
    let start = Instant::now();
    let reports = runs.hard();
    let parts: Vec<(Vec<ReplicaResult>, Vec<ReplicaResult>)> =
        reports.iter().map(|r| (split(r, HARD_CAL), split(r, HARD_TEST))).collect();
    let groups: Vec<EnvelopeGroup<'_>> =
        parts.iter().map(|(c, t)| EnvelopeGroup { calibration: c, test: t }).collect();
    let k = fit_envelope(EnvelopeShape::LogLipschitz, &groups).unwrap();
    let verdicts = envelope_verdicts(EnvelopeShape::LogLipschitz, k, &groups);
    let ok = verdicts.len() == HARD_DELTAS.len() * CHECKPOINTS && verdicts.iter().all(|v| v.passed);
    // Margin with the finite-N tolerance removed, for information.
    let mut strict = 0;
    for (g, (_, test)) in groups.iter().zip(&parts) {
        let d0 = Stat::of(&test.iter().map(|r| d1_series(r)[0]).collect::<Vec<_>>()).mean;
        let rows = &test[0].ledger.as_ref().unwrap().rows;
        for (k_row, row) in rows.iter().enumerate().skip(1) {
            let mean = Stat::of(&g.test.iter().map(|r| d1_series(r)[k_row]).collect::<Vec<_>>()).mean;
            if mean <= EnvelopeShape::LogLipschitz.value(k, d0, row.t) {
                strict += 1;
            }
        }
    }
    within_time(
        Outcome::new(
            ok,
            format!(
                "fitted K = {k:.3} on seeds {HARD_CAL:?}; {}/{} held-out checkpoints dominated within tau_N ({strict} without it)",
                verdicts.iter().filter(|v| v.passed).count(),
                verdicts.len()
            ),
        ),
        start,
        900.0,
    )
}

fn soft_shape(runs: &Runs) -> Outcome {
    let start = Instant::now();
    let reports = runs.soft();
    let groups: Vec<&[ReplicaResult]> = reports.iter().map(|r| r.replicas.as_slice()).collect();
    let v = collapse_verdicts(&groups);
    let worst = v.iter().map(|x| x.statistic / x.threshold).fold(0.0, f64::max);
    let ok = v.len() == CHECKPOINTS && v.iter().all(|x| x.passed);
    within_time(
        Outcome::new(
            ok,
            format!("normalized d1 gap at most {:.0}% of 2 tau_N over {} checkpoints (cap {SOFT_CAP})", 100.0 * worst, v.len()),
        ),
        start,
        900.0,
    )
}

fn conservation(runs: &Runs) -> Outcome {
    let start = Instant::now();
    let mut all: Vec<&RunReport> = vec![runs.maxwell()];
    all.extend(runs.hard());
    all.extend(runs.soft());
    all.extend(runs.truncation());
    let rows = all.iter().flat_map(|r| &r.replicas).flat_map(|x| &x.moments);
    let (mut drift, mut over): (f64, usize) = (0.0, 0);
    for m in rows {
        drift = drift.max(m.energy_drift);
        if m.m1 > m.m1_bound || m.m1_tilde.zip(m.m1_tilde_bound).is_some_and(|(v, b)| v > b) {
            over += 1;
        }
    }
    // Exponential moment of the hard-potential runs: finite, not exploding.
    let mut exp_bad = 0;
    for r in runs.hard().iter().flat_map(|r| &r.replicas) {
        let e: Vec<f64> = r.moments.iter().map(|m| m.exp_moment).collect();
        if !e.iter().all(|x| x.is_finite()) || e[e.len() - 1] > 1.5 * e[0] {
            exp_bad += 1;
        }
    }
    let ok = drift < ENERGY_TOL && over == 0 && exp_bad == 0;
    within_time(
        Outcome::new(
            ok,
            format!("max energy drift {drift:.1e}; {over} first-moment excursions; {exp_bad} exponential-moment failures"),
        ),
        start,
        f64::INFINITY,
    )
}

/// Distance between the solutions at successive cutoffs, on common seeds.
/// Both systems of each coupled pair contribute.
fn truncation(runs: &Runs) -> Outcome {
    let start = Instant::now();
    let levels = runs.truncation();
    let between = |a: &RunReport, b: &RunReport, k: usize| -> f64 {
        let d: Vec<f64> = a
            .replicas
            .iter()
            .zip(&b.replicas)
            .flat_map(|(x, y)| {
                [(&x.snapshots[k], &y.snapshots[k]), (&x.snapshots_tilde[k], &y.snapshots_tilde[k])]
                    .map(|(p, q)| w1_exact(&p.velocities, &q.velocities).unwrap().cost)
            })
            .collect();
        Stat::of(&d).mean
    };
    // The scalar reading: change of the pair distance itself between levels.
    let scalar = |a: &RunReport, b: &RunReport, k: usize| -> f64 {
        let d: Vec<f64> =
            a.replicas.iter().zip(&b.replicas).map(|(x, y)| (d1_series(x)[k] - d1_series(y)[k]).abs()).collect();
        Stat::of(&d).mean
    };
    let (mut ratios, mut scalar_ratios) = (Vec::new(), Vec::new());
    for k in 0..CHECKPOINTS {
        ratios.push(between(&levels[0], &levels[1], k) / between(&levels[1], &levels[2], k));
        scalar_ratios.push(scalar(&levels[0], &levels[1], k + 1) / scalar(&levels[1], &levels[2], k + 1));
    }
    let ok = ratios.iter().all(|r| *r >= 1.5);
    let show = |v: &[f64]| v.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>().join(", ");
    within_time(
        Outcome::new(
            ok,
            format!(
                "d1 between levels shrinks by [{}], need >= 1.5; pair-distance changes shrink by [{}]",
                show(&ratios),
                show(&scalar_ratios)
            ),
        ),
        start,
        900.0,
    )
}

fn rk4(f: impl Fn(f64) -> f64, y0: f64, t: f64, h: f64) -> f64 {
    let steps = (t / h).round() as usize;
    let h = t / steps as f64;
    let mut y = y0;
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

fn bounds() -> Outcome {
    let mut notes = Vec::new();
    let a0 = (-E).exp();
    let ode = rk4(log_lipschitz_rate, a0, LN_2, 1e-5);
    let numeric = yudovitch_bound(a0, log_lipschitz_rate, &[LN_2]).unwrap().values[0];
    let p1 = HardStabilityParams::new(1.0, 1.0, 0.1).unwrap();
    let closed = hard_bound(&p1, a0, &[LN_2]).unwrap().values[0];
    let ref_ok = (ode - 0.4235).abs() < 5e-5 && (numeric - ode).abs() < 1e-6 && (closed - ode).abs() < 1e-6;
    notes.push(format!("reference {closed:.4}"));

    let times: Vec<f64> = (0..=12).map(|k| 0.25 * k as f64).collect();
    let mut worst: f64 = 0.0;
    let mut grid_ok = true;
    for &a in &[1e-6, 1e-3, 0.05, 0.3, 0.7, 1.0] {
        for &k in &[0.1, 0.5, 1.0, 2.5, 5.0] {
            let p = HardStabilityParams::new(k, 1.0, 0.1).unwrap();
            let c = hard_bound(&p, a, &times).unwrap();
            let n = hard_bound_numeric(&p, a, &times).unwrap();
            for (x, y) in c.values.iter().zip(&n.values) {
                if *x > 1e290 || y.is_infinite() {
                    grid_ok &= *x > 1e290 && *y > 1e290;
                    continue;
                }
                let rel = (x - y).abs() / x.max(1.0);
                worst = worst.max(rel);
            }
        }
    }
    grid_ok &= worst <= 1e-6;
    notes.push(format!("grid error {worst:.1e}"));

    let q = |s: f64| moment_threshold(&PowerLawSpec::new(s).unwrap());
    let three_sf = |x: f64, target: f64| {
        let scale = 10f64.powi(x.abs().log10().floor() as i32 - 2);
        (x / scale).round() * scale == target
    };
    let q_s0 = q(2.0 * 5f64.sqrt() - 1.0);
    let q_301 = q(3.01);
    let s0_ok = (q_s0 - 2.0).abs() < 1e-12 && three_sf(q_s0, 2.0);
    let s301_ok = three_sf(q_301, 200.0);
    notes.push(format!("q0(s0) = {q_s0:.12}, q0(3.01) = {q_301:.2}"));
    let t_ok = tstar(1.0, 1.0) == FRAC_PI_4;
    Outcome::new(ref_ok && grid_ok && s0_ok && s301_ok && t_ok, notes.join("; "))
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let t = maxwell_horizon();
    let text = format!(
        "mode=verify\ns=5\nN=300\nT={t}\ncheckpoints={}\nseeds={}\ninit_tilde=dilate delta=0.1",
        grid(t),
        seeds(1..9)
    );
    let cfg = parse_config(&text).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut listings = Vec::new();
    for (dir, workers) in dirs.iter().zip([1, 8, 8]) {
        let report = run_experiment(&cfg, workers).unwrap();
        let files = emit(&report, Format::Csv, dir.path()).unwrap();
        let listing: Vec<(String, Vec<u8>)> = files
            .iter()
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
            .collect();
        listings.push(listing);
    }
    let same = listings.windows(2).all(|w| w[0] == w[1]);
    let bytes: usize = listings[0].iter().map(|f| f.1.len()).sum();
    within_time(
        Outcome::new(same, format!("{} CSV files, {bytes} bytes, identical on 1 and 8 workers", listings[0].len())),
        start,
        f64::INFINITY,
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let runs = Runs::default();
    let criteria: [(u32, &str, &dyn Fn() -> Outcome); 10] = [
        (1, "geometry", &geometry),
        (2, "transport", &transport),
        (3, "angular sampling", &angular_sampling),
        (4, "Maxwell coupling", &|| maxwell_coupling(&runs)),
        (5, "hard-potential stability", &|| hard_shape(&runs)),
        (6, "soft-potential stability", &|| soft_shape(&runs)),
        (7, "conservation and moments", &|| conservation(&runs)),
        (8, "truncation consistency", &|| truncation(&runs)),
        (9, "bounds", &bounds),
        (10, "determinism", &determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let o = check();
        let known = KNOWN_UNATTAINABLE.iter().find(|k| k.0 == id);
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        let note = match (known, o.passed) {
            (Some((_, why)), false) => format!(" [expected: {why}]"),
            (Some(_), true) => " [listed as unattainable but passed]".into(),
            _ => String::new(),
        };
        println!("criterion {id:>2} {name}: {verdict} ({}){note}", o.detail);
        if o.passed == known.is_some() {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
