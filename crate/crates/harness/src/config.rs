//! Line-oriented `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Every key may appear once;
//! `d` and `dimension` are the same key. Values are checked against the
//! model preconditions as they are read, so a bad value is reported before
//! any missing one.

use crate::error::{HarnessError, Result};
use kinetic_core::kernel::{
    AngularMeasure, AngularTable, CollisionKernel, PowerLawSpec, DEFAULT_CAP_FACTOR, DEFAULT_EPS_THETA,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

/// Couple and verify runs refuse ensembles above this size.
pub const MAX_COUPLED_N: usize = 5000;
/// Couple and verify runs warn above this size.
pub const WARN_COUPLED_N: usize = 2000;

const KEYS: &[&str] = &[
    "mode",
    "s",
    "gamma",
    "nu",
    "strength",
    "C",
    "phi_lower",
    "phi_cap",
    "eps_theta",
    "eps_proposal",
    "angular",
    "angular_table",
    "d",
    "N",
    "T",
    "checkpoints",
    "seeds",
    "replicas",
    "calibration_seeds",
    "init",
    "init_tilde",
    "repair",
    "rhs_alpha",
    "points_a",
    "points_b",
    "k_eps",
    "c_exp",
    "k_p",
    "lp_sum",
    "lp_integrals",
    "p",
    "pass_fraction",
    "exp_moment_eps",
    "exp_moment_s",
    "snapshots",
    "bound",
    "d1_0",
    "m1_0",
    "lp_norm",
    "lp_growth",
    "lp_const",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Simulate,
    Couple,
    Verify,
    W1,
    Bounds,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Couple => "couple",
            Mode::Verify => "verify",
            Mode::W1 => "w1",
            Mode::Bounds => "bounds",
        }
    }

    pub fn from_name(s: &str) -> Option<Mode> {
        Some(match s {
            "simulate" => Mode::Simulate,
            "couple" => Mode::Couple,
            "verify" => Mode::Verify,
            "w1" => Mode::W1,
            "bounds" => Mode::Bounds,
            _ => return None,
        })
    }

    fn is_coupled(self) -> bool {
        matches!(self, Mode::Couple | Mode::Verify)
    }

    fn evolves(self) -> bool {
        matches!(self, Mode::Simulate | Mode::Couple | Mode::Verify)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AngularChoice {
    PowerLaw,
    MaxwellUniform,
    /// Two whitespace-separated columns `theta beta`, ending at `theta = pi`.
    Table(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelConfig {
    pub gamma: f64,
    pub nu: Option<f64>,
    pub strength: f64,
    pub c: f64,
    pub phi_lower: Option<f64>,
    pub phi_cap: Option<f64>,
    pub eps_theta: f64,
    pub eps_proposal: Option<f64>,
    pub angular: AngularChoice,
}

impl KernelConfig {
    pub fn build(&self, dim: usize) -> Result<CollisionKernel> {
        let mut ang = match &self.angular {
            AngularChoice::PowerLaw => {
                let nu = self.nu.ok_or_else(|| HarnessError::invalid("power-law angular density needs nu or s"))?;
                AngularMeasure::power_law(nu, self.strength, self.eps_theta)?
            }
            AngularChoice::MaxwellUniform => AngularMeasure::maxwell_uniform(self.strength, self.eps_theta)?,
            AngularChoice::Table(path) => {
                let rows = crate::io::read_columns(path, 2)?;
                let (theta, beta) = rows.into_iter().map(|r| (r[0], r[1])).unzip();
                AngularMeasure::user_table(AngularTable::new(theta, beta)?, self.eps_theta)?
            }
        };
        if let Some(p) = self.eps_proposal {
            ang = ang.with_proposal_eps(p)?;
        }
        let mut k = CollisionKernel::new(self.gamma, self.c, ang, dim)?;
        if let Some(c) = self.phi_lower {
            k = k.with_lower(c)?;
        }
        if let Some(cap) = self.phi_cap {
            k = k.with_cap(cap)?;
        }
        Ok(k)
    }

    /// Cap in force: explicit, or the default multiple of `C`.
    pub fn cap(&self) -> f64 {
        self.phi_cap.unwrap_or(DEFAULT_CAP_FACTOR * self.c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitConfig {
    Gaussian { mean: Vec<f64>, variance: f64 },
    TwoGaussians { mean_a: Vec<f64>, mean_b: Vec<f64>, variance: f64, weight: f64 },
    UniformBall { radius: f64 },
    File(PathBuf),
}

/// How the second system of a coupled run is started.
#[derive(Clone, Debug, PartialEq)]
pub enum TildeConfig {
    Same,
    /// `v (1 + delta/m1)`: the W1 distance to the original is exactly `delta`.
    Dilate(f64),
    /// `v + delta e_1`.
    Shift(f64),
    /// Independent sample from its own law.
    Independent(InitConfig),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    Hard,
    Soft,
    FirstMoment,
    Maxwell,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundConfig {
    pub kind: BoundKind,
    pub d1_0: Option<f64>,
    pub m1_0: Option<f64>,
    pub lp_norm: Option<f64>,
    pub lp_growth: f64,
    pub lp_const: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub kernel: KernelConfig,
    pub n: usize,
    pub dim: usize,
    pub t_end: f64,
    pub checkpoints: Vec<f64>,
    pub seeds: Vec<u64>,
    pub calibration_seeds: Vec<u64>,
    pub init: InitConfig,
    pub init_tilde: TildeConfig,
    pub repair: bool,
    pub rhs_alpha: bool,
    pub points_a: Option<PathBuf>,
    pub points_b: Option<PathBuf>,
    pub k_eps: Option<f64>,
    pub c_exp: f64,
    pub k_p: Option<f64>,
    pub lp_sum: f64,
    pub lp_integrals: [f64; 2],
    pub p: f64,
    pub pass_fraction: f64,
    pub exp_moment_eps: f64,
    pub exp_moment_s: f64,
    pub snapshots: bool,
    pub bound: Option<BoundConfig>,
    /// Non-fatal remarks found while validating.
    pub warnings: Vec<String>,
    echo: BTreeMap<String, String>,
}

impl ExperimentConfig {
    /// The accepted keys and their values as written, sorted by key.
    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.echo
    }

    /// Add `offset` to every seed, keeping the echo in step.
    pub fn apply_seed_offset(&mut self, offset: u64) {
        if offset == 0 {
            return;
        }
        for s in self.seeds.iter_mut().chain(self.calibration_seeds.iter_mut()) {
            *s = s.wrapping_add(offset);
        }
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        self.echo.insert("seeds".into(), join(&self.seeds));
        self.echo.remove("replicas");
        if !self.calibration_seeds.is_empty() {
            self.echo.insert("calibration_seeds".into(), join(&self.calibration_seeds));
        }
    }

    /// Resolve relative file paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.points_a, &mut self.points_b].into_iter().flatten() {
            fix(p);
        }
        if let AngularChoice::Table(p) = &mut self.kernel.angular {
            fix(p);
        }
        for init in [Some(&mut self.init), if let TildeConfig::Independent(i) = &mut self.init_tilde { Some(i) } else { None }]
            .into_iter()
            .flatten()
        {
            if let InitConfig::File(p) = init {
                fix(p);
            }
        }
    }

    /// Times at which runs record state: the start and every checkpoint.
    pub fn record_times(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.checkpoints.iter().copied().filter(|&t| t > 0.0)).collect()
    }

    /// Whether a recorded time is one the user asked for.
    pub fn is_checkpoint(&self, t: f64) -> bool {
        self.checkpoints.contains(&t)
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_with_mode(text, None)
}

/// Parse with the mode fixed by the caller. A `mode` key in the text must agree.
pub fn parse_config_for(text: &str, mode: Mode) -> Result<ExperimentConfig> {
    parse_with_mode(text, Some(mode))
}

/// Read a config file, resolving relative paths against its directory.
pub fn load_config(path: &Path, mode: Option<Mode>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut cfg = parse_with_mode(&text, mode)?;
    if let Some(dir) = path.parent() {
        cfg.resolve_paths(dir);
    }
    Ok(cfg)
}

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<(&str, usize)> {
        self.map.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<Option<(T, usize)>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(|x| Some((x, line)))
                .map_err(|_| HarnessError::parse(line, format!("{key}: cannot read '{v}' as a number"))),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        match self.num::<f64>(key)? {
            Some((x, line)) if !x.is_finite() => Err(HarnessError::parse(line, format!("{key} must be finite"))),
            other => Ok(other.map(|p| p.0)),
        }
    }

    fn f64_where(&self, key: &str, ok: impl Fn(f64) -> bool, what: &str) -> Result<Option<f64>> {
        match self.f64(key)? {
            Some(x) if !ok(x) => Err(HarnessError::invalid(format!("{key} = {x}: {what}"))),
            other => Ok(other),
        }
    }

    fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        let Some((v, line)) = self.raw(key) else { return Ok(None) };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|x| {
                x.trim()
                    .parse::<T>()
                    .map_err(|_| HarnessError::parse(line, format!("{key}: cannot read '{}'", x.trim())))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn flag(&self, key: &str) -> Result<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some(("true" | "yes" | "1", _)) => Ok(Some(true)),
            Some(("false" | "no" | "0", _)) => Ok(Some(false)),
            Some((v, line)) => Err(HarnessError::parse(line, format!("{key}: expected true or false, got '{v}'"))),
        }
    }
}

fn tokenize(text: &str) -> Result<Entries> {
    let mut map = BTreeMap::new();
    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| HarnessError::parse(line, format!("expected key = value, got '{body}'")))?;
        let key = match key.trim() {
            "dimension" => "d",
            other => other,
        };
        if !KEYS.contains(&key) {
            return Err(HarnessError::parse(line, format!("unknown key '{key}'")));
        }
        if let Some((_, first)) = map.get(key) {
            return Err(HarnessError::parse(line, format!("duplicate key '{key}' (first set on line {first})")));
        }
        map.insert(key.to_string(), (value.trim().to_string(), line));
    }
    Ok(Entries { map })
}

/// `name k=v k=v ...`
fn spec_parts(text: &str, line: usize, key: &str) -> Result<(String, BTreeMap<String, String>)> {
    let mut it = text.split_whitespace();
    let name = it.next().ok_or_else(|| HarnessError::parse(line, format!("{key}: empty value")))?;
    let mut params = BTreeMap::new();
    for tok in it {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| HarnessError::parse(line, format!("{key}: expected name=value, got '{tok}'")))?;
        if params.insert(k.to_string(), v.to_string()).is_some() {
            return Err(HarnessError::parse(line, format!("{key}: parameter '{k}' given twice")));
        }
    }
    Ok((name.to_string(), params))
}

struct Params<'a> {
    key: &'a str,
    line: usize,
    map: BTreeMap<String, String>,
}

impl Params<'_> {
    fn take_f64(&mut self, name: &str, default: Option<f64>) -> Result<f64> {
        match self.map.remove(name) {
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| HarnessError::parse(self.line, format!("{}: bad value for {name}: '{v}'", self.key))),
            None => default.ok_or_else(|| HarnessError::parse(self.line, format!("{}: missing parameter {name}", self.key))),
        }
    }

    fn take_vec(&mut self, name: &str) -> Result<Vec<f64>> {
        match self.map.remove(name) {
            None => Ok(vec![0.0]),
            Some(v) => v
                .split(',')
                .map(|x| x.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| HarnessError::parse(self.line, format!("{}: bad value for {name}: '{v}'", self.key))),
        }
    }

    fn done(self) -> Result<()> {
        match self.map.keys().next() {
            Some(k) => Err(HarnessError::parse(self.line, format!("{}: unknown parameter '{k}'", self.key))),
            None => Ok(()),
        }
    }
}

fn parse_init(name: &str, mut p: Params<'_>) -> Result<InitConfig> {
    let init = match name {
        "gaussian" => {
            let mean = p.take_vec("mean")?;
            let variance = p.take_f64("variance", Some(1.0))?;
            if variance < 0.0 {
                return Err(HarnessError::invalid(format!("{}: variance must be nonnegative", p.key)));
            }
            InitConfig::Gaussian { mean, variance }
        }
        "two_gaussians" => {
            let mean_a = p.take_vec("mean_a")?;
            let mean_b = p.take_vec("mean_b")?;
            let variance = p.take_f64("variance", Some(1.0))?;
            let weight = p.take_f64("weight", Some(0.5))?;
            if variance < 0.0 || !(0.0..=1.0).contains(&weight) {
                return Err(HarnessError::invalid(format!(
                    "{}: variance must be nonnegative and weight in [0, 1]",
                    p.key
                )));
            }
            InitConfig::TwoGaussians { mean_a, mean_b, variance, weight }
        }
        "uniform_ball" => {
            let radius = p.take_f64("radius", Some(1.0))?;
            if radius < 0.0 {
                return Err(HarnessError::invalid(format!("{}: radius must be nonnegative", p.key)));
            }
            InitConfig::UniformBall { radius }
        }
        "file" => {
            let path = p
                .map
                .remove("path")
                .ok_or_else(|| HarnessError::parse(p.line, format!("{}: file needs path=", p.key)))?;
            InitConfig::File(PathBuf::from(path))
        }
        other => return Err(HarnessError::parse(p.line, format!("{}: unknown initial law '{other}'", p.key))),
    };
    p.done()?;
    Ok(init)
}

fn parse_tilde(text: &str, line: usize) -> Result<TildeConfig> {
    let (name, map) = spec_parts(text, line, "init_tilde")?;
    let mut p = Params { key: "init_tilde", line, map };
    let t = match name.as_str() {
        "same" => TildeConfig::Same,
        "dilate" | "shift" => {
            let delta = p.take_f64("delta", None)?;
            if delta < 0.0 {
                return Err(HarnessError::invalid("init_tilde: delta must be nonnegative"));
            }
            if name == "dilate" {
                TildeConfig::Dilate(delta)
            } else {
                TildeConfig::Shift(delta)
            }
        }
        _ => return Ok(TildeConfig::Independent(parse_init(&name, p)?)),
    };
    p.done()?;
    Ok(t)
}

fn parse_with_mode(text: &str, forced: Option<Mode>) -> Result<ExperimentConfig> {
    let e = tokenize(text)?;
    let mut warnings = Vec::new();

    // Per-key checks first.
    let s = e.f64_where("s", |s| s > 3.0, "inverse-power exponent must exceed 3")?;
    let gamma = e.f64_where("gamma", |g| g > -3.0 && g <= 1.0, "gamma must lie in (-3, 1]")?;
    let nu = e.f64_where("nu", |v| v > 0.0 && v < 1.0, "nu must lie in (0, 1) (moderate angular singularity)")?;
    let positive = |x: f64| x > 0.0;
    let strength = e.f64_where("strength", positive, "must be positive")?.unwrap_or(1.0);
    let c = e.f64_where("C", positive, "must be positive")?.unwrap_or(1.0);
    let phi_lower = e.f64_where("phi_lower", positive, "must be positive")?;
    let phi_cap = e.f64_where("phi_cap", positive, "must be positive")?;
    let eps_theta = e
        .f64_where("eps_theta", |x| x > 0.0 && x < std::f64::consts::PI, "must lie in (0, pi)")?
        .unwrap_or(DEFAULT_EPS_THETA);
    let eps_proposal = e.f64_where("eps_proposal", |x| x > 0.0 && x <= eps_theta, "must lie in (0, eps_theta]")?;
    let dim = match e.num::<usize>("d")? {
        Some((d, _)) if d < 2 => return Err(HarnessError::invalid("d must be at least 2")),
        Some((d, _)) => d,
        None => 3,
    };
    let n = e.num::<usize>("N")?.map(|p| p.0);
    let t_end = e.f64_where("T", |t| t > 0.0, "must be positive")?;
    let checkpoints: Vec<f64> = e.list("checkpoints")?.unwrap_or_default();
    if checkpoints.iter().any(|t| !t.is_finite() || *t < 0.0) || checkpoints.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::invalid("checkpoints must be nonnegative and strictly increasing"));
    }
    let pass_fraction = e
        .f64_where("pass_fraction", |x| x > 0.0 && x <= 1.0, "must lie in (0, 1]")?
        .unwrap_or(0.9);
    let exp_moment_eps = e.f64_where("exp_moment_eps", positive, "must be positive")?.unwrap_or(0.05);
    let exp_moment_s = e.f64_where("exp_moment_s", |x| x > 0.0 && x < 2.0, "must lie in (0, 2)")?;
    let k_eps = e.f64_where("k_eps", |x| x >= 0.0, "must be nonnegative")?;
    let c_exp = e.f64_where("c_exp", positive, "must be positive")?.unwrap_or(1.0);
    let k_p = e.f64_where("k_p", |x| x >= 0.0, "must be nonnegative")?;
    let lp_sum = e.f64_where("lp_sum", |x| x >= 0.0, "must be nonnegative")?.unwrap_or(0.0);
    let lp_integrals = match e.list::<f64>("lp_integrals")? {
        None => [0.0, 0.0],
        Some(v) if v.len() == 2 && v.iter().all(|x| *x >= 0.0 && x.is_finite()) => [v[0], v[1]],
        Some(_) => return Err(HarnessError::invalid("lp_integrals must be two nonnegative numbers")),
    };
    let p = e.f64_where("p", positive, "must be positive")?.unwrap_or(2.0);

    let mode_key = match e.raw("mode") {
        None => None,
        Some((v, line)) => {
            Some(Mode::from_name(v).ok_or_else(|| HarnessError::parse(line, format!("unknown mode '{v}'")))?)
        }
    };
    let mode = match (forced, mode_key) {
        (Some(f), Some(m)) if f != m => {
            return Err(HarnessError::invalid(format!(
                "config declares mode {} but {} was requested",
                m.name(),
                f.name()
            )))
        }
        (Some(m), _) | (None, Some(m)) => m,
        (None, None) => return Err(HarnessError::invalid("mode is required")),
    };

    // Kernel.
    let (gamma, nu) = match s {
        Some(s) => {
            if gamma.is_some() || nu.is_some() {
                return Err(HarnessError::invalid("give either s or gamma/nu, not both"));
            }
            if dim != 3 {
                return Err(HarnessError::invalid("s describes an interaction in dimension 3"));
            }
            let spec = PowerLawSpec::new(s)?;
            (Some(spec.gamma()), Some(spec.nu()))
        }
        None => (gamma, nu),
    };
    let angular = match e.raw("angular") {
        None | Some(("power_law", _)) => AngularChoice::PowerLaw,
        Some(("maxwell_uniform", _)) => AngularChoice::MaxwellUniform,
        Some(("table", line)) => AngularChoice::Table(PathBuf::from(
            e.raw("angular_table")
                .ok_or_else(|| HarnessError::parse(line, "angular = table needs angular_table"))?
                .0,
        )),
        Some((v, line)) => return Err(HarnessError::parse(line, format!("unknown angular density '{v}'"))),
    };
    let kernel = KernelConfig {
        gamma: gamma.unwrap_or(0.0),
        nu,
        strength,
        c,
        phi_lower,
        phi_cap,
        eps_theta,
        eps_proposal,
        angular,
    };
    if mode.evolves() {
        if gamma.is_none() {
            return Err(HarnessError::invalid("gamma (or s) is required"));
        }
        if kernel.angular == AngularChoice::PowerLaw && kernel.nu.is_none() {
            return Err(HarnessError::invalid("power-law angular density needs nu (or s)"));
        }
    }
    // Table files are only read at run time.
    let complete = match kernel.angular {
        AngularChoice::PowerLaw => kernel.nu.is_some(),
        AngularChoice::MaxwellUniform => true,
        AngularChoice::Table(_) => false,
    };
    if gamma.is_some() && complete {
        kernel.build(dim).map_err(|err| HarnessError::invalid(format!("kernel: {err}")))?;
    }

    // Seeds.
    let seed_list = e.list::<u64>("seeds")?;
    let replicas = e.num::<usize>("replicas")?.map(|p| p.0);
    let seeds = match (seed_list, replicas) {
        (Some(s), Some(r)) if s.len() != r => {
            return Err(HarnessError::invalid(format!("replicas = {r} but {} seeds listed", s.len())))
        }
        (Some(s), _) => s,
        (None, Some(r)) => (0..r as u64).collect(),
        (None, None) => vec![0],
    };
    if seeds.is_empty() {
        return Err(HarnessError::invalid("at least one seed is required"));
    }
    let calibration_seeds: Vec<u64> = e.list("calibration_seeds")?.unwrap_or_default();
    let mut all: Vec<u64> = seeds.iter().chain(&calibration_seeds).copied().collect();
    all.sort_unstable();
    if all.windows(2).any(|w| w[0] == w[1]) {
        return Err(HarnessError::invalid("seeds and calibration seeds must all be distinct"));
    }

    // Initial laws.
    let init = match e.raw("init") {
        None => InitConfig::Gaussian { mean: vec![0.0], variance: 1.0 },
        Some((v, line)) => {
            let (name, map) = spec_parts(v, line, "init")?;
            parse_init(&name, Params { key: "init", line, map })?
        }
    };
    let init_tilde = match e.raw("init_tilde") {
        None => TildeConfig::Same,
        Some((v, line)) => parse_tilde(v, line)?,
    };

    let points_a = e.raw("points_a").map(|p| PathBuf::from(p.0));
    let points_b = e.raw("points_b").map(|p| PathBuf::from(p.0));

    let bound = match e.raw("bound") {
        None => None,
        Some((v, line)) => {
            let kind = match v {
                "hard" => BoundKind::Hard,
                "soft" => BoundKind::Soft,
                "first_moment" => BoundKind::FirstMoment,
                "maxwell" => BoundKind::Maxwell,
                other => return Err(HarnessError::parse(line, format!("unknown bound '{other}'"))),
            };
            Some(BoundConfig {
                kind,
                d1_0: e.f64_where("d1_0", |x| x >= 0.0, "must be nonnegative")?,
                m1_0: e.f64_where("m1_0", |x| x >= 0.0, "must be nonnegative")?,
                lp_norm: e.f64_where("lp_norm", |x| x >= 0.0, "must be nonnegative")?,
                lp_growth: e.f64_where("lp_growth", positive, "must be positive")?.unwrap_or(1.0),
                lp_const: e.f64_where("lp_const", |x| x >= 0.0, "must be nonnegative")?.unwrap_or(1.0),
            })
        }
    };

    // Mode requirements.
    let n = match mode {
        Mode::Bounds => n.unwrap_or(0),
        Mode::W1 => {
            if points_a.is_none() || points_b.is_none() {
                return Err(HarnessError::invalid("w1 mode needs points_a and points_b"));
            }
            n.unwrap_or(0)
        }
        _ => {
            let n = n.ok_or_else(|| HarnessError::invalid("N is required"))?;
            if n < 2 {
                return Err(HarnessError::invalid("N must be at least 2"));
            }
            n
        }
    };
    if mode.is_coupled() {
        if n > MAX_COUPLED_N {
            return Err(HarnessError::invalid(format!(
                "N = {n} exceeds the cap of {MAX_COUPLED_N} for coupled runs"
            )));
        }
        if n > WARN_COUPLED_N {
            warnings.push(format!("N = {n} above {WARN_COUPLED_N}: checkpoint transport solves will be slow"));
        }
    }
    let t_end = if mode.evolves() {
        let t = t_end.ok_or_else(|| HarnessError::invalid("T is required"))?;
        if checkpoints.last().is_some_and(|&c| c > t) {
            return Err(HarnessError::invalid("checkpoints must not exceed T"));
        }
        t
    } else {
        t_end.unwrap_or(0.0)
    };
    if mode == Mode::Bounds {
        let b = bound.as_ref().ok_or_else(|| HarnessError::invalid("bounds mode needs bound"))?;
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(HarnessError::invalid(format!("bound needs {what}")))
            }
        };
        match b.kind {
            BoundKind::Hard => {
                need(b.d1_0.is_some(), "d1_0")?;
                need(k_eps.is_some(), "k_eps")?;
            }
            BoundKind::Soft => {
                need(b.d1_0.is_some(), "d1_0")?;
                need(k_p.is_some(), "k_p")?;
                need(gamma.is_some(), "gamma (or s)")?;
            }
            BoundKind::FirstMoment => {
                need(b.m1_0.is_some(), "m1_0")?;
                need(gamma.is_some(), "gamma (or s)")?;
            }
            BoundKind::Maxwell => {
                need(b.d1_0.is_some(), "d1_0")?;
                need(gamma.is_some(), "gamma (or s)")?;
            }
        }
    }
    let repair = e.flag("repair")?.unwrap_or(true);
    let rhs_alpha = e.flag("rhs_alpha")?.unwrap_or(false);
    let snapshots = e.flag("snapshots")?.unwrap_or(false);
    let exp_moment_s = exp_moment_s.unwrap_or(if kernel.gamma > 0.0 { kernel.gamma } else { 1.0 });

    let echo = e.map.iter().map(|(k, (v, _))| (k.clone(), v.clone())).collect();
    Ok(ExperimentConfig {
        mode,
        kernel,
        n,
        dim,
        t_end,
        checkpoints,
        seeds,
        calibration_seeds,
        init,
        init_tilde,
        repair,
        rhs_alpha,
        points_a,
        points_b,
        k_eps,
        c_exp,
        k_p,
        lp_sum,
        lp_integrals,
        p,
        pass_fraction,
        exp_moment_eps,
        exp_moment_s,
        snapshots,
        bound,
        warnings,
        echo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_w1_config() {
        let cfg = parse_config("mode=w1\nN=4\nd=2\npoints_a=a.txt\npoints_b=b.txt").unwrap();
        assert_eq!(cfg.mode, Mode::W1);
        assert_eq!((cfg.n, cfg.dim), (4, 2));
    }

    #[test]
    fn nu_out_of_range_is_a_validation_error() {
        assert!(matches!(parse_config("nu=1.5"), Err(HarnessError::Validation(_))));
    }

    #[test]
    fn duplicates_and_unknown_keys_report_lines() {
        match parse_config("mode=w1\n\nN=4\nN=5") {
            Err(HarnessError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_config("d=3\ndimension=3"), Err(HarnessError::Parse { line: 2, .. })));
        assert!(matches!(parse_config("mode=w1\nfoo=1"), Err(HarnessError::Parse { line: 2, .. })));
        assert!(matches!(parse_config("N=abc"), Err(HarnessError::Parse { line: 1, .. })));
    }

    #[test]
    fn power_law_constructor_fills_exponents() {
        let cfg = parse_config("mode=simulate\ns=7\nN=10\nT=0.1 # comment\ncheckpoints=0.05,0.1").unwrap();
        assert!((cfg.kernel.gamma - 1.0 / 3.0).abs() < 1e-15);
        assert!((cfg.kernel.nu.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cfg.checkpoints, vec![0.05, 0.1]);
        assert_eq!(cfg.seeds, vec![0]);
        assert!(matches!(
            parse_config("mode=simulate\ns=7\nnu=0.5\nN=10\nT=1"),
            Err(HarnessError::Validation(_))
        ));
    }

    #[test]
    fn coupled_size_cap() {
        let base = "mode=couple\ngamma=0\nnu=0.5\nT=1\n";
        assert!(parse_config(&format!("{base}N=5001")).is_err());
        let cfg = parse_config(&format!("{base}N=2500")).unwrap();
        assert_eq!(cfg.warnings.len(), 1);
        assert!(parse_config(&format!("{base}N=2000")).unwrap().warnings.is_empty());
    }

    #[test]
    fn seeds_must_be_distinct() {
        let base = "mode=simulate\ngamma=0\nnu=0.5\nT=1\nN=10\n";
        assert!(parse_config(&format!("{base}seeds=1,2,1")).is_err());
        assert!(parse_config(&format!("{base}seeds=1,2\ncalibration_seeds=2")).is_err());
        assert_eq!(parse_config(&format!("{base}replicas=3")).unwrap().seeds, vec![0, 1, 2]);
        assert!(parse_config(&format!("{base}replicas=3\nseeds=4,5")).is_err());
    }

    #[test]
    fn initial_laws() {
        let base = "mode=couple\ngamma=0\nnu=0.5\nT=1\nN=10\n";
        let cfg = parse_config(&format!(
            "{base}init=two_gaussians mean_a=-1,0,0 mean_b=1 variance=0.5\ninit_tilde=dilate delta=0.01"
        ))
        .unwrap();
        assert_eq!(
            cfg.init,
            InitConfig::TwoGaussians { mean_a: vec![-1.0, 0.0, 0.0], mean_b: vec![1.0], variance: 0.5, weight: 0.5 }
        );
        assert_eq!(cfg.init_tilde, TildeConfig::Dilate(0.01));
        let cfg = parse_config(&format!("{base}init_tilde=uniform_ball radius=2")).unwrap();
        assert_eq!(cfg.init_tilde, TildeConfig::Independent(InitConfig::UniformBall { radius: 2.0 }));
        assert!(parse_config(&format!("{base}init=gaussian sigma=2")).is_err());
        assert!(parse_config(&format!("{base}init=cauchy")).is_err());
    }

    #[test]
    fn mode_conflicts_and_injection() {
        let text = "gamma=0\nnu=0.5\nT=1\nN=10";
        assert_eq!(parse_config_for(text, Mode::Couple).unwrap().mode, Mode::Couple);
        assert!(parse_config_for(&format!("mode=simulate\n{text}"), Mode::Couple).is_err());
        assert!(parse_config(text).is_err());
    }

    #[test]
    fn checkpoints_are_checked() {
        let base = "mode=simulate\ngamma=0\nnu=0.5\nT=1\nN=10\n";
        assert!(parse_config(&format!("{base}checkpoints=0.5,0.2")).is_err());
        assert!(parse_config(&format!("{base}checkpoints=0.5,2")).is_err());
        assert!(parse_config(&format!("{base}checkpoints=")).unwrap().checkpoints.is_empty());
    }

    #[test]
    fn seed_offset_updates_echo() {
        let mut cfg = parse_config("mode=simulate\ngamma=0\nnu=0.5\nT=1\nN=10\nseeds=1,2").unwrap();
        cfg.apply_seed_offset(10);
        assert_eq!(cfg.seeds, vec![11, 12]);
        assert_eq!(cfg.echo()["seeds"], "11,12");
    }
}
