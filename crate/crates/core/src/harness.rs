//! Experiment orchestration behind the `nekh` binary: config parsing, the
//! `zones`, `sweep`, `detect` and `nf-decay` commands, run records and
//! summaries.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::{self, DetectorError, DoubleResonanceWitness, FrequencyCurve};
use crate::dynamics::{self, DynamicsError, IntegratorConfig, State, Trajectory};
use crate::lattice::{self, IntVector, LatticeError};
use crate::models::{HamiltonianSystem, ModelError, ModelSpec};
use crate::normalform::{self, FourierPolynomial, NormalFormError, DEFAULT_DEGREE_CAP};
use crate::resonance::{ResonanceError, ZoneClassifier, ZoneParameters};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Resonance(#[from] ResonanceError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    NormalForm(#[from] NormalFormError),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_INSUFFICIENT_DRIFT: i32 = 4;

impl HarnessError {
    /// Process exit code: 2 for configuration or input data, 3 for numerical
    /// failures, 4 when the detector finds too little drift.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_)
            | HarnessError::Io { .. }
            | HarnessError::Model(_)
            | HarnessError::Resonance(_)
            | HarnessError::Lattice(_) => EXIT_CONFIG,
            HarnessError::Dynamics(e) => match e {
                DynamicsError::Config(_)
                | DynamicsError::SchemeMismatch
                | DynamicsError::Dimension { .. }
                | DynamicsError::Parse { .. }
                | DynamicsError::Io(_) => EXIT_CONFIG,
                DynamicsError::NonConvergence { .. } | DynamicsError::NonFinite(_) => EXIT_NUMERICAL,
            },
            HarnessError::Detector(e) => match e {
                DetectorError::InsufficientDrift { .. } => EXIT_INSUFFICIENT_DRIFT,
                DetectorError::InvalidCurve(_) | DetectorError::ZeroFrequency(_) => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            },
            HarnessError::NormalForm(e) => match e {
                NormalFormError::Dimension { .. } | NormalFormError::Order(_) => EXIT_CONFIG,
                _ => EXIT_NUMERICAL,
            },
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSpec,
    #[serde(default)]
    pub zone: ZoneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect: Option<DetectConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal_form: Option<NormalFormConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneConfig {
    /// `ε` for single-ε commands (`zones`, `detect`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_s0")]
    pub s0: f64,
    /// Truncation of `K(ε)`; defaults to `min(K, 20)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_cap: Option<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_beta() -> f64 {
    0.5
}

fn default_s0() -> f64 {
    1.0
}

fn default_delta() -> f64 {
    0.1
}

impl Default for ZoneConfig {
    fn default() -> Self {
        ZoneConfig {
            epsilon: None,
            beta: default_beta(),
            s0: default_s0(),
            k_cap: None,
            delta: default_delta(),
        }
    }
}

impl ZoneConfig {
    pub fn parameters(&self, epsilon: f64) -> Result<ZoneParameters> {
        Ok(ZoneParameters::new(epsilon, self.beta, self.s0)?)
    }

    /// `K_cap` actually used at `ε`, never above `K(ε)`.
    pub fn k_cap_for(&self, params: &ZoneParameters) -> f64 {
        match self.k_cap {
            Some(c) => c.min(params.k),
            None => params.default_k_cap(),
        }
    }

    fn epsilon(&self) -> Result<f64> {
        self.epsilon.ok_or_else(|| config_err("[zone] epsilon is required for this command"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Strictly decreasing list of `ε`.
    pub epsilons: Vec<f64>,
    pub horizon: f64,
    /// Exit radius `ρ(ε) = rho_c · ε^rho_exponent`.
    #[serde(default = "default_rho_c")]
    pub rho_c: f64,
    /// Defaults to `[zone] delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_exponent: Option<f64>,
    pub regions: Vec<RegionConfig>,
}

fn default_rho_c() -> f64 {
    1.0
}

/// Initial conditions drawn uniformly from an action box, angles uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub actions_min: Vec<f64>,
    pub actions_max: Vec<f64>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    /// Points per axis.
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    #[default]
    Csv,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<PathBuf>,
    #[serde(default)]
    pub format: TrajectoryFormat,
    pub drift_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalFormConfig {
    pub k_bounds: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Divisor floor checked on the action grid.
    pub alpha: f64,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_cap")]
    pub degree_cap: usize,
    /// Generators of `Λ`; empty means the trivial module.
    #[serde(default)]
    pub module: Vec<Vec<i64>>,
    pub actions: Vec<Vec<f64>>,
    /// Angle grid points per axis.
    #[serde(default = "default_theta_points")]
    pub theta_points: usize,
}

fn default_order() -> usize {
    1
}

fn default_cap() -> usize {
    DEFAULT_DEGREE_CAP
}

fn default_theta_points() -> usize {
    4
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // relative trajectory paths are taken from the config's directory
        if let Some(d) = cfg.detect.as_mut() {
            if let Some(t) = d.trajectory.as_mut() {
                if t.is_relative() {
                    if let Some(parent) = path.parent() {
                        *t = parent.join(&*t);
                    }
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn dim(&self) -> usize {
        self.model.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        self.model.integrable()?;
        self.model.perturbation()?;
        if let Some(c) = &self.model.convexity {
            c.validate()?;
        }
        if let Some(s) = &self.sweep {
            if s.epsilons.is_empty() {
                return Err(config_err("[sweep] epsilons is empty"));
            }
            if s.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(config_err("[sweep] epsilons must be strictly decreasing"));
            }
            if !(s.horizon > 0.0 && s.horizon.is_finite()) {
                return Err(config_err("[sweep] horizon must be positive"));
            }
            if !(s.rho_c > 0.0) {
                return Err(config_err("[sweep] rho_c must be positive"));
            }
            if s.regions.is_empty() {
                return Err(config_err("[sweep] needs at least one region"));
            }
            for r in &s.regions {
                if r.actions_min.len() != n || r.actions_max.len() != n {
                    return Err(config_err(format!("[sweep] region boxes must have {n} components")));
                }
                if r.actions_min.iter().zip(&r.actions_max).any(|(a, b)| !(a <= b)) {
                    return Err(config_err("[sweep] region actions_min must not exceed actions_max"));
                }
            }
        }
        if let Some(g) = &self.grid {
            if g.min.len() != n || g.max.len() != n || g.points == 0 {
                return Err(config_err(format!("[grid] needs {n}-component min/max and points ≥ 1")));
            }
        }
        if let Some(d) = &self.detect {
            if !(d.drift_threshold > 0.0) {
                return Err(config_err("[detect] drift_threshold must be positive"));
            }
        }
        if let Some(nf) = &self.normal_form {
            if nf.k_bounds.is_empty() || nf.epsilons.is_empty() || nf.actions.is_empty() {
                return Err(config_err("[normal_form] k_bounds, epsilons and actions must be nonempty"));
            }
            if nf.actions.iter().any(|a| a.len() != n) || nf.module.iter().any(|k| k.len() != n) {
                return Err(config_err(format!("[normal_form] vectors must have {n} components")));
            }
            if nf.theta_points == 0 {
                return Err(config_err("[normal_form] theta_points must be at least 1"));
            }
        }
        Ok(())
    }

    fn integrator(&self) -> Result<IntegratorConfig> {
        let c = self.integrator.ok_or_else(|| config_err("missing [integrator] section"))?;
        c.validate()?;
        Ok(c)
    }
}

// ---------------------------------------------------------------- records

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub resonant: f64,
    pub nonresonant: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RecordOutputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<State>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_zone: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub action_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub energy_drift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exit_time: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupancy: Option<Occupancy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<DoubleResonanceWitness>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: String,
    pub command: String,
    pub code_version: String,
    pub model_hash: String,
    pub config: Config,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
    pub epsilon: f64,
    pub beta: f64,
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub k_cap: f64,
    pub outputs: RecordOutputs,
    pub wall_clock_seconds: f64,
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn model_hash(cfg: &Config) -> String {
    hex_digest(serde_json::to_string(&cfg.model).expect("serializable").as_bytes())
}

/// Deterministic identifier of a command applied to a config and seed.
pub fn run_id(command: &str, cfg: &Config, seed: u64) -> String {
    let text = format!("{command}\n{}\n{seed}", serde_json::to_string(cfg).expect("serializable"));
    hex_digest(text.as_bytes())[..16].to_string()
}

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
    pub plot: bool,
    /// `sweep` only: also write every trajectory as CSV.
    pub save_trajectories: bool,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| config_err(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn fmt_mode(k: &IntVector) -> String {
    k.entries().iter().map(i64::to_string).collect::<Vec<_>>().join(";")
}

// ---------------------------------------------------------------- statistics

/// Least-squares line `y = slope·x + intercept` with coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: n,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Median of exit times with never-exited trials counted as `+∞`; `None`
/// when the median falls among the censored trials.
pub fn censored_median(exits: &[Option<f64>]) -> Option<f64> {
    if exits.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = exits.iter().map(|e| e.unwrap_or(f64::INFINITY)).collect();
    let m = median(&mut v);
    m.is_finite().then_some(m)
}

// ---------------------------------------------------------------- zones

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneMapMeta {
    pub run_id: String,
    pub epsilon: f64,
    pub params: ZoneParameters,
    pub k_cap: f64,
    pub k_truncated: bool,
    pub mode_count: usize,
    pub rows: usize,
    pub resonant_rows: usize,
}

/// Grid actions in lexicographic order, first axis slowest.
fn grid_points(g: &GridConfig) -> Vec<Vec<f64>> {
    let n = g.min.len();
    let axis = |d: usize, i: usize| {
        if g.points == 1 {
            g.min[d]
        } else {
            g.min[d] + (g.max[d] - g.min[d]) * i as f64 / (g.points - 1) as f64
        }
    };
    let total = g.points.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            let mut p = vec![0.0; n];
            for d in (0..n).rev() {
                p[d] = axis(d, idx % g.points);
                idx /= g.points;
            }
            p
        })
        .collect()
}

/// Builds the zone map CSV text and its metadata.
pub fn zone_map(cfg: &Config, seed: u64) -> Result<(String, ZoneMapMeta)> {
    let grid = cfg.grid.as_ref().ok_or_else(|| config_err("missing [grid] section"))?;
    let epsilon = cfg.zone.epsilon()?;
    let params = cfg.zone.parameters(epsilon)?;
    let k_cap = cfg.zone.k_cap_for(&params);
    let h = cfg.model.integrable()?;
    let n = h.dim();
    let classifier = ZoneClassifier::new(n, &params, k_cap)?;
    let points = grid_points(grid);
    if let Some(c) = &cfg.model.convexity {
        if let Some(p) = points.iter().find(|p| p.iter().map(|x| x * x).sum::<f64>().sqrt() > c.radius) {
            return Err(config_err(format!("grid point {p:?} lies outside B(0, R = {})", c.radius)));
        }
    }
    let rows: Vec<String> = points
        .par_iter()
        .map(|p| {
            let omega = h.frequency(p).0;
            let c = classifier.classify(&omega);
            let mut cols: Vec<String> = p.iter().chain(&omega).map(f64::to_string).collect();
            let (label, witness) = match c.label.witness() {
                Some(w) => ("resonant", fmt_mode(w)),
                None => ("nonresonant", String::new()),
            };
            cols.push(label.into());
            cols.push(witness);
            cols.push(fmt_mode(&c.nearest));
            cols.push(c.distance.to_string());
            cols.join(",")
        })
        .collect();
    let mut header: Vec<String> = (1..=n).map(|i| format!("I{i}")).collect();
    header.extend((1..=n).map(|i| format!("omega{i}")));
    header.extend(["label", "witness", "nearest", "distance"].map(String::from));
    let resonant_rows = rows.iter().filter(|r| r.contains(",resonant,")).count();
    let mut csv = header.join(",") + "\n";
    for r in &rows {
        csv.push_str(r);
        csv.push('\n');
    }
    let meta = ZoneMapMeta {
        run_id: run_id("zones", cfg, seed),
        epsilon,
        k_truncated: k_cap < params.k,
        params,
        k_cap,
        mode_count: classifier.mode_count(),
        rows: rows.len(),
        resonant_rows,
    };
    Ok((csv, meta))
}

pub fn cmd_zones(cfg: &Config, opts: &RunOptions) -> Result<ZoneMapMeta> {
    let start = Instant::now();
    let (csv, meta) = with_pool(opts.threads, || zone_map(cfg, opts.seed))??;
    ensure_dir(&opts.out)?;
    write_file(&opts.out.join("zones.csv"), csv.as_bytes())?;
    write_file(
        &opts.out.join("zones_meta.json"),
        serde_json::to_string_pretty(&meta).expect("serializable").as_bytes(),
    )?;
    let record = ExperimentRecord {
        run_id: meta.run_id.clone(),
        command: "zones".into(),
        code_version: CODE_VERSION.into(),
        model_hash: model_hash(cfg),
        config: cfg.clone(),
        seed: opts.seed,
        trial: None,
        epsilon: meta.epsilon,
        beta: cfg.zone.beta,
        delta: cfg.zone.delta,
        step: None,
        horizon: None,
        k_cap: meta.k_cap,
        outputs: RecordOutputs::default(),
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_file(
        &opts.out.join("record.json"),
        serde_json::to_string_pretty(&record).expect("serializable").as_bytes(),
    )?;
    Ok(meta)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub epsilon: f64,
    pub trial: usize,
    pub region: usize,
    pub initial: State,
    pub start_resonant: bool,
    pub rho: f64,
    pub exit_time: Option<f64>,
    pub action_drift: f64,
    pub energy_drift: f64,
    pub occupancy: Occupancy,
    pub k_cap: f64,
    pub wall_clock_seconds: f64,
}

/// The deterministic initial condition of `trial`, shared across all `ε`.
pub fn initial_condition(sweep: &SweepConfig, seed: u64, trial: usize) -> (usize, State) {
    let mut offset = trial;
    let mut region = 0;
    while offset >= sweep.regions[region].trials {
        offset -= sweep.regions[region].trials;
        region += 1;
    }
    let r = &sweep.regions[region];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    let n = r.actions_min.len();
    let theta = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
    let actions = r
        .actions_min
        .iter()
        .zip(&r.actions_max)
        .map(|(&a, &b)| if a == b { a } else { rng.random_range(a..b) })
        .collect();
    (region, State::new(theta, actions))
}

fn resonant_fraction(traj: &Trajectory, system: &HamiltonianSystem, classifier: &ZoneClassifier) -> Occupancy {
    let total = traj.samples().len();
    let resonant = traj
        .samples()
        .iter()
        .filter(|s| {
            let omega = system.integrable.frequency(&s.state.actions).0;
            classifier.classify(&omega).label.is_resonant()
        })
        .count();
    Occupancy {
        resonant: resonant as f64 / total as f64,
        nonresonant: (total - resonant) as f64 / total as f64,
    }
}

pub fn rho_for(cfg: &Config, sweep: &SweepConfig, epsilon: f64) -> f64 {
    sweep.rho_c * epsilon.powf(sweep.rho_exponent.unwrap_or(cfg.zone.delta))
}

fn run_trial(
    cfg: &Config,
    sweep: &SweepConfig,
    integ: &IntegratorConfig,
    seed: u64,
    epsilon: f64,
    trial: usize,
    save: Option<&Path>,
) -> Result<TrialResult> {
    let start = Instant::now();
    let system = cfg.model.system(epsilon)?;
    let params = cfg.zone.parameters(epsilon)?;
    let k_cap = cfg.zone.k_cap_for(&params);
    let classifier = ZoneClassifier::new(system.dim(), &params, k_cap)?;
    let (region, initial) = initial_condition(sweep, seed, trial);
    let start_resonant = classifier
        .classify(&system.integrable.frequency(&initial.actions).0)
        .label
        .is_resonant();
    let rho = rho_for(cfg, sweep, epsilon);
    let traj = dynamics::integrate_tracking(&system, &initial, sweep.horizon, integ, &[rho])?;
    if let Some(dir) = save {
        let path = dir.join(format!("eps{epsilon}_trial{trial}.csv"));
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        write_file(&path, &buf)?;
    }
    Ok(TrialResult {
        epsilon,
        trial,
        region,
        start_resonant,
        rho,
        exit_time: dynamics::exit_time(&traj, rho),
        action_drift: dynamics::action_drift(&traj),
        energy_drift: dynamics::energy_drift(&traj),
        occupancy: resonant_fraction(&traj, &system, &classifier),
        initial,
        k_cap,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartGroup {
    All,
    Resonant,
    Nonresonant,
}

impl StartGroup {
    pub const ALL: [StartGroup; 3] = [StartGroup::All, StartGroup::Resonant, StartGroup::Nonresonant];

    fn name(self) -> &'static str {
        match self {
            StartGroup::All => "all",
            StartGroup::Resonant => "resonant",
            StartGroup::Nonresonant => "nonresonant",
        }
    }

    fn admits(self, r: &TrialResult) -> bool {
        match self {
            StartGroup::All => true,
            StartGroup::Resonant => r.start_resonant,
            StartGroup::Nonresonant => !r.start_resonant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub epsilon: f64,
    pub group: StartGroup,
    pub trials: usize,
    pub exits: usize,
    pub rho: f64,
    pub median_exit: Option<f64>,
    pub censored: bool,
    pub median_drift: Option<f64>,
    pub max_drift: Option<f64>,
    /// `median_drift / √ε`.
    pub drift_over_sqrt_eps: Option<f64>,
    pub median_resonant_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupFit {
    pub group: StartGroup,
    /// Fit of `ln(median exit)` against `ε^{−a}`; absent with fewer than
    /// two uncensored medians.
    pub fit: Option<LinearFit>,
    pub uncensored_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub run_id: String,
    pub code_version: String,
    pub model_hash: String,
    pub seed: u64,
    pub dim: usize,
    pub delta: f64,
    /// `a = (1 − 8δ)/(2n − 4)`; absent for `n = 2`.
    pub stability_exponent: Option<f64>,
    pub horizon: f64,
    pub rows: Vec<SummaryRow>,
    pub fits: Vec<GroupFit>,
    pub warnings: Vec<String>,
}

pub struct SweepOutput {
    pub trials: Vec<TrialResult>,
    pub summary: SweepSummary,
}

pub fn summarize(cfg: &Config, sweep: &SweepConfig, seed: u64, trials: &[TrialResult]) -> SweepSummary {
    let n = cfg.dim();
    let delta = cfg.zone.delta;
    let exponent = (n > 2).then(|| (1.0 - 8.0 * delta) / (2.0 * n as f64 - 4.0));
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for &eps in &sweep.epsilons {
        for group in StartGroup::ALL {
            let members: Vec<&TrialResult> = trials.iter().filter(|r| r.epsilon == eps && group.admits(r)).collect();
            let exits: Vec<Option<f64>> = members.iter().map(|r| r.exit_time).collect();
            let median_exit = censored_median(&exits);
            let mut drifts: Vec<f64> = members.iter().map(|r| r.action_drift).collect();
            let mut occ: Vec<f64> = members.iter().map(|r| r.occupancy.resonant).collect();
            let median_drift = (!drifts.is_empty()).then(|| median(&mut drifts));
            let exit_count = exits.iter().filter(|e| e.is_some()).count();
            if group == StartGroup::All && !members.is_empty() && 2 * exit_count < members.len() {
                warnings.push(format!(
                    "eps = {eps}: {} of {} trials censored at the horizon",
                    members.len() - exit_count,
                    members.len()
                ));
            }
            rows.push(SummaryRow {
                epsilon: eps,
                group,
                trials: members.len(),
                exits: exit_count,
                rho: rho_for(cfg, sweep, eps),
                median_exit,
                censored: !members.is_empty() && median_exit.is_none(),
                median_drift,
                max_drift: drifts.iter().copied().reduce(f64::max),
                drift_over_sqrt_eps: median_drift.map(|d| d / eps.sqrt()),
                median_resonant_fraction: (!occ.is_empty()).then(|| median(&mut occ)),
            });
        }
    }
    let fits = StartGroup::ALL
        .iter()
        .map(|&group| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter(|r| r.group == group)
                .filter_map(|r| r.median_exit.filter(|&t| t > 0.0).map(|t| (r.epsilon, t.ln())))
                .filter_map(|(eps, y)| exponent.map(|a| (eps.powf(-a), y)))
                .unzip();
            GroupFit {
                group,
                uncensored_points: xs.len(),
                fit: linear_fit(&xs, &ys),
            }
        })
        .collect();
    SweepSummary {
        run_id: run_id("sweep", cfg, seed),
        code_version: CODE_VERSION.into(),
        model_hash: model_hash(cfg),
        seed,
        dim: n,
        delta,
        stability_exponent: exponent,
        horizon: sweep.horizon,
        rows,
        fits,
        warnings,
    }
}

/// Runs every `(ε, trial)` pair in parallel; results are sorted by `ε`
/// order then trial index.
pub fn run_sweep(cfg: &Config, opts: &RunOptions) -> Result<SweepOutput> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| config_err("missing [sweep] section"))?;
    let integ = cfg.integrator()?;
    let trials_per_eps: usize = sweep.regions.iter().map(|r| r.trials).sum();
    let save_dir = opts.save_trajectories.then(|| opts.out.join("trajectories"));
    if let Some(d) = &save_dir {
        ensure_dir(d)?;
    }
    let jobs: Vec<(usize, f64, usize)> = sweep
        .epsilons
        .iter()
        .enumerate()
        .flat_map(|(ei, &eps)| (0..trials_per_eps).map(move |t| (ei, eps, t)))
        .collect();
    let results: Vec<(usize, usize, Result<TrialResult>)> = with_pool(opts.threads, || {
        jobs.par_iter()
            .map(|&(ei, eps, t)| (ei, t, run_trial(cfg, sweep, &integ, opts.seed, eps, t, save_dir.as_deref())))
            .collect()
    })?;
    let mut results = results;
    results.sort_by_key(|(ei, t, _)| (*ei, *t));
    let trials = results.into_iter().map(|(_, _, r)| r).collect::<Result<Vec<_>>>()?;
    let summary = summarize(cfg, sweep, opts.seed, &trials);
    Ok(SweepOutput { trials, summary })
}

pub fn summary_csv(summary: &SweepSummary) -> String {
    let mut s = String::from(
        "epsilon,group,trials,exits,rho,median_exit,censored,median_drift,max_drift,drift_over_sqrt_eps,median_resonant_fraction\n",
    );
    for r in &summary.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.epsilon,
            r.group.name(),
            r.trials,
            r.exits,
            r.rho,
            fmt_opt(r.median_exit),
            r.censored,
            fmt_opt(r.median_drift),
            fmt_opt(r.max_drift),
            fmt_opt(r.drift_over_sqrt_eps),
            fmt_opt(r.median_resonant_fraction),
        );
    }
    s
}

fn trials_csv(trials: &[TrialResult]) -> String {
    let mut s = String::from(
        "epsilon,trial,region,start_zone,rho,exit_time,censored,action_drift,energy_drift,resonant_fraction\n",
    );
    for r in trials {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.epsilon,
            r.trial,
            r.region,
            if r.start_resonant { "resonant" } else { "nonresonant" },
            r.rho,
            fmt_opt(r.exit_time),
            r.exit_time.is_none(),
            r.action_drift,
            r.energy_drift,
            r.occupancy.resonant,
        );
    }
    s
}

fn sweep_plot_script() -> &'static str {
    "# gnuplot script for summary.csv\n\
set datafile separator ','\n\
set logscale xy\n\
set xlabel 'epsilon'\n\
set key left top\n\
set terminal pngcairo size 900,600\n\
set output 'exit_times.png'\n\
set ylabel 'median exit time'\n\
plot for [g in 'all resonant nonresonant'] 'summary.csv' using 1:(strcol(2) eq g ? $6 : 1/0) with linespoints title g\n\
set output 'drift.png'\n\
set ylabel 'median action drift'\n\
plot for [g in 'all resonant nonresonant'] 'summary.csv' using 1:(strcol(2) eq g ? $8 : 1/0) with linespoints title g\n"
}

pub fn cmd_sweep(cfg: &Config, opts: &RunOptions) -> Result<SweepSummary> {
    let out = run_sweep(cfg, opts)?;
    let sweep = cfg.sweep.as_ref().expect("checked in run_sweep");
    let integ = cfg.integrator()?;
    ensure_dir(&opts.out)?;
    let mut records = String::new();
    for r in &out.trials {
        let record = ExperimentRecord {
            run_id: out.summary.run_id.clone(),
            command: "sweep".into(),
            code_version: CODE_VERSION.into(),
            model_hash: out.summary.model_hash.clone(),
            config: cfg.clone(),
            seed: opts.seed,
            trial: Some(r.trial),
            epsilon: r.epsilon,
            beta: cfg.zone.beta,
            delta: cfg.zone.delta,
            step: Some(integ.step),
            horizon: Some(sweep.horizon),
            k_cap: r.k_cap,
            outputs: RecordOutputs {
                initial: Some(r.initial.clone()),
                start_zone: Some(if r.start_resonant { "resonant" } else { "nonresonant" }.into()),
                action_drift: Some(r.action_drift),
                energy_drift: Some(r.energy_drift),
                rho: Some(r.rho),
                exit_time: r.exit_time,
                occupancy: Some(r.occupancy),
                witness: None,
            },
            wall_clock_seconds: r.wall_clock_seconds,
        };
        records.push_str(&serde_json::to_string(&record).expect("serializable"));
        records.push('\n');
    }
    write_file(&opts.out.join("records.jsonl"), records.as_bytes())?;
    write_file(&opts.out.join("trials.csv"), trials_csv(&out.trials).as_bytes())?;
    write_file(&opts.out.join("summary.csv"), summary_csv(&out.summary).as_bytes())?;
    write_file(
        &opts.out.join("summary.json"),
        serde_json::to_string_pretty(&out.summary).expect("serializable").as_bytes(),
    )?;
    if opts.plot {
        write_file(&opts.out.join("plot.gp"), sweep_plot_script().as_bytes())?;
    }
    for w in &out.summary.warnings {
        eprintln!("warning: {w}");
    }
    Ok(out.summary)
}

// ---------------------------------------------------------------- detect

pub fn load_trajectory(path: &Path, format: TrajectoryFormat, n: usize) -> Result<Trajectory> {
    let file = fs::File::open(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let traj = match format {
        TrajectoryFormat::Csv => Trajectory::read_csv(BufReader::new(file))?,
        TrajectoryFormat::Binary => Trajectory::read_binary(BufReader::new(file), n)?,
    };
    if traj.dim() != n {
        return Err(DynamicsError::Dimension {
            expected: n,
            got: traj.dim(),
        }
        .into());
    }
    Ok(traj)
}

/// Runs the detector on a stored trajectory. `trajectory` overrides the
/// path in `[detect]`.
pub fn detect_witness(cfg: &Config, trajectory: Option<&Path>) -> Result<(DoubleResonanceWitness, f64, f64)> {
    let d = cfg.detect.as_ref().ok_or_else(|| config_err("missing [detect] section"))?;
    let path = trajectory
        .map(Path::to_path_buf)
        .or_else(|| d.trajectory.clone())
        .ok_or_else(|| config_err("no trajectory file given"))?;
    let epsilon = cfg.zone.epsilon()?;
    let params = cfg.zone.parameters(epsilon)?;
    let k_cap = cfg.zone.k_cap_for(&params);
    let h = cfg.model.integrable()?;
    let traj = load_trajectory(&path, d.format, h.dim())?;
    let curve = FrequencyCurve::from_trajectory(&traj, &h)?;
    let w = detector::detect(&curve, &params, cfg.zone.delta, d.drift_threshold, k_cap)?;
    Ok((w, epsilon, k_cap))
}

pub fn cmd_detect(cfg: &Config, opts: &RunOptions, trajectory: Option<&Path>) -> Result<DoubleResonanceWitness> {
    let start = Instant::now();
    let (w, epsilon, k_cap) = detect_witness(cfg, trajectory)?;
    ensure_dir(&opts.out)?;
    write_file(
        &opts.out.join("witness.json"),
        serde_json::to_string_pretty(&w).expect("serializable").as_bytes(),
    )?;
    let record = ExperimentRecord {
        run_id: run_id("detect", cfg, opts.seed),
        command: "detect".into(),
        code_version: CODE_VERSION.into(),
        model_hash: model_hash(cfg),
        config: cfg.clone(),
        seed: opts.seed,
        trial: None,
        epsilon,
        beta: cfg.zone.beta,
        delta: cfg.zone.delta,
        step: None,
        horizon: None,
        k_cap,
        outputs: RecordOutputs {
            witness: Some(w.clone()),
            ..Default::default()
        },
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_file(
        &opts.out.join("record.json"),
        serde_json::to_string_pretty(&record).expect("serializable").as_bytes(),
    )?;
    Ok(w)
}

// ---------------------------------------------------------------- nf-decay

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayRow {
    pub k_bound: f64,
    pub epsilon: f64,
    pub nonresonant_sup: f64,
    pub coordinate_shift_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub k_bound: f64,
    /// Slope of `ln nonresonant_sup` against `ln ε`.
    pub remainder: Option<LinearFit>,
    /// Slope of `ln coordinate_shift_sup` against `ln ε`.
    pub shift: Option<LinearFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayTable {
    pub run_id: String,
    pub order: usize,
    pub alpha: f64,
    pub rows: Vec<DecayRow>,
    pub fits: Vec<DecayFit>,
}

fn log_fit(rows: &[&DecayRow], value: impl Fn(&DecayRow) -> f64) -> Option<LinearFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| value(r) > 0.0)
        .map(|r| (r.epsilon.ln(), value(r).ln()))
        .unzip();
    linear_fit(&xs, &ys)
}

pub fn nf_decay(cfg: &Config, seed: u64) -> Result<DecayTable> {
    let nf = cfg.normal_form.as_ref().ok_or_else(|| config_err("missing [normal_form] section"))?;
    let h = cfg.model.integrable()?;
    let n = h.dim();
    let base = cfg.model.perturbation()?;
    let module = if nf.module.is_empty() {
        None
    } else {
        let gens: Vec<IntVector> = nf.module.iter().map(|k| IntVector::new(k.clone())).collect();
        Some(lattice::saturate(&gens)?)
    };
    let total = nf.theta_points.pow(n as u32);
    let thetas: Vec<Vec<f64>> = (0..total)
        .map(|mut idx| {
            let mut th = vec![0.0; n];
            for t in th.iter_mut().rev() {
                *t = TAU * (idx % nf.theta_points) as f64 / nf.theta_points as f64;
                idx /= nf.theta_points;
            }
            th
        })
        .collect();
    let grid: Vec<(Vec<f64>, Vec<f64>)> = nf
        .actions
        .iter()
        .flat_map(|a| thetas.iter().map(move |t| (t.clone(), a.clone())))
        .collect();
    let jobs: Vec<(f64, f64)> = nf
        .k_bounds
        .iter()
        .flat_map(|&k| nf.epsilons.iter().map(move |&e| (k, e)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(k_bound, epsilon)| {
            let f = FourierPolynomial::from_perturbation(&base.scaled(epsilon));
            let chi = normalform::solve_homological(&f, &h, module.as_ref(), k_bound, nf.alpha, &nf.actions)?;
            let t = normalform::lie_transform(&h, &f, &chi, nf.order, nf.degree_cap)?;
            let m = normalform::measure_remainder(&t, &grid);
            Ok(DecayRow {
                k_bound,
                epsilon,
                nonresonant_sup: m.nonresonant_sup,
                coordinate_shift_sup: m.coordinate_shift_sup,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fits = nf
        .k_bounds
        .iter()
        .map(|&k| {
            let sel: Vec<&DecayRow> = rows.iter().filter(|r| r.k_bound == k).collect();
            DecayFit {
                k_bound: k,
                remainder: log_fit(&sel, |r| r.nonresonant_sup),
                shift: log_fit(&sel, |r| r.coordinate_shift_sup),
            }
        })
        .collect();
    Ok(DecayTable {
        run_id: run_id("nf-decay", cfg, seed),
        order: nf.order,
        alpha: nf.alpha,
        rows,
        fits,
    })
}

pub fn cmd_nf_decay(cfg: &Config, opts: &RunOptions) -> Result<DecayTable> {
    let table = with_pool(opts.threads, || nf_decay(cfg, opts.seed))??;
    ensure_dir(&opts.out)?;
    let mut csv = String::from("k_bound,epsilon,nonresonant_sup,coordinate_shift_sup\n");
    for r in &table.rows {
        let _ = writeln!(csv, "{},{},{},{}", r.k_bound, r.epsilon, r.nonresonant_sup, r.coordinate_shift_sup);
    }
    write_file(&opts.out.join("nf_decay.csv"), csv.as_bytes())?;
    write_file(
        &opts.out.join("nf_decay.json"),
        serde_json::to_string_pretty(&table).expect("serializable").as_bytes(),
    )?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[model]
a = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
b = [0.0, 0.0, 0.0]

[[model.terms]]
mode = [1, 0, 0]
coefficient = 1.0

[zone]
epsilon = 0.001
beta = 0.9
s0 = 0.02
delta = 0.25

[integrator]
step = 0.05
sample_stride = 20

[sweep]
epsilons = [0.01, 0.001]
horizon = 20.0
regions = [
  { actions_min = [-0.01, 1.0, 1.0], actions_max = [0.01, 2.0, 2.0], trials = 3 },
  { actions_min = [1.0, 1.0, 1.0], actions_max = [2.0, 2.0, 2.0], trials = 3 },
]

[grid]
min = [-1.0, -1.0, 0.5]
max = [1.0, 1.0, 0.5]
points = 5
"#;

    fn opts(dir: &Path) -> RunOptions {
        RunOptions {
            out: dir.to_path_buf(),
            seed: 7,
            threads: Some(2),
            plot: false,
            save_trajectories: false,
        }
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = Config::from_toml(BASE).unwrap();
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let bad = BASE.replace("epsilons = [0.01, 0.001]", "epsilons = [0.001, 0.01]");
        assert_eq!(Config::from_toml(&bad).unwrap_err().exit_code(), EXIT_CONFIG);
        let bad = BASE.replace("step = 0.05", "step = 0.05\nbogus = 1");
        assert_eq!(Config::from_toml(&bad).unwrap_err().exit_code(), EXIT_CONFIG);
        assert!(Config::from_toml("not toml [").is_err());
    }

    #[test]
    fn stats_helpers() {
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-15 && (f.intercept - 1.0).abs() < 1e-15);
        assert!((f.r_squared - 1.0).abs() < 1e-15);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
        assert_eq!(censored_median(&[Some(1.0), Some(3.0), None]), Some(3.0));
        assert_eq!(censored_median(&[Some(1.0), None, None]), None);
        assert_eq!(censored_median(&[Some(1.0), Some(2.0)]), Some(1.5));
    }

    #[test]
    fn initial_conditions_are_common_across_eps_and_deterministic() {
        let cfg = Config::from_toml(BASE).unwrap();
        let s = cfg.sweep.as_ref().unwrap();
        let (r0, a) = initial_condition(s, 7, 4);
        let (_, b) = initial_condition(s, 7, 4);
        assert_eq!((r0, &a), (1, &b));
        assert_ne!(initial_condition(s, 7, 3).1, a);
        assert_ne!(initial_condition(s, 8, 4).1, a);
        assert!(a.actions.iter().all(|x| (1.0..2.0).contains(x)));
    }

    #[test]
    fn zones_extremes() {
        let mut cfg = Config::from_toml(BASE).unwrap();
        cfg.zone.k_cap = Some(1.0);
        // huge α: everything resonant
        cfg.zone.beta = 0.01;
        let (_, meta) = zone_map(&cfg, 0).unwrap();
        assert_eq!(meta.resonant_rows, meta.rows);
        // α → 0: the grid avoids the coordinate hyperplanes up to 1e-9
        cfg.zone.beta = 0.999;
        cfg.zone.epsilon = Some(1e-30);
        cfg.zone.s0 = 1e-2;
        cfg.grid = Some(GridConfig {
            min: vec![0.3, 0.6, 0.5],
            max: vec![0.4, 0.7, 0.5],
            points: 3,
        });
        let (csv, meta) = zone_map(&cfg, 0).unwrap();
        assert_eq!(meta.resonant_rows, 0);
        assert_eq!(csv.lines().count(), 28);
        assert!(csv.starts_with("I1,I2,I3,omega1,omega2,omega3,label,witness,nearest,distance\n"));
    }

    #[test]
    fn zone_map_is_deterministic() {
        let cfg = Config::from_toml(BASE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        cmd_zones(&cfg, &opts(&a)).unwrap();
        cmd_zones(&cfg, &RunOptions { threads: Some(1), ..opts(&b) }).unwrap();
        assert_eq!(fs::read(a.join("zones.csv")).unwrap(), fs::read(b.join("zones.csv")).unwrap());
    }

    #[test]
    fn unperturbed_sweep_is_fully_censored() {
        let mut cfg = Config::from_toml(BASE).unwrap();
        cfg.model.terms.clear();
        let out = run_sweep(&cfg, &opts(Path::new("unused"))).unwrap();
        assert!(out.trials.iter().all(|t| t.exit_time.is_none() && t.action_drift == 0.0));
        assert!(out.summary.rows.iter().all(|r| r.censored && r.exits == 0));
        assert!(out.summary.fits.iter().all(|f| f.fit.is_none()));
        assert!(!out.summary.warnings.is_empty());
    }

    #[test]
    fn sweep_records_and_determinism() {
        let cfg = Config::from_toml(BASE).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        let s1 = cmd_sweep(&cfg, &opts(&a)).unwrap();
        let s2 = cmd_sweep(&cfg, &RunOptions { threads: Some(3), ..opts(&b) }).unwrap();
        assert_eq!(s1, s2);
        for f in ["summary.csv", "summary.json", "trials.csv"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
        }
        let text = fs::read_to_string(a.join("records.jsonl")).unwrap();
        let records: Vec<ExperimentRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len(), 12);
        for r in &records {
            assert_eq!(Config::from_toml(&r.config.to_toml()).unwrap(), cfg);
            let occ = r.outputs.occupancy.unwrap();
            assert!((occ.resonant + occ.nonresonant - 1.0).abs() < 1e-12);
        }
        // start zones follow the two regions
        assert!(s1.rows.iter().any(|r| r.group == StartGroup::Resonant && r.trials == 3));
    }

    #[test]
    fn nf_decay_zero_perturbation_gives_zero_table() {
        let mut cfg = Config::from_toml(BASE).unwrap();
        cfg.model.terms.clear();
        cfg.normal_form = Some(NormalFormConfig {
            k_bounds: vec![3.0],
            epsilons: vec![1e-2, 1e-3],
            alpha: 0.1,
            order: 1,
            degree_cap: 6,
            module: vec![],
            actions: vec![vec![1.0, 0.3, 0.7]],
            theta_points: 2,
        });
        let t = nf_decay(&cfg, 0).unwrap();
        assert!(t.rows.iter().all(|r| r.nonresonant_sup == 0.0 && r.coordinate_shift_sup == 0.0));
    }

    #[test]
    fn nf_decay_small_divisor_exit_code() {
        let mut cfg = Config::from_toml(BASE).unwrap();
        cfg.normal_form = Some(NormalFormConfig {
            k_bounds: vec![3.0],
            epsilons: vec![1e-2],
            alpha: 0.5,
            order: 1,
            degree_cap: 6,
            module: vec![],
            actions: vec![vec![0.1, 0.3, 0.7]],
            theta_points: 2,
        });
        let err = nf_decay(&cfg, 0).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_NUMERICAL);
        assert!(err.to_string().contains("1,0,0)"));
    }
}
