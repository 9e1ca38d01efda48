//! Experiment configuration.
//!
//! Configurations are TOML files written in user units (dB, dBm, km/h). They
//! are converted into linear units exactly once, when a [`ConfigFile`] is
//! parsed into an [`ExperimentConfig`]; everything downstream is linear.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use irsbf_core::metrics::PilotScheme;
use irsbf_core::scenario::{db_to_linear, dbm_to_watts, kmh_to_ms, Scenario};
use irsbf_nets::train::TrainConfig;
use irsbf_nets::LaClConfig;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Beamforming schemes compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Predicted IRS phases followed by the learned beamformer on estimated channels.
    Dlpb,
    /// Alternating optimizer with perfect full CSI of the served slot.
    FpIcsi,
    /// Alternating optimizer on CSI that is `stale_lag` slots old.
    NaiveFp,
    /// Random IRS phases with maximum-ratio transmission.
    RandomMrt,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Dlpb, Scheme::FpIcsi, Scheme::NaiveFp, Scheme::RandomMrt];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Dlpb => "dlpb",
            Scheme::FpIcsi => "fp_icsi",
            Scheme::NaiveFp => "naive_fp",
            Scheme::RandomMrt => "random_mrt",
        }
    }

    /// Pilot overhead the scheme pays per coherence interval: the optimizer
    /// baselines need the full cascaded CSI, the others only the effective
    /// MISO channels for fixed phases.
    pub fn pilots(self) -> PilotScheme {
        match self {
            Scheme::FpIcsi | Scheme::NaiveFp => PilotScheme::FullIcsi,
            Scheme::Dlpb | Scheme::RandomMrt => PilotScheme::Predictive,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}` (expected dlpb, fp_icsi, naive_fp or random_mrt)")))
    }
}

/// The quantity varied across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Common Rician factor of all links, in dB.
    Beta,
    /// Transmit power budget, in dBm.
    Power,
    /// Number of users.
    Users,
    /// User speed in km/h (every user moves at exactly this speed).
    Velocity,
    /// Number of history slots fed to the phase network.
    Tau,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Beta => "beta",
            SweepVariable::Power => "power",
            SweepVariable::Users => "users",
            SweepVariable::Velocity => "velocity",
            SweepVariable::Tau => "tau",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            SweepVariable::Beta => "dB",
            SweepVariable::Power => "dBm",
            SweepVariable::Users => "users",
            SweepVariable::Velocity => "km/h",
            SweepVariable::Tau => "slots",
        }
    }

    /// Whether one pair of networks serves the whole sweep. User-count sweeps
    /// reuse networks trained at the base user count (scalability), velocity
    /// sweeps reuse networks trained over the whole speed range
    /// (generalizability); the other axes get networks trained per point.
    pub fn shares_models(self) -> bool {
        matches!(self, SweepVariable::Users | SweepVariable::Velocity)
    }
}

impl FromStr for SweepVariable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SweepVariable::Beta, SweepVariable::Power, SweepVariable::Users, SweepVariable::Velocity, SweepVariable::Tau]
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// System size: the reduced desktop system or the full-size one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    #[default]
    Desk,
    Full,
}

impl Scale {
    pub fn scenario(self) -> Scenario {
        match self {
            Scale::Desk => Scenario::desk(),
            Scale::Full => Scenario::full(),
        }
    }

    pub fn lacl(self) -> LaClConfig {
        match self {
            Scale::Desk => LaClConfig::desk(),
            Scale::Full => LaClConfig::full(),
        }
    }

    pub fn trials(self) -> usize {
        match self {
            Scale::Desk => 200,
            Scale::Full => 2000,
        }
    }
}

/// Scenario overrides on top of the preset system, in user units.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub scale: Scale,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub users: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ap_antennas: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub irs_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub irs_cols: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rician_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_dbm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_dbm: Option<f64>,
    /// Range `[min, max]` of the users' uniformly drawn speeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed_kmh: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl ScenarioSpec {
    /// The linear-unit scenario described by this section.
    pub fn build(&self) -> Result<Scenario> {
        let base = self.scale.scenario();
        let g = &base.geometry;
        let mut s = Scenario::with_dimensions(
            self.ap_antennas.unwrap_or(g.num_ap_antennas),
            self.irs_rows.unwrap_or(g.irs_rows),
            self.irs_cols.unwrap_or(g.irs_cols),
            self.users.unwrap_or(base.num_users),
        );
        if let Some(db) = self.rician_db {
            s = s.with_rician(db_to_linear(db));
        }
        if let Some(dbm) = self.power_dbm {
            s.power = dbm_to_watts(dbm);
        }
        if let Some(dbm) = self.noise_dbm {
            s.noise_power = dbm_to_watts(dbm);
        }
        if let Some([lo, hi]) = self.speed_kmh {
            s.mobility.speed_min = kmh_to_ms(lo);
            s.mobility.speed_max = kmh_to_ms(hi);
        }
        if let Some(w) = &self.weights {
            s.weights = w.clone();
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    /// Values in the variable's user unit (see [`SweepVariable::unit`]).
    pub values: Vec<f64>,
}

/// Checkpoint files of one trained phase/beam network pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointPair {
    pub phase: PathBuf,
    pub beam: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DlpbSpec {
    /// History length; defaults to 3 slots on the desk system and 5 on the full one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    /// Channel-estimation NMSE of the effective channels fed to the beam network.
    pub nmse: f64,
    /// Either one pair shared by all sweep points or one pair per point.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<CheckpointPair>,
}

impl Default for DlpbSpec {
    fn default() -> Self {
        Self { tau: None, nmse: 0.1, checkpoints: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSpec {
    /// Age in slots of the CSI used by the stale-CSI optimizer.
    pub stale_lag: usize,
    /// Stopping increment of the alternating optimizer (bits/s/Hz).
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self { stale_lag: 5, tol: irsbf_core::baselines::DEFAULT_TOL, max_iters: irsbf_core::baselines::DEFAULT_MAX_ITERS }
    }
}

/// How networks are trained when an experiment has to train its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    /// Examples in each of the phase and beam datasets.
    pub examples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Speed range of the training episodes; defaults to the scenario's.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed_kmh: Option<[f64; 2]>,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { examples: 2000, epochs: t.epochs, batch_size: t.batch_size, learning_rate: t.learning_rate, speed_kmh: None }
    }
}

/// An experiment as written in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub scenario: ScenarioSpec,
    pub sweep: SweepSpec,
    #[serde(default)]
    pub dlpb: DlpbSpec,
    #[serde(default)]
    pub baselines: BaselineSpec,
    #[serde(default)]
    pub training: TrainingSpec,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ConfigFile {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// One sweep point: the value as written and its linear-unit setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub setting: Setting,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setting {
    /// Linear Rician factor of every link.
    Rician(f64),
    /// Power budget in watts.
    Power(f64),
    Users(usize),
    /// Speed in m/s.
    Speed(f64),
    Tau(usize),
}

/// Training procedure in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub examples: usize,
    /// Optimizer settings; the seed is replaced per training stage.
    pub optimizer: TrainConfig,
    /// Speed range (m/s) of the training episodes, if it differs from the scenario's.
    pub speed_range: Option<(f64, f64)>,
}

/// Scenario and history length of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSetup {
    pub scenario: Scenario,
    pub tau: usize,
}

/// A validated experiment in linear units.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// The configuration as written; echoed into reports.
    pub source: ConfigFile,
    pub seed: u64,
    pub trials: usize,
    pub schemes: Vec<Scheme>,
    pub output: PathBuf,
    pub scenario: Scenario,
    pub variable: SweepVariable,
    pub points: Vec<SweepPoint>,
    pub tau: usize,
    pub nmse: f64,
    pub checkpoints: Vec<CheckpointPair>,
    pub stale_lag: usize,
    pub fp_tol: f64,
    pub fp_max_iters: usize,
    pub training: TrainingPlan,
    /// Phase-network architecture for this system (N, M and τ filled in).
    pub lacl: LaClConfig,
}

fn positive_integer(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("{what} must be a positive integer, got {v}")))
    }
}

impl ExperimentConfig {
    /// Validates `source` and converts it into linear units.
    pub fn parse(source: ConfigFile) -> Result<Self> {
        if source.trials == 0 {
            return Err(Error::Config("need at least one trial".into()));
        }
        if source.schemes.is_empty() {
            return Err(Error::Config("no schemes selected".into()));
        }
        let schemes = source.schemes.clone();
        let mut distinct = schemes.clone();
        distinct.sort();
        distinct.dedup();
        if distinct.len() != schemes.len() {
            return Err(Error::Config("schemes must not repeat".into()));
        }
        if source.sweep.values.is_empty() {
            return Err(Error::Config("sweep needs at least one value".into()));
        }
        let scenario = source.scenario.build()?;
        let variable = source.sweep.variable;
        let points = source
            .sweep
            .values
            .iter()
            .map(|&value| {
                if !value.is_finite() {
                    return Err(Error::Config(format!("sweep value {value} is not finite")));
                }
                let setting = match variable {
                    SweepVariable::Beta => Setting::Rician(db_to_linear(value)),
                    SweepVariable::Power => Setting::Power(dbm_to_watts(value)),
                    SweepVariable::Users => Setting::Users(positive_integer(value, "user count")?),
                    SweepVariable::Velocity if value > 0.0 => Setting::Speed(kmh_to_ms(value)),
                    SweepVariable::Velocity => return Err(Error::Config(format!("speed must be positive, got {value}"))),
                    SweepVariable::Tau => Setting::Tau(positive_integer(value, "history length")?),
                };
                Ok(SweepPoint { value, setting })
            })
            .collect::<Result<Vec<_>>>()?;

        let scale = source.scenario.scale;
        let tau = source.dlpb.tau.unwrap_or(scale.lacl().tau);
        if tau == 0 {
            return Err(Error::Config("history length must be positive".into()));
        }
        let nmse = source.dlpb.nmse;
        if !(nmse >= 0.0 && nmse.is_finite()) {
            return Err(Error::Config(format!("NMSE must be non-negative, got {nmse}")));
        }
        let n_ckpt = source.dlpb.checkpoints.len();
        if n_ckpt > 1 && n_ckpt != points.len() {
            return Err(Error::Config(format!(
                "give one checkpoint pair or one per sweep point ({}), not {n_ckpt}",
                points.len()
            )));
        }
        let b = &source.baselines;
        if b.stale_lag == 0 || b.max_iters == 0 || !(b.tol > 0.0) {
            return Err(Error::Config("stale lag, iteration cap and tolerance must be positive".into()));
        }
        let t = &source.training;
        let optimizer = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            ..TrainConfig::default()
        };
        optimizer.validate()?;
        if t.examples < 2 {
            return Err(Error::Config("training needs at least two examples".into()));
        }
        let speed_range = match t.speed_kmh {
            Some([lo, hi]) if 0.0 <= lo && lo <= hi => Some((kmh_to_ms(lo), kmh_to_ms(hi))),
            Some([lo, hi]) => return Err(Error::Config(format!("bad training speed range [{lo}, {hi}]"))),
            None => None,
        };
        let lacl = LaClConfig {
            n: scenario.geometry.num_irs_elements(),
            m: scenario.geometry.num_ap_antennas,
            tau,
            ..scale.lacl()
        };

        let cfg = Self {
            seed: source.seed,
            trials: source.trials,
            schemes,
            output: source.output.clone(),
            scenario,
            variable,
            points,
            tau,
            nmse,
            checkpoints: source.dlpb.checkpoints.clone(),
            stale_lag: b.stale_lag,
            fp_tol: b.tol,
            fp_max_iters: b.max_iters,
            training: TrainingPlan { examples: t.examples, optimizer, speed_range },
            lacl,
            source,
        };
        for i in 0..cfg.points.len() {
            let p = cfg.point(i);
            p.scenario.validate()?;
            if !(p.scenario.mobility.mean_speed() > 0.0) {
                return Err(Error::Config("the mean user speed must be positive (it sets the coherence time)".into()));
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::parse(ConfigFile::from_toml(text)?)
    }

    /// Reads a configuration file; relative checkpoint paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for pair in &mut cfg.checkpoints {
            pair.phase = dir.join(&pair.phase);
            pair.beam = dir.join(&pair.beam);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        self.source.to_toml()
    }

    /// Scenario and history length at sweep point `i`.
    pub fn point(&self, i: usize) -> PointSetup {
        let mut scenario = self.scenario.clone();
        let mut tau = self.tau;
        match self.points[i].setting {
            Setting::Rician(b) => scenario = scenario.with_rician(b),
            Setting::Power(p) => scenario.power = p,
            Setting::Users(k) => scenario = scenario.with_users(k),
            Setting::Speed(v) => scenario = scenario.with_speed(v),
            Setting::Tau(t) => tau = t,
        }
        PointSetup { scenario, tau }
    }

    /// Scenario and history length the networks for sweep point `i` are
    /// trained on (the base scenario when the sweep shares its networks).
    pub fn training_setup(&self, i: usize) -> PointSetup {
        let mut setup =
            if self.variable.shares_models() { PointSetup { scenario: self.scenario.clone(), tau: self.tau } } else { self.point(i) };
        if let Some((lo, hi)) = self.training.speed_range {
            setup.scenario.mobility.speed_min = lo;
            setup.scenario.mobility.speed_max = hi;
        }
        setup
    }

    /// Number of distinct network pairs the experiment uses.
    pub fn model_count(&self) -> usize {
        if self.variable.shares_models() {
            1
        } else {
            self.points.len()
        }
    }
}

/// Configuration file of a named sweep reproducing one evaluation protocol:
///
/// * `beta`: Rician factor −10..10 dB at P = 30 dBm;
/// * `power`: P ∈ {10, 20, 30} dBm at β = 2 dB, users moving at 20–40 km/h;
/// * `users`: K ∈ {2, ..., 6} with networks trained at K = 3;
/// * `velocity`: 10..60 km/h with networks trained over that whole range;
/// * `tau`: τ ∈ {1, 3, 5} history slots.
pub fn preset_file(name: &str, scale: Scale) -> Result<ConfigFile> {
    let variable: SweepVariable = name.parse()?;
    let mut scenario = ScenarioSpec { scale, rician_db: Some(2.0), power_dbm: Some(30.0), ..ScenarioSpec::default() };
    let mut training = TrainingSpec::default();
    let values = match variable {
        SweepVariable::Beta => {
            scenario.rician_db = None;
            vec![-10.0, -6.0, -2.0, 2.0, 6.0, 10.0]
        }
        SweepVariable::Power => {
            scenario.power_dbm = None;
            scenario.speed_kmh = Some([20.0, 40.0]);
            vec![10.0, 20.0, 30.0]
        }
        SweepVariable::Users => {
            scenario.users = Some(3);
            vec![2.0, 3.0, 4.0, 5.0, 6.0]
        }
        SweepVariable::Velocity => {
            training.speed_kmh = Some([10.0, 60.0]);
            vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0]
        }
        SweepVariable::Tau => vec![1.0, 3.0, 5.0],
    };
    Ok(ConfigFile {
        seed: 1,
        trials: scale.trials(),
        schemes: Scheme::ALL.to_vec(),
        output: PathBuf::from("results").join(name),
        scenario,
        sweep: SweepSpec { variable, values },
        dlpb: DlpbSpec::default(),
        baselines: BaselineSpec::default(),
        training,
    })
}

/// Parsed configuration of a named sweep (see [`preset_file`]).
pub fn sweep_presets(name: &str, scale: Scale) -> Result<ExperimentConfig> {
    ExperimentConfig::parse(preset_file(name, scale)?)
}
