//! Experiment configuration, built-in presets and artifact export.
//!
//! A configuration file is TOML. When it names a `preset` other than `custom`,
//! every section it leaves out is taken from that preset, and the sections it
//! does give are merged key by key on top of it.
//!
//! ```toml
//! preset = "electromechanical"
//!
//! [sim]
//! dt = 1e-5          # s
//! t_end = 3.0        # s
//! x0 = [-500.0, -300.0, -200.0]
//! mode = "adaptive"  # or "approximator-free"
//!
//! [perf]
//! b = 0.1
//! c = 0.05           # rad, terminal envelope
//! settle_time = 0.5  # s
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::StageGains;
use crate::fuzzy::{FuzzyError, GaussianGrid};
use crate::perf::{ErrorTransform, PerfError, PerfFunction, TransformKind};
use crate::plant::{
    electromechanical, integrator_chain, single_link, ElectromechanicalParams, PlantError,
    ReferenceSignal, SingleLinkParams, SinusoidSpec, StrictFeedbackPlant,
};
use crate::sim::{SimConfig, SimError, Simulation, VerificationReport};
use crate::ControlMode;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const SUMMARY_TEXT_FILE: &str = "summary.txt";
pub const SUMMARY_JSON_FILE: &str = "summary.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(String),
    #[error("invalid configuration field `{field}`: {reason}")]
    Field { field: String, reason: String },
}

impl ConfigError {
    fn field(field: impl Into<String>, reason: impl ToString) -> Self {
        Self::Field {
            field: field.into(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot write {path}: {reason}")]
    Output { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    #[default]
    Electromechanical,
    SingleLink,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum PlantConfig {
    Electromechanical(ElectromechanicalParams),
    SingleLink(SingleLinkParams),
    IntegratorChain {
        order: usize,
        gain_lower: f64,
        gain_upper: f64,
    },
}

impl PlantConfig {
    pub fn build(&self) -> Result<StrictFeedbackPlant, PlantError> {
        match self {
            Self::Electromechanical(p) => electromechanical(p),
            Self::SingleLink(p) => single_link(p),
            Self::IntegratorChain {
                order,
                gain_lower,
                gain_upper,
            } => integrator_chain(*order, *gain_lower, *gain_upper),
        }
    }
}

/// Envelope parameters; the amplitude `a` follows from `eta(0) = pi/2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerfConfig {
    pub b: f64,
    /// Terminal envelope value [rad].
    pub c: f64,
    #[serde(default = "unit")]
    pub h: f64,
    /// Settling time T [s].
    pub settle_time: f64,
    #[serde(default)]
    pub transform: TransformKind,
}

fn unit() -> f64 {
    1.0
}

impl PerfConfig {
    pub fn build(&self) -> Result<PerfFunction, PerfError> {
        PerfFunction::from_terminal(self.b, self.c, self.h, self.settle_time)
    }
}

/// Evenly weighted Gaussian rules on the reference signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuzzyConfig {
    pub centers: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        Self {
            centers: (0..11).map(|k| -20.0 + 4.0 * k as f64).collect(),
            width: 5f64.sqrt(),
            amplitude: 10.0,
        }
    }
}

impl FuzzyConfig {
    pub fn build(&self) -> Result<GaussianGrid, FuzzyError> {
        GaussianGrid::uniform(&self.centers, self.width, self.amplitude)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub plant: PlantConfig,
    pub reference: SinusoidSpec,
    pub perf: PerfConfig,
    #[serde(default)]
    pub fuzzy: FuzzyConfig,
    pub sim: SimConfig,
    /// One entry per stage, stage 1 first.
    pub gains: Vec<StageGains>,
    /// Artifact directory; the caller's default applies when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Option<Self> {
        match preset {
            Preset::Electromechanical => Some(Self::electromechanical()),
            Preset::SingleLink => Some(Self::single_link()),
            Preset::Custom => None,
        }
    }

    /// DC-motor driven link, adaptive mode, `x0 = (5, 3, 2)`.
    pub fn electromechanical() -> Self {
        let huge = 1e10;
        let later = |varpi| StageGains::later(huge, huge, huge, huge, varpi, 10.0, 10.0, 1e-5);
        Self {
            preset: Preset::Electromechanical,
            plant: PlantConfig::Electromechanical(ElectromechanicalParams::default()),
            reference: SinusoidSpec::electromechanical(),
            perf: PerfConfig {
                b: 0.1,
                c: 0.05,
                h: 1.0,
                settle_time: 0.5,
                transform: TransformKind::SymmetricTan,
            },
            fuzzy: FuzzyConfig::default(),
            sim: SimConfig {
                x0: vec![5.0, 3.0, 2.0],
                mode: ControlMode::Adaptive,
                ..SimConfig::default()
            },
            gains: vec![
                StageGains::first(huge, huge, 10.0, 10.0),
                later(10.0),
                later(5e3),
            ],
            output: None,
        }
    }

    /// Single rigid link, approximator-free mode, starting at rest.
    pub fn single_link() -> Self {
        let g = 1e6;
        Self {
            preset: Preset::SingleLink,
            plant: PlantConfig::SingleLink(SingleLinkParams::default()),
            reference: SinusoidSpec::single_link(),
            perf: PerfConfig {
                b: 0.9,
                c: 0.05,
                h: 1.0,
                settle_time: 0.5,
                transform: TransformKind::SymmetricTan,
            },
            fuzzy: FuzzyConfig::default(),
            sim: SimConfig {
                x0: vec![0.0, 0.0],
                mode: ControlMode::ApproximatorFree,
                ..SimConfig::default()
            },
            gains: vec![
                StageGains::first(g, g, 10.0, 10.0),
                StageGains::later(g, g, g, g, 10.0, 10.0, 10.0, 1e-3),
            ],
            output: None,
        }
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Parses TOML text, filling missing sections from the named preset.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let preset = match user.get("preset") {
            Some(v) => {
                Preset::deserialize(v.clone()).map_err(|e| ConfigError::field("preset", e))?
            }
            None => Preset::Custom,
        };
        let merged = match Self::preset(preset) {
            Some(base) => {
                let mut table =
                    toml::Table::try_from(&base).map_err(|e| ConfigError::Parse(e.to_string()))?;
                merge(&mut table, user);
                table
            }
            None => user,
        };
        let cfg = Self::deserialize(merged).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    /// Checks every section by building the simulation it describes.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.build().map(|_| ())
    }

    pub fn build(&self) -> Result<Simulation, ConfigError> {
        let plant = self
            .plant
            .build()
            .map_err(|e| ConfigError::field("plant", e))?;
        if self.gains.len() != plant.order() {
            return Err(ConfigError::field(
                "gains",
                format!(
                    "plant has {} stages but {} gain sets are given",
                    plant.order(),
                    self.gains.len()
                ),
            ));
        }
        let perf = self
            .perf
            .build()
            .map_err(|e| ConfigError::field("perf", e))?;
        let grid = self
            .fuzzy
            .build()
            .map_err(|e| ConfigError::field("fuzzy", e))?;
        for (name, v) in [
            ("reference.offset", self.reference.offset),
            ("reference.amplitude", self.reference.amplitude),
            ("reference.frequency", self.reference.frequency),
        ] {
            if !v.is_finite() {
                return Err(ConfigError::field(name, "must be finite"));
            }
        }
        Simulation::new(
            plant,
            ReferenceSignal::from_spec(&self.reference),
            self.gains.clone(),
            grid,
            ErrorTransform::new(perf, self.perf.transform),
            self.sim.clone(),
        )
        .map_err(|e| match e {
            SimError::Config { field, reason } => {
                ConfigError::field(format!("sim.{field}"), reason)
            }
            SimError::Controller(c) => ConfigError::field("gains", c),
            other => ConfigError::field("sim", other),
        })
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

/// Result of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Outcome {
    pub preset: Preset,
    pub mode: ControlMode,
    pub x0: Vec<f64>,
    pub dt: f64,
    pub amplitude: f64,
    pub report: VerificationReport,
    pub exit_code: i32,
}

impl Outcome {
    pub fn summary_text(&self) -> String {
        let r = &self.report;
        let verdict = |ok| if ok { "ok" } else { "FAILED" };
        let mut s = format!(
            "preset: {:?}\nmode: {:?}\nx0: {:?}\ndt: {:e} s\nenvelope amplitude a: {:.6}\n",
            self.preset, self.mode, self.x0, self.dt, self.amplitude
        );
        s += &format!(
            "transient bound |atan e| < eta: {}\n",
            verdict(r.transient_ok)
        );
        s += &format!(
            "steady bound |e| < {:.6} after settling: {}\n",
            r.steady_bound,
            verdict(r.steady_ok)
        );
        s += &format!(
            "max |e|: {:.6e}\nmax |e| after settling: {:.6e}\nmax |u|: {:.6e}\n",
            r.max_abs_error, r.max_abs_error_after_t, r.max_abs_control
        );
        s += &format!("gains inside declared bounds: {}\n", r.gain_bounds_ok);
        s += &format!(
            "simulated until t = {} s ({} steps planned)\n",
            r.final_time, r.steps
        );
        if let Some(b) = r.breach {
            s += &format!("breach: {b}\n");
        }
        s += "signal suprema:\n";
        for (name, v) in &r.signal_sup_norms {
            s += &format!("  {name}: {v:.6e}\n");
        }
        s
    }
}

/// Runs the experiment and writes the trajectory and both summaries into `out_dir`.
/// The exit code is 0 exactly when both bounds held.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, ExperimentError> {
    let sim = cfg.build()?;
    let (traj, report) = sim.run()?;
    let outcome = Outcome {
        preset: cfg.preset,
        mode: cfg.sim.mode,
        x0: cfg.sim.x0.clone(),
        dt: cfg.sim.dt,
        amplitude: sim.controller().transform().perf().a(),
        exit_code: if report.passed() { 0 } else { 1 },
        report,
    };
    let io = |path: &Path, e: &dyn std::fmt::Display| ExperimentError::Output {
        path: path.to_owned(),
        reason: e.to_string(),
    };
    fs::create_dir_all(out_dir).map_err(|e| io(out_dir, &e))?;
    let csv_path = out_dir.join(TRAJECTORY_FILE);
    let file = fs::File::create(&csv_path).map_err(|e| io(&csv_path, &e))?;
    traj.write_csv(std::io::BufWriter::new(file))
        .map_err(|e| io(&csv_path, &e))?;
    let text_path = out_dir.join(SUMMARY_TEXT_FILE);
    fs::write(&text_path, outcome.summary_text()).map_err(|e| io(&text_path, &e))?;
    let json_path = out_dir.join(SUMMARY_JSON_FILE);
    let json = serde_json::to_string_pretty(&outcome).map_err(|e| io(&json_path, &e))?;
    fs::write(&json_path, json).map_err(|e| io(&json_path, &e))?;
    Ok(outcome)
}
