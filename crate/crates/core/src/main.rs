use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use funnel_dsc::experiment::{run_experiment, ExperimentConfig, Outcome, Preset};
use funnel_dsc::{ControlMode, FilterUpdate};

const OUT_DIR_ENV: &str = "FUNNEL_DSC_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "funnel-dsc-out";

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PresetArg {
    Electromechanical,
    SingleLink,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Adaptive,
    ApproximatorFree,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FilterArg {
    Exact,
    Explicit,
}

/// Run a prescribed-performance dynamic surface control experiment and write
/// its trajectory (CSV) and verification summaries (text and JSON).
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Built-in experiment (ignored when --config is given).
    #[arg(long, value_enum, default_value = "electromechanical")]
    preset: PresetArg,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Integration step [s].
    #[arg(long)]
    dt: Option<f64>,
    /// Simulation horizon [s].
    #[arg(long)]
    t_end: Option<f64>,
    /// Initial plant state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Output directory [default: $FUNNEL_DSC_OUT_DIR or ./funnel-dsc-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run these configuration files in parallel, each into `<out>/<file stem>`.
    #[arg(long, num_args = 1.., conflicts_with = "config")]
    sweep: Vec<PathBuf>,
    /// Replace sign(z) by tanh(z/EPS) in the stage scaling.
    #[arg(long, value_name = "EPS")]
    sign_smoothing: Option<f64>,
    #[arg(long, value_enum)]
    filter_update: Option<FilterArg>,
    /// Keep every N-th integration step in the trajectory.
    #[arg(long)]
    record_every: Option<usize>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, conflicts_with = "sweep")]
    print_config: bool,
}

impl Cli {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(m) = self.mode {
            cfg.sim.mode = match m {
                ModeArg::Adaptive => ControlMode::Adaptive,
                ModeArg::ApproximatorFree => ControlMode::ApproximatorFree,
            };
        }
        if let Some(dt) = self.dt {
            cfg.sim.dt = dt;
        }
        if let Some(t) = self.t_end {
            cfg.sim.t_end = t;
        }
        if let Some(x0) = &self.x0 {
            cfg.sim.x0 = x0.clone();
        }
        if let Some(eps) = self.sign_smoothing {
            cfg.sim.sign_smoothing = eps;
        }
        if let Some(f) = self.filter_update {
            cfg.sim.filter_update = match f {
                FilterArg::Exact => FilterUpdate::Exact,
                FilterArg::Explicit => FilterUpdate::Explicit,
            };
        }
        if let Some(r) = self.record_every {
            cfg.sim.record_every = r;
        }
    }

    fn base_out(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    fn prepare(&self, path: Option<&Path>) -> Result<ExperimentConfig, String> {
        let mut cfg = match path {
            Some(p) => ExperimentConfig::load(p).map_err(|e| e.to_string())?,
            None => ExperimentConfig::preset(match self.preset {
                PresetArg::Electromechanical => Preset::Electromechanical,
                PresetArg::SingleLink => Preset::SingleLink,
            })
            .expect("built-in presets exist"),
        };
        self.apply(&mut cfg);
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn execute(cli: &Cli, path: Option<&Path>, out: PathBuf) -> Result<Outcome, String> {
    let cfg = cli.prepare(path)?;
    let out = cfg
        .output
        .clone()
        .filter(|_| cli.out.is_none() && path.is_some())
        .unwrap_or(out);
    run_experiment(&cfg, &out).map_err(|e| e.to_string())
}

fn report(label: &str, result: &Result<Outcome, String>) -> u8 {
    match result {
        Ok(o) => {
            let r = &o.report;
            println!(
                "{label}: {} (transient {}, steady {}, max |e| after settling {:.3e}, max |u| {:.3e})",
                if o.exit_code == 0 { "PASS" } else { "FAIL" },
                r.transient_ok,
                r.steady_ok,
                r.max_abs_error_after_t,
                r.max_abs_control,
            );
            if let Some(b) = r.breach {
                eprintln!("{label}: {b}");
            }
            o.exit_code as u8
        }
        Err(e) => {
            eprintln!("{label}: error: {e}");
            2
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let base = cli.base_out();
    if cli.print_config {
        return match cli
            .prepare(cli.config.as_deref())
            .and_then(|c| c.to_toml().map_err(|e| e.to_string()))
        {
            Ok(text) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        };
    }
    let code = if cli.sweep.is_empty() {
        let result = execute(&cli, cli.config.as_deref(), base.clone());
        let label = cli
            .config
            .as_ref()
            .map_or_else(|| format!("{:?}", cli.preset), |p| p.display().to_string());
        let code = report(&label, &result);
        if result.is_ok() {
            println!("artifacts: {}", base.display());
        }
        code
    } else {
        let results: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = cli
                .sweep
                .iter()
                .map(|path| {
                    let stem = path
                        .file_stem()
                        .map_or_else(|| "run".into(), |s| s.to_owned());
                    let out = base.join(stem);
                    let cli = &cli;
                    scope.spawn(move || execute(cli, Some(path), out))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err("worker panicked".into())))
                .collect()
        });
        cli.sweep
            .iter()
            .zip(&results)
            .map(|(p, r)| report(&p.display().to_string(), r))
            .max()
            .unwrap_or(0)
    };
    ExitCode::from(code)
}
