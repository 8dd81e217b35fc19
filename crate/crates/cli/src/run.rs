use std::path::{Path, PathBuf};

use herding_core::model::{ControlMode, ScenarioConfig};
use herding_core::sim::{metrics, run, MetricsError};

use crate::output::{trajectory_csv, write_atomic};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    Csv,
    Json,
    #[default]
    Both,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "both" => Ok(Format::Both),
            other => Err(format!("unknown format `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: PathBuf,
    pub mode: Option<ControlMode>,
    pub seed: Option<u64>,
    pub dt: Option<f64>,
    pub t_max: Option<f64>,
    pub out_dir: PathBuf,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub trajectory_csv: Option<PathBuf>,
    pub metrics_json: Option<PathBuf>,
    pub config_echo: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub success: bool,
    pub artifacts: RunArtifacts,
}

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_ECHO_FILE: &str = "config.json";

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(ScenarioConfig::from_json_str(&text)?)
}

pub fn cmd_run(opts: &RunOptions) -> Result<RunReport, CliError> {
    let mut cfg = load_config(&opts.config)?;
    if let Some(mode) = opts.mode {
        cfg.mode = mode;
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(dt) = opts.dt {
        cfg.dt = dt;
    }
    if let Some(t_max) = opts.t_max {
        cfg.t_max = t_max;
    }
    cfg.resolve();
    for warning in cfg.validate()? {
        log::warn!("{warning}");
    }

    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(&opts.out_dir).map_err(io(&opts.out_dir))?;
    let config_echo = opts.out_dir.join(CONFIG_ECHO_FILE);
    write_atomic(&config_echo, cfg.to_json_pretty().as_bytes()).map_err(io(&config_echo))?;

    let log = run(&cfg).map_err(|failure| {
        log::error!("run aborted after {} steps", failure.partial.records.len());
        CliError::Sim(Box::new(failure))
    })?;
    log::info!(
        "{} after {:.2} s ({} steps, {} relaxed solves, {} clamps, {} perturbations)",
        if log.summary.success { "succeeded" } else { "did not succeed" },
        log.summary.final_time,
        log.summary.steps,
        log.summary.relax_count,
        log.summary.clamp_count,
        log.summary.perturb_count
    );

    let mut artifacts = RunArtifacts {
        trajectory_csv: None,
        metrics_json: None,
        config_echo,
    };
    if matches!(opts.format, Format::Csv | Format::Both) {
        let path = opts.out_dir.join(TRAJECTORY_FILE);
        write_atomic(&path, trajectory_csv(&log, cfg.m, cfg.n).as_bytes()).map_err(io(&path))?;
        artifacts.trajectory_csv = Some(path);
    }
    if matches!(opts.format, Format::Json | Format::Both) {
        let path = opts.out_dir.join(METRICS_FILE);
        let body = match metrics(&log, cfg.hold_time) {
            Ok(m) => serde_json::to_string_pretty(&m),
            Err(MetricsError::EmptyLog) => serde_json::to_string_pretty(&serde_json::json!({
                "pairs": log.pairs,
                "summary": log.summary,
            })),
        }
        .expect("metrics serialise");
        write_atomic(&path, body.as_bytes()).map_err(io(&path))?;
        artifacts.metrics_json = Some(path);
    }
    Ok(RunReport {
        success: log.summary.success,
        artifacts,
    })
}
