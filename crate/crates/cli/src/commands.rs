use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Serialize;

use hri_bridge::{BridgeError, ServeConfig};
use hri_shield::config::AppConfig;
use hri_shield::forecast::eval::horizon_steps;
use hri_shield::forecast::synth::{self, SynthCorpus};
use hri_shield::forecast::{
    calibration, checkpoint, evaluate, AdeFde, Coverage, Forecaster, GaussianForecast, KalmanForecaster,
    LinearForecaster, NetForecaster, NetParams, ParticleForecaster, Sample,
};
use hri_shield::harness::{self, ReportFormat};
use hri_shield::sim::{self, ForecasterKind};
use hri_shield::Error;

/// Held-out data is generated with the training seed plus this offset.
pub const HELD_OUT_SEED_OFFSET: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Core(core) => core.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub struct Context {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
}

impl Context {
    pub fn new(out_dir: PathBuf, seed: Option<u64>) -> Result<Self, CliError> {
        std::fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
        Ok(Self { out_dir, seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

/// A missing or unreadable config file is a configuration error.
fn load_config(path: Option<&Path>) -> Result<AppConfig, CliError> {
    match path {
        None => Ok(AppConfig::default()),
        Some(p) => AppConfig::load(p).map_err(|e| CliError::Config(e.to_string())),
    }
}

fn train_seed(ctx: &Context, cfg: &AppConfig) -> u64 {
    ctx.seed.unwrap_or(cfg.training.seed)
}

fn corpus(cfg: &AppConfig, sequences: Option<usize>, seed: u64) -> Result<SynthCorpus, CliError> {
    let mut synth_cfg = cfg.synth.clone();
    if let Some(n) = sequences {
        synth_cfg.sequences = n;
    }
    synth_cfg.validate()?;
    Ok(synth::synth_dataset(&synth_cfg, seed)?)
}

/// Explicit flag, then the config, then `<out-dir>/model.json`.
fn resolve_checkpoint(ctx: &Context, flag: Option<PathBuf>, cfg: &AppConfig) -> Option<PathBuf> {
    flag.or_else(|| cfg.checkpoint().cloned()).or_else(|| {
        let default = ctx.path("model.json");
        default.exists().then_some(default)
    })
}

fn load_model(path: &Path) -> Result<NetParams, CliError> {
    checkpoint::load(path).map_err(|e| CliError::Config(format!("cannot load checkpoint: {e}")))
}

/// The model is needed only when the scenario uses the trained forecaster.
fn scenario_model(ctx: &Context, flag: Option<PathBuf>, cfg: &AppConfig) -> Result<Option<NetParams>, CliError> {
    if !matches!(cfg.scenario.forecaster, ForecasterKind::Trained { .. }) {
        return Ok(None);
    }
    match resolve_checkpoint(ctx, flag, cfg) {
        Some(p) => load_model(&p).map(Some),
        None => {
            Err(CliError::Config("the trained forecaster needs a checkpoint: run `train` or pass --checkpoint".into()))
        }
    }
}

pub fn synth(ctx: &Context, config: Option<&Path>, sequences: Option<usize>) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let seed = ctx.seed.unwrap_or(0);
    let data = corpus(&cfg, sequences, seed)?;
    let dir = ctx.path("synth");
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    for (i, rec) in data.recordings.iter().enumerate() {
        synth::write_recording_csv(&dir.join(format!("recording_{i:04}.csv")), rec)?;
    }
    let speeds: Vec<f64> =
        data.samples.iter().map(|s| synth::mean_speed(&synth::sample_path(s), s.window.dt)).collect();
    let mean = speeds.iter().sum::<f64>() / speeds.len().max(1) as f64;
    println!(
        "wrote {} recordings ({} windows, mean speed {mean:.3} m/s) to {}",
        data.recordings.len(),
        data.samples.len(),
        dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    sequences: usize,
    seconds: f64,
    epoch_losses: Vec<f64>,
}

pub fn train(
    ctx: &Context,
    config: Option<&Path>,
    sequences: Option<usize>,
    epochs: Option<usize>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let mut train_cfg = cfg.training.clone();
    train_cfg.seed = train_seed(ctx, &cfg);
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    train_cfg.validate()?;
    let data = corpus(&cfg, sequences, train_cfg.seed)?;
    log::info!("training on {} sequences for {} epochs", data.samples.len(), train_cfg.epochs);
    let report = hri_shield::forecast::train(&data.samples, &train_cfg)?;
    let model_path = ctx.path("model.json");
    checkpoint::save(&model_path, &report.params)?;
    let summary = TrainSummary {
        seed: train_cfg.seed,
        sequences: data.samples.len(),
        seconds: report.seconds,
        epoch_losses: report.epoch_losses,
    };
    ctx.write_json("train_report.json", &summary)?;
    println!(
        "trained in {:.1} s, final loss {:.6}; checkpoint {}",
        summary.seconds,
        summary.epoch_losses.last().copied().unwrap_or(f64::NAN),
        model_path.display()
    );
    Ok(())
}

fn predict_all(f: &mut dyn Forecaster, samples: &[Sample], horizon: usize) -> Result<Vec<GaussianForecast>, CliError> {
    samples.iter().map(|s| f.predict(&s.window, horizon).map_err(CliError::from)).collect()
}

/// Baselines plus the trained model when a checkpoint is available.
fn forecasters(
    ctx: &Context,
    flag: Option<PathBuf>,
    cfg: &AppConfig,
) -> Result<Vec<(String, Box<dyn Forecaster>)>, CliError> {
    let mut out: Vec<(String, Box<dyn Forecaster>)> = Vec::new();
    match resolve_checkpoint(ctx, flag, cfg) {
        Some(p) => out.push(("trained".into(), Box::new(NetForecaster { params: load_model(&p)? }))),
        None => log::warn!("no checkpoint found; evaluating baselines only"),
    }
    out.push(("linear".into(), Box::new(LinearForecaster)));
    out.push(("kalman".into(), Box::new(KalmanForecaster(Default::default()))));
    let particle = hri_shield::forecast::ParticleConfig { seed: ctx.seed.unwrap_or(0), ..Default::default() };
    out.push(("particle".into(), Box::new(ParticleForecaster::new(particle))));
    Ok(out)
}

fn held_out(ctx: &Context, cfg: &AppConfig, sequences: Option<usize>) -> Result<SynthCorpus, CliError> {
    corpus(cfg, sequences.or(Some(1000)), train_seed(ctx, cfg).wrapping_add(HELD_OUT_SEED_OFFSET))
}

#[derive(Serialize)]
struct EvalRow {
    forecaster: String,
    horizon_ms: f64,
    steps: usize,
    #[serde(flatten)]
    errors: AdeFde,
}

pub fn forecast_eval(
    ctx: &Context,
    config: Option<&Path>,
    checkpoint: Option<PathBuf>,
    horizon_ms: f64,
    sequences: Option<usize>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    if !(horizon_ms > 0.0) {
        return Err(CliError::Config("--horizon-ms must be positive".into()));
    }
    let data = held_out(ctx, &cfg, sequences)?;
    let dt = data.samples[0].window.dt;
    let steps = horizon_steps(horizon_ms, dt);
    if steps > cfg.synth.t_out {
        return Err(CliError::Config(format!(
            "horizon of {steps} steps exceeds the {} recorded future steps",
            cfg.synth.t_out
        )));
    }
    let truths: Vec<_> = data.samples.iter().map(|s| s.truth[..steps].to_vec()).collect();
    let mut rows = Vec::new();
    for (name, mut f) in forecasters(ctx, checkpoint, &cfg)? {
        let preds = predict_all(f.as_mut(), &data.samples, steps)?;
        let errors = evaluate(&preds, &truths);
        println!(
            "{name:9} ADE {:.4} ± {:.4} m  FDE {:.4} ± {:.4} m",
            errors.ade.mean, errors.ade.std, errors.fde.mean, errors.fde.std
        );
        rows.push(EvalRow { forecaster: name, horizon_ms, steps, errors });
    }
    ctx.write_json("forecast_eval.json", &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct CalibrationRow {
    forecaster: String,
    levels: Vec<Coverage>,
}

pub fn calibrate(
    ctx: &Context,
    config: Option<&Path>,
    checkpoint: Option<PathBuf>,
    sequences: Option<usize>,
    levels: &[f64],
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(CliError::Config("levels must lie strictly between 0 and 1".into()));
    }
    let data = held_out(ctx, &cfg, sequences)?;
    let horizon = cfg.synth.t_out;
    let truths: Vec<_> = data.samples.iter().map(|s| s.truth.clone()).collect();
    let mut rows = Vec::new();
    for (name, mut f) in forecasters(ctx, checkpoint, &cfg)? {
        // A deterministic forecast has no intervals to calibrate.
        if name == "linear" {
            continue;
        }
        let preds = predict_all(f.as_mut(), &data.samples, horizon)?;
        let cov = calibration(&preds, &truths, levels);
        let line: Vec<String> = cov.iter().map(|c| format!("{:.0}%: {:.3}", c.level * 100.0, c.coverage)).collect();
        println!("{name:9} {}", line.join("  "));
        rows.push(CalibrationRow { forecaster: name, levels: cov });
    }
    ctx.write_json("calibration.json", &rows)?;
    Ok(())
}

pub fn run_scenario(ctx: &Context, config: &Path, checkpoint: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load_config(Some(config))?;
    let scenario = cfg.scenario_config();
    let model = scenario_model(ctx, checkpoint, &cfg)?;
    let seeds = ctx.seed.map(|s| vec![s]).unwrap_or_else(|| scenario.seeds.clone());
    if seeds.is_empty() {
        return Err(CliError::Config("scenario.seeds is empty".into()));
    }
    let mut traces = Vec::with_capacity(seeds.len());
    for seed in seeds {
        let run = sim::run_scenario(&scenario, model.as_ref(), seed)?;
        let path = ctx.path(&format!("trace_{}_seed{seed}.jsonl", scenario.name));
        sim::write_trace(&path, &run.records)?;
        log::info!("seed {seed}: {} steps -> {}", run.records.len(), path.display());
        traces.push(run.records);
    }
    let report = harness::compute_metrics(&traces, &cfg.metrics)?;
    ctx.write_json("metrics.json", &report)?;
    println!(
        "{}: {} runs, violations {:.2} ± {:.2}, magnitude {:.4} ± {:.4} m, hand-TCP distance {:.3} m",
        report.label,
        report.runs,
        report.violation_count.mean,
        report.violation_count.std,
        report.violation_magnitude.mean,
        report.violation_magnitude.std,
        report.hand_tcp_distance.mean
    );
    Ok(())
}

pub fn sweep(ctx: &Context, grid: &Path, checkpoint: Option<PathBuf>, format: ReportFormat) -> Result<(), CliError> {
    let cfg = load_config(Some(grid))?;
    let mut grid = cfg.sweep_grid();
    if let Some(s) = ctx.seed {
        grid.scenario.seeds = vec![s];
    }
    let model = scenario_model(ctx, checkpoint, &cfg)?;
    let reports = harness::sweep(&grid, model.as_ref())?;
    let name = match format {
        ReportFormat::Csv => "sweep.csv",
        ReportFormat::Json => "sweep.json",
    };
    let path = ctx.path(name);
    harness::emit_report(&reports, format, &path)?;
    for r in &reports {
        match &r.error {
            Some(e) => println!("{:28} failed: {e}", r.label),
            None => println!(
                "{:28} violations {:6.2}  magnitude {:.4}  velocity {:.3} m/s",
                r.label, r.violation_count.mean, r.violation_magnitude.mean, r.avg_tcp_velocity.mean
            ),
        }
    }
    println!("report written to {}", path.display());
    if let Some(failed) = reports.iter().find(|r| r.error.is_some()) {
        return Err(CliError::Runtime(format!("sweep cell {} failed", failed.label)));
    }
    Ok(())
}

pub fn serve(
    ctx: &Context,
    addr: SocketAddr,
    config: Option<&Path>,
    rate_hz: f64,
    checkpoint: Option<PathBuf>,
) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let model = scenario_model(ctx, checkpoint, &cfg)?;
    let serve_cfg = ServeConfig { addr, rate_hz, scenario: cfg.scenario_config(), model, ..ServeConfig::default() };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    runtime.block_on(hri_bridge::serve(serve_cfg))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_errors_map_to_exit_code_2_and_others_to_3() {
        assert_eq!(CliError::from(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(Error::DegenerateGeometry).exit_code(), 3);
        let bind = BridgeError::Bind { addr: ([127, 0, 0, 1], 1).into(), source: std::io::Error::other("x") };
        assert_eq!(CliError::from(bind).exit_code(), 3);
        assert_eq!(CliError::from(BridgeError::Core(Error::Config("x".into()))).exit_code(), 2);
    }

    #[test]
    fn checkpoint_resolution_prefers_the_flag() {
        let dir = std::env::temp_dir().join(format!("hri-cli-{}", std::process::id()));
        let ctx = Context::new(dir.clone(), None).unwrap();
        let cfg = AppConfig::default();
        assert_eq!(resolve_checkpoint(&ctx, None, &cfg), None);
        std::fs::write(dir.join("model.json"), "{}").unwrap();
        assert_eq!(resolve_checkpoint(&ctx, None, &cfg), Some(dir.join("model.json")));
        let flag = PathBuf::from("elsewhere.json");
        assert_eq!(resolve_checkpoint(&ctx, Some(flag.clone()), &cfg), Some(flag));
        std::fs::remove_dir_all(dir).unwrap();
    }
}
