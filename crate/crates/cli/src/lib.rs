//! The `etnode` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O, 2 usage or configuration, 3 numeric failure.

pub mod config;
pub mod error;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use etnode_core::attention::export_attention;
use etnode_core::checkpoint::Checkpoint;
use etnode_core::data::{csv_header, load_csv, resample_half, ColumnStats, WindowedDataset};
use etnode_core::odenet::TimeGrid;
use etnode_core::synthetic::{format_lag_spec, gen_synthetic, parse_lag_spec, SyntheticSpec};
use etnode_core::training::{evaluate, persistence_baseline, predict, train, METRICS_HEADER};
use etnode_core::Variant;

pub use config::RunConfig;
pub use error::CliError;

pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.cfg";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const EVAL_FILE: &str = "eval.csv";

#[derive(Debug, Parser)]
#[command(name = "etnode", version, about = "Continuous-time multivariate forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint, metrics history and run manifest.
    Train(Common),
    /// Predict at arbitrary offsets for every test window.
    Predict(Common),
    /// Per-offset RMSE and MAE on the test split, with the persistence baseline.
    Eval(Common),
    /// Write averaged variable and temporal attention weights as CSV.
    ExportAttention(Common),
    /// Generate a synthetic dataset with known lagged drivers.
    GenSynthetic(SynthArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Input CSV file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated positive offsets, strictly increasing.
    #[arg(long)]
    pub offsets: Option<String>,
    /// One of full, no_ode, no_att.
    #[arg(long)]
    pub variant: Option<String>,
    /// Use the even-index half of the series.
    #[arg(long)]
    pub resample_half: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub len: usize,
    /// Number of exogenous series.
    #[arg(long, default_value_t = 5)]
    pub exogenous: usize,
    /// Drivers as `x<j>:<lag>:<coeff>`, comma-separated.
    #[arg(long, default_value = "x1:3:0.6,x2:6:0.3")]
    pub lags: String,
    /// Standard deviation of the target noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Drop the autoregressive `0.3 y_{t-1}` term.
    #[arg(long)]
    pub no_ar: bool,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Resolves the config file and flag overrides.
pub fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.model.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    if let Some(c) = &common.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(o) = &common.offsets {
        cfg.offsets = Some(config::parse_offsets(o)?);
    }
    if let Some(v) = &common.variant {
        cfg.model.variant = v
            .parse::<Variant>()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if common.resample_half {
        cfg.resample_half = true;
    }
    Ok(cfg)
}

fn require<'a, T>(v: &'a Option<T>, what: &str) -> Result<&'a T, CliError> {
    v.as_ref()
        .ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

fn build_dataset(
    path: &Path,
    target: &str,
    exogenous: &[String],
    resample: bool,
    window: usize,
    horizon: usize,
    stats: Option<&[ColumnStats]>,
) -> Result<WindowedDataset, CliError> {
    let exogenous: Vec<String> = if exogenous.is_empty() {
        csv_header(path)?.into_iter().filter(|c| c != target).collect()
    } else {
        exogenous.to_vec()
    };
    let series = load_csv(path, target, &exogenous)?;
    let data = if resample {
        let r = resample_half(&series)?;
        WindowedDataset::build(&r.kept, Some(&r.held_out), window, horizon, stats)?
    } else {
        WindowedDataset::build(&series, None, window, horizon, stats)?
    };
    Ok(data)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn cmd_train(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    cfg.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data_path = require(&cfg.data, "--data or `data` key")?;
    let out = require(&cfg.out, "--out or `out` key")?;
    let data = build_dataset(
        data_path,
        &cfg.target,
        &cfg.exogenous,
        cfg.resample_half,
        cfg.model.window,
        cfg.model.horizon,
        None,
    )?;
    log::info!(
        "{} windows: train {:?}, validation {:?}, test {:?}",
        data.num_windows(),
        data.train,
        data.validation,
        data.test
    );
    create_dir(out)?;
    let manifest = format!(
        "# etnode run manifest; reproduce with `etnode train --config {MANIFEST_FILE}`\n{}",
        cfg.to_text()
    );
    let manifest_path = out.join(MANIFEST_FILE);
    fs::write(&manifest_path, manifest).map_err(|e| io_err(&manifest_path, e))?;

    let ckpt = train(&cfg.model, &data)?;
    ckpt.save(&out.join(CHECKPOINT_FILE))?;
    write_csv(
        &out.join(METRICS_FILE),
        &METRICS_HEADER,
        ckpt.history.iter().map(|m| m.record()),
    )?;
    let best = ckpt.history.iter().filter(|m| m.epoch == ckpt.epoch).last();
    println!(
        "trained {} for {} epochs; best epoch {} (rmse {})",
        cfg.model.variant,
        cfg.model.epochs,
        ckpt.epoch,
        best.map_or(f64::NAN, |m| m.rmse)
    );
    Ok(())
}

/// Loads the checkpoint and the dataset normalized with its stored statistics.
fn load_for_inference(cfg: &RunConfig) -> Result<(Checkpoint, WindowedDataset), CliError> {
    let ckpt_path = require(&cfg.checkpoint, "--checkpoint")?;
    let data_path = require(&cfg.data, "--data or `data` key")?;
    let mut ckpt = Checkpoint::load(ckpt_path)?;
    if cfg.solver_override {
        ckpt.config.solver = cfg.model.solver.clone();
    }
    let data = build_dataset(
        data_path,
        ckpt.target_name(),
        ckpt.exogenous_names(),
        cfg.resample_half,
        ckpt.config.window,
        ckpt.config.horizon,
        Some(&ckpt.stats),
    )?;
    Ok((ckpt, data))
}

fn grid_from(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<TimeGrid, CliError> {
    let offsets = cfg.offsets.clone().unwrap_or_else(|| ckpt.config.train_offsets());
    TimeGrid::new(offsets).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn cmd_predict(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let (ckpt, data) = load_for_inference(&cfg)?;
    let grid = grid_from(&cfg, &ckpt)?;
    let windows: Vec<usize> = data.test.clone().collect();
    if windows.is_empty() {
        return Err(CliError::Usage("the test split is empty".into()));
    }
    let preds = predict(&ckpt, &data, &grid, &windows)?;
    let rows = preds.iter().flat_map(|p| {
        grid.offsets()
            .iter()
            .zip(&p.values)
            .map(move |(m, v)| vec![p.window_end.to_string(), m.to_string(), v.to_string()])
    });
    let header = ["window_end_index", "offset", "prediction"];
    match &cfg.out {
        Some(dir) => {
            create_dir(dir)?;
            write_csv(&dir.join(PREDICTIONS_FILE), &header, rows)
        }
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            let stdout = Path::new("<stdout>");
            w.write_record(header).map_err(|e| io_err(stdout, e))?;
            for r in rows {
                w.write_record(r).map_err(|e| io_err(stdout, e))?;
            }
            w.flush().map_err(|e| io_err(stdout, e))
        }
    }
}

pub fn cmd_eval(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let (ckpt, data) = load_for_inference(&cfg)?;
    let grid = grid_from(&cfg, &ckpt)?;
    let model = evaluate(&ckpt, &data, &grid)?;
    let base = persistence_baseline(&data, &grid)?;
    let header = ["offset", "rmse", "mae", "baseline_rmse", "baseline_mae", "windows"];
    let rows: Vec<Vec<String>> = model
        .iter()
        .zip(&base)
        .map(|(m, b)| {
            vec![
                m.offset.to_string(),
                m.rmse.to_string(),
                m.mae.to_string(),
                b.rmse.to_string(),
                b.mae.to_string(),
                m.count.to_string(),
            ]
        })
        .collect();

    let mut stdout = std::io::stdout().lock();
    let table = |s: &mut std::io::StdoutLock| -> std::io::Result<()> {
        writeln!(s, "{:>8} {:>12} {:>12} {:>14} {:>14} {:>8}", header[0], header[1], header[2], header[3], header[4], header[5])?;
        for (m, b) in model.iter().zip(&base) {
            writeln!(
                s,
                "{:>8} {:>12.6} {:>12.6} {:>14.6} {:>14.6} {:>8}",
                m.offset, m.rmse, m.mae, b.rmse, b.mae, m.count
            )?;
        }
        Ok(())
    };
    table(&mut stdout).map_err(|e| io_err(Path::new("<stdout>"), e))?;
    if let Some(dir) = &cfg.out {
        create_dir(dir)?;
        write_csv(&dir.join(EVAL_FILE), &header, rows)?;
    }
    Ok(())
}

pub fn cmd_export_attention(common: &Common) -> Result<(), CliError> {
    let cfg = resolve(common)?;
    let out = require(&cfg.out, "--out")?.clone();
    let (ckpt, data) = load_for_inference(&cfg)?;
    if ckpt.config.variant == Variant::NoAtt {
        return Err(CliError::Usage(
            "the checkpoint was trained without attention (variant no_att)".into(),
        ));
    }
    let windows: Vec<usize> = data.test.clone().collect();
    if windows.is_empty() {
        return Err(CliError::Usage("the test split is empty".into()));
    }
    let summary = etnode_core::training::attention_summary(&ckpt, &data, &windows)?;
    create_dir(&out)?;
    export_attention(&summary, &ckpt.columns, &out)?;
    Ok(())
}

pub fn cmd_gen_synthetic(args: &SynthArgs) -> Result<(), CliError> {
    let out = require(&args.out, "--out")?;
    let spec = SyntheticSpec {
        len: args.len,
        exogenous: args.exogenous,
        drivers: parse_lag_spec(&args.lags).map_err(|e| CliError::Usage(e.to_string()))?,
        noise: args.noise,
        autoregressive: if args.no_ar { 0.0 } else { 0.3 },
    };
    let series = gen_synthetic(args.seed, &spec).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    series.write_csv(out)?;
    println!(
        "drivers {} ar {} noise {}",
        format_lag_spec(&spec.drivers),
        spec.autoregressive,
        spec.noise
    );
    Ok(())
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(c) => cmd_train(c),
        Command::Predict(c) => cmd_predict(c),
        Command::Eval(c) => cmd_eval(c),
        Command::ExportAttention(c) => cmd_export_attention(c),
        Command::GenSynthetic(a) => cmd_gen_synthetic(a),
    }
}
