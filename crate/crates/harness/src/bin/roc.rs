use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use roc_core::marketdata::{self, OhlcColumns};
use roc_core::metrics::{format_table, write_reports_csv, Architecture, EvalReport, Variant};
use roc_gbdt::{assemble_design_matrix, GbdtModel};
use roc_harness::artifacts::{load_features, load_prepared, save_features, save_prepared, FeatureSet};
use roc_harness::pipeline::{self, load_series, TrainedCnn};
use roc_harness::plot::{overlay_rows, write_overlay, zoom_slice, ZOOM_ROWS};
use roc_harness::{emit_plot_data, run_ablation, HarnessConfig, Preset};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "roc", version, about = "Five-bar rate-of-change forecasting: pipeline stages and ablation runner")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file, applied over the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// `section.key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Run seed; also read from ROC_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    PlainCnn,
    Resnet,
}

impl From<Arch> for Architecture {
    fn from(a: Arch) -> Self {
        match a {
            Arch::PlainCnn => Architecture::PlainCnn,
            Arch::Resnet => Architecture::Resnet,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic OHLC bars.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate an OHLC CSV and report its shape and split.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Write the validated bars back out in canonical form.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Wavelet-denoise each OHLC column.
    Denoise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Indicator table, normalization and labelled windows.
    Features {
        /// OHLC CSV; synthetic bars when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        denoise: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a CNN on the training windows.
    TrainCnn {
        #[arg(long)]
        windows: PathBuf,
        #[arg(long, value_enum)]
        arch: Arch,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract CNN features for the train and test windows.
    Extract {
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        cnn: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Boost on CNN features plus indicator rows.
    TrainGbdt {
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a readable tree dump.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Score test windows with a CNN head or a boosted model.
    Evaluate {
        #[arg(long)]
        variant: Variant,
        #[arg(long)]
        windows: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long, required_unless_present = "gbdt")]
        cnn: Option<PathBuf>,
        #[arg(long)]
        gbdt: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// First overlay row of an 8-row zoom export.
        #[arg(long)]
        zoom_start: Option<usize>,
    },
    /// Run selected variants end to end (all eight by default).
    Ablation {
        /// Comma-separated variant tags.
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<Variant>>,
        /// OHLC CSV; synthetic bars when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        zoom_start: Option<usize>,
    },
}

fn config(common: &Common, input: Option<&Path>) -> Result<HarnessConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(p) = input {
        overrides.push(format!("data.input={:?}", p.display().to_string()));
    }
    Ok(HarnessConfig::resolve(common.preset, common.config.as_deref(), &overrides, common.seed)?)
}

fn write_columns(cols: &OhlcColumns<f64>, timestamps: &[i64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(marketdata::CSV_HEADER)?;
    for (i, t) in timestamps.iter().enumerate() {
        w.write_record([t.to_string(), cols.open[i].to_string(), cols.high[i].to_string(), cols.low[i].to_string(), cols.close[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn write_zoom(rows: &[roc_harness::OverlayRow], start: usize, out_dir: &Path) -> Result<()> {
    let slice = zoom_slice(rows, start, ZOOM_ROWS);
    if slice.len() < ZOOM_ROWS {
        bail!("zoom start {start} leaves only {} of {ZOOM_ROWS} rows", slice.len());
    }
    write_overlay(slice, &out_dir.join("zoom.csv"))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let common = &cli.common;
    match cli.command {
        Command::Synth { out } => {
            let cfg = config(common, None)?;
            let series = roc_harness::generate(&cfg.synth, cfg.seed)?;
            marketdata::save_csv(&series, &out).with_context(|| out.display().to_string())?;
            println!("wrote {} bars to {}", series.len(), out.display());
        }
        Command::Ingest { input, out } => {
            let cfg = config(common, Some(&input))?;
            let series = load_series(&cfg)?;
            let end = pipeline::train_end(series.len(), &cfg.data)?;
            let ts = series.timestamps();
            println!(
                "{}: {} bars, interval {}s, {} .. {}, train bars {}, test bars {}",
                series.symbol(),
                series.len(),
                series.interval_seconds(),
                ts[0],
                ts[ts.len() - 1],
                end,
                series.len() - end
            );
            if let Some(out) = out {
                marketdata::save_csv(&series, &out)?;
            }
        }
        Command::Denoise { input, out } => {
            let cfg = config(common, Some(&input))?;
            let series = load_series(&cfg)?;
            let cols = pipeline::denoise_columns(&series.columns(), cfg.data.zeroed_levels)?;
            write_columns(&cols, &series.timestamps(), &out)?;
            println!("wrote {} denoised bars to {}", series.len(), out.display());
        }
        Command::Features { input, denoise, out_dir } => {
            let cfg = config(common, input.as_deref())?;
            let series = load_series(&cfg)?;
            fs::create_dir_all(&out_dir)?;
            let table = pipeline::indicator_table(&series, &cfg.data, denoise)?;
            table.write_csv(fs::File::create(out_dir.join("features.csv"))?)?;
            let data = pipeline::prepare(&series, &cfg.data, denoise)?;
            save_prepared(&data, &out_dir.join("windows.bin"))?;
            println!("{} windows ({} train, {} test) in {}", data.windows.len(), data.train.len(), data.test.len(), out_dir.display());
        }
        Command::TrainCnn { windows, arch, out } => {
            let cfg = config(common, None)?;
            let data = load_prepared(&windows)?;
            let t = Instant::now();
            let cnn = TrainedCnn::train(&cfg, arch.into(), &data)?;
            cnn.save(&out)?;
            let last = cnn.loss_history().last().copied().unwrap_or(f64::NAN);
            println!("trained in {:.1}s, {} epochs, final loss {last:.6}", t.elapsed().as_secs_f64(), cnn.loss_history().len());
        }
        Command::Extract { windows, cnn, out } => {
            let data = load_prepared(&windows)?;
            let cnn = TrainedCnn::load(&cnn)?;
            let set = FeatureSet { train: cnn.extract(&data.train_windows())?, test: cnn.extract(&data.test_windows())? };
            save_features(&set, &out)?;
            println!("{} train and {} test rows × {} features", set.train.rows(), set.test.rows(), set.train.cols());
        }
        Command::TrainGbdt { windows, features, out, dump } => {
            let cfg = config(common, None)?;
            let data = load_prepared(&windows)?;
            let set = load_features(&features)?;
            let x = assemble_design_matrix(&set.train, &data.indicator_rows(&data.train))?;
            let model = roc_gbdt::fit(&x, &data.labels(&data.train), &cfg.gbdt)?;
            model.save(&out)?;
            if let Some(p) = dump {
                fs::write(p, model.dump(None))?;
            }
            println!("{} trees on {} × {} ({:?})", model.num_trees(), x.rows(), x.cols(), model.stop_reason);
        }
        Command::Evaluate { variant, windows, features, cnn, gbdt, out_dir, zoom_start } => {
            let data = load_prepared(&windows)?;
            let set = load_features(&features)?;
            if variant.denoise() != data.denoised {
                bail!("{variant} expects denoise={}, windows file has {}", variant.denoise(), data.denoised);
            }
            let pred = match (&gbdt, variant.use_gbdt()) {
                (Some(path), true) => {
                    let model = GbdtModel::load(path)?;
                    model.predict(&assemble_design_matrix(&set.test, &data.indicator_rows(&data.test))?)?
                }
                (None, false) => TrainedCnn::load(cnn.as_ref().expect("required by clap"))?.head(&set.test)?,
                _ => bail!("{variant} {} a boosted model", if variant.use_gbdt() { "needs" } else { "does not use" }),
            };
            let report = EvalReport::new(variant, &pred, &data.labels(&data.test))?;
            fs::create_dir_all(&out_dir)?;
            write_reports_csv(std::slice::from_ref(&report), fs::File::create(out_dir.join("report.csv"))?)?;
            let rows = overlay_rows(&data.timestamps, &data.raw_close, &data.end_indices(&data.test), &pred, data.horizon)?;
            write_overlay(&rows, &out_dir.join("overlay.csv"))?;
            if let Some(s) = zoom_start {
                write_zoom(&rows, s, &out_dir)?;
            }
            print!("{}", format_table(&[report]));
        }
        Command::Ablation { variants, input, out_dir, zoom_start } => {
            let cfg = config(common, input.as_deref())?;
            let series = load_series(&cfg)?;
            let variants = variants.unwrap_or_else(|| Variant::ALL.to_vec());
            let t = Instant::now();
            let result = run_ablation(&cfg, &series, &variants)?;
            emit_plot_data(&result, &out_dir)?;
            fs::write(out_dir.join("config.toml"), cfg.to_toml())?;
            if let (Some(s), Some(main)) = (zoom_start, result.primary()) {
                write_zoom(&main.overlay, s, &out_dir)?;
            }
            print!("{}", format_table(&result.reports()));
            for (stage, secs) in &result.timings {
                log::info!("{stage}: {secs:.1}s");
            }
            log::info!("total {:.1}s, config {}", t.elapsed().as_secs_f64(), result.config_hash);
            if !result.failures.is_empty() {
                for (v, e) in &result.failures {
                    eprintln!("{v} failed: {e}");
                }
                bail!("{} of {} variants failed", result.failures.len(), variants.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
