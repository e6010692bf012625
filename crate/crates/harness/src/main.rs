use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use eqz_harness::calibration::{run_calibration, write_calibration_csv};
use eqz_harness::config::{ExperimentConfig, GainTableConfig, HistogramConfig, Mode};
use eqz_harness::experiment::{resolve_path, Experiment, RunOptions};
use eqz_harness::manifest::Manifest;
use eqz_harness::report::{emit_gain_table, emit_llr_histogram, write_gain_csv, write_histogram_csv};
use eqz_harness::sweep::{read_ber_csv, run_sweep, write_ber_csv, write_iteration_csv};
use eqz_harness::training::{run_training, use_checkpoints};

#[derive(Parser)]
#[command(name = "eqzsim", version, about = "EqzNet equalizer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every `eqznet_train` equalizer at each of its Eb/N0 points.
    Train(Common),
    /// Monte-Carlo BER sweep.
    Sweep(Common),
    /// Choose N1 = N2 from sliding-window MAP calibration.
    CalibrateWindow(Common),
    /// dB gain versus complexity factor at a target BER.
    GainTable(Common),
    /// Histogram of output LLRs per equalizer.
    LlrHist(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0: one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// sweep, llr-hist: load `eqznet_train` equalizers from checkpoints
    /// written by `train` into this directory instead of retraining.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            seed: self.seed,
            workers: self.workers,
            base_dir: self.config.parent().map(Path::to_path_buf).unwrap_or_default(),
        }
    }

    fn read_config(&self) -> Result<String> {
        std::fs::read_to_string(&self.config).with_context(|| format!("reading {}", self.config.display()))
    }

    fn prepare_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))
    }

    fn experiment(&self, text: &str) -> Result<Experiment> {
        let cfg = ExperimentConfig::from_toml(text).with_context(|| format!("in {}", self.config.display()))?;
        Experiment::new(self.with_checkpoints(cfg)?, &self.options())
    }

    fn with_checkpoints(&self, cfg: ExperimentConfig) -> Result<ExperimentConfig> {
        Ok(match &self.checkpoints {
            Some(dir) => use_checkpoints(&cfg, &std::path::absolute(dir)?),
            None => cfg,
        })
    }

    fn manifest(&self, command: &str, text: &str, seed: u64) -> Manifest {
        Manifest::new(command, &self.config, text, seed, self.options().worker_count())
    }
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(c) => train(&c),
        Command::Sweep(c) => sweep(&c),
        Command::CalibrateWindow(c) => calibrate(&c),
        Command::GainTable(c) => gain_table(&c),
        Command::LlrHist(c) => llr_hist(&c),
    }
}

fn train(c: &Common) -> Result<()> {
    let text = c.read_config()?;
    let exp = c.experiment(&text)?;
    c.prepare_out()?;
    let artifacts = run_training(&exp, &c.out)?;
    let mut m = c.manifest("train", &text, exp.master_seed);
    for a in &artifacts {
        println!("{} @ {} dB -> {}", a.label, a.ebn0_db, a.checkpoint.display());
        m.outputs.push(a.checkpoint.display().to_string());
        m.outputs.push(a.trace.display().to_string());
    }
    if artifacts.is_empty() {
        m.notes.push("config has no eqznet_train equalizers".into());
        eprintln!("nothing to train: no eqznet_train equalizers in config");
    }
    m.write(&c.out)
}

fn sweep(c: &Common) -> Result<()> {
    let text = c.read_config()?;
    let exp = c.experiment(&text)?;
    c.prepare_out()?;
    let records = run_sweep(&exp, c.options().worker_count())?;
    let mut m = c.manifest("sweep", &text, exp.master_seed);
    let ber = c.out.join("ber.csv");
    write_ber_csv(&records, &ber)?;
    m.outputs.push(ber.display().to_string());
    if exp.config.mode == Mode::Turbo {
        let it = c.out.join("iterations.csv");
        write_iteration_csv(&records, &it)?;
        m.outputs.push(it.display().to_string());
    }
    if let Some(cal) = &exp.calibration {
        let p = c.out.join("calibration.csv");
        write_calibration_csv(cal, &p)?;
        m.outputs.push(p.display().to_string());
    }
    m.notes.push(format!("geometry: n1={} n2={}", exp.geometry.0, exp.geometry.1));
    for r in &records {
        let flag = if r.max_bits_reached { "  [max bits reached]" } else { "" };
        println!(
            "{:>24} {:>6} dB  BER {:.3e}  ({} / {}){flag}",
            r.equalizer, r.ebn0_db, r.ber, r.errors, r.bits
        );
        if r.max_bits_reached {
            m.notes.push(format!(
                "max bits reached: {} at {} dB with {} errors",
                r.equalizer, r.ebn0_db, r.errors
            ));
        }
    }
    m.write(&c.out)
}

fn calibrate(c: &Common) -> Result<()> {
    let text = c.read_config()?;
    let exp = c.experiment(&text)?;
    c.prepare_out()?;
    let outcome = match &exp.calibration {
        Some(o) => o.clone(),
        None => run_calibration(&exp)?,
    };
    let p = c.out.join("calibration.csv");
    write_calibration_csv(&outcome, &p)?;
    let (n1, n2) = outcome.geometry;
    let r = &outcome.report;
    println!(
        "window {} ({}): n1 = {n1}, n2 = {n2}",
        r.window,
        if r.aligned { "within target" } else { "largest probed, target not met" }
    );
    let mut m = c.manifest("calibrate-window", &text, exp.master_seed);
    m.outputs.push(p.display().to_string());
    m.notes.push(format!("window: {} n1={n1} n2={n2} aligned={}", r.window, r.aligned));
    m.write(&c.out)
}

fn gain_table(c: &Common) -> Result<()> {
    let text = c.read_config()?;
    let cfg = GainTableConfig::load(&c.config)?;
    let base = c.options().base_dir;
    let mut records = Vec::new();
    for p in &cfg.records {
        records.extend(read_ber_csv(&resolve_path(&base, p))?);
    }
    let rows = emit_gain_table(&records, cfg.target_ber, &cfg.reference, &cfg.architectures, (cfg.n1, cfg.n2))?;
    c.prepare_out()?;
    let p = c.out.join("gain_table.csv");
    write_gain_csv(&rows, cfg.target_ber, &p)?;
    for r in &rows {
        println!(
            "{:>24}  gain {:>8}  complexity {:>6}  {}",
            r.equalizer,
            r.gain_db.map(|g| format!("{g:.2} dB")).unwrap_or_else(|| "-".into()),
            r.complexity_factor.map(|f| format!("{f:.2}")).unwrap_or_else(|| "-".into()),
            r.status
        );
    }
    let mut m = c.manifest("gain-table", &text, c.seed.unwrap_or(0));
    m.outputs.push(p.display().to_string());
    m.write(&c.out)
}

fn llr_hist(c: &Common) -> Result<()> {
    let text = c.read_config()?;
    let cfg = HistogramConfig::load(&c.config)?;
    let exp = Experiment::new(c.with_checkpoints(cfg.experiment.clone())?, &c.options())?;
    let hists = emit_llr_histogram(&exp, cfg.ebn0_db, cfg.symbols)?;
    c.prepare_out()?;
    let p = c.out.join("llr_hist.csv");
    write_histogram_csv(&hists, &p)?;
    for h in &hists {
        println!("{:>24}  P(|LLR| < 1) = {:.4}", h.equalizer, h.mass_below(1.0));
    }
    let mut m = c.manifest("llr-hist", &text, exp.master_seed);
    m.outputs.push(p.display().to_string());
    m.write(&c.out)
}
