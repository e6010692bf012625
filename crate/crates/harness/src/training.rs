//! `train` subcommand: one checkpoint and loss trace per trainable
//! equalizer and Eb/N0 point.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use eqz_core::eqznet::InitKind;

use crate::config::{EqualizerSpec, ExperimentConfig};
use crate::experiment::{format_db, slug, Experiment, TrainedNetwork};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingArtifact {
    pub label: String,
    pub ebn0_db: f64,
    pub checkpoint: PathBuf,
    pub trace: PathBuf,
    pub trace_rows: usize,
}

/// `<slug>_<ebn0>dB`; sweep configs refer to it as `<slug>_{ebn0}dB.json`.
pub fn artifact_stem(label: &str, ebn0_db: f64) -> String {
    format!("{}_{}dB", slug(label), format_db(ebn0_db))
}

/// Loss trace: one row per epoch of every stage (and bit network).
pub fn write_trace_csv(net: &TrainedNetwork, path: &Path) -> Result<usize> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "bit,stage,epoch,loss")?;
    let mut rows = 0;
    for (bit, stages) in net.traces.iter().enumerate() {
        for (stage, t) in stages.iter().enumerate() {
            for (epoch, loss) in t.epoch_loss.iter().enumerate() {
                writeln!(f, "{bit},{stage},{},{loss:e}", epoch + 1)?;
                rows += 1;
            }
        }
    }
    f.flush()?;
    Ok(rows)
}

fn persist(net: &TrainedNetwork, out: &Path) -> Result<TrainingArtifact> {
    let stem = artifact_stem(&net.label, net.ebn0_db);
    let checkpoint = out.join(format!("{stem}.json"));
    let trace = out.join(format!("{stem}_trace.csv"));
    net.checkpoint.save(&checkpoint)?;
    let trace_rows = write_trace_csv(net, &trace)?;
    Ok(TrainingArtifact {
        label: net.label.clone(),
        ebn0_db: net.ebn0_db,
        checkpoint,
        trace,
        trace_rows,
    })
}

/// Trains every `eqznet_train` equalizer over its grid, plus the
/// random-init twin where requested.
pub fn run_training(exp: &Experiment, out: &Path) -> Result<Vec<TrainingArtifact>> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut artifacts = Vec::new();
    for spec in &exp.config.equalizers {
        let EqualizerSpec::EqznetTrain { random_twin, init, .. } = spec else {
            continue;
        };
        for ebn0_db in exp.grid(spec) {
            artifacts.push(persist(&exp.train(spec, ebn0_db, None)?, out)?);
            if *random_twin && *init == InitKind::Lmmse {
                artifacts.push(persist(&exp.train(spec, ebn0_db, Some(InitKind::Random))?, out)?);
            }
        }
    }
    Ok(artifacts)
}

/// Rewrites every `eqznet_train` equalizer (and its random twin, when
/// requested) as an `eqznet` entry reading the checkpoints that
/// [`run_training`] wrote to `dir`. Labels and grids are kept.
pub fn use_checkpoints(cfg: &ExperimentConfig, dir: &Path) -> ExperimentConfig {
    let template = |label: &str| {
        dir.join(format!("{}_{{ebn0}}dB.json", slug(label)))
            .to_string_lossy()
            .into_owned()
    };
    let mut out = cfg.clone();
    out.equalizers.clear();
    for spec in &cfg.equalizers {
        match spec {
            EqualizerSpec::EqznetTrain {
                random_twin,
                init,
                ebn0_db,
                ..
            } => {
                let label = spec.label();
                out.equalizers.push(EqualizerSpec::Eqznet {
                    checkpoint: template(&label),
                    label: Some(label.clone()),
                    ebn0_db: ebn0_db.clone(),
                });
                if *random_twin && *init == InitKind::Lmmse {
                    let twin = format!("{label}-random");
                    out.equalizers.push(EqualizerSpec::Eqznet {
                        checkpoint: template(&twin),
                        label: Some(twin),
                        ebn0_db: ebn0_db.clone(),
                    });
                }
            }
            other => out.equalizers.push(other.clone()),
        }
    }
    out
}
