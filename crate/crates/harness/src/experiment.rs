//! Per-run context shared by every subcommand: resolved channel, geometry,
//! code and seed streams, plus equalizer construction at one Eb/N0 point.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use eqz_core::bcjr::{build_trellis, map_equalize, TrellisSpec};
use eqz_core::eqznet::{
    build_dataset_at, train_bank, Checkpoint, EqzNetBank, InitKind, Provenance, TrainConfig, TrainingTrace,
};
use eqz_core::ldpc::LdpcCode;
use eqz_core::lmmse::{design_filter, equalize_block, LmmseFilter};
use eqz_core::mix_seed;
use eqz_core::turbo::{eqznet_llrs, standard_code, FirstEqualizer};
use eqz_core::txchain::{ebn0_to_noise_variance, ChannelModel, PamConstellation};

use crate::calibration::{run_calibration, CalibrationOutcome};
use crate::config::{EqualizerSpec, ExperimentConfig, GeometrySpec, Mode};

/// Independent seed streams derived from the master seed.
pub(crate) mod domain {
    pub const SWEEP: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const CALIBRATE: u64 = 3;
    pub const HISTOGRAM: u64 = 4;
}

/// Seed of stream `domain` at Eb/N0 `ebn0_db`. Keyed on the value, not the
/// grid index, so equalizers with different grids share test blocks.
pub fn point_seed(master: u64, domain: u64, ebn0_db: f64) -> u64 {
    mix_seed(mix_seed(master, domain), ebn0_db.to_bits())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's master seed.
    pub seed: Option<u64>,
    /// Worker threads; 0 means one per available core.
    pub workers: usize,
    /// Directory that relative paths in the config are resolved against.
    pub base_dir: PathBuf,
}

impl RunOptions {
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        }
    }
}

/// A validated config with everything that does not depend on Eb/N0 resolved.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub base_dir: PathBuf,
    pub taps: Vec<f64>,
    pub constellation: PamConstellation,
    pub geometry: (usize, usize),
    pub calibration: Option<CalibrationOutcome>,
    pub code: Option<Arc<LdpcCode>>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, opts: &RunOptions) -> Result<Self> {
        config.validate()?;
        let master_seed = opts.seed.unwrap_or(config.seed);
        let taps = config.base_taps()?;
        let constellation = config.constellation();
        let code = match (&config.mode, &config.turbo) {
            (Mode::Turbo, Some(t)) => Some(Arc::new(match &t.code {
                Some(p) => {
                    let path = resolve_path(&opts.base_dir, p);
                    let text = std::fs::read_to_string(&path)
                        .with_context(|| format!("reading code {}", path.display()))?;
                    LdpcCode::from_alist(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                None => standard_code(),
            })),
            _ => None,
        };
        if let Some(code) = &code {
            ensure!(
                code.n() % constellation.bits_per_symbol() == 0,
                "code length {} is not a multiple of {} bits per symbol",
                code.n(),
                constellation.bits_per_symbol()
            );
        }
        let mut exp = Self {
            config,
            master_seed,
            base_dir: opts.base_dir.clone(),
            taps,
            constellation,
            geometry: (0, 0),
            calibration: None,
            code,
        };
        exp.geometry = match exp.config.geometry {
            GeometrySpec::Fixed { n1, n2 } => (n1, n2),
            GeometrySpec::Auto(_) => {
                let outcome = run_calibration(&exp)?;
                let g = outcome.geometry;
                exp.calibration = Some(outcome);
                g
            }
        };
        Ok(exp)
    }

    /// Information rate per code bit; 1 when uncoded.
    pub fn code_rate(&self) -> f64 {
        self.code.as_ref().map_or(1.0, |c| c.rate())
    }

    pub fn channel_at(&self, ebn0_db: f64) -> Result<ChannelModel> {
        let s2 = ebn0_to_noise_variance(ebn0_db, &self.constellation, self.code_rate())?;
        Ok(ChannelModel::new(self.taps.clone(), s2)?)
    }

    /// Eb/N0 grid of one equalizer.
    pub fn grid(&self, spec: &EqualizerSpec) -> Vec<f64> {
        spec.grid_override().unwrap_or(&self.config.ebn0_db).to_vec()
    }

    pub fn channel_label(&self) -> String {
        self.config.channel_label()
    }

    /// Builds the equalizer for one point, training it if the spec asks to.
    pub fn prepare(&self, spec: &EqualizerSpec, ebn0_db: f64) -> Result<Equalizer> {
        let ch = self.channel_at(ebn0_db)?;
        Ok(match spec {
            EqualizerSpec::Lmmse { .. } => Equalizer::Lmmse {
                filter: design_filter(&ch, self.geometry.0, self.geometry.1)?,
            },
            EqualizerSpec::Bcjr { .. } => Equalizer::Bcjr {
                trellis: build_trellis(&ch, &self.constellation)
                    .with_context(|| format!("BCJR for {}", spec.label()))?,
                noise_variance: ch.noise_variance(),
            },
            EqualizerSpec::Eqznet { checkpoint, .. } => {
                let path = resolve_path(&self.base_dir, Path::new(&checkpoint_path(checkpoint, ebn0_db)));
                ensure!(path.exists(), "checkpoint {} does not exist", path.display());
                let bank = Checkpoint::load(&path)?.bank()?;
                ensure!(
                    bank.bits_per_symbol() == self.constellation.bits_per_symbol(),
                    "checkpoint {} holds {} networks but {}-PAM needs {}",
                    path.display(),
                    bank.bits_per_symbol(),
                    self.constellation.order(),
                    self.constellation.bits_per_symbol()
                );
                Equalizer::Eqznet { bank }
            }
            EqualizerSpec::EqznetTrain { .. } => Equalizer::Eqznet {
                bank: self.train(spec, ebn0_db, None)?.bank,
            },
        })
    }

    /// Trains the network described by an `eqznet_train` spec at one point.
    /// `init` overrides the spec (used for the random-init twin).
    pub fn train(&self, spec: &EqualizerSpec, ebn0_db: f64, init: Option<InitKind>) -> Result<TrainedNetwork> {
        let EqualizerSpec::EqznetTrain {
            architecture,
            init: spec_init,
            train,
            training_bits,
            ..
        } = spec
        else {
            bail!("{} is not a trainable equalizer", spec.label());
        };
        let init = init.unwrap_or(*spec_init);
        let label = if init == *spec_init {
            spec.label()
        } else {
            format!("{}-random", spec.label())
        };
        let ch = self.channel_at(ebn0_db)?;
        let data_seed = point_seed(self.master_seed, domain::TRAIN, ebn0_db);
        let dataset = build_dataset_at(&ch, &self.constellation, *training_bits, self.geometry, data_seed)?;
        let filter = design_filter(&ch, self.geometry.0, self.geometry.1)?;
        let (bank, traces) = train_bank(&filter, *architecture, &self.constellation, &dataset, train, init)
            .with_context(|| format!("training {label} at {ebn0_db} dB"))?;
        let provenance = Provenance {
            channel: self.channel_label(),
            taps: self.taps.clone(),
            modulation: self.constellation.order(),
            ebn0_db,
            noise_variance: ch.noise_variance(),
            seed: data_seed,
        };
        let checkpoint = Checkpoint::new(label.clone(), &bank, init, train.clone(), provenance);
        Ok(TrainedNetwork {
            label,
            ebn0_db,
            checkpoint,
            bank,
            traces,
            train_config: train.clone(),
        })
    }
}

pub struct TrainedNetwork {
    pub label: String,
    pub ebn0_db: f64,
    pub checkpoint: Checkpoint,
    pub bank: EqzNetBank,
    /// Per bit, per training stage.
    pub traces: Vec<Vec<TrainingTrace>>,
    pub train_config: TrainConfig,
}

/// An equalizer ready to run at one point.
pub enum Equalizer {
    Lmmse { filter: LmmseFilter },
    Bcjr { trellis: TrellisSpec, noise_variance: f64 },
    Eqznet { bank: EqzNetBank },
}

impl Equalizer {
    /// Per-bit LLRs for a received block.
    pub fn llrs(&self, z: &[f64], constellation: &PamConstellation) -> Result<Vec<f64>> {
        Ok(match self {
            Equalizer::Lmmse { filter } => equalize_block(z, filter, constellation)?,
            Equalizer::Bcjr { trellis, noise_variance } => {
                map_equalize(z, trellis, *noise_variance, None)?.llrs.values
            }
            Equalizer::Eqznet { bank } => eqznet_llrs(z, bank),
        })
    }

    /// First-round equalizer of the turbo schedule.
    pub fn turbo_first(&self) -> (FirstEqualizer, Option<&EqzNetBank>) {
        match self {
            Equalizer::Lmmse { .. } => (FirstEqualizer::Lmmse, None),
            Equalizer::Bcjr { .. } => (FirstEqualizer::Bcjr, None),
            Equalizer::Eqznet { bank } => (FirstEqualizer::Eqznet, Some(bank)),
        }
    }
}

/// Canonical text of an Eb/N0 value in file names: `12`, `12.5`, `-3`.
pub fn format_db(ebn0_db: f64) -> String {
    format!("{ebn0_db}")
}

/// Substitutes `{ebn0}` in a checkpoint path template.
pub fn checkpoint_path(template: &str, ebn0_db: f64) -> String {
    template.replace("{ebn0}", &format_db(ebn0_db))
}

/// File-name friendly form of a label.
pub fn slug(label: &str) -> String {
    let s: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

pub fn resolve_path(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
