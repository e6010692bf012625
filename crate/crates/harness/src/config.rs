//! Experiment configuration (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use eqz_core::bcjr::CalibrationSettings;
use eqz_core::eqznet::{Architecture, InitKind, TrainConfig};
use eqz_core::turbo::{ConventionalEqualizer, FirstEqualizer, TurboConfig};
use eqz_core::txchain::{preset_taps, ChannelModel, PamConstellation};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Uncoded,
    Turbo,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Uncoded => "uncoded",
            Mode::Turbo => "turbo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoppingRule {
    pub min_errors: u64,
    pub max_bits: u64,
    /// Turbo mode only: lower bound on simulated code blocks.
    pub min_blocks: u64,
    /// Uncoded mode: symbols per simulated block.
    pub block_symbols: usize,
    /// Blocks simulated between stopping checks. Fixed so that results do
    /// not depend on the worker count.
    pub round_blocks: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            min_errors: 200,
            max_bits: 10_000_000,
            min_blocks: 0,
            block_symbols: 4096,
            round_blocks: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GeometrySpec {
    /// Only `"auto"` is accepted: window calibration picks `N1 = N2`.
    Auto(String),
    Fixed { n1: usize, n2: usize },
}

impl Default for GeometrySpec {
    fn default() -> Self {
        GeometrySpec::Fixed { n1: 7, n2: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    /// Eb/N0 of the calibration run; defaults to the middle of the grid.
    pub ebn0_db: Option<f64>,
    pub target_ber_ratio: f64,
    pub block_len: usize,
    pub blocks: usize,
    pub max_window: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        let s = CalibrationSettings::default();
        Self {
            ebn0_db: None,
            target_ber_ratio: 1.1,
            block_len: s.block_len,
            blocks: s.blocks,
            max_window: s.max_window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EqualizerSpec {
    Lmmse {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        ebn0_db: Option<Vec<f64>>,
    },
    Bcjr {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        ebn0_db: Option<Vec<f64>>,
    },
    /// Pretrained bank; `{ebn0}` in the path is replaced by the point's Eb/N0.
    Eqznet {
        checkpoint: String,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        ebn0_db: Option<Vec<f64>>,
    },
    /// Trained on the fly at every grid point.
    EqznetTrain {
        architecture: Architecture,
        #[serde(default = "default_init")]
        init: InitKind,
        #[serde(default)]
        train: TrainConfig,
        #[serde(default = "default_training_bits")]
        training_bits: usize,
        /// Also produce the random-init twin when running `train`.
        #[serde(default)]
        random_twin: bool,
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        ebn0_db: Option<Vec<f64>>,
    },
}

fn default_init() -> InitKind {
    InitKind::Lmmse
}

fn default_training_bits() -> usize {
    eqz_core::eqznet::DEFAULT_TRAINING_BITS
}

impl EqualizerSpec {
    pub fn label(&self) -> String {
        match self {
            EqualizerSpec::Lmmse { label, .. } => label.clone().unwrap_or_else(|| "LMMSE".into()),
            EqualizerSpec::Bcjr { label, .. } => label.clone().unwrap_or_else(|| "BCJR".into()),
            EqualizerSpec::Eqznet { label, checkpoint, .. } => label.clone().unwrap_or_else(|| {
                Path::new(checkpoint)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "EqzNet".into())
            }),
            EqualizerSpec::EqznetTrain {
                architecture,
                init,
                label,
                ..
            } => label.clone().unwrap_or_else(|| match init {
                InitKind::Lmmse => architecture.label(),
                InitKind::Random => format!("{}-random", architecture.label()),
            }),
        }
    }

    /// Per-equalizer Eb/N0 grid, when it overrides the experiment grid.
    pub fn grid_override(&self) -> Option<&[f64]> {
        match self {
            EqualizerSpec::Lmmse { ebn0_db, .. }
            | EqualizerSpec::Bcjr { ebn0_db, .. }
            | EqualizerSpec::Eqznet { ebn0_db, .. }
            | EqualizerSpec::EqznetTrain { ebn0_db, .. } => ebn0_db.as_deref(),
        }
    }
}

/// Turbo loop settings. The first-iteration equalizer comes from each
/// entry of `equalizers`; the window from `geometry`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurboSettings {
    pub iterations: usize,
    pub subsequent_equalizer: ConventionalEqualizer,
    pub decoder_iterations: usize,
    pub interleaver_seed: Option<u64>,
    pub early_stop: bool,
    /// Parity-check matrix in alist form; the shipped code when absent.
    pub code: Option<PathBuf>,
}

impl Default for TurboSettings {
    fn default() -> Self {
        let d = TurboConfig::default();
        Self {
            iterations: d.iterations,
            subsequent_equalizer: d.subsequent_equalizer,
            decoder_iterations: d.decoder_iterations,
            interleaver_seed: d.interleaver_seed,
            early_stop: d.early_stop,
            code: None,
        }
    }
}

impl TurboSettings {
    pub fn config(&self, first: FirstEqualizer, (n1, n2): (usize, usize)) -> TurboConfig {
        TurboConfig {
            iterations: self.iterations,
            first_iteration_equalizer: first,
            subsequent_equalizer: self.subsequent_equalizer,
            decoder_iterations: self.decoder_iterations,
            interleaver_seed: self.interleaver_seed,
            early_stop: self.early_stop,
            n1,
            n2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Preset name (`h_A`, `h_B`, `identity`); exclusive with `taps`.
    #[serde(default)]
    pub channel: Option<String>,
    #[serde(default)]
    pub taps: Option<Vec<f64>>,
    pub modulation: usize,
    pub mode: Mode,
    pub ebn0_db: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stopping: StoppingRule,
    #[serde(default)]
    pub geometry: GeometrySpec,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    pub equalizers: Vec<EqualizerSpec>,
    #[serde(default)]
    pub turbo: Option<TurboSettings>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.ebn0_db.is_empty(), "ebn0_db grid must not be empty");
        ensure!(
            self.ebn0_db.iter().all(|v| v.is_finite()),
            "ebn0_db values must be finite"
        );
        ensure!(!self.equalizers.is_empty(), "at least one equalizer is required");
        ensure!(
            self.stopping.min_errors >= 100,
            "stopping.min_errors must be at least 100, got {}",
            self.stopping.min_errors
        );
        ensure!(self.stopping.max_bits > 0, "stopping.max_bits must be positive");
        ensure!(self.stopping.block_symbols > 0, "stopping.block_symbols must be positive");
        ensure!(self.stopping.round_blocks > 0, "stopping.round_blocks must be positive");
        PamConstellation::new(self.modulation).context("modulation")?;
        self.base_taps()?;
        if let GeometrySpec::Auto(s) = &self.geometry {
            ensure!(s == "auto", "geometry must be \"auto\" or {{ n1, n2 }}, got {s:?}");
        }
        ensure!(
            self.calibration.target_ber_ratio >= 1.0,
            "calibration.target_ber_ratio must be >= 1"
        );
        let mut labels = std::collections::BTreeSet::new();
        for eq in &self.equalizers {
            ensure!(labels.insert(eq.label()), "duplicate equalizer label {:?}", eq.label());
            if let Some(g) = eq.grid_override() {
                ensure!(
                    !g.is_empty() && g.iter().all(|v| v.is_finite()),
                    "equalizer {:?}: ebn0_db must be a nonempty list of finite values",
                    eq.label()
                );
            }
            if let EqualizerSpec::EqznetTrain {
                architecture,
                train,
                training_bits,
                ..
            } = eq
            {
                architecture.validate().context("equalizer architecture")?;
                train.validate().context("equalizer training config")?;
                ensure!(*training_bits > 0, "training_bits must be positive");
            }
        }
        match (self.mode, &self.turbo) {
            (Mode::Turbo, Some(t)) => t
                .config(FirstEqualizer::Lmmse, (0, 0))
                .validate()
                .context("turbo settings")?,
            (Mode::Turbo, None) => bail!("mode = \"turbo\" needs a [turbo] table"),
            (Mode::Uncoded, Some(_)) => bail!("[turbo] table given but mode is \"uncoded\""),
            (Mode::Uncoded, None) => {}
        }
        Ok(())
    }

    pub fn base_taps(&self) -> Result<Vec<f64>> {
        match (&self.channel, &self.taps) {
            (Some(name), None) => Ok(preset_taps(name)?),
            (None, Some(t)) => {
                ChannelModel::new(t.clone(), 0.0).context("channel taps")?;
                Ok(t.clone())
            }
            _ => bail!("give exactly one of `channel` (preset name) or `taps`"),
        }
    }

    pub fn channel_label(&self) -> String {
        match &self.channel {
            Some(name) => name.clone(),
            None => "custom".into(),
        }
    }

    pub fn constellation(&self) -> PamConstellation {
        PamConstellation::new(self.modulation).expect("validated")
    }

    /// Midpoint of the Eb/N0 grid, used when calibration has no explicit SNR.
    pub fn calibration_ebn0(&self) -> f64 {
        self.calibration.ebn0_db.unwrap_or_else(|| {
            let mut g = self.ebn0_db.clone();
            g.sort_by(f64::total_cmp);
            g[g.len() / 2]
        })
    }
}

/// Settings for the `gain-table` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainTableConfig {
    /// BER CSV files written by `sweep`.
    pub records: Vec<PathBuf>,
    pub target_ber: f64,
    #[serde(default = "default_reference")]
    pub reference: String,
    /// Frame geometry used for the complexity factor.
    pub n1: usize,
    pub n2: usize,
    /// Equalizer label to architecture, for the complexity column.
    #[serde(default)]
    pub architectures: std::collections::BTreeMap<String, Architecture>,
}

fn default_reference() -> String {
    "LMMSE".into()
}

impl GainTableConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("invalid gain-table config {}", path.display()))?;
        ensure!(
            cfg.target_ber > 0.0 && cfg.target_ber < 0.5,
            "target_ber must lie in (0, 0.5)"
        );
        ensure!(!cfg.records.is_empty(), "records must list at least one CSV file");
        Ok(cfg)
    }
}

/// Settings for the `llr-hist` subcommand: an experiment plus the point and
/// sample size of the histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramConfig {
    pub experiment: ExperimentConfig,
    pub ebn0_db: f64,
    pub symbols: usize,
}

impl HistogramConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("invalid llr-hist config {}", path.display()))?;
        cfg.experiment.validate()?;
        ensure!(cfg.symbols > 0, "symbols must be positive");
        ensure!(cfg.experiment.mode == Mode::Uncoded, "llr-hist runs in uncoded mode");
        Ok(cfg)
    }
}
