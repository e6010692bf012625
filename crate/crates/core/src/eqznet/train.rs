//! MAP-LLR supervised training: datasets, Adam, the progressive recipe and
//! the per-bit bank used for M > 2.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compose_head_with, compose_sum, init_k_eqznet_for_bit, init_random, Architecture, EqzNetParams,
};
use crate::bcjr::{build_trellis, map_equalize};
use crate::lmmse::LmmseFilter;
use crate::txchain::{
    ebn0_to_noise_variance, fill_frame, gray_map, random_bits, ChannelModel, ObservationFrame,
    PamConstellation,
};
use crate::{Error, Result};

/// Training set size used by the reference experiments.
pub const DEFAULT_TRAINING_BITS: usize = 1_000_000;
/// Symbols per simulated block when generating datasets.
pub const DATASET_BLOCK_LEN: usize = 4096;

/// A frame and the MAP LLR of one bit of its centre symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: ObservationFrame,
    pub target_llr: f64,
}

/// Frames with per-bit MAP labels, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub n1: usize,
    pub n2: usize,
    /// Bits per symbol; `targets` and `bits` hold this many values per frame.
    pub q: usize,
    pub frames: Vec<f64>,
    pub targets: Vec<f64>,
    pub bits: Vec<u8>,
}

impl LabeledDataset {
    pub fn frame_len(&self) -> usize {
        self.n1 + self.n2 + 1
    }

    pub fn len(&self) -> usize {
        self.frames.len() / self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn samples(&self, i: usize) -> &[f64] {
        let n = self.frame_len();
        &self.frames[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize, bit: usize) -> f64 {
        self.targets[i * self.q + bit]
    }

    pub fn labeled_frame(&self, i: usize, bit: usize) -> LabeledFrame {
        LabeledFrame {
            frame: ObservationFrame {
                samples: self.samples(i).to_vec(),
                n1: self.n1,
                n2: self.n2,
            },
            target_llr: self.target(i, bit),
        }
    }
}

/// Builds a dataset at `snr_db` Eb/N0 (uncoded) for the channel taps.
pub fn build_dataset(
    channel: &ChannelModel,
    constellation: &PamConstellation,
    snr_db: f64,
    bit_count: usize,
    geometry: (usize, usize),
    seed: u64,
) -> Result<LabeledDataset> {
    let s2 = ebn0_to_noise_variance(snr_db, constellation, 1.0)?;
    build_dataset_at(&channel.with_noise_variance(s2)?, constellation, bit_count, geometry, seed)
}

/// Builds a dataset at the channel's own noise variance. Labels are
/// full-block MAP a-posteriori LLRs, clamped.
pub fn build_dataset_at(
    channel: &ChannelModel,
    constellation: &PamConstellation,
    bit_count: usize,
    (n1, n2): (usize, usize),
    seed: u64,
) -> Result<LabeledDataset> {
    if bit_count == 0 {
        return Err(Error::InvalidParameter("bit_count must be >= 1".into()));
    }
    let trellis = build_trellis(channel, constellation)?;
    let q = constellation.bits_per_symbol();
    let symbols = bit_count.div_ceil(q);
    let n = n1 + n2 + 1;
    let mut ds = LabeledDataset {
        n1,
        n2,
        q,
        frames: Vec::with_capacity(symbols * n),
        targets: Vec::with_capacity(symbols * q),
        bits: Vec::with_capacity(symbols * q),
    };
    let mut frame = vec![0.0; n];
    let mut done = 0;
    let mut block_idx = 0u64;
    while done < symbols {
        let len = DATASET_BLOCK_LEN.min(symbols - done);
        let bits = random_bits(len * q, crate::mix_seed(seed, 2 * block_idx));
        let block = gray_map(&bits, constellation)?;
        let z = channel.transmit(&block.symbols, crate::mix_seed(seed, 2 * block_idx + 1));
        let map = map_equalize(&z, &trellis, channel.noise_variance(), None)?;
        for i in 0..len {
            fill_frame(&z, i, n1, n2, &mut frame);
            ds.frames.extend_from_slice(&frame);
        }
        ds.targets.extend_from_slice(&map.llrs.values);
        ds.bits.extend_from_slice(&bits);
        done += len;
        block_idx += 1;
    }
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Emphasis of the centre soft bit at initialization (`α > 1`).
    pub alpha: f64,
    /// Output weight magnitude at initialization (`w > 0`).
    pub w_init: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            epochs: 10,
            seed: 0,
            alpha: super::DEFAULT_ALPHA,
            w_init: super::DEFAULT_W,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.w_init > 0.0) {
            return Err(Error::Config(format!(
                "need alpha > 1 and w_init > 0, got {} and {}",
                self.alpha, self.w_init
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub initial_loss: f64,
    /// Full-dataset loss after each epoch.
    pub epoch_loss: Vec<f64>,
}

impl TrainingTrace {
    pub fn final_loss(&self) -> f64 {
        self.epoch_loss.last().copied().unwrap_or(self.initial_loss)
    }
}

fn dataset_loss(params: &EqzNetParams, ds: &LabeledDataset, bit: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..ds.len() {
        let e = params.forward_samples(ds.samples(i)) - ds.target(i, bit);
        acc += e * e;
    }
    acc / ds.len() as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
        }
    }
}

/// Trains a network against bit 0 of the dataset labels.
pub fn train(
    params: &EqzNetParams,
    dataset: &LabeledDataset,
    config: &TrainConfig,
) -> Result<(EqzNetParams, TrainingTrace)> {
    train_bit(params, dataset, 0, config)
}

/// Adam on the mean squared LLR error against bit `bit` of the labels.
///
/// Mini-batches are reshuffled every epoch from `config.seed`; the result is
/// a deterministic function of the inputs.
pub fn train_bit(
    params: &EqzNetParams,
    dataset: &LabeledDataset,
    bit: usize,
    config: &TrainConfig,
) -> Result<(EqzNetParams, TrainingTrace)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    if bit >= dataset.q {
        return Err(Error::InvalidParameter(format!(
            "bit {bit} out of range for {} labels per frame",
            dataset.q
        )));
    }
    if (dataset.n1, dataset.n2) != (params.n1, params.n2) {
        return Err(Error::GeometryMismatch {
            want_n1: params.n1,
            want_n2: params.n2,
            got_n1: dataset.n1,
            got_n2: dataset.n2,
        });
    }
    let mut net = params.clone();
    let mut flat = net.to_flat();
    let mut adam = Adam::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut grad = net.zeros_like();
    let mut scratch = Vec::new();
    let trace_initial = dataset_loss(&net, dataset, bit);
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            grad.set_flat(&vec![0.0; flat.len()]);
            let scale = 2.0 / batch.len() as f64;
            for &i in batch {
                let t = dataset.target(i, bit);
                net.accumulate_gradient(dataset.samples(i), |y| scale * (y - t), &mut grad, &mut scratch);
            }
            adam.step(&mut flat, &grad.to_flat(), config);
            net.set_flat(&flat);
        }
        epoch_loss.push(dataset_loss(&net, dataset, bit));
    }
    Ok((
        net,
        TrainingTrace {
            initial_loss: trace_initial,
            epoch_loss,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitKind {
    Lmmse,
    Random,
}

/// Builds and trains one network for bit `bit`.
///
/// With LMMSE initialization the progressive recipe applies: the K-block is
/// trained on its own; for `Sum`/`Head` a separate L-EqzNet is trained as the
/// pretrained block, the two are composed and every parameter is fine-tuned.
/// Random initialization trains the full architecture from a standard-normal
/// start for the same total number of epochs. Returns one trace per stage.
pub fn train_progressive(
    filter: &LmmseFilter,
    architecture: Architecture,
    constellation: &PamConstellation,
    dataset: &LabeledDataset,
    bit: usize,
    config: &TrainConfig,
    init: InitKind,
) -> Result<(EqzNetParams, Vec<TrainingTrace>)> {
    let stages = match architecture {
        Architecture::KEqzNet { .. } => 1,
        _ => 3,
    };
    if init == InitKind::Random {
        let start = init_random(architecture, filter.n1(), filter.n2(), config.seed ^ 0xA5A5)?;
        let cfg = TrainConfig {
            epochs: config.epochs * stages,
            ..config.clone()
        };
        let (net, trace) = train_bit(&start, dataset, bit, &cfg)?;
        return Ok((net, vec![trace]));
    }
    let block = |width: usize| -> Result<EqzNetParams> {
        init_k_eqznet_for_bit(filter, width, config.alpha, config.w_init, constellation, bit)
    };
    match architecture {
        Architecture::KEqzNet { k } => {
            let (net, trace) = train_bit(&block(k)?, dataset, bit, config)?;
            Ok((net, vec![trace]))
        }
        Architecture::Sum { k, l } | Architecture::Head { k, l } => {
            let (kn, t1) = train_bit(&block(k)?, dataset, bit, config)?;
            let l_cfg = TrainConfig {
                seed: config.seed.wrapping_add(1),
                ..config.clone()
            };
            let (ln, t2) = train_bit(&block(l)?, dataset, bit, &l_cfg)?;
            let composed = match architecture {
                Architecture::Sum { .. } => compose_sum(&kn, &ln)?,
                _ => compose_head_with(&kn, &ln, config.seed.wrapping_add(2), config.alpha, config.w_init)?,
            };
            let f_cfg = TrainConfig {
                seed: config.seed.wrapping_add(3),
                ..config.clone()
            };
            let (net, t3) = train_bit(&composed, dataset, bit, &f_cfg)?;
            Ok((net, vec![t1, t2, t3]))
        }
    }
}

/// One network per code bit of an M-PAM symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqzNetBank {
    pub nets: Vec<EqzNetParams>,
}

impl EqzNetBank {
    pub fn single(net: EqzNetParams) -> Self {
        Self { nets: vec![net] }
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.nets.len()
    }

    pub fn geometry(&self) -> (usize, usize) {
        (self.nets[0].n1, self.nets[0].n2)
    }

    /// One LLR per bit of the centre symbol.
    pub fn forward(&self, frame: &ObservationFrame) -> Result<Vec<f64>> {
        self.nets.iter().map(|n| super::forward(n, frame)).collect()
    }

    pub fn forward_samples_into(&self, z: &[f64], out: &mut [f64]) {
        for (o, n) in out.iter_mut().zip(&self.nets) {
            *o = n.forward_samples(z);
        }
    }
}

/// Trains `q` independent networks, network `m` against bit `m`'s labels.
pub fn per_bit_equalizer_bank(
    filter: &LmmseFilter,
    architecture: Architecture,
    constellation: &PamConstellation,
    dataset: &LabeledDataset,
    configs: &[TrainConfig],
    init: InitKind,
) -> Result<(EqzNetBank, Vec<Vec<TrainingTrace>>)> {
    let q = constellation.bits_per_symbol();
    if q < 2 {
        return Err(Error::InvalidParameter(
            "per-bit banks are for M > 2; use a single network for 2-PAM".into(),
        ));
    }
    if configs.len() != q || dataset.q != q {
        return Err(Error::LengthMismatch {
            expected: q,
            actual: configs.len().min(dataset.q),
        });
    }
    let mut nets = Vec::with_capacity(q);
    let mut traces = Vec::with_capacity(q);
    for (bit, cfg) in configs.iter().enumerate() {
        let (net, tr) = train_progressive(filter, architecture, constellation, dataset, bit, cfg, init)?;
        nets.push(net);
        traces.push(tr);
    }
    Ok((EqzNetBank { nets }, traces))
}

/// Trains the bank for any modulation: a single network for 2-PAM, one
/// network per bit otherwise. Bit `m` uses `config.seed + m`.
pub fn train_bank(
    filter: &LmmseFilter,
    architecture: Architecture,
    constellation: &PamConstellation,
    dataset: &LabeledDataset,
    config: &TrainConfig,
    init: InitKind,
) -> Result<(EqzNetBank, Vec<Vec<TrainingTrace>>)> {
    let q = constellation.bits_per_symbol();
    if q == 1 {
        let (net, tr) = train_progressive(filter, architecture, constellation, dataset, 0, config, init)?;
        return Ok((EqzNetBank::single(net), vec![tr]));
    }
    let configs: Vec<TrainConfig> = (0..q)
        .map(|m| TrainConfig {
            seed: config.seed.wrapping_add(m as u64),
            ..config.clone()
        })
        .collect();
    per_bit_equalizer_bank(filter, architecture, constellation, dataset, &configs, init)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eqznet::{gradient, init_k_eqznet};
    use crate::lmmse::design_filter;
    use crate::txchain::H_A;

    fn small_dataset(bits: usize) -> LabeledDataset {
        let ch = ChannelModel::new(H_A.to_vec(), 0.1).unwrap();
        let c = PamConstellation::new(2).unwrap();
        build_dataset_at(&ch, &c, bits, (3, 3), 5).unwrap()
    }

    #[test]
    fn memoryless_labels_are_closed_form() {
        let s2 = 0.7;
        let ch = ChannelModel::new(vec![1.0], s2).unwrap();
        let c = PamConstellation::new(2).unwrap();
        let ds = build_dataset_at(&ch, &c, 500, (1, 1), 3).unwrap();
        assert_eq!(ds.len(), 500);
        for i in 0..ds.len() {
            let z = ds.samples(i)[1];
            let want = crate::clamp_llr(2.0 * z / s2);
            assert!((ds.target(i, 0) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn dataset_is_reproducible() {
        assert_eq!(small_dataset(300), small_dataset(300));
        let c = PamConstellation::new(2).unwrap();
        let ch = ChannelModel::new(H_A.to_vec(), 0.1).unwrap();
        assert!(build_dataset_at(&ch, &c, 0, (3, 3), 1).is_err());
    }

    #[test]
    fn dataset_spans_several_blocks() {
        let ds = small_dataset(DATASET_BLOCK_LEN + 10);
        assert_eq!(ds.len(), DATASET_BLOCK_LEN + 10);
        assert!(ds.targets.iter().all(|t| t.abs() <= crate::LLR_CLAMP));
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let ds = small_dataset(600);
        let f = design_filter(&ChannelModel::new(H_A.to_vec(), 0.1).unwrap(), 3, 3).unwrap();
        let p = init_k_eqznet(&f, 4, 2.0, 1.0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..Default::default()
        };
        let (q, trace) = train(&p, &ds, &cfg).unwrap();
        assert_eq!(q, p);
        assert_eq!(trace.epoch_loss.len(), 2);
    }

    #[test]
    fn memorizes_single_sample() {
        let ds = small_dataset(1);
        let f = design_filter(&ChannelModel::new(H_A.to_vec(), 0.1).unwrap(), 3, 3).unwrap();
        let p = init_k_eqznet(&f, 2, 2.0, 1.0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.05,
            epochs: 500,
            batch_size: 1,
            ..Default::default()
        };
        let (_, trace) = train(&p, &ds, &cfg).unwrap();
        assert!(trace.final_loss() < 1e-6, "loss {}", trace.final_loss());
    }

    #[test]
    fn training_is_deterministic() {
        let ds = small_dataset(800);
        let f = design_filter(&ChannelModel::new(H_A.to_vec(), 0.1).unwrap(), 3, 3).unwrap();
        let p = init_k_eqznet(&f, 2, 2.0, 1.0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 3,
            batch_size: 32,
            seed: 9,
            ..Default::default()
        };
        let a = train(&p, &ds, &cfg).unwrap();
        let b = train(&p, &ds, &cfg).unwrap();
        assert_eq!(a.0.to_flat(), b.0.to_flat());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn perfect_fit_has_zero_gradient() {
        let f = design_filter(&ChannelModel::new(H_A.to_vec(), 0.1).unwrap(), 3, 3).unwrap();
        let p = init_k_eqznet(&f, 4, 2.0, 1.0).unwrap();
        let ds = small_dataset(20);
        let batch: Vec<LabeledFrame> = (0..20)
            .map(|i| {
                let mut lf = ds.labeled_frame(i, 0);
                lf.target_llr = p.forward_samples(&lf.frame.samples);
                lf
            })
            .collect();
        let g = gradient(&p, &batch).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let f = design_filter(&ChannelModel::new(H_A.to_vec(), 0.1).unwrap(), 3, 3).unwrap();
        let p = init_k_eqznet(&f, 2, 2.0, 1.0).unwrap();
        let ds = small_dataset(10);
        let once: Vec<LabeledFrame> = (0..10).map(|i| ds.labeled_frame(i, 0)).collect();
        let twice: Vec<LabeledFrame> = once.iter().chain(once.iter()).cloned().collect();
        let a = gradient(&p, &once).unwrap().to_flat();
        let b = gradient(&p, &twice).unwrap().to_flat();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert!(gradient(&p, &[]).is_err());
    }

    #[test]
    fn four_pam_bank() {
        let ch = ChannelModel::new(vec![1.0, 0.4], 0.05).unwrap();
        let c = PamConstellation::new(4).unwrap();
        let ds = build_dataset_at(&ch, &c, 1000, (2, 2), 1).unwrap();
        assert_eq!(ds.q, 2);
        let f = design_filter(&ch, 2, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            learning_rate: 0.01,
            ..Default::default()
        };
        let arch = Architecture::KEqzNet { k: 2 };
        let (bank, traces) =
            per_bit_equalizer_bank(&f, arch, &c, &ds, &[cfg.clone(), cfg.clone()], InitKind::Lmmse).unwrap();
        assert_eq!(bank.bits_per_symbol(), 2);
        let fr = ds.labeled_frame(0, 0).frame;
        assert_eq!(bank.forward(&fr).unwrap().len(), 2);
        // each member is independent of the other
        let (alone, alone_trace) = train_progressive(&f, arch, &c, &ds, 1, &cfg, InitKind::Lmmse).unwrap();
        assert_eq!(alone, bank.nets[1]);
        assert_eq!(alone_trace, traces[1]);
        let c2 = PamConstellation::new(2).unwrap();
        assert!(per_bit_equalizer_bank(&f, arch, &c2, &ds, &[cfg], InitKind::Lmmse).is_err());
    }
}
