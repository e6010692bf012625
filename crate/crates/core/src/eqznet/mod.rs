//! EqzNet: small tanh networks initialized from LMMSE taps.
//!
//! A K-EqzNet has one hidden layer of `K` tanh neurons over the observation
//! frame and a linear output without bias. At initialization its neurons are
//! (approximate) soft bits: two copies of the LMMSE soft bit for `x_n`
//! followed by soft bits of the neighbours `x_{n-k}`, `0 < |k| <= (K-2)/2`,
//! obtained from cyclically shifted filters. The output weights start at
//! `[αw, -w, .., -w]`.
//!
//! Two progressive extensions reuse a pretrained L-EqzNet block:
//! * `Sum`: outputs of the K- and L-blocks are added.
//! * `Head`: both outputs feed a 2-neuron tanh layer whose outputs are
//!   combined linearly, i.e. a K = 2 network over the two block outputs.
//!
//! Every parameter (including the pretrained block) stays trainable.

mod checkpoint;
mod train;

pub use checkpoint::{Checkpoint, NetworkRecord, Provenance, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use train::{
    build_dataset, build_dataset_at, per_bit_equalizer_bank, train, train_bank, train_bit, train_progressive,
    EqzNetBank, InitKind, LabeledDataset, LabeledFrame, TrainConfig, TrainingTrace,
    DATASET_BLOCK_LEN, DEFAULT_TRAINING_BITS,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::lmmse::{shifted_filter, LmmseFilter};
use crate::txchain::{ObservationFrame, PamConstellation};
use crate::{Error, Result};

/// Default emphasis of the centre soft bit.
pub const DEFAULT_ALPHA: f64 = 2.0;
/// Default output weight magnitude.
pub const DEFAULT_W: f64 = 1.0;
/// Scale of the random head initialization.
pub const HEAD_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// K-EqzNet.
    KEqzNet { k: usize },
    /// (K+L)-EqzNet: sum of a K-block and a pretrained L-block.
    Sum { k: usize, l: usize },
    /// (K+L,2)-EqzNet: 2-neuron tanh head over both block outputs.
    Head { k: usize, l: usize },
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::KEqzNet { .. } => "k_eqznet",
            Architecture::Sum { .. } => "sum",
            Architecture::Head { .. } => "head",
        }
    }

    pub fn k(&self) -> usize {
        match *self {
            Architecture::KEqzNet { k } | Architecture::Sum { k, .. } | Architecture::Head { k, .. } => k,
        }
    }

    pub fn l(&self) -> usize {
        match *self {
            Architecture::KEqzNet { .. } => 0,
            Architecture::Sum { l, .. } | Architecture::Head { l, .. } => l,
        }
    }

    /// Width of the first hidden layer, `K + L`.
    pub fn first_layer_width(&self) -> usize {
        self.k() + self.l()
    }

    /// Conventional name: `6-EqzNet`, `(4+2)-EqzNet`, `(6+2,2)-EqzNet`.
    pub fn label(&self) -> String {
        match *self {
            Architecture::KEqzNet { k } => format!("{k}-EqzNet"),
            Architecture::Sum { k, l } => format!("({k}+{l})-EqzNet"),
            Architecture::Head { k, l } => format!("({k}+{l},2)-EqzNet"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: usize| v >= 2 && v % 2 == 0;
        let valid = match *self {
            Architecture::KEqzNet { k } => ok(k),
            Architecture::Sum { k, l } | Architecture::Head { k, l } => ok(k) && ok(l),
        };
        if valid {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "{self:?}: block widths must be even and >= 2"
            )))
        }
    }
}

/// One K-EqzNet block: `y = Σ_j w2_j tanh(w1_j · z + b1_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KBlock {
    pub width: usize,
    pub fan_in: usize,
    /// `width × fan_in`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Signed output weights.
    pub w2: Vec<f64>,
}

impl KBlock {
    fn zeros(width: usize, fan_in: usize) -> Self {
        Self {
            width,
            fan_in,
            w1: vec![0.0; width * fan_in],
            b1: vec![0.0; width],
            w2: vec![0.0; width],
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.w1[j * self.fan_in..(j + 1) * self.fan_in]
    }

    fn hidden(&self, z: &[f64], out: &mut [f64]) {
        for (j, h) in out.iter_mut().enumerate() {
            *h = (crate::lmmse::dot(self.row(j), z) + self.b1[j]).tanh();
        }
    }

    fn forward(&self, z: &[f64]) -> f64 {
        (0..self.width)
            .map(|j| self.w2[j] * (crate::lmmse::dot(self.row(j), z) + self.b1[j]).tanh())
            .sum()
    }

    /// Accumulates `upstream · ∂y/∂θ` into `grad`; returns `y`.
    fn backward(&self, z: &[f64], upstream: f64, grad: &mut KBlock, scratch: &mut Vec<f64>) -> f64 {
        scratch.resize(self.width, 0.0);
        self.hidden(z, scratch);
        let mut y = 0.0;
        for j in 0..self.width {
            let h = scratch[j];
            y += self.w2[j] * h;
            grad.w2[j] += upstream * h;
            let d = upstream * self.w2[j] * (1.0 - h * h);
            grad.b1[j] += d;
            let row = &mut grad.w1[j * self.fan_in..(j + 1) * self.fan_in];
            for (g, &x) in row.iter_mut().zip(z) {
                *g += d * x;
            }
        }
        y
    }

    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len()
    }
}

/// 2-neuron tanh layer over the two block outputs plus a linear combination.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadLayer {
    /// `2 × 2`, row-major: `w[i*2 + j]` couples block output `j` to neuron `i`.
    pub w: [f64; 4],
    pub b: [f64; 2],
    pub out: [f64; 2],
}

impl HeadLayer {
    fn zeros() -> Self {
        Self {
            w: [0.0; 4],
            b: [0.0; 2],
            out: [0.0; 2],
        }
    }

    fn hidden(&self, o: [f64; 2]) -> [f64; 2] {
        [
            (self.w[0] * o[0] + self.w[1] * o[1] + self.b[0]).tanh(),
            (self.w[2] * o[0] + self.w[3] * o[1] + self.b[1]).tanh(),
        ]
    }

    fn forward(&self, o: [f64; 2]) -> f64 {
        let u = self.hidden(o);
        self.out[0] * u[0] + self.out[1] * u[1]
    }
}

/// Parameters of any EqzNet variant together with its input geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqzNetParams {
    pub architecture: Architecture,
    pub n1: usize,
    pub n2: usize,
    /// The K-block, followed by the L-block for `Sum` and `Head`.
    pub blocks: Vec<KBlock>,
    pub head: Option<HeadLayer>,
}

impl EqzNetParams {
    pub fn frame_len(&self) -> usize {
        self.n1 + self.n2 + 1
    }

    /// All-zero parameters with the same shape.
    pub fn zeros_like(&self) -> Self {
        Self {
            architecture: self.architecture,
            n1: self.n1,
            n2: self.n2,
            blocks: self.blocks.iter().map(|b| KBlock::zeros(b.width, b.fan_in)).collect(),
            head: self.head.as_ref().map(|_| HeadLayer::zeros()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(KBlock::param_count).sum::<usize>() + if self.head.is_some() { 8 } else { 0 }
    }

    /// Flattened parameters: per block `w1, b1, w2`, then head `w, b, out`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for b in &self.blocks {
            v.extend_from_slice(&b.w1);
            v.extend_from_slice(&b.b1);
            v.extend_from_slice(&b.w2);
        }
        if let Some(h) = &self.head {
            v.extend_from_slice(&h.w);
            v.extend_from_slice(&h.b);
            v.extend_from_slice(&h.out);
        }
        v
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut it = flat.iter().copied();
        let mut fill = |dst: &mut [f64]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        for b in &mut self.blocks {
            fill(&mut b.w1);
            fill(&mut b.b1);
            fill(&mut b.w2);
        }
        if let Some(h) = &mut self.head {
            fill(&mut h.w);
            fill(&mut h.b);
            fill(&mut h.out);
        }
    }

    fn check_frame(&self, frame: &ObservationFrame) -> Result<()> {
        if frame.n1 != self.n1 || frame.n2 != self.n2 || frame.samples.len() != self.frame_len() {
            return Err(Error::GeometryMismatch {
                want_n1: self.n1,
                want_n2: self.n2,
                got_n1: frame.n1,
                got_n2: frame.n2,
            });
        }
        Ok(())
    }

    /// Forward pass on raw frame samples (no geometry check).
    pub fn forward_samples(&self, z: &[f64]) -> f64 {
        match self.architecture {
            Architecture::KEqzNet { .. } => self.blocks[0].forward(z),
            Architecture::Sum { .. } => self.blocks[0].forward(z) + self.blocks[1].forward(z),
            Architecture::Head { .. } => {
                let o = [self.blocks[0].forward(z), self.blocks[1].forward(z)];
                self.head.as_ref().expect("head layer").forward(o)
            }
        }
    }

    /// Accumulates `upstream · ∂f/∂θ` into `grad` and returns `f(z)`.
    pub(crate) fn accumulate_gradient(
        &self,
        z: &[f64],
        upstream_of: impl FnOnce(f64) -> f64,
        grad: &mut EqzNetParams,
        scratch: &mut Vec<f64>,
    ) -> f64 {
        match self.architecture {
            Architecture::KEqzNet { .. } => {
                let y = self.blocks[0].forward(z);
                let g = upstream_of(y);
                self.blocks[0].backward(z, g, &mut grad.blocks[0], scratch);
                y
            }
            Architecture::Sum { .. } => {
                let y = self.blocks[0].forward(z) + self.blocks[1].forward(z);
                let g = upstream_of(y);
                let (g0, g1) = grad.blocks.split_at_mut(1);
                self.blocks[0].backward(z, g, &mut g0[0], scratch);
                self.blocks[1].backward(z, g, &mut g1[0], scratch);
                y
            }
            Architecture::Head { .. } => {
                let head = self.head.as_ref().expect("head layer");
                let o = [self.blocks[0].forward(z), self.blocks[1].forward(z)];
                let u = head.hidden(o);
                let y = head.out[0] * u[0] + head.out[1] * u[1];
                let g = upstream_of(y);
                let gh = grad.head.as_mut().expect("head gradient");
                let mut g_o = [0.0; 2];
                for i in 0..2 {
                    gh.out[i] += g * u[i];
                    let d = g * head.out[i] * (1.0 - u[i] * u[i]);
                    gh.b[i] += d;
                    for j in 0..2 {
                        gh.w[i * 2 + j] += d * o[j];
                        g_o[j] += d * head.w[i * 2 + j];
                    }
                }
                let (g0, g1) = grad.blocks.split_at_mut(1);
                self.blocks[0].backward(z, g_o[0], &mut g0[0], scratch);
                self.blocks[1].backward(z, g_o[1], &mut g1[0], scratch);
                y
            }
        }
    }
}

/// LMMSE-tap initialized K-EqzNet.
pub fn init_k_eqznet(filter: &LmmseFilter, k: usize, alpha: f64, w: f64) -> Result<EqzNetParams> {
    let block = init_block(filter, k, alpha, w)?;
    Ok(EqzNetParams {
        architecture: Architecture::KEqzNet { k },
        n1: filter.n1(),
        n2: filter.n2(),
        blocks: vec![block],
        head: None,
    })
}

fn init_block(filter: &LmmseFilter, k: usize, alpha: f64, w: f64) -> Result<KBlock> {
    Architecture::KEqzNet { k }.validate()?;
    if !(alpha > 1.0 && w > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need alpha > 1 and w > 0, got alpha={alpha}, w={w}"
        )));
    }
    let n = filter.len();
    let reach = (k - 2) / 2;
    if reach >= n {
        return Err(Error::InvalidParameter(format!(
            "K={k} needs shifts up to {reach}, frame length is {n}"
        )));
    }
    let mut block = KBlock::zeros(k, n);
    block.w1[..n].copy_from_slice(filter.taps());
    block.w1[n..2 * n].copy_from_slice(filter.taps());
    let shifts = (-(reach as isize)..=reach as isize).filter(|&s| s != 0);
    for (row, s) in (2..k).zip(shifts) {
        block.w1[row * n..(row + 1) * n].copy_from_slice(&shifted_filter(filter, s)?);
    }
    block.w2[0] = alpha * w;
    for v in &mut block.w2[1..] {
        *v = -w;
    }
    Ok(block)
}

/// Shifts used by the ISI neurons of a K-block, in row order.
pub fn isi_shifts(k: usize) -> Vec<isize> {
    let reach = (k.saturating_sub(2) / 2) as isize;
    (-reach..=reach).filter(|&s| s != 0).collect()
}

/// Bias of the constant neuron used by [`init_k_eqznet_for_bit`].
const CONSTANT_NEURON_BIAS: f64 = 3.0;

/// Decision thresholds of bit `bit` along the sorted levels: `(t, δ, c)`
/// with `δ` half the level gap at `t` and `c = ±1` the sign change of the
/// bit's LLR when crossing `t` upwards. Also returns the LLR signs of the
/// lowest and highest regions.
fn bit_thresholds(constellation: &PamConstellation, bit: usize) -> (Vec<(f64, f64, f64)>, f64, f64) {
    let mut idx: Vec<usize> = (0..constellation.order()).collect();
    idx.sort_by(|&a, &b| constellation.level(a).total_cmp(&constellation.level(b)));
    let sign = |a: usize| if constellation.bit(a, bit) == 0 { 1.0 } else { -1.0 };
    let mut out = Vec::new();
    for w in idx.windows(2) {
        let (lo, hi) = (constellation.level(w[0]), constellation.level(w[1]));
        let (s0, s1) = (sign(w[0]), sign(w[1]));
        if s0 != s1 {
            out.push(((lo + hi) / 2.0, (hi - lo) / 2.0, (s1 - s0) / 2.0));
        }
    }
    (out, sign(idx[0]), sign(idx[idx.len() - 1]))
}

/// LMMSE-tap initialization of the network for bit `bit` of an M-PAM symbol.
///
/// 2-PAM uses the K-EqzNet layout of [`init_k_eqznet`], sign-aligned with
/// the bit. For M > 2 every bit gets one neuron `tanh((fᵀz − A t) / δ)` per
/// decision threshold `t` (`A` the filter gain, `δ` half the level gap),
/// weighted so that the output carries the bit's sign in every decision
/// region, plus a bias-only neuron for the constant term when one is needed
/// and there is room. Leftover neurons hold the ISI-shifted filters with
/// zero output weight, so they start inert but trainable and the untrained
/// network decides like LMMSE.
pub fn init_k_eqznet_for_bit(
    filter: &LmmseFilter,
    k: usize,
    alpha: f64,
    w: f64,
    constellation: &PamConstellation,
    bit: usize,
) -> Result<EqzNetParams> {
    if bit >= constellation.bits_per_symbol() {
        return Err(Error::InvalidParameter(format!(
            "bit {bit} out of range for {}-PAM",
            constellation.order()
        )));
    }
    let (thresholds, low, high) = bit_thresholds(constellation, bit);
    let mut p = init_k_eqznet(filter, k, alpha, w)?;
    if constellation.bits_per_symbol() == 1 {
        if thresholds[0].2 < 0.0 {
            p.blocks[0].w2.iter_mut().for_each(|v| *v = -*v);
        }
        return Ok(p);
    }
    let n = filter.len();
    let gain = filter.gain();
    let scale = (alpha - 1.0) * w;
    let block = &mut p.blocks[0];
    block.w2.iter_mut().for_each(|v| *v = 0.0);
    let mut row = 0;
    for &(t, delta, c) in thresholds.iter().take(k) {
        for (dst, &f) in block.w1[row * n..(row + 1) * n].iter_mut().zip(filter.taps()) {
            *dst = f / delta;
        }
        block.b1[row] = -gain * t / delta;
        block.w2[row] = c * scale;
        row += 1;
    }
    let constant = (low + high) / 2.0;
    if constant != 0.0 && row < k {
        block.w1[row * n..(row + 1) * n].iter_mut().for_each(|v| *v = 0.0);
        block.b1[row] = CONSTANT_NEURON_BIAS;
        block.w2[row] = constant * scale / CONSTANT_NEURON_BIAS.tanh();
        row += 1;
    }
    let shifts = (1..n as isize).flat_map(|s| [-s, s]);
    for (r, s) in (row..k).zip(shifts) {
        block.w1[r * n..(r + 1) * n].copy_from_slice(&shifted_filter(filter, s)?);
        block.b1[r] = 0.0;
    }
    Ok(p)
}

/// Standard-normal initialization of every weight; biases start at zero.
pub fn init_random(architecture: Architecture, n1: usize, n2: usize, seed: u64) -> Result<EqzNetParams> {
    architecture.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n1 + n2 + 1;
    let mut block = |width: usize| {
        let mut b = KBlock::zeros(width, n);
        for v in b.w1.iter_mut().chain(b.w2.iter_mut()) {
            *v = StandardNormal.sample(&mut rng);
        }
        b
    };
    let blocks = match architecture {
        Architecture::KEqzNet { k } => vec![block(k)],
        Architecture::Sum { k, l } | Architecture::Head { k, l } => vec![block(k), block(l)],
    };
    let head = matches!(architecture, Architecture::Head { .. }).then(|| {
        let mut h = HeadLayer::zeros();
        for v in h.w.iter_mut().chain(h.out.iter_mut()) {
            *v = StandardNormal.sample(&mut rng);
        }
        h
    });
    Ok(EqzNetParams {
        architecture,
        n1,
        n2,
        blocks,
        head,
    })
}

/// Geometry-checked forward pass.
pub fn forward(params: &EqzNetParams, frame: &ObservationFrame) -> Result<f64> {
    params.check_frame(frame)?;
    Ok(params.forward_samples(&frame.samples))
}

/// Gradient of `(1/m) Σ (f(z) - target)²` over a batch.
pub fn gradient(params: &EqzNetParams, batch: &[LabeledFrame]) -> Result<EqzNetParams> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let mut grad = params.zeros_like();
    let mut scratch = Vec::new();
    let scale = 2.0 / batch.len() as f64;
    for item in batch {
        params.check_frame(&item.frame)?;
        let t = item.target_llr;
        params.accumulate_gradient(&item.frame.samples, |y| scale * (y - t), &mut grad, &mut scratch);
    }
    Ok(grad)
}

/// Mean squared error of the network over a batch.
pub fn loss(params: &EqzNetParams, batch: &[LabeledFrame]) -> f64 {
    batch
        .iter()
        .map(|item| {
            let e = params.forward_samples(&item.frame.samples) - item.target_llr;
            e * e
        })
        .sum::<f64>()
        / batch.len() as f64
}

fn single_block(params: &EqzNetParams, role: &str) -> Result<KBlock> {
    match params.architecture {
        Architecture::KEqzNet { .. } => Ok(params.blocks[0].clone()),
        other => Err(Error::InvalidParameter(format!(
            "{role} must be a K-EqzNet, got {}",
            other.label()
        ))),
    }
}

fn check_same_geometry(a: &EqzNetParams, b: &EqzNetParams) -> Result<()> {
    if a.n1 != b.n1 || a.n2 != b.n2 {
        return Err(Error::GeometryMismatch {
            want_n1: a.n1,
            want_n2: a.n2,
            got_n1: b.n1,
            got_n2: b.n2,
        });
    }
    Ok(())
}

/// (K+L)-EqzNet from a K-block and a pretrained L-block.
pub fn compose_sum(k_params: &EqzNetParams, pretrained_l: &EqzNetParams) -> Result<EqzNetParams> {
    check_same_geometry(k_params, pretrained_l)?;
    let kb = single_block(k_params, "K-block")?;
    let lb = single_block(pretrained_l, "L-block")?;
    Ok(EqzNetParams {
        architecture: Architecture::Sum {
            k: kb.width,
            l: lb.width,
        },
        n1: k_params.n1,
        n2: k_params.n2,
        blocks: vec![kb, lb],
        head: None,
    })
}

/// (K+L,2)-EqzNet with default output combination `[αw, -w]`.
pub fn compose_head(k_params: &EqzNetParams, l_params: &EqzNetParams, head_seed: u64) -> Result<EqzNetParams> {
    compose_head_with(k_params, l_params, head_seed, DEFAULT_ALPHA, DEFAULT_W)
}

/// (K+L,2)-EqzNet. Head weights are `0.1 · N(0, 1)`, head biases zero and the
/// output combination `[αw, -w]`.
pub fn compose_head_with(
    k_params: &EqzNetParams,
    l_params: &EqzNetParams,
    head_seed: u64,
    alpha: f64,
    w: f64,
) -> Result<EqzNetParams> {
    check_same_geometry(k_params, l_params)?;
    let kb = single_block(k_params, "K-block")?;
    let lb = single_block(l_params, "L-block")?;
    let mut rng = ChaCha8Rng::seed_from_u64(head_seed);
    let mut head = HeadLayer::zeros();
    for v in &mut head.w {
        let g: f64 = StandardNormal.sample(&mut rng);
        *v = HEAD_INIT_SCALE * g;
    }
    head.out = [alpha * w, -w];
    Ok(EqzNetParams {
        architecture: Architecture::Head {
            k: kb.width,
            l: lb.width,
        },
        n1: k_params.n1,
        n2: k_params.n2,
        blocks: vec![kb, lb],
        head: Some(head),
    })
}

/// Multiply-accumulate operations per output LLR. The first layer costs
/// `(K+L)·N` plus `K+L` for the output combination; a head adds 4 + 2.
pub fn operation_count(params: &EqzNetParams) -> usize {
    let n = params.frame_len();
    let width = params.architecture.first_layer_width();
    let head = if params.head.is_some() { 6 } else { 0 };
    width * n + width + head
}

/// MAC count of the LMMSE filter on the same frame.
pub fn lmmse_operation_count(params: &EqzNetParams) -> usize {
    params.frame_len()
}
