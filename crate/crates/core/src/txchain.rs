//! Transmit chain: bit source, Gray M-PAM mapper, ISI channel with AWGN and
//! observation frame extraction.
//!
//! Signals are zero outside the block `0..Q`, both for symbols feeding the
//! channel memory and for observations pulled into a frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Severe-ISI test channel.
pub const H_A: [f64; 5] = [0.135, 0.450, 0.750, 0.450, 0.135];
/// Mild-ISI test channel.
pub const H_B: [f64; 5] = [0.877, 0.438, 0.168, 0.084, 0.059];

/// Known real-valued ISI channel: taps `h_0..h_{M_h}` plus the AWGN variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    taps: Vec<f64>,
    noise_variance: f64,
}

impl ChannelModel {
    /// Zero noise variance is accepted; consumers that divide by it reject it.
    pub fn new(taps: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::InvalidParameter("channel has no taps".into()));
        }
        if taps[0] == 0.0 {
            return Err(Error::InvalidParameter("leading channel tap is zero".into()));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("channel taps must be finite".into()));
        }
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise variance {noise_variance} must be finite and non-negative"
            )));
        }
        Ok(Self {
            taps,
            noise_variance,
        })
    }

    /// Looks up a named preset (`h_A`, `h_B`, `identity`).
    pub fn preset(name: &str, noise_variance: f64) -> Result<Self> {
        Self::new(preset_taps(name)?, noise_variance)
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    /// Channel memory `M_h`.
    pub fn memory(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    pub fn with_noise_variance(&self, noise_variance: f64) -> Result<Self> {
        Self::new(self.taps.clone(), noise_variance)
    }

    /// Taps rescaled to unit energy.
    pub fn normalized(&self) -> Self {
        let g = self.energy().sqrt();
        Self {
            taps: self.taps.iter().map(|t| t / g).collect(),
            noise_variance: self.noise_variance,
        }
    }

    /// Noiseless output `Σ h_i x_{n-i}` for `n = 0..Q`.
    pub fn convolve(&self, symbols: &[f64]) -> Vec<f64> {
        (0..symbols.len())
            .map(|n| {
                self.taps
                    .iter()
                    .enumerate()
                    .take(n + 1)
                    .map(|(i, h)| h * symbols[n - i])
                    .sum()
            })
            .collect()
    }

    /// Convolution plus seeded i.i.d. Gaussian noise.
    pub fn transmit(&self, symbols: &[f64], seed: u64) -> Vec<f64> {
        let mut z = self.convolve(symbols);
        if self.noise_variance > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, self.noise_variance.sqrt()).expect("finite std");
            for v in &mut z {
                *v += normal.sample(&mut rng);
            }
        }
        z
    }
}

pub fn preset_taps(name: &str) -> Result<Vec<f64>> {
    match name {
        "h_A" | "hA" | "A" => Ok(H_A.to_vec()),
        "h_B" | "hB" | "B" => Ok(H_B.to_vec()),
        "identity" | "awgn" => Ok(vec![1.0]),
        other => Err(Error::InvalidParameter(format!(
            "unknown channel preset {other:?}"
        ))),
    }
}

/// Gray-labelled M-PAM alphabet with unit average symbol energy.
///
/// Symbol indices run over the levels in ascending amplitude. Labels are
/// q-bit integers read most-significant bit first, so bit `m` of a symbol is
/// `(label >> (q - 1 - m)) & 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PamConstellation {
    order: usize,
    bits_per_symbol: usize,
    levels: Vec<f64>,
    labels: Vec<u32>,
    index_of_label: Vec<usize>,
}

impl PamConstellation {
    pub fn new(order: usize) -> Result<Self> {
        if order < 2 || !order.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "PAM order {order} must be a power of two >= 2"
            )));
        }
        let q = order.trailing_zeros() as usize;
        // Odd integer grid scaled to unit energy: E[(2i-M+1)^2] = (M^2-1)/3.
        let scale = (3.0 / ((order * order - 1) as f64)).sqrt();
        let levels: Vec<f64> = (0..order)
            .map(|i| (2.0 * i as f64 - (order as f64 - 1.0)) * scale)
            .collect();
        let labels: Vec<u32> = if order == 2 {
            // bit 0 -> +1, bit 1 -> -1
            vec![1, 0]
        } else {
            (0..order as u32).map(|i| i ^ (i >> 1)).collect()
        };
        let mut index_of_label = vec![0; order];
        for (i, &l) in labels.iter().enumerate() {
            index_of_label[l as usize] = i;
        }
        Ok(Self {
            order,
            bits_per_symbol: q,
            levels,
            labels,
            index_of_label,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// `q = log2 M`.
    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn level(&self, index: usize) -> f64 {
        self.levels[index]
    }

    pub fn index_of_label(&self, label: u32) -> usize {
        self.index_of_label[label as usize]
    }

    /// Bit `m` (0 = most significant) of the label of symbol `index`.
    #[inline]
    pub fn bit(&self, index: usize, m: usize) -> u8 {
        ((self.labels[index] >> (self.bits_per_symbol - 1 - m)) & 1) as u8
    }

    /// Index of the level nearest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &l) in self.levels.iter().enumerate() {
            let d = (x - l).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

/// Mapped symbols together with the bits that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBlock {
    pub symbols: Vec<f64>,
    /// Constellation index of each symbol.
    pub indices: Vec<usize>,
    pub source_bits: Vec<u8>,
}

impl SymbolBlock {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Groups `q` bits (MSB first) per symbol and maps them through the Gray table.
pub fn gray_map(bits: &[u8], constellation: &PamConstellation) -> Result<SymbolBlock> {
    let q = constellation.bits_per_symbol();
    if bits.len() % q != 0 {
        return Err(Error::LengthMismatch {
            expected: bits.len().div_ceil(q) * q,
            actual: bits.len(),
        });
    }
    let mut symbols = Vec::with_capacity(bits.len() / q);
    let mut indices = Vec::with_capacity(bits.len() / q);
    for chunk in bits.chunks_exact(q) {
        let label = chunk.iter().fold(0u32, |acc, &b| (acc << 1) | (b & 1) as u32);
        let idx = constellation.index_of_label(label);
        indices.push(idx);
        symbols.push(constellation.level(idx));
    }
    Ok(SymbolBlock {
        symbols,
        indices,
        source_bits: bits.to_vec(),
    })
}

/// Runs a symbol block through the channel, `z = h * x + w`.
pub fn apply_channel(block: &SymbolBlock, channel: &ChannelModel, seed: u64) -> Result<Vec<f64>> {
    if block.is_empty() {
        return Err(Error::InvalidParameter("empty symbol block".into()));
    }
    Ok(channel.transmit(&block.symbols, seed))
}

/// `σ_w² = 1 / (2 R q Eb/N0)` for unit-energy real signaling.
pub fn ebn0_to_noise_variance(
    ebn0_db: f64,
    constellation: &PamConstellation,
    code_rate: f64,
) -> Result<f64> {
    if !(code_rate > 0.0 && code_rate <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "code rate {code_rate} outside (0, 1]"
        )));
    }
    let ebn0 = 10f64.powf(ebn0_db / 10.0);
    Ok(1.0 / (2.0 * code_rate * constellation.bits_per_symbol() as f64 * ebn0))
}

/// Uniform i.i.d. bits from a seeded generator.
pub fn random_bits(count: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random::<bool>() as u8).collect()
}

/// Observation window `[z_{n-N2}, .., z_n, .., z_{n+N1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub samples: Vec<f64>,
    pub n1: usize,
    pub n2: usize,
}

impl ObservationFrame {
    pub fn new(samples: Vec<f64>, n1: usize, n2: usize) -> Result<Self> {
        if samples.len() != n1 + n2 + 1 {
            return Err(Error::LengthMismatch {
                expected: n1 + n2 + 1,
                actual: samples.len(),
            });
        }
        Ok(Self { samples, n1, n2 })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn center(&self) -> f64 {
        self.samples[self.n2]
    }

    pub fn negated(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|v| -v).collect(),
            n1: self.n1,
            n2: self.n2,
        }
    }
}

/// Frame centred on `z[n]`, zero-filled outside the block.
pub fn extract_frame(z: &[f64], n: usize, n1: usize, n2: usize) -> ObservationFrame {
    let mut samples = vec![0.0; n1 + n2 + 1];
    fill_frame(z, n, n1, n2, &mut samples);
    ObservationFrame { samples, n1, n2 }
}

/// Allocation-free form of [`extract_frame`]; `out.len()` must be `n1 + n2 + 1`.
pub fn fill_frame(z: &[f64], n: usize, n1: usize, n2: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n1 + n2 + 1);
    let start = n as isize - n2 as isize;
    for (r, slot) in out.iter_mut().enumerate() {
        let idx = start + r as isize;
        *slot = if idx >= 0 && (idx as usize) < z.len() {
            z[idx as usize]
        } else {
            0.0
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pam_sign_convention() {
        let c = PamConstellation::new(2).unwrap();
        let b = gray_map(&[0, 1], &c).unwrap();
        assert_eq!(b.symbols, vec![1.0, -1.0]);
    }

    #[test]
    fn four_pam_gray_levels() {
        let c = PamConstellation::new(4).unwrap();
        let d = 1.0 / 5f64.sqrt();
        let b = gray_map(&[0, 0, 0, 1, 1, 1, 1, 0], &c).unwrap();
        let want = [-3.0 * d, -d, d, 3.0 * d];
        for (got, want) in b.symbols.iter().zip(want) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_energy_and_gray_adjacency() {
        for m in [2usize, 4, 8, 16] {
            let c = PamConstellation::new(m).unwrap();
            let q = c.bits_per_symbol();
            // exhaustive labels: every level exactly once
            let bits: Vec<u8> = (0..m as u32)
                .flat_map(|l| (0..q).rev().map(move |s| ((l >> s) & 1) as u8))
                .collect();
            let b = gray_map(&bits, &c).unwrap();
            let mean: f64 = b.symbols.iter().sum::<f64>() / m as f64;
            let power: f64 = b.symbols.iter().map(|x| x * x).sum::<f64>() / m as f64;
            assert!(mean.abs() < 1e-12);
            assert!((power - 1.0).abs() < 1e-9, "M={m} power={power}");
            for i in 1..m {
                let d = (c.labels()[i] ^ c.labels()[i - 1]).count_ones();
                assert_eq!(d, 1, "M={m} levels {i}-1 not Gray adjacent");
            }
        }
    }

    #[test]
    fn map_rejects_partial_symbol() {
        let c = PamConstellation::new(4).unwrap();
        assert!(matches!(
            gray_map(&[0, 1, 1], &c),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(PamConstellation::new(3).is_err());
    }

    #[test]
    fn identity_channel_noiseless() {
        let ch = ChannelModel::new(vec![1.0], 0.0).unwrap();
        assert_eq!(ch.transmit(&[1.0, -1.0], 7), vec![1.0, -1.0]);
    }

    #[test]
    fn impulse_response_of_h_a() {
        let ch = ChannelModel::preset("h_A", 0.0).unwrap();
        let z = ch.transmit(&[1.0, 0.0, 0.0, 0.0, 0.0], 1);
        assert_eq!(z, H_A.to_vec());
    }

    #[test]
    fn two_tap_convolution() {
        let ch = ChannelModel::new(vec![1.0, 0.5], 0.0).unwrap();
        // hand convolution: [1, 1 + 0.5, -1 + 0.5]
        assert_eq!(ch.transmit(&[1.0, 1.0, -1.0], 3), vec![1.0, 1.5, -0.5]);
    }

    #[test]
    fn transmit_is_deterministic_per_seed() {
        let ch = ChannelModel::preset("h_B", 0.3).unwrap();
        let x: Vec<f64> = (0..64).map(|i| if i % 3 == 0 { 1.0 } else { -1.0 }).collect();
        assert_eq!(ch.transmit(&x, 11), ch.transmit(&x, 11));
        assert_ne!(ch.transmit(&x, 11), ch.transmit(&x, 12));
    }

    #[test]
    fn empirical_noise_variance() {
        let sigma2 = 0.37;
        let ch = ChannelModel::new(vec![1.0], sigma2).unwrap();
        let n = 1_000_000;
        let z = ch.transmit(&vec![0.0; n], 5);
        let var = z.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var / sigma2 - 1.0).abs() < 0.01, "var={var}");
    }

    #[test]
    fn preset_energies() {
        // Published taps are unit power to three decimals only.
        for name in ["h_A", "h_B"] {
            let ch = ChannelModel::preset(name, 0.1).unwrap();
            assert!((ch.energy() - 1.0).abs() < 5e-3, "{name}: {}", ch.energy());
            assert!((ch.normalized().energy() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn channel_validation() {
        assert!(ChannelModel::new(vec![], 0.1).is_err());
        assert!(ChannelModel::new(vec![0.0, 1.0], 0.1).is_err());
        assert!(ChannelModel::new(vec![1.0], -0.1).is_err());
        assert!(ChannelModel::preset("h_Z", 0.1).is_err());
    }

    #[test]
    fn ebn0_conversion() {
        let c2 = PamConstellation::new(2).unwrap();
        let c4 = PamConstellation::new(4).unwrap();
        assert!((ebn0_to_noise_variance(0.0, &c2, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((ebn0_to_noise_variance(3.0103, &c2, 1.0).unwrap() - 0.25).abs() < 1e-5);
        assert!((ebn0_to_noise_variance(0.0, &c4, 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!(ebn0_to_noise_variance(0.0, &c2, 0.0).is_err());
        assert!(ebn0_to_noise_variance(0.0, &c2, 1.5).is_err());
    }

    #[test]
    fn frame_extraction_zero_fills() {
        let z = [1.0, 2.0, 3.0];
        assert_eq!(extract_frame(&z, 1, 1, 1).samples, vec![1.0, 2.0, 3.0]);
        assert_eq!(extract_frame(&z, 0, 1, 1).samples, vec![0.0, 1.0, 2.0]);
        assert_eq!(extract_frame(&z, 2, 2, 0).samples, vec![3.0, 0.0, 0.0]);
        let f = extract_frame(&z, 2, 0, 2);
        assert_eq!(f.center(), 3.0);
        assert!(ObservationFrame::new(vec![1.0], 1, 0).is_err());
    }
}
