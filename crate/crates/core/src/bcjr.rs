//! Full-state MAP (BCJR) equalization on the channel trellis.
//!
//! States hold the last `M_h` transmitted symbol indices; digit `i - 1` of
//! the base-`M` state number is the index of `x_{n-i}`. All recursions run in
//! the log domain and are renormalized every step.

use crate::lmmse::log_add;
use crate::txchain::{gray_map, random_bits, ChannelModel, PamConstellation};
use crate::{clamp_llr, Error, Result, LLR_CLAMP};

/// Default limit on trellis size (`4^8`).
pub const DEFAULT_STATE_BUDGET: usize = 1 << 16;

/// Limit on sequences enumerated by [`brute_force_map`].
pub const ENUMERATION_BUDGET: u128 = 1 << 20;

#[derive(Debug, Clone)]
pub struct TrellisSpec {
    constellation: PamConstellation,
    taps: Vec<f64>,
    state_count: usize,
    next_state: Vec<usize>,
    output: Vec<f64>,
}

impl TrellisSpec {
    pub fn constellation(&self) -> &PamConstellation {
        &self.constellation
    }

    pub fn memory(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn transition_count(&self) -> usize {
        self.next_state.len()
    }

    pub fn next_state(&self, state: usize, input: usize) -> usize {
        self.next_state[state * self.constellation.order() + input]
    }

    /// Noiseless output for `input` entering from `state`.
    pub fn output(&self, state: usize, input: usize) -> f64 {
        self.output[state * self.constellation.order() + input]
    }

    /// Symbol index of `x_{n-i}` held in `state`, `1 <= i <= M_h`.
    pub fn state_symbol(&self, state: usize, i: usize) -> usize {
        let m = self.constellation.order();
        (state / m.pow(i as u32 - 1)) % m
    }

    /// Output at time `n < M_h`, where history older than the block start is zero.
    fn edge_output(&self, n: usize, state: usize, input: usize) -> f64 {
        let mut y = self.taps[0] * self.constellation.level(input);
        for i in 1..=n.min(self.memory()) {
            y += self.taps[i] * self.constellation.level(self.state_symbol(state, i));
        }
        y
    }
}

pub fn build_trellis(channel: &ChannelModel, constellation: &PamConstellation) -> Result<TrellisSpec> {
    build_trellis_with_budget(channel, constellation, DEFAULT_STATE_BUDGET)
}

pub fn build_trellis_with_budget(
    channel: &ChannelModel,
    constellation: &PamConstellation,
    budget: usize,
) -> Result<TrellisSpec> {
    let m = constellation.order();
    let mem = channel.memory() as u32;
    let states = m
        .checked_pow(mem)
        .filter(|&s| s <= budget)
        .ok_or(Error::StateBudgetExceeded {
            states: m.saturating_pow(mem),
            budget,
        })?;
    let taps = channel.taps().to_vec();
    let mut next_state = Vec::with_capacity(states * m);
    let mut output = Vec::with_capacity(states * m);
    for s in 0..states {
        for a in 0..m {
            next_state.push((s * m + a) % states);
            let mut y = taps[0] * constellation.level(a);
            let mut rest = s;
            for h in &taps[1..] {
                y += h * constellation.level(rest % m);
                rest /= m;
            }
            output.push(y);
        }
    }
    Ok(TrellisSpec {
        constellation: constellation.clone(),
        taps,
        state_count: states,
        next_state,
        output,
    })
}

/// Clamped LLRs, one per code bit.
#[derive(Debug, Clone, PartialEq)]
pub struct LlrSequence {
    pub values: Vec<f64>,
    pub clamp_magnitude: f64,
}

impl LlrSequence {
    fn from_unclamped(values: Vec<f64>) -> Self {
        Self {
            values: values.into_iter().map(clamp_llr).collect(),
            clamp_magnitude: LLR_CLAMP,
        }
    }

    /// Hard decisions, bit 0 for non-negative LLR.
    pub fn hard_bits(&self) -> Vec<u8> {
        self.values.iter().map(|&l| (l < 0.0) as u8).collect()
    }
}

/// `P(x_n = level a | z)`, stored row-major `[n][a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolPosteriors {
    order: usize,
    probs: Vec<f64>,
}

impl SymbolPosteriors {
    fn from_log(order: usize, mut logp: Vec<f64>) -> Self {
        for row in logp.chunks_exact_mut(order) {
            let norm = row.iter().fold(f64::NEG_INFINITY, |acc, &v| log_add(acc, v));
            for v in row {
                *v = (*v - norm).exp();
            }
        }
        Self { order, probs: logp }
    }

    pub fn len(&self) -> usize {
        self.probs.len() / self.order
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn get(&self, n: usize, a: usize) -> f64 {
        self.probs[n * self.order + a]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.probs[n * self.order..(n + 1) * self.order]
    }
}

#[derive(Debug, Clone)]
pub struct MapOutput {
    pub posteriors: SymbolPosteriors,
    /// A-posteriori bit LLRs `ln P(c=0|z) / P(c=1|z)`.
    pub llrs: LlrSequence,
}

fn check_noise(noise_variance: f64) -> Result<()> {
    if noise_variance > 0.0 && noise_variance.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "MAP equalization needs positive noise variance, got {noise_variance}"
        )))
    }
}

fn check_priors(priors: Option<&[f64]>, expected: usize) -> Result<()> {
    match priors {
        Some(p) if p.len() != expected => Err(Error::LengthMismatch {
            expected,
            actual: p.len(),
        }),
        _ => Ok(()),
    }
}

/// A-priori log weight of each symbol from per-bit LLRs, up to a constant.
fn symbol_prior(constellation: &PamConstellation, bit_priors: &[f64], out: &mut [f64]) {
    for (a, o) in out.iter_mut().enumerate() {
        *o = bit_priors
            .iter()
            .enumerate()
            .map(|(m, &l)| if constellation.bit(a, m) == 0 { l / 2.0 } else { -l / 2.0 })
            .sum();
    }
}

/// Forward-backward pass returning unnormalized symbol log-posteriors `[n][a]`.
///
/// With `known_start` the history before `z[0]` is the all-zero signal;
/// otherwise the initial state is uniform. The final state is always uniform.
fn log_posteriors(
    z: &[f64],
    trellis: &TrellisSpec,
    noise_variance: f64,
    priors: Option<&[f64]>,
    known_start: bool,
) -> Vec<f64> {
    let m = trellis.constellation.order();
    let q = trellis.constellation.bits_per_symbol();
    let s_count = trellis.state_count;
    let len = z.len();
    let inv2s = 1.0 / (2.0 * noise_variance);
    let mem = trellis.memory();

    // gamma[n][s*m + a]
    let mut gamma = vec![0.0; len * s_count * m];
    let mut prior_sym = vec![0.0; m];
    for n in 0..len {
        if let Some(p) = priors {
            symbol_prior(&trellis.constellation, &p[n * q..(n + 1) * q], &mut prior_sym);
        }
        let g = &mut gamma[n * s_count * m..(n + 1) * s_count * m];
        for s in 0..s_count {
            for a in 0..m {
                let y = if known_start && n < mem {
                    trellis.edge_output(n, s, a)
                } else {
                    trellis.output[s * m + a]
                };
                let d = z[n] - y;
                g[s * m + a] = -d * d * inv2s + prior_sym[a];
            }
        }
    }

    let mut alpha = vec![f64::NEG_INFINITY; (len + 1) * s_count];
    if known_start {
        alpha[0] = 0.0;
    } else {
        alpha[..s_count].fill(0.0);
    }
    let stride = s_count / m;
    for n in 0..len {
        let (cur, next) = alpha.split_at_mut((n + 1) * s_count);
        let cur = &cur[n * s_count..];
        let next = &mut next[..s_count];
        let g = &gamma[n * s_count * m..(n + 1) * s_count * m];
        let mut best = f64::NEG_INFINITY;
        for (sp, slot) in next.iter_mut().enumerate() {
            // predecessors of sp: s = sp / m + j * stride, input a = sp % m
            let a = sp % m;
            let base = sp / m;
            let mut acc = f64::NEG_INFINITY;
            for j in 0..m {
                let s = base + j * stride;
                acc = log_add(acc, cur[s] + g[s * m + a]);
            }
            *slot = acc;
            best = best.max(acc);
        }
        if best.is_finite() {
            for v in next.iter_mut() {
                *v -= best;
            }
        }
    }

    let mut beta = vec![0.0; s_count];
    let mut beta_prev = vec![0.0; s_count];
    let mut logpost = vec![f64::NEG_INFINITY; len * m];
    for n in (0..len).rev() {
        let g = &gamma[n * s_count * m..(n + 1) * s_count * m];
        let al = &alpha[n * s_count..(n + 1) * s_count];
        let post = &mut logpost[n * m..(n + 1) * m];
        let mut best = f64::NEG_INFINITY;
        for s in 0..s_count {
            let mut acc_b = f64::NEG_INFINITY;
            for a in 0..m {
                let t = g[s * m + a] + beta[trellis.next_state[s * m + a]];
                acc_b = log_add(acc_b, t);
                post[a] = log_add(post[a], al[s] + t);
            }
            beta_prev[s] = acc_b;
            best = best.max(acc_b);
        }
        for v in beta_prev.iter_mut() {
            *v -= best;
        }
        std::mem::swap(&mut beta, &mut beta_prev);
    }
    logpost
}

/// Unclamped bit LLRs from symbol log-posteriors.
fn bit_llrs(constellation: &PamConstellation, logpost: &[f64]) -> Vec<f64> {
    let m = constellation.order();
    let q = constellation.bits_per_symbol();
    let mut out = Vec::with_capacity(logpost.len() / m * q);
    for row in logpost.chunks_exact(m) {
        for bit in 0..q {
            let (mut num, mut den) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (a, &v) in row.iter().enumerate() {
                if constellation.bit(a, bit) == 0 {
                    num = log_add(num, v);
                } else {
                    den = log_add(den, v);
                }
            }
            out.push(num - den);
        }
    }
    out
}

/// MAP equalization of a whole block.
///
/// `priors`, when given, hold one a-priori LLR per code bit (`Q·q` values).
pub fn map_equalize(
    z: &[f64],
    trellis: &TrellisSpec,
    noise_variance: f64,
    priors: Option<&[f64]>,
) -> Result<MapOutput> {
    check_noise(noise_variance)?;
    let c = &trellis.constellation;
    check_priors(priors, z.len() * c.bits_per_symbol())?;
    let logpost = log_posteriors(z, trellis, noise_variance, priors, true);
    let llrs = LlrSequence::from_unclamped(bit_llrs(c, &logpost));
    Ok(MapOutput {
        posteriors: SymbolPosteriors::from_log(c.order(), logpost),
        llrs,
    })
}

/// Extrinsic bit LLRs (a-posteriori minus a-priori), clamped.
pub fn map_extrinsic(
    z: &[f64],
    trellis: &TrellisSpec,
    noise_variance: f64,
    priors: &[f64],
) -> Result<Vec<f64>> {
    check_noise(noise_variance)?;
    let c = &trellis.constellation;
    check_priors(Some(priors), z.len() * c.bits_per_symbol())?;
    let logpost = log_posteriors(z, trellis, noise_variance, Some(priors), true);
    Ok(bit_llrs(c, &logpost)
        .into_iter()
        .zip(priors)
        .map(|(app, pr)| clamp_llr(app - pr))
        .collect())
}

/// Exact posteriors by enumerating every symbol sequence of the block.
pub fn brute_force_map(
    z: &[f64],
    channel: &ChannelModel,
    constellation: &PamConstellation,
    noise_variance: f64,
    priors: Option<&[f64]>,
) -> Result<SymbolPosteriors> {
    check_noise(noise_variance)?;
    let m = constellation.order();
    let q = constellation.bits_per_symbol();
    let len = z.len();
    check_priors(priors, len * q)?;
    let count = (m as u128)
        .checked_pow(len as u32)
        .filter(|&c| c <= ENUMERATION_BUDGET)
        .ok_or(Error::EnumerationBudgetExceeded {
            count: (m as u128).saturating_pow(len as u32),
            budget: ENUMERATION_BUDGET,
        })?;
    let taps = channel.taps();
    let mut logpost = vec![f64::NEG_INFINITY; len * m];
    let mut idx = vec![0usize; len];
    let mut x = vec![0.0; len];
    let mut prior_sym = vec![0.0; len * m];
    if let Some(p) = priors {
        for n in 0..len {
            symbol_prior(constellation, &p[n * q..(n + 1) * q], &mut prior_sym[n * m..(n + 1) * m]);
        }
    }
    for seq in 0..count {
        let mut rest = seq;
        for n in 0..len {
            idx[n] = (rest % m as u128) as usize;
            rest /= m as u128;
            x[n] = constellation.level(idx[n]);
        }
        let mut ll = 0.0;
        for n in 0..len {
            let mut y = 0.0;
            for (i, h) in taps.iter().enumerate() {
                if i <= n {
                    y += h * x[n - i];
                }
            }
            let d = z[n] - y;
            ll += -d * d / (2.0 * noise_variance) + prior_sym[n * m + idx[n]];
        }
        for n in 0..len {
            let slot = &mut logpost[n * m + idx[n]];
            *slot = log_add(*slot, ll);
        }
    }
    Ok(SymbolPosteriors::from_log(m, logpost))
}

/// Sliding-window MAP: every symbol is decided from a window of `window`
/// observations centred on it. Windows touching the block start keep the
/// known zero history; interior window edges start from uniform states.
pub fn windowed_map(
    z: &[f64],
    trellis: &TrellisSpec,
    noise_variance: f64,
    window: usize,
) -> Result<LlrSequence> {
    check_noise(noise_variance)?;
    let min = 2 * trellis.memory() + 1;
    if window % 2 == 0 || window < min {
        return Err(Error::WindowTooSmall { window, min });
    }
    let c = &trellis.constellation;
    let (m, q) = (c.order(), c.bits_per_symbol());
    let half = window / 2;
    let mut out = Vec::with_capacity(z.len() * q);
    for n in 0..z.len() {
        let lo = n.saturating_sub(half);
        let hi = (n + half).min(z.len() - 1);
        let logpost = log_posteriors(&z[lo..=hi], trellis, noise_variance, None, lo == 0);
        let row = &logpost[(n - lo) * m..(n - lo + 1) * m];
        out.extend(bit_llrs(c, row));
    }
    Ok(LlrSequence::from_unclamped(out))
}

/// Monte-Carlo settings for [`calibrate_window`].
#[derive(Debug, Clone)]
pub struct CalibrationSettings {
    pub block_len: usize,
    pub blocks: usize,
    pub seed: u64,
    /// Largest window probed.
    pub max_window: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        Self {
            block_len: 2000,
            blocks: 10,
            seed: 1,
            max_window: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowProbe {
    pub window: usize,
    pub bit_errors: u64,
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub window: usize,
    /// False when no probed window met the target; `window` is then the largest probed.
    pub aligned: bool,
    pub full_block_errors: u64,
    pub bits: u64,
    pub probes: Vec<WindowProbe>,
}

impl CalibrationReport {
    /// Symmetric split `N1 = N2 = (W - 1) / 2`.
    pub fn geometry(&self) -> (usize, usize) {
        (self.window / 2, self.window / 2)
    }
}

/// Smallest odd window whose BER is within `target_ber_ratio` of full-block
/// MAP on the same noise realizations.
pub fn calibrate_window(
    channel: &ChannelModel,
    constellation: &PamConstellation,
    snr_db: f64,
    target_ber_ratio: f64,
    settings: &CalibrationSettings,
) -> Result<CalibrationReport> {
    if target_ber_ratio < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "target BER ratio {target_ber_ratio} must be >= 1"
        )));
    }
    let sigma2 = crate::txchain::ebn0_to_noise_variance(snr_db, constellation, 1.0)?;
    let ch = channel.with_noise_variance(sigma2)?;
    let trellis = build_trellis(&ch, constellation)?;
    let q = constellation.bits_per_symbol();

    let mut blocks = Vec::with_capacity(settings.blocks);
    let mut full_errors = 0u64;
    for b in 0..settings.blocks {
        let seed = settings.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(b as u64);
        let bits = random_bits(settings.block_len * q, seed);
        let block = gray_map(&bits, constellation)?;
        let z = ch.transmit(&block.symbols, seed ^ 0x5DEE_CE66);
        let full = map_equalize(&z, &trellis, sigma2, None)?;
        full_errors += count_errors(&full.llrs.hard_bits(), &bits);
        blocks.push((bits, z));
    }
    let total_bits = (settings.blocks * settings.block_len * q) as u64;
    let limit = target_ber_ratio * full_errors as f64;

    let mut probes = Vec::new();
    let mut window = 2 * ch.memory() + 1;
    let max_window = settings.max_window.max(window);
    loop {
        let mut errors = 0u64;
        for (bits, z) in &blocks {
            let llrs = windowed_map(z, &trellis, sigma2, window)?;
            errors += count_errors(&llrs.hard_bits(), bits);
        }
        probes.push(WindowProbe {
            window,
            bit_errors: errors,
            bits: total_bits,
        });
        if errors as f64 <= limit {
            return Ok(CalibrationReport {
                window,
                aligned: true,
                full_block_errors: full_errors,
                bits: total_bits,
                probes,
            });
        }
        if window + 2 > max_window {
            return Ok(CalibrationReport {
                window,
                aligned: false,
                full_block_errors: full_errors,
                bits: total_bits,
                probes,
            });
        }
        window += 2;
    }
}

pub(crate) fn count_errors(a: &[u8], b: &[u8]) -> u64 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::txchain::ebn0_to_noise_variance;

    fn bpsk() -> PamConstellation {
        PamConstellation::new(2).unwrap()
    }

    #[test]
    fn trellis_sizes() {
        let ch = ChannelModel::new(vec![1.0, 0.5], 0.1).unwrap();
        let t = build_trellis(&ch, &bpsk()).unwrap();
        assert_eq!(t.state_count(), 2);
        assert_eq!(t.transition_count(), 4);
        let pam4 = PamConstellation::new(4).unwrap();
        let t4 = build_trellis(&ChannelModel::preset("h_A", 0.1).unwrap(), &pam4).unwrap();
        assert_eq!(t4.state_count(), 256);
    }

    #[test]
    fn trellis_output_by_hand() {
        let c = bpsk();
        let ch = ChannelModel::new(vec![1.0, 0.5], 0.1).unwrap();
        let t = build_trellis(&ch, &c).unwrap();
        // state holding x_{n-1} = +1 (index 1), input -1 (index 0)
        let plus = c.levels().iter().position(|&l| l == 1.0).unwrap();
        let minus = 1 - plus;
        assert!((t.output(plus, minus) - (-0.5)).abs() < 1e-15);
    }

    #[test]
    fn every_state_has_m_in_and_out() {
        let c = PamConstellation::new(4).unwrap();
        let ch = ChannelModel::new(vec![1.0, 0.3, -0.2], 0.1).unwrap();
        let t = build_trellis(&ch, &c).unwrap();
        let mut incoming = vec![0; t.state_count()];
        for s in 0..t.state_count() {
            for a in 0..4 {
                incoming[t.next_state(s, a)] += 1;
            }
        }
        assert!(incoming.iter().all(|&k| k == 4));
        // outputs agree with direct convolution of each length-3 pattern
        for s in 0..t.state_count() {
            for a in 0..4 {
                let direct = ch.convolve(&[
                    c.level(t.state_symbol(s, 2)),
                    c.level(t.state_symbol(s, 1)),
                    c.level(a),
                ])[2];
                assert!((t.output(s, a) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn state_budget() {
        let c = PamConstellation::new(4).unwrap();
        let ch = ChannelModel::new(vec![1.0; 10], 0.1).unwrap();
        assert!(matches!(
            build_trellis(&ch, &c),
            Err(Error::StateBudgetExceeded { .. })
        ));
    }

    #[test]
    fn memoryless_llr_is_closed_form() {
        let s2 = 0.4;
        let ch = ChannelModel::new(vec![1.0], s2).unwrap();
        let t = build_trellis(&ch, &bpsk()).unwrap();
        let z = [0.3, -1.2, 2.0, 0.0];
        let out = map_equalize(&z, &t, s2, None).unwrap();
        for (l, zn) in out.llrs.values.iter().zip(z) {
            assert!((l - 2.0 * zn / s2).abs() < 1e-12);
        }
        let w = windowed_map(&z, &t, s2, 3).unwrap();
        for (l, zn) in w.values.iter().zip(z) {
            assert!((l - 2.0 * zn / s2).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_priors_change_nothing() {
        let c = PamConstellation::new(4).unwrap();
        let ch = ChannelModel::new(vec![1.0, 0.4], 0.2).unwrap();
        let t = build_trellis(&ch, &c).unwrap();
        let z = ch.transmit(&[0.4, -1.3, 1.3, 0.4, -0.4], 3);
        let a = map_equalize(&z, &t, 0.2, None).unwrap();
        let b = map_equalize(&z, &t, 0.2, Some(&[0.0; 10])).unwrap();
        for (x, y) in a.llrs.values.iter().zip(&b.llrs.values) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_two_tap() {
        let c = bpsk();
        let ch = ChannelModel::new(vec![1.0, 0.5], 0.3).unwrap();
        let t = build_trellis(&ch, &c).unwrap();
        let x = [1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
        let z = ch.transmit(&x, 42);
        let fb = map_equalize(&z, &t, 0.3, None).unwrap();
        let bf = brute_force_map(&z, &ch, &c, 0.3, None).unwrap();
        for n in 0..6 {
            for a in 0..2 {
                assert!((fb.posteriors.get(n, a) - bf.get(n, a)).abs() < 1e-9);
            }
            let l = (bf.get(n, 1) / bf.get(n, 0)).ln();
            assert!((fb.llrs.values[n] - l).abs() < 1e-9);
        }
    }

    #[test]
    fn brute_force_single_symbol_softmax() {
        let c = PamConstellation::new(4).unwrap();
        let ch = ChannelModel::new(vec![1.0], 0.5).unwrap();
        let p = brute_force_map(&[0.2], &ch, &c, 0.5, None).unwrap();
        let w: Vec<f64> = c.levels().iter().map(|b| (-(0.2 - b) * (0.2 - b) / 1.0).exp()).collect();
        let s: f64 = w.iter().sum();
        for a in 0..4 {
            assert!((p.get(0, a) - w[a] / s).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_zero_observation_is_uniform() {
        let c = bpsk();
        let ch = ChannelModel::new(vec![1.0], 0.5).unwrap();
        let p = brute_force_map(&[0.0; 4], &ch, &c, 0.5, None).unwrap();
        for n in 0..4 {
            assert!((p.get(n, 0) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn enumeration_budget() {
        let c = PamConstellation::new(4).unwrap();
        let ch = ChannelModel::new(vec![1.0], 0.5).unwrap();
        assert!(matches!(
            brute_force_map(&[0.0; 11], &ch, &c, 0.5, None),
            Err(Error::EnumerationBudgetExceeded { .. })
        ));
    }

    #[test]
    fn full_window_equals_block() {
        let c = bpsk();
        let ch = ChannelModel::preset("h_B", 0.2).unwrap();
        let t = build_trellis(&ch, &c).unwrap();
        let bits = random_bits(30, 1);
        let z = ch.transmit(&gray_map(&bits, &c).unwrap().symbols, 2);
        let full = map_equalize(&z, &t, 0.2, None).unwrap();
        let w = windowed_map(&z, &t, 0.2, 61).unwrap();
        for (a, b) in full.llrs.values.iter().zip(&w.values) {
            assert!((a - b).abs() < 1e-9);
        }
        assert!(matches!(
            windowed_map(&z, &t, 0.2, 8),
            Err(Error::WindowTooSmall { .. })
        ));
        assert!(windowed_map(&z, &t, 0.2, 7).is_err());
    }

    #[test]
    fn window_sweep_converges() {
        let c = bpsk();
        let s2 = ebn0_to_noise_variance(8.0, &c, 1.0).unwrap();
        let ch = ChannelModel::preset("h_B", s2).unwrap();
        let t = build_trellis(&ch, &c).unwrap();
        let bits = random_bits(400, 77);
        let z = ch.transmit(&gray_map(&bits, &c).unwrap().symbols, 78);
        let full = map_equalize(&z, &t, s2, None).unwrap();
        let mut last = f64::INFINITY;
        for w in [9usize, 13, 17, 21, 25, 29] {
            let lw = windowed_map(&z, &t, s2, w).unwrap();
            let diff = lw
                .values
                .iter()
                .zip(&full.llrs.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= last + 1e-12, "window {w}: {diff} > {last}");
            last = diff;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn calibration_memoryless_is_minimal() {
        let ch = ChannelModel::new(vec![1.0], 1.0).unwrap();
        let r = calibrate_window(&ch, &bpsk(), 4.0, 1.05, &CalibrationSettings::default()).unwrap();
        assert_eq!(r.window, 1);
        assert!(r.aligned);
        assert_eq!(r.geometry(), (0, 0));
    }

    #[test]
    fn calibration_ratio_one_block_window_aligns() {
        let ch = ChannelModel::preset("h_B", 1.0).unwrap();
        let settings = CalibrationSettings {
            block_len: 15,
            blocks: 4,
            seed: 3,
            max_window: 31,
        };
        let r = calibrate_window(&ch, &bpsk(), 6.0, 1.0, &settings).unwrap();
        assert!(r.aligned);
        assert!(r.window <= 31);
        assert_eq!(r.probes.last().unwrap().window, r.window);
        assert!(calibrate_window(&ch, &bpsk(), 6.0, 0.9, &settings).is_err());
    }

    #[test]
    fn strong_true_priors_pin_the_sequence() {
        let c = bpsk();
        let ch = ChannelModel::preset("h_A", 0.5).unwrap();
        let t = build_trellis(&ch, &c).unwrap();
        let bits = random_bits(12, 5);
        let z = ch.transmit(&gray_map(&bits, &c).unwrap().symbols, 6);
        let pri: Vec<f64> = bits.iter().map(|&b| if b == 0 { 30.0 } else { -30.0 }).collect();
        let out = map_equalize(&z, &t, 0.5, Some(&pri)).unwrap();
        let block = gray_map(&bits, &c).unwrap();
        for (n, &idx) in block.indices.iter().enumerate() {
            assert!(out.posteriors.get(n, idx) > 1.0 - 1e-6);
        }
    }
}
