//! Linear MMSE equalization.
//!
//! The filter taps are ordered like the observation frame,
//! `[f_{N2}, .., f_0, .., f_{-N1}]`, so the estimate of `x_n` is the plain
//! inner product of taps and frame samples.

use nalgebra::{DMatrix, DVector};

use crate::txchain::{ChannelModel, ObservationFrame, PamConstellation};
use crate::{Error, Result};

/// `N × (N + M_h)` channel convolution matrix for one observation frame.
///
/// Column `j` multiplies symbol `x_{n - N2 - M_h + j}`; row `r` produces
/// `z_{n - N2 + r}`. The centre symbol therefore sits in column `M_h + N2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvolutionMatrix {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<f64>,
    pub selected_column: usize,
}

impl ConvolutionMatrix {
    pub fn new(channel: &ChannelModel, n1: usize, n2: usize) -> Self {
        let m_h = channel.memory();
        let rows = n1 + n2 + 1;
        let cols = rows + m_h;
        let mut entries = vec![0.0; rows * cols];
        for r in 0..rows {
            for (i, &h) in channel.taps().iter().enumerate() {
                entries[r * cols + r + m_h - i] = h;
            }
        }
        Self {
            rows,
            cols,
            entries,
            selected_column: m_h + n2,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    /// The selected column `h_n`.
    pub fn center_column(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, self.selected_column)).collect()
    }

    fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }
}

/// LMMSE filter with its window geometry and reliability constant
/// `C = 1 - h_nᵀ f`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmmseFilter {
    taps: Vec<f64>,
    n1: usize,
    n2: usize,
    reliability_constant: f64,
}

impl LmmseFilter {
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn reliability_constant(&self) -> f64 {
        self.reliability_constant
    }

    /// Bias of the estimate, `h_nᵀ f = 1 - C`.
    pub fn gain(&self) -> f64 {
        1.0 - self.reliability_constant
    }

    fn check_geometry(&self, frame: &ObservationFrame) -> Result<()> {
        if frame.n1 != self.n1 || frame.n2 != self.n2 || frame.samples.len() != self.taps.len() {
            return Err(Error::GeometryMismatch {
                want_n1: self.n1,
                want_n2: self.n2,
                got_n1: frame.n1,
                got_n2: frame.n2,
            });
        }
        Ok(())
    }
}

/// `f = (σ² I + H Hᵀ)^{-1} h_n` via Cholesky.
pub fn design_filter(channel: &ChannelModel, n1: usize, n2: usize) -> Result<LmmseFilter> {
    design_filter_with_symbol_variance(channel, n1, n2, 1.0)
}

/// Time-invariant filter for soft interference cancellation: neighbouring
/// symbols have residual variance `avg_variance`, the centre symbol keeps
/// unit variance. `avg_variance = 1` is the no-prior filter.
pub fn design_filter_with_symbol_variance(
    channel: &ChannelModel,
    n1: usize,
    n2: usize,
    avg_variance: f64,
) -> Result<LmmseFilter> {
    let conv = ConvolutionMatrix::new(channel, n1, n2);
    let h = conv.as_matrix();
    let hn = DVector::from_vec(conv.center_column());
    let n = conv.rows;
    // neighbours scaled by the residual variance, the centre column kept at 1
    let outer = &hn * hn.transpose();
    let mut cov = (&h * h.transpose() - &outer) * avg_variance + outer;
    for i in 0..n {
        cov[(i, i)] += channel.noise_variance();
    }
    let chol = cov.cholesky().ok_or(Error::Singular)?;
    let f = chol.solve(&hn);
    let c = 1.0 - hn.dot(&f);
    Ok(LmmseFilter {
        taps: f.iter().copied().collect(),
        n1,
        n2,
        reliability_constant: c,
    })
}

/// First-principles estimator `Cov(x_n, z_n) Cov(z_n, z_n)^{-1}` for i.i.d.
/// zero-mean unit-power symbols, built from the channel taps without the
/// convolution matrix and solved by LU.
pub fn general_lmmse_oracle(channel: &ChannelModel, n1: usize, n2: usize) -> Result<LmmseFilter> {
    let taps = channel.taps();
    let n = n1 + n2 + 1;
    let offset = |r: usize| r as isize - n2 as isize;
    // E[z_{n+a} z_{n+b}] = Σ_{i,j} h_i h_j E[x_{n+a-i} x_{n+b-j}] + σ² δ_ab
    let mut cov = DMatrix::<f64>::zeros(n, n);
    for r in 0..n {
        for s in 0..n {
            let (a, b) = (offset(r), offset(s));
            let mut acc = 0.0;
            for (i, hi) in taps.iter().enumerate() {
                for (j, hj) in taps.iter().enumerate() {
                    if a - i as isize == b - j as isize {
                        acc += hi * hj;
                    }
                }
            }
            if r == s {
                acc += channel.noise_variance();
            }
            cov[(r, s)] = acc;
        }
    }
    // E[x_n z_{n+a}] = h_a
    let cross = DVector::from_fn(n, |r, _| {
        let a = offset(r);
        if a >= 0 && (a as usize) < taps.len() {
            taps[a as usize]
        } else {
            0.0
        }
    });
    let f = cov.lu().solve(&cross).ok_or(Error::Singular)?;
    let c = 1.0 - cross.dot(&f);
    Ok(LmmseFilter {
        taps: f.iter().copied().collect(),
        n1,
        n2,
        reliability_constant: c,
    })
}

/// `x̂_n = fᵀ z_n`.
pub fn estimate_symbol(filter: &LmmseFilter, frame: &ObservationFrame) -> Result<f64> {
    filter.check_geometry(frame)?;
    Ok(dot(&filter.taps, &frame.samples))
}

/// 2-PAM LLR `2 fᵀz / C`.
pub fn llr(filter: &LmmseFilter, frame: &ObservationFrame) -> Result<f64> {
    let c = filter.reliability_constant;
    if c <= 0.0 {
        return Err(Error::InvalidFilter(c));
    }
    Ok(2.0 * estimate_symbol(filter, frame)? / c)
}

/// `tanh(L / 2)`.
#[inline]
pub fn soft_bit(llr_value: f64) -> f64 {
    (llr_value / 2.0).tanh()
}

/// Taps rotated so the response is centred on `x_{n-k}`:
/// `f_k[s] = f[(s + k) mod N]`.
pub fn shifted_filter(filter: &LmmseFilter, k: isize) -> Result<Vec<f64>> {
    let n = filter.taps.len();
    if k.unsigned_abs() >= n {
        return Err(Error::ShiftOutOfRange { shift: k, len: n });
    }
    let mut out = filter.taps.clone();
    out.rotate_left(k.rem_euclid(n as isize) as usize);
    Ok(out)
}

/// Per-bit LLRs for `x̂ = gain·x + η`, `η ~ N(0, variance)`, marginalized over
/// the Gray labels. `priors` (one LLR per bit of this symbol) weight the
/// other bits of the same symbol; the bit's own prior is excluded, so the
/// output is extrinsic.
pub fn demap_gaussian(
    estimate: f64,
    gain: f64,
    variance: f64,
    constellation: &PamConstellation,
    priors: Option<&[f64]>,
    out: &mut [f64],
) {
    let q = constellation.bits_per_symbol();
    debug_assert_eq!(out.len(), q);
    let m = constellation.order();
    let mut metric = vec![0.0; m];
    for (i, slot) in metric.iter_mut().enumerate() {
        let d = estimate - gain * constellation.level(i);
        *slot = -d * d / (2.0 * variance);
    }
    for (bit, o) in out.iter_mut().enumerate() {
        let mut num = f64::NEG_INFINITY;
        let mut den = f64::NEG_INFINITY;
        for (i, &base) in metric.iter().enumerate() {
            let mut v = base;
            if let Some(p) = priors {
                for (other, &l) in p.iter().enumerate() {
                    if other != bit {
                        v += if constellation.bit(i, other) == 0 { l / 2.0 } else { -l / 2.0 };
                    }
                }
            }
            if constellation.bit(i, bit) == 0 {
                num = log_add(num, v);
            } else {
                den = log_add(den, v);
            }
        }
        *o = crate::clamp_llr(num - den);
    }
}

/// Clamped per-bit LLRs for a whole received block: `2x̂/C` for 2-PAM, the
/// Gaussian demapper otherwise.
pub fn equalize_block(z: &[f64], filter: &LmmseFilter, constellation: &PamConstellation) -> Result<Vec<f64>> {
    let c = filter.reliability_constant;
    if c <= 0.0 {
        return Err(Error::InvalidFilter(c));
    }
    let q = constellation.bits_per_symbol();
    let mut frame = vec![0.0; filter.taps.len()];
    let mut out = vec![0.0; z.len() * q];
    for (n, o) in out.chunks_exact_mut(q).enumerate() {
        crate::txchain::fill_frame(z, n, filter.n1, filter.n2, &mut frame);
        let est = dot(&filter.taps, &frame);
        if q == 1 {
            o[0] = crate::clamp_llr(2.0 * est / c);
        } else {
            demap_gaussian(est, filter.gain(), filter.gain() * c, constellation, None, o);
        }
    }
    Ok(out)
}

/// `ln(e^a + e^b)`.
#[inline]
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
