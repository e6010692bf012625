//! Low-complexity neural equalizers for real-valued AWGN intersymbol
//! interference channels.
//!
//! The crate is organized bottom-up:
//!
//! * [`txchain`]: Gray M-PAM mapping, the ISI channel and observation frames.
//! * [`lmmse`]: the linear MMSE filter and its LLR / soft-bit outputs.
//! * [`bcjr`]: full-state MAP equalization (forward-backward) plus a
//!   brute-force oracle and a sliding-window variant.
//! * [`eqznet`]: the EqzNet family (K, K+L and (K+L,2) networks), their
//!   LMMSE-tap initialization, backpropagation and Adam training.
//! * [`ldpc`]: alist ingestion, systematic encoding and sum-product decoding.
//! * [`turbo`]: turbo equalization with a network-first hybrid schedule.

pub mod bcjr;
pub mod eqznet;
mod error;
pub mod ldpc;
pub mod lmmse;
pub mod turbo;
pub mod txchain;

pub use error::{Error, Result};

/// Saturation bound applied to every exported LLR.
pub const LLR_CLAMP: f64 = 40.0;

/// Clamps an LLR to `±LLR_CLAMP`.
#[inline]
pub fn clamp_llr(x: f64) -> f64 {
    x.clamp(-LLR_CLAMP, LLR_CLAMP)
}

/// SplitMix64 finalizer over `(seed, index)`; used to fan one master seed
/// out to independent per-block streams.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
