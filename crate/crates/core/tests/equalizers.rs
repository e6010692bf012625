use eqz_core::bcjr::{build_trellis, map_equalize};
use eqz_core::eqznet::{init_k_eqznet_for_bit, EqzNetBank};
use eqz_core::lmmse::{design_filter, equalize_block, estimate_symbol};
use eqz_core::mix_seed;
use eqz_core::turbo::{eqznet_llrs, standard_code, transmit_coded_block, turbo_equalize, FirstEqualizer, TurboConfig};
use eqz_core::txchain::{apply_channel, extract_frame, ebn0_to_noise_variance, gray_map, random_bits, ChannelModel, PamConstellation};

fn bit_errors(llrs: &[f64], bits: &[u8]) -> usize {
    llrs.iter().zip(bits).filter(|(l, b)| u8::from(**l < 0.0) != **b).count()
}

fn channel(name: &str, ebn0_db: f64, c: &PamConstellation, rate: f64) -> ChannelModel {
    ChannelModel::preset(name, ebn0_to_noise_variance(ebn0_db, c, rate).unwrap()).unwrap()
}

#[test]
fn bcjr_block_errors_never_exceed_lmmse() {
    for (name, m, ebn0) in [("h_A", 2, 12.0), ("h_B", 2, 6.0), ("h_A", 4, 16.0)] {
        let c = PamConstellation::new(m).unwrap();
        let ch = channel(name, ebn0, &c, 1.0);
        let filter = design_filter(&ch, 7, 7).unwrap();
        let trellis = build_trellis(&ch, &c).unwrap();
        let (mut lin_blocks, mut map_blocks) = (0, 0);
        for i in 0..200 {
            let bits = random_bits(256 * c.bits_per_symbol(), mix_seed(9, 2 * i));
            let z = apply_channel(&gray_map(&bits, &c).unwrap(), &ch, mix_seed(9, 2 * i + 1)).unwrap();
            let lin = bit_errors(&equalize_block(&z, &filter, &c).unwrap(), &bits);
            let map = bit_errors(&map_equalize(&z, &trellis, ch.noise_variance(), None).unwrap().llrs.values, &bits);
            lin_blocks += usize::from(lin > 0);
            map_blocks += usize::from(map > 0);
        }
        assert!(map_blocks <= lin_blocks, "{name} {m}-PAM: BCJR {map_blocks} vs LMMSE {lin_blocks} block errors");
        assert!(lin_blocks > 0);
    }
}

#[test]
fn lmmse_ber_falls_with_snr() {
    let c = PamConstellation::new(2).unwrap();
    let bits = random_bits(200_000, 3);
    let symbols = gray_map(&bits, &c).unwrap();
    let mut last = usize::MAX;
    for ebn0 in [8.0, 12.0, 16.0, 20.0] {
        let ch = channel("h_A", ebn0, &c, 1.0);
        let z = apply_channel(&symbols, &ch, 4).unwrap();
        let e = bit_errors(&equalize_block(&z, &design_filter(&ch, 7, 7).unwrap(), &c).unwrap(), &bits);
        assert!(e < last, "{e} errors at {ebn0} dB, {last} before");
        last = e;
    }
}

#[test]
fn turbo_rounds_do_not_lose_ground() {
    let code = standard_code();
    let c = PamConstellation::new(2).unwrap();
    let ch = channel("h_A", 15.5, &c, code.rate());
    let config = TurboConfig {
        first_iteration_equalizer: FirstEqualizer::Lmmse,
        ..TurboConfig::default()
    };
    let mut per_round = vec![0usize; config.iterations];
    for i in 0..24 {
        let block = transmit_coded_block(&code, &ch, &c, config.interleaver_seed, mix_seed(5, 2 * i), mix_seed(5, 2 * i + 1))
            .unwrap();
        let out = turbo_equalize(&block.z, &code, &ch, &c, None, &config).unwrap();
        for (r, it) in out.iterations.iter().enumerate() {
            per_round[r] += it.info_bits.iter().zip(&block.info_bits).filter(|(a, b)| a != b).count();
        }
    }
    assert!(per_round[0] > 0, "no errors to improve on: {per_round:?}");
    assert!(per_round.windows(2).all(|w| w[1] <= w[0]), "{per_round:?}");
    assert!(per_round[per_round.len() - 1] < per_round[0], "{per_round:?}");
}

/// Gray M-PAM networks start from the LMMSE slicer, the nearest level of
/// the unbiased estimate `fᵀz / A`. Bits with several thresholds only match
/// up to the unsaturated tanh tails, a sliver next to each threshold.
#[test]
fn untrained_m_pam_bank_slices_like_lmmse() {
    for (m, k, ebn0) in [(4, 4, 16.0), (4, 4, 24.0), (8, 6, 24.0)] {
        let c = PamConstellation::new(m).unwrap();
        let q = c.bits_per_symbol();
        let ch = channel("h_A", ebn0, &c, 1.0);
        let filter = design_filter(&ch, 7, 7).unwrap();
        let nets = (0..q)
            .map(|b| init_k_eqznet_for_bit(&filter, k, 1.5, 10.0, &c, b).unwrap())
            .collect();
        let bank = EqzNetBank { nets };
        let bits = random_bits(30_000 * q, 8);
        let z = apply_channel(&gray_map(&bits, &c).unwrap(), &ch, 9).unwrap();
        let net = eqznet_llrs(&z, &bank);
        let mut differ = 0;
        for n in 0..z.len() {
            let x = estimate_symbol(&filter, &extract_frame(&z, n, 7, 7)).unwrap() / filter.gain();
            let a = c.nearest(x);
            for b in 0..q {
                differ += usize::from(c.bit(a, b) != u8::from(net[n * q + b] < 0.0));
            }
        }
        assert!(differ * 1000 < bits.len(), "{m}-PAM at {ebn0} dB: {differ} of {}", bits.len());
    }
}
