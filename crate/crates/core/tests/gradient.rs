use eqz_core::eqznet::{gradient, init_random, loss, Architecture, EqzNetParams, LabeledFrame};
use eqz_core::txchain::ObservationFrame;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(n1: usize, n2: usize, size: usize, seed: u64) -> Vec<LabeledFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..size)
        .map(|_| LabeledFrame {
            frame: ObservationFrame::new((0..n1 + n2 + 1).map(|_| rng.random_range(-1.5..1.5)).collect(), n1, n2)
                .unwrap(),
            target_llr: rng.random_range(-10.0..10.0),
        })
        .collect()
}

/// Largest relative error between the analytic gradient and central
/// differences. Below the rounding resolution of the difference quotient
/// (about `eps * loss / step`) entries are compared absolutely.
fn max_relative_error(p: &EqzNetParams, b: &[LabeledFrame], step: f64) -> f64 {
    let analytic = gradient(p, b).unwrap().to_flat();
    let base = p.to_flat();
    let floor = 10.0 * f64::EPSILON * loss(p, b).max(1.0) / step / 1e-5;
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for i in 0..base.len() {
        let mut x = base.clone();
        x[i] = base[i] + step;
        q.set_flat(&x);
        let up = loss(&q, b);
        x[i] = base[i] - step;
        q.set_flat(&x);
        let down = loss(&q, b);
        let numeric = (up - down) / (2.0 * step);
        let scale = analytic[i].abs().max(numeric.abs()).max(floor);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

fn architecture(kind: u8, k: usize, l: usize) -> Architecture {
    match kind {
        0 => Architecture::KEqzNet { k },
        1 => Architecture::Sum { k, l },
        _ => Architecture::Head { k, l },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]
    #[test]
    fn analytic_gradient_matches_central_differences(
        kind in 0u8..3,
        k in (1usize..4).prop_map(|v| 2 * v),
        l in (1usize..3).prop_map(|v| 2 * v),
        n1 in 0usize..4,
        n2 in 0usize..4,
        seed in any::<u64>(),
    ) {
        let p = init_random(architecture(kind, k, l), n1, n2, seed).unwrap();
        let b = batch(n1, n2, 8, seed ^ 1);
        let err = max_relative_error(&p, &b, 1e-5);
        prop_assert!(err < 1e-5, "relative error {err}");
    }
}
