use eqz_core::ldpc::{decode, LdpcCode};
use eqz_core::turbo::{standard_code, STANDARD_CODE_ALIST, STANDARD_CODE_PEG};
use eqz_core::txchain::random_bits;

#[test]
fn fixture_matches_construction() {
    let (n, m, wc, seed) = STANDARD_CODE_PEG;
    let built = LdpcCode::peg(n, m, wc, seed).unwrap();
    assert_eq!(built.to_alist(), STANDARD_CODE_ALIST);
    assert_eq!(built, standard_code());
}

#[test]
fn fixture_is_a_regular_rate_8_9_code() {
    let code = standard_code();
    assert_eq!((code.n(), code.k()), (1998, 1776));
    assert!(code.checks().iter().all(|r| r.len() == 27));
    assert_eq!(code.edge_count(), 3 * 1998);
}

#[test]
fn fixture_decodes_light_noise() {
    let code = standard_code();
    let info = random_bits(code.k(), 11);
    let cw = code.encode(&info).unwrap();
    assert!(code.syndrome_is_zero(&cw));
    // every 200th bit flipped with low confidence
    let llr: Vec<f64> = cw
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let s = if b == 0 { 3.0 } else { -3.0 };
            if i % 200 == 7 { -0.5 * s } else { s }
        })
        .collect();
    let out = decode(&code, &llr, 50).unwrap();
    assert!(out.converged);
    assert_eq!(code.extract_info(&out.hard_bits), info);
}
