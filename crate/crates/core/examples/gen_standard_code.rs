//! Regenerates `codes/peg_1998_1776.alist`.
//!
//! `cargo run -p eqz-core --example gen_standard_code > crates/core/codes/peg_1998_1776.alist`

use eqz_core::ldpc::LdpcCode;
use eqz_core::turbo::STANDARD_CODE_PEG;

fn main() {
    let (n, m, wc, seed) = STANDARD_CODE_PEG;
    let code = LdpcCode::peg(n, m, wc, seed).expect("PEG construction");
    print!("{}", code.to_alist());
}
