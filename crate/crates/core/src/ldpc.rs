//! Binary LDPC codes: alist I/O, PEG construction, systematic encoding and
//! flooding sum-product decoding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result, LLR_CLAMP};

/// Parity-check code with a derived systematic encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpcCode {
    n: usize,
    k: usize,
    /// Variable indices of each check (sorted).
    rows: Vec<Vec<usize>>,
    /// Check indices of each variable (sorted).
    cols: Vec<Vec<usize>>,
    /// Codeword positions carrying information bits, ascending.
    info_positions: Vec<usize>,
    /// `parity_positions[r]` is computed from `parity_rules[r]`.
    parity_positions: Vec<usize>,
    /// Per parity bit, a bitmask over the `k` information bits.
    parity_rules: Vec<Vec<u64>>,
}

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

impl LdpcCode {
    /// Builds a code from the check-node adjacency of `H` (`m × n`).
    pub fn from_checks(n: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let m = rows.len();
        let mut rows = rows;
        let mut cols = vec![Vec::new(); n];
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            row.dedup();
            for &c in row.iter() {
                if c >= n {
                    return Err(Error::InvalidParameter(format!("check {r} references variable {c} >= n={n}")));
                }
                cols[c].push(r);
            }
        }
        // Gauss-Jordan over GF(2), pivots taken from the rightmost columns
        // first so a full-rank right block yields info bits at the front.
        let w = words(n);
        let mut dense: Vec<Vec<u64>> = rows
            .iter()
            .map(|row| {
                let mut v = vec![0u64; w];
                for &c in row {
                    v[c / 64] |= 1 << (c % 64);
                }
                v
            })
            .collect();
        let mut pivots = Vec::with_capacity(m);
        let mut rank = 0;
        for c in (0..n).rev() {
            if rank == m {
                break;
            }
            let (wi, bit) = (c / 64, 1u64 << (c % 64));
            let Some(p) = (rank..m).find(|&r| dense[r][wi] & bit != 0) else {
                continue;
            };
            dense.swap(rank, p);
            let pivot_row = dense[rank].clone();
            for (r, row) in dense.iter_mut().enumerate() {
                if r != rank && row[wi] & bit != 0 {
                    row.iter_mut().zip(&pivot_row).for_each(|(a, b)| *a ^= b);
                }
            }
            pivots.push(c);
            rank += 1;
        }
        if rank < m {
            return Err(Error::RankDeficient { rank, rows: m });
        }
        let mut is_pivot = vec![false; n];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let info_positions: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
        let k = info_positions.len();
        let parity_rules = dense
            .iter()
            .map(|row| {
                let mut mask = vec![0u64; words(k)];
                for (j, &c) in info_positions.iter().enumerate() {
                    if row[c / 64] >> (c % 64) & 1 == 1 {
                        mask[j / 64] |= 1 << (j % 64);
                    }
                }
                mask
            })
            .collect();
        Ok(Self {
            n,
            k,
            rows,
            cols,
            info_positions,
            parity_positions: pivots,
            parity_rules,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    pub fn edge_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn encode(&self, bits: &[u8]) -> Result<Vec<u8>> {
        if bits.len() != self.k {
            return Err(Error::LengthMismatch {
                expected: self.k,
                actual: bits.len(),
            });
        }
        let mut packed = vec![0u64; words(self.k)];
        for (j, &b) in bits.iter().enumerate() {
            packed[j / 64] |= ((b & 1) as u64) << (j % 64);
        }
        let mut cw = vec![0u8; self.n];
        for (&pos, &b) in self.info_positions.iter().zip(bits) {
            cw[pos] = b & 1;
        }
        for (&pos, rule) in self.parity_positions.iter().zip(&self.parity_rules) {
            let ones: u32 = rule.iter().zip(&packed).map(|(a, b)| (a & b).count_ones()).sum();
            cw[pos] = (ones & 1) as u8;
        }
        Ok(cw)
    }

    /// Information bits of a codeword.
    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_positions.iter().map(|&p| codeword[p]).collect()
    }

    pub fn syndrome_is_zero(&self, word: &[u8]) -> bool {
        self.rows
            .iter()
            .all(|row| row.iter().fold(0u8, |acc, &c| acc ^ word[c]) == 0)
    }

    /// Parses the standard alist layout.
    pub fn from_alist(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let mut next_line = |what: &str| -> Result<(usize, Vec<usize>)> {
            let (no, line) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("unexpected end of input reading {what}"),
            })?;
            let nums = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>().map_err(|_| Error::Parse {
                        line: no,
                        msg: format!("bad integer {t:?} in {what}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((no, nums))
        };
        let expect_len = |no: usize, v: &[usize], len: usize, what: &str| -> Result<()> {
            if v.len() < len {
                Err(Error::Parse {
                    line: no,
                    msg: format!("{what}: expected {len} values, found {}", v.len()),
                })
            } else {
                Ok(())
            }
        };
        let (no, dims) = next_line("dimensions")?;
        expect_len(no, &dims, 2, "dimensions")?;
        let (n, m) = (dims[0], dims[1]);
        let (no, maxd) = next_line("maximum degrees")?;
        expect_len(no, &maxd, 2, "maximum degrees")?;
        let (no, col_deg) = next_line("column degrees")?;
        expect_len(no, &col_deg, n, "column degrees")?;
        let (no, row_deg) = next_line("row degrees")?;
        expect_len(no, &row_deg, m, "row degrees")?;
        let mut col_lists = Vec::with_capacity(n);
        for (c, &deg) in col_deg.iter().enumerate().take(n) {
            let (no, v) = next_line("column list")?;
            expect_len(no, &v, deg, "column list")?;
            let mut list = Vec::with_capacity(deg);
            for &r in &v[..deg] {
                if r == 0 || r > m {
                    return Err(Error::Parse {
                        line: no,
                        msg: format!("column {} references row {r} outside 1..={m}", c + 1),
                    });
                }
                list.push(r - 1);
            }
            col_lists.push(list);
        }
        let mut rows = Vec::with_capacity(m);
        for (r, &deg) in row_deg.iter().enumerate().take(m) {
            let (no, v) = next_line("row list")?;
            expect_len(no, &v, deg, "row list")?;
            let mut list = Vec::with_capacity(deg);
            for &c in &v[..deg] {
                if c == 0 || c > n {
                    return Err(Error::Parse {
                        line: no,
                        msg: format!("row {} references column {c} outside 1..={n}", r + 1),
                    });
                }
                list.push(c - 1);
            }
            rows.push(list);
        }
        // column and row lists must describe the same matrix
        let mut from_cols = vec![Vec::new(); m];
        for (c, list) in col_lists.iter().enumerate() {
            for &r in list {
                from_cols[r].push(c);
            }
        }
        for (r, row) in rows.iter().enumerate() {
            let mut a = row.clone();
            a.sort_unstable();
            from_cols[r].sort_unstable();
            if a != from_cols[r] {
                return Err(Error::Parse {
                    line: 0,
                    msg: format!("row {} disagrees with the column lists", r + 1),
                });
            }
        }
        Self::from_checks(n, rows)
    }

    /// Writes the standard alist layout, zero-padded to the maximum degrees.
    pub fn to_alist(&self) -> String {
        let join = |v: &mut dyn Iterator<Item = usize>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let max_col = self.cols.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = String::new();
        out.push_str(&format!("{} {}\n{} {}\n", self.n, self.m(), max_col, max_row));
        out.push_str(&join(&mut self.cols.iter().map(Vec::len)));
        out.push('\n');
        out.push_str(&join(&mut self.rows.iter().map(Vec::len)));
        out.push('\n');
        for col in &self.cols {
            let padded = col.iter().map(|r| r + 1).chain(std::iter::repeat(0)).take(max_col);
            out.push_str(&join(&mut padded.into_iter()));
            out.push('\n');
        }
        for row in &self.rows {
            let padded = row.iter().map(|c| c + 1).chain(std::iter::repeat(0)).take(max_row);
            out.push_str(&join(&mut padded.into_iter()));
            out.push('\n');
        }
        out
    }

    /// Progressive edge-growth construction with constant column weight.
    /// Ties between equally good checks are broken by a seeded generator;
    /// seeds are advanced until `H` has full row rank.
    pub fn peg(n: usize, m: usize, col_weight: usize, seed: u64) -> Result<Self> {
        if col_weight == 0 || col_weight > m || m >= n {
            return Err(Error::InvalidParameter(format!(
                "PEG needs 0 < col_weight <= m < n, got n={n} m={m} weight={col_weight}"
            )));
        }
        let mut last = Error::RankDeficient { rank: 0, rows: m };
        for attempt in 0..32 {
            let rows = peg_checks(n, m, col_weight, seed.wrapping_add(attempt));
            match Self::from_checks(n, rows) {
                Ok(code) => return Ok(code),
                Err(e @ Error::RankDeficient { .. }) => last = e,
                Err(e) => return Err(e),
            }
        }
        Err(last)
    }
}

fn peg_checks(n: usize, m: usize, col_weight: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check_adj: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut var_adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut seen_check = vec![usize::MAX; m];
    let mut seen_var = vec![usize::MAX; n];
    let mut stamp = 0usize;
    for v in 0..n {
        for e in 0..col_weight {
            let candidates: Vec<usize> = if e == 0 {
                (0..m).collect()
            } else {
                stamp += 1;
                seen_var[v] = stamp;
                let mut reached = 0;
                let mut frontier_vars = vec![v];
                let mut last_layer: Vec<usize> = Vec::new();
                loop {
                    let mut layer = Vec::new();
                    for &u in &frontier_vars {
                        for &c in &var_adj[u] {
                            if seen_check[c] != stamp {
                                seen_check[c] = stamp;
                                layer.push(c);
                            }
                        }
                    }
                    if layer.is_empty() {
                        break (0..m).filter(|&c| seen_check[c] != stamp).collect();
                    }
                    reached += layer.len();
                    if reached == m {
                        break layer;
                    }
                    last_layer.clear();
                    last_layer.extend_from_slice(&layer);
                    let mut next = Vec::new();
                    for &c in &layer {
                        for &u in &check_adj[c] {
                            if seen_var[u] != stamp {
                                seen_var[u] = stamp;
                                next.push(u);
                            }
                        }
                    }
                    frontier_vars = next;
                }
            };
            let candidates: Vec<usize> = candidates.into_iter().filter(|c| !var_adj[v].contains(c)).collect();
            let min_deg = candidates.iter().map(|&c| check_adj[c].len()).min().expect("candidate check");
            let best: Vec<usize> = candidates.into_iter().filter(|&c| check_adj[c].len() == min_deg).collect();
            let c = best[rng.random_range(0..best.len())];
            check_adj[c].push(v);
            var_adj[v].push(c);
        }
    }
    check_adj
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Channel LLR plus all incoming check messages.
    pub posterior: Vec<f64>,
    /// Sum of incoming check messages: `posterior - channel`.
    pub extrinsic: Vec<f64>,
    pub hard_bits: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

/// Flooding sum-product decoding with the tanh rule. Stops as soon as the
/// hard decisions satisfy every check.
pub fn decode(code: &LdpcCode, channel_llrs: &[f64], max_iterations: usize) -> Result<DecodeOutput> {
    if channel_llrs.len() != code.n {
        return Err(Error::LengthMismatch {
            expected: code.n,
            actual: channel_llrs.len(),
        });
    }
    if channel_llrs.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidParameter("channel LLRs must be finite".into()));
    }
    let ch: Vec<f64> = channel_llrs.iter().map(|&l| crate::clamp_llr(l)).collect();
    let edges = code.edge_count();
    // check-major edge layout
    let mut edge_var = Vec::with_capacity(edges);
    let mut row_start = Vec::with_capacity(code.m() + 1);
    for row in &code.rows {
        row_start.push(edge_var.len());
        edge_var.extend_from_slice(row);
    }
    row_start.push(edge_var.len());
    let mut v2c: Vec<f64> = edge_var.iter().map(|&v| ch[v]).collect();
    let mut c2v = vec![0.0; edges];
    let mut extrinsic = vec![0.0; code.n];
    let mut posterior = ch.clone();
    let mut hard: Vec<u8> = posterior.iter().map(|&l| (l < 0.0) as u8).collect();
    let mut converged = false;
    let mut iterations = 0;
    let mut t = Vec::new();
    let mut prefix = Vec::new();
    let limit = (LLR_CLAMP / 2.0).tanh();

    while iterations < max_iterations {
        iterations += 1;
        for r in 0..code.m() {
            let (s, e) = (row_start[r], row_start[r + 1]);
            let deg = e - s;
            t.clear();
            t.extend(v2c[s..e].iter().map(|&x| (x / 2.0).tanh()));
            prefix.clear();
            prefix.push(1.0);
            for i in 0..deg {
                let p = prefix[i] * t[i];
                prefix.push(p);
            }
            let mut suffix = 1.0;
            for i in (0..deg).rev() {
                let p = (prefix[i] * suffix).clamp(-limit, limit);
                c2v[s + i] = (2.0 * p.atanh()).clamp(-LLR_CLAMP, LLR_CLAMP);
                suffix *= t[i];
            }
        }
        extrinsic.iter_mut().for_each(|x| *x = 0.0);
        for (ei, &v) in edge_var.iter().enumerate() {
            extrinsic[v] += c2v[ei];
        }
        for v in 0..code.n {
            posterior[v] = ch[v] + extrinsic[v];
            hard[v] = (posterior[v] < 0.0) as u8;
        }
        for (ei, &v) in edge_var.iter().enumerate() {
            v2c[ei] = (posterior[v] - c2v[ei]).clamp(-LLR_CLAMP, LLR_CLAMP);
        }
        if code.syndrome_is_zero(&hard) {
            converged = true;
            break;
        }
    }
    if iterations == 0 {
        converged = code.syndrome_is_zero(&hard);
    }
    Ok(DecodeOutput {
        posterior,
        extrinsic,
        hard_bits: hard,
        converged,
        iterations,
    })
}
