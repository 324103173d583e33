//! Brute-force reference implementations checked against the library.

use std::collections::HashMap;

/// Edit distance by top-down recursion over suffixes, memoized.
pub fn edit_oracle(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() || b.is_empty() {
            return a.len() + b.len();
        }
        if let Some(&v) = memo.get(&(a.len(), b.len())) {
            return v;
        }
        let v = if a[0] == b[0] {
            go(&a[1..], &b[1..], memo)
        } else {
            1 + go(&a[1..], b, memo).min(go(a, &b[1..], memo)).min(go(&a[1..], &b[1..], memo))
        };
        memo.insert((a.len(), b.len()), v);
        v
    }
    go(a, b, &mut HashMap::new())
}

/// Exhaustive edit-script search for short inputs: every alignment path.
pub fn edit_exhaustive(a: &[u8], b: &[u8]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ar)), Some((y, br))) => {
            let sub = usize::from(x != y) + edit_exhaustive(ar, br);
            sub.min(1 + edit_exhaustive(ar, b)).min(1 + edit_exhaustive(a, br))
        }
    }
}

/// Longest subsequence of `a` (over all 2^|a| choices) that is also a
/// subsequence of `b`.
pub fn lcs_oracle(a: &[u8], b: &[u8]) -> usize {
    let is_subseq = |s: &[u8]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let s: Vec<u8> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
            is_subseq(&s).then_some(s.len())
        })
        .max()
        .unwrap_or(0)
}

/// Clipped matches by direct counting of every n-gram occurrence.
pub fn ngram_oracle(pred: &[u8], reference: &[u8], n: usize) -> (usize, usize) {
    let grams = |s: &[u8]| -> Vec<Vec<u8>> {
        if s.len() < n {
            Vec::new()
        } else {
            (0..=s.len() - n).map(|i| s[i..i + n].to_vec()).collect()
        }
    };
    let (p, r) = (grams(pred), grams(reference));
    let mut distinct = p.clone();
    distinct.sort();
    distinct.dedup();
    let matched = distinct
        .iter()
        .map(|g| p.iter().filter(|x| *x == g).count().min(r.iter().filter(|x| *x == g).count()))
        .sum();
    (matched, p.len())
}

pub fn bleu_oracle(pred: &[u8], reference: &[u8]) -> f64 {
    if pred.is_empty() {
        return if reference.is_empty() { 1.0 } else { 0.0 };
    }
    let mut product = 1.0;
    for n in 1..=4 {
        let (m, t) = ngram_oracle(pred, reference, n);
        product *= if m == 0 { 1.0 / (t as f64 + 1.0) } else { m as f64 / t as f64 };
    }
    let bp = if pred.len() >= reference.len() { 1.0 } else { (1.0 - reference.len() as f64 / pred.len() as f64).exp() };
    bp * product.powf(0.25)
}

/// Whether the patch grid at scale `num/den` fits the budget, by integer
/// ceilings alone.
pub fn grid_fits(h0: u64, w0: u64, p: u64, n_max: u64, num: u128, den: u128) -> bool {
    let gh = (num * h0 as u128).div_ceil(den * p as u128);
    let gw = (num * w0 as u128).div_ceil(den * p as u128);
    gh * gw <= n_max as u128
}
