//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

/// Central finite-difference derivative of `f` along coordinate `i` of `x`.
pub fn central_difference(f: &mut dyn FnMut(&[f64]) -> f64, x: &mut [f64], i: usize, h: f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}

/// Relative error with a small absolute floor so exactly-zero gradients compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Max relative error between `analytic` and central differences of `f` at `x`.
pub fn max_fd_error(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], analytic: &[f64], h: f64) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut x = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let numeric = central_difference(f, &mut x, i, h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

/// Percentage of `(position, code)` cells never used, by exhaustive scan.
pub fn cur_oracle(sids: &[Vec<u32>], n: usize, k: usize) -> f64 {
    let mut unused = 0;
    for pos in 0..n {
        for code in 0..k as u32 {
            if !sids.iter().any(|s| s[pos] == code) {
                unused += 1;
            }
        }
    }
    100.0 * unused as f64 / (n * k) as f64
}

pub fn cardinality_oracle(sids: &[Vec<u32>]) -> usize {
    let mut sorted = sids.to_vec();
    sorted.sort();
    sorted.dedup();
    sorted.len()
}

/// Percentage of items equal to at least one other item, by pairwise comparison.
pub fn conflict_oracle(sids: &[Vec<u32>]) -> f64 {
    let shared = (0..sids.len())
        .filter(|&i| (0..sids.len()).any(|j| j != i && sids[j] == sids[i]))
        .count();
    100.0 * shared as f64 / sids.len() as f64
}

/// Rank of `target` after fully sorting by descending score then ascending id.
pub fn rank_oracle(items: &[(u64, f64)], target: u64) -> usize {
    let mut sorted = items.to_vec();
    sorted.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    sorted.iter().position(|&(id, _)| id == target).unwrap() + 1
}

pub fn mrr_oracle(ranks: &[usize]) -> f64 {
    let mut total = 0.0;
    for &r in ranks {
        total += 1.0 / r as f64;
    }
    total / ranks.len() as f64
}

pub fn recall_oracle(ranks: &[usize], k: usize) -> f64 {
    let mut hits = 0.0;
    for &r in ranks {
        if r <= k {
            hits += 1.0;
        }
    }
    hits / ranks.len() as f64
}
