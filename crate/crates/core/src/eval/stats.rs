//! Percentile bootstrap and the Wilcoxon signed-rank test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;
pub const DEFAULT_SEED: u64 = 0x5eed;
/// Largest sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 25;
/// Fewest nonzero differences the test accepts.
pub const MIN_N: usize = 5;

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolated quantile of sorted data at position `q·(n−1)`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95% percentile-bootstrap interval of the mean.
///
/// Each of `n_resamples` resamples draws `n` indices with
/// `random_range(0..n)` from `ChaCha8Rng::seed_from_u64(seed)`; the bounds are
/// the 2.5% and 97.5% quantiles of the resample means.
pub fn bootstrap_ci(values: &[f64], n_resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Stats("bootstrap of an empty sample".into()));
    }
    if n_resamples == 0 {
        return Err(Error::Stats("bootstrap needs at least one resample".into()));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&means, 0.025),
        quantile_sorted(&means, 0.975),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W−)`.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub exact: bool,
}

/// Midranks of `|d|` (ties share the average rank), doubled so they stay integral.
pub fn doubled_midranks(abs: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..abs.len()).collect();
    order.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && abs[order[j + 1]] == abs[order[i]] {
            j += 1;
        }
        // positions i..=j hold ranks i+1..=j+1; doubled mean is (i+1)+(j+1)
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks[k] = r2;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided Wilcoxon signed-rank test of `x − y`.
///
/// Zero differences are dropped. For `n <= 25` the p-value comes from the
/// exact distribution of `W+` over all `2ⁿ` sign assignments (midranks for
/// ties); above that, a normal approximation with tie and continuity
/// corrections.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    if x.len() != y.len() {
        return Err(Error::Stats(format!(
            "paired samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|&d| d != 0.0)
        .collect();
    if d.is_empty() {
        return Err(Error::Stats("all paired differences are zero".into()));
    }
    let n = d.len();
    if n < MIN_N {
        return Err(Error::Stats(format!(
            "{n} nonzero differences, need at least {MIN_N}"
        )));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let r2 = doubled_midranks(&abs);
    let total2: u64 = r2.iter().sum();
    let wplus2: u64 = d
        .iter()
        .zip(&r2)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let wminus2 = total2 - wplus2;
    let statistic = wplus2.min(wminus2) as f64 / 2.0;

    if n <= EXACT_MAX_N {
        let counts = signed_rank_counts(&r2);
        let all = (1u64 << n) as f64;
        let le: u64 = counts[..=wplus2 as usize].iter().sum();
        let ge: u64 = counts[wplus2 as usize..].iter().sum();
        let p = (2.0 * (le.min(ge) as f64) / all).min(1.0);
        return Ok(WilcoxonResult {
            statistic,
            p_value: p,
            n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let wplus = wplus2 as f64 / 2.0;
    let z = ((wplus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(WilcoxonResult {
        statistic,
        p_value: p,
        n,
        exact: false,
    })
}

/// `counts[s]` = number of sign assignments whose doubled positive-rank sum is `s`.
fn signed_rank_counts(r2: &[u64]) -> Vec<u64> {
    let total: u64 = r2.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in r2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_with_ties() {
        assert_eq!(doubled_midranks(&[3.0, 1.0, 3.0, 2.0]), vec![7, 2, 7, 4]);
    }

    #[test]
    fn bootstrap_constant_and_errors() {
        let (lo, hi) = bootstrap_ci(&[0.7; 12], 200, 1).unwrap();
        assert!((lo - 0.7).abs() < 1e-12 && (hi - 0.7).abs() < 1e-12);
        assert!(bootstrap_ci(&[], 10, 1).is_err());
        assert!(bootstrap_ci(&[1.0], 0, 1).is_err());
        let v = [0.1, 0.5, 0.9, 0.3, 0.75];
        assert_eq!(
            bootstrap_ci(&v, 500, 9).unwrap(),
            bootstrap_ci(&v, 500, 9).unwrap()
        );
    }

    #[test]
    fn wilcoxon_rejects_degenerate_inputs() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert!(wilcoxon_signed_rank(&x, &x).is_err());
        assert!(wilcoxon_signed_rank(&x, &x[..5]).is_err());
        let y = [1.0, 2.0, 3.0, 4.0, 4.0, 5.0];
        // only two nonzero differences
        assert!(wilcoxon_signed_rank(&x, &y).is_err());
    }

    #[test]
    fn wilcoxon_all_positive_small_sample() {
        // six positive differences: W+ = 21 is the extreme of 64 patterns
        let x = [1.1, 2.2, 3.3, 4.4, 5.5, 6.6];
        let y = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert!(r.exact);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 2.0 / 64.0);
    }
}
