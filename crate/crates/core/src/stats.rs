//! Error metrics, the one-sided Mann–Whitney U-test and rank tables.

use std::cmp::Ordering;
use std::fmt::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Below this combined sample size the exact null distribution is always used.
pub const EXACT_MAX_TOTAL: usize = 16;
/// The normal approximation needs both samples at least this large.
pub const NORMAL_MIN_SAMPLE: usize = 8;

pub fn mse(predicted: &[f64], actual: &[f64]) -> f64 {
    predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum::<f64>() / actual.len() as f64
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Argument(format!(
            "length mismatch: {} predictions for {} targets",
            predicted.len(),
            actual.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::Argument("rmse of empty vectors".into()));
    }
    Ok(mse(predicted, actual).sqrt())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Lower median: the ⌊(n−1)/2⌋-th order statistic, so it is always an observed value.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    Some(v[(v.len() - 1) / 2])
}

/// Quantile with the midpoint convention: position `(n−1)·q`, averaging the two
/// neighbouring order statistics when it falls between them.
pub fn quantile_midpoint(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    let pos = (v.len() - 1) as f64 * q;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(if lo == hi { v[lo] } else { 0.5 * (v[lo] + v[hi]) })
}

/// 1-based midranks of the pooled values, doubled so they are integers.
fn doubled_midranks(pooled: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0u64; pooled.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && pooled[order[end + 1]] == pooled[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end+1 share the midrank (start+end+2)/2
        let doubled = (start + end + 2) as u64;
        for &idx in &order[start..=end] {
            ranks[idx] = doubled;
        }
        start = end + 1;
    }
    ranks
}

fn tie_groups(pooled: &[f64]) -> Vec<usize> {
    let v = sorted(pooled);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        groups.push(j - i + 1);
        i = j + 1;
    }
    groups
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `a` tends to take smaller values than `b`.
    ALess,
    /// `a` tends to take larger values than `b`.
    AGreater,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    /// U statistic of the first sample (midranks for ties).
    pub u: f64,
    pub p_value: f64,
    pub significant: bool,
    pub exact: bool,
}

/// Exact lower-tail probability P(R ≤ observed) of the doubled rank sum of a random
/// size-`k` subset of `ranks`, by dynamic programming over subset sums.
pub fn exact_lower_tail(ranks: &[u64], k: usize, observed: u64) -> f64 {
    let total: u64 = ranks.iter().sum();
    let width = total as usize + 1;
    // counts[j][s] = number of j-subsets of the items seen so far with sum s
    let mut counts = vec![vec![0f64; width]; k + 1];
    counts[0][0] = 1.0;
    let mut seen = 0usize;
    for &r in ranks {
        seen += 1;
        let r = r as usize;
        for j in (1..=k.min(seen)).rev() {
            let (lower, upper) = counts.split_at_mut(j);
            let src = &lower[j - 1];
            let dst = &mut upper[0];
            for s in (r..width).rev() {
                if src[s - r] != 0.0 {
                    dst[s] += src[s - r];
                }
            }
        }
    }
    let all: f64 = counts[k].iter().sum();
    let below: f64 = counts[k][..=(observed as usize).min(width - 1)].iter().sum();
    below / all
}

/// One-sided Mann–Whitney U-test.
///
/// The p-value is exact (full permutation distribution of midrank sums) when either
/// sample has fewer than 8 values or the pooled size is at most 16; otherwise it uses
/// the normal approximation with tie and continuity corrections. A pooled sample of
/// identical values yields `p = 1`.
pub fn mwu_one_sided(a: &[f64], b: &[f64], alternative: Alternative, alpha: f64) -> Result<TestResult> {
    if alternative == Alternative::AGreater {
        let mut r = mwu_one_sided(b, a, Alternative::ALess, alpha)?;
        r.u = (a.len() * b.len()) as f64 - r.u;
        return Ok(r);
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("Mann-Whitney test needs non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Argument("NaN in Mann-Whitney sample".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let r_a2: u64 = ranks[..n1].iter().sum();
    let u = r_a2 as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;

    let degenerate = pooled.iter().all(|&v| v == pooled[0]);
    let exact = n <= EXACT_MAX_TOTAL || n1.min(n2) < NORMAL_MIN_SAMPLE;
    let p_value = if degenerate {
        1.0
    } else if exact {
        exact_lower_tail(&ranks, n1, r_a2)
    } else {
        let (n1f, n2f, nf) = (n1 as f64, n2 as f64, n as f64);
        let ties: f64 = tie_groups(&pooled).into_iter().map(|t| (t * t * t - t) as f64).sum();
        let var = n1f * n2f / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)));
        let z = (u + 0.5 - n1f * n2f / 2.0) / var.sqrt();
        Normal::standard().cdf(z)
    };
    let p_value = p_value.clamp(f64::MIN_POSITIVE, 1.0);
    Ok(TestResult { u, p_value, significant: p_value < alpha, exact })
}

pub fn bonferroni_alpha(base_alpha: f64, pairs: usize) -> f64 {
    base_alpha / pairs.max(1) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub algorithm: String,
    /// "lo" or "lo-hi"
    pub rank: String,
    pub rank_lo: usize,
    pub rank_hi: usize,
    pub median: f64,
    /// Algorithms this one is statistically significantly better than (smaller values).
    pub ssbt: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub alpha: f64,
    /// In the input order of the algorithms.
    pub entries: Vec<RankEntry>,
}

impl RankTable {
    pub fn entry(&self, algorithm: &str) -> Option<&RankEntry> {
        self.entries.iter().find(|e| e.algorithm == algorithm)
    }

    /// Plain-text table with aligned columns.
    pub fn to_text(&self) -> String {
        let w = self.entries.iter().map(|e| e.algorithm.len()).max().unwrap_or(0).max(9);
        let mut out = format!("{:<w$}  {:>5}  {:>12}  ssbt\n", "algorithm", "rank", "median");
        for e in &self.entries {
            let _ = writeln!(out, "{:<w$}  {:>5}  {:>12.6}  {}", e.algorithm, e.rank, e.median, e.ssbt.join(","));
        }
        out
    }
}

/// Ranks algorithms (smaller is better) from their samples.
///
/// Every ordered pair is tested with [`mwu_one_sided`] at the Bonferroni level for
/// `k(k−1)/2` pairs. Algorithms are ordered by (lower) median; neighbours in that
/// order whose pairwise test is significant in neither direction are merged into
/// one shared rank range.
pub fn build_rank_table(samples: &[(String, Vec<f64>)], base_alpha: f64) -> Result<RankTable> {
    let k = samples.len();
    if k < 2 {
        return Err(Error::Argument("rank table needs at least two algorithms".into()));
    }
    if let Some((name, _)) = samples.iter().find(|(_, s)| s.is_empty()) {
        return Err(Error::Argument(format!("no samples for `{name}`")));
    }
    let alpha = bonferroni_alpha(base_alpha, k * (k - 1) / 2);
    let mut better = vec![vec![false; k]; k];
    for i in 0..k {
        for j in 0..k {
            if i != j {
                better[i][j] = mwu_one_sided(&samples[i].1, &samples[j].1, Alternative::ALess, alpha)?.significant;
            }
        }
    }
    let medians: Vec<f64> = samples.iter().map(|(_, s)| lower_median(s).expect("non-empty")).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| medians[i].partial_cmp(&medians[j]).unwrap_or(Ordering::Equal).then(i.cmp(&j)));
    let mut ranges = vec![(0usize, 0usize); k];
    let mut start = 0;
    while start < k {
        let mut end = start;
        while end + 1 < k {
            let (x, y) = (order[end], order[end + 1]);
            if better[x][y] || better[y][x] {
                break;
            }
            end += 1;
        }
        for &idx in &order[start..=end] {
            ranges[idx] = (start + 1, end + 1);
        }
        start = end + 1;
    }
    let entries = (0..k)
        .map(|i| {
            let (lo, hi) = ranges[i];
            RankEntry {
                algorithm: samples[i].0.clone(),
                rank: if lo == hi { lo.to_string() } else { format!("{lo}-{hi}") },
                rank_lo: lo,
                rank_hi: hi,
                median: medians[i],
                ssbt: (0..k).filter(|&j| better[i][j]).map(|j| samples[j].0.clone()).collect(),
            }
        })
        .collect();
    Ok(RankTable { alpha, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force lower tail over all subsets of the pooled indices.
    fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let ranks = doubled_midranks(&pooled);
        let n = pooled.len();
        let obs: u64 = ranks[..a.len()].iter().sum();
        let (mut hit, mut all) = (0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize == a.len() {
                all += 1;
                let s: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
                if s <= obs {
                    hit += 1;
                }
            }
        }
        hit as f64 / all as f64
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt());
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn separated_samples_exact_p() {
        let r = mwu_one_sided(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::ALess, 0.05).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert!((r.p_value - 0.05).abs() < 1e-15);
        assert!((enumerate_p(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]) - 1.0 / 20.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_are_not_significant() {
        let r = mwu_one_sided(&[1.0, 2.0], &[1.0, 2.0], Alternative::ALess, 0.05).unwrap();
        assert_eq!(r.u, 2.0);
        assert!(r.p_value >= 0.5);
        let r = mwu_one_sided(&[3.0; 4], &[3.0; 5], Alternative::ALess, 0.05).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn greater_alternative_mirrors_less() {
        let a = [5.0, 6.0, 7.0];
        let b = [1.0, 2.0, 3.0];
        let g = mwu_one_sided(&a, &b, Alternative::AGreater, 0.05).unwrap();
        let l = mwu_one_sided(&b, &a, Alternative::ALess, 0.05).unwrap();
        assert_eq!(g.p_value, l.p_value);
        assert_eq!(g.u, 9.0);
    }

    #[test]
    fn bonferroni_examples() {
        assert!((bonferroni_alpha(0.05, 21) - 0.0023809523809523).abs() < 1e-12);
        assert!((bonferroni_alpha(0.05, 6) - 0.0083333333333333).abs() < 1e-12);
        assert_eq!(bonferroni_alpha(0.01, 1), 0.01);
    }

    #[test]
    fn quantiles_and_median() {
        let v = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert_eq!(quantile_midpoint(&v, 0.25), Some(2.0));
        assert_eq!(quantile_midpoint(&v, 0.5), Some(3.0));
        assert_eq!(quantile_midpoint(&v, 0.75), Some(4.0));
        assert_eq!(lower_median(&[4.0, 1.0, 3.0, 2.0]), Some(2.0));
        assert_eq!(lower_median(&[5.0, 1.0, 3.0]), Some(3.0));
    }

    #[test]
    fn rank_table_separated_and_identical() {
        let s = |name: &str, base: f64| (name.to_string(), (0..10).map(|i| base + i as f64 * 0.01).collect::<Vec<_>>());
        let t = build_rank_table(&[s("c", 30.0), s("a", 10.0), s("b", 20.0)], 0.05).unwrap();
        assert_eq!(t.entry("a").unwrap().rank, "1");
        assert_eq!(t.entry("b").unwrap().rank, "2");
        assert_eq!(t.entry("c").unwrap().rank, "3");
        assert_eq!(t.entry("a").unwrap().ssbt, vec!["c", "b"]);
        assert_eq!(t.entry("b").unwrap().ssbt, vec!["c"]);
        assert!(t.entry("c").unwrap().ssbt.is_empty());

        let t = build_rank_table(&[s("x", 1.0), s("y", 1.0)], 0.05).unwrap();
        assert_eq!(t.entry("x").unwrap().rank, "1-2");
        assert_eq!(t.entry("y").unwrap().rank, "1-2");
        assert!(t.entries.iter().all(|e| e.ssbt.is_empty()));
        assert!(t.to_text().contains("1-2"));
    }

    #[test]
    fn seven_algorithm_table_matches_pairwise_oracle() {
        // overlapping groups so that some neighbours merge and others separate
        let centers = [0.0, 0.1, 3.0, 3.05, 3.1, 8.0, 20.0];
        let samples: Vec<(String, Vec<f64>)> = centers
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let v = (0..12).map(|i| c + ((i * 7 + k * 3) % 12) as f64 * 0.05).collect();
                (format!("alg{k}"), v)
            })
            .collect();
        let t = build_rank_table(&samples, 0.05).unwrap();
        let alpha = 0.05 / 21.0;
        assert_eq!(t.alpha, alpha);
        let sig = |i: usize, j: usize| {
            mwu_one_sided(&samples[i].1, &samples[j].1, Alternative::ALess, alpha).unwrap().significant
        };
        let med: Vec<f64> = samples.iter().map(|(_, s)| lower_median(s).unwrap()).collect();
        let mut order: Vec<usize> = (0..7).collect();
        order.sort_by(|&a, &b| med[a].partial_cmp(&med[b]).unwrap().then(a.cmp(&b)));
        // a break after sorted position p separates order[p] and order[p + 1]
        let breaks: Vec<bool> = (0..6).map(|p| sig(order[p], order[p + 1]) || sig(order[p + 1], order[p])).collect();
        for (q, &i) in order.iter().enumerate() {
            let lo = (0..q).filter(|&p| breaks[p]).map(|p| p + 2).max().unwrap_or(1);
            let hi = (q..6).filter(|&p| breaks[p]).map(|p| p + 1).min().unwrap_or(7);
            let e = &t.entries[i];
            assert_eq!((e.rank_lo, e.rank_hi), (lo, hi), "{}", e.algorithm);
            let ssbt: Vec<String> = (0..7).filter(|&j| j != i && sig(i, j)).map(|j| samples[j].0.clone()).collect();
            assert_eq!(e.ssbt, ssbt);
            for j in 0..7 {
                assert!(!(sig(i, j) && sig(j, i)));
            }
        }
        assert!(t.entries.iter().any(|e| e.rank_lo != e.rank_hi));
        assert!(t.entries.iter().any(|e| e.rank_lo == e.rank_hi));
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            a in proptest::collection::vec(0u8..6, 1..7),
            b in proptest::collection::vec(0u8..6, 1..6),
        ) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let r = mwu_one_sided(&a, &b, Alternative::ALess, 0.05).unwrap();
            let pooled_same = a.iter().chain(&b).all(|&v| v == a[0]);
            if !pooled_same {
                prop_assert_eq!(r.p_value, enumerate_p(&a, &b));
            }
        }

        #[test]
        fn p_invariant_under_monotone_transform(
            a in proptest::collection::vec(-5.0f64..5.0, 1..12),
            b in proptest::collection::vec(-5.0f64..5.0, 1..12),
        ) {
            let f = |v: &Vec<f64>| v.iter().map(|x| (x * 0.7).exp() * 3.0 + 1.0).collect::<Vec<_>>();
            let r1 = mwu_one_sided(&a, &b, Alternative::ALess, 0.05).unwrap();
            let r2 = mwu_one_sided(&f(&a), &f(&b), Alternative::ALess, 0.05).unwrap();
            prop_assert_eq!(r1.p_value, r2.p_value);
            prop_assert!(r1.u >= 0.0 && r1.u <= (a.len() * b.len()) as f64);
            prop_assert!(r1.p_value > 0.0 && r1.p_value <= 1.0);
        }

        #[test]
        fn ssbt_is_asymmetric(
            a in proptest::collection::vec(0.0f64..3.0, 3..15),
            b in proptest::collection::vec(0.0f64..3.0, 3..15),
            alpha in 0.001f64..0.5,
        ) {
            let ab = mwu_one_sided(&a, &b, Alternative::ALess, alpha).unwrap();
            let ba = mwu_one_sided(&b, &a, Alternative::ALess, alpha).unwrap();
            prop_assert!(!(ab.significant && ba.significant));
        }
    }

    #[test]
    fn normal_approximation_close_to_exact_for_large_samples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let a: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
            let shift: f64 = rng.random_range(0.0..0.4);
            let b: Vec<f64> = (0..15).map(|_| rng.random::<f64>() + shift).collect();
            let approx = mwu_one_sided(&a, &b, Alternative::ALess, 0.05).unwrap();
            assert!(!approx.exact);
            let pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
            let ranks = doubled_midranks(&pooled);
            let obs: u64 = ranks[..15].iter().sum();
            let exact = exact_lower_tail(&ranks, 15, obs);
            assert!((approx.p_value - exact).abs() <= 0.01, "{} vs {exact}", approx.p_value);
        }
    }
}
