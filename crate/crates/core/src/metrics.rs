//! Agreement metrics between policy selections: top-choice overlap, ROUGE-L
//! over rationales, Kendall tau-a over rankings, and capability
//! distributions.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{Benchmark, Ranking};
use crate::model::Capability;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("rankings have different arity: {left} vs {right}")]
    ArityMismatch { left: usize, right: usize },
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("scenario `{scenario}` has no option {option}")]
    UnknownOption { scenario: String, option: u8 },
}

/// Fraction of positions where both selections agree.
pub fn top_choice_overlap(a: &[u8], b: &[u8]) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

/// Length of the longest common subsequence, bit-parallel over `a`.
pub fn lcs_len<T: Eq + std::hash::Hash>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let words = a.len().div_ceil(64);
    let mut masks: HashMap<&T, Vec<u64>> = HashMap::new();
    for (i, t) in a.iter().enumerate() {
        masks.entry(t).or_insert_with(|| vec![0; words])[i / 64] |= 1 << (i % 64);
    }
    // Zero bits in `v` mark positions of `a` that are in the current LCS.
    let mut v = vec![u64::MAX; words];
    for t in b {
        let Some(m) = masks.get(t) else { continue };
        let mut carry = 0u64;
        for w in 0..words {
            let u = v[w] & m[w];
            let (s1, c1) = v[w].overflowing_add(u);
            let (s2, c2) = s1.overflowing_add(carry);
            carry = (c1 | c2) as u64;
            v[w] = s2 | (v[w] & !u);
        }
    }
    let mut ones = 0usize;
    for (w, &x) in v.iter().enumerate() {
        let bits = (a.len() - w * 64).min(64);
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        ones += (x & mask).count_ones() as usize;
    }
    a.len() - ones
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// ROUGE-L between a reference and a candidate text. Empty token lists on
/// either side score zero.
pub fn rouge_l(reference: &str, candidate: &str) -> RougeScore {
    rouge_l_tokens(&tokenize(reference), &tokenize(candidate))
}

pub fn rouge_l_tokens(reference: &[String], candidate: &[String]) -> RougeScore {
    let lcs = lcs_len(reference, candidate) as f64;
    if lcs == 0.0 {
        return RougeScore { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let precision = lcs / candidate.len() as f64;
    let recall = lcs / reference.len() as f64;
    let f1 = 2.0 * precision * recall / (precision + recall);
    RougeScore { precision, recall, f1 }
}

/// Kendall tau-a: (concordant - discordant) / (n choose 2).
pub fn kendall_tau(r1: &Ranking, r2: &Ranking) -> Result<f64, MetricError> {
    let n = r1.len();
    if n != r2.len() {
        return Err(MetricError::ArityMismatch { left: n, right: r2.len() });
    }
    if n < 2 {
        return Err(MetricError::EmptyInput);
    }
    // Sequence of r2 positions read in r1 order; inversions are discordant pairs.
    let p2 = r2.positions();
    let seq: Vec<usize> = r1.order().iter().map(|&item| p2[item as usize - 1]).collect();
    let discordant = count_inversions(&seq);
    let pairs = n * (n - 1) / 2;
    Ok((pairs as f64 - 2.0 * discordant as f64) / pairs as f64)
}

fn count_inversions(seq: &[usize]) -> usize {
    let mut buf = seq.to_vec();
    let mut tmp = vec![0; seq.len()];
    merge_count(&mut buf, &mut tmp)
}

fn merge_count(xs: &mut [usize], tmp: &mut [usize]) -> usize {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut inv = merge_count(&mut xs[..mid], &mut tmp[..mid]) + merge_count(&mut xs[mid..], &mut tmp[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if xs[i] <= xs[j] {
            tmp[k] = xs[i];
            i += 1;
        } else {
            tmp[k] = xs[j];
            inv += mid - i;
            j += 1;
        }
        k += 1;
    }
    tmp[k..k + mid - i].copy_from_slice(&xs[i..mid]);
    k += mid - i;
    tmp[k..k + n - j].copy_from_slice(&xs[j..n]);
    xs.copy_from_slice(&tmp[..n]);
    inv
}

/// Mean Kendall tau over paired rankings.
pub fn mean_kendall_tau(pairs: &[(Ranking, Ranking)]) -> Result<f64, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let mut sum = 0.0;
    for (a, b) in pairs {
        sum += kendall_tau(a, b)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Capability counts over a set of selected options. A selection whose
/// option carries several capabilities contributes to each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapabilityDistribution {
    pub counts: BTreeMap<Capability, usize>,
    pub selections: usize,
}

impl CapabilityDistribution {
    /// Share of all capability mentions, per capability.
    pub fn frequencies(&self) -> BTreeMap<Capability, f64> {
        let total: usize = self.counts.values().sum();
        self.counts.iter().map(|(c, n)| (*c, if total == 0 { 0.0 } else { *n as f64 / total as f64 })).collect()
    }

    /// Capabilities sorted by descending count, ties by id.
    pub fn ranked(&self) -> Vec<(Capability, usize)> {
        let mut v: Vec<_> = self.counts.iter().map(|(c, n)| (*c, *n)).collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }
}

/// Maps each `(scenario id, option index)` selection to its annotated
/// capabilities and tallies them.
pub fn capability_distribution<'a>(
    selections: impl IntoIterator<Item = (&'a str, u8)>,
    benchmark: &Benchmark,
) -> Result<CapabilityDistribution, MetricError> {
    let mut counts: BTreeMap<Capability, usize> = Capability::ALL.iter().map(|c| (*c, 0)).collect();
    let mut selections_n = 0;
    for (id, option) in selections {
        let scenario = benchmark.get(id).ok_or_else(|| MetricError::UnknownScenario(id.to_string()))?;
        let caps = scenario
            .capabilities_of(option)
            .ok_or_else(|| MetricError::UnknownOption { scenario: id.to_string(), option })?;
        for c in caps {
            *counts.get_mut(c).expect("all capabilities seeded") += 1;
        }
        selections_n += 1;
    }
    Ok(CapabilityDistribution { counts, selections: selections_n })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_lcs(a: &[&str], b: &[&str]) -> usize {
        let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                dp[i][j] = if a[i - 1] == b[j - 1] { dp[i - 1][j - 1] + 1 } else { dp[i - 1][j].max(dp[i][j - 1]) };
            }
        }
        dp[a.len()][b.len()]
    }

    #[test]
    fn lcs_small_cases() {
        let a: Vec<&str> = "a b c b d a b".split(' ').collect();
        let b: Vec<&str> = "b d c a b a".split(' ').collect();
        assert_eq!(lcs_len(&a, &b), 4);
        assert_eq!(lcs_len::<&str>(&[], &b), 0);
    }

    #[test]
    fn lcs_crosses_word_boundaries() {
        let a: Vec<String> = (0..200).map(|i| format!("t{}", i % 7)).collect();
        let b: Vec<String> = (0..150).map(|i| format!("t{}", (i * 3) % 7)).collect();
        let ar: Vec<&str> = a.iter().map(String::as_str).collect();
        let br: Vec<&str> = b.iter().map(String::as_str).collect();
        assert_eq!(lcs_len(&ar, &br), quadratic_lcs(&ar, &br));
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        let r = rouge_l("The shelter opens at night.", "the SHELTER opens at night");
        assert_eq!(r.f1, 1.0);
        assert_eq!(rouge_l("alpha beta", "gamma delta").f1, 0.0);
        assert_eq!(rouge_l("", "gamma").f1, 0.0);
    }

    #[test]
    fn rouge_hand_computed() {
        // LCS("police killed the gunman", "police kill the gunman") = 3.
        let r = rouge_l("police killed the gunman", "police kill the gunman");
        assert!((r.precision - 0.75).abs() < 1e-12);
        assert!((r.recall - 0.75).abs() < 1e-12);
        assert!((r.f1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn kendall_extremes() {
        let a = Ranking::of_four(vec![1, 2, 3, 4]).unwrap();
        let b = Ranking::of_four(vec![4, 3, 2, 1]).unwrap();
        assert_eq!(kendall_tau(&a, &a).unwrap(), 1.0);
        assert_eq!(kendall_tau(&a, &b).unwrap(), -1.0);
        let c = Ranking::of_four(vec![2, 1, 3, 4]).unwrap();
        assert!((kendall_tau(&a, &c).unwrap() - 4.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn kendall_arity_mismatch() {
        let a = Ranking::of_four(vec![1, 2, 3, 4]).unwrap();
        let b = Ranking::new(vec![1, 2, 3]).unwrap();
        assert_eq!(kendall_tau(&a, &b), Err(MetricError::ArityMismatch { left: 4, right: 3 }));
    }

    #[test]
    fn overlap() {
        assert_eq!(top_choice_overlap(&[1, 2, 3, 4], &[1, 3, 3, 1]).unwrap(), 0.5);
        assert!(top_choice_overlap(&[1], &[1, 2]).is_err());
        assert_eq!(top_choice_overlap(&[], &[]), Err(MetricError::EmptyInput));
    }

    #[test]
    fn inversion_counter() {
        assert_eq!(count_inversions(&[3, 2, 1, 0]), 6);
        assert_eq!(count_inversions(&[0, 1, 2]), 0);
        assert_eq!(count_inversions(&[1, 0, 3, 2, 4]), 2);
    }
}
