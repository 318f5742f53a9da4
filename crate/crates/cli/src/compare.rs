//! `compare`: pairwise agreement between selection files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::Result;
use capsim::benchmark::Benchmark;
use capsim::metrics::{capability_distribution, kendall_tau, rouge_l, top_choice_overlap, CapabilityDistribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::SelectionFile;
use crate::io::{grid_csv, write_atomic, write_json};

#[derive(Debug, Error, PartialEq)]
pub enum CompareError {
    #[error("need at least two selection files, got {0}")]
    TooFewInputs(usize),
    #[error("`{left}` and `{right}` share no scenario ids")]
    AlignmentMismatch { left: String, right: String },
    #[error("`{left}` and `{right}` cover different scenarios ({only_left} only in the first, {only_right} only in the second)")]
    StrictMismatch { left: String, right: String, only_left: usize, only_right: usize },
    #[error("`{label}` lists scenario `{scenario}` twice")]
    DuplicateScenario { label: String, scenario: String },
}

/// Agreement between two selection files over their shared scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub left: String,
    pub right: String,
    pub aligned: usize,
    pub overlap: f64,
    /// Mean ROUGE-L F1 of right's justifications against left's.
    pub rouge_l_f1: f64,
    /// Present when both files carry rankings.
    pub kendall_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub labels: Vec<String>,
    pub pairs: Vec<PairMetrics>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub capabilities: BTreeMap<String, CapabilityDistribution>,
}

impl CompareReport {
    fn grid(&self, f: impl Fn(&PairMetrics) -> Option<f64>) -> Vec<Vec<Option<f64>>> {
        let n = self.labels.len();
        let mut g = vec![vec![None; n]; n];
        for p in &self.pairs {
            let i = self.labels.iter().position(|l| *l == p.left).expect("known label");
            let j = self.labels.iter().position(|l| *l == p.right).expect("known label");
            g[i][j] = f(p);
        }
        g
    }

    pub fn overlap_grid(&self) -> Vec<Vec<Option<f64>>> {
        self.grid(|p| Some(p.overlap))
    }

    pub fn rouge_grid(&self) -> Vec<Vec<Option<f64>>> {
        self.grid(|p| Some(p.rouge_l_f1))
    }

    pub fn kendall_grid(&self) -> Vec<Vec<Option<f64>>> {
        self.grid(|p| p.kendall_tau)
    }
}

fn index(file: &SelectionFile) -> Result<BTreeMap<&str, &crate::evaluate::Selection>, CompareError> {
    let mut m = BTreeMap::new();
    for e in &file.entries {
        if m.insert(e.scenario_id.as_str(), e).is_some() {
            return Err(CompareError::DuplicateScenario { label: file.label.clone(), scenario: e.scenario_id.clone() });
        }
    }
    Ok(m)
}

/// Metrics for one ordered pair. In strict mode both files must cover the
/// same scenarios; otherwise their intersection is used.
pub fn compare_pair(a: &SelectionFile, b: &SelectionFile, strict: bool) -> Result<PairMetrics, CompareError> {
    let (ia, ib) = (index(a)?, index(b)?);
    let ka: BTreeSet<&str> = ia.keys().copied().collect();
    let kb: BTreeSet<&str> = ib.keys().copied().collect();
    let shared: Vec<&str> = ka.intersection(&kb).copied().collect();
    if strict && ka != kb {
        return Err(CompareError::StrictMismatch {
            left: a.label.clone(),
            right: b.label.clone(),
            only_left: ka.difference(&kb).count(),
            only_right: kb.difference(&ka).count(),
        });
    }
    if shared.is_empty() {
        return Err(CompareError::AlignmentMismatch { left: a.label.clone(), right: b.label.clone() });
    }
    let ca: Vec<u8> = shared.iter().map(|id| ia[id].choice).collect();
    let cb: Vec<u8> = shared.iter().map(|id| ib[id].choice).collect();
    let overlap = top_choice_overlap(&ca, &cb).expect("aligned and non-empty");
    let rouge_l_f1 = shared.iter().map(|id| rouge_l(&ia[id].justification, &ib[id].justification).f1).sum::<f64>()
        / shared.len() as f64;
    let mut taus = Vec::new();
    for id in &shared {
        if let (Some(ra), Some(rb)) = (&ia[id].ranking, &ib[id].ranking) {
            if let Ok(t) = kendall_tau(ra, rb) {
                taus.push(t);
            }
        }
    }
    let kendall_tau = (taus.len() == shared.len()).then(|| taus.iter().sum::<f64>() / taus.len() as f64);
    Ok(PairMetrics {
        left: a.label.clone(),
        right: b.label.clone(),
        aligned: shared.len(),
        overlap,
        rouge_l_f1,
        kendall_tau,
    })
}

/// Full pairwise grid over `files` (diagonal included), plus capability
/// histograms of each file's top choices when a benchmark is given.
pub fn compare_files(files: &[SelectionFile], benchmark: Option<&Benchmark>, strict: bool) -> Result<CompareReport> {
    if files.len() < 2 {
        return Err(CompareError::TooFewInputs(files.len()).into());
    }
    let mut labels: Vec<String> = Vec::new();
    for f in files {
        let mut label = f.label.clone();
        let mut k = 2;
        while labels.contains(&label) {
            label = format!("{}#{k}", f.label);
            k += 1;
        }
        labels.push(label);
    }
    let relabelled: Vec<SelectionFile> =
        files.iter().zip(&labels).map(|(f, l)| SelectionFile { label: l.clone(), ..f.clone() }).collect();
    let mut pairs = Vec::new();
    for a in &relabelled {
        for b in &relabelled {
            pairs.push(compare_pair(a, b, strict)?);
        }
    }
    let mut capabilities = BTreeMap::new();
    if let Some(bench) = benchmark {
        for f in &relabelled {
            let hist = capability_distribution(f.entries.iter().map(|e| (e.scenario_id.as_str(), e.choice)), bench)?;
            capabilities.insert(f.label.clone(), hist);
        }
    }
    Ok(CompareReport { labels, pairs, capabilities })
}

/// Writes `compare.json` plus one heat-map CSV per metric.
pub fn write_compare(report: &CompareReport, out: &Path) -> Result<()> {
    write_json(&out.join("compare.json"), report)?;
    write_atomic(&out.join("overlap.csv"), grid_csv(&report.labels, &report.overlap_grid())?.as_bytes())?;
    write_atomic(&out.join("rouge_l.csv"), grid_csv(&report.labels, &report.rouge_grid())?.as_bytes())?;
    if report.pairs.iter().any(|p| p.kendall_tau.is_some()) {
        write_atomic(&out.join("kendall_tau.csv"), grid_csv(&report.labels, &report.kendall_grid())?.as_bytes())?;
    }
    if !report.capabilities.is_empty() {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "capability", "count", "frequency"])?;
        for (label, hist) in &report.capabilities {
            let freq = hist.frequencies();
            for (cap, n) in &hist.counts {
                w.write_record([label.clone(), cap.name().to_string(), n.to_string(), format!("{:.6}", freq[cap])])?;
            }
        }
        write_atomic(&out.join("capabilities.csv"), &w.into_inner()?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::{Selection, Task};
    use capsim::benchmark::Ranking;

    fn file(label: &str, picks: &[(&str, u8)]) -> SelectionFile {
        SelectionFile {
            label: label.into(),
            task: Task::Top,
            entries: picks
                .iter()
                .map(|(id, c)| Selection {
                    scenario_id: id.to_string(),
                    choice: *c,
                    ranking: None,
                    justification: format!("option {c} is best"),
                })
                .collect(),
        }
    }

    #[test]
    fn self_comparison_is_perfect() {
        let a = file("a", &[("s1", 1), ("s2", 3)]);
        let p = compare_pair(&a, &a, true).unwrap();
        assert_eq!((p.overlap, p.rouge_l_f1), (1.0, 1.0));
        assert_eq!(p.kendall_tau, None);
    }

    #[test]
    fn intersection_alignment_and_strict_mode() {
        let a = file("a", &[("s1", 1), ("s2", 3), ("s3", 2)]);
        let b = file("b", &[("s2", 3), ("s3", 4), ("s9", 1)]);
        let p = compare_pair(&a, &b, false).unwrap();
        assert_eq!(p.aligned, 2);
        assert_eq!(p.overlap, 0.5);
        assert!(matches!(compare_pair(&a, &b, true), Err(CompareError::StrictMismatch { .. })));
        let c = file("c", &[("x", 1)]);
        assert!(matches!(compare_pair(&a, &c, false), Err(CompareError::AlignmentMismatch { .. })));
    }

    #[test]
    fn rankings_give_kendall() {
        let mut a = file("a", &[("s1", 1)]);
        let mut b = file("b", &[("s1", 4)]);
        a.entries[0].ranking = Some(Ranking::of_four(vec![1, 2, 3, 4]).unwrap());
        b.entries[0].ranking = Some(Ranking::of_four(vec![4, 3, 2, 1]).unwrap());
        assert_eq!(compare_pair(&a, &b, true).unwrap().kendall_tau, Some(-1.0));
    }

    #[test]
    fn grid_over_three_files_with_duplicate_labels() {
        let files = vec![
            file("m", &[("s1", 1), ("s2", 2)]),
            file("m", &[("s1", 1), ("s2", 3)]),
            file("x", &[("s1", 4), ("s2", 3)]),
        ];
        let r = compare_files(&files, None, false).unwrap();
        assert_eq!(r.labels, vec!["m", "m#2", "x"]);
        assert_eq!(r.pairs.len(), 9);
        let g = r.overlap_grid();
        assert_eq!(g[0][1], Some(0.5));
        assert_eq!(g[1][2], Some(0.5));
        assert_eq!(g[0][2], Some(0.0));
        assert!(compare_files(&files[..1], None, false).is_err());
    }
}
