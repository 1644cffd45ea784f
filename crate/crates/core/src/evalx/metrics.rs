use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `k×k` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::contract("confusion matrix must be square and nonempty"));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.k + pred] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.k).map(<[u64]>::to_vec).collect()
    }

    /// One-vs-rest counts of class `c`.
    pub fn one_vs_rest(&self, c: usize) -> BinaryCounts {
        let tp = self.get(c, c);
        let predicted: u64 = (0..self.k).map(|i| self.get(i, c)).sum();
        let actual: u64 = (0..self.k).map(|j| self.get(c, j)).sum();
        let fp = predicted - tp;
        let fn_ = actual - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// Tallies label pairs into a [`ConfusionMatrix`].
pub fn confusion(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::contract(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(Error::contract(format!(
                "label pair ({t}, {p}) out of range for {k} classes"
            )));
        }
        cm.add(t, p);
    }
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub counts: BinaryCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub total: u64,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub macro_sensitivity: f64,
    pub macro_specificity: f64,
    pub micro_precision: f64,
    pub micro_recall: f64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub degenerate: bool,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<u64>>,
}

/// `num / den`, or 0 (and a raised flag) when `den == 0`.
fn ratio(num: f64, den: f64, degenerate: &mut bool) -> f64 {
    if den == 0.0 {
        *degenerate = true;
        0.0
    } else {
        num / den
    }
}

/// Per-class one-vs-rest metrics plus unweighted macro averages.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    metrics_named(cm, &(0..cm.k()).map(|c| c.to_string()).collect::<Vec<_>>())
}

pub fn metrics_named(cm: &ConfusionMatrix, names: &[String]) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::contract("metrics need at least one observation"));
    }
    if names.len() != cm.k() {
        return Err(Error::contract(format!(
            "{} class names for a {}-class matrix",
            names.len(),
            cm.k()
        )));
    }
    let mut degenerate = false;
    let per_class: Vec<ClassMetrics> = (0..cm.k())
        .map(|c| {
            let counts = cm.one_vs_rest(c);
            let (a, b, cc, d) = (
                counts.tp as f64,
                counts.fp as f64,
                counts.fn_ as f64,
                counts.tn as f64,
            );
            let precision = ratio(a, a + b, &mut degenerate);
            let recall = ratio(a, a + cc, &mut degenerate);
            let f1 = ratio(2.0 * precision * recall, precision + recall, &mut degenerate);
            ClassMetrics {
                class: names[c].clone(),
                counts,
                precision,
                recall,
                f1,
                sensitivity: recall,
                specificity: ratio(d, b + d, &mut degenerate),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / per_class.len() as f64;
    let accuracy = cm.trace() as f64 / total as f64;
    // Σtp / Σ(tp+fp) and Σtp / Σ(tp+fn) both collapse to trace / total.
    let tp: u64 = per_class.iter().map(|m| m.counts.tp).sum();
    let pred: u64 = per_class.iter().map(|m| m.counts.tp + m.counts.fp).sum();
    let actual: u64 = per_class.iter().map(|m| m.counts.tp + m.counts.fn_).sum();
    Ok(MetricsReport {
        k: cm.k(),
        total,
        accuracy,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        macro_sensitivity: mean(|m| m.sensitivity),
        macro_specificity: mean(|m| m.specificity),
        micro_precision: tp as f64 / pred as f64,
        micro_recall: tp as f64 / actual as f64,
        degenerate,
        per_class,
        confusion: cm.rows(),
    })
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aligned plain-text rendering. Summary values are printed with full
    /// round-trip precision so the text and JSON forms agree exactly.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("accuracy           {}\n", self.accuracy));
        out.push_str(&format!("macro precision    {}\n", self.macro_precision));
        out.push_str(&format!("macro recall       {}\n", self.macro_recall));
        out.push_str(&format!("macro f1           {}\n", self.macro_f1));
        out.push_str(&format!("macro sensitivity  {}\n", self.macro_sensitivity));
        out.push_str(&format!("macro specificity  {}\n", self.macro_specificity));
        out.push_str(&format!("observations       {}\n", self.total));
        if self.degenerate {
            out.push_str("note               some ratios had zero denominators and read 0\n");
        }
        out.push('\n');
        out.push_str(&format!(
            "{:<8}{:>10}{:>10}{:>10}{:>10}{:>10}\n",
            "class", "precision", "recall", "f1", "Se", "Sp"
        ));
        for m in &self.per_class {
            out.push_str(&format!(
                "{:<8}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}\n",
                m.class, m.precision, m.recall, m.f1, m.sensitivity, m.specificity
            ));
        }
        out
    }

    /// Parses the accuracy line back out of [`MetricsReport::to_table`].
    pub fn table_accuracy(table: &str) -> Option<f64> {
        table
            .lines()
            .find_map(|l| l.strip_prefix("accuracy"))
            .and_then(|rest| rest.trim().parse().ok())
    }

    /// Long-format `metric,class,value` rows for one bar chart per metric.
    pub fn plot_rows(&self) -> Vec<(String, String, f64)> {
        let mut rows = Vec::new();
        for m in &self.per_class {
            for (name, v) in [
                ("precision", m.precision),
                ("recall", m.recall),
                ("f1", m.f1),
                ("sensitivity", m.sensitivity),
                ("specificity", m.specificity),
            ] {
                rows.push((name.to_string(), m.class.clone(), v));
            }
        }
        for (name, v) in [
            ("accuracy", self.accuracy),
            ("precision", self.macro_precision),
            ("recall", self.macro_recall),
            ("f1", self.macro_f1),
            ("sensitivity", self.macro_sensitivity),
            ("specificity", self.macro_specificity),
        ] {
            rows.push((name.to_string(), "macro".to_string(), v));
        }
        rows
    }
}
