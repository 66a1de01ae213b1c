//! Classification metrics and their aggregation over folds and repeats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Area under the ROC curve in [0, 1] via the rank-sum statistic, ties
/// sharing mid-ranks. `None` when only one class is present.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, &p)| p)
        .map(|(r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Metrics of one evaluation, as percentages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub auroc: Option<f64>,
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Binary metrics of positive-class `scores` at threshold 0.5.
pub fn evaluate(scores: &[f64], labels: &[bool]) -> Result<BinaryMetrics> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            labels.len().to_string(),
            scores.len().to_string(),
        ));
    }
    if scores.is_empty() {
        return Err(Error::validation("cannot evaluate an empty prediction set"));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    let mut fn_ = 0usize;
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= 0.5, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| {
        if b == 0 {
            0.0
        } else {
            100.0 * a as f64 / b as f64
        }
    };
    Ok(BinaryMetrics {
        auroc: auroc(scores, labels).map(|a| 100.0 * a),
        accuracy: ratio(tp + tn, scores.len()),
        recall: ratio(tp, tp + fn_),
        precision: ratio(tp, tp + fp),
    })
}

/// Class-probability predictions against integer labels. Two classes reduce
/// to [`evaluate`] on the class-1 probability; more classes are averaged
/// one-vs-rest, with accuracy taken from the arg-max.
pub fn evaluate_probs(probs: &[Vec<f64>], labels: &[usize]) -> Result<BinaryMetrics> {
    let n_classes = probs.first().map_or(0, Vec::len);
    if n_classes < 2 {
        return Err(Error::validation("need at least two classes"));
    }
    if n_classes == 2 {
        let scores: Vec<f64> = probs.iter().map(|p| p[1]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        return evaluate(&scores, &positive);
    }
    let mut per_class = Vec::new();
    for c in 0..n_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        per_class.push(evaluate(&scores, &positive)?);
    }
    let argmax = |p: &Vec<f64>| {
        (0..p.len())
            .max_by(|&a, &b| p[a].total_cmp(&p[b]))
            .unwrap_or(0)
    };
    let correct = probs
        .iter()
        .zip(labels)
        .filter(|(p, &y)| argmax(p) == y)
        .count();
    let defined: Vec<f64> = per_class.iter().filter_map(|m| m.auroc).collect();
    let mean =
        |f: fn(&BinaryMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n_classes as f64;
    Ok(BinaryMetrics {
        auroc: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        accuracy: 100.0 * correct as f64 / labels.len() as f64,
        recall: mean(|m| m.recall),
        precision: mean(|m| m.precision),
    })
}

pub const METRIC_NAMES: [&str; 4] = ["auroc", "accuracy", "recall", "precision"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

fn summarise(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    Summary {
        mean,
        std: var.sqrt(),
        n,
    }
}

/// Per-fold metrics and their mean ± sample standard deviation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub entries: Vec<BinaryMetrics>,
}

impl MetricsReport {
    pub fn push(&mut self, m: BinaryMetrics) {
        self.entries.push(m);
    }

    /// Folds with an undefined AUROC are left out of the AUROC summary only.
    pub fn summary(&self) -> BTreeMap<&'static str, Summary> {
        let col = |f: &dyn Fn(&BinaryMetrics) -> Option<f64>| {
            self.entries.iter().filter_map(f).collect::<Vec<_>>()
        };
        BTreeMap::from([
            ("auroc", summarise(&col(&|m| m.auroc))),
            ("accuracy", summarise(&col(&|m| Some(m.accuracy)))),
            ("recall", summarise(&col(&|m| Some(m.recall)))),
            ("precision", summarise(&col(&|m| Some(m.precision)))),
        ])
    }

    pub fn mean_auroc(&self) -> f64 {
        self.summary()["auroc"].mean
    }

    pub fn to_table(&self) -> String {
        let s = self.summary();
        let mut out = String::new();
        let _ = writeln!(out, "{:<10} {:>16}", "metric", "mean ± std (%)");
        for name in METRIC_NAMES {
            let v = s[name];
            let _ = writeln!(out, "{:<10} {:>8.2} ± {:<6.2}", name, v.mean, v.std);
        }
        let _ = writeln!(out, "({} evaluations)", self.entries.len());
        out
    }

    /// `key=value` lines: per-metric summaries, then every evaluation.
    pub fn to_key_values(&self) -> String {
        let s = self.summary();
        let mut out = String::new();
        for name in METRIC_NAMES {
            let _ = writeln!(out, "{name}_mean={}", s[name].mean);
            let _ = writeln!(out, "{name}_std={}", s[name].std);
        }
        let _ = writeln!(out, "evaluations={}", self.entries.len());
        for (i, m) in self.entries.iter().enumerate() {
            let auroc = m.auroc.map_or_else(|| "NA".to_string(), |a| a.to_string());
            let _ = writeln!(out, "eval.{i}.auroc={auroc}");
            let _ = writeln!(out, "eval.{i}.accuracy={}", m.accuracy);
            let _ = writeln!(out, "eval.{i}.recall={}", m.recall);
            let _ = writeln!(out, "eval.{i}.precision={}", m.precision);
        }
        out
    }

    /// Parses the output of [`Self::to_key_values`]; summary lines are recomputed, not trusted.
    pub fn from_key_values(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::format("<report>", msg);
        let mut kv = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", no + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let n: usize = kv
            .get("evaluations")
            .ok_or_else(|| bad("missing `evaluations`".into()))?
            .parse()
            .map_err(|_| bad("`evaluations` is not an integer".into()))?;
        let mut report = MetricsReport::default();
        for i in 0..n {
            let get = |name: &str| -> Result<Option<f64>> {
                let key = format!("eval.{i}.{name}");
                let v = kv
                    .get(&key)
                    .ok_or_else(|| bad(format!("missing `{key}`")))?;
                if v == "NA" {
                    return Ok(None);
                }
                let x: f64 = v
                    .parse()
                    .map_err(|_| bad(format!("`{key}` is not a number")))?;
                if !(0.0..=100.0).contains(&x) {
                    return Err(bad(format!("`{key}` = {x} is outside [0, 100]")));
                }
                Ok(Some(x))
            };
            let required = |name: &str| {
                get(name)?.ok_or_else(|| bad(format!("`eval.{i}.{name}` cannot be NA")))
            };
            report.push(BinaryMetrics {
                auroc: get("auroc")?,
                accuracy: required("accuracy")?,
                recall: required("recall")?,
                precision: required("precision")?,
            });
        }
        Ok(report)
    }
}
