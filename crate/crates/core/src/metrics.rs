//! Classification evaluation: confusion matrix, accuracy, per-class
//! precision/recall/F1, macro-F1, binary AUROC, and canonical JSON reports.

use crate::error::{Error, Result};

/// `K x K` counts; rows are the true class, columns the predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.count(i, i)).sum()
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.k..(truth + 1) * self.k]
    }

    fn row_sum(&self, truth: usize) -> u64 {
        self.row(truth).iter().sum()
    }

    fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|r| self.count(r, pred)).sum()
    }
}

/// Counts `(pred, truth)` pairs; entries must lie in `[0, k)`.
pub fn confusion_matrix(pred: &[usize], truth: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "confusion_matrix: {} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("confusion_matrix: k must be >= 1".into()));
    }
    let mut counts = vec![0u64; k * k];
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if p >= k || t >= k {
            return Err(Error::InvalidArgument(format!(
                "confusion_matrix: entry {i} ({p}, {t}) outside [0, {k})"
            )));
        }
        counts[t * k + p] += 1;
    }
    Ok(ConfusionMatrix { k, counts })
}

/// Argmax over one row of scores; ties break toward the lowest class index.
pub fn argmax_class(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::InvalidArgument("accuracy: empty confusion matrix".into()));
    }
    Ok(cm.trace() as f64 / total as f64)
}

/// Precision, recall and F1 for one class; `0/0` is defined as 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn per_class_prf(cm: &ConfusionMatrix) -> Result<Vec<ClassPrf>> {
    if cm.total() == 0 {
        return Err(Error::InvalidArgument("per_class_prf: empty confusion matrix".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok((0..cm.k)
        .map(|c| {
            let tp = cm.count(c, c);
            let precision = ratio(tp, cm.col_sum(c));
            let recall = ratio(tp, cm.row_sum(c));
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassPrf { precision, recall, f1 }
        })
        .collect())
}

/// Unweighted mean of per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    let prf = per_class_prf(cm)?;
    Ok(prf.iter().map(|p| p.f1).sum::<f64>() / prf.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half. Computed by sorting and sweeping tie groups with exact
/// integer arithmetic, so it equals pairwise enumeration bit-for-bit.
pub fn binary_auroc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "binary_auroc: {} scores vs {} truths",
            scores.len(),
            truth.len()
        )));
    }
    if let Some(i) = truth.iter().position(|&t| t > 1) {
        return Err(Error::InvalidArgument(format!(
            "binary_auroc: truth at {i} is not 0/1"
        )));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "binary_auroc: score at {i} is not finite"
        )));
    }
    let positives = truth.iter().filter(|&&t| t == 1).count() as u64;
    let negatives = truth.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(
            "binary_auroc requires both classes present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));

    let mut wins2 = 0u64; // doubled win count so ties add exactly 1
    let mut negs_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_here = 0u64;
        let mut neg_here = 0u64;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if truth[order[j]] == 1 {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        wins2 += pos_here * (2 * negs_below + neg_here);
        negs_below += neg_here;
        i = j;
    }
    Ok(wins2 as f64 / (2 * positives * negatives) as f64)
}

/// Metrics bundle serialized by [`report_json`].
#[derive(Debug, Clone)]
pub struct Report {
    pub cm: ConfusionMatrix,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassPrf>,
    /// Present for binary tasks scored with class-1 probabilities.
    pub auroc: Option<f64>,
}

impl Report {
    pub fn from_predictions(
        pred: &[usize],
        truth: &[usize],
        k: usize,
        scores_class1: Option<&[f64]>,
    ) -> Result<Report> {
        let cm = confusion_matrix(pred, truth, k)?;
        let accuracy = accuracy(&cm)?;
        let per_class = per_class_prf(&cm)?;
        let macro_f1 = macro_f1(&cm)?;
        let auroc = match (k, scores_class1) {
            (2, Some(scores)) => {
                let truth_bits: Vec<u8> = truth.iter().map(|&t| t as u8).collect();
                Some(binary_auroc(scores, &truth_bits)?)
            }
            _ => None,
        };
        Ok(Report { cm, accuracy, macro_f1, per_class, auroc })
    }
}

/// Formats with 6 significant digits, deterministically.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return "null".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (5 - exp).clamp(0, 17) as usize;
    format!("{x:.decimals$}")
}

/// Canonical JSON: fixed key order, 6-significant-digit reals, integer
/// confusion counts. Identical bundles produce byte-identical text.
pub fn report_json(report: &Report) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"num_classes\": {},\n", report.cm.classes()));
    out.push_str(&format!("  \"total\": {},\n", report.cm.total()));
    out.push_str(&format!("  \"accuracy\": {},\n", fmt_sig6(report.accuracy)));
    out.push_str(&format!("  \"macro_f1\": {},\n", fmt_sig6(report.macro_f1)));
    if let Some(auroc) = report.auroc {
        out.push_str(&format!("  \"auroc\": {},\n", fmt_sig6(auroc)));
    }
    out.push_str("  \"per_class\": [\n");
    for (c, prf) in report.per_class.iter().enumerate() {
        out.push_str(&format!(
            "    {{\"class\": {c}, \"precision\": {}, \"recall\": {}, \"f1\": {}}}{}\n",
            fmt_sig6(prf.precision),
            fmt_sig6(prf.recall),
            fmt_sig6(prf.f1),
            if c + 1 < report.per_class.len() { "," } else { "" }
        ));
    }
    out.push_str("  ],\n");
    out.push_str("  \"confusion_matrix\": [\n");
    for t in 0..report.cm.classes() {
        let row: Vec<String> = report.cm.row(t).iter().map(|c| c.to_string()).collect();
        out.push_str(&format!(
            "    [{}]{}\n",
            row.join(", "),
            if t + 1 < report.cm.classes() { "," } else { "" }
        ));
    }
    out.push_str("  ]\n}\n");
    out
}
