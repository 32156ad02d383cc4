use std::cmp::Ordering;

use super::report::ReferenceRow;
use crate::error::{shape_err, Error, Result};

/// Row sums of a probability matrix must be 1 within this tolerance.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// Rank (Mann-Whitney) AUC of `scores` for `positive` against the rest, with
/// tied scores sharing their mean rank. `None` unless both groups are
/// nonempty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    debug_assert_eq!(scores.len(), positive.len());
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len()
            && scores[order[end]].total_cmp(&scores[order[start]]) == Ordering::Equal
        {
            end += 1;
        }
        // 1-based ranks start+1 ..= end share their mean
        let midrank = (start + 1 + end) as f64 / 2.0;
        rank_sum += midrank * order[start..end].iter().filter(|&&i| positive[i]).count() as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

fn check_scores(scores: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if scores.len() != labels.len() {
        return Err(shape_err!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        ));
    }
    let k = scores.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(Error::InvalidScores("score matrix is empty".into()));
    }
    for (r, row) in scores.iter().enumerate() {
        if row.len() != k {
            return Err(Error::InvalidScores(format!(
                "row {r} has {} columns, expected {k}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidScores(format!(
                "row {r} has a non-finite score"
            )));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(Error::InvalidScores(format!("row {r} sums to {s}")));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    Ok(k)
}

/// One-vs-rest AUC per class; `None` where a class has no positives or no
/// negatives.
pub fn auc_per_class(scores: &[Vec<f64>], labels: &[usize]) -> Result<Vec<Option<f64>>> {
    let k = check_scores(scores, labels)?;
    Ok((0..k)
        .map(|c| {
            let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            binary_auc(&col, &pos)
        })
        .collect())
}

/// Unweighted mean of the one-vs-rest AUCs over classes that have both
/// positives and negatives.
pub fn auc_ovr(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let usable: Vec<f64> = auc_per_class(scores, labels)?
        .into_iter()
        .flatten()
        .collect();
    if usable.is_empty() {
        return Err(Error::DegenerateLabels);
    }
    Ok(usable.iter().sum::<f64>() / usable.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Confusion {
    /// `matrix[label][pred]`.
    pub matrix: Vec<Vec<usize>>,
    pub overall: f64,
    /// Diagonal over row sum; `None` for classes with no support.
    pub per_class: Vec<Option<f64>>,
}

pub fn confusion_and_accuracy(preds: &[usize], labels: &[usize], k: usize) -> Result<Confusion> {
    if preds.len() != labels.len() {
        return Err(shape_err!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        ));
    }
    if preds.is_empty() {
        return Err(Error::InvalidCount("no predictions to score".into()));
    }
    let mut matrix = vec![vec![0usize; k]; k];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= k || l >= k {
            return Err(Error::LabelOutOfRange {
                label: p.max(l),
                classes: k,
            });
        }
        matrix[l][p] += 1;
    }
    let trace: usize = (0..k).map(|i| matrix[i][i]).sum();
    let per_class = matrix
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let support: usize = row.iter().sum();
            (support > 0).then(|| row[i] as f64 / support as f64)
        })
        .collect();
    Ok(Confusion {
        overall: trace as f64 / preds.len() as f64,
        matrix,
        per_class,
    })
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax of `[n, k]` logits, in double precision.
pub fn softmax_rows(logits: &[f32], k: usize) -> Vec<Vec<f64>> {
    logits
        .chunks(k)
        .map(|row| {
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &v| a.max(v as f64));
            let e: Vec<f64> = row.iter().map(|&v| (v as f64 - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Central acceptance region of `Binomial(n, p)` at the given level, as
/// fractions of `n`: each tail outside `[lo, hi]` holds at most
/// `(1 - level) / 2` of the mass.
pub fn binomial_interval(n: usize, p: f64, level: f64) -> (f64, f64) {
    assert!(n > 0 && (0.0..=1.0).contains(&p) && level > 0.0 && level < 1.0);
    if p == 0.0 || p == 1.0 {
        return (p, p);
    }
    let alpha = (1.0 - level) / 2.0;
    // pmf by log-space recurrence; stays finite for large n
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let mut log_c = 0.0;
    let mut pmf = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if k > 0 {
            log_c += ((n - k + 1) as f64).ln() - (k as f64).ln();
        }
        pmf.push((log_c + k as f64 * lp + (n - k) as f64 * lq).exp());
    }
    let mut cdf = 0.0;
    let (mut lo, mut hi) = (None, None);
    for (k, &m) in pmf.iter().enumerate() {
        cdf += m;
        if lo.is_none() && cdf > alpha {
            lo = Some(k);
        }
        if hi.is_none() && cdf >= 1.0 - alpha - 1e-12 {
            hi = Some(k);
        }
    }
    let nf = n as f64;
    (lo.unwrap_or(0) as f64 / nf, hi.unwrap_or(n) as f64 / nf)
}

/// Test-set evaluation after one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall_accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `None` when the evaluated labels leave no class with both positives
    /// and negatives.
    pub auc_macro_ovr: Option<f64>,
    pub confusion: Vec<Vec<usize>>,
    /// Mean cross-entropy on the evaluated items.
    pub loss: f64,
    /// Cumulative training seconds when the report was taken.
    pub wall_time: f64,
    pub reference: Option<ReferenceRow>,
}

impl EvalReport {
    pub fn from_probabilities(probs: &[Vec<f64>], labels: &[usize], k: usize) -> Result<Self> {
        let preds: Vec<usize> = probs.iter().map(|r| argmax(r)).collect();
        let c = confusion_and_accuracy(&preds, labels, k)?;
        let auc = match auc_ovr(probs, labels) {
            Ok(a) => Some(a),
            Err(Error::DegenerateLabels) => None,
            Err(e) => return Err(e),
        };
        let loss = probs
            .iter()
            .zip(labels)
            .map(|(r, &l)| -r[l].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / labels.len() as f64;
        Ok(Self {
            overall_accuracy: c.overall,
            per_class_accuracy: c.per_class,
            auc_macro_ovr: auc,
            confusion: c.matrix,
            loss,
            wall_time: 0.0,
            reference: None,
        })
    }
}
