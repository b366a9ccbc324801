//! Classification metrics and the one-tailed Welch t-test used to compare
//! methods across seeds.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::argmax;

fn check_labels(preds: &[usize], truth: &[usize]) -> Result<()> {
    if preds.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} predictions for {} labels",
            preds.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset("metric input".into()));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], truth: &[usize]) -> Result<f64> {
    check_labels(preds, truth)?;
    let hits = preds.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// One-vs-rest F1 per class; a class never predicted nor present scores 0.
pub fn per_class_f1(preds: &[usize], truth: &[usize], c: usize) -> Result<Vec<f64>> {
    check_labels(preds, truth)?;
    if let Some(&bad) = preds.iter().chain(truth).find(|&&y| y >= c) {
        return Err(Error::Domain(format!("label {bad} out of range for {c} classes")));
    }
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fn_ = vec![0usize; c];
    for (&p, &t) in preds.iter().zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    Ok((0..c)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fn_[k];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        })
        .collect())
}

pub fn macro_f1(preds: &[usize], truth: &[usize], c: usize) -> Result<f64> {
    let f = per_class_f1(preds, truth, c)?;
    Ok(f.iter().sum::<f64>() / c as f64)
}

fn check_scores(scores: &[Vec<f64>], truth: &[usize], c: usize) -> Result<()> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} score rows for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::EmptyDataset("metric input".into()));
    }
    if let Some(r) = scores.iter().find(|r| r.len() != c) {
        return Err(Error::DimensionMismatch(format!(
            "score row of length {} for {c} classes",
            r.len()
        )));
    }
    if let Some(&bad) = truth.iter().find(|&&y| y >= c) {
        return Err(Error::Domain(format!("label {bad} out of range for {c} classes")));
    }
    Ok(())
}

/// Pairwise AUC with ½ credit for ties; `None` unless both classes occur.
pub fn binary_roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // midranks, 1-based
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// `Σ (R_k − R_{k−1}) · P_k` over thresholds at the distinct observed
/// scores, highest first; `None` without positives.
pub fn binary_pr_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut seen, mut prev_recall, mut area) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        tp += idx[i..=j].iter().filter(|&&k| positive[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / n_pos as f64;
        area += (recall - prev_recall) * tp as f64 / seen as f64;
        prev_recall = recall;
        i = j + 1;
    }
    Some(area)
}

/// Per-class one-vs-rest values and their macro mean over defined classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroScore {
    pub macro_mean: f64,
    /// `None` marks a skipped class.
    pub per_class: Vec<Option<f64>>,
}

impl MacroScore {
    pub fn skipped(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&k| self.per_class[k].is_none())
            .collect()
    }
}

fn one_vs_rest(
    scores: &[Vec<f64>],
    truth: &[usize],
    c: usize,
    f: fn(&[f64], &[bool]) -> Option<f64>,
) -> Result<MacroScore> {
    check_scores(scores, truth, c)?;
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let col: Vec<f64> = scores.iter().map(|r| r[k]).collect();
            let pos: Vec<bool> = truth.iter().map(|&y| y == k).collect();
            // a class needs both positives and negatives to be scored
            if pos.iter().all(|&p| p) {
                None
            } else {
                f(&col, &pos)
            }
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::DegenerateClasses);
    }
    Ok(MacroScore {
        macro_mean: defined.iter().sum::<f64>() / defined.len() as f64,
        per_class,
    })
}

pub fn roc_auc_macro_detail(scores: &[Vec<f64>], truth: &[usize], c: usize) -> Result<MacroScore> {
    one_vs_rest(scores, truth, c, binary_roc_auc)
}

pub fn roc_auc_macro(scores: &[Vec<f64>], truth: &[usize], c: usize) -> Result<f64> {
    Ok(roc_auc_macro_detail(scores, truth, c)?.macro_mean)
}

pub fn pr_auc_macro_detail(scores: &[Vec<f64>], truth: &[usize], c: usize) -> Result<MacroScore> {
    one_vs_rest(scores, truth, c, binary_pr_auc)
}

pub fn pr_auc_macro(scores: &[Vec<f64>], truth: &[usize], c: usize) -> Result<f64> {
    Ok(pr_auc_macro_detail(scores, truth, c)?.macro_mean)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub roc_auc: f64,
    pub pr_auc: f64,
    pub per_class_f1: Vec<f64>,
    pub per_class_roc_auc: Vec<Option<f64>>,
    pub per_class_pr_auc: Vec<Option<f64>>,
    pub n_eval: usize,
}

impl MetricsReport {
    /// Hard predictions are the argmax of each probability row.
    pub fn compute(probs: &[Vec<f64>], truth: &[usize], c: usize) -> Result<Self> {
        check_scores(probs, truth, c)?;
        let preds: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let f1 = per_class_f1(&preds, truth, c)?;
        let roc = roc_auc_macro_detail(probs, truth, c)?;
        let pr = pr_auc_macro_detail(probs, truth, c)?;
        Ok(Self {
            accuracy: accuracy(&preds, truth)?,
            macro_f1: f1.iter().sum::<f64>() / c as f64,
            roc_auc: roc.macro_mean,
            pr_auc: pr.macro_mean,
            per_class_f1: f1,
            per_class_roc_auc: roc.per_class,
            per_class_pr_auc: pr.per_class,
            n_eval: truth.len(),
        })
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| String::from("-"), |x| format!("{x:.4}"));
        writeln!(f, "{:<10} {:>8}", "metric", "value")?;
        writeln!(f, "{:<10} {:>8.4}", "accuracy", self.accuracy)?;
        writeln!(f, "{:<10} {:>8.4}", "macro_f1", self.macro_f1)?;
        writeln!(f, "{:<10} {:>8.4}", "roc_auc", self.roc_auc)?;
        writeln!(f, "{:<10} {:>8.4}", "pr_auc", self.pr_auc)?;
        writeln!(f, "{:<10} {:>8}", "n_eval", self.n_eval)?;
        writeln!(f, "{:<6} {:>8} {:>8} {:>8}", "class", "f1", "roc_auc", "pr_auc")?;
        for k in 0..self.per_class_f1.len() {
            writeln!(
                f,
                "{:<6} {:>8.4} {:>8} {:>8}",
                k,
                self.per_class_f1[k],
                opt(self.per_class_roc_auc[k]),
                opt(self.per_class_pr_auc[k])
            )?;
        }
        Ok(())
    }
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Continued fraction for the regularized incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b) + a * libm::log(x) + b * libm::log1p(-x);
    let front = libm::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// `Pr(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_sf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// One-tailed p for `mean(a) > mean(b)`.
    pub p: f64,
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Domain(format!(
            "t-test needs at least 2 values per sample, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if !(se2 > 0.0) {
        return Err(Error::ZeroVariance("both samples are constant".into()));
    }
    let t = (ma - mb) / libm::sqrt(se2);
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    Ok(TTest {
        t,
        df,
        p: student_t_sf(t, df),
    })
}

pub fn t_test_one_tailed(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(welch_t_test(a, b)?.p)
}
