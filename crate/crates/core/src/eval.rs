//! Detection metrics (F1-frame, accuracy, AUC), landmark error and ablation
//! comparison tables.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{Prediction, SampleRecord};

/// Decision threshold applied to probabilities before F1 and accuracy.
pub const THRESHOLD: f64 = 0.5;

fn same_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{a} predictions for {b} targets")));
    }
    Ok(())
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1_frame(pred: &[u8], truth: &[u8]) -> Result<f64> {
    same_len(pred.len(), truth.len())?;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Fraction of matching entries.
pub fn accuracy(pred: &[u8], truth: &[u8]) -> Result<f64> {
    same_len(pred.len(), truth.len())?;
    if pred.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of an empty set".into()));
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| (**p != 0) == (**t != 0)).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counting one half.
pub fn auc(scores: &[f64], truth: &[u8]) -> Result<f64> {
    same_len(scores.len(), truth.len())?;
    let pos = truth.iter().filter(|&&t| t != 0).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(truth).filter(|(_, &t)| t != 0).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// Mean Euclidean landmark error normalized by each sample's inter-ocular
/// distance, in percent.
pub fn mean_landmark_error(preds: &[Vec<(f64, f64)>], truths: &[Vec<(f64, f64)>], d_o: &[f64]) -> Result<f64> {
    same_len(preds.len(), truths.len())?;
    same_len(preds.len(), d_o.len())?;
    if preds.is_empty() {
        return Err(Error::UndefinedMetric("landmark error of an empty set".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for ((p, t), &d) in preds.iter().zip(truths).zip(d_o) {
        if !(d > 0.0) {
            return Err(Error::Input(format!("inter-ocular distance must be positive, got {d}")));
        }
        same_len(p.len(), t.len())?;
        for (a, b) in p.iter().zip(t) {
            total += (a.0 - b.0).hypot(a.1 - b.1) / d;
            count += 1;
        }
    }
    Ok(100.0 * total / count as f64)
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    same_len(a.len(), b.len())?;
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("Spearman correlation of a constant sequence".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    (k > 0).then(|| s / k as f64)
}

/// Per-AU and averaged detection metrics, all in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub f1: Vec<f64>,
    pub accuracy: Vec<f64>,
    /// `None` for AUs whose truth has a single class; excluded from the average.
    pub auc: Vec<Option<f64>>,
    pub avg_f1: f64,
    pub avg_acc: f64,
    pub avg_auc: Option<f64>,
    /// Percent of inter-ocular distance.
    pub mean_landmark_error_pct: Option<f64>,
}

impl MetricReport {
    /// Builds a report from per-AU score columns.
    pub fn from_scores(scores: &[Vec<f64>], truth: &[Vec<u8>]) -> Result<Self> {
        same_len(scores.len(), truth.len())?;
        let n = truth.first().map_or(0, Vec::len);
        if truth.is_empty() || n == 0 {
            return Err(Error::UndefinedMetric("report over an empty set".into()));
        }
        let (mut f1, mut acc, mut au) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..n {
            let s: Vec<f64> = scores.iter().map(|r| r[j]).collect();
            let t: Vec<u8> = truth.iter().map(|r| r[j]).collect();
            let p: Vec<u8> = s.iter().map(|&x| u8::from(x >= THRESHOLD)).collect();
            f1.push(f1_frame(&p, &t)?);
            acc.push(accuracy(&p, &t)?);
            au.push(match auc(&s, &t) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            });
        }
        Ok(MetricReport {
            avg_f1: mean(f1.iter().copied()).unwrap_or(0.0),
            avg_acc: mean(acc.iter().copied()).unwrap_or(0.0),
            avg_auc: mean(au.iter().flatten().copied()),
            f1,
            accuracy: acc,
            auc: au,
            mean_landmark_error_pct: None,
        })
    }

    /// Report on final probabilities and predicted landmarks.
    pub fn from_predictions(preds: &[Prediction], samples: &[SampleRecord]) -> Result<Self> {
        same_len(preds.len(), samples.len())?;
        let scores: Vec<Vec<f64>> = preds.iter().map(|p| p.p_final.clone()).collect();
        let truth: Vec<Vec<u8>> = samples.iter().map(|s| s.labels.clone()).collect();
        let mut r = Self::from_scores(&scores, &truth)?;
        let lp: Vec<_> = preds.iter().map(|p| p.landmark_pred.clone()).collect();
        let lt: Vec<_> = samples.iter().map(|s| s.landmarks.clone()).collect();
        let d: Vec<f64> = samples.iter().map(|s| s.inter_ocular).collect();
        r.mean_landmark_error_pct = Some(mean_landmark_error(&lp, &lt, &d)?);
        Ok(r)
    }

    pub fn n(&self) -> usize {
        self.f1.len()
    }

    /// CSV with one row per metric, per-AU columns and the average.
    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut s = String::from("metric");
        for i in 1..=n {
            s += &format!(",au_{i}");
        }
        s += ",average\n";
        let row = |name: &str, vals: Vec<Option<f64>>, avg: Option<f64>| {
            let mut r = name.to_string();
            for v in vals.into_iter().chain([avg]) {
                r.push(',');
                if let Some(v) = v {
                    r += &format!("{v:.6}");
                }
            }
            r + "\n"
        };
        s += &row("f1", self.f1.iter().map(|&v| Some(v)).collect(), Some(self.avg_f1));
        s += &row("accuracy", self.accuracy.iter().map(|&v| Some(v)).collect(), Some(self.avg_acc));
        s += &row("auc", self.auc.clone(), self.avg_auc);
        s += &row("landmark_error_pct", vec![None; n], self.mean_landmark_error_pct);
        s
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or_else(|| "    -".to_string(), |v| format!("{:5.1}", 100.0 * v));
        writeln!(f, "{:>6} {:>6} {:>6} {:>6}", "AU", "F1", "Acc", "AUC")?;
        for i in 0..self.n() {
            writeln!(
                f,
                "{:>6} {:>6} {:>6} {:>6}",
                i + 1,
                pct(Some(self.f1[i])),
                pct(Some(self.accuracy[i])),
                pct(self.auc[i])
            )?;
        }
        writeln!(
            f,
            "{:>6} {:>6} {:>6} {:>6}",
            "avg",
            pct(Some(self.avg_f1)),
            pct(Some(self.avg_acc)),
            pct(self.avg_auc)
        )?;
        if self.auc.iter().any(Option::is_none) {
            writeln!(f, "(AUC average excludes single-class AUs)")?;
        }
        if let Some(e) = self.mean_landmark_error_pct {
            writeln!(f, "mean landmark error: {e:.2}%")?;
        }
        Ok(())
    }
}

/// One configuration's row of a comparison table, in percentage points.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub tag: String,
    pub f1: Vec<f64>,
    pub avg_f1: f64,
    pub avg_acc: f64,
    pub avg_auc: Option<f64>,
    pub delta_f1: f64,
    pub delta_acc: f64,
    pub delta_auc: Option<f64>,
}

/// Rows in input order; deltas are against the first row.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

pub fn ablation_report(runs: &[(String, MetricReport)]) -> Result<AblationTable> {
    let (_, base) = runs
        .first()
        .ok_or_else(|| Error::Input("a comparison needs at least one run".into()))?;
    if runs.len() < 2 {
        return Err(Error::Input("a comparison needs at least two runs".into()));
    }
    let n = base.n();
    let mut rows = Vec::new();
    for (tag, r) in runs {
        if r.n() != n {
            return Err(Error::Input(format!("run {tag} has {} AUs, baseline has {n}", r.n())));
        }
        rows.push(AblationRow {
            tag: tag.clone(),
            f1: r.f1.iter().map(|v| 100.0 * v).collect(),
            avg_f1: 100.0 * r.avg_f1,
            avg_acc: 100.0 * r.avg_acc,
            avg_auc: r.avg_auc.map(|v| 100.0 * v),
            delta_f1: 100.0 * (r.avg_f1 - base.avg_f1),
            delta_acc: 100.0 * (r.avg_acc - base.avg_acc),
            delta_auc: r.avg_auc.zip(base.avg_auc).map(|(a, b)| 100.0 * (a - b)),
        });
    }
    Ok(AblationTable { rows })
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.f1.len());
        let mut s = String::from("config");
        for i in 1..=n {
            s += &format!(",au_{i}_f1");
        }
        s += ",avg_f1,avg_acc,avg_auc,delta_f1,delta_acc,delta_auc\n";
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.2}"));
        for r in &self.rows {
            s += &r.tag;
            for v in &r.f1 {
                s += &format!(",{v:.2}");
            }
            s += &format!(
                ",{:.2},{:.2},{},{:+.2},{:+.2},{}\n",
                r.avg_f1,
                r.avg_acc,
                opt(r.avg_auc),
                r.delta_f1,
                r.delta_acc,
                r.delta_auc.map_or(String::new(), |v| format!("{v:+.2}"))
            );
        }
        s
    }
}

impl fmt::Display for AblationTable {
    /// Per-AU F1 columns, then averages and the F1 change against the first row.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.tag.len()).max().unwrap_or(6).max(6);
        let n = self.rows.first().map_or(0, |r| r.f1.len());
        write!(f, "{:<w$}", "config")?;
        for i in 1..=n {
            write!(f, " {:>6}", format!("AU{i}"))?;
        }
        writeln!(f, " {:>7} {:>7} {:>7} {:>8}", "F1", "Acc", "AUC", "dF1")?;
        for r in &self.rows {
            let auc = r.avg_auc.map_or("-".into(), |v| format!("{v:.1}"));
            write!(f, "{:<w$}", r.tag)?;
            for v in &r.f1 {
                write!(f, " {v:>6.1}")?;
            }
            writeln!(f, " {:>7.1} {:>7.1} {:>7} {:>+8.1}", r.avg_f1, r.avg_acc, auc, r.delta_f1)?;
        }
        Ok(())
    }
}
