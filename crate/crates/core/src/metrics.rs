//! One-vs-all multiclass evaluation: confusion matrix, per-class rates,
//! support-weighted aggregates and ROC/AUC.

use std::io::Write;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OneVsAll {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

pub fn confusion(true_labels: &[usize], predicted_labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::Shape(format!(
            "{} true labels vs {} predictions",
            true_labels.len(),
            predicted_labels.len()
        )));
    }
    let mut counts = vec![vec![0usize; k]; k];
    for (&t, &p) in true_labels.iter().zip(predicted_labels) {
        if t >= k || p >= k {
            return Err(Error::Data(format!("label {} out of range for {k} classes", t.max(p))));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

impl ConfusionMatrix {
    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, c: usize) -> usize {
        self.counts[c].iter().sum()
    }

    pub fn one_vs_all(&self, c: usize) -> OneVsAll {
        let tp = self.counts[c][c];
        let row: usize = self.counts[c].iter().sum();
        let col: usize = self.counts.iter().map(|r| r[c]).sum();
        let fn_ = row - tp;
        let fp = col - tp;
        OneVsAll {
            tp,
            fn_,
            fp,
            tn: self.total() - tp - fn_ - fp,
        }
    }

    /// `trace / total`; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: usize = (0..self.k()).map(|i| self.counts[i][i]).sum();
        trace as f64 / total as f64
    }

    pub fn write_csv<W: Write>(&self, class_names: &[String], writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(class_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in class_names.iter().zip(&self.counts) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub precision: f64,
    pub recall: f64,
    pub fpr: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl OneVsAll {
    /// Rates from the four cells; any `0/0` is 0.
    pub fn rates(&self) -> Rates {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let fpr = ratio(self.fp, self.fp + self.tn);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Rates {
            precision,
            recall,
            fpr,
            f1,
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

pub fn rates(cm: &ConfusionMatrix, c: usize) -> Result<Rates> {
    if c >= cm.k() {
        return Err(Error::Data(format!("class {c} out of range")));
    }
    Ok(cm.one_vs_all(c).rates())
}

/// Mean of `values` weighted by `supports`; 0 if all supports are 0.
pub fn weighted_mean(values: &[f64], supports: &[usize]) -> f64 {
    let total: usize = supports.iter().sum();
    if total == 0 {
        return 0.0;
    }
    values
        .iter()
        .zip(supports)
        .map(|(v, &s)| v * s as f64)
        .sum::<f64>()
        / total as f64
}

/// ROC points over descending unique score thresholds, from `(0, 0)` to
/// `(1, 1)`, and the trapezoidal AUC. Tied scores form one step.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<(Vec<(f64, f64)>, f64)> {
    if scores.len() != truth.len() {
        return Err(Error::Shape("scores and truth differ in length".into()));
    }
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Data("ROC needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truth[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().expect("starts with origin");
        let (x1, y1) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        points.push((x1, y1));
    }
    Ok((points, auc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
    /// `None` when the class has no positive or no negative sample.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedAverages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassReport>,
    pub accuracy: f64,
    pub weighted: WeightedAverages,
    pub confusion: ConfusionMatrix,
    #[serde(skip)]
    pub roc: Vec<Option<Vec<(f64, f64)>>>,
}

/// Full report from true labels, predictions and per-class probabilities
/// (one row per sample).
pub fn weighted_report(
    truth: &[usize],
    predicted: &[usize],
    probabilities: ArrayView2<f64>,
    class_names: &[String],
) -> Result<EvalReport> {
    let k = class_names.len();
    if probabilities.nrows() != truth.len() || probabilities.ncols() != k {
        return Err(Error::Shape(format!(
            "probabilities {:?} for {} samples and {k} classes",
            probabilities.dim(),
            truth.len()
        )));
    }
    let cm = confusion(truth, predicted, k)?;
    let mut per_class = Vec::with_capacity(k);
    let mut roc = Vec::with_capacity(k);
    for c in 0..k {
        let r = cm.one_vs_all(c).rates();
        let is_c: Vec<bool> = truth.iter().map(|&t| t == c).collect();
        let curve = roc_auc(&probabilities.column(c).to_vec(), &is_c).ok();
        per_class.push(ClassReport {
            class: class_names[c].clone(),
            support: cm.support(c),
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            fpr: r.fpr,
            auc: curve.as_ref().map(|(_, a)| *a),
        });
        roc.push(curve.map(|(p, _)| p));
    }
    let supports: Vec<usize> = per_class.iter().map(|c| c.support).collect();
    let pick = |f: fn(&ClassReport) -> f64| -> Vec<f64> { per_class.iter().map(f).collect() };
    let weighted = WeightedAverages {
        precision: weighted_mean(&pick(|c| c.precision), &supports),
        recall: weighted_mean(&pick(|c| c.recall), &supports),
        f1: weighted_mean(&pick(|c| c.f1), &supports),
        fpr: weighted_mean(&pick(|c| c.fpr), &supports),
    };
    Ok(EvalReport {
        per_class,
        accuracy: cm.accuracy(),
        weighted,
        confusion: cm,
        roc,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// `fpr,tpr` rows for one class.
    pub fn write_roc_csv<W: Write>(&self, class: usize, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["fpr", "tpr"])?;
        if let Some(Some(points)) = self.roc.get(class) {
            for (x, y) in points {
                w.write_record([x.to_string(), y.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table in the usual per-class/weighted layout.
    pub fn render_table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "class", "precision", "recall", "f1", "fpr", "auc"
        );
        for c in &self.per_class {
            let auc = c.auc.map_or("-".to_string(), |a| format!("{a:.4}"));
            s.push_str(&format!(
                "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9}\n",
                c.class, c.precision, c.recall, c.f1, c.fpr, auc
            ));
        }
        let w = &self.weighted;
        s.push_str(&format!(
            "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>9.4}\n",
            "weighted avg", w.precision, w.recall, w.f1, w.fpr
        ));
        s.push_str(&format!("accuracy {:.2}%\n", self.accuracy * 100.0));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn binary_fixture() -> (Vec<usize>, Vec<usize>) {
        // class 1 positive: TP=8, FN=2, FP=1, TN=9
        let mut t = Vec::new();
        let mut p = Vec::new();
        for _ in 0..8 { t.push(1); p.push(1); }
        for _ in 0..2 { t.push(1); p.push(0); }
        t.push(0); p.push(1);
        for _ in 0..9 { t.push(0); p.push(0); }
        (t, p)
    }

    #[test]
    fn confusion_examples() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let cm = confusion(&[0, 0, 1, 1], &[1, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![0, 2], vec![0, 2]]);
        let (t, p) = binary_fixture();
        let ova = confusion(&t, &p, 2).unwrap().one_vs_all(1);
        assert_eq!(ova, OneVsAll { tp: 8, fn_: 2, fp: 1, tn: 9 });
        assert!(confusion(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn rates_examples() {
        let (t, p) = binary_fixture();
        let cm = confusion(&t, &p, 2).unwrap();
        let r = rates(&cm, 1).unwrap();
        assert!((r.recall - 0.8).abs() < 1e-4);
        assert!((r.precision - 0.8889).abs() < 1e-4);
        assert!((r.fpr - 0.1).abs() < 1e-4);
        assert!((r.f1 - 0.8421).abs() < 1e-4);
        assert!((cm.one_vs_all(1).accuracy() - 0.85).abs() < 1e-4);
        assert!((cm.accuracy() - 0.85).abs() < 1e-4);

        let cm = confusion(&[0, 0], &[0, 0], 2).unwrap();
        assert_eq!(rates(&cm, 1).unwrap(), Rates { precision: 0.0, recall: 0.0, fpr: 0.0, f1: 0.0 });
    }

    #[test]
    fn dos_row_from_reconstructed_cells() {
        // 2045 DoS test rows out of 40325; cells chosen to match the published row
        let r = OneVsAll { tp: 134, fn_: 1911, fp: 237, tn: 38043 }.rates();
        assert!((r.precision - 0.3612).abs() < 1e-4);
        assert!((r.recall - 0.0655).abs() < 1e-4);
        assert!((r.f1 - 0.1109).abs() < 1e-4);
        assert!((r.fpr - 0.0062).abs() < 1e-4);
    }

    #[test]
    fn weighting_matches_published_averages() {
        // DoS, Exploits, Fuzzers, Generic, Normal, Reconnaissance test supports
        let support = [2045, 5566, 3031, 9435, 18500, 1748];
        let precision = [0.3612, 0.5980, 0.4930, 0.9982, 0.9388, 0.7807];
        let recall = [0.0655, 0.9222, 0.3698, 0.9662, 0.9236, 0.7883];
        let f1 = [0.1109, 0.7255, 0.4226, 0.9820, 0.9311, 0.7845];
        let fpr = [0.0062, 0.0993, 0.0309, 0.0005, 0.0510, 0.0100];
        assert!((weighted_mean(&precision, &support) - 0.8360).abs() < 1e-4);
        assert!((weighted_mean(&recall, &support) - 0.8424).abs() < 1e-4);
        assert!((weighted_mean(&f1, &support) - 0.8285).abs() < 1e-4);
        assert!((weighted_mean(&fpr, &support) - 0.0403).abs() < 1e-4);
    }

    #[test]
    fn single_class_report() {
        let probs = Array2::ones((3, 1));
        let r = weighted_report(&[0, 0, 0], &[0, 0, 0], probs.view(), &["only".into()]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.per_class[0].auc, None);
    }

    #[test]
    fn roc_examples() {
        let (_, auc) = roc_auc(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false]).unwrap();
        assert_eq!(auc, 1.0);
        let (pts, auc) = roc_auc(&[0.5; 4], &[true, false, true, false]).unwrap();
        assert_eq!(auc, 0.5);
        assert_eq!(pts, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }
}
