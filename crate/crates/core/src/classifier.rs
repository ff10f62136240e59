//! K-nearest-neighbor alertness classifier over normalized features.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{BaselineStats, FeatureMask, FeatureVector};
use crate::kdtree::KdTree;
use crate::scalar::Scalar;
use crate::types::AlertnessLabel;

pub const MODEL_VERSION: &str = "1";
/// K selected by the accuracy sweep on the reference corpus.
pub const DEFAULT_K: usize = 38;
pub const DEFAULT_K_RANGE: std::ops::RangeInclusive<usize> = 1..=45;

/// A normalized feature vector with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector<T = f64> {
    pub features: FeatureVector<T>,
    pub label: AlertnessLabel,
}

#[derive(Debug, Clone)]
pub struct KnnModel<T = f64> {
    mask: FeatureMask,
    k: usize,
    /// Label returned when exactly half of the neighbors are drowsy.
    tie_label: AlertnessLabel,
    labels: Vec<AlertnessLabel>,
    index: KdTree<T>,
    /// Reference baseline carried in the model file, if any.
    pub baseline: Option<BaselineStats<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction<T = f64> {
    pub label: AlertnessLabel,
    pub drowsy_fraction: T,
}

impl<T: Scalar> KnnModel<T> {
    /// Trains on rows that are already projected onto `mask`.
    pub fn from_rows(
        rows: &[Vec<T>],
        labels: &[AlertnessLabel],
        mask: FeatureMask,
        k: usize,
    ) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::InvalidConfig(
                "feature mask must not be empty".into(),
            ));
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows.len(),
                found: labels.len(),
            });
        }
        if rows.len() < k {
            return Err(Error::InsufficientTraining { n: rows.len(), k });
        }
        let dim = mask.len();
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let tags = labels.iter().map(|l| l.as_u8() as u32).collect();
        Ok(Self {
            mask,
            k,
            tie_label: AlertnessLabel::Drowsy,
            labels: labels.to_vec(),
            index: KdTree::build(flat, dim, tags)?,
            baseline: None,
        })
    }

    pub fn mask(&self) -> FeatureMask {
        self.mask
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[AlertnessLabel] {
        &self.labels
    }

    pub fn tie_label(&self) -> AlertnessLabel {
        self.tie_label
    }

    pub fn with_tie_label(mut self, label: AlertnessLabel) -> Self {
        self.tie_label = label;
        self
    }

    pub fn with_baseline(mut self, baseline: BaselineStats<T>) -> Self {
        self.baseline = Some(baseline);
        self
    }

    /// Training vector `i`, projected onto the mask.
    pub fn train_row(&self, i: usize) -> &[T] {
        self.index.point(i)
    }

    fn decide(&self, drowsy: usize, k: usize) -> Prediction<T> {
        let drowsy_fraction = T::of_usize(drowsy) / T::of_usize(k);
        let label = match (2 * drowsy).cmp(&k) {
            std::cmp::Ordering::Greater => AlertnessLabel::Drowsy,
            std::cmp::Ordering::Less => AlertnessLabel::Alert,
            std::cmp::Ordering::Equal => self.tie_label,
        };
        Prediction {
            label,
            drowsy_fraction,
        }
    }

    /// Classifies an already projected query row.
    pub fn predict_row(&self, row: &[T]) -> Result<Prediction<T>> {
        let neighbors = self.index.nearest(row, self.k)?;
        let drowsy = neighbors
            .iter()
            .filter(|n| self.labels[n.index] == AlertnessLabel::Drowsy)
            .count();
        Ok(self.decide(drowsy, self.k))
    }

    pub fn predict(&self, v: &FeatureVector<T>) -> Result<Prediction<T>> {
        if !v.normalized {
            return Err(Error::NotNormalized);
        }
        self.predict_row(&v.project(self.mask))
    }

    /// Predictions for every `k` in `1..=k_max` from one neighbor search.
    /// Because neighbors come back in a fixed total order, the first `k` of
    /// them are exactly the `k`-nearest set.
    pub fn predict_prefixes(&self, row: &[T], k_max: usize) -> Result<Vec<Prediction<T>>> {
        if k_max > self.len() {
            return Err(Error::InsufficientTraining {
                n: self.len(),
                k: k_max,
            });
        }
        let neighbors = self.index.nearest(row, k_max)?;
        let mut drowsy = 0;
        Ok(neighbors
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if self.labels[n.index] == AlertnessLabel::Drowsy {
                    drowsy += 1;
                }
                self.decide(drowsy, i + 1)
            })
            .collect())
    }
}

/// Trains a model on normalized vectors, keeping only the masked columns.
pub fn train<T: Scalar>(
    data: &[LabeledVector<T>],
    mask: FeatureMask,
    k: usize,
) -> Result<KnnModel<T>> {
    if data.iter().any(|d| !d.features.normalized) {
        return Err(Error::NotNormalized);
    }
    let rows: Vec<Vec<T>> = data.iter().map(|d| d.features.project(mask)).collect();
    let labels: Vec<AlertnessLabel> = data.iter().map(|d| d.label).collect();
    KnnModel::from_rows(&rows, &labels, mask, k)
}

/// Binary confusion counts with Drowsy as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn record(&mut self, truth: AlertnessLabel, predicted: AlertnessLabel) {
        use AlertnessLabel::*;
        match (truth, predicted) {
            (Drowsy, Drowsy) => self.tp += 1,
            (Alert, Drowsy) => self.fp += 1,
            (Drowsy, Alert) => self.fn_ += 1,
            (Alert, Alert) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Rows are truth (alert, drowsy), columns are prediction (alert, drowsy).
    pub fn matrix(&self) -> [[usize; 2]; 2] {
        [[self.tn, self.fp], [self.fn_, self.tp]]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    pub positive_class: AlertnessLabel,
}

impl MetricsReport {
    /// Metrics from confusion counts. Undefined ratios (zero denominators) are 0.
    pub fn from_confusion(c: Confusion) -> Self {
        let precision = ratio(c.tp, c.tp + c.fp);
        let recall = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(c.tp + c.tn, c.total()),
            precision,
            recall,
            f1,
            confusion: c,
            positive_class: AlertnessLabel::Drowsy,
        }
    }

    pub fn from_labels(truth: &[AlertnessLabel], predicted: &[AlertnessLabel]) -> Self {
        let mut c = Confusion::default();
        for (t, p) in truth.iter().zip(predicted) {
            c.record(*t, *p);
        }
        Self::from_confusion(c)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.confusion;
        writeln!(
            f,
            "{:<10} {:>8}",
            "accuracy",
            format!("{:.4}", self.accuracy)
        )?;
        writeln!(
            f,
            "{:<10} {:>8}",
            "precision",
            format!("{:.4}", self.precision)
        )?;
        writeln!(f, "{:<10} {:>8}", "recall", format!("{:.4}", self.recall))?;
        writeln!(f, "{:<10} {:>8}", "f1", format!("{:.4}", self.f1))?;
        writeln!(f, "{:<10} {:>8} {:>8}", "", "pred A", "pred D")?;
        writeln!(f, "{:<10} {:>8} {:>8}", "true A", c.tn, c.fp)?;
        write!(f, "{:<10} {:>8} {:>8}", "true D", c.fn_, c.tp)
    }
}

pub fn evaluate<T: Scalar>(
    model: &KnnModel<T>,
    test: &[LabeledVector<T>],
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let predicted = test
        .par_iter()
        .map(|d| model.predict(&d.features).map(|p| p.label))
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<_> = test.iter().map(|d| d.label).collect();
    Ok(MetricsReport::from_labels(&truth, &predicted))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSweep {
    pub mask: FeatureMask,
    pub rows: Vec<SweepRow>,
    /// Highest-accuracy k; the smallest such k on ties.
    pub best_k: usize,
    pub best_accuracy: f64,
}

/// Evaluates every k in `k_range` on the validation set.
pub fn sweep_k<T: Scalar>(
    train_set: &[LabeledVector<T>],
    validation: &[LabeledVector<T>],
    mask: FeatureMask,
    k_range: std::ops::RangeInclusive<usize>,
) -> Result<KSweep> {
    if validation.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let (k_lo, k_max) = (*k_range.start(), *k_range.end());
    if k_lo == 0 || k_lo > k_max {
        return Err(Error::InvalidConfig(format!(
            "invalid k range {k_lo}..={k_max}"
        )));
    }
    let model = train(train_set, mask, k_max)?;
    let per_query = validation
        .par_iter()
        .map(|d| {
            if !d.features.normalized {
                return Err(Error::NotNormalized);
            }
            model.predict_prefixes(&d.features.project(mask), k_max)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth: Vec<_> = validation.iter().map(|d| d.label).collect();

    let rows: Vec<SweepRow> = (k_lo..=k_max)
        .map(|k| {
            let predicted: Vec<_> = per_query.iter().map(|p| p[k - 1].label).collect();
            let m = MetricsReport::from_labels(&truth, &predicted);
            SweepRow {
                k,
                accuracy: m.accuracy,
                f1: m.f1,
            }
        })
        .collect();
    let best = rows
        .iter()
        .fold(&rows[0], |b, r| if r.accuracy > b.accuracy { r } else { b });
    Ok(KSweep {
        mask,
        best_k: best.k,
        best_accuracy: best.accuracy,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Feature;
    use AlertnessLabel::*;

    fn lv(values: [f64; 4], label: AlertnessLabel) -> LabeledVector {
        LabeledVector {
            features: FeatureVector::from_array(values, true),
            label,
        }
    }

    #[test]
    fn minimal_model() {
        let data = [lv([0.0; 4], Alert), lv([1.0; 4], Drowsy)];
        let model = train(&data, FeatureMask::ALL, 1).unwrap();
        let p = model.predict(&data[1].features).unwrap();
        assert_eq!(p.label, Drowsy);
        assert_eq!(p.drowsy_fraction, 1.0);
        let p = model.predict(&data[0].features).unwrap();
        assert_eq!((p.label, p.drowsy_fraction), (Alert, 0.0));
    }

    #[test]
    fn too_few_training_vectors() {
        let data: Vec<_> = (0..37).map(|i| lv([i as f64; 4], Alert)).collect();
        assert!(matches!(
            train(&data, FeatureMask::ALL, 38),
            Err(Error::InsufficientTraining { n: 37, k: 38 })
        ));
    }

    #[test]
    fn even_split_goes_to_drowsy() {
        let data = [lv([0.0; 4], Alert), lv([2.0; 4], Drowsy)];
        let model = train(&data, FeatureMask::ALL, 2).unwrap();
        let p = model
            .predict(&FeatureVector::from_array([1.0; 4], true))
            .unwrap();
        assert_eq!((p.label, p.drowsy_fraction), (Drowsy, 0.5));
        let model = model.with_tie_label(Alert);
        let p = model
            .predict(&FeatureVector::from_array([1.0; 4], true))
            .unwrap();
        assert_eq!(p.label, Alert);
    }

    #[test]
    fn dimension_and_normalization_checks() {
        let data = [lv([0.0; 4], Alert), lv([1.0; 4], Drowsy)];
        let mask = FeatureMask::from_features(&[Feature::Moe]);
        let model = train(&data, mask, 1).unwrap();
        assert!(matches!(
            model.predict_row(&[0.0, 1.0]),
            Err(Error::DimensionMismatch {
                expected: 1,
                found: 2
            })
        ));
        assert!(matches!(
            model.predict(&FeatureVector::raw(0.0, 0.0, 0.0, 0.0)),
            Err(Error::NotNormalized)
        ));
        let raw = [LabeledVector {
            features: FeatureVector::raw(0.3, 0.3, 0.3, 1.0),
            label: Alert,
        }];
        assert!(matches!(train(&raw, mask, 1), Err(Error::NotNormalized)));
        assert!(KnnModel::<f64>::from_rows(&[vec![1.0, 2.0]], &[Alert], mask, 1).is_err());
    }

    #[test]
    fn hand_computed_metrics() {
        let c = Confusion {
            tp: 3,
            fp: 1,
            fn_: 1,
            tn: 5,
        };
        let m = MetricsReport::from_confusion(c);
        assert!((m.precision - 0.75).abs() < 1e-15);
        assert!((m.recall - 0.75).abs() < 1e-15);
        assert!((m.f1 - 0.75).abs() < 1e-15);
        assert!((m.accuracy - 0.8).abs() < 1e-15);
        assert_eq!(m.confusion.matrix(), [[5, 1], [1, 3]]);
        assert!(m.to_string().contains("0.8000"));
    }

    #[test]
    fn metrics_without_positive_predictions() {
        let m = MetricsReport::from_labels(&[Alert, Drowsy], &[Alert, Alert]);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn perfect_evaluation_and_empty_test_set() {
        let data = [lv([0.0; 4], Alert), lv([5.0; 4], Drowsy)];
        let model = train(&data, FeatureMask::ALL, 1).unwrap();
        let m = evaluate(&model, &data).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, 1.0));
        assert!(matches!(evaluate(&model, &[]), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn sweep_on_training_set_is_perfect_at_k1() {
        let data: Vec<_> = (0..20)
            .map(|i| {
                lv(
                    [i as f64, (i * 7 % 5) as f64, 0.0, 0.0],
                    if i % 3 == 0 { Drowsy } else { Alert },
                )
            })
            .collect();
        let sweep = sweep_k(&data, &data, FeatureMask::ALL, 1..=10).unwrap();
        assert_eq!(sweep.rows.len(), 10);
        assert_eq!(sweep.rows[0].accuracy, 1.0);
        assert_eq!(sweep.best_k, 1);
    }

    #[test]
    fn separable_blobs_are_perfect_for_every_k() {
        let mut rng = crate::rng::SplitMix64::new(11);
        let mut blob = |center: f64, label, n: usize| -> Vec<LabeledVector> {
            (0..n)
                .map(|_| {
                    let v = [0; 4].map(|_| center + rng.uniform(-0.5, 0.5));
                    lv(v, label)
                })
                .collect()
        };
        let mut train_set = blob(-10.0, Alert, 25);
        train_set.extend(blob(10.0, Drowsy, 25));
        let mut val = blob(-10.0, Alert, 10);
        val.extend(blob(10.0, Drowsy, 10));
        let sweep = sweep_k(&train_set, &val, FeatureMask::ALL, 1..=25).unwrap();
        assert!(sweep.rows.iter().all(|r| r.accuracy == 1.0 && r.f1 == 1.0));
    }

    #[test]
    fn prefix_predictions_match_individual_models() {
        let mut rng = crate::rng::SplitMix64::new(3);
        let data: Vec<_> = (0..200)
            .map(|_| {
                let v = [0; 4].map(|_| rng.uniform(-1.0, 1.0));
                let label = if v[0] + 0.3 * rng.gaussian() > 0.0 {
                    Drowsy
                } else {
                    Alert
                };
                lv(v, label)
            })
            .collect();
        let big = train(&data, FeatureMask::ALL, 30).unwrap();
        for q in data.iter().take(20) {
            let prefixes = big
                .predict_prefixes(&q.features.project(FeatureMask::ALL), 30)
                .unwrap();
            for k in [1, 2, 9, 30] {
                let m = train(&data, FeatureMask::ALL, k).unwrap();
                assert_eq!(prefixes[k - 1], m.predict(&q.features).unwrap());
            }
        }
    }
}
