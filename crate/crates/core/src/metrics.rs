//! Micro-averaged multi-label metrics and ROC / PR curves.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

/// `(max + min) / 2` over every score.
pub fn dynamic_threshold(scores: ArrayView2<f64>) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidData("no scores to threshold".into()));
    }
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    Ok(0.5 * (lo + hi))
}

/// Confusion counts over all label slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Fraction of bags whose whole label vector is right.
    pub subset_accuracy: f64,
    pub confusion: Confusion,
}

fn check_shapes(scores: ArrayView2<f64>, labels: ArrayView2<u8>) -> Result<()> {
    if scores.dim() != labels.dim() {
        return Err(Error::Dimension(format!(
            "scores {:?} vs labels {:?}",
            scores.dim(),
            labels.dim()
        )));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// A slot is predicted positive when its score is at least `threshold`.
pub fn binary_metrics(
    scores: ArrayView2<f64>,
    labels: ArrayView2<u8>,
    threshold: f64,
) -> Result<BinaryMetrics> {
    check_shapes(scores, labels)?;
    let mut cm = Confusion::default();
    let mut exact = 0;
    for (srow, lrow) in scores.rows().into_iter().zip(labels.rows()) {
        let mut all_right = true;
        for (&s, &y) in srow.iter().zip(lrow) {
            match (s >= threshold, y == 1) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fp += 1,
                (false, false) => cm.tn += 1,
                (false, true) => cm.fn_ += 1,
            }
            all_right &= (s >= threshold) == (y == 1);
        }
        exact += all_right as usize;
    }
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(BinaryMetrics {
        accuracy: ratio(cm.tp + cm.tn, scores.len()),
        precision,
        recall,
        f1,
        subset_accuracy: ratio(exact, scores.nrows()),
        confusion: cm,
    })
}

/// ROC and PR curves with their areas.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub roc: Vec<(f64, f64)>,
    /// `(recall, precision)`, starting with the `(0, first precision)` anchor.
    pub pr: Vec<(f64, f64)>,
    pub roc_auc: f64,
    pub pr_auc: f64,
}

/// Micro-averaged ROC / PR over the flattened `(score, label)` pairs.
///
/// Thresholds sweep downward through the distinct scores, so tied scores
/// enter together. ROC area uses the trapezoid rule, PR area the step rule.
pub fn roc_pr(scores: ArrayView2<f64>, labels: ArrayView2<u8>) -> Result<Curves> {
    check_shapes(scores, labels)?;
    let mut pairs: Vec<(f64, bool)> = scores
        .iter()
        .zip(labels.iter())
        .map(|(&s, &y)| (s, y == 1))
        .collect();
    if pairs.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidData("NaN score".into()));
    }
    let pos = pairs.iter().filter(|p| p.1).count();
    let neg = pairs.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(
            "labels contain a single class; ROC and PR areas are undefined".into(),
        ));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut roc = vec![(0.0, 0.0)];
    let mut pr_points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            if pairs[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        roc.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        if tp > 0 {
            pr_points.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
        }
    }

    let roc_auc = roc
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[1].1 + w[0].1))
        .sum();
    let mut pr = Vec::with_capacity(pr_points.len() + 1);
    pr.push((0.0, pr_points[0].1));
    pr.extend(pr_points);
    let pr_auc = pr.windows(2).map(|w| (w[1].0 - w[0].0) * w[1].1).sum();
    Ok(Curves {
        roc,
        pr,
        roc_auc,
        pr_auc,
    })
}

/// Everything the evaluation step reports.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub metrics: BinaryMetrics,
    /// `None` when the labels hold a single class.
    pub curves: Option<Curves>,
}

impl EvalReport {
    pub fn roc_auc(&self) -> Option<f64> {
        self.curves.as_ref().map(|c| c.roc_auc)
    }

    pub fn pr_auc(&self) -> Option<f64> {
        self.curves.as_ref().map(|c| c.pr_auc)
    }

    /// One header line and one data line; undefined areas are left empty.
    pub fn to_csv(&self) -> String {
        let m = &self.metrics;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "accuracy,precision,recall,f1,roc_auc,pr_auc,threshold,subset_accuracy\n{},{},{},{},{},{},{},{}\n",
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            opt(self.roc_auc()),
            opt(self.pr_auc()),
            self.threshold,
            m.subset_accuracy
        )
    }
}

/// Threshold, metrics and (when defined) curves in one call.
pub fn evaluate(
    scores: ArrayView2<f64>,
    labels: ArrayView2<u8>,
    threshold: Option<f64>,
) -> Result<EvalReport> {
    let threshold = match threshold {
        Some(t) => t,
        None => dynamic_threshold(scores)?,
    };
    let metrics = binary_metrics(scores, labels, threshold)?;
    let curves = match roc_pr(scores, labels) {
        Ok(c) => Some(c),
        Err(Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalReport {
        threshold,
        metrics,
        curves,
    })
}

/// `header` line followed by one `x,y` line per point.
pub fn curve_csv(header: &str, points: &[(f64, f64)]) -> String {
    let mut out = format!("{header}\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x},{y}");
    }
    out
}

/// Labels of `bags` as an `N x C` matrix.
pub fn label_matrix(bags: &[crate::Bag]) -> Array2<u8> {
    let c = bags.first().map_or(0, |b| b.num_classes());
    Array2::from_shape_fn((bags.len(), c), |(n, k)| bags[n].labels[k])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mann_whitney(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    if si > sj {
                        num += 1.0;
                    } else if si == sj {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(dynamic_threshold(array![[0.5, 0.5]].view()).unwrap(), 0.5);
        assert_eq!(dynamic_threshold(array![[0.2], [0.8]].view()).unwrap(), 0.5);
        assert!(dynamic_threshold(Array2::<f64>::zeros((0, 3)).view()).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let s = Array2::from_shape_fn((7, 3), |_| rng.random::<f64>());
            let flat: Vec<f64> = s.iter().copied().collect();
            let mut lo = flat[0];
            let mut hi = flat[0];
            for &v in &flat {
                if v < lo {
                    lo = v;
                }
                if v > hi {
                    hi = v;
                }
            }
            assert_eq!(dynamic_threshold(s.view()).unwrap(), (lo + hi) / 2.0);
        }
    }

    #[test]
    fn binary_metric_examples() {
        let labels = array![[1u8, 0], [0, 1]];
        let perfect = array![[0.9, 0.1], [0.2, 0.8]];
        let m = binary_metrics(perfect.view(), labels.view(), 0.5).unwrap();
        assert_eq!(
            (m.accuracy, m.precision, m.recall, m.f1),
            (1.0, 1.0, 1.0, 1.0)
        );
        assert_eq!(m.subset_accuracy, 1.0);

        let none = array![[0.1, 0.1], [0.1, 0.1]];
        let m = binary_metrics(none.view(), labels.view(), 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.accuracy, 0.5);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let s = Array2::from_shape_fn((9, 4), |_| rng.random::<f64>());
            let y = Array2::from_shape_fn((9, 4), |_| rng.random_range(0..2u8));
            let m = binary_metrics(s.view(), y.view(), 0.5).unwrap();
            let mut counts = [[0usize; 2]; 2];
            for (a, b) in s.iter().zip(y.iter()) {
                counts[(*a >= 0.5) as usize][*b as usize] += 1;
            }
            let (tp, fp, fn_, tn) = (counts[1][1], counts[1][0], counts[0][1], counts[0][0]);
            assert_eq!(m.accuracy, (tp + tn) as f64 / 36.0);
            let p = if tp + fp > 0 {
                tp as f64 / (tp + fp) as f64
            } else {
                0.0
            };
            let r = if tp + fn_ > 0 {
                tp as f64 / (tp + fn_) as f64
            } else {
                0.0
            };
            assert_eq!(m.precision, p);
            assert_eq!(m.recall, r);
        }
        assert!(binary_metrics(perfect.view(), array![[1u8]].view(), 0.5).is_err());
    }

    #[test]
    fn roc_examples() {
        let y = array![[1u8, 0, 1, 0]];
        let s = y.mapv(|v| v as f64);
        assert_eq!(roc_pr(s.view(), y.view()).unwrap().roc_auc, 1.0);
        let c = roc_pr(Array2::from_elem((1, 4), 0.3).view(), y.view()).unwrap();
        assert_eq!(c.roc_auc, 0.5);
        assert_eq!(c.roc, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert!(matches!(
            roc_pr(s.view(), array![[1u8, 1, 1, 1]].view()),
            Err(Error::Undefined(_))
        ));
    }

    #[test]
    fn roc_auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.random_range(2..30);
            let mut y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            y[0] = 0;
            y[1] = 1;
            // coarse scores force ties
            let s: Vec<f64> = (0..n)
                .map(|_| rng.random_range(0..6) as f64 / 5.0)
                .collect();
            let sm = Array2::from_shape_vec((1, n), s.clone()).unwrap();
            let ym = Array2::from_shape_vec((1, n), y.clone()).unwrap();
            let auc = roc_pr(sm.view(), ym.view()).unwrap().roc_auc;
            assert!((auc - mann_whitney(&s, &y)).abs() < 1e-12);
            let warped = sm.mapv(|v| (3.0 * v).exp());
            let auc2 = roc_pr(warped.view(), ym.view()).unwrap().roc_auc;
            assert!((auc - auc2).abs() < 1e-12);
        }
    }

    #[test]
    fn pr_curve_shape() {
        let y = array![[1u8, 0, 1, 0, 0]];
        let s = array![[0.9, 0.8, 0.7, 0.2, 0.1]];
        let c = roc_pr(s.view(), y.view()).unwrap();
        assert_eq!(c.pr[0], (0.0, 1.0));
        assert!(c.pr[1].0 > 0.0);
        assert!(c.pr.windows(2).all(|w| w[1].0 >= w[0].0));
        // 0.5 * 1 + 0.5 * 2/3
        assert!((c.pr_auc - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        assert!(c
            .roc
            .windows(2)
            .all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
    }

    #[test]
    fn threshold_between_neighbours_gives_same_metrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..30 {
            let s = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>());
            let y = Array2::from_shape_fn((6, 3), |_| rng.random_range(0..2u8));
            let t = dynamic_threshold(s.view()).unwrap();
            let below = s
                .iter()
                .copied()
                .filter(|&v| v < t)
                .fold(f64::NEG_INFINITY, f64::max);
            let above = s
                .iter()
                .copied()
                .filter(|&v| v >= t)
                .fold(f64::INFINITY, f64::min);
            let mid = if below.is_finite() {
                0.5 * (below + above)
            } else {
                above
            };
            let a = binary_metrics(s.view(), y.view(), t).unwrap();
            let b = binary_metrics(s.view(), y.view(), mid).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn report_csv_leaves_undefined_areas_empty() {
        let y = array![[1u8, 1]];
        let s = array![[0.4, 0.6]];
        let r = evaluate(s.view(), y.view(), None).unwrap();
        assert!(r.curves.is_none());
        let csv = r.to_csv();
        let data = csv.lines().nth(1).unwrap();
        assert!(data.contains(",,"));
        assert_eq!(csv.lines().count(), 2);
    }
}
