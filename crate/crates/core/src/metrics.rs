//! Segmentation metrics: per-class IoU, seen/unseen/all mIoU, harmonic
//! mIoU, and prototype-distribution entropy statistics.

use crate::autodiff::MathError;
use crate::data::ClassSplit;

/// How classes absent from both labels and predictions enter the mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IouAveraging {
    /// Skip classes with an empty union (default).
    ExcludeAbsent,
    /// Count them as zero.
    CountAbsentAsZero,
}

impl IouAveraging {
    pub fn parse(s: &str) -> Option<IouAveraging> {
        match s {
            "exclude" => Some(IouAveraging::ExcludeAbsent),
            "zero" => Some(IouAveraging::CountAbsentAsZero),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            IouAveraging::ExcludeAbsent => "exclude",
            IouAveraging::CountAbsentAsZero => "zero",
        }
    }
}

/// Full evaluation output. IoU and mIoU values are fractions in [0, 1];
/// the report layer renders them as percentages.
#[derive(Clone, Debug)]
pub struct EvalReport {
    /// confusion[label][prediction] counts.
    pub confusion: Vec<Vec<u64>>,
    /// Per-class IoU; `None` when the class is absent from both labels and
    /// predictions (undefined union).
    pub per_class_iou: Vec<Option<f64>>,
    pub miou_seen: f64,
    pub miou_unseen: f64,
    pub miou_all: f64,
    pub hmiou: f64,
    pub entropy_visual: f64,
    pub entropy_semantic: f64,
    pub n_points: u64,
}

/// Confusion matrix and per-class IoU: TP / (TP + FP + FN). Classes absent
/// from both sides get `None`.
pub fn confusion_and_iou(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
) -> Result<(Vec<Vec<u64>>, Vec<Option<f64>>), MathError> {
    if predictions.len() != labels.len() {
        return Err(MathError::InvalidArgument {
            op: "confusion_and_iou",
            message: format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            ),
        });
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(MathError::InvalidArgument {
                op: "confusion_and_iou",
                message: format!("index out of range: prediction {p}, label {l}"),
            });
        }
        confusion[l][p] += 1;
    }
    let iou = iou_from_confusion(&confusion);
    Ok((confusion, iou))
}

pub fn iou_from_confusion(confusion: &[Vec<u64>]) -> Vec<Option<f64>> {
    let n = confusion.len();
    (0..n)
        .map(|c| {
            let tp = confusion[c][c];
            let fn_: u64 = (0..n).map(|j| confusion[c][j]).sum::<u64>() - tp;
            let fp: u64 = (0..n).map(|i| confusion[i][c]).sum::<u64>() - tp;
            let union = tp + fp + fn_;
            if union == 0 {
                None
            } else {
                Some(tp as f64 / union as f64)
            }
        })
        .collect()
}

/// Mean of the IoUs of `classes` under the configured averaging rule.
pub fn mean_iou(per_class: &[Option<f64>], classes: &[usize], averaging: IouAveraging) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for &c in classes {
        match (per_class.get(c).copied().flatten(), averaging) {
            (Some(v), _) => {
                sum += v;
                count += 1;
            }
            (None, IouAveraging::CountAbsentAsZero) => {
                count += 1;
            }
            (None, IouAveraging::ExcludeAbsent) => {}
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Harmonic mean of seen and unseen mIoU: 2su / (s + u), 0 when both are 0.
/// Scale-agnostic: fractions in and fractions out, percents in and percents
/// out.
pub fn hmiou(miou_seen: f64, miou_unseen: f64) -> f64 {
    let sum = miou_seen + miou_unseen;
    if sum <= 0.0 {
        0.0
    } else {
        2.0 * miou_seen * miou_unseen / sum
    }
}

/// Mean Shannon entropy (nats) over rows of an N x M distribution block,
/// with 0 log 0 = 0.
pub fn lgp_entropy(dists: &[f64], n: usize, m: usize) -> f64 {
    assert_eq!(dists.len(), n * m, "distribution block shape mismatch");
    if n == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n {
        let mut h = 0.0;
        for &w in &dists[i * m..(i + 1) * m] {
            if w > 0.0 {
                h -= w * w.ln();
            }
        }
        total += h;
    }
    total / n as f64
}

/// Expected per-class IoU of a uniform random classifier over `n_classes`,
/// computed in closed form from the label histogram:
/// IoU_c = n_c / (N * |C| - n_c * (|C| - 1)) scaled... see below.
///
/// With uniform predictions, E[TP_c] = n_c/|C|, E[FP_c] = (N - n_c)/|C|,
/// E[FN_c] = n_c (|C|-1)/|C|, so IoU_c ~= n_c / (N + n_c(|C|-1)).
pub fn uniform_random_miou(labels: &[usize], n_classes: usize, classes: &[usize]) -> f64 {
    let total = labels.len() as f64;
    let mut histogram = vec![0u64; n_classes];
    for &l in labels {
        histogram[l] += 1;
    }
    let k = n_classes as f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for &c in classes {
        let n_c = histogram[c] as f64;
        if n_c > 0.0 {
            sum += n_c / (total + n_c * (k - 1.0));
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Assembles a report from raw evaluation pieces and checks the internal
/// harmonic-mean consistency.
pub fn build_report(
    confusion: Vec<Vec<u64>>,
    split: &ClassSplit,
    averaging: IouAveraging,
    entropy_visual: f64,
    entropy_semantic: f64,
) -> EvalReport {
    let per_class_iou = iou_from_confusion(&confusion);
    let all_classes: Vec<usize> = (0..split.n_classes()).collect();
    let miou_seen = mean_iou(&per_class_iou, &split.seen, averaging);
    let miou_unseen = mean_iou(&per_class_iou, &split.unseen, averaging);
    let miou_all = mean_iou(&per_class_iou, &all_classes, averaging);
    let n_points = confusion.iter().flatten().sum();
    EvalReport {
        per_class_iou,
        miou_seen,
        miou_unseen,
        miou_all,
        hmiou: hmiou(miou_seen, miou_unseen),
        entropy_visual,
        entropy_semantic,
        n_points,
        confusion,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn perfect_predictions_have_unit_iou() {
        let labels = vec![0, 1, 2, 1, 0, 2, 2];
        let (confusion, iou) = confusion_and_iou(&labels, &labels, 3).unwrap();
        assert_eq!(confusion[0][0], 2);
        assert_eq!(confusion[2][2], 3);
        for c in 0..3 {
            assert_eq!(iou[c], Some(1.0));
        }
    }

    #[test]
    fn disjoint_predictions_have_zero_iou() {
        let labels = vec![0, 0, 0];
        let preds = vec![1, 1, 1];
        let (_, iou) = confusion_and_iou(&preds, &labels, 2).unwrap();
        assert_eq!(iou[0], Some(0.0));
        assert_eq!(iou[1], Some(0.0));
    }

    #[test]
    fn absent_class_is_excluded_not_zeroed() {
        let labels = vec![0, 0, 1];
        let preds = vec![0, 0, 1];
        let (_, iou) = confusion_and_iou(&preds, &labels, 3).unwrap();
        assert_eq!(iou[2], None);
        assert_eq!(mean_iou(&iou, &[0, 1, 2], IouAveraging::ExcludeAbsent), 1.0);
        assert!(
            (mean_iou(&iou, &[0, 1, 2], IouAveraging::CountAbsentAsZero) - 2.0 / 3.0).abs()
                < 1e-12
        );
    }

    #[test]
    fn excluding_an_absent_class_leaves_other_ious_unchanged() {
        let labels = vec![0, 1, 1, 0, 1];
        let preds = vec![0, 1, 0, 0, 1];
        let (_, iou3) = confusion_and_iou(&preds, &labels, 3).unwrap();
        let (_, iou2) = confusion_and_iou(&preds, &labels, 2).unwrap();
        assert_eq!(iou3[0], iou2[0]);
        assert_eq!(iou3[1], iou2[1]);
    }

    #[test]
    fn iou_matches_set_intersection_oracle_on_random_vectors() {
        // brute-force oracle over explicit index sets
        for seed in 0..10 {
            let mut rng = Rng::new(seed);
            let n_classes = 5;
            let labels: Vec<usize> = (0..100).map(|_| rng.below(n_classes)).collect();
            let preds: Vec<usize> = (0..100).map(|_| rng.below(n_classes)).collect();
            let (_, iou) = confusion_and_iou(&preds, &labels, n_classes).unwrap();
            for c in 0..n_classes {
                let label_set: Vec<usize> =
                    (0..100).filter(|&i| labels[i] == c).collect();
                let pred_set: Vec<usize> = (0..100).filter(|&i| preds[i] == c).collect();
                let intersection = label_set.iter().filter(|i| pred_set.contains(i)).count();
                let union = label_set.len() + pred_set.len() - intersection;
                let expected = if union == 0 {
                    None
                } else {
                    Some(intersection as f64 / union as f64)
                };
                match (iou[c], expected) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (a, b) => assert_eq!(a, b),
                }
            }
        }
    }

    #[test]
    fn length_mismatch_is_contract_error() {
        assert!(confusion_and_iou(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn hmiou_reproduces_reported_rows() {
        // published values: (68.3, 12.8) -> 21.5 and (53.1, 7.3) -> 12.9
        assert!((hmiou(68.3, 12.8) - 21.5).abs() < 0.1);
        assert!((hmiou(53.1, 7.3) - 12.9).abs() < 0.1);
    }

    #[test]
    fn hmiou_zero_rule_and_symmetry() {
        assert_eq!(hmiou(55.8, 0.0), 0.0);
        assert_eq!(hmiou(0.0, 0.0), 0.0);
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let s = rng.uniform();
            let u = rng.uniform();
            assert!((hmiou(s, u) - hmiou(u, s)).abs() < 1e-15);
            // bounded by the arithmetic mean and by 2 min(s, u)
            assert!(hmiou(s, u) <= (s + u) / 2.0 + 1e-15);
            assert!(hmiou(s, u) <= 2.0 * s.min(u) + 1e-15);
        }
    }

    #[test]
    fn entropy_bounds_and_oracle() {
        let m = 8;
        let uniform = vec![1.0 / m as f64; m];
        assert!((lgp_entropy(&uniform, 1, m) - (m as f64).ln()).abs() < 1e-12);

        let mut one_hot = vec![0.0; m];
        one_hot[3] = 1.0;
        assert_eq!(lgp_entropy(&one_hot, 1, m), 0.0);

        // mixed batch equals the arithmetic mean of per-row entropies
        let mut rng = Rng::new(3);
        let mut batch = Vec::new();
        let mut per_row = Vec::new();
        for _ in 0..6 {
            let raw: Vec<f64> = (0..m).map(|_| rng.uniform() + 0.05).collect();
            let sum: f64 = raw.iter().sum();
            let dist: Vec<f64> = raw.iter().map(|x| x / sum).collect();
            let h: f64 = dist.iter().map(|&w| if w > 0.0 { -w * w.ln() } else { 0.0 }).sum();
            per_row.push(h);
            batch.extend(dist);
        }
        let expected: f64 = per_row.iter().sum::<f64>() / 6.0;
        assert!((lgp_entropy(&batch, 6, m) - expected).abs() < 1e-12);
        // bounds hold for every row
        for &h in &per_row {
            assert!(h >= 0.0 && h <= (m as f64).ln() + 1e-12);
        }
    }

    #[test]
    fn uniform_random_baseline_matches_simulation() {
        let mut rng = Rng::new(5);
        let n_classes = 4;
        let labels: Vec<usize> = (0..4000).map(|_| rng.below(n_classes)).collect();
        let analytic = uniform_random_miou(&labels, n_classes, &[0, 1, 2, 3]);

        // Monte-Carlo check of the closed form
        let mut sim_total = 0.0;
        let trials = 40;
        for t in 0..trials {
            let mut trial_rng = Rng::new(100 + t);
            let preds: Vec<usize> = (0..4000).map(|_| trial_rng.below(n_classes)).collect();
            let (_, iou) = confusion_and_iou(&preds, &labels, n_classes).unwrap();
            sim_total += mean_iou(&iou, &[0, 1, 2, 3], IouAveraging::ExcludeAbsent);
        }
        let simulated = sim_total / trials as f64;
        assert!(
            (analytic - simulated).abs() < 0.01,
            "analytic {analytic} vs simulated {simulated}"
        );
    }

    #[test]
    fn report_recomputes_hmiou_consistently() {
        let split = crate::data::ClassSplit {
            seen: vec![0, 1],
            unseen: vec![2],
        };
        let confusion = vec![vec![10, 2, 0], vec![1, 9, 1], vec![2, 3, 5]];
        let report = build_report(confusion, &split, IouAveraging::ExcludeAbsent, 1.0, 2.0);
        assert!((report.hmiou - hmiou(report.miou_seen, report.miou_unseen)).abs() < 1e-15);
        assert_eq!(report.n_points, 33);
    }
}
