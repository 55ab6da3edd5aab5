//! NMSE, mIoU and SNR bookkeeping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::ComplexMatrix;
use crate::scalar::Scalar;
use crate::semantic::SegmentationMap;

/// Reported in place of −∞ dB for exact estimates.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// `10·log10(‖estimate − truth‖² / ‖truth‖²)`, floored at [`NMSE_FLOOR_DB`].
pub fn nmse_db<T: Scalar>(estimate: &ComplexMatrix<T>, truth: &ComplexMatrix<T>) -> Result<T> {
    let err = estimate.sub(truth)?.frobenius_norm_sq();
    let reference = truth.frobenius_norm_sq();
    if !(reference > T::zero()) {
        return Err(Error::InvalidParameter("nmse reference has zero norm".into()));
    }
    let db = T::lit(10.0) * (err / reference).log10();
    Ok(db.max(T::lit(NMSE_FLOOR_DB)))
}

pub fn snr_db_to_noise_variance(snr_db: f64, power: f64) -> f64 {
    power / 10f64.powf(snr_db / 10.0)
}

/// `counts[i][j]`: cells of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_maps(pred: &SegmentationMap, truth: &SegmentationMap) -> Result<Self> {
        if pred.dims() != truth.dims() || pred.classes() != truth.classes() {
            return Err(Error::InvalidParameter(format!(
                "segmentation maps differ: {:?}/{} vs {:?}/{}",
                pred.dims(),
                pred.classes(),
                truth.dims(),
                truth.classes()
            )));
        }
        let mut cm = Self::new(truth.classes());
        for (&t, &p) in truth.labels().iter().zip(pred.labels()) {
            cm.record(t as usize, p as usize);
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth * self.classes + pred] += 1;
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        (0..self.classes).map(|j| self.get(class, j)).sum()
    }

    pub fn col_sum(&self, class: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, class)).sum()
    }

    /// TP / (TP + FP + FN), or `None` when the class is absent from both maps.
    pub fn iou(&self, class: usize) -> Option<f64> {
        let tp = self.get(class, class);
        let union = self.row_sum(class) + self.col_sum(class) - tp;
        (union > 0).then(|| tp as f64 / union as f64)
    }

    pub fn miou(&self, policy: AbsentClassPolicy) -> f64 {
        let ious = (0..self.classes).map(|g| self.iou(g));
        match policy {
            AbsentClassPolicy::Exclude => {
                let present: Vec<f64> = ious.flatten().collect();
                if present.is_empty() {
                    1.0
                } else {
                    present.iter().sum::<f64>() / present.len() as f64
                }
            }
            AbsentClassPolicy::CountAsOne => ious.map(|v| v.unwrap_or(1.0)).sum::<f64>() / self.classes as f64,
            AbsentClassPolicy::CountAsZero => ious.map(|v| v.unwrap_or(0.0)).sum::<f64>() / self.classes as f64,
        }
    }
}

/// How a class missing from both prediction and ground truth enters the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsentClassPolicy {
    #[default]
    Exclude,
    CountAsOne,
    CountAsZero,
}

/// Mean intersection-over-union, absent classes excluded.
pub fn miou(pred: &SegmentationMap, truth: &SegmentationMap) -> Result<f64> {
    miou_with(pred, truth, AbsentClassPolicy::Exclude)
}

pub fn miou_with(pred: &SegmentationMap, truth: &SegmentationMap, policy: AbsentClassPolicy) -> Result<f64> {
    Ok(ConfusionMatrix::from_maps(pred, truth)?.miou(policy))
}

/// Sample mean with a normal-approximation 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCi {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl MeanCi {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }
}

pub fn mean_ci95(samples: &[f64]) -> MeanCi {
    let n = samples.len();
    if n == 0 {
        return MeanCi { mean: f64::NAN, half_width: f64::NAN, n };
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let half_width = if n > 1 {
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        1.96 * (var / n as f64).sqrt()
    } else {
        0.0
    };
    MeanCi { mean, half_width, n }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn nmse_examples() {
        let truth = ComplexMatrix::<f64>::identity(2);
        assert_eq!(nmse_db(&truth, &truth).unwrap(), NMSE_FLOOR_DB);

        let mut est = truth.clone();
        est[(0, 0)] = Complex64::new(1.1, 0.0);
        est[(1, 1)] = Complex64::new(0.9, 0.0);
        assert!((nmse_db(&est, &truth).unwrap() + 20.0).abs() < 1e-12);

        assert!(nmse_db(&truth.scale(2.0), &truth).unwrap().abs() < 1e-12);
        assert!(nmse_db(&truth, &ComplexMatrix::zeros(2, 2)).is_err());
        assert!(nmse_db(&truth, &ComplexMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_db_to_noise_variance(0.0, 1.0), 1.0);
        assert!((snr_db_to_noise_variance(10.0, 1.0) - 0.1).abs() < 1e-15);
        assert!((snr_db_to_noise_variance(20.0, 2.0) - 0.02).abs() < 1e-15);
    }

    fn map(labels: Vec<u8>, classes: usize) -> SegmentationMap {
        SegmentationMap::new(1, labels.len(), classes, labels).unwrap()
    }

    #[test]
    fn miou_examples() {
        let t = map(vec![0, 1, 1, 0, 2, 2], 3);
        assert_eq!(miou(&t, &t).unwrap(), 1.0);

        let truth = map(vec![0, 0, 1, 1], 2);
        let pred = map(vec![0, 0, 0, 0], 2);
        assert_eq!(miou(&pred, &truth).unwrap(), 0.25);
        assert!(miou(&pred, &map(vec![0, 0, 0], 2)).is_err());
    }

    #[test]
    fn absent_class_policies() {
        let truth = map(vec![0, 0, 1, 1], 3);
        let pred = map(vec![0, 0, 0, 0], 3);
        let cm = ConfusionMatrix::from_maps(&pred, &truth).unwrap();
        assert_eq!(cm.iou(2), None);
        assert_eq!(cm.miou(AbsentClassPolicy::Exclude), 0.25);
        assert_eq!(cm.miou(AbsentClassPolicy::CountAsOne), 0.5);
        assert_eq!(cm.miou(AbsentClassPolicy::CountAsZero), 0.5 / 3.0);
    }

    #[test]
    fn mean_ci() {
        let ci = mean_ci95(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ci.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((ci.half_width - 1.96 * sd / 2.0).abs() < 1e-12);
    }

    fn pair() -> impl Strategy<Value = (Vec<u8>, Vec<u8>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..4, n),
                proptest::collection::vec(0u8..4, n),
            )
        })
    }

    proptest! {
        #[test]
        fn miou_bounded_and_relabel_invariant((p, t) in pair(), perm in Just([0u8, 1, 2, 3]).prop_shuffle()) {
            let a = miou(&map(p.clone(), 4), &map(t.clone(), 4)).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let relabel = |v: &[u8]| v.iter().map(|&x| perm[x as usize]).collect::<Vec<_>>();
            let b = miou(&map(relabel(&p), 4), &map(relabel(&t), 4)).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn confusion_rows_are_true_counts((p, t) in pair()) {
            let cm = ConfusionMatrix::from_maps(&map(p.clone(), 4), &map(t.clone(), 4)).unwrap();
            prop_assert_eq!(cm.total(), t.len() as u64);
            for g in 0..4u8 {
                prop_assert_eq!(cm.row_sum(g as usize), t.iter().filter(|&&x| x == g).count() as u64);
            }
        }

        #[test]
        fn nmse_unitary_invariant(
            entries in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 8),
            theta in 0.0f64..6.283,
            scale in 0.5f64..1.5,
        ) {
            let truth = ComplexMatrix::from_vec(2, 2, entries[..4].iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap();
            prop_assume!(truth.frobenius_norm_sq() > 1e-3);
            let err = ComplexMatrix::from_vec(2, 2, entries[4..].iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap();
            let est = truth.scale(scale).add(&err).unwrap();
            let (c, s) = (theta.cos(), theta.sin());
            let u = ComplexMatrix::from_rows(&[
                vec![Complex64::new(c, 0.0), Complex64::new(0.0, -s)],
                vec![Complex64::new(0.0, -s), Complex64::new(c, 0.0)],
            ]);
            let a = nmse_db(&est, &truth).unwrap();
            let b = nmse_db(&u.matmul(&est).unwrap(), &u.matmul(&truth).unwrap()).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
