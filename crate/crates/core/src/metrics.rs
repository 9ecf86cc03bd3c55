//! Pixelwise one-vs-rest measures per class and their aggregation.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Label, LabelMap, Raster};
use crate::morphology::BinaryMask;
use crate::scalar::MetricScalar;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts from paired boolean predictions and ground truth.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = ConfusionCounts::default();
        for (pred, truth) in pairs {
            match (pred, truth) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self { tp: self.tp + o.tp, fp: self.fp + o.fp, fn_: self.fn_ + o.fn_, tn: self.tn + o.tn }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

fn same_dims<A: Raster, B: Raster>(a: &A, b: &B) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "prediction {}x{} vs truth {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn confusion(pred: &LabelMap, truth: &LabelMap, cls: Label) -> Result<ConfusionCounts> {
    same_dims(pred, truth)?;
    Ok(ConfusionCounts::from_pairs(
        pred.labels().iter().zip(truth.labels()).map(|(&p, &t)| (p == cls, t == cls)),
    ))
}

pub fn confusion_binary(pred: &BinaryMask, truth: &BinaryMask) -> Result<ConfusionCounts> {
    same_dims(pred, truth)?;
    Ok(ConfusionCounts::from_pairs(pred.bits().iter().copied().zip(truth.bits().iter().copied())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics<T> {
    pub accuracy: T,
    pub tpr: T,
    pub tnr: T,
    pub fnr: T,
    pub f1: T,
    pub iou: T,
    pub seconds_per_image: T,
}

impl<T: Copy> ClassMetrics<T> {
    /// Fields in a fixed order: accuracy, tpr, tnr, fnr, f1, iou, seconds.
    pub fn fields(&self) -> [T; 7] {
        [self.accuracy, self.tpr, self.tnr, self.fnr, self.f1, self.iou, self.seconds_per_image]
    }

    pub fn from_fields(f: [T; 7]) -> Self {
        Self { accuracy: f[0], tpr: f[1], tnr: f[2], fnr: f[3], f1: f[4], iou: f[5], seconds_per_image: f[6] }
    }
}

/// Derives every measure from one class's counts.
///
/// A zero denominator yields the "perfect agreement" value when the class
/// is absent from both maps (`tp + fp + fn == 0`): 1 for accuracy-like
/// measures and 0 for the miss rate. Otherwise it yields 0.
pub fn class_metrics<T: MetricScalar>(c: &ConfusionCounts, seconds: T) -> ClassMetrics<T> {
    let absent = c.tp + c.fp + c.fn_ == 0;
    let ratio = |num: u64, den: u64, perfect: T| -> T {
        if den == 0 {
            if absent {
                perfect
            } else {
                T::zero()
            }
        } else {
            T::from_count(num) / T::from_count(den)
        }
    };
    let (one, zero) = (T::one(), T::zero());
    ClassMetrics {
        accuracy: ratio(c.tp + c.tn, c.total(), one),
        tpr: ratio(c.tp, c.tp + c.fn_, one),
        tnr: ratio(c.tn, c.tn + c.fp, one),
        fnr: ratio(c.fn_, c.tp + c.fn_, zero),
        f1: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, one),
        iou: ratio(c.tp, c.tp + c.fp + c.fn_, one),
        seconds_per_image: seconds,
    }
}

/// Area covered by the set pixels of a mask.
pub fn quantify<T: MetricScalar>(m: &BinaryMask, pixel_area: T) -> T {
    T::from_count(m.count_ones() as u64) * pixel_area
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats<T> {
    pub mean: ClassMetrics<T>,
    pub std: ClassMetrics<T>,
    pub n_runs: usize,
}

/// Field-wise mean and sample (n - 1) standard deviation.
pub fn aggregate<T: Float>(runs: &[ClassMetrics<T>]) -> Result<AggregateStats<T>> {
    if runs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = T::from(runs.len()).unwrap();
    let mut mean = [T::zero(); 7];
    for r in runs {
        for (m, v) in mean.iter_mut().zip(r.fields()) {
            *m = *m + v;
        }
    }
    mean.iter_mut().for_each(|m| *m = *m / n);
    let mut std = [T::zero(); 7];
    if runs.len() > 1 {
        for r in runs {
            for ((s, v), m) in std.iter_mut().zip(r.fields()).zip(mean) {
                *s = *s + (v - m) * (v - m);
            }
        }
        let dof = n - T::one();
        std.iter_mut().for_each(|s| *s = (*s / dof).sqrt());
    }
    Ok(AggregateStats {
        mean: ClassMetrics::from_fields(mean),
        std: ClassMetrics::from_fields(std),
        n_runs: runs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    use Label::{Background as B, Epicardial as E};

    type Q = Ratio<i128>;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn identical_maps_have_no_errors() {
        let m = LabelMap::new(3, 1, vec![E, B, Label::Pericardium]).unwrap();
        for cls in Label::ALL {
            let c = confusion(&m, &m, cls).unwrap();
            assert_eq!((c.fp, c.fn_), (0, 0));
        }
    }

    #[test]
    fn four_pixel_example() {
        let truth = LabelMap::new(2, 2, vec![E, E, B, B]).unwrap();
        let pred = LabelMap::new(2, 2, vec![E, B, B, B]).unwrap();
        assert_eq!(confusion(&pred, &truth, E).unwrap(), counts(1, 0, 1, 2));
    }

    #[test]
    fn mismatched_dims() {
        let a = LabelMap::filled(2, 2, B).unwrap();
        let b = LabelMap::filled(4, 4, B).unwrap();
        assert!(matches!(confusion(&a, &b, E), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn perfect_and_disjoint() {
        let m = class_metrics(&counts(50, 0, 0, 50), 0.0f64);
        assert_eq!((m.f1, m.iou, m.accuracy), (1.0, 1.0, 1.0));
        let m = class_metrics(&counts(0, 3, 2, 10), 0.0f64);
        assert_eq!((m.f1, m.iou), (0.0, 0.0));
    }

    #[test]
    fn absent_class_is_perfect_agreement() {
        let m = class_metrics(&counts(0, 0, 0, 16), 0.0f64);
        assert_eq!((m.tpr, m.fnr, m.f1, m.iou, m.accuracy, m.tnr), (1.0, 0.0, 1.0, 1.0, 1.0, 1.0));
        // class present but never predicted: tnr undefined -> 0
        let m = class_metrics(&counts(0, 0, 4, 0), 0.0f64);
        assert_eq!((m.tnr, m.tpr, m.fnr), (0.0, 0.0, 1.0));
    }

    #[test]
    fn published_epicardial_pair_obeys_identity() {
        let f1 = 0.9914f64;
        let iou = f1 / (2.0 - f1);
        assert!((iou - 0.98295).abs() < 1e-5);
        assert_eq!(format!("{:.2}", iou * 100.0), "98.29");
    }

    #[test]
    fn quantify_examples() {
        assert_eq!(quantify(&BinaryMask::empty(4, 4).unwrap(), 2.5f64), 0.0);
        assert_eq!(quantify(&BinaryMask::full(10, 10).unwrap(), 1.0f64), 100.0);
        let m = BinaryMask::new(3, 2, vec![true, false, true, true, false, false]).unwrap();
        let mut n = 0;
        for y in 0..2 {
            for x in 0..3 {
                if m.get(x, y) {
                    n += 1;
                }
            }
        }
        assert_eq!(quantify(&m, 0.25f64), n as f64 * 0.25);
    }

    fn with_f1(f1: f64) -> ClassMetrics<f64> {
        ClassMetrics { accuracy: 0.5, tpr: 0.5, tnr: 0.5, fnr: 0.5, f1, iou: 0.5, seconds_per_image: 1.0 }
    }

    #[test]
    fn aggregate_textbook_values() {
        let s = aggregate(&[with_f1(1.0), with_f1(2.0), with_f1(3.0)]).unwrap();
        assert_eq!(s.mean.f1, 2.0);
        assert_eq!(s.std.f1, 1.0);
        assert_eq!(s.std.accuracy, 0.0);
        assert_eq!(s.n_runs, 3);
        let one = aggregate(&[with_f1(0.7)]).unwrap();
        assert_eq!(one.std, ClassMetrics::from_fields([0.0; 7]));
        assert!(matches!(aggregate::<f64>(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn aggregate_matches_two_pass_oracle() {
        let runs = [
            ClassMetrics::from_fields([0.91, 0.83, 0.97, 0.17, 0.88, 0.79, 0.012]),
            ClassMetrics::from_fields([0.93, 0.81, 0.95, 0.19, 0.86, 0.75, 0.015]),
            ClassMetrics::from_fields([0.90, 0.87, 0.96, 0.13, 0.89, 0.80, 0.011]),
        ];
        let s = aggregate(&runs).unwrap();
        for k in 0..7 {
            let xs: Vec<f64> = runs.iter().map(|r| r.fields()[k]).collect();
            let mean = xs.iter().sum::<f64>() / 3.0;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 2.0;
            assert!((s.mean.fields()[k] - mean).abs() < 1e-12);
            assert!((s.std.fields()[k] - var.sqrt()).abs() < 1e-12);
        }
    }

    fn arb_counts() -> impl Strategy<Value = ConfusionCounts> {
        (0u64..5000, 0u64..5000, 0u64..5000, 0u64..5000).prop_map(|(a, b, c, d)| counts(a, b, c, d))
    }

    proptest! {
        #[test]
        fn iou_f1_identity(c in arb_counts()) {
            prop_assume!(c.tp + c.fp + c.fn_ > 0);
            let m: ClassMetrics<Q> = class_metrics(&c, Q::from_integer(0));
            let two = Q::from_integer(2);
            prop_assert_eq!(m.iou, m.f1 / (two - m.f1));
            prop_assert_eq!(m.f1, two * m.iou / (Q::from_integer(1) + m.iou));
            let mf: ClassMetrics<f64> = class_metrics(&c, 0.0);
            prop_assert!((mf.iou - mf.f1 / (2.0 - mf.f1)).abs() < 1e-12);
        }

        #[test]
        fn accuracy_decomposes_exactly(c in arb_counts()) {
            let p = c.tp + c.fn_;
            let n = c.tn + c.fp;
            prop_assume!(p > 0 && n > 0);
            let m: ClassMetrics<Q> = class_metrics(&c, Q::from_integer(0));
            let (pq, nq) = (Q::from_integer(p as i128), Q::from_integer(n as i128));
            prop_assert_eq!(m.accuracy, (m.tpr * pq + m.tnr * nq) / (pq + nq));
            prop_assert_eq!(m.tpr + m.fnr, Q::from_integer(1));
        }

        #[test]
        fn measures_are_bounded(c in arb_counts()) {
            let m: ClassMetrics<f64> = class_metrics(&c, 0.0);
            for v in &m.fields()[..6] {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }

        #[test]
        fn swapping_arguments_swaps_errors(w in 1usize..8, h in 1usize..8, seed in any::<u64>()) {
            let gen = |s: u64| -> LabelMap {
                let l = (0..w * h).map(|i| Label::ALL[((s >> (i % 61)) as usize ^ i) % 4]).collect();
                LabelMap::new(w, h, l).unwrap()
            };
            let (a, b) = (gen(seed), gen(seed.rotate_left(17)));
            for cls in Label::ALL {
                let ab = confusion(&a, &b, cls).unwrap();
                let ba = confusion(&b, &a, cls).unwrap();
                prop_assert_eq!(ab.tp, ba.tp);
                prop_assert_eq!(ab.fp, ba.fn_);
                prop_assert_eq!(ab.fn_, ba.fp);
                prop_assert_eq!(ab.total(), (w * h) as u64);
            }
        }
    }
}
