//! Target encodings and the soft-target loss.
//!
//! Under [`LabelKind::ClassCategory`] the target has `G + C` slots: category
//! slots first (`[0, G)`), then class slots (`[G, G + C)`). The true category
//! and the true class each receive 0.5, so a single softmax still sees a
//! distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    ClassOnly,
    ClassCategory,
}

/// How a class is read off the output slots.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeRule {
    /// Argmax over class slots only.
    #[default]
    ClassSlots,
    /// Argmax over classes of class score plus the score of its category.
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    pub kind: LabelKind,
    pub num_classes: usize,
    /// Zero under `ClassOnly`.
    pub num_categories: usize,
}

/// Tolerance on a target's sum when validating it as a distribution.
pub const TARGET_SUM_TOLERANCE: f64 = 1e-6;

impl LabelScheme {
    pub fn class_only(num_classes: usize) -> Self {
        LabelScheme {
            kind: LabelKind::ClassOnly,
            num_classes,
            num_categories: 0,
        }
    }

    pub fn class_category(num_classes: usize, num_categories: usize) -> Self {
        LabelScheme {
            kind: LabelKind::ClassCategory,
            num_classes,
            num_categories,
        }
    }

    /// Output slots the network must produce.
    pub fn width(&self) -> usize {
        match self.kind {
            LabelKind::ClassOnly => self.num_classes,
            LabelKind::ClassCategory => self.num_categories + self.num_classes,
        }
    }

    /// First class slot.
    pub fn class_offset(&self) -> usize {
        match self.kind {
            LabelKind::ClassOnly => 0,
            LabelKind::ClassCategory => self.num_categories,
        }
    }

    pub fn encode(&self, class: usize, category: Option<usize>) -> Result<Vec<f64>> {
        let mut t = vec![0.0; self.width()];
        self.encode_into(class, category, &mut t)?;
        Ok(t)
    }

    pub fn encode_into<T: Real>(&self, class: usize, category: Option<usize>, out: &mut [T]) -> Result<()> {
        if out.len() != self.width() {
            return Err(Error::LengthMismatch {
                what: "target",
                expected: self.width(),
                actual: out.len(),
            });
        }
        if class >= self.num_classes {
            return Err(Error::OutOfRange {
                what: "class",
                index: class,
                size: self.num_classes,
            });
        }
        out.iter_mut().for_each(|v| *v = T::zero());
        match (self.kind, category) {
            (LabelKind::ClassOnly, None) => out[class] = T::one(),
            (LabelKind::ClassOnly, Some(_)) => {
                return Err(Error::Config("category index given under a class-only scheme".into()))
            }
            (LabelKind::ClassCategory, None) => return Err(Error::MissingCategoryMap),
            (LabelKind::ClassCategory, Some(g)) => {
                if g >= self.num_categories {
                    return Err(Error::OutOfRange {
                        what: "category",
                        index: g,
                        size: self.num_categories,
                    });
                }
                let half = T::lit(0.5);
                out[g] = half;
                out[self.num_categories + class] = half;
            }
        }
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len == self.width() {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                what: "logits",
                expected: self.width(),
                actual: len,
            })
        }
    }

    /// Predicted class under the default rule: argmax over class slots,
    /// lowest index on ties.
    pub fn decode_class<T: Real>(&self, scores: &[T]) -> Result<usize> {
        self.check_len(scores.len())?;
        Ok(argmax(&scores[self.class_offset()..]))
    }

    pub fn decode_class_with<T: Real>(
        &self,
        scores: &[T],
        rule: DecodeRule,
        category_of: Option<&[usize]>,
    ) -> Result<usize> {
        match (rule, self.kind) {
            (DecodeRule::ClassSlots, _) | (DecodeRule::Joint, LabelKind::ClassOnly) => self.decode_class(scores),
            (DecodeRule::Joint, LabelKind::ClassCategory) => {
                self.check_len(scores.len())?;
                let map = category_of.ok_or(Error::MissingCategoryMap)?;
                if map.len() != self.num_classes {
                    return Err(Error::LengthMismatch {
                        what: "category map",
                        expected: self.num_classes,
                        actual: map.len(),
                    });
                }
                let g = self.num_categories;
                let joint: Vec<T> = (0..self.num_classes)
                    .map(|c| scores[g + c] + scores[map[c]])
                    .collect();
                Ok(argmax(&joint))
            }
        }
    }

    /// Category of the predicted class.
    pub fn decode_category<T: Real>(&self, scores: &[T], category_of: Option<&[usize]>) -> Result<usize> {
        let map = category_of.ok_or(Error::MissingCategoryMap)?;
        let class = self.decode_class(scores)?;
        map.get(class).copied().ok_or(Error::OutOfRange {
            what: "category map",
            index: class,
            size: map.len(),
        })
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax<T: Real>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn check_distribution<T: Real>(target: &[T]) -> Result<()> {
    let sum: f64 = target.iter().map(|t| t.to_f64().unwrap_or(f64::NAN)).sum();
    let min = target
        .iter()
        .map(|t| t.to_f64().unwrap_or(f64::NAN))
        .fold(f64::INFINITY, f64::min);
    if sum.is_nan() || (sum - 1.0).abs() > TARGET_SUM_TOLERANCE || min.is_nan() || min < 0.0 {
        return Err(Error::NotADistribution { sum, min });
    }
    Ok(())
}

/// Numerically stable softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

/// `-sum_i t_i * log softmax(z)_i`, with zero-weight slots contributing
/// nothing even where the log-probability underflows.
pub fn soft_cross_entropy<T: Real>(logits: &[T], target: &[T]) -> Result<T> {
    if logits.len() != target.len() {
        return Err(Error::LengthMismatch {
            what: "target",
            expected: logits.len(),
            actual: target.len(),
        });
    }
    check_distribution(target)?;
    Ok(soft_cross_entropy_unchecked(logits, target))
}

pub(crate) fn soft_cross_entropy_unchecked<T: Real>(logits: &[T], target: &[T]) -> T {
    let logp = log_softmax(logits);
    let mut loss = T::zero();
    for (&t, &lp) in target.iter().zip(&logp) {
        if t != T::zero() {
            loss -= t * lp;
        }
    }
    loss
}

/// Gradient of [`soft_cross_entropy`] with respect to the logits:
/// `softmax(z) - t` for a target that sums to one.
pub fn soft_cross_entropy_grad<T: Real>(logits: &[T], target: &[T]) -> Vec<T> {
    softmax(logits)
        .into_iter()
        .zip(target)
        .map(|(p, &t)| p - t)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn class_category_layout() {
        let s = LabelScheme::class_category(100, 10);
        let t = s.encode(37, Some(3)).unwrap();
        assert_eq!(t.len(), 110);
        assert_eq!(t[3], 0.5);
        assert_eq!(t[47], 0.5);
        assert_eq!(t.iter().sum::<f64>(), 1.0);
        assert_eq!(t.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn class_only_is_one_hot() {
        let t = LabelScheme::class_only(10).encode(5, None).unwrap();
        let mut e = vec![0.0; 10];
        e[5] = 1.0;
        assert_eq!(t, e);
    }

    #[test]
    fn encode_errors() {
        let cc = LabelScheme::class_category(4, 2);
        assert!(matches!(cc.encode(1, None), Err(Error::MissingCategoryMap)));
        assert!(matches!(cc.encode(4, Some(0)), Err(Error::OutOfRange { .. })));
        assert!(matches!(cc.encode(0, Some(2)), Err(Error::OutOfRange { .. })));
        assert!(LabelScheme::class_only(3).encode(0, Some(0)).is_err());
    }

    #[test]
    fn saturated_correct_prediction_has_negligible_loss() {
        let logits = [0.0f64, 100.0, 0.0];
        let loss = soft_cross_entropy(&logits, &[0.0, 1.0, 0.0]).unwrap();
        assert!(loss < 1e-40, "{loss}");
    }

    #[test]
    fn uniform_logits_over_110_slots() {
        let s = LabelScheme::class_category(100, 10);
        let t = s.encode(12, Some(1)).unwrap();
        let loss = soft_cross_entropy(&[0.25f64; 110], &t).unwrap();
        assert!((loss - 110f64.ln()).abs() < 1e-12);
        assert!((loss - 4.70048).abs() < 1e-5);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let loss = soft_cross_entropy(&[1e4f64, -1e4, 0.0], &[0.0, 0.5, 0.5]).unwrap();
        assert!((loss - (0.5 * 2e4 + 0.5 * 1e4)).abs() < 1e-6);
        let loss32 = soft_cross_entropy(&[1e4f32, -1e4, 0.0], &[1.0, 0.0, 0.0]).unwrap();
        assert!(loss32.is_finite() && loss32 < 1e-6);
    }

    #[test]
    fn loss_rejects_bad_targets() {
        assert!(matches!(
            soft_cross_entropy(&[0.0f64, 0.0], &[0.6, 0.6]),
            Err(Error::NotADistribution { .. })
        ));
        assert!(soft_cross_entropy(&[0.0f64, 0.0], &[1.5, -0.5]).is_err());
        assert!(matches!(
            soft_cross_entropy(&[0.0f64; 3], &[1.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
        soft_cross_entropy(&[0.0f64, 0.0], &[0.5 + 5e-7, 0.5]).unwrap();
    }

    #[test]
    fn decoding_rules() {
        let co = LabelScheme::class_only(3);
        assert_eq!(co.decode_class(&[0.1f64, 3.0, -1.0]).unwrap(), 1);
        assert_eq!(co.decode_class(&[2.0f64; 3]).unwrap(), 0);
        let cc = LabelScheme::class_category(4, 2);
        let z = [9.0f64, 9.0, 0.1, 0.2, 0.3, 0.25];
        assert_eq!(cc.decode_class(&z).unwrap(), 2);
        assert!(cc.decode_class(&z[..5]).is_err());
        // Joint: category 1 lifts classes 2 and 3.
        let z = [0.0f64, 5.0, 1.0, 0.5, 0.2, 0.3];
        let map = [0, 0, 1, 1];
        assert_eq!(cc.decode_class(&z).unwrap(), 0);
        assert_eq!(cc.decode_class_with(&z, DecodeRule::Joint, Some(&map)).unwrap(), 3);
        assert!(cc.decode_class_with(&z, DecodeRule::Joint, None).is_err());
    }

    #[test]
    fn decode_category_uses_predicted_class() {
        let co = LabelScheme::class_only(100);
        let mut z = vec![0.0f64; 100];
        z[37] = 1.0;
        let map: Vec<usize> = (0..100).map(|i| i / 10).collect();
        assert_eq!(co.decode_category(&z, Some(&map)).unwrap(), 3);
        assert!(matches!(co.decode_category(&z, None), Err(Error::MissingCategoryMap)));
        let single = LabelScheme::class_only(4);
        assert_eq!(single.decode_category(&[0.0f64, 2.0, 1.0, 0.0], Some(&[0; 4])).unwrap(), 0);
    }

    proptest! {
        #[test]
        fn decode_is_shift_invariant(z in proptest::collection::vec(-50.0f64..50.0, 6), c in -1e3f64..1e3) {
            let s = LabelScheme::class_category(4, 2);
            let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
            // Shifting can merge near-ties under rounding; only compare when
            // the winner is clear.
            let cls = &z[2..];
            let best = cls.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let runner = cls.iter().cloned().filter(|&v| v < best).fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(best - runner > 1e-9);
            prop_assert_eq!(s.decode_class(&z).unwrap(), s.decode_class(&shifted).unwrap());
        }

        #[test]
        fn loss_bounded_below_by_target_entropy(z in proptest::collection::vec(-5.0f64..5.0, 5),
                                                 w in proptest::collection::vec(0.0f64..1.0, 5)) {
            let total: f64 = w.iter().sum();
            prop_assume!(total > 1e-3);
            let t: Vec<f64> = w.iter().map(|v| v / total).collect();
            let entropy: f64 = t.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
            let loss = soft_cross_entropy(&z, &t).unwrap();
            prop_assert!(loss >= entropy - 1e-12);
            // Equality at softmax(z) = t.
            let zt: Vec<f64> = t.iter().map(|&p| p.max(1e-300).ln()).collect();
            let at = soft_cross_entropy(&zt, &t).unwrap();
            prop_assert!((at - entropy).abs() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = [0.3f64, -1.2, 2.0, 0.7, -0.1];
        let t = [0.5, 0.0, 0.0, 0.5, 0.0];
        let g = soft_cross_entropy_grad(&z, &t);
        let h = 1e-6;
        for i in 0..z.len() {
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let fd = (soft_cross_entropy(&zp, &t).unwrap() - soft_cross_entropy(&zm, &t).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6, "slot {i}: {fd} vs {}", g[i]);
        }
    }
}
