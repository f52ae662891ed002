//! Confusion-matrix analytics.
//!
//! Error rates are carried as integer `(wrong, total)` pairs so identities
//! such as `total = inter-category + within-category` hold exactly; they
//! become floating point only when rendered.

mod figures;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use figures::{fig1_csv, fig2_csv, fig3_csv, CategoryComparison};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ErrorFraction {
    pub wrong: u64,
    pub total: u64,
}

impl ErrorFraction {
    pub fn new(wrong: u64, total: u64) -> Self {
        ErrorFraction { wrong, total }
    }

    /// `wrong / total`; zero for an empty denominator.
    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.wrong as f64 / self.total as f64
        }
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.value()
    }

    pub fn accuracy(&self) -> f64 {
        1.0 - self.value()
    }
}

impl fmt::Display for ErrorFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}% ({}/{})", self.percent(), self.wrong, self.total)
    }
}

/// `counts[i][j]` is the number of test items of true class `i` predicted as
/// class `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub num_classes: usize,
    pub counts: Vec<u64>,
    pub category_of: Option<Vec<usize>>,
}

pub fn build_confusion(
    truth: &[usize],
    predictions: &[usize],
    num_classes: usize,
    category_of: Option<&[usize]>,
) -> Result<ConfusionMatrix> {
    if truth.len() != predictions.len() {
        return Err(Error::LengthMismatch {
            what: "predictions",
            expected: truth.len(),
            actual: predictions.len(),
        });
    }
    if let Some(map) = category_of {
        if map.len() != num_classes {
            return Err(Error::LengthMismatch {
                what: "category map",
                expected: num_classes,
                actual: map.len(),
            });
        }
    }
    let mut counts = vec![0u64; num_classes * num_classes];
    for (&t, &p) in truth.iter().zip(predictions) {
        for label in [t, p] {
            if label >= num_classes {
                return Err(Error::OutOfRange {
                    what: "class label",
                    index: label,
                    size: num_classes,
                });
            }
        }
        counts[t * num_classes + p] += 1;
    }
    Ok(ConfusionMatrix {
        num_classes,
        counts,
        category_of: category_of.map(<[usize]>::to_vec),
    })
}

/// Inter-category leakage: the error left after merging every category into
/// one superclass, so that confusions between siblings count as correct.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub total_error: ErrorFraction,
    pub inter_category_error: ErrorFraction,
    pub within_category_error: ErrorFraction,
    pub per_category_leakage: Vec<ErrorFraction>,
}

impl ConfusionMatrix {
    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.num_classes..(truth + 1) * self.num_classes]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.num_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn error(&self) -> ErrorFraction {
        let total = self.total();
        ErrorFraction::new(total - self.correct(), total)
    }

    pub fn per_class_errors(&self) -> Vec<ErrorFraction> {
        (0..self.num_classes)
            .map(|i| {
                let total: u64 = self.row(i).iter().sum();
                ErrorFraction::new(total - self.get(i, i), total)
            })
            .collect()
    }

    fn categories(&self) -> Result<(&[usize], usize)> {
        let map = self.category_of.as_deref().ok_or(Error::MissingCategoryMap)?;
        let g = map.iter().max().map_or(0, |m| m + 1);
        Ok((map, g))
    }

    pub fn num_categories(&self) -> Option<usize> {
        self.categories().ok().map(|(_, g)| g)
    }

    /// Class-level error restricted to each category's test items.
    pub fn category_errors(&self) -> Result<Vec<ErrorFraction>> {
        let (map, g) = self.categories()?;
        let mut out = vec![ErrorFraction::default(); g];
        for (i, e) in self.per_class_errors().into_iter().enumerate() {
            out[map[i]].wrong += e.wrong;
            out[map[i]].total += e.total;
        }
        if let Some(empty) = out.iter().position(|e| e.total == 0) {
            return Err(Error::Empty(if empty == 0 {
                "category 0 has no test items"
            } else {
                "a category has no test items"
            }));
        }
        Ok(out)
    }

    /// `G x G` matrix with `super[a][b] = sum counts[i][j]` over classes `i`
    /// in `a` and `j` in `b`. Its own category map is the identity.
    pub fn merge_to_superclasses(&self) -> Result<ConfusionMatrix> {
        let (map, g) = self.categories()?;
        let mut counts = vec![0u64; g * g];
        for i in 0..self.num_classes {
            for (j, &c) in self.row(i).iter().enumerate() {
                counts[map[i] * g + map[j]] += c;
            }
        }
        Ok(ConfusionMatrix {
            num_classes: g,
            counts,
            category_of: Some((0..g).collect()),
        })
    }

    pub fn leakage(&self) -> Result<LeakageReport> {
        let merged = self.merge_to_superclasses()?;
        let total_error = self.error();
        let inter = merged.error();
        debug_assert_eq!(inter.total, total_error.total);
        Ok(LeakageReport {
            within_category_error: ErrorFraction::new(total_error.wrong - inter.wrong, total_error.total),
            inter_category_error: inter,
            total_error,
            per_category_leakage: merged.per_class_errors(),
        })
    }

    /// Header row of class ids, then one row per true class.
    pub fn to_csv(&self, class_ids: &[String]) -> String {
        let mut s = String::from("true\\predicted");
        for id in class_ids {
            s.push(',');
            s.push_str(id);
        }
        s.push('\n');
        for i in 0..self.num_classes {
            s.push_str(class_ids.get(i).map_or("?", String::as_str));
            for c in self.row(i) {
                s.push_str(&format!(",{c}"));
            }
            s.push('\n');
        }
        s
    }
}

/// `delta_i = accuracy_shared_i - accuracy_separate_i`, positive where a
/// class gained from sharing.
pub fn per_class_delta(errors_shared: &[f64], errors_separate: &[f64]) -> Result<Vec<f64>> {
    if errors_shared.len() != errors_separate.len() {
        return Err(Error::LengthMismatch {
            what: "per-class errors",
            expected: errors_shared.len(),
            actual: errors_separate.len(),
        });
    }
    Ok(errors_shared
        .iter()
        .zip(errors_separate)
        .map(|(s, p)| (1.0 - s) - (1.0 - p))
        .collect())
}

/// Pairs two per-class error lists by class id, in the order of `shared`.
pub fn align_by_class_id(
    shared: &[(String, ErrorFraction)],
    separate: &[(String, ErrorFraction)],
) -> Result<Vec<(String, ErrorFraction, ErrorFraction)>> {
    let lookup: HashMap<&str, ErrorFraction> = separate.iter().map(|(id, e)| (id.as_str(), *e)).collect();
    if lookup.len() != shared.len() {
        return Err(Error::LengthMismatch {
            what: "per-class errors",
            expected: shared.len(),
            actual: lookup.len(),
        });
    }
    shared
        .iter()
        .map(|(id, e)| {
            lookup
                .get(id.as_str())
                .map(|p| (id.clone(), *e, *p))
                .ok_or_else(|| Error::Config(format!("class `{id}` missing from the per-category results")))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` edges; bin `k` is `[edges[k], edges[k + 1])`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Half-open bins of width `bin_width` with edges at integer multiples of the
/// width, spanning the data.
pub fn histogram(values: &[f64], bin_width: f64) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Empty("histogram input"));
    }
    if !bin_width.is_finite() || bin_width <= 0.0 {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("histogram values must be finite".into()));
    }
    let bin_of = |v: f64| -> i64 {
        let mut k = (v / bin_width).floor() as i64;
        while v < k as f64 * bin_width {
            k -= 1;
        }
        while v >= (k + 1) as f64 * bin_width {
            k += 1;
        }
        k
    };
    let bins: Vec<i64> = values.iter().map(|&v| bin_of(v)).collect();
    let lo = *bins.iter().min().unwrap();
    let hi = *bins.iter().max().unwrap();
    let mut counts = vec![0u64; (hi - lo + 1) as usize];
    for b in bins {
        counts[(b - lo) as usize] += 1;
    }
    let edges = (lo..=hi + 1).map(|k| k as f64 * bin_width).collect();
    Ok(Histogram { edges, counts })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub sizes: Vec<usize>,
    pub errors: Vec<f64>,
    pub relative_sizes: Vec<f64>,
    pub relative_errors: Vec<f64>,
}

/// Sizes and errors divided by their first entries.
pub fn relative_increase_curve(sizes: &[usize], errors: &[f64]) -> Result<ScalingCurve> {
    if sizes.len() != errors.len() {
        return Err(Error::LengthMismatch {
            what: "errors",
            expected: sizes.len(),
            actual: errors.len(),
        });
    }
    let (&s0, &e0) = sizes
        .first()
        .zip(errors.first())
        .ok_or(Error::Empty("scaling curve"))?;
    if s0 == 0 || e0 == 0.0 {
        return Err(Error::Config("first size and first error must be nonzero".into()));
    }
    Ok(ScalingCurve {
        sizes: sizes.to_vec(),
        errors: errors.to_vec(),
        relative_sizes: sizes.iter().map(|&s| s as f64 / s0 as f64).collect(),
        relative_errors: errors.iter().map(|&e| e / e0).collect(),
    })
}
