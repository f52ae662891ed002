//! Plot data: plain CSV that any plotting tool can read.

use serde::{Deserialize, Serialize};

use super::{Histogram, ScalingCurve};

/// Relative error against relative class count.
pub fn fig1_csv(curve: &ScalingCurve) -> String {
    let mut s = String::from("# figure 1: relative increase in error vs relative increase in classes\n");
    s.push_str("classes,error_pct,relative_classes,relative_error\n");
    for i in 0..curve.sizes.len() {
        s.push_str(&format!(
            "{},{:.4},{:.6},{:.6}\n",
            curve.sizes[i],
            100.0 * curve.errors[i],
            curve.relative_sizes[i],
            curve.relative_errors[i]
        ));
    }
    s
}

/// One bar pair per category.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryComparison {
    pub grouping: String,
    pub category: String,
    pub separate_error: f64,
    pub shared_error: f64,
}

/// Grouped bars: error per category for a separate network vs the shared
/// network, for each grouping (natural, random).
pub fn fig2_csv(rows: &[CategoryComparison]) -> String {
    let mut s = String::from("# figure 2: error per category, separate network vs shared network\n");
    s.push_str("grouping,category,separate_error_pct,shared_error_pct\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{:.4},{:.4}\n",
            r.grouping,
            r.category,
            100.0 * r.separate_error,
            100.0 * r.shared_error
        ));
    }
    s
}

/// Histogram of per-class accuracy differences (shared minus separate).
pub fn fig3_csv(h: &Histogram) -> String {
    let mut s = String::from("# figure 3: histogram of per-class accuracy difference, shared minus separate (pct points)\n");
    s.push_str("bin_start,bin_end,count\n");
    for (k, c) in h.counts.iter().enumerate() {
        s.push_str(&format!("{},{},{}\n", h.edges[k], h.edges[k + 1], c));
    }
    s
}
