//! Tables and figure data, computed from the confusion matrices stored in an
//! experiment record and nothing else.

use serde::{Deserialize, Serialize};

use super::studies::{ExperimentKind, ExperimentRecord, RunRole};
use crate::analytics::{
    align_by_class_id, fig1_csv, fig2_csv, fig3_csv, histogram, relative_increase_curve, CategoryComparison,
    ConfusionMatrix, ErrorFraction, Histogram, LeakageReport, ScalingCurve,
};
use crate::error::{Error, Result};
use crate::labeling::LabelKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSummary {
    pub sizes: Vec<usize>,
    pub replicates: Vec<usize>,
    /// Mean over replicates of the error fraction.
    pub mean_errors: Vec<f64>,
    pub curve: ScalingCurve,
}

pub fn scaling_summary(record: &ExperimentRecord) -> Result<ScalingSummary> {
    let mut sizes = Vec::new();
    let mut replicates = Vec::new();
    let mut mean_errors = Vec::new();
    for &size in &record.config.scaling.sizes {
        let errs: Vec<f64> = record
            .runs
            .iter()
            .filter(|r| matches!(r.role, RunRole::Scaling { size: s, .. } if s == size))
            .map(|r| r.result.error().value())
            .collect();
        if errs.is_empty() {
            return Err(Error::Config(format!("no completed runs for size {size}")));
        }
        sizes.push(size);
        replicates.push(errs.len());
        mean_errors.push(errs.iter().sum::<f64>() / errs.len() as f64);
    }
    let curve = relative_increase_curve(&sizes, &mean_errors)?;
    Ok(ScalingSummary {
        sizes,
        replicates,
        mean_errors,
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDelta {
    pub class_id: String,
    pub shared_error: ErrorFraction,
    pub separate_error: ErrorFraction,
    /// Shared accuracy minus separate accuracy, in percentage points.
    pub delta_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedSummary {
    pub grouping: String,
    pub category_names: Vec<String>,
    pub separate_errors: Vec<ErrorFraction>,
    pub shared_errors: Vec<ErrorFraction>,
    pub separate_mean: f64,
    pub shared_mean: f64,
    pub leakage: LeakageReport,
    pub deltas: Vec<ClassDelta>,
    pub histogram: Histogram,
}

impl SharedSummary {
    pub fn mean_delta_pct(&self) -> f64 {
        self.deltas.iter().map(|d| d.delta_pct).sum::<f64>() / self.deltas.len().max(1) as f64
    }
}

fn mean(values: &[ErrorFraction]) -> f64 {
    values.iter().map(ErrorFraction::value).sum::<f64>() / values.len().max(1) as f64
}

pub fn shared_summary(record: &ExperimentRecord) -> Result<SharedSummary> {
    let shared = record
        .runs
        .iter()
        .find(|r| r.role == RunRole::Shared)
        .ok_or_else(|| Error::Config("record has no shared run".into()))?;
    let category_of = record
        .category_of
        .clone()
        .or_else(|| shared.result.category_of.clone())
        .ok_or(Error::MissingCategoryMap)?;
    let category_names = record
        .category_names
        .clone()
        .or_else(|| shared.result.category_names.clone())
        .ok_or(Error::MissingCategoryMap)?;
    let confusion = ConfusionMatrix {
        category_of: Some(category_of),
        ..shared.result.confusion.clone()
    };
    let shared_errors = confusion.category_errors()?;
    let leakage = confusion.leakage()?;

    let mut separate_errors = vec![None; category_names.len()];
    let mut separate_classes = Vec::new();
    for run in &record.runs {
        if let RunRole::Category { index, .. } = run.role {
            let slot = separate_errors.get_mut(index).ok_or(Error::OutOfRange {
                what: "category run",
                index,
                size: category_names.len(),
            })?;
            *slot = Some(run.result.error());
            separate_classes.extend(run.result.per_class());
        }
    }
    let separate_errors: Vec<ErrorFraction> = separate_errors
        .into_iter()
        .collect::<Option<_>>()
        .ok_or_else(|| Error::Config("record is missing a per-category run".into()))?;
    let deltas: Vec<ClassDelta> = align_by_class_id(&shared.result.per_class(), &separate_classes)?
        .into_iter()
        .map(|(class_id, s, p)| ClassDelta {
            delta_pct: 100.0 * (s.accuracy() - p.accuracy()),
            class_id,
            shared_error: s,
            separate_error: p,
        })
        .collect();
    let values: Vec<f64> = deltas.iter().map(|d| d.delta_pct).collect();
    let histogram = histogram(&values, record.config.shared.histogram_bin_pct)?;
    Ok(SharedSummary {
        grouping: record.config.shared.grouping.label().to_string(),
        separate_mean: mean(&separate_errors),
        shared_mean: mean(&shared_errors),
        category_names,
        separate_errors,
        shared_errors,
        leakage,
        deltas,
        histogram,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub arms: [LabelKind; 2],
    pub errors: [ErrorFraction; 2],
    /// `error(arm 1) - error(arm 0)` in percentage points.
    pub delta_pct: f64,
    /// Per class: `error(arm 1) - error(arm 0)` in percentage points.
    pub per_class: Vec<(String, ErrorFraction, ErrorFraction, f64)>,
}

pub fn label_summary(record: &ExperimentRecord) -> Result<LabelSummary> {
    let arms: Vec<_> = record
        .runs
        .iter()
        .filter(|r| matches!(r.role, RunRole::LabelArm { .. }))
        .collect();
    let [a, b] = arms.as_slice() else {
        return Err(Error::Config(format!("expected two label arms, found {}", arms.len())));
    };
    let per_class = align_by_class_id(&a.result.per_class(), &b.result.per_class())?
        .into_iter()
        .map(|(id, ea, eb)| {
            let d = 100.0 * (eb.value() - ea.value());
            (id, ea, eb, d)
        })
        .collect();
    let kind = |r: &super::studies::RunEntry| match r.role {
        RunRole::LabelArm { kind } => kind,
        _ => unreachable!(),
    };
    Ok(LabelSummary {
        arms: [kind(a), kind(b)],
        errors: [a.result.error(), b.result.error()],
        delta_pct: 100.0 * (b.result.error().value() - a.result.error().value()),
        per_class,
    })
}

fn pct(e: f64) -> String {
    format!("{:.4}", 100.0 * e)
}

fn label_name(kind: LabelKind) -> &'static str {
    match kind {
        LabelKind::ClassOnly => "Class Labels Only",
        LabelKind::ClassCategory => "Class/Category Labels",
    }
}

/// `(file name, contents)` of every table and figure file for a record.
pub fn render_tables(record: &ExperimentRecord) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    match record.kind {
        ExperimentKind::Scaling => {
            let s = scaling_summary(record)?;
            let mut t = String::from("# Table 2: top-1 error for datasets with different numbers of classes\n");
            t.push_str("classes,replicates,error_pct,relative_error\n");
            for i in 0..s.sizes.len() {
                t.push_str(&format!(
                    "{},{},{},{:.6}\n",
                    s.sizes[i],
                    s.replicates[i],
                    pct(s.mean_errors[i]),
                    s.curve.relative_errors[i]
                ));
            }
            out.push(("table2.csv".into(), t));
            out.push(("fig1.csv".into(), fig1_csv(&s.curve)));
        }
        ExperimentKind::SharedVsSeparate => {
            let s = shared_summary(record)?;
            let mut t3 = format!("# Table 3: average error per category ({} grouping)\n", s.grouping);
            t3.push_str("network,error_pct\n");
            t3.push_str(&format!("Network Per Category,{}\n", pct(s.separate_mean)));
            t3.push_str(&format!("Shared Network,{}\n", pct(s.shared_mean)));
            out.push(("table3.csv".into(), t3));

            let mut t4 = format!("# Table 4: leakage between categories in the shared network ({} grouping)\n", s.grouping);
            t4.push_str("measure,wrong,total,error_pct\n");
            for (name, e) in [
                ("Total error", s.leakage.total_error),
                ("Inter-category error (leakage)", s.leakage.inter_category_error),
                ("Within-category error", s.leakage.within_category_error),
            ] {
                t4.push_str(&format!("{name},{},{},{}\n", e.wrong, e.total, pct(e.value())));
            }
            out.push(("table4.csv".into(), t4));

            let rows: Vec<CategoryComparison> = (0..s.category_names.len())
                .map(|g| CategoryComparison {
                    grouping: s.grouping.clone(),
                    category: s.category_names[g].clone(),
                    separate_error: s.separate_errors[g].value(),
                    shared_error: s.shared_errors[g].value(),
                })
                .collect();
            out.push(("fig2.csv".into(), fig2_csv(&rows)));
            out.push(("fig3.csv".into(), fig3_csv(&s.histogram)));

            let mut d = String::from("# per-class accuracy difference, shared minus separate\n");
            d.push_str("class_id,shared_error_pct,separate_error_pct,delta_pct\n");
            for c in &s.deltas {
                d.push_str(&format!(
                    "{},{},{},{:.4}\n",
                    c.class_id,
                    pct(c.shared_error.value()),
                    pct(c.separate_error.value()),
                    c.delta_pct
                ));
            }
            out.push(("class_deltas.csv".into(), d));
        }
        ExperimentKind::LabelCompare => {
            let s = label_summary(record)?;
            let mut t = String::from("# Table 5: class/category labels vs class labels only\n");
            t.push_str("labels,error_pct\n");
            for k in 0..2 {
                t.push_str(&format!("{},{}\n", label_name(s.arms[k]), pct(s.errors[k].value())));
            }
            out.push(("table5.csv".into(), t));
            let mut d = String::from("# per-class error difference, second arm minus first arm\n");
            d.push_str("class_id,arm0_error_pct,arm1_error_pct,delta_pct\n");
            for (id, a, b, delta) in &s.per_class {
                d.push_str(&format!("{id},{},{},{delta:.4}\n", pct(a.value()), pct(b.value())));
            }
            out.push(("class_deltas.csv".into(), d));
        }
    }
    Ok(out)
}
