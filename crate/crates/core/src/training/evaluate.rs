use serde::{Deserialize, Serialize};

use crate::analytics::{build_confusion, ConfusionMatrix, ErrorFraction};
use crate::augment::{multi_crop_views, to_batch, Image, Normalization, ViewSpec};
use crate::error::{Error, Result};
use crate::labeling::{softmax, DecodeRule, LabelScheme};
use crate::model::{Mode, NetworkParams};
use crate::tensor::{Matrix, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub views: ViewSpec,
    pub decode: DecodeRule,
    /// Network inputs per forward pass (views, not images).
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            views: ViewSpec::default(),
            decode: DecodeRule::ClassSlots,
            batch_size: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub truth: Vec<usize>,
    pub predictions: Vec<usize>,
    /// View-averaged softmax, one row per image.
    pub probabilities: Matrix<f64>,
    pub confusion: ConfusionMatrix,
}

impl Evaluation {
    pub fn error(&self) -> ErrorFraction {
        self.confusion.error()
    }
}

/// Mean of the softmax over each consecutive group of `views` rows.
pub fn average_view_probabilities<T: Real>(logits: &Matrix<T>, views: usize) -> Result<Matrix<f64>> {
    if views == 0 || !logits.rows.is_multiple_of(views) {
        return Err(Error::Shape(format!("{} rows do not split into groups of {views}", logits.rows)));
    }
    let rows = logits.rows / views;
    let mut data = vec![0.0; rows * logits.cols];
    for (r, row) in logits.rows().enumerate() {
        let out = &mut data[(r / views) * logits.cols..(r / views + 1) * logits.cols];
        for (o, p) in out.iter_mut().zip(softmax(row)) {
            *o += p.to_f64().unwrap() / views as f64;
        }
    }
    Ok(Matrix {
        rows,
        cols: logits.cols,
        data,
    })
}

/// Eval-mode predictions for `count` images produced by `load`, averaging
/// the softmax over the views of `config.views`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_with<T: Real>(
    net: &NetworkParams<T>,
    count: usize,
    load: &mut dyn FnMut(usize) -> Result<(Image, usize)>,
    scheme: &LabelScheme,
    category_of: Option<&[usize]>,
    config: &EvalConfig,
    normalization: &Normalization,
) -> Result<Evaluation> {
    let views = config.views.count();
    if views == 0 {
        return Err(Error::Config("evaluation needs at least one view".into()));
    }
    let size = net.spec.input_size as u32;
    let per_batch = (config.batch_size / views).max(1);
    let mut truth = Vec::with_capacity(count);
    let mut predictions = Vec::with_capacity(count);
    let mut probs = Vec::with_capacity(count * scheme.width());
    let mut start = 0;
    while start < count {
        let end = (start + per_batch).min(count);
        let mut inputs = Vec::with_capacity((end - start) * views);
        for i in start..end {
            let (img, class) = load(i)?;
            truth.push(class);
            inputs.extend(multi_crop_views(&img, &config.views, size));
        }
        let logits = net.forward(&to_batch::<T>(&inputs, normalization)?, Mode::Eval)?;
        let avg = average_view_probabilities(&logits, views)?;
        for row in avg.rows() {
            predictions.push(scheme.decode_class_with(row, config.decode, category_of)?);
        }
        probs.extend_from_slice(&avg.data);
        start = end;
    }
    let confusion = build_confusion(&truth, &predictions, scheme.num_classes, category_of)?;
    Ok(Evaluation {
        truth,
        predictions,
        probabilities: Matrix {
            rows: count,
            cols: scheme.width(),
            data: probs,
        },
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn view_average_matches_double_loop() {
        let (n, v, k) = (3, 4, 5);
        let logits = Matrix {
            rows: n * v,
            cols: k,
            data: (0..n * v * k).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.3).collect(),
        };
        let got = average_view_probabilities(&logits, v).unwrap();
        for img in 0..n {
            for c in 0..k {
                let mut sum = 0.0;
                for view in 0..v {
                    let row = &logits.data[(img * v + view) * k..(img * v + view + 1) * k];
                    let z: f64 = row.iter().map(|x| x.exp()).sum();
                    sum += row[c].exp() / z;
                }
                assert!((got.data[img * k + c] - sum / v as f64).abs() < 1e-12);
            }
        }
        assert!(average_view_probabilities(&logits, 5).is_err());
    }
}
