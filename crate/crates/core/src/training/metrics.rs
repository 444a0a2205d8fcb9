use std::fmt::Write as _;

use super::{stack, Example};
use crate::error::{ensure, Result};
use crate::models::{argmax, Model};
use crate::tensor::Real;

/// Counts indexed `[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        self.counts[truth].iter().sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// `None` for classes absent from the truth labels.
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.classes())
            .map(|c| {
                let n = self.row_total(c);
                (n > 0).then(|| self.counts[c][c] as f64 / n as f64)
            })
            .collect()
    }

    /// One CSV row per true class, one column per predicted class.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut s = String::from("truth");
        for n in names {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
        for (row, name) in self.counts.iter().zip(names) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_class: Vec<Option<f64>>,
    pub total: f64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Evaluation> {
    ensure!(truth.len() == predicted.len(), "truth and predictions differ in length");
    ensure!(!truth.is_empty(), "nothing to evaluate");
    let mut confusion = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        ensure!(t < classes && p < classes, "class index out of range");
        confusion.add(t, p);
    }
    Ok(Evaluation {
        per_class: confusion.per_class_accuracy(),
        total: confusion.accuracy(),
        confusion,
    })
}

/// Eval-mode argmax predictions, in batches of 64.
pub fn predict_labels<T: Real>(model: &Model<T>, examples: &[Example<T>]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(examples.len());
    let refs: Vec<&Example<T>> = examples.iter().collect();
    for chunk in refs.chunks(64) {
        let probs = model.predict(&stack(chunk)?)?;
        let k = probs.shape()[1];
        out.extend(probs.data().chunks(k).map(|row| {
            let row: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            argmax(&row)
        }));
    }
    Ok(out)
}

pub fn evaluate<T: Real>(model: &Model<T>, examples: &[Example<T>]) -> Result<Evaluation> {
    let predicted = predict_labels(model, examples)?;
    let truth: Vec<usize> = examples.iter().map(|e| e.label).collect();
    evaluate_predictions(&truth, &predicted, model.num_classes())
}

/// Column shift equivalent to a yaw rotation of `degrees`, to the nearest column.
pub fn shift_for_angle(degrees: f64, width: usize) -> i64 {
    (degrees / 360.0 * width as f64).round() as i64
}

/// Accuracy on circularly shifted inputs at `0, step, 2·step, …` up to 360°.
pub fn rotation_sweep<T: Real>(model: &Model<T>, examples: &[Example<T>], step_degrees: f64) -> Result<Vec<(f64, f64)>> {
    ensure!(step_degrees > 0.0 && step_degrees <= 360.0, "step must be in (0, 360]");
    ensure!(!examples.is_empty(), "nothing to evaluate");
    let width = *examples[0].input.shape().last().expect("rank 3 input");
    let steps = (360.0 / step_degrees + 1e-9).floor() as usize;
    (0..=steps)
        .map(|i| {
            let theta = i as f64 * step_degrees;
            let s = shift_for_angle(theta, width);
            let shifted: Vec<Example<T>> = examples
                .iter()
                .map(|e| Example {
                    input: e.input.roll_columns(s),
                    label: e.label,
                })
                .collect();
            Ok((theta, evaluate(model, &shifted)?.total))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_constant_predictors() {
        let truth: Vec<usize> = (0..12).map(|i| i % 6).collect();
        let e = evaluate_predictions(&truth, &truth, 6).unwrap();
        assert_eq!(e.total, 1.0);
        assert!(e.per_class.iter().all(|a| *a == Some(1.0)));
        let e = evaluate_predictions(&truth, &[0; 12], 6).unwrap();
        assert_eq!(e.per_class[0], Some(1.0));
        assert!(e.per_class[1..].iter().all(|a| *a == Some(0.0)));
        assert_eq!(e.confusion.counts[3][0], 2);
    }

    #[test]
    fn absent_class_reported_as_none() {
        let e = evaluate_predictions(&[0, 0, 1], &[0, 1, 1], 3).unwrap();
        assert_eq!(e.per_class, vec![Some(0.5), Some(1.0), None]);
        assert_eq!(e.confusion.trace() as f64 / e.confusion.total() as f64, e.total);
    }

    #[test]
    fn csv_layout() {
        let mut m = ConfusionMatrix::new(2);
        m.add(0, 1);
        m.add(1, 1);
        assert_eq!(m.to_csv(&["a", "b"]), "truth,a,b\na,0,1\nb,0,1\n");
    }

    #[test]
    fn angle_to_shift() {
        assert_eq!(shift_for_angle(30.0, 384), 32);
        assert_eq!(shift_for_angle(360.0, 384), 384);
        assert_eq!(shift_for_angle(1.0, 384), 1);
    }
}
