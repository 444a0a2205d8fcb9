use crate::error::{ensure, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// One-hot `[N, C]` targets from class indices.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    ensure!(
        labels.iter().all(|&l| l < classes),
        "label out of range for {classes} classes"
    );
    Tensor::new(
        vec![labels.len(), classes],
        (0..labels.len() * classes)
            .map(|i| if labels[i / classes] == i % classes { T::one() } else { T::zero() })
            .collect(),
    )
}

impl<T: Real> Tape<T> {
    /// Mean cross-entropy of row-softmaxed `logits` against one-hot `target`.
    /// Returns the scalar loss and the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: &Tensor<T>) -> Result<(Var, Tensor<T>)> {
        let (n, c) = self.value(logits).dims2()?;
        ensure!(
            target.shape() == [n, c],
            "target shape {:?} does not match logits [{n}, {c}]",
            target.shape()
        );
        for row in target.data().chunks(c) {
            let ones = row.iter().filter(|&&v| v == T::one()).count();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            ensure!(ones == 1 && zeros == c - 1, "target rows must be one-hot");
        }
        let x = self.value(logits).data();
        let mut probs = vec![T::zero(); n * c];
        let mut loss = 0.0f64;
        for r in 0..n {
            let row = &x[r * c..(r + 1) * c];
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: f64 = row.iter().map(|&v| (v - m).as_f64().exp()).sum();
            let log_z = m.as_f64() + z.ln();
            for j in 0..c {
                probs[r * c + j] = T::of(((row[j]).as_f64() - log_z).exp());
                if target.data()[r * c + j] == T::one() {
                    loss += log_z - row[j].as_f64();
                }
            }
        }
        let probs = Tensor::new(vec![n, c], probs)?;
        let saved = probs.clone();
        let target = target.clone();
        let inv_n = T::of(1.0 / n as f64);
        let out = self.push_op(
            Tensor::scalar(T::of(loss / n as f64)),
            &[logits],
            Box::new(move |ctx| {
                let g = ctx.grad.data()[0] * inv_n;
                vec![Some(Tensor::from_fn(&[n, c], |i| {
                    (saved.data()[i] - target.data()[i]) * g
                }))]
            }),
        );
        Ok((out, probs))
    }
}
