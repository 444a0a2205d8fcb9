use std::sync::Once;

use super::Pass;
use crate::error::{ensure, Result};
use crate::tensor::{Param, Real, Tape, Tensor, Var};

/// Batch statistics observed by one batch-norm layer in a training pass.
#[derive(Clone, Debug)]
pub struct StatUpdate {
    pub layer: String,
    pub mean: Vec<f64>,
    /// Unbiased batch variance.
    pub var: Vec<f64>,
}

/// `(channels, elements per channel per sample)` for `[N, C, H, W]` or `[N, F]`.
fn channel_layout<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h * w)),
        [n, f] => Ok((n, f, 1)),
        ref s => Err(crate::Error::Contract(format!(
            "batch norm expects [N, C, H, W] or [N, F], got {s:?}"
        ))),
    }
}

/// Visit `(flat index, channel)` pairs in memory order.
fn per_channel(n: usize, c: usize, inner: usize, mut f: impl FnMut(usize, usize)) {
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * inner;
            for i in base..base + inner {
                f(i, ch);
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// Training-mode batch norm. Returns the output plus the per-channel batch
    /// mean and biased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (n, c, inner) = channel_layout(self.value(x))?;
        ensure!(
            self.shape(gamma) == [c] && self.shape(beta) == [c],
            "batch norm affine params must be [{c}]"
        );
        let m = n * inner;
        ensure!(m >= 2, "training batch norm needs at least 2 values per channel");
        let xs = self.value(x).data();
        let mut mean = vec![0.0f64; c];
        per_channel(n, c, inner, |i, ch| mean[ch] += xs[i].as_f64());
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0f64; c];
        per_channel(n, c, inner, |i, ch| {
            let d = xs[i].as_f64() - mean[ch];
            var[ch] += d * d;
        });
        var.iter_mut().for_each(|v| *v /= m as f64);

        let inv_std: Vec<T> = var.iter().map(|v| T::of(1.0 / (v + eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&v| T::of(v)).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xs.len()];
        let mut out = vec![T::zero(); xs.len()];
        per_channel(n, c, inner, |i, ch| {
            xhat[i] = (xs[i] - mean_t[ch]) * inv_std[ch];
            out[i] = g[ch] * xhat[i] + b[ch];
        });
        let shape = self.shape(x).to_vec();
        let out = Tensor::new(shape.clone(), out)?;

        let y = self.push_op(
            out,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let gy = ctx.grad.data();
                let gamma = ctx.inputs[1].data();
                let mut dbeta = vec![T::zero(); c];
                let mut dgamma = vec![T::zero(); c];
                per_channel(n, c, inner, |i, ch| {
                    dbeta[ch] += gy[i];
                    dgamma[ch] += gy[i] * xhat[i];
                });
                let dx = ctx.needs[0].then(|| {
                    let mf = T::of(m as f64);
                    let mut dx = vec![T::zero(); gy.len()];
                    per_channel(n, c, inner, |i, ch| {
                        dx[i] = gamma[ch] * inv_std[ch] / mf
                            * (mf * gy[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
                    });
                    Tensor::new(shape.clone(), dx).expect("shape")
                });
                vec![
                    dx,
                    Some(Tensor::new(vec![c], dgamma).expect("shape")),
                    Some(Tensor::new(vec![c], dbeta).expect("shape")),
                ]
            }),
        );
        Ok((y, mean, var))
    }

    /// Inference-mode batch norm with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        eps: f64,
    ) -> Result<Var> {
        let (n, c, inner) = channel_layout(self.value(x))?;
        ensure!(
            self.shape(gamma) == [c]
                && self.shape(beta) == [c]
                && running_mean.shape() == [c]
                && running_var.shape() == [c],
            "batch norm params and statistics must be [{c}]"
        );
        let rm: Vec<T> = running_mean.data().to_vec();
        let inv_std: Vec<T> = running_var
            .data()
            .iter()
            .map(|v| T::of(1.0 / (v.as_f64() + eps).sqrt()))
            .collect();
        let xs = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = vec![T::zero(); xs.len()];
        per_channel(n, c, inner, |i, ch| {
            out[i] = g[ch] * (xs[i] - rm[ch]) * inv_std[ch] + b[ch];
        });
        let shape = self.shape(x).to_vec();
        let out = Tensor::new(shape.clone(), out)?;
        Ok(self.push_op(
            out,
            &[x, gamma, beta],
            Box::new(move |ctx| {
                let (xs, gy, gamma) = (ctx.inputs[0].data(), ctx.grad.data(), ctx.inputs[1].data());
                let mut dx = vec![T::zero(); gy.len()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                per_channel(n, c, inner, |i, ch| {
                    dx[i] = gy[i] * gamma[ch] * inv_std[ch];
                    dgamma[ch] += gy[i] * (xs[i] - rm[ch]) * inv_std[ch];
                    dbeta[ch] += gy[i];
                });
                vec![
                    Some(Tensor::new(shape.clone(), dx).expect("shape")),
                    Some(Tensor::new(vec![c], dgamma).expect("shape")),
                    Some(Tensor::new(vec![c], dbeta).expect("shape")),
                ]
            }),
        ))
    }
}

static UNTRACKED_EVAL: Once = Once::new();

/// Batch normalization over channels (conv maps) or features (fc outputs).
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub name: String,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    /// Number of committed training batches.
    pub updates: u64,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm {
            name: name.to_string(),
            gamma: Param::new(format!("{name}.gamma"), Tensor::full(&[channels], T::one())),
            beta: Param::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            eps: 1e-5,
            momentum: 0.1,
            updates: 0,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, pass: &mut Pass) -> Result<Var> {
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        if pass.is_train() {
            let (y, mean, var) = tape.batch_norm_train(x, g, b, self.eps)?;
            let m = tape.value(x).numel() / mean.len();
            let unbiased = m as f64 / (m as f64 - 1.0);
            pass.stats.push(StatUpdate {
                layer: self.name.clone(),
                mean,
                var: var.into_iter().map(|v| v * unbiased).collect(),
            });
            Ok(y)
        } else {
            if self.updates == 0 {
                UNTRACKED_EVAL.call_once(|| {
                    log::warn!(
                        "batch norm {} evaluated before any running-statistics update; using (0, 1)",
                        self.name
                    );
                });
            }
            tape.batch_norm_eval(x, g, b, &self.running_mean, &self.running_var, self.eps)
        }
    }

    /// Fold one batch's statistics into the running estimates.
    pub fn commit(&mut self, update: &StatUpdate) {
        let m = self.momentum;
        for (r, &v) in self.running_mean.data_mut().iter_mut().zip(&update.mean) {
            *r = T::of((1.0 - m) * r.as_f64() + m * v);
        }
        for (r, &v) in self.running_var.data_mut().iter_mut().zip(&update.var) {
            *r = T::of((1.0 - m) * r.as_f64() + m * v);
        }
        self.updates += 1;
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, random_input};

    fn forward(bn: &BatchNorm<f64>, x: Tensor<f64>, pass: &mut Pass) -> Tensor<f64> {
        let mut tape = Tape::inference();
        let v = tape.constant(x);
        let y = bn.forward(&mut tape, v, pass).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn constant_channel_gives_beta() {
        let mut bn = BatchNorm::<f64>::new("bn", 2);
        bn.beta.value = Tensor::new(vec![2], vec![0.25, -1.0]).unwrap();
        let x = Tensor::from_fn(&[3, 2, 2, 2], |i| if (i / 4) % 2 == 0 { 7.0 } else { -3.0 });
        let y = forward(&bn, x, &mut Pass::train(0));
        for (i, v) in y.data().iter().enumerate() {
            let want = if (i / 4) % 2 == 0 { 0.25 } else { -1.0 };
            assert!((v - want).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_standardizes() {
        let bn = BatchNorm::<f64>::new("bn", 3);
        let x = random_input(&[8, 3], 4).map(|v| 5.0 * v + 2.0);
        let y = forward(&bn, x, &mut Pass::train(0));
        for ch in 0..3 {
            let col: Vec<f64> = (0..8).map(|r| y.data()[r * 3 + ch]).collect();
            let mean = col.iter().sum::<f64>() / 8.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let bn = BatchNorm::<f64>::new("bn", 2);
        let x = random_input(&[2, 2, 3, 3], 5);
        let y = forward(&bn, x.clone(), &mut Pass::eval());
        assert!(y.max_abs_diff(&x) < 1e-5 * 1.0);
    }

    #[test]
    fn running_stats_move_toward_batch() {
        let mut bn = BatchNorm::<f64>::new("bn", 1);
        let x = Tensor::new(vec![4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut pass = Pass::train(0);
        forward(&bn, x, &mut pass);
        let upd = pass.take_stats().pop().unwrap();
        bn.commit(&upd);
        assert!((bn.running_mean.data()[0] - 0.25).abs() < 1e-12);
        // unbiased variance of 1..4 is 5/3
        assert!((bn.running_var.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
        assert_eq!(bn.updates, 1);
    }

    #[test]
    fn single_value_per_channel_rejected() {
        let bn = BatchNorm::<f64>::new("bn", 2);
        let mut tape = Tape::inference();
        let v = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(bn.forward(&mut tape, v, &mut Pass::train(0)).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let gamma = random_input(&[3], seed + 50);
            let beta = random_input(&[3], seed + 60);
            let x = random_input(&[2, 3, 2, 3], seed);
            let err = grad_check(
                |t, x| {
                    let g = t.constant(gamma.clone());
                    let b = t.constant(beta.clone());
                    Ok(t.batch_norm_train(x, g, b, 1e-5)?.0)
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "seed {seed}: {err}");
            let err = grad_check(
                |t, g| {
                    let xv = t.constant(x.clone());
                    let b = t.constant(beta.clone());
                    Ok(t.batch_norm_train(xv, g, b, 1e-5)?.0)
                },
                &gamma,
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-4, "gamma seed {seed}: {err}");
        }
    }
}
