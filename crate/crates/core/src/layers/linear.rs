use rand_chacha::ChaCha8Rng;

use super::he_normal;
use crate::error::{ensure, Result};
use crate::tensor::{Param, Real, Tape, Tensor, Var};

impl<T: Real> Tape<T> {
    /// Affine map `y = x·Wᵀ + b` with `x: [N, F_in]`, `W: [F_out, F_in]`,
    /// `b: [F_out]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Var) -> Result<Var> {
        let (n, fin) = self.value(x).dims2()?;
        let (fout, wfin) = self.value(weight).dims2()?;
        ensure!(
            wfin == fin,
            "linear layer expects {wfin} input features, got {fin}"
        );
        ensure!(
            self.shape(bias) == [fout],
            "linear bias must be [{fout}], got {:?}",
            self.shape(bias)
        );
        let b = self.value(bias).data();
        let mut out: Vec<T> = (0..n * fout).map(|i| b[i % fout]).collect();
        T::gemm(
            n,
            fin,
            fout,
            self.value(x).data(),
            false,
            self.value(weight).data(),
            true,
            &mut out,
            true,
        );
        let out = Tensor::new(vec![n, fout], out)?;
        Ok(self.push_op(
            out,
            &[x, weight, bias],
            Box::new(move |ctx| {
                let (xs, ws, gy) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                let dx = ctx.needs[0].then(|| {
                    let mut dx = vec![T::zero(); n * fin];
                    T::gemm(n, fout, fin, gy, false, ws, false, &mut dx, false);
                    Tensor::new(vec![n, fin], dx).expect("shape")
                });
                let dw = ctx.needs[1].then(|| {
                    let mut dw = vec![T::zero(); fout * fin];
                    T::gemm(fout, n, fin, gy, true, xs, false, &mut dw, false);
                    Tensor::new(vec![fout, fin], dw).expect("shape")
                });
                let db = ctx.needs[2].then(|| {
                    let mut db = vec![T::zero(); fout];
                    for row in gy.chunks(fout) {
                        for (d, &g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    Tensor::new(vec![fout], db).expect("shape")
                });
                vec![dx, dw, db]
            }),
        ))
    }
}

/// Fully-connected layer.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(name: &str, fin: usize, fout: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::new(format!("{name}.weight"), he_normal(&[fout, fin], fin, rng)),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[fout])),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.linear(x, w, b)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, random_input};

    fn apply(x: Tensor<f64>, w: Tensor<f64>, b: Tensor<f64>) -> Result<Tensor<f64>> {
        let mut tape = Tape::inference();
        let (x, w, b) = (tape.constant(x), tape.constant(w), tape.constant(b));
        let y = tape.linear(x, w, b)?;
        Ok(tape.value(y).clone())
    }

    #[test]
    fn identity_weight() {
        let x = random_input(&[3, 4], 1);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(apply(x.clone(), eye, Tensor::zeros(&[4])).unwrap(), x);
    }

    #[test]
    fn small_example() {
        let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let b = Tensor::new(vec![1], vec![3.0]).unwrap();
        assert_eq!(apply(x, w, b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let x = Tensor::zeros(&[1, 3]);
        assert!(apply(x, Tensor::zeros(&[2, 2]), Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let x = random_input(&[3, 5], seed);
            let w = random_input(&[4, 5], seed + 1000);
            let b = random_input(&[4], seed + 2000);
            let ex = grad_check(
                |t, x| {
                    let (w, b) = (t.constant(w.clone()), t.constant(b.clone()));
                    t.linear(x, w, b)
                },
                &x,
                1e-5,
            )
            .unwrap();
            let ew = grad_check(
                |t, w| {
                    let (x, b) = (t.constant(x.clone()), t.constant(b.clone()));
                    t.linear(x, w, b)
                },
                &w,
                1e-5,
            )
            .unwrap();
            let eb = grad_check(
                |t, b| {
                    let (x, w) = (t.constant(x.clone()), t.constant(w.clone()));
                    t.linear(x, w, b)
                },
                &b,
                1e-5,
            )
            .unwrap();
            assert!(ex.max(ew).max(eb) <= 1e-4, "seed {seed}: {ex} {ew} {eb}");
        }
    }
}
