//! Element-wise, reduction and reshaping ops with their adjoint rules.

use super::{Real, Tape, Tensor, Var};
use crate::error::{ensure, Result};

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    Tensor::from_fn(a.shape(), |i| f(a.data()[i], b.data()[i]))
}

impl<T: Real> Tape<T> {
    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        ensure!(
            self.shape(a) == self.shape(b),
            "shape mismatch: {:?} vs {:?}",
            self.shape(a),
            self.shape(b)
        );
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|ctx| vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]),
        ))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(|ctx| {
                let (a, b) = (ctx.inputs[0], ctx.inputs[1]);
                vec![
                    ctx.needs[0].then(|| zip_map(ctx.grad, b, |g, y| g * y)),
                    ctx.needs[1].then(|| zip_map(ctx.grad, a, |g, x| g * x)),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let k = T::of(k);
        let out = self.value(a).map(|x| x * k);
        self.push_op(out, &[a], Box::new(move |ctx| vec![Some(ctx.grad.map(|g| g * k))]))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let total: T = self.value(a).data().iter().copied().sum();
        self.push_op(
            Tensor::scalar(total),
            &[a],
            Box::new(|ctx| vec![Some(Tensor::full(ctx.inputs[0].shape(), ctx.grad.data()[0]))]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        ensure!(
            self.value(a).data().iter().all(|&x| x > T::zero()),
            "log of non-positive value"
        );
        let out = self.value(a).map(|x| x.ln());
        Ok(self.push_op(
            out,
            &[a],
            Box::new(|ctx| vec![Some(zip_map(ctx.grad, ctx.inputs[0], |g, x| g / x))]),
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(T::zero()));
        self.push_op(
            out,
            &[a],
            Box::new(|ctx| {
                vec![Some(zip_map(ctx.grad, ctx.inputs[0], |g, x| {
                    if x > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                }))]
            }),
        )
    }

    /// Multiply by a constant mask of the same shape (e.g. a dropout mask).
    pub fn mul_mask(&mut self, a: Var, mask: Tensor<T>) -> Result<Var> {
        ensure!(
            mask.shape() == self.shape(a),
            "mask shape {:?} does not match input {:?}",
            mask.shape(),
            self.shape(a)
        );
        let out = zip_map(self.value(a), &mask, |x, m| x * m);
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |ctx| vec![Some(zip_map(ctx.grad, &mask, |g, m| g * m))]),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push_op(
            out,
            &[a],
            Box::new(|ctx| {
                vec![Some(
                    ctx.grad
                        .clone()
                        .reshape(ctx.inputs[0].shape())
                        .expect("same element count"),
                )]
            }),
        ))
    }

    /// Flatten `[N, ...]` to `[N, F]`.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a);
        let n = shape[0];
        let f = shape[1..].iter().product::<usize>();
        self.reshape(a, &[n, f])
    }

    /// Concatenate `[N, F_i]` tensors along the feature axis.
    pub fn concat_features(&mut self, parts: &[Var]) -> Result<Var> {
        ensure!(!parts.is_empty(), "concat needs at least one input");
        let n = self.value(parts[0]).dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pn, pf) = self.value(p).dims2()?;
            ensure!(pn == n, "concat batch mismatch: {pn} vs {n}");
            widths.push(pf);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for row in 0..n {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[row * w..(row + 1) * w]);
            }
        }
        let out = Tensor::new(vec![n, total], out)?;
        Ok(self.push_op(
            out,
            parts,
            Box::new(move |ctx| {
                let mut offset = 0;
                widths
                    .iter()
                    .enumerate()
                    .map(|(k, &w)| {
                        let start = offset;
                        offset += w;
                        ctx.needs[k].then(|| {
                            Tensor::from_fn(&[n, w], |i| {
                                ctx.grad.data()[(i / w) * total + start + i % w]
                            })
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Mean over the spatial axes of `[N, C, H, W]`, giving `[N, C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(a).dims4()?;
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let x = self.value(a).data();
        let out = Tensor::from_fn(&[n, c], |i| {
            x[i * hw..(i + 1) * hw].iter().copied().sum::<T>() * inv
        });
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |ctx| {
                vec![Some(Tensor::from_fn(ctx.inputs[0].shape(), |i| {
                    ctx.grad.data()[i / hw] * inv
                }))]
            }),
        ))
    }

    /// Row-wise softmax of a `[N, C]` tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, c) = self.value(a).dims2()?;
        let out = softmax_rows(self.value(a), n, c);
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |ctx| {
                let p = ctx.output.data();
                let g = ctx.grad.data();
                let mut dx = vec![T::zero(); n * c];
                for r in 0..n {
                    let row = r * c..(r + 1) * c;
                    let dot: T = p[row.clone()].iter().zip(&g[row.clone()]).map(|(&a, &b)| a * b).sum();
                    for i in row {
                        dx[i] = p[i] * (g[i] - dot);
                    }
                }
                vec![Some(Tensor::new(vec![n, c], dx).expect("shape"))]
            }),
        ))
    }

    /// Gather one column per row: `out[r] = a[r, index[r]]`.
    pub fn pick(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (n, c) = self.value(a).dims2()?;
        ensure!(index.len() == n, "pick needs {n} indices, got {}", index.len());
        ensure!(index.iter().all(|&k| k < c), "pick index out of range");
        let x = self.value(a).data();
        let out = Tensor::from_fn(&[n], |r| x[r * c + index[r]]);
        let index = index.to_vec();
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |ctx| {
                let mut dx = Tensor::zeros(&[n, c]);
                for (r, &k) in index.iter().enumerate() {
                    dx.data_mut()[r * c + k] = ctx.grad.data()[r];
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Column `k` of a `[N, C]` tensor as `[N, 1]`.
    pub fn column(&mut self, a: Var, k: usize) -> Result<Var> {
        let (n, c) = self.value(a).dims2()?;
        ensure!(k < c, "column {k} out of range for width {c}");
        let out = self.pick(a, &vec![k; n])?;
        self.reshape(out, &[n, 1])
    }

    /// Scale each row of `a: [N, C]` by `s: [N, 1]`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (n, c) = self.value(a).dims2()?;
        ensure!(
            self.shape(s) == [n, 1],
            "row scale must be [{n}, 1], got {:?}",
            self.shape(s)
        );
        let (x, k) = (self.value(a), self.value(s));
        let out = Tensor::from_fn(&[n, c], |i| x.data()[i] * k.data()[i / c]);
        Ok(self.push_op(
            out,
            &[a, s],
            Box::new(move |ctx| {
                let (x, k, g) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
                let dx = ctx.needs[0]
                    .then(|| Tensor::from_fn(&[n, c], |i| g.data()[i] * k.data()[i / c]));
                let dk = ctx.needs[1].then(|| {
                    Tensor::from_fn(&[n, 1], |r| {
                        (0..c).map(|j| g.data()[r * c + j] * x.data()[r * c + j]).sum()
                    })
                });
                vec![dx, dk]
            }),
        ))
    }
}

/// Numerically stable row softmax.
pub(crate) fn softmax_rows<T: Real>(x: &Tensor<T>, n: usize, c: usize) -> Tensor<T> {
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(c).take(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    Tensor::new(vec![n, c], out).expect("shape preserved")
}
