use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::he_normal;
use crate::error::{ensure, Result};
use crate::tensor::{Param, Real, Tape, Tensor, Var};

/// How the 1-pixel border of a 3×3 convolution is filled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    /// Zeros on all four sides.
    Zero,
    /// Columns wrap around (azimuth is periodic); rows are zero padded.
    CircularHorizontal,
}

const K: usize = 3;
/// Samples per partial weight-gradient sum; fixes the reduction order.
const GRAD_GROUP: usize = 8;

/// Unfold one `[C, H, W]` sample into a `[C·9, H·W]` patch matrix.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, pad: Padding, col: &mut [T]) {
    let hw = h * w;
    let wrap = pad == Padding::CircularHorizontal;
    for ci in 0..c {
        for ki in 0..K {
            for kj in 0..K {
                let base = (ci * K * K + ki * K + kj) * hw;
                for i in 0..h {
                    let dst = &mut col[base + i * w..base + (i + 1) * w];
                    let si = i as isize + ki as isize - 1;
                    if si < 0 || si >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[ci * hw + si as usize * w..ci * hw + (si as usize + 1) * w];
                    match kj {
                        0 => {
                            // dst[j] = src[j - 1]
                            dst[1..].copy_from_slice(&src[..w - 1]);
                            dst[0] = if wrap { src[w - 1] } else { T::zero() };
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            // dst[j] = src[j + 1]
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = if wrap { src[0] } else { T::zero() };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add patch gradients back to `[C, H, W]`.
fn col2im<T: Real>(col: &[T], c: usize, h: usize, w: usize, pad: Padding, dx: &mut [T]) {
    let hw = h * w;
    let wrap = pad == Padding::CircularHorizontal;
    for ci in 0..c {
        for ki in 0..K {
            for kj in 0..K {
                let base = (ci * K * K + ki * K + kj) * hw;
                for i in 0..h {
                    let si = i as isize + ki as isize - 1;
                    if si < 0 || si >= h as isize {
                        continue;
                    }
                    let src = &col[base + i * w..base + (i + 1) * w];
                    let off = ci * hw + si as usize * w;
                    let dst = &mut dx[off..off + w];
                    match kj {
                        0 => {
                            for j in 1..w {
                                dst[j - 1] += src[j];
                            }
                            if wrap {
                                dst[w - 1] += src[0];
                            }
                        }
                        1 => {
                            for j in 0..w {
                                dst[j] += src[j];
                            }
                        }
                        _ => {
                            for j in 0..w - 1 {
                                dst[j + 1] += src[j];
                            }
                            if wrap {
                                dst[0] += src[w - 1];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Real> Tape<T> {
    /// 3×3, stride-1 cross-correlation with 1-pixel padding, so the output
    /// keeps the input's spatial size. `x: [N, C, H, W]`,
    /// `weight: [C_out, C, 3, 3]`, `bias: [C_out]`.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Var, pad: Padding) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let ws = self.shape(weight).to_vec();
        ensure!(
            ws.len() == 4 && ws[2] == K && ws[3] == K,
            "conv kernel must be [C_out, C_in, 3, 3], got {ws:?}"
        );
        ensure!(
            ws[1] == c,
            "conv expects {} input channels, got {c}",
            ws[1]
        );
        let cout = ws[0];
        ensure!(
            self.shape(bias) == [cout],
            "conv bias must be [{cout}], got {:?}",
            self.shape(bias)
        );

        let hw = h * w;
        let ck = c * K * K;
        let xs = self.value(x).data();
        let wt = self.value(weight).data();
        let bs = self.value(bias).data();
        let mut out = vec![T::zero(); n * cout * hw];
        out.par_chunks_mut(cout * hw)
            .zip(xs.par_chunks(c * hw))
            .for_each(|(y, xn)| {
                let mut col = vec![T::zero(); ck * hw];
                im2col(xn, c, h, w, pad, &mut col);
                for (co, row) in y.chunks_mut(hw).enumerate() {
                    row.fill(bs[co]);
                }
                T::gemm(cout, ck, hw, wt, false, &col, false, y, true);
            });
        let out = Tensor::new(vec![n, cout, h, w], out)?;

        Ok(self.push_op(
            out,
            &[x, weight, bias],
            Box::new(move |ctx| {
                let (xs, wt, gy) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
                let need_x = ctx.needs[0];
                let need_w = ctx.needs[1];

                let dx = need_x.then(|| {
                    let mut dx = vec![T::zero(); n * c * hw];
                    dx.par_chunks_mut(c * hw)
                        .zip(gy.par_chunks(cout * hw))
                        .for_each(|(dxn, gyn)| {
                            let mut dcol = vec![T::zero(); ck * hw];
                            T::gemm(ck, cout, hw, wt, true, gyn, false, &mut dcol, false);
                            col2im(&dcol, c, h, w, pad, dxn);
                        });
                    Tensor::new(vec![n, c, h, w], dx).expect("shape")
                });

                let dw = need_w.then(|| {
                    let partials: Vec<Vec<T>> = (0..n)
                        .collect::<Vec<_>>()
                        .par_chunks(GRAD_GROUP)
                        .map(|group| {
                            let mut acc = vec![T::zero(); cout * ck];
                            let mut col = vec![T::zero(); ck * hw];
                            for &s in group {
                                im2col(&xs[s * c * hw..(s + 1) * c * hw], c, h, w, pad, &mut col);
                                let gyn = &gy[s * cout * hw..(s + 1) * cout * hw];
                                T::gemm(cout, hw, ck, gyn, false, &col, true, &mut acc, true);
                            }
                            acc
                        })
                        .collect();
                    let mut total = vec![T::zero(); cout * ck];
                    for p in partials {
                        for (t, v) in total.iter_mut().zip(p) {
                            *t += v;
                        }
                    }
                    Tensor::new(vec![cout, c, K, K], total).expect("shape")
                });

                let db = ctx.needs[2].then(|| {
                    let mut db = vec![T::zero(); cout];
                    for gyn in gy.chunks(cout * hw) {
                        for (co, row) in gyn.chunks(hw).enumerate() {
                            db[co] += row.iter().copied().sum::<T>();
                        }
                    }
                    Tensor::new(vec![cout], db).expect("shape")
                });
                vec![dx, dw, db]
            }),
        ))
    }
}

/// A 3×3 convolution layer with bias.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub padding: Padding,
}

impl<T: Real> Conv2d<T> {
    pub fn new(name: &str, cin: usize, cout: usize, padding: Padding, rng: &mut ChaCha8Rng) -> Self {
        Conv2d {
            weight: Param::new(
                format!("{name}.weight"),
                he_normal(&[cout, cin, K, K], cin * K * K, rng),
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[cout])),
            padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.conv2d(x, w, b, self.padding)
    }

    pub fn params(&self) -> [&Param<T>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Param<T>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}
