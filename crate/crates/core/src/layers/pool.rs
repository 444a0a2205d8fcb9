use crate::error::{ensure, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Route `grad[k]` to `argmax[k]` of an input with `len` elements.
fn scatter<T: Real>(grad: &Tensor<T>, argmax: &[usize], shape: &[usize]) -> Tensor<T> {
    let mut dx = Tensor::zeros(shape);
    let d = dx.data_mut();
    for (&g, &src) in grad.data().iter().zip(argmax) {
        d[src] += g;
    }
    dx
}

impl<T: Real> Tape<T> {
    /// 2×2 max pooling with stride 2. Ties go to the first element in
    /// row-major order within the window.
    pub fn max_pool_2x2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        ensure!(
            h % 2 == 0 && w % 2 == 0,
            "2x2 pooling needs even spatial dims, got {h}x{w}"
        );
        let (oh, ow) = (h / 2, w / 2);
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for idx in [
                        base + 2 * i * w + 2 * j + 1,
                        base + (2 * i + 1) * w + 2 * j,
                        base + (2 * i + 1) * w + 2 * j + 1,
                    ] {
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    out.push(xs[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::new(vec![n, c, oh, ow], out)?;
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |ctx| vec![Some(scatter(ctx.grad, &argmax, ctx.inputs[0].shape()))]),
        ))
    }

    /// Row-wise max pooling: `[N, C, H, W] -> [N, C, H, 1]`, the maximum of
    /// each row over all columns. Ties go to the lowest column.
    pub fn row_max_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * h);
        let mut argmax = Vec::with_capacity(n * c * h);
        for r in 0..n * c * h {
            let row = &xs[r * w..(r + 1) * w];
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            out.push(row[best]);
            argmax.push(r * w + best);
        }
        let out = Tensor::new(vec![n, c, h, 1], out)?;
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |ctx| vec![Some(scatter(ctx.grad, &argmax, ctx.inputs[0].shape()))]),
        ))
    }
}
