use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Maximum relative error between reverse-mode and central-difference
/// gradients of `op` at `input`.
///
/// Non-scalar outputs are reduced with a fixed random projection so every
/// output element contributes. Error per element is
/// `|g_auto - g_fd| / max(1, |g_auto|, |g_fd|)`.
pub fn grad_check<F>(op: F, input: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    grad_check_with(op, input, eps, 0x5eed)
}

pub fn grad_check_with<F>(op: F, input: &Tensor<f64>, eps: f64, projection_seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut weights: Option<Tensor<f64>> = None;
    let mut eval = |x: &Tensor<f64>, want_grad: bool| -> Result<(f64, Option<Tensor<f64>>)> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), want_grad);
        let y = op(&mut tape, xv)?;
        let w = weights
            .get_or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(projection_seed);
                Tensor::from_fn(tape.shape(y), |_| rng.random_range(0.5..1.5))
            })
            .clone();
        let wv = tape.constant(w);
        let prod = tape.mul(y, wv)?;
        let loss = tape.sum(prod);
        let value = tape.value(loss).data()[0];
        let grad = if want_grad {
            Some(tape.backward(loss)?.wrt(xv).cloned().expect("leaf gradient"))
        } else {
            None
        };
        Ok((value, grad))
    };

    let (_, auto) = eval(input, true)?;
    let auto = auto.expect("requested gradient");
    let mut worst: f64 = 0.0;
    let mut probe = input.clone();
    for i in 0..input.numel() {
        let orig = input.data()[i];
        probe.data_mut()[i] = orig + eps;
        let (plus, _) = eval(&probe, false)?;
        probe.data_mut()[i] = orig - eps;
        let (minus, _) = eval(&probe, false)?;
        probe.data_mut()[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let ga = auto.data()[i];
        let err = (ga - fd).abs() / 1f64.max(ga.abs()).max(fd.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Uniform values in `[-1, 1]` with every `|v| >= 1e-3`, so no element sits on
/// a ReLU kink.
pub fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| loop {
        let v: f64 = rng.random_range(-1.0..1.0);
        if v.abs() >= 1e-3 {
            break v;
        }
    })
}

/// True when every pair of values inside each `win_h × win_w` window of a
/// `[N, C, H, W]` tensor differs by at least `min_gap` (no pooling ties).
pub fn windows_separated(t: &Tensor<f64>, win_h: usize, win_w: usize, min_gap: f64) -> bool {
    let Ok((n, c, h, w)) = t.dims4() else {
        return false;
    };
    let x = t.data();
    let mut buf = Vec::with_capacity(win_h * win_w);
    for plane in 0..n * c {
        for wi in 0..h / win_h {
            for wj in 0..w / win_w {
                buf.clear();
                for di in 0..win_h {
                    for dj in 0..win_w {
                        buf.push(x[plane * h * w + (wi * win_h + di) * w + wj * win_w + dj]);
                    }
                }
                buf.sort_by(f64::total_cmp);
                if buf.windows(2).any(|p| p[1] - p[0] < min_gap) {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_input_avoids_kinks() {
        let t = random_input(&[10, 10], 3);
        assert!(t.data().iter().all(|v| v.abs() >= 1e-3 && v.abs() <= 1.0));
        assert_eq!(t, random_input(&[10, 10], 3));
    }

    #[test]
    fn detects_ties() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 2.0, 3.0]).unwrap();
        assert!(!windows_separated(&t, 2, 2, 1e-3));
        assert!(windows_separated(&t, 1, 2, 1e-3));
    }
}
