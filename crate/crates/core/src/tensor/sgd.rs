use std::collections::BTreeMap;

use super::{Gradients, Param, Real, Tensor};
use crate::error::{ensure, Result};

/// Hyper-parameters of momentum SGD with coupled L2 weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 1e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

/// Velocity buffers, one per trainable parameter, keyed by parameter name.
#[derive(Clone, Debug)]
pub struct OptimizerState<T> {
    pub config: SgdConfig,
    velocity: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new<'a>(config: SgdConfig, params: impl IntoIterator<Item = &'a Param<T>>) -> Self {
        let velocity = params
            .into_iter()
            .filter(|p| !p.frozen)
            .map(|p| (p.name.clone(), Tensor::zeros(p.value.shape())))
            .collect();
        OptimizerState { config, velocity }
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor<T>> {
        self.velocity.get(name)
    }

    /// `v <- momentum·v - lr·(g + wd·p); p <- p + v` for every trainable
    /// parameter. A parameter without a gradient entry is treated as g = 0.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Param<T>>,
        grads: &Gradients<T>,
    ) -> Result<()> {
        let lr = T::of(self.config.lr);
        let mom = T::of(self.config.momentum);
        let wd = T::of(self.config.weight_decay);
        for p in params {
            if p.frozen {
                continue;
            }
            let v = self.velocity.get_mut(&p.name).ok_or_else(|| {
                crate::Error::Contract(format!("no optimizer state for parameter {}", p.name))
            })?;
            ensure!(
                v.shape() == p.value.shape(),
                "velocity/parameter shape mismatch for {}",
                p.name
            );
            let g = grads.param(&p.name);
            if let Some(g) = g {
                ensure!(
                    g.shape() == p.value.shape(),
                    "gradient/parameter shape mismatch for {}",
                    p.name
                );
            }
            let vs = v.data_mut();
            let ps = p.value.data_mut();
            for i in 0..ps.len() {
                let gi = g.map_or(T::zero(), |g| g.data()[i]);
                vs[i] = mom * vs[i] - lr * (gi + wd * ps[i]);
                ps[i] += vs[i];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn one_param(value: f64) -> Param<f64> {
        Param::new("p", Tensor::scalar(value))
    }

    /// Gradients holding `g` for parameter "p", produced through a real tape.
    fn grads_of(p: &Param<f64>, g: f64) -> Gradients<f64> {
        let mut tape = Tape::new();
        let pv = tape.param(p);
        let loss = tape.scale(pv, g);
        tape.backward(loss).unwrap()
    }

    #[test]
    fn decay_only() {
        let mut p = one_param(1.0);
        let cfg = SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.5 };
        let mut st = OptimizerState::new(cfg, [&p]);
        let g = grads_of(&p, 0.0);
        st.step([&mut p], &g).unwrap();
        assert!((st.velocity("p").unwrap().data()[0] + 0.05).abs() < 1e-15);
        assert!((p.value.data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolls() {
        let mut p = one_param(0.0);
        let cfg = SgdConfig { lr: 1e-4, momentum: 0.9, weight_decay: 0.0 };
        let mut st = OptimizerState::new(cfg, [&p]);
        for _ in 0..2 {
            let g = grads_of(&p, 1.0);
            st.step([&mut p], &g).unwrap();
        }
        assert!((p.value.data()[0] + 2.9e-4).abs() < 1e-15);
    }

    #[test]
    fn vanilla_descent_is_exact() {
        let mut p = one_param(0.37);
        let cfg = SgdConfig { lr: 0.013, momentum: 0.0, weight_decay: 0.0 };
        let mut st = OptimizerState::new(cfg, [&p]);
        let g = grads_of(&p, 2.5);
        st.step([&mut p], &g).unwrap();
        // v = 0·0 - lr·(g + 0·p); p + v
        let expected = 0.37 + (0.0 * 0.0 - 0.013 * (2.5 + 0.0 * 0.37));
        assert_eq!(p.value.data()[0], expected);
    }

    #[test]
    fn unknown_param_rejected() {
        let p = one_param(1.0);
        let mut other = Param::new("q", Tensor::scalar(1.0));
        let mut st = OptimizerState::new(SgdConfig::default(), [&p]);
        let g = grads_of(&p, 1.0);
        assert!(st.step([&mut other], &g).is_err());
    }

    #[test]
    fn velocities_start_at_zero() {
        let p = Param::new("w", Tensor::<f32>::full(&[2, 3], 1.0));
        let st = OptimizerState::new(SgdConfig::default(), [&p]);
        assert_eq!(st.velocity("w").unwrap(), &Tensor::zeros(&[2, 3]));
    }
}
