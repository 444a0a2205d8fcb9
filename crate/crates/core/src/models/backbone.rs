use rand_chacha::ChaCha8Rng;

use super::{ModelSpec, STAGES};
use crate::error::Result;
use crate::layers::{BatchNorm, Conv2d, Dropout, Linear, Padding, Pass};
use crate::tensor::{Param, Real, Tape, Var};

/// Five conv stages (conv → BN → ReLU, 2×2 max pool after each stage),
/// optionally followed by row-wise max pooling.
#[derive(Clone, Debug)]
pub struct Backbone<T> {
    pub stages: Vec<Vec<(Conv2d<T>, BatchNorm<T>)>>,
    pub use_rwmp: bool,
}

impl<T: Real> Backbone<T> {
    pub fn new(prefix: &str, spec: &ModelSpec, in_channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let padding = if spec.use_hcc {
            Padding::CircularHorizontal
        } else {
            Padding::Zero
        };
        let mut cin = in_channels;
        let stages = STAGES
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .map(|&(name, width)| {
                        let cout = spec.width_of(width);
                        let name = format!("{prefix}{name}");
                        let conv = Conv2d::new(&name, cin, cout, padding, rng);
                        cin = cout;
                        (conv, BatchNorm::new(&format!("{name}.bn"), cout))
                    })
                    .collect()
            })
            .collect();
        Backbone {
            stages,
            use_rwmp: spec.use_rwmp,
        }
    }

    /// Returns `(pool5, flattened feature for fc1)`.
    pub fn forward(&self, tape: &mut Tape<T>, mut x: Var, pass: &mut Pass) -> Result<(Var, Var)> {
        for stage in &self.stages {
            for (conv, bn) in stage {
                x = conv.forward(tape, x)?;
                x = bn.forward(tape, x, pass)?;
                x = tape.relu(x);
            }
            x = tape.max_pool_2x2(x)?;
        }
        let pool5 = x;
        if pass.track_features {
            tape.track(pool5);
        }
        let pooled = if self.use_rwmp {
            tape.row_max_pool(pool5)?
        } else {
            pool5
        };
        Ok((pool5, tape.flatten(pooled)?))
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d<T>> {
        self.stages.iter().flatten().map(|(c, _)| c)
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm<T>> {
        self.stages.iter().flatten().map(|(_, b)| b)
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm<T>> {
        self.stages.iter_mut().flatten().map(|(_, b)| b)
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.stages
            .iter()
            .flatten()
            .flat_map(|(c, b)| c.params().into_iter().chain(b.params()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.stages
            .iter_mut()
            .flatten()
            .flat_map(|(c, b)| c.params_mut().into_iter().chain(b.params_mut()))
    }

    pub fn cast<U: Real>(&self) -> Backbone<U> {
        Backbone {
            stages: self
                .stages
                .iter()
                .map(|s| s.iter().map(|(c, b)| (cast_conv(c), cast_bn(b))).collect())
                .collect(),
            use_rwmp: self.use_rwmp,
        }
    }
}

/// fc1 → BN → ReLU → dropout → fc2, producing logits.
#[derive(Clone, Debug)]
pub struct Head<T> {
    pub fc1: Linear<T>,
    pub bn: BatchNorm<T>,
    pub dropout: Dropout,
    pub fc2: Linear<T>,
}

impl<T: Real> Head<T> {
    pub fn new(spec: &ModelSpec, in_features: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Head {
            fc1: Linear::new("fc1", in_features, spec.fc_hidden, rng),
            bn: BatchNorm::new("fc1.bn", spec.fc_hidden),
            dropout: Dropout::new(spec.dropout_rate)?,
            fc2: Linear::new("fc2", spec.fc_hidden, spec.num_classes, rng),
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: Var, pass: &mut Pass) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let h = self.bn.forward(tape, h, pass)?;
        let h = tape.relu(h);
        let h = self.dropout.forward(tape, h, pass)?;
        self.fc2.forward(tape, h)
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        self.fc1
            .params()
            .into_iter()
            .chain(self.bn.params())
            .chain(self.fc2.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.fc1
            .params_mut()
            .into_iter()
            .chain(self.bn.params_mut())
            .chain(self.fc2.params_mut())
    }

    pub fn cast<U: Real>(&self) -> Head<U> {
        Head {
            fc1: Linear {
                weight: cast_param(&self.fc1.weight),
                bias: cast_param(&self.fc1.bias),
            },
            bn: cast_bn(&self.bn),
            dropout: self.dropout,
            fc2: Linear {
                weight: cast_param(&self.fc2.weight),
                bias: cast_param(&self.fc2.bias),
            },
        }
    }
}

fn cast_param<T: Real, U: Real>(p: &Param<T>) -> Param<U> {
    Param {
        name: p.name.clone(),
        value: p.value.cast(),
        frozen: p.frozen,
    }
}

fn cast_conv<T: Real, U: Real>(c: &Conv2d<T>) -> Conv2d<U> {
    Conv2d {
        weight: cast_param(&c.weight),
        bias: cast_param(&c.bias),
        padding: c.padding,
    }
}

fn cast_bn<T: Real, U: Real>(b: &BatchNorm<T>) -> BatchNorm<U> {
    BatchNorm {
        name: b.name.clone(),
        gamma: cast_param(&b.gamma),
        beta: cast_param(&b.beta),
        running_mean: b.running_mean.cast(),
        running_var: b.running_var.cast(),
        eps: b.eps,
        momentum: b.momentum,
        updates: b.updates,
    }
}
