use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{derive_seed, stack, Example};
use crate::augment::{sample_augmentation, AugmentConfig};
use crate::error::{ensure, Error, Result};
use crate::layers::{one_hot, Pass, StatUpdate};
use crate::models::{AdaptiveFusion, GatingExample, GatingNet, Model};
use crate::tensor::{OptimizerState, Param, Real, SgdConfig, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            momentum: 0.9,
            batch_size: 64,
            weight_decay: 5e-4,
            patience: 10,
            max_epochs: 200,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// Something `fit` can optimize: parameters plus a differentiable batch loss.
pub trait Trainable: Clone + Sync {
    type Scalar: Real;
    type Sample: Clone + Sync;

    fn params(&self) -> Vec<&Param<Self::Scalar>>;
    fn params_mut(&mut self) -> Vec<&mut Param<Self::Scalar>>;

    /// Mean loss over `batch`, recorded on `tape`.
    fn batch_loss(&self, tape: &mut Tape<Self::Scalar>, batch: &[&Self::Sample], pass: &mut Pass) -> Result<Var>;

    /// Called after each optimizer step with the batch statistics of the pass.
    fn after_step(&mut self, _stats: Vec<StatUpdate>) -> Result<()> {
        Ok(())
    }

    /// A randomly transformed copy of a training sample.
    fn augment(&self, sample: &Self::Sample, _cfg: &AugmentConfig, _rng: &mut ChaCha8Rng) -> Self::Sample {
        sample.clone()
    }
}

impl<T: Real> Trainable for Model<T> {
    type Scalar = T;
    type Sample = Example<T>;

    fn params(&self) -> Vec<&Param<T>> {
        Model::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Model::params_mut(self)
    }

    fn batch_loss(&self, tape: &mut Tape<T>, batch: &[&Example<T>], pass: &mut Pass) -> Result<Var> {
        let x = stack(batch)?;
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let target = one_hot(&labels, self.num_classes())?;
        let out = self.forward(tape, &x, pass)?;
        Ok(tape.softmax_cross_entropy(out.logits, &target)?.0)
    }

    fn after_step(&mut self, stats: Vec<StatUpdate>) -> Result<()> {
        self.commit_stats(&stats)
    }

    fn augment(&self, sample: &Example<T>, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Example<T> {
        Example {
            input: sample_augmentation(&sample.input, cfg, rng),
            label: sample.label,
        }
    }
}

impl<T: Real> Trainable for GatingNet<T> {
    type Scalar = T;
    type Sample = GatingExample;

    fn params(&self) -> Vec<&Param<T>> {
        GatingNet::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        GatingNet::params_mut(self)
    }

    fn batch_loss(&self, tape: &mut Tape<T>, batch: &[&GatingExample], _pass: &mut Pass) -> Result<Var> {
        self.loss(tape, batch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience-based early stopping on a monitored loss.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

/// Batches of `size` indices; a trailing batch of one joins its predecessor
/// so batch normalization always sees at least two samples.
fn batches(order: &[usize], size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(size).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * size;
        *out.last_mut().expect("nonempty") = &order[start..];
    }
    out
}

/// Eval-mode mean loss over `samples`, without augmentation.
pub(crate) fn mean_loss<M: Trainable>(model: &M, samples: &[M::Sample], batch_size: usize) -> Result<f64> {
    let refs: Vec<&M::Sample> = samples.iter().collect();
    let parts: Vec<Result<f64>> = refs
        .par_chunks(batch_size.max(1))
        .map(|batch| {
            let mut tape = Tape::inference();
            let loss = model.batch_loss(&mut tape, batch, &mut Pass::eval())?;
            Ok(tape.value(loss).data()[0].as_f64() * batch.len() as f64)
        })
        .collect();
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / samples.len() as f64)
}

/// Mini-batch SGD with early stopping on the validation loss.
///
/// Epoch `e` (1-based) shuffles with seed `seed + e`. After every epoch the
/// validation loss is measured in eval mode; training stops once it has not
/// improved for `patience` epochs, and the parameters of the best epoch are
/// restored. With an empty validation set the training loss (eval mode)
/// is monitored instead.
pub fn fit<M: Trainable>(
    model: &mut M,
    train: &[M::Sample],
    val: &[M::Sample],
    cfg: &TrainConfig,
    augment: &AugmentConfig,
) -> Result<History> {
    if train.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    ensure!(cfg.batch_size >= 1, "batch size must be positive");
    ensure!(cfg.max_epochs >= 1, "max_epochs must be positive");
    let monitor = if val.is_empty() { train } else { val };
    let mut opt = OptimizerState::new(cfg.sgd(), model.params());
    let mut stopper = EarlyStopping::new(cfg.patience.max(1));
    let mut best = model.clone();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        let mut aug_rng = ChaCha8Rng::seed_from_u64(derive_seed(augment.rng_seed, epoch as u64));
        let mut train_loss = 0.0;
        for (b, idx) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let batch: Vec<M::Sample> = idx
                .iter()
                .map(|&i| {
                    if augment.is_enabled() {
                        model.augment(&train[i], augment, &mut aug_rng)
                    } else {
                        train[i].clone()
                    }
                })
                .collect();
            let refs: Vec<&M::Sample> = batch.iter().collect();
            let mut tape = Tape::new();
            let mut pass = Pass::train(derive_seed(cfg.seed, (epoch as u64) << 32 | b as u64));
            let loss = model.batch_loss(&mut tape, &refs, &mut pass)?;
            train_loss += tape.value(loss).data()[0].as_f64() * refs.len() as f64;
            let grads = tape.backward(loss)?;
            opt.step(model.params_mut(), &grads)?;
            model.after_step(pass.take_stats())?;
        }
        train_loss /= train.len() as f64;
        let val_loss = mean_loss(model, monitor, cfg.batch_size)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        log::info!("epoch {epoch}: train loss {train_loss:.5}, validation loss {val_loss:.5}");
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    *model = best;
    history.best_epoch = stopper.best_epoch;
    history.best_val_loss = stopper.best;
    Ok(history)
}

/// Train only the gating network of an adaptive fusion; the base models
/// must be frozen.
pub fn train_gating<T: Real>(
    fusion: &mut AdaptiveFusion<T>,
    train: &[GatingExample],
    val: &[GatingExample],
    cfg: &TrainConfig,
) -> Result<History> {
    fusion.check_frozen()?;
    fit(&mut fusion.gating, train, val, cfg, &AugmentConfig::disabled())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_merges_single_leftover() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b, vec![&order[0..4], &order[4..9]]);
        let b = batches(&order, 3);
        assert_eq!(b.len(), 3);
        let b = batches(&order[..1], 4);
        assert_eq!(b, vec![&order[0..1]]);
        let b = batches(&order[..6], 4);
        assert_eq!(b, vec![&order[0..4], &order[4..6]]);
    }

    #[test]
    fn early_stopping_rule() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(s.observe(2, 1.0), StopDecision::Continue);
        assert_eq!(s.observe(3, 0.5), StopDecision::Improved);
        assert_eq!(s.observe(4, 0.7), StopDecision::Continue);
        assert_eq!(s.observe(5, 0.6), StopDecision::Stop);
        assert_eq!(s.best_epoch, 3);
    }
}
