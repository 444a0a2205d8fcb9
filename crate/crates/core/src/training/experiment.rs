use std::path::Path;

use rayon::prelude::*;

use super::metrics::predict_labels;
use super::{
    derive_seed, evaluate_predictions, examples_from_scans, fit, make_folds, train_gating,
    Category, ConfusionMatrix, Evaluation, Example, Fold, History, InputMode, LabeledScan,
    TrainConfig,
};
use crate::augment::AugmentConfig;
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::models::{fuse_softmax_average, AdaptiveFusion, Model, ModelKind, ModelSpec};
use crate::tensor::{Checkpoint, Tensor};

/// How scans become a category decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    /// One network; `Both` with `Single` is early fusion, `Both` with `Late`
    /// is late fusion.
    Single { mode: InputMode, kind: ModelKind },
    SoftmaxAverage,
    Adaptive,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    /// Architecture template; `input_channels` is set per network.
    pub spec: ModelSpec,
    pub method: Method,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    /// Optimizer settings for the gating network of adaptive fusion.
    pub gating: TrainConfig,
    pub gating_hidden: usize,
}

impl ExperimentConfig {
    pub fn new(spec: ModelSpec, method: Method) -> Self {
        ExperimentConfig {
            spec,
            method,
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            gating: TrainConfig {
                lr: 1e-3,
                ..TrainConfig::default()
            },
            gating_hidden: 128,
        }
    }
}

/// A trained predictor of any method.
#[derive(Clone, Debug)]
pub enum Trained {
    Single { mode: InputMode, model: Model<f32> },
    Average { depth: Model<f32>, reflectance: Model<f32> },
    Adaptive(AdaptiveFusion<f32>),
}

fn batch_of(scans: &[&LabeledScan], mode: InputMode) -> Result<Tensor<f32>> {
    let ex: Vec<Example<f32>> = examples_from_scans(scans, mode);
    super::stack(&ex.iter().collect::<Vec<_>>())
}

impl Trained {
    pub fn predict(&self, scans: &[&LabeledScan]) -> Result<Vec<usize>> {
        match self {
            Trained::Single { mode, model } => {
                predict_labels(model, &examples_from_scans(scans, *mode))
            }
            Trained::Average { depth, reflectance } => {
                let mut out = Vec::with_capacity(scans.len());
                for chunk in scans.chunks(64) {
                    let pd = depth.predict(&batch_of(chunk, InputMode::Depth)?)?;
                    let pr = reflectance.predict(&batch_of(chunk, InputMode::Reflectance)?)?;
                    let k = pd.shape()[1];
                    for (a, b) in pd.data().chunks(k).zip(pr.data().chunks(k)) {
                        let a: Vec<f64> = a.iter().map(|&v| v as f64).collect();
                        let b: Vec<f64> = b.iter().map(|&v| v as f64).collect();
                        out.push(fuse_softmax_average(&a, &b)?.1);
                    }
                }
                Ok(out)
            }
            Trained::Adaptive(fusion) => {
                let mut out = Vec::with_capacity(scans.len());
                for chunk in scans.chunks(64) {
                    let fused = fusion.predict(
                        &batch_of(chunk, InputMode::Depth)?,
                        &batch_of(chunk, InputMode::Reflectance)?,
                    )?;
                    out.extend(fused.into_iter().map(|(_, c, _)| c));
                }
                Ok(out)
            }
        }
    }

    pub fn evaluate(&self, scans: &[&LabeledScan]) -> Result<Evaluation> {
        let predicted = self.predict(scans)?;
        let truth: Vec<usize> = scans.iter().map(|s| s.label.index()).collect();
        evaluate_predictions(&truth, &predicted, Category::COUNT)
    }

    pub fn method_name(&self) -> &'static str {
        match self {
            Trained::Single { .. } => "single",
            Trained::Average { .. } => "average",
            Trained::Adaptive(_) => "adaptive",
        }
    }

    /// Write `trained.manifest` plus one manifest and checkpoint per network
    /// into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut m = Manifest::new();
        m.set("method", self.method_name());
        let save_model = |name: &str, model: &Model<f32>| -> Result<()> {
            model.to_manifest().save(dir.join(format!("{name}.manifest")))?;
            model.checkpoint().save(dir.join(format!("{name}.ckpt")))
        };
        match self {
            Trained::Single { mode, model } => {
                m.set("mode", mode.name());
                save_model("model", model)?;
            }
            Trained::Average { depth, reflectance } => {
                save_model("depth", depth)?;
                save_model("reflectance", reflectance)?;
            }
            Trained::Adaptive(f) => {
                save_model("depth", &f.depth)?;
                save_model("reflectance", &f.reflectance)?;
                m.set("gating_hidden", f.gating.fc1.out_features());
                f.gating.checkpoint().save(dir.join("gating.ckpt"))?;
            }
        }
        m.save(dir.join("trained.manifest"))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = Manifest::load(dir.join("trained.manifest"))?;
        let load_model = |name: &str| -> Result<Model<f32>> {
            let mut model = Model::from_manifest(&Manifest::load(dir.join(format!("{name}.manifest")))?)?;
            model.load_checkpoint(&Checkpoint::load(dir.join(format!("{name}.ckpt")))?)?;
            Ok(model)
        };
        match m.require("method")? {
            "single" => Ok(Trained::Single {
                mode: m.parse_value("mode")?,
                model: load_model("model")?,
            }),
            "average" => Ok(Trained::Average {
                depth: load_model("depth")?,
                reflectance: load_model("reflectance")?,
            }),
            "adaptive" => {
                let hidden = m.parse_value("gating_hidden")?;
                let mut fusion = AdaptiveFusion::new(load_model("depth")?, load_model("reflectance")?, hidden, 0)?;
                fusion.gating.load_checkpoint(&Checkpoint::load(dir.join("gating.ckpt"))?)?;
                Ok(Trained::Adaptive(fusion))
            }
            other => Err(Error::Format(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub evaluation: Evaluation,
    /// One history per trained network, in training order.
    pub histories: Vec<History>,
    pub trained: Trained,
}

fn train_network(
    spec: ModelSpec,
    kind: ModelKind,
    mode: InputMode,
    train: &[&LabeledScan],
    val: &[&LabeledScan],
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    seed: u64,
) -> Result<(Model<f32>, History)> {
    let spec = ModelSpec {
        input_channels: mode.channels(),
        ..spec
    };
    let mut model = Model::build_kind(kind, spec, seed)?;
    let history = fit(
        &mut model,
        &examples_from_scans(train, mode),
        &examples_from_scans(val, mode),
        cfg,
        augment,
    )?;
    Ok((model, history))
}

/// Train and test one fold. Seeds for every network are derived from
/// `cfg.train.seed` and the fold index.
pub fn run_fold(scans: &[LabeledScan], fold: &Fold, index: usize, cfg: &ExperimentConfig) -> Result<FoldOutcome> {
    let pick = |ids: &[usize]| ids.iter().map(|&i| &scans[i]).collect::<Vec<_>>();
    let (train, val, test) = (pick(&fold.train), pick(&fold.validation), pick(&fold.test));
    let base = derive_seed(cfg.train.seed, index as u64);
    let train_cfg = TrainConfig {
        seed: derive_seed(base, 1),
        ..cfg.train
    };
    let augment = AugmentConfig {
        rng_seed: derive_seed(base, 2),
        ..cfg.augment
    };
    let net = |mode: InputMode, kind: ModelKind, stream: u64| {
        train_network(cfg.spec, kind, mode, &train, &val, &train_cfg, &augment, derive_seed(base, stream))
    };

    let (trained, histories) = match cfg.method {
        Method::Single { mode, kind } => {
            let (model, h) = net(mode, kind, 3)?;
            (Trained::Single { mode, model }, vec![h])
        }
        Method::SoftmaxAverage => {
            let (depth, hd) = net(InputMode::Depth, ModelKind::Single, 3)?;
            let (reflectance, hr) = net(InputMode::Reflectance, ModelKind::Single, 4)?;
            (Trained::Average { depth, reflectance }, vec![hd, hr])
        }
        Method::Adaptive => {
            let (depth, hd) = net(InputMode::Depth, ModelKind::Single, 3)?;
            let (reflectance, hr) = net(InputMode::Reflectance, ModelKind::Single, 4)?;
            let mut fusion = AdaptiveFusion::new(depth, reflectance, cfg.gating_hidden, derive_seed(base, 5))?;
            let gating_set = |s: &[&LabeledScan]| -> Result<_> {
                if s.is_empty() {
                    return Ok(Vec::new());
                }
                let labels: Vec<usize> = s.iter().map(|x| x.label.index()).collect();
                fusion.examples(&batch_of(s, InputMode::Depth)?, &batch_of(s, InputMode::Reflectance)?, &labels)
            };
            let (gt, gv) = (gating_set(&train)?, gating_set(&val)?);
            let gating_cfg = TrainConfig {
                seed: derive_seed(base, 6),
                ..cfg.gating
            };
            let hg = train_gating(&mut fusion, &gt, &gv, &gating_cfg)?;
            (Trained::Adaptive(fusion), vec![hd, hr, hg])
        }
    };
    let evaluation = trained.evaluate(&test)?;
    log::info!("fold {index}: test accuracy {:.4}", evaluation.total);
    Ok(FoldOutcome {
        fold: index,
        evaluation,
        histories,
        trained,
    })
}

#[derive(Clone, Debug)]
pub struct CrossValResult {
    pub folds: Vec<FoldOutcome>,
}

impl CrossValResult {
    /// Mean of per-fold total accuracies.
    pub fn fold_weighted_accuracy(&self) -> f64 {
        self.folds.iter().map(|f| f.evaluation.total).sum::<f64>() / self.folds.len() as f64
    }

    /// Correct predictions over all test scans.
    pub fn scan_weighted_accuracy(&self) -> f64 {
        self.confusion().accuracy()
    }

    /// Per-category mean over the folds where the category was present.
    pub fn mean_per_class(&self) -> Vec<Option<f64>> {
        (0..Category::COUNT)
            .map(|c| {
                let vals: Vec<f64> = self.folds.iter().filter_map(|f| f.evaluation.per_class[c]).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            })
            .collect()
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        let mut m = ConfusionMatrix::new(Category::COUNT);
        for f in &self.folds {
            m.merge(&f.evaluation.confusion);
        }
        m
    }
}

/// Run every fold of a `k`-fold plan; up to `jobs` folds train concurrently.
pub fn cross_validate(scans: &[LabeledScan], k: usize, cfg: &ExperimentConfig, jobs: usize) -> Result<CrossValResult> {
    let plan = make_folds(scans, k)?;
    let run = |(i, fold): (usize, &Fold)| run_fold(scans, fold, i, cfg);
    let folds: Vec<Result<FoldOutcome>> = if jobs <= 1 {
        plan.folds.iter().enumerate().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Contract(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| plan.folds.par_iter().enumerate().map(run).collect())
    };
    Ok(CrossValResult {
        folds: folds.into_iter().collect::<Result<_>>()?,
    })
}
