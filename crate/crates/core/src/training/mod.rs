//! Grouped k-fold cross-validation, SGD training with early stopping, and
//! accuracy metrics.

mod experiment;
mod folds;
mod metrics;
mod trainer;

use std::fmt;
use std::str::FromStr;

pub use experiment::{cross_validate, run_fold, CrossValResult, ExperimentConfig, FoldOutcome, Method, Trained};
pub use folds::{make_folds, make_folds_by_key, Fold, FoldPlan};
pub use metrics::{
    evaluate, evaluate_predictions, predict_labels, rotation_sweep, shift_for_angle, ConfusionMatrix,
    Evaluation,
};
pub use trainer::{fit, train_gating, EarlyStopping, EpochRecord, History, StopDecision, TrainConfig, Trainable};

use crate::error::{Error, Result};
use crate::projection::PanoramicImage;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Coast,
    Forest,
    ParkingIn,
    ParkingOut,
    Residential,
    Urban,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Coast,
        Category::Forest,
        Category::ParkingIn,
        Category::ParkingOut,
        Category::Residential,
        Category::Urban,
    ];
    pub const COUNT: usize = 6;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Coast => "coast",
            Category::Forest => "forest",
            Category::ParkingIn => "parking_in",
            Category::ParkingOut => "parking_out",
            Category::Residential => "residential",
            Category::Urban => "urban",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown category {s:?}")))
    }
}

/// One scan with aligned depth and reflectance panoramas.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScan {
    pub depth: PanoramicImage,
    pub reflectance: PanoramicImage,
    pub label: Category,
    pub location_set: usize,
}

/// Which modalities feed a network, stacked as channels in this order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputMode {
    Depth,
    Reflectance,
    Both,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Both => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            InputMode::Depth => "depth",
            InputMode::Reflectance => "reflectance",
            InputMode::Both => "both",
        }
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(InputMode::Depth),
            "reflectance" => Ok(InputMode::Reflectance),
            "both" => Ok(InputMode::Both),
            _ => Err(Error::Format(format!("unknown modality {s:?}"))),
        }
    }
}

/// A network input `[C, H, W]` with its class index.
#[derive(Clone, Debug, PartialEq)]
pub struct Example<T> {
    pub input: Tensor<T>,
    pub label: usize,
}

impl<T: Real> Example<T> {
    pub fn from_scan(scan: &LabeledScan, mode: InputMode) -> Self {
        let images: Vec<&PanoramicImage> = match mode {
            InputMode::Depth => vec![&scan.depth],
            InputMode::Reflectance => vec![&scan.reflectance],
            InputMode::Both => vec![&scan.depth, &scan.reflectance],
        };
        let (h, w) = (scan.depth.height, scan.depth.width);
        let data = images
            .iter()
            .flat_map(|img| img.pixels.iter().map(|&v| T::of(v)))
            .collect();
        Example {
            input: Tensor::new(vec![images.len(), h, w], data).expect("aligned modalities"),
            label: scan.label.index(),
        }
    }
}

pub fn examples_from_scans<T: Real>(scans: &[&LabeledScan], mode: InputMode) -> Vec<Example<T>> {
    scans.iter().map(|s| Example::from_scan(s, mode)).collect()
}

/// Stack `[C, H, W]` inputs into one `[N, C, H, W]` batch.
pub fn stack<T: Real>(examples: &[&Example<T>]) -> Result<Tensor<T>> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Empty("cannot stack an empty batch".into()))?;
    let mut shape = vec![examples.len()];
    shape.extend_from_slice(first.input.shape());
    let mut data = Vec::with_capacity(examples.len() * first.input.numel());
    for e in examples {
        if e.input.shape() != first.input.shape() {
            return Err(Error::Contract("examples in a batch differ in shape".into()));
        }
        data.extend_from_slice(e.input.data());
    }
    Tensor::new(shape, data)
}

/// Independent seed for stream `stream` of a run seeded with `base`
/// (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
