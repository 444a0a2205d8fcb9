//! VGG-style place classifiers and their multi-modal fusion variants.
//!
//! Every model takes a `[N, C, H, W]` batch. Uni-modal models read one
//! channel, early and late fusion read the stacked (depth, reflectance) pair.

mod backbone;
mod fusion;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use backbone::{Backbone, Head};
pub use fusion::{
    argmax, fuse_adaptive, fuse_softmax_average, fuse_weighted, AdaptiveFusion, FusionWeights,
    GatingExample, GatingNet,
};

use crate::error::{ensure, Error, Result};
use crate::layers::{BatchNorm, Pass, StatUpdate};
use crate::manifest::Manifest;
use crate::tensor::{Checkpoint, Param, Real, Tape, Tensor, Var};

/// Channel widths of the five convolution stages.
pub const STAGES: [&[(&str, usize)]; 5] = [
    &[("conv1", 64)],
    &[("conv2", 128)],
    &[("conv3_1", 256), ("conv3_2", 256)],
    &[("conv4_1", 512), ("conv4_2", 512)],
    &[("conv5_1", 512), ("conv5_2", 512)],
];

/// Total spatial reduction of the five pooling stages.
pub const POOL_STRIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub use_hcc: bool,
    pub use_rwmp: bool,
    pub num_classes: usize,
    pub fc_hidden: usize,
    pub dropout_rate: f64,
    /// Divides every convolution width; 1 is the full-size network.
    pub channel_divisor: usize,
    pub input_height: usize,
    pub input_width: usize,
}

impl ModelSpec {
    pub fn new(input_channels: usize, use_hcc: bool, use_rwmp: bool) -> Self {
        ModelSpec {
            input_channels,
            use_hcc,
            use_rwmp,
            num_classes: 6,
            fc_hidden: 128,
            dropout_rate: 0.5,
            channel_divisor: 1,
            input_height: 32,
            input_width: 384,
        }
    }

    pub fn with_divisor(mut self, divisor: usize) -> Self {
        self.channel_divisor = divisor;
        self
    }

    pub fn with_input_size(mut self, height: usize, width: usize) -> Self {
        self.input_height = height;
        self.input_width = width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            matches!(self.input_channels, 1 | 2),
            "input_channels must be 1 or 2, got {}",
            self.input_channels
        );
        ensure!(
            self.channel_divisor >= 1 && 64 % self.channel_divisor == 0,
            "channel_divisor must divide 64, got {}",
            self.channel_divisor
        );
        ensure!(
            self.input_height > 0
                && self.input_width > 0
                && self.input_height.is_multiple_of(POOL_STRIDE)
                && self.input_width.is_multiple_of(POOL_STRIDE),
            "input size {}x{} must be a positive multiple of {POOL_STRIDE}",
            self.input_height,
            self.input_width
        );
        ensure!(self.num_classes >= 2, "need at least two classes");
        ensure!(self.fc_hidden >= 1, "fc_hidden must be positive");
        ensure!(
            (0.0..1.0).contains(&self.dropout_rate),
            "dropout rate must be in [0, 1)"
        );
        Ok(())
    }

    pub fn width_of(&self, base: usize) -> usize {
        base / self.channel_divisor
    }

    /// `(channels, height, width)` of pool5.
    pub fn pool5_shape(&self) -> (usize, usize, usize) {
        (
            self.width_of(512),
            self.input_height / POOL_STRIDE,
            self.input_width / POOL_STRIDE,
        )
    }

    /// Length of the flattened feature one stream feeds to fc1.
    pub fn feature_len(&self) -> usize {
        let (c, h, w) = self.pool5_shape();
        c * h * if self.use_rwmp { 1 } else { w }
    }

    pub fn to_manifest(&self, m: &mut Manifest) {
        m.set("input_channels", self.input_channels)
            .set("use_hcc", self.use_hcc)
            .set("use_rwmp", self.use_rwmp)
            .set("num_classes", self.num_classes)
            .set("fc_hidden", self.fc_hidden)
            .set("dropout_rate", self.dropout_rate)
            .set("channel_divisor", self.channel_divisor)
            .set("input_height", self.input_height)
            .set("input_width", self.input_width);
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let spec = ModelSpec {
            input_channels: m.parse_value("input_channels")?,
            use_hcc: m.parse_value("use_hcc")?,
            use_rwmp: m.parse_value("use_rwmp")?,
            num_classes: m.parse_value("num_classes")?,
            fc_hidden: m.parse_value("fc_hidden")?,
            dropout_rate: m.parse_value("dropout_rate")?,
            channel_divisor: m.parse_value("channel_divisor")?,
            input_height: m.parse_value("input_height")?,
            input_width: m.parse_value("input_width")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    /// One convolution stream over all input channels (uni-modal or early fusion).
    Single,
    /// One convolution stream per input channel, concatenated before fc1.
    Late,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Single => "single",
            ModelKind::Late => "late",
        }
    }
}

/// Values recorded by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    /// One pool5 map per convolution stream.
    pub pool5: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub spec: ModelSpec,
    pub kind: ModelKind,
    pub streams: Vec<Backbone<T>>,
    pub head: Head<T>,
}

impl<T: Real> Model<T> {
    /// Uni-modal (1 channel) or early-fusion (2 channel) classifier.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stream = Backbone::new("", &spec, spec.input_channels, &mut rng);
        let head = Head::new(&spec, spec.feature_len(), &mut rng)?;
        Ok(Model {
            spec,
            kind: ModelKind::Single,
            streams: vec![stream],
            head,
        })
    }

    /// Two single-channel streams sharing one fc stack.
    pub fn build_late_fusion(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        ensure!(
            spec.input_channels == 2,
            "late fusion reads a stacked 2-channel input"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let streams = vec![
            Backbone::new("depth.", &spec, 1, &mut rng),
            Backbone::new("reflectance.", &spec, 1, &mut rng),
        ];
        let head = Head::new(&spec, 2 * spec.feature_len(), &mut rng)?;
        Ok(Model {
            spec,
            kind: ModelKind::Late,
            streams,
            head,
        })
    }

    pub fn build_kind(kind: ModelKind, spec: ModelSpec, seed: u64) -> Result<Self> {
        match kind {
            ModelKind::Single => Self::build(spec, seed),
            ModelKind::Late => Self::build_late_fusion(spec, seed),
        }
    }

    pub fn input_channels(&self) -> usize {
        self.spec.input_channels
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn forward(&self, tape: &mut Tape<T>, input: &Tensor<T>, pass: &mut Pass) -> Result<Forward> {
        let (_, c, h, w) = input.dims4()?;
        ensure!(
            c == self.spec.input_channels && h == self.spec.input_height && w == self.spec.input_width,
            "model expects [N, {}, {}, {}] input, got {:?}",
            self.spec.input_channels,
            self.spec.input_height,
            self.spec.input_width,
            input.shape()
        );
        let mut feats = Vec::with_capacity(self.streams.len());
        let mut pool5 = Vec::with_capacity(self.streams.len());
        match self.kind {
            ModelKind::Single => {
                let x = tape.constant(input.clone());
                let (p, f) = self.streams[0].forward(tape, x, pass)?;
                pool5.push(p);
                feats.push(f);
            }
            ModelKind::Late => {
                for (k, stream) in self.streams.iter().enumerate() {
                    let x = tape.constant(channel(input, k)?);
                    let (p, f) = stream.forward(tape, x, pass)?;
                    pool5.push(p);
                    feats.push(f);
                }
            }
        }
        let feature = if feats.len() == 1 {
            feats[0]
        } else {
            tape.concat_features(&feats)?
        };
        let logits = self.head.forward(tape, feature, pass)?;
        Ok(Forward { logits, pool5 })
    }

    /// Eval-mode class probabilities `[N, classes]`, computed in batches.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.predict_with_pool5(input)?.0)
    }

    /// Eval-mode probabilities plus the globally average-pooled pool5
    /// features of every stream, concatenated: `[N, streams · C5]`.
    pub fn predict_with_pool5(&self, input: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (n, c, h, w) = input.dims4()?;
        let per = c * h * w;
        let chunk = 32;
        let parts: Vec<Result<(Vec<T>, Vec<T>)>> = input
            .data()
            .par_chunks(chunk * per)
            .map(|block| {
                let m = block.len() / per;
                let x = Tensor::new(vec![m, c, h, w], block.to_vec())?;
                let mut tape = Tape::inference();
                let out = self.forward(&mut tape, &x, &mut Pass::eval())?;
                let probs = tape.softmax(out.logits)?;
                let gaps = out
                    .pool5
                    .iter()
                    .map(|&p| tape.global_avg_pool(p))
                    .collect::<Result<Vec<_>>>()?;
                let gap = if gaps.len() == 1 {
                    gaps[0]
                } else {
                    tape.concat_features(&gaps)?
                };
                Ok((tape.value(probs).data().to_vec(), tape.value(gap).data().to_vec()))
            })
            .collect();
        let mut probs = Vec::with_capacity(n * self.spec.num_classes);
        let mut gaps = Vec::new();
        for part in parts {
            let (p, g) = part?;
            probs.extend(p);
            gaps.extend(g);
        }
        let feat = gaps.len() / n;
        Ok((
            Tensor::new(vec![n, self.spec.num_classes], probs)?,
            Tensor::new(vec![n, feat], gaps)?,
        ))
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm<T>> {
        let mut out: Vec<&BatchNorm<T>> = self.streams.iter().flat_map(|s| s.batch_norms()).collect();
        out.push(&self.head.bn);
        out
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm<T>> {
        let mut out: Vec<&mut BatchNorm<T>> =
            self.streams.iter_mut().flat_map(|s| s.batch_norms_mut()).collect();
        out.push(&mut self.head.bn);
        out
    }

    /// Fold batch statistics from a training pass into the running estimates.
    pub fn commit_stats(&mut self, stats: &[StatUpdate]) -> Result<()> {
        let mut bns = self.batch_norms_mut();
        for s in stats {
            let bn = bns
                .iter_mut()
                .find(|bn| bn.name == s.layer)
                .ok_or_else(|| Error::Contract(format!("no batch norm named {}", s.layer)))?;
            bn.commit(s);
        }
        Ok(())
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out: Vec<&Param<T>> = self.streams.iter().flat_map(|s| s.params()).collect();
        out.extend(self.head.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out: Vec<&mut Param<T>> =
            self.streams.iter_mut().flat_map(|s| s.params_mut()).collect();
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.numel()).sum()
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for p in self.params_mut() {
            p.frozen = frozen;
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.params().iter().all(|p| p.frozen)
    }

    /// Parameters plus batch-norm running statistics.
    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for p in self.params() {
            ck.push(p.name.clone(), &p.value);
        }
        for bn in self.batch_norms() {
            ck.push(format!("{}.running_mean", bn.name), &bn.running_mean);
            ck.push(format!("{}.running_var", bn.name), &bn.running_var);
            ck.push(
                format!("{}.updates", bn.name),
                &Tensor::<f64>::scalar(bn.updates as f64),
            );
        }
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        fn fetch<T: Real>(ck: &Checkpoint, name: &str, like: &Tensor<T>) -> Result<Tensor<T>> {
            let t = ck
                .get(name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))?;
            if t.shape() != like.shape() {
                return Err(Error::Format(format!(
                    "checkpoint shape {:?} for {name} does not match model {:?}",
                    t.shape(),
                    like.shape()
                )));
            }
            Ok(t.cast())
        }
        for p in self.params_mut() {
            p.value = fetch(ck, &p.name, &p.value)?;
        }
        for bn in self.batch_norms_mut() {
            bn.running_mean = fetch(ck, &format!("{}.running_mean", bn.name), &bn.running_mean)?;
            bn.running_var = fetch(ck, &format!("{}.running_var", bn.name), &bn.running_var)?;
            let updates: Tensor<f64> = fetch(ck, &format!("{}.updates", bn.name), &Tensor::scalar(0.0))?;
            bn.updates = updates.data()[0] as u64;
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("kind", self.kind.name());
        self.spec.to_manifest(&mut m);
        m
    }

    /// Rebuild an untrained model of the shape a manifest describes.
    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let spec = ModelSpec::from_manifest(m)?;
        let kind = match m.require("kind")? {
            "single" => ModelKind::Single,
            "late" => ModelKind::Late,
            other => return Err(Error::Format(format!("unknown model kind {other:?}"))),
        };
        Self::build_kind(kind, spec, 0)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec,
            kind: self.kind,
            streams: self.streams.iter().map(Backbone::cast).collect(),
            head: self.head.cast(),
        }
    }
}

/// Channel `k` of a `[N, C, H, W]` batch as `[N, 1, H, W]`.
pub fn channel<T: Real>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    ensure!(k < c, "channel {k} out of range for {c} channels");
    let plane = h * w;
    let mut out = Vec::with_capacity(n * plane);
    for i in 0..n {
        let start = (i * c + k) * plane;
        out.extend_from_slice(&input.data()[start..start + plane]);
    }
    Tensor::new(vec![n, 1, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::random_input;

    fn small(hcc: bool, rwmp: bool) -> ModelSpec {
        ModelSpec::new(1, hcc, rwmp).with_divisor(16).with_input_size(32, 128)
    }

    fn logits(model: &Model<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::inference();
        let out = model.forward(&mut tape, x, &mut Pass::eval()).unwrap();
        tape.value(out.logits).clone()
    }

    #[test]
    fn full_size_shapes() {
        let model = Model::<f32>::build(ModelSpec::new(1, false, false), 0).unwrap();
        let x = Tensor::zeros(&[1, 1, 32, 384]);
        let mut tape = Tape::inference();
        let out = model.forward(&mut tape, &x, &mut Pass::eval()).unwrap();
        assert_eq!(tape.shape(out.pool5[0]), &[1, 512, 1, 12]);
        assert_eq!(tape.shape(out.logits), &[1, 6]);
        assert_eq!(model.head.fc1.in_features(), 6144);
        let rwmp = ModelSpec::new(1, false, true);
        assert_eq!(rwmp.feature_len(), 512);
    }

    #[test]
    fn deterministic_under_seed() {
        let a = Model::<f32>::build(small(true, true), 5).unwrap();
        let b = Model::<f32>::build(small(true, true), 5).unwrap();
        let c = Model::<f32>::build(small(true, true), 6).unwrap();
        let pa: Vec<_> = a.params().into_iter().cloned().collect();
        let pb: Vec<_> = b.params().into_iter().cloned().collect();
        let pc: Vec<_> = c.params().into_iter().cloned().collect();
        assert_eq!(pa, pb);
        assert_ne!(pa, pc);
    }

    #[test]
    fn padding_follows_hcc_flag() {
        use crate::layers::Padding;
        for hcc in [false, true] {
            let m = Model::<f32>::build(small(hcc, false), 0).unwrap();
            let want = if hcc { Padding::CircularHorizontal } else { Padding::Zero };
            assert!(m.streams[0].convs().all(|c| c.padding == want));
        }
    }

    #[test]
    fn probabilities_and_eval_determinism() {
        let model = Model::<f64>::build(small(false, false), 1).unwrap();
        let x = random_input(&[3, 1, 32, 128], 2);
        let p = model.predict(&x).unwrap();
        for row in p.data().chunks(6) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(p, model.predict(&x).unwrap());
    }

    #[test]
    fn wrong_input_size_rejected() {
        let model = Model::<f32>::build(small(false, false), 1).unwrap();
        let mut tape = Tape::inference();
        let x = Tensor::zeros(&[1, 1, 32, 96]);
        assert!(model.forward(&mut tape, &x, &mut Pass::eval()).is_err());
        let x = Tensor::zeros(&[1, 2, 32, 128]);
        assert!(model.forward(&mut tape, &x, &mut Pass::eval()).is_err());
    }

    #[test]
    fn rwmp_hcc_logits_invariant_to_32_pixel_shifts() {
        let model = Model::<f64>::build(small(true, true), 3).unwrap();
        let x = random_input(&[2, 1, 32, 128], 4);
        let base = logits(&model, &x);
        for k in 1..4 {
            let shifted = logits(&model, &x.roll_columns(32 * k));
            assert!(base.max_abs_diff(&shifted) <= 1e-10);
        }
    }

    #[test]
    fn pool5_equivariance_is_exact() {
        let model = Model::<f64>::build(small(true, false), 3).unwrap();
        let x = random_input(&[1, 1, 32, 128], 8);
        let pool5 = |x: &Tensor<f64>| {
            let mut tape = Tape::inference();
            let out = model.forward(&mut tape, x, &mut Pass::eval()).unwrap();
            tape.value(out.pool5[0]).clone()
        };
        let p = pool5(&x);
        for k in 0..4 {
            assert_eq!(pool5(&x.roll_columns(32 * k)), p.roll_columns(k));
        }
    }

    #[test]
    fn early_and_late_fusion_shapes() {
        let base = Model::<f32>::build(small(false, false), 0).unwrap();
        let early = Model::<f32>::build(ModelSpec { input_channels: 2, ..small(false, false) }, 0).unwrap();
        assert_eq!(early.param_count() - base.param_count(), 4 * 9);
        let late = Model::<f32>::build_late_fusion(ModelSpec { input_channels: 2, ..small(false, true) }, 0).unwrap();
        assert_eq!(late.head.fc1.in_features(), 2 * small(false, true).feature_len());
        assert!(Model::<f32>::build_late_fusion(small(false, true), 0).is_err());
        let x = random_input(&[2, 2, 32, 128], 1).cast::<f32>();
        for m in [&early, &late] {
            let p = m.predict(&x).unwrap();
            assert_eq!(p.shape(), &[2, 6]);
            for row in p.data().chunks(6) {
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut a = Model::<f32>::build_late_fusion(ModelSpec { input_channels: 2, ..small(true, true) }, 4).unwrap();
        a.head.bn.running_mean.data_mut()[0] = 0.5;
        a.head.bn.updates = 3;
        let mut b = Model::<f32>::from_manifest(&a.to_manifest()).unwrap();
        b.load_checkpoint(&a.checkpoint()).unwrap();
        assert_eq!(b.params(), a.params());
        assert_eq!(b.head.bn.running_mean, a.head.bn.running_mean);
        assert_eq!(b.head.bn.updates, 3);
        let mut other = Model::<f32>::build(small(true, true), 0).unwrap();
        assert!(other.load_checkpoint(&a.checkpoint()).is_err());
    }
}
