//! Late-decision fusion: softmax averaging and gated (adaptive) weighting of
//! two frozen uni-modal classifiers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Model;
use crate::error::{ensure, Error, Result};
use crate::layers::Linear;
use crate::tensor::{Checkpoint, Param, Real, Tape, Tensor, Var};

const SIMPLEX_TOL: f64 = 1e-4;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    ensure!(!p.is_empty(), "{what} is empty");
    ensure!(
        p.iter().all(|&v| v >= -SIMPLEX_TOL) && (p.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL,
        "{what} is not a probability vector"
    );
    Ok(())
}

/// `P = (p_d + p_r) / 2`, `c = argmax P`.
pub fn fuse_softmax_average(p_d: &[f64], p_r: &[f64]) -> Result<(Vec<f64>, usize)> {
    fuse_weighted(p_d, p_r, FusionWeights { w_d: 0.5, w_r: 0.5 })
}

/// Per-modality certainties; non-negative and summing to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionWeights {
    pub w_d: f64,
    pub w_r: f64,
}

/// `P = w_d·p_d + w_r·p_r`, `c = argmax P`.
pub fn fuse_weighted(p_d: &[f64], p_r: &[f64], w: FusionWeights) -> Result<(Vec<f64>, usize)> {
    ensure!(p_d.len() == p_r.len(), "probability vectors differ in length");
    check_simplex(p_d, "depth probabilities")?;
    check_simplex(p_r, "reflectance probabilities")?;
    ensure!(
        w.w_d >= 0.0 && w.w_r >= 0.0 && (w.w_d + w.w_r - 1.0).abs() <= 1e-9,
        "fusion weights must be a 2-way distribution, got {w:?}"
    );
    let p: Vec<f64> = p_d.iter().zip(p_r).map(|(&d, &r)| w.w_d * d + w.w_r * r).collect();
    let c = argmax(&p);
    Ok((p, c))
}

/// Precomputed gating input for one scan: pool5 summaries of both streams
/// and their class distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct GatingExample {
    pub features: Vec<f64>,
    pub p_d: Vec<f64>,
    pub p_r: Vec<f64>,
    pub label: usize,
}

/// fc → ReLU → fc(2) → softmax over globally average-pooled pool5 features.
#[derive(Clone, Debug)]
pub struct GatingNet<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> GatingNet<T> {
    pub fn new(in_features: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GatingNet {
            fc1: Linear::new("gating.fc1", in_features, hidden, &mut rng),
            fc2: Linear::new("gating.fc2", hidden, 2, &mut rng),
        }
    }

    pub fn in_features(&self) -> usize {
        self.fc1.in_features()
    }

    /// `[N, F]` features to `[N, 2]` weights `(w_d, w_r)`.
    pub fn forward(&self, tape: &mut Tape<T>, features: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, features)?;
        let h = tape.relu(h);
        let z = self.fc2.forward(tape, h)?;
        tape.softmax(z)
    }

    /// Gate outputs per row, renormalized in f64 so f32 models pass the simplex check.
    pub fn weights(&self, features: &Tensor<T>) -> Result<Vec<FusionWeights>> {
        let mut tape = Tape::inference();
        let f = tape.constant(features.clone());
        let w = self.forward(&mut tape, f)?;
        Ok(tape
            .value(w)
            .data()
            .chunks(2)
            .map(|c| {
                let (a, b) = (c[0].as_f64(), c[1].as_f64());
                FusionWeights {
                    w_d: a / (a + b),
                    w_r: b / (a + b),
                }
            })
            .collect())
    }

    /// Mean of `-ln(w_d·p_d[y] + w_r·p_r[y])` over the batch.
    pub fn loss(&self, tape: &mut Tape<T>, batch: &[&GatingExample]) -> Result<Var> {
        ensure!(!batch.is_empty(), "empty gating batch");
        let n = batch.len();
        let f = self.in_features();
        let k = batch[0].p_d.len();
        let mut feats = Vec::with_capacity(n * f);
        let (mut pd, mut pr) = (Vec::with_capacity(n * k), Vec::with_capacity(n * k));
        for ex in batch {
            ensure!(
                ex.features.len() == f && ex.p_d.len() == k && ex.p_r.len() == k && ex.label < k,
                "inconsistent gating example"
            );
            feats.extend(ex.features.iter().map(|&v| T::of(v)));
            pd.extend(ex.p_d.iter().map(|&v| T::of(v)));
            pr.extend(ex.p_r.iter().map(|&v| T::of(v)));
        }
        let labels: Vec<usize> = batch.iter().map(|e| e.label).collect();
        let x = tape.constant(Tensor::new(vec![n, f], feats)?);
        let pd = tape.constant(Tensor::new(vec![n, k], pd)?);
        let pr = tape.constant(Tensor::new(vec![n, k], pr)?);
        let w = self.forward(tape, x)?;
        let wd = tape.column(w, 0)?;
        let wr = tape.column(w, 1)?;
        let a = tape.scale_rows(pd, wd)?;
        let b = tape.scale_rows(pr, wr)?;
        let p = tape.add(a, b)?;
        let py = tape.pick(p, &labels)?;
        // floor keeps the log finite when both streams give the truth zero mass
        let floor = tape.constant(Tensor::full(&[n], T::of(1e-12)));
        let py = tape.add(py, floor)?;
        let lp = tape.log(py)?;
        let m = tape.mean(lp);
        Ok(tape.scale(m, -1.0))
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        self.fc1.params().into_iter().chain(self.fc2.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.fc1
            .params_mut()
            .into_iter()
            .chain(self.fc2.params_mut())
            .collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for p in self.params() {
            ck.push(p.name.clone(), &p.value);
        }
        ck
    }

    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        for p in self.params_mut() {
            let t = ck
                .get(&p.name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!("shape mismatch for {}", p.name)));
            }
            p.value = t.cast();
        }
        Ok(())
    }
}

/// Gated combination of a depth and a reflectance classifier.
#[derive(Clone, Debug)]
pub struct AdaptiveFusion<T> {
    pub depth: Model<T>,
    pub reflectance: Model<T>,
    pub gating: GatingNet<T>,
}

impl<T: Real> AdaptiveFusion<T> {
    /// Freezes both base models; the gating network is the only trainable part.
    pub fn new(mut depth: Model<T>, mut reflectance: Model<T>, hidden: usize, seed: u64) -> Result<Self> {
        ensure!(
            depth.input_channels() == 1 && reflectance.input_channels() == 1,
            "adaptive fusion combines two uni-modal models"
        );
        ensure!(
            depth.num_classes() == reflectance.num_classes(),
            "base models disagree on the number of classes"
        );
        depth.set_frozen(true);
        reflectance.set_frozen(true);
        let features = depth.spec.pool5_shape().0 + reflectance.spec.pool5_shape().0;
        Ok(AdaptiveFusion {
            depth,
            reflectance,
            gating: GatingNet::new(features, hidden, seed),
        })
    }

    pub fn check_frozen(&self) -> Result<()> {
        ensure!(
            self.depth.is_frozen() && self.reflectance.is_frozen(),
            "base models must stay frozen while the gating network trains"
        );
        Ok(())
    }

    /// Gating inputs for a batch of aligned `[N, 1, H, W]` depth and
    /// reflectance images.
    pub fn examples(&self, x_d: &Tensor<T>, x_r: &Tensor<T>, labels: &[usize]) -> Result<Vec<GatingExample>> {
        gating_examples(&self.depth, &self.reflectance, x_d, x_r, labels)
    }

    pub fn predict(&self, x_d: &Tensor<T>, x_r: &Tensor<T>) -> Result<Vec<(Vec<f64>, usize, FusionWeights)>> {
        fuse_adaptive(&self.depth, &self.reflectance, &self.gating, x_d, x_r)
    }

    /// Fused prediction for precomputed gating inputs.
    pub fn predict_examples(&self, examples: &[GatingExample]) -> Result<Vec<(Vec<f64>, usize, FusionWeights)>> {
        predict_examples(&self.gating, examples)
    }
}

fn predict_examples<T: Real>(
    gating: &GatingNet<T>,
    examples: &[GatingExample],
) -> Result<Vec<(Vec<f64>, usize, FusionWeights)>> {
    if examples.is_empty() {
        return Ok(Vec::new());
    }
    let f = gating.in_features();
    let feats = Tensor::new(
        vec![examples.len(), f],
        examples
            .iter()
            .flat_map(|e| e.features.iter().map(|&v| T::of(v)))
            .collect(),
    )?;
    let weights = gating.weights(&feats)?;
    examples
        .iter()
        .zip(weights)
        .map(|(e, w)| {
            let (p, c) = fuse_weighted(&e.p_d, &e.p_r, w)?;
            Ok((p, c, w))
        })
        .collect()
}

fn gating_examples<T: Real>(
    model_d: &Model<T>,
    model_r: &Model<T>,
    x_d: &Tensor<T>,
    x_r: &Tensor<T>,
    labels: &[usize],
) -> Result<Vec<GatingExample>> {
    let (pd, gd) = model_d.predict_with_pool5(x_d)?;
    let (pr, gr) = model_r.predict_with_pool5(x_r)?;
    let n = labels.len();
    ensure!(
        pd.shape()[0] == n && pr.shape()[0] == n,
        "{} labels for {} depth and {} reflectance images",
        n,
        pd.shape()[0],
        pr.shape()[0]
    );
    let k = pd.shape()[1];
    let (fd, fr) = (gd.shape()[1], gr.shape()[1]);
    let row = |t: &Tensor<T>, i: usize, w: usize| -> Vec<f64> {
        t.data()[i * w..(i + 1) * w].iter().map(|v| v.as_f64()).collect()
    };
    Ok((0..n)
        .map(|i| {
            let mut features = row(&gd, i, fd);
            features.extend(row(&gr, i, fr));
            GatingExample {
                features,
                p_d: row(&pd, i, k),
                p_r: row(&pr, i, k),
                label: labels[i],
            }
        })
        .collect())
}

/// `P = w_d·f_d(x_d) + w_r·f_r(x_r)` with weights from the gating network.
pub fn fuse_adaptive<T: Real>(
    model_d: &Model<T>,
    model_r: &Model<T>,
    gating: &GatingNet<T>,
    x_d: &Tensor<T>,
    x_r: &Tensor<T>,
) -> Result<Vec<(Vec<f64>, usize, FusionWeights)>> {
    let n = x_d.shape()[0];
    let examples = gating_examples(model_d, model_r, x_d, x_r, &vec![0; n])?;
    predict_examples(gating, &examples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::tensor::random_input;

    #[test]
    fn average_example() {
        let (p, c) = fuse_softmax_average(&[0.6, 0.4, 0.0, 0.0, 0.0, 0.0], &[0.2, 0.8, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let want = [0.4, 0.6, 0.0, 0.0, 0.0, 0.0];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(c, 1);
        let q = [0.1, 0.3, 0.3, 0.1, 0.1, 0.1];
        assert_eq!(fuse_softmax_average(&q, &q).unwrap(), (q.to_vec(), 1));
    }

    #[test]
    fn non_normalized_rejected() {
        assert!(fuse_softmax_average(&[0.5, 0.4], &[0.5, 0.5]).is_err());
        assert!(fuse_softmax_average(&[0.5, 0.5], &[0.5, 0.5, 0.0]).is_err());
        assert!(fuse_softmax_average(&[0.50005, 0.49999], &[0.5, 0.5]).is_ok());
    }

    #[test]
    fn degenerate_weights() {
        let pd = [0.1, 0.2, 0.3, 0.4];
        let pr = [0.4, 0.3, 0.2, 0.1];
        let (p, _) = fuse_weighted(&pd, &pr, FusionWeights { w_d: 1.0, w_r: 0.0 }).unwrap();
        assert_eq!(p, pd.to_vec());
        assert!(fuse_weighted(&pd, &pr, FusionWeights { w_d: 0.7, w_r: 0.7 }).is_err());
    }

    #[test]
    fn gating_weights_are_a_distribution() {
        let g = GatingNet::<f64>::new(8, 16, 0);
        let w = g.weights(&random_input(&[20, 8], 3)).unwrap();
        for w in w {
            assert!(w.w_d >= 0.0 && w.w_r >= 0.0);
            assert!((w.w_d + w.w_r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adaptive_matches_manual_combination() {
        let spec = ModelSpec::new(1, true, true).with_divisor(16).with_input_size(32, 64);
        let fusion = AdaptiveFusion::new(
            Model::<f64>::build(spec, 1).unwrap(),
            Model::<f64>::build(spec, 2).unwrap(),
            8,
            3,
        )
        .unwrap();
        assert!(fusion.check_frozen().is_ok());
        let xd = random_input(&[3, 1, 32, 64], 4);
        let xr = random_input(&[3, 1, 32, 64], 5);
        let out = fusion.predict(&xd, &xr).unwrap();
        let pd = fusion.depth.predict(&xd).unwrap();
        let pr = fusion.reflectance.predict(&xr).unwrap();
        for (i, (p, c, w)) in out.iter().enumerate() {
            for j in 0..6 {
                let want = w.w_d * pd.data()[i * 6 + j] + w.w_r * pr.data()[i * 6 + j];
                assert!((p[j] - want).abs() < 1e-15);
            }
            assert_eq!(*c, argmax(p));
        }
        let ex = fusion.examples(&xd, &xr, &[0, 1, 2]).unwrap();
        assert_eq!(ex[0].features.len(), 2 * spec.pool5_shape().0);
        let again = fusion.predict_examples(&ex).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn gating_loss_gradient_matches_finite_differences() {
        let examples: Vec<GatingExample> = (0..5)
            .map(|i| {
                let f = random_input(&[6], 10 + i).to_f64_vec();
                let mut pd = vec![0.1; 3];
                pd[(i % 3) as usize] = 0.8;
                GatingExample { features: f, p_d: pd, p_r: vec![0.2, 0.5, 0.3], label: (i % 3) as usize }
            })
            .collect();
        let batch: Vec<&GatingExample> = examples.iter().collect();
        let mut g = GatingNet::<f64>::new(6, 4, 7);
        let mut tape = Tape::new();
        let loss = g.loss(&mut tape, &batch).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.param("gating.fc1.weight").unwrap().clone();
        let eval = |g: &GatingNet<f64>| {
            let mut t = Tape::inference();
            let l = g.loss(&mut t, &batch).unwrap();
            t.value(l).data()[0]
        };
        let eps = 1e-6;
        for i in 0..analytic.numel() {
            let orig = g.fc1.weight.value.data()[i];
            g.fc1.weight.value.data_mut()[i] = orig + eps;
            let up = eval(&g);
            g.fc1.weight.value.data_mut()[i] = orig - eps;
            let down = eval(&g);
            g.fc1.weight.value.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = analytic.data()[i];
            assert!((a - fd).abs() / 1f64.max(a.abs()).max(fd.abs()) < 1e-6);
        }
    }
}
