//! Grad-CAM over pool5: which azimuth/elevation regions drive a class score.

use std::fmt::Write as _;

use crate::error::{ensure, Error, Result};
use crate::layers::Pass;
use crate::models::{argmax, Model, ModelKind};
use crate::projection::{resample_bilinear, Modality, PanoramicImage};
use crate::tensor::{Real, Tape, Tensor};
use crate::training::Example;

#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    /// `[height, width]` at pool5 resolution, non-negative.
    pub values: Vec<f64>,
    pub height: usize,
    pub width: usize,
    /// `values` resized to the input resolution with horizontal wrapping.
    pub upsampled: Vec<f64>,
    pub up_height: usize,
    pub up_width: usize,
    pub target_class: usize,
    /// Class the model predicted for the image.
    pub predicted: usize,
}

impl CamMap {
    fn from_values(values: Vec<f64>, (h, w): (usize, usize), (uh, uw): (usize, usize), target: usize, predicted: usize) -> Self {
        let upsampled = resample_bilinear(&values, h, w, uh, uw);
        CamMap {
            values,
            height: h,
            width: w,
            upsampled,
            up_height: uh,
            up_width: uw,
            target_class: target,
            predicted,
        }
    }

    /// Copy scaled so the largest value is 1 (an all-zero map stays zero).
    pub fn normalized(&self) -> CamMap {
        let max = self.values.iter().copied().fold(0.0, f64::max);
        if max == 0.0 {
            return self.clone();
        }
        CamMap::from_values(
            self.values.iter().map(|v| v / max).collect(),
            (self.height, self.width),
            (self.up_height, self.up_width),
            self.target_class,
            self.predicted,
        )
    }

    /// The upsampled map as a panorama scaled into `[0, 1]`.
    pub fn to_panorama(&self) -> PanoramicImage {
        let max = self.upsampled.iter().copied().fold(0.0, f64::max);
        let pixels = self
            .upsampled
            .iter()
            .map(|&v| if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        PanoramicImage::new(self.up_width, self.up_height, Modality::Cam, pixels, 1.0)
            .expect("dimensions match")
    }

    /// Binary 8-bit PGM of the upsampled map.
    pub fn to_pgm(&self) -> Vec<u8> {
        let pano = self.to_panorama();
        let mut header = String::new();
        let _ = write!(header, "P5\n{} {}\n255\n", pano.width, pano.height);
        let mut out = header.into_bytes();
        out.extend(pano.pixels.iter().map(|&v| (v * 255.0).round() as u8));
        out
    }
}

/// Grad-CAM of `target_class` for one `[C, H, W]` image.
///
/// `α_k` is the spatial mean of `∂logit_c / ∂A_k` over pool5 map `k`, and
/// the map is `ReLU(Σ_k α_k A_k)`.
pub fn grad_cam<T: Real>(model: &Model<T>, image: &Tensor<T>, target_class: usize) -> Result<CamMap> {
    ensure!(
        model.kind == ModelKind::Single,
        "Grad-CAM needs a single-stream model"
    );
    if target_class >= model.num_classes() {
        return Err(Error::Contract(format!(
            "class {target_class} out of range for {} classes",
            model.num_classes()
        )));
    }
    ensure!(image.rank() == 3, "expected a [C, H, W] image, got {:?}", image.shape());
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let x = image.clone().reshape(&shape)?;

    // frozen copy: only pool5 and the head need adjoints
    let frozen;
    let model = if model.is_frozen() {
        model
    } else {
        let mut m = model.clone();
        m.set_frozen(true);
        frozen = m;
        &frozen
    };
    let mut tape = Tape::new();
    let mut pass = Pass::eval();
    pass.track_features = true;
    let out = model.forward(&mut tape, &x, &mut pass)?;
    let logits: Vec<f64> = tape.value(out.logits).to_f64_vec();
    let pool5 = out.pool5[0];
    let score = tape.column(out.logits, target_class)?;
    let score = tape.sum(score);
    let grads = tape.backward(score)?;

    let (_, k, h, w) = tape.value(pool5).dims4()?;
    let a = tape.value(pool5).to_f64_vec();
    let g = grads
        .wrt(pool5)
        .map(Tensor::to_f64_vec)
        .unwrap_or_else(|| vec![0.0; a.len()]);
    let plane = h * w;
    let mut values = vec![0.0; plane];
    for c in 0..k {
        let alpha = g[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
        for (v, &act) in values.iter_mut().zip(&a[c * plane..(c + 1) * plane]) {
            *v += alpha * act;
        }
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    let (ih, iw) = (image.shape()[1], image.shape()[2]);
    Ok(CamMap::from_values(values, (h, w), (ih, iw), target_class, argmax(&logits)))
}

/// Element-wise mean of max-normalized maps.
pub fn average_maps(maps: &[CamMap]) -> Result<CamMap> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Empty("no maps to average".into()))?;
    let mut values = vec![0.0; first.values.len()];
    for m in maps {
        ensure!(
            m.values.len() == values.len() && m.up_width == first.up_width && m.up_height == first.up_height,
            "maps differ in size"
        );
        for (v, x) in values.iter_mut().zip(&m.normalized().values) {
            *v += x;
        }
    }
    values.iter_mut().for_each(|v| *v /= maps.len() as f64);
    Ok(CamMap::from_values(
        values,
        (first.height, first.width),
        (first.up_height, first.up_width),
        first.target_class,
        first.target_class,
    ))
}

/// Average Grad-CAM of `class` over the examples of that class the model
/// classifies correctly.
pub fn average_cam<T: Real>(model: &Model<T>, examples: &[Example<T>], class: usize) -> Result<CamMap> {
    let mut frozen = model.clone();
    frozen.set_frozen(true);
    let mut maps = Vec::new();
    for e in examples.iter().filter(|e| e.label == class) {
        let map = grad_cam(&frozen, &e.input, class)?;
        if map.predicted == class {
            maps.push(map);
        }
    }
    if maps.is_empty() {
        return Err(Error::Empty(format!("no correctly classified scans of class {class}")));
    }
    average_maps(&maps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::tensor::random_input;

    fn spec() -> ModelSpec {
        ModelSpec::new(1, true, true).with_divisor(16).with_input_size(32, 64)
    }

    fn map(values: Vec<f64>) -> CamMap {
        let w = values.len();
        CamMap::from_values(values, (1, w), (1, w), 0, 0)
    }

    #[test]
    fn hand_built_average() {
        let avg = average_maps(&[map(vec![0.0, 2.0]), map(vec![4.0, 0.0])]).unwrap();
        assert_eq!(avg.values, vec![0.5, 0.5]);
        let single = map(vec![1.0, 3.0, 2.0]);
        assert_eq!(average_maps(std::slice::from_ref(&single)).unwrap().values, single.normalized().values);
        assert_eq!(
            average_maps(&[single.clone(), single.clone()]).unwrap().values,
            single.normalized().values
        );
        assert!(average_maps(&[]).is_err());
    }

    #[test]
    fn zero_head_gives_zero_map() {
        let mut model = Model::<f64>::build(spec(), 0).unwrap();
        model.head.fc2.weight.value = Tensor::zeros(model.head.fc2.weight.value.shape());
        let cam = grad_cam(&model, &random_input(&[1, 32, 64], 1), 2).unwrap();
        assert!(cam.values.iter().all(|&v| v == 0.0));
        assert_eq!(cam.upsampled.len(), 32 * 64);
    }

    #[test]
    fn out_of_range_class() {
        let model = Model::<f64>::build(spec(), 0).unwrap();
        assert!(grad_cam(&model, &random_input(&[1, 32, 64], 1), 6).is_err());
    }

    #[test]
    fn maps_are_non_negative_and_sized() {
        let model = Model::<f64>::build(spec(), 4).unwrap();
        for seed in 0..5 {
            let cam = grad_cam(&model, &random_input(&[1, 32, 64], seed), (seed % 6) as usize).unwrap();
            assert_eq!((cam.height, cam.width), (1, 2));
            assert!(cam.values.iter().chain(&cam.upsampled).all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn pgm_header() {
        let pgm = map(vec![0.0, 1.0, 0.5]).to_pgm();
        assert!(pgm.starts_with(b"P5\n3 1\n255\n"));
        assert_eq!(&pgm[pgm.len() - 3..], &[0, 255, 128]);
    }
}
