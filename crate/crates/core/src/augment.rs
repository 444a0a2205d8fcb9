//! Training-time augmentation: random horizontal flips and random circular
//! shifts (a yaw rotation of the sensor).

use rand::Rng;

use crate::projection::PanoramicImage;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentConfig {
    pub enable_flip: bool,
    pub enable_shift: bool,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enable_flip: true,
            enable_shift: true,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            enable_flip: false,
            enable_shift: false,
            rng_seed: 0,
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enable_flip || self.enable_shift
    }
}

/// Anything with a wrapping horizontal axis. Tuples apply one transform to
/// every member, so aligned modalities stay aligned.
pub trait Augmentable: Sized {
    fn width(&self) -> usize;
    fn flipped(&self) -> Self;
    /// Output column `j` is input column `(j - s) mod width`.
    fn shifted(&self, s: i64) -> Self;
}

pub fn horizontal_flip<A: Augmentable>(x: &A) -> A {
    x.flipped()
}

pub fn circular_shift<A: Augmentable>(x: &A, s: i64) -> A {
    x.shifted(s)
}

/// Flip with probability 1/2, then shift by `s ~ U[0, width)`. Disabled
/// transforms draw nothing from `rng`.
pub fn sample_augmentation<A: Augmentable>(x: &A, cfg: &AugmentConfig, rng: &mut impl Rng) -> A {
    let flip = cfg.enable_flip && rng.random_bool(0.5);
    let shift = if cfg.enable_shift {
        rng.random_range(0..x.width()) as i64
    } else {
        0
    };
    let out = if flip { x.flipped() } else { x.shifted(0) };
    if shift == 0 {
        out
    } else {
        out.shifted(shift)
    }
}

fn map_rows(pixels: &[f64], width: usize, f: impl Fn(&[f64], &mut Vec<f64>)) -> Vec<f64> {
    let mut out = Vec::with_capacity(pixels.len());
    for row in pixels.chunks(width) {
        f(row, &mut out);
    }
    out
}

fn rotate_row<V: Copy>(row: &[V], s: i64, out: &mut Vec<V>) {
    let w = row.len();
    let s = s.rem_euclid(w as i64) as usize;
    out.extend_from_slice(&row[w - s..]);
    out.extend_from_slice(&row[..w - s]);
}

impl Augmentable for PanoramicImage {
    fn width(&self) -> usize {
        self.width
    }

    fn flipped(&self) -> Self {
        PanoramicImage {
            pixels: map_rows(&self.pixels, self.width, |r, o| o.extend(r.iter().rev())),
            ..self.clone()
        }
    }

    fn shifted(&self, s: i64) -> Self {
        PanoramicImage {
            pixels: map_rows(&self.pixels, self.width, |r, o| rotate_row(r, s, o)),
            ..self.clone()
        }
    }
}

/// The last axis is the horizontal one.
impl<T: Real> Augmentable for Tensor<T> {
    fn width(&self) -> usize {
        *self.shape().last().expect("tensor has at least one axis")
    }

    fn flipped(&self) -> Self {
        let w = self.width();
        let mut data = Vec::with_capacity(self.numel());
        for row in self.data().chunks(w) {
            data.extend(row.iter().rev());
        }
        Tensor::new(self.shape().to_vec(), data).expect("same shape")
    }

    fn shifted(&self, s: i64) -> Self {
        self.roll_columns(s)
    }
}

impl<A: Augmentable, B: Augmentable> Augmentable for (A, B) {
    fn width(&self) -> usize {
        self.0.width()
    }

    fn flipped(&self) -> Self {
        (self.0.flipped(), self.1.flipped())
    }

    fn shifted(&self, s: i64) -> Self {
        (self.0.shifted(s), self.1.shifted(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projection::Modality;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(values: &[f64]) -> PanoramicImage {
        PanoramicImage::new(values.len(), 1, Modality::Depth, values.to_vec(), 100.0).unwrap()
    }

    #[test]
    fn flip_and_shift_examples() {
        assert_eq!(horizontal_flip(&row(&[1.0, 2.0, 3.0])).pixels, vec![3.0, 2.0, 1.0]);
        assert_eq!(circular_shift(&row(&[1.0, 2.0, 3.0]), 1).pixels, vec![3.0, 1.0, 2.0]);
        assert_eq!(circular_shift(&row(&[1.0, 2.0, 3.0]), 3), row(&[1.0, 2.0, 3.0]));
        assert_eq!(horizontal_flip(&row(&[0.5])), row(&[0.5]));
    }

    #[test]
    fn tensor_matches_image() {
        let img = PanoramicImage::new(5, 2, Modality::Depth, (0..10).map(f64::from).collect(), 1.0).unwrap();
        let t = Tensor::new(vec![1, 2, 5], img.pixels.clone()).unwrap();
        assert_eq!(t.flipped().data(), horizontal_flip(&img).pixels.as_slice());
        assert_eq!(t.shifted(-7).data(), circular_shift(&img, -7).pixels.as_slice());
    }

    #[test]
    fn disabled_config_is_identity() {
        let img = row(&[0.1, 0.2, 0.3, 0.4]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(sample_augmentation(&img, &AugmentConfig::disabled(), &mut rng), img);
        }
    }

    #[test]
    fn pair_stays_aligned() {
        let d = PanoramicImage::new(6, 2, Modality::Depth, vec![0.0, 0.3, 0.0, 0.5, 0.2, 0.0, 0.1, 0.0, 0.0, 0.9, 0.4, 0.7], 100.0).unwrap();
        let r = PanoramicImage { modality: Modality::Reflectance, pixels: d.pixels.iter().map(|v| v / 2.0).collect(), ..d.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (a, b) = sample_augmentation(&(d.clone(), r.clone()), &AugmentConfig::default(), &mut rng);
            assert_eq!(a.nonzero_mask(), b.nonzero_mask());
        }
    }

    #[test]
    fn shift_distribution_is_uniform() {
        // chi-square goodness of fit, 383 dof; 99% quantile 450.31
        let w = 384;
        let img = Tensor::<f64>::from_fn(&[1, w], |i| i as f64);
        let cfg = AugmentConfig { enable_flip: false, ..AugmentConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        let mut counts = vec![0usize; w];
        for _ in 0..draws {
            let out = sample_augmentation(&img, &cfg, &mut rng);
            // column 0 of the output holds input column -s
            let s = (w - out.data()[0] as usize) % w;
            counts[s] += 1;
        }
        let expected = draws as f64 / w as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 450.31, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn transforms_preserve_pixel_multiset(values in prop::collection::vec(0.0f64..1.0, 1..40), s in -100i64..100) {
            let img = row(&values);
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            for out in [horizontal_flip(&img), circular_shift(&img, s)] {
                let mut got = out.pixels.clone();
                got.sort_by(f64::total_cmp);
                prop_assert_eq!(&got, &sorted);
            }
            prop_assert_eq!(horizontal_flip(&horizontal_flip(&img)), img.clone());
            prop_assert_eq!(circular_shift(&circular_shift(&img, s), -s), img);
        }
    }
}
