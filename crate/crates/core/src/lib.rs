//! Place categorization from panoramic LiDAR depth and reflectance images.
//!
//! The crate covers the whole pipeline: cylindrical projection of point
//! clouds, a small reverse-mode autodiff engine, VGG-style classifiers with
//! horizontal circular convolution and row-wise max pooling, multi-modal
//! fusion, a grouped k-fold training harness, and Grad-CAM.

pub mod augment;
pub mod error;
pub mod gradcam;
pub mod layers;
pub mod manifest;
pub mod models;
pub mod projection;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use training::Category;
