//! Classic hand-crafted descriptors (dense SIFT + bag of words, HLAC)
//! computed on early VGG-16 feature maps instead of raw pixels, with a
//! linear SVM and a small evaluation harness.

pub mod binfmt;
pub mod bow;
pub mod dataset;
pub mod error;
pub mod feature;
pub mod hlac;
pub mod pipeline;
pub mod sift;
pub mod svm;
pub mod synthetic;
pub mod tensor;
pub mod vgg;

pub use error::{Error, Result};
