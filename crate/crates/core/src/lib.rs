//! Synthetic handwritten-digit images whose pixel values are N(0, 1024) draws.
//!
//! Each image starts from a source digit that is binarized, cropped to its
//! central 64x64 window and reduced to 32x32. The reduced digit is split into
//! four regions (outside, outside boundary, inside boundary, inside). 1024
//! Gaussian draws are sorted in descending order, cut into four bands by
//! region size (outside, inside boundary, outside boundary, inside) and each
//! band is scattered at random over its region. Every image therefore holds
//! exactly a permutation of 1024 i.i.d. Gaussian samples.

pub mod boundary;
pub mod dataset;
pub mod error;
pub mod io;
pub mod model;
pub mod preprocessing;
pub mod randomness;
pub mod source;
pub mod synthesis;
pub mod verification;

pub use error::{Error, Result};
pub use model::{
    partition_from_labels, BinaryImage, DatasetManifest, DatasetRecord, GaussianVector, GrayImage, Region,
    RegionPartition, Split,
};
