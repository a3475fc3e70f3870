//! Memorization audit for generative image models.
//!
//! For each synthetic image, the auditor finds the most correlated training
//! images (exact all-pairs Pearson correlation, computed as a blocked dot
//! product over standardized vectors), summarizes the distribution of those
//! maxima against a held-out baseline, and flags likely copies. SSIM,
//! mutual information, FID and Inception Score are provided alongside, and
//! a planted-memorization harness measures detection quality.

pub mod correlate;
pub mod error;
pub mod harness;
pub mod image;
pub mod ingest;
pub mod metrics;
pub mod preprocess;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
pub use image::{
    pearson, pearson_with_mode, standardize, standardize_with_mode, ChannelMask, ChannelMode,
    Dataset, ImageRecord, Role, Source, StandardizedVector,
};
