//! Pairwise image similarity (SSIM, mutual information) and distribution
//! metrics over externally supplied embeddings (FID, Inception Score).

mod fid;
mod inception;
mod mi;
mod ssim;

pub use fid::{fid, gaussian_stats, matrix_sqrt_psd, GaussianStats};
pub use inception::{inception_score, DEFAULT_SPLITS};
pub use mi::{binned_entropy, mutual_information, DEFAULT_BINS};
pub use ssim::{ssim, SsimParams};
