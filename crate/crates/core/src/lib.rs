//! Receptive-field-guided spatial image watermarking.

mod error;
mod font;
pub mod dataio;
pub mod distortions;
pub mod evaluation;
pub mod experiments;
pub mod imaging;
pub mod nets;
pub mod plot;
pub mod rfcalc;
pub mod training;
pub mod watermarks;

pub use error::{Error, Result};
pub use imaging::{detection_accuracy, psnr, ssim, ImageTensor, MetricReport};
