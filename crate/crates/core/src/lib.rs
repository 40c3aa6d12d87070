//! Frequency-modulated coarse-to-fine training for 2D Gaussian splatting.
//!
//! The crate fits a set of anisotropic 2D Gaussians to a single target image
//! with a differentiable rasterizer and adaptive density control, and lets the
//! training targets be low-pass filtered on a coarse-to-fine schedule so the
//! densification sees a progressively sharper image. The point of the exercise
//! is measuring how that modulation changes primitive count, quality and
//! training time against an unmodulated baseline.
//!
//! Module map:
//! - [`imaging`]: float RGB rasters, PSNR/SSIM, PNG/PPM I/O
//! - [`freq_filter`]: convolution kernels and the low-pass/edge filters
//! - [`schedule`]: iteration -> kernel size / pipeline level
//! - [`splat`]: the differentiable rasterizer (forward + analytic backward)
//! - [`adc`]: clone / split / prune / opacity reset
//! - [`trainer`]: the progressive training pipeline, compare and ablate
//! - [`run_config`]: flat key=value run configuration files

pub mod adc;
pub mod freq_filter;
pub mod imaging;
pub mod run_config;
pub mod schedule;
pub mod snapshot;
pub mod splat;
pub mod trainer;
