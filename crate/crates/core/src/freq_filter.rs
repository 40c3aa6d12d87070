//! Low-pass (and edge) filtering of training images.
//!
//! A filtered target is built once per pipeline level, so these run at most a
//! handful of times per training run. `convolve` is the general stride-1,
//! dimension-preserving convolution; the mean filter additionally has a
//! summed-area-table fast path that must agree with the naive double sum.

use thiserror::Error;

use crate::imaging::ImageBuffer;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("kernel size must be a positive odd integer, got {0}")]
    BadKernelSize(usize),
    #[error("kernel size {0} exceeds image dimensions {1}x{2}")]
    KernelLargerThanImage(usize, usize, usize),
    #[error("filter sigma must be positive, got {0}")]
    BadSigma(f64),
}

/// How pixels outside the image are read during convolution.
///
/// Edge replication is the default: zero padding darkens borders and creates
/// spurious low-frequency gradients near image edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PaddingMode {
    #[default]
    Edge,
    Zero,
}

/// The filtering techniques the schedule can drive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterKind {
    Mean,
    /// Isotropic Gaussian; `sigma = None` ties it to the kernel size as size/6.
    Gaussian { sigma: Option<f64> },
    /// Edge-preserving smoothing; `sigma_spatial = None` ties it to size/6.
    /// The range weight is computed on per-channel values independently.
    Bilateral { sigma_spatial: Option<f64>, sigma_range: f64 },
    /// Gradient-magnitude imaging with the standard 3x3 derivative pair.
    /// Kept for the filter ablation only; never part of the default pipeline.
    Sobel,
    Identity,
}

impl FilterKind {
    pub const DEFAULT_BILATERAL_RANGE_SIGMA: f64 = 0.1;

    /// Name used in config files and CSV output.
    pub fn name(&self) -> &'static str {
        match self {
            FilterKind::Mean => "mean",
            FilterKind::Gaussian { .. } => "gaussian",
            FilterKind::Bilateral { .. } => "bilateral",
            FilterKind::Sobel => "sobel",
            FilterKind::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<FilterKind> {
        match name {
            "mean" => Some(FilterKind::Mean),
            "gaussian" => Some(FilterKind::Gaussian { sigma: None }),
            "bilateral" => Some(FilterKind::Bilateral {
                sigma_spatial: None,
                sigma_range: Self::DEFAULT_BILATERAL_RANGE_SIGMA,
            }),
            "sobel" => Some(FilterKind::Sobel),
            "identity" => Some(FilterKind::Identity),
            _ => None,
        }
    }
}

/// Normalized 2D convolution weights over an odd size x size window.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    weights: Vec<f64>,
}

impl Kernel {
    pub fn from_weights(size: usize, weights: Vec<f64>) -> Result<Self, FilterError> {
        if size == 0 || size % 2 == 0 {
            return Err(FilterError::BadKernelSize(size));
        }
        assert_eq!(weights.len(), size * size, "weights must be size x size");
        Ok(Kernel { size, weights })
    }

    pub fn identity() -> Self {
        Kernel { size: 1, weights: vec![1.0] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Half-width k, so the window spans [-k, k] in both axes.
    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.weights[v * self.size + u]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn gaussian_sigma_for(size: usize, sigma: Option<f64>) -> f64 {
    // +-3 sigma support fits the window.
    sigma.unwrap_or(size as f64 / 6.0)
}

/// Build the low-pass kernel for a filter kind.
///
/// For `Sobel` this returns the horizontal derivative kernel of the standard
/// 3x3 pair regardless of the requested size; use [`sobel_kernels`] for both.
pub fn build_kernel(kind: FilterKind, size: usize) -> Result<Kernel, FilterError> {
    if size == 0 || size % 2 == 0 {
        return Err(FilterError::BadKernelSize(size));
    }
    match kind {
        FilterKind::Identity => Ok(Kernel::identity()),
        FilterKind::Mean => {
            let w = 1.0 / (size * size) as f64;
            Ok(Kernel { size, weights: vec![w; size * size] })
        }
        FilterKind::Gaussian { sigma } | FilterKind::Bilateral { sigma_spatial: sigma, .. } => {
            let sigma = gaussian_sigma_for(size, sigma);
            if sigma <= 0.0 {
                return Err(FilterError::BadSigma(sigma));
            }
            let k = (size / 2) as isize;
            let mut weights = Vec::with_capacity(size * size);
            let mut sum = 0.0;
            for v in -k..=k {
                for u in -k..=k {
                    let w = (-((u * u + v * v) as f64) / (2.0 * sigma * sigma)).exp();
                    weights.push(w);
                    sum += w;
                }
            }
            for w in &mut weights {
                *w /= sum;
            }
            Ok(Kernel { size, weights })
        }
        FilterKind::Sobel => Ok(sobel_kernels().0),
    }
}

/// The standard 3x3 Sobel derivative pair (horizontal, vertical).
pub fn sobel_kernels() -> (Kernel, Kernel) {
    let gx = vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let gy = vec![-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    (
        Kernel { size: 3, weights: gx },
        Kernel { size: 3, weights: gy },
    )
}

#[inline]
fn padded_coord(i: isize, len: usize, padding: PaddingMode) -> Option<usize> {
    if i >= 0 && (i as usize) < len {
        Some(i as usize)
    } else {
        match padding {
            PaddingMode::Edge => Some(i.clamp(0, len as isize - 1) as usize),
            PaddingMode::Zero => None,
        }
    }
}

fn check_fits(img: &ImageBuffer, size: usize) -> Result<(), FilterError> {
    if size > img.width() || size > img.height() {
        return Err(FilterError::KernelLargerThanImage(size, img.width(), img.height()));
    }
    Ok(())
}

/// Stride-1 convolution preserving the spatial dimensions:
/// out[i,j] = sum_{u,v} H[u,v] * F[i-u, j-v] (true convolution, kernel
/// flipped relative to correlation; symmetric kernels cannot tell).
///
/// Each output pixel is exactly that double sum over (padded) input values,
/// in a fixed summation order, with no clamping: for signed kernels (Sobel)
/// the raw response is the contract, and for unit-sum non-negative kernels
/// the result cannot leave [0,1] except by float rounding. `filter_image`
/// clamps the low-pass pipeline outputs.
pub fn convolve(img: &ImageBuffer, kernel: &Kernel, padding: PaddingMode) -> Result<ImageBuffer, FilterError> {
    check_fits(img, kernel.size)?;
    let (w, h) = (img.width(), img.height());
    let k = kernel.radius() as isize;
    let mut out = ImageBuffer::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0f64; 3];
            for v in -k..=k {
                let Some(sy) = padded_coord(y as isize - v, h, padding) else { continue };
                for u in -k..=k {
                    let Some(sx) = padded_coord(x as isize - u, w, padding) else { continue };
                    let weight = kernel.at((u + k) as usize, (v + k) as usize);
                    let px = img.get(sx, sy);
                    for c in 0..3 {
                        acc[c] += weight * px[c];
                    }
                }
            }
            let i = out.index(x, y);
            out.data_mut()[i..i + 3].copy_from_slice(&acc);
        }
    }
    Ok(out)
}

/// Mean filter via a summed-area table: O(1) per pixel regardless of size.
/// Matches `convolve` with a mean kernel to within float rounding.
pub fn box_filter(img: &ImageBuffer, size: usize, padding: PaddingMode) -> Result<ImageBuffer, FilterError> {
    if size == 0 || size % 2 == 0 {
        return Err(FilterError::BadKernelSize(size));
    }
    check_fits(img, size)?;
    if size == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width(), img.height());
    let k = size / 2;
    // Pad by edge replication (or zeros) into a (w + 2k) x (h + 2k) plane set,
    // then integrate.
    let pw = w + 2 * k;
    let ph = h + 2 * k;
    let mut sat = vec![0.0f64; (pw + 1) * (ph + 1) * 3];
    let row_stride = (pw + 1) * 3;
    for py in 0..ph {
        for px in 0..pw {
            let sx = padded_coord(px as isize - k as isize, w, padding);
            let sy = padded_coord(py as isize - k as isize, h, padding);
            let val = match (sx, sy) {
                (Some(sx), Some(sy)) => img.get(sx, sy),
                _ => [0.0; 3],
            };
            let base = (py + 1) * row_stride + (px + 1) * 3;
            for c in 0..3 {
                sat[base + c] = val[c] + sat[base - 3 + c] + sat[base - row_stride + c]
                    - sat[base - row_stride - 3 + c];
            }
        }
    }
    let inv_area = 1.0 / (size * size) as f64;
    let mut out = ImageBuffer::new(w, h);
    for y in 0..h {
        for x in 0..w {
            // Window [x, x + 2k] x [y, y + 2k] in padded coordinates.
            let (x0, y0) = (x, y);
            let (x1, y1) = (x + size, y + size);
            let mut px = [0.0; 3];
            for c in 0..3 {
                let s = sat[y1 * row_stride + x1 * 3 + c] - sat[y0 * row_stride + x1 * 3 + c]
                    - sat[y1 * row_stride + x0 * 3 + c]
                    + sat[y0 * row_stride + x0 * 3 + c];
                px[c] = s * inv_area;
            }
            out.set(x, y, px);
        }
    }
    Ok(out)
}

/// Edge-preserving smoothing: per-pixel normalized weighted mean with
/// weight = spatial Gaussian x range Gaussian of the per-channel intensity
/// difference. Dimensions are preserved; edge padding is implied by the
/// normalization (out-of-image taps are simply dropped).
pub fn bilateral_filter(
    img: &ImageBuffer,
    size: usize,
    sigma_spatial: f64,
    sigma_range: f64,
) -> Result<ImageBuffer, FilterError> {
    if size == 0 || size % 2 == 0 {
        return Err(FilterError::BadKernelSize(size));
    }
    if sigma_spatial <= 0.0 {
        return Err(FilterError::BadSigma(sigma_spatial));
    }
    if sigma_range <= 0.0 {
        return Err(FilterError::BadSigma(sigma_range));
    }
    check_fits(img, size)?;
    let (w, h) = (img.width(), img.height());
    let k = (size / 2) as isize;
    let spatial: Vec<f64> = {
        let mut weights = Vec::with_capacity(size * size);
        for v in -k..=k {
            for u in -k..=k {
                weights.push((-((u * u + v * v) as f64) / (2.0 * sigma_spatial * sigma_spatial)).exp());
            }
        }
        weights
    };
    let inv_two_sr2 = 1.0 / (2.0 * sigma_range * sigma_range);
    let mut out = ImageBuffer::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let center = img.get(x, y);
            let mut acc = [0.0f64; 3];
            let mut norm = [0.0f64; 3];
            for v in -k..=k {
                let sy = y as isize + v;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for u in -k..=k {
                    let sx = x as isize + u;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let sw = spatial[((v + k) * (2 * k + 1) + (u + k)) as usize];
                    let px = img.get(sx as usize, sy as usize);
                    for c in 0..3 {
                        let d = px[c] - center[c];
                        let wgt = sw * (-d * d * inv_two_sr2).exp();
                        acc[c] += wgt * px[c];
                        norm[c] += wgt;
                    }
                }
            }
            out.set(x, y, [acc[0] / norm[0], acc[1] / norm[1], acc[2] / norm[2]]);
        }
    }
    Ok(out)
}

/// Sobel gradient-magnitude image, per channel, scaled by the theoretical
/// maximum response (4 * sqrt(2) for inputs in [0,1]) and clamped into [0,1].
pub fn sobel_magnitude(img: &ImageBuffer) -> Result<ImageBuffer, FilterError> {
    let (gx_k, gy_k) = sobel_kernels();
    let gx = convolve(img, &gx_k, PaddingMode::Edge)?;
    let gy = convolve(img, &gy_k, PaddingMode::Edge)?;
    let scale = 1.0 / (4.0 * std::f64::consts::SQRT_2);
    let mut out = ImageBuffer::new(img.width(), img.height());
    for i in 0..out.data().len() {
        let m = (gx.data()[i] * gx.data()[i] + gy.data()[i] * gy.data()[i]).sqrt() * scale;
        out.data_mut()[i] = m.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Apply a filter kind at the given size; size 1 or `Identity` returns the
/// input unchanged. This is the level-target builder the trainer calls.
pub fn filter_image(img: &ImageBuffer, kind: FilterKind, size: usize) -> Result<ImageBuffer, FilterError> {
    if size == 0 || size % 2 == 0 {
        return Err(FilterError::BadKernelSize(size));
    }
    if size == 1 || kind == FilterKind::Identity {
        return Ok(img.clone());
    }
    match kind {
        FilterKind::Identity => unreachable!(),
        FilterKind::Mean => box_filter(img, size, PaddingMode::Edge),
        FilterKind::Gaussian { .. } => {
            let kernel = build_kernel(kind, size)?;
            let mut out = convolve(img, &kernel, PaddingMode::Edge)?;
            out.clamp_in_place();
            Ok(out)
        }
        FilterKind::Bilateral { sigma_spatial, sigma_range } => {
            bilateral_filter(img, size, gaussian_sigma_for(size, sigma_spatial), sigma_range)
        }
        FilterKind::Sobel => sobel_magnitude(img),
    }
}
