//! Float RGB image buffers, quality metrics and file I/O.
//!
//! Images are stored as `f64` in `[0, 1]`, row-major and channel-interleaved;
//! quantization to 8 bits happens only at file I/O. Filtering and the loss
//! gradients need sub-8-bit precision, so everything in between stays float.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

/// PSNR reported for a zero-MSE pair, so comparison tables sort cleanly.
pub const PSNR_CAP: f64 = 99.0;

/// Side length of the SSIM sliding window.
pub const SSIM_WINDOW: usize = 11;
/// Standard deviation of the Gaussian SSIM window.
pub const SSIM_SIGMA: f64 = 1.5;

const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("image dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("image {0}x{1} is smaller than the {2}x{2} SSIM window")]
    TooSmallForWindow(usize, usize, usize),
    #[error("invalid image data: {0}")]
    InvalidData(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("malformed {0}: {1}")]
    Malformed(&'static str, String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Row-major, channel-interleaved float RGB raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub const CHANNELS: usize = 3;

    /// Black image of the given dimensions.
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width >= 1 && height >= 1, "image dimensions must be >= 1");
        ImageBuffer {
            width,
            height,
            data: vec![0.0; width * height * Self::CHANNELS],
        }
    }

    /// Constant-color image.
    pub fn filled(width: usize, height: usize, color: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&color);
        }
        img
    }

    /// Build from a per-pixel function returning RGB; values are clamped to [0,1].
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    /// Wrap raw interleaved data, validating length, finiteness and range.
    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Result<Self, ImagingError> {
        if width < 1 || height < 1 {
            return Err(ImagingError::InvalidData(format!(
                "dimensions must be >= 1, got {width}x{height}"
            )));
        }
        if data.len() != width * height * Self::CHANNELS {
            return Err(ImagingError::InvalidData(format!(
                "expected {} values for {width}x{height}x3, got {}",
                width * height * Self::CHANNELS,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(ImagingError::InvalidData(format!(
                "value {v} outside [0,1]"
            )));
        }
        Ok(ImageBuffer { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Diagonal length in pixels; the 2D stand-in for scene extent.
    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        (y * self.width + x) * Self::CHANNELS
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        let i = self.index(x, y);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Store a pixel, clamping each channel into [0,1].
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = self.index(x, y);
        for c in 0..3 {
            self.data[i + c] = rgb[c].clamp(0.0, 1.0);
        }
    }

    /// Extract one channel as a planar buffer (used by the metric kernels).
    pub fn channel_plane(&self, c: usize) -> Vec<f64> {
        assert!(c < 3);
        self.data.iter().skip(c).step_by(3).copied().collect()
    }

    /// Clamp every value into [0,1]; call after arithmetic that may drift.
    pub fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    fn check_same_shape(&self, other: &ImageBuffer) -> Result<(), ImagingError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImagingError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}

/// One row of the per-run metrics log.
///
/// `level` follows the progressive pipeline: 1..=4 are the filtered stages and
/// 5 is the unfiltered tail (0 is reserved for the pre-training state).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub psnr: f64,
    pub ssim: f64,
    pub gaussian_count: usize,
    pub peak_gaussian_count: usize,
    /// Elapsed wall time since the run started, in seconds. Written to the
    /// timing sidecar, not to metrics.csv, so metrics files are reproducible
    /// byte-for-byte across identically seeded runs.
    pub wall_time: f64,
    pub level: u8,
}

impl MetricsRecord {
    pub const CSV_HEADER: &'static str =
        "iteration,psnr,ssim,gaussian_count,peak_gaussian_count,level";

    /// Deterministic CSV row (everything except wall time).
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.8},{},{},{}",
            self.iteration, self.psnr, self.ssim, self.gaussian_count, self.peak_gaussian_count, self.level
        )
    }
}

impl fmt::Display for MetricsRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "iter {:>6}  psnr {:6.2}  ssim {:.4}  n {:>6}  peak {:>6}  level {}",
            self.iteration, self.psnr, self.ssim, self.gaussian_count, self.peak_gaussian_count, self.level
        )
    }
}

/// Peak signal-to-noise ratio in dB over MAX = 1.0, capped at [`PSNR_CAP`]
/// when the MSE is zero.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImagingError> {
    a.check_same_shape(b)?;
    let mut se = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        let d = x - y;
        se += d * d;
    }
    let mse = se / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// The normalized Gaussian SSIM window as a 1D separable profile.
pub fn ssim_window_1d() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = (i as isize - half) as f64;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Per-channel planar stats of a fixed comparison target, so repeated SSIM
/// evaluations against the same target skip half the convolutions. Holds
/// reusable scratch buffers: the training loop evaluates this every
/// iteration and per-call megabyte allocations would dominate.
pub struct SsimTargetCtx {
    width: usize,
    height: usize,
    window: [f64; SSIM_WINDOW],
    /// Per channel: target plane, G*y, G*y^2 on the valid-window grid.
    planes: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>,
    scratch: std::cell::RefCell<SsimScratch>,
}

#[derive(Default)]
struct SsimScratch {
    x_plane: Vec<f64>,
    prod: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    m11: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
    sep_tmp: Vec<f64>,
}

impl SsimTargetCtx {
    pub fn new(target: &ImageBuffer) -> Result<Self, ImagingError> {
        if target.width < SSIM_WINDOW || target.height < SSIM_WINDOW {
            return Err(ImagingError::TooSmallForWindow(
                target.width,
                target.height,
                SSIM_WINDOW,
            ));
        }
        let window = ssim_window_1d();
        let (w, h) = (target.width, target.height);
        let (vw, vh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
        let mut planes = Vec::with_capacity(3);
        let mut sep_tmp = vec![0.0; vw * h];
        for c in 0..3 {
            let y = target.channel_plane(c);
            let y2: Vec<f64> = y.iter().map(|v| v * v).collect();
            let mut mu_y = vec![0.0; vw * vh];
            let mut ey2 = vec![0.0; vw * vh];
            valid_separable(&y, w, h, &window, &mut sep_tmp, &mut mu_y);
            valid_separable(&y2, w, h, &window, &mut sep_tmp, &mut ey2);
            planes.push((y, mu_y, ey2));
        }
        let scratch = SsimScratch {
            x_plane: vec![0.0; w * h],
            prod: vec![0.0; w * h],
            m1: vec![0.0; vw * vh],
            m2: vec![0.0; vw * vh],
            m11: vec![0.0; vw * vh],
            f1: vec![0.0; vw * vh],
            f2: vec![0.0; vw * vh],
            f3: vec![0.0; vw * vh],
            s1: vec![0.0; w * h],
            s2: vec![0.0; w * h],
            s3: vec![0.0; w * h],
            sep_tmp,
        };
        Ok(SsimTargetCtx {
            width: w,
            height: h,
            window,
            planes,
            scratch: std::cell::RefCell::new(scratch),
        })
    }

    /// Mean SSIM of `x` against the cached target.
    pub fn ssim(&self, x: &ImageBuffer) -> Result<f64, ImagingError> {
        self.eval(x, None)
    }

    /// Mean SSIM plus its gradient with respect to every value of `x`
    /// (interleaved layout, same as `ImageBuffer::data`).
    pub fn ssim_with_grad(&self, x: &ImageBuffer) -> Result<(f64, Vec<f64>), ImagingError> {
        let mut grad = vec![0.0; x.data.len()];
        let s = self.eval(x, Some(&mut grad))?;
        Ok((s, grad))
    }

    /// As [`ssim_with_grad`](Self::ssim_with_grad) but writing into a caller
    /// buffer, so the per-iteration loss path allocates nothing.
    pub fn ssim_with_grad_into(&self, x: &ImageBuffer, grad: &mut [f64]) -> Result<f64, ImagingError> {
        self.eval(x, Some(grad))
    }

    fn eval(&self, x: &ImageBuffer, grad: Option<&mut [f64]>) -> Result<f64, ImagingError> {
        if x.width != self.width || x.height != self.height {
            return Err(ImagingError::DimensionMismatch(
                x.width,
                x.height,
                self.width,
                self.height,
            ));
        }
        let (w, h) = (self.width, self.height);
        let (vw, vh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
        let n_windows = vw * vh;
        let norm = 1.0 / (n_windows * 3) as f64;
        let with_grad = grad.is_some();
        if let Some(g) = &grad {
            assert_eq!(g.len(), w * h * 3, "gradient buffer size");
        }
        let mut grad = grad;

        let mut total = 0.0;
        let sc = &mut *self.scratch.borrow_mut();

        for c in 0..3 {
            let (y_plane, mu_y, ey2) = &self.planes[c];
            for (dst, src) in sc.x_plane.iter_mut().zip(x.data.iter().skip(c).step_by(3)) {
                *dst = *src;
            }
            let x_plane = &sc.x_plane;

            for (p, xv) in sc.prod.iter_mut().zip(x_plane) {
                *p = xv * xv;
            }
            valid_separable(&sc.prod, w, h, &self.window, &mut sc.sep_tmp, &mut sc.m2);
            for ((p, xv), yv) in sc.prod.iter_mut().zip(x_plane).zip(y_plane) {
                *p = xv * yv;
            }
            valid_separable(&sc.prod, w, h, &self.window, &mut sc.sep_tmp, &mut sc.m11);
            valid_separable(x_plane, w, h, &self.window, &mut sc.sep_tmp, &mut sc.m1);

            for i in 0..n_windows {
                let mu_x = sc.m1[i];
                let mu_t = mu_y[i];
                let sigma_x2 = sc.m2[i] - mu_x * mu_x;
                let sigma_y2 = ey2[i] - mu_t * mu_t;
                let sigma_xy = sc.m11[i] - mu_x * mu_t;

                let a1 = 2.0 * mu_x * mu_t + SSIM_C1;
                let a2 = 2.0 * sigma_xy + SSIM_C2;
                let b1 = mu_x * mu_x + mu_t * mu_t + SSIM_C1;
                let b2 = sigma_x2 + sigma_y2 + SSIM_C2;
                let inv_bb = 1.0 / (b1 * b2);
                let s = a1 * a2 * inv_bb;
                total += s;

                if with_grad {
                    // Derivatives of S through the raw window moments of x:
                    // m1 = G*x, m2 = G*x^2, m11 = G*(x y).
                    sc.f1[i] =
                        2.0 * mu_t * (a2 - a1) * inv_bb - 2.0 * mu_x * s * (1.0 / b1 - 1.0 / b2);
                    sc.f2[i] = -s / b2;
                    sc.f3[i] = 2.0 * a1 * inv_bb;
                }
            }

            if let Some(g) = grad.as_deref_mut() {
                scatter_separable(&sc.f1, vw, vh, w, h, &self.window, &mut sc.sep_tmp, &mut sc.s1);
                scatter_separable(&sc.f2, vw, vh, w, h, &self.window, &mut sc.sep_tmp, &mut sc.s2);
                scatter_separable(&sc.f3, vw, vh, w, h, &self.window, &mut sc.sep_tmp, &mut sc.s3);
                for p in 0..w * h {
                    g[p * 3 + c] = norm * (sc.s1[p] + 2.0 * x_plane[p] * sc.s2[p] + y_plane[p] * sc.s3[p]);
                }
            }
        }

        Ok(total * norm)
    }
}

/// Mean SSIM over valid 11x11 Gaussian-weighted windows, per channel, averaged.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, ImagingError> {
    a.check_same_shape(b)?;
    SsimTargetCtx::new(b)?.ssim(a)
}

/// Separable "valid" correlation of a planar image with a symmetric window.
/// Output grid is (w - win + 1) x (h - win + 1); `tmp` must hold vw * h.
fn valid_separable(
    plane: &[f64],
    w: usize,
    h: usize,
    window: &[f64],
    tmp: &mut [f64],
    out: &mut [f64],
) {
    let win = window.len();
    let vw = w - win + 1;
    let vh = h - win + 1;
    debug_assert!(tmp.len() >= vw * h && out.len() >= vw * vh);
    // Horizontal pass: rows stay h, columns shrink to vw.
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        let dst = &mut tmp[y * vw..(y + 1) * vw];
        for x in 0..vw {
            let mut acc = 0.0;
            for (k, wk) in window.iter().enumerate() {
                acc += wk * row[x + k];
            }
            dst[x] = acc;
        }
    }
    // Vertical pass.
    for y in 0..vh {
        let dst = &mut out[y * vw..(y + 1) * vw];
        dst.fill(0.0);
        for (k, wk) in window.iter().enumerate() {
            let src = &tmp[(y + k) * vw..(y + k + 1) * vw];
            for x in 0..vw {
                dst[x] += wk * src[x];
            }
        }
    }
}

/// Transpose of [`valid_separable`]: scatter per-window coefficients back onto
/// the full pixel grid with the same window weights.
#[allow(clippy::too_many_arguments)]
fn scatter_separable(
    coef: &[f64],
    vw: usize,
    vh: usize,
    w: usize,
    h: usize,
    window: &[f64],
    tmp: &mut [f64],
    out: &mut [f64],
) {
    debug_assert!(tmp.len() >= vw * h && out.len() >= w * h);
    // Vertical scatter: (vw x vh) -> (vw x h).
    tmp[..vw * h].fill(0.0);
    for y in 0..vh {
        let src = &coef[y * vw..(y + 1) * vw];
        for (k, wk) in window.iter().enumerate() {
            let dst = &mut tmp[(y + k) * vw..(y + k + 1) * vw];
            for x in 0..vw {
                dst[x] += wk * src[x];
            }
        }
    }
    // Horizontal scatter: (vw x h) -> (w x h).
    out[..w * h].fill(0.0);
    for y in 0..h {
        let src = &tmp[y * vw..(y + 1) * vw];
        let dst = &mut out[y * w..(y + 1) * w];
        for x in 0..vw {
            let v = src[x];
            for (k, wk) in window.iter().enumerate() {
                dst[x + k] += wk * v;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// File I/O: PNG (via the image crate) and PPM P6, both 8-bit.
// ---------------------------------------------------------------------------

fn to_rgb8(img: &ImageBuffer) -> Vec<u8> {
    img.data
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> ImageBuffer {
    let data = bytes.iter().map(|b| *b as f64 / 255.0).collect();
    ImageBuffer { width, height, data }
}

/// Load a PNG or PPM (P6) image; the format is detected from the magic bytes.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer, ImagingError> {
    let bytes = fs::read(path.as_ref())?;
    load_image_from_memory(&bytes)
}

/// Decode PNG or PPM (P6) from a byte slice.
pub fn load_image_from_memory(bytes: &[u8]) -> Result<ImageBuffer, ImagingError> {
    if bytes.starts_with(b"\x89PNG") {
        let decoded = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| ImagingError::Malformed("PNG", e.to_string()))?
            .to_rgb8();
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        Ok(from_rgb8(w, h, decoded.as_raw()))
    } else if bytes.starts_with(b"P6") {
        load_ppm(bytes)
    } else {
        Err(ImagingError::UnsupportedFormat(
            "expected PNG or PPM (P6) magic bytes".into(),
        ))
    }
}

/// Save as PNG or PPM (P6) depending on the file extension.
pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), ImagingError> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => {
            let rgb = to_rgb8(img);
            let buf: image::RgbImage =
                image::ImageBuffer::from_raw(img.width as u32, img.height as u32, rgb)
                    .expect("buffer size matches dimensions");
            buf.save_with_format(path, image::ImageFormat::Png)
                .map_err(|e| ImagingError::Malformed("PNG", e.to_string()))
        }
        Some("ppm") => save_ppm(img, path),
        other => Err(ImagingError::UnsupportedFormat(format!(
            "extension {:?} (use .png or .ppm)",
            other
        ))),
    }
}

fn save_ppm(img: &ImageBuffer, path: &Path) -> Result<(), ImagingError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    write!(f, "P6\n{} {}\n255\n", img.width, img.height)?;
    f.write_all(&to_rgb8(img))?;
    Ok(())
}

fn load_ppm(bytes: &[u8]) -> Result<ImageBuffer, ImagingError> {
    let mut cursor = 2; // past "P6"
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in &mut fields {
        *field = read_ppm_int(bytes, &mut cursor)?;
    }
    let [width, height, maxval] = fields;
    if width < 1 || height < 1 {
        return Err(ImagingError::Malformed("PPM", "zero dimension".into()));
    }
    if maxval != 255 {
        return Err(ImagingError::Malformed(
            "PPM",
            format!("only maxval 255 supported, got {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    cursor += 1;
    let expected = width * height * 3;
    let raster = bytes
        .get(cursor..cursor + expected)
        .ok_or_else(|| ImagingError::Malformed("PPM", "truncated raster".into()))?;
    Ok(from_rgb8(width, height, raster))
}

fn read_ppm_int(bytes: &[u8], cursor: &mut usize) -> Result<usize, ImagingError> {
    // Skip whitespace and `#` comments.
    loop {
        match bytes.get(*cursor) {
            Some(b) if b.is_ascii_whitespace() => *cursor += 1,
            Some(b'#') => {
                while let Some(b) = bytes.get(*cursor) {
                    *cursor += 1;
                    if *b == b'\n' {
                        break;
                    }
                }
            }
            Some(_) => break,
            None => return Err(ImagingError::Malformed("PPM", "truncated header".into())),
        }
    }
    let start = *cursor;
    while let Some(b) = bytes.get(*cursor) {
        if b.is_ascii_digit() {
            *cursor += 1;
        } else {
            break;
        }
    }
    if *cursor == start {
        return Err(ImagingError::Malformed("PPM", "expected integer".into()));
    }
    std::str::from_utf8(&bytes[start..*cursor])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ImagingError::Malformed("PPM", "bad integer".into()))
}

/// Box-average downsample by an integer factor (partial boxes at the borders
/// average whatever pixels they cover).
pub fn downsample_box(img: &ImageBuffer, factor: usize) -> ImageBuffer {
    assert!(factor >= 1);
    if factor == 1 {
        return img.clone();
    }
    let ow = img.width.div_ceil(factor);
    let oh = img.height.div_ceil(factor);
    ImageBuffer::from_fn(ow, oh, |ox, oy| {
        let x0 = ox * factor;
        let y0 = oy * factor;
        let x1 = (x0 + factor).min(img.width);
        let y1 = (y0 + factor).min(img.height);
        let mut acc = [0.0; 3];
        for y in y0..y1 {
            for x in x0..x1 {
                let p = img.get(x, y);
                for c in 0..3 {
                    acc[c] += p[c];
                }
            }
        }
        let n = ((x1 - x0) * (y1 - y0)) as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    })
}

/// Bilinear upsample to exact target dimensions (pixel-center alignment).
pub fn upsample_bilinear(img: &ImageBuffer, width: usize, height: usize) -> ImageBuffer {
    let sx = img.width as f64 / width as f64;
    let sy = img.height as f64 / height as f64;
    ImageBuffer::from_fn(width, height, |ox, oy| {
        let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let x0 = fx.floor() as usize;
        let y0 = fy.floor() as usize;
        let x1 = (x0 + 1).min(img.width - 1);
        let y1 = (y0 + 1).min(img.height - 1);
        let tx = fx - x0 as f64;
        let ty = fy - y0 as f64;
        let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - tx) + p10[c] * tx;
            let bot = p01[c] * (1.0 - tx) + p11[c] * tx;
            out[c] = top * (1.0 - ty) + bot * ty;
        }
        out
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn test_image(w: usize, h: usize, seed: u64) -> ImageBuffer {
        // Cheap deterministic pseudo-random content.
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1);
        ImageBuffer::from_fn(w, h, |_, _| {
            let mut px = [0.0; 3];
            for v in &mut px {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                *v = (state >> 11) as f64 / (1u64 << 53) as f64;
            }
            px
        })
    }

    #[test]
    fn psnr_identical_hits_cap() {
        let x = test_image(16, 16, 1);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_uniform_offset_closed_form() {
        let a = ImageBuffer::filled(8, 8, [0.5, 0.5, 0.5]);
        let off = 10.0 / 255.0;
        let b = ImageBuffer::filled(8, 8, [0.5 + off, 0.5 + off, 0.5 + off]);
        let expected = 20.0 * (255.0f64 / 10.0).log10();
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn psnr_matches_scalar_loop_oracle() {
        let a = test_image(13, 9, 7);
        let b = test_image(13, 9, 8);
        // Independent per-pixel MSE loop.
        let mut se = 0.0;
        let mut n = 0usize;
        for y in 0..9 {
            for x in 0..13 {
                let (pa, pb) = (a.get(x, y), b.get(x, y));
                for c in 0..3 {
                    se += (pa[c] - pb[c]) * (pa[c] - pb[c]);
                    n += 1;
                }
            }
        }
        let expected = 10.0 * (1.0 / (se / n as f64)).log10();
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn psnr_dimension_mismatch_errors() {
        let a = ImageBuffer::new(4, 4);
        let b = ImageBuffer::new(5, 4);
        let err = psnr(&a, &b).unwrap_err().to_string();
        assert!(err.contains("4x4") && err.contains("5x4"), "{err}");
    }

    #[test]
    fn ssim_self_is_one() {
        let x = test_image(16, 16, 3);
        assert_abs_diff_eq!(ssim(&x, &x).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_inverted_binary_is_negative() {
        // Binary checker pattern, no mid-gray, against its inverse.
        let a = ImageBuffer::from_fn(16, 16, |x, y| {
            let v = if (x / 4 + y / 4) % 2 == 0 { 0.0 } else { 1.0 };
            [v, v, v]
        });
        let b = ImageBuffer::from_fn(16, 16, |x, y| {
            let p = a.get(x, y);
            [1.0 - p[0], 1.0 - p[1], 1.0 - p[2]]
        });
        assert!(ssim(&a, &b).unwrap() < 0.0);
    }

    #[test]
    fn ssim_too_small_errors() {
        let a = ImageBuffer::new(10, 16);
        assert!(matches!(
            ssim(&a, &a),
            Err(ImagingError::TooSmallForWindow(10, 16, 11))
        ));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let x = test_image(14, 13, 21);
        let y = test_image(14, 13, 22);
        let ctx = SsimTargetCtx::new(&y).unwrap();
        let (_, grad) = ctx.ssim_with_grad(&x).unwrap();
        let h = 1e-6;
        // Probe a scattering of coordinates, including corners.
        for &i in &[0usize, 1, 40, 173, 14 * 13 * 3 - 1, 300, 99] {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (ctx.ssim(&xp).unwrap() - ctx.ssim(&xm).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(grad[i], fd, epsilon = 1e-6);
        }
    }

    #[test]
    fn save_load_roundtrip_quantization_bound() {
        let img = ImageBuffer::from_fn(4, 4, |x, y| {
            [x as f64 / 3.0, y as f64 / 3.0, (x + y) as f64 / 6.0]
        });
        let dir = tempfile::tempdir().unwrap();
        for ext in ["png", "ppm"] {
            let path = dir.path().join(format!("grad.{ext}"));
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            for (a, b) in img.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn load_one_pixel_white_ppm() {
        let bytes = b"P6\n1 1\n255\n\xff\xff\xff";
        let img = load_image_from_memory(bytes).unwrap();
        assert_eq!(img.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn malformed_header_is_an_error() {
        assert!(load_image_from_memory(b"P6\n1 x\n255\n...").is_err());
        assert!(load_image_from_memory(b"P5\n1 1\n255\n.").is_err());
        assert!(load_image_from_memory(b"P6\n2 2\n255\nshort").is_err());
    }

    #[test]
    fn metrics_record_csv_row_is_stable() {
        let rec = MetricsRecord {
            iteration: 100,
            psnr: 31.25,
            ssim: 0.9,
            gaussian_count: 1200,
            peak_gaussian_count: 1500,
            wall_time: 1.5,
            level: 2,
        };
        assert_eq!(rec.csv_row(), "100,31.250000,0.90000000,1200,1500,2");
    }

    #[test]
    fn resize_helpers_preserve_constant_images() {
        let img = ImageBuffer::filled(32, 24, [0.25, 0.5, 0.75]);
        let down = downsample_box(&img, 4);
        assert_eq!(down.width(), 8);
        assert_eq!(down.height(), 6);
        let up = upsample_bilinear(&down, 32, 24);
        for px in up.data().chunks_exact(3) {
            assert_abs_diff_eq!(px[0], 0.25, epsilon = 1e-12);
            assert_abs_diff_eq!(px[1], 0.5, epsilon = 1e-12);
            assert_abs_diff_eq!(px[2], 0.75, epsilon = 1e-12);
        }
    }
}
