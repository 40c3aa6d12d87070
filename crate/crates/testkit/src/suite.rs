//! The fixed toy image suite the regression and acceptance tests train on:
//! three synthetic images (gradient, checkerboard, noise-free cartoon) and
//! two 256x256 photographs embedded at build time.

use freqsplat_core::imaging::{load_image_from_memory, ImageBuffer};

pub const PHOTO_PORTRAIT: &[u8] = include_bytes!("../testdata/photo_portrait_256.png");
pub const PHOTO_CAT: &[u8] = include_bytes!("../testdata/photo_cat_256.png");

/// Smooth two-axis color gradient.
pub fn gradient_image(width: usize, height: usize) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, |x, y| {
        let fx = x as f64 / (width - 1).max(1) as f64;
        let fy = y as f64 / (height - 1).max(1) as f64;
        [fx, fy, 1.0 - 0.5 * (fx + fy)]
    })
}

/// Two-tone checkerboard with the given cell size.
pub fn checkerboard_image(width: usize, height: usize, cell: usize) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, |x, y| {
        if (x / cell + y / cell) % 2 == 0 {
            [0.92, 0.92, 0.88]
        } else {
            [0.12, 0.14, 0.22]
        }
    })
}

/// Noise-free cartoon: flat-color shapes with soft edges on a plain
/// background. Piecewise-constant regions with a few smooth boundaries.
pub fn cartoon_image(width: usize, height: usize) -> ImageBuffer {
    let w = width as f64;
    let h = height as f64;
    // Soft-edged membership: 1 inside, 0 outside, ~1.5 px transition.
    let soft = |d: f64| (0.5 - d / 1.5).clamp(0.0, 1.0);
    ImageBuffer::from_fn(width, height, |x, y| {
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        let mut color = [0.85, 0.87, 0.92]; // sky

        // Ground.
        let ground = soft(0.62 * h - py);
        let ground_color = [0.35, 0.62, 0.30];
        for c in 0..3 {
            color[c] = color[c] * (1.0 - ground) + ground_color[c] * ground;
        }
        // Sun.
        let sun_d = ((px - 0.75 * w).powi(2) + (py - 0.22 * h).powi(2)).sqrt() - 0.1 * w;
        let sun = soft(sun_d);
        for (c, sc) in color.iter_mut().zip([0.98, 0.83, 0.25]) {
            *c = *c * (1.0 - sun) + sc * sun;
        }
        // House body.
        let inside_x = soft((0.18 * w - px).max(px - 0.45 * w));
        let inside_y = soft((0.45 * h - py).max(py - 0.75 * h));
        let house = inside_x.min(inside_y);
        for (c, hc) in color.iter_mut().zip([0.78, 0.33, 0.25]) {
            *c = *c * (1.0 - house) + hc * house;
        }
        // Roof: triangle above the body.
        let apex_x = 0.315 * w;
        let roof_half = 0.16 * w;
        let roof_top = 0.28 * h;
        let roof_base = 0.45 * h;
        if py < roof_base + 2.0 {
            let t = ((py - roof_top) / (roof_base - roof_top)).clamp(0.0, 1.0);
            let half = roof_half * t;
            let d = (px - apex_x).abs() - half;
            let roof = soft(d).min(soft(roof_top - py));
            for (c, rc) in color.iter_mut().zip([0.30, 0.18, 0.16]) {
                *c = *c * (1.0 - roof) + rc * roof;
            }
        }
        // Door.
        let dx = soft((0.28 * w - px).max(px - 0.35 * w));
        let dy = soft((0.58 * h - py).max(py - 0.75 * h));
        let door = dx.min(dy);
        for (c, dc) in color.iter_mut().zip([0.24, 0.16, 0.10]) {
            *c = *c * (1.0 - door) + dc * door;
        }
        color
    })
}

/// Decode one of the embedded photographs.
pub fn photo(bytes: &[u8]) -> ImageBuffer {
    load_image_from_memory(bytes).expect("embedded photos decode")
}

/// The five-image acceptance suite, named. Synthetic images are 64x64 (small
/// enough for desk-scale regression pairs), photographs are 256x256.
pub fn acceptance_suite() -> Vec<(&'static str, ImageBuffer)> {
    vec![
        ("gradient", gradient_image(64, 64)),
        ("checkerboard", checkerboard_image(64, 64, 8)),
        ("cartoon", cartoon_image(64, 64)),
        ("photo_portrait", photo(PHOTO_PORTRAIT)),
        ("photo_cat", photo(PHOTO_CAT)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_images_have_expected_shapes() {
        let suite = acceptance_suite();
        assert_eq!(suite.len(), 5);
        for (name, img) in &suite {
            if name.starts_with("photo") {
                assert_eq!((img.width(), img.height()), (256, 256), "{name}");
            } else {
                assert_eq!((img.width(), img.height()), (64, 64), "{name}");
            }
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn cartoon_is_noise_free_but_structured() {
        let img = cartoon_image(64, 64);
        // Structured: multiple distinct flat regions.
        let mut distinct = std::collections::BTreeSet::new();
        for px in img.data().chunks_exact(3) {
            distinct.insert((px[0] * 100.0) as i32);
        }
        assert!(distinct.len() > 3);
    }
}
