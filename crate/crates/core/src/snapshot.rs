//! Scene snapshot files: a little-endian binary Gaussian table plus a JSON
//! metadata sidecar.
//!
//! Binary layout (all little-endian):
//! - magic `FSG2` (4 bytes)
//! - format version, u32 (currently 1)
//! - Gaussian count, u64
//! - per Gaussian, in declaration order: position x, position y, log_scale x,
//!   log_scale y, rotation, raw_opacity, color r, color g, color b, depth_key
//!   (10 x f64), then creation_index (u64) -- 88 bytes each.
//!
//! The sidecar carries run metadata and lives next to the table with a
//! `.json` extension. Values round-trip exactly (f64 bit patterns preserved),
//! so a loaded snapshot renders a bit-identical image.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::splat::{Gaussian2D, GaussianSet};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"FSG2";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a snapshot file (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    BadVersion(u32),
    #[error("snapshot truncated: expected {expected} Gaussians, table holds {actual} bytes")]
    Truncated { expected: u64, actual: usize },
    #[error("sidecar error: {0}")]
    Sidecar(#[from] serde_json::Error),
}

/// Run metadata stored beside the Gaussian table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub format_version: u32,
    pub iteration: u64,
    pub level: u8,
    /// Kernel size that produced the training target this level used.
    pub kernel_size: usize,
    pub width: usize,
    pub height: usize,
    pub background: [f64; 3],
    pub seed: u64,
    pub mode: String,
    pub gaussian_count: usize,
    pub peak_count: usize,
}

pub fn sidecar_path(bin_path: &Path) -> PathBuf {
    bin_path.with_extension("json")
}

/// Write the Gaussian table and its sidecar.
pub fn save_snapshot(
    gaussians: &[Gaussian2D],
    meta: &SnapshotMeta,
    bin_path: &Path,
) -> Result<(), SnapshotError> {
    let mut buf = Vec::with_capacity(16 + gaussians.len() * 88);
    buf.extend_from_slice(SNAPSHOT_MAGIC);
    buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(gaussians.len() as u64).to_le_bytes());
    for g in gaussians {
        for v in [
            g.position.x,
            g.position.y,
            g.log_scale.x,
            g.log_scale.y,
            g.rotation,
            g.raw_opacity,
            g.color[0],
            g.color[1],
            g.color[2],
            g.depth_key,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&g.creation_index.to_le_bytes());
    }
    let mut f = io::BufWriter::new(fs::File::create(bin_path)?);
    f.write_all(&buf)?;
    f.flush()?;

    let json = serde_json::to_string_pretty(meta)?;
    fs::write(sidecar_path(bin_path), json)?;
    Ok(())
}

/// Load the Gaussian table; the result carries fresh optimizer/ADC state.
pub fn load_snapshot(bin_path: &Path) -> Result<GaussianSet, SnapshotError> {
    let mut bytes = Vec::new();
    fs::File::open(bin_path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[0..4] != SNAPSHOT_MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SNAPSHOT_VERSION {
        return Err(SnapshotError::BadVersion(version));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let table = &bytes[16..];
    if table.len() != count as usize * 88 {
        return Err(SnapshotError::Truncated { expected: count, actual: table.len() });
    }
    let mut gaussians = Vec::with_capacity(count as usize);
    for rec in table.chunks_exact(88) {
        let f = |i: usize| f64::from_le_bytes(rec[i * 8..(i + 1) * 8].try_into().unwrap());
        gaussians.push(Gaussian2D {
            position: Vector2::new(f(0), f(1)),
            log_scale: Vector2::new(f(2), f(3)),
            rotation: f(4),
            raw_opacity: f(5),
            color: [f(6), f(7), f(8)],
            depth_key: f(9),
            creation_index: u64::from_le_bytes(rec[80..88].try_into().unwrap()),
        });
    }
    Ok(GaussianSet::from_gaussians(gaussians))
}

pub fn load_snapshot_meta(bin_path: &Path) -> Result<SnapshotMeta, SnapshotError> {
    let json = fs::read_to_string(sidecar_path(bin_path))?;
    Ok(serde_json::from_str(&json)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splat::{render, RenderOptions};
    use rand::{Rng, SeedableRng};

    fn random_gaussians(n: usize) -> Vec<Gaussian2D> {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(9);
        (0..n)
            .map(|i| Gaussian2D {
                position: Vector2::new(rng.gen_range(0.0..16.0), rng.gen_range(0.0..16.0)),
                log_scale: Vector2::new(rng.gen_range(-0.5..1.0), rng.gen_range(-0.5..1.0)),
                rotation: rng.gen_range(-3.0..3.0),
                raw_opacity: rng.gen_range(-2.0..2.0),
                color: [rng.gen(), rng.gen(), rng.gen()],
                depth_key: rng.gen(),
                creation_index: i as u64,
            })
            .collect()
    }

    #[test]
    fn roundtrip_renders_bit_identical() {
        let gaussians = random_gaussians(12);
        let set = GaussianSet::from_gaussians(gaussians.clone());
        let meta = SnapshotMeta {
            format_version: SNAPSHOT_VERSION,
            iteration: 2999,
            level: 1,
            kernel_size: 15,
            width: 16,
            height: 16,
            background: [0.0, 0.0, 0.0],
            seed: 7,
            mode: "freq_modulated".into(),
            gaussian_count: 12,
            peak_count: 12,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.bin");
        save_snapshot(&gaussians, &meta, &path).unwrap();

        let loaded = load_snapshot(&path).unwrap();
        assert_eq!(loaded.gaussians, gaussians);
        let opts = RenderOptions::default();
        let a = render(&set, 16, 16, [0.0; 3], &opts);
        let b = render(&loaded, 16, 16, [0.0; 3], &opts);
        assert_eq!(a.image.data(), b.image.data());

        assert_eq!(load_snapshot_meta(&path).unwrap(), meta);
    }

    #[test]
    fn save_is_deterministic() {
        let gaussians = random_gaussians(5);
        let meta = SnapshotMeta {
            format_version: SNAPSHOT_VERSION,
            iteration: 0,
            level: 1,
            kernel_size: 15,
            width: 8,
            height: 8,
            background: [0.0; 3],
            seed: 0,
            mode: "baseline".into(),
            gaussian_count: 5,
            peak_count: 5,
        };
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.bin"), dir.path().join("b.bin"));
        save_snapshot(&gaussians, &meta, &p1).unwrap();
        save_snapshot(&gaussians, &meta, &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        assert_eq!(
            fs::read(sidecar_path(&p1)).unwrap(),
            fs::read(sidecar_path(&p2)).unwrap()
        );
    }

    #[test]
    fn bad_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        fs::write(&path, b"not a snapshot").unwrap();
        assert!(matches!(load_snapshot(&path), Err(SnapshotError::BadMagic)));

        let mut bytes = Vec::new();
        bytes.extend_from_slice(SNAPSHOT_MAGIC);
        bytes.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 40]); // far too short for 3 records
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_snapshot(&path), Err(SnapshotError::Truncated { .. })));
    }
}
