//! Volume, mask and scale-map storage plus axial patch extraction.
//!
//! On-disk format is a two-file pair: a plain-text `key: value` header
//! (`dims`, `spacing`, `dtype`, `order`) next to a raw little-endian data
//! file with the same stem and a `.raw` extension. Intensities are int16
//! Hounsfield units in x-fastest order; masks and scale maps use uint8.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolioError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad header {path}: {reason}")]
    Header { path: PathBuf, reason: String },
    #[error("data size mismatch: header declares {expected} values, raw file holds {actual}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("patch size {n} invalid for slice extent {nx}x{ny}")]
    PatchSize { n: usize, nx: usize, ny: usize },
}

/// 3D scalar field of CT intensities with physical voxel spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    voxels: Vec<i16>,
}

impl Volume {
    pub fn new(dims: (usize, usize, usize), spacing: (f64, f64, f64), voxels: Vec<i16>) -> Self {
        assert!(dims.0 >= 1 && dims.1 >= 1 && dims.2 >= 1, "empty dims");
        assert!(
            spacing.0 > 0.0 && spacing.1 > 0.0 && spacing.2 > 0.0,
            "non-positive spacing"
        );
        assert_eq!(voxels.len(), dims.0 * dims.1 * dims.2, "voxel count");
        Self {
            dims,
            spacing,
            voxels,
        }
    }

    pub fn filled(dims: (usize, usize, usize), spacing: (f64, f64, f64), value: i16) -> Self {
        Self::new(dims, spacing, vec![value; dims.0 * dims.1 * dims.2])
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn spacing(&self) -> (f64, f64, f64) {
        self.spacing
    }

    pub fn voxels(&self) -> &[i16] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [i16] {
        &mut self.voxels
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> i16 {
        self.voxels[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: i16) {
        let i = self.index(x, y, z);
        self.voxels[i] = v;
    }
}

/// Binary voxel mask paired with a volume of the same dims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    dims: (usize, usize, usize),
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(dims: (usize, usize, usize), bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), dims.0 * dims.1 * dims.2);
        Self { dims, bits }
    }

    pub fn empty(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            bits: vec![false; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn full(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            bits: vec![true; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.index(x, y, z);
        self.bits[i] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Voxels present in `self` but absent from `other`.
    pub fn minus(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims, other.dims);
        Mask {
            dims: self.dims,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && !b)
                .collect(),
        }
    }

    pub fn intersect(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims, other.dims);
        Mask {
            dims: self.dims,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }

    pub fn union(&self, other: &Mask) -> Mask {
        assert_eq!(self.dims, other.dims);
        Mask {
            dims: self.dims,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| a || b)
                .collect(),
        }
    }
}

/// Per-voxel ball-scale values; 0 outside the lung mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScaleMap {
    dims: (usize, usize, usize),
    scale: Vec<u8>,
}

impl ScaleMap {
    pub fn new(dims: (usize, usize, usize), scale: Vec<u8>) -> Self {
        assert_eq!(scale.len(), dims.0 * dims.1 * dims.2);
        Self { dims, scale }
    }

    pub fn zeros(dims: (usize, usize, usize)) -> Self {
        Self {
            dims,
            scale: vec![0; dims.0 * dims.1 * dims.2],
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn values(&self) -> &[u8] {
        &self.scale
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.scale[self.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: u8) {
        let i = self.index(x, y, z);
        self.scale[i] = v;
    }
}

/// One axial n-by-n window of intensities with the matching lung-mask bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub z: usize,
    pub x0: usize,
    pub y0: usize,
    pub n: usize,
    pub pixels: Array2<i16>,
    pub mask_bits: Array2<bool>,
}

impl Patch {
    pub fn pixels_f64(&self) -> Array2<f64> {
        self.pixels.mapv(|v| v as f64)
    }
}

struct RawHeader {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    dtype: String,
}

fn raw_path(header_path: &Path) -> PathBuf {
    header_path.with_extension("raw")
}

fn write_header(path: &Path, h: &RawHeader) -> Result<(), VolioError> {
    let text = format!(
        "dims: {} {} {}\nspacing: {} {} {}\ndtype: {}\norder: xyz\n",
        h.dims.0, h.dims.1, h.dims.2, h.spacing.0, h.spacing.1, h.spacing.2, h.dtype
    );
    fs::write(path, text).map_err(|source| VolioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_header(path: &Path) -> Result<RawHeader, VolioError> {
    let text = fs::read_to_string(path).map_err(|source| VolioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |reason: &str| VolioError::Header {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let mut dims = None;
    let mut spacing = None;
    let mut dtype = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        let value = value.trim();
        match key.trim() {
            "dims" => {
                let parts: Vec<usize> = value
                    .split_whitespace()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("unparseable dims"))?;
                if parts.len() != 3 {
                    return Err(bad("dims needs 3 values"));
                }
                dims = Some((parts[0], parts[1], parts[2]));
            }
            "spacing" => {
                let parts: Vec<f64> = value
                    .split_whitespace()
                    .map(|t| t.parse())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("unparseable spacing"))?;
                if parts.len() != 3 {
                    return Err(bad("spacing needs 3 values"));
                }
                spacing = Some((parts[0], parts[1], parts[2]));
            }
            "dtype" => dtype = Some(value.to_string()),
            "order" => {
                if value != "xyz" {
                    return Err(bad("only xyz order supported"));
                }
            }
            _ => return Err(bad(&format!("unknown key '{}'", key.trim()))),
        }
    }
    let dims = dims.ok_or_else(|| bad("missing dims"))?;
    let spacing = spacing.ok_or_else(|| bad("missing spacing"))?;
    let dtype = dtype.ok_or_else(|| bad("missing dtype"))?;
    if dims.0 < 1 || dims.1 < 1 || dims.2 < 1 {
        return Err(bad("dims must be >= 1"));
    }
    if spacing.0 <= 0.0 || spacing.1 <= 0.0 || spacing.2 <= 0.0 {
        return Err(bad("spacing must be > 0"));
    }
    Ok(RawHeader {
        dims,
        spacing,
        dtype,
    })
}

fn read_raw(path: &Path) -> Result<Vec<u8>, VolioError> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| VolioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

fn write_raw(path: &Path, bytes: &[u8]) -> Result<(), VolioError> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|source| VolioError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn write_volume(path: &Path, vol: &Volume) -> Result<(), VolioError> {
    write_header(
        path,
        &RawHeader {
            dims: vol.dims,
            spacing: vol.spacing,
            dtype: "int16le".to_string(),
        },
    )?;
    let mut bytes = Vec::with_capacity(vol.voxels.len() * 2);
    for v in &vol.voxels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_raw(&raw_path(path), &bytes)
}

pub fn read_volume(path: &Path) -> Result<Volume, VolioError> {
    let h = read_header(path)?;
    if h.dtype != "int16le" {
        return Err(VolioError::Header {
            path: path.to_path_buf(),
            reason: format!("expected dtype int16le, got {}", h.dtype),
        });
    }
    let bytes = read_raw(&raw_path(path))?;
    let expected = h.dims.0 * h.dims.1 * h.dims.2;
    if bytes.len() != expected * 2 {
        return Err(VolioError::SizeMismatch {
            expected,
            actual: bytes.len() / 2,
        });
    }
    let voxels = bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(Volume::new(h.dims, h.spacing, voxels))
}

pub fn write_mask(path: &Path, mask: &Mask, spacing: (f64, f64, f64)) -> Result<(), VolioError> {
    write_header(
        path,
        &RawHeader {
            dims: mask.dims,
            spacing,
            dtype: "uint8".to_string(),
        },
    )?;
    let bytes: Vec<u8> = mask.bits.iter().map(|&b| b as u8).collect();
    write_raw(&raw_path(path), &bytes)
}

pub fn read_mask(path: &Path) -> Result<Mask, VolioError> {
    let h = read_header(path)?;
    if h.dtype != "uint8" {
        return Err(VolioError::Header {
            path: path.to_path_buf(),
            reason: format!("expected dtype uint8, got {}", h.dtype),
        });
    }
    let bytes = read_raw(&raw_path(path))?;
    let expected = h.dims.0 * h.dims.1 * h.dims.2;
    if bytes.len() != expected {
        return Err(VolioError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(Mask::new(h.dims, bytes.iter().map(|&b| b != 0).collect()))
}

pub fn write_scale_map(
    path: &Path,
    sm: &ScaleMap,
    spacing: (f64, f64, f64),
) -> Result<(), VolioError> {
    write_header(
        path,
        &RawHeader {
            dims: sm.dims,
            spacing,
            dtype: "uint8".to_string(),
        },
    )?;
    write_raw(&raw_path(path), &sm.scale)
}

pub fn read_scale_map(path: &Path) -> Result<ScaleMap, VolioError> {
    let h = read_header(path)?;
    if h.dtype != "uint8" {
        return Err(VolioError::Header {
            path: path.to_path_buf(),
            reason: format!("expected dtype uint8, got {}", h.dtype),
        });
    }
    let bytes = read_raw(&raw_path(path))?;
    let expected = h.dims.0 * h.dims.1 * h.dims.2;
    if bytes.len() != expected {
        return Err(VolioError::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(ScaleMap::new(h.dims, bytes))
}

/// Non-overlapping n-by-n tiling of every axial slice, keeping only tiles
/// that contain at least one lung voxel. Order is fixed by (z, y0, x0).
pub fn tile_patches(vol: &Volume, lung_mask: &Mask, n: usize) -> Result<Vec<Patch>, VolioError> {
    let (nx, ny, nz) = vol.dims;
    if lung_mask.dims() != vol.dims {
        return Err(VolioError::DimMismatch(format!(
            "volume {:?} vs mask {:?}",
            vol.dims,
            lung_mask.dims()
        )));
    }
    if n % 2 == 0 || n > nx || n > ny {
        return Err(VolioError::PatchSize { n, nx, ny });
    }
    let mut out = Vec::new();
    for z in 0..nz {
        let mut y0 = 0;
        while y0 + n <= ny {
            let mut x0 = 0;
            while x0 + n <= nx {
                let mut any = false;
                let mut pixels = Array2::zeros((n, n));
                let mut mask_bits = Array2::from_elem((n, n), false);
                for dy in 0..n {
                    for dx in 0..n {
                        let b = lung_mask.get(x0 + dx, y0 + dy, z);
                        any |= b;
                        pixels[[dy, dx]] = vol.get(x0 + dx, y0 + dy, z);
                        mask_bits[[dy, dx]] = b;
                    }
                }
                if any {
                    out.push(Patch {
                        z,
                        x0,
                        y0,
                        n,
                        pixels,
                        mask_bits,
                    });
                }
                x0 += n;
            }
            y0 += n;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn volume_round_trip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.hdr");
        let vol = Volume::new((2, 2, 1), (1.0, 1.0, 1.0), vec![0; 4]);
        write_volume(&path, &vol).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(back, vol);
    }

    #[test]
    fn size_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.hdr");
        let vol = Volume::new((4, 4, 4), (1.0, 1.0, 1.0), vec![7; 64]);
        write_volume(&path, &vol).unwrap();
        // truncate raw payload to 63 values
        let raw = raw_path(&path);
        let bytes = fs::read(&raw).unwrap();
        fs::write(&raw, &bytes[..63 * 2]).unwrap();
        match read_volume(&path) {
            Err(VolioError::SizeMismatch { expected, actual }) => {
                assert_eq!(expected, 64);
                assert_eq!(actual, 63);
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            read_volume(Path::new("/nonexistent/v.hdr")),
            Err(VolioError::Io { .. })
        ));
    }

    #[test]
    fn bad_spacing_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.hdr");
        fs::write(&path, "dims: 1 1 1\nspacing: 0 1 1\ndtype: int16le\norder: xyz\n").unwrap();
        assert!(matches!(read_volume(&path), Err(VolioError::Header { .. })));
    }

    #[test]
    fn tiling_18x18_full_mask() {
        let vol = Volume::filled((18, 18, 1), (1.0, 1.0, 1.0), 0);
        let mask = Mask::full((18, 18, 1));
        let patches = tile_patches(&vol, &mask, 9).unwrap();
        let origins: Vec<_> = patches.iter().map(|p| (p.x0, p.y0)).collect();
        assert_eq!(origins, vec![(0, 0), (9, 0), (0, 9), (9, 9)]);
    }

    #[test]
    fn tiling_empty_mask() {
        let vol = Volume::filled((18, 18, 1), (1.0, 1.0, 1.0), 0);
        let mask = Mask::empty((18, 18, 1));
        assert!(tile_patches(&vol, &mask, 9).unwrap().is_empty());
    }

    #[test]
    fn oversized_patch_rejected() {
        let vol = Volume::filled((8, 8, 1), (1.0, 1.0, 1.0), 0);
        let mask = Mask::full((8, 8, 1));
        assert!(matches!(
            tile_patches(&vol, &mask, 9),
            Err(VolioError::PatchSize { .. })
        ));
    }

    proptest! {
        #[test]
        fn patches_respect_bounds(
            nx in 9usize..40,
            ny in 9usize..40,
            nz in 1usize..4,
            n in prop::sample::select(vec![9usize, 13, 17]),
            seed in any::<u64>(),
        ) {
            prop_assume!(n <= nx && n <= ny);
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let bits: Vec<bool> = (0..nx * ny * nz).map(|_| rng.gen_bool(0.3)).collect();
            let mask = Mask::new((nx, ny, nz), bits);
            let vol = Volume::filled((nx, ny, nz), (1.0, 1.0, 1.0), 0);
            let patches = tile_patches(&vol, &mask, n).unwrap();
            let mut prev = None;
            for p in &patches {
                prop_assert!(p.x0 + n <= nx && p.y0 + n <= ny && p.z < nz);
                prop_assert!(p.mask_bits.iter().any(|&b| b));
                let key = (p.z, p.y0, p.x0);
                if let Some(prev) = prev {
                    prop_assert!(key > prev, "ordering not lexicographic");
                }
                prev = Some(key);
            }
        }
    }
}
