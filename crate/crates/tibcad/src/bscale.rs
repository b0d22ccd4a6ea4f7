//! Ball-scale map computation and small-scale candidate selection.
//!
//! Each lung voxel gets the radius of the largest homogeneous digital ball
//! centered on it, grown shell by shell until a shell's homogeneous
//! fraction drops below the threshold. Balls are in-plane 2D disks by
//! default since slice spacing is coarse relative to pixel spacing.

use thiserror::Error;

use crate::volio::{Mask, ScaleMap, Volume};

#[derive(Debug, Error)]
pub enum BscaleError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
}

#[derive(Debug, Clone, Copy)]
pub struct BScaleParams {
    /// HU tolerance for two voxels to count as homogeneous.
    pub intensity_tol: f64,
    /// Minimum fraction of a shell that must be homogeneous with the
    /// center for growth to continue, in (0,1].
    pub fraction_threshold: f64,
    /// Maximum radius searched, in voxels.
    pub r_max: u8,
    /// Largest scale still treated as a TIB candidate.
    pub candidate_max_scale: u8,
    /// Grow 3D digital spheres instead of in-slice disks.
    pub use_3d: bool,
}

impl Default for BScaleParams {
    fn default() -> Self {
        Self {
            intensity_tol: 150.0,
            fraction_threshold: 0.85,
            r_max: 8,
            candidate_max_scale: 3,
            use_3d: false,
        }
    }
}

/// Shell offsets for radius rho: ball(rho) minus ball(rho-1) under
/// Euclidean voxel distance.
pub fn shell_offsets_2d(rho: u32) -> Vec<(i64, i64)> {
    let r = rho as i64;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = dx * dx + dy * dy;
            if d2 <= r * r && d2 > (r - 1) * (r - 1) {
                out.push((dx, dy));
            }
        }
    }
    out
}

pub fn shell_offsets_3d(rho: u32) -> Vec<(i64, i64, i64)> {
    let r = rho as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = dx * dx + dy * dy + dz * dz;
                if d2 <= r * r && d2 > (r - 1) * (r - 1) {
                    out.push((dx, dy, dz));
                }
            }
        }
    }
    out
}

fn shells(p: &BScaleParams) -> Vec<Vec<(i64, i64, i64)>> {
    (1..=p.r_max as u32)
        .map(|rho| {
            if p.use_3d {
                shell_offsets_3d(rho)
            } else {
                shell_offsets_2d(rho)
                    .into_iter()
                    .map(|(dx, dy)| (dx, dy, 0))
                    .collect()
            }
        })
        .collect()
}

/// Scale of one voxel: 1 plus the number of consecutive homogeneous
/// shells, clamped to [1, r_max]. Out-of-bounds shell voxels count as
/// inhomogeneous.
fn voxel_scale(
    vol: &Volume,
    x: usize,
    y: usize,
    z: usize,
    shells: &[Vec<(i64, i64, i64)>],
    p: &BScaleParams,
) -> u8 {
    let (nx, ny, nz) = vol.dims();
    let center = vol.get(x, y, z) as f64;
    let mut passing = 0u8;
    for shell in shells {
        let mut homog = 0usize;
        for &(dx, dy, dz) in shell {
            let (ux, uy, uz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
            if ux < 0 || uy < 0 || uz < 0 || ux >= nx as i64 || uy >= ny as i64 || uz >= nz as i64 {
                continue; // out of bounds counts as inhomogeneous
            }
            let v = vol.get(ux as usize, uy as usize, uz as usize) as f64;
            if (v - center).abs() <= p.intensity_tol {
                homog += 1;
            }
        }
        if (homog as f64) < p.fraction_threshold * shell.len() as f64 {
            break;
        }
        passing += 1;
    }
    passing.max(1).min(p.r_max)
}

/// Compute the per-voxel b-scale map over the lung mask; 0 elsewhere.
pub fn bscale_map(
    vol: &Volume,
    lung_mask: &Mask,
    p: &BScaleParams,
) -> Result<ScaleMap, BscaleError> {
    if vol.dims() != lung_mask.dims() {
        return Err(BscaleError::DimMismatch(format!(
            "volume {:?} vs mask {:?}",
            vol.dims(),
            lung_mask.dims()
        )));
    }
    let shells = shells(p);
    let (nx, ny, nz) = vol.dims();
    let mut sm = ScaleMap::zeros(vol.dims());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if lung_mask.get(x, y, z) {
                    sm.set(x, y, z, voxel_scale(vol, x, y, z, &shells, p));
                }
            }
        }
    }
    Ok(sm)
}

/// Candidate TIB mask: voxels whose scale lies in [1, candidate_max_scale].
pub fn candidates(sm: &ScaleMap, p: &BScaleParams) -> Mask {
    Mask::new(
        sm.dims(),
        sm.values()
            .iter()
            .map(|&s| s >= 1 && s <= p.candidate_max_scale)
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight-from-definition oracle: for each candidate radius r check
    /// every shell rho <= r by scanning the full ball, no incremental
    /// bookkeeping shared with the implementation.
    pub(crate) fn exhaustive_scale_2d(
        img: &[Vec<i16>],
        x: i64,
        y: i64,
        p: &BScaleParams,
    ) -> u8 {
        let h = img.len() as i64;
        let w = img[0].len() as i64;
        let center = img[y as usize][x as usize] as f64;
        let shell_ok = |rho: i64| {
            let mut total = 0usize;
            let mut homog = 0usize;
            for dy in -rho..=rho {
                for dx in -rho..=rho {
                    let d2 = dx * dx + dy * dy;
                    if d2 <= rho * rho && d2 > (rho - 1) * (rho - 1) {
                        total += 1;
                        let (ux, uy) = (x + dx, y + dy);
                        if ux >= 0 && uy >= 0 && ux < w && uy < h {
                            let v = img[uy as usize][ux as usize] as f64;
                            if (v - center).abs() <= p.intensity_tol {
                                homog += 1;
                            }
                        }
                    }
                }
            }
            homog as f64 >= p.fraction_threshold * total as f64
        };
        let mut best = 0i64;
        for r in 1..=p.r_max as i64 {
            if (1..=r).all(shell_ok) {
                best = r;
            }
        }
        best.max(1).min(p.r_max as i64) as u8
    }

    fn single_slice_volume(img: &[Vec<i16>]) -> (Volume, Mask) {
        let ny = img.len();
        let nx = img[0].len();
        let mut voxels = Vec::with_capacity(nx * ny);
        for row in img {
            voxels.extend_from_slice(row);
        }
        (
            Volume::new((nx, ny, 1), (1.0, 1.0, 1.0), voxels),
            Mask::full((nx, ny, 1)),
        )
    }

    #[test]
    fn constant_image_max_scale() {
        let vol = Volume::filled((16, 16, 1), (1.0, 1.0, 1.0), -800);
        let mask = Mask::full((16, 16, 1));
        let p = BScaleParams {
            r_max: 5,
            ..Default::default()
        };
        let sm = bscale_map(&vol, &mask, &p).unwrap();
        // interior voxels see only in-bounds homogeneous shells
        for y in 5..11 {
            for x in 5..11 {
                assert_eq!(sm.get(x, y, 0), 5);
            }
        }
    }

    #[test]
    fn disk_center_scale_matches_radius() {
        // homogeneous disk of radius 6 in contrasting background
        let mut img = vec![vec![0i16; 32]; 32];
        for y in 0..32i64 {
            for x in 0..32i64 {
                if (x - 16) * (x - 16) + (y - 16) * (y - 16) <= 36 {
                    img[y as usize][x as usize] = -800;
                }
            }
        }
        let p = BScaleParams {
            intensity_tol: 100.0,
            fraction_threshold: 0.85,
            r_max: 10,
            candidate_max_scale: 3,
            use_3d: false,
        };
        assert_eq!(exhaustive_scale_2d(&img, 16, 16, &p), 6);
        let (vol, mask) = single_slice_volume(&img);
        let sm = bscale_map(&vol, &mask, &p).unwrap();
        assert_eq!(sm.get(16, 16, 0), 6);
    }

    #[test]
    fn edge_voxel_scale_one() {
        let mut img = vec![vec![0i16; 16]; 16];
        for row in img.iter_mut() {
            for x in 8..16 {
                row[x] = -800;
            }
        }
        let (vol, mask) = single_slice_volume(&img);
        let sm = bscale_map(&vol, &mask, &BScaleParams::default()).unwrap();
        assert_eq!(sm.get(7, 8, 0), 1);
        assert_eq!(sm.get(8, 8, 0), 1);
    }

    #[test]
    fn matches_exhaustive_oracle_on_random_images() {
        use rand::{Rng, SeedableRng};
        let p = BScaleParams {
            intensity_tol: 120.0,
            ..Default::default()
        };
        for seed in 0..20u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let img: Vec<Vec<i16>> = (0..16)
                .map(|_| (0..16).map(|_| rng.gen_range(-1000..0)).collect())
                .collect();
            let (vol, mask) = single_slice_volume(&img);
            let sm = bscale_map(&vol, &mask, &p).unwrap();
            for y in 0..16 {
                for x in 0..16 {
                    assert_eq!(
                        sm.get(x, y, 0),
                        exhaustive_scale_2d(&img, x as i64, y as i64, &p),
                        "seed {seed} voxel ({x},{y})"
                    );
                }
            }
        }
    }

    #[test]
    fn shrinking_tolerance_never_grows_scale() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let img: Vec<Vec<i16>> = (0..16)
            .map(|_| (0..16).map(|_| rng.gen_range(-1000..0)).collect())
            .collect();
        let (vol, mask) = single_slice_volume(&img);
        let wide = bscale_map(
            &vol,
            &mask,
            &BScaleParams {
                intensity_tol: 300.0,
                ..Default::default()
            },
        )
        .unwrap();
        let narrow = bscale_map(
            &vol,
            &mask,
            &BScaleParams {
                intensity_tol: 80.0,
                ..Default::default()
            },
        )
        .unwrap();
        for (w, n) in wide.values().iter().zip(narrow.values()) {
            assert!(n <= w);
        }
    }

    #[test]
    fn candidates_is_sublevel_set() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let img: Vec<Vec<i16>> = (0..20)
            .map(|_| (0..20).map(|_| rng.gen_range(-1000..0)).collect())
            .collect();
        let (vol, mask) = single_slice_volume(&img);
        let p = BScaleParams::default();
        let sm = bscale_map(&vol, &mask, &p).unwrap();
        let cand = candidates(&sm, &p);
        for (i, &c) in cand.bits().iter().enumerate() {
            let s = sm.values()[i];
            assert_eq!(c, s >= 1 && s <= p.candidate_max_scale);
        }
    }

    #[test]
    fn all_max_scale_gives_empty_candidates() {
        let p = BScaleParams::default();
        let sm = ScaleMap::new((4, 4, 1), vec![p.r_max; 16]);
        assert_eq!(candidates(&sm, &p).count(), 0);
    }

    #[test]
    fn disk_candidates_form_annulus() {
        let mut img = vec![vec![0i16; 32]; 32];
        for y in 0..32i64 {
            for x in 0..32i64 {
                if (x - 16) * (x - 16) + (y - 16) * (y - 16) <= 36 {
                    img[y as usize][x as usize] = -800;
                }
            }
        }
        let p = BScaleParams {
            intensity_tol: 100.0,
            r_max: 10,
            ..Default::default()
        };
        let (vol, mask) = single_slice_volume(&img);
        let sm = bscale_map(&vol, &mask, &p).unwrap();
        let cand = candidates(&sm, &p);
        // disk center is not a candidate, near-boundary voxels are
        assert!(!cand.get(16, 16, 0));
        assert!(cand.get(16 + 6, 16, 0));
        assert!(cand.get(16, 16 - 6, 0));
    }
}
