//! Fuzzy connectedness lung segmentation.
//!
//! Connectivity of a voxel to a seed set is the maximal over paths of the
//! minimal pairwise affinity along the path. The affinity couples a
//! homogeneity kernel on the intensity difference with an object-feature
//! kernel on the pair mean, both Gaussian.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::volio::{Mask, Volume};

#[derive(Debug, Error)]
pub enum FcsegError {
    #[error("segmentation failure: {0}")]
    SegmentationFailure(String),
    #[error("theta {0} outside [0,1]")]
    BadTheta(f64),
    #[error("seed set empty or out of bounds")]
    BadSeeds,
}

/// Parameters of the pairwise affinity functional.
#[derive(Debug, Clone, Copy)]
pub struct Affinity {
    /// HU scale of the homogeneity kernel.
    pub sigma_intensity: f64,
    /// HU scale of the object-feature kernel.
    pub sigma_object: f64,
    /// Expected lung HU.
    pub mean_object: f64,
}

impl Default for Affinity {
    fn default() -> Self {
        Self {
            sigma_intensity: 100.0,
            sigma_object: 200.0,
            mean_object: -750.0,
        }
    }
}

impl Affinity {
    /// mu(u,v) in [0,1]; 1 when both voxels sit at the object mean.
    pub fn mu(&self, a: f64, b: f64) -> f64 {
        let homog = (-(a - b).powi(2) / (2.0 * self.sigma_intensity.powi(2))).exp();
        let mid = (a + b) / 2.0;
        let object = (-(mid - self.mean_object).powi(2) / (2.0 * self.sigma_object.powi(2))).exp();
        homog * object
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjacency {
    Six,
    TwentySix,
}

impl Adjacency {
    pub fn offsets(self) -> Vec<(i64, i64, i64)> {
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx, dy, dz) == (0, 0, 0) {
                        continue;
                    }
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    match self {
                        Adjacency::Six if manhattan == 1 => out.push((dx, dy, dz)),
                        Adjacency::TwentySix => out.push((dx, dy, dz)),
                        _ => {}
                    }
                }
            }
        }
        out
    }
}

/// Per-voxel max-min path strength to the seed set, in [0,1].
#[derive(Debug, Clone)]
pub struct ConnectivityMap {
    dims: (usize, usize, usize),
    strength: Vec<f64>,
}

impl ConnectivityMap {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn strength(&self) -> &[f64] {
        &self.strength
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.strength[x + self.dims.0 * (y + self.dims.1 * z)]
    }

    pub fn threshold(&self, theta: f64) -> Result<Mask, FcsegError> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(FcsegError::BadTheta(theta));
        }
        Ok(Mask::new(
            self.dims,
            self.strength.iter().map(|&s| s >= theta).collect(),
        ))
    }
}

/// Best-first max-min propagation from the seed set. Ties in the heap are
/// broken by voxel index so the result is run-to-run deterministic.
pub fn compute_connectivity(
    vol: &Volume,
    seeds: &[usize],
    aff: &Affinity,
    adjacency: Adjacency,
) -> Result<ConnectivityMap, FcsegError> {
    let (nx, ny, nz) = vol.dims();
    let total = nx * ny * nz;
    if seeds.is_empty() || seeds.iter().any(|&s| s >= total) {
        return Err(FcsegError::BadSeeds);
    }
    let offsets = adjacency.offsets();
    let mut strength = vec![0.0f64; total];
    // heap keyed by (strength bits, Reverse(index)); f64 in [0,1] so the
    // bit pattern orders the same as the value
    let mut heap: BinaryHeap<(u64, Reverse<usize>)> = BinaryHeap::new();
    for &s in seeds {
        strength[s] = 1.0;
        heap.push((1.0f64.to_bits(), Reverse(s)));
    }
    while let Some((bits, Reverse(idx))) = heap.pop() {
        let cur = f64::from_bits(bits);
        if cur < strength[idx] {
            continue; // stale entry
        }
        let x = idx % nx;
        let y = (idx / nx) % ny;
        let z = idx / (nx * ny);
        let here = vol.voxels()[idx] as f64;
        for &(dx, dy, dz) in &offsets {
            let (ux, uy, uz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
            if ux < 0 || uy < 0 || uz < 0 || ux >= nx as i64 || uy >= ny as i64 || uz >= nz as i64 {
                continue;
            }
            let uidx = ux as usize + nx * (uy as usize + ny * uz as usize);
            let mu = aff.mu(here, vol.voxels()[uidx] as f64);
            let cand = cur.min(mu);
            if cand > strength[uidx] {
                strength[uidx] = cand;
                heap.push((cand.to_bits(), Reverse(uidx)));
            }
        }
    }
    Ok(ConnectivityMap {
        dims: vol.dims(),
        strength,
    })
}

/// Threshold the connectivity map at `theta` to produce an object mask.
pub fn fc_segment(
    vol: &Volume,
    seeds: &[usize],
    aff: &Affinity,
    theta: f64,
) -> Result<Mask, FcsegError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(FcsegError::BadTheta(theta));
    }
    let conn = compute_connectivity(vol, seeds, aff, Adjacency::Six)?;
    conn.threshold(theta)
}

/// 6-connected components of an arbitrary predicate over voxels.
fn components(dims: (usize, usize, usize), keep: &[bool]) -> Vec<Vec<usize>> {
    let (nx, ny, nz) = dims;
    let mut label = vec![usize::MAX; keep.len()];
    let mut comps = Vec::new();
    for start in 0..keep.len() {
        if !keep[start] || label[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut comp = vec![start];
        label[start] = id;
        let mut stack = vec![start];
        while let Some(idx) = stack.pop() {
            let x = idx % nx;
            let y = (idx / nx) % ny;
            let z = idx / (nx * ny);
            for (dx, dy, dz) in [
                (-1i64, 0i64, 0i64),
                (1, 0, 0),
                (0, -1, 0),
                (0, 1, 0),
                (0, 0, -1),
                (0, 0, 1),
            ] {
                let (ux, uy, uz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                if ux < 0
                    || uy < 0
                    || uz < 0
                    || ux >= nx as i64
                    || uy >= ny as i64
                    || uz >= nz as i64
                {
                    continue;
                }
                let uidx = ux as usize + nx * (uy as usize + ny * uz as usize);
                if keep[uidx] && label[uidx] == usize::MAX {
                    label[uidx] = id;
                    comp.push(uidx);
                    stack.push(uidx);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// HU threshold below which voxels count as air when hunting for lungs.
pub const AIR_THRESHOLD_HU: i16 = -400;

/// Find the two largest interior air components and return a seed set per
/// lung, left first (smaller centroid x). Components touching the x/y
/// volume boundary are outside the body envelope and skipped.
pub fn auto_seeds(vol: &Volume) -> Result<(Vec<usize>, Vec<usize>), FcsegError> {
    let (nx, ny, _nz) = vol.dims();
    let keep: Vec<bool> = vol.voxels().iter().map(|&v| v < AIR_THRESHOLD_HU).collect();
    let mut comps = components(vol.dims(), &keep);
    comps.retain(|comp| {
        !comp.iter().any(|&idx| {
            let x = idx % nx;
            let y = (idx / nx) % ny;
            x == 0 || y == 0 || x == nx - 1 || y == ny - 1
        })
    });
    if comps.len() < 2 {
        return Err(FcsegError::SegmentationFailure(format!(
            "found {} interior air components, need 2",
            comps.len()
        )));
    }
    comps.sort_by_key(|c| Reverse(c.len()));
    let mut picks: Vec<(f64, Vec<usize>)> = comps[..2]
        .iter()
        .map(|comp| {
            let cx = comp.iter().map(|&idx| (idx % nx) as f64).sum::<f64>() / comp.len() as f64;
            let cy = comp
                .iter()
                .map(|&idx| ((idx / nx) % ny) as f64)
                .sum::<f64>()
                / comp.len() as f64;
            let cz = comp.iter().map(|&idx| (idx / (nx * ny)) as f64).sum::<f64>()
                / comp.len() as f64;
            // seeds: up to 27 component voxels nearest the centroid
            let mut ranked: Vec<usize> = comp.clone();
            ranked.sort_by(|&a, &b| {
                let d = |idx: usize| {
                    let x = (idx % nx) as f64 - cx;
                    let y = ((idx / nx) % ny) as f64 - cy;
                    let z = (idx / (nx * ny)) as f64 - cz;
                    x * x + y * y + z * z
                };
                d(a).partial_cmp(&d(b)).unwrap().then(a.cmp(&b))
            });
            ranked.truncate(27);
            ranked.sort_unstable();
            (cx, ranked)
        })
        .collect();
    picks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let right = picks.pop().unwrap().1;
    let left = picks.pop().unwrap().1;
    Ok((left, right))
}

/// Fill 2D holes per axial slice: any non-mask region not reachable from
/// the slice border becomes part of the mask. Restores dense vascular and
/// pathological structure to a thresholded lung mask.
pub fn fill_holes_2d(mask: &Mask) -> Mask {
    let (nx, ny, nz) = mask.dims();
    let mut out = mask.clone();
    let mut reach = vec![false; nx * ny];
    for z in 0..nz {
        reach.iter_mut().for_each(|r| *r = false);
        let mut stack = Vec::new();
        for x in 0..nx {
            for y in [0, ny - 1] {
                if !mask.get(x, y, z) && !reach[x + nx * y] {
                    reach[x + nx * y] = true;
                    stack.push((x, y));
                }
            }
        }
        for y in 0..ny {
            for x in [0, nx - 1] {
                if !mask.get(x, y, z) && !reach[x + nx * y] {
                    reach[x + nx * y] = true;
                    stack.push((x, y));
                }
            }
        }
        while let Some((x, y)) = stack.pop() {
            for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (ux, uy) = (x as i64 + dx, y as i64 + dy);
                if ux < 0 || uy < 0 || ux >= nx as i64 || uy >= ny as i64 {
                    continue;
                }
                let (ux, uy) = (ux as usize, uy as usize);
                if !mask.get(ux, uy, z) && !reach[ux + nx * uy] {
                    reach[ux + nx * uy] = true;
                    stack.push((ux, uy));
                }
            }
        }
        for y in 0..ny {
            for x in 0..nx {
                if !mask.get(x, y, z) && !reach[x + nx * y] {
                    out.set(x, y, z, true);
                }
            }
        }
    }
    out
}

/// Morphological closing (dilation then erosion) with a disk of the given
/// radius, applied per axial slice. Bridges thin channels cut through the
/// mask by dense structure so hole filling can seal the enclosed regions.
pub fn close_2d(mask: &Mask, radius: usize) -> Mask {
    let r = radius as i64;
    let mut disk = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if dx * dx + dy * dy <= r * r {
                disk.push((dx, dy));
            }
        }
    }
    let (nx, ny, nz) = mask.dims();
    let transform = |src: &Mask, dilate: bool| {
        let mut out = Mask::empty((nx, ny, nz));
        for z in 0..nz {
            for y in 0..ny as i64 {
                for x in 0..nx as i64 {
                    let mut hit = !dilate;
                    for &(dx, dy) in &disk {
                        let (ux, uy) = (x + dx, y + dy);
                        // out-of-slice neighborhoods count as background
                        let v = ux >= 0
                            && uy >= 0
                            && ux < nx as i64
                            && uy < ny as i64
                            && src.get(ux as usize, uy as usize, z);
                        if dilate && v {
                            hit = true;
                            break;
                        }
                        if !dilate && !v {
                            hit = false;
                            break;
                        }
                    }
                    if hit {
                        out.set(x as usize, y as usize, z, true);
                    }
                }
            }
        }
        out
    };
    let dilated = transform(mask, true);
    transform(&dilated, false)
}
