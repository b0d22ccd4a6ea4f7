//! Deterministic synthetic chest phantoms with ground-truth TIB-like
//! clusters: thin branching tubes surrounded by attached micro-nodules,
//! placed inside two ellipsoidal lungs, with smooth vessel decoys and
//! Gaussian noise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::volio::{Mask, Patch, Volume};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("could not place cluster {0} after 1000 attempts")]
    PlacementFailed(usize),
    #[error("invalid spec: {0}")]
    BadSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: (usize, usize, usize),
    pub spacing: (f64, f64, f64),
    /// Lung ellipsoid semi-axes as fractions of the volume extent.
    pub lung_semi_axes: (f64, f64, f64),
    pub body_hu: i16,
    pub lung_hu: i16,
    pub noise_sigma: f64,
    pub n_tib_clusters: usize,
    pub branch_segments: (usize, usize),
    pub branch_thickness_mm: (f64, f64),
    pub nodule_count: (usize, usize),
    pub nodule_diameter_mm: (f64, f64),
    pub cluster_contrast_hu: f64,
    /// Decoy vessel tubes per volume.
    pub vessel_count: usize,
    pub vessel_contrast_hu: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: (64, 64, 24),
            spacing: (0.7, 0.7, 5.0),
            lung_semi_axes: (0.20, 0.35, 0.42),
            body_hu: 0,
            lung_hu: -800,
            noise_sigma: 25.0,
            n_tib_clusters: 8,
            branch_segments: (3, 6),
            branch_thickness_mm: (0.6, 1.2),
            nodule_count: (4, 10),
            nodule_diameter_mm: (2.0, 3.0),
            cluster_contrast_hu: 650.0,
            vessel_count: 6,
            vessel_contrast_hu: 500.0,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.nodule_diameter_mm.0 < 2.0 || self.nodule_diameter_mm.1 > 3.0 {
            return Err(PhantomError::BadSpec(
                "nodule diameters must stay within [2, 3] mm".into(),
            ));
        }
        if self.nodule_diameter_mm.0 > self.nodule_diameter_mm.1
            || self.branch_thickness_mm.0 > self.branch_thickness_mm.1
            || self.branch_segments.0 > self.branch_segments.1
            || self.nodule_count.0 > self.nodule_count.1
        {
            return Err(PhantomError::BadSpec("range lower bound above upper".into()));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        format!(
            "dims: {} {} {}\nspacing: {} {} {}\nlung_semi_axes: {} {} {}\nbody_hu: {}\nlung_hu: {}\nnoise_sigma: {}\nn_tib_clusters: {}\nbranch_segments: {} {}\nbranch_thickness_mm: {} {}\nnodule_count: {} {}\nnodule_diameter_mm: {} {}\ncluster_contrast_hu: {}\nvessel_count: {}\nvessel_contrast_hu: {}\nseed: {}\n",
            self.dims.0, self.dims.1, self.dims.2,
            self.spacing.0, self.spacing.1, self.spacing.2,
            self.lung_semi_axes.0, self.lung_semi_axes.1, self.lung_semi_axes.2,
            self.body_hu, self.lung_hu, self.noise_sigma, self.n_tib_clusters,
            self.branch_segments.0, self.branch_segments.1,
            self.branch_thickness_mm.0, self.branch_thickness_mm.1,
            self.nodule_count.0, self.nodule_count.1,
            self.nodule_diameter_mm.0, self.nodule_diameter_mm.1,
            self.cluster_contrast_hu, self.vessel_count, self.vessel_contrast_hu,
            self.seed,
        )
    }

    pub fn from_text(text: &str) -> Result<Self, PhantomError> {
        let mut spec = PhantomSpec::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| PhantomError::BadSpec(format!("missing ':' in '{line}'")))?;
            let toks: Vec<&str> = value.split_whitespace().collect();
            let bad = || PhantomError::BadSpec(format!("unparseable value for {key}"));
            let f = |i: usize| -> Result<f64, PhantomError> {
                toks.get(i).and_then(|t| t.parse().ok()).ok_or_else(bad)
            };
            let u = |i: usize| -> Result<usize, PhantomError> {
                toks.get(i).and_then(|t| t.parse().ok()).ok_or_else(bad)
            };
            match key.trim() {
                "dims" => spec.dims = (u(0)?, u(1)?, u(2)?),
                "spacing" => spec.spacing = (f(0)?, f(1)?, f(2)?),
                "lung_semi_axes" => spec.lung_semi_axes = (f(0)?, f(1)?, f(2)?),
                "body_hu" => spec.body_hu = f(0)? as i16,
                "lung_hu" => spec.lung_hu = f(0)? as i16,
                "noise_sigma" => spec.noise_sigma = f(0)?,
                "n_tib_clusters" => spec.n_tib_clusters = u(0)?,
                "branch_segments" => spec.branch_segments = (u(0)?, u(1)?),
                "branch_thickness_mm" => spec.branch_thickness_mm = (f(0)?, f(1)?),
                "nodule_count" => spec.nodule_count = (u(0)?, u(1)?),
                "nodule_diameter_mm" => spec.nodule_diameter_mm = (f(0)?, f(1)?),
                "cluster_contrast_hu" => spec.cluster_contrast_hu = f(0)?,
                "vessel_count" => spec.vessel_count = u(0)?,
                "vessel_contrast_hu" => spec.vessel_contrast_hu = f(0)?,
                "seed" => spec.seed = f(0)? as u64,
                other => {
                    return Err(PhantomError::BadSpec(format!("unknown key {other}")));
                }
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Physical position in mm.
type Pt = (f64, f64, f64);

struct Geometry {
    dims: (usize, usize, usize),
    spacing: (f64, f64, f64),
    /// Ellipsoid centers and semi-axes in mm, one per lung.
    lungs: [(Pt, Pt); 2],
}

impl Geometry {
    fn new(spec: &PhantomSpec) -> Self {
        let (nx, ny, nz) = spec.dims;
        let (sx, sy, sz) = spec.spacing;
        let extent = (nx as f64 * sx, ny as f64 * sy, nz as f64 * sz);
        let axes = (
            spec.lung_semi_axes.0 * extent.0,
            spec.lung_semi_axes.1 * extent.1,
            spec.lung_semi_axes.2 * extent.2,
        );
        let cz = extent.2 / 2.0;
        let cy = extent.1 / 2.0;
        Self {
            dims: spec.dims,
            spacing: spec.spacing,
            lungs: [
                ((0.27 * extent.0, cy, cz), axes),
                ((0.73 * extent.0, cy, cz), axes),
            ],
        }
    }

    fn voxel_center(&self, x: usize, y: usize, z: usize) -> Pt {
        (
            (x as f64 + 0.5) * self.spacing.0,
            (y as f64 + 0.5) * self.spacing.1,
            (z as f64 + 0.5) * self.spacing.2,
        )
    }

    fn in_lung(&self, p: Pt, shrink: f64) -> bool {
        self.lungs.iter().any(|&(c, a)| {
            let dx = (p.0 - c.0) / (a.0 * shrink);
            let dy = (p.1 - c.1) / (a.1 * shrink);
            let dz = (p.2 - c.2) / (a.2 * shrink);
            dx * dx + dy * dy + dz * dz <= 1.0
        })
    }

    /// Inside the lung with at least `margin_mm` clearance from the
    /// pleural surface (semi-axes reduced by the margin).
    fn in_lung_margin(&self, p: Pt, margin_mm: f64) -> bool {
        self.lungs.iter().any(|&(c, a)| {
            let (ax, ay, az) = (a.0 - margin_mm, a.1 - margin_mm, a.2 - margin_mm);
            if ax <= 0.0 || ay <= 0.0 || az <= 0.0 {
                return false;
            }
            let dx = (p.0 - c.0) / ax;
            let dy = (p.1 - c.1) / ay;
            let dz = (p.2 - c.2) / az;
            dx * dx + dy * dy + dz * dz <= 1.0
        })
    }

    /// Stamp every voxel whose center lies within `radius` mm of `p`.
    fn stamp_ball(&self, p: Pt, radius: f64, mut mark: impl FnMut(usize, usize, usize)) {
        let (sx, sy, sz) = self.spacing;
        let (nx, ny, nz) = self.dims;
        let x_lo = ((p.0 - radius) / sx - 1.0).floor().max(0.0) as usize;
        let x_hi = (((p.0 + radius) / sx + 1.0).ceil() as usize).min(nx);
        let y_lo = ((p.1 - radius) / sy - 1.0).floor().max(0.0) as usize;
        let y_hi = (((p.1 + radius) / sy + 1.0).ceil() as usize).min(ny);
        let z_lo = ((p.2 - radius) / sz - 1.0).floor().max(0.0) as usize;
        let z_hi = (((p.2 + radius) / sz + 1.0).ceil() as usize).min(nz);
        for z in z_lo..z_hi {
            for y in y_lo..y_hi {
                for x in x_lo..x_hi {
                    let c = self.voxel_center(x, y, z);
                    let d2 = (c.0 - p.0).powi(2) + (c.1 - p.1).powi(2) + (c.2 - p.2).powi(2);
                    if d2 <= radius * radius {
                        mark(x, y, z);
                    }
                }
            }
        }
    }
}

fn slice_center_z(geom: &Geometry, p: Pt) -> Pt {
    // snap to the nearest slice center so thin in-plane structures cannot
    // fall between coarse slices
    let sz = geom.spacing.2;
    let zi = ((p.2 / sz - 0.5).round()).clamp(0.0, geom.dims.2 as f64 - 1.0);
    (p.0, p.1, (zi + 0.5) * sz)
}

/// Walk an in-plane polyline from `start`, stamping a tube of the given
/// thickness; returns the sampled path points. The walk is re-aimed at
/// the cluster center whenever it strays more than `max_extent_mm`.
#[allow(clippy::too_many_arguments)]
fn stamp_branch(
    geom: &Geometry,
    rng: &mut ChaCha20Rng,
    start: Pt,
    segments: usize,
    seg_len_mm: f64,
    thickness_mm: f64,
    max_extent_mm: f64,
    mut mark: impl FnMut(usize, usize, usize),
) -> Vec<Pt> {
    let mut path = vec![start];
    let mut pos = start;
    let mut angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let step = 0.25f64;
    for _ in 0..segments {
        angle += rng.gen_range(-0.9..0.9);
        let n_steps = (seg_len_mm / step).ceil() as usize;
        for _ in 0..n_steps {
            let next = (pos.0 + step * angle.cos(), pos.1 + step * angle.sin(), pos.2);
            let dist = ((next.0 - start.0).powi(2) + (next.1 - start.1).powi(2)).sqrt();
            if dist > max_extent_mm {
                angle = (start.1 - pos.1).atan2(start.0 - pos.0);
                continue;
            }
            pos = next;
            geom.stamp_ball(pos, thickness_mm / 2.0, &mut mark);
            path.push(pos);
        }
    }
    path
}

/// Generate a deterministic phantom volume with its ideal lung mask and
/// the exact inserted-TIB mask.
pub fn generate(spec: &PhantomSpec) -> Result<(Volume, Mask, Mask), PhantomError> {
    spec.validate()?;
    let geom = Geometry::new(spec);
    let (nx, ny, nz) = spec.dims;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let mut vol = Volume::filled(spec.dims, spec.spacing, spec.body_hu);
    let mut lung_mask = Mask::empty(spec.dims);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if geom.in_lung(geom.voxel_center(x, y, z), 1.0) {
                    lung_mask.set(x, y, z, true);
                    vol.set(x, y, z, spec.lung_hu);
                }
            }
        }
    }

    // decoy vessels first; TIB clusters overwrite them where they meet
    let vessel_hu = (spec.lung_hu as f64 + spec.vessel_contrast_hu) as i16;
    for _ in 0..spec.vessel_count {
        let start = loop {
            let p = random_lung_point(&geom, &mut rng);
            let p = slice_center_z(&geom, p);
            if geom.in_lung(p, 0.8) {
                break p;
            }
        };
        let thickness = rng.gen_range(0.9..1.8);
        let segments = rng.gen_range(5..9);
        stamp_branch(
            &geom,
            &mut rng,
            start,
            segments,
            3.5,
            thickness,
            12.0,
            |x, y, z| {
                if lung_mask.get(x, y, z) {
                    vol.set(x, y, z, vessel_hu);
                }
            },
        );
    }

    // TIB clusters: branch tube plus attached micro-nodules
    let tib_hu = (spec.lung_hu as f64 + spec.cluster_contrast_hu) as i16;
    let mut tib_mask = Mask::empty(spec.dims);
    let mut centers: Vec<Pt> = Vec::new();
    let min_separation = 13.0f64;
    let max_extent = 4.0f64;
    for cluster in 0..spec.n_tib_clusters {
        let mut placed = None;
        for _ in 0..1000 {
            let p = slice_center_z(&geom, random_lung_point(&geom, &mut rng));
            // centrilobular pattern: keep the whole cluster extent (branch
            // plus nodules) clear of the subpleural zone
            if !geom.in_lung_margin(p, max_extent + 2.0) {
                continue;
            }
            let clear = centers.iter().all(|c| {
                let d2 = (c.0 - p.0).powi(2) + (c.1 - p.1).powi(2) + (c.2 - p.2).powi(2);
                d2 >= min_separation * min_separation
            });
            if clear {
                placed = Some(p);
                break;
            }
        }
        let center = placed.ok_or(PhantomError::PlacementFailed(cluster))?;
        centers.push(center);

        let segments = rng.gen_range(spec.branch_segments.0..=spec.branch_segments.1);
        let thickness =
            rng.gen_range(spec.branch_thickness_mm.0..=spec.branch_thickness_mm.1);
        let mut stamped: Vec<(usize, usize, usize)> = Vec::new();
        let path = stamp_branch(
            &geom,
            &mut rng,
            center,
            segments,
            1.8,
            thickness,
            max_extent,
            |x, y, z| stamped.push((x, y, z)),
        );
        let nodules = rng.gen_range(spec.nodule_count.0..=spec.nodule_count.1);
        for _ in 0..nodules {
            let anchor = path[rng.gen_range(0..path.len())];
            let jitter = (
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            );
            let p = (anchor.0 + jitter.0, anchor.1 + jitter.1, anchor.2);
            let diameter =
                rng.gen_range(spec.nodule_diameter_mm.0..=spec.nodule_diameter_mm.1);
            geom.stamp_ball(p, diameter / 2.0, |x, y, z| stamped.push((x, y, z)));
        }
        for (x, y, z) in stamped {
            let c = geom.voxel_center(x, y, z);
            if lung_mask.get(x, y, z) && geom.in_lung_margin(c, 1.4) {
                vol.set(x, y, z, tib_hu);
                tib_mask.set(x, y, z, true);
            }
        }
    }

    // additive Gaussian noise everywhere
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
        for v in vol.voxels_mut() {
            let noisy = *v as f64 + normal.sample(&mut rng);
            *v = noisy.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        }
    }

    Ok((vol, lung_mask, tib_mask))
}

fn random_lung_point(geom: &Geometry, rng: &mut ChaCha20Rng) -> Pt {
    let lung = geom.lungs[rng.gen_range(0..2)];
    let ((cx, cy, cz), (ax, ay, az)) = lung;
    loop {
        let p = (
            cx + rng.gen_range(-ax..ax),
            cy + rng.gen_range(-ay..ay),
            cz + rng.gen_range(-az..az),
        );
        let dx = (p.0 - cx) / ax;
        let dy = (p.1 - cy) / ay;
        let dz = (p.2 - cz) / az;
        if dx * dx + dy * dy + dz * dz <= 1.0 {
            return p;
        }
    }
}

/// Per-patch ground-truth label from TIB overlap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchLabel {
    Abnormal,
    /// Zero TIB overlap.
    Normal,
    /// Nonzero overlap below tau; dropped from training sets.
    Ambiguous,
}

/// Label patches by overlap fraction against the TIB ground truth:
/// abnormal when (TIB voxels in patch) / (patch area) >= tau.
pub fn label_patches(tiles: &[Patch], tib_mask: &Mask, tau: f64) -> Vec<PatchLabel> {
    assert!(tau > 0.0 && tau <= 1.0, "tau must be in (0,1]");
    tiles
        .iter()
        .map(|p| {
            let mut overlap = 0usize;
            for dy in 0..p.n {
                for dx in 0..p.n {
                    if tib_mask.get(p.x0 + dx, p.y0 + dy, p.z) {
                        overlap += 1;
                    }
                }
            }
            if overlap == 0 {
                PatchLabel::Normal
            } else if overlap as f64 / (p.n * p.n) as f64 >= tau {
                PatchLabel::Abnormal
            } else {
                PatchLabel::Ambiguous
            }
        })
        .collect()
}

/// 26-connected component count of a mask, used to verify cluster
/// insertion.
pub fn component_count_26(mask: &Mask) -> usize {
    let (nx, ny, nz) = mask.dims();
    let mut seen = vec![false; nx * ny * nz];
    let mut count = 0;
    for start in 0..seen.len() {
        if !mask.bits()[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(idx) = stack.pop() {
            let x = (idx % nx) as i64;
            let y = ((idx / nx) % ny) as i64;
            let z = (idx / (nx * ny)) as i64;
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx, dy, dz) == (0, 0, 0) {
                            continue;
                        }
                        let (ux, uy, uz) = (x + dx, y + dy, z + dz);
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
                        if mask.bits()[uidx] && !seen[uidx] {
                            seen[uidx] = true;
                            stack.push(uidx);
                        }
                    }
                }
            }
        }
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volio::tile_patches;

    #[test]
    fn spec_text_round_trip() {
        let spec = PhantomSpec {
            seed: 42,
            n_tib_clusters: 12,
            ..Default::default()
        };
        let back = PhantomSpec::from_text(&spec.to_text()).unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn bad_nodule_diameter_rejected() {
        let spec = PhantomSpec {
            nodule_diameter_mm: (1.0, 3.0),
            ..Default::default()
        };
        assert!(matches!(spec.validate(), Err(PhantomError::BadSpec(_))));
    }

    #[test]
    fn zero_clusters_empty_tib_mask() {
        let spec = PhantomSpec {
            n_tib_clusters: 0,
            seed: 5,
            ..Default::default()
        };
        let (_, _, tib) = generate(&spec).unwrap();
        assert_eq!(tib.count(), 0);
    }

    #[test]
    fn seed42_component_count() {
        let spec = PhantomSpec {
            n_tib_clusters: 12,
            seed: 42,
            ..Default::default()
        };
        let (_, lung, tib) = generate(&spec).unwrap();
        assert_eq!(component_count_26(&tib), 12);
        // tib mask lies inside the lungs
        assert_eq!(tib.minus(&lung).count(), 0);
    }

    #[test]
    fn different_seeds_same_component_count() {
        let mk = |seed| {
            let spec = PhantomSpec {
                n_tib_clusters: 6,
                seed,
                ..Default::default()
            };
            generate(&spec).unwrap()
        };
        let (va, _, ta) = mk(1);
        let (vb, _, tb) = mk(2);
        assert_ne!(va.voxels(), vb.voxels());
        assert_eq!(component_count_26(&ta), component_count_26(&tb));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = PhantomSpec {
            seed: 9,
            ..Default::default()
        };
        let (va, la, ta) = generate(&spec).unwrap();
        let (vb, lb, tb) = generate(&spec).unwrap();
        assert_eq!(va, vb);
        assert_eq!(la, lb);
        assert_eq!(ta, tb);
    }

    #[test]
    fn label_patches_matches_brute_force() {
        let spec = PhantomSpec {
            n_tib_clusters: 12,
            seed: 42,
            ..Default::default()
        };
        let (vol, lung, tib) = generate(&spec).unwrap();
        let tiles = tile_patches(&vol, &lung, 9).unwrap();
        let labels = label_patches(&tiles, &tib, 0.1);
        let mut abnormal = 0;
        for (patch, label) in tiles.iter().zip(&labels) {
            // brute-force overlap scan
            let mut overlap = 0usize;
            for dy in 0..9 {
                for dx in 0..9 {
                    if tib.get(patch.x0 + dx, patch.y0 + dy, patch.z) {
                        overlap += 1;
                    }
                }
            }
            let expect = if overlap == 0 {
                PatchLabel::Normal
            } else if overlap as f64 / 81.0 >= 0.1 {
                PatchLabel::Abnormal
            } else {
                PatchLabel::Ambiguous
            };
            assert_eq!(*label, expect);
            if expect == PatchLabel::Abnormal {
                abnormal += 1;
            }
        }
        assert!(abnormal > 0, "phantom produced no abnormal patches");
    }

    #[test]
    fn full_overlap_and_zero_overlap_labels() {
        let spec = PhantomSpec {
            n_tib_clusters: 4,
            seed: 3,
            ..Default::default()
        };
        let (vol, lung, tib) = generate(&spec).unwrap();
        let tiles = tile_patches(&vol, &lung, 9).unwrap();
        let labels = label_patches(&tiles, &tib, 0.1);
        for (patch, label) in tiles.iter().zip(&labels) {
            let overlap = (0..9)
                .flat_map(|dy| (0..9).map(move |dx| (dx, dy)))
                .filter(|&(dx, dy)| tib.get(patch.x0 + dx, patch.y0 + dy, patch.z))
                .count();
            if overlap == 0 {
                assert_eq!(*label, PatchLabel::Normal);
            }
        }
    }

    #[test]
    fn raising_tau_monotone_in_abnormal_count() {
        let spec = PhantomSpec {
            n_tib_clusters: 10,
            seed: 7,
            ..Default::default()
        };
        let (vol, lung, tib) = generate(&spec).unwrap();
        let tiles = tile_patches(&vol, &lung, 9).unwrap();
        let count = |tau: f64| {
            label_patches(&tiles, &tib, tau)
                .iter()
                .filter(|&&l| l == PatchLabel::Abnormal)
                .count()
        };
        let mut prev = usize::MAX;
        for tau in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let c = count(tau);
            assert!(c <= prev);
            prev = c;
        }
    }
}
