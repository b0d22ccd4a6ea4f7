//! Curvature-based shape features.
//!
//! A patch is treated as a Monge surface whose principal curvatures are
//! approximated by the eigenvalues of the Gaussian-smoothed intensity
//! Hessian. From the per-pixel mean curvature H, Gaussian curvature K and
//! Willmore integrand W = H^2 - K we aggregate an 8-dimensional feature
//! vector per patch, gated on candidate presence and a trained W interval.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ShapefeatError {
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error("patch size {0} too small, need >= 5")]
    PatchTooSmall(usize),
    #[error("empty integration region")]
    EmptyRegion,
}

/// Names of the 8 shape features in emission order.
pub const SHAPE_FEATURE_NAMES: [&str; 8] = [
    "willmore_energy",
    "mean_h",
    "mean_k",
    "shape_index",
    "elongation",
    "shear",
    "compactness",
    "distortion",
];

/// Denominator floor for ratio features on near-flat pixels.
const RATIO_EPS: f64 = 1e-6;
/// Clamp range for elongation and compactness.
const RATIO_CLAMP: f64 = 100.0;

/// Sampled Gaussian, normalized to unit sum.
pub fn gauss_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Sampled first derivative of a Gaussian; exactly antisymmetric so the
/// taps sum to zero in floating point.
pub fn gauss_d1_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let norm: f64 = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .sum();
    (-radius..=radius)
        .map(|i| {
            let x = i as f64;
            -x / (sigma * sigma) * (-(x * x) / (2.0 * sigma * sigma)).exp() / norm
        })
        .collect()
}

/// Sampled second derivative of a Gaussian, mean-subtracted so a constant
/// input produces an exactly zero response.
pub fn gauss_d2_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let norm: f64 = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .sum();
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| {
            let x = i as f64;
            (x * x - sigma * sigma) / sigma.powi(4) * (-(x * x) / (2.0 * sigma * sigma)).exp()
                / norm
        })
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    k
}

#[inline]
fn reflect(i: i64, n: i64) -> usize {
    // symmetric boundary: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable convolution with symmetric (reflected) boundary handling:
/// `kx` runs along x (columns), `ky` along y (rows).
pub fn convolve_sep(img: &Array2<f64>, kx: &[f64], ky: &[f64]) -> Array2<f64> {
    let (h, w) = img.dim();
    let rx = (kx.len() / 2) as i64;
    let ry = (ky.len() / 2) as i64;
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for (t, &kv) in kx.iter().enumerate() {
                let xi = reflect(x + t as i64 - rx, w as i64);
                acc += kv * img[[y, xi]];
            }
            tmp[[y, x as usize]] = acc;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h as i64 {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &kv) in ky.iter().enumerate() {
                let yi = reflect(y + t as i64 - ry, h as i64);
                acc += kv * tmp[[yi, x]];
            }
            out[[y as usize, x]] = acc;
        }
    }
    out
}

/// Gaussian smoothing at scale sigma (pixels).
pub fn gaussian_smooth(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let g = gauss_kernel(sigma);
    convolve_sep(img, &g, &g)
}

/// Per-pixel Hessian eigenvalues ordered |k1| >= |k2|, in physical units
/// when pixel spacing is given.
#[derive(Debug, Clone)]
pub struct HessianField {
    pub k1: Array2<f64>,
    pub k2: Array2<f64>,
    pub sigma: f64,
}

/// Compute Hessian entries by convolution with analytic derivative-of-
/// Gaussian kernels and take the closed-form 2x2 eigenvalues.
/// `spacing` is (sx, sy) in mm; derivatives are scaled to physical units.
pub fn hessian_eigen(
    img: &Array2<f64>,
    sigma: f64,
    spacing: (f64, f64),
) -> Result<HessianField, ShapefeatError> {
    if !(sigma > 0.0) {
        return Err(ShapefeatError::BadSigma(sigma));
    }
    let (h, w) = img.dim();
    if h < 5 || w < 5 {
        return Err(ShapefeatError::PatchTooSmall(h.min(w)));
    }
    let g = gauss_kernel(sigma);
    let d1 = gauss_d1_kernel(sigma);
    let d2 = gauss_d2_kernel(sigma);
    let (sx, sy) = spacing;
    let ixx = convolve_sep(img, &d2, &g);
    let iyy = convolve_sep(img, &g, &d2);
    let ixy = convolve_sep(img, &d1, &d1);
    let mut k1 = Array2::zeros((h, w));
    let mut k2 = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let a = ixx[[y, x]] / (sx * sx);
            let c = iyy[[y, x]] / (sy * sy);
            let b = ixy[[y, x]] / (sx * sy);
            let half_tr = (a + c) / 2.0;
            let disc = ((a - c) / 2.0).powi(2) + b * b;
            let s = disc.sqrt();
            let la = half_tr + s;
            let lb = half_tr - s;
            if la.abs() >= lb.abs() {
                k1[[y, x]] = la;
                k2[[y, x]] = lb;
            } else {
                k1[[y, x]] = lb;
                k2[[y, x]] = la;
            }
        }
    }
    Ok(HessianField { k1, k2, sigma })
}

/// Mean curvature, Gaussian curvature and Willmore integrand per pixel.
#[derive(Debug, Clone)]
pub struct CurvatureMaps {
    pub h: Array2<f64>,
    pub k: Array2<f64>,
    pub w: Array2<f64>,
}

pub fn curvature_maps(hf: &HessianField) -> CurvatureMaps {
    let h = (&hf.k1 + &hf.k2) / 2.0;
    let k = &hf.k1 * &hf.k2;
    let w = &h * &h - &k;
    CurvatureMaps { h, k, w }
}

/// Integrate the Willmore integrand over a pixel region; `pixel_area` is
/// the physical area of one pixel.
pub fn willmore_energy(
    cm: &CurvatureMaps,
    region: &Array2<bool>,
    pixel_area: f64,
) -> Result<f64, ShapefeatError> {
    assert_eq!(cm.w.dim(), region.dim());
    let mut sum = 0.0;
    let mut count = 0usize;
    for (wv, &r) in cm.w.iter().zip(region.iter()) {
        if r {
            sum += wv;
            count += 1;
        }
    }
    if count == 0 {
        return Err(ShapefeatError::EmptyRegion);
    }
    Ok(sum * pixel_area)
}

/// Trained Willmore-interval gate plus the candidate-presence requirement.
#[derive(Debug, Clone, Copy)]
pub struct EnergyGate {
    pub w_lo: f64,
    pub w_hi: f64,
}

impl EnergyGate {
    /// Wide-open gate, useful before an interval has been trained.
    pub fn open() -> Self {
        Self {
            w_lo: 0.0,
            w_hi: f64::INFINITY,
        }
    }
}

/// Learn the gate interval as the [5th, 95th] percentile of W observed at
/// labeled TIB pixels during training.
pub fn train_energy_gate(mut w_values: Vec<f64>) -> EnergyGate {
    assert!(!w_values.is_empty(), "no training W values");
    w_values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| {
        let t = p * (w_values.len() - 1) as f64;
        let lo = t.floor() as usize;
        let hi = t.ceil() as usize;
        let frac = t - lo as f64;
        w_values[lo] * (1.0 - frac) + w_values[hi] * frac
    };
    EnergyGate {
        w_lo: q(0.05),
        w_hi: q(0.95),
    }
}

/// The 8 shape features in `SHAPE_FEATURE_NAMES` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeFeatures(pub [f64; 8]);

fn shape_index(k1: f64, k2: f64) -> f64 {
    let den = k2 - k1;
    if den.abs() < 1e-12 {
        1.0 // limit convention at umbilic points
    } else {
        (2.0 / std::f64::consts::PI) * ((k2 + k1) / den).atan()
    }
}

fn floored(v: f64) -> f64 {
    if v.abs() < RATIO_EPS {
        if v < 0.0 {
            -RATIO_EPS
        } else {
            RATIO_EPS
        }
    } else {
        v
    }
}

fn clamp_ratio(v: f64) -> f64 {
    v.clamp(-RATIO_CLAMP, RATIO_CLAMP)
}

/// Aggregate per-pixel curvature quantities into the per-patch 8-vector.
/// Returns None (skip) when the patch holds no candidate voxel or no pixel
/// has W inside the trained interval.
pub fn shape_vector(
    hf: &HessianField,
    cm: &CurvatureMaps,
    candidate_bits: &Array2<bool>,
    gate: &EnergyGate,
    pixel_area: f64,
) -> Option<ShapeFeatures> {
    if !candidate_bits.iter().any(|&b| b) {
        return None;
    }
    let (h, w) = cm.w.dim();
    let mut gated = Array2::from_elem((h, w), false);
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            let wv = cm.w[[y, x]];
            if wv >= gate.w_lo && wv <= gate.w_hi {
                gated[[y, x]] = true;
                any = true;
            }
        }
    }
    if !any {
        return None;
    }
    let mut n = 0.0f64;
    let mut sum_h = 0.0;
    let mut sum_k = 0.0;
    let mut sum_si = 0.0;
    let mut sum_elong = 0.0;
    let mut sum_shear = 0.0;
    let mut sum_comp = 0.0;
    let mut sum_dist = 0.0;
    for y in 0..h {
        for x in 0..w {
            if !gated[[y, x]] {
                continue;
            }
            let k1 = hf.k1[[y, x]];
            let k2 = hf.k2[[y, x]];
            n += 1.0;
            sum_h += cm.h[[y, x]];
            sum_k += cm.k[[y, x]];
            sum_si += shape_index(k1, k2);
            sum_elong += clamp_ratio(k1 / floored(k2));
            sum_shear += (k1 - k2).powi(2) / 4.0;
            sum_comp += clamp_ratio(1.0 / floored(k1 * k2));
            sum_dist += k1 - k2;
        }
    }
    let energy = willmore_energy(cm, &gated, pixel_area).expect("gated region non-empty");
    Some(ShapeFeatures([
        energy,
        sum_h / n,
        sum_k / n,
        sum_si / n,
        sum_elong / n,
        sum_shear / n,
        sum_comp / n,
        sum_dist / n,
    ]))
}
