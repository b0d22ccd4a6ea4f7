//! End-to-end orchestration: segmentation, candidate selection, gated
//! feature extraction, classification, evaluation reports and plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use thiserror::Error;

use crate::bscale::{self, BScaleParams};
use crate::eval::{self, CvResult, EvalError, RocCurve, ScanFeatures};
use crate::fcseg::{self, Affinity, FcsegError};
use crate::phantom::{label_patches, PatchLabel};
use crate::shapefeat::{self, curvature_maps, hessian_eigen, EnergyGate};
use crate::svm::{SvmError, SvmModel, TrainConfig};
use crate::texfeat::{self, GlcmParams};
use crate::volio::{self, Mask, Patch, ScaleMap, Volume, VolioError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("degenerate statistics: {0}")]
    Degenerate(String),
}

impl PipelineError {
    fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        PipelineError::Stage {
            stage,
            message: err.to_string(),
        }
    }

    /// Process exit code: 2 config, 3 data, 4 degenerate statistics.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Stage { .. } => 3,
            PipelineError::Degenerate(_) => 4,
        }
    }
}

impl From<VolioError> for PipelineError {
    fn from(e: VolioError) -> Self {
        PipelineError::stage("volio", e)
    }
}

impl From<FcsegError> for PipelineError {
    fn from(e: FcsegError) -> Self {
        PipelineError::stage("segment", e)
    }
}

impl From<SvmError> for PipelineError {
    fn from(e: SvmError) -> Self {
        PipelineError::stage("svm", e)
    }
}

impl From<EvalError> for PipelineError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::DegenerateTest => {
                PipelineError::Degenerate("zero-variance paired differences".into())
            }
            other => PipelineError::stage("evaluate", other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureMode {
    Shape,
    Glcm,
    Wavelet,
    ShapeGlcm,
    ShapeWavelet,
}

impl FeatureMode {
    pub const ALL: [FeatureMode; 5] = [
        FeatureMode::Shape,
        FeatureMode::Glcm,
        FeatureMode::Wavelet,
        FeatureMode::ShapeGlcm,
        FeatureMode::ShapeWavelet,
    ];

    pub fn uses_shape(self) -> bool {
        matches!(
            self,
            FeatureMode::Shape | FeatureMode::ShapeGlcm | FeatureMode::ShapeWavelet
        )
    }

    pub fn dim(self, n: usize) -> usize {
        match self {
            FeatureMode::Shape => 8,
            FeatureMode::Glcm => 18,
            FeatureMode::Wavelet => 6 * n * n,
            FeatureMode::ShapeGlcm => 26,
            FeatureMode::ShapeWavelet => 8 + 6 * n * n,
        }
    }
}

impl std::str::FromStr for FeatureMode {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, PipelineError> {
        match s {
            "shape" => Ok(FeatureMode::Shape),
            "glcm" => Ok(FeatureMode::Glcm),
            "wavelet" => Ok(FeatureMode::Wavelet),
            "shape+glcm" => Ok(FeatureMode::ShapeGlcm),
            "shape+wavelet" => Ok(FeatureMode::ShapeWavelet),
            other => Err(PipelineError::Config(format!(
                "unknown feature mode '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            FeatureMode::Shape => "shape",
            FeatureMode::Glcm => "glcm",
            FeatureMode::Wavelet => "wavelet",
            FeatureMode::ShapeGlcm => "shape+glcm",
            FeatureMode::ShapeWavelet => "shape+wavelet",
        };
        f.write_str(s)
    }
}

/// Self-describing feature-order manifest for a (mode, patch size) pair.
pub fn schema_text(mode: FeatureMode, n: usize) -> String {
    let mut names: Vec<String> = Vec::new();
    if mode.uses_shape() {
        names.extend(shapefeat::SHAPE_FEATURE_NAMES.iter().map(|s| s.to_string()));
    }
    if matches!(mode, FeatureMode::Glcm | FeatureMode::ShapeGlcm) {
        names.extend(texfeat::GLCM_FEATURE_NAMES.iter().map(|s| s.to_string()));
    }
    if matches!(mode, FeatureMode::Wavelet | FeatureMode::ShapeWavelet) {
        for k in 0..6 {
            for p in 0..n * n {
                names.push(format!("steer_{}deg_px{}", k * 30, p));
            }
        }
    }
    names.join(",")
}

pub fn supported_patch_size(n: usize) -> Result<(), PipelineError> {
    if matches!(n, 9 | 13 | 17) {
        Ok(())
    } else {
        Err(PipelineError::Config(format!(
            "patch size {n} not supported (must be 9, 13 or 17)"
        )))
    }
}

#[derive(Debug, Clone)]
pub struct FeatureParams {
    pub mode: FeatureMode,
    pub patch_size: usize,
    /// Smoothing scale in pixels shared by shape and wavelet features.
    pub sigma: f64,
    pub glcm: GlcmParams,
    pub gate: EnergyGate,
    /// Candidate-presence gating; disable to score every lung patch.
    pub gating: bool,
    /// TIB-overlap fraction separating abnormal from ambiguous patches.
    pub tau: f64,
}

impl FeatureParams {
    pub fn new(mode: FeatureMode, patch_size: usize) -> Result<Self, PipelineError> {
        supported_patch_size(patch_size)?;
        Ok(Self {
            mode,
            patch_size,
            sigma: 1.5,
            glcm: GlcmParams::default(),
            gate: EnergyGate::open(),
            gating: true,
            tau: 0.1,
        })
    }
}

/// One emitted per retained patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub scan_id: String,
    pub z: usize,
    pub x0: usize,
    pub y0: usize,
    /// true = abnormal; None when no ground truth was supplied.
    pub label: Option<bool>,
    pub features: Vec<f64>,
}

fn candidate_window(cand: &Mask, patch: &Patch) -> Array2<bool> {
    Array2::from_shape_fn((patch.n, patch.n), |(dy, dx)| {
        cand.get(patch.x0 + dx, patch.y0 + dy, patch.z)
    })
}

/// Extract the configured feature vector from every retained patch of one
/// scan. Gating skips patches without candidate voxels; shape modes also
/// skip patches whose Willmore integrand never enters the trained
/// interval. Ambiguous patches (TIB overlap below tau) are dropped when
/// ground truth is given.
pub fn extract_features(
    scan_id: &str,
    vol: &Volume,
    lung: &Mask,
    cand: &Mask,
    tib: Option<&Mask>,
    p: &FeatureParams,
) -> Result<Vec<FeatureRow>, PipelineError> {
    let patches = volio::tile_patches(vol, lung, p.patch_size)?;
    let labels = tib.map(|t| label_patches(&patches, t, p.tau));
    let (sx, sy, _) = vol.spacing();
    let pixel_area = sx * sy;
    let mut rows = Vec::new();
    for (i, patch) in patches.iter().enumerate() {
        let label = match labels.as_ref().map(|l| l[i]) {
            Some(PatchLabel::Ambiguous) => continue,
            Some(PatchLabel::Abnormal) => Some(true),
            Some(PatchLabel::Normal) => Some(false),
            None => None,
        };
        let cand_bits = if p.gating {
            candidate_window(cand, patch)
        } else {
            Array2::from_elem((patch.n, patch.n), true)
        };
        if !cand_bits.iter().any(|&b| b) {
            continue;
        }
        let mut features = Vec::with_capacity(p.mode.dim(p.patch_size));
        if p.mode.uses_shape() {
            let img = patch.pixels_f64();
            let hf = hessian_eigen(&img, p.sigma, (sx, sy))
                .map_err(|e| PipelineError::stage("features", e))?;
            let cm = curvature_maps(&hf);
            match shapefeat::shape_vector(&hf, &cm, &cand_bits, &p.gate, pixel_area) {
                Some(sf) => features.extend_from_slice(&sf.0),
                None => continue,
            }
        }
        if matches!(p.mode, FeatureMode::Glcm | FeatureMode::ShapeGlcm) {
            let g = texfeat::glcm(&patch.pixels, &p.glcm)
                .map_err(|e| PipelineError::stage("features", e))?;
            features.extend_from_slice(&texfeat::glcm_features(&g));
        }
        if matches!(p.mode, FeatureMode::Wavelet | FeatureMode::ShapeWavelet) {
            let img = patch.pixels_f64();
            let w = texfeat::steerable_features(&img, p.sigma)
                .map_err(|e| PipelineError::stage("features", e))?;
            features.extend(w);
        }
        rows.push(FeatureRow {
            scan_id: scan_id.to_string(),
            z: patch.z,
            x0: patch.x0,
            y0: patch.y0,
            label,
            features,
        });
    }
    Ok(rows)
}

/// Learn the Willmore-interval gate from TIB pixels of labeled scans:
/// collect the patch-level integrand at ground-truth TIB pixels and take
/// the [5th, 95th] percentiles.
pub fn train_gate(
    cases: &[(&Volume, &Mask, &Mask)],
    patch_size: usize,
    sigma: f64,
) -> Result<EnergyGate, PipelineError> {
    let mut w_values = Vec::new();
    for (vol, lung, tib) in cases {
        let (sx, sy, _) = vol.spacing();
        let patches = volio::tile_patches(vol, lung, patch_size)?;
        for patch in &patches {
            let mut any = false;
            for dy in 0..patch.n {
                for dx in 0..patch.n {
                    if tib.get(patch.x0 + dx, patch.y0 + dy, patch.z) {
                        any = true;
                    }
                }
            }
            if !any {
                continue;
            }
            let img = patch.pixels_f64();
            let hf = hessian_eigen(&img, sigma, (sx, sy))
                .map_err(|e| PipelineError::stage("gate", e))?;
            let cm = curvature_maps(&hf);
            for dy in 0..patch.n {
                for dx in 0..patch.n {
                    if tib.get(patch.x0 + dx, patch.y0 + dy, patch.z) {
                        w_values.push(cm.w[[dy, dx]]);
                    }
                }
            }
        }
    }
    if w_values.is_empty() {
        return Err(PipelineError::Stage {
            stage: "gate",
            message: "no TIB pixels available to train the energy gate".into(),
        });
    }
    Ok(shapefeat::train_energy_gate(w_values))
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Write rows plus a sidecar `<path>.schema` manifest.
pub fn write_feature_csv(
    path: &Path,
    rows: &[FeatureRow],
    mode: FeatureMode,
    n: usize,
) -> Result<(), PipelineError> {
    let schema = schema_text(mode, n);
    let mut text = String::from("scan,z,x0,y0,label");
    for name in schema.split(',') {
        text.push(',');
        text.push_str(name);
    }
    text.push('\n');
    for r in rows {
        let label = match r.label {
            Some(true) => "1",
            Some(false) => "0",
            None => "",
        };
        let _ = write!(text, "{},{},{},{},{}", r.scan_id, r.z, r.x0, r.y0, label);
        for f in &r.features {
            text.push(',');
            text.push_str(&fmt_f64(*f));
        }
        text.push('\n');
    }
    std::fs::write(path, text)
        .map_err(|e| PipelineError::stage("features", e))?;
    std::fs::write(path.with_extension("schema"), schema)
        .map_err(|e| PipelineError::stage("features", e))?;
    Ok(())
}

pub fn read_feature_csv(path: &Path) -> Result<Vec<FeatureRow>, PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| PipelineError::stage("features", e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let mut toks = line.split(',');
        let mut field = |name: &str| {
            toks.next().ok_or_else(|| {
                PipelineError::stage("features", format!("line {}: missing {name}", i + 1))
            })
        };
        let scan_id = field("scan")?.to_string();
        let z = field("z")?
            .parse()
            .map_err(|e| PipelineError::stage("features", e))?;
        let x0 = field("x0")?
            .parse()
            .map_err(|e| PipelineError::stage("features", e))?;
        let y0 = field("y0")?
            .parse()
            .map_err(|e| PipelineError::stage("features", e))?;
        let label = match field("label")? {
            "" => None,
            "1" => Some(true),
            "0" => Some(false),
            other => {
                return Err(PipelineError::stage(
                    "features",
                    format!("bad label '{other}'"),
                ))
            }
        };
        let features: Vec<f64> = toks
            .map(|t| t.parse().map_err(|e| PipelineError::stage("features", e)))
            .collect::<Result<_, _>>()?;
        rows.push(FeatureRow {
            scan_id,
            z,
            x0,
            y0,
            label,
            features,
        });
    }
    Ok(rows)
}

/// Group labeled rows by scan for scan-level cross-validation.
pub fn rows_to_scans(rows: &[FeatureRow]) -> Result<Vec<ScanFeatures>, PipelineError> {
    let mut by_scan: BTreeMap<String, Vec<(bool, Vec<f64>)>> = BTreeMap::new();
    for r in rows {
        let label = r.label.ok_or_else(|| {
            PipelineError::stage("evaluate", "unlabeled row in evaluation data")
        })?;
        by_scan
            .entry(r.scan_id.clone())
            .or_default()
            .push((label, r.features.clone()));
    }
    Ok(by_scan
        .into_iter()
        .map(|(scan_id, rows)| ScanFeatures { scan_id, rows })
        .collect())
}

/// Automatic lung segmentation: seed both lungs, run fuzzy connectedness,
/// union the two masks, and fill 2D holes so dense interior structure
/// (vessels, pathology) stays inside the mask.
pub fn segment_lungs(vol: &Volume, aff: &Affinity, theta: f64) -> Result<Mask, PipelineError> {
    let (left, right) = fcseg::auto_seeds(vol)?;
    let left_mask = fcseg::fc_segment(vol, &left, aff, theta)?;
    let right_mask = fcseg::fc_segment(vol, &right, aff, theta)?;
    let union = left_mask.union(&right_mask);
    Ok(fcseg::fill_holes_2d(&fcseg::close_2d(&union, 2)))
}

/// Scale map plus candidate mask for a segmented volume.
pub fn compute_candidates(
    vol: &Volume,
    lungs: &Mask,
    p: &BScaleParams,
) -> Result<(ScaleMap, Mask), PipelineError> {
    let sm = bscale::bscale_map(vol, lungs, p).map_err(|e| PipelineError::stage("bscale", e))?;
    let cand = bscale::candidates(&sm, p);
    Ok((sm, cand))
}

fn content_hash(parts: &[&[u8]]) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p);
    }
    let digest = hasher.finalize();
    digest.iter().take(16).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Segmentation + candidate stage with content-hash caching: results are
/// reused when the same volume bytes and parameters were seen before.
pub fn cached_segment_and_candidates(
    vol: &Volume,
    aff: &Affinity,
    theta: f64,
    bp: &BScaleParams,
    cache_dir: Option<&Path>,
) -> Result<(Mask, ScaleMap, Mask), PipelineError> {
    let key = cache_dir.map(|dir| {
        let raw: Vec<u8> = vol
            .voxels()
            .iter()
            .flat_map(|v| v.to_le_bytes())
            .collect();
        let params = format!(
            "theta={theta};si={};so={};mo={};tol={};frac={};rmax={};cmax={};3d={}",
            aff.sigma_intensity,
            aff.sigma_object,
            aff.mean_object,
            bp.intensity_tol,
            bp.fraction_threshold,
            bp.r_max,
            bp.candidate_max_scale,
            bp.use_3d
        );
        let hash = content_hash(&[&raw, params.as_bytes()]);
        (
            dir.join(format!("{hash}_lungs.hdr")),
            dir.join(format!("{hash}_scale.hdr")),
            dir.join(format!("{hash}_cand.hdr")),
        )
    });
    if let Some((lungs_path, scale_path, cand_path)) = &key {
        if lungs_path.exists() && scale_path.exists() && cand_path.exists() {
            let lungs = volio::read_mask(lungs_path)?;
            let sm = volio::read_scale_map(scale_path)?;
            let cand = volio::read_mask(cand_path)?;
            return Ok((lungs, sm, cand));
        }
    }
    let lungs = segment_lungs(vol, aff, theta)?;
    let (sm, cand) = compute_candidates(vol, &lungs, bp)?;
    if let Some((lungs_path, scale_path, cand_path)) = &key {
        if let Some(dir) = cache_dir {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::stage("cache", e))?;
        }
        volio::write_mask(lungs_path, &lungs, vol.spacing())?;
        volio::write_scale_map(scale_path, &sm, vol.spacing())?;
        volio::write_mask(cand_path, &cand, vol.spacing())?;
    }
    Ok((lungs, sm, cand))
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub model: PathBuf,
    pub report_out: PathBuf,
    pub overlay_out: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub affinity: Affinity,
    pub theta: f64,
    pub bscale: BScaleParams,
    pub feature: FeatureParams,
    /// Operating threshold; falls back to the model's stored threshold.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub total_patches: usize,
    pub skipped_patches: usize,
    pub scored_patches: usize,
    pub detections: usize,
    pub threshold: f64,
    pub scores: Vec<(FeatureRow, f64)>,
}

/// Full detection pipeline on one volume: segment, select candidates,
/// extract gated features, score with the model, and emit a report plus
/// an overlay mask of detected patches.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunSummary, PipelineError> {
    supported_patch_size(cfg.feature.patch_size)?;
    let vol = volio::read_volume(&cfg.input)?;
    let model = SvmModel::load(&cfg.model).map_err(|e| PipelineError::stage("model", e))?;
    let threshold = cfg
        .threshold
        .or(model.operating_threshold)
        .ok_or_else(|| {
            PipelineError::Config("no operating threshold given and none stored in model".into())
        })?;
    let (lungs, _sm, cand) = cached_segment_and_candidates(
        &vol,
        &cfg.affinity,
        cfg.theta,
        &cfg.bscale,
        cfg.cache_dir.as_deref(),
    )?;
    let total_patches = volio::tile_patches(&vol, &lungs, cfg.feature.patch_size)?.len();
    let rows = extract_features("input", &vol, &lungs, &cand, None, &cfg.feature)?;
    let schema = schema_text(cfg.feature.mode, cfg.feature.patch_size);
    let mut scores = Vec::with_capacity(rows.len());
    let mut detections = 0;
    let mut overlay = Mask::empty(vol.dims());
    for row in rows {
        let s = model.decision_checked(&row.features, &schema)?;
        if s >= threshold {
            detections += 1;
            for dy in 0..cfg.feature.patch_size {
                for dx in 0..cfg.feature.patch_size {
                    overlay.set(row.x0 + dx, row.y0 + dy, row.z, true);
                }
            }
        }
        scores.push((row, s));
    }
    let summary = RunSummary {
        total_patches,
        skipped_patches: total_patches - scores.len(),
        scored_patches: scores.len(),
        detections,
        threshold,
        scores,
    };
    let mut report = String::new();
    let _ = writeln!(report, "input: {}", cfg.input.display());
    let _ = writeln!(report, "mode: {}", cfg.feature.mode);
    let _ = writeln!(report, "patch_size: {}", cfg.feature.patch_size);
    let _ = writeln!(report, "total_patches: {}", summary.total_patches);
    let _ = writeln!(
        report,
        "skipped_by_gating: {}",
        summary.skipped_patches
    );
    let _ = writeln!(report, "scored_patches: {}", summary.scored_patches);
    let _ = writeln!(report, "threshold: {}", fmt_f64(summary.threshold));
    let _ = writeln!(report, "detections: {}", summary.detections);
    std::fs::write(&cfg.report_out, &report)
        .map_err(|e| PipelineError::stage("report", e))?;
    if let Some(overlay_out) = &cfg.overlay_out {
        volio::write_mask(overlay_out, &overlay, vol.spacing())?;
    }
    Ok(summary)
}

/// Pick the smallest threshold whose specificity on the given scored
/// training data is at least `min_specificity`.
pub fn threshold_for_specificity(
    scores: &[f64],
    labels: &[bool],
    min_specificity: f64,
) -> Result<f64, PipelineError> {
    let curve = eval::roc(scores, labels)?;
    let max_fpr = 1.0 - min_specificity;
    let mut best = None;
    for &(threshold, fpr, _) in curve.points.iter().skip(1) {
        if fpr <= max_fpr + 1e-12 {
            best = Some(threshold);
        } else {
            break;
        }
    }
    best.ok_or_else(|| {
        PipelineError::Degenerate(format!(
            "no threshold reaches specificity {min_specificity}"
        ))
    })
}

/// One phantom suite case on disk, discovered by its `_tib.hdr` sidecar.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub scan_id: String,
    pub volume: PathBuf,
    pub lungs: PathBuf,
    pub candidates: PathBuf,
    pub tib: PathBuf,
}

pub fn discover_suite(dir: &Path) -> Result<Vec<SuiteCase>, PipelineError> {
    let mut cases = Vec::new();
    let entries =
        std::fs::read_dir(dir).map_err(|e| PipelineError::stage("suite", e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.ends_with("_tib.hdr"))
        .collect();
    names.sort();
    for name in names {
        let stem = name.trim_end_matches("_tib.hdr").to_string();
        cases.push(SuiteCase {
            scan_id: stem.clone(),
            volume: dir.join(format!("{stem}.hdr")),
            lungs: dir.join(format!("{stem}_lungs.hdr")),
            candidates: dir.join(format!("{stem}_cand.hdr")),
            tib: dir.join(format!("{stem}_tib.hdr")),
        });
    }
    if cases.is_empty() {
        return Err(PipelineError::Stage {
            stage: "suite",
            message: format!("no *_tib.hdr cases under {}", dir.display()),
        });
    }
    Ok(cases)
}

#[derive(Debug, Clone)]
pub struct CompareConfig {
    pub modes: Vec<FeatureMode>,
    pub patch_sizes: Vec<usize>,
    pub runs: usize,
    pub seed: u64,
    pub train: TrainConfig,
    pub sigma: f64,
    pub tau: f64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            modes: vec![FeatureMode::ShapeGlcm, FeatureMode::Shape, FeatureMode::Glcm],
            patch_sizes: vec![9],
            runs: 10,
            seed: 7,
            train: TrainConfig::default(),
            sigma: 1.5,
            tau: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModeResult {
    pub mode: FeatureMode,
    pub patch_size: usize,
    /// Mean pooled AUC over runs.
    pub az: f64,
    /// Per-fold AUCs, 2 per run, in run order.
    pub fold_aucs: Vec<f64>,
    /// Pooled ROC of the first run, for plotting.
    pub roc: RocCurve,
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub results: Vec<ModeResult>,
    /// Pairwise p-values between modes at their best patch size; None on
    /// a degenerate (zero-variance) comparison.
    pub p_matrix: Vec<Vec<Option<f64>>>,
    /// Modes in p-matrix order.
    pub p_modes: Vec<FeatureMode>,
}

/// Run seeded cross-validation per (mode, patch size) over a labeled
/// suite and summarize Az plus pairwise paired t-tests.
pub fn compare_feature_sets(
    cases: &[SuiteCase],
    cfg: &CompareConfig,
) -> Result<CompareReport, PipelineError> {
    if cfg.modes.len() < 2 {
        return Err(PipelineError::Config(
            "need at least 2 feature modes to compare".into(),
        ));
    }
    let mut loaded = Vec::new();
    for case in cases {
        let vol = volio::read_volume(&case.volume)?;
        let lungs = volio::read_mask(&case.lungs)?;
        let cand = volio::read_mask(&case.candidates)?;
        let tib = volio::read_mask(&case.tib)?;
        loaded.push((case.scan_id.clone(), vol, lungs, cand, tib));
    }
    let mut results = Vec::new();
    for &n in &cfg.patch_sizes {
        supported_patch_size(n)?;
        let gate_cases: Vec<(&Volume, &Mask, &Mask)> = loaded
            .iter()
            .map(|(_, v, l, _, t)| (v, l, t))
            .collect();
        let gate = train_gate(&gate_cases, n, cfg.sigma)?;
        for &mode in &cfg.modes {
            let mut p = FeatureParams::new(mode, n)?;
            p.sigma = cfg.sigma;
            p.tau = cfg.tau;
            p.gate = gate;
            let mut scans = Vec::new();
            for (scan_id, vol, lungs, cand, tib) in &loaded {
                let rows = extract_features(scan_id, vol, lungs, cand, Some(tib), &p)?;
                let labeled = rows
                    .into_iter()
                    .map(|r| (r.label.expect("labeled"), r.features))
                    .collect::<Vec<_>>();
                scans.push(ScanFeatures {
                    scan_id: scan_id.clone(),
                    rows: labeled,
                });
            }
            let schema = schema_text(mode, n);
            let mut fold_aucs = Vec::with_capacity(2 * cfg.runs);
            let mut az_sum = 0.0;
            let mut first_roc = None;
            for run in 0..cfg.runs {
                let cv: CvResult =
                    eval::crossval(&scans, &schema, &cfg.train, cfg.seed + run as u64)?;
                fold_aucs.extend_from_slice(&cv.fold_aucs);
                az_sum += cv.roc.auc;
                if first_roc.is_none() {
                    first_roc = Some(cv.roc);
                }
            }
            results.push(ModeResult {
                mode,
                patch_size: n,
                az: az_sum / cfg.runs as f64,
                fold_aucs,
                roc: first_roc.expect("at least one run"),
            });
        }
    }
    // pair modes at their best patch size
    let mut best: BTreeMap<FeatureMode, &ModeResult> = BTreeMap::new();
    for r in &results {
        let replace = best.get(&r.mode).map(|b| r.az > b.az).unwrap_or(true);
        if replace {
            best.insert(r.mode, r);
        }
    }
    let p_modes: Vec<FeatureMode> = cfg.modes.clone();
    let mut p_matrix = vec![vec![None; p_modes.len()]; p_modes.len()];
    for (i, a) in p_modes.iter().enumerate() {
        for (j, b) in p_modes.iter().enumerate() {
            if i >= j {
                continue;
            }
            let ra = &best[a].fold_aucs;
            let rb = &best[b].fold_aucs;
            p_matrix[i][j] = match eval::paired_ttest(ra, rb) {
                Ok((_, p)) => Some(p),
                Err(EvalError::DegenerateTest) => None,
                Err(e) => return Err(e.into()),
            };
        }
    }
    Ok(CompareReport {
        results,
        p_matrix,
        p_modes,
    })
}

impl CompareReport {
    /// Text tables: an Az grid per (mode, patch size) and a p-value
    /// matrix between modes at their best size.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>10} {:>10} {:>10}",
            "features", "patch", "dim", "Az"
        );
        for r in &self.results {
            let _ = writeln!(
                out,
                "{:<16} {:>7}x{} {:>10} {:>10.4}",
                r.mode.to_string(),
                r.patch_size,
                r.patch_size,
                r.mode.dim(r.patch_size),
                r.az
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "paired t-test p-values (fold AUCs paired across modes by \
             shared CV seeds):"
        );
        let _ = write!(out, "{:<16}", "");
        for m in &self.p_modes {
            let _ = write!(out, " {:>14}", m.to_string());
        }
        let _ = writeln!(out);
        for (i, a) in self.p_modes.iter().enumerate() {
            let _ = write!(out, "{:<16}", a.to_string());
            for j in 0..self.p_modes.len() {
                let cell = if i >= j {
                    "--".to_string()
                } else {
                    match self.p_matrix[i][j] {
                        Some(p) => format!("{p:.4}"),
                        None => "degenerate".to_string(),
                    }
                };
                let _ = write!(out, " {cell:>14}");
            }
            let _ = writeln!(out);
        }
        out
    }

    pub fn az_csv(&self) -> String {
        let mut out = String::from("mode,patch_size,dim,az\n");
        for r in &self.results {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.mode,
                r.patch_size,
                r.mode.dim(r.patch_size),
                fmt_f64(r.az)
            );
        }
        out
    }

    pub fn p_csv(&self) -> String {
        let mut out = String::from("mode_a,mode_b,p\n");
        for (i, a) in self.p_modes.iter().enumerate() {
            for (j, b) in self.p_modes.iter().enumerate() {
                if i >= j {
                    continue;
                }
                let p = match self.p_matrix[i][j] {
                    Some(p) => fmt_f64(p),
                    None => "degenerate".to_string(),
                };
                let _ = writeln!(out, "{a},{b},{p}");
            }
        }
        out
    }
}

/// ROC CSV with columns threshold,fpr,tpr.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("threshold,fpr,tpr\n");
    for &(t, fpr, tpr) in &curve.points {
        let t = if t.is_finite() {
            fmt_f64(t)
        } else {
            "inf".to_string()
        };
        let _ = writeln!(out, "{},{},{}", t, fmt_f64(fpr), fmt_f64(tpr));
    }
    out
}

/// Minimal self-contained SVG line plot of one or more ROC curves.
pub fn roc_svg(curves: &[(String, &RocCurve)]) -> String {
    let (w, h, margin) = (480.0, 480.0, 50.0);
    let plot = w - 2.0 * margin;
    let px = |fpr: f64| margin + fpr * plot;
    let py = |tpr: f64| h - margin - tpr * plot;
    let palette = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{m}\" y2=\"{m}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{m}\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 4\"/>\n\
         <text x=\"{cx}\" y=\"{ly}\" text-anchor=\"middle\" font-size=\"13\">false positive rate</text>\n\
         <text x=\"14\" y=\"{cy}\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 14 {cy})\">true positive rate</text>\n",
        m = margin,
        b = h - margin,
        r = w - margin,
        cx = w / 2.0,
        ly = h - 12.0,
        cy = h / 2.0,
    );
    for (k, (name, curve)) in curves.iter().enumerate() {
        let color = palette[k % palette.len()];
        let mut d = String::new();
        for (i, &(_, fpr, tpr)) in curve.points.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{cmd}{:.2} {:.2} ", px(fpr), py(tpr));
        }
        let _ = writeln!(
            svg,
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>",
            d.trim_end()
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x}\" y=\"{y}\" font-size=\"12\" fill=\"{color}\">{name} (Az={az:.4})</text>",
            x = margin + 12.0,
            y = margin + 16.0 + 16.0 * k as f64,
            az = curve.auc,
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_parsing_round_trip() {
        for mode in FeatureMode::ALL {
            let parsed: FeatureMode = mode.to_string().parse().unwrap();
            assert_eq!(parsed, mode);
        }
        assert!("spectral".parse::<FeatureMode>().is_err());
    }

    #[test]
    fn schema_dims_match_modes() {
        for mode in FeatureMode::ALL {
            for n in [9usize, 13, 17] {
                let schema = schema_text(mode, n);
                assert_eq!(schema.split(',').count(), mode.dim(n));
            }
        }
    }

    #[test]
    fn even_patch_size_rejected() {
        assert!(FeatureParams::new(FeatureMode::Shape, 10).is_err());
        assert!(FeatureParams::new(FeatureMode::Shape, 11).is_err());
        assert!(FeatureParams::new(FeatureMode::Shape, 9).is_ok());
    }

    #[test]
    fn threshold_for_specificity_picks_low_fpr_point() {
        let scores = [0.9, 0.85, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2];
        let labels = [true, true, true, false, true, false, false, false];
        let t = threshold_for_specificity(&scores, &labels, 0.95).unwrap();
        // at threshold 0.7 no negative is caught
        assert!(t >= 0.7 - 1e-12);
    }

    #[test]
    fn feature_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let rows = vec![
            FeatureRow {
                scan_id: "a".into(),
                z: 0,
                x0: 9,
                y0: 18,
                label: Some(true),
                features: vec![1.0, -2.5, 1e-17],
            },
            FeatureRow {
                scan_id: "b".into(),
                z: 3,
                x0: 0,
                y0: 0,
                label: None,
                features: vec![0.1, 0.2, 0.3],
            },
        ];
        // schema length will not match shape dim here; write raw
        let mut text = String::from("scan,z,x0,y0,label,f1,f2,f3\n");
        for r in &rows {
            let label = match r.label {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            };
            text.push_str(&format!(
                "{},{},{},{},{},{:?},{:?},{:?}\n",
                r.scan_id, r.z, r.x0, r.y0, label, r.features[0], r.features[1], r.features[2]
            ));
        }
        std::fs::write(&path, text).unwrap();
        let back = read_feature_csv(&path).unwrap();
        assert_eq!(back, rows);
    }
}
