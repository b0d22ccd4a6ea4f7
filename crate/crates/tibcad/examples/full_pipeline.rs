//! End-to-end run: build a small labeled phantom suite, extract gated
//! shape+GLCM features, train an SVM with a 95%-specificity operating
//! threshold, then run the full detection pipeline on an unseen phantom.

use std::path::Path;

use tibcad::bscale::BScaleParams;
use tibcad::fcseg::Affinity;
use tibcad::phantom::{self, PhantomSpec};
use tibcad::pipeline::{
    self, FeatureMode, FeatureParams, PipelineConfig,
};
use tibcad::svm::{train, TrainConfig};
use tibcad::volio;

fn main() -> anyhow::Result<()> {
    let out = Path::new("target/example_out/pipeline");
    std::fs::create_dir_all(out)?;
    let affinity = Affinity::default();
    let bscale = BScaleParams::default();

    // 1. training suite: 4 phantoms with TIB, 2 clean
    let mut cases = Vec::new();
    for seed in 1..=6u64 {
        let spec = PhantomSpec {
            seed,
            n_tib_clusters: if seed <= 4 { 8 } else { 0 },
            ..PhantomSpec::default()
        };
        let (vol, _gt, tib) = phantom::generate(&spec)?;
        let lungs = pipeline::segment_lungs(&vol, &affinity, 0.5)?;
        let (_, cand) = pipeline::compute_candidates(&vol, &lungs, &bscale)?;
        cases.push((vol, lungs, cand, tib));
    }

    // 2. Willmore gate + gated shape+GLCM features at 9x9
    let gate_cases: Vec<_> = cases.iter().map(|(v, l, _, t)| (v, l, t)).collect();
    let gate = pipeline::train_gate(&gate_cases, 9, 1.5)?;
    println!("trained Willmore gate: [{:.4}, {:.4}]", gate.w_lo, gate.w_hi);
    let mut params = FeatureParams::new(FeatureMode::ShapeGlcm, 9)?;
    params.gate = gate;

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut labels = Vec::new();
    for (i, (vol, lungs, cand, tib)) in cases.iter().enumerate() {
        let rows = pipeline::extract_features(
            &format!("train{i}"),
            vol,
            lungs,
            cand,
            Some(tib),
            &params,
        )?;
        for r in rows {
            let label = r.label.expect("labeled suite");
            x.push(r.features);
            y.push(if label { 1.0 } else { -1.0 });
            labels.push(label);
        }
    }
    println!(
        "training rows: {} ({} abnormal)",
        x.len(),
        labels.iter().filter(|&&l| l).count()
    );

    // 3. train and pick the operating point at 95% training specificity
    let schema = pipeline::schema_text(params.mode, params.patch_size);
    let mut model = train(&x, &y, &schema, &TrainConfig::default())?;
    let scores: Vec<f64> = x
        .iter()
        .map(|xi| model.decision(xi))
        .collect::<Result<_, _>>()?;
    model.operating_threshold =
        Some(pipeline::threshold_for_specificity(&scores, &labels, 0.95)?);
    let model_path = out.join("model.txt");
    model.save(&model_path)?;

    // 4. full pipeline on an unseen abnormal phantom
    let test_spec = PhantomSpec {
        seed: 99,
        ..PhantomSpec::default()
    };
    let (test_vol, _gt, test_tib) = phantom::generate(&test_spec)?;
    let input = out.join("test_case.hdr");
    volio::write_volume(&input, &test_vol)?;
    let cfg = PipelineConfig {
        input,
        model: model_path,
        report_out: out.join("report.txt"),
        overlay_out: Some(out.join("overlay.hdr")),
        cache_dir: Some(out.join("cache")),
        affinity,
        theta: 0.5,
        bscale,
        feature: params,
        threshold: None,
    };
    let summary = pipeline::run_pipeline(&cfg)?;
    println!(
        "test case: {} of {} patches scored, {} detections at threshold {:.4}",
        summary.scored_patches, summary.total_patches, summary.detections, summary.threshold
    );

    // how many detections actually overlap the inserted pattern?
    let overlay = volio::read_mask(&out.join("overlay.hdr"))?;
    let hit = overlay.intersect(&test_tib).count();
    println!(
        "overlay covers {hit} of {} TIB voxels; report at {}",
        test_tib.count(),
        out.join("report.txt").display()
    );
    Ok(())
}
