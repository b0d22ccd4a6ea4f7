//! ROC analysis and two-fold scan-level cross-validation on a synthetic
//! labeled dataset, plus a paired t-test between two feature sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tibcad::eval::{crossval, mann_whitney_auc, paired_ttest, roc, ScanFeatures};
use tibcad::svm::TrainConfig;

fn synthetic_scans(rng: &mut ChaCha20Rng, separation: f64) -> Vec<ScanFeatures> {
    (0..12)
        .map(|i| {
            let abnormal_scan = i % 2 == 0;
            let rows = (0..40)
                .map(|_| {
                    let label = abnormal_scan && rng.gen_bool(0.4);
                    let shift = if label { separation } else { 0.0 };
                    let features = vec![
                        shift + rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ];
                    (label, features)
                })
                .collect();
            ScanFeatures {
                scan_id: format!("scan{i:02}"),
                rows,
            }
        })
        .collect()
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let scores: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels: Vec<bool> = scores
        .iter()
        .map(|&s| rng.gen_bool(0.2 + 0.6 * s))
        .collect();
    let curve = roc(&scores, &labels)?;
    println!(
        "ROC on synthetic scores: AUC {:.6} (Mann-Whitney check {:.6})",
        curve.auc,
        mann_whitney_auc(&scores, &labels)
    );

    let cfg = TrainConfig::default();
    let mut strong_aucs = Vec::new();
    let mut weak_aucs = Vec::new();
    for run in 0..5 {
        let strong = synthetic_scans(&mut rng, 2.0);
        let weak = synthetic_scans(&mut rng, 0.6);
        let cv_strong = crossval(&strong, "f0,f1", &cfg, run)?;
        let cv_weak = crossval(&weak, "f0,f1", &cfg, run)?;
        strong_aucs.extend_from_slice(&cv_strong.fold_aucs);
        weak_aucs.extend_from_slice(&cv_weak.fold_aucs);
        if run == 0 {
            println!(
                "cross-validation: strong features AUC {:.4}, weak features AUC {:.4}",
                cv_strong.roc.auc, cv_weak.roc.auc
            );
        }
    }
    let (t, p) = paired_ttest(&strong_aucs, &weak_aucs)?;
    println!("paired t-test over {} fold AUCs: t {t:.3}, p {p:.5}", strong_aucs.len());
    Ok(())
}
