//! ROC analysis, two-fold cross-validation and paired t-tests.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::svm::{self, SvmError, TrainConfig};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("scores and labels length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} scans per class, got {got}")]
    TooFewScans { needed: usize, got: usize },
    #[error("could not produce folds with both classes after {0} shuffles")]
    FoldDegenerate(usize),
    #[error("degenerate paired t-test: zero variance of differences")]
    DegenerateTest,
    #[error("paired t-test needs equal lengths >= 2")]
    BadPairs,
    #[error(transparent)]
    Svm(#[from] SvmError),
}

/// Threshold-swept operating points with trapezoidal AUC.
#[derive(Debug, Clone)]
pub struct RocCurve {
    /// (threshold, fpr, tpr) per distinct score, descending threshold.
    pub points: Vec<(f64, f64, f64)>,
    pub auc: f64,
}

/// Sweep distinct scores descending, grouping ties; AUC by trapezoid.
pub fn roc(scores: &[f64], labels: &[bool]) -> Result<RocCurve, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let mut points = vec![(f64::INFINITY, 0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut auc = 0.0;
    let (mut prev_fpr, mut prev_tpr) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // consume the whole tie group at this threshold
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / n_pos as f64;
        let fpr = fp as f64 / n_neg as f64;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        points.push((threshold, fpr, tpr));
        prev_fpr = fpr;
        prev_tpr = tpr;
    }
    Ok(RocCurve { points, auc })
}

/// One scan's labeled feature rows; the unit of fold assignment.
#[derive(Debug, Clone)]
pub struct ScanFeatures {
    pub scan_id: String,
    /// (label, features) per retained patch.
    pub rows: Vec<(bool, Vec<f64>)>,
}

impl ScanFeatures {
    fn has_class(&self, positive: bool) -> bool {
        self.rows.iter().any(|(l, _)| *l == positive)
    }
}

#[derive(Debug, Clone)]
pub struct CvResult {
    /// ROC over pooled out-of-fold scores.
    pub roc: RocCurve,
    /// AUC of each fold's own out-of-fold scores.
    pub fold_aucs: [f64; 2],
    /// scan_id -> fold assignment.
    pub fold_assignment: Vec<(String, usize)>,
    /// Pooled (score, label) pairs in scan order.
    pub pooled: Vec<(f64, bool)>,
}

/// Seeded two-fold cross-validation at scan granularity. Each fold is
/// scored by a model trained on the other; reshuffles up to 100 times if
/// a fold ends up with a single class.
pub fn crossval(
    dataset: &[ScanFeatures],
    schema: &str,
    train_cfg: &TrainConfig,
    seed: u64,
) -> Result<CvResult, EvalError> {
    let n_pos_scans = dataset.iter().filter(|s| s.has_class(true)).count();
    let n_neg_scans = dataset.iter().filter(|s| s.has_class(false)).count();
    if n_pos_scans < 2 || n_neg_scans < 2 {
        return Err(EvalError::TooFewScans {
            needed: 2,
            got: n_pos_scans.min(n_neg_scans),
        });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut folds: Option<Vec<usize>> = None;
    for _ in 0..100 {
        order.shuffle(&mut rng);
        let half = dataset.len() / 2;
        let mut assign = vec![0usize; dataset.len()];
        for (rank, &scan) in order.iter().enumerate() {
            assign[scan] = usize::from(rank >= half);
        }
        let fold_ok = |fold: usize| {
            let pos = dataset
                .iter()
                .enumerate()
                .any(|(i, s)| assign[i] == fold && s.has_class(true));
            let neg = dataset
                .iter()
                .enumerate()
                .any(|(i, s)| assign[i] == fold && s.has_class(false));
            pos && neg
        };
        if fold_ok(0) && fold_ok(1) {
            folds = Some(assign);
            break;
        }
    }
    let assign = folds.ok_or(EvalError::FoldDegenerate(100))?;

    let mut pooled: Vec<(f64, bool)> = Vec::new();
    let mut fold_aucs = [0.0f64; 2];
    for test_fold in 0..2 {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (i, scan) in dataset.iter().enumerate() {
            if assign[i] != test_fold {
                for (label, feats) in &scan.rows {
                    x.push(feats.clone());
                    y.push(if *label { 1.0 } else { -1.0 });
                }
            }
        }
        let model = svm::train(&x, &y, schema, train_cfg)?;
        let mut fold_scores = Vec::new();
        let mut fold_labels = Vec::new();
        for (i, scan) in dataset.iter().enumerate() {
            if assign[i] == test_fold {
                for (label, feats) in &scan.rows {
                    let s = model.decision(feats)?;
                    fold_scores.push(s);
                    fold_labels.push(*label);
                }
            }
        }
        fold_aucs[test_fold] = roc(&fold_scores, &fold_labels)?.auc;
        // standardize within the fold before pooling: the two fold models
        // produce scores on incomparable scales, and pooling them raw
        // would corrupt the pooled ranking
        let n = fold_scores.len() as f64;
        let mean = fold_scores.iter().sum::<f64>() / n;
        let sd = (fold_scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        for (s, l) in fold_scores.iter().zip(&fold_labels) {
            pooled.push(((s - mean) / sd, *l));
        }
    }
    let scores: Vec<f64> = pooled.iter().map(|&(s, _)| s).collect();
    let labels: Vec<bool> = pooled.iter().map(|&(_, l)| l).collect();
    let pooled_roc = roc(&scores, &labels)?;
    Ok(CvResult {
        roc: pooled_roc,
        fold_aucs,
        fold_assignment: dataset
            .iter()
            .enumerate()
            .map(|(i, s)| (s.scan_id.clone(), assign[i]))
            .collect(),
        pooled,
    })
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos approximation, g = 7
    const COEFFS: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut a = COEFFS[0];
        let t = x + 7.5;
        for (i, &c) in COEFFS.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }
}

/// Continued-fraction evaluation of the regularized incomplete beta
/// function I_x(a, b) (Lentz's method).
pub fn betainc(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x));
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    let symmetric = x >= (a + 1.0) / (a + b + 2.0);
    let (a, b, x) = if symmetric { (b, a, 1.0 - x) } else { (a, b, x) };
    // continued fraction for I_x(a,b) * a / front
    let tiny = 1e-300;
    let mut c = 1.0f64;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..200 {
        let m = m as f64;
        // even step
        let num = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 + num * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + num / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        // odd step
        let num = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + num * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + num / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    let result = front * h / a;
    if symmetric {
        1.0 - result
    } else {
        result
    }
}

/// Two-sided p-value of the t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    betainc(df / 2.0, 0.5, x)
}

/// Paired t-test: t = mean(d) / (sd(d)/sqrt(n)) with n-1 denominator sd.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<(f64, f64), EvalError> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(EvalError::BadPairs);
    }
    let n = a.len() as f64;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(EvalError::DegenerateTest);
    }
    let t = mean / (var.sqrt() / n.sqrt());
    let p = t_two_sided_p(t, n - 1.0);
    Ok((t, p))
}

/// Mann-Whitney AUC with tie correction: fraction of (pos, neg) pairs
/// where the positive outscores the negative, ties counting half.
pub fn mann_whitney_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0.0f64;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}
