//! Command-line front end for the tibcad pipeline. All logic lives in the
//! library; this binary only parses arguments and maps errors to exit
//! codes (0 ok, 2 config, 3 data, 4 degenerate statistics).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tibcad::bscale::BScaleParams;
use tibcad::eval;
use tibcad::fcseg::Affinity;
use tibcad::phantom::{self, PhantomSpec};
use tibcad::pipeline::{
    self, CompareConfig, FeatureMode, FeatureParams, PipelineConfig, PipelineError,
};
use tibcad::shapefeat::EnergyGate;
use tibcad::svm::{self, TrainConfig};
use tibcad::volio;

#[derive(Parser)]
#[command(
    name = "tibcad",
    about = "Tree-in-bud pattern detection in chest CT volumes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Clone)]
struct BScaleArgs {
    /// HU tolerance of the shell homogeneity test
    #[arg(long, default_value_t = 150.0)]
    intensity_tol: f64,
    /// Fraction of shell voxels that must be homogeneous
    #[arg(long, default_value_t = 0.85)]
    fraction: f64,
    /// Largest ball radius probed
    #[arg(long, default_value_t = 8)]
    r_max: u8,
    /// Candidates are voxels with scale at or below this
    #[arg(long, default_value_t = 3)]
    candidate_max_scale: u8,
}

impl BScaleArgs {
    fn params(&self) -> BScaleParams {
        BScaleParams {
            intensity_tol: self.intensity_tol,
            fraction_threshold: self.fraction,
            r_max: self.r_max,
            candidate_max_scale: self.candidate_max_scale,
            ..BScaleParams::default()
        }
    }
}

#[derive(clap::Args, Clone)]
struct FeatureArgs {
    /// Feature mode: shape, glcm, wavelet, shape+glcm, shape+wavelet
    #[arg(long)]
    mode: String,
    /// Patch size (9, 13 or 17)
    #[arg(long, default_value_t = 9)]
    patch_size: usize,
    /// Gaussian scale (pixels) for shape and wavelet features
    #[arg(long, default_value_t = 1.5)]
    sigma: f64,
    /// Disable candidate-presence gating
    #[arg(long)]
    no_gating: bool,
    /// Lower Willmore gate bound (shape modes)
    #[arg(long)]
    w_lo: Option<f64>,
    /// Upper Willmore gate bound (shape modes)
    #[arg(long)]
    w_hi: Option<f64>,
    /// TIB-overlap fraction separating abnormal from ambiguous patches
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
}

impl FeatureArgs {
    fn params(&self) -> Result<FeatureParams, PipelineError> {
        let mode: FeatureMode = self.mode.parse()?;
        let mut p = FeatureParams::new(mode, self.patch_size)?;
        p.sigma = self.sigma;
        p.gating = !self.no_gating;
        p.tau = self.tau;
        match (self.w_lo, self.w_hi) {
            (Some(lo), Some(hi)) => p.gate = EnergyGate { w_lo: lo, w_hi: hi },
            (None, None) => {}
            _ => {
                return Err(PipelineError::Config(
                    "--w-lo and --w-hi must be given together".into(),
                ))
            }
        }
        Ok(p)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom volume with ground-truth masks
    Phantom {
        /// Phantom spec file; defaults apply when omitted
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Override the spec's random seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of TIB clusters
        #[arg(long)]
        clusters: Option<usize>,
        /// Output prefix; writes <prefix>.hdr, <prefix>_lungs_gt.hdr,
        /// <prefix>_tib.hdr and <prefix>.spec
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment the lungs by fuzzy connectedness with automatic seeds
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Connectivity threshold in [0, 1]
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
    },
    /// Compute the ball-scale map and candidate mask inside the lungs
    Candidates {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lungs: PathBuf,
        /// Scale map output
        #[arg(long)]
        scale_out: PathBuf,
        /// Candidate mask output
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        bscale: BScaleArgs,
    },
    /// Extract per-patch features to CSV (plus a .schema manifest)
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lungs: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        /// Ground-truth TIB mask; enables the label column
        #[arg(long)]
        tib: Option<PathBuf>,
        /// Scan identifier recorded in the CSV
        #[arg(long, default_value = "scan")]
        scan_id: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        feature: FeatureArgs,
    },
    /// Train a linear SVM on a labeled feature CSV
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Training-set specificity of the stored operating threshold
        #[arg(long, default_value_t = 0.95)]
        specificity: f64,
    },
    /// Two-fold scan-level cross-validation on a labeled feature CSV
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 2)]
        folds: usize,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Text report output
        #[arg(long)]
        out: PathBuf,
        /// Optional ROC CSV of the first run
        #[arg(long)]
        roc_out: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
    },
    /// Compare feature sets over a labeled phantom suite
    Compare {
        /// Directory of cases: <id>.hdr, <id>_lungs.hdr, <id>_cand.hdr,
        /// <id>_tib.hdr
        #[arg(long)]
        suite: PathBuf,
        /// Comma-separated feature modes
        #[arg(long, default_value = "shape+glcm,shape,glcm")]
        modes: String,
        /// Comma-separated patch sizes
        #[arg(long, default_value = "9")]
        patch_sizes: String,
        #[arg(long, default_value_t = 10)]
        runs: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        #[arg(long, default_value_t = 150)]
        epochs: usize,
        /// Output prefix; writes <prefix>.txt, <prefix>_az.csv,
        /// <prefix>_p.csv and <prefix>_roc.svg
        #[arg(long)]
        out: PathBuf,
    },
    /// Full detection pipeline on one volume with a trained model
    Run {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report_out: PathBuf,
        /// Optional detection overlay mask output
        #[arg(long)]
        overlay_out: Option<PathBuf>,
        /// Stage cache directory
        #[arg(long)]
        cache_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        /// Decision threshold; defaults to the model's stored threshold
        #[arg(long)]
        threshold: Option<f64>,
        #[command(flatten)]
        bscale: BScaleArgs,
        #[command(flatten)]
        feature: FeatureArgs,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Phantom {
            spec,
            seed,
            clusters,
            out,
        } => {
            let mut ps = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
                    PhantomSpec::from_text(&text)
                        .map_err(|e| PipelineError::Config(e.to_string()))?
                }
                None => PhantomSpec::default(),
            };
            if let Some(s) = seed {
                ps.seed = s;
            }
            if let Some(k) = clusters {
                ps.n_tib_clusters = k;
            }
            let (vol, lungs_gt, tib) =
                phantom::generate(&ps).map_err(|e| PipelineError::Stage {
                    stage: "phantom",
                    message: e.to_string(),
                })?;
            let stem = out
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| PipelineError::Config("bad output prefix".into()))?
                .to_string();
            let sibling = |suffix: &str| out.with_file_name(format!("{stem}{suffix}"));
            volio::write_volume(&sibling(".hdr"), &vol)?;
            volio::write_mask(&sibling("_lungs_gt.hdr"), &lungs_gt, vol.spacing())?;
            volio::write_mask(&sibling("_tib.hdr"), &tib, vol.spacing())?;
            std::fs::write(sibling(".spec"), ps.to_text())
                .map_err(|e| PipelineError::Stage {
                    stage: "phantom",
                    message: e.to_string(),
                })?;
            println!(
                "phantom written: {} ({} TIB voxels)",
                sibling(".hdr").display(),
                tib.count()
            );
            Ok(())
        }
        Command::Segment { input, out, theta } => {
            let vol = volio::read_volume(&input)?;
            let mask = pipeline::segment_lungs(&vol, &Affinity::default(), theta)?;
            volio::write_mask(&out, &mask, vol.spacing())?;
            println!("lung mask: {} voxels", mask.count());
            Ok(())
        }
        Command::Candidates {
            input,
            lungs,
            scale_out,
            out,
            bscale,
        } => {
            let vol = volio::read_volume(&input)?;
            let lungs = volio::read_mask(&lungs)?;
            let (sm, cand) = pipeline::compute_candidates(&vol, &lungs, &bscale.params())?;
            volio::write_scale_map(&scale_out, &sm, vol.spacing())?;
            volio::write_mask(&out, &cand, vol.spacing())?;
            println!(
                "candidates: {} of {} lung voxels",
                cand.count(),
                lungs.count()
            );
            Ok(())
        }
        Command::Features {
            input,
            lungs,
            candidates,
            tib,
            scan_id,
            out,
            feature,
        } => {
            let p = feature.params()?;
            let vol = volio::read_volume(&input)?;
            let lungs = volio::read_mask(&lungs)?;
            let cand = volio::read_mask(&candidates)?;
            let tib = tib.map(|t| volio::read_mask(&t)).transpose()?;
            let rows =
                pipeline::extract_features(&scan_id, &vol, &lungs, &cand, tib.as_ref(), &p)?;
            pipeline::write_feature_csv(&out, &rows, p.mode, p.patch_size)?;
            println!("{} feature rows -> {}", rows.len(), out.display());
            Ok(())
        }
        Command::Train {
            features,
            out,
            c,
            epochs,
            seed,
            specificity,
        } => {
            let rows = pipeline::read_feature_csv(&features)?;
            let schema = std::fs::read_to_string(features.with_extension("schema"))
                .map_err(|e| PipelineError::Config(format!("missing schema manifest: {e}")))?;
            let mut x = Vec::with_capacity(rows.len());
            let mut y = Vec::with_capacity(rows.len());
            let mut labels = Vec::with_capacity(rows.len());
            for r in &rows {
                let label = r.label.ok_or_else(|| PipelineError::Config(
                    "training requires labeled rows".into(),
                ))?;
                x.push(r.features.clone());
                y.push(if label { 1.0 } else { -1.0 });
                labels.push(label);
            }
            let cfg = TrainConfig { c, epochs, seed };
            let mut model = svm::train(&x, &y, &schema, &cfg)?;
            let scores: Vec<f64> = x
                .iter()
                .map(|xi| model.decision(xi))
                .collect::<Result<_, _>>()?;
            model.operating_threshold =
                Some(pipeline::threshold_for_specificity(&scores, &labels, specificity)?);
            model.save(&out)?;
            println!(
                "model saved: {} (objective {:.6})",
                out.display(),
                model.final_objective
            );
            Ok(())
        }
        Command::Evaluate {
            features,
            folds,
            runs,
            seed,
            out,
            roc_out,
            c,
            epochs,
        } => {
            if folds != 2 {
                return Err(PipelineError::Config(
                    "only 2-fold cross-validation is supported".into(),
                ));
            }
            if runs == 0 {
                return Err(PipelineError::Config("runs must be positive".into()));
            }
            let rows = pipeline::read_feature_csv(&features)?;
            let schema = std::fs::read_to_string(features.with_extension("schema"))
                .map_err(|e| PipelineError::Config(format!("missing schema manifest: {e}")))?;
            let scans = pipeline::rows_to_scans(&rows)?;
            let cfg = TrainConfig { c, epochs, seed };
            let mut report = String::new();
            let mut first_roc = None;
            let mut aucs = Vec::new();
            use std::fmt::Write as _;
            for run in 0..runs {
                let cv = eval::crossval(&scans, &schema, &cfg, seed + run as u64)?;
                let _ = writeln!(
                    report,
                    "run {}: pooled_auc {:.6} fold_aucs {:.6} {:.6}",
                    run, cv.roc.auc, cv.fold_aucs[0], cv.fold_aucs[1]
                );
                aucs.push(cv.roc.auc);
                if first_roc.is_none() {
                    first_roc = Some(cv.roc);
                }
            }
            let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
            let _ = writeln!(report, "mean_pooled_auc {mean:.6}");
            std::fs::write(&out, &report).map_err(|e| PipelineError::Stage {
                stage: "evaluate",
                message: e.to_string(),
            })?;
            if let Some(roc_out) = roc_out {
                let curve = first_roc.expect("runs > 0");
                std::fs::write(&roc_out, pipeline::roc_csv(&curve)).map_err(|e| {
                    PipelineError::Stage {
                        stage: "evaluate",
                        message: e.to_string(),
                    }
                })?;
            }
            println!("mean pooled AUC over {runs} runs: {mean:.6}");
            Ok(())
        }
        Command::Compare {
            suite,
            modes,
            patch_sizes,
            runs,
            seed,
            c,
            epochs,
            out,
        } => {
            let modes: Vec<FeatureMode> = modes
                .split(',')
                .map(|m| m.trim().parse())
                .collect::<Result<_, _>>()?;
            let patch_sizes: Vec<usize> = patch_sizes
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|e| PipelineError::Config(format!("bad patch size: {e}")))
                })
                .collect::<Result<_, _>>()?;
            let cases = pipeline::discover_suite(&suite)?;
            let cfg = CompareConfig {
                modes,
                patch_sizes,
                runs,
                seed,
                train: TrainConfig {
                    c,
                    epochs,
                    seed,
                },
                ..CompareConfig::default()
            };
            let report = pipeline::compare_feature_sets(&cases, &cfg)?;
            let stem = out
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| PipelineError::Config("bad output prefix".into()))?
                .to_string();
            let sibling = |suffix: &str| out.with_file_name(format!("{stem}{suffix}"));
            let write = |path: PathBuf, data: String| {
                std::fs::write(&path, data).map_err(|e| PipelineError::Stage {
                    stage: "compare",
                    message: format!("{}: {e}", path.display()),
                })
            };
            write(sibling(".txt"), report.to_text())?;
            write(sibling("_az.csv"), report.az_csv())?;
            write(sibling("_p.csv"), report.p_csv())?;
            let curves: Vec<(String, &eval::RocCurve)> = report
                .results
                .iter()
                .map(|r| (format!("{} {}x{}", r.mode, r.patch_size, r.patch_size), &r.roc))
                .collect();
            write(sibling("_roc.svg"), pipeline::roc_svg(&curves))?;
            print!("{}", report.to_text());
            Ok(())
        }
        Command::Run {
            input,
            model,
            report_out,
            overlay_out,
            cache_dir,
            theta,
            threshold,
            bscale,
            feature,
        } => {
            let cfg = PipelineConfig {
                input,
                model,
                report_out,
                overlay_out,
                cache_dir,
                affinity: Affinity::default(),
                theta,
                bscale: bscale.params(),
                feature: feature.params()?,
                threshold,
            };
            let summary = pipeline::run_pipeline(&cfg)?;
            println!(
                "{} of {} patches scored, {} detections (threshold {:.6})",
                summary.scored_patches,
                summary.total_patches,
                summary.detections,
                summary.threshold
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
