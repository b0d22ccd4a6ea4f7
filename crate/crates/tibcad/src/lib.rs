//! Computer-assisted detection of tree-in-bud (TIB) patterns in chest CT.
//!
//! The pipeline segments the lungs by fuzzy connectedness, localizes
//! candidate TIB voxels through ball-scale filtering, extracts curvature
//! (Willmore-energy based) shape features and GLCM / steerable-wavelet
//! texture features from candidate-bearing patches, classifies patches
//! with a linear SVM, and evaluates with two-fold cross-validated ROC
//! curves. A deterministic synthetic phantom generator provides ground
//! truth for desk-scale experiments.
//!
//! See the `examples/` directory for one runnable example per stage and
//! the `tibcad` binary for the end-to-end command-line interface.

pub mod bscale;
pub mod eval;
pub mod fcseg;
pub mod phantom;
pub mod pipeline;
pub mod shapefeat;
pub mod svm;
pub mod texfeat;
pub mod volio;
