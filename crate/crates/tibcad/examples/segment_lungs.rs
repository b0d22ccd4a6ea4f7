//! Segment the lungs of a phantom volume by fuzzy connectedness with
//! automatically detected seeds, and compare against the ground truth.

use tibcad::fcseg::Affinity;
use tibcad::phantom::{self, PhantomSpec};
use tibcad::pipeline;

fn main() -> anyhow::Result<()> {
    let spec = PhantomSpec {
        seed: 11,
        ..PhantomSpec::default()
    };
    let (vol, lungs_gt, _tib) = phantom::generate(&spec)?;

    let mask = pipeline::segment_lungs(&vol, &Affinity::default(), 0.5)?;

    let inter = mask.intersect(&lungs_gt).count() as f64;
    let dice = 2.0 * inter / (mask.count() + lungs_gt.count()) as f64;
    println!("segmented voxels: {}", mask.count());
    println!("ground truth voxels: {}", lungs_gt.count());
    println!("Dice overlap: {dice:.4}");
    Ok(())
}
