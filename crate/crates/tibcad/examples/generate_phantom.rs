//! Generate a synthetic chest phantom with ground-truth lung and TIB
//! masks and write it to `target/example_out/`.

use tibcad::phantom::{self, PhantomSpec};
use tibcad::volio;

fn main() -> anyhow::Result<()> {
    let out = std::path::Path::new("target/example_out");
    std::fs::create_dir_all(out)?;

    let spec = PhantomSpec {
        seed: 11,
        n_tib_clusters: 6,
        ..PhantomSpec::default()
    };
    let (vol, lungs, tib) = phantom::generate(&spec)?;

    volio::write_volume(&out.join("phantom.hdr"), &vol)?;
    volio::write_mask(&out.join("phantom_lungs_gt.hdr"), &lungs, vol.spacing())?;
    volio::write_mask(&out.join("phantom_tib.hdr"), &tib, vol.spacing())?;
    std::fs::write(out.join("phantom.spec"), spec.to_text())?;

    println!("dims {:?}, spacing {:?} mm", vol.dims(), vol.spacing());
    println!("lung voxels: {}", lungs.count());
    println!(
        "TIB voxels: {} in {} clusters (26-connected components: {})",
        tib.count(),
        spec.n_tib_clusters,
        phantom::component_count_26(&tib)
    );
    println!("written to {}", out.display());
    Ok(())
}
