//! Train the linear soft-margin SVM on a small synthetic two-class
//! problem, save and reload the model, and score held-out points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tibcad::svm::{train, SvmModel, TrainConfig};

fn sample(rng: &mut ChaCha20Rng, center: (f64, f64)) -> Vec<f64> {
    vec![
        center.0 + rng.gen_range(-1.0..1.0),
        center.1 + rng.gen_range(-1.0..1.0),
    ]
}

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..200 {
        x.push(sample(&mut rng, (1.5, 0.5)));
        y.push(1.0);
        x.push(sample(&mut rng, (-1.5, -0.5)));
        y.push(-1.0);
    }
    let schema = "f0,f1";
    let cfg = TrainConfig::default();
    let model = train(&x, &y, schema, &cfg)?;
    println!("final objective: {:.6}", model.final_objective);
    println!("weights: {:?}  bias: {:.4}", model.weights, model.bias);

    let out = std::path::Path::new("target/example_out");
    std::fs::create_dir_all(out)?;
    let path = out.join("svm_model.txt");
    model.save(&path)?;
    let reloaded = SvmModel::load(&path)?;

    let mut correct = 0;
    let held_out: Vec<(Vec<f64>, f64)> = (0..100)
        .map(|i| {
            if i % 2 == 0 {
                (sample(&mut rng, (1.5, 0.5)), 1.0)
            } else {
                (sample(&mut rng, (-1.5, -0.5)), -1.0)
            }
        })
        .collect();
    for (xi, yi) in &held_out {
        let s = reloaded.decision_checked(xi, schema)?;
        if s * yi > 0.0 {
            correct += 1;
        }
    }
    println!("held-out accuracy: {correct}/100");
    Ok(())
}
