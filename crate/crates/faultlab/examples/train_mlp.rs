//! Deterministic baseline: synthetic blob clusters, the 64-320-256-10 MLP,
//! SGD training, and a saved model directory.
//!
//! ```bash
//! cargo run --example train_mlp
//! ```

use faultlab::nn::{accuracy, save_model, train_sgd, HookSet};
use faultlab::rng::derive_seed;
use faultlab::zoo;

fn main() {
    let seed = zoo::ZOO_SEED;
    let data = zoo::default_blobs(seed);
    println!(
        "blobs: {} samples, {} train / {} test, {} classes",
        data.n(),
        data.train_set().len(),
        data.test_set().len(),
        zoo::BLOBS_CLASSES
    );

    let model = zoo::mlp(seed);
    let before = accuracy(&model, &data.test_set(), &mut HookSet::new()).unwrap();
    println!("untrained accuracy: {before:.4}");

    let trained = train_sgd(
        &model,
        &data.train_set(),
        zoo::DENSE_EPOCHS,
        zoo::DENSE_LEARNING_RATE,
        derive_seed(seed, 20),
    )
    .unwrap();
    let after = accuracy(&trained, &data.test_set(), &mut HookSet::new()).unwrap();
    println!("trained accuracy:   {after:.4}");

    let dir = std::env::temp_dir().join("faultlab_mlp_demo");
    save_model(&trained, &dir).unwrap();
    println!("model written to {}", dir.display());
    println!(
        "weight elements available for injection: {}",
        trained
            .injectable_layers(true)
            .iter()
            .map(|l| trained.weight_of(l).unwrap().len())
            .sum::<usize>()
    );
}
