//! Checks against the official MNIST files when present (MNIST_DIR or
//! ./data/mnist); silently passes otherwise so the suite does not depend on
//! the download.

use std::path::PathBuf;

use logitsep_core::data::{load_idx, SplitTag};

fn mnist_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("MNIST_DIR").map(PathBuf::from),
        Some(PathBuf::from("data/mnist")),
        Some(PathBuf::from("../../data/mnist")),
    ];
    candidates.into_iter().flatten().find(|dir| {
        dir.join("train-images-idx3-ubyte").exists()
            && dir.join("train-labels-idx1-ubyte").exists()
    })
}

#[test]
fn official_train_files_have_the_public_dimensions() {
    let Some(dir) = mnist_dir() else {
        eprintln!("mnist files not present; skipping");
        return;
    };
    let ds = load_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        SplitTag::Train,
    )
    .unwrap();
    assert_eq!(ds.n(), 60_000);
    assert_eq!(ds.d(), 784);
    assert_eq!(ds.k(), 10);
    assert!(ds.features().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}
