//! Generates the synthetic dataset and builds the compositional split,
//! writing both to a directory.
//!
//! ```text
//! cargo run --release --example generate_and_split -- [out_dir]
//! ```

use std::path::PathBuf;

use adglab::commands::{cmd_gen, cmd_split, load_splits};
use adglab::config::ExperimentConfig;

fn main() -> adglab::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("adglab-example"));
    std::fs::create_dir_all(&out).map_err(|e| adglab::Error::io(&out, e))?;
    let cfg = ExperimentConfig::default();
    let dataset = out.join("dataset.jsonl");
    let g = cmd_gen(&cfg, &dataset)?;
    println!("wrote {} instances to {} (sha256 {})", g.manifest.instances, dataset.display(), g.manifest.sha256);

    let splits_dir = out.join("splits");
    cmd_split(&dataset, &cfg, &splits_dir)?;
    let (s, _) = load_splits(&splits_dir)?;
    for (name, part) in ["train", "trainval", "testval", "test"].iter().zip(s.parts()) {
        let categories: std::collections::BTreeSet<_> = part.iter().flat_map(|i| i.categories()).collect();
        println!("{name:<9} {:>6} instances {:>3} categories", part.len(), categories.len());
    }
    let [train, _, testval, test] = s.category_sets();
    println!("train/test shared categories: {}", train.intersection(&test).count());
    println!("train/testval shared categories: {}", train.intersection(&testval).count());
    Ok(())
}
