//! Ranks predicates by training-set co-occurrence with the object and
//! shows how that prior does on seen and novel categories.
//!
//! ```text
//! cargo run --release --example frequency_baseline -- [seeds]
//! ```

use adglab::config::ExperimentConfig;
use adglab::datagen::generate;
use adglab::metrics::{frequency_baseline, frequency_predictions, predcls_recall};
use adglab::split::build_splits;
use adglab::stats::FrequencyTable;

fn main() -> adglab::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    for seed in 0..seeds {
        let cfg = ExperimentConfig::default().with_seed(seed);
        let g = generate(&cfg.generator)?;
        let s = build_splits(&g.instances, &cfg.split)?;
        let table = FrequencyTable::from_instances(&s.train, cfg.generator.num_predicates, cfg.generator.num_objects);
        if seed == 0 {
            println!("object 0 predicate scores {:?}", frequency_baseline(&table, 0));
        }
        let r1 = |part: &[adglab::data::Instance]| predcls_recall(&frequency_predictions(&table, part), 1, cfg.metrics.mode);
        println!("seed {seed}: trainval R@1 {:.3}  testval R@1 {:.3}  test R@1 {:.3}", r1(&s.trainval)?, r1(&s.testval)?, r1(&s.test)?);
    }
    Ok(())
}
