//! Trains every configured variant over several seeds and prints the
//! comparison table.
//!
//! ```text
//! cargo run --release --example directional_effect -- [config.toml] [seeds]
//! ```

use adglab::commands::{compare, run_experiment};
use adglab::config::ExperimentConfig;

fn main() -> adglab::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = match args.first() {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let start = std::time::Instant::now();
    let mut summaries = Vec::new();
    for seed in 0..seeds {
        let runs = run_experiment(&cfg.clone().with_seed(seed))?;
        for r in &runs {
            let get = |n: &str| r.splits.get(n).map_or(f64::NAN, |s| s.r1);
            let hsp = r.splits.get("test").map_or(f64::NAN, |s| s.r1_without_union);
            let un = r.splits.get("test").map_or(f64::NAN, |s| s.union_r1);
            let untv = r.splits.get("trainval").map_or(f64::NAN, |s| s.union_r1);
            let freq = r.splits.get("trainval").map_or(f64::NAN, |s| s.frequency_r1);
            println!(
                "seed {seed} {:<9} trainval {:.3} testval {:.3} test {:.3} test-hsp {:.3} union tv/test {:.3}/{:.3} freq-trainval {:.3}",
                r.variant.label(),
                get("trainval"),
                get("testval"),
                get("test"),
                hsp,
                untv,
                un,
                freq
            );
        }
        summaries.extend(runs);
    }
    let cmp = compare(&summaries)?;
    print!("{}", cmp.render());
    for row in &cmp.rows {
        if let Some(u) = row.union_contribution.get("test") {
            println!("{:<9} union contribution on test {:+.4}", row.method, u);
        }
    }
    println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
