//! Trains a single variant on a fresh dataset and prints its validation
//! curve and final scores.
//!
//! ```text
//! cargo run --release --example train_variant -- [variant] [lambda]
//! ```

use adglab::commands::train_and_score;
use adglab::config::ExperimentConfig;
use adglab::datagen::generate;
use adglab::losses::DgVariant;
use adglab::split::build_splits;
use adglab::trainer::LabelSpace;

fn main() -> adglab::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let variant: DgVariant = args.first().map_or(Ok(DgVariant::CadgKld), |s| s.parse())?;
    let mut cfg = ExperimentConfig::default();
    let base = cfg.variants.iter().find(|v| v.variant == variant).cloned();
    let mut tc = base.map_or_else(|| cfg.train.clone(), |v| v.resolve(&cfg.train));
    tc.variant = variant;
    if let Some(l) = args.get(1).and_then(|s| s.parse().ok()) {
        tc.lambda = Some(l);
    }
    cfg.train = tc.clone();

    let g = generate(&cfg.generator)?;
    let splits = build_splits(&g.instances, &cfg.split)?;
    let labels = LabelSpace { num_predicates: cfg.generator.num_predicates, num_objects: cfg.generator.num_objects };
    println!("training {} with lambda {} for {} steps", variant.label(), tc.lambda(), tc.steps);
    let run = train_and_score(&tc, &splits, labels, cfg.metrics.mode)?;
    for e in run.outcome.log.entries.iter().filter(|e| e.validation_r1.is_some()) {
        println!(
            "step {:>5}  L_U {:.4}  L_DG {:+.4}  val R@1 {:.3}",
            e.step,
            e.report.l_u,
            e.report.l_dg,
            e.validation_r1.unwrap_or(f64::NAN)
        );
    }
    println!("best step {:?}", run.summary.best_step);
    for (name, s) in &run.summary.splits {
        println!("{name:<9} R@1 {:.3}  without union {:.3}  frequency {:.3}", s.r1, s.r1_without_union, s.frequency_r1);
    }
    Ok(())
}
