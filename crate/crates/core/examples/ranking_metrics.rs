//! Scores a handful of hand-made predictions with the PredCls and PredDet
//! recall metrics.
//!
//! ```text
//! cargo run --release --example ranking_metrics
//! ```

use adglab::metrics::{MetricsReport, PredClsMode, RankedPrediction};

fn main() -> adglab::Result<()> {
    // three predicates; two images, the second with two interaction pairs
    let preds = vec![
        RankedPrediction::new(0, 0, vec![0.9, 0.2, 0.1], vec![0]),
        RankedPrediction::new(1, 1, vec![0.3, 0.6, 0.5], vec![2]),
        RankedPrediction::new(2, 1, vec![0.7, 0.7, 0.1], vec![1, 2]),
    ];
    for p in &preds {
        println!("instance {} ranking {:?} truth {:?}", p.instance_id, p.ranking(), p.truth);
    }
    for mode in [PredClsMode::PerPair, PredClsMode::AnyHit] {
        let r = MetricsReport::compute(&preds, 3, mode)?;
        println!("{mode:?}: PredCls R@1 {:.3} R@5 {:.3}", r.predcls_r1, r.predcls_r5);
    }
    let r = MetricsReport::compute(&preds, 3, PredClsMode::PerPair)?;
    println!("PredDet R@5 {:.3} R@10 {:.3}", r.preddet_r5, r.preddet_r10);
    print!("{}", r.per_class_csv());
    Ok(())
}
