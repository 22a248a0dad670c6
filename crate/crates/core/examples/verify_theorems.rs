//! Checks the closed-form divergence identities on the shipped fixtures and
//! on a few random families, then fits a discriminator to one of them.
//!
//! ```text
//! cargo run --release --example verify_theorems
//! ```

use std::path::Path;

use adglab::commands::cmd_verify_theorems;
use adglab::divergence::{ConditionalFamily, DiscreteDomainFamily};
use adglab::trainer::{fit_tabular_adg, TabularFitConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> adglab::Result<()> {
    let fixtures = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/theorems");
    let report = cmd_verify_theorems(&fixtures)?;
    print!("{}", report.render());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let family = DiscreteDomainFamily::random(&mut rng, 4, 6);
    let d = family.optimal_discriminator();
    println!("\nrandom family with 4 domains over 6 bins");
    println!("  objective at D*        {:.12}", family.adg_objective(&d.values));
    println!("  kld + sum a ln a       {:.12}", family.kld() + family.weight_entropy_term());

    let cond = ConditionalFamily::random(&mut rng, 3, 4, 6);
    let mass: f64 = cond.classes().iter().map(|k| k.weight).sum();
    println!("random conditional family with 3 classes");
    println!("  jsd objective at D*    {:.12}", cond.cadg_jsd_objective(&cond.optimal_jsd_discriminator()));
    println!("  2 cjsd - ln4 sum a     {:.12}", 2.0 * cond.cjsd() - 4f64.ln() * mass);

    let fit = fit_tabular_adg(&family, &TabularFitConfig::softmax())?;
    println!("trained softmax discriminator reaches {:.6} (optimum {:.6}, gap {:.1e})", fit.objective, fit.optimum, fit.gap());
    Ok(())
}
