//! Balanced adaptation on a rotated and shifted blob pair.
//!
//! Pretrains on the source domain, reports the source-only target
//! accuracy, then runs the full method and prints each evaluation.
//!
//! ```text
//! cargo run --release --example synthetic_balanced
//! ```

use std::path::Path;

use rudx::adapt::{pretrain_source, run_adaptation_with};
use rudx::eval::evaluate;
use rudx::manifest::parse_manifest;

fn main() -> rudx::error::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/synthetic_balanced.toml");
    let m = parse_manifest(&config)?;
    let (source, target) = m.load_domains()?;
    let bundle = pretrain_source(m.build_bundle(&source)?, &source, &m.pretrain)?;
    let baseline = evaluate(&bundle, &target, None)?;
    println!("source-only target accuracy {:.3}", baseline.overall_acc);

    let outcome = run_adaptation_with(bundle, &target, &source, &m.adapt, |r| {
        println!("iter {:>5}  accuracy {:.3}  cluster accuracy {:.3}", r.iter, r.overall_acc, r.cluster_acc);
    })?;
    let last = outcome.state.traces.last().expect("at least one iteration");
    println!(
        "final losses: adv {:.4} enc {:.4} dec {:?} dis {:?}",
        last.adv, last.enc, last.dec, last.dis
    );
    Ok(())
}
