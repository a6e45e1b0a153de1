//! Partial adaptation: ten source classes, six of them in the target.
//!
//! Mixing source rows into each target batch keeps the target features
//! from being pulled onto the classes the target does not have.

use std::path::Path;

use rudx::adapt::{pretrain_source, run_adaptation, Ablation};
use rudx::eval::evaluate;
use rudx::manifest::parse_manifest;

fn main() -> rudx::error::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/synthetic_partial.toml");
    let m = parse_manifest(&config)?;
    let (source, target) = m.load_domains()?;
    let present: Vec<usize> = target
        .class_counts()?
        .iter()
        .enumerate()
        .filter(|(_, &n)| n > 0)
        .map(|(c, _)| c)
        .collect();
    println!("source has {} classes, target has {present:?}", source.label_domain_size());

    let bundle = pretrain_source(m.build_bundle(&source)?, &source, &m.pretrain)?;
    println!("{:<12} {:.3}", "source only", evaluate(&bundle, &target, None)?.overall_acc);
    for ablation in [Ablation::AddaOnly, Ablation::AddaMix, Ablation::Full] {
        let mut cfg = m.adapt.clone();
        cfg.ablation = ablation;
        let out = run_adaptation(bundle.clone(), &target, &source, &cfg)?;
        let report = out.report.expect("target is labeled");
        let stray = report
            .confusion
            .iter()
            .map(|row| row.iter().enumerate().filter(|(c, _)| !present.contains(c)).map(|(_, n)| n).sum::<u64>())
            .sum::<u64>();
        println!(
            "{:<12} {:.3}  (mix {}, {stray} predictions on absent classes)",
            ablation.to_string(),
            report.overall_acc,
            cfg.effective_mix_ratio()
        );
    }
    Ok(())
}
