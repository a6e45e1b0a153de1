//! Class-imbalanced target: plain adversarial alignment against the
//! clustering-regularized variant.
//!
//! The target keeps all of class 0 and a linearly shrinking share of
//! the rest. Both arms share the same pretrained model and rates; the
//! table shows per-class accuracy so the damage done to the largest
//! class by adversarial-only alignment is visible.

use std::path::Path;

use rudx::adapt::{pretrain_source, run_adaptation, Ablation};
use rudx::eval::evaluate;
use rudx::manifest::parse_manifest;

fn main() -> rudx::error::Result<()> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/synthetic_imbalanced.toml");
    let m = parse_manifest(&config)?;
    let (source, target) = m.load_domains()?;
    println!("target class counts {:?}", target.class_counts()?);

    let bundle = pretrain_source(m.build_bundle(&source)?, &source, &m.pretrain)?;
    let mut rows = vec![("source only", evaluate(&bundle, &target, None)?)];
    for ablation in [Ablation::AddaOnly, Ablation::Full] {
        let mut cfg = m.adapt.clone();
        cfg.ablation = ablation;
        let out = run_adaptation(bundle.clone(), &target, &source, &cfg)?;
        let name = if ablation == Ablation::Full { "full" } else { "adda_only" };
        rows.push((name, out.report.expect("target is labeled")));
    }

    println!("{:<12} {:>8}  per class", "arm", "overall");
    for (name, r) in rows {
        let per: Vec<String> = r
            .per_class_acc
            .iter()
            .map(|a| a.map_or("-".into(), |v| format!("{v:.2}")))
            .collect();
        println!("{name:<12} {:>8.3}  {}", r.overall_acc, per.join(" "));
    }
    Ok(())
}
