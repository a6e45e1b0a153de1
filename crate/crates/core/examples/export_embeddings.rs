//! Writes source, target and centroid features before and after
//! adaptation, for plotting with any CSV-aware tool.
//!
//! ```text
//! cargo run --release --example export_embeddings -- /tmp/emb
//! ```
//!
//! produces `before.csv` and `after.csv` in the given directory
//! (default `runs/embeddings`).

use std::path::{Path, PathBuf};

use rudx::adapt::{init_centroids, pretrain_source, run_adaptation};
use rudx::eval::{export_embeddings, DomainTag};
use rudx::manifest::parse_manifest;

fn main() -> rudx::error::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| "runs/embeddings".into());
    std::fs::create_dir_all(&out)?;
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/synthetic_balanced.toml");
    let m = parse_manifest(&config)?;
    let (source, target) = m.load_domains()?;
    let bundle = pretrain_source(m.build_bundle(&source)?, &source, &m.pretrain)?;
    let domains = [(DomainTag::Source, &source), (DomainTag::Target, &target)];

    let initial = init_centroids(&bundle, &target, &source, m.adapt.mode)?;
    export_embeddings(&bundle, &domains, Some(initial.matrix()), &out.join("before.csv"))?;

    let run = run_adaptation(bundle, &target, &source, &m.adapt)?;
    export_embeddings(&run.state.bundle, &domains, Some(run.state.centroids.matrix()), &out.join("after.csv"))?;
    println!("wrote {} and {}", out.join("before.csv").display(), out.join("after.csv").display());
    Ok(())
}
