//! Sensitivity to the clustering rate.
//!
//! Runs one adaptation per `gamma_dec` (the dissimilarity rate follows
//! at twice the value) and writes the table as CSV to stdout. Pass
//! `--parallel` to run the grid on threads.

use std::path::Path;

use rudx::adapt::{lr_sweep, pretrain_source, write_sweep_csv};
use rudx::eval::evaluate;
use rudx::manifest::parse_manifest;

fn main() -> rudx::error::Result<()> {
    let parallel = std::env::args().any(|a| a == "--parallel");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/synthetic_balanced.toml");
    let m = parse_manifest(&config)?;
    let (source, target) = m.load_domains()?;
    let bundle = pretrain_source(m.build_bundle(&source)?, &source, &m.pretrain)?;
    eprintln!("source-only accuracy {:.3}", evaluate(&bundle, &target, None)?.overall_acc);

    let grid = [1e-5, 1e-4, 1e-3, 7e-3];
    let rows = lr_sweep(&bundle, &target, &source, &m.adapt, &grid, parallel)?;
    write_sweep_csv(&rows, std::io::stdout().lock())
}
