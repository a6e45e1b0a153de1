//! MNIST to USPS with the convolutional encoder.
//!
//! Needs `RUDX_DATA_DIR` holding `train-images-idx3-ubyte`,
//! `train-labels-idx1-ubyte` and the USPS pair produced by
//! `rudx convert-usps` (`usps-images-idx3-ubyte`,
//! `usps-labels-idx1-ubyte`). Exits quietly when they are absent.
//! Settings live in `examples/configs/mnist_usps.toml`.
//! Expect a long run on a CPU.

use std::path::{Path, PathBuf};

use rudx::adapt::{pretrain_source, run_adaptation_with};
use rudx::eval::evaluate;
use rudx::manifest::parse_manifest;

const FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "usps-images-idx3-ubyte",
    "usps-labels-idx1-ubyte",
];

fn main() -> rudx::error::Result<()> {
    let Some(dir) = std::env::var_os("RUDX_DATA_DIR").map(PathBuf::from) else {
        eprintln!("set RUDX_DATA_DIR to a directory with {}", FILES.join(", "));
        return Ok(());
    };
    if let Some(missing) = FILES.iter().find(|f| !dir.join(f).exists()) {
        eprintln!("{} not found in {}", missing, dir.display());
        return Ok(());
    }
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs/mnist_usps.toml");
    let m = parse_manifest(&config)?;
    let (source, target) = m.load_domains()?;
    let bundle = pretrain_source(m.build_bundle(&source)?, &source, &m.pretrain)?;
    println!("source-only {:.3}", evaluate(&bundle, &target, None)?.overall_acc);
    let out = run_adaptation_with(bundle, &target, &source, &m.adapt, |r| {
        println!("iter {:>5}  accuracy {:.3}", r.iter, r.overall_acc);
    })?;
    out.write_artifacts(&m.output_dir)
}
