use std::io::Write;

use serde::Serialize;

use super::{run_adaptation, AdaptationConfig};
use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::nets::ModelBundle;

/// One cell of a clustering-rate sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub gamma_dec: f64,
    pub gamma_dis: f64,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

/// One full run per `gamma_dec` value with `gamma_dis = 2 * gamma_dec`
/// and the base seed. A failing cell is recorded, not propagated.
pub fn lr_sweep(
    bundle: &ModelBundle,
    target: &DomainDataset,
    source: &DomainDataset,
    base: &AdaptationConfig,
    grid: &[f64],
    parallel: bool,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::config("gamma_dec", "sweep grid is empty"));
    }
    if let Some(bad) = grid.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(Error::config("gamma_dec", format!("grid value {bad} is not positive")));
    }
    let cell = |g: f64| {
        let cfg = base.clone().with_gamma_dec(g);
        let result = run_adaptation(bundle.clone(), target, source, &cfg);
        match result {
            Ok(out) => SweepRow {
                gamma_dec: g,
                gamma_dis: cfg.gamma_dis,
                accuracy: out.report.map(|r| r.overall_acc),
                error: None,
            },
            Err(e) => {
                log::warn!("sweep cell gamma_dec={g} failed: {e}");
                SweepRow {
                    gamma_dec: g,
                    gamma_dis: cfg.gamma_dis,
                    accuracy: None,
                    error: Some(e.to_string()),
                }
            }
        }
    };
    if parallel {
        Ok(std::thread::scope(|s| {
            let handles: Vec<_> = grid.iter().map(|&g| s.spawn(move || cell(g))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep cell panicked")).collect()
        }))
    } else {
        Ok(grid.iter().map(|&g| cell(g)).collect())
    }
}

/// `gamma_dec,gamma_dis,accuracy,error` with empty fields for absent values.
pub fn write_sweep_csv(rows: &[SweepRow], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma_dec", "gamma_dis", "accuracy", "error"])?;
    for r in rows {
        w.write_record([
            r.gamma_dec.to_string(),
            r.gamma_dis.to_string(),
            r.accuracy.map(|a| a.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
