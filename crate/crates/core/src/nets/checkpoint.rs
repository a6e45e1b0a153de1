use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ModelBundle;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// All parameter sets, their specs, centroids and the iteration counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub iter: usize,
    pub bundle: ModelBundle,
    pub centroids: Option<Array2<f64>>,
}

impl Checkpoint {
    pub fn new(bundle: ModelBundle, centroids: Option<Array2<f64>>, iter: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            iter,
            bundle,
            centroids,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    /// Writes to a sibling temp file, then renames over `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            serde_json::to_writer(&mut w, self)?;
            w.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::format(
                path,
                format!("checkpoint version {} unsupported", ck.version),
            ));
        }
        Ok(ck)
    }
}
