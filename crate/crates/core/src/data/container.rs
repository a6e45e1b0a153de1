//! Binary container for flat real-valued datasets.
//!
//! Layout (little-endian): magic `RUDX1`, then `K`, `N`, `dim` as `u32`,
//! then `N * dim` row-major `f32`, then `N` labels as `u16`. Unlabeled
//! datasets store `u16::MAX` for every label.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::DomainDataset;
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 5] = b"RUDX1";
const UNLABELED: u16 = u16::MAX;

pub fn write_container(ds: &DomainDataset, path: &Path) -> Result<()> {
    if ds.label_domain_size() >= UNLABELED as usize {
        return Err(Error::invalid("label domain too large for 16-bit labels"));
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        w.write_all(CONTAINER_MAGIC)?;
        w.write_u32::<LittleEndian>(ds.label_domain_size() as u32)?;
        w.write_u32::<LittleEndian>(ds.len() as u32)?;
        w.write_u32::<LittleEndian>(ds.dim() as u32)?;
        for &v in ds.instances().iter() {
            w.write_f32::<LittleEndian>(v)?;
        }
        match ds.labels() {
            Some(labels) => {
                for &l in labels {
                    w.write_u16::<LittleEndian>(l as u16)?;
                }
            }
            None => {
                for _ in 0..ds.len() {
                    w.write_u16::<LittleEndian>(UNLABELED)?;
                }
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<DomainDataset> {
    let eof = |e: std::io::Error| {
        if e.kind() == ErrorKind::UnexpectedEof {
            Error::format(path, "truncated file")
        } else {
            e.into()
        }
    };
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != CONTAINER_MAGIC {
        return Err(Error::format(path, "bad magic, expected RUDX1"));
    }
    let k = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let n = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(eof)? as usize;
    let mut values = vec![0f32; n * dim];
    r.read_f32_into::<LittleEndian>(&mut values).map_err(eof)?;
    let mut raw = vec![0u16; n];
    r.read_u16_into::<LittleEndian>(&mut raw).map_err(eof)?;
    let labels = if n > 0 && raw.iter().all(|&l| l == UNLABELED) {
        None
    } else {
        Some(raw.into_iter().map(usize::from).collect())
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let instances = Array2::from_shape_vec((n, dim), values).expect("sized from header");
    DomainDataset::new(name, instances, vec![dim], labels, k)
}
