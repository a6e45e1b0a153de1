//! IDX containers as used by MNIST (and USPS after conversion).

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use byteorder::{BigEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::DomainDataset;
use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;
const SIDE: usize = 28;

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn truncated(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == ErrorKind::UnexpectedEof {
        Error::format(path, "truncated file")
    } else {
        e.into()
    }
}

/// Reads an image file, returning `(count, rows, cols, pixels)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut r = open(path)?;
    let magic = r.read_u32::<BigEndian>().map_err(|e| truncated(path, e))?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic number {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        ));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = r.read_u32::<BigEndian>().map_err(|e| truncated(path, e))? as usize;
    }
    let [count, rows, cols] = dims;
    let mut pixels = vec![0u8; count * rows * cols];
    r.read_exact(&mut pixels).map_err(|e| truncated(path, e))?;
    Ok((count, rows, cols, pixels))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut r = open(path)?;
    let magic = r.read_u32::<BigEndian>().map_err(|e| truncated(path, e))?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic number {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        ));
    }
    let count = r.read_u32::<BigEndian>().map_err(|e| truncated(path, e))? as usize;
    let mut labels = vec![0u8; count];
    r.read_exact(&mut labels).map_err(|e| truncated(path, e))?;
    Ok(labels)
}

/// Loads a 28x28 grayscale image/label pair with pixels scaled to [0, 1].
/// The label domain is fixed at 10 digit classes.
pub fn load_idx(image_path: &Path, label_path: &Path) -> Result<DomainDataset> {
    let (count, rows, cols, pixels) = read_idx_images(image_path)?;
    if rows != SIDE || cols != SIDE {
        return Err(Error::format(
            image_path,
            format!("dimension mismatch: images are {rows}x{cols}, expected {SIDE}x{SIDE}"),
        ));
    }
    let labels = read_idx_labels(label_path)?;
    if labels.len() != count {
        return Err(Error::format(
            label_path,
            format!("count mismatch: {} labels for {count} images", labels.len()),
        ));
    }
    let instances = Array2::from_shape_vec(
        (count, SIDE * SIDE),
        pixels.into_iter().map(|p| p as f32 / 255.0).collect(),
    )
    .expect("pixel buffer sized from header");
    let name = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let labels = labels.into_iter().map(usize::from).collect();
    DomainDataset::new(name, instances, vec![1, SIDE, SIDE], Some(labels), 10)
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let per = rows * cols;
    if per == 0 || !pixels.len().is_multiple_of(per) {
        return Err(Error::invalid("pixel buffer is not a whole number of images"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(IMAGE_MAGIC)?;
    w.write_u32::<BigEndian>((pixels.len() / per) as u32)?;
    w.write_u32::<BigEndian>(rows as u32)?;
    w.write_u32::<BigEndian>(cols as u32)?;
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<BigEndian>(LABEL_MAGIC)?;
    w.write_u32::<BigEndian>(labels.len() as u32)?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_scales_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        let mut pixels = vec![0u8; 2 * 784];
        pixels[0] = 255;
        pixels[784 + 5] = 51;
        write_idx_images(&ip, 28, 28, &pixels).unwrap();
        write_idx_labels(&lp, &[3, 9]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), &[1, 28, 28]);
        assert_eq!(ds.label_domain_size(), 10);
        assert_eq!(ds.labels().unwrap(), &[3, 9]);
        assert_eq!(ds.instance(0)[0], 1.0);
        assert!((ds.instance(1)[5] - 0.2).abs() < 1e-7);
    }

    #[test]
    fn empty_image_file_is_an_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&ip, 28, 28, &[]).unwrap();
        write_idx_labels(&lp, &[]).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn count_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&ip, 28, 28, &vec![0u8; 3 * 784]).unwrap();
        write_idx_labels(&lp, &[1, 2]).unwrap();
        let err = load_idx(&ip, &lp).unwrap_err();
        assert!(err.to_string().contains("count mismatch"), "{err}");
    }

    #[test]
    fn bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_labels(&ip, &[1]).unwrap();
        write_idx_labels(&lp, &[1]).unwrap();
        assert!(load_idx(&ip, &lp).unwrap_err().to_string().contains("magic"));

        write_idx_images(&ip, 28, 28, &vec![0u8; 784]).unwrap();
        let full = std::fs::read(&ip).unwrap();
        std::fs::write(&ip, &full[..full.len() - 10]).unwrap();
        assert!(load_idx(&ip, &lp).unwrap_err().to_string().contains("truncated"));
    }

    #[test]
    fn wrong_image_side_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lbl"));
        write_idx_images(&ip, 16, 16, &vec![0u8; 256]).unwrap();
        write_idx_labels(&lp, &[0]).unwrap();
        assert!(load_idx(&ip, &lp)
            .unwrap_err()
            .to_string()
            .contains("dimension mismatch"));
    }
}
