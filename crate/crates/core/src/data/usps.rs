//! One-time USPS conversion into the 28x28 IDX layout used for MNIST.
//!
//! Input is the LIBSVM text distribution of USPS (decompressed): one
//! instance per line, `label idx:value ...`, labels 1..=10 for digits
//! 0..=9, 256 features in [-1, 1] laid out row-major on a 16x16 grid.

use std::fs;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::GrayImage;

use super::idx::{write_idx_images, write_idx_labels};
use crate::error::{Error, Result};

const USPS_SIDE: u32 = 16;
const OUT_SIDE: u32 = 28;

/// Parses LIBSVM-format USPS text into `(pixels per instance, labels)`.
/// Missing features are zero in LIBSVM's sparse encoding, i.e. mid-gray.
pub fn parse_usps_libsvm(text: &str, origin: &Path) -> Result<(Vec<Vec<u8>>, Vec<u8>)> {
    let n_feat = (USPS_SIDE * USPS_SIDE) as usize;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: &str| Error::format(origin, format!("line {}: {msg}", lineno + 1));
        let mut fields = line.split_whitespace();
        let label: f64 = fields
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("missing label"))?;
        let label = label.round() as i64;
        if !(1..=10).contains(&label) {
            return Err(bad("label outside 1..=10"));
        }
        let mut dense = vec![0.0f64; n_feat];
        for f in fields {
            let (idx, val) = f.split_once(':').ok_or_else(|| bad("feature without ':'"))?;
            let idx: usize = idx.parse().map_err(|_| bad("bad feature index"))?;
            let val: f64 = val.parse().map_err(|_| bad("bad feature value"))?;
            if idx == 0 || idx > n_feat {
                return Err(bad("feature index outside 1..=256"));
            }
            dense[idx - 1] = val;
        }
        images.push(
            dense
                .iter()
                .map(|v| (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8)
                .collect(),
        );
        labels.push((label - 1) as u8);
    }
    Ok((images, labels))
}

/// Bilinear resize of a row-major grayscale image.
pub fn resize_bilinear(pixels: &[u8], width: u32, height: u32, new_w: u32, new_h: u32) -> Vec<u8> {
    let img = GrayImage::from_raw(width, height, pixels.to_vec()).expect("buffer matches size");
    imageops::resize(&img, new_w, new_h, FilterType::Triangle).into_raw()
}

/// Converts a USPS LIBSVM text file into an IDX image/label pair of 28x28
/// images. Returns the number of instances written.
pub fn convert_usps(input: &Path, image_out: &Path, label_out: &Path) -> Result<usize> {
    let text = fs::read_to_string(input)?;
    let (images, labels) = parse_usps_libsvm(&text, input)?;
    let mut pixels = Vec::with_capacity(images.len() * (OUT_SIDE * OUT_SIDE) as usize);
    for img in &images {
        pixels.extend(resize_bilinear(img, USPS_SIDE, USPS_SIDE, OUT_SIDE, OUT_SIDE));
    }
    write_idx_images(image_out, OUT_SIDE as usize, OUT_SIDE as usize, &pixels)?;
    write_idx_labels(label_out, &labels)?;
    Ok(labels.len())
}
