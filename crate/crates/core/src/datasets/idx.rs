//! The big-endian IDX container: `0x0000_0803` image files (count, rows,
//! cols, ubyte pixels) and `0x0000_0801` label files (count, ubyte labels).

use std::fs;
use std::path::Path;

use serde_json::json;

use crate::datasets::ImageSet;
use crate::error::{Error, Result};
use crate::polarization::Image;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], pos: usize) -> Result<u32> {
    bytes
        .get(pos..pos + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Idx {
            position: pos,
            message: format!("header truncated ({} bytes)", bytes.len()),
        })
}

fn check_magic(bytes: &[u8], want: u32) -> Result<()> {
    let magic = read_u32(bytes, 0)?;
    if magic != want {
        return Err(Error::Idx {
            position: 0,
            message: format!("bad magic 0x{magic:08x}, expected 0x{want:08x}"),
        });
    }
    Ok(())
}

/// Images with pixels scaled to `[0, 1]`.
pub fn decode_idx_images(bytes: &[u8]) -> Result<Vec<Image>> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let px = rows * cols;
    let need = 16 + count * px;
    if bytes.len() < need {
        return Err(Error::Idx {
            position: bytes.len(),
            message: format!(
                "payload truncated: {count} images of {rows}x{cols} need {need} bytes"
            ),
        });
    }
    if bytes.len() > need {
        return Err(Error::Idx {
            position: need,
            message: format!("{} trailing bytes", bytes.len() - need),
        });
    }
    (0..count)
        .map(|k| {
            let chunk = &bytes[16 + k * px..16 + (k + 1) * px];
            Image::new(
                rows,
                cols,
                chunk.iter().map(|&b| b as f64 / 255.0).collect(),
            )
        })
        .collect()
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let need = 8 + count;
    if bytes.len() != need {
        return Err(Error::Idx {
            position: bytes.len().min(need),
            message: format!(
                "expected {need} bytes for {count} labels, found {}",
                bytes.len()
            ),
        });
    }
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_idx_images(images: &[Image]) -> Result<Vec<u8>> {
    let (rows, cols) = images
        .first()
        .map_or((0, 0), |im| (im.height(), im.width()));
    let mut out = Vec::with_capacity(16 + images.len() * rows * cols);
    out.extend(IDX_IMAGES_MAGIC.to_be_bytes());
    for d in [images.len(), rows, cols] {
        out.extend((d as u32).to_be_bytes());
    }
    for (k, im) in images.iter().enumerate() {
        if (im.height(), im.width()) != (rows, cols) {
            return Err(Error::shape(
                format!("{rows}x{cols} images"),
                format!("image {k}"),
            ));
        }
        out.extend(im.pixels().iter().map(|&v| quantize(v)));
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend(IDX_LABELS_MAGIC.to_be_bytes());
    out.extend((labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l)
            .map_err(|_| Error::InvalidArgument(format!("label {l} does not fit a byte")))?;
        out.push(b);
    }
    Ok(out)
}

/// Reads a paired image/label file set.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<ImageSet> {
    let images = decode_idx_images(&fs::read(images_path)?)?;
    let labels = decode_idx_labels(&fs::read(labels_path)?)?;
    if images.len() != labels.len() {
        return Err(Error::Idx {
            position: 4,
            message: format!("{} images but {} labels", images.len(), labels.len()),
        });
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(ImageSet {
        images,
        labels,
        classes,
        angles: Vec::new(),
        sigma_smooth: 0.0,
        seed: None,
    })
}

/// Writes `<stem>-images.idx`, `<stem>-labels.idx` and `<stem>.json` into `dir`.
pub fn save_image_set(set: &ImageSet, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(format!("{stem}-images.idx")),
        encode_idx_images(&set.images)?,
    )?;
    fs::write(
        dir.join(format!("{stem}-labels.idx")),
        encode_idx_labels(&set.labels)?,
    )?;
    let meta = json!({
        "count": set.len(),
        "height": set.height(),
        "width": set.width(),
        "classes": set.classes,
        "seed": set.seed,
        "sigma_smooth": set.sigma_smooth,
        "angles": set.angles,
    });
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(())
}
