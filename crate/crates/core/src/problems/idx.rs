//! IDX image/label files (big-endian, as distributed for MNIST).

use std::path::Path;

use super::{LocalDataset, ProblemError};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, k: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[k * size..(k + 1) * size]
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32, ProblemError> {
    let chunk =
        bytes.get(offset..offset + 4).ok_or(ProblemError::Truncated { needed: offset + 4, available: bytes.len() })?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("four bytes")))
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), ProblemError> {
    let found = be_u32(bytes, 0)?;
    if found != expected {
        return Err(ProblemError::BadMagic { expected, found });
    }
    Ok(())
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages, ProblemError> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let needed = 16 + count * rows * cols;
    if bytes.len() < needed {
        return Err(ProblemError::Truncated { needed, available: bytes.len() });
    }
    Ok(IdxImages { count, rows, cols, pixels: bytes[16..needed].to_vec() })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>, ProblemError> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = be_u32(bytes, 4)? as usize;
    let needed = 8 + count;
    if bytes.len() < needed {
        return Err(ProblemError::Truncated { needed, available: bytes.len() });
    }
    Ok(bytes[8..needed].to_vec())
}

pub fn read_images(path: &Path) -> Result<IdxImages, ProblemError> {
    parse_images(&std::fs::read(path)?)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>, ProblemError> {
    parse_labels(&std::fs::read(path)?)
}

/// Two-class subset in file order: `class_a` maps to `+1`, `class_b` to `-1`.
/// Pixels are scaled by 1/255 and each image normalized to unit norm. The
/// first `train_count` matches form the training set, the next `test_count`
/// the test set.
pub fn binary_pair(
    images: &IdxImages,
    labels: &[u8],
    class_a: u8,
    class_b: u8,
    train_count: usize,
    test_count: usize,
) -> Result<(LocalDataset, LocalDataset), ProblemError> {
    if images.count != labels.len() {
        return Err(ProblemError::CountMismatch { images: images.count, labels: labels.len() });
    }
    if class_a == class_b {
        return Err(ProblemError::InvalidInput("the two classes must differ".into()));
    }
    let wanted = train_count + test_count;
    let picked: Vec<usize> =
        labels.iter().enumerate().filter(|(_, &l)| l == class_a || l == class_b).map(|(k, _)| k).take(wanted).collect();
    if picked.len() < wanted {
        return Err(ProblemError::InsufficientSamples { needed: wanted, available: picked.len() });
    }
    let dim = images.rows * images.cols;
    let build = |ids: &[usize]| {
        let features = ids.iter().flat_map(|&k| images.image(k).iter().map(|&p| f64::from(p) / 255.0)).collect();
        let labels = ids.iter().map(|&k| if labels[k] == class_a { 1.0 } else { -1.0 }).collect();
        LocalDataset::normalized(dim, features, labels)
    };
    Ok((build(&picked[..train_count])?, build(&picked[train_count..])?))
}

pub fn load_idx_binary_pair(
    images_path: &Path,
    labels_path: &Path,
    class_a: u8,
    class_b: u8,
    train_count: usize,
    test_count: usize,
) -> Result<(LocalDataset, LocalDataset), ProblemError> {
    let images = read_images(images_path)?;
    let labels = read_labels(labels_path)?;
    binary_pair(&images, &labels, class_a, class_b, train_count, test_count)
}

/// Serializes images in IDX layout.
pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGE_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
