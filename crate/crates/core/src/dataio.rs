//! MNIST IDX container parsing and input normalization.

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("bad IDX magic 0x{found:08X}, expected 0x{expected:08X}")]
    Magic { expected: u32, found: u32 },
    #[error("IDX data too short: need {needed} bytes, have {actual}")]
    Length { needed: usize, actual: usize },
    #[error("unsupported image dimensions {rows}x{cols}, expected 28x28")]
    Dimension { rows: u32, cols: u32 },
    #[error("label {value} at index {index} is not a digit class")]
    LabelRange { index: usize, value: u8 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("class index {0} out of range 0..10")]
    Class(usize),
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// One 28x28 grayscale image, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct Image(pub [u8; IMAGE_PIXELS]);

impl Image {
    pub fn pixel(&self, row: usize, col: usize) -> u8 {
        self.0[row * IMAGE_SIDE + col]
    }
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let lit = self.0.iter().filter(|&&p| p > 0).count();
        write!(f, "Image(28x28, {lit} nonzero)")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabeledImageSet {
    images: Vec<Image>,
    labels: Vec<u8>,
}

impl LabeledImageSet {
    pub fn new(images: Vec<Image>, labels: Vec<u8>) -> Result<Self, IdxError> {
        if images.len() != labels.len() {
            return Err(IdxError::CountMismatch { images: images.len(), labels: labels.len() });
        }
        if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
            return Err(IdxError::LabelRange { index, value });
        }
        Ok(LabeledImageSet { images, labels })
    }

    /// Reads an image/label file pair from disk.
    pub fn load(images: &Path, labels: &Path) -> Result<Self, IdxError> {
        let read = |p: &Path| {
            fs::read(p).map_err(|source| IdxError::Io { path: p.display().to_string(), source })
        };
        let imgs = parse_idx_images(&read(images)?)?;
        let lbls = parse_idx_labels(&read(labels)?)?;
        LabeledImageSet::new(imgs, lbls)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> (&Image, u8) {
        (&self.images[i], self.labels[i])
    }

    /// The first `n` items (or all of them when `n` exceeds the count).
    pub fn take(&self, n: usize) -> LabeledImageSet {
        let n = n.min(self.len());
        LabeledImageSet { images: self.images[..n].to_vec(), labels: self.labels[..n].to_vec() }
    }

    /// Splits off the last `n` items: returns (head, tail).
    pub fn split_tail(&self, n: usize) -> (LabeledImageSet, LabeledImageSet) {
        let cut = self.len().saturating_sub(n);
        (
            LabeledImageSet { images: self.images[..cut].to_vec(), labels: self.labels[..cut].to_vec() },
            LabeledImageSet { images: self.images[cut..].to_vec(), labels: self.labels[cut..].to_vec() },
        )
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn need(bytes: &[u8], needed: usize) -> Result<(), IdxError> {
    if bytes.len() < needed {
        Err(IdxError::Length { needed, actual: bytes.len() })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageHeader {
    pub count: u32,
    pub rows: u32,
    pub cols: u32,
}

pub fn parse_image_header(bytes: &[u8]) -> Result<ImageHeader, IdxError> {
    need(bytes, 16)?;
    let magic = be_u32(bytes, 0);
    if magic != IMAGE_MAGIC {
        return Err(IdxError::Magic { expected: IMAGE_MAGIC, found: magic });
    }
    let header = ImageHeader { count: be_u32(bytes, 4), rows: be_u32(bytes, 8), cols: be_u32(bytes, 12) };
    if header.rows as usize != IMAGE_SIDE || header.cols as usize != IMAGE_SIDE {
        return Err(IdxError::Dimension { rows: header.rows, cols: header.cols });
    }
    Ok(header)
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<Vec<Image>, IdxError> {
    let header = parse_image_header(bytes)?;
    let count = header.count as usize;
    need(bytes, 16 + count * IMAGE_PIXELS)?;
    Ok(bytes[16..16 + count * IMAGE_PIXELS]
        .chunks_exact(IMAGE_PIXELS)
        .map(|c| Image(c.try_into().expect("chunk is one image")))
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    need(bytes, 8)?;
    let magic = be_u32(bytes, 0);
    if magic != LABEL_MAGIC {
        return Err(IdxError::Magic { expected: LABEL_MAGIC, found: magic });
    }
    let count = be_u32(bytes, 4) as usize;
    need(bytes, 8 + count)?;
    let labels = bytes[8..8 + count].to_vec();
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= NUM_CLASSES) {
        return Err(IdxError::LabelRange { index, value });
    }
    Ok(labels)
}

pub fn serialize_idx_images(images: &[Image]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.len() * IMAGE_PIXELS);
    for word in [IMAGE_MAGIC, images.len() as u32, IMAGE_SIDE as u32, IMAGE_SIDE as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    for img in images {
        out.extend_from_slice(&img.0);
    }
    out
}

pub fn serialize_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn normalize(pixel: u8) -> f64 {
    pixel as f64 / 255.0
}

pub fn one_hot(label: usize) -> Result<[f64; NUM_CLASSES], IdxError> {
    if label >= NUM_CLASSES {
        return Err(IdxError::Class(label));
    }
    let mut v = [0.0; NUM_CLASSES];
    v[label] = 1.0;
    Ok(v)
}
