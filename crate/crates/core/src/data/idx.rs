use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::{DataError, DIGIT_SIDE};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major, scaled to `[0, 1]` by `/255`.
    pub pixels: Vec<f64>,
}

fn header(bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, DataError> {
    let need = 4 + 4 * dims;
    if bytes.len() < need {
        return Err(DataError::Truncated { expected: need, found: bytes.len() });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != magic {
        return Err(DataError::BadMagic { expected: magic, found: word(0) });
    }
    Ok((1..=dims).map(|i| word(i) as usize).collect())
}

fn payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], DataError> {
    let found = bytes.len() - offset;
    if found != len {
        return Err(DataError::Truncated { expected: len, found });
    }
    Ok(&bytes[offset..])
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let d = header(bytes, IMAGES_MAGIC, 3)?;
    let (count, rows, cols) = (d[0], d[1], d[2]);
    let raw = payload(bytes, 16, count * rows * cols)?;
    Ok(IdxImages { count, rows, cols, pixels: raw.iter().map(|&b| b as f64 / 255.0).collect() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let d = header(bytes, LABELS_MAGIC, 1)?;
    Ok(payload(bytes, 8, d[0])?.to_vec())
}

/// Reads a file, transparently gunzipping it when it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = std::fs::read(path)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Single 28x28 digits with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceDigits {
    pub pixels: Vec<f64>,
    pub labels: Vec<u8>,
}

impl SourceDigits {
    pub fn new(images: IdxImages, labels: Vec<u8>) -> Result<Self, DataError> {
        if images.rows != DIGIT_SIDE || images.cols != DIGIT_SIDE {
            return Err(DataError::Dimensions { expected: DIGIT_SIDE, rows: images.rows, cols: images.cols });
        }
        if images.count != labels.len() {
            return Err(DataError::CountMismatch { images: images.count, labels: labels.len() });
        }
        Ok(Self { pixels: images.pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = DIGIT_SIDE * DIGIT_SIDE;
        &self.pixels[i * n..(i + 1) * n]
    }
}

pub fn load_source(images: &Path, labels: &Path) -> Result<SourceDigits, DataError> {
    SourceDigits::new(parse_idx_images(&read_maybe_gz(images)?)?, parse_idx_labels(&read_maybe_gz(labels)?)?)
}
