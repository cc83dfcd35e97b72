//! MNIST digit pairs: IDX parsing, pair datasets and their splits, PGM images
//! and manifests.

mod idx;
mod pairs;
mod pgm;

pub use idx::{load_source, parse_idx_images, parse_idx_labels, read_maybe_gz, IdxImages, SourceDigits};
pub use pairs::{
    build_pairs, concat_pair, data_efficiency_splits, read_manifest, supervision_subset, write_manifest, PairDataset, PairRecord,
    Split, SplitFractions, Task,
};
pub use pgm::{read_pgm, write_pgm, GrayImage};

/// Height and width of one source digit.
pub const DIGIT_SIDE: usize = 28;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("expected {expected}x{expected} images, found {rows}x{cols}")]
    Dimensions { expected: usize, rows: usize, cols: usize },
    #[error("digit {digit} has no source images in the {split} pool")]
    InsufficientImages { digit: u8, split: &'static str },
    #[error("ordered pair ({left},{right}) has {found} training records, {needed} needed")]
    Underrepresented { left: u8, right: u8, needed: usize, found: usize },
    #[error("invalid digit set: {0}")]
    Digits(String),
    #[error("malformed PGM: {0}")]
    Pgm(String),
    #[error("malformed manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
