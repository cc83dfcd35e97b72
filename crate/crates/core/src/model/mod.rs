//! The generative model: encoder posterior, facts network, relaxed world
//! sampling, decoder, objective terms and the downstream applications.

mod apps;
mod net;
pub mod ops;
mod persist;

pub use apps::{gumbel, Generated, Noise};
pub use net::{Batch, Forward, Terms, VaelModel};
pub use ops::{GaussianPosterior, LatentCode};
pub use persist::{escape_meta, program_hash, unescape_meta, LoadedModel};

use crate::autodiff::AutodiffError;
use crate::plp::PlpError;

/// Image height and width of a digit pair.
pub const IMAGE_HEIGHT: usize = 28;
pub const IMAGE_WIDTH: usize = 56;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Strided convolutions in the encoder, transposed convolutions in the decoder.
    Conv,
    /// One hidden fully connected layer on each side.
    Mlp,
}

impl std::str::FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "conv" => Ok(Architecture::Conv),
            "mlp" => Ok(Architecture::Mlp),
            _ => Err(format!("unknown architecture '{s}' (expected conv or mlp)")),
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Conv => "conv",
            Architecture::Mlp => "mlp",
        })
    }
}

/// Weights of the reconstruction, KL and query terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights {
    pub rec: f64,
    pub kl: f64,
    pub q: f64,
}

impl Default for TermWeights {
    fn default() -> Self {
        Self { rec: 0.1, kl: 1e-5, q: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// `M`, subsymbolic latent size.
    pub latent_dim: usize,
    /// `N`, symbolic latent size.
    pub sym_dim: usize,
    pub facts_hidden: usize,
    pub architecture: Architecture,
    /// Encoder conv widths; the decoder mirrors them.
    pub channels: [usize; 3],
    pub mlp_hidden: usize,
    pub weights: TermWeights,
    /// Gumbel-softmax temperature.
    pub temperature: f64,
    /// When false the posterior log-std is fixed at zero.
    pub learn_std: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            sym_dim: 15,
            facts_hidden: 20,
            architecture: Architecture::Conv,
            channels: [16, 32, 64],
            mlp_hidden: 256,
            weights: TermWeights::default(),
            temperature: 1.0,
            learn_std: true,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Plp(#[from] PlpError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("label {0} is not in the program's label domain")]
    UnknownLabel(String),
    #[error("program is incompatible with the trained model: {0}")]
    ProgramMismatch(String),
    #[error("every annotated disjunction must be learned (`nn`); group {0} has literal probabilities")]
    FixedGroup(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
