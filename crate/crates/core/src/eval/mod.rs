//! Held-out metrics: reconstruction, label accuracy and generative accuracy
//! judged by an independently trained digit classifier.

mod classifier;

pub use classifier::{ClassifierConfig, EvalClassifier};

use rand::Rng;

use crate::autodiff::{AutodiffError, Tape};
use crate::data::{Task, DIGIT_SIDE};
use crate::model::{Batch, ModelError, Noise, VaelModel};
use crate::plp::{Constant, Evidence};

const CHUNK: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("evaluation classifier holdout accuracy {accuracy:.4} is below the required {required:.2}")]
    ClassifierGate { accuracy: f64, required: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid evaluation setup: {0}")]
    Config(String),
}

/// An accuracy with its normal-approximation 95% half-width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub value: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl Accuracy {
    pub fn from_counts(correct: usize, samples: usize) -> Self {
        if samples == 0 {
            return Self { value: 0.0, half_width: 0.0, samples };
        }
        let p = correct as f64 / samples as f64;
        Self { value: p, half_width: 1.96 * (p * (1.0 - p) / samples as f64).sqrt(), samples }
    }
}

impl std::fmt::Display for Accuracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4} ± {:.4} (n = {})", self.value, self.half_width, self.samples)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Mean per-image `sum |x - mu|`; lower is better.
    pub m_rec: f64,
    pub m_class: Accuracy,
    pub m_gen: Option<Accuracy>,
}

fn chunks(examples: &Batch) -> impl Iterator<Item = Batch> + '_ {
    let pixels = examples.images.len() / examples.len().max(1);
    (0..examples.len()).step_by(CHUNK).map(move |s| {
        let e = (s + CHUNK).min(examples.len());
        Batch {
            images: examples.images[s * pixels..e * pixels].to_vec(),
            labels: examples.labels[s..e].to_vec(),
            digits: examples.digits[s..e].to_vec(),
        }
    })
}

/// Fraction of examples whose most probable label is the observed one.
pub fn class_accuracy(model: &VaelModel, examples: &Batch) -> Result<Accuracy, EvalError> {
    let mut correct = 0;
    for b in chunks(examples) {
        for (d, &y) in model.classify(&b.images)?.iter().zip(&b.labels) {
            let best = (0..d.len()).max_by(|&a, &c| d[a].total_cmp(&d[c]));
            correct += usize::from(best == Some(y));
        }
    }
    Ok(Accuracy::from_counts(correct, examples.len()))
}

/// Mean `sum |x - mu|` per image, decoding the posterior mean with the
/// noise-free relaxed world.
pub fn reconstruction_metric(model: &VaelModel, examples: &Batch) -> Result<f64, EvalError> {
    if examples.is_empty() {
        return Err(EvalError::Config("no examples".into()));
    }
    let (l, j) = (model.code_dim(), model.num_worlds());
    let mut total = 0.0;
    for b in chunks(examples) {
        let mut tape = Tape::new();
        let f = model.elbo(&mut tape, &b, &Noise::zeros(b.len(), l, j))?;
        total -= f.terms.l_rec;
    }
    Ok(total / examples.len() as f64)
}

/// Accuracy of always predicting the most frequent label.
pub fn majority_baseline(labels: &[usize]) -> f64 {
    let mut counts = std::collections::HashMap::new();
    for &y in labels {
        *counts.entry(y).or_insert(0usize) += 1;
    }
    counts.values().max().map_or(0.0, |&m| m as f64 / labels.len() as f64)
}

/// Produces a 28x56 image meant to show label index `label`.
pub trait ConditionalGenerator {
    fn num_labels(&self) -> usize;
    fn label_value(&self, label: usize) -> Constant;
    fn generate_label(&mut self, label: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>, EvalError>;
}

/// Conditions a trained model on its query atom for each label.
pub struct ModelGenerator<'a> {
    pub model: &'a VaelModel,
}

impl ConditionalGenerator for ModelGenerator<'_> {
    fn num_labels(&self) -> usize {
        self.model.labels().len()
    }

    fn label_value(&self, label: usize) -> Constant {
        self.model.labels().values[label].clone()
    }

    fn generate_label(&mut self, label: usize, rng: &mut dyn rand::RngCore) -> Result<Vec<f64>, EvalError> {
        let gp = self.model.program();
        let atom = gp.atom(self.model.labels().atoms[label]).clone();
        let evidence = Evidence { literals: vec![(atom, true)] };
        Ok(self.model.conditional_generate(&evidence, rng)?.image)
    }
}

/// Splits a 28x56 image into its left and right digits.
pub fn split_pair(image: &[f64]) -> Result<(Vec<f64>, Vec<f64>), EvalError> {
    let w = 2 * DIGIT_SIDE;
    if image.len() != DIGIT_SIDE * w {
        return Err(EvalError::Shape(format!("expected {} pixels, got {}", DIGIT_SIDE * w, image.len())));
    }
    let (mut l, mut r) = (Vec::with_capacity(DIGIT_SIDE * DIGIT_SIDE), Vec::with_capacity(DIGIT_SIDE * DIGIT_SIDE));
    for row in image.chunks(w) {
        l.extend_from_slice(&row[..DIGIT_SIDE]);
        r.extend_from_slice(&row[DIGIT_SIDE..]);
    }
    Ok((l, r))
}

/// Fraction of conditionally generated images whose classified digits,
/// combined by `task`, give back the conditioning label.
pub fn generative_accuracy<G: ConditionalGenerator, R: Rng>(
    generator: &mut G,
    classifier: &EvalClassifier,
    task: Task,
    per_label: usize,
    rng: &mut R,
) -> Result<Accuracy, EvalError> {
    if !classifier.is_gated() {
        return Err(EvalError::ClassifierGate {
            accuracy: classifier.holdout_accuracy(),
            required: classifier.required_accuracy(),
        });
    }
    let mut correct = 0;
    let mut total = 0;
    for k in 0..generator.num_labels() {
        let want = generator.label_value(k);
        let mut lefts = Vec::new();
        let mut rights = Vec::new();
        for _ in 0..per_label {
            let (l, r) = split_pair(&generator.generate_label(k, rng)?)?;
            lefts.extend(l);
            rights.extend(r);
        }
        let (a, b) = (classifier.predict(&lefts)?, classifier.predict(&rights)?);
        for (&x, &y) in a.iter().zip(&b) {
            correct += usize::from(Constant::Int(task.apply(x, y)) == want);
            total += 1;
        }
    }
    Ok(Accuracy::from_counts(correct, total))
}
