//! The optimisation loop: shuffled mini-batches, one reparameterised sample
//! per example, Adam updates, per-epoch history and resumable checkpoints.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, AutodiffError, Container, Tape};
use crate::data::{PairDataset, SourceDigits, Task};
use crate::eval::{class_accuracy, EvalError};
use crate::model::{escape_meta, unescape_meta, Architecture, Batch, ModelConfig, ModelError, Noise, Terms, VaelModel};
use crate::plp::{choice_for_value, Constant};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite loss at step {step}: {terms:?}")]
    NonFinite { step: u64, terms: Terms },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Adds the digit term for examples that carry digit labels.
    pub supervision: bool,
    /// Validate every this many epochs; 0 disables validation.
    pub eval_every: usize,
    /// Stop after this many validations without improvement.
    pub patience: usize,
    pub checkpoint: Option<PathBuf>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 32,
            epochs: 50,
            seed: 0,
            supervision: true,
            eval_every: 1,
            patience: 10,
            checkpoint: None,
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    lr: Option<f64>,
    batch_size: Option<usize>,
    epochs: Option<usize>,
    seed: Option<u64>,
    supervision: Option<bool>,
    eval_every: Option<usize>,
    patience: Option<usize>,
    checkpoint: Option<PathBuf>,
    latent_dim: Option<usize>,
    sym_dim: Option<usize>,
    facts_hidden: Option<usize>,
    architecture: Option<String>,
    channels: Option<[usize; 3]>,
    mlp_hidden: Option<usize>,
    w_rec: Option<f64>,
    w_kl: Option<f64>,
    w_q: Option<f64>,
    lambda: Option<f64>,
    learn_std: Option<bool>,
}

impl TrainConfig {
    /// Parses flat `key = value` lines; missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        let mut c = Self::default();
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = raw.$field { $target = v; })*
            };
        }
        set!(
            lr => c.lr,
            batch_size => c.batch_size,
            epochs => c.epochs,
            seed => c.seed,
            supervision => c.supervision,
            eval_every => c.eval_every,
            patience => c.patience,
            latent_dim => c.model.latent_dim,
            sym_dim => c.model.sym_dim,
            facts_hidden => c.model.facts_hidden,
            channels => c.model.channels,
            mlp_hidden => c.model.mlp_hidden,
            w_rec => c.model.weights.rec,
            w_kl => c.model.weights.kl,
            w_q => c.model.weights.q,
            lambda => c.model.temperature,
            learn_std => c.model.learn_std,
        );
        if let Some(a) = raw.architecture {
            c.model.architecture = a.parse::<Architecture>().map_err(TrainError::Config)?;
        }
        c.checkpoint = raw.checkpoint;
        c.validate()?;
        Ok(c)
    }

    /// Inverse of [`TrainConfig::from_text`].
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut s = format!(
            "lr = {:?}\nbatch_size = {}\nepochs = {}\nseed = {}\nsupervision = {}\neval_every = {}\npatience = {}\n",
            self.lr, self.batch_size, self.epochs, self.seed, self.supervision, self.eval_every, self.patience
        );
        if let Some(c) = &self.checkpoint {
            s.push_str(&format!("checkpoint = {:?}\n", c.display().to_string()));
        }
        s.push_str(&format!(
            "latent_dim = {}\nsym_dim = {}\nfacts_hidden = {}\narchitecture = \"{}\"\nchannels = [{}, {}, {}]\nmlp_hidden = {}\n",
            m.latent_dim, m.sym_dim, m.facts_hidden, m.architecture, m.channels[0], m.channels[1], m.channels[2], m.mlp_hidden
        ));
        s.push_str(&format!(
            "w_rec = {:?}\nw_kl = {:?}\nw_q = {:?}\nlambda = {:?}\nlearn_std = {}\n",
            m.weights.rec, m.weights.kl, m.weights.q, m.temperature, m.learn_std
        ));
        s
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {}", self.lr)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config("batch size and epochs must be positive".into()));
        }
        let w = self.model.weights;
        if !(w.rec >= 0.0 && w.kl >= 0.0 && w.q >= 0.0) {
            return Err(TrainError::Config("term weights must be nonnegative".into()));
        }
        if !(self.model.temperature > 0.0) {
            return Err(TrainError::Config(format!("temperature {}", self.model.temperature)));
        }
        Ok(())
    }
}

/// Per-epoch means of the unweighted terms and the validation accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub step: u64,
    pub l_rec: f64,
    pub l_q: f64,
    pub kl: f64,
    pub l_digits: f64,
    pub val_class_acc: Option<f64>,
}

pub fn write_history(rows: &[HistoryRow], w: impl Write) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_history(r: impl Read) -> Result<Vec<HistoryRow>, TrainError> {
    Ok(csv::Reader::from_reader(r).deserialize().collect::<Result<_, _>>()?)
}

/// Images, label indices and (for `supervised` records) digit choices of the
/// records `indices`, in that order.
pub fn examples(
    model: &VaelModel,
    source: &SourceDigits,
    dataset: &PairDataset,
    indices: &[usize],
    task: Task,
    supervised: &[usize],
) -> Result<Batch, TrainError> {
    let gp = model.program();
    let mut batch = Batch::default();
    for &i in indices {
        let r = dataset
            .records
            .get(i)
            .ok_or_else(|| TrainError::Config(format!("record {i} out of range")))?;
        batch.images.extend(dataset.image(source, i));
        let value = Constant::Int(r.label(task));
        let label = model.labels().position(&value).ok_or_else(|| ModelError::UnknownLabel(value.to_string()))?;
        batch.labels.push(label);
        let digits = if supervised.contains(&i) {
            let l = choice_for_value(gp, 0, &Constant::Int(r.left_digit as i64)).map_err(ModelError::from)?;
            let rr = choice_for_value(gp, 1, &Constant::Int(r.right_digit as i64)).map_err(ModelError::from)?;
            Some(vec![l, rr])
        } else {
            None
        };
        batch.digits.push(digits);
    }
    Ok(batch)
}

/// Rows `rows` of `b`, in that order.
pub fn select(b: &Batch, rows: &[usize]) -> Batch {
    let px = b.images.len() / b.len().max(1);
    Batch {
        images: rows.iter().flat_map(|&i| b.images[i * px..(i + 1) * px].iter().copied()).collect(),
        labels: rows.iter().map(|&i| b.labels[i]).collect(),
        digits: rows.iter().map(|&i| b.digits[i].clone()).collect(),
    }
}

/// Step counter, early-stopping bookkeeping and history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    pub best_val: Option<f64>,
    pub since_best: usize,
    pub history: Vec<HistoryRow>,
}

pub struct EpochReport {
    pub step_losses: Vec<f64>,
    pub row: HistoryRow,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub struct Trainer {
    model: VaelModel,
    config: TrainConfig,
    train: Batch,
    val: Batch,
    state: TrainState,
}

impl Trainer {
    pub fn new(model: VaelModel, config: TrainConfig, mut train: Batch, val: Batch) -> Result<Self, TrainError> {
        config.validate()?;
        if train.is_empty() {
            return Err(TrainError::Config("empty training set".into()));
        }
        if !config.supervision {
            train.digits.iter_mut().for_each(|d| *d = None);
        }
        Ok(Self { model, config, train, val, state: TrainState::default() })
    }

    /// Continues from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(path: &Path, config: TrainConfig, train: Batch, val: Batch) -> Result<Self, TrainError> {
        let file = std::fs::File::open(path)?;
        let container = Container::read_from(std::io::BufReader::new(file))?;
        let meta = |k: &str| {
            container.meta(k).ok_or_else(|| TrainError::Checkpoint(format!("missing '{k}'; not a training checkpoint")))
        };
        let bad = |k: &str| TrainError::Checkpoint(format!("bad value for '{k}'"));
        for (k, want) in [
            ("train.seed", config.seed.to_string()),
            ("train.batch_size", config.batch_size.to_string()),
            ("train.lr", config.lr.to_string()),
        ] {
            if meta(k)? != want {
                return Err(TrainError::Checkpoint(format!("{k} is {} in the checkpoint, {want} in the config", meta(k)?)));
            }
        }
        let state = TrainState {
            step: meta("train.step")?.parse().map_err(|_| bad("train.step"))?,
            epoch: meta("train.epoch")?.parse().map_err(|_| bad("train.epoch"))?,
            best_val: match meta("train.best_val")? {
                "none" => None,
                v => Some(v.parse().map_err(|_| bad("train.best_val"))?),
            },
            since_best: meta("train.since_best")?.parse().map_err(|_| bad("train.since_best"))?,
            history: read_history(unescape_meta(meta("train.history")?).as_bytes())?,
        };
        let model = VaelModel::from_container(container, None)?.model;
        let mut t = Self::new(model, config, train, val)?;
        t.state = state;
        Ok(t)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), TrainError> {
        let mut c = self.model.to_container(true);
        let mut history = Vec::new();
        write_history(&self.state.history, &mut history)?;
        let s = &self.state;
        for (k, v) in [
            ("train.seed", self.config.seed.to_string()),
            ("train.batch_size", self.config.batch_size.to_string()),
            ("train.lr", self.config.lr.to_string()),
            ("train.step", s.step.to_string()),
            ("train.epoch", s.epoch.to_string()),
            ("train.best_val", s.best_val.map_or("none".to_string(), |v| v.to_string())),
            ("train.since_best", s.since_best.to_string()),
            ("train.history", escape_meta(&String::from_utf8_lossy(&history))),
        ] {
            c.metadata.push((k.to_string(), v));
        }
        let tmp = path.with_extension("tmp");
        c.write_to(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn model(&self) -> &VaelModel {
        &self.model
    }

    pub fn into_model(self) -> VaelModel {
        self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.config.epochs || self.state.since_best >= self.config.patience
    }

    /// One optimiser step on `batch` with noise derived from the step counter.
    pub fn step(&mut self, batch: &Batch) -> Result<(f64, Terms), TrainError> {
        self.state.step += 1;
        let t = self.state.step;
        let mut rng = stream_rng(self.config.seed, 2 * t + 1);
        let noise = Noise::sample(&mut rng, batch.len(), self.model.code_dim(), self.model.num_worlds());
        let mut tape = Tape::new();
        let fwd = self.model.elbo(&mut tape, batch, &noise)?;
        let loss = tape.value(fwd.loss).item();
        if !loss.is_finite() || !fwd.terms.is_finite() {
            return Err(TrainError::NonFinite { step: t, terms: fwd.terms });
        }
        let grads = tape.backward(fwd.loss)?;
        let store = self.model.params_mut();
        store.zero_grad();
        store.accumulate(&grads)?;
        Adam::with_lr(self.config.lr).step(store, t);
        Ok((loss, fwd.terms))
    }

    pub fn run_epoch(&mut self) -> Result<EpochReport, TrainError> {
        let epoch = self.state.epoch;
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut stream_rng(self.config.seed, 2 * epoch as u64));
        let mut totals = Terms::default();
        let mut step_losses = Vec::new();
        for rows in order.chunks(self.config.batch_size) {
            let batch = select(&self.train, rows);
            let (loss, terms) = self.step(&batch)?;
            step_losses.push(loss);
            totals.add(&terms);
        }
        let mut val_class_acc = None;
        if self.config.eval_every > 0 && (epoch + 1) % self.config.eval_every == 0 && !self.val.is_empty() {
            let acc = class_accuracy(&self.model, &self.val)?.value;
            val_class_acc = Some(acc);
            if self.state.best_val.is_none_or(|b| acc > b) {
                self.state.best_val = Some(acc);
                self.state.since_best = 0;
            } else {
                self.state.since_best += 1;
            }
        }
        let n = totals.examples.max(1) as f64;
        let row = HistoryRow {
            epoch: epoch + 1,
            step: self.state.step,
            l_rec: totals.l_rec / n,
            l_q: totals.l_q / n,
            kl: totals.kl / n,
            l_digits: if totals.supervised > 0 { totals.l_digits / totals.supervised as f64 } else { 0.0 },
            val_class_acc,
        };
        log::info!(
            "epoch {} step {} l_rec {:.3} l_q {:.4} kl {:.3} l_digits {:.4} val {:?}",
            row.epoch,
            row.step,
            row.l_rec,
            row.l_q,
            row.kl,
            row.l_digits,
            row.val_class_acc
        );
        self.state.history.push(row.clone());
        self.state.epoch += 1;
        if let Some(path) = &self.config.checkpoint {
            self.save_checkpoint(path)?;
        }
        Ok(EpochReport { step_losses, row })
    }

    /// Runs epochs until the budget is spent or validation stops improving.
    pub fn run(&mut self) -> Result<&[HistoryRow], TrainError> {
        while !self.finished() {
            self.run_epoch()?;
        }
        Ok(&self.state.history)
    }
}
