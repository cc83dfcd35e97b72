use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Sgd, Tape, Tensor, Var};
use crate::data::{SourceDigits, DIGIT_SIDE};

use super::EvalError;

const INPUT: usize = DIGIT_SIDE * DIGIT_SIDE;
const REQUIRED_ACCURACY: f64 = 0.95;

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierConfig {
    pub hidden: [usize; 2],
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of source images held out to measure accuracy.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { hidden: [128, 64], lr: 1e-2, momentum: 0.5, epochs: 15, batch_size: 64, holdout: 0.15, seed: 0 }
    }
}

/// Single-digit MLP used to judge generated images.
#[derive(Clone, Debug)]
pub struct EvalClassifier {
    store: ParamStore,
    layers: Vec<(ParamId, ParamId)>,
    digits: Vec<u8>,
    holdout_accuracy: f64,
}

impl EvalClassifier {
    /// Trains on the source images of `digits`, keeping a seeded holdout.
    pub fn train(source: &SourceDigits, digits: &[u8], config: &ClassifierConfig) -> Result<Self, EvalError> {
        let mut digits = digits.to_vec();
        digits.sort_unstable();
        digits.dedup();
        if digits.len() < 2 {
            return Err(EvalError::Config("the classifier needs at least two digit classes".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut idx: Vec<usize> = (0..source.len()).filter(|&i| digits.contains(&source.labels[i])).collect();
        idx.shuffle(&mut rng);
        let n_hold = ((idx.len() as f64) * config.holdout).round() as usize;
        if n_hold == 0 || n_hold >= idx.len() {
            return Err(EvalError::Config(format!("holdout of {n_hold} out of {} images", idx.len())));
        }
        let train = idx.split_off(n_hold);
        let hold = idx;

        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let widths = [INPUT, config.hidden[0], config.hidden[1], digits.len()];
        for (i, w) in widths.windows(2).enumerate() {
            let wi = store.add_uniform(format!("l{i}.weight"), &[w[0], w[1]], w[0], &mut rng);
            let bi = store.add_uniform(format!("l{i}.bias"), &[w[1]], w[0], &mut rng);
            layers.push((wi, bi));
        }
        let mut clf = Self { store, layers, digits, holdout_accuracy: 0.0 };
        let sgd = Sgd { lr: config.lr, momentum: config.momentum };
        let class_of = |i: usize, d: &[u8]| d.iter().position(|&x| x == source.labels[i]).expect("filtered");
        let mut order = train;
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(config.batch_size.max(1)) {
                let images: Vec<f64> = chunk.iter().flat_map(|&i| source.image(i).iter().copied()).collect();
                let k = clf.digits.len();
                let mut target = vec![0.0; chunk.len() * k];
                for (r, &i) in chunk.iter().enumerate() {
                    target[r * k + class_of(i, &clf.digits)] = 1.0;
                }
                let mut tape = Tape::new();
                let logits = clf.logits(&mut tape, &images)?;
                let logp = tape.log_softmax_segments(logits, &[k])?;
                let t = tape.constant(Tensor::new(&[chunk.len(), k], target)?)?;
                let picked = tape.mul(logp, t)?;
                let picked = tape.sum_last(picked)?;
                let nll = tape.mean(picked)?;
                let loss = tape.scale(nll, -1.0)?;
                let grads = tape.backward(loss)?;
                clf.store.zero_grad();
                clf.store.accumulate(&grads)?;
                sgd.step(&mut clf.store);
            }
        }
        let images: Vec<f64> = hold.iter().flat_map(|&i| source.image(i).iter().copied()).collect();
        let pred = clf.predict(&images)?;
        let correct = hold.iter().zip(&pred).filter(|(&i, &p)| source.labels[i] == p).count();
        clf.holdout_accuracy = correct as f64 / hold.len() as f64;
        Ok(clf)
    }

    fn logits(&self, tape: &mut Tape, images: &[f64]) -> Result<Var, EvalError> {
        let b = images.len() / INPUT;
        let mut h = tape.constant(Tensor::new(&[b, INPUT], images.to_vec())?)?;
        for (i, &(w, bias)) in self.layers.iter().enumerate() {
            let wv = tape.param(&self.store, w)?;
            let bv = tape.param(&self.store, bias)?;
            h = tape.matmul(h, wv)?;
            h = tape.add_bias(h, bv)?;
            if i + 1 < self.layers.len() {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Predicted digit of each flattened 28x28 image.
    pub fn predict(&self, images: &[f64]) -> Result<Vec<u8>, EvalError> {
        if images.len() % INPUT != 0 {
            return Err(EvalError::Shape(format!("{} values is not a whole number of digits", images.len())));
        }
        let mut out = Vec::with_capacity(images.len() / INPUT);
        for chunk in images.chunks(256 * INPUT) {
            let mut tape = Tape::new();
            let logits = self.logits(&mut tape, chunk)?;
            let v = tape.value(logits);
            let k = self.digits.len();
            for r in 0..chunk.len() / INPUT {
                let row = &v.data()[r * k..(r + 1) * k];
                let best = (0..k).max_by(|&a, &b| row[a].total_cmp(&row[b])).expect("k >= 2");
                out.push(self.digits[best]);
            }
        }
        Ok(out)
    }

    pub fn digits(&self) -> &[u8] {
        &self.digits
    }

    pub fn holdout_accuracy(&self) -> f64 {
        self.holdout_accuracy
    }

    /// Accuracy a classifier must reach before it may judge generated images.
    pub fn required_accuracy(&self) -> f64 {
        REQUIRED_ACCURACY
    }

    pub fn is_gated(&self) -> bool {
        self.holdout_accuracy >= self.required_accuracy()
    }
}
