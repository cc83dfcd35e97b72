use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::plp::{ground, parse_program, FactProbabilities, GroundProgram, LabelQuery};

use super::apps::Noise;
use super::ops::{GaussianPosterior, LOG_FLOOR};
use super::{Architecture, ModelConfig, ModelError, IMAGE_HEIGHT, IMAGE_WIDTH};

const PIXELS: usize = IMAGE_HEIGHT * IMAGE_WIDTH;
/// Spatial size after three stride-2 convolutions of a 28x56 input.
const CODE_H: usize = 3;
const CODE_W: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layer {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct Layers {
    enc: Vec<Layer>,
    enc_head: Layer,
    facts: [Layer; 2],
    dec_in: Layer,
    dec: Vec<Layer>,
}

/// Encoder, facts network and decoder parameters bound to a ground program.
#[derive(Clone, Debug)]
pub struct VaelModel {
    pub(super) config: ModelConfig,
    pub(super) store: ParamStore,
    layers: Layers,
    pub(super) program: GroundProgram,
    pub(super) labels: LabelQuery,
    /// `[P, J]`: slot `s` is selected by world `j`.
    incidence: Tensor,
    /// `[J, K]`: world `j` entails label `k`.
    label_matrix: Tensor,
    pub(super) group_sizes: Vec<usize>,
}

/// A mini-batch of flattened 28x56 images with label indices and optional
/// per-group digit choices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub images: Vec<f64>,
    pub labels: Vec<usize>,
    pub digits: Vec<Option<Vec<usize>>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Unweighted objective terms summed over a batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Terms {
    pub l_rec: f64,
    pub l_q: f64,
    pub kl: f64,
    pub l_digits: f64,
    pub examples: usize,
    pub supervised: usize,
}

impl Terms {
    pub fn add(&mut self, other: &Terms) {
        self.l_rec += other.l_rec;
        self.l_q += other.l_q;
        self.kl += other.kl;
        self.l_digits += other.l_digits;
        self.examples += other.examples;
        self.supervised += other.supervised;
    }

    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_q, self.kl, self.l_digits].iter().all(|v| v.is_finite())
    }
}

pub struct Forward {
    pub loss: Var,
    pub terms: Terms,
}

fn dense(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Layer {
    Layer {
        w: store.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in, rng),
        b: store.add_uniform(format!("{name}.bias"), &[fan_out], fan_in, rng),
    }
}

impl VaelModel {
    /// Fresh model for `program_text` with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, program_text: &str, seed: u64) -> Result<Self, ModelError> {
        let program = ground(&parse_program(program_text)?)?;
        Self::check_config(&config)?;
        let (labels, incidence, label_matrix, group_sizes) = Self::program_tensors(&program)?;
        let p: usize = group_sizes.iter().sum();
        let j = incidence.shape()[1];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (m, n) = (config.latent_dim, config.sym_dim);
        let code = m + n;
        let [c1, c2, c3] = config.channels;
        let (enc, enc_head) = match config.architecture {
            Architecture::Conv => {
                let mut enc = Vec::new();
                for (i, (ci, co)) in [(1, c1), (c1, c2), (c2, c3)].into_iter().enumerate() {
                    let fan_in = ci * 16;
                    let w = store.add_uniform(format!("enc.conv{}.weight", i + 1), &[co, ci, 4, 4], fan_in, &mut rng);
                    let b = store.add_uniform(format!("enc.conv{}.bias", i + 1), &[co], fan_in, &mut rng);
                    enc.push(Layer { w, b });
                }
                (enc, dense(&mut store, &mut rng, "enc.head", c3 * CODE_H * CODE_W, 2 * code))
            }
            Architecture::Mlp => {
                let h = dense(&mut store, &mut rng, "enc.hidden", PIXELS, config.mlp_hidden);
                (vec![h], dense(&mut store, &mut rng, "enc.head", config.mlp_hidden, 2 * code))
            }
        };
        let facts = [dense(&mut store, &mut rng, "facts.hidden", n, config.facts_hidden), dense(&mut store, &mut rng, "facts.out", config.facts_hidden, p)];
        let (dec_in, dec) = match config.architecture {
            Architecture::Conv => {
                let dec_in = dense(&mut store, &mut rng, "dec.input", m + j, c3 * CODE_H * CODE_W);
                let mut dec = Vec::new();
                for (i, (ci, co, kh)) in [(c3, c2, 5), (c2, c1, 4), (c1, 1, 4)].into_iter().enumerate() {
                    let fan_in = co * kh * 4;
                    let w = store.add_uniform(format!("dec.convt{}.weight", i + 1), &[ci, co, kh, 4], fan_in, &mut rng);
                    let b = store.add_uniform(format!("dec.convt{}.bias", i + 1), &[co], fan_in, &mut rng);
                    dec.push(Layer { w, b });
                }
                (dec_in, dec)
            }
            Architecture::Mlp => {
                let dec_in = dense(&mut store, &mut rng, "dec.hidden", m + j, config.mlp_hidden);
                (dec_in, vec![dense(&mut store, &mut rng, "dec.out", config.mlp_hidden, PIXELS)])
            }
        };
        Ok(Self {
            config,
            store,
            layers: Layers { enc, enc_head, facts, dec_in, dec },
            program,
            labels,
            incidence,
            label_matrix,
            group_sizes,
        })
    }

    fn check_config(c: &ModelConfig) -> Result<(), ModelError> {
        if c.latent_dim == 0 || c.sym_dim == 0 || c.facts_hidden == 0 || c.mlp_hidden == 0 || c.channels.contains(&0) {
            return Err(ModelError::Config("layer sizes must be positive".into()));
        }
        if !(c.temperature > 0.0) {
            return Err(ModelError::Temperature(c.temperature));
        }
        let w = c.weights;
        if !(w.rec >= 0.0 && w.kl >= 0.0 && w.q >= 0.0) {
            return Err(ModelError::Config("term weights must be nonnegative".into()));
        }
        Ok(())
    }

    pub(super) fn program_tensors(gp: &GroundProgram) -> Result<(LabelQuery, Tensor, Tensor, Vec<usize>), ModelError> {
        if let Some(g) = gp.groups().iter().position(|g| g.fixed.is_some()) {
            return Err(ModelError::FixedGroup(g));
        }
        let labels = gp.label_query()?;
        if labels.is_empty() {
            return Err(ModelError::UnknownLabel("program has an empty label domain".into()));
        }
        let j = gp.worlds()?.len();
        let p = gp.num_slots();
        let a = gp.incidence_matrix()?;
        let mut at = vec![0.0; p * j];
        for jj in 0..j {
            for s in 0..p {
                at[s * j + jj] = a[jj * p + s];
            }
        }
        let incidence = Tensor::new(&[p, j], at)?;
        let label_matrix = Tensor::new(&[j, labels.len()], labels.indicator_matrix(gp)?)?;
        Ok((labels, incidence, label_matrix, gp.group_sizes()))
    }

    pub(super) fn rebind(&mut self, program: GroundProgram) -> Result<(), ModelError> {
        let (labels, incidence, label_matrix, group_sizes) = Self::program_tensors(&program)?;
        if incidence.shape() != self.incidence.shape() {
            return Err(ModelError::ProgramMismatch(format!("world layout {:?}, expected {:?}", incidence.shape(), self.incidence.shape())));
        }
        self.program = program;
        self.labels = labels;
        self.incidence = incidence;
        self.label_matrix = label_matrix;
        self.group_sizes = group_sizes;
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn program(&self) -> &GroundProgram {
        &self.program
    }

    pub fn labels(&self) -> &LabelQuery {
        &self.labels
    }

    pub fn num_worlds(&self) -> usize {
        self.incidence.shape()[1]
    }

    pub fn num_slots(&self) -> usize {
        self.incidence.shape()[0]
    }

    pub fn code_dim(&self) -> usize {
        self.config.latent_dim + self.config.sym_dim
    }

    fn linear(&self, tape: &mut Tape, x: Var, l: Layer) -> Result<Var, ModelError> {
        let w = tape.param(&self.store, l.w)?;
        let b = tape.param(&self.store, l.b)?;
        let y = tape.matmul(x, w)?;
        Ok(tape.add_bias(y, b)?)
    }

    /// Posterior mean and log-std, each `[B, M + N]`, for flattened images `[B, 1568]`.
    pub fn encode_vars(&self, tape: &mut Tape, images: Var) -> Result<(Var, Var), ModelError> {
        let shape = tape.value(images).shape().to_vec();
        if shape.len() != 2 || shape[1] != PIXELS {
            return Err(ModelError::Shape(format!("expected [B, {PIXELS}] images, got {shape:?}")));
        }
        let b = shape[0];
        let h = match self.config.architecture {
            Architecture::Conv => {
                let mut h = tape.reshape(images, &[b, 1, IMAGE_HEIGHT, IMAGE_WIDTH])?;
                for l in &self.layers.enc {
                    let w = tape.param(&self.store, l.w)?;
                    let bias = tape.param(&self.store, l.b)?;
                    h = tape.conv2d(h, w, (2, 2), (1, 1))?;
                    h = tape.add_bias(h, bias)?;
                    h = tape.relu(h)?;
                }
                tape.reshape(h, &[b, self.config.channels[2] * CODE_H * CODE_W])?
            }
            Architecture::Mlp => {
                let h = self.linear(tape, images, self.layers.enc[0])?;
                tape.relu(h)?
            }
        };
        let out = self.linear(tape, h, self.layers.enc_head)?;
        let l = self.code_dim();
        let mean = tape.slice(out, 1, 0, l)?;
        let log_std = if self.config.learn_std {
            tape.slice(out, 1, l, l)?
        } else {
            tape.constant(Tensor::zeros(&[b, l]))?
        };
        Ok((mean, log_std))
    }

    /// Unnormalised per-group scores `[B, P]`.
    pub fn facts_logits(&self, tape: &mut Tape, z_sym: Var) -> Result<Var, ModelError> {
        let h = self.linear(tape, z_sym, self.layers.facts[0])?;
        let h = tape.relu(h)?;
        self.linear(tape, h, self.layers.facts[1])
    }

    /// `log pi` over worlds, `[B, J]`.
    pub fn world_logits_var(&self, tape: &mut Tape, logits: Var) -> Result<Var, ModelError> {
        let log_p = tape.log_softmax_segments(logits, &self.group_sizes)?;
        let a = tape.constant(self.incidence.clone())?;
        Ok(tape.matmul(log_p, a)?)
    }

    /// Decoder mean `[B, 1568]` in `[0, 1]` from `z: [B, M]` and `omega: [B, J]`.
    pub fn decode_vars(&self, tape: &mut Tape, z: Var, omega: Var) -> Result<Var, ModelError> {
        let (zs, ws) = (tape.value(z).shape().to_vec(), tape.value(omega).shape().to_vec());
        if zs.len() != 2 || ws.len() != 2 || zs[1] != self.config.latent_dim || ws[1] != self.num_worlds() || zs[0] != ws[0] {
            return Err(ModelError::Shape(format!(
                "decoder expects [B, {}] and [B, {}], got {zs:?} and {ws:?}",
                self.config.latent_dim,
                self.num_worlds()
            )));
        }
        let b = zs[0];
        let input = tape.concat(&[z, omega], 1)?;
        let out = match self.config.architecture {
            Architecture::Conv => {
                let h = self.linear(tape, input, self.layers.dec_in)?;
                let mut h = tape.reshape(h, &[b, self.config.channels[2], CODE_H, CODE_W])?;
                for (i, l) in self.layers.dec.iter().enumerate() {
                    let w = tape.param(&self.store, l.w)?;
                    let bias = tape.param(&self.store, l.b)?;
                    h = tape.conv_transpose2d(h, w, (2, 2), (1, 1))?;
                    h = tape.add_bias(h, bias)?;
                    if i + 1 < self.layers.dec.len() {
                        h = tape.relu(h)?;
                    }
                }
                tape.reshape(h, &[b, PIXELS])?
            }
            Architecture::Mlp => {
                let h = self.linear(tape, input, self.layers.dec_in)?;
                let h = tape.relu(h)?;
                self.linear(tape, h, self.layers.dec[0])?
            }
        };
        Ok(tape.sigmoid(out)?)
    }

    /// Builds the weighted negative objective, averaged over the batch, and
    /// reports the unweighted terms.
    pub fn elbo(&self, tape: &mut Tape, batch: &Batch, noise: &Noise) -> Result<Forward, ModelError> {
        let b = batch.len();
        let (m, n, j, k) = (self.config.latent_dim, self.config.sym_dim, self.num_worlds(), self.labels.len());
        if batch.images.len() != b * PIXELS || batch.digits.len() != b {
            return Err(ModelError::Shape(format!("batch of {b} with {} pixels", batch.images.len())));
        }
        if noise.eps.shape() != [b, m + n] || noise.gumbel.shape() != [b, j] {
            return Err(ModelError::Shape(format!("noise {:?} / {:?}", noise.eps.shape(), noise.gumbel.shape())));
        }
        let x = tape.constant(Tensor::new(&[b, PIXELS], batch.images.clone())?)?;
        let (mean, log_std) = self.encode_vars(tape, x)?;

        let eps = tape.constant(noise.eps.clone())?;
        let std = tape.exp(log_std)?;
        let spread = tape.mul(std, eps)?;
        let code = tape.add(mean, spread)?;
        let z = tape.slice(code, 1, 0, m)?;
        let z_sym = tape.slice(code, 1, m, n)?;

        let logits = self.facts_logits(tape, z_sym)?;
        let log_pi = self.world_logits_var(tape, logits)?;
        let pi = tape.exp(log_pi)?;

        let g = tape.constant(noise.gumbel.clone())?;
        let perturbed = tape.add(log_pi, g)?;
        let tempered = tape.scale(perturbed, 1.0 / self.config.temperature)?;
        let omega = tape.softmax(tempered)?;
        let mu_x = self.decode_vars(tape, z, omega)?;

        let diff = tape.sub(x, mu_x)?;
        let abs = tape.abs(diff)?;
        let rec_pos = tape.sum_last(abs)?;
        let l_rec = tape.scale(rec_pos, -1.0)?;

        let q = tape.constant(self.label_matrix.clone())?;
        let success = tape.matmul(pi, q)?;
        let mut onehot = vec![0.0; b * k];
        for (i, &y) in batch.labels.iter().enumerate() {
            if y >= k {
                return Err(ModelError::UnknownLabel(y.to_string()));
            }
            onehot[i * k + y] = 1.0;
        }
        let onehot = tape.constant(Tensor::new(&[b, k], onehot)?)?;
        let picked = tape.mul(success, onehot)?;
        let picked = tape.sum_last(picked)?;
        let picked = tape.clamp_min(picked, LOG_FLOOR)?;
        let l_q = tape.log(picked)?;

        let mean_sq = tape.mul(mean, mean)?;
        let two_ls = tape.scale(log_std, 2.0)?;
        let var = tape.exp(two_ls)?;
        let kl = tape.add(mean_sq, var)?;
        let kl = tape.sub(kl, two_ls)?;
        let kl = tape.add_scalar(kl, -1.0)?;
        let kl = tape.sum_last(kl)?;
        let kl = tape.scale(kl, 0.5)?;

        let w = self.config.weights;
        let mut total = tape.scale(l_rec, -w.rec)?;
        let q_term = tape.scale(l_q, -w.q)?;
        total = tape.add(total, q_term)?;
        let kl_term = tape.scale(kl, w.kl)?;
        total = tape.add(total, kl_term)?;

        let supervised: Vec<usize> = (0..b).filter(|&i| batch.digits[i].is_some()).collect();
        let mut l_digits_sum = 0.0;
        if !supervised.is_empty() {
            let mut target = vec![0.0; b * j];
            let mut mask = vec![0.0; b];
            for &i in &supervised {
                let choices = batch.digits[i].as_ref().unwrap();
                if choices.len() != self.group_sizes.len() || choices.iter().zip(&self.group_sizes).any(|(c, s)| c >= s) {
                    return Err(ModelError::Shape(format!("digit choices {choices:?} for groups {:?}", self.group_sizes)));
                }
                target[i * j + self.program.world_index(choices)] = 1.0;
                mask[i] = 1.0;
            }
            let target = tape.constant(Tensor::new(&[b, j], target)?)?;
            let mask = tape.constant(Tensor::new(&[b], mask)?)?;
            let sel = tape.mul(pi, target)?;
            let sel = tape.sum_last(sel)?;
            let sel = tape.clamp_min(sel, LOG_FLOOR)?;
            let log_sel = tape.log(sel)?;
            let l_digits = tape.mul(log_sel, mask)?;
            l_digits_sum = tape.value(l_digits).sum();
            let d_term = tape.scale(l_digits, -w.q)?;
            total = tape.add(total, d_term)?;
        }
        let loss = tape.mean(total)?;
        let terms = Terms {
            l_rec: tape.value(l_rec).sum(),
            l_q: tape.value(l_q).sum(),
            kl: tape.value(kl).sum(),
            l_digits: l_digits_sum,
            examples: b,
            supervised: supervised.len(),
        };
        Ok(Forward { loss, terms })
    }

    /// Posterior parameters for each image of a flattened batch.
    pub fn encode(&self, images: &[f64]) -> Result<Vec<GaussianPosterior>, ModelError> {
        if images.len() % PIXELS != 0 || images.is_empty() {
            return Err(ModelError::Shape(format!("{} pixels is not a whole number of images", images.len())));
        }
        let b = images.len() / PIXELS;
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[b, PIXELS], images.to_vec())?)?;
        let (mean, log_std) = self.encode_vars(&mut tape, x)?;
        let l = self.code_dim();
        let (mv, lv) = (tape.value(mean), tape.value(log_std));
        Ok((0..b)
            .map(|i| GaussianPosterior {
                mean: mv.data()[i * l..(i + 1) * l].to_vec(),
                log_std: lv.data()[i * l..(i + 1) * l].to_vec(),
            })
            .collect())
    }

    /// Fact probabilities for each row of `z_sym` (flattened `[B, N]`).
    pub fn facts_from_latent(&self, z_sym: &[f64]) -> Result<Vec<FactProbabilities>, ModelError> {
        let n = self.config.sym_dim;
        if z_sym.len() % n != 0 || z_sym.is_empty() {
            return Err(ModelError::Shape(format!("{} values is not a multiple of N = {n}", z_sym.len())));
        }
        let b = z_sym.len() / n;
        let mut tape = Tape::new();
        let zs = tape.constant(Tensor::new(&[b, n], z_sym.to_vec())?)?;
        let logits = self.facts_logits(&mut tape, zs)?;
        let p = tape.softmax_segments(logits, &self.group_sizes)?;
        let pv = tape.value(p);
        let slots = self.num_slots();
        (0..b)
            .map(|i| Ok(FactProbabilities::new(pv.data()[i * slots..(i + 1) * slots].to_vec(), &self.group_sizes)?))
            .collect()
    }

    /// Decoded images for flattened `z: [B, M]` and `omega: [B, J]`.
    pub fn decode(&self, z: &[f64], omega: &[f64]) -> Result<Vec<f64>, ModelError> {
        let (m, j) = (self.config.latent_dim, self.num_worlds());
        if z.is_empty() || z.len() % m != 0 || omega.len() != z.len() / m * j {
            return Err(ModelError::Shape(format!("z has {} values, omega {}", z.len(), omega.len())));
        }
        let b = z.len() / m;
        let mut tape = Tape::new();
        let zv = tape.constant(Tensor::new(&[b, m], z.to_vec())?)?;
        let wv = tape.constant(Tensor::new(&[b, j], omega.to_vec())?)?;
        let out = self.decode_vars(&mut tape, zv, wv)?;
        Ok(tape.value(out).data().to_vec())
    }
}
