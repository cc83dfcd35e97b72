use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::plp::{evidence_conditional, ground, parse_program, world_probability, Evidence, FactProbabilities, GroundProgram};

use super::net::VaelModel;
use super::ModelError;

/// Reparameterisation noise `eps: [B, M + N]` and Gumbel noise `g: [B, J]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Noise {
    pub eps: Tensor,
    pub gumbel: Tensor,
}

impl Noise {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, batch: usize, code_dim: usize, worlds: usize) -> Self {
        let eps = (0..batch * code_dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let gumbel = (0..batch * worlds).map(|_| gumbel(rng)).collect();
        Self {
            eps: Tensor::new(&[batch, code_dim], eps).expect("noise shape"),
            gumbel: Tensor::new(&[batch, worlds], gumbel).expect("noise shape"),
        }
    }

    pub fn zeros(batch: usize, code_dim: usize, worlds: usize) -> Self {
        Self { eps: Tensor::zeros(&[batch, code_dim]), gumbel: Tensor::zeros(&[batch, worlds]) }
    }
}

/// `-ln(-ln u)` with `u` uniform on the open unit interval.
pub fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// A decoded sample and the world it was decoded from.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub image: Vec<f64>,
    pub world: usize,
    pub choices: Vec<usize>,
    /// Label indices entailed by the world.
    pub labels: Vec<usize>,
}

impl VaelModel {
    /// Label distributions (over `labels().values`) from the posterior mean.
    pub fn classify(&self, images: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        let posts = self.encode(images)?;
        let m = self.config.latent_dim;
        let z_sym: Vec<f64> = posts.iter().flat_map(|p| p.mean[m..].iter().copied()).collect();
        let facts = self.facts_from_latent(&z_sym)?;
        facts.iter().map(|p| self.label_distribution(p)).collect()
    }

    /// `P(label = k)` for every label value under fact probabilities `p`.
    pub fn label_distribution(&self, p: &FactProbabilities) -> Result<Vec<f64>, ModelError> {
        let mut out = vec![0.0; self.labels.len()];
        for w in self.program.worlds()? {
            let pw = world_probability(p, w);
            for k in self.labels.labels_of(w) {
                out[k] += pw;
            }
        }
        Ok(out)
    }

    /// Prior sample decoded from an exactly sampled world.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Generated, ModelError> {
        self.conditional_generate(&Evidence::default(), rng)
    }

    /// Prior sample decoded from a world drawn from the evidence-conditioned
    /// distribution.
    pub fn conditional_generate<R: Rng + ?Sized>(&self, evidence: &Evidence, rng: &mut R) -> Result<Generated, ModelError> {
        let (m, n) = (self.config.latent_dim, self.config.sym_dim);
        let code: Vec<f64> = (0..m + n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let p = self.facts_from_latent(&code[m..])?.remove(0);
        let dist = evidence_conditional(&self.program, &p, evidence)?;
        let world = dist.sample(rng);
        Ok(self.decode_world(&code[..m], world)?)
    }

    /// Decodes `z` with the one-hot encoding of world index `world`.
    pub fn decode_world(&self, z: &[f64], world: usize) -> Result<Generated, ModelError> {
        let worlds = self.program.worlds()?;
        let w = worlds.get(world).ok_or_else(|| ModelError::Shape(format!("world {world} of {}", worlds.len())))?;
        let mut omega = vec![0.0; worlds.len()];
        omega[world] = 1.0;
        Ok(Generated {
            image: self.decode(z, &omega)?,
            world,
            choices: w.choices.clone(),
            labels: self.labels.labels_of(w),
        })
    }

    /// Same parameters bound to a different program with identical
    /// annotated disjunctions.
    pub fn swap_program(&self, program_text: &str) -> Result<VaelModel, ModelError> {
        let program = ground(&parse_program(program_text)?)?;
        check_same_groups(&self.program, &program)?;
        let mut out = self.clone();
        out.rebind(program)?;
        Ok(out)
    }
}

pub(super) fn check_same_groups(old: &GroundProgram, new: &GroundProgram) -> Result<(), ModelError> {
    if old.groups().len() != new.groups().len() {
        return Err(ModelError::ProgramMismatch(format!(
            "{} annotated disjunctions, expected {}",
            new.groups().len(),
            old.groups().len()
        )));
    }
    for (g, (a, b)) in old.groups().iter().zip(new.groups()).enumerate() {
        let atoms = |gp: &GroundProgram, c: &[Option<usize>]| -> Vec<Option<String>> {
            c.iter().map(|x| x.map(|id| gp.atom(id).to_string())).collect()
        };
        let (ca, cb) = (atoms(old, &a.choices), atoms(new, &b.choices));
        if ca != cb {
            return Err(ModelError::ProgramMismatch(format!("group {g} has choices {cb:?}, expected {ca:?}")));
        }
    }
    Ok(())
}
