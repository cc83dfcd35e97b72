//! Plain-vector versions of the model's building blocks. The training path
//! computes the same quantities on a tape; tests check the two agree.

use crate::plp::{world_probability, FactProbabilities, GroundProgram, LabelQuery};

use super::ModelError;

/// Floor applied before taking the log of a success probability.
pub const LOG_FLOOR: f64 = 1e-12;

/// Split view of a sampled latent code.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    pub z: Vec<f64>,
    pub z_sym: Vec<f64>,
}

/// Diagonal Gaussian over the full `[z, z_sym]` code.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

/// `mean + exp(log_std) * eps`, split after the first `m` entries.
pub fn reparam_sample(post: &GaussianPosterior, eps: &[f64], m: usize) -> Result<LatentCode, ModelError> {
    if eps.len() != post.mean.len() || post.log_std.len() != post.mean.len() || m > eps.len() {
        return Err(ModelError::Shape(format!(
            "posterior {} / {}, noise {}, split {m}",
            post.mean.len(),
            post.log_std.len(),
            eps.len()
        )));
    }
    let code: Vec<f64> = post.mean.iter().zip(&post.log_std).zip(eps).map(|((mu, ls), e)| mu + ls.exp() * e).collect();
    Ok(LatentCode { z: code[..m].to_vec(), z_sym: code[m..].to_vec() })
}

/// `KL(N(mean, exp(log_std)^2) || N(0, 1))`, summed over dimensions.
pub fn kl_divergence(post: &GaussianPosterior) -> f64 {
    post.mean
        .iter()
        .zip(&post.log_std)
        .map(|(mu, ls)| 0.5 * (mu * mu + (2.0 * ls).exp() - 1.0 - 2.0 * ls))
        .sum()
}

/// Laplace log-likelihood with unit scale, without its constant: `-sum |x - mu|`.
pub fn reconstruction_loss(x: &[f64], mu: &[f64]) -> Result<f64, ModelError> {
    if x.len() != mu.len() {
        return Err(ModelError::Shape(format!("image {} vs reconstruction {}", x.len(), mu.len())));
    }
    Ok(-x.iter().zip(mu).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// `log pi_j` for every world, in index order.
pub fn world_logits(gp: &GroundProgram, p: &FactProbabilities) -> Result<Vec<f64>, ModelError> {
    Ok(gp.worlds()?.iter().map(|w| world_probability(p, w).ln()).collect())
}

/// Relaxed one-hot sample `softmax((log_pi + g) / lambda)`.
pub fn gumbel_softmax_sample(log_pi: &[f64], lambda: f64, g: &[f64]) -> Result<Vec<f64>, ModelError> {
    if !(lambda > 0.0) {
        return Err(ModelError::Temperature(lambda));
    }
    if g.len() != log_pi.len() {
        return Err(ModelError::Shape(format!("logits {} vs noise {}", log_pi.len(), g.len())));
    }
    let s: Vec<f64> = log_pi.iter().zip(g).map(|(l, n)| (l + n) / lambda).collect();
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.iter().map(|v| v / total).collect())
}

/// `log max(P(label), 1e-12)` where `label` indexes `lq.values`.
pub fn query_loss(gp: &GroundProgram, lq: &LabelQuery, p: &FactProbabilities, label: usize) -> Result<f64, ModelError> {
    if label >= lq.len() {
        return Err(ModelError::UnknownLabel(label.to_string()));
    }
    let s = crate::plp::success_probability(gp, p, &lq.formula(gp, label))?;
    Ok(s.max(LOG_FLOOR).ln())
}

/// `log max(P(digit atoms), 1e-12)` for one chosen alternative per group.
pub fn digit_supervision_loss(gp: &GroundProgram, p: &FactProbabilities, digits: &[usize]) -> Result<f64, ModelError> {
    if digits.len() != gp.groups().len() || digits.iter().zip(gp.groups()).any(|(&c, g)| c >= g.choices.len()) {
        return Err(ModelError::Shape(format!("digit choices {digits:?} for groups {:?}", gp.group_sizes())));
    }
    let atoms: Vec<crate::plp::Formula> = digits
        .iter()
        .zip(gp.groups())
        .map(|(&c, g)| match g.choices[c] {
            Some(a) => crate::plp::Formula::Atom(gp.atom(a).clone()),
            None => crate::plp::Formula::True,
        })
        .collect();
    let s = crate::plp::success_probability(gp, p, &crate::plp::Formula::And(atoms))?;
    Ok(s.max(LOG_FLOOR).ln())
}
