use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autodiff::{Container, Tensor};
use crate::plp::{ground, parse_program};

use super::apps::check_same_groups;
use super::net::VaelModel;
use super::{ModelConfig, ModelError, TermWeights};

/// Makes `text` safe for a single metadata line.
pub fn escape_meta(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            _ => out.push(c),
        }
    }
    out
}

pub fn unescape_meta(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

pub fn program_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// A model restored from a checkpoint.
#[derive(Debug)]
pub struct LoadedModel {
    pub model: VaelModel,
    pub container: Container,
    /// Set when the supplied program differs from the one trained with.
    pub hash_mismatch: Option<String>,
}

impl VaelModel {
    /// Parameters (and optionally optimiser moments) plus configuration metadata.
    pub fn to_container(&self, with_moments: bool) -> Container {
        let mut entries = Vec::new();
        for (_, p) in self.store.iter() {
            entries.push((format!("param/{}", p.name), p.value.clone()));
            if with_moments {
                entries.push((format!("moment1/{}", p.name), p.first_moment.clone()));
                entries.push((format!("moment2/{}", p.name), p.second_moment.clone()));
            }
        }
        let c = &self.config;
        let src = self.program.source();
        let metadata = vec![
            ("program_sha256", program_hash(src)),
            ("program", escape_meta(src)),
            ("M", c.latent_dim.to_string()),
            ("N", c.sym_dim.to_string()),
            ("J", self.num_worlds().to_string()),
            ("P", self.num_slots().to_string()),
            ("w_rec", c.weights.rec.to_string()),
            ("w_kl", c.weights.kl.to_string()),
            ("w_q", c.weights.q.to_string()),
            ("lambda", c.temperature.to_string()),
            ("architecture", c.architecture.to_string()),
            ("channels", c.channels.map(|v| v.to_string()).join(",")),
            ("facts_hidden", c.facts_hidden.to_string()),
            ("mlp_hidden", c.mlp_hidden.to_string()),
            ("learn_std", c.learn_std.to_string()),
        ];
        Container { entries, metadata: metadata.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }

    /// Restores a model. With `program_text` the stored parameters are bound
    /// to that program instead, which must share the trained disjunctions.
    pub fn from_container(container: Container, program_text: Option<&str>) -> Result<LoadedModel, ModelError> {
        let meta = |k: &str| container.meta(k).ok_or_else(|| ModelError::Checkpoint(format!("missing metadata '{k}'")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, ModelError> {
            v.parse().map_err(|_| ModelError::Checkpoint(format!("bad value '{v}' for '{k}'")))
        }
        let channels: Vec<usize> = meta("channels")?.split(',').map(|v| num("channels", v)).collect::<Result<_, _>>()?;
        let channels: [usize; 3] =
            channels.try_into().map_err(|_| ModelError::Checkpoint("expected three channel widths".into()))?;
        let config = ModelConfig {
            latent_dim: num("M", meta("M")?)?,
            sym_dim: num("N", meta("N")?)?,
            facts_hidden: num("facts_hidden", meta("facts_hidden")?)?,
            architecture: meta("architecture")?.parse().map_err(ModelError::Checkpoint)?,
            channels,
            mlp_hidden: num("mlp_hidden", meta("mlp_hidden")?)?,
            weights: TermWeights {
                rec: num("w_rec", meta("w_rec")?)?,
                kl: num("w_kl", meta("w_kl")?)?,
                q: num("w_q", meta("w_q")?)?,
            },
            temperature: num("lambda", meta("lambda")?)?,
            learn_std: num("learn_std", meta("learn_std")?)?,
        };
        let stored = unescape_meta(meta("program")?);
        if program_hash(&stored) != meta("program_sha256")? {
            return Err(ModelError::Checkpoint("embedded program does not match its hash".into()));
        }
        let (text, hash_mismatch) = match program_text {
            Some(t) if program_hash(t) != program_hash(&stored) => {
                let old = ground(&parse_program(&stored)?)?;
                let new = ground(&parse_program(t)?)?;
                check_same_groups(&old, &new)?;
                let note = format!("program hash {} differs from trained {}", program_hash(t), program_hash(&stored));
                log::warn!("{note}");
                (t.to_string(), Some(note))
            }
            _ => (stored, None),
        };
        let mut model = VaelModel::new(config, &text, 0)?;
        let expect = |k: &str| -> Result<usize, ModelError> { num(k, meta(k)?) };
        if model.num_worlds() != expect("J")? || model.num_slots() != expect("P")? {
            return Err(ModelError::ProgramMismatch("world or slot count differs from the checkpoint".into()));
        }
        let load = |name: String, target: &Tensor| -> Result<Option<Tensor>, ModelError> {
            match container.get(&name) {
                None => Ok(None),
                Some(t) if t.shape() == target.shape() => Ok(Some(t.clone())),
                Some(t) => Err(ModelError::Checkpoint(format!("{name} has shape {:?}, expected {:?}", t.shape(), target.shape()))),
            }
        };
        for p in model.store.iter_mut() {
            p.value = load(format!("param/{}", p.name), &p.value)?
                .ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {}", p.name)))?;
            if let Some(m) = load(format!("moment1/{}", p.name), &p.first_moment)? {
                p.first_moment = m;
            }
            if let Some(v) = load(format!("moment2/{}", p.name), &p.second_moment)? {
                p.second_moment = v;
            }
        }
        Ok(LoadedModel { model, container, hash_mismatch })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        self.to_container(false).write_to(std::io::BufWriter::new(file))?;
        Ok(())
    }

    pub fn load(path: &Path, program_text: Option<&str>) -> Result<LoadedModel, ModelError> {
        let file = std::fs::File::open(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_container(Container::read_from(std::io::BufReader::new(file))?, program_text)
    }
}
