use fixedbitset::FixedBitSet;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::ground::GroundProgram;
use super::syntax::*;
use super::PlpError;

/// One joint choice over all groups and the atoms it entails.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub index: usize,
    /// Selected choice per group.
    pub choices: Vec<usize>,
    pub closure: FixedBitSet,
}

impl World {
    pub fn contains(&self, atom: usize) -> bool {
        self.closure.contains(atom)
    }
}

/// Per-slot probabilities, laid out group by group.
#[derive(Clone, Debug, PartialEq)]
pub struct FactProbabilities {
    values: Vec<f64>,
    offsets: Vec<usize>,
}

impl FactProbabilities {
    /// Checks that every value lies in `[0, 1]` and each group sums to 1 within 1e-9.
    pub fn new(values: Vec<f64>, group_sizes: &[usize]) -> Result<Self, PlpError> {
        let total: usize = group_sizes.iter().sum();
        if values.len() != total {
            return Err(PlpError::InvalidProbabilities(format!("expected {total} values, got {}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(PlpError::InvalidProbabilities(format!("{v} is not in [0, 1]")));
        }
        let mut offsets = Vec::with_capacity(group_sizes.len() + 1);
        let mut at = 0;
        offsets.push(0);
        for (g, &n) in group_sizes.iter().enumerate() {
            let s: f64 = values[at..at + n].iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(PlpError::InvalidProbabilities(format!("group {g} sums to {s}")));
            }
            at += n;
            offsets.push(at);
        }
        Ok(Self { values, offsets })
    }

    pub fn uniform(group_sizes: &[usize]) -> Self {
        let values = group_sizes.iter().flat_map(|&n| std::iter::repeat_n(1.0 / n as f64, n)).collect();
        Self::new(values, group_sizes).expect("uniform probabilities are valid")
    }

    /// The literal probabilities written in the program.
    pub fn from_program(gp: &GroundProgram) -> Result<Self, PlpError> {
        let mut values = Vec::new();
        for (g, group) in gp.groups().iter().enumerate() {
            match &group.fixed {
                Some(v) => values.extend_from_slice(v),
                None => return Err(PlpError::InvalidProbabilities(format!("group {g} is learned"))),
            }
        }
        Self::new(values, &gp.group_sizes())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_groups(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn group(&self, g: usize) -> &[f64] {
        &self.values[self.offsets[g]..self.offsets[g + 1]]
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.offsets.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Normalised distribution over world indices.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldDistribution {
    pub probabilities: Vec<f64>,
    pub normalizer: f64,
}

impl WorldDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        WeightedIndex::new(&self.probabilities).expect("normalised weights").sample(rng)
    }
}

/// Label values of a query pattern with one free variable, e.g. `add(img,_)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelQuery {
    pub pattern: Atom,
    pub variable: String,
    /// Sorted label values.
    pub values: Vec<Constant>,
    /// Atom id of the query instance for each value.
    pub atoms: Vec<usize>,
}

impl LabelQuery {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, value: &Constant) -> Option<usize> {
        self.values.iter().position(|v| v == value)
    }

    pub fn formula(&self, gp: &GroundProgram, k: usize) -> Formula {
        Formula::Atom(gp.atom(self.atoms[k]).clone())
    }

    /// `J x K` row-major indicator: world `j` entails label `k`.
    pub fn indicator_matrix(&self, gp: &GroundProgram) -> Result<Vec<f64>, PlpError> {
        let worlds = gp.worlds()?;
        let k = self.len();
        let mut m = vec![0.0; worlds.len() * k];
        for w in worlds {
            for (i, &a) in self.atoms.iter().enumerate() {
                if w.contains(a) {
                    m[w.index * k + i] = 1.0;
                }
            }
        }
        Ok(m)
    }

    /// Labels entailed by a world.
    pub fn labels_of(&self, w: &World) -> Vec<usize> {
        (0..self.len()).filter(|&i| w.contains(self.atoms[i])).collect()
    }
}

enum Resolved {
    True,
    Atom(Option<usize>),
    Not(Box<Resolved>),
    And(Vec<Resolved>),
    Or(Vec<Resolved>),
}

impl Resolved {
    fn eval(&self, closure: &FixedBitSet) -> bool {
        match self {
            Resolved::True => true,
            Resolved::Atom(id) => id.is_some_and(|i| closure.contains(i)),
            Resolved::Not(f) => !f.eval(closure),
            Resolved::And(fs) => fs.iter().all(|f| f.eval(closure)),
            Resolved::Or(fs) => fs.iter().any(|f| f.eval(closure)),
        }
    }
}

fn resolve(gp: &GroundProgram, f: &Formula) -> Result<Resolved, PlpError> {
    Ok(match f {
        Formula::True => Resolved::True,
        Formula::Atom(a) => {
            if !gp.is_known(&a.signature()) {
                return Err(PlpError::UnknownPredicate(a.signature().to_string()));
            }
            Resolved::Atom(gp.atom_id(a))
        }
        Formula::Not(inner) => Resolved::Not(Box::new(resolve(gp, inner)?)),
        Formula::And(fs) => Resolved::And(fs.iter().map(|f| resolve(gp, f)).collect::<Result<_, _>>()?),
        Formula::Or(fs) => Resolved::Or(fs.iter().map(|f| resolve(gp, f)).collect::<Result<_, _>>()?),
    })
}

fn check_shape(gp: &GroundProgram, p: &FactProbabilities) -> Result<(), PlpError> {
    if p.group_sizes() != gp.group_sizes() {
        return Err(PlpError::InvalidProbabilities(format!(
            "group sizes {:?} do not match program {:?}",
            p.group_sizes(),
            gp.group_sizes()
        )));
    }
    Ok(())
}

/// Product of the selected choice probabilities.
pub fn world_probability(p: &FactProbabilities, w: &World) -> f64 {
    w.choices.iter().enumerate().map(|(g, &c)| p.group(g)[c]).product()
}

pub fn entails(gp: &GroundProgram, w: &World, f: &Formula) -> Result<bool, PlpError> {
    Ok(resolve(gp, f)?.eval(&w.closure))
}

/// Total probability of the worlds entailing `query`.
pub fn success_probability(gp: &GroundProgram, p: &FactProbabilities, query: &Formula) -> Result<f64, PlpError> {
    check_shape(gp, p)?;
    let q = resolve(gp, query)?;
    Ok(gp.worlds()?.iter().filter(|w| q.eval(&w.closure)).map(|w| world_probability(p, w)).sum())
}

/// Exact gradient of [`success_probability`] with respect to every slot.
pub fn success_gradient(gp: &GroundProgram, p: &FactProbabilities, query: &Formula) -> Result<Vec<f64>, PlpError> {
    check_shape(gp, p)?;
    let q = resolve(gp, query)?;
    let offsets: Vec<usize> = gp.groups().iter().map(|g| g.slot_offset).collect();
    let mut grad = vec![0.0; gp.num_slots()];
    let n = offsets.len();
    let mut prefix = vec![1.0; n + 1];
    let mut suffix = vec![1.0; n + 1];
    for w in gp.worlds()?.iter().filter(|w| q.eval(&w.closure)) {
        let factors: Vec<f64> = w.choices.iter().enumerate().map(|(g, &c)| p.group(g)[c]).collect();
        for g in 0..n {
            prefix[g + 1] = prefix[g] * factors[g];
        }
        for g in (0..n).rev() {
            suffix[g] = suffix[g + 1] * factors[g];
        }
        for g in 0..n {
            grad[offsets[g] + w.choices[g]] += prefix[g] * suffix[g + 1];
        }
    }
    Ok(grad)
}

/// World distribution conditioned on `evidence`. Worlds not entailing it get
/// exactly zero.
pub fn evidence_conditional(
    gp: &GroundProgram,
    p: &FactProbabilities,
    evidence: &Evidence,
) -> Result<WorldDistribution, PlpError> {
    check_shape(gp, p)?;
    let e = resolve(gp, &evidence.to_formula())?;
    let weights: Vec<f64> = gp
        .worlds()?
        .iter()
        .map(|w| if e.eval(&w.closure) { world_probability(p, w) } else { 0.0 })
        .collect();
    let z: f64 = weights.iter().sum();
    if z <= 0.0 {
        return Err(PlpError::InconsistentEvidence);
    }
    Ok(WorldDistribution { probabilities: weights.iter().map(|w| w / z).collect(), normalizer: z })
}

pub fn sample_world<'a, R: Rng + ?Sized>(
    gp: &'a GroundProgram,
    d: &WorldDistribution,
    rng: &mut R,
) -> Result<&'a World, PlpError> {
    Ok(&gp.worlds()?[d.sample(rng)])
}

/// Index of the choice in `group` whose atom's last argument equals `value`.
pub fn choice_for_value(gp: &GroundProgram, group: usize, value: &Constant) -> Result<usize, PlpError> {
    let err = || PlpError::UnknownChoiceValue { group, value: value.to_string() };
    gp.groups()
        .get(group)
        .ok_or_else(err)?
        .choices
        .iter()
        .position(|c| c.is_some_and(|a| gp.atom(a).args.last() == Some(value)))
        .ok_or_else(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plp::{ground, parse_formula, parse_program};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const BINARY: &str = "\
nn::digit(img,1,0); nn::digit(img,1,1).
nn::digit(img,2,0); nn::digit(img,2,1).
add(img,Z) :- digit(img,1,Y1), digit(img,2,Y2), Z is Y1 + Y2.
query(add(img,_)).
";

    fn binary() -> GroundProgram {
        ground(&parse_program(BINARY).unwrap()).unwrap()
    }

    fn f(s: &str) -> Formula {
        parse_formula(s).unwrap()
    }

    #[test]
    fn world_probability_examples() {
        let gp = binary();
        let uniform = FactProbabilities::uniform(&[2, 2]);
        let worlds = gp.worlds().unwrap();
        assert!(worlds.iter().all(|w| world_probability(&uniform, w) == 0.25));
        let p = FactProbabilities::new(vec![0.3, 0.7, 0.6, 0.4], &[2, 2]).unwrap();
        let w = &worlds[gp.world_index(&[1, 0])];
        assert!((world_probability(&p, w) - 0.42).abs() < 1e-15);
        let pi: Vec<f64> = worlds.iter().map(|w| world_probability(&p, w)).collect();
        for (a, b) in pi.iter().zip([0.18, 0.12, 0.42, 0.28]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn closure_of_world_one_one() {
        let gp = binary();
        let w = &gp.worlds().unwrap()[3];
        assert_eq!(w.choices, vec![1, 1]);
        assert!(entails(&gp, w, &f("add(img,2)")).unwrap());
        assert!(entails(&gp, w, &Formula::And(vec![])).unwrap());
        let w01 = &gp.worlds().unwrap()[1];
        assert!(!entails(&gp, w01, &f("digit(img,1,1)")).unwrap());
    }

    #[test]
    fn success_examples() {
        let gp = binary();
        let u = FactProbabilities::uniform(&[2, 2]);
        assert_eq!(success_probability(&gp, &u, &f("add(img,1)")).unwrap(), 0.5);
        assert_eq!(success_probability(&gp, &u, &f("add(img,0) ; add(img,1) ; add(img,2)")).unwrap(), 1.0);
        let one_hot = FactProbabilities::new(vec![0.0, 1.0, 0.0, 1.0], &[2, 2]).unwrap();
        assert_eq!(success_probability(&gp, &one_hot, &f("add(img,2)")).unwrap(), 1.0);
        assert!(matches!(success_probability(&gp, &u, &f("mul(img,2)")), Err(PlpError::UnknownPredicate(_))));
        assert_eq!(success_probability(&gp, &u, &f("add(img,7)")).unwrap(), 0.0);
    }

    #[test]
    fn conditional_examples() {
        let gp = binary();
        let u = FactProbabilities::uniform(&[2, 2]);
        let e2 = parse_program("evidence(add(img,2)).").unwrap().evidence;
        let d = evidence_conditional(&gp, &u, &e2).unwrap();
        assert_eq!(d.probabilities, vec![0.0, 0.0, 0.0, 1.0]);
        let e1 = parse_program("evidence(add(img,1)).").unwrap().evidence;
        let d = evidence_conditional(&gp, &u, &e1).unwrap();
        assert_eq!(d.probabilities, vec![0.0, 0.5, 0.5, 0.0]);
        let d = evidence_conditional(&gp, &u, &Evidence::default()).unwrap();
        assert_eq!(d.probabilities, vec![0.25; 4]);
        let zero = FactProbabilities::new(vec![1.0, 0.0, 1.0, 0.0], &[2, 2]).unwrap();
        assert!(matches!(evidence_conditional(&gp, &zero, &e2), Err(PlpError::InconsistentEvidence)));
    }

    #[test]
    fn sampling_respects_support() {
        let gp = binary();
        let u = FactProbabilities::uniform(&[2, 2]);
        let e2 = parse_program("evidence(add(img,2)).").unwrap().evidence;
        let d = evidence_conditional(&gp, &u, &e2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_world(&gp, &d, &mut rng).unwrap().index, 3);
        }
    }

    #[test]
    fn probabilities_are_validated() {
        assert!(FactProbabilities::new(vec![0.5, 0.6], &[2]).is_err());
        assert!(FactProbabilities::new(vec![-0.1, 1.1], &[2]).is_err());
        assert!(FactProbabilities::new(vec![0.5], &[2]).is_err());
        let gp = binary();
        let wrong = FactProbabilities::uniform(&[4]);
        assert!(success_probability(&gp, &wrong, &f("add(img,1)")).is_err());
    }

    #[test]
    fn choice_lookup() {
        let gp = binary();
        assert_eq!(choice_for_value(&gp, 1, &Constant::Int(1)).unwrap(), 1);
        assert!(matches!(choice_for_value(&gp, 0, &Constant::Int(5)), Err(PlpError::UnknownChoiceValue { .. })));
    }
}
