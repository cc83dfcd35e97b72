use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::OnceLock;

use fixedbitset::FixedBitSet;

use super::infer::{LabelQuery, World};
use super::parser::dependency_order;
use super::syntax::*;
use super::PlpError;

/// Default upper bound on the number of enumerated possible worlds.
pub const DEFAULT_WORLD_CAP: usize = 100_000;

const MAX_BETWEEN_SPAN: i64 = 1_000_000;

/// One annotated disjunction after grounding.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundGroup {
    /// Atom id per choice; `None` is the implicit negative alternative.
    pub choices: Vec<Option<usize>>,
    pub slot_offset: usize,
    pub fixed: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GroundRule {
    pub head: usize,
    pub body: Vec<usize>,
}

/// A variable-free program with interned atoms. Rules are stored so that a
/// single forward pass computes the least fixed point.
#[derive(Debug)]
pub struct GroundProgram {
    atoms: Vec<GroundAtom>,
    index: HashMap<GroundAtom, usize>,
    groups: Vec<GroundGroup>,
    facts: Vec<usize>,
    rules: Vec<GroundRule>,
    queries: Vec<Atom>,
    evidence: Evidence,
    signatures: HashSet<Signature>,
    source: String,
    world_cap: usize,
    worlds: OnceLock<Vec<World>>,
}

impl Clone for GroundProgram {
    fn clone(&self) -> Self {
        Self {
            atoms: self.atoms.clone(),
            index: self.index.clone(),
            groups: self.groups.clone(),
            facts: self.facts.clone(),
            rules: self.rules.clone(),
            queries: self.queries.clone(),
            evidence: self.evidence.clone(),
            signatures: self.signatures.clone(),
            source: self.source.clone(),
            world_cap: self.world_cap,
            worlds: self.worlds.clone(),
        }
    }
}

impl GroundProgram {
    pub fn atoms(&self) -> &[GroundAtom] {
        &self.atoms
    }

    pub fn atom(&self, id: usize) -> &GroundAtom {
        &self.atoms[id]
    }

    pub fn atom_id(&self, atom: &GroundAtom) -> Option<usize> {
        self.index.get(atom).copied()
    }

    pub fn groups(&self) -> &[GroundGroup] {
        &self.groups
    }

    /// Atoms that hold in every world.
    pub fn facts(&self) -> &[usize] {
        &self.facts
    }

    pub fn rules(&self) -> &[GroundRule] {
        &self.rules
    }

    pub fn queries(&self) -> &[Atom] {
        &self.queries
    }

    pub fn evidence(&self) -> &Evidence {
        &self.evidence
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_known(&self, sig: &Signature) -> bool {
        self.signatures.contains(sig)
    }

    pub fn num_slots(&self) -> usize {
        self.groups.iter().map(|g| g.choices.len()).sum()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.choices.len()).collect()
    }

    /// `J`, the product of group sizes (saturating).
    pub fn num_worlds(&self) -> u128 {
        self.groups.iter().fold(1u128, |acc, g| acc.saturating_mul(g.choices.len() as u128))
    }

    pub fn world_cap(&self) -> usize {
        self.world_cap
    }

    /// Replaces the enumeration cap. Clears any cached worlds.
    pub fn with_world_cap(mut self, cap: usize) -> Self {
        self.world_cap = cap;
        self.worlds = OnceLock::new();
        self
    }

    /// Mixed-radix decomposition: group 0 is the most significant digit.
    pub fn world_choices(&self, mut index: usize) -> Vec<usize> {
        let mut choices = vec![0; self.groups.len()];
        for (g, group) in self.groups.iter().enumerate().rev() {
            let n = group.choices.len();
            choices[g] = index % n;
            index /= n;
        }
        choices
    }

    pub fn world_index(&self, choices: &[usize]) -> usize {
        self.groups.iter().zip(choices).fold(0, |acc, (g, &c)| acc * g.choices.len() + c)
    }

    /// Least fixed point of forward chaining from the chosen facts.
    pub fn closure(&self, choices: &[usize]) -> FixedBitSet {
        let mut set = FixedBitSet::with_capacity(self.atoms.len());
        for &f in &self.facts {
            set.insert(f);
        }
        for (group, &c) in self.groups.iter().zip(choices) {
            if let Some(a) = group.choices[c] {
                set.insert(a);
            }
        }
        for rule in &self.rules {
            if !set.contains(rule.head) && rule.body.iter().all(|&b| set.contains(b)) {
                set.insert(rule.head);
            }
        }
        set
    }

    /// All `J` worlds in index order, computed once and cached.
    pub fn worlds(&self) -> Result<&[World], PlpError> {
        if let Some(w) = self.worlds.get() {
            return Ok(w);
        }
        let j = self.num_worlds();
        if j > self.world_cap as u128 {
            return Err(PlpError::WorldCapExceeded { worlds: j, cap: self.world_cap });
        }
        let worlds = (0..j as usize)
            .map(|index| {
                let choices = self.world_choices(index);
                let closure = self.closure(&choices);
                World { index, choices, closure }
            })
            .collect();
        Ok(self.worlds.get_or_init(|| worlds))
    }

    /// `J x P` row-major matrix with a 1 where world `j` selects slot `s`.
    pub fn incidence_matrix(&self) -> Result<Vec<f64>, PlpError> {
        let worlds = self.worlds()?;
        let p = self.num_slots();
        let mut m = vec![0.0; worlds.len() * p];
        for w in worlds {
            for (group, &c) in self.groups.iter().zip(&w.choices) {
                m[w.index * p + group.slot_offset + c] = 1.0;
            }
        }
        Ok(m)
    }

    /// The first declared query with exactly one variable, with every value
    /// that variable can take in the ground program.
    pub fn label_query(&self) -> Result<LabelQuery, PlpError> {
        for q in &self.queries {
            let vars: HashSet<&str> = q.variables().collect();
            if vars.len() != 1 {
                continue;
            }
            let var = vars.into_iter().next().unwrap().to_string();
            let mut found: Vec<(Constant, usize)> = Vec::new();
            for (id, atom) in self.atoms.iter().enumerate() {
                if atom.signature() != q.signature() {
                    continue;
                }
                let mut value: Option<&Constant> = None;
                let matches = q.args.iter().zip(&atom.args).all(|(t, c)| match t {
                    Term::Const(k) => k == c,
                    Term::Var(_) => match value {
                        None => {
                            value = Some(c);
                            true
                        }
                        Some(v) => v == c,
                    },
                });
                if matches {
                    found.push((value.unwrap().clone(), id));
                }
            }
            found.sort();
            return Ok(LabelQuery {
                pattern: q.clone(),
                variable: var,
                values: found.iter().map(|(v, _)| v.clone()).collect(),
                atoms: found.iter().map(|(_, id)| *id).collect(),
            });
        }
        Err(PlpError::NoLabelQuery)
    }
}

impl fmt::Display for GroundProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            let parts: Vec<String> = g
                .choices
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let p = match &g.fixed {
                        Some(v) => format!("{}", v[i]),
                        None => "nn".into(),
                    };
                    match c {
                        Some(a) => format!("{p}::{}", self.atoms[*a]),
                        None => format!("{p}::false"),
                    }
                })
                .collect();
            writeln!(f, "{}.", parts.join("; "))?;
        }
        for &a in &self.facts {
            writeln!(f, "{}.", self.atoms[a])?;
        }
        for r in &self.rules {
            let body: Vec<String> = r.body.iter().map(|&b| self.atoms[b].to_string()).collect();
            writeln!(f, "{} :- {}.", self.atoms[r.head], body.join(", "))?;
        }
        Ok(())
    }
}

struct Grounder {
    atoms: Vec<GroundAtom>,
    index: HashMap<GroundAtom, usize>,
    by_signature: HashMap<Signature, Vec<usize>>,
}

impl Grounder {
    fn intern(&mut self, atom: GroundAtom) -> usize {
        if let Some(&id) = self.index.get(&atom) {
            return id;
        }
        let id = self.atoms.len();
        self.by_signature.entry(atom.signature()).or_default().push(id);
        self.index.insert(atom.clone(), id);
        self.atoms.push(atom);
        id
    }
}

type Binding = HashMap<String, Constant>;

/// Instantiates every clause over the atoms derivable from the program's
/// probabilistic facts. Arithmetic and comparisons are evaluated away, so the
/// result mentions only ground atoms.
pub fn ground(program: &Program) -> Result<GroundProgram, PlpError> {
    let mut g = Grounder { atoms: Vec::new(), index: HashMap::new(), by_signature: HashMap::new() };
    let mut signatures = HashSet::new();
    let mut groups = Vec::new();
    for d in &program.disjunctions {
        let mut choices = Vec::new();
        for c in &d.choices {
            choices.push(match &c.atom {
                Some(a) => {
                    let ga = a.to_ground().ok_or_else(|| PlpError::NonGround(a.to_string()))?;
                    signatures.insert(ga.signature());
                    Some(g.intern(ga))
                }
                None => None,
            });
        }
        groups.push(GroundGroup {
            choices,
            slot_offset: d.choices[0].slot,
            fixed: d.fixed_probabilities(),
        });
    }

    let order = dependency_order(&program.clauses)?;
    let rank: HashMap<&Signature, usize> = order.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut clauses: Vec<&Clause> = program.clauses.iter().collect();
    clauses.sort_by_key(|c| rank[&c.head.signature()]);

    let mut rules = Vec::new();
    let mut seen = HashSet::new();
    let mut facts = Vec::new();
    for clause in clauses {
        signatures.insert(clause.head.signature());
        let mut out = Vec::new();
        let mut done = vec![false; clause.body.len()];
        solve(&g, clause, &mut done, &mut Binding::new(), &mut Vec::new(), &mut out)?;
        for (head, mut body) in out {
            let head = g.intern(head);
            body.sort_unstable();
            body.dedup();
            if body.is_empty() {
                if !facts.contains(&head) {
                    facts.push(head);
                }
            } else if seen.insert((head, body.clone())) {
                rules.push(GroundRule { head, body });
            }
        }
    }

    Ok(GroundProgram {
        atoms: g.atoms,
        index: g.index,
        groups,
        facts,
        rules,
        queries: program.queries.clone(),
        evidence: program.evidence.clone(),
        signatures,
        source: program.source.clone(),
        world_cap: DEFAULT_WORLD_CAP,
        worlds: OnceLock::new(),
    })
}

fn solve(
    g: &Grounder,
    clause: &Clause,
    done: &mut [bool],
    binding: &mut Binding,
    body: &mut Vec<usize>,
    out: &mut Vec<(GroundAtom, Vec<usize>)>,
) -> Result<(), PlpError> {
    let bound = |e: &Expr, b: &Binding| {
        let mut vs = Vec::new();
        e.variables(&mut vs);
        vs.iter().all(|v| b.contains_key(v))
    };
    let pick = clause
        .body
        .iter()
        .enumerate()
        .filter(|(i, _)| !done[*i])
        .find(|(_, item)| match item {
            BodyItem::Atom(_) => false,
            BodyItem::Is(_, e) => bound(e, binding),
            BodyItem::Compare(a, _, b) => bound(a, binding) && bound(b, binding),
            BodyItem::Between(lo, hi, _) => bound(lo, binding) && bound(hi, binding),
        })
        .or_else(|| {
            clause.body.iter().enumerate().find(|(i, item)| !done[*i] && matches!(item, BodyItem::Atom(_)))
        })
        .map(|(i, _)| i);

    let Some(i) = pick else {
        if let Some(i) = done.iter().position(|d| !d) {
            let mut vs = Vec::new();
            if let BodyItem::Compare(a, _, b) | BodyItem::Between(a, b, _) = &clause.body[i] {
                a.variables(&mut vs);
                b.variables(&mut vs);
            }
            let var = vs.into_iter().find(|v| !binding.contains_key(v)).unwrap_or_default();
            return Err(PlpError::UnboundVariable { var, clause: clause.head.to_string() });
        }
        let head = substitute(&clause.head, binding)?;
        out.push((head, body.clone()));
        return Ok(());
    };

    done[i] = true;
    let result = match &clause.body[i] {
        BodyItem::Atom(a) => {
            let candidates = g.by_signature.get(&a.signature()).map(Vec::as_slice).unwrap_or(&[]);
            for &id in candidates {
                let mut added = Vec::new();
                if unify(a, &g.atoms[id], binding, &mut added) {
                    body.push(id);
                    let r = solve(g, clause, done, binding, body, out);
                    body.pop();
                    for v in &added {
                        binding.remove(v);
                    }
                    r?;
                } else {
                    for v in &added {
                        binding.remove(v);
                    }
                }
            }
            Ok(())
        }
        BodyItem::Is(v, e) => {
            let value = eval(e, binding)?;
            match binding.get(v) {
                Some(Constant::Int(x)) if *x == value => solve(g, clause, done, binding, body, out),
                Some(_) => Ok(()),
                None => {
                    binding.insert(v.clone(), Constant::Int(value));
                    let r = solve(g, clause, done, binding, body, out);
                    binding.remove(v);
                    r
                }
            }
        }
        BodyItem::Compare(a, op, b) => {
            if op.holds(eval(a, binding)?, eval(b, binding)?) {
                solve(g, clause, done, binding, body, out)
            } else {
                Ok(())
            }
        }
        BodyItem::Between(lo, hi, x) => {
            let (lo, hi) = (eval(lo, binding)?, eval(hi, binding)?);
            let current = match x {
                Term::Const(c) => Some(c.clone()),
                Term::Var(v) => binding.get(v).cloned(),
            };
            match current {
                Some(Constant::Int(v)) if lo <= v && v <= hi => solve(g, clause, done, binding, body, out),
                Some(Constant::Int(_)) => Ok(()),
                Some(Constant::Symbol(s)) => Err(PlpError::Arithmetic(format!("between/3 on non-integer {s}"))),
                None => {
                    if hi.saturating_sub(lo) > MAX_BETWEEN_SPAN {
                        return Err(PlpError::Domain(format!("between({lo}, {hi}, _)")));
                    }
                    let Term::Var(v) = x else { unreachable!() };
                    let mut r = Ok(());
                    for k in lo..=hi {
                        binding.insert(v.clone(), Constant::Int(k));
                        r = solve(g, clause, done, binding, body, out);
                        if r.is_err() {
                            break;
                        }
                    }
                    binding.remove(v);
                    r
                }
            }
        }
    };
    done[i] = false;
    result
}

fn unify(pattern: &Atom, atom: &GroundAtom, binding: &mut Binding, added: &mut Vec<String>) -> bool {
    for (t, c) in pattern.args.iter().zip(&atom.args) {
        match t {
            Term::Const(k) if k != c => return false,
            Term::Const(_) => {}
            Term::Var(v) => match binding.get(v) {
                Some(b) if b != c => return false,
                Some(_) => {}
                None => {
                    binding.insert(v.clone(), c.clone());
                    added.push(v.clone());
                }
            },
        }
    }
    true
}

fn substitute(atom: &Atom, binding: &Binding) -> Result<GroundAtom, PlpError> {
    let args = atom
        .args
        .iter()
        .map(|t| match t {
            Term::Const(c) => Ok(c.clone()),
            Term::Var(v) => binding
                .get(v)
                .cloned()
                .ok_or_else(|| PlpError::UnboundVariable { var: v.clone(), clause: atom.to_string() }),
        })
        .collect::<Result<_, _>>()?;
    Ok(GroundAtom { predicate: atom.predicate.clone(), args })
}

fn eval(e: &Expr, binding: &Binding) -> Result<i64, PlpError> {
    let overflow = || PlpError::Arithmetic("integer overflow".into());
    match e {
        Expr::Term(Term::Const(Constant::Int(i))) => Ok(*i),
        Expr::Term(Term::Const(Constant::Symbol(s))) => Err(PlpError::Arithmetic(format!("non-integer term {s}"))),
        Expr::Term(Term::Var(v)) => match binding.get(v) {
            Some(Constant::Int(i)) => Ok(*i),
            Some(Constant::Symbol(s)) => Err(PlpError::Arithmetic(format!("{v} = {s} is not an integer"))),
            None => Err(PlpError::UnboundVariable { var: v.clone(), clause: "arithmetic".into() }),
        },
        Expr::Neg(inner) => eval(inner, binding)?.checked_neg().ok_or_else(overflow),
        Expr::Bin(a, op, b) => {
            let (x, y) = (eval(a, binding)?, eval(b, binding)?);
            match op {
                ArithOp::Add => x.checked_add(y).ok_or_else(overflow),
                ArithOp::Sub => x.checked_sub(y).ok_or_else(overflow),
                ArithOp::Mul => x.checked_mul(y).ok_or_else(overflow),
                ArithOp::Div | ArithOp::Mod if y == 0 => Err(PlpError::Arithmetic("division by zero".into())),
                ArithOp::Div => x.checked_div(y).ok_or_else(overflow),
                ArithOp::Mod => Ok(((x % y) + y) % y),
                ArithOp::Pow => {
                    let exp = u32::try_from(y).map_err(|_| PlpError::Arithmetic(format!("{x} ^ {y}")))?;
                    x.checked_pow(exp).ok_or_else(overflow)
                }
            }
        }
    }
}
