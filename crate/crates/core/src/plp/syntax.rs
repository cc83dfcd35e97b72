use std::fmt;

/// A ground value: symbolic constant or integer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constant {
    Symbol(String),
    Int(i64),
}

impl fmt::Display for Constant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Constant::Symbol(s) => f.write_str(s),
            Constant::Int(i) => write!(f, "{i}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Const(Constant),
    Var(String),
}

impl Term {
    pub fn symbol(s: &str) -> Self {
        Term::Const(Constant::Symbol(s.to_string()))
    }

    pub fn int(i: i64) -> Self {
        Term::Const(Constant::Int(i))
    }

    pub fn var(s: &str) -> Self {
        Term::Var(s.to_string())
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(c) => c.fmt(f),
            Term::Var(v) => f.write_str(v),
        }
    }
}

/// `predicate(arg1, ..., argN)`; arity is `args.len()`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: &str, args: Vec<Term>) -> Self {
        Self { predicate: predicate.to_string(), args }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn signature(&self) -> Signature {
        Signature { name: self.predicate.clone(), arity: self.args.len() }
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| matches!(t, Term::Const(_)))
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }

    /// The ground version of this atom, if it has no variables.
    pub fn to_ground(&self) -> Option<GroundAtom> {
        let args = self
            .args
            .iter()
            .map(|t| match t {
                Term::Const(c) => Some(c.clone()),
                Term::Var(_) => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some(GroundAtom { predicate: self.predicate.clone(), args })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                a.fmt(f)?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

/// Predicate name and arity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Signature {
    pub name: String,
    pub arity: usize,
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<Constant>,
}

impl GroundAtom {
    pub fn signature(&self) -> Signature {
        Signature { name: self.predicate.clone(), arity: self.args.len() }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let atom = Atom {
            predicate: self.predicate.clone(),
            args: self.args.iter().cloned().map(Term::Const).collect(),
        };
        atom.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    /// Integer division (`//` or `/`), truncating toward zero.
    Div,
    Mod,
    /// `^` or `**`; `0^0 = 1`.
    Pow,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Term(Term),
    Neg(Box<Expr>),
    Bin(Box<Expr>, ArithOp, Box<Expr>),
}

impl Expr {
    pub fn variables(&self, out: &mut Vec<String>) {
        match self {
            Expr::Term(Term::Var(v)) => out.push(v.clone()),
            Expr::Term(Term::Const(_)) => {}
            Expr::Neg(e) => e.variables(out),
            Expr::Bin(a, _, b) => {
                a.variables(out);
                b.variables(out);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    /// `=:=`
    Eq,
    /// `=\=`
    Ne,
}

impl CmpOp {
    pub fn holds(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BodyItem {
    Atom(Atom),
    /// `Var is Expr`
    Is(String, Expr),
    Compare(Expr, CmpOp, Expr),
    /// `between(Low, High, X)`: X ranges over the integers in `[Low, High]`.
    Between(Expr, Expr, Term),
}

/// Definite clause `head :- body`. Facts have an empty body.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clause {
    pub head: Atom,
    pub body: Vec<BodyItem>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbSpec {
    Fixed(f64),
    /// `nn`: the probability is supplied at inference time (by the model).
    Learned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    /// `None` is the implicit "false" alternative of a single probabilistic fact.
    pub atom: Option<Atom>,
    pub prob: ProbSpec,
    pub slot: usize,
}

/// Mutually exclusive, exhaustive probabilistic choices.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedDisjunction {
    pub group: usize,
    pub choices: Vec<Choice>,
}

impl AnnotatedDisjunction {
    pub fn is_learned(&self) -> bool {
        self.choices.iter().all(|c| c.prob == ProbSpec::Learned)
    }

    /// Literal probabilities, when the group is not learned.
    pub fn fixed_probabilities(&self) -> Option<Vec<f64>> {
        self.choices
            .iter()
            .map(|c| match c.prob {
                ProbSpec::Fixed(p) => Some(p),
                ProbSpec::Learned => None,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Literal {
    pub atom: Atom,
    pub positive: bool,
}

/// Propositional formula over ground atoms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Formula {
    True,
    Atom(GroundAtom),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn atom(a: GroundAtom) -> Self {
        Formula::Atom(a)
    }

    pub fn and(parts: Vec<Formula>) -> Self {
        Formula::And(parts)
    }

    pub fn or(parts: Vec<Formula>) -> Self {
        Formula::Or(parts)
    }

    pub fn negate(self) -> Self {
        Formula::Not(Box::new(self))
    }
}

/// Conjunction of ground literals used to condition the world distribution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Evidence {
    pub literals: Vec<(GroundAtom, bool)>,
}

impl Evidence {
    pub fn is_empty(&self) -> bool {
        self.literals.is_empty()
    }

    pub fn to_formula(&self) -> Formula {
        Formula::And(
            self.literals
                .iter()
                .map(|(a, pos)| {
                    let f = Formula::Atom(a.clone());
                    if *pos {
                        f
                    } else {
                        f.negate()
                    }
                })
                .collect(),
        )
    }
}

/// A parsed program in source order.
#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub disjunctions: Vec<AnnotatedDisjunction>,
    pub clauses: Vec<Clause>,
    pub queries: Vec<Atom>,
    pub evidence: Evidence,
    pub source: String,
}

impl Program {
    /// Total number of probability slots `P`.
    pub fn num_slots(&self) -> usize {
        self.disjunctions.iter().map(|d| d.choices.len()).sum()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.disjunctions.iter().map(|d| d.choices.len()).collect()
    }
}
