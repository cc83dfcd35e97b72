//! Lexer and recursive-descent parser for the probabilistic logic dialect.
//!
//! ```text
//! nn::digit(img,1,0); nn::digit(img,1,1).      % learned annotated disjunction
//! p1::digit(img,2,0); p2::digit(img,2,1).      % named placeholders are learned too
//! 0.5::coin.                                   % single fact, implicit complement
//! add(img,Z) :- digit(img,1,X), digit(img,2,Y), Z is X + Y.
//! query(add(img,_)).
//! evidence(add(img,2)).
//! ```

use std::collections::{HashMap, HashSet};

use petgraph::algo::toposort;
use petgraph::graph::DiGraph;

use super::syntax::*;
use super::PlpError;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Var(String),
    Int(i64),
    Float(f64),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMBOLS: &[&str] = &[
    "=\\=", "=:=", "\\+", "::", ":-", "=<", ">=", "//", "**", "(", ")", ",", ";", ".", "+", "-", "*",
    "/", "^", "<", ">",
];

fn lex(text: &str) -> Result<Vec<Token>, PlpError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '%' {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        let (tl, tc) = (line, col);
        if c.is_ascii_digit() {
            let start = i;
            let mut end = i;
            while end < chars.len() && chars[end].is_ascii_digit() {
                end += 1;
            }
            let is_float = end + 1 < chars.len() && chars[end] == '.' && chars[end + 1].is_ascii_digit();
            if is_float {
                end += 1;
                while end < chars.len() && chars[end].is_ascii_digit() {
                    end += 1;
                }
                if end < chars.len() && (chars[end] == 'e' || chars[end] == 'E') {
                    let mut e = end + 1;
                    if e < chars.len() && (chars[e] == '-' || chars[e] == '+') {
                        e += 1;
                    }
                    if e < chars.len() && chars[e].is_ascii_digit() {
                        end = e;
                        while end < chars.len() && chars[end].is_ascii_digit() {
                            end += 1;
                        }
                    }
                }
            }
            let s: String = chars[start..end].iter().collect();
            let tok = if is_float {
                Tok::Float(s.parse().map_err(|_| syntax(tl, tc, format!("bad number {s}")))?)
            } else {
                Tok::Int(s.parse().map_err(|_| syntax(tl, tc, format!("integer {s} out of range")))?)
            };
            advance(&mut i, &mut line, &mut col, end - start);
            out.push(Token { tok, line: tl, col: tc });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            let mut end = i;
            while end < chars.len() && (chars[end].is_alphanumeric() || chars[end] == '_') {
                end += 1;
            }
            let s: String = chars[start..end].iter().collect();
            let tok = if c.is_uppercase() || c == '_' { Tok::Var(s) } else { Tok::Ident(s) };
            advance(&mut i, &mut line, &mut col, end - start);
            out.push(Token { tok, line: tl, col: tc });
            continue;
        }
        let rest: String = chars[i..(i + 3).min(chars.len())].iter().collect();
        match SYMBOLS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                advance(&mut i, &mut line, &mut col, s.chars().count());
                out.push(Token { tok: Tok::Sym(s), line: tl, col: tc });
            }
            None => return Err(syntax(tl, tc, format!("unexpected character '{c}'"))),
        }
    }
    Ok(out)
}

fn syntax(line: usize, col: usize, message: String) -> PlpError {
    PlpError::Syntax { line, col, message }
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    anon: usize,
    eof: (usize, usize),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|t| &t.tok)
    }

    fn here(&self) -> (usize, usize) {
        self.toks.get(self.pos).map(|t| (t.line, t.col)).unwrap_or(self.eof)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, PlpError> {
        let (l, c) = self.here();
        Err(syntax(l, c, msg.into()))
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Some(Tok::Sym(x)) if *x == s)
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), PlpError> {
        if self.is_sym(s) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{s}', found {}", self.describe()))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            None => "end of input".into(),
            Some(Tok::Ident(s)) | Some(Tok::Var(s)) => format!("'{s}'"),
            Some(Tok::Int(i)) => format!("'{i}'"),
            Some(Tok::Float(f)) => format!("'{f}'"),
            Some(Tok::Sym(s)) => format!("'{s}'"),
        }
    }

    fn fresh_var(&mut self) -> String {
        self.anon += 1;
        format!("_G{}", self.anon)
    }

    fn term(&mut self) -> Result<Term, PlpError> {
        match self.next() {
            Some(Tok::Ident(s)) => Ok(Term::Const(Constant::Symbol(s))),
            Some(Tok::Var(v)) if v == "_" => Ok(Term::Var(self.fresh_var())),
            Some(Tok::Var(v)) => Ok(Term::Var(v)),
            Some(Tok::Int(i)) => Ok(Term::int(i)),
            Some(Tok::Sym("-")) => match self.next() {
                Some(Tok::Int(i)) => Ok(Term::int(-i)),
                _ => {
                    self.pos -= 1;
                    self.err("expected integer after '-'")
                }
            },
            _ => {
                self.pos -= 1;
                self.err(format!("expected a term, found {}", self.describe()))
            }
        }
    }

    fn atom(&mut self) -> Result<Atom, PlpError> {
        let name = match self.next() {
            Some(Tok::Ident(s)) => s,
            _ => {
                self.pos -= 1;
                return self.err(format!("expected an atom, found {}", self.describe()));
            }
        };
        let mut args = Vec::new();
        if self.is_sym("(") {
            self.pos += 1;
            loop {
                args.push(self.term()?);
                if self.is_sym(",") {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            self.expect_sym(")")?;
        }
        Ok(Atom { predicate: name, args })
    }

    // expr := additive
    fn expr(&mut self) -> Result<Expr, PlpError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Sym("+")) => ArithOp::Add,
                Some(Tok::Sym("-")) => ArithOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.mul_expr()?;
            lhs = Expr::Bin(Box::new(lhs), op, Box::new(rhs));
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, PlpError> {
        let mut lhs = self.pow_expr()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Sym("*")) => ArithOp::Mul,
                Some(Tok::Sym("/")) | Some(Tok::Sym("//")) => ArithOp::Div,
                Some(Tok::Ident(s)) if s == "mod" => ArithOp::Mod,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.pow_expr()?;
            lhs = Expr::Bin(Box::new(lhs), op, Box::new(rhs));
        }
    }

    fn pow_expr(&mut self) -> Result<Expr, PlpError> {
        let base = self.unary_expr()?;
        if self.is_sym("^") || self.is_sym("**") {
            self.pos += 1;
            let exp = self.pow_expr()?;
            return Ok(Expr::Bin(Box::new(base), ArithOp::Pow, Box::new(exp)));
        }
        Ok(base)
    }

    fn unary_expr(&mut self) -> Result<Expr, PlpError> {
        if self.is_sym("-") {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary_expr()?)));
        }
        if self.is_sym("(") {
            self.pos += 1;
            let e = self.expr()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        Ok(Expr::Term(self.term()?))
    }

    fn cmp_op(&mut self) -> Option<CmpOp> {
        let op = match self.peek()? {
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("=<") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            Tok::Sym("=:=") => CmpOp::Eq,
            Tok::Sym("=\\=") => CmpOp::Ne,
            _ => return None,
        };
        self.pos += 1;
        Some(op)
    }

    fn body_item(&mut self) -> Result<BodyItem, PlpError> {
        if self.is_sym("\\+") {
            return self.err("negation is not supported in clause bodies");
        }
        if let Some(Tok::Ident(s)) = self.peek() {
            if s == "between" && matches!(self.peek_at(1), Some(Tok::Sym("("))) {
                self.pos += 2;
                let lo = self.expr()?;
                self.expect_sym(",")?;
                let hi = self.expr()?;
                self.expect_sym(",")?;
                let x = self.term()?;
                self.expect_sym(")")?;
                return Ok(BodyItem::Between(lo, hi, x));
            }
            if s != "mod" {
                return Ok(BodyItem::Atom(self.atom()?));
            }
        }
        let lhs = self.expr()?;
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "is") {
            self.pos += 1;
            let Expr::Term(Term::Var(v)) = lhs else {
                return self.err("left side of 'is' must be a variable");
            };
            return Ok(BodyItem::Is(v, self.expr()?));
        }
        match self.cmp_op() {
            Some(op) => Ok(BodyItem::Compare(lhs, op, self.expr()?)),
            None => self.err(format!("expected 'is' or a comparison, found {}", self.describe())),
        }
    }

    fn literal(&mut self) -> Result<Literal, PlpError> {
        if self.is_sym("\\+") {
            self.pos += 1;
            return Ok(Literal { atom: self.atom()?, positive: false });
        }
        if matches!(self.peek(), Some(Tok::Ident(s)) if s == "not") && matches!(self.peek_at(1), Some(Tok::Sym("("))) {
            self.pos += 2;
            let atom = self.atom()?;
            self.expect_sym(")")?;
            return Ok(Literal { atom, positive: false });
        }
        Ok(Literal { atom: self.atom()?, positive: true })
    }

    fn prob(&mut self) -> Result<ProbSpec, PlpError> {
        match self.next() {
            Some(Tok::Float(f)) => Ok(ProbSpec::Fixed(f)),
            Some(Tok::Int(i)) => Ok(ProbSpec::Fixed(i as f64)),
            Some(Tok::Ident(_)) => Ok(ProbSpec::Learned),
            _ => {
                self.pos -= 1;
                self.err(format!("expected a probability or 'nn', found {}", self.describe()))
            }
        }
    }

    fn starts_prob(&self) -> bool {
        let head = match self.peek() {
            Some(Tok::Float(_)) | Some(Tok::Int(_)) => true,
            Some(Tok::Ident(_)) => true,
            _ => false,
        };
        head && matches!(self.peek_at(1), Some(Tok::Sym("::")))
    }
}

enum Statement {
    Disjunction(Vec<(ProbSpec, Atom)>, (usize, usize)),
    Clause(Clause),
    Query(Atom),
    Evidence(Vec<Literal>),
}

fn statement(p: &mut Parser) -> Result<Statement, PlpError> {
    if p.starts_prob() {
        let at = p.here();
        let mut heads = Vec::new();
        loop {
            let prob = p.prob()?;
            p.expect_sym("::")?;
            heads.push((prob, p.atom()?));
            if p.is_sym(";") {
                p.pos += 1;
            } else {
                break;
            }
        }
        p.expect_sym(".")?;
        return Ok(Statement::Disjunction(heads, at));
    }
    let directive = match (p.peek(), p.peek_at(1)) {
        (Some(Tok::Ident(s)), Some(Tok::Sym("("))) if s == "query" || s == "evidence" => Some(s.clone()),
        _ => None,
    };
    if let Some(d) = directive {
        p.pos += 2;
        let stmt = if d == "query" {
            Statement::Query(p.atom()?)
        } else {
            let mut lit = p.literal()?;
            if p.is_sym(",") {
                p.pos += 1;
                match p.next() {
                    Some(Tok::Ident(s)) if s == "true" => {}
                    Some(Tok::Ident(s)) if s == "false" => lit.positive = !lit.positive,
                    _ => {
                        p.pos -= 1;
                        return p.err("expected 'true' or 'false' in evidence/2");
                    }
                }
            }
            Statement::Evidence(vec![lit])
        };
        p.expect_sym(")")?;
        p.expect_sym(".")?;
        return Ok(stmt);
    }
    let head = p.atom()?;
    let mut body = Vec::new();
    if p.is_sym(":-") {
        p.pos += 1;
        loop {
            body.push(p.body_item()?);
            if p.is_sym(",") {
                p.pos += 1;
            } else {
                break;
            }
        }
    }
    p.expect_sym(".")?;
    Ok(Statement::Clause(Clause { head, body }))
}

/// Parses and validates a program: range restriction, acyclic predicate
/// dependencies, ground probabilistic heads and normalised literal
/// probabilities. Annotated disjunctions are numbered in source order and
/// their probability slots laid out contiguously.
pub fn parse_program(text: &str) -> Result<Program, PlpError> {
    let toks = lex(text)?;
    let eof = toks.last().map(|t| (t.line, t.col + 1)).unwrap_or((1, 1));
    let mut p = Parser { toks, pos: 0, anon: 0, eof };
    let mut program = Program {
        disjunctions: Vec::new(),
        clauses: Vec::new(),
        queries: Vec::new(),
        evidence: Evidence::default(),
        source: text.to_string(),
    };
    let mut slot = 0;
    while p.peek().is_some() {
        match statement(&mut p)? {
            Statement::Disjunction(heads, (line, col)) => {
                let group = program.disjunctions.len();
                let mut choices: Vec<Choice> = Vec::new();
                for (prob, atom) in &heads {
                    if !atom.is_ground() {
                        return Err(PlpError::NonGround(format!("probabilistic fact {atom} at line {line}")));
                    }
                    if let ProbSpec::Fixed(v) = prob {
                        if !(0.0..=1.0).contains(v) {
                            return Err(PlpError::InvalidProbabilities(format!("{v} at line {line}, column {col}")));
                        }
                    }
                    choices.push(Choice { atom: Some(atom.clone()), prob: *prob, slot: 0 });
                }
                let learned = heads.iter().filter(|(p, _)| *p == ProbSpec::Learned).count();
                if learned != 0 && learned != heads.len() {
                    return Err(PlpError::InvalidProbabilities(format!(
                        "annotated disjunction at line {line} mixes learned and literal probabilities"
                    )));
                }
                if heads.len() == 1 {
                    let complement = match heads[0].0 {
                        ProbSpec::Fixed(v) => ProbSpec::Fixed(1.0 - v),
                        ProbSpec::Learned => ProbSpec::Learned,
                    };
                    choices.push(Choice { atom: None, prob: complement, slot: 0 });
                } else if learned == 0 {
                    let total: f64 = heads
                        .iter()
                        .map(|(p, _)| match p {
                            ProbSpec::Fixed(v) => *v,
                            ProbSpec::Learned => 0.0,
                        })
                        .sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(PlpError::InvalidProbabilities(format!(
                            "annotated disjunction at line {line} sums to {total}, expected 1"
                        )));
                    }
                }
                for c in &mut choices {
                    c.slot = slot;
                    slot += 1;
                }
                program.disjunctions.push(AnnotatedDisjunction { group, choices });
            }
            Statement::Clause(c) => {
                check_range_restricted(&c)?;
                program.clauses.push(c);
            }
            Statement::Query(q) => program.queries.push(q),
            Statement::Evidence(lits) => {
                for l in lits {
                    let g = l.atom.to_ground().ok_or_else(|| PlpError::NonGround(format!("evidence {}", l.atom)))?;
                    program.evidence.literals.push((g, l.positive));
                }
            }
        }
    }
    check_acyclic(&program.clauses)?;
    Ok(program)
}

fn check_range_restricted(c: &Clause) -> Result<(), PlpError> {
    let mut bound: HashSet<String> = HashSet::new();
    for item in &c.body {
        if let BodyItem::Atom(a) = item {
            bound.extend(a.variables().map(str::to_string));
        }
    }
    loop {
        let before = bound.len();
        for item in &c.body {
            let mut inputs = Vec::new();
            let output = match item {
                BodyItem::Is(v, e) => {
                    e.variables(&mut inputs);
                    Some(v.clone())
                }
                BodyItem::Between(lo, hi, Term::Var(x)) => {
                    lo.variables(&mut inputs);
                    hi.variables(&mut inputs);
                    Some(x.clone())
                }
                _ => None,
            };
            if let Some(out) = output {
                if inputs.iter().all(|v| bound.contains(v)) {
                    bound.insert(out);
                }
            }
        }
        if bound.len() == before {
            break;
        }
    }
    let mut needed: Vec<String> = c.head.variables().map(str::to_string).collect();
    for item in &c.body {
        match item {
            BodyItem::Atom(_) => {}
            BodyItem::Is(_, e) => e.variables(&mut needed),
            BodyItem::Compare(a, _, b) | BodyItem::Between(a, b, _) => {
                a.variables(&mut needed);
                b.variables(&mut needed);
            }
        }
    }
    match needed.into_iter().find(|v| !bound.contains(v)) {
        Some(var) => Err(PlpError::UnboundVariable { var, clause: c.head.to_string() }),
        None => Ok(()),
    }
}

/// Predicate signatures in an order where every clause's body predicates
/// precede its head predicate.
pub(crate) fn dependency_order(clauses: &[Clause]) -> Result<Vec<Signature>, PlpError> {
    let mut graph: DiGraph<Signature, ()> = DiGraph::new();
    let mut nodes = HashMap::new();
    let mut node = |g: &mut DiGraph<Signature, ()>, s: Signature| *nodes.entry(s.clone()).or_insert_with(|| g.add_node(s));
    for c in clauses {
        let h = node(&mut graph, c.head.signature());
        for item in &c.body {
            if let BodyItem::Atom(a) = item {
                let b = node(&mut graph, a.signature());
                if b == h {
                    return Err(PlpError::Recursion(c.head.signature().to_string()));
                }
                graph.add_edge(b, h, ());
            }
        }
    }
    toposort(&graph, None)
        .map(|order| order.into_iter().map(|n| graph[n].clone()).collect())
        .map_err(|cycle| PlpError::Recursion(graph[cycle.node_id()].to_string()))
}

fn check_acyclic(clauses: &[Clause]) -> Result<(), PlpError> {
    dependency_order(clauses).map(|_| ())
}

/// Parses a ground formula: literals joined by `,` (and) and `;` (or), with
/// `\+` or `not(...)` for negation.
pub fn parse_formula(text: &str) -> Result<Formula, PlpError> {
    let toks = lex(text)?;
    let eof = toks.last().map(|t| (t.line, t.col + 1)).unwrap_or((1, 1));
    let mut p = Parser { toks, pos: 0, anon: 0, eof };
    if p.peek().is_none() {
        return Ok(Formula::True);
    }
    let mut disjuncts = Vec::new();
    loop {
        let mut conj = Vec::new();
        loop {
            let lit = p.literal()?;
            let g = lit.atom.to_ground().ok_or_else(|| PlpError::NonGround(lit.atom.to_string()))?;
            let f = Formula::Atom(g);
            conj.push(if lit.positive { f } else { f.negate() });
            if p.is_sym(",") {
                p.pos += 1;
            } else {
                break;
            }
        }
        disjuncts.push(if conj.len() == 1 { conj.pop().unwrap() } else { Formula::And(conj) });
        if p.is_sym(";") {
            p.pos += 1;
        } else {
            break;
        }
    }
    if p.is_sym(".") {
        p.pos += 1;
    }
    if p.peek().is_some() {
        return p.err(format!("unexpected {}", p.describe()));
    }
    Ok(if disjuncts.len() == 1 { disjuncts.pop().unwrap() } else { Formula::Or(disjuncts) })
}

/// Parses evidence: a conjunction of ground literals.
pub fn parse_evidence(text: &str) -> Result<Evidence, PlpError> {
    fn literal(f: Formula) -> Option<(GroundAtom, bool)> {
        match f {
            Formula::Atom(a) => Some((a, true)),
            Formula::Not(inner) => match *inner {
                Formula::Atom(a) => Some((a, false)),
                _ => None,
            },
            _ => None,
        }
    }
    let literals = match parse_formula(text)? {
        Formula::True => Some(Vec::new()),
        Formula::And(parts) => parts.into_iter().map(literal).collect::<Option<Vec<_>>>(),
        other => literal(other).map(|l| vec![l]),
    }
    .ok_or_else(|| PlpError::InvalidEvidence(format!("'{text}' is not a conjunction of literals")))?;
    Ok(Evidence { literals })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_digit_addition_listing() {
        let text = "\
p1::digit(img,1,0); p2::digit(img,1,1).
p3::digit(img,2,0); p4::digit(img,2,1).

add(img,Z) :- digit(img,1,Y1),
              digit(img,2,Y2),
              Z is Y1 + Y2.
";
        let p = parse_program(text).unwrap();
        assert_eq!(p.disjunctions.len(), 2);
        assert_eq!(p.group_sizes(), vec![2, 2]);
        assert!(p.disjunctions.iter().all(|d| d.is_learned()));
        assert_eq!(p.clauses.len(), 1);
        assert_eq!(p.clauses[0].head.signature().to_string(), "add/2");
        let slots: Vec<usize> = p.disjunctions.iter().flat_map(|d| d.choices.iter().map(|c| c.slot)).collect();
        assert_eq!(slots, vec![0, 1, 2, 3]);
    }

    #[test]
    fn literal_probabilities_are_kept() {
        let p = parse_program("0.4::d(0); 0.6::d(1).").unwrap();
        assert_eq!(p.disjunctions[0].fixed_probabilities(), Some(vec![0.4, 0.6]));
        assert!(matches!(parse_program("::d(0)."), Err(PlpError::Syntax { line: 1, col: 1, .. })));
    }

    #[test]
    fn single_fact_gets_implicit_complement() {
        let p = parse_program("0.5::f. q :- f.").unwrap();
        assert_eq!(p.disjunctions.len(), 1);
        let d = &p.disjunctions[0];
        assert_eq!(d.choices.len(), 2);
        assert!(d.choices[1].atom.is_none());
        assert_eq!(d.fixed_probabilities(), Some(vec![0.5, 0.5]));
        assert_eq!(p.clauses.len(), 1);
    }

    #[test]
    fn self_loop_is_recursion() {
        assert!(matches!(parse_program("a :- a."), Err(PlpError::Recursion(s)) if s == "a/0"));
        assert!(matches!(parse_program("a :- b. b :- c. c :- a."), Err(PlpError::Recursion(_))));
    }

    #[test]
    fn unbound_head_variable_is_rejected() {
        let err = parse_program("nn::d(1); nn::d(2). q(X, Y) :- d(X).").unwrap_err();
        assert!(matches!(err, PlpError::UnboundVariable { ref var, .. } if var == "Y"));
        let err = parse_program("nn::d(1); nn::d(2). q(X) :- d(X), X < W.").unwrap_err();
        assert!(matches!(err, PlpError::UnboundVariable { ref var, .. } if var == "W"));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse_program("a :- b.\nc :- d(,).") {
            Err(PlpError::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 8)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_program("a :- b"), Err(PlpError::Syntax { .. })));
        assert!(matches!(parse_program("q :- \\+ r."), Err(PlpError::Syntax { .. })));
    }

    #[test]
    fn literal_probabilities_must_sum_to_one() {
        assert!(matches!(parse_program("0.3::a; 0.3::b."), Err(PlpError::InvalidProbabilities(_))));
        assert!(matches!(parse_program("1.5::a."), Err(PlpError::InvalidProbabilities(_))));
        assert!(matches!(parse_program("nn::a; 0.5::b."), Err(PlpError::InvalidProbabilities(_))));
    }

    #[test]
    fn directives_comments_and_arithmetic() {
        let text = "% header\nnn::d(a,0); nn::d(a,1). % trailing\n\
                    r(Z) :- d(a,X), between(0, 2, Y), Z is -X + Y ** 2 mod 3, Z =\\= 1.\n\
                    query(r(_)).\nevidence(d(a,1)).\nevidence(r(0), false).";
        let p = parse_program(text).unwrap();
        assert_eq!(p.queries.len(), 1);
        assert!(matches!(p.queries[0].args[0], Term::Var(_)));
        assert_eq!(p.evidence.literals.len(), 2);
        assert!(!p.evidence.literals[1].1);
        assert_eq!(p.clauses[0].body.len(), 4);
    }

    #[test]
    fn formulas_and_evidence() {
        let f = parse_formula("add(img,2)").unwrap();
        assert_eq!(f.clone(), Formula::Atom(GroundAtom { predicate: "add".into(), args: vec![Constant::Symbol("img".into()), Constant::Int(2)] }));
        assert!(matches!(parse_formula("a, \\+b ; c").unwrap(), Formula::Or(v) if v.len() == 2));
        assert!(matches!(parse_formula("a(X)"), Err(PlpError::NonGround(_))));
        assert_eq!(parse_formula("").unwrap(), Formula::True);
        let e = parse_evidence("add(img,2), not(digit(img,1,0))").unwrap();
        assert_eq!(e.literals.len(), 2);
        assert!(matches!(parse_evidence("a ; b"), Err(PlpError::InvalidEvidence(_))));
    }
}
