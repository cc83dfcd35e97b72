//! Random program generator and a naive reference enumerator that shares no
//! code with the engine.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::Rng;

#[derive(Clone, Debug)]
pub enum Arg {
    Var(char),
    Int(i64),
}

#[derive(Clone, Debug)]
pub enum Constraint {
    Lt(char, char),
    Eq(char, char),
    /// `w is x + y`
    Sum(char, char, char),
}

#[derive(Clone, Debug)]
pub struct RefClause {
    pub head: (String, Arg),
    pub body: Vec<(String, Arg)>,
    pub constraints: Vec<Constraint>,
}

/// Unary predicates throughout. A group entry of `None` is the implicit
/// "no atom" alternative of a single probabilistic fact.
#[derive(Clone, Debug)]
pub struct RefProgram {
    pub groups: Vec<Vec<Option<(String, i64)>>>,
    pub clauses: Vec<RefClause>,
}

pub type Fact = (String, i64);

#[derive(Clone, Debug)]
pub enum RefQuery {
    Atom(Fact),
    Not(Box<RefQuery>),
    And(Box<RefQuery>, Box<RefQuery>),
    Or(Box<RefQuery>, Box<RefQuery>),
}

fn show_arg(a: &Arg) -> String {
    match a {
        Arg::Var(c) => c.to_string(),
        Arg::Int(i) => i.to_string(),
    }
}

impl RefProgram {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for g in &self.groups {
            let parts: Vec<String> = g
                .iter()
                .flatten()
                .map(|(p, v)| format!("nn::{p}({v})"))
                .collect();
            s.push_str(&parts.join("; "));
            s.push_str(".\n");
        }
        for c in &self.clauses {
            let mut body: Vec<String> = c.body.iter().map(|(p, a)| format!("{p}({})", show_arg(a))).collect();
            for k in &c.constraints {
                body.push(match k {
                    Constraint::Lt(a, b) => format!("{a} < {b}"),
                    Constraint::Eq(a, b) => format!("{a} =:= {b}"),
                    Constraint::Sum(w, a, b) => format!("{w} is {a} + {b}"),
                });
            }
            s.push_str(&format!("{}({}) :- {}.\n", c.head.0, show_arg(&c.head.1), body.join(", ")));
        }
        s
    }
}

impl RefQuery {
    pub fn to_text(&self) -> String {
        match self {
            RefQuery::Atom((p, v)) => format!("{p}({v})"),
            RefQuery::Not(q) => match q.as_ref() {
                RefQuery::Atom(_) => format!("\\+{}", q.to_text()),
                _ => unreachable!("negation only wraps atoms"),
            },
            RefQuery::And(a, b) => format!("{}, {}", a.to_text(), b.to_text()),
            RefQuery::Or(a, b) => format!("{} ; {}", a.to_text(), b.to_text()),
        }
    }

    fn holds(&self, world: &BTreeSet<Fact>) -> bool {
        match self {
            RefQuery::Atom(f) => world.contains(f),
            RefQuery::Not(q) => !q.holds(world),
            RefQuery::And(a, b) => a.holds(world) && b.holds(world),
            RefQuery::Or(a, b) => a.holds(world) || b.holds(world),
        }
    }
}

/// Generates a random acyclic program: at most 3 groups of 2 to 4 choices
/// and at most 5 clauses.
pub fn random_program<R: Rng>(rng: &mut R) -> RefProgram {
    let n_groups = rng.random_range(1..=3);
    let mut groups = Vec::new();
    for g in 0..n_groups {
        let pred = format!("a{g}");
        if rng.random_bool(0.2) {
            groups.push(vec![Some((pred, rng.random_range(0..4))), None]);
            continue;
        }
        let n = rng.random_range(2..=4);
        let mut values: Vec<i64> = (0..5).collect();
        for i in (1..values.len()).rev() {
            values.swap(i, rng.random_range(0..=i));
        }
        groups.push(values[..n].iter().map(|&v| Some((pred.clone(), v))).collect());
    }
    let n_clauses: usize = rng.random_range(0..=5);
    let mut clauses = Vec::new();
    let mut preds: Vec<String> = (0..n_groups).map(|g| format!("a{g}")).collect();
    for k in 0..n_clauses {
        // Head d_h may only depend on groups and on d_j with j < h.
        let h = rng.random_range(k.saturating_sub(1)..=k);
        let head_pred = format!("d{h}");
        let available: Vec<String> = preds
            .iter()
            .filter(|p| p.starts_with('a') || p[1..].parse::<usize>().unwrap() < h)
            .cloned()
            .collect();
        let vars = ['X', 'Y', 'Z'];
        let n_body = rng.random_range(1..=3);
        let mut body = Vec::new();
        for i in 0..n_body {
            let p = available[rng.random_range(0..available.len())].clone();
            let arg = if rng.random_bool(0.15) {
                Arg::Int(rng.random_range(0..4))
            } else {
                Arg::Var(vars[rng.random_range(0..=i)])
            };
            body.push((p, arg));
        }
        let mut bound: Vec<char> = body
            .iter()
            .filter_map(|(_, a)| match a {
                Arg::Var(c) => Some(*c),
                Arg::Int(_) => None,
            })
            .collect();
        bound.sort_unstable();
        bound.dedup();
        let mut constraints = Vec::new();
        let mut head_vars = bound.clone();
        if bound.len() >= 2 {
            let (x, y) = (bound[0], bound[1]);
            match rng.random_range(0..4) {
                0 => constraints.push(Constraint::Lt(x, y)),
                1 => constraints.push(Constraint::Eq(x, y)),
                2 => {
                    constraints.push(Constraint::Sum('W', x, y));
                    head_vars = vec!['W'];
                }
                _ => {}
            }
        }
        let head_arg = if head_vars.is_empty() || rng.random_bool(0.1) {
            Arg::Int(rng.random_range(0..3))
        } else {
            Arg::Var(head_vars[rng.random_range(0..head_vars.len())])
        };
        clauses.push(RefClause { head: (head_pred.clone(), head_arg), body, constraints });
        if !preds.contains(&head_pred) {
            preds.push(head_pred);
        }
    }
    RefProgram { groups, clauses }
}

/// Every fact that can appear in some world: used to draw queries.
pub fn mentioned_facts(p: &RefProgram) -> Vec<Fact> {
    let mut all = BTreeSet::new();
    for choice in each_world(p) {
        all.extend(closure(p, &choice));
    }
    all.into_iter().collect()
}

pub fn random_query<R: Rng>(rng: &mut R, p: &RefProgram) -> RefQuery {
    let mut facts = mentioned_facts(p);
    facts.push(("a0".into(), 9));
    let atom = |rng: &mut R| RefQuery::Atom(facts[rng.random_range(0..facts.len())].clone());
    match rng.random_range(0..5) {
        0 => RefQuery::Not(Box::new(atom(rng))),
        1 => RefQuery::And(Box::new(atom(rng)), Box::new(atom(rng))),
        2 => RefQuery::Or(Box::new(atom(rng)), Box::new(atom(rng))),
        _ => atom(rng),
    }
}

/// Random probabilities per group, occasionally with exact zeros.
pub fn random_probabilities<R: Rng>(rng: &mut R, p: &RefProgram) -> Vec<Vec<f64>> {
    p.groups
        .iter()
        .map(|g| {
            let raw: Vec<f64> = g
                .iter()
                .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.01..1.0) })
                .collect();
            let s: f64 = raw.iter().sum();
            if s == 0.0 {
                vec![1.0 / g.len() as f64; g.len()]
            } else {
                raw.iter().map(|v| v / s).collect()
            }
        })
        .collect()
}

fn each_world(p: &RefProgram) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for g in &p.groups {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..g.len()).map(move |c| {
                    let mut v = prefix.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    out
}

/// Naive fixpoint: apply every clause to the whole set until nothing changes.
pub fn closure(p: &RefProgram, choice: &[usize]) -> BTreeSet<Fact> {
    let mut set: BTreeSet<Fact> = p
        .groups
        .iter()
        .zip(choice)
        .filter_map(|(g, &c)| g[c].clone())
        .collect();
    loop {
        let mut new = Vec::new();
        for c in &p.clauses {
            let mut env: Vec<(char, i64)> = Vec::new();
            matches(c, 0, &set, &mut env, &mut new);
        }
        let before = set.len();
        set.extend(new);
        if set.len() == before {
            return set;
        }
    }
}

fn lookup(env: &[(char, i64)], v: char) -> Option<i64> {
    env.iter().find(|(c, _)| *c == v).map(|(_, x)| *x)
}

fn matches(c: &RefClause, i: usize, set: &BTreeSet<Fact>, env: &mut Vec<(char, i64)>, out: &mut Vec<Fact>) {
    if i == c.body.len() {
        let mut env = env.clone();
        for k in &c.constraints {
            match *k {
                Constraint::Lt(a, b) => {
                    if lookup(&env, a).unwrap() >= lookup(&env, b).unwrap() {
                        return;
                    }
                }
                Constraint::Eq(a, b) => {
                    if lookup(&env, a).unwrap() != lookup(&env, b).unwrap() {
                        return;
                    }
                }
                Constraint::Sum(w, a, b) => {
                    let s = lookup(&env, a).unwrap() + lookup(&env, b).unwrap();
                    env.push((w, s));
                }
            }
        }
        let v = match c.head.1 {
            Arg::Int(v) => v,
            Arg::Var(x) => lookup(&env, x).unwrap(),
        };
        out.push((c.head.0.clone(), v));
        return;
    }
    let (pred, arg) = &c.body[i];
    for (q, v) in set.iter() {
        if q != pred {
            continue;
        }
        match arg {
            Arg::Int(k) => {
                if k == v {
                    matches(c, i + 1, set, env, out);
                }
            }
            Arg::Var(x) => match lookup(env, *x) {
                Some(b) if b != *v => {}
                Some(_) => matches(c, i + 1, set, env, out),
                None => {
                    env.push((*x, *v));
                    matches(c, i + 1, set, env, out);
                    env.pop();
                }
            },
        }
    }
}

/// Brute-force success probability.
pub fn reference_success(p: &RefProgram, probs: &[Vec<f64>], q: &RefQuery) -> f64 {
    let mut total = 0.0;
    for choice in each_world(p) {
        if q.holds(&closure(p, &choice)) {
            total += choice.iter().enumerate().map(|(g, &c)| probs[g][c]).product::<f64>();
        }
    }
    total
}
