use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, SourceDigits, DIGIT_SIDE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Split::ALL.into_iter().find(|x| x.as_str() == s).ok_or_else(|| format!("unknown split '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    /// 65/20/15 for the full ten digits, 80/10/10 for restricted digit sets.
    pub fn for_digits(n: usize) -> Self {
        if n >= 10 {
            Self { train: 0.65, val: 0.20, test: 0.15 }
        } else {
            Self { train: 0.80, val: 0.10, test: 0.10 }
        }
    }

    fn get(&self, s: Split) -> f64 {
        match s {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// Label semantics over an ordered digit pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Add,
    Mul,
    Sub,
    /// `left ^ right`, with `0 ^ 0 = 1`.
    Pow,
}

impl Task {
    pub const ALL: [Task; 4] = [Task::Add, Task::Mul, Task::Sub, Task::Pow];

    pub fn apply(self, left: u8, right: u8) -> i64 {
        let (a, b) = (left as i64, right as i64);
        match self {
            Task::Add => a + b,
            Task::Mul => a * b,
            Task::Sub => a - b,
            Task::Pow => a.pow(b as u32),
        }
    }

    pub fn predicate(self) -> &'static str {
        match self {
            Task::Add => "add",
            Task::Mul => "mul",
            Task::Sub => "sub",
            Task::Pow => "pow",
        }
    }

    fn operator(self) -> &'static str {
        match self {
            Task::Add => "+",
            Task::Mul => "*",
            Task::Sub => "-",
            Task::Pow => "^",
        }
    }

    /// The two-position program for this task over `digits`.
    pub fn program(self, digits: &[u8]) -> String {
        let mut s = String::new();
        for pos in 1..=2 {
            let choices: Vec<String> = digits.iter().map(|d| format!("nn::digit(img,{pos},{d})")).collect();
            s.push_str(&choices.join("; "));
            s.push_str(".\n");
        }
        let p = self.predicate();
        s.push_str(&format!(
            "\n{p}(img,Z) :- digit(img,1,Y1),\n{pad}digit(img,2,Y2),\n{pad}Z is Y1 {op} Y2.\n\nquery({p}(img,_)).\n",
            pad = " ".repeat(p.len() + 10),
            op = self.operator()
        ));
        s
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.predicate())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "add" | "addition" => Ok(Task::Add),
            "mul" | "multiplication" => Ok(Task::Mul),
            "sub" | "subtraction" => Ok(Task::Sub),
            "pow" | "power" => Ok(Task::Pow),
            _ => Err(format!("unknown task '{s}'")),
        }
    }
}

/// Two source digits side by side; `left` and `right` index the source set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairRecord {
    pub left: usize,
    pub right: usize,
    pub left_digit: u8,
    pub right_digit: u8,
    pub split: Split,
}

impl PairRecord {
    pub fn sum(&self) -> i64 {
        Task::Add.apply(self.left_digit, self.right_digit)
    }

    pub fn label(&self, task: Task) -> i64 {
        task.apply(self.left_digit, self.right_digit)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairDataset {
    /// Sorted digit set `D`.
    pub digits: Vec<u8>,
    pub records: Vec<PairRecord>,
}

impl PairDataset {
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len()).filter(|&i| self.records[i].split == split).collect()
    }

    /// 28x56 image of record `i`.
    pub fn image(&self, source: &SourceDigits, i: usize) -> Vec<f64> {
        let r = &self.records[i];
        concat_pair(source.image(r.left), source.image(r.right))
    }

    fn digit_position(&self, d: u8) -> usize {
        self.digits.iter().position(|&x| x == d).expect("digit in set")
    }

    fn train_by_pair(&self) -> Vec<Vec<usize>> {
        let n = self.digits.len();
        let mut by_pair = vec![Vec::new(); n * n];
        for (i, r) in self.records.iter().enumerate() {
            if r.split == Split::Train {
                by_pair[self.digit_position(r.left_digit) * n + self.digit_position(r.right_digit)].push(i);
            }
        }
        by_pair
    }
}

/// Horizontal concatenation of two 28x28 digits.
pub fn concat_pair(left: &[f64], right: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * left.len());
    for r in 0..DIGIT_SIDE {
        out.extend_from_slice(&left[r * DIGIT_SIDE..(r + 1) * DIGIT_SIDE]);
        out.extend_from_slice(&right[r * DIGIT_SIDE..(r + 1) * DIGIT_SIDE]);
    }
    out
}

struct Pool {
    items: Vec<usize>,
    next: usize,
}

impl Pool {
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> usize {
        if self.next < self.items.len() {
            self.next += 1;
            self.items[self.next - 1]
        } else {
            self.items[rng.random_range(0..self.items.len())]
        }
    }
}

fn check_digits(digits: &[u8]) -> Result<Vec<u8>, DataError> {
    let mut d = digits.to_vec();
    d.sort_unstable();
    d.dedup();
    if d.is_empty() || d.len() != digits.len() || d.iter().any(|&x| x > 9) {
        return Err(DataError::Digits(format!("{digits:?}")));
    }
    Ok(d)
}

/// Samples `count` uniformly random ordered pairs over `digits`.
///
/// Source images of each digit are shuffled and partitioned into train, val
/// and test pools with the same fractions as the pairs, so no source image is
/// shared between splits. Within a pool, images are used without replacement
/// until it is exhausted and with replacement afterwards.
pub fn build_pairs(
    source: &SourceDigits,
    count: usize,
    digits: &[u8],
    seed: u64,
    fractions: SplitFractions,
) -> Result<PairDataset, DataError> {
    let digits = check_digits(digits)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pools: Vec<[Pool; 3]> = Vec::new();
    for &d in &digits {
        let mut idx: Vec<usize> = (0..source.len()).filter(|&i| source.labels[i] == d).collect();
        idx.shuffle(&mut rng);
        let n_train = (idx.len() as f64 * fractions.train).floor() as usize;
        let n_val = (idx.len() as f64 * fractions.val).floor() as usize;
        let test = idx.split_off(n_train + n_val);
        let val = idx.split_off(n_train);
        let pool = [Pool { items: idx, next: 0 }, Pool { items: val, next: 0 }, Pool { items: test, next: 0 }];
        for (p, s) in pool.iter().zip(Split::ALL) {
            if p.items.is_empty() && fractions.get(s) > 0.0 {
                return Err(DataError::InsufficientImages { digit: d, split: s.as_str() });
            }
        }
        pools.push(pool);
    }
    let n_train = (count as f64 * fractions.train).round() as usize;
    let n_val = ((count as f64 * fractions.val).round() as usize).min(count - n_train);
    let sizes = [n_train, n_val, count - n_train - n_val];
    let mut records = Vec::with_capacity(count);
    for (si, split) in Split::ALL.into_iter().enumerate() {
        for _ in 0..sizes[si] {
            let (a, b) = (rng.random_range(0..digits.len()), rng.random_range(0..digits.len()));
            let left = pools[a][si].draw(&mut rng);
            let right = pools[b][si].draw(&mut rng);
            records.push(PairRecord { left, right, left_digit: digits[a], right_digit: digits[b], split });
        }
    }
    Ok(PairDataset { digits, records })
}

/// For each size `s`, the first `s` training records of every ordered pair.
/// Larger subsets contain the smaller ones.
pub fn data_efficiency_splits(ds: &PairDataset, sizes: &[usize]) -> Result<Vec<Vec<usize>>, DataError> {
    let by_pair = ds.train_by_pair();
    let n = ds.digits.len();
    let mut out = Vec::new();
    for &s in sizes {
        let mut subset = Vec::with_capacity(s * n * n);
        for (k, recs) in by_pair.iter().enumerate() {
            if recs.len() < s {
                return Err(DataError::Underrepresented {
                    left: ds.digits[k / n],
                    right: ds.digits[k % n],
                    needed: s,
                    found: recs.len(),
                });
            }
            subset.extend_from_slice(&recs[..s]);
        }
        subset.sort_unstable();
        out.push(subset);
    }
    Ok(out)
}

/// The first training record of every ordered pair, in pair order.
pub fn supervision_subset(ds: &PairDataset) -> Result<Vec<usize>, DataError> {
    let n = ds.digits.len();
    ds.train_by_pair()
        .iter()
        .enumerate()
        .map(|(k, recs)| {
            recs.first().copied().ok_or(DataError::Underrepresented {
                left: ds.digits[k / n],
                right: ds.digits[k % n],
                needed: 1,
                found: 0,
            })
        })
        .collect()
}

const MANIFEST_HEADER: [&str; 6] = ["filename_or_offset", "left_digit", "right_digit", "sum", "split", "supervised_flag"];

/// One row per record; `filename_or_offset` holds the two source offsets as `left:right`.
pub fn write_manifest(ds: &PairDataset, supervised: &[usize], w: impl Write) -> Result<(), DataError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(MANIFEST_HEADER)?;
    let mut flags = vec![false; ds.records.len()];
    for &i in supervised {
        flags[i] = true;
    }
    for (r, flag) in ds.records.iter().zip(flags) {
        out.write_record([
            format!("{}:{}", r.left, r.right),
            r.left_digit.to_string(),
            r.right_digit.to_string(),
            r.sum().to_string(),
            r.split.as_str().to_string(),
            (flag as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Inverse of [`write_manifest`]; `D` is the set of digits present.
pub fn read_manifest(r: impl Read) -> Result<(PairDataset, Vec<usize>), DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut records = Vec::new();
    let mut supervised = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let bad = |message: String| DataError::Manifest { line, message };
        if row.len() != 6 {
            return Err(bad(format!("expected 6 fields, found {}", row.len())));
        }
        let (l, rr) = row[0].split_once(':').ok_or_else(|| bad(format!("bad offset '{}'", &row[0])))?;
        let num = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("'{s}': {e}")));
        let digit = |s: &str| s.parse::<u8>().ok().filter(|d| *d <= 9).ok_or_else(|| bad(format!("bad digit '{s}'")));
        let rec = PairRecord {
            left: num(l)?,
            right: num(rr)?,
            left_digit: digit(&row[1])?,
            right_digit: digit(&row[2])?,
            split: row[4].parse().map_err(bad)?,
        };
        if row[3].parse::<i64>().ok() != Some(rec.sum()) {
            return Err(bad(format!("sum {} does not match digits", &row[3])));
        }
        match &row[5] {
            "1" => supervised.push(records.len()),
            "0" => {}
            other => return Err(bad(format!("bad supervised flag '{other}'"))),
        }
        records.push(rec);
    }
    let mut digits: Vec<u8> = records.iter().flat_map(|r| [r.left_digit, r.right_digit]).collect();
    digits.sort_unstable();
    digits.dedup();
    Ok((PairDataset { digits, records }, supervised))
}
