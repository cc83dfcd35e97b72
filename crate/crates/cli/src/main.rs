use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use vael::data::{
    build_pairs, data_efficiency_splits, load_source, read_manifest, read_pgm, supervision_subset, write_manifest,
    write_pgm, GrayImage, PairDataset, SourceDigits, Split, SplitFractions, Task, DIGIT_SIDE,
};
use vael::eval::{
    class_accuracy, generative_accuracy, reconstruction_metric, ClassifierConfig, ConditionalGenerator, EvalClassifier,
    EvalError, ModelGenerator,
};
use vael::model::{program_hash, LoadedModel, VaelModel};
use vael::plp::{parse_evidence, Constant};
use vael::training::{examples, read_history, write_history, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "vael", version, about = "Train and query a VAE whose symbolic code drives a probabilistic logic program")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a paired-digit dataset manifest from IDX source files.
    MakeData(MakeData),
    /// Train a model on a dataset directory.
    Train(Train),
    /// Report m_REC, m_CLASS and m_GEN on held-out data.
    Eval(Eval),
    /// Sample images, optionally conditioned on evidence.
    Generate(Generate),
    /// Label distributions for 28x56 PGM images.
    Classify(Classify),
    /// Label accuracy after replacing the program, without retraining.
    SwapEval(SwapEval),
}

fn bundled(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

#[derive(Args)]
struct MakeData {
    #[arg(long)]
    images: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "0,1,2,3,4,5,6,7,8,9", value_delimiter = ',')]
    digits: Vec<u8>,
    /// Training records kept for each ordered digit pair.
    #[arg(long, default_value_t = 100)]
    per_pair: usize,
    /// Total pairs sampled before subsetting; derived from `per-pair` when absent.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "add")]
    task: Task,
    /// Program text; generated from the task and digit set when absent.
    #[arg(long)]
    program: Option<PathBuf>,
    /// Continue from the checkpoint in `out` if one exists.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Generated images per conditioning label.
    #[arg(long, default_value_t = 100)]
    n_samples: usize,
    /// Conditioning label values; all labels when absent.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<i64>>,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct Generate {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    n_samples: usize,
    #[arg(long)]
    evidence: Option<String>,
    #[arg(long)]
    program: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Classify {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    program: Option<PathBuf>,
    #[arg(required = true)]
    images: Vec<PathBuf>,
}

#[derive(Args)]
struct SwapEval {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DataInfo {
    images: PathBuf,
    labels: PathBuf,
    digits: Vec<u8>,
    per_pair: usize,
    pairs: usize,
    seed: u64,
    manifest_sha256: String,
}

struct DataDir {
    info: DataInfo,
    source: SourceDigits,
    dataset: PairDataset,
    supervised: Vec<usize>,
}

fn load_data(dir: &Path) -> Result<DataDir> {
    let info_path = dir.join("data.toml");
    let info: DataInfo = toml::from_str(&fs::read_to_string(&info_path).with_context(|| info_path.display().to_string())?)
        .with_context(|| format!("parsing {}", info_path.display()))?;
    let manifest = fs::read_to_string(dir.join("manifest.csv")).context("reading manifest.csv")?;
    if program_hash(&manifest) != info.manifest_sha256 {
        bail!("manifest.csv in {} does not match the hash recorded in data.toml", dir.display());
    }
    let (dataset, supervised) = read_manifest(manifest.as_bytes())?;
    let source = load_source(&info.images, &info.labels)?;
    if let Some(r) = dataset.records.iter().find(|r| r.left.max(r.right) >= source.len()) {
        bail!("manifest refers to source image {} but the source has {}", r.left.max(r.right), source.len());
    }
    Ok(DataDir { info, source, dataset, supervised })
}

fn make_data(a: MakeData) -> Result<()> {
    let images = a.images.unwrap_or_else(|| bundled("mnist5k-images-idx3-ubyte.gz"));
    let labels = a.labels.unwrap_or_else(|| bundled("mnist5k-labels-idx1-ubyte.gz"));
    let source = load_source(&images, &labels)?;
    let n = a.digits.len();
    let fractions = SplitFractions::for_digits(n);
    let k = a.per_pair as f64;
    let pairs = a.pairs.unwrap_or(((k + 4.0 * k.sqrt() + 5.0) * (n * n) as f64 / fractions.train).ceil() as usize);
    let full = build_pairs(&source, pairs, &a.digits, a.seed, fractions)?;
    let subset: BTreeSet<usize> = data_efficiency_splits(&full, &[a.per_pair])?.remove(0).into_iter().collect();
    let sup: BTreeSet<usize> = supervision_subset(&full)?.into_iter().collect();
    let keep: Vec<usize> =
        (0..full.records.len()).filter(|&i| full.records[i].split != Split::Train || subset.contains(&i)).collect();
    let dataset = PairDataset { digits: full.digits.clone(), records: keep.iter().map(|&i| full.records[i]).collect() };
    let supervised: Vec<usize> = keep.iter().enumerate().filter(|(_, i)| sup.contains(i)).map(|(j, _)| j).collect();

    fs::create_dir_all(&a.out)?;
    let mut manifest = Vec::new();
    write_manifest(&dataset, &supervised, &mut manifest)?;
    fs::write(a.out.join("manifest.csv"), &manifest)?;
    let info = DataInfo {
        images: fs::canonicalize(&images)?,
        labels: fs::canonicalize(&labels)?,
        digits: dataset.digits.clone(),
        per_pair: a.per_pair,
        pairs,
        seed: a.seed,
        manifest_sha256: program_hash(std::str::from_utf8(&manifest)?),
    };
    fs::write(a.out.join("data.toml"), toml::to_string(&info)?)?;
    let count = |s| dataset.indices(s).len();
    println!(
        "wrote {}: train {}, val {}, test {}, supervised {}",
        a.out.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        supervised.len()
    );
    Ok(())
}

/// The task whose predicate names the query of `model`'s program.
fn task_of(model: &VaelModel) -> Result<Task> {
    let atom = model.labels().atoms.first().context("program has no query")?;
    let name = &model.program().atom(*atom).predicate;
    name.parse::<Task>().map_err(|_| anyhow::anyhow!("query predicate '{name}' is not one of add, mul, sub, pow"))
}

fn train(a: Train) -> Result<()> {
    let data = load_data(&a.data)?;
    let mut config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        config.seed = s;
    }
    fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join("model.vael");
    config.checkpoint = Some(ckpt.clone());
    let program = match &a.program {
        Some(p) => fs::read_to_string(p).with_context(|| p.display().to_string())?,
        None => a.task.program(&data.dataset.digits),
    };
    let model = VaelModel::new(config.model.clone(), &program, config.seed)?;
    let task = task_of(&model)?;
    let ds = &data.dataset;
    let train = examples(&model, &data.source, ds, &ds.indices(Split::Train), task, &data.supervised)?;
    let val = examples(&model, &data.source, ds, &ds.indices(Split::Val), task, &[])?;
    fs::write(a.out.join("config.toml"), config.to_text())?;
    fs::write(a.out.join("program.pl"), &program)?;
    let mut trainer = if a.resume && ckpt.exists() {
        log::info!("resuming from {}", ckpt.display());
        Trainer::resume(&ckpt, config, train, val)?
    } else {
        Trainer::new(model, config, train, val)?
    };
    trainer.run()?;
    let mut history = Vec::new();
    write_history(&trainer.state().history, &mut history)?;
    fs::write(a.out.join("history.csv"), history)?;
    let last = trainer.state().history.last().context("no epochs were run")?;
    println!(
        "trained {} epochs ({} steps); final val m_CLASS {}; checkpoint {}",
        last.epoch,
        last.step,
        last.val_class_acc.map_or("n/a".to_string(), |v| format!("{v:.4}")),
        ckpt.display()
    );
    Ok(())
}

/// Restricts a generator to a subset of its labels.
struct Subset<G> {
    inner: G,
    labels: Vec<usize>,
}

impl<G: ConditionalGenerator> ConditionalGenerator for Subset<G> {
    fn num_labels(&self) -> usize {
        self.labels.len()
    }

    fn label_value(&self, label: usize) -> Constant {
        self.inner.label_value(self.labels[label])
    }

    fn generate_label(&mut self, label: usize, rng: &mut dyn RngCore) -> Result<Vec<f64>, EvalError> {
        self.inner.generate_label(self.labels[label], rng)
    }
}

fn load_model(path: &Path, program: Option<&str>) -> Result<LoadedModel> {
    let loaded = VaelModel::load(path, program).with_context(|| format!("loading {}", path.display()))?;
    if let Some(note) = &loaded.hash_mismatch {
        log::warn!("{note}");
    }
    Ok(loaded)
}

fn eval(a: Eval) -> Result<()> {
    let data = load_data(&a.data)?;
    let loaded = load_model(&a.checkpoint, None)?;
    let model = &loaded.model;
    let task = task_of(model)?;
    let ds = &data.dataset;
    let held = examples(model, &data.source, ds, &ds.indices(a.split), task, &[])?;
    let m_rec = reconstruction_metric(model, &held)?;
    let m_class = class_accuracy(model, &held)?;
    let labels = match &a.labels {
        Some(values) => values
            .iter()
            .map(|&v| model.labels().position(&Constant::Int(v)).with_context(|| format!("label {v} is not a query value")))
            .collect::<Result<Vec<_>>>()?,
        None => (0..model.labels().len()).collect(),
    };
    let clf = EvalClassifier::train(&data.source, &ds.digits, &ClassifierConfig { seed: a.seed, ..Default::default() })?;
    let mut gen = Subset { inner: ModelGenerator { model }, labels };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let m_gen = match generative_accuracy(&mut gen, &clf, task, a.n_samples, &mut rng) {
        Ok(acc) => Ok(acc),
        Err(e @ EvalError::ClassifierGate { .. }) => Err(e.to_string()),
        Err(e) => return Err(e.into()),
    };

    let mut r = String::new();
    let container_meta = |k: &str| loaded.container.meta(k).map(str::to_string);
    writeln!(r, "checkpoint = {:?}", a.checkpoint.display().to_string())?;
    writeln!(r, "program_sha256 = {:?}", container_meta("program_sha256").unwrap_or_default())?;
    writeln!(r, "manifest_sha256 = {:?}", data.info.manifest_sha256)?;
    writeln!(r, "task = {:?}", task.predicate())?;
    writeln!(r, "split = {:?}", a.split.as_str())?;
    writeln!(r, "seed = {}", a.seed)?;
    writeln!(r, "m_rec = {m_rec}")?;
    writeln!(r, "m_class = {}", m_class.value)?;
    writeln!(r, "m_class_half_width = {}", m_class.half_width)?;
    writeln!(r, "m_class_samples = {}", m_class.samples)?;
    writeln!(r, "classifier_holdout_accuracy = {}", clf.holdout_accuracy())?;
    match &m_gen {
        Ok(g) => {
            writeln!(r, "m_gen = {}", g.value)?;
            writeln!(r, "m_gen_half_width = {}", g.half_width)?;
            writeln!(r, "m_gen_samples = {}", g.samples)?;
        }
        Err(note) => writeln!(r, "m_gen_refused = {note:?}")?,
    }
    print!("{r}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("report.txt"), &r)?;
        if let Some(h) = container_meta("train.history") {
            let rows = read_history(vael::model::unescape_meta(&h).as_bytes())?;
            let mut buf = Vec::new();
            write_history(&rows, &mut buf)?;
            fs::write(out.join("history.csv"), buf)?;
        }
    }
    Ok(())
}

fn swap_in(model: VaelModel, program: Option<&Path>) -> Result<VaelModel> {
    match program {
        Some(p) => Ok(model.swap_program(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?),
        None => Ok(model),
    }
}

fn generate(a: Generate) -> Result<()> {
    let model = swap_in(load_model(&a.checkpoint, None)?.model, a.program.as_deref())?;
    let evidence = match &a.evidence {
        Some(text) => parse_evidence(text)?,
        None => Default::default(),
    };
    fs::create_dir_all(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut manifest = String::from("filename,choices,label\n");
    for i in 0..a.n_samples {
        let g = model.conditional_generate(&evidence, &mut rng)?;
        let name = format!("sample_{i:04}.pgm");
        write_pgm(&GrayImage { width: 2 * DIGIT_SIDE, height: DIGIT_SIDE, pixels: g.image }, &a.out.join(&name))?;
        let choices: Vec<String> = g.choices.iter().map(usize::to_string).collect();
        let labels: Vec<String> = g.labels.iter().map(|&k| model.labels().values[k].to_string()).collect();
        writeln!(manifest, "{name},{},{}", choices.join(" "), labels.join(" "))?;
    }
    fs::write(a.out.join("manifest.csv"), manifest)?;
    println!("wrote {} images to {}", a.n_samples, a.out.display());
    Ok(())
}

fn classify(a: Classify) -> Result<()> {
    let model = swap_in(load_model(&a.checkpoint, None)?.model, a.program.as_deref())?;
    let values: Vec<String> = model.labels().values.iter().map(|v| v.to_string()).collect();
    println!("file,label,{}", values.iter().map(|v| format!("p_{v}")).collect::<Vec<_>>().join(","));
    for path in &a.images {
        let img = read_pgm(path)?;
        if (img.width, img.height) != (2 * DIGIT_SIDE, DIGIT_SIDE) {
            bail!("{}: expected {}x{}, found {}x{}", path.display(), 2 * DIGIT_SIDE, DIGIT_SIDE, img.width, img.height);
        }
        let dist = model.classify(&img.pixels)?.remove(0);
        let best = (0..dist.len()).max_by(|&x, &y| dist[x].total_cmp(&dist[y])).context("no labels")?;
        let probs: Vec<String> = dist.iter().map(|p| format!("{p:.6}")).collect();
        println!("{},{},{}", path.display(), values[best], probs.join(","));
    }
    Ok(())
}

fn swap_eval(a: SwapEval) -> Result<()> {
    let data = load_data(&a.data)?;
    let original = load_model(&a.checkpoint, None)?.model;
    let swapped = swap_in(original.clone(), Some(&a.program))?;
    let ds = &data.dataset;
    let idx = ds.indices(a.split);
    let mut r = String::new();
    for (name, model) in [("original", &original), ("swapped", &swapped)] {
        let task = task_of(model)?;
        let acc = class_accuracy(model, &examples(model, &data.source, ds, &idx, task, &[])?)?;
        writeln!(r, "{name}_task = {:?}", task.predicate())?;
        writeln!(r, "{name}_m_class = {}", acc.value)?;
        writeln!(r, "{name}_m_class_half_width = {}", acc.half_width)?;
    }
    writeln!(r, "split = {:?}", a.split.as_str())?;
    writeln!(r, "manifest_sha256 = {:?}", data.info.manifest_sha256)?;
    print!("{r}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("swap_report.txt"), &r)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::MakeData(a) => make_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Generate(a) => generate(a),
        Command::Classify(a) => classify(a),
        Command::SwapEval(a) => swap_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
