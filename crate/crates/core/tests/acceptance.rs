//! End-to-end acceptance checks. Each test prints one `criterion N PASS|FAIL`
//! line to stderr, uncaptured, before asserting.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vael::autodiff::Tape;
use vael::data::{
    build_pairs, data_efficiency_splits, load_source, parse_idx_images, parse_idx_labels, read_maybe_gz,
    supervision_subset, PairDataset, SourceDigits, Split, SplitFractions, Task,
};
use vael::eval::{class_accuracy, generative_accuracy, Accuracy, ClassifierConfig, EvalClassifier, ModelGenerator};
use vael::model::ops::{gumbel_softmax_sample, kl_divergence};
use vael::model::{gumbel, Architecture, Batch, GaussianPosterior, ModelConfig, Noise, VaelModel};
use vael::plp::{
    entails, evidence_conditional, ground, parse_evidence, parse_formula, parse_program, success_gradient,
    success_probability, world_probability, Evidence, FactProbabilities, GroundProgram, PlpError,
};
use vael::training::{examples, TrainConfig, Trainer};

fn verdict(n: u32, title: &str, pass: bool, detail: String) {
    let line = format!("criterion {n:>2} {} {title}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{line}");
}

fn grounded(text: &str) -> GroundProgram {
    ground(&parse_program(text).unwrap()).unwrap()
}

fn random_simplex(rng: &mut ChaCha8Rng, sizes: &[usize]) -> FactProbabilities {
    let mut v = Vec::new();
    for &n in sizes {
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0f64).exp()).collect();
        let s: f64 = raw.iter().sum();
        v.extend(raw.iter().map(|x| x / s));
    }
    FactProbabilities::new(v, sizes).unwrap()
}

#[test]
fn criterion_01_inference_matches_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let prog = common::random_program(&mut rng);
        let gp = grounded(&prog.to_text());
        let probs = common::random_probabilities(&mut rng, &prog);
        let p = FactProbabilities::new(probs.concat(), &gp.group_sizes()).unwrap();
        let q = common::random_query(&mut rng, &prog);
        let got = success_probability(&gp, &p, &parse_formula(&q.to_text()).unwrap()).unwrap();
        worst = worst.max((got - common::reference_success(&prog, &probs, &q)).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "inference oracle equivalence",
        worst <= 1e-12 && secs < 10.0,
        format!("200 programs, max |diff| {worst:.2e} (<= 1e-12), {secs:.2}s (< 10s)"),
    );
}

#[test]
fn criterion_02_world_distribution_normalizes() {
    let gp = grounded(&Task::Add.program(&[0, 1, 2, 3, 4, 5, 6, 7, 8, 9]));
    let worlds = gp.worlds().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = random_simplex(&mut rng, &gp.group_sizes());
        let total: f64 = worlds.iter().map(|w| world_probability(&p, w)).sum();
        worst = worst.max((total - 1.0).abs());
    }
    verdict(
        2,
        "world distribution normalization",
        worlds.len() == 100 && worst <= 1e-9,
        format!("J = {}, max |sum - 1| {worst:.2e} over 100 draws", worlds.len()),
    );
}

#[test]
fn criterion_03_evidence_conditioning() {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut checked, mut violations) = (0, 0);
    for _ in 0..200 {
        let prog = common::random_program(&mut rng);
        let gp = grounded(&prog.to_text());
        let p = FactProbabilities::new(common::random_probabilities(&mut rng, &prog).concat(), &gp.group_sizes()).unwrap();
        let e = common::random_query(&mut rng, &prog);
        if matches!(e, common::RefQuery::Or(..)) {
            continue;
        }
        let ev = parse_evidence(&e.to_text()).unwrap();
        let ef = parse_formula(&e.to_text()).unwrap();
        let any = gp.worlds().unwrap().iter().any(|w| entails(&gp, w, &ef).unwrap() && world_probability(&p, w) > 0.0);
        match evidence_conditional(&gp, &p, &ev) {
            Ok(d) => {
                checked += 1;
                let total: f64 = d.probabilities.iter().sum();
                let zero_outside = gp
                    .worlds()
                    .unwrap()
                    .iter()
                    .all(|w| entails(&gp, w, &ef).unwrap() || d.probabilities[w.index] == 0.0);
                violations += usize::from(!any || !zero_outside || (total - 1.0).abs() > 1e-12);
            }
            Err(PlpError::InconsistentEvidence) => violations += usize::from(any),
            Err(_) => violations += 1,
        }
    }

    let gp = grounded(&Task::Add.program(&[0, 1]));
    let p = random_simplex(&mut rng, &gp.group_sizes());
    let d = evidence_conditional(&gp, &p, &parse_evidence("add(img,2)").unwrap()).unwrap();
    let target = gp.world_index(&[1, 1]);
    let point_mass = d.probabilities.iter().enumerate().all(|(j, &v)| v == if j == target { 1.0 } else { 0.0 });
    let inconsistent = matches!(
        evidence_conditional(&gp, &p, &parse_evidence("add(img,5)").unwrap()),
        Err(PlpError::InconsistentEvidence)
    );
    let contradiction = matches!(
        evidence_conditional(&gp, &p, &Evidence {
            literals: vec![
                (parse_evidence("add(img,1)").unwrap().literals[0].0.clone(), true),
                (parse_evidence("add(img,1)").unwrap().literals[0].0.clone(), false),
            ]
        }),
        Err(PlpError::InconsistentEvidence)
    );
    verdict(
        3,
        "evidence conditioning contract",
        violations == 0 && checked > 50 && point_mass && inconsistent && contradiction,
        format!(
            "{checked} random conditionals, {violations} violations; add(img,2) point mass on (1,1): {point_mass}; \
             unsatisfiable evidence rejected: {}",
            inconsistent && contradiction
        ),
    );
}

const PIXELS: usize = 28 * 56;

fn tiny(architecture: Architecture) -> ModelConfig {
    ModelConfig { latent_dim: 2, sym_dim: 3, facts_hidden: 4, architecture, channels: [2, 3, 4], mlp_hidden: 6, ..ModelConfig::default() }
}

#[test]
fn criterion_04_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst_plp: f64 = 0.0;
    for _ in 0..50 {
        let prog = common::random_program(&mut rng);
        let gp = grounded(&prog.to_text());
        let raw = common::random_probabilities(&mut rng, &prog);
        // Keep every slot interior so both shifted points stay valid.
        let inner: Vec<f64> = raw
            .iter()
            .flat_map(|g| g.iter().map(move |&v| 0.1 / g.len() as f64 + 0.9 * v))
            .collect();
        let p = FactProbabilities::new(inner, &gp.group_sizes()).unwrap();
        let q = parse_formula(&common::random_query(&mut rng, &prog).to_text()).unwrap();
        let grad = success_gradient(&gp, &p, &q).unwrap();
        let h = 1e-6;
        for group in gp.groups() {
            let o = group.slot_offset;
            let n = group.choices.len();
            for s in 0..n {
                let t = (s + 1) % n;
                let shifted = |sign: f64| {
                    let mut v = p.values().to_vec();
                    v[o + s] += sign * h;
                    v[o + t] -= sign * h;
                    success_probability(&gp, &FactProbabilities::new(v, &gp.group_sizes()).unwrap(), &q).unwrap()
                };
                let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * h);
                let an = grad[o + s] - grad[o + t];
                worst_plp = worst_plp.max((fd - an).abs() / an.abs().max(1e-4));
            }
        }
    }

    let mut worst_elbo: f64 = 0.0;
    let mut coords = 0;
    for inst in 0..50 {
        let arch = if inst % 2 == 0 { Architecture::Conv } else { Architecture::Mlp };
        let mut model = VaelModel::new(tiny(arch), &Task::Add.program(&[0, 1]), inst).unwrap();
        let b = Batch {
            images: (0..2 * PIXELS).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect(),
            labels: vec![rng.random_range(0..3), rng.random_range(0..3)],
            digits: vec![Some(vec![rng.random_range(0..2), rng.random_range(0..2)]), None],
        };
        let noise = Noise::sample(&mut rng, 2, 5, 4);
        let loss_at = |m: &VaelModel| {
            let mut tape = Tape::new();
            let f = m.elbo(&mut tape, &b, &noise).unwrap();
            tape.value(f.loss).item()
        };
        let mut tape = Tape::new();
        let fwd = model.elbo(&mut tape, &b, &noise).unwrap();
        let grads = tape.backward(fwd.loss).unwrap();
        let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.param(id).unwrap().clone();
            let i = rng.random_range(0..g.numel());
            // Small enough that a relu kink rarely falls inside the stencil.
            let h = 1e-6;
            let orig = model.params().get(id).value.data()[i];
            model.params_mut().get_mut(id).value.data_mut()[i] = orig + h;
            let up = loss_at(&model);
            model.params_mut().get_mut(id).value.data_mut()[i] = orig - h;
            let down = loss_at(&model);
            model.params_mut().get_mut(id).value.data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            worst_elbo = worst_elbo.max(rel);
            coords += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        4,
        "gradient fidelity",
        worst_plp <= 1e-5 && worst_elbo <= 1e-3 && secs < 60.0,
        format!(
            "success gradient max rel {worst_plp:.2e} (<= 1e-5); ELBO max rel {worst_elbo:.2e} (<= 1e-3) over {coords} \
             coordinates; {secs:.1}s (< 60s)"
        ),
    );
}

#[test]
fn criterion_05_gumbel_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut on_simplex = true;
    for _ in 0..1000 {
        let k = rng.random_range(2..12);
        let lp: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..0.0)).collect();
        let g: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..30.0)).collect();
        let lambda = 10f64.powf(rng.random_range(-3.0..2.0));
        let s = gumbel_softmax_sample(&lp, lambda, &g).unwrap();
        on_simplex &= s.iter().all(|&v| (0.0..=1.0).contains(&v)) && (s.iter().sum::<f64>() - 1.0).abs() <= 1e-12;
    }
    let pi = [0.05, 0.3, 0.1, 0.25, 0.3];
    let lp: Vec<f64> = pi.iter().map(|v: &f64| v.ln()).collect();
    let s = gumbel_softmax_sample(&lp, 1.0, &[0.0; 5]).unwrap();
    let identity = s.iter().zip(pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let draws = 10_000;
    let mut counts = [0usize; 5];
    for _ in 0..draws {
        let g: Vec<f64> = (0..5).map(|_| gumbel(&mut rng)).collect();
        let s = gumbel_softmax_sample(&lp, 0.1, &g).unwrap();
        counts[(0..5).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap()] += 1;
    }
    let tv = 0.5 * pi.iter().zip(counts).map(|(p, c)| (p - c as f64 / draws as f64).abs()).sum::<f64>();
    verdict(
        5,
        "relaxed world sampling",
        on_simplex && identity <= 1e-15 && tv <= 0.05,
        format!("simplex over 1000 draws: {on_simplex}; lambda 1, g 0 max |diff| {identity:.1e}; TV at lambda 0.1 {tv:.4} (<= 0.05)"),
    );
}

#[test]
fn criterion_06_kl_closed_form() {
    let standard = kl_divergence(&GaussianPosterior { mean: vec![0.0; 6], log_std: vec![0.0; 6] });
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut worst_z: f64 = 0.0;
    for _ in 0..20 {
        let d = rng.random_range(1..6);
        let post = GaussianPosterior {
            mean: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            log_std: (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let n = 100_000;
        let (mut sum, mut sq) = (0.0, 0.0);
        for _ in 0..n {
            let mut v = 0.0;
            for i in 0..d {
                let e: f64 = rng.sample(rand_distr::StandardNormal);
                let x = post.mean[i] + post.log_std[i].exp() * e;
                v += (-0.5 * e * e - post.log_std[i]) + 0.5 * x * x;
            }
            sum += v;
            sq += v * v;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        worst_z = worst_z.max((kl_divergence(&post) - mean).abs() / se);
    }
    verdict(
        6,
        "KL closed form",
        standard == 0.0 && worst_z <= 3.0,
        format!("KL at standard normal {standard}; max |closed - MC| {worst_z:.2} standard errors over 20 posteriors"),
    );
}

fn repo_data() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn mnist() -> &'static SourceDigits {
    static SOURCE: OnceLock<SourceDigits> = OnceLock::new();
    SOURCE.get_or_init(|| {
        let d = repo_data();
        load_source(&d.join("mnist5k-images-idx3-ubyte.gz"), &d.join("mnist5k-labels-idx1-ubyte.gz")).unwrap()
    })
}

struct DeskRun {
    model: VaelModel,
    dataset: PairDataset,
    supervision: bool,
    supervised: usize,
    train_images: usize,
    epochs: usize,
    m_class: Accuracy,
    m_gen: Result<Accuracy, String>,
    elapsed: Duration,
}

const DESK_DIGITS: [u8; 3] = [0, 1, 2];

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let source = mnist();
        let ds = build_pairs(source, 10_000, &DESK_DIGITS, 0, SplitFractions::for_digits(3)).unwrap();
        let train_idx = data_efficiency_splits(&ds, &[100]).unwrap().remove(0);
        let sup = supervision_subset(&ds).unwrap();
        let config = TrainConfig::default();
        let model = VaelModel::new(config.model.clone(), &Task::Add.program(&DESK_DIGITS), config.seed).unwrap();
        let train = examples(&model, source, &ds, &train_idx, Task::Add, &sup).unwrap();
        let val = examples(&model, source, &ds, &ds.indices(Split::Val), Task::Add, &[]).unwrap();
        let supervision = config.supervision;
        let mut trainer = Trainer::new(model, config, train, val).unwrap();
        trainer.run().unwrap();
        let epochs = trainer.state().epoch;
        let model = trainer.into_model();
        let test = examples(&model, source, &ds, &ds.indices(Split::Test), Task::Add, &[]).unwrap();
        let m_class = class_accuracy(&model, &test).unwrap();
        let clf = EvalClassifier::train(source, &DESK_DIGITS, &ClassifierConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m_gen = generative_accuracy(&mut ModelGenerator { model: &model }, &clf, Task::Add, 100, &mut rng)
            .map_err(|e| e.to_string());
        DeskRun {
            model,
            dataset: ds,
            supervision,
            supervised: sup.len(),
            train_images: train_idx.len(),
            epochs,
            m_class,
            m_gen,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_07_desk_scale_end_to_end() {
    let r = desk_run();
    let m_gen = r.m_gen.as_ref().map(|a| a.value).unwrap_or(f64::NAN);
    let mins = r.elapsed.as_secs_f64() / 60.0;
    verdict(
        7,
        "three-digit end-to-end",
        r.train_images == 900 && r.supervised == 9 && r.epochs <= 50 && r.m_class.value >= 0.70 && m_gen >= 0.60 && mins <= 30.0,
        format!(
            "{} train images, {} supervised, {} epochs; test m_CLASS {} (>= 0.70); m_GEN {} (>= 0.60); {mins:.1} min",
            r.train_images,
            r.supervised,
            r.epochs,
            r.m_class,
            match &r.m_gen {
                Ok(a) => a.to_string(),
                Err(e) => e.clone(),
            }
        ),
    );
}

#[test]
fn criterion_08_task_generalization() {
    let r = desk_run();
    let source = mnist();
    let test_idx = r.dataset.indices(Split::Test);
    let mut parts = Vec::new();
    let mut pass = r.supervision && r.supervised > 0;
    for task in [Task::Mul, Task::Sub] {
        let swapped = r.model.swap_program(&task.program(&DESK_DIGITS)).unwrap();
        let test = examples(&swapped, source, &r.dataset, &test_idx, task, &[]).unwrap();
        let acc = class_accuracy(&swapped, &test).unwrap();
        pass &= acc.value >= r.m_class.value - 0.10;
        parts.push(format!("{task} m_CLASS {:.4}", acc.value));
    }
    verdict(
        8,
        "task generalization without retraining",
        pass,
        format!("addition {:.4}; {}; floor {:.4}; supervision active: {}", r.m_class.value, parts.join(", "), r.m_class.value - 0.10, r.supervision),
    );
}

#[test]
fn criterion_09_determinism_and_persistence() {
    let source = mnist();
    let ds = build_pairs(source, 400, &[0, 1], 9, SplitFractions::for_digits(2)).unwrap();
    let train_idx = data_efficiency_splits(&ds, &[5]).unwrap().remove(0);
    let sup = supervision_subset(&ds).unwrap();
    let config = TrainConfig { batch_size: 2, epochs: 11, seed: 9, patience: 100, model: tiny(Architecture::Conv), ..TrainConfig::default() };
    let fresh = || {
        let model = VaelModel::new(config.model.clone(), &Task::Add.program(&[0, 1]), 9).unwrap();
        let train = examples(&model, source, &ds, &train_idx, Task::Add, &sup).unwrap();
        let val = examples(&model, source, &ds, &ds.indices(Split::Val)[..20], Task::Add, &[]).unwrap();
        (model, train, val)
    };
    let run = || {
        let (m, t, v) = fresh();
        let mut tr = Trainer::new(m, config.clone(), t, v).unwrap();
        let losses: Vec<f64> = (0..config.epochs).flat_map(|_| tr.run_epoch().unwrap().step_losses).collect();
        (tr, losses)
    };
    let (a, a_losses) = run();
    let (b, _) = run();
    let identical = a.state().history == b.state().history
        && a.model().params().iter().zip(b.model().params().iter()).all(|((_, x), (_, y))| x.value == y.value);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.vael");
    a.model().save(&path).unwrap();
    let loaded = VaelModel::load(&path, None).unwrap().model;
    let round_trip = a.model().params().iter().zip(loaded.params().iter()).all(|((_, x), (_, y))| x.value == y.value)
        && loaded.program().source() == a.model().program().source();

    let (m, t, v) = fresh();
    let mut first = Trainer::new(m, config.clone(), t, v).unwrap();
    let head = first.run_epoch().unwrap().step_losses;
    let ckpt = dir.path().join("ckpt.vael");
    first.save_checkpoint(&ckpt).unwrap();
    let (_, t, v) = fresh();
    let mut resumed = Trainer::resume(&ckpt, config.clone(), t, v).unwrap();
    let mut tail = Vec::new();
    while !resumed.finished() {
        tail.extend(resumed.run_epoch().unwrap().step_losses);
    }
    let resumed_steps = tail.len();
    let matches = [head, tail].concat() == a_losses
        && resumed.state().history == a.state().history
        && resumed.model().params().iter().zip(a.model().params().iter()).all(|((_, x), (_, y))| {
            x.value == y.value && x.first_moment == y.first_moment && x.second_moment == y.second_moment
        });
    verdict(
        9,
        "determinism and persistence",
        identical && round_trip && matches && resumed_steps >= 100,
        format!(
            "identical seeded runs: {identical}; save/load bit-exact: {round_trip}; resumed trajectory matches for \
             {resumed_steps} steps: {matches}"
        ),
    );
}

#[test]
fn criterion_10_data_pipeline() {
    let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
    let pixels: Vec<u8> = (0..2 * 784).map(|i| (i * 37 % 256) as u8).collect();
    img.extend(&pixels);
    let parsed = parse_idx_images(&img).unwrap();
    let fixture_images = (parsed.count, parsed.rows, parsed.cols) == (2, 28, 28)
        && parsed.pixels.iter().zip(&pixels).all(|(&v, &b)| v == b as f64 / 255.0);
    let fixture_labels = parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9]).unwrap() == vec![7, 0, 9];
    let truncated = parse_idx_images(&img[..img.len() - 1]).is_err();

    let d = repo_data();
    let raw = read_maybe_gz(&d.join("mnist5k-images-idx3-ubyte.gz")).unwrap();
    let source = mnist();
    let bundled = source.len() == 5000
        && source.pixels.iter().zip(&raw[16..]).all(|(&v, &b)| v == b as f64 / 255.0)
        && source.pixels.len() == raw.len() - 16;

    let ds = build_pairs(source, 30_000, &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9], 10, SplitFractions::for_digits(10)).unwrap();
    let labels_ok = ds.records.iter().all(|r| {
        source.labels[r.left] == r.left_digit
            && source.labels[r.right] == r.right_digit
            && r.label(Task::Add) == (source.labels[r.left] + source.labels[r.right]) as i64
    });
    let subsets = data_efficiency_splits(&ds, &[1, 5, 10]).unwrap();
    let nested = subsets.windows(2).all(|w| w[0].iter().all(|i| w[1].contains(i)));
    let exact = subsets.iter().zip([1, 5, 10]).all(|(s, k)| {
        let mut counts = [[0usize; 10]; 10];
        for &i in s {
            let r = &ds.records[i];
            assert_eq!(r.split, Split::Train);
            counts[r.left_digit as usize][r.right_digit as usize] += 1;
        }
        s.len() == 100 * k && counts.iter().flatten().all(|&c| c == k)
    });
    verdict(
        10,
        "data pipeline",
        fixture_images && fixture_labels && truncated && bundled && labels_ok && nested && exact,
        format!(
            "IDX fixtures exact: {}; bundled subset exact: {bundled}; labels equal digit sums: {labels_ok}; \
             subsets nested: {nested}; exact per-pair counts (10 per pair -> {} images): {exact}",
            fixture_images && fixture_labels && truncated,
            subsets[2].len()
        ),
    );
}

/// Runs every other test binary of the workspace from the shared deps directory.
#[test]
fn criterion_11_property_suite() {
    let exe = std::env::current_exe().unwrap();
    let deps = exe.parent().unwrap();
    let targets = ["vael", "autodiff_ops", "plp_oracle", "plp_properties", "properties", "model", "training", "eval", "cli"];
    let mut newest: Vec<(String, PathBuf)> = Vec::new();
    for name in targets {
        let mut candidates: Vec<(std::time::SystemTime, PathBuf)> = std::fs::read_dir(deps)
            .unwrap()
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let f = p.file_name().unwrap().to_string_lossy().to_string();
                p.extension().is_none()
                    && f.rsplit_once('-').is_some_and(|(stem, hash)| stem == name && hash.len() == 16)
                    && std::fs::metadata(p).map(|m| m.is_file()).unwrap_or(false)
            })
            .map(|p| (std::fs::metadata(&p).unwrap().modified().unwrap(), p))
            .collect();
        candidates.sort();
        // Library and binary unit-test harnesses share the `vael` stem.
        for (_, p) in candidates.into_iter().rev() {
            let listed = std::process::Command::new(&p).arg("--list").output().unwrap();
            if String::from_utf8_lossy(&listed.stdout).contains(": test") {
                newest.push((name.to_string(), p));
                break;
            }
        }
    }
    let start = Instant::now();
    let mut failed = Vec::new();
    for (name, p) in &newest {
        let out = std::process::Command::new(p).output().unwrap();
        if !out.status.success() {
            failed.push(name.clone());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let found: Vec<&str> = newest.iter().map(|(n, _)| n.as_str()).collect();
    verdict(
        11,
        "property suite",
        found.len() == targets.len() && failed.is_empty() && secs < 300.0,
        format!("ran {found:?}; failures {failed:?}; {secs:.1}s (< 300s)"),
    );
}
