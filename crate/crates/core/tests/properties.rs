use std::sync::OnceLock;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vael::autodiff::{Tape, Tensor};
use vael::data::{build_pairs, load_source, SourceDigits, Split, SplitFractions, Task};
use vael::model::ops::{gumbel_softmax_sample, kl_divergence};
use vael::model::{Architecture, Batch, GaussianPosterior, ModelConfig, Noise, VaelModel};
use vael::training::TrainConfig;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn tiny(architecture: Architecture) -> ModelConfig {
    ModelConfig { latent_dim: 2, sym_dim: 3, facts_hidden: 4, architecture, channels: [2, 3, 4], mlp_hidden: 6, ..ModelConfig::default() }
}

fn source() -> &'static SourceDigits {
    static S: OnceLock<SourceDigits> = OnceLock::new();
    S.get_or_init(|| {
        let d = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
        load_source(&d.join("mnist5k-images-idx3-ubyte.gz"), &d.join("mnist5k-labels-idx1-ubyte.gz")).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convolutions_are_adjoint(
        seed in any::<u64>(),
        batch in 1usize..3,
        cin in 1usize..4,
        cout in 1usize..4,
        kh in 1usize..5,
        kw in 1usize..5,
        extra_h in 0usize..6,
        extra_w in 0usize..6,
        stride in 1usize..3,
        pad in 0usize..2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(&mut rng, &[batch, cin, kh + extra_h, kw + extra_w]);
        let w = rand_tensor(&mut rng, &[cout, cin, kh, kw]);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()).unwrap(), tape.constant(w).unwrap());
        let cx = tape.conv2d(xv, wv, (stride, stride), (pad, pad)).unwrap();
        let y = rand_tensor(&mut rng, tape.value(cx).shape());
        let yv = tape.constant(y.clone()).unwrap();
        let cty = tape.conv_transpose2d(yv, wv, (stride, stride), (pad, pad)).unwrap();
        prop_assume!(tape.value(cty).shape() == x.shape());
        let (lhs, rhs) = (tape.value(cx).dot(&y), x.dot(tape.value(cty)));
        prop_assert!((lhs - rhs).abs() <= 1e-9, "{} vs {}", lhs, rhs);
    }

    #[test]
    fn fact_probabilities_lie_on_the_simplex(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let model = VaelModel::new(tiny(Architecture::Mlp), &Task::Add.program(&[0, 1, 2]), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..3 * 4).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        for p in model.facts_from_latent(&z).unwrap() {
            for g in 0..p.num_groups() {
                let group = p.group(g);
                prop_assert!(group.iter().all(|&v| (0.0..=1.0).contains(&v)));
                prop_assert!((group.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn label_distribution_normalizes(seed in any::<u64>()) {
        let model = VaelModel::new(tiny(Architecture::Conv), &Task::Sub.program(&[0, 1, 2]), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images: Vec<f64> = (0..2 * 28 * 56).map(|_| rng.random()).collect();
        for d in model.classify(&images).unwrap() {
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn swapped_program_decodes_identically(seed in any::<u64>()) {
        let model = VaelModel::new(tiny(Architecture::Conv), &Task::Add.program(&[0, 1, 2]), seed).unwrap();
        let swapped = model.swap_program(&Task::Mul.program(&[0, 1, 2])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let omega: Vec<f64> = {
            let raw: Vec<f64> = (0..9).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        };
        let (a, b) = (model.decode(&z, &omega).unwrap(), swapped.decode(&z, &omega).unwrap());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn relaxed_sample_at_unit_temperature_without_noise_is_pi(raw in prop::collection::vec(0.01f64..1.0, 2..12)) {
        let s: f64 = raw.iter().sum();
        let pi: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let log_pi: Vec<f64> = pi.iter().map(|v| v.ln()).collect();
        let out = gumbel_softmax_sample(&log_pi, 1.0, &vec![0.0; pi.len()]).unwrap();
        prop_assert!(out.iter().zip(&pi).all(|(a, b)| (a - b).abs() <= 1e-15));
    }

    #[test]
    fn kl_is_nonnegative(mean in prop::collection::vec(-5.0f64..5.0, 1..8), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let log_std = (0..mean.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let kl = kl_divergence(&GaussianPosterior { mean, log_std });
        prop_assert!(kl >= 0.0);
    }

    #[test]
    fn elbo_stays_finite_on_extreme_images(seed in any::<u64>(), level in prop::sample::select(vec![0.0, 1.0])) {
        let model = VaelModel::new(tiny(Architecture::Mlp), &Task::Add.program(&[0, 1]), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Batch {
            images: vec![level; 2 * 28 * 56],
            labels: vec![0, 2],
            digits: vec![Some(vec![0, 1]), Some(vec![1, 1])],
        };
        let noise = Noise::sample(&mut rng, 2, 5, 4);
        let mut tape = Tape::new();
        let f = model.elbo(&mut tape, &b, &noise).unwrap();
        prop_assert!(tape.value(f.loss).item().is_finite() && f.terms.is_finite());
        let grads = tape.backward(f.loss).unwrap();
        for (id, p) in model.params().iter() {
            prop_assert!(grads.param(id).unwrap().is_finite(), "{}", p.name);
        }
    }

    #[test]
    fn config_text_round_trips(
        lr in 1e-6f64..1.0,
        batch_size in 1usize..512,
        epochs in 1usize..200,
        seed in any::<u64>(),
        supervision in any::<bool>(),
        w_kl in 0.0f64..1.0,
        lambda in 0.01f64..5.0,
        mlp in any::<bool>(),
    ) {
        let mut c = TrainConfig { lr, batch_size, epochs, seed, supervision, ..TrainConfig::default() };
        c.model.weights.kl = w_kl;
        c.model.temperature = lambda;
        if mlp {
            c.model.architecture = Architecture::Mlp;
        }
        prop_assert_eq!(TrainConfig::from_text(&c.to_text()).unwrap(), c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pair_datasets_are_consistent_and_reproducible(
        seed in any::<u64>(),
        count in 50usize..2000,
        mask in 3u16..1024,
    ) {
        let digits: Vec<u8> = (0..10).filter(|d| mask & (1 << d) != 0).collect();
        prop_assume!(digits.len() >= 2);
        let src = source();
        let fr = SplitFractions::for_digits(digits.len());
        let ds = build_pairs(src, count, &digits, seed, fr).unwrap();
        prop_assert_eq!(&ds, &build_pairs(src, count, &digits, seed, fr).unwrap());
        prop_assert_eq!(ds.records.len(), count);
        let total: usize = Split::ALL.iter().map(|&s| ds.indices(s).len()).sum();
        prop_assert_eq!(total, count);
        let mut used: [std::collections::BTreeSet<usize>; 3] = Default::default();
        for r in &ds.records {
            prop_assert_eq!(src.labels[r.left], r.left_digit);
            prop_assert_eq!(src.labels[r.right], r.right_digit);
            prop_assert_eq!(r.label(Task::Add), (r.left_digit + r.right_digit) as i64);
            let k = Split::ALL.iter().position(|&s| s == r.split).unwrap();
            used[k].insert(r.left);
            used[k].insert(r.right);
        }
        for a in 0..3 {
            for b in a + 1..3 {
                prop_assert!(used[a].is_disjoint(&used[b]), "source images shared between splits");
            }
        }
    }
}
