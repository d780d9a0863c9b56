use idistill::corpus::{bm25_scores, build_index, Bm25Params, Document};
use idistill::encoder::{EncoderModel, Role};
use idistill::numkit::{kl_divergence, listmle_loss, softmax_temp, Distribution, Permutation};
use idistill::seed;
use rand::Rng;

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

#[test]
fn softmax_normalises_and_ignores_shifts() {
    for case in 0..200u64 {
        let mut rng = seed::rng(seed::child(case, "softmax"));
        let k = rng.random_range(1..=12);
        let s: Vec<f64> = (0..k).map(|_| rng.random_range(-20.0..20.0)).collect();
        let theta = rng.random_range(0.1..5.0);
        let shift = rng.random_range(-100.0..100.0);
        let p = softmax_temp(&s, theta).unwrap();
        let total: f64 = p.probs().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        let moved: Vec<f64> = s.iter().map(|x| x + shift).collect();
        let q = softmax_temp(&moved, theta).unwrap();
        for (a, b) in p.probs().iter().zip(q.probs()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn kl_is_zero_on_the_diagonal_and_nonnegative() {
    for case in 0..200u64 {
        let mut rng = seed::rng(seed::child(case, "kl"));
        let k = rng.random_range(1..=10);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
            let s: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            softmax_temp(&s, 1.0).unwrap()
        };
        let p = mk(&mut rng);
        let q = mk(&mut rng);
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
    }
}

#[test]
fn listmle_of_constant_scores_is_ln_k_factorial() {
    for k in 2..=6 {
        for c in [-3.0, 0.0, 0.5, 11.0] {
            let s = vec![c; k];
            let l = listmle_loss(&s, &Permutation::identity(k)).unwrap();
            assert!((l - ln_factorial(k)).abs() < 1e-9, "k {k}: {l}");
        }
    }
}

#[test]
fn worked_examples() {
    let s = [2.0, 1.0, 0.0];
    let fwd = listmle_loss(&s, &Permutation::from_one_based(&[1, 2, 3]).unwrap()).unwrap();
    let rev = listmle_loss(&s, &Permutation::from_one_based(&[3, 2, 1]).unwrap()).unwrap();
    // Products of the per-step Plackett-Luce probabilities.
    assert!((fwd - -(0.66524f64 * 0.73106).ln()).abs() < 1e-5, "{fwd}");
    assert!((rev - -(0.09003f64 * 0.26894).ln()).abs() < 1e-4, "{rev}");
    assert!((rev - fwd - 3.0).abs() < 1e-12);

    let p = Distribution::new(vec![0.5f64, 0.5]).unwrap();
    let q = Distribution::new(vec![0.25, 0.75]).unwrap();
    assert!((kl_divergence(&p, &q).unwrap() - 0.14384).abs() < 1e-5);

    let m = EncoderModel::<f64>::zeros(Role::Retriever, 4, 64).unwrap();
    let docs = vec![Document {
        id: 0,
        text: "paris".into(),
    }];
    let index = build_index(docs, &m, 16).unwrap();
    let b = bm25_scores("paris", &[0], &index, Bm25Params::default()).unwrap();
    assert!((b[0] - (4.0f64 / 3.0).ln()).abs() < 1e-5);
}
