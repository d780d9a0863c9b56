//! Brute-force checks against exhaustive or naive reference computations.

use idistill::corpus::{build_index, retrieve_topk_vector, Document};
use idistill::encoder::{EncoderModel, Role};
use idistill::numkit::{listmle_loss, Permutation};
use idistill::seed;
use idistill::teacher::{parse_rerank_response, render_ranking};
use rand::Rng;

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

#[test]
fn topk_equals_full_argsort() {
    for case in 0..50u64 {
        let mut rng = seed::rng(seed::child(case, "topk"));
        let n = rng.random_range(1..=1000);
        let vocab = 60;
        let docs: Vec<Document> = (0..n)
            .map(|i| {
                let len = rng.random_range(1..8);
                let text = (0..len)
                    .map(|_| format!("w{}", rng.random_range(0..vocab)))
                    .collect::<Vec<_>>()
                    .join(" ");
                // Ids are scattered so that tie-breaking by id differs from position.
                Document {
                    id: (i as u64 * 7919) % 100_003,
                    text,
                }
            })
            .collect();
        let model = EncoderModel::<f64>::uniform(Role::Retriever, 8, 64, case).unwrap();
        let index = build_index(docs.clone(), &model, 16).unwrap();
        let query: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut full: Vec<(f64, u64)> = (0..n)
            .map(|pos| {
                let v = index.vector(pos);
                (query.iter().zip(v).map(|(a, b)| a * b).sum(), docs[pos].id)
            })
            .collect();
        full.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));

        let k = rng.random_range(1..=n);
        let got = retrieve_topk_vector(&index, "q", &query, k).unwrap();
        let want: Vec<u64> = full[..k].iter().map(|x| x.1).collect();
        assert_eq!(got.doc_ids(), want, "case {case}, n {n}, k {k}");
        assert!(got.is_well_ordered());
    }
}

#[test]
fn listmle_is_minimised_by_the_score_order() {
    for case in 0..200u64 {
        let mut rng = seed::rng(seed::child(case, "listmle-opt"));
        let k = rng.random_range(2..=5);
        let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-4.0..4.0)).collect();
        let best = Permutation::by_descending(&scores);
        let best_loss = listmle_loss(&scores, &best).unwrap();
        for order in permutations(k) {
            let p = Permutation::new(order).unwrap();
            let loss = listmle_loss(&scores, &p).unwrap();
            assert!(
                loss >= best_loss - 1e-12,
                "case {case}: {p:?} beats {best:?}"
            );
        }
    }
}

#[test]
fn parser_round_trips_every_permutation() {
    for k in 2..=6 {
        for order in permutations(k) {
            let p = Permutation::new(order).unwrap();
            let one = p.one_based();
            let bracketed = one
                .iter()
                .map(|i| format!("[{i}]"))
                .collect::<Vec<_>>()
                .join(" > ");
            for text in [render_ranking(&p), bracketed] {
                let parsed = parse_rerank_response("q", &text, k).unwrap();
                assert_eq!(parsed.permutation, p, "{text}");
                assert!(!parsed.repaired && !parsed.fallback);
            }
        }
    }
}
