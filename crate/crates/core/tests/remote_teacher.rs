use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use idistill::corpus::{Candidate, CandidateSet};
use idistill::numkit::Permutation;
use idistill::teacher::mock::{MockEndpoint, MockReply};
use idistill::teacher::{
    RemoteMode, RemoteTeacher, TeachRequest, Teacher, TeacherEndpointConfig, TeacherSignal,
    CACHE_FILE_NAME,
};
use idistill::Error;

fn config(mock: &MockEndpoint, cache: Option<&std::path::Path>) -> TeacherEndpointConfig {
    TeacherEndpointConfig {
        base_url: mock.base_url(),
        timeout: Duration::from_secs(5),
        backoff: Duration::from_millis(1),
        cache_dir: cache.map(|p| p.to_path_buf()),
        ..Default::default()
    }
}

fn request_parts(qid: &str, k: usize) -> (CandidateSet, Vec<String>) {
    let candidates = CandidateSet {
        qid: qid.into(),
        candidates: (0..k as u64)
            .map(|i| Candidate {
                doc_id: i,
                score: -(i as f64),
            })
            .collect(),
    };
    let texts = (0..k).map(|i| format!("{qid} passage {i}")).collect();
    (candidates, texts)
}

fn teach(teacher: &RemoteTeacher, qid: &str, k: usize) -> idistill::Result<TeacherSignal> {
    let (candidates, texts) = request_parts(qid, k);
    teacher.teach(&TeachRequest {
        qid,
        question: "which passage?",
        answers: &[],
        candidates: &candidates,
        texts: &texts,
    })
}

#[test]
fn bracketed_ranking_parses() {
    let mock = MockEndpoint::start(|_| MockReply::Content("[2] > [1]".into())).unwrap();
    let t = RemoteTeacher::new(config(&mock, None), RemoteMode::Rerank).unwrap();
    let s = teach(&t, "q", 2).unwrap();
    assert_eq!(
        s.permutation(),
        Permutation::from_one_based(&[2, 1]).unwrap()
    );
    assert!(!s.fallback());
}

#[test]
fn cache_hit_sends_no_request() {
    let dir = tempfile::tempdir().unwrap();
    let mock = MockEndpoint::start(|_| MockReply::Content("[3] > [1] > [2]".into())).unwrap();
    let first = RemoteTeacher::new(config(&mock, Some(dir.path())), RemoteMode::Rerank).unwrap();
    let a = teach(&first, "q", 3).unwrap();
    assert_eq!(mock.requests(), 1);
    assert!(dir.path().join(CACHE_FILE_NAME).exists());

    let second = RemoteTeacher::new(config(&mock, Some(dir.path())), RemoteMode::Rerank).unwrap();
    let b = teach(&second, "q", 3).unwrap();
    assert_eq!(mock.requests(), 1);
    assert_eq!(second.stats().cache_hits, 1);
    assert_eq!(a.permutation(), b.permutation());
}

#[test]
fn persistent_garbage_falls_back_to_identity() {
    let mock = MockEndpoint::start(|_| MockReply::Content("I cannot rank these.".into())).unwrap();
    let t = RemoteTeacher::new(config(&mock, None), RemoteMode::Rerank).unwrap();
    let s = teach(&t, "q", 4).unwrap();
    assert!(s.fallback());
    assert_eq!(s.permutation(), Permutation::identity(4));
    assert_eq!(mock.requests(), 3);
    assert_eq!(t.stats().fallbacks, 1);
    // Fallbacks are not cached, so the next call asks again.
    teach(&t, "q", 4).unwrap();
    assert_eq!(mock.requests(), 6);
}

#[test]
fn score_mode_falls_back_to_uniform_scores() {
    let mock = MockEndpoint::start(|_| MockReply::Content("[0.9, 0.1]".into())).unwrap();
    let t = RemoteTeacher::new(config(&mock, None), RemoteMode::Score).unwrap();
    match teach(&t, "q", 3).unwrap() {
        TeacherSignal::Scores(s) => {
            assert!(s.fallback);
            assert_eq!(s.scores, vec![0.5; 3]);
        }
        other => panic!("expected scores, got {other:?}"),
    }
}

#[test]
fn retries_rate_limits_and_server_errors() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = Arc::clone(&calls);
    let mock = MockEndpoint::start(move |_| match seen.fetch_add(1, Ordering::SeqCst) {
        0 => MockReply::Status(429, "slow down".into()),
        1 => MockReply::Status(503, "busy".into()),
        _ => MockReply::Content("Document2 > Document1".into()),
    })
    .unwrap();
    let t = RemoteTeacher::new(config(&mock, None), RemoteMode::Rerank).unwrap();
    let s = teach(&t, "q", 2).unwrap();
    assert_eq!(s.permutation().one_based(), vec![2, 1]);
    assert_eq!(mock.requests(), 3);
}

#[test]
fn exhausted_retries_and_client_errors_surface() {
    let mock = MockEndpoint::start(|_| MockReply::Status(500, "down".into())).unwrap();
    let t = RemoteTeacher::new(config(&mock, None), RemoteMode::Rerank).unwrap();
    assert!(matches!(
        teach(&t, "q", 2),
        Err(Error::Endpoint { status: 500, .. })
    ));
    assert_eq!(mock.requests(), 3);

    let mock = MockEndpoint::start(|_| MockReply::Status(401, "no key".into())).unwrap();
    let t = RemoteTeacher::new(config(&mock, None), RemoteMode::Rerank).unwrap();
    assert!(matches!(
        teach(&t, "q", 2),
        Err(Error::Endpoint { status: 401, .. })
    ));
    assert_eq!(mock.requests(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let mut cfg = TeacherEndpointConfig {
        base_url: "http://127.0.0.1:9".into(),
        timeout: Duration::from_secs(2),
        backoff: Duration::from_millis(1),
        ..Default::default()
    };
    cfg.retry_budget = 1;
    let t = RemoteTeacher::new(cfg, RemoteMode::Rerank).unwrap();
    assert!(matches!(
        teach(&t, "q", 2),
        Err(Error::Transport { attempts: 2, .. })
    ));
}

#[test]
fn batch_results_keep_request_order() {
    let mock = MockEndpoint::start(|prompt| {
        if prompt.contains("q3 passage") {
            MockReply::Content("nonsense".into())
        } else {
            MockReply::Content("[3] > [2] > [1]".into())
        }
    })
    .unwrap();
    let t = RemoteTeacher::new(config(&mock, None), RemoteMode::Rerank).unwrap();
    let parts: Vec<_> = (0..8).map(|i| request_parts(&format!("q{i}"), 3)).collect();
    let qids: Vec<String> = (0..8).map(|i| format!("q{i}")).collect();
    let reqs: Vec<TeachRequest<'_>> = parts
        .iter()
        .zip(&qids)
        .map(|((c, texts), qid)| TeachRequest {
            qid,
            question: "?",
            answers: &[],
            candidates: c,
            texts,
        })
        .collect();
    let out = t.teach_all(&reqs);
    for (i, r) in out.iter().enumerate() {
        let s = r.as_ref().unwrap();
        assert_eq!(s.fallback(), i == 3, "request {i}");
    }
    assert_eq!(t.stats().fallbacks, 1);
}
