use crate::error::{Error, Result};
use crate::numkit::Permutation;

use super::{Provenance, TeacherRanking, TeacherScores};

/// Renders a permutation the way the re-ranking prompt asks for it.
pub fn render_ranking(p: &Permutation) -> String {
    p.one_based()
        .iter()
        .map(|i| format!("Document{i}"))
        .collect::<Vec<_>>()
        .join(" > ")
}

/// Runs of ASCII digits in order of appearance. Covers `Document3 > Document1`,
/// `[3] > [1]` and `3 > 1` alike.
fn digit_runs(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| !c.is_ascii_digit())
        .filter(|s| !s.is_empty())
}

/// Extracts a ranking of `k` candidates, repairing it into a permutation.
///
/// Out-of-range identifiers are dropped, duplicates keep their first
/// occurrence and missing identifiers are appended in ascending order.
pub fn parse_rerank_response(qid: &str, text: &str, k: usize) -> Result<TeacherRanking> {
    if k < 2 {
        return Err(Error::invalid(format!("k must be at least 2, got {k}")));
    }
    let mut seen = vec![false; k];
    let mut order = Vec::with_capacity(k);
    let mut repaired = false;
    let mut any = false;
    for run in digit_runs(text) {
        any = true;
        match run.parse::<usize>() {
            Ok(id) if (1..=k).contains(&id) => {
                if seen[id - 1] {
                    repaired = true;
                } else {
                    seen[id - 1] = true;
                    order.push(id - 1);
                }
            }
            _ => repaired = true,
        }
    }
    if order.is_empty() {
        let why = if any {
            "no identifier within range"
        } else {
            "no identifiers found"
        };
        return Err(Error::Unparseable(format!("{why}: {text:?}")));
    }
    for (i, s) in seen.iter().enumerate() {
        if !s {
            order.push(i);
            repaired = true;
        }
    }
    Ok(TeacherRanking {
        qid: qid.to_string(),
        permutation: Permutation::new(order)?,
        provenance: Provenance::Remote,
        raw: Some(text.to_string()),
        repaired,
        fallback: false,
    })
}

/// Extracts the first bracketed list of `k` numbers, clamped into `[0, 1]`.
pub fn parse_score_response(qid: &str, text: &str, k: usize) -> Result<TeacherScores> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let start = text
        .find('[')
        .ok_or_else(|| Error::Unparseable(format!("no score list in {text:?}")))?;
    let len = text[start..]
        .find(']')
        .ok_or_else(|| Error::Unparseable(format!("unterminated score list in {text:?}")))?;
    let body = &text[start + 1..start + len];
    let scores: Vec<f64> = body
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Unparseable(format!("bad score {:?}", s.trim())))
        })
        .collect::<Result<_>>()?;
    if scores.len() != k {
        return Err(Error::Unparseable(format!(
            "expected {k} scores, found {}",
            scores.len()
        )));
    }
    Ok(TeacherScores {
        qid: qid.to_string(),
        scores: scores.into_iter().map(|s| s.clamp(0.0, 1.0)).collect(),
        provenance: Provenance::Remote,
        raw: Some(text.to_string()),
        fallback: false,
    })
}
