use rand::Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{Error, Result};
use crate::numkit::Permutation;
use crate::seed;
use crate::synth::LatentRelevance;

use super::{Provenance, TeachRequest, Teacher, TeacherRanking, TeacherScores, TeacherSignal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMode {
    /// Argsort of latent relevance; each adjacent pair is then swapped with
    /// probability `p_swap` in one left-to-right pass.
    Rank { p_swap: f64 },
    /// Latent relevance plus Gaussian noise, clamped into `[0, 1]`.
    Scores { noise_sd: f64 },
}

/// Orders `doc_ids` by descending latent relevance, ties by ascending id, then
/// applies the adjacent-swap noise.
pub fn oracle_rank(
    latent: &LatentRelevance,
    qid: &str,
    doc_ids: &[u64],
    p_swap: f64,
    rng: &mut impl Rng,
) -> Result<Permutation> {
    let rel = latent.lookup_all(qid, doc_ids)?;
    let mut order: Vec<usize> = (0..doc_ids.len()).collect();
    order.sort_by(|&a, &b| {
        rel[b]
            .partial_cmp(&rel[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(doc_ids[a].cmp(&doc_ids[b]))
    });
    if p_swap > 0.0 {
        for i in 0..order.len().saturating_sub(1) {
            if rng.random::<f64>() < p_swap {
                order.swap(i, i + 1);
            }
        }
    }
    Permutation::new(order)
}

/// Synthetic teacher reading the hidden relevance table.
///
/// Each question draws its noise from a generator seeded by the teacher seed
/// and the qid, so results do not depend on the order questions are asked in.
pub struct OracleTeacher<'a> {
    latent: &'a LatentRelevance,
    mode: OracleMode,
    seed: u64,
}

impl<'a> OracleTeacher<'a> {
    pub fn new(latent: &'a LatentRelevance, mode: OracleMode, seed: u64) -> Result<Self> {
        match mode {
            OracleMode::Rank { p_swap } if !(0.0..=1.0).contains(&p_swap) => {
                return Err(Error::invalid(format!(
                    "p_swap must lie in [0, 1], got {p_swap}"
                )))
            }
            OracleMode::Scores { noise_sd } if !(noise_sd >= 0.0) => {
                return Err(Error::invalid(format!(
                    "noise_sd must be >= 0, got {noise_sd}"
                )))
            }
            _ => {}
        }
        Ok(Self { latent, mode, seed })
    }
}

impl Teacher for OracleTeacher<'_> {
    fn provenance(&self) -> Provenance {
        Provenance::Oracle
    }

    fn teach(&self, req: &TeachRequest<'_>) -> Result<TeacherSignal> {
        let ids = req.candidates.doc_ids();
        let mut rng = seed::rng(seed::child(self.seed, req.qid));
        match self.mode {
            OracleMode::Rank { p_swap } => Ok(TeacherSignal::Ranking(TeacherRanking {
                qid: req.qid.to_string(),
                permutation: oracle_rank(self.latent, req.qid, &ids, p_swap, &mut rng)?,
                provenance: Provenance::Oracle,
                raw: None,
                repaired: false,
                fallback: false,
            })),
            OracleMode::Scores { noise_sd } => {
                let rel = self.latent.lookup_all(req.qid, &ids)?;
                let noise =
                    Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(e.to_string()))?;
                let scores = rel
                    .into_iter()
                    .map(|r| (r + noise.sample(&mut rng)).clamp(0.0, 1.0))
                    .collect();
                Ok(TeacherSignal::Scores(TeacherScores::new(
                    req.qid.to_string(),
                    scores,
                    Provenance::Oracle,
                )?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(values: &[f64]) -> LatentRelevance {
        let mut l = LatentRelevance::new((0..values.len() as u64).collect());
        l.insert("q".into(), values.to_vec()).unwrap();
        l
    }

    #[test]
    fn exact_argsort_without_noise() {
        let l = table(&[0.1, 0.9, 0.5, 0.7]);
        let mut rng = seed::rng(0);
        let p = oracle_rank(&l, "q", &[0, 1, 2, 3], 0.0, &mut rng).unwrap();
        assert_eq!(p.one_based(), vec![2, 4, 3, 1]);
        // candidate order differs from id order
        let p = oracle_rank(&l, "q", &[3, 0, 1], 0.0, &mut rng).unwrap();
        assert_eq!(p.one_based(), vec![3, 1, 2]);
    }

    #[test]
    fn ties_break_by_id() {
        let l = table(&[0.5; 4]);
        let mut rng = seed::rng(0);
        let p = oracle_rank(&l, "q", &[2, 0, 3, 1], 0.0, &mut rng).unwrap();
        assert_eq!(p.one_based(), vec![2, 4, 1, 3]);
    }

    #[test]
    fn forced_swap_reverses_pair() {
        let l = table(&[0.9, 0.1]);
        let mut rng = seed::rng(0);
        let p = oracle_rank(&l, "q", &[0, 1], 1.0, &mut rng).unwrap();
        assert_eq!(p.one_based(), vec![2, 1]);
    }

    #[test]
    fn missing_latent_is_integrity_error() {
        let l = table(&[0.9, 0.1]);
        let mut rng = seed::rng(0);
        assert!(matches!(
            oracle_rank(&l, "other", &[0, 1], 0.0, &mut rng),
            Err(Error::Integrity(_))
        ));
        assert!(matches!(
            oracle_rank(&l, "q", &[0, 7], 0.0, &mut rng),
            Err(Error::Integrity(_))
        ));
    }

    #[test]
    fn rejects_bad_noise_parameters() {
        let l = table(&[0.9, 0.1]);
        assert!(OracleTeacher::new(&l, OracleMode::Rank { p_swap: 1.5 }, 0).is_err());
        assert!(OracleTeacher::new(&l, OracleMode::Scores { noise_sd: -1.0 }, 0).is_err());
    }
}
