//! Numeric kernels for the two distillation stages.
//!
//! Everything here is a pure function over slices: temperature softmax, KL
//! divergence, the Plackett-Luce list-wise likelihood (ListMLE) together with
//! hand-derived gradients, a bias-corrected Adam step and a central-difference
//! gradient checker used by the test suites.
//!
//! All log-domain sums go through max-subtraction, so very large or very
//! negative logits never overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A probability vector produced by [`softmax_temp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<F>(Vec<F>);

impl<F: Scalar> Distribution<F> {
    /// Validates that every entry lies in `[0, 1]` and the entries sum to one.
    pub fn new(probs: Vec<F>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyInput("distribution"));
        }
        if probs
            .iter()
            .any(|p| !p.is_finite() || *p < F::zero() || *p > F::one())
        {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let total: F = probs.iter().copied().sum();
        if (total.as_f64() - 1.0).abs() > F::SUM_TOLERANCE {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &[F] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<F> {
        self.0
    }
}

/// An ordering of `k` candidates, most relevant first.
///
/// Stored zero-based; the serialized and displayed form is one-based, which
/// is how teachers and users refer to candidates (`Document3 > Document1`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    /// Builds from zero-based candidate indices.
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let k = order.len();
        if k == 0 {
            return Err(Error::EmptyInput("permutation"));
        }
        let mut seen = vec![false; k];
        for &i in &order {
            if i >= k || seen[i] {
                return Err(Error::invalid(format!(
                    "{order:?} is not a permutation of 0..{k}"
                )));
            }
            seen[i] = true;
        }
        Ok(Self(order))
    }

    pub fn from_one_based(order: &[usize]) -> Result<Self> {
        if order.contains(&0) {
            return Err(Error::invalid("one-based permutation contains 0"));
        }
        Self::new(order.iter().map(|i| i - 1).collect())
    }

    pub fn identity(k: usize) -> Self {
        Self((0..k).collect())
    }

    /// Orders indices by descending score; equal scores keep ascending index.
    pub fn by_descending<T: PartialOrd>(scores: &[T]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        Self(order)
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `positions()[item]` is the rank (0 = first) that `item` receives.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.0.len()];
        for (rank, &item) in self.0.iter().enumerate() {
            pos[item] = rank;
        }
        pos
    }
}

impl Serialize for Permutation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Permutation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<usize>::deserialize(d)?;
        Permutation::from_one_based(&raw).map_err(serde::de::Error::custom)
    }
}

impl std::fmt::Display for Permutation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.one_based().iter().map(usize::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

fn check_scores<F: Scalar>(scores: &[F]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("score vector"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("scores must be finite"));
    }
    Ok(())
}

fn check_theta<F: Scalar>(theta: F) -> Result<()> {
    if !(theta > F::zero()) || !theta.is_finite() {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {theta}"
        )));
    }
    Ok(())
}

/// `ln Σ exp(x)` with max-subtraction.
pub fn log_sum_exp<F: Scalar>(xs: impl IntoIterator<Item = F> + Clone) -> F {
    let max = xs
        .clone()
        .into_iter()
        .fold(F::neg_infinity(), |m, x| if x > m { x } else { m });
    if max == F::neg_infinity() {
        return max;
    }
    let sum: F = xs.into_iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Temperature softmax: `exp(s_i/θ) / Σ_j exp(s_j/θ)`.
pub fn softmax_temp<F: Scalar>(scores: &[F], theta: F) -> Result<Distribution<F>> {
    check_scores(scores)?;
    check_theta(theta)?;
    let max = scores
        .iter()
        .copied()
        .fold(F::neg_infinity(), |m, x| if x > m { x } else { m });
    let exps: Vec<F> = scores.iter().map(|&s| ((s - max) / theta).exp()).collect();
    let total: F = exps.iter().copied().sum();
    Ok(Distribution(exps.into_iter().map(|e| e / total).collect()))
}

/// `KL(p‖q) = Σ p_i ln(p_i / q_i)`, natural log, with `0·ln 0 = 0`.
pub fn kl_divergence<F: Scalar>(p: &Distribution<F>, q: &Distribution<F>) -> Result<F> {
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "distribution lengths differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = F::zero();
    for (&pi, &qi) in p.probs().iter().zip(q.probs()) {
        if pi == F::zero() {
            continue;
        }
        if qi == F::zero() {
            return Err(Error::invalid("q has zero mass where p is positive"));
        }
        total += pi * (pi / qi).ln();
    }
    Ok(total)
}

fn check_listmle<F: Scalar>(scores: &[F], pi: &Permutation) -> Result<()> {
    check_scores(scores)?;
    if scores.len() != pi.len() {
        return Err(Error::invalid(format!(
            "{} scores but permutation of length {}",
            scores.len(),
            pi.len()
        )));
    }
    Ok(())
}

/// Suffix log-normalizers `lse_j = ln Σ_{m ≥ j} exp(s[π[m]])`.
fn suffix_lse<F: Scalar>(scores: &[F], pi: &Permutation) -> Vec<F> {
    let k = scores.len();
    let mut out = vec![F::zero(); k];
    let mut acc = F::neg_infinity();
    for j in (0..k).rev() {
        let x = scores[pi.order()[j]];
        acc = if acc == F::neg_infinity() {
            x
        } else {
            let (hi, lo) = if x > acc { (x, acc) } else { (acc, x) };
            hi + (lo - hi).exp().ln_1p()
        };
        out[j] = acc;
    }
    out
}

/// Plackett-Luce negative log-likelihood of observing the order `pi` under `scores`.
pub fn listmle_loss<F: Scalar>(scores: &[F], pi: &Permutation) -> Result<F> {
    check_listmle(scores, pi)?;
    let lse = suffix_lse(scores, pi);
    Ok(pi
        .order()
        .iter()
        .zip(&lse)
        .map(|(&item, &norm)| norm - scores[item])
        .sum())
}

/// Gradient of [`listmle_loss`] with respect to `scores`.
///
/// Each suffix `j` contributes its softmax probabilities to every item it
/// contains and `-1` to the item placed at position `j`.
pub fn listmle_grad<F: Scalar>(scores: &[F], pi: &Permutation) -> Result<Vec<F>> {
    check_listmle(scores, pi)?;
    let order = pi.order();
    let lse = suffix_lse(scores, pi);
    let mut grad = vec![F::zero(); scores.len()];
    for (j, &norm) in lse.iter().enumerate() {
        for &item in &order[j..] {
            grad[item] += (scores[item] - norm).exp();
        }
        grad[order[j]] -= F::one();
    }
    Ok(grad)
}

/// Gradient of `KL(p‖softmax(q_scores/θ))` with respect to `q_scores`: `(q − p)/θ`.
pub fn kl_grad_wrt_q_scores<F: Scalar>(
    p: &Distribution<F>,
    q_scores: &[F],
    theta: F,
) -> Result<Vec<F>> {
    let q = softmax_temp(q_scores, theta)?;
    if p.len() != q.len() {
        return Err(Error::invalid(format!(
            "target has {} entries but {} scores were given",
            p.len(),
            q.len()
        )));
    }
    Ok(q.probs()
        .iter()
        .zip(p.probs())
        .map(|(&qi, &pi)| (qi - pi) / theta)
        .collect())
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<F: Scalar>(
    params: &mut [F],
    grads: &[F],
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.m.len()
        || state.m.len() != state.v.len()
    {
        return Err(Error::invalid(format!(
            "adam shapes differ: params {}, grads {}, moments {}/{}",
            params.len(),
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    if !(cfg.lr >= 0.0) {
        return Err(Error::invalid("learning rate must be non-negative"));
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = F::lit(cfg.beta1);
    let b2 = F::lit(cfg.beta2);
    let one = F::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let lr = F::lit(cfg.lr);
    let eps = F::lit(cfg.eps);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Central-difference gradient of `f` at `point`.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest componentwise `|numeric − analytic| / max(1e-8, |analytic|)`.
///
/// Reports a large value instead of failing; a length mismatch yields infinity.
pub fn finite_diff_check(
    f: impl Fn(&[f64]) -> f64,
    analytic: &[f64],
    point: &[f64],
    h: f64,
) -> f64 {
    if analytic.len() != point.len() {
        return f64::INFINITY;
    }
    numeric_gradient(f, point, h)
        .iter()
        .zip(analytic)
        .map(|(n, a)| (n - a).abs() / a.abs().max(1e-8))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perm(one_based: &[usize]) -> Permutation {
        Permutation::from_one_based(one_based).unwrap()
    }

    #[test]
    fn softmax_worked_examples() {
        let d = softmax_temp(&[1.0f64, 1.0, 1.0], 1.0).unwrap();
        for p in d.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let a = softmax_temp(&[2.0, 4.0], 2.0).unwrap();
        let b = softmax_temp(&[1.0, 2.0], 1.0).unwrap();
        assert_eq!(a, b);
        let c = softmax_temp(&[0.0, 3f64.ln()], 1.0).unwrap();
        assert!((c.probs()[0] - 0.25).abs() < 1e-12);
        assert!((c.probs()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_bad_input() {
        assert!(matches!(
            softmax_temp(&[1.0], 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(softmax_temp(&[1.0], -1.0).is_err());
        assert!(softmax_temp(&[f64::NAN, 1.0], 1.0).is_err());
        assert!(softmax_temp::<f64>(&[], 1.0).is_err());
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let d = softmax_temp(&[1e300, 0.0], 1e-3).unwrap();
        assert_eq!(d.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn kl_examples() {
        let p = Distribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let q = Distribution::new(vec![0.25, 0.75]).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((kl_divergence(&p, &q).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn kl_errors() {
        let p = Distribution::new(vec![0.5, 0.5]).unwrap();
        let q3 = Distribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert!(kl_divergence(&p, &q3).is_err());
        let zero = Distribution::new(vec![1.0, 0.0]).unwrap();
        assert!(kl_divergence(&p, &zero).is_err());
        // 0·ln 0 = 0 on the p side
        assert!(kl_divergence(&zero, &p).unwrap() > 0.0);
    }

    #[test]
    fn listmle_worked_examples() {
        let l = listmle_loss(&[2.0f64, 1.0, 0.0], &perm(&[1, 2, 3])).unwrap();
        // -ln(0.66524 * 0.73106)
        let expected = -(0.66524f64 * 0.73106).ln();
        assert!((l - expected).abs() < 1e-5, "{l}");
        assert!((l - 0.720868).abs() < 1e-6, "{l}");
        let l = listmle_loss(&[2.0f64, 1.0, 0.0], &perm(&[3, 2, 1])).unwrap();
        let expected = -(0.09003f64 * 0.26894).ln();
        assert!((l - expected).abs() < 1e-4, "{l}");
        assert!((l - 3.720868).abs() < 1e-6, "{l}");
        let l = listmle_loss(&[7.5f64; 3], &perm(&[2, 3, 1])).unwrap();
        assert!((l - 6f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn listmle_errors() {
        assert!(listmle_loss(&[1.0, 2.0], &perm(&[1, 2, 3])).is_err());
        assert!(Permutation::from_one_based(&[1, 1, 2]).is_err());
        assert!(Permutation::from_one_based(&[0, 1]).is_err());
        assert!(Permutation::new(vec![0, 2]).is_err());
    }

    #[test]
    fn listmle_grad_two_items() {
        let g = listmle_grad(&[0.0f64, 0.0], &perm(&[1, 2])).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15);
        assert!((g[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_grad_example() {
        let p = Distribution::new(vec![1.0, 0.0]).unwrap();
        let g = kl_grad_wrt_q_scores(&p, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(g, vec![-0.5, 0.5]);
        let s = [0.3f64, -1.2, 2.0];
        let p = softmax_temp(&s, 0.7).unwrap();
        let g = kl_grad_wrt_q_scores(&p, &s, 0.7).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn adam_examples() {
        let cfg = AdamConfig::with_lr(1e-3);
        let mut params = vec![0.5, -2.0];
        let mut state = AdamState::new(2);
        adam_step(&mut params, &[0.0, 0.0], &mut state, &cfg).unwrap();
        assert_eq!(params, vec![0.5, -2.0]);
        assert_eq!(state.step, 1);

        let mut x = vec![1.0f64];
        let mut state = AdamState::new(1);
        adam_step(&mut x, &[1.0], &mut state, &cfg).unwrap();
        let first = 1.0 - x[0];
        assert!((first - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        let before = x[0];
        adam_step(&mut x, &[1.0], &mut state, &cfg).unwrap();
        let second = before - x[0];
        assert!((second - first).abs() < 1e-12);

        assert!(adam_step(&mut x, &[1.0, 2.0], &mut state, &cfg).is_err());
    }

    #[test]
    fn finite_diff_quadratic() {
        let err = finite_diff_check(|x| x[0] * x[0], &[6.0], &[3.0], 1e-5);
        assert!(err < 1e-6, "{err}");
        assert!(finite_diff_check(|x| x[0], &[1.0, 2.0], &[1.0], 1e-5).is_infinite());
    }

    #[test]
    fn permutation_helpers() {
        let p = Permutation::by_descending(&[0.1, 0.9, 0.1, 0.5]);
        assert_eq!(p.one_based(), vec![2, 4, 1, 3]);
        assert_eq!(p.positions(), vec![2, 0, 3, 1]);
        assert_eq!(p.to_string(), "(2,4,1,3)");
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, "[2,4,1,3]");
        let back: Permutation = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<Permutation>("[1,1]").is_err());
    }

    #[test]
    fn generic_over_f32() {
        let d = softmax_temp(&[0.0f32, 3f32.ln()], 1.0).unwrap();
        assert!((d.probs()[1] - 0.75).abs() < 1e-6);
        let l = listmle_loss(&[2.0f32, 1.0, 0.0], &perm(&[1, 2, 3])).unwrap();
        assert!((l - 0.72091).abs() < 1e-4);
    }
}
