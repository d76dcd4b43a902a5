//! Linear-chain CRF over encoder codes.
//!
//! All chain computations run in the log domain. Scores follow the energy
//! `start[y_1] + end[y_T] + sum_t emit[t, y_t] + sum_t A[y_{t-1}, y_t]`, where
//! the emission for label `k` at step `t` is
//! `(1 + lambda1) * (h_t^T W)_k + b_k + lambda1 * c_k`.
//!
//! Gradient routines return ascent directions of the log-likelihood.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::math::{argmax, log_sum_exp};
use crate::nn::TopLayer;

/// Label-structure parameters of the chain. The data term `W` and the
/// offset `c` live in the shared [`TopLayer`].
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// `K x K`; entry `(j, k)` scores label `j` followed by label `k`.
    pub transitions: Array2<f64>,
    pub bias: Array1<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
}

impl CrfParams {
    pub fn zeros(num_labels: usize) -> Self {
        Self {
            transitions: Array2::zeros((num_labels, num_labels)),
            bias: Array1::zeros(num_labels),
            start: Array1::zeros(num_labels),
            end: Array1::zeros(num_labels),
        }
    }

    pub fn new(transitions: Array2<f64>, bias: Array1<f64>, start: Array1<f64>, end: Array1<f64>) -> Result<Self> {
        let k = bias.len();
        if transitions.dim() != (k, k) || start.len() != k || end.len() != k {
            return Err(Error::arg("chain parameters disagree on the number of labels"));
        }
        let p = Self {
            transitions,
            bias,
            start,
            end,
        };
        if !p.iter().all(f64::is_finite) {
            return Err(Error::arg("chain parameters contain non-finite values"));
        }
        Ok(p)
    }

    pub fn num_labels(&self) -> usize {
        self.bias.len()
    }

    fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions
            .iter()
            .chain(self.bias.iter())
            .chain(self.start.iter())
            .chain(self.end.iter())
            .copied()
    }

    pub fn sq_norm(&self) -> f64 {
        self.iter().map(|v| v * v).sum()
    }
}

/// Per-step, per-label log emission scores (`T x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionTable(Array2<f64>);

impl EmissionTable {
    pub fn new(log_emissions: Array2<f64>) -> Result<Self> {
        if log_emissions.nrows() == 0 || log_emissions.ncols() == 0 {
            return Err(Error::arg("emission table must be non-empty"));
        }
        if !log_emissions.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("emission table contains non-finite values"));
        }
        Ok(Self(log_emissions))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn num_labels(&self) -> usize {
        self.0.ncols()
    }
}

/// Log emission scores for a `T x H` block of codes.
pub fn emission_logits(
    codes: ArrayView2<'_, f64>,
    top: &TopLayer,
    theta: &CrfParams,
    lambda1: f64,
) -> Result<EmissionTable> {
    if codes.ncols() != top.code_dim() {
        return Err(Error::arg(format!(
            "codes have width {}, top layer expects {}",
            codes.ncols(),
            top.code_dim()
        )));
    }
    if top.num_labels() != theta.num_labels() {
        return Err(Error::arg("top layer and chain parameters disagree on K"));
    }
    if !codes.iter().all(|v| v.is_finite()) {
        return Err(Error::arg("codes contain non-finite values"));
    }
    let mut em = codes.dot(&top.w);
    if lambda1 != 0.0 {
        em *= 1.0 + lambda1;
        em += &(&top.c * lambda1);
    }
    em += &theta.bias;
    EmissionTable::new(em)
}

fn check_chain(em: &EmissionTable, theta: &CrfParams) -> Result<()> {
    if em.num_labels() != theta.num_labels() {
        return Err(Error::arg(format!(
            "emission table has {} labels, chain parameters have {}",
            em.num_labels(),
            theta.num_labels()
        )));
    }
    Ok(())
}

fn check_labels(labels: &[usize], t: usize, k: usize) -> Result<()> {
    if labels.len() != t {
        return Err(Error::arg(format!("labeling has length {}, sequence has {t}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::arg(format!("label {bad} out of range for K={k}")));
    }
    Ok(())
}

/// Unnormalized log-score of one labeling.
pub fn sequence_score(em: &EmissionTable, labels: &[usize], theta: &CrfParams) -> Result<f64> {
    check_chain(em, theta)?;
    check_labels(labels, em.len(), em.num_labels())?;
    let e = em.view();
    let mut score = theta.start[labels[0]] + theta.end[labels[labels.len() - 1]];
    for (t, &y) in labels.iter().enumerate() {
        score += e[[t, y]];
    }
    for pair in labels.windows(2) {
        score += theta.transitions[[pair[0], pair[1]]];
    }
    Ok(score)
}

/// Forward/backward messages and posterior marginals of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainPosteriors {
    /// `log_alpha[t, k]`: log-sum of scores of prefixes ending in `k` at `t`,
    /// including the start factor and emission at `t`.
    pub log_alpha: Array2<f64>,
    /// `log_beta[t, k]`: log-sum of suffix scores after `t` given label `k`,
    /// including the end factor.
    pub log_beta: Array2<f64>,
    pub gamma: Array2<f64>,
    /// `xi[t, j, k] = p(y_t = j, y_{t+1} = k)`, shape `(T-1) x K x K`.
    pub xi: Array3<f64>,
    pub log_z: f64,
    /// The partition function recomputed from the backward messages.
    pub log_z_backward: f64,
}

pub fn forward_backward(em: &EmissionTable, theta: &CrfParams) -> Result<ChainPosteriors> {
    check_chain(em, theta)?;
    let e = em.view();
    let (t_len, k) = e.dim();
    let a = &theta.transitions;

    let mut log_alpha = Array2::zeros((t_len, k));
    log_alpha.row_mut(0).assign(&(&theta.start + &e.row(0)));
    for t in 1..t_len {
        for j in 0..k {
            let prev = log_alpha.row(t - 1);
            let incoming = log_sum_exp((0..k).map(|i| prev[i] + a[[i, j]]));
            log_alpha[[t, j]] = incoming + e[[t, j]];
        }
    }

    let mut log_beta = Array2::zeros((t_len, k));
    log_beta.row_mut(t_len - 1).assign(&theta.end);
    for t in (0..t_len - 1).rev() {
        for i in 0..k {
            let next = log_beta.row(t + 1);
            log_beta[[t, i]] = log_sum_exp((0..k).map(|j| a[[i, j]] + e[[t + 1, j]] + next[j]));
        }
    }

    let last = log_alpha.row(t_len - 1);
    let log_z = log_sum_exp((0..k).map(|i| last[i] + theta.end[i]));
    let log_z_backward = log_sum_exp((0..k).map(|i| theta.start[i] + e[[0, i]] + log_beta[[0, i]]));

    let gamma = (&log_alpha + &log_beta).mapv(|v| (v - log_z).exp());

    let mut xi = Array3::zeros((t_len.saturating_sub(1), k, k));
    for t in 0..t_len.saturating_sub(1) {
        for i in 0..k {
            for j in 0..k {
                xi[[t, i, j]] =
                    (log_alpha[[t, i]] + a[[i, j]] + e[[t + 1, j]] + log_beta[[t + 1, j]] - log_z).exp();
            }
        }
    }

    Ok(ChainPosteriors {
        log_alpha,
        log_beta,
        gamma,
        xi,
        log_z,
        log_z_backward,
    })
}

/// Highest-scoring labeling and its score. On ties the lower label index wins.
pub fn viterbi(em: &EmissionTable, theta: &CrfParams) -> Result<(Vec<usize>, f64)> {
    check_chain(em, theta)?;
    let e = em.view();
    let (t_len, k) = e.dim();
    let a = &theta.transitions;

    let mut delta = &theta.start + &e.row(0);
    let mut back = Array2::<usize>::zeros((t_len, k));
    for t in 1..t_len {
        let mut next = Array1::zeros(k);
        for j in 0..k {
            let mut best = 0;
            let mut best_score = delta[0] + a[[0, j]];
            for i in 1..k {
                let s = delta[i] + a[[i, j]];
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            back[[t, j]] = best;
            next[j] = best_score + e[[t, j]];
        }
        delta = next;
    }
    let last = argmax((&delta + &theta.end).view());
    let mut path = vec![0; t_len];
    path[t_len - 1] = last;
    for t in (1..t_len).rev() {
        path[t - 1] = back[[t, path[t]]];
    }
    let score = sequence_score(em, &path, theta)?;
    Ok((path, score))
}

/// Gradients for the chain and top-layer parameters, plus `d/d h_t` for the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfGrads {
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
    pub bias: Array1<f64>,
    pub w: Array2<f64>,
    pub c: Array1<f64>,
    /// `T x H`.
    pub codes: Array2<f64>,
}

impl CrfGrads {
    pub fn is_zero(&self) -> bool {
        self.transitions
            .iter()
            .chain(self.start.iter())
            .chain(self.end.iter())
            .chain(self.bias.iter())
            .chain(self.w.iter())
            .chain(self.c.iter())
            .chain(self.codes.iter())
            .all(|&v| v == 0.0)
    }

    /// `theta += step * grad` on the chain and top-layer parameters.
    pub fn ascend(&self, theta: &mut CrfParams, top: &mut TopLayer, step: f64) {
        theta.transitions.scaled_add(step, &self.transitions);
        theta.start.scaled_add(step, &self.start);
        theta.end.scaled_add(step, &self.end);
        theta.bias.scaled_add(step, &self.bias);
        top.w.scaled_add(step, &self.w);
        top.c.scaled_add(step, &self.c);
    }
}

/// Shared assembly: `diff[t] = target_t - model_t` over labels, `pair_diff`
/// the summed edge-indicator difference.
fn assemble(
    codes: ArrayView2<'_, f64>,
    diff: &Array2<f64>,
    pair_diff: Array2<f64>,
    lambda1: f64,
    top: &TopLayer,
    residuals: Option<ArrayView2<'_, f64>>,
) -> CrfGrads {
    let t_len = diff.nrows();
    let scale = 1.0 + lambda1;
    let mut w = codes.t().dot(diff) * scale;
    let mut c = diff.sum_axis(Axis(0)) * lambda1;
    if let Some(r) = residuals {
        w.scaled_add(lambda1, &codes.t().dot(&r));
        c.scaled_add(lambda1, &r.sum_axis(Axis(0)));
    }
    CrfGrads {
        transitions: pair_diff,
        start: diff.row(0).to_owned(),
        end: diff.row(t_len - 1).to_owned(),
        bias: diff.sum_axis(Axis(0)),
        w,
        c,
        codes: diff.dot(&top.w.t()) * scale,
    }
}

fn check_codes(codes: ArrayView2<'_, f64>, t_len: usize, top: &TopLayer) -> Result<()> {
    if codes.dim() != (t_len, top.code_dim()) {
        return Err(Error::arg(format!(
            "codes have shape {:?}, expected {:?}",
            codes.dim(),
            (t_len, top.code_dim())
        )));
    }
    Ok(())
}

fn onehot_rows(labels: &[usize], k: usize) -> Array2<f64> {
    let mut m = Array2::zeros((labels.len(), k));
    for (t, &y) in labels.iter().enumerate() {
        m[[t, y]] = 1.0;
    }
    m
}

/// Ascent direction of `log p(y | h) - (lambda1 / 2) * sum_t ||y_hat_t - y_t||^2`
/// for the chain and top-layer parameters, where `residuals[t] = onehot(y_t) - y_hat_t`.
///
/// `codes` in the result is `d log p / d h_t` only; the squared-loss part
/// of the code gradient is produced by the network's own backprop.
pub fn grad_theta_soft(
    codes: ArrayView2<'_, f64>,
    labels: &[usize],
    post: &ChainPosteriors,
    lambda1: f64,
    top: &TopLayer,
    residuals: ArrayView2<'_, f64>,
) -> Result<CrfGrads> {
    let (t_len, k) = post.gamma.dim();
    check_labels(labels, t_len, k)?;
    check_codes(codes, t_len, top)?;
    if residuals.dim() != (t_len, k) {
        return Err(Error::arg("residuals must be T x K"));
    }
    if top.num_labels() != k {
        return Err(Error::arg("top layer and posteriors disagree on K"));
    }
    let diff = onehot_rows(labels, k) - &post.gamma;
    let mut pairs = Array2::zeros((k, k));
    for t in 1..t_len {
        pairs[[labels[t - 1], labels[t]]] += 1.0;
        pairs -= &post.xi.slice(s![t - 1, .., ..]);
    }
    Ok(assemble(codes, &diff, pairs, lambda1, top, Some(residuals)))
}

/// Gradient of `score(y) - score(y_star)`: the structured-perceptron direction.
pub fn grad_theta_hard(
    codes: ArrayView2<'_, f64>,
    labels: &[usize],
    predicted: &[usize],
    lambda1: f64,
    top: &TopLayer,
) -> Result<CrfGrads> {
    let k = top.num_labels();
    let t_len = labels.len();
    if t_len == 0 {
        return Err(Error::arg("empty labeling"));
    }
    check_labels(labels, t_len, k)?;
    check_labels(predicted, t_len, k)?;
    check_codes(codes, t_len, top)?;
    let diff = onehot_rows(labels, k) - onehot_rows(predicted, k);
    let mut pairs = Array2::zeros((k, k));
    for t in 1..t_len {
        pairs[[labels[t - 1], labels[t]]] += 1.0;
        pairs[[predicted[t - 1], predicted[t]]] -= 1.0;
    }
    Ok(assemble(codes, &diff, pairs, lambda1, top, None))
}

/// Per-frame argmax of the emission table, ignoring the chain.
pub fn framewise_argmax(em: &EmissionTable) -> Vec<usize> {
    em.view().rows().into_iter().map(argmax).collect()
}

/// `onehot(y_t) - prediction_t` for each frame.
pub fn prediction_residuals(predictions: ArrayView2<'_, f64>, labels: &[usize]) -> Array2<f64> {
    let mut r = -predictions.to_owned();
    for (mut row, &y) in r.rows_mut().into_iter().zip(labels) {
        row[y] += 1.0;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_theta(k: usize, scale: f64, r: &mut ChaCha8Rng) -> CrfParams {
        let n = Normal::new(0.0, scale).unwrap();
        CrfParams::new(
            Array2::from_shape_simple_fn((k, k), || n.sample(r)),
            Array1::from_shape_simple_fn(k, || n.sample(r)),
            Array1::from_shape_simple_fn(k, || n.sample(r)),
            Array1::from_shape_simple_fn(k, || n.sample(r)),
        )
        .unwrap()
    }

    fn random_em(t: usize, k: usize, r: &mut ChaCha8Rng) -> EmissionTable {
        let n = Normal::new(0.0, 1.5).unwrap();
        EmissionTable::new(Array2::from_shape_simple_fn((t, k), || n.sample(r))).unwrap()
    }

    /// Every labeling of length `t` over `k` labels, in lexicographic order.
    fn all_labelings(t: usize, k: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..t {
            out = out
                .into_iter()
                .flat_map(|p| (0..k).map(move |y| [p.clone(), vec![y]].concat()))
                .collect();
        }
        out
    }

    /// Term-by-term score, written independently of `sequence_score`.
    fn brute_score(em: &EmissionTable, y: &[usize], th: &CrfParams) -> f64 {
        let e = em.view();
        let mut s = 0.0;
        for t in 0..y.len() {
            s += e[[t, y[t]]];
            if t == 0 {
                s += th.start[y[t]];
            }
            if t + 1 == y.len() {
                s += th.end[y[t]];
            }
            if t > 0 {
                s += th.transitions[[y[t - 1], y[t]]];
            }
        }
        s
    }

    #[test]
    fn zero_emissions_give_zero_score_and_uniform_posteriors() {
        let th = CrfParams::zeros(4);
        let em = EmissionTable::new(Array2::zeros((3, 4))).unwrap();
        assert_eq!(sequence_score(&em, &[0, 3, 2], &th).unwrap(), 0.0);
        let p = forward_backward(&em, &th).unwrap();
        assert!((p.log_z - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert!(p.gamma.iter().all(|&g| (g - 0.25).abs() < 1e-12));
        let (path, score) = viterbi(&em, &th).unwrap();
        assert_eq!(path, vec![0, 0, 0]);
        assert_eq!(score, 0.0);
    }

    #[test]
    fn single_step_chain() {
        let mut r = rng(5);
        let th = random_theta(3, 1.0, &mut r);
        let em = random_em(1, 3, &mut r);
        let s = sequence_score(&em, &[2], &th).unwrap();
        assert_eq!(s, th.start[2] + th.end[2] + em.view()[[0, 2]]);
        let p = forward_backward(&em, &th).unwrap();
        assert_eq!(p.xi.shape(), &[0, 3, 3]);
        let logits = &th.start + &th.end + &em.view().row(0);
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        for k in 0..3 {
            assert!((p.gamma[[0, k]] - logits[k].exp() / z).abs() < 1e-12);
        }
    }

    #[test]
    fn score_matches_term_by_term_sum() {
        let mut r = rng(11);
        let th = random_theta(3, 1.0, &mut r);
        let em = random_em(4, 3, &mut r);
        for y in all_labelings(4, 3) {
            let a = sequence_score(&em, &y, &th).unwrap();
            assert!((a - brute_score(&em, &y, &th)).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_backward_matches_enumeration() {
        let (t, k) = (5, 3);
        let mut r = rng(42);
        let th = random_theta(k, 1.0, &mut r);
        let em = random_em(t, k, &mut r);
        let p = forward_backward(&em, &th).unwrap();

        let ys = all_labelings(t, k);
        let scores: Vec<f64> = ys.iter().map(|y| brute_score(&em, y, &th)).collect();
        let log_z = crate::math::log_sum_exp(scores.iter().copied());
        assert!((p.log_z - log_z).abs() < 1e-8);

        let mut gamma = Array2::<f64>::zeros((t, k));
        let mut xi = Array3::<f64>::zeros((t - 1, k, k));
        for (y, s) in ys.iter().zip(&scores) {
            let prob = (s - log_z).exp();
            for i in 0..t {
                gamma[[i, y[i]]] += prob;
                if i + 1 < t {
                    xi[[i, y[i], y[i + 1]]] += prob;
                }
            }
        }
        assert!((&p.gamma - &gamma).iter().all(|v| v.abs() < 1e-8));
        assert!((&p.xi - &xi).iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn viterbi_matches_enumeration() {
        let (t, k) = (6, 4);
        let mut r = rng(3);
        let th = random_theta(k, 1.0, &mut r);
        let em = random_em(t, k, &mut r);
        let (path, score) = viterbi(&em, &th).unwrap();
        let best = all_labelings(t, k)
            .iter()
            .map(|y| sequence_score(&em, y, &th).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(score, best);
        assert_eq!(sequence_score(&em, &path, &th).unwrap(), score);
    }

    #[test]
    fn emission_dominated_viterbi_is_framewise_argmax() {
        let mut r = rng(8);
        let th = random_theta(4, 0.1, &mut r);
        let dominant = [3, 0, 2, 2, 1, 0, 3];
        let mut e = Array2::zeros((dominant.len(), 4));
        for (t, &y) in dominant.iter().enumerate() {
            e[[t, y]] = 50.0;
        }
        let em = EmissionTable::new(e).unwrap();
        assert_eq!(viterbi(&em, &th).unwrap().0, dominant.to_vec());
        assert_eq!(framewise_argmax(&em), dominant.to_vec());
    }

    #[test]
    fn emission_logits_examples() {
        let mut r = rng(2);
        let n = Normal::new(0.0, 1.0).unwrap();
        let codes = Array2::from_shape_simple_fn((3, 5), || n.sample(&mut r));
        let zero = emission_logits(codes.view(), &TopLayer::zeros(5, 3), &CrfParams::zeros(3), 0.1).unwrap();
        assert!(zero.view().iter().all(|&v| v == 0.0));

        let mut top = TopLayer::random(5, 3, 1.0, &mut r);
        top.c = Array1::from_shape_simple_fn(3, || n.sample(&mut r));
        let th = random_theta(3, 1.0, &mut r);
        let plain = emission_logits(codes.view(), &top, &th, 0.0).unwrap();
        let expect = codes.dot(&top.w) + &th.bias;
        assert_eq!(plain.view(), expect.view());

        let lambda1 = 0.1;
        let mixed = emission_logits(codes.view(), &top, &th, lambda1).unwrap();
        for t in 0..3 {
            for k in 0..3 {
                let hw: f64 = (0..5).map(|i| codes[[t, i]] * top.w[[i, k]]).sum();
                let direct = (1.0 + lambda1) * hw + th.bias[k] + lambda1 * top.c[k];
                assert!((mixed.view()[[t, k]] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hard_gradient_vanishes_on_correct_decoding() {
        let mut r = rng(1);
        let top = TopLayer::random(5, 3, 1.0, &mut r);
        let codes = Array2::from_elem((4, 5), 0.3);
        let g = grad_theta_hard(codes.view(), &[0, 2, 1, 1], &[0, 2, 1, 1], 0.1, &top).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn hard_gradient_single_frame() {
        let top = TopLayer::zeros(2, 2);
        let codes = Array2::from_elem((1, 2), 0.5);
        let g = grad_theta_hard(codes.view(), &[0], &[1], 0.0, &top).unwrap();
        assert_eq!(g.start.to_vec(), vec![1.0, -1.0]);
        assert_eq!(g.end.to_vec(), vec![1.0, -1.0]);
        assert_eq!(g.bias.to_vec(), vec![1.0, -1.0]);
        assert!(g.transitions.iter().all(|&v| v == 0.0));
        assert!(g.c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn soft_gradient_vanishes_when_model_is_certain() {
        let (t, k) = (3, 3);
        let labels = [2, 0, 1];
        let mut post = forward_backward(&EmissionTable::new(Array2::zeros((t, k))).unwrap(), &CrfParams::zeros(k)).unwrap();
        post.gamma = onehot_rows(&labels, k);
        post.xi.fill(0.0);
        for i in 0..t - 1 {
            post.xi[[i, labels[i], labels[i + 1]]] = 1.0;
        }
        let mut r = rng(7);
        let top = TopLayer::random(4, k, 1.0, &mut r);
        let codes = Array2::from_elem((t, 4), 0.5);
        let g = grad_theta_soft(codes.view(), &labels, &post, 0.1, &top, Array2::zeros((t, k)).view()).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn soft_gradient_with_zero_lambda_drops_mixed_terms() {
        let mut r = rng(21);
        let th = random_theta(3, 1.0, &mut r);
        let top = TopLayer::random(5, 3, 1.0, &mut r);
        let codes = Array2::from_elem((4, 5), 0.4);
        let labels = [1, 1, 0, 2];
        let em = emission_logits(codes.view(), &top, &th, 0.0).unwrap();
        let post = forward_backward(&em, &th).unwrap();
        let resid = Array2::from_elem((4, 3), 0.7);
        let g = grad_theta_soft(codes.view(), &labels, &post, 0.0, &top, resid.view()).unwrap();
        let expected_w = codes.t().dot(&(onehot_rows(&labels, 3) - &post.gamma));
        assert!((&g.w - &expected_w).iter().all(|v| v.abs() < 1e-14));
        assert!(g.c.iter().all(|&v| v == 0.0));
    }

    fn log_prob(codes: &Array2<f64>, labels: &[usize], th: &CrfParams, top: &TopLayer, lambda1: f64) -> f64 {
        let em = emission_logits(codes.view(), top, th, lambda1).unwrap();
        let scores: Vec<f64> = all_labelings(labels.len(), th.num_labels())
            .iter()
            .map(|y| brute_score(&em, y, th))
            .collect();
        brute_score(&em, labels, th) - crate::math::log_sum_exp(scores)
    }

    /// `log p(y | h) - (lambda1/2) * sum ||W^T h + c - y||^2` evaluated by enumeration.
    fn soft_objective(codes: &Array2<f64>, labels: &[usize], th: &CrfParams, top: &TopLayer, lambda1: f64) -> f64 {
        let pred = top.predict(codes.view());
        let sq: f64 = pred
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(row, &y)| crate::nn::frame_loss(row, y))
            .sum();
        log_prob(codes, labels, th, top, lambda1) - 0.5 * lambda1 * sq
    }

    #[test]
    fn soft_gradient_matches_finite_differences() {
        let (t, k, h, lambda1, step) = (4, 3, 5, 0.1, 1e-5);
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-7);
        for seed in 0..5 {
            let mut r = rng(500 + seed);
            let n = Normal::new(0.0, 1.0).unwrap();
            let th = random_theta(k, 1.0, &mut r);
            let mut top = TopLayer::random(h, k, 1.0, &mut r);
            top.c = Array1::from_shape_simple_fn(k, || n.sample(&mut r));
            let codes = Array2::from_shape_simple_fn((t, h), || crate::math::logistic(n.sample(&mut r)));
            let labels: Vec<usize> = (0..t).map(|i| (i * 7 + seed as usize) % k).collect();

            let em = emission_logits(codes.view(), &top, &th, lambda1).unwrap();
            let post = forward_backward(&em, &th).unwrap();
            let resid = prediction_residuals(top.predict(codes.view()).view(), &labels);
            let g = grad_theta_soft(codes.view(), &labels, &post, lambda1, &top, resid.view()).unwrap();

            let fd = |f: &dyn Fn(f64) -> f64| (f(step) - f(-step)) / (2.0 * step);
            for idx in ndarray::indices((k, k)) {
                let n = fd(&|d| {
                    let mut p = th.clone();
                    p.transitions[idx] += d;
                    soft_objective(&codes, &labels, &p, &top, lambda1)
                });
                assert!(rel(g.transitions[idx], n) < 1e-4, "A{idx:?}");
            }
            for i in 0..k {
                let perturb = |which: usize, d: f64| {
                    let mut p = th.clone();
                    let mut tp = top.clone();
                    match which {
                        0 => p.start[i] += d,
                        1 => p.end[i] += d,
                        2 => p.bias[i] += d,
                        _ => tp.c[i] += d,
                    }
                    soft_objective(&codes, &labels, &p, &tp, lambda1)
                };
                assert!(rel(g.start[i], fd(&|d| perturb(0, d))) < 1e-4);
                assert!(rel(g.end[i], fd(&|d| perturb(1, d))) < 1e-4);
                assert!(rel(g.bias[i], fd(&|d| perturb(2, d))) < 1e-4);
                assert!(rel(g.c[i], fd(&|d| perturb(3, d))) < 1e-4);
            }
            for idx in ndarray::indices((h, k)) {
                let n = fd(&|d| {
                    let mut tp = top.clone();
                    tp.w[idx] += d;
                    soft_objective(&codes, &labels, &th, &tp, lambda1)
                });
                assert!(rel(g.w[idx], n) < 1e-4, "W{idx:?}");
            }
            // code gradient covers log p only
            for idx in ndarray::indices((t, h)) {
                let n = fd(&|d| {
                    let mut c = codes.clone();
                    c[idx] += d;
                    log_prob(&c, &labels, &th, &top, lambda1)
                });
                assert!(rel(g.codes[idx], n) < 1e-4, "h{idx:?}");
            }
        }
    }

    #[test]
    fn hard_step_widens_the_score_gap() {
        let mut r = rng(77);
        let n = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..20 {
            let mut th = random_theta(3, 1.0, &mut r);
            let mut top = TopLayer::random(5, 3, 1.0, &mut r);
            let codes = Array2::from_shape_simple_fn((5, 5), || crate::math::logistic(n.sample(&mut r)));
            let labels: Vec<usize> = (0..5).map(|_| (n.sample(&mut r).abs() * 10.0) as usize % 3).collect();
            let em = emission_logits(codes.view(), &top, &th, 0.1).unwrap();
            let (pred, _) = viterbi(&em, &th).unwrap();
            if pred == labels {
                continue;
            }
            let gap = |th: &CrfParams, top: &TopLayer| {
                let em = emission_logits(codes.view(), top, th, 0.1).unwrap();
                sequence_score(&em, &labels, th).unwrap() - sequence_score(&em, &pred, th).unwrap()
            };
            let before = gap(&th, &top);
            let g = grad_theta_hard(codes.view(), &labels, &pred, 0.1, &top).unwrap();
            g.ascend(&mut th, &mut top, 0.01);
            assert!(gap(&th, &top) > before);
        }
    }
}
