//! Synthetic labeled chains with a known generator, used to check that the
//! chain model exploits label context.
//!
//! Labels follow a `K`-state Markov chain: from state `k` the next state is
//! `(k + 1) mod K` with probability `transition_strength`, otherwise one of
//! the other `K - 1` states uniformly. The first state is uniform. Frame
//! `x_t` is the state's mean vector plus isotropic Gaussian noise, where the
//! mean of state `k` has ones at coordinates `j` with `j mod K == k`.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabelAlphabet, LabeledSequence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticHmmParams {
    pub k: usize,
    pub d: usize,
    pub transition_strength: f64,
    pub emission_noise: f64,
    pub n: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub seed: u64,
}

impl SyntheticHmmParams {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::arg("need at least 2 states"));
        }
        if self.d == 0 || self.n == 0 {
            return Err(Error::arg("dimension and sequence count must be positive"));
        }
        if !(0.0..=1.0).contains(&self.transition_strength) {
            return Err(Error::arg(format!(
                "transition strength must lie in [0, 1], got {}",
                self.transition_strength
            )));
        }
        if !(self.emission_noise >= 0.0 && self.emission_noise.is_finite()) {
            return Err(Error::arg("emission noise must be non-negative"));
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(Error::arg(format!("invalid length range [{}, {}]", self.t_min, self.t_max)));
        }
        Ok(())
    }
}

/// The generating parameters, for exact-inference oracles.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub initial: Array1<f64>,
    /// Row `j` is the next-state distribution from state `j`.
    pub transition: Array2<f64>,
    /// `K x d`.
    pub means: Array2<f64>,
    pub noise: f64,
}

impl SyntheticTruth {
    fn from_spec(params: &SyntheticHmmParams) -> Self {
        let k = params.k;
        let s = params.transition_strength;
        let other = (1.0 - s) / (k - 1) as f64;
        let transition = Array2::from_shape_fn((k, k), |(i, j)| if j == (i + 1) % k { s } else { other });
        let means = Array2::from_shape_fn((k, params.d), |(i, j)| if j % k == i { 1.0 } else { 0.0 });
        Self {
            initial: Array1::from_elem(k, 1.0 / k as f64),
            transition,
            means,
            noise: params.emission_noise,
        }
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: ndarray::ArrayView1<'_, f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // numerical slack: fall back to the last state with positive mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

pub fn gen_synthetic(params: &SyntheticHmmParams) -> Result<(Dataset, SyntheticTruth)> {
    params.validate()?;
    let truth = SyntheticTruth::from_spec(params);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let noise = Normal::new(0.0, params.emission_noise).map_err(|e| Error::arg(e.to_string()))?;
    let mut sequences = Vec::with_capacity(params.n);
    for i in 0..params.n {
        let t_len = rng.random_range(params.t_min..=params.t_max);
        let mut labels = Vec::with_capacity(t_len);
        let mut state = sample_categorical(truth.initial.view(), &mut rng);
        for t in 0..t_len {
            if t > 0 {
                state = sample_categorical(truth.transition.row(state), &mut rng);
            }
            labels.push(state);
        }
        let mut frames = Array2::zeros((t_len, params.d));
        for (t, &y) in labels.iter().enumerate() {
            for j in 0..params.d {
                frames[[t, j]] = truth.means[[y, j]] + noise.sample(&mut rng);
            }
        }
        sequences.push(LabeledSequence::new(format!("syn{i:05}"), frames, labels)?);
    }
    let alphabet = LabelAlphabet::new((0..params.k).map(|k| format!("s{k}")).collect())?;
    Ok((Dataset::new(sequences, alphabet, params.d)?, truth))
}
