//! Greedy layer-wise RBM pretraining with one-step contrastive divergence.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{logistic, splitmix};
use crate::nn::{augment, EncoderWeights};

/// Binary-binary RBM. The final row of `w` holds the hidden biases, matching
/// the encoder layer the RBM initializes.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmLayer {
    /// `(d_v + 1) x d_h`.
    pub w: Array2<f64>,
    pub vbias: Array1<f64>,
}

impl RbmLayer {
    pub fn new(w: Array2<f64>, vbias: Array1<f64>) -> Result<Self> {
        if w.nrows() != vbias.len() + 1 || w.ncols() == 0 {
            return Err(Error::arg(format!(
                "RBM weights {:?} do not match {} visible units",
                w.dim(),
                vbias.len()
            )));
        }
        if !w.iter().chain(vbias.iter()).all(|v| v.is_finite()) {
            return Err(Error::arg("RBM parameters contain non-finite values"));
        }
        Ok(Self { w, vbias })
    }

    /// Weights `N(0, 0.01^2)`, biases zero.
    pub fn random<R: Rng + ?Sized>(visible: usize, hidden: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid std");
        let mut w = Array2::zeros((visible + 1, hidden));
        w.slice_mut(s![..visible, ..]).mapv_inplace(|_| normal.sample(rng));
        Self {
            w,
            vbias: Array1::zeros(visible),
        }
    }

    pub fn visible_dim(&self) -> usize {
        self.vbias.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w.ncols()
    }

    fn hidden_batch(&self, v: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = augment(v).dot(&self.w);
        z.mapv_inplace(logistic);
        z
    }

    fn visible_batch(&self, h: ArrayView2<'_, f64>) -> Array2<f64> {
        let d = self.visible_dim();
        let mut z = h.dot(&self.w.slice(s![..d, ..]).t()) + &self.vbias;
        z.mapv_inplace(logistic);
        z
    }
}

/// `logistic(W^T [v, 1])`.
pub fn hidden_probs(v: ArrayView1<'_, f64>, layer: &RbmLayer) -> Result<Array1<f64>> {
    if v.len() != layer.visible_dim() {
        return Err(Error::arg(format!(
            "visible vector has length {}, layer expects {}",
            v.len(),
            layer.visible_dim()
        )));
    }
    Ok(layer.hidden_batch(v.insert_axis(Axis(0))).row(0).to_owned())
}

/// Seed for one row's Bernoulli draws, derived from the step seed and the
/// row's contents so that duplicated rows draw identical samples.
fn row_seed(seed: u64, row: ArrayView1<'_, f64>) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in row {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x1000_0000_01b3).rotate_left(29);
    }
    splitmix(h)
}

/// One CD-1 update on a mini-batch. Returns the updated layer and the mean
/// squared reconstruction error of the batch.
pub fn cd1_step(batch: ArrayView2<'_, f64>, layer: &RbmLayer, lr: f64, seed: u64) -> Result<(RbmLayer, f64)> {
    let b = batch.nrows();
    let d = layer.visible_dim();
    if b == 0 {
        return Err(Error::arg("empty RBM batch"));
    }
    if batch.ncols() != d {
        return Err(Error::arg(format!("batch has {} columns, layer expects {d}", batch.ncols())));
    }
    if !batch.iter().all(|v| v.is_finite()) {
        return Err(Error::arg("RBM batch contains non-finite values"));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::arg(format!("learning rate must be non-negative, got {lr}")));
    }

    let pos_hidden = layer.hidden_batch(batch);
    let mut sampled = Array2::zeros(pos_hidden.raw_dim());
    for (i, (probs, mut out)) in pos_hidden.rows().into_iter().zip(sampled.rows_mut()).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(row_seed(seed, batch.row(i)));
        for (p, o) in probs.iter().zip(out.iter_mut()) {
            *o = if rng.random::<f64>() < *p { 1.0 } else { 0.0 };
        }
    }
    let recon = layer.visible_batch(sampled.view());
    let neg_hidden = layer.hidden_batch(recon.view());

    let diff = &batch - &recon;
    let error = diff.iter().map(|v| v * v).sum::<f64>() / (b * d) as f64;

    let mut next = layer.clone();
    if lr > 0.0 {
        let scale = lr / b as f64;
        let grad = augment(batch).t().dot(&pos_hidden) - augment(recon.view()).t().dot(&neg_hidden);
        next.w.scaled_add(scale, &grad);
        next.vbias.scaled_add(scale, &diff.sum_axis(Axis(0)));
    }
    Ok((next, error))
}

/// Mean reconstruction error per epoch, one list per layer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub errors: Vec<Vec<f64>>,
}

/// Trains one RBM per encoder layer, bottom-up. Layer `l + 1` sees the
/// hidden probabilities of layer `l`.
///
/// Inputs outside `[0, 1]` are min-max scaled per dimension first; the
/// scaling is folded back into the first layer so the returned encoder
/// consumes raw frames.
pub fn greedy_pretrain(
    frames: ArrayView2<'_, f64>,
    layer_sizes: &[usize],
    epochs: usize,
    lr: f64,
    batch: usize,
    seed: u64,
) -> Result<(EncoderWeights, PretrainReport)> {
    if frames.nrows() == 0 {
        return Err(Error::arg("no frames to pretrain on"));
    }
    if layer_sizes.len() < 2 || layer_sizes[0] != frames.ncols() {
        return Err(Error::arg(format!(
            "layer sizes {layer_sizes:?} do not start with the frame dimension {}",
            frames.ncols()
        )));
    }
    if epochs == 0 || batch == 0 {
        return Err(Error::arg("RBM epochs and batch size must be positive"));
    }
    if !frames.iter().all(|v| v.is_finite()) {
        return Err(Error::arg("frames contain non-finite values"));
    }

    let scaling = MinMax::fit(frames);
    let mut input = match &scaling {
        Some(s) => s.apply(frames),
        None => frames.to_owned(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = PretrainReport::default();
    let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
    for (l, pair) in layer_sizes.windows(2).enumerate() {
        let mut layer = RbmLayer::random(pair[0], pair[1], &mut rng);
        let mut order: Vec<usize> = (0..input.nrows()).collect();
        let mut errors = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for (bi, chunk) in order.chunks(batch).enumerate() {
                let rows = input.select(Axis(0), chunk);
                let step_seed = splitmix(seed ^ splitmix(((l as u64) << 48) ^ ((epoch as u64) << 24) ^ bi as u64));
                let (next, err) = cd1_step(rows.view(), &layer, lr, step_seed)?;
                layer = next;
                total += err * chunk.len() as f64;
            }
            errors.push(total / input.nrows() as f64);
        }
        report.errors.push(errors);
        input = layer.hidden_batch(input.view());
        weights.push(layer.w);
    }

    if let Some(s) = &scaling {
        s.fold_into(&mut weights[0]);
    }
    Ok((EncoderWeights::new(weights)?, report))
}

/// Per-dimension affine map onto `[0, 1]`.
struct MinMax {
    min: Array1<f64>,
    range: Array1<f64>,
}

impl MinMax {
    /// `None` when every value already lies in `[0, 1]`.
    fn fit(x: ArrayView2<'_, f64>) -> Option<Self> {
        if x.iter().all(|&v| (0.0..=1.0).contains(&v)) {
            return None;
        }
        let min = x.fold_axis(Axis(0), f64::INFINITY, |a, &b| a.min(b));
        let max = x.fold_axis(Axis(0), f64::NEG_INFINITY, |a, &b| a.max(b));
        Some(Self {
            range: &max - &min,
            min,
        })
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.range[j] > 0.0 {
                    ((*v - self.min[j]) / self.range[j]).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
        }
        out
    }

    /// Rewrites `w` so that `w'^T [x, 1] == w^T [scale(x), 1]` for in-range `x`.
    fn fold_into(&self, w: &mut Array2<f64>) {
        let d = self.min.len();
        for j in 0..d {
            let inv = if self.range[j] > 0.0 { 1.0 / self.range[j] } else { 0.0 };
            for k in 0..w.ncols() {
                let wj = w[[j, k]];
                w[[d, k]] -= wj * self.min[j] * inv;
                w[[j, k]] = wj * inv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two complementary 8-bit bar patterns.
    fn bars(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::zeros((n, 8));
        for mut row in out.rows_mut() {
            let left = rng.random_bool(0.5);
            for (j, v) in row.iter_mut().enumerate() {
                *v = if (j < 4) == left { 1.0 } else { 0.0 };
            }
        }
        out
    }

    #[test]
    fn zero_weights_give_half_probabilities() {
        let layer = RbmLayer::new(Array2::zeros((4, 3)), Array1::zeros(3)).unwrap();
        let p = hidden_probs(Array1::from(vec![1.0, 0.0, 1.0]).view(), &layer).unwrap();
        assert!(p.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn strong_weights_saturate() {
        let mut w = Array2::zeros((6, 1));
        w.slice_mut(s![..5, 0]).fill(10.0);
        let layer = RbmLayer::new(w, Array1::zeros(5)).unwrap();
        let p = hidden_probs(Array1::ones(5).view(), &layer).unwrap();
        assert!(p[0] > 0.999);
    }

    #[test]
    fn hidden_probs_match_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let w = Array2::from_shape_simple_fn((6, 4), || normal.sample(&mut rng));
        let layer = RbmLayer::new(w.clone(), Array1::zeros(5)).unwrap();
        let v = Array1::from_shape_simple_fn(5, || rng.random::<f64>());
        let p = hidden_probs(v.view(), &layer).unwrap();
        for j in 0..4 {
            let z: f64 = w[[5, j]] + (0..5).map(|i| w[[i, j]] * v[i]).sum::<f64>();
            assert!((p[j] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
        }
        assert!(hidden_probs(Array1::zeros(4).view(), &layer).is_err());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = RbmLayer::random(8, 4, &mut rng);
        let data = bars(10, 1);
        let (next, err) = cd1_step(data.view(), &layer, 0.0, 3).unwrap();
        assert_eq!(next, layer);
        assert!(err > 0.0);
    }

    #[test]
    fn duplicated_rows_match_single_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = RbmLayer::random(8, 4, &mut rng);
        let data = bars(1, 5);
        let repeated = Array2::from_shape_fn((6, 8), |(_, j)| data[[0, j]]);
        let (a, ea) = cd1_step(data.view(), &layer, 0.1, 99).unwrap();
        let (b, eb) = cd1_step(repeated.view(), &layer, 0.1, 99).unwrap();
        assert!((&a.w - &b.w).iter().all(|v| v.abs() < 1e-15));
        assert!((&a.vbias - &b.vbias).iter().all(|v| v.abs() < 1e-15));
        assert!((ea - eb).abs() < 1e-15);
    }

    #[test]
    fn cd1_rejects_bad_input() {
        let layer = RbmLayer::random(3, 2, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(cd1_step(Array2::zeros((0, 3)).view(), &layer, 0.1, 0).is_err());
        let mut bad = Array2::zeros((2, 3));
        bad[[1, 1]] = f64::INFINITY;
        assert!(cd1_step(bad.view(), &layer, 0.1, 0).is_err());
    }

    #[test]
    fn reconstruction_error_falls_on_bars() {
        let data = bars(100, 0);
        let mut improved = 0;
        for seed in 0..20 {
            let (_, report) = greedy_pretrain(data.view(), &[8, 4], 50, 0.1, 10, seed).unwrap();
            let e = &report.errors[0];
            if e[49] < e[0] {
                improved += 1;
            }
        }
        assert!(improved >= 19, "improved in {improved}/20 seeds");
    }

    #[test]
    fn pretrain_shapes_and_determinism() {
        let data = bars(12, 3);
        let (enc, report) = greedy_pretrain(data.view(), &[8, 5, 3], 1, 0.1, 4, 7).unwrap();
        assert_eq!(enc.layer_sizes(), &[8, 5, 3]);
        assert_eq!(report.errors.len(), 2);
        assert!(report.errors.iter().all(|e| e.len() == 1));
        let (again, _) = greedy_pretrain(data.view(), &[8, 5, 3], 1, 0.1, 4, 7).unwrap();
        assert_eq!(enc, again);
        assert!(greedy_pretrain(Array2::zeros((0, 8)).view(), &[8, 3], 1, 0.1, 4, 0).is_err());
        assert!(greedy_pretrain(data.view(), &[7, 3], 1, 0.1, 4, 0).is_err());
    }

    #[test]
    fn ocr_layer_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let data = Array2::from_shape_simple_fn((20, 128), || if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        let (enc, _) = greedy_pretrain(data.view(), &[128, 100, 100, 64], 1, 0.1, 10, 0).unwrap();
        let shapes: Vec<_> = enc.layers().iter().map(|w| w.dim()).collect();
        assert_eq!(shapes, vec![(129, 100), (101, 100), (101, 64)]);
    }

    #[test]
    fn scaling_is_folded_into_first_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(3.0, 4.0).unwrap();
        let mut data = Array2::from_shape_simple_fn((30, 4), || normal.sample(&mut rng));
        data.column_mut(2).fill(5.0);
        let scaling = MinMax::fit(data.view()).unwrap();
        let scaled = scaling.apply(data.view());
        let layer = RbmLayer::random(4, 3, &mut rng);
        let mut folded = layer.w.clone();
        scaling.fold_into(&mut folded);
        let direct = augment(scaled.view()).dot(&layer.w);
        let via_fold = augment(data.view()).dot(&folded);
        assert!((&direct - &via_fold).iter().all(|v| v.abs() < 1e-10));
    }
}
