//! The deep encoder (stacked logistic layers), the linear top layer shared
//! with the chain model, the per-frame squared loss, and backpropagation.
//!
//! Every layer stores its bias as the final row of its weight matrix: a
//! layer mapping `d_in -> d_out` is a `(d_in + 1) x d_out` matrix applied to
//! the input extended with a constant 1.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math::logistic;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    layers: Vec<Array2<f64>>,
    sizes: Vec<usize>,
}

impl EncoderWeights {
    pub fn new(layers: Vec<Array2<f64>>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::arg("encoder needs at least one layer"))?;
        let mut sizes = vec![first.nrows() - 1];
        for (l, w) in layers.iter().enumerate() {
            let expected = sizes[l] + 1;
            if w.nrows() != expected || w.ncols() == 0 {
                return Err(Error::arg(format!(
                    "encoder layer {l} has shape {:?}, expected {expected} rows",
                    w.dim()
                )));
            }
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::arg(format!("encoder layer {l} has non-finite weights")));
            }
            sizes.push(w.ncols());
        }
        Ok(Self { layers, sizes })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Self::new(sizes.windows(2).map(|p| Array2::zeros((p[0] + 1, p[1]))).collect())
    }

    /// Gaussian weights with standard deviation `1/sqrt(fan_in)`, zero biases.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|p| {
                let normal = Normal::new(0.0, 1.0 / (p[0] as f64).sqrt()).expect("valid std");
                let mut w = Array2::zeros((p[0] + 1, p[1]));
                w.slice_mut(s![..p[0], ..])
                    .mapv_inplace(|_| normal.sample(rng));
                w
            })
            .collect();
        Self::new(layers)
    }

    /// `[d_0, d_1, ..., H]`.
    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn code_dim(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn layers(&self) -> &[Array2<f64>] {
        &self.layers
    }

    /// Mutable access for in-place updates. Shapes must not change.
    pub fn layers_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.layers
    }

    pub fn l1_norm(&self) -> f64 {
        self.layers.iter().flat_map(|w| w.iter()).map(|v| v.abs()).sum()
    }

    /// Codes `h` for a `T x d` block of frames.
    pub fn encode(&self, frames: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_frames(frames)?;
        let mut a = frames.to_owned();
        for w in &self.layers {
            a = logistic_layer(a.view(), w);
        }
        Ok(a)
    }

    fn check_frames(&self, frames: ArrayView2<'_, f64>) -> Result<()> {
        if frames.ncols() != self.input_dim() {
            return Err(Error::arg(format!(
                "frame dimension {} does not match encoder input {}",
                frames.ncols(),
                self.input_dim()
            )));
        }
        if !frames.iter().all(|v| v.is_finite()) {
            return Err(Error::arg("frames contain non-finite values"));
        }
        Ok(())
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::arg(format!(
            "layer sizes must list the input and at least one positive hidden width, got {sizes:?}"
        )));
    }
    Ok(())
}

/// Append a constant-1 column.
pub(crate) fn augment(x: ArrayView2<'_, f64>) -> Array2<f64> {
    concatenate![Axis(1), x, Array2::ones((x.nrows(), 1))]
}

fn logistic_layer(x: ArrayView2<'_, f64>, w: &Array2<f64>) -> Array2<f64> {
    let d = x.ncols();
    let mut z = x.dot(&w.slice(s![..d, ..]));
    z += &w.row(d);
    z.mapv_inplace(logistic);
    z
}

/// Linear read-out `y_hat = W^T h + c`. `W` doubles as the chain model's data term.
#[derive(Debug, Clone, PartialEq)]
pub struct TopLayer {
    /// `H x K`.
    pub w: Array2<f64>,
    pub c: Array1<f64>,
}

impl TopLayer {
    pub fn new(w: Array2<f64>, c: Array1<f64>) -> Result<Self> {
        if w.ncols() != c.len() {
            return Err(Error::arg(format!(
                "top layer W has {} columns but c has length {}",
                w.ncols(),
                c.len()
            )));
        }
        if !w.iter().chain(c.iter()).all(|v| v.is_finite()) {
            return Err(Error::arg("top layer has non-finite entries"));
        }
        Ok(Self { w, c })
    }

    pub fn zeros(code_dim: usize, num_labels: usize) -> Self {
        Self {
            w: Array2::zeros((code_dim, num_labels)),
            c: Array1::zeros(num_labels),
        }
    }

    /// `W ~ N(0, std^2)`, `c = 0`.
    pub fn random<R: Rng + ?Sized>(code_dim: usize, num_labels: usize, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        Self {
            w: Array2::from_shape_simple_fn((code_dim, num_labels), || normal.sample(rng)),
            c: Array1::zeros(num_labels),
        }
    }

    pub fn code_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn num_labels(&self) -> usize {
        self.w.ncols()
    }

    /// Row-wise `W^T h_t + c` for a `T x H` block of codes.
    pub fn predict(&self, codes: ArrayView2<'_, f64>) -> Array2<f64> {
        codes.dot(&self.w) + &self.c
    }
}

/// Activations of a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Post-logistic output of each encoder layer; the last one is the code `h`.
    pub activations: Vec<Array1<f64>>,
    pub prediction: Array1<f64>,
}

impl ForwardTrace {
    pub fn code(&self) -> ArrayView1<'_, f64> {
        self.activations.last().expect("non-empty").view()
    }
}

/// Activations for a block of `T` frames processed together.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTrace {
    /// Layer `l` is `T x d_{l+1}`.
    pub activations: Vec<Array2<f64>>,
    /// `T x K`.
    pub predictions: Array2<f64>,
}

impl BatchTrace {
    pub fn codes(&self) -> ArrayView2<'_, f64> {
        self.activations.last().expect("non-empty").view()
    }
}

fn check_top(enc: &EncoderWeights, top: &TopLayer) -> Result<()> {
    if top.code_dim() != enc.code_dim() {
        return Err(Error::arg(format!(
            "top layer expects codes of width {}, encoder produces {}",
            top.code_dim(),
            enc.code_dim()
        )));
    }
    Ok(())
}

pub fn forward_batch(frames: ArrayView2<'_, f64>, enc: &EncoderWeights, top: &TopLayer) -> Result<BatchTrace> {
    enc.check_frames(frames)?;
    check_top(enc, top)?;
    let mut activations = Vec::with_capacity(enc.layers.len());
    let mut a = frames.to_owned();
    for w in &enc.layers {
        a = logistic_layer(a.view(), w);
        activations.push(a.clone());
    }
    let predictions = top.predict(a.view());
    Ok(BatchTrace {
        activations,
        predictions,
    })
}

pub fn nn_forward(frame: ArrayView1<'_, f64>, enc: &EncoderWeights, top: &TopLayer) -> Result<ForwardTrace> {
    let frames = frame.insert_axis(Axis(0));
    let trace = forward_batch(frames, enc, top)?;
    Ok(ForwardTrace {
        activations: trace.activations.into_iter().map(|a| a.row(0).to_owned()).collect(),
        prediction: trace.predictions.row(0).to_owned(),
    })
}

/// `||prediction - onehot(label)||^2`.
pub fn frame_loss(prediction: ArrayView1<'_, f64>, label: usize) -> f64 {
    prediction
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let target = if k == label { 1.0 } else { 0.0 };
            (p - target) * (p - target)
        })
        .sum()
}

/// Gradients with the same shapes as the encoder and top layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub layers: Vec<Array2<f64>>,
    pub w: Array2<f64>,
    pub c: Array1<f64>,
}

impl NetGrads {
    pub fn zeros(enc: &EncoderWeights, top: &TopLayer) -> Self {
        Self {
            layers: enc.layers.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            w: Array2::zeros(top.w.raw_dim()),
            c: Array1::zeros(top.c.raw_dim()),
        }
    }

    pub fn add_assign(&mut self, other: &NetGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            *a += b;
        }
        self.w += &other.w;
        self.c += &other.c;
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.w.iter())
            .chain(self.c.iter())
            .all(|&v| v == 0.0)
    }
}

/// Gradient of `loss_weight * sum_t frame_loss_t + sum_t <code_grads_t, h_t>`
/// with respect to every encoder layer and the top layer.
///
/// `code_grads` (`T x H`) is an externally supplied `d loss / d h`; the
/// trainer uses it to push the chain model's signal into the encoder.
pub fn backprop_batch(
    frames: ArrayView2<'_, f64>,
    labels: &[usize],
    trace: &BatchTrace,
    code_grads: Option<ArrayView2<'_, f64>>,
    loss_weight: f64,
    enc: &EncoderWeights,
    top: &TopLayer,
) -> Result<NetGrads> {
    let t = frames.nrows();
    let k = top.num_labels();
    if labels.len() != t || trace.predictions.nrows() != t {
        return Err(Error::arg("labels, frames and trace disagree on sequence length"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::arg(format!("label {bad} out of range for K={k}")));
    }
    if let Some(g) = code_grads {
        if g.dim() != (t, enc.code_dim()) {
            return Err(Error::arg(format!(
                "code gradient has shape {:?}, expected {:?}",
                g.dim(),
                (t, enc.code_dim())
            )));
        }
    }

    let mut d_pred = trace.predictions.clone();
    for (mut row, &y) in d_pred.rows_mut().into_iter().zip(labels) {
        row[y] -= 1.0;
    }
    d_pred *= 2.0 * loss_weight;

    let codes = trace.codes();
    let w_grad = codes.t().dot(&d_pred);
    let c_grad = d_pred.sum_axis(Axis(0));

    let mut d_act = d_pred.dot(&top.w.t());
    if let Some(g) = code_grads {
        d_act += &g;
    }

    let mut layer_grads = vec![Array2::zeros((0, 0)); enc.layers.len()];
    for l in (0..enc.layers.len()).rev() {
        let out = &trace.activations[l];
        let d_z = d_act * &out.mapv(|a| a * (1.0 - a));
        let input = if l == 0 { frames } else { trace.activations[l - 1].view() };
        layer_grads[l] = augment(input).t().dot(&d_z);
        if l > 0 {
            let d_in = input.ncols();
            d_act = d_z.dot(&enc.layers[l].slice(s![..d_in, ..]).t());
        } else {
            d_act = Array2::zeros((0, 0));
        }
    }
    Ok(NetGrads {
        layers: layer_grads,
        w: w_grad,
        c: c_grad,
    })
}

/// Single-frame form of [`backprop_batch`].
pub fn backprop_frame(
    frame: ArrayView1<'_, f64>,
    label: usize,
    extra_code_grad: Option<ArrayView1<'_, f64>>,
    loss_weight: f64,
    enc: &EncoderWeights,
    top: &TopLayer,
) -> Result<NetGrads> {
    let frames = frame.insert_axis(Axis(0));
    let trace = forward_batch(frames, enc, top)?;
    backprop_batch(
        frames,
        &[label],
        &trace,
        extra_code_grad.map(|g| g.insert_axis(Axis(0))),
        loss_weight,
        enc,
        top,
    )
}

/// `lambda3 * sign(w)` per encoder weight, with `sign(0) = 0`.
pub fn l1_subgrad(enc: &EncoderWeights, lambda3: f64) -> Vec<Array2<f64>> {
    enc.layers
        .iter()
        .map(|w| {
            w.mapv(|v| {
                if v > 0.0 {
                    lambda3
                } else if v < 0.0 {
                    -lambda3
                } else {
                    0.0
                }
            })
        })
        .collect()
}
