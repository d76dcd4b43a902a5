//! Finite-difference verification of the analytic objective gradient.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::dataset::{Dataset, LabelAlphabet, LabeledSequence};
use crate::error::Result;
use crate::trainer::{objective_gradient, objective_value, ModelGrads, ModelState, TrainConfig};

pub const GROUPS: [&str; 7] = ["A", "pi", "tau", "b", "W", "c", "omega"];

#[derive(Debug, Clone)]
pub struct GradcheckOptions {
    pub seeds: usize,
    pub step: f64,
    pub tolerance: f64,
    /// Parameters closer than this to zero are skipped for the `l1` kink.
    pub kink_margin: f64,
    pub layer_sizes: Vec<usize>,
    pub num_labels: usize,
    pub seq_len: usize,
    pub num_sequences: usize,
    pub lambda1: f64,
    pub lambda2_values: Vec<f64>,
    pub lambda3: f64,
    /// Negate the analytic gradient of this group (harness self-test).
    pub break_group: Option<String>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seeds: 5,
            step: 1e-5,
            tolerance: 1e-4,
            kink_margin: 1e-4,
            layer_sizes: vec![5, 4, 3],
            num_labels: 3,
            seq_len: 4,
            num_sequences: 2,
            lambda1: 0.1,
            lambda2_values: vec![0.0, 0.01],
            lambda3: 2e-4,
            break_group: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupResult {
    pub group: String,
    pub worst_rel_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupResult>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn failing(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !(g.worst_rel_error <= self.tolerance) || g.checked == 0)
            .map(|g| g.group.as_str())
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failing().is_empty()
    }
}

/// `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7)
}

fn random_instance(opts: &GradcheckOptions, seed: u64, lambda2: f64) -> Result<(Dataset, ModelState, TrainConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let k = opts.num_labels;
    let d = opts.layer_sizes[0];
    let sequences = (0..opts.num_sequences)
        .map(|i| {
            let frames = Array2::from_shape_simple_fn((opts.seq_len, d), || normal.sample(&mut rng));
            let labels = (0..opts.seq_len).map(|t| (t * 2 + i + seed as usize) % k).collect();
            LabeledSequence::new(format!("g{i}"), frames, labels)
        })
        .collect::<Result<Vec<_>>>()?;
    let alphabet = LabelAlphabet::new((0..k).map(|i| format!("y{i}")).collect())?;
    let dataset = Dataset::new(sequences, alphabet.clone(), d)?;
    let config = TrainConfig {
        lambda1: opts.lambda1,
        lambda2,
        lambda3: opts.lambda3,
        layers: opts.layer_sizes[1..].to_vec(),
        seed,
        ..TrainConfig::default()
    };
    let mut model = ModelState::init(alphabet, d, &config)?;
    let scale = Normal::new(0.0, 0.8).expect("valid std");
    for w in model.encoder.layers_mut() {
        w.mapv_inplace(|_| scale.sample(&mut rng));
    }
    for v in model
        .crf
        .transitions
        .iter_mut()
        .chain(model.crf.bias.iter_mut())
        .chain(model.crf.start.iter_mut())
        .chain(model.crf.end.iter_mut())
        .chain(model.top.c.iter_mut())
    {
        *v = scale.sample(&mut rng);
    }
    Ok((dataset, model, config))
}

/// Mutable views of one parameter group of a model, flattened.
fn group_values<'a>(model: &'a mut ModelState, group: &str) -> Vec<&'a mut f64> {
    match group {
        "A" => model.crf.transitions.iter_mut().collect(),
        "pi" => model.crf.start.iter_mut().collect(),
        "tau" => model.crf.end.iter_mut().collect(),
        "b" => model.crf.bias.iter_mut().collect(),
        "W" => model.top.w.iter_mut().collect(),
        "c" => model.top.c.iter_mut().collect(),
        "omega" => model.encoder.layers_mut().iter_mut().flat_map(|w| w.iter_mut()).collect(),
        other => panic!("unknown parameter group {other}"),
    }
}

fn group_grads(grads: &ModelGrads, group: &str) -> Vec<f64> {
    match group {
        "A" => grads.crf.transitions.iter().copied().collect(),
        "pi" => grads.crf.start.to_vec(),
        "tau" => grads.crf.end.to_vec(),
        "b" => grads.crf.bias.to_vec(),
        "W" => grads.w.iter().copied().collect(),
        "c" => grads.c.to_vec(),
        "omega" => grads.layers.iter().flat_map(|w| w.iter().copied()).collect(),
        other => panic!("unknown parameter group {other}"),
    }
}

/// Compares the analytic gradient of the full objective with central
/// differences, entry by entry, over `seeds x lambda2_values` instances.
pub fn run_gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut worst = vec![0.0f64; GROUPS.len()];
    let mut checked = vec![0usize; GROUPS.len()];
    for seed in 0..opts.seeds as u64 {
        for &lambda2 in &opts.lambda2_values {
            let (data, model, config) = random_instance(opts, seed, lambda2)?;
            let grads = objective_gradient(&data, &model, &config)?;
            for (gi, group) in GROUPS.iter().enumerate() {
                let mut analytic = group_grads(&grads, group);
                if opts.break_group.as_deref() == Some(*group) {
                    analytic.iter_mut().for_each(|v| *v = -*v);
                }
                let base = model.clone();
                let n = group_values(&mut base.clone(), group).len();
                for idx in 0..n {
                    let p = *group_values(&mut base.clone(), group)[idx];
                    if *group == "omega" && config.lambda3 > 0.0 && p.abs() <= opts.kink_margin.max(opts.step) {
                        continue;
                    }
                    let eval = |delta: f64| -> Result<f64> {
                        let mut m = base.clone();
                        *group_values(&mut m, group)[idx] = p + delta;
                        objective_value(&data, &m, &config)
                    };
                    let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
                    worst[gi] = worst[gi].max(relative_error(analytic[idx], numeric));
                    checked[gi] += 1;
                }
            }
        }
    }
    Ok(GradcheckReport {
        groups: GROUPS
            .iter()
            .zip(worst.iter().zip(&checked))
            .map(|(g, (&w, &c))| GroupResult {
                group: g.to_string(),
                worst_rel_error: w,
                checked: c,
            })
            .collect(),
        tolerance: opts.tolerance,
    })
}
