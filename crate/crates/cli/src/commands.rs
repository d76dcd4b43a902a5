use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dseq::gradcheck::{run_gradcheck, GradcheckOptions, GROUPS};
use dseq::io::{
    frames_matrix, gen_synthetic, load_generic, load_model, load_ocr, read_generic_records, save_model,
    write_generic, SyntheticHmmParams,
};
use dseq::trainer::{
    cross_validate, evaluate, evaluate_independent, pretrain, train_online, EpochRecord, ModelState,
};
use dseq::{Dataset, LabeledSequence, TrainConfig};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{apply_overrides, load_config, render_config};
use crate::{DataArgs, EvalArgs, Format, GradcheckArgs, PredictArgs, SynthArgs, TrainArgs};

/// OCR frame error (percent) under 10-fold cross-validation and 100 sweeps,
/// as published for this model with and without the independent stage.
pub const OCR_REFERENCE: (f64, f64) = (0.63, 1.56);

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn check(message: impl Into<String>) -> Self {
        Self::new(1, message)
    }

    fn config(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }

    fn data(message: impl Into<String>) -> Self {
        Self::new(3, message)
    }

    fn mismatch(message: impl Into<String>) -> Self {
        Self::new(4, message)
    }
}

impl From<dseq::Error> for CliError {
    fn from(e: dseq::Error) -> Self {
        let code = match &e {
            dseq::Error::Argument(_) => 2,
            dseq::Error::Mismatch(_) => 4,
            dseq::Error::Parse { .. } | dseq::Error::Format(_) | dseq::Error::Io(_) => 3,
        };
        Self::new(code, e.to_string())
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

type CliResult<T = ()> = Result<T, CliError>;

fn load_dataset(args: &DataArgs) -> CliResult<Dataset> {
    Ok(match args.format {
        Format::Ocr => load_ocr(&args.data)?,
        Format::Generic => load_generic(&args.data)?,
    })
}

/// Loads labeled data indexed by the model's alphabet.
fn load_for_model(args: &DataArgs, model: &ModelState) -> CliResult<Dataset> {
    let data = match args.format {
        Format::Ocr => load_ocr(&args.data)?.relabel(&model.alphabet)?,
        Format::Generic => {
            let records = read_generic_records(&args.data)?;
            let mut sequences = Vec::with_capacity(records.len());
            for rec in records {
                let names = rec
                    .labels
                    .ok_or_else(|| CliError::data(format!("record {:?} has no labels", rec.id)))?;
                let labels = names
                    .iter()
                    .map(|n| {
                        model
                            .alphabet
                            .index_of(n)
                            .ok_or_else(|| CliError::mismatch(format!("label {n:?} is not in the model alphabet")))
                    })
                    .collect::<CliResult<Vec<_>>>()?;
                sequences.push(LabeledSequence::new(rec.id, frames_matrix(&rec.frames), labels)?);
            }
            let dim = sequences[0].dim();
            Dataset::new(sequences, model.alphabet.clone(), dim)?
        }
    };
    model.check_compatible(&data)?;
    Ok(data)
}

fn parse_sets(set: &[String]) -> CliResult<Vec<(String, String)>> {
    set.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| CliError::config(format!("--set expects KEY=VALUE, got {s:?}")))
        })
        .collect()
}

fn resolve_config(file: Option<&Path>, set: &[String]) -> CliResult<TrainConfig> {
    let base = match file {
        Some(p) => load_config(p).map_err(CliError::config)?,
        None => TrainConfig::default(),
    };
    apply_overrides(&base, &parse_sets(set)?).map_err(CliError::config)
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let tmp = with_suffix(path, ".tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Serialize)]
struct FileDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Serialize)]
struct Reference {
    with_pretraining_percent: f64,
    without_pretraining_percent: f64,
    protocol: &'static str,
}

#[derive(Serialize)]
struct Timings {
    pretrain_secs: f64,
    online_secs: f64,
    total_secs: f64,
}

#[derive(Serialize)]
struct Artifacts {
    model: FileDigest,
    /// The resolved config in key = value form, usable as `--config`.
    config: PathBuf,
    log: Option<PathBuf>,
    manifest: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    config: TrainConfig,
    data: FileDigest,
    format: &'static str,
    sequences: usize,
    frames: usize,
    config_file: Option<FileDigest>,
    seeds: serde_json::Map<String, serde_json::Value>,
    holdout_fold: Option<usize>,
    holdout_error: Option<f64>,
    final_train_error: Option<f64>,
    reference: Option<Reference>,
    artifacts: Artifacts,
    timings: Timings,
}

/// `pretrain` and `train`.
pub fn train(args: &TrainArgs, online: bool) -> CliResult {
    let started = Instant::now();
    let mut config = resolve_config(args.config.as_deref(), &args.set)?;
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.use_rbm &= !args.no_rbm;
    config.use_independent &= !args.no_independent;
    config.validate()?;

    let full = load_dataset(&args.data)?;
    let (train_set, test_set) = match args.holdout_fold {
        None => (full.clone(), None),
        Some(f) => {
            let folds = full
                .source_fold_assignment()
                .ok_or_else(|| CliError::config("--holdout-fold needs a dataset with a fold column"))?;
            if f >= folds.k {
                return Err(CliError::config(format!("fold {f} out of range (dataset has {})", folds.k)));
            }
            let (tr, te) = folds.train_test(f);
            (full.subset(&tr), Some(full.subset(&te)))
        }
    };

    let (model, _) = pretrain(&train_set, &config)?;
    let pretrain_secs = started.elapsed().as_secs_f64();

    let log_path = online.then(|| args.log.clone().unwrap_or_else(|| with_suffix(&args.out, ".log.jsonl")));
    let online_start = Instant::now();
    let (model, final_train_error) = match &log_path {
        Some(path) => {
            let tmp = with_suffix(path, ".tmp");
            let mut log = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
            let mut log_err = None;
            let (model, records) = train_online(&train_set, model, &config, |r: &EpochRecord| {
                let line = serde_json::to_string(r).expect("record serializes");
                if let Err(e) = writeln!(log, "{line}") {
                    log_err.get_or_insert(e);
                }
                eprintln!(
                    "epoch {:>3}  objective {:.6}  train error {:.6}  violations {}",
                    r.epoch, r.objective, r.train_error, r.violations
                );
            })?;
            if let Some(e) = log_err {
                return Err(io_err(&tmp)(e));
            }
            log.flush().map_err(io_err(&tmp))?;
            drop(log);
            fs::rename(&tmp, path).map_err(io_err(path))?;
            (model, records.last().map(|r| r.train_error))
        }
        None => (model, None),
    };
    let online_secs = online_start.elapsed().as_secs_f64();

    save_model(&model, &args.out)?;
    let holdout_error = match &test_set {
        Some(t) => {
            let e = evaluate(t, &model)?.frame_error;
            println!("held-out frame error {e:.6}");
            Some(e)
        }
        None => None,
    };
    let reference = (args.data.format == Format::Ocr).then(|| {
        println!(
            "reference (10-fold CV, 100 sweeps): {:.2}% with pretraining, {:.2}% without",
            OCR_REFERENCE.0, OCR_REFERENCE.1
        );
        Reference {
            with_pretraining_percent: OCR_REFERENCE.0,
            without_pretraining_percent: OCR_REFERENCE.1,
            protocol: "10-fold cross-validation, 100 sweeps",
        }
    });

    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".manifest.json"));
    let config_out = with_suffix(&args.out, ".cfg");
    write_atomic(&config_out, render_config(&config).as_bytes())?;
    let mut seeds = serde_json::Map::new();
    seeds.insert("root".into(), config.seed.into());
    for (name, s) in config.stage_seeds() {
        seeds.insert(name.into(), s.into());
    }
    let manifest = RunManifest {
        command: if online { "train" } else { "pretrain" },
        config: config.clone(),
        data: FileDigest {
            path: args.data.data.clone(),
            sha256: sha256_file(&args.data.data)?,
        },
        format: match args.data.format {
            Format::Ocr => "ocr",
            Format::Generic => "generic",
        },
        sequences: train_set.len(),
        frames: train_set.num_frames(),
        config_file: match &args.config {
            Some(p) => Some(FileDigest {
                path: p.clone(),
                sha256: sha256_file(p)?,
            }),
            None => None,
        },
        seeds,
        holdout_fold: args.holdout_fold,
        holdout_error,
        final_train_error,
        reference,
        artifacts: Artifacts {
            model: FileDigest {
                path: args.out.clone(),
                sha256: sha256_file(&args.out)?,
            },
            config: config_out,
            log: log_path,
            manifest: manifest_path.clone(),
        },
        timings: Timings {
            pretrain_secs,
            online_secs,
            total_secs: started.elapsed().as_secs_f64(),
        },
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path, json.as_bytes())?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult {
    if let Some(k) = args.folds {
        let config = resolve_config(args.config.as_deref(), &args.set)?;
        let data = load_dataset(&args.data)?;
        let cv = cross_validate(&data, k, &config, args.seed)?;
        println!("fold  train  test  frame_error  baseline_error");
        for f in &cv.folds {
            println!(
                "{:>4}  {:>5}  {:>4}  {:.6}     {:.6}",
                f.fold, f.train_sequences, f.test_sequences, f.error, f.baseline_error
            );
        }
        println!("mean               {:.6}     {:.6}", cv.mean_error, cv.mean_baseline_error);
    } else {
        let path = args.model.as_ref().expect("clap requires --model without --folds");
        let model = load_model(path)?;
        let mut data = load_for_model(&args.data, &model)?;
        if let Some(f) = args.fold {
            let folds = data
                .source_fold_assignment()
                .ok_or_else(|| CliError::config("--fold needs a dataset with a fold column"))?;
            if f >= folds.k {
                return Err(CliError::config(format!("fold {f} out of range (dataset has {})", folds.k)));
            }
            data = data.subset(&folds.train_test(f).1);
        }
        let e = evaluate(&data, &model)?;
        println!("frame error {:.6} ({} of {} frames)", e.frame_error, e.errors, e.frames);
        let ind = evaluate_independent(&data, &model)?;
        println!("context-free frame error {:.6}", ind.frame_error);
    }
    if args.data.format == Format::Ocr {
        println!(
            "reference (10-fold CV, 100 sweeps): {:.2}% with pretraining, {:.2}% without",
            OCR_REFERENCE.0, OCR_REFERENCE.1
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct Prediction<'a> {
    id: &'a str,
    labels: Vec<&'a str>,
}

pub fn predict(args: &PredictArgs) -> CliResult {
    let model = load_model(&args.model)?;
    // (id, frames, gold labels as model indices)
    let mut items = Vec::new();
    match args.data.format {
        Format::Ocr => {
            let data = load_for_model(&args.data, &model)?;
            for s in data.sequences {
                items.push((s.id, s.frames, Some(s.labels)));
            }
        }
        Format::Generic => {
            for rec in read_generic_records(&args.data.data)? {
                let gold = match &rec.labels {
                    Some(names) => Some(
                        names
                            .iter()
                            .map(|n| {
                                model.alphabet.index_of(n).ok_or_else(|| {
                                    CliError::mismatch(format!("label {n:?} is not in the model alphabet"))
                                })
                            })
                            .collect::<CliResult<Vec<_>>>()?,
                    ),
                    None => None,
                };
                items.push((rec.id, frames_matrix(&rec.frames), gold));
            }
        }
    }

    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(io_err(p))?)),
        None => Box::new(io::stdout().lock()),
    };
    let (mut errors, mut scored) = (0usize, 0usize);
    for (id, frames, gold) in &items {
        if frames.ncols() != model.input_dim() {
            return Err(CliError::mismatch(format!(
                "sequence {id:?} has frame width {}, model expects {}",
                frames.ncols(),
                model.input_dim()
            )));
        }
        let path = model.decode(frames.view())?;
        if let Some(g) = gold {
            errors += g.iter().zip(&path).filter(|(a, b)| a != b).count();
            scored += g.len();
        }
        let rec = Prediction {
            id,
            labels: path.iter().map(|&y| model.alphabet.name(y).expect("decoded label")).collect(),
        };
        let line = serde_json::to_string(&rec).expect("prediction serializes");
        writeln!(out, "{line}").map_err(|e| CliError::data(e.to_string()))?;
    }
    out.flush().map_err(|e| CliError::data(e.to_string()))?;
    if scored > 0 {
        eprintln!("frame error {:.6} ({errors} of {scored} frames)", errors as f64 / scored as f64);
    }
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs) -> CliResult {
    if args.seeds == 0 {
        return Err(CliError::config("--seeds must be at least 1"));
    }
    if let Some(g) = &args.break_sign {
        if !GROUPS.contains(&g.as_str()) {
            return Err(CliError::config(format!("unknown group {g:?}; expected one of {GROUPS:?}")));
        }
    }
    let opts = GradcheckOptions {
        seeds: args.seeds,
        break_group: args.break_sign.clone(),
        ..GradcheckOptions::default()
    };
    let report = run_gradcheck(&opts)?;
    println!("group  entries  worst_rel_error");
    for g in &report.groups {
        println!("{:<5}  {:>7}  {:.3e}", g.group, g.checked, g.worst_rel_error);
    }
    let failing = report.failing();
    if failing.is_empty() {
        println!("all groups within {:.0e}", report.tolerance);
        Ok(())
    } else {
        Err(CliError::check(format!(
            "gradient check failed for: {}",
            failing.join(", ")
        )))
    }
}

pub fn synth(args: &SynthArgs) -> CliResult {
    let params = SyntheticHmmParams {
        k: args.k,
        d: args.d,
        transition_strength: args.strength,
        emission_noise: args.noise,
        n: args.n,
        t_min: args.t_min,
        t_max: args.t_max,
        seed: args.seed,
    };
    params.validate().map_err(|e| CliError::config(e.to_string()))?;
    let (data, _) = gen_synthetic(&params).map_err(|e| CliError::config(e.to_string()))?;
    write_generic(&data, &args.out)?;
    println!(
        "{} sequences, {} frames, K={}, d={}, strength {}, noise {}, seed {}",
        data.len(),
        data.num_frames(),
        data.num_labels(),
        data.dim(),
        args.strength,
        args.noise,
        args.seed
    );
    Ok(())
}
