use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, EpochLog};
use super::config::TrainConfig;
use super::metrics::{evaluate_split, MetricsBreakdown};
use crate::data::{extend_distractors, make_batch, sample_masks, AnnotationRecord, BatchSpec, Dataset, MaskSample, Split};
use crate::error::{Error, Result};
use crate::model::{build_loss, init_model, ModelParams, PackedInput};
use crate::nn::{AdamW, Graph, ReduceMode};

pub const CONFIG_FILE: &str = "config.json";
pub const LOG_FILE: &str = "log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const RESULT_FILE: &str = "result.json";
pub const TIMING_FILE: &str = "timing.json";

/// Independent random streams of a run. Parameter init uses the seed's
/// default stream, so none of these perturb it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Stream {
    Shuffle = 1,
    Masks = 2,
    TrainDistractors = 3,
    EvalDistractors = 4,
}

pub(crate) fn epoch_rng(seed: u64, stream: Stream, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | epoch as u64);
    rng
}

/// Records of `split`, each extended to `m` candidates from the split's object pool.
pub(crate) fn split_records(data: &Dataset, split: Split, m: usize, rng: &mut ChaCha8Rng) -> Result<Vec<AnnotationRecord>> {
    let records = data.split(split);
    if let Some(r) = records.iter().find(|r| r.objects.len() > m) {
        return Err(Error::Config(format!("annotation {:?} has {} objects, more than {m}", r.id, r.objects.len())));
    }
    if records.iter().all(|r| r.objects.len() == m) {
        return Ok(records);
    }
    let pool = data.object_pool(split);
    records.iter().map(|r| extend_distractors(r, &pool, m, rng)).collect()
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for the config echo, log, checkpoints and result.
    pub out_dir: Option<PathBuf>,
    /// A `last.ckpt` to continue from; `best.ckpt` next to it is picked up if present.
    pub resume: Option<PathBuf>,
    /// Print one line per epoch to stderr.
    pub progress: bool,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Validation breakdown of the selected (best val-all) checkpoint.
    pub best_val: MetricsBreakdown,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<PathBuf>,
    pub best_params: ModelParams<f32>,
    pub final_params: ModelParams<f32>,
}

impl RunResult {
    pub fn train_losses(&self) -> Vec<f64> {
        self.log.iter().map(|l| l.train_loss).collect()
    }
}

/// Contents of `result.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub variant: String,
    pub best_epoch: usize,
    pub selection: String,
    pub val: MetricsBreakdown,
    pub val_visual: Option<f64>,
    pub val_blind: Option<f64>,
    pub val_all: f64,
}

fn write_log(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for l in log {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn append_log(path: &Path, entry: &EpochLog) -> Result<()> {
    let mut f = fs::OpenOptions::new().append(true).create(true).open(path)?;
    let mut line = serde_json::to_vec(entry)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

struct State {
    params: ModelParams<f32>,
    optimizer: AdamW<f32>,
    step: u64,
    epoch: usize,
    log: Vec<EpochLog>,
    best: Option<(usize, MetricsBreakdown, ModelParams<f32>)>,
}

fn fresh_state(cfg: &TrainConfig) -> Result<State> {
    let params = init_model::<f32>(&cfg.model, cfg.seed)?;
    let optimizer = AdamW::new(cfg.adamw(), params.tensors());
    Ok(State { params, optimizer, step: 0, epoch: 0, log: Vec::new(), best: None })
}

fn resumed_state(cfg: &TrainConfig, path: &Path) -> Result<State> {
    let ckpt = read_checkpoint(path)?;
    let mut expect = ckpt.train.clone();
    expect.epochs = cfg.epochs;
    if expect != *cfg {
        return Err(Error::Checkpoint("resume configuration differs from the checkpoint's".into()));
    }
    let optimizer = ckpt.optimizer.ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state".into()))?;
    let best = match (ckpt.best_epoch, ckpt.best_val) {
        (Some(e), Some(m)) => {
            let best_path = path.with_file_name(BEST_CHECKPOINT);
            let params = if ckpt.epoch == e || !best_path.exists() {
                ckpt.params.clone()
            } else {
                read_checkpoint(&best_path)?.params
            };
            Some((e, m, params))
        }
        _ => None,
    };
    Ok(State { params: ckpt.params, optimizer, step: ckpt.step, epoch: ckpt.epoch, log: ckpt.log, best })
}

fn checkpoint_of(cfg: &TrainConfig, s: &State, params: &ModelParams<f32>, with_optimizer: bool) -> Checkpoint {
    Checkpoint {
        train: cfg.clone(),
        step: s.step,
        epoch: s.epoch,
        best_epoch: s.best.as_ref().map(|b| b.0),
        best_val: s.best.as_ref().map(|b| b.1),
        log: s.log.clone(),
        params: params.clone(),
        optimizer: with_optimizer.then(|| s.optimizer.clone()),
    }
}

/// Trains on the train split, validating on the val split after every epoch.
///
/// Augmentation masks are drawn fresh per batch; validation is mask-free.
/// The parameters with the best val-all accuracy (earliest on ties) are kept.
pub fn train_run(data: &Dataset, cfg: &TrainConfig, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    if data.dim() != cfg.model.feature_dim {
        return Err(Error::Config(format!("data has feature dim {}, model expects {}", data.dim(), cfg.model.feature_dim)));
    }
    if data.split(Split::Train).is_empty() {
        return Err(Error::Empty("train split"));
    }
    if data.split(Split::Val).is_empty() {
        return Err(Error::Empty("val split"));
    }
    let started = Instant::now();
    let mode = ReduceMode::from_deterministic(cfg.deterministic);
    let schedule = cfg.schedule();
    let spec = BatchSpec { max_views: cfg.model.max_views, max_tokens: cfg.model.max_tokens, views: Some(cfg.views) };

    let mut s = match &opts.resume {
        Some(p) => resumed_state(cfg, p)?,
        None => fresh_state(cfg)?,
    };
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(cfg)?)?;
        write_log(&dir.join(LOG_FILE), &s.log)?;
    }

    while s.epoch < cfg.epochs {
        let epoch = s.epoch;
        let mut records = split_records(data, Split::Train, cfg.distractors, &mut epoch_rng(cfg.seed, Stream::TrainDistractors, epoch))?;
        records.shuffle(&mut epoch_rng(cfg.seed, Stream::Shuffle, epoch));
        let mut mask_rng = epoch_rng(cfg.seed, Stream::Masks, epoch);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for chunk in records.chunks(cfg.batch_size) {
            let mut batch = make_batch(chunk, &data.objects, &data.language, &spec, None)?;
            let masks = (0..batch.size)
                .map(|b| {
                    let counts = batch.view_counts(b);
                    sample_masks(&mut mask_rng, &counts, batch.token_count(b), cfg.p_view, cfg.p_lang)
                })
                .collect::<Result<Vec<MaskSample>>>()?;
            batch.apply_masks(&masks)?;
            let input = PackedInput::<f32>::from_batch(&batch)?;
            lr = schedule.lr_at(s.step);
            let (loss, grads) = {
                let mut g = Graph::new(s.params.tensors(), mode);
                let (root, _) = build_loss(&mut g, &s.params, &input)?;
                let loss = g.value(root).data()[0];
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {} step {}", epoch + 1, s.step)));
                }
                (loss, g.backward(root)?.into_params())
            };
            s.optimizer.step(s.params.tensors_mut(), &grads, lr)?;
            loss_sum += loss as f64 * batch.size as f64;
            s.step += 1;
        }
        s.epoch += 1;

        let val = evaluate_split(&s.params, data, Split::Val, cfg.views, cfg.distractors, cfg.seed, mode)?;
        let entry = EpochLog {
            epoch: s.epoch,
            train_loss: loss_sum / records.len() as f64,
            val_visual: val.visual(),
            val_blind: val.blind(),
            val_all: val.all(),
            lr_last: lr,
        };
        if opts.progress {
            eprintln!(
                "epoch {:>3}  loss {:.4}  val {:.3}  lr {:.2e}",
                entry.epoch, entry.train_loss, entry.val_all, entry.lr_last
            );
        }
        s.log.push(entry.clone());
        let improved = s.best.as_ref().is_none_or(|b| val.all() > b.1.all());
        if improved {
            s.best = Some((s.epoch, val, s.params.clone()));
        }
        if let Some(dir) = &opts.out_dir {
            append_log(&dir.join(LOG_FILE), &entry)?;
            if improved {
                write_checkpoint(&dir.join(BEST_CHECKPOINT), &checkpoint_of(cfg, &s, &s.params, false))?;
            }
            write_checkpoint(&dir.join(LAST_CHECKPOINT), &checkpoint_of(cfg, &s, &s.params, true))?;
        }
    }

    let (best_epoch, best_val, best_params) = s.best.clone().ok_or(Error::Empty("completed epochs"))?;
    let wall = started.elapsed().as_secs_f64();
    let checkpoint = opts.out_dir.as_ref().map(|d| d.join(BEST_CHECKPOINT));
    if let Some(dir) = &opts.out_dir {
        let summary = RunSummary {
            seed: cfg.seed,
            variant: cfg.model.variant.to_string(),
            best_epoch,
            selection: "best val_all, earliest epoch on ties".into(),
            val: best_val,
            val_visual: best_val.visual(),
            val_blind: best_val.blind(),
            val_all: best_val.all(),
        };
        fs::write(dir.join(RESULT_FILE), serde_json::to_string_pretty(&summary)?)?;
        fs::write(dir.join(TIMING_FILE), serde_json::to_string(&serde_json::json!({ "wall_clock_secs": wall }))?)?;
    }
    Ok(RunResult {
        seed: cfg.seed,
        log: s.log,
        best_epoch,
        best_val,
        wall_clock_secs: wall,
        checkpoint,
        best_params,
        final_params: s.params,
    })
}
