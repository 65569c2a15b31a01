use serde::{Deserialize, Serialize};

use crate::data::{make_batch, BatchSpec, Dataset, Kind, Split};
use crate::error::{Error, Result};
use crate::model::{forward, predict, ModelParams};
use crate::nn::ReduceMode;

use super::run::{epoch_rng, split_records, Stream};

/// Correct/total counts per annotation kind.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsBreakdown {
    pub visual_correct: usize,
    pub visual_n: usize,
    pub blind_correct: usize,
    pub blind_n: usize,
}

fn ratio(c: usize, n: usize) -> Option<f64> {
    (n > 0).then(|| c as f64 / n as f64)
}

impl MetricsBreakdown {
    pub fn from_outcomes(outcomes: impl IntoIterator<Item = (Kind, bool)>) -> Self {
        let mut m = Self::default();
        for (kind, correct) in outcomes {
            m.record(kind, correct);
        }
        m
    }

    pub fn record(&mut self, kind: Kind, correct: bool) {
        match kind {
            Kind::Visual => {
                self.visual_n += 1;
                self.visual_correct += correct as usize;
            }
            Kind::Blind => {
                self.blind_n += 1;
                self.blind_correct += correct as usize;
            }
        }
    }

    /// `None` when the split has no instance of that kind.
    pub fn visual(&self) -> Option<f64> {
        ratio(self.visual_correct, self.visual_n)
    }

    pub fn blind(&self) -> Option<f64> {
        ratio(self.blind_correct, self.blind_n)
    }

    pub fn all(&self) -> f64 {
        ratio(self.visual_correct + self.blind_correct, self.n()).unwrap_or(0.0)
    }

    pub fn n(&self) -> usize {
        self.visual_n + self.blind_n
    }
}

/// Instances per evaluation forward pass.
pub const EVAL_BATCH: usize = 64;

/// Accuracy of `params` on one split, with `views` views per object and
/// `distractors` candidates. No augmentation masks are applied. Extra
/// distractors are drawn from a fixed seed-derived stream, so repeated calls agree.
pub fn evaluate_split(
    params: &ModelParams<f32>,
    data: &Dataset,
    split: Split,
    views: usize,
    distractors: usize,
    seed: u64,
    mode: ReduceMode,
) -> Result<MetricsBreakdown> {
    let mut rng = epoch_rng(seed, Stream::EvalDistractors, 0);
    let records = split_records(data, split, distractors, &mut rng)?;
    if records.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let spec = BatchSpec { max_views: params.config.max_views, max_tokens: params.config.max_tokens, views: Some(views) };
    let mut metrics = MetricsBreakdown::default();
    for chunk in records.chunks(EVAL_BATCH) {
        let batch = make_batch(chunk, &data.objects, &data.language, &spec, None)?;
        for (out, rec) in forward(&batch, params, mode)?.iter().zip(chunk) {
            metrics.record(rec.kind, predict(&out.scores)? == rec.target);
        }
    }
    Ok(metrics)
}
