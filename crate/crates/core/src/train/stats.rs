use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::metrics::MetricsBreakdown;
use crate::error::{Error, Result};

/// Mean and sample (n−1) standard deviation; a single sample has std 0.
pub fn mean_std(xs: &[f64]) -> Result<(f64, f64)> {
    if xs.is_empty() {
        return Err(Error::Empty("samples"));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Result<Self> {
        let (mean, std) = mean_std(xs)?;
        Ok(Self { mean, std, n: xs.len() })
    }
}

/// Per-field summary over seeds. A kind absent from every run summarizes to `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub visual: Option<MeanStd>,
    pub blind: Option<MeanStd>,
    pub all: MeanStd,
}

pub fn aggregate_seeds(results: &[MetricsBreakdown]) -> Result<SeedSummary> {
    if results.is_empty() {
        return Err(Error::Empty("seed results"));
    }
    let field = |f: fn(&MetricsBreakdown) -> Option<f64>| -> Result<Option<MeanStd>> {
        let xs: Vec<f64> = results.iter().filter_map(f).collect();
        if xs.is_empty() {
            Ok(None)
        } else {
            MeanStd::of(&xs).map(Some)
        }
    };
    let all: Vec<f64> = results.iter().map(|r| r.all()).collect();
    Ok(SeedSummary { visual: field(|r| r.visual())?, blind: field(|r| r.blind())?, all: MeanStd::of(&all)? })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-tailed.
    pub p: f64,
}

/// Welch's unpaired two-tailed t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Config("a t-test needs at least two samples per group".into()));
    }
    let (ma, sa) = mean_std(a)?;
    let (mb, sb) = mean_std(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sa * sa / na, sb * sb / nb);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::DegenerateTest);
    }
    let se2 = va + vb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    if t == 0.0 {
        return Ok(WelchResult { t, df, p: 1.0 });
    }
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(WelchResult { t, df, p })
}
