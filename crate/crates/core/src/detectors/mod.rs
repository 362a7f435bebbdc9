//! Residual-based anomaly detectors and the stealthiness/effectiveness metrics.

mod evaluation;
pub mod recurrent;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

pub use evaluation::{
    effectiveness, evaluate_stealthiness, AlarmStats, Effectiveness, StealthReport,
};
pub use recurrent::{RecurrentConfig, RecurrentDetectorModel, RecurrentScorer};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectorError {
    #[error("innovation covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("false-alarm probability must lie in (0, 1), got {0}")]
    InvalidProbability(f64),
    #[error("residual has {residual} entries but covariance is {rows}x{cols}")]
    ShapeMismatch {
        residual: usize,
        rows: usize,
        cols: usize,
    },
    #[error("trace groups do not line up: {0}")]
    MismatchedTraces(String),
    #[error("scoring window needs at least 2 samples, got {0}")]
    WindowTooShort(usize),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    TrainingDiverged { epoch: usize, loss: f64 },
    #[error("not enough training data: {0}")]
    InsufficientData(String),
    #[error("model file is malformed: {0}")]
    Malformed(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Outcome of one detector on one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorVerdict {
    pub step: u64,
    pub alarm: bool,
    pub score: f64,
}

impl DetectorVerdict {
    /// Alarm iff `score` strictly exceeds `threshold`.
    pub fn from_threshold(step: u64, score: f64, threshold: f64) -> Self {
        Self {
            step,
            alarm: score > threshold,
            score,
        }
    }
}

/// `r^T S^-1 r`.
pub fn chi2_score(r: &DVector<f64>, s: &DMatrix<f64>) -> Result<f64, DetectorError> {
    if s.nrows() != r.len() || s.ncols() != r.len() {
        return Err(DetectorError::ShapeMismatch {
            residual: r.len(),
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    let chol = s
        .clone()
        .cholesky()
        .ok_or(DetectorError::NotPositiveDefinite)?;
    Ok(r.dot(&chol.solve(r)))
}

fn check_probability(p: f64) -> Result<(), DetectorError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(DetectorError::InvalidProbability(p))
    }
}

/// Score above which a `dof`-dimensional chi-square variable falls with
/// probability `p_fa`.
pub fn chi2_threshold(dof: usize, p_fa: f64) -> Result<f64, DetectorError> {
    check_probability(p_fa)?;
    let dist = ChiSquared::new(dof as f64).map_err(|_| DetectorError::ShapeMismatch {
        residual: dof,
        rows: 0,
        cols: 0,
    })?;
    Ok(dist.inverse_cdf(1.0 - p_fa))
}

/// Chi-square detector with one threshold per residual dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chi2Detector {
    pub p_fa: f64,
    pub thresholds: BTreeMap<usize, f64>,
}

impl Chi2Detector {
    pub fn calibrated(p_fa: f64, dims: &[usize]) -> Result<Self, DetectorError> {
        let mut thresholds = BTreeMap::new();
        for &d in dims {
            thresholds.insert(d, chi2_threshold(d, p_fa)?);
        }
        Ok(Self { p_fa, thresholds })
    }

    pub fn threshold(&self, dof: usize) -> Result<f64, DetectorError> {
        match self.thresholds.get(&dof) {
            Some(t) => Ok(*t),
            None => chi2_threshold(dof, self.p_fa),
        }
    }

    pub fn evaluate(
        &self,
        step: u64,
        score: f64,
        dof: usize,
    ) -> Result<DetectorVerdict, DetectorError> {
        Ok(DetectorVerdict::from_threshold(
            step,
            score,
            self.threshold(dof)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CusumParams {
    /// Slack subtracted from each centred score.
    pub drift: f64,
    /// Alarm level for the cumulative statistic.
    pub threshold: f64,
}

/// One-sided CUSUM over chi-square scores centred on their expected value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cusum {
    pub params: CusumParams,
    pub statistic: f64,
}

/// `g <- max(0, g + score - expected - drift)`; alarm and reset when `g > threshold`.
pub fn cusum_step(
    g: f64,
    score: f64,
    expected: f64,
    params: &CusumParams,
    step: u64,
) -> (f64, DetectorVerdict) {
    let next = (g + score - expected - params.drift).max(0.0);
    let verdict = DetectorVerdict::from_threshold(step, next, params.threshold);
    (if verdict.alarm { 0.0 } else { next }, verdict)
}

impl Cusum {
    pub fn new(params: CusumParams) -> Self {
        Self {
            params,
            statistic: 0.0,
        }
    }

    pub fn step(&mut self, step: u64, score: f64, expected: f64) -> DetectorVerdict {
        let (g, verdict) = cusum_step(self.statistic, score, expected, &self.params, step);
        self.statistic = g;
        verdict
    }

    pub fn reset(&mut self) {
        self.statistic = 0.0;
    }
}

/// Alarm threshold giving a per-step alarm rate of about `p_fa` on the
/// nominal streams. Each stream is a sequence of `(score, expected)` pairs.
pub fn calibrate_cusum(
    streams: &[Vec<(f64, f64)>],
    drift: f64,
    p_fa: f64,
) -> Result<CusumParams, DetectorError> {
    check_probability(p_fa)?;
    let total: usize = streams.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(DetectorError::InsufficientData(
            "no nominal scores for CUSUM".into(),
        ));
    }
    let rate = |h: f64| {
        let params = CusumParams {
            drift,
            threshold: h,
        };
        let mut alarms = 0usize;
        for s in streams {
            let mut c = Cusum::new(params);
            for (k, (score, expected)) in s.iter().enumerate() {
                alarms += c.step(k as u64, *score, *expected).alarm as usize;
            }
        }
        alarms as f64 / total as f64
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    while rate(hi) > p_fa {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(DetectorError::InsufficientData(
                "CUSUM threshold does not converge".into(),
            ));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > p_fa {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CusumParams {
        drift,
        threshold: hi,
    })
}
