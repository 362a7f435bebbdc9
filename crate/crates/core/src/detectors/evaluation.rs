use nalgebra::Vector3;
use serde::Serialize;

use super::DetectorError;

/// Alarm rates of one detector over a group of runs aligned at step 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlarmStats {
    /// Fraction of runs alarming at each aligned step (over runs that reach it).
    pub per_step_rate: Vec<f64>,
    /// Alarms over all steps of all runs.
    pub overall_rate: f64,
    pub runs: usize,
    pub steps: usize,
}

impl AlarmStats {
    pub fn from_traces(traces: &[Vec<bool>]) -> Self {
        let longest = traces.iter().map(Vec::len).max().unwrap_or(0);
        let mut alarms = vec![0usize; longest];
        let mut present = vec![0usize; longest];
        for t in traces {
            for (k, a) in t.iter().enumerate() {
                alarms[k] += *a as usize;
                present[k] += 1;
            }
        }
        let per_step_rate = alarms
            .iter()
            .zip(&present)
            .map(|(a, n)| *a as f64 / *n as f64)
            .collect();
        let steps: usize = present.iter().sum();
        let total: usize = alarms.iter().sum();
        Self {
            per_step_rate,
            overall_rate: if steps == 0 {
                0.0
            } else {
                total as f64 / steps as f64
            },
            runs: traces.len(),
            steps,
        }
    }

    /// Largest per-step alarm rate.
    pub fn peak_rate(&self) -> f64 {
        self.per_step_rate.iter().copied().fold(0.0, f64::max)
    }
}

/// False-alarm statistics of nominal runs against detection statistics of
/// the paired attacked runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StealthReport {
    pub false_alarm: AlarmStats,
    pub detection: AlarmStats,
    pub p_fa: f64,
    pub p_td: f64,
    /// `max_t (p_td(t) - p_fa(t))`.
    pub max_step_gap: f64,
    pub epsilon: f64,
    /// Per-step condition: `p_td(t) - p_fa(t) <= epsilon` for every `t`.
    pub epsilon_stealthy: bool,
}

impl StealthReport {
    pub fn aggregate_gap(&self) -> f64 {
        self.p_td - self.p_fa
    }
}

/// Compares alarm traces of nominal and attacked runs. Run `i` of each group
/// must share the seed and cover the same aligned steps.
pub fn evaluate_stealthiness(
    nominal: &[Vec<bool>],
    attacked: &[Vec<bool>],
    epsilon: f64,
) -> Result<StealthReport, DetectorError> {
    if nominal.is_empty() || nominal.len() != attacked.len() {
        return Err(DetectorError::MismatchedTraces(format!(
            "{} nominal runs vs {} attacked runs",
            nominal.len(),
            attacked.len()
        )));
    }
    if let Some(i) = nominal
        .iter()
        .zip(attacked)
        .position(|(a, b)| a.len() != b.len())
    {
        return Err(DetectorError::MismatchedTraces(format!(
            "run {i}: {} nominal steps vs {} attacked steps",
            nominal[i].len(),
            attacked[i].len()
        )));
    }
    let false_alarm = AlarmStats::from_traces(nominal);
    let detection = AlarmStats::from_traces(attacked);
    let max_step_gap = detection
        .per_step_rate
        .iter()
        .zip(&false_alarm.per_step_rate)
        .map(|(td, fa)| td - fa)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_step_gap = if max_step_gap.is_finite() {
        max_step_gap
    } else {
        0.0
    };
    Ok(StealthReport {
        p_fa: false_alarm.overall_rate,
        p_td: detection.overall_rate,
        false_alarm,
        detection,
        max_step_gap,
        epsilon,
        epsilon_stealthy: max_step_gap <= epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Effectiveness {
    pub alpha: f64,
    pub effective: bool,
    pub first_crossing: Option<usize>,
    pub peak: f64,
}

/// Whether the deviation trace ever reaches `alpha` (in norm).
pub fn effectiveness(trace: &[Vector3<f64>], alpha: f64) -> Effectiveness {
    let first_crossing = trace.iter().position(|p| p.norm() >= alpha);
    let peak = trace.iter().map(|p| p.norm()).fold(0.0, f64::max);
    Effectiveness {
        alpha,
        effective: first_crossing.is_some(),
        first_crossing,
        peak,
    }
}
