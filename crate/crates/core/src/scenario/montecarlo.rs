use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::attack::{AttackMode, StopReason};
use crate::control::MissionKind;
use crate::detectors::{effectiveness, evaluate_stealthiness, AlarmStats, StealthReport};

use super::calibration::DetectorSetup;
use super::config::ScenarioConfig;
use super::nodes::run_scenario;
use super::record::{RunRecord, StepRow};
use super::SimError;

const DETECTORS: [(&str, fn(&StepRow) -> Option<bool>); 3] = [
    ("chi2", |r| Some(r.chi2_alarm)),
    ("cusum", |r| r.cusum_alarm),
    ("recurrent", |r| r.rnn_alarm),
];

/// Fraction of effective runs for the report to flag the attack as effective.
const EFFECTIVE_QUORUM: f64 = 0.9;

/// Outcome of one run (and its nominal twin when attacked).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub index: usize,
    pub seed: u64,
    pub steps: usize,
    pub touchdown: bool,
    pub attack_start: Option<u64>,
    pub attack_stop: Option<u64>,
    pub stop_reason: Option<StopReason>,
    /// Largest lateral relative-marker deviation during the attack, m.
    pub peak_deviation: f64,
    /// Steps from the attack start until the deviation first reached alpha.
    pub first_crossing: Option<usize>,
    /// Lateral vehicle-to-marker distance at the attack stop or the end, m.
    pub final_offset: f64,
    pub effective: bool,
}

/// Per-detector statistics. Without an attack only the false-alarm side is filled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectorSummary {
    pub name: String,
    pub false_alarm: AlarmStats,
    pub stealth: Option<StealthReport>,
}

impl DetectorSummary {
    pub fn p_fa(&self) -> f64 {
        self.stealth
            .as_ref()
            .map_or(self.false_alarm.overall_rate, |s| s.p_fa)
    }

    /// Mean alarm rate over the attack windows.
    pub fn p_td(&self) -> Option<f64> {
        self.stealth.as_ref().map(|s| s.p_td)
    }

    /// Largest per-step alarm rate over the attack windows.
    pub fn peak_td(&self) -> Option<f64> {
        self.stealth.as_ref().map(|s| s.detection.peak_rate())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub mission: MissionKind,
    pub attacked: bool,
    pub image_only: bool,
    pub alpha: f64,
    pub epsilon: f64,
    pub detectors: Vec<DetectorSummary>,
    pub run_summaries: Vec<RunSummary>,
}

struct RunOutcome {
    summary: RunSummary,
    /// Alarm traces per detector: (nominal, attacked) over the attack
    /// window, or the whole nominal run without an attack.
    traces: Vec<Option<(Vec<bool>, Option<Vec<bool>>)>>,
}

fn alarms(rows: &[StepRow], f: fn(&StepRow) -> Option<bool>) -> Option<Vec<bool>> {
    rows.iter().map(f).collect()
}

fn summarise(
    index: usize,
    cfg: &ScenarioConfig,
    nominal: &RunRecord,
    attacked: Option<&RunRecord>,
) -> RunOutcome {
    let main = attacked.unwrap_or(nominal);
    let window = attacked.and_then(RunRecord::attack_window);
    let deviation: Vec<_> = window
        .clone()
        .map(|w| {
            main.rows[w]
                .iter()
                .map(StepRow::lateral_deviation)
                .collect()
        })
        .unwrap_or_default();
    let eff = effectiveness(&deviation, cfg.attack.alpha);
    let final_offset = main.final_offset().unwrap_or(f64::NAN);
    let effective = match cfg.mission {
        MissionKind::Gvt => eff.effective,
        MissionKind::Vtol => window.is_some() && final_offset >= cfg.attack.alpha,
    };
    let summary = RunSummary {
        index,
        seed: main.seed,
        steps: main.rows.len(),
        touchdown: main.touchdown,
        attack_start: main.attack_start,
        attack_stop: main.attack_stop.map(|s| s.0),
        stop_reason: main.attack_stop.map(|s| s.1),
        peak_deviation: eff.peak,
        first_crossing: eff.first_crossing,
        final_offset,
        effective,
    };
    let traces = DETECTORS
        .iter()
        .map(|(_, f)| match attacked {
            None => alarms(&nominal.rows, *f).map(|n| (n, None)),
            Some(a) => {
                let w = window.clone()?;
                let end = w.end.min(nominal.rows.len());
                if w.start >= end {
                    return None;
                }
                let n = alarms(&nominal.rows[w.start..end], *f)?;
                let t = alarms(&a.rows[w.start..end], *f)?;
                Some((n, Some(t)))
            }
        })
        .collect();
    RunOutcome { summary, traces }
}

/// Runs `n_runs` missions with seeds `cfg.seed + i`. With the attack
/// enabled every seed is run twice, nominal and attacked, and detection
/// is compared over the attack window.
pub fn monte_carlo(
    cfg: &ScenarioConfig,
    n_runs: usize,
    detectors: &DetectorSetup,
) -> Result<MonteCarloReport, SimError> {
    if n_runs == 0 {
        return Err(SimError::Config("at least one run is required".into()));
    }
    cfg.validate()?;
    let attacked = cfg.attack.enabled;
    let nominal_cfg = cfg.nominal();
    let outcomes = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let seed = cfg.seed.wrapping_add(i as u64);
            let wrap = |e| SimError::Run {
                index: i,
                seed,
                source: Box::new(e),
            };
            let nominal = run_scenario(&nominal_cfg, seed, detectors).map_err(wrap)?;
            let attack = if attacked {
                Some(run_scenario(cfg, seed, detectors).map_err(wrap)?)
            } else {
                None
            };
            Ok(summarise(i, cfg, &nominal, attack.as_ref()))
        })
        .collect::<Result<Vec<_>, SimError>>()?;

    let mut summaries = Vec::new();
    for (k, (name, _)) in DETECTORS.iter().enumerate() {
        let per_run: Vec<_> = outcomes
            .iter()
            .filter_map(|o| o.traces[k].clone())
            .collect();
        // a detector missing from any run is absent from the setup
        if attacked {
            if per_run.is_empty() {
                continue;
            }
            let nom: Vec<Vec<bool>> = per_run.iter().map(|(n, _)| n.clone()).collect();
            let att: Vec<Vec<bool>> = per_run
                .iter()
                .map(|(_, a)| a.clone().unwrap_or_default())
                .collect();
            let stealth = evaluate_stealthiness(&nom, &att, cfg.detectors.epsilon)?;
            summaries.push(DetectorSummary {
                name: name.to_string(),
                false_alarm: stealth.false_alarm.clone(),
                stealth: Some(stealth),
            });
        } else {
            if per_run.len() != outcomes.len() {
                continue;
            }
            let nom: Vec<Vec<bool>> = per_run.into_iter().map(|(n, _)| n).collect();
            summaries.push(DetectorSummary {
                name: name.to_string(),
                false_alarm: AlarmStats::from_traces(&nom),
                stealth: None,
            });
        }
    }
    Ok(MonteCarloReport {
        runs: n_runs,
        mission: cfg.mission,
        attacked,
        image_only: cfg.attack.mode == AttackMode::ImageOnly,
        alpha: cfg.attack.alpha,
        epsilon: cfg.detectors.epsilon,
        detectors: summaries,
        run_summaries: outcomes.into_iter().map(|o| o.summary).collect(),
    })
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "nan".into()
    }
}

impl MonteCarloReport {
    pub fn detector(&self, name: &str) -> Option<&DetectorSummary> {
        self.detectors.iter().find(|d| d.name == name)
    }

    /// Fraction of runs in which the attack was effective.
    pub fn effective_fraction(&self) -> f64 {
        self.run_summaries.iter().filter(|r| r.effective).count() as f64 / self.runs as f64
    }

    /// Mean peak lateral deviation over runs in which the attack started.
    pub fn mean_peak_deviation(&self) -> f64 {
        let v: Vec<f64> = self
            .run_summaries
            .iter()
            .filter(|r| r.attack_start.is_some())
            .map(|r| r.peak_deviation)
            .collect();
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    }

    /// Machine-readable summary block (TOML).
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mission = match self.mission {
            MissionKind::Gvt => "gvt",
            MissionKind::Vtol => "vtol",
        };
        writeln!(s, "runs = {}", self.runs).unwrap();
        writeln!(s, "mission = \"{mission}\"").unwrap();
        writeln!(s, "attacked = {}", self.attacked).unwrap();
        writeln!(s, "image_only = {}", self.image_only).unwrap();
        writeln!(s, "alpha = {}", num(self.alpha)).unwrap();
        writeln!(s, "epsilon = {}", num(self.epsilon)).unwrap();
        if self.attacked {
            writeln!(s, "effective_fraction = {}", num(self.effective_fraction())).unwrap();
            writeln!(
                s,
                "mean_peak_deviation = {}",
                num(self.mean_peak_deviation())
            )
            .unwrap();
            writeln!(
                s,
                "alpha_effective = {}",
                self.effective_fraction() >= EFFECTIVE_QUORUM
            )
            .unwrap();
        }
        for d in &self.detectors {
            writeln!(s, "\n[{}]", d.name).unwrap();
            writeln!(s, "p_fa = {}", num(d.p_fa())).unwrap();
            if let Some(st) = &d.stealth {
                writeln!(s, "p_td = {}", num(st.p_td)).unwrap();
                writeln!(s, "peak_td = {}", num(st.detection.peak_rate())).unwrap();
                writeln!(s, "max_step_gap = {}", num(st.max_step_gap)).unwrap();
                writeln!(s, "epsilon_stealthy = {}", st.epsilon_stealthy).unwrap();
            }
        }
        s
    }

    /// Per-step alarm rates, one pair of columns per detector.
    pub fn alarm_rates_csv(&self) -> String {
        let mut s = String::from("step");
        for d in &self.detectors {
            write!(s, ",{0}_fa,{0}_td", d.name).unwrap();
        }
        s.push('\n');
        let len = self
            .detectors
            .iter()
            .map(|d| d.false_alarm.per_step_rate.len())
            .max()
            .unwrap_or(0);
        for k in 0..len {
            write!(s, "{k}").unwrap();
            for d in &self.detectors {
                let fa = d
                    .false_alarm
                    .per_step_rate
                    .get(k)
                    .copied()
                    .unwrap_or(f64::NAN);
                let td = d
                    .stealth
                    .as_ref()
                    .and_then(|st| st.detection.per_step_rate.get(k).copied())
                    .unwrap_or(f64::NAN);
                write!(s, ",{fa:.16e},{td:.16e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn runs_csv(&self) -> String {
        let mut s = String::from(
            "index,seed,steps,touchdown,attack_start,attack_stop,stop_reason,peak_deviation,first_crossing,final_offset,effective\n",
        );
        let o = |v: Option<u64>| v.map_or(String::new(), |v| v.to_string());
        for r in &self.run_summaries {
            writeln!(
                s,
                "{},{},{},{},{},{},{},{:.16e},{},{:.16e},{}",
                r.index,
                r.seed,
                r.steps,
                r.touchdown as u8,
                o(r.attack_start),
                o(r.attack_stop),
                r.stop_reason.map_or(String::new(), |x| format!("{x:?}")),
                r.peak_deviation,
                o(r.first_crossing.map(|v| v as u64)),
                r.final_offset,
                r.effective as u8,
            )
            .unwrap();
        }
        s
    }

    /// Writes `summary.toml`, `alarm_rates.csv` and `runs.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SimError> {
        std::fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
        for (name, body) in [
            ("summary.toml", self.summary()),
            ("alarm_rates.csv", self.alarm_rates_csv()),
            ("runs.csv", self.runs_csv()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| SimError::io(&p, e))?;
        }
        Ok(())
    }
}
