use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use nalgebra::Vector3;

use crate::attack::{AttackStepLog, StopReason};
use crate::control::{MissionKind, MissionPhase};
use crate::dynamics::RotorCommand;
use crate::state::State12;

use super::nodes::{FlightLog, PlantLog};
use super::SimError;

const STATE_NAMES: [&str; 12] = [
    "px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r",
];

/// Column order of the per-step CSV. Unavailable values are written as `NaN`.
pub static COLUMNS: std::sync::LazyLock<Vec<String>> = std::sync::LazyLock::new(|| {
    let mut c: Vec<String> = ["step", "time", "phase", "attack_active"]
        .map(String::from)
        .to_vec();
    for prefix in ["true", "est", "att", "s"] {
        c.extend(STATE_NAMES.iter().map(|n| format!("{prefix}_{n}")));
    }
    for prefix in ["marker", "pcam_true", "pcam_fake", "pcam_seen"] {
        c.extend(["x", "y", "z"].iter().map(|n| format!("{prefix}_{n}")));
    }
    c.extend(
        [
            "chi2_score",
            "chi2_dof",
            "chi2_alarm",
            "cusum_stat",
            "cusum_alarm",
            "rnn_score",
            "rnn_alarm",
            "ekf_nis",
            "vision_nis",
            "u1",
            "u2",
            "u3",
            "u4",
        ]
        .map(String::from),
    );
    c
});

/// Columns holding integers; written without an exponent.
const INTEGER_COLUMNS: [&str; 7] = [
    "step",
    "phase",
    "attack_active",
    "chi2_dof",
    "chi2_alarm",
    "cusum_alarm",
    "rnn_alarm",
];

/// Everything logged for one step of a run.
#[derive(Debug, Clone)]
pub struct StepRow {
    pub step: u64,
    pub time: f64,
    pub phase: MissionPhase,
    pub attack_active: bool,
    pub true_state: State12,
    pub estimate: State12,
    pub attacker_estimate: Option<State12>,
    pub s: State12,
    pub marker: Vector3<f64>,
    pub p_cam_true: Vector3<f64>,
    /// Relative marker position the transmitted data portrays; equals the
    /// true one unless the engine falsified the camera on this step.
    pub p_cam_fake: Vector3<f64>,
    pub p_cam_seen: Option<Vector3<f64>>,
    pub chi2_score: f64,
    pub chi2_dof: usize,
    pub chi2_alarm: bool,
    pub cusum_stat: Option<f64>,
    pub cusum_alarm: Option<bool>,
    pub rnn_score: Option<f64>,
    pub rnn_alarm: Option<bool>,
    pub ekf_nis: f64,
    pub vision_nis: Option<f64>,
    pub command: RotorCommand,
}

fn opt(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

fn opt_bool(v: Option<bool>) -> f64 {
    v.map_or(f64::NAN, |b| b as u8 as f64)
}

fn read_opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

fn read_bool(v: f64) -> Result<bool, SimError> {
    match v {
        0.0 => Ok(false),
        1.0 => Ok(true),
        other => Err(SimError::Format(format!("expected 0 or 1, got {other}"))),
    }
}

impl StepRow {
    pub fn assemble(plant: &PlantLog, attack: Option<&AttackStepLog>, flight: &FlightLog) -> Self {
        let active = attack.is_some_and(|a| a.active);
        Self {
            step: plant.step,
            time: plant.time,
            phase: flight.phase,
            attack_active: active,
            true_state: plant.state,
            estimate: flight.estimate,
            attacker_estimate: attack.map(|a| a.attacker_estimate),
            s: attack.map_or_else(State12::zeros, |a| a.s),
            marker: plant.marker,
            p_cam_true: plant.p_cam,
            p_cam_fake: attack.and_then(|a| a.fake_p_cam).unwrap_or(plant.p_cam),
            p_cam_seen: flight.p_cam_seen,
            chi2_score: flight.chi2.score,
            chi2_dof: flight.chi2_dof,
            chi2_alarm: flight.chi2.alarm,
            cusum_stat: flight.cusum.map(|v| v.score),
            cusum_alarm: flight.cusum.map(|v| v.alarm),
            rnn_score: flight.recurrent.map(|v| v.score),
            rnn_alarm: flight.recurrent.map(|v| v.alarm),
            ekf_nis: flight.ekf_nis,
            vision_nis: flight.vision_nis,
            command: flight.command,
        }
    }

    pub fn to_fields(&self) -> Vec<f64> {
        let mut f = vec![
            self.step as f64,
            self.time,
            self.phase.code() as f64,
            self.attack_active as u8 as f64,
        ];
        f.extend(self.true_state.as_slice());
        f.extend(self.estimate.as_slice());
        match &self.attacker_estimate {
            Some(x) => f.extend(x.as_slice()),
            None => f.extend([f64::NAN; 12]),
        }
        f.extend(self.s.as_slice());
        f.extend(self.marker.iter());
        f.extend(self.p_cam_true.iter());
        f.extend(self.p_cam_fake.iter());
        match &self.p_cam_seen {
            Some(p) => f.extend(p.iter()),
            None => f.extend([f64::NAN; 3]),
        }
        f.extend([
            self.chi2_score,
            self.chi2_dof as f64,
            self.chi2_alarm as u8 as f64,
            opt(self.cusum_stat),
            opt_bool(self.cusum_alarm),
            opt(self.rnn_score),
            opt_bool(self.rnn_alarm),
            self.ekf_nis,
            opt(self.vision_nis),
        ]);
        f.extend(self.command.as_slice());
        f
    }

    pub fn from_fields(f: &[f64]) -> Result<Self, SimError> {
        if f.len() != COLUMNS.len() {
            return Err(SimError::Format(format!(
                "expected {} fields, got {}",
                COLUMNS.len(),
                f.len()
            )));
        }
        let state = |k: usize| State12::from_slice(&f[k..k + 12]);
        let vec3 = |k: usize| Vector3::new(f[k], f[k + 1], f[k + 2]);
        let phase = MissionPhase::from_code(f[2] as u8)
            .ok_or_else(|| SimError::Format(format!("unknown phase {}", f[2])))?;
        let att = state(28);
        let seen = vec3(61);
        let t = 64;
        Ok(Self {
            step: f[0] as u64,
            time: f[1],
            phase,
            attack_active: read_bool(f[3])?,
            true_state: state(4),
            estimate: state(16),
            attacker_estimate: (!att.as_slice().iter().all(|v| v.is_nan())).then_some(att),
            s: state(40),
            marker: vec3(52),
            p_cam_true: vec3(55),
            p_cam_fake: vec3(58),
            p_cam_seen: (!seen.iter().all(|v| v.is_nan())).then_some(seen),
            chi2_score: f[t],
            chi2_dof: f[t + 1] as usize,
            chi2_alarm: read_bool(f[t + 2])?,
            cusum_stat: read_opt(f[t + 3]),
            cusum_alarm: read_opt(f[t + 4]).map(read_bool).transpose()?,
            rnn_score: read_opt(f[t + 5]),
            rnn_alarm: read_opt(f[t + 6]).map(read_bool).transpose()?,
            ekf_nis: f[t + 7],
            vision_nis: read_opt(f[t + 8]),
            command: RotorCommand::new(f[t + 9], f[t + 10], f[t + 11], f[t + 12]),
        })
    }

    /// Field-by-field equality on the bit patterns, so `NaN == NaN`.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let (a, b) = (self.to_fields(), other.to_fields());
        a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits())
    }

    /// Lateral (image-plane) part of the true relative marker position.
    pub fn lateral_deviation(&self) -> Vector3<f64> {
        Vector3::new(self.p_cam_true.x, self.p_cam_true.y, 0.0)
    }
}

/// Per-step log of one mission.
#[derive(Debug, Clone, Default)]
pub struct RunRecord {
    pub seed: u64,
    pub mission: Option<MissionKind>,
    pub rows: Vec<StepRow>,
    /// Detector inputs per step; kept in memory for training, not exported.
    pub features: Vec<Vec<f64>>,
    pub attack_start: Option<u64>,
    pub attack_stop: Option<(u64, StopReason)>,
    pub touchdown: bool,
}

impl RunRecord {
    pub fn new(seed: u64, mission: MissionKind) -> Self {
        Self {
            seed,
            mission: Some(mission),
            ..Self::default()
        }
    }

    pub fn push_with_features(&mut self, row: StepRow, features: Vec<f64>) {
        self.rows.push(row);
        self.features.push(features);
    }

    pub fn push(&mut self, row: StepRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row indices from the attack start up to (excluding) the stop step.
    pub fn attack_window(&self) -> Option<Range<usize>> {
        let start = self.attack_start? as usize;
        let end = self
            .attack_stop
            .map_or(self.rows.len(), |(s, _)| s as usize)
            .min(self.rows.len());
        (start < end).then_some(start..end)
    }

    /// Lateral distance between the vehicle and the marker when the attack
    /// stopped, or at the end of the run.
    pub fn final_offset(&self) -> Option<f64> {
        let idx = match self.attack_stop {
            Some((s, _)) => (s as usize).min(self.rows.len().checked_sub(1)?),
            None => self.rows.len().checked_sub(1)?,
        };
        let row = &self.rows[idx];
        let d = row.true_state.position() - row.marker;
        Some(d.x.hypot(d.y))
    }

    pub fn to_csv(&self) -> String {
        rows_to_csv(&self.rows)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_csv()).map_err(|e| SimError::io(path, e))
    }

    /// Plain-text `key = value` summary (valid TOML).
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let mission = match self.mission {
            Some(MissionKind::Gvt) => "gvt",
            Some(MissionKind::Vtol) => "vtol",
            None => "unknown",
        };
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "mission = \"{mission}\"").unwrap();
        writeln!(s, "steps = {}", self.rows.len()).unwrap();
        writeln!(s, "touchdown = {}", self.touchdown).unwrap();
        if let Some(k) = self.attack_start {
            writeln!(s, "attack_start = {k}").unwrap();
        }
        if let Some((k, reason)) = self.attack_stop {
            writeln!(s, "attack_stop = {k}").unwrap();
            writeln!(s, "attack_stop_reason = \"{reason:?}\"").unwrap();
        }
        // Detectors that never ran get no line; TOML has no null.
        let alarms = |f: fn(&StepRow) -> Option<bool>| {
            let v: Vec<bool> = self.rows.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().filter(|a| **a).count() as f64 / v.len() as f64)
        };
        let rates: [(&str, fn(&StepRow) -> Option<bool>); 3] = [
            ("chi2", |r| Some(r.chi2_alarm)),
            ("cusum", |r| r.cusum_alarm),
            ("recurrent", |r| r.rnn_alarm),
        ];
        for (name, f) in rates {
            if let Some(rate) = alarms(f) {
                writeln!(s, "{name}_alarm_rate = {rate:.16e}").unwrap();
            }
        }
        if let Some(d) = self.final_offset() {
            writeln!(s, "final_lateral_offset = {d:.16e}").unwrap();
        }
        s
    }
}

fn format_value(out: &mut String, column: &str, v: f64) {
    if INTEGER_COLUMNS.contains(&column) && v.is_finite() {
        write!(out, "{}", v as i64).unwrap();
    } else {
        write!(out, "{v:.16e}").unwrap();
    }
}

pub(crate) fn rows_to_csv(rows: &[StepRow]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for row in rows {
        for (i, (v, name)) in row.to_fields().into_iter().zip(COLUMNS.iter()).enumerate() {
            if i > 0 {
                out.push(',');
            }
            format_value(&mut out, name, v);
        }
        out.push('\n');
    }
    out
}

/// Parses a file written by [`RunRecord::to_csv`].
pub fn rows_from_csv(text: &str) -> Result<Vec<StepRow>, SimError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| SimError::Format("missing header".into()))?;
    if header != COLUMNS.join(",") {
        return Err(SimError::Format("unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let fields = line
                .split(',')
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| SimError::Format(format!("{v:?}: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            StepRow::from_fields(&fields)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row(k: u64) -> StepRow {
        let f = k as f64;
        StepRow {
            step: k,
            time: f * 0.02,
            phase: MissionPhase::Track,
            attack_active: k.is_multiple_of(2),
            true_state: State12::from_slice(&[f / 3.0; 12]),
            estimate: State12::from_slice(&[-f / 7.0; 12]),
            attacker_estimate: (k > 0).then(|| State12::from_slice(&[0.1 + f; 12])),
            s: State12::from_slice(&[1e-300; 12]),
            marker: Vector3::new(1.0, 2.0, 0.0),
            p_cam_true: Vector3::new(0.1, -0.2, 5.0),
            p_cam_fake: Vector3::new(std::f64::consts::PI, -0.0, 5.0),
            p_cam_seen: (k != 1).then(|| Vector3::new(1.0 / 3.0, 2.0, 3.0)),
            chi2_score: 12.5 + f,
            chi2_dof: 15,
            chi2_alarm: k == 2,
            cusum_stat: Some(0.25),
            cusum_alarm: Some(false),
            rnn_score: None,
            rnn_alarm: None,
            ekf_nis: 11.0,
            vision_nis: Some(f64::MIN_POSITIVE),
            command: RotorCommand::new(1.0, 2.0, 3.0, 4.0e5 + 1.0 / 3.0),
        }
    }

    #[test]
    fn csv_round_trip_is_bitwise() {
        let rows: Vec<_> = (0..5).map(sample_row).collect();
        let text = rows_to_csv(&rows);
        let back = rows_from_csv(&text).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in rows.iter().zip(&back) {
            assert!(a.bitwise_eq(b));
        }
    }

    #[test]
    fn empty_record_is_header_only() {
        let r = RunRecord::new(3, MissionKind::Gvt);
        let text = r.to_csv();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.trim_end(), COLUMNS.join(","));
        assert!(rows_from_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn field_layout_matches_columns() {
        let row = sample_row(3);
        let f = row.to_fields();
        assert_eq!(f.len(), COLUMNS.len());
        let at = |name: &str| f[COLUMNS.iter().position(|c| c == name).unwrap()];
        assert_eq!(at("est_px"), row.estimate[0]);
        assert_eq!(at("att_r"), row.attacker_estimate.unwrap()[11]);
        assert_eq!(at("s_px"), 1e-300);
        assert_eq!(at("marker_y"), 2.0);
        assert_eq!(at("pcam_fake_x"), std::f64::consts::PI);
        assert_eq!(at("pcam_seen_x"), 1.0 / 3.0);
        assert_eq!(at("chi2_dof"), 15.0);
        assert_eq!(at("u4"), row.command.0[3]);
    }

    #[test]
    fn summary_is_toml() {
        let mut r = RunRecord::new(7, MissionKind::Vtol);
        r.push(sample_row(0));
        r.attack_start = Some(0);
        r.attack_stop = Some((0, StopReason::StepLimit));
        let parsed: toml::Table = r.summary().parse().unwrap();
        assert_eq!(parsed["seed"].as_integer(), Some(7));
        assert_eq!(parsed["steps"].as_integer(), Some(1));
        assert!(!parsed.contains_key("recurrent_alarm_rate"));
    }

    #[test]
    fn malformed_rows_rejected() {
        let header = COLUMNS.join(",");
        assert!(rows_from_csv("a,b\n").is_err());
        assert!(rows_from_csv(&format!("{header}\n1,2\n")).is_err());
    }
}
