use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detectors::recurrent::train_recurrent;
use crate::detectors::{calibrate_cusum, Chi2Detector, CusumParams, RecurrentDetectorModel};

use super::config::ScenarioConfig;
use super::nodes::run_scenario;
use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Chi2,
    Cusum,
    Recurrent,
}

impl std::str::FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "chi2" | "χ²" | "chi-square" => Ok(Self::Chi2),
            "cusum" => Ok(Self::Cusum),
            "recurrent" | "rnn" | "gru" => Ok(Self::Recurrent),
            other => Err(format!(
                "unknown detector {other:?} (expected chi2, cusum or recurrent)"
            )),
        }
    }
}

/// Calibrated detector thresholds as stored next to a configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DetectorThresholds {
    pub p_fa: f64,
    /// Chi-square thresholds keyed by degrees of freedom.
    #[serde(default)]
    pub chi2: BTreeMap<String, f64>,
    #[serde(default)]
    pub cusum: Option<CusumParams>,
    #[serde(default)]
    pub recurrent: Option<RecurrentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecurrentEntry {
    /// Model file, relative to the thresholds file.
    pub model: PathBuf,
    pub threshold: f64,
}

impl DetectorThresholds {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        toml::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let text = toml::to_string(self).map_err(|e| SimError::Format(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| SimError::io(path, e))
    }

    pub fn chi2_detector(&self) -> Result<Chi2Detector, SimError> {
        let mut thresholds = BTreeMap::new();
        for (k, v) in &self.chi2 {
            let dof = k
                .parse::<usize>()
                .map_err(|_| SimError::Config(format!("chi2 key {k:?} is not a dimension")))?;
            thresholds.insert(dof, *v);
        }
        Ok(Chi2Detector {
            p_fa: self.p_fa,
            thresholds,
        })
    }
}

/// Detectors ready to be instantiated per run.
#[derive(Debug, Clone)]
pub struct DetectorSetup {
    pub chi2: Chi2Detector,
    pub cusum: Option<CusumParams>,
    pub recurrent: Option<Arc<RecurrentDetectorModel>>,
}

/// Chi-square dimensions the flight computer can produce: the filter
/// residual alone, or stacked with the 3-dimensional vision residual.
fn chi2_dims(cfg: &ScenarioConfig) -> [usize; 2] {
    let m = cfg.measurement.model().dim();
    [m, m + 3]
}

impl DetectorSetup {
    /// Chi-square only, with thresholds from the distribution quantile.
    pub fn analytic(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        Ok(Self {
            chi2: Chi2Detector::calibrated(cfg.detectors.p_fa, &chi2_dims(cfg))?,
            cusum: None,
            recurrent: None,
        })
    }

    /// Everything the sidecar provides; chi-square falls back to the quantile.
    pub fn from_thresholds(
        cfg: &ScenarioConfig,
        t: &DetectorThresholds,
        sidecar: &Path,
    ) -> Result<Self, SimError> {
        let mut chi2 = t.chi2_detector()?;
        let fallback = Chi2Detector::calibrated(cfg.detectors.p_fa, &chi2_dims(cfg))?;
        for (k, v) in fallback.thresholds {
            chi2.thresholds.entry(k).or_insert(v);
        }
        let recurrent = match &t.recurrent {
            Some(entry) => {
                let path = sidecar.parent().unwrap_or(Path::new("")).join(&entry.model);
                let model =
                    RecurrentDetectorModel::load(&path).map_err(|e| SimError::io(&path, e))?;
                Some(Arc::new(model))
            }
            None => None,
        };
        Ok(Self {
            chi2,
            cusum: t.cusum,
            recurrent,
        })
    }

    /// Detectors for the configuration stored at `config_path`: the sidecar
    /// when present, otherwise chi-square alone.
    pub fn for_config(cfg: &ScenarioConfig, config_path: &Path) -> Result<Self, SimError> {
        let sidecar = cfg.thresholds_path(config_path);
        if sidecar.exists() {
            Self::from_thresholds(cfg, &DetectorThresholds::load(&sidecar)?, &sidecar)
        } else {
            Self::analytic(cfg)
        }
    }
}

/// Detector inputs from nominal runs.
#[derive(Debug, Clone, Default)]
pub struct NominalTraces {
    /// `(chi-square score, degrees of freedom)` per step.
    pub scores: Vec<Vec<(f64, f64)>>,
    /// Recurrent-detector input per step.
    pub features: Vec<Vec<Vec<f64>>>,
}

/// Simulates `runs` nominal missions with seeds `first_seed + i`.
pub fn collect_nominal(
    cfg: &ScenarioConfig,
    runs: usize,
    first_seed: u64,
) -> Result<NominalTraces, SimError> {
    let nominal = cfg.nominal();
    let setup = DetectorSetup::analytic(&nominal)?;
    let records = (0..runs)
        .into_par_iter()
        .map(|i| {
            let seed = first_seed.wrapping_add(i as u64);
            run_scenario(&nominal, seed, &setup).map_err(|e| SimError::Run {
                index: i,
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut out = NominalTraces::default();
    for r in records {
        out.scores.push(
            r.rows
                .iter()
                .map(|row| (row.chi2_score, row.chi2_dof as f64))
                .collect(),
        );
        out.features.push(r.features);
    }
    Ok(out)
}

/// Calibrates one detector and merges it into `existing`. Returns the
/// updated thresholds and, for the recurrent detector, the trained model.
pub fn calibrate(
    cfg: &ScenarioConfig,
    kind: DetectorKind,
    p_fa: f64,
    existing: Option<DetectorThresholds>,
) -> Result<(DetectorThresholds, Option<RecurrentDetectorModel>), SimError> {
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(SimError::Config(format!(
            "p_fa must lie in (0, 1), got {p_fa}"
        )));
    }
    let mut out = existing.unwrap_or_default();
    if out.p_fa != p_fa {
        out = DetectorThresholds {
            p_fa,
            ..DetectorThresholds::default()
        };
    }
    let first_seed = cfg.detectors.calibration_seed;
    let runs = cfg.detectors.calibration_runs;
    let mut model = None;
    // Chi-square needs no traces, so it is always brought up to date.
    let det = Chi2Detector::calibrated(p_fa, &chi2_dims(cfg))?;
    out.chi2 = det
        .thresholds
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
    match kind {
        DetectorKind::Chi2 => {}
        DetectorKind::Cusum => {
            let traces = collect_nominal(cfg, runs, first_seed)?;
            out.cusum = Some(calibrate_cusum(
                &traces.scores,
                cfg.detectors.cusum_drift,
                p_fa,
            )?);
        }
        DetectorKind::Recurrent => {
            let traces = collect_nominal(cfg, runs, first_seed)?;
            let trained = train_recurrent(&traces.features, &cfg.detectors.recurrent, p_fa)?;
            out.recurrent = Some(RecurrentEntry {
                model: PathBuf::new(),
                threshold: trained.threshold,
            });
            model = Some(trained);
        }
    }
    Ok((out, model))
}

/// Calibrates `kind` for the configuration stored at `config_path` and
/// writes the sidecar (and the recurrent model next to it). Returns the
/// sidecar path.
pub fn calibrate_to_sidecar(
    cfg: &ScenarioConfig,
    config_path: &Path,
    kind: DetectorKind,
    p_fa: f64,
) -> Result<PathBuf, SimError> {
    let sidecar = cfg.thresholds_path(config_path);
    let existing = if sidecar.exists() {
        Some(DetectorThresholds::load(&sidecar)?)
    } else {
        None
    };
    let (mut thresholds, model) = calibrate(cfg, kind, p_fa, existing)?;
    if let (Some(model), Some(entry)) = (model, thresholds.recurrent.as_mut()) {
        let stem = sidecar
            .file_name()
            .and_then(|s| s.to_str())
            .and_then(|s| {
                s.strip_suffix(".thresholds.toml")
                    .or_else(|| s.strip_suffix(".toml"))
            })
            .unwrap_or("detector")
            .to_string();
        let file = PathBuf::from(format!("{stem}.recurrent.bin"));
        let path = sidecar.parent().unwrap_or(Path::new("")).join(&file);
        model.save(&path).map_err(|e| SimError::io(&path, e))?;
        entry.model = file;
    }
    thresholds.save(&sidecar)?;
    Ok(sidecar)
}
