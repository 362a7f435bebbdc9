//! Gated recurrent predictor of the next whitened residual. The anomaly
//! score is the norm of its one-step prediction error.

use std::collections::VecDeque;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DetectorError, DetectorVerdict};

const MAGIC: &[u8; 4] = b"SGRU";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrentConfig {
    pub hidden: usize,
    /// Samples per scoring window; the last one is the prediction target.
    pub window: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Offset between consecutive training windows.
    pub stride: usize,
    /// Fraction of the traces kept aside for threshold calibration.
    pub holdout_fraction: f64,
    /// Seed for weight initialisation and shuffling.
    pub seed: u64,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            window: 20,
            epochs: 6,
            learning_rate: 3e-3,
            batch_size: 16,
            stride: 10,
            holdout_fraction: 0.4,
            seed: 0x5eed,
        }
    }
}

impl RecurrentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden == 0 || self.window < 2 || self.batch_size == 0 || self.stride == 0 {
            return Err(
                "recurrent: hidden, batch_size and stride must be positive and window >= 2".into(),
            );
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err("recurrent.learning_rate must be positive".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err("recurrent.holdout_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
/// Matrices are row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    d: usize,
    h: usize,
}

impl Layout {
    fn wz(&self) -> usize {
        0
    }
    fn uz(&self) -> usize {
        self.wz() + self.h * self.d
    }
    fn bz(&self) -> usize {
        self.uz() + self.h * self.h
    }
    fn wr(&self) -> usize {
        self.bz() + self.h
    }
    fn ur(&self) -> usize {
        self.wr() + self.h * self.d
    }
    fn br(&self) -> usize {
        self.ur() + self.h * self.h
    }
    fn wn(&self) -> usize {
        self.br() + self.h
    }
    fn un(&self) -> usize {
        self.wn() + self.h * self.d
    }
    fn bn(&self) -> usize {
        self.un() + self.h * self.h
    }
    fn bun(&self) -> usize {
        self.bn() + self.h
    }
    fn wo(&self) -> usize {
        self.bun() + self.h
    }
    fn bo(&self) -> usize {
        self.wo() + self.d * self.h
    }
    fn len(&self) -> usize {
        self.bo() + self.d
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `out[i] += sum_j m[i, j] * v[j]` for a row-major `rows x v.len()` block.
fn mat_vec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[j] += sum_i m[i, j] * v[i]`.
fn mat_t_vec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (i, vi) in v.iter().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// `g[i, j] += a[i] * b[j]`.
fn outer_add(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (i, ai) in a.iter().enumerate() {
        for (gij, bj) in g[i * cols..(i + 1) * cols].iter_mut().zip(b) {
            *gij += ai * bj;
        }
    }
}

struct StepCache {
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    /// `Un h_prev + bun`
    g: Vec<f64>,
    h: Vec<f64>,
}

fn cell(p: &[f64], l: Layout, x: &[f64], h_prev: &[f64]) -> StepCache {
    let (d, h) = (l.d, l.h);
    let mut z = p[l.bz()..l.bz() + h].to_vec();
    mat_vec_add(&p[l.wz()..l.wz() + h * d], x, &mut z);
    mat_vec_add(&p[l.uz()..l.uz() + h * h], h_prev, &mut z);
    z.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut r = p[l.br()..l.br() + h].to_vec();
    mat_vec_add(&p[l.wr()..l.wr() + h * d], x, &mut r);
    mat_vec_add(&p[l.ur()..l.ur() + h * h], h_prev, &mut r);
    r.iter_mut().for_each(|v| *v = sigmoid(*v));

    let mut g = p[l.bun()..l.bun() + h].to_vec();
    mat_vec_add(&p[l.un()..l.un() + h * h], h_prev, &mut g);

    let mut n = p[l.bn()..l.bn() + h].to_vec();
    mat_vec_add(&p[l.wn()..l.wn() + h * d], x, &mut n);
    for i in 0..h {
        n[i] = (n[i] + r[i] * g[i]).tanh();
    }
    let hn: Vec<f64> = (0..h)
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
        .collect();
    StepCache {
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        g,
        h: hn,
    }
}

fn readout(p: &[f64], l: Layout, h: &[f64]) -> Vec<f64> {
    let mut y = p[l.bo()..l.bo() + l.d].to_vec();
    mat_vec_add(&p[l.wo()..l.wo() + l.d * l.h], h, &mut y);
    y
}

/// Mean one-step-ahead squared error over a window, and its gradient with
/// respect to every parameter (accumulated into `grad` scaled by `weight`).
fn window_loss_grad(p: &[f64], l: Layout, window: &[&[f64]], grad: &mut [f64], weight: f64) -> f64 {
    let steps = window.len() - 1;
    let mut caches = Vec::with_capacity(steps);
    let mut h = vec![0.0; l.h];
    let mut loss = 0.0;
    let mut dpreds = Vec::with_capacity(steps);
    for k in 0..steps {
        let c = cell(p, l, window[k], &h);
        let pred = readout(p, l, &c.h);
        let dp: Vec<f64> = pred.iter().zip(window[k + 1]).map(|(a, b)| a - b).collect();
        loss += 0.5 * dp.iter().map(|v| v * v).sum::<f64>();
        h = c.h.clone();
        caches.push(c);
        dpreds.push(dp);
    }
    let scale = weight / steps as f64;
    let mut dh_next = vec![0.0; l.h];
    for k in (0..steps).rev() {
        let c = &caches[k];
        let dp: Vec<f64> = dpreds[k].iter().map(|v| v * scale).collect();
        outer_add(&mut grad[l.wo()..l.wo() + l.d * l.h], &dp, &c.h);
        for (g, v) in grad[l.bo()..l.bo() + l.d].iter_mut().zip(&dp) {
            *g += v;
        }
        let mut dh = dh_next.clone();
        mat_t_vec_add(&p[l.wo()..l.wo() + l.d * l.h], &dp, &mut dh);

        let hh = l.h;
        let mut da_z = vec![0.0; hh];
        let mut da_n = vec![0.0; hh];
        let mut da_r = vec![0.0; hh];
        let mut dg = vec![0.0; hh];
        let mut dh_prev = vec![0.0; hh];
        for i in 0..hh {
            let dz = dh[i] * (c.h_prev[i] - c.n[i]);
            da_z[i] = dz * c.z[i] * (1.0 - c.z[i]);
            let dn = dh[i] * (1.0 - c.z[i]);
            da_n[i] = dn * (1.0 - c.n[i] * c.n[i]);
            let dr = da_n[i] * c.g[i];
            da_r[i] = dr * c.r[i] * (1.0 - c.r[i]);
            dg[i] = da_n[i] * c.r[i];
            dh_prev[i] = dh[i] * c.z[i];
        }
        let x = window[k];
        let (d, h2) = (l.d, hh * hh);
        outer_add(&mut grad[l.wz()..l.wz() + hh * d], &da_z, x);
        outer_add(&mut grad[l.uz()..l.uz() + h2], &da_z, &c.h_prev);
        outer_add(&mut grad[l.wr()..l.wr() + hh * d], &da_r, x);
        outer_add(&mut grad[l.ur()..l.ur() + h2], &da_r, &c.h_prev);
        outer_add(&mut grad[l.wn()..l.wn() + hh * d], &da_n, x);
        outer_add(&mut grad[l.un()..l.un() + h2], &dg, &c.h_prev);
        for i in 0..hh {
            grad[l.bz() + i] += da_z[i];
            grad[l.br() + i] += da_r[i];
            grad[l.bn() + i] += da_n[i];
            grad[l.bun() + i] += dg[i];
        }
        mat_t_vec_add(&p[l.uz()..l.uz() + h2], &da_z, &mut dh_prev);
        mat_t_vec_add(&p[l.ur()..l.ur() + h2], &da_r, &mut dh_prev);
        mat_t_vec_add(&p[l.un()..l.un() + h2], &dg, &mut dh_prev);
        dh_next = dh_prev;
    }
    loss / steps as f64
}

/// Trained predictor plus its calibrated alarm threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentDetectorModel {
    pub input_dim: usize,
    pub hidden: usize,
    pub window: usize,
    pub params: Vec<f64>,
    pub threshold: f64,
}

impl RecurrentDetectorModel {
    /// Small random weights, uniform in `+-1/sqrt(hidden)`.
    pub fn initialise(input_dim: usize, hidden: usize, window: usize, seed: u64) -> Self {
        let l = Layout {
            d: input_dim,
            h: hidden,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = 1.0 / (hidden as f64).sqrt();
        let params = (0..l.len()).map(|_| rng.random_range(-a..a)).collect();
        Self {
            input_dim,
            hidden,
            window,
            params,
            threshold: f64::INFINITY,
        }
    }

    fn layout(&self) -> Layout {
        Layout {
            d: self.input_dim,
            h: self.hidden,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Mean one-step prediction loss over a window and its gradient.
    pub fn loss_and_gradient(&self, window: &[&[f64]]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let loss = window_loss_grad(&self.params, self.layout(), window, &mut grad, 1.0);
        (loss, grad)
    }

    pub fn loss(&self, window: &[&[f64]]) -> f64 {
        let l = self.layout();
        let mut h = vec![0.0; l.h];
        let mut loss = 0.0;
        for k in 0..window.len() - 1 {
            h = cell(&self.params, l, window[k], &h).h;
            let pred = readout(&self.params, l, &h);
            loss += 0.5
                * pred
                    .iter()
                    .zip(window[k + 1])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>();
        }
        loss / (window.len() - 1) as f64
    }

    /// Prediction-error norm at the last sample of `window`.
    pub fn score<W: AsRef<[f64]>>(&self, window: &[W]) -> Result<f64, DetectorError> {
        if window.len() < 2 {
            return Err(DetectorError::WindowTooShort(window.len()));
        }
        let l = self.layout();
        let mut h = vec![0.0; l.h];
        for x in &window[..window.len() - 1] {
            h = cell(&self.params, l, x.as_ref(), &h).h;
        }
        let pred = readout(&self.params, l, &h);
        let target = window[window.len() - 1].as_ref();
        Ok(pred
            .iter()
            .zip(target)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt())
    }

    pub fn evaluate<W: AsRef<[f64]>>(
        &self,
        step: u64,
        window: &[W],
    ) -> Result<DetectorVerdict, DetectorError> {
        Ok(DetectorVerdict::from_threshold(
            step,
            self.score(window)?,
            self.threshold,
        ))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.input_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.hidden as u32).to_le_bytes());
        out.extend_from_slice(&(self.window as u32).to_le_bytes());
        out.extend_from_slice(&self.threshold.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DetectorError> {
        let bad = |m: &str| DetectorError::Malformed(m.to_string());
        const HEADER: usize = 4 + 4 + 4 + 4 + 4 + 8 + 8;
        if bytes.len() < HEADER {
            return Err(bad("truncated header"));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(DetectorError::Malformed(format!(
                "unsupported version {version}"
            )));
        }
        let input_dim = u32_at(8) as usize;
        let hidden = u32_at(12) as usize;
        let window = u32_at(16) as usize;
        let threshold = f64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes"));
        let count = u64::from_le_bytes(bytes[28..36].try_into().expect("8 bytes")) as usize;
        let expected = Layout {
            d: input_dim,
            h: hidden,
        }
        .len();
        if count != expected {
            return Err(DetectorError::Malformed(format!(
                "{count} parameters, architecture needs {expected}"
            )));
        }
        if bytes.len() != HEADER + 8 * count {
            return Err(bad("payload length does not match parameter count"));
        }
        let params: Vec<f64> = bytes[HEADER..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite weight"));
        }
        Ok(Self {
            input_dim,
            hidden,
            window,
            params,
            threshold,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), DetectorError> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| DetectorError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, DetectorError> {
        let bytes = std::fs::read(path)
            .map_err(|e| DetectorError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn windows_of(traces: &[Vec<Vec<f64>>], len: usize, stride: usize) -> Vec<Vec<&[f64]>> {
    let mut out = Vec::new();
    for t in traces {
        if t.len() < len {
            continue;
        }
        let mut start = 0;
        while start + len <= t.len() {
            out.push(t[start..start + len].iter().map(Vec::as_slice).collect());
            start += stride;
        }
    }
    out
}

/// Value exceeded by a fraction `p` of `scores` (at most).
pub fn upper_quantile(scores: &mut [f64], p: f64) -> f64 {
    scores.sort_by(f64::total_cmp);
    let n = scores.len();
    let idx = (((1.0 - p) * n as f64).ceil() as usize).clamp(1, n) - 1;
    scores[idx]
}

/// Trains on the nominal traces by truncated backpropagation through time
/// over fixed windows, then calibrates the threshold on held-out traces.
pub fn train_recurrent(
    traces: &[Vec<Vec<f64>>],
    config: &RecurrentConfig,
    p_fa: f64,
) -> Result<RecurrentDetectorModel, DetectorError> {
    config.validate().map_err(DetectorError::InsufficientData)?;
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(DetectorError::InvalidProbability(p_fa));
    }
    let usable: Vec<Vec<Vec<f64>>> = traces
        .iter()
        .filter(|t| t.len() >= config.window)
        .cloned()
        .collect();
    if usable.len() < 2 {
        return Err(DetectorError::InsufficientData(format!(
            "need at least two traces of length >= {}",
            config.window
        )));
    }
    let input_dim = usable[0][0].len();
    if usable.iter().flatten().any(|x| x.len() != input_dim) {
        return Err(DetectorError::InsufficientData(
            "inconsistent residual dimensions".into(),
        ));
    }
    let holdout = ((usable.len() as f64 * config.holdout_fraction).round() as usize)
        .clamp(1, usable.len() - 1);
    let (train, held) = usable.split_at(usable.len() - holdout);

    let mut model =
        RecurrentDetectorModel::initialise(input_dim, config.hidden, config.window, config.seed);
    let layout = model.layout();
    let mut windows = windows_of(train, config.window, config.stride);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; model.params.len()];
    let mut v = vec![0.0; model.params.len()];
    let mut t = 0i32;
    let mut grad = vec![0.0; model.params.len()];
    for epoch in 0..config.epochs {
        windows.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in windows.chunks(config.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let w = 1.0 / batch.len() as f64;
            for win in batch {
                epoch_loss += window_loss_grad(&model.params, layout, win, &mut grad, w);
            }
            t += 1;
            let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
            for i in 0..model.params.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                model.params[i] -= config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        let mean = epoch_loss / windows.len().max(1) as f64;
        if !mean.is_finite() || model.params.iter().any(|p| !p.is_finite()) {
            return Err(DetectorError::TrainingDiverged { epoch, loss: mean });
        }
    }

    let mut scores = Vec::new();
    for win in windows_of(held, config.window, 1) {
        scores.push(model.score(&win)?);
    }
    if scores.is_empty() {
        return Err(DetectorError::InsufficientData(
            "no held-out windows".into(),
        ));
    }
    model.threshold = upper_quantile(&mut scores, p_fa);
    Ok(model)
}

/// Streaming scorer: keeps the latest `window` inputs.
#[derive(Debug, Clone)]
pub struct RecurrentScorer {
    model: std::sync::Arc<RecurrentDetectorModel>,
    buffer: VecDeque<Vec<f64>>,
}

impl RecurrentScorer {
    pub fn new(model: std::sync::Arc<RecurrentDetectorModel>) -> Self {
        let cap = model.window;
        Self {
            model,
            buffer: VecDeque::with_capacity(cap),
        }
    }

    pub fn model(&self) -> &RecurrentDetectorModel {
        &self.model
    }

    /// Adds one input and scores the current window once it holds two samples.
    pub fn push(
        &mut self,
        step: u64,
        x: Vec<f64>,
    ) -> Result<Option<DetectorVerdict>, DetectorError> {
        if self.buffer.len() == self.model.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(x);
        if self.buffer.len() < 2 {
            return Ok(None);
        }
        let window: Vec<&[f64]> = self.buffer.iter().map(Vec::as_slice).collect();
        self.model.evaluate(step, &window).map(Some)
    }

    pub fn reset(&mut self) {
        self.buffer.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn toy_sequence() -> Vec<Vec<f64>> {
        vec![
            vec![0.3, -0.7],
            vec![1.1, 0.2],
            vec![-0.4, 0.9],
            vec![0.5, -1.2],
        ]
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = RecurrentDetectorModel::initialise(2, 3, 4, 42);
        let seq = toy_sequence();
        let window: Vec<&[f64]> = seq.iter().map(Vec::as_slice).collect();
        let (loss, grad) = model.loss_and_gradient(&window);
        assert!((loss - model.loss(&window)).abs() < 1e-14);
        let eps = 1e-6;
        let mut worst = 0.0f64;
        let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        for i in 0..model.param_count() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            plus.params[i] += eps;
            minus.params[i] -= eps;
            let fd = (plus.loss(&window) - minus.loss(&window)) / (2.0 * eps);
            let err = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-3 * gmax);
            worst = worst.max(err);
        }
        assert!(worst <= 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn score_needs_two_samples() {
        let model = RecurrentDetectorModel::initialise(2, 3, 4, 1);
        assert_eq!(
            model.score(&[vec![0.0, 0.0]]),
            Err(DetectorError::WindowTooShort(1))
        );
        let a = model.score(&toy_sequence()).unwrap();
        let b = model.score(&toy_sequence()).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn zero_traces_train_to_near_zero_threshold() {
        let traces: Vec<Vec<Vec<f64>>> = (0..6).map(|_| vec![vec![0.0; 3]; 60]).collect();
        let config = RecurrentConfig {
            hidden: 8,
            window: 6,
            epochs: 60,
            learning_rate: 1e-2,
            batch_size: 4,
            stride: 2,
            ..RecurrentConfig::default()
        };
        let model = train_recurrent(&traces, &config, 0.01).unwrap();
        assert!(model.threshold < 0.05, "{}", model.threshold);
    }

    #[test]
    fn held_out_rate_matches_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let traces: Vec<Vec<Vec<f64>>> = (0..10)
            .map(|_| {
                (0..400)
                    .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
                    .collect()
            })
            .collect();
        let config = RecurrentConfig {
            hidden: 6,
            window: 8,
            epochs: 2,
            holdout_fraction: 0.5,
            ..RecurrentConfig::default()
        };
        let model = train_recurrent(&traces, &config, 0.01).unwrap();
        let held = &traces[5..];
        let windows = windows_of(held, config.window, 1);
        let alarms = windows
            .iter()
            .filter(|w| model.evaluate(0, w).unwrap().alarm)
            .count();
        let rate = alarms as f64 / windows.len() as f64;
        assert!((rate - 0.01).abs() <= 0.005, "{rate}");
    }

    #[test]
    fn serialisation_round_trip() {
        let mut model = RecurrentDetectorModel::initialise(4, 5, 7, 3);
        model.threshold = 2.5;
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..4], b"SGRU");
        assert_eq!(RecurrentDetectorModel::from_bytes(&bytes).unwrap(), model);
        assert!(RecurrentDetectorModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(RecurrentDetectorModel::from_bytes(&wrong).is_err());
    }

    #[test]
    fn quantile_counts_exceedances() {
        let mut s: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = upper_quantile(&mut s, 0.01);
        assert_eq!(s.iter().filter(|v| **v > t).count(), 1);
    }
}
