//! Trial datasets, splitting, noise augmentation and temporal compression.

use std::cell::Cell;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{uniform, Linear};
use crate::montage::{Montage, RSVP16};
use crate::numerics::{join_name, Module, Param, ParamKind, Tensor};

pub const MANIFEST_VERSION: u32 = 1;

/// EEG trials `[n_trials, n_channels, n_samples]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialSet {
    pub name: String,
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub sample_rate_hz: f64,
    /// Built-in montage name or a path to a montage file.
    pub montage: String,
    /// Row-major trial data.
    pub data: Vec<f64>,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_version")]
    pub version: u32,
    pub name: String,
    pub n_trials: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub sample_rate_hz: f64,
    pub montage: String,
    pub payload: String,
    pub labels: String,
}

fn default_version() -> u32 {
    MANIFEST_VERSION
}

impl TrialSet {
    pub fn new(
        name: &str,
        shape: [usize; 3],
        n_classes: usize,
        sample_rate_hz: f64,
        montage: &str,
        data: Vec<f64>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        let [n, c, l] = shape;
        if data.len() != n * c * l {
            return Err(Error::Format(format!(
                "trial data has {} values, expected {n}×{c}×{l}",
                data.len()
            )));
        }
        if labels.len() != n {
            return Err(Error::Format(format!("{} labels for {n} trials", labels.len())));
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::LabelOutOfRange { label, n_classes });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if sample_rate_hz.is_nan() || sample_rate_hz <= 0.0 {
            return Err(Error::Format(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        Ok(TrialSet {
            name: name.to_string(),
            n_channels: c,
            n_samples: l,
            n_classes,
            sample_rate_hz,
            montage: montage.to_string(),
            data,
            labels,
        })
    }

    pub fn n_trials(&self) -> usize {
        self.labels.len()
    }

    pub fn trial_len(&self) -> usize {
        self.n_channels * self.n_samples
    }

    pub fn trial(&self, i: usize) -> &[f64] {
        let w = self.trial_len();
        &self.data[i * w..(i + 1) * w]
    }

    /// Stacks the chosen trials into a constant `[B, C, L]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(indices.len() * self.trial_len());
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        Tensor::new(&[indices.len(), self.n_channels, self.n_samples], data).expect("consistent shape")
    }

    pub fn batch_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> TrialSet {
        let mut data = Vec::with_capacity(indices.len() * self.trial_len());
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        TrialSet {
            data,
            labels: self.batch_labels(indices),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> TrialSet {
        TrialSet {
            name: self.name.clone(),
            n_channels: self.n_channels,
            n_samples: self.n_samples,
            n_classes: self.n_classes,
            sample_rate_hz: self.sample_rate_hz,
            montage: self.montage.clone(),
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Resolves the montage reference, relative paths against `base`.
    pub fn resolve_montage(&self, base: Option<&Path>) -> Result<Montage> {
        resolve_montage(&self.montage, base)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

pub fn resolve_montage(spec: &str, base: Option<&Path>) -> Result<Montage> {
    match (base, Path::new(spec).is_relative()) {
        (Some(dir), true) if !matches!(spec, "errp56" | "rsvp16") => Montage::load(&dir.join(spec)),
        _ => Montage::resolve(spec),
    }
}

fn file_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| Error::Format(format!("bad output path {}", path.display())))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a manifest and its payload files; checks sizes, values and the
/// montage channel count.
pub fn load_trialset(manifest_path: &Path) -> Result<TrialSet> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", manifest_path.display())))?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::UnknownVersion(m.version));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let payload_path = dir.join(&m.payload);
    let labels_path = dir.join(&m.labels);

    let payload = read(&payload_path)?;
    let values = m.n_trials * m.n_channels * m.n_samples;
    if payload.len() as u64 != values as u64 * 4 {
        return Err(Error::PayloadSize {
            path: payload_path,
            expected: values as u64 * 4,
            actual: payload.len() as u64,
        });
    }
    let raw = read(&labels_path)?;
    if raw.len() as u64 != m.n_trials as u64 * 2 {
        return Err(Error::PayloadSize {
            path: labels_path,
            expected: m.n_trials as u64 * 2,
            actual: raw.len() as u64,
        });
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let labels: Vec<usize> = raw
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]) as usize)
        .collect();
    let ts = TrialSet::new(
        &m.name,
        [m.n_trials, m.n_channels, m.n_samples],
        m.n_classes,
        m.sample_rate_hz,
        &m.montage,
        data,
        labels,
    )?;
    let montage = ts.resolve_montage(Some(dir))?;
    if montage.len() != ts.n_channels {
        return Err(Error::Format(format!(
            "montage `{}` has {} electrodes but the data has {} channels",
            ts.montage,
            montage.len(),
            ts.n_channels
        )));
    }
    Ok(ts)
}

/// Writes `<stem>.json` with `<stem>.f32` and `<stem>.labels` beside it.
/// Values are stored as f32, so a load/save/load cycle is bit-exact.
pub fn save_trialset(ts: &TrialSet, manifest_path: &Path) -> Result<()> {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Format(format!("bad manifest path {}", manifest_path.display())))?;
    let payload_path = manifest_path.with_file_name(format!("{stem}.f32"));
    let labels_path = manifest_path.with_file_name(format!("{stem}.labels"));
    if ts.labels.iter().any(|&y| y > u16::MAX as usize) {
        return Err(Error::Format("labels do not fit in u16".into()));
    }
    let mut payload = Vec::with_capacity(ts.data.len() * 4);
    for &v in &ts.data {
        payload.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut labels = Vec::with_capacity(ts.labels.len() * 2);
    for &y in &ts.labels {
        labels.extend_from_slice(&(y as u16).to_le_bytes());
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        name: ts.name.clone(),
        n_trials: ts.n_trials(),
        n_channels: ts.n_channels,
        n_samples: ts.n_samples,
        n_classes: ts.n_classes,
        sample_rate_hz: ts.sample_rate_hz,
        montage: ts.montage.clone(),
        payload: file_name(&payload_path)?,
        labels: file_name(&labels_path)?,
    };
    write(&payload_path, &payload)?;
    write(&labels_path, &labels)?;
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    write(manifest_path, json.as_bytes())
}

/// Seeded shuffle; the first 80% of the shuffled trials train, the rest validate.
pub fn split(ts: &TrialSet, seed: u64) -> Result<(TrialSet, TrialSet)> {
    let n = ts.n_trials();
    if n < 5 {
        return Err(Error::TooFewTrials(n));
    }
    let (train, val) = split_indices(n, seed);
    Ok((ts.subset(&train), ts.subset(&val)))
}

pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 4 / 5;
    let val = idx.split_off(n_train);
    (idx, val)
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AugmentStats {
    /// Channels copied unchanged because their power was zero.
    pub zero_power_channels: usize,
}

pub const DEFAULT_SNR_DB: [f64; 3] = [10.0, 5.0, 2.0];

fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}

/// Appends one noisy copy of every trial per SNR level. Output order is the
/// originals, then one block per level. Each trial draws from its own RNG
/// stream, so results do not depend on processing order.
pub fn augment_awgn(ts: &TrialSet, snr_db: &[f64], seed: u64) -> Result<(TrialSet, AugmentStats)> {
    if let Some(s) = snr_db.iter().find(|s| !s.is_finite()) {
        return Err(Error::Config(format!("SNR level {s} is not finite")));
    }
    let n = ts.n_trials();
    let (c, l) = (ts.n_channels, ts.n_samples);
    let mut stats = AugmentStats::default();
    let mut blocks: Vec<Vec<f64>> = vec![Vec::with_capacity(n * c * l); snr_db.len()];
    for t in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let trial = ts.trial(t);
        for (level, block) in snr_db.iter().zip(blocks.iter_mut()) {
            for ch in 0..c {
                let x = &trial[ch * l..(ch + 1) * l];
                let power = mean_square(x);
                if power == 0.0 {
                    stats.zero_power_channels += 1;
                    block.extend_from_slice(x);
                    continue;
                }
                let sd = (power / 10f64.powf(level / 10.0)).sqrt();
                block.extend(x.iter().map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + sd * z
                }));
            }
        }
    }
    let mut data = ts.data.clone();
    let mut labels = ts.labels.clone();
    for block in blocks {
        data.extend(block);
        labels.extend_from_slice(&ts.labels);
    }
    Ok((TrialSet { data, labels, ..ts.clone_meta() }, stats))
}

/// Pooled SNR in dB of `noisy` against `clean`: total signal power over
/// total residual power.
pub fn measured_snr_db(clean: &[f64], noisy: &[f64]) -> f64 {
    let signal: f64 = clean.iter().map(|v| v * v).sum();
    let noise: f64 = clean.iter().zip(noisy).map(|(a, b)| (b - a).powi(2)).sum();
    10.0 * (signal / noise).log10()
}

/// `floor((L − 3) / 2) + 1`
pub fn conv_len(len: usize) -> usize {
    (len - 3) / 2 + 1
}

/// Lengths after each stride-2 convolution.
pub fn compressor_lengths(samples: usize, target: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut len = samples;
    while len > target && len >= 3 {
        len = conv_len(len);
        out.push(len);
    }
    out
}

#[derive(Clone, Debug)]
pub struct CompressorStage {
    /// Depthwise kernel `[C, 1, 3]`. No bias: batch norm cancels it.
    pub weight: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Depthwise `conv(k=3, s=2) → batch norm → relu` stages until the length is
/// at most 32, then a shared linear projection to exactly 32 features.
#[derive(Clone, Debug)]
pub struct Compressor {
    pub channels: usize,
    pub samples: usize,
    pub stages: Vec<CompressorStage>,
    pub projection: Linear,
    pub batch_norm: bool,
    training: Cell<bool>,
}

impl Compressor {
    pub const OUT: usize = 32;
    pub const KERNEL: usize = 3;
    pub const STRIDE: usize = 2;
    pub const BN_EPS: f64 = 1e-8;
    pub const BN_MOMENTUM: f64 = 0.1;

    pub fn new(rng: &mut impl rand::Rng, channels: usize, samples: usize) -> Result<Self> {
        if samples < Self::KERNEL {
            return Err(Error::Config(format!(
                "compressor needs at least {} samples, got {samples}",
                Self::KERNEL
            )));
        }
        let lengths = compressor_lengths(samples, Self::OUT);
        let bound = 1.0 / (Self::KERNEL as f64).sqrt();
        let stages = lengths
            .iter()
            .map(|_| CompressorStage {
                weight: uniform(rng, &[channels, 1, Self::KERNEL], bound),
                gamma: Tensor::param(&[channels], vec![1.0; channels]).expect("shape"),
                beta: Tensor::param(&[channels], vec![0.0; channels]).expect("shape"),
                running_mean: Tensor::zeros(&[channels]),
                running_var: Tensor::new(&[channels], vec![1.0; channels]).expect("shape"),
            })
            .collect();
        let last = lengths.last().copied().unwrap_or(samples);
        Ok(Compressor {
            channels,
            samples,
            stages,
            projection: Linear::new(rng, last, Self::OUT, true),
            batch_norm: true,
            training: Cell::new(true),
        })
    }

    pub fn without_batch_norm(mut self) -> Self {
        self.batch_norm = false;
        self
    }

    pub fn set_training(&self, on: bool) {
        self.training.set(on);
    }

    pub fn is_training(&self) -> bool {
        self.training.get()
    }

    /// `[B, C, L] → [B, C, 32]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.rank() != 3 || x.shape()[1] != self.channels || x.shape()[2] != self.samples {
            return Err(Error::shape("compressor", x.shape(), &[self.channels, self.samples]));
        }
        let mut h = x.clone();
        for st in &self.stages {
            let y = h.conv1d(&st.weight, None, Self::STRIDE, self.channels)?;
            let normed = if !self.batch_norm {
                y
            } else if self.is_training() {
                let (out, mean, var) = y.batch_norm_train(&st.gamma, &st.beta, Self::BN_EPS)?;
                let count = (y.shape()[0] * y.shape()[2]) as f64;
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let m = Self::BN_MOMENTUM;
                st.running_mean.update_data(|rm| {
                    for (r, v) in rm.iter_mut().zip(&mean) {
                        *r = (1.0 - m) * *r + m * v;
                    }
                });
                st.running_var.update_data(|rv| {
                    for (r, v) in rv.iter_mut().zip(&var) {
                        *r = (1.0 - m) * *r + m * v * unbias;
                    }
                });
                out
            } else {
                let rm = st.running_mean.to_vec();
                let rv = st.running_var.to_vec();
                y.batch_norm_eval(&st.gamma, &st.beta, &rm, &rv, Self::BN_EPS)?
            };
            h = normed.relu();
        }
        self.projection.forward(&h)
    }
}

impl Module for Compressor {
    fn collect_params(&self, prefix: &str, out: &mut Vec<Param>) {
        for (i, st) in self.stages.iter().enumerate() {
            let p = join_name(prefix, &format!("stage{i}"));
            out.push(Param {
                name: join_name(&p, "conv.weight"),
                tensor: st.weight.clone(),
                kind: ParamKind::Weight,
            });
            if !self.batch_norm {
                continue;
            }
            for (name, t, kind) in [
                ("bn.gamma", &st.gamma, ParamKind::Norm),
                ("bn.beta", &st.beta, ParamKind::Norm),
                ("bn.running_mean", &st.running_mean, ParamKind::Buffer),
                ("bn.running_var", &st.running_var, ParamKind::Buffer),
            ] {
                out.push(Param {
                    name: join_name(&p, name),
                    tensor: t.clone(),
                    kind,
                });
            }
        }
        self.projection.collect_params(&join_name(prefix, "projection"), out);
    }
}

/// Parameters of the synthetic two-hemisphere dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureSpec {
    pub n_trials: usize,
    pub n_classes: usize,
    pub n_samples: usize,
    pub sample_rate_hz: f64,
    /// Signal-to-noise ratio of the injected waveform against unit noise.
    pub snr_db: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            n_trials: 2000,
            n_classes: 2,
            n_samples: 128,
            sample_rate_hz: 128.0,
            snr_db: 0.0,
        }
    }
}

/// Unit-power class waveform: a sinusoid with `2 + class` cycles per trial
/// under a Hann window, rescaled to mean square 1.
pub fn class_waveform(class: usize, len: usize) -> Vec<f64> {
    let cycles = (2 + class) as f64;
    let raw: Vec<f64> = (0..len)
        .map(|t| {
            let u = t as f64 / len as f64;
            let window = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * u).cos();
            window * (2.0 * std::f64::consts::PI * cycles * u).sin()
        })
        .collect();
    let scale = 1.0 / mean_square(&raw).sqrt();
    raw.into_iter().map(|v| v * scale).collect()
}

/// White unit-variance noise on every channel of the 16-electrode montage;
/// trials of class `c > 0` add a class waveform on the left-hemisphere
/// electrodes at the requested SNR. Labels cycle `0, 1, …`.
pub fn synthetic_fixture(spec: &FixtureSpec, seed: u64) -> Result<TrialSet> {
    if spec.n_classes < 2 || spec.n_samples < 3 {
        return Err(Error::Config("fixture needs ≥ 2 classes and ≥ 3 samples".into()));
    }
    let montage = Montage::from_labels(RSVP16)?;
    let left = montage.left_hemisphere();
    let (c, l) = (montage.len(), spec.n_samples);
    let amp = 10f64.powf(spec.snr_db / 20.0);
    let waves: Vec<Vec<f64>> = (0..spec.n_classes).map(|k| class_waveform(k, l)).collect();
    let mut data = Vec::with_capacity(spec.n_trials * c * l);
    let mut labels = Vec::with_capacity(spec.n_trials);
    for t in 0..spec.n_trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t as u64);
        let y = t % spec.n_classes;
        for ch in 0..c {
            let signal = y > 0 && left.contains(&ch);
            for &w in &waves[y] {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = if signal { z + amp * w } else { z };
                // Stored as f32 on disk; round now so saved fixtures reload exactly.
                data.push(v as f32 as f64);
            }
        }
        labels.push(y);
    }
    TrialSet::new(
        "synthetic",
        [spec.n_trials, c, l],
        spec.n_classes,
        spec.sample_rate_hz,
        "rsvp16",
        data,
        labels,
    )
}

/// Default manifest path for a fixture written into `dir`.
pub fn fixture_path(dir: &Path) -> PathBuf {
    dir.join("synthetic.json")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;

    fn small(n: usize, c: usize, l: usize, classes: usize) -> TrialSet {
        let data = (0..n * c * l).map(|i| ((i * 37 % 11) as f64 - 5.0) / 4.0).collect();
        let labels = (0..n).map(|i| i % classes).collect();
        TrialSet::new("t", [n, c, l], classes, 200.0, "rsvp16", data, labels).unwrap()
    }

    #[test]
    fn loads_errp_and_rsvp_shapes() {
        let dir = tempfile::tempdir().unwrap();
        for (montage, c, l, k) in [("errp56", 56, 250, 2), ("rsvp16", 16, 128, 4)] {
            let mut ts = small(6, c, l, k);
            ts.montage = montage.into();
            let path = dir.path().join(format!("{montage}.json"));
            save_trialset(&ts, &path).unwrap();
            let back = load_trialset(&path).unwrap();
            assert_eq!(back.n_classes, k);
            assert_eq!(back, ts);
        }
    }

    #[test]
    fn truncated_payload_names_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        save_trialset(&small(5, 16, 4, 2), &path).unwrap();
        let payload = dir.path().join("d.f32");
        let bytes = std::fs::read(&payload).unwrap();
        std::fs::write(&payload, &bytes[..bytes.len() - 3]).unwrap();
        match load_trialset(&path) {
            Err(Error::PayloadSize { expected, actual, .. }) => {
                assert_eq!(expected, 5 * 16 * 4 * 4);
                assert_eq!(actual, expected - 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.json");
        save_trialset(&small(5, 16, 4, 2), &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let v2 = text.replace("\"version\": 1", "\"version\": 7");
        std::fs::write(&path, v2).unwrap();
        assert!(matches!(load_trialset(&path), Err(Error::UnknownVersion(7))));

        std::fs::write(&path, &text).unwrap();
        let payload = dir.path().join("d.f32");
        let mut bytes = std::fs::read(&payload).unwrap();
        bytes[4..8].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&payload, bytes).unwrap();
        assert!(matches!(load_trialset(&path), Err(Error::NonFinite(1))));

        let wrong = text.replace("\"rsvp16\"", "\"errp56\"");
        std::fs::write(&path, wrong).unwrap();
        assert!(load_trialset(&path).is_err());
    }

    #[test]
    fn missing_version_defaults_to_current() {
        let m: Manifest = serde_json::from_str(
            r#"{"name":"x","n_trials":1,"n_channels":1,"n_samples":1,"n_classes":2,
               "sample_rate_hz":1.0,"montage":"rsvp16","payload":"p","labels":"l"}"#,
        )
        .unwrap();
        assert_eq!(m.version, MANIFEST_VERSION);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ts = small(10, 2, 3, 2);
        let (a, b) = split(&ts, 4).unwrap();
        assert_eq!((a.n_trials(), b.n_trials()), (8, 2));
        let (a2, b2) = split(&ts, 4).unwrap();
        assert_eq!((a, b), (a2, b2));
        let (tr, va) = split_indices(41_400, 1);
        assert_eq!((tr.len(), va.len()), (33_120, 8_280));
        assert!(matches!(split(&small(4, 1, 3, 2), 0), Err(Error::TooFewTrials(4))));
    }

    #[test]
    fn augmentation_counts_and_identity() {
        let ts = small(1, 2, 8, 2);
        let (aug, _) = augment_awgn(&ts, &DEFAULT_SNR_DB, 3).unwrap();
        assert_eq!(aug.n_trials(), 4);
        assert_eq!(aug.trial(0), ts.trial(0));
        let (same, _) = augment_awgn(&ts, &[], 3).unwrap();
        assert_eq!(same, ts);
    }

    #[test]
    fn zero_db_on_unit_power_gives_unit_noise() {
        let l = 20_000;
        let ts = TrialSet::new("u", [1, 1, l], 2, 1.0, "x", vec![1.0; l], vec![0]).unwrap();
        let (aug, _) = augment_awgn(&ts, &[0.0], 9).unwrap();
        let noise: Vec<f64> = aug.trial(1).iter().map(|v| v - 1.0).collect();
        let var = mean_square(&noise);
        assert!((var - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn zero_power_channel_is_copied() {
        let mut data = vec![0.0; 4];
        data.extend([1.0, -1.0, 1.0, -1.0]);
        let ts = TrialSet::new("z", [1, 2, 4], 2, 1.0, "x", data, vec![1]).unwrap();
        let (aug, stats) = augment_awgn(&ts, &[5.0], 1).unwrap();
        assert_eq!(stats.zero_power_channels, 1);
        assert_eq!(aug.trial(1)[..4], [0.0; 4]);
        assert_ne!(aug.trial(1)[4..], ts.trial(0)[4..]);
    }

    #[test]
    fn each_trial_draws_from_its_own_stream() {
        let ts = small(6, 2, 10, 2);
        let (full, _) = augment_awgn(&ts, &[5.0], 2).unwrap();
        let (one, _) = augment_awgn(&ts.subset(&[0]), &[5.0], 2).unwrap();
        assert_eq!(one.trial(1), full.trial(6));
    }

    #[test]
    fn compressor_lengths_follow_recurrence() {
        assert_eq!(compressor_lengths(250, 32), vec![124, 61, 30]);
        assert_eq!(compressor_lengths(128, 32), vec![63, 31]);
        assert!(compressor_lengths(32, 32).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for l in [250, 128, 32, 3, 5] {
            let comp = Compressor::new(&mut rng, 2, l).unwrap();
            let x = Tensor::zeros(&[3, 2, l]);
            assert_eq!(comp.forward(&x).unwrap().shape(), &[3, 2, 32]);
        }
        assert!(Compressor::new(&mut rng, 2, 2).is_err());
    }

    #[test]
    fn compressor_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let comp = Compressor::new(&mut rng, 2, 40).unwrap();
        let x = uniform(&mut rng, &[3, 2, 40], 1.0);
        let w = uniform(&mut rng, &[3, 2, 32], 1.0);
        let mut inputs: Vec<Tensor> = comp.learnable_params().into_iter().map(|p| p.tensor).collect();
        inputs.push(x.clone());
        let f = || Ok(comp.forward(&x)?.mul(&w)?.sum_all());
        let r = check_gradients(&f, &inputs, 1e-5).unwrap();
        assert!(r.passes(1e-4), "{r:?}");
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let comp = Compressor::new(&mut rng, 2, 40).unwrap();
        let x = uniform(&mut rng, &[4, 2, 40], 1.0);
        comp.forward(&x).unwrap();
        assert_ne!(comp.stages[0].running_mean.to_vec(), vec![0.0, 0.0]);
        comp.set_training(false);
        let a = comp.forward(&x).unwrap().to_vec();
        let b = comp.forward(&x.narrow(0, 0, 1).unwrap()).unwrap().to_vec();
        assert_eq!(a[..b.len()], b[..]);
    }

    #[test]
    fn fixture_is_seeded_and_balanced() {
        let spec = FixtureSpec { n_trials: 40, ..FixtureSpec::default() };
        let a = synthetic_fixture(&spec, 1).unwrap();
        assert_eq!(a, synthetic_fixture(&spec, 1).unwrap());
        assert_ne!(a, synthetic_fixture(&spec, 2).unwrap());
        assert_eq!(a.class_counts(), vec![20, 20]);
        assert_eq!((a.n_channels, a.n_samples), (16, 128));
        let w = class_waveform(1, 128);
        assert!((mean_square(&w) - 1.0).abs() < 1e-12);
    }
}
