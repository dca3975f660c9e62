//! Speech front-end: WAV -> log-Mel spectrogram -> deltas -> 64x64x3 segments.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::container::{self, Magic};
use crate::error::{Error, Result};
use crate::par;

pub const FEATURE_MAGIC: Magic = *b"PNETFEAT";
pub const FEATURE_FORMAT_VERSION: u32 = 1;
pub const CHANNEL_ORDER: [&str; 3] = ["static", "delta", "delta-delta"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    Hamming,
}

/// Front-end settings; defaults give 25 ms Hamming frames every 10 ms at
/// 16 kHz, 64 HTK mel bands over 20-8000 Hz, and 64-frame segments that
/// overlap by 30 frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    /// Window length in samples.
    pub win_len: usize,
    /// Frame hop in samples.
    pub hop: usize,
    pub window: Window,
    pub fft_size: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_epsilon: f64,
    /// Frames per segment.
    pub context_frames: usize,
    /// Frames between segment starts.
    pub segment_hop: usize,
    pub delta_window: usize,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            win_len: 400,
            hop: 160,
            window: Window::Hamming,
            fft_size: 512,
            n_mels: 64,
            fmin: 20.0,
            fmax: 8_000.0,
            log_epsilon: 1e-6,
            context_frames: 64,
            segment_hop: 34,
            delta_window: 2,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidMelConfig(m));
        if self.fmax > self.sample_rate as f64 / 2.0 {
            return bad(format!("fmax {} above Nyquist", self.fmax));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax) {
            return bad(format!(
                "need 0 <= fmin < fmax, got {} / {}",
                self.fmin, self.fmax
            ));
        }
        if self.fft_size < self.win_len {
            return bad(format!(
                "fft_size {} < win_len {}",
                self.fft_size, self.win_len
            ));
        }
        if self.win_len < 2 || self.hop == 0 || self.n_mels == 0 {
            return bad("win_len >= 2, hop >= 1 and n_mels >= 1 required".into());
        }
        if self.segment_hop == 0 || self.context_frames == 0 || self.delta_window == 0 {
            return bad("segment_hop, context_frames and delta_window must be >= 1".into());
        }
        if self.log_epsilon.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return bad("log_epsilon must be positive".into());
        }
        Ok(())
    }

    /// Time covered by one segment, in milliseconds.
    pub fn segment_span_ms(&self) -> f64 {
        let sr = self.sample_rate as f64;
        ((self.context_frames - 1) * self.hop + self.win_len) as f64 * 1000.0 / sr
    }

    pub fn segment_dim(&self) -> usize {
        3 * self.n_mels * self.context_frames
    }
}

/// Number of unpadded frames for `len` samples, or 0 if shorter than a window.
pub fn frame_count(len: usize, win_len: usize, hop: usize) -> usize {
    if len < win_len {
        0
    } else {
        (len - win_len) / hop + 1
    }
}

/// Number of segments cut from `frames` frames; short inputs yield one padded segment.
pub fn segment_count(frames: usize, context: usize, hop: usize) -> usize {
    if frames == 0 {
        0
    } else if frames < context {
        1
    } else {
        (frames - context) / hop + 1
    }
}

/// Row-major `rows x cols` matrix; rows are frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FrameMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters, equally spaced on the HTK mel scale, with unit peaks.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `n_mels x (fft_size / 2 + 1)` weights.
    pub weights: FrameMatrix,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_bins = cfg.fft_size / 2 + 1;
        let lo = hz_to_mel(cfg.fmin);
        let hi = hz_to_mel(cfg.fmax);
        let step = (hi - lo) / (cfg.n_mels + 1) as f64;
        let edges: Vec<f64> = (0..cfg.n_mels + 2).map(|i| lo + step * i as f64).collect();
        let bin_mels: Vec<f64> = (0..n_bins)
            .map(|k| hz_to_mel(k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64))
            .collect();
        let mut data = vec![0.0; cfg.n_mels * n_bins];
        for m in 0..cfg.n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for (k, &mel) in bin_mels.iter().enumerate() {
                let up = (mel - left) / (center - left);
                let down = (right - mel) / (right - center);
                data[m * n_bins + k] = up.min(down).max(0.0);
            }
        }
        Self {
            weights: FrameMatrix::new(cfg.n_mels, n_bins, data),
            centers_hz: edges[1..=cfg.n_mels]
                .iter()
                .map(|&m| mel_to_hz(m))
                .collect(),
        }
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self
                .weights
                .row(m)
                .iter()
                .zip(power)
                .map(|(w, p)| w * p)
                .sum();
        }
    }
}

fn hamming(n: usize) -> Vec<f64> {
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / denom).cos())
        .collect()
}

/// Mel-band energies before the log, one row per frame.
pub fn mel_energies(samples: &[f64], cfg: &MelConfig) -> Result<FrameMatrix> {
    cfg.validate()?;
    let frames = frame_count(samples.len(), cfg.win_len, cfg.hop);
    if frames == 0 {
        return Err(Error::UtteranceTooShort {
            samples: samples.len(),
            window: cfg.win_len,
        });
    }
    let window = match cfg.window {
        Window::Hamming => hamming(cfg.win_len),
    };
    let bank = MelFilterbank::new(cfg);
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.fft_size / 2 + 1;
    let rows: Vec<Vec<f64>> = par::map_range(frames, |t| {
        let start = t * cfg.hop;
        let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
        for (b, (&s, &w)) in buf
            .iter_mut()
            .zip(samples[start..start + cfg.win_len].iter().zip(&window))
        {
            b.re = s * w;
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..n_bins].iter().map(|c| c.norm_sqr()).collect();
        let mut out = vec![0.0; cfg.n_mels];
        bank.apply(&power, &mut out);
        out
    });
    Ok(FrameMatrix::new(frames, cfg.n_mels, rows.concat()))
}

/// Natural-log mel spectrogram, `frames x n_mels`.
pub fn log_mel(samples: &[f64], cfg: &MelConfig) -> Result<FrameMatrix> {
    let eps = cfg.log_epsilon;
    Ok(mel_energies(samples, cfg)?.map(|e| (e + eps).ln()))
}

/// Regression deltas over `±window` frames, replicating edge frames.
pub fn delta(m: &FrameMatrix, window: usize) -> FrameMatrix {
    let denom = 2.0 * (1..=window).map(|n| (n * n) as f64).sum::<f64>();
    let last = m.rows.saturating_sub(1) as isize;
    let at = |t: isize| t.clamp(0, last) as usize;
    let mut data = vec![0.0; m.data.len()];
    for t in 0..m.rows {
        for c in 0..m.cols {
            let mut acc = 0.0;
            for n in 1..=window {
                let n_i = n as isize;
                let fwd = m.get(at(t as isize + n_i), c);
                let back = m.get(at(t as isize - n_i), c);
                acc += n as f64 * (fwd - back);
            }
            data[t * m.cols + c] = acc / denom;
        }
    }
    FrameMatrix::new(m.rows, m.cols, data)
}

/// One network input: `3 x n_mels x frames` values in channel, mel-bin,
/// frame order (channels: static, delta, delta-delta).
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTensor {
    pub n_mels: usize,
    pub frames: usize,
    pub values: Vec<f32>,
    pub utterance: String,
    pub index: usize,
}

impl SegmentTensor {
    pub fn at(&self, mel: usize, frame: usize, channel: usize) -> f32 {
        self.values[(channel * self.n_mels + mel) * self.frames + frame]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.n_mels * self.frames;
        &self.values[c * n..(c + 1) * n]
    }
}

/// Cuts `context_frames`-long windows every `segment_hop` frames. Inputs
/// shorter than one window become a single segment padded with the last frame.
pub fn segment(
    stat: &FrameMatrix,
    d1: &FrameMatrix,
    d2: &FrameMatrix,
    cfg: &MelConfig,
    utterance: &str,
) -> Result<Vec<SegmentTensor>> {
    if stat.rows != d1.rows || stat.rows != d2.rows || stat.cols != d1.cols || stat.cols != d2.cols
    {
        return Err(Error::Shape(
            "static/delta/delta-delta shapes differ".into(),
        ));
    }
    let ctx = cfg.context_frames;
    let count = segment_count(stat.rows, ctx, cfg.segment_hop);
    let mels = stat.cols;
    let segs = (0..count)
        .map(|s| {
            let start = s * cfg.segment_hop;
            let mut values = Vec::with_capacity(3 * mels * ctx);
            for ch in [stat, d1, d2] {
                for mel in 0..mels {
                    for f in 0..ctx {
                        let t = (start + f).min(stat.rows - 1);
                        values.push(ch.get(t, mel) as f32);
                    }
                }
            }
            SegmentTensor {
                n_mels: mels,
                frames: ctx,
                values,
                utterance: utterance.to_string(),
                index: s,
            }
        })
        .collect();
    Ok(segs)
}

/// Per-channel z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl ChannelStats {
    /// Fits statistics over `rows` of `channels` contiguous equal-length blocks.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f32]>, channels: usize) -> Self {
        let mut sum = vec![0.0f64; channels];
        let mut sq = vec![0.0f64; channels];
        let mut count = vec![0usize; channels];
        for row in rows {
            let per = row.len() / channels;
            for c in 0..channels {
                for &v in &row[c * per..(c + 1) * per] {
                    let v = v as f64;
                    sum[c] += v;
                    sq[c] += v * v;
                }
                count[c] += per;
            }
        }
        let mut mean = vec![0.0; channels];
        let mut std = vec![1.0; channels];
        for c in 0..channels {
            if count[c] > 0 {
                let n = count[c] as f64;
                mean[c] = sum[c] / n;
                let var = (sq[c] / n - mean[c] * mean[c]).max(0.0);
                std[c] = var.sqrt().max(STD_FLOOR);
            }
        }
        Self { mean, std }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &mut [f32]) {
        let channels = self.channels();
        let per = row.len() / channels;
        for c in 0..channels {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in &mut row[c * per..(c + 1) * per] {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }
}

/// Z-scores segments per channel. Pass `None` on the training split to fit
/// statistics; pass the returned stats for validation and test data.
pub fn normalize(segments: &mut [SegmentTensor], stats: Option<&ChannelStats>) -> ChannelStats {
    let stats = match stats {
        Some(s) => s.clone(),
        None => ChannelStats::fit(segments.iter().map(|s| s.values.as_slice()), 3),
    };
    for s in segments.iter_mut() {
        stats.apply(&mut s.values);
    }
    stats
}

/// Decodes 16-bit PCM mono audio to samples in `[-1, 1)` and its sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::Unsupported => {
            Error::UnsupportedEncoding(format!("{}: not PCM", path.display()))
        }
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedEncoding(format!(
            "{}: {:?} {}-bit",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.channels != 1 {
        return Err(Error::MonoRequired(spec.channels));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((samples, spec.sample_rate))
}

/// [`read_wav`], rejecting files whose rate differs from `cfg.sample_rate`.
pub fn load_wav(path: &Path, cfg: &MelConfig) -> Result<(Vec<f64>, u32)> {
    let (samples, rate) = read_wav(path)?;
    if rate != cfg.sample_rate {
        return Err(Error::SampleRate {
            found: rate,
            expected: cfg.sample_rate,
        });
    }
    Ok((samples, rate))
}

/// Full front-end on decoded samples.
pub fn extract_segments(
    samples: &[f64],
    cfg: &MelConfig,
    utterance: &str,
) -> Result<Vec<SegmentTensor>> {
    let stat = log_mel(samples, cfg)?;
    let d1 = delta(&stat, cfg.delta_window);
    let d2 = delta(&d1, cfg.delta_window);
    segment(&stat, &d1, &d2, cfg, utterance)
}

/// Header of a feature cache file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCacheHeader {
    pub format_version: u32,
    pub utterance_id: String,
    /// `[segments, channels, bins, frames]`; payload order is the same.
    pub shape: [usize; 4],
    pub channel_order: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mel_config: Option<MelConfig>,
    /// SHA-256 of the source file, used to skip unchanged inputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_sha256: Option<String>,
}

impl FeatureCacheHeader {
    pub fn segment_dim(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }
}

/// Feature cache contents: a header plus `segments x segment_dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub header: FeatureCacheHeader,
    pub values: Vec<f32>,
}

impl FeatureCache {
    pub fn from_segments(
        segments: &[SegmentTensor],
        cfg: &MelConfig,
        utterance: &str,
        source_sha256: Option<String>,
    ) -> Self {
        let frames = segments.first().map_or(cfg.context_frames, |s| s.frames);
        let mels = segments.first().map_or(cfg.n_mels, |s| s.n_mels);
        Self {
            header: FeatureCacheHeader {
                format_version: FEATURE_FORMAT_VERSION,
                utterance_id: utterance.to_string(),
                shape: [segments.len(), 3, mels, frames],
                channel_order: CHANNEL_ORDER.iter().map(|s| s.to_string()).collect(),
                mel_config: Some(cfg.clone()),
                source_sha256,
            },
            values: segments
                .iter()
                .flat_map(|s| s.values.iter().copied())
                .collect(),
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = &[f32]> {
        self.values.chunks_exact(self.header.segment_dim().max(1))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        container::write(path, &FEATURE_MAGIC, &self.header, &self.values)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let (header, values): (FeatureCacheHeader, Vec<f32>) =
            container::read(path, &FEATURE_MAGIC)?;
        let expected: usize = header.shape.iter().product();
        if values.len() != expected {
            return Err(Error::Container {
                path: path.to_path_buf(),
                reason: format!(
                    "shape {:?} needs {expected} values, found {}",
                    header.shape,
                    values.len()
                ),
            });
        }
        Ok(Self { header, values })
    }
}
