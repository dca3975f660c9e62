use std::f64::consts::PI;
use std::path::Path;

use pathnet::audio::{
    delta, extract_segments, frame_count, load_wav, log_mel, mel_energies, normalize, read_wav,
    segment_count, FeatureCache, FrameMatrix, MelConfig, MelFilterbank,
};
use pathnet::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn brute_frames(len: usize, win: usize, hop: usize) -> usize {
    let mut n = 0;
    let mut start = 0;
    while start + win <= len {
        n += 1;
        start += hop;
    }
    n
}

fn brute_segment_starts(frames: usize, ctx: usize, hop: usize) -> Vec<usize> {
    if frames == 0 {
        return vec![];
    }
    if frames < ctx {
        return vec![0];
    }
    (0..frames)
        .step_by(hop)
        .filter(|s| s + ctx <= frames)
        .collect()
}

#[test]
fn framing_matches_brute_force() {
    let cfg = MelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let len = rng.random_range(400..=200_000);
        let frames = frame_count(len, cfg.win_len, cfg.hop);
        assert_eq!(frames, brute_frames(len, cfg.win_len, cfg.hop), "len {len}");
        let starts = brute_segment_starts(frames, cfg.context_frames, cfg.segment_hop);
        assert_eq!(
            segment_count(frames, cfg.context_frames, cfg.segment_hop),
            starts.len()
        );
    }
}

#[test]
fn three_seconds_framing() {
    let cfg = MelConfig::default();
    let frames = frame_count(48_000, cfg.win_len, cfg.hop);
    assert_eq!(frames, 298);
    let starts = brute_segment_starts(frames, 64, 34);
    assert_eq!(starts, vec![0, 34, 68, 102, 136, 170, 204]);
    assert_eq!(segment_count(frames, 64, 34), 7);
    assert!((cfg.segment_span_ms() - 655.0).abs() < 1e-9);
    assert_eq!(cfg.segment_dim(), 12_288);

    let x = noise(48_000, 1);
    let segs = extract_segments(&x, &cfg, "u").unwrap();
    assert_eq!(segs.len(), 7);
    let stat = log_mel(&x, &cfg).unwrap();
    for (s, seg) in segs.iter().enumerate() {
        assert_eq!(seg.index, s);
        for f in [0, 17, 63] {
            for mel in [0, 31, 63] {
                assert_eq!(seg.at(mel, f, 0), stat.get(s * 34 + f, mel) as f32);
            }
        }
    }
}

#[test]
fn exact_context_and_short_inputs() {
    let cfg = MelConfig::default();
    let len = 400 + 63 * 160;
    assert_eq!(frame_count(len, 400, 160), 64);
    assert_eq!(
        extract_segments(&noise(len, 2), &cfg, "u").unwrap().len(),
        1
    );

    let short = noise(400 + 9 * 160, 3);
    let segs = extract_segments(&short, &cfg, "u").unwrap();
    assert_eq!(segs.len(), 1);
    let seg = &segs[0];
    for ch in 0..3 {
        for mel in [0, 40] {
            let last = seg.at(mel, 9, ch);
            for f in 10..64 {
                assert_eq!(seg.at(mel, f, ch), last);
            }
        }
    }

    assert!(matches!(
        extract_segments(&noise(399, 4), &cfg, "u"),
        Err(Error::UtteranceTooShort {
            samples: 399,
            window: 400
        })
    ));
}

#[test]
fn delta_identities() {
    let rows = 12;
    let constant = FrameMatrix::new(rows, 2, vec![3.25; rows * 2]);
    assert!(delta(&constant, 2).data.iter().all(|&v| v == 0.0));

    let ramp = FrameMatrix::new(rows, 1, (0..rows).map(|t| t as f64).collect());
    let d1 = delta(&ramp, 2);
    for t in 2..rows - 2 {
        assert!((d1.get(t, 0) - 1.0).abs() < 1e-12);
    }
    let d2 = delta(&d1, 2);
    for t in 4..rows - 4 {
        assert!(d2.get(t, 0).abs() < 1e-12);
    }

    let a = FrameMatrix::new(rows, 3, noise(rows * 3, 5));
    let b = FrameMatrix::new(rows, 3, noise(rows * 3, 6));
    let (alpha, beta) = (0.7, -1.3);
    let mix = FrameMatrix::new(
        rows,
        3,
        a.data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| alpha * x + beta * y)
            .collect(),
    );
    let (da, db, dm) = (delta(&a, 2), delta(&b, 2), delta(&mix, 2));
    for i in 0..dm.data.len() {
        assert!((dm.data[i] - (alpha * da.data[i] + beta * db.data[i])).abs() < 1e-12);
    }
}

fn oracle_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let (lo, hi) = (mel(cfg.fmin), mel(cfg.fmax));
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64)
        .collect();
    let bins = cfg.fft_size / 2 + 1;
    (0..cfg.n_mels)
        .map(|m| {
            (0..bins)
                .map(|k| {
                    let b = mel(k as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64);
                    if b <= points[m] || b >= points[m + 2] {
                        0.0
                    } else if b <= points[m + 1] {
                        (b - points[m]) / (points[m + 1] - points[m])
                    } else {
                        (points[m + 2] - b) / (points[m + 2] - points[m + 1])
                    }
                })
                .collect()
        })
        .collect()
}

fn oracle_mel_energies(x: &[f64], cfg: &MelConfig) -> Vec<Vec<f64>> {
    let fb = oracle_filterbank(cfg);
    let frames = brute_frames(x.len(), cfg.win_len, cfg.hop);
    let n = cfg.win_len;
    (0..frames)
        .map(|t| {
            let w: Vec<f64> = (0..n)
                .map(|i| {
                    x[t * cfg.hop + i]
                        * (0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
                })
                .collect();
            let power: Vec<f64> = (0..=cfg.fft_size / 2)
                .map(|k| {
                    let (mut re, mut im) = (0.0, 0.0);
                    for (i, v) in w.iter().enumerate() {
                        let a = -2.0 * PI * (k * i) as f64 / cfg.fft_size as f64;
                        re += v * a.cos();
                        im += v * a.sin();
                    }
                    re * re + im * im
                })
                .collect();
            fb.iter()
                .map(|f| f.iter().zip(&power).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

#[test]
fn mel_energies_match_naive_dft() {
    let cfg = MelConfig::default();
    let x = noise(400 + 3 * 160, 7);
    let got = mel_energies(&x, &cfg).unwrap();
    let want = oracle_mel_energies(&x, &cfg);
    assert_eq!(got.rows, want.len());
    for (t, row) in want.iter().enumerate() {
        for (m, &w) in row.iter().enumerate() {
            let g = got.get(t, m);
            assert!(
                (g - w).abs() <= 1e-9 * w.abs().max(1e-12),
                "t {t} m {m}: {g} vs {w}"
            );
        }
    }
}

#[test]
fn filterbank_shape() {
    let cfg = MelConfig::default();
    let fb = MelFilterbank::new(&cfg);
    assert_eq!((fb.weights.rows, fb.weights.cols), (64, 257));
    for m in 0..64 {
        assert!(
            fb.weights.row(m).iter().sum::<f64>() > 0.0,
            "filter {m} is empty"
        );
        assert!(fb.weights.row(m).iter().all(|&w| (0.0..=1.0).contains(&w)));
    }
    assert!(fb.centers_hz.windows(2).all(|w| w[0] < w[1]));
    assert!(fb.centers_hz[0] > cfg.fmin && fb.centers_hz[63] < cfg.fmax);
}

fn sine(hz: f64, amp: f64, n: usize, sr: f64) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * PI * hz * i as f64 / sr).sin())
        .collect()
}

#[test]
fn energy_scales_with_amplitude_squared() {
    let cfg = MelConfig::default();
    let x = noise(4000, 8);
    let a = 3.0;
    let scaled: Vec<f64> = x.iter().map(|v| v * a).collect();
    let (e1, e2) = (
        mel_energies(&x, &cfg).unwrap(),
        mel_energies(&scaled, &cfg).unwrap(),
    );
    for (p, q) in e1.data.iter().zip(&e2.data) {
        assert!((q - a * a * p).abs() <= 1e-9 * q.abs());
    }
}

#[test]
fn tone_peaks_in_nearest_band() {
    let cfg = MelConfig::default();
    let fb = MelFilterbank::new(&cfg);
    let nearest = fb
        .centers_hz
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
        .unwrap()
        .0;
    let m = log_mel(&sine(1000.0, 0.5, 16_000, 16_000.0), &cfg).unwrap();
    for t in 0..m.rows {
        let peak = (0..m.cols)
            .max_by(|&a, &b| m.get(t, a).total_cmp(&m.get(t, b)))
            .unwrap();
        assert_eq!(peak, nearest, "frame {t}");
    }
}

#[test]
fn silence_hits_the_log_floor() {
    let cfg = MelConfig::default();
    let m = log_mel(&vec![0.0; 16_000], &cfg).unwrap();
    let floor = 1e-6f64.ln();
    assert!(m.data.iter().all(|&v| v == floor));
}

#[test]
fn pipeline_is_deterministic_and_mode_independent() {
    let cfg = MelConfig::default();
    let x = noise(48_000, 9);
    let a = extract_segments(&x, &cfg, "u").unwrap();
    let b = extract_segments(&x, &cfg, "u").unwrap();
    assert_eq!(a, b);
    pathnet::par::set_sequential(true);
    let seq = log_mel(&x, &cfg).unwrap();
    pathnet::par::set_sequential(false);
    let par = log_mel(&x, &cfg).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn normalization_uses_training_statistics() {
    let cfg = MelConfig::default();
    let mut train = extract_segments(&noise(20_000, 10), &cfg, "a").unwrap();
    let mut test = extract_segments(&noise(20_000, 12), &cfg, "b").unwrap();
    let stats = normalize(&mut train, None);
    assert_eq!(stats.channels(), 3);
    for c in 0..3 {
        let vals: Vec<f64> = train
            .iter()
            .flat_map(|s| s.channel(c))
            .map(|&v| v as f64)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-4, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-3, "channel {c} var {var}");
    }
    let raw = test.clone();
    let again = normalize(&mut test, Some(&stats));
    assert_eq!(again, stats);
    let per = 64 * 64;
    let v = raw[0].values[per + 5] as f64;
    let want = ((v - stats.mean[1]) / stats.std[1]) as f32;
    assert_eq!(test[0].values[per + 5], want);
}

fn write_wav(path: &Path, rate: u32, channels: u16, samples: &[i16]) {
    let spec = hound::WavSpec {
        channels,
        sample_rate: rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec).unwrap();
    for &s in samples {
        w.write_sample(s).unwrap();
    }
    w.finalize().unwrap();
}

#[test]
fn wav_decoding() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("a.wav");
    write_wav(&p, 16_000, 1, &[0, 16384, -32768]);
    assert_eq!(read_wav(&p).unwrap(), (vec![0.0, 0.5, -1.0], 16_000));

    let p = dir.path().join("3s.wav");
    write_wav(&p, 16_000, 1, &vec![100; 48_000]);
    let (x, _) = load_wav(&p, &MelConfig::default()).unwrap();
    assert_eq!(x.len(), 48_000);
    assert_eq!(
        extract_segments(&x, &MelConfig::default(), "u")
            .unwrap()
            .len(),
        7
    );

    let p = dir.path().join("44k.wav");
    write_wav(&p, 44_100, 1, &[0; 1000]);
    assert!(matches!(
        load_wav(&p, &MelConfig::default()),
        Err(Error::SampleRate {
            found: 44_100,
            expected: 16_000
        })
    ));

    let p = dir.path().join("stereo.wav");
    write_wav(&p, 16_000, 2, &[0; 1000]);
    assert!(matches!(read_wav(&p), Err(Error::MonoRequired(2))));

    let p = dir.path().join("float.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 16_000,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(&p, spec).unwrap();
    w.write_sample(0.25f32).unwrap();
    w.finalize().unwrap();
    assert!(matches!(read_wav(&p), Err(Error::UnsupportedEncoding(_))));
}

#[test]
fn feature_cache_round_trip() {
    let cfg = MelConfig::default();
    let segs = extract_segments(&noise(20_000, 13), &cfg, "spk1/utt 3").unwrap();
    let cache = FeatureCache::from_segments(&segs, &cfg, "spk1/utt 3", Some("ab".into()));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.pnfc");
    cache.write(&p).unwrap();
    let back = FeatureCache::read(&p).unwrap();
    assert_eq!(back, cache);
    assert_eq!(back.header.shape, [segs.len(), 3, 64, 64]);
    for (a, b) in back.segments().zip(&segs) {
        assert_eq!(a, b.values.as_slice());
    }
    let bytes = std::fs::read(&p).unwrap();
    assert_eq!(&bytes[..8], b"PNETFEAT");
}

proptest! {
    #[test]
    fn frame_count_is_brute_force(len in 0usize..5000, win in 2usize..600, hop in 1usize..300) {
        prop_assert_eq!(frame_count(len, win, hop), brute_frames(len, win, hop));
    }

    #[test]
    fn segment_count_is_brute_force(frames in 0usize..2000, ctx in 1usize..100, hop in 1usize..80) {
        prop_assert_eq!(segment_count(frames, ctx, hop), brute_segment_starts(frames, ctx, hop).len());
    }
}
