use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::fs;

use mcta_core::audio::{read_wav, write_wav_pcm16};
use mcta_core::augment::{add_noise, augment_manifest, pitch_shift, time_shift, AugmentSpec};
use mcta_core::dataset::{Manifest, ManifestRow, VariantKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn sine(freq: f64, sr: u32, n: usize) -> Vec<f32> {
    (0..n).map(|i| (TAU * freq * i as f64 / sr as f64).sin() as f32 * 0.5).collect()
}

/// Frequency of the largest magnitude bin of a Hann-windowed FFT, refined by
/// parabolic interpolation on log magnitudes.
fn peak_frequency(x: &[f32], sr: u32) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex64> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let w = 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos();
            Complex64::new(v as f64 * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let mags: Vec<f64> = buf[..n / 2].iter().map(|c| c.norm()).collect();
    let k = (1..mags.len() - 1).max_by(|&a, &b| mags[a].total_cmp(&mags[b])).unwrap();
    let (a, b, c) = (mags[k - 1].ln(), mags[k].ln(), mags[k + 1].ln());
    let offset = 0.5 * (a - c) / (a - 2.0 * b + c);
    (k as f64 + offset) * sr as f64 / n as f64
}

#[test]
fn octave_up_doubles_frequency() {
    let sr = 22_050;
    let x = sine(440.0, sr, sr as usize * 2);
    let y = pitch_shift(&x, 12.0, sr).unwrap();
    assert_eq!(y.len(), x.len());
    let f = peak_frequency(&y, sr);
    assert!((f - 880.0).abs() / 880.0 < 0.01, "peak at {f}");
}

#[test]
fn octave_down_halves_frequency() {
    let sr = 22_050;
    let x = sine(440.0, sr, sr as usize * 2);
    let y = pitch_shift(&x, -12.0, sr).unwrap();
    assert_eq!(y.len(), x.len());
    let f = peak_frequency(&y, sr);
    assert!((f - 220.0).abs() / 220.0 < 0.01, "peak at {f}");
}

#[test]
fn zero_semitones_is_near_identity() {
    let sr = 16_000;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = add_noise(&sine(300.0, sr, 16_000), 0.05, &mut rng).unwrap();
    let y = pitch_shift(&x, 0.0, sr).unwrap();
    let rms = (x.iter().zip(&y).map(|(a, b)| ((a - b) as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
    assert!(rms < 1e-3, "rms {rms}");
}

#[test]
fn delay_matches_slice() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = add_noise(&vec![0.0; 22_050], 1.0, &mut rng).unwrap();
    let y = time_shift(&x, 100.0 / 22_050.0, 22_050).unwrap();
    assert_eq!(&y[100..], &x[..x.len() - 100]);
    assert!(y[..100].iter().all(|&v| v == 0.0));
}

#[test]
fn noise_statistics_within_three_sigma() {
    let n = 100_000;
    let x = vec![0.25f32; n];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y = add_noise(&x, 0.01, &mut rng).unwrap();
    let d: Vec<f64> = y.iter().zip(&x).map(|(a, b)| (*a as f64) - (*b as f64)).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let std = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    // standard error of the mean is 0.01/sqrt(n); of the std about 0.01/sqrt(2n)
    assert!(mean.abs() < 3.0 * 0.01 / (n as f64).sqrt(), "mean {mean}");
    assert!((std - 0.01).abs() < 3.0 * 0.01 / (2.0 * n as f64).sqrt(), "std {std}");
}

fn tiny_corpus(dir: &std::path::Path, n: usize) -> Manifest {
    let rows = (0..n)
        .map(|i| {
            let id = format!("clip{i:04}");
            let path = dir.join("src").join(format!("{id}.wav"));
            write_wav_pcm16(&path, &sine(200.0 + i as f64, 4000, 400), 4000).unwrap();
            ManifestRow::original(id, path, i % 10, (i % 5) as u32 + 1)
        })
        .collect();
    Manifest::new(rows)
}

#[test]
fn expansion_quadruples_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_corpus(dir.path(), 20);
    let spec = AugmentSpec {
        seed: 5,
        ..AugmentSpec::default()
    };
    let a = augment_manifest(&m, &spec, &dir.path().join("a"), None).unwrap();
    assert_eq!(a.len(), 80);
    for kind in VariantKind::AUGMENTED {
        assert_eq!(a.rows.iter().filter(|r| r.variant_kind == kind).count(), 20);
    }
    for r in a.rows.iter().filter(|r| !r.is_original()) {
        let src = a.get(&r.source_id).unwrap();
        assert_eq!((src.fold, src.label), (r.fold, r.label));
        let (x, sr) = read_wav(&r.path).unwrap();
        assert_eq!((x.len(), sr), (400, 4000));
    }
    let b = augment_manifest(&m, &spec, &dir.path().join("b"), None).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows).filter(|(r, _)| !r.is_original()) {
        assert_eq!(ra.id, rb.id);
        assert_eq!(fs::read(&ra.path).unwrap(), fs::read(&rb.path).unwrap());
    }
    let other = AugmentSpec {
        seed: 6,
        ..AugmentSpec::default()
    };
    let c = augment_manifest(&m, &other, &dir.path().join("c"), None).unwrap();
    let noise = |m: &Manifest| m.rows.iter().find(|r| r.variant_kind == VariantKind::Noise).unwrap().path.clone();
    assert_ne!(fs::read(noise(&a)).unwrap(), fs::read(noise(&c)).unwrap());
}

#[test]
fn only_requested_folds_are_expanded() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny_corpus(dir.path(), 10);
    let train: BTreeSet<u32> = [1, 2, 3, 4].into();
    let a = augment_manifest(&m, &AugmentSpec::default(), &dir.path().join("a"), Some(&train)).unwrap();
    assert_eq!(a.len(), 10 + 3 * 8);
    assert!(a.rows.iter().filter(|r| r.fold == 5).all(|r| r.is_original()));
}

#[test]
fn empty_manifest_stays_empty() {
    let dir = tempfile::tempdir().unwrap();
    let out = augment_manifest(&Manifest::default(), &AugmentSpec::default(), dir.path(), None).unwrap();
    assert!(out.is_empty());
}

#[test]
fn unreadable_source_aborts_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = tiny_corpus(dir.path(), 3);
    m.rows.push(ManifestRow::original("ghost", dir.path().join("nope.wav"), 0, 1));
    let err = augment_manifest(&m, &AugmentSpec::default(), &dir.path().join("a"), None).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("1 of 4") && msg.contains("ghost"), "{msg}");
}
