//! Short-time Fourier transform, its inverse, and band-limited resampling.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Periodic Hann window (the DFT-even variant used for STFT analysis).
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Index into `len` samples with mirror reflection at both ends (the edge
/// sample is not repeated).
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Number of centered frames for a signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

/// Centered STFT with reflect padding of `n_fft / 2` on both ends.
/// Returns `frames x (n_fft / 2 + 1)` complex bins.
pub fn stft(samples: &[f32], n_fft: usize, hop: usize) -> Vec<Vec<Complex64>> {
    let window = hann(n_fft);
    let pad = (n_fft / 2) as isize;
    let frames = frame_count(samples.len(), hop);
    let bins = n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let start = (f * hop) as isize - pad;
        for (k, slot) in buf.iter_mut().enumerate() {
            let s = samples[reflect_index(start + k as isize, samples.len())] as f64;
            *slot = Complex64::new(s * window[k], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..bins].to_vec());
    }
    out
}

/// Inverse of [`stft`] by windowed overlap-add normalised by the summed
/// squared window; output is cropped or zero-padded to `length`.
pub fn istft(frames: &[Vec<Complex64>], n_fft: usize, hop: usize, length: usize) -> Vec<f32> {
    let window = hann(n_fft);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_fft);
    let total = n_fft + hop * frames.len().saturating_sub(1);
    let mut acc = vec![0.0f64; total];
    let mut wsum = vec![0.0f64; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for (f, spec) in frames.iter().enumerate() {
        let bins = spec.len();
        for k in 0..n_fft {
            buf[k] = if k < bins {
                spec[k]
            } else {
                spec[n_fft - k].conj()
            };
        }
        // DC and Nyquist of a real signal are real
        buf[0].im = 0.0;
        if n_fft % 2 == 0 {
            buf[n_fft / 2].im = 0.0;
        }
        ifft.process(&mut buf);
        let offset = f * hop;
        for k in 0..n_fft {
            acc[offset + k] += buf[k].re / n_fft as f64 * window[k];
            wsum[offset + k] += window[k] * window[k];
        }
    }
    let start = n_fft / 2;
    (0..length)
        .map(|i| {
            let j = start + i;
            if j < total && wsum[j] > 1e-10 {
                (acc[j] / wsum[j]) as f32
            } else if j < total {
                acc[j] as f32
            } else {
                0.0
            }
        })
        .collect()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(u: f64) -> f64 {
    // u in [-1, 1]
    0.42 + 0.5 * (PI * u).cos() + 0.08 * (2.0 * PI * u).cos()
}

/// Band-limited resampling by windowed-sinc interpolation. Output sample `j`
/// is read at input position `j * step`; `step > 1` shortens the signal and
/// low-passes at the new Nyquist frequency.
pub fn resample(input: &[f32], step: f64, out_len: usize) -> Vec<f32> {
    const ZERO_CROSSINGS: f64 = 16.0;
    let cutoff = (1.0 / step).min(1.0);
    let half = (ZERO_CROSSINGS / cutoff).ceil() as isize;
    let n = input.len() as isize;
    (0..out_len)
        .map(|j| {
            let pos = j as f64 * step;
            let center = pos.floor() as isize;
            let mut acc = 0.0;
            for i in (center - half + 1).max(0)..=(center + half).min(n - 1) {
                let d = pos - i as f64;
                let u = d * cutoff / ZERO_CROSSINGS;
                if u.abs() >= 1.0 {
                    continue;
                }
                acc += input[i as usize] as f64 * cutoff * sinc(cutoff * d) * blackman(u);
            }
            acc as f32
        })
        .collect()
}
