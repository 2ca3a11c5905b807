//! Mono audio clips and WAV (RIFF) IO.

use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub label: usize,
    pub fold: u32,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        let clip = Self {
            id: id.into(),
            samples,
            sample_rate,
            label: 0,
            fold: 0,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidInput(format!("clip {} has no samples", self.id)));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidInput(format!("clip {} has sample rate 0", self.id)));
        }
        Ok(())
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Reads PCM (8/16/24/32-bit) or 32-bit float WAV; multi-channel input is
/// averaged down to mono. Returns samples and sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = hound::WavReader::open(path).map_err(wav_err)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::parse(path, "zero channels"));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::parse(path, format!("unsupported float width {}", spec.bits_per_sample)));
            }
            reader.samples::<f32>().collect::<Result<_, _>>().map_err(wav_err)?
        }
        SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24 | 32) {
                return Err(Error::parse(path, format!("unsupported PCM width {bits}")));
            }
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(wav_err)?
        }
    };
    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().map(|&v| v as f64).sum::<f64>() as f32 / channels as f32)
            .collect()
    };
    Ok((mono, spec.sample_rate))
}

pub fn load_clip(path: &Path, id: &str) -> Result<AudioClip> {
    let (samples, sample_rate) = read_wav(path)?;
    let clip = AudioClip {
        id: id.to_string(),
        samples,
        sample_rate,
        label: 0,
        fold: 0,
    };
    clip.validate().map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(clip)
}

fn writer(path: &Path, spec: WavSpec) -> Result<WavWriter<std::io::BufWriter<std::fs::File>>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    WavWriter::create(path, spec).map_err(|source| Error::Wav {
        path: path.to_path_buf(),
        source,
    })
}

/// Mono 16-bit PCM. Uses the same 1/32768 scale as the reader, so a
/// write/read round trip is off by at most half a quantisation step.
pub fn write_wav_pcm16(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = writer(path, spec)?;
    for &s in samples {
        let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(q).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}

/// Mono 32-bit float.
pub fn write_wav_f32(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let wav_err = |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    };
    let mut w = writer(path, spec)?;
    for &s in samples {
        w.write_sample(s).map_err(wav_err)?;
    }
    w.finalize().map_err(wav_err)
}
