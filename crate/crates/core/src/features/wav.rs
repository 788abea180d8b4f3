use std::path::Path;

use super::FeatureError;

/// Mono audio scaled to [-1, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Reads 16-bit PCM WAV, averaging stereo channels.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip, FeatureError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(FeatureError::MissingFile(path.to_path_buf()));
    }
    let unsupported = |reason: String| FeatureError::UnsupportedEncoding {
        path: path.to_path_buf(),
        reason,
    };
    // the file exists, so any failure to parse its header is an encoding problem
    let reader = hound::WavReader::open(path).map_err(|e| unsupported(e.to_string()))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(unsupported(format!(
            "{:?} {}-bit samples, only 16-bit PCM is supported",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = usize::from(spec.channels);
    if !(1..=2).contains(&channels) {
        return Err(unsupported(format!("{channels} channels")));
    }
    if spec.sample_rate == 0 {
        return Err(unsupported("zero sample rate".into()));
    }
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<Result<_, _>>()
        .map_err(|e| unsupported(e.to_string()))?;
    let samples: Vec<f64> = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|s| f64::from(*s) / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    if samples.is_empty() {
        return Err(FeatureError::EmptyAudio(path.to_path_buf()));
    }
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
    })
}
