use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{AudioClip, FeatureError, FeatureMatrix, SpeechFeatureSequence, SPEECH_DIM};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    #[default]
    Hann,
    Hamming,
    Rectangular,
}

impl WindowKind {
    /// Symmetric window of `len` taps.
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let denom = (len.max(2) - 1) as f64;
        (0..len)
            .map(|n| {
                let phase = 2.0 * PI * n as f64 / denom;
                match self {
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    pub frame_seconds: f64,
    pub hop_seconds: f64,
    pub fft_size: usize,
    pub mel_filters: usize,
    pub coefficients: usize,
    pub pre_emphasis: f64,
    pub window: WindowKind,
    pub log_floor: f64,
    pub low_hz: f64,
    /// Upper filterbank edge; Nyquist when absent.
    pub high_hz: Option<f64>,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_seconds: 0.025,
            hop_seconds: 0.010,
            fft_size: 512,
            mel_filters: 26,
            coefficients: SPEECH_DIM,
            pre_emphasis: 0.97,
            window: WindowKind::Hann,
            log_floor: 1e-10,
            low_hz: 0.0,
            high_hz: None,
        }
    }
}

impl MfccConfig {
    pub fn frame_samples(&self, sample_rate: u32) -> usize {
        (self.frame_seconds * f64::from(sample_rate)).round() as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_seconds * f64::from(sample_rate)).round() as usize
    }

    pub fn validate(&self, sample_rate: u32) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::InvalidConfig(m));
        let frame = self.frame_samples(sample_rate);
        if sample_rate == 0 {
            return bad("sample rate must be positive".into());
        }
        if frame == 0 || self.hop_samples(sample_rate) == 0 {
            return bad(format!("frame and hop must span at least one sample at {sample_rate} Hz"));
        }
        if self.fft_size < frame {
            return bad(format!("fft_size {} shorter than the {frame}-sample frame", self.fft_size));
        }
        if self.coefficients != SPEECH_DIM {
            return bad(format!("coefficient count must be {SPEECH_DIM}, got {}", self.coefficients));
        }
        if self.coefficients > self.mel_filters {
            return bad(format!(
                "{} coefficients exceed {} mel filters",
                self.coefficients, self.mel_filters
            ));
        }
        let nyquist = f64::from(sample_rate) / 2.0;
        let high = self.high_hz.unwrap_or(nyquist);
        if !(self.low_hz >= 0.0 && self.low_hz < high && high <= nyquist) {
            return bad(format!("filterbank edges {}..{high} Hz outside 0..{nyquist}", self.low_hz));
        }
        if !(self.log_floor > 0.0) {
            return bad("log floor must be positive".into());
        }
        Ok(())
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// MFCC pipeline bound to one sample rate.
///
/// Each frame is processed independently: pre-emphasis, window, power
/// spectrum `|X|²/N`, triangular mel filterbank, natural log with a floor,
/// orthonormal DCT-II.
pub struct MfccExtractor {
    config: MfccConfig,
    sample_rate: u32,
    frame: usize,
    hop: usize,
    window: Vec<f64>,
    /// `mel_filters × (fft_size/2 + 1)` weights.
    filterbank: Vec<Vec<f64>>,
    dct: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
}

impl MfccExtractor {
    pub fn new(config: &MfccConfig, sample_rate: u32) -> Result<Self, FeatureError> {
        config.validate(sample_rate)?;
        let frame = config.frame_samples(sample_rate);
        let hop = config.hop_samples(sample_rate);
        let n_fft = config.fft_size;
        let bins = n_fft / 2 + 1;
        let high = config.high_hz.unwrap_or(f64::from(sample_rate) / 2.0);
        let (mel_lo, mel_hi) = (hz_to_mel(config.low_hz), hz_to_mel(high));
        let m = config.mel_filters;
        let edges: Vec<f64> = (0..m + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (m + 1) as f64))
            .collect();
        let filterbank = (0..m)
            .map(|f| {
                let (left, center, right) = (edges[f], edges[f + 1], edges[f + 2]);
                (0..bins)
                    .map(|k| {
                        let hz = k as f64 * f64::from(sample_rate) / n_fft as f64;
                        if hz > left && hz <= center {
                            (hz - left) / (center - left)
                        } else if hz > center && hz < right {
                            (right - hz) / (right - center)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let dct = (0..config.coefficients)
            .map(|i| {
                let scale = if i == 0 { (1.0 / m as f64).sqrt() } else { (2.0 / m as f64).sqrt() };
                (0..m)
                    .map(|j| scale * (PI * i as f64 * (j as f64 + 0.5) / m as f64).cos())
                    .collect()
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            sample_rate,
            frame,
            hop,
            window: config.window.coefficients(frame),
            filterbank,
            dct,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        })
    }

    pub fn config(&self) -> &MfccConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn frame_len(&self) -> usize {
        self.frame
    }

    pub fn hop_len(&self) -> usize {
        self.hop
    }

    pub fn filterbank(&self) -> &[Vec<f64>] {
        &self.filterbank
    }

    pub fn frame_count(&self, samples: usize) -> Result<usize, FeatureError> {
        if samples < self.frame {
            return Err(FeatureError::ClipTooShort {
                samples,
                frame: self.frame,
            });
        }
        Ok(1 + (samples - self.frame) / self.hop)
    }

    fn power_spectrum(&self, frame: &[f64], buf: &mut Vec<Complex<f64>>) -> Vec<f64> {
        let n_fft = self.config.fft_size;
        buf.clear();
        buf.resize(n_fft, Complex::new(0.0, 0.0));
        let alpha = self.config.pre_emphasis;
        for i in 0..frame.len() {
            let emphasized = if i == 0 { frame[0] } else { frame[i] - alpha * frame[i - 1] };
            buf[i].re = emphasized * self.window[i];
        }
        self.fft.process(buf);
        buf[..n_fft / 2 + 1].iter().map(|c| c.norm_sqr() / n_fft as f64).collect()
    }

    /// Linear (pre-log) mel filterbank energies, one row per frame.
    pub fn mel_energies(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>, FeatureError> {
        let frames = self.frame_count(samples.len())?;
        let mut buf = Vec::with_capacity(self.config.fft_size);
        Ok((0..frames)
            .map(|t| {
                let start = t * self.hop;
                let power = self.power_spectrum(&samples[start..start + self.frame], &mut buf);
                self.filterbank
                    .iter()
                    .map(|w| w.iter().zip(&power).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect())
    }

    /// Cepstral coefficients from one frame's mel energies.
    pub fn cepstrum(&self, energies: &[f64]) -> Vec<f64> {
        let logs: Vec<f64> = energies.iter().map(|e| e.max(self.config.log_floor).ln()).collect();
        self.dct
            .iter()
            .map(|basis| basis.iter().zip(&logs).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn extract(&self, samples: &[f64]) -> Result<SpeechFeatureSequence, FeatureError> {
        let energies = self.mel_energies(samples)?;
        let rows = energies.len();
        let data = energies.iter().flat_map(|e| self.cepstrum(e)).collect();
        Ok(SpeechFeatureSequence {
            frames: FeatureMatrix::new(rows, self.config.coefficients, data)?,
            hop_seconds: self.hop as f64 / f64::from(self.sample_rate),
        })
    }
}

/// 13-coefficient MFCC frames for `clip`.
pub fn mfcc(clip: &AudioClip, config: &MfccConfig) -> Result<SpeechFeatureSequence, FeatureError> {
    if clip.samples.iter().any(|s| !s.is_finite()) {
        return Err(FeatureError::InvalidConfig("audio contains non-finite samples".into()));
    }
    MfccExtractor::new(config, clip.sample_rate)?.extract(&clip.samples)
}
