//! Log-Mel spectrogram frontend for the acoustic view.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_io::FeatureTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    /// Defaults to the Nyquist frequency.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            win_length: 400,
            hop_length: 160,
            n_fft: 512,
            n_mels: 80,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn fmax(&self) -> f64 {
        self.fmax.unwrap_or(f64::from(self.sample_rate) / 2.0)
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let nyquist = f64::from(self.sample_rate) / 2.0;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be > 0".into());
        }
        if self.win_length == 0 || self.win_length > self.n_fft {
            return bad(format!(
                "need 0 < win_length ({}) <= n_fft ({})",
                self.win_length, self.n_fft
            ));
        }
        if self.hop_length == 0 {
            return bad("hop_length must be >= 1".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be >= 1".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax() && self.fmax() <= nyquist) {
            return bad(format!(
                "need 0 <= fmin ({}) < fmax ({}) <= {nyquist}",
                self.fmin,
                self.fmax()
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be > 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Reads 16-bit PCM WAV, scaling by 1/32768 and averaging channels to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "{}: only 16-bit PCM is supported ({:?}, {} bits)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let channels = usize::from(spec.channels.max(1));
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| f64::from(s) / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes mono 16-bit PCM; samples are clipped to `[-1, 1)`.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let wrap = |e: hound::Error| Error::Wav(format!("{}: {e}", path.display()));
    let mut w = hound::WavWriter::create(path, spec).map_err(wrap)?;
    for &s in &wave.samples {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        w.write_sample(v).map_err(wrap)?;
    }
    w.finalize().map_err(wrap)
}

/// Number of full frames: `1 + floor((len - win) / hop)`, or 0 if shorter
/// than one window.
pub fn frame_count(len: usize, win: usize, hop: usize) -> usize {
    if len < win {
        0
    } else {
        1 + (len - win) / hop
    }
}

/// Periodic Hann window.
fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Power spectra of Hann-windowed frames, `T` rows of `n_fft / 2 + 1` bins.
/// Frames start at multiples of `hop_length`; no padding.
pub fn stft_power(wave: &Waveform, config: &MelConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let frames = frame_count(wave.samples.len(), config.win_length, config.hop_length);
    if frames == 0 {
        return Err(Error::Invalid(format!(
            "waveform of {} samples is shorter than one window ({})",
            wave.samples.len(),
            config.win_length
        )));
    }
    let window = hann(config.win_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(config.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); config.n_fft];
    let mut out = Vec::with_capacity(frames);
    for t in 0..frames {
        let start = t * config.hop_length;
        let frame = &wave.samples[start..start + config.win_length];
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for ((c, &s), &w) in buf.iter_mut().zip(frame).zip(&window) {
            c.re = s * w;
        }
        fft.process(&mut buf);
        out.push(buf[..config.n_bins()].iter().map(|c| c.norm_sqr()).collect());
    }
    Ok(out)
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters (peak 1) with centers equally spaced on the mel scale,
/// `n_mels` rows by `n_fft / 2 + 1` columns.
pub fn mel_filterbank(config: &MelConfig) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax()));
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let bin_hz = f64::from(config.sample_rate) / config.n_fft as f64;
    let mut bank = Vec::with_capacity(config.n_mels);
    for m in 0..config.n_mels {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        let row: Vec<f64> = (0..config.n_bins())
            .map(|k| {
                let f = k as f64 * bin_hz;
                let up = (f - left) / (center - left);
                let down = (right - f) / (right - center);
                up.min(down).max(0.0)
            })
            .collect();
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig(format!(
                "mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; reduce n_mels or raise n_fft"
            )));
        }
        bank.push(row);
    }
    Ok(bank)
}

/// `log10(max(filterbank * power, floor))` per frame, as a `T x n_mels` tensor.
pub fn log_mel(wave: &Waveform, config: &MelConfig) -> Result<FeatureTensor> {
    if wave.sample_rate != config.sample_rate {
        return Err(Error::Invalid(format!(
            "sample rate {} does not match configured {}",
            wave.sample_rate, config.sample_rate
        )));
    }
    let bank = mel_filterbank(config)?;
    let power = stft_power(wave, config)?;
    let mut data = Vec::with_capacity(power.len() * config.n_mels);
    for frame in &power {
        for filter in &bank {
            let energy: f64 = filter.iter().zip(frame).map(|(w, p)| w * p).sum();
            data.push(energy.max(config.log_floor).log10() as f32);
        }
    }
    FeatureTensor::new(vec![power.len(), config.n_mels], data)
}

pub fn extract_mel(path: impl AsRef<Path>, config: &MelConfig) -> Result<FeatureTensor> {
    log_mel(&read_wav(path)?, config)
}
