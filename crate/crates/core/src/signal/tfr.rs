//! Time-frequency magnitude maps.

use std::f64::consts::PI;

use advkit_diff::{StftKernel, StftSpec, Tensor, WindowKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Error, Result};

pub const DEFAULT_CYCLES: f64 = 7.0;

/// Wavelets are truncated at this many standard deviations of their envelope.
const MORLET_SUPPORT_SIGMAS: f64 = 4.0;

/// `C x F x M` nonnegative magnitudes with their axes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeFreqMap {
    pub values: Tensor<f64>,
    pub freqs_hz: Vec<f64>,
    pub times_s: Vec<f64>,
}

impl TimeFreqMap {
    pub fn channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn at(&self, c: usize, f: usize, m: usize) -> f64 {
        let s = self.values.shape();
        self.values.data()[(c * s[1] + f) * s[2] + m]
    }

    /// Single-channel `F x M` slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let s = self.values.shape();
        &self.values.data()[c * s[1] * s[2]..(c + 1) * s[1] * s[2]]
    }

    /// Elementwise mean of maps with identical axes.
    pub fn mean(maps: &[TimeFreqMap]) -> Result<TimeFreqMap> {
        let first = maps.first().ok_or_else(|| invalid("no maps to average"))?;
        let mut acc = vec![0.0; first.values.len()];
        for m in maps {
            if m.values.shape() != first.values.shape() {
                return Err(Error::Shape("maps differ in shape".into()));
            }
            for (a, v) in acc.iter_mut().zip(m.values.data()) {
                *a += v;
            }
        }
        let k = maps.len() as f64;
        Ok(TimeFreqMap {
            values: Tensor::new(first.values.shape().to_vec(), acc.into_iter().map(|a| a / k).collect())?,
            ..first.clone()
        })
    }

    /// Freq rows x time columns for one channel, with a header row of times.
    pub fn to_csv(&self, channel: usize) -> String {
        let s = self.values.shape();
        let mut out = String::from("freq_hz");
        for t in &self.times_s {
            out.push_str(&format!(",{t:.6}"));
        }
        out.push('\n');
        for (fi, f) in self.freqs_hz.iter().enumerate() {
            out.push_str(&format!("{f:.6}"));
            for m in 0..s[2] {
                out.push_str(&format!(",{:.9e}", self.at(channel, fi, m)));
            }
            out.push('\n');
        }
        out
    }
}

/// Spectrogram geometry for a given epoch length.
pub fn stft_spec(window_len: usize, hop: usize, window: WindowKind, samples: usize) -> Result<StftSpec> {
    if window_len == 0 || hop == 0 {
        return Err(invalid("window length and hop must be positive"));
    }
    if window_len > samples {
        return Err(invalid(format!("window {window_len} longer than epoch of {samples} samples")));
    }
    Ok(StftSpec { window_len, hop, window })
}

/// Magnitude spectrogram of every channel of every epoch.
pub fn stft(set: &EpochSet, window_len: usize, hop: usize, window: WindowKind) -> Result<Vec<TimeFreqMap>> {
    let (c, t) = (set.n_channels(), set.n_samples());
    let spec = stft_spec(window_len, hop, window, t)?;
    let kernel = StftKernel::<f64>::new(&spec, c, t);
    let (bins, frames) = (kernel.bins(), kernel.frames());
    let freqs_hz: Vec<f64> = (0..bins).map(|k| k as f64 * set.fs() / window_len as f64).collect();
    let times_s: Vec<f64> = (0..frames)
        .map(|m| (m * hop) as f64 / set.fs() + window_len as f64 / (2.0 * set.fs()))
        .collect();
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let x: Vec<f64> = set.epoch(i).iter().map(|&v| v as f64).collect();
            let out = kernel.forward(&x, 1);
            Ok(TimeFreqMap {
                values: Tensor::new(vec![c, bins, frames], out.magnitude)?,
                freqs_hz: freqs_hz.clone(),
                times_s: times_s.clone(),
            })
        })
        .collect()
}

/// Unit-energy complex Morlet wavelet at `freq_hz` (real, imaginary parts).
pub fn morlet_wavelet(freq_hz: f64, fs: f64, cycles: f64) -> (Vec<f64>, Vec<f64>) {
    let sigma = cycles / (2.0 * PI * freq_hz) * fs;
    let half = (MORLET_SUPPORT_SIGMAS * sigma).ceil() as isize;
    let (mut re, mut im) = (Vec::new(), Vec::new());
    for n in -half..=half {
        let t = n as f64;
        let env = (-t * t / (2.0 * sigma * sigma)).exp();
        let ph = 2.0 * PI * freq_hz * t / fs;
        re.push(env * ph.cos());
        im.push(env * ph.sin());
    }
    let norm = re.iter().chain(&im).map(|v| v * v).sum::<f64>().sqrt();
    re.iter_mut().chain(im.iter_mut()).for_each(|v| *v /= norm);
    (re, im)
}

/// Magnitude of the centered ("same") convolution with a complex Morlet
/// wavelet, per channel and frequency; the time axis is the sample grid.
pub fn morlet_map(set: &EpochSet, freqs_hz: &[f64], cycles: f64) -> Result<Vec<TimeFreqMap>> {
    if freqs_hz.is_empty() {
        return Err(invalid("empty frequency list"));
    }
    let nyq = set.fs() / 2.0;
    if let Some(f) = freqs_hz.iter().find(|&&f| !(f > 0.0 && f < nyq)) {
        return Err(invalid(format!("frequency {f} Hz outside (0, {nyq})")));
    }
    if cycles <= 0.0 {
        return Err(invalid("cycles must be positive"));
    }
    let (c, t) = (set.n_channels(), set.n_samples());
    let wavelets: Vec<_> = freqs_hz.iter().map(|&f| morlet_wavelet(f, set.fs(), cycles)).collect();
    let times_s: Vec<f64> = (0..t).map(|s| s as f64 / set.fs()).collect();
    (0..set.len())
        .into_par_iter()
        .map(|i| {
            let x = set.epoch(i);
            let mut values = Vec::with_capacity(c * freqs_hz.len() * t);
            for ch in 0..c {
                let row = &x[ch * t..(ch + 1) * t];
                for (re, im) in &wavelets {
                    values.extend(convolve_magnitude(row, re, im));
                }
            }
            Ok(TimeFreqMap {
                values: Tensor::new(vec![c, freqs_hz.len(), t], values)?,
                freqs_hz: freqs_hz.to_vec(),
                times_s: times_s.clone(),
            })
        })
        .collect()
}

fn convolve_magnitude(x: &[f32], re: &[f64], im: &[f64]) -> Vec<f64> {
    let t = x.len() as isize;
    let half = (re.len() / 2) as isize;
    (0..t)
        .map(|s| {
            let (mut a, mut b) = (0.0, 0.0);
            for (k, (wr, wi)) in re.iter().zip(im).enumerate() {
                // y[s] = sum_k w[k] x[s + half - k]
                let j = s + half - k as isize;
                if (0..t).contains(&j) {
                    let v = x[j as usize] as f64;
                    a += wr * v;
                    b += wi * v;
                }
            }
            (a * a + b * b).sqrt()
        })
        .collect()
}
