//! Synthetic epochs: class templates buried in 1/f noise.

use std::f64::consts::PI;

use advkit_diff::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub classes: usize,
    pub epochs: usize,
    pub channels: usize,
    pub samples: usize,
    pub fs: f64,
    /// Template power over noise power, averaged over the epoch, in dB.
    pub template_snr_db: f64,
    pub subjects: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            epochs: 2000,
            channels: 8,
            samples: 128,
            fs: 128.0,
            template_snr_db: -18.0,
            subjects: 8,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(invalid(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.classes > i16::MAX as usize {
            return Err(invalid(format!("{} classes exceed the label range", self.classes)));
        }
        if self.epochs < self.classes {
            return Err(invalid(format!("{} epochs cannot cover {} classes", self.epochs, self.classes)));
        }
        if self.channels == 0 || self.samples < 8 {
            return Err(invalid(format!("need channels >= 1 and samples >= 8, got {} x {}", self.channels, self.samples)));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) || !self.template_snr_db.is_finite() {
            return Err(invalid(format!("invalid fs {} or SNR {}", self.fs, self.template_snr_db)));
        }
        if self.subjects == 0 || self.subjects > u16::MAX as usize {
            return Err(invalid(format!("subject count {} outside [1, 65535]", self.subjects)));
        }
        Ok(())
    }
}

/// Unit-power template of every class, `C x T` row-major.
fn templates(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let (k, c, t) = (spec.classes, spec.channels, spec.samples);
    let nyquist = spec.fs / 2.0;
    let active = c.div_ceil(2);
    (0..k)
        .map(|class| {
            let freq = nyquist * (0.08 + 0.5 * class as f64 / k as f64);
            let centre = t as f64 * (0.3 + 0.4 * class as f64 / (k - 1) as f64);
            let width = t as f64 / 6.0;
            let mut chans: Vec<usize> = (0..c).collect();
            chans.shuffle(rng);
            let mut tpl = vec![0.0; c * t];
            for &ch in &chans[..active] {
                let gain: f64 = rng.random_range(0.5..1.0);
                let phase: f64 = rng.random_range(0.0..2.0 * PI);
                for i in 0..t {
                    let env = (-0.5 * ((i as f64 - centre) / width).powi(2)).exp();
                    tpl[ch * t + i] = gain * env * (2.0 * PI * freq * i as f64 / spec.fs + phase).sin();
                }
            }
            let power = tpl.iter().map(|v| v * v).sum::<f64>() / tpl.len() as f64;
            tpl.iter_mut().for_each(|v| *v /= power.sqrt());
            tpl
        })
        .collect()
}

/// Unit-RMS noise with a `1/f` power spectrum.
fn pink_noise(t: usize, fft: &dyn rustfft::Fft<f64>, ifft: &dyn rustfft::Fft<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..t).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    fft.process(&mut buf);
    for (j, z) in buf.iter_mut().enumerate() {
        let bin = j.min(t - j).max(1) as f64;
        *z /= bin.sqrt();
    }
    ifft.process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|z| z.re).collect();
    let mean = out.iter().sum::<f64>() / t as f64;
    let rms = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t as f64).sqrt().max(f64::MIN_POSITIVE);
    out.iter_mut().for_each(|v| *v = (*v - mean) / rms);
    out
}

fn zscore(row: &mut [f64]) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 0.0 { sd } else { 1.0 };
    row.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// Balanced synthetic epochs; the same spec always gives the same set.
pub fn synth_dataset(spec: &SynthSpec) -> Result<EpochSet> {
    spec.validate()?;
    let (k, n, c, t) = (spec.classes, spec.epochs, spec.channels, spec.samples);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tpl = templates(spec, &mut rng);
    let amp = 10f64.powf(spec.template_snr_db / 20.0);
    let subject_gain: Vec<f64> = (0..spec.subjects).map(|_| rng.random_range(0.8..1.2)).collect();
    let subject_shift: Vec<i64> = (0..spec.subjects).map(|_| rng.random_range(-2..=2)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut planner = FftPlanner::new();
    let (fft, ifft) = (planner.plan_fft_forward(t), planner.plan_fft_inverse(t));

    let mut data = vec![0f32; n * c * t];
    let mut labels = vec![0i16; n];
    let mut subjects = vec![0u16; n];
    let mut row = vec![0f64; t];
    for (i, &slot) in order.iter().enumerate() {
        let class = i % k;
        let subject = (i / k) % spec.subjects;
        labels[slot] = class as i16;
        subjects[slot] = subject as u16;
        let scale = amp * subject_gain[subject] * rng.random_range(0.9..1.1);
        for ch in 0..c {
            let noise = pink_noise(t, fft.as_ref(), ifft.as_ref(), &mut rng);
            for (s, r) in row.iter_mut().enumerate() {
                let src = s as i64 - subject_shift[subject];
                let signal = if (0..t as i64).contains(&src) { tpl[class][ch * t + src as usize] } else { 0.0 };
                *r = noise[s] + scale * signal;
            }
            zscore(&mut row);
            let dst = &mut data[(slot * c + ch) * t..(slot * c + ch + 1) * t];
            dst.iter_mut().zip(&row).for_each(|(d, &v)| *d = v as f32);
        }
    }
    let class_names = (0..k).map(|i| format!("class{i}")).collect();
    let channel_names = (0..c).map(|i| format!("ch{i}")).collect();
    EpochSet::new(Tensor::new(vec![n, c, t], data)?, labels, subjects, spec.fs, class_names, channel_names)
}
