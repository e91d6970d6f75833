//! Zero-phase Butterworth filtering and decimation.

use std::f64::consts::PI;

use advkit_diff::Tensor;
use rayon::prelude::*;

use crate::epochs::EpochSet;
use crate::error::{invalid, Result};

/// Butterworth order used for every filter section pair.
pub const ORDER: usize = 4;

/// Quality factors of the two biquads of a 4th-order Butterworth.
const BUTTERWORTH_Q: [f64; 2] = [0.541_196_100_146_197, 1.306_562_964_876_376_5];

/// Normalized second-order section (`a0 = 1`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Response {
    Lowpass,
    Highpass,
}

impl Biquad {
    /// Bilinear-transform section with prewarped cutoff.
    pub fn design(response: Response, cutoff_hz: f64, fs: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / fs;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        let a0 = 1.0 + alpha;
        let b = match response {
            Response::Lowpass => [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0],
            Response::Highpass => [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0],
        };
        Self {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    /// Steady-state gain for a constant input.
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II, starting from the steady state of a
    /// constant input equal to `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&x0) = x.first() else { return };
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        let y0 = self.dc_gain() * x0;
        let mut z2 = b2 * x0 - a2 * y0;
        let mut z1 = b1 * x0 - a1 * y0 + z2;
        for v in x.iter_mut() {
            let xi = *v;
            let y = b0 * xi + z1;
            z1 = b1 * xi - a1 * y + z2;
            z2 = b2 * xi - a2 * y;
            *v = y;
        }
    }
}

/// Cascade of second-order sections.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    pub fn butterworth(response: Response, cutoff_hz: f64, fs: f64) -> Self {
        Self {
            sections: BUTTERWORTH_Q.iter().map(|&q| Biquad::design(response, cutoff_hz, fs, q)).collect(),
        }
    }

    /// Highpass at `lo` followed by lowpass at `hi`.
    pub fn bandpass(lo_hz: f64, hi_hz: f64, fs: f64) -> Self {
        let mut s = Self::butterworth(Response::Highpass, lo_hz, fs);
        s.sections.extend(Self::butterworth(Response::Lowpass, hi_hz, fs).sections);
        s
    }

    /// `H(e^{jω})` magnitude of one pass at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / fs;
        self.sections
            .iter()
            .map(|s| {
                let z1 = (w.cos(), -w.sin());
                let z2 = ((2.0 * w).cos(), -(2.0 * w).sin());
                let num = (s.b[0] + s.b[1] * z1.0 + s.b[2] * z2.0, s.b[1] * z1.1 + s.b[2] * z2.1);
                let den = (1.0 + s.a[0] * z1.0 + s.a[1] * z2.0, s.a[0] * z1.1 + s.a[1] * z2.1);
                (num.0.hypot(num.1)) / (den.0.hypot(den.1))
            })
            .product()
    }

    /// Total filter order.
    pub fn order(&self) -> usize {
        2 * self.sections.len()
    }

    fn pass(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.run(x);
        }
    }

    /// Forward-backward filtering with odd reflection of `3 x order`
    /// samples at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * self.order()).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
        self.pass(&mut ext);
        ext.reverse();
        self.pass(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

fn map_rows(set: &EpochSet, out_len: usize, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Tensor<f32> {
    let (n, c, t) = (set.len(), set.n_channels(), set.n_samples());
    let mut out = vec![0.0f32; n * c * out_len];
    out.par_chunks_mut(out_len.max(1))
        .zip(set.data().data().par_chunks(t.max(1)))
        .for_each(|(dst, src)| {
            let row: Vec<f64> = src.iter().map(|&v| v as f64).collect();
            for (d, v) in dst.iter_mut().zip(f(&row)) {
                *d = v as f32;
            }
        });
    Tensor::new(vec![n, c, out_len], out).expect("row mapping preserves counts")
}

/// Zero-phase 4th-order Butterworth bandpass per channel per epoch.
pub fn bandpass(set: &EpochSet, lo_hz: f64, hi_hz: f64) -> Result<EpochSet> {
    let nyq = set.fs() / 2.0;
    if !(lo_hz > 0.0 && lo_hz < hi_hz && hi_hz < nyq) {
        return Err(invalid(format!("band {lo_hz}-{hi_hz} Hz must satisfy 0 < lo < hi < {nyq}")));
    }
    let sos = Sos::bandpass(lo_hz, hi_hz, set.fs());
    set.with_data(map_rows(set, set.n_samples(), |r| sos.filtfilt(r)))
}

/// Cutoff of the anti-alias lowpass as a fraction of the new Nyquist rate.
pub const ANTI_ALIAS_FRACTION: f64 = 0.8;

/// Anti-alias lowpass then keep every `factor`-th sample.
pub fn downsample(set: &EpochSet, factor: usize) -> Result<EpochSet> {
    if factor < 1 {
        return Err(invalid("downsampling factor must be at least 1"));
    }
    if factor == 1 {
        return Ok(set.clone());
    }
    let t_out = set.n_samples() / factor;
    if t_out == 0 {
        return Err(invalid(format!("factor {factor} leaves no samples of {}", set.n_samples())));
    }
    let fs_out = set.fs() / factor as f64;
    let sos = Sos::butterworth(Response::Lowpass, ANTI_ALIAS_FRACTION * fs_out / 2.0, set.fs());
    let data = map_rows(set, t_out, |r| {
        let y = sos.filtfilt(r);
        (0..t_out).map(|i| y[i * factor]).collect()
    });
    set.reshaped(data, fs_out, set.channel_names().to_vec())
}
