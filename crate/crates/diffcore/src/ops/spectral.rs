//! Short-time Fourier magnitude as a fixed linear map plus a smooth modulus.

use std::f64::consts::PI;

use crate::layer::{StftSpec, WindowKind};
use crate::scalar::Scalar;

/// Added under the square root so the modulus is differentiable at zero.
pub const MAGNITUDE_FLOOR: f64 = 1e-12;

pub fn window_values(kind: WindowKind, len: usize) -> Vec<f64> {
    match kind {
        WindowKind::Rectangular => vec![1.0; len],
        WindowKind::Hann => (0..len)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
            .collect(),
    }
}

/// Windowed DFT basis for a fixed input geometry.
#[derive(Clone, Debug)]
pub struct StftKernel<F> {
    len: usize,
    hop: usize,
    rows: usize,
    samples: usize,
    bins: usize,
    frames: usize,
    /// `bins x len`, real part.
    cos: Vec<F>,
    /// `bins x len`, imaginary part (`-w[n] sin`).
    sin: Vec<F>,
}

pub struct StftOut<F> {
    pub magnitude: Vec<F>,
    pub re: Vec<F>,
    pub im: Vec<F>,
}

impl<F: Scalar> StftKernel<F> {
    pub fn new(spec: &StftSpec, rows: usize, samples: usize) -> Self {
        let len = spec.window_len;
        let bins = spec.bins();
        let win = window_values(spec.window, len);
        let mut cos = Vec::with_capacity(bins * len);
        let mut sin = Vec::with_capacity(bins * len);
        for k in 0..bins {
            for (n, w) in win.iter().enumerate() {
                // reduce the phase index first to keep the angle small
                let phase = 2.0 * PI * ((k * n) % len) as f64 / len as f64;
                cos.push(F::of(w * phase.cos()));
                sin.push(F::of(-w * phase.sin()));
            }
        }
        Self {
            len,
            hop: spec.hop,
            rows,
            samples,
            bins,
            frames: spec.frames(samples),
            cos,
            sin,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// `x` holds `n` examples of `rows x samples`; outputs are `n x rows x bins x frames`.
    pub fn forward(&self, x: &[F], n: usize) -> StftOut<F> {
        let plane = self.bins * self.frames;
        let total = n * self.rows * plane;
        let mut re = vec![F::zero(); total];
        let mut im = vec![F::zero(); total];
        for r in 0..n * self.rows {
            let src = &x[r * self.samples..(r + 1) * self.samples];
            let (b, m, l) = (self.bins, self.frames, self.len);
            F::gemm(b, l, m, F::one(), &self.cos, (l, 1), src, (1, self.hop), F::zero(), &mut re[r * plane..(r + 1) * plane], (m, 1));
            F::gemm(b, l, m, F::one(), &self.sin, (l, 1), src, (1, self.hop), F::zero(), &mut im[r * plane..(r + 1) * plane], (m, 1));
        }
        let floor = F::of(MAGNITUDE_FLOOR);
        let magnitude = re
            .iter()
            .zip(&im)
            .map(|(a, b)| (*a * *a + *b * *b + floor).sqrt())
            .collect();
        StftOut { magnitude, re, im }
    }

    pub fn backward(&self, dy: &[F], n: usize, out: &StftOut<F>) -> Vec<F> {
        let plane = self.bins * self.frames;
        let (b, m, l) = (self.bins, self.frames, self.len);
        let mut dx = vec![F::zero(); n * self.rows * self.samples];
        let mut dre = vec![F::zero(); plane];
        let mut dim = vec![F::zero(); plane];
        let mut dframes = vec![F::zero(); l * m];
        for r in 0..n * self.rows {
            let off = r * plane;
            for k in 0..plane {
                let g = dy[off + k] / out.magnitude[off + k];
                dre[k] = g * out.re[off + k];
                dim[k] = g * out.im[off + k];
            }
            F::gemm(l, b, m, F::one(), &self.cos, (1, l), &dre, (m, 1), F::zero(), &mut dframes, (m, 1));
            F::gemm(l, b, m, F::one(), &self.sin, (1, l), &dim, (m, 1), F::one(), &mut dframes, (m, 1));
            let dst = &mut dx[r * self.samples..(r + 1) * self.samples];
            for t in 0..l {
                for f in 0..m {
                    dst[f * self.hop + t] += dframes[t * m + f];
                }
            }
        }
        dx
    }
}
