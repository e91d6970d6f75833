use crate::layer::FeatureShape;
use crate::scalar::Scalar;

/// Batch normalization over the channel axis of maps or the feature axis of
/// flat inputs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct NormGeom {
    ch: usize,
    inner: usize,
}

pub(crate) struct NormOut<F> {
    pub y: Vec<F>,
    pub xhat: Vec<F>,
    pub inv_std: Vec<F>,
    /// Batch mean and biased variance (train mode only).
    pub batch_stats: Option<(Vec<F>, Vec<F>)>,
}

impl NormGeom {
    pub fn new(input: FeatureShape) -> Self {
        match input {
            FeatureShape::Map { c, h, w } => Self { ch: c, inner: h * w },
            FeatureShape::Flat(f) => Self { ch: f, inner: 1 },
        }
    }

    fn for_each_channel<F: Scalar>(&self, x: &[F], n: usize, c: usize, mut f: impl FnMut(usize, F)) {
        for s in 0..n {
            let base = (s * self.ch + c) * self.inner;
            for (k, &v) in x.iter().enumerate().skip(base).take(self.inner) {
                f(k, v);
            }
        }
    }

    pub fn forward<F: Scalar>(
        &self,
        x: &[F],
        n: usize,
        gamma: &[F],
        beta: &[F],
        running: Option<(&[F], &[F])>,
        eps: F,
    ) -> NormOut<F> {
        let mut y = vec![F::zero(); x.len()];
        let mut xhat = vec![F::zero(); x.len()];
        let mut inv_std = vec![F::zero(); self.ch];
        let count = F::of((n * self.inner) as f64);
        let mut means = vec![F::zero(); self.ch];
        let mut vars = vec![F::zero(); self.ch];
        for c in 0..self.ch {
            let (mean, var) = match running {
                Some((rm, rv)) => (rm[c], rv[c]),
                None => {
                    let mut s = F::zero();
                    self.for_each_channel(x, n, c, |_, v| s += v);
                    let mean = s / count;
                    let mut q = F::zero();
                    self.for_each_channel(x, n, c, |_, v| q += (v - mean) * (v - mean));
                    (mean, q / count)
                }
            };
            means[c] = mean;
            vars[c] = var;
            let is = F::one() / (var + eps).sqrt();
            inv_std[c] = is;
            self.for_each_channel(x, n, c, |k, v| {
                let h = (v - mean) * is;
                xhat[k] = h;
                y[k] = gamma[c] * h + beta[c];
            });
        }
        NormOut {
            y,
            xhat,
            inv_std,
            batch_stats: running.is_none().then_some((means, vars)),
        }
    }

    /// Returns `(dx, dgamma, dbeta)`. With `batch_stats` the statistics are
    /// treated as functions of the batch.
    pub fn backward<F: Scalar>(
        &self,
        dy: &[F],
        n: usize,
        xhat: &[F],
        inv_std: &[F],
        gamma: &[F],
        batch_stats: bool,
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        let mut dx = vec![F::zero(); dy.len()];
        let mut dgamma = vec![F::zero(); self.ch];
        let mut dbeta = vec![F::zero(); self.ch];
        let m = F::of((n * self.inner) as f64);
        for c in 0..self.ch {
            let (mut sg, mut sb) = (F::zero(), F::zero());
            self.for_each_channel(dy, n, c, |k, g| {
                sg += g * xhat[k];
                sb += g;
            });
            dgamma[c] = sg;
            dbeta[c] = sb;
            let scale = gamma[c] * inv_std[c];
            if batch_stats {
                // dx = g*is/m * (m*dy - sum(dy) - xhat*sum(dy*xhat))
                self.for_each_channel(dy, n, c, |k, g| {
                    dx[k] = scale / m * (m * g - sb - xhat[k] * sg);
                });
            } else {
                self.for_each_channel(dy, n, c, |k, g| dx[k] = scale * g);
            }
        }
        (dx, dgamma, dbeta)
    }
}
