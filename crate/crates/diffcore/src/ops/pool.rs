use crate::layer::{FeatureShape, PoolKind, PoolSpec};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    kind: PoolKind,
    c: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
}

impl PoolGeom {
    pub fn new(spec: &PoolSpec, input: FeatureShape, output: FeatureShape) -> Self {
        let FeatureShape::Map { c, h, w } = input else { unreachable!() };
        let FeatureShape::Map { h: oh, w: ow, .. } = output else { unreachable!() };
        Self {
            kind: spec.kind,
            c,
            h,
            w,
            ph: spec.window[0],
            pw: spec.window[1],
            sh: spec.stride[0],
            sw: spec.stride[1],
            oh,
            ow,
        }
    }

    /// Forward over `n` examples. For max pooling also returns the flat input
    /// index of each selected element (first maximum on ties).
    pub fn forward<F: Scalar>(&self, x: &[F], n: usize) -> (Vec<F>, Vec<u32>) {
        let planes = n * self.c;
        let mut y = Vec::with_capacity(planes * self.oh * self.ow);
        let mut arg = Vec::new();
        let inv = F::one() / F::of((self.ph * self.pw) as f64);
        for pl in 0..planes {
            let base = pl * self.h * self.w;
            for i in 0..self.oh {
                for j in 0..self.ow {
                    match self.kind {
                        PoolKind::Avg => {
                            let mut s = F::zero();
                            for a in 0..self.ph {
                                let row = base + (i * self.sh + a) * self.w + j * self.sw;
                                s += x[row..row + self.pw].iter().copied().sum::<F>();
                            }
                            y.push(s * inv);
                        }
                        PoolKind::Max => {
                            let mut best = F::neg_infinity();
                            let mut at = 0usize;
                            for a in 0..self.ph {
                                let row = base + (i * self.sh + a) * self.w + j * self.sw;
                                for b in 0..self.pw {
                                    if x[row + b] > best {
                                        best = x[row + b];
                                        at = row + b;
                                    }
                                }
                            }
                            y.push(best);
                            arg.push(at as u32);
                        }
                    }
                }
            }
        }
        (y, arg)
    }

    pub fn backward<F: Scalar>(&self, dy: &[F], n: usize, argmax: &[u32]) -> Vec<F> {
        let mut dx = vec![F::zero(); n * self.c * self.h * self.w];
        match self.kind {
            PoolKind::Max => {
                for (g, &at) in dy.iter().zip(argmax) {
                    dx[at as usize] += *g;
                }
            }
            PoolKind::Avg => {
                let inv = F::one() / F::of((self.ph * self.pw) as f64);
                let mut k = 0;
                for pl in 0..n * self.c {
                    let base = pl * self.h * self.w;
                    for i in 0..self.oh {
                        for j in 0..self.ow {
                            let g = dy[k] * inv;
                            k += 1;
                            for a in 0..self.ph {
                                let row = base + (i * self.sh + a) * self.w + j * self.sw;
                                dx[row..row + self.pw].iter_mut().for_each(|v| *v += g);
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}
