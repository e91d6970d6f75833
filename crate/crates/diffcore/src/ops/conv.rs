//! Grouped 2-D convolution via im2col + GEMM.

use rayon::prelude::*;

use crate::layer::{Conv2dSpec, FeatureShape};
use crate::scalar::Scalar;

/// Samples handled per worker task; fixed so reductions do not depend on
/// the thread count.
const CHUNK: usize = 4;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    pl: usize,
    oh: usize,
    ow: usize,
    groups: usize,
}

impl ConvGeom {
    pub fn new(spec: &Conv2dSpec, input: FeatureShape, output: FeatureShape) -> Self {
        let FeatureShape::Map { c: cin, h, w } = input else {
            unreachable!("conv input validated at build time")
        };
        let FeatureShape::Map { h: oh, w: ow, .. } = output else {
            unreachable!("conv output validated at build time")
        };
        Self {
            cin,
            h,
            w,
            cout: spec.out_channels,
            kh: spec.kernel[0],
            kw: spec.kernel[1],
            sh: spec.stride[0],
            sw: spec.stride[1],
            pt: spec.padding[0],
            pl: spec.padding[2],
            oh,
            ow,
            groups: spec.groups,
        }
    }

    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    /// Rows of the column matrix (per group).
    fn k(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    fn in_len(&self) -> usize {
        self.cin * self.h * self.w
    }

    fn out_len(&self) -> usize {
        self.cout * self.p()
    }

    /// True when the column matrix is a plain view of the input.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.pt == 0 && self.pl == 0
    }

    /// Range of output columns `j` whose source column `j*sw + b - pl` is inside the input.
    fn valid_cols(&self, b: usize) -> (usize, usize) {
        let lo = if self.pl > b { (self.pl - b).div_ceil(self.sw) } else { 0 };
        let hi = if self.w + self.pl > b {
            ((self.w + self.pl - b - 1) / self.sw + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn im2col<F: Scalar>(&self, x: &[F], group: usize, cols: &mut [F]) {
        let p = self.p();
        let c0 = group * self.cin_g();
        for ci in 0..self.cin_g() {
            let plane = &x[(c0 + ci) * self.h * self.w..(c0 + ci + 1) * self.h * self.w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let row = (ci * self.kh + a) * self.kw + b;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let (jlo, jhi) = self.valid_cols(b);
                    for i in 0..self.oh {
                        let out = &mut dst[i * self.ow..(i + 1) * self.ow];
                        let src_r = (i * self.sh + a) as isize - self.pt as isize;
                        if src_r < 0 || src_r as usize >= self.h || jlo >= jhi {
                            out.iter_mut().for_each(|v| *v = F::zero());
                            continue;
                        }
                        let src = &plane[src_r as usize * self.w..(src_r as usize + 1) * self.w];
                        out[..jlo].iter_mut().for_each(|v| *v = F::zero());
                        out[jhi..].iter_mut().for_each(|v| *v = F::zero());
                        let base = jlo * self.sw + b - self.pl;
                        if self.sw == 1 {
                            out[jlo..jhi].copy_from_slice(&src[base..base + (jhi - jlo)]);
                        } else {
                            for (k, j) in (jlo..jhi).enumerate() {
                                out[j] = src[base + k * self.sw];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im<F: Scalar>(&self, cols: &[F], group: usize, dx: &mut [F]) {
        let p = self.p();
        let c0 = group * self.cin_g();
        for ci in 0..self.cin_g() {
            let plane = &mut dx[(c0 + ci) * self.h * self.w..(c0 + ci + 1) * self.h * self.w];
            for a in 0..self.kh {
                for b in 0..self.kw {
                    let row = (ci * self.kh + a) * self.kw + b;
                    let src = &cols[row * p..(row + 1) * p];
                    let (jlo, jhi) = self.valid_cols(b);
                    if jlo >= jhi {
                        continue;
                    }
                    for i in 0..self.oh {
                        let src_r = (i * self.sh + a) as isize - self.pt as isize;
                        if src_r < 0 || src_r as usize >= self.h {
                            continue;
                        }
                        let dst = &mut plane[src_r as usize * self.w..(src_r as usize + 1) * self.w];
                        let row_src = &src[i * self.ow..(i + 1) * self.ow];
                        let base = jlo * self.sw + b - self.pl;
                        for (k, j) in (jlo..jhi).enumerate() {
                            dst[base + k * self.sw] += row_src[j];
                        }
                    }
                }
            }
        }
    }

    fn forward_one<F: Scalar>(&self, x: &[F], weight: &[F], bias: Option<&[F]>, y: &mut [F], cols: &mut Vec<F>) {
        let (k, p, cout_g) = (self.k(), self.p(), self.cout_g());
        for g in 0..self.groups {
            let cols_ref: &[F] = if self.is_pointwise() {
                &x[g * k * p..(g + 1) * k * p]
            } else {
                cols.resize(k * p, F::zero());
                self.im2col(x, g, cols);
                cols
            };
            let wg = &weight[g * cout_g * k..(g + 1) * cout_g * k];
            let yg = &mut y[g * cout_g * p..(g + 1) * cout_g * p];
            F::gemm(cout_g, k, p, F::one(), wg, (k, 1), cols_ref, (p, 1), F::zero(), yg, (p, 1));
        }
        if let Some(bias) = bias {
            for (o, row) in y.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v += bias[o]);
            }
        }
    }

    pub fn forward<F: Scalar>(&self, x: &[F], n: usize, weight: &[F], bias: Option<&[F]>) -> Vec<F> {
        let (il, ol) = (self.in_len(), self.out_len());
        let mut y = vec![F::zero(); n * ol];
        y.par_chunks_mut(ol * CHUNK)
            .zip(x.par_chunks(il * CHUNK))
            .for_each(|(ys, xs)| {
                let mut cols = Vec::new();
                for (yi, xi) in ys.chunks_mut(ol).zip(xs.chunks(il)) {
                    self.forward_one(xi, weight, bias, yi, &mut cols);
                }
            });
        y
    }

    /// Returns `(dx, dweight, dbias)`; `dx` is empty when not requested.
    pub fn backward<F: Scalar>(
        &self,
        x: &[F],
        n: usize,
        weight: &[F],
        dy: &[F],
        has_bias: bool,
        need_dx: bool,
    ) -> (Vec<F>, Vec<F>, Vec<F>) {
        let (il, ol) = (self.in_len(), self.out_len());
        let (k, p, cout_g) = (self.k(), self.p(), self.cout_g());
        let wlen = weight.len();
        let mut dx = if need_dx { vec![F::zero(); n * il] } else { Vec::new() };

        let work = |xs: &[F], dys: &[F], mut dxs: Option<&mut [F]>| {
            let mut dw = vec![F::zero(); wlen];
            let mut db = vec![F::zero(); if has_bias { self.cout } else { 0 }];
            let mut cols = vec![F::zero(); k * p];
            let mut dcols = vec![F::zero(); k * p];
            for (s, (xi, dyi)) in xs.chunks(il).zip(dys.chunks(ol)).enumerate() {
                for g in 0..self.groups {
                    let dyg = &dyi[g * cout_g * p..(g + 1) * cout_g * p];
                    let cols_ref: &[F] = if self.is_pointwise() {
                        &xi[g * k * p..(g + 1) * k * p]
                    } else {
                        self.im2col(xi, g, &mut cols);
                        &cols
                    };
                    let dwg = &mut dw[g * cout_g * k..(g + 1) * cout_g * k];
                    // dW_g += dY_g * cols^T
                    F::gemm(cout_g, p, k, F::one(), dyg, (p, 1), cols_ref, (1, p), F::one(), dwg, (k, 1));
                    if let Some(dxs) = dxs.as_deref_mut() {
                        let wg = &weight[g * cout_g * k..(g + 1) * cout_g * k];
                        let dxi = &mut dxs[s * il..(s + 1) * il];
                        if self.is_pointwise() {
                            let dst = &mut dxi[g * k * p..(g + 1) * k * p];
                            F::gemm(k, cout_g, p, F::one(), wg, (1, k), dyg, (p, 1), F::one(), dst, (p, 1));
                        } else {
                            F::gemm(k, cout_g, p, F::one(), wg, (1, k), dyg, (p, 1), F::zero(), &mut dcols, (p, 1));
                            self.col2im(&dcols, g, dxi);
                        }
                    }
                }
                if has_bias {
                    for (o, row) in dyi.chunks(p).enumerate() {
                        db[o] += row.iter().copied().sum::<F>();
                    }
                }
            }
            (dw, db)
        };

        let partials: Vec<(Vec<F>, Vec<F>)> = if need_dx {
            dx.par_chunks_mut(il * CHUNK)
                .zip(x.par_chunks(il * CHUNK).zip(dy.par_chunks(ol * CHUNK)))
                .map(|(dxs, (xs, dys))| work(xs, dys, Some(dxs)))
                .collect()
        } else {
            x.par_chunks(il * CHUNK)
                .zip(dy.par_chunks(ol * CHUNK))
                .map(|(xs, dys)| work(xs, dys, None))
                .collect()
        };

        let mut dw = vec![F::zero(); wlen];
        let mut db = vec![F::zero(); if has_bias { self.cout } else { 0 }];
        for (pw, pb) in partials {
            dw.iter_mut().zip(&pw).for_each(|(a, b)| *a += *b);
            db.iter_mut().zip(&pb).for_each(|(a, b)| *a += *b);
        }
        (dx, dw, db)
    }
}
