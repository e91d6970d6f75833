pub(crate) mod conv;
pub(crate) mod norm;
pub(crate) mod pool;
pub mod spectral;

use crate::layer::Activation;
use crate::scalar::Scalar;

pub(crate) const LOG_GUARD: f64 = 1e-7;

/// `Y[n x out] = X[n x in] * W^T + b`
pub(crate) fn dense_forward<F: Scalar>(x: &[F], n: usize, fin: usize, w: &[F], b: Option<&[F]>) -> Vec<F> {
    let fout = w.len() / fin;
    let mut y = vec![F::zero(); n * fout];
    F::gemm(n, fin, fout, F::one(), x, (fin, 1), w, (1, fin), F::zero(), &mut y, (fout, 1));
    if let Some(b) = b {
        for row in y.chunks_mut(fout) {
            row.iter_mut().zip(b).for_each(|(v, bb)| *v += *bb);
        }
    }
    y
}

/// Returns `(dx, dw, db)`.
pub(crate) fn dense_backward<F: Scalar>(
    x: &[F],
    n: usize,
    fin: usize,
    w: &[F],
    dy: &[F],
    has_bias: bool,
    need_dx: bool,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let fout = w.len() / fin;
    let mut dw = vec![F::zero(); w.len()];
    F::gemm(fout, n, fin, F::one(), dy, (1, fout), x, (fin, 1), F::zero(), &mut dw, (fin, 1));
    let mut db = Vec::new();
    if has_bias {
        db = vec![F::zero(); fout];
        for row in dy.chunks(fout) {
            db.iter_mut().zip(row).for_each(|(a, g)| *a += *g);
        }
    }
    let mut dx = Vec::new();
    if need_dx {
        dx = vec![F::zero(); n * fin];
        F::gemm(n, fout, fin, F::one(), dy, (fout, 1), w, (fin, 1), F::zero(), &mut dx, (fin, 1));
    }
    (dx, dw, db)
}

/// Elementwise activations; softmax normalizes rows of length `row`.
pub(crate) fn activation_forward<F: Scalar>(f: Activation, x: &[F], row: usize) -> Vec<F> {
    match f {
        Activation::Elu => x.iter().map(|&v| if v > F::zero() { v } else { v.exp() - F::one() }).collect(),
        Activation::Relu => x.iter().map(|&v| v.max(F::zero())).collect(),
        Activation::Square => x.iter().map(|&v| v * v).collect(),
        Activation::Log => {
            let guard = F::of(LOG_GUARD);
            x.iter().map(|&v| v.max(guard).ln()).collect()
        }
        Activation::Softmax => {
            let mut y = x.to_vec();
            for r in y.chunks_mut(row) {
                softmax_in_place(r);
            }
            y
        }
    }
}

pub(crate) fn softmax_in_place<F: Scalar>(r: &mut [F]) {
    let m = r.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let mut s = F::zero();
    for v in r.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    r.iter_mut().for_each(|v| *v /= s);
}

pub(crate) fn activation_backward<F: Scalar>(f: Activation, x: &[F], y: &[F], dy: &[F], row: usize) -> Vec<F> {
    match f {
        Activation::Elu => x
            .iter()
            .zip(y)
            .zip(dy)
            .map(|((&v, &o), &g)| if v > F::zero() { g } else { g * (o + F::one()) })
            .collect(),
        Activation::Relu => x
            .iter()
            .zip(dy)
            .map(|(&v, &g)| if v > F::zero() { g } else { F::zero() })
            .collect(),
        Activation::Square => x.iter().zip(dy).map(|(&v, &g)| F::of(2.0) * v * g).collect(),
        Activation::Log => {
            let guard = F::of(LOG_GUARD);
            x.iter()
                .zip(dy)
                .map(|(&v, &g)| if v > guard { g / v } else { F::zero() })
                .collect()
        }
        Activation::Softmax => {
            let mut dx = vec![F::zero(); dy.len()];
            for ((yr, gr), dr) in y.chunks(row).zip(dy.chunks(row)).zip(dx.chunks_mut(row)) {
                let dot: F = yr.iter().zip(gr).map(|(a, b)| *a * *b).sum();
                for ((d, &p), &g) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = p * (g - dot);
                }
            }
            dx
        }
    }
}

/// `y[c, o, t] = sum_i W[o, i] x[c, i, t]` for each of `planes = n*c` maps.
pub(crate) fn mix_forward<F: Scalar>(x: &[F], planes: usize, rows: usize, cols: usize, w: &[F]) -> Vec<F> {
    let out_rows = w.len() / rows;
    let mut y = vec![F::zero(); planes * out_rows * cols];
    for p in 0..planes {
        F::gemm(
            out_rows,
            rows,
            cols,
            F::one(),
            w,
            (rows, 1),
            &x[p * rows * cols..(p + 1) * rows * cols],
            (cols, 1),
            F::zero(),
            &mut y[p * out_rows * cols..(p + 1) * out_rows * cols],
            (cols, 1),
        );
    }
    y
}

pub(crate) fn mix_backward<F: Scalar>(dy: &[F], planes: usize, rows: usize, cols: usize, w: &[F]) -> Vec<F> {
    let out_rows = w.len() / rows;
    let mut dx = vec![F::zero(); planes * rows * cols];
    for p in 0..planes {
        F::gemm(
            rows,
            out_rows,
            cols,
            F::one(),
            w,
            (1, rows),
            &dy[p * out_rows * cols..(p + 1) * out_rows * cols],
            (cols, 1),
            F::zero(),
            &mut dx[p * rows * cols..(p + 1) * rows * cols],
            (cols, 1),
        );
    }
    dx
}
