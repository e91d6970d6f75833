//! One-vs-rest common spatial patterns.

use advkit_diff::Tensor;
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Error, Result};

/// Ridge added to each covariance, as a fraction of its mean diagonal.
pub const RIDGE_FRACTION: f64 = 1e-6;

/// Eigenvalues closer than this (relative) are treated as tied.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CspProjection {
    /// `C_out x C_in`, row-major.
    pub weights: Vec<f64>,
    pub out_channels: usize,
    pub in_channels: usize,
    /// Class whose variance each filter maximizes.
    pub source_class: Vec<usize>,
    /// Generalized eigenvalue of each filter.
    pub eigenvalues: Vec<f64>,
    pub classes: usize,
    /// Ridge added per class: `[class covariance, rest covariance]`.
    pub ridge: Vec<[f64; 2]>,
}

impl CspProjection {
    pub fn identity(channels: usize) -> Self {
        Self {
            weights: (0..channels * channels)
                .map(|i| if i / channels == i % channels { 1.0 } else { 0.0 })
                .collect(),
            out_channels: channels,
            in_channels: channels,
            source_class: vec![0; channels],
            eigenvalues: vec![1.0; channels],
            classes: 0,
            ridge: vec![],
        }
    }

    pub fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_channels..(o + 1) * self.in_channels]
    }
}

/// Mean of per-epoch `X Xᵀ / (T - 1)` over centered epochs.
pub fn mean_covariance(set: &EpochSet, members: &[usize]) -> DMatrix<f64> {
    let (c, t) = (set.n_channels(), set.n_samples());
    let mut acc = DMatrix::<f64>::zeros(c, c);
    for &i in members {
        let x = DMatrix::from_row_iterator(c, t, set.epoch(i).iter().map(|&v| v as f64));
        let means = x.column_mean();
        let centered = DMatrix::from_fn(c, t, |r, s| x[(r, s)] - means[r]);
        acc += &centered * centered.transpose() / ((t.max(2) - 1) as f64);
    }
    acc / members.len() as f64
}

fn ridged(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let c = m.nrows();
    let r = RIDGE_FRACTION * m.trace() / c as f64;
    (m + DMatrix::<f64>::identity(c, c) * r, r)
}

fn dominant_index(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// Solves `A w = λ B w` for symmetric `A` and symmetric positive definite
/// `B`; returns pairs sorted by descending `λ`, ties broken by the index of
/// the dominant channel. Vectors satisfy `wᵀ B w = 1` and have a positive
/// largest-magnitude entry.
pub fn generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<Vec<(f64, Vec<f64>)>> {
    let chol = b.clone().cholesky()?;
    let l = chol.l();
    let l_inv = l.clone().try_inverse()?;
    let m = &l_inv * a * l_inv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let lt_inv = l_inv.transpose();
    let mut pairs: Vec<(f64, Vec<f64>)> = (0..a.nrows())
        .map(|k| {
            let w = &lt_inv * eig.eigenvectors.column(k);
            let mut w: Vec<f64> = w.iter().copied().collect();
            if w[dominant_index(&w)] < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            (eig.eigenvalues[k], w)
        })
        .collect();
    if pairs.iter().any(|(l, w)| !l.is_finite() || w.iter().any(|x| !x.is_finite())) {
        return None;
    }
    let scale = pairs.iter().fold(0.0f64, |s, p| s.max(p.0.abs())).max(f64::MIN_POSITIVE);
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0));
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[start].0 - pairs[end].0 <= TIE_TOLERANCE * scale {
            end += 1;
        }
        pairs[start..end].sort_by_key(|p| dominant_index(&p.1));
        start = end;
    }
    Some(pairs)
}

/// Fits `filters_per_class` one-vs-rest filters for every class.
pub fn csp_fit(set: &EpochSet, filters_per_class: usize) -> Result<CspProjection> {
    let k = set.n_classes();
    let c = set.n_channels();
    if k < 2 {
        return Err(invalid("CSP needs at least two classes"));
    }
    if filters_per_class == 0 || filters_per_class > c {
        return Err(invalid(format!("{filters_per_class} filters per class with {c} channels")));
    }
    let labels = set.targets()?;
    let mut members = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    for (class, m) in members.iter().enumerate() {
        if m.len() < 2 {
            return Err(invalid(format!("class {class} has {} epochs, CSP needs at least 2", m.len())));
        }
    }
    let mut proj = CspProjection {
        weights: Vec::with_capacity(k * filters_per_class * c),
        out_channels: k * filters_per_class,
        in_channels: c,
        source_class: Vec::new(),
        eigenvalues: Vec::new(),
        classes: k,
        ridge: Vec::new(),
    };
    for (class, own) in members.iter().enumerate() {
        let rest: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != class).collect();
        let (a, ra) = ridged(&mean_covariance(set, own));
        let (b, rb) = ridged(&mean_covariance(set, &rest));
        let pairs = generalized_eigen(&a, &b).ok_or(Error::SingularCovariance { class })?;
        for (lambda, w) in pairs.into_iter().take(filters_per_class) {
            proj.weights.extend(w);
            proj.source_class.push(class);
            proj.eigenvalues.push(lambda);
        }
        proj.ridge.push([ra, rb]);
    }
    Ok(proj)
}

/// `W · X` for every epoch.
pub fn csp_apply(proj: &CspProjection, set: &EpochSet) -> Result<EpochSet> {
    if proj.in_channels != set.n_channels() {
        return Err(Error::Shape(format!(
            "projection expects {} channels, set has {}",
            proj.in_channels,
            set.n_channels()
        )));
    }
    let (n, t) = (set.len(), set.n_samples());
    let (co, ci) = (proj.out_channels, proj.in_channels);
    let mut out = vec![0.0f32; n * co * t];
    for i in 0..n {
        let x = set.epoch(i);
        for o in 0..co {
            let w = proj.row(o);
            let dst = &mut out[(i * co + o) * t..(i * co + o + 1) * t];
            let mut acc = vec![0.0f64; t];
            for (j, &wj) in w.iter().enumerate().take(ci) {
                for (a, &v) in acc.iter_mut().zip(&x[j * t..(j + 1) * t]) {
                    *a += wj * v as f64;
                }
            }
            for (d, a) in dst.iter_mut().zip(acc) {
                *d = a as f32;
            }
        }
    }
    set.reshaped(
        Tensor::new(vec![n, co, t], out)?,
        set.fs(),
        (0..co).map(|o| format!("csp{o}")).collect(),
    )
}
