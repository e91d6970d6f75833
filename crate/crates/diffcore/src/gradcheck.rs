//! Central finite-difference verification of reverse-mode gradients.
//!
//! Works on `f64` graphs in eval mode so that every forward pass is a
//! deterministic function of the input and the parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{DiffError, Result};
use crate::graph::{Gradients, Graph, Mode};
use crate::loss::{cross_entropy, Reduction};
use crate::tensor::Tensor;

/// Scalar function of the graph output that is differentiated.
#[derive(Clone, Debug)]
pub enum Objective {
    /// Summed (unnormalized) weighted cross entropy.
    CrossEntropy {
        labels: Vec<usize>,
        class_weights: Option<Vec<f64>>,
    },
    /// `J = sum(r * output)` for a fixed tensor `r` shaped like the output.
    Projection(Tensor<f64>),
}

impl Objective {
    pub fn evaluate(&self, output: &Tensor<f64>) -> Result<(f64, Tensor<f64>)> {
        match self {
            Objective::CrossEntropy { labels, class_weights } => {
                cross_entropy(output, labels, class_weights.as_deref(), Reduction::Sum)
            }
            Objective::Projection(r) => {
                if r.shape() != output.shape() {
                    return Err(DiffError::Shape(format!(
                        "projection {:?} vs output {:?}",
                        r.shape(),
                        output.shape()
                    )));
                }
                let j = r.data().iter().zip(output.data()).map(|(a, b)| a * b).sum();
                Ok((j, r.clone()))
            }
        }
    }

    fn value(&self, graph: &Graph<f64>, batch: &Tensor<f64>) -> Result<f64> {
        let trace = graph.forward(batch)?;
        let out = trace.output().expect("forward records its output");
        Ok(self.evaluate(out)?.0)
    }
}

#[derive(Clone, Debug)]
pub struct CheckOptions {
    /// Central difference step `h`.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tolerance: f64,
    /// Fraction of parameter coordinates sampled (at least one per tensor).
    pub param_fraction: f64,
    /// Denominator floor as a fraction of the largest finite-difference
    /// magnitude, so coordinates with negligible gradient are judged on an
    /// absolute scale.
    pub floor_fraction: f64,
    pub seed: u64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tolerance: 1e-5,
            param_fraction: 0.05,
            floor_fraction: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinate {
    Input { index: usize },
    Param { layer: usize, tensor: usize, index: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub max_rel_err: f64,
    pub worst_coordinate: Option<Coordinate>,
    pub tolerance: f64,
    pub input_coords: usize,
    pub param_coords: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// `|a - n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Runs backward once and compares it against central differences.
pub fn finite_diff_check(
    graph: &Graph<f64>,
    batch: &Tensor<f64>,
    objective: &Objective,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    if batch.batch() == 0 {
        return Err(DiffError::EmptyBatch);
    }
    let trace = graph.forward(batch)?;
    let (_, grad_out) = objective.evaluate(trace.output().expect("forward records its output"))?;
    let analytic = graph.backward(&trace, &grad_out, true)?;
    compare_with_finite_differences(graph, batch, objective, &analytic, opts)
}

const TASK: usize = 32;

/// Checks externally supplied gradients; useful for validating the checker.
pub fn compare_with_finite_differences(
    graph: &Graph<f64>,
    batch: &Tensor<f64>,
    objective: &Objective,
    analytic: &Gradients<f64>,
    opts: &CheckOptions,
) -> Result<CheckReport> {
    if batch.batch() == 0 {
        return Err(DiffError::EmptyBatch);
    }
    if graph.mode() != Mode::Eval {
        return Err(DiffError::ModeMismatch { required: Mode::Eval, actual: graph.mode() });
    }
    let h = opts.step;
    let input_grad = analytic
        .input
        .as_ref()
        .ok_or_else(|| DiffError::Shape("analytic gradients lack an input gradient".into()))?;

    let input_coords: Vec<usize> = (0..batch.len()).collect();
    let input_numeric: Vec<f64> = input_coords
        .par_chunks(TASK)
        .map(|chunk| -> Result<Vec<f64>> {
            let mut x = batch.clone();
            chunk
                .iter()
                .map(|&k| {
                    let orig = x.data()[k];
                    x.data_mut()[k] = orig + h;
                    let jp = objective.value(graph, &x)?;
                    x.data_mut()[k] = orig - h;
                    let jm = objective.value(graph, &x)?;
                    x.data_mut()[k] = orig;
                    Ok((jp - jm) / (2.0 * h))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut param_coords = Vec::new();
    for (li, node) in graph.nodes().iter().enumerate() {
        for (ti, t) in node.params().iter().enumerate() {
            let take = ((t.len() as f64 * opts.param_fraction).ceil() as usize).clamp(1, t.len());
            let mut picked = rand::seq::index::sample(&mut rng, t.len(), take).into_vec();
            picked.sort_unstable();
            param_coords.extend(picked.into_iter().map(|i| (li, ti, i)));
        }
    }
    let param_numeric: Vec<f64> = param_coords
        .par_chunks(TASK)
        .map(|chunk| -> Result<Vec<f64>> {
            let mut g = graph.clone();
            chunk
                .iter()
                .map(|&(li, ti, i)| {
                    let orig = graph.nodes()[li].params()[ti].data()[i];
                    let set = |g: &mut Graph<f64>, v: f64| {
                        g.param_mut(li, ti).expect("sampled from this graph").data_mut()[i] = v;
                    };
                    set(&mut g, orig + h);
                    let jp = objective.value(&g, batch)?;
                    set(&mut g, orig - h);
                    let jm = objective.value(&g, batch)?;
                    set(&mut g, orig);
                    Ok((jp - jm) / (2.0 * h))
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let scale = input_numeric
        .iter()
        .chain(&param_numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (scale * opts.floor_fraction).max(f64::MIN_POSITIVE);

    let mut max_rel_err = 0.0;
    let mut worst = None;
    for (&k, &num) in input_coords.iter().zip(&input_numeric) {
        let e = relative_error(input_grad.data()[k], num, floor);
        if e > max_rel_err || worst.is_none() {
            max_rel_err = e;
            worst = Some(Coordinate::Input { index: k });
        }
    }
    for (&(li, ti, i), &num) in param_coords.iter().zip(&param_numeric) {
        let a = analytic
            .params
            .get(li)
            .and_then(|p| p.get(ti))
            .ok_or_else(|| DiffError::Shape(format!("missing analytic gradient for layer {li}")))?
            .data()[i];
        let e = relative_error(a, num, floor);
        if e > max_rel_err {
            max_rel_err = e;
            worst = Some(Coordinate::Param { layer: li, tensor: ti, index: i });
        }
    }
    Ok(CheckReport {
        max_rel_err,
        worst_coordinate: worst,
        tolerance: opts.tolerance,
        input_coords: input_coords.len(),
        param_coords: param_coords.len(),
    })
}
