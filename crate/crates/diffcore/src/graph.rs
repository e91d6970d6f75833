//! Layer-chain graph with a recorded forward trace and reverse-mode backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DiffError, Result};
use crate::layer::{self, Activation, FeatureShape, LayerSpec};
use crate::ops::{self, conv::ConvGeom, norm::NormGeom, pool::PoolGeom, spectral::StftKernel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch statistics for BatchNorm, stochastic Dropout.
    Train,
    /// Running statistics, Dropout disabled.
    Eval,
}

#[derive(Clone, Debug)]
pub struct Node<F> {
    spec: LayerSpec,
    input: FeatureShape,
    output: FeatureShape,
    params: Vec<Tensor<F>>,
    /// Non-trainable state: BatchNorm running mean/variance, fixed mixing weights.
    buffers: Vec<Tensor<F>>,
    stft: Option<StftKernel<F>>,
}

impl<F: Scalar> Node<F> {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> FeatureShape {
        self.input
    }

    pub fn output_shape(&self) -> FeatureShape {
        self.output
    }

    pub fn params(&self) -> &[Tensor<F>] {
        &self.params
    }

    pub fn buffers(&self) -> &[Tensor<F>] {
        &self.buffers
    }
}

/// A chain of layers mapping `N x C x T` batches to `N x K` outputs.
///
/// In eval mode a graph is immutable: [`Graph::forward`] takes `&self` and
/// keeps all activations in the returned [`Trace`], so one frozen graph can
/// serve concurrent callers. Training goes through [`Graph::forward_train`].
#[derive(Clone, Debug)]
pub struct Graph<F> {
    channels: usize,
    samples: usize,
    nodes: Vec<Node<F>>,
    mode: Mode,
}

enum Cache<F> {
    None,
    Argmax(Vec<u32>),
    Norm { xhat: Vec<F>, inv_std: Vec<F>, batch_stats: bool },
    Mask(Vec<F>),
    Output(Vec<F>),
    Spectral(ops::spectral::StftOut<F>),
}

/// Activation workspace recorded by a forward pass.
pub struct Trace<F> {
    n: usize,
    inputs: Vec<Vec<F>>,
    caches: Vec<Cache<F>>,
    output: Option<Tensor<F>>,
}

impl<F: Scalar> Trace<F> {
    /// A trace with no recorded pass; backward on it fails.
    pub fn empty() -> Self {
        Self { n: 0, inputs: vec![], caches: vec![], output: None }
    }

    pub fn output(&self) -> Option<&Tensor<F>> {
        self.output.as_ref()
    }

    pub fn into_output(self) -> Option<Tensor<F>> {
        self.output
    }
}

/// Gradients for every parameter tensor plus the input batch.
#[derive(Clone, Debug)]
pub struct Gradients<F> {
    /// Indexed like the graph: `params[layer][tensor]`.
    pub params: Vec<Vec<Tensor<F>>>,
    /// Same shape as the forward batch; `None` when not requested.
    pub input: Option<Tensor<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn flat(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.params.iter().flatten()
    }

    pub fn scale(&mut self, a: F) {
        self.params.iter_mut().flatten().for_each(|t| t.scale(a));
        if let Some(x) = &mut self.input {
            x.scale(a);
        }
    }
}

fn uniform_fill<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor<F> {
    Tensor::from_fn(shape.to_vec(), |_| F::of(rng.random_range(-bound..=bound)))
}

impl<F: Scalar> Graph<F> {
    /// Validates the chain for `channels x samples` inputs and initializes
    /// weights uniformly in `±1/sqrt(fan_in)` from `seed`.
    pub fn build(channels: usize, samples: usize, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if channels == 0 || samples == 0 {
            return Err(DiffError::Shape(format!("input {channels}x{samples} is empty")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape = FeatureShape::Map { c: 1, h: channels, w: samples };
        let mut positive = false;
        let mut nodes = Vec::with_capacity(specs.len());
        for (index, spec) in specs.into_iter().enumerate() {
            let r = layer::resolve(index, &spec, shape, positive)?;
            let mut params = Vec::with_capacity(r.params.len());
            for (k, ps) in r.params.iter().enumerate() {
                let t = match &spec {
                    LayerSpec::BatchNorm { .. } => {
                        Tensor::filled(ps.clone(), if k == 0 { F::one() } else { F::zero() })
                    }
                    _ => {
                        let fan_in: usize = match &spec {
                            LayerSpec::Conv2d(c) => (r.params[0][1] * c.kernel[0] * c.kernel[1]).max(1),
                            _ => r.params[0][1].max(1),
                        };
                        uniform_fill(&mut rng, ps, 1.0 / (fan_in as f64).sqrt())
                    }
                };
                params.push(t);
            }
            let buffers = match &spec {
                LayerSpec::BatchNorm { .. } => vec![
                    Tensor::zeros(r.buffers[0].clone()),
                    Tensor::filled(r.buffers[1].clone(), F::one()),
                ],
                LayerSpec::ChannelMix { out_rows } => {
                    let rows = r.buffers[0][1];
                    vec![Tensor::from_fn(vec![*out_rows, rows], |i| {
                        if i / rows == i % rows { F::one() } else { F::zero() }
                    })]
                }
                _ => vec![],
            };
            let stft = match (&spec, shape) {
                (LayerSpec::Stft(s), FeatureShape::Map { h, w, .. }) => Some(StftKernel::new(s, h, w)),
                _ => None,
            };
            nodes.push(Node { spec, input: shape, output: r.out, params, buffers, stft });
            shape = r.out;
            positive = r.positive;
        }
        Ok(Self { channels, samples, nodes, mode: Mode::Eval })
    }

    pub fn input_dims(&self) -> (usize, usize) {
        (self.channels, self.samples)
    }

    pub fn output_shape(&self) -> FeatureShape {
        self.nodes
            .last()
            .map(|n| n.output)
            .unwrap_or(FeatureShape::Map { c: 1, h: self.channels, w: self.samples })
    }

    pub fn nodes(&self) -> &[Node<F>] {
        &self.nodes
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().flat_map(|n| &n.params).map(|t| t.len()).sum()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor<F>> {
        self.nodes.iter_mut().flat_map(|n| n.params.iter_mut())
    }

    pub fn param_mut(&mut self, layer: usize, index: usize) -> Option<&mut Tensor<F>> {
        self.nodes.get_mut(layer).and_then(|n| n.params.get_mut(index))
    }

    pub fn set_param(&mut self, layer: usize, index: usize, value: Tensor<F>) -> Result<()> {
        let slot = self
            .nodes
            .get_mut(layer)
            .and_then(|n| n.params.get_mut(index))
            .ok_or_else(|| DiffError::Shape(format!("no parameter {index} on layer {layer}")))?;
        if slot.shape() != value.shape() {
            return Err(DiffError::Shape(format!(
                "parameter shape {:?} vs {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub fn set_buffer(&mut self, layer: usize, index: usize, value: Tensor<F>) -> Result<()> {
        let slot = self
            .nodes
            .get_mut(layer)
            .and_then(|n| n.buffers.get_mut(index))
            .ok_or_else(|| DiffError::Shape(format!("no buffer {index} on layer {layer}")))?;
        if slot.shape() != value.shape() {
            return Err(DiffError::Shape(format!(
                "buffer shape {:?} vs {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Same graph at another precision.
    pub fn cast<G: Scalar>(&self) -> Graph<G> {
        Graph {
            channels: self.channels,
            samples: self.samples,
            mode: self.mode,
            nodes: self
                .nodes
                .iter()
                .map(|n| Node {
                    spec: n.spec.clone(),
                    input: n.input,
                    output: n.output,
                    params: n.params.iter().map(Tensor::cast).collect(),
                    buffers: n.buffers.iter().map(Tensor::cast).collect(),
                    stft: match (&n.spec, n.input) {
                        (LayerSpec::Stft(s), FeatureShape::Map { h, w, .. }) => Some(StftKernel::new(s, h, w)),
                        _ => None,
                    },
                })
                .collect(),
        }
    }

    fn check_batch(&self, x: &Tensor<F>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.channels || s[2] != self.samples {
            return Err(DiffError::Shape(format!(
                "batch shape {s:?} does not match input N x {} x {}",
                self.channels, self.samples
            )));
        }
        if s[0] == 0 {
            return Err(DiffError::EmptyBatch);
        }
        Ok(s[0])
    }

    /// Inference pass. Requires eval mode.
    pub fn forward(&self, x: &Tensor<F>) -> Result<Trace<F>> {
        if self.mode != Mode::Eval {
            return Err(DiffError::ModeMismatch { required: Mode::Eval, actual: self.mode });
        }
        let (trace, _) = self.run(x, None)?;
        Ok(trace)
    }

    /// Training pass: BatchNorm uses batch statistics and updates its running
    /// estimates; Dropout draws masks from `rng`. Requires train mode.
    pub fn forward_train<R: Rng>(&mut self, x: &Tensor<F>, rng: &mut R) -> Result<Trace<F>> {
        if self.mode != Mode::Train {
            return Err(DiffError::ModeMismatch { required: Mode::Train, actual: self.mode });
        }
        let (trace, stats) = self.run(x, Some(rng as &mut dyn rand::RngCore))?;
        for (node, st) in self.nodes.iter_mut().zip(stats) {
            let (Some((mean, var)), LayerSpec::BatchNorm { momentum, .. }) = (st, &node.spec) else {
                continue;
            };
            let m = F::of(*momentum);
            let one_m = F::one() - m;
            for (r, b) in node.buffers[0].data_mut().iter_mut().zip(&mean) {
                *r = m * *r + one_m * *b;
            }
            for (r, b) in node.buffers[1].data_mut().iter_mut().zip(&var) {
                *r = m * *r + one_m * *b;
            }
        }
        Ok(trace)
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        x: &Tensor<F>,
        mut rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<(Trace<F>, Vec<Option<(Vec<F>, Vec<F>)>>)> {
        let n = self.check_batch(x)?;
        let train = rng.is_some();
        let mut cur: Vec<F> = x.data().to_vec();
        let mut inputs = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        let mut stats = Vec::with_capacity(self.nodes.len());
        for (li, node) in self.nodes.iter().enumerate() {
            let mut stat = None;
            let (out, cache) = match &node.spec {
                LayerSpec::Conv2d(c) => {
                    let g = ConvGeom::new(c, node.input, node.output);
                    let y = g.forward(&cur, n, node.params[0].data(), node.params.get(1).map(|b| b.data()));
                    (y, Cache::None)
                }
                LayerSpec::Dense { .. } => {
                    let fin = node.input.len();
                    let y = ops::dense_forward(&cur, n, fin, node.params[0].data(), node.params.get(1).map(|b| b.data()));
                    (y, Cache::None)
                }
                LayerSpec::Activation { function } => {
                    let y = ops::activation_forward(*function, &cur, node.input.len());
                    let cache = match function {
                        Activation::Elu | Activation::Softmax => Cache::Output(y.clone()),
                        _ => Cache::None,
                    };
                    (y, cache)
                }
                LayerSpec::Pool(p) => {
                    let g = PoolGeom::new(p, node.input, node.output);
                    let (y, arg) = g.forward(&cur, n);
                    (y, Cache::Argmax(arg))
                }
                LayerSpec::BatchNorm { epsilon, .. } => {
                    let g = NormGeom::new(node.input);
                    let running = (!train).then(|| (node.buffers[0].data(), node.buffers[1].data()));
                    let o = g.forward(&cur, n, node.params[0].data(), node.params[1].data(), running, F::of(*epsilon));
                    stat = o.batch_stats;
                    (o.y, Cache::Norm { xhat: o.xhat, inv_std: o.inv_std, batch_stats: train })
                }
                LayerSpec::Dropout { rate } => match rng.as_deref_mut() {
                    Some(r) if *rate > 0.0 => {
                        let keep = 1.0 - rate;
                        let scale = F::of(1.0 / keep);
                        let mask: Vec<F> = (0..cur.len())
                            .map(|_| if r.random::<f64>() < keep { scale } else { F::zero() })
                            .collect();
                        let y = cur.iter().zip(&mask).map(|(a, m)| *a * *m).collect();
                        (y, Cache::Mask(mask))
                    }
                    _ => (cur.clone(), Cache::None),
                },
                LayerSpec::Flatten => (cur.clone(), Cache::None),
                LayerSpec::ChannelMix { .. } => {
                    let FeatureShape::Map { c, h, w } = node.input else { unreachable!() };
                    (ops::mix_forward(&cur, n * c, h, w, node.buffers[0].data()), Cache::None)
                }
                LayerSpec::Stft(_) => {
                    let kernel = node.stft.as_ref().expect("stft kernel built with the graph");
                    let o = kernel.forward(&cur, n);
                    (o.magnitude.clone(), Cache::Spectral(o))
                }
            };
            if out.iter().any(|v| !v.is_finite()) {
                return Err(DiffError::NonFinite { stage: "forward", layer: li });
            }
            inputs.push(std::mem::replace(&mut cur, out));
            caches.push(cache);
            stats.push(stat);
        }
        let output = Tensor::new(self.output_shape().batched(n), cur)?;
        Ok((Trace { n, inputs, caches, output: Some(output) }, stats))
    }

    /// Propagates `grad_output` (same shape as the traced output) back through
    /// the chain. The input gradient is computed only when `need_input` is set.
    pub fn backward(&self, trace: &Trace<F>, grad_output: &Tensor<F>, need_input: bool) -> Result<Gradients<F>> {
        let Some(out) = &trace.output else {
            return Err(DiffError::BackwardBeforeForward);
        };
        if trace.inputs.len() != self.nodes.len() {
            return Err(DiffError::Shape("trace was recorded on a different graph".into()));
        }
        if grad_output.shape() != out.shape() {
            return Err(DiffError::Shape(format!(
                "output gradient {:?} vs output {:?}",
                grad_output.shape(),
                out.shape()
            )));
        }
        let n = trace.n;
        let mut params: Vec<Vec<Tensor<F>>> = vec![Vec::new(); self.nodes.len()];
        let mut g: Vec<F> = grad_output.data().to_vec();
        for li in (0..self.nodes.len()).rev() {
            let node = &self.nodes[li];
            let x = &trace.inputs[li];
            let need_dx = li > 0 || need_input;
            let dx = match (&node.spec, &trace.caches[li]) {
                (LayerSpec::Conv2d(c), _) => {
                    let geom = ConvGeom::new(c, node.input, node.output);
                    let (dx, dw, db) = geom.backward(x, n, node.params[0].data(), &g, c.bias, need_dx);
                    params[li].push(Tensor::new(node.params[0].shape().to_vec(), dw)?);
                    if c.bias {
                        params[li].push(Tensor::new(node.params[1].shape().to_vec(), db)?);
                    }
                    dx
                }
                (LayerSpec::Dense { bias, .. }, _) => {
                    let fin = node.input.len();
                    let (dx, dw, db) = ops::dense_backward(x, n, fin, node.params[0].data(), &g, *bias, need_dx);
                    params[li].push(Tensor::new(node.params[0].shape().to_vec(), dw)?);
                    if *bias {
                        params[li].push(Tensor::new(node.params[1].shape().to_vec(), db)?);
                    }
                    dx
                }
                (LayerSpec::Activation { function }, cache) => {
                    let y: &[F] = match cache {
                        Cache::Output(y) => y,
                        _ => &[],
                    };
                    ops::activation_backward(*function, x, y, &g, node.input.len())
                }
                (LayerSpec::Pool(p), Cache::Argmax(arg)) => {
                    PoolGeom::new(p, node.input, node.output).backward(&g, n, arg)
                }
                (LayerSpec::BatchNorm { .. }, Cache::Norm { xhat, inv_std, batch_stats }) => {
                    let geom = NormGeom::new(node.input);
                    let (dx, dgamma, dbeta) =
                        geom.backward(&g, n, xhat, inv_std, node.params[0].data(), *batch_stats);
                    params[li].push(Tensor::new(node.params[0].shape().to_vec(), dgamma)?);
                    params[li].push(Tensor::new(node.params[1].shape().to_vec(), dbeta)?);
                    dx
                }
                (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => {
                    g.iter().zip(mask).map(|(a, m)| *a * *m).collect()
                }
                (LayerSpec::Dropout { .. } | LayerSpec::Flatten, _) => g,
                (LayerSpec::ChannelMix { .. }, _) => {
                    let FeatureShape::Map { c, h, w } = node.input else { unreachable!() };
                    ops::mix_backward(&g, n * c, h, w, node.buffers[0].data())
                }
                (LayerSpec::Stft(_), Cache::Spectral(o)) => {
                    node.stft.as_ref().expect("stft kernel built with the graph").backward(&g, n, o)
                }
                _ => return Err(DiffError::Shape(format!("trace cache mismatch at layer {li}"))),
            };
            if params[li].iter().any(|t| !t.is_finite()) || dx.iter().any(|v| !v.is_finite()) {
                return Err(DiffError::NonFinite { stage: "backward", layer: li });
            }
            g = dx;
        }
        let input = if need_input {
            Some(Tensor::new(vec![n, self.channels, self.samples], g)?)
        } else {
            None
        };
        Ok(Gradients { params, input })
    }
}
