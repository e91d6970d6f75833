//! Classifier architectures built on the layer-chain engine.

use std::fs;
use std::path::{Path, PathBuf};

use advkit_diff::loss::{cross_entropy, softmax, Reduction};
use advkit_diff::gradcheck::{finite_diff_check, CheckOptions, CheckReport, Objective};
use advkit_diff::store::{read_graph, write_graph};
use advkit_diff::{Activation, FeatureShape, Graph, LayerSpec, PoolKind, StftSpec, Tensor, WindowKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Error, Result};
use crate::signal::csp::{csp_fit, CspProjection};

/// Epochs per forward/backward call; bounds activation memory.
pub const BATCH_CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(rename = "eegnet")]
    EegNet,
    #[serde(rename = "deepcnn")]
    DeepCnn,
    #[serde(rename = "shallowcnn")]
    ShallowCnn,
    #[serde(rename = "spectrocnn")]
    SpectroCnn,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::EegNet, Family::DeepCnn, Family::ShallowCnn, Family::SpectroCnn];

    pub fn name(self) -> &'static str {
        match self {
            Family::EegNet => "eegnet",
            Family::DeepCnn => "deepcnn",
            Family::ShallowCnn => "shallowcnn",
            Family::SpectroCnn => "spectrocnn",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown architecture {s:?} (eegnet, deepcnn, shallowcnn, spectrocnn)")))
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub family: Family,
    pub channels: usize,
    pub samples: usize,
    pub classes: usize,
    /// Sampling rate; sets the EEGNet temporal kernel to half a second.
    pub fs: f64,
}

impl ArchSpec {
    pub fn new(family: Family, channels: usize, samples: usize, classes: usize, fs: f64) -> Self {
        Self { family, channels, samples, classes, fs }
    }

    /// Geometry of `set` with another family.
    pub fn for_set(family: Family, set: &EpochSet) -> Self {
        Self::new(family, set.n_channels(), set.n_samples(), set.n_classes(), set.fs())
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.samples == 0 || self.classes == 0 {
            return Err(invalid(format!(
                "channels {}, samples {} and classes {} must all be at least 1",
                self.channels, self.samples, self.classes
            )));
        }
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(invalid(format!("sampling rate {} must be positive", self.fs)));
        }
        Ok(())
    }
}

/// Halves `size` until it is at most `limit` (never below 1).
pub fn shrink(mut size: usize, limit: usize) -> usize {
    while size > limit.max(1) {
        size /= 2;
    }
    size.max(1)
}

/// Fixed CSP + STFT stage of the spectrogram pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontEnd {
    pub csp: CspProjection,
    pub stft: StftSpec,
    pub filters_per_class: usize,
    pub fitted: bool,
}

impl FrontEnd {
    fn for_arch(arch: &ArchSpec) -> Self {
        let filters_per_class = (arch.channels.min(8) / arch.classes).max(1);
        let rows = filters_per_class * arch.classes;
        let window_len = shrink(64, arch.samples / 2);
        let mut csp = CspProjection::identity(arch.channels);
        // Until fitted, pass the leading channels through (wrapping if short).
        csp.weights = (0..rows * arch.channels)
            .map(|i| if i / arch.channels % arch.channels == i % arch.channels { 1.0 } else { 0.0 })
            .collect();
        csp.out_channels = rows;
        csp.source_class = vec![0; rows];
        csp.eigenvalues = vec![1.0; rows];
        Self {
            csp,
            stft: StftSpec { window_len, hop: (window_len / 4).max(1), window: WindowKind::Hann },
            filters_per_class,
            fitted: false,
        }
    }
}

fn pool_or_skip(kind: PoolKind, window: usize, stride: usize, len: usize) -> Option<(LayerSpec, usize)> {
    (len >= window).then(|| (LayerSpec::pool(kind, [1, window], [1, stride]), (len - window) / stride + 1))
}

/// Layer chain of a family for the given geometry.
pub fn layers(arch: &ArchSpec) -> Result<Vec<LayerSpec>> {
    arch.validate()?;
    let (c, t, k) = (arch.channels, arch.samples, arch.classes);
    let mut specs = Vec::new();
    match arch.family {
        Family::EegNet => {
            let kt = shrink((arch.fs / 2.0).round().max(1.0) as usize, t / 2);
            specs.push(LayerSpec::conv_same(8, [1, kt]).without_bias());
            specs.push(LayerSpec::batch_norm());
            specs.push(LayerSpec::conv(16, [c, 1]).grouped(8).without_bias());
            specs.push(LayerSpec::batch_norm());
            specs.push(LayerSpec::act(Activation::Elu));
            let p1 = shrink(4, t);
            specs.push(LayerSpec::pool(PoolKind::Avg, [1, p1], [1, p1]));
            specs.push(LayerSpec::dropout(0.25));
            let len = t / p1;
            specs.push(LayerSpec::conv_same(16, [1, shrink(16, len)]).grouped(16).without_bias());
            specs.push(LayerSpec::conv(16, [1, 1]).without_bias());
            specs.push(LayerSpec::batch_norm());
            specs.push(LayerSpec::act(Activation::Elu));
            let p2 = shrink(8, len);
            specs.push(LayerSpec::pool(PoolKind::Avg, [1, p2], [1, p2]));
            specs.push(LayerSpec::dropout(0.25));
        }
        Family::DeepCnn => {
            let k1 = shrink(10, t);
            specs.push(LayerSpec::conv(25, [1, k1]));
            specs.push(LayerSpec::conv(25, [c, 1]).without_bias());
            let mut len = t - k1 + 1;
            let block_tail = |specs: &mut Vec<LayerSpec>, len: &mut usize| {
                specs.push(LayerSpec::batch_norm());
                specs.push(LayerSpec::act(Activation::Elu));
                if let Some((p, l)) = pool_or_skip(PoolKind::Max, 3, 3, *len) {
                    specs.push(p);
                    *len = l;
                }
            };
            block_tail(&mut specs, &mut len);
            for filters in [50, 100, 200] {
                let kk = shrink(10, len);
                specs.push(LayerSpec::conv(filters, [1, kk]).without_bias());
                len = len - kk + 1;
                block_tail(&mut specs, &mut len);
            }
        }
        Family::ShallowCnn => {
            let k1 = shrink(25, t);
            specs.push(LayerSpec::conv(40, [1, k1]));
            specs.push(LayerSpec::conv(40, [c, 1]).without_bias());
            specs.push(LayerSpec::act(Activation::Square));
            let len = t - k1 + 1;
            let w = shrink(75, len);
            specs.push(LayerSpec::pool(PoolKind::Avg, [1, w], [1, w.min(15)]));
            specs.push(LayerSpec::act(Activation::Log));
            specs.push(LayerSpec::dropout(0.5));
        }
        Family::SpectroCnn => {
            let fe = FrontEnd::for_arch(arch);
            specs.push(LayerSpec::ChannelMix { out_rows: fe.csp.out_channels });
            specs.push(LayerSpec::Stft(fe.stft.clone()));
            let (mut h, mut w) = (fe.stft.bins(), fe.stft.frames(t));
            for filters in [16, 32] {
                specs.push(LayerSpec::conv_same(filters, [3, 3]));
                specs.push(LayerSpec::batch_norm());
                specs.push(LayerSpec::act(Activation::Elu));
                let (ph, pw) = (h.min(2), w.min(2));
                specs.push(LayerSpec::pool(PoolKind::Max, [ph, pw], [ph, pw]));
                h /= ph;
                w /= pw;
            }
        }
    }
    specs.push(LayerSpec::Flatten);
    specs.push(LayerSpec::dense(k));
    Ok(specs)
}

/// Class prediction with the probabilities it was taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// `N x K`
    pub probs: Tensor<f32>,
}

/// Index of the largest entry, smallest index on ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct Model {
    arch: ArchSpec,
    graph: Graph<f32>,
    front_end: Option<FrontEnd>,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    arch: ArchSpec,
    front_end: Option<FrontEnd>,
}

pub fn build_model(arch: &ArchSpec, seed: u64) -> Result<Model> {
    let specs = layers(arch)?;
    let mut graph = Graph::build(arch.channels, arch.samples, specs, seed)?;
    let front_end = (arch.family == Family::SpectroCnn).then(|| FrontEnd::for_arch(arch));
    if let Some(fe) = &front_end {
        install_csp(&mut graph, &fe.csp)?;
    }
    Ok(Model { arch: arch.clone(), graph, front_end })
}

fn install_csp(graph: &mut Graph<f32>, csp: &CspProjection) -> Result<()> {
    let w = Tensor::new(
        vec![csp.out_channels, csp.in_channels],
        csp.weights.iter().map(|&v| v as f32).collect(),
    )?;
    graph.set_buffer(0, 0, w)?;
    Ok(())
}

impl Model {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn graph(&self) -> &Graph<f32> {
        &self.graph
    }

    pub fn graph_mut(&mut self) -> &mut Graph<f32> {
        &mut self.graph
    }

    pub fn front_end(&self) -> Option<&FrontEnd> {
        self.front_end.as_ref()
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    pub fn classes(&self) -> usize {
        self.arch.classes
    }

    /// Fits and freezes the CSP stage on training data; no-op for raw-input
    /// families.
    pub fn fit_front_end(&mut self, train: &EpochSet) -> Result<()> {
        let Some(fe) = &mut self.front_end else { return Ok(()) };
        let csp = csp_fit(train, fe.filters_per_class)?;
        install_csp(&mut self.graph, &csp)?;
        fe.csp = csp;
        fe.fitted = true;
        Ok(())
    }

    fn check_input(&self, x: &Tensor<f32>) -> Result<()> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.arch.channels || s[2] != self.arch.samples {
            return Err(Error::Shape(format!(
                "model expects N x {} x {}, got {:?}",
                self.arch.channels, self.arch.samples, s
            )));
        }
        Ok(())
    }

    /// Eval-mode logits, computed in chunks.
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_input(x)?;
        let n = x.batch();
        let mut parts = Vec::new();
        for start in (0..n).step_by(BATCH_CHUNK) {
            let idx: Vec<usize> = (start..(start + BATCH_CHUNK).min(n)).collect();
            let out = self.graph.forward(&x.select(&idx))?.into_output().expect("forward records output");
            parts.push(out);
        }
        if parts.is_empty() {
            return Ok(Tensor::zeros(vec![0, self.arch.classes]));
        }
        let refs: Vec<&Tensor<f32>> = parts.iter().collect();
        Ok(Tensor::concat(&refs)?)
    }

    pub fn predict_tensor(&self, x: &Tensor<f32>) -> Result<Prediction> {
        let probs = softmax(&self.logits(x)?);
        let labels = (0..probs.batch()).map(|i| argmax(probs.item(i))).collect();
        Ok(Prediction { labels, probs })
    }

    pub fn predict(&self, set: &EpochSet) -> Result<Prediction> {
        self.predict_tensor(set.data())
    }

    /// Summed (per-epoch independent) weighted cross entropy and its
    /// gradient with respect to the raw input.
    pub fn loss_and_input_gradient(
        &self,
        x: &Tensor<f32>,
        y: &[usize],
        class_weights: Option<&[f32]>,
    ) -> Result<(f32, Tensor<f32>)> {
        self.check_input(x)?;
        let n = x.batch();
        if y.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} epochs", y.len())));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= self.arch.classes) {
            return Err(invalid(format!("label {bad} outside [0, {})", self.arch.classes)));
        }
        let mut total = 0.0f32;
        let mut grad = Vec::with_capacity(x.len());
        for start in (0..n).step_by(BATCH_CHUNK) {
            let end = (start + BATCH_CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let trace = self.graph.forward(&x.select(&idx))?;
            let logits = trace.output().expect("forward records output");
            let (j, d) = cross_entropy(logits, &y[start..end], class_weights, Reduction::Sum)?;
            total += j;
            let g = self.graph.backward(&trace, &d, true)?;
            grad.extend(g.input.expect("input gradient requested").into_data());
        }
        Ok((total, Tensor::new(x.shape().to_vec(), grad)?))
    }

    /// Writes `path` (ADWT parameters) and `path.json` (architecture sidecar).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_graph(&self.graph, path)?;
        let sidecar = Sidecar { arch: self.arch.clone(), front_end: self.front_end.clone() };
        fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
        let graph: Graph<f32> = read_graph(path)?;
        let expected = layers(&sidecar.arch)?;
        let stored: Vec<LayerSpec> = graph.nodes().iter().map(|n| n.spec().clone()).collect();
        if stored != expected || graph.input_dims() != (sidecar.arch.channels, sidecar.arch.samples) {
            return Err(invalid("stored layers do not match the architecture sidecar"));
        }
        if (sidecar.arch.family == Family::SpectroCnn) != sidecar.front_end.is_some() {
            return Err(invalid("front end present iff the family is spectrocnn"));
        }
        match graph.output_shape() {
            FeatureShape::Flat(k) if k == sidecar.arch.classes => {}
            other => return Err(invalid(format!("output {other:?} does not match classes"))),
        }
        Ok(Self { arch: sidecar.arch, graph, front_end: sidecar.front_end })
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Relative error accepted by [`check_gradients`]: tighter for raw-input
/// families than through the CSP and STFT front end.
pub fn gradient_tolerance(family: Family) -> f64 {
    match family {
        Family::SpectroCnn => 1e-4,
        _ => 1e-5,
    }
}

/// Finite-difference check of a freshly initialized model in `f64` on a
/// random batch of `batch` epochs with cross-entropy loss.
pub fn check_gradients(arch: &ArchSpec, seed: u64, batch: usize) -> Result<CheckReport> {
    let model = build_model(arch, seed)?;
    let graph: Graph<f64> = model.graph.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = batch * arch.channels * arch.samples;
    let x = Tensor::new(vec![batch, arch.channels, arch.samples], (0..n).map(|_| rng.sample(StandardNormal)).collect())?;
    let labels = (0..batch).map(|_| rng.random_range(0..arch.classes)).collect();
    let opts = CheckOptions { tolerance: gradient_tolerance(arch.family), seed, ..CheckOptions::default() };
    Ok(finite_diff_check(&graph, &x, &Objective::CrossEntropy { labels, class_weights: None }, &opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shrink_halves_until_fit() {
        assert_eq!(shrink(64, 32), 32);
        assert_eq!(shrink(10, 7), 5);
        assert_eq!(shrink(10, 1), 1);
        assert_eq!(shrink(3, 0), 1);
        assert_eq!(shrink(16, 16), 16);
    }

    #[test]
    fn argmax_prefers_smallest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert!("lstm".parse::<Family>().is_err());
    }
}
