//! Labelled batches of fixed-length multichannel epochs.

use advkit_diff::Tensor;

use crate::error::{invalid, Error, Result};

/// Label of an epoch whose class is unknown.
pub const UNLABELED: i16 = -1;

/// `N x C x T` epochs with labels, subject ids and sampling metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochSet {
    data: Tensor<f32>,
    labels: Vec<i16>,
    subjects: Vec<u16>,
    fs: f64,
    class_names: Vec<String>,
    channel_names: Vec<String>,
}

impl EpochSet {
    pub fn new(
        data: Tensor<f32>,
        labels: Vec<i16>,
        subjects: Vec<u16>,
        fs: f64,
        class_names: Vec<String>,
        channel_names: Vec<String>,
    ) -> Result<Self> {
        if data.shape().len() != 3 {
            return Err(Error::Shape(format!("epochs must be N x C x T, got {:?}", data.shape())));
        }
        let (n, c) = (data.shape()[0], data.shape()[1]);
        if labels.len() != n || subjects.len() != n {
            return Err(Error::Shape(format!(
                "{n} epochs but {} labels and {} subject ids",
                labels.len(),
                subjects.len()
            )));
        }
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(invalid(format!("sampling rate {fs} must be positive")));
        }
        if channel_names.len() != c {
            return Err(Error::Shape(format!("{c} channels but {} channel names", channel_names.len())));
        }
        let k = class_names.len() as i16;
        if let Some(&bad) = labels.iter().find(|&&l| l != UNLABELED && !(0..k).contains(&l)) {
            return Err(invalid(format!("label {bad} outside [-1, {k})")));
        }
        Ok(Self { data, labels, subjects, fs, class_names, channel_names })
    }

    /// Generic channel and class names for quick construction.
    pub fn from_parts(data: Tensor<f32>, labels: Vec<i16>, subjects: Vec<u16>, fs: f64, classes: usize) -> Result<Self> {
        let c = data.shape().get(1).copied().unwrap_or(0);
        Self::new(
            data,
            labels,
            subjects,
            fs,
            (0..classes).map(|k| format!("class{k}")).collect(),
            (0..c).map(|i| format!("ch{i}")).collect(),
        )
    }

    pub fn data(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn labels(&self) -> &[i16] {
        &self.labels
    }

    pub fn subjects(&self) -> &[u16] {
        &self.subjects
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_samples(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Class indices; fails if any epoch is unlabeled.
    pub fn targets(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                if l < 0 {
                    Err(invalid(format!("epoch {i} is unlabeled")))
                } else {
                    Ok(l as usize)
                }
            })
            .collect()
    }

    /// Same metadata with new data of identical shape.
    pub fn with_data(&self, data: Tensor<f32>) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(Error::Shape(format!("{:?} vs {:?}", data.shape(), self.data.shape())));
        }
        Ok(Self { data, ..self.clone() })
    }

    /// Same epochs relabelled.
    pub fn with_labels(&self, labels: Vec<i16>) -> Result<Self> {
        Self::new(
            self.data.clone(),
            labels,
            self.subjects.clone(),
            self.fs,
            self.class_names.clone(),
            self.channel_names.clone(),
        )
    }

    /// Replaces data, possibly with a new channel count, length and rate.
    pub(crate) fn reshaped(&self, data: Tensor<f32>, fs: f64, channel_names: Vec<String>) -> Result<Self> {
        Self::new(data, self.labels.clone(), self.subjects.clone(), fs, self.class_names.clone(), channel_names)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            data: self.data.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i]).collect(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            data: Tensor::zeros(vec![0, self.n_channels(), self.n_samples()]),
            labels: vec![],
            subjects: vec![],
            fs: self.fs,
            class_names: self.class_names.clone(),
            channel_names: self.channel_names.clone(),
        }
    }

    /// Concatenates sets that share geometry and metadata.
    pub fn concat(parts: &[&EpochSet]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("nothing to concatenate"))?;
        for p in parts {
            if p.fs != first.fs || p.class_names != first.class_names || p.channel_names != first.channel_names {
                return Err(invalid("cannot concatenate sets with different metadata"));
            }
        }
        let tensors: Vec<&Tensor<f32>> = parts.iter().map(|p| &p.data).collect();
        Ok(Self {
            data: Tensor::concat(&tensors)?,
            labels: parts.iter().flat_map(|p| p.labels.iter().copied()).collect(),
            subjects: parts.iter().flat_map(|p| p.subjects.iter().copied()).collect(),
            ..first.clone_meta()
        })
    }

    /// Rows of epoch `i`, one per channel.
    pub fn epoch(&self, i: usize) -> &[f32] {
        self.data.item(i)
    }
}
