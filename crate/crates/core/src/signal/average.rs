//! Synchronized averaging of epochs.

use advkit_diff::Tensor;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Error, Result};

/// How epochs are assigned to averaging groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingKey {
    /// Runs of `group_size` consecutive epochs.
    Consecutive,
    /// One key per epoch (e.g. stimulus id); epochs sharing a key are taken
    /// in order and cut into runs of `group_size`.
    Ids(Vec<u32>),
}

/// Member indices of every averaging group, in output order.
pub fn group_indices(set: &EpochSet, group_size: usize, key: &GroupingKey) -> Result<Vec<Vec<usize>>> {
    if group_size == 0 {
        return Err(invalid("group size must be at least 1"));
    }
    let n = set.len();
    let runs: Vec<Vec<usize>> = match key {
        GroupingKey::Consecutive => (0..n).collect::<Vec<_>>().chunks(group_size).map(|c| c.to_vec()).collect(),
        GroupingKey::Ids(ids) => {
            if ids.len() != n {
                return Err(Error::Shape(format!("{} grouping ids for {n} epochs", ids.len())));
            }
            let mut order: Vec<u32> = Vec::new();
            let mut members: Vec<Vec<usize>> = Vec::new();
            for (i, id) in ids.iter().enumerate() {
                match order.iter().position(|o| o == id) {
                    Some(p) => members[p].push(i),
                    None => {
                        order.push(*id);
                        members.push(vec![i]);
                    }
                }
            }
            members.iter().flat_map(|m| m.chunks(group_size).map(|c| c.to_vec())).collect()
        }
    };
    for (g, run) in runs.iter().enumerate() {
        if run.len() != group_size {
            return Err(Error::IncompleteGroup { group: g, size: run.len(), expected: group_size });
        }
        let first = set.labels()[run[0]];
        if let Some(&other) = run.iter().map(|&i| &set.labels()[i]).find(|&&l| l != first) {
            return Err(Error::MixedLabels { group: g, first, other });
        }
    }
    Ok(runs)
}

/// Elementwise mean of `parts`, summed in order in `f64`.
pub(crate) fn mean_of(rows: &[&[f32]]) -> Vec<f32> {
    let len = rows[0].len();
    let mut acc = vec![0.0f64; len];
    for r in rows {
        for (a, &v) in acc.iter_mut().zip(*r) {
            *a += v as f64;
        }
    }
    acc.into_iter().map(|a| (a / rows.len() as f64) as f32).collect()
}

/// One averaged epoch per group; label and subject come from the first member.
pub fn average_epochs(set: &EpochSet, group_size: usize, key: &GroupingKey) -> Result<EpochSet> {
    let groups = group_indices(set, group_size, key)?;
    average_groups(set, &groups)
}

pub(crate) fn average_groups(set: &EpochSet, groups: &[Vec<usize>]) -> Result<EpochSet> {
    let (c, t) = (set.n_channels(), set.n_samples());
    let mut data = Vec::with_capacity(groups.len() * c * t);
    for g in groups {
        let rows: Vec<&[f32]> = g.iter().map(|&i| set.epoch(i)).collect();
        data.extend(mean_of(&rows));
    }
    EpochSet::new(
        Tensor::new(vec![groups.len(), c, t], data)?,
        groups.iter().map(|g| set.labels()[g[0]]).collect(),
        groups.iter().map(|g| set.subjects()[g[0]]).collect(),
        set.fs(),
        set.class_names().to_vec(),
        set.channel_names().to_vec(),
    )
}
