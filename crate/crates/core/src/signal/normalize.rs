//! Per-channel epoch normalization schemes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{invalid, Error, Result};

pub const P300_DIVISOR: f64 = 10.0;
pub const P300_CLIP: f64 = 5.0;
pub const EMA_GUARD: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Normalization {
    /// `(x - mean) / 10`, clipped to `[-5, 5]`.
    P300Scale,
    /// `(x - mean) / std` with the population std.
    ZScore,
    /// Causal exponential moving standardization.
    EmaStandardize { decay: f64 },
}

fn mean(row: &[f32]) -> f64 {
    row.iter().map(|&v| v as f64).sum::<f64>() / row.len() as f64
}

pub fn normalize(set: &EpochSet, scheme: Normalization) -> Result<EpochSet> {
    let t = set.n_samples();
    let c = set.n_channels();
    if set.is_empty() || t == 0 {
        return Err(invalid("cannot normalize an empty set"));
    }
    if let Normalization::EmaStandardize { decay } = scheme {
        if !(0.0..1.0).contains(&decay) {
            return Err(invalid(format!("decay {decay} must be in [0, 1)")));
        }
    }
    let mut data = set.data().clone();
    data.data_mut()
        .par_chunks_mut(t)
        .enumerate()
        .try_for_each(|(r, row)| -> Result<()> {
            match scheme {
                Normalization::P300Scale => {
                    let m = mean(row);
                    for v in row.iter_mut() {
                        *v = ((*v as f64 - m) / P300_DIVISOR).clamp(-P300_CLIP, P300_CLIP) as f32;
                    }
                }
                Normalization::ZScore => {
                    let m = mean(row);
                    let var = row.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / t as f64;
                    if var <= 0.0 {
                        return Err(Error::ZeroVariance {
                            epoch: r / c,
                            channel: set.channel_names()[r % c].clone(),
                        });
                    }
                    let sd = var.sqrt();
                    for v in row.iter_mut() {
                        *v = ((*v as f64 - m) / sd) as f32;
                    }
                }
                Normalization::EmaStandardize { decay } => {
                    let mut m = row[0] as f64;
                    let mut var = 1.0;
                    for (i, v) in row.iter_mut().enumerate() {
                        let x = *v as f64;
                        if i > 0 {
                            m = decay * m + (1.0 - decay) * x;
                            var = decay * var + (1.0 - decay) * (x - m).powi(2);
                        }
                        *v = ((x - m) / (var + EMA_GUARD).sqrt()) as f32;
                    }
                }
            }
            Ok(())
        })?;
    set.with_data(data)
}
