use advkit_diff::{sign, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{check_epsilon, AttackKind, AttackResult};
use crate::epochs::EpochSet;
use crate::error::Result;

/// Adds `±ε` per coordinate with signs of i.i.d. standard normal draws.
pub fn random_noise(x: &EpochSet, eps: f64, seed: u64) -> Result<AttackResult> {
    check_epsilon(eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = eps as f32;
    let data = x
        .data()
        .data()
        .iter()
        .map(|&v| {
            let z: f32 = rng.sample(StandardNormal);
            v + e * sign(z)
        })
        .collect();
    let adv = x.with_data(Tensor::new(x.data().shape().to_vec(), data)?)?;
    AttackResult::new(AttackKind::RandomNoise, eps, x, adv, vec![])
}
