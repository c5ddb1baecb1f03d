use crate::error::{Error, Result};

/// Generalized advantage estimation over a `(steps x num_envs)` rollout
/// stored step-major (`index = t * num_envs + env`).
///
/// `dones[i]` marks that the transition at `i` ended its episode, so nothing
/// is bootstrapped across it. `next_values[env]` is the value of the
/// observation following the last stored step. Returns `(advantages, returns)`
/// with `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    next_values: &[f64],
    num_envs: usize,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if num_envs == 0 || next_values.len() != num_envs {
        return Err(Error::invalid(format!(
            "need one bootstrap value per env ({num_envs}), got {}",
            next_values.len()
        )));
    }
    if values.len() != n || dones.len() != n || n % num_envs != 0 {
        return Err(Error::invalid(format!(
            "inconsistent rollout shapes: rewards {n}, values {}, dones {}, envs {num_envs}",
            values.len(),
            dones.len()
        )));
    }
    if rewards
        .iter()
        .chain(values)
        .chain(next_values)
        .any(|x| !x.is_finite())
    {
        return Err(Error::poisoned("non-finite reward or value in rollout"));
    }
    let steps = n / num_envs;
    let mut adv = vec![0.0; n];
    for e in 0..num_envs {
        let mut next_adv = 0.0;
        let mut next_value = next_values[e];
        for t in (0..steps).rev() {
            let i = t * num_envs + e;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = values[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
