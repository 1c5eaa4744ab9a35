use crate::error::{KirasError, Result};

/// Generalized advantage estimation over one environment stream.
///
/// `dones[t]` marks that the episode ended after step `t`, so the value of
/// the following state is not bootstrapped. `last_value` is the critic's
/// value of the state after the final step. Returns `(advantages, returns)`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(KirasError::InvalidArgument(format!(
            "GAE lengths differ: rewards {n}, values {}, dones {}",
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let alive = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * alive - values[t];
        running = delta + gamma * lambda * alive * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
