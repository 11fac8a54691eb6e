//! Generalized advantage estimation.
//!
//! Each sample carries the value of its successor state (`next_value`, zero
//! after a terminal transition, the bootstrap estimate after a timeout) and a
//! continuation flag that is false wherever the episode ends. The recursion
//!
//! ```text
//! delta_t = r_t + gamma * next_value_t - V(s_t)
//! A_t     = delta_t + gamma * lambda * cont_t * A_{t+1}
//! ```
//!
//! runs backwards along each environment's time axis.

/// Advantages and return targets for a `steps x envs` buffer stored
/// time-major (`index = t * envs + env`).
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    cont: &[bool],
    envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(
        envs > 0 && n.is_multiple_of(envs),
        "buffer must be rectangular"
    );
    assert!(values.len() == n && next_values.len() == n && cont.len() == n);
    let steps = n / envs;
    let mut adv = vec![0.0; n];
    for e in 0..envs {
        let mut running = 0.0;
        for t in (0..steps).rev() {
            let i = t * envs + e;
            let delta = rewards[i] + gamma * next_values[i] - values[i];
            let carry = if cont[i] && t + 1 < steps {
                running
            } else {
                0.0
            };
            running = delta + gamma * lambda * carry;
            adv[i] = running;
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts to zero mean and unit (population) variance over the masked
/// entries.
pub fn normalize_advantages(adv: &mut [f64], mask: &[bool]) {
    let n = mask.iter().filter(|&&m| m).count();
    if n < 2 {
        return;
    }
    let mean = adv
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(a, _)| a)
        .sum::<f64>()
        / n as f64;
    let var = adv
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(a, _)| (a - mean) * (a - mean))
        .sum::<f64>()
        / n as f64;
    let std = var.sqrt().max(1e-8);
    for (a, &m) in adv.iter_mut().zip(mask) {
        *a = if m { (*a - mean) / std } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_td() {
        let (a, r) = compute_gae(&[1.0], &[0.0], &[0.0], &[false], 1, 0.99, 0.95);
        assert_eq!(a, vec![1.0]);
        assert_eq!(r, vec![1.0]);
    }

    #[test]
    fn lambda_zero_gives_one_step_td() {
        let rewards = [1.0, 0.5, -0.2, 0.3];
        let values = [0.1, 0.2, 0.3, 0.4];
        let next = [0.2, 0.3, 0.4, 0.7];
        let (a, _) = compute_gae(&rewards, &values, &next, &[true; 4], 1, 0.9, 0.0);
        for i in 0..4 {
            assert!((a[i] - (rewards[i] + 0.9 * next[i] - values[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn normalization_moments() {
        let mut a = vec![1.0, 2.0, 3.0, 10.0, 99.0];
        normalize_advantages(&mut a, &[true, true, true, true, false]);
        let m: f64 = a[..4].iter().sum::<f64>() / 4.0;
        let v: f64 = a[..4].iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        assert_eq!(a[4], 0.0);
    }
}
