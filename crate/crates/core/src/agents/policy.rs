//! Boltzmann behavior policy and its temperature controller.

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid_env::Action;

pub const MIN_TEMPERATURE: f64 = 1e-3;
pub const MAX_TEMPERATURE: f64 = 10.0;
pub const TEMPERATURE_LR: f64 = 1e-3;

/// `ln(|A| / 2)`.
pub fn default_target_entropy() -> f64 {
    (Action::COUNT as f64 / 2.0).ln()
}

/// `softmax(q / temperature)` with max subtraction.
pub fn boltzmann_probs(q: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if q.is_empty() {
        return Err(Error::Shape("no action scores".into()));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::NonFinite(format!("temperature {temperature}")));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("action scores {q:?}")));
    }
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = q.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Ok(p)
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the total mass; take the last action with mass
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples an action and returns it with the entropy of its distribution.
pub fn boltzmann_sample<R: Rng + ?Sized>(q: &[f64], temperature: f64, rng: &mut R) -> Result<(Action, f64)> {
    if q.len() != Action::COUNT {
        return Err(Error::Shape(format!(
            "expected {} action scores, got {}",
            Action::COUNT,
            q.len()
        )));
    }
    let p = boltzmann_probs(q, temperature)?;
    let a = Action::from_index(sample_index(&p, rng)).expect("index below action count");
    Ok((a, entropy(&p)))
}

/// `log t <- log t + lr * (target - mean_entropy)`, clamped. Entropy grows
/// with temperature, so too little entropy raises it.
pub fn update_temperature(temperature: f64, mean_entropy: f64, target_entropy: f64, lr: f64) -> f64 {
    let log_t = temperature.ln() + lr * (target_entropy - mean_entropy);
    log_t.exp().clamp(MIN_TEMPERATURE, MAX_TEMPERATURE)
}
