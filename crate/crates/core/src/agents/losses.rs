//! Critic losses on pre-featurized batches.
//!
//! Every function is pure given its inputs and returns the scalar loss with
//! the gradient of that loss for every parameter in the registry. Targets and
//! importance weights are passed in as plain numbers, which is how gradients
//! are stopped through them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{quasimetric_accumulate, Matrix, Network, ParamSet};
use crate::scalar::Scalar;

use super::policy::boltzmann_probs;

/// Classifier outputs are kept inside `[C_EPS, 1 - C_EPS]`.
pub const C_EPS: f64 = 1e-6;
/// Upper clip of the temporal-difference importance weight.
pub const MAX_TD_WEIGHT: f64 = 20.0;

#[derive(Debug)]
pub struct LossOutput<S> {
    pub loss: f64,
    pub grads: ParamSet<S>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdTarget {
    /// `max_a' Q(s', a', g)`.
    Max,
    /// `E_{a' ~ softmax(Q / t)} Q(s', a', g)`.
    ExpectedBoltzmann,
}

/// Logit function of the pairwise critic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Energy {
    DotProduct,
    /// Negative Euclidean distance.
    L2,
    /// Negative quasimetric distance.
    Quasimetric,
}

pub fn logit_clip() -> f64 {
    ((1.0 - C_EPS) / C_EPS).ln()
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_rows(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape(format!("{what}: {got} entries for {want} rows")));
    }
    Ok(())
}

fn check_actions(actions: &[usize], width: usize) -> Result<()> {
    match actions.iter().find(|&&a| a >= width) {
        Some(a) => Err(Error::Shape(format!("action column {a} out of {width}"))),
        None => Ok(()),
    }
}

/// Mean of `(Q(s, a) - y)^2` over the batch.
pub fn squared_error_loss<S: Scalar>(
    net: &Network,
    params: &ParamSet<S>,
    input: &Matrix<S>,
    actions: &[usize],
    targets: &[f64],
) -> Result<LossOutput<S>> {
    let b = input.rows();
    check_rows("actions", actions.len(), b)?;
    check_rows("targets", targets.len(), b)?;
    check_actions(actions, net.output_dim())?;
    let (out, tape) = net.forward(params, input)?;
    let mut cot = Matrix::zeros(b, out.cols());
    let mut loss = 0.0;
    for r in 0..b {
        let err = out.get(r, actions[r]).to_f64().expect("finite") - targets[r];
        loss += err * err;
        cot.set(r, actions[r], S::lit(2.0 * err / b as f64));
    }
    let mut grads = params.zeros_like();
    net.backward(params, tape, cot, &mut grads, false)?;
    Ok(LossOutput {
        loss: loss / b as f64,
        grads,
    })
}

/// `r + (1 - done) * discount * V(s')` per row of next-state scores.
pub fn td_targets<S: Scalar>(
    next_scores: &Matrix<S>,
    rewards: &[f64],
    dones: &[bool],
    discount: f64,
    kind: TdTarget,
    temperature: f64,
) -> Result<Vec<f64>> {
    check_rows("rewards", rewards.len(), next_scores.rows())?;
    check_rows("dones", dones.len(), next_scores.rows())?;
    (0..next_scores.rows())
        .map(|r| {
            if dones[r] {
                return Ok(rewards[r]);
            }
            let q: Vec<f64> = next_scores.row(r).iter().map(|v| v.to_f64().expect("finite")).collect();
            let v = match kind {
                TdTarget::Max => q.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                TdTarget::ExpectedBoltzmann => {
                    let p = boltzmann_probs(&q, temperature)?;
                    p.iter().zip(&q).map(|(a, b)| a * b).sum()
                }
            };
            Ok(rewards[r] + discount * v)
        })
        .collect()
}

/// `sum_r [pos_w[r] * CE(C_r, 1) + neg_w[r] * CE(C_r, 0)] / normalizer`
/// where `C_r = sigmoid(logit(s_r, a_r))` clipped to `[C_EPS, 1 - C_EPS]`.
#[allow(clippy::too_many_arguments)]
pub fn weighted_bce_loss<S: Scalar>(
    net: &Network,
    params: &ParamSet<S>,
    input: &Matrix<S>,
    actions: &[usize],
    pos_w: &[f64],
    neg_w: &[f64],
    normalizer: f64,
) -> Result<LossOutput<S>> {
    let b = input.rows();
    check_rows("actions", actions.len(), b)?;
    check_rows("positive weights", pos_w.len(), b)?;
    check_rows("negative weights", neg_w.len(), b)?;
    check_actions(actions, net.output_dim())?;
    let clip = logit_clip();
    let (out, tape) = net.forward(params, input)?;
    let mut cot = Matrix::zeros(b, out.cols());
    let mut loss = 0.0;
    for r in 0..b {
        let raw = out.get(r, actions[r]).to_f64().expect("finite");
        let l = raw.clamp(-clip, clip);
        loss += pos_w[r] * softplus(-l) + neg_w[r] * softplus(l);
        if raw.abs() <= clip {
            let c = sigmoid(l);
            let g = pos_w[r] * (c - 1.0) + neg_w[r] * c;
            cot.set(r, actions[r], S::lit(g / normalizer));
        }
    }
    let mut grads = params.zeros_like();
    net.backward(params, tape, cot, &mut grads, false)?;
    Ok(LossOutput {
        loss: loss / normalizer,
        grads,
    })
}

/// Binary cross-entropy with labels: the Monte Carlo classifier loss.
pub fn classifier_mc_loss<S: Scalar>(
    net: &Network,
    params: &ParamSet<S>,
    input: &Matrix<S>,
    actions: &[usize],
    labels: &[bool],
) -> Result<LossOutput<S>> {
    check_rows("labels", labels.len(), input.rows())?;
    let pos: Vec<f64> = labels.iter().map(|&l| f64::from(u8::from(l))).collect();
    let neg: Vec<f64> = pos.iter().map(|p| 1.0 - p).collect();
    weighted_bce_loss(net, params, input, actions, &pos, &neg, input.rows() as f64)
}

/// `C / (1 - C)` at the clipped logit, capped at [`MAX_TD_WEIGHT`].
pub fn td_importance_weight(next_logit: f64) -> f64 {
    let clip = logit_clip();
    next_logit.clamp(-clip, clip).exp().clamp(0.0, MAX_TD_WEIGHT)
}

/// Temporal-difference classifier loss, averaged over `B` transitions:
///
/// `(1 - discount) CE(C(s, a, cfg(s')), 1) + discount * w * CE(C(s, a, g), 1) + CE(C(s, a, g), 0)`
///
/// `next_cfg_input` encodes `(s, cfg(s'))`, `goal_input` encodes `(s, g)`
/// with `g` from the marginal, and `weights` holds the stop-gradient
/// [`td_importance_weight`] of `C(s', a', g)`.
pub fn classifier_td_loss<S: Scalar>(
    net: &Network,
    params: &ParamSet<S>,
    next_cfg_input: &Matrix<S>,
    goal_input: &Matrix<S>,
    actions: &[usize],
    weights: &[f64],
    discount: f64,
) -> Result<LossOutput<S>> {
    let b = next_cfg_input.rows();
    check_rows("goal rows", goal_input.rows(), b)?;
    check_rows("weights", weights.len(), b)?;
    if goal_input.cols() != next_cfg_input.cols() {
        return Err(Error::Shape("input widths differ".into()));
    }
    let mut data = next_cfg_input.data().to_vec();
    data.extend_from_slice(goal_input.data());
    let input = Matrix::from_vec(2 * b, next_cfg_input.cols(), data)?;
    let mut acts = actions.to_vec();
    acts.extend_from_slice(actions);
    let mut pos = vec![1.0 - discount; b];
    pos.extend(weights.iter().map(|w| discount * w));
    let mut neg = vec![0.0; b];
    neg.extend(std::iter::repeat(1.0).take(b));
    weighted_bce_loss(net, params, &input, &acts, &pos, &neg, b as f64)
}

/// Logit of each matched row pair `(phi_i, psi_i)`.
pub fn paired_logits<S: Scalar>(phi: &Matrix<S>, psi: &Matrix<S>, energy: Energy) -> Result<Vec<f64>> {
    check_rows("goal embeddings", psi.rows(), phi.rows())?;
    if phi.cols() != psi.cols() {
        return Err(Error::Shape("embedding widths differ".into()));
    }
    if energy == Energy::Quasimetric && phi.cols() % 2 != 0 {
        return Err(Error::Shape("quasimetric needs an even embedding width".into()));
    }
    Ok((0..phi.rows())
        .map(|i| pair_logit(phi.row(i), psi.row(i), energy))
        .collect())
}

pub(crate) fn pair_logit<S: Scalar>(x: &[S], y: &[S], energy: Energy) -> f64 {
    let v = match energy {
        Energy::DotProduct => x.iter().zip(y).map(|(&a, &b)| a * b).sum::<S>(),
        Energy::L2 => -x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>().sqrt(),
        Energy::Quasimetric => -crate::neural::quasimetric_distance(x, y).expect("validated dims"),
    };
    v.to_f64().expect("finite")
}

/// All-pairs logits `L_ij = f(phi_i, psi_j)`.
pub fn logit_matrix<S: Scalar>(phi: &Matrix<S>, psi: &Matrix<S>, energy: Energy) -> Result<Matrix<S>> {
    if phi.cols() != psi.cols() {
        return Err(Error::Shape("embedding widths differ".into()));
    }
    if energy == Energy::Quasimetric && phi.cols() % 2 != 0 {
        return Err(Error::Shape("quasimetric needs an even embedding width".into()));
    }
    if energy == Energy::DotProduct {
        return phi.matmul_t(psi);
    }
    let mut l = Matrix::zeros(phi.rows(), psi.rows());
    for i in 0..phi.rows() {
        for j in 0..psi.rows() {
            l.set(i, j, S::lit(pair_logit(phi.row(i), psi.row(j), energy)));
        }
    }
    Ok(l)
}

/// Contrastive critic loss: sigmoid cross-entropy over all `B^2` pairs with
/// positives on the diagonal, averaged over pairs.
pub fn contrastive_loss<S: Scalar>(
    sa_net: &Network,
    goal_net: &Network,
    params: &ParamSet<S>,
    sa_input: &Matrix<S>,
    goal_input: &Matrix<S>,
    energy: Energy,
) -> Result<LossOutput<S>> {
    let b = sa_input.rows();
    check_rows("goal rows", goal_input.rows(), b)?;
    let (phi, sa_tape) = sa_net.forward(params, sa_input)?;
    let (psi, goal_tape) = goal_net.forward(params, goal_input)?;
    let logits = logit_matrix(&phi, &psi, energy)?;
    let pairs = (b * b) as f64;
    let mut loss = 0.0;
    let mut dl = Matrix::zeros(b, b);
    for i in 0..b {
        for j in 0..b {
            let l = logits.get(i, j).to_f64().expect("finite");
            let pos = i == j;
            loss += if pos { softplus(-l) } else { softplus(l) };
            let g = sigmoid(l) - f64::from(u8::from(pos));
            dl.set(i, j, S::lit(g / pairs));
        }
    }
    let (dphi, dpsi) = match energy {
        Energy::DotProduct => (dl.matmul(&psi)?, dl.t_matmul(&phi)?),
        Energy::L2 | Energy::Quasimetric => {
            let d = phi.cols();
            let mut dphi = Matrix::zeros(b, d);
            let mut dpsi = Matrix::zeros(b, d);
            let mut gx = vec![S::zero(); d];
            let mut gy = vec![S::zero(); d];
            for i in 0..b {
                for j in 0..b {
                    let w = dl.get(i, j);
                    if w == S::zero() {
                        continue;
                    }
                    gx.iter_mut().for_each(|v| *v = S::zero());
                    gy.iter_mut().for_each(|v| *v = S::zero());
                    // logit = -distance
                    match energy {
                        Energy::L2 => {
                            let (x, y) = (phi.row(i), psi.row(j));
                            let dist = x.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum::<S>().sqrt();
                            if dist > S::zero() {
                                for k in 0..d {
                                    let v = (x[k] - y[k]) / dist;
                                    gx[k] = -w * v;
                                    gy[k] = w * v;
                                }
                            }
                        }
                        _ => {
                            quasimetric_accumulate(phi.row(i), psi.row(j), -w, &mut gx, &mut gy);
                        }
                    }
                    for (a, &v) in dphi.row_mut(i).iter_mut().zip(&gx) {
                        *a += v;
                    }
                    for (a, &v) in dpsi.row_mut(j).iter_mut().zip(&gy) {
                        *a += v;
                    }
                }
            }
            (dphi, dpsi)
        }
    };
    let mut grads = params.zeros_like();
    sa_net.backward(params, sa_tape, dphi, &mut grads, false)?;
    goal_net.backward(params, goal_tape, dpsi, &mut grads, false)?;
    Ok(LossOutput {
        loss: loss / pairs,
        grads,
    })
}
