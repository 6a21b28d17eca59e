//! Asymmetric distance between embeddings.
//!
//! The first half of each embedding contributes a Euclidean (symmetric)
//! distance, the second half the largest one-sided coordinate gap
//! `max_i relu(x_i - y_i)`. Both parts satisfy the triangle inequality and
//! vanish on the diagonal, so their sum is a quasimetric.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn check<S>(e1: &[S], e2: &[S]) -> Result<usize> {
    if e1.len() != e2.len() {
        return Err(Error::Shape(format!("embedding dims {} and {}", e1.len(), e2.len())));
    }
    if e1.len() % 2 != 0 || e1.is_empty() {
        return Err(Error::Shape(format!(
            "quasimetric needs an even, nonzero dim, got {}",
            e1.len()
        )));
    }
    Ok(e1.len() / 2)
}

pub fn quasimetric_distance<S: Scalar>(e1: &[S], e2: &[S]) -> Result<S> {
    let half = check(e1, e2)?;
    Ok(distance_parts(e1, e2, half).0)
}

/// `(distance, euclidean part, argmax of the one-sided part or None if all
/// one-sided gaps are non-positive)`.
fn distance_parts<S: Scalar>(e1: &[S], e2: &[S], half: usize) -> (S, S, Option<usize>) {
    let sq: S = e1[..half]
        .iter()
        .zip(&e2[..half])
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    let sym = sq.sqrt();
    let mut best = S::zero();
    let mut arg = None;
    for i in half..e1.len() {
        let gap = e1[i] - e2[i];
        if gap > best {
            best = gap;
            arg = Some(i);
        }
    }
    (sym + best, sym, arg)
}

/// Distance with its gradients with respect to both arguments. At a
/// coincident symmetric half the Euclidean subgradient 0 is used.
pub fn quasimetric_distance_grad<S: Scalar>(e1: &[S], e2: &[S]) -> Result<(S, Vec<S>, Vec<S>)> {
    let half = check(e1, e2)?;
    let (d, sym, arg) = distance_parts(e1, e2, half);
    let mut g1 = vec![S::zero(); e1.len()];
    let mut g2 = vec![S::zero(); e1.len()];
    if sym > S::zero() {
        for i in 0..half {
            let v = (e1[i] - e2[i]) / sym;
            g1[i] = v;
            g2[i] = -v;
        }
    }
    if let Some(i) = arg {
        g1[i] = S::one();
        g2[i] = -S::one();
    }
    Ok((d, g1, g2))
}

/// Adds `scale * grad` of `d(e1, e2)` into `g1` and `g2` and returns the
/// distance. Dimensions must already be validated.
pub(crate) fn accumulate_grad<S: Scalar>(e1: &[S], e2: &[S], scale: S, g1: &mut [S], g2: &mut [S]) -> S {
    let half = e1.len() / 2;
    let (d, sym, arg) = distance_parts(e1, e2, half);
    if sym > S::zero() {
        let k = scale / sym;
        for i in 0..half {
            let v = (e1[i] - e2[i]) * k;
            g1[i] += v;
            g2[i] -= v;
        }
    }
    if let Some(i) = arg {
        g1[i] += scale;
        g2[i] -= scale;
    }
    d
}
