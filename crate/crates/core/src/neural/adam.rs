use super::params::ParamSet;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates over a flat parameter registry.
#[derive(Clone, Debug)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamSet<S>) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &ParamSet<S>, config: AdamConfig) -> Self {
        let n = params.num_scalars();
        AdamState {
            config,
            m: vec![S::zero(); n],
            v: vec![S::zero(); n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place. Fails if the registries disagree
/// or any parameter becomes non-finite.
pub fn adam_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &ParamSet<S>,
    lr: f64,
    state: &mut AdamState<S>,
) -> Result<()> {
    if !params.same_layout(grads) || state.m.len() != params.num_scalars() {
        return Err(Error::Shape(
            "adam: parameter, gradient and moment layouts differ".into(),
        ));
    }
    state.t += 1;
    let c = state.config;
    let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
    let t = state.t as i32;
    let step = lr * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
    let step = S::lit(step);
    // eps is scaled to match the textbook form m_hat / (sqrt(v_hat) + eps).
    let eps = S::lit(c.eps * (1.0 - c.beta2.powi(t)).sqrt());
    let (one_b1, one_b2) = (S::one() - b1, S::one() - b2);
    for (((p, &g), m), v) in params
        .flat_mut()
        .iter_mut()
        .zip(grads.flat())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + one_b1 * g;
        *v = b2 * *v + one_b2 * g * g;
        *p -= step * *m / (v.sqrt() + eps);
    }
    params.check_finite()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (ParamSet<f64>, ParamSet<f64>) {
        let mut p = ParamSet::new();
        p.register("w", &[3], vec![1.0, -2.0, 0.5]).unwrap();
        let g = p.zeros_like();
        (p, g)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let (mut p, g) = setup();
        let before = p.clone();
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &g, 1e-3, &mut s).unwrap();
        assert_eq!(p, before);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let (mut p, mut g) = setup();
        let mut s = AdamState::new(&p);
        g.flat_mut().copy_from_slice(&[1.0, 1.0, 1.0]);
        adam_step(&mut p, &g, 1e-3, &mut s).unwrap();
        let m1 = s.m[0];
        g.fill_zero();
        adam_step(&mut p, &g, 1e-3, &mut s).unwrap();
        assert!((s.m[0] - 0.9 * m1).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut p, mut g) = setup();
        let mut s = AdamState::new(&p);
        g.flat_mut().copy_from_slice(&[4.0, -0.01, 0.0]);
        let lr = 3e-4;
        adam_step(&mut p, &g, lr, &mut s).unwrap();
        let expected = [1.0 - lr * 4.0 / (4.0 + 1e-8), -2.0 + lr * 0.01 / (0.01 + 1e-8), 0.5];
        for (a, b) in p.flat().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn deterministic_and_layout_checked() {
        let (mut p1, mut g) = setup();
        g.flat_mut().copy_from_slice(&[0.3, 0.2, -0.1]);
        let mut p2 = p1.clone();
        let (mut s1, mut s2) = (AdamState::new(&p1), AdamState::new(&p2));
        for _ in 0..5 {
            adam_step(&mut p1, &g, 1e-2, &mut s1).unwrap();
            adam_step(&mut p2, &g, 1e-2, &mut s2).unwrap();
        }
        assert_eq!(p1, p2);
        let mut other = ParamSet::new();
        other.register("v", &[3], vec![0.0; 3]).unwrap();
        assert!(adam_step(&mut p1, &other, 1e-2, &mut s1).is_err());
    }

    #[test]
    fn non_finite_update_aborts() {
        let (mut p, mut g) = setup();
        let mut s = AdamState::new(&p);
        g.flat_mut()[0] = f64::NAN;
        assert!(matches!(adam_step(&mut p, &g, 1e-3, &mut s), Err(Error::NonFinite(_))));
    }
}
