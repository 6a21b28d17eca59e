//! Fixed-family feed-forward networks with hand-written reverse mode.
//!
//! A [`Network`] only describes structure; its tensors live in a
//! [`ParamSet`] so several networks (e.g. the two encoders of a contrastive
//! critic) can share one registry and one optimizer.

use rand::Rng;

use super::matrix::Matrix;
use super::params::{ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

pub fn swish<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

impl Activation {
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Swish => swish(x),
        }
    }

    fn derivative<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s * (S::one() + x * (S::one() - s))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Dense {
        weight: ParamId,
        bias: ParamId,
        fan_in: usize,
        fan_out: usize,
    },
    LayerNorm {
        gain: ParamId,
        offset: ParamId,
        dim: usize,
    },
    Act(Activation),
    /// `x + body(x)`.
    Residual(Vec<Layer>),
}

/// Per-layer values saved by the forward pass for the backward pass.
#[derive(Debug)]
enum Saved<S> {
    Input(Matrix<S>),
    Norm { normalized: Matrix<S>, inv_std: Vec<S> },
    Nested(Vec<Saved<S>>),
}

#[derive(Debug)]
pub struct Tape<S> {
    saved: Vec<Saved<S>>,
}

#[derive(Clone, Debug)]
pub struct Network {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

/// How the output layer is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputInit {
    Zero,
    FanIn,
}

/// Incremental construction of a [`Network`] registering into a shared
/// [`ParamSet`] under a name prefix.
pub struct NetworkBuilder<'a, S, R: ?Sized> {
    params: &'a mut ParamSet<S>,
    rng: &'a mut R,
    prefix: String,
    counter: usize,
}

impl<'a, S: Scalar, R: Rng + ?Sized> NetworkBuilder<'a, S, R> {
    pub fn new(params: &'a mut ParamSet<S>, rng: &'a mut R, prefix: &str) -> Self {
        NetworkBuilder {
            params,
            rng,
            prefix: prefix.to_string(),
            counter: 0,
        }
    }

    fn next_name(&mut self, kind: &str) -> String {
        self.counter += 1;
        format!("{}/{kind}{}", self.prefix, self.counter)
    }

    pub fn dense(&mut self, fan_in: usize, fan_out: usize, init: OutputInit) -> Result<Layer> {
        let name = self.next_name("dense");
        let weight = match init {
            OutputInit::Zero => self.params.register_zeros(&format!("{name}/w"), &[fan_in, fan_out])?,
            OutputInit::FanIn => {
                self.params
                    .register_fan_in(&format!("{name}/w"), &[fan_in, fan_out], fan_in, self.rng)?
            }
        };
        let bias = self.params.register_zeros(&format!("{name}/b"), &[fan_out])?;
        Ok(Layer::Dense {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn layer_norm(&mut self, dim: usize, gain: f64) -> Result<Layer> {
        let name = self.next_name("norm");
        let g = self
            .params
            .register_filled(&format!("{name}/gain"), &[dim], S::lit(gain))?;
        let o = self.params.register_zeros(&format!("{name}/offset"), &[dim])?;
        Ok(Layer::LayerNorm {
            gain: g,
            offset: o,
            dim,
        })
    }

    /// `Dense -> act -> LayerNorm` per hidden width, then a dense output layer.
    pub fn mlp(
        mut self,
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        act: Activation,
        output_init: OutputInit,
    ) -> Result<Network> {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden {
            layers.push(self.dense(width, h, OutputInit::FanIn)?);
            layers.push(Layer::Act(act));
            layers.push(self.layer_norm(h, 1.0)?);
            width = h;
        }
        layers.push(self.dense(width, output_dim, output_init)?);
        Ok(Network {
            layers,
            input_dim,
            output_dim,
        })
    }

    /// Input projection, then `blocks` residual blocks of
    /// `layers_per_block x (Dense -> LayerNorm -> Swish)`, then a dense output.
    ///
    /// The last LayerNorm gain of every block starts at zero, so each block
    /// is the identity map at initialization.
    pub fn resnet(
        mut self,
        input_dim: usize,
        width: usize,
        blocks: usize,
        layers_per_block: usize,
        output_dim: usize,
        output_init: OutputInit,
    ) -> Result<Network> {
        let mut layers = vec![
            self.dense(input_dim, width, OutputInit::FanIn)?,
            self.layer_norm(width, 1.0)?,
            Layer::Act(Activation::Swish),
        ];
        for _ in 0..blocks {
            let mut body = Vec::new();
            for l in 0..layers_per_block {
                let last = l + 1 == layers_per_block;
                body.push(self.dense(width, width, OutputInit::FanIn)?);
                body.push(self.layer_norm(width, if last { 0.0 } else { 1.0 })?);
                body.push(Layer::Act(Activation::Swish));
            }
            layers.push(Layer::Residual(body));
        }
        layers.push(self.dense(width, output_dim, output_init)?);
        Ok(Network {
            layers,
            input_dim,
            output_dim,
        })
    }
}

fn dense_forward<S: Scalar>(
    params: &ParamSet<S>,
    weight: ParamId,
    bias: ParamId,
    x: &Matrix<S>,
    fan_out: usize,
) -> Matrix<S> {
    let b = params.get(bias);
    let mut y = Matrix::zeros(x.rows(), fan_out);
    for r in 0..x.rows() {
        y.row_mut(r).copy_from_slice(b);
    }
    S::gemm(
        x.rows(),
        x.cols(),
        fan_out,
        S::one(),
        x.data(),
        x.cols() as isize,
        1,
        params.get(weight),
        fan_out as isize,
        1,
        S::one(),
        y.data_mut(),
        fan_out as isize,
        1,
    );
    y
}

fn norm_forward<S: Scalar>(
    params: &ParamSet<S>,
    gain: ParamId,
    offset: ParamId,
    x: &Matrix<S>,
) -> (Matrix<S>, Matrix<S>, Vec<S>) {
    let (g, o) = (params.get(gain), params.get(offset));
    let d = x.cols();
    let dn = S::from_usize(d).expect("dim");
    let eps = S::lit(LAYER_NORM_EPS);
    let mut normalized = Matrix::zeros(x.rows(), d);
    let mut y = Matrix::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<S>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
        let inv = S::one() / (var + eps).sqrt();
        inv_std.push(inv);
        let nrow = normalized.row_mut(r);
        for (n, &v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * inv;
        }
        let yrow = y.row_mut(r);
        for i in 0..d {
            yrow[i] = g[i] * normalized.get(r, i) + o[i];
        }
    }
    (y, normalized, inv_std)
}

impl Network {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check_input<S: Scalar>(&self, input: &Matrix<S>) -> Result<()> {
        if input.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim,
                input.cols()
            )));
        }
        Ok(())
    }

    /// Forward pass without saving intermediates.
    pub fn infer<S: Scalar>(&self, params: &ParamSet<S>, input: &Matrix<S>) -> Result<Matrix<S>> {
        self.check_input(input)?;
        Ok(run_forward(&self.layers, params, input.clone(), None))
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward<S: Scalar>(&self, params: &ParamSet<S>, input: &Matrix<S>) -> Result<(Matrix<S>, Tape<S>)> {
        self.check_input(input)?;
        let mut saved = Vec::new();
        let out = run_forward(&self.layers, params, input.clone(), Some(&mut saved));
        Ok((out, Tape { saved }))
    }

    /// Accumulates parameter gradients of `<output_cotangent, output>` into
    /// `grads` and returns the input cotangent when requested.
    pub fn backward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        tape: Tape<S>,
        output_cotangent: Matrix<S>,
        grads: &mut ParamSet<S>,
        want_input_grad: bool,
    ) -> Result<Option<Matrix<S>>> {
        if output_cotangent.cols() != self.output_dim {
            return Err(Error::Shape(format!(
                "cotangent has {} columns, network outputs {}",
                output_cotangent.cols(),
                self.output_dim
            )));
        }
        if !grads.same_layout(params) {
            return Err(Error::Shape("gradient registry layout differs".into()));
        }
        Ok(run_backward(
            &self.layers,
            params,
            tape.saved,
            output_cotangent,
            grads,
            want_input_grad,
        ))
    }
}

fn run_forward<S: Scalar>(
    layers: &[Layer],
    params: &ParamSet<S>,
    mut x: Matrix<S>,
    mut saved: Option<&mut Vec<Saved<S>>>,
) -> Matrix<S> {
    for layer in layers {
        x = match layer {
            Layer::Dense {
                weight, bias, fan_out, ..
            } => {
                let y = dense_forward(params, *weight, *bias, &x, *fan_out);
                if let Some(s) = saved.as_deref_mut() {
                    s.push(Saved::Input(x));
                }
                y
            }
            Layer::LayerNorm { gain, offset, .. } => {
                let (y, normalized, inv_std) = norm_forward(params, *gain, *offset, &x);
                if let Some(s) = saved.as_deref_mut() {
                    s.push(Saved::Norm { normalized, inv_std });
                }
                y
            }
            Layer::Act(act) => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
                if let Some(s) = saved.as_deref_mut() {
                    s.push(Saved::Input(x));
                }
                y
            }
            Layer::Residual(body) => {
                let branch = match saved.as_deref_mut() {
                    Some(s) => {
                        let mut inner = Vec::new();
                        let b = run_forward(body, params, x.clone(), Some(&mut inner));
                        s.push(Saved::Nested(inner));
                        b
                    }
                    None => run_forward(body, params, x.clone(), None),
                };
                let mut y = x;
                for (a, b) in y.data_mut().iter_mut().zip(branch.data()) {
                    *a += *b;
                }
                y
            }
        };
    }
    x
}

fn run_backward<S: Scalar>(
    layers: &[Layer],
    params: &ParamSet<S>,
    mut saved: Vec<Saved<S>>,
    mut dy: Matrix<S>,
    grads: &mut ParamSet<S>,
    want_input_grad: bool,
) -> Option<Matrix<S>> {
    for (i, layer) in layers.iter().enumerate().rev() {
        let record = saved.pop().expect("tape matches layers");
        let first = i == 0;
        dy = match (layer, record) {
            (
                Layer::Dense {
                    weight,
                    bias,
                    fan_in,
                    fan_out,
                },
                Saved::Input(x),
            ) => {
                let (fan_in, fan_out) = (*fan_in, *fan_out);
                S::gemm(
                    fan_in,
                    x.rows(),
                    fan_out,
                    S::one(),
                    x.data(),
                    1,
                    fan_in as isize,
                    dy.data(),
                    fan_out as isize,
                    1,
                    S::one(),
                    grads.get_mut(*weight),
                    fan_out as isize,
                    1,
                );
                let db = grads.get_mut(*bias);
                for r in 0..dy.rows() {
                    for (g, &v) in db.iter_mut().zip(dy.row(r)) {
                        *g += v;
                    }
                }
                if first && !want_input_grad {
                    return None;
                }
                let mut dx = Matrix::zeros(x.rows(), fan_in);
                S::gemm(
                    x.rows(),
                    fan_out,
                    fan_in,
                    S::one(),
                    dy.data(),
                    fan_out as isize,
                    1,
                    params.get(*weight),
                    1,
                    fan_out as isize,
                    S::zero(),
                    dx.data_mut(),
                    fan_in as isize,
                    1,
                );
                dx
            }
            (Layer::LayerNorm { gain, offset, dim }, Saved::Norm { normalized, inv_std }) => {
                let d = *dim;
                let dn = S::from_usize(d).expect("dim");
                {
                    let dg = grads.get_mut(*gain);
                    for r in 0..dy.rows() {
                        for ((g, &v), &n) in dg.iter_mut().zip(dy.row(r)).zip(normalized.row(r)) {
                            *g += v * n;
                        }
                    }
                }
                {
                    let doff = grads.get_mut(*offset);
                    for r in 0..dy.rows() {
                        for (g, &v) in doff.iter_mut().zip(dy.row(r)) {
                            *g += v;
                        }
                    }
                }
                let g = params.get(*gain);
                let mut dx = Matrix::zeros(dy.rows(), d);
                let mut dn_row = vec![S::zero(); d];
                for r in 0..dy.rows() {
                    let (dyr, nr) = (dy.row(r), normalized.row(r));
                    for j in 0..d {
                        dn_row[j] = dyr[j] * g[j];
                    }
                    let mean_d = dn_row.iter().copied().sum::<S>() / dn;
                    let mean_dn = dn_row.iter().zip(nr).map(|(&a, &b)| a * b).sum::<S>() / dn;
                    let inv = inv_std[r];
                    for (j, out) in dx.row_mut(r).iter_mut().enumerate() {
                        *out = inv * (dn_row[j] - mean_d - nr[j] * mean_dn);
                    }
                }
                dx
            }
            (Layer::Act(act), Saved::Input(x)) => {
                let mut dx = dy;
                for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    *d *= act.derivative(v);
                }
                dx
            }
            (Layer::Residual(body), Saved::Nested(inner)) => {
                let branch = run_backward(body, params, inner, dy.clone(), grads, true).expect("input grad requested");
                let mut dx = dy;
                for (a, b) in dx.data_mut().iter_mut().zip(branch.data()) {
                    *a += *b;
                }
                dx
            }
            _ => unreachable!("tape record does not match layer"),
        };
    }
    Some(dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(17)
    }

    #[test]
    fn layer_norm_of_centered_unit_row() {
        let mut params = ParamSet::<f64>::new();
        let mut r = rng();
        let ln = NetworkBuilder::new(&mut params, &mut r, "t")
            .layer_norm(2, 1.0)
            .unwrap();
        let Layer::LayerNorm { gain, offset, .. } = ln else {
            unreachable!()
        };
        let x = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let (y, _, _) = norm_forward(&params, gain, offset, &x);
        assert!((y.get(0, 0) - 1.0).abs() < 1e-6);
        assert!((y.get(0, 1) + 1.0).abs() < 1e-6);
    }

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0f64), 0.0);
        let x = 1.3f64;
        assert!((swish(x) - x / (1.0 + (-x).exp())).abs() < 1e-15);
    }

    #[test]
    fn zero_output_layer_gives_zero_outputs() {
        let mut params = ParamSet::<f32>::new();
        let mut r = rng();
        let net = NetworkBuilder::new(&mut params, &mut r, "q")
            .mlp(5, &[8, 8], 3, Activation::Swish, OutputInit::Zero)
            .unwrap();
        let x = Matrix::from_vec(4, 5, (0..20).map(|i| i as f32 * 0.3 - 2.0).collect()).unwrap();
        let y = net.infer(&params, &x).unwrap();
        assert_eq!((y.rows(), y.cols()), (4, 3));
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut params = ParamSet::<f32>::new();
        let mut r = rng();
        let net = NetworkBuilder::new(&mut params, &mut r, "q")
            .mlp(5, &[4], 2, Activation::Relu, OutputInit::FanIn)
            .unwrap();
        assert!(net.infer(&params, &Matrix::zeros(1, 4)).is_err());
    }

    #[test]
    fn linear_layer_gradient_is_outer_product() {
        let mut params = ParamSet::<f64>::new();
        let mut r = rng();
        let net = NetworkBuilder::new(&mut params, &mut r, "lin")
            .mlp(3, &[], 2, Activation::Relu, OutputInit::FanIn)
            .unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, -1.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![0.5, -3.0]]).unwrap();
        let (_, tape) = net.forward(&params, &x).unwrap();
        let mut grads = params.zeros_like();
        net.backward(&params, tape, c, &mut grads, false).unwrap();
        let w = grads.named("lin/dense1/w").unwrap();
        let expected = [0.5, -3.0, 1.0, -6.0, -0.5, 3.0];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(grads.named("lin/dense1/b").unwrap(), &[0.5, -3.0]);
    }

    #[test]
    fn resnet_blocks_are_identity_at_init() {
        let mut params = ParamSet::<f64>::new();
        let mut r = rng();
        let mut b = NetworkBuilder::new(&mut params, &mut r, "res");
        let mut body = Vec::new();
        for l in 0..4 {
            body.push(b.dense(6, 6, OutputInit::FanIn).unwrap());
            body.push(b.layer_norm(6, if l == 3 { 0.0 } else { 1.0 }).unwrap());
            body.push(Layer::Act(Activation::Swish));
        }
        let net = Network {
            layers: vec![Layer::Residual(body)],
            input_dim: 6,
            output_dim: 6,
        };
        let x = Matrix::from_vec(3, 6, (0..18).map(|i| (i as f64).sin()).collect()).unwrap();
        assert_eq!(net.infer(&params, &x).unwrap(), x);
    }

    #[test]
    fn output_shape_depends_only_on_architecture() {
        let mut params = ParamSet::<f32>::new();
        let mut r = rng();
        let net = NetworkBuilder::new(&mut params, &mut r, "r")
            .resnet(7, 16, 2, 2, 5, OutputInit::FanIn)
            .unwrap();
        for rows in [1, 3, 64] {
            let y = net.infer(&params, &Matrix::zeros(rows, 7)).unwrap();
            assert_eq!((y.rows(), y.cols()), (rows, 5));
        }
    }
}
