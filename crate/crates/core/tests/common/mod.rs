#![allow(dead_code)]

use gridstitch::agents::losses::{contrastive_loss, Energy};
use gridstitch::neural::{
    build_critic, quasimetric_distance, quasimetric_distance_grad, Activation, ArchSpec, CriticNet, Matrix,
    NetworkBuilder, OutputInit, ParamSet, Trunk,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, FD_FLOOR)`.
pub const FD_FLOOR: f64 = 1e-6;

/// Largest relative error between `grad` and central differences of `f`
/// over every parameter.
pub fn max_relative_error(params: &ParamSet<f64>, grad: &ParamSet<f64>, f: impl Fn(&ParamSet<f64>) -> f64) -> f64 {
    let mut p = params.clone();
    let mut worst = 0.0f64;
    for i in 0..p.num_scalars() {
        let orig = p.flat()[i];
        p.flat_mut()[i] = orig + FD_STEP;
        let up = f(&p);
        p.flat_mut()[i] = orig - FD_STEP;
        let down = f(&p);
        p.flat_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grad.flat()[i];
        let scale = analytic.abs().max(numeric.abs()).max(FD_FLOOR);
        let rel = (analytic - numeric).abs() / scale;
        if std::env::var("FD_DEBUG").is_ok() && rel > 1e-5 {
            eprintln!("param {i}: analytic {analytic:e} numeric {numeric:e}");
        }
        worst = worst.max(rel);
    }
    worst
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Moves every parameter (including zero-initialized gains and output
/// layers) to a random value so no gradient path is trivially zero.
fn scramble(params: &mut ParamSet<f64>, rng: &mut ChaCha8Rng, amplitude: f64) {
    for v in params.flat_mut() {
        *v += rng.gen_range(-amplitude..amplitude);
    }
}

/// `<c, net(x)>` for a random cotangent `c`.
fn network_check(net: &gridstitch::neural::Network, params: &ParamSet<f64>, rng: &mut ChaCha8Rng) -> f64 {
    let rows = rng.gen_range(1..5);
    let x = random_matrix(rng, rows, net.input_dim());
    let c = random_matrix(rng, rows, net.output_dim());
    let (_, tape) = net.forward(params, &x).unwrap();
    let mut grads = params.zeros_like();
    net.backward(params, tape, c.clone(), &mut grads, false).unwrap();
    max_relative_error(params, &grads, |p| {
        let y = net.infer(p, &x).unwrap();
        y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
    })
}

/// Worst error over `nets` random small MLPs shaped like the 256-unit critic
/// (two hidden layers, Swish, post-activation LayerNorm).
pub fn mlp_gradient_error(nets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..nets)
        .map(|_| {
            let mut params = ParamSet::new();
            let (i, h1, h2, o) = (
                rng.gen_range(1..=8),
                rng.gen_range(2..=8),
                rng.gen_range(2..=8),
                rng.gen_range(1..=8),
            );
            let net = NetworkBuilder::new(&mut params, &mut rng, "m")
                .mlp(i, &[h1, h2], o, Activation::Swish, OutputInit::Zero)
                .unwrap();
            scramble(&mut params, &mut rng, 0.5);
            network_check(&net, &params, &mut rng)
        })
        .fold(0.0, f64::max)
}

/// Residual critic reduced to two blocks of two width-16 layers.
pub fn resnet_gradient_error(nets: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..nets)
        .map(|_| {
            let mut params = ParamSet::new();
            let (i, o) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            let net = NetworkBuilder::new(&mut params, &mut rng, "r")
                .resnet(i, 16, 2, 2, o, OutputInit::Zero)
                .unwrap();
            scramble(&mut params, &mut rng, 0.5);
            network_check(&net, &params, &mut rng)
        })
        .fold(0.0, f64::max)
}

/// Contrastive loss through both encoders with the given energy.
pub fn encoder_gradient_error(nets: usize, seed: u64, energy: Energy) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..nets)
        .map(|_| {
            let (i, g) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
            let repr = 2 * rng.gen_range(1..=4);
            let arch = match energy {
                Energy::Quasimetric => ArchSpec::quasimetric_encoder(i, g, repr),
                _ => ArchSpec::twin_encoder(i, g, repr),
            }
            .with_trunk(Trunk::Mlp {
                hidden: vec![rng.gen_range(2..=8), rng.gen_range(2..=8)],
            });
            let (net, mut params) = build_critic::<f64, _>(&arch, &mut rng).unwrap();
            // kept small so the pairwise sigmoids stay away from saturation
            scramble(&mut params, &mut rng, 0.1);
            let CriticNet::Twin { sa, goal } = net else {
                unreachable!()
            };
            let b = rng.gen_range(2..6);
            let xs = random_matrix(&mut rng, b, i);
            let xg = random_matrix(&mut rng, b, g);
            let out = contrastive_loss(&sa, &goal, &params, &xs, &xg, energy).unwrap();
            max_relative_error(&params, &out.grads, |p| {
                contrastive_loss(&sa, &goal, p, &xs, &xg, energy).unwrap().loss
            })
        })
        .fold(0.0, f64::max)
}

/// Worst absolute error of the quasimetric distance gradient in both
/// arguments over `pairs` random embedding pairs.
pub fn quasimetric_distance_gradient_error(pairs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let d = 2 * rng.gen_range(1..5);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (_, gx, gy) = quasimetric_distance_grad(&x, &y).unwrap();
        for k in 0..d {
            let nudge = |v: &[f64], h: f64| {
                let mut v = v.to_vec();
                v[k] += h;
                v
            };
            let nx = (quasimetric_distance(&nudge(&x, FD_STEP), &y).unwrap()
                - quasimetric_distance(&nudge(&x, -FD_STEP), &y).unwrap())
                / (2.0 * FD_STEP);
            let ny = (quasimetric_distance(&x, &nudge(&y, FD_STEP)).unwrap()
                - quasimetric_distance(&x, &nudge(&y, -FD_STEP)).unwrap())
                / (2.0 * FD_STEP);
            worst = worst.max((gx[k] - nx).abs()).max((gy[k] - ny).abs());
        }
    }
    worst
}
