#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semplan::numcore::{Activation, DenseNet, OutputLoss};
use semplan::transition::{MdnLayout, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use semplan::world::{LatentWorld, WorldSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Central finite-difference gradient of `loss(net(x), target)` with
/// respect to every parameter.
pub fn numeric_gradient(
    net: &DenseNet,
    loss: &dyn OutputLoss,
    x: &[f64],
    target: &[f64],
    eps: f64,
) -> Vec<f64> {
    let base = net.params();
    let mut probe = net.clone();
    let eval = |p: &[f64], probe: &mut DenseNet| {
        probe.set_params(p).unwrap();
        loss.evaluate(&probe.forward(x).unwrap(), target).unwrap().0
    };
    (0..base.len())
        .map(|i| {
            let mut p = base.clone();
            p[i] = base[i] + eps;
            let up = eval(&p, &mut probe);
            p[i] = base[i] - eps;
            let down = eval(&p, &mut probe);
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Largest `|a - n| / max(|a|, |n|, floor)` over all parameters.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compares `backward` with finite differences at one probe.
pub fn gradient_error(net: &DenseNet, loss: &dyn OutputLoss, x: &[f64], target: &[f64]) -> f64 {
    let analytic = net.backward(loss, x, target).unwrap().flat();
    let numeric = numeric_gradient(net, loss, x, target, 1e-5);
    max_relative_error(&analytic, &numeric, 1e-6)
}

/// Hand-built world from kernel rows and rewards, with generated embeddings.
pub fn world_from(
    kernel: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<Vec<f64>>>,
    n: usize,
    seed: u64,
) -> LatentWorld {
    let states = kernel.len();
    let actions = kernel.iter().map(Vec::len).collect();
    let spec = WorldSpec {
        states,
        actions,
        kernel,
        rewards,
        embedding_seed: seed,
        n,
        style: Default::default(),
        embedding: None,
        mid_embedding: None,
        potential: None,
    };
    LatentWorld::from_spec(&spec).unwrap()
}

/// Three states, two actions each, with stochastic rows.
pub fn three_state_world() -> LatentWorld {
    let kernel = vec![
        vec![vec![0.0, 0.7, 0.3], vec![0.2, 0.0, 0.8]],
        vec![vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 0.5]],
        vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0]],
    ];
    let rewards = vec![
        vec![vec![0.0, 1.0, -1.0], vec![0.5, 0.0, 0.2]],
        vec![vec![0.3, 0.0, 0.0], vec![0.0, 0.1, 2.0]],
        vec![vec![1.0, -0.5, 0.0], vec![0.0, 0.0, 0.4]],
    ];
    world_from(kernel, rewards, 4, 11)
}

/// Mean of a slice.
pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Small random MDN net whose raw log-sigma outputs at `x` stay clear of the
/// clamp, where the loss is not differentiable.
pub fn mdn_net(layout: MdnLayout, input: usize, x: &[f64], seed: u64) -> DenseNet {
    let mut r = rng(seed);
    loop {
        let net = DenseNet::xavier(
            &[input, 4, layout.output_dim()],
            Activation::Tanh,
            Activation::Identity,
            &mut r,
        )
        .unwrap();
        let mut net = net;
        let biased: Vec<f64> = net
            .params()
            .iter()
            .map(|p| p + r.random_range(-0.3..0.3))
            .collect();
        net.set_params(&biased).unwrap();
        let out = net.forward(x).unwrap();
        let ls = &out[layout.components * (1 + layout.dim)..];
        if ls
            .iter()
            .all(|v| *v > LOG_SIGMA_MIN + 0.1 && *v < LOG_SIGMA_MAX - 0.1)
        {
            return net;
        }
    }
}
