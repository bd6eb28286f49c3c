//! Central finite differences against backprop, in f64.

use diffkernel::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Var;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn loss_of(build: &Build, inputs: &[Tensor<f64>], target: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let l = g.mse(out, target.clone()).unwrap();
    g.value(l).item()
}

/// Worst norm-wise relative error over all inputs.
fn check(build: &Build, inputs: Vec<Tensor<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars);
    let target = random(rng, g.value(out).shape());
    let l = g.mse(out, target.clone()).unwrap();
    let grads = g.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        let mut numeric = vec![0.0; inputs[k].numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            *slot = (loss_of(build, &plus, &target) - loss_of(build, &minus, &target)) / (2.0 * H);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.data().iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = na.max(nn).max(1e-8);
        worst = worst.max(diff / scale);
    }
    worst
}

fn run_cases(name: &str, cases: usize, make: impl Fn(&mut ChaCha8Rng) -> (Box<Build>, Vec<Tensor<f64>>)) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
    for case in 0..cases {
        let (build, inputs) = make(&mut rng);
        let err = check(build.as_ref(), inputs, &mut rng);
        assert!(err < TOL, "{name} case {case}: relative error {err:e}");
    }
}

#[test]
fn conv2d_gradients() {
    run_cases("conv2d", 10, |rng| {
        let c = rng.random_range(1..3);
        let o = rng.random_range(1..3);
        let k = [1, 3][rng.random_range(0..2)];
        let pad = rng.random_range(0..=k / 2);
        let x = random(rng, &[1, c, 4, 5]);
        let w = random(rng, &[o, c, k, k]);
        let b = random(rng, &[o]);
        let build: Box<Build> = Box::new(move |g, v| g.conv2d(v[0], v[1], Some(v[2]), pad).unwrap());
        (build, vec![x, w, b])
    });
}

#[test]
fn shift2d_gradients() {
    run_cases("shift2d", 10, |rng| {
        let dy = rng.random_range(-2i32..=2) as isize;
        let dx = rng.random_range(-2i32..=2) as isize;
        let x = random(rng, &[1, 2, 4, 4]);
        let build: Box<Build> = Box::new(move |g, v| g.shift2d(v[0], dy, dx).unwrap());
        (build, vec![x])
    });
}

#[test]
fn gabor_gradients() {
    run_cases("gabor", 10, |rng| {
        let omega = rng.random_range(1.0..20.0);
        let spread = rng.random_range(0.5..10.0);
        // keep z where the envelope is not vanishingly small
        let x = random(rng, &[3, 4]).map(|z| z * 0.3);
        let build: Box<Build> = Box::new(move |g, v| g.gabor(v[0], omega, spread).unwrap());
        (build, vec![x])
    });
}

#[test]
fn pooling_rotation_concat_linear_gradients() {
    run_cases("misc", 10, |rng| {
        let k = rng.random_range(0..4);
        let x = random(rng, &[1, 2, 4, 6]);
        let y = random(rng, &[1, 1, 4, 6]);
        let build: Box<Build> = Box::new(move |g, v| {
            let p = g.avg_pool2(v[0]).unwrap();
            let u = g.upsample2(p).unwrap();
            let a = g.leaky_relu(u, 0.1);
            let c = g.concat(&[a, v[1]]).unwrap();
            g.rot90(c, k).unwrap()
        });
        (build, vec![x, y])
    });
    run_cases("linear", 10, |rng| {
        let x = random(rng, &[5, 3]);
        let w = random(rng, &[4, 3]);
        let b = random(rng, &[4]);
        let build: Box<Build> = Box::new(|g, v| g.linear(v[0], v[1], Some(v[2])).unwrap());
        (build, vec![x, w, b])
    });
}
