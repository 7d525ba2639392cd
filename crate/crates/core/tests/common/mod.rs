#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rednet::autodiff::{Tape, Var};
use rednet::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const NEGLIGIBLE: f64 = 1e-8;

pub fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

/// Normal samples pushed at least `gap` away from zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() < gap {
            v.signum() * gap + v
        } else {
            v
        }
    })
}

/// Pairwise distinct values on a grid of spacing `spacing`, shuffled.
pub fn distinct_tensor(rng: &mut ChaCha8Rng, shape: &[usize], spacing: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * spacing).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        values.swap(i, j);
    }
    Tensor::new(shape.to_vec(), values).unwrap()
}

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn scalar_loss(
    inputs: &[Tensor<f64>],
    projection: &Option<Tensor<f64>>,
    grad: bool,
    f: &impl Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> (Tape<f64>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            t.requires_grad = grad;
            tape.leaf(t)
        })
        .collect();
    let out = f(&mut tape, &vars);
    let loss = match projection {
        Some(p) => {
            let w = tape.leaf(p.clone());
            let prod = tape.mul(out, w).unwrap();
            tape.sum(prod)
        }
        None => out,
    };
    (tape, vars, loss)
}

/// Largest relative disagreement between backward-pass gradients and central
/// differences of `sum(f(inputs) * r)` for a fixed random `r`, over every
/// input element. Pairs with `|analytic| + |numeric| < NEGLIGIBLE` are skipped.
pub fn gradcheck(rng: &mut ChaCha8Rng, inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let probe = {
        let (tape, _, out) = scalar_loss(inputs, &None, false, &f);
        tape.value(out).shape().to_vec()
    };
    let projection = if probe.iter().product::<usize>() == 1 { None } else { Some(normal_tensor(rng, &probe)) };
    let (mut tape, vars, loss) = scalar_loss(inputs, &projection, true, &f);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();

    let eval = |perturbed: &[Tensor<f64>]| {
        let (tape, _, loss) = scalar_loss(perturbed, &projection, false, &f);
        tape.value(loss).data()[0]
    };
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            let n = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, n));
        }
    }
    worst
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    if a.abs() + b.abs() < NEGLIGIBLE {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Central difference of `f` at 0, halving the step from `h0` until the
/// forward and backward one-sided differences agree to `rel` (plus `abs`).
/// Their gap bounds the error a kink of a piecewise-smooth `f` inside the
/// window adds to the central estimate. Returns the estimate and its step.
pub fn adaptive_central_difference(mut f: impl FnMut(f64) -> f64, h0: f64, min_h: f64, rel: f64, abs: f64) -> (f64, f64) {
    let centre = f(0.0);
    let mut h = h0;
    loop {
        let (plus, minus) = (f(h), f(-h));
        let central = (plus - minus) / (2.0 * h);
        let gap = (plus - 2.0 * centre + minus) / h;
        if gap.abs() <= rel * central.abs() + abs || h / 2.0 < min_h {
            return (central, h);
        }
        h /= 2.0;
    }
}
