//! Central finite-difference gradient checks for the autodiff primitives.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relunet::autodiff::{Graph, Mode, RunningStats, Tensor, Var};
use relunet::signal::{Stft, StftConfig};
use relunet::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: u64 = 20;
/// Absolute floor in the relative-error denominator, so entries whose true
/// gradient is numerically zero are compared absolutely.
pub const FLOOR: f64 = 1e-6;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;

pub struct Case {
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn dims(rng: &mut ChaCha8Rng, rank: usize, max: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=max)).collect()
}

/// Loss is a fixed random projection of the primitive's output so every
/// output entry contributes a distinct weight.
fn loss_of(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = uniform(g.shape(out), &mut rng, -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    g.sum(p)
}

fn evaluate(case: &Case, inputs: &[Tensor], seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    let loss = loss_of(&mut g, out, seed).unwrap();
    g.data(loss)[0]
}

/// Maximum relative error over every input entry of one instance.
pub fn max_relative_error(case: &Case, seed: u64) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    let loss = loss_of(&mut g, out, seed).unwrap();
    g.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();

    let mut worst: f64 = 0.0;
    let mut probe = case.inputs.clone();
    for (i, grads) in analytic.iter().enumerate() {
        for (j, &a) in grads.iter().enumerate() {
            let orig = probe[i].data()[j];
            probe[i].data_mut()[j] = orig + STEP;
            let up = evaluate(case, &probe, seed);
            probe[i].data_mut()[j] = orig - STEP;
            let down = evaluate(case, &probe, seed);
            probe[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

fn small_stft() -> Arc<Stft> {
    Arc::new(
        Stft::new(StftConfig {
            fft_length: 16,
            hop_length: 4,
            window_length: 16,
            ..Default::default()
        })
        .unwrap(),
    )
}

/// One random instance of the named primitive.
pub fn instance(name: &str, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    macro_rules! case {
        ($inputs:expr, $build:expr) => {
            Case {
                inputs: $inputs,
                build: Box::new($build),
            }
        };
    }
    match name {
        "add" | "sub" | "mul" => {
            let s = dims(r, 2, 4);
            let inputs = vec![uniform(&s, r, -2.0, 2.0), uniform(&s, r, -2.0, 2.0)];
            match name {
                "add" => case!(inputs, |g, v| g.add(v[0], v[1])),
                "sub" => case!(inputs, |g, v| g.sub(v[0], v[1])),
                _ => case!(inputs, |g, v| g.mul(v[0], v[1])),
            }
        }
        "scale" => {
            let k = r.random_range(-3.0..3.0);
            case!(vec![uniform(&dims(r, 3, 3), r, -2.0, 2.0)], move |g, v| g
                .scale(v[0], k))
        }
        "add_scalar" => {
            let k = r.random_range(-3.0..3.0);
            case!(vec![uniform(&dims(r, 2, 4), r, -2.0, 2.0)], move |g, v| g
                .add_scalar(v[0], k))
        }
        "abs" => case!(vec![away_from_zero(&dims(r, 2, 4), r)], |g, v| g.abs(v[0])),
        "sqrt" => case!(vec![uniform(&dims(r, 2, 4), r, 0.2, 3.0)], |g, v| g
            .sqrt(v[0])),
        "square" => case!(vec![uniform(&dims(r, 2, 4), r, -2.0, 2.0)], |g, v| g
            .square(v[0])),
        "selu" => case!(vec![away_from_zero(&dims(r, 2, 4), r)], |g, v| g.selu(v[0])),
        "leaky_relu" => case!(vec![away_from_zero(&dims(r, 2, 4), r)], |g, v| g
            .leaky_relu(v[0], 0.2)),
        "sum" => case!(vec![uniform(&dims(r, 3, 3), r, -2.0, 2.0)], |g, v| {
            let s = g.sum(v[0])?;
            g.square(s)
        }),
        "mean" => case!(vec![uniform(&dims(r, 3, 3), r, -2.0, 2.0)], |g, v| {
            let s = g.mean(v[0])?;
            g.square(s)
        }),
        "l2_norm" => case!(vec![uniform(&dims(r, 2, 4), r, -2.0, 2.0)], |g, v| g
            .l2_norm(v[0])),
        "reshape" => {
            let s = dims(r, 3, 3);
            let flat = s.iter().product::<usize>();
            case!(vec![uniform(&s, r, -2.0, 2.0)], move |g, v| {
                let y = g.reshape(v[0], [flat])?;
                g.square(y)
            })
        }
        "concat" => {
            let axis = r.random_range(0..3);
            let mut a = dims(r, 3, 3);
            let mut b = a.clone();
            b[axis] = r.random_range(1..=3);
            a[axis] = r.random_range(1..=3);
            let inputs = vec![uniform(&a, r, -2.0, 2.0), uniform(&b, r, -2.0, 2.0)];
            case!(inputs, move |g, v| {
                let c = g.concat(&[v[0], v[1], v[0]], axis)?;
                g.square(c)
            })
        }
        "narrow" => {
            let axis = r.random_range(0..3);
            let mut s = dims(r, 3, 3);
            s[axis] = r.random_range(2..=5);
            let start = r.random_range(0..s[axis] - 1);
            let len = r.random_range(1..=s[axis] - start);
            case!(vec![uniform(&s, r, -2.0, 2.0)], move |g, v| g
                .narrow(v[0], axis, start, len))
        }
        "transpose" => case!(vec![uniform(&dims(r, 2, 4), r, -2.0, 2.0)], |g, v| {
            let t = g.transpose(v[0])?;
            g.square(t)
        }),
        "softmax" => {
            let axis = r.random_range(0..2);
            case!(vec![uniform(&dims(r, 2, 4), r, -3.0, 3.0)], move |g, v| g
                .softmax(v[0], axis))
        }
        "matmul" => {
            let (m, k, n) = (
                r.random_range(1..=4),
                r.random_range(1..=4),
                r.random_range(1..=4),
            );
            case!(
                vec![
                    uniform(&[m, k], r, -2.0, 2.0),
                    uniform(&[k, n], r, -2.0, 2.0)
                ],
                |g, v| g.matmul(v[0], v[1])
            )
        }
        "conv2d" | "conv_transpose2d" => {
            let b = r.random_range(1..=2);
            let (ci, co) = (r.random_range(1..=3), r.random_range(1..=3));
            let (kh, kw) = (r.random_range(1..=4), r.random_range(1..=3));
            let stride = (r.random_range(1..=2), r.random_range(1..=2));
            let padding = (r.random_range(0..kh), r.random_range(0..kw));
            let h = r.random_range(kh.max(2)..=6);
            let w = r.random_range(kw.max(2)..=6);
            if name == "conv2d" {
                let inputs = vec![
                    uniform(&[b, ci, h, w], r, -1.0, 1.0),
                    uniform(&[co, ci, kh, kw], r, -1.0, 1.0),
                    uniform(&[co], r, -1.0, 1.0),
                ];
                case!(inputs, move |g, v| g
                    .conv2d(v[0], v[1], v[2], stride, padding))
            } else {
                let op = (r.random_range(0..stride.0), r.random_range(0..stride.1));
                let inputs = vec![
                    uniform(&[b, ci, h, w], r, -1.0, 1.0),
                    uniform(&[ci, co, kh, kw], r, -1.0, 1.0),
                    uniform(&[co], r, -1.0, 1.0),
                ];
                case!(inputs, move |g, v| g
                    .conv_transpose2d(v[0], v[1], v[2], stride, padding, op))
            }
        }
        "batch_norm2d_train" | "batch_norm2d_eval" => {
            let c = r.random_range(1..=3);
            let s = [
                r.random_range(1..=3),
                c,
                r.random_range(1..=3),
                r.random_range(2..=3),
            ];
            let inputs = vec![
                uniform(&s, r, -2.0, 2.0),
                uniform(&[c], r, 0.5, 1.5),
                uniform(&[c], r, -1.0, 1.0),
            ];
            let mode = if name.ends_with("train") {
                Mode::Train
            } else {
                Mode::Eval
            };
            let mut stats = RunningStats::new(c);
            stats
                .mean
                .iter_mut()
                .for_each(|m| *m = r.random_range(-0.5..0.5));
            stats
                .var
                .iter_mut()
                .for_each(|v| *v = r.random_range(0.5..2.0));
            case!(inputs, move |g, v| {
                let mut st = stats.clone();
                g.batch_norm2d(v[0], v[1], v[2], &mut st, mode)
            })
        }
        "stft" => {
            let plan = small_stft();
            let n = r.random_range(16..=40);
            case!(
                vec![uniform(&[r.random_range(1..=2), n], r, -1.0, 1.0)],
                move |g, v| g.stft(v[0], &plan)
            )
        }
        "istft" => {
            let plan = small_stft();
            let n = r.random_range(16..=40);
            let frames = (n - 16) / 4 + 1;
            let b = r.random_range(1..=2);
            case!(
                vec![uniform(&[b, 2, 8, frames], r, -1.0, 1.0)],
                move |g, v| g.istft(v[0], &plan, n)
            )
        }
        other => panic!("unknown primitive {other}"),
    }
}

pub const PRIMITIVES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "scale",
    "add_scalar",
    "abs",
    "sqrt",
    "square",
    "selu",
    "leaky_relu",
    "sum",
    "mean",
    "l2_norm",
    "reshape",
    "concat",
    "narrow",
    "transpose",
    "softmax",
    "matmul",
    "conv2d",
    "conv_transpose2d",
    "batch_norm2d_train",
    "batch_norm2d_eval",
    "stft",
    "istft",
];

/// Worst relative error of a primitive over all seeded instances.
pub fn worst_over_instances(name: &str) -> f64 {
    (0..INSTANCES)
        .map(|seed| max_relative_error(&instance(name, seed), seed))
        .fold(0.0, f64::max)
}
