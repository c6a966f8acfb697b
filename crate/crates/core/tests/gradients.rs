//! Analytic gradients of every differentiable tape op against central
//! differences (h = 1e-3) of independent f64 reference implementations.

use masklab::numeric::{Reduction, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f32 = 1e-3;
const TOL: f64 = 1e-3;

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;
type Oracle = dyn Fn(&[Vec<f64>]) -> Vec<f64>;

/// Tape gradients of `sum(w * f(inputs))` with fixed random weights, the f32
/// forward values, and the weights.
fn analytic(build: &Build, inputs: &[Tensor], rng: &mut ChaCha8Rng) -> (Vec<Vec<f32>>, Vec<f32>, Vec<f64>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = build(&mut tape, &vars);
    let w: Vec<f64> = (0..tape.value(out).len())
        .map(|_| (rng.gen_range(0.5..1.5) * if rng.gen() { 1.0 } else { -1.0 }) as f32 as f64)
        .collect();
    let wt = Tensor::new(tape.shape(out), w.iter().map(|&v| v as f32).collect()).unwrap();
    let wv = tape.constant(&wt);
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();
    let g = vars.iter().map(|&v| grads.get(v).unwrap().to_vec()).collect();
    (g, tape.value(out).to_vec(), w)
}

/// Worst relative gap between tape gradients and central differences of
/// the f64 reference `oracle`.
fn max_rel_err(build: &Build, oracle: &Oracle, inputs: Vec<Tensor>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (grads, forward, w) = analytic(build, &inputs, &mut rng);
    let x: Vec<Vec<f64>> = inputs.iter().map(|t| t.data().iter().map(|&v| v as f64).collect()).collect();
    let reference = oracle(&x);
    assert_eq!(reference.len(), forward.len());
    for (r, f) in reference.iter().zip(&forward) {
        assert!((r - *f as f64).abs() <= 1e-5 * (1.0 + r.abs()), "forward {f} vs reference {r}");
    }
    let objective = |x: &[Vec<f64>]| -> f64 { oracle(x).iter().zip(&w).map(|(o, w)| o * w).sum() };
    let h = H as f64;
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        for j in 0..x[i].len() {
            let mut probe = x.clone();
            probe[i][j] = x[i][j] + h;
            let up = objective(&probe);
            probe[i][j] = x[i][j] - h;
            let down = objective(&probe);
            let numeric = (up - down) / (2.0 * h);
            let a = grads[i][j] as f64;
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
    }
    worst
}

fn map(f: impl Fn(f64) -> f64 + 'static) -> Box<Oracle> {
    Box::new(move |x| x[0].iter().map(|&v| f(v)).collect())
}

fn zip(f: impl Fn(f64, f64) -> f64 + 'static) -> Box<Oracle> {
    Box::new(move |x| x[0].iter().zip(&x[1]).map(|(&a, &b)| f(a, b)).collect())
}

fn softmax_rows(x: &[f64], width: usize) -> Vec<f64> {
    x.chunks(width)
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(move |v| v / z)
        })
        .collect()
}

fn conv_ref(x: &[f64], w: &[f64], b: &[f64], xs: [usize; 4], ws: [usize; 4], stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = xs;
    let [o, _, kh, kw] = ws;
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::with_capacity(n * o * oh * ow);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let sy = (y * stride + ky) as isize - pad as isize;
                                let sx = (xx * stride + kx) as isize - pad as isize;
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                    acc += w[((oi * c + ci) * kh + ky) * kw + kx]
                                        * x[((ni * c + ci) * h + sy as usize) * wd + sx as usize];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn reduce_ref(x: &[f64], shape: &[usize], kind: Reduction, axis: Option<usize>) -> Vec<f64> {
    let (outer, len, inner) = match axis {
        None => (1, x.len(), 1),
        Some(a) => (shape[..a].iter().product(), shape[a], shape[a + 1..].iter().product()),
    };
    let mut out = Vec::with_capacity(outer * inner);
    for o in 0..outer {
        for i in 0..inner {
            let items = (0..len).map(|l| x[(o * len + l) * inner + i]);
            out.push(match kind {
                Reduction::Sum => items.sum(),
                Reduction::Mean => items.sum::<f64>() / len as f64,
                Reduction::Max => items.fold(f64::MIN, f64::max),
            });
        }
    }
    out
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Values at least `gap` away from zero.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n)
            .map(|_| {
                let m = rng.gen_range(gap..1.5);
                if rng.gen() {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

/// Distinct values spaced well beyond the probe step, shuffled.
fn spaced(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.05 + rng.gen_range(-0.01..0.01)).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).unwrap()
}

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.gen_range(1..4);
    let mut shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..5)).collect();
    while shape.iter().product::<usize>() > 64 {
        shape[0] = 1.max(shape[0] - 1);
    }
    shape
}

macro_rules! grad_props {
    ($($name:ident => |$rng:ident| $body:block;)*) => {
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(100))]
            $(
                #[test]
                fn $name(seed in any::<u64>()) {
                    let mut $rng = ChaCha8Rng::seed_from_u64(seed);
                    let (build, oracle, inputs): (Box<Build>, Box<Oracle>, Vec<Tensor>) = $body;
                    let err = max_rel_err(&*build, &*oracle, inputs, seed);
                    prop_assert!(err < TOL, "relative error {err}");
                }
            )*
        }
    };
}

grad_props! {
    add => |rng| {
        let s = small_shape(&mut rng);
        (Box::new(|t, v| t.add(v[0], v[1]).unwrap()), zip(|a, b| a + b), vec![uniform(&mut rng, &s, -1.0, 1.0), uniform(&mut rng, &s, -1.0, 1.0)])
    };
    sub => |rng| {
        let s = small_shape(&mut rng);
        (Box::new(|t, v| t.sub(v[0], v[1]).unwrap()), zip(|a, b| a - b), vec![uniform(&mut rng, &s, -1.0, 1.0), uniform(&mut rng, &s, -1.0, 1.0)])
    };
    mul => |rng| {
        let s = small_shape(&mut rng);
        (Box::new(|t, v| t.mul(v[0], v[1]).unwrap()), zip(|a, b| a * b), vec![uniform(&mut rng, &s, -1.0, 1.0), uniform(&mut rng, &s, -1.0, 1.0)])
    };
    scalar_ops => |rng| {
        let s = small_shape(&mut rng);
        let (a, b, c): (f32, f32, f32) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        (
            Box::new(move |t, v| {
                let x = t.add_scalar(v[0], a);
                let x = t.mul_scalar(x, b);
                t.rsub_scalar(c, x)
            }),
            map(move |x| c as f64 - b as f64 * (x + a as f64)),
            vec![uniform(&mut rng, &s, -1.0, 1.0)],
        )
    };
    sigmoid => |rng| {
        let s = small_shape(&mut rng);
        (Box::new(|t, v| t.sigmoid(v[0])), map(|x| 1.0 / (1.0 + (-x).exp())), vec![uniform(&mut rng, &s, -4.0, 4.0)])
    };
    relu => |rng| {
        let s = small_shape(&mut rng);
        (Box::new(|t, v| t.relu(v[0])), map(|x| x.max(0.0)), vec![off_zero(&mut rng, &s, 0.01)])
    };
    abs => |rng| {
        let s = small_shape(&mut rng);
        (Box::new(|t, v| t.abs(v[0])), map(f64::abs), vec![off_zero(&mut rng, &s, 0.01)])
    };
    log => |rng| {
        let s = small_shape(&mut rng);
        (Box::new(|t, v| t.log(v[0]).unwrap()), map(f64::ln), vec![uniform(&mut rng, &s, 0.2, 2.0)])
    };
    softmax => |rng| {
        let s = small_shape(&mut rng);
        let width = *s.last().unwrap();
        (Box::new(|t, v| t.softmax(v[0]).unwrap()), Box::new(move |x| softmax_rows(&x[0], width)), vec![uniform(&mut rng, &s, -2.0, 2.0)])
    };
    reshape => |rng| {
        let s = small_shape(&mut rng);
        let n: usize = s.iter().product();
        (Box::new(move |t, v| t.reshape(v[0], &[n]).unwrap()), map(|x| x), vec![uniform(&mut rng, &s, -1.0, 1.0)])
    };
    conv2d => |rng| {
        let stride = rng.gen_range(1..3);
        let padding = rng.gen_range(0..2);
        (
            Box::new(move |t, v| t.conv2d(v[0], v[1], Some(v[2]), stride, padding).unwrap()),
            Box::new(move |x| conv_ref(&x[0], &x[1], &x[2], [1, 2, 5, 5], [2, 2, 3, 3], stride, padding)),
            vec![uniform(&mut rng, &[1, 2, 5, 5], -1.0, 1.0), uniform(&mut rng, &[2, 2, 3, 3], -1.0, 1.0), uniform(&mut rng, &[2], -1.0, 1.0)],
        )
    };
    linear => |rng| {
        let (n, d, m) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..5));
        (
            Box::new(|t, v| t.linear(v[0], v[1], Some(v[2])).unwrap()),
            Box::new(move |x| {
                let mut out = Vec::new();
                for i in 0..n {
                    for o in 0..m {
                        out.push(x[2][o] + (0..d).map(|k| x[0][i * d + k] * x[1][o * d + k]).sum::<f64>());
                    }
                }
                out
            }),
            vec![uniform(&mut rng, &[n, d], -1.0, 1.0), uniform(&mut rng, &[m, d], -1.0, 1.0), uniform(&mut rng, &[m], -1.0, 1.0)],
        )
    };
    reductions => |rng| {
        let s = small_shape(&mut rng);
        let kind = [Reduction::Sum, Reduction::Mean, Reduction::Max][rng.gen_range(0..3)];
        let axis = if rng.gen() { Some(rng.gen_range(0..s.len())) } else { None };
        let shape = s.clone();
        (
            Box::new(move |t, v| t.reduce(v[0], kind, axis).unwrap()),
            Box::new(move |x| reduce_ref(&x[0], &shape, kind, axis)),
            vec![spaced(&mut rng, &s)],
        )
    };
    narrow_and_select => |rng| {
        let (n, k, w) = (rng.gen_range(1..4), rng.gen_range(2..5), rng.gen_range(2..5));
        let picks: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let start = rng.gen_range(0..w - 1);
        let p2 = picks.clone();
        (
            Box::new(move |t, v| {
                let s = t.select(v[0], &picks).unwrap();
                t.narrow(s, 1, start, 1).unwrap()
            }),
            Box::new(move |x| p2.iter().enumerate().map(|(i, &p)| x[0][(i * k + p) * w + start]).collect()),
            vec![uniform(&mut rng, &[n, k, w], -1.0, 1.0)],
        )
    };
}
