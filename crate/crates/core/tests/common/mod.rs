//! Independent f64 re-implementation of the explainer objective, used as a
//! finite-difference oracle.

#![allow(dead_code)]

use std::collections::BTreeMap;

use masklab::numeric::ParamStore;
use masklab::trainer::LossWeights;
use masklab::worlds::{BeaconWorld, BEACON_GAIN, BRIGHTNESS_GATE};

/// Parameters as f64, keyed by name.
pub type Params = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

pub fn to_f64(store: &ParamStore) -> Params {
    store
        .iter()
        .map(|(n, t)| (n.to_string(), (t.shape().to_vec(), t.data().iter().map(|&v| v as f64).collect())))
        .collect()
}

/// Zero-padded same-size convolution of a `[cin,h,w]` image.
fn conv(x: &[f64], cin: usize, h: usize, w: usize, wt: &(Vec<usize>, Vec<f64>), b: &(Vec<usize>, Vec<f64>)) -> Vec<f64> {
    let (cout, ks) = (wt.0[0], wt.0[2]);
    let pad = ks as isize / 2;
    let mut out = vec![0.0; cout * h * w];
    for o in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = b.1[o];
                for i in 0..cin {
                    for ky in 0..ks {
                        for kx in 0..ks {
                            let sy = y as isize + ky as isize - pad;
                            let sx = xx as isize + kx as isize - pad;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            acc += wt.1[((o * cin + i) * ks + ky) * ks + kx] * x[(i * h + sy as usize) * w + sx as usize];
                        }
                    }
                }
                out[(o * h + y) * w + xx] = acc;
            }
        }
    }
    out
}

/// Records which side of every kink (relu, abs, max, gate, clamp) an
/// evaluation took.
pub type Branches = Vec<u8>;

fn relu(v: Vec<f64>, br: &mut Branches) -> Vec<f64> {
    v.into_iter()
        .map(|x| {
            br.push(u8::from(x > 0.0));
            x.max(0.0)
        })
        .collect()
}

fn abs(x: f64, br: &mut Branches) -> f64 {
    br.push(u8::from(x >= 0.0));
    x.abs()
}

pub fn masks(p: &Params, state: &[f64], h: usize, w: usize) -> Vec<f64> {
    masks_br(p, state, h, w, &mut Vec::new())
}

fn masks_br(p: &Params, state: &[f64], h: usize, w: usize, br: &mut Branches) -> Vec<f64> {
    let hidden = p["conv1.weight"].0[0];
    let a = relu(conv(state, 1, h, w, &p["conv1.weight"], &p["conv1.bias"]), br);
    let b = relu(conv(&a, hidden, h, w, &p["conv2.weight"], &p["conv2.bias"]), br);
    conv(&b, hidden, h, w, &p["head.weight"], &p["head.bias"])
        .into_iter()
        .map(|z| 1.0 / (1.0 + (-z).exp()))
        .collect()
}

pub fn beacon_probs(world: &BeaconWorld, img: &[f64]) -> Vec<f64> {
    beacon_probs_br(world, img, &mut Vec::new())
}

fn beacon_probs_br(world: &BeaconWorld, img: &[f64], br: &mut Branches) -> Vec<f64> {
    let w = world.width;
    let area = world.beacon_area() as f64;
    let gate = BRIGHTNESS_GATE as f64;
    let mut logits = vec![0.0];
    for z in world.zones() {
        let s: f64 = z
            .pixels(w)
            .iter()
            .map(|&p| {
                br.push(u8::from(img[p] > gate));
                (img[p] - gate).max(0.0) / (1.0 - gate)
            })
            .sum();
        logits.push(BEACON_GAIN as f64 * s / area);
    }
    let m = logits.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

fn tv(m: &[f64], h: usize, w: usize, br: &mut Branches) -> f64 {
    let mut s = 0.0;
    for y in 0..h {
        for x in 0..w {
            if y + 1 < h {
                s += abs(m[y * w + x] - m[(y + 1) * w + x], br);
            }
            if x + 1 < w {
                s += abs(m[y * w + x] - m[y * w + x + 1], br);
            }
        }
    }
    s / (h * w) as f64
}

/// Batch-mean objective with the analytic beacon policy and scalar reference `r`.
pub fn loss(p: &Params, world: &BeaconWorld, states: &[Vec<f64>], actions: &[usize], r: f64, lw: &LossWeights) -> f64 {
    loss_br(p, world, states, actions, r, lw, &mut Vec::new())
}

fn loss_br(
    p: &Params,
    world: &BeaconWorld,
    states: &[Vec<f64>],
    actions: &[usize],
    r: f64,
    lw: &LossWeights,
    br: &mut Branches,
) -> f64 {
    let (h, w, k) = (world.height, world.width, world.actions);
    let plane = h * w;
    let mut total = 0.0;
    for (s, &a) in states.iter().zip(actions) {
        let m = masks_br(p, s, h, w, br);
        let ma = &m[a * plane..(a + 1) * plane];
        let n: Vec<f64> = (0..plane)
            .map(|i| {
                let best = (0..k)
                    .filter(|&j| j != a)
                    .fold(None, |b: Option<usize>, j| match b {
                        Some(b) if m[b * plane + i] >= m[j * plane + i] => Some(b),
                        _ => Some(j),
                    })
                    .unwrap();
                br.push(best as u8);
                m[best * plane + i]
            })
            .collect();
        let kept: Vec<f64> = (0..plane).map(|i| s[i] * ma[i] + r * (1.0 - ma[i])).collect();
        let removed: Vec<f64> = (0..plane).map(|i| s[i] * (1.0 - ma[i]) + r * ma[i]).collect();
        let pk = beacon_probs_br(world, &kept, br);
        let pr = beacon_probs_br(world, &removed, br);
        br.extend(pk.iter().chain(&pr).map(|&q| u8::from(q > 1e-8)));
        let bc = -pk[a].max(1e-8).ln() / k as f64;
        let e = pr.iter().map(|q| q * q.max(1e-8).ln()).sum::<f64>() / k as f64;
        let avg = ma.iter().sum::<f64>() / plane as f64 + n.iter().sum::<f64>() / plane as f64;
        let smooth = tv(ma, h, w, br) + tv(&n, h, w, br);
        total += bc + lw.lambda_e as f64 * e + lw.lambda_avg as f64 * avg + lw.lambda_smooth as f64 * smooth;
    }
    let l2: f64 = p.values().flat_map(|(_, v)| v.iter()).map(|v| v * v).sum();
    total / states.len() as f64 + lw.lambda_l2 as f64 * l2
}

pub struct Difference {
    pub name: String,
    pub index: usize,
    pub value: f64,
    /// The two evaluations took different branches at some kink.
    pub crosses_kink: bool,
}

/// Central difference of [`loss`] for every parameter, in store order.
pub fn finite_differences(
    p: &Params,
    world: &BeaconWorld,
    states: &[Vec<f64>],
    actions: &[usize],
    r: f64,
    lw: &LossWeights,
    h: f64,
) -> Vec<Difference> {
    let mut out = Vec::new();
    let mut work = p.clone();
    for (name, (_, vals)) in p {
        for i in 0..vals.len() {
            let orig = vals[i];
            work.get_mut(name).unwrap().1[i] = orig + h;
            let (mut bu, mut bd) = (Vec::new(), Vec::new());
            let up = loss_br(&work, world, states, actions, r, lw, &mut bu);
            work.get_mut(name).unwrap().1[i] = orig - h;
            let down = loss_br(&work, world, states, actions, r, lw, &mut bd);
            work.get_mut(name).unwrap().1[i] = orig;
            out.push(Difference {
                name: name.clone(),
                index: i,
                value: (up - down) / (2.0 * h),
                crosses_kink: bu != bd,
            });
        }
    }
    out
}
