//! Perturbation saliency baselines.
//!
//! Every method here only calls [`Policy::predict`]; none of them builds a
//! gradient tape.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::error::{dim_err, Error, Result};
use crate::numeric::{io, Tensor};
use crate::worlds::{record_rng, Policy, ReferenceValue};

/// Perturbed states are pushed through the policy in batches of this size.
const EVAL_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiseParams {
    pub n_masks: usize,
    /// Side of the coarse keep/drop grid.
    pub cell_grid: usize,
    pub p_keep: f32,
    pub seed: u64,
}

impl Default for RiseParams {
    fn default() -> Self {
        Self {
            n_masks: 2000,
            cell_grid: 7,
            p_keep: 0.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlurParams {
    pub stride: usize,
    pub sigma: f32,
}

impl Default for BlurParams {
    fn default() -> Self {
        Self { stride: 2, sigma: 3.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Baseline {
    Rise(RiseParams),
    Blur(BlurParams),
    Occlusion { patch: usize },
    NormalizedDelta { patch: usize },
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Rise(_) => "rise",
            Baseline::Blur(_) => "blur",
            Baseline::Occlusion { .. } => "occlusion",
            Baseline::NormalizedDelta { .. } => "normalized_delta",
        }
    }

    /// All methods with default parameters.
    pub fn all_default() -> Vec<Baseline> {
        vec![
            Baseline::Rise(RiseParams::default()),
            Baseline::Blur(BlurParams::default()),
            Baseline::Occlusion { patch: 5 },
            Baseline::NormalizedDelta { patch: 5 },
        ]
    }

    /// Parses `rise`, `blur`, `occlusion` or `normalized_delta` with default parameters.
    pub fn parse(name: &str) -> Result<Self> {
        Baseline::all_default()
            .into_iter()
            .find(|b| b.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown baseline {name:?}")))
    }

    pub fn params(&self) -> BTreeMap<&'static str, f64> {
        let mut m = BTreeMap::new();
        match *self {
            Baseline::Rise(p) => {
                m.insert("n_masks", p.n_masks as f64);
                m.insert("cell_grid", p.cell_grid as f64);
                m.insert("p_keep", p.p_keep as f64);
                m.insert("seed", p.seed as f64);
            }
            Baseline::Blur(p) => {
                m.insert("stride", p.stride as f64);
                m.insert("sigma", p.sigma as f64);
            }
            Baseline::Occlusion { patch } | Baseline::NormalizedDelta { patch } => {
                m.insert("patch", patch as f64);
            }
        }
        m
    }

    pub fn run(&self, policy: &dyn Policy, state: &Tensor, action: usize, reference: &ReferenceValue) -> Result<SaliencyMap> {
        match *self {
            Baseline::Rise(p) => rise_saliency(policy, state, action, &p, reference),
            Baseline::Blur(p) => blur_saliency(policy, state, action, &p),
            Baseline::Occlusion { patch } => occlusion_saliency(policy, state, action, patch, reference),
            Baseline::NormalizedDelta { patch } => normalized_delta_saliency(policy, state, action, patch, reference),
        }
    }
}

/// Nonnegative `[H,W]` importance map, scaled so its maximum is 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub values: Tensor,
    pub method: Baseline,
    pub action: usize,
    /// Maximum before normalization; 0 for an all-zero map.
    pub scale: f32,
}

impl SaliencyMap {
    fn normalized(raw: Vec<f64>, h: usize, w: usize, method: Baseline, action: usize) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("{} saliency is not finite", method.name())));
        }
        let max = raw.iter().copied().fold(0.0f64, f64::max);
        let values = raw
            .iter()
            .map(|&v| if max > 0.0 { (v.max(0.0) / max) as f32 } else { 0.0 })
            .collect();
        Ok(Self {
            values: Tensor::new(&[h, w], values)?,
            method,
            action,
            scale: max as f32,
        })
    }

    /// Writes the map as a tensor file plus a `.json` sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::save_tensor(path, &self.values)?;
        let sidecar = json!({
            "method": self.method.name(),
            "params": self.method.params(),
            "action": self.action,
            "scale": self.scale,
        });
        std::fs::write(path.with_extension("json"), format!("{sidecar}\n"))?;
        Ok(())
    }
}

fn spatial(policy: &dyn Policy, state: &Tensor, action: usize) -> Result<(usize, usize, usize)> {
    let shape = state.shape();
    if shape.len() != 3 || shape != policy.state_shape() {
        return Err(dim_err(format!("state {shape:?} does not match policy {:?}", policy.state_shape())));
    }
    if action >= policy.num_actions() {
        return Err(dim_err(format!("action {action} out of range")));
    }
    Ok((shape[0], shape[1], shape[2]))
}

/// Full distributions for many states, evaluated in parallel batches; order preserved.
fn predict_all(policy: &dyn Policy, states: &[Vec<f32>], shape: &[usize]) -> Result<Vec<Vec<f32>>> {
    let k = policy.num_actions();
    let chunks: Vec<Vec<Vec<f32>>> = states
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut s = vec![chunk.len()];
            s.extend_from_slice(shape);
            let data = chunk.concat();
            let p = policy.predict(&Tensor::new(&s, data)?)?;
            Ok(p.data().chunks(k).map(|c| c.to_vec()).collect())
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

/// `s + m * (r - s)` per pixel, `m` broadcast over channels: `m = 1` replaces a pixel.
fn blend_toward(state: &Tensor, target: &[f32], m: &[f32]) -> Vec<f32> {
    let plane = m.len();
    state
        .data()
        .iter()
        .zip(target)
        .enumerate()
        .map(|(i, (&s, &t))| s + m[i % plane] * (t - s))
        .collect()
}

/// Bilinear upsampling of a `(g+1) x (g+1)` grid with cell size `(ch, cw)`,
/// cropped to `h x w` at offset `(dy, dx)`.
fn upsample_grid(grid: &[f32], g: usize, ch: usize, cw: usize, dy: usize, dx: usize, h: usize, w: usize) -> Vec<f32> {
    let side = g + 1;
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = (y + dy) as f32 / ch as f32;
        let y0 = (fy.floor() as usize).min(side - 1);
        let y1 = (y0 + 1).min(side - 1);
        let ty = fy - y0 as f32;
        for x in 0..w {
            let fx = (x + dx) as f32 / cw as f32;
            let x0 = (fx.floor() as usize).min(side - 1);
            let x1 = (x0 + 1).min(side - 1);
            let tx = fx - x0 as f32;
            let top = grid[y0 * side + x0] * (1.0 - tx) + grid[y0 * side + x1] * tx;
            let bottom = grid[y1 * side + x0] * (1.0 - tx) + grid[y1 * side + x1] * tx;
            out.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
        }
    }
    out
}

/// One random RISE mask; mask `i` depends only on `(seed, i)`.
pub fn rise_mask(params: &RiseParams, index: usize, h: usize, w: usize) -> Vec<f32> {
    let g = params.cell_grid;
    let (ch, cw) = (h.div_ceil(g), w.div_ceil(g));
    let mut rng = record_rng(params.seed, index as u64);
    let grid: Vec<f32> = (0..(g + 1) * (g + 1))
        .map(|_| if rng.gen::<f32>() < params.p_keep { 1.0 } else { 0.0 })
        .collect();
    let dy = rng.gen_range(0..ch);
    let dx = rng.gen_range(0..cw);
    upsample_grid(&grid, g, ch, cw, dy, dx, h, w)
}

/// Randomized input sampling: the saliency of a pixel is the expected
/// probability of `action` over random masks that keep it.
pub fn rise_saliency(
    policy: &dyn Policy,
    state: &Tensor,
    action: usize,
    params: &RiseParams,
    reference: &ReferenceValue,
) -> Result<SaliencyMap> {
    let (_, h, w) = spatial(policy, state, action)?;
    if params.n_masks == 0 {
        return Err(Error::Usage("RISE needs at least one mask".into()));
    }
    if params.cell_grid == 0 || !(params.p_keep > 0.0 && params.p_keep <= 1.0) {
        return Err(Error::Config("RISE needs cell_grid >= 1 and p_keep in (0,1]".into()));
    }
    let r = reference.image(state.shape())?;
    let idx: Vec<usize> = (0..params.n_masks).collect();
    let partials: Vec<Vec<f64>> = idx
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let masks: Vec<Vec<f32>> = chunk.iter().map(|&i| rise_mask(params, i, h, w)).collect();
            // keeping a pixel means blending away from the reference
            let states: Vec<Vec<f32>> = masks
                .iter()
                .map(|m| {
                    let drop: Vec<f32> = m.iter().map(|v| 1.0 - v).collect();
                    blend_toward(state, r.data(), &drop)
                })
                .collect();
            let probs = predict_all_serial(policy, &states, state.shape())?;
            let mut acc = vec![0.0f64; h * w];
            for (m, p) in masks.iter().zip(&probs) {
                let pa = p[action] as f64;
                for (a, &v) in acc.iter_mut().zip(m) {
                    *a += pa * v as f64;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let norm = params.n_masks as f64 * params.p_keep as f64;
    let mut total = vec![0.0f64; h * w];
    for part in &partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    for t in &mut total {
        *t /= norm;
    }
    SaliencyMap::normalized(total, h, w, Baseline::Rise(*params), action)
}

fn predict_all_serial(policy: &dyn Policy, states: &[Vec<f32>], shape: &[usize]) -> Result<Vec<Vec<f32>>> {
    let k = policy.num_actions();
    let mut s = vec![states.len()];
    s.extend_from_slice(shape);
    let p = policy.predict(&Tensor::new(&s, states.concat())?)?;
    Ok(p.data().chunks(k).map(|c| c.to_vec()).collect())
}

/// Normalized 1-D Gaussian taps, truncated at `3 * sigma`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f64> {
    let radius = (3.0 * sigma as f64).ceil() as i64;
    let s2 = 2.0 * (sigma as f64).powi(2);
    let taps: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / s2).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur of every channel with replicated borders.
pub fn gaussian_blur(image: &Tensor, sigma: f32) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 {
        return Err(dim_err(format!("blur expects [C,H,W], got {s:?}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Config("blur sigma must be positive".into()));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut out = Vec::with_capacity(image.numel());
    for ch in 0..c {
        let plane = &image.data()[ch * h * w..(ch + 1) * h * w];
        let mut tmp = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * plane[y * w + clamp(x as i64 + i as i64 - r, w)] as f64)
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(i, t)| t * tmp[clamp(y as i64 + i as i64 - r, h) * w + x])
                    .sum();
                out.push(v as f32);
            }
        }
    }
    Tensor::new(s, out)
}

/// Grid positions `0, stride, 2*stride, ...` below `n`.
fn grid_points(n: usize, stride: usize) -> Vec<usize> {
    (0..n).step_by(stride).collect()
}

/// Bilinear interpolation of values on grid points over every pixel; pixels
/// past the last grid point take its value.
fn spread(values: &[f64], ys: &[usize], xs: &[usize], h: usize, w: usize) -> Vec<f64> {
    let locate = |pts: &[usize], v: usize| -> (usize, usize, f64) {
        let i = pts.partition_point(|&p| p <= v) - 1;
        if i + 1 >= pts.len() {
            (i, i, 0.0)
        } else {
            (i, i + 1, (v - pts[i]) as f64 / (pts[i + 1] - pts[i]) as f64)
        }
    };
    let gw = xs.len();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (y0, y1, ty) = locate(ys, y);
        for x in 0..w {
            let (x0, x1, tx) = locate(xs, x);
            let top = values[y0 * gw + x0] * (1.0 - tx) + values[y0 * gw + x1] * tx;
            let bottom = values[y1 * gw + x0] * (1.0 - tx) + values[y1 * gw + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Blurs a Gaussian neighbourhood around each grid point and records how much
/// the probability of `action` moves.
pub fn blur_saliency(policy: &dyn Policy, state: &Tensor, action: usize, params: &BlurParams) -> Result<SaliencyMap> {
    let (_, h, w) = spatial(policy, state, action)?;
    if params.stride == 0 {
        return Err(Error::Usage("blur stride must be at least 1".into()));
    }
    let blurred = gaussian_blur(state, params.sigma)?;
    let base = policy.probs(state)?[action] as f64;
    let ys = grid_points(h, params.stride);
    let xs = grid_points(w, params.stride);
    let s2 = 2.0 * params.sigma * params.sigma;
    let states: Vec<Vec<f32>> = ys
        .iter()
        .flat_map(|&cy| xs.iter().map(move |&cx| (cy, cx)))
        .map(|(cy, cx)| {
            let blob: Vec<f32> = (0..h * w)
                .map(|p| {
                    let (dy, dx) = ((p / w) as f32 - cy as f32, (p % w) as f32 - cx as f32);
                    (-(dy * dy + dx * dx) / s2).exp()
                })
                .collect();
            blend_toward(state, blurred.data(), &blob)
        })
        .collect();
    let probs = predict_all(policy, &states, state.shape())?;
    let values: Vec<f64> = probs.iter().map(|p| (base - p[action] as f64).abs()).collect();
    let map = spread(&values, &ys, &xs, h, w);
    SaliencyMap::normalized(map, h, w, Baseline::Blur(*params), action)
}

/// Every `patch x patch` window position, stride 1, with its occluded state.
fn occluded_states(state: &Tensor, patch: usize, r: &Tensor) -> Vec<((usize, usize), Vec<f32>)> {
    let (h, w) = (state.shape()[1], state.shape()[2]);
    let mut out = Vec::with_capacity((h - patch + 1) * (w - patch + 1));
    for top in 0..=h - patch {
        for left in 0..=w - patch {
            let m: Vec<f32> = (0..h * w)
                .map(|p| {
                    let (y, x) = (p / w, p % w);
                    if y >= top && y < top + patch && x >= left && x < left + patch {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            out.push(((top, left), blend_toward(state, r.data(), &m)));
        }
    }
    out
}

/// Averages each window's score over the pixels it covers.
fn accumulate_windows(scores: &[((usize, usize), f64)], patch: usize, h: usize, w: usize) -> Vec<f64> {
    let mut sum = vec![0.0f64; h * w];
    let mut count = vec![0u32; h * w];
    for &((top, left), v) in scores {
        for y in top..top + patch {
            for x in left..left + patch {
                sum[y * w + x] += v;
                count[y * w + x] += 1;
            }
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect()
}

fn occlusion_scores(
    policy: &dyn Policy,
    state: &Tensor,
    action: usize,
    patch: usize,
    reference: &ReferenceValue,
    score: impl Fn(&[f32], &[f32]) -> f64,
) -> Result<(Vec<f64>, usize, usize)> {
    let (_, h, w) = spatial(policy, state, action)?;
    if patch == 0 || patch > h.min(w) {
        return Err(Error::Usage(format!("patch {patch} must lie in 1..={}", h.min(w))));
    }
    let r = reference.image(state.shape())?;
    let base = policy.probs(state)?;
    let windows = occluded_states(state, patch, &r);
    let states: Vec<Vec<f32>> = windows.iter().map(|(_, s)| s.clone()).collect();
    let probs = predict_all(policy, &states, state.shape())?;
    let scores: Vec<((usize, usize), f64)> = windows.iter().zip(&probs).map(|((pos, _), p)| (*pos, score(&base, p))).collect();
    Ok((accumulate_windows(&scores, patch, h, w), h, w))
}

/// Constant-value occlusion: `max(0, p_a(s) - p_a(occluded))`, averaged over
/// the windows covering each pixel.
pub fn occlusion_saliency(
    policy: &dyn Policy,
    state: &Tensor,
    action: usize,
    patch: usize,
    reference: &ReferenceValue,
) -> Result<SaliencyMap> {
    let (map, h, w) = occlusion_scores(policy, state, action, patch, reference, |base, p| {
        (base[action] as f64 - p[action] as f64).max(0.0)
    })?;
    SaliencyMap::normalized(map, h, w, Baseline::Occlusion { patch }, action)
}

/// Total variation distance between the non-target parts of two
/// distributions, each renormalized to sum to one.
pub fn non_target_tvd(before: &[f32], after: &[f32], action: usize) -> f64 {
    let renorm = |p: &[f32]| -> Vec<f64> {
        let rest: Vec<f64> = p.iter().enumerate().filter(|(k, _)| *k != action).map(|(_, &v)| v as f64).collect();
        let z: f64 = rest.iter().sum();
        if z > 0.0 {
            rest.iter().map(|v| v / z).collect()
        } else {
            vec![1.0 / rest.len() as f64; rest.len()]
        }
    };
    let (a, b) = (renorm(before), renorm(after));
    0.5 * a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Occlusion delta shrunk by how much the occlusion reshuffles the other actions.
pub fn normalized_delta_saliency(
    policy: &dyn Policy,
    state: &Tensor,
    action: usize,
    patch: usize,
    reference: &ReferenceValue,
) -> Result<SaliencyMap> {
    let (map, h, w) = occlusion_scores(policy, state, action, patch, reference, |base, p| {
        let delta = (base[action] as f64 - p[action] as f64).max(0.0);
        delta / (1.0 + non_target_tvd(base, p, action))
    })?;
    SaliencyMap::normalized(map, h, w, Baseline::NormalizedDelta { patch }, action)
}
