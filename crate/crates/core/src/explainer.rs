//! The mask network and the algebra around its output.
//!
//! For a state `s` and expert action `a`, the explainer emits one mask per
//! action. `m_a` is the active mask, `1 - m_a` its complement, and the
//! non-target mask `n` is the pixel-wise maximum over every other action's
//! mask. Overlaying blends a state with a reference fill:
//! `overlay(s, m, r) = s * m + r * (1 - m)`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::{dim_err, Error, Result};
use crate::numeric::{io, kaiming_uniform, Bound, ParamStore, Reduction, Tape, Tensor, Var};
use crate::worlds::{Policy, ReferenceValue};

/// Shape of an explainer network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExplainerConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub actions: usize,
    pub hidden: usize,
}

impl ExplainerConfig {
    pub fn new(state_shape: [usize; 3], actions: usize) -> Self {
        Self {
            channels: state_shape[0],
            height: state_shape[1],
            width: state_shape[2],
            actions,
            hidden: 8,
        }
    }

    pub fn with_hidden(mut self, hidden: usize) -> Self {
        self.hidden = hidden;
        self
    }
}

/// Per-action masks `[K,H,W]` with entries in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSet {
    masks: Tensor,
}

impl MaskSet {
    pub fn new(masks: Tensor) -> Result<Self> {
        if masks.rank() != 3 {
            return Err(dim_err(format!("mask set must be [K,H,W], got {:?}", masks.shape())));
        }
        if masks.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("mask values must lie in [0,1]".into()));
        }
        Ok(Self { masks })
    }

    pub fn num_actions(&self) -> usize {
        self.masks.shape()[0]
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.masks.shape()[1], self.masks.shape()[2])
    }

    pub fn tensor(&self) -> &Tensor {
        &self.masks
    }

    /// Mask of one action as `[H,W]`.
    pub fn mask(&self, action: usize) -> Result<Tensor> {
        self.masks.index_first(action)
    }
}

/// Active, complement and non-target masks for one action.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskSplit {
    pub active: Tensor,
    pub complement: Tensor,
    pub non_target: Tensor,
}

pub fn split_masks(masks: &MaskSet, action: usize) -> Result<MaskSplit> {
    let k = masks.num_actions();
    if k < 2 {
        return Err(Error::Unsupported("mask split needs at least two actions".into()));
    }
    if action >= k {
        return Err(dim_err(format!("action {action} out of range for {k} masks")));
    }
    let active = masks.mask(action)?;
    let complement = Tensor::new(active.shape(), active.data().iter().map(|v| 1.0 - v).collect())?;
    let (h, w) = masks.spatial();
    let plane = h * w;
    let all = masks.tensor().data();
    let non_target = (0..plane)
        .map(|p| {
            (0..k)
                .filter(|&j| j != action)
                .map(|j| all[j * plane + p])
                .fold(f32::NEG_INFINITY, f32::max)
        })
        .collect();
    Ok(MaskSplit {
        active,
        complement,
        non_target: Tensor::new(&[h, w], non_target)?,
    })
}

/// `s * m + r * (1 - m)` for a `[C,H,W]` state and an `[H,W]` mask applied to
/// every channel.
pub fn overlay(state: &Tensor, mask: &Tensor, reference: &ReferenceValue) -> Result<Tensor> {
    let s = state.shape();
    if s.len() != 3 || mask.shape() != &s[1..] {
        return Err(dim_err(format!("overlay of state {s:?} with mask {:?}", mask.shape())));
    }
    if mask.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract("overlay mask values must lie in [0,1]".into()));
    }
    let r = reference.image(s)?;
    let plane = s[1] * s[2];
    let out = state
        .data()
        .iter()
        .zip(r.data())
        .enumerate()
        .map(|(i, (&x, &rv))| {
            let m = mask.data()[i % plane];
            x * m + rv * (1.0 - m)
        })
        .collect();
    Tensor::new(s, out)
}

/// Tape version of [`overlay`] for batches: `state`, `mask` and `reference`
/// all `[N,C,H,W]`.
pub fn overlay_on_tape(tape: &mut Tape, state: Var, mask: Var, reference: Var) -> Result<Var> {
    let diff = tape.sub(state, reference)?;
    let kept = tape.mul(mask, diff)?;
    tape.add(kept, reference)
}

/// Tape handles for the masks of one batch.
#[derive(Clone, Copy, Debug)]
pub struct SplitVars {
    /// `[N,1,H,W]`.
    pub active: Var,
    pub complement: Var,
    pub non_target: Var,
}

/// Splits `[N,K,H,W]` masks by each sample's action.
pub fn split_on_tape(tape: &mut Tape, masks: Var, actions: &[usize]) -> Result<SplitVars> {
    let shape = tape.shape(masks).to_vec();
    if shape.len() != 4 {
        return Err(dim_err(format!("masks must be [N,K,H,W], got {shape:?}")));
    }
    let (n, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if k < 2 {
        return Err(Error::Unsupported("mask split needs at least two actions".into()));
    }
    let active = tape.select(masks, actions)?;
    let active = tape.reshape(active, &[n, 1, h, w])?;
    let complement = tape.rsub_scalar(1.0, active);
    // Masks lie in (0,1); shifting the active channel by -2 keeps it out of the max.
    let plane = h * w;
    let mut penalty = vec![0.0f32; n * k * plane];
    for (i, &a) in actions.iter().enumerate() {
        penalty[(i * k + a) * plane..(i * k + a + 1) * plane].fill(-2.0);
    }
    let penalty = tape.constant(&Tensor::new(&shape, penalty)?);
    let shifted = tape.add(masks, penalty)?;
    let non_target = tape.reduce(shifted, Reduction::Max, Some(1))?;
    let non_target = tape.reshape(non_target, &[n, 1, h, w])?;
    Ok(SplitVars {
        active,
        complement,
        non_target,
    })
}

/// Policy outputs on both overlays of a batch.
#[derive(Clone, Copy, Debug)]
pub struct MaskedOutputs {
    pub split: SplitVars,
    /// `pi(s * m_a + r * (1 - m_a))`, `[N,K]`.
    pub kept: Var,
    /// `pi(s * (1 - m_a) + r * m_a)`, `[N,K]`.
    pub removed: Var,
}

/// Runs the frozen policy on both overlays; gradients flow through the policy
/// into the masks.
pub fn masked_forward(
    tape: &mut Tape,
    policy: &dyn Policy,
    states: Var,
    masks: Var,
    actions: &[usize],
    reference: Var,
) -> Result<MaskedOutputs> {
    if tape.shape(states)[1] != 1 {
        return Err(Error::Unsupported("tape overlays expect single-channel states".into()));
    }
    let split = split_on_tape(tape, masks, actions)?;
    let s_kept = overlay_on_tape(tape, states, split.active, reference)?;
    let s_removed = overlay_on_tape(tape, states, split.complement, reference)?;
    let kept = policy.forward(tape, s_kept)?;
    let removed = policy.forward(tape, s_removed)?;
    Ok(MaskedOutputs { split, kept, removed })
}

/// Fully convolutional mask network: two 3x3 conv+ReLU layers at full
/// resolution and a 1x1 head with one sigmoid channel per action.
#[derive(Clone, Debug, PartialEq)]
pub struct Explainer {
    config: ExplainerConfig,
    params: ParamStore,
}

impl Explainer {
    /// Hidden layers get seeded Kaiming-uniform weights; the head starts at
    /// zero so every initial mask is 0.5.
    pub fn init(config: ExplainerConfig, seed: u64) -> Result<Self> {
        if config.actions < 2 {
            return Err(Error::Unsupported("explainer needs at least two actions".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h) = (config.channels, config.hidden);
        let mut params = ParamStore::new();
        params.insert("conv1.weight", kaiming_uniform(&[h, c, 3, 3], c * 9, &mut rng))?;
        params.insert("conv1.bias", Tensor::zeros(&[h]))?;
        params.insert("conv2.weight", kaiming_uniform(&[h, h, 3, 3], h * 9, &mut rng))?;
        params.insert("conv2.bias", Tensor::zeros(&[h]))?;
        params.insert("head.weight", Tensor::zeros(&[config.actions, h, 1, 1]))?;
        params.insert("head.bias", Tensor::zeros(&[config.actions]))?;
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ExplainerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `[N,C,H,W]` states to `[N,K,H,W]` masks.
    pub fn forward(&self, tape: &mut Tape, p: &Bound, states: Var) -> Result<Var> {
        let s = tape.shape(states);
        let c = &self.config;
        if s.len() != 4 || s[1..] != [c.channels, c.height, c.width] {
            return Err(dim_err(format!(
                "explainer expects [N,{},{},{}], got {s:?}",
                c.channels, c.height, c.width
            )));
        }
        let h = tape.conv2d(states, p.get("conv1.weight")?, Some(p.get("conv1.bias")?), 1, 1)?;
        let h = tape.relu(h);
        let h = tape.conv2d(h, p.get("conv2.weight")?, Some(p.get("conv2.bias")?), 1, 1)?;
        let h = tape.relu(h);
        let logits = tape.conv2d(h, p.get("head.weight")?, Some(p.get("head.bias")?), 1, 0)?;
        Ok(tape.sigmoid(logits))
    }

    /// Masks for a single `[C,H,W]` state in one forward pass.
    pub fn explain(&self, state: &Tensor) -> Result<MaskSet> {
        let mut shape = vec![1];
        shape.extend_from_slice(state.shape());
        let batch = state.clone().reshape(&shape)?;
        let out = self.explain_batch(&batch)?;
        MaskSet::new(out.reshape(&[self.config.actions, self.config.height, self.config.width])?)
    }

    /// `[N,C,H,W]` to `[N,K,H,W]` without recording gradients.
    pub fn explain_batch(&self, states: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let x = tape.constant(states);
        let m = self.forward(&mut tape, &p, x)?;
        Ok(tape.tensor(m))
    }

    pub fn metadata(&self, seed: u64, epoch: usize) -> serde_json::Value {
        let c = &self.config;
        json!({
            "K": c.actions,
            "C": c.channels,
            "H": c.height,
            "W": c.width,
            "hidden": c.hidden,
            "seed": seed,
            "epoch": epoch,
        })
    }

    pub fn save(&self, path: &Path, seed: u64, epoch: usize) -> Result<()> {
        io::save_checkpoint(path, &self.params, &self.metadata(seed, epoch))
    }

    /// Loads a checkpoint, returning the model and its metadata.
    pub fn load(path: &Path) -> Result<(Self, serde_json::Value)> {
        let (params, meta) = io::load_checkpoint(path)?;
        let get = |k: &str| {
            meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("checkpoint metadata lacks {k}")))
        };
        let config = ExplainerConfig {
            channels: get("C")?,
            height: get("H")?,
            width: get("W")?,
            actions: get("K")?,
            hidden: get("hidden")?,
        };
        let template = Explainer::init(config, 0)?;
        for (name, t) in template.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                _ => return Err(Error::Format(format!("checkpoint parameter {name} missing or misshapen"))),
            }
        }
        Ok((Self { config, params }, meta))
    }
}
