//! Frozen expert policies.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::beacon::BeaconWorld;
use crate::error::{dim_err, Error, Result};
use crate::numeric::{io, kaiming_uniform, kernels, Adam, Bound, ParamStore, Tape, Tensor, Var};

/// A frozen map from a batch of states `[N,C,H,W]` to action probabilities
/// `[N,K]`.
///
/// `predict` must not touch a [`Tape`]; `forward` records the same computation
/// on a tape with all policy weights as constants, so that gradients reach the
/// input but never the policy.
pub trait Policy: Send + Sync {
    fn num_actions(&self) -> usize;

    /// `[C,H,W]` of a single state.
    fn state_shape(&self) -> [usize; 3];

    fn predict(&self, states: &Tensor) -> Result<Tensor>;

    fn forward(&self, tape: &mut Tape, states: Var) -> Result<Var>;

    /// Probabilities for one `[C,H,W]` state.
    fn probs(&self, state: &Tensor) -> Result<Vec<f32>> {
        let mut shape = vec![1];
        shape.extend_from_slice(state.shape());
        Ok(self.predict(&state.clone().reshape(&shape)?)?.into_data())
    }

    /// Greedy action, ties to the lowest index.
    fn act(&self, state: &Tensor) -> Result<usize> {
        Ok(crate::numeric::argmax(&self.probs(state)?))
    }
}

pub(crate) fn check_batch(policy: &dyn Policy, shape: &[usize]) -> Result<usize> {
    let [c, h, w] = policy.state_shape();
    if shape.len() != 4 || shape[1..] != [c, h, w] {
        return Err(dim_err(format!(
            "policy expects [N,{c},{h},{w}], got {shape:?}"
        )));
    }
    Ok(shape[0])
}

/// Intensity below which a pixel is invisible to the beacon policy.
pub const BRIGHTNESS_GATE: f32 = 0.25;
/// Logit gain of a fully lit beacon.
pub const BEACON_GAIN: f32 = 10.0;

/// Analytic beacon-world expert.
///
/// `logit_0 = 0` (idle) and, for `k >= 1`,
/// `logit_k = gain * sum_{p in zone k} ramp(x_p) / beacon_area` with
/// `ramp(x) = max(0, x - gate) / (1 - gate)`. Background pixels sit below the
/// gate and contribute exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct BeaconPolicy {
    height: usize,
    width: usize,
    actions: usize,
    gain: f32,
    gate: f32,
    /// `[K, H*W]` zone read-out.
    readout: Tensor,
}

impl BeaconPolicy {
    pub fn new(world: &BeaconWorld) -> Result<Self> {
        Self::with_gain(world, BEACON_GAIN)
    }

    pub fn with_gain(world: &BeaconWorld, gain: f32) -> Result<Self> {
        world.validate()?;
        let (h, w, k) = (world.height, world.width, world.actions);
        let mut readout = vec![0.0f32; k * h * w];
        let scale = gain / world.beacon_area() as f32;
        for (z, zone) in world.zones().iter().enumerate() {
            for p in zone.pixels(w) {
                readout[(z + 1) * h * w + p] = scale;
            }
        }
        Ok(Self {
            height: h,
            width: w,
            actions: k,
            gain,
            gate: BRIGHTNESS_GATE,
            readout: Tensor::new(&[k, h * w], readout)?,
        })
    }

    pub fn gain(&self) -> f32 {
        self.gain
    }

    pub fn gate(&self) -> f32 {
        self.gate
    }

    fn ramp(&self, x: f32) -> f32 {
        (x - self.gate).max(0.0) / (1.0 - self.gate)
    }
}

impl Policy for BeaconPolicy {
    fn num_actions(&self) -> usize {
        self.actions
    }

    fn state_shape(&self) -> [usize; 3] {
        [1, self.height, self.width]
    }

    fn predict(&self, states: &Tensor) -> Result<Tensor> {
        let n = check_batch(self, states.shape())?;
        let d = self.height * self.width;
        let ramped: Vec<f32> = states.data().iter().map(|&x| self.ramp(x)).collect();
        let logits = kernels::linear_forward(&ramped, self.readout.data(), None, n, d, self.actions);
        Tensor::new(&[n, self.actions], kernels::softmax_rows(&logits, self.actions))
    }

    fn forward(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        let n = check_batch(self, tape.shape(states))?;
        let shifted = tape.add_scalar(states, -self.gate);
        let gated = tape.relu(shifted);
        let ramped = tape.mul_scalar(gated, 1.0 / (1.0 - self.gate));
        let flat = tape.reshape(ramped, &[n, self.height * self.width])?;
        let readout = tape.constant(&self.readout);
        let logits = tape.linear(flat, readout, None)?;
        tape.softmax(logits)
    }
}

/// Two strided convolutions and a dense read-out, trained by cross-entropy to
/// imitate a scripted expert and then frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyCnnPolicy {
    shape: [usize; 3],
    actions: usize,
    params: ParamStore,
}

/// Settings for [`train_tiny_cnn`].
#[derive(Clone, Debug)]
pub struct TinyCnnConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Validation agreement at which training stops early.
    pub target_agreement: f64,
    /// Below this after `max_epochs`, training is declared failed.
    pub min_agreement: f64,
}

impl Default for TinyCnnConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            batch_size: 32,
            learning_rate: 3e-3,
            seed: 42,
            target_agreement: 0.95,
            min_agreement: 0.80,
        }
    }
}

const CONV1: usize = 4;
const CONV2: usize = 8;

fn strided(n: usize) -> usize {
    (n + 2 - 3) / 2 + 1
}

impl TinyCnnPolicy {
    pub fn init(shape: [usize; 3], actions: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c, h, w] = shape;
        let flat = CONV2 * strided(strided(h)) * strided(strided(w));
        let mut params = ParamStore::new();
        params.insert("conv1.weight", kaiming_uniform(&[CONV1, c, 3, 3], c * 9, &mut rng))?;
        params.insert("conv1.bias", Tensor::zeros(&[CONV1]))?;
        params.insert("conv2.weight", kaiming_uniform(&[CONV2, CONV1, 3, 3], CONV1 * 9, &mut rng))?;
        params.insert("conv2.bias", Tensor::zeros(&[CONV2]))?;
        params.insert("dense.weight", kaiming_uniform(&[actions, flat], flat, &mut rng))?;
        params.insert("dense.bias", Tensor::zeros(&[actions]))?;
        Ok(Self { shape, actions, params })
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.params.is_frozen()
    }

    fn graph(tape: &mut Tape, p: &Bound, states: Var) -> Result<Var> {
        let n = tape.shape(states)[0];
        let h1 = tape.conv2d(states, p.get("conv1.weight")?, Some(p.get("conv1.bias")?), 2, 1)?;
        let h1 = tape.relu(h1);
        let h2 = tape.conv2d(h1, p.get("conv2.weight")?, Some(p.get("conv2.bias")?), 2, 1)?;
        let h2 = tape.relu(h2);
        let flat_len = tape.shape(h2)[1..].iter().product();
        let flat = tape.reshape(h2, &[n, flat_len])?;
        tape.linear(flat, p.get("dense.weight")?, Some(p.get("dense.bias")?))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let [c, h, w] = self.shape;
        let meta = json!({"kind": "tiny-cnn", "K": self.actions, "C": c, "H": h, "W": w});
        io::save_checkpoint(path, &self.params, &meta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (mut params, meta) = io::load_checkpoint(path)?;
        let get = |k: &str| {
            meta[k]
                .as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| Error::Format(format!("policy metadata lacks {k}")))
        };
        params.freeze();
        Ok(Self {
            shape: [get("C")?, get("H")?, get("W")?],
            actions: get("K")?,
            params,
        })
    }
}

impl Policy for TinyCnnPolicy {
    fn num_actions(&self) -> usize {
        self.actions
    }

    fn state_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn predict(&self, states: &Tensor) -> Result<Tensor> {
        let n = check_batch(self, states.shape())?;
        let get = |k: &str| self.params.get(k).expect("tiny cnn parameter present");
        let conv = |x: &[f32], xs: &[usize], name: &str| -> Result<(Vec<f32>, [usize; 4])> {
            let wt = get(&format!("{name}.weight"));
            let g = kernels::ConvGeometry::new(xs, wt.shape(), 2, 1)?;
            let mut out = kernels::conv2d_forward(x, wt.data(), Some(get(&format!("{name}.bias")).data()), &g);
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            Ok((out, g.out_shape()))
        };
        let (h1, s1) = conv(states.data(), states.shape(), "conv1")?;
        let (h2, s2) = conv(&h1, &s1, "conv2")?;
        let d = s2[1] * s2[2] * s2[3];
        let dense = get("dense.weight");
        let logits = kernels::linear_forward(&h2, dense.data(), Some(get("dense.bias").data()), n, d, self.actions);
        Tensor::new(&[n, self.actions], kernels::softmax_rows(&logits, self.actions))
    }

    fn forward(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        check_batch(self, tape.shape(states))?;
        let bound = self.params.bind_frozen(tape);
        let logits = Self::graph(tape, &bound, states)?;
        tape.softmax(logits)
    }
}

fn batch_of(states: &[&Tensor]) -> Result<Tensor> {
    Tensor::stack(states)
}

/// Agreement between a policy's greedy actions and reference labels.
pub fn agreement(policy: &dyn Policy, states: &[&Tensor], labels: &[usize]) -> Result<f64> {
    if states.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (chunk, lab) in states.chunks(64).zip(labels.chunks(64)) {
        let probs = policy.predict(&batch_of(chunk)?)?;
        let k = policy.num_actions();
        for (row, &l) in probs.data().chunks(k).zip(lab) {
            if crate::numeric::argmax(row) == l {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / states.len() as f64)
}

/// Trains a [`TinyCnnPolicy`] on `(state, label)` pairs, measuring agreement on
/// the validation pairs only, and returns it frozen.
pub fn train_tiny_cnn(
    train: (&[&Tensor], &[usize]),
    valid: (&[&Tensor], &[usize]),
    actions: usize,
    config: &TinyCnnConfig,
) -> Result<(TinyCnnPolicy, f64)> {
    let (train_x, train_y) = train;
    let (valid_x, valid_y) = valid;
    let first = train_x
        .first()
        .ok_or_else(|| Error::Usage("tiny cnn training needs a nonempty dataset".into()))?;
    let s = first.shape();
    if s.len() != 3 {
        return Err(dim_err(format!("states must be [C,H,W], got {s:?}")));
    }
    let mut policy = TinyCnnPolicy::init([s[0], s[1], s[2]], actions, config.seed)?;
    let mut opt = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut best = (0.0f64, policy.params.clone());
    for _epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(config.batch_size.max(1)) {
            let xs: Vec<&Tensor> = idx.iter().map(|&i| train_x[i]).collect();
            let ys: Vec<usize> = idx.iter().map(|&i| train_y[i]).collect();
            let mut tape = Tape::new();
            let x = tape.constant(&batch_of(&xs)?);
            let bound = policy.params.bind(&mut tape);
            let logits = TinyCnnPolicy::graph(&mut tape, &bound, x)?;
            let probs = tape.softmax(logits)?;
            let picked = tape.select(probs, &ys)?;
            let logp = tape.log(picked)?;
            let mean = tape.mean(logp)?;
            let loss = tape.mul_scalar(mean, -1.0);
            let grads = tape.backward(loss)?;
            policy.params.absorb_grads(&bound, &grads)?;
            opt.step(&mut policy.params)?;
        }
        let acc = agreement(&policy, valid_x, valid_y)?;
        if acc > best.0 {
            best = (acc, policy.params.clone());
        }
        if acc >= config.target_agreement {
            break;
        }
    }
    if best.0 < config.min_agreement {
        return Err(Error::TrainingFailure(format!(
            "tiny cnn reached only {:.3} validation agreement",
            best.0
        )));
    }
    policy.params = best.1;
    policy.params.freeze();
    Ok((policy, best.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::beacon::{Beacon, Rect, BACKGROUND};

    fn world() -> BeaconWorld {
        BeaconWorld::default()
    }

    #[test]
    fn blank_state_is_uniform() {
        let w = world();
        let p = BeaconPolicy::new(&w).unwrap();
        let probs = p.probs(&w.blank()).unwrap();
        for v in probs {
            assert!((v - 1.0 / w.actions as f32).abs() < 1e-7);
        }
    }

    #[test]
    fn full_beacon_saturates_its_action() {
        let w = world();
        let p = BeaconPolicy::new(&w).unwrap();
        let zone = w.zones()[1];
        let b = Beacon {
            action: 2,
            rect: Rect { top: zone.top + 2, left: zone.left + 3, height: 4, width: 4 },
            brightness: 1.0,
        };
        let probs = p.probs(&w.render(&[b])).unwrap();
        // softmax(10, 0, 0, 0, 0) at the driven action
        let expect = (10.0f64.exp() / (10.0f64.exp() + 4.0)) as f32;
        assert_eq!(crate::numeric::argmax(&probs), 2);
        assert!((probs[2] - expect).abs() < 1e-6);
        assert!(probs[2] > 0.99);
    }

    #[test]
    fn dimmest_beacon_still_saturates() {
        let w = world();
        let p = BeaconPolicy::new(&w).unwrap();
        let zone = w.zones()[0];
        let b = Beacon {
            action: 1,
            rect: Rect { top: zone.top, left: zone.left, height: 4, width: 4 },
            brightness: crate::worlds::beacon::BEACON_MIN,
        };
        let probs = p.probs(&w.render(&[b])).unwrap();
        assert!(probs[1] > 0.99, "{probs:?}");
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let w = world();
        let p = BeaconPolicy::new(&w).unwrap();
        let states = w.generate(3, 4).unwrap();
        let imgs: Vec<&Tensor> = states.iter().map(|s| &s.pixels).collect();
        let batch = Tensor::stack(&imgs).unwrap();
        let plain = p.predict(&batch).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(&batch);
        let y = p.forward(&mut tape, x).unwrap();
        for (a, b) in plain.data().iter().zip(tape.value(y)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn background_pixels_do_not_matter() {
        let w = world();
        let p = BeaconPolicy::new(&w).unwrap();
        let s = &w.generate(5, 1).unwrap()[0];
        let base = p.probs(&s.pixels).unwrap();
        let lit: Vec<usize> = s.beacons.iter().flat_map(|b| b.pixels(w.width)).collect();
        let mut img = s.pixels.clone();
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            if !lit.contains(&i) {
                *v = BACKGROUND;
            }
        }
        let after = p.probs(&img).unwrap();
        for (a, b) in base.iter().zip(&after) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn wrong_state_shape_is_rejected() {
        let p = BeaconPolicy::new(&world()).unwrap();
        assert!(p.predict(&Tensor::zeros(&[1, 1, 8, 8])).is_err());
    }
}
