//! Training objective and loop for the explainer.
//!
//! Per sample, with `p = pi(overlay(s, m_a))` and `p~ = pi(overlay(s, 1 - m_a))`:
//!
//! ```text
//! L = -(1/K) log p[a]
//!   + le   * (1/K) sum_k p~[k] log p~[k]
//!   + lavg * (mean(m_a) + mean(n))
//!   + lsm  * (TV(m_a) + TV(n))
//!   + lL2  * sum(theta^2)
//! ```
//!
//! Batches average the per-sample terms. The policy stays frozen: it only
//! ever enters the tape as constants.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::explainer::{masked_forward, Explainer};
use crate::numeric::{Adam, Bound, Tape, Tensor, Var, LOG_FLOOR};
use crate::worlds::{Dataset, Policy, ReferenceValue};

/// Default seeds for repeated training runs.
pub const DEFAULT_SEEDS: [u64; 3] = [42, 13, 62];

pub const LOG_HEADER: &str = "epoch,split,loss_total,loss_bc,loss_e,loss_avg,loss_smooth,loss_l2";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_e: f32,
    pub lambda_avg: f32,
    pub lambda_smooth: f32,
    pub lambda_l2: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_e: 1.0,
            lambda_avg: 0.3,
            lambda_smooth: 1.0,
            lambda_l2: 0.01,
        }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self {
            lambda_e: 0.0,
            lambda_avg: 0.0,
            lambda_smooth: 0.0,
            lambda_l2: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_e, self.lambda_avg, self.lambda_smooth, self.lambda_l2];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 16,
            epochs: 50,
            seed: DEFAULT_SEEDS[0],
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.weights.validate()
    }
}

/// `-(1/K) log p[a]` with the log floored at `LOG_FLOOR`.
pub fn loss_bc(p: &[f32], action: usize) -> Result<f32> {
    let k = p.len();
    if action >= k {
        return Err(dim_err(format!("action {action} out of range for {k} probabilities")));
    }
    let v = p[action];
    if v.is_nan() {
        return Err(Error::Numeric("probability is NaN".into()));
    }
    Ok(-(v.max(LOG_FLOOR) as f64).ln() as f32 / k as f32)
}

/// `(1/K) sum p log p`; `-ln(K)/K` at the uniform distribution.
pub fn loss_entropy(p: &[f32]) -> f32 {
    let s: f64 = p.iter().map(|&v| v as f64 * (v.max(LOG_FLOOR) as f64).ln()).sum();
    (s / p.len() as f64) as f32
}

/// `mean(m_a) + mean(n)`.
pub fn loss_avg(active: &Tensor, non_target: &Tensor) -> Result<f32> {
    if active.shape() != non_target.shape() {
        return Err(dim_err("mask shapes differ"));
    }
    let mean = |t: &Tensor| t.data().iter().map(|&v| v as f64).sum::<f64>() / t.numel() as f64;
    Ok((mean(active) + mean(non_target)) as f32)
}

/// Total variation of an `[H,W]` (or `[1,H,W]`) mask, divided by `W*H`.
pub fn total_variation(mask: &Tensor) -> Result<f32> {
    let s = mask.shape();
    let (h, w) = match s {
        [h, w] | [1, h, w] => (*h, *w),
        _ => return Err(dim_err(format!("TV expects an [H,W] mask, got {s:?}"))),
    };
    let d = mask.data();
    let mut acc = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let v = d[y * w + x] as f64;
            if y + 1 < h {
                acc += (v - d[(y + 1) * w + x] as f64).abs();
            }
            if x + 1 < w {
                acc += (v - d[y * w + x + 1] as f64).abs();
            }
        }
    }
    Ok((acc / (h * w) as f64) as f32)
}

/// `TV(m_a) + TV(n)`.
pub fn loss_smooth(active: &Tensor, non_target: &Tensor) -> Result<f32> {
    if active.shape() != non_target.shape() {
        return Err(dim_err("mask shapes differ"));
    }
    Ok(total_variation(active)? + total_variation(non_target)?)
}

/// Values of every loss term, batch-averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub bc: f64,
    pub e: f64,
    pub avg: f64,
    pub smooth: f64,
    pub l2: f64,
}

impl LossTerms {
    fn scaled_add(&mut self, o: &LossTerms, w: f64) {
        self.total += o.total * w;
        self.bc += o.bc * w;
        self.e += o.e * w;
        self.avg += o.avg * w;
        self.smooth += o.smooth * w;
        self.l2 += o.l2 * w;
    }

    /// First non-finite term, by log column name.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("loss_bc", self.bc),
            ("loss_e", self.e),
            ("loss_avg", self.avg),
            ("loss_smooth", self.smooth),
            ("loss_l2", self.l2),
            ("loss_total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// Tape handles of one batch loss. Each term is unweighted; `total` combines them.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub bc: Var,
    pub e: Var,
    pub avg: Var,
    pub smooth: Var,
    pub l2: Var,
}

impl LossVars {
    pub fn terms(&self, tape: &Tape) -> LossTerms {
        let v = |x: Var| tape.value(x)[0] as f64;
        LossTerms {
            total: v(self.total),
            bc: v(self.bc),
            e: v(self.e),
            avg: v(self.avg),
            smooth: v(self.smooth),
            l2: v(self.l2),
        }
    }
}

/// Summed TV of an `[N,1,H,W]` variable, divided by `N*H*W`.
fn tv_on_tape(tape: &mut Tape, x: Var) -> Result<Var> {
    let s = tape.shape(x).to_vec();
    let (n, h, w) = (s[0], s[2], s[3]);
    let mut parts = Vec::new();
    for (axis, len) in [(2, h), (3, w)] {
        if len > 1 {
            let a = tape.narrow(x, axis, 0, len - 1)?;
            let b = tape.narrow(x, axis, 1, len - 1)?;
            let d = tape.sub(a, b)?;
            let d = tape.abs(d);
            parts.push(tape.sum(d)?);
        }
    }
    let mut acc = match parts.len() {
        0 => return Ok(tape.constant(&Tensor::scalar(0.0))),
        _ => parts[0],
    };
    for p in &parts[1..] {
        acc = tape.add(acc, *p)?;
    }
    Ok(tape.mul_scalar(acc, 1.0 / (n * h * w) as f32))
}

/// Reference fill tiled to a `[N,C,H,W]` batch.
pub fn reference_batch(reference: &ReferenceValue, n: usize, state_shape: &[usize]) -> Result<Tensor> {
    let img = reference.image(state_shape)?;
    let mut data = Vec::with_capacity(n * img.numel());
    for _ in 0..n {
        data.extend_from_slice(img.data());
    }
    let mut shape = vec![n];
    shape.extend_from_slice(state_shape);
    Tensor::new(&shape, data)
}

/// Records the full loss for a batch `[N,C,H,W]` on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn loss_on_tape(
    tape: &mut Tape,
    explainer: &Explainer,
    params: &Bound,
    policy: &dyn Policy,
    states: &Tensor,
    actions: &[usize],
    reference: &Tensor,
    weights: &LossWeights,
) -> Result<LossVars> {
    let n = states.shape()[0];
    if actions.len() != n || reference.shape() != states.shape() {
        return Err(dim_err("batch states, actions and reference disagree"));
    }
    let k = policy.num_actions();
    let s = tape.constant(states);
    let r = tape.constant(reference);
    let masks = explainer.forward(tape, params, s)?;
    let out = masked_forward(tape, policy, s, masks, actions, r)?;

    let picked = tape.select(out.kept, actions)?;
    let logp = tape.log(picked)?;
    let bc = tape.mean(logp)?;
    let bc = tape.mul_scalar(bc, -1.0 / k as f32);

    let logq = tape.log(out.removed)?;
    let plogp = tape.mul(out.removed, logq)?;
    let e = tape.sum(plogp)?;
    let e = tape.mul_scalar(e, 1.0 / (n * k) as f32);

    let ma = tape.mean(out.split.active)?;
    let mn = tape.mean(out.split.non_target)?;
    let avg = tape.add(ma, mn)?;

    let ta = tv_on_tape(tape, out.split.active)?;
    let tn = tv_on_tape(tape, out.split.non_target)?;
    let smooth = tape.add(ta, tn)?;

    let mut l2 = tape.constant(&Tensor::scalar(0.0));
    for (_, v) in params.iter() {
        let sq = tape.mul(v, v)?;
        let sq = tape.sum(sq)?;
        l2 = tape.add(l2, sq)?;
    }

    let mut total = bc;
    for (term, lambda) in [
        (e, weights.lambda_e),
        (avg, weights.lambda_avg),
        (smooth, weights.lambda_smooth),
        (l2, weights.lambda_l2),
    ] {
        let scaled = tape.mul_scalar(term, lambda);
        total = tape.add(total, scaled)?;
    }
    Ok(LossVars {
        total,
        bc,
        e,
        avg,
        smooth,
        l2,
    })
}

/// Stacks the given records into a batch.
pub fn gather(data: &Dataset, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let states: Vec<&Tensor> = idx.iter().map(|&i| &data.records[i].state).collect();
    let actions = idx.iter().map(|&i| data.records[i].action).collect();
    Ok((Tensor::stack(&states)?, actions))
}

/// Loss terms of a batch together with explainer gradients.
pub fn loss_and_grads(
    explainer: &mut Explainer,
    policy: &dyn Policy,
    states: &Tensor,
    actions: &[usize],
    reference: &Tensor,
    weights: &LossWeights,
) -> Result<LossTerms> {
    let mut tape = Tape::new();
    let bound = explainer.params().bind(&mut tape);
    let vars = loss_on_tape(&mut tape, explainer, &bound, policy, states, actions, reference, weights)?;
    let terms = vars.terms(&tape);
    if let Some(term) = terms.non_finite() {
        return Err(Error::Diverged { epoch: 0, step: 0, term });
    }
    let grads = tape.backward(vars.total)?;
    explainer.params_mut().absorb_grads(&bound, &grads)?;
    Ok(terms)
}

/// Batch-averaged loss over `idx` without touching parameters.
pub fn evaluate_loss(
    explainer: &Explainer,
    policy: &dyn Policy,
    data: &Dataset,
    idx: &[usize],
    reference: &ReferenceValue,
    config: &TrainConfig,
) -> Result<LossTerms> {
    let mut acc = LossTerms::default();
    if idx.is_empty() {
        return Ok(acc);
    }
    let state_shape = data.records[idx[0]].state.shape().to_vec();
    for chunk in idx.chunks(config.batch_size) {
        let (states, actions) = gather(data, chunk)?;
        let r = reference_batch(reference, chunk.len(), &state_shape)?;
        let mut tape = Tape::new();
        let bound = explainer.params().bind_frozen(&mut tape);
        let vars = loss_on_tape(&mut tape, explainer, &bound, policy, &states, &actions, &r, &config.weights)?;
        acc.scaled_add(&vars.terms(&tape), chunk.len() as f64 / idx.len() as f64);
    }
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub split: &'static str,
    pub terms: LossTerms,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the best validation loss seen (epoch 0 is the initial model).
    pub best: Explainer,
    pub best_epoch: usize,
    pub best_valid: f64,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{LOG_HEADER}")?;
        for r in &self.log {
            let t = &r.terms;
            writeln!(
                f,
                "{},{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                r.epoch, r.split, t.total, t.bc, t.e, t.avg, t.smooth, t.l2
            )?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Adam over the train split; keeps the parameters with the lowest validation
/// total loss. With no validation records the final parameters are kept.
pub fn train(
    mut explainer: Explainer,
    policy: &dyn Policy,
    data: &Dataset,
    reference: &ReferenceValue,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    reference.validate()?;
    if data.split.train.is_empty() {
        return Err(Error::Usage("training split is empty".into()));
    }
    let valid = &data.split.valid;
    let mut log = Vec::new();
    let mut best = explainer.clone();
    let mut best_epoch = 0;
    let mut best_valid = f64::INFINITY;
    if !valid.is_empty() {
        let terms = evaluate_loss(&explainer, policy, data, valid, reference, config)?;
        best_valid = terms.total;
        log.push(EpochRecord { epoch: 0, split: "valid", terms });
    }

    let state_shape = data.records[data.split.train[0]].state.shape().to_vec();
    let mut adam = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(0x7261_696e);
    let mut order = data.split.train.clone();
    let total = order.len() as f64;
    let mut step = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossTerms::default();
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let (states, actions) = gather(data, chunk)?;
            let r = reference_batch(reference, chunk.len(), &state_shape)?;
            let terms = loss_and_grads(&mut explainer, policy, &states, &actions, &r, &config.weights).map_err(|e| match e {
                Error::Diverged { term, .. } => Error::Diverged { epoch, step, term },
                other => other,
            })?;
            adam.step(explainer.params_mut())?;
            acc.scaled_add(&terms, chunk.len() as f64 / total);
        }
        log.push(EpochRecord { epoch, split: "train", terms: acc });
        if !valid.is_empty() {
            let terms = evaluate_loss(&explainer, policy, data, valid, reference, config)?;
            if let Some(term) = terms.non_finite() {
                return Err(Error::Diverged { epoch, step, term });
            }
            log.push(EpochRecord { epoch, split: "valid", terms });
            if terms.total < best_valid {
                best_valid = terms.total;
                best_epoch = epoch;
                best = explainer.clone();
            }
        }
    }
    if valid.is_empty() {
        best = explainer;
        best_epoch = config.epochs;
        best_valid = f64::NAN;
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_valid,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainer::{split_masks, ExplainerConfig, MaskSet};
    use crate::worlds::{collect_demonstrations, BeaconPolicy, BeaconWorld};

    fn t(shape: &[usize], d: &[f32]) -> Tensor {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn analytic_term_values() {
        assert_eq!(loss_bc(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        let l = loss_bc(&[0.25; 4], 2).unwrap();
        assert!((l - 0.25f32.ln().abs() / 4.0).abs() < 1e-7);
        assert!(loss_bc(&[0.5, 0.5], 0).unwrap() > loss_bc(&[0.4, 0.6], 1).unwrap() - 1.0);
        assert!(loss_bc(&[0.1, 0.9], 0).unwrap() > loss_bc(&[0.2, 0.8], 0).unwrap());

        assert!((loss_entropy(&[0.25; 4]) + 4f32.ln() / 4.0).abs() < 1e-6);
        assert!(loss_entropy(&[0.0, 1.0, 0.0, 0.0]).abs() < 1e-6);
        assert!(loss_entropy(&[0.3, 0.2, 0.25, 0.25]) > loss_entropy(&[0.25; 4]));

        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(loss_avg(&z, &z).unwrap(), 0.0);
        assert_eq!(loss_avg(&Tensor::ones(&[2, 2]), &z).unwrap(), 1.0);
        assert_eq!(loss_avg(&t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]), &z).unwrap(), 0.25);

        let checker = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(total_variation(&checker).unwrap(), 1.0);
        assert_eq!(total_variation(&Tensor::full(&[3, 4], 0.7)).unwrap(), 0.0);
        assert_eq!(loss_smooth(&checker, &z).unwrap(), 1.0);
    }

    fn tiny_setup() -> (Explainer, BeaconPolicy, Dataset) {
        let world = BeaconWorld {
            height: 8,
            width: 8,
            actions: 3,
            beacon_size: 2,
            ..Default::default()
        };
        let policy = BeaconPolicy::new(&world).unwrap();
        let data = collect_demonstrations(&policy, &world, 20, 5).unwrap();
        let mut ex = Explainer::init(ExplainerConfig::new([1, 8, 8], 3).with_hidden(4), 3).unwrap();
        let head = ex.params_mut().get_mut("head.weight").unwrap();
        for (i, v) in head.data_mut().iter_mut().enumerate() {
            *v = ((i * 37 % 17) as f32 - 8.0) * 0.1;
        }
        (ex, policy, data)
    }

    #[test]
    fn tape_terms_match_plain_terms() {
        let (ex, policy, data) = tiny_setup();
        let idx = [0usize, 1, 2];
        let (states, actions) = gather(&data, &idx).unwrap();
        let r = reference_batch(&ReferenceValue::scalar(0.1), 3, &[1, 8, 8]).unwrap();
        let mut tape = Tape::new();
        let bound = ex.params().bind(&mut tape);
        let w = LossWeights::default();
        let vars = loss_on_tape(&mut tape, &ex, &bound, &policy, &states, &actions, &r, &w).unwrap();
        let terms = vars.terms(&tape);

        let mut plain = LossTerms::default();
        for (n, &i) in idx.iter().enumerate() {
            let s = &data.records[i].state;
            let a = actions[n];
            let ms: MaskSet = ex.explain(s).unwrap();
            let sp = split_masks(&ms, a).unwrap();
            let refv = ReferenceValue::scalar(0.1);
            let kept = crate::explainer::overlay(s, &sp.active, &refv).unwrap();
            let removed = crate::explainer::overlay(s, &sp.complement, &refv).unwrap();
            plain.bc += loss_bc(&policy.probs(&kept).unwrap(), a).unwrap() as f64 / 3.0;
            plain.e += loss_entropy(&policy.probs(&removed).unwrap()) as f64 / 3.0;
            plain.avg += loss_avg(&sp.active, &sp.non_target).unwrap() as f64 / 3.0;
            plain.smooth += loss_smooth(&sp.active, &sp.non_target).unwrap() as f64 / 3.0;
        }
        for (a, b) in [(terms.bc, plain.bc), (terms.e, plain.e), (terms.avg, plain.avg), (terms.smooth, plain.smooth)] {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert!((terms.l2 - ex.params().squared_norm()).abs() < 1e-3 * terms.l2);
        let recombined = terms.bc + terms.e + 0.3 * terms.avg + terms.smooth + 0.01 * terms.l2;
        assert!((terms.total - recombined).abs() < 1e-5);
    }

    #[test]
    fn zero_weights_leave_only_behavior_cloning() {
        let (ex, policy, data) = tiny_setup();
        let (states, actions) = gather(&data, &[3, 4]).unwrap();
        let r = reference_batch(&ReferenceValue::scalar(0.1), 2, &[1, 8, 8]).unwrap();
        let mut tape = Tape::new();
        let bound = ex.params().bind(&mut tape);
        let vars = loss_on_tape(&mut tape, &ex, &bound, &policy, &states, &actions, &r, &LossWeights::zero()).unwrap();
        assert_eq!(tape.value(vars.total), tape.value(vars.bc));
    }

    #[test]
    fn mask_average_pressure_on_every_pixel() {
        // with only the average term active, every active-mask pixel feels lambda/(W*H)
        let k = 3;
        let (h, w) = (4, 4);
        let mut tape = Tape::new();
        let m = tape.leaf(&Tensor::full(&[1, k, h, w], 0.5).with_requires_grad(true));
        let sv = crate::explainer::split_on_tape(&mut tape, m, &[1]).unwrap();
        let ma = tape.mean(sv.active).unwrap();
        let mn = tape.mean(sv.non_target).unwrap();
        let avg = tape.add(ma, mn).unwrap();
        let loss = tape.mul_scalar(avg, 0.3);
        let g = tape.backward(loss).unwrap();
        let gm = g.get(m).unwrap();
        let expect = 0.3 / (h * w) as f32;
        for p in 0..h * w {
            assert!((gm[h * w + p] - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_epochs_keep_initial_model() {
        let (ex, policy, data) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let out = train(ex.clone(), &policy, &data, &ReferenceValue::scalar(0.1), &cfg).unwrap();
        assert_eq!(out.best, ex);
        assert_eq!(out.best_epoch, 0);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let (ex, policy, data) = tiny_setup();
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(train(ex.clone(), &policy, &data, &ReferenceValue::scalar(0.1), &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn nan_parameters_abort_with_term() {
        let (mut ex, policy, data) = tiny_setup();
        ex.params_mut().get_mut("head.bias").unwrap().data_mut()[0] = f32::NAN;
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let err = train(ex, &policy, &data, &ReferenceValue::scalar(0.1), &cfg).unwrap_err();
        match err {
            Error::Diverged { epoch, step, term } => {
                assert_eq!((epoch, step), (1, 1));
                assert!(term.starts_with("loss_"));
            }
            // a NaN probability is also caught inside the log
            Error::Numeric(_) => {}
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn training_is_deterministic_and_logs_epochs() {
        let (ex, policy, data) = tiny_setup();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            ..Default::default()
        };
        let a = train(ex.clone(), &policy, &data, &ReferenceValue::scalar(0.1), &cfg).unwrap();
        let b = train(ex, &policy, &data, &ReferenceValue::scalar(0.1), &cfg).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.log, b.log);
        let splits: Vec<_> = a.log.iter().map(|r| (r.epoch, r.split)).collect();
        assert_eq!(splits, vec![(0, "valid"), (1, "train"), (1, "valid"), (2, "train"), (2, "valid")]);
    }
}
