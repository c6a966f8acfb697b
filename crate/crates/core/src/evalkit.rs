//! Evaluation of saliency masks against a frozen policy.
//!
//! * fidelity: does the policy still pick the same action on `overlay(s, m_a)`?
//! * insertion / deletion: probability of the action while pixels are revealed
//!   or removed in descending mask order, summarized by trapezoid AUC.
//! * counterfactuals: remove the strongest mask regions and re-run the policy.
//! * region importance: share of the mask mass falling on annotated regions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::baselines::Baseline;
use crate::error::{dim_err, Error, Result};
use crate::explainer::{overlay, Explainer};
use crate::numeric::Tensor;
use crate::worlds::{Policy, ReferenceValue};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.25, 0.5, 1.0];
/// Regions below this share of the mask mass are dropped.
pub const REGION_SHARE_FLOOR: f64 = 0.05;

/// Anything that yields an `[H,W]` mask in `[0,1]` for a state and action.
pub trait MaskProvider: Sync {
    fn name(&self) -> String;
    fn mask(&self, state: &Tensor, action: usize) -> Result<Tensor>;
}

impl MaskProvider for Explainer {
    fn name(&self) -> String {
        "explainer".into()
    }

    fn mask(&self, state: &Tensor, action: usize) -> Result<Tensor> {
        self.explain(state)?.mask(action)
    }
}

/// A perturbation baseline used as a mask source.
pub struct BaselineProvider<'a> {
    pub method: Baseline,
    pub policy: &'a dyn Policy,
    pub reference: ReferenceValue,
}

impl MaskProvider for BaselineProvider<'_> {
    fn name(&self) -> String {
        self.method.name().into()
    }

    fn mask(&self, state: &Tensor, action: usize) -> Result<Tensor> {
        Ok(self.method.run(self.policy, state, action, &self.reference)?.values)
    }
}

/// The same value at every pixel.
pub struct ConstantMask(pub f32);

impl MaskProvider for ConstantMask {
    fn name(&self) -> String {
        format!("constant_{}", self.0)
    }

    fn mask(&self, state: &Tensor, _action: usize) -> Result<Tensor> {
        let s = state.shape();
        Ok(Tensor::full(&s[s.len() - 2..], self.0))
    }
}

/// Per-action one-vs-rest counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub tn: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub total: u64,
    pub correct: u64,
}

impl ConfusionCounts {
    pub fn new(k: usize) -> Self {
        Self {
            tp: vec![0; k],
            tn: vec![0; k],
            fp: vec![0; k],
            fn_: vec![0; k],
            total: 0,
            correct: 0,
        }
    }

    pub fn num_actions(&self) -> usize {
        self.tp.len()
    }

    pub fn add(&mut self, label: usize, pred: usize) {
        for a in 0..self.num_actions() {
            match (label == a, pred == a) {
                (true, true) => self.tp[a] += 1,
                (false, false) => self.tn[a] += 1,
                (false, true) => self.fp[a] += 1,
                (true, false) => self.fn_[a] += 1,
            }
        }
        self.total += 1;
        self.correct += u64::from(label == pred);
    }

    pub fn from_pairs(k: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut c = Self::new(k);
        for &(l, p) in pairs {
            if l >= k || p >= k {
                return Err(dim_err(format!("pair ({l},{p}) out of range for {k} actions")));
            }
            c.add(l, p);
        }
        Ok(c)
    }

    pub fn report(&self) -> FidelityReport {
        let k = self.num_actions() as f64;
        let ratio = |a: u64, b: u64| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
        let precision = (0..self.num_actions()).map(|a| ratio(self.tp[a], self.fp[a])).sum::<f64>() / k;
        let recall = (0..self.num_actions()).map(|a| ratio(self.tp[a], self.fn_[a])).sum::<f64>() / k;
        FidelityReport {
            accuracy: if self.total == 0 { 0.0 } else { self.correct as f64 / self.total as f64 },
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// Accuracy and macro-averaged precision, recall and F1. Classes never
/// labelled nor predicted contribute zero precision and recall.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FidelityReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Fidelity of `provider` over `(state, expert action)` samples.
pub fn fidelity(
    policy: &dyn Policy,
    provider: &dyn MaskProvider,
    samples: &[(&Tensor, usize)],
    reference: &ReferenceValue,
) -> Result<(FidelityReport, ConfusionCounts)> {
    let k = policy.num_actions();
    if samples.is_empty() {
        return Err(Error::Usage("fidelity needs at least one sample".into()));
    }
    if k < 2 {
        return Err(Error::Unsupported("fidelity needs at least two actions".into()));
    }
    let preds: Vec<usize> = samples
        .par_iter()
        .map(|(s, a)| {
            let m = provider.mask(s, *a)?;
            policy.act(&overlay(s, &m, reference)?)
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = samples.iter().map(|(_, a)| *a).zip(preds).collect();
    let counts = ConfusionCounts::from_pairs(k, &pairs)?;
    Ok((counts.report(), counts))
}

/// Pixel indices by descending mask value; ties keep row-major order.
pub fn pixel_order(mask: &Tensor) -> Vec<usize> {
    let d = mask.data();
    let mut idx: Vec<usize> = (0..d.len()).collect();
    idx.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
    idx
}

/// The `q` highest-ranked pixels of a mask.
pub fn top_pixels(mask: &Tensor, q: usize) -> Vec<usize> {
    let mut order = pixel_order(mask);
    order.truncate(q);
    order
}

/// Intersection over union of two pixel sets.
pub fn iou(a: &[usize], b: &[usize]) -> f64 {
    let sa: std::collections::BTreeSet<_> = a.iter().collect();
    let sb: std::collections::BTreeSet<_> = b.iter().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CurveKind {
    Insertion,
    Deletion,
}

impl CurveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Insertion => "insertion",
            CurveKind::Deletion => "deletion",
        }
    }
}

/// Probability trace of one insertion or deletion run.
#[derive(Clone, Debug, PartialEq)]
pub struct InsDelCurve {
    pub kind: CurveKind,
    pub fraction: f64,
    /// Pixels changed per policy evaluation.
    pub step: usize,
    /// Pixels changed at each point, starting at 0.
    pub changed: Vec<usize>,
    pub probs: Vec<f32>,
    pub auc: f64,
}

/// Number of pixels a fraction covers, at least one.
pub fn fraction_pixels(fraction: f64, pixels: usize) -> usize {
    ((fraction * pixels as f64).round() as usize).clamp(1, pixels)
}

/// Default step: one percent of the evaluated pixels, rounded up.
pub fn default_step(n: usize) -> usize {
    n.div_ceil(100).max(1)
}

/// Trapezoid rule over `x = changed / n`.
pub fn trapezoid_auc(changed: &[usize], probs: &[f32], n: usize) -> f64 {
    changed
        .windows(2)
        .zip(probs.windows(2))
        .map(|(x, p)| (x[1] - x[0]) as f64 / n as f64 * (p[0] as f64 + p[1] as f64) / 2.0)
        .sum()
}

/// Insertion (start from the reference, reveal) or deletion (start from the
/// state, remove) along the descending mask order. `step = None` picks
/// [`default_step`].
#[allow(clippy::too_many_arguments)]
pub fn ins_del_curve(
    kind: CurveKind,
    policy: &dyn Policy,
    state: &Tensor,
    action: usize,
    mask: &Tensor,
    reference: &ReferenceValue,
    fraction: f64,
    step: Option<usize>,
) -> Result<InsDelCurve> {
    let s = state.shape();
    if s.len() != 3 || mask.shape() != &s[1..] {
        return Err(dim_err(format!("mask {:?} does not match state {s:?}", mask.shape())));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Usage(format!("fraction {fraction} must lie in (0,1]")));
    }
    if step == Some(0) {
        return Err(Error::Usage("step must be at least one pixel".into()));
    }
    if action >= policy.num_actions() {
        return Err(dim_err(format!("action {action} out of range")));
    }
    let plane = s[1] * s[2];
    let n = fraction_pixels(fraction, plane);
    let step = step.unwrap_or_else(|| default_step(n));
    let order = pixel_order(mask);
    let r = reference.image(s)?;

    // m' as a binary keep mask over the plane
    let mut keep = vec![kind == CurveKind::Deletion; plane];
    let mut changed = vec![0usize];
    let mut states = Vec::with_capacity(n / step + 2);
    let render = |keep: &[bool]| -> Vec<f32> {
        state
            .data()
            .iter()
            .zip(r.data())
            .enumerate()
            .map(|(i, (&sv, &rv))| if keep[i % plane] { sv } else { rv })
            .collect::<Vec<f32>>()
    };
    states.push(render(&keep));
    let mut done = 0;
    while done < n {
        let next = (done + step).min(n);
        for &p in &order[done..next] {
            keep[p] = kind == CurveKind::Insertion;
        }
        done = next;
        changed.push(done);
        states.push(render(&keep));
    }
    let mut probs = Vec::with_capacity(states.len());
    for chunk in states.chunks(256) {
        let mut shape = vec![chunk.len()];
        shape.extend_from_slice(s);
        let p = policy.predict(&Tensor::new(&shape, chunk.concat())?)?;
        let k = policy.num_actions();
        probs.extend(p.data().chunks(k).map(|row| row[action]));
    }
    let auc = trapezoid_auc(&changed, &probs, n);
    Ok(InsDelCurve {
        kind,
        fraction,
        step,
        changed,
        probs,
        auc,
    })
}

pub fn insertion_curve(
    policy: &dyn Policy,
    state: &Tensor,
    action: usize,
    mask: &Tensor,
    reference: &ReferenceValue,
    fraction: f64,
    step: Option<usize>,
) -> Result<InsDelCurve> {
    ins_del_curve(CurveKind::Insertion, policy, state, action, mask, reference, fraction, step)
}

pub fn deletion_curve(
    policy: &dyn Policy,
    state: &Tensor,
    action: usize,
    mask: &Tensor,
    reference: &ReferenceValue,
    fraction: f64,
    step: Option<usize>,
) -> Result<InsDelCurve> {
    ins_del_curve(CurveKind::Deletion, policy, state, action, mask, reference, fraction, step)
}

/// A 4-connected set of strong mask pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    /// Sorted row-major pixel indices.
    pub pixels: Vec<usize>,
    /// Summed mask value over the region.
    pub mass: f64,
}

/// 4-connected components of `on`, each sorted, listed by first pixel.
pub fn components(on: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !on[start] || label[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut comp = Vec::new();
        let mut stack = vec![start];
        label[start] = id;
        while let Some(p) = stack.pop() {
            comp.push(p);
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if on[q] && label[q] == usize::MAX {
                    label[q] = id;
                    stack.push(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Components of `mask >= theta * max(mask)` by descending mass.
pub fn mask_regions(mask: &Tensor, theta: f64) -> Result<Vec<Region>> {
    let s = mask.shape();
    if s.len() != 2 {
        return Err(dim_err(format!("regions need an [H,W] mask, got {s:?}")));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::Usage(format!("threshold {theta} must lie in (0,1]")));
    }
    let d = mask.data();
    let max = d.iter().copied().fold(0.0f32, f32::max) as f64;
    if max <= 0.0 {
        return Ok(Vec::new());
    }
    let cut = theta * max;
    let on: Vec<bool> = d.iter().map(|&v| v as f64 >= cut).collect();
    let mut regions: Vec<Region> = components(&on, s[0], s[1])
        .into_iter()
        .map(|pixels| {
            let mass = pixels.iter().map(|&p| d[p] as f64).sum();
            Region { pixels, mass }
        })
        .collect();
    regions.sort_by(|a, b| b.mass.total_cmp(&a.mass));
    Ok(regions)
}

/// Copy of `state` with `pixels` (in every channel) set to the reference.
pub fn remove_region(state: &Tensor, pixels: &[usize], reference: &ReferenceValue) -> Result<Tensor> {
    let s = state.shape();
    let r = reference.image(s)?;
    let plane = s[1] * s[2];
    let mut out = state.clone();
    for c in 0..s[0] {
        for &p in pixels {
            if p >= plane {
                return Err(dim_err(format!("pixel {p} out of bounds")));
            }
            out.data_mut()[c * plane + p] = r.data()[c * plane + p];
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Counterfactual {
    pub region: Region,
    pub modified: Tensor,
    pub original_action: usize,
    pub new_action: usize,
    pub changed: bool,
}

/// Removes each of the `top_r` strongest regions of `mask` separately and
/// records the policy's new action. Empty when the mask is all zero.
pub fn counterfactual(
    policy: &dyn Policy,
    state: &Tensor,
    mask: &Tensor,
    reference: &ReferenceValue,
    theta: f64,
    top_r: usize,
) -> Result<Vec<Counterfactual>> {
    let original_action = policy.act(state)?;
    mask_regions(mask, theta)?
        .into_iter()
        .take(top_r)
        .map(|region| {
            let modified = remove_region(state, &region.pixels, reference)?;
            let new_action = policy.act(&modified)?;
            Ok(Counterfactual {
                region,
                modified,
                original_action,
                new_action,
                changed: new_action != original_action,
            })
        })
        .collect()
}

/// Share of mask mass per region after zeroing values below the mask mean.
/// Regions under [`REGION_SHARE_FLOOR`] are dropped; an empty mask yields nothing.
pub fn region_importance(mask: &Tensor, regions: &[(String, Vec<usize>)]) -> Result<Vec<(String, f64)>> {
    let d = mask.data();
    let mean = d.iter().map(|&v| v as f64).sum::<f64>() / d.len().max(1) as f64;
    let kept: Vec<f64> = d.iter().map(|&v| if (v as f64) < mean { 0.0 } else { v as f64 }).collect();
    let total: f64 = kept.iter().sum();
    if total <= 0.0 {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for (name, pixels) in regions {
        if let Some(&p) = pixels.iter().find(|&&p| p >= d.len()) {
            return Err(dim_err(format!("region {name} pixel {p} out of bounds")));
        }
        let share = pixels.iter().map(|&p| kept[p]).sum::<f64>() / total;
        if share >= REGION_SHARE_FLOOR {
            out.push((name.clone(), share));
        }
    }
    Ok(out)
}

/// Rounds to nine significant digits.
pub fn sig9(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(sig9(v)).map(Value::Number).unwrap_or(Value::Null)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn mean_std_json(xs: &[f64]) -> Value {
    let (m, s) = mean_std(xs);
    json!({ "mean": num(m), "std": num(s) })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurveSettings {
    pub fractions: Vec<f64>,
    /// `None` for the default step, `Some(1)` for per-pixel stepping.
    pub step: Option<usize>,
}

impl Default for CurveSettings {
    fn default() -> Self {
        Self {
            fractions: DEFAULT_FRACTIONS.to_vec(),
            step: None,
        }
    }
}

/// Metrics for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleResult {
    pub index: usize,
    pub action: usize,
    pub predicted: usize,
    pub insertion: Vec<InsDelCurve>,
    pub deletion: Vec<InsDelCurve>,
}

/// Every metric for one mask source.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodResult {
    pub name: String,
    pub fidelity: FidelityReport,
    pub counts: ConfusionCounts,
    pub samples: Vec<SampleResult>,
}

impl MethodResult {
    pub fn aucs(&self, kind: CurveKind, fraction_index: usize) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| match kind {
                CurveKind::Insertion => s.insertion[fraction_index].auc,
                CurveKind::Deletion => s.deletion[fraction_index].auc,
            })
            .collect()
    }
}

/// Fidelity plus insertion/deletion curves for samples `(dataset index, state, action)`.
pub fn evaluate_method(
    policy: &dyn Policy,
    provider: &dyn MaskProvider,
    samples: &[(usize, &Tensor, usize)],
    reference: &ReferenceValue,
    settings: &CurveSettings,
) -> Result<MethodResult> {
    let k = policy.num_actions();
    if samples.is_empty() {
        return Err(Error::Usage("evaluation needs at least one sample".into()));
    }
    let results: Vec<SampleResult> = samples
        .par_iter()
        .map(|&(index, s, a)| {
            let m = provider.mask(s, a)?;
            let predicted = policy.act(&overlay(s, &m, reference)?)?;
            let curves = |kind| {
                settings
                    .fractions
                    .iter()
                    .map(|&f| ins_del_curve(kind, policy, s, a, &m, reference, f, settings.step))
                    .collect::<Result<Vec<_>>>()
            };
            Ok(SampleResult {
                index,
                action: a,
                predicted,
                insertion: curves(CurveKind::Insertion)?,
                deletion: curves(CurveKind::Deletion)?,
            })
        })
        .collect::<Result<_>>()?;
    let pairs: Vec<(usize, usize)> = results.iter().map(|r| (r.action, r.predicted)).collect();
    let counts = ConfusionCounts::from_pairs(k, &pairs)?;
    Ok(MethodResult {
        name: provider.name(),
        fidelity: counts.report(),
        counts,
        samples: results,
    })
}

/// Results of one checkpoint (or one baseline run).
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub label: String,
    pub methods: Vec<MethodResult>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterfactualRow {
    pub run: String,
    pub index: usize,
    pub rank: usize,
    pub size: usize,
    pub mass: f64,
    pub original_action: usize,
    pub new_action: usize,
    pub changed: bool,
}

/// One heat overlay to render.
#[derive(Clone, Debug, PartialEq)]
pub struct OverlayImage {
    pub index: usize,
    pub action: usize,
    pub state: Tensor,
    pub mask: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalResults {
    /// Resolved configuration echoed into the report.
    pub config: BTreeMap<String, String>,
    pub settings: CurveSettings,
    pub runs: Vec<RunResult>,
    pub counterfactuals: Vec<CounterfactualRow>,
    pub overlays: Vec<OverlayImage>,
}

fn frac_key(f: f64) -> String {
    format!("{}", sig9(f))
}

fn method_json(m: &MethodResult, settings: &CurveSettings) -> Value {
    let mut ins = serde_json::Map::new();
    let mut del = serde_json::Map::new();
    let mut curves = serde_json::Map::new();
    for (fi, &f) in settings.fractions.iter().enumerate() {
        ins.insert(frac_key(f), mean_std_json(&m.aucs(CurveKind::Insertion, fi)));
        del.insert(frac_key(f), mean_std_json(&m.aucs(CurveKind::Deletion, fi)));
        let mean_curve = |kind: CurveKind| -> Value {
            let traces: Vec<&InsDelCurve> = m
                .samples
                .iter()
                .map(|s| match kind {
                    CurveKind::Insertion => &s.insertion[fi],
                    CurveKind::Deletion => &s.deletion[fi],
                })
                .collect();
            let len = traces[0].probs.len();
            let x: Vec<Value> = traces[0].changed.iter().map(|&c| num(c as f64 / *traces[0].changed.last().unwrap_or(&1) as f64)).collect();
            let p: Vec<Value> = (0..len)
                .map(|i| num(traces.iter().map(|t| t.probs[i] as f64).sum::<f64>() / traces.len() as f64))
                .collect();
            json!({ "x": x, "mean_p": p })
        };
        curves.insert(
            frac_key(f),
            json!({ "insertion": mean_curve(CurveKind::Insertion), "deletion": mean_curve(CurveKind::Deletion) }),
        );
    }
    json!({
        "name": m.name,
        "samples": m.samples.len(),
        "fidelity": {
            "accuracy": num(m.fidelity.accuracy),
            "precision": num(m.fidelity.precision),
            "recall": num(m.fidelity.recall),
            "f1": num(m.fidelity.f1),
        },
        "confusion": { "tp": m.counts.tp, "tn": m.counts.tn, "fp": m.counts.fp, "fn": m.counts.fn_ },
        "insertion_auc": ins,
        "deletion_auc": del,
        "curves": curves,
    })
}

/// Method names in first-seen order across runs.
fn method_names(results: &EvalResults) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in &results.runs {
        for m in &r.methods {
            if !names.contains(&m.name) {
                names.push(m.name.clone());
            }
        }
    }
    names
}

/// Per-run metric values of one method, in run order.
fn across_runs(results: &EvalResults, name: &str, f: impl Fn(&MethodResult) -> f64) -> Vec<f64> {
    results
        .runs
        .iter()
        .filter_map(|r| r.methods.iter().find(|m| m.name == name))
        .map(f)
        .collect()
}

pub fn report_json(results: &EvalResults) -> Value {
    let s = &results.settings;
    let mut summary = Vec::new();
    for name in method_names(results) {
        let mut ins = serde_json::Map::new();
        let mut del = serde_json::Map::new();
        for (fi, &f) in s.fractions.iter().enumerate() {
            let mean_auc = |kind| move |m: &MethodResult| mean_std(&m.aucs(kind, fi)).0;
            ins.insert(frac_key(f), mean_std_json(&across_runs(results, &name, mean_auc(CurveKind::Insertion))));
            del.insert(frac_key(f), mean_std_json(&across_runs(results, &name, mean_auc(CurveKind::Deletion))));
        }
        summary.push(json!({
            "method": name,
            "runs": across_runs(results, &name, |_| 0.0).len(),
            "accuracy": mean_std_json(&across_runs(results, &name, |m| m.fidelity.accuracy)),
            "precision": mean_std_json(&across_runs(results, &name, |m| m.fidelity.precision)),
            "recall": mean_std_json(&across_runs(results, &name, |m| m.fidelity.recall)),
            "f1": mean_std_json(&across_runs(results, &name, |m| m.fidelity.f1)),
            "insertion_auc": ins,
            "deletion_auc": del,
        }));
    }
    let runs: Vec<Value> = results
        .runs
        .iter()
        .map(|r| json!({ "label": r.label, "methods": r.methods.iter().map(|m| method_json(m, s)).collect::<Vec<_>>() }))
        .collect();
    let cfs: Vec<Value> = results
        .counterfactuals
        .iter()
        .map(|c| {
            json!({
                "run": c.run,
                "index": c.index,
                "rank": c.rank,
                "size": c.size,
                "mass": num(c.mass),
                "original_action": c.original_action,
                "new_action": c.new_action,
                "changed": c.changed,
            })
        })
        .collect();
    json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "config": results.config,
        "fractions": s.fractions.iter().map(|&f| num(f)).collect::<Vec<_>>(),
        "step": match s.step { Some(v) => json!(v), None => json!("auto") },
        "absent_class_policy": "classes absent from labels and predictions contribute precision = recall = 0",
        "summary": summary,
        "runs": runs,
        "counterfactuals": cfs,
    })
}

pub fn tables_csv(results: &EvalResults) -> String {
    let mut out = String::from("run,method,metric,fraction,value\n");
    let s = &results.settings;
    for r in &results.runs {
        for m in &r.methods {
            for (metric, v) in [
                ("accuracy", m.fidelity.accuracy),
                ("precision", m.fidelity.precision),
                ("recall", m.fidelity.recall),
                ("f1", m.fidelity.f1),
            ] {
                let _ = writeln!(out, "{},{},{metric},,{}", r.label, m.name, sig9(v));
            }
            for (fi, &f) in s.fractions.iter().enumerate() {
                for kind in [CurveKind::Insertion, CurveKind::Deletion] {
                    let (mean, std) = mean_std(&m.aucs(kind, fi));
                    let _ = writeln!(out, "{},{},{}_auc_mean,{},{}", r.label, m.name, kind.as_str(), sig9(f), sig9(mean));
                    let _ = writeln!(out, "{},{},{}_auc_std,{},{}", r.label, m.name, kind.as_str(), sig9(f), sig9(std));
                }
            }
        }
    }
    out
}

/// `(r,g,b)` in `[0,1]` for a heat value in `[0,1]`.
fn heat(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    let ch = |c: f32| (1.5 - (4.0 * v - c).abs()).clamp(0.0, 1.0);
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// Binary PPM (P6) of the mask blended over the grayscale state, each pixel
/// repeated `scale x scale` times.
pub fn overlay_ppm(state: &Tensor, mask: &Tensor, scale: usize) -> Result<Vec<u8>> {
    let s = state.shape();
    if s.len() != 3 || mask.shape() != &s[1..] {
        return Err(dim_err(format!("overlay of state {s:?} with mask {:?}", mask.shape())));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let scale = scale.max(1);
    let plane = h * w;
    let gray: Vec<f32> = (0..plane)
        .map(|p| (0..c).map(|ch| state.data()[ch * plane + p]).sum::<f32>() / c as f32)
        .collect();
    let mut out = format!("P6\n{} {}\n255\n", w * scale, h * scale).into_bytes();
    for y in 0..h * scale {
        for x in 0..w * scale {
            let p = (y / scale) * w + x / scale;
            let m = mask.data()[p].clamp(0.0, 1.0);
            let alpha = 0.6 * m;
            let g = gray[p].clamp(0.0, 1.0);
            for hc in heat(m) {
                out.push(((g * (1.0 - alpha) + hc * alpha) * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(Error::from)
}

/// Writes `report.json`, `tables.csv`, `curves.csv` and `overlays/NNNN_actionK.ppm`.
pub fn emit_report(results: &EvalResults, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("overlays"))?;
    let report = serde_json::to_string_pretty(&report_json(results)).map_err(|e| Error::Format(e.to_string()))?;
    write_file(&dir.join("report.json"), format!("{report}\n").as_bytes())?;
    write_file(&dir.join("tables.csv"), tables_csv(results).as_bytes())?;
    write_file(&dir.join("curves.csv"), curves_csv(results).as_bytes())?;
    for o in &results.overlays {
        let name = format!("{:04}_action{}.ppm", o.index, o.action);
        write_file(&dir.join("overlays").join(name), &overlay_ppm(&o.state, &o.mask, 4)?)?;
    }
    Ok(())
}

/// Mean probability per curve point, one row per point.
pub fn curves_csv(results: &EvalResults) -> String {
    let mut out = String::from("run,method,kind,fraction,point,x,mean_p\n");
    for r in &results.runs {
        for m in &r.methods {
            for (fi, &f) in results.settings.fractions.iter().enumerate() {
                for kind in [CurveKind::Insertion, CurveKind::Deletion] {
                    let traces: Vec<&InsDelCurve> = m
                        .samples
                        .iter()
                        .map(|s| if kind == CurveKind::Insertion { &s.insertion[fi] } else { &s.deletion[fi] })
                        .collect();
                    let first = traces[0];
                    let n = *first.changed.last().unwrap_or(&1) as f64;
                    for (i, &c) in first.changed.iter().enumerate() {
                        let p = traces.iter().map(|t| t.probs[i] as f64).sum::<f64>() / traces.len() as f64;
                        let _ = writeln!(out, "{},{},{},{},{i},{},{}", r.label, m.name, kind.as_str(), sig9(f), sig9(c as f64 / n), sig9(p));
                    }
                }
            }
        }
    }
    out
}
