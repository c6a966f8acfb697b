//! Beacon-world saliency explorer for the browser.
//!
//! A [`Demo`] holds one generated state and the analytic expert. The page
//! draws a state, asks for a saliency map by method name, and plots the
//! insertion and deletion curves of that map.

use masklab::baselines::{Baseline, RiseParams};
use masklab::evalkit::{deletion_curve, insertion_curve};
use masklab::numeric::Tensor;
use masklab::worlds::{BeaconPolicy, BeaconWorld, GeneratedState, Policy, ReferenceValue, BACKGROUND};
use masklab::{Error, Result};
use wasm_bindgen::prelude::*;

fn js_err(e: Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    world: BeaconWorld,
    policy: BeaconPolicy,
    reference: ReferenceValue,
    state: GeneratedState,
    action: usize,
    saliency: Option<Tensor>,
}

impl Demo {
    pub fn create(beacons: usize, seed: u64) -> Result<Demo> {
        let world = BeaconWorld {
            beacons_per_state: beacons,
            ..Default::default()
        };
        world.validate()?;
        let policy = BeaconPolicy::new(&world)?;
        let mut demo = Demo {
            world,
            policy,
            reference: ReferenceValue::scalar(BACKGROUND),
            state: GeneratedState {
                pixels: Tensor::zeros(&[1, 1, 1]),
                beacons: Vec::new(),
            },
            action: 0,
            saliency: None,
        };
        demo.redraw(seed)?;
        Ok(demo)
    }

    pub fn redraw(&mut self, seed: u64) -> Result<()> {
        self.state = self.world.generate(seed, 1)?.remove(0);
        self.action = self.policy.act(&self.state.pixels)?;
        self.saliency = None;
        Ok(())
    }

    pub fn saliency_map(&mut self, method: &str, action: usize) -> Result<Vec<f32>> {
        if action >= self.world.actions {
            return Err(Error::Usage(format!("action {action} out of range")));
        }
        let map = if method == "ground_truth" {
            let mut m = vec![0.0f32; self.world.height * self.world.width];
            for b in self.state.beacons.iter().filter(|b| b.action == action) {
                for p in b.pixels(self.world.width) {
                    m[p] = 1.0;
                }
            }
            Tensor::new(&[self.world.height, self.world.width], m)?
        } else {
            let mut b = Baseline::parse(method)?;
            if let Baseline::Rise(p) = &mut b {
                *p = RiseParams { n_masks: 500, ..*p };
            }
            b.run(&self.policy, &self.state.pixels, action, &self.reference)?.values
        };
        let out = map.data().to_vec();
        self.saliency = Some(map);
        Ok(out)
    }

    pub fn curve_data(&self, fraction: f64) -> Result<Vec<f64>> {
        let m = self
            .saliency
            .as_ref()
            .ok_or_else(|| Error::Usage("compute a saliency map first".into()))?;
        let s = &self.state.pixels;
        let ins = insertion_curve(&self.policy, s, self.action, m, &self.reference, fraction, None)?;
        let del = deletion_curve(&self.policy, s, self.action, m, &self.reference, fraction, None)?;
        let mut out = vec![ins.probs.len() as f64];
        out.extend(ins.probs.iter().map(|&p| p as f64));
        out.extend(del.probs.iter().map(|&p| p as f64));
        out.push(ins.auc);
        out.push(del.auc);
        Ok(out)
    }
}

#[wasm_bindgen]
impl Demo {
    /// A 32x32 world with `beacons` beacons per state, showing state `seed`.
    #[wasm_bindgen(constructor)]
    pub fn new(beacons: usize, seed: u64) -> std::result::Result<Demo, JsValue> {
        Demo::create(beacons, seed).map_err(js_err)
    }

    /// Draws a fresh state and clears the current saliency map.
    pub fn generate(&mut self, seed: u64) -> std::result::Result<(), JsValue> {
        self.redraw(seed).map_err(js_err)
    }

    pub fn width(&self) -> usize {
        self.world.width
    }

    pub fn height(&self) -> usize {
        self.world.height
    }

    /// Row-major intensities of the current state.
    pub fn pixels(&self) -> Vec<f32> {
        self.state.pixels.data().to_vec()
    }

    /// Expert action probabilities; index 0 is idle.
    pub fn probs(&self) -> std::result::Result<Vec<f32>, JsValue> {
        self.policy.probs(&self.state.pixels).map_err(js_err)
    }

    pub fn action(&self) -> usize {
        self.action
    }

    /// Saliency for `action` by `method` (`ground_truth`, `rise`, `blur`,
    /// `occlusion` or `normalized_delta`), normalized to `[0,1]`.
    pub fn saliency(&mut self, method: &str, action: usize) -> std::result::Result<Vec<f32>, JsValue> {
        self.saliency_map(method, action).map_err(js_err)
    }

    /// Insertion then deletion curve of the last saliency map for the
    /// expert's action over the top `fraction` of pixels:
    /// `[n, ins..., del..., auc_ins, auc_del]`.
    pub fn curves(&self, fraction: f64) -> std::result::Result<Vec<f64>, JsValue> {
        self.curve_data(fraction).map_err(js_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ground_truth_curves_bracket_the_random_level() {
        let mut d = Demo::create(1, 7).unwrap();
        let a = d.action();
        assert!(a > 0);
        let m = d.saliency_map("ground_truth", a).unwrap();
        assert_eq!(m.len(), d.width() * d.height());
        let c = d.curve_data(1.0).unwrap();
        let n = c[0] as usize;
        assert_eq!(c.len(), 1 + 2 * n + 2);
        let (ins, del) = (c[2 * n + 1], c[2 * n + 2]);
        assert!(ins > del, "insertion {ins} deletion {del}");
    }

    #[test]
    fn every_method_yields_a_normalized_map() {
        let mut d = Demo::create(2, 3).unwrap();
        for m in ["rise", "blur", "occlusion", "normalized_delta"] {
            let s = d.saliency_map(m, d.action()).unwrap();
            assert!(s.iter().all(|v| (0.0..=1.0).contains(v)), "{m}");
        }
        assert!(d.saliency_map("nope", 0).is_err());
    }
}
