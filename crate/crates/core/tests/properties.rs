use masklab::baselines::{blur_saliency, occlusion_saliency, rise_saliency, Baseline, BlurParams, RiseParams};
use masklab::evalkit::{counterfactual, deletion_curve, insertion_curve, pixel_order};
use masklab::explainer::{overlay, split_masks, Explainer, ExplainerConfig, MaskSet};
use masklab::numeric::Tensor;
use masklab::worlds::{BeaconPolicy, BeaconWorld, GeneratedState, Policy, ReferenceValue};
use proptest::prelude::*;

fn tensor(shape: &[usize], lo: f32, hi: f32) -> impl Strategy<Value = Tensor> {
    let shape = shape.to_vec();
    let n: usize = shape.iter().product();
    proptest::collection::vec(lo..hi, n).prop_map(move |v| Tensor::new(&shape, v).unwrap())
}

/// Masks on a 1/256 grid, so squaring cannot merge distinct values.
fn grid_mask(h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    proptest::collection::vec(1u32..=256, h * w)
        .prop_map(move |v| Tensor::new(&[h, w], v.into_iter().map(|q| q as f32 / 256.0).collect()).unwrap())
}

fn small_world() -> BeaconWorld {
    BeaconWorld {
        height: 12,
        width: 12,
        actions: 3,
        beacon_size: 3,
        ..Default::default()
    }
}

fn beacon_mask(world: &BeaconWorld, g: &GeneratedState) -> Vec<bool> {
    let mut on = vec![false; world.height * world.width];
    for b in &g.beacons {
        for p in b.pixels(world.width) {
            on[p] = true;
        }
    }
    on
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn overlay_of_mask_and_complement_sums_to_state_plus_reference(
        s in tensor(&[1, 6, 5], 0.0, 1.0),
        m in tensor(&[6, 5], 0.0, 1.0),
        r in 0.0f32..1.0,
    ) {
        let r = ReferenceValue::scalar(r);
        let inv = Tensor::new(&[6, 5], m.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        let a = overlay(&s, &m, &r).unwrap();
        let b = overlay(&s, &inv, &r).unwrap();
        let rv = r.image(s.shape()).unwrap();
        for i in 0..s.numel() {
            let lhs = a.data()[i] + b.data()[i];
            let rhs = s.data()[i] + rv.data()[i];
            prop_assert!((lhs - rhs).abs() <= 1e-6, "pixel {i}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn explainer_masks_lie_strictly_inside_unit_interval(seed in 0u64..1000, s in tensor(&[1, 8, 8], 0.0, 1.0)) {
        let mut ex = Explainer::init(ExplainerConfig::new([1, 8, 8], 3).with_hidden(4), seed).unwrap();
        for (_, t) in ex.params_mut().iter_mut() {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                *v += ((seed as usize * 31 + i * 17) % 13) as f32 / 13.0 - 0.5;
            }
        }
        let m = ex.explain(&s).unwrap();
        prop_assert!(m.tensor().data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn non_target_mask_is_pointwise_max_of_inactive_masks(m in tensor(&[4, 5, 5], 0.0, 1.0), a in 0usize..4) {
        let set = MaskSet::new(m.clone()).unwrap();
        let split = split_masks(&set, a).unwrap();
        for p in 0..25 {
            let inactive: Vec<f32> = (0..4).filter(|&k| k != a).map(|k| m.data()[k * 25 + p]).collect();
            let n = split.non_target.data()[p];
            prop_assert!(inactive.iter().all(|&v| n >= v));
            prop_assert!(inactive.contains(&n));
        }
    }

    #[test]
    fn curves_depend_only_on_pixel_order(seed in 0u64..500, m in grid_mask(12, 12), alpha in prop::sample::select(vec![0.25, 0.5, 1.0])) {
        let world = small_world();
        let policy = BeaconPolicy::new(&world).unwrap();
        let g = world.generate(seed, 1).unwrap().remove(0);
        let a = policy.act(&g.pixels).unwrap();
        let r = ReferenceValue::scalar(0.1);
        let m2 = Tensor::new(&[12, 12], m.data().iter().map(|v| v * v * 0.5).collect()).unwrap();
        prop_assert_eq!(pixel_order(&m), pixel_order(&m2));
        for curve in [insertion_curve, deletion_curve] {
            let x = curve(&policy, &g.pixels, a, &m, &r, alpha, Some(1)).unwrap();
            let y = curve(&policy, &g.pixels, a, &m2, &r, alpha, Some(1)).unwrap();
            prop_assert_eq!(x.auc, y.auc);
        }
    }

    #[test]
    fn full_curves_share_endpoints_and_stay_in_range(seed in 0u64..500, m in tensor(&[12, 12], 0.0, 1.0), step in prop::option::of(1usize..20)) {
        let world = small_world();
        let policy = BeaconPolicy::new(&world).unwrap();
        let g = world.generate(seed, 1).unwrap().remove(0);
        let a = policy.act(&g.pixels).unwrap();
        let r = ReferenceValue::scalar(0.1);
        let pa = policy.probs(&g.pixels).unwrap()[a];
        let pr = policy.probs(&r.image(g.pixels.shape()).unwrap()).unwrap()[a];
        let ins = insertion_curve(&policy, &g.pixels, a, &m, &r, 1.0, step).unwrap();
        let del = deletion_curve(&policy, &g.pixels, a, &m, &r, 1.0, step).unwrap();
        prop_assert!((ins.probs[0] - pr).abs() <= 1e-6);
        prop_assert!((ins.probs.last().unwrap() - pa).abs() <= 1e-6);
        prop_assert!((del.probs[0] - pa).abs() <= 1e-6);
        prop_assert!((del.probs.last().unwrap() - pr).abs() <= 1e-6);
        for c in [&ins, &del] {
            prop_assert!((0.0..=1.0).contains(&c.auc));
            prop_assert!(c.probs.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert_eq!(*c.changed.last().unwrap(), 144);
        }
    }

    #[test]
    fn counterfactual_changes_exactly_the_region(s in tensor(&[1, 12, 12], 0.3, 1.0), m in tensor(&[12, 12], 0.0, 1.0), theta in 0.2f64..0.8) {
        let world = small_world();
        let policy = BeaconPolicy::new(&world).unwrap();
        let r = ReferenceValue::scalar(0.1);
        let cut = theta * m.data().iter().copied().fold(0.0f32, f32::max) as f64;
        for cf in counterfactual(&policy, &s, &m, &r, theta, 3).unwrap() {
            let mut expect: Vec<usize> = cf.region.pixels.clone();
            expect.sort_unstable();
            let diff: Vec<usize> = (0..144).filter(|&p| cf.modified.data()[p] != s.data()[p]).collect();
            prop_assert_eq!(diff, expect);
            prop_assert!(cf.region.pixels.iter().all(|&p| m.data()[p] as f64 >= cut));
        }
    }
}

#[test]
fn every_baseline_puts_a_beacon_pixel_in_its_top_five_percent() {
    let world = BeaconWorld::default();
    let policy = BeaconPolicy::new(&world).unwrap();
    let r = ReferenceValue::scalar(0.1);
    let n = world.height * world.width;
    let top = (n as f64 * 0.05).ceil() as usize;
    for (i, g) in world.generate(314, 20).unwrap().iter().enumerate() {
        let a = policy.act(&g.pixels).unwrap();
        let on = beacon_mask(&world, g);
        for method in Baseline::all_default() {
            let map = method.run(&policy, &g.pixels, a, &r).unwrap();
            let hit = pixel_order(&map.values).iter().take(top).any(|&p| on[p]);
            assert!(hit, "state {i}: {} misses every beacon pixel", method.name());
        }
    }
}

#[test]
fn rise_prefers_beacon_pixels() {
    let world = BeaconWorld::default();
    let policy = BeaconPolicy::new(&world).unwrap();
    let r = ReferenceValue::scalar(0.1);
    for g in world.generate(5, 5).unwrap() {
        let a = policy.act(&g.pixels).unwrap();
        let map = rise_saliency(&policy, &g.pixels, a, &RiseParams::default(), &r).unwrap();
        let on = beacon_mask(&world, &g);
        let mean = |want: bool| {
            let v: Vec<f32> = (0..on.len()).filter(|&p| on[p] == want).map(|p| map.values.data()[p]).collect();
            v.iter().sum::<f32>() / v.len() as f32
        };
        assert!(mean(true) > mean(false), "beacon {} vs background {}", mean(true), mean(false));
    }
}

#[test]
fn blur_peak_touches_a_beacon() {
    let world = BeaconWorld::default();
    let policy = BeaconPolicy::new(&world).unwrap();
    let params = BlurParams::default();
    for g in world.generate(8, 10).unwrap() {
        let a = policy.act(&g.pixels).unwrap();
        let map = blur_saliency(&policy, &g.pixels, a, &params).unwrap();
        let p = pixel_order(&map.values)[0];
        let (y, x) = (p / world.width, p % world.width);
        // within one grid cell of a beacon
        let near = g.beacons.iter().any(|b| {
            let rr = &b.rect;
            y + params.stride >= rr.top
                && y < rr.top + rr.height + params.stride
                && x + params.stride >= rr.left
                && x < rr.left + rr.width + params.stride
        });
        assert!(near, "peak at ({y},{x}) far from {:?}", g.beacons);
    }
}

#[test]
fn occlusion_is_shift_equivariant_away_from_borders() {
    let world = BeaconWorld::default();
    let policy = BeaconPolicy::new(&world).unwrap();
    let r = ReferenceValue::scalar(0.1);
    let mut base = vec![0.1f32; 32 * 32];
    for y in 10..14 {
        for x in 10..14 {
            base[y * 32 + x] = 0.9;
        }
    }
    let shifted: Vec<f32> = (0..32 * 32)
        .map(|p| {
            let (y, x) = (p / 32, p % 32);
            if y >= 1 && x >= 2 {
                base[(y - 1) * 32 + x - 2]
            } else {
                0.1
            }
        })
        .collect();
    let a_state = Tensor::new(&[1, 32, 32], base).unwrap();
    let b_state = Tensor::new(&[1, 32, 32], shifted).unwrap();
    let a = policy.act(&a_state).unwrap();
    assert_eq!(policy.act(&b_state).unwrap(), a);
    let ma = occlusion_saliency(&policy, &a_state, a, 5, &r).unwrap();
    let mb = occlusion_saliency(&policy, &b_state, a, 5, &r).unwrap();
    for y in 6..18 {
        for x in 6..18 {
            let u = ma.values.data()[y * 32 + x] * ma.scale;
            let v = mb.values.data()[(y + 1) * 32 + x + 2] * mb.scale;
            assert!((u - v).abs() <= 1e-5, "({y},{x}): {u} vs {v}");
        }
    }
}
