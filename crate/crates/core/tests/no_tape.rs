//! Baselines and evaluation run forward passes only. Kept in its own test
//! binary so no other test touches the process-wide tape counter.

use masklab::baselines::{Baseline, RiseParams};
use masklab::evalkit::{deletion_curve, insertion_curve};
use masklab::numeric::Tape;
use masklab::worlds::{BeaconPolicy, BeaconWorld, Policy, ReferenceValue};

#[test]
fn baselines_and_curves_never_build_a_tape() {
    let world = BeaconWorld::default();
    let policy = BeaconPolicy::new(&world).unwrap();
    let r = ReferenceValue::scalar(0.1);
    let g = world.generate(21, 1).unwrap().remove(0);
    let a = policy.act(&g.pixels).unwrap();
    let before = Tape::instances_created();
    let mut methods = Baseline::all_default();
    methods[0] = Baseline::Rise(RiseParams { n_masks: 300, ..Default::default() });
    for m in methods {
        let map = m.run(&policy, &g.pixels, a, &r).unwrap();
        insertion_curve(&policy, &g.pixels, a, &map.values, &r, 1.0, None).unwrap();
        deletion_curve(&policy, &g.pixels, a, &map.values, &r, 0.5, Some(1)).unwrap();
    }
    assert_eq!(Tape::instances_created(), before);
}
