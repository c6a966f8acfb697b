//! Expert demonstrations and their on-disk layout.
//!
//! A dataset directory holds:
//! - `manifest.txt`: UTF-8 `key: value` lines (schema, sizes, seed, split
//!   indices and the generating environment's parameters),
//! - `records/NNNNN.vmt`: the state tensor followed by the action
//!   distribution tensor, both `VMT1`,
//! - `actions.bin`: little-endian `u32` actions,
//! - `annotations.txt`: ground-truth beacons, one per line,
//! - `policy.vmc`: the frozen expert when it is a learned model.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::beacon::{Beacon, BeaconWorld, Rect};
use super::policy::Policy;
use crate::error::{Error, Result};
use crate::numeric::{argmax, io, Tensor};

pub const SCHEMA_VERSION: u32 = 1;
/// Smallest dataset [`collect_demonstrations`] accepts.
pub const MIN_RECORDS: usize = 10;

/// One state with the expert's greedy action and full distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    /// `[C,H,W]`.
    pub state: Tensor,
    pub action: usize,
    pub action_dist: Vec<f32>,
}

impl Demonstration {
    pub fn new(state: Tensor, action_dist: Vec<f32>) -> Self {
        let action = argmax(&action_dist);
        Self {
            state,
            action,
            action_dist,
        }
    }
}

/// Disjoint train/valid/test index lists.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// 80/10/10 split of `0..n` by a seeded shuffle; each list is sorted.
    pub fn seeded(n: usize, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x0005_9117));
        let n_valid = (n as f64 * 0.1).round() as usize;
        let n_test = (n as f64 * 0.1).round() as usize;
        let n_train = n - n_valid - n_test;
        let mut train = idx[..n_train].to_vec();
        let mut valid = idx[n_train..n_train + n_valid].to_vec();
        let mut test = idx[n_train + n_valid..].to_vec();
        train.sort_unstable();
        valid.sort_unstable();
        test.sort_unstable();
        Self { train, valid, test }
    }
}

/// Which frozen expert produced a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    AnalyticBeacon,
    TinyCnn,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::AnalyticBeacon => "analytic-beacon",
            PolicyKind::TinyCnn => "tiny-cnn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "analytic-beacon" | "analytic" | "beacon" => Ok(PolicyKind::AnalyticBeacon),
            "tiny-cnn" => Ok(PolicyKind::TinyCnn),
            other => Err(Error::Config(format!("unknown policy kind {other:?}"))),
        }
    }
}

/// Demonstrations plus the split and the environment that generated them.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<Demonstration>,
    /// Ground-truth beacons per record.
    pub annotations: Vec<Vec<Beacon>>,
    pub split: Split,
    pub seed: u64,
    pub world: BeaconWorld,
    pub policy_kind: PolicyKind,
    /// Additional manifest entries echoed verbatim.
    pub extra: BTreeMap<String, String>,
}

/// Runs `policy` on `n` freshly generated states.
pub fn collect_demonstrations(policy: &dyn Policy, world: &BeaconWorld, n: usize, seed: u64) -> Result<Dataset> {
    if n < MIN_RECORDS {
        return Err(Error::Usage(format!("need at least {MIN_RECORDS} records, asked for {n}")));
    }
    let generated = world.generate(seed, n)?;
    let mut records = Vec::with_capacity(n);
    for chunk in generated.chunks(64) {
        let imgs: Vec<&Tensor> = chunk.iter().map(|g| &g.pixels).collect();
        let probs = policy.predict(&Tensor::stack(&imgs)?)?;
        let k = policy.num_actions();
        for (g, row) in chunk.iter().zip(probs.data().chunks(k)) {
            records.push(Demonstration::new(g.pixels.clone(), row.to_vec()));
        }
    }
    Ok(Dataset {
        records,
        annotations: generated.into_iter().map(|g| g.beacons).collect(),
        split: Split::seeded(n, seed),
        seed,
        world: world.clone(),
        policy_kind: PolicyKind::AnalyticBeacon,
        extra: BTreeMap::new(),
    })
}

fn join(idx: &[usize]) -> String {
    idx.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|v| v.trim().parse().map_err(|e| Error::Format(format!("bad index {v:?}: {e}"))))
        .collect()
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_actions(&self) -> usize {
        self.world.actions
    }

    pub fn subset(&self, idx: &[usize]) -> Vec<&Demonstration> {
        idx.iter().map(|&i| &self.records[i]).collect()
    }

    /// Manifest as ordered key/value pairs.
    pub fn manifest(&self) -> Vec<(String, String)> {
        let shape = self.records.first().map(|r| r.state.shape().to_vec()).unwrap_or_else(|| vec![1, self.world.height, self.world.width]);
        let mut m = vec![
            ("schema_version".to_string(), SCHEMA_VERSION.to_string()),
            ("count".into(), self.records.len().to_string()),
            ("K".into(), self.world.actions.to_string()),
            ("W".into(), shape[2].to_string()),
            ("H".into(), shape[1].to_string()),
            ("C".into(), shape[0].to_string()),
            ("seed".into(), self.seed.to_string()),
            ("env".into(), "beacon".into()),
            ("beacons_per_state".into(), self.world.beacons_per_state.to_string()),
            ("beacon_size".into(), self.world.beacon_size.to_string()),
            ("gamma".into(), self.world.gamma.to_string()),
            ("policy".into(), self.policy_kind.as_str().into()),
            ("train".into(), join(&self.split.train)),
            ("valid".into(), join(&self.split.valid)),
            ("test".into(), join(&self.split.test)),
        ];
        m.extend(self.extra.iter().map(|(k, v)| (k.clone(), v.clone())));
        m
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join("records"))?;
        let mut manifest = String::new();
        for (k, v) in self.manifest() {
            writeln!(manifest, "{k}: {v}").expect("write to string");
        }
        fs::write(dir.join("manifest.txt"), manifest)?;
        let mut actions = Vec::with_capacity(self.records.len() * 4);
        for (i, r) in self.records.iter().enumerate() {
            let mut buf = Vec::new();
            io::write_tensor(&mut buf, &r.state)?;
            io::write_tensor(&mut buf, &Tensor::new(&[r.action_dist.len()], r.action_dist.clone())?)?;
            fs::write(dir.join("records").join(format!("{i:05}.vmt")), buf)?;
            actions.extend_from_slice(&(r.action as u32).to_le_bytes());
        }
        fs::write(dir.join("actions.bin"), actions)?;
        let mut ann = String::from("# record action top left height width brightness\n");
        for (i, beacons) in self.annotations.iter().enumerate() {
            for b in beacons {
                writeln!(
                    ann,
                    "{i} {} {} {} {} {} {}",
                    b.action, b.rect.top, b.rect.left, b.rect.height, b.rect.width, b.brightness
                )
                .expect("write to string");
            }
        }
        fs::write(dir.join("annotations.txt"), ann)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut kv = BTreeMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once(':')
                .ok_or_else(|| Error::Format(format!("manifest line without ':' {line:?}")))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::Format(format!("manifest lacks {k}")));
        let num = |s: String, k: &str| -> Result<usize> { s.parse().map_err(|e| Error::Format(format!("{k}: {e}"))) };
        let version = num(take("schema_version")?, "schema_version")?;
        if version != SCHEMA_VERSION as usize {
            return Err(Error::Format(format!("unsupported schema_version {version}")));
        }
        let count = num(take("count")?, "count")?;
        let world = BeaconWorld {
            height: num(take("H")?, "H")?,
            width: num(take("W")?, "W")?,
            actions: num(take("K")?, "K")?,
            beacons_per_state: num(take("beacons_per_state")?, "beacons_per_state")?,
            beacon_size: num(take("beacon_size")?, "beacon_size")?,
            gamma: take("gamma")?.parse().map_err(|e| Error::Format(format!("gamma: {e}")))?,
        };
        let seed = take("seed")?.parse().map_err(|e| Error::Format(format!("seed: {e}")))?;
        let policy_kind = PolicyKind::parse(&take("policy")?)?;
        let split = Split {
            train: parse_list(&take("train")?)?,
            valid: parse_list(&take("valid")?)?,
            test: parse_list(&take("test")?)?,
        };
        for k in ["C", "env"] {
            take(k)?;
        }
        let extra = kv;

        let actions = fs::read(dir.join("actions.bin"))?;
        if actions.len() != count * 4 {
            return Err(Error::Format(format!("actions.bin holds {} bytes for {count} records", actions.len())));
        }
        let mut records = Vec::with_capacity(count);
        for i in 0..count {
            let bytes = fs::read(dir.join("records").join(format!("{i:05}.vmt")))?;
            let mut r = bytes.as_slice();
            let state = io::read_tensor(&mut r)?;
            let dist = io::read_tensor(&mut r)?.into_data();
            let action = u32::from_le_bytes(actions[i * 4..i * 4 + 4].try_into().expect("4 bytes")) as usize;
            records.push(Demonstration {
                state,
                action,
                action_dist: dist,
            });
        }
        let mut annotations = vec![Vec::new(); count];
        let ann = fs::read_to_string(dir.join("annotations.txt"))?;
        for line in ann.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 7 {
                return Err(Error::Format(format!("bad annotation line {line:?}")));
            }
            let u = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("annotation {s:?}: {e}")));
            let rec = u(f[0])?;
            if rec >= count {
                return Err(Error::Format(format!("annotation for missing record {rec}")));
            }
            annotations[rec].push(Beacon {
                action: u(f[1])?,
                rect: Rect {
                    top: u(f[2])?,
                    left: u(f[3])?,
                    height: u(f[4])?,
                    width: u(f[5])?,
                },
                brightness: f[6].parse().map_err(|e| Error::Format(format!("brightness: {e}")))?,
            });
        }
        Ok(Self {
            records,
            annotations,
            split,
            seed,
            world,
            policy_kind,
            extra,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worlds::BeaconPolicy;

    #[test]
    fn ten_records_split_eight_one_one() {
        let s = Split::seeded(10, 3);
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (8, 1, 1));
    }

    #[test]
    fn split_is_a_reproducible_partition() {
        for n in [10, 11, 15, 19, 2000] {
            let s = Split::seeded(n, 42);
            assert_eq!(s, Split::seeded(n, 42));
            let mut all: Vec<usize> = s.train.iter().chain(&s.valid).chain(&s.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            let tenth = n as f64 * 0.1;
            assert!((s.valid.len() as f64 - tenth).abs() <= 1.0);
            assert!((s.test.len() as f64 - tenth).abs() <= 1.0);
            assert!((s.train.len() as f64 - 8.0 * tenth).abs() <= 1.0);
        }
    }

    #[test]
    fn actions_are_greedy_and_save_round_trips() {
        let world = BeaconWorld::default();
        let policy = BeaconPolicy::new(&world).unwrap();
        let ds = collect_demonstrations(&policy, &world, 12, 9).unwrap();
        for r in &ds.records {
            assert_eq!(r.action, argmax(&r.action_dist));
        }
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.records, ds.records);
        assert_eq!(back.annotations, ds.annotations);
        assert_eq!(back.split, ds.split);
        assert_eq!(back.world, ds.world);
    }

    #[test]
    fn too_few_records_is_rejected() {
        let world = BeaconWorld::default();
        let policy = BeaconPolicy::new(&world).unwrap();
        assert!(collect_demonstrations(&policy, &world, 9, 1).is_err());
    }
}
