//! Synthetic environments, frozen experts, preprocessing and demonstrations.

mod beacon;
mod dataset;
mod policy;
mod preprocess;

use std::path::Path;

pub use beacon::{record_rng, zone_layout, Beacon, BeaconWorld, GeneratedState, Rect, BACKGROUND, BEACON_MAX, BEACON_MIN};
pub use dataset::{collect_demonstrations, Dataset, Demonstration, PolicyKind, Split, MIN_RECORDS, SCHEMA_VERSION};
pub use policy::{agreement, train_tiny_cnn, BeaconPolicy, Policy, TinyCnnConfig, TinyCnnPolicy, BEACON_GAIN, BRIGHTNESS_GATE};
pub use preprocess::{preprocess, resize, rgb_to_grayscale, DEFAULT_SIZE, LUMA_WEIGHTS};

use crate::error::{dim_err, Error, Result};
use crate::numeric::{Tape, Tensor, Var};

/// Fill used for de-emphasised pixels.
#[derive(Clone, Debug, PartialEq)]
pub enum ReferenceValue {
    /// One constant per channel (a single entry is broadcast to all channels).
    Constant(Vec<f32>),
    /// A full `[C,H,W]` reference image.
    Image(Tensor),
}

impl ReferenceValue {
    pub fn scalar(v: f32) -> Self {
        ReferenceValue::Constant(vec![v])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: &f32| (0.0..=1.0).contains(v);
        let fine = match self {
            ReferenceValue::Constant(vs) => !vs.is_empty() && vs.iter().all(ok),
            ReferenceValue::Image(t) => t.data().iter().all(ok),
        };
        if !fine {
            return Err(Error::Contract("reference values must lie in [0,1]".into()));
        }
        Ok(())
    }

    /// Reference as a `[C,H,W]` image.
    pub fn image(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.len() != 3 {
            return Err(dim_err(format!("reference image shape must be [C,H,W], got {shape:?}")));
        }
        match self {
            ReferenceValue::Constant(vs) => {
                if vs.len() != 1 && vs.len() != shape[0] {
                    return Err(dim_err(format!("{} reference channels for {} image channels", vs.len(), shape[0])));
                }
                let plane = shape[1] * shape[2];
                let data = (0..shape[0])
                    .flat_map(|c| {
                        let v = if vs.len() == 1 { vs[0] } else { vs[c] };
                        std::iter::repeat_n(v, plane)
                    })
                    .collect();
                Tensor::new(shape, data)
            }
            ReferenceValue::Image(t) => {
                if t.shape() != shape {
                    return Err(dim_err(format!("reference image {:?} vs state {shape:?}", t.shape())));
                }
                Ok(t.clone())
            }
        }
    }
}

/// Reference fill that mimics the environment background.
pub fn reference_value_for(_world: &BeaconWorld) -> ReferenceValue {
    ReferenceValue::scalar(BACKGROUND)
}

/// Any frozen expert this crate can load.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyModel {
    Beacon(BeaconPolicy),
    TinyCnn(TinyCnnPolicy),
}

impl PolicyModel {
    pub fn kind(&self) -> PolicyKind {
        match self {
            PolicyModel::Beacon(_) => PolicyKind::AnalyticBeacon,
            PolicyModel::TinyCnn(_) => PolicyKind::TinyCnn,
        }
    }

    /// Rebuilds the expert recorded in a dataset directory.
    pub fn for_dataset(ds: &Dataset, dir: &Path) -> Result<Self> {
        match ds.policy_kind {
            PolicyKind::AnalyticBeacon => Ok(PolicyModel::Beacon(BeaconPolicy::new(&ds.world)?)),
            PolicyKind::TinyCnn => Ok(PolicyModel::TinyCnn(TinyCnnPolicy::load(&dir.join("policy.vmc"))?)),
        }
    }

    fn inner(&self) -> &dyn Policy {
        match self {
            PolicyModel::Beacon(p) => p,
            PolicyModel::TinyCnn(p) => p,
        }
    }
}

impl Policy for PolicyModel {
    fn num_actions(&self) -> usize {
        self.inner().num_actions()
    }

    fn state_shape(&self) -> [usize; 3] {
        self.inner().state_shape()
    }

    fn predict(&self, states: &Tensor) -> Result<Tensor> {
        self.inner().predict(states)
    }

    fn forward(&self, tape: &mut Tape, states: Var) -> Result<Var> {
        self.inner().forward(tape, states)
    }
}
