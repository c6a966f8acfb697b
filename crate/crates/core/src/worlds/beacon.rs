//! Beacon world: a dark field with bright square patches.
//!
//! The field is split into `K - 1` rectangular zones, one per non-idle action.
//! A beacon inside zone `z` drives action `z + 1`; action 0 is the idle action
//! chosen when nothing is lit. Because the analytic policy only reads pixels
//! brighter than the background, the annotated beacon pixels are exactly the
//! pixels that matter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Background intensity of every non-beacon pixel.
pub const BACKGROUND: f32 = 0.1;
/// Range of beacon intensities.
pub const BEACON_MIN: f32 = 0.8;
pub const BEACON_MAX: f32 = 1.0;

const PLACEMENT_RETRIES: usize = 1000;

/// Axis-aligned pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    pub fn intersects(&self, other: &Rect) -> bool {
        self.top < other.top + other.height
            && other.top < self.top + self.height
            && self.left < other.left + other.width
            && other.left < self.left + self.width
    }

    /// Row-major pixel indices in a field of the given width.
    pub fn pixels(&self, field_width: usize) -> Vec<usize> {
        (self.top..self.top + self.height)
            .flat_map(|y| (self.left..self.left + self.width).map(move |x| y * field_width + x))
            .collect()
    }
}

/// Ground-truth annotation of one lit beacon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Beacon {
    /// Action this beacon drives.
    pub action: usize,
    pub rect: Rect,
    pub brightness: f32,
}

impl Beacon {
    pub fn pixels(&self, field_width: usize) -> Vec<usize> {
        self.rect.pixels(field_width)
    }
}

/// Parameters of the synthetic environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeaconWorld {
    pub height: usize,
    pub width: usize,
    /// Number of actions including the idle action 0.
    pub actions: usize,
    pub beacons_per_state: usize,
    pub beacon_size: usize,
    /// Discount factor of the underlying decision process. Carried as
    /// metadata; nothing here consumes returns.
    pub gamma: f32,
}

impl Default for BeaconWorld {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            actions: 5,
            beacons_per_state: 1,
            beacon_size: 4,
            gamma: 0.99,
        }
    }
}

/// One generated state with its annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedState {
    /// `[1,H,W]` intensities in `[0,1]`.
    pub pixels: Tensor,
    pub beacons: Vec<Beacon>,
}

impl BeaconWorld {
    pub fn validate(&self) -> Result<()> {
        if self.actions < 2 {
            return Err(Error::Config("beacon world needs at least 2 actions".into()));
        }
        if self.height == 0 || self.width == 0 || self.beacon_size == 0 {
            return Err(Error::Config("beacon world dimensions must be positive".into()));
        }
        let area = self.beacon_size * self.beacon_size;
        if self.beacons_per_state * area * 4 >= self.height * self.width {
            return Err(Error::Config(format!(
                "{} beacons of area {area} exceed a quarter of the {}x{} field",
                self.beacons_per_state, self.height, self.width
            )));
        }
        if self.zones().iter().any(|z| z.height < self.beacon_size || z.width < self.beacon_size) {
            return Err(Error::Config("beacon does not fit inside a zone".into()));
        }
        Ok(())
    }

    pub fn beacon_area(&self) -> usize {
        self.beacon_size * self.beacon_size
    }

    /// Zone rectangles; zone `z` drives action `z + 1`.
    pub fn zones(&self) -> Vec<Rect> {
        zone_layout(self.actions - 1, self.height, self.width)
    }

    /// Uniform background state with no beacons.
    pub fn blank(&self) -> Tensor {
        Tensor::full(&[1, self.height, self.width], BACKGROUND)
    }

    /// Renders a state from beacon annotations.
    pub fn render(&self, beacons: &[Beacon]) -> Tensor {
        let mut img = self.blank();
        let w = self.width;
        for b in beacons {
            for p in b.pixels(w) {
                img.data_mut()[p] = b.brightness;
            }
        }
        img
    }

    /// Generates one state from its own random stream.
    pub fn generate_one(&self, rng: &mut impl Rng) -> Result<GeneratedState> {
        self.validate()?;
        let zones = self.zones();
        let mut beacons: Vec<Beacon> = Vec::with_capacity(self.beacons_per_state);
        let s = self.beacon_size;
        for _ in 0..self.beacons_per_state {
            let mut placed = false;
            for _ in 0..PLACEMENT_RETRIES {
                let z = rng.gen_range(0..zones.len());
                let zone = zones[z];
                let top = zone.top + rng.gen_range(0..=zone.height - s);
                let left = zone.left + rng.gen_range(0..=zone.width - s);
                let rect = Rect { top, left, height: s, width: s };
                // keep a one-pixel gap so beacons never touch
                let padded = Rect {
                    top: top.saturating_sub(1),
                    left: left.saturating_sub(1),
                    height: s + 2,
                    width: s + 2,
                };
                if beacons.iter().any(|b| b.rect.intersects(&padded)) {
                    continue;
                }
                let brightness = rng.gen_range(BEACON_MIN..=BEACON_MAX);
                beacons.push(Beacon { action: z + 1, rect, brightness });
                placed = true;
                break;
            }
            if !placed {
                return Err(Error::Generation(format!(
                    "could not place beacon {} after {PLACEMENT_RETRIES} attempts",
                    beacons.len()
                )));
            }
        }
        Ok(GeneratedState {
            pixels: self.render(&beacons),
            beacons,
        })
    }

    /// Generates `n` states. Record `i` uses its own generator derived from
    /// `(seed, i)`, so results do not depend on scheduling.
    pub fn generate(&self, seed: u64, n: usize) -> Result<Vec<GeneratedState>> {
        self.validate()?;
        (0..n)
            .into_par_iter()
            .map(|i| self.generate_one(&mut record_rng(seed, i as u64)))
            .collect()
    }
}

/// Independent generator for record `index` of a run seeded with `seed`.
pub fn record_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng
}

/// Splits the field into `zones` near-square cells laid out row-major.
pub fn zone_layout(zones: usize, height: usize, width: usize) -> Vec<Rect> {
    if zones == 0 {
        return Vec::new();
    }
    let cols = (zones as f64).sqrt().ceil() as usize;
    let rows = zones.div_ceil(cols);
    (0..zones)
        .map(|z| {
            let (r, c) = (z / cols, z % cols);
            let top = r * height / rows;
            let bottom = (r + 1) * height / rows;
            let left = c * width / cols;
            let right = (c + 1) * width / cols;
            Rect {
                top,
                left,
                height: bottom - top,
                width: right - left,
            }
        })
        .collect()
}
