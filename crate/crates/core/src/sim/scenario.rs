use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraints::{Motion, Obstacle};
use crate::error::{Error, Result};

/// Half-widths of the uniform resampling boxes applied by
/// [`randomize_scenario`]. Zero everywhere leaves the template unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Randomization {
    #[serde(default)]
    pub target: [f64; 3],
    #[serde(default)]
    pub anchor: [f64; 3],
    /// Moving obstacles only, rad.
    #[serde(default)]
    pub phase: f64,
}

impl Randomization {
    fn validate(&self) -> Result<()> {
        let ok = self
            .target
            .iter()
            .chain(&self.anchor)
            .chain([&self.phase])
            .all(|v| *v >= 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(
                "randomization half-widths must be finite and non-negative".into(),
            ))
        }
    }
}

fn default_duration() -> f64 {
    15.0
}

/// Start pose, target, obstacles and randomization ranges of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub start: [f64; 3],
    pub target: [f64; 3],
    /// Episode length, s.
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default, rename = "obstacle")]
    pub obstacles: Vec<Obstacle>,
    #[serde(default)]
    pub randomization: Randomization,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !self.start.iter().chain(&self.target).all(|v| v.is_finite()) {
            return Err(Error::Config("start and target must be finite".into()));
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Config(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            o.validate()
                .map_err(|e| Error::Config(format!("obstacle {i}: {e}")))?;
        }
        self.randomization.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse(m) | Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn start_distance(&self) -> f64 {
        (Vector3::from(self.target) - Vector3::from(self.start)).norm()
    }

    /// Number of obstacles with a moving motion type.
    pub fn moving_obstacles(&self) -> usize {
        self.obstacles
            .iter()
            .filter(|o| o.motion != Motion::Stationary)
            .count()
    }
}

fn jitter<R: Rng>(rng: &mut R, centre: f64, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(centre - half_width..=centre + half_width)
    } else {
        centre
    }
}

/// Resamples the target, obstacle anchors and moving-obstacle phases
/// uniformly within the template's ranges.
pub fn randomize_scenario(template: &Scenario, seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &template.randomization;
    let mut out = template.clone();
    for (t, h) in out.target.iter_mut().zip(r.target) {
        *t = jitter(&mut rng, *t, h);
    }
    for o in &mut out.obstacles {
        for (a, h) in o.anchor.iter_mut().zip(r.anchor) {
            *a = jitter(&mut rng, *a, h);
        }
        if o.motion != Motion::Stationary {
            o.phase = jitter(&mut rng, o.phase, r.phase);
        }
    }
    out
}
