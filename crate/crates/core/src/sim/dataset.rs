//! Offline rollouts labelled with the ground-truth constraint score.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use crate::constraints::{evaluate_trajectory, Motion};
use crate::dynamics::{QuadrotorParams, State, NUM_ROTORS};
use crate::error::{Error, Result};
use crate::mppi::{rollout_cost, ControlPlan, CostSpec, DEFAULT_DT};
use crate::surrogate::{
    features_from_rollout, Dataset, LabelConvention, FEATURE_DIM, FEATURE_HORIZON,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_rollouts: usize,
    /// Circular : diagonal : sinusoidal.
    pub mix: [u32; 3],
    #[serde(default)]
    pub label_convention: LabelConvention,
    /// Initial positions are drawn from the start/target bounding box grown
    /// by this much on every side, m.
    pub position_margin: f64,
    /// Half-width of each initial velocity component, m/s.
    pub velocity_range: f64,
    /// Half-width of the roll, pitch and yaw perturbation, rad.
    pub tilt_range: f64,
    /// Half-width of each initial body rate component, rad/s.
    pub angular_rate_range: f64,
    /// Standard deviation of the per-rollout constant thrust offset, N.
    pub plan_offset_sigma: f64,
    /// Standard deviation of the per-step thrust noise, N.
    pub plan_sigma: f64,
    pub dt: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 1000,
            mix: [2, 2, 1],
            label_convention: LabelConvention::Margin,
            position_margin: 1.0,
            velocity_range: 1.5,
            tilt_range: 0.3,
            angular_rate_range: 1.0,
            plan_offset_sigma: 0.3,
            plan_sigma: 0.4,
            dt: DEFAULT_DT,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rollouts == 0 {
            return Err(Error::Config("n_rollouts must be at least 1".into()));
        }
        if self.mix.iter().all(|m| *m == 0) {
            return Err(Error::Config(format!(
                "motion mix {:?} has no positive entry",
                self.mix
            )));
        }
        let ranges = [
            self.position_margin,
            self.velocity_range,
            self.tilt_range,
            self.angular_rate_range,
            self.plan_offset_sigma,
            self.plan_sigma,
        ];
        if ranges.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config(
                "dataset sampling ranges must be finite and non-negative".into(),
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Splits `n` rollouts across the three moving motion types in proportion
/// to `mix`, rounding by largest remainder (ties go to the earlier type).
pub fn motion_counts(n: usize, mix: [u32; 3]) -> [usize; 3] {
    let total: u64 = mix.iter().map(|&m| m as u64).sum();
    let mut counts = [0usize; 3];
    let mut remainders = [(0u64, 0usize); 3];
    for i in 0..3 {
        let share = n as u64 * mix[i] as u64;
        counts[i] = (share / total) as usize;
        remainders[i] = (share % total, i);
    }
    let mut left = n - counts.iter().sum::<usize>();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, i) in remainders {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub columns: usize,
    /// Rollouts per motion type, in `Motion::MOVING` order.
    pub motion_counts: [usize; 3],
    pub label_mean: f64,
    pub label_std: f64,
    pub label_min: f64,
    pub label_max: f64,
    /// Rows whose rollout stayed outside every inflated obstacle.
    pub feasible_fraction: f64,
}

impl DatasetSummary {
    fn new(targets: &[f64], counts: [usize; 3], feasible: usize) -> Self {
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        Self {
            rows: targets.len(),
            columns: FEATURE_DIM + 1,
            motion_counts: counts,
            label_mean: mean,
            label_std: (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt(),
            label_min: targets.iter().copied().fold(f64::INFINITY, f64::min),
            label_max: targets.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            feasible_fraction: feasible as f64 / n,
        }
    }
}

fn rollout_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

fn sample_initial_state<R: Rng>(rng: &mut R, scenario: &Scenario, config: &DatasetConfig) -> State {
    let mut position = Vector3::zeros();
    for axis in 0..3 {
        let lo = scenario.start[axis].min(scenario.target[axis]) - config.position_margin;
        let hi = scenario.start[axis].max(scenario.target[axis]) + config.position_margin;
        position[axis] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    }
    let roll = symmetric(rng, config.tilt_range);
    let pitch = symmetric(rng, config.tilt_range);
    let yaw = symmetric(rng, config.tilt_range);
    let q = UnitQuaternion::from_euler_angles(roll, pitch, yaw).into_inner();
    State {
        position,
        attitude: Quaternion::new(q.w, q.i, q.j, q.k),
        linear_velocity: Vector3::from_fn(|_, _| symmetric(rng, config.velocity_range)),
        angular_velocity: Vector3::from_fn(|_, _| symmetric(rng, config.angular_rate_range)),
    }
}

fn sample_plan<R: Rng>(
    rng: &mut R,
    params: &QuadrotorParams,
    config: &DatasetConfig,
) -> ControlPlan {
    let hover = params.hover_thrust();
    let offset_dist = Normal::new(0.0, config.plan_offset_sigma).expect("finite sigma");
    let step_dist = Normal::new(0.0, config.plan_sigma).expect("finite sigma");
    let offset: [f64; NUM_ROTORS] = std::array::from_fn(|_| offset_dist.sample(rng));
    let theta = (0..FEATURE_HORIZON)
        .map(|_| {
            std::array::from_fn(|r| {
                (hover + offset[r] + step_dist.sample(rng)).clamp(0.0, params.u_max)
            })
        })
        .collect();
    ControlPlan {
        theta,
        dt: config.dt,
    }
}

struct Row {
    features: Vec<f64>,
    target: f64,
    feasible: bool,
}

fn generate_row(
    index: usize,
    motion: Motion,
    scenario: &Scenario,
    config: &DatasetConfig,
    params: &QuadrotorParams,
    seed: u64,
) -> Result<Row> {
    let mut rng = rollout_rng(seed, index);
    let mut obstacles = scenario.obstacles.clone();
    for o in &mut obstacles {
        if o.motion != Motion::Stationary {
            o.motion = motion;
            o.phase = rng.gen_range(0.0..2.0 * PI);
        }
    }
    let t0 = rng.gen_range(0.0..=scenario.duration);
    let initial = sample_initial_state(&mut rng, scenario, config);
    let plan = sample_plan(&mut rng, params, config);
    let rollout = rollout_cost(&initial, &plan, &CostSpec::default(), params);
    let verdict = evaluate_trajectory(&rollout.trajectory, &obstacles, t0, config.dt);
    let target = match config.label_convention {
        LabelConvention::Margin => -verdict.min_margin,
        LabelConvention::PenaltyAverage => verdict.mean_penalty,
    };
    Ok(Row {
        features: features_from_rollout(&initial, &plan)?.into_inner(),
        target,
        feasible: !verdict.violated,
    })
}

/// Simulates `config.n_rollouts` random horizon rollouts in `scenario`,
/// labels each with the constraint score and returns the rows shuffled.
pub fn generate_dataset(
    scenario: &Scenario,
    config: &DatasetConfig,
    params: &QuadrotorParams,
    seed: u64,
) -> Result<(Dataset, DatasetSummary)> {
    config.validate()?;
    scenario.validate()?;
    params.validate()?;
    if scenario.obstacles.is_empty() {
        return Err(Error::Config(
            "dataset generation needs at least one obstacle".into(),
        ));
    }
    let counts = motion_counts(config.n_rollouts, config.mix);
    let motions: Vec<Motion> = Motion::MOVING
        .iter()
        .zip(counts)
        .flat_map(|(m, c)| std::iter::repeat_n(*m, c))
        .collect();

    let mut rows: Vec<Row> = motions
        .par_iter()
        .enumerate()
        .map(|(i, m)| generate_row(i, *m, scenario, config, params, seed))
        .collect::<Result<_>>()?;
    rows.shuffle(&mut rollout_rng(seed, 0));

    let feasible = rows.iter().filter(|r| r.feasible).count();
    let mut dataset = Dataset::default();
    for r in rows {
        dataset.push(r.features, r.target);
    }
    let summary = DatasetSummary::new(&dataset.targets, counts, feasible);
    Ok((dataset, summary))
}

pub fn write_dataset_csv<W: Write>(dataset: &Dataset, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = (0..FEATURE_DIM)
        .map(|i| format!("f{i}"))
        .chain(["target".into()])
        .collect();
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for (f, t) in dataset.features.iter().zip(&dataset.targets) {
        w.write_record(f.iter().chain([t]).map(|v| v.to_string()))
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_dataset_csv<R: Read>(input: R) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let expected = FEATURE_DIM + 1;
    let mut dataset = Dataset::default();
    for (i, record) in r.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        if record.len() != expected {
            return Err(Error::Schema {
                expected,
                found: record.len(),
                line,
            });
        }
        if i == 0 {
            if record.get(0) != Some("f0") || record.get(FEATURE_DIM) != Some("target") {
                return Err(Error::Parse(
                    "line 1: expected header f0..f112,target".into(),
                ));
            }
            continue;
        }
        let values = record
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        let (features, target) = values.split_at(FEATURE_DIM);
        dataset.push(features.to_vec(), target[0]);
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(dataset)
}

pub fn save_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset_csv(dataset, std::io::BufWriter::new(file))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset_csv(std::io::BufReader::new(file))
}
