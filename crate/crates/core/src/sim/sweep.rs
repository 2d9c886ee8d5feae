use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::{run_episode, ControllerKind, EpisodeConfig, EpisodeMetrics};
use super::scenario::{randomize_scenario, Scenario};
use crate::bc::FeasibilityModel;
use crate::error::{Error, Result};

/// Largest sample count a sweep accepts.
pub const MAX_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub scenarios: Vec<Scenario>,
    pub controllers: Vec<ControllerKind>,
    pub k_values: Vec<usize>,
    pub n_seeds: u64,
    /// Resample each scenario per seed with [`randomize_scenario`].
    pub randomize: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty()
            || self.controllers.is_empty()
            || self.k_values.is_empty()
            || self.n_seeds == 0
        {
            return Err(Error::Config(
                "a sweep needs scenarios, controllers, K values and seeds".into(),
            ));
        }
        if let Some(k) = self
            .k_values
            .iter()
            .find(|k| !(1..=MAX_SAMPLES).contains(*k))
        {
            return Err(Error::Config(format!("K = {k} outside [1, {MAX_SAMPLES}]")));
        }
        Ok(())
    }
}

/// One episode of a sweep; `metrics` is absent when the episode failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: String,
    pub obstacles: usize,
    pub controller: ControllerKind,
    pub num_samples: usize,
    pub seed: u64,
    pub metrics: Option<EpisodeMetrics>,
    pub error: Option<String>,
}

pub type MetricGetter = fn(&EpisodeMetrics) -> f64;

/// Metrics that are aggregated and plotted, with their getters.
pub const METRICS: [(&str, MetricGetter); 11] = [
    ("sim_runtime", |m| m.sim_runtime),
    ("control_frequency", |m| m.control_frequency),
    ("avg_obstacle_distance", |m| m.avg_obstacle_distance),
    ("final_target_distance", |m| m.final_target_distance),
    ("mean_target_distance", |m| m.mean_target_distance),
    ("collision_events", |m| m.collision_events as f64),
    ("constraint_violation_events", |m| {
        m.constraint_violation_events as f64
    }),
    ("rejection_rate", |m| m.rejection_rate),
    ("reached_target", |m| f64::from(u8::from(m.reached_target))),
    ("mean_feasibility", |m| m.mean_feasibility),
    ("collision_free", |m| {
        f64::from(u8::from(m.collision_events == 0))
    }),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single episode.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: String,
    pub obstacles: usize,
    pub controller: ControllerKind,
    pub num_samples: usize,
    pub episodes: usize,
    pub failed: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
}

pub(crate) fn summarize(values: &[f64]) -> MetricSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    MetricSummary { mean, std }
}

/// Means and standard deviations per (scenario, controller, K). Rows are
/// sorted by seed before summing, so the result does not depend on row order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(String, usize, ControllerKind, usize), Vec<&SweepRow>> =
        BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scenario.clone(), r.obstacles, r.controller, r.num_samples))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(
            |((scenario, obstacles, controller, num_samples), mut group)| {
                group.sort_by_key(|r| r.seed);
                let ok: Vec<&EpisodeMetrics> =
                    group.iter().filter_map(|r| r.metrics.as_ref()).collect();
                let metrics = if ok.is_empty() {
                    BTreeMap::new()
                } else {
                    METRICS
                        .iter()
                        .map(|(name, get)| {
                            let values: Vec<f64> = ok.iter().map(|m| get(m)).collect();
                            (name.to_string(), summarize(&values))
                        })
                        .collect()
                };
                Aggregate {
                    scenario,
                    obstacles,
                    controller,
                    num_samples,
                    episodes: group.len(),
                    failed: group.len() - ok.len(),
                    metrics,
                }
            },
        )
        .collect()
}

/// Runs every (scenario, controller, K, seed) combination of `spec` on top
/// of `base`, with seeds counting up from `base.seed`. Failed episodes are
/// recorded and the sweep continues.
pub fn run_sweep(
    base: &EpisodeConfig,
    spec: &SweepSpec,
    model: Option<&dyn FeasibilityModel>,
    mut progress: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for template in &spec.scenarios {
        for seed in base.seed..base.seed + spec.n_seeds {
            let scenario = if spec.randomize {
                randomize_scenario(template, seed)
            } else {
                template.clone()
            };
            for &controller in &spec.controllers {
                for &k in &spec.k_values {
                    let mut config = base.clone();
                    config.scenario = scenario.clone();
                    config.controller = controller;
                    config.mppi.num_samples = k;
                    config.seed = seed;
                    let outcome = run_episode(&config, model);
                    let row = SweepRow {
                        scenario: template.name.clone(),
                        obstacles: template.obstacles.len(),
                        controller,
                        num_samples: k,
                        seed,
                        error: outcome.as_ref().err().map(|e| e.to_string()),
                        metrics: outcome.ok().map(|r| r.metrics),
                    };
                    progress(&row);
                    rows.push(row);
                }
            }
        }
    }
    Ok(rows)
}

const ROW_FIELDS: [&str; 6] = [
    "scenario",
    "obstacles",
    "controller",
    "num_samples",
    "seed",
    "status",
];
const METRIC_FIELDS: [&str; 14] = [
    "sim_runtime",
    "control_frequency",
    "avg_obstacle_distance",
    "final_target_distance",
    "mean_target_distance",
    "collision_events",
    "constraint_violation_events",
    "rejection_rate",
    "reached_target",
    "steps",
    "diverged",
    "mean_feasibility",
    "min_feasibility",
    "all_infeasible_steps",
];

fn metric_values(m: &EpisodeMetrics) -> [String; 14] {
    [
        m.sim_runtime.to_string(),
        m.control_frequency.to_string(),
        m.avg_obstacle_distance.to_string(),
        m.final_target_distance.to_string(),
        m.mean_target_distance.to_string(),
        m.collision_events.to_string(),
        m.constraint_violation_events.to_string(),
        m.rejection_rate.to_string(),
        m.reached_target.to_string(),
        m.steps.to_string(),
        m.diverged.to_string(),
        m.mean_feasibility.to_string(),
        m.min_feasibility.to_string(),
        m.all_infeasible_steps.to_string(),
    ]
}

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ROW_FIELDS.iter().chain(&METRIC_FIELDS))
        .map_err(csv_err)?;
    for r in rows {
        let status = match &r.error {
            Some(e) => format!("failed: {e}"),
            None => "ok".into(),
        };
        let mut record = vec![
            r.scenario.clone(),
            r.obstacles.to_string(),
            r.controller.name().to_string(),
            r.num_samples.to_string(),
            r.seed.to_string(),
            status,
        ];
        match &r.metrics {
            Some(m) => record.extend(metric_values(m)),
            None => record.extend(std::iter::repeat_n(String::new(), METRIC_FIELDS.len())),
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<SweepRow>> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let headers = r
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let expected: Vec<&str> = ROW_FIELDS.iter().chain(&METRIC_FIELDS).copied().collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Schema {
            expected: expected.len(),
            found: headers.len(),
            line: 1,
        });
    }
    let mut rows = Vec::new();
    for (i, record) in r.records().enumerate() {
        let line = i + 2;
        let rec = record.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        let bad = |field: &str| Error::Parse(format!("line {line}: bad {field}"));
        let get = |idx: usize| rec.get(idx).unwrap_or("");
        let num = |idx: usize| get(idx).parse::<f64>().map_err(|_| bad(expected[idx]));
        let int = |idx: usize| get(idx).parse::<usize>().map_err(|_| bad(expected[idx]));
        let flag = |idx: usize| get(idx).parse::<bool>().map_err(|_| bad(expected[idx]));
        let status = get(5);
        let metrics = if status == "ok" {
            Some(EpisodeMetrics {
                sim_runtime: num(6)?,
                control_frequency: num(7)?,
                avg_obstacle_distance: num(8)?,
                final_target_distance: num(9)?,
                mean_target_distance: num(10)?,
                collision_events: int(11)?,
                constraint_violation_events: int(12)?,
                rejection_rate: num(13)?,
                reached_target: flag(14)?,
                steps: int(15)?,
                diverged: flag(16)?,
                mean_feasibility: num(17)?,
                min_feasibility: num(18)?,
                all_infeasible_steps: int(19)?,
            })
        } else {
            None
        };
        rows.push(SweepRow {
            scenario: get(0).to_string(),
            obstacles: int(1)?,
            controller: get(2).parse()?,
            num_samples: int(3)?,
            seed: get(4).parse().map_err(|_| bad("seed"))?,
            error: status.strip_prefix("failed: ").map(str::to_string),
            metrics,
        });
    }
    Ok(rows)
}

pub fn write_aggregates_csv<W: Write>(aggregates: &[Aggregate], out: W) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "scenario",
        "obstacles",
        "controller",
        "num_samples",
        "episodes",
        "failed",
    ]
    .map(String::from)
    .to_vec();
    for (name, _) in METRICS {
        header.push(format!("{name}_mean"));
        header.push(format!("{name}_std"));
    }
    w.write_record(&header).map_err(csv_err)?;
    for a in aggregates {
        let mut record = vec![
            a.scenario.clone(),
            a.obstacles.to_string(),
            a.controller.name().to_string(),
            a.num_samples.to_string(),
            a.episodes.to_string(),
            a.failed.to_string(),
        ];
        for (name, _) in METRICS {
            match a.metrics.get(name) {
                Some(s) => record.extend([s.mean.to_string(), s.std.to_string()]),
                None => record.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&record).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))
}

pub fn save_csv(
    path: impl AsRef<Path>,
    write: impl FnOnce(&mut Vec<u8>) -> Result<()>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut buf = Vec::new();
    write(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenario::Randomization;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn metrics(rng: &mut ChaCha8Rng) -> EpisodeMetrics {
        EpisodeMetrics {
            sim_runtime: rng.gen_range(0.1..2.0),
            control_frequency: rng.gen_range(100.0..500.0),
            avg_obstacle_distance: rng.gen_range(0.5..3.0),
            final_target_distance: rng.gen_range(0.0..2.0),
            mean_target_distance: rng.gen_range(0.0..3.0),
            collision_events: rng.gen_range(0..3),
            constraint_violation_events: rng.gen_range(0..2),
            rejection_rate: rng.gen_range(0.0..1.0),
            reached_target: rng.gen(),
            steps: 100,
            diverged: false,
            mean_feasibility: rng.gen_range(0.0..1.0),
            min_feasibility: 0.0,
            all_infeasible_steps: 0,
        }
    }

    fn rows(n: usize) -> Vec<SweepRow> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut out = vec![];
        for c in ControllerKind::ALL {
            for k in [100, 1500] {
                for seed in 0..n as u64 {
                    out.push(SweepRow {
                        scenario: "s".into(),
                        obstacles: 3,
                        controller: c,
                        num_samples: k,
                        seed,
                        metrics: Some(metrics(&mut rng)),
                        error: None,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn aggregates_match_hand_averages() {
        let rows = rows(5);
        let aggs = aggregate(&rows);
        assert_eq!(aggs.len(), 6);
        for a in &aggs {
            let mine: Vec<&EpisodeMetrics> = rows
                .iter()
                .filter(|r| r.controller == a.controller && r.num_samples == a.num_samples)
                .map(|r| r.metrics.as_ref().unwrap())
                .collect();
            assert_eq!(mine.len(), 5);
            let mut sum = 0.0;
            for m in &mine {
                sum += m.final_target_distance;
            }
            let mean = sum / 5.0;
            assert!((a.metrics["final_target_distance"].mean - mean).abs() <= 1e-12);
            let var = mine
                .iter()
                .map(|m| (m.final_target_distance - mean).powi(2))
                .sum::<f64>()
                / 4.0;
            assert!((a.metrics["final_target_distance"].std - var.sqrt()).abs() <= 1e-12);
        }
    }

    #[test]
    fn aggregation_ignores_row_order() {
        let rows = rows(4);
        let mut shuffled = rows.clone();
        shuffled.reverse();
        assert_eq!(aggregate(&rows), aggregate(&shuffled));
    }

    #[test]
    fn failed_rows_are_counted_not_averaged() {
        let mut rows = rows(3);
        rows[0].metrics = None;
        rows[0].error = Some("boom".into());
        let a = aggregate(&rows);
        let first = a
            .iter()
            .find(|a| a.controller == rows[0].controller && a.num_samples == rows[0].num_samples)
            .unwrap();
        assert_eq!((first.episodes, first.failed), (3, 1));
    }

    #[test]
    fn csv_round_trip() {
        let mut rows = rows(2);
        rows[1].metrics = None;
        rows[1].error = Some("model error, with comma".into());
        let mut buf = Vec::new();
        write_rows_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_rows_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn sweep_counts_and_degenerate_case() {
        let scenario = Scenario {
            name: "free".into(),
            start: [0.0, 0.0, 1.0],
            target: [0.5, 0.0, 1.0],
            duration: 0.1,
            obstacles: vec![],
            randomization: Randomization::default(),
        };
        let mut base = EpisodeConfig::new(scenario.clone(), ControllerKind::ClassicMppi);
        base.workers = 1;
        let spec = SweepSpec {
            scenarios: vec![scenario.clone()],
            controllers: vec![ControllerKind::ClassicMppi, ControllerKind::MppiPenalty],
            k_values: vec![4, 8],
            n_seeds: 3,
            randomize: false,
        };
        let rows = run_sweep(&base, &spec, None, |_| {}).unwrap();
        assert_eq!(rows.len(), 12);
        assert_eq!(aggregate(&rows).len(), 4);

        let single = SweepSpec {
            controllers: vec![ControllerKind::ClassicMppi],
            k_values: vec![8],
            n_seeds: 1,
            ..spec.clone()
        };
        let rows = run_sweep(&base, &single, None, |_| {}).unwrap();
        let mut direct = base.clone();
        direct.mppi.num_samples = 8;
        let episode = run_episode(&direct, None).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(
            rows[0].metrics.as_ref().unwrap().without_wall_clock(),
            episode.metrics.without_wall_clock()
        );

        // BC-MPPI without a model fails per row; the sweep carries on.
        let bc = SweepSpec {
            controllers: vec![ControllerKind::BcMppi, ControllerKind::ClassicMppi],
            ..single
        };
        let rows = run_sweep(&base, &bc, None, |_| {}).unwrap();
        assert!(rows[0].metrics.is_none() && rows[0].error.is_some());
        assert!(rows[1].metrics.is_some());
    }

    #[test]
    fn k_range_is_checked() {
        let spec = SweepSpec {
            scenarios: vec![],
            controllers: vec![ControllerKind::ClassicMppi],
            k_values: vec![0],
            n_seeds: 1,
            randomize: false,
        };
        assert!(spec.validate().is_err());
    }
}
