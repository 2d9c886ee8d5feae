use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bcmppi::sim::{
    aggregate, generate_dataset, load_dataset, randomize_scenario, read_rows_csv, run_episode,
    run_sweep, save_csv, save_dataset, write_aggregates_csv, write_diagnostics_csv, write_report,
    write_rows_csv, write_trace_csv, ControllerKind, SweepRow, SweepSpec,
};
use bcmppi::surrogate::{split_indices, train as train_ensemble, SurrogateEnsemble};
use log::info;
use serde_json::json;

use crate::config::{ExperimentConfig, OUT_DIR_ENV};
use crate::{Common, ConfigError};

fn setup(common: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(w) = common.workers {
        config.workers = w;
    }
    if let Some(out) = &common.out {
        config.output_dir = Some(out.clone());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build_global()
        .context("starting worker pool")?;
    Ok(config)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn parse_mix(text: &str) -> Result<[u32; 3]> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || ConfigError(format!("mix {text:?} is not three ratios like 2:2:1"));
    if parts.len() != 3 {
        bail!(bad());
    }
    let mut mix = [0; 3];
    for (m, p) in mix.iter_mut().zip(parts) {
        *m = p.trim().parse().map_err(|_| bad())?;
    }
    Ok(mix)
}

fn load_model(path: &Path) -> Result<SurrogateEnsemble> {
    if !path.exists() {
        bail!(ConfigError(format!(
            "surrogate model {} not found; run `bcmppi train` or set surrogate.model",
            path.display()
        )));
    }
    SurrogateEnsemble::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn generate_data(common: &Common, rollouts: Option<usize>, mix: Option<&str>) -> Result<()> {
    let mut config = setup(common)?;
    if let Some(n) = rollouts {
        config.dataset.n_rollouts = n;
    }
    if let Some(m) = mix {
        config.dataset.mix = parse_mix(m)?;
    }
    config
        .dataset
        .validate()
        .map_err(|e| ConfigError(e.to_string()))?;
    let scenario = config.scenario()?;
    let out = config.output_dir();
    config.dump(&out, "generate-data.toml")?;

    let (dataset, summary) =
        generate_dataset(&scenario, &config.dataset, &config.quadrotor, config.seed)?;
    let path = config.dataset_path();
    save_dataset(&dataset, &path)?;
    write_json(&out.join("dataset_summary.json"), &summary)?;

    let [c, d, s] = summary.motion_counts;
    println!("dataset: {}", path.display());
    println!("rows: {} x {} columns", summary.rows, summary.columns);
    println!("motion counts: circular {c}, diagonal {d}, sinusoidal {s}");
    println!(
        "label: mean {:.4}, std {:.4}, min {:.4}, max {:.4}",
        summary.label_mean, summary.label_std, summary.label_min, summary.label_max
    );
    println!(
        "feasible rollouts: {:.1}%",
        100.0 * summary.feasible_fraction
    );
    Ok(())
}

pub fn train(common: &Common) -> Result<()> {
    let config = setup(common)?;
    config
        .training
        .validate()
        .map_err(|e| ConfigError(e.to_string()))?;
    let data_path = config.dataset_path();
    if !data_path.exists() {
        bail!(ConfigError(format!(
            "dataset {} not found; run `bcmppi generate-data` or set surrogate.dataset",
            data_path.display()
        )));
    }
    let out = config.output_dir();
    config.dump(&out, "train.toml")?;
    let dataset =
        load_dataset(&data_path).with_context(|| format!("reading {}", data_path.display()))?;
    let report_path = out.join("train_report.json");

    let (model, report) = match train_ensemble(&dataset, &config.training, config.seed) {
        Ok(r) => r,
        Err(e) => {
            let (tr, te) = split_indices(dataset.len(), config.seed);
            write_json(
                &report_path,
                &json!({
                    "error": e.to_string(),
                    "dataset_rows": dataset.len(),
                    "train_rows": tr.len(),
                    "test_rows": te.len(),
                }),
            )?;
            return Err(e.into());
        }
    };
    let model_path = config.model_path();
    model.save(&model_path)?;
    write_json(&report_path, &report)?;

    println!("model: {} ({})", model_path.display(), report.model_hash);
    println!(
        "split: {} train / {} test",
        report.train.rows, report.test.rows
    );
    println!(
        "train: mse {:.4}, r2 {:.4}",
        report.train.mse, report.train.r2
    );
    println!(
        "test:  mse {:.4}, r2 {:.4}",
        report.test.mse, report.test.r2
    );
    Ok(())
}

pub fn run(common: &Common, trace: bool, diagnostics: bool) -> Result<()> {
    let config = setup(common)?;
    let mut scenario = config.scenario()?;
    if config.episode.randomize {
        scenario = randomize_scenario(&scenario, config.seed);
    }
    let episode = config.episode(scenario)?;
    let model = match config.controller {
        ControllerKind::BcMppi => Some(load_model(&config.model_path())?),
        _ => None,
    };
    let out = config.output_dir();
    config.dump(&out, "run.toml")?;

    let result = run_episode(
        &episode,
        model
            .as_ref()
            .map(|m| m as &dyn bcmppi::bc::FeasibilityModel),
    )?;
    let row = SweepRow {
        scenario: episode.scenario.name.clone(),
        obstacles: episode.scenario.obstacles.len(),
        controller: episode.controller,
        num_samples: episode.mppi.num_samples,
        seed: episode.seed,
        metrics: Some(result.metrics.clone()),
        error: None,
    };
    let rows = [row];
    save_csv(out.join("run_metrics.csv"), |w| write_rows_csv(&rows, w))?;
    if trace {
        save_csv(out.join("trace.csv"), |w| write_trace_csv(&result, w))?;
    }
    if diagnostics {
        save_csv(out.join("diagnostics.csv"), |w| {
            write_diagnostics_csv(&result, w)
        })?;
    }
    write_rows_csv(&rows, std::io::stdout().lock())?;
    Ok(())
}

fn log_row(done: usize, total: usize, r: &SweepRow) {
    match (&r.metrics, &r.error) {
        (Some(m), _) => info!(
            "[{done}/{total}] {} {} K={} seed={}: final {:.3} m, collisions {}, rejection {:.3}",
            r.scenario,
            r.controller.name(),
            r.num_samples,
            r.seed,
            m.final_target_distance,
            m.collision_events,
            m.rejection_rate
        ),
        (None, e) => info!(
            "[{done}/{total}] {} {} K={} seed={}: failed: {}",
            r.scenario,
            r.controller.name(),
            r.num_samples,
            r.seed,
            e.as_deref().unwrap_or("unknown")
        ),
    }
}

pub fn sweep(common: &Common) -> Result<()> {
    let config = setup(common)?;
    let paths = if config.sweep.scenarios.is_empty() {
        vec![config.scenario.clone()]
    } else {
        config.sweep.scenarios.clone()
    };
    let scenarios = paths
        .iter()
        .map(|p| ExperimentConfig::load_scenario(p))
        .collect::<Result<Vec<_>>>()?;
    let spec = SweepSpec {
        scenarios,
        controllers: config.sweep.controllers.clone(),
        k_values: config.sweep.k_values.clone(),
        n_seeds: config.sweep.seeds,
        randomize: config.sweep.randomize,
    };
    spec.validate().map_err(|e| ConfigError(e.to_string()))?;
    let base = config.episode(spec.scenarios[0].clone())?;
    let needs_model = spec.controllers.contains(&ControllerKind::BcMppi);
    let models = spec
        .scenarios
        .iter()
        .map(|s| {
            needs_model
                .then(|| load_model(&config.model_path_for(&s.name)))
                .transpose()
        })
        .collect::<Result<Vec<_>>>()?;
    let out = config.output_dir();
    config.dump(&out, "sweep.toml")?;

    let total =
        spec.scenarios.len() * spec.controllers.len() * spec.k_values.len() * spec.n_seeds as usize;
    let mut done = 0;
    let mut rows = Vec::with_capacity(total);
    for (scenario, model) in spec.scenarios.iter().zip(&models) {
        let single = SweepSpec {
            scenarios: vec![scenario.clone()],
            ..spec.clone()
        };
        rows.extend(run_sweep(
            &base,
            &single,
            model
                .as_ref()
                .map(|m| m as &dyn bcmppi::bc::FeasibilityModel),
            |r| {
                done += 1;
                log_row(done, total, r);
            },
        )?);
    }
    let aggregates = aggregate(&rows);
    save_csv(out.join("sweep_rows.csv"), |w| write_rows_csv(&rows, w))?;
    save_csv(out.join("sweep_summary.csv"), |w| {
        write_aggregates_csv(&aggregates, w)
    })?;
    let plots = write_report(&rows, out.join("plots"))?;
    println!(
        "{} episodes ({} failed) -> {}",
        rows.len(),
        rows.iter().filter(|r| r.metrics.is_none()).count(),
        out.join("sweep_rows.csv").display()
    );
    println!("{} plots in {}", plots.len(), out.join("plots").display());
    Ok(())
}

pub fn report(inputs: &[PathBuf], out: Option<PathBuf>) -> Result<()> {
    let out = out.unwrap_or_else(|| {
        std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("out"))
            .join("report")
    });
    let mut rows = Vec::new();
    for path in inputs {
        let file = std::fs::File::open(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        rows.extend(
            read_rows_csv(std::io::BufReader::new(file))
                .with_context(|| format!("reading {}", path.display()))?,
        );
    }
    let plots = write_report(&rows, &out)?;
    save_csv(out.join("summary.csv"), |w| {
        write_aggregates_csv(&aggregate(&rows), w)
    })?;
    println!(
        "{} rows -> {} plots, index {}",
        rows.len(),
        plots.len(),
        out.join("index.html").display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parses_three_ratios() {
        assert_eq!(parse_mix("2:2:1").unwrap(), [2, 2, 1]);
        assert!(parse_mix("2:2").is_err());
        assert!(parse_mix("a:b:c").is_err());
    }
}
