use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use tripcast::data::{
    build_features, filter_short, generate_synthetic, group_by_vehicle, ingest_csv, latest_window, merge_trips,
    normalize_series, prepare_dataset, prepare_dataset_with, write_trips, Dataset, SequenceSample, TripRecord,
};
use tripcast::explain::{background_means, explain_prediction, AttributionReport, Level, Output};
use tripcast::nn::{init_params, model_forward, Checkpoint, ModelParams};
use tripcast::train::{
    cross_validate_transfer, evaluate, grid_search, persistence_predictions, target_errors, EvalReport, Splits,
    TrainOutcome, TrialSetup,
};

use crate::config::RunConfig;
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = File::create(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn load_trips(path: &Path) -> Result<Vec<TripRecord>> {
    ingest_csv(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ModelParams)> {
    let ckpt = Checkpoint::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let params = ckpt.model_params()?;
    Ok((ckpt, params))
}

/// Rebuilds the splits a checkpoint was trained on, normalized with its stats.
fn checkpoint_dataset(ckpt: &Checkpoint, data: &Path) -> Result<Dataset> {
    Ok(prepare_dataset_with(&load_trips(data)?, &ckpt.data, Some(ckpt.stats))?)
}

fn metadata(started: Instant) -> serde_json::Value {
    json!({ "wall_clock_secs": started.elapsed().as_secs_f64() })
}

pub fn gen_data(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    let path = out.unwrap_or_else(|| cfg.out_path("trips.csv"));
    let trips = generate_synthetic(&cfg.synthetic)?;
    let mut w = create(&path)?;
    write_trips(&mut w, &trips)?;
    w.flush()?;
    println!(
        "wrote {} trips for {} vehicles to {}",
        trips.len(),
        cfg.synthetic.vehicles,
        path.display()
    );
    Ok(())
}

pub fn ingest(input: &Path, out: Option<PathBuf>) -> Result<()> {
    let trips = load_trips(input)?;
    let fleet = group_by_vehicle(&trips);
    let mut cleaned = Vec::new();
    let mut merged_count = 0;
    for trips in fleet.values() {
        let merged = merge_trips(trips)?;
        merged_count += merged.len();
        cleaned.extend(filter_short(merged));
    }
    println!(
        "{} raw trips, {} vehicles, {} after merging, {} after filtering",
        trips.len(),
        fleet.len(),
        merged_count,
        cleaned.len()
    );
    if let Some(path) = out {
        let mut w = create(&path)?;
        write_trips(&mut w, &cleaned)?;
        w.flush()?;
        println!("wrote cleaned trips to {}", path.display());
    }
    Ok(())
}

/// Prepares data and resolves capacity-dependent settings into `cfg`.
fn prepare(cfg: &mut RunConfig, data: &Path) -> Result<Dataset> {
    let ds = prepare_dataset(&load_trips(data)?, &cfg.data)?;
    cfg.data.capacity = Some(ds.capacity);
    cfg.model.max_seq_len = ds.capacity;
    cfg.model.validate()?;
    log::info!(
        "{} train / {} val / {} test samples, capacity {}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        ds.capacity
    );
    Ok(ds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    FixedSplit,
    CrossVal,
}

pub fn train(mut cfg: RunConfig, data: &Path, regime: Regime) -> Result<()> {
    let started = Instant::now();
    let ds = prepare(&mut cfg, data)?;
    let init = init_params(&cfg.model, cfg.seed)?;
    let outcome = match regime {
        Regime::FixedSplit => tripcast::train::train_fixed_split(
            &cfg.model,
            init,
            Splits {
                train: &ds.train,
                val: &ds.val,
                test: &ds.test,
            },
            &ds.stats,
            &cfg.train,
        )?,
        Regime::CrossVal => {
            let pool: Vec<SequenceSample> = ds.train.iter().chain(&ds.val).cloned().collect();
            cross_validate_transfer(&cfg.model, init, &pool, &ds.test, &ds.stats, &cfg.train, &cfg.cross_val)?
        }
    };
    let persistence = target_errors(&persistence_predictions(&ds.test), &ds.test, &ds.stats)?;
    write_training_artifacts(&cfg, &ds, &outcome, regime, persistence.combined, started)?;
    let r = &outcome.report;
    println!(
        "{} test prediction error: {:.6}% (delta_t {:.4}%, distance {:.4}%), best epoch {}",
        cfg.model.variant, r.prediction_error_pct, r.delta_t_error_pct, r.distance_error_pct, r.best_epoch
    );
    println!("persistence baseline: {:.6}%", persistence.combined);
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}

fn write_training_artifacts(
    cfg: &RunConfig,
    ds: &Dataset,
    outcome: &TrainOutcome,
    regime: Regime,
    persistence_pct: f64,
    started: Instant,
) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let echo = cfg.echo();
    let ckpt = Checkpoint::new(&cfg.model, &outcome.params, ds.stats, cfg.data.clone(), echo.clone());
    ckpt.save(&cfg.out_path("checkpoint.json"))?;

    let regime = match regime {
        Regime::FixedSplit => "fixed_split",
        Regime::CrossVal => "cross_val",
    };
    write_json(
        &cfg.out_path("metrics.json"),
        &json!({
            "run_config": echo,
            "seed": cfg.seed,
            "regime": regime,
            "report": outcome.report,
            "persistence_error_pct": persistence_pct,
            "metadata": metadata(started),
        }),
    )?;

    let mut curve = csv::Writer::from_writer(create(&cfg.out_path("curve.csv"))?);
    curve.write_record(["epoch", "train_error", "test_error"])?;
    for rec in &outcome.report.history {
        curve.write_record([
            rec.epoch.to_string(),
            rec.train_error.to_string(),
            rec.test_error.to_string(),
        ])?;
    }
    curve.flush()?;
    Ok(())
}

pub fn grid(mut cfg: RunConfig, data: &Path) -> Result<()> {
    let started = Instant::now();
    let spec = cfg.grid.spec()?;
    let budget = cfg.grid.budget.unwrap_or(spec.len());
    let trips = load_trips(data)?;
    let base = TrialSetup {
        data: cfg.data.clone(),
        model: cfg.model.clone(),
        train: cfg.train.clone(),
    };
    let result = grid_search(&spec, &trips, &base, budget, cfg.seed)?;
    cfg.grid.budget = Some(budget);
    write_json(
        &cfg.out_path("grid.json"),
        &json!({
            "run_config": cfg.echo(),
            "seed": cfg.seed,
            "result": result,
            "metadata": metadata(started),
        }),
    )?;
    for (rank, &i) in result.ranking.iter().enumerate().take(5) {
        let t = &result.trials[i];
        let point: Vec<String> = t.point.iter().map(|(h, v)| format!("{h:?}={v}")).collect();
        println!(
            "#{} trial {}: val error {:.4}% [{}]",
            rank + 1,
            t.index,
            t.val_error_pct,
            point.join(" ")
        );
    }
    for v in &result.variation {
        println!("{}: spread {:.4}%", v.hyper, v.spread_pct);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

pub fn eval(cfg: &RunConfig, checkpoint: &Path, data: &Path, split: SplitName) -> Result<()> {
    let (ckpt, params) = load_checkpoint(checkpoint)?;
    let ds = checkpoint_dataset(&ckpt, data)?;
    let samples = match split {
        SplitName::Train => &ds.train,
        SplitName::Val => &ds.val,
        SplitName::Test => &ds.test,
    };
    let errors = evaluate(&ckpt.model, &params, samples, &ckpt.stats)?;
    let report = EvalReport {
        prediction_error_pct: errors.combined,
        delta_t_error_pct: errors.delta_t,
        distance_error_pct: errors.distance,
        samples: samples.len(),
        best_epoch: 0,
        history: Vec::new(),
    };
    write_json(
        &cfg.out_path("eval.json"),
        &json!({
            "run_config": ckpt.run_config,
            "checkpoint": checkpoint,
            "split": split,
            "report": report,
        }),
    )?;
    println!("prediction error: {:.6}%", errors.combined);
    println!("delta_t error: {:.6}%", errors.delta_t);
    println!("distance error: {:.6}%", errors.distance);
    Ok(())
}

pub fn predict(checkpoint: &Path, history: &Path, vehicle: Option<&str>) -> Result<()> {
    let (ckpt, params) = load_checkpoint(checkpoint)?;
    let fleet = group_by_vehicle(&load_trips(history)?);
    let (id, trips) = match vehicle {
        Some(v) => fleet
            .get_key_value(v)
            .ok_or_else(|| CliError::Data(format!("vehicle {v} not found in {}", history.display())))?,
        None if fleet.len() == 1 => fleet.iter().next().expect("one vehicle"),
        None => {
            return Err(CliError::Data(format!(
                "{} holds {} vehicles; choose one with --vehicle",
                history.display(),
                fleet.len()
            )))
        }
    };
    let cleaned = filter_short(merge_trips(trips)?);
    let series = build_features(&cleaned, ckpt.data.tz()?)?;
    let normalized = normalize_series(&series, &ckpt.stats)?;
    let capacity = ckpt.model.max_seq_len;
    let window = latest_window(&normalized, ckpt.data.window_days, capacity)?;
    let [dt, d] = ckpt
        .stats
        .denormalize_pair(model_forward(&ckpt.model, &params, &window)?);
    let last = *series.start_time.last().expect("non-empty series");
    println!("vehicle {id}: {} trips in window", window.valid_len);
    println!("delta_t_secs {dt:.1}");
    println!("distance_km {d:.3}");
    println!("expected_start {}", last + dt.round() as i64);
    Ok(())
}

pub struct ExplainRequest<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub level: Level,
    pub outputs: Vec<Output>,
    pub trip_index: usize,
}

pub fn explain(cfg: &RunConfig, req: ExplainRequest<'_>) -> Result<()> {
    let (ckpt, params) = load_checkpoint(req.checkpoint)?;
    let ds = checkpoint_dataset(&ckpt, req.data)?;
    let sample = ds.test.get(req.trip_index).ok_or_else(|| {
        CliError::Data(format!(
            "--trip-index {} out of range: {} test samples",
            req.trip_index,
            ds.test.len()
        ))
    })?;
    let background = background_means(&ds.train);
    let level = match req.level {
        Level::Event => "event",
        Level::Feature => "feature",
    };
    for output in req.outputs {
        let attr = explain_prediction(
            &ckpt.model,
            &params,
            sample,
            &background,
            req.level,
            output,
            &cfg.explain,
        )?;
        let gap = attr.efficiency_gap();
        let report = AttributionReport::new(&attr, sample, &ckpt.stats);
        let name = match output {
            Output::DeltaT => "delta_t",
            Output::Distance => "distance",
        };
        let stem = format!("attribution_{level}_{name}");
        write_json(
            &cfg.out_path(&format!("{stem}.json")),
            &json!({
                "run_config": cfg.echo(),
                "checkpoint_run_config": ckpt.run_config,
                "seed": cfg.seed,
                "trip_index": req.trip_index,
                "vehicle_id": sample.vehicle_id,
                "target_time": sample.target_time,
                "efficiency_gap": gap,
                "attribution": report,
            }),
        )?;
        let mut w = create(&cfg.out_path(&format!("{stem}.csv")))?;
        report.write_csv(&mut w)?;
        w.flush()?;
        println!(
            "{name}: {} units ({}), base {:.6}, score {:.6}, efficiency gap {:.3e}",
            attr.weights.len(),
            if attr.exact { "exact" } else { "sampled" },
            attr.base_score,
            attr.model_score,
            gap
        );
    }
    Ok(())
}
