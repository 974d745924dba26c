//! Run configuration: defaults, overlaid by a TOML file, overlaid by flags.
//!
//! File layout (every key optional):
//!
//! ```toml
//! seed = 0              # master seed, fanned out to every random stream
//! out_dir = "runs/pm4"  # else $TRIPCAST_OUT_DIR, else "."
//!
//! [data]       # window_days, capacity, timezone, split.{train,val}
//! [model]      # variant, lstm_layer_sizes, attention_size, fc_sizes, attention_source
//! [train]      # loss, optimizer, learning_rate, batch_size, epochs, patience
//! [cross_val]  # rounds, train_fraction, val_fraction
//! [explain]    # max_exact_m, n_samples
//! [synthetic]  # vehicles, days, commute_prob, noise_minutes, ...
//! [grid]       # budget, plus [grid.axes] with one list per hyperparameter
//! ```
//!
//! `[model]` is applied on top of the best architecture of the chosen
//! variant. Sub-seeds are always replaced by the master seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tripcast::data::{DataConfig, SyntheticSpec};
use tripcast::explain::TimeShapOptions;
use tripcast::nn::{ModelConfig, Variant};
use tripcast::train::{CrossValConfig, GridSpec, GridValue, Hyper, LossKind, OptimizerKind, TrainConfig};

use crate::error::CliError;

pub const OUT_DIR_ENV: &str = "TRIPCAST_OUT_DIR";

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    data: Option<DataConfig>,
    model: Option<toml::Table>,
    train: Option<TrainConfig>,
    cross_val: Option<CrossValConfig>,
    explain: Option<TimeShapOptions>,
    synthetic: Option<SyntheticSpec>,
    grid: Option<GridSection>,
}

/// Hyperparameter lists for `grid-search`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Trials to run; the whole grid when absent.
    pub budget: Option<usize>,
    pub axes: BTreeMap<Hyper, Vec<GridValue>>,
}

impl Default for GridSection {
    fn default() -> Self {
        let ints = |xs: &[i64]| xs.iter().map(|&x| GridValue::Int(x)).collect();
        let names = |xs: &[&str]| xs.iter().map(|x| GridValue::Name(x.to_string())).collect();
        let mut axes = BTreeMap::new();
        axes.insert(Hyper::WindowDays, ints(&[3, 5, 8]));
        axes.insert(
            Hyper::LearningRate,
            vec![GridValue::Float(0.001), GridValue::Float(0.01)],
        );
        axes.insert(Hyper::Loss, names(&["MAE", "MSE"]));
        Self { budget: None, axes }
    }
}

impl GridSection {
    pub fn spec(&self) -> Result<GridSpec, CliError> {
        let mut spec = GridSpec::new();
        for (h, values) in &self.axes {
            spec = spec.with_axis(*h, values.clone())?;
        }
        Ok(spec)
    }
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub window_days: Option<u32>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub loss: Option<LossKind>,
    pub optimizer: Option<OptimizerKind>,
    pub patience: Option<usize>,
    pub rounds: Option<usize>,
    pub budget: Option<usize>,
    pub vehicles: Option<usize>,
    pub days: Option<u32>,
}

/// Fully resolved settings, echoed into every artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub cross_val: CrossValConfig,
    pub explain: TimeShapOptions,
    pub synthetic: SyntheticSpec,
    pub grid: GridSection,
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, flags: &Overrides) -> Result<Self, CliError> {
        let file = match file {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            }
            None => FileConfig::default(),
        };

        let seed = flags.seed.or(file.seed).unwrap_or(0);
        let out_dir = flags
            .out_dir
            .clone()
            .or(file.out_dir)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));

        let model = resolve_model(file.model, flags.variant)?;

        let mut data = file.data.unwrap_or_default();
        if let Some(w) = flags.window_days {
            data.window_days = w;
        }

        let mut train = file.train.unwrap_or_default();
        train.seed = seed;
        set(&mut train.epochs, flags.epochs);
        set(&mut train.learning_rate, flags.learning_rate);
        set(&mut train.batch_size, flags.batch_size);
        set(&mut train.loss, flags.loss);
        set(&mut train.optimizer, flags.optimizer);
        set(&mut train.patience, flags.patience);

        let mut cross_val = file.cross_val.unwrap_or_default();
        set(&mut cross_val.rounds, flags.rounds);

        let mut explain = file.explain.unwrap_or_default();
        explain.seed = seed;

        let mut synthetic = file.synthetic.unwrap_or_default();
        synthetic.seed = seed;
        set(&mut synthetic.vehicles, flags.vehicles);
        set(&mut synthetic.days, flags.days);

        let mut grid = file.grid.unwrap_or_default();
        if flags.budget.is_some() {
            grid.budget = flags.budget;
        }

        Ok(Self {
            seed,
            out_dir,
            data,
            model,
            train,
            cross_val,
            explain,
            synthetic,
            grid,
        })
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn resolve_model(table: Option<toml::Table>, flag: Option<Variant>) -> Result<ModelConfig, CliError> {
    let table = table.unwrap_or_default();
    let bad = |e: String| CliError::Data(format!("[model]: {e}"));
    let from_file = match table.get("variant") {
        Some(v) => Some(
            v.as_str()
                .ok_or_else(|| bad("variant must be a string".into()))?
                .parse::<Variant>()
                .map_err(|e| bad(e.to_string()))?,
        ),
        None => None,
    };
    let variant = flag.or(from_file).unwrap_or(Variant::Pm4);
    let mut merged = match toml::Value::try_from(ModelConfig::best(variant)) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("model config serializes to a table"),
    };
    merged.extend(table);
    let mut model: ModelConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| bad(e.to_string()))?;
    model.variant = variant;
    Ok(model)
}
