use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{train_fixed_split, LossKind, OptimizerKind, Result, Splits, TrainConfig, TrainError};
use crate::data::{prepare_dataset, DataConfig, Dataset, SequenceSample, TripRecord};
use crate::nn::{init_params, ModelConfig};
use crate::seed::{self, stream};

/// Fraction of the training and validation samples used for tuning.
pub const TUNING_FRACTION: f64 = 0.25;

/// Tunable hyperparameters, one per row of the tuning table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyper {
    WindowDays,
    LstmLayers,
    Neurons,
    AttentionSize,
    FcLayers,
    BatchSize,
    LearningRate,
    Optimizer,
    Loss,
}

impl Hyper {
    pub const ALL: [Hyper; 9] = [
        Hyper::WindowDays,
        Hyper::LstmLayers,
        Hyper::Neurons,
        Hyper::AttentionSize,
        Hyper::FcLayers,
        Hyper::BatchSize,
        Hyper::LearningRate,
        Hyper::Optimizer,
        Hyper::Loss,
    ];

    /// The printed range of this hyperparameter.
    pub fn table_range(self) -> RangeSpec {
        let lattice = |start: f64, step: f64, stop: f64| RangeSpec::Lattice { start, step, stop };
        let names = |xs: &[&str]| RangeSpec::Choice(xs.iter().map(|s| s.to_string()).collect());
        match self {
            Hyper::WindowDays => lattice(1.0, 1.0, 14.0),
            Hyper::LstmLayers => lattice(1.0, 1.0, 5.0),
            Hyper::Neurons => lattice(20.0, 10.0, 150.0),
            Hyper::AttentionSize => lattice(4.0, 4.0, 256.0),
            Hyper::FcLayers => lattice(1.0, 1.0, 3.0),
            Hyper::BatchSize => lattice(16.0, 16.0, 512.0),
            Hyper::LearningRate => lattice(0.00001, 0.05, 0.1),
            Hyper::Optimizer => names(&["SGD", "Adam", "Adagrad", "RMSProp"]),
            Hyper::Loss => names(&["MAE", "MSE", "LHC", "HL", "MSLE", "PS"]),
        }
    }
}

impl fmt::Display for Hyper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Hyper::WindowDays => "window size",
            Hyper::LstmLayers => "LSTM layers",
            Hyper::Neurons => "# neurons in LSTM layers",
            Hyper::AttentionSize => "# neurons in LSTM attention",
            Hyper::FcLayers => "FL layers",
            Hyper::BatchSize => "batch size",
            Hyper::LearningRate => "lr",
            Hyper::Optimizer => "optimizer",
            Hyper::Loss => "Loss",
        };
        write!(f, "{s} {}", self.table_range())
    }
}

/// A range in `(start:step:stop)` or `(A, B, …)` notation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RangeSpec {
    Lattice { start: f64, step: f64, stop: f64 },
    Choice(Vec<String>),
}

impl RangeSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || TrainError::Config(format!("cannot parse range `{text}`"));
        let inner = text
            .trim()
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(bad)?;
        if inner.contains(':') {
            let parts: Vec<f64> = inner
                .split(':')
                .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            match parts[..] {
                [start, step, stop] if step > 0.0 && start <= stop => Ok(RangeSpec::Lattice { start, step, stop }),
                _ => Err(bad()),
            }
        } else {
            let names: Vec<String> = inner.split(',').map(|s| s.trim().to_string()).collect();
            if names.iter().any(String::is_empty) {
                return Err(bad());
            }
            Ok(RangeSpec::Choice(names))
        }
    }

    fn admits_number(&self, x: f64, on_lattice: bool) -> bool {
        match *self {
            RangeSpec::Lattice { start, step, stop } => {
                let tol = 1e-9 * step;
                if x < start - tol || x > stop + tol {
                    return false;
                }
                let k = (x - start) / step;
                !on_lattice || (k - k.round()).abs() * step <= tol
            }
            RangeSpec::Choice(_) => false,
        }
    }

    /// Integers must lie on the lattice; floats only inside its bounds.
    pub fn admits(&self, value: &GridValue) -> bool {
        match (self, value) {
            (RangeSpec::Choice(names), GridValue::Name(n)) => names.iter().any(|c| c.eq_ignore_ascii_case(n)),
            (_, GridValue::Int(v)) => self.admits_number(*v as f64, true),
            (_, GridValue::Ints(vs)) => !vs.is_empty() && vs.iter().all(|&v| self.admits_number(v as f64, true)),
            (_, GridValue::Float(v)) => self.admits_number(*v, false),
            _ => false,
        }
    }
}

impl fmt::Display for RangeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RangeSpec::Lattice { start, step, stop } => write!(f, "({start}:{step}:{stop})"),
            RangeSpec::Choice(names) => write!(f, "({})", names.join(", ")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Int(i64),
    Float(f64),
    Ints(Vec<i64>),
    Name(String),
}

impl fmt::Display for GridValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridValue::Int(v) => write!(f, "{v}"),
            GridValue::Float(v) => write!(f, "{v}"),
            GridValue::Ints(vs) => {
                let parts: Vec<String> = vs.iter().map(i64::to_string).collect();
                f.write_str(&parts.join(","))
            }
            GridValue::Name(n) => f.write_str(n),
        }
    }
}

pub type GridPoint = Vec<(Hyper, GridValue)>;

/// Discrete values per hyperparameter; every value lies inside the
/// hyperparameter's printed range.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub axes: Vec<(Hyper, Vec<GridValue>)>,
}

impl GridSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_axis(mut self, hyper: Hyper, values: Vec<GridValue>) -> Result<Self> {
        if self.axes.iter().any(|(h, _)| *h == hyper) {
            return Err(TrainError::Config(format!("{hyper} listed twice")));
        }
        let range = hyper.table_range();
        if let Some(v) = values.iter().find(|v| !range.admits(v)) {
            return Err(TrainError::Config(format!("{v} outside {hyper}")));
        }
        self.axes.push((hyper, values));
        let has = |h| self.axes.iter().any(|(x, _)| *x == h);
        if has(Hyper::LstmLayers) && has(Hyper::Neurons) {
            return Err(TrainError::Config(
                "give either LSTM layers or per-layer neuron lists, not both".into(),
            ));
        }
        Ok(self)
    }

    pub fn len(&self) -> usize {
        if self.axes.is_empty() {
            0
        } else {
            self.axes.iter().map(|(_, v)| v.len()).product()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product, the first axis varying slowest.
    pub fn points(&self) -> Vec<GridPoint> {
        if self.is_empty() {
            return Vec::new();
        }
        let mut points: Vec<GridPoint> = vec![Vec::new()];
        for (hyper, values) in &self.axes {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((*hyper, v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
    }

    /// Whether every coordinate of `point` lies in its printed range.
    pub fn table_admits(point: &[(Hyper, GridValue)]) -> bool {
        point.iter().all(|(h, v)| h.table_range().admits(v))
    }
}

/// Everything one trial needs; grid points override parts of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSetup {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl TrialSetup {
    pub fn apply(&self, point: &[(Hyper, GridValue)]) -> Result<Self> {
        let mut out = self.clone();
        let wrong = |h: Hyper, v: &GridValue| TrainError::Config(format!("value {v} does not fit {h}"));
        for (h, v) in point {
            match (h, v) {
                (Hyper::WindowDays, GridValue::Int(n)) => out.data.window_days = *n as u32,
                (Hyper::LstmLayers, GridValue::Int(n)) => {
                    let width = out.model.lstm_layer_sizes.first().copied().unwrap_or(20);
                    out.model.lstm_layer_sizes.resize(*n as usize, width);
                }
                (Hyper::Neurons, GridValue::Ints(ns)) => {
                    out.model.lstm_layer_sizes = ns.iter().map(|&n| n as usize).collect()
                }
                (Hyper::AttentionSize, GridValue::Int(n)) => out.model.attention_size = *n as usize,
                (Hyper::FcLayers, GridValue::Int(n)) => {
                    let hidden = match out.model.fc_sizes.as_slice() {
                        [h, _, ..] => *h,
                        _ => 64,
                    };
                    out.model.fc_sizes = vec![hidden; *n as usize - 1];
                    out.model.fc_sizes.push(ModelConfig::OUTPUTS);
                }
                (Hyper::BatchSize, GridValue::Int(n)) => out.train.batch_size = *n as usize,
                (Hyper::LearningRate, GridValue::Float(x)) => out.train.learning_rate = *x,
                (Hyper::Optimizer, GridValue::Name(n)) => out.train.optimizer = n.parse::<OptimizerKind>()?,
                (Hyper::Loss, GridValue::Name(n)) => out.train.loss = n.parse::<LossKind>()?,
                _ => return Err(wrong(*h, v)),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Position in the grid's enumeration order.
    pub index: usize,
    pub point: GridPoint,
    pub val_error_pct: f64,
    pub best_epoch: usize,
}

/// How much the validation error moves along one axis: the spread of the
/// per-value mean errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisVariation {
    pub hyper: Hyper,
    pub spread_pct: f64,
    pub mean_error_by_value: Vec<(GridValue, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    /// Trials in enumeration order.
    pub trials: Vec<TrialResult>,
    /// Positions in `trials`, best first.
    pub ranking: Vec<usize>,
    pub variation: Vec<AxisVariation>,
}

impl GridResult {
    pub fn best(&self) -> &TrialResult {
        &self.trials[self.ranking[0]]
    }
}

fn subsample(samples: &[SequenceSample], fraction: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Vec<SequenceSample> {
    let keep = ((samples.len() as f64 * fraction).round() as usize).clamp(1.min(samples.len()), samples.len());
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(rng);
    idx.truncate(keep);
    idx.sort_unstable();
    idx.into_iter().map(|i| samples[i].clone()).collect()
}

/// Trains every grid point (or `budget` of them, drawn with `seed`) on a
/// 25% subsample of the training data and ranks them by validation error.
pub fn grid_search(
    grid: &GridSpec,
    trips: &[TripRecord],
    base: &TrialSetup,
    budget: usize,
    seed_value: u64,
) -> Result<GridResult> {
    if grid.is_empty() {
        return Err(TrainError::Config("empty grid".into()));
    }
    if budget == 0 {
        return Err(TrainError::Config("budget must be at least 1".into()));
    }
    let mut chosen: Vec<usize> = (0..grid.len()).collect();
    if chosen.len() > budget {
        chosen.shuffle(&mut seed::rng(seed_value, stream::GRID));
        chosen.truncate(budget);
        chosen.sort_unstable();
    }
    let points = grid.points();

    let mut datasets: BTreeMap<String, (Dataset, Vec<SequenceSample>, Vec<SequenceSample>)> = BTreeMap::new();
    let mut trials = Vec::with_capacity(chosen.len());
    for index in chosen {
        let point = &points[index];
        let mut setup = base.apply(point)?;
        let key = serde_json::to_string(&setup.data).expect("config serializes");
        if !datasets.contains_key(&key) {
            let ds = prepare_dataset(trips, &setup.data)?;
            let mut rng = seed::rng(seed_value, stream::SUBSAMPLE);
            let train = subsample(&ds.train, TUNING_FRACTION, &mut rng);
            let val = subsample(&ds.val, TUNING_FRACTION, &mut rng);
            datasets.insert(key.clone(), (ds, train, val));
        }
        let (ds, train, val) = &datasets[&key];
        setup.model.max_seq_len = ds.capacity;
        let init = init_params(&setup.model, setup.train.seed)?;
        let splits = Splits { train, val, test: val };
        let outcome = train_fixed_split(&setup.model, init, splits, &ds.stats, &setup.train)?;
        let best_epoch = outcome.report.best_epoch;
        let val_error_pct = outcome.report.history[best_epoch - 1].val_error;
        log::info!("trial {index}: val error {val_error_pct:.3}%");
        trials.push(TrialResult {
            index,
            point: point.clone(),
            val_error_pct,
            best_epoch,
        });
    }

    let mut ranking: Vec<usize> = (0..trials.len()).collect();
    ranking.sort_by(|&a, &b| {
        trials[a]
            .val_error_pct
            .total_cmp(&trials[b].val_error_pct)
            .then(trials[a].index.cmp(&trials[b].index))
    });

    let variation = grid
        .axes
        .iter()
        .enumerate()
        .filter(|(_, (_, values))| values.len() > 1)
        .map(|(axis, (hyper, values))| {
            let mean_error_by_value: Vec<(GridValue, f64)> = values
                .iter()
                .filter_map(|v| {
                    let errs: Vec<f64> = trials
                        .iter()
                        .filter(|t| &t.point[axis].1 == v)
                        .map(|t| t.val_error_pct)
                        .collect();
                    (!errs.is_empty()).then(|| (v.clone(), errs.iter().sum::<f64>() / errs.len() as f64))
                })
                .collect();
            let (lo, hi) = mean_error_by_value
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, e)| {
                    (lo.min(*e), hi.max(*e))
                });
            AxisVariation {
                hyper: *hyper,
                spread_pct: if hi >= lo { hi - lo } else { 0.0 },
                mean_error_by_value,
            }
        })
        .collect();

    Ok(GridResult {
        trials,
        ranking,
        variation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(xs: &[i64]) -> Vec<GridValue> {
        xs.iter().map(|&x| GridValue::Int(x)).collect()
    }

    #[test]
    fn parses_printed_notation() {
        assert_eq!(
            RangeSpec::parse("(1:1:14)").unwrap(),
            RangeSpec::Lattice {
                start: 1.0,
                step: 1.0,
                stop: 14.0
            }
        );
        assert_eq!(
            RangeSpec::parse("(0.00001:0.05:0.1)").unwrap(),
            Hyper::LearningRate.table_range()
        );
        assert_eq!(
            RangeSpec::parse("(SGD, Adam, Adagrad, RMSProp)").unwrap(),
            Hyper::Optimizer.table_range()
        );
        assert!(RangeSpec::parse("1:1:14").is_err());
        assert!(RangeSpec::parse("(1:0:14)").is_err());
        assert_eq!(Hyper::WindowDays.to_string(), "window size (1:1:14)");
    }

    #[test]
    fn admits_lattice_and_bounds() {
        let neurons = Hyper::Neurons.table_range();
        assert!(neurons.admits(&GridValue::Ints(vec![40, 60, 40])));
        assert!(!neurons.admits(&GridValue::Ints(vec![45])));
        assert!(!neurons.admits(&GridValue::Ints(vec![160])));
        let lr = Hyper::LearningRate.table_range();
        assert!(lr.admits(&GridValue::Float(0.01)));
        assert!(!lr.admits(&GridValue::Float(0.2)));
        assert!(Hyper::Loss.table_range().admits(&GridValue::Name("mae".into())));
        assert!(!Hyper::Loss.table_range().admits(&GridValue::Name("hinge".into())));
        assert!(GridSpec::new().with_axis(Hyper::WindowDays, ints(&[0])).is_err());
        assert!(GridSpec::new().with_axis(Hyper::BatchSize, ints(&[100])).is_err());
    }

    #[test]
    fn best_values_are_admitted() {
        let pm4: GridPoint = vec![
            (Hyper::WindowDays, GridValue::Int(8)),
            (Hyper::Neurons, GridValue::Ints(vec![40, 60, 40])),
            (Hyper::AttentionSize, GridValue::Int(64)),
            (Hyper::FcLayers, GridValue::Int(2)),
            (Hyper::BatchSize, GridValue::Int(128)),
            (Hyper::LearningRate, GridValue::Float(0.01)),
            (Hyper::Optimizer, GridValue::Name("Adam".into())),
            (Hyper::Loss, GridValue::Name("MAE".into())),
        ];
        assert!(GridSpec::table_admits(&pm4));
        let base = TrialSetup {
            data: DataConfig::default(),
            model: ModelConfig::tiny(crate::nn::Variant::Pm4),
            train: TrainConfig::default(),
        };
        let s = base.apply(&pm4).unwrap();
        assert_eq!(s.model.lstm_layer_sizes, vec![40, 60, 40]);
        assert_eq!(s.model.fc_sizes, vec![8, 2]);
        assert_eq!(s.train.optimizer, OptimizerKind::Adam);
        assert_eq!(s.data.window_days, 8);
    }

    #[test]
    fn product_order_and_count() {
        let g = GridSpec::new()
            .with_axis(Hyper::WindowDays, ints(&[3, 5]))
            .unwrap()
            .with_axis(
                Hyper::Loss,
                vec![GridValue::Name("MAE".into()), GridValue::Name("MSE".into())],
            )
            .unwrap();
        assert_eq!(g.len(), 4);
        let pts = g.points();
        assert_eq!(
            pts[1],
            vec![
                (Hyper::WindowDays, GridValue::Int(3)),
                (Hyper::Loss, GridValue::Name("MSE".into()))
            ]
        );
        assert!(GridSpec::new().points().is_empty());
        assert!(g.clone().with_axis(Hyper::Loss, vec![]).is_err());
    }

    #[test]
    fn layers_and_neurons_conflict() {
        let g = GridSpec::new().with_axis(Hyper::LstmLayers, ints(&[2])).unwrap();
        assert!(g
            .with_axis(Hyper::Neurons, vec![GridValue::Ints(vec![20, 30])])
            .is_err());
    }
}
