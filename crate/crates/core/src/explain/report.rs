use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{Attribution, Level, Output};
use crate::data::{NormStats, SequenceSample, FEATURE_GROUPS};

/// One attributed unit with enough context to read it on its own.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitReport {
    pub index: usize,
    /// Feature group name (feature level).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Trip start time, epoch seconds (event level).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_time: Option<i64>,
    /// Trip gap in seconds (event level).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_t_secs: Option<f64>,
    /// Trip distance in km (event level).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_km: Option<f64>,
    pub shap_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub level: Level,
    pub output: Option<Output>,
    pub base_score: f64,
    pub model_score: f64,
    pub exact: bool,
    pub units: Vec<UnitReport>,
}

impl AttributionReport {
    /// Pairs each weight with its trip (denormalized through `stats`) or
    /// feature group.
    pub fn new(attr: &Attribution, sample: &SequenceSample, stats: &NormStats) -> Self {
        let units = attr
            .weights
            .iter()
            .enumerate()
            .map(|(index, &shap_value)| match attr.level {
                Level::Event => {
                    let row = sample.row(index);
                    let [dt, d] = stats.denormalize_pair([row[0], row[1]]);
                    UnitReport {
                        index,
                        name: None,
                        start_time: sample.step_times.get(index).copied(),
                        delta_t_secs: Some(dt),
                        distance_km: Some(d),
                        shap_value,
                    }
                }
                Level::Feature => UnitReport {
                    index,
                    name: Some(FEATURE_GROUPS[index].0.to_string()),
                    start_time: None,
                    delta_t_secs: None,
                    distance_km: None,
                    shap_value,
                },
            })
            .collect();
        Self {
            level: attr.level,
            output: attr.output,
            base_score: attr.base_score,
            model_score: attr.model_score,
            exact: attr.exact,
            units,
        }
    }

    /// Bar-chart data: `unit_index,shap_value`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["unit_index", "shap_value"])?;
        for u in &self.units {
            w.write_record([u.index.to_string(), u.shap_value.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
