//! Objective evaluation: SI-SDR, STOI and grouped reports.

mod sisdr;
mod stoi;

pub use self::sisdr::{si_sdr, RESIDUAL_FLOOR, SI_SDR_INFINITE};
pub use self::stoi::{resample, stoi, STOI_RATE};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    SiSdr,
    Stoi,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::SiSdr => "si_sdr",
            Metric::Stoi => "stoi",
        }
    }

    pub fn compute(self, estimate: &[f64], reference: &[f64], sample_rate: u32) -> Result<f64> {
        match self {
            Metric::SiSdr => si_sdr(estimate, reference),
            Metric::Stoi => stoi(estimate, reference, sample_rate),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "si_sdr" => Ok(Metric::SiSdr),
            "stoi" => Ok(Metric::Stoi),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalEntry {
    pub condition: String,
    pub metric: Metric,
    pub item_id: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub condition: String,
    pub metric: Metric,
    pub mean: f64,
    pub count: usize,
}

/// Label of the aggregate over every condition.
pub const ALL_CONDITIONS: &str = "all";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub entries: Vec<EvalEntry>,
}

impl EvalReport {
    fn conditions(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.condition.as_str()) {
                seen.push(&e.condition);
            }
        }
        seen
    }

    fn metrics(&self) -> Vec<Metric> {
        let mut m: Vec<Metric> = self.entries.iter().map(|e| e.metric).collect();
        m.sort();
        m.dedup();
        m
    }

    fn aggregate(&self, condition: Option<&str>, metric: Metric) -> Aggregate {
        let values: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.metric == metric && condition.is_none_or(|c| e.condition == c))
            .map(|e| e.value)
            .collect();
        Aggregate {
            condition: condition.unwrap_or(ALL_CONDITIONS).to_string(),
            metric,
            mean: values.iter().sum::<f64>() / values.len() as f64,
            count: values.len(),
        }
    }

    /// One row per condition and metric in first-seen order, then the
    /// overall rows.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let metrics = self.metrics();
        let mut out = Vec::new();
        for c in self.conditions() {
            out.extend(metrics.iter().map(|&m| self.aggregate(Some(c), m)));
        }
        out.extend(metrics.iter().map(|&m| self.aggregate(None, m)));
        out
    }

    pub fn mean(&self, condition: Option<&str>, metric: Metric) -> Option<f64> {
        let a = self.aggregate(condition, metric);
        (a.count > 0).then_some(a.mean)
    }

    /// `condition,metric,item_id,value` rows, then aggregate rows with
    /// `item_id` set to `mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,metric,item_id,value\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.condition, e.metric, e.item_id, e.value
            ));
        }
        for a in self.aggregates() {
            out.push_str(&format!("{},{},mean,{}\n", a.condition, a.metric, a.mean));
        }
        out
    }
}

/// Scores every `(estimate, reference)` pair with every metric. `labels`
/// assigns a condition per pair; an empty slice puts all pairs under
/// [`ALL_CONDITIONS`].
pub fn evaluate(
    pairs: &[(&[f64], &[f64])],
    labels: &[String],
    metrics: &[Metric],
    sample_rate: u32,
) -> Result<EvalReport> {
    if pairs.is_empty() || metrics.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !labels.is_empty() && labels.len() != pairs.len() {
        return Err(Error::shape(
            "evaluate",
            format!("{} labels for {} pairs", labels.len(), pairs.len()),
        ));
    }
    let mut entries = Vec::with_capacity(pairs.len() * metrics.len());
    for (i, (estimate, reference)) in pairs.iter().enumerate() {
        if estimate.len() != reference.len() {
            return Err(Error::shape(
                "evaluate",
                format!(
                    "pair {i}: lengths {} and {}",
                    estimate.len(),
                    reference.len()
                ),
            ));
        }
        let condition = labels.get(i).map_or(ALL_CONDITIONS, String::as_str);
        for &metric in metrics {
            entries.push(EvalEntry {
                condition: condition.to_string(),
                metric,
                item_id: i,
                value: metric.compute(estimate, reference, sample_rate)?,
            });
        }
    }
    Ok(EvalReport { entries })
}
