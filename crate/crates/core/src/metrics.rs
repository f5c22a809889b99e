//! Ranking quality measures: DCG/nDCG, ERR and the orientation-weighted
//! aggregated-search variants. The same functions produce evaluation
//! numbers and per-step rewards.
//!
//! Gains use `2^g - 1`. AS_DCG multiplies each item's gain by its vertical
//! orientation weight; AS_ERR scales each satisfaction probability the
//! same way. Neither AS metric is normalized.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Grade;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("cutoff must be at least 1")]
    InvalidCutoff,
    #[error("g_max must be at least 1")]
    InvalidGMax,
    #[error("grade {grade} exceeds g_max {g_max}")]
    GradeOutOfRange { grade: Grade, g_max: Grade },
    #[error("orientation weight {0} outside [0, 1]")]
    Orientation(f64),
    #[error("{0} is not an aggregated-search metric")]
    NotAggregated(MetricKind),
    #[error("step must append exactly one item ({before} -> {after})")]
    StepLength { before: usize, after: usize },
    #[error("`after` does not extend `before`")]
    NotPrefix,
    #[error("unknown metric `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Dcg,
    Ndcg,
    Err,
    AsDcg,
    AsErr,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Dcg => "dcg",
            MetricKind::Ndcg => "ndcg",
            MetricKind::Err => "err",
            MetricKind::AsDcg => "as_dcg",
            MetricKind::AsErr => "as_err",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = MetricError;

    fn from_str(s: &str) -> Result<Self, MetricError> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "dcg" => MetricKind::Dcg,
            "ndcg" => MetricKind::Ndcg,
            "err" => MetricKind::Err,
            "as_dcg" => MetricKind::AsDcg,
            "as_err" => MetricKind::AsErr,
            _ => return Err(MetricError::Unknown(s.to_string())),
        })
    }
}

/// Which metric to compute, at which cutoff, on which grade scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub cutoff: usize,
    pub g_max: Grade,
}

impl MetricSpec {
    pub fn new(kind: MetricKind, cutoff: usize, g_max: Grade) -> Result<Self, MetricError> {
        let spec = Self {
            kind,
            cutoff,
            g_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if self.cutoff < 1 {
            return Err(MetricError::InvalidCutoff);
        }
        if self.g_max < 1 {
            return Err(MetricError::InvalidGMax);
        }
        Ok(())
    }

    /// Parses `name@cutoff`, e.g. `as_dcg@10`.
    pub fn parse(text: &str, g_max: Grade) -> Result<Self, MetricError> {
        let (name, cutoff) = text
            .trim()
            .split_once('@')
            .ok_or_else(|| MetricError::Unknown(text.to_string()))?;
        let cutoff: usize = cutoff
            .parse()
            .map_err(|_| MetricError::Unknown(text.to_string()))?;
        Self::new(name.parse()?, cutoff, g_max)
    }

    pub fn label(&self) -> String {
        format!("{}@{}", self.kind, self.cutoff)
    }
}

/// Gain-bearing view of one ranked item.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedItemGain {
    pub gain_grade: Grade,
    pub orientation_weight: f64,
    pub vertical_id: usize,
}

impl RankedItemGain {
    pub fn blue_link(grade: Grade) -> Self {
        Self {
            gain_grade: grade,
            orientation_weight: 1.0,
            vertical_id: 0,
        }
    }
}

/// Module gain: floor of the mean document grade.
pub fn module_gain(doc_grades: &[Grade]) -> Grade {
    if doc_grades.is_empty() {
        return 0;
    }
    doc_grades.iter().sum::<Grade>() / doc_grades.len() as Grade
}

fn gain(g: Grade) -> f64 {
    2f64.powi(g as i32) - 1.0
}

fn discount(rank: usize) -> f64 {
    ((rank + 1) as f64).log2()
}

pub fn dcg(gains: &[Grade], cutoff: usize) -> Result<f64, MetricError> {
    if cutoff < 1 {
        return Err(MetricError::InvalidCutoff);
    }
    Ok(gains
        .iter()
        .take(cutoff)
        .enumerate()
        .map(|(i, &g)| gain(g) / discount(i + 1))
        .sum())
}

fn ideal_dcg(pool: &[Grade], cutoff: usize) -> Result<f64, MetricError> {
    let mut sorted = pool.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    dcg(&sorted, cutoff)
}

/// DCG normalized by the DCG of `ideal_pool` sorted by grade; 0 when the
/// ideal DCG is 0.
pub fn ndcg(gains: &[Grade], ideal_pool: &[Grade], cutoff: usize) -> Result<f64, MetricError> {
    let actual = dcg(gains, cutoff)?;
    let ideal = ideal_dcg(ideal_pool, cutoff)?;
    Ok(if ideal > 0.0 { actual / ideal } else { 0.0 })
}

fn err_weighted(
    items: impl Iterator<Item = (Grade, f64)>,
    g_max: Grade,
    cutoff: usize,
) -> Result<f64, MetricError> {
    if cutoff < 1 {
        return Err(MetricError::InvalidCutoff);
    }
    if g_max < 1 {
        return Err(MetricError::InvalidGMax);
    }
    let denom = 2f64.powi(g_max as i32);
    let mut not_yet = 1.0;
    let mut total = 0.0;
    for (i, (g, w)) in items.take(cutoff).enumerate() {
        if g > g_max {
            return Err(MetricError::GradeOutOfRange { grade: g, g_max });
        }
        let r = w * gain(g) / denom;
        total += not_yet * r / (i + 1) as f64;
        not_yet *= 1.0 - r;
    }
    Ok(total)
}

/// Expected reciprocal rank with satisfaction probability `(2^g - 1) / 2^g_max`.
pub fn err(gains: &[Grade], g_max: Grade, cutoff: usize) -> Result<f64, MetricError> {
    err_weighted(gains.iter().map(|&g| (g, 1.0)), g_max, cutoff)
}

fn check_orientation(items: &[RankedItemGain]) -> Result<(), MetricError> {
    match items
        .iter()
        .find(|it| !(0.0..=1.0).contains(&it.orientation_weight))
    {
        Some(it) => Err(MetricError::Orientation(it.orientation_weight)),
        None => Ok(()),
    }
}

/// Orientation-weighted AS_DCG or AS_ERR.
pub fn as_metric(items: &[RankedItemGain], spec: &MetricSpec) -> Result<f64, MetricError> {
    spec.validate()?;
    check_orientation(items)?;
    match spec.kind {
        MetricKind::AsDcg => Ok(items
            .iter()
            .take(spec.cutoff)
            .enumerate()
            .map(|(i, it)| it.orientation_weight * gain(it.gain_grade) / discount(i + 1))
            .sum()),
        MetricKind::AsErr => err_weighted(
            items.iter().map(|it| (it.gain_grade, it.orientation_weight)),
            spec.g_max,
            spec.cutoff,
        ),
        other => Err(MetricError::NotAggregated(other)),
    }
}

/// Value of `spec` for a ranked list; `pool` (all candidate items of the
/// query) is only consulted by nDCG.
pub fn evaluate(
    spec: &MetricSpec,
    items: &[RankedItemGain],
    pool: &[RankedItemGain],
) -> Result<f64, MetricError> {
    spec.validate()?;
    let grades = || items.iter().map(|it| it.gain_grade).collect::<Vec<_>>();
    match spec.kind {
        MetricKind::Dcg => dcg(&grades(), spec.cutoff),
        MetricKind::Ndcg => {
            let pool: Vec<Grade> = pool.iter().map(|it| it.gain_grade).collect();
            ndcg(&grades(), &pool, spec.cutoff)
        }
        MetricKind::Err => err(&grades(), spec.g_max, spec.cutoff),
        MetricKind::AsDcg | MetricKind::AsErr => as_metric(items, spec),
    }
}

/// `metric(after) - metric(before)` where `after` appends one item to `before`.
pub fn step_reward(
    spec: &MetricSpec,
    pool: &[RankedItemGain],
    before: &[RankedItemGain],
    after: &[RankedItemGain],
) -> Result<f64, MetricError> {
    if after.len() != before.len() + 1 {
        return Err(MetricError::StepLength {
            before: before.len(),
            after: after.len(),
        });
    }
    if after[..before.len()] != *before {
        return Err(MetricError::NotPrefix);
    }
    if after.len() > spec.cutoff {
        spec.validate()?;
        return Ok(0.0);
    }
    Ok(evaluate(spec, after, pool)? - evaluate(spec, before, pool)?)
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: 0.0,
            stderr: 0.0,
            n,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Summary { mean, stderr, n }
}
