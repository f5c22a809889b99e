//! Greedy evaluation, reference rankers and cross-validation folds.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::TrainError;
use crate::corpus::QueryRecord;
use crate::env::{candidate_pool, pool_gains, run_episode, DecodeMode, EpisodeOptions, ItemRef};
use crate::metrics::{self, MetricSpec, Summary};
use crate::neural::ModelParams;

/// Produces a page for a query.
#[derive(Debug, Clone, Copy)]
pub enum Ranker<'a> {
    /// Greedy decoding with the given parameters.
    Policy {
        params: &'a ModelParams,
        options: EpisodeOptions,
    },
    /// Sorts by true gain, then orientation weight, then id.
    Oracle,
    /// Uniformly shuffled candidates; per-query seeds derive from `seed`.
    Random { seed: u64 },
}

pub fn rank_query(
    query: &QueryRecord,
    index: usize,
    ranker: &Ranker<'_>,
    target_length: usize,
) -> Result<Vec<ItemRef>, TrainError> {
    let mut items = match ranker {
        Ranker::Policy { params, options } => {
            let opts = EpisodeOptions {
                target_length,
                ssl: false,
                ..*options
            };
            return Ok(run_episode(query, params, &opts, DecodeMode::Greedy, 0)?.actions());
        }
        Ranker::Oracle => {
            let mut pool = candidate_pool(query);
            pool.sort_by(|a, b| {
                let (ga, gb) = (a.gain(query), b.gain(query));
                gb.gain_grade
                    .cmp(&ga.gain_grade)
                    .then(gb.orientation_weight.total_cmp(&ga.orientation_weight))
                    .then(a.id(query).cmp(b.id(query)))
            });
            pool
        }
        Ranker::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rng.set_stream(index as u64 + 1);
            let mut pool = candidate_pool(query);
            pool.shuffle(&mut rng);
            pool
        }
    };
    items.truncate(target_length);
    Ok(items)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryScores {
    pub query_id: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metrics: Vec<String>,
    pub per_query: Vec<QueryScores>,
    pub summary: Vec<Summary>,
}

impl EvalReport {
    pub fn mean(&self, label: &str) -> Option<f64> {
        self.metrics
            .iter()
            .position(|m| m == label)
            .map(|i| self.summary[i].mean)
    }

    /// Per-query rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id");
        for m in &self.metrics {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for q in &self.per_query {
            out.push_str(&q.query_id);
            for v in &q.values {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out.push_str("mean");
        for s in &self.summary {
            let _ = write!(out, ",{}", s.mean);
        }
        out.push('\n');
        out
    }

    pub fn to_json(&self) -> Result<String, TrainError> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Scores each query's page under every metric; pages are truncated to
/// `target_length`.
pub fn evaluate(
    queries: &[QueryRecord],
    ranker: &Ranker<'_>,
    specs: &[MetricSpec],
    target_length: usize,
) -> Result<EvalReport, TrainError> {
    let per_query = queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| {
            let page = rank_query(q, i, ranker, target_length)?;
            let gains: Vec<_> = page.iter().map(|a| a.gain(q)).collect();
            let pool = pool_gains(q);
            let values = specs
                .iter()
                .map(|s| metrics::evaluate(s, &gains, &pool))
                .collect::<Result<Vec<f64>, _>>()?;
            Ok(QueryScores {
                query_id: q.query_id.clone(),
                values,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let summary = (0..specs.len())
        .map(|k| metrics::summarize(&per_query.iter().map(|q| q.values[k]).collect::<Vec<_>>()))
        .collect();
    Ok(EvalReport {
        metrics: specs.iter().map(MetricSpec::label).collect(),
        per_query,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// `k` folds over a seeded permutation of `0..n`; every index is tested once.
pub fn kfold(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>, TrainError> {
    if k < 2 || k > n {
        return Err(TrainError::Config(format!("cannot split {n} queries into {k} folds")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok((0..k)
        .map(|f| {
            let (lo, hi) = (f * n / k, (f + 1) * n / k);
            let mut test = idx[lo..hi].to_vec();
            let mut train: Vec<usize> = idx[..lo].iter().chain(&idx[hi..]).copied().collect();
            test.sort_unstable();
            train.sort_unstable();
            Fold { train, test }
        })
        .collect())
}
