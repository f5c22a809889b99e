//! Joint policy-gradient and self-supervised training, evaluation and
//! cross-validation folds.

pub mod eval;
pub mod objective;
pub mod optim;
pub mod report;

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClickLog, ClickModelConfig, CorpusError, QueryRecord, Schema};
use crate::env::{rollout, DecodeMode, EnvError, EpisodeOptions};
use crate::metrics::{MetricError, MetricKind, MetricSpec};
use crate::neural::{GradTape, GruMode, ModelParams, ModelShape, NeuralError, ParamStore};
use crate::policy::{ContextMode, PolicyError};

pub use eval::{evaluate, kfold, rank_query, EvalReport, Fold, QueryScores, Ranker};
pub use objective::{
    advantages, episode_loss, frozen_log_likelihood, frozen_objective, frozen_ssl_losses,
    logged_click_reward, policy_gradient, returns_to_go, simulated_click_reward, weak_reward,
    Baseline, ClickReward, FrozenEpisode, SslWeights,
};
pub use optim::{Optimizer, StepRule};
pub use report::{TrainReport, UpdateRow};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("no training queries")]
    EmptyCorpus,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("click mismatch: {0}")]
    ClickMismatch(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Supervision {
    /// Metric rewards from relevance labels.
    #[default]
    Full,
    /// Rewards from clicks, simulated on each sampled page or read from logs.
    Weak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Reward metric; its cutoff is the target length.
    pub reward: MetricKind,
    pub supervision: Supervision,
    pub clicks: ClickModelConfig,
    pub click_reward: ClickReward,
    pub episodes_per_batch: usize,
    pub learning_rate: f64,
    pub step_rule: StepRule,
    pub baseline: Baseline,
    pub ssl_enabled: bool,
    pub inverse_weight: f64,
    pub forward_weight: f64,
    pub gru_mode: GruMode,
    pub context_mode: ContextMode,
    pub context_len: usize,
    pub target_length: usize,
    pub seed: u64,
    pub max_updates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            reward: MetricKind::AsDcg,
            supervision: Supervision::Full,
            clicks: ClickModelConfig::default(),
            click_reward: ClickReward::Binary,
            episodes_per_batch: 32,
            learning_rate: 0.003,
            step_rule: StepRule::Adam,
            baseline: Baseline::BatchMean,
            ssl_enabled: true,
            inverse_weight: 0.1,
            forward_weight: 0.1,
            gru_mode: GruMode::Uni,
            context_mode: ContextMode::Policy,
            context_len: 10,
            target_length: 10,
            seed: 0,
            max_updates: 2000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.episodes_per_batch < 1 {
            return bad("episodes_per_batch must be at least 1".into());
        }
        if self.target_length < 1 {
            return bad("target_length must be at least 1".into());
        }
        if !(self.inverse_weight >= 0.0 && self.forward_weight >= 0.0) {
            return bad("SSL weights must be non-negative".into());
        }
        self.clicks.validate()?;
        Ok(())
    }

    pub fn reward_spec(&self, g_max: crate::corpus::Grade) -> Result<MetricSpec, TrainError> {
        Ok(MetricSpec::new(self.reward, self.target_length, g_max)?)
    }

    pub fn episode_options(&self, g_max: crate::corpus::Grade) -> Result<EpisodeOptions, TrainError> {
        Ok(EpisodeOptions {
            target_length: self.target_length,
            context_len: self.context_len,
            context_mode: self.context_mode,
            reward: self.reward_spec(g_max)?,
            ssl: self.ssl_enabled,
        })
    }

    pub fn ssl_weights(&self) -> Option<SslWeights> {
        self.ssl_enabled.then_some(SslWeights {
            inverse: self.inverse_weight,
            forward: self.forward_weight,
        })
    }

    pub fn model_shape(&self, schema: &Schema) -> ModelShape {
        ModelShape {
            alpha: schema.alpha,
            raw_dims: schema.module_raw_dims(),
            gru_mode: self.gru_mode,
        }
    }
}

/// Where per-step rewards come from.
#[derive(Debug, Clone)]
pub enum RewardSource {
    Metric,
    Simulated(ClickModelConfig, ClickReward),
    /// Clicked item ids per query id.
    Logged(HashMap<String, HashSet<String>>, ClickReward),
}

impl RewardSource {
    pub fn from_logs(logs: &[ClickLog], variant: ClickReward) -> Result<Self, TrainError> {
        let mut map: HashMap<String, HashSet<String>> = HashMap::new();
        for log in logs {
            log.validate()?;
            let set = map.entry(log.query_id.clone()).or_default();
            for (id, &c) in log.impressions.iter().zip(&log.clicks) {
                if c {
                    set.insert(id.clone());
                }
            }
        }
        Ok(RewardSource::Logged(map, variant))
    }
}

/// One update on a batch of `(query, episode seed)` pairs: sample episodes
/// in parallel, compute advantages, then descend the composite surrogate.
/// A non-finite gradient leaves the parameters untouched and halves the
/// optimizer's learning rate.
pub fn joint_update(
    params: &mut ModelParams,
    optimizer: &mut Optimizer,
    batch: &[(&QueryRecord, u64)],
    config: &TrainConfig,
    options: &EpisodeOptions,
    source: &RewardSource,
) -> Result<UpdateRow, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let snapshot: &ModelParams = params;
    let mut rollouts = batch
        .par_iter()
        .map(|&(query, seed)| {
            let mut tape = GradTape::new(snapshot.store());
            let (trace, graph) = rollout(&mut tape, query, snapshot, options, DecodeMode::Sample, seed)?;
            let rewards = match source {
                RewardSource::Metric => trace.rewards(),
                RewardSource::Simulated(model, variant) => {
                    simulated_click_reward(query, &trace, model, *variant, objective::click_seed(seed))?
                }
                RewardSource::Logged(map, variant) => match map.get(&query.query_id) {
                    Some(set) => logged_click_reward(&trace, set, *variant),
                    None => vec![0.0; trace.steps.len()],
                },
            };
            Ok((tape, graph, trace, rewards))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;

    let rewards: Vec<Vec<f64>> = rollouts.iter().map(|r| r.3.clone()).collect();
    let adv = advantages(&rewards, config.baseline)?;
    let ssl = config.ssl_weights();
    let n = batch.len();
    let parts = rollouts
        .par_iter_mut()
        .zip(adv.par_iter())
        .map(|((tape, graph, _, _), adv)| {
            let (loss, l_i, l_f) = episode_loss(tape, graph, adv, ssl, n);
            let grads = tape.backward(loss, 1.0)?;
            Ok((grads, l_i, l_f))
        })
        .collect::<Result<Vec<(ParamStore, f64, f64)>, TrainError>>()?;

    let mut grads = params.zero_grads();
    let (mut l_i, mut l_f) = (0.0, 0.0);
    for (g, i, f) in &parts {
        grads.add_scaled(g, 1.0);
        l_i += i;
        l_f += f;
    }
    let grad_norm = grads.norm();
    let mean_return = rewards.iter().map(|r| r.iter().sum::<f64>()).sum::<f64>() / n as f64;
    let metric = rollouts.iter().map(|r| r.2.terminal_metric).sum::<f64>() / n as f64;

    if grads.is_finite() {
        let layout_ssl = params.layout().ssl_ids();
        let ssl_on = config.ssl_enabled;
        optimizer.step(params.store_mut(), &grads, |id| !ssl_on && layout_ssl.contains(&id));
    } else {
        let lr = optimizer.learning_rate() / 2.0;
        log::warn!("non-finite gradient; update skipped, learning rate halved to {lr}");
        optimizer.set_learning_rate(lr);
    }
    Ok(UpdateRow {
        update: 0,
        mean_return,
        metric,
        l_i: l_i / n as f64,
        l_f: l_f / n as f64,
        grad_norm,
        seconds: 0.0,
    })
}

/// Stateful training loop over a fixed query set.
pub struct Trainer<'a> {
    config: TrainConfig,
    options: EpisodeOptions,
    params: ModelParams,
    optimizer: Optimizer,
    queries: &'a [QueryRecord],
    source: RewardSource,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    report: TrainReport,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(queries: &'a [QueryRecord], schema: &Schema, config: TrainConfig) -> Result<Self, TrainError> {
        let params = ModelParams::init(config.model_shape(schema), config.seed)?;
        Self::with_params(queries, schema, config, params)
    }

    /// Starts from existing parameters, e.g. a checkpoint.
    pub fn with_params(
        queries: &'a [QueryRecord],
        schema: &Schema,
        config: TrainConfig,
        params: ModelParams,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        if queries.is_empty() {
            return Err(TrainError::EmptyCorpus);
        }
        let expected = config.model_shape(schema);
        if params.shape() != &expected {
            return Err(TrainError::Config(
                "model shape does not match the schema and GRU mode".into(),
            ));
        }
        let options = config.episode_options(schema.g_max)?;
        let source = match config.supervision {
            Supervision::Full => RewardSource::Metric,
            Supervision::Weak => RewardSource::Simulated(config.clicks, config.click_reward),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(2);
        let optimizer = Optimizer::new(config.step_rule, config.learning_rate, params.store());
        Ok(Self {
            config,
            options,
            params,
            optimizer,
            queries,
            source,
            rng,
            order: Vec::new(),
            cursor: 0,
            report: TrainReport::default(),
            started: Instant::now(),
        })
    }

    /// Replaces click simulation with rewards from logged clicks.
    pub fn use_click_logs(&mut self, logs: &[ClickLog]) -> Result<(), TrainError> {
        self.source = RewardSource::from_logs(logs, self.config.click_reward)?;
        Ok(())
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    fn next_batch(&mut self) -> Vec<(&'a QueryRecord, u64)> {
        let mut batch = Vec::with_capacity(self.config.episodes_per_batch);
        while batch.len() < self.config.episodes_per_batch {
            if self.cursor == self.order.len() {
                self.order = (0..self.queries.len()).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            let q = &self.queries[self.order[self.cursor]];
            self.cursor += 1;
            batch.push((q, self.rng.random::<u64>()));
        }
        batch
    }

    pub fn step(&mut self) -> Result<&UpdateRow, TrainError> {
        let batch = self.next_batch();
        let mut row = joint_update(
            &mut self.params,
            &mut self.optimizer,
            &batch,
            &self.config,
            &self.options,
            &self.source,
        )?;
        row.update = self.report.rows.len() + 1;
        row.seconds = self.started.elapsed().as_secs_f64();
        log::debug!(
            "update {} return {:.4} metric {:.4} L_I {:.4} L_F {:.4} |g| {:.4}",
            row.update,
            row.mean_return,
            row.metric,
            row.l_i,
            row.l_f,
            row.grad_norm
        );
        self.report.rows.push(row);
        Ok(self.report.rows.last().expect("just pushed"))
    }

    pub fn run(&mut self) -> Result<(), TrainError> {
        while self.report.rows.len() < self.config.max_updates {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(self) -> (ModelParams, TrainReport) {
        (self.params, self.report)
    }
}

/// Trains from a fresh initialization for `config.max_updates` updates.
pub fn train(
    queries: &[QueryRecord],
    schema: &Schema,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport), TrainError> {
    let mut trainer = Trainer::new(queries, schema, config.clone())?;
    trainer.run()?;
    Ok(trainer.finish())
}
