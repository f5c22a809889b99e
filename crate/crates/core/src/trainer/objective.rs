//! REINFORCE with a per-step batch baseline, the composite loss and the
//! click-derived rewards.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::corpus::{ClickLog, QueryRecord};
use crate::env::{EpisodeTrace, ItemRef};
use crate::neural::{GradTape, ModelParams, ParamStore, Var};
use crate::policy::graph::{build_episode, EpisodeGraph, EpisodeInputs, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    None,
    /// `b_t` = mean reward-to-go at step `t` over the batch.
    #[default]
    BatchMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClickReward {
    /// 1 per clicked rank.
    #[default]
    Binary,
    /// A click at rank `t` earns `1 / log2(t + 1)`.
    Discounted,
}

impl ClickReward {
    fn value(self, rank: usize) -> f64 {
        match self {
            ClickReward::Binary => 1.0,
            ClickReward::Discounted => 1.0 / ((rank + 1) as f64).log2(),
        }
    }
}

/// `G_t = Σ_{t' >= t} r_t'`.
pub fn returns_to_go(rewards: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc += rewards[t];
        out[t] = acc;
    }
    out
}

/// Per-step advantages `G_t - b_t`. Episodes may differ in length; `b_t`
/// averages over the episodes that reach step `t`.
pub fn advantages(batch_rewards: &[Vec<f64>], baseline: Baseline) -> Result<Vec<Vec<f64>>, TrainError> {
    if batch_rewards.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let returns: Vec<Vec<f64>> = batch_rewards.iter().map(|r| returns_to_go(r)).collect();
    if baseline == Baseline::None {
        return Ok(returns);
    }
    let horizon = returns.iter().map(Vec::len).max().unwrap_or(0);
    let mut sums = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    for g in &returns {
        for (t, v) in g.iter().enumerate() {
            sums[t] += v;
            counts[t] += 1;
        }
    }
    Ok(returns
        .into_iter()
        .map(|g| {
            g.into_iter()
                .enumerate()
                .map(|(t, v)| v - sums[t] / counts[t] as f64)
                .collect()
        })
        .collect())
}

/// Per-step rewards from the clicks recorded on the trace's own SERP.
pub fn weak_reward(trace: &EpisodeTrace, clicks: &ClickLog, variant: ClickReward) -> Result<Vec<f64>, TrainError> {
    let serp = trace.serp_ids();
    if clicks.impressions != serp || clicks.clicks.len() != serp.len() {
        return Err(TrainError::ClickMismatch(format!(
            "query {}: click log does not match the {}-item SERP",
            trace.query_id,
            serp.len()
        )));
    }
    Ok(clicks
        .clicks
        .iter()
        .enumerate()
        .map(|(t, &c)| if c { variant.value(t + 1) } else { 0.0 })
        .collect())
}

/// Rewards for a SERP from logged click labels: an item earns the click
/// reward when it was clicked anywhere in the logs for its query.
pub fn logged_click_reward(trace: &EpisodeTrace, clicked: &HashSet<String>, variant: ClickReward) -> Vec<f64> {
    trace
        .steps
        .iter()
        .enumerate()
        .map(|(t, s)| {
            if clicked.contains(&s.action_id) {
                variant.value(t + 1)
            } else {
                0.0
            }
        })
        .collect()
}

/// Weights of the auxiliary terms; `None` leaves them out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslWeights {
    pub inverse: f64,
    pub forward: f64,
}

/// Surrogate to minimize for one episode of a batch of `batch_size`:
/// `-(1/B) Σ_t log π(a_t|s_t) A_t + (w_I/B) L_I + (w_F/B) L_F`.
/// Returns the loss and the values of `L_I`, `L_F`.
pub fn episode_loss(
    tape: &mut GradTape<'_>,
    graph: &EpisodeGraph,
    advantages: &[f64],
    ssl: Option<SslWeights>,
    batch_size: usize,
) -> (Var, f64, f64) {
    let b = batch_size as f64;
    let mut terms: Vec<Var> = graph
        .steps
        .iter()
        .zip(advantages)
        .map(|(s, &a)| tape.scale(s.log_prob, -a / b))
        .collect();
    let (mut l_i, mut l_f) = (0.0, 0.0);
    if let Some(w) = ssl {
        let inv = graph.inverse_mean(tape);
        let fwd = graph.forward_mean(tape);
        l_i = tape.scalar(inv);
        l_f = tape.scalar(fwd);
        terms.push(tape.scale(inv, w.inverse / b));
        terms.push(tape.scale(fwd, w.forward / b));
    }
    if terms.is_empty() {
        return (tape.constant(vec![0.0]), l_i, l_f);
    }
    (tape.sum(&terms), l_i, l_f)
}

/// An episode with its context, actions and rewards fixed, for re-scoring
/// under different parameters.
#[derive(Debug, Clone)]
pub struct FrozenEpisode<'q> {
    pub query: &'q QueryRecord,
    pub context: Option<Vec<usize>>,
    pub actions: Vec<ItemRef>,
    pub rewards: Vec<f64>,
}

impl<'q> FrozenEpisode<'q> {
    pub fn from_trace(query: &'q QueryRecord, trace: &EpisodeTrace, rewards: Vec<f64>) -> Self {
        Self {
            query,
            context: if trace.context.is_empty() {
                None
            } else {
                Some(trace.context.clone())
            },
            actions: trace.actions(),
            rewards,
        }
    }

    fn replay(&self, tape: &mut GradTape<'_>, params: &ModelParams, ssl: bool) -> Result<EpisodeGraph, TrainError> {
        let inputs = EpisodeInputs {
            query: self.query,
            context: self.context.as_deref(),
            target_length: self.actions.len().max(1),
            ssl,
        };
        Ok(build_episode::<ChaCha8Rng>(
            tape,
            params,
            &inputs,
            Selection::Replay(&self.actions),
        )?)
    }
}

/// Value and gradient (ascent direction) of the composite objective on a
/// frozen batch: `(1/B) Σ_i [Σ_t log π(a_t|s_t) A_t - w_I L_I - w_F L_F]`.
pub fn frozen_objective(
    params: &ModelParams,
    batch: &[FrozenEpisode<'_>],
    baseline: Baseline,
    ssl: Option<SslWeights>,
) -> Result<(f64, ParamStore), TrainError> {
    let rewards: Vec<Vec<f64>> = batch.iter().map(|e| e.rewards.clone()).collect();
    let adv = advantages(&rewards, baseline)?;
    let mut grads = params.zero_grads();
    let mut value = 0.0;
    for (episode, adv) in batch.iter().zip(&adv) {
        let mut tape = GradTape::new(params.store());
        let graph = episode.replay(&mut tape, params, ssl.is_some())?;
        let (loss, _, _) = episode_loss(&mut tape, &graph, adv, ssl, batch.len());
        value -= tape.scalar(loss);
        tape.backward_into(loss, -1.0, &mut grads)?;
    }
    Ok((value, grads))
}

/// Gradient of `(1/B) Σ_i Σ_t log π(a_t|s_t) (G_t - b_t)`.
pub fn policy_gradient(
    params: &ModelParams,
    batch: &[FrozenEpisode<'_>],
    baseline: Baseline,
) -> Result<ParamStore, TrainError> {
    frozen_objective(params, batch, baseline, None).map(|(_, g)| g)
}

/// Log-likelihood of the frozen actions, summed over the batch.
pub fn frozen_log_likelihood(params: &ModelParams, batch: &[FrozenEpisode<'_>]) -> Result<(f64, ParamStore), TrainError> {
    let mut grads = params.zero_grads();
    let mut value = 0.0;
    for episode in batch {
        let mut tape = GradTape::new(params.store());
        let graph = episode.replay(&mut tape, params, false)?;
        let ll = graph.log_likelihood(&mut tape);
        value += tape.scalar(ll);
        tape.backward_into(ll, 1.0, &mut grads)?;
    }
    Ok((value, grads))
}

/// Batch sums of the mean inverse and mean forward losses, each with its gradient.
pub fn frozen_ssl_losses(
    params: &ModelParams,
    batch: &[FrozenEpisode<'_>],
) -> Result<((f64, ParamStore), (f64, ParamStore)), TrainError> {
    let mut g_inv = params.zero_grads();
    let mut g_fwd = params.zero_grads();
    let (mut l_i, mut l_f) = (0.0, 0.0);
    for episode in batch {
        let mut tape = GradTape::new(params.store());
        let graph = episode.replay(&mut tape, params, true)?;
        let inv = graph.inverse_mean(&mut tape);
        l_i += tape.scalar(inv);
        tape.backward_into(inv, 1.0, &mut g_inv)?;
        let mut tape = GradTape::new(params.store());
        let graph = episode.replay(&mut tape, params, true)?;
        let fwd = graph.forward_mean(&mut tape);
        l_f += tape.scalar(fwd);
        tape.backward_into(fwd, 1.0, &mut g_fwd)?;
    }
    Ok(((l_i, g_inv), (l_f, g_fwd)))
}

/// Samples clicks on the trace's SERP and converts them to rewards.
pub fn simulated_click_reward(
    query: &QueryRecord,
    trace: &EpisodeTrace,
    model: &crate::corpus::ClickModelConfig,
    variant: ClickReward,
    seed: u64,
) -> Result<Vec<f64>, TrainError> {
    let grades: Vec<_> = trace.actions().iter().map(|a| a.gain(query).gain_grade).collect();
    let log = crate::corpus::simulate_clicks(&trace.query_id, &trace.serp_ids(), &grades, model, seed)?;
    weak_reward(trace, &log, variant)
}

/// Stream-separated seed for the click simulator of one episode.
pub(crate) fn click_seed(episode_seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    rng.set_stream(7);
    rand::Rng::random(&mut rng)
}
