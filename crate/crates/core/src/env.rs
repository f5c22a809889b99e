//! The ranking MDP: state, legal actions, deterministic transitions and
//! telescoping rewards, plus the episode driver that runs the policy.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::QueryRecord;
use crate::metrics::{self, MetricError, MetricSpec, RankedItemGain};
use crate::neural::{GradTape, ModelParams};
use crate::policy::graph::{build_episode, EpisodeGraph, EpisodeInputs, Selection};
use crate::policy::{rank_context, ContextMode, PolicyError};

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("target length must be at least 1")]
    InvalidTarget,
    #[error("illegal action {0}: not among the remaining candidates")]
    IllegalAction(String),
    #[error("query {0} has no candidates")]
    NoCandidates(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A candidate of one query: an index into its blue-links or its modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ItemRef {
    BlueLink(usize),
    Module(usize),
}

impl ItemRef {
    pub fn id<'q>(&self, query: &'q QueryRecord) -> &'q str {
        match *self {
            ItemRef::BlueLink(i) => &query.blue_links[i].doc_id,
            ItemRef::Module(j) => &query.modules[j].module_id,
        }
    }

    /// Source vertical; 0 for blue-links.
    pub fn vertical(&self, query: &QueryRecord) -> usize {
        match *self {
            ItemRef::BlueLink(_) => 0,
            ItemRef::Module(j) => query.modules[j].vertical_id,
        }
    }

    pub fn gain(&self, query: &QueryRecord) -> RankedItemGain {
        match *self {
            ItemRef::BlueLink(i) => RankedItemGain::blue_link(query.blue_links[i].relevance),
            ItemRef::Module(j) => {
                let m = &query.modules[j];
                RankedItemGain {
                    gain_grade: m.gain(),
                    orientation_weight: query.orientation[m.vertical_id],
                    vertical_id: m.vertical_id,
                }
            }
        }
    }
}

/// All candidates of a query: blue-links first, then modules.
pub fn candidate_pool(query: &QueryRecord) -> Vec<ItemRef> {
    (0..query.blue_links.len())
        .map(ItemRef::BlueLink)
        .chain((0..query.modules.len()).map(ItemRef::Module))
        .collect()
}

pub fn pool_gains(query: &QueryRecord) -> Vec<RankedItemGain> {
    candidate_pool(query).iter().map(|c| c.gain(query)).collect()
}

/// `<q, Z_t, X_t, C>` plus the episode length.
#[derive(Debug, Clone, PartialEq)]
pub struct RankingState<'q> {
    query: &'q QueryRecord,
    partial: Vec<ItemRef>,
    candidates: Vec<ItemRef>,
    context: Vec<usize>,
    target: usize,
}

impl<'q> RankingState<'q> {
    /// Initial state. A target longer than the candidate set is clamped.
    pub fn reset(
        query: &'q QueryRecord,
        context: Vec<usize>,
        target_length: usize,
    ) -> Result<Self, EnvError> {
        if target_length < 1 {
            return Err(EnvError::InvalidTarget);
        }
        let candidates = candidate_pool(query);
        let mut target = target_length;
        if target > candidates.len() {
            log::warn!(
                "query {}: target length {} exceeds {} candidates, clamping",
                query.query_id,
                target,
                candidates.len()
            );
            target = candidates.len();
        }
        Ok(Self {
            query,
            partial: Vec::with_capacity(target),
            candidates,
            context,
            target,
        })
    }

    pub fn query(&self) -> &'q QueryRecord {
        self.query
    }

    pub fn partial(&self) -> &[ItemRef] {
        &self.partial
    }

    pub fn candidates(&self) -> &[ItemRef] {
        &self.candidates
    }

    pub fn context(&self) -> &[usize] {
        &self.context
    }

    pub fn target_length(&self) -> usize {
        self.target
    }

    pub fn is_done(&self) -> bool {
        self.partial.len() >= self.target || self.candidates.is_empty()
    }

    pub fn gains(&self) -> Vec<RankedItemGain> {
        self.partial.iter().map(|a| a.gain(self.query)).collect()
    }

    /// Moves `action` from `X_t` to the end of `Z_t`.
    pub fn transition(&self, action: ItemRef) -> Result<Self, EnvError> {
        let pos = self
            .candidates
            .iter()
            .position(|&c| c == action)
            .filter(|_| !self.is_done())
            .ok_or_else(|| EnvError::IllegalAction(self.describe(action)))?;
        let mut next = self.clone();
        next.candidates.remove(pos);
        next.partial.push(action);
        Ok(next)
    }

    /// Transition plus the reward `R(s_{t+1}) - R(s_t)` under `spec`.
    pub fn step(&self, action: ItemRef, spec: &MetricSpec) -> Result<(Self, f64, bool), EnvError> {
        let next = self.transition(action)?;
        let pool = pool_gains(self.query);
        let reward = metrics::step_reward(spec, &pool, &self.gains(), &next.gains())?;
        let done = next.is_done();
        Ok((next, reward, done))
    }

    fn describe(&self, action: ItemRef) -> String {
        let exists = match action {
            ItemRef::BlueLink(i) => i < self.query.blue_links.len(),
            ItemRef::Module(j) => j < self.query.modules.len(),
        };
        if exists {
            action.id(self.query).to_string()
        } else {
            format!("{action:?}")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOptions {
    pub target_length: usize,
    pub context_len: usize,
    pub context_mode: ContextMode,
    pub reward: MetricSpec,
    /// Build the self-supervised losses on the tape.
    pub ssl: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            target_length: 10,
            context_len: 10,
            context_mode: ContextMode::Policy,
            reward: MetricSpec::new(metrics::MetricKind::AsDcg, 10, crate::corpus::DEFAULT_G_MAX)
                .expect("valid default metric"),
            ssl: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Blue-link indices forming the context list under `mode`, or `None`.
pub fn select_context(
    query: &QueryRecord,
    params: &ModelParams,
    mode: ContextMode,
    context_len: usize,
    seed: u64,
) -> Result<Option<Vec<usize>>, EnvError> {
    let t_c = context_len.min(query.blue_links.len());
    if t_c == 0 || mode == ContextMode::None {
        return Ok(None);
    }
    let ctx = match mode {
        ContextMode::Policy => rank_context(query, params, t_c)?,
        ContextMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let mut idx: Vec<usize> = (0..query.blue_links.len()).collect();
            idx.shuffle(&mut rng);
            idx.truncate(t_c);
            idx
        }
        ContextMode::Oracle => {
            let mut idx: Vec<usize> = (0..query.blue_links.len()).collect();
            idx.sort_by(|&a, &b| {
                let (da, db) = (&query.blue_links[a], &query.blue_links[b]);
                db.relevance.cmp(&da.relevance).then(da.doc_id.cmp(&db.doc_id))
            });
            idx.truncate(t_c);
            idx
        }
        ContextMode::None => unreachable!(),
    };
    Ok(Some(ctx))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub action: ItemRef,
    pub action_id: String,
    pub vertical: usize,
    pub candidates: Vec<ItemRef>,
    pub probabilities: Vec<f64>,
    pub log_prob: f64,
    pub reward: f64,
    /// `h_t` and `h_{t+1}`.
    pub h: Vec<f64>,
    pub h_next: Vec<f64>,
    /// Pseudo module and projected content of the chosen module.
    pub pseudo: Option<Vec<f64>>,
    pub content: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionRow {
    pub vertical_id: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub query_id: String,
    pub context: Vec<usize>,
    pub attention: Vec<AttentionRow>,
    pub steps: Vec<TraceStep>,
    pub terminal_metric: f64,
}

impl EpisodeTrace {
    pub fn actions(&self) -> Vec<ItemRef> {
        self.steps.iter().map(|s| s.action).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn serp_ids(&self) -> Vec<String> {
        self.steps.iter().map(|s| s.action_id.clone()).collect()
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), EnvError> {
        #[derive(Serialize)]
        struct Line<'a> {
            step: usize,
            action_id: &'a str,
            vertical: usize,
            reward: f64,
            log_prob: f64,
        }
        for (t, s) in self.steps.iter().enumerate() {
            let line = Line {
                step: t,
                action_id: &s.action_id,
                vertical: s.vertical,
                reward: s.reward,
                log_prob: s.log_prob,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs one episode on `tape`, returning the trace and the graph so callers
/// can build losses on the same tape. `seed` drives sampling and the random
/// context sampler.
pub fn rollout(
    tape: &mut GradTape<'_>,
    query: &QueryRecord,
    params: &ModelParams,
    options: &EpisodeOptions,
    mode: DecodeMode,
    seed: u64,
) -> Result<(EpisodeTrace, EpisodeGraph), EnvError> {
    if query.candidate_count() == 0 {
        return Err(EnvError::NoCandidates(query.query_id.clone()));
    }
    let context = select_context(query, params, options.context_mode, options.context_len, seed)?;
    let inputs = EpisodeInputs {
        query,
        context: context.as_deref(),
        target_length: options.target_length,
        ssl: options.ssl,
    };
    let graph = match mode {
        DecodeMode::Greedy => build_episode::<ChaCha8Rng>(tape, params, &inputs, Selection::Greedy)?,
        DecodeMode::Sample => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            build_episode(tape, params, &inputs, Selection::Sample(&mut rng))?
        }
    };
    let trace = trace_from_graph(tape, query, context.unwrap_or_default(), &graph, &options.reward)?;
    Ok((trace, graph))
}

/// Replays the graph's actions through the environment to collect rewards.
pub fn trace_from_graph(
    tape: &GradTape<'_>,
    query: &QueryRecord,
    context: Vec<usize>,
    graph: &EpisodeGraph,
    reward: &MetricSpec,
) -> Result<EpisodeTrace, EnvError> {
    let mut state = RankingState::reset(query, context.clone(), graph.steps.len().max(1))?;
    let mut steps = Vec::with_capacity(graph.steps.len());
    for (t, rec) in graph.steps.iter().enumerate() {
        let action = rec.action();
        let (next, r, _) = state.step(action, reward)?;
        state = next;
        let (pseudo, content) = match action {
            ItemRef::Module(j) => (
                graph.pseudo[j].map(|p| tape.value(p.vector).to_vec()),
                Some(tape.value(graph.module_content[j]).to_vec()),
            ),
            ItemRef::BlueLink(_) => (None, None),
        };
        steps.push(TraceStep {
            action,
            action_id: action.id(query).to_string(),
            vertical: action.vertical(query),
            candidates: rec.candidates.clone(),
            probabilities: rec.probabilities.clone(),
            log_prob: tape.scalar(rec.log_prob),
            reward: r,
            h: tape.value(graph.encoded[t]).to_vec(),
            h_next: tape.value(graph.encoded[t + 1]).to_vec(),
            pseudo,
            content,
        });
    }
    let attention = query
        .modules
        .iter()
        .zip(&graph.pseudo)
        .filter_map(|(m, p)| {
            p.map(|p| AttentionRow {
                vertical_id: m.vertical_id,
                weights: tape.value(p.weights).to_vec(),
            })
        })
        .collect();
    let terminal_metric = metrics::evaluate(reward, &state.gains(), &pool_gains(query))?;
    Ok(EpisodeTrace {
        query_id: query.query_id.clone(),
        context,
        attention,
        steps,
        terminal_metric,
    })
}

/// Runs one episode with its own tape and returns the trace.
pub fn run_episode(
    query: &QueryRecord,
    params: &ModelParams,
    options: &EpisodeOptions,
    mode: DecodeMode,
    seed: u64,
) -> Result<EpisodeTrace, EnvError> {
    let mut tape = GradTape::new(params.store());
    rollout(&mut tape, query, params, options, mode, seed).map(|(trace, _)| trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{BlueLink, ModuleRecord};
    use crate::metrics::MetricKind;

    fn query(k: usize, modules: usize) -> QueryRecord {
        QueryRecord {
            query_id: "q".into(),
            embedding: vec![0.1, -0.2],
            blue_links: (0..k)
                .map(|i| BlueLink {
                    doc_id: format!("d{i}"),
                    embedding: vec![0.3 * i as f64, 0.1],
                    relevance: (i % 5) as u32,
                })
                .collect(),
            modules: (0..modules)
                .map(|j| ModuleRecord {
                    module_id: format!("m{}", j + 1),
                    vertical_id: j + 1,
                    raw_features: vec![0.5; 3],
                    doc_grades: vec![3, 3],
                })
                .collect(),
            orientation: std::iter::once(1.0)
                .chain((0..modules).map(|_| 0.5))
                .collect(),
        }
    }

    fn dcg10() -> MetricSpec {
        MetricSpec::new(MetricKind::Dcg, 10, 4).unwrap()
    }

    #[test]
    fn pool_holds_every_candidate() {
        let q = query(3, 2);
        let s = RankingState::reset(&q, vec![], 10).unwrap();
        assert_eq!(s.candidates().len(), 5);
        assert_eq!(s.target_length(), 5);
        assert!(s.partial().is_empty());
        assert_eq!(s, RankingState::reset(&q, vec![], 10).unwrap());
    }

    #[test]
    fn zero_target_rejected() {
        let q = query(3, 2);
        assert!(matches!(RankingState::reset(&q, vec![], 0), Err(EnvError::InvalidTarget)));
    }

    #[test]
    fn grade_three_first_yields_seven() {
        let q = query(4, 0);
        let s = RankingState::reset(&q, vec![], 3).unwrap();
        let (next, r, done) = s.step(ItemRef::BlueLink(3), &dcg10()).unwrap();
        assert!((r - 7.0).abs() < 1e-12);
        assert!(!done);
        assert_eq!(next.partial().len() + next.candidates().len(), 4);
    }

    #[test]
    fn last_item_finishes_episode() {
        let q = query(1, 0);
        let s = RankingState::reset(&q, vec![], 1).unwrap();
        let (_, _, done) = s.step(ItemRef::BlueLink(0), &dcg10()).unwrap();
        assert!(done);
    }

    #[test]
    fn illegal_actions_rejected() {
        let q = query(2, 1);
        let s = RankingState::reset(&q, vec![], 3).unwrap();
        let s = s.transition(ItemRef::BlueLink(0)).unwrap();
        assert!(matches!(s.transition(ItemRef::BlueLink(0)), Err(EnvError::IllegalAction(_))));
        assert!(matches!(s.transition(ItemRef::Module(7)), Err(EnvError::IllegalAction(_))));
        let done = RankingState::reset(&q, vec![], 1)
            .unwrap()
            .transition(ItemRef::Module(0))
            .unwrap();
        assert!(done.transition(ItemRef::BlueLink(1)).is_err());
    }

    #[test]
    fn module_gain_carries_orientation() {
        let q = query(1, 2);
        let g = ItemRef::Module(1).gain(&q);
        assert_eq!(g.gain_grade, 3);
        assert_eq!(g.vertical_id, 2);
        assert_eq!(g.orientation_weight, 0.5);
    }

    #[test]
    fn trace_dump_has_one_line_per_step() {
        let trace = EpisodeTrace {
            query_id: "q".into(),
            context: vec![],
            attention: vec![],
            steps: vec![TraceStep {
                action: ItemRef::BlueLink(0),
                action_id: "d0".into(),
                vertical: 0,
                candidates: vec![ItemRef::BlueLink(0)],
                probabilities: vec![1.0],
                log_prob: 0.0,
                reward: 1.0,
                h: vec![],
                h_next: vec![],
                pseudo: None,
                content: None,
            }],
            terminal_metric: 1.0,
        };
        let mut buf = Vec::new();
        trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["action_id"], "d0");
        assert_eq!(v["step"], 0);
    }
}
