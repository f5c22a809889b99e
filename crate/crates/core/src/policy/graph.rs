//! Builds one page construction on a gradient tape: context encoding,
//! pseudo modules, candidate embeddings, the ranking-state GRU, action
//! log-probabilities and the self-supervised losses.

use rand::Rng;

use super::{argmax_by_id, PolicyError};
use crate::corpus::QueryRecord;
use crate::env::{ItemRef, RankingState};
use crate::neural::tensor::softmax_unchecked;
use crate::neural::{GradTape, ModelParams, Var};

/// How actions are picked while building the graph.
pub enum Selection<'a, R: Rng> {
    /// Highest score, ties to the lowest item id.
    Greedy,
    /// Draw from the policy distribution.
    Sample(&'a mut R),
    /// Re-play a fixed action sequence.
    Replay(&'a [ItemRef]),
}

pub struct EpisodeInputs<'a> {
    pub query: &'a QueryRecord,
    /// Blue-link indices of the context list; `None` disables pseudo modules.
    pub context: Option<&'a [usize]>,
    pub target_length: usize,
    /// Build the inverse and forward losses.
    pub ssl: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct PseudoVars {
    pub vertical_id: usize,
    pub vector: Var,
    pub weights: Var,
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    /// Remaining candidates `X_t`, in candidate order.
    pub candidates: Vec<ItemRef>,
    pub scores: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Index into `candidates`.
    pub chosen: usize,
    pub log_prob: Var,
    pub inverse_loss: Option<Var>,
    pub forward_loss: Option<Var>,
}

impl StepRecord {
    pub fn action(&self) -> ItemRef {
        self.candidates[self.chosen]
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeGraph {
    pub steps: Vec<StepRecord>,
    /// `h_0 ..= h_T`.
    pub encoded: Vec<Var>,
    pub context_outputs: Vec<Var>,
    /// One entry per module of the query (same order as `query.modules`).
    pub pseudo: Vec<Option<PseudoVars>>,
    pub module_content: Vec<Var>,
}

impl EpisodeGraph {
    pub fn actions(&self) -> Vec<ItemRef> {
        self.steps.iter().map(StepRecord::action).collect()
    }

    /// `Σ_t log π(a_t | s_t)`.
    pub fn log_likelihood(&self, tape: &mut GradTape<'_>) -> Var {
        let parts: Vec<Var> = self.steps.iter().map(|s| s.log_prob).collect();
        if parts.is_empty() {
            return tape.constant(vec![0.0]);
        }
        tape.sum(&parts)
    }

    fn mean(tape: &mut GradTape<'_>, parts: Vec<Var>) -> Var {
        if parts.is_empty() {
            return tape.constant(vec![0.0]);
        }
        let n = parts.len() as f64;
        let total = tape.sum(&parts);
        tape.scale(total, 1.0 / n)
    }

    /// Mean inverse loss over all steps (0 when SSL was not built).
    pub fn inverse_mean(&self, tape: &mut GradTape<'_>) -> Var {
        let parts = self.steps.iter().filter_map(|s| s.inverse_loss).collect();
        Self::mean(tape, parts)
    }

    /// Mean forward loss over module-selection steps (0 if there are none).
    pub fn forward_mean(&self, tape: &mut GradTape<'_>) -> Var {
        let parts = self.steps.iter().filter_map(|s| s.forward_loss).collect();
        Self::mean(tape, parts)
    }
}

pub fn build_episode<R: Rng>(
    tape: &mut GradTape<'_>,
    params: &ModelParams,
    inputs: &EpisodeInputs<'_>,
    mut selection: Selection<'_, R>,
) -> Result<EpisodeGraph, PolicyError> {
    let query = inputs.query;
    let layout = params.layout();
    let alpha = params.alpha();
    let q = tape.constant(query.embedding.clone());

    // Context encoding and one pseudo module per present vertical.
    let mut context_outputs = Vec::new();
    let context = inputs.context.filter(|c| !c.is_empty());
    if let Some(context) = context {
        let mut o = tape.gru_init(&layout.ctx_gru, q)?;
        for &i in context {
            let x = tape.constant(query.blue_links[i].embedding.clone());
            let (out, _) = tape.gru_step(&layout.ctx_gru, x, o)?;
            context_outputs.push(out);
            o = out;
        }
    }
    let mut pseudo = Vec::with_capacity(query.modules.len());
    let mut module_content = Vec::with_capacity(query.modules.len());
    let mut module_embedding = Vec::with_capacity(query.modules.len());
    for m in &query.modules {
        let proj = layout
            .proj
            .get(m.vertical_id.wrapping_sub(1))
            .copied()
            .ok_or(crate::neural::NeuralError::UnknownVertical(m.vertical_id))?;
        let raw = tape.constant(m.raw_features.clone());
        let content = tape.matvec(proj, raw)?;
        module_content.push(content);
        if context_outputs.is_empty() {
            pseudo.push(None);
            module_embedding.push(content);
            continue;
        }
        let attn = params.attention(m.vertical_id)?;
        let q_term = tape.matvec(attn.w_q, q)?;
        let b = tape.param(attn.b);
        let bias = tape.add(q_term, b);
        let energies: Vec<Var> = context_outputs
            .iter()
            .map(|&o| {
                let c_term = tape.matvec(attn.w_c, o)?;
                let pre = tape.add(bias, c_term);
                Ok(tape.sigmoid(pre))
            })
            .collect::<Result<_, PolicyError>>()?;
        let energies = tape.concat(&energies);
        let weights = tape.softmax(energies);
        let vector = tape.weighted_sum(weights, &context_outputs);
        pseudo.push(Some(PseudoVars {
            vertical_id: m.vertical_id,
            vector,
            weights,
        }));
        module_embedding.push(tape.add(vector, content));
    }
    let mut blue_embedding: Vec<Option<Var>> = vec![None; query.blue_links.len()];

    // Ranking-state encoder: h_0 = [o_0, 0].
    let mut o = tape.gru_init(&layout.gru, q)?;
    let zero = tape.constant(vec![0.0; alpha]);
    let mut h = tape.concat(&[o, zero]);
    let mut encoded = vec![h];
    let ssl_zero_pseudo = if inputs.ssl && context_outputs.is_empty() {
        Some(tape.constant(vec![0.0; alpha]))
    } else {
        None
    };

    let mut state = RankingState::reset(
        query,
        inputs.context.map(<[usize]>::to_vec).unwrap_or_default(),
        inputs.target_length,
    )
    .map_err(|e| PolicyError::Episode(e.to_string()))?;
    let mut steps = Vec::with_capacity(state.target_length());
    while !state.is_done() {
        let candidates = state.candidates().to_vec();
        let w = tape.matvec(layout.u_p, h)?;
        let mut score_vars = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let x = match *c {
                ItemRef::BlueLink(i) => *blue_embedding[i]
                    .get_or_insert_with(|| tape.constant(query.blue_links[i].embedding.clone())),
                ItemRef::Module(j) => module_embedding[j],
            };
            score_vars.push(tape.dot(x, w));
        }
        let scores_var = tape.concat(&score_vars);
        let scores = tape.value(scores_var).to_vec();
        let probabilities = softmax_unchecked(&scores);
        let chosen = match &mut selection {
            Selection::Greedy => {
                argmax_by_id(&scores, candidates.iter().map(|c| c.id(query)))
            }
            Selection::Sample(rng) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = probabilities.len() - 1;
                for (i, p) in probabilities.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                pick
            }
            Selection::Replay(actions) => {
                let want = actions.get(steps.len()).ok_or_else(|| {
                    PolicyError::Episode(format!("replay ended after {} actions", steps.len()))
                })?;
                candidates.iter().position(|c| c == want).ok_or_else(|| {
                    PolicyError::Episode(format!("replayed action {want:?} is not a candidate"))
                })?
            }
        };
        let log_prob = tape.log_softmax_at(scores_var, chosen)?;
        let action = candidates[chosen];
        let x = match action {
            ItemRef::BlueLink(i) => blue_embedding[i].expect("scored above"),
            ItemRef::Module(j) => module_embedding[j],
        };
        let (out, cell) = tape.gru_step(&layout.gru, x, o)?;
        let h_next = tape.concat(&[out, cell]);

        let (mut inverse_loss, mut forward_loss) = (None, None);
        if inputs.ssl {
            let pair = tape.concat(&[h, h_next]);
            let logits = tape.matvec(layout.inv_w, pair)?;
            let inv_b = tape.param(layout.inv_b);
            let logits = tape.add(logits, inv_b);
            let lp = tape.log_softmax_at(logits, action.vertical(query))?;
            inverse_loss = Some(tape.scale(lp, -1.0));
            if let ItemRef::Module(j) = action {
                let c = pseudo[j]
                    .map(|p| p.vector)
                    .or(ssl_zero_pseudo)
                    .expect("zero pseudo built when context is absent");
                let from_pseudo = forward_head(tape, params, h, c)?;
                let from_content = forward_head(tape, params, h, module_content[j])?;
                let diff = tape.sub(from_pseudo, from_content);
                forward_loss = Some(tape.sq_norm(diff));
            }
        }

        steps.push(StepRecord {
            candidates,
            scores,
            probabilities,
            chosen,
            log_prob,
            inverse_loss,
            forward_loss,
        });
        state = state
            .transition(action)
            .map_err(|e| PolicyError::Episode(e.to_string()))?;
        o = out;
        h = h_next;
        encoded.push(h);
    }

    Ok(EpisodeGraph {
        steps,
        encoded,
        context_outputs,
        pseudo,
        module_content,
    })
}

/// Affine forward head applied to `[h_t, component]`.
fn forward_head(
    tape: &mut GradTape<'_>,
    params: &ModelParams,
    h: Var,
    component: Var,
) -> Result<Var, PolicyError> {
    let layout = params.layout();
    let input = tape.concat(&[h, component]);
    let z = tape.matvec(layout.fwd_w, input)?;
    let b = tape.param(layout.fwd_b);
    Ok(tape.add(z, b))
}
