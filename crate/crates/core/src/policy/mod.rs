//! The ranking policy: context ranking and encoding, per-vertical attention
//! over the encoded context (pseudo modules), context-aware module
//! embeddings and bilinear action scoring.
//!
//! Functions here compute plain values. [`graph`] builds the same
//! computation on a [`crate::neural::GradTape`] for training.

pub mod graph;

use serde::{Deserialize, Serialize};

use crate::corpus::{BlueLink, ModuleRecord, QueryRecord};
use crate::env::RankingState;
use crate::neural::{self, dot, gru_init_state, gru_step, sigmoid, ModelParams, NeuralError};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("query {0} has no blue-links to rank as context")]
    NoBlueLinks(String),
    #[error("no candidates left to score")]
    NoCandidates,
    #[error("context is empty")]
    EmptyContext,
    #[error("pseudo module belongs to vertical {pseudo}, module to vertical {module}")]
    VerticalMismatch { pseudo: usize, module: usize },
    #[error("expected {expected} candidate embeddings, got {actual}")]
    EmbeddingCount { expected: usize, actual: usize },
    #[error("episode: {0}")]
    Episode(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// How the contextual ranking list is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    /// Greedy ranking of blue-links with the current policy.
    #[default]
    Policy,
    /// Blue-links in seeded random order.
    Random,
    /// Blue-links by true relevance.
    Oracle,
    /// No context; module embeddings use content only.
    None,
}

impl std::str::FromStr for ContextMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "policy" => Ok(Self::Policy),
            "random" => Ok(Self::Random),
            "oracle" => Ok(Self::Oracle),
            "none" => Ok(Self::None),
            _ => Err(format!("unknown context mode `{s}`")),
        }
    }
}

/// GRU outputs over the contextual ranking list, one per position.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEncoding {
    pub outputs: Vec<Vec<f64>>,
}

impl ContextEncoding {
    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }
}

/// Attention-weighted combination of context outputs for one vertical.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoModule {
    pub vertical_id: usize,
    pub vector: Vec<f64>,
    pub weights: Vec<f64>,
}

impl PseudoModule {
    /// Stand-in used when no context is available.
    pub fn zero(vertical_id: usize, alpha: usize) -> Self {
        Self {
            vertical_id,
            vector: vec![0.0; alpha],
            weights: Vec::new(),
        }
    }
}

/// Index of the best score; exact ties go to the smallest id.
pub(crate) fn argmax_by_id<'a>(scores: &[f64], ids: impl Iterator<Item = &'a str>) -> usize {
    let mut best: Option<(usize, f64, &str)> = None;
    for ((i, &s), id) in scores.iter().enumerate().zip(ids) {
        best = match best {
            Some((_, bs, bid)) if s < bs || (s == bs && id >= bid) => best,
            _ => Some((i, s, id)),
        };
    }
    best.map(|b| b.0).unwrap_or(0)
}

/// Sequentially picks `t_c` blue-links, each time taking the argmax of
/// `score(chosen, remaining)` (ties to the lowest doc id).
pub fn greedy_blue_links(
    query: &QueryRecord,
    t_c: usize,
    mut score: impl FnMut(&[usize], &[usize]) -> Result<Vec<f64>, PolicyError>,
) -> Result<Vec<usize>, PolicyError> {
    if query.blue_links.is_empty() {
        return Err(PolicyError::NoBlueLinks(query.query_id.clone()));
    }
    let mut remaining: Vec<usize> = (0..query.blue_links.len()).collect();
    let mut chosen = Vec::with_capacity(t_c);
    while chosen.len() < t_c && !remaining.is_empty() {
        let scores = score(&chosen, &remaining)?;
        let pick = argmax_by_id(
            &scores,
            remaining.iter().map(|&i| query.blue_links[i].doc_id.as_str()),
        );
        chosen.push(remaining.remove(pick));
    }
    Ok(chosen)
}

/// Greedy policy ranking over blue-links only; returns blue-link indices.
/// Uses the ranking GRU and `U_p`, so it is the same policy that builds
/// the page, restricted to blue-link candidates.
pub fn rank_context(
    query: &QueryRecord,
    params: &ModelParams,
    t_c: usize,
) -> Result<Vec<usize>, PolicyError> {
    let gru = params.gru();
    let alpha = params.alpha();
    let mut o = gru_init_state(&query.embedding, &gru)?;
    let mut cell = vec![0.0; alpha];
    let mut consumed = 0usize;
    greedy_blue_links(query, t_c, |chosen, remaining| {
        // Advance the encoder over items chosen since the last call.
        for &i in &chosen[consumed..] {
            let step = gru_step(&query.blue_links[i].embedding, &o, &gru)?;
            o = step.out;
            cell = step.cell;
        }
        consumed = chosen.len();
        let mut h = o.clone();
        h.extend_from_slice(&cell);
        let w = params.u_p().matvec(&h)?;
        Ok(remaining
            .iter()
            .map(|&i| dot(&query.blue_links[i].embedding, &w))
            .collect())
    })
}

/// Context GRU outputs `[o_(1), ..., o_(T_c)]`, starting from `o_0(q)`.
pub fn encode_context(
    context: &[&BlueLink],
    query: &QueryRecord,
    params: &ModelParams,
) -> Result<ContextEncoding, PolicyError> {
    if context.is_empty() {
        return Err(PolicyError::EmptyContext);
    }
    let inputs: Vec<&[f64]> = context.iter().map(|d| d.embedding.as_slice()).collect();
    let steps = neural::gru_sequence(&query.embedding, &inputs, &params.ctx_gru())?;
    Ok(ContextEncoding {
        outputs: steps.into_iter().map(|s| s.out).collect(),
    })
}

/// `e_j = sigmoid(w_Q · q + w_C · o_j + b)` for every context position.
pub fn attention_energies(
    vertical_id: usize,
    query: &QueryRecord,
    enc: &ContextEncoding,
    params: &ModelParams,
) -> Result<Vec<f64>, PolicyError> {
    let ids = params.attention(vertical_id)?;
    let w_q = params.get(ids.w_q);
    let w_c = params.get(ids.w_c);
    let b = params.get(ids.b).data()[0];
    let query_term = w_q.matvec(&query.embedding)?[0];
    enc.outputs
        .iter()
        .map(|o| Ok(sigmoid(query_term + b + w_c.matvec(o)?[0])))
        .collect()
}

pub fn pseudo_module(
    vertical_id: usize,
    query: &QueryRecord,
    enc: &ContextEncoding,
    params: &ModelParams,
) -> Result<PseudoModule, PolicyError> {
    if enc.is_empty() {
        return Err(PolicyError::EmptyContext);
    }
    let energies = attention_energies(vertical_id, query, enc, params)?;
    let weights = neural::softmax(&energies)?;
    let mut vector = vec![0.0; params.alpha()];
    for (w, o) in weights.iter().zip(&enc.outputs) {
        vector.iter_mut().zip(o).for_each(|(v, x)| *v += w * x);
    }
    Ok(PseudoModule {
        vertical_id,
        vector,
        weights,
    })
}

/// Projected module content `V_i · m_i`.
pub fn content_embedding(module: &ModuleRecord, params: &ModelParams) -> Result<Vec<f64>, PolicyError> {
    Ok(params.projection(module.vertical_id)?.matvec(&module.raw_features)?)
}

/// `x_i = c_i + V_i · m_i`.
pub fn module_embedding(
    module: &ModuleRecord,
    pseudo: &PseudoModule,
    params: &ModelParams,
) -> Result<Vec<f64>, PolicyError> {
    if pseudo.vertical_id != module.vertical_id {
        return Err(PolicyError::VerticalMismatch {
            pseudo: pseudo.vertical_id,
            module: module.vertical_id,
        });
    }
    let mut x = content_embedding(module, params)?;
    x.iter_mut().zip(&pseudo.vector).for_each(|(a, c)| *a += c);
    Ok(x)
}

/// Bilinear scores `x_aᵀ · U_p · h_t` for each candidate embedding.
pub fn action_scores(
    h_t: &[f64],
    embeddings: &[Vec<f64>],
    params: &ModelParams,
) -> Result<Vec<f64>, PolicyError> {
    let w = params.u_p().matvec(h_t)?;
    embeddings
        .iter()
        .map(|x| {
            if x.len() != w.len() {
                return Err(NeuralError::Shape {
                    what: "candidate embedding".into(),
                    expected: w.len(),
                    actual: x.len(),
                }
                .into());
            }
            Ok(dot(x, &w))
        })
        .collect()
}

/// Softmax over the scores of exactly the remaining candidates of `state`;
/// `embeddings` follows `state.candidates()` order.
pub fn action_probabilities(
    state: &RankingState<'_>,
    h_t: &[f64],
    embeddings: &[Vec<f64>],
    params: &ModelParams,
) -> Result<Vec<f64>, PolicyError> {
    if state.candidates().is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    if embeddings.len() != state.candidates().len() {
        return Err(PolicyError::EmbeddingCount {
            expected: state.candidates().len(),
            actual: embeddings.len(),
        });
    }
    let scores = action_scores(h_t, embeddings, params)?;
    Ok(neural::softmax(&scores)?)
}

#[cfg(test)]
mod tests;
