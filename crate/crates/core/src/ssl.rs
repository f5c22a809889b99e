//! Self-supervised heads evaluated on plain values: vertical prediction from
//! consecutive encoded states, and next-state consistency between the pseudo
//! module and the projected module content.
//!
//! Training builds the same losses on the tape (see `policy::graph`); these
//! functions serve inspection, reporting and testing.

use crate::env::{EpisodeTrace, TraceStep};
use crate::neural::tensor::log_sum_exp;
use crate::neural::{self, Matrix, ModelParams, NeuralError};

#[derive(Debug, thiserror::Error)]
pub enum SslError {
    #[error("vertical {vertical} out of range 0..={max}")]
    VerticalOutOfRange { vertical: usize, max: usize },
    #[error("forward loss is undefined for blue-link steps")]
    BlueLinkStep,
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

fn affine(w: &Matrix, b: &Matrix, parts: &[&[f64]]) -> Result<Vec<f64>, NeuralError> {
    let input: Vec<f64> = parts.concat();
    let mut z = w.matvec(&input)?;
    if b.data().len() != z.len() {
        return Err(NeuralError::Shape {
            what: "head bias".into(),
            expected: z.len(),
            actual: b.data().len(),
        });
    }
    z.iter_mut().zip(b.data()).for_each(|(z, b)| *z += b);
    Ok(z)
}

/// Cross-entropy of an affine classifier over `[h_t, h_next]`.
pub fn inverse_loss_with(
    w: &Matrix,
    b: &Matrix,
    h_t: &[f64],
    h_next: &[f64],
    vertical: usize,
) -> Result<(f64, Vec<f64>), SslError> {
    let logits = affine(w, b, &[h_t, h_next])?;
    if vertical >= logits.len() {
        return Err(SslError::VerticalOutOfRange {
            vertical,
            max: logits.len().saturating_sub(1),
        });
    }
    let loss = log_sum_exp(&logits) - logits[vertical];
    let dist = neural::softmax(&logits)?;
    Ok((loss, dist))
}

/// Squared distance between the head's outputs on `[h, pseudo]` and `[h, content]`.
pub fn forward_loss_with(
    w: &Matrix,
    b: &Matrix,
    h_t: &[f64],
    pseudo: &[f64],
    content: &[f64],
) -> Result<f64, SslError> {
    let a = affine(w, b, &[h_t, pseudo])?;
    let c = affine(w, b, &[h_t, content])?;
    Ok(a.iter().zip(&c).map(|(x, y)| (x - y) * (x - y)).sum())
}

pub fn inverse_loss(
    h_t: &[f64],
    h_next: &[f64],
    vertical: usize,
    params: &ModelParams,
) -> Result<(f64, Vec<f64>), SslError> {
    let l = params.layout();
    inverse_loss_with(params.get(l.inv_w), params.get(l.inv_b), h_t, h_next, vertical)
}

pub fn forward_loss(
    h_t: &[f64],
    pseudo: &[f64],
    content: &[f64],
    params: &ModelParams,
) -> Result<f64, SslError> {
    let l = params.layout();
    forward_loss_with(params.get(l.fwd_w), params.get(l.fwd_b), h_t, pseudo, content)
}

/// Forward loss of one recorded step. Without context the pseudo module is zero.
pub fn step_forward_loss(step: &TraceStep, params: &ModelParams) -> Result<f64, SslError> {
    let content = step.content.as_ref().ok_or(SslError::BlueLinkStep)?;
    let zero;
    let pseudo = match &step.pseudo {
        Some(p) => p.as_slice(),
        None => {
            zero = vec![0.0; content.len()];
            &zero
        }
    };
    forward_loss(&step.h, pseudo, content, params)
}

/// `(L_I, L_F)`: mean inverse loss over all steps and mean forward loss over
/// module steps (0 when there are none).
pub fn episode_ssl_losses(trace: &EpisodeTrace, params: &ModelParams) -> Result<(f64, f64), SslError> {
    let mut inv = Vec::with_capacity(trace.steps.len());
    let mut fwd = Vec::new();
    for step in &trace.steps {
        inv.push(inverse_loss(&step.h, &step.h_next, step.vertical, params)?.0);
        if step.content.is_some() {
            fwd.push(step_forward_loss(step, params)?);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    Ok((mean(&inv), mean(&fwd)))
}
