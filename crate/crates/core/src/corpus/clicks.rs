//! Position-based click simulation used for weak supervision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClickLog, CorpusError, Grade};

/// Examination decays geometrically with rank (`P(examine t) = eta^(t-1)`);
/// an examined item is clicked when its perceived relevance holds, where
/// perception flips with probability `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClickModelConfig {
    pub eta: f64,
    pub threshold: Grade,
    pub epsilon: f64,
}

impl Default for ClickModelConfig {
    fn default() -> Self {
        Self {
            eta: 0.7,
            threshold: 2,
            epsilon: 0.1,
        }
    }
}

impl ClickModelConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(CorpusError::Config(format!(
                "eta must lie in (0, 1], got {}",
                self.eta
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 0.5) {
            return Err(CorpusError::Config(format!(
                "epsilon must lie in [0, 0.5), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// Examination probability at 1-based `rank`.
    pub fn examination(&self, rank: usize) -> f64 {
        self.eta.powi(rank as i32 - 1)
    }

    /// Closed-form click probability at 1-based `rank` for an item of `grade`.
    pub fn click_probability(&self, rank: usize, grade: Grade) -> f64 {
        let perceived = if grade >= self.threshold {
            1.0 - self.epsilon
        } else {
            self.epsilon
        };
        self.examination(rank) * perceived
    }
}

pub fn simulate_clicks(
    query_id: &str,
    ranking: &[String],
    grades: &[Grade],
    model: &ClickModelConfig,
    seed: u64,
) -> Result<ClickLog, CorpusError> {
    model.validate()?;
    if ranking.len() != grades.len() {
        return Err(CorpusError::Config(format!(
            "{} ranked items but {} grades",
            ranking.len(),
            grades.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clicks = grades
        .iter()
        .enumerate()
        .map(|(t, &g)| {
            // Both draws happen at every rank so the stream stays aligned.
            let examined = rng.random::<f64>() < model.examination(t + 1);
            let flipped = rng.random::<f64>() < model.epsilon;
            examined && ((g >= model.threshold) != flipped)
        })
        .collect();
    Ok(ClickLog {
        query_id: query_id.to_string(),
        impressions: ranking.to_vec(),
        clicks,
    })
}
