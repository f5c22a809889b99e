//! Seeded synthetic corpora with a planted vertical-intent signal.
//!
//! Each query draws a latent intended vertical `z`. Relevant blue-links
//! (grade >= 2) carry `intent_strength * intent_scale * u_z` on top of a
//! grade-proportional relevance component, so a top-ranked context list
//! reveals `z`. The module of vertical `z` gets high document grades and
//! full orientation; the others get low grades and low orientation. Module
//! raw features only weakly reveal module quality (`content_signal`).

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{BlueLink, CorpusError, Grade, ModuleRecord, QueryRecord, Schema, VerticalSchema};

const VERTICAL_NAMES: [&str; 8] = [
    "image",
    "video",
    "news",
    "qa",
    "academic",
    "blog",
    "encyclopedia",
    "shopping",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub alpha: usize,
    pub queries: usize,
    /// Blue-links per query (`K`).
    pub blue_links: usize,
    /// Raw module width per vertical; its length is `J`.
    pub raw_dims: Vec<usize>,
    pub docs_per_module: usize,
    pub g_max: Grade,
    /// Blue-link grade distribution over `0..=g_max`.
    pub grade_probs: Vec<f64>,
    /// Document grade weights over `0..=g_max` inside the intended module.
    pub intent_module_grades: Vec<f64>,
    /// Document grade weights inside every other module.
    pub off_intent_module_grades: Vec<f64>,
    /// Intent-signal strength `λ` in `[0, 1]`.
    pub intent_strength: f64,
    /// Norm of the intent component at `λ = 1`.
    pub intent_scale: f64,
    /// Norm of the relevance component for a top-grade blue-link.
    pub relevance_scale: f64,
    /// Weight of module quality in its raw features, in `[0, 1]`.
    pub content_signal: f64,
    /// Probability that a non-intended vertical returns a module.
    pub module_presence: f64,
    /// Orientation range for non-intended verticals.
    pub off_intent_orientation: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            alpha: 32,
            queries: 250,
            blue_links: 20,
            raw_dims: vec![24, 30, 36, 42],
            docs_per_module: 3,
            g_max: 4,
            grade_probs: vec![0.5, 0.3, 0.15, 0.05, 0.0],
            intent_module_grades: vec![0.0, 0.0, 0.0, 0.3, 0.7],
            off_intent_module_grades: vec![0.5, 0.35, 0.15, 0.0, 0.0],
            intent_strength: 1.0,
            intent_scale: 1.5,
            relevance_scale: 1.5,
            content_signal: 0.1,
            module_presence: 0.75,
            off_intent_orientation: [0.1, 0.5],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let err = |m: String| Err(CorpusError::Config(m));
        if !(0.0..=1.0).contains(&self.intent_strength) {
            return err(format!(
                "intent_strength must lie in [0, 1], got {}",
                self.intent_strength
            ));
        }
        if self.raw_dims.iter().any(|&d| d == 0) {
            return err("every raw_dim must be positive".into());
        }
        if self.alpha < self.raw_dims.len() + 1 {
            return err("alpha must exceed the number of verticals".into());
        }
        if self.blue_links == 0 {
            return err("blue_links must be positive".into());
        }
        if self.docs_per_module == 0 {
            return err("docs_per_module must be positive".into());
        }
        if self.g_max < 2 {
            return err("g_max must be at least 2".into());
        }
        for (name, w) in [
            ("grade_probs", &self.grade_probs),
            ("intent_module_grades", &self.intent_module_grades),
            ("off_intent_module_grades", &self.off_intent_module_grades),
        ] {
            if w.len() != self.g_max as usize + 1
                || w.iter().any(|p| !(*p >= 0.0))
                || w.iter().sum::<f64>() <= 0.0
            {
                return err(format!("{name} must hold g_max + 1 nonnegative weights"));
            }
        }
        for (name, v) in [
            ("content_signal", self.content_signal),
            ("module_presence", self.module_presence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return err(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        let [lo, hi] = self.off_intent_orientation;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return err("off_intent_orientation must be an ordered range inside [0, 1]".into());
        }
        if !(self.intent_scale >= 0.0 && self.relevance_scale >= 0.0) {
            return err("signal scales must be nonnegative".into());
        }
        Ok(())
    }

    pub fn schema(&self) -> Schema {
        let mut verticals = vec![VerticalSchema {
            vertical_id: 0,
            name: "web".into(),
            raw_dim: self.alpha,
        }];
        for (j, &d) in self.raw_dims.iter().enumerate() {
            let name = VERTICAL_NAMES
                .get(j)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("vertical{}", j + 1));
            verticals.push(VerticalSchema {
                vertical_id: j + 1,
                name,
                raw_dim: d,
            });
        }
        Schema {
            alpha: self.alpha,
            g_max: self.g_max,
            verticals,
        }
    }
}

/// Generated queries together with the latent variables behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub schema: Schema,
    pub queries: Vec<QueryRecord>,
    /// Intended vertical (`1..=J`) of each query.
    pub intents: Vec<usize>,
    /// Unit intent direction of each vertical; entry `j - 1` is vertical `j`.
    pub intent_directions: Vec<Vec<f64>>,
    /// Unit direction along which blue-link relevance is encoded.
    pub relevance_direction: Vec<f64>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            std * x
        })
        .collect()
}

/// Gram-Schmidt over `count` random directions of dimension `dim`.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian(rng, dim, 1.0);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn axpy(out: &mut [f64], k: f64, v: &[f64]) {
    out.iter_mut().zip(v).for_each(|(o, x)| *o += k * x);
}

pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<SyntheticCorpus, CorpusError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alpha = config.alpha;
    let n_vert = config.raw_dims.len();
    let noise_std = 1.0 / (alpha as f64).sqrt();

    let mut dirs = orthonormal(&mut rng, n_vert + 1, alpha);
    let relevance_direction = dirs.remove(0);
    let intent_directions = dirs;

    // Per-vertical feature layout: a quality direction and a structural offset.
    let quality_dirs: Vec<Vec<f64>> = config
        .raw_dims
        .iter()
        .map(|&d| orthonormal(&mut rng, 1, d).remove(0))
        .collect();
    let structure: Vec<Vec<f64>> = config
        .raw_dims
        .iter()
        .map(|&d| gaussian(&mut rng, d, 1.0 / (d as f64).sqrt()))
        .collect();

    let blue_grades = WeightedIndex::new(&config.grade_probs)
        .map_err(|e| CorpusError::Config(format!("grade_probs: {e}")))?;
    let g_max = config.g_max;
    let on_intent = WeightedIndex::new(&config.intent_module_grades).expect("validated weights");
    let off_intent = WeightedIndex::new(&config.off_intent_module_grades).expect("validated weights");

    let width = (config.queries.max(1)).to_string().len().max(4);
    let relevant_grade = g_max.div_ceil(2);
    let mut queries = Vec::with_capacity(config.queries);
    let mut intents = Vec::with_capacity(config.queries);
    for qi in 0..config.queries {
        let query_id = format!("q{qi:0width$}");
        let z = rng.random_range(1..=n_vert);
        let embedding = gaussian(&mut rng, alpha, noise_std);

        let blue_links = (0..config.blue_links)
            .map(|di| {
                let relevance = blue_grades.sample(&mut rng) as Grade;
                let mut e = gaussian(&mut rng, alpha, noise_std);
                axpy(
                    &mut e,
                    config.relevance_scale * relevance as f64 / g_max as f64,
                    &relevance_direction,
                );
                if relevance >= relevant_grade {
                    axpy(
                        &mut e,
                        config.intent_strength * config.intent_scale,
                        &intent_directions[z - 1],
                    );
                }
                BlueLink {
                    doc_id: format!("{query_id}-d{di:02}"),
                    embedding: e,
                    relevance,
                }
            })
            .collect();

        let mut modules = Vec::new();
        let mut orientation = vec![1.0; n_vert + 1];
        for v in 1..=n_vert {
            let present = v == z || rng.random::<f64>() < config.module_presence;
            let [lo, hi] = config.off_intent_orientation;
            orientation[v] = if v == z {
                1.0
            } else {
                lo + (hi - lo) * rng.random::<f64>()
            };
            if !present {
                continue;
            }
            let dist = if v == z { &on_intent } else { &off_intent };
            let doc_grades: Vec<Grade> = (0..config.docs_per_module)
                .map(|_| dist.sample(&mut rng) as Grade)
                .collect();
            let quality =
                doc_grades.iter().map(|&g| g as f64).sum::<f64>() / doc_grades.len() as f64 / g_max as f64;
            let mixed = config.content_signal * quality
                + (1.0 - config.content_signal) * rng.random::<f64>();
            let d = config.raw_dims[v - 1];
            let mut raw = gaussian(&mut rng, d, 0.5 / (d as f64).sqrt());
            axpy(&mut raw, 1.0, &structure[v - 1]);
            axpy(&mut raw, 2.0 * (2.0 * mixed - 1.0), &quality_dirs[v - 1]);
            modules.push(ModuleRecord {
                module_id: format!("{query_id}-m{v}"),
                vertical_id: v,
                raw_features: raw,
                doc_grades,
            });
        }
        queries.push(QueryRecord {
            query_id,
            embedding,
            blue_links,
            modules,
            orientation,
        });
        intents.push(z);
    }

    Ok(SyntheticCorpus {
        schema: config.schema(),
        queries,
        intents,
        intent_directions,
        relevance_direction,
    })
}
