use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BlueLink, ModuleRecord, QueryRecord};
use crate::neural::{GruMode, ModelParams, ModelShape};

/// Random query with `k` blue-links and one module per entry of `raw_dims`.
pub fn random_query(seed: u64, alpha: usize, k: usize, raw_dims: &[usize]) -> QueryRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vec = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    QueryRecord {
        query_id: format!("q{seed}"),
        embedding: vec(alpha, &mut rng),
        blue_links: (0..k)
            .map(|i| BlueLink {
                doc_id: format!("d{i:02}"),
                embedding: vec(alpha, &mut rng),
                relevance: rng.random_range(0..=4),
            })
            .collect(),
        modules: raw_dims
            .iter()
            .enumerate()
            .map(|(j, &d)| ModuleRecord {
                module_id: format!("m{}", j + 1),
                vertical_id: j + 1,
                raw_features: vec(d, &mut rng),
                doc_grades: (0..3).map(|_| rng.random_range(0..=4)).collect(),
            })
            .collect(),
        orientation: std::iter::once(1.0)
            .chain(raw_dims.iter().map(|_| rng.random_range(0.0..=1.0)))
            .collect(),
    }
}

pub fn model(alpha: usize, raw_dims: &[usize], mode: GruMode, seed: u64) -> ModelParams {
    ModelParams::init(
        ModelShape {
            alpha,
            raw_dims: raw_dims.to_vec(),
            gru_mode: mode,
        },
        seed,
    )
    .unwrap()
}
