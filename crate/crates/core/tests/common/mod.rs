#![allow(dead_code)]

use carl_core::corpus::{BlueLink, ModuleRecord, QueryRecord, Schema, VerticalSchema};
use carl_core::neural::{GruMode, ModelParams, ModelShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn schema(alpha: usize, raw_dims: &[usize]) -> Schema {
    Schema {
        alpha,
        g_max: 4,
        verticals: std::iter::once(0)
            .chain(raw_dims.iter().copied())
            .enumerate()
            .map(|(i, d)| VerticalSchema {
                vertical_id: i,
                name: format!("v{i}"),
                raw_dim: d.max(1),
            })
            .collect(),
    }
}

/// Random query with `k` blue-links; each vertical returns a module with
/// probability `presence`.
pub fn random_query(seed: u64, alpha: usize, k: usize, raw_dims: &[usize], presence: f64) -> QueryRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vec = |n: usize, rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let embedding = vec(alpha, &mut rng);
    let blue_links = (0..k)
        .map(|i| BlueLink {
            doc_id: format!("d{i:02}"),
            embedding: vec(alpha, &mut rng),
            relevance: rng.random_range(0..=4),
        })
        .collect();
    let mut modules = Vec::new();
    for (j, &d) in raw_dims.iter().enumerate() {
        if rng.random_bool(presence) {
            let docs = rng.random_range(1..=3);
            modules.push(ModuleRecord {
                module_id: format!("m{}", j + 1),
                vertical_id: j + 1,
                raw_features: vec(d, &mut rng),
                doc_grades: (0..docs).map(|_| rng.random_range(0..=4)).collect(),
            });
        }
    }
    let orientation = std::iter::once(1.0)
        .chain(raw_dims.iter().map(|_| rng.random_range(0.0..=1.0)))
        .collect();
    QueryRecord {
        query_id: format!("q{seed}"),
        embedding,
        blue_links,
        modules,
        orientation,
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

/// Relative error with a floor on the denominator so that gradients that
/// are zero up to rounding compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between `grad` and central differences of `f`
/// over every scalar parameter.
pub fn max_fd_error(
    params: &ModelParams,
    grad: &carl_core::neural::ParamStore,
    step: f64,
    mut f: impl FnMut(&ModelParams) -> f64,
) -> (f64, String) {
    let mut worst = (0.0, String::new());
    let mut p = params.clone();
    let ids: Vec<_> = params.store().ids().collect();
    for id in ids {
        let n = params.get(id).data().len();
        for k in 0..n {
            let x = params.get(id).data()[k];
            p.get_mut(id).data_mut()[k] = x + step;
            let up = f(&p);
            p.get_mut(id).data_mut()[k] = x - step;
            let down = f(&p);
            p.get_mut(id).data_mut()[k] = x;
            let numeric = (up - down) / (2.0 * step);
            let e = rel_err(grad.get(id).data()[k], numeric);
            if e > worst.0 {
                worst = (e, format!("{}[{k}]", params.store().name(id)));
            }
        }
    }
    worst
}
