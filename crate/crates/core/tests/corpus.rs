mod common;

use carl_core::corpus::{
    generate_synthetic, load_dataset, save_dataset, simulate_clicks, ClickModelConfig, SynthConfig, SyntheticCorpus,
};
use carl_core::env::{run_episode, DecodeMode, EpisodeOptions};
use carl_core::neural::GruMode;
use carl_core::trainer::{simulated_click_reward, ClickReward};

/// Mean embedding of the ten most relevant blue-links of each query.
fn context_features(c: &SyntheticCorpus) -> Vec<Vec<f64>> {
    c.queries
        .iter()
        .map(|q| {
            let mut idx: Vec<usize> = (0..q.blue_links.len()).collect();
            idx.sort_by(|&a, &b| q.blue_links[b].relevance.cmp(&q.blue_links[a].relevance).then(a.cmp(&b)));
            idx.truncate(10);
            let mut mean = vec![0.0; q.embedding.len()];
            for &i in &idx {
                for (m, x) in mean.iter_mut().zip(&q.blue_links[i].embedding) {
                    *m += x / idx.len() as f64;
                }
            }
            mean
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Multinomial logistic regression by full-batch gradient descent; returns
/// held-out accuracy.
fn logistic_probe(x: &[Vec<f64>], y: &[usize], classes: usize, n_train: usize) -> f64 {
    let d = x[0].len() + 1;
    let mut w = vec![vec![0.0; d]; classes];
    let feat = |v: &Vec<f64>| v.iter().copied().chain(std::iter::once(1.0)).collect::<Vec<f64>>();
    let xs: Vec<Vec<f64>> = x.iter().map(feat).collect();
    let probs = |w: &[Vec<f64>], f: &[f64]| {
        let s: Vec<f64> = w.iter().map(|r| r.iter().zip(f).map(|(a, b)| a * b).sum()).collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect::<Vec<f64>>()
    };
    for _ in 0..300 {
        let mut g = vec![vec![0.0; d]; classes];
        for (f, &label) in xs[..n_train].iter().zip(&y[..n_train]) {
            let p = probs(&w, f);
            for c in 0..classes {
                let coef = p[c] - if c == label { 1.0 } else { 0.0 };
                for k in 0..d {
                    g[c][k] += coef * f[k] / n_train as f64;
                }
            }
        }
        for c in 0..classes {
            for k in 0..d {
                w[c][k] -= 0.5 * g[c][k];
            }
        }
    }
    let correct = xs[n_train..]
        .iter()
        .zip(&y[n_train..])
        .filter(|(f, &label)| {
            let p = probs(&w, f);
            (0..classes).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap() == label
        })
        .count();
    correct as f64 / (xs.len() - n_train) as f64
}

fn corpus(lambda: f64) -> SyntheticCorpus {
    let config = SynthConfig {
        queries: 500,
        intent_strength: lambda,
        ..SynthConfig::default()
    };
    generate_synthetic(&config, 21).unwrap()
}

#[test]
fn zero_intent_strength_removes_context_signal() {
    let c = corpus(0.0);
    let feats = context_features(&c);
    for (j, dir) in c.intent_directions.iter().enumerate() {
        let proj: Vec<f64> = feats.iter().map(|f| f.iter().zip(dir).map(|(a, b)| a * b).sum()).collect();
        let hit: Vec<f64> = c.intents.iter().map(|&z| f64::from(u8::from(z == j + 1))).collect();
        let r = pearson(&proj, &hit);
        assert!(r.abs() < 0.1, "vertical {}: r = {r}", j + 1);
    }
}

#[test]
fn full_intent_strength_is_recoverable_by_a_probe() {
    let c = corpus(1.0);
    let feats = context_features(&c);
    let labels: Vec<usize> = c.intents.iter().map(|z| z - 1).collect();
    let acc = logistic_probe(&feats, &labels, c.intent_directions.len(), 400);
    assert!(acc > 0.9, "probe accuracy {acc}");
}

#[test]
fn generated_corpus_round_trips_through_files() {
    let c = generate_synthetic(&SynthConfig { queries: 20, ..SynthConfig::default() }, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.jsonl");
    save_dataset(&path, &c.queries).unwrap();
    assert_eq!(load_dataset(&path, &c.schema).unwrap(), c.queries);
}

#[test]
fn generated_queries_satisfy_their_schema() {
    for seed in 0..5 {
        let config = SynthConfig {
            queries: 30,
            alpha: 6 + seed as usize,
            raw_dims: (0..1 + seed as usize).map(|j| 2 + j).collect(),
            ..SynthConfig::default()
        };
        let c = generate_synthetic(&config, seed).unwrap();
        for (i, q) in c.queries.iter().enumerate() {
            q.validate(&c.schema, i + 1).unwrap();
        }
    }
}

#[test]
fn click_rates_match_closed_form() {
    let model = ClickModelConfig::default();
    let grades = [4, 0, 2, 1, 3, 2, 0, 4];
    let ids: Vec<String> = (0..grades.len()).map(|i| format!("d{i}")).collect();
    let n = 10_000;
    let mut counts = vec![0usize; grades.len()];
    for seed in 0..n {
        let log = simulate_clicks("q", &ids, &grades, &model, seed).unwrap();
        for (c, &k) in counts.iter_mut().zip(&log.clicks) {
            *c += usize::from(k);
        }
    }
    for (t, (&c, &g)) in counts.iter().zip(&grades).enumerate() {
        let examine = model.eta.powi(t as i32);
        let p = if g >= model.threshold {
            examine * (1.0 - model.epsilon)
        } else {
            examine * model.epsilon
        };
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let rate = c as f64 / n as f64;
        assert!((rate - p).abs() <= 3.0 * se, "rank {}: {rate} vs {p}", t + 1);
    }
}

#[test]
fn noiseless_weak_return_counts_relevant_items() {
    let model = ClickModelConfig {
        eta: 1.0,
        threshold: 2,
        epsilon: 0.0,
    };
    let dims = [3, 2];
    for seed in 0..10 {
        let q = common::random_query(seed, 4, 6, &dims, 0.7);
        let params = common::model(4, &dims, GruMode::Uni, seed);
        let trace = run_episode(&q, &params, &EpisodeOptions::default(), DecodeMode::Sample, seed).unwrap();
        let rewards = simulated_click_reward(&q, &trace, &model, ClickReward::Binary, seed).unwrap();
        let relevant = trace.actions().iter().filter(|a| a.gain(&q).gain_grade >= 2).count();
        assert_eq!(rewards.iter().sum::<f64>(), relevant as f64);
    }
}
