//! Trains paired configurations on a synthetic corpus and prints test
//! AS_DCG@10 per seed.
//!
//! `cargo run --release -p carl-core --example ablation -- <context|ssl|gru|lift|oracle|single> [updates] [seeds] [first-seed]`

use carl_core::corpus::{generate_synthetic, SynthConfig};
use carl_core::metrics::{MetricKind, MetricSpec};
use carl_core::trainer::{evaluate, train, Ranker, Supervision, TrainConfig};
use carl_core::{ContextMode, GruMode};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("context");
    let updates: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    let seeds: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(5);
    let first: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec = MetricSpec::new(MetricKind::AsDcg, 10, 4).unwrap();

    // Optional JSON overrides, e.g. SYNTH='{"content_signal":0.1}'.
    let synth: SynthConfig = std::env::var("SYNTH")
        .map(|s| serde_json::from_str(&s).expect("SYNTH json"))
        .unwrap_or_default();
    let mut base: TrainConfig = std::env::var("TRAIN")
        .map(|s| serde_json::from_str(&s).expect("TRAIN json"))
        .unwrap_or_default();
    base.max_updates = updates;
    let (a, b): (TrainConfig, TrainConfig) = match which {
        "ssl" => {
            let weak = TrainConfig {
                supervision: Supervision::Weak,
                ..base.clone()
            };
            (weak.clone(), TrainConfig { ssl_enabled: false, ..weak })
        }
        "gru" => (base.clone(), TrainConfig { gru_mode: GruMode::Dual, ..base.clone() }),
        "oracle" => {
            for seed in 0..seeds {
                let corpus = generate_synthetic(&SynthConfig { queries: 250, ..synth.clone() }, seed).unwrap();
                let o = evaluate(&corpus.queries[200..], &Ranker::Oracle, &[spec], 10).unwrap();
                let r = evaluate(&corpus.queries[200..], &Ranker::Random { seed }, &[spec], 10).unwrap();
                println!("seed {seed}: oracle {:.4} random {:.4}", o.summary[0].mean, r.summary[0].mean);
            }
            return;
        }
        _ => (base.clone(), base.clone()),
    };
    let (mut sum_a, mut sum_b) = (0.0, 0.0);
    for seed in first..first + seeds {
        let corpus = generate_synthetic(&SynthConfig { queries: 250, ..synth.clone() }, seed).unwrap();
        let (train_q, test_q) = corpus.queries.split_at(200);
        let t0 = std::time::Instant::now();
        let (pa, _) = train(train_q, &corpus.schema, &TrainConfig { seed, ..a.clone() }).unwrap();
        let (va, vb) = if which == "context" || which == "lift" {
            let opts = a.episode_options(4).unwrap();
            let with = evaluate(test_q, &Ranker::Policy { params: &pa, options: opts }, &[spec], 10).unwrap();
            let other = if which == "lift" {
                let init = carl_core::ModelParams::init(a.model_shape(&corpus.schema), seed).unwrap();
                evaluate(test_q, &Ranker::Policy { params: &init, options: opts }, &[spec], 10).unwrap()
            } else {
                let none = carl_core::EpisodeOptions { context_mode: ContextMode::None, ..opts };
                evaluate(test_q, &Ranker::Policy { params: &pa, options: none }, &[spec], 10).unwrap()
            };
            (with.summary[0].mean, other.summary[0].mean)
        } else if which == "single" {
            let ea = evaluate(test_q, &Ranker::Policy { params: &pa, options: a.episode_options(4).unwrap() }, &[spec], 10).unwrap();
            (ea.summary[0].mean, 0.0)
        } else {
            let (pb, _) = train(train_q, &corpus.schema, &TrainConfig { seed, ..b.clone() }).unwrap();
            let ea = evaluate(test_q, &Ranker::Policy { params: &pa, options: a.episode_options(4).unwrap() }, &[spec], 10).unwrap();
            let eb = evaluate(test_q, &Ranker::Policy { params: &pb, options: b.episode_options(4).unwrap() }, &[spec], 10).unwrap();
            (ea.summary[0].mean, eb.summary[0].mean)
        };
        println!("seed {seed}: {va:.4} vs {vb:.4} ({:.1}s)", t0.elapsed().as_secs_f64());
        sum_a += va;
        sum_b += vb;
    }
    let n = seeds as f64;
    println!("{which}: {:.4} vs {:.4} ({:+.1}%)", sum_a / n, sum_b / n, 100.0 * (sum_a / sum_b - 1.0));
}
