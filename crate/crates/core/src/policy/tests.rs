use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{build_episode, EpisodeInputs, Selection};
use super::*;
use crate::env::ItemRef;
use crate::metrics::ndcg;
use crate::neural::{GradTape, GruMode, Matrix};
use crate::testutil::{model, random_query};

fn zero(params: &mut ModelParams, name: &str) {
    let m = params.by_name_mut(name).unwrap();
    *m = Matrix::zeros(m.rows(), m.cols());
}

fn sigma(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn single_blue_link_context() {
    let q = random_query(1, 3, 1, &[2]);
    let p = model(3, &[2], GruMode::Uni, 0);
    assert_eq!(rank_context(&q, &p, 1).unwrap(), vec![0]);
}

#[test]
fn identical_blue_links_break_ties_by_id() {
    let mut q = random_query(2, 3, 2, &[2]);
    q.blue_links[1].embedding = q.blue_links[0].embedding.clone();
    q.blue_links[0].doc_id = "zz".into();
    q.blue_links[1].doc_id = "aa".into();
    let p = model(3, &[2], GruMode::Uni, 0);
    for _ in 0..3 {
        assert_eq!(rank_context(&q, &p, 1).unwrap(), vec![1]);
    }
}

#[test]
fn empty_blue_links_rejected() {
    let q = random_query(2, 3, 0, &[2]);
    let p = model(3, &[2], GruMode::Uni, 0);
    assert!(matches!(rank_context(&q, &p, 1), Err(PolicyError::NoBlueLinks(_))));
}

#[test]
fn oracle_scorer_context_is_ideal() {
    for seed in 0..20 {
        let q = random_query(seed, 3, 12, &[]);
        let ctx = greedy_blue_links(&q, 10, |_, rem| {
            Ok(rem.iter().map(|&i| q.blue_links[i].relevance as f64).collect())
        })
        .unwrap();
        let grades: Vec<u32> = ctx.iter().map(|&i| q.blue_links[i].relevance).collect();
        let pool: Vec<u32> = q.blue_links.iter().map(|d| d.relevance).collect();
        let v = ndcg(&grades, &pool, 10).unwrap();
        assert!(v == 1.0 || pool.iter().all(|&g| g == 0), "seed {seed}: {v}");
    }
}

#[test]
fn zero_gru_context_output_halves_initial_state() {
    let q = random_query(3, 2, 1, &[2]);
    let p = ModelParams::zeros(p_shape(2, &[2])).unwrap();
    let enc = encode_context(&[&q.blue_links[0]], &q, &p).unwrap();
    assert_eq!(enc.outputs, vec![vec![0.25, 0.25]]);
}

fn p_shape(alpha: usize, raw: &[usize]) -> crate::neural::ModelShape {
    crate::neural::ModelShape {
        alpha,
        raw_dims: raw.to_vec(),
        gru_mode: GruMode::Uni,
    }
}

fn mat(p: &ModelParams, name: &str) -> Matrix {
    p.by_name(name).unwrap().clone()
}

fn mv(m: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c) * x[c]).sum())
        .collect()
}

#[test]
fn context_encoding_matches_scalar_loop() {
    let q = random_query(4, 2, 3, &[2]);
    let p = model(2, &[2], GruMode::Uni, 5);
    let ctx: Vec<&BlueLink> = q.blue_links.iter().collect();
    let enc = encode_context(&ctx, &q, &p).unwrap();
    assert_eq!(enc.len(), 3);
    let g = |n: &str| mat(&p, &format!("gru.{n}"));
    let mut o: Vec<f64> = mv(&g("W_q"), &q.embedding).into_iter().map(sigma).collect();
    for (t, d) in ctx.iter().enumerate() {
        let x = &d.embedding;
        let (ux, us) = (mv(&g("W_u_x"), x), mv(&g("W_u_s"), &o));
        let (rx, rs) = (mv(&g("W_r_x"), x), mv(&g("W_r_s"), &o));
        let u: Vec<f64> = (0..2).map(|i| sigma(ux[i] + us[i])).collect();
        let r: Vec<f64> = (0..2).map(|i| sigma(rx[i] + rs[i])).collect();
        let ro: Vec<f64> = (0..2).map(|i| r[i] * o[i]).collect();
        let (sx, ss) = (mv(&g("W_x"), x), mv(&g("W_s"), &ro));
        let s: Vec<f64> = (0..2).map(|i| (sx[i] + ss[i]).tanh()).collect();
        o = (0..2).map(|i| (1.0 - u[i]) * o[i] + u[i] * s[i]).collect();
        for i in 0..2 {
            assert!((enc.outputs[t][i] - o[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_attention_gives_half_energies() {
    let q = random_query(5, 3, 4, &[2, 2]);
    let mut p = model(3, &[2, 2], GruMode::Uni, 1);
    for n in ["attn.2.w_q", "attn.2.w_c", "attn.2.b"] {
        zero(&mut p, n);
    }
    let ctx: Vec<&BlueLink> = q.blue_links.iter().collect();
    let enc = encode_context(&ctx, &q, &p).unwrap();
    assert_eq!(attention_energies(2, &q, &enc, &p).unwrap(), vec![0.5; 4]);
    let pm = pseudo_module(2, &q, &enc, &p).unwrap();
    assert!(pm.weights.iter().all(|w| (w - 0.25).abs() < 1e-15));
    assert!(matches!(
        attention_energies(7, &q, &enc, &p),
        Err(PolicyError::Neural(NeuralError::UnknownVertical(7)))
    ));
}

#[test]
fn attention_matches_hand_expansion() {
    let q = random_query(6, 2, 2, &[3]);
    let mut p = model(2, &[3], GruMode::Uni, 2);
    p.by_name_mut("attn.1.b").unwrap().set(0, 0, 0.3);
    let ctx: Vec<&BlueLink> = q.blue_links.iter().collect();
    let enc = encode_context(&ctx, &q, &p).unwrap();
    let e = attention_energies(1, &q, &enc, &p).unwrap();
    let (wq, wc) = (mat(&p, "attn.1.w_q"), mat(&p, "attn.1.w_c"));
    for j in 0..2 {
        let o = &enc.outputs[j];
        let pre = wq.get(0, 0) * q.embedding[0]
            + wq.get(0, 1) * q.embedding[1]
            + wc.get(0, 0) * o[0]
            + wc.get(0, 1) * o[1]
            + 0.3;
        assert!((e[j] - sigma(pre)).abs() < 1e-12);
        assert!(e[j] > 0.0 && e[j] < 1.0);
    }
}

#[test]
fn single_position_attention_copies_output() {
    let q = random_query(7, 3, 1, &[2]);
    let p = model(3, &[2], GruMode::Uni, 3);
    let enc = encode_context(&[&q.blue_links[0]], &q, &p).unwrap();
    let pm = pseudo_module(1, &q, &enc, &p).unwrap();
    assert_eq!(pm.weights, vec![1.0]);
    assert_eq!(pm.vector, enc.outputs[0]);
}

#[test]
fn pseudo_module_stays_in_convex_hull() {
    for seed in 0..50 {
        let q = random_query(seed, 4, 6, &[3, 2]);
        let p = model(4, &[3, 2], GruMode::Dual, seed + 100);
        let ctx: Vec<&BlueLink> = q.blue_links.iter().collect();
        let enc = encode_context(&ctx, &q, &p).unwrap();
        for v in 1..=2 {
            let pm = pseudo_module(v, &q, &enc, &p).unwrap();
            assert!((pm.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for d in 0..4 {
                let lo = enc.outputs.iter().map(|o| o[d]).fold(f64::INFINITY, f64::min);
                let hi = enc.outputs.iter().map(|o| o[d]).fold(f64::NEG_INFINITY, f64::max);
                assert!(pm.vector[d] >= lo - 1e-12 && pm.vector[d] <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn module_embedding_cases() {
    let q = random_query(8, 3, 2, &[4]);
    let mut p = model(3, &[4], GruMode::Uni, 4);
    let m = &q.modules[0];
    let pseudo = PseudoModule {
        vertical_id: 1,
        vector: vec![0.1, -0.2, 0.3],
        weights: vec![1.0],
    };
    let content = content_embedding(m, &p).unwrap();
    let with_zero = module_embedding(m, &PseudoModule::zero(1, 3), &p).unwrap();
    assert_eq!(with_zero, content);
    let wrong = PseudoModule::zero(2, 3);
    assert!(matches!(
        module_embedding(m, &wrong, &p),
        Err(PolicyError::VerticalMismatch { .. })
    ));
    zero(&mut p, "V.1");
    assert_eq!(module_embedding(m, &pseudo, &p).unwrap(), pseudo.vector);
}

#[test]
fn projection_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = model(3, &[4], GruMode::Uni, 6);
    let q = random_query(9, 3, 1, &[4]);
    for _ in 0..20 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let emb = |raw: &[f64]| {
            let mut m = q.modules[0].clone();
            m.raw_features = raw.to_vec();
            content_embedding(&m, &p).unwrap()
        };
        let (ea, eb, es) = (emb(&a), emb(&b), emb(&sum));
        for d in 0..3 {
            assert!((es[d] - ea[d] - eb[d]).abs() < 1e-12);
        }
    }
    let mut m = q.modules[0].clone();
    m.raw_features.pop();
    assert!(content_embedding(&m, &p).is_err());
}

#[test]
fn action_probability_cases() {
    let q = random_query(10, 3, 1, &[]);
    let mut p = model(3, &[], GruMode::Uni, 7);
    let state = RankingState::reset(&q, vec![], 1).unwrap();
    let h = vec![0.3; 6];
    let emb = vec![q.blue_links[0].embedding.clone()];
    assert_eq!(action_probabilities(&state, &h, &emb, &p).unwrap(), vec![1.0]);

    let q = random_query(11, 3, 4, &[]);
    let state = RankingState::reset(&q, vec![], 2).unwrap();
    let emb: Vec<Vec<f64>> = q.blue_links.iter().map(|d| d.embedding.clone()).collect();
    let probs = action_probabilities(&state, &h, &emb, &p).unwrap();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(matches!(
        action_probabilities(&state, &h, &emb[..3], &p),
        Err(PolicyError::EmbeddingCount { .. })
    ));
    zero(&mut p, "U_p");
    let uniform = action_probabilities(&state, &h, &emb, &p).unwrap();
    assert!(uniform.iter().all(|x| (x - 0.25).abs() < 1e-15));
}

#[test]
fn softmax_shift_invariance() {
    let scores = [0.3, -1.2, 2.0, 0.0];
    let shifted: Vec<f64> = scores.iter().map(|s| s + 17.5).collect();
    let (a, b) = (neural::softmax(&scores).unwrap(), neural::softmax(&shifted).unwrap());
    for i in 0..4 {
        assert!((a[i] - b[i]).abs() < 1e-12);
    }
}

#[test]
fn scaling_policy_map_keeps_argmax() {
    let q = random_query(12, 3, 5, &[2]);
    let mut p = model(3, &[2], GruMode::Uni, 8);
    let h = vec![0.2, -0.1, 0.4, 0.0, 0.3, -0.5];
    let emb: Vec<Vec<f64>> = q.blue_links.iter().map(|d| d.embedding.clone()).collect();
    let s1 = action_scores(&h, &emb, &p).unwrap();
    p.by_name_mut("U_p").unwrap().scale(3.7);
    let s2 = action_scores(&h, &emb, &p).unwrap();
    let ids = || q.blue_links.iter().map(|d| d.doc_id.as_str());
    assert_eq!(argmax_by_id(&s1, ids()), argmax_by_id(&s2, ids()));
}

#[test]
fn gru_sharing_follows_mode() {
    let uni = model(3, &[2], GruMode::Uni, 0);
    assert_eq!(uni.layout().gru, uni.layout().ctx_gru);
    let dual = model(3, &[2], GruMode::Dual, 0);
    assert_ne!(dual.layout().gru.w_q, dual.layout().ctx_gru.w_q);
}

#[test]
fn tape_episode_agrees_with_plain_scoring() {
    for seed in 0..10 {
        let q = random_query(seed, 4, 5, &[3, 2, 4]);
        let p = model(4, &[3, 2, 4], GruMode::Uni, seed);
        let ctx = rank_context(&q, &p, 3).unwrap();
        let mut tape = GradTape::new(p.store());
        let inputs = EpisodeInputs {
            query: &q,
            context: Some(&ctx),
            target_length: 4,
            ssl: false,
        };
        let graph = build_episode::<ChaCha8Rng>(&mut tape, &p, &inputs, Selection::Greedy).unwrap();

        let links: Vec<&BlueLink> = ctx.iter().map(|&i| &q.blue_links[i]).collect();
        let enc = encode_context(&links, &q, &p).unwrap();
        let embeddings: Vec<Vec<f64>> = q
            .modules
            .iter()
            .map(|m| {
                let pm = pseudo_module(m.vertical_id, &q, &enc, &p).unwrap();
                module_embedding(m, &pm, &p).unwrap()
            })
            .collect();
        let mut state = RankingState::reset(&q, ctx.clone(), 4).unwrap();
        for (t, step) in graph.steps.iter().enumerate() {
            let h = tape.value(graph.encoded[t]).to_vec();
            let emb: Vec<Vec<f64>> = state
                .candidates()
                .iter()
                .map(|c| match *c {
                    ItemRef::BlueLink(i) => q.blue_links[i].embedding.clone(),
                    ItemRef::Module(j) => embeddings[j].clone(),
                })
                .collect();
            let probs = action_probabilities(&state, &h, &emb, &p).unwrap();
            for (a, b) in probs.iter().zip(&step.probabilities) {
                assert!((a - b).abs() < 1e-12);
            }
            state = state.transition(step.action()).unwrap();
        }
    }
}
