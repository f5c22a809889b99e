//! Bias-free gated recurrent unit used both for ranking-state encoding and
//! for context encoding.
//!
//! The output interpolates from the previous output toward the candidate
//! cell: `out = (1 - u) * o_prev + u * cell`. The encoded state of a step is
//! `[out, cell]`.

use super::params::GruParams;
use super::tensor::sigmoid;
use super::NeuralError;

/// Activations of one GRU step.
#[derive(Debug, Clone, PartialEq)]
pub struct GruStep {
    /// Update gate.
    pub u: Vec<f64>,
    /// Reset gate.
    pub r_gate: Vec<f64>,
    /// Candidate cell state.
    pub cell: Vec<f64>,
    /// Output vector.
    pub out: Vec<f64>,
}

impl GruStep {
    /// `[out, cell]`.
    pub fn encoded(&self) -> Vec<f64> {
        let mut h = Vec::with_capacity(self.out.len() * 2);
        h.extend_from_slice(&self.out);
        h.extend_from_slice(&self.cell);
        h
    }
}

fn check_len(what: &str, v: &[f64], alpha: usize) -> Result<(), NeuralError> {
    if v.len() != alpha {
        return Err(NeuralError::Shape {
            what: what.into(),
            expected: alpha,
            actual: v.len(),
        });
    }
    Ok(())
}

/// `o_0 = sigmoid(W_q · q)`.
pub fn gru_init_state(q: &[f64], gru: &GruParams<'_>) -> Result<Vec<f64>, NeuralError> {
    check_len("query embedding", q, gru.alpha())?;
    Ok(gru.w_q.matvec(q)?.into_iter().map(sigmoid).collect())
}

pub fn gru_step(x: &[f64], o_prev: &[f64], gru: &GruParams<'_>) -> Result<GruStep, NeuralError> {
    let alpha = gru.alpha();
    check_len("gru input", x, alpha)?;
    check_len("gru previous output", o_prev, alpha)?;
    let add = |a: Vec<f64>, b: Vec<f64>| -> Vec<f64> { a.iter().zip(&b).map(|(x, y)| x + y).collect() };

    let u: Vec<f64> = add(gru.w_u_x.matvec(x)?, gru.w_u_s.matvec(o_prev)?)
        .into_iter()
        .map(sigmoid)
        .collect();
    let r_gate: Vec<f64> = add(gru.w_r_x.matvec(x)?, gru.w_r_s.matvec(o_prev)?)
        .into_iter()
        .map(sigmoid)
        .collect();
    let gated: Vec<f64> = r_gate.iter().zip(o_prev).map(|(r, o)| r * o).collect();
    let cell: Vec<f64> = add(gru.w_x.matvec(x)?, gru.w_s.matvec(&gated)?)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let out = (0..alpha)
        .map(|i| (1.0 - u[i]) * o_prev[i] + u[i] * cell[i])
        .collect();
    Ok(GruStep {
        u,
        r_gate,
        cell,
        out,
    })
}

/// Encoded state `h_t = [o_t, s_t]` of step `t`.
pub fn encode_state(steps: &[GruStep], t: usize) -> Result<Vec<f64>, NeuralError> {
    steps
        .get(t)
        .map(GruStep::encoded)
        .ok_or(NeuralError::IndexOutOfRange {
            index: t,
            len: steps.len(),
        })
}

/// Runs the GRU from `o_0(q)` over `inputs`, returning every step.
pub fn gru_sequence(
    q: &[f64],
    inputs: &[&[f64]],
    gru: &GruParams<'_>,
) -> Result<Vec<GruStep>, NeuralError> {
    let mut o = gru_init_state(q, gru)?;
    let mut steps = Vec::with_capacity(inputs.len());
    for x in inputs {
        let step = gru_step(x, &o, gru)?;
        o.clone_from(&step.out);
        steps.push(step);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tensor::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Owned([Matrix; 7]);

    impl Owned {
        fn zeros(alpha: usize) -> Self {
            Owned(std::array::from_fn(|_| Matrix::zeros(alpha, alpha)))
        }

        fn random(alpha: usize, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Owned(std::array::from_fn(|_| {
                Matrix::from_fn(alpha, alpha, |_, _| rng.random_range(-1.0..1.0))
            }))
        }

        fn view(&self) -> GruParams<'_> {
            let m = &self.0;
            GruParams {
                w_u_x: &m[0],
                w_u_s: &m[1],
                w_r_x: &m[2],
                w_r_s: &m[3],
                w_x: &m[4],
                w_s: &m[5],
                w_q: &m[6],
            }
        }
    }

    // Scalar-loop recomputation, written index by index.
    fn scalar_step(x: &[f64], o: &[f64], m: &[Matrix; 7]) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut u = vec![0.0; n];
        let mut r = vec![0.0; n];
        for i in 0..n {
            let (mut a, mut b) = (0.0, 0.0);
            for j in 0..n {
                a += m[0].get(i, j) * x[j] + m[1].get(i, j) * o[j];
                b += m[2].get(i, j) * x[j] + m[3].get(i, j) * o[j];
            }
            u[i] = sig(a);
            r[i] = sig(b);
        }
        let mut cell = vec![0.0; n];
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut c = 0.0;
            for j in 0..n {
                c += m[4].get(i, j) * x[j] + m[5].get(i, j) * r[j] * o[j];
            }
            cell[i] = c.tanh();
            out[i] = (1.0 - u[i]) * o[i] + u[i] * cell[i];
        }
        (out, cell)
    }

    #[test]
    fn zero_query_weights_give_half() {
        let w = Owned::zeros(3);
        assert_eq!(gru_init_state(&[1.0, -2.0, 3.0], &w.view()).unwrap(), vec![0.5; 3]);
        let mut w1 = Owned::zeros(1);
        w1.0[6] = Matrix::identity(1);
        assert_eq!(gru_init_state(&[0.0], &w1.view()).unwrap(), vec![0.5]);
    }

    #[test]
    fn init_state_matches_scalar_loop() {
        let w = Owned::random(3, 11);
        let q = [0.3, -1.2, 0.8];
        let got = gru_init_state(&q, &w.view()).unwrap();
        for i in 0..3 {
            let z: f64 = (0..3).map(|j| w.0[6].get(i, j) * q[j]).sum();
            assert!((got[i] - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_step() {
        let w = Owned::zeros(2);
        let s = gru_step(&[1.0, 2.0], &[0.4, -0.6], &w.view()).unwrap();
        assert_eq!(s.u, vec![0.5, 0.5]);
        assert_eq!(s.r_gate, vec![0.5, 0.5]);
        assert_eq!(s.cell, vec![0.0, 0.0]);
        assert_eq!(s.out, vec![0.2, -0.3]);
        let s0 = gru_step(&[1.0, 2.0], &[0.0, 0.0], &w.view()).unwrap();
        assert_eq!(s0.out, vec![0.0, 0.0]);
    }

    #[test]
    fn step_matches_scalar_loop() {
        let w = Owned::random(2, 4);
        let (x, o) = ([0.7, -0.4], [0.2, 0.9]);
        let s = gru_step(&x, &o, &w.view()).unwrap();
        let (out, cell) = scalar_step(&x, &o, &w.0);
        for i in 0..2 {
            assert!((s.out[i] - out[i]).abs() < 1e-12);
            assert!((s.cell[i] - cell[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn gates_stay_in_range() {
        let w = Owned::random(5, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut o = vec![0.5; 5];
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-10.0..10.0)).collect();
            let s = gru_step(&x, &o, &w.view()).unwrap();
            assert!(s.u.iter().chain(&s.r_gate).all(|&g| (0.0..=1.0).contains(&g)));
            assert!(s.cell.iter().all(|&c| c.abs() <= 1.0));
            o = s.out;
        }
    }

    #[test]
    fn encode_state_concatenates() {
        let step = GruStep {
            u: vec![0.5; 2],
            r_gate: vec![0.5; 2],
            cell: vec![3.0, 4.0],
            out: vec![1.0, 2.0],
        };
        assert_eq!(encode_state(&[step], 0).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(
            encode_state(&[], 0),
            Err(NeuralError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn encoded_norm_is_pythagorean() {
        let w = Owned::random(4, 21);
        let steps = gru_sequence(&[0.1, 0.2, -0.3, 0.5], &[&[1.0, 0.0, -1.0, 0.5]], &w.view()).unwrap();
        let h = encode_state(&steps, 0).unwrap();
        let n2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        assert!((n2(&h) - n2(&steps[0].out) - n2(&steps[0].cell)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let w = Owned::zeros(3);
        assert!(matches!(
            gru_step(&[1.0], &[0.0; 3], &w.view()),
            Err(NeuralError::Shape { .. })
        ));
    }
}
