//! Reverse-mode gradient tape over the handful of vector operations the
//! ranking model needs.
//!
//! Every node stores its forward value. Matrices only enter as parameters
//! (`MatVec`, `Param`), so all intermediate values are flat vectors and
//! scalars are vectors of length one.

use super::params::{GruIds, ParamId, ParamStore};
use super::tensor::{dot, log_sum_exp, sigmoid, softmax_unchecked};
use super::NeuralError;

/// Handle to a node on a [`GradTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(ParamId),
    MatVec(ParamId, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Dot(Var, Var),
    Softmax(Var),
    LogSoftmaxAt(Var, usize),
    WeightedSum(Var, Vec<Var>),
    SqNorm(Var),
    Scale(Var, f64),
    Sum(Vec<Var>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Forward record with cached activations; consumed by one [`GradTape::backward`].
#[derive(Debug)]
pub struct GradTape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
}

impl<'p> GradTape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(256),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(value, op)
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        debug_assert_eq!(self.value(a).len(), self.value(b).len());
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(value, op)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Const)
    }

    /// Parameter used directly as a vector (its entries in row-major order).
    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.params.get(id).data().to_vec();
        self.push(value, Op::Param(id))
    }

    pub fn matvec(&mut self, id: ParamId, x: Var) -> Result<Var, NeuralError> {
        let value = self.params.get(id).matvec(self.value(x))?;
        Ok(self.push(value, Op::MatVec(id, x)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        self.map(a, |x| 1.0 - x, Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let value = parts
            .iter()
            .flat_map(|p| self.value(*p).iter().copied())
            .collect();
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let value = vec![dot(self.value(a), self.value(b))];
        self.push(value, Op::Dot(a, b))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_unchecked(self.value(a));
        self.push(value, Op::Softmax(a))
    }

    /// `a[index] - logsumexp(a)`.
    pub fn log_softmax_at(&mut self, a: Var, index: usize) -> Result<Var, NeuralError> {
        let len = self.value(a).len();
        if index >= len {
            return Err(NeuralError::IndexOutOfRange { index, len });
        }
        let v = self.value(a);
        let value = vec![v[index] - log_sum_exp(v)];
        Ok(self.push(value, Op::LogSoftmaxAt(a, index)))
    }

    /// `Σ_j weights[j] · items[j]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        debug_assert_eq!(self.value(weights).len(), items.len());
        let dim = self.value(items[0]).len();
        let mut value = vec![0.0; dim];
        for (w, item) in self.value(weights).iter().zip(items) {
            for (o, x) in value.iter_mut().zip(self.value(*item)) {
                *o += w * x;
            }
        }
        self.push(value, Op::WeightedSum(weights, items.to_vec()))
    }

    pub fn sq_norm(&mut self, a: Var) -> Var {
        let value = vec![dot(self.value(a), self.value(a))];
        self.push(value, Op::SqNorm(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, |x| k * x, Op::Scale(a, k))
    }

    /// Elementwise sum of equally sized nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let dim = self.value(parts[0]).len();
        let mut value = vec![0.0; dim];
        for p in parts {
            for (o, x) in value.iter_mut().zip(self.value(*p)) {
                *o += x;
            }
        }
        self.push(value, Op::Sum(parts.to_vec()))
    }

    /// `o_0 = sigmoid(W_q · q)`.
    pub fn gru_init(&mut self, gru: &GruIds, q: Var) -> Result<Var, NeuralError> {
        let z = self.matvec(gru.w_q, q)?;
        Ok(self.sigmoid(z))
    }

    /// One GRU step; returns `(out, cell)`.
    pub fn gru_step(&mut self, gru: &GruIds, x: Var, o_prev: Var) -> Result<(Var, Var), NeuralError> {
        let ux = self.matvec(gru.w_u_x, x)?;
        let us = self.matvec(gru.w_u_s, o_prev)?;
        let u_pre = self.add(ux, us);
        let u = self.sigmoid(u_pre);
        let rx = self.matvec(gru.w_r_x, x)?;
        let rs = self.matvec(gru.w_r_s, o_prev)?;
        let r_pre = self.add(rx, rs);
        let r = self.sigmoid(r_pre);
        let gated = self.mul(r, o_prev);
        let cx = self.matvec(gru.w_x, x)?;
        let cs = self.matvec(gru.w_s, gated)?;
        let c_pre = self.add(cx, cs);
        let cell = self.tanh(c_pre);
        let keep = self.one_minus(u);
        let kept = self.mul(keep, o_prev);
        let moved = self.mul(u, cell);
        let out = self.add(kept, moved);
        Ok((out, cell))
    }

    /// Reverse pass from the scalar node `loss`, seeded with `seed`.
    /// Returns gradients for every parameter in the store.
    pub fn backward(&mut self, loss: Var, seed: f64) -> Result<ParamStore, NeuralError> {
        let mut grads = self.params.zeros_like();
        self.backward_into(loss, seed, &mut grads)?;
        Ok(grads)
    }

    /// Like [`GradTape::backward`] but accumulates into `grads`.
    pub fn backward_into(
        &mut self,
        loss: Var,
        seed: f64,
        grads: &mut ParamStore,
    ) -> Result<(), NeuralError> {
        if self.consumed {
            return Err(NeuralError::TapeConsumed);
        }
        if self.value(loss).len() != 1 {
            return Err(NeuralError::NotScalar(self.value(loss).len()));
        }
        self.consumed = true;
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![seed]);

        fn acc(adj: &mut [Option<Vec<f64>>], v: Var, g: impl Iterator<Item = f64>) {
            match &mut adj[v.0] {
                Some(buf) => buf.iter_mut().zip(g).for_each(|(b, x)| *b += x),
                slot @ None => *slot = Some(g.collect()),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Const => {}
                Op::Param(id) => {
                    grads
                        .get_mut(*id)
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(p, x)| *p += x);
                }
                Op::MatVec(id, x) => {
                    let m = self.params.get(*id);
                    grads.get_mut(*id).add_outer(&g, &self.nodes[x.0].value);
                    let gx = m.matvec_transposed(&g);
                    acc(&mut adj, *x, gx.into_iter());
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *a, g.iter().copied());
                    acc(&mut adj, *b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    acc(&mut adj, *a, g.iter().copied());
                    acc(&mut adj, *b, g.iter().map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(&mut adj, *a, g.iter().zip(vb).map(|(g, b)| g * b));
                    acc(&mut adj, *b, g.iter().zip(va).map(|(g, a)| g * a));
                }
                Op::OneMinus(a) => acc(&mut adj, *a, g.iter().map(|x| -x)),
                Op::Sigmoid(a) => acc(&mut adj, *a, g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s))),
                Op::Tanh(a) => acc(&mut adj, *a, g.iter().zip(y).map(|(g, t)| g * (1.0 - t * t))),
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        acc(&mut adj, *p, g[offset..offset + n].iter().copied());
                        offset += n;
                    }
                }
                Op::Dot(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(&mut adj, *a, vb.iter().map(|x| g[0] * x));
                    acc(&mut adj, *b, va.iter().map(|x| g[0] * x));
                }
                Op::Softmax(a) => {
                    let gp = dot(&g, y);
                    acc(&mut adj, *a, y.iter().zip(&g).map(|(p, g)| p * (g - gp)));
                }
                Op::LogSoftmaxAt(a, index) => {
                    let p = softmax_unchecked(&self.nodes[a.0].value);
                    let index = *index;
                    acc(
                        &mut adj,
                        *a,
                        p.iter().enumerate().map(|(k, pk)| {
                            g[0] * (if k == index { 1.0 } else { 0.0 } - pk)
                        }),
                    );
                }
                Op::WeightedSum(w, items) => {
                    let gw: Vec<f64> = items
                        .iter()
                        .map(|it| dot(&g, &self.nodes[it.0].value))
                        .collect();
                    let wv = self.nodes[w.0].value.clone();
                    acc(&mut adj, *w, gw.into_iter());
                    for (wj, it) in wv.iter().zip(items) {
                        acc(&mut adj, *it, g.iter().map(|x| wj * x));
                    }
                }
                Op::SqNorm(a) => {
                    let va = &self.nodes[a.0].value;
                    acc(&mut adj, *a, va.iter().map(|x| 2.0 * g[0] * x));
                }
                Op::Scale(a, k) => acc(&mut adj, *a, g.iter().map(|x| k * x)),
                Op::Sum(parts) => {
                    for p in parts {
                        acc(&mut adj, *p, g.iter().copied());
                    }
                }
            }
        }
        Ok(())
    }
}
