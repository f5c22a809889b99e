use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use super::NeuralError;

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of named matrices. Gradients use the same container.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Matrix>,
}

impl ParamStore {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn push(&mut self, name: String, m: Matrix) -> ParamId {
        self.names.push(name);
        self.tensors.push(m);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Same names and shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|m| m.data().len()).sum()
    }

    /// `self += k · other`. Both stores must share a layout.
    pub fn add_scaled(&mut self, other: &ParamStore, k: f64) {
        debug_assert_eq!(self.names, other.names);
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += k * y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.tensors.iter_mut().for_each(|m| m.scale(k));
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .map(Matrix::frobenius_sq)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    /// Largest absolute elementwise difference; `None` when layouts differ.
    pub fn max_abs_diff(&self, other: &ParamStore) -> Option<f64> {
        if self.names != other.names {
            return None;
        }
        let mut worst = 0.0f64;
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return None;
            }
            for (x, y) in a.data().iter().zip(b.data()) {
                worst = worst.max((x - y).abs());
            }
        }
        Some(worst)
    }
}

/// Whether context encoding shares the ranking GRU or owns a separate copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GruMode {
    #[default]
    Uni,
    Dual,
}

/// Dimensions needed to lay out a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub alpha: usize,
    /// Raw module feature width per vertical; entry `j - 1` belongs to vertical `j`.
    pub raw_dims: Vec<usize>,
    pub gru_mode: GruMode,
}

impl ModelShape {
    pub fn verticals(&self) -> usize {
        self.raw_dims.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruIds {
    pub w_u_x: ParamId,
    pub w_u_s: ParamId,
    pub w_r_x: ParamId,
    pub w_r_s: ParamId,
    pub w_x: ParamId,
    pub w_s: ParamId,
    pub w_q: ParamId,
}

impl GruIds {
    pub fn all(&self) -> [ParamId; 7] {
        [
            self.w_u_x, self.w_u_s, self.w_r_x, self.w_r_s, self.w_x, self.w_s, self.w_q,
        ]
    }
}

/// Attention parameters of one vertical: two row vectors and a scalar bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttnIds {
    pub w_q: ParamId,
    pub w_c: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub gru: GruIds,
    /// Equal to `gru` in uni mode.
    pub ctx_gru: GruIds,
    pub u_p: ParamId,
    /// Entry `j - 1` projects vertical `j`.
    pub proj: Vec<ParamId>,
    pub attn: Vec<AttnIds>,
    pub inv_w: ParamId,
    pub inv_b: ParamId,
    pub fwd_w: ParamId,
    pub fwd_b: ParamId,
}

impl Layout {
    pub fn ssl_ids(&self) -> [ParamId; 4] {
        [self.inv_w, self.inv_b, self.fwd_w, self.fwd_b]
    }
}

/// Borrowed view of the seven GRU matrices.
#[derive(Debug, Clone, Copy)]
pub struct GruParams<'a> {
    pub w_u_x: &'a Matrix,
    pub w_u_s: &'a Matrix,
    pub w_r_x: &'a Matrix,
    pub w_r_s: &'a Matrix,
    pub w_x: &'a Matrix,
    pub w_s: &'a Matrix,
    pub w_q: &'a Matrix,
}

impl GruParams<'_> {
    pub fn alpha(&self) -> usize {
        self.w_q.rows()
    }
}

/// Every learnable tensor of the ranking model, the encoders and the
/// self-supervised heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    shape: ModelShape,
    layout: Layout,
    store: ParamStore,
}

fn push_gru(store: &mut ParamStore, prefix: &str, alpha: usize) -> GruIds {
    let mut add = |n: &str| store.push(format!("{prefix}.{n}"), Matrix::zeros(alpha, alpha));
    GruIds {
        w_u_x: add("W_u_x"),
        w_u_s: add("W_u_s"),
        w_r_x: add("W_r_x"),
        w_r_s: add("W_r_s"),
        w_x: add("W_x"),
        w_s: add("W_s"),
        w_q: add("W_q"),
    }
}

impl ModelParams {
    /// All-zero parameters with the given shape.
    pub fn zeros(shape: ModelShape) -> Result<Self, NeuralError> {
        let alpha = shape.alpha;
        if alpha == 0 {
            return Err(NeuralError::InvalidShape("alpha must be positive".into()));
        }
        if let Some(j) = shape.raw_dims.iter().position(|&d| d == 0) {
            return Err(NeuralError::InvalidShape(format!(
                "raw_dim of vertical {} must be positive",
                j + 1
            )));
        }
        let n_classes = shape.verticals() + 1;
        let mut store = ParamStore::new();
        let gru = push_gru(&mut store, "gru", alpha);
        let ctx_gru = match shape.gru_mode {
            GruMode::Uni => gru,
            GruMode::Dual => push_gru(&mut store, "ctx_gru", alpha),
        };
        let u_p = store.push("U_p".into(), Matrix::zeros(alpha, 2 * alpha));
        let proj = shape
            .raw_dims
            .iter()
            .enumerate()
            .map(|(j, &d)| store.push(format!("V.{}", j + 1), Matrix::zeros(alpha, d)))
            .collect();
        let attn = (1..=shape.verticals())
            .map(|v| AttnIds {
                w_q: store.push(format!("attn.{v}.w_q"), Matrix::zeros(1, alpha)),
                w_c: store.push(format!("attn.{v}.w_c"), Matrix::zeros(1, alpha)),
                b: store.push(format!("attn.{v}.b"), Matrix::zeros(1, 1)),
            })
            .collect();
        let inv_w = store.push("ssl.inv.W".into(), Matrix::zeros(n_classes, 4 * alpha));
        let inv_b = store.push("ssl.inv.b".into(), Matrix::zeros(n_classes, 1));
        let fwd_w = store.push("ssl.fwd.W".into(), Matrix::zeros(2 * alpha, 3 * alpha));
        let fwd_b = store.push("ssl.fwd.b".into(), Matrix::zeros(2 * alpha, 1));
        let layout = Layout {
            gru,
            ctx_gru,
            u_p,
            proj,
            attn,
            inv_w,
            inv_b,
            fwd_w,
            fwd_b,
        };
        Ok(Self {
            shape,
            layout,
            store,
        })
    }

    /// Weight matrices drawn from uniform(-1/sqrt(alpha), 1/sqrt(alpha)) in
    /// layout order; biases start at zero.
    pub fn init(shape: ModelShape, seed: u64) -> Result<Self, NeuralError> {
        let mut params = Self::zeros(shape)?;
        let bound = 1.0 / (params.shape.alpha as f64).sqrt();
        let biases = [params.layout.inv_b, params.layout.fwd_b];
        let attn_biases: Vec<ParamId> = params.layout.attn.iter().map(|a| a.b).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in params.store.ids().collect::<Vec<_>>() {
            if biases.contains(&id) || attn_biases.contains(&id) {
                continue;
            }
            for v in params.store.get_mut(id).data_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn shape(&self) -> &ModelShape {
        &self.shape
    }

    pub fn alpha(&self) -> usize {
        self.shape.alpha
    }

    pub fn verticals(&self) -> usize {
        self.shape.verticals()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        self.store.get(id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        self.store.get_mut(id)
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.store.id_of(name).map(|id| self.store.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        let id = self.store.id_of(name)?;
        Some(self.store.get_mut(id))
    }

    fn gru_view(&self, ids: &GruIds) -> GruParams<'_> {
        GruParams {
            w_u_x: self.get(ids.w_u_x),
            w_u_s: self.get(ids.w_u_s),
            w_r_x: self.get(ids.w_r_x),
            w_r_s: self.get(ids.w_r_s),
            w_x: self.get(ids.w_x),
            w_s: self.get(ids.w_s),
            w_q: self.get(ids.w_q),
        }
    }

    /// GRU used for ranking-state encoding.
    pub fn gru(&self) -> GruParams<'_> {
        self.gru_view(&self.layout.gru)
    }

    /// GRU used for context encoding (the ranking GRU in uni mode).
    pub fn ctx_gru(&self) -> GruParams<'_> {
        self.gru_view(&self.layout.ctx_gru)
    }

    pub fn u_p(&self) -> &Matrix {
        self.get(self.layout.u_p)
    }

    fn vertical_index(&self, vertical: usize) -> Result<usize, NeuralError> {
        if vertical == 0 || vertical > self.verticals() {
            return Err(NeuralError::UnknownVertical(vertical));
        }
        Ok(vertical - 1)
    }

    pub fn projection(&self, vertical: usize) -> Result<&Matrix, NeuralError> {
        let j = self.vertical_index(vertical)?;
        Ok(self.get(self.layout.proj[j]))
    }

    pub fn attention(&self, vertical: usize) -> Result<AttnIds, NeuralError> {
        let j = self.vertical_index(vertical)?;
        Ok(self.layout.attn[j])
    }

    pub fn is_ssl_param(&self, id: ParamId) -> bool {
        self.layout.ssl_ids().contains(&id)
    }

    pub fn zero_grads(&self) -> ParamStore {
        self.store.zeros_like()
    }

    /// Norm of the forward-head parameters, monitored against collapse to zero.
    pub fn forward_head_norm(&self) -> f64 {
        (self.get(self.layout.fwd_w).frobenius_sq() + self.get(self.layout.fwd_b).frobenius_sq())
            .sqrt()
    }

    pub fn to_checkpoint_json(&self) -> Result<String, NeuralError> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: self.shape.clone(),
            tensors: self
                .store
                .iter()
                .map(|(name, m)| NamedTensor {
                    name: name.to_string(),
                    shape: [m.rows(), m.cols()],
                    data: m.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self, NeuralError> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(NeuralError::Checkpoint(format!(
                "unexpected format tag {:?}",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!(
                "unsupported version {}",
                file.version
            )));
        }
        let mut params = Self::zeros(file.shape)?;
        if file.tensors.len() != params.store.len() {
            return Err(NeuralError::Checkpoint(format!(
                "expected {} tensors, found {}",
                params.store.len(),
                file.tensors.len()
            )));
        }
        for t in file.tensors {
            let id = params
                .store
                .id_of(&t.name)
                .ok_or_else(|| NeuralError::Checkpoint(format!("unknown tensor {}", t.name)))?;
            let expected = params.store.get(id).shape();
            if (t.shape[0], t.shape[1]) != expected {
                return Err(NeuralError::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    t.name, t.shape, expected
                )));
            }
            let m = Matrix::from_vec(t.shape[0], t.shape[1], t.data)
                .map_err(|e| NeuralError::Checkpoint(format!("tensor {}: {e}", t.name)))?;
            if !m.is_finite() {
                return Err(NeuralError::NonFinite("checkpoint tensor"));
            }
            *params.store.get_mut(id) = m;
        }
        Ok(params)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), NeuralError> {
        fs::write(path, self.to_checkpoint_json()?)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self, NeuralError> {
        Self::from_checkpoint_json(&fs::read_to_string(path)?)
    }
}

const CHECKPOINT_FORMAT: &str = "carl-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    shape: ModelShape,
    tensors: Vec<NamedTensor>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(mode: GruMode) -> ModelShape {
        ModelShape {
            alpha: 4,
            raw_dims: vec![3, 5],
            gru_mode: mode,
        }
    }

    #[test]
    fn layout_names_follow_checkpoint_convention() {
        let p = ModelParams::zeros(shape(GruMode::Uni)).unwrap();
        for name in [
            "gru.W_u_x", "gru.W_q", "U_p", "V.1", "V.2", "attn.2.w_q", "attn.1.w_c", "attn.1.b",
            "ssl.inv.W", "ssl.fwd.b",
        ] {
            assert!(p.by_name(name).is_some(), "{name}");
        }
        assert!(p.by_name("ctx_gru.W_q").is_none());
        assert_eq!(p.by_name("U_p").unwrap().shape(), (4, 8));
        assert_eq!(p.by_name("V.2").unwrap().shape(), (4, 5));
        assert_eq!(p.by_name("ssl.inv.W").unwrap().shape(), (3, 16));
        assert_eq!(p.by_name("ssl.fwd.W").unwrap().shape(), (8, 12));
    }

    #[test]
    fn dual_mode_has_independent_context_gru() {
        let p = ModelParams::init(shape(GruMode::Dual), 3).unwrap();
        assert_ne!(p.layout().gru, p.layout().ctx_gru);
        assert_ne!(p.gru().w_x, p.ctx_gru().w_x);
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = ModelParams::init(shape(GruMode::Uni), 9).unwrap();
        let b = ModelParams::init(shape(GruMode::Uni), 9).unwrap();
        assert_eq!(a, b);
        for (_, m) in a.store().iter() {
            assert!(m.data().iter().all(|v| v.abs() <= 0.5));
        }
        assert_eq!(a.by_name("attn.1.b").unwrap().data(), &[0.0]);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let p = ModelParams::init(shape(GruMode::Dual), 5).unwrap();
        let json = p.to_checkpoint_json().unwrap();
        assert_eq!(ModelParams::from_checkpoint_json(&json).unwrap(), p);
    }

    #[test]
    fn checkpoint_rejects_shape_mismatch() {
        let p = ModelParams::init(shape(GruMode::Uni), 5).unwrap();
        let json = p.to_checkpoint_json().unwrap();
        let mut value: serde_json::Value = serde_json::from_str(&json).unwrap();
        let t = &mut value["tensors"][0];
        t["shape"] = serde_json::json!([4, 3]);
        t["data"] = serde_json::json!(vec![0.0; 12]);
        let err = ModelParams::from_checkpoint_json(&value.to_string()).unwrap_err();
        assert!(matches!(err, NeuralError::Checkpoint(_)), "{err}");
    }

    #[test]
    fn zero_alpha_is_rejected() {
        let mut s = shape(GruMode::Uni);
        s.alpha = 0;
        assert!(ModelParams::zeros(s).is_err());
    }
}
