//! Dense numeric core: a row-major matrix, named parameters with Adam state,
//! and a central-difference gradient checker.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("{op}: shape mismatch ({detail})")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: non-finite value in {what}")]
    NonFinite { op: &'static str, what: String },
    #[error("unknown parameter '{0}'")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Row-major `rows x cols` matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor2 {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        if data.len() != rows * cols {
            return Err(NnError::ShapeMismatch {
                op: "from_vec",
                detail: format!("{} values for {rows}x{cols}", data.len()),
            });
        }
        Ok(Tensor2 { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor2::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Single row vector.
    pub fn row_vector(v: &[f64]) -> Self {
        Tensor2 {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    /// Xavier/Glorot uniform init: U(-a, a), a = sqrt(6 / (rows + cols)).
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let a = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
        Tensor2 { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn matmul(&self, other: &Tensor2) -> Result<Tensor2, NnError> {
        if self.cols != other.rows {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", self.shape(), other.shape()),
            });
        }
        let mut out = Tensor2::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

/// `out = x W` for a single row `x` (length `W.rows`); `out` has length `W.cols`.
pub fn vec_mat(x: &[f64], w: &Tensor2, out: &mut [f64]) {
    debug_assert_eq!(x.len(), w.rows);
    debug_assert_eq!(out.len(), w.cols);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (k, &a) in x.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (o, b) in out.iter_mut().zip(w.row(k)) {
            *o += a * b;
        }
    }
}

/// `out += W dy` (the input-gradient of `y = x W`); `dy` has length `W.cols`.
pub fn mat_vec_t_acc(w: &Tensor2, dy: &[f64], out: &mut [f64]) {
    debug_assert_eq!(dy.len(), w.cols);
    debug_assert_eq!(out.len(), w.rows);
    for (k, o) in out.iter_mut().enumerate() {
        *o += w.row(k).iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `G += x^T dy` (the weight-gradient of `y = x W`).
pub fn outer_acc(grad: &mut Tensor2, x: &[f64], dy: &[f64]) {
    debug_assert_eq!(x.len(), grad.rows);
    debug_assert_eq!(dy.len(), grad.cols);
    for (k, &a) in x.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for (g, b) in grad.row_mut(k).iter_mut().zip(dy) {
            *g += a * b;
        }
    }
}

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    LeakyRelu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation `x`.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `act(x W + b)`.
pub fn dense_forward(x: &Tensor2, w: &Tensor2, b: &[f64], act: Activation) -> Result<Tensor2, NnError> {
    if b.len() != w.cols() {
        return Err(NnError::ShapeMismatch {
            op: "dense_forward",
            detail: format!("bias length {} for {} outputs", b.len(), w.cols()),
        });
    }
    let mut out = x.matmul(w).map_err(|e| match e {
        NnError::ShapeMismatch { detail, .. } => NnError::ShapeMismatch {
            op: "dense_forward",
            detail,
        },
        other => other,
    })?;
    for r in 0..out.rows() {
        for (o, bias) in out.row_mut(r).iter_mut().zip(b) {
            *o = act.apply(*o + bias);
        }
    }
    if !out.is_finite() {
        return Err(NnError::NonFinite {
            op: "dense_forward",
            what: "output".into(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
    m: Tensor2,
    v: Tensor2,
}

impl Param {
    fn new(value: Tensor2) -> Self {
        let (r, c) = value.shape();
        Param {
            value,
            grad: Tensor2::zeros(r, c),
            m: Tensor2::zeros(r, c),
            v: Tensor2::zeros(r, c),
        }
    }
}

/// Named parameters, their gradients and Adam moments. Iteration order is
/// the sorted name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor2) {
        self.params.insert(name.into(), Param::new(value));
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor2, NnError> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor2, NnError> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor2, NnError> {
        self.params
            .get(name)
            .map(|p| &p.grad)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn grad_mut(&mut self, name: &str) -> Result<&mut Tensor2, NnError> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.grad)
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.data().len()).sum()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Add `other`'s gradients into ours (matching names).
    pub fn accumulate_grads(&mut self, other: &ParamStore) -> Result<(), NnError> {
        for (name, p) in &other.params {
            let g = self.grad_mut(name)?;
            for (a, b) in g.data_mut().iter_mut().zip(p.grad.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Copy of the values only (fresh gradients and moments).
    pub fn values_only(&self) -> ParamStore {
        let mut s = ParamStore::new();
        for (name, p) in &self.params {
            s.insert(name.clone(), p.value.clone());
        }
        s
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.params {
            h.update(name.as_bytes());
            h.update((p.value.rows() as u64).to_le_bytes());
            h.update((p.value.cols() as u64).to_le_bytes());
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: 1,
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        CheckpointTensor {
                            shape: [p.value.rows(), p.value.cols()],
                            data: p.value.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<ParamStore, NnError> {
        if ck.version != 1 {
            return Err(NnError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut s = ParamStore::new();
        for (name, t) in &ck.params {
            let value = Tensor2::from_vec(t.shape[0], t.shape[1], t.data.clone())
                .map_err(|e| NnError::Checkpoint(format!("{name}: {e}")))?;
            if !value.is_finite() {
                return Err(NnError::Checkpoint(format!("{name}: non-finite value")));
            }
            s.insert(name.clone(), value);
        }
        Ok(s)
    }

    /// Parameters under `prefix.` with the prefix stripped.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        let mut s = ParamStore::new();
        let pre = format!("{prefix}.");
        for (name, p) in &self.params {
            if let Some(rest) = name.strip_prefix(&pre) {
                s.insert(rest.to_string(), p.value.clone());
            }
        }
        s
    }

    /// Insert all of `other`'s values under `prefix.`.
    pub fn absorb(&mut self, prefix: &str, other: &ParamStore) {
        for (name, p) in &other.params {
            self.insert(format!("{prefix}.{name}"), p.value.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointTensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// `{version:1, params:{name:{shape:[r,c], data:[...]}}}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: BTreeMap<String, CheckpointTensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update from the stored gradients. Nothing is
/// modified if any gradient is non-finite.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<(), NnError> {
    for (name, p) in &store.params {
        if !p.grad.is_finite() {
            return Err(NnError::NonFinite {
                op: "adam_step",
                what: format!("gradient of '{name}'"),
            });
        }
    }
    store.step += 1;
    let t = store.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for p in store.params.values_mut() {
        let n = p.value.data().len();
        for i in 0..n {
            let g = p.grad.data()[i];
            let m = cfg.beta1 * p.m.data()[i] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * p.v.data()[i] + (1.0 - cfg.beta2) * g * g;
            p.m.data_mut()[i] = m;
            p.v.data_mut()[i] = v;
            let mhat = m / c1;
            let vhat = v / c2;
            p.value.data_mut()[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst: Option<(String, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates to sample; every coordinate is checked when the store is smaller.
    pub samples: usize,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 compare on an absolute scale.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tol: 1e-4,
            samples: 100,
            floor: 1e-8,
            seed: 0,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare the analytic gradients held in `store` against central
/// differences of `f` on a seeded sample of coordinates.
pub fn finite_diff_gradcheck<F>(mut f: F, store: &ParamStore, cfg: &GradCheckConfig) -> CheckReport
where
    F: FnMut(&ParamStore) -> f64,
{
    let coords: Vec<(String, usize)> = store
        .params
        .iter()
        .flat_map(|(name, p)| (0..p.value.data().len()).map(move |i| (name.clone(), i)))
        .collect();
    let chosen: Vec<usize> = if coords.len() <= cfg.samples {
        (0..coords.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, coords.len(), cfg.samples).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut probe = store.clone();
    let mut max_rel = 0.0f64;
    let mut worst = None;
    for &ci in &chosen {
        let (name, i) = &coords[ci];
        let analytic = store.params[name].grad.data()[*i];
        let orig = store.params[name].value.data()[*i];
        probe.params.get_mut(name).unwrap().value.data_mut()[*i] = orig + cfg.eps;
        let fp = f(&probe);
        probe.params.get_mut(name).unwrap().value.data_mut()[*i] = orig - cfg.eps;
        let fm = f(&probe);
        probe.params.get_mut(name).unwrap().value.data_mut()[*i] = orig;
        let numeric = (fp - fm) / (2.0 * cfg.eps);
        let mut rel = relative_error(analytic, numeric, cfg.floor);
        if rel.is_nan() {
            rel = f64::INFINITY;
        }
        if worst.is_none() || rel > max_rel {
            max_rel = rel;
            worst = Some((name.clone(), *i));
        }
    }
    CheckReport {
        checked: chosen.len(),
        max_rel_error: max_rel,
        worst,
        tolerance: cfg.tol,
        passed: max_rel < cfg.tol,
    }
}

/// Seeded generator used across the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
