//! Contrastive pretraining on (original, augmented) pairs and a frozen-encoder
//! linear probe.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{AugmentError, AugmentMode, Augmenter};
use crate::chem::MolecularGraph;
use crate::encoder::{init_node_features, EncGraph, Encoder, EncoderConfig, EncoderError, FeatureSpec};
use crate::kge::EmbeddingTable;
use crate::nn::{
    adam_step, mat_vec_t_acc, outer_acc, rng_from_seed, vec_mat, AdamConfig, CheckpointTensor, NnError, ParamStore,
    Tensor2,
};

#[derive(Debug, Error)]
pub enum SslError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot normalize a zero-norm projection")]
    ZeroNorm,
    #[error("need at least 2 pairs per batch, got {0}")]
    BatchTooSmall(usize),
    #[error("batch size {batch} exceeds dataset size {len}")]
    BatchLargerThanDataset { batch: usize, len: usize },
    #[error("probe needs at least two classes, found {0}")]
    SingleClass(usize),
    #[error("probe needs {need} labeled molecules, got {got}")]
    TooFewExamples { need: usize, got: usize },
    #[error("model checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

// ---------------------------------------------------------------- head

pub const HEAD_PREFIX: &str = "head";

/// Two-layer projection head `relu(g W1 + b1) W2 + b2`, then L2 normalization.
pub fn init_head(input: usize, output: usize, seed: u64) -> ParamStore {
    let mut rng = rng_from_seed(seed);
    let mut s = ParamStore::new();
    s.insert("head.w1", Tensor2::xavier(input, input, &mut rng));
    s.insert("head.b1", Tensor2::zeros(1, input));
    s.insert("head.w2", Tensor2::xavier(input, output, &mut rng));
    s.insert("head.b2", Tensor2::zeros(1, output));
    s
}

/// Head with identity weights and zero biases.
pub fn identity_head(dim: usize) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("head.w1", Tensor2::identity(dim));
    s.insert("head.b1", Tensor2::zeros(1, dim));
    s.insert("head.w2", Tensor2::identity(dim));
    s.insert("head.b2", Tensor2::zeros(1, dim));
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub z: Vec<f64>,
    input: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    norm: f64,
}

pub fn project(graph_vector: &[f64], head: &ParamStore) -> Result<Projection, SslError> {
    let w1 = head.value("head.w1")?;
    let w2 = head.value("head.w2")?;
    let mut pre = vec![0.0; w1.cols()];
    vec_mat(graph_vector, w1, &mut pre);
    for (a, b) in pre.iter_mut().zip(head.value("head.b1")?.data()) {
        *a += b;
    }
    let hidden: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
    let mut p = vec![0.0; w2.cols()];
    vec_mat(&hidden, w2, &mut p);
    for (a, b) in p.iter_mut().zip(head.value("head.b2")?.data()) {
        *a += b;
    }
    let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return Err(SslError::ZeroNorm);
    }
    Ok(Projection {
        z: p.iter().map(|x| x / norm).collect(),
        input: graph_vector.to_vec(),
        pre,
        hidden,
        norm,
    })
}

/// Accumulate head gradients; returns `d loss / d graph_vector`.
pub fn project_backward(head: &mut ParamStore, proj: &Projection, dz: &[f64]) -> Result<Vec<f64>, SslError> {
    let zdz: f64 = proj.z.iter().zip(dz).map(|(a, b)| a * b).sum();
    let dp: Vec<f64> = proj
        .z
        .iter()
        .zip(dz)
        .map(|(z, d)| (d - z * zdz) / proj.norm)
        .collect();
    let mut dh = vec![0.0; proj.hidden.len()];
    mat_vec_t_acc(head.value("head.w2")?, &dp, &mut dh);
    let da: Vec<f64> = dh
        .iter()
        .zip(&proj.pre)
        .map(|(d, a)| if *a > 0.0 { *d } else { 0.0 })
        .collect();
    let mut dg = vec![0.0; proj.input.len()];
    mat_vec_t_acc(head.value("head.w1")?, &da, &mut dg);
    outer_acc(head.grad_mut("head.w2")?, &proj.hidden, &dp);
    add_into(head.grad_mut("head.b2")?.data_mut(), &dp);
    outer_acc(head.grad_mut("head.w1")?, &proj.input, &da);
    add_into(head.grad_mut("head.b1")?.data_mut(), &da);
    Ok(dg)
}

fn add_into(out: &mut [f64], x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += v;
    }
}

// ---------------------------------------------------------------- loss

/// NT-Xent over `2N` vectors where `i` and `i + N` are positives. Cosine
/// similarity is taken on the raw inputs, so they need not be unit length.
/// Returns the mean loss over all `2N` anchors and its gradient.
pub fn ntxent_loss(z: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>), SslError> {
    if !(tau > 0.0) {
        return Err(SslError::InvalidConfig(format!("temperature must be > 0, got {tau}")));
    }
    if z.len() < 4 || z.len() % 2 != 0 {
        return Err(SslError::BatchTooSmall(z.len() / 2));
    }
    let m = z.len();
    let half = m / 2;
    let pair = |i: usize| (i + half) % m;
    let norms: Vec<f64> = z.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    if norms.iter().any(|n| !(*n > 1e-12)) {
        return Err(SslError::ZeroNorm);
    }
    let u: Vec<Vec<f64>> = z.iter().zip(&norms).map(|(v, n)| v.iter().map(|x| x / n).collect()).collect();
    let mut sim = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            sim[i][j] = u[i].iter().zip(&u[j]).map(|(a, b)| a * b).sum::<f64>() / tau;
        }
    }
    // a[i][k] = d loss / d sim[i][k], sim already scaled by 1/tau
    let mut a = vec![vec![0.0; m]; m];
    let mut loss = 0.0;
    for i in 0..m {
        let mx = (0..m).filter(|&k| k != i).map(|k| sim[i][k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..m).filter(|&k| k != i).map(|k| (sim[i][k] - mx).exp()).sum();
        loss += -(sim[i][pair(i)] - mx) + denom.ln();
        for k in (0..m).filter(|&k| k != i) {
            a[i][k] = (sim[i][k] - mx).exp() / denom;
        }
        a[i][pair(i)] -= 1.0;
    }
    let scale = 1.0 / (m as f64 * tau);
    let mut grads = vec![vec![0.0; z[0].len()]; m];
    for i in 0..m {
        let mut du = vec![0.0; z[i].len()];
        for k in 0..m {
            let c = (a[i][k] + a[k][i]) * scale;
            if c != 0.0 {
                for (d, x) in du.iter_mut().zip(&u[k]) {
                    *d += c * x;
                }
            }
        }
        let ud: f64 = u[i].iter().zip(&du).map(|(a, b)| a * b).sum();
        grads[i] = du.iter().zip(&u[i]).map(|(d, x)| (d - x * ud) / norms[i]).collect();
    }
    Ok((loss / m as f64, grads))
}

// ---------------------------------------------------------------- models

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub projection_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub mode: AugmentMode,
    #[serde(default)]
    pub compose: bool,
    #[serde(default)]
    pub dup_properties: bool,
    pub encoder: EncoderConfig,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            temperature: 0.5,
            batch_size: 8,
            projection_dim: 32,
            epochs: 30,
            learning_rate: 1e-3,
            seed: 0,
            mode: AugmentMode::ElementKg,
            compose: false,
            dup_properties: false,
            encoder: EncoderConfig::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<(), SslError> {
        let bad = |m: &str| Err(SslError::InvalidConfig(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if self.projection_dim == 0 || self.encoder.hidden == 0 || self.encoder.layers == 0 {
            return bad("dimensions and layer count must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub ssl: SslConfig,
    pub features: FeatureSpec,
    pub plain: Encoder,
    pub kmpnn: Encoder,
}

/// Both encoders and the shared head, parameters under `plain.`, `kmpnn.`, `head.`.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub config: ModelConfig,
    pub params: ParamStore,
}

/// `{version, params, config}`; `params` has the same layout as a plain parameter checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub params: BTreeMap<String, CheckpointTensor>,
    pub config: ModelConfig,
}

impl Models {
    pub fn init(cfg: &SslConfig, features: FeatureSpec) -> Models {
        let plain = Encoder::plain(&cfg.encoder);
        let kmpnn = Encoder::kmpnn(&cfg.encoder, &features, cfg.mode, cfg.compose);
        let mut params = ParamStore::new();
        params.absorb("plain", &plain.init_params(cfg.seed).subset("plain"));
        params.absorb("kmpnn", &kmpnn.init_params(cfg.seed.wrapping_add(1)).subset("kmpnn"));
        params.absorb(
            HEAD_PREFIX,
            &init_head(cfg.encoder.hidden, cfg.projection_dim, cfg.seed.wrapping_add(2)).subset(HEAD_PREFIX),
        );
        Models {
            config: ModelConfig {
                ssl: cfg.clone(),
                features,
                plain,
                kmpnn,
            },
            params,
        }
    }

    /// Checksum over both encoders (the head is excluded).
    pub fn encoder_checksum(&self) -> String {
        let mut s = ParamStore::new();
        s.absorb("plain", &self.params.subset("plain"));
        s.absorb("kmpnn", &self.params.subset("kmpnn"));
        s.checksum()
    }

    pub fn encode_original(&self, g: &MolecularGraph) -> Result<Vec<f64>, SslError> {
        Ok(self.config.plain.forward(&self.params, &EncGraph::from_molecule(g))?.graph_vector)
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        ModelCheckpoint {
            version: 1,
            params: self.params.to_checkpoint().params,
            config: self.config.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Models, SslError> {
        let ck: ModelCheckpoint = serde_json::from_str(text).map_err(|e| SslError::Checkpoint(e.to_string()))?;
        if ck.version != 1 {
            return Err(SslError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let params = ParamStore::from_checkpoint(&crate::nn::Checkpoint {
            version: 1,
            params: ck.params,
        })?;
        let fresh = Models::init(&ck.config.ssl, ck.config.features.clone());
        for name in fresh.params.names() {
            let want = fresh.params.value(name)?.shape();
            let got = params
                .value(name)
                .map_err(|_| SslError::Checkpoint(format!("missing parameter {name}")))?
                .shape();
            if want != got {
                return Err(SslError::Checkpoint(format!("{name}: shape {got:?}, expected {want:?}")));
            }
        }
        Ok(Models {
            config: ck.config,
            params,
        })
    }
}

// ---------------------------------------------------------------- pretraining

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainLog {
    pub epochs: Vec<EpochLog>,
}

impl PretrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss,wall_ms\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.mean_loss, e.wall_ms));
        }
        s
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Augmentation context: KG, pattern library and optional KGE vectors for
/// property and relation features.
#[derive(Debug, Clone)]
pub struct PretrainContext {
    pub augmenter: Augmenter,
    pub embeddings: Option<EmbeddingTable>,
}

impl PretrainContext {
    pub fn feature_spec(&self, seed: u64) -> FeatureSpec {
        FeatureSpec::new(self.embeddings.as_ref(), self.augmenter.library.vocabulary(), seed)
    }

    /// The (original, augmented) encoder inputs for one molecule.
    pub fn views(&self, g: &MolecularGraph, spec: &FeatureSpec) -> Result<(EncGraph, EncGraph), SslError> {
        let hg = self.augmenter.augment(g)?;
        let feats = init_node_features(&hg, self.embeddings.as_ref(), spec)?;
        Ok((EncGraph::from_molecule(g), EncGraph::from_hetero(&hg, &feats)))
    }
}

pub fn pretrain(
    dataset: &[MolecularGraph],
    ctx: &PretrainContext,
    cfg: &SslConfig,
) -> Result<(Models, PretrainLog), SslError> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(SslError::TooFewExamples {
            need: 2,
            got: dataset.len(),
        });
    }
    if cfg.batch_size > dataset.len() {
        return Err(SslError::BatchLargerThanDataset {
            batch: cfg.batch_size,
            len: dataset.len(),
        });
    }
    let mut ctx = ctx.clone();
    ctx.augmenter.mode = cfg.mode;
    ctx.augmenter.compose = cfg.compose;
    ctx.augmenter.dup_properties = cfg.dup_properties;
    let spec = ctx.feature_spec(cfg.seed);
    let mut models = Models::init(cfg, spec.clone());
    let views: Vec<(EncGraph, EncGraph)> = dataset.iter().map(|g| ctx.views(g, &spec)).collect::<Result<_, _>>()?;
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut rng = rng_from_seed(cfg.seed ^ 0x5151_5151);
    let mut log = PretrainLog::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut losses = Vec::new();
        for batch in order.chunks(cfg.batch_size).filter(|b| b.len() >= 2) {
            losses.push(train_step(&mut models, &views, batch, &adam)?);
        }
        log.epochs.push(EpochLog {
            epoch,
            mean_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            wall_ms: start.elapsed().as_millis(),
        });
    }
    Ok((models, log))
}

fn train_step(models: &mut Models, views: &[(EncGraph, EncGraph)], batch: &[usize], adam: &AdamConfig) -> Result<f64, SslError> {
    let cfg = &models.config;
    let n = batch.len();
    let mut fwd = Vec::with_capacity(2 * n);
    for side in 0..2 {
        for &i in batch {
            let (enc, g) = if side == 0 { (&cfg.plain, &views[i].0) } else { (&cfg.kmpnn, &views[i].1) };
            fwd.push(enc.forward(&models.params, g)?);
        }
    }
    let projs: Vec<Projection> = fwd
        .iter()
        .map(|f| project(&f.graph_vector, &models.params))
        .collect::<Result<_, _>>()?;
    let z: Vec<Vec<f64>> = projs.iter().map(|p| p.z.clone()).collect();
    let (loss, dz) = ntxent_loss(&z, cfg.ssl.temperature)?;
    let (plain, kmpnn) = (cfg.plain.clone(), cfg.kmpnn.clone());
    models.params.zero_grads();
    for (k, (proj, dzk)) in projs.iter().zip(&dz).enumerate() {
        let dg = project_backward(&mut models.params, proj, dzk)?;
        let i = batch[k % n];
        if k < n {
            plain.backward(&mut models.params, &views[i].0, &fwd[k], &dg)?;
        } else {
            kmpnn.backward(&mut models.params, &views[i].1, &fwd[k], &dg)?;
        }
    }
    adam_step(&mut models.params, adam)?;
    Ok(loss)
}

// ---------------------------------------------------------------- probe

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_fraction: 0.8,
            epochs: 500,
            learning_rate: 0.5,
            l2: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeMetrics {
    pub accuracy: f64,
    /// Held-out accuracy per class label.
    pub per_class: BTreeMap<String, f64>,
    pub train_size: usize,
    pub test_size: usize,
    pub checksum_before: String,
    pub checksum_after: String,
}

/// Seeded split keeping each class's train share near `fraction`; every class
/// with two or more members lands on both sides.
pub fn stratified_split(labels: &[String], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = rng_from_seed(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_class {
        idx.shuffle(&mut rng);
        let k = idx.len();
        let mut t = (k as f64 * fraction).round() as usize;
        if k >= 2 {
            t = t.clamp(1, k - 1);
        }
        train.extend_from_slice(&idx[..t.min(k)]);
        test.extend_from_slice(&idx[t.min(k)..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Multinomial logistic regression on standardized features; returns held-out
/// accuracy and per-class accuracy. Checksums are left empty.
pub fn probe_features(features: &[Vec<f64>], labels: &[String], cfg: &ProbeConfig) -> Result<ProbeMetrics, SslError> {
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(SslError::SingleClass(classes.len()));
    }
    if features.len() != labels.len() || features.len() < 4 {
        return Err(SslError::TooFewExamples {
            need: 4,
            got: features.len().min(labels.len()),
        });
    }
    let y: Vec<usize> = labels.iter().map(|l| classes.iter().position(|c| c == l).unwrap()).collect();
    let (train, test) = stratified_split(labels, cfg.train_fraction, cfg.seed);
    let d = features[0].len();
    let k = classes.len();
    let mut mean = vec![0.0; d];
    for &i in &train {
        add_into(&mut mean, &features[i]);
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut std = vec![0.0; d];
    for &i in &train {
        for j in 0..d {
            std[j] += (features[i][j] - mean[j]).powi(2);
        }
    }
    let std: Vec<f64> = std.iter().map(|s| (s / train.len() as f64).sqrt().max(1e-8)).collect();
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|f| (0..d).map(|j| (f[j] - mean[j]) / std[j]).collect())
        .collect();

    let mut w = vec![vec![0.0; k]; d];
    let mut b = vec![0.0; k];
    let softmax = |w: &[Vec<f64>], b: &[f64], xi: &[f64]| -> Vec<f64> {
        let logits: Vec<f64> = (0..k).map(|c| b[c] + (0..d).map(|j| xi[j] * w[j][c]).sum::<f64>()).collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    };
    let inv = 1.0 / train.len() as f64;
    for _ in 0..cfg.epochs {
        let mut gw = vec![vec![0.0; k]; d];
        let mut gb = vec![0.0; k];
        for &i in &train {
            let p = softmax(&w, &b, &x[i]);
            for c in 0..k {
                let g = (p[c] - if y[i] == c { 1.0 } else { 0.0 }) * inv;
                gb[c] += g;
                for j in 0..d {
                    gw[j][c] += g * x[i][j];
                }
            }
        }
        for j in 0..d {
            for c in 0..k {
                w[j][c] -= cfg.learning_rate * (gw[j][c] + cfg.l2 * w[j][c]);
            }
        }
        for c in 0..k {
            b[c] -= cfg.learning_rate * gb[c];
        }
    }
    let predict = |i: usize| {
        let p = softmax(&w, &b, &x[i]);
        (0..k).max_by(|&a, &c| p[a].total_cmp(&p[c])).unwrap()
    };
    let mut per_class_hits = vec![(0usize, 0usize); k];
    for &i in &test {
        per_class_hits[y[i]].1 += 1;
        if predict(i) == y[i] {
            per_class_hits[y[i]].0 += 1;
        }
    }
    let hits: usize = per_class_hits.iter().map(|h| h.0).sum();
    let per_class = classes
        .iter()
        .zip(&per_class_hits)
        .filter(|(_, h)| h.1 > 0)
        .map(|(c, h)| (c.clone(), h.0 as f64 / h.1 as f64))
        .collect();
    Ok(ProbeMetrics {
        accuracy: if test.is_empty() { 0.0 } else { hits as f64 / test.len() as f64 },
        per_class,
        train_size: train.len(),
        test_size: test.len(),
        checksum_before: String::new(),
        checksum_after: String::new(),
    })
}

/// Probe on plain-encoder graph vectors of the original molecules; the
/// encoders are only read.
pub fn linear_probe(models: &Models, data: &[(MolecularGraph, String)], cfg: &ProbeConfig) -> Result<ProbeMetrics, SslError> {
    let before = models.encoder_checksum();
    let classes: BTreeSet<&String> = data.iter().map(|(_, l)| l).collect();
    if classes.len() < 2 {
        return Err(SslError::SingleClass(classes.len()));
    }
    let feats: Vec<Vec<f64>> = data
        .iter()
        .map(|(g, _)| models.encode_original(g))
        .collect::<Result<_, _>>()?;
    let labels: Vec<String> = data.iter().map(|(_, l)| l.clone()).collect();
    let mut m = probe_features(&feats, &labels, cfg)?;
    m.checksum_before = before;
    m.checksum_after = models.encoder_checksum();
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_gradcheck, relative_error, GradCheckConfig};
    use rand::Rng;

    #[test]
    fn identical_batch_closed_form() {
        for n in [2usize, 8, 32] {
            let z = vec![vec![0.6, 0.8]; 2 * n];
            let (l, _) = ntxent_loss(&z, 0.5).unwrap();
            assert!((l - ((2 * n - 1) as f64).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn orthogonal_negatives() {
        let z = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let (l, _) = ntxent_loss(&z, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((l + (e / (e + 2.0)).ln()).abs() < 1e-12);
    }

    #[test]
    fn ntxent_gradients() {
        let mut rng = rng_from_seed(11);
        let z: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let (_, g) = ntxent_loss(&z, 0.5).unwrap();
        let eps = 1e-6;
        for i in 0..6 {
            for j in 0..5 {
                let mut zp = z.clone();
                zp[i][j] += eps;
                let mut zm = z.clone();
                zm[i][j] -= eps;
                let num = (ntxent_loss(&zp, 0.5).unwrap().0 - ntxent_loss(&zm, 0.5).unwrap().0) / (2.0 * eps);
                assert!(relative_error(g[i][j], num, 1e-8) < 1e-4, "{i},{j}: {} vs {num}", g[i][j]);
            }
        }
    }

    #[test]
    fn ntxent_errors() {
        assert!(ntxent_loss(&vec![vec![1.0]; 4], 0.0).is_err());
        assert!(matches!(ntxent_loss(&vec![vec![1.0]; 2], 1.0), Err(SslError::BatchTooSmall(1))));
    }

    #[test]
    fn projection_unit_norm() {
        let head = init_head(4, 3, 1);
        let p = project(&[0.3, -1.0, 2.0, 0.5], &head).unwrap();
        let n: f64 = p.z.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        let id = identity_head(3);
        let v = [0.6, 0.0, 0.8];
        assert_eq!(project(&v, &id).unwrap().z, v.to_vec());
        assert!(matches!(project(&[-1.0, -1.0, 0.0], &id), Err(SslError::ZeroNorm)));
    }

    #[test]
    fn head_gradients() {
        let mut head = init_head(5, 4, 3);
        let x = [0.4, -0.2, 0.9, 0.1, -0.7];
        let w = [0.5, -1.0, 0.25, 2.0];
        let p = project(&x, &head).unwrap();
        project_backward(&mut head, &p, &w).unwrap();
        let f = |s: &ParamStore| project(&x, s).unwrap().z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let rep = finite_diff_gradcheck(f, &head, &GradCheckConfig::default());
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<String> = (0..20).map(|i| if i < 10 { "a" } else { "b" }.to_string()).collect();
        let (tr, te) = stratified_split(&labels, 0.8, 4);
        assert_eq!((tr.len(), te.len()), (16, 4));
        assert_eq!(te.iter().filter(|&&i| i < 10).count(), 2);
    }

    #[test]
    fn probe_separable_and_single_class() {
        let feats: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { -1.0 } else { 1.0 } + 0.01 * i as f64, 0.5]).collect();
        let labels: Vec<String> = (0..20).map(|i| if i < 10 { "a" } else { "b" }.to_string()).collect();
        let m = probe_features(&feats, &labels, &ProbeConfig::default()).unwrap();
        assert_eq!(m.accuracy, 1.0);
        let same = vec!["a".to_string(); 20];
        assert!(matches!(probe_features(&feats, &same, &ProbeConfig::default()), Err(SslError::SingleClass(1))));
    }
}
