//! Knowledge-graph embeddings: TransE, RotatE and DistMult scorers trained
//! with a margin ranking loss and plain SGD, plus filtered link-prediction
//! metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{KnowledgeGraph, KnowledgeTriple};
use crate::nn::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeModel {
    TransE,
    RotatE,
    DistMult,
}

impl KgeModel {
    pub fn name(self) -> &'static str {
        match self {
            KgeModel::TransE => "transe",
            KgeModel::RotatE => "rotate",
            KgeModel::DistMult => "distmult",
        }
    }

    pub fn from_name(s: &str) -> Option<KgeModel> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Some(KgeModel::TransE),
            "rotate" | "rotatee" => Some(KgeModel::RotatE),
            "distmult" => Some(KgeModel::DistMult),
            _ => None,
        }
    }

    /// Stored entity vector length for embedding dimension `dim`.
    pub fn entity_len(self, dim: usize) -> usize {
        match self {
            KgeModel::RotatE => 2 * dim,
            _ => dim,
        }
    }
}

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("knowledge graph is empty")]
    EmptyGraph,
    #[error("knowledge graph needs at least two entities for negative sampling")]
    TooFewEntities,
    #[error("unknown entity '{0}'")]
    UnknownEntity(String),
    #[error("unknown relation '{0}'")]
    UnknownRelation(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgeConfig {
    pub model: KgeModel,
    pub dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub negatives_per_positive: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            model: KgeModel::RotatE,
            dim: 32,
            margin: 6.0,
            learning_rate: 0.01,
            negatives_per_positive: 4,
            steps: 5000,
            seed: 0,
        }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<(), KgeError> {
        if self.dim == 0 {
            return Err(KgeError::InvalidConfig("dim must be positive".into()));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(KgeError::InvalidConfig("margin must be finite and >= 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(KgeError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.negatives_per_positive == 0 {
            return Err(KgeError::InvalidConfig("negatives_per_positive must be >= 1".into()));
        }
        Ok(())
    }
}

/// Entity and relation vectors. RotatE entities store `dim` real parts
/// followed by `dim` imaginary parts; RotatE relations store `dim` phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub model: KgeModel,
    pub dim: usize,
    pub entities: BTreeMap<String, Vec<f64>>,
    pub relations: BTreeMap<String, Vec<f64>>,
}

/// On-disk form: `{version:1, model, dim, entities:{..}, relations:{..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgeCheckpoint {
    pub version: u32,
    pub model: KgeModel,
    pub dim: usize,
    pub entities: BTreeMap<String, Vec<f64>>,
    pub relations: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn entity(&self, name: &str) -> Result<&[f64], KgeError> {
        self.entities
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| KgeError::UnknownEntity(name.to_string()))
    }

    pub fn relation(&self, name: &str) -> Result<&[f64], KgeError> {
        self.relations
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| KgeError::UnknownRelation(name.to_string()))
    }

    pub fn entity_len(&self) -> usize {
        self.model.entity_len(self.dim)
    }

    pub fn relation_len(&self) -> usize {
        self.dim
    }

    /// Largest `| |exp(i theta)| - 1 |` over all RotatE relation components;
    /// zero for the other models.
    pub fn max_rotation_modulus_error(&self) -> f64 {
        if self.model != KgeModel::RotatE {
            return 0.0;
        }
        max_modulus_error(self.relations.values().map(|v| v.as_slice()))
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .values()
            .chain(self.relations.values())
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn to_checkpoint(&self) -> KgeCheckpoint {
        KgeCheckpoint {
            version: 1,
            model: self.model,
            dim: self.dim,
            entities: self.entities.clone(),
            relations: self.relations.clone(),
        }
    }

    pub fn from_checkpoint(ck: KgeCheckpoint) -> Result<EmbeddingTable, KgeError> {
        if ck.version != 1 {
            return Err(KgeError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let t = EmbeddingTable {
            model: ck.model,
            dim: ck.dim,
            entities: ck.entities,
            relations: ck.relations,
        };
        let (el, rl) = (t.entity_len(), t.relation_len());
        if let Some((n, _)) = t.entities.iter().find(|(_, v)| v.len() != el) {
            return Err(KgeError::Checkpoint(format!("entity '{n}' has wrong length")));
        }
        if let Some((n, _)) = t.relations.iter().find(|(_, v)| v.len() != rl) {
            return Err(KgeError::Checkpoint(format!("relation '{n}' has wrong length")));
        }
        if !t.is_finite() {
            return Err(KgeError::Checkpoint("non-finite value".into()));
        }
        Ok(t)
    }
}

fn max_modulus_error<'a>(phases: impl Iterator<Item = &'a [f64]>) -> f64 {
    phases
        .flat_map(|v| v.iter())
        .map(|&th| ((th.cos().powi(2) + th.sin().powi(2)).sqrt() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Plausibility score (higher is better) from raw vectors.
pub fn score_vectors(model: KgeModel, h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    match model {
        KgeModel::TransE => -h
            .iter()
            .zip(r)
            .zip(t)
            .map(|((h, r), t)| (h + r - t).powi(2))
            .sum::<f64>()
            .sqrt(),
        KgeModel::RotatE => {
            let d = r.len();
            let mut s = 0.0;
            for i in 0..d {
                let (c, sn) = (r[i].cos(), r[i].sin());
                let dre = h[i] * c - h[d + i] * sn - t[i];
                let dim = h[i] * sn + h[d + i] * c - t[d + i];
                s += (dre * dre + dim * dim).sqrt();
            }
            -s
        }
        KgeModel::DistMult => h.iter().zip(r).zip(t).map(|((h, r), t)| h * r * t).sum(),
    }
}

/// Score and its gradients with respect to `h`, `r`, `t`, accumulated
/// (scaled by `w`) into the given buffers.
#[allow(clippy::too_many_arguments)]
pub fn score_and_grad(
    model: KgeModel,
    h: &[f64],
    r: &[f64],
    t: &[f64],
    w: f64,
    dh: &mut [f64],
    dr: &mut [f64],
    dt: &mut [f64],
) -> f64 {
    match model {
        KgeModel::TransE => {
            let diff: Vec<f64> = h.iter().zip(r).zip(t).map(|((h, r), t)| h + r - t).collect();
            let n = diff.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                for i in 0..diff.len() {
                    let g = -diff[i] / n * w;
                    dh[i] += g;
                    dr[i] += g;
                    dt[i] -= g;
                }
            }
            -n
        }
        KgeModel::RotatE => {
            let d = r.len();
            let mut s = 0.0;
            for i in 0..d {
                let (c, sn) = (r[i].cos(), r[i].sin());
                let (hre, him) = (h[i], h[d + i]);
                let dre = hre * c - him * sn - t[i];
                let dim = hre * sn + him * c - t[d + i];
                let m = (dre * dre + dim * dim).sqrt();
                s += m;
                if m == 0.0 {
                    continue;
                }
                // d(-m)/d(dre), d(-m)/d(dim)
                let gre = -dre / m * w;
                let gim = -dim / m * w;
                dh[i] += gre * c + gim * sn;
                dh[d + i] += -gre * sn + gim * c;
                dt[i] -= gre;
                dt[d + i] -= gim;
                dr[i] += gre * (-hre * sn - him * c) + gim * (hre * c - him * sn);
            }
            -s
        }
        KgeModel::DistMult => {
            let mut s = 0.0;
            for i in 0..r.len() {
                s += h[i] * r[i] * t[i];
                dh[i] += r[i] * t[i] * w;
                dr[i] += h[i] * t[i] * w;
                dt[i] += h[i] * r[i] * w;
            }
            s
        }
    }
}

pub fn score_triple(model: KgeModel, emb: &EmbeddingTable, t: &KnowledgeTriple) -> Result<f64, KgeError> {
    let h = emb.entity(&t.head)?;
    let r = emb.relation(&t.relation)?;
    let tl = emb.entity(&t.tail)?;
    Ok(score_vectors(model, h, r, tl))
}

/// `max(0, margin - pos + neg)`.
pub fn margin_loss(pos: f64, neg: f64, margin: f64) -> f64 {
    (margin - pos + neg).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativeSample {
    pub triple: KnowledgeTriple,
    /// Which side was replaced.
    pub corrupted_head: bool,
    /// False when the resampling bound was hit and the returned triple is a known positive.
    pub is_negative: bool,
}

pub const NEGATIVE_RESAMPLE_LIMIT: usize = 100;

/// Replace the head or tail (fair coin) by a uniformly drawn entity,
/// resampling until the corruption is not a known triple.
pub fn sample_negative<R: Rng>(kg: &KnowledgeGraph, t: &KnowledgeTriple, rng: &mut R) -> NegativeSample {
    let ents = kg.entities();
    let mut last = None;
    for _ in 0..NEGATIVE_RESAMPLE_LIMIT {
        let corrupted_head = rng.gen_bool(0.5);
        let e = &ents[rng.gen_range(0..ents.len())];
        let triple = if corrupted_head {
            KnowledgeTriple::new(e.clone(), t.relation.clone(), t.tail.clone())
        } else {
            KnowledgeTriple::new(t.head.clone(), t.relation.clone(), e.clone())
        };
        if !kg.contains(&triple) {
            return NegativeSample {
                triple,
                corrupted_head,
                is_negative: true,
            };
        }
        last = Some((triple, corrupted_head));
    }
    let (triple, corrupted_head) = last.expect("resample limit is positive");
    NegativeSample {
        triple,
        corrupted_head,
        is_negative: false,
    }
}

/// Seeded initial table: entity reals ~ U(-6/sqrt(dim), 6/sqrt(dim)); RotatE
/// phases ~ U(0, 2 pi).
pub fn init_embeddings(kg: &KnowledgeGraph, cfg: &KgeConfig) -> Result<EmbeddingTable, KgeError> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let bound = 6.0 / (cfg.dim as f64).sqrt();
    let elen = cfg.model.entity_len(cfg.dim);
    let entities = kg
        .entities()
        .iter()
        .map(|e| (e.clone(), (0..elen).map(|_| rng.gen_range(-bound..bound)).collect()))
        .collect();
    let relations = kg
        .relations()
        .iter()
        .map(|r| {
            let v = (0..cfg.dim)
                .map(|_| match cfg.model {
                    KgeModel::RotatE => rng.gen_range(0.0..2.0 * PI),
                    _ => rng.gen_range(-bound..bound),
                })
                .collect();
            (r.clone(), v)
        })
        .collect();
    Ok(EmbeddingTable {
        model: cfg.model,
        dim: cfg.dim,
        entities,
        relations,
    })
}

/// State handed to a training observer after every step.
pub struct TrainingView<'a> {
    pub step: usize,
    /// Mean margin loss over the step's negatives.
    pub loss: f64,
    model: KgeModel,
    relations: &'a [Vec<f64>],
    entities: &'a [Vec<f64>],
}

impl TrainingView<'_> {
    pub fn max_rotation_modulus_error(&self) -> f64 {
        if self.model != KgeModel::RotatE {
            return 0.0;
        }
        max_modulus_error(self.relations.iter().map(|v| v.as_slice()))
    }

    pub fn all_finite(&self) -> bool {
        self.entities
            .iter()
            .chain(self.relations)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Train with margin ranking loss and SGD. One step processes one positive
/// triple (epoch order reshuffled with the seed) against
/// `negatives_per_positive` corruptions. TransE entity vectors are projected
/// back to unit norm at the start of each epoch.
pub fn train_embeddings(kg: &KnowledgeGraph, cfg: &KgeConfig) -> Result<EmbeddingTable, KgeError> {
    train_embeddings_with(kg, cfg, |_| {}).map(|(t, _)| t)
}

/// [`train_embeddings`] with a per-step observer; also returns the per-step losses.
pub fn train_embeddings_with<F>(
    kg: &KnowledgeGraph,
    cfg: &KgeConfig,
    mut observer: F,
) -> Result<(EmbeddingTable, Vec<f64>), KgeError>
where
    F: FnMut(&TrainingView<'_>),
{
    cfg.validate()?;
    if kg.is_empty() {
        return Err(KgeError::EmptyGraph);
    }
    if kg.entities().len() < 2 {
        return Err(KgeError::TooFewEntities);
    }
    let init = init_embeddings(kg, cfg)?;
    if cfg.steps == 0 {
        return Ok((init, Vec::new()));
    }
    let mut ents: Vec<Vec<f64>> = kg.entities().iter().map(|e| init.entities[e].clone()).collect();
    let mut rels: Vec<Vec<f64>> = kg.relations().iter().map(|r| init.relations[r].clone()).collect();
    let triples: Vec<&KnowledgeTriple> = kg.triples().collect();
    let index = |t: &KnowledgeTriple| {
        (
            kg.entity_id(&t.head).unwrap(),
            kg.relation_id(&t.relation).unwrap(),
            kg.entity_id(&t.tail).unwrap(),
        )
    };
    // training stream is independent of the init stream
    let mut rng = rng_from_seed(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut cursor = order.len();
    let elen = cfg.model.entity_len(cfg.dim);
    let mut losses = Vec::with_capacity(cfg.steps);
    let scale = 1.0 / cfg.negatives_per_positive as f64;

    for step in 0..cfg.steps {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
            if cfg.model == KgeModel::TransE {
                ents.iter_mut().for_each(|v| normalize(v));
            }
        }
        let pos = triples[order[cursor]];
        cursor += 1;
        let (ph, pr, pt) = index(pos);

        let mut grads: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        let mut rel_grad = vec![0.0; cfg.dim];
        let mut loss = 0.0;
        for _ in 0..cfg.negatives_per_positive {
            let neg = sample_negative(kg, pos, &mut rng);
            let (nh, _, nt) = index(&neg.triple);
            let pos_score = score_vectors(cfg.model, &ents[ph], &rels[pr], &ents[pt]);
            let neg_score = score_vectors(cfg.model, &ents[nh], &rels[pr], &ents[nt]);
            let l = margin_loss(pos_score, neg_score, cfg.margin);
            loss += l * scale;
            if l <= 0.0 {
                continue;
            }
            // d loss = -d pos + d neg
            for (sign, h, t) in [(-scale, ph, pt), (scale, nh, nt)] {
                let mut dh = vec![0.0; elen];
                let mut dt = vec![0.0; elen];
                score_and_grad(cfg.model, &ents[h], &rels[pr], &ents[t], sign, &mut dh, &mut rel_grad, &mut dt);
                for (id, g) in [(h, dh), (t, dt)] {
                    let acc = grads.entry(id).or_insert_with(|| vec![0.0; elen]);
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
        }
        for (id, g) in grads {
            for (v, gi) in ents[id].iter_mut().zip(g) {
                *v -= cfg.learning_rate * gi;
            }
        }
        for (v, gi) in rels[pr].iter_mut().zip(&rel_grad) {
            *v -= cfg.learning_rate * gi;
        }
        if cfg.model == KgeModel::RotatE {
            rels[pr].iter_mut().for_each(|th| *th = th.rem_euclid(2.0 * PI));
        }
        losses.push(loss);
        observer(&TrainingView {
            step,
            loss,
            model: cfg.model,
            relations: &rels,
            entities: &ents,
        });
    }

    let table = EmbeddingTable {
        model: cfg.model,
        dim: cfg.dim,
        entities: kg.entities().iter().cloned().zip(ents).collect(),
        relations: kg.relations().iter().cloned().zip(rels).collect(),
    };
    if !table.is_finite() {
        return Err(KgeError::InvalidConfig(
            "training diverged to non-finite values; lower the learning rate".into(),
        ));
    }
    Ok((table, losses))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    /// Number of ranking queries (two per test triple).
    pub queries: usize,
}

/// Filtered ranking of every test triple's tail and head among all
/// `candidates`, using an arbitrary scorer. Known true triples are excluded
/// from the corruption set; ties count against the true entity.
pub fn rank_metrics<F>(
    test: &[KnowledgeTriple],
    known: &BTreeSet<KnowledgeTriple>,
    candidates: &[String],
    mut score: F,
) -> Result<LinkMetrics, KgeError>
where
    F: FnMut(&str, &str, &str) -> Result<f64, KgeError>,
{
    let mut rr = 0.0;
    let mut hits = [0usize; 3];
    let mut queries = 0;
    for t in test {
        let truth = score(&t.head, &t.relation, &t.tail)?;
        for corrupt_head in [false, true] {
            let mut rank = 1usize;
            for c in candidates {
                let cand = if corrupt_head {
                    KnowledgeTriple::new(c.clone(), t.relation.clone(), t.tail.clone())
                } else {
                    KnowledgeTriple::new(t.head.clone(), t.relation.clone(), c.clone())
                };
                if &cand == t || known.contains(&cand) {
                    continue;
                }
                if score(&cand.head, &cand.relation, &cand.tail)? >= truth {
                    rank += 1;
                }
            }
            rr += 1.0 / rank as f64;
            for (h, k) in hits.iter_mut().zip([1, 3, 10]) {
                if rank <= k {
                    *h += 1;
                }
            }
            queries += 1;
        }
    }
    let q = queries.max(1) as f64;
    Ok(LinkMetrics {
        mrr: rr / q,
        hits_at_1: hits[0] as f64 / q,
        hits_at_3: hits[1] as f64 / q,
        hits_at_10: hits[2] as f64 / q,
        queries,
    })
}

/// Filtered link prediction of `test` triples against every entity in the table,
/// filtering with `known` (which should include the test triples).
pub fn evaluate_filtered(
    test: &[KnowledgeTriple],
    known: &KnowledgeGraph,
    emb: &EmbeddingTable,
    model: KgeModel,
) -> Result<LinkMetrics, KgeError> {
    let known: BTreeSet<KnowledgeTriple> = known.triples().cloned().collect();
    let candidates: Vec<String> = emb.entities.keys().cloned().collect();
    rank_metrics(test, &known, &candidates, |h, r, t| {
        Ok(score_vectors(model, emb.entity(h)?, emb.relation(r)?, emb.entity(t)?))
    })
}

/// Filtered link prediction over every triple of `kg`.
pub fn evaluate_link_prediction(
    kg: &KnowledgeGraph,
    emb: &EmbeddingTable,
    model: KgeModel,
) -> Result<LinkMetrics, KgeError> {
    let test: Vec<KnowledgeTriple> = kg.triples().cloned().collect();
    evaluate_filtered(&test, kg, emb, model)
}

/// A KG generated from a planted translation model: entities are random
/// points, relations random offsets, and the `n_triples` pairs with the
/// smallest residual `|p_head + offset - p_tail|` become triples. Returns
/// `(train, test)`; every entity and relation of `test` also occurs in `train`.
pub fn synthetic_translation_kg(
    n_entities: usize,
    n_relations: usize,
    n_triples: usize,
    held_out: usize,
    seed: u64,
) -> (KnowledgeGraph, Vec<KnowledgeTriple>) {
    const LATENT_DIM: usize = 3;
    let mut rng = rng_from_seed(seed);
    let points: Vec<[f64; LATENT_DIM]> = (0..n_entities)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
        .collect();
    let offsets: Vec<[f64; LATENT_DIM]> = (0..n_relations)
        .map(|_| std::array::from_fn(|_| rng.gen_range(-0.8..0.8)))
        .collect();
    let mut scored = Vec::new();
    for (r, off) in offsets.iter().enumerate() {
        for (h, p) in points.iter().enumerate() {
            for (t, q) in points.iter().enumerate() {
                if t == h {
                    continue;
                }
                let d: f64 = (0..LATENT_DIM).map(|k| (p[k] + off[k] - q[k]).powi(2)).sum();
                scored.push((d, h, r, t));
            }
        }
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let name = |i: usize| format!("e{i:03}");
    let mut all: Vec<KnowledgeTriple> = scored
        .iter()
        .take(n_triples)
        .map(|&(_, h, r, t)| KnowledgeTriple::new(name(h), format!("r{r}"), name(t)))
        .collect();
    all.sort();
    all.shuffle(&mut rng);
    let mut train: Vec<KnowledgeTriple> = all.clone();
    let mut test = Vec::new();
    for t in &all {
        if test.len() == held_out {
            break;
        }
        let remaining: Vec<&KnowledgeTriple> = train.iter().filter(|x| *x != t).collect();
        let covers = |e: &str| remaining.iter().any(|x| x.head == e || x.tail == e);
        if covers(&t.head) && covers(&t.tail) && remaining.iter().any(|x| x.relation == t.relation) {
            train.retain(|x| x != t);
            test.push(t.clone());
        }
    }
    (KnowledgeGraph::from_triples(train), test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_triples;
    use crate::nn::relative_error;

    fn kg(text: &str) -> KnowledgeGraph {
        load_triples(text.as_bytes()).unwrap()
    }

    fn rand_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn transe_exact_translation_scores_zero() {
        let h = [0.1, 0.2, -0.3];
        let r = [0.5, -0.1, 0.2];
        let t: Vec<f64> = h.iter().zip(&r).map(|(a, b)| a + b).collect();
        assert!(score_vectors(KgeModel::TransE, &h, &r, &t).abs() < 1e-15);
    }

    #[test]
    fn rotate_zero_phase_is_distance() {
        let mut rng = rng_from_seed(1);
        let h = rand_vec(&mut rng, 8);
        let t = rand_vec(&mut rng, 8);
        let r = [0.0; 4];
        let expect: f64 = -(0..4)
            .map(|i| ((h[i] - t[i]).powi(2) + (h[4 + i] - t[4 + i]).powi(2)).sqrt())
            .sum::<f64>();
        assert!((score_vectors(KgeModel::RotatE, &h, &r, &t) - expect).abs() < 1e-12);
    }

    #[test]
    fn distmult_is_symmetric() {
        let mut rng = rng_from_seed(2);
        for _ in 0..20 {
            let (h, r, t) = (rand_vec(&mut rng, 6), rand_vec(&mut rng, 6), rand_vec(&mut rng, 6));
            let a = score_vectors(KgeModel::DistMult, &h, &r, &t);
            let b = score_vectors(KgeModel::DistMult, &t, &r, &h);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn scorer_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(3);
        let eps = 1e-4;
        for model in [KgeModel::TransE, KgeModel::RotatE, KgeModel::DistMult] {
            let d = 5;
            let el = model.entity_len(d);
            let mut worst = 0.0f64;
            for _ in 0..100 {
                let h = rand_vec(&mut rng, el);
                let r = rand_vec(&mut rng, d);
                let t = rand_vec(&mut rng, el);
                let (mut dh, mut dr, mut dt) = (vec![0.0; el], vec![0.0; d], vec![0.0; el]);
                score_and_grad(model, &h, &r, &t, 1.0, &mut dh, &mut dr, &mut dt);
                for (which, grad) in [(0, &dh), (1, &dr), (2, &dt)] {
                    for i in 0..grad.len() {
                        let mut v = [h.clone(), r.clone(), t.clone()];
                        v[which][i] += eps;
                        let fp = score_vectors(model, &v[0], &v[1], &v[2]);
                        v[which][i] -= 2.0 * eps;
                        let fm = score_vectors(model, &v[0], &v[1], &v[2]);
                        let num = (fp - fm) / (2.0 * eps);
                        worst = worst.max(relative_error(grad[i], num, 1e-8));
                    }
                }
            }
            assert!(worst < 1e-4, "{model:?}: {worst}");
        }
    }

    #[test]
    fn margin_loss_properties() {
        assert_eq!(margin_loss(5.0, 1.0, 2.0), 0.0);
        assert_eq!(margin_loss(3.0, 1.0, 2.0), 0.0);
        assert!((margin_loss(1.0, 1.0, 2.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn negative_two_entities_forced() {
        let g = kg("a\tr\tb\n");
        let t = KnowledgeTriple::new("a", "r", "b");
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let n = sample_negative(&g, &t, &mut rng);
            assert!(n.is_negative);
            if n.corrupted_head {
                assert_eq!(n.triple, KnowledgeTriple::new("b", "r", "b"));
            } else {
                assert_eq!(n.triple, KnowledgeTriple::new("a", "r", "a"));
            }
        }
    }

    #[test]
    fn negative_sampling_is_seeded() {
        let g = load_triples(crate::kg::SAMPLE_ELEMENT_KG.as_bytes()).unwrap();
        let t = g.triples().next().unwrap().clone();
        let run = |seed| {
            let mut rng = rng_from_seed(seed);
            (0..30).map(|_| sample_negative(&g, &t, &mut rng).triple).collect::<Vec<_>>()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn negative_sampling_uniform_chi_square() {
        // entities a..e; corrupting (a,r,b) may use any entity except the
        // one restoring the true triple, on either side
        let g = kg("a\tr\tb\nc\tr\td\ne\ts\ta\n");
        let t = KnowledgeTriple::new("a", "r", "b");
        let mut rng = rng_from_seed(11);
        let mut head_counts: BTreeMap<String, usize> = BTreeMap::new();
        let mut tail_counts: BTreeMap<String, usize> = BTreeMap::new();
        for _ in 0..10_000 {
            let n = sample_negative(&g, &t, &mut rng);
            assert!(n.is_negative && !g.contains(&n.triple));
            if n.corrupted_head {
                *head_counts.entry(n.triple.head).or_default() += 1;
            } else {
                *tail_counts.entry(n.triple.tail).or_default() += 1;
            }
        }
        for counts in [head_counts, tail_counts] {
            assert_eq!(counts.len(), 4);
            let total: usize = counts.values().sum();
            let expected = total as f64 / 4.0;
            let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            let df = 3.0f64;
            assert!(chi2 < df + 3.0 * (2.0 * df).sqrt(), "chi2 {chi2}");
        }
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let g = load_triples(crate::kg::SAMPLE_ELEMENT_KG.as_bytes()).unwrap();
        let cfg = KgeConfig {
            steps: 0,
            ..KgeConfig::default()
        };
        assert_eq!(train_embeddings(&g, &cfg).unwrap(), init_embeddings(&g, &cfg).unwrap());
    }

    #[test]
    fn config_and_graph_errors() {
        let g = kg("a\tr\tb\n");
        let bad = KgeConfig {
            dim: 0,
            ..KgeConfig::default()
        };
        assert!(matches!(train_embeddings(&g, &bad), Err(KgeError::InvalidConfig(_))));
        assert!(matches!(
            train_embeddings(&KnowledgeGraph::default(), &KgeConfig::default()),
            Err(KgeError::EmptyGraph)
        ));
    }

    #[test]
    fn toy_chain_transe_separates_positives() {
        let g = kg("a\tnext\tb\nb\tnext\tc\n");
        let cfg = KgeConfig {
            model: KgeModel::TransE,
            dim: 8,
            margin: 1.0,
            learning_rate: 0.01,
            negatives_per_positive: 2,
            steps: 2000,
            seed: 4,
        };
        let (emb, losses) = train_embeddings_with(&g, &cfg, |_| {}).unwrap();
        let pos: f64 = g.triples().map(|t| score_triple(cfg.model, &emb, t).unwrap()).sum::<f64>() / 2.0;
        let mut negs = Vec::new();
        for h in g.entities() {
            for t in g.entities() {
                let c = KnowledgeTriple::new(h.clone(), "next", t.clone());
                if !g.contains(&c) {
                    negs.push(score_triple(cfg.model, &emb, &c).unwrap());
                }
            }
        }
        let neg = negs.iter().sum::<f64>() / negs.len() as f64;
        assert!(pos > neg, "pos {pos} neg {neg}");
        let window = 200;
        let first = losses[..window].iter().sum::<f64>() / window as f64;
        let last = losses[losses.len() - window..].iter().sum::<f64>() / window as f64;
        assert!(last <= first, "{first} -> {last}");
    }

    #[test]
    fn training_is_deterministic() {
        let g = load_triples(crate::kg::SAMPLE_ELEMENT_KG.as_bytes()).unwrap();
        let cfg = KgeConfig {
            steps: 300,
            ..KgeConfig::default()
        };
        let a = train_embeddings(&g, &cfg).unwrap();
        let b = train_embeddings(&g, &cfg).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn rotate_modulus_holds_every_step() {
        let g = load_triples(crate::kg::SAMPLE_ELEMENT_KG.as_bytes()).unwrap();
        let cfg = KgeConfig {
            steps: 500,
            ..KgeConfig::default()
        };
        let mut worst = 0.0f64;
        train_embeddings_with(&g, &cfg, |v| worst = worst.max(v.max_rotation_modulus_error())).unwrap();
        assert!(worst <= 1e-6);
    }

    #[test]
    fn perfect_scorer_mrr_is_one() {
        let g = kg("a\tr\tb\nb\tr\tc\nc\tr\td\n");
        let known: BTreeSet<_> = g.triples().cloned().collect();
        let test: Vec<_> = g.triples().cloned().collect();
        let m = rank_metrics(&test, &known, g.entities(), |h, r, t| {
            Ok(if known.contains(&KnowledgeTriple::new(h, r, t)) { 1.0 } else { 0.0 })
        })
        .unwrap();
        assert_eq!(m.mrr, 1.0);
        assert_eq!(m.hits_at_1, 1.0);
    }

    #[test]
    fn random_scores_match_rank_prior() {
        // i.i.d. random scores make the true entity's rank uniform over its
        // m filtered candidates, so E[1/rank] = H_m / m; the simulated side
        // draws the ranks directly
        let g = synthetic_translation_kg(20, 2, 40, 0, 1).0;
        let test: Vec<_> = g.triples().take(10).cloned().collect();
        let known: BTreeSet<_> = g.triples().cloned().collect();
        let mut sizes = Vec::new();
        for t in &test {
            for head in [false, true] {
                let m = 1 + g
                    .entities()
                    .iter()
                    .filter(|c| {
                        let cand = if head {
                            KnowledgeTriple::new((*c).clone(), t.relation.clone(), t.tail.clone())
                        } else {
                            KnowledgeTriple::new(t.head.clone(), t.relation.clone(), (*c).clone())
                        };
                        !known.contains(&cand)
                    })
                    .count();
                sizes.push(m);
            }
        }
        let mut sim_rng = rng_from_seed(99);
        let sims = 20_000;
        let mut simulated = 0.0;
        for _ in 0..sims {
            for &m in &sizes {
                simulated += 1.0 / sim_rng.gen_range(1..=m) as f64;
            }
        }
        simulated /= (sims * sizes.len()) as f64;
        let analytic = sizes
            .iter()
            .map(|&m| (1..=m).map(|k| 1.0 / k as f64).sum::<f64>() / m as f64)
            .sum::<f64>()
            / sizes.len() as f64;
        assert!((simulated - analytic).abs() < 0.005);

        let runs = 300;
        let mut mean = 0.0;
        for seed in 0..runs {
            let mut rng = rng_from_seed(seed);
            let mut memo: BTreeMap<(String, String, String), f64> = BTreeMap::new();
            mean += rank_metrics(&test, &known, g.entities(), |h, r, t| {
                Ok(*memo
                    .entry((h.to_string(), r.to_string(), t.to_string()))
                    .or_insert_with(|| rng.gen()))
            })
            .unwrap()
            .mrr;
        }
        mean /= runs as f64;
        assert!((mean - simulated).abs() < 0.01, "mean {mean} simulated {simulated}");
    }

    #[test]
    fn single_triple_hits_match_manual_rank() {
        let g = kg("a\tr\tb\n");
        let cfg = KgeConfig {
            model: KgeModel::TransE,
            dim: 4,
            steps: 50,
            margin: 1.0,
            ..KgeConfig::default()
        };
        let emb = train_embeddings(&g, &cfg).unwrap();
        let m = evaluate_link_prediction(&g, &emb, cfg.model).unwrap();
        let t = KnowledgeTriple::new("a", "r", "b");
        let truth = score_triple(cfg.model, &emb, &t).unwrap();
        // tail query competes with (a,r,a), head query with (b,r,b)
        let ranks: Vec<usize> = [KnowledgeTriple::new("a", "r", "a"), KnowledgeTriple::new("b", "r", "b")]
            .iter()
            .map(|c| if score_triple(cfg.model, &emb, c).unwrap() >= truth { 2 } else { 1 })
            .collect();
        let hits1 = ranks.iter().filter(|&&r| r == 1).count() as f64 / 2.0;
        let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / 2.0;
        assert_eq!(m.hits_at_1, hits1);
        assert_eq!(m.mrr, mrr);
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = load_triples(crate::kg::SAMPLE_ELEMENT_KG.as_bytes()).unwrap();
        let emb = train_embeddings(&g, &KgeConfig { steps: 20, ..KgeConfig::default() }).unwrap();
        let json = serde_json::to_string(&emb.to_checkpoint()).unwrap();
        assert!(json.starts_with("{\"version\":1,\"model\":\"rotate\""));
        let back = EmbeddingTable::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, emb);
    }

    #[test]
    fn unknown_names_error() {
        let g = kg("a\tr\tb\n");
        let emb = init_embeddings(&g, &KgeConfig::default()).unwrap();
        assert!(matches!(
            score_triple(KgeModel::RotatE, &emb, &KnowledgeTriple::new("z", "r", "b")),
            Err(KgeError::UnknownEntity(_))
        ));
        assert!(matches!(
            score_triple(KgeModel::RotatE, &emb, &KnowledgeTriple::new("a", "q", "b")),
            Err(KgeError::UnknownRelation(_))
        ));
    }
}
