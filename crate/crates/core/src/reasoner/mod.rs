//! Per-relation neural reasoning modules over shared entity embeddings.
//!
//! Each module maps a user embedding and a history embedding to a predicted
//! next-hop embedding through two rectified hidden layers and a linear
//! output. Next-hop probabilities are a softmax of dot products against every
//! entity of the relation's tail type.

mod checkpoint;
mod loss;
mod train;

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, ReasoningPath, RelationId};
use crate::miner::{pattern_relations, Pattern};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use loss::{Gradients, LossBreakdown, ModuleGrad, TrainingBatch, TrainingExample};
pub use train::{sample_negatives, train, TrainReport};

/// Form of the pairwise ranking term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankLoss {
    /// `-E[sigmoid(<i+, e> - <i-, e>)]`
    #[default]
    Sigmoid,
    /// `-E[log sigmoid(<i+, e> - <i-, e>)]`
    LogSigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub dim: usize,
    pub hidden: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub rank_loss: RankLoss,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            dim: 100,
            hidden: 256,
            lambda: 10.0,
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 20,
            negatives: 5,
            rank_loss: RankLoss::Sigmoid,
            seed: 0,
        }
    }
}

/// Weights of one relation module: `[u;h] (2d) -> hidden -> hidden -> d`.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationModule {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub w3: Array2<f64>,
}

fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl RelationModule {
    pub fn xavier(dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w1: xavier(2 * dim, hidden, rng),
            w2: xavier(hidden, hidden, rng),
            w3: xavier(hidden, dim, rng),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((2 * dim, hidden)),
            w2: Array2::zeros((hidden, hidden)),
            w3: Array2::zeros((hidden, dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.w3.ncols()
    }

    /// `relu(relu([u;h] W1) W2) W3`
    pub fn forward(&self, u: ArrayView1<f64>, h: ArrayView1<f64>) -> Array1<f64> {
        let d = self.dim();
        let a1 = (u.dot(&self.w1.slice(s![..d, ..])) + h.dot(&self.w1.slice(s![d.., ..]))).mapv(relu);
        let a2 = a1.dot(&self.w2).mapv(relu);
        a2.dot(&self.w3)
    }
}

#[inline]
pub(crate) fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Entity embeddings plus one module per relation of the candidate patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct ReasonerModel {
    pub hyper: Hyperparams,
    /// `|E| x d`, row `e` is entity `e`.
    pub embeddings: Array2<f64>,
    pub modules: BTreeMap<RelationId, RelationModule>,
    /// Candidate pattern set the modules were built for.
    pub patterns: Vec<Pattern>,
}

impl ReasonerModel {
    /// Builds a model with Xavier-initialized modules for every relation that
    /// appears in `patterns`.
    pub fn new(embeddings: Array2<f64>, patterns: Vec<Pattern>, hyper: Hyperparams, rng: &mut ChaCha8Rng) -> Result<Self> {
        if embeddings.ncols() != hyper.dim {
            return Err(Error::Dimension {
                expected: hyper.dim,
                actual: embeddings.ncols(),
            });
        }
        let modules = pattern_relations(&patterns)
            .into_iter()
            .map(|r| (r, RelationModule::xavier(hyper.dim, hyper.hidden, rng)))
            .collect();
        Ok(Self {
            hyper,
            embeddings,
            modules,
            patterns,
        })
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim
    }

    pub fn num_entities(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn module(&self, r: RelationId) -> Result<&RelationModule> {
        self.modules.get(&r).ok_or(Error::MissingModule(r))
    }

    pub fn embedding(&self, e: EntityId) -> ArrayView1<'_, f64> {
        self.embeddings.row(e.index())
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.index() < self.embeddings.nrows() {
            Ok(())
        } else {
            Err(Error::MissingEmbedding(e))
        }
    }

    /// Module output for relation `r` given raw user and history vectors.
    pub fn module_forward(&self, r: RelationId, u: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<Array1<f64>> {
        let m = self.module(r)?;
        if u.len() != self.dim() || h.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: u.len().max(h.len()),
            });
        }
        Ok(m.forward(u, h))
    }

    /// Predicted next-hop embedding for user `u` with history entity `h`.
    pub fn predict(&self, u: EntityId, h: EntityId, r: RelationId) -> Result<Array1<f64>> {
        self.check_entity(u)?;
        self.check_entity(h)?;
        self.module_forward(r, self.embedding(u), self.embedding(h))
    }

    /// Log-softmax over the normalization set of `r` (all entities of its
    /// tail type). Returns the set and the log-probabilities aligned with it.
    pub fn hop_log_softmax<'g>(
        &self,
        graph: &'g KnowledgeGraph,
        u: EntityId,
        h: EntityId,
        r: RelationId,
    ) -> Result<(&'g [EntityId], Vec<f64>)> {
        let tail = graph.schema().try_relation(r)?.tail_type;
        let norm_set = graph.entities_of_type(tail);
        if norm_set.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let out = self.predict(u, h, r)?;
        let logits: Vec<f64> = norm_set.iter().map(|&e| out.dot(&self.embedding(e))).collect();
        Ok((norm_set, log_softmax(&logits)))
    }

    /// `log P(r, e' | u, h)` for each candidate `e'`, normalized over the
    /// tail-type partition of `r`.
    pub fn next_hop_log_probs(
        &self,
        graph: &KnowledgeGraph,
        u: EntityId,
        h: EntityId,
        r: RelationId,
        candidates: &[EntityId],
    ) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let (norm_set, logp) = self.hop_log_softmax(graph, u, h, r)?;
        candidates
            .iter()
            .map(|c| {
                norm_set
                    .binary_search(c)
                    .map(|i| logp[i])
                    .map_err(|_| Error::InvalidPath(format!("{c} is not in the tail type of {r}")))
            })
            .collect()
    }

    /// Sum of per-hop log-probabilities of a path; the history for hop `t` is
    /// the entity reached at hop `t-1` (the user itself at the first hop).
    pub fn path_log_prob(&self, graph: &KnowledgeGraph, path: &ReasoningPath) -> Result<f64> {
        graph.validate_path(path)?;
        let u = path.user();
        let mut total = 0.0;
        for (t, &r) in path.relations.iter().enumerate() {
            let lp = self.next_hop_log_probs(graph, u, path.entities[t], r, &path.entities[t + 1..t + 2])?;
            total += lp[0];
        }
        Ok(total)
    }

    /// Like [`path_log_prob`](Self::path_log_prob) but memoizes per-hop
    /// distributions in `cache`, which must only be shared between paths of
    /// the same user. Bitwise identical results.
    pub fn path_log_prob_cached(
        &self,
        graph: &KnowledgeGraph,
        path: &ReasoningPath,
        cache: &mut HopCache,
    ) -> Result<f64> {
        graph.validate_path(path)?;
        let u = path.user();
        if cache.user != Some(u) {
            cache.user = Some(u);
            cache.map.clear();
        }
        let mut total = 0.0;
        for (t, &r) in path.relations.iter().enumerate() {
            let h = path.entities[t];
            let key = (r, h);
            if !cache.map.contains_key(&key) {
                let (norm_set, logp) = self.hop_log_softmax(graph, u, h, r)?;
                cache.map.insert(key, (norm_set.to_vec(), logp));
            }
            let (norm_set, logp) = &cache.map[&key];
            let target = path.entities[t + 1];
            let i = norm_set
                .binary_search(&target)
                .map_err(|_| Error::InvalidPath(format!("{target} is not in the tail type of {r}")))?;
            total += logp[i];
        }
        Ok(total)
    }
}

/// Per-user memo of hop distributions keyed by `(relation, history entity)`.
#[derive(Default)]
pub struct HopCache {
    user: Option<EntityId>,
    map: HashMap<(RelationId, EntityId), (Vec<EntityId>, Vec<f64>)>,
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|&x| x - lse).collect()
}
