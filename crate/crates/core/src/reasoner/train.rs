use std::collections::BTreeMap;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LossBreakdown, ReasonerModel, TrainingBatch, TrainingExample};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId};
use crate::miner::PathSample;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

struct Moments {
    m: Array2<f64>,
    v: Array2<f64>,
}

impl Moments {
    fn like(a: &Array2<f64>) -> Self {
        Self {
            m: Array2::zeros(a.raw_dim()),
            v: Array2::zeros(a.raw_dim()),
        }
    }

    fn step(&mut self, param: &mut Array2<f64>, grad: &Array2<f64>, lr: f64, bc1: f64, bc2: f64) {
        Zip::from(param)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + EPS);
            });
    }
}

/// Adam state for every tensor of a model.
struct Adam {
    t: i32,
    lr: f64,
    embeddings: Moments,
    modules: BTreeMap<RelationId, [Moments; 3]>,
}

impl Adam {
    fn new(model: &ReasonerModel) -> Self {
        Self {
            t: 0,
            lr: model.hyper.learning_rate,
            embeddings: Moments::like(&model.embeddings),
            modules: model
                .modules
                .iter()
                .map(|(r, m)| (*r, [Moments::like(&m.w1), Moments::like(&m.w2), Moments::like(&m.w3)]))
                .collect(),
        }
    }

    fn step(&mut self, model: &mut ReasonerModel, grads: &super::Gradients) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        self.embeddings
            .step(&mut model.embeddings, &grads.embeddings, self.lr, bc1, bc2);
        for (r, module) in model.modules.iter_mut() {
            let state = self.modules.get_mut(r).expect("state per module");
            // modules absent from the batch still get a zero-gradient step
            match grads.modules.get(r) {
                Some(g) => {
                    state[0].step(&mut module.w1, &g.w1, self.lr, bc1, bc2);
                    state[1].step(&mut module.w2, &g.w2, self.lr, bc1, bc2);
                    state[2].step(&mut module.w3, &g.w3, self.lr, bc1, bc2);
                }
                None => {
                    let zeros = [
                        Array2::zeros(module.w1.raw_dim()),
                        Array2::zeros(module.w2.raw_dim()),
                        Array2::zeros(module.w3.raw_dim()),
                    ];
                    state[0].step(&mut module.w1, &zeros[0], self.lr, bc1, bc2);
                    state[1].step(&mut module.w2, &zeros[1], self.lr, bc1, bc2);
                    state[2].step(&mut module.w3, &zeros[2], self.lr, bc1, bc2);
                }
            }
        }
    }
}

/// Up to `count` items drawn uniformly from those `u` has not interacted
/// with. Empty when every item is an interaction.
pub fn sample_negatives(graph: &KnowledgeGraph, u: EntityId, count: usize, rng: &mut ChaCha8Rng) -> Vec<EntityId> {
    let items = graph.items();
    let positives = graph.interacted_items(u);
    if positives.len() >= items.len() || count == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count);
    if positives.len() * 2 < items.len() {
        while out.len() < count {
            let i = items[rng.random_range(0..items.len())];
            if positives.binary_search(&i).is_err() {
                out.push(i);
            }
        }
    } else {
        let pool: Vec<EntityId> = items
            .iter()
            .copied()
            .filter(|i| positives.binary_search(i).is_err())
            .collect();
        for _ in 0..count {
            out.push(pool[rng.random_range(0..pool.len())]);
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean total loss of each epoch, in order.
    pub epoch_total: Vec<f64>,
    pub epoch_path: Vec<f64>,
    pub epoch_rank: Vec<f64>,
    pub steps: usize,
}

/// Behavior-cloning training with the ranking regularizer, using Adam.
/// Single-threaded and fully determined by `model.hyper.seed`.
pub fn train(graph: &KnowledgeGraph, model: &mut ReasonerModel, samples: &[PathSample]) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    for s in samples {
        if !model.modules.contains_key(&s.path.relations[s.path.len() - 1]) {
            return Err(Error::MissingModule(s.path.relations[s.path.len() - 1]));
        }
    }
    let hyper = model.hyper.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut adam = Adam::new(model);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut warned = false;

    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut sums = LossBreakdown::default();
        let mut batches = 0usize;
        for (bi, chunk) in order.chunks(hyper.batch_size.max(1)).enumerate() {
            let batch = TrainingBatch {
                examples: chunk
                    .iter()
                    .map(|&k| {
                        let path = samples[k].path.clone();
                        let negatives = sample_negatives(graph, path.user(), hyper.negatives, &mut rng);
                        TrainingExample { path, negatives }
                    })
                    .collect(),
            };
            if !warned && hyper.lambda != 0.0 && batch.examples.iter().any(|e| e.negatives.is_empty()) {
                log::warn!("some users interacted with every item; their ranking term is skipped");
                warned = true;
            }
            let (loss, grads) = model.loss_and_gradients(graph, &batch)?;
            if !loss.total.is_finite() || !grads.norm_sq().is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            adam.step(model, &grads);
            sums.total += loss.total;
            sums.path += loss.path;
            sums.rank += loss.rank;
            batches += 1;
            report.steps += 1;
        }
        let n = batches.max(1) as f64;
        report.epoch_total.push(sums.total / n);
        report.epoch_path.push(sums.path / n);
        report.epoch_rank.push(sums.rank / n);
        log::info!(
            "epoch {:>3}: total {:.5} path {:.5} rank {:.5}",
            epoch + 1,
            sums.total / n,
            sums.path / n,
            sums.rank / n
        );
    }
    Ok(report)
}
