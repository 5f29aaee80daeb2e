//! Batched behavior-cloning and ranking losses with analytic gradients.
//!
//! Hops of every path in a batch are grouped by relation so each module runs
//! as three matrix products. Losses are per-batch means:
//! `total = mean_b [ path_b + lambda * rank_b ]`.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis, Zip};

use super::{RankLoss, ReasonerModel};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, ReasoningPath, RelationId};

/// A positive path and the negative items drawn for its user.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingExample {
    pub path: ReasoningPath,
    pub negatives: Vec<EntityId>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingBatch {
    pub examples: Vec<TrainingExample>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Mean negative path log-likelihood.
    pub path: f64,
    /// Mean ranking term over examples that had negatives; 0 if none did.
    pub rank: f64,
    /// `mean_b [path_b + lambda * rank_b]`, with `rank_b = 0` for examples
    /// without negatives.
    pub total: f64,
    pub examples: usize,
    pub ranked_examples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModuleGrad {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub w3: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub embeddings: Array2<f64>,
    pub modules: BTreeMap<RelationId, ModuleGrad>,
}

struct Hop {
    example: usize,
    user: EntityId,
    history: EntityId,
    target: EntityId,
    last: bool,
}

impl ReasonerModel {
    pub fn path_loss(&self, graph: &KnowledgeGraph, batch: &TrainingBatch) -> Result<f64> {
        Ok(self.batch_loss(graph, batch)?.path)
    }

    pub fn rank_loss(&self, graph: &KnowledgeGraph, batch: &TrainingBatch) -> Result<f64> {
        Ok(self.batch_loss(graph, batch)?.rank)
    }

    pub fn total_loss(&self, graph: &KnowledgeGraph, batch: &TrainingBatch) -> Result<f64> {
        Ok(self.batch_loss(graph, batch)?.total)
    }

    pub fn batch_loss(&self, graph: &KnowledgeGraph, batch: &TrainingBatch) -> Result<LossBreakdown> {
        Ok(self.forward_backward(graph, batch, false)?.0)
    }

    pub fn loss_and_gradients(&self, graph: &KnowledgeGraph, batch: &TrainingBatch) -> Result<(LossBreakdown, Gradients)> {
        let (loss, grads) = self.forward_backward(graph, batch, true)?;
        Ok((loss, grads.expect("requested")))
    }

    fn forward_backward(
        &self,
        graph: &KnowledgeGraph,
        batch: &TrainingBatch,
        want_grad: bool,
    ) -> Result<(LossBreakdown, Option<Gradients>)> {
        let b = batch.len();
        if b == 0 {
            return Ok((LossBreakdown::default(), None));
        }
        let d = self.dim();
        let lambda = self.hyper.lambda;
        let inv_b = 1.0 / b as f64;

        let mut groups: BTreeMap<RelationId, Vec<Hop>> = BTreeMap::new();
        for (k, ex) in batch.examples.iter().enumerate() {
            let p = &ex.path;
            if p.is_empty() || p.entities.len() != p.relations.len() + 1 {
                return Err(Error::InvalidPath(format!("malformed path in example {k}")));
            }
            for e in &p.entities {
                self.check_entity(*e)?;
            }
            for e in &ex.negatives {
                self.check_entity(*e)?;
            }
            for (t, &r) in p.relations.iter().enumerate() {
                groups.entry(r).or_default().push(Hop {
                    example: k,
                    user: p.entities[0],
                    history: p.entities[t],
                    target: p.entities[t + 1],
                    last: t + 1 == p.relations.len(),
                });
            }
        }

        let mut path_sum = 0.0;
        let mut rank_sum = 0.0;
        let mut ranked = 0usize;
        let mut grads = want_grad.then(|| Gradients {
            embeddings: Array2::zeros(self.embeddings.raw_dim()),
            modules: BTreeMap::new(),
        });

        for (&r, hops) in &groups {
            let module = self.module(r)?;
            let tail = graph.schema().try_relation(r)?.tail_type;
            let norm_set = graph.entities_of_type(tail);
            if norm_set.is_empty() {
                return Err(Error::EmptyCandidates);
            }
            let n = hops.len();
            let m = norm_set.len();

            let mut x = Array2::<f64>::zeros((n, 2 * d));
            for (row, hop) in hops.iter().enumerate() {
                x.slice_mut(s![row, ..d]).assign(&self.embedding(hop.user));
                x.slice_mut(s![row, d..]).assign(&self.embedding(hop.history));
            }
            let z1 = x.dot(&module.w1);
            let a1 = z1.mapv(super::relu);
            let z2 = a1.dot(&module.w2);
            let a2 = z2.mapv(super::relu);
            let out = a2.dot(&module.w3);

            let idx: Vec<usize> = norm_set.iter().map(|e| e.index()).collect();
            let part = self.embeddings.select(Axis(0), &idx);
            let logits = out.dot(&part.t());

            // softmax - onehot, scaled by 1/B
            let mut g_logits = want_grad.then(|| Array2::<f64>::zeros((n, m)));
            let mut g_out = want_grad.then(|| Array2::<f64>::zeros((n, d)));

            for (row, hop) in hops.iter().enumerate() {
                let target = norm_set
                    .binary_search(&hop.target)
                    .map_err(|_| Error::InvalidPath(format!("{} is not in the tail type of {r}", hop.target)))?;
                let lrow = logits.row(row);
                let max = lrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = lrow.iter().map(|&v| (v - max).exp()).sum();
                let lse = max + sum.ln();
                path_sum -= lrow[target] - lse;
                if let Some(g) = g_logits.as_mut() {
                    let mut grow = g.row_mut(row);
                    Zip::from(&mut grow).and(&lrow).for_each(|gv, &v| *gv = (v - lse).exp() * inv_b);
                    grow[target] -= inv_b;
                }

                let negatives = &batch.examples[hop.example].negatives;
                if hop.last && !negatives.is_empty() {
                    ranked += 1;
                    let o = out.row(row);
                    let pos = self.embedding(hop.target);
                    let scale = 1.0 / negatives.len() as f64;
                    let mut term = 0.0;
                    for &neg in negatives {
                        let negv = self.embedding(neg);
                        let diff = o.dot(&pos) - o.dot(&negv);
                        let sig = sigmoid(diff);
                        // d(loss)/d(diff) for this negative, before lambda/B
                        let dl = match self.hyper.rank_loss {
                            RankLoss::Sigmoid => {
                                term -= sig * scale;
                                -sig * (1.0 - sig) * scale
                            }
                            RankLoss::LogSigmoid => {
                                term -= log_sigmoid(diff) * scale;
                                -(1.0 - sig) * scale
                            }
                        };
                        if let (Some(go), Some(gr)) = (g_out.as_mut(), grads.as_mut()) {
                            let c = dl * lambda * inv_b;
                            let mut gorow = go.row_mut(row);
                            gorow.scaled_add(c, &pos);
                            gorow.scaled_add(-c, &negv);
                            gr.embeddings.row_mut(hop.target.index()).scaled_add(c, &o);
                            gr.embeddings.row_mut(neg.index()).scaled_add(-c, &o);
                        }
                    }
                    rank_sum += term;
                }
            }

            if let (Some(gl), Some(mut go), Some(gr)) = (g_logits, g_out, grads.as_mut()) {
                go += &gl.dot(&part);
                let g_part = gl.t().dot(&out);
                for (k, &e) in idx.iter().enumerate() {
                    gr.embeddings.row_mut(e).scaled_add(1.0, &g_part.row(k));
                }

                let g_w3 = a2.t().dot(&go);
                let mut g_z2 = go.dot(&module.w3.t());
                Zip::from(&mut g_z2).and(&z2).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                let g_w2 = a1.t().dot(&g_z2);
                let mut g_z1 = g_z2.dot(&module.w2.t());
                Zip::from(&mut g_z1).and(&z1).for_each(|g, &z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                let g_w1 = x.t().dot(&g_z1);
                let g_x = g_z1.dot(&module.w1.t());
                for (row, hop) in hops.iter().enumerate() {
                    gr.embeddings
                        .row_mut(hop.user.index())
                        .scaled_add(1.0, &g_x.slice(s![row, ..d]));
                    gr.embeddings
                        .row_mut(hop.history.index())
                        .scaled_add(1.0, &g_x.slice(s![row, d..]));
                }
                gr.modules.insert(
                    r,
                    ModuleGrad {
                        w1: g_w1,
                        w2: g_w2,
                        w3: g_w3,
                    },
                );
            }
        }

        if batch.examples.iter().any(|e| e.negatives.is_empty()) && lambda != 0.0 {
            log::debug!("ranking term skipped for examples without negatives");
        }
        let loss = LossBreakdown {
            path: path_sum * inv_b,
            rank: if ranked > 0 { rank_sum / ranked as f64 } else { 0.0 },
            total: (path_sum + lambda * rank_sum) * inv_b,
            examples: b,
            ranked_examples: ranked,
        };
        Ok((loss, grads))
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

impl Gradients {
    /// Squared L2 norm over every tensor.
    pub fn norm_sq(&self) -> f64 {
        let mut s = self.embeddings.iter().map(|v| v * v).sum::<f64>();
        for g in self.modules.values() {
            for w in [&g.w1, &g.w2, &g.w3] {
                s += w.iter().map(|v| v * v).sum::<f64>();
            }
        }
        s
    }
}
