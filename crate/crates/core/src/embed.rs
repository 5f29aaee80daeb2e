//! TransE pretraining of entity embeddings.
//!
//! Margin ranking with L2 distance `||h + r - t||`, plain SGD, and tail
//! corruption within the tail's type. Relation vectors are discarded after
//! training; only entity rows are returned, unit-normalized.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::graph::KnowledgeGraph;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            epochs: 10,
            learning_rate: 0.01,
            margin: 1.0,
            seed: 0,
        }
    }
}

fn normalize_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n > 0.0 {
            row /= n;
        }
    }
}

/// Returns an `|E| x dim` matrix. With `epochs == 0` this is the seeded
/// initialization.
pub fn pretrain_embeddings(graph: &KnowledgeGraph, cfg: &PretrainConfig) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dim;
    let bound = 6.0 / (d as f64).sqrt();
    let mut ent = Array2::from_shape_fn((graph.num_entities(), d), |_| rng.random_range(-bound..bound));
    let mut rel = Array2::from_shape_fn((graph.schema().num_relations(), d), |_| {
        rng.random_range(-bound..bound)
    });
    normalize_rows(&mut ent);
    normalize_rows(&mut rel);

    let mut triples = graph.triples();
    for epoch in 0..cfg.epochs {
        triples.shuffle(&mut rng);
        let mut loss = 0.0;
        for &(h, r, t) in &triples {
            let pool = graph.entities_of_type(graph.entity_type(t));
            let corrupt = if pool.len() > 1 {
                loop {
                    let c = pool[rng.random_range(0..pool.len())];
                    if c != t {
                        break c;
                    }
                }
            } else if graph.num_entities() > 1 {
                loop {
                    let c = crate::graph::EntityId(rng.random_range(0..graph.num_entities() as u32));
                    if c != t {
                        break c;
                    }
                }
            } else {
                continue;
            };
            let base: Array1<f64> = &ent.row(h.index()) + &rel.row(r.index());
            let pos = &base - &ent.row(t.index());
            let neg = &base - &ent.row(corrupt.index());
            let dp = pos.dot(&pos).sqrt();
            let dn = neg.dot(&neg).sqrt();
            let l = cfg.margin + dp - dn;
            if l <= 0.0 {
                continue;
            }
            loss += l;
            let gp = if dp > 0.0 { &pos / dp } else { Array1::zeros(d) };
            let gn = if dn > 0.0 { &neg / dn } else { Array1::zeros(d) };
            let lr = cfg.learning_rate;
            let g_base = &gp - &gn;
            ent.row_mut(h.index()).scaled_add(-lr, &g_base);
            rel.row_mut(r.index()).scaled_add(-lr, &g_base);
            ent.row_mut(t.index()).scaled_add(lr, &gp);
            ent.row_mut(corrupt.index()).scaled_add(-lr, &gn);
        }
        normalize_rows(&mut ent);
        log::info!("pretrain epoch {:>3}: hinge {:.5}", epoch + 1, loss / triples.len().max(1) as f64);
    }
    normalize_rows(&mut ent);
    ent
}
