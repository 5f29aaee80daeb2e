//! Top-k ranking metrics with binary relevance, reported as percentages.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::graph::EntityId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ndcg: f64,
    pub recall: f64,
    pub hit_rate: f64,
    pub precision: f64,
}

impl Metrics {
    fn scale(self, f: f64) -> Self {
        Self {
            ndcg: self.ndcg * f,
            recall: self.recall * f,
            hit_rate: self.hit_rate * f,
            precision: self.precision * f,
        }
    }

    fn add(self, o: Self) -> Self {
        Self {
            ndcg: self.ndcg + o.ndcg,
            recall: self.recall + o.recall,
            hit_rate: self.hit_rate + o.hit_rate,
            precision: self.precision + o.precision,
        }
    }
}

/// NDCG, recall, hit rate and precision of the first `k` entries of
/// `recommended` (log2 discount; ideal DCG over `min(k, |relevant|)` hits).
/// `None` when `relevant` is empty.
pub fn metrics_at_k(recommended: &[EntityId], relevant: &HashSet<EntityId>, k: usize) -> Option<Metrics> {
    if relevant.is_empty() || k == 0 {
        return None;
    }
    let mut dcg = 0.0;
    let mut hits = 0usize;
    let mut seen = HashSet::new();
    for (rank, item) in recommended.iter().take(k).enumerate() {
        if relevant.contains(item) && seen.insert(*item) {
            hits += 1;
            dcg += 1.0 / ((rank + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..k.min(relevant.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    Some(Metrics {
        ndcg: 100.0 * dcg / idcg,
        recall: 100.0 * hits as f64 / relevant.len() as f64,
        hit_rate: if hits > 0 { 100.0 } else { 0.0 },
        precision: 100.0 * hits as f64 / k as f64,
    })
}

/// Mean over users; zero when there are none.
pub fn macro_average<'a>(per_user: impl IntoIterator<Item = &'a Metrics>) -> Metrics {
    let mut sum = Metrics::default();
    let mut n = 0usize;
    for m in per_user {
        sum = sum.add(*m);
        n += 1;
    }
    if n == 0 {
        sum
    } else {
        sum.scale(1.0 / n as f64)
    }
}
