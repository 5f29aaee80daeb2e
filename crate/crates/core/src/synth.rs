//! Synthetic e-commerce graphs with planted user behavior patterns.
//!
//! Every user is assigned one dominant pattern from the planted set and
//! draws interactions from a mixture that favors it. Training interactions
//! start from a few random seed purchases and grow by walking planted
//! patterns; test interactions are walks over the finished training graph
//! that end at a not-yet-interacted item, so each test item is reachable
//! from its user by a planted pattern. Noise triples are added last.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityType, KnowledgeGraph, RelationId, Schema};
use crate::io::Dataset;
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub users: usize,
    pub items: usize,
    pub words: usize,
    pub brands: usize,
    pub categories: usize,
    pub related_items: usize,
    /// Planted patterns as relation-name sequences starting at the user.
    pub planted: Vec<Vec<String>>,
    /// Mixture weight of each user's dominant pattern; the rest is spread
    /// evenly over the other planted patterns.
    pub dominant_weight: f64,
    pub seed_purchases: usize,
    pub train_walks: usize,
    pub test_walks: usize,
    pub words_per_user: usize,
    pub words_per_item: usize,
    /// Noise triples added, as a fraction of the noiseless triple count.
    pub noise_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let p = |a: &str| vec!["purchase".to_string(), a.to_string(), format!("{a}_inv")];
        Self {
            users: 200,
            items: 300,
            words: 60,
            brands: 100,
            categories: 100,
            related_items: 100,
            planted: vec![p("produced_by"), p("belongs_to"), p("also_bought")],
            dominant_weight: 0.8,
            seed_purchases: 3,
            train_walks: 3,
            test_walks: 3,
            words_per_user: 0,
            words_per_item: 0,
            noise_rate: 0.1,
            seed: 0,
        }
    }
}

/// One generated interaction and how it arose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user: EntityId,
    pub item: EntityId,
    pub test: bool,
    /// Planted pattern index, `None` for seed and fallback purchases.
    pub pattern: Option<usize>,
    pub path: Vec<EntityId>,
}

#[derive(Clone, Debug)]
pub struct Synthetic {
    pub data: Dataset,
    /// Planted patterns as relation ids.
    pub planted: Vec<Vec<RelationId>>,
    /// Dominant planted pattern per user, aligned with `graph.users()`.
    pub dominant: Vec<usize>,
    pub log: Vec<GroundTruth>,
    /// Forward triples before noise.
    pub noiseless_triples: usize,
}

fn resolve(schema: &Schema, names: &[String]) -> Result<Vec<RelationId>> {
    let rels = names
        .iter()
        .map(|n| schema.relation_by_name(n).ok_or_else(|| Error::UnknownRelation(n.clone())))
        .collect::<Result<Vec<_>>>()?;
    let p = crate::miner::Pattern::new(rels.clone());
    p.validate(schema)?;
    Ok(rels)
}

/// One uniform walk along `pattern`; the end must be an item that `u` has
/// not interacted with and that is not in `exclude`.
fn planted_walk(
    g: &KnowledgeGraph,
    u: EntityId,
    pattern: &[RelationId],
    exclude: &BTreeSet<EntityId>,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<EntityId>> {
    'attempt: for _ in 0..20 {
        let mut path = vec![u];
        for &r in pattern {
            let next: Vec<EntityId> = g
                .neighbors(*path.last().unwrap(), r)
                .iter()
                .copied()
                .filter(|e| !path.contains(e))
                .collect();
            match next.choose(rng) {
                Some(&e) => path.push(e),
                None => continue 'attempt,
            }
        }
        let end = *path.last().unwrap();
        if g.is_item(end) && !g.has_interaction(u, end) && !exclude.contains(&end) {
            return Some(path);
        }
    }
    None
}

fn pick_pattern(dominant: usize, n: usize, w: f64, rng: &mut ChaCha8Rng) -> usize {
    if n == 1 || rng.random_bool(w.clamp(0.0, 1.0)) {
        dominant
    } else {
        let k = rng.random_range(0..n - 1);
        if k >= dominant {
            k + 1
        } else {
            k
        }
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Synthetic> {
    if spec.users == 0 || spec.items < 2 || spec.planted.is_empty() {
        return Err(Error::Config("need users, at least two items and a planted pattern".into()));
    }
    let schema = Schema::amazon();
    let planted: Vec<Vec<RelationId>> = spec
        .planted
        .iter()
        .map(|p| resolve(&schema, p))
        .collect::<Result<_>>()?;
    let rel = |n: &str| schema.relation_by_name(n).expect("amazon schema");
    let (purchase, mentions, describe_as) = (rel("purchase"), rel("mentions"), rel("describe_as"));
    let attrs = [
        (rel("produced_by"), spec.brands),
        (rel("belongs_to"), spec.categories),
        (rel("also_bought"), spec.related_items),
        (rel("also_viewed"), spec.related_items),
        (rel("bought_together"), spec.related_items),
    ];

    let mut g = KnowledgeGraph::new(schema.clone());
    let ty = |n: &str| schema.type_by_name(n).expect("amazon schema");
    let add = |g: &mut KnowledgeGraph, n: usize, t: EntityType, prefix: &str| -> Result<Vec<EntityId>> {
        (0..n).map(|k| g.add_entity(&format!("{prefix}_{k}"), t)).collect()
    };
    let users = add(&mut g, spec.users, ty("user"), "user")?;
    let items = add(&mut g, spec.items, ty("item"), "item")?;
    let words = add(&mut g, spec.words, ty("word"), "word")?;
    let brands = add(&mut g, spec.brands, ty("brand"), "brand")?;
    let cats = add(&mut g, spec.categories, ty("category"), "category")?;
    let related = add(&mut g, spec.related_items, ty("related_item"), "related")?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0));
    // Each attribute relation deals shuffled copies of the item list
    // round-robin over its pool, so groups differ in size by at most one.
    for &(r, n) in &attrs {
        if n == 0 {
            continue;
        }
        let pool = match schema.type_name(schema.relation(r).tail_type) {
            "brand" => &brands,
            "category" => &cats,
            _ => &related,
        };
        let mut order = items.clone();
        order.shuffle(&mut rng);
        for (p, &i) in order.iter().enumerate() {
            g.add_triple(i, r, pool[p % pool.len()])?;
        }
    }
    for &i in &items {
        for _ in 0..spec.words_per_item.min(words.len()) {
            g.add_triple(i, describe_as, *words.choose(&mut rng).unwrap())?;
        }
    }
    for &u in &users {
        for _ in 0..spec.words_per_user.min(words.len()) {
            g.add_triple(u, mentions, *words.choose(&mut rng).unwrap())?;
        }
    }
    let dominant: Vec<usize> = users.iter().map(|_| rng.random_range(0..planted.len())).collect();
    let mut log = Vec::new();
    let mut train = Vec::new();
    let none = BTreeSet::new();
    for (k, &u) in users.iter().enumerate() {
        let mut urng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1 + k as u64));
        let purchase_random = |g: &mut KnowledgeGraph, urng: &mut ChaCha8Rng| -> Result<Option<EntityId>> {
            let free: Vec<EntityId> = items.iter().copied().filter(|&i| !g.has_interaction(u, i)).collect();
            match free.choose(urng) {
                Some(&i) => {
                    g.add_triple(u, purchase, i)?;
                    Ok(Some(i))
                }
                None => Ok(None),
            }
        };
        for _ in 0..spec.seed_purchases.max(1) {
            if let Some(i) = purchase_random(&mut g, &mut urng)? {
                train.push((u, i));
                log.push(GroundTruth { user: u, item: i, test: false, pattern: None, path: vec![u, i] });
            }
        }
        for _ in 0..spec.train_walks {
            let j = pick_pattern(dominant[k], planted.len(), spec.dominant_weight, &mut urng);
            match planted_walk(&g, u, &planted[j], &none, &mut urng) {
                Some(path) => {
                    let i = *path.last().unwrap();
                    g.add_triple(u, purchase, i)?;
                    train.push((u, i));
                    log.push(GroundTruth { user: u, item: i, test: false, pattern: Some(j), path });
                }
                None => {
                    if let Some(i) = purchase_random(&mut g, &mut urng)? {
                        train.push((u, i));
                        log.push(GroundTruth { user: u, item: i, test: false, pattern: None, path: vec![u, i] });
                    }
                }
            }
        }
    }

    let mut test = Vec::new();
    for (k, &u) in users.iter().enumerate() {
        let mut urng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1_000_000 + k as u64));
        let mut held = BTreeSet::new();
        for _ in 0..spec.test_walks {
            let j = pick_pattern(dominant[k], planted.len(), spec.dominant_weight, &mut urng);
            let found = planted_walk(&g, u, &planted[j], &held, &mut urng).map(|p| (j, p)).or_else(|| {
                // fall back to any planted pattern so the item stays reachable
                (0..planted.len()).find_map(|j2| planted_walk(&g, u, &planted[j2], &held, &mut urng).map(|p| (j2, p)))
            });
            if let Some((j, path)) = found {
                let i = *path.last().unwrap();
                held.insert(i);
                test.push((u, i));
                log.push(GroundTruth { user: u, item: i, test: true, pattern: Some(j), path });
            }
        }
    }

    let noiseless = g.num_triples();
    let target = (spec.noise_rate * noiseless as f64).round() as usize;
    let noise_rels: Vec<RelationId> = schema
        .relations()
        .iter()
        .filter(|r| r.declared && r.id != purchase)
        .map(|r| r.id)
        .collect();
    let mut added = 0;
    let mut guard = 0usize;
    while added < target && guard < target * 100 + 1000 {
        guard += 1;
        let r = *noise_rels.choose(&mut rng).unwrap();
        let rr = schema.relation(r);
        let (Some(&h), Some(&t)) = (
            g.entities_of_type(rr.head_type).choose(&mut rng),
            g.entities_of_type(rr.tail_type).choose(&mut rng),
        ) else {
            continue;
        };
        if g.add_triple(h, r, t)? {
            added += 1;
        }
    }

    Ok(Synthetic {
        data: Dataset { graph: g, train, test },
        planted,
        dominant,
        log,
        noiseless_triples: noiseless,
    })
}

/// `user<TAB>item<TAB>split<TAB>pattern<TAB>path` with `-` for no pattern.
pub fn write_ground_truth(path: &Path, syn: &Synthetic) -> Result<()> {
    let g = &syn.data.graph;
    let mut s = String::from("# user\titem\tsplit\tplanted_pattern\tpath\n");
    for (k, &u) in g.users().iter().enumerate() {
        let _ = writeln!(s, "# dominant\t{}\t{}", g.entity_name(u), syn.dominant[k]);
    }
    for t in &syn.log {
        let names: Vec<&str> = t.path.iter().map(|&e| g.entity_name(e)).collect();
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            g.entity_name(t.user),
            g.entity_name(t.item),
            if t.test { "test" } else { "train" },
            t.pattern.map_or("-".to_string(), |p| p.to_string()),
            names.join(",")
        );
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reaches(g: &KnowledgeGraph, path: &[EntityId], rest: &[RelationId], target: EntityId) -> bool {
        let Some((&r, tail)) = rest.split_first() else {
            return *path.last().unwrap() == target;
        };
        g.neighbors(*path.last().unwrap(), r).iter().any(|&e| {
            if path.contains(&e) {
                return false;
            }
            let mut next = path.to_vec();
            next.push(e);
            reaches(g, &next, tail, target)
        })
    }

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            users: 10,
            items: 20,
            words: 8,
            brands: 6,
            categories: 6,
            related_items: 6,
            planted: vec![vec!["purchase".into(), "produced_by".into(), "produced_by_inv".into()]],
            noise_rate: 0.0,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn test_pairs_reachable_by_the_planted_pattern() {
        let syn = generate(&small()).unwrap();
        let g = &syn.data.graph;
        assert!(!syn.data.test.is_empty());
        for &(u, i) in &syn.data.test {
            assert!(!g.has_interaction(u, i));
            assert!(reaches(g, &[u], &syn.planted[0], i));
        }
        for &(u, i) in &syn.data.train {
            assert!(g.has_interaction(u, i));
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let a = generate(&SyntheticSpec::default()).unwrap();
        let b = generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(a.data.graph.triples(), b.data.graph.triples());
        assert_eq!(a.data.test, b.data.test);
        assert_eq!(a.log, b.log);
        let c = generate(&SyntheticSpec { seed: 9, ..SyntheticSpec::default() }).unwrap();
        assert_ne!(a.data.graph.triples(), c.data.graph.triples());
    }

    #[test]
    fn noise_scales_triple_count() {
        let base = SyntheticSpec { noise_rate: 0.3, ..SyntheticSpec::default() };
        let syn = generate(&base).unwrap();
        let ratio = syn.data.graph.num_triples() as f64 / syn.noiseless_triples as f64;
        assert!((ratio - 1.3).abs() <= 0.05 * 1.3, "{ratio}");
    }

    #[test]
    fn unknown_planted_relation_is_rejected() {
        let spec = SyntheticSpec { planted: vec![vec!["purchase".into(), "nope".into()]], ..small() };
        assert!(generate(&spec).is_err());
    }
}
