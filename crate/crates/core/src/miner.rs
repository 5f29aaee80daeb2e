//! User-centric pattern mining by random walks, and enumeration of the
//! training paths that instantiate each mined pattern.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, ReasoningPath, RelationId, Schema};
use crate::seed::derive_seed;

/// Relation sequence of a user-centric path, with its mined frequency.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pattern {
    pub relations: Vec<RelationId>,
    pub frequency: u64,
}

impl Pattern {
    pub fn new(relations: Vec<RelationId>) -> Self {
        Self {
            relations,
            frequency: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    /// Checks the type chain: starts at the user type, consecutive relations
    /// compose, ends at the item type.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let Some(&first) = self.relations.first() else {
            return Err(Error::InvalidPattern("empty pattern".into()));
        };
        if schema.try_relation(first)?.head_type != schema.user_type() {
            return Err(Error::InvalidPattern(format!(
                "{} does not start at the user type",
                self.display(schema)
            )));
        }
        for w in self.relations.windows(2) {
            let (a, b) = (schema.try_relation(w[0])?, schema.try_relation(w[1])?);
            if a.tail_type != b.head_type {
                return Err(Error::InvalidPattern(format!(
                    "{} breaks the type chain at `{}` -> `{}`",
                    self.display(schema),
                    a.name,
                    b.name
                )));
            }
        }
        let last = schema.try_relation(*self.relations.last().unwrap())?;
        if last.tail_type != schema.item_type() {
            return Err(Error::InvalidPattern(format!(
                "{} does not end at the item type",
                self.display(schema)
            )));
        }
        Ok(())
    }

    /// Comma-joined relation names.
    pub fn display(&self, schema: &Schema) -> String {
        self.relations
            .iter()
            .map(|&r| schema.relation(r).name.as_str())
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn parse(text: &str, schema: &Schema) -> Result<Self> {
        let relations = text
            .split(',')
            .map(|n| {
                schema
                    .relation_by_name(n.trim())
                    .ok_or_else(|| Error::UnknownRelation(n.trim().to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let p = Pattern::new(relations);
        p.validate(schema)?;
        Ok(p)
    }
}

/// Every distinct relation used by any pattern, ascending.
pub fn pattern_relations(patterns: &[Pattern]) -> Vec<RelationId> {
    let mut rels: Vec<RelationId> = patterns.iter().flat_map(|p| p.relations.iter().copied()).collect();
    rels.sort();
    rels.dedup();
    rels
}

/// A training path for one user, instantiating pattern `pattern` (an index
/// into the candidate set) and ending at an interacted item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub pattern: usize,
    pub path: ReasoningPath,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MineConfig {
    /// Maximum pattern length.
    pub max_len: usize,
    /// Maximum number of patterns kept.
    pub max_patterns: usize,
    /// Walks started per training interaction of each user.
    pub walks_per_pair: usize,
    pub seed: u64,
}

impl Default for MineConfig {
    fn default() -> Self {
        Self {
            max_len: 3,
            max_patterns: 15,
            walks_per_pair: 20,
            seed: 0,
        }
    }
}

/// Whether a walk that has just stepped onto an item keeps going. Only the
/// first hop over the interaction relation passes through an item; the bare
/// interaction edge is the pair itself, not a pattern.
fn continues_through_item(schema: &Schema, step: usize, r: RelationId) -> bool {
    step == 1 && r == schema.interaction()
}

/// All type-valid patterns of length `1..=max_len` under the walk rules used
/// by the miner (stop at the first item reached, except via a first-hop
/// interaction edge). Sorted by length, then relation ids.
pub fn enumerate_schema_patterns(schema: &Schema, max_len: usize) -> Vec<Pattern> {
    fn rec(schema: &Schema, max_len: usize, prefix: &mut Vec<RelationId>, out: &mut Vec<Pattern>) {
        if prefix.len() == max_len {
            return;
        }
        let at = match prefix.last() {
            Some(&r) => schema.relation(r).tail_type,
            None => schema.user_type(),
        };
        let rels: Vec<RelationId> = schema.outgoing(at).map(|r| r.id).collect();
        for r in rels {
            prefix.push(r);
            let tail = schema.relation(r).tail_type;
            if tail == schema.item_type() && !continues_through_item(schema, prefix.len(), r) {
                out.push(Pattern::new(prefix.clone()));
            } else {
                rec(schema, max_len, prefix, out);
            }
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(schema, max_len, &mut Vec::new(), &mut out);
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.relations.cmp(&b.relations)));
    out
}

/// One random walk from `u`. Returns the relation sequence on success.
fn walk(graph: &KnowledgeGraph, u: EntityId, max_len: usize, rng: &mut ChaCha8Rng) -> Option<Vec<RelationId>> {
    let schema = graph.schema();
    let mut visited = vec![u];
    let mut relations = Vec::with_capacity(max_len);
    let mut at = u;
    for step in 1..=max_len {
        let degree = graph.out_degree(at);
        if degree == 0 {
            return None;
        }
        let mut k = rng.random_range(0..degree);
        let mut next = None;
        for (r, tails) in graph.outgoing(at) {
            if k < tails.len() {
                next = Some((*r, tails[k]));
                break;
            }
            k -= tails.len();
        }
        let (r, e) = next.expect("index within degree");
        if visited.contains(&e) {
            return None;
        }
        visited.push(e);
        relations.push(r);
        at = e;
        if graph.is_item(e) && !continues_through_item(schema, step, r) {
            return graph.has_interaction(u, e).then_some(relations);
        }
    }
    None
}

/// Mines up to `max_patterns` user-centric patterns from random walks that
/// connect users to their interacted items.
///
/// Patterns are ordered by descending walk frequency, ties broken by the
/// relation-id sequence.
pub fn mine_patterns(graph: &KnowledgeGraph, cfg: &MineConfig) -> Vec<Pattern> {
    assert!(cfg.max_len >= 1, "max_len must be at least 1");
    let users: Vec<EntityId> = graph
        .users()
        .iter()
        .copied()
        .filter(|&u| !graph.interacted_items(u).is_empty())
        .collect();

    let per_user: Vec<HashMap<Vec<RelationId>, u64>> = users
        .par_iter()
        .map(|&u| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u.0 as u64));
            let walks = cfg.walks_per_pair * graph.interacted_items(u).len();
            let mut counts = HashMap::new();
            for _ in 0..walks {
                if let Some(seq) = walk(graph, u, cfg.max_len, &mut rng) {
                    *counts.entry(seq).or_insert(0) += 1;
                }
            }
            counts
        })
        .collect();

    let mut total: BTreeMap<Vec<RelationId>, u64> = BTreeMap::new();
    for counts in per_user {
        for (seq, c) in counts {
            *total.entry(seq).or_insert(0) += c;
        }
    }
    let mut patterns: Vec<Pattern> = total
        .into_iter()
        .map(|(relations, frequency)| Pattern { relations, frequency })
        .collect();
    patterns.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.relations.cmp(&b.relations)));
    patterns.truncate(cfg.max_patterns);
    if patterns.is_empty() {
        log::warn!("no user-centric walk reached an interacted item; candidate pattern set is empty");
    }
    patterns
}

/// Calls `visit` for every simple path from `u` instantiating `pattern` and
/// ending at an item `u` interacted with, in adjacency order.
pub fn for_each_pattern_path(
    graph: &KnowledgeGraph,
    u: EntityId,
    pattern: &[RelationId],
    visit: &mut dyn FnMut(&ReasoningPath),
) {
    fn rec(
        graph: &KnowledgeGraph,
        u: EntityId,
        pattern: &[RelationId],
        path: &mut ReasoningPath,
        visit: &mut dyn FnMut(&ReasoningPath),
    ) {
        let depth = path.len();
        if depth == pattern.len() {
            let end = path.last();
            if graph.is_item(end) && graph.has_interaction(u, end) {
                visit(path);
            }
            return;
        }
        let r = pattern[depth];
        for &e in graph.neighbors(path.last(), r) {
            if path.contains(e) {
                continue;
            }
            path.relations.push(r);
            path.entities.push(e);
            rec(graph, u, pattern, path, visit);
            path.relations.pop();
            path.entities.pop();
        }
    }
    let mut path = ReasoningPath::new(u);
    rec(graph, u, pattern, &mut path, visit);
}

/// Per user: up to `per_user_cap` training paths for each candidate pattern,
/// uniformly sampled from all conforming simple paths to interacted items.
pub fn collect_training_paths(
    graph: &KnowledgeGraph,
    patterns: &[Pattern],
    per_user_cap: usize,
    seed: u64,
) -> BTreeMap<EntityId, Vec<PathSample>> {
    let users: Vec<EntityId> = graph
        .users()
        .iter()
        .copied()
        .filter(|&u| !graph.interacted_items(u).is_empty())
        .collect();
    let lists: Vec<(EntityId, Vec<PathSample>)> = users
        .par_iter()
        .map(|&u| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ 0x5eed_7a7b, u.0 as u64));
            let mut samples = Vec::new();
            if per_user_cap == 0 {
                return (u, samples);
            }
            for (j, p) in patterns.iter().enumerate() {
                let mut reservoir: Vec<ReasoningPath> = Vec::new();
                let mut seen = 0usize;
                for_each_pattern_path(graph, u, &p.relations, &mut |path| {
                    seen += 1;
                    if reservoir.len() < per_user_cap {
                        reservoir.push(path.clone());
                    } else {
                        let k = rng.random_range(0..seen);
                        if k < per_user_cap {
                            reservoir[k] = path.clone();
                        }
                    }
                });
                reservoir.shuffle(&mut rng);
                samples.extend(reservoir.into_iter().map(|path| PathSample { pattern: j, path }));
            }
            (u, samples)
        })
        .collect();
    lists.into_iter().collect()
}

/// `rank<TAB>relation_name_sequence<TAB>frequency`, ranks starting at 1.
/// `header` lines are written as `#` comments first.
pub fn write_patterns(path: &Path, schema: &Schema, patterns: &[Pattern], header: &[String]) -> Result<()> {
    let mut s = String::new();
    for h in header {
        let _ = writeln!(s, "# {h}");
    }
    for (i, p) in patterns.iter().enumerate() {
        let _ = writeln!(s, "{}\t{}\t{}", i + 1, p.display(schema), p.frequency);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads a pattern file back; returns the patterns and the `#` header lines.
pub fn read_patterns(path: &Path, schema: &Schema) -> Result<(Vec<Pattern>, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut patterns = Vec::new();
    let mut header = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let err = |m: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: m,
        };
        if let Some(h) = line.strip_prefix('#') {
            header.push(h.trim().to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", f.len())));
        }
        let rank: usize = f[0].parse().map_err(|_| err(format!("bad rank `{}`", f[0])))?;
        if rank != patterns.len() + 1 {
            return Err(err(format!("rank {rank} out of order")));
        }
        let mut p = Pattern::parse(f[1], schema).map_err(|e| err(e.to_string()))?;
        p.frequency = f[2].parse().map_err(|_| err(format!("bad frequency `{}`", f[2])))?;
        patterns.push(p);
    }
    Ok((patterns, header))
}
