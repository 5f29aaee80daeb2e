//! Fine stage: the layout tree built from a user profile, profile-guided
//! batch path reasoning over it, the one-path-at-a-time baseline, and the
//! final item ranking.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, ReasoningPath, RelationId};
use crate::miner::Pattern;
use crate::profile::UserProfile;
use crate::reasoner::{HopCache, ReasonerModel};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    /// `None` at the root.
    pub relation: Option<RelationId>,
    /// Expansion count `n_x`.
    pub count: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub depth: usize,
    /// Pattern index when a profile pattern ends here.
    pub pattern: Option<usize>,
}

/// Prefix-merged profile patterns. Node 0 is the root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutTree {
    pub nodes: Vec<TreeNode>,
}

impl LayoutTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.len() <= 1
    }

    /// Node ids in breadth-first order, root first.
    pub fn level_order(&self) -> Vec<usize> {
        let mut out = vec![0];
        let mut k = 0;
        while k < out.len() {
            out.extend_from_slice(&self.nodes[out[k]].children);
            k += 1;
        }
        out
    }

    /// Leaf ids in insertion order of their patterns.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].pattern.is_some()).collect()
    }

    /// Node ids from the first hop down to `node`.
    pub fn chain(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut at = node;
        while let Some(p) = self.nodes[at].parent {
            out.push(at);
            at = p;
        }
        out.reverse();
        out
    }

    /// Product of counts from the first hop down to `node`.
    pub fn path_count(&self, node: usize) -> usize {
        self.chain(node).iter().map(|&x| self.nodes[x].count).product()
    }
}

/// Builds the layout tree of `profile`. Leaves start at their pattern weight;
/// bottom-up, each internal node takes the minimum of its children and each
/// child is then refreshed to `floor(n_c / n_x)`, clamped to at least 1. The
/// root count is 1.
pub fn build_layout_tree(profile: &UserProfile, patterns: &[Pattern]) -> Result<LayoutTree> {
    if profile.entries.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let mut nodes = vec![TreeNode {
        relation: None,
        count: 1,
        parent: None,
        children: Vec::new(),
        depth: 0,
        pattern: None,
    }];
    for e in &profile.entries {
        let p = patterns
            .get(e.pattern)
            .ok_or_else(|| Error::InvalidPattern(format!("pattern index {} out of range", e.pattern)))?;
        if p.is_empty() {
            return Err(Error::InvalidPattern("empty pattern in profile".into()));
        }
        let mut at = 0;
        for &r in &p.relations {
            if nodes[at].pattern.is_some() {
                return Err(Error::InvalidPattern(format!(
                    "pattern {} extends another profile pattern",
                    e.pattern
                )));
            }
            at = match nodes[at].children.iter().copied().find(|&c| nodes[c].relation == Some(r)) {
                Some(c) => c,
                None => {
                    let id = nodes.len();
                    let depth = nodes[at].depth + 1;
                    nodes.push(TreeNode {
                        relation: Some(r),
                        count: 0,
                        parent: Some(at),
                        children: Vec::new(),
                        depth,
                        pattern: None,
                    });
                    nodes[at].children.push(id);
                    id
                }
            };
        }
        if !nodes[at].children.is_empty() || nodes[at].pattern.is_some() {
            return Err(Error::InvalidPattern(format!(
                "pattern {} is a prefix of, or equal to, another profile pattern",
                e.pattern
            )));
        }
        nodes[at].pattern = Some(e.pattern);
        nodes[at].count = e.weight;
    }
    // children always have larger ids than their parent
    for x in (1..nodes.len()).rev() {
        if nodes[x].children.is_empty() {
            continue;
        }
        let n = nodes[x].children.iter().map(|&c| nodes[c].count).min().expect("nonempty");
        nodes[x].count = n;
        for c in nodes[x].children.clone() {
            nodes[c].count = (nodes[c].count / n).max(1);
        }
    }
    Ok(LayoutTree { nodes })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonOptions {
    /// Skip items the user already interacted with when expanding the last
    /// hop of a pattern.
    pub mask_interacted: bool,
}

/// A reasoning path with the pattern it instantiates and its final-hop score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredPath {
    pub path: ReasoningPath,
    pub pattern: usize,
    /// `<x_leaf, e_T>`
    pub score: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonStats {
    pub module_calls: usize,
    pub expansions: usize,
}

/// Up to `n` neighbors of `path.last()` under `r` ranked by `<x, e>`, ties to
/// the lower id. Entities already on the path are skipped.
fn top_neighbors(
    graph: &KnowledgeGraph,
    model: &ReasonerModel,
    path: &ReasoningPath,
    r: RelationId,
    x: ArrayView1<f64>,
    n: usize,
    mask_user: Option<EntityId>,
) -> Vec<(EntityId, f64)> {
    let mut cands: Vec<(EntityId, f64)> = graph
        .neighbors(path.last(), r)
        .iter()
        .copied()
        .filter(|&e| !path.contains(e))
        .filter(|&e| mask_user.is_none_or(|u| !graph.has_interaction(u, e)))
        .map(|e| (e, x.dot(&model.embedding(e))))
        .collect();
    let cmp = |a: &(EntityId, f64), b: &(EntityId, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
    if cands.len() > n {
        cands.select_nth_unstable_by(n, cmp);
        cands.truncate(n);
    }
    cands.sort_by(cmp);
    cands
}

fn check_user(graph: &KnowledgeGraph, model: &ReasonerModel, u: EntityId) -> Result<()> {
    if !graph.contains(u) || !graph.is_user(u) {
        return Err(Error::UnknownEntity(u.to_string()));
    }
    if u.index() >= model.num_entities() {
        return Err(Error::MissingEmbedding(u));
    }
    Ok(())
}

fn check_modules(tree: &LayoutTree, model: &ReasonerModel) -> Result<()> {
    for n in &tree.nodes[1..] {
        model.module(n.relation.expect("non-root"))?;
    }
    Ok(())
}

/// Profile-guided batch reasoning: one module call per tree node, in level
/// order, with every partial path at a node expanded by the same predicted
/// embedding.
pub fn ppr(
    graph: &KnowledgeGraph,
    model: &ReasonerModel,
    u: EntityId,
    tree: &LayoutTree,
    opts: ReasonOptions,
) -> Result<(Vec<ScoredPath>, ReasonStats)> {
    check_user(graph, model, u)?;
    check_modules(tree, model)?;
    let mut stats = ReasonStats::default();
    let uvec = model.embedding(u);
    let mut xhat: Vec<Option<Array1<f64>>> = vec![None; tree.len()];
    let mut frontier: Vec<Vec<ReasoningPath>> = vec![Vec::new(); tree.len()];
    xhat[0] = Some(uvec.to_owned());
    frontier[0] = vec![ReasoningPath::new(u)];
    let mut out = Vec::new();

    for x in tree.level_order().into_iter().skip(1) {
        let node = &tree.nodes[x];
        let parent = node.parent.expect("non-root");
        let parents = &frontier[parent];
        if parents.is_empty() {
            continue;
        }
        let r = node.relation.expect("non-root");
        let p = xhat[parent].as_ref().expect("parent computed first");
        let xv = model.module_forward(r, uvec, p.view())?;
        stats.module_calls += 1;
        let mask = (opts.mask_interacted && node.pattern.is_some()).then_some(u);
        let mut next = Vec::new();
        for path in parents {
            for (e, s) in top_neighbors(graph, model, path, r, xv.view(), node.count, mask) {
                stats.expansions += 1;
                let q = path.extended(r, e);
                if let Some(j) = node.pattern {
                    if graph.is_item(e) {
                        let mut q = q;
                        q.score = Some(s);
                        out.push(ScoredPath { path: q, pattern: j, score: s });
                    }
                } else {
                    next.push(q);
                }
            }
        }
        frontier[x] = next;
        xhat[x] = Some(xv);
    }
    if out.is_empty() {
        log::debug!("no path survived reasoning for user {u}");
    }
    Ok((out, stats))
}

/// The same selection as [`ppr`], run pattern by pattern and path by path.
/// Each expansion recomputes the predicted embedding from the root.
pub fn individual_reason(
    graph: &KnowledgeGraph,
    model: &ReasonerModel,
    u: EntityId,
    tree: &LayoutTree,
    opts: ReasonOptions,
) -> Result<(Vec<ScoredPath>, ReasonStats)> {
    check_user(graph, model, u)?;
    check_modules(tree, model)?;
    let mut stats = ReasonStats::default();
    let mut out = Vec::new();
    for leaf in tree.leaves() {
        let chain = tree.chain(leaf);
        let j = tree.nodes[leaf].pattern.expect("leaf");
        dfs(graph, model, u, tree, &chain, &ReasoningPath::new(u), j, opts, &mut stats, &mut out)?;
    }
    Ok((out, stats))
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    graph: &KnowledgeGraph,
    model: &ReasonerModel,
    u: EntityId,
    tree: &LayoutTree,
    chain: &[usize],
    path: &ReasoningPath,
    pattern: usize,
    opts: ReasonOptions,
    stats: &mut ReasonStats,
    out: &mut Vec<ScoredPath>,
) -> Result<()> {
    let level = path.len();
    let uvec = model.embedding(u);
    let mut xv = uvec.to_owned();
    for &x in &chain[..=level] {
        xv = model.module_forward(tree.nodes[x].relation.expect("non-root"), uvec, xv.view())?;
        stats.module_calls += 1;
    }
    let node = &tree.nodes[chain[level]];
    let r = node.relation.expect("non-root");
    let last = level + 1 == chain.len();
    let mask = (opts.mask_interacted && last).then_some(u);
    for (e, s) in top_neighbors(graph, model, path, r, xv.view(), node.count, mask) {
        stats.expansions += 1;
        let mut q = path.extended(r, e);
        if last {
            if graph.is_item(e) {
                q.score = Some(s);
                out.push(ScoredPath { path: q, pattern, score: s });
            }
        } else {
            dfs(graph, model, u, tree, chain, &q, pattern, opts, stats, out)?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub item: EntityId,
    pub score: f64,
    pub path: ReasoningPath,
    pub pattern: usize,
}

/// Ranks item endpoints by final-hop score, breaking exact ties by path
/// log-probability and then item id. Keeps the best path per item and
/// returns at most `n`.
pub fn recommend(
    graph: &KnowledgeGraph,
    model: &ReasonerModel,
    u: EntityId,
    paths: &[ScoredPath],
    n: usize,
    exclude_train: bool,
) -> Result<Vec<Recommendation>> {
    let cands: Vec<&ScoredPath> = paths
        .iter()
        .filter(|p| p.path.user() == u && graph.is_item(p.path.last()))
        .filter(|p| !(exclude_train && graph.has_interaction(u, p.path.last())))
        .collect();
    // log-probabilities only for scores that collide
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for p in &cands {
        *counts.entry(p.score.to_bits()).or_default() += 1;
    }
    let mut cache = HopCache::default();
    let mut logp = Vec::with_capacity(cands.len());
    for p in &cands {
        logp.push(if counts[&p.score.to_bits()] > 1 {
            model.path_log_prob_cached(graph, &p.path, &mut cache)?
        } else {
            0.0
        });
    }
    let mut order: Vec<usize> = (0..cands.len()).collect();
    order.sort_by(|&a, &b| {
        cands[b]
            .score
            .total_cmp(&cands[a].score)
            .then(logp[b].total_cmp(&logp[a]))
            .then(cands[a].path.last().cmp(&cands[b].path.last()))
            .then(cands[a].path.key().cmp(&cands[b].path.key()))
    });
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for k in order {
        let p = cands[k];
        if seen.insert(p.path.last()) {
            out.push(Recommendation {
                item: p.path.last(),
                score: p.score,
                path: p.path.clone(),
                pattern: p.pattern,
            });
            if out.len() == n {
                break;
            }
        }
    }
    if out.is_empty() {
        log::debug!("no recommendable item endpoints for user {u}");
    }
    Ok(out)
}

/// Tree build, batch reasoning and ranking for one user. An empty profile
/// yields no recommendations.
pub fn recommend_for_profile(
    graph: &KnowledgeGraph,
    model: &ReasonerModel,
    profile: &UserProfile,
    n: usize,
    exclude_train: bool,
    opts: ReasonOptions,
) -> Result<Vec<Recommendation>> {
    if profile.entries.is_empty() {
        return Ok(Vec::new());
    }
    let tree = build_layout_tree(profile, &model.patterns)?;
    let (paths, _) = ppr(graph, model, profile.user, &tree, opts)?;
    recommend(graph, model, profile.user, &paths, n, exclude_train)
}

/// `user_id<TAB>rank<TAB>item_id<TAB>score<TAB>path`, ranks from 1. Scores
/// are printed in shortest round-trip form.
pub fn write_recommendations(
    path: &Path,
    graph: &KnowledgeGraph,
    recs: &[(EntityId, Vec<Recommendation>)],
    header: &[String],
) -> Result<()> {
    let mut s = String::new();
    for h in header {
        let _ = writeln!(s, "# {h}");
    }
    for (u, list) in recs {
        for (k, r) in list.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{:?}\t{}",
                graph.entity_name(*u),
                k + 1,
                graph.entity_name(r.item),
                r.score,
                graph.format_path(&r.path)
            );
        }
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Parsed line of a recommendations file.
#[derive(Clone, Debug, PartialEq)]
pub struct RecommendationRow {
    pub user: String,
    pub rank: usize,
    pub item: String,
    pub score: f64,
    pub path: String,
}

pub fn read_recommendations(path: &Path) -> Result<(Vec<RecommendationRow>, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
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
        if f.len() != 5 {
            return Err(err(format!("expected 5 fields, found {}", f.len())));
        }
        rows.push(RecommendationRow {
            user: f[0].to_string(),
            rank: f[1].parse().map_err(|_| err(format!("bad rank `{}`", f[1])))?,
            item: f[2].to_string(),
            score: f[3].parse().map_err(|_| err(format!("bad score `{}`", f[3])))?,
            path: f[4].to_string(),
        });
    }
    Ok((rows, header))
}

/// Sort key that orders scored paths deterministically; handy for set
/// comparisons.
pub fn path_set(paths: &[ScoredPath]) -> Vec<(Vec<EntityId>, Vec<RelationId>, usize)> {
    let mut v: Vec<_> = paths
        .iter()
        .map(|p| {
            let (e, r) = p.path.key();
            (e, r, p.pattern)
        })
        .collect();
    v.sort();
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EntityType, Schema};
    use crate::profile::ProfileEntry;
    use crate::reasoner::{Hyperparams, RelationModule};
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile(entries: &[(usize, usize)]) -> UserProfile {
        UserProfile {
            user: EntityId(0),
            entries: entries
                .iter()
                .map(|&(pattern, weight)| ProfileEntry { pattern, weight })
                .collect(),
            budget: entries.iter().map(|e| e.1).sum(),
            under_budget: false,
        }
    }

    fn pats(list: &[&[u32]]) -> Vec<Pattern> {
        list.iter()
            .map(|rs| Pattern::new(rs.iter().map(|&r| RelationId(r)).collect()))
            .collect()
    }

    fn counts(t: &LayoutTree) -> Vec<(Option<u32>, usize)> {
        t.nodes.iter().map(|n| (n.relation.map(|r| r.0), n.count)).collect()
    }

    #[test]
    fn tree_shared_prefix() {
        let t = build_layout_tree(&profile(&[(0, 6), (1, 4)]), &pats(&[&[1, 2], &[1, 3]])).unwrap();
        assert_eq!(counts(&t), vec![(None, 1), (Some(1), 4), (Some(2), 1), (Some(3), 1)]);
        assert_eq!(t.path_count(2), 4);
        assert_eq!(t.path_count(3), 4);
    }

    #[test]
    fn tree_single_chain() {
        let t = build_layout_tree(&profile(&[(0, 10)]), &pats(&[&[1, 2]])).unwrap();
        assert_eq!(counts(&t), vec![(None, 1), (Some(1), 10), (Some(2), 1)]);
        let t = build_layout_tree(&profile(&[(0, 10)]), &pats(&[&[1, 2, 3]])).unwrap();
        assert_eq!(counts(&t), vec![(None, 1), (Some(1), 10), (Some(2), 1), (Some(3), 1)]);
        let t = build_layout_tree(&profile(&[(0, 1)]), &pats(&[&[5]])).unwrap();
        assert_eq!(counts(&t), vec![(None, 1), (Some(5), 1)]);
    }

    #[test]
    fn tree_path_counts_never_exceed_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let m = rng.random_range(1..6);
            let mut all: Vec<Vec<u32>> = Vec::new();
            while all.len() < m {
                let p: Vec<u32> = (0..3).map(|_| rng.random_range(0..3)).collect();
                if !all.contains(&p) {
                    all.push(p);
                }
            }
            let patterns: Vec<Pattern> = all.iter().map(|p| Pattern::new(p.iter().map(|&r| RelationId(r)).collect())).collect();
            let entries: Vec<(usize, usize)> = (0..m).map(|j| (j, rng.random_range(1..11))).collect();
            let t = build_layout_tree(&profile(&entries), &patterns).unwrap();
            assert_eq!(t.root().count, 1);
            for leaf in t.leaves() {
                let j = t.nodes[leaf].pattern.unwrap();
                assert!(t.path_count(leaf) <= entries[j].1);
                assert!(t.path_count(leaf) >= 1);
            }
            assert!(t.nodes.iter().all(|n| n.count >= 1));
        }
    }

    #[test]
    fn tree_rejects_empty_and_prefix_profiles() {
        assert!(matches!(
            build_layout_tree(&profile(&[]), &pats(&[&[1]])),
            Err(Error::EmptyProfile)
        ));
        let p = pats(&[&[1], &[1, 2]]);
        assert!(build_layout_tree(&profile(&[(0, 2), (1, 2)]), &p).is_err());
        assert!(build_layout_tree(&profile(&[(1, 2), (0, 2)]), &p).is_err());
    }

    struct Toy {
        g: KnowledgeGraph,
        r1: RelationId,
        r2: RelationId,
        u: EntityId,
        mids: Vec<EntityId>,
        items: Vec<EntityId>,
    }

    /// user -r1-> three mids, each mid -r2-> its own item.
    fn toy() -> Toy {
        let mut s = Schema::new();
        s.add_type("user");
        s.add_type("item");
        s.add_type("mid");
        let purchase = s.add_relation("purchase", "user", "item", None).unwrap();
        let r1 = s.add_relation("r1", "user", "mid", None).unwrap();
        let r2 = s.add_relation("r2", "mid", "item", None).unwrap();
        s.set_roles("user", "item", "purchase").unwrap();
        let mut g = KnowledgeGraph::new(s);
        let u = g.add_entity("u", EntityType(0)).unwrap();
        let mids: Vec<_> = (0..3).map(|k| g.add_entity(&format!("m{k}"), EntityType(2)).unwrap()).collect();
        let items: Vec<_> = (0..4).map(|k| g.add_entity(&format!("i{k}"), EntityType(1)).unwrap()).collect();
        for k in 0..3 {
            g.add_triple(u, r1, mids[k]).unwrap();
            g.add_triple(mids[k], r2, items[k]).unwrap();
        }
        g.add_triple(u, purchase, items[3]).unwrap();
        Toy { g, r1, r2, u, mids, items }
    }

    /// d = 2 model whose modules return relu(u).
    fn identity_model(t: &Toy) -> ReasonerModel {
        let m = RelationModule {
            w1: array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]],
            w2: array![[1.0, 0.0], [0.0, 1.0]],
            w3: array![[1.0, 0.0], [0.0, 1.0]],
        };
        let mut emb = Array2::zeros((t.g.num_entities(), 2));
        emb.row_mut(t.u.index()).assign(&array![1.0, 0.5]);
        emb.row_mut(t.mids[0].index()).assign(&array![2.0, 0.0]);
        emb.row_mut(t.mids[1].index()).assign(&array![1.0, 0.0]);
        emb.row_mut(t.mids[2].index()).assign(&array![0.0, 2.0]);
        for (k, &i) in t.items.iter().enumerate() {
            emb.row_mut(i.index()).assign(&array![k as f64, 0.0]);
        }
        ReasonerModel {
            hyper: Hyperparams { dim: 2, hidden: 2, ..Hyperparams::default() },
            embeddings: emb,
            modules: [(t.r1, m.clone()), (t.r2, m)].into(),
            patterns: vec![Pattern::new(vec![t.r1, t.r2])],
        }
    }

    #[test]
    fn top_n_by_dot_product_ties_to_lower_id() {
        let t = toy();
        let m = identity_model(&t);
        let tree = build_layout_tree(&profile(&[(0, 2)]), &m.patterns).unwrap();
        let (paths, stats) = ppr(&t.g, &m, t.u, &tree, ReasonOptions::default()).unwrap();
        // scores of mids under x = [1, 0.5]: 2, 1, 1 -> m0 and m1
        let ends: Vec<EntityId> = paths.iter().map(|p| p.path.entities[1]).collect();
        assert_eq!(ends, vec![t.mids[0], t.mids[1]]);
        assert_eq!(stats.module_calls, 2);
        for p in &paths {
            t.g.validate_path(&p.path).unwrap();
        }
        let (ind, istats) = individual_reason(&t.g, &m, t.u, &tree, ReasonOptions::default()).unwrap();
        assert_eq!(path_set(&ind), path_set(&paths));
        // one call for the first hop, then two per partial path
        assert_eq!(istats.module_calls, 1 + 2 * 2);
    }

    #[test]
    fn forced_moves_ignore_weights() {
        let t = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut m = identity_model(&t);
        for module in m.modules.values_mut() {
            *module = RelationModule::xavier(2, 2, &mut rng);
        }
        m.embeddings.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        let tree = build_layout_tree(&profile(&[(0, 3)]), &m.patterns).unwrap();
        let (paths, _) = ppr(&t.g, &m, t.u, &tree, ReasonOptions::default()).unwrap();
        let mut ends: Vec<(EntityId, EntityId)> = paths.iter().map(|p| (p.path.entities[1], p.path.last())).collect();
        ends.sort();
        assert_eq!(ends, (0..3).map(|k| (t.mids[k], t.items[k])).collect::<Vec<_>>());
    }

    #[test]
    fn mask_skips_interacted_leaf_items() {
        let mut t = toy();
        let purchase = t.g.schema().interaction();
        t.g.add_triple(t.u, purchase, t.items[0]).unwrap();
        let m = identity_model(&t);
        let tree = build_layout_tree(&profile(&[(0, 3)]), &m.patterns).unwrap();
        let opts = ReasonOptions { mask_interacted: true };
        let (paths, _) = ppr(&t.g, &m, t.u, &tree, opts).unwrap();
        assert!(paths.iter().all(|p| p.path.last() != t.items[0]));
        assert_eq!(paths.len(), 2);
        let (ind, _) = individual_reason(&t.g, &m, t.u, &tree, opts).unwrap();
        assert_eq!(path_set(&ind), path_set(&paths));
    }

    fn scored(u: EntityId, r: RelationId, item: u32, score: f64) -> ScoredPath {
        let mut path = ReasoningPath::new(u).extended(r, EntityId(item));
        path.score = Some(score);
        ScoredPath { path, pattern: 0, score }
    }

    fn flat(n_items: usize) -> (KnowledgeGraph, ReasonerModel, RelationId) {
        let mut s = Schema::new();
        s.add_type("user");
        s.add_type("item");
        let purchase = s.add_relation("purchase", "user", "item", None).unwrap();
        let like = s.add_relation("like", "user", "item", None).unwrap();
        s.set_roles("user", "item", "purchase").unwrap();
        let mut g = KnowledgeGraph::new(s);
        let u = g.add_entity("u", EntityType(0)).unwrap();
        for k in 0..n_items {
            let i = g.add_entity(&format!("i{k}"), EntityType(1)).unwrap();
            g.add_triple(u, like, i).unwrap();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let emb = Array2::from_shape_fn((n_items + 1, 2), |_| rng.random_range(-1.0..1.0));
        let hyper = Hyperparams { dim: 2, hidden: 2, ..Hyperparams::default() };
        let m = ReasonerModel::new(emb, vec![Pattern::new(vec![like])], hyper, &mut rng).unwrap();
        let _ = purchase;
        (g, m, like)
    }

    #[test]
    fn recommend_dedups_and_sorts() {
        let (g, m, like) = flat(12);
        let u = EntityId(0);
        let mut paths: Vec<ScoredPath> = (1..=12).map(|k| scored(u, like, k, k as f64 * 0.5)).collect();
        paths.push(scored(u, like, 3, 100.0));
        paths.push(scored(u, like, 4, -5.0));
        paths.push(scored(u, like, 5, 0.1));
        let recs = recommend(&g, &m, u, &paths, 10, false).unwrap();
        assert_eq!(recs.len(), 10);
        assert_eq!(recs[0].item, EntityId(3));
        assert_eq!(recs[0].score, 100.0);
        assert!(recs.windows(2).all(|w| w[0].score >= w[1].score));
        let mut items: Vec<_> = recs.iter().map(|r| r.item).collect();
        items.dedup();
        assert_eq!(items.len(), 10);
    }

    #[test]
    fn recommend_breaks_score_ties_by_log_prob() {
        let (g, m, like) = flat(3);
        let u = EntityId(0);
        let paths = vec![scored(u, like, 1, 1.0), scored(u, like, 2, 1.0)];
        let recs = recommend(&g, &m, u, &paths, 10, false).unwrap();
        let lp = |i: u32| m.path_log_prob(&g, &ReasoningPath::new(u).extended(like, EntityId(i))).unwrap();
        let first = if lp(2) > lp(1) { 2 } else { 1 };
        assert_eq!(recs[0].item, EntityId(first));
    }

    #[test]
    fn recommend_excludes_training_items() {
        let (mut g, m, like) = flat(2);
        let u = EntityId(0);
        let purchase = g.schema().interaction();
        g.add_triple(u, purchase, EntityId(1)).unwrap();
        g.add_triple(u, purchase, EntityId(2)).unwrap();
        let paths = vec![scored(u, like, 1, 1.0), scored(u, like, 2, 2.0)];
        assert!(recommend(&g, &m, u, &paths, 10, true).unwrap().is_empty());
        assert_eq!(recommend(&g, &m, u, &paths, 10, false).unwrap().len(), 2);
    }

    #[test]
    fn batch_matches_individual_on_random_graphs() {
        let schema = Schema::amazon();
        let names = ["purchase", "produced_by", "belongs_to", "also_bought", "mentions", "describe_as"];
        let rel: Vec<RelationId> = names.iter().map(|n| schema.relation_by_name(n).unwrap()).collect();
        let inv = |r: RelationId| schema.inverse(r);
        let candidates = vec![
            Pattern::new(vec![rel[0], rel[1], inv(rel[1])]),
            Pattern::new(vec![rel[0], rel[2], inv(rel[2])]),
            Pattern::new(vec![rel[0], rel[3], inv(rel[3])]),
            Pattern::new(vec![rel[4], inv(rel[5])]),
            Pattern::new(vec![rel[0], inv(rel[0]), rel[0]]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let mut g = KnowledgeGraph::new(schema.clone());
            let ty = |n: &str| g.schema().type_by_name(n).unwrap();
            let (tu, ti, tw, tb, tc, trel) = (ty("user"), ty("item"), ty("word"), ty("brand"), ty("category"), ty("related_item"));
            let mk = |g: &mut KnowledgeGraph, n: usize, t, p: &str| -> Vec<EntityId> {
                (0..n).map(|k| g.add_entity(&format!("{p}{k}"), t).unwrap()).collect()
            };
            let users = mk(&mut g, 3, tu, "u");
            let items = mk(&mut g, 8, ti, "i");
            let words = mk(&mut g, 3, tw, "w");
            let brands = mk(&mut g, 2, tb, "b");
            let cats = mk(&mut g, 2, tc, "c");
            let related = mk(&mut g, 3, trel, "r");
            for &i in &items {
                g.add_triple(i, rel[1], brands[rng.random_range(0..2)]).unwrap();
                g.add_triple(i, rel[2], cats[rng.random_range(0..2)]).unwrap();
                g.add_triple(i, rel[3], related[rng.random_range(0..3)]).unwrap();
                g.add_triple(i, rel[5], words[rng.random_range(0..3)]).unwrap();
            }
            for &u in &users {
                for _ in 0..3 {
                    g.add_triple(u, rel[0], items[rng.random_range(0..8)]).unwrap();
                }
                g.add_triple(u, rel[4], words[rng.random_range(0..3)]).unwrap();
            }
            let d = 3;
            let emb = Array2::from_shape_fn((g.num_entities(), d), |_| rng.random_range(-1.0..1.0));
            let hyper = Hyperparams { dim: d, hidden: 4, ..Hyperparams::default() };
            let m = ReasonerModel::new(emb, candidates.clone(), hyper, &mut rng).unwrap();
            let mut entries: Vec<(usize, usize)> = Vec::new();
            for j in 0..candidates.len() {
                if rng.random_bool(0.7) {
                    entries.push((j, rng.random_range(1..6)));
                }
            }
            if entries.is_empty() {
                continue;
            }
            let tree = build_layout_tree(&profile(&entries), &candidates).unwrap();
            for &u in &users {
                let opts = ReasonOptions { mask_interacted: rng.random_bool(0.5) };
                let (a, sa) = ppr(&g, &m, u, &tree, opts).unwrap();
                let (b, sb) = individual_reason(&g, &m, u, &tree, opts).unwrap();
                assert_eq!(path_set(&a), path_set(&b));
                assert!(sa.module_calls <= tree.len() - 1);
                for p in &a {
                    g.validate_path(&p.path).unwrap();
                    assert_eq!(p.path.relations, candidates[p.pattern].relations);
                }
                for (j, w) in &entries {
                    assert!(a.iter().filter(|p| p.pattern == *j).count() <= *w);
                }
                let _ = sb;
            }
        }
    }
}
