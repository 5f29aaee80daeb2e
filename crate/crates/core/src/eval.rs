//! End-to-end pipeline in memory, evaluation drivers, timing and sweeps.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::embed::pretrain_embeddings;
use crate::error::Result;
use crate::graph::{EntityId, KnowledgeGraph};
use crate::metrics::{macro_average, metrics_at_k, Metrics};
use crate::miner::{collect_training_paths, mine_patterns, PathSample, Pattern};
use crate::ppr::{build_layout_tree, individual_reason, ppr, recommend, Recommendation};
use crate::profile::{compose_prior, compose_user, ProfileVariant, UserProfile};
use crate::reasoner::{train, ReasonerModel, TrainReport};
use crate::seed::derive_seed;

/// Mined patterns, training paths and the trained reasoner.
#[derive(Clone, Debug)]
pub struct System {
    pub patterns: Vec<Pattern>,
    pub samples: BTreeMap<EntityId, Vec<PathSample>>,
    pub model: ReasonerModel,
    pub train_report: TrainReport,
}

pub fn training_paths(graph: &KnowledgeGraph, patterns: &[Pattern], cfg: &RunConfig) -> BTreeMap<EntityId, Vec<PathSample>> {
    collect_training_paths(graph, patterns, cfg.paths_per_pattern, cfg.path_seed())
}

/// Samples of every user in user order.
pub fn flatten_samples(samples: &BTreeMap<EntityId, Vec<PathSample>>) -> Vec<PathSample> {
    samples.values().flatten().cloned().collect()
}

/// Pretrains embeddings and trains a reasoner for `patterns`.
pub fn train_model(
    graph: &KnowledgeGraph,
    patterns: &[Pattern],
    samples: &BTreeMap<EntityId, Vec<PathSample>>,
    cfg: &RunConfig,
) -> Result<(ReasonerModel, TrainReport)> {
    let emb = pretrain_embeddings(graph, &cfg.pretrain());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed());
    let mut model = ReasonerModel::new(emb, patterns.to_vec(), cfg.hyper(), &mut rng)?;
    let report = train(graph, &mut model, &flatten_samples(samples))?;
    Ok((model, report))
}

/// Mine, collect training paths, pretrain and train.
pub fn fit(graph: &KnowledgeGraph, cfg: &RunConfig) -> Result<System> {
    cfg.validate()?;
    let patterns = mine_patterns(graph, &cfg.mine());
    let samples = training_paths(graph, &patterns, cfg);
    let (model, train_report) = train_model(graph, &patterns, &samples, cfg)?;
    Ok(System {
        patterns,
        samples,
        model,
        train_report,
    })
}

/// Per-user pattern availability for the unseen-pattern study: a uniform
/// random subset of `round(keep * M)` patterns.
pub fn kept_patterns(num_patterns: usize, keep: f64, seed: u64, u: EntityId) -> Vec<bool> {
    let n = ((keep * num_patterns as f64).round() as usize).min(num_patterns);
    let mut idx: Vec<usize> = (0..num_patterns).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u.0 as u64)));
    let mut out = vec![false; num_patterns];
    for &j in &idx[..n] {
        out[j] = true;
    }
    out
}

/// Profile for `u` with only the patterns marked in `kept` usable.
pub fn compose_restricted(
    sys: &System,
    graph: &KnowledgeGraph,
    u: EntityId,
    variant: ProfileVariant,
    cfg: &RunConfig,
    kept: Option<&[bool]>,
) -> Result<UserProfile> {
    let all = sys.samples.get(&u).map_or(&[][..], |v| v.as_slice());
    let pcfg = cfg.profile();
    let Some(kept) = kept else {
        return compose_user(&sys.model, graph, u, &sys.patterns, all, variant, &pcfg);
    };
    if variant == ProfileVariant::Prior {
        let masked: Vec<Pattern> = sys
            .patterns
            .iter()
            .zip(kept)
            .map(|(p, &k)| Pattern { frequency: if k { p.frequency.max(1) } else { 0 }, ..p.clone() })
            .collect();
        let entries: Vec<_> = compose_prior(&masked, pcfg.budget)
            .into_iter()
            .filter(|e| kept[e.pattern])
            .collect();
        let total: usize = entries.iter().map(|e| e.weight).sum();
        return Ok(UserProfile { user: u, entries, budget: pcfg.budget, under_budget: total < pcfg.budget });
    }
    let samples: Vec<PathSample> = all.iter().filter(|s| kept[s.pattern]).cloned().collect();
    compose_user(&sys.model, graph, u, &sys.patterns, &samples, variant, &pcfg)
}

/// Profile, batch reasoning and ranking for one user.
pub fn recommend_user(
    sys: &System,
    graph: &KnowledgeGraph,
    profile: &UserProfile,
    cfg: &RunConfig,
) -> Result<Vec<Recommendation>> {
    if profile.entries.is_empty() {
        return Ok(Vec::new());
    }
    let tree = build_layout_tree(profile, &sys.patterns)?;
    let (paths, _) = ppr(graph, &sys.model, profile.user, &tree, cfg.reason())?;
    recommend(graph, &sys.model, profile.user, &paths, cfg.top_n, cfg.exclude_train)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserMetrics {
    pub user: String,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: ProfileVariant,
    pub k: usize,
    pub users: usize,
    pub metrics: Metrics,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_user: Vec<UserMetrics>,
}

/// Test items grouped by user; users in id order.
pub fn group_test(test: &[(EntityId, EntityId)]) -> BTreeMap<EntityId, HashSet<EntityId>> {
    let mut m: BTreeMap<EntityId, HashSet<EntityId>> = BTreeMap::new();
    for &(u, i) in test {
        m.entry(u).or_default().insert(i);
    }
    m
}

/// Full pipeline per test user, macro-averaged. With `keep` set, each user
/// composes the profile from a random fraction of the candidate patterns.
pub fn evaluate_with(
    sys: &System,
    graph: &KnowledgeGraph,
    test: &[(EntityId, EntityId)],
    variant: ProfileVariant,
    cfg: &RunConfig,
    keep: Option<f64>,
) -> Result<MetricsReport> {
    let groups: Vec<(EntityId, HashSet<EntityId>)> = group_test(test).into_iter().collect();
    let per_user: Vec<UserMetrics> = groups
        .par_iter()
        .map(|(u, relevant)| {
            let kept = keep.map(|f| kept_patterns(sys.patterns.len(), f, cfg.keep_seed(), *u));
            let profile = compose_restricted(sys, graph, *u, variant, cfg, kept.as_deref())?;
            let recs = recommend_user(sys, graph, &profile, cfg)?;
            let items: Vec<EntityId> = recs.iter().map(|r| r.item).collect();
            let metrics = metrics_at_k(&items, relevant, cfg.top_n).unwrap_or_default();
            Ok(UserMetrics { user: graph.entity_name(*u).to_string(), metrics })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        variant,
        k: cfg.top_n,
        users: per_user.len(),
        metrics: macro_average(per_user.iter().map(|m| &m.metrics)),
        config_hash: cfg.hash(),
        per_user,
    })
}

pub fn evaluate(
    sys: &System,
    graph: &KnowledgeGraph,
    test: &[(EntityId, EntityId)],
    variant: ProfileVariant,
    cfg: &RunConfig,
) -> Result<MetricsReport> {
    evaluate_with(sys, graph, test, variant, cfg, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnseenReport {
    pub keep_fraction: f64,
    pub full: MetricsReport,
    pub reduced: MetricsReport,
    /// Relative decrease of each metric in percent; 0 where the full value is 0.
    pub decrease: Metrics,
}

fn rel_drop(full: f64, reduced: f64) -> f64 {
    if full == 0.0 {
        0.0
    } else {
        100.0 * (full - reduced) / full
    }
}

pub fn unseen_pattern_eval(
    sys: &System,
    graph: &KnowledgeGraph,
    test: &[(EntityId, EntityId)],
    cfg: &RunConfig,
) -> Result<UnseenReport> {
    let full = evaluate(sys, graph, test, ProfileVariant::Cafe, cfg)?;
    let reduced = evaluate_with(sys, graph, test, ProfileVariant::Cafe, cfg, Some(cfg.keep_fraction))?;
    let (a, b) = (full.metrics, reduced.metrics);
    let decrease = Metrics {
        ndcg: rel_drop(a.ndcg, b.ndcg),
        recall: rel_drop(a.recall, b.recall),
        hit_rate: rel_drop(a.hit_rate, b.hit_rate),
        precision: rel_drop(a.precision, b.precision),
    };
    Ok(UnseenReport {
        keep_fraction: cfg.keep_fraction,
        full,
        reduced,
        decrease,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ppr,
    Individual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    /// `rec` (recommendations for `n` users) or `path` (finding `n` paths).
    pub task: String,
    pub n: usize,
    pub method: Method,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub repetitions: usize,
    /// Module forward calls in one repetition.
    pub module_calls: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub threads: usize,
}

impl Machine {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub machine: Machine,
    pub rows: Vec<TimingRow>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// One pass of either task; returns the number of module calls.
fn run_task(
    sys: &System,
    graph: &KnowledgeGraph,
    users: &[EntityId],
    cfg: &RunConfig,
    method: Method,
    rec_users: Option<usize>,
    paths: Option<usize>,
) -> Result<usize> {
    let reason = |u: EntityId, profile: &UserProfile| -> Result<(Vec<crate::ppr::ScoredPath>, usize)> {
        let tree = build_layout_tree(profile, &sys.patterns)?;
        let (p, s) = match method {
            Method::Ppr => ppr(graph, &sys.model, u, &tree, cfg.reason())?,
            Method::Individual => individual_reason(graph, &sys.model, u, &tree, cfg.reason())?,
        };
        Ok((p, s.module_calls))
    };
    let mut calls = 0;
    if let Some(n) = rec_users {
        for k in 0..n {
            let u = users[k % users.len()];
            let profile = compose_restricted(sys, graph, u, ProfileVariant::Cafe, cfg, None)?;
            if profile.entries.is_empty() {
                continue;
            }
            let (p, c) = reason(u, &profile)?;
            calls += c;
            std::hint::black_box(recommend(graph, &sys.model, u, &p, cfg.top_n, cfg.exclude_train)?);
        }
    }
    if let Some(target) = paths {
        let profiles: Vec<UserProfile> = users
            .iter()
            .map(|&u| compose_restricted(sys, graph, u, ProfileVariant::Cafe, cfg, None))
            .collect::<Result<_>>()?;
        if profiles.iter().all(|p| p.entries.is_empty()) {
            return Ok(0);
        }
        let mut found = 0;
        let mut k = 0;
        while found < target {
            let p = &profiles[k % profiles.len()];
            k += 1;
            if p.entries.is_empty() {
                continue;
            }
            let (out, c) = reason(p.user, p)?;
            calls += c;
            found += out.len().max(1);
        }
    }
    Ok(calls)
}

/// Wall-clock timing of batch and one-by-one reasoning: recommendations for
/// `n_users` users (profile composition included) and finding `n_paths`
/// paths (profiles precomputed). Runs on the calling thread.
pub fn bench(
    sys: &System,
    graph: &KnowledgeGraph,
    users: &[EntityId],
    n_users: usize,
    n_paths: usize,
    repetitions: usize,
    cfg: &RunConfig,
) -> Result<BenchReport> {
    let mut rows = Vec::new();
    if users.is_empty() || n_users == 0 && n_paths == 0 {
        return Ok(BenchReport { machine: Machine::current(), rows });
    }
    let reps = repetitions.max(1);
    for (task, n) in [("rec", n_users), ("path", n_paths)] {
        if n == 0 {
            continue;
        }
        for method in [Method::Ppr, Method::Individual] {
            let mut times = Vec::with_capacity(reps);
            let mut calls = 0;
            for _ in 0..reps {
                let start = Instant::now();
                calls = if task == "rec" {
                    run_task(sys, graph, users, cfg, method, Some(n), None)?
                } else {
                    run_task(sys, graph, users, cfg, method, None, Some(n))?
                };
                times.push(start.elapsed().as_secs_f64() * 1e3);
            }
            let (mean_ms, std_ms) = mean_std(&times);
            rows.push(TimingRow {
                task: task.to_string(),
                n,
                method,
                mean_ms,
                std_ms,
                repetitions: reps,
                module_calls: calls,
            });
        }
    }
    Ok(BenchReport { machine: Machine::current(), rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub metrics: Metrics,
}

/// Retrains for every `lambda` with everything else, seeds included, fixed.
pub fn sweep_lambda(
    graph: &KnowledgeGraph,
    test: &[(EntityId, EntityId)],
    cfg: &RunConfig,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    let patterns = mine_patterns(graph, &cfg.mine());
    let samples = training_paths(graph, &patterns, cfg);
    let mut rows = Vec::new();
    for &lambda in values {
        let c = RunConfig { lambda, ..cfg.clone() };
        let (model, train_report) = train_model(graph, &patterns, &samples, &c)?;
        let sys = System {
            patterns: patterns.clone(),
            samples: samples.clone(),
            model,
            train_report,
        };
        let r = evaluate(&sys, graph, test, ProfileVariant::Cafe, &c)?;
        rows.push(SweepRow { param: "lambda".into(), value: lambda, metrics: r.metrics });
    }
    Ok(rows)
}

/// Re-runs inference for every path budget `K`.
pub fn sweep_budget(
    sys: &System,
    graph: &KnowledgeGraph,
    test: &[(EntityId, EntityId)],
    cfg: &RunConfig,
    values: &[usize],
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&k| {
            let c = RunConfig { budget: k, ..cfg.clone() };
            let r = evaluate(sys, graph, test, ProfileVariant::Cafe, &c)?;
            Ok(SweepRow { param: "K".into(), value: k as f64, metrics: r.metrics })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("param,value,ndcg,recall,hit_rate,precision\n");
    for r in rows {
        let m = r.metrics;
        let _ = writeln!(
            s,
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            r.param, r.value, m.ndcg, m.recall, m.hit_rate, m.precision
        );
    }
    s
}
