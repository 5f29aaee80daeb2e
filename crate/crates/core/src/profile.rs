//! Coarse stage: pattern prominence per user and the weighted pattern
//! profile that fixes how many paths each pattern contributes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph};
use crate::miner::{PathSample, Pattern};
use crate::reasoner::{HopCache, ReasonerModel};
use crate::seed::derive_seed;

/// One profile entry: pattern index into the candidate set and its weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub pattern: usize,
    pub weight: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user: EntityId,
    /// Entries with positive weight, ordered by pattern index.
    pub entries: Vec<ProfileEntry>,
    /// Requested path budget `K`.
    pub budget: usize,
    /// Set when the bounds could not absorb the whole budget.
    pub under_budget: bool,
}

impl UserProfile {
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.weight).sum()
    }

    pub fn weight_of(&self, pattern: usize) -> usize {
        self.entries
            .iter()
            .find(|e| e.pattern == pattern)
            .map_or(0, |e| e.weight)
    }

    fn from_weights(user: EntityId, weights: &[usize], budget: usize) -> Self {
        let entries: Vec<ProfileEntry> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0)
            .map(|(pattern, &weight)| ProfileEntry { pattern, weight })
            .collect();
        let total: usize = entries.iter().map(|e| e.weight).sum();
        Self {
            user,
            entries,
            budget,
            under_budget: total < budget,
        }
    }
}

/// Which composer builds the profiles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileVariant {
    /// Prominence-driven knapsack.
    #[default]
    Cafe,
    Rand,
    Prior,
}

impl ProfileVariant {
    pub const ALL: [ProfileVariant; 3] = [ProfileVariant::Cafe, ProfileVariant::Rand, ProfileVariant::Prior];

    pub fn name(self) -> &'static str {
        match self {
            ProfileVariant::Cafe => "cafe",
            ProfileVariant::Rand => "rand",
            ProfileVariant::Prior => "prior",
        }
    }
}

impl std::str::FromStr for ProfileVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cafe" => Ok(ProfileVariant::Cafe),
            "rand" => Ok(ProfileVariant::Rand),
            "prior" => Ok(ProfileVariant::Prior),
            _ => Err(Error::Config(format!("unknown profile variant `{s}` (cafe, rand, prior)"))),
        }
    }
}

impl std::fmt::Display for ProfileVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileConfig {
    /// Path budget `K`.
    pub budget: usize,
    /// Upper cap on every per-pattern bound.
    pub bound_cap: usize,
    /// Samples averaged per (user, pattern) for prominence.
    pub prominence_cap: usize,
    pub seed: u64,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            budget: 15,
            bound_cap: 10,
            prominence_cap: 20,
            seed: 0,
        }
    }
}

/// Mean path log-probability of up to `cap` samples of `pattern` for `u`.
/// `-inf` when there are none.
pub fn prominence(
    model: &ReasonerModel,
    graph: &KnowledgeGraph,
    u: EntityId,
    pattern: usize,
    samples: &[&PathSample],
    cap: usize,
    cache: &mut HopCache,
) -> Result<f64> {
    for s in samples {
        if s.pattern != pattern {
            return Err(Error::PatternMismatch {
                expected: pattern.to_string(),
                found: s.pattern.to_string(),
            });
        }
        if s.path.user() != u {
            return Err(Error::InvalidPath(format!("sample starts at {}, not {u}", s.path.user())));
        }
    }
    let used = &samples[..samples.len().min(cap)];
    if used.is_empty() {
        return Ok(f64::NEG_INFINITY);
    }
    let mut sum = 0.0;
    for s in used {
        sum += model.path_log_prob_cached(graph, &s.path, cache)?;
    }
    Ok(sum / used.len() as f64)
}

/// `K_j = min(cap, distinct sampled paths of pattern j)` for every pattern.
pub fn pattern_bounds(num_patterns: usize, samples: &[PathSample], cap: usize) -> Vec<usize> {
    let mut distinct: Vec<BTreeSet<_>> = vec![BTreeSet::new(); num_patterns];
    for s in samples {
        if s.pattern < num_patterns {
            distinct[s.pattern].insert(s.path.key());
        }
    }
    distinct.iter().map(|d| d.len().min(cap)).collect()
}

/// Greedy bounded knapsack with unit item weights: fill patterns in
/// descending value up to their bounds until `budget` is spent. Exact for
/// this objective. Ties go to higher frequency, then lower index. Patterns
/// with `-inf` value are never used.
pub fn compose_profile(
    u: EntityId,
    patterns: &[Pattern],
    values: &[f64],
    budget: usize,
    bounds: &[usize],
) -> Result<UserProfile> {
    if values.len() != patterns.len() || bounds.len() != patterns.len() {
        return Err(Error::Dimension {
            expected: patterns.len(),
            actual: if values.len() != patterns.len() { values.len() } else { bounds.len() },
        });
    }
    let mut order: Vec<usize> = (0..patterns.len())
        .filter(|&j| values[j] != f64::NEG_INFINITY && !values[j].is_nan())
        .collect();
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then(patterns[b].frequency.cmp(&patterns[a].frequency))
            .then(a.cmp(&b))
    });
    let mut weights = vec![0usize; patterns.len()];
    let mut left = budget;
    for j in order {
        if left == 0 {
            break;
        }
        let w = bounds[j].min(left);
        weights[j] = w;
        left -= w;
    }
    Ok(UserProfile::from_weights(u, &weights, budget))
}

/// Random baseline: a random nonempty subset of the feasible patterns
/// (positive bound), with the budget split uniformly at random among them.
/// If the subset saturates, further feasible patterns are drawn in.
pub fn compose_rand(u: EntityId, num_patterns: usize, budget: usize, bounds: &[usize], seed: u64) -> UserProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feasible: Vec<usize> = (0..num_patterns).filter(|&j| bounds[j] > 0).collect();
    let mut weights = vec![0usize; num_patterns];
    if feasible.is_empty() || budget == 0 {
        return UserProfile::from_weights(u, &weights, budget);
    }
    feasible.shuffle(&mut rng);
    let size = rng.random_range(1..=feasible.len());
    let (mut chosen, mut rest): (Vec<usize>, Vec<usize>) = (feasible[..size].to_vec(), feasible[size..].to_vec());
    for _ in 0..budget {
        let open: Vec<usize> = chosen.iter().copied().filter(|&j| weights[j] < bounds[j]).collect();
        let pick = match open.choose(&mut rng) {
            Some(&j) => j,
            None => match rest.pop() {
                Some(j) => {
                    chosen.push(j);
                    j
                }
                None => break,
            },
        };
        weights[pick] += 1;
    }
    UserProfile::from_weights(u, &weights, budget)
}

/// Shared template: weights proportional to pattern frequency, rounded by
/// largest remainder (ties to the lower index) so they sum to `budget`.
/// All-zero frequencies are treated as equal.
pub fn compose_prior(patterns: &[Pattern], budget: usize) -> Vec<ProfileEntry> {
    if patterns.is_empty() {
        return Vec::new();
    }
    let all_zero = patterns.iter().all(|p| p.frequency == 0);
    let freq: Vec<u128> = patterns
        .iter()
        .map(|p| if all_zero { 1 } else { p.frequency as u128 })
        .collect();
    let total: u128 = freq.iter().sum();
    let k = budget as u128;
    let mut weights: Vec<usize> = freq.iter().map(|f| (f * k / total) as usize).collect();
    let assigned: usize = weights.iter().sum();
    let mut order: Vec<usize> = (0..patterns.len()).collect();
    // remainders compared exactly as (f * k mod total)
    order.sort_by(|&a, &b| ((freq[b] * k) % total).cmp(&((freq[a] * k) % total)).then(a.cmp(&b)));
    for &j in order.iter().take(budget - assigned) {
        weights[j] += 1;
    }
    weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0)
        .map(|(pattern, &weight)| ProfileEntry { pattern, weight })
        .collect()
}

/// Profile of one user for the given variant. `samples` are that user's
/// training paths.
pub fn compose_user(
    model: &ReasonerModel,
    graph: &KnowledgeGraph,
    u: EntityId,
    patterns: &[Pattern],
    samples: &[PathSample],
    variant: ProfileVariant,
    cfg: &ProfileConfig,
) -> Result<UserProfile> {
    match variant {
        ProfileVariant::Prior => {
            let entries = compose_prior(patterns, cfg.budget);
            let total = entries.iter().map(|e| e.weight).sum::<usize>();
            Ok(UserProfile {
                user: u,
                entries,
                budget: cfg.budget,
                under_budget: total < cfg.budget,
            })
        }
        ProfileVariant::Rand => {
            let bounds = pattern_bounds(patterns.len(), samples, cfg.bound_cap);
            Ok(compose_rand(u, patterns.len(), cfg.budget, &bounds, derive_seed(cfg.seed, u.0 as u64)))
        }
        ProfileVariant::Cafe => {
            let bounds = pattern_bounds(patterns.len(), samples, cfg.bound_cap);
            let mut by_pattern: Vec<Vec<&PathSample>> = vec![Vec::new(); patterns.len()];
            for s in samples {
                if s.pattern < patterns.len() {
                    by_pattern[s.pattern].push(s);
                }
            }
            let mut cache = HopCache::default();
            let mut values = Vec::with_capacity(patterns.len());
            for (j, group) in by_pattern.iter().enumerate() {
                values.push(prominence(model, graph, u, j, group, cfg.prominence_cap, &mut cache)?);
            }
            compose_profile(u, patterns, &values, cfg.budget, &bounds)
        }
    }
}

/// Profiles for `users`, in the same order, computed in parallel.
pub fn compose_profiles(
    model: &ReasonerModel,
    graph: &KnowledgeGraph,
    users: &[EntityId],
    patterns: &[Pattern],
    samples: &BTreeMap<EntityId, Vec<PathSample>>,
    variant: ProfileVariant,
    cfg: &ProfileConfig,
) -> Result<Vec<UserProfile>> {
    users
        .par_iter()
        .map(|&u| {
            let s = samples.get(&u).map_or(&[][..], |v| v.as_slice());
            compose_user(model, graph, u, patterns, s, variant, cfg)
        })
        .collect()
}

/// `user_id<TAB>rank:weight[,rank:weight...]` with 1-based pattern ranks.
pub fn write_profiles(path: &Path, graph: &KnowledgeGraph, profiles: &[UserProfile], header: &[String]) -> Result<()> {
    let mut s = String::new();
    for h in header {
        let _ = writeln!(s, "# {h}");
    }
    for p in profiles {
        let entries: Vec<String> = p
            .entries
            .iter()
            .map(|e| format!("{}:{}", e.pattern + 1, e.weight))
            .collect();
        let _ = writeln!(s, "{}\t{}", graph.entity_name(p.user), entries.join(","));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Reads profiles written by [`write_profiles`]; `budget` is recorded on each
/// profile and used for the under-budget flag. Returns profiles and header.
pub fn read_profiles(
    path: &Path,
    graph: &KnowledgeGraph,
    num_patterns: usize,
    budget: usize,
) -> Result<(Vec<UserProfile>, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
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
        let (name, rest) = line.split_once('\t').ok_or_else(|| err("expected 2 fields".into()))?;
        let user = graph
            .entity_by_name(name)
            .filter(|&e| graph.is_user(e))
            .ok_or_else(|| err(format!("unknown user `{name}`")))?;
        let mut weights = vec![0usize; num_patterns];
        for part in rest.split(',').filter(|p| !p.is_empty()) {
            let (r, w) = part.split_once(':').ok_or_else(|| err(format!("bad entry `{part}`")))?;
            let r: usize = r.parse().map_err(|_| err(format!("bad rank `{r}`")))?;
            let w: usize = w.parse().map_err(|_| err(format!("bad weight `{w}`")))?;
            if r == 0 || r > num_patterns {
                return Err(err(format!("pattern rank {r} out of range 1..={num_patterns}")));
            }
            weights[r - 1] += w;
        }
        out.push(UserProfile::from_weights(user, &weights, budget));
    }
    Ok((out, header))
}
