//! Shared fixture for the criterion benches.

use pathrec::eval::{fit, System};
use pathrec::synth::{generate, Synthetic, SyntheticSpec};
use pathrec::{Pattern, ProfileEntry, RunConfig, UserProfile};

pub struct Fixture {
    pub world: Synthetic,
    pub system: System,
    pub cfg: RunConfig,
}

/// A small trained world. Training is kept short since only inference is
/// timed.
pub fn fixture() -> Fixture {
    let spec = SyntheticSpec {
        users: 80,
        items: 150,
        brands: 50,
        categories: 50,
        related_items: 50,
        ..SyntheticSpec::default()
    };
    let world = generate(&spec).expect("generator");
    let cfg = RunConfig {
        dim: 32,
        hidden: 64,
        epochs: 1,
        pretrain_epochs: 1,
        threads: 1,
        ..RunConfig::default()
    };
    let system = fit(&world.data.graph, &cfg).expect("fit");
    Fixture { world, system, cfg }
}

/// Equal weights on every mined pattern that starts with `first`, so the
/// layout tree shares that hop.
pub fn shared_prefix_profile(f: &Fixture, user: pathrec::EntityId, first: &str, weight: usize) -> UserProfile {
    let schema = f.world.data.graph.schema();
    let r = schema.relation_by_name(first).expect("relation");
    let entries: Vec<ProfileEntry> = f
        .system
        .patterns
        .iter()
        .enumerate()
        .filter(|(_, p): &(usize, &Pattern)| p.relations[0] == r && p.len() == 3)
        .map(|(pattern, _)| ProfileEntry { pattern, weight })
        .collect();
    let total = entries.iter().map(|e| e.weight).sum();
    UserProfile { user, entries, budget: total, under_budget: false }
}
