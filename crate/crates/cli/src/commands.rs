use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use pathrec::eval::{self, MetricsReport, System, UnseenReport};
use pathrec::fingerprint::{graph_hash, patterns_hash, short};
use pathrec::io::{load_dataset, save_dataset};
use pathrec::miner::{collect_training_paths, mine_patterns, read_patterns, write_patterns};
use pathrec::ppr::{recommend_for_profile, write_recommendations};
use pathrec::profile::{compose_profiles, read_profiles, write_profiles};
use pathrec::reasoner::{load_checkpoint, save_checkpoint, train};
use pathrec::synth::{generate, write_ground_truth, SyntheticSpec};
use pathrec::{Dataset, EntityId, Pattern, ProfileVariant, ReasonerModel, RunConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cli::{Command, DataArgs, SweepParam};

const KIND_EMBEDDINGS: &str = "embeddings";
const KIND_MODEL: &str = "model";

/// Provenance lines shared by every text artifact.
fn header(cfg: &RunConfig, graph: &str, patterns: Option<&str>) -> Vec<String> {
    let mut h = vec![format!("config_hash={}", cfg.hash()), format!("graph_hash={graph}")];
    if let Some(p) = patterns {
        h.push(format!("patterns_hash={p}"));
    }
    h.push(format!("config={}", serde_json::to_string(cfg).expect("plain data")));
    h
}

fn header_value<'a>(header: &'a [String], key: &str) -> Option<&'a str> {
    header.iter().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

fn check(what: &str, expected: &str, found: Option<&str>, artifact: &Path) -> Result<()> {
    match found {
        Some(f) if f == expected => Ok(()),
        Some(f) => bail!(
            "{what} fingerprint mismatch for {}: expected {}, found {}",
            artifact.display(),
            short(expected),
            short(f)
        ),
        None => bail!("{} carries no {what} fingerprint", artifact.display()),
    }
}

fn note_config(cfg: &RunConfig, found: Option<&str>, artifact: &Path) {
    if let Some(f) = found {
        if f != cfg.hash() {
            warn!(
                "{} was produced under config {}, current config is {}",
                artifact.display(),
                short(f),
                short(&cfg.hash())
            );
        }
    }
}

fn load(data: &DataArgs) -> Result<(Dataset, String)> {
    let ds = load_dataset(&data.data, &data.roles()).with_context(|| format!("loading {}", data.data.display()))?;
    let h = graph_hash(&ds.graph);
    info!("{} graph {}", data.data.display(), short(&h));
    Ok((ds, h))
}

fn load_model(path: &Path, graph: &str, kind: &str) -> Result<(ReasonerModel, BTreeMap<String, String>)> {
    let (model, meta) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    match meta.get("kind").map(String::as_str) {
        Some(k) if k == kind => {}
        other => bail!("{} is not a {kind} checkpoint (kind {:?})", path.display(), other),
    }
    check("graph", graph, meta.get("graph_hash").map(String::as_str), path)?;
    if kind == KIND_MODEL {
        check(
            "pattern-set",
            &patterns_hash(&model.patterns),
            meta.get("patterns_hash").map(String::as_str),
            path,
        )?;
    }
    Ok((model, meta))
}

fn meta(cfg: &RunConfig, kind: &str, graph: &str, patterns: Option<&str>) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("kind".into(), kind.into());
    m.insert("config_hash".into(), cfg.hash());
    m.insert("config".into(), serde_json::to_string(cfg).expect("plain data"));
    m.insert("graph_hash".into(), graph.into());
    if let Some(p) = patterns {
        m.insert("patterns_hash".into(), p.into());
    }
    m
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn system(ds: &Dataset, model: ReasonerModel, cfg: &RunConfig) -> System {
    let patterns = model.patterns.clone();
    let samples = eval::training_paths(&ds.graph, &patterns, cfg);
    System {
        patterns,
        samples,
        model,
        train_report: Default::default(),
    }
}

#[derive(Serialize)]
struct Report<'a> {
    config: &'a RunConfig,
    config_hash: String,
    graph_hash: &'a str,
    patterns_hash: String,
    metrics: Vec<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unseen: Option<UnseenReport>,
    timings: BTreeMap<String, f64>,
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Generate {
            out,
            spec,
            users,
            items,
            noise_rate,
            synth_seed,
        } => {
            let mut s = match spec {
                Some(p) => {
                    let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
                    toml::from_str::<SyntheticSpec>(&text).with_context(|| format!("parsing {}", p.display()))?
                }
                None => SyntheticSpec {
                    seed: cfg.seed,
                    ..SyntheticSpec::default()
                },
            };
            s.users = users.unwrap_or(s.users);
            if let Some(n) = items {
                // keep default attribute groups about three items wide
                if s.brands == SyntheticSpec::default().brands {
                    let pool = (n / 3).max(1);
                    (s.brands, s.categories, s.related_items) = (pool, pool, pool);
                }
                s.items = n;
            }
            s.noise_rate = noise_rate.unwrap_or(s.noise_rate);
            s.seed = synth_seed.unwrap_or(s.seed);
            let syn = generate(&s)?;
            save_dataset(&out, &syn.data)?;
            write_ground_truth(&out.join("ground_truth.tsv"), &syn)?;
            fs::write(out.join("spec.toml"), toml::to_string(&s)?)?;
            if syn.data.test.is_empty() {
                warn!("no test pairs were generated; attribute groups may be too small for the item count");
            }
            let st = syn.data.graph.stats();
            println!(
                "wrote {}: {} entities, {} triples, {} train / {} test pairs",
                out.display(),
                st.entities,
                st.triples,
                syn.data.train.len(),
                syn.data.test.len()
            );
        }
        Command::Mine { data, out } => {
            let (ds, gh) = load(&data)?;
            let patterns = mine_patterns(&ds.graph, &cfg.mine());
            if patterns.is_empty() {
                warn!("no user-centric walk reached an item");
            }
            let ph = patterns_hash(&patterns);
            write_patterns(&out, ds.graph.schema(), &patterns, &header(cfg, &gh, Some(&ph)))?;
            for (i, p) in patterns.iter().enumerate() {
                println!("{}\t{}\t{}", i + 1, p.display(ds.graph.schema()), p.frequency);
            }
        }
        Command::Pretrain { data, out } => {
            let (ds, gh) = load(&data)?;
            let t = Instant::now();
            let emb = pathrec::embed::pretrain_embeddings(&ds.graph, &cfg.pretrain());
            let model = ReasonerModel {
                hyper: cfg.hyper(),
                embeddings: emb,
                modules: BTreeMap::new(),
                patterns: Vec::new(),
            };
            save_checkpoint(&out, &model, &meta(cfg, KIND_EMBEDDINGS, &gh, None))?;
            println!("wrote {} in {:.1}s", out.display(), t.elapsed().as_secs_f64());
        }
        Command::Train {
            data,
            patterns,
            embeddings,
            out,
        } => {
            let (ds, gh) = load(&data)?;
            let (pats, ph_lines) = read_patterns(&patterns, ds.graph.schema())?;
            check("graph", &gh, header_value(&ph_lines, "graph_hash"), &patterns)?;
            let (emb, emb_meta) = load_model(&embeddings, &gh, KIND_EMBEDDINGS)?;
            note_config(cfg, emb_meta.get("config_hash").map(String::as_str), &embeddings);
            if emb.embeddings.ncols() != cfg.dim {
                bail!(
                    "{} holds {}-dimensional embeddings but dim is {}",
                    embeddings.display(),
                    emb.embeddings.ncols(),
                    cfg.dim
                );
            }
            let samples = collect_training_paths(&ds.graph, &pats, cfg.paths_per_pattern, cfg.path_seed());
            let flat = eval::flatten_samples(&samples);
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed());
            let mut model = ReasonerModel::new(emb.embeddings, pats.clone(), cfg.hyper(), &mut rng)?;
            let t = Instant::now();
            let report = train(&ds.graph, &mut model, &flat)?;
            let ph = patterns_hash(&pats);
            save_checkpoint(&out, &model, &meta(cfg, KIND_MODEL, &gh, Some(&ph)))?;
            println!(
                "trained on {} paths for {} epochs in {:.1}s, final loss {:.4}; wrote {}",
                flat.len(),
                cfg.epochs,
                t.elapsed().as_secs_f64(),
                report.epoch_total.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Compose { data, model, out } => {
            let (ds, gh) = load(&data)?;
            let (m, mm) = load_model(&model, &gh, KIND_MODEL)?;
            note_config(cfg, mm.get("config_hash").map(String::as_str), &model);
            let ph = patterns_hash(&m.patterns);
            let sys = system(&ds, m, cfg);
            let users = test_users(&ds);
            let profiles = compose_profiles(
                &sys.model,
                &ds.graph,
                &users,
                &sys.patterns,
                &sys.samples,
                cfg.variant,
                &cfg.profile(),
            )?;
            let under = profiles.iter().filter(|p| p.under_budget).count();
            let mut h = header(cfg, &gh, Some(&ph));
            h.push(format!("variant={}", cfg.variant));
            h.push(format!("budget={}", cfg.budget));
            write_profiles(&out, &ds.graph, &profiles, &h)?;
            println!("wrote {} profiles ({under} under budget) to {}", profiles.len(), out.display());
        }
        Command::Recommend {
            data,
            model,
            profiles,
            out,
        } => {
            let (ds, gh) = load(&data)?;
            let (m, _) = load_model(&model, &gh, KIND_MODEL)?;
            let ph = patterns_hash(&m.patterns);
            let (_, hdr) = read_profiles_header(&profiles)?;
            check("graph", &gh, header_value(&hdr, "graph_hash"), &profiles)?;
            check("pattern-set", &ph, header_value(&hdr, "patterns_hash"), &profiles)?;
            let budget = header_value(&hdr, "budget").and_then(|b| b.parse().ok()).unwrap_or(cfg.budget);
            let (profs, _) = read_profiles(&profiles, &ds.graph, m.patterns.len(), budget)?;
            let recs: Vec<(EntityId, Vec<pathrec::Recommendation>)> = {
                use rayon::prelude::*;
                profs
                    .par_iter()
                    .map(|p| {
                        recommend_for_profile(&ds.graph, &m, p, cfg.top_n, cfg.exclude_train, cfg.reason())
                            .map(|r| (p.user, r))
                    })
                    .collect::<pathrec::Result<_>>()?
            };
            let mut h = header(cfg, &gh, Some(&ph));
            if let Some(v) = header_value(&hdr, "variant") {
                h.push(format!("variant={v}"));
            }
            write_recommendations(&out, &ds.graph, &recs, &h)?;
            let n: usize = recs.iter().map(|(_, r)| r.len()).sum();
            println!("wrote {n} recommendations for {} users to {}", recs.len(), out.display());
        }
        Command::Eval {
            data,
            model,
            out,
            all_variants,
            unseen,
            per_user,
        } => {
            let (ds, gh) = load(&data)?;
            let (m, mm) = load_model(&model, &gh, KIND_MODEL)?;
            note_config(cfg, mm.get("config_hash").map(String::as_str), &model);
            let ph = patterns_hash(&m.patterns);
            let sys = system(&ds, m, cfg);
            let variants: Vec<ProfileVariant> = if all_variants {
                ProfileVariant::ALL.to_vec()
            } else {
                vec![cfg.variant]
            };
            let mut timings = BTreeMap::new();
            let mut metrics = Vec::new();
            for v in variants {
                let t = Instant::now();
                let mut r = eval::evaluate(&sys, &ds.graph, &ds.test, v, cfg)?;
                timings.insert(format!("eval_{v}_s"), t.elapsed().as_secs_f64());
                println!(
                    "{v}\tNDCG {:.3}\tRecall {:.3}\tHR {:.3}\tPrec {:.3}\t({} users)",
                    r.metrics.ndcg, r.metrics.recall, r.metrics.hit_rate, r.metrics.precision, r.users
                );
                if !per_user {
                    r.per_user.clear();
                }
                metrics.push(r);
            }
            let unseen = if unseen {
                let t = Instant::now();
                let mut u = eval::unseen_pattern_eval(&sys, &ds.graph, &ds.test, cfg)?;
                timings.insert("unseen_s".into(), t.elapsed().as_secs_f64());
                println!(
                    "unseen (keep {}): NDCG decrease {:.2}%, Recall decrease {:.2}%",
                    u.keep_fraction, u.decrease.ndcg, u.decrease.recall
                );
                if !per_user {
                    u.full.per_user.clear();
                    u.reduced.per_user.clear();
                }
                Some(u)
            } else {
                None
            };
            let report = Report {
                config: cfg,
                config_hash: cfg.hash(),
                graph_hash: &gh,
                patterns_hash: ph,
                metrics,
                unseen,
                timings,
            };
            write_json(&out, &report)?;
        }
        Command::Bench {
            data,
            model,
            out,
            users,
            paths,
            reps,
        } => {
            let (ds, gh) = load(&data)?;
            let (m, _) = load_model(&model, &gh, KIND_MODEL)?;
            let sys = system(&ds, m, cfg);
            let pool = test_users(&ds);
            let report = eval::bench(&sys, &ds.graph, &pool, users, paths, reps, cfg)?;
            for r in &report.rows {
                println!(
                    "{}\t{}\t{:?}\t{:.2} ± {:.2} ms\t{} module calls",
                    r.task, r.n, r.method, r.mean_ms, r.std_ms, r.module_calls
                );
            }
            write_json(&out, &report)?;
        }
        Command::Sweep {
            data,
            param,
            values,
            model,
            out,
        } => {
            let (ds, gh) = load(&data)?;
            let rows = match param {
                SweepParam::Lambda => {
                    let v = if values.is_empty() { vec![0.0, 5.0, 10.0, 15.0, 20.0] } else { values };
                    eval::sweep_lambda(&ds.graph, &ds.test, cfg, &v)?
                }
                SweepParam::K => {
                    let path = model.ok_or_else(|| anyhow!("the K sweep needs --model"))?;
                    let (m, _) = load_model(&path, &gh, KIND_MODEL)?;
                    let sys = system(&ds, m, cfg);
                    let v: Vec<usize> = if values.is_empty() {
                        vec![15, 20, 25, 30]
                    } else {
                        values.iter().map(|&x| x as usize).collect()
                    };
                    eval::sweep_budget(&sys, &ds.graph, &ds.test, cfg, &v)?
                }
            };
            let csv = eval::sweep_csv(&rows);
            print!("{csv}");
            fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
        }
    }
    Ok(())
}

/// Users with at least one test pair, in id order.
fn test_users(ds: &Dataset) -> Vec<EntityId> {
    eval::group_test(&ds.test).into_keys().collect()
}

fn read_profiles_header(path: &Path) -> Result<(Vec<Pattern>, Vec<String>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let hdr = text
        .lines()
        .filter_map(|l| l.strip_prefix('#'))
        .map(|l| l.trim().to_string())
        .collect();
    Ok((Vec::new(), hdr))
}
