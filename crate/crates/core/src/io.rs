//! Tab-separated dataset files.
//!
//! * `entities.tsv`  – `entity_id<TAB>type_name`
//! * `relations.tsv` – `relation_id<TAB>name<TAB>head_type<TAB>tail_type[<TAB>inverse_name]`
//! * `triples.tsv`   – `head_id<TAB>relation_id<TAB>tail_id` (forward edges only)
//! * `train.tsv` / `test.tsv` – `user_id<TAB>item_id`
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, RelationId, Schema};

pub const ENTITIES_FILE: &str = "entities.tsv";
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const TRIPLES_FILE: &str = "triples.tsv";
pub const TRAIN_FILE: &str = "train.tsv";
pub const TEST_FILE: &str = "test.tsv";

/// Which type names and relation play the user / item / interaction roles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    pub user_type: String,
    pub item_type: String,
    pub interaction: String,
}

impl Default for Roles {
    fn default() -> Self {
        Self {
            user_type: "user".into(),
            item_type: "item".into(),
            interaction: "purchase".into(),
        }
    }
}

/// Training graph plus the held-out interaction pairs.
#[derive(Clone, Debug)]
pub struct Dataset {
    /// Knowledge graph including training interactions only.
    pub graph: KnowledgeGraph,
    pub train: Vec<(EntityId, EntityId)>,
    pub test: Vec<(EntityId, EntityId)>,
}

struct Lines {
    path: PathBuf,
    text: String,
}

impl Lines {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            text,
        })
    }

    /// `(line_number, fields)` for every non-comment line.
    fn records(&self) -> impl Iterator<Item = (usize, Vec<&str>)> {
        self.text.lines().enumerate().filter_map(|(i, l)| {
            let l = l.trim_end_matches('\r');
            if l.trim().is_empty() || l.starts_with('#') {
                None
            } else {
                Some((i + 1, l.split('\t').collect()))
            }
        })
    }

    fn err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }
}

/// Loads a graph from the three schema/graph files.
pub fn load_graph(
    entities_file: &Path,
    relations_file: &Path,
    triples_file: &Path,
    roles: &Roles,
) -> Result<KnowledgeGraph> {
    let entities = Lines::read(entities_file)?;
    let relations = Lines::read(relations_file)?;
    let triples = Lines::read(triples_file)?;

    let mut schema = Schema::new();
    let mut entity_rows = Vec::new();
    for (line, f) in entities.records() {
        if f.len() != 2 {
            return Err(entities.err(line, format!("expected 2 fields, found {}", f.len())));
        }
        schema.add_type(f[1]);
        entity_rows.push((line, f[0], f[1]));
    }

    let mut relation_tokens: HashMap<&str, RelationId> = HashMap::new();
    for (line, f) in relations.records() {
        if !(4..=5).contains(&f.len()) {
            return Err(relations.err(line, format!("expected 4 or 5 fields, found {}", f.len())));
        }
        schema.add_type(f[2]);
        schema.add_type(f[3]);
        let id = schema
            .add_relation(f[1], f[2], f[3], f.get(4).copied())
            .map_err(|e| relations.err(line, e.to_string()))?;
        if relation_tokens.insert(f[0], id).is_some() {
            return Err(relations.err(line, format!("duplicate relation id `{}`", f[0])));
        }
    }
    schema
        .set_roles(&roles.user_type, &roles.item_type, &roles.interaction)
        .map_err(|e| relations.err(0, e.to_string()))?;

    let mut graph = KnowledgeGraph::new(schema);
    for (line, name, ty) in entity_rows {
        let t = graph.schema().type_by_name(ty).expect("registered above");
        graph
            .add_entity(name, t)
            .map_err(|e| entities.err(line, e.to_string()))?;
    }

    for (line, f) in triples.records() {
        if f.len() != 3 {
            return Err(triples.err(line, format!("expected 3 fields, found {}", f.len())));
        }
        let h = lookup_entity(&graph, &triples, line, f[0])?;
        let r = *relation_tokens
            .get(f[1])
            .ok_or_else(|| triples.err(line, format!("unknown relation `{}`", f[1])))?;
        let t = lookup_entity(&graph, &triples, line, f[2])?;
        graph
            .add_triple(h, r, t)
            .map_err(|e| triples.err(line, e.to_string()))?;
    }
    Ok(graph)
}

fn lookup_entity(graph: &KnowledgeGraph, lines: &Lines, line: usize, name: &str) -> Result<EntityId> {
    graph
        .entity_by_name(name)
        .ok_or_else(|| lines.err(line, format!("unregistered entity `{name}`")))
}

/// Reads `user<TAB>item` pairs, checking entity roles.
pub fn load_pairs(graph: &KnowledgeGraph, path: &Path) -> Result<Vec<(EntityId, EntityId)>> {
    let lines = Lines::read(path)?;
    let mut out = Vec::new();
    for (line, f) in lines.records() {
        if f.len() != 2 {
            return Err(lines.err(line, format!("expected 2 fields, found {}", f.len())));
        }
        let u = lookup_entity(graph, &lines, line, f[0])?;
        let i = lookup_entity(graph, &lines, line, f[1])?;
        if !graph.is_user(u) || !graph.is_item(i) {
            return Err(lines.err(line, format!("`{}`/`{}` are not a user/item pair", f[0], f[1])));
        }
        out.push((u, i));
    }
    Ok(out)
}

/// Loads all five dataset files from `dir`. Training pairs are inserted as
/// interaction triples; test pairs are kept out of the graph.
pub fn load_dataset(dir: &Path, roles: &Roles) -> Result<Dataset> {
    let mut graph = load_graph(
        &dir.join(ENTITIES_FILE),
        &dir.join(RELATIONS_FILE),
        &dir.join(TRIPLES_FILE),
        roles,
    )?;
    let train = load_pairs(&graph, &dir.join(TRAIN_FILE))?;
    let test = load_pairs(&graph, &dir.join(TEST_FILE))?;
    let r_ui = graph.schema().interaction();
    for &(u, i) in &train {
        graph.add_triple(u, r_ui, i)?;
    }
    for &(u, i) in &test {
        if graph.has_interaction(u, i) {
            return Err(Error::Parse {
                path: dir.join(TEST_FILE),
                line: 0,
                message: format!(
                    "test pair ({}, {}) is also a training interaction",
                    graph.entity_name(u),
                    graph.entity_name(i)
                ),
            });
        }
    }
    Ok(Dataset { graph, train, test })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the dataset in the same layout `load_dataset` reads.
pub fn save_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &data.graph;
    let s = g.schema();

    let path = dir.join(ENTITIES_FILE);
    let mut w = create(&path)?;
    for e in 0..g.num_entities() {
        let e = EntityId(e as u32);
        writeln!(w, "{}\t{}", g.entity_name(e), s.type_name(g.entity_type(e)))
            .map_err(|err| Error::io(&path, err))?;
    }
    w.flush().map_err(|err| Error::io(&path, err))?;

    let path = dir.join(RELATIONS_FILE);
    let mut w = create(&path)?;
    for r in s.relations().iter().filter(|r| r.declared) {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.name,
            r.name,
            s.type_name(r.head_type),
            s.type_name(r.tail_type),
            s.relation(r.inverse_of).name
        )
        .map_err(|err| Error::io(&path, err))?;
    }
    w.flush().map_err(|err| Error::io(&path, err))?;

    let path = dir.join(TRIPLES_FILE);
    let mut w = create(&path)?;
    for (h, r, t) in g.triples() {
        writeln!(w, "{}\t{}\t{}", g.entity_name(h), s.relation(r).name, g.entity_name(t))
            .map_err(|err| Error::io(&path, err))?;
    }
    w.flush().map_err(|err| Error::io(&path, err))?;

    write_pairs(g, &dir.join(TRAIN_FILE), &data.train)?;
    write_pairs(g, &dir.join(TEST_FILE), &data.test)?;
    Ok(())
}

pub fn write_pairs(g: &KnowledgeGraph, path: &Path, pairs: &[(EntityId, EntityId)]) -> Result<()> {
    let mut w = create(path)?;
    for &(u, i) in pairs {
        writeln!(w, "{}\t{}", g.entity_name(u), g.entity_name(i)).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_triples_two_entities() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "u1\tuser\ni1\titem\n");
        let r = write(
            dir.path(),
            "r.tsv",
            "0\tpurchase\tuser\titem\n1\tlike\tuser\titem\n2\tview\tuser\titem\tviewed_by\n",
        );
        let t = write(dir.path(), "t.tsv", "u1\t0\ti1\nu1\t1\ti1\nu1\t2\ti1\n");
        let g = load_graph(&e, &r, &t, &Roles::default()).unwrap();
        assert_eq!(g.num_entities(), 2);
        assert_eq!(g.num_triples(), 3);
        assert_eq!(g.num_directed_edges(), 6);
        let view = g.schema().relation_by_name("view").unwrap();
        assert_eq!(g.schema().relation(g.schema().inverse(view)).name, "viewed_by");
    }

    #[test]
    fn unregistered_entity_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "u1\tuser\ni1\titem\n");
        let r = write(dir.path(), "r.tsv", "0\tpurchase\tuser\titem\n");
        let t = write(dir.path(), "t.tsv", "u1\t0\ti1\nu1\t0\tghost42\n");
        let err = load_graph(&e, &r, &t, &Roles::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ghost42"), "{msg}");
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "# header\nu1\tuser\ni1 item\n");
        let r = write(dir.path(), "r.tsv", "0\tpurchase\tuser\titem\n");
        let t = write(dir.path(), "t.tsv", "");
        let err = load_graph(&e, &r, &t, &Roles::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn type_mismatch_in_triples_file() {
        let dir = tempfile::tempdir().unwrap();
        let e = write(dir.path(), "e.tsv", "u1\tuser\ni1\titem\n");
        let r = write(dir.path(), "r.tsv", "0\tpurchase\tuser\titem\n");
        let t = write(dir.path(), "t.tsv", "i1\t0\tu1\n");
        let err = load_graph(&e, &r, &t, &Roles::default()).unwrap_err();
        assert!(err.to_string().contains("violates relation types"), "{err}");
    }
}
