//! Content hashes used to check that artifacts belong together.

use sha2::{Digest, Sha256};

use crate::graph::{EntityId, KnowledgeGraph};
use crate::miner::Pattern;

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash over entity names and types, relation declarations and every
/// forward triple.
pub fn graph_hash(g: &KnowledgeGraph) -> String {
    let mut h = Sha256::new();
    let s = g.schema();
    for r in s.relations() {
        h.update(format!(
            "r\t{}\t{}\t{}\t{}\n",
            r.name,
            s.type_name(r.head_type),
            s.type_name(r.tail_type),
            s.relation(r.inverse_of).name
        ));
    }
    for e in 0..g.num_entities() {
        let e = EntityId(e as u32);
        h.update(format!("e\t{}\t{}\n", g.entity_name(e), s.type_name(g.entity_type(e))));
    }
    for (a, r, b) in g.triples() {
        h.update(format!("t\t{}\t{}\t{}\n", a.0, r.0, b.0));
    }
    hex::encode(h.finalize())
}

/// Hash over the ordered relation sequences; frequencies are ignored.
pub fn patterns_hash(patterns: &[Pattern]) -> String {
    let mut h = Sha256::new();
    for p in patterns {
        let ids: Vec<String> = p.relations.iter().map(|r| r.0.to_string()).collect();
        h.update(ids.join(","));
        h.update("\n");
    }
    hex::encode(h.finalize())
}

/// First 12 hex digits, for messages.
pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
