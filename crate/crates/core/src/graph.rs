//! Typed heterogeneous knowledge graph.
//!
//! Entities carry exactly one type; every relation has a declared head and
//! tail type and an inverse. Adjacency is kept per `(entity, relation)` as a
//! sorted, duplicate-free list so that traversal order is deterministic.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityType(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl EntityType {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e{}", self.0)
    }
}

impl fmt::Display for RelationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: RelationId,
    pub name: String,
    pub head_type: EntityType,
    pub tail_type: EntityType,
    pub inverse_of: RelationId,
    /// True for relations declared in the schema source, false for
    /// auto-generated inverses.
    pub declared: bool,
}

/// Entity types, relations and the designated user/item/interaction roles.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    type_names: Vec<String>,
    relations: Vec<Relation>,
    user_type: Option<EntityType>,
    item_type: Option<EntityType>,
    interaction: Option<RelationId>,
}

pub const INVERSE_SUFFIX: &str = "_inv";

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a type name, returning the existing id if already present.
    pub fn add_type(&mut self, name: &str) -> EntityType {
        if let Some(t) = self.type_by_name(name) {
            return t;
        }
        self.type_names.push(name.to_string());
        EntityType(self.type_names.len() as u32 - 1)
    }

    pub fn type_by_name(&self, name: &str) -> Option<EntityType> {
        self.type_names
            .iter()
            .position(|n| n == name)
            .map(|i| EntityType(i as u32))
    }

    pub fn type_name(&self, t: EntityType) -> &str {
        &self.type_names[t.index()]
    }

    pub fn num_types(&self) -> usize {
        self.type_names.len()
    }

    /// Declares a relation. The inverse is linked to an existing relation of
    /// that name, or generated (named `inverse` or `<name>_inv`) right after.
    /// Re-declaring a relation that already exists with identical types is a
    /// no-op, which lets a source list both directions explicitly.
    pub fn add_relation(
        &mut self,
        name: &str,
        head: &str,
        tail: &str,
        inverse: Option<&str>,
    ) -> Result<RelationId> {
        let head_type = self
            .type_by_name(head)
            .ok_or_else(|| Error::UnknownType(head.to_string()))?;
        let tail_type = self
            .type_by_name(tail)
            .ok_or_else(|| Error::UnknownType(tail.to_string()))?;

        if let Some(existing) = self.relation_by_name(name) {
            let rel = &self.relations[existing.index()];
            if rel.head_type != head_type || rel.tail_type != tail_type {
                return Err(Error::Schema(format!(
                    "relation `{name}` redeclared with different types"
                )));
            }
            if let Some(inv) = inverse {
                if self.relations[rel.inverse_of.index()].name != inv {
                    return Err(Error::Schema(format!(
                        "relation `{name}` redeclared with a different inverse `{inv}`"
                    )));
                }
            }
            self.relations[existing.index()].declared = true;
            return Ok(existing);
        }

        let inverse_name = inverse
            .map(str::to_string)
            .unwrap_or_else(|| format!("{name}{INVERSE_SUFFIX}"));
        let id = RelationId(self.relations.len() as u32);

        if inverse_name == name {
            if head_type != tail_type {
                return Err(Error::Schema(format!(
                    "self-inverse relation `{name}` must have equal head and tail types"
                )));
            }
            self.relations.push(Relation {
                id,
                name: name.to_string(),
                head_type,
                tail_type,
                inverse_of: id,
                declared: true,
            });
            return Ok(id);
        }

        match self.relation_by_name(&inverse_name) {
            Some(inv) => {
                let inv_rel = &self.relations[inv.index()];
                if inv_rel.head_type != tail_type || inv_rel.tail_type != head_type {
                    return Err(Error::Schema(format!(
                        "inverse `{inverse_name}` of `{name}` has incompatible types"
                    )));
                }
                if inv_rel.inverse_of != inv {
                    return Err(Error::Schema(format!(
                        "`{inverse_name}` is already the inverse of another relation"
                    )));
                }
                self.relations.push(Relation {
                    id,
                    name: name.to_string(),
                    head_type,
                    tail_type,
                    inverse_of: inv,
                    declared: true,
                });
                self.relations[inv.index()].inverse_of = id;
            }
            None => {
                let inv = RelationId(id.0 + 1);
                self.relations.push(Relation {
                    id,
                    name: name.to_string(),
                    head_type,
                    tail_type,
                    inverse_of: inv,
                    declared: true,
                });
                self.relations.push(Relation {
                    id: inv,
                    name: inverse_name,
                    head_type: tail_type,
                    tail_type: head_type,
                    inverse_of: id,
                    declared: false,
                });
            }
        }
        Ok(id)
    }

    /// Designates the user type, item type and the user-item interaction
    /// relation.
    pub fn set_roles(&mut self, user: &str, item: &str, interaction: &str) -> Result<()> {
        let user_type = self
            .type_by_name(user)
            .ok_or_else(|| Error::UnknownType(user.to_string()))?;
        let item_type = self
            .type_by_name(item)
            .ok_or_else(|| Error::UnknownType(item.to_string()))?;
        if user_type == item_type {
            return Err(Error::Schema("user and item types must differ".into()));
        }
        let r = self
            .relation_by_name(interaction)
            .ok_or_else(|| Error::UnknownRelation(interaction.to_string()))?;
        let rel = &self.relations[r.index()];
        if rel.head_type != user_type || rel.tail_type != item_type {
            return Err(Error::Schema(format!(
                "interaction relation `{interaction}` must map {user} -> {item}"
            )));
        }
        self.user_type = Some(user_type);
        self.item_type = Some(item_type);
        self.interaction = Some(r);
        Ok(())
    }

    pub fn has_roles(&self) -> bool {
        self.interaction.is_some()
    }

    pub fn user_type(&self) -> EntityType {
        self.user_type.expect("schema roles not set")
    }

    pub fn item_type(&self) -> EntityType {
        self.item_type.expect("schema roles not set")
    }

    pub fn interaction(&self) -> RelationId {
        self.interaction.expect("schema roles not set")
    }

    pub fn relation_by_name(&self, name: &str) -> Option<RelationId> {
        self.relations
            .iter()
            .position(|r| r.name == name)
            .map(|i| RelationId(i as u32))
    }

    pub fn relation(&self, r: RelationId) -> &Relation {
        &self.relations[r.index()]
    }

    pub fn try_relation(&self, r: RelationId) -> Result<&Relation> {
        self.relations
            .get(r.index())
            .ok_or(Error::UnregisteredRelation(r.0))
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn inverse(&self, r: RelationId) -> RelationId {
        self.relations[r.index()].inverse_of
    }

    /// Relations whose head type is `t`, in id order.
    pub fn outgoing(&self, t: EntityType) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(move |r| r.head_type == t)
    }

    /// The schema used by the public e-commerce benchmarks: eight declared
    /// relations, sixteen with inverses.
    pub fn amazon() -> Self {
        let mut s = Schema::new();
        for t in ["user", "item", "word", "brand", "category", "related_item"] {
            s.add_type(t);
        }
        let rels = [
            ("purchase", "user", "item"),
            ("mentions", "user", "word"),
            ("describe_as", "item", "word"),
            ("produced_by", "item", "brand"),
            ("belongs_to", "item", "category"),
            ("also_bought", "item", "related_item"),
            ("also_viewed", "item", "related_item"),
            ("bought_together", "item", "related_item"),
        ];
        for (name, h, t) in rels {
            s.add_relation(name, h, t, None).expect("static schema");
        }
        s.set_roles("user", "item", "purchase").expect("static schema");
        s
    }
}

/// Immutable-after-construction knowledge graph.
#[derive(Clone, Debug, Default)]
pub struct KnowledgeGraph {
    schema: Schema,
    names: Vec<String>,
    types: Vec<EntityType>,
    index: HashMap<String, EntityId>,
    by_type: Vec<Vec<EntityId>>,
    /// Per entity: `(relation, sorted neighbors)` sorted by relation id.
    adjacency: Vec<Vec<(RelationId, Vec<EntityId>)>>,
    edge_count: usize,
}

impl KnowledgeGraph {
    pub fn new(schema: Schema) -> Self {
        let by_type = vec![Vec::new(); schema.num_types()];
        Self {
            schema,
            by_type,
            ..Default::default()
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn add_entity(&mut self, name: &str, ty: EntityType) -> Result<EntityId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateEntity(name.to_string()));
        }
        if ty.index() >= self.schema.num_types() {
            return Err(Error::UnknownType(format!("#{}", ty.0)));
        }
        let id = EntityId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.types.push(ty);
        self.index.insert(name.to_string(), id);
        self.by_type[ty.index()].push(id);
        self.adjacency.push(Vec::new());
        Ok(id)
    }

    pub fn entity_by_name(&self, name: &str) -> Option<EntityId> {
        self.index.get(name).copied()
    }

    pub fn entity_name(&self, e: EntityId) -> &str {
        &self.names[e.index()]
    }

    pub fn entity_type(&self, e: EntityId) -> EntityType {
        self.types[e.index()]
    }

    pub fn contains(&self, e: EntityId) -> bool {
        e.index() < self.names.len()
    }

    pub fn num_entities(&self) -> usize {
        self.names.len()
    }

    /// Entities of type `t` in ascending id order.
    pub fn entities_of_type(&self, t: EntityType) -> &[EntityId] {
        &self.by_type[t.index()]
    }

    pub fn users(&self) -> &[EntityId] {
        self.entities_of_type(self.schema.user_type())
    }

    pub fn items(&self) -> &[EntityId] {
        self.entities_of_type(self.schema.item_type())
    }

    pub fn is_item(&self, e: EntityId) -> bool {
        self.entity_type(e) == self.schema.item_type()
    }

    pub fn is_user(&self, e: EntityId) -> bool {
        self.entity_type(e) == self.schema.user_type()
    }

    /// Inserts `(h, r, t)` and its inverse `(t, r^-1, h)`. Duplicates are
    /// ignored. Returns whether the triple was new.
    pub fn add_triple(&mut self, h: EntityId, r: RelationId, t: EntityId) -> Result<bool> {
        if !self.contains(h) {
            return Err(Error::UnregisteredEntity(h.0));
        }
        if !self.contains(t) {
            return Err(Error::UnregisteredEntity(t.0));
        }
        let rel = self.schema.try_relation(r)?.clone();
        let (ht, tt) = (self.entity_type(h), self.entity_type(t));
        if ht != rel.head_type || tt != rel.tail_type {
            return Err(Error::TypeMismatch {
                head: self.names[h.index()].clone(),
                relation: rel.name.clone(),
                tail: self.names[t.index()].clone(),
                expected_head: self.schema.type_name(rel.head_type).to_string(),
                expected_tail: self.schema.type_name(rel.tail_type).to_string(),
                actual_head: self.schema.type_name(ht).to_string(),
                actual_tail: self.schema.type_name(tt).to_string(),
            });
        }
        let inserted = Self::insert_edge(&mut self.adjacency[h.index()], r, t);
        if inserted {
            Self::insert_edge(&mut self.adjacency[t.index()], rel.inverse_of, h);
            self.edge_count += 1;
        }
        Ok(inserted)
    }

    fn insert_edge(adj: &mut Vec<(RelationId, Vec<EntityId>)>, r: RelationId, t: EntityId) -> bool {
        let slot = match adj.binary_search_by_key(&r, |(rel, _)| *rel) {
            Ok(i) => i,
            Err(i) => {
                adj.insert(i, (r, Vec::new()));
                i
            }
        };
        let list = &mut adj[slot].1;
        match list.binary_search(&t) {
            Ok(_) => false,
            Err(pos) => {
                list.insert(pos, t);
                true
            }
        }
    }

    /// Sorted neighbors of `e` under `r`; empty if none.
    pub fn neighbors(&self, e: EntityId, r: RelationId) -> &[EntityId] {
        let Some(adj) = self.adjacency.get(e.index()) else {
            return &[];
        };
        match adj.binary_search_by_key(&r, |(rel, _)| *rel) {
            Ok(i) => &adj[i].1,
            Err(_) => &[],
        }
    }

    /// All `(relation, neighbors)` groups at `e`, in relation order.
    pub fn outgoing(&self, e: EntityId) -> &[(RelationId, Vec<EntityId>)] {
        &self.adjacency[e.index()]
    }

    pub fn out_degree(&self, e: EntityId) -> usize {
        self.adjacency[e.index()].iter().map(|(_, n)| n.len()).sum()
    }

    pub fn has_edge(&self, h: EntityId, r: RelationId, t: EntityId) -> bool {
        self.neighbors(h, r).binary_search(&t).is_ok()
    }

    /// Number of forward triples (inverses not counted).
    pub fn num_triples(&self) -> usize {
        self.edge_count
    }

    /// Number of stored directed edges, inverses included.
    pub fn num_directed_edges(&self) -> usize {
        self.adjacency
            .iter()
            .flat_map(|a| a.iter())
            .map(|(_, n)| n.len())
            .sum()
    }

    /// Items the user interacted with in this graph.
    pub fn interacted_items(&self, u: EntityId) -> &[EntityId] {
        self.neighbors(u, self.schema.interaction())
    }

    pub fn has_interaction(&self, u: EntityId, i: EntityId) -> bool {
        self.has_edge(u, self.schema.interaction(), i)
    }

    /// Forward triples (declared relation direction for each stored pair),
    /// ordered by head, relation, tail.
    pub fn triples(&self) -> Vec<(EntityId, RelationId, EntityId)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (h, adj) in self.adjacency.iter().enumerate() {
            for (r, tails) in adj {
                let rel = self.schema.relation(*r);
                let forward = rel.declared || rel.inverse_of == *r;
                if !forward {
                    continue;
                }
                for &t in tails {
                    // a self-inverse relation stores each pair twice
                    if rel.inverse_of == *r && t.index() < h {
                        continue;
                    }
                    out.push((EntityId(h as u32), *r, t));
                }
            }
        }
        out
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            users: self.users().len(),
            items: self.items().len(),
            interactions: self
                .users()
                .iter()
                .map(|&u| self.interacted_items(u).len())
                .sum(),
            entities: self.num_entities(),
            relations: self.schema.num_relations(),
            triples: self.num_triples(),
        }
    }

    /// Checks that `path` starts at a user and every hop is a stored edge.
    pub fn validate_path(&self, path: &ReasoningPath) -> Result<()> {
        if path.entities.len() != path.relations.len() + 1 {
            return Err(Error::InvalidPath(format!(
                "{} entities for {} relations",
                path.entities.len(),
                path.relations.len()
            )));
        }
        let start = path.entities[0];
        if !self.contains(start) || !self.is_user(start) {
            return Err(Error::InvalidPath(format!("{start} is not a user")));
        }
        for (t, &r) in path.relations.iter().enumerate() {
            let (a, b) = (path.entities[t], path.entities[t + 1]);
            if !self.contains(b) || !self.has_edge(a, r, b) {
                return Err(Error::InvalidPath(format!("hop {} ({a}, {r}, {b}) not in graph", t + 1)));
            }
        }
        Ok(())
    }

    /// Human-readable `e0-[r1]->e1-[r2]->e2` rendering with names.
    pub fn format_path(&self, path: &ReasoningPath) -> String {
        let mut s = self.entity_name(path.entities[0]).to_string();
        for (t, &r) in path.relations.iter().enumerate() {
            s.push_str("-[");
            s.push_str(&self.schema.relation(r).name);
            s.push_str("]->");
            s.push_str(self.entity_name(path.entities[t + 1]));
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
}

impl fmt::Display for GraphStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "#Users {} | #Items {} | #Interactions {} | #Entities {} | #Relations {} | #Triples {}",
            self.users, self.items, self.interactions, self.entities, self.relations, self.triples
        )
    }
}

/// Alternating entity/relation walk starting at a user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasoningPath {
    pub entities: Vec<EntityId>,
    pub relations: Vec<RelationId>,
    pub score: Option<f64>,
}

impl ReasoningPath {
    pub fn new(start: EntityId) -> Self {
        Self {
            entities: vec![start],
            relations: Vec::new(),
            score: None,
        }
    }

    pub fn extended(&self, r: RelationId, e: EntityId) -> Self {
        let mut p = self.clone();
        p.relations.push(r);
        p.entities.push(e);
        p.score = None;
        p
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn user(&self) -> EntityId {
        self.entities[0]
    }

    pub fn last(&self) -> EntityId {
        *self.entities.last().expect("path has a start entity")
    }

    pub fn contains(&self, e: EntityId) -> bool {
        self.entities.contains(&e)
    }

    /// Identity of the walk, ignoring the score.
    pub fn key(&self) -> (Vec<EntityId>, Vec<RelationId>) {
        (self.entities.clone(), self.relations.clone())
    }

    pub fn is_user_centric(&self, graph: &KnowledgeGraph) -> bool {
        graph.is_item(self.last())
    }
}
