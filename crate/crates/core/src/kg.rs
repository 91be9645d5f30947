//! Typed multigraph storage shared by every other module.
//!
//! Entities and relations are dense integer ids. Every stored triple
//! `(h, r, t)` is traversable in both directions: forward along `r` from `h`,
//! and backward (the materialized inverse relation) from `t`. In the doubled
//! relation space used by message passing, relation `r` has id `r` and its
//! inverse has id `r + num_relations`.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RelationId(pub u32);

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

/// Orientation of a traversed edge relative to its stored triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::Forward => Direction::Backward,
            Direction::Backward => Direction::Forward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: u32, relation: u32, tail: u32) -> Self {
        Triple {
            head: EntityId(head),
            relation: RelationId(relation),
            tail: EntityId(tail),
        }
    }
}

/// One edge seen from an entity: which relation, which way, and where it leads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Step {
    pub relation: RelationId,
    pub direction: Direction,
    pub neighbor: EntityId,
}

impl Step {
    /// The stored triple this step walks over, starting at `from`.
    pub fn triple(&self, from: EntityId) -> Triple {
        match self.direction {
            Direction::Forward => Triple {
                head: from,
                relation: self.relation,
                tail: self.neighbor,
            },
            Direction::Backward => Triple {
                head: self.neighbor,
                relation: self.relation,
                tail: from,
            },
        }
    }
}

/// A simple path: `entities[i] --steps[i]--> entities[i + 1]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Path {
    pub entities: Vec<EntityId>,
    pub steps: Vec<(RelationId, Direction)>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn end(&self) -> EntityId {
        *self.entities.last().expect("a path always has a start entity")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnowledgeGraph {
    num_entities: usize,
    num_relations: usize,
    triples: Vec<Triple>,
    out_adj: Vec<Vec<(RelationId, EntityId)>>,
    in_adj: Vec<Vec<(RelationId, EntityId)>>,
    incident: Vec<Vec<Step>>,
    entity_types: Option<Vec<u32>>,
}

impl KnowledgeGraph {
    /// Builds the adjacency indexes. Duplicate triples are dropped; the stored
    /// triple list is sorted by `(head, relation, tail)`.
    pub fn build(triples: &[Triple], num_entities: usize, num_relations: usize) -> Result<Self> {
        for (index, t) in triples.iter().enumerate() {
            let reason = if t.head.index() >= num_entities {
                Some("head")
            } else if t.tail.index() >= num_entities {
                Some("tail")
            } else if t.relation.index() >= num_relations {
                Some("relation")
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::TripleOutOfRange {
                    index,
                    triple: *t,
                    reason,
                });
            }
        }

        let mut triples = triples.to_vec();
        triples.sort_unstable();
        triples.dedup();

        let mut out_adj = vec![Vec::new(); num_entities];
        let mut in_adj = vec![Vec::new(); num_entities];
        let mut incident = vec![Vec::new(); num_entities];
        for t in &triples {
            out_adj[t.head.index()].push((t.relation, t.tail));
            in_adj[t.tail.index()].push((t.relation, t.head));
            incident[t.head.index()].push(Step {
                relation: t.relation,
                direction: Direction::Forward,
                neighbor: t.tail,
            });
            incident[t.tail.index()].push(Step {
                relation: t.relation,
                direction: Direction::Backward,
                neighbor: t.head,
            });
        }
        for list in out_adj.iter_mut().chain(in_adj.iter_mut()) {
            list.sort_unstable();
        }
        for list in incident.iter_mut() {
            list.sort_unstable();
        }

        Ok(KnowledgeGraph {
            num_entities,
            num_relations,
            triples,
            out_adj,
            in_adj,
            incident,
            entity_types: None,
        })
    }

    pub fn with_entity_types(mut self, types: Vec<u32>) -> Result<Self> {
        if types.len() != self.num_entities {
            return Err(Error::Dimension(format!(
                "{} entity types for {} entities",
                types.len(),
                self.num_entities
            )));
        }
        self.entity_types = Some(types);
        Ok(self)
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    /// Number of stored (forward) relation types.
    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    /// Size of the relation space with inverses materialized.
    pub fn relation_space(&self) -> usize {
        2 * self.num_relations
    }

    /// Id of `r` traversed in `direction` within the doubled relation space.
    pub fn directed_relation(&self, r: RelationId, direction: Direction) -> RelationId {
        match direction {
            Direction::Forward => r,
            Direction::Backward => RelationId(r.0 + self.num_relations as u32),
        }
    }

    /// Inverse of a relation in the doubled space; an involution.
    pub fn inverse(&self, r: RelationId) -> RelationId {
        let n = self.num_relations as u32;
        if r.0 < n {
            RelationId(r.0 + n)
        } else {
            RelationId(r.0 - n)
        }
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn out_adj(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.out_adj[e.index()]
    }

    pub fn in_adj(&self, e: EntityId) -> &[(RelationId, EntityId)] {
        &self.in_adj[e.index()]
    }

    /// All edges touching `e`, ordered by `(relation, direction, neighbor)`.
    pub fn incident(&self, e: EntityId) -> &[Step] {
        &self.incident[e.index()]
    }

    /// Neighbors of `e` reachable with one step of `relation` in `direction`,
    /// in ascending id order.
    pub fn step_neighbors(&self, e: EntityId, relation: RelationId, direction: Direction) -> &[Step] {
        let list = &self.incident[e.index()];
        let lo = list.partition_point(|s| (s.relation, s.direction) < (relation, direction));
        let hi = list.partition_point(|s| (s.relation, s.direction) <= (relation, direction));
        &list[lo..hi]
    }

    pub fn has_edge(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.out_adj[head.index()]
            .binary_search(&(relation, tail))
            .is_ok()
    }

    pub fn entity_types(&self) -> Option<&[u32]> {
        self.entity_types.as_deref()
    }

    pub fn entity_type(&self, e: EntityId) -> Option<u32> {
        self.entity_types.as_ref().map(|t| t[e.index()])
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if e.index() >= self.num_entities {
            Err(Error::UnknownEntity(e.0))
        } else {
            Ok(())
        }
    }

    /// Undirected shortest-path length from the nearest source, or `None`
    /// for entities farther than `max_hops` (or unreachable).
    pub fn multi_source_bfs_distance(
        &self,
        sources: &[EntityId],
        max_hops: usize,
    ) -> Result<Vec<Option<u32>>> {
        if sources.is_empty() {
            return Err(Error::EmptySources);
        }
        let mut dist = vec![None; self.num_entities];
        let mut queue = VecDeque::new();
        for &s in sources {
            self.check_entity(s)?;
            if dist[s.index()].is_none() {
                dist[s.index()] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()].unwrap();
            if d as usize >= max_hops {
                continue;
            }
            for step in &self.incident[u.index()] {
                let v = step.neighbor.index();
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(step.neighbor);
                }
            }
        }
        Ok(dist)
    }

    /// Every simple path of at most `max_len` steps from `start` that ends in
    /// `goals`, in depth-first order with branches taken by ascending
    /// `(relation, direction, neighbor)`. Paths may pass through a goal on
    /// their way to another one.
    pub fn dfs_paths(&self, start: EntityId, goals: &[EntityId], max_len: usize) -> Vec<Path> {
        let mut out = Vec::new();
        if start.index() >= self.num_entities {
            return out;
        }
        let mut is_goal = vec![false; self.num_entities];
        for g in goals {
            if g.index() < self.num_entities {
                is_goal[g.index()] = true;
            }
        }
        let mut on_path = vec![false; self.num_entities];
        let mut entities = vec![start];
        let mut steps = Vec::new();
        on_path[start.index()] = true;
        self.dfs_visit(&is_goal, &mut on_path, &mut entities, &mut steps, max_len, &mut out);
        out
    }

    fn dfs_visit(
        &self,
        is_goal: &[bool],
        on_path: &mut [bool],
        entities: &mut Vec<EntityId>,
        steps: &mut Vec<(RelationId, Direction)>,
        max_len: usize,
        out: &mut Vec<Path>,
    ) {
        let here = *entities.last().unwrap();
        if is_goal[here.index()] {
            out.push(Path {
                entities: entities.clone(),
                steps: steps.clone(),
            });
        }
        if steps.len() == max_len {
            return;
        }
        for step in &self.incident[here.index()] {
            let v = step.neighbor;
            if on_path[v.index()] {
                continue;
            }
            on_path[v.index()] = true;
            entities.push(v);
            steps.push((step.relation, step.direction));
            self.dfs_visit(is_goal, on_path, entities, steps, max_len, out);
            steps.pop();
            entities.pop();
            on_path[v.index()] = false;
        }
    }
}

/// String interner backing the dense ids of a TSV-ingested graph.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Writes one `name<TAB>id` line per entry.
    pub fn write_tsv(&self, path: &FsPath) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::file(path, e))?;
        let mut w = BufWriter::new(file);
        for (id, name) in self.names.iter().enumerate() {
            writeln!(w, "{name}\t{id}")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_tsv(path: &FsPath) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: &str| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: message.to_string(),
            };
            let (name, id) = line.rsplit_once('\t').ok_or_else(|| parse_err("expected name<TAB>id"))?;
            let id: u32 = id.parse().map_err(|_| parse_err("id is not an integer"))?;
            entries.push((id, name.to_string()));
        }
        entries.sort();
        let mut vocab = Vocab::new();
        for (expected, (id, name)) in entries.into_iter().enumerate() {
            if id as usize != expected {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: 0,
                    message: format!("ids are not contiguous at {id}"),
                });
            }
            vocab.intern(&name);
        }
        Ok(vocab)
    }
}

/// A graph ingested from `head<TAB>relation<TAB>tail` lines.
#[derive(Clone, Debug)]
pub struct LoadedGraph {
    pub graph: KnowledgeGraph,
    pub entities: Vocab,
    pub relations: Vocab,
}

impl LoadedGraph {
    pub fn read_tsv(path: &FsPath) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::file(path, e))?;
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut triples = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            let h = entities.intern(fields[0]);
            let r = relations.intern(fields[1]);
            let t = entities.intern(fields[2]);
            triples.push(Triple::new(h, r, t));
        }
        let graph = KnowledgeGraph::build(&triples, entities.len(), relations.len())?;
        Ok(LoadedGraph {
            graph,
            entities,
            relations,
        })
    }

    /// Writes `entities.vocab` and `relations.vocab` into `dir`.
    pub fn write_vocab(&self, dir: &FsPath) -> Result<()> {
        self.entities.write_tsv(&dir.join("entities.vocab"))?;
        self.relations.write_tsv(&dir.join("relations.vocab"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: u32) -> KnowledgeGraph {
        let triples: Vec<_> = (0..n - 1).map(|i| Triple::new(i, 0, i + 1)).collect();
        KnowledgeGraph::build(&triples, n as usize, 1).unwrap()
    }

    #[test]
    fn empty_graph() {
        let g = KnowledgeGraph::build(&[], 0, 0).unwrap();
        assert_eq!(g.num_triples(), 0);
        assert_eq!(g.num_entities(), 0);
    }

    #[test]
    fn chain_adjacency() {
        let g = chain(3);
        assert_eq!(g.out_adj(EntityId(0)), &[(RelationId(0), EntityId(1))]);
        assert_eq!(g.out_adj(EntityId(1)), &[(RelationId(0), EntityId(2))]);
        assert_eq!(g.in_adj(EntityId(2)), &[(RelationId(0), EntityId(1))]);
        assert!(g.out_adj(EntityId(2)).is_empty());
    }

    #[test]
    fn duplicates_are_dropped() {
        let t = Triple::new(0, 0, 1);
        let g = KnowledgeGraph::build(&[t, t], 2, 1).unwrap();
        assert_eq!(g.triples(), &[t]);
        assert_eq!(g.out_adj(EntityId(0)).len(), 1);
    }

    #[test]
    fn out_of_range_names_the_triple() {
        let err = KnowledgeGraph::build(&[Triple::new(0, 0, 1), Triple::new(0, 3, 1)], 2, 2).unwrap_err();
        match err {
            Error::TripleOutOfRange { index, reason, .. } => {
                assert_eq!(index, 1);
                assert_eq!(reason, "relation");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rebuild_from_triples_is_identical() {
        let g = KnowledgeGraph::build(
            &[Triple::new(2, 1, 0), Triple::new(0, 0, 1), Triple::new(1, 1, 2), Triple::new(0, 1, 2)],
            3,
            2,
        )
        .unwrap();
        let again = KnowledgeGraph::build(g.triples(), 3, 2).unwrap();
        assert_eq!(g, again);
    }

    #[test]
    fn inverse_is_an_involution() {
        let g = KnowledgeGraph::build(&[], 1, 5).unwrap();
        for r in 0..10 {
            let r = RelationId(r);
            assert_ne!(g.inverse(r), r);
            assert_eq!(g.inverse(g.inverse(r)), r);
        }
    }

    #[test]
    fn bfs_self_and_chain() {
        let g = chain(3);
        let d = g.multi_source_bfs_distance(&[EntityId(0)], 3).unwrap();
        assert_eq!(d, vec![Some(0), Some(1), Some(2)]);
        let d = g.multi_source_bfs_distance(&[EntityId(2)], 1).unwrap();
        assert_eq!(d, vec![None, Some(1), Some(0)]);
    }

    #[test]
    fn bfs_two_sources_takes_minimum() {
        let g = chain(5);
        let d = g.multi_source_bfs_distance(&[EntityId(0), EntityId(4)], 4).unwrap();
        assert_eq!(d, vec![Some(0), Some(1), Some(2), Some(1), Some(0)]);
    }

    #[test]
    fn bfs_rejects_empty_sources() {
        assert!(matches!(
            chain(2).multi_source_bfs_distance(&[], 3),
            Err(Error::EmptySources)
        ));
    }

    #[test]
    fn dfs_start_is_goal() {
        let g = chain(3);
        let paths = g.dfs_paths(EntityId(1), &[EntityId(1)], 3);
        assert_eq!(paths.len(), 1);
        assert!(paths[0].is_empty());
    }

    #[test]
    fn dfs_unique_two_hop_path() {
        // 0 -r0-> 1 -r1-> 2, plus a dangling 0 -r2-> 3
        let g = KnowledgeGraph::build(
            &[Triple::new(0, 0, 1), Triple::new(1, 1, 2), Triple::new(0, 2, 3)],
            4,
            3,
        )
        .unwrap();
        let paths = g.dfs_paths(EntityId(0), &[EntityId(2)], 3);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].entities, vec![EntityId(0), EntityId(1), EntityId(2)]);
        assert_eq!(
            paths[0].steps,
            vec![(RelationId(0), Direction::Forward), (RelationId(1), Direction::Forward)]
        );
    }

    #[test]
    fn dfs_walks_edges_backwards() {
        let g = KnowledgeGraph::build(&[Triple::new(1, 0, 0)], 2, 1).unwrap();
        let paths = g.dfs_paths(EntityId(0), &[EntityId(1)], 1);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].steps, vec![(RelationId(0), Direction::Backward)]);
    }

    #[test]
    fn step_neighbors_selects_relation_and_direction() {
        let g = KnowledgeGraph::build(
            &[Triple::new(0, 0, 1), Triple::new(0, 0, 2), Triple::new(3, 0, 0), Triple::new(0, 1, 3)],
            4,
            2,
        )
        .unwrap();
        let fwd: Vec<_> = g
            .step_neighbors(EntityId(0), RelationId(0), Direction::Forward)
            .iter()
            .map(|s| s.neighbor.0)
            .collect();
        assert_eq!(fwd, vec![1, 2]);
        let back: Vec<_> = g
            .step_neighbors(EntityId(0), RelationId(0), Direction::Backward)
            .iter()
            .map(|s| s.neighbor.0)
            .collect();
        assert_eq!(back, vec![3]);
    }

    #[test]
    fn tsv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kg.tsv");
        std::fs::write(&path, "a\tknows\tb\nb\tknows\tc\na\tlikes\tc\na\tknows\tb\n").unwrap();
        let loaded = LoadedGraph::read_tsv(&path).unwrap();
        assert_eq!(loaded.graph.num_entities(), 3);
        assert_eq!(loaded.graph.num_relations(), 2);
        assert_eq!(loaded.graph.num_triples(), 3);
        loaded.write_vocab(dir.path()).unwrap();
        let ents = Vocab::read_tsv(&dir.path().join("entities.vocab")).unwrap();
        assert_eq!(ents, loaded.entities);
        assert_eq!(ents.get("c"), Some(2));
    }

    #[test]
    fn tsv_rejects_bad_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kg.tsv");
        std::fs::write(&path, "a\tknows\tb\nbroken line\n").unwrap();
        match LoadedGraph::read_tsv(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
