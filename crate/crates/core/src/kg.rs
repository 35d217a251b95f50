//! Commonsense knowledge graph: ingestion of `relation,start,end,weight`
//! edge lists and hop-bounded neighborhood queries.
//!
//! Edges are stored undirected. An assertion `IsA,chair,furniture` is
//! visible from both `chair` and `furniture`, and the reversed assertion
//! `IsA,furniture,chair` collapses onto the same edge.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A normalized vocabulary term: lowercase, whitespace runs collapsed to `_`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Term(String);

impl Term {
    pub fn new(raw: &str) -> Result<Self> {
        let text = raw
            .split_whitespace()
            .map(str::to_lowercase)
            .collect::<Vec<_>>()
            .join("_");
        if text.is_empty() {
            return Err(Error::invalid("empty term"));
        }
        Ok(Term(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Term {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Term::new(&value)
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.0
    }
}

impl std::str::FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::new(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub relation: String,
    pub start: Term,
    pub end: Term,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub term: Term,
    pub relation: String,
    pub weight: f64,
}

/// One entry of a [`KnowledgeGraph::neighbors`] query.
#[derive(Clone, Debug, PartialEq)]
pub struct Reached {
    pub term: Term,
    pub hops: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KnowledgeGraph {
    adjacency: BTreeMap<Term, Vec<Neighbor>>,
    edge_count: usize,
}

impl KnowledgeGraph {
    /// Parses a CSV edge list. Blank lines and `#` comments are skipped.
    pub fn ingest<R: Read>(source: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(source);

        // (lo, hi, relation) -> weight
        let mut edges: BTreeMap<(Term, Term, String), f64> = BTreeMap::new();
        for record in reader.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                Error::parse(line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            if record.iter().all(str::is_empty) {
                continue;
            }
            let edge = parse_edge(&record, line)?;
            let (lo, hi) = if edge.start <= edge.end {
                (edge.start, edge.end)
            } else {
                (edge.end, edge.start)
            };
            let slot = edges.entry((lo, hi, edge.relation)).or_insert(edge.weight);
            if edge.weight > *slot {
                *slot = edge.weight;
            }
        }

        Ok(Self::from_unique_edges(edges))
    }

    fn from_unique_edges(edges: BTreeMap<(Term, Term, String), f64>) -> Self {
        let mut adjacency: BTreeMap<Term, Vec<Neighbor>> = BTreeMap::new();
        let edge_count = edges.len();
        for ((a, b, relation), weight) in edges {
            adjacency.entry(a.clone()).or_default().push(Neighbor {
                term: b.clone(),
                relation: relation.clone(),
                weight,
            });
            adjacency.entry(b).or_default().push(Neighbor {
                term: a,
                relation,
                weight,
            });
        }
        KnowledgeGraph { adjacency, edge_count }
    }

    pub fn term_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.adjacency.contains_key(t)
    }

    pub fn terms(&self) -> impl Iterator<Item = &Term> {
        self.adjacency.keys()
    }

    /// Direct neighbors of `t`, one entry per stored (neighbor, relation) edge.
    pub fn adjacent(&self, t: &Term) -> &[Neighbor] {
        self.adjacency.get(t).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Distinct adjacent terms, with the largest weight over all relations.
    pub fn adjacent_terms(&self, t: &Term) -> BTreeMap<&Term, f64> {
        let mut out: BTreeMap<&Term, f64> = BTreeMap::new();
        for n in self.adjacent(t) {
            let w = out.entry(&n.term).or_insert(n.weight);
            if n.weight > *w {
                *w = n.weight;
            }
        }
        out
    }

    /// Every unordered edge once, with `start <= end`.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (term, list) in &self.adjacency {
            for n in list {
                if *term <= n.term {
                    out.push(Edge {
                        relation: n.relation.clone(),
                        start: term.clone(),
                        end: n.term.clone(),
                        weight: n.weight,
                    });
                }
            }
        }
        out
    }

    /// Breadth-first closure around `t` up to `max_hops`, excluding `t`.
    ///
    /// Each term appears once, at its minimum hop distance, with the best
    /// weight among edges reaching it from the previous ring. Rings are
    /// ordered by descending weight, then by term.
    pub fn neighbors(&self, t: &Term, max_hops: usize) -> Result<Vec<Reached>> {
        if max_hops == 0 {
            return Err(Error::invalid("max_hops must be at least 1"));
        }
        if !self.contains(t) {
            return Ok(Vec::new());
        }
        let mut seen: BTreeSet<&Term> = BTreeSet::new();
        seen.insert(t);
        let mut frontier: Vec<&Term> = vec![t];
        let mut out = Vec::new();
        for hop in 1..=max_hops {
            let mut ring: BTreeMap<&Term, f64> = BTreeMap::new();
            for &from in &frontier {
                for n in self.adjacent(from) {
                    if seen.contains(&n.term) {
                        continue;
                    }
                    let w = ring.entry(&n.term).or_insert(n.weight);
                    if n.weight > *w {
                        *w = n.weight;
                    }
                }
            }
            if ring.is_empty() {
                break;
            }
            let mut level: Vec<(&Term, f64)> = ring.into_iter().collect();
            level.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            frontier = level.iter().map(|(term, _)| *term).collect();
            for (term, weight) in level {
                seen.insert(term);
                out.push(Reached {
                    term: term.clone(),
                    hops: hop,
                    weight,
                });
            }
        }
        Ok(out)
    }

    /// Writes the graph back out in the ingestion CSV format.
    pub fn export<W: Write>(&self, mut sink: W) -> Result<()> {
        for e in self.edges() {
            writeln!(sink, "{},{},{},{}", e.relation, e.start, e.end, e.weight)?;
        }
        Ok(())
    }
}

fn parse_edge(record: &csv::StringRecord, line: usize) -> Result<Edge> {
    if !(3..=4).contains(&record.len()) {
        return Err(Error::parse(
            line,
            format!("expected `relation,start,end[,weight]`, got {} fields", record.len()),
        ));
    }
    let relation = record[0].to_string();
    if relation.is_empty() {
        return Err(Error::parse(line, "empty relation"));
    }
    let start = Term::new(&record[1]).map_err(|_| Error::parse(line, "empty start term"))?;
    let end = Term::new(&record[2]).map_err(|_| Error::parse(line, "empty end term"))?;
    let weight = match record.get(3) {
        None | Some("") => 1.0,
        Some(raw) => raw
            .parse::<f64>()
            .map_err(|_| Error::parse(line, format!("bad weight `{raw}`")))?,
    };
    if !weight.is_finite() {
        return Err(Error::parse(line, format!("non-finite weight `{weight}`")));
    }
    if weight < 0.0 {
        return Err(Error::invalid_at(line, format!("negative weight {weight}")));
    }
    if start == end {
        return Err(Error::invalid_at(line, format!("self-loop on `{start}`")));
    }
    Ok(Edge {
        relation,
        start,
        end,
        weight,
    })
}
