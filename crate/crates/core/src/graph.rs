//! Signed directed graphs and edge list I/O.
//!
//! A [`SignedDigraph`] stores at most one signed edge per ordered node pair
//! and indexes, for every node, the four neighbor lists that drive message
//! passing: targets of outgoing positive/negative edges and sources of
//! incoming positive/negative edges.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type NodeId = usize;

/// Edge polarity. Neutral edges do not exist in the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Positive,
    Negative,
}

impl Sign {
    /// +1 or -1.
    pub fn value(self) -> i8 {
        match self {
            Sign::Positive => 1,
            Sign::Negative => -1,
        }
    }

    /// Binary classification target: 1.0 for positive, 0.0 for negative.
    pub fn label(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => 0.0,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub sign: Sign,
}

impl Edge {
    pub fn new(src: NodeId, dst: NodeId, sign: Sign) -> Self {
        Edge { src, dst, sign }
    }
}

/// The four signed directed relations a node participates in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    /// Targets of outgoing positive edges.
    OutPos,
    /// Targets of outgoing negative edges.
    OutNeg,
    /// Sources of incoming positive edges.
    InPos,
    /// Sources of incoming negative edges.
    InNeg,
}

impl Relation {
    pub const ALL: [Relation; 4] = [
        Relation::OutPos,
        Relation::OutNeg,
        Relation::InPos,
        Relation::InNeg,
    ];

    pub fn index(self) -> usize {
        match self {
            Relation::OutPos => 0,
            Relation::OutNeg => 1,
            Relation::InPos => 2,
            Relation::InNeg => 3,
        }
    }
}

/// On-disk edge list dialects.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeListFormat {
    /// `src<TAB>dst<TAB>sign` with sign in {1, -1}; sign 0 rows are dropped.
    TsvSign,
    /// `source,target,rating[,time]` with nonzero rating; sign(rating) is the
    /// edge sign and any trailing columns are ignored.
    CsvRating,
}

impl fmt::Display for EdgeListFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeListFormat::TsvSign => "tsv_sign",
            EdgeListFormat::CsvRating => "csv_rating",
        })
    }
}

impl std::str::FromStr for EdgeListFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv_sign" => Ok(EdgeListFormat::TsvSign),
            "csv_rating" => Ok(EdgeListFormat::CsvRating),
            other => Err(format!("unknown edge list format {other:?}")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{0}")]
    Io(#[from] io::Error),
    #[error("{origin}:{line}: {msg}")]
    Parse {
        origin: String,
        line: usize,
        msg: String,
    },
}

/// A signed directed graph with per-relation neighbor indexes.
///
/// Invariants: no self-loops, at most one edge per ordered pair, every
/// endpoint below `node_count`, neighbor lists sorted ascending.
#[derive(Clone, Debug)]
pub struct SignedDigraph {
    labels: Vec<String>,
    edges: Vec<Edge>,
    neighbors: [Vec<Vec<NodeId>>; 4],
    pos_edges: usize,
    dropped_self_loops: usize,
    dropped_neutral: usize,
}

impl PartialEq for SignedDigraph {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.edges == other.edges
    }
}

/// 80/20-style partition of a graph's edges.
#[derive(Clone, Debug)]
pub struct EdgeSplit {
    pub train: Vec<Edge>,
    pub test: Vec<Edge>,
    pub train_ratio: f64,
    pub seed: u64,
}

impl SignedDigraph {
    /// Builds a graph from raw records, applying the same row policies as the
    /// loaders: self-loops are dropped and counted, a repeated ordered pair
    /// keeps its first position but the last sign read.
    ///
    /// Node ids must already be dense; `node_count` may exceed the largest
    /// endpoint to allow isolated nodes.
    pub fn from_edge_list(node_count: usize, records: &[(NodeId, NodeId, Sign)]) -> Self {
        let labels = (0..node_count).map(|v| v.to_string()).collect();
        let mut builder = Builder::with_labels(labels);
        for &(src, dst, sign) in records {
            assert!(
                src < node_count && dst < node_count,
                "edge ({src}, {dst}) out of range for {node_count} nodes"
            );
            builder.push(src, dst, sign);
        }
        builder.finish()
    }

    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn pos_edge_count(&self) -> usize {
        self.pos_edges
    }

    pub fn neg_edge_count(&self) -> usize {
        self.edges.len() - self.pos_edges
    }

    /// Edges in input order (first-occurrence order for loaded files).
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Original label of a node (the token it carried in the input file).
    pub fn label(&self, u: NodeId) -> &str {
        &self.labels[u]
    }

    /// Rows dropped by the loader because src == dst.
    pub fn dropped_self_loops(&self) -> usize {
        self.dropped_self_loops
    }

    /// Rows dropped by the tsv loader because they carried sign 0.
    pub fn dropped_neutral(&self) -> usize {
        self.dropped_neutral
    }

    /// Neighbors of `u` under one relation, sorted ascending.
    pub fn relation_neighbors(&self, u: NodeId, r: Relation) -> &[NodeId] {
        assert!(u < self.node_count(), "node {u} out of range");
        &self.neighbors[r.index()][u]
    }

    /// Sign of the edge u -> v if present.
    pub fn edge_sign(&self, u: NodeId, v: NodeId) -> Option<Sign> {
        if u >= self.node_count() {
            return None;
        }
        if self.neighbors[0][u].binary_search(&v).is_ok() {
            Some(Sign::Positive)
        } else if self.neighbors[1][u].binary_search(&v).is_ok() {
            Some(Sign::Negative)
        } else {
            None
        }
    }

    /// True if u and v are connected by an edge in either direction.
    pub fn connected(&self, u: NodeId, v: NodeId) -> bool {
        self.edge_sign(u, v).is_some() || self.edge_sign(v, u).is_some()
    }

    /// Same node set and labels, different edge set. Used to form the train
    /// graph of a split without renumbering nodes.
    pub fn with_edges(&self, edges: &[Edge]) -> SignedDigraph {
        let mut builder = Builder::with_labels(self.labels.clone());
        for e in edges {
            assert!(e.src < self.node_count() && e.dst < self.node_count());
            builder.push(e.src, e.dst, e.sign);
        }
        builder.finish()
    }

    /// Shuffles edges with a seeded generator and takes ceil(ratio * |E|)
    /// for training. The same (graph, ratio, seed) always yields the same
    /// split.
    pub fn split_edges(&self, train_ratio: f64, seed: u64) -> EdgeSplit {
        assert!(
            train_ratio > 0.0 && train_ratio <= 1.0,
            "train ratio {train_ratio} outside (0, 1]"
        );
        let mut shuffled = self.edges.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        shuffled.shuffle(&mut rng);
        let n_train = ((train_ratio * shuffled.len() as f64).ceil() as usize).min(shuffled.len());
        let test = shuffled.split_off(n_train);
        EdgeSplit {
            train: shuffled,
            test,
            train_ratio,
            seed,
        }
    }

    /// Canonical serialization: one `src<TAB>dst<TAB>sign` line per edge, in
    /// stored order, using original node labels. Reloading with
    /// [`EdgeListFormat::TsvSign`] reproduces the graph exactly.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.edges {
            writeln!(
                w,
                "{}\t{}\t{}",
                self.labels[e.src],
                self.labels[e.dst],
                e.sign.value()
            )?;
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_tsv(&mut w)?;
        w.flush()
    }
}

/// Incremental construction with the shared row policies.
struct Builder {
    labels: Vec<String>,
    ids: HashMap<String, NodeId>,
    edges: Vec<Edge>,
    pair_index: HashMap<(NodeId, NodeId), usize>,
    dropped_self_loops: usize,
    dropped_neutral: usize,
}

impl Builder {
    fn new() -> Self {
        Builder {
            labels: Vec::new(),
            ids: HashMap::new(),
            edges: Vec::new(),
            pair_index: HashMap::new(),
            dropped_self_loops: 0,
            dropped_neutral: 0,
        }
    }

    /// Pre-seeded dense labels; intern map stays empty because callers pass
    /// numeric ids directly.
    fn with_labels(labels: Vec<String>) -> Self {
        let mut b = Builder::new();
        b.labels = labels;
        b
    }

    fn intern(&mut self, token: &str) -> NodeId {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(token.to_string());
        self.ids.insert(token.to_string(), id);
        id
    }

    fn push(&mut self, src: NodeId, dst: NodeId, sign: Sign) {
        if src == dst {
            self.dropped_self_loops += 1;
            return;
        }
        match self.pair_index.get(&(src, dst)) {
            Some(&idx) => self.edges[idx].sign = sign,
            None => {
                self.pair_index.insert((src, dst), self.edges.len());
                self.edges.push(Edge::new(src, dst, sign));
            }
        }
    }

    fn finish(self) -> SignedDigraph {
        let n = self.labels.len();
        let mut neighbors: [Vec<Vec<NodeId>>; 4] = std::array::from_fn(|_| vec![Vec::new(); n]);
        let mut pos_edges = 0;
        for e in &self.edges {
            match e.sign {
                Sign::Positive => {
                    pos_edges += 1;
                    neighbors[0][e.src].push(e.dst);
                    neighbors[2][e.dst].push(e.src);
                }
                Sign::Negative => {
                    neighbors[1][e.src].push(e.dst);
                    neighbors[3][e.dst].push(e.src);
                }
            }
        }
        for lists in neighbors.iter_mut() {
            for list in lists.iter_mut() {
                list.sort_unstable();
            }
        }
        SignedDigraph {
            labels: self.labels,
            edges: self.edges,
            neighbors,
            pos_edges,
            dropped_self_loops: self.dropped_self_loops,
            dropped_neutral: self.dropped_neutral,
        }
    }
}

/// Loads an edge list file. Node ids are assigned by first appearance among
/// surviving rows, so ids are dense in [0, node_count).
pub fn load_edge_list(
    path: impl AsRef<Path>,
    format: EdgeListFormat,
) -> Result<SignedDigraph, LoadError> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_edge_list(BufReader::new(file), format, &path.display().to_string())
}

/// Loader body, parameterized over the input stream for testability.
pub fn read_edge_list<R: BufRead>(
    reader: R,
    format: EdgeListFormat,
    origin: &str,
) -> Result<SignedDigraph, LoadError> {
    let parse_err = |line: usize, msg: String| LoadError::Parse {
        origin: origin.to_string(),
        line,
        msg,
    };
    let mut builder = Builder::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (src_tok, dst_tok, sign) = match format {
            EdgeListFormat::TsvSign => {
                let mut it = trimmed.split_whitespace();
                let (Some(s), Some(d), Some(v)) = (it.next(), it.next(), it.next()) else {
                    return Err(parse_err(
                        line_no,
                        format!("expected `src dst sign`, got {trimmed:?}"),
                    ));
                };
                if it.next().is_some() {
                    return Err(parse_err(line_no, format!("trailing fields in {trimmed:?}")));
                }
                let value: i64 = v
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("sign {v:?} is not an integer")))?;
                let sign = match value {
                    1 => Some(Sign::Positive),
                    -1 => Some(Sign::Negative),
                    0 => None,
                    other => {
                        return Err(parse_err(line_no, format!("sign {other} not in {{1, -1, 0}}")))
                    }
                };
                (s, d, sign)
            }
            EdgeListFormat::CsvRating => {
                let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
                if fields.len() < 3 {
                    return Err(parse_err(
                        line_no,
                        format!("expected `source,target,rating[,time]`, got {trimmed:?}"),
                    ));
                }
                let rating: f64 = fields[2].parse().map_err(|_| {
                    parse_err(line_no, format!("rating {:?} is not a number", fields[2]))
                })?;
                if rating == 0.0 {
                    return Err(parse_err(line_no, "rating 0 has no sign".to_string()));
                }
                let sign = if rating > 0.0 {
                    Sign::Positive
                } else {
                    Sign::Negative
                };
                (fields[0], fields[1], Some(sign))
            }
        };
        if src_tok == dst_tok {
            builder.dropped_self_loops += 1;
            continue;
        }
        let Some(sign) = sign else {
            builder.dropped_neutral += 1;
            continue;
        };
        let src = builder.intern(src_tok);
        let dst = builder.intern(dst_tok);
        builder.push(src, dst, sign);
    }
    Ok(builder.finish())
}
