//! Triangle enumeration and the balance/status census.
//!
//! A triad is an unordered node triple whose three pairs are each connected,
//! together with one concrete directed edge chosen per pair. A pair linked in
//! both directions therefore spawns one triad per choice, so a triple can
//! contribute up to eight triads.
//!
//! Balance holds when the number of negative signs among the three chosen
//! edges is even, directions disregarded. Status holds when ranking nodes by
//! "a positive edge points up, a negative edge points down" admits no cycle.

use crate::graph::{Edge, NodeId, Sign, SignedDigraph};

/// One triangle instance: canonical nodes and the chosen directed edge per
/// unordered pair, in pair order (n0,n1), (n0,n2), (n1,n2).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Triad {
    /// Strictly increasing node ids.
    pub nodes: [NodeId; 3],
    pub edges: [Edge; 3],
}

impl Triad {
    pub fn signs(&self) -> [Sign; 3] {
        [self.edges[0].sign, self.edges[1].sign, self.edges[2].sign]
    }
}

/// Which triangles participate in the training loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrianglePolicy {
    /// Triads satisfying both balance and status.
    Both,
    /// Triads satisfying at least one of the two.
    Either,
    /// Every triad.
    All,
}

impl std::fmt::Display for TrianglePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrianglePolicy::Both => "both",
            TrianglePolicy::Either => "either",
            TrianglePolicy::All => "all",
        })
    }
}

impl std::str::FromStr for TrianglePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "both" => Ok(TrianglePolicy::Both),
            "either" => Ok(TrianglePolicy::Either),
            "all" => Ok(TrianglePolicy::All),
            other => Err(format!("unknown triangle policy {other:?}")),
        }
    }
}

/// Share of triads in each cell of the balance x status partition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CensusReport {
    pub both: f64,
    pub only_balance: f64,
    pub only_status: f64,
    pub neither: f64,
    pub total_triads: u64,
}

/// True when the triad's signs multiply to +1 (even negative count).
pub fn is_balanced(t: &Triad) -> bool {
    t.signs().iter().filter(|s| **s == Sign::Negative).count() % 2 == 0
}

/// True when the three "points to higher status" constraints are acyclic.
///
/// Each edge u -> v orders the pair: v above u if positive, below if
/// negative. The three constraints form a tournament on the triple, which is
/// acyclic exactly when some node dominates the other two.
pub fn satisfies_status(t: &Triad) -> bool {
    let mut wins = [0u8; 3];
    let local = |id: NodeId, nodes: &[NodeId; 3]| nodes.iter().position(|&n| n == id).unwrap();
    for e in &t.edges {
        let s = local(e.src, &t.nodes);
        let d = local(e.dst, &t.nodes);
        match e.sign {
            Sign::Positive => wins[d] += 1,
            Sign::Negative => wins[s] += 1,
        }
    }
    wins.contains(&2)
}

/// Calls `f` for every triad of the graph.
///
/// Iterates canonical triples u < v < w that are pairwise connected and
/// expands the cartesian product of the directed edges available per pair.
pub fn for_each_triad(g: &SignedDigraph, mut f: impl FnMut(&Triad)) {
    let n = g.node_count();
    // Undirected adjacency, restricted to higher-numbered partners.
    let mut above: Vec<Vec<NodeId>> = vec![Vec::new(); n];
    for e in g.edges() {
        let (lo, hi) = if e.src < e.dst {
            (e.src, e.dst)
        } else {
            (e.dst, e.src)
        };
        above[lo].push(hi);
    }
    for list in above.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }

    let pair_edges = |a: NodeId, b: NodeId| -> Vec<Edge> {
        let mut out = Vec::with_capacity(2);
        if let Some(sign) = g.edge_sign(a, b) {
            out.push(Edge::new(a, b, sign));
        }
        if let Some(sign) = g.edge_sign(b, a) {
            out.push(Edge::new(b, a, sign));
        }
        out
    };

    for u in 0..n {
        let partners = &above[u];
        for (i, &v) in partners.iter().enumerate() {
            // w must be adjacent to both u and v; intersect the sorted lists.
            let uv = pair_edges(u, v);
            let mut ui = i + 1;
            let vs = &above[v];
            let mut vi = 0;
            while ui < partners.len() && vi < vs.len() {
                let (a, b) = (partners[ui], vs[vi]);
                if a < b {
                    ui += 1;
                } else if b < a {
                    vi += 1;
                } else {
                    let w = a;
                    let uw = pair_edges(u, w);
                    let vw = pair_edges(v, w);
                    for &e0 in &uv {
                        for &e1 in &uw {
                            for &e2 in &vw {
                                f(&Triad {
                                    nodes: [u, v, w],
                                    edges: [e0, e1, e2],
                                });
                            }
                        }
                    }
                    ui += 1;
                    vi += 1;
                }
            }
        }
    }
}

/// Collects every triad of the graph.
pub fn enumerate_triads(g: &SignedDigraph) -> Vec<Triad> {
    let mut out = Vec::new();
    for_each_triad(g, |t| out.push(*t));
    out
}

/// Classifies all triads into the balance x status partition.
pub fn census(g: &SignedDigraph) -> CensusReport {
    let mut counts = [0u64; 4];
    for_each_triad(g, |t| {
        let cell = match (is_balanced(t), satisfies_status(t)) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        counts[cell] += 1;
    });
    let total: u64 = counts.iter().sum();
    let ratio = |c: u64| {
        if total == 0 {
            0.0
        } else {
            c as f64 / total as f64
        }
    };
    CensusReport {
        both: ratio(counts[0]),
        only_balance: ratio(counts[1]),
        only_status: ratio(counts[2]),
        neither: ratio(counts[3]),
        total_triads: total,
    }
}

/// Triads admitted to the triangle loss under a policy.
pub fn training_triangle_set(g: &SignedDigraph, policy: TrianglePolicy) -> Vec<Triad> {
    let mut out = Vec::new();
    for_each_triad(g, |t| {
        let keep = match policy {
            TrianglePolicy::Both => is_balanced(t) && satisfies_status(t),
            TrianglePolicy::Either => is_balanced(t) || satisfies_status(t),
            TrianglePolicy::All => true,
        };
        if keep {
            out.push(*t);
        }
    });
    out
}
