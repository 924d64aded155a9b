//! Candidate paths (k shortest by hop count) and path-based link betweenness.

use std::collections::{BTreeSet, VecDeque};
use std::io::Write;

use crate::topology::Topology;

/// A simple path, stored both as node and link sequences.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CandidatePath {
    nodes: Vec<usize>,
    links: Vec<usize>,
}

impl CandidatePath {
    /// Panics if consecutive nodes are not adjacent in `topo`.
    pub fn from_nodes(topo: &Topology, nodes: Vec<usize>) -> Self {
        assert!(nodes.len() >= 2, "a path needs two endpoints");
        let links = nodes
            .windows(2)
            .map(|w| {
                topo.link_between(w[0], w[1])
                    .unwrap_or_else(|| panic!("nodes {} and {} are not adjacent", w[0], w[1]))
            })
            .collect();
        CandidatePath { nodes, links }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn links(&self) -> &[usize] {
        &self.links
    }

    pub fn hop_count(&self) -> usize {
        self.links.len()
    }

    pub fn src(&self) -> usize {
        self.nodes[0]
    }

    pub fn dst(&self) -> usize {
        *self.nodes.last().expect("non-empty path")
    }

    pub fn contains_link(&self, link: usize) -> bool {
        self.links.contains(&link)
    }
}

/// Lexicographically smallest among the minimum-hop paths from `src` to
/// `dst` that avoid the blocked nodes and links.
fn shortest_lex_path(
    topo: &Topology,
    src: usize,
    dst: usize,
    blocked_nodes: &[bool],
    blocked_links: &[bool],
) -> Option<Vec<usize>> {
    let n = topo.num_nodes();
    let mut dist = vec![usize::MAX; n];
    dist[dst] = 0;
    let mut queue = VecDeque::from([dst]);
    while let Some(u) = queue.pop_front() {
        if u == src {
            break;
        }
        for &(v, link) in topo.neighbors(u) {
            if blocked_links[link] || blocked_nodes[v] || dist[v] != usize::MAX {
                continue;
            }
            dist[v] = dist[u] + 1;
            queue.push_back(v);
        }
    }
    if dist[src] == usize::MAX {
        return None;
    }
    let mut path = Vec::with_capacity(dist[src] + 1);
    let mut cur = src;
    path.push(cur);
    while cur != dst {
        // Neighbors are sorted, so the first hop that keeps us on a shortest
        // route is the lexicographically smallest choice.
        cur = topo
            .neighbors(cur)
            .iter()
            .find(|&&(v, link)| !blocked_links[link] && dist[v] == dist[cur] - 1)
            .map(|&(v, _)| v)
            .expect("BFS distances guarantee a descending neighbor");
        path.push(cur);
    }
    Some(path)
}

/// Up to `k` simple paths of minimum hop count, ordered by `(hops, node
/// sequence)`. Empty when `dst` is unreachable.
pub fn k_shortest_paths(topo: &Topology, src: usize, dst: usize, k: usize) -> Vec<CandidatePath> {
    assert_ne!(src, dst, "k_shortest_paths needs distinct endpoints");
    assert!(k >= 1, "k must be positive");
    let n = topo.num_nodes();
    let mut blocked_nodes = vec![false; n];
    let mut blocked_links = vec![false; topo.num_links()];

    let Some(first) = shortest_lex_path(topo, src, dst, &blocked_nodes, &blocked_links) else {
        return Vec::new();
    };
    let mut accepted: Vec<Vec<usize>> = vec![first];
    let mut candidates: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();

    while accepted.len() < k {
        let prev = accepted.last().expect("at least one accepted path").clone();
        for i in 0..prev.len() - 1 {
            let spur = prev[i];
            let root = &prev[..=i];
            blocked_nodes.iter_mut().for_each(|b| *b = false);
            blocked_links.iter_mut().for_each(|b| *b = false);
            for p in &accepted {
                if p.len() > i + 1 && &p[..=i] == root {
                    let link = topo.link_between(p[i], p[i + 1]).expect("path link");
                    blocked_links[link] = true;
                }
            }
            for &node in &root[..i] {
                blocked_nodes[node] = true;
            }
            if let Some(tail) = shortest_lex_path(topo, spur, dst, &blocked_nodes, &blocked_links) {
                let mut total = root[..i].to_vec();
                total.extend(tail);
                candidates.insert((total.len(), total));
            }
        }
        match candidates.pop_first() {
            Some((_, path)) => accepted.push(path),
            None => break,
        }
    }

    accepted
        .into_iter()
        .map(|nodes| CandidatePath::from_nodes(topo, nodes))
        .collect()
}

/// Candidate paths for every ordered node pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTable {
    num_nodes: usize,
    k: usize,
    paths: Vec<Vec<CandidatePath>>,
}

impl PathTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn paths(&self, src: usize, dst: usize) -> &[CandidatePath] {
        &self.paths[src * self.num_nodes + dst]
    }

    /// `(src, dst, paths)` for every ordered pair with `src != dst`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &[CandidatePath])> + '_ {
        let n = self.num_nodes;
        (0..n)
            .flat_map(move |s| (0..n).map(move |d| (s, d)))
            .filter(|(s, d)| s != d)
            .map(move |(s, d)| (s, d, self.paths(s, d)))
    }

    pub fn total_paths(&self) -> usize {
        self.paths.iter().map(Vec::len).sum()
    }

    /// Writes `src,dst,rank,node_sequence` rows with nodes joined by `-`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record(["src", "dst", "rank", "node_sequence"])?;
        for (s, d, paths) in self.iter() {
            for (rank, p) in paths.iter().enumerate() {
                let seq = p
                    .nodes()
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join("-");
                out.write_record([s.to_string(), d.to_string(), rank.to_string(), seq])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

pub fn build_path_table(topo: &Topology, k: usize) -> PathTable {
    let n = topo.num_nodes();
    let paths = (0..n * n)
        .map(|idx| {
            let (s, d) = (idx / n, idx % n);
            if s == d {
                Vec::new()
            } else {
                k_shortest_paths(topo, s, d, k)
            }
        })
        .collect();
    PathTable {
        num_nodes: n,
        k,
        paths,
    }
}

/// Per link, the number of table paths that traverse it.
pub fn link_path_counts(topo: &Topology, table: &PathTable) -> Vec<usize> {
    let mut counts = vec![0usize; topo.num_links()];
    for (_, _, paths) in table.iter() {
        for p in paths {
            for &l in p.links() {
                counts[l] += 1;
            }
        }
    }
    counts
}

/// Fraction of all table paths crossing each link.
pub fn link_betweenness(topo: &Topology, table: &PathTable) -> Vec<f64> {
    assert_eq!(topo.num_nodes(), table.num_nodes(), "table built over another topology");
    let total = table.total_paths();
    let counts = link_path_counts(topo, table);
    if total == 0 {
        return vec![0.0; counts.len()];
    }
    counts.into_iter().map(|c| c as f64 / total as f64).collect()
}
