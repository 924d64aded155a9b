//! Logical network topologies: ROADM nodes joined by undirected lightpath links.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {name}: {msg}")]
    Parse { name: String, msg: String },
    #[error("topology {name} is too small: {nodes} nodes, {links} links (need >= 2 nodes and >= 1 link)")]
    Empty {
        name: String,
        nodes: usize,
        links: usize,
    },
    #[error("cannot remove {requested} of {available} links")]
    TooManyRemovals { requested: usize, available: usize },
    #[error("no connected {removed}-link removal found after {attempts} attempts")]
    RetriesExhausted { removed: usize, attempts: usize },
}

/// On-disk topology formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyFormat {
    GraphMl,
    EdgeList,
}

impl TopologyFormat {
    /// `.graphml`/`.xml` are GraphML, anything else is read as an edge list.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("graphml") || ext.eq_ignore_ascii_case("xml") => {
                TopologyFormat::GraphMl
            }
            _ => TopologyFormat::EdgeList,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Link {
    pub a: usize,
    pub b: usize,
}

impl Link {
    pub fn other(&self, node: usize) -> usize {
        if node == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// Immutable undirected simple graph with dense node and link ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    name: String,
    labels: Vec<String>,
    links: Vec<Link>,
    /// per node: (neighbor, link id), sorted by neighbor
    incident: Vec<Vec<(usize, usize)>>,
    /// per link: ids of links sharing an endpoint, sorted
    link_adjacency: Vec<Vec<usize>>,
    warnings: Vec<String>,
}

impl Topology {
    /// Builds a topology over nodes `0..num_nodes`. Self-loops are dropped
    /// and parallel edges collapse onto the first occurrence, which fixes
    /// the link id.
    pub fn new(
        name: impl Into<String>,
        num_nodes: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let labels = (0..num_nodes).map(|i| i.to_string()).collect();
        Self::with_labels(name, labels, edges)
    }

    pub fn with_labels(
        name: impl Into<String>,
        labels: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Self {
        let num_nodes = labels.len();
        let mut seen = HashMap::new();
        let mut links = Vec::new();
        for (u, v) in edges {
            assert!(u < num_nodes && v < num_nodes, "edge ({u},{v}) out of range");
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if seen.contains_key(&key) {
                continue;
            }
            seen.insert(key, links.len());
            links.push(Link { a: key.0, b: key.1 });
        }

        let mut incident = vec![Vec::new(); num_nodes];
        for (id, link) in links.iter().enumerate() {
            incident[link.a].push((link.b, id));
            incident[link.b].push((link.a, id));
        }
        for list in &mut incident {
            list.sort_unstable();
        }

        let link_adjacency = links
            .iter()
            .enumerate()
            .map(|(id, link)| {
                let set: BTreeSet<usize> = incident[link.a]
                    .iter()
                    .chain(&incident[link.b])
                    .map(|&(_, other)| other)
                    .filter(|&other| other != id)
                    .collect();
                set.into_iter().collect()
            })
            .collect();

        let mut topo = Topology {
            name: name.into(),
            labels,
            links,
            incident,
            link_adjacency,
            warnings: Vec::new(),
        };
        if !topo.is_connected() {
            topo.warnings.push(format!(
                "topology {} is disconnected; some node pairs have no candidate paths",
                topo.name
            ));
        }
        topo
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: usize) -> Link {
        self.links[id]
    }

    /// Original label of each dense node id.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// `(neighbor, link id)` pairs of `node`, ascending by neighbor.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.incident[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.incident[node].len()
    }

    pub fn link_between(&self, u: usize, v: usize) -> Option<usize> {
        self.incident[u]
            .binary_search_by_key(&v, |&(n, _)| n)
            .ok()
            .map(|pos| self.incident[u][pos].1)
    }

    pub fn link_adjacency(&self) -> &[Vec<usize>] {
        &self.link_adjacency
    }

    pub fn is_connected(&self) -> bool {
        self.is_connected_without(&[])
    }

    fn is_connected_without(&self, removed: &[bool]) -> bool {
        let n = self.num_nodes();
        if n == 0 {
            return true;
        }
        let mut visited = vec![false; n];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &(v, link) in &self.incident[u] {
                if removed.get(link).copied().unwrap_or(false) || visited[v] {
                    continue;
                }
                visited[v] = true;
                count += 1;
                queue.push_back(v);
            }
        }
        count == n
    }

    /// Copy of this topology without the flagged links; surviving links keep
    /// their relative order under new dense ids.
    pub fn without_links(&self, removed: &[bool]) -> Topology {
        let edges = self
            .links
            .iter()
            .enumerate()
            .filter(|(id, _)| !removed[*id])
            .map(|(_, l)| (l.a, l.b));
        Topology::with_labels(self.name.clone(), self.labels.clone(), edges)
    }

    /// Relabels nodes by `perm` (old id -> new id) and reorders links by
    /// `link_order` (new link id -> old link id).
    pub fn relabeled(&self, perm: &[usize], link_order: &[usize]) -> Topology {
        assert_eq!(perm.len(), self.num_nodes());
        assert_eq!(link_order.len(), self.num_links());
        let mut labels = vec![String::new(); self.num_nodes()];
        for (old, &new) in perm.iter().enumerate() {
            labels[new] = self.labels[old].clone();
        }
        let edges = link_order.iter().map(|&old| {
            let l = self.links[old];
            (perm[l.a], perm[l.b])
        });
        Topology::with_labels(self.name.clone(), labels, edges)
    }

    /// Returns a renamed copy.
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({} nodes, {} links)",
            self.name,
            self.num_nodes(),
            self.num_links()
        )
    }
}

/// Node-degree summary used by the dataset filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeStats {
    pub mean_degree: f64,
    /// population variance
    pub degree_variance: f64,
}

pub fn degree_stats(topo: &Topology) -> DegreeStats {
    let n = topo.num_nodes() as f64;
    let mean = 2.0 * topo.num_links() as f64 / n;
    let var = (0..topo.num_nodes())
        .map(|u| {
            let d = topo.degree(u) as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    DegreeStats {
        mean_degree: mean,
        degree_variance: var,
    }
}

/// Thresholds of the real-world dataset filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterCriteria {
    /// strictly more nodes than this
    pub min_nodes_exclusive: usize,
    pub max_nodes: usize,
    pub min_mean_degree: f64,
    pub max_mean_degree: f64,
    /// mean degree / degree variance must exceed this; zero variance rejects
    pub min_degree_ratio: f64,
}

impl Default for FilterCriteria {
    fn default() -> Self {
        FilterCriteria {
            min_nodes_exclusive: 5,
            max_nodes: 50,
            min_mean_degree: 2.0,
            max_mean_degree: 4.0,
            min_degree_ratio: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    TooFewNodes(usize),
    TooManyNodes(usize),
    MeanDegreeOutOfRange(f64),
    /// all nodes share one degree (rings and other regular graphs)
    UniformDegree,
    DegreeRatioTooLow(f64),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::TooFewNodes(n) => write!(f, "too few nodes ({n})"),
            RejectReason::TooManyNodes(n) => write!(f, "too many nodes ({n})"),
            RejectReason::MeanDegreeOutOfRange(m) => write!(f, "mean degree {m:.3} out of range"),
            RejectReason::UniformDegree => write!(f, "zero degree variance"),
            RejectReason::DegreeRatioTooLow(r) => write!(f, "degree ratio {r:.3} too low"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterDecision {
    pub name: String,
    pub nodes: usize,
    pub links: usize,
    pub stats: DegreeStats,
    pub reasons: Vec<RejectReason>,
}

impl FilterDecision {
    pub fn accepted(&self) -> bool {
        self.reasons.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct FilterReport {
    pub kept: Vec<Topology>,
    pub decisions: Vec<FilterDecision>,
}

pub fn evaluate_filter(topo: &Topology, criteria: &FilterCriteria) -> FilterDecision {
    let stats = degree_stats(topo);
    let n = topo.num_nodes();
    let mut reasons = Vec::new();
    if n <= criteria.min_nodes_exclusive {
        reasons.push(RejectReason::TooFewNodes(n));
    }
    if n > criteria.max_nodes {
        reasons.push(RejectReason::TooManyNodes(n));
    }
    if stats.mean_degree < criteria.min_mean_degree || stats.mean_degree > criteria.max_mean_degree {
        reasons.push(RejectReason::MeanDegreeOutOfRange(stats.mean_degree));
    }
    // Degree variance is a multiple of 1/n^2; anything below that is rounding.
    if stats.degree_variance < 0.5 / (n * n) as f64 {
        reasons.push(RejectReason::UniformDegree);
    } else {
        let ratio = stats.mean_degree / stats.degree_variance;
        if ratio <= criteria.min_degree_ratio {
            reasons.push(RejectReason::DegreeRatioTooLow(ratio));
        }
    }
    FilterDecision {
        name: topo.name().to_string(),
        nodes: n,
        links: topo.num_links(),
        stats,
        reasons,
    }
}

/// Keeps the topologies that pass every predicate of `criteria`, in input order.
pub fn filter_topologies(topos: Vec<Topology>, criteria: &FilterCriteria) -> FilterReport {
    let mut kept = Vec::new();
    let mut decisions = Vec::with_capacity(topos.len());
    for topo in topos {
        let decision = evaluate_filter(&topo, criteria);
        if decision.accepted() {
            kept.push(topo);
        }
        decisions.push(decision);
    }
    FilterReport { kept, decisions }
}

pub const DEFAULT_REMOVAL_RETRIES: usize = 1000;

/// Removes `n` uniformly chosen links, resampling until the remainder is
/// connected.
pub fn remove_random_links<R: Rng + ?Sized>(
    topo: &Topology,
    n: usize,
    rng: &mut R,
    max_attempts: usize,
) -> Result<Topology, TopologyError> {
    let l = topo.num_links();
    if n >= l {
        return Err(TopologyError::TooManyRemovals {
            requested: n,
            available: l,
        });
    }
    if n == 0 {
        return Ok(topo.clone());
    }
    let mut removed = vec![false; l];
    for _ in 0..max_attempts {
        removed.iter_mut().for_each(|r| *r = false);
        for id in sample(rng, l, n) {
            removed[id] = true;
        }
        if topo.is_connected_without(&removed) {
            return Ok(topo.without_links(&removed));
        }
    }
    Err(TopologyError::RetriesExhausted {
        removed: n,
        attempts: max_attempts,
    })
}

pub fn load_topology(path: &Path, format: TopologyFormat) -> Result<Topology, TopologyError> {
    let text = fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("topology")
        .to_string();
    match format {
        TopologyFormat::GraphMl => parse_graphml(&name, &text),
        TopologyFormat::EdgeList => parse_edge_list(&name, &text),
    }
}

/// Reads a whitespace separated edge list. `#` starts a comment. When every
/// label is a non-negative integer nodes are numbered in numeric order,
/// otherwise in order of first appearance.
pub fn parse_edge_list(name: &str, text: &str) -> Result<Topology, TopologyError> {
    let mut raw_edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next()) {
            (Some(a), Some(b)) => raw_edges.push((a.to_string(), b.to_string())),
            _ => {
                return Err(TopologyError::Parse {
                    name: name.to_string(),
                    msg: format!("line {}: expected two node labels", lineno + 1),
                })
            }
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut seen = HashMap::new();
    for (a, b) in &raw_edges {
        for label in [a, b] {
            if !seen.contains_key(label) {
                seen.insert(label.clone(), order.len());
                order.push(label.clone());
            }
        }
    }
    if order.iter().all(|l| l.parse::<u64>().is_ok()) {
        order.sort_by_key(|l| l.parse::<u64>().unwrap_or(u64::MAX));
        seen = order.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect();
    }
    let edges: Vec<(usize, usize)> = raw_edges
        .iter()
        .map(|(a, b)| (seen[a], seen[b]))
        .collect();
    finish(name, order, edges)
}

/// Reads `<node>` and `<edge>` elements of a GraphML document; attributes
/// other than the endpoints are ignored.
pub fn parse_graphml(name: &str, text: &str) -> Result<Topology, TopologyError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| TopologyError::Parse {
        name: name.to_string(),
        msg: e.to_string(),
    })?;
    let mut labels = Vec::new();
    let mut ids = HashMap::new();
    for node in doc.descendants().filter(|n| n.has_tag_name("node")) {
        let id = node.attribute("id").ok_or_else(|| TopologyError::Parse {
            name: name.to_string(),
            msg: "node element without id".into(),
        })?;
        if !ids.contains_key(id) {
            ids.insert(id.to_string(), labels.len());
            labels.push(id.to_string());
        }
    }
    let mut edges = Vec::new();
    for edge in doc.descendants().filter(|n| n.has_tag_name("edge")) {
        let mut endpoint = |attr: &str| -> Result<usize, TopologyError> {
            let label = edge.attribute(attr).ok_or_else(|| TopologyError::Parse {
                name: name.to_string(),
                msg: format!("edge element without {attr}"),
            })?;
            // Edges may reference undeclared nodes.
            Ok(*ids.entry(label.to_string()).or_insert_with(|| {
                labels.push(label.to_string());
                labels.len() - 1
            }))
        };
        let s = endpoint("source")?;
        let t = endpoint("target")?;
        edges.push((s, t));
    }
    finish(name, labels, edges)
}

fn finish(
    name: &str,
    labels: Vec<String>,
    edges: Vec<(usize, usize)>,
) -> Result<Topology, TopologyError> {
    let topo = Topology::with_labels(name, labels, edges);
    if topo.num_nodes() < 2 || topo.num_links() < 1 {
        return Err(TopologyError::Empty {
            name: name.to_string(),
            nodes: topo.num_nodes(),
            links: topo.num_links(),
        });
    }
    Ok(topo)
}

/// 14-node, 21-link NSFNet.
pub fn nsfnet() -> Topology {
    parse_edge_list("nsfnet", include_str!("../data/nsfnet.txt")).expect("bundled topology")
}

/// 24-node, 37-link GEANT2.
pub fn geant2() -> Topology {
    parse_edge_list("geant2", include_str!("../data/geant2.txt")).expect("bundled topology")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Topology {
        Topology::new("triangle", 3, [(0, 1), (1, 2), (2, 0)])
    }

    fn ring(n: usize) -> Topology {
        Topology::new(format!("ring{n}"), n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    fn star(n: usize) -> Topology {
        Topology::new(format!("star{n}"), n, (1..n).map(|i| (0, i)))
    }

    #[test]
    fn triangle_edge_list() {
        let topo = parse_edge_list("t", "0 1\n1 2\n2 0").unwrap();
        assert_eq!(topo.num_nodes(), 3);
        assert_eq!(topo.num_links(), 3);
        for (id, adj) in topo.link_adjacency().iter().enumerate() {
            let mut expected: Vec<usize> = (0..3).filter(|&o| o != id).collect();
            expected.sort();
            assert_eq!(adj, &expected);
        }
    }

    #[test]
    fn edge_list_comments_and_labels() {
        let text = "# header\nparis berlin  # first\n\nberlin rome\nrome rome\nrome berlin\n";
        let topo = parse_edge_list("eu", text).unwrap();
        assert_eq!(topo.labels(), &["paris", "berlin", "rome"]);
        assert_eq!(topo.num_links(), 2);
    }

    #[test]
    fn edge_list_rejects_garbage() {
        assert!(matches!(
            parse_edge_list("bad", "0 1\n7\n"),
            Err(TopologyError::Parse { .. })
        ));
        assert!(matches!(
            parse_edge_list("empty", "# nothing\n"),
            Err(TopologyError::Empty { .. })
        ));
        assert!(matches!(
            parse_edge_list("loop", "3 3\n"),
            Err(TopologyError::Empty { .. })
        ));
    }

    #[test]
    fn graphml_dedups_parallel_edges() {
        let xml = r#"<?xml version="1.0" encoding="utf-8"?>
<graphml xmlns="http://graphml.graphdrawing.org/xmlns">
  <key attr.name="label" attr.type="string" for="node" id="d0"/>
  <graph edgedefault="undirected">
    <node id="a"><data key="d0">A</data></node>
    <node id="b"/>
    <node id="c"/>
    <edge source="a" target="b"/>
    <edge source="b" target="a"><data key="d0">dup</data></edge>
    <edge source="a" target="b"/>
    <edge source="b" target="c"/>
    <edge source="c" target="c"/>
  </graph>
</graphml>"#;
        let topo = parse_graphml("g", xml).unwrap();
        assert_eq!(topo.num_nodes(), 3);
        assert_eq!(topo.num_links(), 2);
        assert_eq!(topo.link_between(0, 1), Some(0));
        assert!(topo.warnings().is_empty());
    }

    #[test]
    fn disconnected_graph_is_flagged() {
        let topo = parse_edge_list("split", "0 1\n2 3\n").unwrap();
        assert!(!topo.is_connected());
        assert_eq!(topo.warnings().len(), 1);
    }

    #[test]
    fn nsfnet_shape() {
        let topo = nsfnet();
        assert_eq!(topo.num_nodes(), 14);
        assert_eq!(topo.num_links(), 21);
        assert_eq!(degree_stats(&topo).mean_degree, 3.0);
        assert!(topo.is_connected());
        let g = geant2();
        assert_eq!((g.num_nodes(), g.num_links()), (24, 37));
        assert!(g.is_connected());
    }

    #[test]
    fn degree_stats_examples() {
        let s = degree_stats(&ring(6));
        assert_eq!((s.mean_degree, s.degree_variance), (2.0, 0.0));
        let s = degree_stats(&star(5));
        assert!((s.mean_degree - 1.6).abs() < 1e-12);
        assert!((s.degree_variance - 1.44).abs() < 1e-12);
        let s = degree_stats(&triangle());
        assert_eq!((s.mean_degree, s.degree_variance), (2.0, 0.0));
    }

    #[test]
    fn filter_examples() {
        let criteria = FilterCriteria::default();
        let ring_decision = evaluate_filter(&ring(6), &criteria);
        assert_eq!(ring_decision.reasons, vec![RejectReason::UniformDegree]);

        let star_decision = evaluate_filter(&star(5), &criteria);
        assert!(star_decision.reasons.contains(&RejectReason::TooFewNodes(5)));
        assert!(matches!(
            star_decision.reasons[1],
            RejectReason::MeanDegreeOutOfRange(_)
        ));

        // degrees: ten 3s, two 4s, two 2s -> mean 3, variance 4/14
        let nsf = evaluate_filter(&nsfnet(), &criteria);
        assert!(nsf.accepted(), "{:?}", nsf.reasons);
        assert!((nsf.stats.degree_variance - 4.0 / 14.0).abs() < 1e-12);

        let big = ring(51);
        assert!(evaluate_filter(&big, &criteria)
            .reasons
            .contains(&RejectReason::TooManyNodes(51)));
    }

    #[test]
    fn filter_is_idempotent() {
        let criteria = FilterCriteria::default();
        let all = vec![ring(8), nsfnet(), star(9), geant2(), triangle()];
        let once = filter_topologies(all, &criteria);
        let names: Vec<_> = once.kept.iter().map(|t| t.name().to_string()).collect();
        let twice = filter_topologies(once.kept.clone(), &criteria);
        assert_eq!(twice.kept, once.kept);
        assert_eq!(names, vec!["nsfnet", "geant2"]);
        assert_eq!(once.decisions.len(), 5);
    }

    #[test]
    fn remove_zero_links_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let topo = nsfnet();
        assert_eq!(remove_random_links(&topo, 0, &mut rng, 10).unwrap(), topo);
    }

    #[test]
    fn triangle_removals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let path = remove_random_links(&triangle(), 1, &mut rng, DEFAULT_REMOVAL_RETRIES).unwrap();
        assert_eq!(path.num_links(), 2);
        assert!(path.is_connected());

        let err = remove_random_links(&triangle(), 2, &mut rng, DEFAULT_REMOVAL_RETRIES);
        assert!(matches!(
            err,
            Err(TopologyError::RetriesExhausted {
                removed: 2,
                attempts: 1000
            })
        ));
        assert!(matches!(
            remove_random_links(&triangle(), 3, &mut rng, 5),
            Err(TopologyError::TooManyRemovals { .. })
        ));
    }

    #[test]
    fn removal_is_seeded() {
        let topo = geant2();
        let a = remove_random_links(&topo, 6, &mut ChaCha8Rng::seed_from_u64(42), 1000).unwrap();
        let b = remove_random_links(&topo, 6, &mut ChaCha8Rng::seed_from_u64(42), 1000).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_links(), 31);
        assert!(a.is_connected());
    }

    #[test]
    fn degree_sum_and_adjacency_symmetry() {
        for topo in [nsfnet(), geant2(), star(7), ring(9)] {
            let degree_sum: usize = (0..topo.num_nodes()).map(|u| topo.degree(u)).sum();
            assert_eq!(degree_sum, 2 * topo.num_links());
            for (l1, adj) in topo.link_adjacency().iter().enumerate() {
                for &l2 in adj {
                    assert!(topo.link_adjacency()[l2].contains(&l1));
                }
            }
        }
    }
}
