//! Undirected simple graphs over a fixed node-id universe, partial-observation
//! operators, and centrality analytics.
//!
//! Node ids are dense `usize` in `[0, universe)`. A graph may cover only a
//! subset of the universe (its *active* nodes); this is how a partially
//! discovered subgraph shares ids with the hidden graph it was observed from.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Bidirectional map between external string labels and dense node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    by_id: Vec<String>,
    by_label: HashMap<String, usize>,
}

impl Labels {
    fn new() -> Self {
        Labels {
            by_id: Vec::new(),
            by_label: HashMap::new(),
        }
    }

    fn intern(&mut self, label: &str) -> usize {
        if let Some(&id) = self.by_label.get(label) {
            return id;
        }
        let id = self.by_id.len();
        self.by_id.push(label.to_string());
        self.by_label.insert(label.to_string(), id);
        id
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.by_id.get(id).map(String::as_str)
    }

    pub fn id(&self, label: &str) -> Option<usize> {
        self.by_label.get(label).copied()
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }
}

/// Immutable undirected simple graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    universe: usize,
    /// Sorted ids of nodes present in this graph.
    active: Vec<usize>,
    /// Indexed by id over the whole universe; sorted neighbor lists.
    adj: Vec<Vec<usize>>,
    edge_count: usize,
    labels: Option<Labels>,
}

impl Graph {
    fn build(
        universe: usize,
        active: Vec<usize>,
        edges: &[(usize, usize)],
        labels: Option<Labels>,
    ) -> Graph {
        debug_assert!(active.windows(2).all(|w| w[0] < w[1]));
        let mut adj = vec![Vec::new(); universe];
        let mut seen = BTreeSet::new();
        for &(u, v) in edges {
            assert!(u < universe && v < universe, "edge endpoint out of universe");
            if u == v {
                continue;
            }
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Graph {
            universe,
            active,
            adj,
            edge_count: seen.len(),
            labels,
        }
    }

    /// Graph on the full universe `[0, n)` with the given edges. Self-loops
    /// and duplicate edges are dropped. Intended for generators and tests;
    /// panics on out-of-range endpoints.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::build(n, (0..n).collect(), edges, None)
    }

    /// Parses a whitespace-separated edge list.
    ///
    /// One `u v` pair per line; `#` lines and blank lines are skipped; labels
    /// are interned in order of first appearance. A self-loop line `u u`
    /// records the node but no edge. Duplicate edges collapse.
    pub fn parse_edge_list(text: &str) -> Result<Graph> {
        let mut labels = Labels::new();
        let mut edges = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != 2 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected two node labels, got {}", tokens.len()),
                });
            }
            let u = labels.intern(tokens[0]);
            let v = labels.intern(tokens[1]);
            edges.push((u, v));
        }
        let n = labels.len();
        Ok(Graph::build(n, (0..n).collect(), &edges, Some(labels)))
    }

    /// Serializes to the edge-list format accepted by [`Graph::parse_edge_list`].
    /// Isolated active nodes are written as self-loop lines so they survive a
    /// round trip.
    pub fn to_edge_list_string(&self) -> String {
        let mut out = String::new();
        for (u, v) in self.edges() {
            let _ = writeln!(out, "{} {}", self.label_of(u), self.label_of(v));
        }
        for &u in &self.active {
            if self.adj[u].is_empty() {
                let label = self.label_of(u);
                let _ = writeln!(out, "{label} {label}");
            }
        }
        out
    }

    /// Size of the id universe this graph's ids are drawn from.
    pub fn universe(&self) -> usize {
        self.universe
    }

    /// Sorted ids of the nodes present in this graph.
    pub fn nodes(&self) -> &[usize] {
        &self.active
    }

    pub fn node_count(&self) -> usize {
        self.active.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn contains(&self, u: usize) -> bool {
        self.active.binary_search(&u).is_ok()
    }

    /// Sorted neighbors of `u`. Empty for nodes outside the graph.
    pub fn neighbors(&self, u: usize) -> &[usize] {
        self.adj.get(u).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors(u).len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    /// Edges as `(u, v)` pairs with `u < v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for &u in &self.active {
            for &v in &self.adj[u] {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    /// External label for `u`; falls back to the decimal id when the graph
    /// carries no label table.
    pub fn label_of(&self, u: usize) -> String {
        match &self.labels {
            Some(l) => l
                .label(u)
                .map(str::to_string)
                .unwrap_or_else(|| u.to_string()),
            None => u.to_string(),
        }
    }

    /// Id for an external label, accepting decimal ids for unlabeled graphs.
    pub fn id_of(&self, label: &str) -> Option<usize> {
        match &self.labels {
            Some(l) => l.id(label),
            None => label.parse::<usize>().ok().filter(|&u| u < self.universe),
        }
    }

    /// The subgraph visible at the start of an episode: the seed nodes, their
    /// neighbors, and the seed-incident edges.
    pub fn initial_observation(&self, seeds: &[usize]) -> Result<Graph> {
        let mut active = BTreeSet::new();
        let mut edges = Vec::new();
        for &s in seeds {
            if !self.contains(s) {
                return Err(Error::domain(format!("seed {s} is not in the graph")));
            }
            active.insert(s);
            for &w in self.neighbors(s) {
                active.insert(w);
                edges.push((s, w));
            }
        }
        Ok(Graph::build(
            self.universe,
            active.into_iter().collect(),
            &edges,
            self.labels.clone(),
        ))
    }

    /// Reveals `u`'s neighborhood in `self` (the hidden graph) into a copy of
    /// `observed`: adds each neighbor of `u` and the edge connecting it to `u`.
    pub fn reveal_neighbors(&self, observed: &Graph, u: usize) -> Result<Graph> {
        if self.universe != observed.universe {
            return Err(Error::domain(
                "observed graph does not share the hidden graph's id universe".to_string(),
            ));
        }
        if !observed.contains(u) {
            return Err(Error::domain(format!(
                "queried node {u} is not in the observed graph"
            )));
        }
        if !self.contains(u) {
            return Err(Error::domain(format!(
                "queried node {u} is not in the hidden graph"
            )));
        }
        let mut g = observed.clone();
        for &w in self.neighbors(u) {
            if let Err(pos) = g.active.binary_search(&w) {
                g.active.insert(pos, w);
            }
            if let Err(pos) = g.adj[u].binary_search(&w) {
                g.adj[u].insert(pos, w);
                let upos = g.adj[w].binary_search(&u).unwrap_err();
                g.adj[w].insert(upos, u);
                g.edge_count += 1;
            }
        }
        Ok(g)
    }

    /// Unnormalized betweenness centrality (Brandes), each unordered pair
    /// counted once. Indexed by node id over the universe; nodes outside the
    /// graph get 0.
    pub fn betweenness_centrality(&self) -> Vec<f64> {
        let n = self.universe;
        let mut bc = vec![0.0; n];
        let mut dist = vec![-1i64; n];
        let mut sigma = vec![0.0f64; n];
        let mut delta = vec![0.0f64; n];
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &s in &self.active {
            let mut stack = Vec::new();
            let mut queue = std::collections::VecDeque::new();
            for &v in &self.active {
                dist[v] = -1;
                sigma[v] = 0.0;
                delta[v] = 0.0;
                preds[v].clear();
            }
            dist[s] = 0;
            sigma[s] = 1.0;
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                stack.push(v);
                for &w in &self.adj[v] {
                    if dist[w] < 0 {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                    if dist[w] == dist[v] + 1 {
                        sigma[w] += sigma[v];
                        preds[w].push(v);
                    }
                }
            }
            while let Some(w) = stack.pop() {
                for &v in &preds[w] {
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
                }
                if w != s {
                    bc[w] += delta[w];
                }
            }
        }
        for v in bc.iter_mut() {
            *v /= 2.0;
        }
        bc
    }

    /// Degree centrality `deg(v) / (n - 1)` over the graph's own node count.
    /// Indexed by node id over the universe; nodes outside the graph get 0.
    pub fn degree_centrality(&self) -> Result<Vec<f64>> {
        let n = self.node_count();
        if n < 2 {
            return Err(Error::Metric(format!(
                "degree centrality needs at least 2 nodes, graph has {n}"
            )));
        }
        let denom = (n - 1) as f64;
        let mut out = vec![0.0; self.universe];
        for &u in &self.active {
            out[u] = self.adj[u].len() as f64 / denom;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn path(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        Graph::from_edges(n, &edges)
    }

    #[test]
    fn test_parse_basic_and_self_loop_retains_node() {
        let g = Graph::parse_edge_list("a b\nb c\n# comment\n\nd d\n").unwrap();
        assert_eq!(g.node_count(), 4);
        assert_eq!(g.edge_count(), 2);
        let labels = g.labels().unwrap();
        assert_eq!(labels.id("a"), Some(0));
        assert_eq!(labels.id("b"), Some(1));
        assert_eq!(labels.id("c"), Some(2));
        assert_eq!(labels.id("d"), Some(3));
        assert!(g.contains(3));
        assert_eq!(g.degree(3), 0);
    }

    #[test]
    fn test_parse_duplicate_edges_collapse() {
        let g = Graph::parse_edge_list("a b\nb a\na b\n").unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn test_parse_reports_one_based_line() {
        let err = Graph::parse_edge_list("a b\n\nx\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other}"),
        }
        let err = Graph::parse_edge_list("a b c\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn test_initial_observation_path() {
        // a-b-c-d-e with seed c: we see b, c, d and the two seed edges.
        let g = path(5);
        let obs = g.initial_observation(&[2]).unwrap();
        assert_eq!(obs.nodes(), &[1, 2, 3]);
        assert_eq!(obs.edges(), vec![(1, 2), (2, 3)]);
        assert_eq!(obs.universe(), g.universe());
    }

    #[test]
    fn test_initial_observation_excludes_neighbor_neighbor_edges() {
        let g = Graph::from_edges(3, &[(0, 1), (0, 2), (1, 2)]);
        let obs = g.initial_observation(&[0]).unwrap();
        assert_eq!(obs.nodes(), &[0, 1, 2]);
        assert_eq!(obs.edges(), vec![(0, 1), (0, 2)]);
        // Both endpoints seeded: their connecting edge is visible.
        let obs2 = g.initial_observation(&[0, 1]).unwrap();
        assert!(obs2.has_edge(0, 1));
    }

    #[test]
    fn test_initial_observation_rejects_foreign_seed() {
        let g = path(3);
        assert!(matches!(
            g.initial_observation(&[9]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn test_reveal_adds_missing_edges_and_is_idempotent() {
        let g = Graph::from_edges(3, &[(0, 1), (0, 2), (1, 2)]);
        let obs = g.initial_observation(&[0]).unwrap();
        assert!(!obs.has_edge(1, 2));
        let after = g.reveal_neighbors(&obs, 1).unwrap();
        assert!(after.has_edge(1, 2));
        assert_eq!(after.nodes(), &[0, 1, 2]);
        let again = g.reveal_neighbors(&after, 1).unwrap();
        assert_eq!(again, after);
    }

    #[test]
    fn test_reveal_rejects_unobserved_node() {
        let g = path(5);
        let obs = g.initial_observation(&[0]).unwrap();
        assert!(!obs.contains(3));
        assert!(matches!(
            g.reveal_neighbors(&obs, 3),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn test_betweenness_paths_and_star() {
        let bc3 = path(3).betweenness_centrality();
        assert_eq!(bc3, vec![0.0, 1.0, 0.0]);
        let bc4 = path(4).betweenness_centrality();
        assert_eq!(bc4, vec![0.0, 2.0, 2.0, 0.0]);
        // Star with 4 leaves: center sits on all C(4,2) leaf pairs.
        let star = Graph::from_edges(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]);
        let bc = star.betweenness_centrality();
        assert_eq!(bc[0], 6.0);
        assert_eq!(&bc[1..], &[0.0; 4]);
    }

    #[test]
    fn test_betweenness_splits_over_shortest_paths() {
        // 4-cycle: every node lies on half of one opposite pair's two paths.
        let cyc = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let bc = cyc.betweenness_centrality();
        for v in 0..4 {
            assert!((bc[v] - 0.5).abs() < 1e-12, "node {v}: {}", bc[v]);
        }
    }

    /// Oracle: betweenness from all-pairs BFS counts, using
    /// sigma_st(v) = sigma_sv * sigma_vt when d(s,v) + d(v,t) = d(s,t).
    fn betweenness_oracle(g: &Graph) -> Vec<f64> {
        let n = g.universe();
        let inf = i64::MAX / 4;
        let mut dist = vec![vec![inf; n]; n];
        let mut sigma = vec![vec![0.0f64; n]; n];
        for &s in g.nodes() {
            let mut queue = std::collections::VecDeque::new();
            dist[s][s] = 0;
            sigma[s][s] = 1.0;
            queue.push_back(s);
            while let Some(v) = queue.pop_front() {
                for &w in g.neighbors(v) {
                    if dist[s][w] == inf {
                        dist[s][w] = dist[s][v] + 1;
                        queue.push_back(w);
                    }
                    if dist[s][w] == dist[s][v] + 1 {
                        sigma[s][w] += sigma[s][v];
                    }
                }
            }
        }
        let mut bc = vec![0.0; n];
        let nodes = g.nodes();
        for (i, &s) in nodes.iter().enumerate() {
            for &t in &nodes[i + 1..] {
                if dist[s][t] == inf {
                    continue;
                }
                for &v in nodes {
                    if v == s || v == t {
                        continue;
                    }
                    if dist[s][v] + dist[v][t] == dist[s][t] {
                        bc[v] += sigma[s][v] * sigma[v][t] / sigma[s][t];
                    }
                }
            }
        }
        bc
    }

    proptest! {
        #[test]
        fn prop_brandes_matches_oracle(
            n in 2usize..8,
            edge_bits in proptest::collection::vec(any::<bool>(), 28),
        ) {
            let mut edges = Vec::new();
            let mut k = 0;
            for u in 0..n {
                for v in (u + 1)..n {
                    if edge_bits[k % edge_bits.len()] {
                        edges.push((u, v));
                    }
                    k += 1;
                }
            }
            let g = Graph::from_edges(n, &edges);
            let fast = g.betweenness_centrality();
            let slow = betweenness_oracle(&g);
            for v in 0..n {
                prop_assert!((fast[v] - slow[v]).abs() < 1e-9);
            }
        }

        #[test]
        fn prop_edge_list_round_trip(
            n in 1usize..10,
            edge_bits in proptest::collection::vec(any::<bool>(), 45),
        ) {
            let mut edges = Vec::new();
            let mut k = 0;
            for u in 0..n {
                for v in (u + 1)..n {
                    if edge_bits[k % edge_bits.len()] {
                        edges.push((u, v));
                    }
                    k += 1;
                }
            }
            let g = Graph::from_edges(n, &edges);
            let parsed = Graph::parse_edge_list(&g.to_edge_list_string()).unwrap();
            prop_assert_eq!(parsed.node_count(), g.node_count());
            prop_assert_eq!(parsed.edge_count(), g.edge_count());
            // Compare label-level edge sets: ids may be renumbered.
            let edge_set = |g: &Graph| -> std::collections::BTreeSet<(String, String)> {
                g.edges()
                    .into_iter()
                    .map(|(u, v)| {
                        let (a, b) = (g.label_of(u), g.label_of(v));
                        if a <= b { (a, b) } else { (b, a) }
                    })
                    .collect()
            };
            prop_assert_eq!(edge_set(&parsed), edge_set(&g));
        }
    }

    #[test]
    fn test_degree_centrality() {
        let g = path(3);
        let dc = g.degree_centrality().unwrap();
        assert_eq!(dc, vec![0.5, 1.0, 0.5]);
        let single = Graph::from_edges(1, &[]);
        assert!(matches!(single.degree_centrality(), Err(Error::Metric(_))));
    }

    #[test]
    fn test_isolated_nodes_survive_round_trip() {
        let g = Graph::from_edges(3, &[(0, 1)]);
        let text = g.to_edge_list_string();
        let parsed = Graph::parse_edge_list(&text).unwrap();
        assert_eq!(parsed.node_count(), 3);
        assert_eq!(parsed.edge_count(), 1);
    }
}
