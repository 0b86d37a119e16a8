//! Independent-cascade influence: Monte Carlo simulation, exact enumeration
//! for small graphs, and greedy seed selection.
//!
//! Every edge carries the same activation probability `p`. Because the graph
//! is undirected and a node never re-attempts activation, flipping one coin
//! per edge (the live-edge view) gives the same activation distribution as
//! step-by-step simulation; the greedy oracle exploits this for shared-sample
//! marginal-gain estimates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::derive_rng;

/// Exhaustive enumeration limit for [`exact_influence`].
pub const EXACT_EDGE_LIMIT: usize = 20;

/// Cascade parameters: per-edge activation probability and Monte Carlo
/// sample count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeConfig {
    pub p: f64,
    pub num_sims: usize,
}

impl CascadeConfig {
    pub fn new(p: f64, num_sims: usize) -> Result<Self> {
        let cfg = CascadeConfig { p, num_sims };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::domain(format!(
                "activation probability must lie in [0, 1], got {}",
                self.p
            )));
        }
        if self.num_sims == 0 {
            return Err(Error::domain("num_sims must be at least 1".to_string()));
        }
        Ok(())
    }
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            p: 0.1,
            num_sims: 100,
        }
    }
}

/// Sorted, deduplicated set of seed nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedSet(Vec<usize>);

impl SeedSet {
    pub fn new(nodes: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = nodes.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        SeedSet(v)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, u: usize) -> bool {
        self.0.binary_search(&u).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

fn check_seeds(g: &Graph, seeds: &SeedSet) -> Result<()> {
    for s in seeds.iter() {
        if !g.contains(s) {
            return Err(Error::domain(format!("seed {s} is not in the graph")));
        }
    }
    Ok(())
}

/// Runs one independent cascade from `seeds` and returns the number of
/// activated nodes (seeds included).
pub fn simulate_icm(g: &Graph, seeds: &SeedSet, p: f64, rng: &mut impl Rng) -> Result<usize> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!(
            "activation probability must lie in [0, 1], got {p}"
        )));
    }
    check_seeds(g, seeds)?;
    let mut active = vec![false; g.universe()];
    let mut frontier: Vec<usize> = Vec::with_capacity(seeds.len());
    for s in seeds.iter() {
        active[s] = true;
        frontier.push(s);
    }
    let mut count = seeds.len();
    while let Some(u) = frontier.pop() {
        for &v in g.neighbors(u) {
            if !active[v] && rng.gen::<f64>() < p {
                active[v] = true;
                count += 1;
                frontier.push(v);
            }
        }
    }
    Ok(count)
}

/// Mean activated count over `cfg.num_sims` cascades. Each cascade runs on
/// its own derived RNG stream, and counts accumulate as integers, so the
/// result does not depend on summation order.
pub fn estimate_influence(
    g: &Graph,
    seeds: &SeedSet,
    cfg: &CascadeConfig,
    rng: &mut impl Rng,
) -> Result<f64> {
    cfg.validate()?;
    check_seeds(g, seeds)?;
    let base = rng.gen::<u64>();
    let mut total: u64 = 0;
    for i in 0..cfg.num_sims {
        let mut sim_rng = derive_rng(base, "icm", i as u64);
        total += simulate_icm(g, seeds, cfg.p, &mut sim_rng)? as u64;
    }
    Ok(total as f64 / cfg.num_sims as f64)
}

struct Dsu {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl Dsu {
    fn new(n: usize) -> Dsu {
        Dsu {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    fn reset(&mut self) {
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i as u32;
        }
        self.size.fill(1);
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let gp = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = gp;
            x = gp;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra as usize] < self.size[rb as usize] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb as usize] = ra;
        self.size[ra as usize] += self.size[rb as usize];
    }
}

/// Expected influence by exhaustive live-edge enumeration. Exponential in the
/// edge count; graphs with more than [`EXACT_EDGE_LIMIT`] edges are rejected.
pub fn exact_influence(g: &Graph, seeds: &SeedSet, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::domain(format!(
            "activation probability must lie in [0, 1], got {p}"
        )));
    }
    check_seeds(g, seeds)?;
    let nodes = g.nodes();
    let rank_of = |u: usize| nodes.binary_search(&u).expect("active node");
    let edges: Vec<(u32, u32)> = g
        .edges()
        .into_iter()
        .map(|(u, v)| (rank_of(u) as u32, rank_of(v) as u32))
        .collect();
    let m = edges.len();
    if m > EXACT_EDGE_LIMIT {
        return Err(Error::Capacity(format!(
            "exact influence enumerates 2^|E| subsets; |E| = {m} exceeds the limit of {EXACT_EDGE_LIMIT}"
        )));
    }
    let seed_ranks: Vec<u32> = seeds.iter().map(|s| rank_of(s) as u32).collect();
    let q = 1.0 - p;
    let mut p_pow = vec![1.0; m + 1];
    let mut q_pow = vec![1.0; m + 1];
    for i in 1..=m {
        p_pow[i] = p_pow[i - 1] * p;
        q_pow[i] = q_pow[i - 1] * q;
    }
    let mut dsu = Dsu::new(nodes.len());
    let mut expected = 0.0;
    let mut roots: Vec<u32> = Vec::with_capacity(seed_ranks.len());
    for mask in 0u32..(1u32 << m) {
        dsu.reset();
        for (i, &(a, b)) in edges.iter().enumerate() {
            if mask & (1 << i) != 0 {
                dsu.union(a, b);
            }
        }
        roots.clear();
        let mut covered: u64 = 0;
        for &s in &seed_ranks {
            let r = dsu.find(s);
            if !roots.contains(&r) {
                roots.push(r);
                covered += u64::from(dsu.size[r as usize]);
            }
        }
        let live = mask.count_ones() as usize;
        expected += p_pow[live] * q_pow[m - live] * covered as f64;
    }
    Ok(expected)
}

/// One live-edge world: a component id per active-node rank plus component
/// sizes.
struct LiveSample {
    comp: Vec<u32>,
    size: Vec<u32>,
}

fn draw_live_sample(
    n: usize,
    edges: &[(u32, u32)],
    p: f64,
    dsu: &mut Dsu,
    rng: &mut impl Rng,
) -> LiveSample {
    dsu.reset();
    for &(a, b) in edges {
        if rng.gen::<f64>() < p {
            dsu.union(a, b);
        }
    }
    let mut comp = vec![u32::MAX; n];
    let mut size = Vec::new();
    for r in 0..n as u32 {
        let root = dsu.find(r);
        if comp[root as usize] == u32::MAX {
            comp[root as usize] = size.len() as u32;
            size.push(dsu.size[root as usize]);
        }
        comp[r as usize] = comp[root as usize];
    }
    LiveSample { comp, size }
}

fn greedy_common(
    g: &Graph,
    k: usize,
    cfg: &CascadeConfig,
    lazy: bool,
    rng: &mut impl Rng,
) -> Result<SeedSet> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::domain("seed budget k must be at least 1".to_string()));
    }
    let nodes = g.nodes();
    let n = nodes.len();
    if n == 0 {
        return Err(Error::domain(
            "cannot select seeds from an empty graph".to_string(),
        ));
    }
    if k >= n {
        return Ok(SeedSet::new(nodes.iter().copied()));
    }
    let rank_of = |u: usize| nodes.binary_search(&u).expect("active node");
    let edges: Vec<(u32, u32)> = g
        .edges()
        .into_iter()
        .map(|(u, v)| (rank_of(u) as u32, rank_of(v) as u32))
        .collect();
    let mut dsu = Dsu::new(n);

    if lazy {
        return greedy_lazy(nodes, n, &edges, k, cfg, &mut dsu, rng);
    }

    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut chosen_rank = vec![false; n];
    for _ in 0..k {
        // Fresh worlds each round, shared across all candidates of the round.
        let samples: Vec<LiveSample> = (0..cfg.num_sims)
            .map(|_| draw_live_sample(n, &edges, cfg.p, &mut dsu, rng))
            .collect();
        let covered: Vec<Vec<bool>> = samples
            .iter()
            .map(|s| {
                let mut cov = vec![false; s.size.len()];
                for (r, &is_chosen) in chosen_rank.iter().enumerate() {
                    if is_chosen {
                        cov[s.comp[r] as usize] = true;
                    }
                }
                cov
            })
            .collect();
        let mut best_rank = usize::MAX;
        let mut best_gain = -1.0f64;
        for r in 0..n {
            if chosen_rank[r] {
                continue;
            }
            let mut gain: u64 = 0;
            for (s, cov) in samples.iter().zip(&covered) {
                let c = s.comp[r] as usize;
                if !cov[c] {
                    gain += u64::from(s.size[c]);
                }
            }
            let gain = gain as f64;
            if gain > best_gain {
                best_gain = gain;
                best_rank = r;
            }
        }
        chosen_rank[best_rank] = true;
        chosen.push(nodes[best_rank]);
    }
    Ok(SeedSet::new(chosen))
}

#[derive(PartialEq)]
struct CelfEntry {
    gain: f64,
    node_rank: usize,
    round: usize,
}

impl Eq for CelfEntry {}

impl Ord for CelfEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Max-heap on gain; on ties the smaller node id wins.
        self.gain
            .total_cmp(&other.gain)
            .then_with(|| other.node_rank.cmp(&self.node_rank))
    }
}

impl PartialOrd for CelfEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazy greedy over one shared set of live-edge worlds. Marginal gains on a
/// fixed sample set are submodular, so a stale heap entry is always an upper
/// bound and the first up-to-date maximum is exact for the sampled objective.
fn greedy_lazy(
    nodes: &[usize],
    n: usize,
    edges: &[(u32, u32)],
    k: usize,
    cfg: &CascadeConfig,
    dsu: &mut Dsu,
    rng: &mut impl Rng,
) -> Result<SeedSet> {
    let samples: Vec<LiveSample> = (0..cfg.num_sims)
        .map(|_| draw_live_sample(n, edges, cfg.p, dsu, rng))
        .collect();
    let mut covered: Vec<Vec<bool>> = samples
        .iter()
        .map(|s| vec![false; s.size.len()])
        .collect();
    let gain_of = |r: usize, covered: &[Vec<bool>]| -> f64 {
        let mut gain: u64 = 0;
        for (s, cov) in samples.iter().zip(covered) {
            let c = s.comp[r] as usize;
            if !cov[c] {
                gain += u64::from(s.size[c]);
            }
        }
        gain as f64
    };
    let mut heap = std::collections::BinaryHeap::with_capacity(n);
    for r in 0..n {
        heap.push(CelfEntry {
            gain: gain_of(r, &covered),
            node_rank: r,
            round: 0,
        });
    }
    let mut chosen = Vec::with_capacity(k);
    for round in 0..k {
        loop {
            let top = heap.pop().expect("heap holds all unchosen nodes");
            if top.round == round {
                for (s, cov) in samples.iter().zip(&mut covered) {
                    cov[s.comp[top.node_rank] as usize] = true;
                }
                chosen.push(nodes[top.node_rank]);
                break;
            }
            heap.push(CelfEntry {
                gain: gain_of(top.node_rank, &covered),
                node_rank: top.node_rank,
                round,
            });
        }
    }
    Ok(SeedSet::new(chosen))
}

/// Greedy seed selection with Monte Carlo marginal gains. Each round draws
/// `cfg.num_sims` live-edge worlds shared by every candidate of that round;
/// ties break toward the smallest node id. `k >= |V|` selects every node.
pub fn greedy_select(
    g: &Graph,
    k: usize,
    cfg: &CascadeConfig,
    rng: &mut impl Rng,
) -> Result<SeedSet> {
    greedy_common(g, k, cfg, false, rng)
}

/// Lazy variant of [`greedy_select`]: draws the live-edge worlds once up
/// front and reuses them for every round, evaluating candidates lazily.
pub fn greedy_select_lazy(
    g: &Graph,
    k: usize,
    cfg: &CascadeConfig,
    rng: &mut impl Rng,
) -> Result<SeedSet> {
    greedy_common(g, k, cfg, true, rng)
}

/// Greedy selection against [`exact_influence`]; only for graphs within the
/// exhaustive edge limit.
pub fn greedy_select_exact(g: &Graph, k: usize, p: f64) -> Result<SeedSet> {
    if k == 0 {
        return Err(Error::domain("seed budget k must be at least 1".to_string()));
    }
    let nodes = g.nodes();
    if nodes.is_empty() {
        return Err(Error::domain(
            "cannot select seeds from an empty graph".to_string(),
        ));
    }
    if k >= nodes.len() {
        return Ok(SeedSet::new(nodes.iter().copied()));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best_node = usize::MAX;
        let mut best_val = f64::NEG_INFINITY;
        for &v in nodes {
            if chosen.contains(&v) {
                continue;
            }
            let mut candidate = chosen.clone();
            candidate.push(v);
            let val = exact_influence(g, &SeedSet::new(candidate), p)?;
            if val > best_val {
                best_val = val;
                best_node = v;
            }
        }
        chosen.push(best_node);
    }
    Ok(SeedSet::new(chosen))
}
