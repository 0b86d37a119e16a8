//! Synthetic training graphs: Louvain community detection, block-model
//! fitting by edge-count maximum likelihood, sampling from the fitted
//! models, and a mixed real/synthetic per-episode graph source.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::env::{precompute_baselines, EnvConfig, TrainGraph};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::derive_rng;

const LOUVAIN_GAIN_THRESHOLD: f64 = 1e-7;

/// A community assignment over a graph's nodes with dense indices from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: BTreeMap<usize, usize>,
    count: usize,
}

impl Partition {
    pub fn new(assignment: BTreeMap<usize, usize>) -> Result<Partition> {
        let count = match assignment.values().max() {
            Some(&m) => m + 1,
            None => 0,
        };
        let mut seen = vec![false; count];
        for &c in assignment.values() {
            seen[c] = true;
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::domain(
                "community indices must be dense from 0".to_string(),
            ));
        }
        Ok(Partition { assignment, count })
    }

    pub fn of(&self, node: usize) -> Option<usize> {
        self.assignment.get(&node).copied()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Members of each community, ascending node ids within and across.
    pub fn communities(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.count];
        for (&node, &c) in &self.assignment {
            out[c].push(node);
        }
        out
    }

    fn covers(&self, g: &Graph) -> bool {
        self.assignment.len() == g.node_count()
            && g.nodes().iter().all(|u| self.assignment.contains_key(u))
    }
}

/// Newman modularity of a partition on an unweighted graph; 0 for an
/// edgeless graph.
pub fn modularity(g: &Graph, part: &Partition) -> Result<f64> {
    if !part.covers(g) {
        return Err(Error::domain(
            "partition does not cover the graph".to_string(),
        ));
    }
    let m = g.edge_count() as f64;
    if m == 0.0 {
        return Ok(0.0);
    }
    let mut internal = vec![0.0f64; part.count()];
    let mut degree_sum = vec![0.0f64; part.count()];
    for (u, v) in g.edges() {
        let (cu, cv) = (part.of(u).unwrap(), part.of(v).unwrap());
        if cu == cv {
            internal[cu] += 1.0;
        }
    }
    for &u in g.nodes() {
        degree_sum[part.of(u).unwrap()] += g.degree(u) as f64;
    }
    let mut q = 0.0;
    for c in 0..part.count() {
        q += internal[c] / m - (degree_sum[c] / (2.0 * m)).powi(2);
    }
    Ok(q)
}

/// Weighted graph used internally across aggregation levels. Self-loop
/// weights store twice the internal edge weight so node strengths stay
/// consistent across levels.
struct WeightedGraph {
    neighbors: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
}

impl WeightedGraph {
    fn strength(&self, i: usize) -> f64 {
        self.self_loop[i] + self.neighbors[i].iter().map(|&(_, w)| w).sum::<f64>()
    }

    fn total(&self) -> f64 {
        (0..self.neighbors.len()).map(|i| self.strength(i)).sum()
    }
}

/// One pass of local moves; returns the node-to-community assignment in the
/// compact index space and whether anything moved.
fn louvain_level(wg: &WeightedGraph, rng: &mut impl Rng) -> (Vec<usize>, bool) {
    use rand::seq::SliceRandom;
    let n = wg.neighbors.len();
    let two_m = wg.total();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut comm_tot: Vec<f64> = (0..n).map(|i| wg.strength(i)).collect();
    let mut moved_any = false;
    loop {
        let mut moved = false;
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        for &i in &order {
            let ki = wg.strength(i);
            let old = comm[i];
            comm_tot[old] -= ki;
            let mut k_in: BTreeMap<usize, f64> = BTreeMap::new();
            for &(j, w) in &wg.neighbors[i] {
                *k_in.entry(comm[j]).or_insert(0.0) += w;
            }
            let mut best_comm = old;
            let mut best_score = k_in.get(&old).copied().unwrap_or(0.0) - comm_tot[old] * ki / two_m;
            for (&c, &kin) in &k_in {
                if c == old {
                    continue;
                }
                let score = kin - comm_tot[c] * ki / two_m;
                if (score - best_score) * 2.0 / two_m > LOUVAIN_GAIN_THRESHOLD {
                    best_score = score;
                    best_comm = c;
                }
            }
            comm_tot[best_comm] += ki;
            if best_comm != old {
                comm[i] = best_comm;
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    (comm, moved_any)
}

fn renumber(comm: &[usize]) -> (Vec<usize>, usize) {
    let mut map = BTreeMap::new();
    let mut out = Vec::with_capacity(comm.len());
    for &c in comm {
        let next = map.len();
        out.push(*map.entry(c).or_insert(next));
    }
    (out, map.len())
}

fn aggregate(wg: &WeightedGraph, comm: &[usize], count: usize) -> WeightedGraph {
    let mut neighbors: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); count];
    let mut self_loop = vec![0.0f64; count];
    for (i, &ci) in comm.iter().enumerate() {
        self_loop[ci] += wg.self_loop[i];
        for &(j, w) in &wg.neighbors[i] {
            let cj = comm[j];
            if ci == cj {
                self_loop[ci] += w;
            } else {
                *neighbors[ci].entry(cj).or_insert(0.0) += w;
            }
        }
    }
    WeightedGraph {
        neighbors: neighbors
            .into_iter()
            .map(|m| m.into_iter().collect())
            .collect(),
        self_loop,
    }
}

/// Multi-level Louvain modularity optimization. Node visiting order is
/// shuffled from `rng`; everything else is deterministic.
pub fn louvain(g: &Graph, rng: &mut impl Rng) -> Result<Partition> {
    let nodes = g.nodes().to_vec();
    if nodes.is_empty() {
        return Err(Error::domain("cannot partition an empty graph".to_string()));
    }
    if g.edge_count() == 0 {
        let assignment = nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect();
        return Partition::new(assignment);
    }
    let index: BTreeMap<usize, usize> = nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut wg = WeightedGraph {
        neighbors: nodes
            .iter()
            .map(|&u| {
                g.neighbors(u)
                    .iter()
                    .map(|&v| (index[&v], 1.0))
                    .collect()
            })
            .collect(),
        self_loop: vec![0.0; nodes.len()],
    };
    let mut membership: Vec<usize> = (0..nodes.len()).collect();
    loop {
        let (comm, moved) = louvain_level(&wg, rng);
        let (comm, count) = renumber(&comm);
        if !moved || count == wg.neighbors.len() {
            break;
        }
        for slot in membership.iter_mut() {
            *slot = comm[*slot];
        }
        wg = aggregate(&wg, &comm, count);
    }
    let assignment = nodes
        .iter()
        .zip(&membership)
        .map(|(&u, &c)| (u, c))
        .collect();
    Partition::new(assignment)
}

/// Erdos-Renyi communities with per-community internal density and one
/// shared cross density.
#[derive(Debug, Clone, PartialEq)]
pub struct SbmModel {
    pub community_sizes: Vec<usize>,
    pub p_in: Vec<f64>,
    pub p_out: f64,
}

/// Star communities (first node is the hub) with Bernoulli cross edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmModel {
    pub community_sizes: Vec<usize>,
    pub p_out: f64,
}

fn validate_sizes_probs(sizes: &[usize], probs: Option<&[f64]>, p_out: f64) -> Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::domain(
            "community sizes must be nonempty and positive".to_string(),
        ));
    }
    if let Some(ps) = probs {
        if ps.len() != sizes.len() {
            return Err(Error::shape(format!(
                "{} communities but {} internal densities",
                sizes.len(),
                ps.len()
            )));
        }
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("p_in must lie in [0, 1]".to_string()));
        }
    }
    if !(0.0..=1.0).contains(&p_out) {
        return Err(Error::domain("p_out must lie in [0, 1]".to_string()));
    }
    Ok(())
}

impl SbmModel {
    pub fn validate(&self) -> Result<()> {
        validate_sizes_probs(&self.community_sizes, Some(&self.p_in), self.p_out)
    }
}

impl SsmModel {
    pub fn validate(&self) -> Result<()> {
        validate_sizes_probs(&self.community_sizes, None, self.p_out)
    }
}

fn count_edges(g: &Graph, part: &Partition) -> Result<(Vec<usize>, usize)> {
    if !part.covers(g) {
        return Err(Error::domain(
            "partition does not cover the graph".to_string(),
        ));
    }
    let mut internal = vec![0usize; part.count()];
    let mut cross = 0usize;
    for (u, v) in g.edges() {
        let (cu, cv) = (part.of(u).unwrap(), part.of(v).unwrap());
        if cu == cv {
            internal[cu] += 1;
        } else {
            cross += 1;
        }
    }
    Ok((internal, cross))
}

fn cross_pairs(sizes: &[usize]) -> usize {
    let total: usize = sizes.iter().sum();
    let all_pairs = total * (total - 1) / 2;
    let internal_pairs: usize = sizes.iter().map(|&s| s * (s - 1) / 2).sum();
    all_pairs - internal_pairs
}

/// Edge-count MLE: internal density per community, one cross density.
/// Singleton communities get p_in = 0.
pub fn fit_sbm(g: &Graph, part: &Partition) -> Result<SbmModel> {
    let (internal, cross) = count_edges(g, part)?;
    let communities = part.communities();
    let sizes: Vec<usize> = communities.iter().map(Vec::len).collect();
    let p_in: Vec<f64> = sizes
        .iter()
        .zip(&internal)
        .map(|(&n, &m)| {
            let pairs = n * (n - 1) / 2;
            if pairs == 0 {
                0.0
            } else {
                m as f64 / pairs as f64
            }
        })
        .collect();
    let denom = cross_pairs(&sizes);
    let p_out = if denom == 0 {
        0.0
    } else {
        cross as f64 / denom as f64
    };
    Ok(SbmModel {
        community_sizes: sizes,
        p_in,
        p_out,
    })
}

/// Star-model fit: community sizes plus the cross-density MLE; internal
/// structure is fixed by the star assumption.
pub fn fit_ssm(g: &Graph, part: &Partition) -> Result<SsmModel> {
    let sbm = fit_sbm(g, part)?;
    Ok(SsmModel {
        community_sizes: sbm.community_sizes,
        p_out: sbm.p_out,
    })
}

fn community_blocks(sizes: &[usize]) -> Vec<(usize, usize)> {
    let mut blocks = Vec::with_capacity(sizes.len());
    let mut at = 0;
    for &s in sizes {
        blocks.push((at, at + s));
        at += s;
    }
    blocks
}

fn block_of(blocks: &[(usize, usize)], node: usize) -> usize {
    blocks.partition_point(|&(_, end)| end <= node)
}

/// Samples a graph from the block model; nodes are numbered by consecutive
/// community blocks and pair draws run in ascending order.
pub fn sample_sbm(model: &SbmModel, rng: &mut impl Rng) -> Result<Graph> {
    model.validate()?;
    let blocks = community_blocks(&model.community_sizes);
    let n: usize = model.community_sizes.iter().sum();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (ci, cj) = (block_of(&blocks, i), block_of(&blocks, j));
            let p = if ci == cj { model.p_in[ci] } else { model.p_out };
            if rng.gen::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Ok(Graph::from_edges(n, &edges))
}

/// Samples a star-model graph: each community's first node is its hub,
/// wired to every member; cross pairs are Bernoulli(p_out).
pub fn sample_ssm(model: &SsmModel, rng: &mut impl Rng) -> Result<Graph> {
    model.validate()?;
    let blocks = community_blocks(&model.community_sizes);
    let n: usize = model.community_sizes.iter().sum();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let (ci, cj) = (block_of(&blocks, i), block_of(&blocks, j));
            if ci == cj {
                if i == blocks[ci].0 {
                    edges.push((i, j));
                }
            } else if rng.gen::<f64>() < model.p_out {
                edges.push((i, j));
            }
        }
    }
    Ok(Graph::from_edges(n, &edges))
}

/// A fitted generative model for one training graph.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Sbm(SbmModel),
    Ssm(SsmModel),
}

impl FittedModel {
    pub fn sample(&self, rng: &mut impl Rng) -> Result<Graph> {
        match self {
            FittedModel::Sbm(m) => sample_sbm(m, rng),
            FittedModel::Ssm(m) => sample_ssm(m, rng),
        }
    }

    /// Text form: header line `SBM k p_out` or `SSM k p_out`, then one line
    /// per community (`size p_in` for SBM, `size` for SSM).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match self {
            FittedModel::Sbm(m) => {
                writeln!(out, "SBM {} {}", m.community_sizes.len(), m.p_out).unwrap();
                for (s, p) in m.community_sizes.iter().zip(&m.p_in) {
                    writeln!(out, "{s} {p}").unwrap();
                }
            }
            FittedModel::Ssm(m) => {
                writeln!(out, "SSM {} {}", m.community_sizes.len(), m.p_out).unwrap();
                for s in &m.community_sizes {
                    writeln!(out, "{s}").unwrap();
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<FittedModel> {
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "empty model file".to_string()))?;
        let tokens: Vec<&str> = header.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(parse_err(1, "expected 'KIND k p_out'".to_string()));
        }
        let k: usize = tokens[1]
            .parse()
            .map_err(|_| parse_err(1, format!("bad community count '{}'", tokens[1])))?;
        let p_out: f64 = tokens[2]
            .parse()
            .map_err(|_| parse_err(1, format!("bad p_out '{}'", tokens[2])))?;
        let mut sizes = Vec::with_capacity(k);
        let mut p_in = Vec::with_capacity(k);
        let want_p_in = match tokens[0] {
            "SBM" => true,
            "SSM" => false,
            other => return Err(parse_err(1, format!("unknown model kind '{other}'"))),
        };
        for _ in 0..k {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| parse_err(k + 1, "fewer community lines than declared".to_string()))?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let expect = if want_p_in { 2 } else { 1 };
            if parts.len() != expect {
                return Err(parse_err(
                    idx + 1,
                    format!("expected {expect} fields, got {}", parts.len()),
                ));
            }
            sizes.push(
                parts[0]
                    .parse()
                    .map_err(|_| parse_err(idx + 1, format!("bad size '{}'", parts[0])))?,
            );
            if want_p_in {
                p_in.push(
                    parts[1]
                        .parse()
                        .map_err(|_| parse_err(idx + 1, format!("bad p_in '{}'", parts[1])))?,
                );
            }
        }
        let model = if want_p_in {
            FittedModel::Sbm(SbmModel {
                community_sizes: sizes,
                p_in,
                p_out,
            })
        } else {
            FittedModel::Ssm(SsmModel {
                community_sizes: sizes,
                p_out,
            })
        };
        match &model {
            FittedModel::Sbm(m) => m.validate()?,
            FittedModel::Ssm(m) => m.validate()?,
        }
        Ok(model)
    }
}

/// How synthetic graphs are produced within a [`GraphSource`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    /// A fresh graph is sampled for every synthetic episode.
    OnTheFly,
    /// A fixed pool of the given size is sampled per training graph up
    /// front; episodes draw uniformly from the pool.
    Pregenerate(usize),
}

/// Per-episode training graph supplier mixing real graphs with synthetic
/// ones sampled from per-graph fitted models.
pub struct GraphSource {
    real: Vec<Arc<TrainGraph>>,
    models: Vec<FittedModel>,
    mix_prob: f64,
    mode: SynthMode,
    env: EnvConfig,
    change_runs: usize,
    seed: u64,
    pools: Vec<Vec<PoolSlot>>,
    fresh_counter: u64,
}

struct PoolSlot {
    graph: Arc<Graph>,
    prepared: Option<Arc<TrainGraph>>,
}

impl GraphSource {
    pub fn new(
        real: Vec<Arc<TrainGraph>>,
        models: Vec<FittedModel>,
        mix_prob: f64,
        mode: SynthMode,
        env: EnvConfig,
        change_runs: usize,
        seed: u64,
    ) -> Result<GraphSource> {
        if real.is_empty() {
            return Err(Error::domain("need at least one training graph".to_string()));
        }
        if models.len() != real.len() {
            return Err(Error::shape(format!(
                "{} graphs but {} fitted models",
                real.len(),
                models.len()
            )));
        }
        if !(0.0..=1.0).contains(&mix_prob) {
            return Err(Error::domain(format!(
                "mix_prob must lie in [0, 1], got {mix_prob}"
            )));
        }
        if let SynthMode::Pregenerate(0) = mode {
            return Err(Error::domain("pregenerate pool size must be positive".to_string()));
        }
        let mut pools = Vec::new();
        if let SynthMode::Pregenerate(count) = mode {
            for (gi, model) in models.iter().enumerate() {
                let mut pool = Vec::with_capacity(count);
                for inst in 0..count {
                    let mut rng = derive_rng(seed, "poolgen", (gi * count + inst) as u64);
                    pool.push(PoolSlot {
                        graph: Arc::new(model.sample(&mut rng)?),
                        prepared: None,
                    });
                }
                pools.push(pool);
            }
        }
        Ok(GraphSource {
            real,
            models,
            mix_prob,
            mode,
            env,
            change_runs,
            seed,
            pools,
            fresh_counter: 0,
        })
    }

    pub fn real_graphs(&self) -> &[Arc<TrainGraph>] {
        &self.real
    }

    fn prepare(
        &self,
        name: String,
        graph: Arc<Graph>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Arc<TrainGraph>> {
        let cache = precompute_baselines(&graph, &self.env, self.change_runs, rng)?;
        Ok(Arc::new(TrainGraph { name, graph, cache }))
    }

    /// Supplies the next episode's graph: synthetic with probability
    /// mix_prob, otherwise a uniformly random real graph.
    pub fn next(&mut self, rng: &mut ChaCha8Rng) -> Result<Arc<TrainGraph>> {
        let synthetic = rng.gen::<f64>() < self.mix_prob;
        if !synthetic {
            let i = rng.gen_range(0..self.real.len());
            return Ok(Arc::clone(&self.real[i]));
        }
        let gi = rng.gen_range(0..self.real.len());
        match self.mode {
            SynthMode::OnTheFly => {
                let graph = Arc::new(self.models[gi].sample(rng)?);
                self.fresh_counter += 1;
                let name = format!("{}_synth{}", self.real[gi].name, self.fresh_counter);
                self.prepare(name, graph, rng)
            }
            SynthMode::Pregenerate(count) => {
                let inst = rng.gen_range(0..count);
                if self.pools[gi][inst].prepared.is_none() {
                    let graph = Arc::clone(&self.pools[gi][inst].graph);
                    let name = format!("{}_pool{}", self.real[gi].name, inst);
                    let mut cache_rng =
                        derive_rng(self.seed, "poolcache", (gi * count + inst) as u64);
                    let prepared = self.prepare(name, graph, &mut cache_rng)?;
                    self.pools[gi][inst].prepared = Some(prepared);
                }
                Ok(Arc::clone(self.pools[gi][inst].prepared.as_ref().unwrap()))
            }
        }
    }
}
