//! Episode environment for budgeted graph discovery: reveal-based steps with
//! node-discovery rewards, and terminal influence scoring scaled against
//! precomputed CHANGE/OPT anchors.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::influence::{
    estimate_influence, greedy_select, greedy_select_lazy, CascadeConfig, SeedSet,
};

/// Environment parameters for one discovery task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    /// Number of queries per episode (T).
    pub query_budget: usize,
    /// Size of the initially surveyed seed set S.
    pub num_seeds: usize,
    /// Seed budget k handed to the influence-maximization oracle.
    pub activate_budget: usize,
    /// Cascade probability and the oracle's Monte Carlo sample count.
    pub cascade: CascadeConfig,
    /// Sample count for scoring a chosen seed set on the hidden graph;
    /// separate from the oracle's count so cheap greedy rounds can coexist
    /// with precise reported influence.
    pub score_sims: usize,
    /// Clamp the scaled terminal reward to [0, 1].
    pub clip_reward: bool,
    /// Use the lazy (shared-sample) greedy oracle.
    pub lazy_oracle: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            query_budget: 5,
            num_seeds: 5,
            activate_budget: 10,
            cascade: CascadeConfig::default(),
            score_sims: 1000,
            clip_reward: false,
            lazy_oracle: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.query_budget < 1 {
            return Err(Error::domain("query_budget must be at least 1".to_string()));
        }
        if self.num_seeds < 1 {
            return Err(Error::domain("num_seeds must be at least 1".to_string()));
        }
        if self.activate_budget < 1 {
            return Err(Error::domain(
                "activate_budget must be at least 1".to_string(),
            ));
        }
        if self.score_sims < 1 {
            return Err(Error::domain("score_sims must be at least 1".to_string()));
        }
        self.cascade.validate()
    }

    fn scoring_cascade(&self) -> CascadeConfig {
        CascadeConfig {
            p: self.cascade.p,
            num_sims: self.score_sims,
        }
    }

    fn select_seeds(
        &self,
        g: &Graph,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<SeedSet> {
        if self.lazy_oracle {
            greedy_select_lazy(g, k, &self.cascade, rng)
        } else {
            greedy_select(g, k, &self.cascade, rng)
        }
    }
}

/// Per-graph reward anchors: mean CHANGE influence and greedy-on-full-graph
/// influence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineCache {
    pub change_value: f64,
    pub opt_value: f64,
}

/// Terminal reward: the fraction of the CHANGE-to-OPT gap closed by
/// `influence`. A degenerate gap below 1e-9 yields 0.
pub fn scaled_reward(influence: f64, cache: &BaselineCache, clip: bool) -> f64 {
    let denom = cache.opt_value - cache.change_value;
    if denom < 1e-9 {
        return 0.0;
    }
    let scaled = (influence - cache.change_value) / denom;
    if clip {
        scaled.clamp(0.0, 1.0)
    } else {
        scaled
    }
}

/// Uniform seed-set sample without replacement from the graph's nodes.
pub fn sample_seed_set(g: &Graph, num_seeds: usize, rng: &mut impl Rng) -> Result<SeedSet> {
    let nodes = g.nodes();
    if nodes.len() < num_seeds {
        return Err(Error::domain(format!(
            "graph has {} nodes, cannot sample {num_seeds} seeds",
            nodes.len()
        )));
    }
    let picks = rand::seq::index::sample(rng, nodes.len(), num_seeds);
    Ok(SeedSet::new(picks.iter().map(|i| nodes[i])))
}

/// One episode's observation: the discovered subgraph, the seed set, and the
/// ordered query history. Values are immutable; `step` returns a new state.
#[derive(Debug, Clone)]
pub struct EnvState {
    hidden: Arc<Graph>,
    observed: Graph,
    seeds: SeedSet,
    queried: Vec<usize>,
}

impl EnvState {
    /// Starts an episode with an explicit seed set.
    pub fn with_seeds(hidden: Arc<Graph>, seeds: SeedSet) -> Result<EnvState> {
        if seeds.is_empty() {
            return Err(Error::domain("seed set must be nonempty".to_string()));
        }
        let seed_nodes: Vec<usize> = seeds.iter().collect();
        let observed = hidden.initial_observation(&seed_nodes)?;
        Ok(EnvState {
            hidden,
            observed,
            seeds,
            queried: Vec::new(),
        })
    }

    /// Starts an episode with uniformly sampled seeds.
    pub fn reset(hidden: Arc<Graph>, cfg: &EnvConfig, rng: &mut impl Rng) -> Result<EnvState> {
        cfg.validate()?;
        let seeds = sample_seed_set(&hidden, cfg.num_seeds, rng)?;
        EnvState::with_seeds(hidden, seeds)
    }

    pub fn hidden(&self) -> &Graph {
        &self.hidden
    }

    pub fn hidden_arc(&self) -> &Arc<Graph> {
        &self.hidden
    }

    pub fn observed(&self) -> &Graph {
        &self.observed
    }

    pub fn seeds(&self) -> &SeedSet {
        &self.seeds
    }

    pub fn queried(&self) -> &[usize] {
        &self.queried
    }

    /// Number of queries made so far.
    pub fn t(&self) -> usize {
        self.queried.len()
    }

    /// Legal queries: observed nodes that are neither seeds nor already
    /// queried, ascending.
    pub fn action_set(&self) -> Vec<usize> {
        self.observed
            .nodes()
            .iter()
            .copied()
            .filter(|&u| !self.seeds.contains(u) && !self.queried.contains(&u))
            .collect()
    }

    pub fn is_terminal(&self, budget: usize) -> bool {
        self.t() >= budget || self.action_set().is_empty()
    }

    /// Queries `u`: reveals its hidden neighborhood and returns the new state
    /// with the step reward, the fraction of hidden-graph nodes newly
    /// discovered.
    pub fn step(&self, u: usize, budget: usize) -> Result<(EnvState, f64)> {
        if self.t() >= budget {
            return Err(Error::state(format!(
                "query budget {budget} exhausted at t={}",
                self.t()
            )));
        }
        if self.seeds.contains(u) || self.queried.contains(&u) || !self.observed.contains(u) {
            return Err(Error::domain(format!("node {u} is not a legal action")));
        }
        let next_observed = self.hidden.reveal_neighbors(&self.observed, u)?;
        let delta = next_observed.node_count() - self.observed.node_count();
        let reward = delta as f64 / self.hidden.node_count() as f64;
        let mut queried = self.queried.clone();
        queried.push(u);
        Ok((
            EnvState {
                hidden: Arc::clone(&self.hidden),
                observed: next_observed,
                seeds: self.seeds.clone(),
                queried,
            },
            reward,
        ))
    }

    /// Ends the episode: runs the greedy oracle on the discovered graph,
    /// scores the chosen seeds on the hidden graph, and scales against the
    /// cached anchors. Only legal once the budget is spent or no action
    /// remains.
    pub fn finalize(
        &self,
        cache: &BaselineCache,
        cfg: &EnvConfig,
        rng: &mut impl Rng,
    ) -> Result<(f64, f64)> {
        if !self.is_terminal(cfg.query_budget) {
            return Err(Error::state(format!(
                "episode still running at t={} with nonempty action set",
                self.t()
            )));
        }
        let chosen = cfg.select_seeds(&self.observed, cfg.activate_budget, rng)?;
        let influence =
            estimate_influence(&self.hidden, &chosen, &cfg.scoring_cascade(), rng)?;
        Ok((influence, scaled_reward(influence, cache, cfg.clip_reward)))
    }
}

/// Computes the CHANGE and OPT reward anchors for one hidden graph.
pub fn precompute_baselines(
    hidden: &Arc<Graph>,
    cfg: &EnvConfig,
    change_runs: usize,
    rng: &mut impl Rng,
) -> Result<BaselineCache> {
    cfg.validate()?;
    if change_runs == 0 {
        return Err(Error::domain("change_runs must be at least 1".to_string()));
    }
    if hidden.node_count() < cfg.num_seeds {
        return Err(Error::domain(format!(
            "graph has {} nodes, needs at least num_seeds = {}",
            hidden.node_count(),
            cfg.num_seeds
        )));
    }
    let opt_seeds = cfg.select_seeds(hidden, cfg.activate_budget, rng)?;
    let opt_value = estimate_influence(hidden, &opt_seeds, &cfg.scoring_cascade(), rng)?;
    let mut total = 0.0;
    for _ in 0..change_runs {
        let seeds = sample_seed_set(hidden, cfg.num_seeds, rng)?;
        let (discovered, _log) =
            crate::samplers::sample_change(hidden, &seeds, cfg.query_budget, rng)?;
        let chosen = cfg.select_seeds(&discovered, cfg.activate_budget, rng)?;
        total += estimate_influence(hidden, &chosen, &cfg.scoring_cascade(), rng)?;
    }
    Ok(BaselineCache {
        change_value: total / change_runs as f64,
        opt_value,
    })
}

/// One row of the persisted per-graph baseline table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub graph_name: String,
    pub change_value: f64,
    pub opt_value: f64,
    pub change_runs: usize,
    pub oracle_sims: usize,
    pub rng_seed: u64,
}

impl BaselineRow {
    pub fn cache(&self) -> BaselineCache {
        BaselineCache {
            change_value: self.change_value,
            opt_value: self.opt_value,
        }
    }
}

pub fn write_baselines_csv<W: Write>(writer: W, rows: &[BaselineRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_baselines_csv<R: Read>(reader: R) -> Result<Vec<BaselineRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for record in r.deserialize() {
        rows.push(record?);
    }
    Ok(rows)
}

/// A named hidden graph bundled with its reward anchors; the unit an episode
/// trains or evaluates on.
#[derive(Debug, Clone)]
pub struct TrainGraph {
    pub name: String,
    pub graph: Arc<Graph>,
    pub cache: BaselineCache,
}
