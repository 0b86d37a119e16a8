//! Fixture graphs and shared configurations for the integration suites.

#![allow(dead_code)]

use std::sync::Arc;

use rand::seq::SliceRandom;

use geodqn::deepwalk::WalkConfig;
use geodqn::env::{precompute_baselines, EnvConfig, TrainGraph};
use geodqn::gdqn::{GdqnArch, PoolMode};
use geodqn::graph::Graph;
use geodqn::influence::{exact_influence, CascadeConfig, SeedSet};
use geodqn::rng::derive_rng;
use geodqn::training::{CurveRecord, DqnConfig};
use geodqn::Result;

/// Two nodes joined by one edge.
pub fn single_edge() -> Graph {
    Graph::from_edges(2, &[(0, 1)])
}

pub fn triangle() -> Graph {
    Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)])
}

/// Path 0-1-...-(n-1).
pub fn path_graph(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    Graph::from_edges(n, &edges)
}

/// Cycle on n nodes.
pub fn cycle_graph(n: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::from_edges(n, &edges)
}

/// Hub 0 with `leaves` pendant nodes.
pub fn star_graph(leaves: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (1..=leaves).map(|l| (0, l)).collect();
    Graph::from_edges(leaves + 1, &edges)
}

/// Complete graph on n nodes.
pub fn complete_graph(n: usize) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            edges.push((u, v));
        }
    }
    Graph::from_edges(n, &edges)
}

/// Central hub 0, `subhubs` middle nodes attached to it, and `leaves_per`
/// pendant leaves on each middle node.
pub fn star_of_stars(subhubs: usize, leaves_per: usize) -> Graph {
    let mut edges = Vec::new();
    let mut next = subhubs + 1;
    for h in 1..=subhubs {
        edges.push((0, h));
        for _ in 0..leaves_per {
            edges.push((h, next));
            next += 1;
        }
    }
    Graph::from_edges(next, &edges)
}

/// Number of disjoint cliques forming the visible portion of a hidden-hub
/// instance.
pub const HH_CLIQUES: usize = 24;
/// Members per clique.
pub const HH_CLIQUE_SIZE: usize = 5;
/// Number of hubs per instance.
pub const HH_HUBS: usize = 2;
/// Clique members each hub is directly wired to.
pub const HH_ANCHORS: usize = 60;

/// A family member for the discovery task: a necklace of small cliques where
/// random seeds land, plus two high-influence hubs each wired to a disjoint
/// half of the clique members. A seed exposes its whole clique at once, so
/// querying a clique-mate is nearly redundant, while the unqueried hubs
/// accumulate observed degree from several cliques and open up fresh regions.
/// Node ids are shuffled so they carry no structural hint.
pub fn hidden_hub_graph(instance: u64) -> Graph {
    let mut rng = derive_rng(instance, "hiddenhub", 0);
    let p = HH_CLIQUES * HH_CLIQUE_SIZE;
    let n = p + HH_HUBS;

    let mut edge_set: std::collections::BTreeSet<(usize, usize)> =
        std::collections::BTreeSet::new();
    let add = |set: &mut std::collections::BTreeSet<(usize, usize)>, a: usize, b: usize| {
        set.insert((a.min(b), a.max(b)));
    };
    for c in 0..HH_CLIQUES {
        for i in 0..HH_CLIQUE_SIZE {
            for j in (i + 1)..HH_CLIQUE_SIZE {
                add(&mut edge_set, c * HH_CLIQUE_SIZE + i, c * HH_CLIQUE_SIZE + j);
            }
        }
        let a = c * HH_CLIQUE_SIZE;
        let b = ((c + 1) % HH_CLIQUES) * HH_CLIQUE_SIZE;
        add(&mut edge_set, a, b);
    }
    let mut pool: Vec<usize> = (0..p).collect();
    pool.shuffle(&mut rng);
    for h in 0..HH_HUBS {
        for &a in &pool[h * HH_ANCHORS..(h + 1) * HH_ANCHORS] {
            add(&mut edge_set, p + h, a);
        }
    }

    let mut relabel: Vec<usize> = (0..n).collect();
    relabel.shuffle(&mut rng);
    let edges: Vec<(usize, usize)> = edge_set
        .iter()
        .map(|&(a, b)| (relabel[a], relabel[b]))
        .collect();
    Graph::from_edges(n, &edges)
}

/// Nodes of `g` with the `HH_HUBS` largest degrees.
pub fn top_degree_nodes(g: &Graph, count: usize) -> Vec<usize> {
    let mut by_degree: Vec<(usize, usize)> = g
        .nodes()
        .iter()
        .map(|&u| (g.degree(u), u))
        .collect();
    by_degree.sort_by(|a, b| b.cmp(a));
    by_degree.into_iter().take(count).map(|(_, u)| u).collect()
}

/// Builds `count` family instances with their reward anchors precomputed.
pub fn hidden_hub_family(
    count: u64,
    env: &EnvConfig,
    change_runs: usize,
    seed: u64,
) -> Result<Vec<Arc<TrainGraph>>> {
    (0..count)
        .map(|i| {
            let graph = Arc::new(hidden_hub_graph(i));
            let mut rng = derive_rng(seed, "anchors", i);
            let cache = precompute_baselines(&graph, env, change_runs, &mut rng)?;
            Ok(Arc::new(TrainGraph {
                name: format!("hub{i}"),
                graph,
                cache,
            }))
        })
        .collect()
}

/// Environment used by the learning and ablation suites.
pub fn acc_env() -> EnvConfig {
    EnvConfig {
        query_budget: 3,
        num_seeds: 3,
        activate_budget: 3,
        cascade: CascadeConfig {
            p: 0.1,
            num_sims: 60,
        },
        score_sims: 240,
        clip_reward: false,
        lazy_oracle: true,
    }
}

pub fn acc_walk() -> WalkConfig {
    WalkConfig {
        walks_per_node: 8,
        walk_length: 12,
        window: 3,
        dim: 8,
        negatives: 2,
        epochs: 8,
        learning_rate: 0.025,
        warm_start: true,
    }
}

pub fn acc_arch() -> GdqnArch {
    GdqnArch {
        input_dim: 8,
        gcn_widths: vec![24, 24],
        clusters: vec![4, 1],
        embed_width: 24,
        head_widths: vec![48, 24],
        pool_mode: PoolMode::DiffPool,
    }
}

pub fn acc_dqn(episodes: usize) -> DqnConfig {
    DqnConfig {
        episodes,
        gamma: 0.0,
        epsilon_start: 1.0,
        epsilon_end: 0.02,
        epsilon_fraction: 0.5,
        batch_size: 64,
        buffer_capacity: 2000,
        alpha: 0.6,
        beta_start: 0.4,
        beta_end: 1.0,
        target_sync_interval: 100,
        learn_start: 64,
        ablate_step_reward: false,
        learning_rate: 5e-4,
    }
}

pub fn trailing_mean(curve: &[CurveRecord], window: usize) -> f64 {
    let tail = &curve[curve.len().saturating_sub(window)..];
    tail.iter().map(|r| r.scaled_reward).sum::<f64>() / tail.len() as f64
}

/// Best exact influence over every k-subset of nodes, by enumeration.
pub fn exhaustive_opt(g: &Graph, k: usize, p: f64) -> Result<f64> {
    let nodes = g.nodes().to_vec();
    let mut best = f64::NEG_INFINITY;
    let mut pick = vec![0usize; k];
    fn recur(
        g: &Graph,
        nodes: &[usize],
        p: f64,
        k: usize,
        start: usize,
        pick: &mut Vec<usize>,
        depth: usize,
        best: &mut f64,
    ) -> Result<()> {
        if depth == k {
            let seeds = SeedSet::new(pick.iter().copied());
            let value = exact_influence(g, &seeds, p)?;
            if value > *best {
                *best = value;
            }
            return Ok(());
        }
        for i in start..nodes.len() {
            pick[depth] = nodes[i];
            recur(g, nodes, p, k, i + 1, pick, depth + 1, best)?;
        }
        Ok(())
    }
    recur(g, &nodes, p, k, 0, &mut pick, 0, &mut best)?;
    Ok(best)
}
