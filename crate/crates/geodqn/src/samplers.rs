//! Hand-designed discovery policies: CHANGE, snowball, recommend,
//! random-greedy, and the degree heuristics H1/H2. Each consumes a query
//! budget through the environment and returns the discovered graph plus a
//! query log, so every baseline run is replayable step by step.

use std::collections::VecDeque;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::influence::SeedSet;

/// One query: when it happened, which node, and the observed node count
/// right after the reveal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryEvent {
    pub t: usize,
    pub node: usize,
    pub observed_nodes: usize,
}

/// Ordered query history of one discovery run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryLog {
    pub events: Vec<QueryEvent>,
}

impl QueryLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.events.iter().map(|e| e.node)
    }
}

fn start_state(hidden: &Arc<Graph>, seeds: &SeedSet) -> Result<EnvState> {
    EnvState::with_seeds(Arc::clone(hidden), seeds.clone())
}

fn apply(state: EnvState, u: usize, budget: usize, log: &mut QueryLog) -> Result<EnvState> {
    let t = state.t();
    let (next, _reward) = state.step(u, budget)?;
    log.events.push(QueryEvent {
        t,
        node: u,
        observed_nodes: next.observed().node_count(),
    });
    Ok(next)
}

fn finish(state: EnvState, log: QueryLog) -> (Graph, QueryLog) {
    (state.observed().clone(), log)
}

/// Drives a per-step choice policy until the budget or the action set runs
/// out, or the policy declines to continue.
fn drive<R: Rng, F: FnMut(&EnvState, &mut R) -> Option<usize>>(
    hidden: &Arc<Graph>,
    seeds: &SeedSet,
    budget: usize,
    rng: &mut R,
    mut pick: F,
) -> Result<(Graph, QueryLog)> {
    let mut state = start_state(hidden, seeds)?;
    let mut log = QueryLog::default();
    while state.t() < budget && !state.action_set().is_empty() {
        let Some(u) = pick(&state, rng) else { break };
        state = apply(state, u, budget, &mut log)?;
    }
    Ok(finish(state, log))
}

fn pick_uniform<R: Rng>(state: &EnvState, rng: &mut R) -> Option<usize> {
    state.action_set().choose(rng).copied()
}

fn pick_by_degree<R: Rng>(state: &EnvState, rng: &mut R, smallest: bool) -> Option<usize> {
    let actions = state.action_set();
    let degs: Vec<usize> = actions
        .iter()
        .map(|&u| state.observed().degree(u))
        .collect();
    let best = if smallest {
        *degs.iter().min()?
    } else {
        *degs.iter().max()?
    };
    let ties: Vec<usize> = actions
        .iter()
        .zip(&degs)
        .filter(|&(_, &d)| d == best)
        .map(|(&u, _)| u)
        .collect();
    ties.choose(rng).copied()
}

/// CHANGE: visit the seeds in shuffled order (cycling if the budget exceeds
/// the seed count) and query one uniformly random still-legal neighbor of
/// each. A seed with no legal neighbor forfeits that turn.
pub fn sample_change(
    hidden: &Arc<Graph>,
    seeds: &SeedSet,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<(Graph, QueryLog)> {
    if seeds.is_empty() {
        return Err(Error::domain("CHANGE needs a nonempty seed set".to_string()));
    }
    let mut state = start_state(hidden, seeds)?;
    let mut log = QueryLog::default();
    let mut order: Vec<usize> = seeds.iter().collect();
    order.shuffle(rng);
    let plan: Vec<usize> = order.iter().copied().cycle().take(budget).collect();
    for seed in plan {
        let pool: Vec<usize> = hidden
            .neighbors(seed)
            .iter()
            .copied()
            .filter(|&w| !seeds.contains(w) && !state.queried().contains(&w))
            .collect();
        let Some(&u) = pool.choose(rng) else { continue };
        state = apply(state, u, budget, &mut log)?;
    }
    Ok(finish(state, log))
}

/// Snowball sampling: FIFO over discovered unqueried nodes, seeded with the
/// seeds' neighborhood in random order; newly revealed nodes join the back
/// in ascending id order.
pub fn sample_snowball(
    hidden: &Arc<Graph>,
    seeds: &SeedSet,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<(Graph, QueryLog)> {
    let mut state = start_state(hidden, seeds)?;
    let mut log = QueryLog::default();
    let mut initial: Vec<usize> = state
        .observed()
        .nodes()
        .iter()
        .copied()
        .filter(|&u| !seeds.contains(u))
        .collect();
    initial.shuffle(rng);
    let mut queue: VecDeque<usize> = initial.into();
    let mut discovered: Vec<usize> = state.observed().nodes().to_vec();
    while state.t() < budget {
        let Some(u) = queue.pop_front() else { break };
        state = apply(state, u, budget, &mut log)?;
        for &w in state.observed().nodes() {
            if discovered.binary_search(&w).is_err() {
                queue.push_back(w);
            }
        }
        discovered = state.observed().nodes().to_vec();
    }
    Ok(finish(state, log))
}

/// Recommend: always query the highest-observed-degree legal node, ties
/// uniform at random.
pub fn sample_recommend(
    hidden: &Arc<Graph>,
    seeds: &SeedSet,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<(Graph, QueryLog)> {
    drive(hidden, seeds, budget, rng, |s, r| {
        pick_by_degree(s, r, false)
    })
}

/// Random-greedy: query a uniformly random legal node each step.
pub fn sample_random_greedy(
    hidden: &Arc<Graph>,
    seeds: &SeedSet,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<(Graph, QueryLog)> {
    drive(hidden, seeds, budget, rng, pick_uniform)
}

/// H1: always query a minimum-observed-degree legal node, ties uniform.
pub fn sample_h1(
    hidden: &Arc<Graph>,
    seeds: &SeedSet,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<(Graph, QueryLog)> {
    drive(hidden, seeds, budget, rng, |s, r| pick_by_degree(s, r, true))
}

/// H2: query the minimum-observed-degree node among nodes first discovered by
/// the previous step (the seeds' neighborhood counts as step zero's
/// discoveries); if that pool is exhausted, fall back to a uniform legal node.
pub fn sample_h2(
    hidden: &Arc<Graph>,
    seeds: &SeedSet,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<(Graph, QueryLog)> {
    let mut state = start_state(hidden, seeds)?;
    let mut log = QueryLog::default();
    let mut prev_new: Vec<usize> = state
        .observed()
        .nodes()
        .iter()
        .copied()
        .filter(|&u| !seeds.contains(u))
        .collect();
    while state.t() < budget {
        let actions = state.action_set();
        if actions.is_empty() {
            break;
        }
        let pool: Vec<usize> = prev_new
            .iter()
            .copied()
            .filter(|u| actions.binary_search(u).is_ok())
            .collect();
        let u = if pool.is_empty() {
            *actions.choose(rng).expect("nonempty action set")
        } else {
            let degs: Vec<usize> = pool.iter().map(|&u| state.observed().degree(u)).collect();
            let best = *degs.iter().min().expect("nonempty pool");
            let ties: Vec<usize> = pool
                .iter()
                .zip(&degs)
                .filter(|&(_, &d)| d == best)
                .map(|(&u, _)| u)
                .collect();
            *ties.choose(rng).expect("nonempty ties")
        };
        let before: Vec<usize> = state.observed().nodes().to_vec();
        state = apply(state, u, budget, &mut log)?;
        prev_new = state
            .observed()
            .nodes()
            .iter()
            .copied()
            .filter(|w| before.binary_search(w).is_err())
            .collect();
    }
    Ok(finish(state, log))
}

/// Replays a query log through fresh environment steps; the result must match
/// the sampler's discovered graph exactly.
pub fn replay_query_log(
    hidden: &Arc<Graph>,
    seeds: &SeedSet,
    log: &QueryLog,
    budget: usize,
) -> Result<Graph> {
    let mut state = EnvState::with_seeds(Arc::clone(hidden), seeds.clone())?;
    for ev in &log.events {
        let (next, _) = state.step(ev.node, budget)?;
        state = next;
    }
    Ok(state.observed().clone())
}

#[derive(Debug, Serialize, Deserialize)]
struct QueryLogRow {
    run_id: usize,
    t: usize,
    node_label: String,
    observed_nodes: usize,
}

/// Writes many runs' logs as CSV rows `run_id, t, node_label, observed_nodes`.
pub fn write_query_logs_csv<W: Write>(writer: W, logs: &[QueryLog], g: &Graph) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for (run_id, log) in logs.iter().enumerate() {
        for ev in &log.events {
            w.serialize(QueryLogRow {
                run_id,
                t: ev.t,
                node_label: g.label_of(ev.node),
                observed_nodes: ev.observed_nodes,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads logs written by [`write_query_logs_csv`], grouping rows by run id.
pub fn read_query_logs_csv<R: Read>(reader: R, g: &Graph) -> Result<Vec<QueryLog>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut by_run: std::collections::BTreeMap<usize, Vec<QueryEvent>> =
        std::collections::BTreeMap::new();
    for record in r.deserialize() {
        let row: QueryLogRow = record?;
        let node = g.id_of(&row.node_label).ok_or_else(|| {
            Error::domain(format!("unknown node label '{}' in query log", row.node_label))
        })?;
        by_run.entry(row.run_id).or_default().push(QueryEvent {
            t: row.t,
            node,
            observed_nodes: row.observed_nodes,
        });
    }
    Ok(by_run
        .into_values()
        .map(|mut events| {
            events.sort_by_key(|e| e.t);
            QueryLog { events }
        })
        .collect())
}
