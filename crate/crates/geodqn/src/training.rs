//! Episodic deep Q-learning over network-discovery episodes: epsilon-greedy
//! exploration, prioritized replay with importance weighting, a periodically
//! synced target network, and frozen-policy deployment.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Mat, Tape};
use crate::deepwalk::{embed_graph_warm, EmbeddingTable, WalkConfig};
use crate::env::{EnvConfig, EnvState, TrainGraph};
use crate::error::{Error, Result};
use crate::gdqn::{constant_features, GdqnArch, QNetworkParams, StateRepr};
use crate::graph::Graph;
use crate::influence::{estimate_influence, greedy_select, greedy_select_lazy, CascadeConfig, SeedSet};
use crate::replay::PrioritizedReplay;
use crate::rng::derive_rng;
use crate::samplers::{QueryEvent, QueryLog};
use crate::synthgen::GraphSource;

#[derive(Debug, Clone, PartialEq)]
pub struct DqnConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episode budget over which epsilon decays linearly.
    pub epsilon_fraction: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Priority exponent for replay sampling.
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Environment steps between target-network syncs.
    pub target_sync_interval: usize,
    /// Minimum buffer fill before learning starts.
    pub learn_start: usize,
    /// Zero out intermediate rewards, leaving only the terminal one.
    pub ablate_step_reward: bool,
    pub learning_rate: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            episodes: 500,
            gamma: 1.0,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_fraction: 0.5,
            batch_size: 32,
            buffer_capacity: 5000,
            alpha: 0.6,
            beta_start: 0.4,
            beta_end: 1.0,
            target_sync_interval: 100,
            learn_start: 64,
            ablate_step_reward: false,
            learning_rate: 1e-3,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::config("gamma must lie in [0, 1]"));
        }
        for (name, x) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
            ("beta_start", self.beta_start),
            ("beta_end", self.beta_end),
        ] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::config(format!("{name} must lie in [0, 1]")));
            }
        }
        if !(self.epsilon_fraction > 0.0 && self.epsilon_fraction <= 1.0) {
            return Err(Error::config("epsilon_fraction must lie in (0, 1]"));
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 || self.target_sync_interval == 0 {
            return Err(Error::config("batch, capacity, and sync interval must be positive"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(Error::config("buffer_capacity must be at least batch_size"));
        }
        if self.learn_start < self.batch_size {
            return Err(Error::config("learn_start must be at least batch_size"));
        }
        if self.alpha < 0.0 {
            return Err(Error::config("alpha must be nonnegative"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        Ok(())
    }

    /// Linear decay from epsilon_start to epsilon_end over the first
    /// epsilon_fraction of episodes, flat afterwards.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let cut = self.episodes as f64 * self.epsilon_fraction;
        if cut <= 0.0 {
            return self.epsilon_end;
        }
        let progress = (episode as f64 / cut).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * progress
    }

    /// Linear ramp from beta_start to beta_end over the whole run.
    pub fn beta_at(&self, episode: usize) -> f64 {
        let span = self.episodes.saturating_sub(1).max(1) as f64;
        let progress = (episode as f64 / span).min(1.0);
        self.beta_start + (self.beta_end - self.beta_start) * progress
    }
}

/// Which node features feed the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    DeepWalk,
    Constant,
}

/// One stored transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayItem {
    pub state: StateRepr,
    pub action_embedding: Mat,
    pub reward: f64,
    pub next_state: StateRepr,
    /// Candidate embedding rows for the next state; empty when terminal.
    pub next_action_embeddings: Mat,
    pub terminal: bool,
}

/// One completed episode in the reward curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub episode: usize,
    pub graph: String,
    pub scaled_reward: f64,
    pub step_reward_sum: f64,
    pub influence: f64,
}

/// Epsilon-greedy choice over candidates; exploitation takes the argmax with
/// smallest-node-id tie-breaking.
pub fn select_action(
    q: &[f64],
    candidates: &[usize],
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::domain("no candidates to select from"));
    }
    if q.len() != candidates.len() {
        return Err(Error::shape(format!(
            "{} q-values for {} candidates",
            q.len(),
            candidates.len()
        )));
    }
    if rng.gen::<f64>() < epsilon {
        let i = rng.gen_range(0..candidates.len());
        return Ok(candidates[i]);
    }
    let mut best = 0;
    for i in 1..candidates.len() {
        if q[i] > q[best] || (q[i] == q[best] && candidates[i] < candidates[best]) {
            best = i;
        }
    }
    Ok(candidates[best])
}

fn huber(delta: f64) -> f64 {
    if delta.abs() <= 1.0 {
        0.5 * delta * delta
    } else {
        delta.abs() - 0.5
    }
}

pub struct TdResult {
    pub loss: f64,
    pub grads: Vec<Mat>,
    pub td_errors: Vec<f64>,
}

/// One batched TD step: targets from the frozen network, importance-weighted
/// Huber loss on the online network, gradients in canonical matrix order.
pub fn td_update(
    items: &[&ReplayItem],
    weights: &[f64],
    params: &QNetworkParams,
    target: &QNetworkParams,
    gamma: f64,
) -> Result<TdResult> {
    if items.is_empty() {
        return Err(Error::domain("empty TD batch"));
    }
    if items.len() != weights.len() {
        return Err(Error::shape(format!(
            "{} items for {} weights",
            items.len(),
            weights.len()
        )));
    }
    let mut targets = Vec::with_capacity(items.len());
    for item in items {
        let y = if item.terminal || gamma == 0.0 || item.next_action_embeddings.nrows() == 0 {
            item.reward
        } else {
            let qs = target.q_values(&item.next_state, &item.next_action_embeddings)?;
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            item.reward + gamma * best
        };
        targets.push(y);
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let batch = items.len() as f64;
    let mut loss = 0.0;
    let mut td_errors = Vec::with_capacity(items.len());
    let mut pseudo = None;
    for ((item, &y), &w) in items.iter().zip(&targets).zip(weights) {
        let emb = bound.graph_embedding(&mut tape, &item.state)?;
        let q = bound.q_single(&mut tape, emb, &item.action_embedding)?;
        let delta = tape.value(q)[[0, 0]] - y;
        loss += w * huber(delta) / batch;
        td_errors.push(delta);
        // d(loss)/dq = w * clamp(delta, -1, 1) / batch; summing the scaled q
        // vars makes one backward sweep produce the exact loss gradient.
        let coeff = w * delta.clamp(-1.0, 1.0) / batch;
        let term = tape.scale(q, coeff);
        pseudo = Some(match pseudo {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let grads_raw = tape.backward(pseudo.unwrap())?;
    let shapes: Vec<(usize, usize)> = params
        .matrices()
        .iter()
        .map(|m| (m.nrows(), m.ncols()))
        .collect();
    let grads = bound
        .param_vars()
        .into_iter()
        .zip(shapes)
        .map(|(v, shape)| grads_raw.take(v, shape))
        .collect();
    Ok(TdResult {
        loss,
        grads,
        td_errors,
    })
}

/// Online network, target network, replay buffer, and optimizer state.
pub struct Trainer {
    pub(crate) params: QNetworkParams,
    pub(crate) target: QNetworkParams,
    pub(crate) buffer: PrioritizedReplay<ReplayItem>,
    adam: AdamState,
    adam_cfg: AdamConfig,
    pub(crate) dqn: DqnConfig,
    pub(crate) env_cfg: EnvConfig,
    pub(crate) walk_cfg: WalkConfig,
    pub(crate) features: FeatureMode,
    pub(crate) steps: u64,
}

/// Node features and per-candidate embedding rows for one observed graph.
fn featurize(
    g: &Graph,
    walk_cfg: &WalkConfig,
    features: FeatureMode,
    prev: Option<&EmbeddingTable>,
    rng: &mut impl Rng,
) -> Result<(StateRepr, Option<EmbeddingTable>)> {
    match features {
        FeatureMode::DeepWalk => {
            let table = embed_graph_warm(g, walk_cfg, prev, rng)?;
            let state = StateRepr::from_graph(g, &table)?;
            Ok((state, Some(table)))
        }
        FeatureMode::Constant => {
            let state = StateRepr::with_features(g, constant_features(g, walk_cfg.dim)?)?;
            Ok((state, None))
        }
    }
}

fn candidate_rows(
    actions: &[usize],
    table: Option<&EmbeddingTable>,
    dim: usize,
) -> Result<Mat> {
    match table {
        Some(t) => t.rows_for(actions),
        None => Ok(Mat::from_elem(
            (actions.len(), dim),
            1.0 / (dim as f64).sqrt(),
        )),
    }
}

impl Trainer {
    pub fn new(
        arch: GdqnArch,
        env_cfg: EnvConfig,
        dqn: DqnConfig,
        walk_cfg: WalkConfig,
        features: FeatureMode,
        rng: &mut impl Rng,
    ) -> Result<Trainer> {
        env_cfg.validate()?;
        dqn.validate()?;
        walk_cfg.validate()?;
        if arch.input_dim != walk_cfg.dim {
            return Err(Error::config(format!(
                "network input width {} does not match feature dimension {}",
                arch.input_dim, walk_cfg.dim
            )));
        }
        let params = QNetworkParams::init(arch, rng)?;
        let target = params.clone();
        let adam = AdamState::new(params.matrices());
        let adam_cfg = AdamConfig {
            lr: dqn.learning_rate,
            ..AdamConfig::default()
        };
        let buffer = PrioritizedReplay::new(dqn.buffer_capacity)?;
        Ok(Trainer {
            params,
            target,
            buffer,
            adam,
            adam_cfg,
            dqn,
            env_cfg,
            walk_cfg,
            features,
            steps: 0,
        })
    }

    pub fn params(&self) -> &QNetworkParams {
        &self.params
    }

    fn learn(&mut self, beta: f64, rng: &mut impl Rng) -> Result<f64> {
        let batch = self
            .buffer
            .sample(self.dqn.batch_size, self.dqn.alpha, beta, rng)?;
        let items: Vec<&ReplayItem> = batch
            .indices
            .iter()
            .map(|&i| self.buffer.get(i).unwrap())
            .collect();
        let result = td_update(
            &items,
            &batch.weights,
            &self.params,
            &self.target,
            self.dqn.gamma,
        )?;
        adam_step(
            self.params.matrices_mut(),
            &result.grads,
            &mut self.adam,
            &self.adam_cfg,
        )?;
        self.buffer
            .update_priorities(&batch.indices, &result.td_errors)?;
        Ok(result.loss)
    }

    /// Runs one episode: act, store, learn, sync. Returns the curve record
    /// (episode index and graph name filled by the caller).
    pub fn run_episode(
        &mut self,
        tg: &TrainGraph,
        epsilon: f64,
        beta: f64,
        ep_rng: &mut ChaCha8Rng,
        learn_rng: &mut ChaCha8Rng,
    ) -> Result<CurveRecord> {
        let budget = self.env_cfg.query_budget;
        let mut state = EnvState::reset(Arc::clone(&tg.graph), &self.env_cfg, ep_rng)?;
        let (mut repr, mut table) = featurize(
            state.observed(),
            &self.walk_cfg,
            self.features,
            None,
            ep_rng,
        )?;
        let mut step_reward_sum = 0.0;
        let mut outcome: Option<(f64, f64)> = None;
        while !state.is_terminal(budget) {
            let actions = state.action_set();
            let cands = candidate_rows(&actions, table.as_ref(), self.walk_cfg.dim)?;
            let q = self.params.q_values(&repr, &cands)?;
            let chosen = select_action(&q, &actions, epsilon, ep_rng)?;
            let row = actions.iter().position(|&u| u == chosen).unwrap();
            let action_embedding = cands.row(row).to_owned().insert_axis(ndarray::Axis(0));

            let (next_state, step_reward) = state.step(chosen, budget)?;
            step_reward_sum += step_reward;
            let terminal = next_state.is_terminal(budget);
            let (next_repr, next_table) = featurize(
                next_state.observed(),
                &self.walk_cfg,
                self.features,
                table.as_ref(),
                ep_rng,
            )?;
            let next_actions = next_state.action_set();
            let next_cands = if terminal {
                Mat::zeros((0, self.walk_cfg.dim))
            } else {
                candidate_rows(&next_actions, next_table.as_ref(), self.walk_cfg.dim)?
            };
            let reward = if terminal {
                let (influence, scaled) = next_state.finalize(&tg.cache, &self.env_cfg, ep_rng)?;
                outcome = Some((influence, scaled));
                scaled
            } else if self.dqn.ablate_step_reward {
                0.0
            } else {
                step_reward
            };
            self.buffer.push(ReplayItem {
                state: repr,
                action_embedding,
                reward,
                next_state: next_repr.clone(),
                next_action_embeddings: next_cands,
                terminal,
            });
            self.steps += 1;
            if self.buffer.len() >= self.dqn.learn_start {
                self.learn(beta, learn_rng)?;
            }
            if self.steps % self.dqn.target_sync_interval as u64 == 0 {
                self.target = self.params.clone();
            }
            state = next_state;
            repr = next_repr;
            table = next_table;
        }
        let (influence, scaled) = match outcome {
            Some(pair) => pair,
            None => state.finalize(&tg.cache, &self.env_cfg, ep_rng)?,
        };
        Ok(CurveRecord {
            episode: 0,
            graph: tg.name.clone(),
            scaled_reward: scaled,
            step_reward_sum,
            influence,
        })
    }
}

/// Everything `train` needs besides the master seed.
pub struct TrainSetup<'a> {
    pub graphs: Vec<Arc<TrainGraph>>,
    /// Optional mixed real/synthetic supplier; when present it fully decides
    /// each episode's graph.
    pub source: Option<&'a mut GraphSource>,
    pub arch: GdqnArch,
    pub env: EnvConfig,
    pub dqn: DqnConfig,
    pub walk: WalkConfig,
    pub features: FeatureMode,
}

/// Runs the full training loop. Every random stream derives from
/// `master_seed`, so repeated calls are bitwise identical.
pub fn train(setup: TrainSetup, master_seed: u64) -> Result<(QNetworkParams, Vec<CurveRecord>)> {
    let TrainSetup {
        graphs,
        mut source,
        arch,
        env,
        dqn,
        walk,
        features,
    } = setup;
    if graphs.is_empty() && source.is_none() {
        return Err(Error::domain("no training graphs supplied"));
    }
    let mut init_rng = derive_rng(master_seed, "init", 0);
    let mut trainer = Trainer::new(arch, env, dqn.clone(), walk, features, &mut init_rng)?;
    let mut learn_rng = derive_rng(master_seed, "learn", 0);
    let mut pick_rng = derive_rng(master_seed, "graphsel", 0);
    let mut curve = Vec::with_capacity(dqn.episodes);
    for episode in 0..dqn.episodes {
        let tg: Arc<TrainGraph> = match source.as_deref_mut() {
            Some(s) => s.next(&mut pick_rng)?,
            None => Arc::clone(&graphs[pick_rng.gen_range(0..graphs.len())]),
        };
        let mut ep_rng = derive_rng(master_seed, "episode", episode as u64);
        let epsilon = trainer.dqn.epsilon_at(episode);
        let beta = trainer.dqn.beta_at(episode);
        let mut record = trainer.run_episode(&tg, epsilon, beta, &mut ep_rng, &mut learn_rng)?;
        record.episode = episode;
        curve.push(record);
    }
    Ok((trainer.params, curve))
}

/// Result of one frozen-policy deployment.
#[derive(Debug, Clone)]
pub struct Deployment {
    pub discovered: Graph,
    pub log: QueryLog,
    /// Seed nodes that formed the initial observation.
    pub initial_seeds: SeedSet,
    /// Activation seeds chosen on the discovered graph.
    pub seeds: SeedSet,
    pub influence: f64,
}

/// Runs the greedy policy for the full budget on a hidden graph, then picks
/// activation seeds on the discovered graph and scores them on the hidden
/// one.
pub fn deploy(
    params: &QNetworkParams,
    hidden: &Arc<Graph>,
    env_cfg: &EnvConfig,
    walk_cfg: &WalkConfig,
    features: FeatureMode,
    rng: &mut ChaCha8Rng,
) -> Result<Deployment> {
    env_cfg.validate()?;
    walk_cfg.validate()?;
    let budget = env_cfg.query_budget;
    let mut state = EnvState::reset(Arc::clone(hidden), env_cfg, rng)?;
    let initial_seeds = state.seeds().clone();
    let mut table: Option<EmbeddingTable> = None;
    let mut log = QueryLog::default();
    while !state.is_terminal(budget) {
        let (repr, next_table) = featurize(
            state.observed(),
            walk_cfg,
            features,
            table.as_ref(),
            rng,
        )?;
        table = next_table;
        let actions = state.action_set();
        let cands = candidate_rows(&actions, table.as_ref(), walk_cfg.dim)?;
        let q = params.q_values(&repr, &cands)?;
        let chosen = select_action(&q, &actions, 0.0, rng)?;
        let t = state.t();
        let (next_state, _) = state.step(chosen, budget)?;
        log.events.push(QueryEvent {
            t,
            node: chosen,
            observed_nodes: next_state.observed().node_count(),
        });
        state = next_state;
    }
    let discovered = state.observed().clone();
    let seeds = if env_cfg.lazy_oracle {
        greedy_select_lazy(&discovered, env_cfg.activate_budget, &env_cfg.cascade, rng)?
    } else {
        greedy_select(&discovered, env_cfg.activate_budget, &env_cfg.cascade, rng)?
    };
    let scoring = CascadeConfig {
        p: env_cfg.cascade.p,
        num_sims: env_cfg.score_sims,
    };
    let influence = estimate_influence(hidden, &seeds, &scoring, rng)?;
    Ok(Deployment {
        discovered,
        log,
        initial_seeds,
        seeds,
        influence,
    })
}

/// Writes a reward curve as CSV, optionally preceded by a `# variant:` line.
pub fn write_curve_csv<W: Write>(
    mut w: W,
    variant: Option<&str>,
    records: &[CurveRecord],
) -> Result<()> {
    if let Some(v) = variant {
        writeln!(w, "# variant: {v}")?;
    }
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a curve CSV written by [`write_curve_csv`], returning the records
/// and the variant tag when one is present.
pub fn read_curve_csv<R: Read>(mut r: R) -> Result<(Vec<CurveRecord>, Option<String>)> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let mut variant = None;
    let body = match text.strip_prefix("# variant: ") {
        Some(rest) => {
            let (tag, remainder) = rest.split_once('\n').unwrap_or((rest, ""));
            variant = Some(tag.trim().to_string());
            remainder
        }
        None => &text,
    };
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let mut records = Vec::new();
    for row in rdr.deserialize() {
        records.push(row?);
    }
    Ok((records, variant))
}
