//! Experiment orchestration: method evaluation over test networks, the
//! four-variant ablation runner, queried-node centrality analysis, baseline
//! persistence, and the CSV tables they emit.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::deepwalk::WalkConfig;
use crate::env::{
    precompute_baselines, read_baselines_csv, sample_seed_set, write_baselines_csv, BaselineRow,
    EnvConfig, TrainGraph,
};
use crate::error::{Error, Result};
use crate::gdqn::{GdqnArch, PoolMode, QNetworkParams};
use crate::graph::Graph;
use crate::influence::{estimate_influence, greedy_select, greedy_select_lazy, CascadeConfig};
use crate::rng::derive_rng;
use crate::samplers::{
    sample_change, sample_h1, sample_h2, sample_random_greedy, sample_recommend, sample_snowball,
    QueryLog,
};
use crate::training::{deploy, train, CurveRecord, DqnConfig, FeatureMode, TrainSetup};

/// Fraction of the CHANGE-to-OPT gap closed, in percent.
pub fn improve_percent(influence: f64, change: f64, opt: f64) -> Result<f64> {
    if opt == change {
        return Err(Error::Metric(format!(
            "improvement undefined when OPT equals CHANGE ({opt})"
        )));
    }
    Ok(100.0 * (influence - change) / (opt - change))
}

/// A discovery policy the harness can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Gdqn,
    Change,
    Snowball,
    Recommend,
    Random,
    H1,
    H2,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Gdqn,
        Method::Change,
        Method::Snowball,
        Method::Recommend,
        Method::Random,
        Method::H1,
        Method::H2,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Gdqn => "gdqn",
            Method::Change => "change",
            Method::Snowball => "snowball",
            Method::Recommend => "recommend",
            Method::Random => "random",
            Method::H1 => "h1",
            Method::H2 => "h2",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown method '{s}', expected one of gdqn, change, snowball, recommend, random, h1, h2"
                ))
            })
    }
}

/// One row of the evaluation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub network: String,
    pub method: String,
    pub influence_mean: f64,
    pub influence_std: f64,
    pub improve_percent: f64,
}

pub fn write_eval_csv<W: Write>(writer: W, records: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv<R: Read>(reader: R) -> Result<Vec<EvalRecord>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in r.deserialize() {
        out.push(record?);
    }
    Ok(out)
}

/// Everything evaluation needs besides the method itself.
pub struct EvalSetup<'a> {
    pub networks: &'a [Arc<TrainGraph>],
    pub env: EnvConfig,
    pub walk: WalkConfig,
    pub features: FeatureMode,
    pub eval_episodes: usize,
    pub eval_cascades: usize,
    pub seed: u64,
}

/// Evaluation table plus the per-network query logs behind it.
pub struct EvalOutcome {
    pub records: Vec<EvalRecord>,
    pub logs: Vec<(String, Vec<QueryLog>)>,
}

fn sampler_episode(
    method: Method,
    tg: &TrainGraph,
    env: &EnvConfig,
    eval_cascades: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(f64, QueryLog)> {
    let seeds = sample_seed_set(&tg.graph, env.num_seeds, rng)?;
    let budget = env.query_budget;
    let (discovered, log) = match method {
        Method::Change => sample_change(&tg.graph, &seeds, budget, rng)?,
        Method::Snowball => sample_snowball(&tg.graph, &seeds, budget, rng)?,
        Method::Recommend => sample_recommend(&tg.graph, &seeds, budget, rng)?,
        Method::Random => sample_random_greedy(&tg.graph, &seeds, budget, rng)?,
        Method::H1 => sample_h1(&tg.graph, &seeds, budget, rng)?,
        Method::H2 => sample_h2(&tg.graph, &seeds, budget, rng)?,
        Method::Gdqn => {
            return Err(Error::state(
                "sampler_episode cannot run the learned policy".to_string(),
            ))
        }
    };
    let chosen = if env.lazy_oracle {
        greedy_select_lazy(&discovered, env.activate_budget, &env.cascade, rng)?
    } else {
        greedy_select(&discovered, env.activate_budget, &env.cascade, rng)?
    };
    let scoring = CascadeConfig {
        p: env.cascade.p,
        num_sims: eval_cascades,
    };
    let influence = estimate_influence(&tg.graph, &chosen, &scoring, rng)?;
    Ok((influence, log))
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Evaluates one method over every test network: `eval_episodes` independent
/// discovery runs per network, each scored with `eval_cascades` cascades on
/// the hidden graph, then aggregated against the network's cached anchors.
pub fn run_eval(
    setup: &EvalSetup,
    method: Method,
    params: Option<&QNetworkParams>,
) -> Result<EvalOutcome> {
    if setup.eval_episodes == 0 {
        return Err(Error::config("eval_episodes must be at least 1"));
    }
    if setup.eval_cascades == 0 {
        return Err(Error::config("eval_cascades must be at least 1"));
    }
    if method == Method::Gdqn && params.is_none() {
        return Err(Error::config(
            "the gdqn method needs a trained checkpoint",
        ));
    }
    let mut records = Vec::with_capacity(setup.networks.len());
    let mut all_logs = Vec::with_capacity(setup.networks.len());
    for (ni, tg) in setup.networks.iter().enumerate() {
        let mut influences = Vec::with_capacity(setup.eval_episodes);
        let mut logs = Vec::with_capacity(setup.eval_episodes);
        for e in 0..setup.eval_episodes {
            let idx = ni as u64 * setup.eval_episodes as u64 + e as u64;
            let mut rng = derive_rng(setup.seed, "eval", idx);
            let (influence, log) = match method {
                Method::Gdqn => {
                    let scored_env = EnvConfig {
                        score_sims: setup.eval_cascades,
                        ..setup.env.clone()
                    };
                    let d = deploy(
                        params.unwrap(),
                        &tg.graph,
                        &scored_env,
                        &setup.walk,
                        setup.features,
                        &mut rng,
                    )?;
                    (d.influence, d.log)
                }
                _ => sampler_episode(method, tg, &setup.env, setup.eval_cascades, &mut rng)?,
            };
            influences.push(influence);
            logs.push(log);
        }
        let (mean, std) = mean_std(&influences);
        let improve = improve_percent(mean, tg.cache.change_value, tg.cache.opt_value)?;
        records.push(EvalRecord {
            network: tg.name.clone(),
            method: method.to_string(),
            influence_mean: mean,
            influence_std: std,
            improve_percent: improve,
        });
        all_logs.push((tg.name.clone(), logs));
    }
    Ok(EvalOutcome {
        records,
        logs: all_logs,
    })
}

/// The four ablation variants, in emission order.
pub const ABLATION_VARIANTS: [&str; 4] = ["full", "no_step_reward", "sum_pool", "const_features"];

/// Shared inputs for one ablation sweep.
pub struct AblationSetup {
    pub graphs: Vec<Arc<TrainGraph>>,
    pub arch: GdqnArch,
    pub env: EnvConfig,
    pub dqn: DqnConfig,
    pub walk: WalkConfig,
    pub seed: u64,
}

/// Trains the full model and the three ablations under one master seed and
/// writes `curve_<variant>.csv` files into `out_dir`. The sum-pool variant
/// drops the pooling hierarchy, so its graph embedding width becomes the last
/// GCN width.
pub fn run_ablation(setup: &AblationSetup, out_dir: &Path) -> Result<Vec<(String, Vec<CurveRecord>)>> {
    std::fs::create_dir_all(out_dir)?;
    let mut out = Vec::with_capacity(ABLATION_VARIANTS.len());
    for &variant in &ABLATION_VARIANTS {
        let mut arch = setup.arch.clone();
        let mut dqn = setup.dqn.clone();
        let mut features = FeatureMode::DeepWalk;
        match variant {
            "full" => {}
            "no_step_reward" => dqn.ablate_step_reward = true,
            "sum_pool" => {
                arch.pool_mode = PoolMode::SumPool;
                arch.clusters = Vec::new();
                arch.embed_width = *arch.gcn_widths.last().unwrap_or(&arch.input_dim);
            }
            "const_features" => features = FeatureMode::Constant,
            _ => unreachable!(),
        }
        let (_, curve) = train(
            TrainSetup {
                graphs: setup.graphs.clone(),
                source: None,
                arch,
                env: setup.env.clone(),
                dqn,
                walk: setup.walk,
                features,
            },
            setup.seed,
        )?;
        let path = out_dir.join(format!("curve_{variant}.csv"));
        let file = std::fs::File::create(&path)?;
        crate::training::write_curve_csv(file, Some(variant), &curve)?;
        out.push((variant.to_string(), curve));
    }
    Ok(out)
}

/// Mean centrality of nodes queried at each timestep; `t = -1` is the
/// whole-graph reference row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityRow {
    pub t: i64,
    pub mean_betweenness: f64,
    pub mean_degree_centrality: f64,
    pub n_samples: usize,
}

/// Profiles the queried nodes of many runs against the hidden graph's true
/// betweenness and degree centrality, per timestep.
pub fn analyze_queries(hidden: &Graph, logs: &[QueryLog]) -> Result<Vec<CentralityRow>> {
    let bc = hidden.betweenness_centrality();
    let dc = hidden.degree_centrality()?;
    let nodes = hidden.nodes();
    let n = nodes.len() as f64;
    let mut rows = vec![CentralityRow {
        t: -1,
        mean_betweenness: nodes.iter().map(|&u| bc[u]).sum::<f64>() / n,
        mean_degree_centrality: nodes.iter().map(|&u| dc[u]).sum::<f64>() / n,
        n_samples: nodes.len(),
    }];
    let mut by_t: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
    for log in logs {
        for ev in &log.events {
            if !hidden.contains(ev.node) {
                return Err(Error::domain(format!(
                    "queried node {} is not in the hidden graph",
                    ev.node
                )));
            }
            by_t.entry(ev.t).or_default().push(ev.node);
        }
    }
    for (t, queried) in by_t {
        let k = queried.len() as f64;
        rows.push(CentralityRow {
            t: t as i64,
            mean_betweenness: queried.iter().map(|&u| bc[u]).sum::<f64>() / k,
            mean_degree_centrality: queried.iter().map(|&u| dc[u]).sum::<f64>() / k,
            n_samples: queried.len(),
        });
    }
    Ok(rows)
}

pub fn write_centrality_csv<W: Write>(writer: W, rows: &[CentralityRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_centrality_csv<R: Read>(reader: R) -> Result<Vec<CentralityRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for record in r.deserialize() {
        out.push(record?);
    }
    Ok(out)
}

/// Builds per-graph reward anchors, reusing rows from `csv_path` by graph
/// name when the file exists and persisting the merged table afterwards.
pub fn load_or_compute_baselines(
    entries: &[(String, Arc<Graph>)],
    env: &EnvConfig,
    change_runs: usize,
    seed: u64,
    csv_path: &Path,
) -> Result<Vec<Arc<TrainGraph>>> {
    let mut known: std::collections::BTreeMap<String, BaselineRow> =
        std::collections::BTreeMap::new();
    if csv_path.is_file() {
        let file = std::fs::File::open(csv_path)?;
        for row in read_baselines_csv(file)? {
            known.insert(row.graph_name.clone(), row);
        }
    }
    let mut graphs = Vec::with_capacity(entries.len());
    let mut computed_new = false;
    for (idx, (name, graph)) in entries.iter().enumerate() {
        let row = match known.get(name) {
            Some(row) => row.clone(),
            None => {
                let mut rng = derive_rng(seed, "baseline", idx as u64);
                let cache = precompute_baselines(graph, env, change_runs, &mut rng)?;
                let row = BaselineRow {
                    graph_name: name.clone(),
                    change_value: cache.change_value,
                    opt_value: cache.opt_value,
                    change_runs,
                    oracle_sims: env.cascade.num_sims,
                    rng_seed: seed,
                };
                known.insert(name.clone(), row.clone());
                computed_new = true;
                row
            }
        };
        graphs.push(Arc::new(TrainGraph {
            name: name.clone(),
            graph: Arc::clone(graph),
            cache: row.cache(),
        }));
    }
    if computed_new {
        if let Some(parent) = csv_path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let rows: Vec<BaselineRow> = known.into_values().collect();
        let file = std::fs::File::create(csv_path)?;
        write_baselines_csv(file, &rows)?;
    }
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::BaselineCache;

    fn tiny_env() -> EnvConfig {
        EnvConfig {
            query_budget: 2,
            num_seeds: 2,
            activate_budget: 2,
            cascade: CascadeConfig {
                p: 0.1,
                num_sims: 20,
            },
            score_sims: 20,
            clip_reward: false,
            lazy_oracle: false,
        }
    }

    fn tiny_walk() -> WalkConfig {
        WalkConfig {
            walks_per_node: 2,
            walk_length: 5,
            window: 2,
            dim: 4,
            negatives: 2,
            epochs: 1,
            learning_rate: 0.025,
            warm_start: false,
        }
    }

    fn tiny_graph(name: &str, seed: u64) -> Arc<TrainGraph> {
        let g = Arc::new(Graph::from_edges(
            8,
            &[(0, 1), (0, 2), (0, 3), (3, 4), (4, 5), (5, 6), (6, 7), (1, 7)],
        ));
        let mut rng = derive_rng(seed, "baseline", 0);
        let cache = precompute_baselines(&g, &tiny_env(), 2, &mut rng).unwrap();
        Arc::new(TrainGraph {
            name: name.to_string(),
            graph: g,
            cache,
        })
    }

    #[test]
    fn test_improve_percent_values() {
        let x = improve_percent(18.95, 17.4, 25.2).unwrap();
        assert!((x - 19.87).abs() < 0.01, "got {x}");
        assert_eq!(improve_percent(25.2, 17.4, 25.2).unwrap(), 100.0);
        assert_eq!(improve_percent(17.4, 17.4, 25.2).unwrap(), 0.0);
        assert!(matches!(
            improve_percent(5.0, 3.0, 3.0),
            Err(Error::Metric(_))
        ));
    }

    #[test]
    fn test_method_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!(matches!(
            "celebrity".parse::<Method>(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn test_eval_csv_round_trip() {
        let records = vec![EvalRecord {
            network: "net".to_string(),
            method: "change".to_string(),
            influence_mean: 4.5,
            influence_std: 0.25,
            improve_percent: 12.5,
        }];
        let mut buf = Vec::new();
        write_eval_csv(&mut buf, &records).unwrap();
        assert_eq!(read_eval_csv(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn test_run_eval_baseline_methods() {
        let networks = vec![tiny_graph("alpha", 1), tiny_graph("beta", 2)];
        let setup = EvalSetup {
            networks: &networks,
            env: tiny_env(),
            walk: tiny_walk(),
            features: FeatureMode::DeepWalk,
            eval_episodes: 3,
            eval_cascades: 25,
            seed: 77,
        };
        for method in [Method::Change, Method::Random, Method::H2] {
            let a = run_eval(&setup, method, None).unwrap();
            let b = run_eval(&setup, method, None).unwrap();
            assert_eq!(a.records, b.records);
            assert_eq!(a.records.len(), 2);
            for r in &a.records {
                assert!(r.influence_mean >= 0.0);
                assert_eq!(r.method, method.to_string());
            }
            for (_, logs) in &a.logs {
                assert_eq!(logs.len(), 3);
                for log in logs {
                    assert!(log.len() <= tiny_env().query_budget);
                }
            }
        }
        assert!(matches!(
            run_eval(&setup, Method::Gdqn, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn test_run_eval_gdqn_uses_checkpoint() {
        let networks = vec![tiny_graph("alpha", 3)];
        let setup = EvalSetup {
            networks: &networks,
            env: tiny_env(),
            walk: tiny_walk(),
            features: FeatureMode::DeepWalk,
            eval_episodes: 2,
            eval_cascades: 25,
            seed: 5,
        };
        let arch = GdqnArch {
            input_dim: 4,
            gcn_widths: vec![4],
            clusters: vec![1],
            embed_width: 4,
            head_widths: vec![4],
            pool_mode: PoolMode::DiffPool,
        };
        let mut rng = derive_rng(5, "init", 0);
        let params = QNetworkParams::init(arch, &mut rng).unwrap();
        let outcome = run_eval(&setup, Method::Gdqn, Some(&params)).unwrap();
        assert_eq!(outcome.records.len(), 1);
        assert_eq!(outcome.records[0].method, "gdqn");
        assert!(outcome.records[0].influence_mean > 0.0);
    }

    #[test]
    fn test_run_ablation_writes_variant_curves() {
        let dir = tempfile::tempdir().unwrap();
        let setup = AblationSetup {
            graphs: vec![tiny_graph("alpha", 4)],
            arch: GdqnArch {
                input_dim: 4,
                gcn_widths: vec![4],
                clusters: vec![1],
                embed_width: 4,
                head_widths: vec![4],
                pool_mode: PoolMode::DiffPool,
            },
            env: tiny_env(),
            dqn: DqnConfig {
                episodes: 3,
                batch_size: 4,
                buffer_capacity: 64,
                learn_start: 4,
                target_sync_interval: 3,
                ..DqnConfig::default()
            },
            walk: tiny_walk(),
            seed: 21,
        };
        let curves = run_ablation(&setup, dir.path()).unwrap();
        assert_eq!(curves.len(), 4);
        for (variant, curve) in &curves {
            assert_eq!(curve.len(), 3);
            let path = dir.path().join(format!("curve_{variant}.csv"));
            let text = std::fs::read_to_string(&path).unwrap();
            assert!(text.starts_with(&format!("# variant: {variant}")));
            let (back, tag) =
                crate::training::read_curve_csv(text.as_bytes()).unwrap();
            assert_eq!(&back, curve);
            assert_eq!(tag.as_deref(), Some(variant.as_str()));
        }
    }

    #[test]
    fn test_analyze_queries_path_fixture() {
        let hidden = Graph::from_edges(3, &[(0, 1), (1, 2)]);
        let mut log = QueryLog::default();
        log.events.push(crate::samplers::QueryEvent {
            t: 0,
            node: 1,
            observed_nodes: 3,
        });
        let rows = analyze_queries(&hidden, &[log]).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].t, -1);
        assert_eq!(rows[0].n_samples, 3);
        assert!((rows[0].mean_betweenness - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rows[1].t, 0);
        assert_eq!(rows[1].n_samples, 1);
        assert!((rows[1].mean_betweenness - 1.0).abs() < 1e-12);
        assert!((rows[1].mean_degree_centrality - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_analyze_queries_empty_and_star() {
        let hidden = Graph::from_edges(4, &[(0, 1), (0, 2), (0, 3)]);
        let rows = analyze_queries(&hidden, &[]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].t, -1);

        let mut logs = Vec::new();
        for _ in 0..3 {
            let mut log = QueryLog::default();
            for t in 0..2 {
                log.events.push(crate::samplers::QueryEvent {
                    t,
                    node: 0,
                    observed_nodes: 4,
                });
            }
            logs.push(log);
        }
        let rows = analyze_queries(&hidden, &logs).unwrap();
        let bc = hidden.betweenness_centrality();
        for row in rows.iter().filter(|r| r.t >= 0) {
            assert_eq!(row.n_samples, 3);
            assert!((row.mean_betweenness - bc[0]).abs() < 1e-12);
            assert!((row.mean_degree_centrality - 1.0).abs() < 1e-12);
        }

        let mut bad = QueryLog::default();
        bad.events.push(crate::samplers::QueryEvent {
            t: 0,
            node: 9,
            observed_nodes: 1,
        });
        assert!(matches!(
            analyze_queries(&hidden, &[bad]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn test_centrality_csv_round_trip() {
        let rows = vec![
            CentralityRow {
                t: -1,
                mean_betweenness: 0.5,
                mean_degree_centrality: 0.25,
                n_samples: 8,
            },
            CentralityRow {
                t: 0,
                mean_betweenness: 1.0,
                mean_degree_centrality: 0.75,
                n_samples: 3,
            },
        ];
        let mut buf = Vec::new();
        write_centrality_csv(&mut buf, &rows).unwrap();
        assert_eq!(read_centrality_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn test_baseline_cache_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("baselines.csv");
        let g = Arc::new(Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]));
        let entries = vec![("toy".to_string(), Arc::clone(&g))];

        let first = load_or_compute_baselines(&entries, &tiny_env(), 2, 9, &csv_path).unwrap();
        assert!(csv_path.is_file());

        let doctored = BaselineRow {
            graph_name: "toy".to_string(),
            change_value: 999.0,
            opt_value: 1000.0,
            change_runs: 2,
            oracle_sims: 20,
            rng_seed: 9,
        };
        let file = std::fs::File::create(&csv_path).unwrap();
        write_baselines_csv(file, &[doctored]).unwrap();

        let second = load_or_compute_baselines(&entries, &tiny_env(), 2, 9, &csv_path).unwrap();
        assert_eq!(second[0].cache.change_value, 999.0);
        assert_ne!(
            first[0].cache.change_value,
            second[0].cache.change_value
        );
        let _ = BaselineCache {
            change_value: 0.0,
            opt_value: 0.0,
        };

        let entries2 = vec![
            ("toy".to_string(), Arc::clone(&g)),
            ("toy2".to_string(), g),
        ];
        let third = load_or_compute_baselines(&entries2, &tiny_env(), 2, 9, &csv_path).unwrap();
        assert_eq!(third[0].cache.change_value, 999.0);
        assert!(third[1].cache.change_value < 100.0);
        let file = std::fs::File::open(&csv_path).unwrap();
        let rows = read_baselines_csv(file).unwrap();
        assert_eq!(rows.len(), 2);
    }
}
