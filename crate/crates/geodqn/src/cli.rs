//! Command-line entry point: six subcommands over one config file, with
//! deterministic outputs under a fixed seed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};

use crate::config::{ExperimentConfig, GraphEntry, ModelKind};
use crate::env::TrainGraph;
use crate::error::{Error, Result};
use crate::gdqn::QNetworkParams;
use crate::graph::Graph;
use crate::harness::{
    analyze_queries, load_or_compute_baselines, run_ablation, run_eval, write_centrality_csv,
    write_eval_csv, AblationSetup, EvalSetup, Method,
};
use crate::rng::derive_rng;
use crate::samplers::{read_query_logs_csv, write_query_logs_csv};
use crate::synthgen::{fit_sbm, fit_ssm, louvain, FittedModel, GraphSource};
use crate::training::{train, write_curve_csv, TrainSetup};

#[derive(Parser)]
#[command(
    name = "geodqn",
    version,
    about = "Learn and evaluate network-discovery policies for influence maximization"
)]
struct Cli {
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master random seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy on the configured training graphs.
    Train,
    /// Evaluate a discovery method on the configured test graphs.
    Eval {
        /// One of gdqn, change, snowball, recommend, random, h1, h2.
        #[arg(long)]
        method: Method,
        /// Trained parameters for the gdqn method; defaults to the
        /// checkpoint `train` writes.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Precompute reward anchors for every configured graph.
    Baselines,
    /// Fit block models on the training graphs and sample one graph each.
    Synth,
    /// Train the full model and the three ablation variants side by side.
    Ablate,
    /// Profile queried nodes from logged runs against a hidden network.
    Analyze {
        /// Query-log CSV written by `eval`.
        #[arg(long)]
        logs: PathBuf,
        /// Name of the hidden network the logs were recorded on.
        #[arg(long)]
        network: String,
    },
}

/// Runs the CLI against explicit arguments and returns the process exit
/// code: 0 on success, 1 on user error, 2 on internal error.
pub fn cli_main<I: IntoIterator<Item = String>>(argv: I) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_internal() {
                2
            } else {
                1
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let Some(config_path) = cli.config else {
        return Err(Error::config("a config file is required (--config PATH)"));
    };
    let mut cfg = ExperimentConfig::load(&config_path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    std::fs::create_dir_all(&cfg.output_dir)?;
    match cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Eval { method, checkpoint } => cmd_eval(&cfg, method, checkpoint),
        Command::Baselines => cmd_baselines(&cfg),
        Command::Synth => cmd_synth(&cfg),
        Command::Ablate => cmd_ablate(&cfg),
        Command::Analyze { logs, network } => cmd_analyze(&cfg, &logs, &network),
    }
}

fn load_entries(entries: &[GraphEntry]) -> Result<Vec<(String, Arc<Graph>)>> {
    entries
        .iter()
        .map(|e| Ok((e.name.clone(), Arc::new(e.load()?))))
        .collect()
}

fn baselines_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("baselines.csv")
}

fn graphs_with_baselines(
    cfg: &ExperimentConfig,
    entries: &[GraphEntry],
) -> Result<Vec<Arc<TrainGraph>>> {
    let loaded = load_entries(entries)?;
    load_or_compute_baselines(
        &loaded,
        &cfg.env,
        cfg.change_runs,
        cfg.seed,
        &baselines_path(cfg),
    )
}

fn fit_models(cfg: &ExperimentConfig, graphs: &[Arc<TrainGraph>]) -> Result<Vec<FittedModel>> {
    graphs
        .iter()
        .enumerate()
        .map(|(idx, tg)| {
            let mut rng = derive_rng(cfg.seed, "louvain", idx as u64);
            let part = louvain(&tg.graph, &mut rng)?;
            Ok(match cfg.synth.model {
                ModelKind::Sbm => FittedModel::Sbm(fit_sbm(&tg.graph, &part)?),
                ModelKind::Ssm => FittedModel::Ssm(fit_ssm(&tg.graph, &part)?),
            })
        })
        .collect()
}

fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.train.is_empty() {
        return Err(Error::config("the config lists no training graphs"));
    }
    let graphs = graphs_with_baselines(cfg, &cfg.train)?;
    let mut source = if cfg.synth.mix_prob > 0.0 {
        let models = fit_models(cfg, &graphs)?;
        Some(GraphSource::new(
            graphs.clone(),
            models,
            cfg.synth.mix_prob,
            cfg.synth.mode,
            cfg.env.clone(),
            cfg.change_runs,
            cfg.seed,
        )?)
    } else {
        None
    };
    let (params, curve) = train(
        TrainSetup {
            graphs,
            source: source.as_mut(),
            arch: cfg.arch(),
            env: cfg.env.clone(),
            dqn: cfg.dqn.clone(),
            walk: cfg.walk,
            features: cfg.model.features,
        },
        cfg.seed,
    )?;
    let ckpt = cfg.output_dir.join("checkpoint.gdqn");
    params.save(&ckpt)?;
    let curve_path = cfg.output_dir.join("curve.csv");
    write_curve_csv(std::fs::File::create(&curve_path)?, None, &curve)?;
    let trailing = curve.iter().rev().take(100).collect::<Vec<_>>();
    let mean = if trailing.is_empty() {
        0.0
    } else {
        trailing.iter().map(|r| r.scaled_reward).sum::<f64>() / trailing.len() as f64
    };
    println!(
        "trained {} episodes; trailing mean scaled reward {mean:.4}",
        curve.len()
    );
    println!("wrote {} and {}", ckpt.display(), curve_path.display());
    Ok(())
}

fn cmd_eval(cfg: &ExperimentConfig, method: Method, checkpoint: Option<PathBuf>) -> Result<()> {
    if cfg.test.is_empty() {
        return Err(Error::config("the config lists no test graphs"));
    }
    let networks = graphs_with_baselines(cfg, &cfg.test)?;
    let params = if method == Method::Gdqn {
        let path = checkpoint.unwrap_or_else(|| cfg.output_dir.join("checkpoint.gdqn"));
        if !path.is_file() {
            return Err(Error::config(format!(
                "checkpoint not found: {} (train first or pass --checkpoint)",
                path.display()
            )));
        }
        Some(QNetworkParams::load(&path)?)
    } else {
        None
    };
    let setup = EvalSetup {
        networks: &networks,
        env: cfg.env.clone(),
        walk: cfg.walk,
        features: cfg.model.features,
        eval_episodes: cfg.eval_episodes,
        eval_cascades: cfg.eval_cascades,
        seed: cfg.seed,
    };
    let outcome = run_eval(&setup, method, params.as_ref())?;
    let eval_path = cfg.output_dir.join(format!("eval_{method}.csv"));
    write_eval_csv(std::fs::File::create(&eval_path)?, &outcome.records)?;
    for ((name, logs), tg) in outcome.logs.iter().zip(&networks) {
        let log_path = cfg.output_dir.join(format!("logs_{name}_{method}.csv"));
        write_query_logs_csv(std::fs::File::create(&log_path)?, logs, &tg.graph)?;
    }
    for r in &outcome.records {
        println!(
            "{}: influence {:.3} +/- {:.3}, improvement {:.2}%",
            r.network, r.influence_mean, r.influence_std, r.improve_percent
        );
    }
    println!("wrote {}", eval_path.display());
    Ok(())
}

fn cmd_baselines(cfg: &ExperimentConfig) -> Result<()> {
    let mut entries = cfg.train.clone();
    entries.extend(cfg.test.iter().cloned());
    if entries.is_empty() {
        return Err(Error::config("the config lists no graphs"));
    }
    let graphs = graphs_with_baselines(cfg, &entries)?;
    println!(
        "anchored {} graphs in {}",
        graphs.len(),
        baselines_path(cfg).display()
    );
    Ok(())
}

fn cmd_synth(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.train.is_empty() {
        return Err(Error::config("the config lists no training graphs"));
    }
    let loaded = load_entries(&cfg.train)?;
    for (idx, (name, graph)) in loaded.iter().enumerate() {
        let mut rng = derive_rng(cfg.seed, "louvain", idx as u64);
        let part = louvain(graph, &mut rng)?;
        let model = match cfg.synth.model {
            ModelKind::Sbm => FittedModel::Sbm(fit_sbm(graph, &part)?),
            ModelKind::Ssm => FittedModel::Ssm(fit_ssm(graph, &part)?),
        };
        let model_path = cfg.output_dir.join(format!("model_{name}.txt"));
        std::fs::write(&model_path, model.to_text())?;
        let mut sample_rng = derive_rng(cfg.seed, "synthsample", idx as u64);
        let sample = model.sample(&mut sample_rng)?;
        let sample_path = cfg.output_dir.join(format!("synth_{name}.edges"));
        std::fs::write(&sample_path, sample.to_edge_list_string())?;
        println!(
            "{name}: {} communities; wrote {} and {}",
            part.count(),
            model_path.display(),
            sample_path.display()
        );
    }
    Ok(())
}

fn cmd_ablate(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.train.is_empty() {
        return Err(Error::config("the config lists no training graphs"));
    }
    let graphs = graphs_with_baselines(cfg, &cfg.train)?;
    let setup = AblationSetup {
        graphs,
        arch: cfg.arch(),
        env: cfg.env.clone(),
        dqn: cfg.dqn.clone(),
        walk: cfg.walk,
        seed: cfg.seed,
    };
    let curves = run_ablation(&setup, &cfg.output_dir)?;
    for (variant, curve) in &curves {
        let mean = curve.iter().map(|r| r.scaled_reward).sum::<f64>() / curve.len().max(1) as f64;
        println!("{variant}: {} episodes, mean scaled reward {mean:.4}", curve.len());
    }
    Ok(())
}

fn cmd_analyze(cfg: &ExperimentConfig, logs_path: &Path, network: &str) -> Result<()> {
    let entry = cfg
        .test
        .iter()
        .chain(&cfg.train)
        .find(|e| e.name == network)
        .ok_or_else(|| {
            Error::config(format!("network '{network}' is not in the config's graph lists"))
        })?;
    let hidden = entry.load()?;
    let logs = read_query_logs_csv(std::fs::File::open(logs_path)?, &hidden)?;
    let rows = analyze_queries(&hidden, &logs)?;
    let out_path = cfg.output_dir.join(format!("centrality_{network}.csv"));
    write_centrality_csv(std::fs::File::create(&out_path)?, &rows)?;
    println!("analyzed {} runs; wrote {}", logs.len(), out_path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(args: &[&str]) -> Vec<String> {
        args.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn test_unknown_subcommand_is_user_error() {
        assert_eq!(cli_main(argv(&["geodqn", "frobnicate"])), 1);
    }

    #[test]
    fn test_help_exits_zero() {
        assert_eq!(cli_main(argv(&["geodqn", "--help"])), 0);
        assert_eq!(cli_main(argv(&["geodqn", "train", "--help"])), 0);
    }

    #[test]
    fn test_missing_config_is_user_error() {
        assert_eq!(cli_main(argv(&["geodqn", "train"])), 1);
    }

    #[test]
    fn test_nonexistent_config_is_user_error() {
        assert_eq!(
            cli_main(argv(&["geodqn", "train", "--config", "/nonexistent/run.cfg"])),
            1
        );
    }

    #[test]
    fn test_bad_method_is_user_error() {
        assert_eq!(
            cli_main(argv(&["geodqn", "eval", "--method", "celebrity"])),
            1
        );
    }
}
