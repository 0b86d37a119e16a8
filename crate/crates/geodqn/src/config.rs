//! Experiment configuration: plain-text `key = value` lines grouped under
//! `[section]` headers. Unknown sections and keys are hard errors so typos in
//! hyperparameter sweeps surface immediately.

use std::fs;
use std::path::{Path, PathBuf};

use crate::deepwalk::WalkConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::gdqn::{GdqnArch, PoolMode};
use crate::graph::Graph;
use crate::synthgen::SynthMode;
use crate::training::{DqnConfig, FeatureMode};

/// A named graph file referenced from the config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphEntry {
    pub name: String,
    pub path: PathBuf,
}

impl GraphEntry {
    /// Reads and parses the referenced edge-list file.
    pub fn load(&self) -> Result<Graph> {
        let text = fs::read_to_string(&self.path)?;
        Graph::parse_edge_list(&text).map_err(|e| match e {
            Error::Parse { line, msg } => Error::Parse {
                line,
                msg: format!("{}: {msg}", self.path.display()),
            },
            other => other,
        })
    }
}

/// Which block-model family to fit on training graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Sbm,
    Ssm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Probability that an episode draws a synthetic graph.
    pub mix_prob: f64,
    pub model: ModelKind,
    pub mode: SynthMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            mix_prob: 0.0,
            model: ModelKind::Sbm,
            mode: SynthMode::OnTheFly,
        }
    }
}

/// Network architecture as configured; the feature dimension comes from the
/// walk settings, so it is not repeated here.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub gcn_widths: Vec<usize>,
    pub clusters: Vec<usize>,
    pub embed_width: usize,
    pub head_widths: Vec<usize>,
    pub pool_mode: PoolMode,
    pub features: FeatureMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let arch = GdqnArch::default();
        ModelConfig {
            gcn_widths: arch.gcn_widths,
            clusters: arch.clusters,
            embed_width: arch.embed_width,
            head_widths: arch.head_widths,
            pool_mode: arch.pool_mode,
            features: FeatureMode::DeepWalk,
        }
    }
}

/// Everything one experiment run needs, loaded from a single config file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: Vec<GraphEntry>,
    pub test: Vec<GraphEntry>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub eval_episodes: usize,
    pub eval_cascades: usize,
    pub change_runs: usize,
    pub env: EnvConfig,
    pub dqn: DqnConfig,
    pub walk: WalkConfig,
    pub model: ModelConfig,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: Vec::new(),
            test: Vec::new(),
            seed: 0,
            output_dir: PathBuf::from("out"),
            eval_episodes: 10,
            eval_cascades: 100,
            change_runs: 30,
            env: EnvConfig::default(),
            dqn: DqnConfig::default(),
            walk: WalkConfig::default(),
            model: ModelConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn value<T: std::str::FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| parse_err(line, format!("bad value '{raw}' for {key}")))
}

fn value_bool(line: usize, key: &str, raw: &str) -> Result<bool> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(parse_err(
            line,
            format!("bad value '{raw}' for {key}, expected true or false"),
        )),
    }
}

/// Comma-separated positive integers; an empty value is an empty list.
fn value_list(line: usize, key: &str, raw: &str) -> Result<Vec<usize>> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|tok| value(line, key, tok.trim()))
        .collect()
}

fn graph_entry(line: usize, key: &str, raw: &str, base: &Path) -> Result<GraphEntry> {
    let Some((name, path)) = raw.split_once(char::is_whitespace) else {
        return Err(parse_err(
            line,
            format!("{key} entries need the form 'NAME PATH', got '{raw}'"),
        ));
    };
    let path = Path::new(path.trim());
    let path = if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    };
    Ok(GraphEntry {
        name: name.to_string(),
        path,
    })
}

impl ExperimentConfig {
    /// The network architecture, with the input width taken from the walk
    /// embedding dimension.
    pub fn arch(&self) -> GdqnArch {
        GdqnArch {
            input_dim: self.walk.dim,
            gcn_widths: self.model.gcn_widths.clone(),
            clusters: self.model.clusters.clone(),
            embed_width: self.model.embed_width,
            head_widths: self.model.head_widths.clone(),
            pool_mode: self.model.pool_mode,
        }
    }

    /// Loads and validates a config file; relative graph paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let cfg = ExperimentConfig::parse(&text, base)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses config text without touching the filesystem.
    pub fn parse(text: &str, base: &Path) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut section: Option<String> = None;
        let mut pregenerate = false;
        let mut pool_size = 5usize;
        for (idx, raw) in text.lines().enumerate() {
            let ln = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return Err(parse_err(ln, format!("unterminated section header '{line}'")));
                };
                let name = name.trim();
                match name {
                    "experiment" | "graphs" | "env" | "dqn" | "walk" | "model" | "synth" => {
                        section = Some(name.to_string());
                    }
                    _ => return Err(parse_err(ln, format!("unknown section [{name}]"))),
                }
                continue;
            }
            let Some((key, val)) = line.split_once('=') else {
                return Err(parse_err(ln, format!("expected 'key = value', got '{line}'")));
            };
            let key = key.trim();
            let val = val.trim();
            let Some(sec) = section.as_deref() else {
                return Err(parse_err(ln, format!("key '{key}' appears before any [section]")));
            };
            match (sec, key) {
                ("experiment", "seed") => cfg.seed = value(ln, key, val)?,
                ("experiment", "output_dir") => cfg.output_dir = PathBuf::from(val),
                ("experiment", "eval_episodes") => cfg.eval_episodes = value(ln, key, val)?,
                ("experiment", "eval_cascades") => cfg.eval_cascades = value(ln, key, val)?,
                ("experiment", "change_runs") => cfg.change_runs = value(ln, key, val)?,

                ("graphs", "train") => cfg.train.push(graph_entry(ln, key, val, base)?),
                ("graphs", "test") => cfg.test.push(graph_entry(ln, key, val, base)?),

                ("env", "query_budget") => cfg.env.query_budget = value(ln, key, val)?,
                ("env", "num_seeds") => cfg.env.num_seeds = value(ln, key, val)?,
                ("env", "activate_budget") => cfg.env.activate_budget = value(ln, key, val)?,
                ("env", "cascade_p") => cfg.env.cascade.p = value(ln, key, val)?,
                ("env", "cascade_sims") => cfg.env.cascade.num_sims = value(ln, key, val)?,
                ("env", "score_sims") => cfg.env.score_sims = value(ln, key, val)?,
                ("env", "clip_reward") => cfg.env.clip_reward = value_bool(ln, key, val)?,
                ("env", "lazy_oracle") => cfg.env.lazy_oracle = value_bool(ln, key, val)?,

                ("dqn", "episodes") => cfg.dqn.episodes = value(ln, key, val)?,
                ("dqn", "gamma") => cfg.dqn.gamma = value(ln, key, val)?,
                ("dqn", "epsilon_start") => cfg.dqn.epsilon_start = value(ln, key, val)?,
                ("dqn", "epsilon_end") => cfg.dqn.epsilon_end = value(ln, key, val)?,
                ("dqn", "epsilon_fraction") => cfg.dqn.epsilon_fraction = value(ln, key, val)?,
                ("dqn", "batch_size") => cfg.dqn.batch_size = value(ln, key, val)?,
                ("dqn", "buffer_capacity") => cfg.dqn.buffer_capacity = value(ln, key, val)?,
                ("dqn", "alpha") => cfg.dqn.alpha = value(ln, key, val)?,
                ("dqn", "beta_start") => cfg.dqn.beta_start = value(ln, key, val)?,
                ("dqn", "beta_end") => cfg.dqn.beta_end = value(ln, key, val)?,
                ("dqn", "target_sync_interval") => {
                    cfg.dqn.target_sync_interval = value(ln, key, val)?
                }
                ("dqn", "learn_start") => cfg.dqn.learn_start = value(ln, key, val)?,
                ("dqn", "ablate_step_reward") => {
                    cfg.dqn.ablate_step_reward = value_bool(ln, key, val)?
                }
                ("dqn", "learning_rate") => cfg.dqn.learning_rate = value(ln, key, val)?,

                ("walk", "walks_per_node") => cfg.walk.walks_per_node = value(ln, key, val)?,
                ("walk", "walk_length") => cfg.walk.walk_length = value(ln, key, val)?,
                ("walk", "window") => cfg.walk.window = value(ln, key, val)?,
                ("walk", "dim") => cfg.walk.dim = value(ln, key, val)?,
                ("walk", "negatives") => cfg.walk.negatives = value(ln, key, val)?,
                ("walk", "epochs") => cfg.walk.epochs = value(ln, key, val)?,
                ("walk", "learning_rate") => cfg.walk.learning_rate = value(ln, key, val)?,
                ("walk", "warm_start") => cfg.walk.warm_start = value_bool(ln, key, val)?,

                ("model", "gcn_widths") => cfg.model.gcn_widths = value_list(ln, key, val)?,
                ("model", "clusters") => cfg.model.clusters = value_list(ln, key, val)?,
                ("model", "embed_width") => cfg.model.embed_width = value(ln, key, val)?,
                ("model", "head_widths") => cfg.model.head_widths = value_list(ln, key, val)?,
                ("model", "pool_mode") => cfg.model.pool_mode = value(ln, key, val)?,
                ("model", "features") => {
                    cfg.model.features = match val {
                        "deepwalk" => FeatureMode::DeepWalk,
                        "constant" => FeatureMode::Constant,
                        _ => {
                            return Err(parse_err(
                                ln,
                                format!("bad value '{val}' for features, expected deepwalk or constant"),
                            ))
                        }
                    }
                }

                ("synth", "mix_prob") => cfg.synth.mix_prob = value(ln, key, val)?,
                ("synth", "model") => {
                    cfg.synth.model = match val {
                        "sbm" => ModelKind::Sbm,
                        "ssm" => ModelKind::Ssm,
                        _ => {
                            return Err(parse_err(
                                ln,
                                format!("bad value '{val}' for model, expected sbm or ssm"),
                            ))
                        }
                    }
                }
                ("synth", "mode") => {
                    pregenerate = match val {
                        "on_the_fly" => false,
                        "pregenerate" => true,
                        _ => {
                            return Err(parse_err(
                                ln,
                                format!("bad value '{val}' for mode, expected on_the_fly or pregenerate"),
                            ))
                        }
                    }
                }
                ("synth", "pool_size") => pool_size = value(ln, key, val)?,

                _ => return Err(parse_err(ln, format!("unknown key '{key}' in [{sec}]"))),
            }
        }
        cfg.synth.mode = if pregenerate {
            SynthMode::Pregenerate(pool_size)
        } else {
            SynthMode::OnTheFly
        };
        Ok(cfg)
    }

    /// Checks semantic constraints: parameter ranges and graph paths.
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.dqn.validate()?;
        self.walk.validate()?;
        self.arch().validate()?;
        if !(0.0..=1.0).contains(&self.synth.mix_prob) {
            return Err(Error::config(format!(
                "mix_prob must lie in [0, 1], got {}",
                self.synth.mix_prob
            )));
        }
        if let SynthMode::Pregenerate(0) = self.synth.mode {
            return Err(Error::config("pool_size must be at least 1"));
        }
        let mut names: Vec<&str> = Vec::new();
        for entry in self.train.iter().chain(&self.test) {
            if !entry.path.is_file() {
                return Err(Error::config(format!(
                    "graph file not found: {}",
                    entry.path.display()
                )));
            }
        }
        for entry in &self.train {
            if names.contains(&entry.name.as_str()) {
                return Err(Error::config(format!(
                    "duplicate train graph name '{}'",
                    entry.name
                )));
            }
            names.push(&entry.name);
        }
        names.clear();
        for entry in &self.test {
            if names.contains(&entry.name.as_str()) {
                return Err(Error::config(format!(
                    "duplicate test graph name '{}'",
                    entry.name
                )));
            }
            names.push(&entry.name);
        }
        Ok(())
    }
}
