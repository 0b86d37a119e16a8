//! Random-walk node embeddings: uniform walks plus skip-gram training with
//! negative sampling. Embeddings are recomputed per discovered graph, so a
//! node's vector reflects its role in the current observation.

use std::io::{BufRead, BufReader, Read, Write};

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::rng::derive_rng;

/// Floor of the linearly decaying learning rate.
pub const MIN_LEARNING_RATE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub window: usize,
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Reuse the previous step's vectors as initialization instead of
    /// retraining from scratch.
    pub warm_start: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            walks_per_node: 10,
            walk_length: 40,
            window: 5,
            dim: 32,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            warm_start: false,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.walks_per_node == 0
            || self.walk_length == 0
            || self.window == 0
            || self.dim == 0
            || self.negatives == 0
        {
            return Err(Error::domain(
                "walk parameters must all be positive".to_string(),
            ));
        }
        if self.window >= self.walk_length {
            return Err(Error::domain(format!(
                "window {} must be smaller than walk_length {}",
                self.window, self.walk_length
            )));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::domain("learning_rate must be positive".to_string()));
        }
        Ok(())
    }
}

/// Per-node embedding rows, sorted by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<usize>,
    data: Array2<f64>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<usize>, data: Array2<f64>) -> Result<EmbeddingTable> {
        if ids.len() != data.nrows() {
            return Err(Error::shape(format!(
                "{} ids vs {} embedding rows",
                ids.len(),
                data.nrows()
            )));
        }
        if ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("embedding ids must be sorted and unique".to_string()));
        }
        Ok(EmbeddingTable { ids, data })
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn node_count(&self) -> usize {
        self.ids.len()
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn rank(&self, node: usize) -> Option<usize> {
        self.ids.binary_search(&node).ok()
    }

    pub fn row(&self, node: usize) -> Option<ArrayView1<'_, f64>> {
        self.rank(node).map(|r| self.data.row(r))
    }

    /// Gathers rows for the given nodes, in their order.
    pub fn rows_for(&self, nodes: &[usize]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((nodes.len(), self.dim()));
        for (i, &u) in nodes.iter().enumerate() {
            let row = self
                .row(u)
                .ok_or_else(|| Error::domain(format!("node {u} has no embedding")))?;
            out.row_mut(i).assign(&row);
        }
        Ok(out)
    }

    /// Text format: first line `n d`, then one `label v1 .. vd` line per node.
    pub fn write_text<W: Write>(&self, mut w: W, g: &Graph) -> Result<()> {
        writeln!(w, "{} {}", self.node_count(), self.dim())?;
        for (r, &id) in self.ids.iter().enumerate() {
            let vals: Vec<String> = self.data.row(r).iter().map(f64::to_string).collect();
            writeln!(w, "{} {}", g.label_of(id), vals.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: Read>(r: R, g: &Graph) -> Result<EmbeddingTable> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse { line: 1, msg: "empty embedding file".to_string() })??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let parse_count = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: 1,
                msg: format!("bad {what} in header"),
            })
        };
        if parts.len() != 2 {
            return Err(Error::Parse { line: 1, msg: "header must be 'n d'".to_string() });
        }
        let n = parse_count(parts[0], "node count")?;
        let d = parse_count(parts[1], "dimension")?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(n);
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            let mut tokens = line.split_whitespace();
            let label = tokens.next().ok_or_else(|| Error::Parse {
                line: lineno,
                msg: "missing label".to_string(),
            })?;
            let id = g.id_of(label).ok_or_else(|| Error::Parse {
                line: lineno,
                msg: format!("unknown node label '{label}'"),
            })?;
            let vals: Vec<f64> = tokens
                .map(|t| {
                    t.parse::<f64>().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad float '{t}'"),
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != d {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected {d} values, got {}", vals.len()),
                });
            }
            rows.push((id, vals));
        }
        if rows.len() != n {
            return Err(Error::Parse {
                line: 1,
                msg: format!("header promised {n} rows, found {}", rows.len()),
            });
        }
        rows.sort_by_key(|(id, _)| *id);
        let ids: Vec<usize> = rows.iter().map(|(id, _)| *id).collect();
        let mut data = Array2::zeros((n, d));
        for (r, (_, vals)) in rows.iter().enumerate() {
            for (c, &v) in vals.iter().enumerate() {
                data[[r, c]] = v;
            }
        }
        EmbeddingTable::new(ids, data)
    }
}

/// Uniform random walks: `walks_per_node` passes over shuffled start orders,
/// each walk on its own derived RNG stream.
pub fn generate_walks(g: &Graph, cfg: &WalkConfig, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let base = rng.gen::<u64>();
    let nodes = g.nodes();
    let mut walks = Vec::with_capacity(cfg.walks_per_node * nodes.len());
    for pass in 0..cfg.walks_per_node {
        let mut order = nodes.to_vec();
        order.shuffle(&mut derive_rng(base, "order", pass as u64));
        for (i, &start) in order.iter().enumerate() {
            let idx = (pass * nodes.len() + i) as u64;
            let mut wrng = derive_rng(base, "walk", idx);
            let mut walk = Vec::with_capacity(cfg.walk_length);
            walk.push(start);
            let mut cur = start;
            while walk.len() < cfg.walk_length {
                let nbrs = g.neighbors(cur);
                let Some(&next) = nbrs.choose(&mut wrng) else { break };
                walk.push(next);
                cur = next;
            }
            walks.push(walk);
        }
    }
    walks
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-30.0, 30.0)).exp())
}

/// Skip-gram with negative sampling over the walk corpus. With zero epochs
/// the initialization is returned unchanged. `init` rows override the random
/// initialization for nodes they cover (warm start).
fn train_skipgram_from(
    walks: &[Vec<usize>],
    cfg: &WalkConfig,
    init: Option<&EmbeddingTable>,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable> {
    cfg.validate()?;
    if walks.is_empty() {
        return Err(Error::domain("walk corpus is empty".to_string()));
    }
    let mut ids: Vec<usize> = walks.iter().flatten().copied().collect();
    ids.sort_unstable();
    ids.dedup();
    let n = ids.len();
    let d = cfg.dim;
    let rank_of = |u: usize| ids.binary_search(&u).expect("vocab node");

    let mut counts = vec![0u64; n];
    for walk in walks {
        for &u in walk {
            counts[rank_of(u)] += 1;
        }
    }
    // Unigram^(3/4) cumulative table for negative draws.
    let mut neg_cum = vec![0.0f64; n];
    let mut acc = 0.0;
    for (r, &c) in counts.iter().enumerate() {
        acc += (c as f64).powf(0.75);
        neg_cum[r] = acc;
    }
    let neg_total = acc;

    let bound = 0.5 / d as f64;
    let mut targets = vec![0.0f64; n * d];
    for v in targets.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    if let Some(table) = init {
        if table.dim() != d {
            return Err(Error::shape(format!(
                "warm-start table has dim {} but config wants {d}",
                table.dim()
            )));
        }
        for (r, &id) in ids.iter().enumerate() {
            if let Some(row) = table.row(id) {
                for c in 0..d {
                    targets[r * d + c] = row[c];
                }
            }
        }
    }
    let mut contexts = vec![0.0f64; n * d];

    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| {
            let len = w.len();
            (0..len)
                .map(|i| {
                    let lo = i.saturating_sub(cfg.window);
                    let hi = (i + cfg.window).min(len - 1);
                    hi - lo
                })
                .sum::<usize>()
        })
        .sum();
    let total_pairs = (cfg.epochs * pairs_per_epoch).max(1);

    let mut processed = 0usize;
    let mut neu1e = vec![0.0f64; d];
    for _ in 0..cfg.epochs {
        for walk in walks {
            let len = walk.len();
            for i in 0..len {
                let center = rank_of(walk[i]);
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(len - 1);
                for j in lo..=hi {
                    if j == i {
                        continue;
                    }
                    let context = rank_of(walk[j]);
                    let lr = (cfg.learning_rate
                        * (1.0 - processed as f64 / total_pairs as f64))
                        .max(MIN_LEARNING_RATE);
                    processed += 1;
                    neu1e.fill(0.0);
                    let v = center * d;
                    for sample in 0..=cfg.negatives {
                        let (s, label) = if sample == 0 {
                            (context, 1.0)
                        } else {
                            let draw = rng.gen::<f64>() * neg_total;
                            let s = neg_cum.partition_point(|&c| c < draw).min(n - 1);
                            if s == context {
                                continue;
                            }
                            (s, 0.0)
                        };
                        let u = s * d;
                        let mut f = 0.0;
                        for c in 0..d {
                            f += targets[v + c] * contexts[u + c];
                        }
                        let gadj = (label - sigmoid(f)) * lr;
                        for c in 0..d {
                            neu1e[c] += gadj * contexts[u + c];
                            contexts[u + c] += gadj * targets[v + c];
                        }
                    }
                    for c in 0..d {
                        targets[v + c] += neu1e[c];
                    }
                }
            }
        }
    }
    let data = Array2::from_shape_vec((n, d), targets).expect("row-major target matrix");
    EmbeddingTable::new(ids, data)
}

pub fn train_skipgram(
    walks: &[Vec<usize>],
    cfg: &WalkConfig,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable> {
    train_skipgram_from(walks, cfg, None, rng)
}

/// Walks plus skip-gram in one call. `prev` is consulted only when
/// `cfg.warm_start` is set; nodes absent from it keep the random
/// initialization.
pub fn embed_graph_warm(
    g: &Graph,
    cfg: &WalkConfig,
    prev: Option<&EmbeddingTable>,
    rng: &mut impl Rng,
) -> Result<EmbeddingTable> {
    cfg.validate()?;
    if g.node_count() == 0 {
        return EmbeddingTable::new(Vec::new(), Array2::zeros((0, cfg.dim)));
    }
    let walks = generate_walks(g, cfg, rng);
    let init = if cfg.warm_start { prev } else { None };
    train_skipgram_from(&walks, cfg, init, rng)
}

/// Fresh embeddings for one graph.
pub fn embed_graph(g: &Graph, cfg: &WalkConfig, rng: &mut impl Rng) -> Result<EmbeddingTable> {
    embed_graph_warm(g, cfg, None, rng)
}
