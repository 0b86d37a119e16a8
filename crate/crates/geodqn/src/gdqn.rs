//! The Q-network: a GCN stack over the observed graph, a differentiable
//! pooling pyramid (or sum pooling) producing a fixed-width graph embedding,
//! and an MLP head scoring (graph embedding, candidate embedding) pairs.
//!
//! Forward passes run on an [`autodiff::Tape`](crate::autodiff::Tape) so the
//! same code path serves evaluation and training.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{load_checkpoint, save_checkpoint, Mat, Tape, Var};
use crate::deepwalk::EmbeddingTable;
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMode {
    DiffPool,
    SumPool,
}

impl fmt::Display for PoolMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoolMode::DiffPool => write!(f, "diffpool"),
            PoolMode::SumPool => write!(f, "sum_pool"),
        }
    }
}

impl FromStr for PoolMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<PoolMode> {
        match s {
            "diffpool" | "diff_pool" => Ok(PoolMode::DiffPool),
            "sum_pool" | "sumpool" | "sum" => Ok(PoolMode::SumPool),
            other => Err(Error::config(format!(
                "unknown pool mode '{other}', expected diffpool or sum_pool"
            ))),
        }
    }
}

/// Architecture hyperparameters. Serialized into checkpoint headers so a
/// loaded file can be shape-checked before use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GdqnArch {
    /// Width of node feature rows (the embedding dimension).
    pub input_dim: usize,
    /// Output widths of the GCN stack, applied in order.
    pub gcn_widths: Vec<usize>,
    /// Cluster counts per pooling level; the last must be 1. Empty in
    /// sum-pooling mode.
    pub clusters: Vec<usize>,
    /// Width of the graph embedding (and of each pooling level's node
    /// embeddings).
    pub embed_width: usize,
    /// Hidden widths of the Q head; a final scalar layer is implied.
    pub head_widths: Vec<usize>,
    pub pool_mode: PoolMode,
}

impl Default for GdqnArch {
    fn default() -> Self {
        GdqnArch {
            input_dim: 32,
            gcn_widths: vec![64, 64],
            clusters: vec![8, 1],
            embed_width: 64,
            head_widths: vec![128, 64],
            pool_mode: PoolMode::DiffPool,
        }
    }
}

impl GdqnArch {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.embed_width == 0 {
            return Err(Error::config("embed_width must be positive"));
        }
        if self.gcn_widths.is_empty() || self.gcn_widths.contains(&0) {
            return Err(Error::config("gcn_widths must be nonempty and positive"));
        }
        if self.head_widths.contains(&0) {
            return Err(Error::config("head_widths must be positive"));
        }
        match self.pool_mode {
            PoolMode::DiffPool => {
                if self.clusters.is_empty() || self.clusters.contains(&0) {
                    return Err(Error::config("clusters must be nonempty and positive"));
                }
                if *self.clusters.last().unwrap() != 1 {
                    return Err(Error::config(format!(
                        "the last pooling level must have 1 cluster, got {}",
                        self.clusters.last().unwrap()
                    )));
                }
            }
            PoolMode::SumPool => {
                if !self.clusters.is_empty() {
                    return Err(Error::config(
                        "sum pooling takes no cluster counts; leave clusters empty",
                    ));
                }
                if *self.gcn_widths.last().unwrap() != self.embed_width {
                    return Err(Error::config(format!(
                        "sum pooling needs the last GCN width ({}) to equal embed_width ({})",
                        self.gcn_widths.last().unwrap(),
                        self.embed_width
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical (name, shape) plan for every parameter matrix, in the order
    /// used by initialization, checkpoints, and gradient extraction.
    fn shape_plan(&self) -> Vec<(String, (usize, usize))> {
        let mut plan = Vec::new();
        let mut width = self.input_dim;
        for (i, &w) in self.gcn_widths.iter().enumerate() {
            plan.push((format!("gcn.{i}"), (width, w)));
            width = w;
        }
        if self.pool_mode == PoolMode::DiffPool {
            for (i, &c) in self.clusters.iter().enumerate() {
                plan.push((format!("pool.{i}.assign"), (width, c)));
                plan.push((format!("pool.{i}.embed"), (width, self.embed_width)));
                width = self.embed_width;
            }
        }
        let mut width = self.embed_width + self.input_dim;
        for (i, &w) in self.head_widths.iter().enumerate() {
            plan.push((format!("head.{i}.w"), (width, w)));
            plan.push((format!("head.{i}.b"), (1, w)));
            width = w;
        }
        let last = self.head_widths.len();
        plan.push((format!("head.{last}.w"), (width, 1)));
        plan.push((format!("head.{last}.b"), (1, 1)));
        plan
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolParams {
    pub assign: Mat,
    pub embed: Mat,
}

/// All learnable matrices, grouped by role.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetworkParams {
    pub arch: GdqnArch,
    pub gcn: Vec<Mat>,
    pub pools: Vec<PoolParams>,
    pub head: Vec<(Mat, Mat)>,
}

fn glorot(shape: (usize, usize), rng: &mut impl Rng) -> Mat {
    let bound = (6.0 / (shape.0 + shape.1) as f64).sqrt();
    Mat::from_shape_fn(shape, |_| rng.gen_range(-bound..bound))
}

impl QNetworkParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: GdqnArch, rng: &mut impl Rng) -> Result<QNetworkParams> {
        arch.validate()?;
        let mut params = QNetworkParams {
            arch: arch.clone(),
            gcn: Vec::new(),
            pools: Vec::new(),
            head: Vec::new(),
        };
        for (name, shape) in arch.shape_plan() {
            if name.starts_with("gcn.") {
                params.gcn.push(glorot(shape, rng));
            } else if name.ends_with(".assign") {
                params.pools.push(PoolParams {
                    assign: glorot(shape, rng),
                    embed: Mat::zeros((0, 0)),
                });
            } else if name.ends_with(".embed") {
                params.pools.last_mut().unwrap().embed = glorot(shape, rng);
            } else if name.ends_with(".w") {
                params.head.push((glorot(shape, rng), Mat::zeros((0, 0))));
            } else {
                params.head.last_mut().unwrap().1 = Mat::zeros(shape);
            }
        }
        Ok(params)
    }

    /// Matrices in canonical order, paired with their checkpoint names.
    pub fn named(&self) -> Vec<(String, &Mat)> {
        let names = self.arch.shape_plan();
        names
            .into_iter()
            .map(|(n, _)| n)
            .zip(self.matrices())
            .collect()
    }

    /// Matrices in canonical order.
    pub fn matrices(&self) -> Vec<&Mat> {
        let mut v: Vec<&Mat> = Vec::new();
        v.extend(self.gcn.iter());
        v.extend(self.pools.iter().flat_map(|p| [&p.assign, &p.embed]));
        v.extend(self.head.iter().flat_map(|(w, b)| [w, b]));
        v
    }

    /// Mutable matrices in canonical order.
    pub fn matrices_mut(&mut self) -> Vec<&mut Mat> {
        let mut v: Vec<&mut Mat> = Vec::new();
        v.extend(self.gcn.iter_mut());
        v.extend(
            self.pools
                .iter_mut()
                .flat_map(|p| [&mut p.assign, &mut p.embed]),
        );
        v.extend(self.head.iter_mut().flat_map(|(w, b)| [w, b]));
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_string(&self.arch)
            .map_err(|e| Error::Checkpoint(format!("could not encode architecture: {e}")))?;
        let named = self.named();
        let entries: Vec<(&str, &Mat)> = named.iter().map(|(n, m)| (n.as_str(), *m)).collect();
        save_checkpoint(path, &header, &entries)
    }

    pub fn load(path: &Path) -> Result<QNetworkParams> {
        let (header, entries) = load_checkpoint(path)?;
        let arch: GdqnArch = serde_json::from_str(&header)
            .map_err(|e| Error::Checkpoint(format!("bad architecture header: {e}")))?;
        arch.validate()
            .map_err(|e| Error::Checkpoint(format!("architecture fails validation: {e}")))?;
        let plan = arch.shape_plan();
        if entries.len() != plan.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} matrices, found {}",
                plan.len(),
                entries.len()
            )));
        }
        let mut params = QNetworkParams {
            arch: arch.clone(),
            gcn: Vec::new(),
            pools: Vec::new(),
            head: Vec::new(),
        };
        for ((name, mat), (want_name, want_shape)) in entries.into_iter().zip(plan) {
            if name != want_name {
                return Err(Error::Checkpoint(format!(
                    "matrix '{name}' where '{want_name}' was expected"
                )));
            }
            if mat.dim() != want_shape {
                return Err(Error::Checkpoint(format!(
                    "matrix '{name}' is {}x{}, expected {}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    want_shape.0,
                    want_shape.1
                )));
            }
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(Error::Checkpoint(format!(
                    "matrix '{name}' contains non-finite entries"
                )));
            }
            if name.starts_with("gcn.") {
                params.gcn.push(mat);
            } else if name.ends_with(".assign") {
                params.pools.push(PoolParams {
                    assign: mat,
                    embed: Mat::zeros((0, 0)),
                });
            } else if name.ends_with(".embed") {
                params.pools.last_mut().unwrap().embed = mat;
            } else if name.ends_with(".w") {
                params.head.push((mat, Mat::zeros((0, 0))));
            } else {
                params.head.last_mut().unwrap().1 = mat;
            }
        }
        Ok(params)
    }

    /// Binds every parameter onto a tape; the forward methods on the result
    /// reuse those vars so one backward sweep yields all gradients.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            arch: self.arch.clone(),
            gcn: self.gcn.iter().map(|m| tape.input(m.clone())).collect(),
            pools: self
                .pools
                .iter()
                .map(|p| (tape.input(p.assign.clone()), tape.input(p.embed.clone())))
                .collect(),
            head: self
                .head
                .iter()
                .map(|(w, b)| (tape.input(w.clone()), tape.input(b.clone())))
                .collect(),
        }
    }

    /// Graph embedding as a 1 x embed_width matrix (pure evaluation).
    pub fn graph_embedding(&self, state: &StateRepr) -> Result<Mat> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let emb = bound.graph_embedding(&mut tape, state)?;
        Ok(tape.value(emb).clone())
    }

    /// Q(state, v) for each candidate row (pure evaluation).
    pub fn q_values(&self, state: &StateRepr, candidates: &Mat) -> Result<Vec<f64>> {
        if candidates.nrows() == 0 {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let emb = bound.graph_embedding(&mut tape, state)?;
        let q = bound.q_batch(&mut tape, emb, candidates)?;
        Ok(tape.value(q).column(0).to_vec())
    }
}

/// Tape handles for a bound parameter set.
pub struct BoundParams {
    pub arch: GdqnArch,
    gcn: Vec<Var>,
    pools: Vec<(Var, Var)>,
    head: Vec<(Var, Var)>,
}

impl BoundParams {
    /// Vars in the same canonical order as [`QNetworkParams::matrices`].
    pub fn param_vars(&self) -> Vec<Var> {
        let mut v = self.gcn.clone();
        v.extend(self.pools.iter().flat_map(|&(a, e)| [a, e]));
        v.extend(self.head.iter().flat_map(|&(w, b)| [w, b]));
        v
    }

    /// Runs the GCN stack and pooling, returning a 1 x embed_width var.
    pub fn graph_embedding(&self, tape: &mut Tape, state: &StateRepr) -> Result<Var> {
        let n = state.node_count();
        if n == 0 {
            return Err(Error::domain("cannot embed an empty graph"));
        }
        if state.features.ncols() != self.arch.input_dim {
            return Err(Error::shape(format!(
                "feature width {} but the network expects {}",
                state.features.ncols(),
                self.arch.input_dim
            )));
        }
        let a_norm = tape.input(normalize_adjacency(&state.adjacency)?);
        let mut f = tape.input(state.features.clone());
        for &w in &self.gcn {
            f = gcn_layer(tape, f, a_norm, w)?;
        }
        match self.arch.pool_mode {
            PoolMode::SumPool => {
                let ones = tape.input(Mat::from_elem((1, n), 1.0));
                tape.matmul(ones, f)
            }
            PoolMode::DiffPool => {
                let mut prop = a_norm;
                let mut araw = tape.input(state.adjacency.clone());
                for &(assign, embed) in &self.pools {
                    let (f2, a2) = diffpool_level(tape, f, prop, araw, assign, embed)?;
                    f = f2;
                    araw = a2;
                    prop = a2;
                }
                Ok(f)
            }
        }
    }

    /// Q values for a batch of candidate embedding rows, as a B x 1 var.
    pub fn q_batch(&self, tape: &mut Tape, graph_emb: Var, candidates: &Mat) -> Result<Var> {
        if candidates.ncols() != self.arch.input_dim {
            return Err(Error::shape(format!(
                "candidate width {} but the network expects {}",
                candidates.ncols(),
                self.arch.input_dim
            )));
        }
        let b = candidates.nrows();
        let phi = tape.input(candidates.clone());
        let ones = tape.input(Mat::from_elem((b, 1), 1.0));
        let rep = tape.matmul(ones, graph_emb)?;
        let rep_t = tape.transpose(rep);
        let phi_t = tape.transpose(phi);
        let x_t = tape.concat_rows(&[rep_t, phi_t])?;
        let mut x = tape.transpose(x_t);
        let last = self.head.len() - 1;
        for (i, &(w, bias)) in self.head.iter().enumerate() {
            let lin = tape.matmul(x, w)?;
            let bias_rep = tape.matmul(ones, bias)?;
            x = tape.add(lin, bias_rep)?;
            if i < last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Q value for one candidate embedding row, as a 1 x 1 var.
    pub fn q_single(&self, tape: &mut Tape, graph_emb: Var, candidate: &Mat) -> Result<Var> {
        if candidate.nrows() != 1 {
            return Err(Error::shape(format!(
                "expected one candidate row, got {}",
                candidate.nrows()
            )));
        }
        self.q_batch(tape, graph_emb, candidate)
    }
}

/// Node features and binary adjacency for one observed graph, rows ordered
/// by ascending node id.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRepr {
    pub features: Mat,
    pub adjacency: Mat,
}

impl StateRepr {
    pub fn new(features: Mat, adjacency: Mat) -> Result<StateRepr> {
        if adjacency.nrows() != adjacency.ncols() {
            return Err(Error::shape(format!(
                "adjacency is {}x{}, expected square",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        if features.nrows() != adjacency.nrows() {
            return Err(Error::shape(format!(
                "{} feature rows for {} adjacency rows",
                features.nrows(),
                adjacency.nrows()
            )));
        }
        let n = adjacency.nrows();
        for i in 0..n {
            if adjacency[[i, i]] != 0.0 {
                return Err(Error::domain(format!("adjacency has a self-loop at {i}")));
            }
            for j in 0..i {
                let x = adjacency[[i, j]];
                if x != adjacency[[j, i]] {
                    return Err(Error::domain(format!(
                        "adjacency is asymmetric at ({i},{j})"
                    )));
                }
                if x != 0.0 && x != 1.0 {
                    return Err(Error::domain(format!(
                        "adjacency entry ({i},{j}) is {x}, expected 0 or 1"
                    )));
                }
            }
        }
        Ok(StateRepr {
            features,
            adjacency,
        })
    }

    /// Features looked up per node from an embedding table, adjacency from
    /// the graph; row i corresponds to the i-th smallest node id.
    pub fn from_graph(g: &Graph, embeddings: &EmbeddingTable) -> Result<StateRepr> {
        let features = embeddings.rows_for(g.nodes())?;
        StateRepr::new(features, adjacency_matrix(g))
    }

    /// Same adjacency, caller-supplied feature rows (ascending node order).
    pub fn with_features(g: &Graph, features: Mat) -> Result<StateRepr> {
        StateRepr::new(features, adjacency_matrix(g))
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }
}

/// Dense binary adjacency over `g.nodes()` in ascending order.
pub fn adjacency_matrix(g: &Graph) -> Mat {
    let nodes = g.nodes();
    let index: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    let mut a = Mat::zeros((nodes.len(), nodes.len()));
    for (u, v) in g.edges() {
        let (i, j) = (index[&u], index[&v]);
        a[[i, j]] = 1.0;
        a[[j, i]] = 1.0;
    }
    a
}

/// Uninformative unit-norm feature rows: every entry 1/sqrt(d).
pub fn constant_features(g: &Graph, d: usize) -> Result<Mat> {
    if d == 0 {
        return Err(Error::domain("feature dimension must be positive"));
    }
    Ok(Mat::from_elem(
        (g.node_count(), d),
        1.0 / (d as f64).sqrt(),
    ))
}

/// D^{-1/2} (A + I) D^{-1/2} for a symmetric zero-diagonal adjacency.
pub fn normalize_adjacency(a: &Mat) -> Result<Mat> {
    if a.nrows() != a.ncols() {
        return Err(Error::shape(format!(
            "adjacency is {}x{}, expected square",
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    for i in 0..n {
        if a[[i, i]] != 0.0 {
            return Err(Error::domain(format!("adjacency has a self-loop at {i}")));
        }
        for j in 0..i {
            if a[[i, j]] != a[[j, i]] {
                return Err(Error::domain(format!(
                    "adjacency is asymmetric at ({i},{j})"
                )));
            }
        }
    }
    let mut tilde = a.clone();
    for i in 0..n {
        tilde[[i, i]] = 1.0;
    }
    let inv_sqrt: Vec<f64> = tilde
        .rows()
        .into_iter()
        .map(|r| 1.0 / r.sum().sqrt())
        .collect();
    for ((i, j), x) in tilde.indexed_iter_mut() {
        *x *= inv_sqrt[i] * inv_sqrt[j];
    }
    Ok(tilde)
}

/// One graph convolution: ReLU(A_norm . F . W), recorded on the tape.
pub fn gcn_layer(tape: &mut Tape, f: Var, a_norm: Var, w: Var) -> Result<Var> {
    let prop = tape.matmul(a_norm, f)?;
    let lin = tape.matmul(prop, w)?;
    Ok(tape.relu(lin))
}

/// One pooling level: soft assignments S from an assignment GCN, node
/// embeddings Z from an embedding GCN, then F' = S^T Z and A' = S^T A S.
/// `prop` is the propagation matrix for both GCNs (normalized adjacency at
/// the input level, the coarsened adjacency afterwards); `araw` is the
/// adjacency being coarsened.
pub fn diffpool_level(
    tape: &mut Tape,
    f: Var,
    prop: Var,
    araw: Var,
    assign_w: Var,
    embed_w: Var,
) -> Result<(Var, Var)> {
    let logits = gcn_layer(tape, f, prop, assign_w)?;
    let s = tape.row_softmax(logits);
    let z = gcn_layer(tape, f, prop, embed_w)?;
    let s_t = tape.transpose(s);
    let f2 = tape.matmul(s_t, z)?;
    let sa = tape.matmul(s_t, araw)?;
    let a2 = tape.matmul(sa, s)?;
    Ok((f2, a2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use ndarray::array;

    fn small_arch(mode: PoolMode) -> GdqnArch {
        GdqnArch {
            input_dim: 3,
            gcn_widths: vec![4, 3],
            clusters: match mode {
                PoolMode::DiffPool => vec![2, 1],
                PoolMode::SumPool => vec![],
            },
            embed_width: 3,
            head_widths: vec![4],
            pool_mode: mode,
        }
    }

    fn fixture_graph() -> Graph {
        Graph::from_edges(6, &[(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5)])
    }

    fn random_state(g: &Graph, d: usize, seed: u64) -> StateRepr {
        let mut rng = derive_rng(seed, "state", 0);
        let f = Mat::from_shape_fn((g.node_count(), d), |_| rng.gen_range(-1.0..1.0));
        StateRepr::with_features(g, f).unwrap()
    }

    #[test]
    fn test_normalize_adjacency_examples() {
        assert_eq!(
            normalize_adjacency(&Mat::zeros((1, 1))).unwrap(),
            array![[1.0]]
        );
        let two = normalize_adjacency(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        for &x in two.iter() {
            assert!((x - 0.5).abs() < 1e-12);
        }
        assert_eq!(normalize_adjacency(&Mat::zeros((3, 3))).unwrap(), Mat::eye(3));
        let asym = array![[0.0, 1.0], [0.0, 0.0]];
        assert!(matches!(normalize_adjacency(&asym), Err(Error::Domain(_))));
        let looped = array![[1.0]];
        assert!(matches!(
            normalize_adjacency(&looped),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn test_gcn_layer_examples() {
        let mut t = Tape::new();
        let a = t.input(array![[1.0]]);
        let f = t.input(array![[0.7]]);
        let w = t.input(array![[1.0]]);
        let out = gcn_layer(&mut t, f, a, w).unwrap();
        assert_eq!(t.value(out), &array![[0.7]]);

        let a_norm = normalize_adjacency(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let a = t.input(a_norm);
        let f = t.input(array![[1.0], [3.0]]);
        let w = t.input(array![[2.0]]);
        let out = gcn_layer(&mut t, f, a, w).unwrap();
        for &x in t.value(out).iter() {
            assert!((x - 4.0).abs() < 1e-12);
        }

        let wz = t.input(Mat::zeros((1, 5)));
        let out = gcn_layer(&mut t, f, a, wz).unwrap();
        assert_eq!(t.value(out), &Mat::zeros((2, 5)));
    }

    #[test]
    fn test_single_cluster_pool_sums_embeddings() {
        let mut t = Tape::new();
        let g = fixture_graph();
        let a_raw = adjacency_matrix(&g);
        let a_norm = normalize_adjacency(&a_raw).unwrap();
        let mut rng = derive_rng(5, "pool", 0);
        let fv = Mat::from_shape_fn((6, 3), |_| rng.gen_range(-1.0..1.0));
        let wa = Mat::from_shape_fn((3, 1), |_| rng.gen_range(-1.0..1.0));
        let we = Mat::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));

        let f = t.input(fv.clone());
        let prop = t.input(a_norm.clone());
        let araw = t.input(a_raw.clone());
        let assign = t.input(wa);
        let embed = t.input(we.clone());
        let (f2, a2) = diffpool_level(&mut t, f, prop, araw, assign, embed).unwrap();

        let z = a_norm.dot(&fv).dot(&we).mapv(|x| x.max(0.0));
        let colsum = z.sum_axis(ndarray::Axis(0));
        let got = t.value(f2);
        assert_eq!(got.dim(), (1, 2));
        for j in 0..2 {
            assert!((got[[0, j]] - colsum[j]).abs() < 1e-12);
        }
        assert_eq!(t.value(a2).dim(), (1, 1));
        assert!((t.value(a2)[[0, 0]] - a_raw.sum()).abs() < 1e-9);

        let zero_a = Mat::zeros((6, 6));
        let prop = t.input(normalize_adjacency(&zero_a).unwrap());
        let araw = t.input(zero_a);
        let f = t.input(fv);
        let wa2 = t.input(Mat::from_elem((3, 2), 0.3));
        let we2 = t.input(Mat::from_elem((3, 2), 0.3));
        let (_, a2) = diffpool_level(&mut t, f, prop, araw, wa2, we2).unwrap();
        assert_eq!(t.value(a2), &Mat::zeros((2, 2)));
    }

    fn permuted(state: &StateRepr, perm: &[usize]) -> StateRepr {
        let n = perm.len();
        let d = state.features.ncols();
        let mut f = Mat::zeros((n, d));
        let mut a = Mat::zeros((n, n));
        for i in 0..n {
            for c in 0..d {
                f[[i, c]] = state.features[[perm[i], c]];
            }
            for j in 0..n {
                a[[i, j]] = state.adjacency[[perm[i], perm[j]]];
            }
        }
        StateRepr::new(f, a).unwrap()
    }

    #[test]
    fn test_permutation_invariance_both_modes() {
        use rand::seq::SliceRandom;
        let g = fixture_graph();
        let state = random_state(&g, 3, 11);
        for mode in [PoolMode::DiffPool, PoolMode::SumPool] {
            let mut rng = derive_rng(7, "init", 0);
            let params = QNetworkParams::init(small_arch(mode), &mut rng).unwrap();
            let base = params.graph_embedding(&state).unwrap();
            let mut perm: Vec<usize> = (0..6).collect();
            let mut prng = derive_rng(7, "perm", 1);
            for _ in 0..5 {
                perm.shuffle(&mut prng);
                let emb = params.graph_embedding(&permuted(&state, &perm)).unwrap();
                let diff = (&emb - &base).mapv(f64::abs);
                let max = diff.iter().copied().fold(0.0, f64::max);
                assert!(max <= 1e-6, "mode {mode}: max deviation {max}");
            }
        }
    }

    #[test]
    fn test_q_values_invariant_under_relabeling() {
        use rand::seq::SliceRandom;
        let g = fixture_graph();
        let state = random_state(&g, 3, 13);
        let mut rng = derive_rng(13, "init", 0);
        let params = QNetworkParams::init(small_arch(PoolMode::DiffPool), &mut rng).unwrap();
        let mut crng = derive_rng(13, "cand", 0);
        let cands = Mat::from_shape_fn((3, 3), |_| crng.gen_range(-1.0..1.0));
        let base = params.q_values(&state, &cands).unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut crng);
        let moved = params.q_values(&permuted(&state, &perm), &cands).unwrap();
        for (x, y) in base.iter().zip(&moved) {
            assert!((x - y).abs() <= 1e-6);
        }
        let argmax = |q: &[f64]| {
            q.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        assert_eq!(argmax(&base), argmax(&moved));
    }

    #[test]
    fn test_identical_candidates_and_zero_head() {
        let g = fixture_graph();
        let state = random_state(&g, 3, 17);
        let mut rng = derive_rng(17, "init", 0);
        let mut params = QNetworkParams::init(small_arch(PoolMode::DiffPool), &mut rng).unwrap();
        let row = Mat::from_elem((1, 3), 0.4);
        let cands = ndarray::concatenate(ndarray::Axis(0), &[row.view(), row.view()]).unwrap();
        let q = params.q_values(&state, &cands).unwrap();
        assert_eq!(q[0], q[1]);

        for (w, b) in params.head.iter_mut() {
            w.fill(0.0);
            b.fill(0.0);
        }
        params.head.last_mut().unwrap().1[[0, 0]] = 0.77;
        let q = params.q_values(&state, &cands).unwrap();
        assert!(q.iter().all(|&x| (x - 0.77).abs() < 1e-12));
    }

    #[test]
    fn test_embedding_width_fixed_by_arch() {
        for mode in [PoolMode::DiffPool, PoolMode::SumPool] {
            let mut rng = derive_rng(23, "init", 0);
            let params = QNetworkParams::init(small_arch(mode), &mut rng).unwrap();
            let small = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
            let big = Graph::from_edges(9, &[(0, 1), (1, 2), (3, 4), (5, 6), (7, 8), (2, 3)]);
            let e1 = params.graph_embedding(&random_state(&small, 3, 1)).unwrap();
            let e2 = params.graph_embedding(&random_state(&big, 3, 2)).unwrap();
            assert_eq!(e1.dim(), (1, 3));
            assert_eq!(e2.dim(), (1, 3));
        }
    }

    #[test]
    fn test_constant_features_rows() {
        let g = fixture_graph();
        let f = constant_features(&g, 4).unwrap();
        assert_eq!(f.dim(), (6, 4));
        assert!(f.iter().all(|&x| x == 0.5));
        for row in f.rows() {
            let norm: f64 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        assert!(constant_features(&g, 0).is_err());
    }

    #[test]
    fn test_arch_validation() {
        let mut arch = small_arch(PoolMode::DiffPool);
        arch.clusters = vec![2, 3];
        assert!(matches!(arch.validate(), Err(Error::Config(_))));
        let mut arch = small_arch(PoolMode::SumPool);
        arch.embed_width = 7;
        assert!(matches!(arch.validate(), Err(Error::Config(_))));
        let mut arch = small_arch(PoolMode::SumPool);
        arch.clusters = vec![1];
        assert!(matches!(arch.validate(), Err(Error::Config(_))));
        assert!(small_arch(PoolMode::DiffPool).validate().is_ok());
    }

    #[test]
    fn test_state_repr_from_graph_ordering() {
        let hidden = Graph::from_edges(8, &[(7, 2), (2, 5)]);
        let g = hidden.initial_observation(&[2]).unwrap();
        assert_eq!(g.nodes(), &[2, 5, 7]);
        let ids = vec![2, 5, 7];
        let data = array![[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let table = EmbeddingTable::new(ids, data).unwrap();
        let state = StateRepr::from_graph(&g, &table).unwrap();
        assert_eq!(state.features[[0, 0]], 1.0);
        assert_eq!(state.features[[2, 0]], 3.0);
        assert_eq!(state.adjacency[[0, 2]], 1.0);
        assert_eq!(state.adjacency[[0, 1]], 1.0);
        assert_eq!(state.adjacency[[1, 2]], 0.0);
    }

    fn eval_sum_q(params: &QNetworkParams, state: &StateRepr, cands: &Mat) -> f64 {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let emb = bound.graph_embedding(&mut tape, state).unwrap();
        let q = bound.q_batch(&mut tape, emb, cands).unwrap();
        let s = tape.reduce_sum(q);
        tape.value(s)[[0, 0]]
    }

    #[test]
    fn test_full_network_gradient_matches_finite_differences() {
        let g = fixture_graph();
        let state = random_state(&g, 3, 31);
        let mut crng = derive_rng(31, "cand", 0);
        let cands = Mat::from_shape_fn((2, 3), |_| crng.gen_range(-1.0..1.0));
        for mode in [PoolMode::DiffPool, PoolMode::SumPool] {
            let mut rng = derive_rng(31, "init", 0);
            let params = QNetworkParams::init(small_arch(mode), &mut rng).unwrap();
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let emb = bound.graph_embedding(&mut tape, &state).unwrap();
            let q = bound.q_batch(&mut tape, emb, &cands).unwrap();
            let out = tape.reduce_sum(q);
            let grads = tape.backward(out).unwrap();
            let vars = bound.param_vars();
            let h = 1e-5;
            for (k, var) in vars.iter().enumerate() {
                let shape = {
                    let m = params.matrices()[k];
                    (m.nrows(), m.ncols())
                };
                let analytic = grads.take(*var, shape);
                for r in 0..shape.0 {
                    for c in 0..shape.1 {
                        let mut plus = params.clone();
                        plus.matrices_mut()[k][[r, c]] += h;
                        let mut minus = params.clone();
                        minus.matrices_mut()[k][[r, c]] -= h;
                        let numeric = (eval_sum_q(&plus, &state, &cands)
                            - eval_sum_q(&minus, &state, &cands))
                            / (2.0 * h);
                        let denom = numeric.abs().max(analytic[[r, c]].abs()).max(1.0);
                        let rel = (numeric - analytic[[r, c]]).abs() / denom;
                        assert!(
                            rel <= 1e-4,
                            "mode {mode} matrix {k} entry ({r},{c}): numeric {numeric} vs {}",
                            analytic[[r, c]]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn test_checkpoint_round_trip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.ckpt");
        let mut rng = derive_rng(41, "init", 0);
        let params = QNetworkParams::init(small_arch(PoolMode::DiffPool), &mut rng).unwrap();
        params.save(&path).unwrap();
        let loaded = QNetworkParams::load(&path).unwrap();
        assert_eq!(loaded, params);

        let named = params.named();
        let mut entries: Vec<(String, Mat)> = named
            .iter()
            .map(|(n, m)| (n.clone(), (*m).clone()))
            .collect();
        entries[0].0 = "gcn.9".to_string();
        let tampered: Vec<(&str, &Mat)> =
            entries.iter().map(|(n, m)| (n.as_str(), m)).collect();
        let header = serde_json::to_string(&params.arch).unwrap();
        let bad = dir.path().join("bad.ckpt");
        crate::autodiff::save_checkpoint(&bad, &header, &tampered).unwrap();
        assert!(matches!(
            QNetworkParams::load(&bad),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn test_empty_candidates_and_width_mismatch() {
        let g = fixture_graph();
        let state = random_state(&g, 3, 47);
        let mut rng = derive_rng(47, "init", 0);
        let params = QNetworkParams::init(small_arch(PoolMode::DiffPool), &mut rng).unwrap();
        assert!(params.q_values(&state, &Mat::zeros((0, 3))).unwrap().is_empty());
        let wide = Mat::zeros((2, 5));
        assert!(matches!(
            params.q_values(&state, &wide),
            Err(Error::Shape(_))
        ));
    }
}
