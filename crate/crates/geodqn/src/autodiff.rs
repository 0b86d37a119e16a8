//! Dense-matrix reverse-mode differentiation on an append-only tape, plus an
//! Adam optimizer and a versioned checkpoint container for named matrices.
//!
//! The primitive set is deliberately small: exactly what the Q-network's
//! forward pass needs. Every operation records its inputs on the tape; a
//! single reverse sweep from a scalar output yields exact gradients.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;

/// Handle to a value on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    MatMul(Var, Var),
    Add(Var, Var),
    Hadamard(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    RowSoftmax(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    ReduceSum(Var),
    Scale(Var, f64),
}

struct Node {
    op: Op,
    value: Mat,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims(m: &Mat) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Mat) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat) -> Var {
        self.push(Op::Input, value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(format!(
                "matmul of {} by {}",
                dims(va),
                dims(vb)
            )));
        }
        let value = va.dot(vb);
        Ok(self.push(Op::MatMul(a, b), value))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.dim() != vb.dim() {
            return Err(Error::shape(format!(
                "{what} of {} and {}",
                dims(va),
                dims(vb)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = self.value(a) + self.value(b);
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "hadamard")?;
        let value = self.value(a) * self.value(b);
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a), value)
    }

    /// Softmax across each row (max-shifted for stability).
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum: f64 = row.iter().sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(Op::RowSoftmax(a), value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        self.push(Op::Transpose(a), value)
    }

    /// Stacks parts vertically; all must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::domain("concat_rows of zero parts".to_string()));
        }
        let ncols = self.value(parts[0]).ncols();
        let mut nrows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.ncols() != ncols {
                return Err(Error::shape(format!(
                    "concat_rows of {} and {}",
                    dims(self.value(parts[0])),
                    dims(v)
                )));
            }
            nrows += v.nrows();
        }
        let mut value = Mat::zeros((nrows, ncols));
        let mut at = 0;
        for &p in parts {
            let v = self.value(p);
            value
                .slice_mut(ndarray::s![at..at + v.nrows(), ..])
                .assign(v);
            at += v.nrows();
        }
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value))
    }

    /// Sum of all entries as a 1x1 matrix.
    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        self.push(Op::ReduceSum(a), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        self.push(Op::Scale(a, c), value)
    }

    /// Reverse sweep from a scalar output. ReLU takes subgradient 0 at 0.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out_val = self.value(output);
        if out_val.dim() != (1, 1) {
            return Err(Error::domain(format!(
                "backward needs a 1x1 output, got {}",
                dims(out_val)
            )));
        }
        let mut adjoints: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        adjoints[output.0] = Some(Mat::from_elem((1, 1), 1.0));
        for idx in (0..=output.0).rev() {
            // Children always precede their consumer, so splitting at idx
            // gives mutable access to every child adjoint.
            let (before, rest) = adjoints.split_at_mut(idx);
            let Some(g) = rest[0].as_ref() else { continue };
            let acc = |slot: &mut Option<Mat>, contrib: Mat| match slot {
                Some(m) => *m += &contrib,
                None => *slot = Some(contrib),
            };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(&mut before[a.0], g.dot(&vb.t()));
                    acc(&mut before[b.0], va.t().dot(g));
                }
                Op::Add(a, b) => {
                    acc(&mut before[a.0], g.clone());
                    acc(&mut before[b.0], g.clone());
                }
                Op::Hadamard(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(&mut before[a.0], g * vb);
                    acc(&mut before[b.0], g * va);
                }
                Op::Relu(a) => {
                    let va = &self.nodes[a.0].value;
                    let mask = va.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut before[a.0], g * &mask);
                }
                Op::Sigmoid(a) => {
                    let s = &self.nodes[idx].value;
                    acc(&mut before[a.0], g * s * &s.mapv(|x| 1.0 - x));
                }
                Op::RowSoftmax(a) => {
                    let s = &self.nodes[idx].value;
                    let mut out = Mat::zeros(s.raw_dim());
                    for (r, (s_row, g_row)) in s.rows().into_iter().zip(g.rows()).enumerate() {
                        let dot: f64 = s_row.iter().zip(g_row.iter()).map(|(x, y)| x * y).sum();
                        for (c, (&sv, &gv)) in s_row.iter().zip(g_row.iter()).enumerate() {
                            out[[r, c]] = sv * (gv - dot);
                        }
                    }
                    acc(&mut before[a.0], out);
                }
                Op::Transpose(a) => {
                    acc(&mut before[a.0], g.t().to_owned());
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let rows = self.nodes[p.0].value.nrows();
                        let piece = g.slice(ndarray::s![at..at + rows, ..]).to_owned();
                        acc(&mut before[p.0], piece);
                        at += rows;
                    }
                }
                Op::ReduceSum(a) => {
                    let scale = g[[0, 0]];
                    let shape = self.nodes[a.0].value.raw_dim();
                    acc(&mut before[a.0], Mat::from_elem(shape, scale));
                }
                Op::Scale(a, c) => {
                    acc(&mut before[a.0], g * *c);
                }
            }
        }
        Ok(Gradients { adjoints })
    }
}

/// Adjoints per tape variable after a backward sweep.
pub struct Gradients {
    adjoints: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, or zeros of the given shape if `v` never influenced
    /// the output.
    pub fn take(&self, v: Var, shape: (usize, usize)) -> Mat {
        match self.get(v) {
            Some(m) => m.clone(),
            None => Mat::zeros(shape),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter first/second moment estimates.
pub struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    t: u64,
}

impl AdamState {
    pub fn new<'a, I>(params: I) -> AdamState
    where
        I: IntoIterator<Item = &'a Mat>,
    {
        let (m, v): (Vec<Mat>, Vec<Mat>) = params
            .into_iter()
            .map(|p| (Mat::zeros(p.raw_dim()), Mat::zeros(p.raw_dim())))
            .unzip();
        AdamState { m, v, t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over all parameters.
pub fn adam_step<'a, I>(
    params: I,
    grads: &[Mat],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Mat>,
{
    let mut ps: Vec<&'a mut Mat> = params.into_iter().collect();
    if ps.len() != grads.len() || ps.len() != state.m.len() {
        return Err(Error::shape(format!(
            "{} params vs {} grads vs {} moment slots",
            ps.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), i) in ps.iter().zip(grads).zip(0..) {
        if p.dim() != g.dim() {
            return Err(Error::shape(format!(
                "param {i} is {} but grad is {}",
                dims(p),
                dims(g)
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in ps
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        m.zip_mut_with(g, |mv, &gv| *mv = cfg.beta1 * *mv + (1.0 - cfg.beta1) * gv);
        v.zip_mut_with(g, |vv, &gv| *vv = cfg.beta2 * *vv + (1.0 - cfg.beta2) * gv * gv);
        ndarray::Zip::from(&mut **p)
            .and(&*m)
            .and(&*v)
            .for_each(|pv, &mv, &vv| {
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                *pv -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            });
    }
    Ok(())
}

const CKPT_MAGIC: &[u8; 8] = b"GDQNCKPT";
const CKPT_VERSION: u32 = 1;

/// Writes named matrices with a UTF-8 header string to `path` atomically
/// (temp file in the same directory, then rename).
pub fn save_checkpoint(path: &Path, header: &str, entries: &[(&str, &Mat)]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "checkpoint".to_string())
    ));
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        f.write_all(CKPT_MAGIC)?;
        f.write_all(&CKPT_VERSION.to_le_bytes())?;
        let hbytes = header.as_bytes();
        f.write_all(&(hbytes.len() as u64).to_le_bytes())?;
        f.write_all(hbytes)?;
        f.write_all(&(entries.len() as u32).to_le_bytes())?;
        for (name, mat) in entries {
            let nbytes = name.as_bytes();
            f.write_all(&(nbytes.len() as u32).to_le_bytes())?;
            f.write_all(nbytes)?;
            f.write_all(&(mat.nrows() as u64).to_le_bytes())?;
            f.write_all(&(mat.ncols() as u64).to_le_bytes())?;
            for &x in mat.iter() {
                f.write_all(&x.to_le_bytes())?;
            }
        }
        f.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn read_exact_or(f: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    f.read_exact(buf)
        .map_err(|_| ckpt_err(format!("truncated reading {what}")))
}

/// Reads a checkpoint written by [`save_checkpoint`]; returns the header and
/// the named matrices in file order.
pub fn load_checkpoint(path: &Path) -> Result<(String, Vec<(String, Mat)>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact_or(&mut f, &mut magic, "magic")?;
    if &magic != CKPT_MAGIC {
        return Err(ckpt_err("not a checkpoint file (bad magic)"));
    }
    let mut u32buf = [0u8; 4];
    read_exact_or(&mut f, &mut u32buf, "version")?;
    let version = u32::from_le_bytes(u32buf);
    if version != CKPT_VERSION {
        return Err(ckpt_err(format!(
            "unsupported checkpoint version {version}, expected {CKPT_VERSION}"
        )));
    }
    let mut u64buf = [0u8; 8];
    read_exact_or(&mut f, &mut u64buf, "header length")?;
    let hlen = u64::from_le_bytes(u64buf) as usize;
    let mut hbytes = vec![0u8; hlen];
    read_exact_or(&mut f, &mut hbytes, "header")?;
    let header = String::from_utf8(hbytes).map_err(|_| ckpt_err("header is not UTF-8"))?;
    read_exact_or(&mut f, &mut u32buf, "entry count")?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        read_exact_or(&mut f, &mut u32buf, "name length")?;
        let nlen = u32::from_le_bytes(u32buf) as usize;
        let mut nbytes = vec![0u8; nlen];
        read_exact_or(&mut f, &mut nbytes, "name")?;
        let name = String::from_utf8(nbytes).map_err(|_| ckpt_err("name is not UTF-8"))?;
        read_exact_or(&mut f, &mut u64buf, "row count")?;
        let rows = u64::from_le_bytes(u64buf) as usize;
        read_exact_or(&mut f, &mut u64buf, "column count")?;
        let cols = u64::from_le_bytes(u64buf) as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut fbuf = [0u8; 8];
        for slot in data.iter_mut() {
            read_exact_or(&mut f, &mut fbuf, "matrix data")?;
            *slot = f64::from_le_bytes(fbuf);
        }
        let mat = Mat::from_shape_vec((rows, cols), data)
            .map_err(|e| ckpt_err(format!("bad matrix shape: {e}")))?;
        entries.push((name, mat));
    }
    Ok((header, entries))
}
