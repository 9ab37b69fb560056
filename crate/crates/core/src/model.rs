//! Discrete variables, dummy coding, and the multi-logit conditional model.
//!
//! Each variable `X_i` takes levels `0..n_i`, with level 0 as the reference
//! and `d_i = n_i - 1` dummy indicators for the rest. A child's conditional
//! distribution is a symmetric softmax over its `n_i` levels: every level
//! has its own intercept and its own row in each parent's coefficient block,
//! and identifiability comes from forcing each block column (and the
//! intercept vector) to sum to zero across levels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::graph::{self, DagGraph};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("level {level} out of range for a variable with {levels} levels")]
    LevelOutOfRange { level: u32, levels: u32 },
    #[error("every variable needs at least 2 levels")]
    BadCardinality,
    #[error("graph contains a directed cycle")]
    CyclicGraph,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Level counts for the `p` variables, plus the derived layout of the
/// stacked dummy encoding: slot 0 is the constant intercept slot, followed
/// by `d_j` indicator slots per variable in index order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VariableSpec {
    cards: Vec<u32>,
    offsets: Vec<usize>,
    encoded_len: usize,
}

impl VariableSpec {
    pub fn new(cards: Vec<u32>) -> Result<Self, ModelError> {
        if cards.iter().any(|&c| c < 2) {
            return Err(ModelError::BadCardinality);
        }
        let mut offsets = Vec::with_capacity(cards.len());
        let mut off = 1usize;
        for &c in &cards {
            offsets.push(off);
            off += (c - 1) as usize;
        }
        Ok(VariableSpec { cards, offsets, encoded_len: off })
    }

    pub fn binary(p: usize) -> Self {
        VariableSpec::new(vec![2; p]).expect("binary cards are valid")
    }

    pub fn p(&self) -> usize {
        self.cards.len()
    }

    pub fn levels(&self, i: usize) -> usize {
        self.cards[i] as usize
    }

    pub fn dummy_dim(&self, i: usize) -> usize {
        self.levels(i) - 1
    }

    /// Index of variable `j`'s first dummy slot in the stacked encoding.
    pub fn offset(&self, j: usize) -> usize {
        self.offsets[j]
    }

    /// Length of the stacked encoding: 1 intercept slot + all dummy slots.
    pub fn encoded_len(&self) -> usize {
        self.encoded_len
    }

    pub fn cards(&self) -> &[u32] {
        &self.cards
    }
}

/// Dense real matrix, row-major. Used for coefficient blocks (`levels x
/// dummy_dim`) and their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Block {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Block { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Block { rows: r, cols: c, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Subtracts each column's mean so every column sums to zero.
    pub fn center_columns(&mut self) {
        if self.rows == 0 {
            return;
        }
        for c in 0..self.cols {
            let mut s = 0.0;
            for r in 0..self.rows {
                s += self.data[r * self.cols + c];
            }
            let mean = s / self.rows as f64;
            for r in 0..self.rows {
                self.data[r * self.cols + c] -= mean;
            }
        }
    }
}

/// Full parameter set of the multi-logit model: one intercept vector per
/// child and one `levels(i) x dummy_dim(j)` block per ordered pair `(i, j)`,
/// `i != j`. A zero block means "no edge j -> i".
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    spec: VariableSpec,
    intercepts: Vec<Vec<f64>>,
    blocks: Vec<Block>,
}

impl ParamSet {
    pub fn zeros(spec: &VariableSpec) -> Self {
        let p = spec.p();
        let intercepts = (0..p).map(|i| vec![0.0; spec.levels(i)]).collect();
        let mut blocks = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                let cols = if i == j { 0 } else { spec.dummy_dim(j) };
                blocks.push(Block::zeros(spec.levels(i), cols));
            }
        }
        ParamSet { spec: spec.clone(), intercepts, blocks }
    }

    pub fn spec(&self) -> &VariableSpec {
        &self.spec
    }

    pub fn p(&self) -> usize {
        self.spec.p()
    }

    pub fn intercept(&self, i: usize) -> &[f64] {
        &self.intercepts[i]
    }

    pub fn intercept_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.intercepts[i]
    }

    /// Coefficient block of child `i` for parent `j` (empty when `i == j`).
    pub fn block(&self, i: usize, j: usize) -> &Block {
        &self.blocks[i * self.spec.p() + j]
    }

    pub fn block_mut(&mut self, i: usize, j: usize) -> &mut Block {
        &mut self.blocks[i * self.spec.p() + j]
    }

    pub fn block_norm(&self, i: usize, j: usize) -> f64 {
        self.block(i, j).norm()
    }

    /// Projects every intercept and block column onto the sum-to-zero
    /// identifiability constraint.
    pub fn project_identifiable(&mut self) {
        let p = self.spec.p();
        for i in 0..p {
            let levels = self.spec.levels(i);
            let mean: f64 = self.intercepts[i].iter().sum::<f64>() / levels as f64;
            for v in &mut self.intercepts[i] {
                *v -= mean;
            }
        }
        for b in &mut self.blocks {
            b.center_columns();
        }
    }

    /// Largest absolute column sum over all constrained columns; zero (up to
    /// rounding) for any identifiable parameter set.
    pub fn max_constraint_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for ic in &self.intercepts {
            worst = worst.max(ic.iter().sum::<f64>().abs());
        }
        for b in &self.blocks {
            for c in 0..b.cols() {
                let s: f64 = (0..b.rows()).map(|r| b.get(r, c)).sum();
                worst = worst.max(s.abs());
            }
        }
        worst
    }
}

/// Rows of observed levels, one column per variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    spec: VariableSpec,
    n: usize,
    data: Vec<u32>,
}

impl Dataset {
    pub fn from_values(spec: VariableSpec, data: Vec<u32>) -> Result<Self, ModelError> {
        let p = spec.p();
        assert!(p > 0 && data.len() % p == 0, "row length must divide data length");
        for (k, &v) in data.iter().enumerate() {
            let i = k % p;
            if v >= spec.cards()[i] {
                return Err(ModelError::LevelOutOfRange { level: v, levels: spec.cards()[i] });
            }
        }
        let n = data.len() / p;
        Ok(Dataset { spec, n, data })
    }

    pub fn spec(&self) -> &VariableSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.spec.p()
    }

    pub fn value(&self, h: usize, i: usize) -> u32 {
        self.data[h * self.spec.p() + i]
    }

    pub fn row(&self, h: usize) -> &[u32] {
        let p = self.spec.p();
        &self.data[h * p..(h + 1) * p]
    }
}

/// Indicator coding of one level: level 0 maps to all zeros, level `l >= 1`
/// to the unit vector with a one at position `l - 1`.
pub fn dummy_encode(value: u32, n_levels: u32) -> Result<Vec<f64>, ModelError> {
    if value >= n_levels {
        return Err(ModelError::LevelOutOfRange { level: value, levels: n_levels });
    }
    let mut v = vec![0.0; (n_levels - 1) as usize];
    if value >= 1 {
        v[(value - 1) as usize] = 1.0;
    }
    Ok(v)
}

/// Stacked covariate vector for one row: `[1, dummies(x_0), dummies(x_1), ...]`.
pub fn encode_row(spec: &VariableSpec, values: &[u32]) -> Vec<f64> {
    assert_eq!(values.len(), spec.p());
    let mut x = vec![0.0; spec.encoded_len()];
    x[0] = 1.0;
    for (j, &v) in values.iter().enumerate() {
        debug_assert!(v < spec.cards()[j]);
        if v >= 1 {
            x[spec.offset(j) + (v - 1) as usize] = 1.0;
        }
    }
    x
}

/// Numerically safe softmax over `logits`, in place.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in logits.iter_mut() {
        *v /= total;
    }
}

/// Conditional distribution of child `i` given a stacked covariate vector
/// `x` (see [`encode_row`]); slot 0 of `x` multiplies the intercept.
pub fn predict_proba(params: &ParamSet, i: usize, x: &[f64]) -> Vec<f64> {
    let spec = params.spec();
    assert_eq!(x.len(), spec.encoded_len(), "covariate layout mismatch");
    let levels = spec.levels(i);
    let mut logits = vec![0.0; levels];
    for (l, v) in logits.iter_mut().enumerate() {
        *v = params.intercept(i)[l] * x[0];
    }
    for j in 0..spec.p() {
        if j == i {
            continue;
        }
        let b = params.block(i, j);
        let off = spec.offset(j);
        for c in 0..b.cols() {
            let xv = x[off + c];
            if xv != 0.0 {
                for (l, v) in logits.iter_mut().enumerate() {
                    *v += b.get(l, c) * xv;
                }
            }
        }
    }
    softmax_in_place(&mut logits);
    logits
}

/// Child `i`'s logits given the raw levels of the other variables, touching
/// only the listed parents (correct whenever all other blocks are zero).
fn logits_from_parents(
    params: &ParamSet,
    i: usize,
    values: &[u32],
    parents: &[usize],
    out: &mut [f64],
) {
    out.copy_from_slice(params.intercept(i));
    for &j in parents {
        let v = values[j];
        if v >= 1 {
            let b = params.block(i, j);
            let c = (v - 1) as usize;
            for (l, o) in out.iter_mut().enumerate() {
                *o += b.get(l, c);
            }
        }
    }
}

/// Parameter-counting convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamModel {
    /// One full conditional probability table per child.
    ProductMultinomial,
    /// Intercepts (free dimensions only) plus one block per parent.
    MultiLogit,
}

pub fn param_count(spec: &VariableSpec, g: &DagGraph, model: ParamModel) -> u64 {
    assert_eq!(spec.p(), g.p());
    let mut total = 0u64;
    for i in 0..spec.p() {
        let parents = g.parents_of(i);
        match model {
            ParamModel::ProductMultinomial => {
                let mut t = spec.levels(i) as u64;
                for &j in &parents {
                    t *= spec.levels(j) as u64;
                }
                total += t;
            }
            ParamModel::MultiLogit => {
                let dummy_sum: u64 = parents.iter().map(|&j| spec.dummy_dim(j) as u64).sum();
                total += (spec.levels(i) as u64 - 1) + spec.levels(i) as u64 * dummy_sum;
            }
        }
    }
    total
}

/// Ground-truth parameters for a given DAG: every true edge's block gets
/// entries with magnitude uniform in `[coef_low, coef_high]` and random
/// sign, then column-centering; intercepts and non-edge blocks stay exactly
/// zero.
///
/// Signs alternate across child levels within a column, with one random
/// flip per column. Independent per-entry signs would let column-centering
/// cancel same-sign pairs, leaving a sizable fraction of edges with near-zero
/// effect; the alternating pattern guarantees every edge keeps a level
/// contrast of at least `2 * coef_low`, so edges stay detectable at small
/// sample sizes.
pub fn gen_true_cpds(
    g: &DagGraph,
    spec: &VariableSpec,
    coef_low: f64,
    coef_high: f64,
    seed: u64,
) -> ParamSet {
    assert!(0.0 < coef_low && coef_low < coef_high, "need 0 < coef_low < coef_high");
    assert_eq!(spec.p(), g.p());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut params = ParamSet::zeros(spec);
    for i in 0..spec.p() {
        let levels = spec.levels(i);
        for j in 0..spec.p() {
            if j == i || !g.has_edge(j, i) {
                continue;
            }
            let b = params.block_mut(i, j);
            let cols = b.cols();
            for c in 0..cols {
                let flip = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                for l in 0..levels {
                    let mag = rng.gen_range(coef_low..coef_high);
                    let sign = flip * if l % 2 == 0 { 1.0 } else { -1.0 };
                    b.set(l, c, sign * mag);
                }
            }
            b.center_columns();
        }
    }
    params
}

/// Ancestral sampling: each row is drawn independently by visiting variables
/// in topological order and sampling each child from its conditional given
/// the already-sampled parents.
pub fn sample_dataset(
    g: &DagGraph,
    params: &ParamSet,
    n: usize,
    seed: u64,
) -> Result<Dataset, ModelError> {
    let spec = params.spec();
    assert_eq!(spec.p(), g.p());
    let order = graph::topo_sort(g).map_err(|_| ModelError::CyclicGraph)?;
    let parents: Vec<Vec<usize>> = (0..g.p()).map(|i| g.parents_of(i)).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p = spec.p();
    let mut data = vec![0u32; n * p];
    let mut probs = vec![0.0f64; spec.cards().iter().map(|&c| c as usize).max().unwrap_or(2)];
    for h in 0..n {
        let (done, row) = data.split_at_mut(h * p);
        let _ = done;
        let row = &mut row[..p];
        for &i in &order {
            let levels = spec.levels(i);
            let logits = &mut probs[..levels];
            logits_from_parents(params, i, row, &parents[i], logits);
            softmax_in_place(logits);
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            let mut drawn = levels - 1;
            for (l, &pr) in logits.iter().enumerate() {
                cum += pr;
                if u < cum {
                    drawn = l;
                    break;
                }
            }
            row[i] = drawn as u32;
        }
    }
    Dataset::from_values(spec.clone(), data)
}

/// Flips each cell independently with probability `q`: binary cells get
/// complemented, wider variables are resampled uniformly among the other
/// levels (so a flip always changes the value).
pub fn inject_noise(d: &Dataset, q: f64, seed: u64) -> Dataset {
    assert!((0.0..=1.0).contains(&q), "flip probability must lie in [0, 1]");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = d.clone();
    let p = d.p();
    for h in 0..d.n() {
        for i in 0..p {
            if rng.gen::<f64>() >= q {
                continue;
            }
            let card = d.spec().cards()[i];
            let old = out.data[h * p + i];
            let new = if card == 2 {
                1 - old
            } else {
                let r = rng.gen_range(0..card - 1);
                if r >= old {
                    r + 1
                } else {
                    r
                }
            };
            out.data[h * p + i] = new;
        }
    }
    out
}

/// CSV form: header `x0,x1,...`, then one line of integer levels per row.
pub fn format_csv(d: &Dataset) -> String {
    let p = d.p();
    let mut out = String::new();
    for i in 0..p {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&format!("x{i}"));
    }
    out.push('\n');
    for h in 0..d.n() {
        for i in 0..p {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{}", d.value(h, i)));
        }
        out.push('\n');
    }
    out
}

fn parse_csv_values(text: &str) -> Result<(usize, Vec<u32>), ModelError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| ModelError::Parse { line: 1, msg: "empty input".into() })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let p = cols.len();
    for (i, c) in cols.iter().enumerate() {
        if *c != format!("x{i}") {
            return Err(ModelError::Parse {
                line: 1,
                msg: format!("expected header column 'x{i}', got '{c}'"),
            });
        }
    }
    let mut data = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != p {
            return Err(ModelError::Parse {
                line: lineno,
                msg: format!("expected {p} fields, got {}", fields.len()),
            });
        }
        for f in fields {
            let v: u32 = f.parse().map_err(|_| ModelError::Parse {
                line: lineno,
                msg: format!("invalid level '{f}'"),
            })?;
            data.push(v);
        }
    }
    Ok((p, data))
}

/// Reads a dataset, inferring each cardinality as the column maximum plus
/// one (at least 2).
pub fn parse_csv(text: &str) -> Result<Dataset, ModelError> {
    let (p, data) = parse_csv_values(text)?;
    let mut cards = vec![2u32; p];
    for (k, &v) in data.iter().enumerate() {
        cards[k % p] = cards[k % p].max(v + 1);
    }
    Dataset::from_values(VariableSpec::new(cards)?, data)
}

/// Reads a dataset against a known spec, rejecting out-of-range levels.
pub fn parse_csv_with_spec(text: &str, spec: &VariableSpec) -> Result<Dataset, ModelError> {
    let (p, data) = parse_csv_values(text)?;
    if p != spec.p() {
        return Err(ModelError::Parse {
            line: 1,
            msg: format!("expected {} columns, got {p}", spec.p()),
        });
    }
    Dataset::from_values(spec.clone(), data)
}

pub fn write_csv(d: &Dataset, path: &Path) -> Result<(), ModelError> {
    std::fs::write(path, format_csv(d))?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Dataset, ModelError> {
    parse_csv(&std::fs::read_to_string(path)?)
}
