// SPDX-License-Identifier: Apache-2.0

//! Generalized D-retrieval targets `F0(z_1, ..., z_D)` with
//! `z_i = min_{t in S_i} f_i(x(t))` (or `max`), the synthetic
//! max-of-projections task, and dataset sampling / JSON-lines IO.

use std::io::{BufRead, Write};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::matrix::{dot, Matrix};
use crate::numerics::rng;

/// A length-`T` sequence of `d`-dimensional tokens, stored `T x d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Sequence {
    tokens: Matrix,
}

impl Sequence {
    pub fn new(tokens: Matrix) -> Result<Self> {
        if tokens.rows() == 0 || tokens.cols() == 0 {
            return Err(invalid!("empty sequence"));
        }
        if !tokens.is_finite() {
            return Err(invalid!("sequence has non-finite entries"));
        }
        Ok(Self { tokens })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    /// Scalar tokens (`d = 1`).
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(Matrix::column(values.to_vec()))
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.tokens.rows() == 0
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    #[inline]
    pub fn token(&self, t: usize) -> &[f64] {
        self.tokens.row(t)
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn tokens_mut(&mut self) -> &mut Matrix {
        &mut self.tokens
    }

    /// Token `perm[t]` moves to position `t`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let tokens = Matrix::from_fn(self.len(), self.dim(), |t, j| self.tokens[(perm[t], j)]);
        Self { tokens }
    }

    pub fn in_unit_cube(&self) -> bool {
        self.tokens.as_slice().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl TryFrom<Vec<Vec<f64>>> for Sequence {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl From<Sequence> for Vec<Vec<f64>> {
    fn from(s: Sequence) -> Self {
        (0..s.len()).map(|t| s.token(t).to_vec()).collect()
    }
}

/// Per-token component function `f_i : R^d -> R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComponentFn {
    /// `x -> x_j`.
    Coordinate { index: usize },
    /// `x -> w . x + b`.
    Affine { weights: Vec<f64>, bias: f64 },
    /// `x -> scale * |x - center|^2`; smooth with a unique minimizer.
    Quadratic { center: Vec<f64>, scale: f64 },
}

impl ComponentFn {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Coordinate { index } => x[*index],
            Self::Affine { weights, bias } => dot(weights, x) + bias,
            Self::Quadratic { center, scale } => {
                scale * x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>()
            }
        }
    }

    /// Input dimension the function requires, if it pins one.
    fn required_dim(&self) -> Option<usize> {
        match self {
            Self::Coordinate { .. } => None,
            Self::Affine { weights, .. } => Some(weights.len()),
            Self::Quadratic { center, .. } => Some(center.len()),
        }
    }

    fn fits(&self, d: usize) -> bool {
        match self {
            Self::Coordinate { index } => *index < d,
            _ => self.required_dim() == Some(d),
        }
    }

    /// Affine form `(w, b)` when the function is affine.
    pub fn as_affine(&self, d: usize) -> Option<(Vec<f64>, f64)> {
        match self {
            Self::Coordinate { index } => {
                let mut w = vec![0.0; d];
                w[*index] = 1.0;
                Some((w, 0.0))
            }
            Self::Affine { weights, bias } => Some((weights.clone(), *bias)),
            Self::Quadratic { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Extremum {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexSet {
    /// Every position `1..=T`.
    All,
    /// Zero-based positions.
    Positions(Vec<usize>),
}

impl IndexSet {
    pub fn size(&self, seq_len: usize) -> usize {
        match self {
            Self::All => seq_len,
            Self::Positions(p) => p.len(),
        }
    }

    pub fn contains(&self, t: usize) -> bool {
        match self {
            Self::All => true,
            Self::Positions(p) => p.contains(&t),
        }
    }

    pub fn positions(&self, seq_len: usize) -> Vec<usize> {
        match self {
            Self::All => (0..seq_len).collect(),
            Self::Positions(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub f: ComponentFn,
    pub extremum: Extremum,
    pub index_set: IndexSet,
}

/// Outer aggregation `F0 : R^D -> R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OuterFn {
    Sum,
    Affine { weights: Vec<f64>, bias: f64 },
}

impl OuterFn {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Self::Sum => z.iter().sum(),
            Self::Affine { weights, bias } => dot(weights, z) + bias,
        }
    }

    /// `(w, b)` with `F0(z) = w . z + b`.
    pub fn as_affine(&self, dim: usize) -> (Vec<f64>, f64) {
        match self {
            Self::Sum => (vec![1.0; dim], 0.0),
            Self::Affine { weights, bias } => (weights.clone(), *bias),
        }
    }

    /// `sup_z |grad F0(z)|_1`, the Lipschitz constant with respect to the
    /// sup norm on `z`.
    pub fn lipschitz_l1(&self, dim: usize) -> f64 {
        self.as_affine(dim).0.iter().map(|w| w.abs()).sum()
    }
}

/// How tokens are drawn when sampling a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenDistribution {
    /// i.i.d. `N(0, I_d)`.
    Gaussian,
    /// i.i.d. uniform on `[0, 1]^d`.
    UnitCube,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTask {
    pub id: String,
    /// Fixed sequence length, or `None` when every index set is `All`.
    pub seq_len: Option<usize>,
    pub input_dim: usize,
    pub components: Vec<Component>,
    pub outer: OuterFn,
    pub inputs: TokenDistribution,
}

impl RetrievalTask {
    pub fn new(
        id: impl Into<String>,
        seq_len: Option<usize>,
        input_dim: usize,
        components: Vec<Component>,
        outer: OuterFn,
        inputs: TokenDistribution,
    ) -> Result<Self> {
        let task = Self {
            id: id.into(),
            seq_len,
            input_dim,
            components,
            outer,
            inputs,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(invalid!("intrinsic dimension must be at least 1"));
        }
        if self.input_dim == 0 {
            return Err(invalid!("token dimension must be positive"));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !c.f.fits(self.input_dim) {
                return Err(invalid!("component {i} does not accept {}-dim tokens", self.input_dim));
            }
            if let IndexSet::Positions(p) = &c.index_set {
                let t = self
                    .seq_len
                    .ok_or_else(|| invalid!("component {i} has explicit positions but no fixed length"))?;
                let min_size = t.div_ceil(4);
                if p.len() < min_size {
                    return Err(invalid!("component {i}: |S_i| = {} < ceil(T/4) = {min_size}", p.len()));
                }
                if p.iter().any(|&s| s >= t) {
                    return Err(invalid!("component {i}: position out of range for T = {t}"));
                }
                let mut sorted = p.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != p.len() {
                    return Err(invalid!("component {i}: duplicate positions"));
                }
            }
        }
        if let OuterFn::Affine { weights, .. } = &self.outer {
            if weights.len() != self.components.len() {
                return Err(invalid!("outer function expects {} inputs", weights.len()));
            }
        }
        Ok(())
    }

    /// Intrinsic dimension `D`.
    pub fn intrinsic_dim(&self) -> usize {
        self.components.len()
    }

    pub fn check_sequence(&self, x: &Sequence) -> Result<()> {
        if let Some(t) = self.seq_len {
            if x.len() != t {
                return Err(invalid!("sequence length {} does not match task length {t}", x.len()));
            }
        }
        if x.dim() != self.input_dim {
            return Err(invalid!(
                "token dimension {} does not match task dimension {}",
                x.dim(),
                self.input_dim
            ));
        }
        Ok(())
    }

    /// The retrieved features `z_1, ..., z_D`.
    pub fn features(&self, x: &Sequence) -> Result<Vec<f64>> {
        self.check_sequence(x)?;
        Ok(self
            .components
            .iter()
            .map(|c| {
                let values = c.index_set.positions(x.len()).into_iter().map(|t| c.f.eval(x.token(t)));
                match c.extremum {
                    Extremum::Min => values.fold(f64::INFINITY, f64::min),
                    // max_t f = -min_t(-f)
                    Extremum::Max => -values.map(|v| -v).fold(f64::INFINITY, f64::min),
                }
            })
            .collect())
    }

    /// Directions `a_i` when every component is affine with zero bias.
    pub fn directions(&self) -> Option<Vec<Vec<f64>>> {
        self.components
            .iter()
            .map(|c| match &c.f {
                ComponentFn::Affine { weights, bias } if *bias == 0.0 => Some(weights.clone()),
                _ => None,
            })
            .collect()
    }
}

/// `F0(z_1(x), ..., z_D(x))`.
pub fn evaluate_target(task: &RetrievalTask, x: &Sequence) -> Result<f64> {
    let z = task.features(x)?;
    Ok(task.outer.eval(&z))
}

/// `H(x) = max_t x(t) + min_t x(t)` on scalar tokens in `[0, 1]`.
pub fn toy_max_plus_min(seq_len: usize) -> RetrievalTask {
    let coord = ComponentFn::Coordinate { index: 0 };
    RetrievalTask::new(
        "toy-max-plus-min",
        Some(seq_len),
        1,
        vec![
            Component {
                f: coord.clone(),
                extremum: Extremum::Max,
                index_set: IndexSet::All,
            },
            Component {
                f: coord,
                extremum: Extremum::Min,
                index_set: IndexSet::All,
            },
        ],
        OuterFn::Sum,
        TokenDistribution::UnitCube,
    )
    .expect("toy task is well formed")
}

const SYNTHETIC_DIM: usize = 4;
const TASK_STREAM: u64 = 0x7a5c;

/// `y = sum_{i=1}^{4} max_t a_i . x(t)` with unit-norm `a_i` drawn from `seed`.
pub fn make_synthetic_task(seed: u64) -> RetrievalTask {
    let mut rng = rng::stream(seed, &[TASK_STREAM]);
    let directions = (0..SYNTHETIC_DIM)
        .map(|_| loop {
            let a: Vec<f64> = (0..SYNTHETIC_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = dot(&a, &a).sqrt();
            if norm > 1e-6 {
                break a.into_iter().map(|v| v / norm).collect::<Vec<f64>>();
            }
        })
        .collect();
    synthetic_task_with_directions(format!("synthetic-max4-seed{seed}"), directions)
        .expect("directions are 4-dimensional")
}

/// The synthetic task with caller-chosen directions (test fixtures).
pub fn synthetic_task_with_directions(id: String, directions: Vec<Vec<f64>>) -> Result<RetrievalTask> {
    let d = directions.first().map_or(0, Vec::len);
    let components = directions
        .into_iter()
        .map(|a| Component {
            f: ComponentFn::Affine { weights: a, bias: 0.0 },
            extremum: Extremum::Max,
            index_set: IndexSet::All,
        })
        .collect();
    RetrievalTask::new(id, None, d, components, OuterFn::Sum, TokenDistribution::Gaussian)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub tokens: Sequence,
    pub label: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub seq_len: usize,
    pub input_dim: usize,
    pub task_id: String,
    pub distribution: TokenDistribution,
    /// `a_i` for projection tasks.
    pub directions: Option<Vec<Vec<f64>>>,
    pub task: RetrievalTask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: Vec<Record>,
    pub val: Vec<Record>,
}

const TRAIN_STREAM: u64 = 0x7472;
const VAL_STREAM: u64 = 0x7661;

pub fn sample_sequence(rng: &mut rng::Rng, seq_len: usize, dim: usize, dist: TokenDistribution) -> Sequence {
    let data: Vec<f64> = (0..seq_len * dim)
        .map(|_| match dist {
            TokenDistribution::Gaussian => StandardNormal.sample(rng),
            TokenDistribution::UnitCube => rng.random::<f64>(),
        })
        .collect();
    Sequence {
        tokens: Matrix::from_vec(seq_len, dim, data).expect("sampled values are finite"),
    }
}

/// Draws train and validation splits from disjoint random streams and labels
/// them with [`evaluate_target`].
pub fn sample_dataset(
    task: &RetrievalTask,
    seq_len: usize,
    n_train: usize,
    n_val: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_train == 0 || n_val == 0 {
        return Err(invalid!("dataset splits must be non-empty"));
    }
    if seq_len == 0 {
        return Err(invalid!("sequence length must be positive"));
    }
    if let Some(t) = task.seq_len {
        if t != seq_len {
            return Err(invalid!("task is fixed to T = {t}, asked for {seq_len}"));
        }
    }
    let draw = |stream: u64, n: usize| -> Result<Vec<Record>> {
        let mut rng = rng::stream(seed, &[stream, seq_len as u64]);
        (0..n)
            .map(|_| {
                let tokens = sample_sequence(&mut rng, seq_len, task.input_dim, task.inputs);
                let label = evaluate_target(task, &tokens)?;
                Ok(Record { tokens, label })
            })
            .collect()
    };
    Ok(Dataset {
        meta: DatasetMeta {
            seed,
            seq_len,
            input_dim: task.input_dim,
            task_id: task.id.clone(),
            distribution: task.inputs,
            directions: task.directions(),
            task: task.clone(),
        },
        train: draw(TRAIN_STREAM, n_train)?,
        val: draw(VAL_STREAM, n_val)?,
    })
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    meta: DatasetMeta,
    n_train: usize,
    n_val: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    split: Split,
    tokens: Sequence,
    label: f64,
}

#[derive(Serialize, Deserialize, PartialEq, Eq, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum Split {
    Train,
    Val,
}

impl Dataset {
    /// Writes a metadata header line followed by one JSON record per line.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let header = HeaderLine {
            meta: self.meta.clone(),
            n_train: self.train.len(),
            n_val: self.val.len(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for (split, records) in [(Split::Train, &self.train), (Split::Val, &self.val)] {
            for r in records {
                let line = RecordLine {
                    split,
                    tokens: r.tokens.clone(),
                    label: r.label,
                };
                serde_json::to_writer(&mut w, &line)?;
                writeln!(w)?;
            }
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header: HeaderLine = match lines.next() {
            Some(line) => serde_json::from_str(&line?)?,
            None => return Err(invalid!("empty dataset file")),
        };
        let mut train = Vec::with_capacity(header.n_train);
        let mut val = Vec::with_capacity(header.n_val);
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: RecordLine = serde_json::from_str(&line)?;
            let record = Record {
                tokens: rec.tokens,
                label: rec.label,
            };
            match rec.split {
                Split::Train => train.push(record),
                Split::Val => val.push(record),
            }
        }
        if train.len() != header.n_train || val.len() != header.n_val {
            return Err(invalid!(
                "dataset header promises {}/{} records, found {}/{}",
                header.n_train,
                header.n_val,
                train.len(),
                val.len()
            ));
        }
        Ok(Self {
            meta: header.meta,
            train,
            val,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn identity_task(t: usize) -> RetrievalTask {
        RetrievalTask::new(
            "id",
            Some(t),
            1,
            vec![Component {
                f: ComponentFn::Coordinate { index: 0 },
                extremum: Extremum::Min,
                index_set: IndexSet::All,
            }],
            OuterFn::Sum,
            TokenDistribution::UnitCube,
        )
        .unwrap()
    }

    #[test]
    fn direct_min() {
        let x = Sequence::from_scalars(&[0.3, 0.7, 0.1]).unwrap();
        assert_eq!(evaluate_target(&identity_task(3), &x).unwrap(), 0.1);
    }

    #[test]
    fn toy_target_hand_value() {
        let x = Sequence::from_scalars(&[0.2, 0.9, 0.5]).unwrap();
        let y = evaluate_target(&toy_max_plus_min(3), &x).unwrap();
        assert!((y - 1.1).abs() < 1e-15);
    }

    #[test]
    fn constant_sequence_collapses_min() {
        let task = toy_max_plus_min(5);
        let x = Sequence::from_scalars(&[0.42; 5]).unwrap();
        assert_eq!(evaluate_target(&task, &x).unwrap(), 0.84);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let x = Sequence::from_scalars(&[0.2, 0.9]).unwrap();
        assert!(evaluate_target(&toy_max_plus_min(3), &x).is_err());
    }

    #[test]
    fn small_index_sets_are_rejected() {
        let comp = |p: Vec<usize>| Component {
            f: ComponentFn::Coordinate { index: 0 },
            extremum: Extremum::Min,
            index_set: IndexSet::Positions(p),
        };
        let mk = |p| {
            RetrievalTask::new(
                "s",
                Some(9),
                1,
                vec![comp(p)],
                OuterFn::Sum,
                TokenDistribution::UnitCube,
            )
        };
        // ceil(9/4) = 3
        assert!(mk(vec![0, 4]).is_err());
        assert!(mk(vec![0, 4, 8]).is_ok());
        assert!(mk(vec![0, 4, 9]).is_err());
    }

    #[test]
    fn synthetic_identity_fixture() {
        let eye: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        let task = synthetic_task_with_directions("eye".into(), eye.clone()).unwrap();
        let x = Sequence::from_rows(&eye).unwrap();
        assert_eq!(evaluate_target(&task, &x).unwrap(), 4.0);

        let one = Sequence::from_rows(&[vec![0.5, -1.0, 2.0, 0.25]]).unwrap();
        let seeded = make_synthetic_task(3);
        let dirs = seeded.directions().unwrap();
        let expect: f64 = dirs.iter().map(|a| dot(a, one.token(0))).sum();
        assert!((evaluate_target(&seeded, &one).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn synthetic_task_is_seeded_and_unit_norm() {
        let a = make_synthetic_task(11);
        assert_eq!(a, make_synthetic_task(11));
        assert_ne!(a, make_synthetic_task(12));
        for dir in a.directions().unwrap() {
            assert!((dot(&dir, &dir) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_sized_dataset() {
        let task = make_synthetic_task(0);
        let ds = sample_dataset(&task, 8, 8000, 2000, 1).unwrap();
        assert_eq!((ds.train.len(), ds.val.len()), (8000, 2000));
        let labels: Vec<f64> = ds.train.iter().map(|r| r.label).collect();
        let mean = labels.iter().sum::<f64>() / labels.len() as f64;
        let var = labels.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / labels.len() as f64;
        assert!(var > 0.0);
        for r in ds.train.iter().chain(&ds.val) {
            assert_eq!(evaluate_target(&task, &r.tokens).unwrap(), r.label);
        }
        assert_eq!(ds, sample_dataset(&task, 8, 8000, 2000, 1).unwrap());
        assert_ne!(ds.train[0], ds.val[0]);
    }

    #[test]
    fn jsonl_round_trip() {
        let task = make_synthetic_task(5);
        let ds = sample_dataset(&task, 4, 7, 3, 2).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = Dataset::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, ds);
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 1 + 7 + 3);
    }

    #[test]
    fn empty_split_is_rejected() {
        assert!(sample_dataset(&make_synthetic_task(0), 4, 0, 3, 0).is_err());
    }

    proptest! {
        #[test]
        fn max_is_negated_min_of_negation(values in prop::collection::vec(-3.0f64..3.0, 1..30)) {
            let x = Sequence::from_scalars(&values).unwrap();
            let mk = |f, e| RetrievalTask::new("p", None, 1, vec![Component { f, extremum: e, index_set: IndexSet::All }], OuterFn::Sum, TokenDistribution::Gaussian).unwrap();
            let max = evaluate_target(&mk(ComponentFn::Coordinate { index: 0 }, Extremum::Max), &x).unwrap();
            let neg = ComponentFn::Affine { weights: vec![-1.0], bias: 0.0 };
            let min_neg = evaluate_target(&mk(neg, Extremum::Min), &x).unwrap();
            prop_assert!((max + min_neg).abs() <= 1e-15);
        }

        #[test]
        fn features_invariant_to_permutation_within_set(seed in 0u64..500) {
            let mut r = rng::stream(seed, &[9]);
            let t = 8;
            let set = vec![0, 2, 3, 5, 7];
            let task = RetrievalTask::new(
                "perm", Some(t), 2,
                vec![Component { f: ComponentFn::Quadratic { center: vec![0.3, 0.6], scale: 1.0 }, extremum: Extremum::Min, index_set: IndexSet::Positions(set.clone()) }],
                OuterFn::Sum, TokenDistribution::UnitCube).unwrap();
            let x = sample_sequence(&mut r, t, 2, TokenDistribution::UnitCube);
            let mut shuffled = set.clone();
            shuffled.shuffle(&mut r);
            let mut perm: Vec<usize> = (0..t).collect();
            for (&from, &to) in set.iter().zip(&shuffled) {
                perm[to] = from;
            }
            prop_assert_eq!(task.features(&x).unwrap(), task.features(&x.permuted(&perm)).unwrap());
        }
    }
}
