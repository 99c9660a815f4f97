//! Graph values over the anchored agent frame.
//!
//! Orientation everywhere is `w[i][j]` = weight of the directed edge `i -> j`.
//! Thresholds are inclusive (`>=`) for both node masks and edges.

use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::task::TaskCategory;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("invalid member list: {0}")]
    InvalidMembers(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionError { expected: usize, actual: usize },
    #[error("degenerate topology: {active} active node(s), at least 2 required")]
    DegenerateTopology { active: usize },
    #[error("invalid graph value: {0}")]
    Invalid(String),
    #[error("malformed topology document: {0}")]
    Format(String),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// Binary directed adjacency with an empty diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adj: Array2<bool>,
}

impl Topology {
    pub fn new(adj: Array2<bool>) -> Result<Self> {
        let (rows, cols) = adj.dim();
        if rows != cols {
            return Err(GraphError::DimensionError { expected: rows, actual: cols });
        }
        if (0..rows).any(|i| adj[[i, i]]) {
            return Err(GraphError::Invalid("self-loop on the diagonal".into()));
        }
        Ok(Self { adj })
    }

    pub fn empty(n: usize) -> Self {
        Self { adj: Array2::from_elem((n, n), false) }
    }

    /// The complete directed graph `K_n`.
    pub fn complete(n: usize) -> Self {
        Self { adj: Array2::from_shape_fn((n, n), |(i, j)| i != j) }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = Array2::from_elem((n, n), false);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::Invalid(format!("edge ({i}, {j}) outside {n} nodes")));
            }
            if i == j {
                return Err(GraphError::Invalid("self-loop on the diagonal".into()));
            }
            adj[[i, j]] = true;
        }
        Ok(Self { adj })
    }

    pub fn n(&self) -> usize {
        self.adj.nrows()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.adj[[from, to]]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&e| e).count()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.indexed_iter().filter(|(_, &e)| e).map(|(ij, _)| ij)
    }

    pub fn adj(&self) -> &Array2<bool> {
        &self.adj
    }
}

/// Real edge weights in `[0, 1]` with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    w: Array2<f64>,
}

impl WeightMatrix {
    pub fn new(w: Array2<f64>) -> Result<Self> {
        let (rows, cols) = w.dim();
        if rows != cols {
            return Err(GraphError::DimensionError { expected: rows, actual: cols });
        }
        for ((i, j), &v) in w.indexed_iter() {
            if !(0.0..=1.0).contains(&v) {
                return Err(GraphError::Invalid(format!("w[{i}][{j}] = {v} outside [0, 1]")));
            }
            if i == j && v != 0.0 {
                return Err(GraphError::Invalid(format!("nonzero diagonal w[{i}][{i}] = {v}")));
            }
        }
        Ok(Self { w })
    }

    pub fn zeros(n: usize) -> Self {
        Self { w: Array2::zeros((n, n)) }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut w = Array2::zeros((n, n));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(GraphError::DimensionError { expected: n, actual: row.len() });
            }
            for (j, &v) in row.iter().enumerate() {
                w[[i, j]] = v;
            }
        }
        Self::new(w)
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.w[[from, to]]
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn into_array(self) -> Array2<f64> {
        self.w
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.w.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// The `members x members` block, in member order.
    pub fn restrict(&self, members: &[usize]) -> Array2<f64> {
        Array2::from_shape_fn((members.len(), members.len()), |(a, b)| {
            self.w[[members[a], members[b]]]
        })
    }
}

/// Binary node mask; `true` keeps the agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeMask {
    bits: Vec<bool>,
}

impl NodeMask {
    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn all(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    pub fn from_members(n: usize, members: &[usize]) -> Result<Self> {
        let mut bits = vec![false; n];
        for &m in members {
            if m >= n {
                return Err(GraphError::InvalidMembers(format!("id {m} >= {n}")));
            }
            bits[m] = true;
        }
        Ok(Self { bits })
    }

    pub fn n(&self) -> usize {
        self.bits.len()
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn active_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn active(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }

    pub fn members(&self) -> Vec<usize> {
        self.active().collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

fn check_members(members: &[usize], n_max: usize) -> Result<()> {
    if let Some(&bad) = members.iter().find(|&&m| m >= n_max) {
        return Err(GraphError::InvalidMembers(format!("id {bad} >= n_max {n_max}")));
    }
    if members.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GraphError::InvalidMembers(format!(
            "members must be strictly ascending without duplicates: {members:?}"
        )));
    }
    Ok(())
}

/// Re-indexes a mined subgraph into the `n_max` frame. Everything outside the
/// member block is zero.
pub fn lift_subgraph(
    sub: &Topology,
    members: &[usize],
    n_max: usize,
) -> Result<(WeightMatrix, NodeMask)> {
    if members.len() != sub.n() {
        return Err(GraphError::InvalidMembers(format!(
            "{} members for a {}-node subgraph",
            members.len(),
            sub.n()
        )));
    }
    check_members(members, n_max)?;
    let mut w = Array2::zeros((n_max, n_max));
    for (a, b) in sub.edges() {
        w[[members[a], members[b]]] = 1.0;
    }
    let mask = NodeMask::from_members(n_max, members)?;
    Ok((WeightMatrix { w }, mask))
}

/// Zeroes every row and column of masked-out nodes.
pub fn induce(weights: &WeightMatrix, mask: &NodeMask) -> Result<CommTopology> {
    if weights.n() != mask.n() {
        return Err(GraphError::DimensionError { expected: weights.n(), actual: mask.n() });
    }
    let active = mask.active_count();
    if active < 2 {
        return Err(GraphError::DegenerateTopology { active });
    }
    let w = Array2::from_shape_fn(weights.w.dim(), |(i, j)| {
        if mask.is_active(i) && mask.is_active(j) {
            weights.w[[i, j]]
        } else {
            0.0
        }
    });
    Ok(CommTopology { mask: mask.clone(), weights: WeightMatrix { w } })
}

/// Keeps the off-diagonal edges with `w >= theta`.
pub fn binarize(weights: &WeightMatrix, theta: f64) -> Topology {
    let adj = Array2::from_shape_fn(weights.w.dim(), |(i, j)| i != j && weights.w[[i, j]] >= theta);
    Topology { adj }
}

/// A designed communication graph: node mask plus masked edge weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TopologyDoc", into = "TopologyDoc")]
pub struct CommTopology {
    mask: NodeMask,
    weights: WeightMatrix,
}

impl CommTopology {
    pub fn new(mask: NodeMask, weights: WeightMatrix) -> Result<Self> {
        if weights.n() != mask.n() {
            return Err(GraphError::DimensionError { expected: weights.n(), actual: mask.n() });
        }
        for ((i, j), &v) in weights.w.indexed_iter() {
            if v != 0.0 && !(mask.is_active(i) && mask.is_active(j)) {
                return Err(GraphError::Invalid(format!(
                    "edge {i} -> {j} has weight {v} but touches a masked node"
                )));
            }
        }
        let active = mask.active_count();
        if active < 2 {
            return Err(GraphError::DegenerateTopology { active });
        }
        Ok(Self { mask, weights })
    }

    pub fn n_max(&self) -> usize {
        self.mask.n()
    }

    pub fn mask(&self) -> &NodeMask {
        &self.mask
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&TopologyDoc::from(self)).expect("topology serializes")
    }

    pub fn to_dot(&self, labels: Option<&[String]>) -> String {
        let mut out = String::from("digraph topology {\n");
        for i in self.mask.active() {
            match labels.and_then(|l| l.get(i)) {
                Some(label) => {
                    let _ = writeln!(out, "    {i} [label=\"{i}: {}\"];", escape_dot(label));
                }
                None => {
                    let _ = writeln!(out, "    {i};");
                }
            }
        }
        for ((i, j), &v) in self.weights.w.indexed_iter() {
            if i != j && v >= 0.5 {
                let _ = writeln!(out, "    {i} -> {j} [label=\"{v:.3}\"];");
            }
        }
        out.push_str("}\n");
        out
    }
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyFormat {
    Json,
    Dot,
}

impl std::str::FromStr for TopologyFormat {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "dot" => Ok(Self::Dot),
            other => Err(GraphError::Format(format!("unknown format {other:?}"))),
        }
    }
}

pub fn serialize_topology(t: &CommTopology, format: TopologyFormat) -> Vec<u8> {
    match format {
        TopologyFormat::Json => t.to_json().into_bytes(),
        TopologyFormat::Dot => t.to_dot(None).into_bytes(),
    }
}

pub fn parse_topology(bytes: &[u8]) -> Result<CommTopology> {
    let doc: TopologyDoc =
        serde_json::from_slice(bytes).map_err(|e| GraphError::Format(e.to_string()))?;
    doc.try_into()
}

#[derive(Serialize, Deserialize)]
struct TopologyDoc {
    n_max: usize,
    mask: Vec<u8>,
    weights: Vec<Vec<f64>>,
}

impl From<&CommTopology> for TopologyDoc {
    fn from(t: &CommTopology) -> Self {
        Self {
            n_max: t.n_max(),
            mask: t.mask.bits.iter().map(|&b| u8::from(b)).collect(),
            weights: t.weights.to_rows(),
        }
    }
}

impl From<CommTopology> for TopologyDoc {
    fn from(t: CommTopology) -> Self {
        Self::from(&t)
    }
}

impl TryFrom<TopologyDoc> for CommTopology {
    type Error = GraphError;

    fn try_from(doc: TopologyDoc) -> Result<Self> {
        if doc.mask.len() != doc.n_max {
            return Err(GraphError::DimensionError { expected: doc.n_max, actual: doc.mask.len() });
        }
        let bits = doc
            .mask
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(GraphError::Format(format!("mask entry {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = WeightMatrix::from_rows(&doc.weights)?;
        if weights.n() != doc.n_max {
            return Err(GraphError::DimensionError { expected: doc.n_max, actual: weights.n() });
        }
        CommTopology::new(NodeMask::from_bits(bits), weights)
    }
}

/// One Stage I label: a task with its lifted edge matrix and node mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PairDoc", into = "PairDoc")]
pub struct SupervisionPair {
    pub task_id: String,
    pub task_text: String,
    pub category: TaskCategory,
    pub score: f64,
    pub y: NodeMask,
    pub a_gt: WeightMatrix,
}

impl SupervisionPair {
    pub fn validate(&self) -> Result<()> {
        if self.y.n() != self.a_gt.n() {
            return Err(GraphError::DimensionError { expected: self.a_gt.n(), actual: self.y.n() });
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(GraphError::Invalid(format!("score {} outside [0, 1]", self.score)));
        }
        let active = self.y.active_count();
        if active < 2 {
            return Err(GraphError::DegenerateTopology { active });
        }
        for ((i, j), &v) in self.a_gt.w.indexed_iter() {
            if v != 0.0 && !(self.y.is_active(i) && self.y.is_active(j)) {
                return Err(GraphError::Invalid(format!(
                    "a_gt[{i}][{j}] = {v} outside the node mask"
                )));
            }
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        self.y.n()
    }
}

#[derive(Serialize, Deserialize)]
struct PairDoc {
    task_id: String,
    task_text: String,
    category: TaskCategory,
    score: f64,
    y: Vec<u8>,
    a_gt: Vec<Vec<f64>>,
}

impl From<SupervisionPair> for PairDoc {
    fn from(p: SupervisionPair) -> Self {
        Self {
            task_id: p.task_id,
            task_text: p.task_text,
            category: p.category,
            score: p.score,
            y: p.y.bits.iter().map(|&b| u8::from(b)).collect(),
            a_gt: p.a_gt.to_rows(),
        }
    }
}

impl TryFrom<PairDoc> for SupervisionPair {
    type Error = GraphError;

    fn try_from(doc: PairDoc) -> Result<Self> {
        let bits = doc
            .y
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(GraphError::Format(format!("mask entry {other} is not 0 or 1"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let pair = SupervisionPair {
            task_id: doc.task_id,
            task_text: doc.task_text,
            category: doc.category,
            score: doc.score,
            y: NodeMask::from_bits(bits),
            a_gt: WeightMatrix::from_rows(&doc.a_gt)?,
        };
        pair.validate()?;
        Ok(pair)
    }
}
