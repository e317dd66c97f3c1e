//! The black-box label and feature source. Every first query of a node costs
//! budget; repeats are served from a cache for free.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, NodeSet};

pub mod remote;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    #[serde(with = "label01")]
    pub label: bool,
    pub features: Vec<f64>,
    pub cost: u64,
}

pub(crate) mod label01 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            n => Err(serde::de::Error::custom(format!("label must be 0 or 1, got {n}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryBudget {
    limit: u64,
    spent: u64,
}

impl QueryBudget {
    pub fn new(limit: u64) -> Self {
        Self { limit, spent: 0 }
    }

    pub fn unlimited() -> Self {
        Self::new(u64::MAX)
    }

    pub fn limit(&self) -> u64 {
        self.limit
    }

    pub fn spent(&self) -> u64 {
        self.spent
    }

    pub fn remaining(&self) -> u64 {
        self.limit - self.spent
    }

    /// Charge `units`, refusing any charge that would overrun the limit.
    pub fn charge(&mut self, units: u64) -> Result<()> {
        if units > self.remaining() {
            return Err(Error::BudgetExhausted {
                spent: self.spent,
                limit: self.limit,
            });
        }
        self.spent += units;
        Ok(())
    }
}

/// Per-node raw feature vectors. Rows may be absent when only part of the
/// graph has been described.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    data: Array2<f64>,
    present: Vec<bool>,
}

impl FeatureTable {
    pub fn new(node_count: usize, dim: usize) -> Self {
        Self {
            data: Array2::zeros((node_count, dim)),
            present: vec![false; node_count],
        }
    }

    /// A table with every row present.
    pub fn from_array(data: Array2<f64>) -> Self {
        let n = data.nrows();
        Self {
            data,
            present: vec![true; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn node_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn set(&mut self, v: NodeId, features: &[f64]) -> Result<()> {
        if v.index() >= self.node_count() {
            return Err(Error::Domain(format!("feature row for unknown node {v}")));
        }
        if features.len() != self.dim() {
            return Err(Error::Domain(format!(
                "feature row for node {v} has dimension {}, expected {}",
                features.len(),
                self.dim()
            )));
        }
        self.data
            .row_mut(v.index())
            .iter_mut()
            .zip(features)
            .for_each(|(d, &f)| *d = f);
        self.present[v.index()] = true;
        Ok(())
    }

    pub fn get(&self, v: NodeId) -> Option<ArrayView1<'_, f64>> {
        match self.present.get(v.index()) {
            Some(true) => Some(self.data.row(v.index())),
            _ => None,
        }
    }

    pub fn has(&self, v: NodeId) -> bool {
        self.present.get(v.index()).copied().unwrap_or(false)
    }

    pub fn is_complete(&self) -> bool {
        self.present.iter().all(|&p| p)
    }

    /// All rows; absent rows are zero.
    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    /// Write `node_id<TAB>f1,f2,...,fd`, one present row per line.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (i, row) in self.data.outer_iter().enumerate() {
            if !self.present[i] {
                continue;
            }
            let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{i}\t{}", cells.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Read the TSV format; `node_count` sizes the table, the dimension is
    /// taken from the first row.
    pub fn read_tsv(path: &Path, node_count: usize) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut rows: Vec<(NodeId, Vec<f64>)> = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let n = i + 1;
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(n, "expected `node_id<TAB>f1,...,fd`".into()))?;
            let v = id
                .trim()
                .parse::<u32>()
                .map(NodeId)
                .map_err(|_| parse_err(n, format!("invalid node id {id:?}")))?;
            let feats = values
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| parse_err(n, format!("invalid feature value: {e}")))?;
            if let Some((_, first)) = rows.first() {
                if first.len() != feats.len() {
                    return Err(parse_err(
                        n,
                        format!("row has {} features, expected {}", feats.len(), first.len()),
                    ));
                }
            }
            if v.index() >= node_count {
                return Err(Error::Validation(format!(
                    "{}:{n}: features for unknown node {v}",
                    path.display()
                )));
            }
            rows.push((v, feats));
        }
        let dim = rows.first().map_or(0, |(_, f)| f.len());
        let mut table = Self::new(node_count, dim);
        for (v, f) in rows {
            if table.has(v) {
                return Err(Error::Validation(format!(
                    "{}: duplicate features for node {v}",
                    path.display()
                )));
            }
            table.set(v, &f)?;
        }
        Ok(table)
    }
}

/// Query access to the model under test.
pub trait Oracle {
    /// Label and features of `v`. The first query of a node charges
    /// [`Oracle::per_node_cost`]; repeats are free.
    fn query(&mut self, v: NodeId) -> Result<OracleResponse>;

    fn remaining(&self) -> u64;

    fn spent(&self) -> u64;

    fn limit(&self) -> u64 {
        self.spent() + self.remaining()
    }

    fn per_node_cost(&self) -> u64;

    fn is_cached(&self, v: NodeId) -> bool;

    /// Whether a fresh node can still be afforded.
    fn can_afford_new(&self) -> bool {
        self.remaining() >= self.per_node_cost()
    }
}

impl<O: Oracle + ?Sized> Oracle for &mut O {
    fn query(&mut self, v: NodeId) -> Result<OracleResponse> {
        (**self).query(v)
    }
    fn remaining(&self) -> u64 {
        (**self).remaining()
    }
    fn spent(&self) -> u64 {
        (**self).spent()
    }
    fn per_node_cost(&self) -> u64 {
        (**self).per_node_cost()
    }
    fn is_cached(&self, v: NodeId) -> bool {
        (**self).is_cached(v)
    }
}

/// Ground-truth backed oracle used for training and simulation.
#[derive(Clone, Debug)]
pub struct SimulatedOracle {
    labels: Arc<Vec<bool>>,
    features: Arc<FeatureTable>,
    budget: QueryBudget,
    cache: NodeSet,
    per_node_cost: u64,
}

impl SimulatedOracle {
    pub fn new(labels: Arc<Vec<bool>>, features: Arc<FeatureTable>, limit: u64) -> Result<Self> {
        if labels.len() != features.node_count() {
            return Err(Error::Validation(format!(
                "oracle has {} labels but {} feature rows",
                labels.len(),
                features.node_count()
            )));
        }
        if !features.is_complete() {
            return Err(Error::Validation(
                "simulated oracle needs a feature row for every node".into(),
            ));
        }
        let n = labels.len();
        Ok(Self {
            labels,
            features,
            budget: QueryBudget::new(limit),
            cache: NodeSet::new(n),
            per_node_cost: 1,
        })
    }

    pub fn with_per_node_cost(mut self, cost: u64) -> Self {
        self.per_node_cost = cost;
        self
    }

    pub fn budget(&self) -> QueryBudget {
        self.budget
    }

    /// Nodes charged so far, in first-query order.
    pub fn queried(&self) -> &[NodeId] {
        self.cache.as_slice()
    }

    /// A fresh oracle over the same data with a new limit.
    pub fn fresh(&self, limit: u64) -> Self {
        Self {
            labels: Arc::clone(&self.labels),
            features: Arc::clone(&self.features),
            budget: QueryBudget::new(limit),
            cache: NodeSet::new(self.labels.len()),
            per_node_cost: self.per_node_cost,
        }
    }
}

impl Oracle for SimulatedOracle {
    fn query(&mut self, v: NodeId) -> Result<OracleResponse> {
        let i = v.index();
        if i >= self.labels.len() {
            return Err(Error::Domain(format!(
                "query for node {v} out of range ({} nodes)",
                self.labels.len()
            )));
        }
        let cost = if self.cache.contains(v) {
            0
        } else {
            self.budget.charge(self.per_node_cost)?;
            self.cache.insert(v);
            self.per_node_cost
        };
        let features = self
            .features
            .get(v)
            .expect("complete feature table")
            .to_vec();
        Ok(OracleResponse {
            label: self.labels[i],
            features,
            cost,
        })
    }

    fn remaining(&self) -> u64 {
        self.budget.remaining()
    }

    fn spent(&self) -> u64 {
        self.budget.spent()
    }

    fn limit(&self) -> u64 {
        self.budget.limit()
    }

    fn per_node_cost(&self) -> u64 {
        self.per_node_cost
    }

    fn is_cached(&self, v: NodeId) -> bool {
        self.cache.contains(v)
    }
}
