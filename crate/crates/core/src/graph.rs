//! Immutable topic graph: adjacency, optional titles and ground-truth labels,
//! plus the TSV formats it is stored in.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense node index in `[0, node_count)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl From<usize> for NodeId {
    fn from(i: usize) -> Self {
        NodeId(u32::try_from(i).expect("node index exceeds u32"))
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Hop count, or `Infinite` when no qualifying node is reachable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Distance {
    Finite(u32),
    Infinite,
}

impl Distance {
    pub fn finite(self) -> Option<u32> {
        match self {
            Distance::Finite(d) => Some(d),
            Distance::Infinite => None,
        }
    }
}

/// A set of nodes with O(1) membership and insertion-ordered iteration.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NodeSet {
    mask: Vec<bool>,
    order: Vec<NodeId>,
}

impl NodeSet {
    pub fn new(node_count: usize) -> Self {
        Self {
            mask: vec![false; node_count],
            order: Vec::new(),
        }
    }

    pub fn from_nodes(node_count: usize, nodes: impl IntoIterator<Item = NodeId>) -> Self {
        let mut set = Self::new(node_count);
        for v in nodes {
            set.insert(v);
        }
        set
    }

    #[inline]
    pub fn contains(&self, v: NodeId) -> bool {
        self.mask.get(v.index()).copied().unwrap_or(false)
    }

    /// Returns `true` if `v` was not already present.
    pub fn insert(&mut self, v: NodeId) -> bool {
        let i = v.index();
        if i >= self.mask.len() {
            self.mask.resize(i + 1, false);
        }
        if self.mask[i] {
            return false;
        }
        self.mask[i] = true;
        self.order.push(v);
        true
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Members in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.order.iter().copied()
    }

    pub fn as_slice(&self) -> &[NodeId] {
        &self.order
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeGraph {
    adjacency: Vec<Vec<NodeId>>,
    titles: Option<BTreeMap<NodeId, String>>,
    labels: Option<Vec<bool>>,
}

impl KnowledgeGraph {
    /// Build an undirected graph. Edge direction is discarded; self-loops
    /// and repeated edges are dropped.
    pub fn from_edges(
        node_count: usize,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Result<Self> {
        let mut adjacency = vec![Vec::new(); node_count];
        for (a, b) in edges {
            for v in [a, b] {
                if v.index() >= node_count {
                    return Err(Error::Validation(format!(
                        "edge ({a}, {b}) references unknown node {v} (graph has {node_count} nodes)"
                    )));
                }
            }
            if a == b {
                continue;
            }
            adjacency[a.index()].push(b);
            adjacency[b.index()].push(a);
        }
        for list in &mut adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self {
            adjacency,
            titles: None,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != self.node_count() {
            return Err(Error::Validation(format!(
                "expected {} labels, got {}",
                self.node_count(),
                labels.len()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_titles(mut self, titles: BTreeMap<NodeId, String>) -> Result<Self> {
        if let Some((&v, _)) = titles.iter().find(|(v, _)| v.index() >= self.node_count()) {
            return Err(Error::Validation(format!("title for unknown node {v}")));
        }
        self.titles = Some(titles);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.node_count()).map(NodeId::from)
    }

    /// Undirected edges, each once as `(low, high)`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(i, nb)| {
            let v = NodeId::from(i);
            nb.iter().copied().filter(move |&u| u > v).map(move |u| (v, u))
        })
    }

    pub fn check_node(&self, v: NodeId) -> Result<()> {
        if v.index() < self.node_count() {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "node {v} out of range (graph has {} nodes)",
                self.node_count()
            )))
        }
    }

    /// Sorted neighbour list of `v`.
    pub fn neighbors(&self, v: NodeId) -> Result<&[NodeId]> {
        self.check_node(v)?;
        Ok(&self.adjacency[v.index()])
    }

    /// Unchecked variant for hot loops over ids already known to be valid.
    #[inline]
    pub(crate) fn nb(&self, v: NodeId) -> &[NodeId] {
        &self.adjacency[v.index()]
    }

    pub fn degree(&self, v: NodeId) -> usize {
        self.adjacency.get(v.index()).map_or(0, Vec::len)
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn label(&self, v: NodeId) -> Option<bool> {
        self.labels.as_ref().and_then(|l| l.get(v.index()).copied())
    }

    pub fn titles(&self) -> Option<&BTreeMap<NodeId, String>> {
        self.titles.as_ref()
    }

    /// Ground-truth bias nodes in ascending order (empty without labels).
    pub fn bias_nodes(&self) -> Vec<NodeId> {
        match &self.labels {
            Some(l) => l
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .map(|(i, _)| NodeId::from(i))
                .collect(),
            None => Vec::new(),
        }
    }

    /// Breadth-first hop count from `from` to the closest node with label 1
    /// that is not in `tested`. Zero when `from` itself qualifies.
    pub fn dist_to_nearest_untested_bias(&self, from: NodeId, tested: &NodeSet) -> Result<Distance> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::State("dist requires ground truth labels".into()))?;
        self.check_node(from)?;
        let qualifies = |v: NodeId| labels[v.index()] && !tested.contains(v);
        if qualifies(from) {
            return Ok(Distance::Finite(0));
        }
        let mut depth = vec![u32::MAX; self.node_count()];
        let mut queue = VecDeque::new();
        depth[from.index()] = 0;
        queue.push_back(from);
        while let Some(v) = queue.pop_front() {
            let d = depth[v.index()] + 1;
            for &u in self.nb(v) {
                if depth[u.index()] != u32::MAX {
                    continue;
                }
                if qualifies(u) {
                    return Ok(Distance::Finite(d));
                }
                depth[u.index()] = d;
                queue.push_back(u);
            }
        }
        Ok(Distance::Infinite)
    }

    /// Full scan of the structural invariants.
    pub fn validate(&self) -> Result<()> {
        for (i, nb) in self.adjacency.iter().enumerate() {
            let v = NodeId::from(i);
            for w in nb.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::Validation(format!(
                        "neighbours of {v} not strictly ascending"
                    )));
                }
            }
            for &u in nb {
                if u == v {
                    return Err(Error::Validation(format!("self-loop at {v}")));
                }
                if self.nb(u).binary_search(&v).is_err() {
                    return Err(Error::Validation(format!("edge {v}->{u} has no reverse")));
                }
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != self.node_count() {
                return Err(Error::Validation("label count differs from node count".into()));
            }
        }
        Ok(())
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

fn parse_id(path: &Path, line: usize, field: &str) -> Result<NodeId> {
    field
        .parse::<u32>()
        .map(NodeId)
        .map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("invalid node id {field:?}"),
        })
}

fn is_skippable(line: &str) -> bool {
    let t = line.trim();
    t.is_empty() || t.starts_with('#')
}

fn read_edges(path: &Path) -> Result<Vec<(NodeId, NodeId)>> {
    let mut edges = Vec::new();
    for (n, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if is_skippable(&line) {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n,
                message: format!("expected `parent<TAB>child`, got {} fields", fields.len()),
            });
        }
        edges.push((parse_id(path, n, fields[0])?, parse_id(path, n, fields[1])?));
    }
    Ok(edges)
}

/// Reads `node_id<TAB>label`; the result is dense over `[0, n)`.
pub fn read_labels(path: &Path) -> Result<Vec<bool>> {
    let mut map: BTreeMap<NodeId, bool> = BTreeMap::new();
    for (n, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if is_skippable(&line) {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n,
                message: format!("expected `node_id<TAB>label`, got {} fields", fields.len()),
            });
        }
        let v = parse_id(path, n, fields[0])?;
        let label = match fields[1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        };
        if map.insert(v, label).is_some() {
            return Err(Error::Validation(format!(
                "{}:{n}: duplicate label for node {v}",
                path.display()
            )));
        }
    }
    let labels: Vec<bool> = map.values().copied().collect();
    if let Some((i, (&v, _))) = map.iter().enumerate().find(|(i, (v, _))| v.index() != *i) {
        return Err(Error::Validation(format!(
            "{}: labels are not dense, node {i} missing (next labelled node is {v})",
            path.display()
        )));
    }
    Ok(labels)
}

fn read_titles(path: &Path) -> Result<BTreeMap<NodeId, String>> {
    let mut titles = BTreeMap::new();
    for (n, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if is_skippable(&line) {
            continue;
        }
        let (id, title) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: n,
            message: "expected `node_id<TAB>title`".into(),
        })?;
        let v = parse_id(path, n, id.trim())?;
        if titles.insert(v, title.to_string()).is_some() {
            return Err(Error::Validation(format!(
                "{}:{n}: duplicate title for node {v}",
                path.display()
            )));
        }
    }
    Ok(titles)
}

/// Load a graph from the edge/label/title TSV files.
///
/// With a labels file the node set is exactly the labelled ids, and any edge
/// naming another id is rejected. Without one, the node count is one past the
/// largest id seen in the edges or titles.
pub fn load_graph(
    edges_path: &Path,
    labels_path: Option<&Path>,
    titles_path: Option<&Path>,
) -> Result<KnowledgeGraph> {
    let edges = read_edges(edges_path)?;
    let labels = labels_path.map(read_labels).transpose()?;
    let titles = titles_path.map(read_titles).transpose()?;

    let node_count = match &labels {
        Some(l) => l.len(),
        None => {
            let edge_max = edges.iter().map(|&(a, b)| a.max(b).index() + 1).max();
            let title_max = titles
                .as_ref()
                .and_then(|t| t.keys().next_back())
                .map(|v| v.index() + 1);
            edge_max.max(title_max).unwrap_or(0)
        }
    };
    let mut g = KnowledgeGraph::from_edges(node_count, edges)?;
    if let Some(l) = labels {
        g = g.with_labels(l)?;
    }
    if let Some(t) = titles {
        g = g.with_titles(t)?;
    }
    Ok(g)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Write the graph as TSV files; labels and titles only when present.
pub fn save_graph(
    g: &KnowledgeGraph,
    edges_path: &Path,
    labels_path: Option<&Path>,
    titles_path: Option<&Path>,
) -> Result<()> {
    let mut w = create(edges_path)?;
    for (a, b) in g.edges() {
        writeln!(w, "{a}\t{b}").map_err(|e| Error::io(edges_path, e))?;
    }
    w.flush().map_err(|e| Error::io(edges_path, e))?;

    if let (Some(path), Some(labels)) = (labels_path, g.labels()) {
        let mut w = create(path)?;
        for (i, &l) in labels.iter().enumerate() {
            writeln!(w, "{i}\t{}", u8::from(l)).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    if let (Some(path), Some(titles)) = (titles_path, g.titles()) {
        let mut w = create(path)?;
        for (v, t) in titles {
            writeln!(w, "{v}\t{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}
