//! Synthetic category graphs with diffused bias labels and noisy features.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{save_graph, KnowledgeGraph, NodeId};
use crate::oracle::FeatureTable;
use crate::rng::{self, SimRng};

/// Number of depth buckets sharing a base feature vector; deeper nodes fall
/// into the last bucket.
pub const DEPTH_BUCKETS: usize = 4;

pub const PRESETS: [&str; 6] = ["economy", "education", "immigration", "politics", "ai", "culture"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub n_nodes: usize,
    /// Mean number of children per internal node of the tree backbone.
    pub branching: f64,
    /// Per-node probability of one extra edge to a random other node.
    pub cross_link_prob: f64,
    pub n_bias_seeds: usize,
    pub transmission_rate: f64,
    pub diffusion_hops: u32,
    pub feature_dim: usize,
    pub signal: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            n_nodes: 300,
            branching: 3.0,
            cross_link_prob: 0.05,
            n_bias_seeds: 15,
            transmission_rate: 0.5,
            diffusion_hops: 2,
            feature_dim: 32,
            signal: 3.0,
            noise: 1.0,
            seed: 0,
        }
    }
}

impl GenParams {
    /// Named bundle differing from the default in seed count and rate.
    pub fn preset(name: &str) -> Result<Self> {
        let (n_bias_seeds, transmission_rate) = match name {
            "economy" => (15, 0.5),
            "education" => (12, 0.4),
            "immigration" => (18, 0.6),
            "politics" => (20, 0.55),
            "ai" => (10, 0.35),
            "culture" => (14, 0.45),
            other => {
                return Err(Error::Config(format!(
                    "unknown task preset {other:?} (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            n_bias_seeds,
            transmission_rate,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_nodes == 0 {
            return fail("n_nodes must be at least 1".into());
        }
        if !(self.branching >= 1.0 && self.branching.is_finite()) {
            return fail(format!("branching must be ≥ 1, got {}", self.branching));
        }
        if !(0.0..=1.0).contains(&self.cross_link_prob) {
            return fail(format!("cross_link_prob {} outside [0, 1]", self.cross_link_prob));
        }
        if !(0.0..=1.0).contains(&self.transmission_rate) {
            return fail(format!("transmission_rate {} outside [0, 1]", self.transmission_rate));
        }
        if self.n_bias_seeds > self.n_nodes {
            return fail(format!(
                "n_bias_seeds {} exceeds n_nodes {}",
                self.n_bias_seeds, self.n_nodes
            ));
        }
        if self.feature_dim == 0 {
            return fail("feature_dim must be positive".into());
        }
        if !(self.signal >= 0.0 && self.noise >= 0.0) {
            return fail("signal and noise must be non-negative".into());
        }
        Ok(())
    }
}

/// Tree backbone plus random cross links. Node `i > 0` hangs off a uniform
/// node among the first `⌈i / branching⌉`, which keeps the fan-out near
/// `branching` and the depth logarithmic.
pub fn gen_graph(params: &GenParams) -> Result<KnowledgeGraph> {
    params.validate()?;
    let n = params.n_nodes;
    let mut rng = rng::stream(params.seed, "datagen-graph");
    let mut edges = Vec::with_capacity(n + n / 8);
    for i in 1..n {
        let window = ((i as f64 / params.branching).ceil() as usize).clamp(1, i);
        let parent = rng.random_range(0..window);
        edges.push((NodeId::from(parent), NodeId::from(i)));
    }
    if n > 1 {
        for i in 0..n {
            if rng.random::<f64>() < params.cross_link_prob {
                let j = rng.random_range(0..n - 1);
                let j = if j >= i { j + 1 } else { j };
                edges.push((NodeId::from(i), NodeId::from(j)));
            }
        }
    }
    KnowledgeGraph::from_edges(n, edges)
}

/// Bias labels from seeds spread along open edges.
///
/// One uniform is drawn per directed edge (in node, then neighbour order)
/// before any spreading, and an edge transmits iff its uniform is below the
/// rate. A node is biased iff it lies within `diffusion_hops` open edges of a
/// seed. Sharing the draws across rates makes the biased set monotone in the
/// rate.
pub fn plant_bias(graph: &KnowledgeGraph, params: &GenParams, rng: &mut SimRng) -> Result<Vec<bool>> {
    params.validate()?;
    let n = graph.node_count();
    if params.n_bias_seeds > n {
        return Err(Error::Config(format!(
            "n_bias_seeds {} exceeds graph size {n}",
            params.n_bias_seeds
        )));
    }
    let seeds: Vec<NodeId> = sample(rng, n, params.n_bias_seeds).into_iter().map(NodeId::from).collect();
    diffuse(graph, &seeds, params.transmission_rate, params.diffusion_hops, rng)
}

/// Spread bias from `seeds` (see [`plant_bias`] for the coin scheme).
pub fn diffuse(graph: &KnowledgeGraph, seeds: &[NodeId], rate: f64, hops: u32, rng: &mut SimRng) -> Result<Vec<bool>> {
    for &s in seeds {
        graph.check_node(s)?;
    }
    let n = graph.node_count();
    let coins: Vec<Vec<f64>> = graph
        .nodes()
        .map(|v| graph.nb(v).iter().map(|_| rng.random::<f64>()).collect())
        .collect();

    let mut hop = vec![u32::MAX; n];
    let mut queue = VecDeque::new();
    for s in seeds {
        hop[s.index()] = 0;
        queue.push_back(s.index());
    }
    while let Some(v) = queue.pop_front() {
        if hop[v] >= hops {
            continue;
        }
        for (k, &u) in graph.nb(NodeId::from(v)).iter().enumerate() {
            if hop[u.index()] == u32::MAX && coins[v][k] < rate {
                hop[u.index()] = hop[v] + 1;
                queue.push_back(u.index());
            }
        }
    }
    Ok(hop.into_iter().map(|h| h != u32::MAX).collect())
}

/// Breadth-first depth from node 0 (`u32::MAX` if unreachable).
fn depths(graph: &KnowledgeGraph) -> Vec<u32> {
    let mut depth = vec![u32::MAX; graph.node_count()];
    if graph.node_count() == 0 {
        return depth;
    }
    depth[0] = 0;
    let mut queue = VecDeque::from([NodeId(0)]);
    while let Some(v) = queue.pop_front() {
        for &u in graph.nb(v) {
            if depth[u.index()] == u32::MAX {
                depth[u.index()] = depth[v.index()] + 1;
                queue.push_back(u);
            }
        }
    }
    depth
}

fn gaussian_vec(d: usize, rng: &mut SimRng) -> Array1<f64> {
    Array1::from_shape_fn(d, |_| rng.sample(StandardNormal))
}

/// `base[depth bucket] + signal·y·u + noise·ε` for every node, with `u` a
/// random unit direction and `ε` standard normal.
pub fn gen_features(
    graph: &KnowledgeGraph,
    labels: &[bool],
    params: &GenParams,
    rng: &mut SimRng,
) -> Result<FeatureTable> {
    params.validate()?;
    if labels.len() != graph.node_count() {
        return Err(Error::Validation(format!(
            "{} labels for {} nodes",
            labels.len(),
            graph.node_count()
        )));
    }
    let d = params.feature_dim;
    let bases: Vec<Array1<f64>> = (0..DEPTH_BUCKETS).map(|_| gaussian_vec(d, rng)).collect();
    let mut u = gaussian_vec(d, rng);
    let norm = u.dot(&u).sqrt();
    u /= norm;
    let mut table = FeatureTable::new(graph.node_count(), d);
    for (v, depth) in depths(graph).into_iter().enumerate() {
        let bucket = (depth as usize).min(DEPTH_BUCKETS - 1);
        let mut x = bases[bucket].clone();
        if labels[v] {
            x.scaled_add(params.signal, &u);
        }
        x.scaled_add(params.noise, &gaussian_vec(d, rng));
        table.set(NodeId::from(v), x.as_slice().expect("contiguous"))?;
    }
    Ok(table)
}

/// A generated graph with labels and oracle features.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub params: GenParams,
    pub graph: KnowledgeGraph,
    pub features: FeatureTable,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub params: GenParams,
    pub n_nodes: usize,
    pub n_edges: usize,
    pub n_biased: usize,
    pub files: DatasetFiles,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetFiles {
    pub edges: String,
    pub labels: String,
    pub features: String,
}

impl Default for DatasetFiles {
    fn default() -> Self {
        Self {
            edges: "edges.tsv".into(),
            labels: "labels.tsv".into(),
            features: "features.tsv".into(),
        }
    }
}

impl Dataset {
    pub fn generate(params: &GenParams) -> Result<Self> {
        let graph = gen_graph(params)?;
        let labels = plant_bias(&graph, params, &mut rng::stream(params.seed, "datagen-bias"))?;
        let features = gen_features(
            &graph,
            &labels,
            params,
            &mut rng::stream(params.seed, "datagen-features"),
        )?;
        Ok(Self {
            params: params.clone(),
            graph: graph.with_labels(labels)?,
            features,
        })
    }

    pub fn labels(&self) -> &[bool] {
        self.graph.labels().expect("generated graphs are labelled")
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            params: self.params.clone(),
            n_nodes: self.graph.node_count(),
            n_edges: self.graph.edge_count(),
            n_biased: self.graph.bias_nodes().len(),
            files: DatasetFiles::default(),
        }
    }

    /// Write edges, labels, features and `manifest.json` into `dir`
    /// (created if missing). Existing files are only replaced with `force`.
    pub fn write(&self, dir: &Path, force: bool) -> Result<DatasetManifest> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        let path = |name: &str| -> PathBuf { dir.join(name) };
        let targets = [
            path(&manifest.files.edges),
            path(&manifest.files.labels),
            path(&manifest.files.features),
            path("manifest.json"),
        ];
        if !force {
            if let Some(p) = targets.iter().find(|p| p.exists()) {
                return Err(Error::io(
                    p.clone(),
                    std::io::Error::new(
                        std::io::ErrorKind::AlreadyExists,
                        "refusing to overwrite (pass --force)",
                    ),
                ));
            }
        }
        save_graph(&self.graph, &targets[0], Some(&targets[1]), None)?;
        self.features.write_tsv(&targets[2])?;
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&targets[3], text + "\n").map_err(|e| Error::io(&targets[3], e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_node_and_tree_edge_count() {
        let g = gen_graph(&GenParams { n_nodes: 1, n_bias_seeds: 1, ..Default::default() }).unwrap();
        assert_eq!((g.node_count(), g.edge_count()), (1, 0));
        let g = gen_graph(&GenParams {
            n_nodes: 100,
            cross_link_prob: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(g.edge_count(), 99);
    }

    #[test]
    fn zero_rate_plants_only_seeds_and_full_rate_floods() {
        let p = GenParams {
            n_nodes: 200,
            n_bias_seeds: 4,
            transmission_rate: 0.0,
            ..Default::default()
        };
        let g = gen_graph(&p).unwrap();
        let labels = plant_bias(&g, &p, &mut rng::stream(1, "b")).unwrap();
        assert_eq!(labels.iter().filter(|&&y| y).count(), 4);

        let p1 = GenParams {
            transmission_rate: 1.0,
            diffusion_hops: 1,
            ..p
        };
        let flooded = plant_bias(&g, &p1, &mut rng::stream(1, "b")).unwrap();
        let seeds: Vec<usize> = (0..200).filter(|&i| labels[i]).collect();
        for v in 0..200 {
            let expect = seeds.contains(&v)
                || seeds.iter().any(|&s| g.nb(NodeId::from(s)).contains(&NodeId::from(v)));
            assert_eq!(flooded[v], expect, "node {v}");
        }
    }

    #[test]
    fn noiseless_features_follow_buckets_and_signal() {
        let p = GenParams {
            n_nodes: 60,
            noise: 0.0,
            signal: 3.0,
            feature_dim: 5,
            ..Default::default()
        };
        let ds = Dataset::generate(&p).unwrap();
        let depth = depths(&ds.graph);
        let y = ds.labels();
        let mut seen = std::collections::HashMap::new();
        for v in 0..60 {
            let b = (depth[v] as usize).min(DEPTH_BUCKETS - 1);
            let row = ds.features.get(NodeId::from(v)).unwrap().to_owned();
            seen.entry((b, y[v])).or_insert_with(Vec::new).push(row);
        }
        for rows in seen.values() {
            assert!(rows.iter().all(|r| r == &rows[0]));
        }
        let pair = (0..DEPTH_BUCKETS).find(|&b| seen.contains_key(&(b, true)) && seen.contains_key(&(b, false)));
        if let Some(b) = pair {
            let diff = &seen[&(b, true)][0] - &seen[&(b, false)][0];
            assert!((diff.dot(&diff).sqrt() - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn preset_lookup() {
        for name in PRESETS {
            GenParams::preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(GenParams::preset("sports"), Err(Error::Config(_))));
    }

    #[test]
    fn bad_rate_rejected() {
        let p = GenParams {
            transmission_rate: 1.5,
            ..Default::default()
        };
        assert!(matches!(p.validate(), Err(Error::Config(_))));
    }
}
