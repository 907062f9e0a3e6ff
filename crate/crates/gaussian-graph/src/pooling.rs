//! Gaussian pooling: per-component sequential node merging that drops a
//! Gaussian when a same-pixel counterpart already sits within the merge
//! threshold, leaving one compact Gaussian set per connected component.
//!
//! Merging is anchor-based: a start node is chosen per component, neighbor
//! nodes fold into it one at a time, and every similarity test projects
//! into the anchor's camera. Survivors keep their features untouched; a
//! dropped Gaussian simply disappears (its same-pixel counterpart already
//! represents the surface there).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::gaussians::{Gaussian, GaussianNode};
use crate::graph::{EdgeOperator, GaussianGraph};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum PoolingError {
    #[error("invalid pooling config: {0}")]
    InvalidConfig(String),
    #[error("feature blocks do not match graph nodes: {0}")]
    FeatureMismatch(String),
}

/// Merge threshold: a plain world-space distance, or a multiple of the
/// local pixel footprint (scale-invariant across scenes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MergeThreshold {
    Absolute { lambda: f64 },
    FootprintRelative { kappa: f64 },
}

impl Default for MergeThreshold {
    fn default() -> Self {
        MergeThreshold::FootprintRelative { kappa: 1.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Traversal {
    /// Start at the node with the greatest total retained overlap weight,
    /// then repeatedly fold in the frontier neighbor with the heaviest
    /// connecting edge. Fully reproducible.
    #[default]
    DeterministicBfs,
    /// Seeded random start and frontier picks, for measuring how sensitive
    /// results are to merge order.
    SeededRandom,
}

/// Distance reduced over the same-pixel counterparts during similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMetric {
    /// Distance to the closest counterpart at the matched pixel.
    #[default]
    MinDistance,
    /// Distance to the farthest counterpart; grows with scene extent, kept
    /// selectable for study.
    LiteralMaxDistance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub threshold: MergeThreshold,
    pub traversal: Traversal,
    pub seed: u64,
    /// Overlap needed for an edge to join two nodes into one component.
    pub tau: f64,
    pub similarity: SimilarityMetric,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self {
            threshold: MergeThreshold::default(),
            traversal: Traversal::default(),
            seed: 0,
            tau: 0.25,
            similarity: SimilarityMetric::default(),
        }
    }
}

impl PoolingConfig {
    pub fn validate(&self) -> Result<(), PoolingError> {
        match self.threshold {
            MergeThreshold::Absolute { lambda } if lambda < 0.0 => Err(
                PoolingError::InvalidConfig(format!("lambda {lambda} must be >= 0")),
            ),
            MergeThreshold::FootprintRelative { kappa } if kappa < 0.0 => Err(
                PoolingError::InvalidConfig(format!("kappa {kappa} must be >= 0")),
            ),
            _ => Ok(()),
        }
    }
}

/// Distance from a foreign Gaussian to `node`'s own Gaussians at the pixel
/// it lands on in `node`'s camera; infinite when it lands on no occupied
/// pixel (out of frustum, behind the near plane, or an empty pixel).
/// `occupancy` must be `node`'s self-operator.
pub fn similarity(
    g: &Gaussian,
    node: &GaussianNode,
    occupancy: &EdgeOperator,
    metric: SimilarityMetric,
) -> f64 {
    let Some(px) = node.camera.project(&g.mean) else {
        return f64::INFINITY;
    };
    let pixel = px.index(node.camera.width);
    let mut best: Option<f64> = None;
    for (m, _) in occupancy.entries(pixel) {
        let d = (g.mean - node.gaussians[m].mean).norm();
        best = Some(match (best, metric) {
            (None, _) => d,
            (Some(b), SimilarityMetric::MinDistance) => b.min(d),
            (Some(b), SimilarityMetric::LiteralMaxDistance) => b.max(d),
        });
    }
    best.unwrap_or(f64::INFINITY)
}

/// Outcome counters for one node merge.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MergeStats {
    pub examined: usize,
    pub dropped: usize,
    /// Effective thresholds applied to Gaussians that landed on an occupied
    /// pixel; feeds the threshold histograms in the pooling report.
    pub lambda_effective: Vec<f64>,
}

fn merge_into(
    source: &GaussianNode,
    anchor: &mut GaussianNode,
    occupancy: &EdgeOperator,
    config: &PoolingConfig,
    stats: &mut MergeStats,
) {
    for g in &source.gaussians {
        stats.examined += 1;
        let sim = similarity(g, anchor, occupancy, config.similarity);
        if sim.is_infinite() {
            anchor.gaussians.push(g.clone());
            continue;
        }
        let lambda_eff = match config.threshold {
            MergeThreshold::Absolute { lambda } => lambda,
            MergeThreshold::FootprintRelative { kappa } => {
                let depth = anchor.camera.to_camera_frame(&g.mean).z;
                kappa * depth / anchor.camera.fx
            }
        };
        stats.lambda_effective.push(lambda_eff);
        if sim < lambda_eff {
            stats.dropped += 1;
        } else {
            anchor.gaussians.push(g.clone());
        }
    }
}

/// Merge `source` into `anchor`: survivors of the similarity test are
/// appended after `anchor`'s list; the merged node keeps `anchor`'s camera.
pub fn merge_nodes(
    source: &GaussianNode,
    anchor: &GaussianNode,
    config: &PoolingConfig,
) -> (GaussianNode, MergeStats) {
    let occupancy = EdgeOperator::build(anchor, &anchor.camera);
    let mut merged = anchor.clone();
    let mut stats = MergeStats::default();
    merge_into(source, &mut merged, &occupancy, config, &mut stats);
    (merged, stats)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ComponentStats {
    pub members: Vec<usize>,
    pub anchor: usize,
    pub input_count: usize,
    pub output_count: usize,
    pub dropped: usize,
    pub lambda_effective: Vec<f64>,
}

/// Fold one connected component into a single node.
pub fn pool_component(
    graph: &GaussianGraph,
    component: &[usize],
    config: &PoolingConfig,
) -> (GaussianNode, ComponentStats) {
    let input_count: usize = component.iter().map(|&i| graph.nodes[i].len()).sum();
    let mut stats = ComponentStats {
        members: component.to_vec(),
        input_count,
        ..Default::default()
    };
    if component.len() == 1 {
        let node = graph.nodes[component[0]].clone();
        stats.anchor = component[0];
        stats.output_count = node.len();
        return (node, stats);
    }

    // Edges that qualified for component construction.
    let qualifies = |u: usize, v: usize| -> bool {
        let key = (u.min(v), u.max(v));
        graph.retained.contains(&key)
            && (graph.weight(u, v) >= config.tau || graph.weight(v, u) >= config.tau)
    };
    let undirected = |u: usize, v: usize| graph.weight(u, v).max(graph.weight(v, u));

    let mut rng = Rng::new(config.seed ^ component[0] as u64);
    let anchor = match config.traversal {
        Traversal::DeterministicBfs => {
            // Greatest total retained overlap weight, ties to the smallest
            // index (component members are already ascending).
            let mut best = component[0];
            let mut best_total = f64::NEG_INFINITY;
            for &i in component {
                let total: f64 = component
                    .iter()
                    .filter(|&&j| j != i && qualifies(i, j))
                    .map(|&j| graph.weight(i, j))
                    .sum();
                if total > best_total {
                    best_total = total;
                    best = i;
                }
            }
            best
        }
        Traversal::SeededRandom => component[rng.below(component.len())],
    };
    stats.anchor = anchor;

    let mut acc = graph.nodes[anchor].clone();
    let mut merged: Vec<usize> = vec![anchor];
    while merged.len() < component.len() {
        let mut frontier: Vec<(f64, usize)> = component
            .iter()
            .filter(|&&v| !merged.contains(&v))
            .filter_map(|&v| {
                let score = merged
                    .iter()
                    .filter(|&&u| qualifies(u, v))
                    .map(|&u| undirected(u, v))
                    .fold(f64::NEG_INFINITY, f64::max);
                score.is_finite().then_some((score, v))
            })
            .collect();
        // Heaviest connecting edge first, ties toward the smaller index.
        frontier.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let next = match config.traversal {
            Traversal::DeterministicBfs => frontier[0].1,
            Traversal::SeededRandom => frontier[rng.below(frontier.len())].1,
        };
        let occupancy = EdgeOperator::build(&acc, &acc.camera);
        let mut merge_stats = MergeStats::default();
        merge_into(
            &graph.nodes[next],
            &mut acc,
            &occupancy,
            config,
            &mut merge_stats,
        );
        stats.dropped += merge_stats.dropped;
        stats.lambda_effective.extend(merge_stats.lambda_effective);
        merged.push(next);
    }
    stats.output_count = acc.len();
    (acc, stats)
}

/// The pooled scene-level Gaussian set: survivors with their (current)
/// features, per-Gaussian pixel footprints at the source depth, and
/// per-view survivor counts.
#[derive(Debug, Clone)]
pub struct PooledSet {
    pub gaussians: Vec<Gaussian>,
    pub features: FeatureMatrix,
    /// World-space width of one source pixel at each survivor's depth;
    /// the natural base scale for parameter prediction.
    pub footprints: Vec<f64>,
    pub survivor_counts: Vec<usize>,
    pub component_stats: Vec<ComponentStats>,
}

impl PooledSet {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
}

/// Pool every connected component (threshold `config.tau`) and take the
/// union. `features` holds the current per-node feature blocks, aligned
/// row-for-row with each node's Gaussian list.
pub fn pool_graph(
    graph: &GaussianGraph,
    features: &[FeatureMatrix],
    config: &PoolingConfig,
) -> Result<PooledSet, PoolingError> {
    config.validate()?;
    if features.len() != graph.n() {
        return Err(PoolingError::FeatureMismatch(format!(
            "{} feature blocks for {} nodes",
            features.len(),
            graph.n()
        )));
    }
    for (i, f) in features.iter().enumerate() {
        if f.rows() != graph.nodes[i].len() {
            return Err(PoolingError::FeatureMismatch(format!(
                "node {i}: {} feature rows for {} Gaussians",
                f.rows(),
                graph.nodes[i].len()
            )));
        }
        // Survivor features are fetched by source pixel, which is only the
        // feature row for freshly lifted (pixel-aligned) nodes.
        if f.rows() != graph.nodes[i].camera.pixel_count() {
            return Err(PoolingError::FeatureMismatch(format!(
                "node {i} is not pixel-aligned ({} Gaussians on a {} pixel grid)",
                f.rows(),
                graph.nodes[i].camera.pixel_count()
            )));
        }
    }
    let components = graph.components(config.tau);
    let pooled: Vec<(GaussianNode, ComponentStats)> = components
        .par_iter()
        .map(|component| pool_component(graph, component, config))
        .collect();

    let feat_dim = features.first().map_or(0, |f| f.dim());
    let mut gaussians = Vec::new();
    let mut out_features = FeatureMatrix::zeros(0, feat_dim);
    let mut footprints = Vec::new();
    let mut survivor_counts = vec![0usize; graph.n()];
    let mut component_stats = Vec::new();
    for (node, stats) in pooled {
        for g in node.gaussians {
            let src = &graph.nodes[g.source_view];
            let row = g.pixel.index(src.camera.width);
            out_features.push_row(features[g.source_view].row(row));
            let depth = src.camera.to_camera_frame(&g.mean).z;
            footprints.push(depth / src.camera.fx);
            survivor_counts[g.source_view] += 1;
            gaussians.push(g);
        }
        component_stats.push(stats);
    }
    Ok(PooledSet {
        gaussians,
        features: out_features,
        footprints,
        survivor_counts,
        component_stats,
    })
}
