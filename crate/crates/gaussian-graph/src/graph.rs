//! Gaussian graph construction: inter-view overlap adjacency, top-n edge
//! pruning, degree scaling, sparse pixel-level edge operators and connected
//! components.
//!
//! Node `i` is one view's Gaussian group. The directed weight `a[i][j]`
//! measures how much of node `j` is visible in view `i`, matching the
//! direction of the edge operators: `E[j -> i]` scatters node `j`'s
//! Gaussians onto node `i`'s pixel grid, which is how information flows in
//! the graph linear layer.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaussians::GaussianNode;
use crate::geometry::Camera;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("empty node has no overlap ratio")]
    EmptyNode,
    #[error("graph needs at least one node")]
    NoNodes,
}

/// Degree normalization applied to the masked adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdjacencyMode {
    /// Each row divided by its degree: D^-1 A.
    #[default]
    Row,
    /// Symmetric scaling: D^-1/2 A D^-1/2.
    Symmetric,
}

/// Sparse pixel-level correspondence from a source node's Gaussians onto a
/// target camera's pixel grid. Entry lists per target pixel are sorted by
/// (depth, source index) ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeOperator {
    offsets: Vec<u32>,
    sources: Vec<u32>,
    depths: Vec<f64>,
}

impl EdgeOperator {
    /// Project every Gaussian of `source` into `target_cam` and bucket the
    /// visible ones by occupied pixel.
    pub fn build(source: &GaussianNode, target_cam: &Camera) -> Self {
        let pixels = target_cam.pixel_count();
        let mut buckets: Vec<Vec<(f64, u32)>> = vec![Vec::new(); pixels];
        for (m, g) in source.gaussians.iter().enumerate() {
            if let Some(px) = target_cam.project(&g.mean) {
                let depth = target_cam.to_camera_frame(&g.mean).z;
                buckets[px.index(target_cam.width)].push((depth, m as u32));
            }
        }
        let mut offsets = Vec::with_capacity(pixels + 1);
        let mut sources = Vec::new();
        let mut depths = Vec::new();
        offsets.push(0u32);
        for bucket in &mut buckets {
            bucket.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for &(d, m) in bucket.iter() {
                sources.push(m);
                depths.push(d);
            }
            offsets.push(sources.len() as u32);
        }
        Self {
            offsets,
            sources,
            depths,
        }
    }

    pub fn target_pixels(&self) -> usize {
        self.offsets.len() - 1
    }

    /// (source Gaussian index, camera-frame depth) pairs landing on `pixel`.
    pub fn entries(&self, pixel: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let lo = self.offsets[pixel] as usize;
        let hi = self.offsets[pixel + 1] as usize;
        self.sources[lo..hi]
            .iter()
            .zip(&self.depths[lo..hi])
            .map(|(&m, &d)| (m as usize, d))
    }

    pub fn entry_count(&self, pixel: usize) -> usize {
        (self.offsets[pixel + 1] - self.offsets[pixel]) as usize
    }

    pub fn total_entries(&self) -> usize {
        self.sources.len()
    }

    pub fn occupied_pixels(&self) -> usize {
        (0..self.target_pixels())
            .filter(|&p| self.entry_count(p) > 0)
            .count()
    }

    /// True when pixel k maps to exactly the source Gaussian k for all k —
    /// the self-operator of a freshly lifted node.
    pub fn is_identity(&self) -> bool {
        self.sources.len() == self.target_pixels()
            && self
                .offsets
                .iter()
                .enumerate()
                .all(|(i, &o)| o as usize == i)
            && self
                .sources
                .iter()
                .enumerate()
                .all(|(i, &m)| m as usize == i)
    }
}

/// Fraction of `node`'s Gaussian means visible (in bounds, in front of the
/// near plane) from `cam`.
pub fn overlap_ratio(node: &GaussianNode, cam: &Camera) -> Result<f64, GraphError> {
    if node.is_empty() {
        return Err(GraphError::EmptyNode);
    }
    let visible = node
        .gaussians
        .iter()
        .filter(|g| cam.project(&g.mean).is_some())
        .count();
    Ok(visible as f64 / node.len() as f64)
}

/// Full N x N overlap adjacency: unit diagonal, `a[i][j]` the share of node
/// j visible in view i.
pub fn build_adjacency(nodes: &[GaussianNode]) -> Result<Vec<f64>, GraphError> {
    let n = nodes.len();
    if n == 0 {
        return Err(GraphError::NoNodes);
    }
    let entries: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|cell| {
            let (i, j) = (cell / n, cell % n);
            if i == j {
                Ok(1.0)
            } else {
                overlap_ratio(&nodes[j], &nodes[i].camera)
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(entries)
}

/// Per node, keep the `top_n` heaviest incident non-self edges (ties broken
/// toward the smaller neighbor index); an undirected edge survives when
/// either endpoint keeps it. Returned pairs are (i, j) with i < j.
pub fn prune_topn(adjacency: &[f64], n: usize, top_n: usize) -> Vec<(usize, usize)> {
    let mut retained = std::collections::BTreeSet::new();
    for i in 0..n {
        let mut candidates: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        candidates.sort_by(|&a, &b| {
            adjacency[i * n + b]
                .partial_cmp(&adjacency[i * n + a])
                .unwrap()
                .then(a.cmp(&b))
        });
        for &j in candidates.iter().take(top_n) {
            retained.insert((i.min(j), i.max(j)));
        }
    }
    retained.into_iter().collect()
}

/// Mask the adjacency to self-loops plus retained edges, then normalize by
/// degree. Row mode divides each row by its degree; symmetric mode applies
/// D^-1/2 on both sides. Self-loop weight 1 keeps every degree positive.
pub fn scale_adjacency(
    adjacency: &[f64],
    n: usize,
    retained: &[(usize, usize)],
    mode: AdjacencyMode,
) -> Vec<f64> {
    let retained: std::collections::BTreeSet<(usize, usize)> = retained.iter().copied().collect();
    let mut masked = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let keep = i == j || retained.contains(&(i.min(j), i.max(j)));
            if keep {
                masked[i * n + j] = adjacency[i * n + j];
            }
        }
    }
    let degrees: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| masked[i * n + j]).sum())
        .collect();
    let mut scaled = masked;
    match mode {
        AdjacencyMode::Row => {
            for i in 0..n {
                for j in 0..n {
                    scaled[i * n + j] /= degrees[i];
                }
            }
        }
        AdjacencyMode::Symmetric => {
            for i in 0..n {
                for j in 0..n {
                    scaled[i * n + j] /= (degrees[i] * degrees[j]).sqrt();
                }
            }
        }
    }
    scaled
}

/// Per-view Gaussian groups plus everything derived from their overlaps.
#[derive(Debug)]
pub struct GaussianGraph {
    pub nodes: Vec<GaussianNode>,
    /// Dense N x N row-major overlap weights, unit diagonal.
    pub adjacency: Vec<f64>,
    /// Degree-normalized adjacency masked to retained edges.
    pub scaled_adjacency: Vec<f64>,
    /// Undirected retained edges, (i, j) with i < j.
    pub retained: Vec<(usize, usize)>,
    /// Directed operators keyed (target, source); includes self-operators
    /// and both directions of every retained edge.
    pub operators: BTreeMap<(usize, usize), EdgeOperator>,
}

impl GaussianGraph {
    pub fn build(
        nodes: Vec<GaussianNode>,
        top_n: usize,
        mode: AdjacencyMode,
    ) -> Result<Self, GraphError> {
        let n = nodes.len();
        let adjacency = build_adjacency(&nodes)?;
        let retained = prune_topn(&adjacency, n, top_n);
        let scaled_adjacency = scale_adjacency(&adjacency, n, &retained, mode);
        let mut pairs: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for &(i, j) in &retained {
            pairs.push((i, j));
            pairs.push((j, i));
        }
        let operators: BTreeMap<(usize, usize), EdgeOperator> = pairs
            .par_iter()
            .map(|&(target, source)| {
                let op = EdgeOperator::build(&nodes[source], &nodes[target].camera);
                ((target, source), op)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect();
        Ok(Self {
            nodes,
            adjacency,
            scaled_adjacency,
            retained,
            operators,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[i * self.n() + j]
    }

    pub fn scaled_weight(&self, i: usize, j: usize) -> f64 {
        self.scaled_adjacency[i * self.n() + j]
    }

    /// Retained neighbors of node `i`, ascending.
    pub fn neighbors(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .retained
            .iter()
            .filter_map(|&(a, b)| {
                if a == i {
                    Some(b)
                } else if b == i {
                    Some(a)
                } else {
                    None
                }
            })
            .collect();
        out.sort_unstable();
        out
    }

    pub fn operator(&self, target: usize, source: usize) -> &EdgeOperator {
        &self.operators[&(target, source)]
    }

    /// Connected components of the subgraph whose retained edges carry an
    /// overlap of at least `tau` in either direction. Components are listed
    /// by their smallest member, members ascending.
    pub fn components(&self, tau: f64) -> Vec<Vec<usize>> {
        let n = self.n();
        let mut neighbor_lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in &self.retained {
            if self.weight(i, j) >= tau || self.weight(j, i) >= tau {
                neighbor_lists[i].push(j);
                neighbor_lists[j].push(i);
            }
        }
        let mut seen = vec![false; n];
        let mut components = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut stack = vec![start];
            let mut comp = Vec::new();
            seen[start] = true;
            while let Some(v) = stack.pop() {
                comp.push(v);
                for &w in &neighbor_lists[v] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }
}
