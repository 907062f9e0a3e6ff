//! Pipeline configuration: one struct covering every stage, serialized to
//! JSON and condensed into a canonical hash that is embedded in all outputs
//! so artifacts can be traced back to the exact settings that made them.

use serde::{Deserialize, Serialize};

use crate::graph::AdjacencyMode;
use crate::network::{Activation, Aggregation, NetworkConfig};
use crate::pooling::{MergeThreshold, PoolingConfig, SimilarityMetric, Traversal};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub width: u32,
    pub height: u32,
    pub feat_dim: usize,
    /// Number of graph layers (h).
    pub num_layers: usize,
    /// Edges kept per node during pruning.
    pub top_n: usize,
    /// Overlap threshold joining nodes into pooling components.
    pub tau: f64,
    pub merge_threshold: MergeThreshold,
    pub adjacency_mode: AdjacencyMode,
    pub aggregation: Aggregation,
    pub activation: Activation,
    pub use_bias: bool,
    pub traversal: Traversal,
    pub similarity: SimilarityMetric,
    /// Gaussians per pixel used only by the benchmark count arithmetic.
    pub gaussians_per_pixel: u32,
    /// Multiplicative log-normal depth noise scale.
    pub noise_sigma: f64,
    /// Depth assigned to pixels that hit nothing.
    pub far_depth: f64,
    pub weight_seed: u64,
    pub noise_seed: u64,
    pub traversal_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            feat_dim: 32,
            num_layers: 2,
            top_n: 3,
            tau: 0.25,
            merge_threshold: MergeThreshold::FootprintRelative { kappa: 1.5 },
            adjacency_mode: AdjacencyMode::Row,
            aggregation: Aggregation::Mean,
            activation: Activation::Relu,
            use_bias: true,
            traversal: Traversal::DeterministicBfs,
            similarity: SimilarityMetric::MinDistance,
            gaussians_per_pixel: 1,
            noise_sigma: 0.0,
            far_depth: 100.0,
            weight_seed: 7,
            noise_seed: 13,
            traversal_seed: 17,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.width < 1 || self.height < 1 {
            return Err(format!("resolution {}x{} invalid", self.width, self.height));
        }
        if self.feat_dim < crate::synth::MIN_FEAT_DIM {
            return Err(format!(
                "feat_dim {} below the encoder minimum {}",
                self.feat_dim,
                crate::synth::MIN_FEAT_DIM
            ));
        }
        if self.num_layers < 1 {
            return Err("num_layers must be >= 1".into());
        }
        if self.noise_sigma < 0.0 {
            return Err("noise_sigma must be >= 0".into());
        }
        if self.gaussians_per_pixel < 1 {
            return Err("gaussians_per_pixel must be >= 1".into());
        }
        self.pooling_config().validate().map_err(|e| e.to_string())
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            num_layers: self.num_layers,
            dims: vec![self.feat_dim; self.num_layers + 1],
            adjacency_mode: self.adjacency_mode,
            aggregation: self.aggregation,
            activation: self.activation,
            use_bias: self.use_bias,
            seed: self.weight_seed,
        }
    }

    pub fn pooling_config(&self) -> PoolingConfig {
        PoolingConfig {
            threshold: self.merge_threshold,
            traversal: self.traversal,
            seed: self.traversal_seed,
            tau: self.tau,
            similarity: self.similarity,
        }
    }

    /// Canonical hash: FNV-1a over the canonical JSON serialization.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a(json.as_bytes())
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.hash())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
