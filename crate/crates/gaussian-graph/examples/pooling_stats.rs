//! Sweep the merge threshold and show how pooling trades Gaussian count
//! against the survivor composition, per connected component.
//!
//! ```sh
//! cargo run --example pooling_stats
//! ```

use anyhow::Result;
use gaussian_graph::config::PipelineConfig;
use gaussian_graph::gaussians::lift_view;
use gaussian_graph::graph::GaussianGraph;
use gaussian_graph::pipeline::standard_rig;
use gaussian_graph::pooling::{pool_graph, MergeThreshold, PoolingConfig};
use gaussian_graph::synth::{encode_features, oracle_depth, raytrace};

fn main() -> Result<()> {
    let config = PipelineConfig {
        width: 48,
        height: 48,
        feat_dim: 8,
        ..PipelineConfig::default()
    };
    let rig = standard_rig("tilted-plane", 6, &config).unwrap();
    let mut features = Vec::new();
    let nodes = rig
        .inputs
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let view = raytrace(&rig.scene, cam);
            let depth = oracle_depth(&view, 0.0, i as u64);
            let feats = encode_features(&view, config.feat_dim)?;
            let node = lift_view(&view, &depth, &feats, i)?;
            features.push(feats);
            Ok(node)
        })
        .collect::<Result<Vec<_>>>()?;
    let lifted: usize = nodes.iter().map(|n| n.len()).sum();
    let graph = GaussianGraph::build(nodes, config.top_n, config.adjacency_mode)?;

    println!(
        "{lifted} lifted Gaussians across {} views",
        rig.inputs.len()
    );
    println!("kappa | survivors | share | per-view survivors");
    for kappa in [0.25, 0.75, 1.5, 3.0, 6.0] {
        let pooling = PoolingConfig {
            threshold: MergeThreshold::FootprintRelative { kappa },
            ..config.pooling_config()
        };
        let pooled = pool_graph(&graph, &features, &pooling)?;
        println!(
            "{kappa:5.2} | {:9} | {:4.0}% | {:?}",
            pooled.len(),
            100.0 * pooled.len() as f64 / lifted as f64,
            pooled.survivor_counts,
        );
    }
    Ok(())
}
