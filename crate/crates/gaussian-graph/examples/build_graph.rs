//! Lift a few views into Gaussian groups, connect them by view overlap and
//! print the resulting adjacency, retained edges and edge-operator stats.
//!
//! ```sh
//! cargo run --example build_graph
//! ```

use anyhow::Result;
use gaussian_graph::config::PipelineConfig;
use gaussian_graph::gaussians::lift_view;
use gaussian_graph::graph::GaussianGraph;
use gaussian_graph::pipeline::standard_rig;
use gaussian_graph::synth::{encode_features, oracle_depth, raytrace};

fn main() -> Result<()> {
    let config = PipelineConfig {
        width: 64,
        height: 64,
        feat_dim: 16,
        ..PipelineConfig::default()
    };
    let rig = standard_rig("checkered-room", 4, &config).unwrap();

    let nodes = rig
        .inputs
        .iter()
        .enumerate()
        .map(|(i, cam)| {
            let view = raytrace(&rig.scene, cam);
            let depth = oracle_depth(&view, 0.0, i as u64);
            let feats = encode_features(&view, config.feat_dim)?;
            Ok(lift_view(&view, &depth, &feats, i)?)
        })
        .collect::<Result<Vec<_>>>()?;

    let graph = GaussianGraph::build(nodes, config.top_n, config.adjacency_mode)?;
    println!("overlap adjacency (row i = visibility of node j in view i):");
    for i in 0..graph.n() {
        let row: Vec<String> = (0..graph.n())
            .map(|j| format!("{:.3}", graph.weight(i, j)))
            .collect();
        println!("  [{}]", row.join(", "));
    }
    println!("retained edges: {:?}", graph.retained);
    println!(
        "components at tau {}: {:?}",
        config.tau,
        graph.components(config.tau)
    );
    for (&(target, source), op) in &graph.operators {
        if target == source {
            continue;
        }
        println!(
            "E[{source} -> {target}]: {} entries over {} occupied pixels (max {} per pixel)",
            op.total_entries(),
            op.occupied_pixels(),
            (0..op.target_pixels())
                .map(|p| op.entry_count(p))
                .max()
                .unwrap_or(0)
        );
    }
    Ok(())
}
