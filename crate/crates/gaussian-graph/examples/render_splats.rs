//! Write a splat file, read it back and render it from a camera that was
//! never an input — the standard viewer round trip.
//!
//! ```sh
//! cargo run --example render_splats -- [out-dir]
//! ```

use anyhow::Result;
use gaussian_graph::config::PipelineConfig;
use gaussian_graph::gaussians::{read_splats, write_splats};
use gaussian_graph::image::write_ppm;
use gaussian_graph::pipeline::{arc_cameras, run_pipeline, standard_rig, Mode};
use gaussian_graph::render::render;
use nalgebra::Point3;

fn main() -> Result<()> {
    let out_dir = std::path::PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "out/render".into()),
    );
    std::fs::create_dir_all(&out_dir)?;
    let config = PipelineConfig {
        width: 96,
        height: 96,
        feat_dim: 16,
        ..PipelineConfig::default()
    };
    let rig = standard_rig("two-sphere-tableau", 4, &config).unwrap();
    let output = run_pipeline(&rig, &config, Mode::Ggn, None)?;

    let ply = out_dir.join("scene.ply");
    write_splats(&output.splats, &ply)?;
    let reloaded = read_splats(&ply)?;
    println!(
        "wrote and reloaded {} splats from {}",
        reloaded.len(),
        ply.display()
    );

    // A fresh orbit of novel viewpoints.
    for (k, cam) in arc_cameras(3, 40.0, 4.5, 1.4, Point3::origin(), 96, 96, 20.0)
        .iter()
        .enumerate()
    {
        let (img, stats) = render(&reloaded, cam, rig.scene.background);
        let path = out_dir.join(format!("orbit_{k}.ppm"));
        write_ppm(&img, &path)?;
        println!(
            "orbit view {k}: {} splats binned, {} culled -> {}",
            stats.binned,
            stats.culled_behind,
            path.display()
        );
    }
    Ok(())
}
