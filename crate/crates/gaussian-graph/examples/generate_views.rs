//! Raytrace one of the built-in scenes from an inward-facing camera arc and
//! write the ground-truth images, oracle depth maps and camera files.
//!
//! ```sh
//! cargo run --example generate_views -- [scene-name] [out-dir]
//! ```

use anyhow::Result;
use gaussian_graph::config::PipelineConfig;
use gaussian_graph::image::{write_depth_raw, write_ppm};
use gaussian_graph::pipeline::standard_rig;
use gaussian_graph::synth::{oracle_depth, raytrace};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let scene = args.next().unwrap_or_else(|| "two-sphere-tableau".into());
    let out_dir = std::path::PathBuf::from(args.next().unwrap_or_else(|| "out/views".into()));

    let config = PipelineConfig {
        width: 128,
        height: 128,
        ..PipelineConfig::default()
    };
    let rig =
        standard_rig(&scene, 4, &config).ok_or_else(|| anyhow::anyhow!("unknown scene {scene}"))?;
    std::fs::create_dir_all(&out_dir)?;

    for (k, cam) in rig.inputs.iter().enumerate() {
        let view = raytrace(&rig.scene, cam);
        let hits = view.hit.iter().filter(|&&h| h).count();
        write_ppm(&view.image, &out_dir.join(format!("view_{k:02}.ppm")))?;
        let depth = oracle_depth(&view, 0.0, k as u64);
        write_depth_raw(
            &depth,
            cam.width,
            cam.height,
            &out_dir.join(format!("view_{k:02}.depth.raw")),
        )?;
        std::fs::write(
            out_dir.join(format!("view_{k:02}.camera.json")),
            serde_json::to_string_pretty(cam)?,
        )?;
        println!(
            "view {k}: {hits}/{} pixels hit geometry, depth range [{:.2}, {:.2}]",
            view.pixel_count(),
            view.depth
                .iter()
                .zip(&view.hit)
                .filter(|(_, &h)| h)
                .map(|(d, _)| *d)
                .fold(f64::INFINITY, f64::min),
            view.depth
                .iter()
                .zip(&view.hit)
                .filter(|(_, &h)| h)
                .map(|(d, _)| *d)
                .fold(0.0, f64::max),
        );
    }
    println!("wrote {} views to {}", rig.inputs.len(), out_dir.display());
    Ok(())
}
