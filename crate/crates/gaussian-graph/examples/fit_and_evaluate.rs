//! Fit the layer and head weights against oracle color/opacity targets on
//! one scene, then compare held-out view quality before and after fitting.
//!
//! ```sh
//! cargo run --release --example fit_and_evaluate
//! ```

use anyhow::Result;
use gaussian_graph::config::PipelineConfig;
use gaussian_graph::optim::FitConfig;
use gaussian_graph::pipeline::{fit_rig, run_pipeline, standard_rig, Mode};

fn main() -> Result<()> {
    let config = PipelineConfig {
        width: 64,
        height: 64,
        feat_dim: 16,
        ..PipelineConfig::default()
    };
    let rig = standard_rig("two-sphere-tableau", 4, &config).unwrap();

    let before = run_pipeline(&rig, &config, Mode::Ggn, None)?;
    println!(
        "seeded weights : PSNR {:.2} dB, SSIM {:.4}",
        before.report.mean_psnr, before.report.mean_ssim
    );

    let fit = FitConfig {
        steps: 500,
        ..FitConfig::default()
    };
    let outcome = fit_rig(&rig, &config, &fit, None)?;
    println!(
        "fit            : loss {:.3e} -> {:.3e} over {} steps",
        outcome.loss_curve.first().unwrap(),
        outcome.loss_curve.last().unwrap(),
        outcome.loss_curve.len()
    );

    let after = run_pipeline(&rig, &config, Mode::Ggn, Some(&outcome.weights))?;
    println!(
        "fitted weights : PSNR {:.2} dB, SSIM {:.4} ({} Gaussians from {})",
        after.report.mean_psnr,
        after.report.mean_ssim,
        after.report.gaussian_count,
        after.report.lifted_count
    );
    Ok(())
}
