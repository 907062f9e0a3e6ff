//! Produce the comparison table: the graph pipeline against the plain
//! union of per-view Gaussians and both single-stage ablations, across
//! view counts, on the three built-in scenes.
//!
//! ```sh
//! cargo run --release --example benchmark_table
//! ```

use anyhow::Result;
use gaussian_graph::config::PipelineConfig;
use gaussian_graph::optim::FitConfig;
use gaussian_graph::pipeline::{benchmark, benchmark_csv, fit_suite, standard_suite, Mode};

fn main() -> Result<()> {
    let config = PipelineConfig {
        width: 48,
        height: 48,
        feat_dim: 8,
        ..PipelineConfig::default()
    };

    // Fit once on two-view rigs, then evaluate every mode with the result.
    let fit = FitConfig {
        steps: 300,
        ..FitConfig::default()
    };
    let rigs = standard_suite(2, &config);
    let (weights, _) = fit_suite(&rigs, &config, &fit)?;

    let rows = benchmark(
        &[2, 4, 8],
        &[
            Mode::Ggn,
            Mode::UnionBaseline,
            Mode::NoLinear,
            Mode::NoPooling,
            Mode::Vanilla,
        ],
        &config,
        Some(&weights),
        1,
    )?;
    print!("{}", benchmark_csv(&rows, true));

    // Count scaling summary: union grows linearly, pooling sublinearly.
    for mode in [Mode::UnionBaseline, Mode::Ggn] {
        let counts: Vec<usize> = [2usize, 4, 8]
            .iter()
            .map(|&v| {
                rows.iter()
                    .filter(|r| r.views == v && r.mode == mode)
                    .map(|r| r.gaussians)
                    .sum::<usize>()
                    / 3
            })
            .collect();
        println!(
            "{:<15} mean Gaussians at 2/4/8 views: {counts:?}",
            mode.label()
        );
    }
    Ok(())
}
