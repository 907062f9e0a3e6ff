//! Thin command-line front end over the library: each subcommand parses
//! arguments, loads the configuration and dispatches to one library call.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure
//! (failed gradient check or diverged fit), 1 anything else.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use gaussian_graph::config::PipelineConfig;
use gaussian_graph::gaussians::{lift_view, read_splats};
use gaussian_graph::geometry::Camera;
use gaussian_graph::graph::GaussianGraph;
use gaussian_graph::image::{read_ppm, write_depth_raw, write_ppm};
use gaussian_graph::metrics::{psnr, ssim};
use gaussian_graph::network::{load_weights, save_weights};
use gaussian_graph::optim::{gradcheck, FitConfig, GradcheckComponent, TrainableWeights};
use gaussian_graph::pipeline::{
    arc_cameras, benchmark, benchmark_csv, fit_suite, graph_summary, pool_report, run_pipeline,
    scene_by_name, scene_names, standard_rig, standard_suite, write_artifacts, Mode, SceneRig,
};
use gaussian_graph::render::render;
use gaussian_graph::synth::{encode_features, oracle_depth_with_far, raytrace, AnalyticScene};

#[derive(Parser)]
#[command(
    name = "ggn",
    about = "Multi-view pixel-aligned Gaussian splatting with graph fusion and pooling"
)]
struct Cli {
    /// JSON pipeline configuration; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the weight seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads for benchmark rows; results are identical for any value.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Raytrace a scene rig and write images, depth maps and cameras.
    Generate {
        #[arg(long, default_value = "two-sphere-tableau")]
        scene: String,
        #[arg(long, default_value_t = 4)]
        views: usize,
    },
    /// Build the Gaussian graph and emit its summary JSON.
    BuildGraph {
        #[arg(long, default_value = "two-sphere-tableau")]
        scene: String,
        #[arg(long, default_value_t = 4)]
        views: usize,
    },
    /// Run the full pipeline: lift, fuse, pool, predict, render, evaluate.
    Forward {
        #[arg(long, default_value = "two-sphere-tableau")]
        scene: String,
        #[arg(long, default_value_t = 4)]
        views: usize,
        #[arg(long, value_parser = parse_mode, default_value = "ggn")]
        mode: Mode,
        /// Weight file from `fit`; seeded weights are used when absent.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Run up to pooling and emit per-component statistics.
    Pool {
        #[arg(long, default_value = "two-sphere-tableau")]
        scene: String,
        #[arg(long, default_value_t = 4)]
        views: usize,
    },
    /// Render a splat file from a camera.
    Render {
        #[arg(long)]
        splats: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        /// Background color as r,g,b, each in 0..=1.
        #[arg(long, default_value = "0,0,0", value_parser = parse_rgb)]
        background: Rgb,
        #[arg(long, default_value = "render.ppm")]
        out: PathBuf,
    },
    /// PSNR/SSIM between a rendered image and a reference.
    Evaluate {
        #[arg(long)]
        rendered: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Compare pipeline modes across view counts on the standard suite.
    Benchmark {
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        views: Vec<usize>,
        #[arg(long, value_delimiter = ',', value_parser = parse_mode,
              default_value = "ggn,union-baseline,no-linear,no-pooling,vanilla")]
        modes: Vec<Mode>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Print "n/a" in timing columns so the CSV is byte-stable.
        #[arg(long)]
        no_timing: bool,
    },
    /// Fit layer and head weights against oracle targets on the suite.
    Fit {
        #[arg(long, default_value_t = 2)]
        views: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
    },
    /// Verify analytic gradients against central finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        check_seed: u64,
    },
}

#[derive(Clone, Copy)]
struct Rgb([f64; 3]);

fn parse_rgb(s: &str) -> Result<Rgb, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected r,g,b".into());
    }
    let mut rgb = [0.0; 3];
    for (slot, part) in rgb.iter_mut().zip(parts) {
        *slot = part.trim().parse::<f64>().map_err(|e| e.to_string())?;
    }
    Ok(Rgb(rgb))
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    Mode::parse(s).ok_or_else(|| {
        format!(
            "unknown mode '{s}'; expected one of {}",
            Mode::ALL.map(|m| m.label()).join(", ")
        )
    })
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config: PipelineConfig = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).context("parsing config JSON")?
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.weight_seed = seed;
    }
    config
        .validate()
        .map_err(|e| anyhow!("invalid config: {e}"))?;
    Ok(config)
}

fn load_scene(source: &str) -> Result<AnalyticScene> {
    if let Some(scene) = scene_by_name(source) {
        return Ok(scene);
    }
    let path = Path::new(source);
    if path.exists() {
        let scene: AnalyticScene = serde_json::from_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading scene {}", path.display()))?,
        )
        .context("parsing scene JSON")?;
        scene.validate()?;
        return Ok(scene);
    }
    Err(anyhow!(
        "unknown scene '{source}': not one of {:?} and no such file",
        scene_names()
    ))
}

fn build_rig(source: &str, views: usize, config: &PipelineConfig) -> Result<SceneRig> {
    if let Some(rig) = standard_rig(source, views, config) {
        return Ok(rig);
    }
    let scene = load_scene(source)?;
    let center = nalgebra::Point3::origin();
    let inputs = arc_cameras(
        views,
        15.0,
        4.0,
        0.5,
        center,
        config.width,
        config.height,
        0.0,
    );
    let n_targets = 3.min(views.saturating_sub(1)).max(1);
    let targets = arc_cameras(
        n_targets,
        15.0,
        4.0,
        0.5,
        center,
        config.width,
        config.height,
        7.5,
    );
    Ok(SceneRig {
        name: source.to_string(),
        scene,
        inputs,
        targets,
    })
}

fn load_weight_file(path: &Path, config: &PipelineConfig) -> Result<TrainableWeights> {
    let (layers, heads, stored_hash) = load_weights(path)?;
    if stored_hash != config.hash() {
        eprintln!(
            "note: weight file was trained under config {stored_hash:016x}, current is {}",
            config.hash_hex()
        );
    }
    Ok(TrainableWeights { layers, heads })
}

/// Failure classes mapped to process exit codes.
enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
    Other(anyhow::Error),
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = load_config(&cli).map_err(Failure::Config)?;
    let out_dir = cli.out_dir.clone();
    match cli.command {
        Command::Generate { scene, views } => {
            let rig = build_rig(&scene, views, &config).map_err(Failure::Config)?;
            std::fs::create_dir_all(&out_dir)
                .context("creating out dir")
                .map_err(Failure::Other)?;
            let write_view = |prefix: &str, k: usize, cam: &Camera| -> Result<()> {
                let view = raytrace(&rig.scene, cam);
                write_ppm(&view.image, &out_dir.join(format!("{prefix}_{k:02}.ppm")))?;
                let depth = oracle_depth_with_far(
                    &view,
                    config.noise_sigma,
                    config.noise_seed.wrapping_add(k as u64),
                    config.far_depth,
                );
                write_depth_raw(
                    &depth,
                    cam.width,
                    cam.height,
                    &out_dir.join(format!("{prefix}_{k:02}.depth.raw")),
                )?;
                std::fs::write(
                    out_dir.join(format!("{prefix}_{k:02}.camera.json")),
                    serde_json::to_string_pretty(cam)?,
                )?;
                Ok(())
            };
            for (k, cam) in rig.inputs.iter().enumerate() {
                write_view("view", k, cam).map_err(Failure::Other)?;
            }
            for (k, cam) in rig.targets.iter().enumerate() {
                write_view("target", k, cam).map_err(Failure::Other)?;
            }
            println!(
                "wrote {} input and {} target views to {}",
                rig.inputs.len(),
                rig.targets.len(),
                out_dir.display()
            );
            Ok(())
        }
        Command::BuildGraph { scene, views } => {
            let rig = build_rig(&scene, views, &config).map_err(Failure::Config)?;
            let bundles: Vec<_> = rig.inputs.iter().map(|c| raytrace(&rig.scene, c)).collect();
            let nodes: Vec<_> = bundles
                .iter()
                .enumerate()
                .map(|(i, view)| {
                    let depth = oracle_depth_with_far(
                        view,
                        config.noise_sigma,
                        config.noise_seed.wrapping_add(i as u64),
                        config.far_depth,
                    );
                    let feats = encode_features(view, config.feat_dim)?;
                    Ok(lift_view(view, &depth, &feats, i)?)
                })
                .collect::<Result<_>>()
                .map_err(Failure::Other)?;
            let graph = GaussianGraph::build(nodes, config.top_n, config.adjacency_mode)
                .context("building graph")
                .map_err(Failure::Other)?;
            let summary = graph_summary(&graph, config.tau);
            std::fs::create_dir_all(&out_dir).ok();
            let path = out_dir.join("graph.json");
            std::fs::write(&path, serde_json::to_string_pretty(&summary).unwrap())
                .context("writing graph.json")
                .map_err(Failure::Other)?;
            println!(
                "graph: {} nodes, {} retained edges, {} components -> {}",
                summary.nodes,
                summary.retained_edges.len(),
                summary.components.len(),
                path.display()
            );
            Ok(())
        }
        Command::Forward {
            scene,
            views,
            mode,
            weights,
        } => {
            let rig = build_rig(&scene, views, &config).map_err(Failure::Config)?;
            let loaded = match &weights {
                Some(path) => Some(load_weight_file(path, &config).map_err(Failure::Config)?),
                None => None,
            };
            let output = run_pipeline(&rig, &config, mode, loaded.as_ref())
                .map_err(|e| Failure::Other(e.into()))?;
            write_artifacts(&output, &config, &out_dir).map_err(|e| Failure::Other(e.into()))?;
            println!(
                "{}: {} views -> {} Gaussians (lifted {}), PSNR {:.2} dB, SSIM {:.4}, {:.1} ms/frame",
                mode.label(),
                views,
                output.report.gaussian_count,
                output.report.lifted_count,
                output.report.mean_psnr,
                output.report.mean_ssim,
                output.report.render_ms_per_frame
            );
            println!("artifacts in {}", out_dir.display());
            Ok(())
        }
        Command::Pool { scene, views } => {
            let rig = build_rig(&scene, views, &config).map_err(Failure::Config)?;
            let output = run_pipeline(&rig, &config, Mode::Ggn, None)
                .map_err(|e| Failure::Other(e.into()))?;
            let report = pool_report(&output.component_stats, &output.survivor_counts);
            std::fs::create_dir_all(&out_dir).ok();
            let path = out_dir.join("pool.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report).unwrap())
                .context("writing pool.json")
                .map_err(Failure::Other)?;
            println!(
                "pooled {} -> {} Gaussians across {} components -> {}",
                report.total_input,
                report.total_output,
                report.components.len(),
                path.display()
            );
            Ok(())
        }
        Command::Render {
            splats,
            camera,
            background,
            out,
        } => {
            let scene = read_splats(&splats)
                .with_context(|| format!("reading {}", splats.display()))
                .map_err(Failure::Other)?;
            let cam: Camera = serde_json::from_str(
                &std::fs::read_to_string(&camera)
                    .with_context(|| format!("reading {}", camera.display()))
                    .map_err(Failure::Config)?,
            )
            .context("parsing camera JSON")
            .map_err(Failure::Config)?;
            let (img, stats) = render(&scene, &cam, background.0);
            write_ppm(&img, &out)
                .context("writing image")
                .map_err(Failure::Other)?;
            println!(
                "rendered {} splats ({} culled, {} degenerate) -> {}",
                scene.len(),
                stats.culled_behind,
                stats.skipped_non_psd,
                out.display()
            );
            Ok(())
        }
        Command::Evaluate {
            rendered,
            reference,
        } => {
            let a = read_ppm(&rendered)
                .context("reading rendered")
                .map_err(Failure::Other)?;
            let b = read_ppm(&reference)
                .context("reading reference")
                .map_err(Failure::Other)?;
            let psnr_db = psnr(&a, &b).map_err(|e| Failure::Config(e.into()))?;
            let ssim_val = ssim(&a, &b).map_err(|e| Failure::Config(e.into()))?;
            println!("{{\"psnr_db\": {psnr_db:.4}, \"ssim\": {ssim_val:.6}, \"lpips\": \"n/a\"}}");
            Ok(())
        }
        Command::Benchmark {
            views,
            modes,
            weights,
            no_timing,
        } => {
            let loaded = match &weights {
                Some(path) => Some(load_weight_file(path, &config).map_err(Failure::Config)?),
                None => None,
            };
            let rows = benchmark(&views, &modes, &config, loaded.as_ref(), cli.jobs)
                .map_err(|e| Failure::Other(e.into()))?;
            let csv = benchmark_csv(&rows, !no_timing);
            std::fs::create_dir_all(&out_dir).ok();
            let path = out_dir.join("benchmark.csv");
            std::fs::write(&path, &csv)
                .context("writing CSV")
                .map_err(Failure::Other)?;
            print!("{csv}");
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Fit { views, steps, lr } => {
            let rigs = standard_suite(views, &config);
            let fit = FitConfig {
                steps,
                learning_rate: lr,
                ..FitConfig::default()
            };
            let (weights, curves) = fit_suite(&rigs, &config, &fit).map_err(|e| {
                if e.message.contains("diverged") {
                    Failure::Numerical(e.into())
                } else {
                    Failure::Other(e.into())
                }
            })?;
            std::fs::create_dir_all(&out_dir).ok();
            let weight_path = out_dir.join("weights.bin");
            save_weights(&weights.layers, &weights.heads, config.hash(), &weight_path)
                .context("writing weights")
                .map_err(Failure::Other)?;
            for (rig, curve) in rigs.iter().zip(&curves) {
                let mut csv = String::from("step,loss\n");
                for (i, loss) in curve.iter().enumerate() {
                    csv.push_str(&format!("{i},{loss:.12e}\n"));
                }
                std::fs::write(out_dir.join(format!("loss_{}.csv", rig.name)), csv)
                    .context("writing loss curve")
                    .map_err(Failure::Other)?;
                println!(
                    "{}: loss {:.4e} -> {:.4e} over {} steps",
                    rig.name,
                    curve.first().unwrap_or(&f64::NAN),
                    curve.last().unwrap_or(&f64::NAN),
                    curve.len()
                );
            }
            println!("weights in {}", weight_path.display());
            Ok(())
        }
        Command::Gradcheck { check_seed } => {
            let components = [
                GradcheckComponent::Heads,
                GradcheckComponent::Layer { edged: false },
                GradcheckComponent::Layer { edged: true },
                GradcheckComponent::FullStack { edged: false },
                GradcheckComponent::FullStack { edged: true },
            ];
            let mut reports = Vec::new();
            let mut all_passed = true;
            for component in components {
                let report =
                    gradcheck(component, check_seed).map_err(|e| Failure::Other(e.into()))?;
                println!(
                    "{}: {} ({} params, max rel err {:.3e})",
                    report.component,
                    if report.passed { "PASS" } else { "FAIL" },
                    report.params_checked,
                    report.max_rel_err
                );
                all_passed &= report.passed;
                reports.push(report);
            }
            std::fs::create_dir_all(&out_dir).ok();
            std::fs::write(
                out_dir.join("gradcheck.json"),
                serde_json::to_string_pretty(&reports).unwrap(),
            )
            .context("writing gradcheck.json")
            .map_err(Failure::Other)?;
            if !all_passed {
                return Err(Failure::Numerical(anyhow!("gradient check failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
