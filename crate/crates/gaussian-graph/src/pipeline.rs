//! End-to-end orchestration and the benchmark harness: synthetic scene in,
//! splat file and evaluation report out, with the plain union of per-view
//! Gaussians as the built-in comparison arm and ablation modes matching the
//! layer/pooling switches.

use std::path::Path;
use std::time::Instant;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::features::FeatureMatrix;
use crate::gaussians::{lift_view, GaussianNode, SceneGaussians};
use crate::geometry::Camera;
use crate::graph::GaussianGraph;
use crate::heads::{predict_params, HeadStats, HeadWeights};
use crate::image::{write_ppm, Image};
use crate::metrics::{psnr, ssim, EvalReport};
use crate::network::{forward, init_weights};
use crate::optim::{
    fit_heads, pooled_selection, FitConfig, FitOutcome, FitTargets, TrainableWeights,
};
use crate::pooling::{pool_graph, ComponentStats, PooledSet};
use crate::render::{render, RenderStats};
use crate::synth::{encode_features, oracle_depth_with_far, raytrace, AnalyticScene, ViewBundle};

#[derive(Debug, Error)]
#[error("pipeline stage '{stage}' failed: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
    }
}

/// One scene plus its input and held-out camera sets.
#[derive(Debug, Clone)]
pub struct SceneRig {
    pub name: String,
    pub scene: AnalyticScene,
    pub inputs: Vec<Camera>,
    pub targets: Vec<Camera>,
}

/// Pipeline variants: the full graph pipeline, the union-of-views baseline,
/// and the ablations that drop one of the two graph stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Graph layers + pooling.
    Ggn,
    /// Edgeless graph, no pooling: the plain union of per-view Gaussians.
    UnionBaseline,
    /// Pooling only; features pass through untouched.
    NoLinear,
    /// Graph layers only; the union is kept unpooled.
    NoPooling,
    /// Neither layers nor pooling.
    Vanilla,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Ggn,
        Mode::UnionBaseline,
        Mode::NoLinear,
        Mode::NoPooling,
        Mode::Vanilla,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Ggn => "ggn",
            Mode::UnionBaseline => "union-baseline",
            Mode::NoLinear => "no-linear",
            Mode::NoPooling => "no-pooling",
            Mode::Vanilla => "vanilla",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        Mode::ALL.into_iter().find(|m| m.label() == s)
    }

    fn uses_layers(self) -> bool {
        matches!(self, Mode::Ggn | Mode::NoPooling | Mode::UnionBaseline)
    }

    fn uses_pooling(self) -> bool {
        matches!(self, Mode::Ggn | Mode::NoLinear)
    }

    fn top_n(self, configured: usize) -> usize {
        match self {
            Mode::UnionBaseline | Mode::Vanilla => 0,
            _ => configured,
        }
    }
}

/// Everything a pipeline run produces, file writing left to the caller.
#[derive(Debug)]
pub struct PipelineOutput {
    pub splats: SceneGaussians,
    pub renders: Vec<Image>,
    pub target_truth: Vec<Image>,
    pub report: EvalReport,
    pub head_stats: HeadStats,
    pub render_stats: Vec<RenderStats>,
    pub survivor_counts: Vec<usize>,
    pub component_stats: Vec<ComponentStats>,
}

/// Union of all nodes without any merging; the degraded pooling case used
/// by the baseline and the no-pooling ablation.
fn union_pooled(
    graph: &GaussianGraph,
    features: &[FeatureMatrix],
) -> Result<PooledSet, PipelineError> {
    let feat_dim = features.first().map_or(0, |f| f.dim());
    let mut gaussians = Vec::new();
    let mut out_features = FeatureMatrix::zeros(0, feat_dim);
    let mut footprints = Vec::new();
    let mut survivor_counts = vec![0usize; graph.n()];
    let mut component_stats = Vec::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        for (row, g) in node.gaussians.iter().enumerate() {
            out_features.push_row(features[i].row(row));
            let depth = node.camera.to_camera_frame(&g.mean).z;
            footprints.push(depth / node.camera.fx);
            survivor_counts[i] += 1;
            gaussians.push(g.clone());
        }
        component_stats.push(ComponentStats {
            members: vec![i],
            anchor: i,
            input_count: node.len(),
            output_count: node.len(),
            ..Default::default()
        });
    }
    Ok(PooledSet {
        gaussians,
        features: out_features,
        footprints,
        survivor_counts,
        component_stats,
    })
}

/// Render the inputs, lift, build the graph, run the configured stages and
/// evaluate against the held-out targets, in that order. Stage timings
/// cover compute only.
pub fn run_pipeline(
    rig: &SceneRig,
    config: &PipelineConfig,
    mode: Mode,
    weights: Option<&TrainableWeights>,
) -> Result<PipelineOutput, PipelineError> {
    config.validate().map_err(stage_err("config"))?;
    if rig.inputs.is_empty() {
        return Err(PipelineError {
            stage: "config",
            message: "at least one input view is required".into(),
        });
    }
    if rig.targets.is_empty() {
        return Err(PipelineError {
            stage: "config",
            message: "at least one held-out target view is required".into(),
        });
    }
    rig.scene.validate().map_err(stage_err("config"))?;

    let mut report = EvalReport {
        config_hash: config.hash_hex(),
        ..Default::default()
    };

    // Ground-truth views.
    let t0 = Instant::now();
    let views: Vec<ViewBundle> = rig
        .inputs
        .iter()
        .map(|cam| raytrace(&rig.scene, cam))
        .collect();
    let target_truth: Vec<Image> = rig
        .targets
        .iter()
        .map(|cam| raytrace(&rig.scene, cam).image)
        .collect();
    report.stage_ms.raytrace_ms = t0.elapsed().as_secs_f64() * 1e3;

    // Oracle depth and deterministic features.
    let t0 = Instant::now();
    let depths: Vec<Vec<f64>> = views
        .iter()
        .enumerate()
        .map(|(i, view)| {
            oracle_depth_with_far(
                view,
                config.noise_sigma,
                config.noise_seed.wrapping_add(i as u64),
                config.far_depth,
            )
        })
        .collect();
    let features: Vec<FeatureMatrix> = views
        .iter()
        .map(|view| encode_features(view, config.feat_dim))
        .collect::<Result<_, _>>()
        .map_err(stage_err("encode"))?;
    report.stage_ms.encode_ms = t0.elapsed().as_secs_f64() * 1e3;

    // Lift to pixel-aligned Gaussians.
    let t0 = Instant::now();
    let nodes: Vec<GaussianNode> = views
        .iter()
        .zip(&depths)
        .zip(&features)
        .enumerate()
        .map(|(i, ((view, depth), feats))| lift_view(view, depth, feats, i))
        .collect::<Result<_, _>>()
        .map_err(stage_err("lift"))?;
    report.lifted_count = nodes.iter().map(GaussianNode::len).sum();
    report.stage_ms.lift_ms = t0.elapsed().as_secs_f64() * 1e3;

    // Graph construction.
    let t0 = Instant::now();
    let graph = GaussianGraph::build(nodes, mode.top_n(config.top_n), config.adjacency_mode)
        .map_err(stage_err("graph"))?;
    report.stage_ms.graph_ms = t0.elapsed().as_secs_f64() * 1e3;

    // Feature fusion.
    let net_config = config.network_config();
    let owned_weights;
    let weights = match weights {
        Some(w) => w,
        None => {
            owned_weights = TrainableWeights {
                layers: init_weights(&net_config).map_err(stage_err("forward"))?,
                heads: HeadWeights::init(
                    config.feat_dim,
                    config.activation,
                    config.weight_seed ^ 0x6ead,
                ),
            };
            &owned_weights
        }
    };
    let t0 = Instant::now();
    let fused = if mode.uses_layers() {
        forward(&graph, &net_config, &weights.layers, &features).map_err(stage_err("forward"))?
    } else {
        features.clone()
    };
    report.stage_ms.forward_ms = t0.elapsed().as_secs_f64() * 1e3;

    // Pooling (or the union).
    let t0 = Instant::now();
    let pooled = if mode.uses_pooling() {
        pool_graph(&graph, &fused, &config.pooling_config()).map_err(stage_err("pool"))?
    } else {
        union_pooled(&graph, &fused)?
    };
    report.stage_ms.pool_ms = t0.elapsed().as_secs_f64() * 1e3;
    report.gaussian_count = pooled.len();
    let survivor_counts = pooled.survivor_counts.clone();
    let component_stats = pooled.component_stats.clone();

    // Parameter prediction.
    let t0 = Instant::now();
    let (splats, head_stats) =
        predict_params(&pooled, &weights.heads).map_err(stage_err("heads"))?;
    report.stage_ms.heads_ms = t0.elapsed().as_secs_f64() * 1e3;

    // Render held-out targets; the first render is a warmup and excluded
    // from the per-frame figure.
    let t0 = Instant::now();
    let _warmup = render(&splats, &rig.targets[0], rig.scene.background);
    let mut renders = Vec::with_capacity(rig.targets.len());
    let mut render_stats = Vec::with_capacity(rig.targets.len());
    let mut frame_ms = Vec::with_capacity(rig.targets.len());
    for cam in &rig.targets {
        let f0 = Instant::now();
        let (img, stats) = render(&splats, cam, rig.scene.background);
        frame_ms.push(f0.elapsed().as_secs_f64() * 1e3);
        renders.push(img);
        render_stats.push(stats);
    }
    report.stage_ms.render_ms = t0.elapsed().as_secs_f64() * 1e3;
    report.set_render_time(frame_ms.iter().sum::<f64>() / frame_ms.len() as f64);

    // Quality metrics.
    for (have, want) in renders.iter().zip(&target_truth) {
        report
            .per_view_psnr
            .push(psnr(have, want).map_err(stage_err("evaluate"))?);
        report
            .per_view_ssim
            .push(ssim(have, want).map_err(stage_err("evaluate"))?);
    }
    report.mean_psnr = report.per_view_psnr.iter().sum::<f64>() / report.per_view_psnr.len() as f64;
    report.mean_ssim = report.per_view_ssim.iter().sum::<f64>() / report.per_view_ssim.len() as f64;

    Ok(PipelineOutput {
        splats,
        renders,
        target_truth,
        report,
        head_stats,
        render_stats,
        survivor_counts,
        component_stats,
    })
}

/// Sidecar metadata written next to every splat file.
#[derive(Debug, Serialize, Deserialize)]
pub struct SplatSidecar {
    pub feat_dim: usize,
    pub view_histogram: Vec<usize>,
    pub config_hash: String,
}

/// Write the splat PLY (+ JSON sidecar), per-target PPM renders and the
/// evaluation report into `out_dir`.
pub fn write_artifacts(
    output: &PipelineOutput,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(stage_err("write"))?;
    crate::gaussians::write_splats(&output.splats, &out_dir.join("splats.ply"))
        .map_err(stage_err("write"))?;
    let sidecar = SplatSidecar {
        feat_dim: config.feat_dim,
        view_histogram: output.survivor_counts.clone(),
        config_hash: config.hash_hex(),
    };
    std::fs::write(
        out_dir.join("splats.meta.json"),
        serde_json::to_string_pretty(&sidecar).map_err(stage_err("write"))?,
    )
    .map_err(stage_err("write"))?;
    for (k, img) in output.renders.iter().enumerate() {
        write_ppm(img, &out_dir.join(format!("render_{k:02}.ppm"))).map_err(stage_err("write"))?;
    }
    for (k, img) in output.target_truth.iter().enumerate() {
        write_ppm(img, &out_dir.join(format!("target_{k:02}.ppm"))).map_err(stage_err("write"))?;
    }
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&output.report).map_err(stage_err("write"))?,
    )
    .map_err(stage_err("write"))?;
    Ok(())
}

/// Inward-facing arc: cameras on a circle of `radius`, `spacing_deg` apart,
/// centered on the +z axis toward `center`.
pub fn arc_cameras(
    n: usize,
    spacing_deg: f64,
    radius: f64,
    height: f64,
    center: Point3<f64>,
    width: u32,
    image_height: u32,
    angle_offset_deg: f64,
) -> Vec<Camera> {
    let fx = width as f64;
    let fy = width as f64;
    let cx = width as f64 / 2.0;
    let cy = image_height as f64 / 2.0;
    (0..n)
        .map(|k| {
            let theta =
                (angle_offset_deg + (k as f64 - (n as f64 - 1.0) / 2.0) * spacing_deg).to_radians();
            let eye = center + Vector3::new(radius * theta.sin(), height, -radius * theta.cos());
            Camera::look_at(
                fx,
                fy,
                cx,
                cy,
                width,
                image_height,
                eye,
                center,
                Vector3::y(),
            )
            .expect("arc camera construction")
        })
        .collect()
}

pub fn scene_names() -> [&'static str; 3] {
    ["checkered-room", "two-sphere-tableau", "tilted-plane"]
}

pub fn scene_by_name(name: &str) -> Option<AnalyticScene> {
    use crate::synth::{Albedo, Primitive};
    match name {
        "checkered-room" => Some(AnalyticScene {
            primitives: vec![
                Primitive::Plane {
                    point: [0.0, -1.5, 0.0],
                    normal: [0.0, 1.0, 0.0],
                    extent: 9.0,
                    albedo: Albedo::Checkerboard {
                        color_a: [0.85, 0.85, 0.82],
                        color_b: [0.22, 0.22, 0.25],
                        cell: 2.0,
                    },
                },
                Primitive::Plane {
                    point: [0.0, 2.5, 0.0],
                    normal: [0.0, -1.0, 0.0],
                    extent: 9.0,
                    albedo: Albedo::Solid {
                        color: [0.9, 0.88, 0.84],
                    },
                },
                Primitive::Plane {
                    point: [0.0, 0.0, 6.0],
                    normal: [0.0, 0.0, -1.0],
                    extent: 9.0,
                    albedo: Albedo::Checkerboard {
                        color_a: [0.75, 0.45, 0.35],
                        color_b: [0.92, 0.85, 0.78],
                        cell: 2.4,
                    },
                },
                Primitive::Plane {
                    point: [0.0, 0.0, -6.0],
                    normal: [0.0, 0.0, 1.0],
                    extent: 9.0,
                    albedo: Albedo::Checkerboard {
                        color_a: [0.35, 0.5, 0.7],
                        color_b: [0.82, 0.86, 0.9],
                        cell: 2.4,
                    },
                },
                Primitive::Plane {
                    point: [6.0, 0.0, 0.0],
                    normal: [-1.0, 0.0, 0.0],
                    extent: 9.0,
                    albedo: Albedo::Checkerboard {
                        color_a: [0.4, 0.65, 0.45],
                        color_b: [0.88, 0.92, 0.85],
                        cell: 2.4,
                    },
                },
                Primitive::Plane {
                    point: [-6.0, 0.0, 0.0],
                    normal: [1.0, 0.0, 0.0],
                    extent: 9.0,
                    albedo: Albedo::Checkerboard {
                        color_a: [0.7, 0.6, 0.3],
                        color_b: [0.9, 0.87, 0.8],
                        cell: 2.4,
                    },
                },
            ],
            background: [0.02, 0.02, 0.03],
        }),
        "two-sphere-tableau" => Some(AnalyticScene {
            primitives: vec![
                Primitive::Plane {
                    point: [0.0, -0.8, 0.0],
                    normal: [0.0, 1.0, 0.0],
                    extent: 7.0,
                    albedo: Albedo::Checkerboard {
                        color_a: [0.8, 0.78, 0.72],
                        color_b: [0.3, 0.32, 0.35],
                        cell: 1.5,
                    },
                },
                Primitive::Sphere {
                    center: [-0.8, -0.1, 0.3],
                    radius: 0.7,
                    albedo: Albedo::Gradient {
                        start: [0.85, 0.2, 0.15],
                        end: [0.95, 0.85, 0.25],
                    },
                },
                Primitive::Sphere {
                    center: [0.9, 0.1, -0.2],
                    radius: 0.55,
                    albedo: Albedo::Solid {
                        color: [0.2, 0.4, 0.8],
                    },
                },
            ],
            background: [0.7, 0.75, 0.8],
        }),
        "tilted-plane" => Some(AnalyticScene {
            primitives: vec![Primitive::Plane {
                point: [0.0, 0.0, 0.0],
                normal: {
                    let n = Vector3::new(0.25, 0.9, -0.35).normalize();
                    [n.x, n.y, n.z]
                },
                extent: 2.5,
                albedo: Albedo::Checkerboard {
                    color_a: [0.9, 0.55, 0.2],
                    color_b: [0.2, 0.35, 0.6],
                    cell: 1.0,
                },
            }],
            background: [0.12, 0.13, 0.16],
        }),
        _ => None,
    }
}

/// The fixed evaluation suite: three procedural scenes with inward-facing
/// camera arcs at 15-degree spacing and three held-out midpoint targets.
pub fn standard_rig(name: &str, n_views: usize, config: &PipelineConfig) -> Option<SceneRig> {
    let scene = scene_by_name(name)?;
    let (radius, height) = match name {
        "checkered-room" => (4.0, 0.9),
        "two-sphere-tableau" => (4.0, 1.1),
        _ => (4.0, 1.6),
    };
    let center = Point3::origin();
    let inputs = arc_cameras(
        n_views,
        15.0,
        radius,
        height,
        center,
        config.width,
        config.height,
        0.0,
    );
    let n_targets = 3.min(n_views.saturating_sub(1)).max(1);
    let targets = arc_cameras(
        n_targets,
        15.0,
        radius,
        height,
        center,
        config.width,
        config.height,
        7.5,
    );
    Some(SceneRig {
        name: name.to_string(),
        scene,
        inputs,
        targets,
    })
}

pub fn standard_suite(n_views: usize, config: &PipelineConfig) -> Vec<SceneRig> {
    scene_names()
        .iter()
        .map(|name| standard_rig(name, n_views, config).expect("known scene"))
        .collect()
}

/// Regression targets for fitting: ground-truth albedo at each survivor's
/// source pixel, opacity high for surface hits and low for background.
pub fn fit_targets(views: &[ViewBundle], pooled: &PooledSet) -> FitTargets {
    let mut colors = Vec::with_capacity(pooled.len());
    let mut opacities = Vec::with_capacity(pooled.len());
    for g in &pooled.gaussians {
        let view = &views[g.source_view];
        let k = g.pixel.index(view.camera.width);
        colors.push(view.image.data[k]);
        opacities.push(if view.hit[k] { 0.95 } else { 0.05 });
    }
    FitTargets { colors, opacities }
}

/// Fit the trainable stack against one rig's oracle targets.
pub fn fit_rig(
    rig: &SceneRig,
    config: &PipelineConfig,
    fit: &FitConfig,
    start: Option<TrainableWeights>,
) -> Result<FitOutcome, PipelineError> {
    config.validate().map_err(stage_err("config"))?;
    let views: Vec<ViewBundle> = rig
        .inputs
        .iter()
        .map(|cam| raytrace(&rig.scene, cam))
        .collect();
    let depths: Vec<Vec<f64>> = views
        .iter()
        .enumerate()
        .map(|(i, view)| {
            oracle_depth_with_far(
                view,
                config.noise_sigma,
                config.noise_seed.wrapping_add(i as u64),
                config.far_depth,
            )
        })
        .collect();
    let features: Vec<FeatureMatrix> = views
        .iter()
        .map(|view| encode_features(view, config.feat_dim))
        .collect::<Result<_, _>>()
        .map_err(stage_err("encode"))?;
    let nodes: Vec<GaussianNode> = views
        .iter()
        .zip(&depths)
        .zip(&features)
        .enumerate()
        .map(|(i, ((view, depth), feats))| lift_view(view, depth, feats, i))
        .collect::<Result<_, _>>()
        .map_err(stage_err("lift"))?;
    let graph = GaussianGraph::build(nodes, config.top_n, config.adjacency_mode)
        .map_err(stage_err("graph"))?;
    let pooled =
        pool_graph(&graph, &features, &config.pooling_config()).map_err(stage_err("pool"))?;
    let selection = pooled_selection(&graph, &pooled);
    let targets = fit_targets(&views, &pooled);
    let net_config = config.network_config();
    let start = start.unwrap_or_else(|| TrainableWeights {
        layers: init_weights(&net_config).expect("validated config"),
        heads: HeadWeights::init(
            config.feat_dim,
            config.activation,
            config.weight_seed ^ 0x6ead,
        ),
    });
    fit_heads(
        &graph,
        &net_config,
        &features,
        &selection,
        &pooled.footprints,
        &targets,
        start,
        fit,
    )
    .map_err(stage_err("fit"))
}

/// Fit across the whole suite, chaining weights scene to scene. Returns the
/// final weights and one loss curve per rig.
pub fn fit_suite(
    rigs: &[SceneRig],
    config: &PipelineConfig,
    fit: &FitConfig,
) -> Result<(TrainableWeights, Vec<Vec<f64>>), PipelineError> {
    let mut weights: Option<TrainableWeights> = None;
    let mut curves = Vec::with_capacity(rigs.len());
    for rig in rigs {
        let outcome = fit_rig(rig, config, fit, weights.take())?;
        curves.push(outcome.loss_curve);
        weights = Some(outcome.weights);
    }
    Ok((weights.expect("at least one rig"), curves))
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkRow {
    pub scene: String,
    pub views: usize,
    pub mode: Mode,
    pub psnr: f64,
    pub ssim: f64,
    /// Final Gaussian count scaled by the per-pixel arithmetic factor.
    pub gaussians: usize,
    pub lifted: usize,
    pub ms_per_frame: f64,
    pub fps: f64,
}

/// Run every (scene, view count, mode) combination of the standard suite.
/// Rows are produced in deterministic order regardless of `jobs`.
pub fn benchmark(
    view_counts: &[usize],
    modes: &[Mode],
    config: &PipelineConfig,
    weights: Option<&TrainableWeights>,
    jobs: usize,
) -> Result<Vec<BenchmarkRow>, PipelineError> {
    let mut cells = Vec::new();
    for &views in view_counts {
        for name in scene_names() {
            for &mode in modes {
                cells.push((name, views, mode));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(stage_err("benchmark"))?;
    let rows: Vec<Result<BenchmarkRow, PipelineError>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(name, views, mode)| {
                let rig = standard_rig(name, views, config).expect("known scene");
                let output = run_pipeline(&rig, config, mode, weights)?;
                if mode == Mode::UnionBaseline {
                    let expected = views * config.width as usize * config.height as usize;
                    if output.report.gaussian_count != expected {
                        return Err(PipelineError {
                            stage: "benchmark",
                            message: format!(
                                "union baseline produced {} Gaussians, expected {expected}",
                                output.report.gaussian_count
                            ),
                        });
                    }
                }
                Ok(BenchmarkRow {
                    scene: name.to_string(),
                    views,
                    mode,
                    psnr: output.report.mean_psnr,
                    ssim: output.report.mean_ssim,
                    gaussians: output.report.gaussian_count * config.gaussians_per_pixel as usize,
                    lifted: output.report.lifted_count,
                    ms_per_frame: output.report.render_ms_per_frame,
                    fps: output.report.fps,
                })
            })
            .collect()
    });
    rows.into_iter().collect()
}

/// CSV mirroring the usual comparison-table layout. Timing columns print
/// "n/a" when `timing` is off so the file is byte-stable across runs.
pub fn benchmark_csv(rows: &[BenchmarkRow], timing: bool) -> String {
    let mut out = String::from("scene,views,method,psnr_db,ssim,lpips,gaussians,fps\n");
    for row in rows {
        let fps = if timing {
            format!("{:.1}", row.fps)
        } else {
            "n/a".to_string()
        };
        out.push_str(&format!(
            "{},{},{},{:.3},{:.4},n/a,{},{}\n",
            row.scene,
            row.views,
            row.mode.label(),
            row.psnr,
            row.ssim,
            row.gaussians,
            fps
        ));
    }
    out
}

#[derive(Debug, Serialize)]
pub struct OperatorSummary {
    pub target: usize,
    pub source: usize,
    pub occupied_pixels: usize,
    pub total_entries: usize,
    pub max_entries_per_pixel: usize,
}

#[derive(Debug, Serialize)]
pub struct GraphSummary {
    pub nodes: usize,
    pub node_sizes: Vec<usize>,
    pub adjacency: Vec<Vec<f64>>,
    pub scaled_adjacency: Vec<Vec<f64>>,
    pub retained_edges: Vec<(usize, usize)>,
    pub components: Vec<Vec<usize>>,
    pub operators: Vec<OperatorSummary>,
}

pub fn graph_summary(graph: &GaussianGraph, tau: f64) -> GraphSummary {
    let n = graph.n();
    let as_rows =
        |m: &[f64]| -> Vec<Vec<f64>> { (0..n).map(|i| m[i * n..(i + 1) * n].to_vec()).collect() };
    GraphSummary {
        nodes: n,
        node_sizes: graph.nodes.iter().map(GaussianNode::len).collect(),
        adjacency: as_rows(&graph.adjacency),
        scaled_adjacency: as_rows(&graph.scaled_adjacency),
        retained_edges: graph.retained.clone(),
        components: graph.components(tau),
        operators: graph
            .operators
            .iter()
            .map(|(&(target, source), op)| OperatorSummary {
                target,
                source,
                occupied_pixels: op.occupied_pixels(),
                total_entries: op.total_entries(),
                max_entries_per_pixel: (0..op.target_pixels())
                    .map(|p| op.entry_count(p))
                    .max()
                    .unwrap_or(0),
            })
            .collect(),
    }
}

#[derive(Debug, Serialize)]
pub struct LambdaHistogram {
    pub min: f64,
    pub max: f64,
    pub bins: Vec<usize>,
}

#[derive(Debug, Serialize)]
pub struct ComponentReport {
    pub members: Vec<usize>,
    pub anchor: usize,
    pub input_count: usize,
    pub output_count: usize,
    pub dropped: usize,
    pub drop_ratio: f64,
}

#[derive(Debug, Serialize)]
pub struct PoolReport {
    pub total_input: usize,
    pub total_output: usize,
    pub survivor_counts: Vec<usize>,
    pub components: Vec<ComponentReport>,
    pub lambda_histogram: Option<LambdaHistogram>,
}

pub fn pool_report(stats: &[ComponentStats], survivor_counts: &[usize]) -> PoolReport {
    let mut lambdas: Vec<f64> = stats
        .iter()
        .flat_map(|s| s.lambda_effective.iter().copied())
        .collect();
    let histogram = if lambdas.is_empty() {
        None
    } else {
        lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (min, max) = (lambdas[0], *lambdas.last().unwrap());
        let mut bins = vec![0usize; 10];
        for &v in &lambdas {
            let t = if max > min {
                (v - min) / (max - min)
            } else {
                0.0
            };
            bins[((t * 10.0) as usize).min(9)] += 1;
        }
        Some(LambdaHistogram { min, max, bins })
    };
    PoolReport {
        total_input: stats.iter().map(|s| s.input_count).sum(),
        total_output: stats.iter().map(|s| s.output_count).sum(),
        survivor_counts: survivor_counts.to_vec(),
        components: stats
            .iter()
            .map(|s| ComponentReport {
                members: s.members.clone(),
                anchor: s.anchor,
                input_count: s.input_count,
                output_count: s.output_count,
                dropped: s.dropped,
                drop_ratio: s.dropped as f64 / s.input_count.max(1) as f64,
            })
            .collect(),
        lambda_histogram: histogram,
    }
}
