//! Multi-view pixel-aligned Gaussian splatting with graph-based fusion.
//!
//! The pipeline lifts one 3D Gaussian per input pixel, connects per-view
//! Gaussian groups into a graph weighted by view overlap, fuses features
//! through graph linear layers operating at the Gaussian level, deduplicates
//! overlapping groups with a pooling pass, predicts splat parameters and
//! renders the result with a CPU rasterizer.
//!
//! Entry points:
//! - [`pipeline::run_pipeline`] executes the full chain on a synthetic scene.
//! - [`pipeline::benchmark`] compares the graph pipeline against the plain
//!   union of per-view Gaussians and the ablation modes.
//! - The `examples/` directory holds one runnable example per capability,
//!   from raytracing input views to producing the benchmark table.
//! - The `ggn` binary exposes the same stages as subcommands.
//!
//! Everything is `f64` and deterministic: identical configuration produces
//! byte-identical splat files, images and tables, independent of thread count.

pub mod config;
pub mod features;
pub mod gaussians;
pub mod geometry;
pub mod graph;
pub mod heads;
pub mod image;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod pipeline;
pub mod pooling;
pub mod render;
pub mod rng;
pub mod synth;

pub use config::PipelineConfig;
pub use gaussians::{Gaussian, GaussianNode, SceneGaussians};
pub use geometry::{Camera, PixelCoord};
pub use graph::{EdgeOperator, GaussianGraph};
pub use pipeline::{run_pipeline, Mode, SceneRig};
pub use pooling::PooledSet;
pub use synth::{AnalyticScene, ViewBundle};
