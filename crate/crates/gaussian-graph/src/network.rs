//! Graph linear layers over Gaussian groups.
//!
//! The layer generalizes the usual graph convolution `sum_j a[i][j] f_j W`
//! by replacing the scalar edge weight with a sparse pixel-level operator:
//! node j's features are first scattered onto node i's pixel grid through
//! `E[j -> i]`, then the weighted sum over neighbors goes through the shared
//! linear map and nonlinearity. With no edges the layer collapses to an
//! ordinary per-node dense layer.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::graph::{AdjacencyMode, EdgeOperator, GaussianGraph};
use crate::heads::{HeadWeights, Mlp};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("feature dim mismatch: {0}")]
    DimMismatch(String),
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),
    #[error("weight file version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("weight file corrupt: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                // tanh form; self-consistent with `derivative`.
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Activation::Identity => x,
        }
    }

    /// Derivative with respect to the pre-activation. The ReLU subgradient
    /// at exactly zero is defined as 0.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
            }
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Gelu => 1,
            Activation::Identity => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, NetworkError> {
        match tag {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Gelu),
            2 => Ok(Activation::Identity),
            other => Err(NetworkError::Corrupt(format!(
                "unknown activation tag {other}"
            ))),
        }
    }
}

/// How multiple source Gaussians landing on one target pixel combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average the contributors; keeps magnitudes independent of overlap
    /// density.
    #[default]
    Mean,
    /// Take the contributor closest to the target camera.
    NearestDepth,
    /// Plain sum (the literal binary operator); magnitudes grow with the
    /// contributor count.
    Sum,
}

/// One graph layer: weight matrix, optional bias, nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphLayerWeights {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major fan_in x fan_out.
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Number of graph layers (h).
    pub num_layers: usize,
    /// Feature dimension entering each layer plus the final output: length
    /// `num_layers + 1`.
    pub dims: Vec<usize>,
    pub adjacency_mode: AdjacencyMode,
    pub aggregation: Aggregation,
    pub activation: Activation,
    pub use_bias: bool,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn uniform(num_layers: usize, dim: usize, seed: u64) -> Self {
        Self {
            num_layers,
            dims: vec![dim; num_layers + 1],
            adjacency_mode: AdjacencyMode::Row,
            aggregation: Aggregation::Mean,
            activation: Activation::Relu,
            use_bias: true,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if self.num_layers < 1 {
            return Err(NetworkError::ConfigMismatch(
                "num_layers must be >= 1".into(),
            ));
        }
        if self.dims.len() != self.num_layers + 1 {
            return Err(NetworkError::ConfigMismatch(format!(
                "dims has {} entries for {} layers",
                self.dims.len(),
                self.num_layers
            )));
        }
        Ok(())
    }
}

/// Apply `E[j -> i]` to node j's features: one output row per target pixel,
/// combining contributors per `aggregation`; unoccupied pixels get zeros.
pub fn gather_features(
    op: &EdgeOperator,
    features: &FeatureMatrix,
    aggregation: Aggregation,
) -> Result<FeatureMatrix, NetworkError> {
    let dim = features.dim();
    let mut out = FeatureMatrix::zeros(op.target_pixels(), dim);
    for p in 0..op.target_pixels() {
        let count = op.entry_count(p);
        if count == 0 {
            continue;
        }
        let row = out.row_mut(p);
        match aggregation {
            Aggregation::Mean | Aggregation::Sum => {
                for (m, _) in op.entries(p) {
                    if m >= features.rows() {
                        return Err(NetworkError::DimMismatch(format!(
                            "operator references source row {m} of {}",
                            features.rows()
                        )));
                    }
                    for (o, v) in row.iter_mut().zip(features.row(m)) {
                        *o += v;
                    }
                }
                if aggregation == Aggregation::Mean {
                    let inv = 1.0 / count as f64;
                    for o in row.iter_mut() {
                        *o *= inv;
                    }
                }
            }
            Aggregation::NearestDepth => {
                let (m, _) = op.entries(p).next().expect("count > 0");
                if m >= features.rows() {
                    return Err(NetworkError::DimMismatch(format!(
                        "operator references source row {m} of {}",
                        features.rows()
                    )));
                }
                row.copy_from_slice(features.row(m));
            }
        }
    }
    Ok(out)
}

/// Intermediates of one graph layer, retained for the reverse pass.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Per node: weighted sum of gathered neighbor features (pre-matmul).
    pub combined: Vec<FeatureMatrix>,
    /// Per node: result of the linear map, before the nonlinearity.
    pub pre_activation: Vec<FeatureMatrix>,
    /// Per node: layer output.
    pub output: Vec<FeatureMatrix>,
}

/// One graph linear layer with full intermediates.
pub fn graph_linear_traced(
    graph: &GaussianGraph,
    features: &[FeatureMatrix],
    weights: &GraphLayerWeights,
    aggregation: Aggregation,
) -> Result<LayerTrace, NetworkError> {
    let n = graph.n();
    if features.len() != n {
        return Err(NetworkError::DimMismatch(format!(
            "{} feature blocks for {} nodes",
            features.len(),
            n
        )));
    }
    for (i, f) in features.iter().enumerate() {
        if f.dim() != weights.fan_in {
            return Err(NetworkError::DimMismatch(format!(
                "node {i} features have dim {}, layer expects {}",
                f.dim(),
                weights.fan_in
            )));
        }
        if f.rows() != graph.nodes[i].len() {
            return Err(NetworkError::DimMismatch(format!(
                "node {i} features have {} rows for {} Gaussians",
                f.rows(),
                graph.nodes[i].len()
            )));
        }
        // Layers run before pooling: each node must still be pixel-aligned
        // so that gathered pixel grids and feature rows coincide.
        if graph.nodes[i].len() != graph.nodes[i].camera.pixel_count() {
            return Err(NetworkError::DimMismatch(format!(
                "node {i} holds {} Gaussians for a {} pixel grid; layers \
                 operate on freshly lifted nodes",
                graph.nodes[i].len(),
                graph.nodes[i].camera.pixel_count()
            )));
        }
    }
    let mut combined = Vec::with_capacity(n);
    for i in 0..n {
        let mut sources = graph.neighbors(i);
        sources.push(i);
        sources.sort_unstable();
        let mut acc = FeatureMatrix::zeros(graph.nodes[i].len(), weights.fan_in);
        for j in sources {
            let a = graph.scaled_weight(i, j);
            if a == 0.0 {
                continue;
            }
            let gathered = gather_features(graph.operator(i, j), &features[j], aggregation)?;
            acc.axpy(a, &gathered);
        }
        combined.push(acc);
    }
    let mut pre_activation = Vec::with_capacity(n);
    let mut output = Vec::with_capacity(n);
    for acc in &combined {
        let mut z = acc.matmul(&weights.weight, weights.fan_out);
        if let Some(bias) = &weights.bias {
            z.add_bias(bias);
        }
        let mut out = z.clone();
        out.map_in_place(|x| weights.activation.apply(x));
        pre_activation.push(z);
        output.push(out);
    }
    Ok(LayerTrace {
        combined,
        pre_activation,
        output,
    })
}

/// One graph linear layer; see [`graph_linear_traced`].
pub fn graph_linear(
    graph: &GaussianGraph,
    features: &[FeatureMatrix],
    weights: &GraphLayerWeights,
    aggregation: Aggregation,
) -> Result<Vec<FeatureMatrix>, NetworkError> {
    Ok(graph_linear_traced(graph, features, weights, aggregation)?.output)
}

/// Run `h` layers, feeding each output into the next. Edge operators and
/// the scaled adjacency stay fixed across layers; only features move.
pub fn forward(
    graph: &GaussianGraph,
    config: &NetworkConfig,
    weights: &[GraphLayerWeights],
    initial: &[FeatureMatrix],
) -> Result<Vec<FeatureMatrix>, NetworkError> {
    config.validate()?;
    if weights.len() != config.num_layers {
        return Err(NetworkError::ConfigMismatch(format!(
            "{} weight sets for {} layers",
            weights.len(),
            config.num_layers
        )));
    }
    let mut features = initial.to_vec();
    for layer in weights {
        features = graph_linear(graph, &features, layer, config.aggregation)?;
    }
    Ok(features)
}

/// Seeded Xavier-uniform initialization: entries in
/// +-sqrt(6 / (fan_in + fan_out)), biases zero.
pub fn init_weights(config: &NetworkConfig) -> Result<Vec<GraphLayerWeights>, NetworkError> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let mut layers = Vec::with_capacity(config.num_layers);
    for k in 0..config.num_layers {
        let fan_in = config.dims[k];
        let fan_out = config.dims[k + 1];
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = (0..fan_in * fan_out)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        layers.push(GraphLayerWeights {
            fan_in,
            fan_out,
            weight,
            bias: config.use_bias.then(|| vec![0.0; fan_out]),
            activation: config.activation,
        });
    }
    Ok(layers)
}

const WEIGHT_MAGIC: &[u8; 4] = b"GGNW";
const WEIGHT_VERSION: u32 = 1;

fn write_f64s(out: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_mlp(out: &mut impl Write, mlp: &Mlp) -> std::io::Result<()> {
    out.write_all(&(mlp.fan_in as u32).to_le_bytes())?;
    out.write_all(&(mlp.hidden as u32).to_le_bytes())?;
    out.write_all(&(mlp.fan_out as u32).to_le_bytes())?;
    out.write_all(&[mlp.activation.tag()])?;
    write_f64s(out, &mlp.w1)?;
    write_f64s(out, &mlp.b1)?;
    write_f64s(out, &mlp.w2)?;
    write_f64s(out, &mlp.b2)
}

/// Persist graph layers and prediction heads together: magic, version,
/// config hash, then little-endian f64 payloads.
pub fn save_weights(
    layers: &[GraphLayerWeights],
    heads: &HeadWeights,
    config_hash: u64,
    path: &Path,
) -> Result<(), NetworkError> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    out.write_all(WEIGHT_MAGIC)?;
    out.write_all(&WEIGHT_VERSION.to_le_bytes())?;
    out.write_all(&config_hash.to_le_bytes())?;
    out.write_all(&(layers.len() as u32).to_le_bytes())?;
    for layer in layers {
        out.write_all(&(layer.fan_in as u32).to_le_bytes())?;
        out.write_all(&(layer.fan_out as u32).to_le_bytes())?;
        out.write_all(&[layer.activation.tag(), layer.bias.is_some() as u8])?;
        write_f64s(&mut out, &layer.weight)?;
        if let Some(bias) = &layer.bias {
            write_f64s(&mut out, bias)?;
        }
    }
    for mlp in heads.all() {
        write_mlp(&mut out, mlp)?;
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetworkError> {
        if self.pos + n > self.bytes.len() {
            return Err(NetworkError::Corrupt(format!(
                "unexpected end of file at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NetworkError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, NetworkError> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8, NetworkError> {
        Ok(self.take(1)?[0])
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, NetworkError> {
        let b = self.take(n * 8)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn mlp(&mut self) -> Result<Mlp, NetworkError> {
        let fan_in = self.u32()? as usize;
        let hidden = self.u32()? as usize;
        let fan_out = self.u32()? as usize;
        let activation = Activation::from_tag(self.u8()?)?;
        Ok(Mlp {
            fan_in,
            hidden,
            fan_out,
            activation,
            w1: self.f64s(fan_in * hidden)?,
            b1: self.f64s(hidden)?,
            w2: self.f64s(hidden * fan_out)?,
            b2: self.f64s(fan_out)?,
        })
    }
}

/// Inverse of [`save_weights`]; returns the stored config hash for the
/// caller to check against its own configuration.
pub fn load_weights(
    path: &Path,
) -> Result<(Vec<GraphLayerWeights>, HeadWeights, u64), NetworkError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(NetworkError::Corrupt("bad magic".into()));
    }
    let version = r.u32()?;
    if version != WEIGHT_VERSION {
        return Err(NetworkError::VersionMismatch {
            expected: WEIGHT_VERSION,
            found: version,
        });
    }
    let config_hash = r.u64()?;
    let layer_count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let activation = Activation::from_tag(r.u8()?)?;
        let has_bias = r.u8()? != 0;
        let weight = r.f64s(fan_in * fan_out)?;
        let bias = if has_bias {
            Some(r.f64s(fan_out)?)
        } else {
            None
        };
        layers.push(GraphLayerWeights {
            fan_in,
            fan_out,
            weight,
            bias,
            activation,
        });
    }
    let heads = HeadWeights {
        rotation: r.mlp()?,
        scale: r.mlp()?,
        opacity: r.mlp()?,
        color: r.mlp()?,
    };
    if r.pos != bytes.len() {
        return Err(NetworkError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok((layers, heads, config_hash))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussians::lift_view;
    use crate::geometry::Camera;
    use crate::synth::{encode_features, oracle_depth, raytrace, Albedo, AnalyticScene, Primitive};
    use nalgebra::{Matrix4, Vector3};

    fn plane_scene() -> AnalyticScene {
        AnalyticScene {
            primitives: vec![Primitive::Plane {
                point: [0.0, 0.0, 4.0],
                normal: [0.0, 0.0, -1.0],
                extent: 60.0,
                albedo: Albedo::Gradient {
                    start: [0.0, 0.1, 0.9],
                    end: [0.9, 0.8, 0.1],
                },
            }],
            background: [0.0; 3],
        }
    }

    fn cam(size: u32, fx: f64, yaw: f64) -> Camera {
        let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot.into_inner());
        let c = size as f64 / 2.0;
        Camera::new(fx, fx, c, c, size, size, m).unwrap()
    }

    fn toy_graph(
        yaws: &[f64],
        size: u32,
        top_n: usize,
        feat_dim: usize,
    ) -> (GaussianGraph, Vec<FeatureMatrix>) {
        let scene = plane_scene();
        let nodes: Vec<_> = yaws
            .iter()
            .enumerate()
            .map(|(i, &yaw)| {
                let camera = cam(size, size as f64, yaw);
                let view = raytrace(&scene, &camera);
                let feats = encode_features(&view, feat_dim).unwrap();
                let depth = oracle_depth(&view, 0.0, 0);
                lift_view(&view, &depth, &feats, i).unwrap()
            })
            .collect();
        let feats: Vec<FeatureMatrix> = nodes.iter().map(|n| n.feature_matrix()).collect();
        let graph = GaussianGraph::build(nodes, top_n, AdjacencyMode::Row).unwrap();
        (graph, feats)
    }

    fn identity_layer(dim: usize) -> GraphLayerWeights {
        let mut weight = vec![0.0; dim * dim];
        for k in 0..dim {
            weight[k * dim + k] = 1.0;
        }
        GraphLayerWeights {
            fan_in: dim,
            fan_out: dim,
            weight,
            bias: None,
            activation: Activation::Identity,
        }
    }

    #[test]
    fn gather_through_identity_operator_is_identity() {
        let (graph, feats) = toy_graph(&[0.0], 8, 0, 8);
        let gathered = gather_features(graph.operator(0, 0), &feats[0], Aggregation::Mean).unwrap();
        assert_eq!(gathered, feats[0]);
    }

    #[test]
    fn gather_identity_correspondence_between_identical_views() {
        let (graph, feats) = toy_graph(&[0.0, 0.0], 8, 1, 8);
        let op = graph.operator(0, 1);
        let mean = gather_features(op, &feats[1], Aggregation::Mean).unwrap();
        let sum = gather_features(op, &feats[1], Aggregation::Sum).unwrap();
        assert_eq!(mean, feats[1]);
        assert_eq!(sum, feats[1]);
    }

    #[test]
    fn gather_mean_matches_two_source_average() {
        // Hand-built stack: duplicate node 0's Gaussians with shifted
        // features so one pixel receives two contributors.
        let (graph, feats) = toy_graph(&[0.0], 4, 0, 8);
        let mut doubled = graph.nodes[0].clone();
        let extra: Vec<_> = doubled.gaussians.clone();
        doubled.gaussians.extend(extra);
        let op = EdgeOperator::build(&doubled, &graph.nodes[0].camera);
        let mut stacked = FeatureMatrix::zeros(0, 8);
        for r in 0..feats[0].rows() {
            stacked.push_row(feats[0].row(r));
        }
        for r in 0..feats[0].rows() {
            let shifted: Vec<f64> = feats[0].row(r).iter().map(|v| v + 1.0).collect();
            stacked.push_row(&shifted);
        }
        let mean = gather_features(&op, &stacked, Aggregation::Mean).unwrap();
        for p in 0..16 {
            for c in 0..8 {
                let u = feats[0].row(p)[c];
                let w = u + 1.0;
                assert!((mean.row(p)[c] - (u + w) / 2.0).abs() < 1e-15);
            }
        }
        // Nearest-depth keeps the earlier-by-index contributor on exact ties.
        let nearest = gather_features(&op, &stacked, Aggregation::NearestDepth).unwrap();
        for p in 0..16 {
            assert_eq!(nearest.row(p), feats[0].row(p));
        }
    }

    #[test]
    fn gather_rejects_foreign_operator() {
        let (graph, feats) = toy_graph(&[0.0], 8, 0, 8);
        let short = feats[0].gather_rows(&[0, 1, 2]);
        assert!(gather_features(graph.operator(0, 0), &short, Aggregation::Mean).is_err());
    }

    #[test]
    fn isolated_node_identity_layer_is_identity() {
        let (graph, feats) = toy_graph(&[0.0], 8, 0, 8);
        let out = graph_linear(&graph, &feats, &identity_layer(8), Aggregation::Mean).unwrap();
        assert_eq!(out[0], feats[0]);
    }

    #[test]
    fn two_identical_views_average_features() {
        let (graph, feats) = toy_graph(&[0.0, 0.0], 8, 1, 8);
        assert_eq!(graph.scaled_weight(0, 0), 0.5);
        assert_eq!(graph.scaled_weight(0, 1), 0.5);
        let out = graph_linear(&graph, &feats, &identity_layer(8), Aggregation::Mean).unwrap();
        for r in 0..feats[0].rows() {
            for c in 0..8 {
                let want = 0.5 * feats[0].row(r)[c] + 0.5 * feats[1].row(r)[c];
                assert!((out[0].row(r)[c] - want).abs() < 1e-15);
            }
        }
    }

    /// Dense block-matrix evaluation of the layer, written independently of
    /// the sparse path: build the full binary operator per block and
    /// multiply through.
    fn dense_layer_oracle(
        graph: &GaussianGraph,
        feats: &[FeatureMatrix],
        weights: &GraphLayerWeights,
    ) -> Vec<FeatureMatrix> {
        let n = graph.n();
        let dim = weights.fan_in;
        let mut outputs = Vec::new();
        for i in 0..n {
            let rows_i = graph.nodes[i].len();
            let mut combined = vec![0.0; rows_i * dim];
            for j in 0..n {
                let a = graph.scaled_weight(i, j);
                if a == 0.0 {
                    continue;
                }
                let src = &graph.nodes[j];
                let mut e = vec![0.0; rows_i * src.len()];
                for (m, g) in src.gaussians.iter().enumerate() {
                    if let Some(px) = graph.nodes[i].camera.project(&g.mean) {
                        e[px.index(graph.nodes[i].camera.width) * src.len() + m] = 1.0;
                    }
                }
                for p in 0..rows_i {
                    let count: f64 = (0..src.len()).map(|m| e[p * src.len() + m]).sum();
                    if count == 0.0 {
                        continue;
                    }
                    for c in 0..dim {
                        let mut acc = 0.0;
                        for m in 0..src.len() {
                            acc += e[p * src.len() + m] * feats[j].row(m)[c];
                        }
                        combined[p * dim + c] += a * acc / count;
                    }
                }
            }
            let mut out = vec![0.0; rows_i * weights.fan_out];
            for p in 0..rows_i {
                for o in 0..weights.fan_out {
                    let mut acc = 0.0;
                    for c in 0..dim {
                        acc += combined[p * dim + c] * weights.weight[c * weights.fan_out + o];
                    }
                    if let Some(b) = &weights.bias {
                        acc += b[o];
                    }
                    out[p * weights.fan_out + o] = weights.activation.apply(acc);
                }
            }
            outputs.push(FeatureMatrix::from_data(rows_i, weights.fan_out, out));
        }
        outputs
    }

    #[test]
    fn graph_linear_matches_dense_block_oracle() {
        let (graph, feats) = toy_graph(&[0.0, 0.3, -0.25], 4, 2, 8);
        let mut rng = Rng::new(5);
        for activation in [Activation::Identity, Activation::Relu] {
            let weights = GraphLayerWeights {
                fan_in: 8,
                fan_out: 8,
                weight: (0..64).map(|_| rng.uniform(-1.0, 1.0)).collect(),
                bias: None,
                activation,
            };
            let fast = graph_linear(&graph, &feats, &weights, Aggregation::Mean).unwrap();
            let oracle = dense_layer_oracle(&graph, &feats, &weights);
            for (f, o) in fast.iter().zip(&oracle) {
                for (a, b) in f.data().iter().zip(o.data()) {
                    let denom = a.abs().max(b.abs()).max(1e-12);
                    assert!(((a - b) / denom).abs() < 1e-9, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn linearity_without_bias_and_activation() {
        let (graph, feats) = toy_graph(&[0.0, 0.3], 4, 1, 8);
        let mut rng = Rng::new(9);
        let weights = GraphLayerWeights {
            fan_in: 8,
            fan_out: 8,
            weight: (0..64).map(|_| rng.uniform(-1.0, 1.0)).collect(),
            bias: None,
            activation: Activation::Identity,
        };
        let (alpha, beta) = (0.7, -1.3);
        let g: Vec<FeatureMatrix> = feats
            .iter()
            .map(|f| {
                let mut r = f.clone();
                r.map_in_place(|x| x * x - 0.25); // an arbitrary second input
                r
            })
            .collect();
        let mut mixed = feats.clone();
        for (m, (f, gg)) in mixed.iter_mut().zip(feats.iter().zip(&g)) {
            for ((mv, fv), gv) in m.data_mut().iter_mut().zip(f.data()).zip(gg.data()) {
                *mv = alpha * fv + beta * gv;
            }
        }
        let out_mixed = graph_linear(&graph, &mixed, &weights, Aggregation::Mean).unwrap();
        let out_f = graph_linear(&graph, &feats, &weights, Aggregation::Mean).unwrap();
        let out_g = graph_linear(&graph, &g, &weights, Aggregation::Mean).unwrap();
        for i in 0..graph.n() {
            for ((m, f), gg) in out_mixed[i]
                .data()
                .iter()
                .zip(out_f[i].data())
                .zip(out_g[i].data())
            {
                let want = alpha * f + beta * gg;
                let denom = m.abs().max(want.abs()).max(1e-9);
                assert!(((m - want) / denom).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_single_layer_equals_graph_linear() {
        let (graph, feats) = toy_graph(&[0.0, 0.3], 4, 1, 8);
        let config = NetworkConfig::uniform(1, 8, 3);
        let weights = init_weights(&config).unwrap();
        let a = forward(&graph, &config, &weights, &feats).unwrap();
        let b = graph_linear(&graph, &feats, &weights[0], Aggregation::Mean).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edgeless_identity_forward_keeps_features() {
        let (graph, feats) = toy_graph(&[0.0, 0.4], 8, 0, 8);
        let mut config = NetworkConfig::uniform(2, 8, 0);
        config.activation = Activation::Identity;
        config.use_bias = false;
        let weights = vec![identity_layer(8), identity_layer(8)];
        let out = forward(&graph, &config, &weights, &feats).unwrap();
        assert_eq!(out, feats);
    }

    #[test]
    fn edgeless_forward_is_an_independent_per_node_dense_network() {
        // With no edges the layer must act per node: changing node 1's
        // input cannot move node 0's output, and the result equals the
        // plain dense network applied to each node alone.
        let (graph, feats) = toy_graph(&[0.0, 0.4], 8, 0, 8);
        let config = NetworkConfig::uniform(2, 8, 11);
        let weights = init_weights(&config).unwrap();
        let base = forward(&graph, &config, &weights, &feats).unwrap();
        let mut poked = feats.clone();
        poked[1].map_in_place(|x| x + 3.5);
        let moved = forward(&graph, &config, &weights, &poked).unwrap();
        assert_eq!(base[0], moved[0]);
        assert_ne!(base[1], moved[1]);
        // Per-node dense evaluation, no graph machinery at all.
        for (i, f) in feats.iter().enumerate() {
            let mut x = f.clone();
            for layer in &weights {
                let mut z = x.matmul(&layer.weight, layer.fan_out);
                if let Some(b) = &layer.bias {
                    z.add_bias(b);
                }
                z.map_in_place(|v| layer.activation.apply(v));
                x = z;
            }
            for (a, b) in base[i].data().iter().zip(x.data()) {
                let denom = a.abs().max(b.abs()).max(1e-12);
                assert!(((a - b) / denom).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    /// Straightforward reference forward built on the dense oracle.
    fn reference_forward(
        graph: &GaussianGraph,
        feats: &[FeatureMatrix],
        weights: &[GraphLayerWeights],
    ) -> Vec<FeatureMatrix> {
        let mut current = feats.to_vec();
        for layer in weights {
            current = dense_layer_oracle(graph, &current, layer);
        }
        current
    }

    #[test]
    fn two_layer_forward_matches_reference_twice() {
        let (graph, feats) = toy_graph(&[0.0, 0.3], 4, 1, 8);
        let config = NetworkConfig::uniform(2, 8, 21);
        let weights = init_weights(&config).unwrap();
        let out = forward(&graph, &config, &weights, &feats).unwrap();
        let ref1 = reference_forward(&graph, &feats, &weights);
        let ref2 = reference_forward(&graph, &feats, &weights);
        for (a, b) in ref1.iter().zip(&ref2) {
            assert_eq!(a, b, "reference must be deterministic");
        }
        for (f, o) in out.iter().zip(&ref1) {
            for (a, b) in f.data().iter().zip(o.data()) {
                let denom = a.abs().max(b.abs()).max(1e-12);
                assert!(((a - b) / denom).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn node_permutation_equivariance() {
        let (graph, feats) = toy_graph(&[0.0, 0.3, -0.25], 4, 2, 8);
        let perm = [2usize, 0, 1];
        let permuted_nodes: Vec<_> = perm.iter().map(|&o| graph.nodes[o].clone()).collect();
        let permuted_feats: Vec<_> = perm.iter().map(|&o| feats[o].clone()).collect();
        let permuted_graph = GaussianGraph::build(permuted_nodes, 2, AdjacencyMode::Row).unwrap();
        let config = NetworkConfig::uniform(2, 8, 13);
        let weights = init_weights(&config).unwrap();
        let out = forward(&graph, &config, &weights, &feats).unwrap();
        let out_p = forward(&permuted_graph, &config, &weights, &permuted_feats).unwrap();
        // Relabeling reorders the fixed ascending-j summation, so agreement
        // is up to addition rounding, not bitwise.
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (a, b) in out_p[new_i].data().iter().zip(out[old_i].data()) {
                let denom = a.abs().max(b.abs()).max(1e-12);
                assert!(((a - b) / denom).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn init_respects_xavier_bound() {
        let config = NetworkConfig::uniform(1, 8, 77);
        let weights = init_weights(&config).unwrap();
        let tight = (6.0f64 / 16.0).sqrt();
        for &w in &weights[0].weight {
            assert!(w.abs() <= tight, "{w} exceeds {tight}");
            assert!(w.abs() <= 0.866);
        }
        // Same seed, same weights.
        let again = init_weights(&config).unwrap();
        assert_eq!(weights[0].weight, again[0].weight);
    }

    #[test]
    fn weight_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let config = NetworkConfig::uniform(2, 8, 5);
        let layers = init_weights(&config).unwrap();
        let heads = HeadWeights::init(8, Activation::Relu, 99);
        save_weights(&layers, &heads, 0xDEAD_BEEF, &path).unwrap();
        let (l2, h2, hash) = load_weights(&path).unwrap();
        assert_eq!(hash, 0xDEAD_BEEF);
        assert_eq!(layers, l2);
        assert_eq!(heads.color.w1, h2.color.w1);
        assert_eq!(heads.rotation.b2, h2.rotation.b2);
    }

    #[test]
    fn weight_file_version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.bin");
        let config = NetworkConfig::uniform(1, 8, 5);
        let layers = init_weights(&config).unwrap();
        let heads = HeadWeights::init(8, Activation::Relu, 1);
        save_weights(&layers, &heads, 0, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // bump the version field
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_weights(&path),
            Err(NetworkError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn gelu_matches_finite_difference() {
        for x in [-2.0, -0.5, 0.1, 0.0, 1.3, 3.0] {
            let h = 1e-6;
            let num = (Activation::Gelu.apply(x + h) - Activation::Gelu.apply(x - h)) / (2.0 * h);
            let ana = Activation::Gelu.derivative(x);
            assert!((num - ana).abs() < 1e-8, "x={x}: {num} vs {ana}");
        }
    }
}
