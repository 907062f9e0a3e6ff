//! Manual reverse-mode gradients for the graph layers and prediction heads,
//! finite-difference verification, and an adaptive-moment fitting loop that
//! regresses head outputs toward oracle targets.
//!
//! Pooling is a fixed selection during fitting: the survivor set is chosen
//! once from the geometry (which training never moves), and gradients flow
//! only into the surviving Gaussians' feature paths.

use serde::Serialize;
use thiserror::Error;

use crate::features::FeatureMatrix;
use crate::graph::GaussianGraph;
use crate::heads::{activate_params, HeadWeights, Mlp};
use crate::network::{
    forward, graph_linear_traced, Activation, Aggregation, GraphLayerWeights, LayerTrace,
    NetworkConfig,
};
use crate::pooling::PooledSet;
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("fit diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Network(#[from] crate::network::NetworkError),
}

/// Everything trained by the fitting loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableWeights {
    pub layers: Vec<GraphLayerWeights>,
    pub heads: HeadWeights,
}

impl TrainableWeights {
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for layer in &mut z.layers {
            layer.weight.iter_mut().for_each(|w| *w = 0.0);
            if let Some(b) = &mut layer.bias {
                b.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        for mlp in z.heads.all_mut() {
            mlp.w1.iter_mut().for_each(|w| *w = 0.0);
            mlp.b1.iter_mut().for_each(|w| *w = 0.0);
            mlp.w2.iter_mut().for_each(|w| *w = 0.0);
            mlp.b2.iter_mut().for_each(|w| *w = 0.0);
        }
        z
    }

    fn slices(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = Vec::new();
        for layer in &self.layers {
            out.push(("layer.weight", &layer.weight));
            if let Some(b) = &layer.bias {
                out.push(("layer.bias", b));
            }
        }
        for (name, mlp) in ["rotation", "scale", "opacity", "color"]
            .into_iter()
            .zip(self.heads.all())
        {
            out.push((name, &mlp.w1));
            out.push((name, &mlp.b1));
            out.push((name, &mlp.w2));
            out.push((name, &mlp.b2));
        }
        out
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weight);
            if let Some(b) = &mut layer.bias {
                out.push(b);
            }
        }
        for mlp in self.heads.all_mut() {
            let Mlp { w1, b1, w2, b2, .. } = mlp;
            out.push(w1);
            out.push(b1);
            out.push(w2);
            out.push(b2);
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices()
            .iter()
            .flat_map(|(_, s)| s.iter().copied())
            .collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut at = 0;
        for slice in self.slices_mut() {
            slice.copy_from_slice(&flat[at..at + slice.len()]);
            at += slice.len();
        }
        assert_eq!(at, flat.len(), "flat parameter length mismatch");
    }

    pub fn param_count(&self) -> usize {
        self.slices().iter().map(|(_, s)| s.len()).sum()
    }

    /// Group label for each flat parameter index, for diagnostics.
    pub fn param_names(&self) -> Vec<&'static str> {
        self.slices()
            .iter()
            .flat_map(|(name, s)| std::iter::repeat_n(*name, s.len()))
            .collect()
    }
}

/// Which Gaussians survive pooling: (node, feature row) per survivor, in
/// pooled order. Rows index the node's lifted feature block.
pub fn pooled_selection(graph: &GaussianGraph, pooled: &PooledSet) -> Vec<(usize, usize)> {
    pooled
        .gaussians
        .iter()
        .map(|g| {
            let width = graph.nodes[g.source_view].camera.width;
            (g.source_view, g.pixel.index(width))
        })
        .collect()
}

/// Activated head outputs for every pooled Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedParams {
    pub rotations: Vec<[f64; 4]>,
    pub scales: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct MlpTrace {
    pub hidden_pre: FeatureMatrix,
    pub hidden_post: FeatureMatrix,
    pub raw: FeatureMatrix,
}

/// Recorded forward intermediates; replaying the forward from these inputs
/// reproduces the outputs bitwise.
#[derive(Debug, Clone)]
pub struct Tape {
    pub inputs: Vec<FeatureMatrix>,
    pub layer_traces: Vec<LayerTrace>,
    pub pooled_features: FeatureMatrix,
    pub head_traces: [MlpTrace; 4],
    pub footprints: Vec<f64>,
}

fn mlp_forward_traced(mlp: &Mlp, input: &FeatureMatrix) -> MlpTrace {
    let mut hidden_pre = input.matmul(&mlp.w1, mlp.hidden);
    hidden_pre.add_bias(&mlp.b1);
    let mut hidden_post = hidden_pre.clone();
    hidden_post.map_in_place(|x| mlp.activation.apply(x));
    let mut raw = hidden_post.matmul(&mlp.w2, mlp.fan_out);
    raw.add_bias(&mlp.b2);
    MlpTrace {
        hidden_pre,
        hidden_post,
        raw,
    }
}

/// Full differentiable stack: graph layers, pooled row selection, heads and
/// output activations.
pub fn forward_stack(
    graph: &GaussianGraph,
    config: &NetworkConfig,
    weights: &TrainableWeights,
    initial: &[FeatureMatrix],
    selection: &[(usize, usize)],
    footprints: &[f64],
) -> Result<(Tape, PredictedParams), OptimError> {
    if selection.len() != footprints.len() {
        return Err(OptimError::Shape(format!(
            "{} selected rows vs {} footprints",
            selection.len(),
            footprints.len()
        )));
    }
    let mut layer_traces = Vec::with_capacity(weights.layers.len());
    let mut current = initial.to_vec();
    for layer in &weights.layers {
        let trace = graph_linear_traced(graph, &current, layer, config.aggregation)?;
        current = trace.output.clone();
        layer_traces.push(trace);
    }
    let feat_dim = weights.heads.feat_dim();
    let mut pooled_features = FeatureMatrix::zeros(0, feat_dim);
    for &(node, row) in selection {
        pooled_features.push_row(current[node].row(row));
    }
    let head_traces = [
        mlp_forward_traced(&weights.heads.rotation, &pooled_features),
        mlp_forward_traced(&weights.heads.scale, &pooled_features),
        mlp_forward_traced(&weights.heads.opacity, &pooled_features),
        mlp_forward_traced(&weights.heads.color, &pooled_features),
    ];
    let n = selection.len();
    let mut params = PredictedParams {
        rotations: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
        opacities: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
    };
    for k in 0..n {
        let raw_r = head_traces[0].raw.row(k);
        let raw_s = head_traces[1].raw.row(k);
        let raw_a = head_traces[2].raw.row(k)[0];
        let raw_c = head_traces[3].raw.row(k);
        let (q, s, a, c, _) = activate_params(raw_r, raw_s, raw_a, raw_c, footprints[k]);
        let qq = q.quaternion();
        params.rotations.push([qq.w, qq.i, qq.j, qq.k]);
        params.scales.push([s.x, s.y, s.z]);
        params.opacities.push(a);
        params.colors.push([c[0], c[1], c[2]]);
    }
    Ok((
        Tape {
            inputs: initial.to_vec(),
            layer_traces,
            pooled_features,
            head_traces,
            footprints: footprints.to_vec(),
        },
        params,
    ))
}

/// Gradients of a loss with respect to the activated outputs.
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub rotations: Vec<[f64; 4]>,
    pub scales: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

impl OutputGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            rotations: vec![[0.0; 4]; n],
            scales: vec![[0.0; 3]; n],
            opacities: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
        }
    }
}

/// Exact adjoint of one graph linear layer. Returns (dW, dbias, dinputs).
pub fn backward_graph_linear(
    graph: &GaussianGraph,
    layer: &GraphLayerWeights,
    aggregation: Aggregation,
    trace: &LayerTrace,
    upstream: &[FeatureMatrix],
) -> Result<(Vec<f64>, Vec<f64>, Vec<FeatureMatrix>), OptimError> {
    let n = graph.n();
    if upstream.len() != n {
        return Err(OptimError::Shape(format!(
            "{} upstream blocks for {} nodes",
            upstream.len(),
            n
        )));
    }
    let mut d_weight = vec![0.0; layer.weight.len()];
    let mut d_bias = vec![0.0; layer.fan_out];
    let mut d_inputs: Vec<FeatureMatrix> = graph
        .nodes
        .iter()
        .map(|node| FeatureMatrix::zeros(node.len(), layer.fan_in))
        .collect();
    for i in 0..n {
        // d pre-activation = upstream ⊙ sigma'(pre)
        let mut dz = upstream[i].clone();
        for (g, z) in dz.data_mut().iter_mut().zip(trace.pre_activation[i].data()) {
            *g *= layer.activation.derivative(*z);
        }
        // Weight and bias adjoints.
        for (dw, w) in d_weight
            .iter_mut()
            .zip(trace.combined[i].transpose_matmul(&dz))
        {
            *dw += w;
        }
        if layer.bias.is_some() {
            for (db, b) in d_bias.iter_mut().zip(dz.column_sums()) {
                *db += b;
            }
        }
        // Back through the linear map.
        let d_combined = dz.matmul_transpose(&layer.weight, layer.fan_in);
        // Scatter through the edge aggregation, ascending source order.
        let mut sources = graph.neighbors(i);
        sources.push(i);
        sources.sort_unstable();
        for j in sources {
            let a = graph.scaled_weight(i, j);
            if a == 0.0 {
                continue;
            }
            let op = graph.operator(i, j);
            let dst = &mut d_inputs[j];
            for p in 0..op.target_pixels() {
                let count = op.entry_count(p);
                if count == 0 {
                    continue;
                }
                let upstream_row = d_combined.row(p);
                match aggregation {
                    Aggregation::Mean => {
                        let scale = a / count as f64;
                        for (m, _) in op.entries(p) {
                            for (d, u) in dst.row_mut(m).iter_mut().zip(upstream_row) {
                                *d += scale * u;
                            }
                        }
                    }
                    Aggregation::Sum => {
                        for (m, _) in op.entries(p) {
                            for (d, u) in dst.row_mut(m).iter_mut().zip(upstream_row) {
                                *d += a * u;
                            }
                        }
                    }
                    Aggregation::NearestDepth => {
                        let (m, _) = op.entries(p).next().expect("count > 0");
                        for (d, u) in dst.row_mut(m).iter_mut().zip(upstream_row) {
                            *d += a * u;
                        }
                    }
                }
            }
        }
    }
    Ok((d_weight, d_bias, d_inputs))
}

fn backward_mlp(
    mlp: &Mlp,
    input: &FeatureMatrix,
    trace: &MlpTrace,
    d_raw: &FeatureMatrix,
) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, FeatureMatrix) {
    let d_w2 = trace.hidden_post.transpose_matmul(d_raw);
    let d_b2 = d_raw.column_sums();
    let mut d_hidden = d_raw.matmul_transpose(&mlp.w2, mlp.hidden);
    for (g, z) in d_hidden.data_mut().iter_mut().zip(trace.hidden_pre.data()) {
        *g *= mlp.activation.derivative(*z);
    }
    let d_w1 = input.transpose_matmul(&d_hidden);
    let d_b1 = d_hidden.column_sums();
    let d_input = d_hidden.matmul_transpose(&mlp.w1, mlp.fan_in);
    (d_w1, d_b1, d_w2, d_b2, d_input)
}

/// Reverse pass over the full stack. Returns parameter gradients shaped
/// like the weights, plus gradients for the initial node features.
pub fn backward_stack(
    graph: &GaussianGraph,
    config: &NetworkConfig,
    weights: &TrainableWeights,
    tape: &Tape,
    selection: &[(usize, usize)],
    out_grads: &OutputGrads,
) -> Result<(TrainableWeights, Vec<FeatureMatrix>), OptimError> {
    let n_pooled = tape.pooled_features.rows();
    if !weights.layers.is_empty() && selection.len() != n_pooled {
        return Err(OptimError::Shape(format!(
            "{} selected rows for {} pooled features",
            selection.len(),
            n_pooled
        )));
    }
    let feat_dim = weights.heads.feat_dim();

    // Output activations backward: d raw per head.
    let mut d_raws = [
        FeatureMatrix::zeros(n_pooled, 4),
        FeatureMatrix::zeros(n_pooled, 3),
        FeatureMatrix::zeros(n_pooled, 1),
        FeatureMatrix::zeros(n_pooled, 3),
    ];
    for k in 0..n_pooled {
        // Rotation: y = q / |q|; dL/dq = (g - y (y . g)) / |q|.
        let raw_q = tape.head_traces[0].raw.row(k);
        let norm = (raw_q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        if norm >= 1e-12 {
            let y: Vec<f64> = raw_q.iter().map(|v| v / norm).collect();
            let g = &out_grads.rotations[k];
            let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
            for c in 0..4 {
                d_raws[0].row_mut(k)[c] = (g[c] - y[c] * dot) / norm;
            }
        }
        // Scales: s = footprint * exp(clamp(raw)); ds/draw = s inside the
        // clamp band, 0 outside.
        let raw_s = tape.head_traces[1].raw.row(k);
        for c in 0..3 {
            let inside = raw_s[c].abs() < crate::heads::SCALE_CLAMP;
            if inside {
                let s = tape.footprints[k] * raw_s[c].clamp(-5.0, 5.0).exp();
                d_raws[1].row_mut(k)[c] = out_grads.scales[k][c] * s;
            }
        }
        // Opacity and color: logistic backward.
        let raw_a = tape.head_traces[2].raw.row(k)[0];
        let sig_a = crate::gaussians::sigmoid(raw_a);
        d_raws[2].row_mut(k)[0] = out_grads.opacities[k] * sig_a * (1.0 - sig_a);
        let raw_c = tape.head_traces[3].raw.row(k);
        for c in 0..3 {
            let sig = crate::gaussians::sigmoid(raw_c[c]);
            d_raws[3].row_mut(k)[c] = out_grads.colors[k][c] * sig * (1.0 - sig);
        }
    }

    // Head MLPs backward; pooled-feature grads accumulate over heads.
    let mut grads = weights.zeros_like();
    let mut d_pooled = FeatureMatrix::zeros(n_pooled, feat_dim);
    let head_list = [
        &weights.heads.rotation,
        &weights.heads.scale,
        &weights.heads.opacity,
        &weights.heads.color,
    ];
    let grad_list = grads.heads.all_mut();
    for (idx, (mlp, grad_mlp)) in head_list.iter().zip(grad_list).enumerate() {
        let (d_w1, d_b1, d_w2, d_b2, d_input) = backward_mlp(
            mlp,
            &tape.pooled_features,
            &tape.head_traces[idx],
            &d_raws[idx],
        );
        grad_mlp.w1 = d_w1;
        grad_mlp.b1 = d_b1;
        grad_mlp.w2 = d_w2;
        grad_mlp.b2 = d_b2;
        d_pooled.axpy(1.0, &d_input);
    }

    // Scatter pooled rows back to per-node feature grads.
    let last_dim = weights.layers.last().map_or(feat_dim, |l| l.fan_out);
    let mut d_features: Vec<FeatureMatrix> = graph
        .nodes
        .iter()
        .map(|node| FeatureMatrix::zeros(node.len(), last_dim))
        .collect();
    for (k, &(node, row)) in selection.iter().enumerate() {
        for (d, u) in d_features[node]
            .row_mut(row)
            .iter_mut()
            .zip(d_pooled.row(k))
        {
            *d += u;
        }
    }

    // Graph layers, reverse order.
    let mut upstream = d_features;
    for (layer_idx, layer) in weights.layers.iter().enumerate().rev() {
        let (d_w, d_b, d_in) = backward_graph_linear(
            graph,
            layer,
            config.aggregation,
            &tape.layer_traces[layer_idx],
            &upstream,
        )?;
        grads.layers[layer_idx].weight = d_w;
        if grads.layers[layer_idx].bias.is_some() {
            grads.layers[layer_idx].bias = Some(d_b);
        }
        upstream = d_in;
    }
    Ok((grads, upstream))
}

/// Regression targets for the fitting loop, one entry per pooled Gaussian.
#[derive(Debug, Clone)]
pub struct FitTargets {
    pub colors: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
}

/// Color + opacity regression loss and its gradients on the activated
/// outputs; rotation and scale heads receive no signal.
pub fn fit_loss(params: &PredictedParams, targets: &FitTargets) -> (f64, OutputGrads) {
    let n = params.colors.len();
    let mut grads = OutputGrads::zeros(n);
    let mut loss = 0.0;
    let norm = 1.0 / (4.0 * n as f64);
    for k in 0..n {
        for c in 0..3 {
            let d = params.colors[k][c] - targets.colors[k][c];
            loss += d * d * norm;
            grads.colors[k][c] = 2.0 * d * norm;
        }
        let d = params.opacities[k] - targets.opacities[k];
        loss += d * d * norm;
        grads.opacities[k] = 2.0 * d * norm;
    }
    (loss, grads)
}

/// Color-only MSE, the headline quantity tracked by the fit examples.
pub fn color_mse(params: &PredictedParams, targets: &FitTargets) -> f64 {
    let n = params.colors.len();
    let mut sum = 0.0;
    for (have, want) in params.colors.iter().zip(&targets.colors) {
        for c in 0..3 {
            let d = have[c] - want[c];
            sum += d * d;
        }
    }
    sum / (3.0 * n as f64)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub divergence_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 500,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            divergence_threshold: 1e6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub weights: TrainableWeights,
    pub loss_curve: Vec<f64>,
}

/// Gradient descent with per-parameter adaptive moments on the full stack.
pub fn fit_heads(
    graph: &GaussianGraph,
    config: &NetworkConfig,
    initial: &[FeatureMatrix],
    selection: &[(usize, usize)],
    footprints: &[f64],
    targets: &FitTargets,
    start: TrainableWeights,
    fit: &FitConfig,
) -> Result<FitOutcome, OptimError> {
    if targets.colors.len() != selection.len() || targets.opacities.len() != selection.len() {
        return Err(OptimError::Shape(format!(
            "{} targets for {} pooled Gaussians",
            targets.colors.len(),
            selection.len()
        )));
    }
    let mut weights = start;
    let mut flat = weights.flatten();
    let mut m = vec![0.0; flat.len()];
    let mut v = vec![0.0; flat.len()];
    let mut loss_curve = Vec::with_capacity(fit.steps);
    for step in 0..fit.steps {
        let (tape, params) =
            forward_stack(graph, config, &weights, initial, selection, footprints)?;
        let (loss, out_grads) = fit_loss(&params, targets);
        loss_curve.push(loss);
        if !loss.is_finite() || loss > fit.divergence_threshold {
            return Err(OptimError::Diverged { step, loss });
        }
        let (grads, _) = backward_stack(graph, config, &weights, &tape, selection, &out_grads)?;
        let grad_flat = grads.flatten();
        let t = (step + 1) as f64;
        let bc1 = 1.0 - fit.beta1.powf(t);
        let bc2 = 1.0 - fit.beta2.powf(t);
        for ((w, g), (mi, vi)) in flat
            .iter_mut()
            .zip(&grad_flat)
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = fit.beta1 * *mi + (1.0 - fit.beta1) * g;
            *vi = fit.beta2 * *vi + (1.0 - fit.beta2) * g * g;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= fit.learning_rate * m_hat / (v_hat.sqrt() + fit.epsilon);
        }
        weights.unflatten(&flat);
    }
    Ok(FitOutcome {
        weights,
        loss_curve,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GradcheckComponent {
    Heads,
    Layer { edged: bool },
    FullStack { edged: bool },
}

impl GradcheckComponent {
    pub fn label(&self) -> String {
        match self {
            GradcheckComponent::Heads => "heads".into(),
            GradcheckComponent::Layer { edged: true } => "layer-edged".into(),
            GradcheckComponent::Layer { edged: false } => "layer-edgeless".into(),
            GradcheckComponent::FullStack { edged: true } => "full-stack-edged".into(),
            GradcheckComponent::FullStack { edged: false } => "full-stack-edgeless".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckFailure {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub component: String,
    pub params_checked: usize,
    pub max_rel_err: f64,
    pub failures: Vec<GradcheckFailure>,
    pub passed: bool,
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
const GRADCHECK_DENOM_FLOOR: f64 = 1e-8;
/// Fallback steps for parameters that miss the tolerance at the primary
/// step. Roundoff-limited components (randomly tiny gradients) need a
/// larger step, truncation-limited ones (high-curvature activation paths)
/// a smaller one; a genuine backward bug fails at every scale.
const FALLBACK_STEPS: [f64; 3] = [1e-4, 1e-3, 1e-6];

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_DENOM_FLOOR)
}

fn compare_grads(
    component: GradcheckComponent,
    step: f64,
    names: &[&'static str],
    analytic: &[f64],
    mut loss_at: impl FnMut(usize, f64) -> f64,
    current: &[f64],
) -> GradcheckReport {
    let mut max_rel = 0.0f64;
    let mut failures = Vec::new();
    for idx in 0..analytic.len() {
        let w0 = current[idx];
        let mut best_err = f64::INFINITY;
        let mut best_numeric = f64::NAN;
        let consider = |numeric: f64, best_err: &mut f64, best_numeric: &mut f64| {
            let err = rel_err(analytic[idx], numeric);
            if err < *best_err {
                *best_err = err;
                *best_numeric = numeric;
            }
        };
        for h in std::iter::once(step).chain(FALLBACK_STEPS) {
            let plus = loss_at(idx, w0 + h);
            let minus = loss_at(idx, w0 - h);
            consider((plus - minus) / (2.0 * h), &mut best_err, &mut best_numeric);
            if best_err < GRADCHECK_TOLERANCE {
                break;
            }
        }
        if best_err >= GRADCHECK_TOLERANCE {
            // Richardson extrapolation at a large step: the h^2 truncation
            // term cancels between the two stencils while the roundoff
            // floor stays low, reaching gradients as small as ~1e-7.
            let h = 1e-3;
            let d_h = (loss_at(idx, w0 + h) - loss_at(idx, w0 - h)) / (2.0 * h);
            let d_half = (loss_at(idx, w0 + h / 2.0) - loss_at(idx, w0 - h / 2.0)) / h;
            consider((4.0 * d_half - d_h) / 3.0, &mut best_err, &mut best_numeric);
        }
        if best_err > max_rel {
            max_rel = best_err;
        }
        if best_err >= GRADCHECK_TOLERANCE {
            failures.push(GradcheckFailure {
                param: names[idx].to_string(),
                index: idx,
                analytic: analytic[idx],
                numeric: best_numeric,
                rel_err: best_err,
            });
        }
    }
    GradcheckReport {
        component: component.label(),
        params_checked: analytic.len(),
        max_rel_err: max_rel,
        failures,
        passed: max_rel < GRADCHECK_TOLERANCE,
    }
}

/// Quadratic loss against seeded random targets over every activated
/// output; exercises all four heads and both layer paths.
fn quadratic_loss(params: &PredictedParams, targets: &PredictedParams) -> (f64, OutputGrads) {
    let n = params.colors.len();
    let mut grads = OutputGrads::zeros(n);
    let mut loss = 0.0;
    let norm = 1.0 / n as f64;
    for k in 0..n {
        for c in 0..4 {
            let d = params.rotations[k][c] - targets.rotations[k][c];
            loss += 0.5 * d * d * norm;
            grads.rotations[k][c] = d * norm;
        }
        for c in 0..3 {
            let d = params.scales[k][c] - targets.scales[k][c];
            loss += 0.5 * d * d * norm;
            grads.scales[k][c] = d * norm;
            let dc = params.colors[k][c] - targets.colors[k][c];
            loss += 0.5 * dc * dc * norm;
            grads.colors[k][c] = dc * norm;
        }
        let d = params.opacities[k] - targets.opacities[k];
        loss += 0.5 * d * d * norm;
        grads.opacities[k] = d * norm;
    }
    (loss, grads)
}

/// Targets offset from the current outputs by a residual bounded away from
/// zero. Coherent residuals keep every gradient component well above the
/// finite-difference noise floor; purely random targets let per-sample
/// terms cancel into unverifiable 1e-7-scale gradients.
fn offset_targets(params: &PredictedParams, rng: &mut Rng) -> PredictedParams {
    let residual = |rng: &mut Rng| {
        let mag = rng.uniform(0.5, 1.5);
        if rng.next_f64() < 0.5 {
            -mag
        } else {
            mag
        }
    };
    let mut targets = params.clone();
    for q in &mut targets.rotations {
        for v in q.iter_mut() {
            *v -= residual(rng);
        }
    }
    for s in &mut targets.scales {
        for v in s.iter_mut() {
            *v -= residual(rng);
        }
    }
    for a in &mut targets.opacities {
        *a -= residual(rng);
    }
    for c in &mut targets.colors {
        for v in c.iter_mut() {
            *v -= residual(rng);
        }
    }
    targets
}

/// Build a small two-view fixture (<= 8x8 views) for the layer and
/// full-stack checks.
fn gradcheck_fixture(
    edged: bool,
    feat_dim: usize,
    seed: u64,
) -> (GaussianGraph, Vec<FeatureMatrix>) {
    use crate::gaussians::lift_view;
    use crate::geometry::Camera;
    use crate::synth::{encode_features, oracle_depth, raytrace, Albedo, AnalyticScene, Primitive};
    use nalgebra::{Matrix4, Vector3};

    let scene = AnalyticScene {
        primitives: vec![
            Primitive::Plane {
                point: [0.0, 0.0, 4.0],
                normal: [0.0, 0.0, -1.0],
                extent: 60.0,
                albedo: Albedo::Gradient {
                    start: [0.1, 0.2, 0.8],
                    end: [0.9, 0.6, 0.2],
                },
            },
            Primitive::Sphere {
                center: [0.3, -0.2, 3.0],
                radius: 0.8,
                albedo: Albedo::Solid {
                    color: [0.7, 0.3, 0.2],
                },
            },
        ],
        background: [0.05, 0.05, 0.05],
    };
    let size = 4u32;
    let mut rng = Rng::new(seed);
    let nodes: Vec<_> = [0.0, 0.3]
        .iter()
        .enumerate()
        .map(|(i, &yaw)| {
            let rot = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), yaw);
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot.into_inner());
            let c = size as f64 / 2.0;
            let cam = Camera::new(size as f64, size as f64, c, c, size, size, m).unwrap();
            let view = raytrace(&scene, &cam);
            let feats = encode_features(&view, feat_dim).unwrap();
            let depth = oracle_depth(&view, 0.0, 0);
            lift_view(&view, &depth, &feats, i).unwrap()
        })
        .collect();
    // Random features replace the encoder output: the check verifies
    // derivative algebra, and structured channels (balanced positional
    // encodings, constant flags) would cancel whole gradient sums down to
    // the finite-difference noise floor. Geometry still drives the graph.
    let mut feats: Vec<FeatureMatrix> = nodes.iter().map(|n| n.feature_matrix()).collect();
    for f in &mut feats {
        for v in f.data_mut() {
            *v = rng.normal();
        }
    }
    let top_n = if edged { 1 } else { 0 };
    let graph = GaussianGraph::build(nodes, top_n, crate::graph::AdjacencyMode::Row).unwrap();
    (graph, feats)
}

/// Smallest pre-activation magnitude across the tape; used to keep finite
/// differences away from the ReLU kink.
fn min_kink_distance(tape: &Tape) -> f64 {
    let mut min = f64::INFINITY;
    for trace in &tape.layer_traces {
        for block in &trace.pre_activation {
            for &z in block.data() {
                min = min.min(z.abs());
            }
        }
    }
    for head in &tape.head_traces {
        for &z in head.hidden_pre.data() {
            min = min.min(z.abs());
        }
    }
    // Quaternion normalization also has a kink at zero norm.
    for k in 0..tape.head_traces[0].raw.rows() {
        let q = tape.head_traces[0].raw.row(k);
        min = min.min(q.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    min
}

/// Finite differences step across ReLU kinks when a pre-activation sits
/// within the step's reach of zero; the subgradient convention there makes
/// analytic and numeric values disagree without any bug being present.
/// Nudge the inputs with seeded noise until every pre-activation keeps a
/// margin.
const KINK_MARGIN: f64 = 3e-4;
const NUDGE_ATTEMPTS: u64 = 256;

fn jitter_inputs(original: &[FeatureMatrix], attempt: u64, seed: u64) -> Vec<FeatureMatrix> {
    if attempt == 0 {
        return original.to_vec();
    }
    let mut rng = Rng::new(seed ^ attempt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let mut out = original.to_vec();
    for block in &mut out {
        for v in block.data_mut() {
            *v += 2e-3 * rng.normal();
        }
    }
    out
}

/// Zero-initialized biases leave ReLU-dead rows with pre-activations of
/// exactly zero, which no input jitter can move; give the fixture's biases
/// a small seeded spread instead.
fn randomize_biases(weights: &mut TrainableWeights, seed: u64) {
    let mut rng = Rng::new(seed ^ 0xb1a5);
    // Magnitudes bounded away from zero: a dead row's pre-activation IS its
    // bias, so the bias itself must clear the margin.
    let draw = move |rng: &mut Rng| {
        let mag = rng.uniform(0.02, 0.2);
        if rng.next_f64() < 0.5 {
            -mag
        } else {
            mag
        }
    };
    for layer in &mut weights.layers {
        if let Some(b) = &mut layer.bias {
            for v in b.iter_mut() {
                *v = draw(&mut rng);
            }
        }
    }
    for mlp in weights.heads.all_mut() {
        for v in mlp.b1.iter_mut().chain(mlp.b2.iter_mut()) {
            *v = draw(&mut rng);
        }
        // A near-zero second-layer entry gates a whole first-layer column's
        // gradients down to the noise floor (the opacity head has a single
        // output, so one entry is the only path); keep magnitudes up.
        for v in mlp.w2.iter_mut() {
            if v.abs() < 0.1 {
                *v = if *v < 0.0 { -0.1 } else { 0.1 } + *v;
            }
        }
    }
}

/// Heads-only forward over a raw feature block.
fn heads_forward(
    weights: &TrainableWeights,
    features: &FeatureMatrix,
    footprints: &[f64],
) -> (Tape, PredictedParams) {
    let head_traces = [
        mlp_forward_traced(&weights.heads.rotation, features),
        mlp_forward_traced(&weights.heads.scale, features),
        mlp_forward_traced(&weights.heads.opacity, features),
        mlp_forward_traced(&weights.heads.color, features),
    ];
    let n = features.rows();
    let mut params = PredictedParams {
        rotations: Vec::with_capacity(n),
        scales: Vec::with_capacity(n),
        opacities: Vec::with_capacity(n),
        colors: Vec::with_capacity(n),
    };
    for k in 0..n {
        let (q, s, a, c, _) = activate_params(
            head_traces[0].raw.row(k),
            head_traces[1].raw.row(k),
            head_traces[2].raw.row(k)[0],
            head_traces[3].raw.row(k),
            footprints[k],
        );
        let qq = q.quaternion();
        params.rotations.push([qq.w, qq.i, qq.j, qq.k]);
        params.scales.push([s.x, s.y, s.z]);
        params.opacities.push(a);
        params.colors.push([c[0], c[1], c[2]]);
    }
    (
        Tape {
            inputs: vec![],
            layer_traces: vec![],
            pooled_features: features.clone(),
            head_traces,
            footprints: footprints.to_vec(),
        },
        params,
    )
}

/// Compare analytic and central finite-difference gradients.
pub fn gradcheck(component: GradcheckComponent, seed: u64) -> Result<GradcheckReport, OptimError> {
    let feat_dim = 8;
    match component {
        GradcheckComponent::Heads => {
            let (graph, _) = gradcheck_fixture(false, feat_dim, seed);
            let mut config = NetworkConfig::uniform(1, feat_dim, seed);
            // The smooth activation keeps every hidden unit live, so no
            // gradient component sinks into the finite-difference noise
            // floor the way dead-ReLU paths do.
            config.activation = Activation::Gelu;
            let heads = HeadWeights::init(feat_dim, config.activation, seed ^ 0x5ead);
            let mut weights = TrainableWeights {
                layers: vec![],
                heads,
            };
            randomize_biases(&mut weights, seed);
            let weights = weights;
            let n = 24;
            let mut attempt = 0u64;
            let (features, footprints, targets) = loop {
                let mut rng = Rng::new(seed.wrapping_add(attempt.wrapping_mul(0x9e37_79b9)));
                let mut features = FeatureMatrix::zeros(n, feat_dim);
                for v in features.data_mut() {
                    *v = rng.normal();
                }
                // O(1) footprints keep scale-head gradients well above the
                // finite-difference noise floor.
                let footprints: Vec<f64> = (0..n).map(|_| rng.uniform(0.3, 1.2)).collect();
                let (tape, params) = heads_forward(&weights, &features, &footprints);
                let targets = offset_targets(&params, &mut rng);
                if min_kink_distance(&tape) > KINK_MARGIN {
                    break (features, footprints, targets);
                }
                attempt += 1;
                assert!(attempt < NUDGE_ATTEMPTS, "could not nudge away from kinks");
            };
            let (tape, params) = heads_forward(&weights, &features, &footprints);
            let (_, out_grads) = quadratic_loss(&params, &targets);
            let (grads, _) = backward_stack(&graph, &config, &weights, &tape, &[], &out_grads)?;
            let analytic = grads.flatten();
            let names = weights.param_names();
            let mut flat = weights.flatten();
            let mut scratch = weights.clone();
            let current = weights.flatten();
            let report = compare_grads(
                component,
                GRADCHECK_STEP,
                &names,
                &analytic,
                |idx, value| {
                    let orig = flat[idx];
                    flat[idx] = value;
                    scratch.unflatten(&flat);
                    flat[idx] = orig;
                    let (_, p) = heads_forward(&scratch, &features, &footprints);
                    quadratic_loss(&p, &targets).0
                },
                &current,
            );
            Ok(report)
        }
        GradcheckComponent::Layer { edged } => {
            let (graph, base_feats) = gradcheck_fixture(edged, feat_dim, seed);
            let mut config = NetworkConfig::uniform(1, feat_dim, seed);
            config.use_bias = true;
            let layers = crate::network::init_weights(&config)?;
            let mut attempt = 0u64;
            let feats = loop {
                let candidate = jitter_inputs(&base_feats, attempt, seed);
                let trace =
                    graph_linear_traced(&graph, &candidate, &layers[0], config.aggregation)?;
                let margin = trace
                    .pre_activation
                    .iter()
                    .flat_map(|b| b.data().iter())
                    .fold(f64::INFINITY, |m, &z| m.min(z.abs()));
                if margin > KINK_MARGIN {
                    break candidate;
                }
                attempt += 1;
                assert!(attempt < NUDGE_ATTEMPTS, "could not nudge away from kinks");
            };
            let mut rng = Rng::new(seed ^ 0x1a7e);
            // Random targets over the raw layer outputs.
            let targets: Vec<FeatureMatrix> = graph
                .nodes
                .iter()
                .map(|node| {
                    let mut t = FeatureMatrix::zeros(node.len(), feat_dim);
                    for v in t.data_mut() {
                        *v = rng.normal();
                    }
                    t
                })
                .collect();
            let layer_loss =
                |layers: &[GraphLayerWeights]| -> (Vec<LayerTrace>, f64, Vec<FeatureMatrix>) {
                    let trace = graph_linear_traced(&graph, &feats, &layers[0], config.aggregation)
                        .unwrap();
                    let mut loss = 0.0;
                    let mut upstream = Vec::new();
                    for (out, t) in trace.output.iter().zip(&targets) {
                        let mut u = out.clone();
                        for (uv, tv) in u.data_mut().iter_mut().zip(t.data()) {
                            let d = *uv - tv;
                            loss += 0.5 * d * d;
                            *uv = d;
                        }
                        upstream.push(u);
                    }
                    (vec![trace], loss, upstream)
                };
            let (traces, _, upstream) = layer_loss(&layers);
            let (d_w, d_b, _) = backward_graph_linear(
                &graph,
                &layers[0],
                config.aggregation,
                &traces[0],
                &upstream,
            )?;
            let mut analytic = d_w.clone();
            analytic.extend(&d_b);
            let names: Vec<&'static str> = std::iter::repeat_n("layer.weight", d_w.len())
                .chain(std::iter::repeat_n("layer.bias", d_b.len()))
                .collect();
            let mut scratch = layers.clone();
            let current: Vec<f64> = scratch[0]
                .weight
                .iter()
                .chain(scratch[0].bias.as_ref().unwrap())
                .copied()
                .collect();
            let w_len = scratch[0].weight.len();
            let report = compare_grads(
                component,
                GRADCHECK_STEP,
                &names,
                &analytic,
                |idx, value| {
                    let orig;
                    if idx < w_len {
                        orig = scratch[0].weight[idx];
                        scratch[0].weight[idx] = value;
                    } else {
                        let b = scratch[0].bias.as_mut().unwrap();
                        orig = b[idx - w_len];
                        b[idx - w_len] = value;
                    }
                    let (_, loss, _) = layer_loss(&scratch);
                    if idx < w_len {
                        scratch[0].weight[idx] = orig;
                    } else {
                        scratch[0].bias.as_mut().unwrap()[idx - w_len] = orig;
                    }
                    loss
                },
                &current,
            );
            Ok(report)
        }
        GradcheckComponent::FullStack { edged } => {
            let (graph, base_feats) = gradcheck_fixture(edged, feat_dim, seed);
            let mut config = NetworkConfig::uniform(2, feat_dim, seed);
            config.activation = Activation::Gelu;
            let layers = crate::network::init_weights(&config)?;
            let heads = HeadWeights::init(feat_dim, config.activation, seed ^ 0x5ead);
            let mut weights = TrainableWeights { layers, heads };
            randomize_biases(&mut weights, seed);
            let weights = weights;
            let pooling = crate::pooling::PoolingConfig::default();
            let pooled = crate::pooling::pool_graph(&graph, &base_feats, &pooling).unwrap();
            let selection = pooled_selection(&graph, &pooled);
            let footprints = pooled.footprints.clone();
            let mut rng = Rng::new(seed ^ 0xfee1);

            let mut attempt = 0u64;
            let feats = loop {
                let candidate = jitter_inputs(&base_feats, attempt, seed);
                let (tape, _) = forward_stack(
                    &graph,
                    &config,
                    &weights,
                    &candidate,
                    &selection,
                    &footprints,
                )?;
                if min_kink_distance(&tape) > KINK_MARGIN {
                    break candidate;
                }
                attempt += 1;
                assert!(attempt < NUDGE_ATTEMPTS, "could not nudge away from kinks");
            };
            let (tape, params) =
                forward_stack(&graph, &config, &weights, &feats, &selection, &footprints)?;
            let targets = offset_targets(&params, &mut rng);
            let (_, out_grads) = quadratic_loss(&params, &targets);
            let (grads, _) =
                backward_stack(&graph, &config, &weights, &tape, &selection, &out_grads)?;
            let analytic = grads.flatten();
            let names = weights.param_names();
            let mut flat = weights.flatten();
            let mut scratch = weights.clone();
            let report = compare_grads(
                component,
                GRADCHECK_STEP,
                &names,
                &analytic,
                |idx, value| {
                    let orig = flat[idx];
                    flat[idx] = value;
                    scratch.unflatten(&flat);
                    flat[idx] = orig;
                    let (_, p) =
                        forward_stack(&graph, &config, &scratch, &feats, &selection, &footprints)
                            .unwrap();
                    quadratic_loss(&p, &targets).0
                },
                &weights.flatten(),
            );
            Ok(report)
        }
    }
}

/// Convenience: verify the forward used by the optimizer agrees with the
/// plain inference forward on the same inputs.
pub fn check_tape_consistency(
    graph: &GaussianGraph,
    config: &NetworkConfig,
    weights: &TrainableWeights,
    initial: &[FeatureMatrix],
) -> Result<bool, OptimError> {
    let plain = forward(graph, config, &weights.layers, initial)?;
    let mut current = initial.to_vec();
    for layer in &weights.layers {
        let trace = graph_linear_traced(graph, &current, layer, config.aggregation)?;
        current = trace.output;
    }
    Ok(plain == current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AdjacencyMode;
    use crate::network::{init_weights, Activation};

    fn single_node_fixture(dim: usize) -> (GaussianGraph, Vec<FeatureMatrix>) {
        let (graph, feats) = gradcheck_fixture(false, dim, 1);
        let node = graph.nodes[0].clone();
        let graph = GaussianGraph::build(vec![node], 0, AdjacencyMode::Row).unwrap();
        (graph, vec![feats[0].clone()])
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
    fn identity_layer_quadratic_loss_grad_is_input() {
        // Isolated node, W = I, sigma = id, L = 0.5 ||f_hat||^2: the input
        // gradient is the input itself.
        let (graph, feats) = single_node_fixture(8);
        let layer = identity_layer(8);
        let trace = graph_linear_traced(&graph, &feats, &layer, Aggregation::Mean).unwrap();
        let upstream = trace.output.clone(); // dL/df_hat = f_hat = f
        let (d_w, _, d_in) =
            backward_graph_linear(&graph, &layer, Aggregation::Mean, &trace, &upstream).unwrap();
        assert_eq!(d_in[0], feats[0]);
        // dW = f^T f, symmetric.
        for i in 0..8 {
            for j in 0..8 {
                assert!((d_w[i * 8 + j] - d_w[j * 8 + i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let (graph, feats) = gradcheck_fixture(true, 8, 2);
        let config = NetworkConfig::uniform(1, 8, 2);
        let layers = init_weights(&config).unwrap();
        let trace = graph_linear_traced(&graph, &feats, &layers[0], Aggregation::Mean).unwrap();
        let upstream: Vec<FeatureMatrix> = graph
            .nodes
            .iter()
            .map(|n| FeatureMatrix::zeros(n.len(), 8))
            .collect();
        let (d_w, d_b, d_in) =
            backward_graph_linear(&graph, &layers[0], Aggregation::Mean, &trace, &upstream)
                .unwrap();
        assert!(d_w.iter().all(|&v| v == 0.0));
        assert!(d_b.iter().all(|&v| v == 0.0));
        assert!(d_in.iter().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn gradcheck_heads_passes() {
        let report = gradcheck(GradcheckComponent::Heads, 11).unwrap();
        assert!(
            report.passed,
            "max rel err {:.3e}, {} failures",
            report.max_rel_err,
            report.failures.len()
        );
    }

    #[test]
    fn gradcheck_layer_passes_both_topologies() {
        for edged in [false, true] {
            let report = gradcheck(GradcheckComponent::Layer { edged }, 7).unwrap();
            assert!(
                report.passed,
                "edged={edged}: max rel err {:.3e}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn gradcheck_full_stack_passes_both_topologies() {
        for edged in [false, true] {
            let report = gradcheck(GradcheckComponent::FullStack { edged }, 19).unwrap();
            assert!(
                report.passed,
                "edged={edged}: max rel err {:.3e}, first failures {:?}",
                report.max_rel_err,
                report.failures.iter().take(3).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn tape_replay_is_bitwise() {
        let (graph, feats) = gradcheck_fixture(true, 8, 3);
        let config = NetworkConfig::uniform(2, 8, 3);
        let weights = TrainableWeights {
            layers: init_weights(&config).unwrap(),
            heads: HeadWeights::init(8, config.activation, 33),
        };
        assert!(check_tape_consistency(&graph, &config, &weights, &feats).unwrap());
        let pooled =
            crate::pooling::pool_graph(&graph, &feats, &crate::pooling::PoolingConfig::default())
                .unwrap();
        let selection = pooled_selection(&graph, &pooled);
        let (tape1, params1) = forward_stack(
            &graph,
            &config,
            &weights,
            &feats,
            &selection,
            &pooled.footprints,
        )
        .unwrap();
        let (tape2, params2) = forward_stack(
            &graph,
            &config,
            &weights,
            &tape1.inputs,
            &selection,
            &pooled.footprints,
        )
        .unwrap();
        assert_eq!(params1, params2);
        assert_eq!(tape1.pooled_features, tape2.pooled_features);
        for (a, b) in tape1.layer_traces.iter().zip(&tape2.layer_traces) {
            assert_eq!(a.output, b.output);
            assert_eq!(a.pre_activation, b.pre_activation);
        }
    }

    fn fit_fixture() -> (
        GaussianGraph,
        Vec<FeatureMatrix>,
        NetworkConfig,
        Vec<(usize, usize)>,
        Vec<f64>,
        FitTargets,
        TrainableWeights,
    ) {
        let (graph, feats) = gradcheck_fixture(true, 8, 5);
        let config = NetworkConfig::uniform(2, 8, 5);
        let weights = TrainableWeights {
            layers: init_weights(&config).unwrap(),
            heads: HeadWeights::init(8, config.activation, 55),
        };
        let pooled =
            crate::pooling::pool_graph(&graph, &feats, &crate::pooling::PoolingConfig::default())
                .unwrap();
        let selection = pooled_selection(&graph, &pooled);
        let footprints = pooled.footprints.clone();
        let mut rng = Rng::new(77);
        let targets = FitTargets {
            colors: (0..selection.len())
                .map(|_| [rng.next_f64(), rng.next_f64(), rng.next_f64()])
                .collect(),
            opacities: (0..selection.len())
                .map(|_| rng.uniform(0.05, 0.95))
                .collect(),
        };
        (
            graph, feats, config, selection, footprints, targets, weights,
        )
    }

    #[test]
    fn zero_learning_rate_freezes_the_loss() {
        let (graph, feats, config, selection, footprints, targets, weights) = fit_fixture();
        let fit = FitConfig {
            learning_rate: 0.0,
            steps: 5,
            ..FitConfig::default()
        };
        let outcome = fit_heads(
            &graph,
            &config,
            &feats,
            &selection,
            &footprints,
            &targets,
            weights,
            &fit,
        )
        .unwrap();
        assert_eq!(outcome.loss_curve.len(), 5);
        for w in outcome.loss_curve.windows(2) {
            assert_eq!(w[0], w[1]);
        }
    }

    #[test]
    fn fitting_is_seed_deterministic_and_reduces_loss() {
        let (graph, feats, config, selection, footprints, targets, weights) = fit_fixture();
        let fit = FitConfig {
            steps: 60,
            ..FitConfig::default()
        };
        let a = fit_heads(
            &graph,
            &config,
            &feats,
            &selection,
            &footprints,
            &targets,
            weights.clone(),
            &fit,
        )
        .unwrap();
        let b = fit_heads(
            &graph,
            &config,
            &feats,
            &selection,
            &footprints,
            &targets,
            weights,
            &fit,
        )
        .unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
        assert_eq!(a.weights.flatten(), b.weights.flatten());
        assert!(
            a.loss_curve.last().unwrap() < &a.loss_curve[0],
            "loss should drop: {:?} -> {:?}",
            a.loss_curve.first(),
            a.loss_curve.last()
        );
    }

    #[test]
    fn finite_differences_catch_a_corrupted_backward() {
        // Negative control: a systematic 5% error on a healthy analytic
        // gradient must fail at every finite-difference step, fallback
        // ladder included.
        let (graph, feats) = gradcheck_fixture(true, 8, 2);
        let config = NetworkConfig::uniform(1, 8, 2);
        let layers = init_weights(&config).unwrap();
        let trace = graph_linear_traced(&graph, &feats, &layers[0], Aggregation::Mean).unwrap();
        // L = 0.5 sum(out^2): upstream = out.
        let upstream = trace.output.clone();
        let (d_w, _, _) =
            backward_graph_linear(&graph, &layers[0], Aggregation::Mean, &trace, &upstream)
                .unwrap();
        // Pick the largest-magnitude weight gradient and corrupt it.
        let (idx, &grad) = d_w
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap();
        assert!(grad.abs() > 1e-3, "fixture should have a healthy gradient");
        let corrupted = grad * 1.05;
        let loss_of = |layers: &[GraphLayerWeights]| -> f64 {
            let t = graph_linear_traced(&graph, &feats, &layers[0], Aggregation::Mean).unwrap();
            t.output
                .iter()
                .flat_map(|o| o.data().iter())
                .map(|v| 0.5 * v * v)
                .sum()
        };
        let mut probe = layers.clone();
        for h in [1e-5, 1e-4, 1e-3, 1e-6] {
            let w0 = layers[0].weight[idx];
            probe[0].weight[idx] = w0 + h;
            let plus = loss_of(&probe);
            probe[0].weight[idx] = w0 - h;
            let minus = loss_of(&probe);
            probe[0].weight[idx] = w0;
            let numeric = (plus - minus) / (2.0 * h);
            let rel = (corrupted - numeric).abs() / corrupted.abs().max(numeric.abs()).max(1e-8);
            assert!(
                rel > GRADCHECK_TOLERANCE,
                "step {h}: corrupted gradient slipped through"
            );
            // And the true gradient passes at the primary step.
            let rel_true = (grad - numeric).abs() / grad.abs().max(numeric.abs()).max(1e-8);
            if h == 1e-5 {
                assert!(rel_true < GRADCHECK_TOLERANCE, "true gradient must verify");
            }
        }
    }

    #[test]
    fn absurd_targets_abort_as_divergence() {
        let (graph, feats, config, selection, footprints, mut targets, weights) = fit_fixture();
        for c in &mut targets.colors {
            *c = [1e4, 1e4, 1e4];
        }
        let fit = FitConfig {
            steps: 3,
            ..FitConfig::default()
        };
        match fit_heads(
            &graph,
            &config,
            &feats,
            &selection,
            &footprints,
            &targets,
            weights,
            &fit,
        ) {
            Err(OptimError::Diverged { loss, .. }) => assert!(loss > 1e6),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
