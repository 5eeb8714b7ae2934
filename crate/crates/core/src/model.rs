//! Per-point two-branch encoder with a segmentation head and a keypoint
//! offset head.
//!
//! appearance: `[rgb, normal]` -> dense -> dense
//! geometry:   `xyz` -> dense -> dense, then a per-dimension max over all
//!             points is concatenated back onto every point
//! local:      per point, a per-dimension max over its ball neighbours `j` of
//!             dense(`[(x_j - x_i) / r, geometry_j]`)
//! fusion:     `[appearance, geometry, local, context]` -> dense = features
//! heads:      features -> 7 class scores (softmax), features -> 4x3 offsets
//!
//! Every hidden dense layer uses a leaky rectifier. Offsets are stored as an
//! `N x 12` array, slot `j` in columns `3j..3j+3`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloudFrame;
use crate::io::Tensor;
use crate::labels::{NUM_CLASSES, NUM_KEYPOINTS};
use crate::num::{cmp_scalar, Scalar};
use crate::spatial::KdTree;

pub const OFFSET_COLUMNS: usize = 3 * NUM_KEYPOINTS;
const APPEARANCE_INPUTS: usize = 6;
const GEOMETRY_INPUTS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("input cloud is empty")]
    EmptyInput,
    #[error("non-finite value produced by layer {0}")]
    NonFinite(&'static str),
    #[error("checkpoint does not match the model config: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub appearance_width: usize,
    pub geometry_width: usize,
    /// Width D of the fused per-point feature.
    pub feature_dim: usize,
    pub leaky_slope: f64,
    /// Coordinates are multiplied by this before the geometry branch.
    pub position_scale: f64,
    /// Offset head outputs are multiplied by this to give meters.
    pub offset_scale: f64,
    pub local_width: usize,
    /// Ball radius of the local branch, in meters.
    pub local_radius: f64,
    /// Ball size cap, the point itself included. Larger balls are thinned
    /// to evenly spaced distance ranks.
    pub local_neighbors: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            appearance_width: 32,
            geometry_width: 32,
            feature_dim: 64,
            leaky_slope: 0.01,
            position_scale: 5.0,
            offset_scale: 0.1,
            local_width: 32,
            local_radius: 0.04,
            local_neighbors: 16,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, w) in [
            ("appearance_width", self.appearance_width),
            ("geometry_width", self.geometry_width),
            ("feature_dim", self.feature_dim),
            ("local_width", self.local_width),
            ("local_neighbors", self.local_neighbors),
        ] {
            if w == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(ModelError::InvalidConfig("leaky_slope must lie in [0, 1)".into()));
        }
        if !(self.position_scale > 0.0 && self.position_scale.is_finite()) {
            return Err(ModelError::InvalidConfig("position_scale must be positive".into()));
        }
        if !(self.offset_scale > 0.0 && self.offset_scale.is_finite()) {
            return Err(ModelError::InvalidConfig("offset_scale must be positive".into()));
        }
        if !(self.local_radius > 0.0 && self.local_radius.is_finite()) {
            return Err(ModelError::InvalidConfig("local_radius must be positive".into()));
        }
        Ok(())
    }

    fn fusion_inputs(&self) -> usize {
        self.appearance_width + 2 * self.geometry_width + self.local_width
    }

    /// `(name, fan_in, fan_out)` of every layer, in parameter order.
    fn layer_shapes(&self) -> [(&'static str, usize, usize); 8] {
        let (a, g, d) = (self.appearance_width, self.geometry_width, self.feature_dim);
        [
            ("appearance.0", APPEARANCE_INPUTS, a),
            ("appearance.1", a, a),
            ("geometry.0", GEOMETRY_INPUTS, g),
            ("geometry.1", g, g),
            ("local", GEOMETRY_INPUTS + g, self.local_width),
            ("fusion", self.fusion_inputs(), d),
            ("seg_head", d, NUM_CLASSES),
            ("offset_head", d, OFFSET_COLUMNS),
        ]
    }
}

/// Affine layer `y = x W + b` with `W` stored `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    fn apply(&self, x: ArrayView2<T>) -> Array2<T> {
        x.dot(&self.weight) + &self.bias
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layers: Vec<Dense<T>>,
}

const APP0: usize = 0;
const APP1: usize = 1;
const GEO0: usize = 2;
const GEO1: usize = 3;
const LOCAL: usize = 4;
const FUSION: usize = 5;
const SEG: usize = 6;
const OFFSET: usize = 7;

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(config: &ModelConfig) -> Self {
        ModelParams {
            config: config.clone(),
            layers: config.layer_shapes().iter().map(|&(_, i, o)| Dense::zeros(i, o)).collect(),
        }
    }

    pub fn layer_names(&self) -> Vec<&'static str> {
        self.config.layer_shapes().iter().map(|s| s.0).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// `self += a * other`, layer by layer.
    pub fn add_scaled(&mut self, a: T, other: &Self) {
        for (l, o) in self.layers.iter_mut().zip(&other.layers) {
            l.weight.scaled_add(a, &o.weight);
            l.bias.scaled_add(a, &o.bias);
        }
    }

    pub fn scale(&mut self, a: T) {
        for l in &mut self.layers {
            l.weight.mapv_inplace(|v| v * a);
            l.bias.mapv_inplace(|v| v * a);
        }
    }

    pub fn max_abs(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense { weight: l.weight.mapv(|v| U::of(v.as_f64())), bias: l.bias.mapv(|v| U::of(v.as_f64())) })
                .collect(),
        }
    }

    /// Named f32 tensors `<layer>.weight` and `<layer>.bias`.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (name, l) in self.layer_names().into_iter().zip(&self.layers) {
            out.push(Tensor {
                name: format!("{name}.weight"),
                shape: l.weight.shape().to_vec(),
                data: l.weight.iter().map(|v| v.as_f32()).collect(),
            });
            out.push(Tensor {
                name: format!("{name}.bias"),
                shape: l.bias.shape().to_vec(),
                data: l.bias.iter().map(|v| v.as_f32()).collect(),
            });
        }
        out
    }

    pub fn from_tensors(config: &ModelConfig, tensors: &[Tensor]) -> Result<Self, ModelError> {
        config.validate()?;
        let find = |name: &str, shape: &[usize]| -> Result<Vec<T>, ModelError> {
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| ModelError::Incompatible(format!("missing tensor {name}")))?;
            if t.shape != shape {
                return Err(ModelError::Incompatible(format!(
                    "tensor {name} has shape {:?}, config expects {:?}",
                    t.shape, shape
                )));
            }
            Ok(t.data.iter().map(|&v| T::of(v as f64)).collect())
        };
        let shapes = config.layer_shapes();
        let expected = 2 * shapes.len();
        if tensors.len() != expected {
            return Err(ModelError::Incompatible(format!("{} tensors, config expects {expected}", tensors.len())));
        }
        let mut layers = Vec::new();
        for (name, i, o) in shapes {
            let w = find(&format!("{name}.weight"), &[i, o])?;
            let b = find(&format!("{name}.bias"), &[o])?;
            layers.push(Dense {
                weight: Array2::from_shape_vec((i, o), w).expect("length checked"),
                bias: Array1::from_vec(b),
            });
        }
        Ok(ModelParams { config: config.clone(), layers })
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::zeros(config);
    for (layer, &(_, fan_in, fan_out)) in params.layers.iter_mut().zip(config.layer_shapes().iter()) {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let dist = Uniform::new(-s, s);
        layer.weight.mapv_inplace(|_| T::of(dist.sample(&mut rng)));
    }
    Ok(params)
}

/// Per-point outputs of [`forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    /// `N x 7` class probabilities.
    pub scores: Array2<T>,
    /// `N x 12` offsets in meters.
    pub offsets: Array2<T>,
    /// `N x D` fused features.
    pub features: Array2<T>,
}

impl<T: Scalar> Prediction<T> {
    /// Arg-max class per point; ties go to the lower label.
    pub fn labels(&self) -> Vec<u8> {
        self.scores
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for c in 1..r.len() {
                    if r[c] > r[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    appearance_in: Array2<T>,
    geometry_in: Array2<T>,
    app_pre: [Array2<T>; 2],
    app_out: [Array2<T>; 2],
    geo_pre: [Array2<T>; 2],
    geo_out: [Array2<T>; 2],
    context_argmax: Vec<usize>,
    local_in: Array2<T>,
    /// Per point and channel, the neighbour attaining the local max.
    local_argmax: Array2<usize>,
    local_pre: Array2<T>,
    fused_in: Array2<T>,
    fused_pre: Array2<T>,
}

fn leaky<T: Scalar>(x: &Array2<T>, slope: T) -> Array2<T> {
    x.mapv(|v| if v > T::zero() { v } else { v * slope })
}

fn leaky_backward<T: Scalar>(grad: &mut Array2<T>, pre: &Array2<T>, slope: T) {
    Zip::from(grad).and(pre).for_each(|g, &p| {
        if p <= T::zero() {
            *g *= slope;
        }
    });
}

fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn forward<T: Scalar>(cloud: &PointCloudFrame<T>, params: &ModelParams<T>) -> Result<Prediction<T>, ModelError> {
    forward_cached(cloud, params).map(|(p, _)| p)
}

pub fn forward_cached<T: Scalar>(
    cloud: &PointCloudFrame<T>,
    params: &ModelParams<T>,
) -> Result<(Prediction<T>, ForwardCache<T>), ModelError> {
    let n = cloud.len();
    if n == 0 {
        return Err(ModelError::EmptyInput);
    }
    let cfg = &params.config;
    let slope = T::of(cfg.leaky_slope);
    let scale = T::of(cfg.position_scale);
    let mut appearance_in = Array2::zeros((n, APPEARANCE_INPUTS));
    let mut geometry_in = Array2::zeros((n, GEOMETRY_INPUTS));
    for i in 0..n {
        for c in 0..3 {
            appearance_in[[i, c]] = cloud.rgb[i][c];
            appearance_in[[i, 3 + c]] = cloud.normal[i][c];
            geometry_in[[i, c]] = cloud.xyz[i][c] * scale;
        }
    }
    let l = &params.layers;

    let a0_pre = l[APP0].apply(appearance_in.view());
    let a0 = leaky(&a0_pre, slope);
    check_layer(&a0, "appearance.0")?;
    let a1_pre = l[APP1].apply(a0.view());
    let a1 = leaky(&a1_pre, slope);
    check_layer(&a1, "appearance.1")?;

    let g0_pre = l[GEO0].apply(geometry_in.view());
    let g0 = leaky(&g0_pre, slope);
    check_layer(&g0, "geometry.0")?;
    let g1_pre = l[GEO1].apply(g0.view());
    let g1 = leaky(&g1_pre, slope);
    check_layer(&g1, "geometry.1")?;

    let gw = cfg.geometry_width;
    let mut context_argmax = vec![0usize; gw];
    for k in 0..gw {
        let col = g1.column(k);
        let mut best = 0;
        for i in 1..n {
            if col[i] > col[best] {
                best = i;
            }
        }
        context_argmax[k] = best;
    }
    // dense([(x_j - x_i) / r, g_j]) = P_j - Q_i + b with P = [x / r, g] W and
    // Q = (x / r) W_x; the rectifier is monotone, so the max over j moves
    // inside it
    let inv_r = T::one() / T::of(cfg.local_radius);
    let mut local_in = Array2::zeros((n, GEOMETRY_INPUTS + gw));
    for i in 0..n {
        for c in 0..3 {
            local_in[[i, c]] = cloud.xyz[i][c] * inv_r;
        }
    }
    local_in.slice_mut(s![.., GEOMETRY_INPUTS..]).assign(&g1);
    let p = local_in.dot(&l[LOCAL].weight);
    let q = local_in.slice(s![.., ..GEOMETRY_INPUTS]).dot(&l[LOCAL].weight.slice(s![..GEOMETRY_INPUTS, ..]));
    let neighbors = ball_neighbors(cloud, cfg);
    let lw = cfg.local_width;
    let mut local_argmax = Array2::zeros((n, lw));
    let mut local_pre = Array2::zeros((n, lw));
    for (i, nb) in neighbors.iter().enumerate() {
        for k in 0..lw {
            let mut best = nb[0];
            for &j in &nb[1..] {
                if p[[j, k]] > p[[best, k]] {
                    best = j;
                }
            }
            local_argmax[[i, k]] = best;
            local_pre[[i, k]] = p[[best, k]] - q[[i, k]] + l[LOCAL].bias[k];
        }
    }
    let local = leaky(&local_pre, slope);
    check_layer(&local, "local")?;

    let aw = cfg.appearance_width;
    let mut fused_in = Array2::zeros((n, cfg.fusion_inputs()));
    fused_in.slice_mut(s![.., ..aw]).assign(&a1);
    fused_in.slice_mut(s![.., aw..aw + gw]).assign(&g1);
    fused_in.slice_mut(s![.., aw + gw..aw + gw + lw]).assign(&local);
    for k in 0..gw {
        let m = g1[[context_argmax[k], k]];
        fused_in.column_mut(aw + gw + lw + k).fill(m);
    }
    let fused_pre = l[FUSION].apply(fused_in.view());
    let features = leaky(&fused_pre, slope);
    check_layer(&features, "fusion")?;

    let logits = l[SEG].apply(features.view());
    check_layer(&logits, "seg_head")?;
    let scores = softmax_rows(&logits);
    check_layer(&scores, "seg_head")?;
    let offsets = l[OFFSET].apply(features.view()) * T::of(cfg.offset_scale);
    check_layer(&offsets, "offset_head")?;

    let cache = ForwardCache {
        appearance_in,
        geometry_in,
        app_pre: [a0_pre, a1_pre],
        app_out: [a0, a1],
        geo_pre: [g0_pre, g1_pre],
        geo_out: [g0, g1],
        context_argmax,
        local_in,
        local_argmax,
        local_pre,
        fused_in,
        fused_pre,
    };
    Ok((Prediction { scores, offsets, features }, cache))
}

/// Every point followed by up to `local_neighbors - 1` others within
/// `local_radius`, taken at evenly spaced ranks of the distance-sorted ball.
fn ball_neighbors<T: Scalar>(cloud: &PointCloudFrame<T>, cfg: &ModelConfig) -> Vec<Vec<usize>> {
    let tree = KdTree::build(&cloud.xyz);
    let r = T::of(cfg.local_radius);
    let others = cfg.local_neighbors - 1;
    (0..cloud.len())
        .map(|i| {
            let p = cloud.xyz[i];
            let mut ball: Vec<usize> = tree.within_radius(p, r).into_iter().filter(|&j| j != i).collect();
            ball.sort_by(|&a, &b| {
                cmp_scalar(p.distance_sq(cloud.xyz[a]), p.distance_sq(cloud.xyz[b]))
                    .then_with(|| cloud.xyz[a].lex_cmp(&cloud.xyz[b]))
            });
            let m = ball.len();
            let mut nb = Vec::with_capacity(others.min(m) + 1);
            nb.push(i);
            if m <= others {
                nb.extend(ball);
            } else {
                nb.extend((0..others).map(|t| ball[t * m / others]));
            }
            nb
        })
        .collect()
}

fn check_layer<T: Scalar>(x: &Array2<T>, layer: &'static str) -> Result<(), ModelError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFinite(layer))
    }
}

fn dense_backward<T: Scalar>(
    layer: &Dense<T>,
    input: &Array2<T>,
    grad_out: &Array2<T>,
    grad: &mut Dense<T>,
    need_input_grad: bool,
) -> Option<Array2<T>> {
    grad.weight += &input.t().dot(grad_out);
    grad.bias += &grad_out.sum_axis(Axis(0));
    need_input_grad.then(|| grad_out.dot(&layer.weight.t()))
}

/// Gradient of a scalar loss with respect to every parameter, given the
/// loss gradients with respect to the class probabilities and the offsets.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    pred: &Prediction<T>,
    cache: &ForwardCache<T>,
    d_scores: &Array2<T>,
    d_offsets: &Array2<T>,
) -> ModelParams<T> {
    let cfg = &params.config;
    let slope = T::of(cfg.leaky_slope);
    let l = &params.layers;
    let mut grads = ModelParams::zeros(cfg);

    // softmax: dz = p * (g - <g, p>)
    let mut d_logits = d_scores.clone();
    for (mut row, p) in d_logits.rows_mut().into_iter().zip(pred.scores.rows()) {
        let dot = row.iter().zip(p.iter()).fold(T::zero(), |a, (&g, &q)| a + g * q);
        Zip::from(&mut row).and(&p).for_each(|g, &q| *g = q * (*g - dot));
    }
    let d_off = d_offsets * T::of(cfg.offset_scale);

    let mut d_feat = dense_backward(&l[SEG], &pred.features, &d_logits, &mut grads.layers[SEG], true).unwrap();
    d_feat += &dense_backward(&l[OFFSET], &pred.features, &d_off, &mut grads.layers[OFFSET], true).unwrap();
    leaky_backward(&mut d_feat, &cache.fused_pre, slope);
    let d_fused_in = dense_backward(&l[FUSION], &cache.fused_in, &d_feat, &mut grads.layers[FUSION], true).unwrap();

    let (aw, gw, lw) = (cfg.appearance_width, cfg.geometry_width, cfg.local_width);
    let mut d_a1 = d_fused_in.slice(s![.., ..aw]).to_owned();
    let mut d_g1 = d_fused_in.slice(s![.., aw..aw + gw]).to_owned();
    let mut d_local = d_fused_in.slice(s![.., aw + gw..aw + gw + lw]).to_owned();
    let d_ctx = d_fused_in.slice(s![.., aw + gw + lw..]).sum_axis(Axis(0));
    for k in 0..gw {
        d_g1[[cache.context_argmax[k], k]] += d_ctx[k];
    }

    leaky_backward(&mut d_local, &cache.local_pre, slope);
    let n = d_local.nrows();
    let mut d_p = Array2::zeros((n, lw));
    for i in 0..n {
        for k in 0..lw {
            d_p[[cache.local_argmax[[i, k]], k]] += d_local[[i, k]];
        }
    }
    let g_local = &mut grads.layers[LOCAL];
    g_local.weight += &cache.local_in.t().dot(&d_p);
    let x_in = cache.local_in.slice(s![.., ..GEOMETRY_INPUTS]);
    let mut g_wx = g_local.weight.slice_mut(s![..GEOMETRY_INPUTS, ..]);
    g_wx -= &x_in.t().dot(&d_local);
    g_local.bias += &d_local.sum_axis(Axis(0));
    let d_local_in = d_p.dot(&l[LOCAL].weight.t());
    d_g1 += &d_local_in.slice(s![.., GEOMETRY_INPUTS..]);

    leaky_backward(&mut d_a1, &cache.app_pre[1], slope);
    let mut d_a0 = dense_backward(&l[APP1], &cache.app_out[0], &d_a1, &mut grads.layers[APP1], true).unwrap();
    leaky_backward(&mut d_a0, &cache.app_pre[0], slope);
    dense_backward(&l[APP0], &cache.appearance_in, &d_a0, &mut grads.layers[APP0], false);

    leaky_backward(&mut d_g1, &cache.geo_pre[1], slope);
    let mut d_g0 = dense_backward(&l[GEO1], &cache.geo_out[0], &d_g1, &mut grads.layers[GEO1], true).unwrap();
    leaky_backward(&mut d_g0, &cache.geo_pre[0], slope);
    dense_backward(&l[GEO0], &cache.geometry_in, &d_g0, &mut grads.layers[GEO0], false);

    grads
}

/// Per-dimension max of the geometry branch over all points.
pub fn global_context<T: Scalar>(cloud: &PointCloudFrame<T>, params: &ModelParams<T>) -> Result<Array1<T>, ModelError> {
    let (_, cache) = forward_cached(cloud, params)?;
    let g1 = &cache.geo_out[1];
    Ok(Array1::from_iter(cache.context_argmax.iter().enumerate().map(|(k, &i)| g1[[i, k]])))
}
