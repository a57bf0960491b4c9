//! Minimal dense feed-forward substrate.
//!
//! Networks are described by an [`MlpSpec`] and parametrized by a flat
//! [`ParamVector`]; everything is 64-bit. Forward is plain
//! affine-activation composition; an optional gaussian head splits the last
//! layer's output into a mean half and a log-variance half (log-variance
//! clamped to [−10, 10] before any exponentiation). Gradients come from
//! hand-coded backprop whose contract is the central-difference check in
//! [`grad_check`].

mod adam;
mod loss;

pub use adam::{adam_step, AdamHyperParams, AdamState};
pub use loss::{grad, grad_check, GradCheckReport, Loss, LossValue};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Range the gaussian head clamps log-variances to.
pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Rectifier,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum OutputHead {
    /// The last affine layer's output is returned as-is.
    Plain,
    /// The last layer's output (even width 2m) is split into a mean half and
    /// a clamped log-variance half of width m each.
    Gaussian,
}

/// Architecture of a dense network: layer sizes from input to output, one
/// activation per hidden layer, and the output head.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    output_head: OutputHead,
}

impl MlpSpec {
    pub fn new(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        output_head: OutputHead,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::domain(format!(
                "need at least input and output sizes, got {:?}",
                layer_sizes
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::domain(format!(
                "all layer sizes must be positive, got {:?}",
                layer_sizes
            )));
        }
        let hidden = layer_sizes.len() - 2;
        if activations.len() != hidden {
            return Err(Error::domain(format!(
                "{} hidden layers but {} activations",
                hidden,
                activations.len()
            )));
        }
        if output_head == OutputHead::Gaussian && layer_sizes.last().unwrap() % 2 != 0 {
            return Err(Error::domain(format!(
                "gaussian head needs an even output width, got {}",
                layer_sizes.last().unwrap()
            )));
        }
        Ok(MlpSpec {
            layer_sizes,
            activations,
            output_head,
        })
    }

    /// Spec with rectifier activations on every hidden layer.
    pub fn rectifier(layer_sizes: &[usize], output_head: OutputHead) -> Result<Self> {
        let hidden = layer_sizes.len().saturating_sub(2);
        MlpSpec::new(
            layer_sizes.to_vec(),
            vec![Activation::Rectifier; hidden],
            output_head,
        )
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn output_head(&self) -> OutputHead {
        self.output_head
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Raw width of the last affine layer.
    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Width of each gaussian-head half (mean / log-variance).
    pub fn head_dim(&self) -> usize {
        match self.output_head {
            OutputHead::Plain => self.output_dim(),
            OutputHead::Gaussian => self.output_dim() / 2,
        }
    }

    /// Number of affine layers.
    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    fn fan(&self, layer: usize) -> (usize, usize) {
        (self.layer_sizes[layer], self.layer_sizes[layer + 1])
    }

    /// Total parameter count: Σ (fan_in + 1) · fan_out.
    pub fn param_count(&self) -> usize {
        (0..self.n_layers())
            .map(|l| {
                let (fi, fo) = self.fan(l);
                (fi + 1) * fo
            })
            .sum()
    }

    fn activation(&self, hidden_layer: usize) -> Activation {
        self.activations[hidden_layer]
    }
}

/// Flat 64-bit parameter storage with an index map from (layer, weight/bias)
/// to slices. Weights are row-major (fan_in × fan_out), followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
    layout: Vec<LayerSlice>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LayerSlice {
    w_start: usize,
    b_start: usize,
    fan_in: usize,
    fan_out: usize,
}

fn build_layout(spec: &MlpSpec) -> Vec<LayerSlice> {
    let mut layout = Vec::with_capacity(spec.n_layers());
    let mut offset = 0;
    for l in 0..spec.n_layers() {
        let (fan_in, fan_out) = spec.fan(l);
        layout.push(LayerSlice {
            w_start: offset,
            b_start: offset + fan_in * fan_out,
            fan_in,
            fan_out,
        });
        offset += (fan_in + 1) * fan_out;
    }
    layout
}

impl ParamVector {
    pub fn zeros(spec: &MlpSpec) -> Self {
        ParamVector {
            data: vec![0.0; spec.param_count()],
            layout: build_layout(spec),
        }
    }

    /// Wraps an existing flat vector; every entry must be finite.
    pub fn from_vec(spec: &MlpSpec, data: Vec<f64>) -> Result<Self> {
        if data.len() != spec.param_count() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                spec.param_count(),
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("non-finite parameter {bad}")));
        }
        Ok(ParamVector {
            data,
            layout: build_layout(spec),
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Weight slice of one layer (row-major fan_in × fan_out).
    pub fn weights(&self, layer: usize) -> &[f64] {
        let s = self.layout[layer];
        &self.data[s.w_start..s.b_start]
    }

    /// Bias slice of one layer.
    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = self.layout[layer];
        &self.data[s.b_start..s.b_start + s.fan_out]
    }
}

/// Glorot-uniform initialization: each layer's weights are uniform on
/// ±√(6/(fan_in+fan_out)), biases exactly zero. Weights are drawn layer by
/// layer in row-major order, so a fixed seed fixes the vector.
pub fn init_params(spec: &MlpSpec, rng: &mut Rng) -> ParamVector {
    let mut params = ParamVector::zeros(spec);
    for l in 0..spec.n_layers() {
        let s = params.layout[l];
        let half_width = (6.0 / (s.fan_in + s.fan_out) as f64).sqrt();
        for i in s.w_start..s.b_start {
            params.data[i] = rng.uniform(-half_width, half_width);
        }
    }
    params
}

/// Output of a forward pass.
#[derive(Debug, Clone)]
pub enum ForwardOutput {
    Plain(DMatrix<f64>),
    Gaussian {
        mean: DMatrix<f64>,
        logvar: DMatrix<f64>,
    },
}

impl ForwardOutput {
    pub fn plain(self) -> DMatrix<f64> {
        match self {
            ForwardOutput::Plain(m) => m,
            ForwardOutput::Gaussian { .. } => panic!("expected plain output"),
        }
    }

    pub fn gaussian(self) -> (DMatrix<f64>, DMatrix<f64>) {
        match self {
            ForwardOutput::Gaussian { mean, logvar } => (mean, logvar),
            ForwardOutput::Plain(_) => panic!("expected gaussian output"),
        }
    }
}

fn weight_matrix(params: &[f64], s: LayerSlice) -> DMatrix<f64> {
    DMatrix::from_row_slice(s.fan_in, s.fan_out, &params[s.w_start..s.b_start])
}

fn affine(x: &DMatrix<f64>, params: &[f64], s: LayerSlice) -> DMatrix<f64> {
    let w = weight_matrix(params, s);
    let mut z = x * w;
    let bias = &params[s.b_start..s.b_start + s.fan_out];
    for i in 0..z.nrows() {
        for (j, &b) in bias.iter().enumerate() {
            z[(i, j)] += b;
        }
    }
    z
}

/// Forward state retained for backprop: inputs/activations per layer, raw
/// pre-activations, and the smallest |pre-activation| seen at any rectifier
/// unit (∞ when there are none) for kink detection.
pub(crate) struct ForwardCache {
    /// post[l] is the input to affine layer l; post[0] is the batch input.
    post: Vec<DMatrix<f64>>,
    /// pre[l] is the raw output of affine layer l.
    pre: Vec<DMatrix<f64>>,
    pub(crate) min_abs_preact: f64,
}

pub(crate) fn forward_cached(
    spec: &MlpSpec,
    params: &[f64],
    x: &DMatrix<f64>,
) -> Result<(ForwardOutput, ForwardCache)> {
    if params.len() != spec.param_count() {
        return Err(Error::dim(format!(
            "expected {} parameters, got {}",
            spec.param_count(),
            params.len()
        )));
    }
    if x.ncols() != spec.input_dim() {
        return Err(Error::dim(format!(
            "input has {} columns but the network expects {}",
            x.ncols(),
            spec.input_dim()
        )));
    }
    let layout = build_layout(spec);
    let n_layers = spec.n_layers();
    let mut post = Vec::with_capacity(n_layers);
    let mut pre = Vec::with_capacity(n_layers);
    let mut min_abs_preact = f64::INFINITY;

    let mut a = x.clone();
    for l in 0..n_layers {
        let z = affine(&a, params, layout[l]);
        post.push(a);
        let is_output = l + 1 == n_layers;
        a = if is_output {
            z.clone()
        } else {
            match spec.activation(l) {
                Activation::Rectifier => {
                    for v in z.iter() {
                        min_abs_preact = min_abs_preact.min(v.abs());
                    }
                    z.map(|v| v.max(0.0))
                }
                Activation::Identity => z.clone(),
            }
        };
        pre.push(z);
    }

    let out = match spec.output_head {
        OutputHead::Plain => ForwardOutput::Plain(a),
        OutputHead::Gaussian => {
            let m = spec.head_dim();
            let mean = a.columns(0, m).into_owned();
            let logvar = a
                .columns(m, m)
                .map(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
            ForwardOutput::Gaussian { mean, logvar }
        }
    };
    Ok((
        out,
        ForwardCache {
            post,
            pre,
            min_abs_preact,
        },
    ))
}

/// Standard affine-activation composition over the rows of `x`.
pub fn forward(spec: &MlpSpec, params: &ParamVector, x: &DMatrix<f64>) -> Result<ForwardOutput> {
    forward_cached(spec, params.as_slice(), x).map(|(out, _)| out)
}

/// Gradient of a scalar loss with respect to the network output.
pub(crate) enum OutputGrad {
    Plain(DMatrix<f64>),
    Gaussian {
        d_mean: DMatrix<f64>,
        d_logvar: DMatrix<f64>,
    },
}

/// Backprop through the cached forward pass. Returns the gradient over this
/// network's flat parameters and the gradient with respect to the input
/// batch. Rectifier subgradient at exactly zero is taken as 0; gaussian-head
/// log-variance gradients vanish where the clamp binds.
pub(crate) fn backward(
    spec: &MlpSpec,
    params: &[f64],
    cache: &ForwardCache,
    d_out: OutputGrad,
) -> (Vec<f64>, DMatrix<f64>) {
    let layout = build_layout(spec);
    let n_layers = spec.n_layers();
    let mut grads = vec![0.0; spec.param_count()];

    // Merge the head gradient into a gradient over the last raw layer output.
    let mut d_z = match d_out {
        OutputGrad::Plain(d) => d,
        OutputGrad::Gaussian { d_mean, d_logvar } => {
            let m = spec.head_dim();
            let n = d_mean.nrows();
            let raw = &cache.pre[n_layers - 1];
            let mut d = DMatrix::zeros(n, 2 * m);
            for i in 0..n {
                for j in 0..m {
                    d[(i, j)] = d_mean[(i, j)];
                    let r = raw[(i, m + j)];
                    d[(i, m + j)] = if r.abs() <= LOGVAR_CLAMP {
                        d_logvar[(i, j)]
                    } else {
                        0.0
                    };
                }
            }
            d
        }
    };

    for l in (0..n_layers).rev() {
        let s = layout[l];
        // Parameter gradients: dW = aᵀ dZ (row-major), db = column sums.
        let a = &cache.post[l];
        let dw = a.transpose() * &d_z;
        for i in 0..s.fan_in {
            for j in 0..s.fan_out {
                grads[s.w_start + i * s.fan_out + j] = dw[(i, j)];
            }
        }
        for j in 0..s.fan_out {
            grads[s.b_start + j] = d_z.column(j).sum();
        }
        // Input gradient for this layer, gated by the previous activation.
        let w = weight_matrix(params, s);
        let mut d_a = &d_z * w.transpose();
        if l > 0 {
            if let Activation::Rectifier = spec.activation(l - 1) {
                let z_prev = &cache.pre[l - 1];
                for (d, z) in d_a.iter_mut().zip(z_prev.iter()) {
                    if *z <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
        }
        d_z = d_a;
    }
    (grads, d_z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::rectifier(&[4], OutputHead::Plain).is_err());
        assert!(MlpSpec::rectifier(&[4, 0, 2], OutputHead::Plain).is_err());
        assert!(MlpSpec::rectifier(&[4, 3], OutputHead::Gaussian).is_err());
        let spec = MlpSpec::rectifier(&[4, 3, 2], OutputHead::Plain).unwrap();
        assert_eq!(spec.param_count(), (4 + 1) * 3 + (3 + 1) * 2);
    }

    #[test]
    fn init_counts_and_zero_biases() {
        let spec = MlpSpec::rectifier(&[2, 3], OutputHead::Plain).unwrap();
        let mut rng = Rng::seed_from_u64(1);
        let params = init_params(&spec, &mut rng);
        assert_eq!(params.len(), 9);
        assert_eq!(params.bias(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = MlpSpec::rectifier(&[5, 4, 3], OutputHead::Plain).unwrap();
        let a = init_params(&spec, &mut Rng::seed_from_u64(9));
        let b = init_params(&spec, &mut Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn init_respects_per_layer_bound() {
        let spec = MlpSpec::rectifier(&[784, 256, 40], OutputHead::Plain).unwrap();
        let mut rng = Rng::seed_from_u64(3);
        let params = init_params(&spec, &mut rng);
        for (l, fan) in [(0usize, (784, 256)), (1, (256, 40))] {
            let bound = (6.0 / (fan.0 + fan.1) as f64).sqrt();
            assert!(
                params.weights(l).iter().all(|w| w.abs() < bound),
                "layer {l} exceeds half-width {bound}"
            );
        }
        // First-layer bound written out: √(6/1040).
        let first_bound = (6.0f64 / 1040.0).sqrt();
        assert!(params.weights(0).iter().all(|w| w.abs() < first_bound));
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let spec = MlpSpec::new(
            vec![3, 3, 3],
            vec![Activation::Identity],
            OutputHead::Plain,
        )
        .unwrap();
        let mut params = ParamVector::zeros(&spec);
        for l in 0..2 {
            let s = params.layout[l];
            for i in 0..3 {
                params.data[s.w_start + i * 3 + i] = 1.0;
            }
        }
        let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, 0.5, 0.0, -0.5]);
        let out = forward(&spec, &params, &x).unwrap().plain();
        assert_eq!(out, x);
    }

    #[test]
    fn rectifier_zeroes_negative_preactivations() {
        let spec = MlpSpec::rectifier(&[2, 2, 1], OutputHead::Plain).unwrap();
        let mut params = ParamVector::zeros(&spec);
        // First layer maps everything to negative values via the bias.
        let s0 = params.layout[0];
        params.data[s0.b_start] = -1.0;
        params.data[s0.b_start + 1] = -2.0;
        // Second layer sums its (rectified, hence zero) inputs.
        let s1 = params.layout[1];
        params.data[s1.w_start] = 1.0;
        params.data[s1.w_start + 1] = 1.0;
        params.data[s1.b_start] = 0.25;
        let x = DMatrix::from_row_slice(1, 2, &[0.0, 0.0]);
        let out = forward(&spec, &params, &x).unwrap().plain();
        assert_eq!(out[(0, 0)], 0.25);
    }

    #[test]
    fn single_layer_hand_arithmetic() {
        // W = [1, 2]ᵀ, b = 0.5, x = [1, 1] → 1 + 2 + 0.5 = 3.5.
        let spec = MlpSpec::rectifier(&[2, 1], OutputHead::Plain).unwrap();
        let params = ParamVector::from_vec(&spec, vec![1.0, 2.0, 0.5]).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let out = forward(&spec, &params, &x).unwrap().plain();
        assert_eq!(out[(0, 0)], 3.5);
    }

    #[test]
    fn gaussian_head_splits_and_clamps() {
        let spec = MlpSpec::rectifier(&[2, 4], OutputHead::Gaussian).unwrap();
        let mut params = ParamVector::zeros(&spec);
        let s = params.layout[0];
        params.data[s.b_start..s.b_start + 4].copy_from_slice(&[0.5, -0.5, 3.0, 40.0]);
        let x = DMatrix::zeros(1, 2);
        let (mean, logvar) = forward(&spec, &params, &x).unwrap().gaussian();
        assert_eq!(mean.as_slice(), &[0.5, -0.5]);
        assert_eq!(logvar[(0, 0)], 3.0);
        assert_eq!(logvar[(0, 1)], LOGVAR_CLAMP);
    }

    #[test]
    fn forward_is_permutation_equivariant() {
        let spec = MlpSpec::rectifier(&[3, 5, 2], OutputHead::Plain).unwrap();
        let mut rng = Rng::seed_from_u64(17);
        let params = init_params(&spec, &mut rng);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.normal());
        let out = forward(&spec, &params, &x).unwrap().plain();

        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut xp = DMatrix::zeros(6, 3);
        for (dst, &src) in perm.iter().enumerate() {
            xp.set_row(dst, &x.row(src));
        }
        let outp = forward(&spec, &params, &xp).unwrap().plain();
        for (dst, &src) in perm.iter().enumerate() {
            assert_eq!(outp.row(dst), out.row(src));
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let spec = MlpSpec::rectifier(&[3, 2], OutputHead::Plain).unwrap();
        let params = ParamVector::zeros(&spec);
        let x = DMatrix::zeros(1, 4);
        assert!(matches!(
            forward(&spec, &params, &x),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
