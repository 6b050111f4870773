//! Composable layers with owned parameters: convolution (+bias), group norm,
//! the pre-activation residual block, the strided down-convolution, and the
//! decoder up-path unit (pointwise channel halving, nearest upsample,
//! additive skip).
//!
//! A layer owns its parameter tensors; [`bind`](ConvLayer::bind)-ing a layer
//! onto a tape registers those tensors as trainable leaves and returns a
//! lightweight `*Vars` handle whose `apply` records the layer's computation.
//! Parameters are addressed by dotted paths ("enc1.block0.conv1.weight") via
//! the `visit`/`visit_mut` walkers; visitation order is fixed and doubles as
//! the checkpoint serialization order.

use crate::error::{Error, Result};
use crate::ops::conv::ConvSpec;
use crate::ops::norm::effective_groups;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Convolution with optional bias. Covers the full 3-extent kernels, the
/// strided downsampling convolutions, and pointwise (1x1x1x1) mixes; `apply`
/// routes pointwise specs to the specialized kernel.
#[derive(Debug, Clone)]
pub struct ConvLayer<S: Scalar> {
    pub weight: Tensor<S>,
    pub bias: Option<Tensor<S>>,
    pub spec: ConvSpec,
}

impl<S: Scalar> ConvLayer<S> {
    /// He-style fan-in initialization: weights from N(0, 2/fan_in) where
    /// fan_in counts input channels times kernel volume; bias starts at zero.
    pub fn init<R: Rng>(
        cin: usize,
        cout: usize,
        spec: ConvSpec,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let k = spec.kernel;
        let fan_in = (cin * k[0] * k[1] * k[2] * k[3]) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let weight = Tensor::from_fn(&[cout, cin, k[0], k[1], k[2], k[3]], |_| {
            S::from_f64(normal.sample(rng))
        });
        let bias = with_bias.then(|| Tensor::zeros(&[cout]));
        ConvLayer { weight, bias, spec }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> ConvLayerVars {
        ConvLayerVars {
            weight: tape.leaf(self.weight.clone(), true),
            bias: self.bias.as_ref().map(|b| tape.leaf(b.clone(), true)),
            spec: self.spec,
        }
    }

    pub fn visit<'a>(&'a self, path: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{path}.weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((format!("{path}.bias"), b));
        }
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        out.push((format!("{path}.weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((format!("{path}.bias"), b));
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConvLayerVars {
    pub weight: Var,
    pub bias: Option<Var>,
    pub spec: ConvSpec,
}

impl ConvLayerVars {
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        if self.spec == ConvSpec::pointwise() {
            tape.conv_pointwise(x, self.weight, self.bias)
        } else {
            tape.conv4d(x, self.weight, self.bias, self.spec)
        }
    }
}

/// Per-channel affine group normalization. The group count stored here is
/// already resolved for the channel width (see
/// [`effective_groups`](crate::ops::norm::effective_groups)).
#[derive(Debug, Clone)]
pub struct NormLayer<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub groups: usize,
    pub eps: f64,
}

impl<S: Scalar> NormLayer<S> {
    pub fn init(channels: usize, configured_groups: usize, eps: f64) -> Self {
        NormLayer {
            gamma: Tensor::full(&[channels], S::one()),
            beta: Tensor::zeros(&[channels]),
            groups: effective_groups(channels, configured_groups),
            eps,
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> NormLayerVars {
        NormLayerVars {
            gamma: tape.leaf(self.gamma.clone(), true),
            beta: tape.leaf(self.beta.clone(), true),
            groups: self.groups,
            eps: self.eps,
        }
    }

    pub fn visit<'a>(&'a self, path: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        out.push((format!("{path}.gamma"), &self.gamma));
        out.push((format!("{path}.beta"), &self.beta));
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        out.push((format!("{path}.gamma"), &mut self.gamma));
        out.push((format!("{path}.beta"), &mut self.beta));
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NormLayerVars {
    pub gamma: Var,
    pub beta: Var,
    pub groups: usize,
    pub eps: f64,
}

impl NormLayerVars {
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        tape.group_norm(x, self.gamma, self.beta, self.groups, self.eps)
    }
}

/// Pre-activation residual block: GN → ReLU → Conv → GN → ReLU → Conv, then
/// the identity added back. Channel count and extents are preserved.
#[derive(Debug, Clone)]
pub struct ResBlock<S: Scalar> {
    pub norm1: NormLayer<S>,
    pub conv1: ConvLayer<S>,
    pub norm2: NormLayer<S>,
    pub conv2: ConvLayer<S>,
}

impl<S: Scalar> ResBlock<S> {
    pub fn init<R: Rng>(
        channels: usize,
        kernel: [usize; 4],
        groups: usize,
        eps: f64,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let spec = ConvSpec::new(kernel, [1, 1, 1, 1]).expect("validated by config");
        ResBlock {
            norm1: NormLayer::init(channels, groups, eps),
            conv1: ConvLayer::init(channels, channels, spec, with_bias, rng),
            norm2: NormLayer::init(channels, groups, eps),
            conv2: ConvLayer::init(channels, channels, spec, with_bias, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> ResBlockVars {
        ResBlockVars {
            norm1: self.norm1.bind(tape),
            conv1: self.conv1.bind(tape),
            norm2: self.norm2.bind(tape),
            conv2: self.conv2.bind(tape),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.norm1.visit(&format!("{path}.norm1"), out);
        self.conv1.visit(&format!("{path}.conv1"), out);
        self.norm2.visit(&format!("{path}.norm2"), out);
        self.conv2.visit(&format!("{path}.conv2"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.norm1.visit_mut(&format!("{path}.norm1"), out);
        self.conv1.visit_mut(&format!("{path}.conv1"), out);
        self.norm2.visit_mut(&format!("{path}.norm2"), out);
        self.conv2.visit_mut(&format!("{path}.conv2"), out);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ResBlockVars {
    pub norm1: NormLayerVars,
    pub conv1: ConvLayerVars,
    pub norm2: NormLayerVars,
    pub conv2: ConvLayerVars,
}

impl ResBlockVars {
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let mut h = self.norm1.apply(tape, x)?;
        h = tape.relu(h)?;
        h = self.conv1.apply(tape, h)?;
        h = self.norm2.apply(tape, h)?;
        h = tape.relu(h)?;
        h = self.conv2.apply(tape, h)?;
        tape.add(h, x)
    }
}

/// Strided convolution that halves strided extents (rounding up) and doubles
/// the channel count.
#[derive(Debug, Clone)]
pub struct DownConv<S: Scalar> {
    pub conv: ConvLayer<S>,
}

impl<S: Scalar> DownConv<S> {
    pub fn init<R: Rng>(
        cin: usize,
        kernel: [usize; 4],
        stride: [usize; 4],
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let spec = ConvSpec::new(kernel, stride).expect("validated by config");
        DownConv {
            conv: ConvLayer::init(cin, cin * 2, spec, with_bias, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> DownConvVars {
        DownConvVars {
            conv: self.conv.bind(tape),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.conv.visit(path, out);
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.conv.visit_mut(path, out);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DownConvVars {
    pub conv: ConvLayerVars,
}

impl DownConvVars {
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        let nd = tape.value(x).dims6()?;
        for (axis, (&extent, &stride)) in nd.xyzt().iter().zip(&self.conv.spec.stride).enumerate()
        {
            if stride == 2 && extent <= 1 {
                return Err(Error::shape(
                    "down_conv",
                    format!("axis {axis} has extent {extent}; cannot downsample further"),
                ));
            }
        }
        self.conv.apply(tape, x)
    }
}

/// Decoder up-path unit: pointwise conv halving channels, nearest-neighbor
/// upsampling back to the skip's extents, then the additive skip connection.
#[derive(Debug, Clone)]
pub struct DecoderUp<S: Scalar> {
    pub reduce: ConvLayer<S>,
    pub factors: [usize; 4],
}

impl<S: Scalar> DecoderUp<S> {
    pub fn init<R: Rng>(cin: usize, factors: [usize; 4], with_bias: bool, rng: &mut R) -> Self {
        DecoderUp {
            reduce: ConvLayer::init(cin, cin / 2, ConvSpec::pointwise(), with_bias, rng),
            factors,
        }
    }

    pub fn bind(&self, tape: &mut Tape<S>) -> DecoderUpVars {
        DecoderUpVars {
            reduce: self.reduce.bind(tape),
            factors: self.factors,
        }
    }

    pub fn visit<'a>(&'a self, path: &str, out: &mut Vec<(String, &'a Tensor<S>)>) {
        self.reduce.visit(&format!("{path}.reduce"), out);
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, out: &mut Vec<(String, &'a mut Tensor<S>)>) {
        self.reduce.visit_mut(&format!("{path}.reduce"), out);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderUpVars {
    pub reduce: ConvLayerVars,
    pub factors: [usize; 4],
}

impl DecoderUpVars {
    pub fn apply<S: Scalar>(&self, tape: &mut Tape<S>, x: Var, skip: Var) -> Result<Var> {
        let reduced = self.reduce.apply(tape, x)?;
        let up = tape.upsample_nearest(reduced, self.factors)?;
        if tape.value(up).shape() != tape.value(skip).shape() {
            return Err(Error::shape(
                "decoder_up",
                format!(
                    "upsampled branch {:?} does not match skip {:?}",
                    tape.value(up).shape(),
                    tape.value(skip).shape()
                ),
            ));
        }
        tape.add(up, skip)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn res_block_with_zeroed_residual_is_identity() {
        let mut r = rng();
        let mut block = ResBlock::<f64>::init(4, [3, 3, 3, 3], 8, 1e-5, true, &mut r);
        // Zero both conv paths; beta is already zero, so the residual branch
        // contributes nothing and AddId passes the input through.
        for t in [&mut block.conv1.weight, &mut block.conv2.weight] {
            t.data_mut().fill(0.0);
        }
        let x = Tensor::from_fn(&[1, 4, 4, 4, 2, 2], |i| i as f64 * 0.1 - 3.0);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let vars = block.bind(&mut tape);
        let y = vars.apply(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn res_block_preserves_shape() {
        let mut r = rng();
        let block = ResBlock::<f32>::init(8, [3, 3, 3, 3], 8, 1e-5, true, &mut r);
        let x = Tensor::from_fn(&[1, 8, 6, 6, 4, 4], |i| (i % 13) as f32 * 0.05);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let y = block.bind(&mut tape).apply(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y).shape(), x.shape());
    }

    #[test]
    fn saturated_residual_branch_passes_identity_gradient() {
        let mut r = rng();
        let mut block = ResBlock::<f64>::init(2, [3, 3, 3, 3], 8, 1e-5, true, &mut r);
        // Force both ReLUs into the dead zone by a large negative beta: the
        // residual branch output is then constant, so d(out)/d(in) = identity.
        block.norm1.beta.data_mut().fill(-100.0);
        block.norm2.beta.data_mut().fill(-100.0);
        let x = Tensor::from_fn(&[1, 2, 3, 3, 3, 3], |i| (i as f64) * 0.07 - 5.0);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, true);
        let y = block.bind(&mut tape).apply(&mut tape, xv).unwrap();
        let loss = tape.sum(y).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.grad(xv).unwrap().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn down_conv_halves_and_doubles() {
        let mut r = rng();
        let down = DownConv::<f32>::init(8, [3, 3, 3, 3], [2, 2, 2, 2], true, &mut r);
        let x = Tensor::from_fn(&[1, 8, 6, 6, 4, 4], |i| (i % 7) as f32);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, false);
        let y = down.bind(&mut tape).apply(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 16, 3, 3, 2, 2]);
    }

    #[test]
    fn down_conv_rejects_extent_one_on_strided_axis() {
        let mut r = rng();
        let down = DownConv::<f32>::init(2, [3, 3, 3, 3], [2, 2, 2, 2], true, &mut r);
        let x = Tensor::zeros(&[1, 2, 4, 4, 4, 1]);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, false);
        assert!(down.bind(&mut tape).apply(&mut tape, xv).is_err());
    }

    #[test]
    fn down_conv_allows_extent_one_on_unstrided_axis() {
        // The spatial-only variant leaves t alone, so a single-frame input is fine.
        let mut r = rng();
        let down = DownConv::<f32>::init(2, [3, 3, 3, 1], [2, 2, 2, 1], true, &mut r);
        let x = Tensor::from_fn(&[1, 2, 4, 4, 4, 1], |i| i as f32 * 0.01);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, false);
        let y = down.bind(&mut tape).apply(&mut tape, xv).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 4, 2, 2, 2, 1]);
    }

    #[test]
    fn decoder_up_with_zero_skip_is_upsampled_branch() {
        let mut r = rng();
        let up = DecoderUp::<f64>::init(4, [2, 2, 2, 2], true, &mut r);
        let x = Tensor::from_fn(&[1, 4, 2, 2, 2, 2], |i| i as f64 * 0.3);
        let mut tape = Tape::new();
        let xv = tape.leaf(x, false);
        let zero_skip = tape.leaf(Tensor::zeros(&[1, 2, 4, 4, 4, 4]), false);
        let vars = up.bind(&mut tape);
        let y = vars.apply(&mut tape, xv, zero_skip).unwrap();

        let mut tape2 = Tape::new();
        let xv2 = tape2.leaf(tape.value(xv).clone(), false);
        let vars2 = up.bind(&mut tape2);
        let reduced = vars2.reduce.apply(&mut tape2, xv2).unwrap();
        let branch = tape2.upsample_nearest(reduced, [2, 2, 2, 2]).unwrap();
        assert_eq!(tape.value(y).data(), tape2.value(branch).data());
    }

    #[test]
    fn decoder_up_is_linear_in_skip() {
        let mut r = rng();
        let up = DecoderUp::<f64>::init(4, [2, 2, 2, 2], true, &mut r);
        let x = Tensor::from_fn(&[1, 4, 2, 2, 2, 2], |i| i as f64 * 0.2 - 1.0);
        let s1 = Tensor::from_fn(&[1, 2, 4, 4, 4, 4], |i| (i % 5) as f64);
        let s2 = Tensor::from_fn(&[1, 2, 4, 4, 4, 4], |i| (i % 3) as f64 - 1.0);
        let s12 = crate::ops::elementwise::add_forward(&s1, &s2).unwrap();

        let run = |skip: &Tensor<f64>| -> Vec<f64> {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone(), false);
            let sv = tape.leaf(skip.clone(), false);
            let y = up.bind(&mut tape).apply(&mut tape, xv, sv).unwrap();
            tape.value(y).data().to_vec()
        };
        let lhs = run(&s12);
        let rhs1 = run(&s1);
        for ((l, r1), s2v) in lhs.iter().zip(&rhs1).zip(s2.data()) {
            assert!((l - (r1 + s2v)).abs() < 1e-12);
        }
    }

    #[test]
    fn he_init_statistics() {
        let mut r = rng();
        let layer = ConvLayer::<f64>::init(4, 8, ConvSpec::cube4([1, 1, 1, 1]), true, &mut r);
        let expected = (2.0f64 / (4.0 * 81.0)).sqrt();
        let data = layer.weight.data();
        let mean: f64 = data.iter().sum::<f64>() / data.len() as f64;
        let std = (data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / data.len() as f64)
            .sqrt();
        assert!((std - expected).abs() / expected < 0.1, "std {std} vs {expected}");
        assert!(layer.bias.unwrap().data().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = ResBlock::<f32>::init(4, [3, 3, 3, 3], 8, 1e-5, true, &mut rng());
        let b = ResBlock::<f32>::init(4, [3, 3, 3, 3], 8, 1e-5, true, &mut rng());
        assert_eq!(a.conv1.weight.data(), b.conv1.weight.data());
        assert_eq!(a.conv2.weight.data(), b.conv2.weight.data());
    }

    #[test]
    fn visitation_paths_are_unique_and_ordered() {
        let mut r = rng();
        let block = ResBlock::<f32>::init(4, [3, 3, 3, 3], 8, 1e-5, true, &mut r);
        let mut params = Vec::new();
        block.visit("enc0.block0", &mut params);
        let paths: Vec<&str> = params.iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(
            paths,
            [
                "enc0.block0.norm1.gamma",
                "enc0.block0.norm1.beta",
                "enc0.block0.conv1.weight",
                "enc0.block0.conv1.bias",
                "enc0.block0.norm2.gamma",
                "enc0.block0.norm2.beta",
                "enc0.block0.conv2.weight",
                "enc0.block0.conv2.bias",
            ]
        );
    }
}
