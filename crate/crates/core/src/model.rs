//! Declarative CNN layout, the flat genome it packs to, Glorot
//! initialization and the forward pass.
//!
//! Genome layout, fixed for checkpoint portability: every conv layer in
//! network order (kernels `[out, in, row, col]`, then biases), then every
//! affine layer in order including the classifier (weights row-major
//! `[out, in]`, then biases).

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{
    conv2d_forward, conv_output_size, linear_forward, relu_in_place, Conv2dParams, LinearParams, Tensor,
};

pub const KERNEL_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvLayerSpec {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayerSpec {
    pub fn new(out_channels: usize, stride: usize, padding: usize) -> Self {
        ConvLayerSpec {
            out_channels,
            kernel: KERNEL_SIZE,
            stride,
            padding,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    /// `[channels, height, width]`.
    pub input_shape: [usize; 3],
    pub conv_layers: Vec<ConvLayerSpec>,
    pub fc_sizes: Vec<usize>,
    pub num_classes: usize,
}

impl Default for ArchitectureSpec {
    /// Four 32-channel stride-2 convolutions, FC 512/256/128, four classes,
    /// on 1×32×32 grayscale input.
    fn default() -> Self {
        ArchitectureSpec {
            input_shape: [1, 32, 32],
            conv_layers: vec![ConvLayerSpec::new(32, 2, 1); 4],
            fc_sizes: vec![512, 256, 128],
            num_classes: 4,
        }
    }
}

/// Shape bookkeeping for one parameterized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Conv {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
        padding: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        match *self {
            LayerShape::Conv {
                in_channels,
                out_channels,
                ..
            } => KERNEL_SIZE * KERNEL_SIZE * in_channels * out_channels,
            LayerShape::Linear {
                in_features,
                out_features,
            } => in_features * out_features,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            LayerShape::Conv { out_channels, .. } => out_channels,
            LayerShape::Linear { out_features, .. } => out_features,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    /// `(fan_in, fan_out)` for Glorot bounds.
    pub fn fans(&self) -> (usize, usize) {
        match *self {
            LayerShape::Conv {
                in_channels,
                out_channels,
                ..
            } => (
                KERNEL_SIZE * KERNEL_SIZE * in_channels,
                KERNEL_SIZE * KERNEL_SIZE * out_channels,
            ),
            LayerShape::Linear {
                in_features,
                out_features,
            } => (in_features, out_features),
        }
    }

    pub fn glorot_bound(&self) -> f64 {
        let (fan_in, fan_out) = self.fans();
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

impl ArchitectureSpec {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::InvalidArchitecture(format!(
                "input_shape {:?} has a zero dimension",
                self.input_shape
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        let (mut h, mut w) = (h, w);
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if layer.kernel != KERNEL_SIZE {
                return Err(Error::InvalidArchitecture(format!(
                    "conv_layers[{i}].kernel must be {KERNEL_SIZE}, got {}",
                    layer.kernel
                )));
            }
            if layer.out_channels == 0 {
                return Err(Error::InvalidArchitecture(format!(
                    "conv_layers[{i}].out_channels must be >= 1"
                )));
            }
            if layer.stride == 0 {
                return Err(Error::InvalidArchitecture(format!(
                    "conv_layers[{i}].stride must be >= 1"
                )));
            }
            match (
                conv_output_size(h, layer.kernel, layer.stride, layer.padding),
                conv_output_size(w, layer.kernel, layer.stride, layer.padding),
            ) {
                (Some(nh), Some(nw)) => {
                    h = nh;
                    w = nw;
                }
                _ => {
                    return Err(Error::InvalidArchitecture(format!(
                        "conv_layers[{i}] output would be empty for {h}x{w} input"
                    )))
                }
            }
        }
        if let Some(i) = self.fc_sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArchitecture(format!("fc_sizes[{i}] must be >= 1")));
        }
        Ok(())
    }

    /// `[channels, height, width]` after the last convolution (the input
    /// shape when there are none). Assumes a valid spec.
    pub fn conv_output_shape(&self) -> [usize; 3] {
        let [mut c, mut h, mut w] = self.input_shape;
        for layer in &self.conv_layers {
            h = conv_output_size(h, layer.kernel, layer.stride, layer.padding).unwrap_or(0);
            w = conv_output_size(w, layer.kernel, layer.stride, layer.padding).unwrap_or(0);
            c = layer.out_channels;
        }
        [c, h, w]
    }

    /// Parameterized layers in genome order. Assumes a valid spec.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut shapes = Vec::with_capacity(self.conv_layers.len() + self.fc_sizes.len() + 1);
        let mut channels = self.input_shape[0];
        for layer in &self.conv_layers {
            shapes.push(LayerShape::Conv {
                in_channels: channels,
                out_channels: layer.out_channels,
                stride: layer.stride,
                padding: layer.padding,
            });
            channels = layer.out_channels;
        }
        let mut features: usize = self.conv_output_shape().iter().product();
        for &size in self.fc_sizes.iter().chain(std::iter::once(&self.num_classes)) {
            shapes.push(LayerShape::Linear {
                in_features: features,
                out_features: size,
            });
            features = size;
        }
        shapes
    }

    /// Content hash of the canonical JSON encoding, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

/// Total number of trainable parameters of `spec`.
pub fn param_count(spec: &ArchitectureSpec) -> Result<usize> {
    spec.validate()?;
    Ok(spec.layer_shapes().iter().map(LayerShape::param_count).sum())
}

/// The flat parameter vector of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Genome {
    values: Vec<f32>,
    spec_fingerprint: String,
}

impl Genome {
    pub fn new(spec: &ArchitectureSpec, values: Vec<f32>) -> Result<Self> {
        let expected = param_count(spec)?;
        if values.len() != expected {
            return Err(Error::GenomeLength {
                expected,
                found: values.len(),
            });
        }
        Ok(Genome {
            values,
            spec_fingerprint: spec.fingerprint(),
        })
    }

    pub fn zeros(spec: &ArchitectureSpec) -> Result<Self> {
        let n = param_count(spec)?;
        Genome::new(spec, vec![0.0; n])
    }

    pub(crate) fn from_parts(values: Vec<f32>, spec_fingerprint: String) -> Self {
        Genome {
            values,
            spec_fingerprint,
        }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spec_fingerprint(&self) -> &str {
        &self.spec_fingerprint
    }

    /// Copy with the same fingerprint and new values of equal length.
    pub fn with_values(&self, values: Vec<f32>) -> Result<Genome> {
        if values.len() != self.values.len() {
            return Err(Error::GenomeLength {
                expected: self.values.len(),
                found: values.len(),
            });
        }
        Ok(Genome::from_parts(values, self.spec_fingerprint.clone()))
    }

    /// Bitwise equality of the weight vectors.
    pub fn bit_eq(&self, other: &Genome) -> bool {
        self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
pub fn glorot_init(spec: &ArchitectureSpec, seed: u64) -> Result<Genome> {
    spec.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut values = Vec::with_capacity(param_count(spec)?);
    for shape in spec.layer_shapes() {
        let bound = shape.glorot_bound();
        values.extend((0..shape.weight_count()).map(|_| rng.uniform(-bound, bound) as f32));
        values.extend(std::iter::repeat(0.0f32).take(shape.bias_count()));
    }
    Genome::new(spec, values)
}

/// A genome unpacked into per-layer tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    spec: ArchitectureSpec,
    convs: Vec<Conv2dParams>,
    hidden: Vec<LinearParams>,
    classifier: LinearParams,
}

impl CnnModel {
    pub fn new(
        spec: ArchitectureSpec,
        convs: Vec<Conv2dParams>,
        hidden: Vec<LinearParams>,
        classifier: LinearParams,
    ) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        let n_conv = spec.conv_layers.len();
        if convs.len() != n_conv || hidden.len() != spec.fc_sizes.len() {
            return Err(Error::shape(
                "model layer count",
                format!("{} conv + {} fc", n_conv, spec.fc_sizes.len()),
                format!("{} conv + {} fc", convs.len(), hidden.len()),
            ));
        }
        for (i, (conv, shape)) in convs.iter().zip(&shapes).enumerate() {
            if let LayerShape::Conv {
                in_channels,
                out_channels,
                stride,
                padding,
            } = *shape
            {
                let found = (conv.in_channels(), conv.out_channels(), conv.kernel_size(), conv.stride(), conv.padding());
                let expected = (in_channels, out_channels, (KERNEL_SIZE, KERNEL_SIZE), stride, padding);
                if found != expected {
                    return Err(Error::shape(format!("conv layer {i}"), format!("{expected:?}"), format!("{found:?}")));
                }
            }
        }
        for (i, (lin, shape)) in hidden.iter().chain(std::iter::once(&classifier)).zip(&shapes[n_conv..]).enumerate() {
            if let LayerShape::Linear {
                in_features,
                out_features,
            } = *shape
            {
                if (lin.in_features(), lin.out_features()) != (in_features, out_features) {
                    return Err(Error::shape(
                        format!("affine layer {i}"),
                        format!("{out_features}x{in_features}"),
                        format!("{}x{}", lin.out_features(), lin.in_features()),
                    ));
                }
            }
        }
        Ok(CnnModel {
            spec,
            convs,
            hidden,
            classifier,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn convs(&self) -> &[Conv2dParams] {
        &self.convs
    }

    pub fn hidden(&self) -> &[LinearParams] {
        &self.hidden
    }

    pub fn classifier(&self) -> &LinearParams {
        &self.classifier
    }

    /// Raw class scores; no output normalization.
    pub fn forward(&self, image: &Tensor) -> Result<Tensor> {
        let expected = self.spec.input_shape;
        if image.shape() != expected {
            return Err(Error::shape("input image", format!("{expected:?}"), format!("{:?}", image.shape())));
        }
        let mut x = image.clone();
        for conv in &self.convs {
            x = conv2d_forward(&x, conv)?;
            relu_in_place(&mut x);
        }
        for fc in &self.hidden {
            x = linear_forward(&x, fc)?;
            relu_in_place(&mut x);
        }
        linear_forward(&x, &self.classifier)
    }
}

/// Flattens a model into its genome in the fixed layout order.
pub fn pack(model: &CnnModel) -> Genome {
    let mut values = Vec::new();
    for conv in &model.convs {
        values.extend_from_slice(conv.kernels().data());
        values.extend_from_slice(conv.biases().data());
    }
    for fc in model.hidden.iter().chain(std::iter::once(&model.classifier)) {
        values.extend_from_slice(fc.weights().data());
        values.extend_from_slice(fc.biases().data());
    }
    Genome::from_parts(values, model.spec.fingerprint())
}

pub fn unpack(genome: &Genome, spec: &ArchitectureSpec) -> Result<CnnModel> {
    unpack_values(genome.values(), spec)
}

pub(crate) fn unpack_values(values: &[f32], spec: &ArchitectureSpec) -> Result<CnnModel> {
    let expected = param_count(spec)?;
    if values.len() != expected {
        return Err(Error::GenomeLength {
            expected,
            found: values.len(),
        });
    }
    let mut rest = values;
    let mut take = |n: usize| {
        let (head, tail) = rest.split_at(n);
        rest = tail;
        head.to_vec()
    };
    let mut convs = Vec::new();
    let mut linears = Vec::new();
    for shape in spec.layer_shapes() {
        match shape {
            LayerShape::Conv {
                in_channels,
                out_channels,
                stride,
                padding,
            } => {
                let k = Tensor::new(
                    vec![out_channels, in_channels, KERNEL_SIZE, KERNEL_SIZE],
                    take(shape.weight_count()),
                )?;
                let b = Tensor::vector(take(out_channels))?;
                convs.push(Conv2dParams::new(k, b, stride, padding)?);
            }
            LayerShape::Linear {
                in_features,
                out_features,
            } => {
                let w = Tensor::new(vec![out_features, in_features], take(shape.weight_count()))?;
                let b = Tensor::vector(take(out_features))?;
                linears.push(LinearParams::new(w, b)?);
            }
        }
    }
    let classifier = linears.pop().expect("classifier layer always present");
    Ok(CnnModel {
        spec: spec.clone(),
        convs,
        hidden: linears,
        classifier,
    })
}

/// Scores of `image` under `genome`.
pub fn forward(genome: &Genome, spec: &ArchitectureSpec, image: &Tensor) -> Result<Tensor> {
    unpack(genome, spec)?.forward(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ArchitectureSpec {
        ArchitectureSpec {
            input_shape: [1, 8, 8],
            conv_layers: vec![ConvLayerSpec::new(32, 2, 1)],
            fc_sizes: vec![16],
            num_classes: 4,
        }
    }

    #[test]
    fn param_count_closed_forms() {
        assert_eq!(param_count(&tiny_spec()).unwrap(), 8596);
        let flat = ArchitectureSpec {
            input_shape: [1, 5, 7],
            conv_layers: vec![],
            fc_sizes: vec![],
            num_classes: 3,
        };
        assert_eq!(param_count(&flat).unwrap(), 35 * 3 + 3);
        assert_eq!(param_count(&ArchitectureSpec::default()).unwrap(), 258_852);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let mut s = tiny_spec();
        s.num_classes = 1;
        assert!(s.validate().is_err());
        let mut s = tiny_spec();
        s.conv_layers = vec![ConvLayerSpec::new(4, 1, 0); 4];
        // 8 -> 6 -> 4 -> 2 -> 0
        assert!(s.validate().is_err());
        let mut s = tiny_spec();
        s.conv_layers[0].kernel = 5;
        assert!(s.validate().is_err());
        let mut s = tiny_spec();
        s.fc_sizes = vec![0];
        assert!(s.validate().is_err());
    }

    #[test]
    fn glorot_is_deterministic_with_zero_biases() {
        let spec = tiny_spec();
        let a = glorot_init(&spec, 11).unwrap();
        let b = glorot_init(&spec, 11).unwrap();
        assert!(a.bit_eq(&b));
        assert!(!a.bit_eq(&glorot_init(&spec, 12).unwrap()));
        let model = unpack(&a, &spec).unwrap();
        for conv in model.convs() {
            assert!(conv.biases().data().iter().all(|&b| b == 0.0));
        }
        for fc in model.hidden().iter().chain([model.classifier()]) {
            assert!(fc.biases().data().iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn glorot_bound_for_512_to_256() {
        let shape = LayerShape::Linear {
            in_features: 512,
            out_features: 256,
        };
        assert!((shape.glorot_bound() - 0.088388).abs() < 1e-6);
    }

    #[test]
    fn default_layout_starts_with_conv1() {
        let spec = ArchitectureSpec::default();
        let g = glorot_init(&spec, 5).unwrap();
        let model = unpack(&g, &spec).unwrap();
        assert_eq!(&g.values()[..288], model.convs()[0].kernels().data());
        assert_eq!(&g.values()[288..320], model.convs()[0].biases().data());
        assert_eq!(model.convs()[0].kernels().shape(), &[32, 1, 3, 3]);
    }

    #[test]
    fn zero_genome_scores_zero() {
        let spec = tiny_spec();
        let g = Genome::zeros(&spec).unwrap();
        let img = Tensor::new(vec![1, 8, 8], (0..64).map(|i| i as f32 / 64.0).collect()).unwrap();
        assert_eq!(forward(&g, &spec, &img).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn forward_rejects_wrong_image_shape() {
        let spec = tiny_spec();
        let g = Genome::zeros(&spec).unwrap();
        let err = forward(&g, &spec, &Tensor::zeros(vec![1, 4, 4]).unwrap()).unwrap_err();
        assert!(err.to_string().contains("[1, 8, 8]"), "{err}");
        assert!(matches!(
            unpack(&Genome::from_parts(vec![0.0; 3], String::new()), &spec),
            Err(Error::GenomeLength { .. })
        ));
    }

    #[test]
    fn spec_json_field_names() {
        let json = serde_json::to_value(tiny_spec()).unwrap();
        let obj = json.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["conv_layers", "fc_sizes", "input_shape", "num_classes"]);
        let back: ArchitectureSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, tiny_spec());
        assert!(serde_json::from_str::<ArchitectureSpec>(
            r#"{"input_shape":[1,8,8],"conv_layers":[],"fc_sizes":[],"num_classes":2,"extra":1}"#
        )
        .is_err());
    }
}
