//! Trainable convolutional feature encoder.
//!
//! A short stack of 3x3 convolutions (zero same-padding, stride 1 or 2,
//! rectifier between layers) turns a filter-bank stack into the feature map
//! the attention reconstructor works on. The layer list is deliberately
//! small; the interface stays the same if a deeper encoder is dropped in.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::tape::conv_forward;
use crate::diffcore::{ConvSpec, PadMode, Real, Tape, Tensor, VarId};
use crate::error::{Error, Result};
use crate::gabor::GaborStack;
use crate::voldata::{oseg, FeatureMap};

/// One convolution layer: `out_channels` filters of `kernel x kernel`,
/// stride 1 or 2.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderConfig {
    pub layers: Vec<EncoderLayer>,
    /// Channel count the first layer consumes (filter-bank channels, or 1
    /// when the bottleneck is disabled).
    pub in_channels: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::validation("encoder needs at least one layer"));
        }
        if self.in_channels < 1 {
            return Err(Error::validation("encoder input channels must be >= 1"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.out_channels < 1 {
                return Err(Error::validation(format!(
                    "encoder layer {i}: out channels must be >= 1"
                )));
            }
            if l.kernel % 2 == 0 || l.kernel == 0 {
                return Err(Error::validation(format!(
                    "encoder layer {i}: kernel must be odd, got {}",
                    l.kernel
                )));
            }
            if l.stride != 1 && l.stride != 2 {
                return Err(Error::validation(format!(
                    "encoder layer {i}: stride must be 1 or 2, got {}",
                    l.stride
                )));
            }
        }
        Ok(())
    }

    /// Feature channels C produced by the last layer.
    pub fn out_channels(&self) -> usize {
        self.layers.last().map(|l| l.out_channels).unwrap_or(0)
    }

    /// Total downsampling factor r: the product of layer strides.
    pub fn feature_stride(&self) -> usize {
        self.layers.iter().map(|l| l.stride).product()
    }

    /// Feature-grid dims for a slice of the given size, following each
    /// layer's ceil-division output rule.
    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        let (mut h, mut w) = (height, width);
        for l in &self.layers {
            h = h.div_ceil(l.stride);
            w = w.div_ceil(l.stride);
        }
        (h, w)
    }
}

/// Parses a layer list like `16:1,16:2,16:1` (`out_channels:stride`, kernel
/// 3) or `8:1:5` with an explicit kernel size.
pub fn layers_from_string(s: &str) -> Result<Vec<EncoderLayer>> {
    let mut layers = Vec::new();
    for (i, part) in s.split(',').enumerate() {
        let fields: Vec<&str> = part.trim().split(':').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(Error::validation(format!(
                "encoder layer {i}: expected `out:stride[:kernel]`, got `{part}`"
            )));
        }
        let parse = |v: &str, what: &str| -> Result<usize> {
            v.parse().map_err(|_| {
                Error::validation(format!("encoder layer {i}: bad {what} `{v}`"))
            })
        };
        layers.push(EncoderLayer {
            out_channels: parse(fields[0], "channel count")?,
            stride: parse(fields[1], "stride")?,
            kernel: if fields.len() == 3 {
                parse(fields[2], "kernel")?
            } else {
                3
            },
        });
    }
    Ok(layers)
}

pub fn layers_to_string(layers: &[EncoderLayer]) -> String {
    layers
        .iter()
        .map(|l| {
            if l.kernel == 3 {
                format!("{}:{}", l.out_channels, l.stride)
            } else {
                format!("{}:{}:{}", l.out_channels, l.stride, l.kernel)
            }
        })
        .collect::<Vec<_>>()
        .join(",")
}

/// The trainable parameters: one weight tensor `[out, k, k, in]` and one
/// bias vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub weights: Vec<Tensor<f32>>,
    pub biases: Vec<Tensor<f32>>,
}

/// Draws fresh parameters: weights from a fan-in-scaled uniform
/// distribution, biases zero. The same seed always yields bitwise-identical
/// parameters.
pub fn init_encoder(config: &EncoderConfig) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut c_in = config.in_channels;
    for layer in &config.layers {
        let fan_in = layer.kernel * layer.kernel * c_in;
        let bound = (3.0 / fan_in as f64).sqrt();
        let n = layer.out_channels * layer.kernel * layer.kernel * c_in;
        let data: Vec<f32> = (0..n)
            .map(|_| (bound * (2.0 * rng.random::<f64>() - 1.0)) as f32)
            .collect();
        weights.push(Tensor::new(
            vec![layer.out_channels, layer.kernel, layer.kernel, c_in],
            data,
        )?);
        biases.push(Tensor::zeros(vec![layer.out_channels]));
        c_in = layer.out_channels;
    }
    Ok(EncoderParams {
        config: config.clone(),
        weights,
        biases,
    })
}

impl EncoderParams {
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.weights.len() != self.config.layers.len()
            || self.biases.len() != self.config.layers.len()
        {
            return Err(Error::shape(
                "encoder params",
                format!("{} layers", self.config.layers.len()),
                format!("{} weights, {} biases", self.weights.len(), self.biases.len()),
            ));
        }
        let mut c_in = self.config.in_channels;
        for (i, layer) in self.config.layers.iter().enumerate() {
            let want = vec![layer.out_channels, layer.kernel, layer.kernel, c_in];
            if self.weights[i].dims != want {
                return Err(Error::shape(
                    format!("encoder layer {i} weight"),
                    format!("{want:?}"),
                    format!("{:?}", self.weights[i].dims),
                ));
            }
            if self.biases[i].dims != vec![layer.out_channels] {
                return Err(Error::shape(
                    format!("encoder layer {i} bias"),
                    layer.out_channels,
                    format!("{:?}", self.biases[i].dims),
                ));
            }
            c_in = layer.out_channels;
        }
        Ok(())
    }

    /// Flat parameter count over all layers.
    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|t| t.len()).sum::<usize>()
            + self.biases.iter().map(|t| t.len()).sum::<usize>()
    }

    /// Registers every weight and bias as a trainable leaf on `tape`,
    /// returning per-layer `(weight, bias)` handles for
    /// [`encode_on_tape`].
    pub fn leaves_on_tape<R: Real>(&self, tape: &mut Tape<R>) -> Vec<(VarId, VarId)> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| (tape.leaf(w.cast(), true), tape.leaf(b.cast(), true)))
            .collect()
    }
}

/// Production forward pass: filter-bank stack to feature map, f32, no tape.
pub fn encode(stack: &GaborStack, params: &EncoderParams) -> Result<FeatureMap> {
    params.validate()?;
    if stack.channels != params.config.in_channels {
        return Err(Error::shape(
            "encoder input channels",
            params.config.in_channels,
            stack.channels,
        ));
    }
    let (mut h, mut w, mut c) = (stack.height, stack.width, stack.channels);
    let mut data = stack.data.clone();
    let last = params.config.layers.len() - 1;
    for (i, layer) in params.config.layers.iter().enumerate() {
        data = conv_forward(
            &data,
            &params.weights[i].data,
            Some(&params.biases[i].data),
            (h, w, c),
            (layer.out_channels, layer.kernel),
            ConvSpec {
                stride: layer.stride,
                pad: PadMode::Zero,
            },
        );
        h = h.div_ceil(layer.stride);
        w = w.div_ceil(layer.stride);
        c = layer.out_channels;
        if i != last {
            for v in &mut data {
                *v = v.max(0.0);
            }
        }
    }
    FeatureMap::new(h, w, c, params.config.feature_stride(), data)
}

/// Training forward pass: same network, recorded on a tape. `input` must be
/// an `[h, w, in_channels]` node; `layer_params` comes from
/// [`EncoderParams::leaves_on_tape`] (or constants for frozen evaluation).
pub fn encode_on_tape<R: Real>(
    tape: &mut Tape<R>,
    input: VarId,
    layer_params: &[(VarId, VarId)],
    config: &EncoderConfig,
) -> Result<VarId> {
    if layer_params.len() != config.layers.len() {
        return Err(Error::shape(
            "encoder tape params",
            config.layers.len(),
            layer_params.len(),
        ));
    }
    let mut x = input;
    let last = config.layers.len() - 1;
    for (i, layer) in config.layers.iter().enumerate() {
        let (w, b) = layer_params[i];
        x = tape.conv2d(
            x,
            w,
            Some(b),
            ConvSpec {
                stride: layer.stride,
                pad: PadMode::Zero,
            },
        )?;
        if i != last {
            x = tape.relu(x)?;
        }
    }
    Ok(x)
}

/// Writes the parameters as one OSEG tensor per entry plus `params.txt`
/// (name to file name) and `meta.txt` (the generating config) in `dir`.
pub fn save_checkpoint(params: &EncoderParams, dir: &Path) -> Result<()> {
    params.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = String::new();
    for (i, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let wfile = format!("layer{i}_weight.oseg");
        let bfile = format!("layer{i}_bias.oseg");
        oseg::write(
            &dir.join(&wfile),
            &oseg::OsegTensor::new(w.dims.clone(), oseg::Payload::F32(w.data.clone()))?,
        )?;
        // rank-1 biases ride in a 1x1xN tensor to fit the container format
        oseg::write(
            &dir.join(&bfile),
            &oseg::OsegTensor::new(vec![1, 1, b.len()], oseg::Payload::F32(b.data.clone()))?,
        )?;
        index.push_str(&format!("layer{i}.weight {wfile}\n"));
        index.push_str(&format!("layer{i}.bias {bfile}\n"));
    }
    let index_path = dir.join("params.txt");
    std::fs::write(&index_path, index).map_err(|e| Error::io(&index_path, e))?;
    let meta = format!(
        "encoder.layers={}\nencoder.in_channels={}\nencoder.seed={}\n",
        layers_to_string(&params.config.layers),
        params.config.in_channels,
        params.config.seed,
    );
    let meta_path = dir.join("meta.txt");
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<EncoderParams> {
    let meta_path = dir.join("meta.txt");
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut layers = None;
    let mut in_channels = None;
    let mut seed = None;
    for line in meta.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::validation(format!("{}: bad meta line `{line}`", meta_path.display()))
        })?;
        match key {
            "encoder.layers" => layers = Some(layers_from_string(value)?),
            "encoder.in_channels" => {
                in_channels = Some(value.parse().map_err(|_| {
                    Error::validation(format!("bad encoder.in_channels `{value}`"))
                })?)
            }
            "encoder.seed" => {
                seed = Some(
                    value
                        .parse()
                        .map_err(|_| Error::validation(format!("bad encoder.seed `{value}`")))?,
                )
            }
            other => {
                return Err(Error::validation(format!(
                    "{}: unknown meta key `{other}`",
                    meta_path.display()
                )))
            }
        }
    }
    let config = EncoderConfig {
        layers: layers.ok_or_else(|| Error::validation("checkpoint meta missing encoder.layers"))?,
        in_channels: in_channels
            .ok_or_else(|| Error::validation("checkpoint meta missing encoder.in_channels"))?,
        seed: seed.ok_or_else(|| Error::validation("checkpoint meta missing encoder.seed"))?,
    };
    let index_path = dir.join("params.txt");
    let index = std::fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
    let mut files = std::collections::BTreeMap::new();
    for line in index.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (name, file) = line.split_once(' ').ok_or_else(|| {
            Error::validation(format!("{}: bad index line `{line}`", index_path.display()))
        })?;
        files.insert(name.to_string(), file.to_string());
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut c_in = config.in_channels;
    for (i, layer) in config.layers.iter().enumerate() {
        let load = |name: &str| -> Result<Tensor<f32>> {
            let file = files.get(name).ok_or_else(|| {
                Error::validation(format!("checkpoint index missing `{name}`"))
            })?;
            let t = oseg::read(&dir.join(file))?;
            let data = match t.payload {
                oseg::Payload::F32(v) => v,
                oseg::Payload::U8(_) => {
                    return Err(Error::validation(format!("`{name}` must be f32")))
                }
            };
            Tensor::new(t.dims, data)
        };
        let w = load(&format!("layer{i}.weight"))?;
        let b = load(&format!("layer{i}.bias"))?;
        if b.dims.len() != 3 || b.dims[0] != 1 || b.dims[1] != 1 {
            return Err(Error::shape(
                format!("layer {i} bias container"),
                "[1, 1, n]",
                format!("{:?}", b.dims),
            ));
        }
        weights.push(w);
        biases.push(Tensor::new(vec![layer.out_channels], b.data)?);
        c_in = layer.out_channels;
    }
    let _ = c_in;
    let params = EncoderParams {
        config,
        weights,
        biases,
    };
    params.validate()?;
    Ok(params)
}
