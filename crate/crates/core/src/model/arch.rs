//! Declarative layer lists and per-sample shape inference.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::signal::{EPOCH_STEPS, EPOCH_VALUES, GRID_COLS, GRID_ROWS};
use crate::tensor::{CandidateActivation, PadPlacement, Padding};

pub const LATENT_DIM: usize = 512;
pub const LEAKY_ALPHA: f64 = 0.1;
pub const DROPOUT_RATE: f64 = 0.2;
pub const KERNEL_SIZE: usize = 3;

/// One entry of a layer list. `ConvBlock` expands to
/// convolution → batch norm → leaky ReLU → dropout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    ConvBlock {
        name: String,
        filters: usize,
        stride: [usize; 2],
        padding: Padding,
    },
    /// Linear 3×3 convolution with no normalization.
    Conv {
        name: String,
        filters: usize,
        padding: Padding,
    },
    /// `(T, H, W, C) -> (T, H*W*C)`.
    Flatten,
    Lstm {
        name: String,
        units: usize,
        recurrent_dropout: f64,
        return_sequences: bool,
    },
    Repeat {
        n: usize,
    },
    /// Reshape every time step to `shape`.
    Reshape {
        shape: Vec<usize>,
    },
    Upsample {
        scale: [usize; 2],
    },
    ZeroPad {
        pad: [usize; 2],
        placement: PadPlacement,
    },
    Dense {
        name: String,
        units: usize,
    },
    Sigmoid,
}

/// The multi-task convolutional-recurrent autoencoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    /// `(T, H, W, C)` of one epoch.
    pub input: [usize; 4],
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
    pub classifier: Vec<Layer>,
    pub latent_dim: usize,
    pub leaky_alpha: f64,
    pub dropout: f64,
    pub candidate: CandidateActivation,
}

/// Fully-connected label-consistent autoencoder on the flattened grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslcSpec {
    pub input_dim: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub leaky_alpha: f64,
}

impl Default for SslcSpec {
    fn default() -> Self {
        Self {
            input_dim: EPOCH_VALUES,
            hidden: 500,
            latent_dim: 250,
            leaky_alpha: LEAKY_ALPHA,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Architecture {
    Erpenet(ArchitectureSpec),
    SslcAe(SslcSpec),
}

impl Architecture {
    pub fn erpenet() -> Self {
        Architecture::Erpenet(ArchitectureSpec::default())
    }

    pub fn sslc_ae() -> Self {
        Architecture::SslcAe(SslcSpec::default())
    }

    pub fn latent_dim(&self) -> usize {
        match self {
            Architecture::Erpenet(s) => s.latent_dim,
            Architecture::SslcAe(s) => s.latent_dim,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Erpenet(_) => "erpenet",
            Architecture::SslcAe(_) => "sslc-ae",
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("architecture serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn conv_block(name: &str, filters: usize, stride: usize, padding: Padding) -> Layer {
    Layer::ConvBlock {
        name: name.into(),
        filters,
        stride: [stride, stride],
        padding,
    }
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        use Padding::{Same, Valid};
        let enc_lstm = Layer::Lstm {
            name: "lstm".into(),
            units: LATENT_DIM,
            recurrent_dropout: DROPOUT_RATE,
            return_sequences: false,
        };
        let dec_lstm = Layer::Lstm {
            name: "lstm".into(),
            units: 96,
            recurrent_dropout: 0.0,
            return_sequences: true,
        };
        let pad = Layer::ZeroPad {
            pad: [1, 1],
            placement: PadPlacement::Leading,
        };
        let up = Layer::Upsample { scale: [2, 2] };
        Self {
            input: [EPOCH_STEPS, GRID_ROWS, GRID_COLS, 1],
            encoder: vec![
                conv_block("conv1", 16, 2, Same),
                conv_block("conv2", 8, 1, Same),
                conv_block("conv3", 8, 1, Same),
                conv_block("conv4", 32, 2, Same),
                conv_block("conv5", 16, 1, Same),
                conv_block("conv6", 16, 1, Same),
                Layer::Flatten,
                enc_lstm,
            ],
            decoder: vec![
                Layer::Repeat { n: EPOCH_STEPS },
                dec_lstm,
                Layer::Reshape { shape: vec![2, 3, 16] },
                up.clone(),
                pad.clone(),
                conv_block("conv1", 32, 1, Valid),
                conv_block("conv2", 16, 1, Same),
                conv_block("conv3", 16, 1, Same),
                up,
                pad,
                conv_block("conv4", 16, 1, Valid),
                conv_block("conv5", 8, 1, Same),
                conv_block("conv6", 8, 1, Same),
                Layer::Conv {
                    name: "reconstruct".into(),
                    filters: 1,
                    padding: Same,
                },
            ],
            classifier: vec![
                Layer::Dense {
                    name: "dense".into(),
                    units: 1,
                },
                Layer::Sigmoid,
            ],
            latent_dim: LATENT_DIM,
            leaky_alpha: LEAKY_ALPHA,
            dropout: DROPOUT_RATE,
            candidate: CandidateActivation::Sigmoid,
        }
    }
}

/// Trainable tensor slot implied by a layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// One row of the shape trace: a primitive and its per-sample output shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeRow {
    pub stage: &'static str,
    pub layer: String,
    pub shape: Vec<usize>,
}

fn conv_out(len: usize, stride: usize, padding: Padding, layer: &str) -> Result<usize> {
    match padding {
        Padding::Same => Ok(len.div_ceil(stride)),
        Padding::Valid if len >= KERNEL_SIZE => Ok((len - KERNEL_SIZE) / stride + 1),
        Padding::Valid => Err(Error::Architecture {
            layer: layer.into(),
            reason: format!("valid 3x3 convolution needs at least 3 rows/cols, input has {len}"),
        }),
    }
}

fn arch_err(layer: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Architecture {
        layer: layer.into(),
        reason: reason.into(),
    }
}

impl ArchitectureSpec {
    /// Walks a layer list from `shape`, appending one row per primitive and
    /// the parameter slots it needs.
    fn walk(
        &self,
        stage: &'static str,
        layers: &[Layer],
        mut shape: Vec<usize>,
        rows: &mut Vec<ShapeRow>,
        slots: &mut Vec<ParamSlot>,
    ) -> Result<Vec<usize>> {
        let push = |rows: &mut Vec<ShapeRow>, layer: &str, shape: &[usize]| {
            rows.push(ShapeRow {
                stage,
                layer: layer.to_string(),
                shape: shape.to_vec(),
            })
        };
        let slot = |slots: &mut Vec<ParamSlot>, name: String, shape: Vec<usize>, trainable: bool| {
            slots.push(ParamSlot { name, shape, trainable })
        };
        for layer in layers {
            match layer {
                Layer::ConvBlock {
                    name,
                    filters,
                    stride,
                    padding,
                } => {
                    let full = format!("{stage}.{name}");
                    let [t, h, w, c] = shape[..] else {
                        return Err(arch_err(full, format!("expects (T, H, W, C) input, got {shape:?}")));
                    };
                    if stride[0] == 0 || stride[1] == 0 || *filters == 0 {
                        return Err(arch_err(full, "filters and strides must be positive"));
                    }
                    let ho = conv_out(h, stride[0], *padding, &full)?;
                    let wo = conv_out(w, stride[1], *padding, &full)?;
                    shape = vec![t, ho, wo, *filters];
                    slot(slots, format!("{full}.kernel"), vec![KERNEL_SIZE, KERNEL_SIZE, c, *filters], true);
                    slot(slots, format!("{full}.bias"), vec![*filters], true);
                    let bn = format!("{stage}.{}", name.replace("conv", "bn"));
                    slot(slots, format!("{bn}.gamma"), vec![*filters], true);
                    slot(slots, format!("{bn}.beta"), vec![*filters], true);
                    slot(slots, format!("{bn}.running_mean"), vec![*filters], false);
                    slot(slots, format!("{bn}.running_var"), vec![*filters], false);
                    for prim in ["conv2d", "batch_norm", "leaky_relu", "dropout"] {
                        push(rows, &format!("{full}/{prim}"), &shape);
                    }
                }
                Layer::Conv { name, filters, padding } => {
                    let full = format!("{stage}.{name}");
                    let [t, h, w, c] = shape[..] else {
                        return Err(arch_err(full, format!("expects (T, H, W, C) input, got {shape:?}")));
                    };
                    shape = vec![
                        t,
                        conv_out(h, 1, *padding, &full)?,
                        conv_out(w, 1, *padding, &full)?,
                        *filters,
                    ];
                    slot(slots, format!("{full}.kernel"), vec![KERNEL_SIZE, KERNEL_SIZE, c, *filters], true);
                    slot(slots, format!("{full}.bias"), vec![*filters], true);
                    push(rows, &format!("{full}/conv2d"), &shape);
                }
                Layer::Flatten => {
                    if shape.len() != 4 {
                        return Err(arch_err(format!("{stage}.flatten"), format!("expects rank 4, got {shape:?}")));
                    }
                    shape = vec![shape[0], shape[1..].iter().product()];
                    push(rows, &format!("{stage}.flatten"), &shape);
                }
                Layer::Lstm {
                    name,
                    units,
                    recurrent_dropout,
                    return_sequences,
                } => {
                    let full = format!("{stage}.{name}");
                    let [t, d] = shape[..] else {
                        return Err(arch_err(full, format!("expects (T, D) input, got {shape:?}")));
                    };
                    if !(0.0..1.0).contains(recurrent_dropout) {
                        return Err(arch_err(full, format!("recurrent dropout {recurrent_dropout} outside [0, 1)")));
                    }
                    shape = if *return_sequences { vec![t, *units] } else { vec![*units] };
                    slot(slots, format!("{full}.kernel"), vec![d, 4 * units], true);
                    slot(slots, format!("{full}.recurrent"), vec![*units, 4 * units], true);
                    slot(slots, format!("{full}.bias"), vec![4 * units], true);
                    push(rows, &full, &shape);
                }
                Layer::Repeat { n } => {
                    let [d] = shape[..] else {
                        return Err(arch_err(format!("{stage}.repeat"), format!("expects a vector, got {shape:?}")));
                    };
                    shape = vec![*n, d];
                    push(rows, &format!("{stage}.repeat"), &shape);
                }
                Layer::Reshape { shape: to } => {
                    let t = shape[0];
                    let have: usize = shape[1..].iter().product();
                    if to.iter().product::<usize>() != have {
                        return Err(arch_err(
                            format!("{stage}.reshape"),
                            format!("cannot reshape {:?} per step into {to:?}", &shape[1..]),
                        ));
                    }
                    shape = std::iter::once(t).chain(to.iter().copied()).collect();
                    push(rows, &format!("{stage}.reshape"), &shape);
                }
                Layer::Upsample { scale } => {
                    if shape.len() != 4 {
                        return Err(arch_err(format!("{stage}.upsample"), format!("expects rank 4, got {shape:?}")));
                    }
                    shape[1] *= scale[0];
                    shape[2] *= scale[1];
                    push(rows, &format!("{stage}.upsample"), &shape);
                }
                Layer::ZeroPad { pad, placement } => {
                    if shape.len() != 4 {
                        return Err(arch_err(format!("{stage}.zero_pad"), format!("expects rank 4, got {shape:?}")));
                    }
                    let k = match placement {
                        PadPlacement::Leading => 1,
                        PadPlacement::Symmetric => 2,
                    };
                    shape[1] += k * pad[0];
                    shape[2] += k * pad[1];
                    push(rows, &format!("{stage}.zero_pad"), &shape);
                }
                Layer::Dense { name, units } => {
                    let full = format!("{stage}.{name}");
                    let d = *shape.last().ok_or_else(|| arch_err(&full, "rank-0 input"))?;
                    *shape.last_mut().unwrap() = *units;
                    slot(slots, format!("{full}.kernel"), vec![d, *units], true);
                    slot(slots, format!("{full}.bias"), vec![*units], true);
                    push(rows, &full, &shape);
                }
                Layer::Sigmoid => push(rows, &format!("{stage}.sigmoid"), &shape),
            }
        }
        Ok(shape)
    }

    /// Per-sample output shape of every primitive, plus every parameter
    /// slot. Fails on the first inconsistent layer.
    pub fn plan(&self) -> Result<(Vec<ShapeRow>, Vec<ParamSlot>)> {
        let mut rows = vec![ShapeRow {
            stage: "encoder",
            layer: "encoder.input".into(),
            shape: self.input.to_vec(),
        }];
        let mut slots = Vec::new();
        let latent = self.walk("encoder", &self.encoder, self.input.to_vec(), &mut rows, &mut slots)?;
        if latent != [self.latent_dim] {
            return Err(arch_err("encoder", format!("produces {latent:?}, latent_dim is {}", self.latent_dim)));
        }
        let recon = self.walk("decoder", &self.decoder, latent.clone(), &mut rows, &mut slots)?;
        if recon != self.input {
            return Err(arch_err("decoder", format!("reconstructs {recon:?}, input is {:?}", self.input)));
        }
        let out = self.walk("classifier", &self.classifier, latent, &mut rows, &mut slots)?;
        if out != [1] {
            return Err(arch_err("classifier", format!("produces {out:?}, expected a single probability")));
        }
        Ok((rows, slots))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(arch_err("spec", format!("dropout {} outside [0, 1)", self.dropout)));
        }
        self.plan().map(|_| ())
    }
}

impl SslcSpec {
    pub fn slots(&self) -> Vec<ParamSlot> {
        let dims = [
            ("encoder.dense1", self.input_dim, self.hidden),
            ("encoder.dense2", self.hidden, self.latent_dim),
            ("decoder.dense1", self.latent_dim, self.hidden),
            ("decoder.dense2", self.hidden, self.input_dim),
            ("classifier.dense", self.latent_dim, 1),
        ];
        dims.iter()
            .flat_map(|&(name, i, o)| {
                [
                    ParamSlot {
                        name: format!("{name}.kernel"),
                        shape: vec![i, o],
                        trainable: true,
                    },
                    ParamSlot {
                        name: format!("{name}.bias"),
                        shape: vec![o],
                        trainable: true,
                    },
                ]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim != EPOCH_VALUES {
            return Err(arch_err("sslc", format!("input_dim {} must equal {EPOCH_VALUES}", self.input_dim)));
        }
        if self.hidden == 0 || self.latent_dim == 0 {
            return Err(arch_err("sslc", "layer widths must be positive"));
        }
        Ok(())
    }
}

impl Architecture {
    pub fn slots(&self) -> Result<Vec<ParamSlot>> {
        match self {
            Architecture::Erpenet(s) => s.plan().map(|(_, slots)| slots),
            Architecture::SslcAe(s) => s.validate().map(|_| s.slots()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_plans() {
        let (rows, _) = ArchitectureSpec::default().plan().unwrap();
        let find = |name: &str| rows.iter().find(|r| r.layer == name).unwrap().shape.clone();
        assert_eq!(find("encoder.conv1/conv2d"), [100, 3, 5, 16]);
        assert_eq!(find("encoder.flatten"), [100, 96]);
        assert_eq!(find("encoder.lstm"), [512]);
        assert_eq!(find("decoder.conv1/conv2d"), [100, 3, 5, 32]);
        assert_eq!(find("decoder.reconstruct/conv2d"), [100, 5, 9, 1]);
        assert_eq!(find("classifier.sigmoid"), [1]);
    }

    #[test]
    fn lstm_slot_sizes() {
        let (_, slots) = ArchitectureSpec::default().plan().unwrap();
        let n = |name: &str| -> usize {
            slots
                .iter()
                .filter(|s| s.name.starts_with(name))
                .map(|s| s.shape.iter().product::<usize>())
                .sum()
        };
        assert_eq!(n("encoder.lstm."), 4 * (512 * (96 + 512) + 512));
        assert_eq!(n("decoder.lstm."), 4 * (96 * (512 + 96) + 96));
        assert_eq!(n("classifier."), 513);
    }

    #[test]
    fn inconsistent_spec_names_the_layer() {
        let mut spec = ArchitectureSpec::default();
        spec.decoder[2] = Layer::Reshape { shape: vec![2, 3, 15] };
        match spec.plan() {
            Err(Error::Architecture { layer, .. }) => assert_eq!(layer, "decoder.reshape"),
            other => panic!("unexpected {other:?}"),
        }
        let mut spec = ArchitectureSpec::default();
        spec.decoder.remove(4);
        match spec.plan() {
            Err(Error::Architecture { layer, .. }) => assert_eq!(layer, "decoder"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fingerprints_differ_between_families() {
        let a = Architecture::erpenet().fingerprint();
        assert_eq!(a.len(), 64);
        assert_eq!(a, Architecture::erpenet().fingerprint());
        assert_ne!(a, Architecture::sslc_ae().fingerprint());
    }
}
