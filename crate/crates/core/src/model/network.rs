use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{Architecture, ArchitectureSpec, Layer, ShapeRow};
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::signal::{GridEpoch, EPOCH_VALUES};
use crate::tensor::init::xavier_init;
use crate::tensor::{BatchNormStats, Gate, Graph, LstmOptions, Mode, Scalar, Tensor, Var};

/// Which parameters receive gradients.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    #[default]
    All,
    EncoderAndClassifier,
}

impl TrainableScope {
    pub fn includes(self, name: &str) -> bool {
        match self {
            TrainableScope::All => true,
            TrainableScope::EncoderAndClassifier => !name.starts_with("decoder."),
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub mode: Mode,
    /// `None` builds every weight as a constant.
    pub scope: Option<TrainableScope>,
    /// Run the decoder as well as the classifier.
    pub reconstruct: bool,
    /// Record the per-sample output shape of every primitive.
    pub trace: bool,
}

/// Handles produced by one forward pass.
pub struct Forward<S> {
    /// `[B, latent]`.
    pub latent: Var,
    /// `[B]` attended probabilities.
    pub prob: Var,
    /// `[B, 100, 5, 9, 1]` when requested.
    pub recon: Option<Var>,
    /// Weight variables that require gradients, by name.
    pub params: Vec<(String, Var)>,
    /// Batch statistics of every batch-norm layer in train mode, keyed by
    /// the layer prefix (`encoder.bn1`).
    pub bn_stats: Vec<(String, BatchNormStats<S>)>,
    pub trace: Vec<ShapeRow>,
}

/// Multi-task autoencoder: encoder, decoder and latent classifier.
#[derive(Clone, Debug)]
pub struct Network<S = f32> {
    arch: Architecture,
    weights: ModelWeights<S>,
}

struct Pass<'a, S: Scalar> {
    net: &'a Network<S>,
    opts: ForwardOptions,
    rng: &'a mut dyn RngCore,
    params: Vec<(String, Var)>,
    bn_stats: Vec<(String, BatchNormStats<S>)>,
    trace: Vec<ShapeRow>,
}

impl<S: Scalar> Pass<'_, S> {
    fn weight(&mut self, g: &mut Graph<S>, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let t = self.net.weights.get(name)?.clone();
        let grad = self.opts.scope.is_some_and(|s| s.includes(name))
            && self.net.weights.entry(name).is_some_and(|e| e.trainable);
        if grad {
            let v = g.param(t);
            self.params.push((name.to_string(), v));
            Ok(v)
        } else {
            Ok(g.input(t))
        }
    }

    fn record(&mut self, g: &Graph<S>, stage: &'static str, layer: String, v: Var) {
        if self.opts.trace {
            self.trace.push(ShapeRow {
                stage,
                layer,
                shape: g.shape(v)[1..].to_vec(),
            });
        }
    }

    fn layers(&mut self, g: &mut Graph<S>, spec: &ArchitectureSpec, stage: &'static str, layers: &[Layer], mut x: Var) -> Result<Var> {
        let alpha = S::lit(spec.leaky_alpha);
        let mode = self.opts.mode;
        for layer in layers {
            match layer {
                Layer::ConvBlock {
                    name,
                    stride,
                    padding,
                    ..
                } => {
                    let full = format!("{stage}.{name}");
                    let bn = format!("{stage}.{}", name.replace("conv", "bn"));
                    let k = self.weight(g, &format!("{full}.kernel"))?;
                    let b = self.weight(g, &format!("{full}.bias"))?;
                    x = g.conv2d(x, k, b, (stride[0], stride[1]), *padding)?;
                    self.record(g, stage, format!("{full}/conv2d"), x);
                    let gamma = self.weight(g, &format!("{bn}.gamma"))?;
                    let beta = self.weight(g, &format!("{bn}.beta"))?;
                    let rm = self.net.weights.get(&format!("{bn}.running_mean"))?;
                    let rv = self.net.weights.get(&format!("{bn}.running_var"))?;
                    let (y, stats) = g.batch_norm(x, gamma, beta, rm, rv, mode)?;
                    if let Some(stats) = stats {
                        self.bn_stats.push((bn, stats));
                    }
                    x = y;
                    self.record(g, stage, format!("{full}/batch_norm"), x);
                    x = g.leaky_relu(x, alpha);
                    self.record(g, stage, format!("{full}/leaky_relu"), x);
                    x = g.dropout(x, spec.dropout, &mut *self.rng, mode)?;
                    self.record(g, stage, format!("{full}/dropout"), x);
                }
                Layer::Conv { name, padding, .. } => {
                    let full = format!("{stage}.{name}");
                    let k = self.weight(g, &format!("{full}.kernel"))?;
                    let b = self.weight(g, &format!("{full}.bias"))?;
                    x = g.conv2d(x, k, b, (1, 1), *padding)?;
                    self.record(g, stage, format!("{full}/conv2d"), x);
                }
                Layer::Flatten => {
                    let s = g.shape(x).to_vec();
                    x = g.reshape(x, vec![s[0], s[1], s[2..].iter().product()])?;
                    self.record(g, stage, format!("{stage}.flatten"), x);
                }
                Layer::Lstm {
                    name,
                    recurrent_dropout,
                    return_sequences,
                    ..
                } => {
                    let full = format!("{stage}.{name}");
                    let k = self.weight(g, &format!("{full}.kernel"))?;
                    let r = self.weight(g, &format!("{full}.recurrent"))?;
                    let b = self.weight(g, &format!("{full}.bias"))?;
                    let opts = LstmOptions {
                        return_sequences: *return_sequences,
                        recurrent_dropout: *recurrent_dropout,
                        candidate: spec.candidate,
                    };
                    x = g.lstm(x, k, r, b, opts, &mut *self.rng, mode)?;
                    self.record(g, stage, full, x);
                }
                Layer::Repeat { n } => {
                    x = g.repeat_vector(x, *n)?;
                    self.record(g, stage, format!("{stage}.repeat"), x);
                }
                Layer::Reshape { shape } => {
                    let s = g.shape(x).to_vec();
                    let to: Vec<usize> = [s[0], s[1]].into_iter().chain(shape.iter().copied()).collect();
                    x = g.reshape(x, to)?;
                    self.record(g, stage, format!("{stage}.reshape"), x);
                }
                Layer::Upsample { scale } => {
                    x = g.upsample2d(x, (scale[0], scale[1]))?;
                    self.record(g, stage, format!("{stage}.upsample"), x);
                }
                Layer::ZeroPad { pad, placement } => {
                    x = g.zero_pad2d(x, (pad[0], pad[1]), *placement)?;
                    self.record(g, stage, format!("{stage}.zero_pad"), x);
                }
                Layer::Dense { name, .. } => {
                    let full = format!("{stage}.{name}");
                    let k = self.weight(g, &format!("{full}.kernel"))?;
                    let b = self.weight(g, &format!("{full}.bias"))?;
                    x = g.dense(x, k, b)?;
                    self.record(g, stage, full, x);
                }
                Layer::Sigmoid => {
                    x = g.sigmoid(x);
                    self.record(g, stage, format!("{stage}.sigmoid"), x);
                }
            }
        }
        Ok(x)
    }

    fn dense(&mut self, g: &mut Graph<S>, name: &str, x: Var, leaky: Option<f64>) -> Result<Var> {
        let k = self.weight(g, &format!("{name}.kernel"))?;
        let b = self.weight(g, &format!("{name}.bias"))?;
        let y = g.dense(x, k, b)?;
        Ok(match leaky {
            Some(a) => g.leaky_relu(y, S::lit(a)),
            None => y,
        })
    }

    fn encoder(&mut self, g: &mut Graph<S>, input: Var) -> Result<Var> {
        match &self.net.arch {
            Architecture::Erpenet(spec) => {
                if self.opts.trace {
                    self.record(g, "encoder", "encoder.input".into(), input);
                }
                self.layers(g, spec, "encoder", &spec.encoder, input)
            }
            Architecture::SslcAe(spec) => {
                let b = g.shape(input)[0];
                let flat = g.reshape(input, vec![b, spec.input_dim])?;
                let h = self.dense(g, "encoder.dense1", flat, Some(spec.leaky_alpha))?;
                self.dense(g, "encoder.dense2", h, None)
            }
        }
    }

    fn decoder(&mut self, g: &mut Graph<S>, latent: Var) -> Result<Var> {
        let b = g.shape(latent)[0];
        match &self.net.arch {
            Architecture::Erpenet(spec) => self.layers(g, spec, "decoder", &spec.decoder, latent),
            Architecture::SslcAe(spec) => {
                let h = self.dense(g, "decoder.dense1", latent, Some(spec.leaky_alpha))?;
                let y = self.dense(g, "decoder.dense2", h, None)?;
                g.reshape(y, vec![b, 100, 5, 9, 1])
            }
        }
    }

    fn classifier(&mut self, g: &mut Graph<S>, latent: Var) -> Result<Var> {
        let b = g.shape(latent)[0];
        let p = match &self.net.arch {
            Architecture::Erpenet(spec) => self.layers(g, spec, "classifier", &spec.classifier, latent)?,
            Architecture::SslcAe(_) => {
                let z = self.dense(g, "classifier.dense", latent, None)?;
                g.sigmoid(z)
            }
        };
        g.reshape(p, vec![b])
    }
}

/// Default batch size for inference helpers.
pub const EVAL_BATCH: usize = 128;

/// Stacks epochs into a `[B, 100, 5, 9, 1]` tensor.
pub fn batch_tensor<S: Scalar>(epochs: &[&GridEpoch]) -> Result<Tensor<S>> {
    let mut data = Vec::with_capacity(epochs.len() * EPOCH_VALUES);
    for e in epochs {
        if e.grid.len() != EPOCH_VALUES {
            return Err(Error::dim(format!("epoch has {} values, expected {EPOCH_VALUES}", e.grid.len())));
        }
        data.extend(e.grid.iter().map(|&v| S::lit(v as f64)));
    }
    Tensor::new(vec![epochs.len(), 100, 5, 9, 1], data)
}

/// Forget-gate bias at initialization.
pub const FORGET_BIAS_INIT: f64 = 1.0;

impl<S: Scalar> Network<S> {
    /// Builds and initializes a network: Xavier-uniform kernels, zero biases
    /// (forget gates at [`FORGET_BIAS_INIT`]), unit batch-norm scale and
    /// running variance.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        let slots = arch.slots()?;
        let mut weights = ModelWeights::new(arch.fingerprint());
        for slot in slots {
            let n = &slot.name;
            let t = if n.ends_with(".kernel") || n.ends_with(".recurrent") {
                xavier_init(&slot.shape, rng)
            } else if n.ends_with(".gamma") || n.ends_with(".running_var") {
                Tensor::full(slot.shape.clone(), S::one())
            } else if n.contains(".lstm.") && n.ends_with(".bias") {
                let units = slot.shape[0] / 4;
                let mut b = Tensor::zeros(slot.shape.clone());
                let block = Gate::Forget.block() * units;
                b.data_mut()[block..block + units].fill(S::lit(FORGET_BIAS_INIT));
                b
            } else {
                Tensor::zeros(slot.shape.clone())
            };
            weights.insert(n.clone(), t, slot.trainable)?;
        }
        Ok(Self { arch, weights })
    }

    pub fn erpenet(seed: u64) -> Result<Self> {
        Self::new(Architecture::erpenet(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn sslc_ae(seed: u64) -> Result<Self> {
        Self::new(Architecture::sslc_ae(), &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Wraps existing weights after checking they fit `arch`.
    pub fn from_weights(arch: Architecture, weights: ModelWeights<S>) -> Result<Self> {
        weights.check_against(&arch.fingerprint(), &arch.slots()?)?;
        Ok(Self { arch, weights })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn weights(&self) -> &ModelWeights<S> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut ModelWeights<S> {
        &mut self.weights
    }

    pub fn into_weights(self) -> ModelWeights<S> {
        self.weights
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim()
    }

    /// Trainable element count (batch-norm running statistics excluded).
    pub fn count_params(&self) -> usize {
        self.weights.trainable_count()
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            arch: self.arch.clone(),
            weights: self.weights.cast(),
        }
    }

    /// Records the full forward pass on a `[B, 100, 5, 9, 1]` input.
    pub fn forward(&self, g: &mut Graph<S>, input: Var, opts: ForwardOptions, rng: &mut dyn RngCore) -> Result<Forward<S>> {
        let shape = g.shape(input);
        if shape.len() != 5 || shape[1..] != [100, 5, 9, 1] {
            return Err(Error::dim(format!("network input must be [B, 100, 5, 9, 1], got {shape:?}")));
        }
        let mut pass = Pass {
            net: self,
            opts,
            rng,
            params: Vec::new(),
            bn_stats: Vec::new(),
            trace: Vec::new(),
        };
        let latent = pass.encoder(g, input)?;
        let recon = if opts.reconstruct {
            Some(pass.decoder(g, latent)?)
        } else {
            None
        };
        let prob = pass.classifier(g, latent)?;
        Ok(Forward {
            latent,
            prob,
            recon,
            params: pass.params,
            bn_stats: pass.bn_stats,
            trace: pass.trace,
        })
    }

    /// Decoder alone on a `[B, latent]` input, in infer mode.
    pub fn decode_graph(&self, g: &mut Graph<S>, latent: Var) -> Result<Var> {
        let shape = g.shape(latent);
        if shape.len() != 2 || shape[1] != self.latent_dim() {
            return Err(Error::dim(format!(
                "decoder input must be [B, {}], got {shape:?}",
                self.latent_dim()
            )));
        }
        let mut rng = NoRng;
        let mut pass = Pass {
            net: self,
            opts: ForwardOptions::default(),
            rng: &mut rng,
            params: Vec::new(),
            bn_stats: Vec::new(),
            trace: Vec::new(),
        };
        pass.decoder(g, latent)
    }

    fn infer_batches<T>(
        &self,
        epochs: &[GridEpoch],
        reconstruct: bool,
        mut take: impl FnMut(&Graph<S>, &Forward<S>, usize) -> T,
    ) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(epochs.len());
        let opts = ForwardOptions {
            reconstruct,
            ..Default::default()
        };
        for chunk in epochs.chunks(EVAL_BATCH) {
            let refs: Vec<&GridEpoch> = chunk.iter().collect();
            let mut g = Graph::new();
            let x = g.input(batch_tensor(&refs)?);
            let fwd = self.forward(&mut g, x, opts, &mut NoRng)?;
            for i in 0..chunk.len() {
                out.push(take(&g, &fwd, i));
            }
        }
        Ok(out)
    }

    /// Latent vectors in infer mode.
    pub fn encode(&self, epochs: &[GridEpoch]) -> Result<Vec<Vec<S>>> {
        let d = self.latent_dim();
        self.infer_batches(epochs, false, |g, f, i| g.value(f.latent).data()[i * d..(i + 1) * d].to_vec())
    }

    /// Attended probabilities in infer mode.
    pub fn classify(&self, epochs: &[GridEpoch]) -> Result<Vec<S>> {
        self.infer_batches(epochs, false, |g, f, i| g.value(f.prob).data()[i])
    }

    /// Reconstructions with blank cells zeroed, plus probabilities.
    pub fn reconstruct(&self, epochs: &[GridEpoch]) -> Result<Vec<(Vec<S>, S)>> {
        let mut out = self.infer_batches(epochs, true, |g, f, i| {
            let r = g.value(f.recon.expect("decoder requested")).data();
            (r[i * EPOCH_VALUES..(i + 1) * EPOCH_VALUES].to_vec(), g.value(f.prob).data()[i])
        })?;
        for ((r, _), e) in out.iter_mut().zip(epochs) {
            zero_blanks(r, &e.mask);
        }
        Ok(out)
    }

    /// Decodes latent vectors; blank cells of `mask` are zeroed.
    pub fn decode(&self, latents: &[Vec<S>], mask: &crate::signal::GridMask) -> Result<Vec<Vec<S>>> {
        let d = self.latent_dim();
        let mut out = Vec::with_capacity(latents.len());
        for chunk in latents.chunks(EVAL_BATCH) {
            let mut data = Vec::with_capacity(chunk.len() * d);
            for l in chunk {
                if l.len() != d {
                    return Err(Error::dim(format!("latent has {} values, expected {d}", l.len())));
                }
                data.extend_from_slice(l);
            }
            let mut g = Graph::new();
            let z = g.input(Tensor::new(vec![chunk.len(), d], data)?);
            let y = self.decode_graph(&mut g, z)?;
            for r in g.value(y).data().chunks_exact(EPOCH_VALUES) {
                let mut r = r.to_vec();
                zero_blanks(&mut r, mask);
                out.push(r);
            }
        }
        Ok(out)
    }

    /// Per-sample output shape of every primitive on a single zero epoch.
    pub fn shape_trace(&self) -> Result<Vec<ShapeRow>> {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(vec![1, 100, 5, 9, 1]));
        let opts = ForwardOptions {
            reconstruct: true,
            trace: true,
            ..Default::default()
        };
        Ok(self.forward(&mut g, x, opts, &mut NoRng)?.trace)
    }
}

pub(crate) fn zero_blanks<S: Scalar>(r: &mut [S], mask: &crate::signal::GridMask) {
    for (i, v) in r.iter_mut().enumerate() {
        if !mask.cells()[i % crate::signal::GRID_CELLS] {
            *v = S::zero();
        }
    }
}

/// Randomness source for infer mode, where nothing is sampled.
struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("no sampling in infer mode")
    }

    fn next_u64(&mut self) -> u64 {
        unreachable!("no sampling in infer mode")
    }

    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("no sampling in infer mode")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{GridMask, Label, GRID_CELLS};

    fn probe(seed: u64) -> GridEpoch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = GridMask::standard();
        let grid = (0..EPOCH_VALUES)
            .map(|i| if mask.cells()[i % GRID_CELLS] { rng.random_range(-2.0..2.0) } else { 0.0 })
            .collect();
        GridEpoch {
            grid,
            mask,
            label: Label::Attended,
            dataset_id: "probe".into(),
        }
    }

    #[test]
    fn erpenet_io_shapes() {
        let net = Network::<f32>::erpenet(1).unwrap();
        let e = [probe(1), probe(2)];
        let z = net.encode(&e).unwrap();
        assert_eq!(z.len(), 2);
        assert_eq!(z[0].len(), 512);
        assert!(z.iter().flatten().all(|v| v.is_finite()));
        let p = net.classify(&e).unwrap();
        assert!(p.iter().all(|&p| p > 0.0 && p < 1.0));
        let r = net.decode(&z, &e[0].mask).unwrap();
        assert_eq!(r[0].len(), EPOCH_VALUES);
        assert!(r[0].iter().all(|v| v.is_finite()));
    }

    #[test]
    fn inference_is_deterministic() {
        let net = Network::<f32>::erpenet(3).unwrap();
        let e = probe(9);
        let a = net.encode(std::slice::from_ref(&e)).unwrap();
        let b = net.encode(&[e.clone(), e]).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(b[0], b[1]);
    }

    #[test]
    fn trace_matches_plan() {
        let net = Network::<f32>::erpenet(1).unwrap();
        let Architecture::Erpenet(spec) = net.architecture() else { unreachable!() };
        let (plan, _) = spec.plan().unwrap();
        assert_eq!(net.shape_trace().unwrap(), plan);
    }

    #[test]
    fn parameter_counts() {
        let net = Network::<f32>::erpenet(1).unwrap();
        let lstm_enc = 4 * (512 * (96 + 512) + 512);
        assert_eq!(lstm_enc, 1_247_232);
        let n = net.count_params();
        assert!(n > lstm_enc && n < 2_000_000, "{n}");
        let sslc = Network::<f32>::sslc_ae(1).unwrap();
        assert_eq!(sslc.latent_dim(), 250);
        let want = (4500 * 500 + 500) + (500 * 250 + 250) + (250 * 500 + 500) + (500 * 4500 + 4500) + 251;
        assert_eq!(sslc.count_params(), want);
    }

    #[test]
    fn sslc_shapes() {
        let net = Network::<f32>::sslc_ae(2).unwrap();
        let e = [probe(4)];
        let z = net.encode(&e).unwrap();
        assert_eq!(z[0].len(), 250);
        let r = net.reconstruct(&e).unwrap();
        assert_eq!(r[0].0.len(), EPOCH_VALUES);
    }

    #[test]
    fn from_weights_rejects_other_family() {
        let w = Network::<f32>::erpenet(1).unwrap().into_weights();
        assert!(matches!(
            Network::from_weights(Architecture::sslc_ae(), w),
            Err(Error::Fingerprint { .. })
        ));
    }

    #[test]
    fn train_mode_reports_bn_stats_and_scoped_params() {
        let net = Network::<f32>::erpenet(1).unwrap();
        let mut g = Graph::new();
        let x = g.input(batch_tensor(&[&probe(1), &probe(2)]).unwrap());
        let opts = ForwardOptions {
            mode: Mode::Train,
            scope: Some(TrainableScope::EncoderAndClassifier),
            reconstruct: false,
            trace: false,
        };
        let f = net.forward(&mut g, x, opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(f.recon.is_none());
        assert_eq!(f.bn_stats.len(), 6);
        assert!(f.params.iter().all(|(n, _)| !n.starts_with("decoder.")));
        assert!(f.params.iter().all(|(n, _)| !n.contains("running")));
    }
}
