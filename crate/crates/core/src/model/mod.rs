//! The separator network.
//!
//! ```text
//!              ┌─ encoder ──────────────┐ z
//!   x ─────────┤                        ├──► z̃ = |c − v| ⊙ z ──► decoder ──► ŷ
//!              └─ decomposer ─► sigmoid ┘ v
//! ```
//!
//! Encoder, decomposer and decoder are stacks of inception blocks (four
//! parallel same-padded convolutions of widths 3, 5, 11 and 15, concatenated
//! along channels). The decomposer and decoder end in a 1×1 projection.
//! There are no fully connected layers, so any input length works.
//!
//! `c` is the indicator constant: 0 selects the signal, 1 the artifact.

mod weights;

pub use weights::{load_weights, read_records, save_weights, write_records, Record};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, NodeId, Tensor};

/// Kernel widths of the four inception branches, in branch order.
pub const KERNEL_SIZES: [usize; 4] = [3, 5, 11, 15];

/// Shortest input every kernel fits into.
pub const MIN_LENGTH: usize = 15;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid architecture: {0}")]
    Arch(String),
    #[error("model takes single-channel input [B, 1, L], got shape {0:?}")]
    NotSingleChannel(Vec<usize>),
    #[error("weight file: bad magic {0:?}, expected \"DSW1\"")]
    BadMagic([u8; 4]),
    #[error("weight file truncated while reading {0}")]
    Truncated(&'static str),
    #[error("weight file incomplete: missing tensor {0}")]
    MissingTensor(String),
    #[error("weight file: tensor {name} has shape {got:?}, architecture expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("weight file: unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error("weight file: invalid record: {0}")]
    InvalidRecord(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which component the decoder reconstructs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorMode {
    Signal,
    Artifact,
}

impl IndicatorMode {
    /// Value broadcast over the whole indicator vector.
    pub fn value(self) -> f64 {
        match self {
            IndicatorMode::Signal => 0.0,
            IndicatorMode::Artifact => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Output channels of each inception branch; blocks emit `4 * c_branch`.
    pub c_branch: usize,
    pub encoder_blocks: usize,
    pub decomposer_blocks: usize,
    pub decoder_blocks: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            c_branch: 8,
            encoder_blocks: 2,
            decomposer_blocks: 2,
            decoder_blocks: 2,
        }
    }
}

impl ArchConfig {
    /// Small network used for finite-difference gradient checks.
    pub fn tiny() -> Self {
        Self {
            c_branch: 2,
            ..Self::default()
        }
    }

    pub fn block_channels(&self) -> usize {
        KERNEL_SIZES.len() * self.c_branch
    }

    /// Channel count of the embedding and the attenuation vector.
    pub fn c_embed(&self) -> usize {
        self.block_channels()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.c_branch == 0 {
            return Err(ModelError::Arch("c_branch must be at least 1".into()));
        }
        for (name, n) in [
            ("encoder", self.encoder_blocks),
            ("decomposer", self.decomposer_blocks),
            ("decoder", self.decoder_blocks),
        ] {
            if n == 0 {
                return Err(ModelError::Arch(format!("{name} needs at least one block")));
            }
        }
        Ok(())
    }
}

/// Weight `[out, in, k]` and bias `[out]` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvParams {
    fn zeros(out_ch: usize, in_ch: usize, k: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![out_ch, in_ch, k]),
            bias: Tensor::zeros(vec![out_ch]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InceptionBlockParams {
    /// One convolution per entry of [`KERNEL_SIZES`].
    pub branches: Vec<ConvParams>,
}

impl InceptionBlockParams {
    pub fn zeros(in_ch: usize, c_branch: usize) -> Self {
        Self {
            branches: KERNEL_SIZES
                .iter()
                .map(|&k| ConvParams::zeros(c_branch, in_ch, k))
                .collect(),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.branches[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.branches.iter().map(|b| b.weight.shape()[0]).sum()
    }
}

/// Every learnable tensor of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: ArchConfig,
    pub encoder: Vec<InceptionBlockParams>,
    pub decomposer: Vec<InceptionBlockParams>,
    pub decomposer_proj: ConvParams,
    pub decoder: Vec<InceptionBlockParams>,
    pub decoder_proj: ConvParams,
}

fn stage(n_blocks: usize, first_in: usize, arch: &ArchConfig) -> Vec<InceptionBlockParams> {
    (0..n_blocks)
        .map(|i| {
            let cin = if i == 0 {
                first_in
            } else {
                arch.block_channels()
            };
            InceptionBlockParams::zeros(cin, arch.c_branch)
        })
        .collect()
}

impl NetworkParams {
    /// All-zero parameters with the layout of `arch`.
    pub fn zeros(arch: ArchConfig) -> Result<Self, ModelError> {
        arch.validate()?;
        let ch = arch.block_channels();
        Ok(Self {
            arch,
            encoder: stage(arch.encoder_blocks, 1, &arch),
            decomposer: stage(arch.decomposer_blocks, 1, &arch),
            decomposer_proj: ConvParams::zeros(arch.c_embed(), ch, 1),
            decoder: stage(arch.decoder_blocks, arch.c_embed(), &arch),
            decoder_proj: ConvParams::zeros(1, ch, 1),
        })
    }

    /// Fan-in scaled uniform weights, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// and zero biases. Deterministic in `seed`.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self, ModelError> {
        let mut params = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, conv) in params.convs_mut() {
            let [_, cin, k] = conv.weight.shape() else {
                unreachable!("conv weights are rank 3")
            };
            let bound = (6.0 / (cin * k) as f64).sqrt();
            for w in conv.weight.data_mut() {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(params)
    }

    fn convs(&self) -> Vec<(String, &ConvParams)> {
        let mut out = Vec::new();
        for (name, stage) in [("encoder", &self.encoder), ("decomposer", &self.decomposer)] {
            for (bi, block) in stage.iter().enumerate() {
                for (ri, conv) in block.branches.iter().enumerate() {
                    out.push((format!("{name}.block{bi}.branch{ri}"), conv));
                }
            }
        }
        out.push(("decomposer.proj".to_string(), &self.decomposer_proj));
        for (bi, block) in self.decoder.iter().enumerate() {
            for (ri, conv) in block.branches.iter().enumerate() {
                out.push((format!("decoder.block{bi}.branch{ri}"), conv));
            }
        }
        out.push(("decoder.proj".to_string(), &self.decoder_proj));
        out
    }

    fn convs_mut(&mut self) -> Vec<(String, &mut ConvParams)> {
        let mut out = Vec::new();
        for (bi, block) in self.encoder.iter_mut().enumerate() {
            for (ri, conv) in block.branches.iter_mut().enumerate() {
                out.push((format!("encoder.block{bi}.branch{ri}"), conv));
            }
        }
        for (bi, block) in self.decomposer.iter_mut().enumerate() {
            for (ri, conv) in block.branches.iter_mut().enumerate() {
                out.push((format!("decomposer.block{bi}.branch{ri}"), conv));
            }
        }
        out.push(("decomposer.proj".to_string(), &mut self.decomposer_proj));
        for (bi, block) in self.decoder.iter_mut().enumerate() {
            for (ri, conv) in block.branches.iter_mut().enumerate() {
                out.push((format!("decoder.block{bi}.branch{ri}"), conv));
            }
        }
        out.push(("decoder.proj".to_string(), &mut self.decoder_proj));
        out
    }

    /// `(name, tensor)` pairs in canonical order, e.g. `encoder.block0.branch3.weight`.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        self.convs()
            .into_iter()
            .flat_map(|(name, c)| {
                [
                    (format!("{name}.weight"), &c.weight),
                    (format!("{name}.bias"), &c.bias),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.convs_mut()
            .into_iter()
            .flat_map(|(_, c)| [&mut c.weight, &mut c.bias])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.all_finite())
    }

    /// Records every parameter on `g`, as differentiable leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let ids = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| {
                if trainable {
                    g.param(t)
                } else {
                    g.input(t.clone())
                }
            })
            .collect();
        BoundParams {
            arch: self.arch,
            ids,
        }
    }

    /// Adds the gradients that reached the bound nodes into each tensor's grad.
    /// Parameters no gradient reached receive zeros.
    pub fn absorb_grads(&mut self, g: &Graph, bound: &BoundParams) -> Result<(), ModelError> {
        for (t, &id) in self.tensors_mut().into_iter().zip(&bound.ids) {
            match g.grad(id) {
                Some(gr) => t.accumulate_grad(gr)?,
                None => t.accumulate_grad(&vec![0.0; t.len()])?,
            }
        }
        Ok(())
    }
}

/// Graph node ids of the parameters, in [`NetworkParams::named_tensors`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    arch: ArchConfig,
    ids: Vec<NodeId>,
}

impl BoundParams {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    /// Gradient of every bound parameter after `g.backward`, zeros where none
    /// arrived.
    pub fn grads(&self, g: &Graph) -> Vec<Vec<f64>> {
        self.ids
            .iter()
            .map(|&id| match g.grad(id) {
                Some(gr) => gr.to_vec(),
                None => vec![0.0; g.value(id).len()],
            })
            .collect()
    }
}

/// Node ids of one recorded forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub output: NodeId,
    /// `z`
    pub embedding: NodeId,
    /// `v`, elementwise in (0, 1)
    pub attenuation: NodeId,
    /// `z̃`
    pub attenuated: NodeId,
}

/// One inception block: four branch convolutions, ReLU, channel concat.
pub fn inception_forward(
    g: &mut Graph,
    x: NodeId,
    branch_ids: &[NodeId],
) -> Result<NodeId, ModelError> {
    let mut outs = Vec::with_capacity(branch_ids.len() / 2);
    for pair in branch_ids.chunks_exact(2) {
        let c = g.conv1d_same(x, pair[0], pair[1])?;
        outs.push(g.relu(c)?);
    }
    Ok(g.concat_channels(&outs)?)
}

struct Cursor<'a> {
    ids: &'a [NodeId],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [NodeId] {
        let s = &self.ids[self.pos..self.pos + n];
        self.pos += n;
        s
    }
}

/// Records the full forward pass for input `x` of shape `[B, 1, L]`.
pub fn forward_graph(
    g: &mut Graph,
    x: NodeId,
    params: &BoundParams,
    mode: IndicatorMode,
) -> Result<ForwardNodes, ModelError> {
    let shape = g.value(x).shape().to_vec();
    if shape.len() != 3 || shape[1] != 1 {
        return Err(ModelError::NotSingleChannel(shape));
    }
    let arch = params.arch;
    let per_block = 2 * KERNEL_SIZES.len();
    let mut cur = Cursor {
        ids: &params.ids,
        pos: 0,
    };

    let mut z = x;
    for _ in 0..arch.encoder_blocks {
        z = inception_forward(g, z, cur.take(per_block))?;
    }

    let mut h = x;
    for _ in 0..arch.decomposer_blocks {
        h = inception_forward(g, h, cur.take(per_block))?;
    }
    let proj = cur.take(2);
    let logits = g.conv1d_same(h, proj[0], proj[1])?;
    let v = g.sigmoid(logits)?;

    let gate = g.sub_abs(mode.value(), v)?;
    let z_att = g.mul(gate, z)?;

    let mut d = z_att;
    for _ in 0..arch.decoder_blocks {
        d = inception_forward(g, d, cur.take(per_block))?;
    }
    let proj = cur.take(2);
    let y = g.conv1d_same(d, proj[0], proj[1])?;

    Ok(ForwardNodes {
        output: y,
        embedding: z,
        attenuation: v,
        attenuated: z_att,
    })
}

/// Values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub output: Tensor,
    pub embedding: Tensor,
    pub attenuation: Tensor,
    pub attenuated: Tensor,
}

/// Inference forward pass on `x` (`[B, 1, L]`) without gradient tracking.
pub fn forward(
    x: &Tensor,
    params: &NetworkParams,
    mode: IndicatorMode,
) -> Result<ForwardOutput, ModelError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g, false);
    let xi = g.input(x.clone());
    let nodes = forward_graph(&mut g, xi, &bound, mode)?;
    Ok(ForwardOutput {
        output: g.value(nodes.output).clone(),
        embedding: g.value(nodes.embedding).clone(),
        attenuation: g.value(nodes.attenuation).clone(),
        attenuated: g.value(nodes.attenuated).clone(),
    })
}

/// Amplitude normalizer of a segment: its standard deviation, or 1 for a
/// constant segment.
pub fn segment_scale(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 1.0;
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd.is_finite() && sd > 0.0 {
        sd
    } else {
        1.0
    }
}

/// Runs one single-channel segment through the network in its own amplitude
/// frame: divided by [`segment_scale`] on the way in, multiplied back on the
/// way out.
pub fn separate(
    params: &NetworkParams,
    samples: &[f64],
    mode: IndicatorMode,
) -> Result<Vec<f64>, ModelError> {
    Ok(separate_with_latents(params, samples, mode)?.0)
}

/// [`separate`] that also returns the standardized-frame intermediates.
pub fn separate_with_latents(
    params: &NetworkParams,
    samples: &[f64],
    mode: IndicatorMode,
) -> Result<(Vec<f64>, ForwardOutput), ModelError> {
    let scale = segment_scale(samples);
    let x: Vec<f64> = samples.iter().map(|v| v / scale).collect();
    let out = forward(&Tensor::from_signal(&x), params, mode)?;
    let y = out.output.data().iter().map(|v| v * scale).collect();
    Ok((y, out))
}
