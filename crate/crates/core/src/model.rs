//! Siamese network assembly and test-time feature extraction.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::data::SequenceSample;
use crate::error::{contract, Error, Result};
use crate::graph::{Graph, Var};
use crate::layers::{
    self, scaled_uniform, AttentionParams, ConvLayer, ConvStackParams, ConvStackVars, RnnOutput, RnnParams,
    SppConfig, CONV_OUT_CHANNELS,
};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

/// Pooling configurations: the full model and its ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Variant {
    /// Pyramid pooling plus attentive temporal pooling.
    #[default]
    Astpn,
    /// Single 2x2 max-pool head plus attentive temporal pooling.
    AtpnOnly,
    /// Pyramid pooling plus temporal mean.
    AspnOnly,
    /// Pyramid pooling plus temporal mean.
    MeanPool,
    /// Pyramid pooling plus elementwise temporal max.
    MaxPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialHead {
    Pyramid,
    Pool2x2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalPool {
    Attentive,
    Mean,
    Max,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Astpn,
        Variant::AtpnOnly,
        Variant::AspnOnly,
        Variant::MeanPool,
        Variant::MaxPool,
    ];

    pub fn spatial(self) -> SpatialHead {
        match self {
            Variant::AtpnOnly => SpatialHead::Pool2x2,
            _ => SpatialHead::Pyramid,
        }
    }

    pub fn temporal(self) -> TemporalPool {
        match self {
            Variant::Astpn | Variant::AtpnOnly => TemporalPool::Attentive,
            Variant::AspnOnly | Variant::MeanPool => TemporalPool::Mean,
            Variant::MaxPool => TemporalPool::Max,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Astpn => "astpn",
            Variant::AtpnOnly => "atpn_only",
            Variant::AspnOnly => "aspn_only",
            Variant::MeanPool => "mean_pool",
            Variant::MaxPool => "max_pool",
        }
    }
}

impl core::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| contract(alloc::format!("unknown variant `{s}`")))
    }
}

/// Which summary of a self-pair is returned as the sequence feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureBranch {
    #[default]
    Probe,
    Gallery,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub rnn_output: RnnOutput,
    pub spp: SppConfig,
    /// Feature dimension `N`.
    pub feature_dim: usize,
    pub feature_branch: FeatureBranch,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Astpn,
            rnn_output: RnnOutput::PreTanh,
            spp: SppConfig::default(),
            feature_dim: 128,
            feature_branch: FeatureBranch::Probe,
        }
    }
}

impl ModelConfig {
    /// Length of the per-frame vector fed to the recurrent layer. Only the
    /// 2x2 head depends on the frame size `(h, w)`.
    pub fn spatial_len(&self, frame_hw: (usize, usize)) -> usize {
        match self.variant.spatial() {
            SpatialHead::Pyramid => self.spp.output_len(CONV_OUT_CHANNELS),
            SpatialHead::Pool2x2 => {
                let (h, w) = layers::conv_output_hw(frame_hw.0, frame_hw.1);
                CONV_OUT_CHANNELS * (h / 2) * (w / 2)
            }
        }
    }
}

pub const PARAM_NAMES: [&str; 11] = [
    "conv1.kernel",
    "conv1.bias",
    "conv2.kernel",
    "conv2.bias",
    "conv3.kernel",
    "conv3.bias",
    "rnn.u_in",
    "rnn.w_rec",
    "att.u_att",
    "classifier.weight",
    "classifier.bias",
];

/// Every learnable tensor. One copy serves both Siamese branches.
#[derive(Debug, Clone, PartialEq)]
pub struct AstpnParams {
    pub conv: ConvStackParams,
    pub rnn: RnnParams,
    pub att: AttentionParams,
    /// `K x N` identity classifier weights.
    pub cls_weight: Tensor,
    /// `K` identity classifier biases.
    pub cls_bias: Tensor,
}

impl AstpnParams {
    /// Seeded scaled-uniform initialisation for `classes` training
    /// identities and (cropped) frames of size `frame_hw`.
    pub fn init(cfg: &ModelConfig, classes: usize, frame_hw: (usize, usize), seed: u64) -> Result<Self> {
        if classes == 0 || cfg.feature_dim == 0 {
            return Err(contract("need at least one class and a positive feature dimension"));
        }
        let n = cfg.feature_dim;
        let mut r = rng::stream(seed, &[tag::INIT]);
        let conv = ConvStackParams::init(&mut r);
        let rnn = RnnParams::init(cfg.spatial_len(frame_hw), n, &mut r);
        let att = AttentionParams::init(n, &mut r);
        Ok(Self {
            conv,
            rnn,
            att,
            cls_weight: scaled_uniform(&[classes, n], n, &mut r),
            cls_bias: scaled_uniform(&[classes], n, &mut r),
        })
    }

    pub fn classes(&self) -> usize {
        self.cls_bias.numel()
    }

    pub fn feature_dim(&self) -> usize {
        self.rnn.hidden()
    }

    /// Tensors in [`PARAM_NAMES`] order.
    pub fn named(&self) -> [(&'static str, &Tensor); 11] {
        let c = &self.conv.layers;
        let t = [
            &c[0].kernel,
            &c[0].bias,
            &c[1].kernel,
            &c[1].bias,
            &c[2].kernel,
            &c[2].bias,
            &self.rnn.u_in,
            &self.rnn.w_rec,
            &self.att.u_att,
            &self.cls_weight,
            &self.cls_bias,
        ];
        let mut i = 0;
        t.map(|t| {
            i += 1;
            (PARAM_NAMES[i - 1], t)
        })
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 11] {
        let [c0, c1, c2] = &mut self.conv.layers;
        let t = [
            &mut c0.kernel,
            &mut c0.bias,
            &mut c1.kernel,
            &mut c1.bias,
            &mut c2.kernel,
            &mut c2.bias,
            &mut self.rnn.u_in,
            &mut self.rnn.w_rec,
            &mut self.att.u_att,
            &mut self.cls_weight,
            &mut self.cls_bias,
        ];
        let mut i = 0;
        t.map(|t| {
            i += 1;
            (PARAM_NAMES[i - 1], t)
        })
    }

    /// Shapes a parameter set must have for the given architecture.
    pub fn expected_shapes(cfg: &ModelConfig, classes: usize, frame_hw: (usize, usize)) -> Vec<(&'static str, Vec<usize>)> {
        let n = cfg.feature_dim;
        let k = ConvStackParams::kernel_shapes();
        let shapes = [
            k[0].to_vec(),
            vec![k[0][0]],
            k[1].to_vec(),
            vec![k[1][0]],
            k[2].to_vec(),
            vec![k[2][0]],
            vec![n, cfg.spatial_len(frame_hw)],
            vec![n, n],
            vec![n, n],
            vec![classes, n],
            vec![classes],
        ];
        PARAM_NAMES.iter().copied().zip(shapes).collect()
    }

    /// Rebuilds a parameter set from named tensors, checking each against
    /// `expected` (as produced by [`AstpnParams::expected_shapes`]).
    pub fn from_named(tensors: Vec<(String, Tensor)>, expected: &[(&'static str, Vec<usize>)]) -> Result<Self> {
        let mut slots: Vec<Option<Tensor>> = vec![None; PARAM_NAMES.len()];
        for (name, t) in tensors {
            let i = PARAM_NAMES
                .iter()
                .position(|&p| p == name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            let want = &expected[i].1;
            if t.shape() != want.as_slice() {
                return Err(Error::ParamShape {
                    name,
                    expected: want.clone(),
                    found: t.shape().to_vec(),
                });
            }
            slots[i] = Some(t);
        }
        let mut it = slots.into_iter().enumerate().map(|(i, s)| {
            s.ok_or_else(|| Error::MissingParam(PARAM_NAMES[i].to_string()))
        });
        let mut next = || it.next().expect("eleven slots");
        let mut layer = || -> Result<ConvLayer> {
            Ok(ConvLayer {
                kernel: next()?,
                bias: next()?,
            })
        };
        let conv = ConvStackParams {
            layers: [layer()?, layer()?, layer()?],
        };
        let rnn = RnnParams {
            u_in: next()?,
            w_rec: next()?,
        };
        let att = AttentionParams { u_att: next()? };
        Ok(Self {
            conv,
            rnn,
            att,
            cls_weight: next()?,
            cls_bias: next()?,
        })
    }

    /// Records every tensor on `g` as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let vars = self.named().map(|(_, t)| g.param(t.clone()));
        BoundParams {
            conv: ConvStackVars {
                kernels: [vars[0], vars[2], vars[4]],
                biases: [vars[1], vars[3], vars[5]],
            },
            u_in: vars[6],
            w_rec: vars[7],
            u_att: vars[8],
            cls_weight: vars[9],
            cls_bias: vars[10],
        }
    }

    /// Adds the gradients accumulated on `g` into each tensor's grad slot.
    /// Tensors the backward pass never reached receive zeros.
    pub fn absorb_grads(&mut self, g: &Graph, bound: &BoundParams) {
        let vars = bound.vars();
        for ((_, t), v) in self.named_mut().into_iter().zip(vars) {
            match g.grad(v) {
                Some(d) => t.accumulate_grad(d),
                None => t.accumulate_grad(&vec![0.0; t.numel()]),
            }
        }
    }

    pub fn clear_grads(&mut self) {
        self.named_mut().into_iter().for_each(|(_, t)| t.clear_grad());
    }

    /// Bitwise equality of every tensor value.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.named()
            .iter()
            .zip(other.named().iter())
            .all(|((_, a), (_, b))| a.bit_eq(b))
    }
}

/// Graph handles for an [`AstpnParams`], valid for one [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct BoundParams {
    pub conv: ConvStackVars,
    pub u_in: Var,
    pub w_rec: Var,
    pub u_att: Var,
    pub cls_weight: Var,
    pub cls_bias: Var,
}

impl BoundParams {
    /// Handles in [`PARAM_NAMES`] order.
    pub fn vars(&self) -> [Var; 11] {
        let c = &self.conv;
        [
            c.kernels[0],
            c.biases[0],
            c.kernels[1],
            c.biases[1],
            c.kernels[2],
            c.biases[2],
            self.u_in,
            self.w_rec,
            self.u_att,
            self.cls_weight,
            self.cls_bias,
        ]
    }
}

/// Per-frame features through the recurrent layer: a `T x N` matrix.
pub fn sequence_matrix(g: &mut Graph, p: &BoundParams, seq: &SequenceSample, cfg: &ModelConfig) -> Result<Var> {
    if seq.is_empty() {
        return Err(contract(alloc::format!(
            "{}/{}: empty sequence",
            seq.person_id, seq.camera_id
        )));
    }
    let mut reps = Vec::with_capacity(seq.len());
    for frame in &seq.frames {
        let x = g.constant(frame.clone());
        let fmap = layers::conv_stack_forward(g, x, &p.conv)?;
        let r = match cfg.variant.spatial() {
            SpatialHead::Pyramid => layers::spp_forward(g, fmap, &cfg.spp)?,
            SpatialHead::Pool2x2 => {
                let pooled = g.maxpool2d(fmap, (2, 2), (2, 2))?;
                let len = g.value(pooled).numel();
                g.reshape(pooled, &[len])?
            }
        };
        reps.push(r);
    }
    layers::rnn_forward(g, &reps, p.u_in, p.w_rec, cfg.rnn_output)
}

/// Sequence summaries `(v_p, v_g)` from the two sequence matrices.
pub fn pool_pair(g: &mut Graph, p: &BoundParams, probe: Var, gallery: Var, cfg: &ModelConfig) -> Result<(Var, Var)> {
    match cfg.variant.temporal() {
        TemporalPool::Attentive => {
            let out = layers::attentive_summary(g, probe, gallery, p.u_att)?;
            Ok((out.v_p, out.v_g))
        }
        TemporalPool::Mean => Ok((g.mean_rows(probe)?, g.mean_rows(gallery)?)),
        TemporalPool::Max => Ok((g.max_axis(probe, 0)?, g.max_axis(gallery, 0)?)),
    }
}

/// Both branches of the Siamese network on one pair.
pub fn forward_pair_graph(
    g: &mut Graph,
    p: &BoundParams,
    probe: &SequenceSample,
    gallery: &SequenceSample,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    let pm = sequence_matrix(g, p, probe, cfg)?;
    let gm = sequence_matrix(g, p, gallery, cfg)?;
    pool_pair(g, p, pm, gm, cfg)
}

/// Evaluates both branches and returns `(v_p, v_g)`.
pub fn forward_pair(
    params: &AstpnParams,
    probe: &SequenceSample,
    gallery: &SequenceSample,
    cfg: &ModelConfig,
) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let (vp, vg) = forward_pair_graph(&mut g, &p, probe, gallery, cfg)?;
    Ok((g.value(vp).clone(), g.value(vg).clone()))
}

/// Feature of a single sequence: the sequence is paired with itself and the
/// configured branch summary is returned.
pub fn extract_feature(params: &AstpnParams, seq: &SequenceSample, cfg: &ModelConfig) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let m = sequence_matrix(&mut g, &p, seq, cfg)?;
    let (vp, vg) = pool_pair(&mut g, &p, m, m, cfg)?;
    Ok(match cfg.feature_branch {
        FeatureBranch::Probe => g.value(vp).clone(),
        FeatureBranch::Gallery => g.value(vg).clone(),
        FeatureBranch::Mean => {
            let (a, b) = (g.value(vp).data(), g.value(vg).data());
            Tensor::from_vec(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect())
        }
    })
}
