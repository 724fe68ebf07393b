//! The four network blocks: convolutional stack, spatial pyramid pooling,
//! the recurrent layer and attentive temporal pooling.
//!
//! Blocks are free functions over graph handles so both Siamese branches
//! record against the same parameter leaves.

use alloc::vec::Vec;

use rand::Rng as _;

use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Input channels per frame: Y, U, V, flow-x, flow-y.
pub const INPUT_CHANNELS: usize = 5;
/// Channels produced by the last convolution.
pub const CONV_OUT_CHANNELS: usize = 32;
pub const KERNEL: usize = 5;
pub const PAD: usize = 4;
pub const STRIDE: usize = 1;

/// `(out_channels, pooled)` for the three convolutions.
const CONV_PLAN: [(usize, bool); 3] = [(16, true), (32, true), (CONV_OUT_CHANNELS, false)];

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn scaled_uniform(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape, data).expect("shape product matches")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvStackParams {
    pub layers: [ConvLayer; 3],
}

impl ConvStackParams {
    pub fn init(rng: &mut Rng) -> Self {
        let mut cin = INPUT_CHANNELS;
        let layers = CONV_PLAN.map(|(cout, _)| {
            let fan_in = cin * KERNEL * KERNEL;
            let layer = ConvLayer {
                kernel: scaled_uniform(&[cout, cin, KERNEL, KERNEL], fan_in, rng),
                bias: scaled_uniform(&[cout], fan_in, rng),
            };
            cin = cout;
            layer
        });
        Self { layers }
    }

    pub fn zeros() -> Self {
        let mut cin = INPUT_CHANNELS;
        let layers = CONV_PLAN.map(|(cout, _)| {
            let layer = ConvLayer {
                kernel: Tensor::zeros(&[cout, cin, KERNEL, KERNEL]),
                bias: Tensor::zeros(&[cout]),
            };
            cin = cout;
            layer
        });
        Self { layers }
    }

    /// Expected kernel shapes, in layer order.
    pub fn kernel_shapes() -> [[usize; 4]; 3] {
        let mut cin = INPUT_CHANNELS;
        CONV_PLAN.map(|(cout, _)| {
            let s = [cout, cin, KERNEL, KERNEL];
            cin = cout;
            s
        })
    }
}

/// Graph handles for one [`ConvStackParams`].
#[derive(Debug, Clone, Copy)]
pub struct ConvStackVars {
    pub kernels: [Var; 3],
    pub biases: [Var; 3],
}

/// Spatial size of the final feature map for an `h x w` frame.
pub fn conv_output_hw(h: usize, w: usize) -> (usize, usize) {
    CONV_PLAN.iter().fold((h, w), |(h, w), &(_, pooled)| {
        let (h, w) = (h + 2 * PAD - KERNEL + 1, w + 2 * PAD - KERNEL + 1);
        if pooled {
            ((h - 2) / 2 + 1, (w - 2) / 2 + 1)
        } else {
            (h, w)
        }
    })
}

/// conv, tanh, 2x2 pool; conv, tanh, 2x2 pool; conv, tanh.
pub fn conv_stack_forward(g: &mut Graph, frame: Var, p: &ConvStackVars) -> Result<Var> {
    let mut x = frame;
    for (i, &(_, pooled)) in CONV_PLAN.iter().enumerate() {
        x = g.conv2d(x, p.kernels[i], p.biases[i], PAD, STRIDE)?;
        x = g.tanh(x);
        if pooled {
            x = g.maxpool2d(x, (2, 2), (2, 2))?;
        }
    }
    Ok(x)
}

/// Pyramid levels as `(m_w, m_h)` cell counts along width and height.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SppConfig {
    pub bins: Vec<(usize, usize)>,
}

impl Default for SppConfig {
    fn default() -> Self {
        Self {
            bins: alloc::vec![(8, 8), (4, 4), (2, 2), (1, 1)],
        }
    }
}

impl SppConfig {
    pub fn new(bins: Vec<(usize, usize)>) -> Result<Self> {
        if bins.is_empty() || bins.iter().any(|&(w, h)| w == 0 || h == 0) {
            return Err(contract("pyramid bins must be non-empty with positive extents"));
        }
        Ok(Self { bins })
    }

    /// Cells per channel, summed over levels (85 for the default pyramid).
    pub fn cells_per_channel(&self) -> usize {
        self.bins.iter().map(|&(w, h)| w * h).sum()
    }

    pub fn output_len(&self, channels: usize) -> usize {
        channels * self.cells_per_channel()
    }

    pub fn max_bin(&self) -> (usize, usize) {
        self.bins
            .iter()
            .fold((0, 0), |(mw, mh), &(w, h)| (mw.max(w), mh.max(h)))
    }
}

/// Fixed-length pyramid max pooling of a `c x h x w` map. Levels are
/// concatenated in bin order; inside a level the layout is channel-major.
pub fn spp_forward(g: &mut Graph, fmap: Var, cfg: &SppConfig) -> Result<Var> {
    let levels = cfg
        .bins
        .iter()
        .map(|&(mw, mh)| g.grid_maxpool(fmap, mh, mw))
        .collect::<Result<Vec<_>>>()?;
    g.concat(&levels)
}

/// Which recurrent quantity forms the rows of the sequence matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RnnOutput {
    /// `o_t = U r_t + W s_{t-1}`
    #[default]
    PreTanh,
    /// `s_t = tanh(o_t)`
    PostTanh,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnParams {
    /// `N x L` input projection.
    pub u_in: Tensor,
    /// `N x N` state transition.
    pub w_rec: Tensor,
}

impl RnnParams {
    pub fn init(input_len: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            u_in: scaled_uniform(&[hidden, input_len], input_len, rng),
            w_rec: scaled_uniform(&[hidden, hidden], hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u_in.shape()[0]
    }
}

/// Runs the recurrence over per-frame vectors and returns the `T x N`
/// sequence matrix. The initial state is zero, so the first step has no
/// recurrent term.
pub fn rnn_forward(g: &mut Graph, reps: &[Var], u_in: Var, w_rec: Var, output: RnnOutput) -> Result<Var> {
    if reps.is_empty() {
        return Err(contract("recurrent layer needs at least one time step"));
    }
    let n = g.shape(u_in)[0];
    let mut rows = Vec::with_capacity(reps.len());
    let mut state: Option<Var> = None;
    for &r in reps {
        let len = g.value(r).numel();
        let col = g.reshape(r, &[len, 1])?;
        let mut o = g.matmul(u_in, col)?;
        if let Some(s) = state {
            let rec = g.matmul(w_rec, s)?;
            o = g.add(o, rec)?;
        }
        let s = g.tanh(o);
        state = Some(s);
        rows.push(match output {
            RnnOutput::PreTanh => o,
            RnnOutput::PostTanh => s,
        });
    }
    let m = g.stack_rows(&rows)?;
    debug_assert_eq!(g.shape(m), &[reps.len(), n]);
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `N x N` matrix shared between the two sequences.
    pub u_att: Tensor,
}

impl AttentionParams {
    pub fn init(hidden: usize, rng: &mut Rng) -> Self {
        Self {
            u_att: scaled_uniform(&[hidden, hidden], hidden, rng),
        }
    }
}

/// `A = tanh(P U G^T)`, a `T_p x T_g` matrix.
pub fn attention_matrix(g: &mut Graph, p: Var, gal: Var, u_att: Var) -> Result<Var> {
    let logits = g.bilinear(p, u_att, gal)?;
    Ok(g.tanh(logits))
}

/// Per-frame scores: `t_p` is the max of each row of `A` (over gallery
/// frames), `t_g` the max of each column (over probe frames).
pub fn temporal_weights(g: &mut Graph, a: Var) -> Result<(Var, Var)> {
    Ok((g.max_axis(a, 1)?, g.max_axis(a, 0)?))
}

/// Output of [`attentive_summary`], with the intermediate attention terms.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub v_p: Var,
    pub v_g: Var,
    pub a: Var,
    pub a_p: Var,
    pub a_g: Var,
}

/// Softmax-weighted sums of the rows of `P` and `G`.
pub fn attentive_summary(g: &mut Graph, p: Var, gal: Var, u_att: Var) -> Result<Attended> {
    let a = attention_matrix(g, p, gal, u_att)?;
    let (t_p, t_g) = temporal_weights(g, a)?;
    let a_p = g.softmax(t_p)?;
    let a_g = g.softmax(t_g)?;
    let v_p = weighted_rows(g, p, a_p)?;
    let v_g = weighted_rows(g, gal, a_g)?;
    Ok(Attended { v_p, v_g, a, a_p, a_g })
}

/// `M^T w` for `M: T x N`, `w: T`.
pub fn weighted_rows(g: &mut Graph, m: Var, w: Var) -> Result<Var> {
    let t = g.value(w).numel();
    let n = g.shape(m)[1];
    let mt = g.transpose(m)?;
    let wc = g.reshape(w, &[t, 1])?;
    let v = g.matmul(mt, wc)?;
    g.reshape(v, &[n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn consts(g: &mut Graph, p: &ConvStackParams) -> ConvStackVars {
        let k = [0, 1, 2].map(|i| g.constant(p.layers[i].kernel.clone()));
        let b = [0, 1, 2].map(|i| g.constant(p.layers[i].bias.clone()));
        ConvStackVars { kernels: k, biases: b }
    }

    #[test]
    fn kernel_shapes_follow_layer_table() {
        assert_eq!(
            ConvStackParams::kernel_shapes(),
            [[16, 5, 5, 5], [32, 16, 5, 5], [32, 32, 5, 5]]
        );
    }

    #[test]
    fn conv_stack_shapes() {
        assert_eq!(conv_output_hw(128, 64), (39, 23));
        // each conv adds 4 to both extents, each pool halves with floor
        assert_eq!(conv_output_hw(24, 16), (13, 11));
        let params = ConvStackParams::init(&mut rng::stream(1, &[]));
        let mut g = Graph::new();
        let vars = consts(&mut g, &params);
        let x = g.constant(Tensor::zeros(&[5, 24, 16]));
        let y = conv_stack_forward(&mut g, x, &vars).unwrap();
        assert_eq!(g.shape(y), &[32, 13, 11]);
    }

    #[test]
    fn conv_stack_intermediate_shapes_for_full_frames() {
        let mut g = Graph::new();
        let vars = consts(&mut g, &ConvStackParams::zeros());
        let x = g.constant(Tensor::zeros(&[5, 128, 64]));
        let c1 = g.conv2d(x, vars.kernels[0], vars.biases[0], PAD, STRIDE).unwrap();
        assert_eq!(g.shape(c1), &[16, 132, 68]);
        let p1 = g.maxpool2d(c1, (2, 2), (2, 2)).unwrap();
        assert_eq!(g.shape(p1), &[16, 66, 34]);
        let c2 = g.conv2d(p1, vars.kernels[1], vars.biases[1], PAD, STRIDE).unwrap();
        assert_eq!(g.shape(c2), &[32, 70, 38]);
        let p2 = g.maxpool2d(c2, (2, 2), (2, 2)).unwrap();
        assert_eq!(g.shape(p2), &[32, 35, 19]);
        let c3 = g.conv2d(p2, vars.kernels[2], vars.biases[2], PAD, STRIDE).unwrap();
        assert_eq!(g.shape(c3), &[32, 39, 23]);
    }

    #[test]
    fn zero_conv_stack_gives_zero_map() {
        let mut g = Graph::new();
        let vars = consts(&mut g, &ConvStackParams::zeros());
        let x = g.constant(Tensor::filled(&[5, 16, 8], 0.7));
        let y = conv_stack_forward(&mut g, x, &vars).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spp_examples() {
        let cfg = SppConfig::default();
        assert_eq!(cfg.cells_per_channel(), 85);
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled(&[32, 39, 23], -0.25));
        let r = spp_forward(&mut g, x, &cfg).unwrap();
        assert_eq!(g.value(r).numel(), 2720);
        assert!(g.value(r).data().iter().all(|&v| v == -0.25));

        let data: alloc::vec::Vec<f64> = (0..64).map(|i| ((i * 37) % 64) as f64).collect();
        let x = g.constant(Tensor::new(&[1, 8, 8], data).unwrap());
        let r = spp_forward(&mut g, x, &SppConfig::new(alloc::vec![(1, 1)]).unwrap()).unwrap();
        assert_eq!(g.value(r).data(), &[63.0]);
    }

    #[test]
    fn spp_rejects_small_maps() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 7, 12]));
        match spp_forward(&mut g, x, &SppConfig::default()) {
            Err(crate::Error::BinTooLarge { bin_w: 8, bin_h: 8, .. }) => {}
            other => panic!("expected bin error, got {other:?}"),
        }
    }

    #[test]
    fn rnn_examples() {
        let mut g = Graph::new();
        let u = g.constant(Tensor::from_rows(&[[1.0]]));
        let w = g.constant(Tensor::from_rows(&[[1.0]]));
        let r1 = g.constant(Tensor::from_vec(alloc::vec![0.5]));
        let r2 = g.constant(Tensor::from_vec(alloc::vec![0.0]));
        let out = rnn_forward(&mut g, &[r1, r2], u, w, RnnOutput::PreTanh).unwrap();
        let v = g.value(out).data();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 0.5f64.tanh()).abs() < 1e-15);
        assert!((v[1] - 0.462_117_157_260_009_8).abs() < 1e-12);
        assert!(rnn_forward(&mut g, &[], u, w, RnnOutput::PreTanh).is_err());
    }

    #[test]
    fn rnn_single_step_is_projection() {
        let mut rng = rng::stream(3, &[]);
        let p = RnnParams::init(6, 4, &mut rng);
        let r = scaled_uniform(&[6], 1, &mut rng);
        let mut g = Graph::new();
        let (u, w) = (g.constant(p.u_in.clone()), g.constant(p.w_rec.clone()));
        let rv = g.constant(r.clone());
        let out = rnn_forward(&mut g, &[rv], u, w, RnnOutput::PreTanh).unwrap();
        for i in 0..4 {
            let expect: f64 = (0..6).map(|j| p.u_in.data()[i * 6 + j] * r.data()[j]).sum();
            assert!((g.value(out).data()[i] - expect).abs() < 1e-14);
        }
        // zero inputs stay zero whatever W is
        let z = g.constant(Tensor::zeros(&[6]));
        let out = rnn_forward(&mut g, &[z, z, z], u, w, RnnOutput::PreTanh).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_examples() {
        let mut g = Graph::new();
        let n = 4;
        let i = g.constant(Tensor::identity(n));
        let a = attention_matrix(&mut g, i, i, i).unwrap();
        for r in 0..n {
            for c in 0..n {
                let v = g.value(a).data()[r * n + c];
                if r == c {
                    assert!((v - 0.761_594_155_955_764_9).abs() < 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
        let z = g.constant(Tensor::zeros(&[n, n]));
        let a = attention_matrix(&mut g, i, i, z).unwrap();
        assert!(g.value(a).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn temporal_weight_examples() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[[0.1, 0.9], [0.3, 0.2]]));
        let (tp, tg) = temporal_weights(&mut g, a).unwrap();
        assert_eq!(g.value(tp).data(), &[0.9, 0.3]);
        assert_eq!(g.value(tg).data(), &[0.3, 0.9]);

        let c = g.constant(Tensor::filled(&[3, 2], 0.4));
        let (tp, tg) = temporal_weights(&mut g, c).unwrap();
        assert_eq!(g.value(tp).data(), &[0.4; 3]);
        assert_eq!(g.value(tg).data(), &[0.4; 2]);

        let one = g.constant(Tensor::from_rows(&[[-0.2]]));
        let (tp, tg) = temporal_weights(&mut g, one).unwrap();
        assert_eq!(g.value(tp).data(), &[-0.2]);
        assert_eq!(g.value(tg).data(), &[-0.2]);
    }

    #[test]
    fn summary_of_identity_rows_with_uniform_weights() {
        // U = 0 gives uniform attention, so v_p is the row mean.
        let mut g = Graph::new();
        let p = g.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]));
        let u = g.constant(Tensor::zeros(&[2, 2]));
        let out = attentive_summary(&mut g, p, p, u).unwrap();
        assert_eq!(g.value(out.v_p).data(), &[0.5, 0.5]);
        assert_eq!(g.value(out.a_p).data(), &[0.5, 0.5]);
    }

    #[test]
    fn one_hot_attention_picks_a_row() {
        let mut g = Graph::new();
        let p = g.constant(Tensor::from_rows(&[[0.1, 0.2], [30.0, 1.0], [-3.0, 4.0]]));
        let w = g.constant(Tensor::from_vec(alloc::vec![0.0, 1.0, 0.0]));
        let v = weighted_rows(&mut g, p, w).unwrap();
        assert_eq!(g.value(v).data(), &[30.0, 1.0]);
    }
}
