//! EpiNet head and the NEON assembly
//! `f(u, y, z) = μ(u, y) + σ_L(sg[φ(u, y)], z) + α σ_P(sg[φ(u, y)], z)`.
//!
//! Both head terms are linear in the index `z ∈ R^{d_z}`:
//!
//! - the learnable term is an MLP on `φ` producing a `d_s × d_z` matrix,
//!   multiplied by `z` (its output layer starts at zero);
//! - the prior term is `Σ_k z_k p_k(φ)` for `d_z` frozen random MLPs `p_k`.
//!
//! The stop-gradient only matters during training; for acquisition gradients
//! the full chain is differentiated with respect to `u`.

use alloc::format;
use alloc::vec::Vec;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ensure_len, Error, Result};
use crate::nn::{glorot_layer, Activation, Layer, Mat, Mlp, ParamTree, Tape, TreeId, Var};
use crate::operator::{BaseGraph, DecoderConfig, EncoderConfig, OperatorNet};
use crate::seed::{self, purpose};

/// Epistemic index `z ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpistemicIndex(pub Vec<f64>);

impl EpistemicIndex {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn sample_index<R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> EpistemicIndex {
    EpistemicIndex((0..dim).map(|_| StandardNormal.sample(rng)).collect())
}

/// `k` independent indices.
pub fn sample_indices<R: rand::Rng + ?Sized>(dim: usize, k: usize, rng: &mut R) -> Vec<EpistemicIndex> {
    (0..k).map(|_| sample_index(dim, rng)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpinetConfig {
    pub hidden: Vec<usize>,
    pub index_dim: usize,
    pub prior_hidden: Vec<usize>,
    pub prior_scale: f64,
}

impl Default for EpinetConfig {
    fn default() -> Self {
        EpinetConfig {
            hidden: alloc::vec![32, 32],
            index_dim: 16,
            prior_hidden: alloc::vec![5, 5],
            prior_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpinetHead {
    learnable: Mlp,
    prior: ParamTree,
    index_dim: usize,
    output_dim: usize,
    prior_scale: f64,
}

impl EpinetHead {
    pub fn init(feature_dim: usize, output_dim: usize, cfg: &EpinetConfig, seed: u64) -> Result<Self> {
        if cfg.index_dim == 0 {
            return Err(Error::Config("index dimension must be positive".into()));
        }
        if !(cfg.prior_scale >= 0.0 && cfg.prior_scale.is_finite()) {
            return Err(Error::Config(format!("prior scale must be ≥ 0, got {}", cfg.prior_scale)));
        }
        if cfg.prior_hidden.is_empty() || cfg.prior_hidden.contains(&0) {
            return Err(Error::Config("prior networks need nonzero hidden widths".into()));
        }
        let dz = cfg.index_dim;
        let mut widths = Vec::with_capacity(cfg.hidden.len() + 2);
        widths.push(feature_dim);
        widths.extend_from_slice(&cfg.hidden);
        widths.push(output_dim * dz);
        let mut learnable = Mlp::init("learnable", &widths, Activation::Tanh, &mut seed::rng_for(seed, &[purpose::LEARNABLE]))?;
        let last = learnable.params().len() - 1;
        let out = &mut learnable.params_mut().layers_mut()[last];
        out.weight.iter_mut().for_each(|w| *w = 0.0);

        // Member k's layers are stacked block-wise: layer 0 reads the shared
        // features, later layers are block-diagonal over members.
        let mut rng = seed::rng_for(seed, &[purpose::PRIOR]);
        let mut pw = Vec::with_capacity(cfg.prior_hidden.len() + 2);
        pw.push(feature_dim);
        pw.extend_from_slice(&cfg.prior_hidden);
        pw.push(output_dim);
        let mut prior = ParamTree::default();
        for (i, w) in pw.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let mut weight = Vec::with_capacity(dz * fan_out * fan_in);
            for _ in 0..dz {
                weight.extend(glorot_layer("", fan_out, fan_in, &mut rng).weight);
            }
            prior.push(Layer::new(format!("prior.{i}"), dz * fan_out, fan_in, weight, alloc::vec![0.0; dz * fan_out])?);
        }
        Ok(EpinetHead {
            learnable,
            prior,
            index_dim: dz,
            output_dim,
            prior_scale: cfg.prior_scale,
        })
    }

    pub fn from_parts(learnable: Mlp, prior: ParamTree, index_dim: usize, output_dim: usize, prior_scale: f64) -> Result<Self> {
        ensure_len("learnable head output", index_dim * output_dim, learnable.output_dim())?;
        ensure_len("prior output", index_dim * output_dim, prior.layer(prior.len() - 1).rows)?;
        ensure_len("prior input", learnable.input_dim(), prior.layer(0).cols)?;
        Ok(EpinetHead {
            learnable,
            prior,
            index_dim,
            output_dim,
            prior_scale,
        })
    }

    pub fn learnable(&self) -> &Mlp {
        &self.learnable
    }

    pub fn learnable_mut(&mut self) -> &mut Mlp {
        &mut self.learnable
    }

    pub fn prior(&self) -> &ParamTree {
        &self.prior
    }

    pub fn index_dim(&self) -> usize {
        self.index_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn prior_scale(&self) -> f64 {
        self.prior_scale
    }

    pub fn feature_dim(&self) -> usize {
        self.learnable.input_dim()
    }

    /// Learnable head: rows of `d_z · d_s` index-major coefficients.
    pub fn record_learnable(&self, tape: &mut Tape<'_>, tree: TreeId, x: Var) -> Result<Var> {
        Ok(self.learnable.record(tape, tree, x)?.0)
    }

    /// All prior members at once: column `k · d_s + s` is channel `s` of member `k`.
    pub fn record_prior(&self, tape: &mut Tape<'_>, tree: TreeId, x: Var) -> Result<Var> {
        let n = self.prior.len();
        let mut h = tape.affine(x, tree, 0)?;
        for i in 1..n {
            h = tape.activate(h, Activation::Tanh);
            h = tape.grouped_affine(h, tree, i, self.index_dim)?;
        }
        Ok(h)
    }

    fn eval_head(&self, features: &[f64], z: &[f64], learnable: bool) -> Result<Vec<f64>> {
        ensure_len("epinet features", self.feature_dim(), features.len())?;
        ensure_len("epistemic index", self.index_dim, z.len())?;
        let mut tape = Tape::new();
        let x = tape.constant(Mat::row_vector(features.to_vec()));
        let m = if learnable {
            let id = tape.register(self.learnable.params(), false);
            self.record_learnable(&mut tape, id, x)?
        } else {
            let id = tape.register(&self.prior, false);
            self.record_prior(&mut tape, id, x)?
        };
        let out = tape.contract(m, z)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// `Σ_k z_k p_k(x̃)` (unscaled).
    pub fn prior_forward(&self, features: &[f64], z: &EpistemicIndex) -> Result<Vec<f64>> {
        self.eval_head(features, z.as_slice(), false)
    }

    /// `M(x̃) z`.
    pub fn learnable_forward(&self, features: &[f64], z: &EpistemicIndex) -> Result<Vec<f64>> {
        self.eval_head(features, z.as_slice(), true)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeonConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub epinet: EpinetConfig,
}

/// Tape handles for the four parameter trees of a [`NeonModel`].
#[derive(Debug, Clone, Copy)]
pub struct NeonTrees {
    pub encoder: TreeId,
    pub decoder: TreeId,
    pub learnable: TreeId,
    pub prior: TreeId,
}

#[derive(Debug, Clone, Copy)]
pub struct NeonGraph {
    pub base: BaseGraph,
    pub features: Var,
    pub learnable: Var,
    pub prior: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeonModel {
    base: OperatorNet,
    head: EpinetHead,
}

impl NeonModel {
    pub fn init(cfg: &NeonConfig, seed: u64) -> Result<Self> {
        let base = OperatorNet::init(&cfg.encoder, &cfg.decoder, seed)?;
        let head = EpinetHead::init(base.feature_dim(), base.output_dim(), &cfg.epinet, seed)?;
        Ok(NeonModel { base, head })
    }

    pub fn from_parts(base: OperatorNet, head: EpinetHead) -> Result<Self> {
        ensure_len("epinet feature width", base.feature_dim(), head.feature_dim())?;
        ensure_len("epinet output width", base.output_dim(), head.output_dim())?;
        Ok(NeonModel { base, head })
    }

    pub fn base(&self) -> &OperatorNet {
        &self.base
    }

    pub fn base_mut(&mut self) -> &mut OperatorNet {
        &mut self.base
    }

    pub fn head(&self) -> &EpinetHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut EpinetHead {
        &mut self.head
    }

    pub fn index_dim(&self) -> usize {
        self.head.index_dim
    }

    pub fn output_dim(&self) -> usize {
        self.base.output_dim()
    }

    pub fn prior_scale(&self) -> f64 {
        self.head.prior_scale
    }

    /// Trainable parameters: base network plus learnable head.
    pub fn num_trainable_params(&self) -> usize {
        self.base.num_params() + self.head.learnable.params().num_params()
    }

    /// Encoder, decoder and learnable-head parameters, in that order.
    pub fn trainable_trees(&self) -> [&ParamTree; 3] {
        [self.base.encoder().params(), self.base.decoder(), self.head.learnable.params()]
    }

    pub fn trainable_trees_mut(&mut self) -> [&mut ParamTree; 3] {
        let (enc, dec) = self.base.trees_mut();
        [enc, dec, self.head.learnable.params_mut()]
    }

    /// Registers the trees; the prior is always frozen.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>, trainable: bool) -> NeonTrees {
        NeonTrees {
            encoder: tape.register(self.base.encoder().params(), trainable),
            decoder: tape.register(self.base.decoder(), trainable),
            learnable: tape.register(self.head.learnable.params(), trainable),
            prior: tape.register(&self.head.prior, false),
        }
    }

    /// Records base network and both head terms. `queries` holds the
    /// unit-coordinate query point of every row, `qfeat` its decoder encoding.
    #[allow(clippy::too_many_arguments)]
    pub fn record(
        &self,
        tape: &mut Tape<'_>,
        trees: NeonTrees,
        u: Var,
        row_design: &[usize],
        qfeat: Var,
        queries: Var,
        stop_gradient: bool,
    ) -> Result<NeonGraph> {
        let base = self.base.record(tape, trees.encoder, trees.decoder, u, row_design, qfeat)?;
        let feats = tape.concat_cols(&[base.beta_rows, base.last_hidden, queries])?;
        let x = if stop_gradient { tape.detach(feats) } else { feats };
        let learnable = self.head.record_learnable(tape, trees.learnable, x)?;
        let prior = self.head.record_prior(tape, trees.prior, x)?;
        Ok(NeonGraph {
            base,
            features: x,
            learnable,
            prior,
        })
    }

    /// `μ + M z + α P z` for one index.
    pub fn record_prediction(&self, tape: &mut Tape<'_>, graph: &NeonGraph, z: &[f64]) -> Result<Var> {
        let l = tape.contract(graph.learnable, z)?;
        let p = tape.contract(graph.prior, z)?;
        let p = tape.scale(p, self.head.prior_scale);
        let s = tape.add(graph.base.prediction, l)?;
        tape.add(s, p)
    }

    /// `ĥ(u, y, z)` for a single design and query point (unit coordinates).
    pub fn neon_forward(&self, u: &[f64], y: &[f64], z: &EpistemicIndex) -> Result<Vec<f64>> {
        ensure_len("design dimension", self.base.input_dim(), u.len())?;
        ensure_len("epistemic index", self.index_dim(), z.dim())?;
        let qm = Mat::row_vector(y.to_vec());
        let qf = self.base.query_features(&qm)?;
        let mut tape = Tape::new();
        let trees = self.register(&mut tape, false);
        let uv = tape.constant(Mat::row_vector(u.to_vec()));
        let qf = tape.constant(qf);
        let q = tape.constant(qm);
        let g = self.record(&mut tape, trees, uv, &[0], qf, q, true)?;
        let out = self.record_prediction(&mut tape, &g, z.as_slice())?;
        Ok(tape.value(out).data().to_vec())
    }
}

/// Deep ensemble viewed as an ENN with a discrete index `z ∈ {1..n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeepEnsemble {
    members: Vec<OperatorNet>,
}

impl DeepEnsemble {
    pub fn new(members: Vec<OperatorNet>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Config("ensemble needs at least one member".into()));
        }
        Ok(DeepEnsemble { members })
    }

    /// `n` independently initialised members; member `i` uses seed stream `i`.
    pub fn init(n: usize, enc: &EncoderConfig, dec: &DecoderConfig, seed: u64) -> Result<Self> {
        let members = (0..n)
            .map(|i| OperatorNet::init(enc, dec, seed::derive(seed, &[i as u64])))
            .collect::<Result<Vec<_>>>()?;
        DeepEnsemble::new(members)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[OperatorNet] {
        &self.members
    }

    pub fn members_mut(&mut self) -> &mut [OperatorNet] {
        &mut self.members
    }

    pub fn num_trainable_params(&self) -> usize {
        self.members.iter().map(OperatorNet::num_params).sum()
    }

    /// Prediction of member `z` (1-based).
    pub fn ensemble_enn_forward(&self, u: &[f64], y: &[f64], z: usize) -> Result<Vec<f64>> {
        if z == 0 || z > self.members.len() {
            return Err(Error::IndexOutOfRange {
                index: z,
                len: self.members.len(),
            });
        }
        Ok(self.members[z - 1].base_forward(u, y)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{DecoderKind, FourierConfig};
    use alloc::vec;

    pub(crate) fn small_config(kind: DecoderKind, alpha: f64) -> NeonConfig {
        NeonConfig {
            encoder: EncoderConfig {
                input_dim: 3,
                hidden: vec![8],
                latent_dim: 6,
            },
            decoder: DecoderConfig {
                kind,
                hidden: vec![7, 5],
                query_dim: 2,
                output_dim: 2,
                fourier: Some(FourierConfig { n_freq: 4, scale: 1.0 }),
            },
            epinet: EpinetConfig {
                hidden: vec![6],
                index_dim: 4,
                prior_hidden: vec![3, 3],
                prior_scale: alpha,
            },
        }
    }

    #[test]
    fn index_sampling_is_seeded_and_centred() {
        let a = sample_index(16, &mut seed::rng(4));
        let b = sample_index(16, &mut seed::rng(4));
        assert_eq!(a, b);
        assert_eq!(a.dim(), 16);
        let mut rng = seed::rng(5);
        let n = 100_000;
        let mut mean = [0.0; 4];
        for _ in 0..n {
            let z = sample_index(4, &mut rng);
            for (m, v) in mean.iter_mut().zip(z.as_slice()) {
                *m += v / n as f64;
            }
        }
        // CLT: sd of the mean is 1/sqrt(n) ≈ 0.0032, so 0.02 is > 6 sd
        assert!(mean.iter().all(|m| m.abs() < 0.02), "{mean:?}");
    }

    #[test]
    fn prior_is_linear_in_index() {
        let model = NeonModel::init(&small_config(DecoderKind::Split, 1.0), 3).unwrap();
        let (_, f) = model.base().base_forward(&[0.2, 0.5, 0.9], &[0.1, 0.3]).unwrap();
        let x = f.to_vec();
        let head = model.head();
        let zero = head.prior_forward(&x, &EpistemicIndex(vec![0.0; 4])).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let z1 = sample_index(4, &mut seed::rng(1));
        let z2 = sample_index(4, &mut seed::rng(2));
        let (a, b) = (0.7, -1.3);
        let mix = EpistemicIndex(z1.0.iter().zip(&z2.0).map(|(p, q)| a * p + b * q).collect());
        let lhs = head.prior_forward(&x, &mix).unwrap();
        let p1 = head.prior_forward(&x, &z1).unwrap();
        let p2 = head.prior_forward(&x, &z2).unwrap();
        for s in 0..2 {
            assert!((lhs[s] - (a * p1[s] + b * p2[s])).abs() < 1e-12);
        }
    }

    #[test]
    fn prior_basis_index_selects_member() {
        let model = NeonModel::init(&small_config(DecoderKind::Concat, 1.0), 8).unwrap();
        let (_, f) = model.base().base_forward(&[0.4, 0.1, 0.6], &[0.9, 0.3]).unwrap();
        let x = f.to_vec();
        let prior = model.head().prior();
        // member k evaluated by hand from its blocks
        for k in 0..4 {
            let mut e = vec![0.0; 4];
            e[k] = 1.0;
            let got = model.head().prior_forward(&x, &EpistemicIndex(e)).unwrap();
            let l0 = prior.layer(0);
            let h0: Vec<f64> = (0..3)
                .map(|o| {
                    let row = k * 3 + o;
                    (l0.bias[row] + (0..x.len()).map(|i| l0.weight[row * x.len() + i] * x[i]).sum::<f64>()).tanh()
                })
                .collect();
            let l1 = prior.layer(1);
            let h1: Vec<f64> = (0..3)
                .map(|o| {
                    let row = k * 3 + o;
                    (l1.bias[row] + (0..3).map(|i| l1.weight[row * 3 + i] * h0[i]).sum::<f64>()).tanh()
                })
                .collect();
            let l2 = prior.layer(2);
            for s in 0..2 {
                let row = k * 2 + s;
                let want = l2.bias[row] + (0..3).map(|i| l2.weight[row * 3 + i] * h1[i]).sum::<f64>();
                assert!((got[s] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn learnable_head_starts_at_zero_and_is_linear() {
        let mut model = NeonModel::init(&small_config(DecoderKind::Split, 1.0), 3).unwrap();
        let (_, f) = model.base().base_forward(&[0.2, 0.5, 0.9], &[0.1, 0.3]).unwrap();
        let x = f.to_vec();
        let z = sample_index(4, &mut seed::rng(7));
        assert!(model.head().learnable_forward(&x, &z).unwrap().iter().all(|&v| v == 0.0));
        for v in model.head_mut().learnable_mut().params_mut().values_mut() {
            *v += 0.05;
        }
        let zero = model.head().learnable_forward(&x, &EpistemicIndex(vec![0.0; 4])).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let z2 = EpistemicIndex(z.0.iter().map(|v| 3.0 * v).collect());
        let a = model.head().learnable_forward(&x, &z).unwrap();
        let b = model.head().learnable_forward(&x, &z2).unwrap();
        for s in 0..2 {
            assert!((b[s] - 3.0 * a[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn neon_reduces_to_base_without_prior_or_index() {
        let model = NeonModel::init(&small_config(DecoderKind::Split, 0.0), 11).unwrap();
        let u = [0.3, 0.3, 0.8];
        let y = [0.6, 0.2];
        let (base, _) = model.base().base_forward(&u, &y).unwrap();
        let z = sample_index(4, &mut seed::rng(1));
        assert_eq!(model.neon_forward(&u, &y, &z).unwrap(), base);
        let with_prior = NeonModel::init(&small_config(DecoderKind::Split, 2.5), 11).unwrap();
        let zero = EpistemicIndex(vec![0.0; 4]);
        assert_eq!(with_prior.neon_forward(&u, &y, &zero).unwrap(), base);
        assert_ne!(with_prior.neon_forward(&u, &y, &z).unwrap(), base);
    }

    #[test]
    fn ensemble_indexing() {
        let cfg = small_config(DecoderKind::Concat, 0.0);
        let ens = DeepEnsemble::init(3, &cfg.encoder, &cfg.decoder, 2).unwrap();
        let u = [0.1, 0.2, 0.3];
        let y = [0.5, 0.5];
        for z in 1..=3 {
            assert_eq!(
                ens.ensemble_enn_forward(&u, &y, z).unwrap(),
                ens.members()[z - 1].base_forward(&u, &y).unwrap().0
            );
        }
        assert!(matches!(ens.ensemble_enn_forward(&u, &y, 0), Err(Error::IndexOutOfRange { .. })));
        assert!(ens.ensemble_enn_forward(&u, &y, 4).is_err());
        let single = DeepEnsemble::init(1, &cfg.encoder, &cfg.decoder, 2).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single.ensemble_enn_forward(&u, &y, 1).is_ok());
    }
}
