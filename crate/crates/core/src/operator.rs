//! Encoder/decoder operator network `μ(u, y) = d(e(u), y)`.
//!
//! The encoder maps a design `u` to a latent code `β`; the decoder maps
//! `(β, y)` to a prediction at query point `y`. Two decoders are provided:
//!
//! - **Concat**: an MLP on `concat(β, ff(y))`.
//! - **Split**: `β` is cut into `N` equal chunks, one per hidden layer. Layer 1
//!   sees `concat(ff(y), β¹)`, layer `i > 1` sees `concat(h_{i-1}, βⁱ)`.
//!
//! `ff` is a random Fourier encoding of `y` (or `y` itself when disabled).
//! Query points are expected in unit coordinates.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{ensure_len, Error, Result};
use crate::nn::{glorot_layer, Activation, FourierFeatureMap, Mat, Mlp, ParamTree, Tape, TreeId, Var};
use crate::seed::{self, purpose};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Concat,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierConfig {
    pub n_freq: usize,
    pub scale: f64,
}

impl Default for FourierConfig {
    fn default() -> Self {
        FourierConfig { n_freq: 64, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    pub kind: DecoderKind,
    pub hidden: Vec<usize>,
    pub query_dim: usize,
    pub output_dim: usize,
    pub fourier: Option<FourierConfig>,
}

/// `φ(u, y) = (β, μ_last, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseFeatures {
    pub beta: Vec<f64>,
    pub last_hidden: Vec<f64>,
    pub query: Vec<f64>,
}

impl BaseFeatures {
    pub fn len(&self) -> usize {
        self.beta.len() + self.last_hidden.len() + self.query.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.beta);
        v.extend_from_slice(&self.last_hidden);
        v.extend_from_slice(&self.query);
        v
    }
}

/// Nodes produced when the base network is recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BaseGraph {
    pub prediction: Var,
    pub last_hidden: Var,
    /// Latent codes broadcast to one row per query row.
    pub beta_rows: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNet {
    encoder: Mlp,
    decoder: ParamTree,
    kind: DecoderKind,
    fourier: Option<FourierFeatureMap>,
    query_dim: usize,
}

impl OperatorNet {
    pub fn init(enc: &EncoderConfig, dec: &DecoderConfig, seed: u64) -> Result<Self> {
        if enc.latent_dim == 0 || enc.input_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if dec.hidden.is_empty() || dec.hidden.contains(&0) {
            return Err(Error::Config("decoder needs at least one nonzero hidden width".into()));
        }
        if dec.output_dim == 0 || dec.query_dim == 0 {
            return Err(Error::Config("decoder output and query dimensions must be positive".into()));
        }
        let n = dec.hidden.len();
        if dec.kind == DecoderKind::Split && enc.latent_dim % n != 0 {
            return Err(Error::Config(format!(
                "split decoder: latent dimension {} is not divisible by {} hidden layers",
                enc.latent_dim, n
            )));
        }
        let fourier = match dec.fourier {
            Some(fc) => Some(FourierFeatureMap::sample(
                fc.n_freq,
                dec.query_dim,
                fc.scale,
                &mut seed::rng_for(seed, &[purpose::FOURIER]),
            )?),
            None => None,
        };
        let mut rng = seed::rng_for(seed, &[purpose::BASE]);
        let mut widths = Vec::with_capacity(enc.hidden.len() + 2);
        widths.push(enc.input_dim);
        widths.extend_from_slice(&enc.hidden);
        widths.push(enc.latent_dim);
        let encoder = Mlp::init("encoder", &widths, Activation::Tanh, &mut rng)?;

        let qdim = fourier.as_ref().map_or(dec.query_dim, FourierFeatureMap::output_dim);
        let chunk = enc.latent_dim / n;
        let mut decoder = ParamTree::default();
        for (i, &w) in dec.hidden.iter().enumerate() {
            let fan_in = match (dec.kind, i) {
                (DecoderKind::Concat, 0) => enc.latent_dim + qdim,
                (DecoderKind::Concat, _) => dec.hidden[i - 1],
                (DecoderKind::Split, 0) => qdim + chunk,
                (DecoderKind::Split, _) => dec.hidden[i - 1] + chunk,
            };
            decoder.push(glorot_layer(format!("decoder.{i}"), w, fan_in, &mut rng));
        }
        decoder.push(glorot_layer(format!("decoder.{n}"), dec.output_dim, dec.hidden[n - 1], &mut rng));
        Ok(OperatorNet {
            encoder,
            decoder,
            kind: dec.kind,
            fourier,
            query_dim: dec.query_dim,
        })
    }

    /// Assembles a network from explicit parameters (e.g. a checkpoint).
    pub fn from_parts(
        encoder: Mlp,
        decoder: ParamTree,
        kind: DecoderKind,
        fourier: Option<FourierFeatureMap>,
        query_dim: usize,
    ) -> Result<Self> {
        let net = OperatorNet {
            encoder,
            decoder,
            kind,
            fourier,
            query_dim,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_hidden();
        if n == 0 {
            return Err(Error::Config("decoder needs a hidden layer".into()));
        }
        let latent = self.latent_dim();
        let qdim = self.query_feature_dim();
        if let Some(f) = &self.fourier {
            ensure_len("fourier input dimension", self.query_dim, f.input_dim())?;
        }
        if self.kind == DecoderKind::Split && latent % n != 0 {
            return Err(Error::Config(format!(
                "split decoder: latent dimension {latent} is not divisible by {n} hidden layers"
            )));
        }
        let chunk = latent / n;
        let layers = self.decoder.layers();
        for i in 0..n {
            let expected = match (self.kind, i) {
                (DecoderKind::Concat, 0) => latent + qdim,
                (DecoderKind::Concat, _) => layers[i - 1].rows,
                (DecoderKind::Split, 0) => qdim + chunk,
                (DecoderKind::Split, _) => layers[i - 1].rows + chunk,
            };
            ensure_len("decoder layer input", expected, layers[i].cols)?;
        }
        ensure_len("decoder output layer input", layers[n - 1].rows, layers[n].cols)
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut Mlp {
        &mut self.encoder
    }

    pub fn decoder(&self) -> &ParamTree {
        &self.decoder
    }

    pub fn decoder_mut(&mut self) -> &mut ParamTree {
        &mut self.decoder
    }

    /// Both trainable trees, for an optimizer.
    pub fn trees_mut(&mut self) -> (&mut ParamTree, &mut ParamTree) {
        (self.encoder.params_mut(), &mut self.decoder)
    }

    pub fn kind(&self) -> DecoderKind {
        self.kind
    }

    pub fn fourier(&self) -> Option<&FourierFeatureMap> {
        self.fourier.as_ref()
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn query_dim(&self) -> usize {
        self.query_dim
    }

    pub fn output_dim(&self) -> usize {
        self.decoder.layer(self.decoder.len() - 1).rows
    }

    pub fn num_hidden(&self) -> usize {
        self.decoder.len().saturating_sub(1)
    }

    pub fn last_hidden_dim(&self) -> usize {
        self.decoder.layer(self.decoder.len() - 1).cols
    }

    /// Width of `φ(u, y)`.
    pub fn feature_dim(&self) -> usize {
        self.latent_dim() + self.last_hidden_dim() + self.query_dim
    }

    fn query_feature_dim(&self) -> usize {
        self.fourier.as_ref().map_or(self.query_dim, FourierFeatureMap::output_dim)
    }

    /// Trainable parameter count (Fourier frequencies are fixed, so excluded).
    pub fn num_params(&self) -> usize {
        self.encoder.params().num_params() + self.decoder.num_params()
    }

    /// Decoder input encoding of unit-coordinate query points, one row each.
    pub fn query_features(&self, queries: &Mat) -> Result<Mat> {
        ensure_len("query dimension", self.query_dim, queries.cols())?;
        match &self.fourier {
            Some(f) => f.encode_rows(queries),
            None => Ok(queries.clone()),
        }
    }

    pub fn encode(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(u)
    }

    /// Records the encoder on a tape. `u` holds one design per row.
    pub fn record_encoder(&self, tape: &mut Tape<'_>, enc: TreeId, u: Var) -> Result<Var> {
        Ok(self.encoder.record(tape, enc, u)?.0)
    }

    /// Records the decoder on latent rows `beta_rows` and query features `qfeat`
    /// (same number of rows). Returns (prediction, last hidden activations).
    pub fn record_decoder(&self, tape: &mut Tape<'_>, dec: TreeId, beta_rows: Var, qfeat: Var) -> Result<(Var, Var)> {
        let n = self.num_hidden();
        let mut h = match self.kind {
            DecoderKind::Concat => tape.concat_cols(&[beta_rows, qfeat])?,
            DecoderKind::Split => {
                let chunk = self.latent_dim() / n;
                let b0 = tape.slice_cols(beta_rows, 0, chunk)?;
                tape.concat_cols(&[qfeat, b0])?
            }
        };
        for i in 0..n {
            if i > 0 && self.kind == DecoderKind::Split {
                let chunk = self.latent_dim() / n;
                let bi = tape.slice_cols(beta_rows, i * chunk, chunk)?;
                h = tape.concat_cols(&[h, bi])?;
            }
            let a = tape.affine(h, dec, i)?;
            h = tape.activate(a, Activation::Tanh);
        }
        let out = tape.affine(h, dec, n)?;
        Ok((out, h))
    }

    /// Records the whole base network: `u` has one design per row and
    /// `row_design[r]` names the design used by query row `r`.
    pub fn record(
        &self,
        tape: &mut Tape<'_>,
        enc: TreeId,
        dec: TreeId,
        u: Var,
        row_design: &[usize],
        qfeat: Var,
    ) -> Result<BaseGraph> {
        let beta = self.record_encoder(tape, enc, u)?;
        let beta_rows = tape.gather_rows(beta, row_design)?;
        let (prediction, last_hidden) = self.record_decoder(tape, dec, beta_rows, qfeat)?;
        Ok(BaseGraph {
            prediction,
            last_hidden,
            beta_rows,
        })
    }

    pub fn decode(&self, beta: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        ensure_len("latent code", self.latent_dim(), beta.len())?;
        let qf = self.query_features(&Mat::row_vector(y.to_vec()))?;
        let mut tape = Tape::new();
        let dec = tape.register(&self.decoder, false);
        let b = tape.constant(Mat::row_vector(beta.to_vec()));
        let q = tape.constant(qf);
        let (out, _) = self.record_decoder(&mut tape, dec, b, q)?;
        Ok(tape.value(out).data().to_vec())
    }

    /// `μ(u, y)` and the feature vector `φ(u, y)` in one pass.
    pub fn base_forward(&self, u: &[f64], y: &[f64]) -> Result<(Vec<f64>, BaseFeatures)> {
        ensure_len("design dimension", self.input_dim(), u.len())?;
        ensure_len("query dimension", self.query_dim, y.len())?;
        let qf = self.query_features(&Mat::row_vector(y.to_vec()))?;
        let mut tape = Tape::new();
        let enc = tape.register(self.encoder.params(), false);
        let dec = tape.register(&self.decoder, false);
        let uv = tape.constant(Mat::row_vector(u.to_vec()));
        let q = tape.constant(qf);
        let g = self.record(&mut tape, enc, dec, uv, &[0], q)?;
        Ok((
            tape.value(g.prediction).data().to_vec(),
            BaseFeatures {
                beta: tape.value(g.beta_rows).data().to_vec(),
                last_hidden: tape.value(g.last_hidden).data().to_vec(),
                query: y.to_vec(),
            },
        ))
    }
}
