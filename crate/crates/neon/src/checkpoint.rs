//! Binary parameter checkpoints.
//!
//! Layout (little endian): magic `NEON`, version `u32`, layer count `u32`;
//! version 2 adds the prior scale α (`f64`) and the index dimension `u32`.
//! Each layer is then written as name length `u32`, UTF-8 name, rows `u32`,
//! cols `u32`, the row-major weight and finally the bias, all as `f64`.
//!
//! Version 1 holds a bare [`ParamTree`]. Version 2 holds a whole
//! [`NeonModel`]; its layer names carry the tree they belong to
//! (`encoder/…`, `decoder:split/…` or `decoder:concat/…`, `learnable/…`,
//! `prior/…` and an optional `fourier/B` whose bias stores the scale).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use neon_core::epinet::{EpinetHead, NeonModel};
use neon_core::nn::{Activation, FourierFeatureMap, Layer, Mat, Mlp, ParamTree};
use neon_core::operator::{DecoderKind, OperatorNet};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"NEON";
pub const TREE_VERSION: u32 = 1;
pub const MODEL_VERSION: u32 = 2;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64(w: &mut impl Write, v: f64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    Error::Format(format!("checkpoint truncated ({e})"))
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in u32")))
}

fn write_layer(w: &mut impl Write, name: &str, layer: &Layer) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    put_u32(w, to_u32(name.len(), "name length")?).map_err(io)?;
    w.write_all(name.as_bytes()).map_err(io)?;
    put_u32(w, to_u32(layer.rows, "rows")?).map_err(io)?;
    put_u32(w, to_u32(layer.cols, "cols")?).map_err(io)?;
    for &v in layer.weight.iter().chain(&layer.bias) {
        put_f64(w, v).map_err(io)?;
    }
    Ok(())
}

fn read_layer(r: &mut impl Read) -> Result<Layer> {
    let len = get_u32(r)? as usize;
    if len > 1 << 16 {
        return Err(Error::Format(format!("implausible layer name length {len}")));
    }
    let mut name = vec![0u8; len];
    r.read_exact(&mut name).map_err(truncated)?;
    let name = String::from_utf8(name).map_err(|_| Error::Format("layer name is not UTF-8".into()))?;
    let rows = get_u32(r)? as usize;
    let cols = get_u32(r)? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|n| *n <= 1 << 28)
        .ok_or_else(|| Error::Format(format!("implausible layer shape {rows}×{cols}")))?;
    let weight = (0..n).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
    let bias = (0..rows).map(|_| get_f64(r)).collect::<Result<Vec<_>>>()?;
    Ok(Layer::new(name, rows, cols, weight, bias)?)
}

fn read_header(r: &mut impl Read) -> Result<(u32, usize)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a NEON checkpoint (bad magic)".into()));
    }
    let version = get_u32(r)?;
    let count = get_u32(r)? as usize;
    Ok((version, count))
}

pub fn write_tree(w: &mut impl Write, tree: &ParamTree) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    w.write_all(MAGIC).map_err(io)?;
    put_u32(w, TREE_VERSION).map_err(io)?;
    put_u32(w, to_u32(tree.len(), "layer count")?).map_err(io)?;
    for layer in tree.layers() {
        write_layer(w, &layer.name, layer)?;
    }
    Ok(())
}

pub fn read_tree(r: &mut impl Read) -> Result<ParamTree> {
    let (version, count) = read_header(r)?;
    if version != TREE_VERSION {
        return Err(Error::Format(format!("expected a version {TREE_VERSION} checkpoint, found {version}")));
    }
    let layers = (0..count).map(|_| read_layer(r)).collect::<Result<Vec<_>>>()?;
    Ok(ParamTree::new(layers))
}

pub fn write_model(w: &mut impl Write, model: &NeonModel) -> Result<()> {
    let io = |e| Error::io("<checkpoint>", e);
    let base = model.base();
    let head = model.head();
    let dec = match base.kind() {
        DecoderKind::Split => "decoder:split",
        DecoderKind::Concat => "decoder:concat",
    };
    let mut layers: Vec<(String, Layer)> = Vec::new();
    let mut add = |tree: &str, t: &ParamTree| {
        for l in t.layers() {
            layers.push((format!("{tree}/{}", l.name), l.clone()));
        }
    };
    add("encoder", base.encoder().params());
    add(dec, base.decoder());
    add("learnable", head.learnable().params());
    add("prior", head.prior());
    if let Some(f) = base.fourier() {
        let b = f.frequencies();
        let layer = Layer::new("B", b.rows(), b.cols(), b.data().to_vec(), vec![f.scale(); b.rows()])?;
        layers.push(("fourier/B".into(), layer));
    }
    w.write_all(MAGIC).map_err(io)?;
    put_u32(w, MODEL_VERSION).map_err(io)?;
    put_u32(w, to_u32(layers.len(), "layer count")?).map_err(io)?;
    put_f64(w, model.prior_scale()).map_err(io)?;
    put_u32(w, to_u32(model.index_dim(), "index dimension")?).map_err(io)?;
    for (name, layer) in &layers {
        write_layer(w, name, layer)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<NeonModel> {
    let (version, count) = read_header(r)?;
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("expected a version {MODEL_VERSION} checkpoint, found {version}")));
    }
    let alpha = get_f64(r)?;
    let dz = get_u32(r)? as usize;
    let mut trees: [ParamTree; 4] = Default::default();
    let mut kind = None;
    let mut fourier = None;
    for _ in 0..count {
        let mut layer = read_layer(r)?;
        let (tree, name) = layer
            .name
            .split_once('/')
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .ok_or_else(|| Error::Format(format!("layer {:?} has no tree prefix", layer.name)))?;
        layer.name = name;
        let slot = match tree.as_str() {
            "encoder" => 0,
            "decoder:split" | "decoder:concat" => {
                let k = if tree == "decoder:split" { DecoderKind::Split } else { DecoderKind::Concat };
                if kind.is_some_and(|prev| prev != k) {
                    return Err(Error::Format("mixed decoder kinds".into()));
                }
                kind = Some(k);
                1
            }
            "learnable" => 2,
            "prior" => 3,
            "fourier" => {
                let scale = layer.bias.first().copied().unwrap_or(1.0);
                let b = Mat::from_vec(layer.rows, layer.cols, layer.weight)?;
                fourier = Some(FourierFeatureMap::from_matrix(b, scale));
                continue;
            }
            other => return Err(Error::Format(format!("unknown tree {other:?}"))),
        };
        trees[slot].push(layer);
    }
    if trees.iter().any(ParamTree::is_empty) {
        return Err(Error::Format("checkpoint is missing a parameter tree".into()));
    }
    let [enc, dec, learn, prior] = trees;
    let kind = kind.ok_or_else(|| Error::Format("no decoder layers".into()))?;
    let latent = enc.layer(enc.len() - 1).rows;
    let first_cols = dec.layer(0).cols;
    let hidden = dec.len() - 1;
    let query_dim = match &fourier {
        Some(f) => f.input_dim(),
        None => {
            let taken = match kind {
                DecoderKind::Concat => latent,
                DecoderKind::Split => latent / hidden.max(1),
            };
            first_cols
                .checked_sub(taken)
                .ok_or_else(|| Error::Format("decoder input narrower than the latent code".into()))?
        }
    };
    let output_dim = dec.layer(dec.len() - 1).rows;
    let base = OperatorNet::from_parts(Mlp::from_params(enc, Activation::Tanh)?, dec, kind, fourier, query_dim)?;
    let head = EpinetHead::from_parts(Mlp::from_params(learn, Activation::Tanh)?, prior, dz, output_dim, alpha)?;
    Ok(NeonModel::from_parts(base, head)?)
}

pub fn save_model(path: &Path, model: &NeonModel) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_model(&mut w, model)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<NeonModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_model(&mut BufReader::new(f))
}
