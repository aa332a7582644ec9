//! Reverse-mode differentiation over batched matrix operations.
//!
//! A [`Tape`] records a computation eagerly (values are available as soon as a
//! node is added) and replays it backwards in [`Tape::backward`]. Nodes are whole
//! matrices, so the per-node bookkeeping is negligible next to the matrix work.
//!
//! Parameters are not copied onto the tape: layers are referenced through a
//! registered [`ParamTree`], and their gradients are accumulated into a tree of
//! the same shape. Trees registered as frozen take part in the forward pass and
//! propagate gradients to their inputs but never receive gradients themselves.

use alloc::string::ToString;
use alloc::vec::Vec;
use num_traits::Float;

use super::matrix::{axpy, matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, Mat};
use super::mlp::Activation;
use super::params::ParamTree;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeId(usize);

enum Op {
    Leaf,
    Weight { tree: usize, layer: usize },
    Bias { tree: usize, layer: usize },
    Affine { x: usize, tree: usize, layer: usize },
    GroupedAffine { x: usize, tree: usize, layer: usize, groups: usize },
    Activate { x: usize, act: Activation },
    Concat(Vec<usize>),
    Slice { x: usize, start: usize },
    Gather { x: usize, idx: Vec<usize> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Contract { m: usize, z: Vec<f64> },
    RelativeL2 { pred: usize, target: Mat, groups: Vec<usize>, stats: Vec<(f64, f64)>, active: usize },
    Sum(usize),
    SumSquares(usize),
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

struct TreeRef<'a> {
    tree: &'a ParamTree,
    trainable: bool,
}

pub struct Tape<'a> {
    trees: Vec<TreeRef<'a>>,
    nodes: Vec<Node>,
}

/// Result of a backward pass.
pub struct Gradients {
    params: Vec<Option<ParamTree>>,
    leaves: Vec<Option<Mat>>,
}

impl Gradients {
    /// Gradient for a trainable tree (zeros if nothing depended on it).
    pub fn param(&self, tree: TreeId) -> Option<&ParamTree> {
        self.params[tree.0].as_ref()
    }

    pub fn take_param(&mut self, tree: TreeId) -> Option<ParamTree> {
        self.params[tree.0].take()
    }

    /// Gradient with respect to an input leaf.
    pub fn wrt(&self, v: Var) -> Option<&Mat> {
        self.leaves.get(v.0).and_then(Option::as_ref)
    }
}

impl<'a> Default for Tape<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            trees: Vec::new(),
            nodes: Vec::new(),
        }
    }

    pub fn register(&mut self, tree: &'a ParamTree, trainable: bool) -> TreeId {
        self.trees.push(TreeRef { tree, trainable });
        TreeId(self.trees.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: usize) -> bool {
        self.nodes[v].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Differentiable input.
    pub fn input(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A layer's weight matrix as a node.
    pub fn weight(&mut self, tree: TreeId, layer: usize) -> Var {
        let t = &self.trees[tree.0];
        let l = t.tree.layer(layer);
        let value = Mat::from_vec(l.rows, l.cols, l.weight.clone()).expect("layer shape");
        let trainable = t.trainable;
        self.push(value, Op::Weight { tree: tree.0, layer }, trainable)
    }

    pub fn bias(&mut self, tree: TreeId, layer: usize) -> Var {
        let t = &self.trees[tree.0];
        let value = Mat::row_vector(t.tree.layer(layer).bias.clone());
        let trainable = t.trainable;
        self.push(value, Op::Bias { tree: tree.0, layer }, trainable)
    }

    /// `x Wᵀ + b` for layer `layer` of `tree`.
    pub fn affine(&mut self, x: Var, tree: TreeId, layer: usize) -> Result<Var> {
        let t = &self.trees[tree.0];
        let l = t.tree.layer(layer);
        let xv = &self.nodes[x.0].value;
        if xv.cols() != l.cols {
            return Err(Error::dim("affine input", l.cols, xv.cols()));
        }
        let mut out = Mat::zeros(xv.rows(), l.rows);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&l.bias);
        }
        matmul_nt_acc(xv.data(), xv.rows(), l.cols, &l.weight, l.rows, out.data_mut());
        let needs = t.trainable || self.needs(x.0);
        Ok(self.push(out, Op::Affine { x: x.0, tree: tree.0, layer }, needs))
    }

    /// Block-diagonal affine map: input columns and layer rows are split into
    /// `groups` equal blocks and block `g` of the input feeds only block `g` of
    /// the output. The layer stores the blocks stacked: `(groups·out) × in`.
    pub fn grouped_affine(&mut self, x: Var, tree: TreeId, layer: usize, groups: usize) -> Result<Var> {
        let t = &self.trees[tree.0];
        let l = t.tree.layer(layer);
        let xv = &self.nodes[x.0].value;
        if groups == 0 || l.rows % groups != 0 {
            return Err(Error::Config("grouped layer rows not divisible by group count".into()));
        }
        let (in_g, out_g) = (l.cols, l.rows / groups);
        if xv.cols() != groups * in_g {
            return Err(Error::dim("grouped affine input", groups * in_g, xv.cols()));
        }
        let mut out = Mat::zeros(xv.rows(), l.rows);
        for r in 0..xv.rows() {
            let xr = xv.row(r);
            let or = out.row_mut(r);
            for g in 0..groups {
                let xg = &xr[g * in_g..(g + 1) * in_g];
                for o in 0..out_g {
                    let row = g * out_g + o;
                    or[row] = l.bias[row] + super::matrix::dot(xg, &l.weight[row * in_g..(row + 1) * in_g]);
                }
            }
        }
        let needs = t.trainable || self.needs(x.0);
        Ok(self.push(
            out,
            Op::GroupedAffine {
                x: x.0,
                tree: tree.0,
                layer,
                groups,
            },
            needs,
        ))
    }

    pub fn activate(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return x;
        }
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data_mut() {
            *v = act.apply(*v);
        }
        let needs = self.needs(x.0);
        self.push(out, Op::Activate { x: x.0, act }, needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.nodes[parts[0].0].value.rows();
        let mut cols = 0;
        for p in parts {
            let v = &self.nodes[p.0].value;
            if v.rows() != rows {
                return Err(Error::dim("concat rows", rows, v.rows()));
            }
            cols += v.cols();
        }
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            let or = out.row_mut(r);
            for p in parts {
                let src = self.nodes[p.0].value.row(r);
                or[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let needs = parts.iter().any(|p| self.needs(p.0));
        Ok(self.push(out, Op::Concat(parts.iter().map(|p| p.0).collect()), needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if start + len > xv.cols() {
            return Err(Error::dim("slice columns", xv.cols(), start + len));
        }
        let mut out = Mat::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let needs = self.needs(x.0);
        Ok(self.push(out, Op::Slice { x: x.0, start }, needs))
    }

    /// Row `r` of the result is row `idx[r]` of `x`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::dim("gather index", xv.rows(), bad + 1));
        }
        let out = xv.select_rows(idx);
        let needs = self.needs(x.0);
        Ok(self.push(out, Op::Gather { x: x.0, idx: idx.to_vec() }, needs))
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !av.same_shape(bv) {
            return Err(Error::dim("elementwise operands", av.data().len(), bv.data().len()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        let out = Mat::from_vec(av.rows(), av.cols(), data)?;
        let needs = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(out, op, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        for v in out.data_mut() {
            *v *= c;
        }
        let needs = self.needs(x.0);
        self.push(out, Op::Scale(x.0, c), needs)
    }

    /// Stop-gradient: same value, no path back to `x`.
    pub fn detach(&mut self, x: Var) -> Var {
        let value = self.nodes[x.0].value.clone();
        self.push(value, Op::Leaf, false)
    }

    /// Contracts an index-major block with a fixed index vector:
    /// `out[r, s] = Σ_k m[r, k·w + s] z[k]`, where `w = m.cols / z.len()`.
    pub fn contract(&mut self, m: Var, z: &[f64]) -> Result<Var> {
        let mv = &self.nodes[m.0].value;
        if z.is_empty() || mv.cols() % z.len() != 0 {
            return Err(Error::dim("contract width", z.len(), mv.cols()));
        }
        let w = mv.cols() / z.len();
        let mut out = Mat::zeros(mv.rows(), w);
        for r in 0..mv.rows() {
            let src = mv.row(r);
            let dst = out.row_mut(r);
            for (k, &zk) in z.iter().enumerate() {
                axpy(zk, &src[k * w..(k + 1) * w], dst);
            }
        }
        let needs = self.needs(m.0);
        Ok(self.push(out, Op::Contract { m: m.0, z: z.to_vec() }, needs))
    }

    /// Mean over groups of `‖pred_g − target_g‖ / (‖target_g‖ + eps)`, where
    /// `groups[r]` assigns row `r` to a group. Norms run over all columns of
    /// the rows in a group; empty groups are skipped.
    pub fn relative_l2(&mut self, pred: Var, target: &Mat, groups: &[usize], eps: f64) -> Result<Var> {
        let pv = &self.nodes[pred.0].value;
        if !pv.same_shape(target) {
            return Err(Error::dim("relative_l2 shape", target.data().len(), pv.data().len()));
        }
        if groups.len() != pv.rows() {
            return Err(Error::dim("relative_l2 groups", pv.rows(), groups.len()));
        }
        let n_groups = groups.iter().max().map_or(0, |m| m + 1);
        let mut sums = alloc::vec![(0.0f64, 0.0f64, false); n_groups];
        for r in 0..pv.rows() {
            let g = &mut sums[groups[r]];
            g.2 = true;
            for (p, t) in pv.row(r).iter().zip(target.row(r)) {
                g.0 += (p - t) * (p - t);
                g.1 += t * t;
            }
        }
        let active = sums.iter().filter(|s| s.2).count();
        let stats: Vec<(f64, f64)> = sums.iter().map(|s| (s.0.sqrt(), s.1.sqrt())).collect();
        let total: f64 = stats
            .iter()
            .zip(&sums)
            .filter(|(_, s)| s.2)
            .map(|((num, den), _)| num / (den + eps))
            .sum();
        let loss = if active == 0 { 0.0 } else { total / active as f64 };
        let needs = self.needs(pred.0);
        Ok(self.push(
            Mat::scalar(loss),
            Op::RelativeL2 {
                pred: pred.0,
                target: target.clone(),
                groups: groups.to_vec(),
                stats: stats.into_iter().map(|(n, d)| (n, d + eps)).collect(),
                active,
            },
            needs,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        let needs = self.needs(x.0);
        self.push(Mat::scalar(s), Op::Sum(x.0), needs)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().map(|v| v * v).sum();
        let needs = self.needs(x.0);
        self.push(Mat::scalar(s), Op::SumSquares(x.0), needs)
    }

    /// Backward pass of a scalar node.
    pub fn backward_scalar(&self, v: Var) -> Result<Gradients> {
        self.backward(&[(v, Mat::scalar(1.0))])
    }

    /// Backward pass from several seeded nodes at once.
    pub fn backward(&self, seeds: &[(Var, Mat)]) -> Result<Gradients> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        for (v, g) in seeds {
            if !self.nodes[v.0].value.same_shape(g) {
                return Err(Error::dim("backward seed", self.nodes[v.0].value.data().len(), g.data().len()));
            }
            accumulate(&mut grads[v.0], g);
        }
        let mut params: Vec<Option<ParamTree>> = self
            .trees
            .iter()
            .map(|t| t.trainable.then(|| t.tree.zeros_like()))
            .collect();
        let mut leaves: Vec<Option<Mat>> = (0..n).map(|_| None).collect();

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf => leaves[i] = Some(dy),
                Op::Weight { tree, layer } => {
                    if let Some(p) = params[*tree].as_mut() {
                        axpy(1.0, dy.data(), &mut p.layers_mut()[*layer].weight);
                    }
                }
                Op::Bias { tree, layer } => {
                    if let Some(p) = params[*tree].as_mut() {
                        axpy(1.0, dy.data(), &mut p.layers_mut()[*layer].bias);
                    }
                }
                Op::Affine { x, tree, layer } => {
                    let l = self.trees[*tree].tree.layer(*layer);
                    let xv = &self.nodes[*x].value;
                    if self.needs(*x) {
                        let dx = grads[*x].get_or_insert_with(|| Mat::zeros(xv.rows(), xv.cols()));
                        matmul_nn_acc(dy.data(), dy.rows(), l.rows, &l.weight, l.cols, dx.data_mut());
                    }
                    if let Some(p) = params[*tree].as_mut() {
                        let pl = &mut p.layers_mut()[*layer];
                        matmul_tn_acc(dy.data(), dy.rows(), l.rows, xv.data(), l.cols, &mut pl.weight);
                        for r in 0..dy.rows() {
                            axpy(1.0, dy.row(r), &mut pl.bias);
                        }
                    }
                }
                Op::GroupedAffine { x, tree, layer, groups } => {
                    let l = self.trees[*tree].tree.layer(*layer);
                    let (in_g, out_g) = (l.cols, l.rows / groups);
                    let xv = &self.nodes[*x].value;
                    if self.needs(*x) {
                        let dx = grads[*x].get_or_insert_with(|| Mat::zeros(xv.rows(), xv.cols()));
                        for r in 0..dy.rows() {
                            let dyr = dy.row(r);
                            let dxr = dx.row_mut(r);
                            for g in 0..*groups {
                                for o in 0..out_g {
                                    let row = g * out_g + o;
                                    let gr = dyr[row];
                                    if gr != 0.0 {
                                        axpy(gr, &l.weight[row * in_g..(row + 1) * in_g], &mut dxr[g * in_g..(g + 1) * in_g]);
                                    }
                                }
                            }
                        }
                    }
                    if let Some(p) = params[*tree].as_mut() {
                        let pl = &mut p.layers_mut()[*layer];
                        for r in 0..dy.rows() {
                            let dyr = dy.row(r);
                            let xr = xv.row(r);
                            for g in 0..*groups {
                                for o in 0..out_g {
                                    let row = g * out_g + o;
                                    let gr = dyr[row];
                                    pl.bias[row] += gr;
                                    if gr != 0.0 {
                                        axpy(gr, &xr[g * in_g..(g + 1) * in_g], &mut pl.weight[row * in_g..(row + 1) * in_g]);
                                    }
                                }
                            }
                        }
                    }
                }
                Op::Activate { x, act } => {
                    let mut dx = dy;
                    for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= act.derivative_from_output(*y);
                    }
                    accumulate_owned(&mut grads[*x], dx);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pv = &self.nodes[p].value;
                        let w = pv.cols();
                        if self.needs(p) {
                            let dp = grads[p].get_or_insert_with(|| Mat::zeros(pv.rows(), w));
                            for r in 0..dy.rows() {
                                axpy(1.0, &dy.row(r)[off..off + w], dp.row_mut(r));
                            }
                        }
                        off += w;
                    }
                }
                Op::Slice { x, start } => {
                    let xv = &self.nodes[*x].value;
                    let dx = grads[*x].get_or_insert_with(|| Mat::zeros(xv.rows(), xv.cols()));
                    let w = dy.cols();
                    for r in 0..dy.rows() {
                        axpy(1.0, dy.row(r), &mut dx.row_mut(r)[*start..*start + w]);
                    }
                }
                Op::Gather { x, idx } => {
                    let xv = &self.nodes[*x].value;
                    let dx = grads[*x].get_or_insert_with(|| Mat::zeros(xv.rows(), xv.cols()));
                    for (r, &src) in idx.iter().enumerate() {
                        axpy(1.0, dy.row(r), dx.row_mut(src));
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[*a], &dy);
                    }
                    if self.needs(*b) {
                        accumulate_owned(&mut grads[*b], dy);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads[*a], &dy);
                    }
                    if self.needs(*b) {
                        let mut neg = dy;
                        neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                        accumulate_owned(&mut grads[*b], neg);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                    if self.needs(*a) {
                        let mut da = dy.clone();
                        da.data_mut().iter_mut().zip(bv.data()).for_each(|(d, y)| *d *= y);
                        accumulate_owned(&mut grads[*a], da);
                    }
                    if self.needs(*b) {
                        let mut db = dy;
                        db.data_mut().iter_mut().zip(av.data()).for_each(|(d, x)| *d *= x);
                        accumulate_owned(&mut grads[*b], db);
                    }
                }
                Op::Scale(x, c) => {
                    let mut dx = dy;
                    dx.data_mut().iter_mut().for_each(|v| *v *= c);
                    accumulate_owned(&mut grads[*x], dx);
                }
                Op::Contract { m, z } => {
                    let mv = &self.nodes[*m].value;
                    let w = dy.cols();
                    let dm = grads[*m].get_or_insert_with(|| Mat::zeros(mv.rows(), mv.cols()));
                    for r in 0..dy.rows() {
                        let dyr = dy.row(r);
                        let dmr = dm.row_mut(r);
                        for (k, &zk) in z.iter().enumerate() {
                            axpy(zk, dyr, &mut dmr[k * w..(k + 1) * w]);
                        }
                    }
                }
                Op::RelativeL2 { pred, target, groups, stats, active } => {
                    let pv = &self.nodes[*pred].value;
                    let upstream = dy.data()[0];
                    let dp = grads[*pred].get_or_insert_with(|| Mat::zeros(pv.rows(), pv.cols()));
                    for r in 0..pv.rows() {
                        let (num, den) = stats[groups[r]];
                        if num == 0.0 {
                            continue;
                        }
                        let c = upstream / (*active as f64 * num * den);
                        for ((d, p), t) in dp.row_mut(r).iter_mut().zip(pv.row(r)).zip(target.row(r)) {
                            *d += c * (p - t);
                        }
                    }
                }
                Op::Sum(x) => {
                    let xv = &self.nodes[*x].value;
                    let g = dy.data()[0];
                    let dx = grads[*x].get_or_insert_with(|| Mat::zeros(xv.rows(), xv.cols()));
                    dx.data_mut().iter_mut().for_each(|v| *v += g);
                }
                Op::SumSquares(x) => {
                    let xv = &self.nodes[*x].value;
                    let g = dy.data()[0];
                    let dx = grads[*x].get_or_insert_with(|| Mat::zeros(xv.rows(), xv.cols()));
                    axpy(2.0 * g, xv.data(), dx.data_mut());
                }
            }
        }
        Ok(Gradients { params, leaves })
    }
}

fn accumulate(slot: &mut Option<Mat>, g: &Mat) {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

fn accumulate_owned(slot: &mut Option<Mat>, g: Mat) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Value and gradient of a scalar loss built on a tape from `params`.
///
/// `build` receives a fresh tape with `params` registered as trainable and
/// must return a `1 × 1` node.
pub fn grad_scalar<F>(params: &ParamTree, build: F) -> Result<(f64, ParamTree)>
where
    F: for<'t> FnOnce(&mut Tape<'t>, TreeId) -> Result<Var>,
{
    let mut tape = Tape::new();
    let id = tape.register(params, true);
    let out = build(&mut tape, id)?;
    if tape.value(out).data().len() != 1 {
        return Err(Error::dim("grad_scalar output", 1, tape.value(out).data().len()));
    }
    let value = tape.scalar(out);
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".to_string()));
    }
    let mut grads = tape.backward_scalar(out)?;
    let g = grads.take_param(id).expect("registered as trainable");
    if !g.is_finite() {
        return Err(Error::NonFinite("gradient".to_string()));
    }
    Ok((value, g))
}
