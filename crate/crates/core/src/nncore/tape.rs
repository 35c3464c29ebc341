//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every operation appends a node whose inputs have smaller indices, so a
//! single reverse sweep visits nodes in a valid topological order.

use std::sync::Arc;

use super::Tensor2D;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    /// `sum_k x_k W[r_k..r_k + cols(x_k), :] + b`, optionally rectified.
    Linear {
        parts: Vec<(Var, usize)>,
        weight: Var,
        bias: Option<Var>,
        relu: bool,
    },
    /// `base + src[index]` row-wise.
    AddGathered {
        base: Var,
        src: Var,
        index: Arc<[usize]>,
    },
    Relu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        residual: Option<Var>,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    GatherRows {
        x: Var,
        index: Arc<[usize]>,
    },
    SegmentMean {
        x: Var,
        segment: Arc<[usize]>,
        inv_count: Vec<f64>,
    },
    Sum(Var),
    Mse {
        pred: Var,
        target: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor2D,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. Leaf gradients accumulate across `backward` calls;
/// intermediate gradients are released as soon as they are propagated.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

/// `c = a b + beta c` for strided row-major operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    // every caller accumulates (beta = 1), so an empty product is a no-op
    debug_assert_eq!(beta, 1.0);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!(
        (m - 1) * rsa + (k - 1) * csa < a.len(),
        "gemm: lhs out of bounds"
    );
    assert!(
        (k - 1) * rsb + (n - 1) * csb < b.len(),
        "gemm: rhs out of bounds"
    );
    assert!(m * n <= c.len(), "gemm: output out of bounds");
    // SAFETY: the extents of all three operands were checked above and `c`
    // does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_index(index: &[usize], bound: usize, what: &str) -> Result<()> {
    if let Some(&bad) = index.iter().find(|&&i| i >= bound) {
        return Err(Error::Shape(format!(
            "{what}: index {bad} out of range for {bound} rows"
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor2D, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; no gradient is tracked.
    pub fn constant(&mut self, value: Tensor2D) -> Var {
        self.push(
            Tensor2D {
                grad: None,
                ..value
            },
            Op::Leaf,
            false,
        )
    }

    /// Trainable leaf; its gradient is available after [`Tape::backward`].
    pub fn param(&mut self, value: &Tensor2D) -> Var {
        let t =
            Tensor2D::new(value.rows, value.cols, value.data.clone()).expect("consistent tensor");
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor2D {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn linear(
        &mut self,
        parts: &[(Var, usize)],
        weight: Var,
        bias: Option<Var>,
        relu: bool,
    ) -> Result<Var> {
        let w = &self.nodes[weight.0].value;
        let out = w.cols;
        let rows = parts
            .first()
            .map(|&(x, _)| self.nodes[x.0].value.rows)
            .ok_or_else(|| Error::Shape("linear map with no inputs".into()))?;
        for &(x, r) in parts {
            let xv = &self.nodes[x.0].value;
            if xv.rows != rows || r + xv.cols > w.rows {
                return Err(shape_err(
                    "linear input vs weight block",
                    xv.shape(),
                    w.shape(),
                ));
            }
        }
        let mut y = match bias {
            Some(b) => {
                let bv = &self.nodes[b.0].value;
                if bv.shape() != (1, out) {
                    return Err(shape_err("bias", bv.shape(), (1, out)));
                }
                let mut y = Vec::with_capacity(rows * out);
                for _ in 0..rows {
                    y.extend_from_slice(&bv.data);
                }
                y
            }
            None => vec![0.0; rows * out],
        };
        for &(x, r) in parts {
            let xv = &self.nodes[x.0].value;
            let k = xv.cols;
            gemm(
                rows,
                k,
                out,
                &xv.data,
                k,
                1,
                &w.data[r * out..],
                out,
                1,
                1.0,
                &mut y,
            );
        }
        if relu {
            y.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        let rg = parts.iter().any(|&(x, _)| self.rg(x))
            || self.rg(weight)
            || bias.is_some_and(|b| self.rg(b));
        let value = Tensor2D::new(rows, out, y)?;
        Ok(self.push(
            value,
            Op::Linear {
                parts: parts.to_vec(),
                weight,
                bias,
                relu,
            },
            rg,
        ))
    }

    pub fn add_gathered(&mut self, base: Var, src: Var, index: &Arc<[usize]>) -> Result<Var> {
        let (b, s) = (&self.nodes[base.0].value, &self.nodes[src.0].value);
        if b.cols != s.cols || b.rows != index.len() {
            return Err(shape_err("add_gathered", b.shape(), s.shape()));
        }
        check_index(index, s.rows, "add_gathered")?;
        let c = b.cols;
        let mut y = b.data.clone();
        for (e, &i) in index.iter().enumerate() {
            let dst = &mut y[e * c..(e + 1) * c];
            dst.iter_mut().zip(s.row(i)).for_each(|(d, v)| *d += v);
        }
        let value = Tensor2D::new(b.rows, c, y)?;
        let rg = self.rg(base) || self.rg(src);
        Ok(self.push(
            value,
            Op::AddGathered {
                base,
                src,
                index: index.clone(),
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = &self.nodes[x.0].value;
        let data = xv.data.iter().map(|v| v.max(0.0)).collect();
        let value = Tensor2D::new(xv.rows, xv.cols, data).unwrap();
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (both 1 x cols),
    /// plus an optional residual added after the affine map.
    pub fn layer_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        residual: Option<Var>,
    ) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        let (rows, c) = xv.shape();
        let g = &self.nodes[gamma.0].value;
        let bt = &self.nodes[beta.0].value;
        if g.shape() != (1, c) || bt.shape() != (1, c) {
            return Err(shape_err("layer norm affine", g.shape(), (1, c)));
        }
        if let Some(r) = residual {
            let rv = &self.nodes[r.0].value;
            if rv.shape() != xv.shape() {
                return Err(shape_err("layer norm residual", rv.shape(), xv.shape()));
            }
        }
        let mut xhat = vec![0.0; rows * c];
        let mut inv_std = vec![0.0; rows];
        let mut y = match residual {
            Some(r) => self.nodes[r.0].value.data.clone(),
            None => vec![0.0; rows * c],
        };
        let rows_iter = xv
            .data
            .chunks_exact(c)
            .zip(xhat.chunks_exact_mut(c))
            .zip(y.chunks_exact_mut(c));
        for (((row, xh), yr), is) in rows_iter.zip(inv_std.iter_mut()) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            *is = s;
            for ((((x, h), y), g), b) in row
                .iter()
                .zip(xh.iter_mut())
                .zip(yr.iter_mut())
                .zip(&g.data)
                .zip(&bt.data)
            {
                *h = (x - mean) * s;
                *y += g * *h + b;
            }
        }
        let value = Tensor2D::new(rows, c, y)?;
        let rg =
            self.rg(x) || self.rg(gamma) || self.rg(beta) || residual.is_some_and(|r| self.rg(r));
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                residual,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(shape_err(what, av.shape(), bv.shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let value = Tensor2D::new(av.rows, av.cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let value = Tensor2D::new(av.rows, av.cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let xv = &self.nodes[x.0].value;
        let data = xv.data.iter().map(|v| v * factor).collect();
        let value = Tensor2D::new(xv.rows, xv.cols, data).unwrap();
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let rows = xs
            .first()
            .map(|x| self.nodes[x.0].value.rows)
            .ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        if xs.iter().any(|x| self.nodes[x.0].value.rows != rows) {
            return Err(Error::Shape("concat_cols: row counts differ".into()));
        }
        let cols: usize = xs.iter().map(|x| self.nodes[x.0].value.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for x in xs {
                data.extend_from_slice(self.nodes[x.0].value.row(r));
            }
        }
        let value = Tensor2D::new(rows, cols, data)?;
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(value, Op::ConcatCols(xs.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, x: Var, index: &Arc<[usize]>) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        check_index(index, xv.rows, "gather_rows")?;
        let mut data = Vec::with_capacity(index.len() * xv.cols);
        for &i in index.iter() {
            data.extend_from_slice(xv.row(i));
        }
        let value = Tensor2D::new(index.len(), xv.cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                index: index.clone(),
            },
            rg,
        ))
    }

    /// Mean of the rows of `x` grouped by `segment` into `n_out` rows. Empty
    /// segments yield zero rows.
    pub fn segment_mean(&mut self, x: Var, segment: &Arc<[usize]>, n_out: usize) -> Result<Var> {
        let xv = &self.nodes[x.0].value;
        if segment.len() != xv.rows {
            return Err(Error::Shape(format!(
                "segment_mean: {} segment ids for {} rows",
                segment.len(),
                xv.rows
            )));
        }
        check_index(segment, n_out, "segment_mean")?;
        let c = xv.cols;
        let mut count = vec![0usize; n_out];
        segment.iter().for_each(|&s| count[s] += 1);
        let inv_count: Vec<f64> = count
            .iter()
            .map(|&n| if n == 0 { 0.0 } else { 1.0 / n as f64 })
            .collect();
        let mut y = vec![0.0; n_out * c];
        for (e, &s) in segment.iter().enumerate() {
            let w = inv_count[s];
            let dst = &mut y[s * c..(s + 1) * c];
            dst.iter_mut().zip(xv.row(e)).for_each(|(d, v)| *d += w * v);
        }
        let value = Tensor2D::new(n_out, c, y)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::SegmentMean {
                x,
                segment: segment.clone(),
                inv_count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data.iter().sum();
        let rg = self.rg(x);
        self.push(Tensor2D::scalar(s), Op::Sum(x), rg)
    }

    /// Mean squared error over all entries.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.same_shape(pred, target, "mse")?;
        let (p, t) = (&self.nodes[pred.0].value, &self.nodes[target.0].value);
        if p.is_empty() {
            return Err(Error::Shape("mse of an empty tensor".into()));
        }
        let s: f64 = p
            .data
            .iter()
            .zip(&t.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let value = Tensor2D::scalar(s / p.len() as f64);
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(value, Op::Mse { pred, target }, rg))
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got a {}x{} tensor",
                shape.0, shape.1
            )));
        }
        if !self.rg(loss) {
            return Ok(());
        }
        let Tape { nodes, grads } = self;
        if matches!(nodes[loss.0].op, Op::Leaf) {
            grad_mut(nodes, grads, loss).unwrap()[0] += 1.0;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !nodes[i].requires_grad || matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            propagate(nodes, grads, i, &g);
        }
        Ok(())
    }
}

/// Gradient buffer of `v`, allocated on first use; `None` for constants.
fn grad_mut<'a>(
    nodes: &[Node],
    grads: &'a mut [Option<Vec<f64>>],
    v: Var,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.len();
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    if !nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        // first contribution: copying equals adding to zeros
        slot => *slot = Some(g.to_vec()),
    }
}

fn propagate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], i: usize, g: &[f64]) {
    let node = &nodes[i];
    let y = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Linear {
            parts,
            weight,
            bias,
            relu,
        } => {
            let masked;
            let g: &[f64] = if *relu {
                masked = g
                    .iter()
                    .zip(&y.data)
                    .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                    .collect::<Vec<_>>();
                &masked
            } else {
                g
            };
            let (rows, out) = y.shape();
            if let Some(b) = bias {
                if let Some(db) = grad_mut(nodes, grads, *b) {
                    for r in 0..rows {
                        db.iter_mut()
                            .zip(&g[r * out..(r + 1) * out])
                            .for_each(|(a, v)| *a += v);
                    }
                }
            }
            let w = &nodes[weight.0].value;
            for &(x, r) in parts {
                let xv = &nodes[x.0].value;
                let k = xv.cols;
                if let Some(dx) = grad_mut(nodes, grads, x) {
                    gemm(rows, out, k, g, out, 1, &w.data[r * out..], 1, out, 1.0, dx);
                }
                if let Some(dw) = grad_mut(nodes, grads, *weight) {
                    gemm(
                        k,
                        rows,
                        out,
                        &xv.data,
                        1,
                        k,
                        g,
                        out,
                        1,
                        1.0,
                        &mut dw[r * out..],
                    );
                }
            }
        }
        Op::AddGathered { base, src, index } => {
            add_into(nodes, grads, *base, g);
            let c = y.cols;
            if let Some(ds) = grad_mut(nodes, grads, *src) {
                for (e, &s) in index.iter().enumerate() {
                    let dst = &mut ds[s * c..(s + 1) * c];
                    dst.iter_mut()
                        .zip(&g[e * c..(e + 1) * c])
                        .for_each(|(a, v)| *a += v);
                }
            }
        }
        Op::Relu(x) => {
            if let Some(dx) = grad_mut(nodes, grads, *x) {
                for ((d, g), y) in dx.iter_mut().zip(g).zip(&y.data) {
                    if *y > 0.0 {
                        *d += g;
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            residual,
            xhat,
            inv_std,
        } => {
            let c = y.cols;
            if let Some(r) = residual {
                add_into(nodes, grads, *r, g);
            }
            if let Some(dg) = grad_mut(nodes, grads, *gamma) {
                for (gr, xh) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                    dg.iter_mut()
                        .zip(gr)
                        .zip(xh)
                        .for_each(|((a, g), h)| *a += g * h);
                }
            }
            if let Some(db) = grad_mut(nodes, grads, *beta) {
                for gr in g.chunks_exact(c) {
                    db.iter_mut().zip(gr).for_each(|(a, v)| *a += v);
                }
            }
            let gam = &nodes[gamma.0].value.data;
            if let Some(dx) = grad_mut(nodes, grads, *x) {
                let mut dxhat = vec![0.0; c];
                let rows_iter = g
                    .chunks_exact(c)
                    .zip(xhat.chunks_exact(c))
                    .zip(dx.chunks_exact_mut(c));
                for (((gr, xh), dr), s) in rows_iter.zip(inv_std) {
                    let (mut m1, mut m2) = (0.0, 0.0);
                    for (((d, g), gm), h) in dxhat.iter_mut().zip(gr).zip(gam).zip(xh) {
                        *d = g * gm;
                        m1 += *d;
                        m2 += *d * h;
                    }
                    m1 /= c as f64;
                    m2 /= c as f64;
                    for ((o, d), h) in dr.iter_mut().zip(&dxhat).zip(xh) {
                        *o += s * (d - m1 - h * m2);
                    }
                }
            }
        }
        Op::Add(a, b) => {
            add_into(nodes, grads, *a, g);
            add_into(nodes, grads, *b, g);
        }
        Op::Mul(a, b) => {
            let bv: Vec<f64> = g
                .iter()
                .zip(&nodes[b.0].value.data)
                .map(|(g, b)| g * b)
                .collect();
            let av: Vec<f64> = g
                .iter()
                .zip(&nodes[a.0].value.data)
                .map(|(g, a)| g * a)
                .collect();
            add_into(nodes, grads, *a, &bv);
            add_into(nodes, grads, *b, &av);
        }
        Op::Scale(x, f) => {
            if let Some(dx) = grad_mut(nodes, grads, *x) {
                dx.iter_mut().zip(g).for_each(|(a, v)| *a += f * v);
            }
        }
        Op::ConcatCols(xs) => {
            let (rows, cols) = y.shape();
            let mut offset = 0;
            for x in xs {
                let c = nodes[x.0].value.cols;
                if let Some(dx) = grad_mut(nodes, grads, *x) {
                    for r in 0..rows {
                        let src = &g[r * cols + offset..r * cols + offset + c];
                        dx[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(a, v)| *a += v);
                    }
                }
                offset += c;
            }
        }
        Op::GatherRows { x, index } => {
            let c = y.cols;
            if let Some(dx) = grad_mut(nodes, grads, *x) {
                for (e, &s) in index.iter().enumerate() {
                    dx[s * c..(s + 1) * c]
                        .iter_mut()
                        .zip(&g[e * c..(e + 1) * c])
                        .for_each(|(a, v)| *a += v);
                }
            }
        }
        Op::SegmentMean {
            x,
            segment,
            inv_count,
        } => {
            let c = y.cols;
            if let Some(dx) = grad_mut(nodes, grads, *x) {
                for (e, &s) in segment.iter().enumerate() {
                    let w = inv_count[s];
                    dx[e * c..(e + 1) * c]
                        .iter_mut()
                        .zip(&g[s * c..(s + 1) * c])
                        .for_each(|(a, v)| *a += w * v);
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = grad_mut(nodes, grads, *x) {
                dx.iter_mut().for_each(|a| *a += g[0]);
            }
        }
        Op::Mse { pred, target } => {
            let (p, t) = (&nodes[pred.0].value.data, &nodes[target.0].value.data);
            let f = 2.0 * g[0] / p.len() as f64;
            let d: Vec<f64> = p.iter().zip(t).map(|(p, t)| f * (p - t)).collect();
            add_into(nodes, grads, *pred, &d);
            if nodes[target.0].requires_grad {
                let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                add_into(nodes, grads, *target, &neg);
            }
        }
    }
}
