use crate::error::{Error, Result};
use crate::params::Gradients;
use crate::tensor::{
    cross_layer_conv_backward, cross_layer_conv_raw, memory_cell_conv_backward,
    memory_cell_conv_raw, normalize_backward, normalize_forward, softmax_in_place, strides,
    unravel, Activation, CrossLayerGeometry, MemoryGeometry, NormCache, Tensor,
};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Which statistics a normalization node uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Per location, over the channel axis.
    Channel,
    /// Per example, over every grid and channel entry.
    Layer,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    AddN(Vec<NodeId>),
    Mul(NodeId, NodeId),
    Act(Activation, NodeId),
    Softmax(NodeId),
    Sum(NodeId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: NodeId,
    },
    SliceChannels {
        x: NodeId,
        start: usize,
    },
    ConcatChannels(Vec<NodeId>),
    ConcatInput {
        proj: NodeId,
        hidden: NodeId,
    },
    CrossLayerConv {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        geom: Box<CrossLayerGeometry>,
    },
    MemoryConv {
        c: NodeId,
        bank: NodeId,
        geom: Box<MemoryGeometry>,
    },
    Norm {
        z: NodeId,
        gain: NodeId,
        bias: NodeId,
        cache: NormCache,
    },
    Location {
        x: NodeId,
        loc: usize,
        locs: usize,
    },
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        weights: Vec<f64>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<String>,
    needs_grad: bool,
}

/// Records tensor operations in execution order so that gradients can be
/// propagated back from a scalar loss.
///
/// Nodes are appended only after their inputs exist, so the node vector is
/// always in topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let needs_grad = inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            param: None,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A named leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: Some(name.into()),
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: None,
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// An unnamed leaf that still tracks gradients; see [`Tape::backward_nodes`].
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            param: None,
            needs_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, sa, sb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    /// Sums any number of same-shaped values in the given order.
    pub fn add_n(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = *xs
            .first()
            .ok_or_else(|| Error::Contract("add_n of nothing".into()))?;
        let mut v = self.value(first).clone();
        for &x in &xs[1..] {
            self.same_shape("add_n", first, x)?;
            for (a, b) in v.data_mut().iter_mut().zip(self.nodes[x.0].value.data()) {
                *a += b;
            }
        }
        Ok(self.push(v, Op::AddN(xs.to_vec()), xs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn activation(&mut self, act: Activation, x: NodeId) -> NodeId {
        let v = self.value(x).map(|z| act.apply(z));
        self.push(v, Op::Act(act, x), &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        self.activation(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        self.activation(Activation::Sigmoid, x)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: NodeId) -> NodeId {
        let v = crate::tensor::softmax_last_axis(self.value(x));
        self.push(v, Op::Softmax(x), &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = crate::tensor::affine(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, Op::Affine { x, w, b }, &[x, w, b]))
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = self.value(x).slice_channels(start, end)?;
        Ok(self.push(v, Op::SliceChannels { x, start }, &[x]))
    }

    /// Concatenates along the last axis; all leading axes must agree.
    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let first = self.value(
            *xs.first()
                .ok_or_else(|| Error::Contract("concat of nothing".into()))?,
        );
        let lead = first.shape()[..first.rank() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut width = 0;
        for &x in xs {
            let s = self.value(x).shape();
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::dim("concat_channels", &lead, s));
            }
            width += s[s.len() - 1];
        }
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for &x in xs {
                let t = self.value(x);
                let c = t.channels();
                data.extend_from_slice(&t.data()[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(width);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::ConcatChannels(xs.to_vec()), xs))
    }

    /// Builds the concatenated state: the projected input occupies the corner
    /// location (index 0 on every grid axis), the previous hidden state at
    /// `p` moves to `p + 1`, and every other location is zero.
    ///
    /// `proj` is `[N, M]`, `hidden` is `[N, P_1, …, P_r, M]`.
    pub fn concat_input(&mut self, proj: NodeId, hidden: NodeId) -> Result<NodeId> {
        let (ps, hs) = (self.value(proj).shape(), self.value(hidden).shape());
        if ps.len() != 2 || hs.len() < 3 || ps[0] != hs[0] || ps[1] != hs[hs.len() - 1] {
            return Err(Error::dim("concat_input", ps, hs));
        }
        let (n, m) = (ps[0], ps[1]);
        let grid = hs[1..hs.len() - 1].to_vec();
        let cat_grid: Vec<usize> = grid.iter().map(|g| g + 1).collect();
        let map = shifted_locations(&grid);
        let (locs, cat_locs) = (grid.iter().product::<usize>(), cat_grid.iter().product::<usize>());
        let mut data = vec![0.0; n * cat_locs * m];
        let (pv, hv) = (self.value(proj).data(), self.value(hidden).data());
        for b in 0..n {
            data[b * cat_locs * m..][..m].copy_from_slice(&pv[b * m..(b + 1) * m]);
            for (loc, &dst) in map.iter().enumerate() {
                data[(b * cat_locs + dst) * m..][..m]
                    .copy_from_slice(&hv[(b * locs + loc) * m..][..m]);
            }
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&cat_grid);
        shape.push(m);
        let v = Tensor::new(shape, data)?;
        Ok(self.push(v, Op::ConcatInput { proj, hidden }, &[proj, hidden]))
    }

    pub fn cross_layer_conv(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let geom = CrossLayerGeometry::new(self.value(x).shape(), self.value(w).shape())?;
        if self.value(b).shape() != [geom.out_ch] {
            return Err(Error::dim(
                "cross_layer_conv(bias)",
                self.value(w).shape(),
                self.value(b).shape(),
            ));
        }
        let y = cross_layer_conv_raw(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let v = Tensor::new(geom.out_shape.clone(), y)?;
        let geom = Box::new(geom);
        Ok(self.push(v, Op::CrossLayerConv { x, w, b, geom }, &[x, w, b]))
    }

    /// `bank` must already be normalized (e.g. the output of [`Tape::softmax`]).
    pub fn memory_cell_conv(
        &mut self,
        c: NodeId,
        bank: NodeId,
        kernel: &[usize],
    ) -> Result<NodeId> {
        let geom = MemoryGeometry::new(self.value(c).shape(), self.value(bank).shape(), kernel)?;
        let y = memory_cell_conv_raw(&geom, self.value(c).data(), self.value(bank).data());
        let v = Tensor::new(self.value(c).shape().to_vec(), y)?;
        let geom = Box::new(geom);
        Ok(self.push(v, Op::MemoryConv { c, bank, geom }, &[c, bank]))
    }

    /// Channel or layer normalization with elementwise gain and bias of the
    /// per-example shape, broadcast over the leading batch axis.
    pub fn norm(
        &mut self,
        kind: NormKind,
        z: NodeId,
        gain: NodeId,
        bias: NodeId,
    ) -> Result<NodeId> {
        let (zs, gs) = (self.value(z).shape(), self.value(gain).shape());
        if gs.is_empty() || zs.len() < gs.len() || zs[zs.len() - gs.len()..] != *gs {
            return Err(Error::dim("norm", zs, gs));
        }
        self.same_shape("norm(bias)", gain, bias)?;
        let group = match kind {
            NormKind::Channel => self.value(z).channels(),
            NormKind::Layer => self.value(gain).len(),
        };
        let (y, cache) = normalize_forward(
            self.value(z).data(),
            self.value(gain).data(),
            self.value(bias).data(),
            group,
        );
        let v = Tensor::new(zs.to_vec(), y)?;
        Ok(self.push(
            v,
            Op::Norm {
                z,
                gain,
                bias,
                cache,
            },
            &[z, gain, bias],
        ))
    }

    /// Reads the channel vector at grid location `index` from every example
    /// of `x` (`[N, P_1, …, P_r, M]`), giving `[N, M]`.
    pub fn location(&mut self, x: NodeId, index: &[usize]) -> Result<NodeId> {
        let s = self.value(x).shape().to_vec();
        if s.len() != index.len() + 2 || index.iter().zip(&s[1..]).any(|(i, n)| i >= n) {
            return Err(Error::dim("location", &s, index));
        }
        let grid = &s[1..s.len() - 1];
        let loc = index.iter().zip(grid).fold(0, |a, (&i, &n)| a * n + i);
        let locs: usize = grid.iter().product();
        let (n, m) = (s[0], s[s.len() - 1]);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(n * m);
        for b in 0..n {
            out.extend_from_slice(&data[(b * locs + loc) * m..][..m]);
        }
        let v = Tensor::new([n, m], out)?;
        Ok(self.push(v, Op::Location { x, loc, locs }, &[x]))
    }

    /// `Σ_n weights[n] · (−ln softmax(logits_n)[targets[n]])` as a scalar.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        weights: &[f64],
    ) -> Result<NodeId> {
        let lv = self.value(logits);
        let s = lv.channels();
        let rows = lv.len() / s.max(1);
        if lv.rank() != 2 || targets.len() != rows || weights.len() != rows {
            return Err(Error::dim("cross_entropy", lv.shape(), &[targets.len()]));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= s) {
            return Err(Error::Contract(format!("target class {t} >= {s} classes")));
        }
        let mut probs = lv.data().to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_exact_mut(s).enumerate() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            if weights[r] != 0.0 {
                loss += weights[r] * (lse - row[targets[r]]);
            }
            softmax_in_place(row);
        }
        let v = Tensor::scalar(loss);
        Ok(self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// Gradients of the scalar `loss` with respect to every named parameter
    /// on the tape, in parameter insertion order. Parameters the loss does not
    /// reach get zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let grads = self.backward_nodes(loss)?;
        let mut out = Gradients::new();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let Some(name) = &node.param {
                let shape = node.value.shape().to_vec();
                let t = match g {
                    Some(data) => Tensor::new(shape, data)?,
                    None => Tensor::zeros(shape),
                };
                out.insert(name.clone(), t);
            }
        }
        Ok(out)
    }

    /// Raw adjoints for every node (`None` where nothing flowed back).
    pub fn backward_nodes(&self, loss: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads);
        }
        Ok(grads)
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |id: NodeId| self.nodes[id.0].value.data();
        let wants = |id: NodeId| self.nodes[id.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if wants(id) {
                        add_into(slot(grads, id, val(id).len()), dy);
                    }
                }
            }
            Op::AddN(xs) => {
                for &id in xs {
                    if wants(id) {
                        add_into(slot(grads, id, val(id).len()), dy);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    let g = slot(grads, *a, av.len());
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(bv) {
                        *g += d * o;
                    }
                }
                if wants(*b) {
                    let g = slot(grads, *b, bv.len());
                    for ((g, &d), &o) in g.iter_mut().zip(dy).zip(av) {
                        *g += d * o;
                    }
                }
            }
            Op::Act(act, x) => {
                if wants(*x) {
                    let y = node.value.data();
                    let g = slot(grads, *x, y.len());
                    for ((g, &d), &y) in g.iter_mut().zip(dy).zip(y) {
                        *g += d * act.derivative_from_output(y);
                    }
                }
            }
            Op::Softmax(x) => {
                if wants(*x) {
                    let y = node.value.data();
                    let c = node.value.channels();
                    let g = slot(grads, *x, y.len());
                    for ((g, d), y) in g
                        .chunks_exact_mut(c)
                        .zip(dy.chunks_exact(c))
                        .zip(y.chunks_exact(c))
                    {
                        let dot: f64 = d.iter().zip(y).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            g[j] += y[j] * (d[j] - dot);
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if wants(*x) {
                    for g in slot(grads, *x, val(*x).len()) {
                        *g += dy[0];
                    }
                }
            }
            Op::Affine { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let m = self.nodes[w.0].value.channels();
                let r = xv.len() / (dy.len() / m);
                if wants(*b) {
                    let g = slot(grads, *b, m);
                    for row in dy.chunks_exact(m) {
                        add_into(g, row);
                    }
                }
                if wants(*w) {
                    let g = slot(grads, *w, wv.len());
                    for (xrow, drow) in xv.chunks_exact(r).zip(dy.chunks_exact(m)) {
                        for (&xval, grow) in xrow.iter().zip(g.chunks_exact_mut(m)) {
                            if xval != 0.0 {
                                for (a, &d) in grow.iter_mut().zip(drow) {
                                    *a += xval * d;
                                }
                            }
                        }
                    }
                }
                if wants(*x) {
                    let g = slot(grads, *x, xv.len());
                    for (grow, drow) in g.chunks_exact_mut(r).zip(dy.chunks_exact(m)) {
                        for (a, wrow) in grow.iter_mut().zip(wv.chunks_exact(m)) {
                            *a += wrow.iter().zip(drow).map(|(p, q)| p * q).sum::<f64>();
                        }
                    }
                }
            }
            Op::SliceChannels { x, start } => {
                if wants(*x) {
                    let c = self.nodes[x.0].value.channels();
                    let w = node.value.channels();
                    let g = slot(grads, *x, val(*x).len());
                    for (grow, drow) in g.chunks_exact_mut(c).zip(dy.chunks_exact(w)) {
                        add_into(&mut grow[*start..*start + w], drow);
                    }
                }
            }
            Op::ConcatChannels(xs) => {
                let width = node.value.channels();
                let rows = dy.len() / width;
                let mut offset = 0;
                for &id in xs {
                    let c = self.nodes[id.0].value.channels();
                    if wants(id) {
                        let g = slot(grads, id, rows * c);
                        for r in 0..rows {
                            add_into(&mut g[r * c..(r + 1) * c], &dy[r * width + offset..][..c]);
                        }
                    }
                    offset += c;
                }
            }
            Op::ConcatInput { proj, hidden } => {
                let hs = self.nodes[hidden.0].value.shape();
                let (n, m) = (hs[0], hs[hs.len() - 1]);
                let grid = &hs[1..hs.len() - 1];
                let locs: usize = grid.iter().product();
                let cat_locs: usize = grid.iter().map(|g| g + 1).product();
                if wants(*proj) {
                    let g = slot(grads, *proj, n * m);
                    for b in 0..n {
                        add_into(&mut g[b * m..(b + 1) * m], &dy[b * cat_locs * m..][..m]);
                    }
                }
                if wants(*hidden) {
                    let map = shifted_locations(grid);
                    let g = slot(grads, *hidden, n * locs * m);
                    for b in 0..n {
                        for (loc, &src) in map.iter().enumerate() {
                            add_into(
                                &mut g[(b * locs + loc) * m..][..m],
                                &dy[(b * cat_locs + src) * m..][..m],
                            );
                        }
                    }
                }
            }
            Op::CrossLayerConv { x, w, b, geom } => {
                let (xv, wv) = (val(*x), val(*w));
                if wants(*x) {
                    let g = slot(grads, *x, xv.len());
                    cross_layer_conv_backward(geom, xv, wv, dy, Some(g), None, None);
                }
                if wants(*w) {
                    let g = slot(grads, *w, wv.len());
                    cross_layer_conv_backward(geom, xv, wv, dy, None, Some(g), None);
                }
                if wants(*b) {
                    let g = slot(grads, *b, geom.out_ch);
                    cross_layer_conv_backward(geom, xv, wv, dy, None, None, Some(g));
                }
            }
            Op::MemoryConv { c, bank, geom } => {
                let (cv, bv) = (val(*c), val(*bank));
                if wants(*c) {
                    let g = slot(grads, *c, cv.len());
                    memory_cell_conv_backward(geom, cv, bv, dy, Some(g), None);
                }
                if wants(*bank) {
                    let g = slot(grads, *bank, bv.len());
                    memory_cell_conv_backward(geom, cv, bv, dy, None, Some(g));
                }
            }
            Op::Norm {
                z,
                gain,
                bias,
                cache,
            } => {
                let gv = val(*gain);
                if wants(*z) {
                    let g = slot(grads, *z, val(*z).len());
                    normalize_backward(cache, gv, dy, Some(g), None, None);
                }
                if wants(*gain) {
                    let g = slot(grads, *gain, gv.len());
                    normalize_backward(cache, gv, dy, None, Some(g), None);
                }
                if wants(*bias) {
                    let g = slot(grads, *bias, gv.len());
                    normalize_backward(cache, gv, dy, None, None, Some(g));
                }
            }
            Op::Location { x, loc, locs } => {
                if wants(*x) {
                    let m = node.value.channels();
                    let n = dy.len() / m;
                    let g = slot(grads, *x, val(*x).len());
                    for b in 0..n {
                        add_into(&mut g[(b * locs + loc) * m..][..m], &dy[b * m..(b + 1) * m]);
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                weights,
                probs,
            } => {
                if wants(*logits) {
                    let s = self.nodes[logits.0].value.channels();
                    let g = slot(grads, *logits, probs.len());
                    for (r, (grow, prow)) in
                        g.chunks_exact_mut(s).zip(probs.chunks_exact(s)).enumerate()
                    {
                        let w = weights[r] * dy[0];
                        if w == 0.0 {
                            continue;
                        }
                        for (a, &p) in grow.iter_mut().zip(prow) {
                            *a += w * p;
                        }
                        grow[targets[r]] -= w;
                    }
                }
            }
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &mut [f64] {
    grads[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// For every location `p` of `grid`, the flat index of `p + 1` in the grid
/// enlarged by one along each axis.
fn shifted_locations(grid: &[usize]) -> Vec<usize> {
    let cat: Vec<usize> = grid.iter().map(|g| g + 1).collect();
    let cat_strides = strides(&cat);
    let locs: usize = grid.iter().product();
    let mut idx = vec![0; grid.len()];
    (0..locs)
        .map(|loc| {
            unravel(loc, grid, &mut idx);
            idx.iter()
                .zip(&cat_strides)
                .map(|(&i, &s)| (i + 1) * s)
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut rng)
    }

    #[test]
    fn sum_gives_ones() {
        let mut tape = Tape::new();
        let theta = tape.param("theta", rand_tensor(&[3, 2], 1));
        let loss = tape.sum(theta);
        let g = tape.backward(loss).unwrap();
        assert!(g.get("theta").unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gives_twice_theta() {
        let mut tape = Tape::new();
        let t = rand_tensor(&[5], 2);
        let theta = tape.param("theta", t.clone());
        let sq = tape.mul(theta, theta).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("theta").unwrap(), &t.map(|v| 2.0 * v));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let theta = tape.param("theta", rand_tensor(&[3], 3));
        assert!(matches!(tape.backward(theta), Err(Error::Contract(_))));
    }

    #[test]
    fn unreached_parameters_get_zero_gradients() {
        let mut tape = Tape::new();
        let a = tape.param("a", rand_tensor(&[2], 4));
        let _b = tape.param("b", rand_tensor(&[4], 5));
        let loss = tape.sum(a);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get("b").unwrap(), &Tensor::zeros([4]));
        assert_eq!(g.names().collect::<Vec<_>>(), vec!["a", "b"]);
    }

    #[test]
    fn concat_input_places_corner_and_shifts() {
        let mut tape = Tape::new();
        let proj = tape.constant(Tensor::new([1, 2], vec![10.0, 20.0]).unwrap());
        let h = tape.constant(Tensor::from_fn([1, 2, 2, 2], |i| i as f64 + 1.0));
        let cat = tape.concat_input(proj, h).unwrap();
        let v = tape.value(cat);
        assert_eq!(v.shape(), &[1, 3, 3, 2]);
        assert_eq!(&v.data()[0..2], &[10.0, 20.0]);
        // off-diagonal corner rows are zero
        assert_eq!(v.get(&[0, 0, 1, 0]), 0.0);
        assert_eq!(v.get(&[0, 1, 0, 1]), 0.0);
        assert_eq!(v.get(&[0, 1, 1, 0]), 1.0);
        assert_eq!(v.get(&[0, 2, 2, 1]), 8.0);
    }
}
