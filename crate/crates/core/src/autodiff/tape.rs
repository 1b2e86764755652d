//! Recording tape for reverse-mode differentiation over Taylor-valued nodes.
//!
//! Every node stores its full Taylor triple, and adjoints are triples as well:
//! the adjoint of node `c` is `(dL/dc.val, dL/dc.d1, dL/dc.d2)`. This lets a
//! loss depend on time derivatives of the model output (ODE residuals) while
//! a single reverse sweep still delivers `dL/dparams`.

use super::taylor::{Taylor2, UnaryKind};
use super::Tracer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

const NO_BIAS: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Param(u32),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Scale(u32, f64),
    /// Input plus local derivatives `f'`, `f''`, `f'''` at the input value.
    Unary(u32, UnaryKind, [f64; 3]),
    Affine {
        start: u32,
        len: u32,
        weights: u32,
        bias: u32,
    },
    Component(u32, u8),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Unary(_, kind, _) => kind.name(),
            Op::Affine { .. } => "affine",
            Op::Component(..) => "component",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    val: Taylor2,
    op: Op,
}

/// A single-threaded computation graph bound to one parameter vector.
pub struct Tape<'p> {
    params: &'p [f64],
    nodes: Vec<Node>,
    /// Operand lists of `Affine` nodes.
    arena: Vec<u32>,
    adjoints: Vec<[f64; 3]>,
    first_non_finite: Option<&'static str>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
            arena: Vec::new(),
            adjoints: Vec::new(),
            first_non_finite: None,
        }
    }

    /// Drops all recorded nodes, keeping allocations.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.arena.clear();
        self.first_non_finite = None;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    #[inline]
    fn push(&mut self, val: Taylor2, op: Op) -> NodeId {
        if self.first_non_finite.is_none() && !val.is_finite() {
            self.first_non_finite = Some(op.name());
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node { val, op });
        id
    }

    #[inline]
    fn val(&self, id: u32) -> Taylor2 {
        self.nodes[id as usize].val
    }

    fn check_finite(&self) -> Result<()> {
        match self.first_non_finite {
            Some(op) => Err(Error::NonFinite { op }),
            None => Ok(()),
        }
    }

    /// Gradient of `output.val` with respect to every parameter.
    pub fn gradient(&mut self, output: NodeId) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.params.len()];
        self.backward(&[(output, [1.0, 0.0, 0.0])], &mut g)?;
        Ok(g)
    }

    /// Reverse sweep from the given adjoint seeds, accumulating parameter
    /// adjoints into `grad` (which is not cleared).
    pub fn backward(&mut self, seeds: &[(NodeId, [f64; 3])], grad: &mut [f64]) -> Result<()> {
        self.check_finite()?;
        if grad.len() != self.params.len() {
            return Err(Error::LengthMismatch {
                expected: self.params.len(),
                actual: grad.len(),
            });
        }
        let n = self.nodes.len();
        self.adjoints.clear();
        self.adjoints.resize(n, [0.0; 3]);
        let mut last = 0;
        for &(id, s) in seeds {
            let a = &mut self.adjoints[id.index()];
            for k in 0..3 {
                a[k] += s[k];
            }
            last = last.max(id.index() + 1);
        }

        let adj = &mut self.adjoints;
        let nodes = &self.nodes;
        for i in (0..last).rev() {
            let c = adj[i];
            if c == [0.0; 3] {
                continue;
            }
            match nodes[i].op {
                Op::Leaf => {}
                Op::Param(j) => grad[j as usize] += c[0],
                Op::Add(a, b) => {
                    add3(&mut adj[a as usize], c, 1.0);
                    add3(&mut adj[b as usize], c, 1.0);
                }
                Op::Sub(a, b) => {
                    add3(&mut adj[a as usize], c, 1.0);
                    add3(&mut adj[b as usize], c, -1.0);
                }
                Op::Mul(a, b) => {
                    let av = nodes[a as usize].val;
                    let bv = nodes[b as usize].val;
                    let da = mul_adjoint(c, bv);
                    let db = mul_adjoint(c, av);
                    add3(&mut adj[a as usize], da, 1.0);
                    add3(&mut adj[b as usize], db, 1.0);
                }
                Op::Scale(a, s) => add3(&mut adj[a as usize], c, s),
                Op::Unary(a, _, [f1, f2, f3]) => {
                    let x = nodes[a as usize].val;
                    let d = [
                        c[0] * f1 + c[1] * f2 * x.d1 + c[2] * (f3 * x.d1 * x.d1 + f2 * x.d2),
                        c[1] * f1 + 2.0 * c[2] * f2 * x.d1,
                        c[2] * f1,
                    ];
                    add3(&mut adj[a as usize], d, 1.0);
                }
                Op::Affine {
                    start,
                    len,
                    weights,
                    bias,
                } => {
                    let inputs = &self.arena[start as usize..(start + len) as usize];
                    let w0 = weights as usize;
                    let w = &self.params[w0..w0 + inputs.len()];
                    let g = &mut grad[w0..w0 + inputs.len()];
                    for ((&x, &wk), gk) in inputs.iter().zip(w).zip(g) {
                        let xv = nodes[x as usize].val;
                        *gk += c[0] * xv.val + c[1] * xv.d1 + c[2] * xv.d2;
                        add3(&mut adj[x as usize], c, wk);
                    }
                    if bias != NO_BIAS {
                        grad[bias as usize] += c[0];
                    }
                }
                Op::Component(a, order) => adj[a as usize][order as usize] += c[0],
            }
        }
        Ok(())
    }
}

#[inline]
fn add3(dst: &mut [f64; 3], src: [f64; 3], s: f64) {
    dst[0] += s * src[0];
    dst[1] += s * src[1];
    dst[2] += s * src[2];
}

/// Adjoint contribution to `a` from `c = a * b` given `c`'s adjoint.
#[inline]
fn mul_adjoint(c: [f64; 3], b: Taylor2) -> [f64; 3] {
    [
        c[0] * b.val + c[1] * b.d1 + c[2] * b.d2,
        c[1] * b.val + 2.0 * c[2] * b.d1,
        c[2] * b.val,
    ]
}

impl Tracer for Tape<'_> {
    type V = NodeId;

    fn time(&mut self, t: f64) -> NodeId {
        self.push(Taylor2::seed(t), Op::Leaf)
    }

    fn constant(&mut self, c: f64) -> NodeId {
        self.push(Taylor2::constant(c), Op::Leaf)
    }

    fn param(&mut self, index: usize) -> NodeId {
        let v = Taylor2::constant(self.params[index]);
        self.push(v, Op::Param(index as u32))
    }

    fn value(&self, a: NodeId) -> Taylor2 {
        self.val(a.0)
    }

    fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.val(a.0) + self.val(b.0);
        self.push(v, Op::Add(a.0, b.0))
    }

    fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.val(a.0) - self.val(b.0);
        self.push(v, Op::Sub(a.0, b.0))
    }

    fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.val(a.0) * self.val(b.0);
        self.push(v, Op::Mul(a.0, b.0))
    }

    fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.val(a.0) * c;
        self.push(v, Op::Scale(a.0, c))
    }

    fn unary(&mut self, kind: UnaryKind, a: NodeId) -> NodeId {
        let x = self.val(a.0);
        let [f, f1, f2, f3] = kind.derivs(x.val);
        self.push(x.compose(f, f1, f2), Op::Unary(a.0, kind, [f1, f2, f3]))
    }

    fn sin_cos(&mut self, a: NodeId) -> (NodeId, NodeId) {
        let x = self.val(a.0);
        let (s, c) = x.val.sin_cos();
        let sn = self.push(x.compose(s, c, -s), Op::Unary(a.0, UnaryKind::Sin, [c, -s, -c]));
        let cn = self.push(x.compose(c, -s, -c), Op::Unary(a.0, UnaryKind::Cos, [-s, -c, s]));
        (sn, cn)
    }

    fn affine(&mut self, weights: usize, inputs: &[NodeId], bias: Option<usize>) -> NodeId {
        let w = &self.params[weights..weights + inputs.len()];
        let mut acc = Taylor2::constant(bias.map_or(0.0, |b| self.params[b]));
        let start = self.arena.len() as u32;
        for (wi, x) in w.iter().zip(inputs) {
            let xv = self.nodes[x.index()].val;
            acc.val += wi * xv.val;
            acc.d1 += wi * xv.d1;
            acc.d2 += wi * xv.d2;
            self.arena.push(x.0);
        }
        let op = Op::Affine {
            start,
            len: inputs.len() as u32,
            weights: weights as u32,
            bias: bias.map_or(NO_BIAS, |b| b as u32),
        };
        self.push(acc, op)
    }

    fn component(&mut self, a: NodeId, order: usize) -> NodeId {
        let v = Taylor2::constant(self.val(a.0).to_array()[order]);
        self.push(v, Op::Component(a.0, order as u8))
    }
}
