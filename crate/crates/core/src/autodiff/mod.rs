//! Reverse-mode automatic differentiation over shaped f64 arrays.
//!
//! A [`Tape`] records every differentiable operation of one simulation run
//! (define-by-run; tapes are rebuilt per run and never reused). Tensors are
//! cheap handles: values live behind an `Arc` shared with the tape node, so
//! recording does not copy buffers. Reductions accumulate in input order,
//! which makes forward values and gradients bit-reproducible for a fixed
//! seed.

mod special;

use std::fmt;
use std::sync::Arc;

use rand::Rng;

pub use special::{digamma, lgamma};

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum AdError {
    NonFiniteInput,
    ShapeMismatch(String),
    DomainError(String),
    NotScalar,
    DetachedTensor,
}

impl fmt::Display for AdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdError::NonFiniteInput => write!(f, "non-finite input value"),
            AdError::ShapeMismatch(m) => write!(f, "shape mismatch: {m}"),
            AdError::DomainError(m) => write!(f, "domain error: {m}"),
            AdError::NotScalar => write!(f, "expected a scalar tensor"),
            AdError::DetachedTensor => write!(f, "tensor is not recorded on this tape"),
        }
    }
}

impl std::error::Error for AdError {}

/// A shaped, row-major f64 array, optionally recorded on a tape.
#[derive(Debug, Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Arc<Vec<f64>>,
    node: Option<NodeId>,
}

impl Tensor {
    /// An untracked constant. Errors on NaN/Inf entries.
    pub fn constant(values: Vec<f64>, shape: Vec<usize>) -> Result<Self, AdError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(AdError::NonFiniteInput);
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(AdError::ShapeMismatch(format!(
                "shape {:?} does not match {} values",
                shape,
                values.len()
            )));
        }
        Ok(Tensor { shape, values: Arc::new(values), node: None })
    }

    pub fn vector(values: Vec<f64>) -> Result<Self, AdError> {
        let n = values.len();
        Tensor::constant(values, vec![n])
    }

    pub fn scalar(v: f64) -> Result<Self, AdError> {
        Tensor::constant(vec![v], vec![1])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.values[0]
    }

    /// The same values with the tape link severed.
    pub fn detach(&self) -> Tensor {
        Tensor { shape: self.shape.clone(), values: self.values.clone(), node: None }
    }
}

#[derive(Clone)]
enum Operand {
    Node(NodeId),
    Const(Arc<Vec<f64>>),
}

impl Operand {
    fn node(&self) -> Option<NodeId> {
        match self {
            Operand::Node(id) => Some(*id),
            Operand::Const(_) => None,
        }
    }
}

fn operand_of(t: &Tensor) -> Operand {
    match t.node {
        Some(id) => Operand::Node(id),
        None => Operand::Const(t.values.clone()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Softplus,
    Tanh,
    Lgamma,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

enum Op {
    Leaf,
    Unary { kind: UnaryKind, x: NodeId },
    Binary { kind: BinaryKind, a: Operand, b: Operand },
    ClampMinSmooth { x: NodeId, min: f64, sharpness: f64 },
    Sum { x: NodeId },
    Broadcast { x: NodeId },
    SegmentSum { x: NodeId, segments: Arc<Vec<u32>> },
    Gather { x: NodeId, indices: Arc<Vec<u32>>, input_len: usize },
    MatVec { w: Operand, x: Operand, rows: usize, cols: usize },
    Stack { parts: Vec<Operand> },
    /// Relaxed Bernoulli via logistic noise; `relaxed` holds the smooth
    /// sample even when the forward value was rounded (straight-through).
    GumbelBernoulli { p: NodeId, relaxed: Arc<Vec<f64>>, temperature: f64 },
}

struct Node {
    out: Arc<Vec<f64>>,
    op: Op,
}

/// Op selector for the generic [`Tape::apply`] entry point.
#[derive(Clone, Debug)]
pub enum OpSpec {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Pow,
    Sigmoid,
    Softplus,
    Tanh,
    Lgamma,
    Sum,
    Broadcast { n: usize },
    ClampMinSmooth { min: f64, sharpness: f64 },
    SegmentSum { segments: Vec<u32>, n_segments: usize },
    Gather { indices: Vec<u32> },
    MatVec,
    Stack,
}

/// Gradients of one backward sweep, indexed by tape node id. Recorded nodes
/// the loss never reached read as zero.
#[derive(Debug)]
pub struct GradientMap {
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl GradientMap {
    /// Gradient for a recorded tensor; `None` if it was never on the tape.
    pub fn grad(&self, t: &Tensor) -> Option<Vec<f64>> {
        let id = t.node?;
        Some(match &self.grads[id] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[id]],
        })
    }

    pub fn scalar_grad(&self, t: &Tensor) -> f64 {
        self.grad(t).map(|g| g[0]).unwrap_or(0.0)
    }
}

/// Single-writer record of one run's forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable for large |x|
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, out: Vec<f64>, shape: Vec<usize>, op: Op) -> Tensor {
        let out = Arc::new(out);
        let id = self.nodes.len();
        self.nodes.push(Node { out: out.clone(), op });
        Tensor { shape, values: out, node: Some(id) }
    }

    fn node_vals(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].out
    }

    fn operand_vals<'a>(&'a self, op: &'a Operand) -> &'a [f64] {
        match op {
            Operand::Node(id) => self.node_vals(*id),
            Operand::Const(v) => v,
        }
    }

    /// Registers a leaf. `requires_grad = false` leaves stay off the tape.
    pub fn leaf(&mut self, values: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Result<Tensor, AdError> {
        let t = Tensor::constant(values, shape)?;
        if !requires_grad {
            return Ok(t);
        }
        Ok(self.push(t.values.as_ref().clone(), t.shape, Op::Leaf))
    }

    pub fn leaf_vector(&mut self, values: Vec<f64>, requires_grad: bool) -> Result<Tensor, AdError> {
        let n = values.len();
        self.leaf(values, vec![n], requires_grad)
    }

    pub fn leaf_scalar(&mut self, v: f64, requires_grad: bool) -> Result<Tensor, AdError> {
        self.leaf(vec![v], vec![1], requires_grad)
    }

    // ── elementwise ──────────────────────────────────────────────────

    fn unary(&mut self, kind: UnaryKind, x: &Tensor) -> Result<Tensor, AdError> {
        let out: Vec<f64> = match kind {
            UnaryKind::Neg => x.values().iter().map(|v| -v).collect(),
            UnaryKind::Exp => x.values().iter().map(|v| v.exp()).collect(),
            UnaryKind::Log => {
                if x.values().iter().any(|&v| v <= 0.0) {
                    return Err(AdError::DomainError("log of non-positive value".into()));
                }
                x.values().iter().map(|v| v.ln()).collect()
            }
            UnaryKind::Sigmoid => x.values().iter().map(|&v| sigmoid(v)).collect(),
            UnaryKind::Softplus => x.values().iter().map(|&v| softplus(v)).collect(),
            UnaryKind::Tanh => x.values().iter().map(|v| v.tanh()).collect(),
            UnaryKind::Lgamma => {
                if x.values().iter().any(|&v| v <= 0.0) {
                    return Err(AdError::DomainError("lgamma requires strictly positive input".into()));
                }
                x.values().iter().map(|&v| special::lgamma(v)).collect()
            }
        };
        match x.node {
            Some(id) => Ok(self.push(out, x.shape.clone(), Op::Unary { kind, x: id })),
            None => Tensor::constant(out, x.shape.clone()),
        }
    }

    pub fn neg(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnaryKind::Neg, x)
    }
    pub fn exp(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn log(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnaryKind::Log, x)
    }
    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnaryKind::Sigmoid, x)
    }
    pub fn softplus(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnaryKind::Softplus, x)
    }
    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnaryKind::Tanh, x)
    }

    /// Log-Gamma with digamma backward; entries must be strictly positive.
    pub fn lgamma(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.unary(UnaryKind::Lgamma, x)
    }

    fn binary(&mut self, kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        let (la, lb) = (a.numel(), b.numel());
        if la != lb && la != 1 && lb != 1 {
            return Err(AdError::ShapeMismatch(format!(
                "elementwise {kind:?} on lengths {la} and {lb}"
            )));
        }
        let n = la.max(lb);
        let shape = if la >= lb { a.shape.clone() } else { b.shape.clone() };
        let av = a.values();
        let bv = b.values();
        let ai = |i: usize| av[if la == 1 { 0 } else { i }];
        let bi = |i: usize| bv[if lb == 1 { 0 } else { i }];
        let mut out = Vec::with_capacity(n);
        match kind {
            BinaryKind::Add => (0..n).for_each(|i| out.push(ai(i) + bi(i))),
            BinaryKind::Sub => (0..n).for_each(|i| out.push(ai(i) - bi(i))),
            BinaryKind::Mul => (0..n).for_each(|i| out.push(ai(i) * bi(i))),
            BinaryKind::Div => {
                for i in 0..n {
                    if bi(i) == 0.0 {
                        return Err(AdError::DomainError("division by zero".into()));
                    }
                    out.push(ai(i) / bi(i));
                }
            }
            BinaryKind::Pow => {
                for i in 0..n {
                    if ai(i) <= 0.0 {
                        return Err(AdError::DomainError(
                            "pow requires strictly positive base".into(),
                        ));
                    }
                    out.push(ai(i).powf(bi(i)));
                }
            }
        }
        if a.node.is_none() && b.node.is_none() {
            return Tensor::constant(out, shape);
        }
        Ok(self.push(out, shape, Op::Binary { kind, a: operand_of(a), b: operand_of(b) }))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        self.binary(BinaryKind::Add, a, b)
    }
    pub fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        self.binary(BinaryKind::Sub, a, b)
    }
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        self.binary(BinaryKind::Mul, a, b)
    }
    pub fn div(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        self.binary(BinaryKind::Div, a, b)
    }
    pub fn pow(&mut self, base: &Tensor, exponent: &Tensor) -> Result<Tensor, AdError> {
        self.binary(BinaryKind::Pow, base, exponent)
    }

    pub fn scale(&mut self, x: &Tensor, c: f64) -> Result<Tensor, AdError> {
        let c = Tensor::scalar(c)?;
        self.mul(x, &c)
    }

    pub fn add_scalar(&mut self, x: &Tensor, c: f64) -> Result<Tensor, AdError> {
        let c = Tensor::scalar(c)?;
        self.add(x, &c)
    }

    /// c - x
    pub fn sub_from(&mut self, c: f64, x: &Tensor) -> Result<Tensor, AdError> {
        let c = Tensor::scalar(c)?;
        self.sub(&c, x)
    }

    /// Smooth lower clamp: min + softplus(k (x - min)) / k; gradient sigmoid(k (x - min)).
    pub fn clamp_min_smooth(&mut self, x: &Tensor, min: f64, sharpness: f64) -> Result<Tensor, AdError> {
        if sharpness <= 0.0 {
            return Err(AdError::DomainError("clamp sharpness must be positive".into()));
        }
        let out: Vec<f64> = x
            .values()
            .iter()
            .map(|&v| min + softplus(sharpness * (v - min)) / sharpness)
            .collect();
        match x.node {
            Some(id) => Ok(self.push(out, x.shape.clone(), Op::ClampMinSmooth { x: id, min, sharpness })),
            None => Tensor::constant(out, x.shape.clone()),
        }
    }

    // ── reductions & structure ───────────────────────────────────────

    /// Full reduction to a scalar, accumulated in input order.
    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        let total: f64 = x.values().iter().sum();
        match x.node {
            Some(id) => Ok(self.push(vec![total], vec![1], Op::Sum { x: id })),
            None => Tensor::scalar(total),
        }
    }

    /// Scalar -> [n].
    pub fn broadcast(&mut self, x: &Tensor, n: usize) -> Result<Tensor, AdError> {
        if !x.is_scalar() {
            return Err(AdError::ShapeMismatch("broadcast expects a scalar".into()));
        }
        let out = vec![x.values[0]; n];
        match x.node {
            Some(id) => Ok(self.push(out, vec![n], Op::Broadcast { x: id })),
            None => Tensor::constant(out, vec![n]),
        }
    }

    /// Sums `values[i]` into `out[segments[i]]`; empty segments read 0.
    pub fn segment_sum(&mut self, values: &Tensor, segments: &[u32], n_segments: usize) -> Result<Tensor, AdError> {
        if segments.len() != values.numel() {
            return Err(AdError::ShapeMismatch(format!(
                "{} segment ids for {} values",
                segments.len(),
                values.numel()
            )));
        }
        if let Some(&bad) = segments.iter().find(|&&s| s as usize >= n_segments) {
            return Err(AdError::DomainError(format!(
                "segment id {bad} out of range for {n_segments} segments"
            )));
        }
        let mut out = vec![0.0; n_segments];
        for (v, &s) in values.values().iter().zip(segments) {
            out[s as usize] += v;
        }
        match values.node {
            Some(id) => Ok(self.push(
                out,
                vec![n_segments],
                Op::SegmentSum { x: id, segments: Arc::new(segments.to_vec()) },
            )),
            None => Tensor::constant(out, vec![n_segments]),
        }
    }

    /// out[i] = x[indices[i]]; backward scatter-adds in input order.
    pub fn gather(&mut self, x: &Tensor, indices: &[u32]) -> Result<Tensor, AdError> {
        let len = x.numel();
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= len) {
            return Err(AdError::DomainError(format!("gather index {bad} out of range for length {len}")));
        }
        let out: Vec<f64> = indices.iter().map(|&i| x.values[i as usize]).collect();
        let n = out.len();
        match x.node {
            Some(id) => Ok(self.push(
                out,
                vec![n],
                Op::Gather { x: id, indices: Arc::new(indices.to_vec()), input_len: len },
            )),
            None => Tensor::constant(out, vec![n]),
        }
    }

    /// Dense [m,n] matrix times [n] vector.
    pub fn matvec(&mut self, w: &Tensor, x: &Tensor) -> Result<Tensor, AdError> {
        if w.shape.len() != 2 {
            return Err(AdError::ShapeMismatch("matvec expects a rank-2 matrix".into()));
        }
        let (rows, cols) = (w.shape[0], w.shape[1]);
        if x.numel() != cols {
            return Err(AdError::ShapeMismatch(format!(
                "matvec [{rows},{cols}] against vector of length {}",
                x.numel()
            )));
        }
        let wv = w.values();
        let xv = x.values();
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let mut acc = 0.0;
            for c in 0..cols {
                acc += wv[r * cols + c] * xv[c];
            }
            out[r] = acc;
        }
        if w.node.is_none() && x.node.is_none() {
            return Tensor::constant(out, vec![rows]);
        }
        Ok(self.push(
            out,
            vec![rows],
            Op::MatVec { w: operand_of(w), x: operand_of(x), rows, cols },
        ))
    }

    /// Concatenates scalars into a vector.
    pub fn stack(&mut self, parts: &[&Tensor]) -> Result<Tensor, AdError> {
        if parts.is_empty() {
            return Err(AdError::ShapeMismatch("stack of zero tensors".into()));
        }
        if parts.iter().any(|t| !t.is_scalar()) {
            return Err(AdError::ShapeMismatch("stack expects scalar parts".into()));
        }
        let out: Vec<f64> = parts.iter().map(|t| t.values[0]).collect();
        let n = out.len();
        if parts.iter().all(|t| t.node.is_none()) {
            return Tensor::constant(out, vec![n]);
        }
        let operands = parts.iter().map(|t| operand_of(t)).collect();
        Ok(self.push(out, vec![n], Op::Stack { parts: operands }))
    }

    // ── sampling ─────────────────────────────────────────────────────

    /// Per-entry relaxed Bernoulli (binary Concrete) sample. With `hard`, the
    /// forward value is rounded to {0,1} while gradients use the relaxed
    /// sample (straight-through). Entries with p exactly 0 or 1 are
    /// deterministic with zero gradient. One noise draw is always consumed
    /// per entry so the stream stays aligned across parameter perturbations.
    pub fn gumbel_softmax_bernoulli<R: Rng>(
        &mut self,
        p: &Tensor,
        temperature: f64,
        rng: &mut R,
        hard: bool,
    ) -> Result<Tensor, AdError> {
        if temperature <= 0.0 {
            return Err(AdError::DomainError("temperature must be positive".into()));
        }
        // tolerate cancellation dust from upstream subtractions
        const DUST: f64 = 1e-9;
        if p.values().iter().any(|&v| !(-DUST..=1.0 + DUST).contains(&v)) {
            return Err(AdError::DomainError("probabilities must lie in [0,1]".into()));
        }
        let n = p.numel();
        let mut relaxed = Vec::with_capacity(n);
        for &pi in p.values().iter() {
            let u: f64 = rng.gen::<f64>().clamp(1e-12, 1.0 - 1e-12);
            let logistic = u.ln() - (1.0 - u).ln();
            let z = if pi <= 0.0 {
                0.0
            } else if pi >= 1.0 {
                1.0
            } else {
                let logit_p = pi.ln() - (1.0 - pi).ln();
                sigmoid((logit_p + logistic) / temperature)
            };
            relaxed.push(z);
        }
        let out: Vec<f64> = if hard {
            relaxed.iter().map(|&z| if z > 0.5 { 1.0 } else { 0.0 }).collect()
        } else {
            relaxed.clone()
        };
        match p.node {
            Some(id) => Ok(self.push(
                out,
                p.shape.clone(),
                Op::GumbelBernoulli { p: id, relaxed: Arc::new(relaxed), temperature },
            )),
            None => Tensor::constant(out, p.shape.clone()),
        }
    }

    // ── generic entry point ──────────────────────────────────────────

    /// Applies an op by kind; the typed methods above are the primitives.
    pub fn apply(&mut self, op: OpSpec, inputs: &[&Tensor]) -> Result<Tensor, AdError> {
        let want = |k: usize| -> Result<(), AdError> {
            if inputs.len() == k {
                Ok(())
            } else {
                Err(AdError::ShapeMismatch(format!("op expects {k} inputs, got {}", inputs.len())))
            }
        };
        match op {
            OpSpec::Add => { want(2)?; self.add(inputs[0], inputs[1]) }
            OpSpec::Sub => { want(2)?; self.sub(inputs[0], inputs[1]) }
            OpSpec::Mul => { want(2)?; self.mul(inputs[0], inputs[1]) }
            OpSpec::Div => { want(2)?; self.div(inputs[0], inputs[1]) }
            OpSpec::Pow => { want(2)?; self.pow(inputs[0], inputs[1]) }
            OpSpec::Neg => { want(1)?; self.neg(inputs[0]) }
            OpSpec::Exp => { want(1)?; self.exp(inputs[0]) }
            OpSpec::Log => { want(1)?; self.log(inputs[0]) }
            OpSpec::Sigmoid => { want(1)?; self.sigmoid(inputs[0]) }
            OpSpec::Softplus => { want(1)?; self.softplus(inputs[0]) }
            OpSpec::Tanh => { want(1)?; self.tanh(inputs[0]) }
            OpSpec::Lgamma => { want(1)?; self.lgamma(inputs[0]) }
            OpSpec::Sum => { want(1)?; self.sum(inputs[0]) }
            OpSpec::Broadcast { n } => { want(1)?; self.broadcast(inputs[0], n) }
            OpSpec::ClampMinSmooth { min, sharpness } => {
                want(1)?;
                self.clamp_min_smooth(inputs[0], min, sharpness)
            }
            OpSpec::SegmentSum { segments, n_segments } => {
                want(1)?;
                self.segment_sum(inputs[0], &segments, n_segments)
            }
            OpSpec::Gather { indices } => { want(1)?; self.gather(inputs[0], &indices) }
            OpSpec::MatVec => { want(2)?; self.matvec(inputs[0], inputs[1]) }
            OpSpec::Stack => self.stack(inputs),
        }
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Deterministic accumulation order.
    pub fn backward(&self, loss: &Tensor) -> Result<GradientMap, AdError> {
        let root = loss.node.ok_or(AdError::DetachedTensor)?;
        if !loss.is_scalar() {
            return Err(AdError::NotScalar);
        }
        if root >= self.nodes.len() {
            return Err(AdError::DetachedTensor);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(vec![1.0]);
        for id in (0..=root).rev() {
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let lens = self.nodes.iter().map(|n| n.out.len()).collect();
        Ok(GradientMap { grads, lens })
    }

    fn propagate(&self, id: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = node.out.as_slice();
        match &node.op {
            Op::Leaf => {}
            Op::Unary { kind, x } => {
                let xv = self.node_vals(*x);
                let slot = slot(grads, *x, xv.len());
                match kind {
                    UnaryKind::Neg => for i in 0..xv.len() { slot[i] -= g[i]; },
                    UnaryKind::Exp => for i in 0..xv.len() { slot[i] += g[i] * out[i]; },
                    UnaryKind::Log => for i in 0..xv.len() { slot[i] += g[i] / xv[i]; },
                    UnaryKind::Sigmoid => for i in 0..xv.len() { slot[i] += g[i] * out[i] * (1.0 - out[i]); },
                    UnaryKind::Softplus => for i in 0..xv.len() { slot[i] += g[i] * sigmoid(xv[i]); },
                    UnaryKind::Tanh => for i in 0..xv.len() { slot[i] += g[i] * (1.0 - out[i] * out[i]); },
                    UnaryKind::Lgamma => for i in 0..xv.len() { slot[i] += g[i] * special::digamma(xv[i]); },
                }
            }
            Op::Binary { kind, a, b } => {
                let av = self.operand_vals(a);
                let bv = self.operand_vals(b);
                let (la, lb) = (av.len(), bv.len());
                let n = la.max(lb);
                if let Some(aid) = a.node() {
                    let slot = slot(grads, aid, la);
                    for i in 0..n {
                        let (ia, ib) = (if la == 1 { 0 } else { i }, if lb == 1 { 0 } else { i });
                        let d = match kind {
                            BinaryKind::Add => g[i],
                            BinaryKind::Sub => g[i],
                            BinaryKind::Mul => g[i] * bv[ib],
                            BinaryKind::Div => g[i] / bv[ib],
                            BinaryKind::Pow => g[i] * bv[ib] * av[ia].powf(bv[ib] - 1.0),
                        };
                        slot[ia] += d;
                    }
                }
                if let Some(bid) = b.node() {
                    let slot = slot(grads, bid, lb);
                    for i in 0..n {
                        let (ia, ib) = (if la == 1 { 0 } else { i }, if lb == 1 { 0 } else { i });
                        let d = match kind {
                            BinaryKind::Add => g[i],
                            BinaryKind::Sub => -g[i],
                            BinaryKind::Mul => g[i] * av[ia],
                            BinaryKind::Div => -g[i] * av[ia] / (bv[ib] * bv[ib]),
                            BinaryKind::Pow => g[i] * out[i] * av[ia].ln(),
                        };
                        slot[ib] += d;
                    }
                }
            }
            Op::ClampMinSmooth { x, min, sharpness } => {
                let xv = self.node_vals(*x);
                let slot = slot(grads, *x, xv.len());
                for i in 0..xv.len() {
                    slot[i] += g[i] * sigmoid(sharpness * (xv[i] - min));
                }
            }
            Op::Sum { x } => {
                let len = self.node_vals(*x).len();
                let slot = slot(grads, *x, len);
                for s in slot.iter_mut() {
                    *s += g[0];
                }
            }
            Op::Broadcast { x } => {
                let slot = slot(grads, *x, 1);
                slot[0] += g.iter().sum::<f64>();
            }
            Op::SegmentSum { x, segments } => {
                let len = self.node_vals(*x).len();
                let slot = slot(grads, *x, len);
                for (i, &s) in segments.iter().enumerate() {
                    slot[i] += g[s as usize];
                }
            }
            Op::Gather { x, indices, input_len } => {
                let slot = slot(grads, *x, *input_len);
                for (i, &src) in indices.iter().enumerate() {
                    slot[src as usize] += g[i];
                }
            }
            Op::MatVec { w, x, rows, cols } => {
                let wv = self.operand_vals(w);
                let xv = self.operand_vals(x);
                if let Some(wid) = w.node() {
                    let slot = slot(grads, wid, rows * cols);
                    for r in 0..*rows {
                        for c in 0..*cols {
                            slot[r * cols + c] += g[r] * xv[c];
                        }
                    }
                }
                if let Some(xid) = x.node() {
                    let slot = slot(grads, xid, *cols);
                    for r in 0..*rows {
                        for c in 0..*cols {
                            slot[c] += wv[r * cols + c] * g[r];
                        }
                    }
                }
            }
            Op::Stack { parts } => {
                for (i, part) in parts.iter().enumerate() {
                    if let Some(pid) = part.node() {
                        let slot = slot(grads, pid, 1);
                        slot[0] += g[i];
                    }
                }
            }
            Op::GumbelBernoulli { p, relaxed, temperature } => {
                let pv = self.node_vals(*p);
                let slot = slot(grads, *p, pv.len());
                for i in 0..pv.len() {
                    let pi = pv[i];
                    if pi <= 0.0 || pi >= 1.0 {
                        continue;
                    }
                    let z = relaxed[i];
                    slot[i] += g[i] * z * (1.0 - z) / (temperature * pi * (1.0 - pi));
                }
            }
        }
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], id: NodeId, len: usize) -> &'a mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn leaf_construction() {
        let mut tape = Tape::new();
        let t = tape.leaf_vector(vec![1.0, 2.0, 3.0], false).unwrap();
        assert_eq!(t.shape(), &[3]);
        assert!(t.node_id().is_none());
        assert!(!t.requires_grad());

        let z = tape.leaf(vec![0.0; 4], vec![2, 2], true).unwrap();
        assert_eq!(z.shape(), &[2, 2]);
        assert!(z.node_id().is_some());
        assert!(z.requires_grad());

        assert_eq!(tape.leaf_vector(vec![f64::NAN], true).unwrap_err(), AdError::NonFiniteInput);
    }

    #[test]
    fn mul_gradient_square() {
        let mut tape = Tape::new();
        let x = tape.leaf_vector(vec![3.0], true).unwrap();
        let y = tape.mul(&x, &x).unwrap();
        assert_eq!(y.values(), &[9.0]);
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.grad(&x).unwrap(), vec![6.0]);
    }

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf_scalar(2.0, true).unwrap();
        let y = tape.leaf_scalar(5.0, true).unwrap();
        let z = tape.mul(&x, &y).unwrap();
        let grads = tape.backward(&z).unwrap();
        assert_eq!(grads.scalar_grad(&x), 5.0);
        assert_eq!(grads.scalar_grad(&y), 2.0);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf_vector(vec![1.0, -2.0, 0.5, 7.0], true).unwrap();
        let s = tape.sum(&x).unwrap();
        let grads = tape.backward(&s).unwrap();
        assert_eq!(grads.grad(&x).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn segment_sum_groups_and_zeros_empty() {
        let mut tape = Tape::new();
        let x = tape.leaf_vector(vec![1.0, 2.0, 3.0, 4.0], true).unwrap();
        let s = tape.segment_sum(&x, &[0, 0, 1, 1], 3).unwrap();
        assert_eq!(s.values(), &[3.0, 7.0, 0.0]);
        // conservation: total preserved
        let total_in: f64 = x.values().iter().sum();
        let total_out: f64 = s.values().iter().sum();
        assert!((total_in - total_out).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf_scalar(0.0, true).unwrap();
        let y = tape.sigmoid(&x).unwrap();
        assert_eq!(y.item(), 0.5);
        let grads = tape.backward(&y).unwrap();
        assert!((grads.scalar_grad(&x) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn lgamma_values_and_errors() {
        let mut tape = Tape::new();
        let x = tape.leaf_vector(vec![1.0, 2.0, 0.5], false).unwrap();
        let y = tape.lgamma(&x).unwrap();
        assert!(y.values()[0].abs() < 1e-12);
        assert!(y.values()[1].abs() < 1e-12);
        assert!((y.values()[2] - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);

        let bad = tape.leaf_vector(vec![-1.0], false).unwrap();
        assert!(matches!(tape.lgamma(&bad), Err(AdError::DomainError(_))));
    }

    #[test]
    fn lgamma_gradient_matches_finite_difference() {
        let eps = 1e-6;
        let x0 = 2.41;
        let mut tape = Tape::new();
        let x = tape.leaf_scalar(x0, true).unwrap();
        let y = tape.lgamma(&x).unwrap();
        let grads = tape.backward(&y).unwrap();
        let fd = (lgamma(x0 + eps) - lgamma(x0 - eps)) / (2.0 * eps);
        let rel = (grads.scalar_grad(&x) - fd).abs() / fd.abs();
        assert!(rel < 1e-6, "rel err {rel}");
    }

    #[test]
    fn gumbel_bernoulli_degenerate_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let p = tape.leaf_vector(vec![0.0, 1.0], true).unwrap();
        for _ in 0..50 {
            let s = tape.gumbel_softmax_bernoulli(&p, 0.5, &mut rng, false).unwrap();
            assert_eq!(s.values(), &[0.0, 1.0]);
        }
    }

    #[test]
    fn gumbel_bernoulli_hard_mean_within_band() {
        // p = 0.3, 10,000 hard draws: binomial 3-sigma band around 0.3.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let p = tape.leaf_vector(vec![0.3; 10_000], false).unwrap();
        let s = tape.gumbel_softmax_bernoulli(&p, 0.5, &mut rng, true).unwrap();
        let mean = s.values().iter().sum::<f64>() / 10_000.0;
        assert!((0.286..=0.314).contains(&mean), "mean = {mean}");
    }

    #[test]
    fn gumbel_bernoulli_domain_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new();
        let p = tape.leaf_vector(vec![1.5], false).unwrap();
        assert!(matches!(
            tape.gumbel_softmax_bernoulli(&p, 0.5, &mut rng, false),
            Err(AdError::DomainError(_))
        ));
        let ok = tape.leaf_vector(vec![0.5], false).unwrap();
        assert!(matches!(
            tape.gumbel_softmax_bernoulli(&ok, 0.0, &mut rng, false),
            Err(AdError::DomainError(_))
        ));
    }

    #[test]
    fn straight_through_rounds_forward_keeps_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let p = tape.leaf_vector(vec![0.5; 64], true).unwrap();
        let s = tape.gumbel_softmax_bernoulli(&p, 0.5, &mut rng, true).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0 || v == 1.0));
        let total = tape.sum(&s).unwrap();
        let grads = tape.backward(&total).unwrap();
        let g = grads.grad(&p).unwrap();
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut tape = Tape::new();
        let x = tape.leaf_vector(vec![1.0, 2.0], true).unwrap();
        assert_eq!(tape.backward(&x).unwrap_err(), AdError::NotScalar);
        let c = Tensor::scalar(1.0).unwrap();
        assert_eq!(tape.backward(&c).unwrap_err(), AdError::DetachedTensor);
    }

    #[test]
    fn unreachable_leaf_reads_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf_scalar(2.0, true).unwrap();
        let unused = tape.leaf_scalar(3.0, true).unwrap();
        let y = tape.mul(&x, &x).unwrap();
        let grads = tape.backward(&y).unwrap();
        assert_eq!(grads.grad(&unused).unwrap(), vec![0.0]);
    }

    #[test]
    fn linearity_of_backward() {
        // backward(a f + b g) == a backward(f) + b backward(g)
        let run = |wa: f64, wb: f64| -> (f64, f64) {
            let mut tape = Tape::new();
            let x = tape.leaf_scalar(1.3, true).unwrap();
            let y = tape.leaf_scalar(-0.4, true).unwrap();
            let f = tape.mul(&x, &y).unwrap();
            let ex = tape.exp(&x).unwrap();
            let g = tape.add(&ex, &y).unwrap();
            let fa = tape.scale(&f, wa).unwrap();
            let gb = tape.scale(&g, wb).unwrap();
            let loss = tape.add(&fa, &gb).unwrap();
            let grads = tape.backward(&loss).unwrap();
            (grads.scalar_grad(&x), grads.scalar_grad(&y))
        };
        let (fx, fy) = run(1.0, 0.0);
        let (gx, gy) = run(0.0, 1.0);
        let (cx, cy) = run(2.5, -1.5);
        assert!((cx - (2.5 * fx - 1.5 * gx)).abs() < 1e-12);
        assert!((cy - (2.5 * fy - 1.5 * gy)).abs() < 1e-12);
    }

    #[test]
    fn determinism_bit_identical() {
        let run = || -> (Vec<f64>, Vec<f64>) {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut tape = Tape::new();
            let p = tape.leaf_vector(vec![0.2, 0.5, 0.9], true).unwrap();
            let s = tape.gumbel_softmax_bernoulli(&p, 0.7, &mut rng, false).unwrap();
            let total = tape.sum(&s).unwrap();
            let grads = tape.backward(&total).unwrap();
            (s.values().to_vec(), grads.grad(&p).unwrap())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn matvec_forward_and_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], vec![2, 2], true).unwrap();
        let x = tape.leaf_vector(vec![5.0, 6.0], true).unwrap();
        let y = tape.matvec(&w, &x).unwrap();
        assert_eq!(y.values(), &[17.0, 39.0]);
        let s = tape.sum(&y).unwrap();
        let grads = tape.backward(&s).unwrap();
        assert_eq!(grads.grad(&w).unwrap(), vec![5.0, 6.0, 5.0, 6.0]);
        assert_eq!(grads.grad(&x).unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn gather_scatter_adds() {
        let mut tape = Tape::new();
        let x = tape.leaf_vector(vec![10.0, 20.0], true).unwrap();
        let y = tape.gather(&x, &[0, 0, 1]).unwrap();
        assert_eq!(y.values(), &[10.0, 10.0, 20.0]);
        let s = tape.sum(&y).unwrap();
        let grads = tape.backward(&s).unwrap();
        assert_eq!(grads.grad(&x).unwrap(), vec![2.0, 1.0]);
    }

    #[test]
    fn scalar_broadcast_in_binary_ops() {
        let mut tape = Tape::new();
        let s = tape.leaf_scalar(2.0, true).unwrap();
        let v = tape.leaf_vector(vec![1.0, 2.0, 3.0], true).unwrap();
        let y = tape.mul(&s, &v).unwrap();
        assert_eq!(y.values(), &[2.0, 4.0, 6.0]);
        let total = tape.sum(&y).unwrap();
        let grads = tape.backward(&total).unwrap();
        assert_eq!(grads.scalar_grad(&s), 6.0);
        assert_eq!(grads.grad(&v).unwrap(), vec![2.0; 3]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::new();
        let a = tape.leaf_vector(vec![1.0, 2.0], false).unwrap();
        let b = tape.leaf_vector(vec![1.0, 2.0, 3.0], false).unwrap();
        assert!(matches!(tape.add(&a, &b), Err(AdError::ShapeMismatch(_))));
    }
}
