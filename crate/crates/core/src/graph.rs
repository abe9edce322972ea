//! Execution backends for the network program.
//!
//! The detector is written once against [`Backend`]. Three backends run it:
//! [`Tape`] records every intermediate for reverse-mode differentiation,
//! [`Eval`] computes eagerly and drops intermediates (inference), and
//! `cost::Planner` only propagates shapes to declare parameters and count
//! multiply-adds.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::rc::Rc;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::params::{running_mean_name, running_var_name, ModelParams, ParamDecl};
use crate::tensor::{
    self, Activation, BatchNormState, BnCache, BnMode, ConvSpec, Element, Shape, Tensor,
};

pub trait Backend<T: Element> {
    type Var: Clone;

    fn shape(&self, v: &Self::Var) -> Shape;

    /// Looks up (or declares) a named parameter. Repeated calls with the same
    /// name refer to the same tensor.
    fn param(&mut self, name: &str, decl: ParamDecl) -> Result<Self::Var>;

    fn conv2d(&mut self, label: &str, x: &Self::Var, w: &Self::Var, b: Option<&Self::Var>, spec: &ConvSpec)
        -> Result<Self::Var>;

    /// `stats` names the running-statistics slot (see `params::running_mean_name`).
    fn batch_norm(&mut self, label: &str, x: &Self::Var, gamma: &Self::Var, beta: &Self::Var, stats: &str)
        -> Result<Self::Var>;

    fn activation(&mut self, label: &str, x: &Self::Var, kind: Activation, slope: Option<&Self::Var>)
        -> Result<Self::Var>;

    fn upsample2x(&mut self, label: &str, x: &Self::Var) -> Result<Self::Var>;

    fn add(&mut self, label: &str, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;

    fn maxout(&mut self, label: &str, x: &Self::Var, bg_channels: usize) -> Result<Self::Var>;
}

fn bn_state<T: Element>(
    params: &ModelParams<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &str,
    mode: BnMode,
) -> Result<BatchNormState<T>> {
    let mut st = BatchNormState::new(gamma.len(), mode);
    st.gamma = gamma.data().to_vec();
    st.beta = beta.data().to_vec();
    st.running_mean = params.get(&running_mean_name(stats))?.data().to_vec();
    st.running_var = params.get(&running_var_name(stats))?.data().to_vec();
    Ok(st)
}

fn check_decl<T: Element>(name: &str, t: &Tensor<T>, decl: &ParamDecl) -> Result<()> {
    if t.shape() != decl.shape {
        return Err(Error::shape(format!("parameter `{name}` is {:?}, expected {:?}", t.shape(), decl.shape)));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Eager inference

/// Eager backend; batch norm uses running statistics.
pub struct Eval<'a, T: Element> {
    params: &'a ModelParams<T>,
    cache: HashMap<String, Rc<Tensor<T>>>,
}

impl<'a, T: Element> Eval<'a, T> {
    pub fn new(params: &'a ModelParams<T>) -> Self {
        Eval { params, cache: HashMap::new() }
    }

    pub fn input(&self, t: Tensor<T>) -> Rc<Tensor<T>> {
        Rc::new(t)
    }
}

impl<T: Element> Backend<T> for Eval<'_, T> {
    type Var = Rc<Tensor<T>>;

    fn shape(&self, v: &Self::Var) -> Shape {
        v.shape()
    }

    fn param(&mut self, name: &str, decl: ParamDecl) -> Result<Self::Var> {
        if let Some(v) = self.cache.get(name) {
            return Ok(v.clone());
        }
        let t = self.params.get(name)?;
        check_decl(name, t, &decl)?;
        let v = Rc::new(t.clone());
        self.cache.insert(name.to_string(), v.clone());
        Ok(v)
    }

    fn conv2d(&mut self, _: &str, x: &Self::Var, w: &Self::Var, b: Option<&Self::Var>, spec: &ConvSpec) -> Result<Self::Var> {
        Ok(Rc::new(tensor::conv2d(x, w, b.map(|b| &**b), spec)?))
    }

    fn batch_norm(&mut self, _: &str, x: &Self::Var, gamma: &Self::Var, beta: &Self::Var, stats: &str) -> Result<Self::Var> {
        let mut st = bn_state(self.params, gamma, beta, stats, BnMode::Infer)?;
        Ok(Rc::new(tensor::batch_norm(x, &mut st)?.0))
    }

    fn activation(&mut self, _: &str, x: &Self::Var, kind: Activation, slope: Option<&Self::Var>) -> Result<Self::Var> {
        Ok(Rc::new(tensor::activation(x, kind, slope.map(|s| &**s))?))
    }

    fn upsample2x(&mut self, _: &str, x: &Self::Var) -> Result<Self::Var> {
        Ok(Rc::new(tensor::bilinear_upsample_x2(x)))
    }

    fn add(&mut self, _: &str, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        Ok(Rc::new(tensor::add(a, b)?))
    }

    fn maxout(&mut self, _: &str, x: &Self::Var, bg: usize) -> Result<Self::Var> {
        Ok(Rc::new(tensor::maxout_pairless(x, bg)?.output))
    }
}

// ---------------------------------------------------------------------------
// Recording tape

pub type NodeId = usize;

enum Op<T: Element> {
    Input,
    Param(String),
    Conv { x: NodeId, w: NodeId, b: Option<NodeId>, spec: ConvSpec },
    BatchNorm { x: NodeId, gamma: NodeId, beta: NodeId, cache: BnCache<T> },
    Act { x: NodeId, kind: Activation, slope: Option<NodeId> },
    Upsample { x: NodeId },
    Add { a: NodeId, b: NodeId },
    Maxout { x: NodeId, argmax: Vec<u32> },
}

struct Node<T: Element> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Reverse-mode tape. In train mode batch norm uses batch statistics and
/// writes updated running statistics back into the parameter store.
pub struct Tape<'a, T: Element> {
    params: &'a mut ModelParams<T>,
    mode: BnMode,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<String, NodeId>,
}

impl<'a, T: Element> Tape<'a, T> {
    pub fn new(params: &'a mut ModelParams<T>, mode: BnMode) -> Self {
        Tape { params, mode, nodes: Vec::new(), param_nodes: HashMap::new() }
    }

    pub fn input(&mut self, t: Tensor<T>) -> NodeId {
        self.push(t, Op::Input)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every piecewise-linear branch taken: the sign pattern of each
    /// activation input and each maxout winner. Two evaluations with equal
    /// signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Act { x, .. } => {
                    for v in self.nodes[*x].value.data() {
                        (*v > T::zero()).hash(&mut h);
                    }
                }
                Op::Maxout { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Back-propagates `seeds` (node, d loss / d node) and returns the
    /// gradient of every parameter that was touched, keyed by name.
    pub fn backward(&self, seeds: Vec<(NodeId, Tensor<T>)>) -> Result<IndexMap<String, Tensor<T>>> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        for (id, g) in seeds {
            accumulate(&mut grads, id, g)?;
        }
        let mut out = IndexMap::new();
        for id in (0..self.nodes.len()).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input => {}
                Op::Param(name) => {
                    out.insert(name.clone(), g);
                }
                Op::Conv { x, w, b, spec } => {
                    let cg = tensor::conv2d_vjp(self.value(*x), self.value(*w), spec, &g)?;
                    accumulate(&mut grads, *x, cg.input)?;
                    accumulate(&mut grads, *w, cg.weights)?;
                    if let (Some(b), Some(gb)) = (b, cg.bias) {
                        accumulate(&mut grads, *b, gb)?;
                    }
                }
                Op::BatchNorm { x, gamma, beta, cache } => {
                    let bg = tensor::batch_norm_vjp(cache, self.value(*gamma).data(), &g)?;
                    accumulate(&mut grads, *x, bg.input)?;
                    accumulate(&mut grads, *gamma, bg.gamma)?;
                    accumulate(&mut grads, *beta, bg.beta)?;
                }
                Op::Act { x, kind, slope } => {
                    let ag = tensor::activation_vjp(self.value(*x), *kind, slope.map(|s| self.value(s)), &g)?;
                    accumulate(&mut grads, *x, ag.input)?;
                    if let (Some(s), Some(gs)) = (slope, ag.slopes) {
                        accumulate(&mut grads, *s, gs)?;
                    }
                }
                Op::Upsample { x } => {
                    let gx = tensor::bilinear_upsample_x2_vjp(self.value(*x).shape(), &g)?;
                    accumulate(&mut grads, *x, gx)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *b, g.clone())?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Maxout { x, argmax } => {
                    let gx = tensor::maxout_vjp(self.value(*x).shape(), argmax, &g)?;
                    accumulate(&mut grads, *x, gx)?;
                }
            }
        }
        Ok(out)
    }
}

fn accumulate<T: Element>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) -> Result<()> {
    match &mut grads[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl<T: Element> Backend<T> for Tape<'_, T> {
    type Var = NodeId;

    fn shape(&self, v: &NodeId) -> Shape {
        self.nodes[*v].value.shape()
    }

    fn param(&mut self, name: &str, decl: ParamDecl) -> Result<NodeId> {
        if let Some(&id) = self.param_nodes.get(name) {
            return Ok(id);
        }
        let t = self.params.get(name)?;
        check_decl(name, t, &decl)?;
        let t = t.clone();
        let id = self.push(t, Op::Param(name.to_string()));
        self.param_nodes.insert(name.to_string(), id);
        Ok(id)
    }

    fn conv2d(&mut self, _: &str, x: &NodeId, w: &NodeId, b: Option<&NodeId>, spec: &ConvSpec) -> Result<NodeId> {
        let y = tensor::conv2d(self.value(*x), self.value(*w), b.map(|b| self.value(*b)), spec)?;
        Ok(self.push(y, Op::Conv { x: *x, w: *w, b: b.copied(), spec: *spec }))
    }

    fn batch_norm(&mut self, _: &str, x: &NodeId, gamma: &NodeId, beta: &NodeId, stats: &str) -> Result<NodeId> {
        let mut st = bn_state(self.params, self.value(*gamma), self.value(*beta), stats, self.mode)?;
        let (y, cache) = tensor::batch_norm(self.value(*x), &mut st)?;
        if self.mode == BnMode::Train {
            self.params.get_mut(&running_mean_name(stats))?.data_mut().copy_from_slice(&st.running_mean);
            self.params.get_mut(&running_var_name(stats))?.data_mut().copy_from_slice(&st.running_var);
        }
        Ok(self.push(y, Op::BatchNorm { x: *x, gamma: *gamma, beta: *beta, cache }))
    }

    fn activation(&mut self, _: &str, x: &NodeId, kind: Activation, slope: Option<&NodeId>) -> Result<NodeId> {
        let y = tensor::activation(self.value(*x), kind, slope.map(|s| self.value(*s)))?;
        Ok(self.push(y, Op::Act { x: *x, kind, slope: slope.copied() }))
    }

    fn upsample2x(&mut self, _: &str, x: &NodeId) -> Result<NodeId> {
        let y = tensor::bilinear_upsample_x2(self.value(*x));
        Ok(self.push(y, Op::Upsample { x: *x }))
    }

    fn add(&mut self, _: &str, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let y = tensor::add(self.value(*a), self.value(*b))?;
        Ok(self.push(y, Op::Add { a: *a, b: *b }))
    }

    fn maxout(&mut self, _: &str, x: &NodeId, bg: usize) -> Result<NodeId> {
        let m = tensor::maxout_pairless(self.value(*x), bg)?;
        Ok(self.push(m.output, Op::Maxout { x: *x, argmax: m.argmax }))
    }
}
