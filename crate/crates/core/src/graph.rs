//! Execution back ends for the network definition.
//!
//! The model is written once against [`Graph`]. [`Eager`] evaluates it
//! directly for inference; [`Tape`] records every operation so parameter
//! gradients can be pulled back with [`Tape::backward`].

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::ops::{self, ConvWeight, NormWeight, OpId, Resize};
use crate::params::ParamTree;
use crate::tensor::{Real, Tensor4};

pub trait Graph<T: Real> {
    type Var;

    fn value<'v>(&'v self, v: &'v Self::Var) -> &'v Tensor4<T>;
    fn param(&mut self, name: &str) -> Result<Self::Var>;
    fn conv(
        &mut self,
        x: &Self::Var,
        coeffs: &Self::Var,
        bias: &Self::Var,
        groups: usize,
    ) -> Result<Self::Var>;
    fn layer_norm(&mut self, x: &Self::Var, gamma: &Self::Var) -> Result<Self::Var>;
    fn silu(&mut self, x: &Self::Var) -> Result<Self::Var>;
    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn split(&mut self, x: &Self::Var) -> Result<(Self::Var, Self::Var)>;
    fn concat(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var>;
    fn shuffle(&mut self, x: &Self::Var, groups: usize) -> Result<Self::Var>;
    fn pixel_shuffle(&mut self, x: &Self::Var, r: usize) -> Result<Self::Var>;
    fn bilinear(&mut self, x: &Self::Var, scale: usize) -> Result<Self::Var>;
}

/// Direct evaluation without recording.
pub struct Eager<'a, T> {
    tree: &'a ParamTree<T>,
}

impl<'a, T: Real> Eager<'a, T> {
    pub fn new(tree: &'a ParamTree<T>) -> Self {
        Eager { tree }
    }
}

fn conv_weight<'w, T: Real>(
    coeffs: &'w Tensor4<T>,
    bias: &'w Tensor4<T>,
    groups: usize,
) -> ConvWeight<'w, T> {
    ConvWeight::new(coeffs, Some(bias.data()), groups)
}

impl<'a, T: Real> Graph<T> for Eager<'a, T> {
    type Var = Cow<'a, Tensor4<T>>;

    fn value<'v>(&'v self, v: &'v Self::Var) -> &'v Tensor4<T> {
        v.as_ref()
    }

    fn param(&mut self, name: &str) -> Result<Self::Var> {
        self.tree.get(name).map(Cow::Borrowed)
    }

    fn conv(
        &mut self,
        x: &Self::Var,
        coeffs: &Self::Var,
        bias: &Self::Var,
        groups: usize,
    ) -> Result<Self::Var> {
        ops::conv2d(x, &conv_weight(coeffs, bias, groups)).map(Cow::Owned)
    }

    fn layer_norm(&mut self, x: &Self::Var, gamma: &Self::Var) -> Result<Self::Var> {
        ops::layer_norm_channels(x, &NormWeight::new(gamma.data())).map(Cow::Owned)
    }

    fn silu(&mut self, x: &Self::Var) -> Result<Self::Var> {
        Ok(Cow::Owned(ops::silu(x)))
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        a.add(b).map(Cow::Owned)
    }

    fn split(&mut self, x: &Self::Var) -> Result<(Self::Var, Self::Var)> {
        let (a, b) = ops::channel_split(x)?;
        Ok((Cow::Owned(a), Cow::Owned(b)))
    }

    fn concat(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        ops::channel_concat(a, b).map(Cow::Owned)
    }

    fn shuffle(&mut self, x: &Self::Var, groups: usize) -> Result<Self::Var> {
        ops::channel_shuffle(x, groups).map(Cow::Owned)
    }

    fn pixel_shuffle(&mut self, x: &Self::Var, r: usize) -> Result<Self::Var> {
        ops::pixel_shuffle(x, r).map(Cow::Owned)
    }

    fn bilinear(&mut self, x: &Self::Var, scale: usize) -> Result<Self::Var> {
        ops::bilinear_resize(x, scale).map(Cow::Owned)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
struct Node<T> {
    value: Tensor4<T>,
    op: Option<OpId>,
    inputs: Vec<NodeId>,
    /// Index into the parameter tree for parameter leaves.
    param: Option<usize>,
    needs_grad: bool,
}

/// Records operations for reverse-mode differentiation with respect to
/// the parameters of one tree.
pub struct Tape<'a, T> {
    tree: &'a ParamTree<T>,
    nodes: Vec<Node<T>>,
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(tree: &'a ParamTree<T>) -> Self {
        Tape {
            tree,
            nodes: Vec::new(),
        }
    }

    /// Constant leaf (network input); no gradient is kept for it.
    pub fn input(&mut self, value: Tensor4<T>) -> NodeId {
        self.push(value, None, Vec::new(), None)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        value: Tensor4<T>,
        op: Option<OpId>,
        inputs: Vec<NodeId>,
        param: Option<usize>,
    ) -> NodeId {
        let needs_grad = param.is_some() || inputs.iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            inputs,
            param,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn v(&self, id: &NodeId) -> &Tensor4<T> {
        &self.nodes[id.0].value
    }

    /// Pulls `cotangent` (shaped like `output`) back to every parameter.
    ///
    /// The result mirrors the tree layout; parameters the output does not
    /// depend on get zero gradients. Nodes are visited in reverse creation
    /// order and contributions are summed in a fixed order.
    pub fn backward(self, output: NodeId, cotangent: Tensor4<T>) -> Result<ParamTree<T>> {
        let out_shape = self.nodes[output.0].value.shape();
        if cotangent.shape() != out_shape {
            return Err(Error::shape(
                "backward",
                &out_shape.dims(),
                &cotangent.dims(),
            ));
        }
        let mut grads = self.tree.zeros_like();
        let mut pending: Vec<Option<Tensor4<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[output.0] = Some(cotangent);
        for idx in (0..=output.0).rev() {
            let Some(g) = pending[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if let Some(p) = node.param {
                grads.entry_mut(p).value.add_assign(&g);
                continue;
            }
            let Some(op) = node.op else { continue };
            if !node.needs_grad {
                continue;
            }
            let inputs: Vec<&Tensor4<T>> = node.inputs.iter().map(|i| self.v(i)).collect();
            let input_grads = ops::vjp(op, &inputs, &[&g])?;
            for (src, gi) in node.inputs.iter().zip(input_grads) {
                if !self.nodes[src.0].needs_grad {
                    continue;
                }
                match &mut pending[src.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(grads)
    }
}

impl<'a, T: Real> Graph<T> for Tape<'a, T> {
    type Var = NodeId;

    fn value<'v>(&'v self, v: &'v Self::Var) -> &'v Tensor4<T> {
        self.v(v)
    }

    fn param(&mut self, name: &str) -> Result<NodeId> {
        let idx = self
            .tree
            .position(name)
            .ok_or_else(|| Error::config(format!("no parameter named `{name}`")))?;
        let value = self.tree.get(name)?.clone();
        Ok(self.push(value, None, Vec::new(), Some(idx)))
    }

    fn conv(
        &mut self,
        x: &NodeId,
        coeffs: &NodeId,
        bias: &NodeId,
        groups: usize,
    ) -> Result<NodeId> {
        let y = ops::conv2d(
            self.v(x),
            &conv_weight(self.v(coeffs), self.v(bias), groups),
        )?;
        Ok(self.push(
            y,
            Some(OpId::Conv2d { groups }),
            vec![*x, *coeffs, *bias],
            None,
        ))
    }

    fn layer_norm(&mut self, x: &NodeId, gamma: &NodeId) -> Result<NodeId> {
        let w = NormWeight::new(self.v(gamma).data());
        let y = ops::layer_norm_channels(self.v(x), &w)?;
        let eps = w.eps.to_f64_lossy();
        Ok(self.push(y, Some(OpId::LayerNorm { eps }), vec![*x, *gamma], None))
    }

    fn silu(&mut self, x: &NodeId) -> Result<NodeId> {
        let y = ops::silu(self.v(x));
        Ok(self.push(y, Some(OpId::Silu), vec![*x], None))
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let y = self.v(a).add(self.v(b))?;
        Ok(self.push(y, Some(OpId::Add), vec![*a, *b], None))
    }

    fn split(&mut self, x: &NodeId) -> Result<(NodeId, NodeId)> {
        let (a, b) = ops::channel_split(self.v(x))?;
        let half = a.c();
        let ia = self.push(
            a,
            Some(OpId::ChannelSlice {
                start: 0,
                len: half,
            }),
            vec![*x],
            None,
        );
        let ib = self.push(
            b,
            Some(OpId::ChannelSlice {
                start: half,
                len: half,
            }),
            vec![*x],
            None,
        );
        Ok((ia, ib))
    }

    fn concat(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        let y = ops::channel_concat(self.v(a), self.v(b))?;
        Ok(self.push(y, Some(OpId::ChannelConcat), vec![*a, *b], None))
    }

    fn shuffle(&mut self, x: &NodeId, groups: usize) -> Result<NodeId> {
        let y = ops::channel_shuffle(self.v(x), groups)?;
        Ok(self.push(y, Some(OpId::ChannelShuffle { groups }), vec![*x], None))
    }

    fn pixel_shuffle(&mut self, x: &NodeId, r: usize) -> Result<NodeId> {
        let y = ops::pixel_shuffle(self.v(x), r)?;
        Ok(self.push(y, Some(OpId::PixelShuffle { r }), vec![*x], None))
    }

    fn bilinear(&mut self, x: &NodeId, scale: usize) -> Result<NodeId> {
        let y = ops::bilinear_resize(self.v(x), scale)?;
        Ok(self.push(
            y,
            Some(OpId::Resize(Resize::Bilinear(scale))),
            vec![*x],
            None,
        ))
    }
}
