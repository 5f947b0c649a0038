use super::kernels::{self, ConvDims};
use super::{AutodiffError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    Conv1d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        dims: ConvDims,
    },
    Concat {
        inputs: Vec<NodeId>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Mul(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `|c - v|` for a scalar constant `c`.
    SubAbs {
        c: f64,
        v: NodeId,
    },
    Mse {
        pred: NodeId,
        target: NodeId,
    },
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Conv1d { .. } => "conv1d_same",
            Op::Concat { .. } => "concat_channels",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Mul(..) => "elementwise_mul",
            Op::Add(..) => "add",
            Op::SubAbs { .. } => "elementwise_sub_abs",
            Op::Mse { .. } => "mse_loss",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape for one forward pass.
///
/// Nodes are stored in creation order, which is a valid topological order;
/// [`Graph::backward`] walks it in reverse. A graph can be differentiated
/// once. Build a fresh graph for every forward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    differentiated: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        value: Tensor,
        op: Op,
        requires_grad: bool,
    ) -> Result<NodeId, AutodiffError> {
        if self.differentiated {
            return Err(AutodiffError::GraphConsumed);
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    /// Records a constant (no gradient is tracked for it).
    pub fn input(&mut self, value: Tensor) -> NodeId {
        let mut value = value;
        value.clear_grad();
        self.push(value, Op::Input, false)
            .expect("recording on a differentiated graph")
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: &Tensor) -> NodeId {
        let mut value = value.clone();
        value.clear_grad();
        self.push(value, Op::Param, true)
            .expect("recording on a differentiated graph")
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.node(id).value
    }

    /// Gradient of the last backward pass with respect to `id`, if any flowed there.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn op_tag(&self, id: NodeId) -> &'static str {
        self.node(id).op.tag()
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), AutodiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.node(i).requires_grad)
    }

    /// Same-length cross-correlation with `(K - 1) / 2` zeros on each side.
    pub fn conv1d_same(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, AutodiffError> {
        let (b, cin, l) = self.value(input).dims3()?;
        let (cout, wcin, k) = self
            .value(weight)
            .dims3()
            .map_err(|_| AutodiffError::Rank {
                expected: 3,
                shape: self.value(weight).shape().to_vec(),
            })?;
        if k % 2 == 0 {
            return Err(AutodiffError::EvenKernel(k));
        }
        if wcin != cin {
            return Err(AutodiffError::ChannelMismatch {
                expected: wcin,
                got: cin,
            });
        }
        if self.value(bias).len() != cout {
            return Err(AutodiffError::ShapeMismatch {
                op: "conv1d_same",
                left: vec![cout],
                right: self.value(bias).shape().to_vec(),
            });
        }
        let dims = ConvDims {
            batch: b,
            in_channels: cin,
            out_channels: cout,
            length: l,
            kernel: k,
        };
        let data = kernels::conv1d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            dims,
        );
        let value = Tensor::new(vec![b, cout, l], data)?;
        let rg = self.rg(&[input, weight, bias]);
        self.push(
            value,
            Op::Conv1d {
                input,
                weight,
                bias,
                dims,
            },
            rg,
        )
    }

    /// Concatenates rank-3 tensors along the channel axis, in argument order.
    pub fn concat_channels(&mut self, inputs: &[NodeId]) -> Result<NodeId, AutodiffError> {
        let first = *inputs.first().ok_or(AutodiffError::EmptyConcat)?;
        let (b, _, l) = self.value(first).dims3()?;
        let mut channels = Vec::with_capacity(inputs.len());
        for &id in inputs {
            let (bi, ci, li) = self.value(id).dims3()?;
            if bi != b || li != l {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_channels",
                    left: vec![b, 0, l],
                    right: vec![bi, ci, li],
                });
            }
            channels.push(ci);
        }
        let total: usize = channels.iter().sum();
        let mut data = Vec::with_capacity(b * total * l);
        for bi in 0..b {
            for (&id, &ci) in inputs.iter().zip(&channels) {
                let src = self.value(id).data();
                data.extend_from_slice(&src[bi * ci * l..(bi + 1) * ci * l]);
            }
        }
        let value = Tensor::new(vec![b, total, l], data)?;
        let rg = self.rg(inputs);
        self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            rg,
        )
    }

    fn map(&mut self, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId, AutodiffError> {
        let src = self.value(x);
        let data = src.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(src.shape().to_vec(), data)?;
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId, AutodiffError> {
        self.map(x, kernels::sigmoid, Op::Sigmoid(x))
    }

    /// `|c - v|`, elementwise.
    pub fn sub_abs(&mut self, c: f64, v: NodeId) -> Result<NodeId, AutodiffError> {
        self.map(v, |x| (c - x).abs(), Op::SubAbs { c, v })
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId, AutodiffError> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        self.push(value, op, rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip("elementwise_mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    /// Mean of squared differences over every element; a scalar node.
    pub fn mse_loss(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId, AutodiffError> {
        self.same_shape("mse_loss", pred, target)?;
        let (p, t) = (self.value(pred).data(), self.value(target).data());
        let n = p.len().max(1) as f64;
        let sum: f64 = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
        let rg = self.rg(&[pred, target]);
        self.push(Tensor::scalar(sum / n), Op::Mse { pred, target }, rg)
    }

    fn accumulate(&mut self, id: NodeId, g: Vec<f64>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Afterwards [`Graph::grad`] returns `d loss / d node` for every node that
    /// requires a gradient and lies upstream of `loss`. Gradients from
    /// multiple consumers of one node are summed.
    pub fn backward(&mut self, loss: NodeId) -> Result<(), AutodiffError> {
        if self.differentiated {
            return Err(AutodiffError::GraphConsumed);
        }
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(AutodiffError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.differentiated = true;
        self.grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = self.grads[idx].take() else {
                continue;
            };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Input | Op::Param => {}
                Op::Conv1d {
                    input,
                    weight,
                    bias,
                    dims,
                } => {
                    let need_input = self.nodes[input.0].requires_grad;
                    let (gi, gw, gb) = kernels::conv1d_backward(
                        self.value(input).data(),
                        self.value(weight).data(),
                        &g,
                        dims,
                        need_input,
                    );
                    if let Some(gi) = gi {
                        self.accumulate(input, gi);
                    }
                    self.accumulate(weight, gw);
                    self.accumulate(bias, gb);
                }
                Op::Concat { inputs } => {
                    let (b, total, l) = self.nodes[idx].value.dims3()?;
                    let mut offset = 0;
                    for id in inputs {
                        let ci = self.value(id).dims3()?.1;
                        let mut gi = Vec::with_capacity(b * ci * l);
                        for bi in 0..b {
                            let start = (bi * total + offset) * l;
                            gi.extend_from_slice(&g[start..start + ci * l]);
                        }
                        offset += ci;
                        self.accumulate(id, gi);
                    }
                }
                Op::Relu(x) => {
                    let gx = g
                        .iter()
                        .zip(self.value(x).data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    self.accumulate(x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g
                        .iter()
                        .zip(self.nodes[idx].value.data())
                        .map(|(&gv, &s)| gv * s * (1.0 - s))
                        .collect();
                    self.accumulate(x, gx);
                }
                Op::SubAbs { c, v } => {
                    // d|c - v|/dv = sign(v - c); zero at the kink.
                    let gv = g
                        .iter()
                        .zip(self.value(v).data())
                        .map(|(&gv, &x)| {
                            let d = x - c;
                            if d > 0.0 {
                                gv
                            } else if d < 0.0 {
                                -gv
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    self.accumulate(v, gv);
                }
                Op::Mul(a, b) => {
                    let ga = g
                        .iter()
                        .zip(self.value(b).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    let gb = g
                        .iter()
                        .zip(self.value(a).data())
                        .map(|(x, y)| x * y)
                        .collect();
                    self.accumulate(a, ga);
                    self.accumulate(b, gb);
                }
                Op::Add(a, b) => {
                    self.accumulate(a, g.clone());
                    self.accumulate(b, g.clone());
                }
                Op::Mse { pred, target } => {
                    let (p, t) = (self.value(pred).data(), self.value(target).data());
                    let scale = 2.0 * g[0] / p.len().max(1) as f64;
                    let gp: Vec<f64> = p.iter().zip(t).map(|(a, b)| scale * (a - b)).collect();
                    let gt: Vec<f64> = gp.iter().map(|v| -v).collect();
                    self.accumulate(pred, gp);
                    self.accumulate(target, gt);
                }
            }
            self.grads[idx] = Some(g);
        }
        Ok(())
    }
}
