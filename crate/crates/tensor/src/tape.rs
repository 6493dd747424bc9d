use crate::conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward};
use crate::{ParamGrads, ParamId, ParamStore, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv {
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
        stride: usize,
        pad: usize,
        transposed: bool,
    },
    Prelu {
        x: Var,
        slope: ParamId,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Concat(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Reverse-mode recording of one forward evaluation.
///
/// Parameters are read from the borrowed store and never copied onto the
/// tape; gradients with respect to them are accumulated into a
/// [`ParamGrads`] by [`Tape::backward`].
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Gradients of the leaf values reached from the root, indexed by [`Var`].
pub struct VarGrads {
    grads: Vec<Option<Tensor>>,
}

impl VarGrads {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn conv2d(&mut self, x: Var, weight: ParamId, bias: Option<ParamId>, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let out = conv2d(
            self.value(x),
            self.params.get(weight),
            bias.map(|b| self.params.get(b)),
            stride,
            pad,
        )?;
        Ok(self.push(
            out,
            Op::Conv {
                x,
                weight,
                bias,
                stride,
                pad,
                transposed: false,
            },
        ))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        weight: ParamId,
        bias: Option<ParamId>,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let out = conv_transpose2d(
            self.value(x),
            self.params.get(weight),
            bias.map(|b| self.params.get(b)),
            stride,
            pad,
        )?;
        Ok(self.push(
            out,
            Op::Conv {
                x,
                weight,
                bias,
                stride,
                pad,
                transposed: true,
            },
        ))
    }

    /// Channel-wise parametric ReLU: `x` where `x > 0`, `slope[c]·x` otherwise.
    pub fn prelu(&mut self, x: Var, slope: ParamId) -> Result<Var, TensorError> {
        let input = self.value(x);
        let (c, h, w) = input.dims3()?;
        let a = self.params.get(slope);
        if a.numel() != c {
            return Err(TensorError::ShapeMismatch {
                left: vec![c],
                right: a.shape().to_vec(),
            });
        }
        let plane = h * w;
        let mut out = input.clone();
        for (chunk, &ac) in out.data_mut().chunks_mut(plane).zip(a.data()) {
            for v in chunk {
                if *v <= 0.0 {
                    *v *= ac;
                }
            }
        }
        Ok(self.push(out, Op::Prelu { x, slope }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Channel concatenation of `[c_i, h, w]` values.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let values: Vec<&Tensor> = parts.iter().map(|v| self.value(*v)).collect();
        let out = Tensor::concat_channels(&values)?;
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Back-propagates `seed` (the gradient of the loss with respect to
    /// `root`) through the recorded graph, accumulating parameter gradients
    /// into `param_grads`.
    pub fn backward(&self, root: Var, seed: Tensor, param_grads: &mut ParamGrads) -> Result<VarGrads, TensorError> {
        self.value(root).expect_same_shape(&seed)?;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);

        fn push_grad(grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<(), TensorError> {
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    // leaves keep their gradient for the caller
                    grads[idx] = Some(g);
                }
                Op::Conv {
                    x,
                    weight,
                    bias,
                    stride,
                    pad,
                    transposed,
                } => {
                    let input = self.value(*x);
                    let w = self.params.get(*weight);
                    let (dx, dw, db) = if *transposed {
                        conv_transpose2d_backward(input, w, &g, *stride, *pad)?
                    } else {
                        conv2d_backward(input, w, &g, *stride, *pad)?
                    };
                    param_grads.accumulate(*weight, &dw)?;
                    if let Some(b) = bias {
                        param_grads.accumulate(*b, &db)?;
                    }
                    push_grad(&mut grads, *x, dx)?;
                }
                Op::Prelu { x, slope } => {
                    let input = self.value(*x);
                    let (_, h, w) = input.dims3()?;
                    let plane = h * w;
                    let a = self.params.get(*slope);
                    let mut dx = g.clone();
                    let mut da = Tensor::zeros(a.shape());
                    for (ch, ((dx_c, x_c), g_c)) in dx
                        .data_mut()
                        .chunks_mut(plane)
                        .zip(input.data().chunks(plane))
                        .zip(g.data().chunks(plane))
                        .enumerate()
                    {
                        let ac = a.data()[ch];
                        let mut acc = 0.0;
                        for ((d, &xv), &gv) in dx_c.iter_mut().zip(x_c).zip(g_c) {
                            if xv <= 0.0 {
                                *d = gv * ac;
                                acc += gv * xv;
                            }
                        }
                        da.data_mut()[ch] = acc;
                    }
                    param_grads.accumulate(*slope, &da)?;
                    push_grad(&mut grads, *x, dx)?;
                }
                Op::Add(a, b) => {
                    push_grad(&mut grads, *a, g.clone())?;
                    push_grad(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    push_grad(&mut grads, *b, g.map(|v| -v))?;
                    push_grad(&mut grads, *a, g)?;
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let c = self.value(*p).dims3()?.0;
                        push_grad(&mut grads, *p, g.channel_slice(start, c)?)?;
                        start += c;
                    }
                }
            }
        }
        Ok(VarGrads { grads })
    }
}
