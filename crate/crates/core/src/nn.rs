//! Feed-forward networks evaluated either directly or on a [`Tape`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{gemm_strided, Activation, Tape, Tensor, Var};

/// Affine layer with `weight: [in, out]` and `bias: [out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights ~ U(-sqrt(1/fan_in), +sqrt(1/fan_in)), zero biases.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (1.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Linear {
            weight: Tensor::from_parts_unchecked(vec![fan_in, fan_out], w),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ffn {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
    /// Multiplier applied after the output activation.
    pub output_scale: f64,
}

impl Ffn {
    /// `sizes = [in, h1, ..., out]`.
    pub fn init<R: Rng>(sizes: &[usize], hidden: Activation, output: Activation, output_scale: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an FFN needs input and output sizes");
        let layers = sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        Ffn {
            layers,
            hidden,
            output,
            output_scale,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Plain forward pass for a single input row.
    pub fn eval_row(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                op: "ffn",
                lhs: vec![x.len()],
                rhs: vec![self.input_dim()],
            });
        }
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let (fi, fo) = (layer.fan_in(), layer.fan_out());
            // same kernel as the tape's dense op, so results agree bitwise
            let mut next = layer.bias.data().to_vec();
            gemm_strided(1, fi, fo, &cur, (fi as isize, 1), layer.weight.data(), (fo as isize, 1), 1.0, &mut next);
            let act = if li == last { self.output } else { self.hidden };
            for v in next.iter_mut() {
                *v = act.apply(*v);
            }
            cur = next;
        }
        if self.output_scale != 1.0 {
            cur.iter_mut().for_each(|v| *v *= self.output_scale);
        }
        if cur.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "ffn" });
        }
        Ok(cur)
    }

    /// Registers every parameter on `tape`, as differentiable leaves when
    /// `trainable`, otherwise as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundFfn {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))
                } else {
                    (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                }
            })
            .collect();
        BoundFfn {
            layers,
            hidden: self.hidden,
            output: self.output,
            output_scale: self.output_scale,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// An [`Ffn`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundFfn {
    layers: Vec<(Var, Var)>,
    hidden: Activation,
    output: Activation,
    output_scale: f64,
}

impl BoundFfn {
    /// `x: [n, in]` to `[n, out]`.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let last = self.layers.len() - 1;
        let mut cur = x;
        for (li, &(w, b)) in self.layers.iter().enumerate() {
            let act = if li == last { self.output } else { self.hidden };
            cur = tape.dense(cur, w, b, act)?;
        }
        if self.output_scale != 1.0 {
            cur = tape.scale(cur, self.output_scale)?;
        }
        Ok(cur)
    }

    /// Parameter vars in the same order as [`Ffn::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}
