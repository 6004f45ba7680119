//! Fully connected ReLU network with hand-written reverse-mode gradients.

use rand::Rng;

use crate::linalg::{matmul, matmul_nt, matmul_tn, Matrix};

/// Affine layer `y = x W + b` with `W` stored `[fan_in × fan_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Matrix::zeros(fan_in, fan_out), bias: vec![0.0; fan_out] }
    }

    /// Kaiming-style uniform fan-in initialization; biases start at zero.
    pub fn kaiming<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound));
        Self { weight, bias: vec![0.0; fan_out] }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = matmul(x, &self.weight);
        for i in 0..y.rows() {
            for (v, b) in y.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }
}

/// ReLU on every hidden layer, identity on the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Tape {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Matrix>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Matrix>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        Self { layers: dims.windows(2).map(|w| Dense::kaiming(w[0], w[1], rng)).collect() }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs input and output sizes");
        Self { layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect() }
    }

    /// Same shapes, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.fan_in(), l.fan_out())).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut h = self.layers[0].forward(x);
        for layer in &self.layers[1..] {
            relu_in_place(&mut h);
            h = layer.forward(&h);
        }
        h
    }

    pub fn forward_taped(&self, x: Matrix) -> (Matrix, Tape) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            if i + 1 == self.layers.len() {
                return (z, Tape { inputs, pre });
            }
            let mut a = z.clone();
            relu_in_place(&mut a);
            pre.push(z);
            h = a;
        }
        unreachable!("loop returns on the last layer")
    }

    /// Accumulate parameter gradients into `grads` and return `∂L/∂input`.
    pub fn backward(&self, tape: Tape, grad_out: Matrix, grads: &mut Mlp) -> Matrix {
        let Tape { mut inputs, mut pre } = tape;
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = inputs.pop().expect("one input per layer");
            let dw = matmul_tn(&input, &g);
            let acc = &mut grads.layers[i];
            for (a, d) in acc.weight.as_mut_slice().iter_mut().zip(dw.as_slice()) {
                *a += d;
            }
            for r in 0..g.rows() {
                for (a, d) in acc.bias.iter_mut().zip(g.row(r)) {
                    *a += d;
                }
            }
            let mut gin = matmul_nt(&g, &layer.weight);
            if i > 0 {
                let z = pre.pop().expect("one pre-activation per hidden layer");
                for (v, zv) in gin.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if *zv <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            g = gin;
        }
        g
    }

    /// `∂L/∂input` only, skipping parameter gradients.
    pub fn backward_input(&self, tape: Tape, grad_out: Matrix) -> Matrix {
        let Tape { mut pre, .. } = tape;
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let mut gin = matmul_nt(&g, &layer.weight);
            if i > 0 {
                let z = pre.pop().expect("one pre-activation per hidden layer");
                for (v, zv) in gin.as_mut_slice().iter_mut().zip(z.as_slice()) {
                    if *zv <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            g = gin;
        }
        g
    }

    /// Parameter tensors in declaration order (per layer: weight, then bias).
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }
}

fn relu_in_place(m: &mut Matrix) {
    for v in m.as_mut_slice() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}
