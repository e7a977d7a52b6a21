use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::Matrix;
use super::tape::{Gradients, Tape, Var};

/// Anything that owns an ordered list of parameter matrices.
pub trait Parameters {
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    /// `self ← tau·source + (1 − tau)·self`, elementwise.
    fn soft_update_from(&mut self, source: &Self, tau: f64)
    where
        Self: Sized,
    {
        for (dst, src) in self.params_mut().into_iter().zip(source.params()) {
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
    }
}

/// Affine map `x·W + b` with `W` shaped `in×out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    /// Uniform fan-in initialization, `U(−1/√in, 1/√in)`.
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight = Matrix::from_vec(
            inputs,
            outputs,
            (0..inputs * outputs).map(|_| dist.sample(rng)).collect(),
        );
        let bias = Matrix::from_vec(1, outputs, (0..outputs).map(|_| dist.sample(rng)).collect());
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundLinear {
        let (weight, bias) = if trainable {
            (tape.param(self.weight.clone()), tape.param(self.bias.clone()))
        } else {
            (
                tape.constant(self.weight.clone()),
                tape.constant(self.bias.clone()),
            )
        };
        BoundLinear { weight, bias }
    }
}

impl Parameters for Linear {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundLinear {
    weight: Var,
    bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let y = tape.matmul(x, self.weight);
        tape.add_row(y, self.bias)
    }

    pub fn vars(&self) -> [Var; 2] {
        [self.weight, self.bias]
    }
}

/// Multi-layer perceptron with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `sizes` lists every layer width, input first and output last.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least input and output widths");
        let layers = sizes
            .windows(2)
            .map(|w| Linear::new(w[0], w[1], rng))
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        BoundMlp {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
            shapes: self
                .params()
                .iter()
                .map(|p| p.shape())
                .collect(),
        }
    }

    /// Forward pass without recording gradients.
    pub fn eval(&self, x: &Matrix) -> Matrix {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let y = bound.forward(&mut tape, xv);
        tape.value(y).clone()
    }
}

impl Parameters for Mlp {
    fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// An [`Mlp`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundMlp {
    layers: Vec<BoundLinear>,
    shapes: Vec<(usize, usize)>,
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h);
            if i + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Parameter gradients in [`Parameters::params`] order.
    pub fn grads(&self, g: &Gradients) -> Vec<Matrix> {
        self.layers
            .iter()
            .flat_map(|l| l.vars())
            .zip(&self.shapes)
            .map(|(v, &shape)| g.get(v, shape))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_param_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 5, 2], &mut rng);
        let shapes: Vec<_> = mlp.params().iter().map(|p| p.shape()).collect();
        assert_eq!(shapes, vec![(3, 5), (1, 5), (5, 2), (1, 2)]);
        assert_eq!(mlp.num_parameters(), 15 + 5 + 10 + 2);
        let y = mlp.eval(&Matrix::zeros(4, 3));
        assert_eq!(y.shape(), (4, 2));
    }

    #[test]
    fn soft_update_blends() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = Mlp::new(&[2, 2], &mut rng);
        let mut dst = src.clone();
        dst.params_mut().into_iter().for_each(|p| p.data_mut().fill(0.0));
        dst.soft_update_from(&src, 0.5);
        for (d, s) in dst.params().iter().zip(src.params()) {
            for (a, b) in d.data().iter().zip(s.data()) {
                assert_eq!(*a, 0.5 * b);
            }
        }
        dst.soft_update_from(&src, 1.0);
        assert_eq!(dst, src);
    }
}
