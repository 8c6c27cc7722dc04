use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Identity => T::one(),
        }
    }
}

/// Multilayer perceptron with a shared hidden activation and a separate
/// output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<T>,
}

/// Activations recorded by [`Mlp::forward_cached`]; `values[0]` is the input
/// and `values[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    pub batch: usize,
    pub values: Vec<Vec<T>>,
}

impl<T> Tape<T> {
    pub fn output(&self) -> &[T] {
        self.values.last().expect("tape holds at least the input")
    }
}

impl<T: Scalar> Mlp<T> {
    /// Random initialization: every weight and bias uniform in
    /// `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        let mut net = Self::zeros(sizes, hidden, output);
        for layer in 0..net.num_layers() {
            let fan_in = sizes[layer];
            let bound = 1.0 / (fan_in as f64).sqrt();
            let (start, end) = net.layer_range(layer);
            for p in &mut net.params[start..end] {
                *p = T::from_f64(rng.random_range(-bound..=bound));
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least an input and an output size");
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![T::zero(); count],
        }
    }

    pub fn from_params(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        params: Vec<T>,
    ) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes, hidden, output);
        if params.len() != net.params.len() {
            return Err(NnError::Shape(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// `[start, end)` of layer `l`'s weights followed by its biases.
    fn layer_range(&self, layer: usize) -> (usize, usize) {
        let start: usize = self.sizes[..=layer]
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum();
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        (start, start + i * o + o)
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, x: &[T]) -> Result<usize, NnError> {
        let dim = self.input_dim();
        if x.len() % dim != 0 {
            return Err(NnError::InputDim {
                expected: dim,
                got: x.len(),
            });
        }
        Ok(x.len() / dim)
    }

    fn layer_forward(&self, layer: usize, x: &[T], batch: usize) -> Vec<T> {
        let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
        let (start, _) = self.layer_range(layer);
        let w = &self.params[start..start + i * o];
        let b = &self.params[start + i * o..start + i * o + o];
        let mut z = Vec::with_capacity(batch * o);
        for _ in 0..batch {
            z.extend_from_slice(b);
        }
        // Z = X·Wᵀ + 1·bᵀ
        T::gemm(
            batch,
            i,
            o,
            T::one(),
            x,
            i as isize,
            1,
            w,
            1,
            i as isize,
            T::one(),
            &mut z,
            o as isize,
            1,
        );
        let act = self.activation(layer);
        if act != Activation::Identity {
            for v in &mut z {
                *v = act.apply(*v);
            }
        }
        z
    }

    /// Forward pass over a row-major batch `batch × input_dim`.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, NnError> {
        let batch = self.check_input(x)?;
        let mut h = self.layer_forward(0, x, batch);
        for layer in 1..self.num_layers() {
            h = self.layer_forward(layer, &h, batch);
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &[T]) -> Result<Tape<T>, NnError> {
        let batch = self.check_input(x)?;
        let mut values = Vec::with_capacity(self.sizes.len());
        values.push(x.to_vec());
        for layer in 0..self.num_layers() {
            let next = self.layer_forward(layer, &values[layer], batch);
            values.push(next);
        }
        Ok(Tape { batch, values })
    }

    /// Reverse pass. Returns the parameter gradient (same layout as
    /// [`Mlp::params`]) and, when requested, the gradient with respect to
    /// the input batch.
    pub fn backward(
        &self,
        tape: &Tape<T>,
        upstream: &[T],
        want_input_grad: bool,
    ) -> Result<(Vec<T>, Option<Vec<T>>), NnError> {
        let batch = tape.batch;
        if tape.values.len() != self.sizes.len()
            || tape.values[0].len() != batch * self.input_dim()
        {
            return Err(NnError::Shape("tape does not belong to this network".into()));
        }
        if upstream.len() != batch * self.output_dim() {
            return Err(NnError::Shape(format!(
                "upstream gradient has {} entries, expected {}",
                upstream.len(),
                batch * self.output_dim()
            )));
        }

        let mut grads = vec![T::zero(); self.params.len()];
        let mut delta = upstream.to_vec();
        for layer in (0..self.num_layers()).rev() {
            let (i, o) = (self.sizes[layer], self.sizes[layer + 1]);
            let act = self.activation(layer);
            let y = &tape.values[layer + 1];
            if act != Activation::Identity {
                for (d, &yv) in delta.iter_mut().zip(y) {
                    *d = *d * act.derivative_from_output(yv);
                }
            }
            let x = &tape.values[layer];
            let (start, _) = self.layer_range(layer);
            let (gw, gb) = grads[start..start + i * o + o].split_at_mut(i * o);
            // dW = δᵀ·X
            T::gemm(
                o,
                batch,
                i,
                T::one(),
                &delta,
                1,
                o as isize,
                x,
                i as isize,
                1,
                T::zero(),
                gw,
                i as isize,
                1,
            );
            for row in delta.chunks_exact(o) {
                for (g, &d) in gb.iter_mut().zip(row) {
                    *g = *g + d;
                }
            }
            if layer > 0 || want_input_grad {
                let w = &self.params[start..start + i * o];
                let mut dx = vec![T::zero(); batch * i];
                // dX = δ·W
                T::gemm(
                    batch,
                    o,
                    i,
                    T::one(),
                    &delta,
                    o as isize,
                    1,
                    w,
                    i as isize,
                    1,
                    T::zero(),
                    &mut dx,
                    i as isize,
                    1,
                );
                delta = dx;
            }
        }
        Ok((grads, want_input_grad.then_some(delta)))
    }

    /// Converts every parameter to another element type.
    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            sizes: self.sizes.clone(),
            hidden: self.hidden,
            output: self.output,
            params: self.params.iter().map(|p| U::from_f64(Scalar::to_f64(*p))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::<f64>::zeros(&[3, 5, 2], Activation::Relu, Activation::Identity);
        let y = net.forward(&[1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn single_linear_layer_is_affine() {
        let net = Mlp::from_params(
            &[2, 2],
            Activation::Relu,
            Activation::Identity,
            vec![1.0, 2.0, 3.0, 4.0, 0.5, -0.5],
        )
        .unwrap();
        let y = net.forward(&[1.0, 1.0, 2.0, -1.0]).unwrap();
        assert_eq!(y, vec![3.5, 6.5, 0.5, 1.5]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Mlp::<f32>::zeros(&[3, 2], Activation::Relu, Activation::Identity);
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(NnError::InputDim { expected: 3, got: 2 })
        ));
        let tape = net.forward_cached(&[1.0, 2.0, 3.0]).unwrap();
        assert!(net.backward(&tape, &[1.0], false).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::<f64>::new(&[4, 8, 3], Activation::Tanh, Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        let tape = net.forward_cached(&x).unwrap();
        let (g, dx) = net.backward(&tape, &[0.0; 6], true).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_gradient_is_outer_product() {
        // single identity layer: dW = δᵀ X, db = Σ δ
        let net = Mlp::from_params(
            &[2, 1],
            Activation::Relu,
            Activation::Identity,
            vec![0.3, -0.7, 0.1],
        )
        .unwrap();
        let x = [1.0, 2.0, -3.0, 0.5];
        let tape = net.forward_cached(&x).unwrap();
        let (g, dx) = net.backward(&tape, &[2.0, -1.0], true).unwrap();
        assert_eq!(g, vec![2.0 * 1.0 - 1.0 * -3.0, 2.0 * 2.0 - 0.5, 1.0]);
        assert_eq!(dx.unwrap(), vec![0.6, -1.4, -0.3, 0.7]);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::<f32>::new(&[16, 4], Activation::Relu, Activation::Identity, &mut rng);
        assert!(net.params().iter().all(|p| p.abs() <= 0.25));
    }

    #[test]
    fn tanh_output_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::<f32>::new(&[3, 16, 4], Activation::Relu, Activation::Tanh, &mut rng);
        let x = [100.0, -200.0, 50.0];
        let y = net.forward(&x).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 1.0));
    }
}
