use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::{Error, Result};

/// Fully connected layer, `y = x · weights + bias` with `weights` shaped `in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit));
        Self { weights, bias: Array1::zeros(fan_out) }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

/// Rectifier MLP with a linear output layer: one Q-value per action.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

pub const DEFAULT_LAYER_SIZES: [usize; 4] = [15, 300, 200, 100];

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::Config(format!("layer sizes {sizes:?} need at least two positive entries")));
    }
    Ok(())
}

impl QNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Self { layers: sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect() })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        let layers = sizes
            .windows(2)
            .map(|w| Dense { weights: Array2::zeros((w[0], w[1])), bias: Array1::zeros(w[1]) })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::Config(format!("layer {i}: bias length {} vs {} outputs", l.bias.len(), l.outputs())));
            }
            if let Some(next) = layers.get(i + 1) {
                if next.inputs() != l.outputs() {
                    return Err(Error::Config(format!("layer {} expects {} inputs, got {}", i + 1, next.inputs(), l.outputs())));
                }
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs()];
        s.extend(self.layers.iter().map(Dense::outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn action_count(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn copy_from(&mut self, other: &QNetwork) {
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weights.assign(&src.weights);
            dst.bias.assign(&src.bias);
        }
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("contiguous input row");
        self.forward_batch(x).into_raw_vec_and_offset().0
    }

    /// Rows of `inputs` are states; rows of the result are Q-vectors.
    pub fn forward_batch(&self, inputs: ArrayView2<'_, f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut a = inputs.to_owned();
        for (i, l) in self.layers.iter().enumerate() {
            a = a.dot(&l.weights) + &l.bias;
            if i < last {
                a.mapv_inplace(|v| v.max(0.0));
            }
        }
        a
    }

    /// Mean squared error between `targets` and the Q-values of the taken
    /// `actions`, with its gradient for every parameter.
    pub fn loss_and_gradient(&self, inputs: ArrayView2<'_, f64>, actions: &[usize], targets: &[f64]) -> (f64, Gradients) {
        let n = inputs.nrows();
        debug_assert!(n == actions.len() && n == targets.len() && n > 0);
        let last = self.layers.len() - 1;
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_owned());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.weights) + &l.bias;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let out = &acts[self.layers.len()];
        let mut delta = Array2::<f64>::zeros(out.raw_dim());
        let mut loss = 0.0;
        for (r, (&a, &y)) in actions.iter().zip(targets).enumerate() {
            let err = out[[r, a]] - y;
            loss += err * err;
            delta[[r, a]] = 2.0 * err / n as f64;
        }
        loss /= n as f64;

        let mut grads = vec![(Array2::zeros((0, 0)), Array1::zeros(0)); self.layers.len()];
        for i in (0..self.layers.len()).rev() {
            let dw = acts[i].t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = delta.dot(&self.layers[i].weights.t());
                // rectifier derivative: activations are zero exactly where the unit is off
                prev.zip_mut_with(&acts[i], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = prev;
            }
            grads[i] = (dw, db);
        }
        (loss, Gradients { layers: grads })
    }
}

/// Per-layer `(d weights, d bias)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

/// RMSProp: `v ← ρv + (1−ρ)g²`, `θ ← θ − lr · g / (√v + ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub cache: Vec<(Array2<f64>, Array1<f64>)>,
}

impl RmsProp {
    pub fn new(net: &QNetwork, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        let cache = net
            .layers
            .iter()
            .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();
        Self { learning_rate, decay, epsilon, cache }
    }

    pub fn apply(&mut self, net: &mut QNetwork, grads: &Gradients) {
        let (lr, rho, eps) = (self.learning_rate, self.decay, self.epsilon);
        for ((layer, (gw, gb)), (vw, vb)) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.cache) {
            ndarray::Zip::from(&mut layer.weights).and(gw).and(vw).for_each(|w, &g, v| {
                *v = rho * *v + (1.0 - rho) * g * g;
                *w -= lr * g / (v.sqrt() + eps);
            });
            ndarray::Zip::from(&mut layer.bias).and(gb).and(vb).for_each(|b, &g, v| {
                *v = rho * *v + (1.0 - rho) * g * g;
                *b -= lr * g / (v.sqrt() + eps);
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(&DEFAULT_LAYER_SIZES).unwrap();
        let q = net.forward(&[0.3; 15]);
        assert_eq!(q.len(), 100);
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_two_by_two() {
        // x=(1,2); hidden = relu(x·W1 + b1); out = hidden·W2 + b2
        let l1 = Dense { weights: array![[1.0, -1.0], [0.5, 2.0]], bias: array![0.0, -6.0] };
        let l2 = Dense { weights: array![[2.0, 1.0], [3.0, -1.0]], bias: array![0.5, 0.0] };
        let net = QNetwork::from_layers(vec![l1, l2]).unwrap();
        // pre-activations (2, -3) → hidden (2, 0) → out (4.5, 2)
        assert_eq!(net.forward(&[1.0, 2.0]), vec![4.5, 2.0]);
    }

    #[test]
    fn glorot_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = QNetwork::new(&DEFAULT_LAYER_SIZES, &mut rng).unwrap();
        assert_eq!(net.sizes(), DEFAULT_LAYER_SIZES.to_vec());
        for l in net.layers() {
            let limit = (6.0 / (l.inputs() + l.outputs()) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= limit));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn mismatched_layers_rejected() {
        let l1 = Dense { weights: Array2::zeros((2, 3)), bias: Array1::zeros(3) };
        let l2 = Dense { weights: Array2::zeros((4, 1)), bias: Array1::zeros(1) };
        assert!(QNetwork::from_layers(vec![l1, l2]).is_err());
        assert!(QNetwork::zeros(&[3]).is_err());
    }

    #[test]
    fn exact_targets_leave_weights_alone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = QNetwork::new(&[3, 5, 4], &mut rng).unwrap();
        let x = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]];
        let q = net.forward_batch(x.view());
        let actions = [1, 3];
        let targets = [q[[0, 1]], q[[1, 3]]];
        let (loss, g) = net.loss_and_gradient(x.view(), &actions, &targets);
        assert_eq!(loss, 0.0);
        let before = net.clone();
        let mut opt = RmsProp::new(&net, 1e-3, 0.95, 1e-6);
        opt.apply(&mut net, &g);
        assert_eq!(net, before);
    }
}
