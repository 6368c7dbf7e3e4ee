use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbedError, Embedding};

/// One fully connected layer: `out = W x + b` with `W` stored row-major as
/// `rows x cols` (outputs x inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Layer {
    pub fn new(
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, EmbedError> {
        if weights.len() != rows * cols || bias.len() != rows {
            return Err(EmbedError::LayerShape {
                index: 0,
                rows,
                cols,
                len: weights.len(),
            });
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.cols)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

/// Weights of the shared encoder. Hidden layers use a rectifier, the output
/// layer is linear.
///
/// The same shape doubles as a gradient or momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Layer>,
}

/// Per-layer inputs and pre-activations recorded during a forward pass.
pub(crate) struct Trace {
    /// `inputs[l]` is what layer `l` consumed.
    pub inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl EncoderParams {
    pub fn new(mut layers: Vec<Layer>) -> Result<Self, EmbedError> {
        if layers.is_empty() {
            return Err(EmbedError::NoLayers);
        }
        for (i, l) in layers.iter_mut().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(EmbedError::LayerShape {
                    index: i,
                    rows: l.rows,
                    cols: l.cols,
                    len: l.weights.len(),
                });
            }
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].rows != pair[1].cols {
                return Err(EmbedError::LayerChain {
                    index: i + 1,
                    expected: pair[0].rows,
                    got: pair[1].cols,
                });
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (in + out))`, zero biases.
    /// `dims` lists every width from input to embedding, e.g. `[1024, 128, 256]`.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self, EmbedError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(dims, &mut rng)
    }

    pub(crate) fn init_with<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self, EmbedError> {
        if dims.len() < 2 {
            return Err(EmbedError::NoLayers);
        }
        if let Some(&bad) = dims.iter().find(|&&d| d == 0) {
            return Err(EmbedError::Dimension {
                expected: 1,
                got: bad,
            });
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let (cols, rows) = (w[0], w[1]);
                let limit = (6.0 / (cols + rows) as f64).sqrt();
                let weights = (0..rows * cols)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    rows,
                    cols,
                    weights,
                    bias: vec![0.0; rows],
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.rows, l.cols))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Every parameter, layer by layer, weights before biases.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Embedding, EmbedError> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if i != last {
                relu(&mut next);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<(), EmbedError> {
        if x.len() != self.input_dim() {
            return Err(EmbedError::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> Result<Trace, EmbedError> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.rows);
            layer.apply(&cur, &mut out);
            if i != last {
                relu(&mut out);
            }
            inputs.push(std::mem::replace(&mut cur, out));
        }
        Ok(Trace {
            inputs,
            output: cur,
        })
    }

    /// Accumulates into `grad` the parameter gradient for an upstream
    /// derivative `d_out` with respect to the network output.
    ///
    /// A rectified unit passes gradient only where its output is strictly
    /// positive, which is the same as testing the pre-activation.
    pub(crate) fn backprop(&self, trace: &Trace, d_out: &[f64], grad: &mut EncoderParams) {
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let g = &mut grad.layers[l];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.cols];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // input[l] is the rectified output of layer l - 1
            for (p, &a) in prev.iter_mut().zip(input) {
                if a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

fn relu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain triple-loop matrix product, kept separate from `Layer::apply`.
    fn dense_oracle(params: &EncoderParams, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let n = params.layers().len();
        for (li, l) in params.layers().iter().enumerate() {
            let mut z = vec![0.0; l.rows()];
            for i in 0..l.rows() {
                let mut s = l.bias()[i];
                for j in 0..l.cols() {
                    s += l.weights()[i * l.cols() + j] * a[j];
                }
                z[i] = if li + 1 < n { s.max(0.0) } else { s };
            }
            a = z;
        }
        a
    }

    #[test]
    fn zero_net_gives_zero() {
        let p = EncoderParams::new(vec![Layer::zeros(4, 3), Layer::zeros(2, 4)]).unwrap();
        assert_eq!(p.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let p = EncoderParams::new(vec![Layer::new(3, 3, w, vec![0.0; 3]).unwrap()]).unwrap();
        let x = [0.5, -7.0, 2.25];
        assert_eq!(p.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn matches_dense_oracle() {
        let mut p = EncoderParams::init(&[6, 5, 3], 11).unwrap();
        // non-zero biases so they are exercised too
        for (i, b) in p.layers_mut()[0].bias_mut().iter_mut().enumerate() {
            *b = 0.1 * i as f64 - 0.2;
        }
        let x = [0.3, -1.2, 0.8, 2.0, -0.5, 0.05];
        let got = p.forward(&x).unwrap();
        let want = dense_oracle(&p, &x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-14, "{g} vs {w}");
        }
        assert_eq!(p.forward_trace(&x).unwrap().output, got);
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = EncoderParams::init(&[10, 8, 4], 3).unwrap();
        let b = EncoderParams::init(&[10, 8, 4], 3).unwrap();
        let c = EncoderParams::init(&[10, 8, 4], 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let limit = (6.0f64 / 18.0).sqrt();
        assert!(a.layers()[0].weights().iter().all(|w| w.abs() <= limit));
        assert!(a
            .layers()
            .iter()
            .all(|l| l.bias().iter().all(|&b| b == 0.0)));
        assert_eq!(a.parameter_count(), 10 * 8 + 8 + 8 * 4 + 4);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(
            EncoderParams::new(vec![Layer::zeros(4, 3), Layer::zeros(2, 5)]),
            Err(EmbedError::LayerChain { index: 1, .. })
        ));
        assert!(matches!(
            EncoderParams::new(vec![]),
            Err(EmbedError::NoLayers)
        ));
        let p = EncoderParams::init(&[3, 2], 0).unwrap();
        assert!(matches!(
            p.forward(&[1.0, 2.0]),
            Err(EmbedError::Dimension {
                expected: 3,
                got: 2
            })
        ));
    }
}
