//! Dense tanh networks with hand-written backpropagation.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

/// Fully connected layer, `y = x W + b` with `W` shaped `(inputs, outputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal(inputs: usize, outputs: usize, gain: f64, rng: &mut impl Rng) -> Self {
        Self {
            w: orthogonal(inputs, outputs, rng) * gain,
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }
}

/// Matrix with orthonormal rows or columns (whichever is shorter), from
/// modified Gram-Schmidt on a Gaussian sample.
fn orthogonal(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let (n, m) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // m orthonormal vectors of length n.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    while basis.len() < m {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for q in &basis {
            let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= proj * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    Array2::from_shape_fn((rows, cols), |(i, j)| if rows >= cols { basis[j][i] } else { basis[i][j] })
}

/// Tanh MLP: hidden layers use tanh, the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept for the backward pass; `acts[0]` is the input.
pub struct MlpCache {
    acts: Vec<Array2<f64>>,
}

impl Mlp {
    pub fn new(sizes: &[usize], hidden_gain: f64, output_gain: f64, rng: &mut impl Rng) -> Self {
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { output_gain } else { hidden_gain };
                Dense::orthogonal(sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Dense::outputs).unwrap_or(0)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = self.layers[0].forward(&x);
        if last > 0 {
            h.mapv_inplace(f64::tanh);
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = layer.forward(&h.view());
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len());
        acts.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut h = layer.forward(&acts[i].view());
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
            if i < last {
                acts.push(h);
            } else {
                return (h, MlpCache { acts });
            }
        }
        unreachable!("network has at least one layer")
    }

    /// Accumulates parameter gradients for `d loss / d output` into `grads`.
    pub fn backward(&self, cache: &MlpCache, grad_out: Array2<f64>, grads: &mut Mlp) {
        let mut delta = grad_out;
        for i in (0..self.layers.len()).rev() {
            let input = &cache.acts[i];
            grads.layers[i].w += &input.t().dot(&delta);
            grads.layers[i].b += &delta.sum_axis(Axis(0));
            if i > 0 {
                let mut upstream = delta.dot(&self.layers[i].w.t());
                // Input to layer i is tanh output of layer i-1.
                ndarray::Zip::from(&mut upstream)
                    .and(input)
                    .for_each(|g, &h| *g *= 1.0 - h * h);
                delta = upstream;
            }
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &self.layers {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for l in &mut self.layers {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = orthogonal(6, 4, &mut rng);
        let g = w.t().dot(&w);
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((g[[i, j]] - expected).abs() < 1e-12);
            }
        }
        let w = orthogonal(3, 8, &mut rng);
        let g = w.dot(&w.t());
        assert!((g[[1, 1]] - 1.0).abs() < 1e-12 && g[[0, 2]].abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = Mlp::new(&[3, 5, 4, 2], 1.0, 1.0, &mut rng);
        let x = array![[0.3, -0.2, 0.9], [1.1, 0.4, -0.7]];
        // loss = sum(out * c)
        let c = array![[0.5, -1.0], [2.0, 0.25]];
        let loss = |n: &Mlp| (n.forward(x.view()) * &c).sum();

        let (_, cache) = net.forward_cached(x.view());
        let mut grads = net.zeros_like();
        net.backward(&cache, c.clone(), &mut grads);
        let analytic: Vec<f64> = grads.slices().concat();

        let mut idx = 0;
        let count: usize = net.slices().iter().map(|s| s.len()).sum();
        let eps = 1e-6;
        while idx < count {
            let base = net.clone();
            let probe = |delta: f64| {
                let mut n = base.clone();
                let mut k = idx;
                for s in n.slices_mut() {
                    if k < s.len() {
                        s[k] += delta;
                        break;
                    }
                    k -= s.len();
                }
                loss(&n)
            };
            let fd = (probe(eps) - probe(-eps)) / (2.0 * eps);
            assert!((fd - analytic[idx]).abs() < 1e-7, "param {idx}: fd {fd} vs {}", analytic[idx]);
            idx += 1;
        }
    }
}
