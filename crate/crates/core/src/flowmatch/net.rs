//! Dense tanh network with hand-written backpropagation.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(inputs, outputs)`, applied as `x W + b`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Feed-forward network: tanh on every hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct Trace {
    /// Input to each layer; the last entry is the network output.
    acts: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().unwrap()
    }
}

impl Mlp {
    /// Layer widths `[in, h1, .., out]`, weights drawn from `N(0, 1/fan_in)`.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|io| {
                let std = (1.0 / io[0] as f64).sqrt();
                let w = Array2::from_shape_simple_fn((io[0], io[1]), || std * rng.sample::<f64, _>(StandardNormal));
                Dense { w, b: Array1::zeros(io[1]) }
            })
            .collect();
        Mlp { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: Array2<f64>) -> Array2<f64> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = h.dot(&l.w) + &l.b;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }

    pub fn forward_trace(&self, x: Array2<f64>) -> Trace {
        let last = self.layers.len() - 1;
        let mut acts = vec![x];
        for (i, l) in self.layers.iter().enumerate() {
            let mut h = acts[i].dot(&l.w) + &l.b;
            if i < last {
                h.mapv_inplace(f64::tanh);
            }
            acts.push(h);
        }
        Trace { acts }
    }

    /// Accumulates parameter gradients for upstream gradient `d_out` into
    /// `grad`, laid out as in [`Mlp::flat_params`].
    pub fn backward(&self, trace: &Trace, d_out: Array2<f64>, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.num_params());
        let offsets = self.offsets();
        let mut d = d_out;
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let input = &trace.acts[i];
            let dw = input.t().dot(&d);
            let db = d.sum_axis(Axis(0));
            let off = offsets[i];
            for (g, v) in grad[off..off + dw.len()].iter_mut().zip(dw.iter()) {
                *g += v;
            }
            let boff = off + dw.len();
            for (g, v) in grad[boff..boff + db.len()].iter_mut().zip(db.iter()) {
                *g += v;
            }
            if i > 0 {
                let mut dh = d.dot(&l.w.t());
                // input to layer i is tanh output of layer i-1
                dh.zip_mut_with(input, |g, &h| *g *= 1.0 - h * h);
                d = dh;
            }
        }
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                let o = off;
                off += l.w.len() + l.b.len();
                o
            })
            .collect()
    }

    /// Per layer: weights row-major, then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params());
        let mut it = flat.iter();
        for l in &mut self.layers {
            for (w, v) in l.w.iter_mut().zip(&mut it) {
                *w = *v;
            }
            for (b, v) in l.b.iter_mut().zip(&mut it) {
                *b = *v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[5, 7, 6, 2], &mut rng);
        let x = Array2::from_shape_simple_fn((4, 5), || rng.random::<f64>() - 0.5);
        // loss = sum(out * c)
        let c = Array2::from_shape_simple_fn((4, 2), || rng.random::<f64>() - 0.5);
        let loss = |n: &Mlp| (n.forward(x.clone()) * &c).sum();
        let trace = net.forward_trace(x.clone());
        let mut grad = vec![0.0; net.num_params()];
        net.backward(&trace, c.clone(), &mut grad);
        let p0 = net.flat_params();
        for i in 0..p0.len() {
            let h = 1e-6;
            let mut p = p0.clone();
            p[i] += h;
            net.set_flat_params(&p);
            let up = loss(&net);
            p[i] -= 2.0 * h;
            net.set_flat_params(&p);
            let down = loss(&net);
            let num = (up - down) / (2.0 * h);
            assert!((num - grad[i]).abs() < 1e-7, "param {i}: {num} vs {}", grad[i]);
        }
    }

    #[test]
    fn flat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[3, 4, 2], &mut rng);
        assert_eq!(net.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
        let p: Vec<f64> = (0..net.num_params()).map(|i| i as f64).collect();
        net.set_flat_params(&p);
        assert_eq!(net.flat_params(), p);
        assert_eq!(net.layers[0].w[[0, 1]], 1.0);
        assert_eq!(net.layers[0].b[0], 12.0);
    }
}
