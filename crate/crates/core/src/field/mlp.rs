use rand::Rng;

use crate::params::ParamSet;

/// Dot product with eight fixed partial sums, combined in a fixed order.
/// Splitting the sum lets the compiler vectorize it while staying
/// reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn dot_relu(w: &[f64], h: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (cw, ch) = (w.chunks_exact(4), h.chunks_exact(4));
    let tail: f64 = cw.remainder().iter().zip(ch.remainder()).map(|(x, y)| x * y.max(0.0)).sum();
    for (x, y) in cw.zip(ch) {
        for k in 0..4 {
            acc[k] += x[k] * y[k].max(0.0);
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// One-hidden-layer perceptron with ReLU activation and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Row-major `hidden_dim x input_dim`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Row-major `output_dim x hidden_dim`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    pub fn zeros(input_dim: usize, hidden_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1: vec![0.0; hidden_dim * input_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; output_dim * hidden_dim],
            b2: vec![0.0; output_dim],
        }
    }

    /// He-uniform weights and zero biases.
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let mut m = Self::zeros(input_dim, hidden_dim, output_dim);
        let a1 = (6.0 / input_dim as f64).sqrt();
        let a2 = (6.0 / hidden_dim as f64).sqrt();
        m.w1.iter_mut().for_each(|w| *w = rng.random_range(-a1..=a1));
        m.w2.iter_mut().for_each(|w| *w = rng.random_range(-a2..=a2));
        m
    }

    pub fn expected_param_count(&self) -> usize {
        self.hidden_dim * (self.input_dim + 1) + self.output_dim * (self.hidden_dim + 1)
    }

    /// `hidden` receives the pre-activations, needed by `backward`.
    pub fn forward(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input_dim);
        for (h, (row, b)) in hidden
            .iter_mut()
            .zip(self.w1.chunks_exact(self.input_dim).zip(&self.b1))
        {
            *h = b + dot(row, x);
        }
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.w2.chunks_exact(self.hidden_dim).zip(&self.b2))
        {
            *o = b + dot_relu(row, hidden);
        }
    }

    /// Accumulates parameter gradients into `grads`; when `grad_x` is given it
    /// is overwritten with the input gradient.
    pub fn backward(
        &self,
        x: &[f64],
        hidden: &[f64],
        grad_out: &[f64],
        grads: &mut Mlp,
        grad_x: Option<&mut [f64]>,
        scratch: &mut Vec<f64>,
    ) {
        scratch.clear();
        scratch.resize(self.hidden_dim, 0.0);
        let grad_hidden = scratch;
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.b2[o] += g;
            let wrow = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            let grow = &mut grads.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            for j in 0..self.hidden_dim {
                let h = hidden[j];
                if h > 0.0 {
                    grow[j] += g * h;
                    grad_hidden[j] += g * wrow[j];
                }
            }
        }
        let mut gx = grad_x;
        if let Some(gx) = gx.as_deref_mut() {
            gx.fill(0.0);
        }
        for j in 0..self.hidden_dim {
            let gh = grad_hidden[j];
            if gh == 0.0 {
                continue;
            }
            grads.b1[j] += gh;
            let wrow = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let grow = &mut grads.w1[j * self.input_dim..(j + 1) * self.input_dim];
            for i in 0..self.input_dim {
                grow[i] += gh * x[i];
            }
            if let Some(gx) = gx.as_deref_mut() {
                for i in 0..self.input_dim {
                    gx[i] += gh * wrow[i];
                }
            }
        }
    }
}

impl ParamSet for Mlp {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.hidden_dim, self.output_dim)
    }
}
