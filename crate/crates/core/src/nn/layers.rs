//! Layer primitives with explicit forward/backward passes.
//!
//! Convolutions are stride-1 with same padding and run through im2col plus a
//! GEMM. Every weight-bearing layer accepts an optional multiplicative noise
//! field (the `1 + eps` factors): forward passes use the perturbed weights and
//! the weight gradient is chained back to the clean weights.

use crate::scalar::Scalar;
use ndarray::{Array1, Array2, Array4, Axis};

/// im2col for stride-1 same-padding convolution: output row `(b*h + y)*w + x`
/// holds the receptive field at (y, x), columns ordered `(c, dy, dx)`.
fn im2col<F: Scalar>(x: &Array4<F>, k: usize) -> Array2<F> {
    let (b, c, h, w) = x.dim();
    let p = (k - 1) / 2;
    let mut cols = Array2::zeros((b * h * w, c * k * k));
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let row = (bi * h + y) * w + xx;
                for ci in 0..c {
                    for dy in 0..k {
                        let iy = y + dy;
                        if iy < p || iy >= h + p {
                            continue;
                        }
                        let iy = iy - p;
                        for dx in 0..k {
                            let ix = xx + dx;
                            if ix < p || ix >= w + p {
                                continue;
                            }
                            let ix = ix - p;
                            cols[[row, (ci * k + dy) * k + dx]] = x[[bi, ci, iy, ix]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input grid.
fn col2im<F: Scalar>(cols: &Array2<F>, b: usize, c: usize, h: usize, w: usize, k: usize) -> Array4<F> {
    let p = (k - 1) / 2;
    let mut x = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for y in 0..h {
            for xx in 0..w {
                let row = (bi * h + y) * w + xx;
                for ci in 0..c {
                    for dy in 0..k {
                        let iy = y + dy;
                        if iy < p || iy >= h + p {
                            continue;
                        }
                        let iy = iy - p;
                        for dx in 0..k {
                            let ix = xx + dx;
                            if ix < p || ix >= w + p {
                                continue;
                            }
                            let ix = ix - p;
                            x[[bi, ci, iy, ix]] += cols[[row, (ci * k + dy) * k + dx]];
                        }
                    }
                }
            }
        }
    }
    x
}

#[derive(Debug, Clone)]
pub struct Conv2d<F> {
    /// `[out_c, in_c, k, k]`
    pub weight: Array4<F>,
    pub bias: Array1<F>,
    pub kernel: usize,
    /// Multiplicative `1 + eps` factors, same shape as `weight`.
    noise: Option<Array4<F>>,
    pub grad_weight: Array4<F>,
    pub grad_bias: Array1<F>,
    cache_cols: Option<Array2<F>>,
    cache_dim: (usize, usize, usize, usize),
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(weight: Array4<F>, bias: Array1<F>) -> Self {
        let kernel = weight.dim().2;
        let gw = Array4::zeros(weight.raw_dim());
        let gb = Array1::zeros(bias.raw_dim());
        Conv2d {
            weight,
            bias,
            kernel,
            noise: None,
            grad_weight: gw,
            grad_bias: gb,
            cache_cols: None,
            cache_dim: (0, 0, 0, 0),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn set_noise(&mut self, factors: Array4<F>) {
        debug_assert_eq!(factors.raw_dim(), self.weight.raw_dim());
        self.noise = Some(factors);
    }

    pub fn clear_noise(&mut self) {
        self.noise = None;
    }

    fn weight_matrix(&self) -> Array2<F> {
        let (oc, ic, k, _) = self.weight.dim();
        let flat = |a: &Array4<F>| {
            a.view()
                .into_shape_with_order((oc, ic * k * k))
                .expect("conv weight is contiguous")
                .to_owned()
        };
        match &self.noise {
            Some(f) => {
                let eff = &self.weight * f;
                eff.into_shape_with_order((oc, ic * k * k))
                    .expect("conv weight is contiguous")
            }
            None => flat(&self.weight),
        }
    }

    pub fn forward(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        let oc = self.out_channels();
        let cols = im2col(x, self.kernel);
        let wmat = self.weight_matrix();
        let mut out2 = cols.dot(&wmat.t());
        out2 += &self.bias;
        if train {
            self.cache_cols = Some(cols);
            self.cache_dim = (b, c, h, w);
        }
        out2
            .into_shape_with_order((b, h, w, oc))
            .expect("gemm output is contiguous")
            .permuted_axes([0, 3, 1, 2])
            .as_standard_layout()
            .to_owned()
    }

    pub fn backward(&mut self, grad_out: &Array4<F>) -> Array4<F> {
        let (b, c, h, w) = self.cache_dim;
        let oc = self.out_channels();
        let k = self.kernel;
        let cols = self.cache_cols.take().expect("backward without forward");
        let g2 = grad_out
            .view()
            .permuted_axes([0, 2, 3, 1])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((b * h * w, oc))
            .expect("grad is contiguous");
        let grad_wmat = g2.t().dot(&cols);
        self.grad_bias = g2.sum_axis(Axis(0));
        let mut grad_weight = grad_wmat
            .into_shape_with_order((oc, c, k, k))
            .expect("grad weight is contiguous");
        // d loss / d w_clean = d loss / d w_eff * (1 + eps)
        if let Some(f) = &self.noise {
            grad_weight *= f;
        }
        self.grad_weight = grad_weight;
        let wmat = self.weight_matrix();
        let grad_cols = g2.dot(&wmat);
        col2im(&grad_cols, b, c, h, w, k)
    }

    pub fn sgd_step(&mut self, lr: F) {
        self.weight.scaled_add(-lr, &self.grad_weight);
        self.bias.scaled_add(-lr, &self.grad_bias);
    }
}

#[derive(Debug, Clone)]
pub struct Dense<F> {
    /// `[in, out]`
    pub weight: Array2<F>,
    pub bias: Array1<F>,
    noise: Option<Array2<F>>,
    pub grad_weight: Array2<F>,
    pub grad_bias: Array1<F>,
    cache_input: Option<Array2<F>>,
}

impl<F: Scalar> Dense<F> {
    pub fn new(weight: Array2<F>, bias: Array1<F>) -> Self {
        let gw = Array2::zeros(weight.raw_dim());
        let gb = Array1::zeros(bias.raw_dim());
        Dense {
            weight,
            bias,
            noise: None,
            grad_weight: gw,
            grad_bias: gb,
            cache_input: None,
        }
    }

    pub fn set_noise(&mut self, factors: Array2<F>) {
        debug_assert_eq!(factors.raw_dim(), self.weight.raw_dim());
        self.noise = Some(factors);
    }

    pub fn clear_noise(&mut self) {
        self.noise = None;
    }

    fn effective_weight(&self) -> Array2<F> {
        match &self.noise {
            Some(f) => &self.weight * f,
            None => self.weight.clone(),
        }
    }

    pub fn forward(&mut self, x: &Array2<F>, train: bool) -> Array2<F> {
        let mut out = x.dot(&self.effective_weight());
        out += &self.bias;
        if train {
            self.cache_input = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, grad_out: &Array2<F>) -> Array2<F> {
        let x = self.cache_input.take().expect("backward without forward");
        let mut grad_weight = x.t().dot(grad_out);
        if let Some(f) = &self.noise {
            grad_weight *= f;
        }
        self.grad_weight = grad_weight;
        self.grad_bias = grad_out.sum_axis(Axis(0));
        grad_out.dot(&self.effective_weight().t())
    }

    pub fn sgd_step(&mut self, lr: F) {
        self.weight.scaled_add(-lr, &self.grad_weight);
        self.bias.scaled_add(-lr, &self.grad_bias);
    }
}

/// 2x2 max pooling with stride 2. Odd trailing rows/columns are dropped.
#[derive(Debug, Clone, Default)]
pub struct MaxPool2 {
    /// Winning offset within each window, encoded `dy * 2 + dx`.
    cache_argmax: Option<Array4<u8>>,
    cache_in_dim: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn forward<F: Scalar>(&mut self, x: &Array4<F>, train: bool) -> Array4<F> {
        let (b, c, h, w) = x.dim();
        let (h2, w2) = (h / 2, w / 2);
        let mut out = Array4::zeros((b, c, h2, w2));
        let mut argmax = Array4::<u8>::zeros((b, c, h2, w2));
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h2 {
                    for xx in 0..w2 {
                        let mut best = x[[bi, ci, 2 * y, 2 * xx]];
                        let mut idx = 0u8;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                let v = x[[bi, ci, 2 * y + dy, 2 * xx + dx]];
                                if v > best {
                                    best = v;
                                    idx = (dy * 2 + dx) as u8;
                                }
                            }
                        }
                        out[[bi, ci, y, xx]] = best;
                        argmax[[bi, ci, y, xx]] = idx;
                    }
                }
            }
        }
        if train {
            self.cache_argmax = Some(argmax);
            self.cache_in_dim = (b, c, h, w);
        }
        out
    }

    pub fn backward<F: Scalar>(&mut self, grad_out: &Array4<F>) -> Array4<F> {
        let (b, c, h, w) = self.cache_in_dim;
        let argmax = self.cache_argmax.take().expect("backward without forward");
        let (_, _, h2, w2) = grad_out.dim();
        let mut grad_in = Array4::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h2 {
                    for xx in 0..w2 {
                        let idx = argmax[[bi, ci, y, xx]] as usize;
                        let (dy, dx) = (idx / 2, idx % 2);
                        grad_in[[bi, ci, 2 * y + dy, 2 * xx + dx]] += grad_out[[bi, ci, y, xx]];
                    }
                }
            }
        }
        grad_in
    }
}

/// Softmax cross-entropy, mean over the batch. Returns the loss and the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy<F: Scalar>(logits: &Array2<F>, labels: &[usize]) -> (F, Array2<F>) {
    let (b, _) = logits.dim();
    assert_eq!(b, labels.len(), "batch size mismatch");
    let bf = F::from_usize(b);
    let mut probs = logits.clone();
    let mut loss = F::zero();
    for (mut row, &label) in probs.rows_mut().into_iter().zip(labels) {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
        let p = row[label].max(F::from_f64(1e-300));
        loss -= p.ln();
    }
    loss = loss / bf;
    let mut grad = probs;
    for (mut row, &label) in grad.rows_mut().into_iter().zip(labels) {
        row[label] -= F::one();
    }
    grad.mapv_inplace(|v| v / bf);
    (loss, grad)
}

/// ReLU over any array, returning the activation mask for backward.
pub fn relu_forward<F: Scalar, D: ndarray::Dimension>(
    x: &ndarray::Array<F, D>,
) -> (ndarray::Array<F, D>, ndarray::Array<bool, D>) {
    let mask = x.mapv(|v| v > F::zero());
    let out = x.mapv(|v| if v > F::zero() { v } else { F::zero() });
    (out, mask)
}

pub fn relu_backward<F: Scalar, D: ndarray::Dimension>(
    grad: &ndarray::Array<F, D>,
    mask: &ndarray::Array<bool, D>,
) -> ndarray::Array<F, D> {
    let mut g = grad.clone();
    ndarray::Zip::from(&mut g).and(mask).for_each(|gv, &m| {
        if !m {
            *gv = F::zero();
        }
    });
    g
}
