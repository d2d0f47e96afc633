//! Multilayer perceptrons with batched forward passes and reverse-mode
//! gradients.
//!
//! Parameters live in one flat vector, layer by layer: the `out x in`
//! row-major weight matrix followed by the bias. Gradients, optimizer state
//! and target-network averaging all work on that flat layout.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Result, RlError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Tanh => z.tanh(),
            Self::Relu => z.max(0.0),
            Self::Linear => z,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - y * y,
            Self::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Linear => 1.0,
        }
    }
}

/// Optional squashing of the final layer into `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputSquash {
    None,
    Tanh,
}

/// Dense row-major matrix; rows are batch items.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Copy of rows `range`.
    pub fn rows_slice(&self, range: std::ops::Range<usize>) -> Matrix {
        Matrix::from_vec(range.len(), self.cols, self.data[range.start * self.cols..range.end * self.cols].to_vec())
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hcat row count");
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Matrix::from_vec(self.rows, cols, data)
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * range.len());
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[range.clone()]);
        }
        Matrix::from_vec(self.rows, range.len(), data)
    }
}

/// Row count below which `gemm_abt` skips the packed kernel.
const SMALL_BATCH: usize = 4;

/// `c = a * b^T` for `a: m x k`, `b: n x k`, `c: m x n`.
fn gemm_abt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() == m * k && b.len() == n * k && c.len() == m * n);
    if m == 0 || n == 0 {
        return;
    }
    // Packing dominates for a handful of rows; plain dot products are faster.
    if m <= SMALL_BATCH {
        for (ci, ai) in c.chunks_exact_mut(n).zip(a.chunks_exact(k)) {
            for (cij, bj) in ci.iter_mut().zip(b.chunks_exact(k)) {
                *cij = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
            }
        }
        return;
    }
    // SAFETY: slice lengths checked above; strides describe those slices.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), 1, k as isize, 0.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// `c += a^T * b` for `a: m x n`, `b: m x k`, `c: n x k`.
fn gemm_atb_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, n: usize, k: usize) {
    debug_assert!(a.len() == m * n && b.len() == m * k && c.len() == n * k);
    if n == 0 || k == 0 {
        return;
    }
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            n, m, k, 1.0, a.as_ptr(), 1, n as isize, b.as_ptr(), k as isize, 1, 1.0, c.as_mut_ptr(), k as isize, 1,
        );
    }
}

/// `c = a * b` for `a: m x k`, `b: k x n`.
fn gemm_ab(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert!(a.len() == m * k && b.len() == k * n && c.len() == m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), k as isize, 1, b.as_ptr(), n as isize, 1, 0.0, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    /// `[input, hidden.., output]`.
    pub dims: Vec<usize>,
    /// One per layer.
    pub activations: Vec<Activation>,
    pub squash: OutputSquash,
    pub params: Vec<f64>,
}

/// Forward intermediates: the input, every layer output before the output
/// squash, and the squashed output when there is one.
#[derive(Debug, Clone)]
pub struct Tape {
    layers: Vec<Matrix>,
    squashed: Option<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.squashed.as_ref().unwrap_or_else(|| self.layers.last().expect("tape has the input at least"))
    }

    pub fn into_output(mut self) -> Matrix {
        self.squashed.take().unwrap_or_else(|| self.layers.pop().expect("tape has the input at least"))
    }
}

impl Mlp {
    /// Zero-initialized network.
    pub fn zeros(dims: &[usize], activations: &[Activation], squash: OutputSquash) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 || dims.iter().any(|d| *d == 0) {
            return Err(RlError::Shape(format!("dims {dims:?} with {} activations", activations.len())));
        }
        let n: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { dims: dims.to_vec(), activations: activations.to_vec(), squash, params: vec![0.0; n] })
    }

    /// Uniform fan-in initialization `U(-1/sqrt(in), 1/sqrt(in))`; the last
    /// layer is scaled by `last_scale`.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], squash: OutputSquash, last_scale: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims, activations, squash)?;
        let layers = net.num_layers();
        for l in 0..layers {
            let fan_in = net.dims[l];
            let mut bound = 1.0 / (fan_in as f64).sqrt();
            if l + 1 == layers {
                bound *= last_scale;
            }
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let (w, b) = net.layer_ranges(l);
            for i in w.start..b.end {
                net.params[i] = dist.sample(rng);
            }
        }
        Ok(net)
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Index ranges of the weights and the bias of layer `l`.
    pub fn layer_ranges(&self, l: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let offset: usize = self.dims.windows(2).take(l).map(|w| w[0] * w[1] + w[1]).sum();
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        (offset..offset + i * o, offset + i * o..offset + i * o + o)
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.dims == other.dims && self.activations == other.activations && self.squash == other.squash
    }

    pub fn validate(&self) -> Result<()> {
        let fresh = Self::zeros(&self.dims, &self.activations, self.squash)?;
        if fresh.params.len() != self.params.len() {
            return Err(RlError::Shape(format!("expected {} parameters, found {}", fresh.params.len(), self.params.len())));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(RlError::NonFinite("network parameter".into()));
        }
        Ok(())
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.input_dim() {
            return Err(RlError::Shape(format!("input has {} columns, network expects {}", x.cols, self.input_dim())));
        }
        Ok(())
    }

    /// Batched forward pass recording every layer output.
    pub fn forward_tape(&self, x: &Matrix) -> Result<Tape> {
        self.check_input(x)?;
        let mut layers = Vec::with_capacity(self.num_layers() + 1);
        layers.push(x.clone());
        let last = self.num_layers() - 1;
        for l in 0..=last {
            let (w, b) = self.layer_ranges(l);
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let input = layers.last().unwrap();
            let mut z = Matrix::zeros(x.rows, o);
            gemm_abt(&input.data, &self.params[w], &mut z.data, x.rows, i, o);
            let bias = &self.params[b];
            let act = self.activations[l];
            for r in 0..x.rows {
                for (v, bj) in z.row_mut(r).iter_mut().zip(bias) {
                    *v = act.apply(*v + bj);
                }
            }
            layers.push(z);
        }
        let squashed = match self.squash {
            OutputSquash::None => None,
            OutputSquash::Tanh => {
                let y = layers.last().unwrap();
                Some(Matrix::from_vec(y.rows, y.cols, y.data.iter().map(|v| v.tanh()).collect()))
            }
        };
        Ok(Tape { layers, squashed })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_tape(x)?.into_output())
    }

    /// Single-input convenience wrapper.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&Matrix::from_vec(1, x.len(), x.to_vec()))?.data)
    }

    /// Reverse pass: given `dL/d(output)`, returns `(dL/d(params), dL/d(input))`.
    pub fn backward(&self, tape: &Tape, d_out: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let batch = tape.layers[0].rows;
        if d_out.rows != batch || d_out.cols != self.output_dim() {
            return Err(RlError::Shape(format!(
                "output gradient {}x{} for batch {batch} and output {}",
                d_out.rows,
                d_out.cols,
                self.output_dim()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = d_out.clone();
        if let Some(y) = &tape.squashed {
            for (d, y) in delta.data.iter_mut().zip(&y.data) {
                *d *= 1.0 - y * y;
            }
        }
        let last = self.num_layers() - 1;
        for l in (0..=last).rev() {
            let out = &tape.layers[l + 1];
            let input = &tape.layers[l];
            let act = self.activations[l];
            for (d, y) in delta.data.iter_mut().zip(&out.data) {
                *d *= act.derivative_from_output(*y);
            }
            let (w, b) = self.layer_ranges(l);
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            gemm_atb_acc(&delta.data, &input.data, &mut grads[w.clone()], batch, o, i);
            let gb = &mut grads[b];
            for r in 0..batch {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            let mut next = Matrix::zeros(batch, i);
            gemm_ab(&delta.data, &self.params[w], &mut next.data, batch, o, i);
            delta = next;
        }
        Ok((grads, delta))
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        polyak_update(self, source, tau)
    }
}

/// Gradient of a scalar loss of the network outputs. `loss` returns the loss
/// value and its gradient with respect to the outputs.
pub fn grad<F>(net: &Mlp, x: &Matrix, loss: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&Matrix) -> (f64, Matrix),
{
    let tape = net.forward_tape(x)?;
    let (value, d_out) = loss(tape.output());
    if !value.is_finite() {
        return Err(RlError::NonFinite(format!("loss {value}")));
    }
    let (g, _) = net.backward(&tape, &d_out)?;
    Ok((value, g))
}

/// Soft target update: every target parameter becomes
/// `tau * source + (1 - tau) * target`. `tau` of 0 and 1 are exact.
pub fn polyak_update(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(source) || target.params.len() != source.params.len() {
        return Err(RlError::Shape("polyak update between different architectures".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(RlError::Config(format!("tau must lie in [0, 1], got {tau}")));
    }
    if tau == 0.0 {
        return Ok(());
    }
    if tau == 1.0 {
        target.params.copy_from_slice(&source.params);
        return Ok(());
    }
    for (t, s) in target.params.iter_mut().zip(&source.params) {
        *t = tau * s + (1.0 - tau) * *t;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in 0..net.num_layers() {
            let (w, b) = net.layer_ranges(l);
            let (i, o) = (net.dims[l], net.dims[l + 1]);
            let w = &net.params[w];
            let b = &net.params[b];
            let mut next = vec![0.0; o];
            for r in 0..o {
                let z: f64 = (0..i).map(|c| w[r * i + c] * h[c]).sum::<f64>() + b[r];
                next[r] = net.activations[l].apply(z);
            }
            if l + 1 == net.num_layers() && net.squash == OutputSquash::Tanh {
                next.iter_mut().for_each(|v| *v = v.tanh());
            }
            h = next;
        }
        h
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 4, 2], &[Activation::Tanh, Activation::Linear], OutputSquash::None).unwrap();
        assert_eq!(net.forward_one(&[1.0, -2.0, 0.5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer() {
        let mut net = Mlp::zeros(&[3, 3], &[Activation::Linear], OutputSquash::None).unwrap();
        let (w, _) = net.layer_ranges(0);
        for i in 0..3 {
            net.params[w.start + i * 3 + i] = 1.0;
        }
        assert_eq!(net.forward_one(&[1.5, -2.0, 7.0]).unwrap(), vec![1.5, -2.0, 7.0]);
    }

    #[test]
    fn batched_forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for squash in [OutputSquash::None, OutputSquash::Tanh] {
            let net = Mlp::init(&[5, 7, 6, 2], &[Activation::Tanh, Activation::Relu, Activation::Linear], squash, 1.0, &mut rng).unwrap();
            // Both the small-batch path and the packed kernel.
            for rows in [1, SMALL_BATCH, SMALL_BATCH + 1, 37] {
                let x: Vec<f64> = (0..rows * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
                let batch = net.forward(&Matrix::from_vec(rows, 5, x.clone())).unwrap();
                for r in 0..rows {
                    let one = naive_forward(&net, &x[r * 5..(r + 1) * 5]);
                    for (a, b) in batch.row(r).iter().zip(&one) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn hand_chain_rule() {
        let mut net = Mlp::zeros(&[1, 1], &[Activation::Linear], OutputSquash::None).unwrap();
        net.params[0] = 1.0;
        let x = Matrix::from_vec(1, 1, vec![3.0]);
        let (value, g) = grad(&net, &x, |y| {
            let v = y.data[0];
            (v * v, Matrix::from_vec(1, 1, vec![2.0 * v]))
        })
        .unwrap();
        assert_eq!(value, 9.0);
        assert_eq!(g, vec![18.0, 6.0]);
    }

    #[test]
    fn zero_loss_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::init(&[3, 8, 1], &[Activation::Tanh, Activation::Linear], OutputSquash::None, 1.0, &mut rng).unwrap();
        let x = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, 0.6]);
        let (_, g) = grad(&net, &x, |y| (0.0, Matrix::zeros(y.rows, y.cols))).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(grad(&net, &x, |y| (f64::NAN, Matrix::zeros(y.rows, y.cols))).is_err());
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::zeros(&[3, 2], &[Activation::Linear], OutputSquash::None).unwrap();
        assert!(net.forward(&Matrix::zeros(1, 4)).is_err());
        assert!(Mlp::zeros(&[3, 2], &[Activation::Linear, Activation::Tanh], OutputSquash::None).is_err());
        let mut other = Mlp::zeros(&[3, 3], &[Activation::Linear], OutputSquash::None).unwrap();
        assert!(polyak_update(&mut other, &net, 0.5).is_err());
    }

    #[test]
    fn polyak_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Mlp::init(&[2, 4, 1], &[Activation::Tanh, Activation::Linear], OutputSquash::None, 1.0, &mut rng).unwrap();
        let b = Mlp::init(&[2, 4, 1], &[Activation::Tanh, Activation::Linear], OutputSquash::None, 1.0, &mut rng).unwrap();
        let mut t = a.clone();
        polyak_update(&mut t, &b, 0.0).unwrap();
        assert_eq!(t, a);
        polyak_update(&mut t, &b, 1.0).unwrap();
        assert_eq!(t, b);
        let mut z = Mlp::zeros(&[1, 1], &[Activation::Linear], OutputSquash::None).unwrap();
        let mut two = z.clone();
        two.params = vec![2.0, 2.0];
        polyak_update(&mut z, &two, 0.5).unwrap();
        assert_eq!(z.params, vec![1.0, 1.0]);
    }
}
