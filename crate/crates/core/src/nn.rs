//! Minimal dense neural-network kernel.
//!
//! Row-major `f64` matrices, fully connected layers with a per-layer
//! activation, explicit forward/backward passes, Adam and a central
//! finite-difference gradient checker. Everything the TVAE needs and
//! nothing more.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} values, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Column sums, one per column.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(r)) {
                *s += v;
            }
        }
        sums
    }
}

/// `c = a * b + beta * c` on raw strided storage.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    // SAFETY: every caller passes slices whose extent covers the strided
    // m x k, k x n and m x n views (checked by the debug asserts below), and
    // `c` does not alias `a` or `b`.
    debug_assert!(c.len() >= m * n);
    debug_assert!(!a.is_empty() && !b.is_empty());
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the pre-activation value.
    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

fn fresh_generation() -> u64 {
    NEXT_GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// Fully connected layer `y = act(x W^T + b)` with `W` stored as `out x in`.
#[derive(Debug)]
pub struct DenseLayer {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
    // Identifies the current parameter values; any mutable access replaces it
    // so caches built before the mutation are rejected.
    generation: u64,
}

impl Clone for DenseLayer {
    fn clone(&self) -> Self {
        DenseLayer {
            weights: self.weights.clone(),
            bias: self.bias.clone(),
            activation: self.activation,
            generation: fresh_generation(),
        }
    }
}

impl PartialEq for DenseLayer {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
            && self.bias == other.bias
            && self.activation == other.activation
    }
}

impl DenseLayer {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        DenseLayer {
            weights: Matrix {
                rows: out_dim,
                cols: in_dim,
                data,
            },
            bias: vec![0.0; out_dim],
            activation,
            generation: fresh_generation(),
        }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Shape(format!(
                "bias has {} entries but weights have {} rows",
                bias.len(),
                weights.rows()
            )));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("layer parameters".into()));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
            generation: fresh_generation(),
        })
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weights.data.len() + self.bias.len()
    }

    /// Mutable views of (weights, bias). Invalidates outstanding caches.
    pub fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        self.generation = fresh_generation();
        (&mut self.weights.data, &mut self.bias)
    }

    /// Pre-activation `x W^T + b` for a batch.
    fn affine(&self, input: &Matrix) -> Matrix {
        let (batch, in_dim, out_dim) = (input.rows, self.in_dim(), self.out_dim());
        let mut out = Matrix::zeros(batch, out_dim);
        for r in 0..batch {
            out.row_mut(r).copy_from_slice(&self.bias);
        }
        gemm(
            batch,
            in_dim,
            out_dim,
            &input.data,
            in_dim as isize,
            1,
            &self.weights.data,
            1,
            in_dim as isize,
            &mut out.data,
            1.0,
        );
        out
    }
}

/// Per-layer values recorded by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
    generations: Vec<u64>,
}

impl ForwardCache {
    pub fn pre_activations(&self) -> &[Matrix] {
        &self.pre_activations
    }

    pub fn batch(&self) -> usize {
        self.inputs.first().map_or(0, Matrix::rows)
    }
}

pub fn forward(layers: &[DenseLayer], input: &Matrix) -> Result<(Matrix, ForwardCache)> {
    if input.rows == 0 {
        return Err(Error::Empty("forward pass needs a batch of at least one row".into()));
    }
    let mut cache = ForwardCache {
        inputs: Vec::with_capacity(layers.len()),
        pre_activations: Vec::with_capacity(layers.len()),
        generations: Vec::with_capacity(layers.len()),
    };
    let mut current = input.clone();
    for (idx, layer) in layers.iter().enumerate() {
        if current.cols != layer.in_dim() {
            return Err(Error::LayerDimension {
                layer: idx,
                expected: layer.in_dim(),
                found: current.cols,
            });
        }
        let pre = layer.affine(&current);
        let mut out = pre.clone();
        if layer.activation != Activation::Identity {
            for v in &mut out.data {
                *v = layer.activation.apply(*v);
            }
        }
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("output of layer {idx}")));
        }
        cache.inputs.push(current);
        cache.pre_activations.push(pre);
        cache.generations.push(layer.generation);
        current = out;
    }
    Ok((current, cache))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
    pub input: Matrix,
}

pub fn backward(
    layers: &[DenseLayer],
    cache: &ForwardCache,
    output_gradient: &Matrix,
) -> Result<Gradients> {
    if cache.generations.len() != layers.len() {
        return Err(Error::StaleCache(format!(
            "cache covers {} layers, network has {}",
            cache.generations.len(),
            layers.len()
        )));
    }
    for (idx, (layer, generation)) in layers.iter().zip(&cache.generations).enumerate() {
        if layer.generation != *generation {
            return Err(Error::StaleCache(format!(
                "layer {idx} changed after the forward pass"
            )));
        }
    }
    let batch = cache.batch();
    let out_dim = layers.last().map_or(0, DenseLayer::out_dim);
    if output_gradient.rows != batch || output_gradient.cols != out_dim {
        return Err(Error::Shape(format!(
            "output gradient is {}x{}, forward output was {batch}x{out_dim}",
            output_gradient.rows, output_gradient.cols
        )));
    }

    let mut grads = Vec::with_capacity(layers.len());
    let mut upstream = output_gradient.clone();
    for idx in (0..layers.len()).rev() {
        let layer = &layers[idx];
        let pre = &cache.pre_activations[idx];
        let input = &cache.inputs[idx];
        let (in_dim, out_dim) = (layer.in_dim(), layer.out_dim());

        let mut delta = upstream;
        if layer.activation != Activation::Identity {
            for (d, z) in delta.data.iter_mut().zip(&pre.data) {
                *d *= layer.activation.derivative(*z);
            }
        }

        // dW = delta^T x
        let mut dw = Matrix::zeros(out_dim, in_dim);
        gemm(
            out_dim,
            batch,
            in_dim,
            &delta.data,
            1,
            out_dim as isize,
            &input.data,
            in_dim as isize,
            1,
            &mut dw.data,
            0.0,
        );
        let db = delta.column_sums();

        // dx = delta W
        let mut dx = Matrix::zeros(batch, in_dim);
        gemm(
            batch,
            out_dim,
            in_dim,
            &delta.data,
            out_dim as isize,
            1,
            &layer.weights.data,
            in_dim as isize,
            1,
            &mut dx.data,
            0.0,
        );
        grads.push(LayerGradient {
            weights: dw,
            bias: db,
        });
        upstream = dx;
    }
    grads.reverse();
    Ok(Gradients {
        layers: grads,
        input: upstream,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 coefficient added to the gradient as `weight_decay * param`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    /// One accumulator pair per parameter tensor, sized by `shapes`.
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        AdamState {
            config,
            step: 0,
            first_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn tensor_lengths(&self) -> Vec<usize> {
        self.first_moment.iter().map(Vec::len).collect()
    }
}

/// One bias-corrected Adam update. `params` and `grads` are parallel lists of
/// tensors in the order the state was created with.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "adam got {} parameter tensors, {} gradient tensors, state tracks {}",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first_moment[i].len() {
            return Err(Error::Shape(format!(
                "tensor {i}: parameter length {}, gradient length {}, state length {}",
                p.len(),
                g.len(),
                state.first_moment[i].len()
            )));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient tensor {i}, entry {j}")));
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
        weight_decay,
    } = state.config;
    let t = state.step as i32;
    let bias1 = 1.0 - beta1.powi(t);
    let bias2 = 1.0 - beta2.powi(t);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for j in 0..p.len() {
            let grad = g[j] + weight_decay * p[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * grad;
            v[j] = beta2 * v[j] + (1.0 - beta2) * grad * grad;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            p[j] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

/// Largest relative error between the analytic gradient and central finite
/// differences, `|a - n| / max(|a|, |n|, 1e-8)` over all parameters.
///
/// `loss` maps a parameter vector to `(loss, analytic gradient)`; it must be
/// deterministic (freeze any noise it draws).
pub fn gradient_check<F>(mut loss: F, params: &[f64], epsilon: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(params);
    assert_eq!(analytic.len(), params.len(), "gradient length must match parameters");
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let original = probe[i];
        probe[i] = original + epsilon;
        let (plus, _) = loss(&probe);
        probe[i] = original - epsilon;
        let (minus, _) = loss(&probe);
        probe[i] = original;
        let numeric = (plus - minus) / (2.0 * epsilon);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    worst
}

#[inline]
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    // Straight-line re-implementation: explicit triple loop, no gemm.
    fn naive_forward(layers: &[DenseLayer], input: &Matrix) -> Matrix {
        let mut cur: Vec<Vec<f64>> = (0..input.rows()).map(|r| input.row(r).to_vec()).collect();
        for layer in layers {
            cur = cur
                .iter()
                .map(|x| {
                    (0..layer.out_dim())
                        .map(|o| {
                            let mut z = layer.bias()[o];
                            for (i, xi) in x.iter().enumerate() {
                                z += layer.weights().get(o, i) * xi;
                            }
                            layer.activation().apply(z)
                        })
                        .collect()
                })
                .collect();
        }
        Matrix::from_rows(&cur).unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let layer =
            DenseLayer::from_parts(Matrix::identity(3), vec![0.0; 3], Activation::Identity).unwrap();
        let x = Matrix::from_rows(&[vec![1.5, -2.0, 3.25]]).unwrap();
        let (y, _) = forward(&[layer], &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn relu_layer_clips_negatives() {
        let layer =
            DenseLayer::from_parts(Matrix::identity(2), vec![0.0; 2], Activation::Relu).unwrap();
        let x = Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        let (y, _) = forward(&[layer], &x).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let layers = vec![
            DenseLayer::new(5, 7, Activation::Relu, &mut rng),
            DenseLayer::new(7, 3, Activation::Tanh, &mut rng),
        ];
        let x = random_matrix(&mut rng, 9, 5);
        let (y, _) = forward(&layers, &x).unwrap();
        let expected = naive_forward(&layers, &x);
        for (a, b) in y.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_reports_mismatched_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = vec![
            DenseLayer::new(3, 4, Activation::Relu, &mut rng),
            DenseLayer::new(5, 2, Activation::Identity, &mut rng),
        ];
        let err = forward(&layers, &Matrix::zeros(2, 3)).unwrap_err();
        assert!(matches!(err, Error::LayerDimension { layer: 1, expected: 5, found: 4 }));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layers = vec![
            DenseLayer::new(4, 6, Activation::Relu, &mut rng),
            DenseLayer::new(6, 2, Activation::Tanh, &mut rng),
        ];
        let x = random_matrix(&mut rng, 5, 4);
        let (_, cache) = forward(&layers, &x).unwrap();
        let g = backward(&layers, &cache, &Matrix::zeros(5, 2)).unwrap();
        for lg in &g.layers {
            assert!(lg.weights.data().iter().all(|&v| v == 0.0));
            assert!(lg.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn identity_net_sum_loss_weight_gradient_is_column_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = DenseLayer::new(3, 2, Activation::Identity, &mut rng);
        let x = random_matrix(&mut rng, 6, 3);
        let layers = [layer];
        let (_, cache) = forward(&layers, &x).unwrap();
        let ones = Matrix::from_vec(6, 2, vec![1.0; 12]).unwrap();
        let g = backward(&layers, &cache, &ones).unwrap();
        let sums = x.column_sums();
        for o in 0..2 {
            for i in 0..3 {
                assert!((g.layers[0].weights.get(o, i) - sums[i]).abs() < 1e-12);
            }
            assert!((g.layers[0].bias[o] - 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_rejects_stale_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layers = vec![DenseLayer::new(2, 2, Activation::Relu, &mut rng)];
        let x = random_matrix(&mut rng, 3, 2);
        let (_, cache) = forward(&layers, &x).unwrap();
        layers[0].params_mut().0[0] += 1.0;
        let err = backward(&layers, &cache, &Matrix::zeros(3, 2)).unwrap_err();
        assert!(matches!(err, Error::StaleCache(_)));

        let other = vec![DenseLayer::new(2, 2, Activation::Relu, &mut rng)];
        let (_, cache) = forward(&layers, &x).unwrap();
        assert!(matches!(
            backward(&other, &cache, &Matrix::zeros(3, 2)),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layers = vec![
            DenseLayer::new(8, 16, Activation::Relu, &mut rng),
            DenseLayer::new(16, 4, Activation::Identity, &mut rng),
        ];
        let x = random_matrix(&mut rng, 33, 8);
        let (a, _) = forward(&layers, &x).unwrap();
        let (b, _) = forward(&layers, &x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn glorot_init_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = DenseLayer::new(69, 128, Activation::Relu, &mut rng);
        let limit = (6.0f64 / (69.0 + 128.0)).sqrt();
        assert!(layer.weights().data().iter().all(|w| w.abs() <= limit));
        assert!(layer.bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn adam_zero_gradient_zero_decay_is_identity() {
        let mut p = vec![0.3, -1.2, 4.0];
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        for _ in 0..10 {
            adam_step(&mut [&mut p[..]], &[&[0.0, 0.0, 0.0]], &mut state).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.2, 4.0]);
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        for g in [0.5, -3.0, 1e-3] {
            let mut p = vec![1.0];
            let mut state = AdamState::new(cfg, &[1]);
            adam_step(&mut [&mut p[..]], &[&[g]], &mut state).unwrap();
            let moved = (p[0] - 1.0).abs();
            let expected = cfg.learning_rate * g.abs() / (g.abs() + cfg.epsilon);
            assert!((moved - expected).abs() < 1e-15);
            assert!((moved - cfg.learning_rate).abs() < 1e-6 * cfg.learning_rate / g.abs().min(1.0));
            assert_eq!(p[0] < 1.0, g > 0.0);
        }
    }

    #[test]
    fn adam_descends_a_scalar_quadratic() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut w = vec![1.0];
        let mut state = AdamState::new(cfg, &[1]);
        for _ in 0..100 {
            let g = 2.0 * w[0];
            adam_step(&mut [&mut w[..]], &[&[g]], &mut state).unwrap();
        }
        assert!(w[0].abs() < 0.1, "w = {}", w[0]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = vec![1.0, 2.0];
        let mut state = AdamState::new(AdamConfig::default(), &[2]);
        let err = adam_step(&mut [&mut p[..]], &[&[0.0, f64::NAN]], &mut state).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(state.step_count(), 0);
        assert_eq!(p, vec![1.0, 2.0]);
    }

    fn linear_quadratic_loss(x: &Matrix, target: &Matrix, params: &[f64]) -> (f64, Vec<f64>) {
        let (out_dim, in_dim) = (target.cols(), x.cols());
        let w = Matrix::from_vec(out_dim, in_dim, params[..out_dim * in_dim].to_vec()).unwrap();
        let layer =
            DenseLayer::from_parts(w, params[out_dim * in_dim..].to_vec(), Activation::Identity)
                .unwrap();
        let layers = [layer];
        let (y, cache) = forward(&layers, x).unwrap();
        let mut loss = 0.0;
        let mut dy = Matrix::zeros(y.rows(), y.cols());
        for ((d, yv), tv) in dy.data_mut().iter_mut().zip(y.data()).zip(target.data()) {
            loss += 0.5 * (yv - tv) * (yv - tv);
            *d = yv - tv;
        }
        let g = backward(&layers, &cache, &dy).unwrap();
        let mut grad = g.layers[0].weights.data().to_vec();
        grad.extend_from_slice(&g.layers[0].bias);
        (loss, grad)
    }

    #[test]
    fn gradient_check_is_tight_on_quadratic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_matrix(&mut rng, 6, 4);
        let t = random_matrix(&mut rng, 6, 3);
        let params: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = gradient_check(|p| linear_quadratic_loss(&x, &t, p), &params, 1e-5);
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn gradient_check_flags_corrupted_entry() {
        // Doubling one analytic entry: |2a - a| / max(2a, a) = 0.5.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_matrix(&mut rng, 6, 4);
        let t = random_matrix(&mut rng, 6, 3);
        let params: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = gradient_check(
            |p| {
                let (l, mut g) = linear_quadratic_loss(&x, &t, p);
                g[4] *= 2.0;
                (l, g)
            },
            &params,
            1e-5,
        );
        assert!((err - 0.5).abs() < 1e-4, "err = {err}");
    }

    fn flatten_layers(layers: &[DenseLayer]) -> Vec<f64> {
        let mut v = Vec::new();
        for l in layers {
            v.extend_from_slice(l.weights().data());
            v.extend_from_slice(l.bias());
        }
        v
    }

    fn load_layers(layers: &mut [DenseLayer], flat: &[f64]) {
        let mut off = 0;
        for l in layers {
            let (w, b) = l.params_mut();
            w.copy_from_slice(&flat[off..off + w.len()]);
            off += w.len();
            b.copy_from_slice(&flat[off..off + b.len()]);
            off += b.len();
        }
    }

    fn min_abs_relu_pre(layers: &[DenseLayer], cache: &ForwardCache) -> f64 {
        layers
            .iter()
            .zip(cache.pre_activations())
            .filter(|(l, _)| l.activation() == Activation::Relu)
            .flat_map(|(_, p)| p.data().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn backward_matches_finite_differences(
            seed in any::<u64>(),
            dims in proptest::collection::vec(1usize..7, 2..5),
            acts in proptest::collection::vec(0u8..3, 4),
            batch in 1usize..6,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut layers: Vec<DenseLayer> = dims
                .windows(2)
                .zip(&acts)
                .map(|(w, a)| {
                    let act = [Activation::Relu, Activation::Tanh, Activation::Identity][*a as usize];
                    DenseLayer::new(w[0], w[1], act, &mut rng)
                })
                .collect();
            for l in &mut layers {
                for b in l.params_mut().1 {
                    *b = rng.random_range(-0.5..0.5);
                }
            }
            let x = random_matrix(&mut rng, batch, dims[0]);
            let r = random_matrix(&mut rng, batch, *dims.last().unwrap());
            let (_, cache) = forward(&layers, &x).unwrap();
            // Central differences are meaningless across a ReLU kink.
            prop_assume!(min_abs_relu_pre(&layers, &cache) > 1e-3);

            let params = flatten_layers(&layers);
            let mut probe_layers = layers.clone();
            let err = gradient_check(
                |p| {
                    load_layers(&mut probe_layers, p);
                    let (y, cache) = forward(&probe_layers, &x).unwrap();
                    let loss: f64 = y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
                    let g = backward(&probe_layers, &cache, &r).unwrap();
                    let mut flat = Vec::new();
                    for lg in &g.layers {
                        flat.extend_from_slice(lg.weights.data());
                        flat.extend_from_slice(&lg.bias);
                    }
                    (loss, flat)
                },
                &params,
                1e-5,
            );
            prop_assert!(err < 1e-4, "max relative error {}", err);
        }

        #[test]
        fn relu_outputs_are_non_negative(seed in any::<u64>(), batch in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layers = vec![DenseLayer::new(4, 9, Activation::Relu, &mut rng)];
            let x = random_matrix(&mut rng, batch, 4);
            let (y, _) = forward(&layers, &x).unwrap();
            prop_assert!(y.data().iter().all(|&v| v >= 0.0));
        }
    }
}
