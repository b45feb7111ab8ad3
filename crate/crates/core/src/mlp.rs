//! Dense ReLU networks with hand-written reverse passes, batched through GEMM.
//!
//! Parameters live in one flat buffer (per layer: weights `out × in` row-major,
//! then biases) so optimizers and checkpoints can treat a network as a slice.

use matrixmultiply::{dgemm, sgemm};
use num_traits::Float;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows per independent forward/backward chunk. Fixed so that reductions are
/// independent of the worker count.
pub const CHUNK_ROWS: usize = 256;

pub trait Real: Float + Send + Sync + Default + std::fmt::Debug + std::iter::Sum + 'static {
    /// `C (m×n) = alpha · A (m×k) · B (k×n) + beta · C` with explicit strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        <Self as num_traits::NumCast>::from(v).unwrap()
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:ident) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
                    ((rows.max(1) - 1) as isize * rs + (cols.max(1) - 1) as isize * cs) as usize
                };
                if k > 0 {
                    assert!(last(m, k, rsa, csa) < a.len());
                    assert!(last(k, n, rsb, csb) < b.len());
                }
                assert!(last(m, n, rsc, csc) < c.len());
                // SAFETY: the asserts above bound every strided access inside the slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, sgemm);
impl_real!(f64, dgemm);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    fn weights(&self) -> usize {
        self.inputs * self.outputs
    }
    fn len(&self) -> usize {
        self.weights() + self.outputs
    }
}

/// Affine layers with ReLU between them and a linear head.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    shapes: Vec<LayerShape>,
    offsets: Vec<usize>,
    pub params: Vec<T>,
}

impl<T: Real> Mlp<T> {
    /// `widths = [input, hidden..., output]`, all parameters zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Shape(format!("invalid layer widths {widths:?}")));
        }
        let shapes: Vec<LayerShape> = widths
            .windows(2)
            .map(|w| LayerShape {
                inputs: w[0],
                outputs: w[1],
            })
            .collect();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.len();
        }
        Ok(Mlp {
            shapes,
            offsets,
            params: vec![T::zero(); total],
        })
    }

    /// Kaiming-uniform (fan-in) weights for ReLU layers, unit-gain uniform for
    /// the head, zero biases.
    pub fn kaiming(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        let n_layers = m.shapes.len();
        for l in 0..n_layers {
            let s = m.shapes[l];
            let gain = if l + 1 < n_layers { 6.0 } else { 3.0 };
            let bound = (gain / s.inputs as f64).sqrt();
            let off = m.offsets[l];
            for w in &mut m.params[off..off + s.weights()] {
                *w = T::of(rng.random_range(-bound..bound));
            }
        }
        Ok(m)
    }

    /// Rebuilds a network from explicit widths and a flat parameter buffer.
    pub fn from_params(widths: &[usize], params: Vec<T>) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        if params.len() != m.params.len() {
            return Err(Error::Shape(format!(
                "expected {} parameters for {widths:?}, got {}",
                m.params.len(),
                params.len()
            )));
        }
        m.params = params;
        Ok(m)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.shapes[0].inputs];
        w.extend(self.shapes.iter().map(|s| s.outputs));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.shapes[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn layer_weights_mut(&mut self, layer: usize) -> &mut [T] {
        let s = self.shapes[layer];
        let off = self.offsets[layer];
        &mut self.params[off..off + s.weights()]
    }

    pub fn layer_bias_mut(&mut self, layer: usize) -> &mut [T] {
        let s = self.shapes[layer];
        let off = self.offsets[layer] + s.weights();
        &mut self.params[off..off + s.outputs]
    }

    pub fn num_layers(&self) -> usize {
        self.shapes.len()
    }

    fn forward_chunk(&self, input: &[T], rows: usize, acts: &mut Vec<Vec<T>>) -> Vec<T> {
        acts.clear();
        let mut cur = input.to_vec();
        let n_layers = self.shapes.len();
        for (l, s) in self.shapes.iter().enumerate() {
            let off = self.offsets[l];
            let w = &self.params[off..off + s.weights()];
            let b = &self.params[off + s.weights()..off + s.len()];
            let mut out = vec![T::zero(); rows * s.outputs];
            for r in 0..rows {
                out[r * s.outputs..(r + 1) * s.outputs].copy_from_slice(b);
            }
            // out += X · Wᵀ
            T::gemm(
                rows,
                s.inputs,
                s.outputs,
                T::one(),
                &cur,
                s.inputs as isize,
                1,
                w,
                1,
                s.inputs as isize,
                T::one(),
                &mut out,
                s.outputs as isize,
                1,
            );
            if l + 1 < n_layers {
                for v in &mut out {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            acts.push(cur);
            cur = out;
        }
        cur
    }

    /// Forward pass over `rows` inputs (row-major). Returns the linear head
    /// outputs and a cache for [`Mlp::backward`].
    pub fn forward(&self, input: &[T], rows: usize) -> (Vec<T>, MlpCache<T>) {
        let d_in = self.input_dim();
        assert_eq!(input.len(), rows * d_in, "input size");
        let chunks: Vec<(Vec<T>, Vec<Vec<T>>)> = (0..rows.div_ceil(CHUNK_ROWS))
            .into_par_iter()
            .map(|c| {
                let r0 = c * CHUNK_ROWS;
                let r1 = (r0 + CHUNK_ROWS).min(rows);
                let mut acts = Vec::new();
                let out = self.forward_chunk(&input[r0 * d_in..r1 * d_in], r1 - r0, &mut acts);
                (out, acts)
            })
            .collect();
        let mut output = Vec::with_capacity(rows * self.output_dim());
        let mut caches = Vec::with_capacity(chunks.len());
        for (out, acts) in chunks {
            output.extend_from_slice(&out);
            caches.push(acts);
        }
        (output, MlpCache { rows, chunks: caches })
    }

    /// Forward without keeping activations.
    pub fn infer(&self, input: &[T], rows: usize) -> Vec<T> {
        self.forward(input, rows).0
    }

    /// Reverse pass. Accumulates parameter gradients into `param_grads` and
    /// returns the gradient with respect to the inputs.
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &[T], param_grads: &mut [T]) -> Vec<T> {
        let d_o = self.output_dim();
        let d_in = self.input_dim();
        assert_eq!(d_out.len(), cache.rows * d_o, "upstream gradient size");
        assert_eq!(param_grads.len(), self.params.len(), "gradient buffer size");
        let parts: Vec<(Vec<T>, Vec<T>)> = cache
            .chunks
            .par_iter()
            .enumerate()
            .map(|(c, acts)| {
                let r0 = c * CHUNK_ROWS;
                let rows = acts[0].len() / d_in;
                let mut grads = vec![T::zero(); self.params.len()];
                let d_x = self.backward_chunk(acts, &d_out[r0 * d_o..(r0 + rows) * d_o], rows, &mut grads);
                (d_x, grads)
            })
            .collect();
        let mut d_input = Vec::with_capacity(cache.rows * d_in);
        for (d_x, grads) in parts {
            d_input.extend_from_slice(&d_x);
            for (acc, g) in param_grads.iter_mut().zip(grads) {
                *acc = *acc + g;
            }
        }
        d_input
    }

    fn backward_chunk(&self, acts: &[Vec<T>], d_out: &[T], rows: usize, grads: &mut [T]) -> Vec<T> {
        let mut d_cur = d_out.to_vec();
        for l in (0..self.shapes.len()).rev() {
            let s = self.shapes[l];
            let off = self.offsets[l];
            let x = &acts[l];
            let w = &self.params[off..off + s.weights()];
            {
                let (gw, gb) = grads[off..off + s.len()].split_at_mut(s.weights());
                for r in 0..rows {
                    for (b, d) in gb.iter_mut().zip(&d_cur[r * s.outputs..(r + 1) * s.outputs]) {
                        *b = *b + *d;
                    }
                }
                // dW += dYᵀ · X
                T::gemm(
                    s.outputs,
                    rows,
                    s.inputs,
                    T::one(),
                    &d_cur,
                    1,
                    s.outputs as isize,
                    x,
                    s.inputs as isize,
                    1,
                    T::one(),
                    gw,
                    s.inputs as isize,
                    1,
                );
            }
            // dX = dY · W
            let mut d_x = vec![T::zero(); rows * s.inputs];
            T::gemm(
                rows,
                s.outputs,
                s.inputs,
                T::one(),
                &d_cur,
                s.outputs as isize,
                1,
                w,
                s.inputs as isize,
                1,
                T::zero(),
                &mut d_x,
                s.inputs as isize,
                1,
            );
            if l > 0 {
                // x is the post-ReLU activation of layer l-1
                for (d, a) in d_x.iter_mut().zip(x) {
                    if *a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            d_cur = d_x;
        }
        d_cur
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            shapes: self.shapes.clone(),
            offsets: self.offsets.clone(),
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
        }
    }
}

/// Saved layer inputs, chunked as in the forward pass.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<T> {
    pub rows: usize,
    chunks: Vec<Vec<Vec<T>>>,
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::<f64>::zeros(&[4, 8, 2]).unwrap();
        let out = m.infer(&[1.0, 2.0, 3.0, 4.0], 1);
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Mlp::<f32>::zeros(&[3]).is_err());
        assert!(Mlp::<f32>::zeros(&[3, 0, 1]).is_err());
        assert!(Mlp::<f32>::from_params(&[2, 1], vec![0.0; 2]).is_err());
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Mlp::<f64>::kaiming(&[5, 7, 6, 3], &mut rng).unwrap();
        let rows = 300; // spans two chunks
        let x: Vec<f64> = (0..rows * 5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = m.infer(&x, rows);
        for r in [0, 17, 255, 256, 299] {
            let mut cur = x[r * 5..(r + 1) * 5].to_vec();
            for l in 0..m.shapes.len() {
                let s = m.shapes[l];
                let off = m.offsets[l];
                let mut next = vec![0.0; s.outputs];
                for o in 0..s.outputs {
                    let mut acc = m.params[off + s.weights() + o];
                    for i in 0..s.inputs {
                        acc += m.params[off + o * s.inputs + i] * cur[i];
                    }
                    next[o] = if l + 1 < m.shapes.len() { acc.max(0.0) } else { acc };
                }
                cur = next;
            }
            for o in 0..3 {
                assert!((cur[o] - out[r * 3 + o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Mlp::<f64>::kaiming(&[4, 8, 2], &mut rng).unwrap();
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = m.forward(&x, 3);
        let mut g = vec![0.0; m.param_count()];
        let dx = m.backward(&cache, &[0.0; 6], &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_per_sample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Mlp::<f64>::kaiming(&[3, 6, 6, 2], &mut rng).unwrap();
        let rows = 9;
        let x: Vec<f64> = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let up: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, cache) = m.forward(&x, rows);
        let mut batch = vec![0.0; m.param_count()];
        let dx_batch = m.backward(&cache, &up, &mut batch);
        let mut summed = vec![0.0; m.param_count()];
        for r in 0..rows {
            let (_, c) = m.forward(&x[r * 3..(r + 1) * 3], 1);
            let dx = m.backward(&c, &up[r * 2..(r + 1) * 2], &mut summed);
            for k in 0..3 {
                assert!((dx[k] - dx_batch[r * 3 + k]).abs() < 1e-12);
            }
        }
        for (a, b) in batch.iter().zip(&summed) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
