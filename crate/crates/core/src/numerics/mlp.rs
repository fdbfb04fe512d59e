//! Time-conditioned MLP noise predictor.
//!
//! Input is the flattened sample concatenated with a sinusoidal embedding of
//! the step index; hidden layers use SiLU; the output layer is linear and has
//! the sample's dimension. Weights are stored in single precision and widened
//! to double precision for every evaluation.

use serde::{Deserialize, Serialize};

use super::dual::{silu_derivative, Dual, Scalar};
use super::rng::RngStream;
use super::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_EMBED_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub sample_dim: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    pub fn new(sample_dim: usize, hidden: Vec<usize>) -> Self {
        Architecture {
            sample_dim,
            embed_dim: DEFAULT_EMBED_DIM,
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.sample_dim + self.embed_dim
    }

    /// `(inputs, outputs)` per layer, input layer first.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim();
        for &h in &self.hidden {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.sample_dim));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.sample_dim == 0 || self.embed_dim % 2 != 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!("bad architecture {self:?}")));
        }
        Ok(())
    }
}

/// Dense layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Layer {
    fn apply<S: Scalar>(&self, input: &[S]) -> Vec<S> {
        debug_assert_eq!(input.len(), self.inputs);
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| {
                row.iter()
                    .zip(input)
                    .fold(S::constant(f64::from(b)), |acc, (&w, &a)| {
                        acc + a.scale(f64::from(w))
                    })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserParams {
    pub arch: Architecture,
    pub layers: Vec<Layer>,
}

/// Gradient of a scalar loss with respect to every parameter and the sample input.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input: Vec<f64>,
}

impl Gradients {
    /// Parameter gradient in the same order as [`DenoiserParams::flat`].
    pub fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
            .collect()
    }
}

/// Sinusoidal embedding of a diffusion step index.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut emb = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(10_000f64.ln()) * k as f64 / half as f64).exp();
        let angle = t as f64 * freq;
        emb[k] = angle.sin();
        emb[half + k] = angle.cos();
    }
    emb
}

impl DenoiserParams {
    /// Gaussian init scaled by `1/sqrt(fan_in)`, zero biases. The output
    /// layer is shrunk so an untrained net predicts small noise.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let dims = arch.layer_dims();
        let last = dims.len() - 1;
        let mut stream = RngStream::new(seed, 0x1417);
        let mut layers = Vec::with_capacity(dims.len());
        for (l, &(inputs, outputs)) in dims.iter().enumerate() {
            let (z, next) = stream.normals(inputs * outputs);
            stream = next;
            let mut std = 1.0 / (inputs as f64).sqrt();
            if l == last {
                std *= 0.1;
            }
            layers.push(Layer {
                inputs,
                outputs,
                weights: z.iter().map(|v| (v * std) as f32).collect(),
                bias: vec![0.0; outputs],
            });
        }
        Ok(DenoiserParams { arch, layers })
    }

    /// All-zero weights and biases.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layers = arch
            .layer_dims()
            .into_iter()
            .map(|(inputs, outputs)| Layer {
                inputs,
                outputs,
                weights: vec![0.0; inputs * outputs],
                bias: vec![0.0; outputs],
            })
            .collect();
        Ok(DenoiserParams { arch, layers })
    }

    pub fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    /// Weights then biases, layer by layer.
    pub fn flat(&self) -> Vec<f32> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn with_flat(&self, flat: &[f32]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.num_params()],
                actual: vec![flat.len()],
            });
        }
        let mut out = self.clone();
        let mut offset = 0;
        for layer in &mut out.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(out)
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.arch.sample_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.arch.sample_dim],
                actual: vec![len],
            });
        }
        Ok(())
    }

    /// Forward pass over any [`Scalar`]; `x.len()` must equal `sample_dim`.
    pub fn forward<S: Scalar>(&self, x: &[S], t: usize) -> Vec<S> {
        let mut act: Vec<S> = x.to_vec();
        act.extend(
            time_embedding(t, self.arch.embed_dim)
                .into_iter()
                .map(S::constant),
        );
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(&act);
            if l != last {
                z.iter_mut().for_each(|v| *v = v.silu());
            }
            act = z;
        }
        act
    }

    pub fn predict_f64(&self, x: &[f64], t: usize) -> Result<Vec<f64>> {
        self.check_len(x.len())?;
        Ok(self.forward(x, t))
    }

    /// Value and Jacobian-vector product `J_x · tangent`.
    pub fn predict_dual_f64(
        &self,
        x: &[f64],
        tangent: &[f64],
        t: usize,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(x.len())?;
        if tangent.len() != x.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.len()],
                actual: vec![tangent.len()],
            });
        }
        let input: Vec<Dual> = x
            .iter()
            .zip(tangent)
            .map(|(&re, &eps)| Dual::new(re, eps))
            .collect();
        let out = self.forward(&input, t);
        Ok(out.iter().map(|d| (d.re, d.eps)).unzip())
    }

    /// Output and reverse-mode pullback of `cotangent` through the network.
    pub fn vjp(&self, x: &[f64], t: usize, cotangent: &[f64]) -> Result<(Vec<f64>, Gradients)> {
        self.check_len(x.len())?;
        self.check_len(cotangent.len())?;
        let mut input = x.to_vec();
        input.extend(time_embedding(t, self.arch.embed_dim));

        // activations[l] is the input to layer l; pre[l] its pre-activation.
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut act = input;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(&act);
            let next = if l == last {
                z.clone()
            } else {
                z.iter().map(|v| v.silu()).collect()
            };
            activations.push(act);
            pre.push(z);
            act = next;
        }
        let output = act;

        let mut weights = vec![Vec::new(); self.layers.len()];
        let mut biases = vec![Vec::new(); self.layers.len()];
        let mut grad = cotangent.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l != last {
                for (g, &z) in grad.iter_mut().zip(&pre[l]) {
                    *g *= silu_derivative(z);
                }
            }
            let a = &activations[l];
            let mut gw = vec![0.0; layer.inputs * layer.outputs];
            let mut g_in = vec![0.0; layer.inputs];
            for (o, &g) in grad.iter().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                let grow = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for i in 0..layer.inputs {
                    grow[i] = g * a[i];
                    g_in[i] += g * f64::from(row[i]);
                }
            }
            weights[l] = gw;
            biases[l] = grad;
            grad = g_in;
        }
        grad.truncate(self.arch.sample_dim);
        Ok((
            output,
            Gradients {
                weights,
                biases,
                input: grad,
            },
        ))
    }
}

/// Deterministic forward pass on a storage tensor.
pub fn predict_noise(params: &DenoiserParams, x: &Tensor, t: usize) -> Result<Tensor> {
    let out = params.predict_f64(&x.to_f64(), t)?;
    Tensor::from_f64(x.shape().to_vec(), &out)
}

/// Forward-mode evaluation: returns the prediction and `J_x · tangent`.
pub fn predict_noise_dual(
    params: &DenoiserParams,
    x: &Tensor,
    tangent: &Tensor,
    t: usize,
) -> Result<(Tensor, Tensor)> {
    tangent.ensure_shape(x.shape())?;
    let (value, tan) = params.predict_dual_f64(&x.to_f64(), &tangent.to_f64(), t)?;
    Ok((
        Tensor::from_f64(x.shape().to_vec(), &value)?,
        Tensor::from_f64(x.shape().to_vec(), &tan)?,
    ))
}

/// Noise-prediction loss `‖ε − f(√ᾱ·x₀ + √(1−ᾱ)·ε, t)‖²` and its exact gradient.
pub fn loss_gradient_f64(
    params: &DenoiserParams,
    x0: &[f64],
    t: usize,
    eps: &[f64],
    alpha_bar: f64,
) -> Result<(f64, Gradients)> {
    if x0.len() != eps.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![x0.len()],
            actual: vec![eps.len()],
        });
    }
    let (a, b) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let xt: Vec<f64> = x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect();
    let pred = params.predict_f64(&xt, t)?;
    let residual: Vec<f64> = pred.iter().zip(eps).map(|(p, e)| p - e).collect();
    let loss = residual.iter().map(|r| r * r).sum();
    let cotangent: Vec<f64> = residual.iter().map(|r| 2.0 * r).collect();
    let (_, grads) = params.vjp(&xt, t, &cotangent)?;
    Ok((loss, grads))
}

pub fn loss_gradient(
    params: &DenoiserParams,
    x0: &Tensor,
    t: usize,
    eps: &Tensor,
    alpha_bar: f64,
) -> Result<(f64, Gradients)> {
    eps.ensure_shape(x0.shape())?;
    loss_gradient_f64(params, &x0.to_f64(), t, &eps.to_f64(), alpha_bar)
}

/// `c (m×n) += a (m×k) · b (k×n)` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], (rsa, csa): (usize, usize), b: &[f64], (rsb, csb): (usize, usize), c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides address only elements inside `a`, `b` and `c`,
    // whose lengths the callers size as m·k, k·n and m·n.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Summed noise-prediction loss over a minibatch and its summed parameter
/// gradient, in [`DenoiserParams::flat`] order.
///
/// `flat` holds the parameters already widened to f64; `xt` and `eps` are
/// `ts.len()` rows of `sample_dim` values. Agrees with summing
/// [`loss_gradient_f64`] over the rows up to rounding.
pub fn batch_loss_gradient(
    arch: &Architecture,
    flat: &[f64],
    xt: &[f64],
    ts: &[usize],
    eps: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let rows = ts.len();
    let dim = arch.sample_dim;
    if flat.len() != arch.num_params() || xt.len() != rows * dim || eps.len() != rows * dim {
        return Err(Error::ShapeMismatch {
            expected: vec![arch.num_params(), rows * dim],
            actual: vec![flat.len(), xt.len().max(eps.len())],
        });
    }
    let dims = arch.layer_dims();
    let mut offsets = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &(i, o) in &dims {
        offsets.push(offset);
        offset += i * o + o;
    }

    let width = arch.input_dim();
    let mut input = Vec::with_capacity(rows * width);
    for (r, &t) in ts.iter().enumerate() {
        input.extend_from_slice(&xt[r * dim..(r + 1) * dim]);
        input.extend(time_embedding(t, arch.embed_dim));
    }

    let last = dims.len() - 1;
    let mut activations = Vec::with_capacity(dims.len());
    let mut pre = Vec::with_capacity(dims.len());
    let mut act = input;
    for (l, &(i, o)) in dims.iter().enumerate() {
        let w = &flat[offsets[l]..offsets[l] + i * o];
        let bias = &flat[offsets[l] + i * o..offsets[l] + i * o + o];
        let mut z: Vec<f64> = bias.iter().copied().cycle().take(rows * o).collect();
        gemm(rows, i, o, &act, (i, 1), w, (1, i), &mut z);
        let next = if l == last {
            z.clone()
        } else {
            z.iter().map(|&v| v.silu()).collect()
        };
        activations.push(act);
        pre.push(z);
        act = next;
    }

    let mut loss = 0.0;
    let mut grad: Vec<f64> = act
        .iter()
        .zip(eps)
        .map(|(p, e)| {
            let r = p - e;
            loss += r * r;
            2.0 * r
        })
        .collect();
    let mut out = vec![0.0; flat.len()];
    for l in (0..dims.len()).rev() {
        let (i, o) = dims[l];
        if l != last {
            grad.iter_mut()
                .zip(&pre[l])
                .for_each(|(g, &z)| *g *= silu_derivative(z));
        }
        let (gw, gb) = out[offsets[l]..offsets[l] + i * o + o].split_at_mut(i * o);
        gemm(o, rows, i, &grad, (1, o), &activations[l], (i, 1), gw);
        for row in grad.chunks_exact(o) {
            gb.iter_mut().zip(row).for_each(|(b, g)| *b += g);
        }
        if l > 0 {
            let w = &flat[offsets[l]..offsets[l] + i * o];
            let mut g_in = vec![0.0; rows * i];
            gemm(rows, o, i, &grad, (o, 1), w, (i, 1), &mut g_in);
            grad = g_in;
        }
    }
    Ok((loss, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(seed: u64) -> DenoiserParams {
        DenoiserParams::init(Architecture::new(3, vec![8, 6]), seed).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let p = DenoiserParams::zeros(Architecture::new(4, vec![5])).unwrap();
        let out = p.predict_f64(&[1.0, -2.0, 0.5, 3.0], 7).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_with_bias_give_bias() {
        let p = DenoiserParams::zeros(Architecture::new(2, vec![3])).unwrap();
        let mut flat = p.flat();
        let n = flat.len();
        flat[n - 2] = 0.25;
        flat[n - 1] = -1.5;
        let p = p.with_flat(&flat).unwrap();
        assert_eq!(p.predict_f64(&[9.0, 9.0], 3).unwrap(), vec![0.25, -1.5]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = small_net(1);
        assert!(p.predict_f64(&[0.0; 2], 1).is_err());
        let x = Tensor::zeros(vec![3]);
        let bad = Tensor::zeros(vec![2]);
        assert!(predict_noise_dual(&p, &x, &bad, 1).is_err());
    }

    #[test]
    fn equal_params_equal_outputs() {
        let a = small_net(5);
        let b = a.with_flat(&a.flat()).unwrap();
        let x = [0.3, -0.1, 2.0];
        assert_eq!(a.predict_f64(&x, 4).unwrap(), b.predict_f64(&x, 4).unwrap());
    }

    #[test]
    fn zero_tangent_gives_zero_tangent() {
        let p = small_net(2);
        let (_, tan) = p.predict_dual_f64(&[0.1, 0.2, 0.3], &[0.0; 3], 9).unwrap();
        assert!(tan.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perfect_prediction_has_zero_gradient() {
        // With all weights zero the prediction is 0, so eps = 0 is a zero-loss point.
        let p = DenoiserParams::zeros(Architecture::new(3, vec![4])).unwrap();
        let (loss, g) = loss_gradient_f64(&p, &[0.5, -0.5, 1.0], 5, &[0.0; 3], 0.7).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batched_gradient_matches_per_sample_sum() {
        let p = small_net(11);
        let flat: Vec<f64> = p.flat().iter().map(|&w| f64::from(w)).collect();
        let xt = [0.3, -0.2, 1.1, -0.7, 0.0, 0.4, 2.0, 1.0, -1.0];
        let eps = [0.1, 0.5, -0.3, 1.2, -0.8, 0.0, 0.3, 0.3, -0.9];
        let ts = [1, 40, 99];
        let (loss, grad) = batch_loss_gradient(&p.arch, &flat, &xt, &ts, &eps).unwrap();
        let mut want_loss = 0.0;
        let mut want = vec![0.0; flat.len()];
        for r in 0..3 {
            // alpha_bar = 1 makes x_t equal to the given row.
            let (l, g) = loss_gradient_f64(&p, &xt[3 * r..3 * r + 3], ts[r], &eps[3 * r..3 * r + 3], 1.0).unwrap();
            want_loss += l;
            want.iter_mut().zip(g.flat()).for_each(|(a, b)| *a += b);
        }
        assert!((loss - want_loss).abs() < 1e-12);
        for (a, b) in grad.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn time_embedding_shape() {
        let e = time_embedding(0, 16);
        assert_eq!(e.len(), 16);
        assert!(e[..8].iter().all(|&v| v == 0.0));
        assert!(e[8..].iter().all(|&v| v == 1.0));
    }
}
