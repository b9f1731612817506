//! Residual temporal-convolution encoder.
//!
//! ```text
//! h0      = tanh(W_in x_t + b_in)                 per frame
//! h0'     = average-pool(h0, downsample_factor)
//! h_{l+1} = h_l + keep_l / (1 - p_ld) * (dropout(tanh(conv_l(h_l) + b_l)))
//! logits  = W_out h_L + b_out
//! ```
//!
//! `conv_l` spans `2 * context_radius + 1` frames with zero padding. Dropout
//! and layer-drop use inverted scaling, so evaluation runs the full network
//! without rescaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{NamedTensor, ParameterSet};
use crate::augment::FeatureMatrix;
use crate::error::{Error, Result};
use crate::lattice::LogitLattice;
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    /// `|V'|`.
    pub output_dim: usize,
    pub layers: usize,
    pub hidden_dim: usize,
    pub context_radius: usize,
    pub dropout_prob: f64,
    pub layer_drop_prob: f64,
    pub downsample_factor: usize,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            output_dim,
            layers: 3,
            hidden_dim: 64,
            context_radius: 2,
            dropout_prob: 0.1,
            layer_drop_prob: 0.1,
            downsample_factor: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dim == 0 || self.downsample_factor == 0 {
            return Err(Error::invalid("encoder dimensions and downsample factor must be >= 1"));
        }
        for (name, p) in [("dropout_prob", self.dropout_prob), ("layer_drop_prob", self.layer_drop_prob)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    fn kernel(&self) -> usize {
        2 * self.context_radius + 1
    }

    pub fn output_frames(&self, input_frames: usize) -> usize {
        input_frames.div_ceil(self.downsample_factor)
    }

    /// Freshly initialized parameters.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet> {
        self.validate()?;
        let (f, h, v, k) = (self.input_dim, self.hidden_dim, self.output_dim, self.kernel());
        let xavier = |fan_in: usize, fan_out: usize| (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut tensors = vec![
            NamedTensor::uniform("input.weight", vec![h, f], xavier(f, h), rng),
            NamedTensor::zeros("input.bias", vec![h]),
        ];
        for l in 0..self.layers {
            // residual branches start small
            let bound = 0.5 * xavier(k * h, h);
            tensors.push(NamedTensor::uniform(format!("layers.{l}.weight"), vec![k, h, h], bound, rng));
            tensors.push(NamedTensor::zeros(format!("layers.{l}.bias"), vec![h]));
        }
        tensors.push(NamedTensor::uniform("output.weight", vec![v, h], xavier(h, v), rng));
        tensors.push(NamedTensor::zeros("output.bias", vec![v]));
        Ok(ParameterSet { tensors })
    }

    /// Checks that `params` has the layout this config produces.
    pub fn check_params(&self, params: &ParameterSet) -> Result<()> {
        let (f, h, v, k) = (self.input_dim, self.hidden_dim, self.output_dim, self.kernel());
        let mut expect: Vec<(String, Vec<usize>)> =
            vec![("input.weight".into(), vec![h, f]), ("input.bias".into(), vec![h])];
        for l in 0..self.layers {
            expect.push((format!("layers.{l}.weight"), vec![k, h, h]));
            expect.push((format!("layers.{l}.bias"), vec![h]));
        }
        expect.push(("output.weight".into(), vec![v, h]));
        expect.push(("output.bias".into(), vec![v]));
        let ok = params.tensors.len() == expect.len()
            && params.tensors.iter().zip(&expect).all(|(t, (n, s))| &t.name == n && &t.shape == s && t.data.len() == s.iter().product::<usize>());
        if !ok {
            return Err(Error::invalid("parameter set does not match encoder config"));
        }
        if !params.is_finite() {
            return Err(Error::invalid("parameters contain non-finite values"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    /// Dropout and layer-drop masks are drawn from a generator seeded with
    /// this value.
    Train { seed: u64 },
}

#[derive(Clone, Debug)]
struct LayerRecord {
    /// Layer input.
    input: Matrix,
    /// `tanh` activations of the residual branch; empty when dropped.
    act: Matrix,
    /// Inverted dropout multipliers (0 or 1/(1-p)); `None` when dropout is off.
    dropout: Option<Vec<f64>>,
    /// Multiplier on the residual branch: 0 when dropped.
    branch_scale: f64,
}

/// Everything backward needs from one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    input: FeatureMatrix,
    h0: Matrix,
    layers: Vec<LayerRecord>,
    last: Matrix,
}

impl Tape {
    /// Whether each layer's residual branch was kept in this pass.
    pub fn kept_layers(&self) -> Vec<bool> {
        self.layers.iter().map(|l| l.branch_scale != 0.0).collect()
    }

    /// The dropout multipliers sampled for each layer.
    pub fn dropout_masks(&self) -> Vec<Option<&[f64]>> {
        self.layers.iter().map(|l| l.dropout.as_deref()).collect()
    }
}

fn weight(params: &ParameterSet, idx: usize) -> &[f64] {
    &params.tensors[idx].data
}

fn conv_forward(input: &Matrix, w: &[f64], b: &[f64], radius: usize) -> Matrix {
    let (frames, h) = (input.rows(), input.cols());
    let mut out = Matrix::zeros(frames, h);
    for t in 0..frames {
        let row = out.row_mut(t);
        row.copy_from_slice(b);
        for k in 0..2 * radius + 1 {
            let Some(src) = (t + k).checked_sub(radius).filter(|&s| s < frames) else { continue };
            let x = input.row(src);
            let wk = &w[k * h * h..(k + 1) * h * h];
            for (o, r) in row.iter_mut().enumerate() {
                *r += dot(&wk[o * h..(o + 1) * h], x);
            }
        }
    }
    out
}

/// Dot product with eight independent partial sums, so the compiler can
/// vectorize it. The summation order is fixed, so results stay deterministic.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

fn linear(input: &Matrix, w: &[f64], b: &[f64], out_dim: usize) -> Matrix {
    let in_dim = input.cols();
    let mut out = Matrix::zeros(input.rows(), out_dim);
    for t in 0..input.rows() {
        let x = input.row(t);
        for (o, r) in out.row_mut(t).iter_mut().enumerate() {
            *r = b[o] + dot(&w[o * in_dim..(o + 1) * in_dim], x);
        }
    }
    out
}

fn avg_pool(h: &Matrix, factor: usize) -> Matrix {
    if factor == 1 {
        return h.clone();
    }
    let frames = h.rows().div_ceil(factor);
    let mut out = Matrix::zeros(frames, h.cols());
    for t in 0..frames {
        let src = t * factor..((t + 1) * factor).min(h.rows());
        let n = src.len() as f64;
        for s in src {
            axpy(out.row_mut(t), 1.0 / n, h.row(s));
        }
    }
    out
}

/// Runs the encoder on a `T × input_dim` feature matrix.
pub fn forward(cfg: &EncoderConfig, params: &ParameterSet, x: &FeatureMatrix, mode: Mode) -> Result<(LogitLattice, Tape)> {
    if x.cols() != cfg.input_dim {
        return Err(Error::invalid(format!("feature dim {} does not match encoder input {}", x.cols(), cfg.input_dim)));
    }
    if x.rows() == 0 {
        return Err(Error::invalid("empty feature matrix"));
    }
    let h = cfg.hidden_dim;
    let mut rng = match mode {
        Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Mode::Eval => None,
    };

    let mut h0 = linear(x, weight(params, 0), weight(params, 1), h);
    h0.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
    let mut cur = avg_pool(&h0, cfg.downsample_factor);

    let mut layers = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let (wi, bi) = (2 + 2 * l, 3 + 2 * l);
        let branch_scale = match rng.as_mut() {
            Some(r) if cfg.layer_drop_prob > 0.0 => {
                if r.random::<f64>() < cfg.layer_drop_prob {
                    0.0
                } else {
                    1.0 / (1.0 - cfg.layer_drop_prob)
                }
            }
            _ => 1.0,
        };
        if branch_scale == 0.0 {
            layers.push(LayerRecord { input: cur.clone(), act: Matrix::zeros(0, 0), dropout: None, branch_scale });
            continue;
        }
        let mut act = conv_forward(&cur, weight(params, wi), weight(params, bi), cfg.context_radius);
        act.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        let dropout = match rng.as_mut() {
            Some(r) if cfg.dropout_prob > 0.0 => {
                let keep = 1.0 / (1.0 - cfg.dropout_prob);
                Some((0..act.as_slice().len()).map(|_| if r.random::<f64>() < cfg.dropout_prob { 0.0 } else { keep }).collect::<Vec<_>>())
            }
            _ => None,
        };
        let mut next = cur.clone();
        match &dropout {
            Some(m) => {
                for ((n, a), d) in next.as_mut_slice().iter_mut().zip(act.as_slice()).zip(m) {
                    *n += branch_scale * a * d;
                }
            }
            None => {
                for (n, a) in next.as_mut_slice().iter_mut().zip(act.as_slice()) {
                    *n += branch_scale * a;
                }
            }
        }
        layers.push(LayerRecord { input: cur, act, dropout, branch_scale });
        cur = next;
    }

    let n = params.tensors.len();
    let logits = linear(&cur, weight(params, n - 2), weight(params, n - 1), cfg.output_dim);
    let tape = Tape { input: x.clone(), h0, layers, last: cur };
    Ok((LogitLattice::new(logits)?, tape))
}

/// Gradient of the loss with respect to every parameter, given the loss
/// gradient with respect to the logits of the pass recorded in `tape`.
pub fn backward(cfg: &EncoderConfig, params: &ParameterSet, tape: &Tape, upstream: &Matrix) -> Result<ParameterSet> {
    let frames = tape.last.rows();
    if upstream.rows() != frames || upstream.cols() != cfg.output_dim {
        return Err(Error::invalid("upstream gradient shape does not match the recorded pass"));
    }
    let h = cfg.hidden_dim;
    let v = cfg.output_dim;
    let n = params.tensors.len();
    let mut grads = params.zeros_like();

    // output projection
    let w_out = weight(params, n - 2);
    let mut dh = Matrix::zeros(frames, h);
    for t in 0..frames {
        let g = upstream.row(t);
        let x = tape.last.row(t);
        {
            let gw = &mut grads.tensors[n - 2].data;
            for o in 0..v {
                axpy(&mut gw[o * h..(o + 1) * h], g[o], x);
            }
        }
        axpy(&mut grads.tensors[n - 1].data, 1.0, g);
        let d = dh.row_mut(t);
        for o in 0..v {
            axpy(d, g[o], &w_out[o * h..(o + 1) * h]);
        }
    }

    // residual layers, last to first
    let radius = cfg.context_radius;
    for (l, rec) in tape.layers.iter().enumerate().rev() {
        if rec.branch_scale == 0.0 {
            continue;
        }
        let (wi, bi) = (2 + 2 * l, 3 + 2 * l);
        // d(pre-activation) = dh * scale * dropout * (1 - a²)
        let mut dc = Matrix::zeros(frames, h);
        for (i, (d, (&g, &a))) in dc.as_mut_slice().iter_mut().zip(dh.as_slice().iter().zip(rec.act.as_slice())).enumerate() {
            let m = rec.dropout.as_ref().map_or(1.0, |m| m[i]);
            *d = g * rec.branch_scale * m * (1.0 - a * a);
        }
        let w = weight(params, wi);
        let mut dinput = dh.clone();
        for t in 0..frames {
            let g = dc.row(t);
            axpy(&mut grads.tensors[bi].data, 1.0, g);
            for k in 0..2 * radius + 1 {
                let Some(src) = (t + k).checked_sub(radius).filter(|&s| s < frames) else { continue };
                let x = rec.input.row(src);
                let wk = &w[k * h * h..(k + 1) * h * h];
                {
                    let gw = &mut grads.tensors[wi].data[k * h * h..(k + 1) * h * h];
                    for o in 0..h {
                        if g[o] != 0.0 {
                            axpy(&mut gw[o * h..(o + 1) * h], g[o], x);
                        }
                    }
                }
                let di = dinput.row_mut(src);
                for o in 0..h {
                    if g[o] != 0.0 {
                        axpy(di, g[o], &wk[o * h..(o + 1) * h]);
                    }
                }
            }
        }
        dh = dinput;
    }

    // un-pool, then input projection through tanh
    let factor = cfg.downsample_factor;
    let in_frames = tape.h0.rows();
    let f = cfg.input_dim;
    for s in 0..in_frames {
        let t = s / factor;
        let group = (((t + 1) * factor).min(in_frames) - t * factor) as f64;
        let x = tape.input.row(s);
        let h0 = tape.h0.row(s);
        let da: Vec<f64> = dh.row(t).iter().zip(h0).map(|(g, a)| g / group * (1.0 - a * a)).collect();
        axpy(&mut grads.tensors[1].data, 1.0, &da);
        let gw = &mut grads.tensors[0].data;
        for o in 0..h {
            axpy(&mut gw[o * f..(o + 1) * f], da[o], x);
        }
    }
    Ok(grads)
}
