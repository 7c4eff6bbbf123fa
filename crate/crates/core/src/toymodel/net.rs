//! One detector stage: a ReLU hidden layer feeding three linear heads
//! (two class logits, a regression vector and its log-variances).
//!
//! Parameters live in one flat vector laid out as
//! `w1 [hidden x input], b1, wc [2 x hidden], bc, wr [out x hidden], br,
//! wv [out x hidden], bv`.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl StageShape {
    pub fn w1(&self) -> Range<usize> {
        0..self.hidden * self.input
    }
    pub fn b1(&self) -> Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }
    pub fn wc(&self) -> Range<usize> {
        let s = self.b1().end;
        s..s + 2 * self.hidden
    }
    pub fn bc(&self) -> Range<usize> {
        let s = self.wc().end;
        s..s + 2
    }
    pub fn wr(&self) -> Range<usize> {
        let s = self.bc().end;
        s..s + self.output * self.hidden
    }
    pub fn br(&self) -> Range<usize> {
        let s = self.wr().end;
        s..s + self.output
    }
    pub fn wv(&self) -> Range<usize> {
        let s = self.br().end;
        s..s + self.output * self.hidden
    }
    pub fn bv(&self) -> Range<usize> {
        let s = self.wv().end;
        s..s + self.output
    }

    pub fn num_params(&self) -> usize {
        self.bv().end
    }

    /// Parameters of the log-variance head.
    pub fn log_var_params(&self) -> Range<usize> {
        self.wv().start..self.bv().end
    }
}

/// Key for the counter-based dropout mask of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutKey {
    pub rate: f64,
    pub seed: u64,
    pub step: u64,
    pub layer: u64,
    pub sample: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl DropoutKey {
    /// Uniform draw in `[0, 1)` for one hidden unit.
    pub fn uniform(&self, unit: usize) -> f64 {
        let mut h = splitmix(self.seed);
        for v in [self.step, self.layer, self.sample, unit as u64] {
            h = splitmix(h ^ v);
        }
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Inverted-dropout multiplier: 0 for dropped units, `1/(1-rate)` otherwise.
    pub fn scale(&self, unit: usize) -> f64 {
        if self.uniform(unit) < self.rate {
            0.0
        } else {
            1.0 / (1.0 - self.rate)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub logits: [f64; 2],
    pub reg: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    x: Vec<f64>,
    pre: Vec<f64>,
    mask: Vec<f64>,
    h: Vec<f64>,
}

impl Trace {
    /// Smallest hidden pre-activation magnitude, i.e. the distance to the
    /// nearest ReLU kink.
    pub fn kink_margin(&self) -> f64 {
        self.pre.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub shape: StageShape,
    /// Per-feature standardization applied before the hidden layer.
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
    /// Regression outputs are trained against `target / target_scale`.
    pub target_scale: Vec<f64>,
    pub params: Vec<f64>,
}

impl Stage {
    /// All-zero parameters with identity standardization.
    pub fn zeros(shape: StageShape) -> Self {
        Stage {
            shape,
            feature_mean: vec![0.0; shape.input],
            feature_scale: vec![1.0; shape.input],
            target_scale: vec![1.0; shape.output],
            params: vec![0.0; shape.num_params()],
        }
    }

    /// He-initialized hidden layer, small random class and regression heads,
    /// zero log-variance head.
    pub fn init(shape: StageShape, seed: u64) -> Self {
        let mut st = Stage::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = Normal::new(0.0, (2.0 / shape.input as f64).sqrt()).unwrap();
        for p in &mut st.params[shape.w1()] {
            *p = hidden.sample(&mut rng);
        }
        let head = Normal::new(0.0, 0.1 / (shape.hidden as f64).sqrt()).unwrap();
        for r in [shape.wc(), shape.wr()] {
            for p in &mut st.params[r] {
                *p = head.sample(&mut rng);
            }
        }
        st
    }

    /// Sets the standardization from a set of feature vectors. Constant
    /// features map to zero.
    pub fn fit_standardization<'a>(&mut self, features: impl Iterator<Item = &'a [f64]>) {
        let d = self.shape.input;
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for f in features {
            n += 1;
            for i in 0..d {
                sum[i] += f[i];
                sq[i] += f[i] * f[i];
            }
        }
        if n == 0 {
            return;
        }
        for i in 0..d {
            let mean = sum[i] / n as f64;
            let var = (sq[i] / n as f64 - mean * mean).max(0.0);
            self.feature_mean[i] = mean;
            self.feature_scale[i] = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
        }
    }

    /// Sets the per-output target scale to the standard deviation of the
    /// given targets (1 for constant outputs).
    pub fn fit_target_scale<'a>(&mut self, targets: impl Iterator<Item = &'a [f64]>) {
        let d = self.shape.output;
        let mut n = 0usize;
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for t in targets {
            n += 1;
            for i in 0..d {
                sum[i] += t[i];
                sq[i] += t[i] * t[i];
            }
        }
        if n < 2 {
            return;
        }
        for i in 0..d {
            let mean = sum[i] / n as f64;
            let var = (sq[i] / n as f64 - mean * mean).max(0.0);
            self.target_scale[i] = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
    }

    /// Maps raw outputs to target units: regression times the scale and
    /// log-variances shifted by `2 ln scale`.
    pub fn to_target_units(&self, out: &mut StageOutput) {
        for i in 0..self.shape.output {
            let k = self.target_scale[i];
            out.reg[i] *= k;
            out.log_var[i] += 2.0 * k.ln();
        }
    }

    /// Evaluates the stage. Dropout is applied to the hidden layer only when a
    /// key is given.
    pub fn forward(&self, features: &[f64], dropout: Option<&DropoutKey>) -> Result<(StageOutput, Trace)> {
        let s = self.shape;
        if features.len() != s.input {
            return Err(Error::Shape(format!(
                "stage expects {} features, got {}",
                s.input,
                features.len()
            )));
        }
        let p = &self.params;
        let x: Vec<f64> = (0..s.input)
            .map(|i| (features[i] - self.feature_mean[i]) * self.feature_scale[i])
            .collect();
        let w1 = &p[s.w1()];
        let b1 = &p[s.b1()];
        let mut pre = vec![0.0; s.hidden];
        let mut mask = vec![1.0; s.hidden];
        let mut h = vec![0.0; s.hidden];
        for j in 0..s.hidden {
            let row = &w1[j * s.input..(j + 1) * s.input];
            pre[j] = b1[j] + row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>();
            if let Some(k) = dropout {
                mask[j] = k.scale(j);
            }
            h[j] = pre[j].max(0.0) * mask[j];
        }
        let head = |w: &[f64], b: &[f64], n: usize| -> Vec<f64> {
            (0..n)
                .map(|o| b[o] + w[o * s.hidden..(o + 1) * s.hidden].iter().zip(&h).map(|(a, v)| a * v).sum::<f64>())
                .collect()
        };
        let logits = head(&p[s.wc()], &p[s.bc()], 2);
        let reg = head(&p[s.wr()], &p[s.br()], s.output);
        let log_var = head(&p[s.wv()], &p[s.bv()], s.output);
        Ok((
            StageOutput {
                logits: [logits[0], logits[1]],
                reg,
                log_var,
            },
            Trace { x, pre, mask, h },
        ))
    }

    /// Accumulates parameter gradients into `grad` given output gradients.
    /// Empty `d_reg` / `d_log_var` slices mean zero.
    pub fn backward(&self, trace: &Trace, d_logits: &[f64], d_reg: &[f64], d_log_var: &[f64], grad: &mut [f64]) {
        let s = self.shape;
        let p = &self.params;
        let mut dh = vec![0.0; s.hidden];
        let mut head = |wr: Range<usize>, br: Range<usize>, d: &[f64], grad: &mut [f64]| {
            for (o, &g) in d.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad[br.start + o] += g;
                let w0 = wr.start + o * s.hidden;
                for j in 0..s.hidden {
                    grad[w0 + j] += g * trace.h[j];
                    dh[j] += g * p[w0 + j];
                }
            }
        };
        head(s.wc(), s.bc(), d_logits, grad);
        head(s.wr(), s.br(), d_reg, grad);
        head(s.wv(), s.bv(), d_log_var, grad);
        let (w1, b1) = (s.w1().start, s.b1().start);
        for j in 0..s.hidden {
            if trace.pre[j] <= 0.0 || trace.mask[j] == 0.0 {
                continue;
            }
            let dz = dh[j] * trace.mask[j];
            grad[b1 + j] += dz;
            let row = w1 + j * s.input;
            for (i, &xi) in trace.x.iter().enumerate() {
                grad[row + i] += dz * xi;
            }
        }
    }
}
