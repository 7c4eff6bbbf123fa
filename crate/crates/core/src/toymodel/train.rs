//! Two-phase Adam training of both stages.
//!
//! Phase 1 optimizes the baseline loss with the log-variance heads frozen at
//! zero. Phase 2 (only when attenuation is enabled) unfreezes them and
//! optimizes the attenuated loss. The learning rate follows the staircase
//! `lr * decay_factor^floor(step / decay_every)` across both phases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Sample, StagePool};
use super::model::ModelParams;
use super::net::{DropoutKey, Stage, Trace};
use crate::attnloss::{multi_loss, ClsSample, Likelihood, LossBreakdown, LossOptions, MultiLossInput, RegSample};
use crate::codec::LOC_DIM;
use crate::error::{Error, Result};
use crate::par::{Exec, REDUCE_CHUNK};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub dropout: f64,
    pub weight_decay: f64,
    pub phase1_steps: usize,
    pub phase2_steps: usize,
    /// Samples per stage per step, split evenly between positives and negatives.
    pub batch_rpn: usize,
    pub batch_frh: usize,
    pub hidden_rpn: usize,
    pub hidden_frh: usize,
    pub likelihood: Likelihood,
    /// When false both phases use the baseline loss.
    pub attenuation: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            decay_factor: 0.8,
            decay_every: 2000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            dropout: 0.5,
            weight_decay: 5e-4,
            phase1_steps: 2000,
            phase2_steps: 6000,
            batch_rpn: 64,
            batch_frh: 64,
            hidden_rpn: 64,
            hidden_frh: 128,
            likelihood: Likelihood::Gaussian,
            attenuation: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(None, format!("train: {m}")));
        if !(self.learning_rate > 0.0 && self.decay_factor > 0.0 && self.epsilon > 0.0) {
            return bad("learning_rate, decay_factor and epsilon must be positive");
        }
        if self.decay_every == 0 {
            return bad("decay_every must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be nonnegative");
        }
        if self.batch_rpn == 0 || self.batch_frh == 0 || self.hidden_rpn == 0 || self.hidden_frh == 0 {
            return bad("batch sizes and hidden widths must be positive");
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.phase1_steps + self.phase2_steps
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.learning_rate * self.decay_factor.powi((step / self.decay_every) as i32)
    }

    /// Loss options for a given step.
    pub fn loss_at(&self, step: usize) -> LossOptions {
        LossOptions {
            likelihood: self.likelihood,
            attenuation: self.attenuation && step >= self.phase1_steps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

pub fn format_log(rows: &[LogRow]) -> String {
    let mut s = String::from("step,lr,rpn_reg,rpn_cls,frh_loc,frh_cls,frh_orient,total\n");
    for r in rows {
        let l = &r.loss;
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step, r.lr, l.rpn_reg, l.rpn_cls, l.frh_loc, l.frh_cls, l.frh_orient, l.total
        ));
    }
    s
}

/// Samples drawn for one optimization step.
#[derive(Debug, Clone, Default)]
pub struct Batch<'a> {
    pub rpn: Vec<&'a Sample>,
    pub frh: Vec<&'a Sample>,
}

/// Dropout settings for a training-mode evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DropoutPlan {
    pub rate: f64,
    pub seed: u64,
    pub step: u64,
}

/// Parameter gradients for both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub rpn: Vec<f64>,
    pub frh: Vec<f64>,
}

fn stage_forward(
    stage: &Stage,
    samples: &[&Sample],
    layer: u64,
    dropout: Option<DropoutPlan>,
    exec: Exec,
) -> Result<Vec<(super::net::StageOutput, Trace)>> {
    exec.map_range(samples.len(), |i| {
        let key = dropout.map(|d| DropoutKey {
            rate: d.rate,
            seed: d.seed,
            step: d.step,
            layer,
            sample: i as u64,
        });
        stage.forward(&samples[i].features, key.as_ref())
    })
    .into_iter()
    .collect()
}

/// Sums per-sample gradients in fixed chunks so the result does not depend
/// on the execution policy.
fn stage_backward<F>(stage: &Stage, traces: &[Trace], out_grads: F, exec: Exec) -> Vec<f64>
where
    F: Fn(usize) -> ([f64; 2], Vec<f64>, Vec<f64>) + Sync + Send,
{
    let n = stage.shape.num_params();
    let chunks = traces.len().div_ceil(REDUCE_CHUNK);
    let partial = exec.map_range(chunks, |c| {
        let mut g = vec![0.0; n];
        for i in c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(traces.len()) {
            let (dl, dr, dv) = out_grads(i);
            stage.backward(&traces[i], &dl, &dr, &dv, &mut g);
        }
        g
    });
    let mut total = vec![0.0; n];
    for g in partial {
        for (t, v) in total.iter_mut().zip(g) {
            *t += v;
        }
    }
    total
}

/// Multi-loss of a batch and its gradient with respect to all parameters.
pub fn batch_loss(
    params: &ModelParams,
    batch: &Batch<'_>,
    opts: LossOptions,
    dropout: Option<DropoutPlan>,
    exec: Exec,
) -> Result<(LossBreakdown, ModelGrad)> {
    let rpn_out = stage_forward(&params.rpn, &batch.rpn, 0, dropout, exec)?;
    let frh_out = stage_forward(&params.frh, &batch.frh, 1, dropout, exec)?;

    let pos = |samples: &[&Sample]| -> Vec<usize> { (0..samples.len()).filter(|&i| samples[i].positive).collect() };
    let rpn_pos = pos(&batch.rpn);
    let frh_pos = pos(&batch.frh);
    let scaled = |stage: &Stage, samples: &[&Sample], idx: &[usize]| -> Vec<Vec<f64>> {
        idx.iter()
            .map(|&i| {
                samples[i]
                    .target
                    .iter()
                    .zip(&stage.target_scale)
                    .map(|(t, k)| t / k)
                    .collect()
            })
            .collect()
    };
    let rpn_targets = scaled(&params.rpn, &batch.rpn, &rpn_pos);
    let frh_targets = scaled(&params.frh, &batch.frh, &frh_pos);

    let mut input = MultiLossInput::default();
    for (k, &i) in rpn_pos.iter().enumerate() {
        let o = &rpn_out[i].0;
        input.rpn_reg.push(RegSample {
            pred: &o.reg,
            target: &rpn_targets[k],
            log_var: &o.log_var,
        });
    }
    for (i, (o, _)) in rpn_out.iter().enumerate() {
        input.rpn_cls.push(ClsSample {
            logits: &o.logits,
            label: batch.rpn[i].positive as usize,
        });
    }
    for (k, &i) in frh_pos.iter().enumerate() {
        let o = &frh_out[i].0;
        let t = &frh_targets[k];
        input.frh_loc.push(RegSample {
            pred: &o.reg[..LOC_DIM],
            target: &t[..LOC_DIM],
            log_var: &o.log_var[..LOC_DIM],
        });
        input.frh_orient.push(RegSample {
            pred: &o.reg[LOC_DIM..],
            target: &t[LOC_DIM..],
            log_var: &o.log_var[LOC_DIM..],
        });
    }
    for (i, (o, _)) in frh_out.iter().enumerate() {
        input.frh_cls.push(ClsSample {
            logits: &o.logits,
            label: batch.frh[i].positive as usize,
        });
    }
    let (loss, g) = multi_loss(&input, opts)?;

    // map positive-only regression grads back to batch positions
    let mut rpn_slot = vec![None; batch.rpn.len()];
    for (k, &i) in rpn_pos.iter().enumerate() {
        rpn_slot[i] = Some(k);
    }
    let mut frh_slot = vec![None; batch.frh.len()];
    for (k, &i) in frh_pos.iter().enumerate() {
        frh_slot[i] = Some(k);
    }
    let rpn_traces: Vec<Trace> = rpn_out.into_iter().map(|(_, t)| t).collect();
    let frh_traces: Vec<Trace> = frh_out.into_iter().map(|(_, t)| t).collect();

    let rpn = stage_backward(
        &params.rpn,
        &rpn_traces,
        |i| {
            let dl = [g.rpn_cls[i][0], g.rpn_cls[i][1]];
            match rpn_slot[i] {
                Some(k) => (dl, g.rpn_reg[k].d_pred.clone(), g.rpn_reg[k].d_log_var.clone()),
                None => (dl, Vec::new(), Vec::new()),
            }
        },
        exec,
    );
    let frh = stage_backward(
        &params.frh,
        &frh_traces,
        |i| {
            let dl = [g.frh_cls[i][0], g.frh_cls[i][1]];
            match frh_slot[i] {
                Some(k) => {
                    let mut dr = g.frh_loc[k].d_pred.clone();
                    dr.extend_from_slice(&g.frh_orient[k].d_pred);
                    let mut dv = g.frh_loc[k].d_log_var.clone();
                    dv.extend_from_slice(&g.frh_orient[k].d_log_var);
                    (dl, dr, dv)
                }
                None => (dl, Vec::new(), Vec::new()),
            }
        },
        exec,
    );
    Ok((loss, ModelGrad { rpn, frh }))
}

/// Adam state for one stage, with a separate step counter for the
/// log-variance head so its bias correction starts when it is unfrozen.
#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t_main: i32,
    t_log_var: i32,
}

impl AdamState {
    fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t_main: 0,
            t_log_var: 0,
        }
    }
}

/// One Adam update with L2 weight decay folded into the gradient. The
/// log-variance head is left untouched when `freeze_log_var` is set.
fn adam_update(stage: &mut Stage, state: &mut AdamState, grad: &[f64], lr: f64, cfg: &TrainConfig, freeze_log_var: bool) {
    let lv = stage.shape.log_var_params();
    state.t_main += 1;
    if !freeze_log_var {
        state.t_log_var += 1;
    }
    for i in 0..stage.params.len() {
        let in_lv = lv.contains(&i);
        if in_lv && freeze_log_var {
            continue;
        }
        let t = if in_lv { state.t_log_var } else { state.t_main };
        let g = grad[i] + cfg.weight_decay * stage.params[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / (1.0 - cfg.beta1.powi(t));
        let v_hat = state.v[i] / (1.0 - cfg.beta2.powi(t));
        stage.params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Optimizer state for both stages.
#[derive(Debug, Clone)]
pub struct Optimizer {
    rpn: AdamState,
    frh: AdamState,
}

impl Optimizer {
    pub fn new(params: &ModelParams) -> Self {
        Optimizer {
            rpn: AdamState::new(params.rpn.params.len()),
            frh: AdamState::new(params.frh.params.len()),
        }
    }

    /// Applies one step with the given gradient.
    pub fn apply(&mut self, params: &mut ModelParams, grad: &ModelGrad, lr: f64, cfg: &TrainConfig, freeze_log_var: bool) {
        adam_update(&mut params.rpn, &mut self.rpn, &grad.rpn, lr, cfg, freeze_log_var);
        adam_update(&mut params.frh, &mut self.frh, &grad.frh, lr, cfg, freeze_log_var);
    }
}

fn draw<'a, R: Rng>(pool: &'a StagePool, n: usize, rng: &mut R, out: &mut Vec<&'a Sample>) {
    let n_pos = if pool.positives.is_empty() { 0 } else { n / 2 };
    let n_neg = if pool.negatives.is_empty() { 0 } else { n - n_pos };
    for _ in 0..n_pos {
        out.push(&pool.positives[rng.gen_range(0..pool.positives.len())]);
    }
    for _ in 0..n_neg {
        out.push(&pool.negatives[rng.gen_range(0..pool.negatives.len())]);
    }
}

/// Balanced minibatch for one step.
pub fn draw_batch<'a, R: Rng>(data: &'a Dataset, cfg: &TrainConfig, rng: &mut R) -> Batch<'a> {
    let mut b = Batch::default();
    draw(&data.rpn, cfg.batch_rpn, rng, &mut b.rpn);
    draw(&data.frh, cfg.batch_frh, rng, &mut b.frh);
    b
}

/// Trains from `init`, returning the final parameters and the per-step log.
pub fn train(init: ModelParams, data: &Dataset, cfg: &TrainConfig, exec: Exec) -> Result<(ModelParams, Vec<LogRow>)> {
    cfg.validate()?;
    if data.rpn.is_empty() || data.frh.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            got: data.rpn.len().min(data.frh.len()),
        });
    }
    let mut params = init;
    let mut opt = Optimizer::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.total_steps());
    for step in 0..cfg.total_steps() {
        let batch = draw_batch(data, cfg, &mut rng);
        let opts = cfg.loss_at(step);
        let dropout = (cfg.dropout > 0.0).then_some(DropoutPlan {
            rate: cfg.dropout,
            seed: cfg.seed,
            step: step as u64,
        });
        let (loss, grad) = batch_loss(&params, &batch, opts, dropout, exec)?;
        if !loss.total.is_finite() {
            return Err(Error::Divergence {
                step,
                value: loss.total,
            });
        }
        let lr = cfg.lr_at(step);
        opt.apply(&mut params, &grad, lr, cfg, !opts.attenuation);
        log.push(LogRow { step, lr, loss });
    }
    Ok((params, log))
}
