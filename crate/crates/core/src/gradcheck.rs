//! Central finite-difference checks of every analytic gradient: the base
//! losses, the attenuated term, the multi-loss, and the full two-stage model.
//!
//! The error of an analytic partial `a` against its numeric estimate `n` is
//! `|a - n| / max(|a|, |n|, 1e-4)`. Random draws keep every input at least
//! `1e-2` away from the kinks of smooth-L1 and ReLU so the central difference
//! is valid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attnloss::{
    attenuated_term, cross_entropy, multi_loss, smooth_l1, ClsSample, Likelihood, LossOptions, MultiLossInput,
    RegSample,
};
use crate::par::Exec;
use crate::toymodel::dataset::Sample;
use crate::toymodel::model::{ModelParams, FRH_OUT};
use crate::toymodel::net::{DropoutKey, Stage, StageShape};
use crate::toymodel::train::{batch_loss, Batch, DropoutPlan};

const STEP: f64 = 1e-4;
const FLOOR: f64 = 1e-4;
const KINK_MARGIN: f64 = 1e-2;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub seed: u64,
    pub checked: usize,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn passed(&self, rtol: f64) -> bool {
        self.max_rel_err <= rtol
    }
}

#[derive(Default)]
struct Tally {
    checked: usize,
    worst: f64,
}

impl Tally {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = rel_err(analytic, numeric);
        if e > self.worst || e.is_nan() {
            self.worst = if e.is_nan() { f64::INFINITY } else { e };
        }
    }

    fn finish(self, name: &'static str, seed: u64) -> CheckResult {
        CheckResult {
            name,
            seed,
            checked: self.checked,
            max_rel_err: self.worst,
        }
    }
}

/// Fourth-order central difference. The wider stencil keeps rounding noise
/// small when the loss itself is large (strongly attenuated terms).
fn central<F: FnMut(f64) -> f64>(x: f64, mut f: F) -> f64 {
    let h = STEP;
    (8.0 * (f(x + h) - f(x - h)) - (f(x + 2.0 * h) - f(x - 2.0 * h))) / (12.0 * h)
}

/// Residual drawn away from the smooth-L1 kink at `|r| = 1`.
fn residual<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let r: f64 = rng.gen_range(-3.0..3.0);
        if (r.abs() - 1.0).abs() > KINK_MARGIN * 10.0 {
            return r;
        }
    }
}

fn check_smooth_l1(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for _ in 0..50 {
        let r = residual(&mut rng);
        t.add(smooth_l1(r).1, central(r, |x| smooth_l1(x).0));
    }
    t.finish("smooth_l1", seed)
}

fn check_cross_entropy(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for _ in 0..20 {
        let k = rng.gen_range(2..6);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let label = rng.gen_range(0..k);
        let (_, g) = cross_entropy(&logits, label);
        for i in 0..k {
            let n = central(logits[i], |x| {
                let mut z = logits.clone();
                z[i] = x;
                cross_entropy(&z, label).0
            });
            t.add(g[i], n);
        }
    }
    t.finish("cross_entropy", seed)
}

fn check_attenuated_term(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    for lik in [Likelihood::Gaussian, Likelihood::Laplace] {
        for _ in 0..20 {
            let l: f64 = rng.gen_range(0.01..5.0);
            let s: f64 = rng.gen_range(-3.0..3.0);
            let a = attenuated_term(l, s, lik);
            t.add(a.d_log_var, central(s, |x| attenuated_term(l, x, lik).value));
            t.add(a.d_residual, central(l, |x| attenuated_term(x, s, lik).value));
        }
    }
    t.finish("attenuated_term", seed)
}

#[derive(Clone)]
struct RegData {
    pred: Vec<f64>,
    target: Vec<f64>,
    log_var: Vec<f64>,
}

fn reg_group<R: Rng>(rng: &mut R, n: usize, dim: usize) -> Vec<RegData> {
    (0..n)
        .map(|_| {
            let target: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            RegData {
                pred: target.iter().map(|t| t + residual(rng)).collect(),
                target,
                log_var: (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            }
        })
        .collect()
}

fn cls_group<R: Rng>(rng: &mut R, n: usize) -> Vec<(Vec<f64>, usize)> {
    (0..n)
        .map(|_| (vec![rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)], rng.gen_range(0..2)))
        .collect()
}

/// Flat view of every input that the multi-loss differentiates.
#[derive(Clone)]
struct LossInputs {
    reg: [Vec<RegData>; 3],
    cls: [Vec<(Vec<f64>, usize)>; 2],
}

impl LossInputs {
    fn eval(&self, opts: LossOptions) -> (f64, crate::attnloss::MultiLossGrad) {
        fn reg(g: &[RegData]) -> Vec<RegSample<'_>> {
            g.iter()
                .map(|r| RegSample {
                    pred: &r.pred,
                    target: &r.target,
                    log_var: &r.log_var,
                })
                .collect()
        }
        fn cls(g: &[(Vec<f64>, usize)]) -> Vec<ClsSample<'_>> {
            g.iter()
                .map(|(z, l)| ClsSample {
                    logits: z,
                    label: *l,
                })
                .collect()
        }
        let input = MultiLossInput {
            rpn_reg: reg(&self.reg[0]),
            rpn_cls: cls(&self.cls[0]),
            frh_loc: reg(&self.reg[1]),
            frh_cls: cls(&self.cls[1]),
            frh_orient: reg(&self.reg[2]),
        };
        let (b, g) = multi_loss(&input, opts).expect("well-formed gradcheck input");
        (b.total, g)
    }
}

fn check_multi_loss(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tally::default();
    let n: Vec<usize> = (0..5).map(|_| rng.gen_range(1..5)).collect();
    let base = LossInputs {
        reg: [
            reg_group(&mut rng, n[0], 6),
            reg_group(&mut rng, n[1], 10),
            reg_group(&mut rng, n[2], 2),
        ],
        cls: [cls_group(&mut rng, n[3]), cls_group(&mut rng, n[4])],
    };
    for likelihood in [Likelihood::Gaussian, Likelihood::Laplace] {
        for attenuation in [false, true] {
            let opts = LossOptions { likelihood, attenuation };
            let (_, g) = base.eval(opts);
            let greg = [&g.rpn_reg, &g.frh_loc, &g.frh_orient];
            for k in 0..3 {
                for (i, r) in base.reg[k].iter().enumerate() {
                    for c in 0..r.pred.len() {
                        let n = central(r.pred[c], |x| {
                            let mut b = base.clone();
                            b.reg[k][i].pred[c] = x;
                            b.eval(opts).0
                        });
                        t.add(greg[k][i].d_pred[c], n);
                        let n = central(r.log_var[c], |x| {
                            let mut b = base.clone();
                            b.reg[k][i].log_var[c] = x;
                            b.eval(opts).0
                        });
                        t.add(greg[k][i].d_log_var[c], n);
                    }
                }
            }
            let gcls = [&g.rpn_cls, &g.frh_cls];
            for k in 0..2 {
                for (i, (z, _)) in base.cls[k].iter().enumerate() {
                    for c in 0..z.len() {
                        let n = central(z[c], |x| {
                            let mut b = base.clone();
                            b.cls[k][i].0[c] = x;
                            b.eval(opts).0
                        });
                        t.add(gcls[k][i][c], n);
                    }
                }
            }
        }
    }
    t.finish("multi_loss", seed)
}

fn random_stage<R: Rng>(rng: &mut R, shape: StageShape) -> Stage {
    let mut st = Stage::zeros(shape);
    for p in &mut st.params {
        *p = rng.gen_range(-0.8..0.8);
    }
    for i in 0..shape.input {
        st.feature_mean[i] = rng.gen_range(-0.5..0.5);
        st.feature_scale[i] = rng.gen_range(0.5..2.0);
    }
    st
}

fn random_samples<R: Rng>(rng: &mut R, n: usize, input: usize, output: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let positive = i % 2 == 0;
            Sample {
                features: (0..input).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                positive,
                target: if positive {
                    (0..output).map(|_| rng.gen_range(-1.0..1.0)).collect()
                } else {
                    Vec::new()
                },
            }
        })
        .collect()
}

/// True when no hidden unit and no regression residual sits near a kink.
/// Probes are `(stage, sample, layer, index in batch)`.
fn away_from_kinks(probes: &[(&Stage, &Sample, u64, u64)], dropout: DropoutPlan) -> bool {
    probes.iter().all(|&(stage, s, layer, sample)| {
        let key = DropoutKey {
            rate: dropout.rate,
            seed: dropout.seed,
            step: dropout.step,
            layer,
            sample,
        };
        let (o, tr) = stage.forward(&s.features, Some(&key)).unwrap();
        let residual_ok = !s.positive
            || o.reg
                .iter()
                .zip(&s.target)
                .all(|(p, t)| ((p - t).abs() - 1.0).abs() >= KINK_MARGIN);
        tr.kink_margin() >= KINK_MARGIN && residual_ok
    })
}

fn check_model(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rpn_shape = StageShape {
        input: 7,
        hidden: 6,
        output: 6,
    };
    let frh_shape = StageShape {
        input: 9,
        hidden: 7,
        output: FRH_OUT,
    };
    let dropout = DropoutPlan {
        rate: 0.3,
        seed,
        step: 5,
    };
    let (params, rpn_samples, frh_samples) = loop {
        let params = ModelParams {
            anchor_dims: vec![[4.0, 1.7, 1.5]],
            rpn: random_stage(&mut rng, rpn_shape),
            frh: random_stage(&mut rng, frh_shape),
        };
        let rpn_samples = random_samples(&mut rng, 4, rpn_shape.input, rpn_shape.output);
        let frh_samples = random_samples(&mut rng, 4, frh_shape.input, frh_shape.output);
        let probes: Vec<_> = (rpn_samples.iter().enumerate().map(|(i, s)| (&params.rpn, s, 0, i as u64)))
            .chain(frh_samples.iter().enumerate().map(|(i, s)| (&params.frh, s, 1, i as u64)))
            .collect();
        if away_from_kinks(&probes, dropout) {
            break (params, rpn_samples, frh_samples);
        }
    };
    let batch = Batch {
        rpn: rpn_samples.iter().collect(),
        frh: frh_samples.iter().collect(),
    };
    let mut t = Tally::default();
    for attenuation in [false, true] {
        let opts = LossOptions {
            likelihood: Likelihood::Gaussian,
            attenuation,
        };
        let eval = |p: &ModelParams| batch_loss(p, &batch, opts, Some(dropout), Exec::Sequential).unwrap();
        let (_, g) = eval(&params);
        for stage in 0..2 {
            let n_params = if stage == 0 { params.rpn.params.len() } else { params.frh.params.len() };
            for i in 0..n_params {
                let x = if stage == 0 { params.rpn.params[i] } else { params.frh.params[i] };
                let n = central(x, |v| {
                    let mut p = params.clone();
                    if stage == 0 {
                        p.rpn.params[i] = v;
                    } else {
                        p.frh.params[i] = v;
                    }
                    eval(&p).0.total
                });
                let a = if stage == 0 { g.rpn[i] } else { g.frh[i] };
                t.add(a, n);
            }
        }
    }
    t.finish("two_stage_model", seed)
}

/// Runs every check over seeds `0..seeds`.
pub fn run_gradcheck(seeds: u64) -> Vec<CheckResult> {
    let checks: [fn(u64) -> CheckResult; 5] = [
        check_smooth_l1,
        check_cross_entropy,
        check_attenuated_term,
        check_multi_loss,
        check_model,
    ];
    let mut out = Vec::new();
    for check in checks {
        for seed in 0..seeds {
            out.push(check(seed));
        }
    }
    out
}
