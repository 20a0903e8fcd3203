//! Dual-mode training: per-batch branch assignment between the denoising
//! (velocity MSE) and decoding (token cross-entropy) objectives on the
//! shared-weight network, with the self-conditioning double pass, the guided
//! regression target, AdamW, warmup, and an EMA shadow for evaluation.

use crate::config::{FlowConfig, PredTarget, RunConfig};
use crate::corpus::{EmbeddingProvider, MarkovSource, Seq2SeqTask, TokenSeq};
use crate::error::{Error, Result};
use crate::flow;
use crate::net::{net_forward, unembed, ForwardInput, Mode, NetParams, ParamNodes};
use crate::numeric::tape::{NodeId, Tape};
use crate::numeric::{Array, Rng};
use crate::Real;

type Arr = Array<Real>;

// Substream domains of the training seed.
const DOMAIN_INIT: u64 = 2;
const DOMAIN_STEP: u64 = 3;
const DOMAIN_CORPUS: u64 = 11;
const DOMAIN_STATS: u64 = 12;

/// Runtime corpus: the generating process, optional seq2seq task, and the
/// frozen embedding provider.
pub struct CorpusBundle {
    pub source: MarkovSource,
    pub task: Option<Seq2SeqTask>,
    pub provider: EmbeddingProvider<Real>,
}

impl CorpusBundle {
    /// Deterministic build from the corpus section of a run config.
    pub fn build(run: &RunConfig) -> Result<Self> {
        let c = &run.corpus;
        let base = Rng::new(c.seed);
        let mut corpus_rng = base.substream(DOMAIN_CORPUS, 0);
        let (source, task) = match c.kind.task_kind() {
            None => {
                let src = MarkovSource::dirichlet(c.vocab_size, c.order, c.dirichlet_alpha, &mut corpus_rng);
                (src, None)
            }
            Some(kind) => {
                // Conditions are uniform tokens; the uniform chain is the
                // matching stats source for the embedding normalization.
                let src = MarkovSource::uniform(c.vocab_size, 1);
                let task = Seq2SeqTask::new(
                    kind,
                    crate::corpus::Vocab::new(c.vocab_size),
                    c.cond_len,
                    c.seq_len - c.cond_len,
                );
                (src, Some(task))
            }
        };
        let mut stats_rng = base.substream(DOMAIN_STATS, 0);
        let provider = EmbeddingProvider::build(
            &source,
            run.model.d_emb,
            run.model.d_bottleneck,
            c.stats_tokens,
            &mut stats_rng,
        );
        Ok(CorpusBundle {
            source,
            task,
            provider,
        })
    }

    /// Rebuild with checkpointed provider arrays instead of re-estimating.
    pub fn with_provider(run: &RunConfig, provider: EmbeddingProvider<Real>) -> Result<Self> {
        let mut bundle = Self::build(run)?;
        bundle.provider = provider;
        Ok(bundle)
    }

    /// Draw one (condition, target) token pair; condition is `None` for
    /// unconditional corpora.
    pub fn draw_pair(&self, target_len: usize, rng: &mut Rng) -> (Option<TokenSeq>, TokenSeq) {
        match &self.task {
            None => (None, self.source.sample(target_len, rng)),
            Some(task) => {
                let (c, t) = task.sample_pair(rng);
                (Some(c), t)
            }
        }
    }
}

/// ω ~ lo + (hi - lo)·u^k: the small-value-biased power draw.
pub fn sample_cfg_scale(lo: Real, hi: Real, power: Real, rng: &mut Rng) -> Real {
    let u: Real = rng.uniform();
    lo + (hi - lo) * u.powf(power)
}

/// Everything random about one denoise-branch example, drawn up front so the
/// loss is a deterministic function of the parameters.
#[derive(Clone, Debug)]
pub struct DenoiseExample {
    pub x: Arr,
    pub cond: Option<Arr>,
    pub t: Real,
    pub omega: Real,
    pub eps: Arr,
    pub self_cond_on: bool,
}

#[derive(Clone, Debug)]
pub struct DecodeExample {
    pub x: Arr,
    pub cond: Option<Arr>,
    pub tokens: Vec<usize>,
    pub p: Vec<Real>,
    pub omega: Real,
    pub eps: Arr,
}

/// Convert the network's raw output into (velocity, clean-embedding) nodes
/// according to the configured prediction target.
fn prediction_to_v(
    tape: &mut Tape<Real>,
    out: NodeId,
    z: &Arr,
    t: Real,
    flow_cfg: &FlowConfig,
) -> Result<(NodeId, NodeId)> {
    let z_node = tape.constant(z.clone());
    match flow_cfg.pred_target {
        PredTarget::X => {
            if t > 1.0 - 1e-6 {
                return Err(Error::NearSingularTime { t });
            }
            let diff = tape.sub(out, z_node)?;
            let v = tape.scale(diff, 1.0 / (1.0 - t));
            Ok((v, out))
        }
        PredTarget::V => {
            let scaled = tape.scale(out, 1.0 - t);
            let x_hat = tape.add(z_node, scaled)?;
            Ok((out, x_hat))
        }
        PredTarget::Eps => {
            // v = (z - σ·ε̂)/t diverges as t→0; the floor only prevents
            // overflow, the amplification it bounds is the point of the
            // prediction-target ablation.
            let t_eff = t.max(flow_cfg.eps_conv_floor);
            let scaled_eps = tape.scale(out, flow_cfg.denoise_noise_scale);
            let num = tape.sub(z_node, scaled_eps)?;
            let v = tape.scale(num, 1.0 / t_eff);
            let vs = tape.scale(v, 1.0 - t);
            let x_hat = tape.add(z_node, vs)?;
            Ok((v, x_hat))
        }
    }
}

/// Build the denoise-branch loss graph for a batch of examples.
///
/// Per example: corrupt, run the null-conditioned pass, optionally run the
/// self-conditioned pass on the detached first prediction, form the guided
/// target v + (1 - 1/ω)(v_sc - v_no_sc) from detached values, and take the
/// masked MSE. The second pass is skipped when the mask does not select it —
/// its output would influence neither the prediction nor the (detached)
/// target.
pub fn denoise_loss_graph(
    params: &NetParams<Real>,
    flow_cfg: &FlowConfig,
    examples: &[DenoiseExample],
) -> Result<(Tape<Real>, ParamNodes, NodeId)> {
    assert!(!examples.is_empty());
    let mut tape = Tape::new();
    let nodes = params.insert(&mut tape, true);
    let cfg = &params.config;
    let sigma = flow_cfg.denoise_noise_scale;
    let mut losses = Vec::with_capacity(examples.len());
    for ex in examples {
        let z = flow::interpolate(&ex.x, &ex.eps, ex.t, sigma)?;
        let v = flow::velocity_target(&ex.x, &ex.eps, sigma, flow_cfg.noise_in_velocity);
        let zeros = Array::zeros(ex.x.shape());
        let out1 = net_forward(
            &mut tape,
            &nodes,
            cfg,
            ForwardInput {
                z: &z,
                t: ex.t,
                omega: ex.omega,
                mode: Mode::Denoise,
                self_cond: &zeros,
                condition: ex.cond.as_ref(),
            },
        )?;
        let (v1, x1) = prediction_to_v(&mut tape, out1, &z, ex.t, flow_cfg)?;
        if ex.self_cond_on {
            let carry = tape.value(x1).clone();
            let out2 = net_forward(
                &mut tape,
                &nodes,
                cfg,
                ForwardInput {
                    z: &z,
                    t: ex.t,
                    omega: ex.omega,
                    mode: Mode::Denoise,
                    self_cond: &carry,
                    condition: ex.cond.as_ref(),
                },
            )?;
            let (v2, _) = prediction_to_v(&mut tape, out2, &z, ex.t, flow_cfg)?;
            let v_sc = tape.value(v2).clone();
            let v_no_sc = tape.value(v1).clone();
            let target = flow::cfg_target(&v, &v_sc, &v_no_sc, ex.omega)?;
            losses.push(tape.mse_mean(v2, target)?);
        } else {
            losses.push(tape.mse_mean(v1, v)?);
        }
    }
    let loss = tape.mean_of(&losses);
    Ok((tape, nodes, loss))
}

/// Build the decode-branch loss graph: per-token corruption at t = 1, zero
/// self-conditioning, cross-entropy against the ground-truth tokens.
pub fn decode_loss_graph(
    params: &NetParams<Real>,
    flow_cfg: &FlowConfig,
    examples: &[DecodeExample],
) -> Result<(Tape<Real>, ParamNodes, NodeId)> {
    assert!(!examples.is_empty());
    let mut tape = Tape::new();
    let nodes = params.insert(&mut tape, true);
    let cfg = &params.config;
    let mut losses = Vec::with_capacity(examples.len());
    for ex in examples {
        let z = flow::corrupt_per_token(&ex.x, &ex.eps, &ex.p, flow_cfg.decode_noise_scale);
        let zeros = Array::zeros(ex.x.shape());
        let out = net_forward(
            &mut tape,
            &nodes,
            cfg,
            ForwardInput {
                z: &z,
                t: 1.0,
                omega: ex.omega,
                mode: Mode::Decode,
                self_cond: &zeros,
                condition: ex.cond.as_ref(),
            },
        )?;
        let logits = unembed(&mut tape, &nodes, cfg, out)?;
        losses.push(tape.cross_entropy_mean(logits, &ex.tokens)?);
    }
    let loss = tape.mean_of(&losses);
    Ok((tape, nodes, loss))
}

/// Run a loss graph backward and collect gradients in parameter order.
pub fn loss_and_grads(
    tape: Tape<Real>,
    nodes: &ParamNodes,
    loss: NodeId,
    params: &NetParams<Real>,
) -> Result<(Real, Vec<Arr>)> {
    let loss_value = tape.value(loss).data()[0];
    let shapes: Vec<Vec<usize>> = {
        let mut v = Vec::new();
        params.visit(&mut |_, a| v.push(a.shape().to_vec()));
        v
    };
    let grads = tape.backward(loss)?;
    let out = nodes
        .ids()
        .iter()
        .zip(&shapes)
        .map(|(&id, shape)| match grads.get(id) {
            Some(g) => g.clone(),
            None => Array::zeros(shape),
        })
        .collect();
    Ok((loss_value, out))
}

pub fn train_step_denoise(
    params: &NetParams<Real>,
    flow_cfg: &FlowConfig,
    examples: &[DenoiseExample],
) -> Result<(Real, Vec<Arr>)> {
    let (tape, nodes, loss) = denoise_loss_graph(params, flow_cfg, examples)?;
    loss_and_grads(tape, &nodes, loss, params)
}

pub fn train_step_decode(
    params: &NetParams<Real>,
    flow_cfg: &FlowConfig,
    examples: &[DecodeExample],
) -> Result<(Real, Vec<Arr>)> {
    let (tape, nodes, loss) = decode_loss_graph(params, flow_cfg, examples)?;
    loss_and_grads(tape, &nodes, loss, params)
}

/// AdamW with bias correction and decoupled weight decay.
pub struct AdamW {
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub weight_decay: Real,
    pub m: Vec<Arr>,
    pub v: Vec<Arr>,
    pub t: u64,
}

impl AdamW {
    pub fn new(params: &NetParams<Real>, beta1: Real, beta2: Real, weight_decay: Real) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, a| m.push(Array::zeros(a.shape())));
        let v = m.clone();
        AdamW {
            beta1,
            beta2,
            eps: 1e-8,
            weight_decay,
            m,
            v,
            t: 0,
        }
    }

    /// One update; `frozen` indices are left untouched.
    pub fn update(
        &mut self,
        params: &mut NetParams<Real>,
        grads: &[Arr],
        lr: Real,
        frozen: &[usize],
    ) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut idx = 0;
        params.visit_mut(&mut |_, p| {
            if !frozen.contains(&idx) {
                let g = &grads[idx];
                let m = &mut self.m[idx];
                let v = &mut self.v[idx];
                for ((pv, &gv), (mv, vv)) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                {
                    *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                    *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                    let mh = *mv / bc1;
                    let vh = *vv / bc2;
                    *pv -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * *pv);
                }
            }
            idx += 1;
        });
    }
}

/// Bias-corrected view of a zero-initialized EMA accumulator:
/// shadow / (1 - decay^step). Falls back to the raw parameters before the
/// first update (or at decay so close to 1 the correction is degenerate).
pub fn ema_view(
    shadow: &NetParams<Real>,
    decay: Real,
    step: u64,
    fallback: &NetParams<Real>,
) -> NetParams<Real> {
    let correction = 1.0 - decay.powf(step as f64);
    if step == 0 || correction <= 0.0 {
        return fallback.clone();
    }
    let mut out = shadow.clone();
    let inv = 1.0 / correction;
    out.visit_mut(&mut |_, a| {
        for v in a.data_mut() {
            *v *= inv;
        }
    });
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Denoise,
    Decode,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Denoise => "denoise",
            Branch::Decode => "decode",
        }
    }
}

#[derive(Clone, Debug)]
pub struct StepMetrics {
    pub step: u64,
    pub branch: Branch,
    pub loss: Real,
    pub lr: Real,
    pub grad_norm: Real,
}

/// Training driver holding parameters, the EMA shadow, and optimizer state.
pub struct Trainer {
    pub run: RunConfig,
    pub corpus: CorpusBundle,
    pub params: NetParams<Real>,
    pub ema: NetParams<Real>,
    pub opt: AdamW,
    pub step: u64,
    pub denoise_steps: u64,
    pub decode_steps: u64,
    frozen: Vec<usize>,
    base_rng: Rng,
}

impl Trainer {
    pub fn new(run: RunConfig) -> Result<Self> {
        run.validate()?;
        let corpus = CorpusBundle::build(&run)?;
        Self::with_corpus(run, corpus)
    }

    pub fn with_corpus(run: RunConfig, corpus: CorpusBundle) -> Result<Self> {
        let base_rng = Rng::new(run.train.seed);
        let mut init_rng = base_rng.substream(DOMAIN_INIT, 0);
        let mut params: NetParams<Real> = NetParams::init(run.net_config(), &mut init_rng);
        let mut frozen = Vec::new();
        if run.model.tie_unembed {
            let all: TokenSeq = TokenSeq((0..run.corpus.vocab_size).collect());
            let table = corpus.provider.embed(&all)?;
            params.tie_unembedding(&table);
            let names = params.param_names();
            frozen.push(names.iter().position(|n| n == "w_unembed").unwrap());
        }
        // Zero-initialized EMA accumulator with a bias-corrected readout
        // (eval_params): identical to the plain shadow asymptotically, but a
        // proper trajectory average at desk-scale step counts, where a
        // 0.9999-decay shadow would still be dominated by the random init.
        let mut ema = params.clone();
        ema.visit_mut(&mut |_, a| *a = Array::zeros(a.shape()));
        let opt = AdamW::new(
            &params,
            run.train.beta1,
            run.train.beta2,
            run.train.weight_decay,
        );
        Ok(Trainer {
            run,
            corpus,
            params,
            ema,
            opt,
            step: 0,
            denoise_steps: 0,
            decode_steps: 0,
            frozen,
            base_rng,
        })
    }

    /// Restore a trainer from checkpointed state.
    #[allow(clippy::too_many_arguments)]
    pub fn restore(
        run: RunConfig,
        corpus: CorpusBundle,
        params: NetParams<Real>,
        ema: NetParams<Real>,
        opt_m: Vec<Arr>,
        opt_v: Vec<Arr>,
        step: u64,
        denoise_steps: u64,
        decode_steps: u64,
    ) -> Result<Self> {
        let base_rng = Rng::new(run.train.seed);
        let mut frozen = Vec::new();
        if run.model.tie_unembed {
            let names = params.param_names();
            frozen.push(names.iter().position(|n| n == "w_unembed").unwrap());
        }
        let mut opt = AdamW::new(
            &params,
            run.train.beta1,
            run.train.beta2,
            run.train.weight_decay,
        );
        opt.m = opt_m;
        opt.v = opt_v;
        opt.t = step;
        Ok(Trainer {
            run,
            corpus,
            params,
            ema,
            opt,
            step,
            denoise_steps,
            decode_steps,
            frozen,
            base_rng,
        })
    }

    pub fn lr_at(&self, step: u64) -> Real {
        let t = &self.run.train;
        let warmup = ((t.steps as f64 * t.warmup_frac).round() as u64).max(1);
        if step < warmup {
            t.lr * (step + 1) as f64 / warmup as f64
        } else {
            t.lr
        }
    }

    /// Parameters evaluation should use: the bias-corrected EMA view by
    /// default, the raw parameters when `sample.use_ema` is off.
    pub fn eval_params(&self) -> NetParams<Real> {
        if self.run.sample.use_ema {
            ema_view(&self.ema, self.run.train.ema_decay, self.step, &self.params)
        } else {
            self.params.clone()
        }
    }

    pub fn make_denoise_batch(&self, rng: &mut Rng) -> Result<Vec<DenoiseExample>> {
        let t_cfg = &self.run.train;
        let f = &self.run.flow;
        let sched = flow::ScheduleParams::new(f.denoise_p_mean, f.denoise_p_std);
        let target_len = self.run.target_len();
        let d_emb = self.run.model.d_emb;
        let mut out = Vec::with_capacity(t_cfg.batch_size);
        for _ in 0..t_cfg.batch_size {
            let (cond_tokens, target) = self.corpus.draw_pair(target_len, rng);
            let x = self.corpus.provider.embed(&target)?;
            let cond = match cond_tokens {
                None => None,
                Some(c) => {
                    let emb = self.corpus.provider.embed(&c)?;
                    if rng.uniform::<Real>() < t_cfg.cond_dropout {
                        Some(Array::zeros(emb.shape()))
                    } else {
                        Some(emb)
                    }
                }
            };
            let t = flow::sample_time(sched, rng);
            let omega = sample_cfg_scale(t_cfg.cfg_lo, t_cfg.cfg_hi, t_cfg.cfg_power, rng);
            let eps = rng.gaussian(&[target_len, d_emb]);
            let self_cond_on = rng.uniform::<Real>() < t_cfg.self_cond_prob;
            out.push(DenoiseExample {
                x,
                cond,
                t,
                omega,
                eps,
                self_cond_on,
            });
        }
        Ok(out)
    }

    pub fn make_decode_batch(&self, rng: &mut Rng) -> Result<Vec<DecodeExample>> {
        let t_cfg = &self.run.train;
        let f = &self.run.flow;
        let sched = flow::ScheduleParams::new(f.decode_p_mean, f.decode_p_std);
        let target_len = self.run.target_len();
        let d_emb = self.run.model.d_emb;
        let mut out = Vec::with_capacity(t_cfg.batch_size);
        for _ in 0..t_cfg.batch_size {
            let (cond_tokens, target) = self.corpus.draw_pair(target_len, rng);
            let x = self.corpus.provider.embed(&target)?;
            let cond = match cond_tokens {
                None => None,
                Some(c) => {
                    let emb = self.corpus.provider.embed(&c)?;
                    if rng.uniform::<Real>() < t_cfg.cond_dropout {
                        Some(Array::zeros(emb.shape()))
                    } else {
                        Some(emb)
                    }
                }
            };
            let p = flow::sample_decode_corruption(sched, rng, target_len);
            let omega = sample_cfg_scale(t_cfg.cfg_lo, t_cfg.cfg_hi, t_cfg.cfg_power, rng);
            let eps = rng.gaussian(&[target_len, d_emb]);
            out.push(DecodeExample {
                tokens: target.0.clone(),
                x,
                cond,
                p,
                omega,
                eps,
            });
        }
        Ok(out)
    }

    /// One optimizer step; branch chosen per batch.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let mut rng = self.base_rng.substream(DOMAIN_STEP, self.step);
        let denoise = rng.uniform::<Real>() < self.run.train.mode_prob_denoise;
        let (branch, loss, grads) = if denoise {
            let batch = self.make_denoise_batch(&mut rng)?;
            let (loss, grads) = train_step_denoise(&self.params, &self.run.flow, &batch)?;
            (Branch::Denoise, loss, grads)
        } else {
            let batch = self.make_decode_batch(&mut rng)?;
            let (loss, grads) = train_step_decode(&self.params, &self.run.flow, &batch)?;
            (Branch::Decode, loss, grads)
        };
        if !loss.is_finite() {
            let mut pnorm = 0.0;
            self.params.visit(&mut |_, a| pnorm += a.sq_norm());
            return Err(Error::NanLoss {
                step: self.step,
                branch: branch.as_str().into(),
                detail: format!("param l2 norm {:.6e}", pnorm.sqrt()),
            });
        }
        let mut grad_norm = 0.0;
        for g in &grads {
            grad_norm += g.sq_norm();
        }
        let grad_norm = grad_norm.sqrt();
        let clip = self.run.train.grad_clip;
        let grads = if clip > 0.0 && grad_norm > clip {
            let s = clip / grad_norm;
            grads.into_iter().map(|g| g.scale(s)).collect()
        } else {
            grads
        };
        let lr = self.lr_at(self.step);
        self.opt.update(&mut self.params, &grads, lr, &self.frozen);
        let decay = self.run.train.ema_decay;
        let snap: Vec<Arr> = {
            let mut v = Vec::new();
            self.params.visit(&mut |_, a| v.push(a.clone()));
            v
        };
        let mut idx = 0;
        self.ema.visit_mut(&mut |_, e| {
            for (ev, &pv) in e.data_mut().iter_mut().zip(snap[idx].data()) {
                *ev = decay * *ev + (1.0 - decay) * pv;
            }
            idx += 1;
        });
        self.step += 1;
        match branch {
            Branch::Denoise => self.denoise_steps += 1,
            Branch::Decode => self.decode_steps += 1,
        }
        Ok(StepMetrics {
            step: self.step - 1,
            branch,
            loss,
            lr,
            grad_norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::CorpusKind;

    fn tiny_run() -> RunConfig {
        let mut run = RunConfig::default();
        run.corpus.vocab_size = 8;
        run.corpus.seq_len = 6;
        run.corpus.stats_tokens = 2_000;
        run.model.d_emb = 8;
        run.model.d_bottleneck = 4;
        run.model.d_model = 16;
        run.model.depth = 2;
        run.model.heads = 2;
        run.model.mlp_ratio = 2;
        run.train.batch_size = 4;
        run.train.steps = 20;
        run
    }

    #[test]
    fn cfg_scale_degenerate_range_and_bounds() {
        let mut rng = Rng::new(0);
        for _ in 0..100 {
            assert_eq!(sample_cfg_scale(1.0, 1.0, 2.0, &mut rng), 1.0);
        }
        for _ in 0..10_000 {
            let w = sample_cfg_scale(0.5, 5.0, 2.0, &mut rng);
            assert!((0.5..=5.0).contains(&w));
        }
    }

    #[test]
    fn cfg_scale_mean_matches_formula_oracle() {
        // E[lo + (hi-lo)u²] = lo + (hi-lo)/3; Monte-Carlo against the formula.
        let mut rng = Rng::new(1);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_cfg_scale(0.5, 5.0, 2.0, &mut rng))
            .sum::<f64>()
            / n as f64;
        let oracle = 0.5 + 4.5 / 3.0;
        assert!((mean - oracle).abs() < 0.02, "mean {mean} vs {oracle}");
    }

    #[test]
    fn plain_flow_loss_when_self_cond_off_and_unit_omega() {
        // With self-conditioning off and ω = 1 the batched loss must equal a
        // direct mean-MSE implementation of the velocity objective.
        let run = tiny_run();
        let trainer = Trainer::new(run.clone()).unwrap();
        let mut rng = Rng::new(77);
        let mut batch = trainer.make_denoise_batch(&mut rng).unwrap();
        for ex in &mut batch {
            ex.self_cond_on = false;
            ex.omega = 1.0;
        }
        let (loss, _) = train_step_denoise(&trainer.params, &run.flow, &batch).unwrap();
        let mut direct = 0.0;
        for ex in &batch {
            let z = flow::interpolate(&ex.x, &ex.eps, ex.t, run.flow.denoise_noise_scale).unwrap();
            let v = flow::velocity_target(&ex.x, &ex.eps, run.flow.denoise_noise_scale, true);
            let zeros = Array::zeros(ex.x.shape());
            let out = crate::net::forward_array(
                &trainer.params,
                ForwardInput {
                    z: &z,
                    t: ex.t,
                    omega: ex.omega,
                    mode: Mode::Denoise,
                    self_cond: &zeros,
                    condition: None,
                },
            )
            .unwrap();
            let v_pred = flow::x_to_v(&out, &z, ex.t).unwrap();
            direct += flow::mse_velocity_loss(&v_pred, &v);
        }
        direct /= batch.len() as f64;
        assert!((loss - direct).abs() < 1e-12, "{loss} vs {direct}");
    }

    #[test]
    fn decode_loss_near_uniform_at_init() {
        let run = tiny_run();
        let trainer = Trainer::new(run.clone()).unwrap();
        let mut rng = Rng::new(5);
        let batch = trainer.make_decode_batch(&mut rng).unwrap();
        let (loss, _) = train_step_decode(&trainer.params, &run.flow, &batch).unwrap();
        assert!(
            (loss - (8f64).ln()).abs() < 0.5,
            "untrained CE {loss} should be near ln|V| = {}",
            (8f64).ln()
        );
    }

    #[test]
    fn ema_zero_decay_tracks_params() {
        let mut run = tiny_run();
        run.train.ema_decay = 0.0;
        let mut trainer = Trainer::new(run).unwrap();
        trainer.train_step().unwrap();
        trainer.train_step().unwrap();
        let mut snap = Vec::new();
        trainer.params.visit(&mut |_, a| snap.push(a.clone()));
        let mut max_diff = 0.0f64;
        let mut idx = 0;
        trainer.ema.visit(&mut |_, e| {
            max_diff = max_diff.max(e.max_abs_diff(&snap[idx]));
            idx += 1;
        });
        assert_eq!(max_diff, 0.0);
    }

    #[test]
    fn mode_prob_one_never_decodes() {
        let mut run = tiny_run();
        run.train.mode_prob_denoise = 1.0;
        let mut trainer = Trainer::new(run).unwrap();
        for _ in 0..10 {
            trainer.train_step().unwrap();
        }
        assert_eq!(trainer.decode_steps, 0);
        assert_eq!(trainer.denoise_steps, 10);
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let run = tiny_run();
        let mut a = Trainer::new(run.clone()).unwrap();
        let mut b = Trainer::new(run).unwrap();
        for _ in 0..10 {
            let ma = a.train_step().unwrap();
            let mb = b.train_step().unwrap();
            assert_eq!(ma.loss.to_bits(), mb.loss.to_bits());
            assert_eq!(ma.grad_norm.to_bits(), mb.grad_norm.to_bits());
        }
    }

    #[test]
    fn condition_dropout_rate_near_ten_percent() {
        let mut run = tiny_run();
        run.corpus.kind = CorpusKind::Copy;
        run.corpus.seq_len = 8;
        run.corpus.cond_len = 4;
        run.train.batch_size = 10_000;
        let trainer = Trainer::new(run).unwrap();
        let mut rng = Rng::new(9);
        let batch = trainer.make_denoise_batch(&mut rng).unwrap();
        let dropped = batch
            .iter()
            .filter(|ex| ex.cond.as_ref().unwrap().sq_norm() == 0.0)
            .count();
        let rate = dropped as f64 / batch.len() as f64;
        assert!((rate - 0.10).abs() <= 0.01, "dropout rate {rate}");
    }

    #[test]
    fn warmup_schedule_ramps_then_holds() {
        let run = tiny_run(); // steps=20, warmup 5% → 1 step
        let trainer = Trainer::new(run).unwrap();
        assert!(trainer.lr_at(0) <= trainer.run.train.lr);
        assert_eq!(trainer.lr_at(10), trainer.run.train.lr);
    }
}
