//! Inference: time-grid construction, Euler ODE stepping, the noise
//! re-injection step, self-conditioning carry, guidance, and the final
//! decode. Tokens are produced exactly once, at t = 1 — every intermediate
//! state stays in embedding space.

use crate::config::{GridKind, RunConfig};
use crate::corpus::TokenSeq;
use crate::error::{Error, Result};
use crate::flow::{self, ScheduleParams};
use crate::net::{decode_tokens, forward_array, ForwardInput, Mode, NetParams};
use crate::numeric::{Array, Rng};
use crate::scalar::{sigmoid, Scalar};
use crate::trainer::CorpusBundle;
use crate::Real;

// Substream domains of the sampling seed.
const DOMAIN_GRID: u64 = 21;
const DOMAIN_SAMPLE: u64 = 22;
const DOMAIN_PROMPT: u64 = 23;

/// Sorted times 0 = t_0 < t_1 < ... < t_N = 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid<T> {
    points: Vec<T>,
}

impl<T: Scalar> TimeGrid<T> {
    /// Build a grid with `steps` intervals.
    ///
    /// Logit-normal grids sample the interior points from the training-time
    /// denoiser schedule and sort them; collisions are nudged apart by 1e-6.
    pub fn build(kind: GridKind, steps: usize, sched: ScheduleParams<T>, rng: &mut Rng) -> Self {
        assert!(steps >= 1, "grid needs at least one interval");
        let mut points = Vec::with_capacity(steps + 1);
        match kind {
            GridKind::Uniform => {
                for i in 0..=steps {
                    points.push(T::of_f64(i as f64 / steps as f64));
                }
            }
            GridKind::LogitNormal => {
                let gap = T::of_f64(1e-6);
                let mut interior: Vec<T> = (0..steps.saturating_sub(1))
                    .map(|_| {
                        let raw: T = rng.normal::<T>() * sched.p_std + sched.p_mean;
                        sigmoid(raw).max(gap).min(T::one() - gap)
                    })
                    .collect();
                interior.sort_by(|a, b| a.partial_cmp(b).unwrap());
                // Enforce the minimum spacing, forward then backward.
                for i in 1..interior.len() {
                    if interior[i] < interior[i - 1] + gap {
                        interior[i] = interior[i - 1] + gap;
                    }
                }
                for i in (0..interior.len().saturating_sub(1)).rev() {
                    let ceil = interior[i + 1] - gap;
                    if interior[i] > ceil {
                        interior[i] = ceil;
                    }
                }
                points.push(T::zero());
                points.extend(interior);
                points.push(T::one());
            }
        }
        let grid = TimeGrid { points };
        grid.check();
        grid
    }

    fn check(&self) {
        assert!(self.points.len() >= 2);
        assert_eq!(self.points[0], T::zero(), "grid must start at 0");
        assert_eq!(*self.points.last().unwrap(), T::one(), "grid must end at 1");
        for w in self.points.windows(2) {
            assert!(w[0] < w[1], "grid must be strictly increasing");
        }
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn intervals(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1] - w[0]))
    }
}

/// One deterministic Euler step. `denoise(z, t, carry)` returns x̂; the new
/// state and the prediction (the next self-conditioning carry) come back.
pub fn ode_step<T: Scalar, F>(
    z: &Array<T>,
    t: T,
    dt: T,
    denoise: &mut F,
    carry: &Array<T>,
) -> Result<(Array<T>, Array<T>)>
where
    F: FnMut(&Array<T>, T, &Array<T>) -> Result<Array<T>>,
{
    assert!(dt > T::zero(), "dt must be positive");
    assert!((t + dt).as_f64() <= 1.0 + 1e-12, "step overshoots t = 1");
    let x_hat = denoise(z, t, carry)?;
    let v = flow::x_to_v(&x_hat, z, t)?;
    let z_next = z.zip_map(&v, |zv, vv| zv + dt * vv);
    Ok((z_next, x_hat))
}

/// Noise re-injection step: pull the state and time back by α = 1 - γ·dt,
/// evaluate the denoiser there, then advance from the original (z, t).
#[allow(clippy::too_many_arguments)]
pub fn sde_step<T: Scalar, F>(
    z: &Array<T>,
    t: T,
    dt: T,
    gamma: T,
    noise_scale: T,
    denoise: &mut F,
    carry: &Array<T>,
    rng: &mut Rng,
) -> Result<(Array<T>, Array<T>)>
where
    F: FnMut(&Array<T>, T, &Array<T>) -> Result<Array<T>>,
{
    assert!(dt > T::zero(), "dt must be positive");
    let alpha = T::one() - gamma * dt;
    if alpha <= T::zero() {
        return Err(Error::SdeJumpTooLarge((gamma * dt).as_f64()));
    }
    let t_back = alpha * t;
    let e: Array<T> = rng.gaussian(&[z.rows(), z.cols()]);
    let z_back = z.zip_map(&e, |zv, ev| alpha * zv + (T::one() - alpha) * noise_scale * ev);
    let x_hat = denoise(&z_back, t_back, carry)?;
    let v = flow::x_to_v(&x_hat, z, t)?;
    let z_next = z.zip_map(&v, |zv, vv| zv + dt * vv);
    Ok((z_next, x_hat))
}

/// Output of one generation run.
#[derive(Clone, Debug)]
pub struct GenOutput {
    pub tokens: Vec<Vec<usize>>,
    /// Prompts used, when the corpus is conditional.
    pub conditions: Option<Vec<TokenSeq>>,
    pub grid: Vec<Real>,
    pub warnings: Vec<String>,
}

/// Generate `run.sample.n` sequences from a trained model.
///
/// `decode_steps_trained` lets callers surface the decoder-untrained warning;
/// pass `None` when unknown.
pub fn generate(
    params: &NetParams<Real>,
    bundle: &CorpusBundle,
    run: &RunConfig,
    prompts: Option<Vec<TokenSeq>>,
    decode_steps_trained: Option<u64>,
) -> Result<GenOutput> {
    let sp = &run.sample;
    let mut warnings = Vec::new();
    if decode_steps_trained == Some(0) {
        warnings.push("decoder untrained: decode branch never took a step".to_string());
    }
    if sp.self_cond_cfg < run.train.cfg_lo || sp.self_cond_cfg > run.train.cfg_hi {
        warnings.push(format!(
            "self-cond cfg scale {} outside trained range [{}, {}]",
            sp.self_cond_cfg, run.train.cfg_lo, run.train.cfg_hi
        ));
    }
    let base = Rng::new(sp.seed);
    let sched = ScheduleParams::new(sp.p_mean, sp.p_std);
    let mut grid_rng = if sp.frozen_grid {
        Rng::new(0).substream(DOMAIN_GRID, 0)
    } else {
        base.substream(DOMAIN_GRID, 0)
    };
    let grid: TimeGrid<Real> = TimeGrid::build(sp.schedule, sp.steps, sched, &mut grid_rng);

    let cond_len = run.net_cond_len();
    let prompts = match (&bundle.task, prompts) {
        (Some(_), Some(p)) => Some(p),
        (Some(task), None) => {
            let mut prng = base.substream(DOMAIN_PROMPT, 0);
            Some(
                (0..sp.n)
                    .map(|_| task.sample_pair(&mut prng).0)
                    .collect::<Vec<_>>(),
            )
        }
        (None, _) => None,
    };
    if let Some(p) = &prompts {
        if p.len() != sp.n {
            return Err(Error::Eval(format!(
                "{} prompts provided for {} samples",
                p.len(),
                sp.n
            )));
        }
        for c in p {
            if c.len() != cond_len {
                return Err(Error::Eval(format!(
                    "prompt length {} does not match condition length {cond_len}",
                    c.len()
                )));
            }
        }
    }

    let sigma = run.flow.denoise_noise_scale;
    let target_len = run.target_len();
    let d_emb = run.model.d_emb;
    let s_c = sp.cond_cfg;
    let mut tokens = Vec::with_capacity(sp.n);
    for i in 0..sp.n {
        let mut rng = base.substream(DOMAIN_SAMPLE, i as u64);
        let cond_x = match &prompts {
            None => None,
            Some(p) => Some(bundle.provider.embed(&p[i])?),
        };
        let cond_zero = cond_x.as_ref().map(|c| Array::zeros(c.shape()));
        let mut denoise = |z: &Array<Real>, t: Real, carry: &Array<Real>| -> Result<Array<Real>> {
            let x_cond = predict_x(params, run, z, t, carry, cond_x.as_ref())?;
            if cond_x.is_some() && s_c != 1.0 {
                // Condition CFG: x̂ ← x̂_uncond + s_c·(x̂_cond − x̂_uncond).
                let x_uncond = predict_x(params, run, z, t, carry, cond_zero.as_ref())?;
                Ok(x_uncond.zip_map(&x_cond, |u, c| u + s_c * (c - u)))
            } else {
                Ok(x_cond)
            }
        };
        let mut z: Array<Real> = rng.gaussian::<Real>(&[target_len, d_emb]).scale(sigma);
        let mut carry: Array<Real> = Array::zeros(&[target_len, d_emb]);
        for (t, dt) in grid.intervals() {
            let (z_next, x_hat) = if sp.gamma > 0.0 {
                sde_step(&z, t, dt, sp.gamma, sigma, &mut denoise, &carry, &mut rng)?
            } else {
                ode_step(&z, t, dt, &mut denoise, &carry)?
            };
            z = z_next;
            carry = x_hat;
        }
        // Final step: decode mode at t = 1 with zero self-conditioning.
        let cond_for_decode = cond_x.as_ref();
        tokens.push(decode_tokens(
            params,
            &z,
            sp.self_cond_cfg,
            cond_for_decode,
        )?);
    }
    Ok(GenOutput {
        tokens,
        conditions: prompts,
        grid: grid.points().to_vec(),
        warnings,
    })
}

/// One denoise-mode prediction, converting the raw output per the configured
/// prediction target.
fn predict_x(
    params: &NetParams<Real>,
    run: &RunConfig,
    z: &Array<Real>,
    t: Real,
    carry: &Array<Real>,
    cond: Option<&Array<Real>>,
) -> Result<Array<Real>> {
    let out = forward_array(
        params,
        ForwardInput {
            z,
            t,
            omega: run.sample.self_cond_cfg,
            mode: Mode::Denoise,
            self_cond: carry,
            condition: cond,
        },
    )?;
    match run.flow.pred_target {
        crate::config::PredTarget::X => Ok(out),
        crate::config::PredTarget::V => Ok(flow::v_to_x(&out, z, t)),
        crate::config::PredTarget::Eps => {
            let t_eff = t.max(run.flow.eps_conv_floor);
            let sigma = run.flow.denoise_noise_scale;
            let v = z.zip_map(&out, |zv, ev| (zv - sigma * ev) / t_eff);
            Ok(flow::v_to_x(&v, z, t))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_exact() {
        let mut rng = Rng::new(0);
        let sched = ScheduleParams::new(-1.5f64, 0.8);
        let g1: TimeGrid<f64> = TimeGrid::build(GridKind::Uniform, 1, sched, &mut rng);
        assert_eq!(g1.points(), &[0.0, 1.0]);
        let g4: TimeGrid<f64> = TimeGrid::build(GridKind::Uniform, 4, sched, &mut rng);
        assert_eq!(g4.points(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn logit_normal_grid_mass_near_noise_end() {
        let sched = ScheduleParams::new(-1.5f64, 0.8);
        let mut rng = Rng::new(1);
        let mut below = 0;
        for _ in 0..100 {
            let g: TimeGrid<f64> = TimeGrid::build(GridKind::LogitNormal, 16, sched, &mut rng);
            let interior = &g.points()[1..16];
            let median = interior[interior.len() / 2];
            if median < 0.5 {
                below += 1;
            }
        }
        assert!(below > 90, "median below 0.5 in only {below}/100 grids");
    }

    #[test]
    fn grid_invariants_hold() {
        let sched = ScheduleParams::new(-1.5f64, 0.8);
        let mut rng = Rng::new(2);
        for steps in [1usize, 2, 8, 64] {
            let g: TimeGrid<f64> = TimeGrid::build(GridKind::LogitNormal, steps, sched, &mut rng);
            assert_eq!(g.points()[0], 0.0);
            assert_eq!(*g.points().last().unwrap(), 1.0);
            for w in g.points().windows(2) {
                assert!(w[0] < w[1]);
            }
        }
    }

    #[test]
    fn ode_step_perfect_predictor_lands_on_path() {
        // With x̂ ≡ x fixed, one Euler step from the interpolant lands exactly
        // on the interpolant at t + dt.
        let mut rng = Rng::new(3);
        let x: Array<f64> = rng.gaussian(&[4, 8]);
        let eps: Array<f64> = rng.gaussian(&[4, 8]);
        let sigma = 2.0;
        let (t, dt) = (0.3, 0.25);
        let z = flow::interpolate(&x, &eps, t, sigma).unwrap();
        let mut denoise =
            |_: &Array<f64>, _: f64, _: &Array<f64>| -> Result<Array<f64>> { Ok(x.clone()) };
        let carry = Array::zeros(&[4, 8]);
        let (z_next, x_hat) = ode_step(&z, t, dt, &mut denoise, &carry).unwrap();
        let expect = flow::interpolate(&x, &eps, t + dt, sigma).unwrap();
        assert!(z_next.max_abs_diff(&expect) < 1e-12);
        assert_eq!(x_hat.data(), x.data());
    }

    #[test]
    fn ode_step_identity_predictor_is_stationary() {
        let mut rng = Rng::new(4);
        let z: Array<f64> = rng.gaussian(&[2, 4]);
        let mut denoise =
            |zz: &Array<f64>, _: f64, _: &Array<f64>| -> Result<Array<f64>> { Ok(zz.clone()) };
        let carry = Array::zeros(&[2, 4]);
        let (z_next, _) = ode_step(&z, 0.4, 0.2, &mut denoise, &carry).unwrap();
        assert!(z_next.max_abs_diff(&z) < 1e-14);
    }

    #[test]
    fn euler_halving_dt_halves_endpoint_error() {
        // Smooth synthetic field: x̂(z, t) = tanh(z) + 0.3·t, integrated from
        // t = 0.1 to 0.5. First order: err(dt) / err(dt/2) ≈ 2.
        let field = |z: &Array<f64>, t: f64| z.map(|v| v.tanh() + 0.3 * t);
        let integrate = |n_steps: usize| -> Array<f64> {
            let mut z = Array::from_vec(&[1, 2], vec![0.7, -0.4]);
            let (t0, t1) = (0.1, 0.5);
            let dt = (t1 - t0) / n_steps as f64;
            let carry = Array::zeros(&[1, 2]);
            for i in 0..n_steps {
                let t = t0 + i as f64 * dt;
                let mut denoise = |zz: &Array<f64>, tt: f64, _: &Array<f64>| -> Result<Array<f64>> {
                    Ok(field(zz, tt))
                };
                let (zn, _) = ode_step(&z, t, dt, &mut denoise, &carry).unwrap();
                z = zn;
            }
            z
        };
        let reference = integrate(4096);
        let err_coarse = integrate(8).max_abs_diff(&reference);
        let err_fine = integrate(16).max_abs_diff(&reference);
        let ratio = err_coarse / err_fine;
        assert!(
            (1.6..=2.4).contains(&ratio),
            "expected ≈2x error reduction, got {ratio}"
        );
    }

    #[test]
    fn sde_gamma_zero_equals_ode() {
        let mut rng = Rng::new(5);
        let z: Array<f64> = rng.gaussian(&[4, 8]);
        let target: Array<f64> = rng.gaussian(&[4, 8]);
        let carry = Array::zeros(&[4, 8]);
        let mut denoise =
            |_: &Array<f64>, _: f64, _: &Array<f64>| -> Result<Array<f64>> { Ok(target.clone()) };
        let (ode_z, ode_x) = ode_step(&z, 0.2, 0.1, &mut denoise, &carry).unwrap();
        let mut noise_rng = Rng::new(77);
        let (sde_z, sde_x) = sde_step(
            &z,
            0.2,
            0.1,
            0.0,
            2.0,
            &mut denoise,
            &carry,
            &mut noise_rng,
        )
        .unwrap();
        assert!(ode_z.max_abs_diff(&sde_z) < 1e-12);
        assert!(ode_x.max_abs_diff(&sde_x) < 1e-12);
    }

    #[test]
    fn sde_jump_too_large_rejected() {
        let z = Array::<f64>::zeros(&[2, 2]);
        let carry = Array::<f64>::zeros(&[2, 2]);
        let mut denoise =
            |zz: &Array<f64>, _: f64, _: &Array<f64>| -> Result<Array<f64>> { Ok(zz.clone()) };
        let mut rng = Rng::new(6);
        let err = sde_step(&z, 0.5, 0.5, 2.0, 1.0, &mut denoise, &carry, &mut rng);
        assert!(matches!(err, Err(Error::SdeJumpTooLarge(_))));
    }

    #[test]
    fn generation_is_deterministic_and_token_only_at_decode() {
        let mut run = RunConfig::default();
        run.corpus.vocab_size = 8;
        run.corpus.seq_len = 6;
        run.corpus.stats_tokens = 2_000;
        run.model.d_emb = 8;
        run.model.d_bottleneck = 4;
        run.model.d_model = 16;
        run.model.depth = 1;
        run.model.heads = 2;
        run.model.mlp_ratio = 2;
        run.sample.n = 3;
        run.sample.steps = 4;
        let bundle = CorpusBundle::build(&run).unwrap();
        let mut rng = Rng::new(0);
        let params = NetParams::init(run.net_config(), &mut rng);
        let a = generate(&params, &bundle, &run, None, Some(5)).unwrap();
        let b = generate(&params, &bundle, &run, None, Some(5)).unwrap();
        assert_eq!(a.tokens, b.tokens);
        assert!(a.warnings.is_empty());
        assert_eq!(a.tokens.len(), 3);
        assert!(a.tokens.iter().all(|s| s.len() == 6));
        // Decoder-untrained warning path.
        let c = generate(&params, &bundle, &run, None, Some(0)).unwrap();
        assert!(c.warnings[0].contains("decoder untrained"));
    }

    #[test]
    fn gamma_zero_run_equals_default_ode_run() {
        let mut run = RunConfig::default();
        run.corpus.vocab_size = 8;
        run.corpus.seq_len = 6;
        run.corpus.stats_tokens = 2_000;
        run.model.d_emb = 8;
        run.model.d_bottleneck = 4;
        run.model.d_model = 16;
        run.model.depth = 1;
        run.model.heads = 2;
        run.model.mlp_ratio = 2;
        run.sample.n = 2;
        run.sample.steps = 4;
        let bundle = CorpusBundle::build(&run).unwrap();
        let mut rng = Rng::new(0);
        let params = NetParams::init(run.net_config(), &mut rng);
        let default_run = generate(&params, &bundle, &run, None, None).unwrap();
        let mut gamma_zero = run.clone();
        gamma_zero.sample.gamma = 0.0;
        let explicit = generate(&params, &bundle, &gamma_zero, None, None).unwrap();
        assert_eq!(default_run.tokens, explicit.tokens);
    }
}
