//! Run configuration: every knob in one validated record, parsed from flat
//! `namespace.key=value` text. Unknown keys are rejected; outputs embed the
//! canonical rendering and its fingerprint so any artifact is re-derivable.

use std::fmt::Write as _;

use crate::corpus::seq2seq::TaskKind;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusKind {
    Markov,
    Copy,
    Reverse,
}

impl CorpusKind {
    pub fn task_kind(self) -> Option<TaskKind> {
        match self {
            CorpusKind::Markov => None,
            CorpusKind::Copy => Some(TaskKind::Copy),
            CorpusKind::Reverse => Some(TaskKind::Reverse),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PredTarget {
    X,
    V,
    Eps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridKind {
    LogitNormal,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub kind: CorpusKind,
    pub vocab_size: usize,
    pub order: usize,
    pub seq_len: usize,
    pub cond_len: usize,
    pub dirichlet_alpha: f64,
    pub stats_tokens: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub d_bottleneck: usize,
    pub d_model: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub n_time_tokens: usize,
    pub n_cfg_tokens: usize,
    pub n_mode_tokens: usize,
    pub tie_unembed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub pred_target: PredTarget,
    pub denoise_p_mean: f64,
    pub denoise_p_std: f64,
    pub denoise_noise_scale: f64,
    pub decode_p_mean: f64,
    pub decode_p_std: f64,
    pub decode_noise_scale: f64,
    pub noise_in_velocity: bool,
    pub eps_conv_floor: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub mode_prob_denoise: f64,
    pub self_cond_prob: f64,
    pub cfg_lo: f64,
    pub cfg_hi: f64,
    pub cfg_power: f64,
    pub cond_dropout: f64,
    pub ema_decay: f64,
    pub grad_clip: f64,
    pub ckpt_every: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleConfig {
    pub steps: usize,
    pub schedule: GridKind,
    pub p_mean: f64,
    pub p_std: f64,
    pub gamma: f64,
    pub self_cond_cfg: f64,
    pub cond_cfg: f64,
    pub n: usize,
    pub frozen_grid: bool,
    pub use_ema: bool,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub per_sample_entropy: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub flow: FlowConfig,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusConfig {
                kind: CorpusKind::Markov,
                vocab_size: 16,
                order: 2,
                seq_len: 16,
                cond_len: 8,
                dirichlet_alpha: 0.3,
                stats_tokens: 100_000,
                seed: 0,
            },
            model: ModelConfig {
                d_emb: 32,
                d_bottleneck: 8,
                d_model: 64,
                depth: 2,
                heads: 4,
                mlp_ratio: 4,
                n_time_tokens: 4,
                n_cfg_tokens: 4,
                n_mode_tokens: 4,
                tie_unembed: false,
            },
            flow: FlowConfig {
                pred_target: PredTarget::X,
                denoise_p_mean: -1.5,
                denoise_p_std: 0.8,
                denoise_noise_scale: 2.0,
                decode_p_mean: 0.8,
                decode_p_std: 0.8,
                decode_noise_scale: 1.0,
                noise_in_velocity: true,
                eps_conv_floor: 0.01,
            },
            train: TrainConfig {
                steps: 12_000,
                batch_size: 16,
                lr: 3e-4,
                beta1: 0.9,
                beta2: 0.95,
                weight_decay: 0.0,
                warmup_frac: 0.05,
                mode_prob_denoise: 0.8,
                self_cond_prob: 0.5,
                cfg_lo: 0.5,
                cfg_hi: 5.0,
                cfg_power: 2.0,
                cond_dropout: 0.10,
                ema_decay: 0.9999,
                grad_clip: 0.0,
                ckpt_every: 0,
                seed: 0,
            },
            sample: SampleConfig {
                steps: 64,
                schedule: GridKind::LogitNormal,
                p_mean: -1.5,
                p_std: 0.8,
                gamma: 0.0,
                self_cond_cfg: 1.0,
                cond_cfg: 1.0,
                n: 256,
                frozen_grid: false,
                use_ema: true,
                seed: 0,
            },
            eval: EvalConfig {
                per_sample_entropy: false,
            },
        }
    }
}

fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

impl RunConfig {
    /// Canonical full rendering: one `key=value` per line, fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        let c = &self.corpus;
        kv(&mut s, "corpus.kind", match c.kind {
            CorpusKind::Markov => "markov".into(),
            CorpusKind::Copy => "copy".into(),
            CorpusKind::Reverse => "reverse".into(),
        });
        kv(&mut s, "corpus.vocab_size", c.vocab_size.to_string());
        kv(&mut s, "corpus.order", c.order.to_string());
        kv(&mut s, "corpus.seq_len", c.seq_len.to_string());
        kv(&mut s, "corpus.cond_len", c.cond_len.to_string());
        kv(&mut s, "corpus.dirichlet_alpha", fmt_f64(c.dirichlet_alpha));
        kv(&mut s, "corpus.stats_tokens", c.stats_tokens.to_string());
        kv(&mut s, "corpus.seed", c.seed.to_string());
        let m = &self.model;
        kv(&mut s, "model.d_emb", m.d_emb.to_string());
        kv(&mut s, "model.d_bottleneck", m.d_bottleneck.to_string());
        kv(&mut s, "model.d_model", m.d_model.to_string());
        kv(&mut s, "model.depth", m.depth.to_string());
        kv(&mut s, "model.heads", m.heads.to_string());
        kv(&mut s, "model.mlp_ratio", m.mlp_ratio.to_string());
        kv(&mut s, "model.n_time_tokens", m.n_time_tokens.to_string());
        kv(&mut s, "model.n_cfg_tokens", m.n_cfg_tokens.to_string());
        kv(&mut s, "model.n_mode_tokens", m.n_mode_tokens.to_string());
        kv(&mut s, "model.tie_unembed", m.tie_unembed.to_string());
        let f = &self.flow;
        kv(&mut s, "flow.pred_target", match f.pred_target {
            PredTarget::X => "x".into(),
            PredTarget::V => "v".into(),
            PredTarget::Eps => "eps".into(),
        });
        kv(&mut s, "flow.denoise_p_mean", fmt_f64(f.denoise_p_mean));
        kv(&mut s, "flow.denoise_p_std", fmt_f64(f.denoise_p_std));
        kv(&mut s, "flow.denoise_noise_scale", fmt_f64(f.denoise_noise_scale));
        kv(&mut s, "flow.decode_p_mean", fmt_f64(f.decode_p_mean));
        kv(&mut s, "flow.decode_p_std", fmt_f64(f.decode_p_std));
        kv(&mut s, "flow.decode_noise_scale", fmt_f64(f.decode_noise_scale));
        kv(&mut s, "flow.noise_in_velocity", f.noise_in_velocity.to_string());
        kv(&mut s, "flow.eps_conv_floor", fmt_f64(f.eps_conv_floor));
        let t = &self.train;
        kv(&mut s, "train.steps", t.steps.to_string());
        kv(&mut s, "train.batch_size", t.batch_size.to_string());
        kv(&mut s, "train.lr", fmt_f64(t.lr));
        kv(&mut s, "train.beta1", fmt_f64(t.beta1));
        kv(&mut s, "train.beta2", fmt_f64(t.beta2));
        kv(&mut s, "train.weight_decay", fmt_f64(t.weight_decay));
        kv(&mut s, "train.warmup_frac", fmt_f64(t.warmup_frac));
        kv(&mut s, "train.mode_prob_denoise", fmt_f64(t.mode_prob_denoise));
        kv(&mut s, "train.self_cond_prob", fmt_f64(t.self_cond_prob));
        kv(&mut s, "train.cfg_lo", fmt_f64(t.cfg_lo));
        kv(&mut s, "train.cfg_hi", fmt_f64(t.cfg_hi));
        kv(&mut s, "train.cfg_power", fmt_f64(t.cfg_power));
        kv(&mut s, "train.cond_dropout", fmt_f64(t.cond_dropout));
        kv(&mut s, "train.ema_decay", fmt_f64(t.ema_decay));
        kv(&mut s, "train.grad_clip", fmt_f64(t.grad_clip));
        kv(&mut s, "train.ckpt_every", t.ckpt_every.to_string());
        kv(&mut s, "train.seed", t.seed.to_string());
        let sp = &self.sample;
        kv(&mut s, "sample.steps", sp.steps.to_string());
        kv(&mut s, "sample.schedule", match sp.schedule {
            GridKind::LogitNormal => "logit_normal".into(),
            GridKind::Uniform => "uniform".into(),
        });
        kv(&mut s, "sample.p_mean", fmt_f64(sp.p_mean));
        kv(&mut s, "sample.p_std", fmt_f64(sp.p_std));
        kv(&mut s, "sample.gamma", fmt_f64(sp.gamma));
        kv(&mut s, "sample.self_cond_cfg", fmt_f64(sp.self_cond_cfg));
        kv(&mut s, "sample.cond_cfg", fmt_f64(sp.cond_cfg));
        kv(&mut s, "sample.n", sp.n.to_string());
        kv(&mut s, "sample.frozen_grid", sp.frozen_grid.to_string());
        kv(&mut s, "sample.use_ema", sp.use_ema.to_string());
        kv(&mut s, "sample.seed", sp.seed.to_string());
        kv(&mut s, "eval.per_sample_entropy", self.eval.per_sample_entropy.to_string());
        s
    }

    /// FNV-1a hash of the canonical text, as fixed-width hex.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        format!("{h:016x}")
    }

    /// Parse `key=value` lines onto the defaults. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<F: std::str::FromStr>(key: &str, v: &str) -> Result<F> {
            v.parse::<F>()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        }
        match key {
            "corpus.kind" => {
                self.corpus.kind = match value {
                    "markov" => CorpusKind::Markov,
                    "copy" => CorpusKind::Copy,
                    "reverse" => CorpusKind::Reverse,
                    _ => return Err(Error::Config(format!("unknown corpus.kind {value:?}"))),
                }
            }
            "corpus.vocab_size" => self.corpus.vocab_size = p(key, value)?,
            "corpus.order" => self.corpus.order = p(key, value)?,
            "corpus.seq_len" => self.corpus.seq_len = p(key, value)?,
            "corpus.cond_len" => self.corpus.cond_len = p(key, value)?,
            "corpus.dirichlet_alpha" => self.corpus.dirichlet_alpha = p(key, value)?,
            "corpus.stats_tokens" => self.corpus.stats_tokens = p(key, value)?,
            "corpus.seed" => self.corpus.seed = p(key, value)?,
            "model.d_emb" => self.model.d_emb = p(key, value)?,
            "model.d_bottleneck" => self.model.d_bottleneck = p(key, value)?,
            "model.d_model" => self.model.d_model = p(key, value)?,
            "model.depth" => self.model.depth = p(key, value)?,
            "model.heads" => self.model.heads = p(key, value)?,
            "model.mlp_ratio" => self.model.mlp_ratio = p(key, value)?,
            "model.n_time_tokens" => self.model.n_time_tokens = p(key, value)?,
            "model.n_cfg_tokens" => self.model.n_cfg_tokens = p(key, value)?,
            "model.n_mode_tokens" => self.model.n_mode_tokens = p(key, value)?,
            "model.tie_unembed" => self.model.tie_unembed = p(key, value)?,
            "flow.pred_target" => {
                self.flow.pred_target = match value {
                    "x" => PredTarget::X,
                    "v" => PredTarget::V,
                    "eps" => PredTarget::Eps,
                    _ => return Err(Error::Config(format!("unknown flow.pred_target {value:?}"))),
                }
            }
            "flow.denoise_p_mean" => self.flow.denoise_p_mean = p(key, value)?,
            "flow.denoise_p_std" => self.flow.denoise_p_std = p(key, value)?,
            "flow.denoise_noise_scale" => self.flow.denoise_noise_scale = p(key, value)?,
            "flow.decode_p_mean" => self.flow.decode_p_mean = p(key, value)?,
            "flow.decode_p_std" => self.flow.decode_p_std = p(key, value)?,
            "flow.decode_noise_scale" => self.flow.decode_noise_scale = p(key, value)?,
            "flow.noise_in_velocity" => self.flow.noise_in_velocity = p(key, value)?,
            "flow.eps_conv_floor" => self.flow.eps_conv_floor = p(key, value)?,
            "train.steps" => self.train.steps = p(key, value)?,
            "train.batch_size" => self.train.batch_size = p(key, value)?,
            "train.lr" => self.train.lr = p(key, value)?,
            "train.beta1" => self.train.beta1 = p(key, value)?,
            "train.beta2" => self.train.beta2 = p(key, value)?,
            "train.weight_decay" => self.train.weight_decay = p(key, value)?,
            "train.warmup_frac" => self.train.warmup_frac = p(key, value)?,
            "train.mode_prob_denoise" => self.train.mode_prob_denoise = p(key, value)?,
            "train.self_cond_prob" => self.train.self_cond_prob = p(key, value)?,
            "train.cfg_lo" => self.train.cfg_lo = p(key, value)?,
            "train.cfg_hi" => self.train.cfg_hi = p(key, value)?,
            "train.cfg_power" => self.train.cfg_power = p(key, value)?,
            "train.cond_dropout" => self.train.cond_dropout = p(key, value)?,
            "train.ema_decay" => self.train.ema_decay = p(key, value)?,
            "train.grad_clip" => self.train.grad_clip = p(key, value)?,
            "train.ckpt_every" => self.train.ckpt_every = p(key, value)?,
            "train.seed" => self.train.seed = p(key, value)?,
            "sample.steps" => self.sample.steps = p(key, value)?,
            "sample.schedule" => {
                self.sample.schedule = match value {
                    "logit_normal" => GridKind::LogitNormal,
                    "uniform" => GridKind::Uniform,
                    _ => return Err(Error::Config(format!("unknown sample.schedule {value:?}"))),
                }
            }
            "sample.p_mean" => self.sample.p_mean = p(key, value)?,
            "sample.p_std" => self.sample.p_std = p(key, value)?,
            "sample.gamma" => self.sample.gamma = p(key, value)?,
            "sample.self_cond_cfg" => self.sample.self_cond_cfg = p(key, value)?,
            "sample.cond_cfg" => self.sample.cond_cfg = p(key, value)?,
            "sample.n" => self.sample.n = p(key, value)?,
            "sample.frozen_grid" => self.sample.frozen_grid = p(key, value)?,
            "sample.use_ema" => self.sample.use_ema = p(key, value)?,
            "sample.seed" => self.sample.seed = p(key, value)?,
            "eval.per_sample_entropy" => self.eval.per_sample_entropy = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let c = &self.corpus;
        if c.vocab_size < 2 {
            return fail(format!("corpus.vocab_size must be >= 2, got {}", c.vocab_size));
        }
        if c.order != 1 && c.order != 2 {
            return fail(format!("corpus.order must be 1 or 2, got {}", c.order));
        }
        if c.seq_len <= c.order {
            return fail(format!("corpus.seq_len must exceed the order, got {}", c.seq_len));
        }
        if c.dirichlet_alpha <= 0.0 {
            return fail("corpus.dirichlet_alpha must be positive".into());
        }
        if c.kind != CorpusKind::Markov && (c.cond_len == 0 || c.cond_len * 2 > c.seq_len) {
            return fail(format!(
                "corpus.cond_len {} must fit its copy inside corpus.seq_len {}",
                c.cond_len, c.seq_len
            ));
        }
        let m = &self.model;
        for (name, v) in [
            ("model.d_emb", m.d_emb),
            ("model.d_bottleneck", m.d_bottleneck),
            ("model.d_model", m.d_model),
            ("model.depth", m.depth),
            ("model.heads", m.heads),
            ("model.mlp_ratio", m.mlp_ratio),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if m.d_model % m.heads != 0 {
            return fail(format!(
                "model.d_model {} must be divisible by model.heads {}",
                m.d_model, m.heads
            ));
        }
        let f = &self.flow;
        if f.denoise_p_std <= 0.0 || f.decode_p_std <= 0.0 {
            return fail("schedule P_std must be positive".into());
        }
        if f.denoise_noise_scale <= 0.0 || f.decode_noise_scale <= 0.0 {
            return fail("noise scales must be positive".into());
        }
        if f.eps_conv_floor <= 0.0 || f.eps_conv_floor >= 1.0 {
            return fail("flow.eps_conv_floor must be in (0, 1)".into());
        }
        let t = &self.train;
        if t.steps == 0 || t.batch_size == 0 {
            return fail("train.steps and train.batch_size must be positive".into());
        }
        for (name, v) in [
            ("train.mode_prob_denoise", t.mode_prob_denoise),
            ("train.self_cond_prob", t.self_cond_prob),
            ("train.cond_dropout", t.cond_dropout),
            ("train.warmup_frac", t.warmup_frac),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(0.0..1.0).contains(&t.ema_decay) {
            return fail(format!("train.ema_decay must be in [0, 1), got {}", t.ema_decay));
        }
        if t.cfg_lo > t.cfg_hi || t.cfg_lo <= 0.0 {
            return fail(format!(
                "train.cfg range [{}, {}] must be positive with lo <= hi",
                t.cfg_lo, t.cfg_hi
            ));
        }
        if t.lr <= 0.0 {
            return fail("train.lr must be positive".into());
        }
        let s = &self.sample;
        if s.steps == 0 {
            return fail("sample.steps must be >= 1".into());
        }
        if s.p_std <= 0.0 {
            return fail("sample.p_std must be positive".into());
        }
        if s.gamma < 0.0 {
            return fail("sample.gamma must be >= 0".into());
        }
        if s.self_cond_cfg <= 0.0 || s.cond_cfg <= 0.0 {
            return fail("guidance scales must be positive".into());
        }
        if s.n == 0 {
            return fail("sample.n must be positive".into());
        }
        Ok(())
    }

    /// Length of the generated slot (total minus condition for task corpora).
    pub fn target_len(&self) -> usize {
        match self.corpus.kind {
            CorpusKind::Markov => self.corpus.seq_len,
            _ => self.corpus.seq_len - self.corpus.cond_len,
        }
    }

    /// Condition length seen by the network (0 for unconditional corpora).
    pub fn net_cond_len(&self) -> usize {
        match self.corpus.kind {
            CorpusKind::Markov => 0,
            _ => self.corpus.cond_len,
        }
    }

    pub fn net_config(&self) -> crate::net::NetConfig {
        crate::net::NetConfig {
            d_emb: self.model.d_emb,
            d_bottleneck: self.model.d_bottleneck,
            d_model: self.model.d_model,
            depth: self.model.depth,
            heads: self.model.heads,
            mlp_ratio: self.model.mlp_ratio,
            n_time_tokens: self.model.n_time_tokens,
            n_cfg_tokens: self.model.n_cfg_tokens,
            n_mode_tokens: self.model.n_mode_tokens,
            vocab_size: self.corpus.vocab_size,
            cond_len: self.net_cond_len(),
            target_len: self.target_len(),
            tie_unembed: self.model.tie_unembed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.fingerprint(), back.fingerprint());
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::from_text("train.nope=1").unwrap_err();
        assert!(err.to_string().contains("unknown key"));
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = RunConfig::from_text("train.steps=100\nsample.gamma=1.0\n# comment\n").unwrap();
        assert_eq!(cfg.train.steps, 100);
        assert_eq!(cfg.sample.gamma, 1.0);
        assert_eq!(cfg.train.batch_size, RunConfig::default().train.batch_size);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_text("corpus.order=3").is_err());
        assert!(RunConfig::from_text("model.d_model=65").is_err());
        assert!(RunConfig::from_text("train.mode_prob_denoise=1.5").is_err());
        assert!(RunConfig::from_text("flow.pred_target=w").is_err());
    }

    #[test]
    fn fingerprint_distinguishes_configs() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.train.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
