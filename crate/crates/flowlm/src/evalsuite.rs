//! Metrics over generated samples (oracle generative perplexity, unigram
//! entropy, diversity) and the sweep harness that maps one config axis
//! across values and seeds.

use crate::config::RunConfig;
use crate::corpus::TokenSeq;
use crate::error::{Error, Result};
use crate::net::NetParams;
use crate::sampler::generate;
use crate::trainer::{CorpusBundle, Trainer};
use crate::Real;

/// Entropy (nats) of the pooled empirical unigram distribution.
pub fn unigram_entropy(seqs: &[Vec<usize>], vocab_size: usize) -> f64 {
    assert!(!seqs.is_empty(), "entropy of an empty sample set");
    let mut counts = vec![0f64; vocab_size];
    let mut n = 0f64;
    for s in seqs {
        for &t in s {
            counts[t] += 1.0;
            n += 1.0;
        }
    }
    -counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| (c / n) * (c / n).ln())
        .sum::<f64>()
}

/// Mean over samples of each sample's own unigram entropy (flag variant).
pub fn per_sample_entropy(seqs: &[Vec<usize>], vocab_size: usize) -> f64 {
    assert!(!seqs.is_empty());
    seqs.iter()
        .map(|s| unigram_entropy(std::slice::from_ref(s), vocab_size))
        .sum::<f64>()
        / seqs.len() as f64
}

/// Fraction of distinct sequences among the samples.
pub fn distinct_fraction(seqs: &[Vec<usize>]) -> f64 {
    let mut sorted: Vec<&Vec<usize>> = seqs.iter().collect();
    sorted.sort();
    sorted.dedup();
    sorted.len() as f64 / seqs.len() as f64
}

/// Spearman rank correlation with tie-averaged ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let rx = ranks(xs);
    let ry = ranks(ys);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// One evaluated cell: everything needed to re-derive the point.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub fingerprint: String,
    pub steps: usize,
    pub sampler: String,
    pub gamma: f64,
    pub omega: f64,
    pub gen_ppl: f64,
    pub entropy: f64,
    pub distinct_frac: f64,
    pub n: usize,
    pub seed: u64,
}

impl MetricsRow {
    pub fn csv_header() -> &'static str {
        "fingerprint,steps,sampler,gamma,omega,gen_ppl,entropy,distinct_frac,n,seed"
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.fingerprint,
            self.steps,
            self.sampler,
            self.gamma,
            self.omega,
            self.gen_ppl,
            self.entropy,
            self.distinct_frac,
            self.n,
            self.seed
        )
    }
}

/// Score a set of generated sequences against the corpus oracle.
pub fn score_samples(seqs: &[Vec<usize>], bundle: &CorpusBundle, run: &RunConfig) -> MetricsRow {
    let token_seqs: Vec<TokenSeq> = seqs.iter().map(|s| TokenSeq(s.clone())).collect();
    let gen_ppl = bundle.source.oracle_perplexity(&token_seqs);
    let entropy = if run.eval.per_sample_entropy {
        per_sample_entropy(seqs, run.corpus.vocab_size)
    } else {
        unigram_entropy(seqs, run.corpus.vocab_size)
    };
    MetricsRow {
        fingerprint: run.fingerprint(),
        steps: run.sample.steps,
        sampler: if run.sample.gamma > 0.0 { "sde" } else { "ode" }.to_string(),
        gamma: run.sample.gamma,
        omega: run.sample.self_cond_cfg,
        gen_ppl,
        entropy,
        distinct_frac: distinct_fraction(seqs),
        n: seqs.len(),
        seed: run.sample.seed,
    }
}

/// Generate under `run.sample` and score against the oracle.
pub fn eval_model(
    params: &NetParams<Real>,
    bundle: &CorpusBundle,
    run: &RunConfig,
    decode_steps: Option<u64>,
) -> Result<MetricsRow> {
    let out = generate(params, bundle, run, None, decode_steps)?;
    Ok(score_samples(&out.tokens, bundle, run))
}

/// Exact-match accuracy on a conditional task over fresh prompts.
pub fn exact_match_accuracy(
    params: &NetParams<Real>,
    bundle: &CorpusBundle,
    run: &RunConfig,
    decode_steps: Option<u64>,
) -> Result<f64> {
    let task = bundle
        .task
        .as_ref()
        .ok_or_else(|| Error::Eval("exact-match requires a seq2seq corpus".into()))?;
    let out = generate(params, bundle, run, None, decode_steps)?;
    let conds = out.conditions.expect("task corpus provides prompts");
    let mut hits = 0usize;
    for (gen, cond) in out.tokens.iter().zip(&conds) {
        if task.exact_match(gen, cond) {
            hits += 1;
        }
    }
    Ok(hits as f64 / out.tokens.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Omega,
    Steps,
    Gamma,
    Schedule,
    Bottleneck,
    ModeProb,
    PredTarget,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "omega" => SweepAxis::Omega,
            "steps" => SweepAxis::Steps,
            "gamma" => SweepAxis::Gamma,
            "schedule" => SweepAxis::Schedule,
            "bottleneck" => SweepAxis::Bottleneck,
            "mode_prob" => SweepAxis::ModeProb,
            "pred_target" => SweepAxis::PredTarget,
            _ => return Err(Error::Eval(format!("unknown sweep axis {s:?}"))),
        })
    }

    /// Axes that change training rather than sampling retrain per value.
    pub fn retrains(self) -> bool {
        matches!(
            self,
            SweepAxis::Bottleneck | SweepAxis::ModeProb | SweepAxis::PredTarget
        )
    }

    pub fn apply(self, run: &mut RunConfig, value: &str) -> Result<()> {
        match self {
            SweepAxis::Omega => run.set("sample.self_cond_cfg", value),
            SweepAxis::Steps => run.set("sample.steps", value),
            SweepAxis::Gamma => run.set("sample.gamma", value),
            SweepAxis::Schedule => run.set("sample.schedule", value),
            SweepAxis::Bottleneck => run.set("model.d_bottleneck", value),
            SweepAxis::ModeProb => run.set("train.mode_prob_denoise", value),
            SweepAxis::PredTarget => run.set("flow.pred_target", value),
        }
    }
}

/// A trained model ready for evaluation (fresh or from a checkpoint).
pub struct EvalModel {
    pub run: RunConfig,
    pub params: NetParams<Real>,
    pub bundle: CorpusBundle,
    pub decode_steps: u64,
}

/// Train a model for `run` from scratch (used by retraining sweep axes).
pub fn train_model(run: &RunConfig) -> Result<EvalModel> {
    let mut trainer = Trainer::new(run.clone())?;
    let steps = run.train.steps;
    for _ in 0..steps {
        trainer.train_step()?;
    }
    let decode_steps = trainer.decode_steps;
    let params = trainer.eval_params();
    Ok(EvalModel {
        run: trainer.run,
        params,
        bundle: trainer.corpus,
        decode_steps,
    })
}

/// Map one axis across values and seeds.
///
/// Sampling axes evaluate the supplied models (one per seed, e.g. loaded
/// from checkpoints); training axes retrain per (value, seed) starting from
/// the base config. Rows come back in (value-major, seed-minor) order.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    seeds: &[u64],
    models: &[EvalModel],
) -> Result<Vec<MetricsRow>> {
    if !axis.retrains() && models.len() != seeds.len() {
        return Err(Error::Eval(format!(
            "axis needs one checkpoint per seed: got {} for {} seeds",
            models.len(),
            seeds.len()
        )));
    }
    let mut rows = Vec::new();
    for value in values {
        for (si, &seed) in seeds.iter().enumerate() {
            if axis.retrains() {
                let mut run = base.clone();
                axis.apply(&mut run, value)?;
                run.train.seed = seed;
                run.corpus.seed = seed;
                run.sample.seed = seed;
                run.validate()?;
                let model = train_model(&run)?;
                rows.push(eval_model(
                    &model.params,
                    &model.bundle,
                    &model.run,
                    Some(model.decode_steps),
                )?);
            } else {
                let model = &models[si];
                // Model/corpus sections come from the checkpoint (they must
                // match the parameters); the sampling section follows the
                // sweep's base config.
                let mut run = model.run.clone();
                run.sample = base.sample.clone();
                axis.apply(&mut run, value)?;
                run.sample.seed = seed;
                run.validate()?;
                rows.push(eval_model(
                    &model.params,
                    &model.bundle,
                    &run,
                    Some(model.decode_steps),
                )?);
            }
        }
    }
    Ok(rows)
}

/// (x, y) pairs for the PPL-entropy frontier plot file.
pub fn frontier_points(rows: &[MetricsRow]) -> Vec<(f64, f64)> {
    rows.iter().map(|r| (r.entropy, r.gen_ppl)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::MarkovSource;
    use crate::numeric::Rng;

    #[test]
    fn entropy_edge_cases() {
        // Single repeated token → 0.
        let seqs = vec![vec![3usize; 10], vec![3; 10]];
        assert_eq!(unigram_entropy(&seqs, 8), 0.0);
        // Exactly uniform counts → ln|V|.
        let seqs = vec![(0..8).collect::<Vec<usize>>()];
        assert!((unigram_entropy(&seqs, 8) - (8f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_uniform_source_near_log_v() {
        let src = MarkovSource::uniform(16, 1);
        let mut rng = Rng::new(0);
        let seqs: Vec<Vec<usize>> = src
            .sample_corpus(6_250, 16, &mut rng)
            .into_iter()
            .map(|s| s.0)
            .collect();
        let h = unigram_entropy(&seqs, 16);
        assert!((h - (16f64).ln()).abs() < 0.02, "entropy {h}");
    }

    #[test]
    fn distinct_fraction_counts() {
        let seqs = vec![vec![1, 2], vec![1, 2], vec![3, 4]];
        assert!((distinct_fraction(&seqs) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_monotone_and_ties() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&xs, &[10.0, 20.0, 25.0, 40.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &[9.0, 7.0, 4.0, 1.0]) + 1.0).abs() < 1e-12);
        let flat = [5.0, 5.0, 5.0, 5.0];
        assert_eq!(spearman(&xs, &flat), 0.0);
    }

    #[test]
    fn metrics_row_csv_round_trip_format() {
        let row = MetricsRow {
            fingerprint: "abc".into(),
            steps: 64,
            sampler: "sde".into(),
            gamma: 1.0,
            omega: 2.0,
            gen_ppl: 5.25,
            entropy: 2.5,
            distinct_frac: 1.0,
            n: 16,
            seed: 0,
        };
        let line = row.to_csv();
        assert_eq!(line.split(',').count(), MetricsRow::csv_header().split(',').count());
    }
}
