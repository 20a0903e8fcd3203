//! Command implementations behind the binary: train, sample, eval, sweep,
//! inspect. Arg parsing lives in the binary; these functions take plain
//! option structs so they are drivable in-process from tests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{CorpusKind, RunConfig};
use crate::corpus::TokenSeq;
use crate::error::{Error, Result};
use crate::evalsuite::{self, EvalModel, MetricsRow, SweepAxis};
use crate::sampler::generate;
use crate::trainer::Trainer;

pub struct TrainOpts {
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub overrides: Vec<String>,
    pub quiet: bool,
}

pub struct SampleOpts {
    pub ckpt: PathBuf,
    pub out: PathBuf,
    pub steps: Option<usize>,
    pub gamma: Option<f64>,
    pub cfg: Option<f64>,
    pub cond_cfg: Option<f64>,
    pub schedule: Option<String>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
}

pub struct EvalOpts {
    pub dumps: Vec<PathBuf>,
    pub out: PathBuf,
}

pub struct SweepOpts {
    pub config: Option<PathBuf>,
    pub axis: String,
    pub values: Vec<String>,
    pub seeds: Vec<u64>,
    pub ckpts: Vec<PathBuf>,
    pub out: PathBuf,
    pub overrides: Vec<String>,
}

pub struct InspectOpts {
    pub ckpt: PathBuf,
}

/// Sidecar written next to every sample dump.
#[derive(Serialize, Deserialize)]
pub struct Sidecar {
    pub fingerprint: String,
    pub seed: u64,
    pub config_echo: String,
    pub grid: Vec<f64>,
    pub warnings: Vec<String>,
    pub samples: Vec<SidecarSample>,
}

#[derive(Serialize, Deserialize)]
pub struct SidecarSample {
    pub tokens: Vec<usize>,
    /// Mean per-token NLL under the corpus oracle (scored positions).
    pub oracle_nll: Option<f64>,
    pub prompt: Option<Vec<usize>>,
    pub exact_match: Option<bool>,
}

fn load_run_config(path: &Option<PathBuf>, overrides: &[String]) -> Result<RunConfig> {
    let mut run = match path {
        None => RunConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", p.display()))
            })?;
            RunConfig::from_text(&text)?
        }
    };
    for ov in overrides {
        let (k, v) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override must be key=value, got {ov:?}")))?;
        run.set(k.trim(), v.trim())?;
    }
    run.validate()?;
    Ok(run)
}

pub fn cmd_train(opts: &TrainOpts) -> Result<()> {
    let run = load_run_config(&opts.config, &opts.overrides)?;
    fs::create_dir_all(&opts.out)?;
    fs::write(opts.out.join("config.echo"), run.to_text())?;
    let mut trainer = Trainer::new(run.clone())?;
    if !opts.quiet {
        eprintln!(
            "training {} params for {} steps (fingerprint {})",
            trainer.params.param_count(),
            run.train.steps,
            run.fingerprint()
        );
    }
    let mut metrics = std::io::BufWriter::new(fs::File::create(opts.out.join("metrics.csv"))?);
    writeln!(metrics, "step,branch,loss,lr,grad_norm")?;
    let total = run.train.steps;
    for _ in 0..total {
        let m = trainer.train_step()?;
        writeln!(
            metrics,
            "{},{},{},{},{}",
            m.step,
            m.branch.as_str(),
            m.loss,
            m.lr,
            m.grad_norm
        )?;
        let every = run.train.ckpt_every;
        if every > 0 && trainer.step % every == 0 && trainer.step < total {
            Checkpoint::from_trainer(&trainer).save(&opts.out.join(format!("ckpt_{}.bin", trainer.step)))?;
        }
        if !opts.quiet && (trainer.step % 1000 == 0 || trainer.step == total) {
            eprintln!("step {} {} loss {:.5}", m.step, m.branch.as_str(), m.loss);
        }
    }
    metrics.flush()?;
    Checkpoint::from_trainer(&trainer).save(&opts.out.join(format!("ckpt_{total}.bin")))?;
    Ok(())
}

pub fn cmd_sample(opts: &SampleOpts) -> Result<()> {
    let ckpt = Checkpoint::load(&opts.ckpt)?;
    let mut run = ckpt.run.clone();
    if let Some(v) = opts.steps {
        run.set("sample.steps", &v.to_string())?;
    }
    if let Some(v) = opts.gamma {
        run.set("sample.gamma", &v.to_string())?;
    }
    if let Some(v) = opts.cfg {
        run.set("sample.self_cond_cfg", &v.to_string())?;
    }
    if let Some(v) = opts.cond_cfg {
        run.set("sample.cond_cfg", &v.to_string())?;
    }
    if let Some(v) = &opts.schedule {
        run.set("sample.schedule", v)?;
    }
    if let Some(v) = opts.seed {
        run.set("sample.seed", &v.to_string())?;
    }
    if let Some(v) = opts.n {
        run.set("sample.n", &v.to_string())?;
    }
    run.validate()?;
    let bundle = ckpt.bundle()?;
    let out = generate(
        &ckpt.eval_params(),
        &bundle,
        &run,
        None,
        Some(ckpt.decode_steps),
    )?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(&opts.out)?;
    write_dump(&opts.out, &run, &bundle, &out)?;
    Ok(())
}

pub fn write_dump(
    dir: &Path,
    run: &RunConfig,
    bundle: &crate::trainer::CorpusBundle,
    out: &crate::sampler::GenOutput,
) -> Result<()> {
    let mut txt = String::new();
    for seq in &out.tokens {
        let line: Vec<String> = seq.iter().map(|t| t.to_string()).collect();
        txt.push_str(&line.join(" "));
        txt.push('\n');
    }
    fs::write(dir.join("samples.txt"), txt)?;
    let scored = run.corpus.kind == CorpusKind::Markov;
    let samples: Vec<SidecarSample> = out
        .tokens
        .iter()
        .enumerate()
        .map(|(i, toks)| {
            let oracle_nll = if scored {
                let nll = bundle
                    .source
                    .nll_scores(&TokenSeq(toks.clone()), crate::corpus::markov::ORACLE_PROB_FLOOR);
                Some(nll.iter().sum::<f64>() / nll.len() as f64)
            } else {
                None
            };
            let prompt = out.conditions.as_ref().map(|c| c[i].0.clone());
            let exact_match = match (&bundle.task, &out.conditions) {
                (Some(task), Some(conds)) => Some(task.exact_match(toks, &conds[i])),
                _ => None,
            };
            SidecarSample {
                tokens: toks.clone(),
                oracle_nll,
                prompt,
                exact_match,
            }
        })
        .collect();
    let sidecar = Sidecar {
        fingerprint: run.fingerprint(),
        seed: run.sample.seed,
        config_echo: run.to_text(),
        grid: out.grid.clone(),
        warnings: out.warnings.clone(),
        samples,
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::Eval(format!("sidecar serialization: {e}")))?;
    fs::write(dir.join("samples.json"), json)?;
    Ok(())
}

/// Read a dump directory back: returns (tokens, sidecar).
pub fn read_dump(dir: &Path) -> Result<(Vec<Vec<usize>>, Sidecar)> {
    let txt = fs::read_to_string(dir.join("samples.txt"))
        .map_err(|e| Error::Eval(format!("cannot read dump {}: {e}", dir.display())))?;
    let mut tokens = Vec::new();
    for line in txt.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let seq: std::result::Result<Vec<usize>, _> =
            line.split_whitespace().map(|t| t.parse::<usize>()).collect();
        tokens.push(seq.map_err(|_| Error::Eval(format!("malformed dump line {line:?}")))?);
    }
    if tokens.is_empty() {
        return Err(Error::Eval(format!("dump {} is empty", dir.display())));
    }
    let json = fs::read_to_string(dir.join("samples.json"))
        .map_err(|e| Error::Eval(format!("cannot read sidecar: {e}")))?;
    let sidecar: Sidecar = serde_json::from_str(&json)
        .map_err(|e| Error::Eval(format!("malformed sidecar: {e}")))?;
    if sidecar.samples.len() != tokens.len() {
        return Err(Error::Eval(format!(
            "dump/sidecar mismatch: {} lines vs {} samples",
            tokens.len(),
            sidecar.samples.len()
        )));
    }
    Ok((tokens, sidecar))
}

pub fn cmd_eval(opts: &EvalOpts) -> Result<()> {
    if opts.dumps.is_empty() {
        return Err(Error::Eval("no dumps given".into()));
    }
    let mut rows = Vec::new();
    for dump in &opts.dumps {
        let (tokens, sidecar) = read_dump(dump)?;
        let run = RunConfig::from_text(&sidecar.config_echo)?;
        let vocab = run.corpus.vocab_size;
        for seq in &tokens {
            if seq.iter().any(|&t| t >= vocab) || seq.len() != run.target_len() {
                return Err(Error::Eval(format!(
                    "dump {} does not match its config schema",
                    dump.display()
                )));
            }
        }
        let bundle = crate::trainer::CorpusBundle::build(&run)?;
        let row = evalsuite::score_samples(&tokens, &bundle, &run);
        if let Some(task) = &bundle.task {
            let hits = tokens
                .iter()
                .zip(&sidecar.samples)
                .filter(|(toks, s)| {
                    s.prompt
                        .as_ref()
                        .map(|p| task.exact_match(toks, p))
                        .unwrap_or(false)
                })
                .count();
            println!(
                "exact_match {}/{} = {}",
                hits,
                tokens.len(),
                hits as f64 / tokens.len() as f64
            );
        }
        rows.push(row);
    }
    if let Some(parent) = opts.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut csv = String::from(MetricsRow::csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    fs::write(&opts.out, csv)?;
    Ok(())
}

pub fn cmd_sweep(opts: &SweepOpts) -> Result<()> {
    let base = load_run_config(&opts.config, &opts.overrides)?;
    let axis = SweepAxis::parse(&opts.axis)?;
    let seeds = if opts.seeds.is_empty() {
        vec![0, 1, 2]
    } else {
        opts.seeds.clone()
    };
    let mut models = Vec::new();
    if !axis.retrains() {
        if opts.ckpts.len() != seeds.len() {
            return Err(Error::Eval(format!(
                "axis {:?} needs --ckpt per seed ({} seeds, {} ckpts)",
                opts.axis,
                seeds.len(),
                opts.ckpts.len()
            )));
        }
        for p in &opts.ckpts {
            let ck = Checkpoint::load(p)?;
            let bundle = ck.bundle()?;
            models.push(EvalModel {
                run: ck.run.clone(),
                params: ck.eval_params(),
                bundle,
                decode_steps: ck.decode_steps,
            });
        }
    }
    let rows = evalsuite::sweep(&base, axis, &opts.values, &seeds, &models)?;
    fs::create_dir_all(&opts.out)?;
    let mut csv = String::from(MetricsRow::csv_header());
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    fs::write(opts.out.join("sweep.csv"), csv)?;
    let mut plot = String::new();
    for (x, y) in evalsuite::frontier_points(&rows) {
        plot.push_str(&format!("{x} {y}\n"));
    }
    fs::write(opts.out.join("frontier.dat"), plot)?;
    Ok(())
}

pub fn cmd_inspect(opts: &InspectOpts) -> Result<()> {
    let ck = Checkpoint::load(&opts.ckpt)?;
    println!("fingerprint: {}", ck.run.fingerprint());
    println!("step: {}", ck.step);
    println!("denoise_steps: {}", ck.denoise_steps);
    println!("decode_steps: {}", ck.decode_steps);
    println!("param_count: {}", ck.params.param_count());
    println!("---- config ----");
    print!("{}", ck.run.to_text());
    Ok(())
}

/// Exit code policy: 0 ok, 2 usage/config, 3 numeric failure.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NanLoss { .. }
        | Error::ShapeMismatch { .. }
        | Error::NonScalarLoss(_)
        | Error::NodeNotOnTape(_)
        | Error::NearSingularTime { .. }
        | Error::NonPositiveGuidance(_)
        | Error::SdeJumpTooLarge(_) => 3,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_partition() {
        assert_eq!(exit_code_for(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code_for(&Error::NanLoss {
                step: 0,
                branch: "denoise".into(),
                detail: String::new()
            }),
            3
        );
    }
}
