use flowlm::config::RunConfig;
use flowlm::corpus::TokenSeq;
use flowlm::evalsuite::eval_model;
use flowlm::flow;
use flowlm::net::{decode_tokens, forward_array, ForwardInput, Mode};
use flowlm::numeric::{Array, Rng};
use flowlm::trainer::Trainer;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(4000);
    let mut run = RunConfig::default();
    run.train.steps = steps;
    for kv in args.iter().skip(2) {
        let (k, v) = kv.split_once('=').unwrap();
        run.set(k, v).unwrap();
    }
    run.validate().unwrap();
    let mut trainer = Trainer::new(run.clone()).unwrap();

    // Calibration: PPL of uniform random tokens under this oracle.
    let mut crng = Rng::new(7);
    let uni: Vec<TokenSeq> = (0..512)
        .map(|_| TokenSeq((0..run.corpus.seq_len).map(|_| crng.below(run.corpus.vocab_size)).collect()))
        .collect();
    eprintln!(
        "uniform-random tokens oracle PPL: {:.2}; corpus target {:.3}",
        trainer.corpus.source.oracle_perplexity(&uni),
        trainer.corpus.source.entropy_rate().exp()
    );

    let eval_every: u64 = 2000;
    for i in 0..steps {
        trainer.train_step().unwrap();
        if (i + 1) % eval_every == 0 || i + 1 == steps {
            let params = trainer.eval_params();
            // Denoiser accuracy curve: decode(x̂(z_t,t)) token accuracy by t.
            let mut rng = Rng::new(55);
            let mut line = format!("step {:5}: x̂→token acc by t:", i + 1);
            for &t in &[0.2, 0.35, 0.5, 0.65, 0.8, 0.95] {
                let mut correct = 0;
                let mut total = 0;
                for _ in 0..24 {
                    let seq = trainer.corpus.source.sample(run.corpus.seq_len, &mut rng);
                    let x = trainer.corpus.provider.embed(&seq).unwrap();
                    let eps: Array<f64> = rng.gaussian(&[run.corpus.seq_len, run.model.d_emb]);
                    let z = flow::interpolate(&x, &eps, t, run.flow.denoise_noise_scale).unwrap();
                    let zeros = Array::zeros(x.shape());
                    let xh = forward_array(
                        &params,
                        ForwardInput { z: &z, t, omega: 1.0, mode: Mode::Denoise, self_cond: &zeros, condition: None },
                    ).unwrap();
                    let toks = decode_tokens(&params, &xh, 1.0, None).unwrap();
                    for (a, b) in toks.iter().zip(seq.iter()) {
                        total += 1;
                        if a == b { correct += 1; }
                    }
                }
                line.push_str(&format!(" {t}:{:.3}", correct as f64 / total as f64));
            }
            // Gen PPL snapshot.
            let mut r = run.clone();
            r.sample.gamma = 1.0;
            r.sample.steps = 64;
            r.sample.n = 128;
            let row = eval_model(&params, &trainer.corpus, &r, Some(trainer.decode_steps)).unwrap();
            eprintln!("{line}  | sde64 ppl {:.2} ent {:.3}", row.gen_ppl, row.entropy);
        }
    }
}
