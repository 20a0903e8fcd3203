use flowlm::config::RunConfig;
use flowlm::trainer::Trainer;
use std::time::Instant;

fn main() {
    let run = RunConfig::default();
    let mut trainer = Trainer::new(run).unwrap();
    // Warm up
    for _ in 0..3 {
        trainer.train_step().unwrap();
    }
    let t0 = Instant::now();
    let n = 40;
    let mut losses = (0.0, 0.0);
    for _ in 0..n {
        let m = trainer.train_step().unwrap();
        losses.0 += m.loss;
        losses.1 = m.loss;
    }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    println!(
        "per-step: {:.1} ms  (mean loss {:.4}, last {:.4}, params {})",
        dt * 1000.0,
        losses.0 / n as f64,
        losses.1,
        trainer.params.param_count()
    );
    println!("default 12000 steps ≈ {:.1} min", dt * 12000.0 / 60.0);
}
