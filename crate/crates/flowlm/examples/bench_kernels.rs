use flowlm::numeric::{Array, Rng};
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(0);
    // Shapes representative of the desk model: [28,64]x[64,64], [28,64]x[64,256]
    let a: Array<f64> = rng.gaussian(&[28, 64]);
    let b: Array<f64> = rng.gaussian(&[64, 64]);
    let c: Array<f64> = rng.gaussian(&[64, 256]);
    let n = 200_000;
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..n {
        let r = flowlm::numeric::array::matmul(&a, &b).unwrap();
        acc += r.data()[0];
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = (2.0 * 28.0 * 64.0 * 64.0) * n as f64;
    println!("matmul 28x64x64:  {:.2} GFLOP/s ({acc})", flops / dt / 1e9);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..(n / 4) {
        let r = flowlm::numeric::array::matmul(&a, &c).unwrap();
        acc += r.data()[0];
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = (2.0 * 28.0 * 64.0 * 256.0) * (n / 4) as f64;
    println!("matmul 28x64x256: {:.2} GFLOP/s ({acc})", flops / dt / 1e9);
    let t0 = Instant::now();
    let mut acc = 0.0;
    for _ in 0..n {
        let r = flowlm::numeric::array::matmul_nt(&a, &b).unwrap();
        acc += r.data()[0];
    }
    let dt = t0.elapsed().as_secs_f64();
    let flops = (2.0 * 28.0 * 64.0 * 64.0) * n as f64;
    println!("matmul_nt:        {:.2} GFLOP/s ({acc})", flops / dt / 1e9);
}
