use std::time::Instant;
use tstlab_core::autodiff::Tape;

fn main() {
    // Shapes matching one training step of the criterion-5 model:
    // rows = B*C*T = 64*21 = 1344, d = 64, ffn = 128.
    let mut t = Tape::new();
    let a = t.param((0..1344 * 64).map(|i| (i as f64 * 0.001).sin()).collect(), 1344, 64).unwrap();
    let w = t.param((0..64 * 128).map(|i| (i as f64 * 0.002).cos()).collect(), 64, 128).unwrap();
    let start = Instant::now();
    let iters = 200;
    let mut acc = 0.0;
    for _ in 0..iters {
        let mut tape = Tape::new();
        let a2 = tape.param(t.data(a).to_vec(), 1344, 64).unwrap();
        let w2 = tape.param(t.data(w).to_vec(), 64, 128).unwrap();
        let out = tape.matmul(a2, w2).unwrap();
        let loss = tape.mean_all(out);
        tape.backward(loss).unwrap();
        acc += tape.data(loss)[0];
    }
    let dt = start.elapsed().as_secs_f64();
    // fwd + 2 backward products per iter
    let flops = 3.0 * 2.0 * 1344.0 * 64.0 * 128.0 * iters as f64;
    println!("acc={acc:.3} time={dt:.3}s => {:.2} GFLOP/s", flops / dt / 1e9);
}
