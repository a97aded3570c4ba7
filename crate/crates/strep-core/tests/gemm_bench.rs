// Ad-hoc throughput probe; not asserting performance, just printing it.
use std::time::Instant;
use strep_core::autodiff::gemm::{gemm, Lay};

#[test]
#[ignore]
fn throughput() {
    for &(m, k, n) in &[
        (2048usize, 256usize, 1024usize),
        (6144, 256, 512),
        (6144, 512, 256),
        (2048, 18, 64),
        (16, 1024, 512),
        (6144, 2, 64),
    ] {
        let a = vec![1.1f64; m * k];
        let b = vec![0.9f64; k * n];
        let mut c = vec![0.0f64; m * n];
        // warmup
        gemm(m, k, n, 1.0, &a, Lay::N, &b, Lay::N, 0.0, &mut c);
        let reps = (2e9 / (2.0 * (m * k * n) as f64)).ceil().max(3.0) as usize;
        let t0 = Instant::now();
        for _ in 0..reps {
            gemm(m, k, n, 1.0, &a, Lay::N, &b, Lay::N, 0.0, &mut c);
        }
        let dt = t0.elapsed().as_secs_f64();
        let gflops = 2.0 * (m * k * n) as f64 * reps as f64 / dt / 1e9;
        println!("{m}x{k}x{n}: {gflops:.1} GFLOP/s ({reps} reps, {dt:.2}s)");
    }
}
