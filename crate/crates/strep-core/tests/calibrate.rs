//! Manual calibration harness (ignored by default): times training on one
//! simulated trajectory and prints the accuracy trace, to pick batch-size
//! and iteration defaults that fit desk-scale runtime budgets.

use std::time::Instant;

use strep_core::simulator::{generate_sequence, EnvironmentMap, TrajectorySpec};
use strep_core::trainer::{train, TrainConfig};

fn run_one(env: &EnvironmentMap, traj_seed: u64, beams: usize, iters: usize, s_per_beam: usize) {
    let spec = TrajectorySpec {
        seed: traj_seed,
        beams,
        ..Default::default()
    };
    let ds = generate_sequence(env, &spec).unwrap();
    let cfg = TrainConfig {
        iters,
        s_per_beam,
        eval_every: (iters / 10).max(1),
        seed: traj_seed,
        ..Default::default()
    };
    let t0 = Instant::now();
    let out = train(std::slice::from_ref(&ds), &cfg).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "env={} seed={traj_seed} beams={beams} iters={iters} s={s_per_beam} time={dt:.1}s",
        env.name
    );
    for row in &out.history {
        println!(
            "  it={:5}  local={:12.4}  global={:8.5}  ate={:?}  pd={:?}",
            row.iteration, row.local_loss, row.global_loss, row.ate, row.point_dist
        );
    }
}

#[test]
#[ignore]
fn calibrate_registration() {
    let env = EnvironmentMap::corridor_loop();
    for seed in [1u64, 2] {
        run_one(&env, seed, 128, 1000, 2);
    }
}
