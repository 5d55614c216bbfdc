// Scratch profiling of the inner-loop hot path at benchmark sizes.

use nearbr::algos::{default_init, nearest_br, InitStrategy, SolverConfig};
use nearbr::datagen::{gen_synthetic_sph, SynthConfig};
use nearbr::matcore::{
    PERF_CHOLESKY_HITS, PERF_CLIP_BUCKETS, PERF_EIG_CALLS, PERF_EIG_NANOS, PERF_PSD_NANOS,
    PERF_SUBSPACE_HITS, PERF_SUBSPACE_MISSES,
};
use std::sync::atomic::Ordering;
use std::time::Instant;

fn snap() -> (u64, u64, f64, f64) {
    (
        PERF_CHOLESKY_HITS.load(Ordering::Relaxed),
        PERF_EIG_CALLS.load(Ordering::Relaxed),
        PERF_EIG_NANOS.load(Ordering::Relaxed) as f64 * 1e-9,
        PERF_PSD_NANOS.load(Ordering::Relaxed) as f64 * 1e-9,
    )
}

fn main() {
    let n = 100;
    let m = 50;

    let sc = SynthConfig::new(n, m, 0.0, 1).unwrap();
    let (_sph, lti) = gen_synthetic_sph(&sc).unwrap();

    let mut cfg = SolverConfig::nearest_br_defaults();
    cfg.max_outer = 500;
    cfg.inner_iters = 10.0;
    cfg.target_rel_err = Some(1e-4);
    let init = default_init(&lti, InitStrategy::Id, &cfg).unwrap();
    let (c0, e0, t0, p0) = snap();
    let t = Instant::now();
    let out = nearest_br(&lti, &init, &cfg).unwrap();
    let wall = t.elapsed().as_secs_f64();
    let (c1, e1, t1, p1) = snap();
    let restarts = out.trace.rows.iter().filter(|r| r.restart).count();
    println!(
        "seed 1: {wall:.2} s, {} iters ({restarts} restarts), rel_err {:.3e}, stop {:?}",
        out.trace.rows.len(),
        out.rel_err,
        out.stop_reason
    );
    println!(
        "cholesky fast path {} | eig calls {} | eig time {:.1} s ({:.0}% of wall) | psd total {:.1} s ({:.0}%)",
        c1 - c0,
        e1 - e0,
        t1 - t0,
        (t1 - t0) / wall * 100.0,
        p1 - p0,
        (p1 - p0) / wall * 100.0
    );
    let buckets: Vec<u64> = PERF_CLIP_BUCKETS
        .iter()
        .map(|b| b.load(Ordering::Relaxed))
        .collect();
    println!(
        "clipped-count buckets (1-2, 3-5, 6-10, 11-20, 21-50, >50): {buckets:?}"
    );
    println!(
        "subspace hits {} | misses {}",
        PERF_SUBSPACE_HITS.load(Ordering::Relaxed),
        PERF_SUBSPACE_MISSES.load(Ordering::Relaxed)
    );
    // Per-10-iteration timing and error to see phase behavior.
    let rows = &out.trace.rows;
    let mut prev_t = 0.0;
    for chunk in rows.chunks(25) {
        let last = chunk.last().unwrap();
        println!(
            "k={:3} e={:.3e} beta={:.2} I={:4.1} block_dt={:6.2}s restarts={}",
            last.k,
            last.rel_err,
            last.beta,
            last.inner_i,
            last.time_s - prev_t,
            chunk.iter().filter(|r| r.restart).count()
        );
        prev_t = last.time_s;
    }
}
