//! Dense symmetric-matrix kernels: symmetric/skew parts, Frobenius norms,
//! eigendecomposition, and spectral projections onto PSD cones.
//!
//! All kernels reject non-finite input. The eigendecomposition is backed by
//! faer's self-adjoint solver; everything downstream goes through [`sym_eig`]
//! so there is exactly one spectral backend in the crate.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Eigendecomposition of a symmetric matrix.
///
/// `values` are sorted ascending; `vectors` holds the matching orthonormal
/// eigenvectors as columns, so `M = V diag(values) V^T`.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub(crate) fn check_finite(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if !m[(i, j)].is_finite() {
                return Err(Error::NonFinite {
                    context,
                    row: i,
                    col: j,
                });
            }
        }
    }
    Ok(())
}

fn check_square(m: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            context,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(())
}

/// Symmetric part `(M + M^T) / 2`.
pub fn sym(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m, "sym")?;
    check_finite(m, "sym")?;
    Ok((m + m.transpose()) * 0.5)
}

/// Skew-symmetric part `(M - M^T) / 2`.
pub fn skew(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_square(m, "skew")?;
    check_finite(m, "skew")?;
    Ok((m - m.transpose()) * 0.5)
}

/// Frobenius norm. Zero-sized matrices have norm 0.
pub fn fro_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Frobenius norm of the difference `a - b` without materializing it.
pub fn fro_dist(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues ascending.
///
/// The input is symmetrized internally, so mild asymmetry from accumulated
/// rounding is tolerated; callers that need strictness should compare
/// `M` with `sym(M)` themselves.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<SymEig> {
    check_square(m, "sym_eig")?;
    check_finite(m, "sym_eig")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SymEig {
            values: DVector::zeros(0),
            vectors: DMatrix::zeros(0, 0),
        });
    }
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let eig = fm
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::EigFailure {
            context: "sym_eig",
            detail: format!("{e:?}"),
        })?;
    let values = DVector::from_fn(n, |i, _| eig.S()[i]);
    let vectors = DMatrix::from_fn(n, n, |i, j| eig.U()[(i, j)]);
    Ok(SymEig { values, vectors })
}

/// Smallest and largest eigenvalue `(lambda_min, lambda_max)` of a symmetric
/// matrix.
pub fn lambda_extreme(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let eig = sym_eig(m)?;
    let n = eig.values.len();
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((eig.values[0], eig.values[n - 1]))
}

/// Spectral norm (largest singular value) of a general matrix, computed as
/// `sqrt(lambda_max(M^T M))`.
pub fn spectral_norm(m: &DMatrix<f64>) -> Result<f64> {
    check_finite(m, "spectral_norm")?;
    if m.is_empty() {
        return Ok(0.0);
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    let (_, hi) = lambda_extreme(&gram)?;
    Ok(hi.max(0.0).sqrt())
}

/// Nearest (Frobenius) matrix with all eigenvalues `>= floor`:
/// symmetrize, then clamp the spectrum at `floor`.
///
/// When `sym(M) - floor*I` is already positive definite the projection is the
/// identity map; a Cholesky probe detects that case and skips the
/// eigendecomposition.
// PERF_COUNTERS (temporary instrumentation, remove before release)
pub static PERF_CHOLESKY_HITS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PERF_EIG_CALLS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PERF_EIG_NANOS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PERF_PSD_NANOS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PERF_SUBSPACE_HITS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
pub static PERF_SUBSPACE_MISSES: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
// clipped-count buckets: [1-2, 3-5, 6-10, 11-20, 21-50, >50]
pub static PERF_CLIP_BUCKETS: [std::sync::atomic::AtomicU64; 6] = [
    std::sync::atomic::AtomicU64::new(0),
    std::sync::atomic::AtomicU64::new(0),
    std::sync::atomic::AtomicU64::new(0),
    std::sync::atomic::AtomicU64::new(0),
    std::sync::atomic::AtomicU64::new(0),
    std::sync::atomic::AtomicU64::new(0),
];

pub fn psd_project(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let t_psd = std::time::Instant::now();
    let r = psd_project_inner(m, floor);
    PERF_PSD_NANOS.fetch_add(t_psd.elapsed().as_nanos() as u64, std::sync::atomic::Ordering::Relaxed);
    r
}

fn psd_project_inner(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    check_square(m, "psd_project")?;
    check_finite(m, "psd_project")?;
    if !floor.is_finite() {
        return Err(Error::Config(format!(
            "psd_project floor must be finite, got {floor}"
        )));
    }
    let s = (m + m.transpose()) * 0.5;
    let n = s.nrows();
    let shifted = if floor == 0.0 {
        s.clone()
    } else {
        let mut t = s.clone();
        for i in 0..n {
            t[(i, i)] -= floor;
        }
        t
    };
    if shifted.cholesky().is_some() {
        PERF_CHOLESKY_HITS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        return Ok(s);
    }
    let t_eig = std::time::Instant::now();
    let eig = sym_eig(&s)?;
    PERF_EIG_CALLS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    PERF_EIG_NANOS.fetch_add(t_eig.elapsed().as_nanos() as u64, std::sync::atomic::Ordering::Relaxed);
    // Eigenvalues come back ascending, so the clipped ones are a prefix.
    let clipped = eig.values.iter().take_while(|&&lam| lam < floor).count();
    if clipped == 0 {
        // Borderline PSD: Cholesky refused but nothing is below the floor.
        return Ok(s);
    }
    let bucket = match clipped {
        1..=2 => 0,
        3..=5 => 1,
        6..=10 => 2,
        11..=20 => 3,
        21..=50 => 4,
        _ => 5,
    };
    PERF_CLIP_BUCKETS[bucket].fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    Ok(reconstruct_clipped(&s, floor, &eig, clipped))
}

/// Assemble the projection from an eigendecomposition whose first `clipped`
/// eigenvalues fall below the floor.
fn reconstruct_clipped(s: &DMatrix<f64>, floor: f64, eig: &SymEig, clipped: usize) -> DMatrix<f64> {
    let n = s.nrows();
    if 2 * clipped <= n {
        // Low-rank correction: projecting raises exactly the clipped
        // eigenvalues to the floor, X = S + W W^T with rank = clipped.
        let mut w = eig.vectors.columns(0, clipped).clone_owned();
        for k in 0..clipped {
            let scale = (floor - eig.values[k]).sqrt();
            w.column_mut(k).scale_mut(scale);
        }
        s + &w * w.transpose()
    } else {
        // Mostly clipped: build from the surviving eigenpairs instead.
        let kept = n - clipped;
        let mut w = eig.vectors.columns(clipped, kept).clone_owned();
        for k in 0..kept {
            let scale = (eig.values[clipped + k] - floor).sqrt();
            w.column_mut(k).scale_mut(scale);
        }
        DMatrix::identity(n, n) * floor + &w * w.transpose()
    }
}

/// Columns the projector carries between calls beyond the clipped ones, to
/// track eigenvalues hovering just above the floor.
const SUBSPACE_PAD: usize = 4;
/// Carried-basis width cap; wider clipped spectra fall back to the full
/// eigendecomposition where the dense solver is the right tool anyway.
const SUBSPACE_MAX_COLS: usize = 40;
/// Below this dimension the dense path is cheap enough that the bookkeeping
/// does not pay for itself.
const SUBSPACE_MIN_DIM: usize = 48;

/// Repeated-projection accelerator for [`psd_project`] on slowly drifting
/// matrices, as produced by warm-started splitting iterations.
///
/// The clipped eigenvectors of the previous call are carried as a subspace
/// basis. On the next call a Rayleigh-Ritz solve inside that subspace
/// reconstructs the projection at a fraction of the dense cost, and the
/// result is accepted only when (a) every Ritz pair used has a small
/// residual, so the reconstruction is close to the true projection, and
/// (b) a shifted Cholesky probe certifies the output is PSD up to a strict
/// floor guard, which in particular fails whenever a below-floor direction
/// escaped the carried basis. Any rejection falls back to the dense path,
/// so outputs agree with [`psd_project`] up to the residual tolerance.
#[derive(Debug, Clone, Default)]
pub struct PsdProjector {
    basis: Option<DMatrix<f64>>,
}

impl PsdProjector {
    pub fn new() -> Self {
        Self { basis: None }
    }

    pub fn project(&mut self, m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
        let t_psd = std::time::Instant::now();
        let r = self.project_inner(m, floor);
        PERF_PSD_NANOS.fetch_add(t_psd.elapsed().as_nanos() as u64, std::sync::atomic::Ordering::Relaxed);
        r
    }

    fn project_inner(&mut self, m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
        check_square(m, "psd_project")?;
        check_finite(m, "psd_project")?;
        if !floor.is_finite() {
            return Err(Error::Config(format!(
                "psd_project floor must be finite, got {floor}"
            )));
        }
        let s = (m + m.transpose()) * 0.5;
        let n = s.nrows();
        let shifted = if floor == 0.0 {
            s.clone()
        } else {
            let mut t = s.clone();
            for i in 0..n {
                t[(i, i)] -= floor;
            }
            t
        };
        if shifted.cholesky().is_some() {
            PERF_CHOLESKY_HITS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            return Ok(s);
        }
        if n >= SUBSPACE_MIN_DIM {
            if let Some(x) = self.try_subspace(&s, floor) {
                PERF_SUBSPACE_HITS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                return Ok(x);
            }
            PERF_SUBSPACE_MISSES.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        let t_eig = std::time::Instant::now();
        let eig = sym_eig(&s)?;
        PERF_EIG_CALLS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        PERF_EIG_NANOS.fetch_add(t_eig.elapsed().as_nanos() as u64, std::sync::atomic::Ordering::Relaxed);
        let clipped = eig.values.iter().take_while(|&&lam| lam < floor).count();
        if clipped == 0 {
            self.basis = None;
            return Ok(s);
        }
        // Harvest the clipped eigenvectors plus a few boundary watchers for
        // the next call.
        let carry = (clipped + SUBSPACE_PAD).min(n);
        self.basis = if clipped <= SUBSPACE_MAX_COLS {
            Some(eig.vectors.columns(0, carry.min(SUBSPACE_MAX_COLS)).clone_owned())
        } else {
            None
        };
        Ok(reconstruct_clipped(&s, floor, &eig, clipped))
    }

    /// Rayleigh-Ritz reconstruction inside the carried basis; `None` means
    /// the caller must take the dense path (and refresh the basis).
    fn try_subspace(&mut self, s: &DMatrix<f64>, floor: f64) -> Option<DMatrix<f64>> {
        let b = self.basis.as_ref()?;
        let n = s.nrows();
        if b.nrows() != n || b.ncols() == 0 || b.ncols() + 1 >= n {
            return None;
        }
        let cols = b.ncols();
        let scale = 1.0 + fro_norm(s);
        // Orthonormalize the carried basis; it is near-orthonormal already,
        // so a plain QR is enough, but degenerate bases are rejected.
        let qr = b.clone().qr();
        let r = qr.r();
        for i in 0..cols {
            if r[(i, i)].abs() < 1e-10 {
                return None;
            }
        }
        let q = qr.q();
        let sq = s * &q;
        let t = q.transpose() * &sq;
        let te = sym_eig(&t).ok()?;
        let k = te.values.iter().take_while(|&&th| th < floor).count();
        // No Ritz value below the floor (stale basis) and a fully clipped
        // basis (likely more directions outside) both disqualify.
        if k == 0 || k == cols {
            return None;
        }
        // Rotate the whole basis to Ritz vectors; the leading k are the
        // certified clips and the next few keep watching the boundary.
        let keep = (k + SUBSPACE_PAD).min(cols);
        let ritz = &q * te.vectors.columns(0, keep);
        let v = ritz.columns(0, k).clone_owned();
        let sv = &sq * te.vectors.columns(0, k);
        // Residual bound keeps the reconstruction near the true projection.
        let tau = 1e-7 * scale;
        for j in 0..k {
            let rj = sv.column(j) - v.column(j) * te.values[j];
            if rj.norm() > tau {
                return None;
            }
        }
        let mut w = v.clone_owned();
        for j in 0..k {
            w.column_mut(j).scale_mut((floor - te.values[j]).sqrt());
        }
        let x = s + &w * w.transpose();
        // Certification: the output must clear the floor minus a strict
        // guard; a below-floor direction missing from the basis leaves its
        // eigenvalue untouched in x and fails this probe.
        let guard = 1e-9 * scale;
        let mut probe = x.clone();
        let bar = floor - guard;
        for i in 0..n {
            probe[(i, i)] -= bar;
        }
        if probe.cholesky().is_none() {
            return None;
        }
        self.basis = Some(ritz);
        Some(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
        DMatrix::from_fn(n, m, |_, _| {
            s = s
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    #[test]
    fn sym_and_skew_of_hand_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        let s = sym(&m).unwrap();
        let k = skew(&m).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]));
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
    }

    #[test]
    fn sym_plus_skew_recovers_input() {
        for seed in 1..30u64 {
            let m = lcg_matrix(6, 6, seed);
            let back = sym(&m).unwrap() + skew(&m).unwrap();
            assert!(
                fro_dist(&back, &m) <= 1e-15 * (1.0 + fro_norm(&m)),
                "sym + skew must reproduce the input"
            );
        }
    }

    #[test]
    fn rectangular_input_rejected_for_square_ops() {
        let m = DMatrix::zeros(2, 3);
        assert!(sym(&m).is_err());
        assert!(skew(&m).is_err());
        assert!(sym_eig(&m).is_err());
        assert!(psd_project(&m, 0.0).is_err());
    }

    #[test]
    fn non_finite_entries_rejected() {
        let mut m = DMatrix::zeros(3, 3);
        m[(1, 2)] = f64::NAN;
        assert!(matches!(
            sym(&m),
            Err(Error::NonFinite { row: 1, col: 2, .. })
        ));
        m[(1, 2)] = f64::INFINITY;
        assert!(sym_eig(&m).is_err());
    }

    #[test]
    fn fro_norm_hand_values() {
        assert_eq!(fro_norm(&DMatrix::from_row_slice(1, 2, &[3.0, 4.0])), 5.0);
        assert_eq!(fro_norm(&DMatrix::<f64>::identity(4, 4)), 2.0);
        assert_eq!(fro_norm(&DMatrix::<f64>::zeros(0, 0)), 0.0);
    }

    #[test]
    fn eigendecomposition_contract_on_random_matrices() {
        for &n in &[1usize, 2, 5, 20, 40] {
            let m = lcg_matrix(n, n, 7 + n as u64);
            let s = sym(&m).unwrap();
            let eig = sym_eig(&s).unwrap();
            // eigenvalues ascending
            for i in 1..n {
                assert!(
                    eig.values[i] >= eig.values[i - 1],
                    "eigenvalues must be sorted ascending"
                );
            }
            // reconstruction
            let rec =
                &eig.vectors * DMatrix::from_diagonal(&eig.values) * eig.vectors.transpose();
            assert!(
                fro_dist(&rec, &s) <= 1e-12 * fro_norm(&s).max(1e-300),
                "n={n}: reconstruction error too large"
            );
            // orthogonality
            let gram = eig.vectors.transpose() * &eig.vectors;
            let id = DMatrix::identity(n, n);
            assert!(
                fro_dist(&gram, &id) <= 1e-10 * (n as f64).sqrt(),
                "n={n}: eigenvector basis not orthonormal"
            );
        }
    }

    #[test]
    fn eigendecomposition_handles_degenerate_spectra() {
        let z = DMatrix::<f64>::zeros(4, 4);
        let e = sym_eig(&z).unwrap();
        assert!(e.values.iter().all(|&v| v.abs() <= 1e-15));

        let id = DMatrix::<f64>::identity(5, 5);
        let e = sym_eig(&id).unwrap();
        assert!(e.values.iter().all(|&v| (v - 1.0).abs() <= 1e-14));
        let gram = e.vectors.transpose() * &e.vectors;
        assert!(fro_dist(&gram, &DMatrix::identity(5, 5)) <= 1e-12);

        let one = DMatrix::from_row_slice(1, 1, &[-3.5]);
        let e = sym_eig(&one).unwrap();
        assert_eq!(e.values[0], -3.5);
        assert_eq!(e.vectors[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn lambda_extreme_hand_values_and_cross_check() {
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0]));
        assert_eq!(lambda_extreme(&d).unwrap(), (-2.0, 3.0));
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(lambda_extreme(&id).unwrap(), (1.0, 1.0));

        let m = lcg_matrix(9, 9, 42);
        let s = sym(&m).unwrap();
        let (lo, hi) = lambda_extreme(&s).unwrap();
        let full = sym_eig(&s).unwrap();
        assert!((lo - full.values[0]).abs() <= 1e-14);
        assert!((hi - full.values[8]).abs() <= 1e-14);
    }

    #[test]
    fn psd_projection_hand_values() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        let p = psd_project(&m, 0.0).unwrap();
        assert!(fro_dist(&p, &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]))) <= 1e-15);

        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![0.05, 2.0]));
        let p = psd_project(&m, 0.1).unwrap();
        assert!(fro_dist(&p, &DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 2.0]))) <= 1e-15);
    }

    #[test]
    fn psd_projection_fast_path_is_identity_on_definite_input() {
        let m = lcg_matrix(6, 6, 3);
        let pd = &m * m.transpose() + DMatrix::identity(6, 6);
        let p = psd_project(&pd, 0.5).unwrap();
        assert_eq!(p, sym(&pd).unwrap(), "definite input must pass through untouched");
    }

    #[test]
    fn psd_projection_is_idempotent_and_feasible() {
        for seed in 1..20u64 {
            let s = sym(&lcg_matrix(7, 7, seed)).unwrap();
            let floor = if seed % 2 == 0 { 0.0 } else { 0.05 };
            let p = psd_project(&s, floor).unwrap();
            let (lo, _) = lambda_extreme(&p).unwrap();
            assert!(lo >= floor - 1e-12, "projected spectrum respects the floor");
            let pp = psd_project(&p, floor).unwrap();
            assert!(fro_dist(&pp, &p) <= 1e-12 * (1.0 + fro_norm(&p)));
        }
    }

    #[test]
    fn psd_projection_dominates_random_feasible_probes() {
        // The projection is the unique nearest feasible point, so no sampled
        // feasible matrix may be closer to the input.
        for seed in 1..15u64 {
            let s = sym(&lcg_matrix(5, 5, 100 + seed)).unwrap();
            let p = psd_project(&s, 0.0).unwrap();
            let d_star = fro_dist(&p, &s);
            for probe_seed in 0..8u64 {
                let g = lcg_matrix(5, 5, 1000 * seed + probe_seed);
                let probe = &g * g.transpose();
                assert!(
                    fro_dist(&probe, &s) + 1e-12 >= d_star,
                    "a feasible probe beat the projection"
                );
            }
        }
    }

    #[test]
    fn spectral_norm_matches_hand_values() {
        let m = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert!((spectral_norm(&m).unwrap() - 5.0).abs() <= 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![-7.0, 2.0]));
        assert!((spectral_norm(&d).unwrap() - 7.0).abs() <= 1e-12);
    }

    // Symmetric matrix with a prescribed spectrum, for projector stress tests.
    fn with_spectrum(values: &[f64], seed: u64) -> DMatrix<f64> {
        let n = values.len();
        let q = lcg_matrix(n, n, seed).qr().q();
        &q * DMatrix::from_diagonal(&DVector::from_row_slice(values)) * q.transpose()
    }

    #[test]
    fn projector_tracks_dense_projection_under_drift() {
        // A slowly drifting matrix with a handful of negative eigenvalues is
        // the warm-started splitting workload; the carried-subspace path must
        // stay within its residual tolerance of the dense result.
        let n = 60;
        let mut vals: Vec<f64> = (0..n).map(|i| 0.02 + 0.05 * i as f64).collect();
        for (i, v) in vals.iter_mut().take(6).enumerate() {
            *v = -1e-3 * (i + 1) as f64;
        }
        let mut s = with_spectrum(&vals, 9001);
        let mut proj = PsdProjector::new();
        for step in 0..25u64 {
            let fast = proj.project(&s, 0.0).unwrap();
            let dense = psd_project(&s, 0.0).unwrap();
            let scale = 1.0 + fro_norm(&s);
            assert!(
                fro_dist(&fast, &dense) <= 1e-6 * scale,
                "step {step}: subspace and dense projections diverged by {:.3e}",
                fro_dist(&fast, &dense)
            );
            let (lo, _) = lambda_extreme(&fast).unwrap();
            assert!(lo >= -1e-8 * scale, "step {step}: output left the cone: {lo:.3e}");
            s += sym(&(lcg_matrix(n, n, 7000 + step) * 1e-5)).unwrap();
        }
    }

    #[test]
    fn projector_survives_sudden_rank_jumps() {
        // New negative directions appearing between calls escape the carried
        // basis; certification must reject the shortcut and fall back.
        let n = 56;
        let mut vals: Vec<f64> = (0..n).map(|i| 0.1 + 0.04 * i as f64).collect();
        vals[0] = -0.02;
        vals[1] = -0.005;
        let mut s = with_spectrum(&vals, 42);
        let mut proj = PsdProjector::new();
        for step in 0..10u64 {
            if step == 4 || step == 7 {
                // rank-2 negative shock, far larger than any drift
                let u = lcg_matrix(n, 2, 31 + step);
                s -= &u * u.transpose() * 0.3;
                s = sym(&s).unwrap();
            }
            let fast = proj.project(&s, 0.0).unwrap();
            let dense = psd_project(&s, 0.0).unwrap();
            let scale = 1.0 + fro_norm(&s);
            assert!(
                fro_dist(&fast, &dense) <= 1e-6 * scale,
                "step {step}: divergence after rank jump"
            );
            s += sym(&(lcg_matrix(n, n, 8800 + step) * 1e-6)).unwrap();
        }
    }

    #[test]
    fn projector_recovers_from_poisoned_basis() {
        let n = 52;
        let mut vals: Vec<f64> = (0..n).map(|i| 0.05 * (i as f64 + 1.0)).collect();
        vals[0] = -0.04;
        vals[1] = -0.01;
        let s = with_spectrum(&vals, 77);
        let mut proj = PsdProjector::new();
        proj.basis = Some(lcg_matrix(n, 5, 123));
        let fast = proj.project(&s, 0.0).unwrap();
        let dense = psd_project(&s, 0.0).unwrap();
        assert!(fro_dist(&fast, &dense) <= 1e-6 * (1.0 + fro_norm(&s)));
        // wrong-size basis as well
        proj.basis = Some(lcg_matrix(n + 3, 4, 124));
        let fast = proj.project(&s, 0.0).unwrap();
        assert!(fro_dist(&fast, &dense) <= 1e-6 * (1.0 + fro_norm(&s)));
    }

    #[test]
    fn projector_handles_boundary_clusters_and_floors() {
        // Eigenvalues straddling the floor by hair-widths: either clipping
        // choice moves the output by at most the cluster width.
        let n = 50;
        let mut vals: Vec<f64> = (0..n).map(|i| 0.3 + 0.02 * i as f64).collect();
        vals[0] = -1e-12;
        vals[1] = 1e-12;
        vals[2] = -1e-9;
        vals[3] = 1e-9;
        vals[4] = -0.03;
        for floor in [0.0, 0.1] {
            let shift = if floor == 0.0 { 0.0 } else { floor };
            let vv: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let mut s = with_spectrum(&vv, 500);
            let mut proj = PsdProjector::new();
            for step in 0..8u64 {
                let fast = proj.project(&s, floor).unwrap();
                let dense = psd_project(&s, floor).unwrap();
                let scale = 1.0 + fro_norm(&s);
                assert!(
                    fro_dist(&fast, &dense) <= 1e-6 * scale,
                    "floor {floor}, step {step}"
                );
                let (lo, _) = lambda_extreme(&fast).unwrap();
                assert!(lo >= floor - 1e-8 * scale);
                s += sym(&(lcg_matrix(n, n, 9600 + step) * 1e-7)).unwrap();
            }
        }
    }

    #[test]
    fn projector_matches_free_function_on_small_matrices() {
        // Below the subspace size cutoff the projector is the dense path.
        for seed in 1..10u64 {
            let s = sym(&lcg_matrix(7, 7, 3000 + seed)).unwrap();
            let mut proj = PsdProjector::new();
            let a = proj.project(&s, 0.0).unwrap();
            let b = psd_project(&s, 0.0).unwrap();
            assert_eq!(a, b);
        }
    }
}
