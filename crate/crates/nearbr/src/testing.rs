//! Slow reference implementations used by tests to cross-check the
//! production paths. Nothing here is tuned for speed; keep problem sizes
//! tiny.

use crate::error::Result;
use crate::matcore::{fro_dist, psd_project, sym};
use crate::sysmodel::{split_z, SphForm, ZBlock};
use crate::zproj::project_affine_d;
use nalgebra::DMatrix;

/// Deterministic uniform(-0.5, 0.5) matrix from a 64-bit LCG; test fixtures
/// only (the shipped generators live in `datagen`).
pub fn lcg_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
    DMatrix::from_fn(n, m, |_, _| {
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    })
}

/// Strict sPH fixture with a diagonally dominant passivity block; handy for
/// tests that need a system known to be bounded real by construction.
pub fn strict_sph_fixture(n: usize, m: usize, seed: u64) -> SphForm {
    let g = lcg_matrix(n, n, seed);
    let j = (&g - g.transpose()) * 0.5;
    let h = lcg_matrix(n, n, seed + 1);
    let r = &h * h.transpose() + DMatrix::identity(n, n);
    let w = lcg_matrix(n, n, seed + 2);
    let q = &w * w.transpose() + DMatrix::identity(n, n) * 0.5;
    let f = lcg_matrix(n, m, seed + 3) * 0.1;
    let p = lcg_matrix(n, m, seed + 4) * 0.1;
    let d = lcg_matrix(m, m, seed + 5) * 0.1;
    SphForm::new(j, r, q, f, p, d).expect("fixture blocks are structured by construction")
}

/// Dykstra's alternating projections between the PSD cone and the
/// identity-block affine subspace. Converges to the exact Frobenius
/// projection of `target` onto their intersection, unlike plain alternating
/// projections which only reach some intersection point.
pub fn dykstra_project_onto_z(
    target: &DMatrix<f64>,
    n: usize,
    m: usize,
    tol: f64,
    max_iters: usize,
) -> Result<ZBlock> {
    let size = n + 2 * m;
    let mut x = sym(target)?;
    let mut p = DMatrix::zeros(size, size);
    let mut q = DMatrix::zeros(size, size);
    let mut y = x.clone();
    for _ in 0..max_iters {
        let yp = psd_project(&(&x + &p), 0.0)?;
        p = &x + &p - &yp;
        let xn = project_affine_d(&(&yp + &q), n, m)?;
        q = &yp + &q - &xn;
        let gap = fro_dist(&xn, &y);
        y = yp;
        let split_gap = fro_dist(&xn, &y);
        x = xn;
        if gap <= tol && split_gap <= tol.max(1e-12) * 10.0 {
            break;
        }
    }
    split_z(&x, n, m)
}

/// Two-sided difference quotient `(f(h) - f(-h)) / (2h)` for directional
/// derivative checks.
pub fn central_diff<F: FnMut(f64) -> f64>(mut f: F, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}
