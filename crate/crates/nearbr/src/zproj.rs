//! Projection onto the structured constraint set: symmetric PSD matrices
//! whose (2,2) and (3,3) blocks equal the identity.
//!
//! The workhorse is an ADMM splitting between the PSD cone and the affine
//! identity-block subspace, warm-startable across repeated projections, with
//! a final spectral-radius clip that restores exact feasibility of the
//! returned blocks.

use crate::error::{Error, Result};
use crate::matcore::{self, fro_norm};
use crate::sysmodel::{split_z, ZBlock};
use nalgebra::DMatrix;

/// Dual/auxiliary iterates carried between successive ADMM projections,
/// together with the spectral subspace the PSD step reuses across sweeps.
#[derive(Debug, Clone)]
pub struct AdmmState {
    y: DMatrix<f64>,
    lambda: DMatrix<f64>,
    proj: matcore::PsdProjector,
    size: usize,
}

impl AdmmState {
    pub fn new(n: usize, m: usize) -> Self {
        let size = n + 2 * m;
        Self {
            y: DMatrix::zeros(size, size),
            lambda: DMatrix::zeros(size, size),
            proj: matcore::PsdProjector::new(),
            size,
        }
    }
}

/// Result of one ADMM projection call.
#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    /// Feasible blocks after the final clip.
    pub zb: ZBlock,
    /// Final splitting residual `||X - Y||_F`.
    pub residual: f64,
    /// Iterations actually performed.
    pub iters_run: usize,
}

/// Replace the (2,2) and (3,3) diagonal blocks with identities, leaving
/// every other entry untouched.
pub fn project_affine_d(mtx: &DMatrix<f64>, n: usize, m: usize) -> Result<DMatrix<f64>> {
    let size = n + 2 * m;
    if mtx.shape() != (size, size) {
        return Err(Error::DimensionMismatch {
            context: "project_affine_d",
            detail: format!(
                "expected {size}x{size} for n={n}, m={m}, got {}x{}",
                mtx.nrows(),
                mtx.ncols()
            ),
        });
    }
    let mut out = mtx.clone();
    for j in 0..m {
        for i in 0..m {
            let t = if i == j { 1.0 } else { 0.0 };
            out[(n + i, n + j)] = t;
            out[(n + m + i, n + m + j)] = t;
        }
    }
    Ok(out)
}

/// Scale the off-diagonal blocks of a PSD matrix so that forcing exact
/// identity (2,2)/(3,3) blocks keeps the assembled matrix PSD:
/// `alpha_i = max(1, lambda_max(X_ii))`, then
/// `Z12 = X12/alpha_2`, `Z13 = X13/alpha_3`, `Z23 = X23/(alpha_2 alpha_3)`.
///
/// The input must be PSD up to `-tol * ||X||_F`; a Cholesky probe covers the
/// common case and the exact eigenvalue is consulted only when it fails.
pub fn clip_to_feasible(x: &DMatrix<f64>, n: usize, m: usize, tol: f64) -> Result<ZBlock> {
    let size = n + 2 * m;
    if x.shape() != (size, size) {
        return Err(Error::DimensionMismatch {
            context: "clip_to_feasible",
            detail: format!(
                "expected {size}x{size} for n={n}, m={m}, got {}x{}",
                x.nrows(),
                x.ncols()
            ),
        });
    }
    let shift = tol * fro_norm(x);
    let mut probe = matcore::sym(x)?;
    for i in 0..size {
        probe[(i, i)] += shift;
    }
    if probe.cholesky().is_none() {
        let (lo, _) = matcore::lambda_extreme(x)?;
        if lo < -shift {
            return Err(Error::NotPositiveDefinite {
                context: "clip_to_feasible input",
                lambda_min: lo,
            });
        }
    }
    let parts = split_z(x, n, m)?;
    let x22 = x.view((n, n), (m, m)).into_owned();
    let x33 = x.view((n + m, n + m), (m, m)).into_owned();
    let (_, l22) = matcore::lambda_extreme(&x22)?;
    let (_, l33) = matcore::lambda_extreme(&x33)?;
    let a2 = l22.max(1.0);
    let a3 = l33.max(1.0);
    Ok(ZBlock {
        z11: matcore::sym(&parts.z11)?,
        z12: parts.z12 / a2,
        z13: parts.z13 / a3,
        z23: parts.z23 / (a2 * a3),
    })
}

/// Approximate Frobenius projection of `target` onto the constraint set by
/// ADMM with penalty `rho`, run for at most `max_iters` sweeps or until the
/// splitting residual drops below `tol * (1 + ||target||_F)`.
///
/// Passing `state` warm-starts from (and updates) the auxiliary iterates of a
/// previous call; `None` cold-starts from the target itself. The returned
/// blocks are always exactly feasible thanks to the final clip.
pub fn admm_project_onto_z(
    target: &DMatrix<f64>,
    n: usize,
    m: usize,
    rho: f64,
    max_iters: usize,
    tol: f64,
    state: Option<&mut AdmmState>,
) -> Result<AdmmOutcome> {
    let size = n + 2 * m;
    if target.shape() != (size, size) {
        return Err(Error::DimensionMismatch {
            context: "admm_project_onto_z",
            detail: format!(
                "expected {size}x{size} for n={n}, m={m}, got {}x{}",
                target.nrows(),
                target.ncols()
            ),
        });
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::Config(format!("admm rho must be positive, got {rho}")));
    }
    if max_iters == 0 {
        return Err(Error::Config("admm needs at least one iteration".into()));
    }
    let z = matcore::sym(target)?;
    let lam = 1.0 / (1.0 + rho);
    let scale = 1.0 + fro_norm(&z);

    let mut cold = AdmmState::new(n, m);
    let warm = match state {
        Some(s) => {
            if s.size != size {
                return Err(Error::DimensionMismatch {
                    context: "admm_project_onto_z state",
                    detail: format!("state is for size {}, call is size {size}", s.size),
                });
            }
            s
        }
        None => {
            cold.y = z.clone();
            &mut cold
        }
    };

    let mut x = DMatrix::zeros(size, size);
    let mut residual = f64::INFINITY;
    let mut iters_run = 0;
    for _ in 0..max_iters {
        let target_x = &z * lam + (&warm.y + &warm.lambda) * (1.0 - lam);
        x = warm.proj.project(&target_x, 0.0)?;
        warm.y = project_affine_d(&(&z * lam + (&x - &warm.lambda) * (1.0 - lam)), n, m)?;
        warm.lambda -= &x - &warm.y;
        iters_run += 1;
        residual = matcore::fro_dist(&x, &warm.y);
        if residual <= tol * scale {
            break;
        }
    }
    let zb = clip_to_feasible(&x, n, m, 1e-8)?;
    Ok(AdmmOutcome {
        zb,
        residual,
        iters_run,
    })
}
