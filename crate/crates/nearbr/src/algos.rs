//! The two outer solvers: extrapolated alternating optimization for the
//! bounded-realness check and for the nearest bounded-real system in
//! structured (J, R, Q, F, P, D) form, plus their shared restart and
//! stopping bookkeeping, initialization strategies, and error reporting.

use crate::error::{Error, Result};
use crate::fgm::{
    cert_lipschitz, fgm_run, fgm_run_carry, CertProblem, FgmCarry, FgmVar,
    JzVar, PassivityFitProblem, QuadProblem, WeightedCertProblem, WeightedJzProblem, ZProjector,
};
use crate::matcore::{lambda_extreme, psd_project, skew, spectral_norm, sym};
use crate::sysmodel::{assemble_z, sph_to_lti, zblock_to_rfpd, LtiSystem, SphForm, ZBlock};
use crate::zproj::{admm_project_onto_z, AdmmState};
use nalgebra::DMatrix;
use std::time::Instant;

/// Below this relative error a run is treated as numerically solved and
/// stops regardless of the window rule.
pub const ERROR_FLOOR: f64 = 1e-13;
/// Early-exit tolerance for the warm inner passivity projections.
const ADMM_INNER_TOL: f64 = 1e-6;
/// Tolerance and iteration cap for the high-accuracy projection applied
/// before a structured model is emitted.
const FINAL_PROJ_TOL: f64 = 1e-8;
const FINAL_PROJ_CAP: usize = 500;
/// Relative eigenvalue threshold below which an emitted energy matrix is
/// flagged as degenerate (semidefinite rather than definite).
const DEGENERATE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Outer iteration cap K.
    pub max_outer: usize,
    /// Inner iteration budget I for the gradient and splitting loops. The
    /// check solver keeps it integer (ceiling growth on restart); the
    /// nearest solver grows it fractionally and rounds up at dispatch.
    pub inner_iters: f64,
    /// Relative stopping tolerance delta.
    pub delta: f64,
    /// Initial extrapolation weight, in [0, 1).
    pub beta: f64,
    /// Restart divisor eta and growth factor gamma with eta > gamma > 1.
    pub eta: f64,
    pub gamma: f64,
    /// Splitting penalty rho.
    pub rho: f64,
    /// Eigenvalue floor for the check solver's certificate factor; `None`
    /// picks 1e-6 times the spectral norm of A.
    pub epsilon: Option<f64>,
    /// Objective weights (A, B, C, D terms).
    pub weights: [f64; 4],
    /// Wall-clock budget in seconds; checked after each outer iteration.
    pub time_limit: Option<f64>,
    /// Relative-error threshold for the "bounded real within tolerance"
    /// verdict of the check solver.
    pub br_tol: f64,
    /// Optional early stop once the accepted relative error reaches this
    /// value; useful for accuracy-versus-iterations studies.
    pub target_rel_err: Option<f64>,
    /// Reuse splitting state across inner projections.
    pub admm_warm_start: bool,
    /// Fraction of the budget handed to the check solver when it is used
    /// as an initialization strategy.
    pub init_budget_frac: f64,
}

impl SolverConfig {
    /// Defaults of the bounded-realness check solver.
    pub fn check_br_defaults() -> Self {
        SolverConfig {
            max_outer: 1000,
            inner_iters: 2.0,
            delta: 1e-6,
            beta: 0.5,
            eta: 2.0,
            gamma: 1.05,
            rho: 10.0,
            epsilon: None,
            weights: [1.0; 4],
            time_limit: None,
            br_tol: 1e-6,
            target_rel_err: None,
            admm_warm_start: true,
            init_budget_frac: 0.25,
        }
    }

    /// Defaults of the nearest bounded-real solver (larger inner budget).
    pub fn nearest_br_defaults() -> Self {
        SolverConfig {
            inner_iters: 10.0,
            ..Self::check_br_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.max_outer < 1 {
            return bad("max_outer must be at least 1".into());
        }
        if !(self.inner_iters.is_finite() && self.inner_iters >= 1.0) {
            return bad(format!("inner_iters must be >= 1, got {}", self.inner_iters));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return bad(format!("delta must be finite and >= 0, got {}", self.delta));
        }
        if !(self.beta >= 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if !(self.eta.is_finite() && self.gamma.is_finite() && self.eta > self.gamma && self.gamma > 1.0) {
            return bad(format!(
                "need eta > gamma > 1, got eta={}, gamma={}",
                self.eta, self.gamma
            ));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if let Some(eps) = self.epsilon {
            if !(eps.is_finite() && eps >= 0.0) {
                return bad(format!("epsilon must be finite and >= 0, got {eps}"));
            }
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad(format!(
                "weights must be finite and nonnegative, got {:?}",
                self.weights
            ));
        }
        if let Some(t) = self.time_limit {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("time_limit must be positive, got {t}"));
            }
        }
        if !(self.br_tol.is_finite() && self.br_tol > 0.0) {
            return bad(format!("br_tol must be positive, got {}", self.br_tol));
        }
        if let Some(t) = self.target_rel_err {
            if !(t.is_finite() && t > 0.0) {
                return bad(format!("target_rel_err must be positive, got {t}"));
            }
        }
        if !(self.init_budget_frac > 0.0 && self.init_budget_frac <= 1.0) {
            return bad(format!(
                "init_budget_frac must lie in (0, 1], got {}",
                self.init_budget_frac
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Hit the outer iteration cap.
    MaxOuter,
    /// Reached the user-requested target relative error.
    TargetReached,
    /// The error window shrank below delta times the first error.
    Stall,
    /// Error fell below the absolute floor.
    ErrorFloor,
    /// Wall-clock budget exhausted; the result is partial.
    TimeLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BrVerdict {
    BrWithinTol,
    NotCertified,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRow {
    pub k: usize,
    pub time_s: f64,
    /// Accepted relative error after this iteration (reverted on restart).
    pub rel_err: f64,
    /// Extrapolation weight after this iteration's update.
    pub beta: f64,
    /// Inner budget in effect for the next iteration.
    pub inner_i: f64,
    pub restart: bool,
}

#[derive(Debug, Clone, Default)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    /// Accepted errors never increase; restarts revert to the previous one.
    pub fn is_nonincreasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].rel_err <= w[0].rel_err * (1.0 + 1e-15))
    }
}

/// Outer-loop bookkeeping shared by both solvers: the iteration counter,
/// the accepted-error history, and the stall test.
///
/// The guard runs before each iteration k (1-based). Iterations up to
/// `gate` always run; afterwards the loop stops when the accepted error
/// `window` iterations back minus the latest one drops below delta * e_1.
/// A restart exempts the immediately following check so the reduced
/// extrapolation gets one try (the reverted error repeats in the history
/// and would otherwise always trip the window).
#[derive(Debug)]
pub(crate) struct OuterLoop {
    pub k: usize,
    errors: Vec<f64>,
    delta: f64,
    max_outer: usize,
    gate: usize,
    window: usize,
    skip_next_window_check: bool,
}

impl OuterLoop {
    pub(crate) fn new(delta: f64, max_outer: usize, gate: usize, window: usize) -> Self {
        OuterLoop {
            k: 1,
            errors: Vec::new(),
            delta,
            max_outer,
            gate,
            window,
            skip_next_window_check: false,
        }
    }

    pub(crate) fn check_br_shape(delta: f64, max_outer: usize) -> Self {
        Self::new(delta, max_outer, 3, 1)
    }

    pub(crate) fn nearest_br_shape(delta: f64, max_outer: usize) -> Self {
        Self::new(delta, max_outer, 4, 2)
    }

    /// `None` means run iteration `self.k`; otherwise why the loop stops.
    pub(crate) fn should_continue(&mut self) -> Option<StopReason> {
        if self.k > self.max_outer {
            return Some(StopReason::MaxOuter);
        }
        if let Some(&last) = self.errors.last() {
            if last <= ERROR_FLOOR {
                return Some(StopReason::ErrorFloor);
            }
        }
        if self.k <= self.gate {
            return None;
        }
        if self.skip_next_window_check {
            self.skip_next_window_check = false;
            return None;
        }
        let last = self.errors[self.k - 2];
        let earlier = self.errors[self.k - 2 - self.window];
        if earlier - last < self.delta * self.errors[0] {
            return Some(StopReason::Stall);
        }
        None
    }

    pub(crate) fn accept(&mut self, e: f64) {
        self.errors.push(e);
        self.k += 1;
    }

    /// Restart keeps the previous accepted error for this iteration.
    pub(crate) fn restart(&mut self) -> f64 {
        let e = *self
            .errors
            .last()
            .expect("restart is only reachable from the second iteration on");
        self.errors.push(e);
        self.k += 1;
        self.skip_next_window_check = true;
        e
    }

    pub(crate) fn last_error(&self) -> Option<f64> {
        self.errors.last().copied()
    }
}

/// Integer inner-budget growth with a guard against the 1.1 factor being
/// rounded up past the exact product (1.1 * 10 is not representable).
fn grow_ceil(i: usize) -> usize {
    (1.1 * i as f64 - 1e-9).ceil() as usize
}

fn dispatch_count(i: f64) -> usize {
    ((i - 1e-9).ceil().max(1.0)) as usize
}

/// Objective of the check formulation: the system is fit through
/// A Q ~ J - Z11/2, B ~ -Z12, C Q ~ -Z13^T, D ~ -Z23^T.
pub fn check_objective(sys: &LtiSystem, j: &DMatrix<f64>, zb: &ZBlock, q: &DMatrix<f64>) -> f64 {
    let r1 = &sys.a * q - (j - &zb.z11 * 0.5);
    let r2 = &sys.b + &zb.z12;
    let r3 = &sys.c * q + zb.z13.transpose();
    let r4 = &sys.d + zb.z23.transpose();
    r1.norm_squared() + r2.norm_squared() + r3.norm_squared() + r4.norm_squared()
}

/// Weighted objective of the nearest formulation: distance from (A,B,C,D)
/// to the model ((J - Z11/2) Q, -Z12, -Z13^T Q, -Z23^T).
pub fn weighted_objective(
    sys: &LtiSystem,
    j: &DMatrix<f64>,
    zb: &ZBlock,
    q: &DMatrix<f64>,
    w: &[f64; 4],
) -> f64 {
    let r1 = &sys.a - (j - &zb.z11 * 0.5) * q;
    let r2 = &sys.b + &zb.z12;
    let r3 = &sys.c + zb.z13.transpose() * q;
    let r4 = &sys.d + zb.z23.transpose();
    w[0] * r1.norm_squared()
        + w[1] * r2.norm_squared()
        + w[2] * r3.norm_squared()
        + w[3] * r4.norm_squared()
}

/// Weighted squared norm of the system itself, the normalizer of the
/// nearest formulation (its objective at the zero variables).
pub fn weighted_zero_reference(sys: &LtiSystem, w: &[f64; 4]) -> f64 {
    w[0] * sys.a.norm_squared()
        + w[1] * sys.b.norm_squared()
        + w[2] * sys.c.norm_squared()
        + w[3] * sys.d.norm_squared()
}

fn ratio_or_zero(num_sq: f64, den_sq: f64) -> Result<f64> {
    if num_sq == 0.0 {
        return Ok(0.0);
    }
    if den_sq == 0.0 {
        return Err(Error::Numeric(
            "relative error is undefined: zero reference norm with nonzero residual".into(),
        ));
    }
    Ok((num_sq / den_sq).sqrt())
}

/// Relative distance sqrt(f^w(J,Z,Q) / f^w(0,0,0)). Zero over zero is
/// defined as 0; a nonzero residual over a zero-norm system is an error.
pub fn relative_error(
    sys: &LtiSystem,
    j: &DMatrix<f64>,
    zb: &ZBlock,
    q: &DMatrix<f64>,
    w: &[f64; 4],
) -> Result<f64> {
    ratio_or_zero(
        weighted_objective(sys, j, zb, q, w),
        weighted_zero_reference(sys, w),
    )
}

/// Unweighted per-matrix relative errors of a structured model against a
/// system; `None` where the corresponding system matrix has zero norm.
#[derive(Debug, Clone, Copy)]
pub struct PerMatrixErrors {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
}

pub fn per_matrix_errors(sys: &LtiSystem, sph: &SphForm) -> PerMatrixErrors {
    let model = sph_to_lti(sph);
    let one = |num: &DMatrix<f64>, den: &DMatrix<f64>| -> Option<f64> {
        let d = den.norm_squared();
        if d == 0.0 {
            None
        } else {
            Some(((num - den).norm_squared() / d).sqrt())
        }
    };
    PerMatrixErrors {
        a: one(&model.a, &sys.a),
        b: one(&model.b, &sys.b),
        c: one(&model.c, &sys.c),
        d: one(&model.d, &sys.d),
    }
}

#[derive(Debug, Clone)]
pub struct CheckBrResult {
    /// Final certificate factor (eigenvalues >= the configured floor); its
    /// inverse is the storage-function candidate for the feasibility block.
    pub qi: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub z: ZBlock,
    /// Residual normalized by the stacked system norm (the reported error).
    pub rel_err: f64,
    /// Residual normalized by the literal zero-variable objective value,
    /// which is ||B||^2 + ||D||^2; infinite when that is zero but the
    /// residual is not.
    pub rel_err_subproblem: f64,
    pub verdict: BrVerdict,
    pub trace: ConvergenceTrace,
    pub stop_reason: StopReason,
}

/// Alternating check of bounded-realness: fits (J, Z, Q) so that the system
/// matches a structured model exactly when one exists. A relative error at
/// the solution near zero certifies bounded-realness; a bounded-away error
/// is strong (but one-sided) evidence against it.
pub fn check_br(sys: &LtiSystem, cfg: &SolverConfig) -> Result<CheckBrResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let n = sys.n();
    let m = sys.m();
    let eps = match cfg.epsilon {
        Some(e) => e,
        None => 1e-6 * spectral_norm(&sys.a)?,
    };
    let lip_q = cert_lipschitz(&sys.a, &sys.c)?;
    let sys_norm_sq = {
        let s = sys.stacked_norm();
        s * s
    };
    let literal_norm_sq = sys.b.norm_squared() + sys.d.norm_squared();

    let mut q = DMatrix::<f64>::identity(n, n);
    let mut q_e = q.clone();
    let mut z = ZBlock::zeros(n, m);
    let mut j = DMatrix::<f64>::zeros(n, n);
    let mut z_p = z.clone();
    let mut j_p = j.clone();

    let mut beta = cfg.beta;
    let mut inner_i = dispatch_count(cfg.inner_iters);
    let mut admm_state = AdmmState::new(n, m);
    let mut outer = OuterLoop::check_br_shape(cfg.delta, cfg.max_outer);
    let mut trace = ConvergenceTrace::default();
    let stop_reason;

    loop {
        if let Some(reason) = outer.should_continue() {
            stop_reason = reason;
            break;
        }
        let k = outer.k;

        if k >= 2 {
            z_p = z.clone();
            j_p = j.clone();
        }

        // Z update: fit the passivity block to targets built from the
        // extrapolated certificate factor.
        {
            let mut prob = PassivityFitProblem::new(
                sys,
                &q_e,
                ZProjector {
                    n,
                    m,
                    rho: cfg.rho,
                    max_iters: inner_i,
                    tol: ADMM_INNER_TOL,
                    state: cfg.admm_warm_start.then_some(&mut admm_state),
                },
            )?;
            let z0 = if k == 1 {
                // First iterate starts from the projected target so an
                // already-feasible fit is found immediately.
                let g = prob.gradient(&ZBlock::zeros(n, m));
                let target = ZBlock {
                    z11: g.z11 * -0.5,
                    z12: g.z12 * -0.125,
                    z13: g.z13 * -0.125,
                    z23: g.z23 * -0.125,
                };
                prob.project(target)?
            } else {
                z.clone()
            };
            z = fgm_run(&mut prob, z0, inner_i)?.x;
        }
        j = skew(&(&sys.a * &q_e))?;

        let (z_e, j_e) = if k == 1 {
            (z.clone(), j.clone())
        } else {
            (
                ZBlock::lincomb(1.0 + beta, &z, -beta, &z_p),
                &j * (1.0 + beta) - &j_p * beta,
            )
        };

        // Q update at the extrapolated (J, Z).
        let q_p = q.clone();
        {
            let mut prob = CertProblem::new(&sys.a, &sys.c, &j_e, &z_e, eps, lip_q)?;
            q = fgm_run(&mut prob, q.clone(), inner_i)?.x;
        }
        q_e = &q * (1.0 + beta) - &q_p * beta;

        let f_val = check_objective(sys, &j, &z, &q);
        let e_cand = ratio_or_zero(f_val, sys_norm_sq)?;

        let restarted = outer.k >= 2 && e_cand > outer.last_error().unwrap_or(f64::INFINITY);
        let accepted = if restarted {
            z = z_p.clone();
            j = j_p.clone();
            q = q_p.clone();
            // The extrapolated copy was built from the rejected step; the
            // retry restarts cleanly from the reverted iterate.
            q_e = q.clone();
            beta /= cfg.eta;
            inner_i = grow_ceil(inner_i);
            outer.restart()
        } else {
            beta = (cfg.gamma * beta).min(1.0);
            outer.accept(e_cand);
            e_cand
        };
        trace.rows.push(TraceRow {
            k,
            time_s: t0.elapsed().as_secs_f64(),
            rel_err: accepted,
            beta,
            inner_i: inner_i as f64,
            restart: restarted,
        });

        if let Some(target) = cfg.target_rel_err {
            if !restarted && accepted <= target {
                stop_reason = StopReason::TargetReached;
                break;
            }
        }
        if let Some(limit) = cfg.time_limit {
            if t0.elapsed().as_secs_f64() >= limit {
                stop_reason = StopReason::TimeLimit;
                break;
            }
        }
    }

    let f_final = check_objective(sys, &j, &z, &q);
    let rel_err = ratio_or_zero(f_final, sys_norm_sq)?;
    let rel_err_subproblem = if literal_norm_sq == 0.0 {
        if f_final == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (f_final / literal_norm_sq).sqrt()
    };
    let verdict = if rel_err <= cfg.br_tol {
        BrVerdict::BrWithinTol
    } else {
        BrVerdict::NotCertified
    };
    Ok(CheckBrResult {
        qi: q,
        j,
        z,
        rel_err,
        rel_err_subproblem,
        verdict,
        trace,
        stop_reason,
    })
}

/// Starting point of the nearest solver.
#[derive(Debug, Clone)]
pub struct NearestBrInit {
    pub j: DMatrix<f64>,
    pub z: ZBlock,
    pub q: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitStrategy {
    /// Q = I, J = skew(A), Z = projection of the fit target at Q = I.
    Id,
    /// Run the check solver on a fraction of the budget and invert its
    /// certificate factor.
    Alg1,
}

pub fn default_init(
    sys: &LtiSystem,
    strategy: InitStrategy,
    cfg: &SolverConfig,
) -> Result<NearestBrInit> {
    cfg.validate()?;
    let n = sys.n();
    match strategy {
        InitStrategy::Id => {
            let q = DMatrix::identity(n, n);
            let j = skew(&sys.a)?;
            let target = ZBlock {
                z11: sym(&sys.a)? * -2.0,
                z12: -&sys.b,
                z13: -sys.c.transpose(),
                z23: -sys.d.transpose(),
            };
            let out = admm_project_onto_z(
                &assemble_z(&target),
                n,
                sys.m(),
                cfg.rho,
                FINAL_PROJ_CAP,
                FINAL_PROJ_TOL,
                None,
            )?;
            Ok(NearestBrInit { j, z: out.zb, q })
        }
        InitStrategy::Alg1 => {
            let mut sub = cfg.clone();
            sub.max_outer = ((cfg.max_outer as f64 * cfg.init_budget_frac).ceil() as usize).max(1);
            sub.time_limit = cfg.time_limit.map(|t| t * cfg.init_budget_frac);
            let run = check_br(sys, &sub)?;
            match nalgebra::Cholesky::new(run.qi.clone()) {
                Some(chol) => {
                    let inv = chol.inverse();
                    let q = (&inv + inv.transpose()) * 0.5;
                    Ok(NearestBrInit {
                        j: run.j,
                        z: run.z,
                        q,
                    })
                }
                None => {
                    eprintln!(
                        "warning: certificate factor from the check run is numerically singular; \
                         falling back to the identity initialization"
                    );
                    default_init(sys, InitStrategy::Id, cfg)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct NearestBrResult {
    pub sph: SphForm,
    /// State-space realization of `sph`.
    pub reconstructed: LtiSystem,
    /// Weighted relative error, recomputed from the emitted model.
    pub rel_err: f64,
    pub per_matrix: PerMatrixErrors,
    pub q_lambda_min: f64,
    /// True when the emitted energy matrix is only semidefinite to
    /// tolerance, i.e. the structured form is degenerate.
    pub sph_degenerate: bool,
    pub trace: ConvergenceTrace,
    pub stop_reason: StopReason,
}

/// Alternating search for the nearest bounded-real system in structured
/// form, starting from `init` (projected here if slightly infeasible).
pub fn nearest_br(
    sys: &LtiSystem,
    init: &NearestBrInit,
    cfg: &SolverConfig,
) -> Result<NearestBrResult> {
    cfg.validate()?;
    let t0 = Instant::now();
    let n = sys.n();
    let m = sys.m();
    if init.q.nrows() != n || init.q.ncols() != n || init.z.n() != n || init.z.m() != m {
        return Err(Error::DimensionMismatch {
            context: "nearest solver initialization".into(),
            detail: format!(
                "init blocks sized {}x{} / ({}, {}) against system ({}, {})",
                init.q.nrows(),
                init.q.ncols(),
                init.z.n(),
                init.z.m(),
                n,
                m
            ),
        });
    }
    let w = cfg.weights;
    let norm_sq = weighted_zero_reference(sys, &w);

    // Feasibility of the starting point; project with a warning if violated.
    let mut j = skew(&init.j)?;
    let mut z = init.z.clone();
    {
        let full = assemble_z(&z);
        let (zmin, _) = lambda_extreme(&full)?;
        if zmin < -FINAL_PROJ_TOL * (1.0 + full.norm()) {
            eprintln!(
                "warning: initialization violates the passivity set (lambda_min {zmin:.3e}); projecting"
            );
            z = admm_project_onto_z(&full, n, m, cfg.rho, FINAL_PROJ_CAP, FINAL_PROJ_TOL, None)?.zb;
        }
    }
    let mut q = {
        let qs = sym(&init.q)?;
        let (qmin, _) = lambda_extreme(&qs)?;
        if qmin < -DEGENERATE_TOL {
            eprintln!(
                "warning: initialization has an indefinite energy matrix (lambda_min {qmin:.3e}); projecting"
            );
            psd_project(&qs, 0.0)?
        } else {
            qs
        }
    };

    let mut q_e = q.clone();
    let mut beta = cfg.beta;
    let mut inner_f = cfg.inner_iters;
    let mut admm_state = AdmmState::new(n, m);
    let mut jz_carry: FgmCarry<JzVar> = FgmCarry::new();
    let mut q_carry: FgmCarry<DMatrix<f64>> = FgmCarry::new();
    let mut outer = OuterLoop::nearest_br_shape(cfg.delta, cfg.max_outer);
    let mut trace = ConvergenceTrace::default();
    let stop_reason;

    loop {
        if let Some(reason) = outer.should_continue() {
            stop_reason = reason;
            break;
        }
        let k = outer.k;
        let inner_i = dispatch_count(inner_f);

        let z_p = z.clone();
        let j_p = j.clone();

        // Joint (J, Z) update at the extrapolated Q.
        {
            let mut prob = WeightedJzProblem::new(
                sys,
                &q_e,
                w,
                ZProjector {
                    n,
                    m,
                    rho: cfg.rho,
                    max_iters: inner_i,
                    tol: ADMM_INNER_TOL,
                    state: cfg.admm_warm_start.then_some(&mut admm_state),
                },
            )?;
            let out = fgm_run_carry(
                &mut prob,
                JzVar {
                    j: j.clone(),
                    z: z.clone(),
                },
                inner_i,
                &mut jz_carry,
            )?;
            j = out.x.j;
            z = out.x.z;
        }

        let z_e = ZBlock::lincomb(1.0 + beta, &z, -beta, &z_p);
        let j_e = &j * (1.0 + beta) - &j_p * beta;

        // Q update at the extrapolated (J, Z).
        let q_p = q.clone();
        {
            let mut prob = WeightedCertProblem::new(sys, &j_e, &z_e, w, 0.0)?;
            q = fgm_run_carry(&mut prob, q.clone(), inner_i, &mut q_carry)?.x;
        }
        q_e = &q * (1.0 + beta) - &q_p * beta;

        let f_val = weighted_objective(sys, &j, &z, &q, &w);
        let e_cand = ratio_or_zero(f_val, norm_sq)?;

        let restarted = outer.k >= 2 && e_cand > outer.last_error().unwrap_or(f64::INFINITY);
        let accepted = if restarted {
            z = z_p.clone();
            j = j_p.clone();
            q = q_p.clone();
            q_e = q.clone();
            jz_carry = FgmCarry::new();
            q_carry = FgmCarry::new();
            beta /= cfg.eta;
            inner_f *= 1.1;
            outer.restart()
        } else {
            beta = (cfg.gamma * beta).min(1.0);
            outer.accept(e_cand);
            e_cand
        };
        trace.rows.push(TraceRow {
            k,
            time_s: t0.elapsed().as_secs_f64(),
            rel_err: accepted,
            beta,
            inner_i: inner_f,
            restart: restarted,
        });

        if let Some(target) = cfg.target_rel_err {
            if !restarted && accepted <= target {
                stop_reason = StopReason::TargetReached;
                break;
            }
        }
        if let Some(limit) = cfg.time_limit {
            if t0.elapsed().as_secs_f64() >= limit {
                stop_reason = StopReason::TimeLimit;
                break;
            }
        }
    }

    // High-accuracy projection before emitting; the clip inside guarantees
    // exact identity diagonal blocks.
    let out = admm_project_onto_z(
        &assemble_z(&z),
        n,
        m,
        cfg.rho,
        FINAL_PROJ_CAP,
        FINAL_PROJ_TOL,
        None,
    )?;
    let z_final = out.zb;
    let j_final = skew(&j)?;
    let q_final = q;

    let (r, f, p, d) = zblock_to_rfpd(&z_final);
    let sph = SphForm::new(j_final.clone(), r, q_final.clone(), f, p, d)?;
    let reconstructed = sph_to_lti(&sph);
    let f_final = weighted_objective(sys, &j_final, &z_final, &q_final, &w);
    let rel_err = ratio_or_zero(f_final, norm_sq)?;
    let per_matrix = per_matrix_errors(sys, &sph);
    let (q_lambda_min, _) = lambda_extreme(&q_final)?;
    let sph_degenerate = q_lambda_min <= DEGENERATE_TOL * (1.0 + q_final.norm());

    Ok(NearestBrResult {
        sph,
        reconstructed,
        rel_err,
        per_matrix,
        q_lambda_min,
        sph_degenerate,
        trace,
        stop_reason,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::boyd_system;
    use crate::oracle::{certify_lmi, default_grid, freq_grid_check, Verdict};
    use crate::sysmodel::{lti_to_sph_via_x, sph_to_zblock};
    use crate::testing::strict_sph_fixture;

    fn drive(loopy: &mut OuterLoop, errors: &[f64]) -> (usize, StopReason) {
        let mut ran = 0;
        loop {
            match loopy.should_continue() {
                Some(reason) => return (ran, reason),
                None => {
                    loopy.accept(errors[ran]);
                    ran += 1;
                }
            }
        }
    }

    #[test]
    fn check_shape_stops_exactly_when_the_window_stalls() {
        // Gap e_2 - e_3 = 1e-7 < delta * e_1 = 1e-6: stop before iteration 4.
        let mut l = OuterLoop::check_br_shape(1e-6, 100);
        let (ran, why) = drive(&mut l, &[1.0, 0.9, 0.9 - 1e-7, 0.0, 0.0]);
        assert_eq!(ran, 3);
        assert_eq!(why, StopReason::Stall);

        // Gap exactly delta * e_1 continues (the rule is strict <).
        let mut l = OuterLoop::check_br_shape(1e-6, 4);
        let (ran, why) = drive(&mut l, &[1.0, 0.9, 0.9 - 2e-6, 0.8, 0.7]);
        assert_eq!(ran, 4);
        assert_eq!(why, StopReason::MaxOuter);
    }

    #[test]
    fn no_stall_check_before_the_gate() {
        // Identical errors would trip the window immediately, but the first
        // three iterations are unconditional for the check shape.
        let mut l = OuterLoop::check_br_shape(1e-6, 100);
        let (ran, why) = drive(&mut l, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(ran, 3, "stall is first detectable before iteration 4");
        assert_eq!(why, StopReason::Stall);
    }

    #[test]
    fn nearest_shape_uses_a_two_iteration_window() {
        // Alternating stalls that a one-step window would miss: e_2 - e_4
        // is the first checked difference, before iteration 5.
        let mut l = OuterLoop::nearest_br_shape(1e-6, 100);
        let (ran, why) = drive(&mut l, &[1.0, 0.5, 0.5 - 1e-9, 0.5 - 2e-9, 0.1]);
        assert_eq!(ran, 4);
        assert_eq!(why, StopReason::Stall);

        // Healthy two-step progress keeps going even when single steps are
        // tiny.
        let mut l = OuterLoop::nearest_br_shape(1e-3, 6);
        let (ran, why) = drive(&mut l, &[1.0, 0.9, 0.899, 0.7, 0.69, 0.5]);
        assert_eq!(ran, 6);
        assert_eq!(why, StopReason::MaxOuter);
    }

    #[test]
    fn floor_stops_immediately_even_inside_the_gate() {
        let mut l = OuterLoop::check_br_shape(1e-6, 100);
        assert!(l.should_continue().is_none());
        l.accept(1e-14);
        assert_eq!(l.should_continue(), Some(StopReason::ErrorFloor));
    }

    #[test]
    fn restart_exempts_exactly_one_window_check() {
        let mut l = OuterLoop::check_br_shape(1e-6, 100);
        l.accept(1.0);
        l.accept(0.5);
        l.accept(0.25);
        // Iteration 4 restarts: the recorded error repeats.
        assert!(l.should_continue().is_none());
        let kept = l.restart();
        assert_eq!(kept, 0.25);
        // Window would read e_3 - e_4 = 0 < delta e_1, but the check right
        // after a restart is skipped once.
        assert!(l.should_continue().is_none());
        l.accept(0.25 - 1e-9);
        // Now the window applies again: e_4 - e_5 = 1e-9 < 1e-6.
        assert_eq!(l.should_continue(), Some(StopReason::Stall));
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut cfg = SolverConfig::check_br_defaults();
        cfg.beta = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::check_br_defaults();
        cfg.gamma = 3.0; // violates eta > gamma
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::check_br_defaults();
        cfg.inner_iters = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SolverConfig::nearest_br_defaults();
        cfg.weights = [1.0, -1.0, 1.0, 1.0];
        assert!(cfg.validate().is_err());
        assert!(SolverConfig::check_br_defaults().validate().is_ok());
        assert!(SolverConfig::nearest_br_defaults().validate().is_ok());
    }

    #[test]
    fn inner_budget_growth_matches_the_printed_factor() {
        assert_eq!(grow_ceil(2), 3);
        assert_eq!(grow_ceil(3), 4);
        assert_eq!(grow_ceil(10), 11);
        assert_eq!(grow_ceil(20), 22);
        assert_eq!(dispatch_count(10.0), 10);
        assert_eq!(dispatch_count(11.000000000000002), 11);
        assert_eq!(dispatch_count(10.5), 11);
    }

    #[test]
    fn decoupled_self_matching_system_solves_in_one_iteration() {
        // A = -I with zero B, C, D: the identity certificate already fits,
        // so the first iteration lands on the floor and the loop stops.
        let n = 3;
        let sys = LtiSystem::new(
            -DMatrix::<f64>::identity(n, n),
            DMatrix::zeros(n, 1),
            DMatrix::zeros(1, n),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let cfg = SolverConfig::check_br_defaults();
        let out = check_br(&sys, &cfg).unwrap();
        assert!(out.rel_err <= 1e-10, "rel_err {}", out.rel_err);
        assert_eq!(out.trace.rows.len(), 1);
        assert_eq!(out.stop_reason, StopReason::ErrorFloor);
        assert_eq!(out.verdict, BrVerdict::BrWithinTol);
        // Literal normalizer is zero here and the residual vanished too.
        assert_eq!(out.rel_err_subproblem, 0.0);
    }

    #[test]
    fn check_certifies_a_structured_model_and_the_verdict_is_sound() {
        let sph = strict_sph_fixture(5, 2, 501);
        let sys = sph_to_lti(&sph);
        let cfg = SolverConfig::check_br_defaults();
        let out = check_br(&sys, &cfg).unwrap();
        assert!(out.trace.is_nonincreasing());
        assert!(
            out.rel_err <= cfg.br_tol,
            "rel_err {} (stop {:?})",
            out.rel_err,
            out.stop_reason
        );
        assert_eq!(out.verdict, BrVerdict::BrWithinTol);

        // Soundness: the inverse certificate factor is a storage candidate
        // accepted by the independent checks.
        let x = nalgebra::Cholesky::new(out.qi.clone()).unwrap().inverse();
        let x = (&x + x.transpose()) * 0.5;
        let sph_back = lti_to_sph_via_x(&sys, &x, 1e-5);
        assert!(sph_back.is_ok(), "{:?}", sph_back.err());
        let grid = default_grid(&sys).unwrap();
        let freq = freq_grid_check(&sys, &grid, 1e-6).unwrap();
        assert_ne!(freq.verdict, Verdict::NotBr);
    }

    #[test]
    fn check_rejects_the_fixed_example_and_respects_floors() {
        let sys = boyd_system();
        let cfg = SolverConfig::check_br_defaults();
        let out = check_br(&sys, &cfg).unwrap();
        assert_eq!(out.verdict, BrVerdict::NotCertified);
        assert!(out.trace.is_nonincreasing());
        // The error settles in a narrow band (system-norm normalization).
        assert!(
            out.rel_err > 0.03 && out.rel_err < 0.06,
            "rel_err {}",
            out.rel_err
        );
        // The literal normalizer for this system is much smaller than the
        // stacked norm, so the subproblem reading is larger.
        assert!(out.rel_err_subproblem > out.rel_err);
        let eps = 1e-6 * spectral_norm(&sys.a).unwrap();
        let (qmin, _) = lambda_extreme(&out.qi).unwrap();
        assert!(qmin >= eps - 1e-10, "lambda_min(Q) = {qmin}, floor {eps}");
        // Its storage candidate must fail the independent check.
        let x = nalgebra::Cholesky::new(out.qi.clone()).unwrap().inverse();
        let x = (&x + x.transpose()) * 0.5;
        let cert = certify_lmi(&sys, &x, 1e-6).unwrap();
        assert_eq!(cert.verdict, Verdict::NotBr);
    }

    #[test]
    fn restart_rows_halve_beta_and_grow_the_inner_budget() {
        let sys = boyd_system();
        let cfg = SolverConfig::check_br_defaults();
        let out = check_br(&sys, &cfg).unwrap();
        let rows = &out.trace.rows;
        let mut seen = 0;
        for i in 1..rows.len() {
            if rows[i].restart {
                seen += 1;
                assert_eq!(rows[i].beta, rows[i - 1].beta / 2.0);
                assert_eq!(
                    rows[i].inner_i,
                    grow_ceil(rows[i - 1].inner_i as usize) as f64
                );
                assert_eq!(rows[i].rel_err, rows[i - 1].rel_err);
            }
        }
        assert!(seen >= 1, "expected at least one restart in this run");
    }

    #[test]
    fn time_limit_flags_a_partial_result() {
        let sys = boyd_system();
        let mut cfg = SolverConfig::check_br_defaults();
        cfg.time_limit = Some(1e-9);
        let out = check_br(&sys, &cfg).unwrap();
        assert_eq!(out.stop_reason, StopReason::TimeLimit);
        assert_eq!(out.trace.rows.len(), 1);
    }

    #[test]
    fn nearest_from_an_exact_model_stops_immediately() {
        let sph = strict_sph_fixture(4, 2, 811);
        let sys = sph_to_lti(&sph);
        let init = NearestBrInit {
            j: sph.j.clone(),
            z: sph_to_zblock(&sph),
            q: sph.q.clone(),
        };
        let cfg = SolverConfig::nearest_br_defaults();
        let out = nearest_br(&sys, &init, &cfg).unwrap();
        assert!(out.rel_err <= 1e-10, "rel_err {}", out.rel_err);
        assert_eq!(out.trace.rows.len(), 1);
        assert_eq!(out.stop_reason, StopReason::ErrorFloor);
        assert!(!out.sph_degenerate);
    }

    #[test]
    fn identity_init_is_exact_for_skew_a_with_zero_ports() {
        let a = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, -2.0, -1.0, 0.0, 0.5, 2.0, -0.5, 0.0]);
        let sys = LtiSystem::new(
            a.clone(),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(1, 3),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let cfg = SolverConfig::nearest_br_defaults();
        let init = default_init(&sys, InitStrategy::Id, &cfg).unwrap();
        assert_eq!(init.j, a);
        let e = relative_error(&sys, &init.j, &init.z, &init.q, &cfg.weights).unwrap();
        assert!(e <= 1e-12, "relative error at init {e}");
    }

    #[test]
    fn nearest_improves_the_fixed_example_and_emits_a_feasible_model() {
        let sys = boyd_system();
        let mut cfg = SolverConfig::nearest_br_defaults();
        cfg.max_outer = 400;
        let init = default_init(&sys, InitStrategy::Id, &cfg).unwrap();
        let out = nearest_br(&sys, &init, &cfg).unwrap();
        assert!(out.trace.is_nonincreasing());
        assert!(out.rel_err < 0.06, "rel_err {}", out.rel_err);
        let ks_min = out.sph.ks_lambda_min().unwrap();
        assert!(ks_min >= -1e-8, "passivity block dips to {ks_min}");
        // The reported error is recomputable from the emitted artifacts.
        let z = sph_to_zblock(&out.sph);
        let again = relative_error(&sys, &out.sph.j, &z, &out.sph.q, &cfg.weights).unwrap();
        assert!((again - out.rel_err).abs() <= 1e-12);
        // The reconstruction is bounded real per the independent check.
        let grid = default_grid(&out.reconstructed).unwrap();
        let cert = freq_grid_check(&out.reconstructed, &grid, 1e-6).unwrap();
        assert_ne!(cert.verdict, Verdict::NotBr, "witness {:?}", cert.witness);
    }

    #[test]
    fn infeasible_init_is_projected_not_rejected() {
        let sys = boyd_system();
        let cfg = SolverConfig::nearest_br_defaults();
        let mut init = default_init(&sys, InitStrategy::Id, &cfg).unwrap();
        init.z.z11 = -DMatrix::<f64>::identity(4, 4);
        let mut cfg = cfg;
        cfg.max_outer = 30;
        let out = nearest_br(&sys, &init, &cfg).unwrap();
        assert!(out.sph.ks_lambda_min().unwrap() >= -1e-8);
    }

    #[test]
    fn alg1_init_runs_and_feeds_the_nearest_solver() {
        let sys = boyd_system();
        let mut cfg = SolverConfig::nearest_br_defaults();
        cfg.max_outer = 200;
        let init = default_init(&sys, InitStrategy::Alg1, &cfg).unwrap();
        let (qmin, _) = lambda_extreme(&init.q).unwrap();
        assert!(qmin > 0.0, "inverted certificate factor must be PD");
        let out = nearest_br(&sys, &init, &cfg).unwrap();
        assert!(out.rel_err < 0.06, "rel_err {}", out.rel_err);
    }

    #[test]
    fn relative_error_zero_rules() {
        let zero = LtiSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let z = ZBlock::zeros(2, 1);
        let j = DMatrix::zeros(2, 2);
        let q = DMatrix::zeros(2, 2);
        // Zero system, zero variables: defined as zero.
        assert_eq!(
            relative_error(&zero, &j, &z, &q, &[1.0; 4]).unwrap(),
            0.0
        );
        // Zero system, nonzero residual: undefined.
        let q1 = DMatrix::identity(2, 2);
        let mut z1 = ZBlock::zeros(2, 1);
        z1.z11 = DMatrix::identity(2, 2);
        assert!(relative_error(&zero, &j, &z1, &q1, &[1.0; 4]).is_err());
        // Zero variables on a nonzero system: exactly one.
        let sys = boyd_system();
        let e = relative_error(
            &sys,
            &DMatrix::zeros(4, 4),
            &ZBlock::zeros(4, 2),
            &DMatrix::zeros(4, 4),
            &[1.0; 4],
        )
        .unwrap();
        assert!((e - 1.0).abs() < 1e-15);
    }

    #[test]
    fn per_matrix_errors_handle_zero_denominators() {
        let sph = strict_sph_fixture(3, 1, 999);
        let mut sys = sph_to_lti(&sph);
        sys.d = DMatrix::zeros(1, 1);
        let errs = per_matrix_errors(&sys, &sph);
        assert!(errs.a.is_some());
        assert!(errs.d.is_none(), "zero-norm reference has no ratio");
        // Exact match everywhere else would need d = 0 in the model too;
        // just check the defined entries are finite and nonnegative.
        for e in [errs.a, errs.b, errs.c].into_iter().flatten() {
            assert!(e.is_finite() && e >= 0.0);
        }
    }

    #[test]
    fn weighted_error_at_zero_variables_is_one_for_any_weights() {
        let sys = boyd_system();
        for w in [[1.0, 1.0, 1.0, 1.0], [0.5, 2.0, 5.0, 20.0]] {
            let e = relative_error(
                &sys,
                &DMatrix::zeros(4, 4),
                &ZBlock::zeros(4, 2),
                &DMatrix::zeros(4, 4),
                &w,
            )
            .unwrap();
            assert!((e - 1.0).abs() < 1e-15, "weights {w:?}: {e}");
        }
    }
}
