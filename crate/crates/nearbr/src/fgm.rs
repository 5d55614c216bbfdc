//! Projected fast gradient method (Nesterov momentum) and the four
//! quadratic subproblems solved by the alternating schemes.
//!
//! Each subproblem implements [`QuadProblem`]: a smooth convex quadratic
//! objective with an explicit Lipschitz constant for its gradient and a
//! projection onto its feasible set. [`fgm_run`] drives any of them with the
//! standard momentum recursion and returns the best feasible iterate seen.

use crate::error::{Error, Result};
use crate::matcore::{check_finite, fro_norm, lambda_extreme, psd_project, skew, spectral_norm, sym};
use crate::sysmodel::{assemble_z, LtiSystem, ZBlock};
use crate::zproj::{admm_project_onto_z, AdmmState};
use nalgebra::DMatrix;

/// Momentum bookkeeping: theta starts at 1 and follows
/// theta_next = (1 + sqrt(1 + 4 theta^2)) / 2; the extrapolation weight for a
/// step is (theta - 1) / theta_next, so the very first step uses weight 0.
#[derive(Debug, Clone)]
pub struct FgmMomentum {
    theta: f64,
}

impl FgmMomentum {
    pub fn new() -> Self {
        FgmMomentum { theta: 1.0 }
    }

    /// Advances the recursion and returns the extrapolation weight to use for
    /// the step being taken.
    pub fn advance(&mut self) -> f64 {
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * self.theta * self.theta).sqrt());
        let weight = (self.theta - 1.0) / theta_next;
        self.theta = theta_next;
        weight
    }
}

impl Default for FgmMomentum {
    fn default() -> Self {
        Self::new()
    }
}

/// Variable spaces the fast gradient loop can optimize over.
pub trait FgmVar: Clone {
    /// Returns a*x + b*y.
    fn lincomb(a: f64, x: &Self, b: f64, y: &Self) -> Self;
    fn all_finite(&self) -> bool;
    /// Frobenius-style norm of the variable, used for diagnostics and tests.
    fn norm(&self) -> f64;
}

impl FgmVar for DMatrix<f64> {
    fn lincomb(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        x * a + y * b
    }

    fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    fn norm(&self) -> f64 {
        fro_norm(self)
    }
}

impl FgmVar for ZBlock {
    fn lincomb(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        ZBlock {
            z11: &x.z11 * a + &y.z11 * b,
            z12: &x.z12 * a + &y.z12 * b,
            z13: &x.z13 * a + &y.z13 * b,
            z23: &x.z23 * a + &y.z23 * b,
        }
    }

    fn all_finite(&self) -> bool {
        self.z11.iter().all(|v| v.is_finite())
            && self.z12.iter().all(|v| v.is_finite())
            && self.z13.iter().all(|v| v.is_finite())
            && self.z23.iter().all(|v| v.is_finite())
    }

    fn norm(&self) -> f64 {
        (self.z11.norm_squared()
            + self.z12.norm_squared()
            + self.z13.norm_squared()
            + self.z23.norm_squared())
        .sqrt()
    }
}

/// Joint variable for the weighted scheme: a skew-symmetric interconnection
/// matrix together with the passivity block.
#[derive(Debug, Clone)]
pub struct JzVar {
    pub j: DMatrix<f64>,
    pub z: ZBlock,
}

impl FgmVar for JzVar {
    fn lincomb(a: f64, x: &Self, b: f64, y: &Self) -> Self {
        JzVar {
            j: &x.j * a + &y.j * b,
            z: ZBlock::lincomb(a, &x.z, b, &y.z),
        }
    }

    fn all_finite(&self) -> bool {
        self.j.iter().all(|v| v.is_finite()) && self.z.all_finite()
    }

    fn norm(&self) -> f64 {
        (self.j.norm_squared() + self.z.norm() * self.z.norm()).sqrt()
    }
}

/// A smooth convex quadratic restricted to a closed convex set.
///
/// Contract: `gradient` is Lipschitz with constant `lipschitz()` over the
/// whole space, and `lipschitz() == 0` only when the gradient vanishes
/// identically. `project` may keep internal state (warm-started splitting
/// iterations), hence `&mut self`.
pub trait QuadProblem {
    type Var: FgmVar;

    fn objective(&self, x: &Self::Var) -> f64;
    fn gradient(&self, x: &Self::Var) -> Self::Var;
    fn lipschitz(&self) -> f64;
    fn project(&mut self, x: Self::Var) -> Result<Self::Var>;

    /// Direction the driver multiplies by 1/lipschitz() for the step. The
    /// default is the plain gradient; problems with strongly uneven block
    /// curvatures can return a block-rescaled gradient instead, which acts
    /// as a diagonal preconditioner (per-block step sizes).
    fn step_direction(&self, x: &Self::Var) -> Self::Var {
        self.gradient(x)
    }
}

#[derive(Debug, Clone)]
pub struct FgmOutcome<V> {
    pub x: V,
    pub objective: f64,
    pub iters_run: usize,
}

/// Momentum state preserved across chunked solves of a slowly drifting
/// subproblem (experimental).
#[derive(Debug, Clone)]
pub struct FgmCarry<V> {
    pub momentum: FgmMomentum,
    pub x_prev: Option<V>,
}

impl<V> FgmCarry<V> {
    pub fn new() -> Self {
        FgmCarry {
            momentum: FgmMomentum::new(),
            x_prev: None,
        }
    }
}

impl<V> Default for FgmCarry<V> {
    fn default() -> Self {
        Self::new()
    }
}

/// Same as [`fgm_run`] but the momentum sequence and previous iterate
/// continue across calls through `carry` (experimental).
pub fn fgm_run_carry<P: QuadProblem>(
    problem: &mut P,
    x0: P::Var,
    max_iters: usize,
    carry: &mut FgmCarry<P::Var>,
) -> Result<FgmOutcome<P::Var>> {
    let l = problem.lipschitz();
    if !l.is_finite() || l < 0.0 {
        return Err(Error::Numeric(format!(
            "fast gradient step size needs a finite nonnegative Lipschitz constant, got {l}"
        )));
    }
    let f0 = problem.objective(&x0);
    if !f0.is_finite() {
        return Err(Error::Numeric(
            "objective is not finite at the starting point".into(),
        ));
    }
    if l == 0.0 || max_iters == 0 {
        return Ok(FgmOutcome {
            x: x0,
            objective: f0,
            iters_run: 0,
        });
    }

    let step = 1.0 / l;
    let mut x_prev = carry.x_prev.take().unwrap_or_else(|| x0.clone());
    let mut x_best = x0.clone();
    let mut f_best = f0;
    let mut f_prev = f0;
    let mut y = x0;
    let mut iters_run = 0;

    for _ in 0..max_iters {
        let g = problem.step_direction(&y);
        if !g.all_finite() {
            return Err(Error::Numeric(
                "gradient overflowed during the fast gradient loop".into(),
            ));
        }
        let x = problem.project(P::Var::lincomb(1.0, &y, -step, &g))?;
        let f = problem.objective(&x);
        if !f.is_finite() {
            return Err(Error::Numeric(
                "objective overflowed during the fast gradient loop".into(),
            ));
        }
        if f <= f_best {
            f_best = f;
            x_best = x.clone();
        }
        if f > f_prev {
            // Adaptive restart: stale momentum is hurting, drop it.
            carry.momentum = FgmMomentum::new();
            y = x.clone();
        } else {
            let w = carry.momentum.advance();
            y = P::Var::lincomb(1.0 + w, &x, -w, &x_prev);
        }
        f_prev = f;
        x_prev = x;
        iters_run += 1;
    }
    carry.x_prev = Some(x_prev);

    Ok(FgmOutcome {
        x: x_best,
        objective: f_best,
        iters_run,
    })
}

/// Runs at most `max_iters` projected fast gradient steps from the feasible
/// point `x0` and returns the iterate with the lowest objective encountered
/// (ties resolved toward the most recent iterate, which helps warm starts).
///
/// The momentum sequence restarts fresh on every call; callers that alternate
/// between subproblems get the standard per-call guarantee.
pub fn fgm_run<P: QuadProblem>(
    problem: &mut P,
    x0: P::Var,
    max_iters: usize,
) -> Result<FgmOutcome<P::Var>> {
    let l = problem.lipschitz();
    if !l.is_finite() || l < 0.0 {
        return Err(Error::Numeric(format!(
            "fast gradient step size needs a finite nonnegative Lipschitz constant, got {l}"
        )));
    }
    let f0 = problem.objective(&x0);
    if !f0.is_finite() {
        return Err(Error::Numeric(
            "objective is not finite at the starting point".into(),
        ));
    }
    // Zero Lipschitz constant means the gradient vanishes everywhere, so the
    // starting point is already optimal over the feasible set it lives in.
    if l == 0.0 || max_iters == 0 {
        return Ok(FgmOutcome {
            x: x0,
            objective: f0,
            iters_run: 0,
        });
    }

    let step = 1.0 / l;
    let mut momentum = FgmMomentum::new();
    let mut x_prev = x0.clone();
    let mut x_best = x0.clone();
    let mut f_best = f0;
    let mut y = x0;
    let mut iters_run = 0;

    for _ in 0..max_iters {
        let g = problem.step_direction(&y);
        if !g.all_finite() {
            return Err(Error::Numeric(
                "gradient overflowed during the fast gradient loop".into(),
            ));
        }
        let x = problem.project(P::Var::lincomb(1.0, &y, -step, &g))?;
        let f = problem.objective(&x);
        if !f.is_finite() {
            return Err(Error::Numeric(
                "objective overflowed during the fast gradient loop".into(),
            ));
        }
        if f <= f_best {
            f_best = f;
            x_best = x.clone();
        }
        let w = momentum.advance();
        y = P::Var::lincomb(1.0 + w, &x, -w, &x_prev);
        x_prev = x;
        iters_run += 1;
    }

    Ok(FgmOutcome {
        x: x_best,
        objective: f_best,
        iters_run,
    })
}

/// Projection onto the passivity set shared by both Z-type subproblems,
/// optionally warm-started across calls via a caller-owned splitting state.
pub struct ZProjector<'a> {
    pub n: usize,
    pub m: usize,
    pub rho: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub state: Option<&'a mut AdmmState>,
}

impl ZProjector<'_> {
    fn apply(&mut self, zb: &ZBlock) -> Result<ZBlock> {
        let full = assemble_z(zb);
        let out = admm_project_onto_z(
            &full,
            self.n,
            self.m,
            self.rho,
            self.max_iters,
            self.tol,
            self.state.as_deref_mut(),
        )?;
        Ok(out.zb)
    }
}

/// Fixed data of the state-certificate subproblem: minimize
/// |A Q - M1|^2 + |C Q - M2|^2 over symmetric Q with eigenvalues >= floor.
///
/// M1 and M2 come from the extrapolated remaining variables:
/// M1 = J - Z11 / 2 and M2 = -Z13^T.
pub struct CertProblem<'a> {
    a: &'a DMatrix<f64>,
    c: &'a DMatrix<f64>,
    m1: DMatrix<f64>,
    m2: DMatrix<f64>,
    floor: f64,
    lip: f64,
}

/// Gradient Lipschitz constant of the state-certificate objective; depends
/// only on the system, so callers compute it once per run.
pub fn cert_lipschitz(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    let gram = a.transpose() * a + c.transpose() * c;
    let (_, lmax) = lambda_extreme(&gram)?;
    Ok(2.0 * lmax.max(0.0))
}

impl<'a> CertProblem<'a> {
    /// `lip` must be `cert_lipschitz(a, c)`; it is passed in so the spectral
    /// computation happens once per solve, not once per outer iteration.
    pub fn new(
        a: &'a DMatrix<f64>,
        c: &'a DMatrix<f64>,
        j: &DMatrix<f64>,
        zb: &ZBlock,
        floor: f64,
        lip: f64,
    ) -> Result<Self> {
        check_finite(j, "certificate subproblem target")?;
        let m1 = j - &zb.z11 * 0.5;
        let m2 = -zb.z13.transpose();
        if a.nrows() != m1.nrows() || c.nrows() != m2.nrows() {
            return Err(Error::DimensionMismatch {
                context: "certificate subproblem".into(),
                detail: format!(
                    "targets {}x{} / {}x{} do not match A ({}x{}) and C ({}x{})",
                    m1.nrows(),
                    m1.ncols(),
                    m2.nrows(),
                    m2.ncols(),
                    a.nrows(),
                    a.ncols(),
                    c.nrows(),
                    c.ncols()
                ),
            });
        }
        Ok(CertProblem {
            a,
            c,
            m1,
            m2,
            floor,
            lip,
        })
    }
}

impl QuadProblem for CertProblem<'_> {
    type Var = DMatrix<f64>;

    fn objective(&self, q: &DMatrix<f64>) -> f64 {
        let ra = self.a * q - &self.m1;
        let rc = self.c * q - &self.m2;
        ra.norm_squared() + rc.norm_squared()
    }

    fn gradient(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let ra = self.a * q - &self.m1;
        let rc = self.c * q - &self.m2;
        self.a.transpose() * ra * 2.0 + self.c.transpose() * rc * 2.0
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }

    fn project(&mut self, x: DMatrix<f64>) -> Result<DMatrix<f64>> {
        psd_project(&x, self.floor)
    }
}

/// Fixed data of the passivity-block subproblem used by the alternating
/// certificate scheme: minimize
/// |Z11 - T11|^2 + 4 |Z12 - T12|^2 + 4 |Z13 - T13|^2 + 4 |Z23 - T23|^2
/// over the passivity set, with targets built from the extrapolated Q:
/// T11 = -2 sym(A Q), T12 = -B, T13 = -Q C^T, T23 = -D^T.
///
/// The uneven weights come from eliminating J in closed form, which leaves
/// only the symmetric part of the first residual in the objective.
pub struct PassivityFitProblem<'a> {
    t11: DMatrix<f64>,
    t12: DMatrix<f64>,
    t13: DMatrix<f64>,
    t23: DMatrix<f64>,
    proj: ZProjector<'a>,
}

impl<'a> PassivityFitProblem<'a> {
    pub fn new(sys: &LtiSystem, q_e: &DMatrix<f64>, proj: ZProjector<'a>) -> Result<Self> {
        check_finite(q_e, "passivity fit target")?;
        if q_e.nrows() != sys.n() || q_e.ncols() != sys.n() {
            return Err(Error::DimensionMismatch {
                context: "passivity fit".into(),
                detail: format!(
                    "certificate iterate is {}x{}, system order is {}",
                    q_e.nrows(),
                    q_e.ncols(),
                    sys.n()
                ),
            });
        }
        Ok(PassivityFitProblem {
            t11: sym(&(&sys.a * q_e))? * -2.0,
            t12: -&sys.b,
            t13: -(q_e * sys.c.transpose()),
            t23: -sys.d.transpose(),
            proj,
        })
    }

    /// Gradient Lipschitz constant: twice the largest block weight.
    pub const LIPSCHITZ: f64 = 8.0;
}

impl QuadProblem for PassivityFitProblem<'_> {
    type Var = ZBlock;

    fn objective(&self, z: &ZBlock) -> f64 {
        (&z.z11 - &self.t11).norm_squared()
            + 4.0 * (&z.z12 - &self.t12).norm_squared()
            + 4.0 * (&z.z13 - &self.t13).norm_squared()
            + 4.0 * (&z.z23 - &self.t23).norm_squared()
    }

    fn gradient(&self, z: &ZBlock) -> ZBlock {
        ZBlock {
            z11: (&z.z11 - &self.t11) * 2.0,
            z12: (&z.z12 - &self.t12) * 8.0,
            z13: (&z.z13 - &self.t13) * 8.0,
            z23: (&z.z23 - &self.t23) * 8.0,
        }
    }

    fn lipschitz(&self) -> f64 {
        Self::LIPSCHITZ
    }

    fn project(&mut self, x: ZBlock) -> Result<ZBlock> {
        self.proj.apply(&x)
    }
}

/// Weighted distance between a system and the family it is being fitted to,
/// as a function of (J, Z) with the certificate factor fixed at `q`:
///
/// w1 |A - (J - Z11/2) Q|^2 + w2 |B + Z12|^2
///   + w3 |C + Z13^T Q|^2 + w4 |D + Z23^T|^2.
pub struct WeightedJzProblem<'a> {
    sys: &'a LtiSystem,
    q: &'a DMatrix<f64>,
    w: [f64; 4],
    lip: f64,
    /// Block curvatures: the coupled (J, Z11) pair, then Z12, Z13, Z23.
    /// Used to rescale the step direction so every block moves with its own
    /// natural step size instead of the stiffest block's.
    block_lips: [f64; 4],
    proj: ZProjector<'a>,
}

/// Per-block gradient Lipschitz constants of the joint (J, Z) objective:
/// the coupled (J, Z11) pair (the 2x2 curvature symbol [[2,-1],[-1,1/2]] has
/// top eigenvalue 5/2), then the decoupled Z12, Z13, Z23 blocks.
pub fn weighted_jz_block_lipschitz(w: &[f64; 4], q: &DMatrix<f64>) -> Result<[f64; 4]> {
    let s = spectral_norm(q)?;
    let sq = s * s;
    Ok([2.5 * w[0] * sq, 2.0 * w[1], 2.0 * w[2] * sq, 2.0 * w[3]])
}

/// Lipschitz constant for the joint (J, Z) gradient: the largest block
/// curvature.
pub fn weighted_jz_lipschitz(w: &[f64; 4], q: &DMatrix<f64>) -> Result<f64> {
    let b = weighted_jz_block_lipschitz(w, q)?;
    Ok(b[0].max(b[1]).max(b[2]).max(b[3]))
}

impl<'a> WeightedJzProblem<'a> {
    pub fn new(
        sys: &'a LtiSystem,
        q: &'a DMatrix<f64>,
        w: [f64; 4],
        proj: ZProjector<'a>,
    ) -> Result<Self> {
        if w.iter().any(|wi| !wi.is_finite() || *wi < 0.0) {
            return Err(Error::Config(format!(
                "weights must be finite and nonnegative, got {w:?}"
            )));
        }
        if q.nrows() != sys.n() || q.ncols() != sys.n() {
            return Err(Error::DimensionMismatch {
                context: "weighted joint subproblem".into(),
                detail: format!(
                    "certificate factor is {}x{}, system order is {}",
                    q.nrows(),
                    q.ncols(),
                    sys.n()
                ),
            });
        }
        let block_lips = weighted_jz_block_lipschitz(&w, q)?;
        let lip = block_lips
            .iter()
            .fold(0.0_f64, |acc, &b| acc.max(b));
        Ok(WeightedJzProblem {
            sys,
            q,
            w,
            lip,
            block_lips,
            proj,
        })
    }
}

impl QuadProblem for WeightedJzProblem<'_> {
    type Var = JzVar;

    fn objective(&self, x: &JzVar) -> f64 {
        let m = &x.j - &x.z.z11 * 0.5;
        let r1 = &self.sys.a - m * self.q;
        let r3 = &self.sys.c + x.z.z13.transpose() * self.q;
        self.w[0] * r1.norm_squared()
            + self.w[1] * (&self.sys.b + &x.z.z12).norm_squared()
            + self.w[2] * r3.norm_squared()
            + self.w[3] * (&self.sys.d + x.z.z23.transpose()).norm_squared()
    }

    fn gradient(&self, x: &JzVar) -> JzVar {
        let m = &x.j - &x.z.z11 * 0.5;
        let r1q = (&self.sys.a - m * self.q) * self.q;
        // Structure projections are written out by hand so that an overflow
        // surfaces as a non-finite gradient in the driver, not a panic here.
        let j_part = &r1q * (-2.0 * self.w[0]);
        let s_part = &r1q * self.w[0];
        let r3 = &self.sys.c + x.z.z13.transpose() * self.q;
        JzVar {
            j: (&j_part - j_part.transpose()) * 0.5,
            z: ZBlock {
                z11: (&s_part + s_part.transpose()) * 0.5,
                z12: (&x.z.z12 + &self.sys.b) * (2.0 * self.w[1]),
                z13: self.q * r3.transpose() * (2.0 * self.w[2]),
                z23: (&x.z.z23 + self.sys.d.transpose()) * (2.0 * self.w[3]),
            },
        }
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }

    fn project(&mut self, x: JzVar) -> Result<JzVar> {
        Ok(JzVar {
            j: skew(&x.j)?,
            z: self.proj.apply(&x.z)?,
        })
    }

    /// Gradient rescaled so each block is divided by its own curvature once
    /// the driver applies the shared 1/lipschitz() factor. Without this, the
    /// stiff Z12/Z23 blocks (curvature 2w) force steps far too small for the
    /// J/Z11/Z13 blocks whose curvature carries a sigma(Q)^2 factor.
    fn step_direction(&self, x: &JzVar) -> JzVar {
        let g = self.gradient(x);
        let scale = |b: f64| if b > 0.0 { self.lip / b } else { 0.0 };
        let s_pair = scale(self.block_lips[0]);
        JzVar {
            j: g.j * s_pair,
            z: ZBlock {
                z11: g.z.z11 * s_pair,
                z12: g.z.z12 * scale(self.block_lips[1]),
                z13: g.z.z13 * scale(self.block_lips[2]),
                z23: g.z.z23 * scale(self.block_lips[3]),
            },
        }
    }
}

/// Weighted distance as a function of the certificate factor Q with (J, Z)
/// fixed: w1 |A - M Q|^2 + w3 |C + Z13^T Q|^2 where M = J - Z11/2.
/// Terms not involving Q are dropped; they shift the objective by a constant.
pub struct WeightedCertProblem<'a> {
    a: &'a DMatrix<f64>,
    c: &'a DMatrix<f64>,
    m: DMatrix<f64>,
    z13: DMatrix<f64>,
    w1: f64,
    w3: f64,
    floor: f64,
    lip: f64,
}

impl<'a> WeightedCertProblem<'a> {
    /// The Lipschitz constant is recomputed here on every call because M and
    /// Z13 change each outer iteration, unlike the unweighted scheme where the
    /// Q-block curvature is fixed by the system.
    pub fn new(
        sys: &'a LtiSystem,
        j: &DMatrix<f64>,
        zb: &ZBlock,
        w: [f64; 4],
        floor: f64,
    ) -> Result<Self> {
        check_finite(j, "weighted certificate subproblem")?;
        let m = j - &zb.z11 * 0.5;
        let z13 = zb.z13.clone();
        let gram = &m.transpose() * &m * w[0] + &z13 * z13.transpose() * w[2];
        let (_, lmax) = lambda_extreme(&gram)?;
        Ok(WeightedCertProblem {
            a: &sys.a,
            c: &sys.c,
            m,
            z13,
            w1: w[0],
            w3: w[2],
            floor,
            lip: 2.0 * lmax.max(0.0),
        })
    }
}

impl QuadProblem for WeightedCertProblem<'_> {
    type Var = DMatrix<f64>;

    fn objective(&self, q: &DMatrix<f64>) -> f64 {
        let r1 = self.a - &self.m * q;
        let r3 = self.c + self.z13.transpose() * q;
        self.w1 * r1.norm_squared() + self.w3 * r3.norm_squared()
    }

    fn gradient(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let r1 = self.a - &self.m * q;
        let r3 = self.c + self.z13.transpose() * q;
        self.m.transpose() * r1 * (-2.0 * self.w1) + &self.z13 * r3 * (2.0 * self.w3)
    }

    fn lipschitz(&self) -> f64 {
        self.lip
    }

    fn project(&mut self, x: DMatrix<f64>) -> Result<DMatrix<f64>> {
        psd_project(&x, self.floor)
    }
}
