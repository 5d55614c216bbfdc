//! System types and the algebra connecting them: LTI state-space data,
//! scattering port-Hamiltonian (sPH) forms, the structured symmetric block
//! variable used by the solvers, LMI assembly, and the Cayley transform
//! between impedance and scattering representations.

use crate::error::{Error, Result};
use crate::matcore::{self, check_finite, fro_norm};
use nalgebra::DMatrix;

/// State-space system `x' = Ax + Bu`, `y = Cx + Du` with `n` states and
/// `m` ports.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if n == 0 || m == 0 {
            return Err(Error::DimensionMismatch {
                context: "LtiSystem",
                detail: format!("need n >= 1 and m >= 1, got n={n}, m={m}"),
            });
        }
        if a.ncols() != n || b.nrows() != n || c.shape() != (m, n) || d.shape() != (m, m) {
            return Err(Error::DimensionMismatch {
                context: "LtiSystem",
                detail: format!(
                    "A {}x{}, B {}x{}, C {}x{}, D {}x{} are not consistent",
                    a.nrows(),
                    a.ncols(),
                    b.nrows(),
                    b.ncols(),
                    c.nrows(),
                    c.ncols(),
                    d.nrows(),
                    d.ncols()
                ),
            });
        }
        check_finite(&a, "LtiSystem A")?;
        check_finite(&b, "LtiSystem B")?;
        check_finite(&c, "LtiSystem C")?;
        check_finite(&d, "LtiSystem D")?;
        Ok(Self { a, b, c, d })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// Frobenius norm of the stacked data `(A, B, C, D)`.
    pub fn stacked_norm(&self) -> f64 {
        let ss = |m: &DMatrix<f64>| m.iter().map(|x| x * x).sum::<f64>();
        (ss(&self.a) + ss(&self.b) + ss(&self.c) + ss(&self.d)).sqrt()
    }
}

/// Scattering port-Hamiltonian form:
/// `x' = (J - R) Q x + (F - P) u`, `y = (F + P)^T Q x + D u`.
///
/// `J` is skew-symmetric and `R`, `Q` symmetric; a strict form additionally
/// has `Q` positive definite and the dissipation block [`assemble_ks`] PSD.
#[derive(Debug, Clone, PartialEq)]
pub struct SphForm {
    pub j: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl SphForm {
    /// Structural tolerance for the skew/symmetry checks, relative to the
    /// Frobenius norm of the block being checked.
    pub const STRUCT_TOL: f64 = 1e-10;

    pub fn new(
        j: DMatrix<f64>,
        r: DMatrix<f64>,
        q: DMatrix<f64>,
        f: DMatrix<f64>,
        p: DMatrix<f64>,
        d: DMatrix<f64>,
    ) -> Result<Self> {
        let n = j.nrows();
        let m = f.ncols();
        if n == 0 || m == 0 {
            return Err(Error::DimensionMismatch {
                context: "SphForm",
                detail: format!("need n >= 1 and m >= 1, got n={n}, m={m}"),
            });
        }
        if j.ncols() != n
            || r.shape() != (n, n)
            || q.shape() != (n, n)
            || f.shape() != (n, m)
            || p.shape() != (n, m)
            || d.shape() != (m, m)
        {
            return Err(Error::DimensionMismatch {
                context: "SphForm",
                detail: "J, R, Q must be n x n and F, P n x m, D m x m".into(),
            });
        }
        for (mtx, name) in [(&j, "J"), (&r, "R"), (&q, "Q"), (&f, "F"), (&p, "P"), (&d, "D")] {
            check_finite(mtx, match name {
                "J" => "SphForm J",
                "R" => "SphForm R",
                "Q" => "SphForm Q",
                "F" => "SphForm F",
                "P" => "SphForm P",
                _ => "SphForm D",
            })?;
        }
        let skew_defect = fro_norm(&(&j + j.transpose()));
        if skew_defect > Self::STRUCT_TOL * fro_norm(&j).max(1.0) {
            return Err(Error::Numeric(format!(
                "SphForm J is not skew-symmetric: defect {skew_defect:.3e}"
            )));
        }
        for (mtx, name) in [(&r, "R"), (&q, "Q")] {
            let defect = fro_norm(&(mtx - mtx.transpose()));
            if defect > Self::STRUCT_TOL * fro_norm(mtx).max(1.0) {
                return Err(Error::Numeric(format!(
                    "SphForm {name} is not symmetric: defect {defect:.3e}"
                )));
            }
        }
        Ok(Self { j, r, q, f, p, d })
    }

    pub fn n(&self) -> usize {
        self.j.nrows()
    }

    pub fn m(&self) -> usize {
        self.f.ncols()
    }

    /// Smallest eigenvalue of the dissipation block [`assemble_ks`];
    /// nonnegative (to rounding) exactly when the form is passive.
    pub fn ks_lambda_min(&self) -> Result<f64> {
        let (lo, _) = matcore::lambda_extreme(&assemble_ks(self))?;
        Ok(lo)
    }

    /// Smallest eigenvalue of `Q`; strictly positive for a strict sPH form.
    pub fn q_lambda_min(&self) -> Result<f64> {
        let (lo, _) = matcore::lambda_extreme(&self.q)?;
        Ok(lo)
    }
}

/// Block variable for the structured constraint set: a symmetric
/// `(n+2m) x (n+2m)` matrix with identity (2,2) and (3,3) blocks,
/// represented by its free blocks.
///
/// Layout of the assembled matrix:
/// ```text
/// [ Z11    Z12  Z13 ]
/// [ Z12^T  I    Z23 ]
/// [ Z13^T Z23^T  I  ]
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ZBlock {
    pub z11: DMatrix<f64>,
    pub z12: DMatrix<f64>,
    pub z13: DMatrix<f64>,
    pub z23: DMatrix<f64>,
}

impl ZBlock {
    pub fn new(
        z11: DMatrix<f64>,
        z12: DMatrix<f64>,
        z13: DMatrix<f64>,
        z23: DMatrix<f64>,
    ) -> Result<Self> {
        let n = z11.nrows();
        let m = z12.ncols();
        if z11.ncols() != n
            || z12.nrows() != n
            || z13.shape() != (n, m)
            || z23.shape() != (m, m)
        {
            return Err(Error::DimensionMismatch {
                context: "ZBlock",
                detail: "blocks must be n x n, n x m, n x m, m x m".into(),
            });
        }
        check_finite(&z11, "ZBlock z11")?;
        check_finite(&z12, "ZBlock z12")?;
        check_finite(&z13, "ZBlock z13")?;
        check_finite(&z23, "ZBlock z23")?;
        let defect = fro_norm(&(&z11 - z11.transpose()));
        if defect > 1e-10 * fro_norm(&z11).max(1.0) {
            return Err(Error::Numeric(format!(
                "ZBlock z11 is not symmetric: defect {defect:.3e}"
            )));
        }
        Ok(Self { z11, z12, z13, z23 })
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            z11: DMatrix::zeros(n, n),
            z12: DMatrix::zeros(n, m),
            z13: DMatrix::zeros(n, m),
            z23: DMatrix::zeros(m, m),
        }
    }

    pub fn n(&self) -> usize {
        self.z11.nrows()
    }

    pub fn m(&self) -> usize {
        self.z12.ncols()
    }
}

/// Assemble the full symmetric matrix represented by a [`ZBlock`].
pub fn assemble_z(zb: &ZBlock) -> DMatrix<f64> {
    let n = zb.n();
    let m = zb.m();
    let size = n + 2 * m;
    let mut out = DMatrix::zeros(size, size);
    out.view_mut((0, 0), (n, n)).copy_from(&zb.z11);
    out.view_mut((0, n), (n, m)).copy_from(&zb.z12);
    out.view_mut((0, n + m), (n, m)).copy_from(&zb.z13);
    out.view_mut((n, 0), (m, n)).copy_from(&zb.z12.transpose());
    out.view_mut((n + m, 0), (m, n))
        .copy_from(&zb.z13.transpose());
    out.view_mut((n, n + m), (m, m)).copy_from(&zb.z23);
    out.view_mut((n + m, n), (m, m))
        .copy_from(&zb.z23.transpose());
    for i in 0..2 * m {
        out[(n + i, n + i)] = 1.0;
    }
    out
}

/// Extract the free blocks of a full `(n+2m) x (n+2m)` matrix laid out like
/// [`assemble_z`]. The (2,2)/(3,3) blocks are discarded, not checked.
pub fn split_z(full: &DMatrix<f64>, n: usize, m: usize) -> Result<ZBlock> {
    let size = n + 2 * m;
    if full.shape() != (size, size) {
        return Err(Error::DimensionMismatch {
            context: "split_z",
            detail: format!(
                "expected {size}x{size} for n={n}, m={m}, got {}x{}",
                full.nrows(),
                full.ncols()
            ),
        });
    }
    Ok(ZBlock {
        z11: full.view((0, 0), (n, n)).into_owned(),
        z12: full.view((0, n), (n, m)).into_owned(),
        z13: full.view((0, n + m), (n, m)).into_owned(),
        z23: full.view((n, n + m), (m, m)).into_owned(),
    })
}

/// Map an sPH form onto the block variable:
/// `Z11 = 2R`, `Z12 = -(F-P)`, `Z13 = -(F+P)`, `Z23 = -D^T`.
pub fn sph_to_zblock(sph: &SphForm) -> ZBlock {
    ZBlock {
        z11: &sph.r * 2.0,
        z12: -(&sph.f - &sph.p),
        z13: -(&sph.f + &sph.p),
        z23: -sph.d.transpose(),
    }
}

/// Invert [`sph_to_zblock`] for the blocks it determines:
/// `R = Z11/2`, `F = -(Z12+Z13)/2`, `P = (Z12-Z13)/2`, `D = -Z23^T`.
pub fn zblock_to_rfpd(zb: &ZBlock) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let r = &zb.z11 * 0.5;
    let f = -(&zb.z12 + &zb.z13) * 0.5;
    let p = (&zb.z12 - &zb.z13) * 0.5;
    let d = -zb.z23.transpose();
    (r, f, p, d)
}

/// Bounded-realness LMI block for a candidate certificate `X`:
/// ```text
/// [ A^T X + X A   X B    C^T ]
/// [ B^T X         -I     D^T ]
/// [ C             D      -I  ]
/// ```
/// The system is bounded real (for minimal realizations) iff some symmetric
/// `X > 0` makes this negative semidefinite.
pub fn assemble_br_lmi(sys: &LtiSystem, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sys.n();
    let m = sys.m();
    if x.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "assemble_br_lmi",
            detail: format!("X must be {n}x{n}, got {}x{}", x.nrows(), x.ncols()),
        });
    }
    check_finite(x, "assemble_br_lmi X")?;
    let size = n + 2 * m;
    let mut out = DMatrix::zeros(size, size);
    let axa = sys.a.transpose() * x + x * &sys.a;
    let xb = x * &sys.b;
    out.view_mut((0, 0), (n, n)).copy_from(&axa);
    out.view_mut((0, n), (n, m)).copy_from(&xb);
    out.view_mut((n, 0), (m, n)).copy_from(&xb.transpose());
    out.view_mut((0, n + m), (n, m)).copy_from(&sys.c.transpose());
    out.view_mut((n + m, 0), (m, n)).copy_from(&sys.c);
    out.view_mut((n, n + m), (m, m)).copy_from(&sys.d.transpose());
    out.view_mut((n + m, n), (m, m)).copy_from(&sys.d);
    for i in 0..2 * m {
        out[(n + i, n + i)] = -1.0;
    }
    Ok(out)
}

/// Passivity block of an sPH form:
/// ```text
/// [ 2R          -(F-P)   -(F+P) ]
/// [ -(F-P)^T     I       -D^T   ]
/// [ -(F+P)^T    -D        I     ]
/// ```
/// PSD exactly when the form is scattering passive.
pub fn assemble_ks(sph: &SphForm) -> DMatrix<f64> {
    let zb = sph_to_zblock(sph);
    // K_s shares the layout of the assembled block variable with
    // Z23 = -D^T, which sph_to_zblock already encodes.
    assemble_z(&zb)
}

/// Realize the LTI system described by an sPH form:
/// `A = (J-R)Q`, `B = F-P`, `C = (F+P)^T Q`, `D = D`.
pub fn sph_to_lti(sph: &SphForm) -> LtiSystem {
    LtiSystem {
        a: (&sph.j - &sph.r) * &sph.q,
        b: &sph.f - &sph.p,
        c: (&sph.f + &sph.p).transpose() * &sph.q,
        d: sph.d.clone(),
    }
}

/// Rewrite an LTI system in sPH form from a bounded-realness certificate
/// `X`: requires `X` symmetric positive definite with
/// `lambda_max(assemble_br_lmi(sys, X)) <= tol`. Then
/// `J = skew(A X^-1)`, `R = -sym(A X^-1)`, `Q = X`,
/// `F = (B + X^-1 C^T)/2`, `P = (-B + X^-1 C^T)/2`.
pub fn lti_to_sph_via_x(sys: &LtiSystem, x: &DMatrix<f64>, tol: f64) -> Result<SphForm> {
    let n = sys.n();
    if x.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "lti_to_sph_via_x",
            detail: format!("X must be {n}x{n}, got {}x{}", x.nrows(), x.ncols()),
        });
    }
    check_finite(x, "lti_to_sph_via_x X")?;
    let sym_defect = fro_norm(&(x - x.transpose()));
    if sym_defect > 1e-10 * fro_norm(x).max(1.0) {
        return Err(Error::Numeric(format!(
            "certificate X is not symmetric: defect {sym_defect:.3e}"
        )));
    }
    let (x_min, _) = matcore::lambda_extreme(x)?;
    if x_min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            context: "lti_to_sph_via_x X",
            lambda_min: x_min,
        });
    }
    let lmi = assemble_br_lmi(sys, x)?;
    let (_, lmi_max) = matcore::lambda_extreme(&lmi)?;
    if lmi_max > tol {
        return Err(Error::NotBrCertificate {
            lambda_max: lmi_max,
            tol,
        });
    }
    let chol = x
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite {
            context: "lti_to_sph_via_x X (factorization)",
            lambda_min: x_min,
        })?;
    // A X^-1 = (X^-1 A^T)^T since X is symmetric.
    let ax_inv = chol.solve(&sys.a.transpose()).transpose();
    let xinv_ct = chol.solve(&sys.c.transpose());
    let j = (&ax_inv - ax_inv.transpose()) * 0.5;
    let r = -(&ax_inv + ax_inv.transpose()) * 0.5;
    let f = (&sys.b + &xinv_ct) * 0.5;
    let p = (&xinv_ct - &sys.b) * 0.5;
    SphForm::new(j, r, x.clone(), f, p, sys.d.clone())
}

/// Cayley transform of an impedance-passive system into scattering form:
/// `(A - B(I+D)^-1 C, sqrt(2) B(I+D)^-1, -sqrt(2) (I+D)^-1 C, -(I+D)^-1 (D-I))`.
///
/// Fails when `I + D` is singular to rcond 1e-12.
pub fn cayley_impedance_to_scattering(sys: &LtiSystem) -> Result<LtiSystem> {
    let m = sys.m();
    let id_plus_d = DMatrix::identity(m, m) + &sys.d;
    let sv = id_plus_d.clone().svd(false, false).singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 1e-12 * smax.max(1.0) {
        return Err(Error::Singular {
            context: "cayley (I + D)",
            rcond: if smax > 0.0 { smin / smax } else { 0.0 },
        });
    }
    let lu = id_plus_d.clone().lu();
    // (I+D)^-1 C and (I+D)^-1 (D - I)
    let inv_c = lu.solve(&sys.c).ok_or(Error::Singular {
        context: "cayley (I + D) solve",
        rcond: smin / smax,
    })?;
    let d_minus_i = &sys.d - DMatrix::identity(m, m);
    let inv_dmi = lu.solve(&d_minus_i).ok_or(Error::Singular {
        context: "cayley (I + D) solve",
        rcond: smin / smax,
    })?;
    // B (I+D)^-1 via the transposed system.
    let lut = id_plus_d.transpose().lu();
    let b_inv = lut
        .solve(&sys.b.transpose())
        .ok_or(Error::Singular {
            context: "cayley (I + D)^T solve",
            rcond: smin / smax,
        })?
        .transpose();
    let s2 = std::f64::consts::SQRT_2;
    LtiSystem::new(
        &sys.a - &b_inv * &sys.c,
        &b_inv * s2,
        &inv_c * (-s2),
        -inv_dmi,
    )
}
