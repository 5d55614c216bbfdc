//! Benchmark and test-data generation: the fixed four-state example used
//! throughout the docs, a seeded random structured-model generator with a
//! noise knob, and a small RLC ladder in impedance form.

use crate::error::{Error, Result};
use crate::matcore::{fro_norm, lambda_extreme};
#[cfg(test)]
use crate::matcore::sym_eig;
use crate::oracle::{max_pole_real_part, transfer_at};
use crate::sysmodel::{assemble_z, sph_to_lti, LtiSystem, SphForm, ZBlock};
use nalgebra::DMatrix;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Additive floor in the diagonal shift of the random generator.
pub const SHIFT_FLOOR: f64 = 0.1;

/// Seeded Gaussian source with a fixed, documented construction so fixtures
/// are reproducible across platforms: ChaCha8 keyed from the 64-bit seed,
/// uniform doubles from the top 53 bits mapped into (0, 1], and one normal
/// per uniform pair via the cosine branch of Box-Muller (the sine spare is
/// discarded, keeping the stream position independent of call history).
pub struct SeedRng {
    inner: ChaCha8Rng,
}

impl SeedRng {
    pub fn new(seed: u64) -> Self {
        SeedRng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn uniform_open(&mut self) -> f64 {
        ((self.inner.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Standard-normal matrix filled in row-major order.
    pub fn randn(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.normal()).collect();
        DMatrix::from_row_slice(rows, cols, &data)
    }
}

/// Which diagonal-shift formula the generator applies to the damping block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShiftRule {
    /// R <- (R + c I) / c while the coupling blocks shrink by 1/(1+c). The
    /// damping block ends up relatively larger than the rest, which can only
    /// add margin to the passivity block.
    #[default]
    Printed,
    /// R <- (R + c I) / (1+c), the uniform scaling of the whole block.
    Matched,
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    /// Noise level applied to the returned state-space realization; zero
    /// leaves the realization exactly matching the structured model.
    pub delta: f64,
    pub seed: u64,
    pub shift_rule: ShiftRule,
}

impl SynthConfig {
    pub fn new(n: usize, m: usize, delta: f64, seed: u64) -> Result<Self> {
        if n < 1 || m < 1 {
            return Err(Error::Config(format!(
                "generator dimensions must be at least 1, got n={n}, m={m}"
            )));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::Config(format!(
                "noise level must be finite and nonnegative, got {delta}"
            )));
        }
        Ok(SynthConfig {
            n,
            m,
            delta,
            seed,
            shift_rule: ShiftRule::default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct LadderConfig {
    pub cells: usize,
    pub r: f64,
    pub l: f64,
    pub c: f64,
}

impl LadderConfig {
    pub fn new(cells: usize, r: f64, l: f64, c: f64) -> Result<Self> {
        if cells < 1 {
            return Err(Error::Config("ladder needs at least one cell".into()));
        }
        if !(r > 0.0 && l > 0.0 && c > 0.0) || !(r.is_finite() && l.is_finite() && c.is_finite()) {
            return Err(Error::Config(format!(
                "component values must be positive reals, got R={r}, L={l}, C={c}"
            )));
        }
        Ok(LadderConfig { cells, r, l, c })
    }

    pub fn unit(cells: usize) -> Result<Self> {
        Self::new(cells, 1.0, 1.0, 1.0)
    }
}

/// The fixed four-state, two-port example: asymptotically stable (poles at
/// -0.08 +- 0.83i and -0.7 +- 9i) but with transfer gain above one.
pub fn boyd_system() -> LtiSystem {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            -0.08, 0.83, 0.0, 0.0, //
            -0.83, -0.08, 0.0, 0.0, //
            0.0, 0.0, -0.7, 9.0, //
            0.0, 0.0, -9.0, -0.7,
        ],
    );
    let b = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0]);
    let c = DMatrix::from_row_slice(2, 4, &[0.4, 0.0, 0.4, 0.0, 0.6, 0.0, 1.0, 0.0]);
    let d = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, -0.15]);
    LtiSystem::new(a, b, c, d).expect("fixed constants are well formed")
}

fn unit_fro(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let norm = fro_norm(&m);
    if !(norm.is_finite() && norm > 0.0) {
        return Err(Error::Numeric(format!(
            "cannot normalize {what}: Frobenius norm {norm}"
        )));
    }
    Ok(m / norm)
}

/// Pre-shift random factors, each Frobenius-normalized to 1: general
/// coupling blocks, a skew-symmetrized interconnection, and Gram-form
/// (hence positive semidefinite) energy and damping blocks.
pub(crate) struct SynthFactors {
    pub f: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub dt: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Draw order is part of the fixture contract: F, P, D, then J, then the
/// Gram factors of Q and R.
pub(crate) fn draw_synth_factors(rng: &mut SeedRng, n: usize, m: usize) -> Result<SynthFactors> {
    let f = unit_fro(rng.randn(n, m), "coupling block F")?;
    let p = unit_fro(rng.randn(n, m), "coupling block P")?;
    let dt = unit_fro(rng.randn(m, m), "feedthrough")?;
    let j_raw = rng.randn(n, n);
    let j = unit_fro((&j_raw - j_raw.transpose()) * 0.5, "interconnection")?;
    let gq = rng.randn(n, n);
    let q = unit_fro(&gq * gq.transpose(), "energy block")?;
    let gr = rng.randn(n, n);
    let r = unit_fro(&gr * gr.transpose(), "damping block")?;
    Ok(SynthFactors { f, p, dt, j, q, r })
}

fn perturb_one(
    rng: &mut SeedRng,
    base: &DMatrix<f64>,
    delta: f64,
    class: Structure,
    what: &str,
) -> Result<DMatrix<f64>> {
    if delta == 0.0 {
        return Ok(base.clone());
    }
    let g = rng.randn(base.nrows(), base.ncols());
    // Structure first, then normalization, so the added noise has exact
    // unit Frobenius norm inside the structure class.
    let shaped = match class {
        Structure::General => g,
        Structure::Symmetric => (&g + g.transpose()) * 0.5,
        Structure::Skew => (&g - g.transpose()) * 0.5,
    };
    Ok(base + unit_fro(shaped, what)? * delta)
}

#[derive(Clone, Copy)]
enum Structure {
    General,
    Symmetric,
    Skew,
}

fn perturb_lti_with(rng: &mut SeedRng, sys: &LtiSystem, delta: f64) -> Result<LtiSystem> {
    let a = perturb_one(rng, &sys.a, delta, Structure::General, "A noise")?;
    let b = perturb_one(rng, &sys.b, delta, Structure::General, "B noise")?;
    let c = perturb_one(rng, &sys.c, delta, Structure::General, "C noise")?;
    let d = perturb_one(rng, &sys.d, delta, Structure::General, "D noise")?;
    LtiSystem::new(a, b, c, d)
}

/// Adds unit-Frobenius Gaussian noise scaled by `delta` to every matrix of
/// the realization. `delta = 0` returns the input unchanged.
pub fn perturb_lti(sys: &LtiSystem, delta: f64, seed: u64) -> Result<LtiSystem> {
    check_delta(delta)?;
    perturb_lti_with(&mut SeedRng::new(seed), sys, delta)
}

/// Structure-preserving version for structured models: the interconnection
/// noise is skew-symmetrized and the energy and damping noise symmetrized
/// before normalization, so the perturbed model stays well formed.
pub fn perturb_sph(sph: &SphForm, delta: f64, seed: u64) -> Result<SphForm> {
    check_delta(delta)?;
    let rng = &mut SeedRng::new(seed);
    let j = perturb_one(rng, &sph.j, delta, Structure::Skew, "J noise")?;
    let r = perturb_one(rng, &sph.r, delta, Structure::Symmetric, "R noise")?;
    let q = perturb_one(rng, &sph.q, delta, Structure::Symmetric, "Q noise")?;
    let f = perturb_one(rng, &sph.f, delta, Structure::General, "F noise")?;
    let p = perturb_one(rng, &sph.p, delta, Structure::General, "P noise")?;
    let d = perturb_one(rng, &sph.d, delta, Structure::General, "D noise")?;
    SphForm::new(j, r, q, f, p, d)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(Error::Config(format!(
            "noise level must be finite and nonnegative, got {delta}"
        )));
    }
    Ok(())
}

/// Generates a random structured model guaranteed passivity-feasible by a
/// diagonal shift of the damping block, plus its state-space realization.
///
/// The shift constant is c = max(0.1 - lambda_min(Z), 0.1) where Z is the
/// passivity block assembled from the normalized factors; the damping block
/// becomes (R + c I)/c under the default rule while the coupling blocks
/// shrink by 1/(1+c). When `delta > 0` the realization (not the structured
/// model) is perturbed with the same random stream, so one seed fixes the
/// whole fixture.
pub fn gen_synthetic_sph(cfg: &SynthConfig) -> Result<(SphForm, LtiSystem)> {
    if cfg.n < 1 || cfg.m < 1 {
        return Err(Error::Config(format!(
            "generator dimensions must be at least 1, got n={}, m={}",
            cfg.n, cfg.m
        )));
    }
    check_delta(cfg.delta)?;
    let mut rng = SeedRng::new(cfg.seed);
    let fac = draw_synth_factors(&mut rng, cfg.n, cfg.m)?;

    let pre = ZBlock {
        z11: &fac.r * 2.0,
        z12: -(&fac.f - &fac.p),
        z13: -(&fac.f + &fac.p),
        z23: -fac.dt.transpose(),
    };
    let (lambda_min, _) = lambda_extreme(&assemble_z(&pre))?;
    let c = (SHIFT_FLOOR - lambda_min).max(SHIFT_FLOOR);

    let r = match cfg.shift_rule {
        ShiftRule::Printed => (&fac.r + DMatrix::identity(cfg.n, cfg.n) * c) / c,
        ShiftRule::Matched => (&fac.r + DMatrix::identity(cfg.n, cfg.n) * c) / (1.0 + c),
    };
    let scale = 1.0 / (1.0 + c);
    let sph = SphForm::new(
        fac.j,
        r,
        fac.q,
        &fac.f * scale,
        &fac.p * scale,
        &fac.dt * scale,
    )?;

    let mut lti = sph_to_lti(&sph);
    if cfg.delta > 0.0 {
        lti = perturb_lti_with(&mut rng, &lti, cfg.delta)?;
    }
    Ok((sph, lti))
}

/// Positive-real feasibility block for an impedance system:
/// [[A^T X + X A, X B - C^T], [B^T X - C, -(D + D^T)]].
fn assemble_pr_lmi(sys: &LtiSystem, x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = sys.n();
    let m = sys.m();
    let mut out = DMatrix::zeros(n + m, n + m);
    let top = sys.a.transpose() * x + x * &sys.a;
    let off = x * &sys.b - sys.c.transpose();
    out.view_mut((0, 0), (n, n)).copy_from(&top);
    out.view_mut((0, n), (n, m)).copy_from(&off);
    out.view_mut((n, 0), (m, n)).copy_from(&off.transpose());
    out.view_mut((n, n), (m, m))
        .copy_from(&(-(&sys.d + sys.d.transpose())));
    out
}

/// Series-R/L, shunt-C ladder driven by the port voltage, with the port
/// current as output. States are the cell currents followed by the cell
/// voltages, so n = 2 * cells and m = 1:
///
///   L i_k' = v_{k-1} - R i_k - v_k   (v_0 is the input)
///   C v_k' = i_k - i_{k+1}           (i_{cells+1} = 0)
///   y = i_1
///
/// The construction self-checks its own passivity before returning: the
/// diagonal energy matrix diag(L, ..., L, C, ..., C) must satisfy the
/// positive-real feasibility block exactly, and the transfer function must
/// have nonnegative real part on a frequency grid.
pub fn gen_rlc_ladder(cfg: &LadderConfig) -> Result<LtiSystem> {
    let k = cfg.cells;
    let n = 2 * k;
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, 1);
    let mut cmat = DMatrix::zeros(1, n);
    for i in 0..k {
        // current state i (cell i+1)
        a[(i, i)] = -cfg.r / cfg.l;
        a[(i, k + i)] = -1.0 / cfg.l;
        if i > 0 {
            a[(i, k + i - 1)] = 1.0 / cfg.l;
        }
        // voltage state k+i
        a[(k + i, i)] = 1.0 / cfg.c;
        if i + 1 < k {
            a[(k + i, i + 1)] = -1.0 / cfg.c;
        }
    }
    b[(0, 0)] = 1.0 / cfg.l;
    cmat[(0, 0)] = 1.0;
    let sys = LtiSystem::new(a, b, cmat, DMatrix::zeros(1, 1))?;

    // Self-check 1: stored energy 0.5 (L sum i^2 + C sum v^2) dissipates at
    // rate u y - R sum i^2, which makes the diagonal matrix below an exact
    // feasibility certificate. Anything above roundoff is a construction bug.
    let mut x = DMatrix::zeros(n, n);
    for i in 0..k {
        x[(i, i)] = cfg.l;
        x[(k + i, k + i)] = cfg.c;
    }
    let (_, lmax) = lambda_extreme(&assemble_pr_lmi(&sys, &x))?;
    let scale = (cfg.r / cfg.l).max(1.0);
    if lmax > 1e-12 * scale {
        return Err(Error::Numeric(format!(
            "ladder self-check failed: feasibility block has lambda_max {lmax:.3e}"
        )));
    }
    // Self-check 2: poles strictly in the open left half plane and
    // nonnegative transfer real part on a coarse grid.
    let max_re = max_pole_real_part(&sys.a)?;
    if max_re >= 0.0 {
        return Err(Error::Numeric(format!(
            "ladder self-check failed: pole with real part {max_re:.3e}"
        )));
    }
    for dec in -40..=40 {
        let w = 10f64.powf(dec as f64 / 10.0);
        if let Some(t) = transfer_at(&sys, w) {
            let re = t[(0, 0)].re;
            if re < -1e-10 {
                return Err(Error::Numeric(format!(
                    "ladder self-check failed: negative real part {re:.3e} at omega {w:.3e}"
                )));
            }
        }
    }
    Ok(sys)
}
