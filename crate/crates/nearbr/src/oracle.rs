//! Independent bounded-realness certification: an LMI eigenvalue
//! certificate, a frequency-grid test of the gain condition, and a refined
//! grid search for the supremal gain.
//!
//! These checks share no code with the optimization path on purpose; they
//! are the cross-checks the solvers are validated against. Complex
//! arithmetic stays inside this module.

use crate::error::{Error, Result};
use crate::matcore::{check_finite, lambda_extreme};
use crate::sysmodel::{assemble_br_lmi, LtiSystem};
use nalgebra::{Complex, DMatrix};

/// How many log-spaced frequencies the default grid uses (plus omega = 0).
pub const GRID_POINTS: usize = 500;
/// Default grid spans [LO_FACTOR * s0, HI_FACTOR * s0] with s0 the spectral
/// radius of A.
pub const GRID_LO_FACTOR: f64 = 1e-4;
pub const GRID_HI_FACTOR: f64 = 1e4;
/// Trisection rounds used to sharpen the grid extremum in the grid test.
const GRID_REFINE_ROUNDS: usize = 3;
/// Hard cap on refinement rounds in the sup-gain search.
const SUP_GAIN_MAX_ROUNDS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    Lmi,
    FreqGrid,
    Bisection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Br,
    NotBr,
    Inconclusive,
}

/// Evidence backing a verdict.
#[derive(Debug, Clone)]
pub enum Witness {
    /// Extreme eigenvalues of the candidate certificate and of the LMI block.
    LmiSpectrum {
        lambda_min_x: f64,
        lambda_max_lmi: f64,
    },
    /// Frequency attaining the smallest gain slack 1 - sigma_max(T)^2 seen.
    Frequency { omega: f64, slack: f64 },
    /// Largest transfer gain found and where it was attained.
    GainBracket { gamma: f64, omega: f64 },
    /// A pole on or right of the imaginary axis.
    UnstablePole { max_real_part: f64 },
}

#[derive(Debug, Clone)]
pub struct BrCertificate {
    pub method: OracleMethod,
    pub verdict: Verdict,
    pub witness: Witness,
    pub tol: f64,
    /// True when the verdict rests on sampled frequencies rather than an
    /// algebraic certificate; a grid can miss a violation between samples.
    pub grid_limited: bool,
}

/// Largest real part over the eigenvalues of A. This is the only place the
/// library needs a nonsymmetric eigensolve.
pub fn max_pole_real_part(a: &DMatrix<f64>) -> Result<f64> {
    check_finite(a, "pole check")?;
    if a.nrows() != a.ncols() {
        return Err(Error::NotSquare {
            context: "pole check".into(),
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    if a.nrows() == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    let eigs = a.clone().complex_eigenvalues();
    Ok(eigs.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max))
}

fn spectral_radius(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let eigs = a.clone().complex_eigenvalues();
    Ok(eigs.iter().map(|l| l.norm()).fold(0.0, f64::max))
}

/// Transfer matrix T(j omega) = C (j omega I - A)^{-1} B + D, evaluated via
/// a complex LU solve. `None` if the shifted matrix is numerically singular,
/// which for a stable A can only happen through extreme conditioning.
pub fn transfer_at(sys: &LtiSystem, omega: f64) -> Option<DMatrix<Complex<f64>>> {
    let n = sys.n();
    let to_c = |m: &DMatrix<f64>| m.map(|v| Complex::new(v, 0.0));
    if n == 0 {
        return Some(to_c(&sys.d));
    }
    let mut shifted = to_c(&sys.a).map(|v| -v);
    for i in 0..n {
        shifted[(i, i)] += Complex::new(0.0, omega);
    }
    let lu = shifted.lu();
    let x = lu.solve(&to_c(&sys.b))?;
    Some(to_c(&sys.c) * x + to_c(&sys.d))
}

/// Largest singular value of T(j omega); `None` on a singular shift.
pub fn gain_at(sys: &LtiSystem, omega: f64) -> Option<f64> {
    let t = transfer_at(sys, omega)?;
    Some(
        t.singular_values()
            .iter()
            .fold(0.0f64, |acc, s| acc.max(*s)),
    )
}

/// Gain slack 1 - sigma_max(T(j omega))^2; this equals the smallest
/// eigenvalue of I - T(j omega)^* T(j omega).
pub fn slack_at(sys: &LtiSystem, omega: f64) -> Option<f64> {
    gain_at(sys, omega).map(|g| 1.0 - g * g)
}

/// Default evaluation grid: omega = 0 plus `GRID_POINTS` log-spaced points
/// over [1e-4, 1e4] scaled by the spectral radius of A.
pub fn default_grid(sys: &LtiSystem) -> Result<Vec<f64>> {
    let s0 = spectral_radius(&sys.a)?.max(1e-12);
    let lo = (GRID_LO_FACTOR * s0).ln();
    let hi = (GRID_HI_FACTOR * s0).ln();
    let mut grid = Vec::with_capacity(GRID_POINTS + 1);
    grid.push(0.0);
    for k in 0..GRID_POINTS {
        let t = k as f64 / (GRID_POINTS - 1) as f64;
        grid.push((lo + t * (hi - lo)).exp());
    }
    Ok(grid)
}

/// Trisection refinement of a pointwise minimum: repeatedly evaluates the
/// two interior third-points of the bracket and keeps the better half.
/// Returns the best (omega, value) pair seen, counting the initial one.
fn trisect_min(
    mut eval: impl FnMut(f64) -> Option<f64>,
    mut lo: f64,
    mut hi: f64,
    mut x_best: f64,
    mut f_best: f64,
    max_rounds: usize,
    stop_width: Option<f64>,
) -> (f64, f64) {
    for _ in 0..max_rounds {
        if let Some(w) = stop_width {
            if hi - lo <= w * x_best.abs().max(1.0) {
                break;
            }
        }
        let a = lo + (hi - lo) / 3.0;
        let b = lo + 2.0 * (hi - lo) / 3.0;
        let fa = eval(a);
        let fb = eval(b);
        if let Some(v) = fa {
            if v < f_best {
                f_best = v;
                x_best = a;
            }
        }
        if let Some(v) = fb {
            if v < f_best {
                f_best = v;
                x_best = b;
            }
        }
        match (fa, fb) {
            (Some(va), Some(vb)) => {
                if va <= vb {
                    hi = b;
                } else {
                    lo = a;
                }
            }
            // A singular sample inside the bracket: shrink from both ends
            // and keep going rather than trusting a missing value.
            _ => {
                let third = (hi - lo) / 3.0;
                lo += third * 0.5;
                hi -= third * 0.5;
            }
        }
    }
    (x_best, f_best)
}

/// Certifies bounded-realness from a candidate storage matrix: BR exactly
/// when X is positive definite with margin `tol` and the associated LMI
/// block is negative semidefinite up to `tol`.
pub fn certify_lmi(sys: &LtiSystem, x: &DMatrix<f64>, tol: f64) -> Result<BrCertificate> {
    check_finite(x, "lmi certificate")?;
    if x.nrows() != sys.n() || x.ncols() != sys.n() {
        return Err(Error::DimensionMismatch {
            context: "lmi certificate".into(),
            detail: format!(
                "candidate is {}x{}, system order is {}",
                x.nrows(),
                x.ncols(),
                sys.n()
            ),
        });
    }
    let asym = (x - x.transpose()).abs().max();
    if asym > 1e-8 * (1.0 + x.abs().max()) {
        return Err(Error::Format(format!(
            "lmi certificate candidate is not symmetric (asymmetry {asym:.3e})"
        )));
    }
    let (lambda_min_x, _) = lambda_extreme(x)?;
    let lmi = assemble_br_lmi(sys, x)?;
    let (_, lambda_max_lmi) = lambda_extreme(&lmi)?;
    let verdict = if lambda_min_x > tol && lambda_max_lmi <= tol {
        Verdict::Br
    } else {
        Verdict::NotBr
    };
    Ok(BrCertificate {
        method: OracleMethod::Lmi,
        verdict,
        witness: Witness::LmiSpectrum {
            lambda_min_x,
            lambda_max_lmi,
        },
        tol,
        grid_limited: false,
    })
}

/// Samples the gain condition over `grid` and refines around the worst
/// point. Not-BR when a pole sits in the closed right half-plane or the
/// refined slack drops below -tol; otherwise BR in the grid-limited sense.
pub fn freq_grid_check(sys: &LtiSystem, grid: &[f64], tol: f64) -> Result<BrCertificate> {
    let max_re = max_pole_real_part(&sys.a)?;
    if max_re >= 0.0 {
        return Ok(BrCertificate {
            method: OracleMethod::FreqGrid,
            verdict: Verdict::NotBr,
            witness: Witness::UnstablePole {
                max_real_part: max_re,
            },
            tol,
            grid_limited: false,
        });
    }
    if grid.is_empty() {
        return Err(Error::Config("frequency grid is empty".into()));
    }

    let mut best_idx = None;
    let mut best_slack = f64::INFINITY;
    let mut skipped = 0usize;
    for (i, &w) in grid.iter().enumerate() {
        match slack_at(sys, w) {
            Some(s) => {
                if s < best_slack {
                    best_slack = s;
                    best_idx = Some(i);
                }
            }
            None => {
                skipped += 1;
                eprintln!("warning: skipping singular frequency sample at omega = {w:.6e}");
            }
        }
    }
    let Some(idx) = best_idx else {
        return Ok(BrCertificate {
            method: OracleMethod::FreqGrid,
            verdict: Verdict::Inconclusive,
            witness: Witness::Frequency {
                omega: f64::NAN,
                slack: f64::NAN,
            },
            tol,
            grid_limited: true,
        });
    };

    let lo = grid[idx.saturating_sub(1)];
    let hi = grid[(idx + 1).min(grid.len() - 1)];
    let (omega, slack) = trisect_min(
        |w| slack_at(sys, w),
        lo,
        hi,
        grid[idx],
        best_slack,
        GRID_REFINE_ROUNDS,
        None,
    );

    let verdict = if slack < -tol {
        Verdict::NotBr
    } else if skipped > 0 {
        Verdict::Inconclusive
    } else {
        Verdict::Br
    };
    Ok(BrCertificate {
        method: OracleMethod::FreqGrid,
        verdict,
        witness: Witness::Frequency { omega, slack },
        tol,
        grid_limited: true,
    })
}

/// Estimates the supremal transfer gain by refining the default grid around
/// its maximum until the bracket width falls below `tol` (relative to the
/// peak frequency). Returns the gain estimate together with a certificate:
/// BR when A is stable and the estimate stays within `tol` of the unit disk.
pub fn bisection_sup_gain(sys: &LtiSystem, tol: f64) -> Result<(f64, BrCertificate)> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Config(format!(
            "sup-gain tolerance must be positive, got {tol}"
        )));
    }
    let max_re = max_pole_real_part(&sys.a)?;
    if max_re >= 0.0 {
        let cert = BrCertificate {
            method: OracleMethod::Bisection,
            verdict: Verdict::NotBr,
            witness: Witness::UnstablePole {
                max_real_part: max_re,
            },
            tol,
            grid_limited: false,
        };
        return Ok((f64::INFINITY, cert));
    }

    let grid = default_grid(sys)?;
    let mut best_idx = 0usize;
    let mut best_gain = f64::NEG_INFINITY;
    for (i, &w) in grid.iter().enumerate() {
        if let Some(g) = gain_at(sys, w) {
            if g > best_gain {
                best_gain = g;
                best_idx = i;
            }
        }
    }
    if !best_gain.is_finite() {
        return Err(Error::Numeric(
            "all frequency samples failed during the sup-gain search".into(),
        ));
    }

    let lo = grid[best_idx.saturating_sub(1)];
    let hi = grid[(best_idx + 1).min(grid.len() - 1)];
    // Maximizing the gain is minimizing its negation.
    let (omega, neg_gain) = trisect_min(
        |w| gain_at(sys, w).map(|g| -g),
        lo,
        hi,
        grid[best_idx],
        -best_gain,
        SUP_GAIN_MAX_ROUNDS,
        Some(tol),
    );
    let gamma = -neg_gain;

    let verdict = if gamma <= 1.0 + tol {
        Verdict::Br
    } else {
        Verdict::NotBr
    };
    let cert = BrCertificate {
        method: OracleMethod::Bisection,
        verdict,
        witness: Witness::GainBracket { gamma, omega },
        tol,
        grid_limited: true,
    };
    Ok((gamma, cert))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::sph_to_lti;
    use crate::testing::{lcg_matrix, strict_sph_fixture};
    use nalgebra::dmatrix;

    fn scalar_lag() -> LtiSystem {
        // T(s) = 1 / (s + 1)
        LtiSystem::new(
            dmatrix![-1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.0],
        )
        .unwrap()
    }

    fn static_gain(n: usize, m: usize, d: f64) -> LtiSystem {
        LtiSystem::new(
            -DMatrix::<f64>::identity(n, n),
            DMatrix::zeros(n, m),
            DMatrix::zeros(m, n),
            DMatrix::identity(m, m) * d,
        )
        .unwrap()
    }

    #[test]
    fn lmi_certificate_accepts_the_scalar_lag_with_unit_storage() {
        let sys = scalar_lag();
        let x = dmatrix![1.0];
        // By hand: the LMI block is [[-2,1,1],[1,-1,0],[1,0,-1]], which is
        // negative semidefinite with a nontrivial kernel, so lambda_max = 0.
        let cert = certify_lmi(&sys, &x, 1e-9).unwrap();
        assert_eq!(cert.verdict, Verdict::Br);
        assert!(!cert.grid_limited);
        match cert.witness {
            Witness::LmiSpectrum {
                lambda_min_x,
                lambda_max_lmi,
            } => {
                assert!((lambda_min_x - 1.0).abs() < 1e-14);
                assert!(lambda_max_lmi.abs() < 1e-12);
            }
            _ => panic!("wrong witness kind"),
        }
    }

    #[test]
    fn lmi_certificate_rejects_an_unstable_pole_for_any_candidate() {
        let sys = LtiSystem::new(
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.0],
        )
        .unwrap();
        let cert = certify_lmi(&sys, &dmatrix![1.0], 1e-9).unwrap();
        assert_eq!(cert.verdict, Verdict::NotBr);
    }

    #[test]
    fn structured_model_with_its_own_energy_matrix_certifies() {
        let sph = strict_sph_fixture(5, 2, 71);
        let sys = sph_to_lti(&sph);
        let cert = certify_lmi(&sys, &sph.q, 1e-9).unwrap();
        assert_eq!(cert.verdict, Verdict::Br, "witness: {:?}", cert.witness);
    }

    #[test]
    fn small_static_gain_is_br_on_the_grid_and_large_one_is_not() {
        let ok = static_gain(2, 2, 0.5);
        let grid = default_grid(&ok).unwrap();
        let cert = freq_grid_check(&ok, &grid, 1e-9).unwrap();
        assert_eq!(cert.verdict, Verdict::Br);
        assert!(cert.grid_limited);
        match cert.witness {
            Witness::Frequency { slack, .. } => assert!((slack - 0.75).abs() < 1e-12),
            _ => panic!("wrong witness kind"),
        }

        let bad = static_gain(2, 2, 2.0);
        let grid = default_grid(&bad).unwrap();
        let cert = freq_grid_check(&bad, &grid, 1e-9).unwrap();
        assert_eq!(cert.verdict, Verdict::NotBr);
        match cert.witness {
            Witness::Frequency { slack, .. } => assert!((slack + 3.0).abs() < 1e-12),
            _ => panic!("wrong witness kind"),
        }
    }

    #[test]
    fn grid_check_flags_unstable_systems_before_sampling() {
        let sys = LtiSystem::new(
            dmatrix![0.5],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![0.0],
        )
        .unwrap();
        let grid = vec![0.0, 1.0];
        let cert = freq_grid_check(&sys, &grid, 1e-9).unwrap();
        assert_eq!(cert.verdict, Verdict::NotBr);
        match cert.witness {
            Witness::UnstablePole { max_real_part } => {
                assert!((max_real_part - 0.5).abs() < 1e-12)
            }
            _ => panic!("wrong witness kind"),
        }
    }

    #[test]
    fn scalar_lag_peaks_at_zero_frequency_with_unit_gain() {
        let sys = scalar_lag();
        let (gamma, cert) = bisection_sup_gain(&sys, 1e-7).unwrap();
        assert!((gamma - 1.0).abs() < 1e-9, "gamma = {gamma}");
        assert_eq!(cert.verdict, Verdict::Br);
        match cert.witness {
            Witness::GainBracket { omega, .. } => assert!(omega.abs() < 1e-2),
            _ => panic!("wrong witness kind"),
        }
    }

    #[test]
    fn static_gain_sup_matches_the_feedthrough_norm() {
        let sys = static_gain(3, 2, 0.37);
        let (gamma, cert) = bisection_sup_gain(&sys, 1e-7).unwrap();
        assert!((gamma - 0.37).abs() < 1e-12);
        assert_eq!(cert.verdict, Verdict::Br);
    }

    #[test]
    fn resonant_peak_is_located_and_valued_accurately() {
        // T(s) = 1 / (s^2 + 0.2 s + 1): peak 5.02518907629606 at
        // omega = sqrt(0.98) = 0.9899494936611666 (reference values from the
        // closed-form second-order response).
        let sys = LtiSystem::new(
            dmatrix![0.0, 1.0; -1.0, -0.2],
            dmatrix![0.0; 1.0],
            dmatrix![1.0, 0.0],
            dmatrix![0.0],
        )
        .unwrap();
        let (gamma, cert) = bisection_sup_gain(&sys, 1e-7).unwrap();
        assert!(
            (gamma - 5.02518907629606).abs() < 1e-6,
            "gamma = {gamma:.12}"
        );
        assert_eq!(cert.verdict, Verdict::NotBr);
        match cert.witness {
            Witness::GainBracket { omega, .. } => {
                assert!((omega - 0.9899494936611666).abs() < 1e-3, "omega = {omega}")
            }
            _ => panic!("wrong witness kind"),
        }
    }

    #[test]
    fn transfer_gain_is_conjugate_symmetric() {
        let sph = strict_sph_fixture(4, 2, 91);
        let sys = sph_to_lti(&sph);
        for &w in &[0.0, 0.3, 1.7, 42.0] {
            let plus = gain_at(&sys, w).unwrap();
            let minus = gain_at(&sys, -w).unwrap();
            assert!((plus - minus).abs() <= 1e-12 * plus.max(1.0));
        }
    }

    #[test]
    fn grid_agrees_with_the_lmi_certificate_on_structured_models() {
        for seed in 0..5 {
            let sph = strict_sph_fixture(3 + seed % 3, 1 + seed % 2, 120 + seed as u64);
            let sys = sph_to_lti(&sph);
            let lmi = certify_lmi(&sys, &sph.q, 1e-9).unwrap();
            assert_eq!(lmi.verdict, Verdict::Br);
            let grid = default_grid(&sys).unwrap();
            let freq = freq_grid_check(&sys, &grid, 1e-6).unwrap();
            assert_ne!(freq.verdict, Verdict::NotBr, "seed {seed}");
        }
    }

    #[test]
    fn default_grid_is_sorted_positive_and_spans_the_decades()
    {
        let sys = scalar_lag();
        let grid = default_grid(&sys).unwrap();
        assert_eq!(grid.len(), GRID_POINTS + 1);
        assert_eq!(grid[0], 0.0);
        assert!((grid[1] - 1e-4).abs() < 1e-12);
        assert!((grid[GRID_POINTS] - 1e4).abs() < 1e-8);
        for w in grid.windows(2) {
            assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn certificate_shape_and_symmetry_are_validated() {
        let sys = scalar_lag();
        assert!(certify_lmi(&sys, &DMatrix::identity(2, 2), 1e-9).is_err());
        let sys2 = LtiSystem::new(
            lcg_matrix(2, 2, 7),
            lcg_matrix(2, 1, 8),
            lcg_matrix(1, 2, 9),
            lcg_matrix(1, 1, 10),
        )
        .unwrap();
        let skewed = dmatrix![1.0, 0.5; -0.5, 1.0];
        assert!(certify_lmi(&sys2, &skewed, 1e-9).is_err());
    }
}
