//! Continuation of the first-eigenpair branch in λ, log–log fits of the
//! amplitude scaling near λ₁, branch classification, and a deflated probe
//! for branches bifurcating from the higher linear eigenvalues.
//!
//! For p > 2 the nontrivial branch grows out of zero at λ₁ like
//! ((λ−λ₁)/κ)^{1/(p−2)}; for p < 2 the same power law has a negative
//! exponent and the branch comes down from infinity. The rescaling
//! v = u/‖u‖^{2−p/2} maps the latter onto a branch from zero, which
//! [`transform_branch_points`] makes visible.

use crate::error::Error;
use crate::functionals::EnergySetting;
use crate::grid::{norms_with, Field, Grid};
use crate::linalg::norm;
use crate::solver::{
    self, linear_eigs, transform_to_v, transformed_residual, EigenPair, SolveOutcome, SolverConfig,
};
use serde::Serialize;

/// One converged station along a branch.
#[derive(Debug, Clone, Serialize)]
pub struct BranchPoint {
    pub lambda: f64,
    /// ‖u‖₂ in the mass inner product.
    pub l2_norm: f64,
    /// ‖u‖_{1,2} in the stiffness inner product.
    pub h12_norm: f64,
    pub energy: f64,
    pub residual: f64,
    /// Inner solver iterations this station cost.
    pub iterations: usize,
}

/// A traced branch: per-station summaries plus the full solution fields.
#[derive(Debug, Clone)]
pub struct TracedBranch {
    pub points: Vec<BranchPoint>,
    pub solutions: Vec<Field>,
}

/// Least-squares fit of log‖u‖₂ against log|λ − λ_ref|.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl ScalingFit {
    /// Reads the p-Dirichlet modulus κ off the fit, using
    /// log‖u‖ = log(λ−λ_ref)/(p−2) − log(κ)/(p−2).
    #[must_use]
    pub fn kappa(&self, p: f64) -> f64 {
        (-self.intercept * (p - 2.0)).exp()
    }
}

/// Which side of λ₁ the nontrivial amplitudes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BifurcationKind {
    FromZero,
    FromInfinity,
}

/// Result of probing for a branch off a higher linear eigenvalue.
#[derive(Debug, Clone)]
pub enum ProbeOutcome {
    Found {
        pair: EigenPair,
        /// Sign changes (1D) or nodal domains − 1 (2D) of the solution.
        sign_changes: usize,
    },
    NoBranchFound {
        reason: String,
    },
}

/// Amplitude guard for p < 2: tracing stops rather than chase the blow-up.
const NORM_CAP: f64 = 1e6;

/// Follows the first-eigenpair branch across the given λ stations.
///
/// Stations are solved in the order given, each warm-started from the
/// previous solution rescaled by the one-mode amplitude ratio. A station
/// that fails outright is retried once from a midpoint solve between it and
/// its predecessor; if that also fails the trace stops with
/// [`Error::ContinuationStall`].
pub fn trace_branch(
    grid: &Grid,
    p: f64,
    lambdas: &[f64],
    config: &SolverConfig,
) -> Result<TracedBranch, Error> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("no lambda stations given".into()));
    }
    config.validate()?;
    let modes = linear_eigs(grid, 1)?;
    let (lambda_1, e1) = (modes[0].0, &modes[0].1);
    let kappa = crate::grid::norms(e1, p, 0.0).p_dirichlet;

    let mut points = Vec::with_capacity(lambdas.len());
    let mut solutions: Vec<Field> = Vec::with_capacity(lambdas.len());
    let mut prev: Option<(f64, Field)> = None;
    for &lambda in lambdas {
        let setting = EnergySetting::new(p, lambda, 0.0)?;
        let warm = prev
            .as_ref()
            .map(|(l_prev, u_prev)| predictor(u_prev, *l_prev, lambda, lambda_1, kappa, p));
        let solved = solve_station(grid, &setting, config, warm.as_ref());
        let (outcome, iterations) = match solved {
            Ok(pair) => pair,
            Err(first_err) => {
                // One level of bisection: solve the midpoint, then retry.
                let retry = prev.as_ref().and_then(|(l_prev, u_prev)| {
                    let l_mid = 0.5 * (l_prev + lambda);
                    let mid_setting = EnergySetting::new(p, l_mid, 0.0).ok()?;
                    let mid_warm = predictor(u_prev, *l_prev, l_mid, lambda_1, kappa, p);
                    let (mid_out, _) =
                        solve_station(grid, &mid_setting, config, Some(&mid_warm)).ok()?;
                    let mid_u = mid_out.as_nontrivial()?.u.clone();
                    let warm2 = predictor(&mid_u, l_mid, lambda, lambda_1, kappa, p);
                    solve_station(grid, &setting, config, Some(&warm2)).ok()
                });
                match retry {
                    Some(pair) => pair,
                    None => {
                        if points.is_empty() {
                            return Err(first_err);
                        }
                        return Err(Error::ContinuationStall {
                            at_lambda: lambda,
                            solved: points.len(),
                        });
                    }
                }
            }
        };
        match outcome {
            SolveOutcome::Nontrivial(pair) => {
                let n = norms_with(
                    &pair.u,
                    p,
                    0.0,
                    &crate::grid::assemble_mass(grid),
                    &crate::grid::assemble_stiffness(grid),
                );
                let l2 = n.l2_sq.max(0.0).sqrt();
                let point = BranchPoint {
                    lambda,
                    l2_norm: l2,
                    h12_norm: n.h1_sq.max(0.0).sqrt(),
                    energy: pair.energy,
                    residual: pair.residual,
                    iterations,
                };
                let stop = l2 > NORM_CAP;
                prev = Some((lambda, pair.u.clone()));
                solutions.push(pair.u);
                points.push(point);
                if stop {
                    break;
                }
            }
            SolveOutcome::Trivial(_) => {
                // Stations at or below lambda_1 have no branch to record.
                prev = None;
            }
        }
    }
    if points.is_empty() {
        return Err(Error::ContinuationStall {
            at_lambda: lambdas[0],
            solved: 0,
        });
    }
    Ok(TracedBranch { points, solutions })
}

fn solve_station(
    grid: &Grid,
    setting: &EnergySetting,
    config: &SolverConfig,
    warm: Option<&Field>,
) -> Result<(SolveOutcome, usize), Error> {
    solver::solve_first_counted(grid, setting, config, warm)
}

/// Warm-start guess: the previous solution rescaled by the ratio of one-mode
/// amplitudes at the two stations.
fn predictor(
    u_prev: &Field,
    lambda_prev: f64,
    lambda_next: f64,
    lambda_1: f64,
    kappa: f64,
    p: f64,
) -> Field {
    let r_prev = solver::one_mode_amplitude(lambda_prev, lambda_1, kappa, p);
    let r_next = solver::one_mode_amplitude(lambda_next, lambda_1, kappa, p);
    match (r_prev, r_next) {
        (Some(a), Some(b)) if a > 0.0 && b.is_finite() => u_prev.scaled(b / a),
        _ => u_prev.clone(),
    }
}

/// Fits log‖u‖₂ = slope · log|λ − λ_ref| + intercept by least squares.
///
/// Needs at least five usable stations; stations at λ_ref or with zero norm
/// are skipped.
pub fn fit_scaling(points: &[BranchPoint], lambda_ref: f64) -> Result<ScalingFit, Error> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|pt| pt.l2_norm > 0.0 && (pt.lambda - lambda_ref).abs() > 0.0)
        .map(|pt| ((pt.lambda - lambda_ref).abs().ln(), pt.l2_norm.ln()))
        .collect();
    if data.len() < 5 {
        return Err(Error::InsufficientPoints {
            got: data.len(),
            need: 5,
        });
    }
    let n = data.len() as f64;
    let sx: f64 = data.iter().map(|d| d.0).sum();
    let sy: f64 = data.iter().map(|d| d.1).sum();
    let sxx: f64 = data.iter().map(|d| d.0 * d.0).sum();
    let sxy: f64 = data.iter().map(|d| d.0 * d.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return Err(Error::InsufficientPoints {
            got: data.len(),
            need: 5,
        });
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mean_y = sy / n;
    let ss_tot: f64 = data.iter().map(|d| (d.1 - mean_y).powi(2)).sum();
    let ss_res: f64 = data
        .iter()
        .map(|d| (d.1 - slope * d.0 - intercept).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Decides whether the branch leaves λ₁ with vanishing or blowing-up
/// amplitude, judged by the norm trend toward λ₁.
///
/// When `p` is given the trend is cross-checked against the sign of p − 2;
/// a contradiction or a flat trend is [`Error::AmbiguousTrend`].
pub fn classify_bifurcation(
    points: &[BranchPoint],
    lambda_1: f64,
    p: Option<f64>,
) -> Result<BifurcationKind, Error> {
    if points.len() < 2 {
        return Err(Error::InsufficientPoints {
            got: points.len(),
            need: 2,
        });
    }
    let near = points
        .iter()
        .min_by(|a, b| {
            (a.lambda - lambda_1)
                .abs()
                .total_cmp(&(b.lambda - lambda_1).abs())
        })
        .expect("nonempty");
    let far = points
        .iter()
        .max_by(|a, b| {
            (a.lambda - lambda_1)
                .abs()
                .total_cmp(&(b.lambda - lambda_1).abs())
        })
        .expect("nonempty");
    if near.l2_norm <= 0.0 || far.l2_norm <= 0.0 {
        return Err(Error::AmbiguousTrend("zero amplitude on the branch".into()));
    }
    let ratio = near.l2_norm / far.l2_norm;
    let kind = if ratio < 0.75 {
        BifurcationKind::FromZero
    } else if ratio > 4.0 / 3.0 {
        BifurcationKind::FromInfinity
    } else {
        return Err(Error::AmbiguousTrend(format!(
            "norm ratio {ratio:.3} between nearest and farthest station is flat"
        )));
    };
    if let Some(p) = p {
        let expected = if p > 2.0 {
            BifurcationKind::FromZero
        } else {
            BifurcationKind::FromInfinity
        };
        if kind != expected {
            return Err(Error::AmbiguousTrend(format!(
                "trend says {kind:?} but the exponent p={p} predicts {expected:?}"
            )));
        }
    }
    Ok(kind)
}

/// Re-expresses a traced p < 2 branch through v = u/‖u‖_{1,2}^{2−p/2}.
///
/// Norms are those of v and the residual is that of the transformed
/// equation, so a blow-up branch reads as one growing out of zero.
pub fn transform_branch_points(
    branch: &TracedBranch,
    p: f64,
) -> Result<Vec<BranchPoint>, Error> {
    if branch.points.len() != branch.solutions.len() {
        return Err(Error::InvalidConfig(
            "branch points and solutions are out of step".into(),
        ));
    }
    let mut out = Vec::with_capacity(branch.points.len());
    for (point, u) in branch.points.iter().zip(&branch.solutions) {
        let v = transform_to_v(u, p)?;
        let setting = EnergySetting::new(p, point.lambda, 0.0)?;
        let res = transformed_residual(&v, &setting)?;
        let grid = u.grid();
        let n = norms_with(
            &v,
            p,
            0.0,
            &crate::grid::assemble_mass(grid),
            &crate::grid::assemble_stiffness(grid),
        );
        out.push(BranchPoint {
            lambda: point.lambda,
            l2_norm: n.l2_sq.max(0.0).sqrt(),
            h12_norm: n.h1_sq.max(0.0).sqrt(),
            energy: point.energy,
            residual: norm(res.values()),
            iterations: point.iterations,
        });
    }
    Ok(out)
}

/// Looks for a nontrivial solution near the k-th linear eigenvalue at
/// λ = λ_k + `offset`, seeding with the one-mode state on e_k and deflating
/// the first branch and zero out of the Newton iteration.
pub fn higher_branch_probe(
    grid: &Grid,
    p: f64,
    k: usize,
    offset: f64,
    config: &SolverConfig,
) -> Result<ProbeOutcome, Error> {
    if !(offset > 0.0) {
        return Err(Error::InvalidConfig(
            "probe offset above lambda_k must be positive".into(),
        ));
    }
    config.validate()?;
    let modes = linear_eigs(grid, k)?;
    let (lambda_k, e_k) = (modes[k - 1].0, &modes[k - 1].1);
    let lambda = lambda_k + offset;
    let eps = if p < 2.0 {
        *config
            .epsilon_schedule
            .last()
            .expect("validated schedule is nonempty")
    } else {
        0.0
    };
    let setting = EnergySetting::new(p, lambda, eps)?;
    let ws = solver::Workspace::new(grid)?;
    let kappa_k = crate::grid::norms(e_k, p, 0.0).p_dirichlet;
    let amp = solver::one_mode_amplitude(lambda, lambda_k, kappa_k, p)
        .ok_or_else(|| Error::InvalidConfig("offset leaves no one-mode amplitude".into()))?;
    let seed = e_k.scaled(amp);

    // Known stationary states to deflate: the first branch both ways, and 0.
    let mut deflate = vec![Field::zeros(grid)];
    if let SolveOutcome::Nontrivial(first) = solver::solve_first(grid, &setting.with_epsilon(0.0), config)? {
        deflate.push(first.u.scaled(-1.0));
        deflate.push(first.u);
    }

    let tol = config.gradient_tol.max(1e-10);
    let u = solver::deflated_newton(&ws, &setting, &seed, &deflate, tol, 300)?;
    let floor = config.triviality_floor * grid.measure().sqrt();
    let mass = crate::grid::assemble_mass(grid);
    let l2 = mass.quadratic(u.values()).max(0.0).sqrt();
    if l2 < floor {
        return Ok(ProbeOutcome::NoBranchFound {
            reason: "iteration collapsed onto the zero branch".into(),
        });
    }
    for known in deflate.iter().skip(1) {
        let diff: Vec<f64> = u
            .values()
            .iter()
            .zip(known.values())
            .map(|(a, b)| a - b)
            .collect();
        if mass.quadratic(&diff).max(0.0).sqrt() < 1e-6 * l2.max(1.0) {
            return Ok(ProbeOutcome::NoBranchFound {
                reason: "iteration fell back onto the first branch".into(),
            });
        }
    }
    let sign_changes = crate::multiplicity::nodal_count(&u).saturating_sub(1);
    if k >= 2 && sign_changes == 0 {
        return Ok(ProbeOutcome::NoBranchFound {
            reason: "converged state is one-signed, not a higher branch".into(),
        });
    }
    let pair = solver::package_pair(&ws, &setting, u);
    Ok(ProbeOutcome::Found { pair, sign_changes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn interval(cells: usize) -> Grid {
        Grid::new(1, &[0.0, 1.0], &[cells]).unwrap()
    }

    #[test]
    fn fit_recovers_synthetic_power_law() {
        // Points manufactured from r = ((lambda-10)/37)^{1/(p-2)} with p=3.
        let kappa = 37.0;
        let points: Vec<BranchPoint> = (1..=8)
            .map(|i| {
                let lambda = 10.0 + 0.5 * i as f64;
                BranchPoint {
                    lambda,
                    l2_norm: (lambda - 10.0) / kappa,
                    h12_norm: 0.0,
                    energy: 0.0,
                    residual: 0.0,
                    iterations: 0,
                }
            })
            .collect();
        let fit = fit_scaling(&points, 10.0).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12, "slope {}", fit.slope);
        assert!((fit.kappa(3.0) - kappa).abs() < 1e-9 * kappa);
        assert!(fit.r_squared > 1.0 - 1e-12);
        assert!(matches!(
            fit_scaling(&points[..4], 10.0),
            Err(Error::InsufficientPoints { got: 4, need: 5 })
        ));
    }

    #[test]
    fn classification_follows_the_trend() {
        let mk = |norms: &[f64]| -> Vec<BranchPoint> {
            norms
                .iter()
                .enumerate()
                .map(|(i, &n)| BranchPoint {
                    lambda: 11.0 + i as f64,
                    l2_norm: n,
                    h12_norm: 0.0,
                    energy: 0.0,
                    residual: 0.0,
                    iterations: 0,
                })
                .collect()
        };
        let growing = mk(&[0.1, 0.5, 1.0, 2.0]);
        assert_eq!(
            classify_bifurcation(&growing, 10.0, Some(3.0)).unwrap(),
            BifurcationKind::FromZero
        );
        let blowing = mk(&[100.0, 10.0, 2.0, 1.0]);
        assert_eq!(
            classify_bifurcation(&blowing, 10.0, Some(1.5)).unwrap(),
            BifurcationKind::FromInfinity
        );
        // Cross-check failure: growing norms but subquadratic exponent.
        assert!(classify_bifurcation(&growing, 10.0, Some(1.5)).is_err());
        // Flat trend is ambiguous.
        let flat = mk(&[1.0, 1.01, 0.99, 1.0]);
        assert!(classify_bifurcation(&flat, 10.0, None).is_err());
    }

    #[test]
    fn traced_superquadratic_branch_scales_like_one_mode() {
        let g = interval(48);
        let lambda_1 = linear_eigs(&g, 1).unwrap()[0].0;
        let config = SolverConfig::default();
        let lambdas: Vec<f64> = (1..=7).map(|i| lambda_1 + 0.4 * i as f64).collect();
        let branch = trace_branch(&g, 3.0, &lambdas, &config).unwrap();
        assert_eq!(branch.points.len(), 7);
        for pt in &branch.points {
            assert!(pt.residual < 1e-8, "residual {} at {}", pt.residual, pt.lambda);
        }
        let fit = fit_scaling(&branch.points, lambda_1).unwrap();
        assert!((fit.slope - 1.0).abs() < 0.05, "slope {}", fit.slope);
        // kappa for e_1 with p = 3 approaches 8 sqrt(2) pi^2 / 3.
        let kappa_exact = 8.0 * 2.0f64.sqrt() * PI * PI / 3.0;
        assert!(
            (fit.kappa(3.0) - kappa_exact).abs() < 0.1 * kappa_exact,
            "kappa {}",
            fit.kappa(3.0)
        );
        assert_eq!(
            classify_bifurcation(&branch.points, lambda_1, Some(3.0)).unwrap(),
            BifurcationKind::FromZero
        );
    }

    #[test]
    fn transformed_subquadratic_branch_comes_from_zero() {
        let g = interval(48);
        let lambda_1 = linear_eigs(&g, 1).unwrap()[0].0;
        let config = SolverConfig::default();
        let lambdas: Vec<f64> = (1..=6).map(|i| lambda_1 + 0.5 * i as f64).collect();
        let branch = trace_branch(&g, 1.5, &lambdas, &config).unwrap();
        assert_eq!(
            classify_bifurcation(&branch.points, lambda_1, Some(1.5)).unwrap(),
            BifurcationKind::FromInfinity
        );
        let transformed = transform_branch_points(&branch, 1.5).unwrap();
        assert_eq!(
            classify_bifurcation(&transformed, lambda_1, None).unwrap(),
            BifurcationKind::FromZero
        );
        for pt in &transformed {
            assert!(pt.residual < 1e-5, "transformed residual {}", pt.residual);
        }
    }

    #[test]
    fn probe_finds_sign_changing_second_branch() {
        let g = interval(48);
        let config = SolverConfig::default();
        match higher_branch_probe(&g, 3.0, 2, 8.0, &config).unwrap() {
            ProbeOutcome::Found { pair, sign_changes } => {
                assert_eq!(sign_changes, 1, "second branch changes sign once");
                assert!(pair.residual < 1e-8);
            }
            ProbeOutcome::NoBranchFound { reason } => panic!("no branch: {reason}"),
        }
        assert!(higher_branch_probe(&g, 3.0, 2, 0.0, &config).is_err());
        assert!(higher_branch_probe(&g, 3.0, 2, -1.0, &config).is_err());
    }
}
