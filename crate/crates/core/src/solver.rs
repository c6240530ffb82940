//! Linear eigenpairs of the Dirichlet pencil, first nonlinear eigenpairs of
//! −Δₚu − Δu = λu in both exponent regimes, the inverse operator, the
//! fixed-point map S_λ and the norm rescaling used for 1 < p < 2.
//!
//! The superquadratic solve (p > 2) minimises the energy by
//! stiffness-preconditioned descent with Armijo backtracking and finishes
//! with damped Newton steps on the gradient. The subquadratic solve (p < 2)
//! walks the Nehari manifold: each step projects the preconditioned tangent
//! direction back onto the constraint, with the gradient regularisation ε
//! continued from 1e-2 down to 1e-10 before a final free polish.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Error;
use crate::functionals::{
    self, energy_from_norms, EnergySetting,
};
use crate::grid::{
    assemble_mass, assemble_stiffness, norms_with, Field, Grid, GridSpec, SymmetricOperator,
};
use crate::linalg::{axpy, dot, norm, BandedLdlt, BandedMatrix};

/// Tunable knobs for every iterative solve in the crate.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Iteration budget per descent stage and per Newton polish.
    pub max_iterations: usize,
    /// Euclidean norm of the weak-form gradient at which a solve is accepted.
    pub gradient_tol: f64,
    /// Armijo slope fraction.
    pub armijo_c: f64,
    /// Backtracking factor in (0, 1).
    pub backtrack: f64,
    /// Regularisation continuation for p < 2, solved left to right.
    pub epsilon_schedule: Vec<f64>,
    /// Seed for every random choice a solve makes.
    pub seed: u64,
    /// ‖u‖₂ below `triviality_floor * measure^{1/2}` counts as the zero branch.
    pub triviality_floor: f64,
    /// Override for the p < 2 inverse-operator trust radius.
    pub trust_radius: Option<f64>,
    /// Worker threads for independent multi-starts (1 = sequential).
    pub threads: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 4000,
            gradient_tol: 1e-10,
            armijo_c: 1e-4,
            backtrack: 0.5,
            epsilon_schedule: vec![1e-2, 1e-4, 1e-6, 1e-8, 1e-10],
            seed: 0,
            triviality_floor: 1e-6,
            trust_radius: None,
            threads: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be positive".into()));
        }
        if !(self.gradient_tol > 0.0) {
            return Err(Error::InvalidConfig("gradient_tol must be positive".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::InvalidConfig("armijo_c must lie in (0,1)".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidConfig("backtrack must lie in (0,1)".into()));
        }
        if self.epsilon_schedule.is_empty()
            || self.epsilon_schedule.iter().any(|&e| !(e > 0.0) || !e.is_finite())
        {
            return Err(Error::InvalidConfig(
                "epsilon_schedule needs at least one positive entry".into(),
            ));
        }
        if !(self.triviality_floor > 0.0) {
            return Err(Error::InvalidConfig("triviality_floor must be positive".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// A converged nontrivial eigenpair.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub lambda: f64,
    pub u: Field,
    /// Euclidean norm of the weak-form gradient at the solution.
    pub residual: f64,
    /// Energy F(u).
    pub energy: f64,
    /// Nehari constraint value N(u); near zero at any critical point.
    pub nehari_gap: f64,
}

#[derive(Serialize)]
struct EigenPairRecord<'a> {
    schema: u32,
    p: f64,
    lambda: f64,
    grid: GridSpec,
    values: &'a [f64],
    residual: f64,
    energy: f64,
    nehari_gap: f64,
    sign_normalized: bool,
}

impl EigenPair {
    /// JSON record of the pair; `p` is the exponent the solve used.
    #[must_use]
    pub fn to_json(&self, p: f64) -> String {
        let record = EigenPairRecord {
            schema: 1,
            p,
            lambda: self.lambda,
            grid: self.u.grid().spec(),
            values: self.u.values(),
            residual: self.residual,
            energy: self.energy,
            nehari_gap: self.nehari_gap,
            sign_normalized: true,
        };
        serde_json::to_string_pretty(&record).expect("eigenpair serialises")
    }
}

/// Result of a first-eigenpair solve.
#[derive(Debug, Clone)]
pub enum SolveOutcome {
    Nontrivial(EigenPair),
    /// Only the zero branch was found; carries the discrete λ₁ for context.
    Trivial(TrivialReport),
}

/// Diagnostics of a solve that collapsed onto the zero branch.
#[derive(Debug, Clone)]
pub struct TrivialReport {
    pub lambda: f64,
    pub first_eigenvalue: f64,
    /// ‖u‖₂ of the last iterate before the verdict.
    pub final_l2: f64,
}

impl SolveOutcome {
    #[must_use]
    pub fn as_nontrivial(&self) -> Option<&EigenPair> {
        match self {
            SolveOutcome::Nontrivial(pair) => Some(pair),
            SolveOutcome::Trivial(_) => None,
        }
    }
}

/// Assembled operators and factorisations shared by the solves on one grid.
pub(crate) struct Workspace {
    pub grid: Grid,
    pub mass: SymmetricOperator,
    pub stiffness: SymmetricOperator,
    pub stiffness_factor: BandedLdlt,
}

impl Workspace {
    pub fn new(grid: &Grid) -> Result<Workspace, Error> {
        let mass = assemble_mass(grid);
        let stiffness = assemble_stiffness(grid);
        let stiffness_factor = BandedLdlt::factor(&stiffness.to_banded(), 1e-300)?;
        Ok(Workspace {
            grid: grid.clone(),
            mass,
            stiffness,
            stiffness_factor,
        })
    }

    pub fn gradient(&self, u: &Field, setting: &EnergySetting) -> Vec<f64> {
        functionals::energy_gradient_with(u, setting, &self.mass, &self.stiffness)
            .values()
            .to_vec()
    }

    pub fn energy(&self, u: &Field, setting: &EnergySetting) -> f64 {
        let n = norms_with(u, setting.p, setting.epsilon, &self.mass, &self.stiffness);
        energy_from_norms(&n, setting)
    }

    pub fn l2_norm(&self, values: &[f64]) -> f64 {
        self.mass.quadratic(values).max(0.0).sqrt()
    }

    pub fn h1_norm(&self, values: &[f64]) -> f64 {
        self.stiffness.quadratic(values).max(0.0).sqrt()
    }

    /// Banded copy of stiffness + p-Jacobian(u) + shift * mass.
    pub fn shifted_hessian(&self, u: &Field, p: f64, epsilon: f64, shift: f64) -> BandedMatrix {
        let pjac = functionals::p_jacobian(u, p, epsilon);
        let mut banded = self.stiffness.to_banded_shifted(shift, &self.mass);
        let pj = pjac.to_banded();
        let n = self.stiffness.size();
        let hbw = pj.half_bandwidth();
        for i in 0..n {
            for j in i..(i + hbw + 1).min(n) {
                let v = pj.get(i, j);
                if v != 0.0 {
                    banded.add(i, j, v);
                }
            }
        }
        banded
    }
}

/// First `k` eigenpairs of the generalised problem A e = λ M e over interior
/// nodes, in ascending order, M-orthonormal, sign fixed so that the first
/// significant component is positive.
///
/// Computed by blocked inverse iteration with Rayleigh–Ritz extraction; the
/// stiffness factorisation is banded, so rectangles stay cheap.
pub fn linear_eigs(grid: &Grid, k: usize) -> Result<Vec<(f64, Field)>, Error> {
    let n = grid.n_interior();
    if k == 0 {
        return Err(Error::InvalidEigenCount {
            k,
            reason: "at least one eigenpair must be requested".into(),
        });
    }
    if k > n {
        return Err(Error::InvalidEigenCount {
            k,
            reason: format!("grid has only {n} interior nodes"),
        });
    }
    let ws = Workspace::new(grid)?;
    let m_dim = (k + 3).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x0071_5EED);
    let mut basis: Vec<Vec<f64>> = (0..m_dim)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    m_orthonormalize(&ws, &mut basis)?;

    let mut values = vec![0.0; m_dim];
    for iter in 0..400 {
        // One inverse-iteration sweep: y = A^{-1} M x.
        for col in basis.iter_mut() {
            let mx = ws.mass.apply_slice(col);
            *col = ws.stiffness_factor.solve(&mx);
        }
        m_orthonormalize(&ws, &mut basis)?;
        // Rayleigh-Ritz on the block.
        let mut small_a = vec![0.0; m_dim * m_dim];
        let mut small_m = vec![0.0; m_dim * m_dim];
        let a_cols: Vec<Vec<f64>> = basis.iter().map(|c| ws.stiffness.apply_slice(c)).collect();
        let m_cols: Vec<Vec<f64>> = basis.iter().map(|c| ws.mass.apply_slice(c)).collect();
        for i in 0..m_dim {
            for j in 0..m_dim {
                small_a[i * m_dim + j] = dot(&basis[i], &a_cols[j]);
                small_m[i * m_dim + j] = dot(&basis[i], &m_cols[j]);
            }
        }
        let (theta, z) = crate::linalg::generalized_symmetric_eigen(&small_a, &small_m, m_dim)?;
        let mut rotated: Vec<Vec<f64>> = vec![vec![0.0; n]; m_dim];
        for (new_i, rotated_col) in rotated.iter_mut().enumerate() {
            for old_i in 0..m_dim {
                axpy(z[old_i * m_dim + new_i], &basis[old_i], rotated_col);
            }
        }
        basis = rotated;
        let drift = values
            .iter()
            .zip(&theta)
            .take(k)
            .map(|(old, new)| (old - new).abs() / new.abs().max(1e-30))
            .fold(0.0f64, f64::max);
        values = theta;
        if iter > 2 && drift < 1e-13 {
            break;
        }
    }

    let mut out = Vec::with_capacity(k);
    for (col, &value) in basis.iter().zip(&values).take(k) {
        let mut v = col.clone();
        // Deterministic sign: first component clear of roundoff decides.
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * scale) {
            if *first < 0.0 {
                for x in &mut v {
                    *x = -*x;
                }
            }
        }
        out.push((value, Field::from_values(grid, v)?));
    }
    Ok(out)
}

/// Modified Gram–Schmidt in the M inner product.
fn m_orthonormalize(ws: &Workspace, cols: &mut [Vec<f64>]) -> Result<(), Error> {
    for i in 0..cols.len() {
        for j in 0..i {
            let mj = ws.mass.apply_slice(&cols[j]);
            let proj = dot(&cols[i], &mj);
            let col_j = cols[j].clone();
            axpy(-proj, &col_j, &mut cols[i]);
        }
        let nrm = ws.l2_norm(&cols[i]);
        if nrm <= 1e-300 {
            return Err(Error::LinearSolve("degenerate block in eigensolver".into()));
        }
        for x in &mut cols[i] {
            *x /= nrm;
        }
    }
    Ok(())
}

/// Signed amplitude of the one-mode stationary state r e_k at offset λ − λ_k:
/// r = ((λ − λ_k)/κ)^{1/(p−2)} with κ = ∫|∇e_k|^p.
pub(crate) fn one_mode_amplitude(lambda: f64, lambda_k: f64, kappa: f64, p: f64) -> Option<f64> {
    let offset = lambda - lambda_k;
    if offset <= 0.0 || kappa <= 0.0 {
        return None;
    }
    Some((offset / kappa).powf(1.0 / (p - 2.0)))
}

/// Solves for the first eigenpair at the one-mode seed.
pub fn solve_first(
    grid: &Grid,
    setting: &EnergySetting,
    config: &SolverConfig,
) -> Result<SolveOutcome, Error> {
    Ok(solve_first_counted(grid, setting, config, None)?.0)
}

/// Same as [`solve_first`] but descending from a caller-provided start field,
/// e.g. for multi-start agreement checks.
pub fn solve_first_seeded(
    grid: &Grid,
    setting: &EnergySetting,
    config: &SolverConfig,
    initial: &Field,
) -> Result<SolveOutcome, Error> {
    if !initial.grid().same_mesh(grid) {
        return Err(Error::GridMismatch("seed field lives on another mesh".into()));
    }
    Ok(solve_first_counted(grid, setting, config, Some(initial))?.0)
}

/// Solve plus the number of inner iterations spent, for branch bookkeeping.
pub(crate) fn solve_first_counted(
    grid: &Grid,
    setting: &EnergySetting,
    config: &SolverConfig,
    initial: Option<&Field>,
) -> Result<(SolveOutcome, usize), Error> {
    config.validate()?;
    EnergySetting::new(setting.p, setting.lambda, setting.epsilon)?;
    let ws = Workspace::new(grid)?;
    let modes = linear_eigs(grid, 1)?;
    let (lambda_1, e1) = (&modes[0].0, &modes[0].1);
    let mut count = 0usize;
    let outcome = if setting.p > 2.0 {
        solve_superquadratic(&ws, setting, config, *lambda_1, e1, initial, &mut count)?
    } else {
        solve_subquadratic(&ws, setting, config, *lambda_1, e1, initial, &mut count)?
    };
    Ok((outcome, count))
}

fn triviality_floor(ws: &Workspace, config: &SolverConfig) -> f64 {
    config.triviality_floor * ws.grid.measure().sqrt()
}

fn solve_superquadratic(
    ws: &Workspace,
    setting: &EnergySetting,
    config: &SolverConfig,
    lambda_1: f64,
    e1: &Field,
    initial: Option<&Field>,
    count: &mut usize,
) -> Result<SolveOutcome, Error> {
    // Any nontrivial state satisfies λ‖u‖₂² = ‖∇u‖₂² + ∫|∇u|^p > λ₁‖u‖₂²,
    // so at or below λ₁ the zero branch is the whole story. Deciding here
    // keeps the iteration from crawling along the degenerate direction.
    if setting.lambda - lambda_1 <= 1e-12 * lambda_1.abs().max(1.0) {
        return Ok(SolveOutcome::Trivial(TrivialReport {
            lambda: setting.lambda,
            first_eigenvalue: lambda_1,
            final_l2: 0.0,
        }));
    }
    let floor = triviality_floor(ws, config);
    let kappa = norms_with(e1, setting.p, 0.0, &ws.mass, &ws.stiffness).p_dirichlet;
    let mut u = match initial {
        Some(seed) => seed.clone(),
        None => {
            let r = one_mode_amplitude(setting.lambda, lambda_1, kappa, setting.p).unwrap_or(0.1);
            e1.scaled(r)
        }
    };
    if ws.l2_norm(u.values()) == 0.0 {
        u = e1.scaled(0.1);
    }

    // Stage one: preconditioned descent with Armijo backtracking.
    let coarse_tol = (1e3 * config.gradient_tol).max(1e-6);
    let mut f_curr = ws.energy(&u, setting);
    for _ in 0..config.max_iterations {
        *count += 1;
        let g = ws.gradient(&u, setting);
        if norm(&g) <= coarse_tol {
            break;
        }
        if ws.l2_norm(u.values()) < floor {
            return Ok(SolveOutcome::Trivial(TrivialReport {
                lambda: setting.lambda,
                first_eigenvalue: lambda_1,
                final_l2: ws.l2_norm(u.values()),
            }));
        }
        let mut d = ws.stiffness_factor.solve(&g);
        for x in &mut d {
            *x = -*x;
        }
        let slope = dot(&g, &d);
        let mut alpha = 1.0;
        let mut accepted = false;
        while alpha > 1e-16 {
            let trial = u.add_scaled(alpha, &Field::from_values(&ws.grid, d.clone())?);
            let f_trial = ws.energy(&trial, setting);
            if f_trial <= f_curr + config.armijo_c * alpha * slope {
                u = trial;
                f_curr = f_trial;
                accepted = true;
                break;
            }
            alpha *= config.backtrack;
        }
        if !accepted {
            break;
        }
    }

    // Stage two: damped Newton on the gradient.
    let polished = newton_polish(ws, setting, u, config, count)?;
    let l2 = ws.l2_norm(polished.values());
    if l2 < floor {
        return Ok(SolveOutcome::Trivial(TrivialReport {
            lambda: setting.lambda,
            first_eigenvalue: lambda_1,
            final_l2: l2,
        }));
    }
    Ok(SolveOutcome::Nontrivial(package_pair(ws, setting, polished)))
}

fn solve_subquadratic(
    ws: &Workspace,
    setting: &EnergySetting,
    config: &SolverConfig,
    lambda_1: f64,
    e1: &Field,
    initial: Option<&Field>,
    count: &mut usize,
) -> Result<SolveOutcome, Error> {
    // The cone {λ‖u‖₂² > ‖∇u‖₂²} is empty when λ ≤ λ₁; the zero branch is
    // all there is.
    let margin = setting.lambda - lambda_1;
    if margin <= 1e-12 * lambda_1.abs().max(1.0) {
        return Ok(SolveOutcome::Trivial(TrivialReport {
            lambda: setting.lambda,
            first_eigenvalue: lambda_1,
            final_l2: 0.0,
        }));
    }
    let kappa = norms_with(e1, setting.p, 0.0, &ws.mass, &ws.stiffness).p_dirichlet;
    let fallback_amp = one_mode_amplitude(setting.lambda, lambda_1, kappa, setting.p)
        .unwrap_or(1.0)
        .min(1e3);

    let mut u = match initial {
        Some(seed) if ws.l2_norm(seed.values()) > 0.0 => {
            match project_to_manifold(ws, seed, setting, setting.epsilon.max(1e-10)) {
                Ok(projected) => projected,
                // Rough seeds sit outside the cone; re-seed on the linear
                // modes below λ, which are inside it by construction.
                Err(Error::NotInCone { .. }) => {
                    let reseeded = reseed_in_cone(ws, seed, setting, e1)?;
                    project_to_manifold(ws, &reseeded, setting, setting.epsilon.max(1e-10))?
                }
                Err(e) => return Err(e),
            }
        }
        _ => {
            let seed = e1.scaled(fallback_amp);
            project_to_manifold(ws, &seed, setting, setting.epsilon.max(1e-10))?
        }
    };

    // Each continuation stage only needs to park the iterate near the
    // constrained minimiser; chasing tight tolerances here is futile because
    // Armijo decrements of J drop below float resolution around a tangential
    // residual of 1e-5. The free Newton polish below finishes the job on the
    // residual itself. Near the first eigenvalue the branch blows up and the
    // gradient scales with the field, so the parking tolerances are relative
    // to the energy norm of the seed.
    let schedule = &config.epsilon_schedule;
    let last_idx = schedule.len() - 1;
    let field_scale = ws.h1_norm(u.values()).max(1.0);
    let stage_tol = 1e-6 * field_scale;
    for &eps in schedule.iter() {
        let stage_setting = setting.with_epsilon(eps);
        u = project_to_manifold(ws, &u, setting, eps)?;
        for _ in 0..config.max_iterations {
            *count += 1;
            let g = ws.gradient(&u, &stage_setting);
            let gn = constraint_gradient(ws, &u, &stage_setting);
            let gn_sq = dot(&gn, &gn).max(1e-300);
            let mut gt = g.clone();
            axpy(-dot(&g, &gn) / gn_sq, &gn, &mut gt);
            if norm(&gt) <= stage_tol {
                break;
            }
            let mut d = ws.stiffness_factor.solve(&gt);
            for x in &mut d {
                *x = -*x;
            }
            axpy(-dot(&d, &gn) / gn_sq, &gn, &mut d);
            let slope = 2.0 * dot(&g, &d);
            let j_curr = 2.0 * ws.energy(&u, &stage_setting);
            let mut alpha = 1.0f64;
            let mut accepted = false;
            while alpha > 1e-16 {
                let trial = u.add_scaled(alpha, &Field::from_values(&ws.grid, d.clone())?);
                match project_to_manifold(ws, &trial, setting, eps) {
                    Ok(projected) => {
                        let j_trial = 2.0 * ws.energy(&projected, &stage_setting);
                        if j_trial <= j_curr + config.armijo_c * alpha * slope {
                            u = projected;
                            accepted = true;
                            break;
                        }
                    }
                    Err(Error::NotInCone { .. }) => {}
                    Err(e) => return Err(e),
                }
                alpha *= config.backtrack;
            }
            if !accepted {
                break;
            }
        }
    }
    // The hand-off to Newton must start from a genuinely parked iterate.
    let final_setting = setting.with_epsilon(schedule[last_idx]);
    let parked = {
        let g = ws.gradient(&u, &final_setting);
        let gn = constraint_gradient(ws, &u, &final_setting);
        let gn_sq = dot(&gn, &gn).max(1e-300);
        let mut gt = g;
        axpy(-dot(&gt, &gn) / gn_sq, &gn, &mut gt);
        norm(&gt)
    };
    if parked > 1e-3 * field_scale {
        return Err(Error::MaxIterations {
            iterations: config.max_iterations,
            residual: parked,
        });
    }

    // Free polish at the smallest ε; constrained critical points of J are
    // free critical points of F, so the full gradient can be driven to zero.
    let final_eps = schedule[last_idx];
    let polish_setting = setting.with_epsilon(final_eps);
    let polished = newton_polish(ws, &polish_setting, u, config, count)?;
    let l2 = ws.l2_norm(polished.values());
    if l2 < triviality_floor(ws, config) {
        return Ok(SolveOutcome::Trivial(TrivialReport {
            lambda: setting.lambda,
            first_eigenvalue: lambda_1,
            final_l2: l2,
        }));
    }
    Ok(SolveOutcome::Nontrivial(package_pair(ws, &polish_setting, polished)))
}

/// M-projection of a rough seed onto the linear modes below λ.
fn reseed_in_cone(
    ws: &Workspace,
    seed: &Field,
    setting: &EnergySetting,
    e1: &Field,
) -> Result<Field, Error> {
    let k_max = 8.min(ws.grid.n_interior());
    let modes = linear_eigs(&ws.grid, k_max)?;
    let mut out = vec![0.0; ws.grid.n_interior()];
    let m_seed = ws.mass.apply_slice(seed.values());
    let mut placed = false;
    for (value, mode) in &modes {
        if *value >= setting.lambda {
            break;
        }
        let c = dot(mode.values(), &m_seed);
        if c != 0.0 {
            axpy(c, mode.values(), &mut out);
            placed = true;
        }
    }
    if !placed || norm(&out) == 0.0 {
        return Ok(e1.clone());
    }
    Field::from_values(&ws.grid, out)
}

/// Gradient of the constraint N(u) = ‖∇u‖₂² + ∫(|∇u|²+ε²)^{p/2} − λ‖u‖₂².
pub(crate) fn constraint_gradient(ws: &Workspace, u: &Field, setting: &EnergySetting) -> Vec<f64> {
    let au = ws.stiffness.apply_slice(u.values());
    let mu = ws.mass.apply_slice(u.values());
    let pres = functionals::p_residual(u, setting.p, setting.epsilon);
    (0..u.len())
        .map(|i| 2.0 * au[i] + setting.p * pres[i] - 2.0 * setting.lambda * mu[i])
        .collect()
}

/// Scales `u` onto the ε-regularised Nehari manifold by a scalar root find.
pub(crate) fn project_to_manifold(
    ws: &Workspace,
    u: &Field,
    setting: &EnergySetting,
    eps: f64,
) -> Result<Field, Error> {
    let n = norms_with(u, setting.p, 0.0, &ws.mass, &ws.stiffness);
    if n.l2_sq == 0.0 {
        return Err(Error::ZeroField);
    }
    let quad = n.h1_sq - setting.lambda * n.l2_sq;
    if quad >= -1e-12 * (n.h1_sq + setting.lambda.abs() * n.l2_sq) {
        return Err(Error::NotInCone { margin: -quad });
    }
    // Per-sample gradient magnitudes let phi(t) be evaluated cheaply.
    let grads = crate::grid::element_gradients(u);
    let weights = ws.grid.sample_weights();
    let g2: Vec<f64> = grads.iter().map(|g| g[0] * g[0] + g[1] * g[1]).collect();
    let e2 = eps * eps;
    let phi = |t: f64| -> f64 {
        let mut p_term = 0.0;
        for (w, gg) in weights.iter().zip(&g2) {
            p_term += w * (t * t * gg + e2).powf(0.5 * setting.p);
        }
        t * t * quad + p_term
    };
    // Closed-form start from the unregularised projection.
    let mut t = (n.p_dirichlet / -quad).powf(1.0 / (2.0 - setting.p));
    if !t.is_finite() || t <= 0.0 {
        t = 1.0;
    }
    // phi decreases in t beyond its single hump; bracket a sign change.
    let mut lo = t;
    let mut hi = t;
    let mut f_lo = phi(lo);
    let mut f_hi = f_lo;
    let mut tries = 0;
    while f_hi > 0.0 && tries < 200 {
        hi *= 2.0;
        f_hi = phi(hi);
        tries += 1;
    }
    if f_hi > 0.0 {
        return Err(Error::NotInCone { margin: -quad });
    }
    while f_lo < 0.0 && tries < 400 {
        lo *= 0.5;
        f_lo = phi(lo);
        tries += 1;
        if lo < 1e-280 {
            break;
        }
    }
    if f_lo < 0.0 {
        // The whole ray is below zero only in pathological float cases.
        lo = 1e-280;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = phi(mid);
        if f_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * hi {
            break;
        }
    }
    let t_star = 0.5 * (lo + hi);
    Ok(u.scaled(t_star))
}

/// Damped Newton iteration on the weak-form gradient.
fn newton_polish(
    ws: &Workspace,
    setting: &EnergySetting,
    mut u: Field,
    config: &SolverConfig,
    count: &mut usize,
) -> Result<Field, Error> {
    let mut g = ws.gradient(&u, setting);
    let mut res = norm(&g);
    let mut stalls = 0;
    for _ in 0..config.max_iterations.min(200) {
        *count += 1;
        if res <= config.gradient_tol {
            return Ok(u);
        }
        let hessian = ws.shifted_hessian(&u, setting.p, setting.epsilon, -setting.lambda);
        let step = match BandedLdlt::factor(&hessian, 1e-300) {
            Ok(f) => {
                let mut d = f.solve(&g);
                for x in &mut d {
                    *x = -*x;
                }
                d
            }
            Err(_) => {
                // Singular Hessian: fall back on the preconditioned gradient.
                let mut d = ws.stiffness_factor.solve(&g);
                for x in &mut d {
                    *x = -*x;
                }
                d
            }
        };
        let mut alpha = 1.0;
        let mut improved = false;
        while alpha > 1e-12 {
            let trial = u.add_scaled(alpha, &Field::from_values(&ws.grid, step.clone())?);
            let g_trial = ws.gradient(&trial, setting);
            let res_trial = norm(&g_trial);
            if res_trial < res * (1.0 - 0.1 * alpha) || res_trial <= config.gradient_tol {
                u = trial;
                g = g_trial;
                res = res_trial;
                improved = true;
                break;
            }
            alpha *= 0.5;
        }
        if !improved {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    if res <= config.gradient_tol.max(1e-8) {
        Ok(u)
    } else {
        Err(Error::MaxIterations {
            iterations: config.max_iterations,
            residual: res,
        })
    }
}

/// Flips the sign so the extremal value is positive, then packages the pair.
pub(crate) fn package_pair(ws: &Workspace, setting: &EnergySetting, mut u: Field) -> EigenPair {
    let (mut idx_max, mut val_max) = (0, 0.0f64);
    for (i, &v) in u.values().iter().enumerate() {
        if v.abs() > val_max.abs() {
            val_max = v;
            idx_max = i;
        }
    }
    let _ = idx_max;
    if val_max < 0.0 {
        u.scale(-1.0);
    }
    let g = ws.gradient(&u, setting);
    let n = norms_with(&u, setting.p, setting.epsilon, &ws.mass, &ws.stiffness);
    EigenPair {
        lambda: setting.lambda,
        residual: norm(&g),
        energy: energy_from_norms(&n, setting),
        nehari_gap: n.h1_sq + n.p_dirichlet - setting.lambda * n.l2_sq,
        u,
    }
}

/// Solves (−Δₚ − Δ) u = f in weak form.
///
/// For p > 2 the operator is globally invertible and plain damped Newton
/// converges from the linear solve. For p < 2 iterates must stay inside a
/// trust ball around zero whose radius keeps the empirical contraction
/// margin 1 − C′ r² at or above one half; leaving it raises
/// [`Error::TrustBallExceeded`].
pub fn inverse_solve(
    grid: &Grid,
    f: &Field,
    p: f64,
    config: &SolverConfig,
) -> Result<Field, Error> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent {
            p,
            reason: "exponent must be finite and greater than 1",
        });
    }
    if !f.grid().same_mesh(grid) {
        return Err(Error::GridMismatch("right-hand side lives on another mesh".into()));
    }
    config.validate()?;
    let ws = Workspace::new(grid)?;
    inverse_solve_with(&ws, f, p, config)
}

pub(crate) fn inverse_solve_with(
    ws: &Workspace,
    f: &Field,
    p: f64,
    config: &SolverConfig,
) -> Result<Field, Error> {
    let trust = if p < 2.0 {
        Some(match config.trust_radius {
            Some(r) if r > 0.0 => r,
            _ => trust_radius(ws, p),
        })
    } else {
        None
    };
    let eps = if p < 2.0 { 1e-10 } else { 0.0 };
    let mut u = Field::from_values(&ws.grid, ws.stiffness_factor.solve(f.values()))?;
    let tol = 1e-13 * (1.0 + norm(f.values()));
    let residual = |u: &Field| -> Vec<f64> {
        let au = ws.stiffness.apply_slice(u.values());
        let pres = functionals::p_residual(u, p, 0.0);
        (0..u.len())
            .map(|i| au[i] + pres[i] - f.values()[i])
            .collect()
    };
    let mut r = residual(&u);
    let mut rn = norm(&r);
    for iteration in 0..200 {
        if let Some(radius) = trust {
            let h1 = ws.h1_norm(u.values());
            if h1 > radius {
                return Err(Error::TrustBallExceeded { norm: h1, radius });
            }
        }
        if rn <= tol {
            return Ok(u);
        }
        // Jacobian A + A_p'(u) is definite in both regimes (with eps > 0 for
        // p < 2), so the banded factorisation goes through.
        let jac = ws.shifted_hessian(&u, p, eps, 0.0);
        let factor = BandedLdlt::factor(&jac, 1e-300)?;
        let mut d = factor.solve(&r);
        for x in &mut d {
            *x = -*x;
        }
        let mut alpha = 1.0;
        let mut stepped = false;
        while alpha > 1e-14 {
            let trial = u.add_scaled(alpha, &Field::from_values(&ws.grid, d.clone())?);
            let r_trial = residual(&trial);
            let rn_trial = norm(&r_trial);
            if rn_trial < rn * (1.0 - 1e-4 * alpha) || rn_trial <= tol {
                u = trial;
                r = r_trial;
                rn = rn_trial;
                stepped = true;
                break;
            }
            alpha *= 0.5;
        }
        if !stepped {
            return Err(Error::MaxIterations {
                iterations: iteration,
                residual: rn,
            });
        }
    }
    if rn <= tol.max(1e-10) {
        Ok(u)
    } else {
        Err(Error::MaxIterations {
            iterations: 200,
            residual: rn,
        })
    }
}

/// Empirical trust radius for the p < 2 inverse: probe fields estimate the
/// constant C in ‖Δₚv‖ ≤ C‖v‖^{p−1}, then r = sqrt(0.5 / ((4−p) C)) keeps
/// the contraction margin 1 − C′ r² ≥ 1/2.
fn trust_radius(ws: &Workspace, p: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7257_5B11);
    let n = ws.grid.n_interior();
    let mut c_hat = 0.0f64;
    for _ in 0..6 {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = match Field::from_values(&ws.grid, raw) {
            Ok(f) => f,
            Err(_) => continue,
        };
        let h1 = ws.h1_norm(w.values());
        if h1 == 0.0 {
            continue;
        }
        let w_unit = w.scaled(1.0 / h1);
        let pres = functionals::p_residual(&w_unit, p, 0.0);
        let lifted = ws.stiffness_factor.solve(&pres);
        let c = ws.h1_norm(&lifted);
        c_hat = c_hat.max(c);
    }
    let c_prime = (4.0 - p) * c_hat.max(1e-12);
    (0.5 / c_prime).sqrt()
}

/// Fixed-point map S_λ(u) = u − (−Δₚ − Δ)^{−1}(λ u); zero exactly at
/// eigenpairs.
pub fn s_map(u: &Field, setting: &EnergySetting, config: &SolverConfig) -> Result<Field, Error> {
    let ws = Workspace::new(u.grid())?;
    let mu = ws.mass.apply_slice(u.values());
    let rhs = Field::from_values(u.grid(), mu.iter().map(|v| setting.lambda * v).collect())?;
    let w = inverse_solve_with(&ws, &rhs, setting.p, config)?;
    Ok(u.add_scaled(-1.0, &w))
}

/// v = u / ‖u‖_{1,2}^{2−p/2}, the substitution that maps the blow-up branch
/// (p < 2) onto a branch emanating from zero.
pub fn transform_to_v(u: &Field, p: f64) -> Result<Field, Error> {
    check_subquadratic(p)?;
    let a = assemble_stiffness(u.grid());
    let h1 = a.quadratic(u.values()).max(0.0).sqrt();
    if h1 == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(u.scaled(h1.powf(-(2.0 - 0.5 * p))))
}

/// Inverse of [`transform_to_v`]: u = v ‖v‖_{1,2}^{(4−p)/(p−2)}.
pub fn transform_to_u(v: &Field, p: f64) -> Result<Field, Error> {
    check_subquadratic(p)?;
    let a = assemble_stiffness(v.grid());
    let h1 = a.quadratic(v.values()).max(0.0).sqrt();
    if h1 == 0.0 {
        return Err(Error::ZeroField);
    }
    Ok(v.scaled(h1.powf((4.0 - p) / (p - 2.0))))
}

/// Residual of the transformed equation
/// ‖v‖_{1,2}^{4−p} (−Δₚv) + (−Δv) − λ v in weak form.
pub fn transformed_residual(v: &Field, setting: &EnergySetting) -> Result<Field, Error> {
    check_subquadratic(setting.p)?;
    let ws = Workspace::new(v.grid())?;
    let h1 = ws.h1_norm(v.values());
    if h1 == 0.0 {
        return Err(Error::ZeroField);
    }
    let pres = functionals::p_residual(v, setting.p, setting.epsilon);
    let av = ws.stiffness.apply_slice(v.values());
    let mv = ws.mass.apply_slice(v.values());
    let factor = h1.powf(4.0 - setting.p);
    let vals = (0..v.len())
        .map(|i| factor * pres[i] + av[i] - setting.lambda * mv[i])
        .collect();
    Field::from_values(v.grid(), vals)
}

fn check_subquadratic(p: f64) -> Result<(), Error> {
    if p > 1.0 && p < 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidExponent {
            p,
            reason: "the norm rescaling is defined for 1 < p < 2",
        })
    }
}

/// Damped Newton search for a critical point of F near `start`, with
/// deflation against already-known solutions so repeated runs find new ones.
///
/// Deflation multiplies the residual by Π (1/‖u−w‖²_M + 1); the Newton step
/// of the deflated system is the plain step rescaled by 1/(1 − m·d) with
/// m the logarithmic gradient of the deflation factor.
pub(crate) fn deflated_newton(
    ws: &Workspace,
    setting: &EnergySetting,
    start: &Field,
    deflate: &[Field],
    tol: f64,
    max_iterations: usize,
) -> Result<Field, Error> {
    let mut u = start.clone();
    let deflation = |u: &Field| -> (f64, Vec<f64>) {
        // Returns the factor value and the gradient of its logarithm.
        let mut value = 1.0;
        let mut log_grad = vec![0.0; u.len()];
        for w in deflate {
            let diff: Vec<f64> = u
                .values()
                .iter()
                .zip(w.values())
                .map(|(a, b)| a - b)
                .collect();
            let eta = ws.mass.quadratic(&diff).max(1e-300);
            let beta = 1.0 / eta + 1.0;
            value *= beta;
            let mdiff = ws.mass.apply_slice(&diff);
            let coeff = -2.0 / (eta * eta * beta);
            axpy(coeff, &mdiff, &mut log_grad);
        }
        (value, log_grad)
    };
    let merit = |u: &Field, g: &[f64]| -> f64 {
        let (value, _) = deflation(u);
        value * norm(g)
    };
    let mut g = ws.gradient(&u, setting);
    let mut m_curr = merit(&u, &g);
    let mut stalls = 0;
    for iteration in 0..max_iterations {
        if norm(&g) <= tol {
            return Ok(u);
        }
        let hessian = ws.shifted_hessian(&u, setting.p, setting.epsilon, -setting.lambda);
        let mut d = match BandedLdlt::factor(&hessian, 1e-300) {
            Ok(f) => f.solve(&g),
            Err(_) => ws.stiffness_factor.solve(&g),
        };
        for x in &mut d {
            *x = -*x;
        }
        let (_, log_grad) = deflation(&u);
        let m_dot_d = dot(&log_grad, &d);
        let denom = 1.0 - m_dot_d;
        let sigma = if denom.abs() < 0.1 { 10.0 * denom.signum() } else { 1.0 / denom };
        let sigma = if sigma == 0.0 || !sigma.is_finite() { 1.0 } else { sigma };
        let mut alpha = 1.0;
        let mut stepped = false;
        while alpha > 1e-12 {
            let trial = u.add_scaled(alpha * sigma, &Field::from_values(&ws.grid, d.clone())?);
            let g_trial = ws.gradient(&trial, setting);
            let m_trial = merit(&trial, &g_trial);
            if m_trial < m_curr * (1.0 - 1e-3 * alpha) || norm(&g_trial) <= tol {
                u = trial;
                g = g_trial;
                m_curr = m_trial;
                stepped = true;
                break;
            }
            alpha *= 0.5;
        }
        if !stepped {
            stalls += 1;
            if stalls >= 3 {
                return Err(Error::MaxIterations {
                    iterations: iteration,
                    residual: norm(&g),
                });
            }
        } else {
            stalls = 0;
        }
    }
    Err(Error::MaxIterations {
        iterations: max_iterations,
        residual: norm(&g),
    })
}
