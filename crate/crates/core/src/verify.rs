//! Self-contained invariant battery: assembly identities, calculus checks,
//! manifold identities, inequality sweeps, solver dichotomy, scaling laws
//! and catalogue sanity, all driven from one seed and rendered into a
//! byte-stable report.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::bifurcation::{self, BifurcationKind};
use crate::error::Error;
use crate::functionals::{self, EnergySetting};
use crate::grid::{
    assemble_mass, assemble_stiffness, element_gradients, lumped_node_masses, norms, Field, Grid,
};
use crate::multiplicity;
use crate::solver::{self, linear_eigs, SolveOutcome, SolverConfig};

/// Outcome of a single named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// The full battery outcome for one seed.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    #[must_use]
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Fixed-order, fixed-format rendering; identical seeds give identical
    /// bytes.
    #[must_use]
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("verification seed {}\n", self.seed));
        for check in &self.checks {
            let tag = if check.passed { "PASS" } else { "FAIL" };
            out.push_str(&format!("{tag} {}: {}\n", check.name, check.detail));
        }
        let overall = if self.passed() { "PASS" } else { "FAIL" };
        out.push_str(&format!(
            "{overall} overall ({} of {} checks)\n",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len()
        ));
        out
    }
}

/// 17 significant digits; enough to make equality of renders equality of
/// floating-point values.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn random_field(grid: &Grid, rng: &mut ChaCha8Rng, amplitude: f64) -> Field {
    Field::from_values(
        grid,
        (0..grid.n_interior())
            .map(|_| rng.gen_range(-amplitude..amplitude))
            .collect(),
    )
    .expect("length matches")
}

/// Runs every check with randomness drawn from `seed`.
pub fn run_verification(seed: u64) -> Result<VerifyReport, Error> {
    let checks = vec![
        check_mass_row_sums(),
        check_flat_field_annihilation(),
        check_quadratic_form(seed),
        check_refinement_monotone()?,
        check_gradient_fd(seed)?,
        check_nehari_idempotent()?,
        check_manifold_identity(seed)?,
        check_strong_monotonicity(seed)?,
        check_picone(seed)?,
        check_inequality_sweep(seed)?,
        check_dichotomy()?,
        check_positivity_simplicity(seed)?,
        check_rayleigh_collapse()?,
        check_sup_norm_control()?,
        check_fixed_point_map()?,
        check_branch_scaling()?,
        check_catalog_basics()?,
        check_even_symmetry()?,
    ];
    Ok(VerifyReport { seed, checks })
}

fn check_mass_row_sums() -> CheckResult {
    let mut worst = 0.0f64;
    for grid in [
        Grid::new(1, &[0.0, 1.0], &[33]).unwrap(),
        Grid::new(2, &[0.0, 2.0, -1.0, 1.0], &[6, 5]).unwrap(),
    ] {
        let sums = crate::grid::mass_row_sums_full(&grid);
        let lumped = lumped_node_masses(&grid);
        for (s, l) in sums.iter().zip(&lumped) {
            worst = worst.max((s - l).abs() / l.max(1e-300));
        }
    }
    CheckResult {
        name: "mass-row-sums-match-lumped",
        passed: worst < 1e-12,
        detail: format!("max relative gap {}", fmt(worst)),
    }
}

fn check_flat_field_annihilation() -> CheckResult {
    let mut worst = 0.0f64;
    for grid in [
        Grid::new(1, &[0.0, 1.0], &[64]).unwrap(),
        Grid::new(2, &[0.0, 1.0, 0.0, 1.0], &[10, 10]).unwrap(),
    ] {
        let a = assemble_stiffness(&grid);
        let flat = Field::from_fn(&grid, |_| 1.0);
        let af = a.apply(&flat);
        // Rows touching the boundary feel the missing layer; skip them.
        match grid.dim() {
            1 => {
                let n = grid.n_interior();
                for (slot, v) in af.values().iter().enumerate() {
                    if slot > 0 && slot + 1 < n {
                        worst = worst.max(v.abs());
                    }
                }
            }
            _ => {
                let [nx, ny] = grid.cells();
                for (slot, v) in af.values().iter().enumerate() {
                    let ix = slot % (nx - 1);
                    let iy = slot / (nx - 1);
                    if ix > 0 && ix + 2 < nx && iy > 0 && iy + 2 < ny {
                        worst = worst.max(v.abs());
                    }
                }
            }
        }
    }
    CheckResult {
        name: "stiffness-annihilates-constants",
        passed: worst < 1e-12,
        detail: format!("max interior row residual {}", fmt(worst)),
    }
}

fn check_quadratic_form(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51AD);
    let mut worst = 0.0f64;
    for grid in [
        Grid::new(1, &[0.0, 1.0], &[17]).unwrap(),
        Grid::new(2, &[0.0, 1.0, 0.0, 1.5], &[6, 9]).unwrap(),
    ] {
        let a = assemble_stiffness(&grid);
        for _ in 0..10 {
            let u = random_field(&grid, &mut rng, 1.0);
            let quad = a.quadratic(u.values());
            let grads = element_gradients(&u);
            let weights = grid.sample_weights();
            let sampled: f64 = grads
                .iter()
                .zip(&weights)
                .map(|(g, w)| w * (g[0] * g[0] + g[1] * g[1]))
                .sum();
            worst = worst.max((quad - sampled).abs() / quad.max(1e-300));
        }
    }
    CheckResult {
        name: "quadrature-matches-stiffness-form",
        passed: worst < 1e-12,
        detail: format!("max relative gap {}", fmt(worst)),
    }
}

fn check_refinement_monotone() -> Result<CheckResult, Error> {
    let pi_sq = std::f64::consts::PI.powi(2);
    let mut prev = f64::INFINITY;
    let mut monotone = true;
    let mut last = 0.0;
    for cells in [8usize, 16, 32, 64] {
        let grid = Grid::new(1, &[0.0, 1.0], &[cells])?;
        let value = linear_eigs(&grid, 1)?[0].0;
        if value >= prev || value <= pi_sq {
            monotone = false;
        }
        prev = value;
        last = value;
    }
    let gap = (last - pi_sq) / pi_sq;
    Ok(CheckResult {
        name: "first-eigenvalue-refines-from-above",
        passed: monotone && gap < 2.5e-4,
        detail: format!("relative gap at 64 cells {}", fmt(gap)),
    })
}

fn check_gradient_fd(seed: u64) -> Result<CheckResult, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF00D);
    let grid = Grid::new(1, &[0.0, 1.0], &[9])?;
    let mut worst = 0.0f64;
    for &(p, eps) in &[(3.0, 0.0), (1.5, 1e-6), (4.0, 0.0), (1.2, 1e-4)] {
        let setting = EnergySetting::new(p, 11.0, eps)?;
        for _ in 0..5 {
            let u = random_field(&grid, &mut rng, 0.8);
            let g = functionals::energy_gradient(&u, &setting);
            let h = 1e-6;
            for i in 0..u.len() {
                let mut up = u.clone();
                up.values_mut()[i] += h;
                let mut dn = u.clone();
                dn.values_mut()[i] -= h;
                let fd = (functionals::energy(&up, &setting)
                    - functionals::energy(&dn, &setting))
                    / (2.0 * h);
                let scale = g.values()[i].abs().max(1.0);
                worst = worst.max((g.values()[i] - fd).abs() / scale);
            }
        }
    }
    Ok(CheckResult {
        name: "gradient-matches-finite-differences",
        passed: worst < 1e-6,
        detail: format!("max relative gap {}", fmt(worst)),
    })
}

fn check_nehari_idempotent() -> Result<CheckResult, Error> {
    let grid = Grid::new(1, &[0.0, 1.0], &[16])?;
    let setting = EnergySetting::new(1.5, 60.0, 0.0)?;
    let u = Field::from_fn(&grid, |[x, _]| (std::f64::consts::PI * x).sin() * 0.3);
    let t1 = functionals::nehari_scale(&u, &setting)?;
    let projected = u.scaled(t1);
    let t2 = functionals::nehari_scale(&projected, &setting)?;
    let gap = (t2 - 1.0).abs();
    Ok(CheckResult {
        name: "nehari-projection-idempotent",
        passed: gap < 1e-10,
        detail: format!("second scale deviates from one by {}", fmt(gap)),
    })
}

fn check_manifold_identity(seed: u64) -> Result<CheckResult, Error> {
    // On the manifold, 2F(u) equals (2/p - 1) times the p-Dirichlet term.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x3A11);
    let grid = Grid::new(1, &[0.0, 1.0], &[16])?;
    let setting = EnergySetting::new(1.5, 60.0, 0.0)?;
    let mut worst = 0.0f64;
    let mut tested = 0;
    while tested < 8 {
        let u = random_field(&grid, &mut rng, 1.0);
        let smooth = smooth_seed(&grid, &u);
        match functionals::nehari_scale(&smooth, &setting) {
            Ok(t) => {
                let v = smooth.scaled(t);
                let n = norms(&v, setting.p, 0.0);
                let j = 2.0 * functionals::energy(&v, &setting);
                let want = (2.0 / setting.p - 1.0) * n.p_dirichlet;
                worst = worst.max((j - want).abs() / want.abs().max(1e-300));
                if j <= 0.0 {
                    worst = worst.max(1.0);
                }
                tested += 1;
            }
            Err(_) => continue,
        }
    }
    Ok(CheckResult {
        name: "manifold-energy-identity",
        passed: worst < 1e-8,
        detail: format!("max relative gap {}", fmt(worst)),
    })
}

/// One inverse-stiffness sweep turns white noise into an H¹-sized field.
fn smooth_seed(grid: &Grid, raw: &Field) -> Field {
    let a = assemble_stiffness(grid);
    let f = crate::linalg::BandedLdlt::factor(&a.to_banded(), 1e-300).expect("A is SPD");
    Field::from_values(grid, f.solve(raw.values())).expect("length matches")
}

fn check_strong_monotonicity(seed: u64) -> Result<CheckResult, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5770);
    let grid = Grid::new(1, &[0.0, 1.0], &[24])?;
    let a = assemble_stiffness(&grid);
    let mut worst = f64::INFINITY;
    for &p in &[1.5, 3.0] {
        for _ in 0..500 {
            let u = random_field(&grid, &mut rng, 1.0);
            let v = random_field(&grid, &mut rng, 1.0);
            let op_u = functionals::apply_operator(&u, p, 0.0)?;
            let op_v = functionals::apply_operator(&v, p, 0.0)?;
            let diff: Vec<f64> = u
                .values()
                .iter()
                .zip(v.values())
                .map(|(a, b)| a - b)
                .collect();
            let lhs: f64 = op_u
                .values()
                .iter()
                .zip(op_v.values())
                .zip(&diff)
                .map(|((x, y), d)| (x - y) * d)
                .sum();
            let rhs = a.quadratic(&diff);
            worst = worst.min((lhs - rhs) / rhs.max(1e-300));
        }
    }
    Ok(CheckResult {
        name: "operator-strong-monotonicity",
        passed: worst > -1e-10,
        detail: format!("smallest margin over 1000 pairs {}", fmt(worst)),
    })
}

fn check_picone(seed: u64) -> Result<CheckResult, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x71C0);
    let grid = Grid::new(1, &[0.0, 1.0], &[20])?;
    let mut worst_negative = 0.0f64;
    let mut worst_proportional = 0.0f64;
    for &p in &[1.5, 3.0] {
        for _ in 0..25 {
            let (a_u, a_v) = (rng.gen_range(0.2..1.0), rng.gen_range(0.2..1.0));
            let (b_u, b_v) = (rng.gen_range(0.0..0.3), rng.gen_range(0.0..0.3));
            let bump = |x: f64, a: f64, b: f64| {
                0.2 + a * (std::f64::consts::PI * x).sin()
                    + b * (2.0 * std::f64::consts::PI * x).sin().powi(2)
            };
            let u = Field::from_fn(&grid, |[x, _]| bump(x, a_u, b_u));
            let v = Field::from_fn(&grid, |[x, _]| bump(x, a_v, b_v));
            let i_uv = functionals::picone(&u, &v, p)?;
            worst_negative = worst_negative.min(i_uv);
            let i_prop = functionals::picone(&u, &u.scaled(3.0), p)?;
            worst_proportional = worst_proportional.max(i_prop.abs());
        }
    }
    Ok(CheckResult {
        name: "picone-nonnegative-and-degenerate",
        passed: worst_negative > -1e-10 && worst_proportional < 1e-9,
        detail: format!(
            "most negative value {}, worst proportional value {}",
            fmt(worst_negative),
            fmt(worst_proportional)
        ),
    })
}

fn check_inequality_sweep(seed: u64) -> Result<CheckResult, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1EEE);
    let mut violations = 0usize;
    let mut total = 0usize;
    for &p in &[1.5, 3.0, 4.0] {
        for _ in 0..100_000 {
            let dim = rng.gen_range(1..=3);
            let amp = 10.0f64.powf(rng.gen_range(-2.0..2.0));
            let x1: Vec<f64> = (0..dim).map(|_| rng.gen_range(-amp..amp)).collect();
            let x2: Vec<f64> = (0..dim).map(|_| rng.gen_range(-amp..amp)).collect();
            let sides = functionals::inequality_sides(&x1, &x2, p)?;
            total += 1;
            if !sides.satisfied(1e-12) {
                violations += 1;
            }
        }
    }
    Ok(CheckResult {
        name: "vector-inequality-sweep",
        passed: violations == 0,
        detail: format!("{violations} violations in {total} sampled pairs"),
    })
}

fn check_dichotomy() -> Result<CheckResult, Error> {
    let grid = Grid::new(1, &[0.0, 1.0], &[32])?;
    let lambda_1 = linear_eigs(&grid, 1)?[0].0;
    let config = SolverConfig::default();
    let mut detail = Vec::new();
    let mut ok = true;
    for &p in &[3.0, 1.5] {
        let below = solver::solve_first(&grid, &EnergySetting::new(p, 0.9 * lambda_1, 0.0)?, &config)?;
        let above = solver::solve_first(&grid, &EnergySetting::new(p, 1.5 * lambda_1, 0.0)?, &config)?;
        match (below, above) {
            (SolveOutcome::Trivial(_), SolveOutcome::Nontrivial(pair)) => {
                detail.push(format!("p={p}: residual {}", fmt(pair.residual)));
                if pair.residual >= 1e-8 {
                    ok = false;
                }
            }
            _ => {
                ok = false;
                detail.push(format!("p={p}: wrong side of the dichotomy"));
            }
        }
    }
    Ok(CheckResult {
        name: "trivial-nontrivial-dichotomy",
        passed: ok,
        detail: detail.join("; "),
    })
}

fn check_positivity_simplicity(seed: u64) -> Result<CheckResult, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x90ED);
    let grid = Grid::new(1, &[0.0, 1.0], &[48])?;
    let setting = EnergySetting::new(3.0, 15.0, 0.0)?;
    let config = SolverConfig::default();
    let mass = assemble_mass(&grid);
    let mut states: Vec<Field> = Vec::new();
    for _ in 0..3 {
        let seed_field = random_field(&grid, &mut rng, 1.0);
        let out = solver::solve_first_seeded(&grid, &setting, &config, &seed_field)?;
        match out {
            SolveOutcome::Nontrivial(pair) => states.push(pair.u),
            SolveOutcome::Trivial(_) => {
                return Ok(CheckResult {
                    name: "first-pair-positive-and-simple",
                    passed: false,
                    detail: "a start field collapsed to zero".into(),
                })
            }
        }
    }
    let mut worst_dist = 0.0f64;
    for i in 0..states.len() {
        for j in 0..i {
            let sign = mass.inner(states[i].values(), states[j].values()).signum();
            let dist: f64 = states[i]
                .values()
                .iter()
                .zip(states[j].values())
                .map(|(a, b)| (a - sign * b) * (a - sign * b))
                .sum::<f64>()
                .sqrt();
            worst_dist = worst_dist.max(dist);
        }
    }
    let positive = states
        .iter()
        .all(|s| s.values().iter().all(|&v| v > 0.0));
    Ok(CheckResult {
        name: "first-pair-positive-and-simple",
        passed: positive && worst_dist < 1e-6,
        detail: format!("max pairwise distance {}", fmt(worst_dist)),
    })
}

fn check_rayleigh_collapse() -> Result<CheckResult, Error> {
    // Along u = e1/n the generalised Rayleigh quotient is
    // lambda_1 + kappa n^{2-p} exactly; for p = 3 it decreases in n and an
    // end-correction by the fitted power law lands on lambda_1.
    let grid = Grid::new(1, &[0.0, 1.0], &[64])?;
    let (lambda_1, e1) = linear_eigs(&grid, 1)?.remove(0);
    let p = 3.0;
    let quotient = |scale: f64| -> f64 {
        let u = e1.scaled(scale);
        let n = norms(&u, p, 0.0);
        (n.h1_sq + n.p_dirichlet) / n.l2_sq
    };
    let mut monotone = true;
    let mut prev = f64::INFINITY;
    let mut values = Vec::new();
    for exp in 0..=10 {
        let n = (1u64 << exp) as f64;
        let r = quotient(1.0 / n);
        if r >= prev {
            monotone = false;
        }
        prev = r;
        values.push((n, r));
    }
    let (n_a, r_a) = values[values.len() - 2];
    let (n_b, r_b) = values[values.len() - 1];
    let kappa_hat = (r_a - r_b) / (1.0 / n_a - 1.0 / n_b);
    let extrapolated = r_b - kappa_hat / n_b;
    let gap = (extrapolated - lambda_1).abs() / lambda_1;
    Ok(CheckResult {
        name: "rayleigh-collapse-to-linear-eigenvalue",
        passed: monotone && gap < 1e-6,
        detail: format!("extrapolated relative gap {}", fmt(gap)),
    })
}

fn check_sup_norm_control() -> Result<CheckResult, Error> {
    // On the unit interval ‖u‖_inf is at most half of ‖u‖_{1,2}.
    let grid = Grid::new(1, &[0.0, 1.0], &[48])?;
    let setting = EnergySetting::new(3.0, 25.0, 0.0)?;
    let config = SolverConfig::default();
    let a = assemble_stiffness(&grid);
    match solver::solve_first(&grid, &setting, &config)? {
        SolveOutcome::Nontrivial(pair) => {
            let ratio = pair.u.max_abs() / a.quadratic(pair.u.values()).sqrt();
            Ok(CheckResult {
                name: "sup-norm-controlled-by-energy-norm",
                passed: ratio <= 0.5 + 1e-12,
                detail: format!("ratio {}", fmt(ratio)),
            })
        }
        SolveOutcome::Trivial(_) => Ok(CheckResult {
            name: "sup-norm-controlled-by-energy-norm",
            passed: false,
            detail: "solve unexpectedly trivial".into(),
        }),
    }
}

fn check_fixed_point_map() -> Result<CheckResult, Error> {
    let grid = Grid::new(1, &[0.0, 1.0], &[48])?;
    let setting = EnergySetting::new(3.0, 15.0, 0.0)?;
    let config = SolverConfig::default();
    let pair = match solver::solve_first(&grid, &setting, &config)? {
        SolveOutcome::Nontrivial(p) => p,
        SolveOutcome::Trivial(_) => {
            return Ok(CheckResult {
                name: "fixed-point-and-inverse-round-trip",
                passed: false,
                detail: "solve unexpectedly trivial".into(),
            })
        }
    };
    let mass = assemble_mass(&grid);
    let s = solver::s_map(&pair.u, &setting, &config)?;
    let s_norm = mass.quadratic(s.values()).max(0.0).sqrt();
    let f = functionals::apply_operator(&pair.u, 3.0, 0.0)?;
    let back = solver::inverse_solve(&grid, &f, 3.0, &config)?;
    let round: f64 = back
        .values()
        .iter()
        .zip(pair.u.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(CheckResult {
        name: "fixed-point-and-inverse-round-trip",
        passed: s_norm < 1e-5 && round < 1e-7,
        detail: format!("s-map norm {}, round trip {}", fmt(s_norm), fmt(round)),
    })
}

fn check_branch_scaling() -> Result<CheckResult, Error> {
    let grid = Grid::new(1, &[0.0, 1.0], &[32])?;
    let lambda_1 = linear_eigs(&grid, 1)?[0].0;
    let config = SolverConfig::default();
    let stations: Vec<f64> = (1..=5).map(|i| lambda_1 + 0.5 * i as f64).collect();
    let sup = bifurcation::trace_branch(&grid, 3.0, &stations, &config)?;
    let fit = bifurcation::fit_scaling(&sup.points, lambda_1)?;
    let slope_ok = (fit.slope - 1.0).abs() < 0.15 && fit.r_squared > 0.99;
    let sub = bifurcation::trace_branch(&grid, 1.5, &stations, &config)?;
    let transformed = bifurcation::transform_branch_points(&sub, 1.5)?;
    let kind = bifurcation::classify_bifurcation(&transformed, lambda_1, None)?;
    let res_ok = transformed.iter().all(|pt| pt.residual < 1e-5);
    Ok(CheckResult {
        name: "branch-scaling-and-transform",
        passed: slope_ok && res_ok && kind == BifurcationKind::FromZero,
        detail: format!(
            "slope {}, r2 {}, transformed kind {:?}",
            fmt(fit.slope),
            fmt(fit.r_squared),
            kind
        ),
    })
}

fn check_catalog_basics() -> Result<CheckResult, Error> {
    let grid = Grid::new(1, &[0.0, 1.0], &[32])?;
    let setting = EnergySetting::new(3.0, 60.0, 0.0)?;
    let config = SolverConfig::default();
    let catalog = multiplicity::find_k_solutions(&grid, &setting, 2, &config)?;
    let domains: Vec<usize> = catalog.entries.iter().map(|e| e.nodal_domains).collect();
    let ok = catalog.entries.len() >= 2 && domains.contains(&1) && domains.contains(&2);
    Ok(CheckResult {
        name: "catalog-finds-distinct-states",
        passed: ok,
        detail: format!("entries {}, nodal domains {:?}", catalog.entries.len(), domains),
    })
}

fn check_even_symmetry() -> Result<CheckResult, Error> {
    // F is even, so the gradient is odd: residuals of u and -u agree.
    let grid = Grid::new(1, &[0.0, 1.0], &[32])?;
    let setting = EnergySetting::new(3.0, 20.0, 0.0)?;
    let u = Field::from_fn(&grid, |[x, _]| {
        (std::f64::consts::PI * x).sin() + 0.3 * (2.0 * std::f64::consts::PI * x).sin()
    });
    let g_plus = functionals::energy_gradient(&u, &setting);
    let g_minus = functionals::energy_gradient(&u.scaled(-1.0), &setting);
    let mut worst = 0.0f64;
    for (a, b) in g_plus.values().iter().zip(g_minus.values()) {
        worst = worst.max((a + b).abs() / a.abs().max(1e-300));
    }
    Ok(CheckResult {
        name: "energy-evenness-gradient-oddness",
        passed: worst < 1e-12,
        detail: format!("max relative asymmetry {}", fmt(worst)),
    })
}
