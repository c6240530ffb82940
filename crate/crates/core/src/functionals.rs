//! Energy functional, weak-form gradient, Nehari constraint and projection,
//! a Picone-type comparison integral, and the scalar vector inequalities the
//! convergence analysis rests on.
//!
//! The energy is
//!
//! ```text
//! F(u) = 1/2 ∫|∇u|² + 1/p ∫(|∇u|² + ε²)^{p/2} − λ/2 ∫u²
//! ```
//!
//! and its gradient pairs the regularised operator against every P1/Q1 basis
//! function. The alternative functional J = 2F used when working on the
//! Nehari manifold is a pure convention: [`j_energy`] multiplies by two and
//! there is no second implementation.

use crate::error::Error;
use crate::grid::{
    self, assemble_mass, assemble_stiffness, Field, Norms, SymmetricOperator,
};

/// Exponent, spectral parameter and gradient regularisation for one problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergySetting {
    /// Exponent of the p-term, in (1, 2) ∪ (2, ∞).
    pub p: f64,
    /// Spectral parameter λ.
    pub lambda: f64,
    /// Regularisation ε ≥ 0 inside (|∇u|² + ε²)^{p/2}.
    pub epsilon: f64,
}

impl EnergySetting {
    /// Validated constructor; rejects p ≤ 1, p = 2 and negative ε.
    pub fn new(p: f64, lambda: f64, epsilon: f64) -> Result<EnergySetting, Error> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::InvalidExponent {
                p,
                reason: "exponent must be finite and greater than 1",
            });
        }
        if p == 2.0 {
            return Err(Error::InvalidExponent {
                p,
                reason: "the quasilinear term degenerates at p = 2; use the linear solver",
            });
        }
        if !lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda = {lambda} is not finite")));
        }
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!("epsilon = {epsilon} must be >= 0")));
        }
        Ok(EnergySetting { p, lambda, epsilon })
    }

    /// Same setting with a different regularisation.
    #[must_use]
    pub fn with_epsilon(&self, epsilon: f64) -> EnergySetting {
        EnergySetting { epsilon, ..*self }
    }

    /// Same setting with a different λ.
    #[must_use]
    pub fn with_lambda(&self, lambda: f64) -> EnergySetting {
        EnergySetting { lambda, ..*self }
    }
}

/// |g|^{p-2} g with the removable singularity at g = 0 filled in by zero.
#[inline]
pub(crate) fn p_flux(g: [f64; 2], p: f64, epsilon: f64) -> [f64; 2] {
    let g2 = g[0] * g[0] + g[1] * g[1] + epsilon * epsilon;
    if g2 == 0.0 {
        return [0.0, 0.0];
    }
    let w = g2.powf(0.5 * p - 1.0);
    [w * g[0], w * g[1]]
}

/// F(u) for the given setting.
#[must_use]
pub fn energy(u: &Field, setting: &EnergySetting) -> f64 {
    let n = grid::norms(u, setting.p, setting.epsilon);
    energy_from_norms(&n, setting)
}

/// F from precomputed norms.
#[must_use]
pub fn energy_from_norms(n: &Norms, setting: &EnergySetting) -> f64 {
    0.5 * n.h1_sq + n.p_dirichlet / setting.p - 0.5 * setting.lambda * n.l2_sq
}

/// J(u) = 2 F(u), the scaling used when working on the Nehari manifold.
#[must_use]
pub fn j_energy(u: &Field, setting: &EnergySetting) -> f64 {
    2.0 * energy(u, setting)
}

/// Weak-form gradient of F: the vector with components
/// ⟨−Δₚu − Δu − λu, φ_i⟩ over interior basis functions φ_i.
#[must_use]
pub fn energy_gradient(u: &Field, setting: &EnergySetting) -> Field {
    let mass = assemble_mass(u.grid());
    let stiffness = assemble_stiffness(u.grid());
    energy_gradient_with(u, setting, &mass, &stiffness)
}

/// [`energy_gradient`] reusing assembled operators.
#[must_use]
pub fn energy_gradient_with(
    u: &Field,
    setting: &EnergySetting,
    mass: &SymmetricOperator,
    stiffness: &SymmetricOperator,
) -> Field {
    let mut out = stiffness.apply_slice(u.values());
    let pres = p_residual(u, setting.p, setting.epsilon);
    let mu = mass.apply_slice(u.values());
    for i in 0..out.len() {
        out[i] += pres[i] - setting.lambda * mu[i];
    }
    Field::from_values(u.grid(), out).expect("gradient length matches grid")
}

/// Weak form of −Δₚu alone: Σ_s w_s (|∇u|²+ε²)^{(p-2)/2} ∇u · ∇φ_i.
#[must_use]
pub(crate) fn p_residual(u: &Field, p: f64, epsilon: f64) -> Vec<f64> {
    let g = u.grid();
    let mut out = vec![0.0; g.n_interior()];
    for s in g.samples() {
        let flux = p_flux(grid::gradient_at(g, s, u.values()), p, epsilon);
        for a in 0..s.n_nodes {
            if let Some(i) = g.interior_slot(s.nodes[a]) {
                out[i] += s.weight * (flux[0] * s.grad[a][0] + flux[1] * s.grad[a][1]);
            }
        }
    }
    out
}

/// Application of the full operator u ↦ (−Δₚ − Δ)u in weak form.
///
/// Unlike [`EnergySetting`], this accepts p = 2, where it reduces to twice
/// the stiffness application; that degenerate case is useful in tests.
pub fn apply_operator(u: &Field, p: f64, epsilon: f64) -> Result<Field, Error> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent {
            p,
            reason: "exponent must be finite and greater than 1",
        });
    }
    let stiffness = assemble_stiffness(u.grid());
    let mut out = stiffness.apply_slice(u.values());
    let pres = p_residual(u, p, epsilon);
    for i in 0..out.len() {
        out[i] += pres[i];
    }
    Ok(Field::from_values(u.grid(), out).expect("operator output length"))
}

/// Linearisation of the p-term at `u`: the matrix with per-sample coefficient
/// w I + (p−2) (|∇u|²+ε²)^{(p-4)/2} ∇u ⊗ ∇u, w = (|∇u|²+ε²)^{(p-2)/2}.
///
/// Positive semidefinite for p > 2 and, with ε > 0, positive definite with
/// constant at least (p−1) w for p < 2.
#[must_use]
pub(crate) fn p_jacobian(u: &Field, p: f64, epsilon: f64) -> SymmetricOperator {
    let e2 = epsilon * epsilon;
    grid::assemble_weighted(u.grid(), u, |_, g| {
        let base = g[0] * g[0] + g[1] * g[1] + e2;
        if base == 0.0 {
            return [[0.0; 2]; 2];
        }
        let w = base.powf(0.5 * p - 1.0);
        let c = (p - 2.0) * base.powf(0.5 * p - 2.0);
        [
            [w + c * g[0] * g[0], c * g[0] * g[1]],
            [c * g[1] * g[0], w + c * g[1] * g[1]],
        ]
    })
}

/// Value and status of the Nehari constraint at one field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NehariReport {
    /// N(u) = ∫|∇u|² + ∫(|∇u|²+ε²)^{p/2} − λ∫u².
    pub constraint: f64,
    /// Projection scale when one was computed, `None` for a plain residual.
    pub scale: Option<f64>,
    /// |N(u)| ≤ tol (‖∇u‖₂² + |λ| ‖u‖₂²) with tol = 1e-8.
    pub on_manifold: bool,
}

/// Relative tolerance deciding [`NehariReport::on_manifold`].
pub const MANIFOLD_TOL: f64 = 1e-8;

/// Evaluates the Nehari constraint N(u); the zero field is rejected because
/// the manifold excludes it.
pub fn nehari_residual(u: &Field, setting: &EnergySetting) -> Result<NehariReport, Error> {
    let n = grid::norms(u, setting.p, setting.epsilon);
    if n.l2_sq == 0.0 {
        return Err(Error::ZeroField);
    }
    let constraint = n.h1_sq + n.p_dirichlet - setting.lambda * n.l2_sq;
    let scale_ref = n.h1_sq + setting.lambda.abs() * n.l2_sq;
    Ok(NehariReport {
        constraint,
        scale: None,
        on_manifold: constraint.abs() <= MANIFOLD_TOL * scale_ref,
    })
}

/// Projection scale onto the Nehari manifold for 1 < p < 2:
/// t = (∫|∇u|^p / (λ∫u² − ∫|∇u|²))^{1/(2−p)}, so that N(t u) = 0 at ε = 0.
///
/// Fails with [`Error::NotInCone`] when λ∫u² − ∫|∇u|² ≤ 0.
pub fn nehari_scale(u: &Field, setting: &EnergySetting) -> Result<f64, Error> {
    if !(setting.p > 1.0 && setting.p < 2.0) {
        return Err(Error::InvalidExponent {
            p: setting.p,
            reason: "the Nehari projection scale is defined for 1 < p < 2",
        });
    }
    // The closed form is exact for the unregularised p-term.
    let n = grid::norms(u, setting.p, 0.0);
    if n.l2_sq == 0.0 {
        return Err(Error::ZeroField);
    }
    let denom = setting.lambda * n.l2_sq - n.h1_sq;
    let scale_ref = setting.lambda.abs() * n.l2_sq + n.h1_sq;
    if denom <= 1e-12 * scale_ref {
        return Err(Error::NotInCone { margin: denom });
    }
    Ok((n.p_dirichlet / denom).powf(1.0 / (2.0 - setting.p)))
}

/// Picone-type comparison integral I(u, v) for positive fields.
///
/// Per quadrature sample with ratio t = v̄/ū (shape-function values at the
/// sample point) and gradients R = ∇u, S = ∇v, the integrand pairs the p-flux
/// and the linear flux of each field against the gradients of the test
/// functions (uᵖ−vᵖ)/uᵖ⁻¹, (u²−v²)/u and their mirror images:
///
/// ```text
/// |R|^{p-2} R·[(1+(p−1)tᵖ)R − p t^{p−1} S] + R·[(1+t²)R − 2 t S]
/// + |S|^{p-2} S·[(1+(p−1)t^{−p})S − p t^{1−p} R] + S·[(1+t^{−2})S − 2 t^{−1} R]
/// ```
///
/// The sum is nonnegative and vanishes exactly when v is a scalar multiple
/// of u, sample by sample.
pub fn picone(u: &Field, v: &Field, p: f64) -> Result<f64, Error> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponent {
            p,
            reason: "exponent must be finite and greater than 1",
        });
    }
    if !u.grid().same_mesh(v.grid()) {
        return Err(Error::GridMismatch("picone needs both fields on one mesh".into()));
    }
    for (node, &value) in u.values().iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::DomainError { node, value });
        }
    }
    for (node, &value) in v.values().iter().enumerate() {
        if !(value > 0.0) {
            return Err(Error::DomainError { node, value });
        }
    }
    let g = u.grid();
    let mut total = 0.0;
    for s in g.samples() {
        let ubar = grid::value_at(g, s, u.values());
        let vbar = grid::value_at(g, s, v.values());
        let t = vbar / ubar;
        let r = grid::gradient_at(g, s, u.values());
        let sv = grid::gradient_at(g, s, v.values());
        let fr = p_flux(r, p, 0.0);
        let fs = p_flux(sv, p, 0.0);
        let tp = t.powf(p);
        let term_p_u = fr[0] * ((1.0 + (p - 1.0) * tp) * r[0] - p * tp / t * sv[0])
            + fr[1] * ((1.0 + (p - 1.0) * tp) * r[1] - p * tp / t * sv[1]);
        let term_2_u = r[0] * ((1.0 + t * t) * r[0] - 2.0 * t * sv[0])
            + r[1] * ((1.0 + t * t) * r[1] - 2.0 * t * sv[1]);
        let term_p_v = fs[0] * ((1.0 + (p - 1.0) / tp) * sv[0] - p * t / tp * r[0])
            + fs[1] * ((1.0 + (p - 1.0) / tp) * sv[1] - p * t / tp * r[1]);
        let term_2_v = sv[0] * ((1.0 + 1.0 / (t * t)) * sv[0] - 2.0 / t * r[0])
            + sv[1] * ((1.0 + 1.0 / (t * t)) * sv[1] - 2.0 / t * r[1]);
        total += s.weight * (term_p_u + term_2_u + term_p_v + term_2_v);
    }
    Ok(total)
}

/// c₁(p) = 2^{2−p} in ⟨|x₂|^{p−2}x₂ − |x₁|^{p−2}x₁, x₂ − x₁⟩ ≥ c₁ |x₂ − x₁|^p
/// for p > 2; sharp at antipodal pairs x₁ = −x₂.
#[must_use]
pub fn monotonicity_constant(p: f64) -> f64 {
    2f64.powf(2.0 - p)
}

/// c₂(p) = p − 1 in |φ(x₂) − φ(x₁)| ≤ c₂ (|x₂|+|x₁|)^{p−2} |x₂ − x₁|, p > 2.
#[must_use]
pub fn lipschitz_constant(p: f64) -> f64 {
    p - 1.0
}

/// C′(p) = (p−1) 2^{p−2} in
/// ⟨φ(x₂) − φ(x₁), x₂ − x₁⟩ ≥ C′ (|x₂|+|x₁|)^{p−2} |x₂ − x₁|² for 1 < p < 2.
#[must_use]
pub fn subquadratic_constant(p: f64) -> f64 {
    (p - 1.0) * 2f64.powf(p - 2.0)
}

/// R(p) = 2^{p−2} in |x₂ − x₁|^p ≤ R ⟨φ(x₂) − φ(x₁), x₂ − x₁⟩ for p > 2.
///
/// This is the reciprocal of [`monotonicity_constant`] and is the smallest
/// admissible value: antipodal pairs attain equality.
#[must_use]
pub fn power_bound_constant(p: f64) -> f64 {
    2f64.powf(p - 2.0)
}

/// Both sides of the three superquadratic inequalities at one vector pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuperquadraticSides {
    pub monotonicity_lhs: f64,
    pub monotonicity_rhs: f64,
    pub lipschitz_lhs: f64,
    pub lipschitz_rhs: f64,
    pub power_lhs: f64,
    pub power_rhs: f64,
}

/// Both sides of the subquadratic monotonicity inequality at one vector pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubquadraticSides {
    pub monotonicity_lhs: f64,
    pub monotonicity_rhs: f64,
}

/// Evaluated inequality sides; which set depends on the regime of p.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InequalitySides {
    /// p > 2: monotonicity lower bound, Lipschitz upper bound and the
    /// p-th power bound. Satisfied when lhs ≥ rhs, lhs ≤ rhs, lhs ≤ rhs.
    Superquadratic(SuperquadraticSides),
    /// 1 < p < 2: singular monotonicity bound, satisfied when lhs ≥ rhs.
    Subquadratic(SubquadraticSides),
}

impl InequalitySides {
    /// True when every inequality holds up to a relative slack.
    #[must_use]
    pub fn satisfied(&self, rel_tol: f64) -> bool {
        match *self {
            InequalitySides::Superquadratic(s) => {
                let m1 = s.monotonicity_rhs.abs().max(s.monotonicity_lhs.abs());
                let m2 = s.lipschitz_rhs.abs().max(s.lipschitz_lhs.abs());
                let m3 = s.power_rhs.abs().max(s.power_lhs.abs());
                s.monotonicity_lhs >= s.monotonicity_rhs - rel_tol * m1
                    && s.lipschitz_lhs <= s.lipschitz_rhs + rel_tol * m2
                    && s.power_lhs <= s.power_rhs + rel_tol * m3
            }
            InequalitySides::Subquadratic(s) => {
                let m = s.monotonicity_rhs.abs().max(s.monotonicity_lhs.abs());
                s.monotonicity_lhs >= s.monotonicity_rhs - rel_tol * m
            }
        }
    }
}

/// Evaluates the inequality sides for a pair of vectors of equal dimension.
pub fn inequality_sides(x1: &[f64], x2: &[f64], p: f64) -> Result<InequalitySides, Error> {
    if !(p > 1.0) || p == 2.0 || !p.is_finite() {
        return Err(Error::InvalidExponent {
            p,
            reason: "the inequalities are stated for p in (1,2) or (2,inf)",
        });
    }
    if x1.len() != x2.len() || x1.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "vector dimensions {} and {} must match and be nonzero",
            x1.len(),
            x2.len()
        )));
    }
    let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let flux = |x: &[f64]| -> Vec<f64> {
        let n = norm(x);
        if n == 0.0 {
            vec![0.0; x.len()]
        } else {
            x.iter().map(|a| n.powf(p - 2.0) * a).collect()
        }
    };
    let f1 = flux(x1);
    let f2 = flux(x2);
    let diff: Vec<f64> = x2.iter().zip(x1).map(|(a, b)| a - b).collect();
    let d = norm(&diff);
    let mono: f64 = f2
        .iter()
        .zip(&f1)
        .zip(&diff)
        .map(|((a, b), c)| (a - b) * c)
        .sum();
    let flux_diff = norm(&f2.iter().zip(&f1).map(|(a, b)| a - b).collect::<Vec<_>>());
    let s = norm(x1) + norm(x2);
    // (|x2|+|x1|)^{p-2} with the empty pair mapped to zero on both sides.
    let s_pow = if s == 0.0 { 0.0 } else { s.powf(p - 2.0) };
    if p > 2.0 {
        Ok(InequalitySides::Superquadratic(SuperquadraticSides {
            monotonicity_lhs: mono,
            monotonicity_rhs: monotonicity_constant(p) * d.powf(p),
            lipschitz_lhs: flux_diff,
            lipschitz_rhs: lipschitz_constant(p) * s_pow * d,
            power_lhs: d.powf(p),
            power_rhs: power_bound_constant(p) * mono,
        }))
    } else {
        Ok(InequalitySides::Subquadratic(SubquadraticSides {
            monotonicity_lhs: mono,
            monotonicity_rhs: subquadratic_constant(p) * s_pow * d * d,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn hat_grid() -> (Grid, Field) {
        let g = Grid::new(1, &[0.0, 1.0], &[2]).unwrap();
        let u = Field::from_values(&g, vec![1.0]).unwrap();
        (g, u)
    }

    fn random_field(g: &Grid, rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Field {
        Field::from_values(g, (0..g.n_interior()).map(|_| rng.gen_range(lo..hi)).collect())
            .unwrap()
    }

    #[test]
    fn energy_of_single_hat() {
        let (_, u) = hat_grid();
        let s = EnergySetting::new(3.0, 12.0, 0.0).unwrap();
        // 1/2 * 4 + 1/3 * 8 - 6 * 1/3 = 8/3.
        let f = energy(&u, &s);
        assert!((f - 8.0 / 3.0).abs() < 1e-13, "{f}");
        assert!((j_energy(&u, &s) - 16.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn setting_validation() {
        assert!(EnergySetting::new(2.0, 1.0, 0.0).is_err());
        assert!(EnergySetting::new(1.0, 1.0, 0.0).is_err());
        assert!(EnergySetting::new(0.5, 1.0, 0.0).is_err());
        assert!(EnergySetting::new(3.0, 1.0, -1.0).is_err());
        assert!(EnergySetting::new(3.0, f64::NAN, 0.0).is_err());
        assert!(EnergySetting::new(1.5, -5.0, 1e-8).is_ok());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let grids = [
            Grid::new(1, &[0.0, 1.0], &[9]).unwrap(),
            Grid::new(2, &[0.0, 1.0, 0.0, 1.0], &[4, 5]).unwrap(),
        ];
        for g in &grids {
            for &(p, eps) in &[(3.0, 0.0), (1.5, 1e-6), (4.0, 0.0), (1.2, 1e-4)] {
                let s = EnergySetting::new(p, 7.0, eps).unwrap();
                let u = random_field(g, &mut rng, -1.0, 1.0);
                let grad = energy_gradient(&u, &s);
                let h = 1e-6;
                for i in 0..u.len() {
                    let mut up = u.clone();
                    up.values_mut()[i] += h;
                    let mut dn = u.clone();
                    dn.values_mut()[i] -= h;
                    let fd = (energy(&up, &s) - energy(&dn, &s)) / (2.0 * h);
                    let got = grad.values()[i];
                    let scale = fd.abs().max(grad.max_abs()).max(1e-8);
                    assert!(
                        (fd - got).abs() <= 1e-6 * scale,
                        "p={p} node {i}: fd {fd} vs grad {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn operator_at_p_two_doubles_stiffness() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::new(1, &[0.0, 1.0], &[12]).unwrap();
        let a = assemble_stiffness(&g);
        for _ in 0..5 {
            let u = random_field(&g, &mut rng, -1.0, 1.0);
            let twice = apply_operator(&u, 2.0, 0.0).unwrap();
            let au = a.apply_slice(u.values());
            for i in 0..u.len() {
                assert!((twice.values()[i] - 2.0 * au[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn nehari_constraint_of_single_hat() {
        let (_, u) = hat_grid();
        let s = EnergySetting::new(1.5, 20.0, 0.0).unwrap();
        let rep = nehari_residual(&u, &s).unwrap();
        // 4 + 2^{3/2} - 20/3.
        let want = 4.0 + 2f64.powf(1.5) - 20.0 / 3.0;
        assert!((rep.constraint - want).abs() < 1e-13);
        assert!((rep.constraint - 0.1617).abs() < 1e-4);
        assert!(!rep.on_manifold);
        assert!(rep.scale.is_none());
    }

    #[test]
    fn nehari_scale_projects_single_hat() {
        let (_, u) = hat_grid();
        let s = EnergySetting::new(1.5, 20.0, 0.0).unwrap();
        let t = nehari_scale(&u, &s).unwrap();
        assert!((t - 1.125).abs() < 1e-12, "{t}");
        let proj = u.scaled(t);
        let rep = nehari_residual(&proj, &s).unwrap();
        assert!(rep.constraint.abs() < 1e-10 * (proj.values()[0].powi(2)).max(1.0));
        assert!(rep.on_manifold);
        // Already on the manifold: the scale is one.
        let t2 = nehari_scale(&proj, &s).unwrap();
        assert!((t2 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nehari_scale_rejects_out_of_cone_and_bad_exponent() {
        let (_, u) = hat_grid();
        // lambda * l2 - h1 = 2 * 1/3 - 4 < 0.
        let s = EnergySetting::new(1.5, 2.0, 0.0).unwrap();
        assert!(matches!(nehari_scale(&u, &s), Err(Error::NotInCone { .. })));
        let s2 = EnergySetting::new(3.0, 20.0, 0.0).unwrap();
        assert!(matches!(
            nehari_scale(&u, &s2),
            Err(Error::InvalidExponent { .. })
        ));
        let g = u.grid().clone();
        let zero = Field::zeros(&g);
        let s3 = EnergySetting::new(1.5, 20.0, 0.0).unwrap();
        assert!(matches!(nehari_residual(&zero, &s3), Err(Error::ZeroField)));
    }

    #[test]
    fn manifold_energy_identity_for_subquadratic_p() {
        // On N(u) = 0 the J-energy equals (2/p - 1) * p_dirichlet > 0.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Grid::new(1, &[0.0, 1.0], &[16]).unwrap();
        let s = EnergySetting::new(1.5, 60.0, 0.0).unwrap();
        for _ in 0..10 {
            let v = random_field(&g, &mut rng, 0.1, 1.0);
            let t = match nehari_scale(&v, &s) {
                Ok(t) => t,
                Err(_) => continue,
            };
            let u = v.scaled(t);
            let j = j_energy(&u, &s);
            let n = crate::grid::norms(&u, s.p, 0.0);
            let want = (2.0 / s.p - 1.0) * n.p_dirichlet;
            assert!((j - want).abs() <= 1e-9 * want.abs().max(1.0), "{j} vs {want}");
            assert!(j > 0.0);
        }
    }

    #[test]
    fn picone_vanishes_on_proportional_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for g in [
            Grid::new(1, &[0.0, 1.0], &[14]).unwrap(),
            Grid::new(2, &[0.0, 1.0, 0.0, 1.0], &[5, 6]).unwrap(),
        ] {
            let u = random_field(&g, &mut rng, 0.2, 2.0);
            let same = picone(&u, &u, 3.0).unwrap();
            assert_eq!(same, 0.0, "identical fields must cancel exactly");
            let v = u.scaled(2.0);
            let prop = picone(&u, &v, 3.0).unwrap();
            let scale = crate::grid::norms(&u, 3.0, 0.0).p_dirichlet.max(1.0);
            assert!(prop.abs() <= 1e-10 * scale, "{prop}");
        }
    }

    #[test]
    fn picone_positive_and_symmetric_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let g = Grid::new(1, &[0.0, 1.0], &[20]).unwrap();
        for &p in &[1.5, 3.0] {
            for _ in 0..25 {
                let u = random_field(&g, &mut rng, 0.1, 1.5);
                let v = random_field(&g, &mut rng, 0.1, 1.5);
                let iuv = picone(&u, &v, p).unwrap();
                let ivu = picone(&v, &u, p).unwrap();
                assert!(iuv >= -1e-12, "p={p}: {iuv}");
                assert!((iuv - ivu).abs() <= 1e-10 * iuv.abs().max(1.0));
            }
        }
    }

    #[test]
    fn picone_rejects_sign_changing_input() {
        let g = Grid::new(1, &[0.0, 1.0], &[6]).unwrap();
        let mut vals = vec![1.0; g.n_interior()];
        vals[2] = -0.5;
        let u = Field::from_values(&g, vals).unwrap();
        let v = Field::from_values(&g, vec![1.0; g.n_interior()]).unwrap();
        match picone(&u, &v, 3.0) {
            Err(Error::DomainError { node, value }) => {
                assert_eq!(node, 2);
                assert!((value + 0.5).abs() < 1e-15);
            }
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    /// Independent decomposition of the Picone integrand into the two
    /// nonnegative pieces: an angular part F proportional to |R||S| − R·S and
    /// a radial part G depending only on the lengths.
    fn decomposition(t: f64, r: [f64; 2], s: [f64; 2], p: f64) -> f64 {
        let rn = (r[0] * r[0] + r[1] * r[1]).sqrt();
        let sn = (s[0] * s[0] + s[1] * s[1]).sqrt();
        let cross = rn * sn - (r[0] * s[0] + r[1] * s[1]);
        let pow = |x: f64, e: f64| if x == 0.0 { 0.0 } else { x.powf(e) };
        let f_part = p * t.powf(p - 1.0) * pow(rn, p - 2.0) * cross
            + p * t.powf(1.0 - p) * pow(sn, p - 2.0) * cross
            + 2.0 * t * cross
            + 2.0 / t * cross;
        let g_part = (1.0 + (p - 1.0) * t.powf(p)) * pow(rn, p)
            + (1.0 + (p - 1.0) * t.powf(-p)) * pow(sn, p)
            + (1.0 + t * t) * rn * rn
            + (1.0 + 1.0 / (t * t)) * sn * sn
            - p * t.powf(p - 1.0) * pow(rn, p - 1.0) * sn
            - p * t.powf(1.0 - p) * pow(sn, p - 1.0) * rn
            - 2.0 * t * rn * sn
            - 2.0 / t * rn * sn;
        f_part + g_part
    }

    #[test]
    fn picone_matches_two_part_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for &p in &[1.5, 3.0] {
            for g in [
                Grid::new(1, &[0.0, 1.0], &[11]).unwrap(),
                Grid::new(2, &[0.0, 1.0, 0.0, 1.0], &[4, 4]).unwrap(),
            ] {
                let u = random_field(&g, &mut rng, 0.2, 1.2);
                let v = random_field(&g, &mut rng, 0.2, 1.2);
                let direct = picone(&u, &v, p).unwrap();
                let mut via_parts = 0.0;
                for smp in g.samples() {
                    let ubar = crate::grid::value_at(&g, smp, u.values());
                    let vbar = crate::grid::value_at(&g, smp, v.values());
                    let r = crate::grid::gradient_at(&g, smp, u.values());
                    let s = crate::grid::gradient_at(&g, smp, v.values());
                    via_parts += smp.weight * decomposition(vbar / ubar, r, s, p);
                }
                let scale = direct.abs().max(via_parts.abs()).max(1.0);
                assert!(
                    (direct - via_parts).abs() <= 1e-10 * scale,
                    "p={p}: {direct} vs {via_parts}"
                );
            }
        }
    }

    #[test]
    fn inequality_constants_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for &p in &[1.5, 3.0, 4.0] {
            for _ in 0..20_000 {
                let dim = rng.gen_range(1..=3);
                let amp1 = 10f64.powf(rng.gen_range(-3.0..2.0));
                let amp2 = 10f64.powf(rng.gen_range(-3.0..2.0));
                let x1: Vec<f64> = (0..dim).map(|_| amp1 * rng.gen_range(-1.0..1.0)).collect();
                let x2: Vec<f64> = (0..dim).map(|_| amp2 * rng.gen_range(-1.0..1.0)).collect();
                let sides = inequality_sides(&x1, &x2, p).unwrap();
                assert!(sides.satisfied(1e-12), "p={p}, x1={x1:?}, x2={x2:?}: {sides:?}");
            }
        }
    }

    #[test]
    fn power_bound_tight_at_antipodal_pairs() {
        // |x2 - x1|^p = R * <phi(x2) - phi(x1), x2 - x1> exactly when x1 = -x2.
        for &p in &[2.5, 3.0, 4.0] {
            let x2 = [0.7, -0.3];
            let x1 = [-0.7, 0.3];
            match inequality_sides(&x1, &x2, p).unwrap() {
                InequalitySides::Superquadratic(s) => {
                    assert!(
                        (s.power_lhs - s.power_rhs).abs() <= 1e-12 * s.power_lhs,
                        "p={p}: {} vs {}",
                        s.power_lhs,
                        s.power_rhs
                    );
                }
                other => panic!("unexpected regime {other:?}"),
            }
        }
    }

    #[test]
    fn strong_monotonicity_dominates_stiffness_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let g = Grid::new(1, &[0.0, 1.0], &[24]).unwrap();
        let a = assemble_stiffness(&g);
        for &p in &[1.5, 3.0, 4.0] {
            for _ in 0..50 {
                let u = random_field(&g, &mut rng, -1.0, 1.0);
                let v = random_field(&g, &mut rng, -1.0, 1.0);
                let au = apply_operator(&u, p, 0.0).unwrap();
                let av = apply_operator(&v, p, 0.0).unwrap();
                let duv: Vec<f64> = u
                    .values()
                    .iter()
                    .zip(v.values())
                    .map(|(a, b)| a - b)
                    .collect();
                let pair: f64 = au
                    .values()
                    .iter()
                    .zip(av.values())
                    .zip(&duv)
                    .map(|((x, y), d)| (x - y) * d)
                    .sum();
                let quad = a.quadratic(&duv);
                assert!(pair >= quad - 1e-10 * quad.max(1.0), "p={p}: {pair} < {quad}");
            }
        }
    }
}
