//! Independent ground truth: the full n-dimensional Newton equations with
//! explicit multipliers enforcing the constraints.
//!
//! The reaction is a combination of the `k` generator vectors
//! `w_σ = (∂α_σ/∂u_1, …, ∂α_σ/∂u_m, 0, …, −1 at slot m+σ, …, 0)`, which makes
//! it orthogonal to every admissible velocity variation
//! `(e_i ; ∂α/∂u_i)` by construction. The augmented `(n+k)×(n+k)` system
//!
//! ```text
//! g(q) q̈ + ξ-quadratic(q, q̇) − Σ_σ λ_σ w_σ = F
//! q̈_{m+σ} − Σ_i (∂α_σ/∂u_i) q̈_i = Σ_j (∂α_σ/∂q_j) q̇_j
//! ```
//!
//! is solved as one dense block with partial pivoting — no Schur elimination,
//! so the oracle stays simple and auditable.

use crate::error::{Error, Result};
use crate::geometry::mass_geometry;
use crate::linalg::solve_checked;
use crate::model::{
    alpha_derivs, full_velocity, generalized_forces, GeneralizedState, SystemModel,
};
use crate::voronec::{Formulation, ReducedSystem};
use nalgebra::{DMatrix, DVector};

/// Accelerations, multipliers, and the generalized reaction they generate.
#[derive(Debug, Clone)]
pub struct MultiplierSolution {
    pub qddot: DVector<f64>,
    pub lambda: DVector<f64>,
    pub reaction: DVector<f64>,
}

/// Solve the augmented multiplier system at a state.
pub fn solve_with_multipliers(
    model: &SystemModel,
    state: &GeneralizedState,
    t: f64,
) -> Result<MultiplierSolution> {
    model.check_state(state)?;
    let (n, m, k) = (model.n(), model.m(), model.k());
    let geo = mass_geometry(model, state.q.as_slice())?;
    let ad = alpha_derivs(model, state)?;
    let v = full_velocity(model, state)?;
    let forces = generalized_forces(model, &state.q, &v, t)?;

    let dim = n + k;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);

    // Newton rows: g q̈ − Σ λ_σ w_σ = F − ξ-quadratic
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = geo.g[(i, j)];
        }
        for sigma in 0..k {
            let w = if i < m {
                ad.du[(sigma, i)]
            } else if i == m + sigma {
                -1.0
            } else {
                0.0
            };
            a[(i, n + sigma)] = -w;
        }
        let mut coriolis = 0.0;
        for j in 0..n {
            for l in 0..n {
                coriolis += geo.xi.get(j, l, i) * v[j] * v[l];
            }
        }
        b[i] = forces[i] - coriolis;
    }

    // constraint closure rows: q̈_{m+σ} = dα_σ/dt along the motion
    for sigma in 0..k {
        let row = n + sigma;
        a[(row, m + sigma)] = 1.0;
        for i in 0..m {
            a[(row, i)] = -ad.du[(sigma, i)];
        }
        let mut rhs = 0.0;
        for j in 0..n {
            rhs += ad.dq[(sigma, j)] * v[j];
        }
        b[row] = rhs;
    }

    let sol = solve_checked(&a, &b, |cond| Error::DegenerateConstraint { cond })?;
    let qddot = DVector::from_fn(n, |i, _| sol[i]);
    let lambda = DVector::from_fn(k, |s, _| sol[n + s]);
    let mut reaction = DVector::zeros(n);
    for sigma in 0..k {
        for i in 0..m {
            reaction[i] += lambda[sigma] * ad.du[(sigma, i)];
        }
        reaction[m + sigma] -= lambda[sigma];
    }
    Ok(MultiplierSolution {
        qddot,
        lambda,
        reaction,
    })
}

/// The oracle packaged as a reduced system over the independent
/// accelerations, so the integrator can drive it like any other formulation.
pub fn assemble_oracle(
    model: &SystemModel,
    state: &GeneralizedState,
    t: f64,
) -> Result<ReducedSystem> {
    let sol = solve_with_multipliers(model, state, t)?;
    let m = model.m();
    Ok(ReducedSystem {
        mass: DMatrix::identity(m, m),
        rhs: DVector::from_fn(m, |i, _| sol.qddot[i]),
        formulation: Formulation::Oracle,
    })
}

/// Largest violation of the ideality condition over the admissible velocity
/// variations: `max_i |R_i + Σ_j (∂α_j/∂u_i) R_{m+j}|`. For reactions built by
/// the oracle this is zero up to rounding.
pub fn ideality_check(
    model: &SystemModel,
    state: &GeneralizedState,
    reaction: &DVector<f64>,
) -> Result<f64> {
    model.check_state(state)?;
    if reaction.len() != model.n() {
        return Err(Error::DimensionMismatch {
            what: "reaction",
            expected: model.n(),
            got: reaction.len(),
        });
    }
    let ad = alpha_derivs(model, state)?;
    let (m, k) = (model.m(), model.k());
    let mut worst = 0.0_f64;
    for i in 0..m {
        let mut v = reaction[i];
        for j in 0..k {
            v += ad.du[(j, i)] * reaction[m + j];
        }
        worst = worst.max(v.abs());
    }
    Ok(worst)
}

/// Power of a reaction along the span of admissible velocity variations at
/// the state: `Σ_i u_i (R_i + Σ_j (∂α_j/∂u_i) R_{m+j})`.
///
/// For linear constraint sets this equals the plain power `Σ_i R_i q̇_i`
/// against the actual velocity; either way it vanishes for ideal reactions,
/// which is the mechanism keeping conservative linear systems from
/// dissipating energy.
pub fn power_of_reactions(
    model: &SystemModel,
    state: &GeneralizedState,
    reaction: &DVector<f64>,
) -> Result<f64> {
    model.check_state(state)?;
    if reaction.len() != model.n() {
        return Err(Error::DimensionMismatch {
            what: "reaction",
            expected: model.n(),
            got: reaction.len(),
        });
    }
    let ad = alpha_derivs(model, state)?;
    let (m, k) = (model.m(), model.k());
    let mut power = 0.0;
    for i in 0..m {
        let mut v = reaction[i];
        for j in 0..k {
            v += ad.du[(j, i)] * reaction[m + j];
        }
        power += state.u[i] * v;
    }
    Ok(power)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gravity_case_hand_elimination() {
        // λ(1 + 4u₁²) = −g at u = (1, 0): λ = −0.2, q̈ = (−0.4, 0, −0.8)
        let s3 = scenarios::s3_nonlinear_quadratic(1.0);
        let st = GeneralizedState::new(vec![0.0; 3], vec![1.0, 0.0]);
        let sol = solve_with_multipliers(&s3.model, &st, 0.0).unwrap();
        assert_relative_eq!(sol.lambda[0], -0.2, epsilon = 1e-13);
        assert_relative_eq!(sol.qddot[0], -0.4, epsilon = 1e-13);
        assert_relative_eq!(sol.qddot[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(sol.qddot[2], -0.8, epsilon = 1e-13);
    }

    #[test]
    fn free_motion_has_zero_multiplier() {
        let s1 = scenarios::s1_free_linear();
        let st = GeneralizedState::new(vec![0.1, 0.2, 0.3], vec![2.0, 1.0]);
        let sol = solve_with_multipliers(&s1.model, &st, 0.0).unwrap();
        assert!(sol.lambda[0].abs() < 1e-14);
        assert!(sol.qddot.iter().all(|v| v.abs() < 1e-14));

        let s3 = scenarios::s3_nonlinear_quadratic(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let st = s3.sample_state(&mut rng);
            let sol = solve_with_multipliers(&s3.model, &st, 0.0).unwrap();
            assert!(sol.lambda[0].abs() < 1e-13);
            assert!(sol.qddot.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn oracle_reactions_are_ideal_with_zero_power() {
        let scens = [
            scenarios::s1_free_linear(),
            scenarios::s2_chaplygin_sleigh(1.0, 0.5, 1.2),
            scenarios::s3_nonlinear_quadratic(1.0),
            scenarios::s4_nonlinear_coupled(),
            scenarios::s5_integrable_nonconstant(),
        ];
        for s in &scens {
            let mut rng = ChaCha8Rng::seed_from_u64(23);
            for _ in 0..300 {
                let st = s.sample_state(&mut rng);
                let sol = solve_with_multipliers(&s.model, &st, 0.0).unwrap();
                assert!(
                    ideality_check(&s.model, &st, &sol.reaction).unwrap() < 1e-10,
                    "{}",
                    s.id
                );
                assert!(
                    power_of_reactions(&s.model, &st, &sol.reaction)
                        .unwrap()
                        .abs()
                        < 1e-10,
                    "{}",
                    s.id
                );
            }
        }
    }

    #[test]
    fn unit_perturbation_violates_ideality() {
        let s3 = scenarios::s3_nonlinear_quadratic(0.0);
        let st = GeneralizedState::new(vec![0.0; 3], vec![1.0, 0.0]);
        let mut reaction = DVector::zeros(3);
        reaction[0] = 1.0;
        let v = ideality_check(&s3.model, &st, &reaction).unwrap();
        assert_eq!(v, 1.0);
        let zero = DVector::zeros(3);
        assert_eq!(power_of_reactions(&s3.model, &st, &zero).unwrap(), 0.0);
    }

    #[test]
    fn nonideal_reaction_produces_power() {
        let s1 = scenarios::s1_free_linear();
        let st = GeneralizedState::new(vec![0.0; 3], vec![2.0, 0.0]);
        let mut reaction = DVector::zeros(3);
        reaction[0] = 1.0; // pushes along q₁ with u₁ ≠ 0
        let p = power_of_reactions(&s1.model, &st, &reaction).unwrap();
        assert_eq!(p, 2.0);
    }

    #[test]
    fn linear_reactions_satisfy_row_combination_identity() {
        // any combination of the rows of (A | −I_k) is annihilated by
        // (I_m | Aᵀ), and its power along the actual velocity vanishes
        let s = scenarios::s2_chaplygin_sleigh(1.4, 0.9, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..200 {
            let st = s.sample_state(&mut rng);
            let a = s
                .model
                .constraints()
                .coefficient_matrix(st.q.as_slice())
                .unwrap();
            let c: f64 = rng.gen_range(-2.0..2.0);
            let mut reaction = DVector::zeros(3);
            for i in 0..2 {
                reaction[i] = c * a[(0, i)];
            }
            reaction[2] = -c;
            assert!(ideality_check(&s.model, &st, &reaction).unwrap() < 1e-12);
            // actual power Σ R_i q̇_i for the linear case
            let v = full_velocity(&s.model, &st).unwrap();
            let actual: f64 = (0..3).map(|i| reaction[i] * v[i]).sum();
            assert!(actual.abs() < 1e-12);
            let virtual_power = power_of_reactions(&s.model, &st, &reaction).unwrap();
            assert!((virtual_power - actual).abs() < 1e-12);
        }
    }

    #[test]
    fn dependent_block_matches_dependent_accelerations() {
        let scens = [
            scenarios::s3_nonlinear_quadratic(1.0),
            scenarios::s4_nonlinear_coupled(),
        ];
        for s in &scens {
            let mut rng = ChaCha8Rng::seed_from_u64(37);
            for _ in 0..200 {
                let st = s.sample_state(&mut rng);
                let sol = solve_with_multipliers(&s.model, &st, 0.0).unwrap();
                let m = s.model.m();
                let uddot = DVector::from_fn(m, |i, _| sol.qddot[i]);
                let dep = crate::voronec::dependent_accelerations(&s.model, &st, &uddot).unwrap();
                for sigma in 0..s.model.k() {
                    assert!(
                        (dep[sigma] - sol.qddot[m + sigma]).abs() < 1e-9,
                        "{}",
                        s.id
                    );
                }
            }
        }
    }
}
