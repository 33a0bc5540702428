//! Mass geometry of the chart: metric `g`, second-derivative contraction `ξ`,
//! kinetic energy `T`, reduced kinetic energy `T*`, and the energy jets
//! (values, gradients, Hessian blocks) the assemblies consume.
//!
//! With `X(q)` the chart and `X^{(m)}` its mass-weighted copy,
//!
//! ```text
//! g_{ij}(q)  = ∂X^{(m)}/∂q_i · ∂X/∂q_j
//! ξ_{ijk}(q) = ∂²X^{(m)}/∂q_i∂q_j · ∂X/∂q_k
//! ```
//!
//! Everything here is a pure function of `(model, q)` or `(model, state)`;
//! a single second-order chart evaluation produces `g` and `ξ` together.

use crate::autodiff::{self, Dual1, Dual2, Real};
use crate::error::{Error, Result};
use crate::linalg::{spd_cholesky, Tensor3};
use crate::model::{
    full_velocity, full_velocity_generic, Chart, ChartDyn, GeneralizedState, SystemModel, D1D2, D2,
};
use nalgebra::{DMatrix, DVector};

/// Metric and second-derivative contraction at a configuration.
#[derive(Debug, Clone)]
pub struct MassGeometry {
    pub g: DMatrix<f64>,
    pub xi: Tensor3,
}

pub(crate) fn geometry_dyn(
    masses: &[f64],
    chart: &dyn ChartDyn,
    q: &[f64],
) -> Result<MassGeometry> {
    let n = chart.coords();
    autodiff::clear_fault();
    let out = chart.eval_d2(&autodiff::seed2(q));
    if out.len() != 3 * masses.len() {
        return Err(Error::ModelInvalid(format!(
            "chart returned {} components, expected {}",
            out.len(),
            3 * masses.len()
        )));
    }
    let out: Vec<D2> = out
        .into_iter()
        .map(|c| {
            if c.dx.is_empty() {
                Dual2::constant(c.re, n)
            } else {
                c
            }
        })
        .collect();
    if let Some((primitive, argument)) = autodiff::take_fault() {
        return Err(Error::AdDomain {
            primitive,
            argument,
        });
    }

    let mut g = DMatrix::zeros(n, n);
    let mut xi = Tensor3::zeros(n, n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut gij = 0.0;
            for (c, y) in out.iter().enumerate() {
                gij += masses[c / 3] * y.dx[i] * y.dx[j];
            }
            g[(i, j)] = gij;
            g[(j, i)] = gij;
            for k in 0..n {
                let mut x = 0.0;
                for (c, y) in out.iter().enumerate() {
                    x += masses[c / 3] * y.hess(i, j) * y.dx[k];
                }
                xi.set(i, j, k, x);
                xi.set(j, i, k, x);
            }
        }
    }
    if g.iter().any(|v| !v.is_finite()) || xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "mass geometry",
        });
    }
    Ok(MassGeometry { g, xi })
}

/// Metric and ξ of an arbitrary chart (not necessarily wrapped in a model);
/// used for reduced holonomic reference systems.
pub fn chart_geometry<C: Chart>(masses: &[f64], chart: &C, q: &[f64]) -> Result<MassGeometry> {
    geometry_dyn(masses, chart, q)
}

/// Both geometry tensors of a model at `q`. The assemblies call this once per
/// evaluation point and share the result.
pub fn mass_geometry(model: &SystemModel, q: &[f64]) -> Result<MassGeometry> {
    geometry_dyn(model.masses(), model.chart_dyn(), q)
}

/// Mass metric `g(q)`, verified symmetric positive definite.
pub fn mass_metric(model: &SystemModel, q: &[f64]) -> Result<DMatrix<f64>> {
    let g = mass_geometry(model, q)?.g;
    spd_check(&g)?;
    Ok(g)
}

pub(crate) fn spd_check(g: &DMatrix<f64>) -> Result<()> {
    let n = g.nrows();
    let tolerance = 1e-12 * g.trace() / n as f64;
    match spd_cholesky(g, tolerance) {
        Ok(_) => Ok(()),
        Err(pivot) => Err(Error::DegenerateChart { pivot, tolerance }),
    }
}

/// Second-derivative contraction `ξ_{ijk}(q)`.
pub fn xi_tensor(model: &SystemModel, q: &[f64]) -> Result<Tensor3> {
    Ok(mass_geometry(model, q)?.xi)
}

/// Kinetic energy `T = ½ q̇ᵀ g(q) q̇` of a full generalized velocity.
pub fn kinetic_energy(model: &SystemModel, q: &[f64], qdot: &DVector<f64>) -> Result<f64> {
    let g = mass_geometry(model, q)?.g;
    Ok(0.5 * qdot.dot(&(&g * qdot)))
}

/// Kinetic energy computed directly as `½ Σ m_p |Ṗ_p|²` through the chart
/// Jacobian; independent route used to cross-check the metric.
pub fn kinetic_energy_direct(model: &SystemModel, q: &[f64], qdot: &DVector<f64>) -> Result<f64> {
    let jac = autodiff::jacobian(|qs| model.chart_dyn().eval_d1(qs), q)?;
    let mut t = 0.0;
    for c in 0..jac.nrows() {
        let mut pdot = 0.0;
        for i in 0..jac.ncols() {
            pdot += jac[(c, i)] * qdot[i];
        }
        t += 0.5 * model.masses()[c / 3] * pdot * pdot;
    }
    Ok(t)
}

/// Reduced kinetic energy `T*(q, u) = T(q, full_velocity(q, u))`.
pub fn reduced_kinetic_energy(model: &SystemModel, state: &GeneralizedState) -> Result<f64> {
    let v = full_velocity(model, state)?;
    kinetic_energy(model, state.q.as_slice(), &v)
}

/// Conserved-energy diagnostic `E = T* − 𝒰(q)`.
///
/// Returns `None` when the force model carries applied or Cartesian forces:
/// the diagnostic is only meaningful for potential-only forcing.
pub fn energy(model: &SystemModel, state: &GeneralizedState) -> Result<Option<f64>> {
    if !model.forces().is_conservative() {
        return Ok(None);
    }
    let t = reduced_kinetic_energy(model, state)?;
    let ud = match &model.forces().potential {
        Some(p) => p.eval_f64(state.q.as_slice()),
        None => 0.0,
    };
    Ok(Some(t - ud))
}

/// Value, gradient and the `u`-rows of the Hessian of `T*(q, u)`, computed by
/// differentiating the particle velocities straight through the chart with
/// nested duals — no geometry tensors involved.
pub(crate) struct ReducedEnergyJet {
    pub value: f64,
    /// `∂T*/∂q_j`, length n.
    pub grad_q: DVector<f64>,
    /// `∂T*/∂u_i`, length m.
    pub grad_u: DVector<f64>,
    /// `∂²T*/∂u_i∂u_r`, m×m.
    pub huu: DMatrix<f64>,
    /// `∂²T*/∂u_i∂q_j`, m×n.
    pub huq: DMatrix<f64>,
}

pub(crate) fn t_star_derivs(
    model: &SystemModel,
    state: &GeneralizedState,
) -> Result<ReducedEnergyJet> {
    let (n, m) = (model.n(), model.m());
    let d = n + m;
    autodiff::clear_fault();
    let mut q2: Vec<D2> = Vec::with_capacity(n);
    for (i, &qi) in state.q.iter().enumerate() {
        q2.push(Dual2::var(qi, i, d));
    }
    let mut u2: Vec<D2> = Vec::with_capacity(m);
    for (i, &ui) in state.u.iter().enumerate() {
        u2.push(Dual2::var(ui, n + i, d));
    }
    let v2 = full_velocity_generic::<D2>(model.constraints(), &q2, &u2);
    let inputs: Vec<D1D2> = (0..n)
        .map(|i| Dual1::with_seed(q2[i].clone(), vec![v2[i].clone()]))
        .collect();
    let t = weighted_speed_energy(model, &inputs, d)?;
    let jet = ReducedEnergyJet {
        value: t.re,
        grad_q: DVector::from_iterator(n, t.dx[..n].iter().copied()),
        grad_u: DVector::from_iterator(m, t.dx[n..].iter().copied()),
        huu: DMatrix::from_fn(m, m, |i, r| *t.hess(n + i, n + r)),
        huq: DMatrix::from_fn(m, n, |i, j| *t.hess(n + i, j)),
    };
    Ok(jet)
}

/// Same machinery over the unreduced arguments `(q, q̇) ∈ ℝ^{2n}`, for the
/// direct formulation and for the substituted momenta `∂T/∂q̇`.
pub(crate) struct FullEnergyJet {
    pub grad_q: DVector<f64>,
    pub grad_qd: DVector<f64>,
    /// `∂²T/∂q̇_l∂q̇_j`, n×n.
    pub h_qd_qd: DMatrix<f64>,
    /// `∂²T/∂q̇_l∂q_j`, n×n.
    pub h_qd_q: DMatrix<f64>,
}

pub(crate) fn t_full_derivs(
    model: &SystemModel,
    q: &[f64],
    qdot: &[f64],
) -> Result<FullEnergyJet> {
    let n = model.n();
    let d = 2 * n;
    autodiff::clear_fault();
    let inputs: Vec<D1D2> = (0..n)
        .map(|i| {
            Dual1::with_seed(
                Dual2::var(q[i], i, d),
                vec![Dual2::var(qdot[i], n + i, d)],
            )
        })
        .collect();
    let t = weighted_speed_energy(model, &inputs, d)?;
    Ok(FullEnergyJet {
        grad_q: DVector::from_iterator(n, t.dx[..n].iter().copied()),
        grad_qd: DVector::from_iterator(n, t.dx[n..].iter().copied()),
        h_qd_qd: DMatrix::from_fn(n, n, |l, j| *t.hess(n + l, n + j)),
        h_qd_q: DMatrix::from_fn(n, n, |l, j| *t.hess(n + l, j)),
    })
}

/// `½ Σ m_p |Ṗ_p|²` where the chart inputs carry the velocity in the
/// directional slot of the nested dual.
fn weighted_speed_energy(model: &SystemModel, inputs: &[D1D2], d: usize) -> Result<D2> {
    let out = model.chart_dyn().eval_d1d2(inputs);
    if out.len() != 3 * model.masses().len() {
        return Err(Error::ModelInvalid(format!(
            "chart returned {} components, expected {}",
            out.len(),
            3 * model.masses().len()
        )));
    }
    let mut t = Dual2::constant(0.0, d);
    for (c, y) in out.into_iter().enumerate() {
        let pdot = if y.dx.is_empty() {
            Dual2::constant(0.0, d)
        } else {
            y.dx[0].clone()
        };
        t = t + (pdot.clone() * pdot).scale(0.5 * model.masses()[c / 3]);
    }
    if let Some((primitive, argument)) = autodiff::take_fault() {
        return Err(Error::AdDomain {
            primitive,
            argument,
        });
    }
    let finite = t.re.is_finite()
        && t.dx.iter().all(|v| v.is_finite())
        && t.dxx.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::NonFinite {
            context: "kinetic energy jet",
        });
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConstraintSet, ForceModel};
    use crate::scenarios::{self, IdentityChart};
    use crate::testkit;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_chart_has_identity_metric_and_zero_xi() {
        let s = scenarios::s1_free_linear();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let q = [
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
            ];
            let geo = mass_geometry(&s.model, &q).unwrap();
            assert_eq!(geo.g, DMatrix::identity(3, 3));
            assert!(geo.xi.iter().all(|v| v == 0.0));
        }
    }

    #[test]
    fn sleigh_metric_matches_hand_values() {
        let (m1, m2, d) = (1.3, 0.7, 1.9);
        let s = scenarios::s2_chaplygin_sleigh(m1, m2, d);
        let theta = 0.6_f64;
        let g = mass_metric(&s.model, &[0.2, theta, -0.4]).unwrap();
        assert_relative_eq!(g[(0, 0)], m1 + m2, epsilon = 1e-14);
        assert_relative_eq!(g[(0, 1)], -m2 * d * theta.sin(), epsilon = 1e-14);
        assert_relative_eq!(g[(0, 2)], 0.0, epsilon = 1e-14);
        assert_relative_eq!(g[(1, 1)], m2 * d * d, epsilon = 1e-14);
        assert_relative_eq!(g[(1, 2)], m2 * d * theta.cos(), epsilon = 1e-14);
        assert_relative_eq!(g[(2, 2)], m1 + m2, epsilon = 1e-14);
    }

    #[test]
    fn sleigh_xi_matches_hand_values() {
        let (m1, m2, d) = (1.0, 2.0, 0.8);
        let s = scenarios::s2_chaplygin_sleigh(m1, m2, d);
        let theta = -0.35_f64;
        let xi = xi_tensor(&s.model, &[0.0, theta, 0.0]).unwrap();
        // only ∂²X/∂θ² is nonzero: ξ_{θθx} = -m₂ d cosθ, ξ_{θθy} = -m₂ d sinθ
        assert_relative_eq!(xi.get(1, 1, 0), -m2 * d * theta.cos(), epsilon = 1e-14);
        assert_relative_eq!(xi.get(1, 1, 2), -m2 * d * theta.sin(), epsilon = 1e-14);
        assert_relative_eq!(xi.get(1, 1, 1), 0.0, epsilon = 1e-14);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    if (i, j) != (1, 1) {
                        assert_eq!(xi.get(i, j, k), 0.0, "xi[{i}{j}{k}]");
                    }
                    // mixed-partial symmetry is structural
                    assert!(xi.get(i, j, k).to_bits() == xi.get(j, i, k).to_bits());
                }
            }
        }
    }

    #[test]
    fn kinetic_energy_simple_values() {
        let s = scenarios::s1_free_linear();
        let qdot = DVector::from_vec(vec![1.0, 2.0, 0.5]);
        let t = kinetic_energy(&s.model, &[0.0; 3], &qdot).unwrap();
        assert_relative_eq!(t, 2.625, epsilon = 1e-15);
        let zero = kinetic_energy(&s.model, &[0.0; 3], &DVector::zeros(3)).unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn metric_and_direct_particle_energies_agree() {
        let scens = [
            scenarios::s1_free_linear(),
            scenarios::s2_chaplygin_sleigh(1.0, 1.0, 1.0),
            scenarios::s3_nonlinear_quadratic(1.0),
            scenarios::s4_nonlinear_coupled(),
            scenarios::s5_integrable_nonconstant(),
        ];
        for s in &scens {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            for _ in 0..1000 {
                let state = s.sample_state(&mut rng);
                let qdot = DVector::from_fn(s.model.n(), |_, _| rng.gen_range(-2.0..2.0));
                let a = kinetic_energy(&s.model, state.q.as_slice(), &qdot).unwrap();
                let b = kinetic_energy_direct(&s.model, state.q.as_slice(), &qdot).unwrap();
                assert!(
                    (a - b).abs() <= 1e-12 * (1.0 + a.abs()),
                    "{}: {a} vs {b}",
                    s.id
                );
            }
        }
    }

    #[test]
    fn metric_is_spd_at_sampled_configurations() {
        let scens = [
            scenarios::s2_chaplygin_sleigh(2.0, 0.5, 1.5),
            scenarios::s4_nonlinear_coupled(),
        ];
        for s in &scens {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..1000 {
                let state = s.sample_state(&mut rng);
                mass_metric(&s.model, state.q.as_slice()).unwrap();
            }
        }
    }

    #[test]
    fn degenerate_chart_is_rejected() {
        struct Collapsed;
        impl Chart for Collapsed {
            fn coords(&self) -> usize {
                2
            }
            fn points(&self) -> usize {
                1
            }
            fn eval<S: Real>(&self, q: &[S]) -> Vec<S> {
                vec![q[0].clone(), q[0].clone(), S::zero()]
            }
        }
        struct Zero;
        impl crate::model::LinearCoeffs for Zero {
            fn rows(&self) -> usize {
                1
            }
            fn cols(&self) -> usize {
                1
            }
            fn coeffs<S: Real>(&self, _q: &[S]) -> Vec<Vec<S>> {
                vec![vec![S::zero()]]
            }
        }
        let model = SystemModel::new(
            vec![1.0],
            Collapsed,
            ConstraintSet::linear(Zero),
            ForceModel::none(),
        )
        .unwrap();
        let err = mass_metric(&model, &[0.1, 0.2]).unwrap_err();
        assert!(matches!(err, Error::DegenerateChart { .. }));
    }

    #[test]
    fn reduced_energy_examples() {
        let s3 = scenarios::s3_nonlinear_quadratic(0.0);
        let st = GeneralizedState::new(vec![0.0; 3], vec![1.0, 0.0]);
        assert_relative_eq!(reduced_kinetic_energy(&s3.model, &st).unwrap(), 1.0, epsilon = 1e-15);

        let s1 = scenarios::s1_free_linear();
        let st = GeneralizedState::new(vec![0.0; 3], vec![2.0, 0.0]);
        assert_relative_eq!(reduced_kinetic_energy(&s1.model, &st).unwrap(), 2.5, epsilon = 1e-15);

        let st = GeneralizedState::new(vec![0.4, -0.2, 0.8], vec![0.0, 0.0]);
        assert_eq!(reduced_kinetic_energy(&s1.model, &st).unwrap(), 0.0);
    }

    #[test]
    fn reduced_energy_matches_expanded_block_form() {
        // T* must equal the expanded form
        //   ½ Σ_{ij≤m} g_ij u_i u_j + Σ_ν α_ν (½ Σ_μ g_{m+ν,m+μ} α_μ + Σ_j g_{j,m+ν} u_j)
        let scens = [
            scenarios::s2_chaplygin_sleigh(1.4, 0.6, 1.1),
            scenarios::s3_nonlinear_quadratic(1.0),
            scenarios::s4_nonlinear_coupled(),
            scenarios::s5_integrable_nonconstant(),
        ];
        for s in &scens {
            let (m, k) = (s.model.m(), s.model.k());
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..200 {
                let state = s.sample_state(&mut rng);
                let g = mass_geometry(&s.model, state.q.as_slice()).unwrap().g;
                let alpha = s
                    .model
                    .constraints()
                    .alpha::<f64>(state.q.as_slice(), state.u.as_slice());
                let mut t = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        t += 0.5 * g[(i, j)] * state.u[i] * state.u[j];
                    }
                }
                for nu in 0..k {
                    let mut inner = 0.0;
                    for mu in 0..k {
                        inner += 0.5 * g[(m + nu, m + mu)] * alpha[mu];
                    }
                    for j in 0..m {
                        inner += g[(j, m + nu)] * state.u[j];
                    }
                    t += alpha[nu] * inner;
                }
                let tstar = reduced_kinetic_energy(&s.model, &state).unwrap();
                assert!((t - tstar).abs() <= 1e-12 * (1.0 + tstar.abs()));
            }
        }
    }

    #[test]
    fn energy_examples() {
        // gravity potential 𝒰 = -g q₃ at q₃ = 0 with u = (1, 0): E = T* = 1
        let s3 = scenarios::s3_nonlinear_quadratic(1.0);
        let st = GeneralizedState::new(vec![0.0; 3], vec![1.0, 0.0]);
        assert_relative_eq!(energy(&s3.model, &st).unwrap().unwrap(), 1.0, epsilon = 1e-15);

        // free model: E = T*
        let s1 = scenarios::s1_free_linear();
        let st = GeneralizedState::new(vec![0.0; 3], vec![2.0, 0.0]);
        assert_eq!(energy(&s1.model, &st).unwrap().unwrap(), 2.5);
    }

    #[test]
    fn energy_unavailable_with_applied_forces() {
        let model = SystemModel::new(
            vec![1.0],
            IdentityChart { n: 3 },
            ConstraintSet::linear(scenarios::ConstCoeffs {
                rows: vec![vec![0.5, 0.0]],
            }),
            ForceModel::none().with_applied(|_q, _qd, _t| vec![1.0, 0.0, 0.0]),
        )
        .unwrap();
        let st = GeneralizedState::new(vec![0.0; 3], vec![1.0, 1.0]);
        assert_eq!(energy(&model, &st).unwrap(), None);
    }

    #[test]
    fn reduced_energy_jet_matches_finite_differences() {
        let scens = [
            scenarios::s2_chaplygin_sleigh(1.2, 0.8, 1.3),
            scenarios::s3_nonlinear_quadratic(1.0),
            scenarios::s4_nonlinear_coupled(),
            scenarios::s5_integrable_nonconstant(),
        ];
        for s in &scens {
            let (n, m) = (s.model.n(), s.model.m());
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..25 {
                let state = s.sample_state(&mut rng);
                let jet = t_star_derivs(&s.model, &state).unwrap();
                assert_relative_eq!(
                    jet.value,
                    reduced_kinetic_energy(&s.model, &state).unwrap(),
                    epsilon = 1e-13
                );
                let f = |x: &[f64]| {
                    let st = GeneralizedState::new(x[..n].to_vec(), x[n..].to_vec());
                    reduced_kinetic_energy(&s.model, &st).unwrap()
                };
                let mut x: Vec<f64> = state.q.iter().copied().collect();
                x.extend(state.u.iter());
                let fd_grad = testkit::fd_gradient(&f, &x, 1e-6);
                for j in 0..n {
                    assert!((jet.grad_q[j] - fd_grad[j]).abs() < 2e-6, "{}", s.id);
                }
                for i in 0..m {
                    assert!((jet.grad_u[i] - fd_grad[n + i]).abs() < 2e-6, "{}", s.id);
                }
                // u-rows of the Hessian vs central differences of the AD gradient
                for i in 0..m {
                    for j in 0..n + m {
                        let hij = testkit::fd_entry_of_gradient(
                            &|x: &[f64]| {
                                let st =
                                    GeneralizedState::new(x[..n].to_vec(), x[n..].to_vec());
                                let jet = t_star_derivs(&s.model, &st).unwrap();
                                let mut grad: Vec<f64> = jet.grad_q.iter().copied().collect();
                                grad.extend(jet.grad_u.iter());
                                grad
                            },
                            &x,
                            n + i,
                            j,
                            1e-6,
                        );
                        let ad = if j < n { jet.huq[(i, j)] } else { jet.huu[(i, j - n)] };
                        assert!((ad - hij).abs() < 5e-6, "{} h[{i},{j}]", s.id);
                    }
                }
            }
        }
    }

    #[test]
    fn full_energy_jet_matches_finite_differences() {
        let s = scenarios::s2_chaplygin_sleigh(1.0, 0.5, 1.2);
        let n = s.model.n();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..25 {
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let qdot: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let jet = t_full_derivs(&s.model, &q, &qdot).unwrap();
            let f = |x: &[f64]| {
                kinetic_energy(&s.model, &x[..n], &DVector::from_vec(x[n..].to_vec())).unwrap()
            };
            let mut x = q.clone();
            x.extend(&qdot);
            let fd_grad = testkit::fd_gradient(&f, &x, 1e-6);
            for j in 0..n {
                assert!((jet.grad_q[j] - fd_grad[j]).abs() < 2e-6);
                assert!((jet.grad_qd[j] - fd_grad[n + j]).abs() < 2e-6);
            }
        }
    }
}
