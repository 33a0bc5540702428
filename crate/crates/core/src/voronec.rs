//! Assembly of the reduced equations of motion in Voronec form.
//!
//! Four assemblies share the `M(q, u) ü = rhs(q, u)` shape:
//!
//! * [`assemble_voronec`] — the reduced form in `T*`: the time derivative of
//!   `∂T*/∂u_i` minus `∂T*/∂q_i`, minus the dependent-coordinate coupling
//!   `Σ_ν (∂T*/∂q_{m+ν}) ∂α_ν/∂u_i`, minus the substituted momenta weighted by
//!   the `B` coefficients. Works for linear and nonlinear constraint sets.
//! * [`assemble_voronec_linear`] — the same equations for linear sets with the
//!   `B` contraction replaced by the antisymmetric `β` coefficients.
//! * [`assemble_voronec_direct`] — the unreduced route: full-`T` Lagrange
//!   binomials projected by `(I | ∂α/∂u)` before any substitution.
//! * [`assemble_caplygin`] — the specialization whose correction keeps only
//!   the curl part of `β`; guarded by a runtime hypothesis check that `T`, the
//!   coefficients and the forces do not depend on the independent coordinates.
//!
//! Acceleration-bearing terms (from `d/dt ∂T*/∂u` and from the velocity
//! Hessian of `α` inside `B`) are collected into the mass matrix, which is
//! exact because the dependence on `ü` is linear.

use crate::error::{Error, Result};
use crate::geometry::{t_full_derivs, t_star_derivs};
use crate::linalg::{solve_checked, Tensor3};
use crate::model::{
    alpha_derivs, full_velocity, generalized_forces, linear_coeff_derivs, GeneralizedState,
    SystemModel,
};
use crate::testkit::fd_entry_of_gradient;
use nalgebra::{DMatrix, DVector};

/// Which assembly produced a reduced system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Formulation {
    Voronec,
    VoronecLinear,
    VoronecDirect,
    Caplygin,
    Appell,
    Oracle,
}

impl Formulation {
    pub fn name(&self) -> &'static str {
        match self {
            Formulation::Voronec => "voronec",
            Formulation::VoronecLinear => "voronec-linear",
            Formulation::VoronecDirect => "voronec-direct",
            Formulation::Caplygin => "caplygin",
            Formulation::Appell => "appell",
            Formulation::Oracle => "oracle",
        }
    }

    pub fn parse(s: &str) -> Option<Formulation> {
        match s {
            "voronec" => Some(Formulation::Voronec),
            "voronec-linear" => Some(Formulation::VoronecLinear),
            "voronec-direct" => Some(Formulation::VoronecDirect),
            "caplygin" => Some(Formulation::Caplygin),
            "appell" => Some(Formulation::Appell),
            "oracle" => Some(Formulation::Oracle),
            _ => None,
        }
    }
}

impl std::fmt::Display for Formulation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Assembled reduced acceleration system `mass · ü = rhs`.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub mass: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub formulation: Formulation,
}

impl ReducedSystem {
    pub fn solve(&self) -> Result<DVector<f64>> {
        solve_accelerations(self)
    }
}

/// Solve the reduced system by LU with partial pivoting. Rejects condition
/// estimates above 1e12 and verifies the residual afterwards.
pub fn solve_accelerations(sys: &ReducedSystem) -> Result<DVector<f64>> {
    solve_checked(&sys.mass, &sys.rhs, |cond| Error::SingularReduction { cond })
}

/// `∂α_ν/∂u_i` at the state, `k×m`. For linear sets this equals the
/// coefficient matrix `A(q)` exactly.
pub fn alpha_velocity_jacobian(
    model: &SystemModel,
    state: &GeneralizedState,
) -> Result<DMatrix<f64>> {
    model.check_state(state)?;
    Ok(alpha_derivs(model, state)?.du)
}

/// Antisymmetric correction coefficients of the linear reduced equations:
///
/// ```text
/// β_{ij}^ν = ∂A_{νi}/∂q_j − ∂A_{νj}/∂q_i
///          + Σ_μ (∂A_{νi}/∂q_{m+μ} A_{μj} − ∂A_{νj}/∂q_{m+μ} A_{μi})
/// ```
///
/// stored as a rank-3 array indexed `(i, j, ν)`. Antisymmetry in `(i, j)` is
/// structural: entries are computed once for `i < j` and mirrored negated.
#[derive(Debug, Clone)]
pub struct BetaCoefficients {
    pub beta: Tensor3,
}

impl BetaCoefficients {
    pub fn get(&self, i: usize, j: usize, nu: usize) -> f64 {
        self.beta.get(i, j, nu)
    }
}

pub fn beta_coefficients(model: &SystemModel, q: &[f64]) -> Result<BetaCoefficients> {
    let (a, da) = linear_coeff_derivs(model, q)?;
    let (m, k) = (model.m(), model.k());
    let mut beta = Tensor3::zeros(m, m, k);
    for nu in 0..k {
        for i in 0..m {
            for j in (i + 1)..m {
                let mut v = da.get(nu, i, j) - da.get(nu, j, i);
                for mu in 0..k {
                    v += da.get(nu, i, m + mu) * a[(mu, j)] - da.get(nu, j, m + mu) * a[(mu, i)];
                }
                beta.set(i, j, nu, v);
                beta.set(j, i, nu, -v);
            }
        }
    }
    Ok(BetaCoefficients { beta })
}

/// The `B` coefficients of the nonlinear reduced equations, split by their
/// dependence on the unknown accelerations:
/// `B_i^ν = B0_i^ν + Σ_r B1_{ir}^ν ü_r` with `B1_{ir}^ν = ∂²α_ν/∂u_i∂u_r`.
#[derive(Debug, Clone)]
pub struct BSplit {
    /// Acceleration-independent part, `(i, ν)`, `m×k`.
    pub b0: DMatrix<f64>,
    /// Velocity Hessian of each constraint, `(i, r, ν)`, `m×m×k`; symmetric in
    /// `(i, r)` and identically zero for linear sets.
    pub b1: Tensor3,
}

pub fn b_coefficients(model: &SystemModel, state: &GeneralizedState) -> Result<BSplit> {
    model.check_state(state)?;
    let ad = alpha_derivs(model, state)?;
    let v = full_velocity(model, state)?;
    let (n, m, k) = (model.n(), model.m(), model.k());
    let mut b0 = DMatrix::zeros(m, k);
    let mut b1 = Tensor3::zeros(m, m, k);
    for nu in 0..k {
        for i in 0..m {
            // Σ_{j≤n} ∂²α_ν/∂u_i∂q_j q̇_j collects both the independent-row sum
            // and the dependent-coordinate sum (q̇_{m+σ} = α_σ).
            let mut val = 0.0;
            for j in 0..n {
                val += ad.huq[nu][(i, j)] * v[j];
            }
            val -= ad.dq[(nu, i)];
            for sigma in 0..k {
                val -= ad.du[(sigma, i)] * ad.dq[(nu, m + sigma)];
            }
            b0[(i, nu)] = val;
            for r in 0..m {
                b1.set(i, r, nu, ad.huu[nu][(i, r)]);
            }
        }
    }
    Ok(BSplit { b0, b1 })
}

struct CommonPieces {
    v: DVector<f64>,
    forces_projected: DVector<f64>,
    du: DMatrix<f64>,
}

fn common_pieces(
    model: &SystemModel,
    state: &GeneralizedState,
    t: f64,
    du: DMatrix<f64>,
) -> Result<CommonPieces> {
    let v = full_velocity(model, state)?;
    let f = generalized_forces(model, &state.q, &v, t)?;
    let (m, k) = (model.m(), model.k());
    let mut fp = DVector::zeros(m);
    for i in 0..m {
        let mut acc = f[i];
        for nu in 0..k {
            acc += du[(nu, i)] * f[m + nu];
        }
        fp[i] = acc;
    }
    Ok(CommonPieces {
        v,
        forces_projected: fp,
        du,
    })
}

/// Substituted momenta `p_ν = (∂T/∂q̇_{m+ν})|_{q̇ = full velocity}`:
/// full `T` is differentiated first, the constraint substituted afterwards.
fn substituted_momenta(
    model: &SystemModel,
    state: &GeneralizedState,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let jet = t_full_derivs(model, state.q.as_slice(), v.as_slice())?;
    let (m, k) = (model.m(), model.k());
    Ok(DVector::from_fn(k, |nu, _| jet.grad_qd[m + nu]))
}

/// Reduced equations for arbitrary (linear or nonlinear) constraint sets.
pub fn assemble_voronec(
    model: &SystemModel,
    state: &GeneralizedState,
    t: f64,
) -> Result<ReducedSystem> {
    model.check_state(state)?;
    let ad = alpha_derivs(model, state)?;
    // acceleration-independent part of B, from the derivatives already in hand
    let b0 = {
        let v = full_velocity(model, state)?;
        let (n, m, k) = (model.n(), model.m(), model.k());
        let mut b0 = DMatrix::zeros(m, k);
        for nu in 0..k {
            for i in 0..m {
                let mut val = 0.0;
                for j in 0..n {
                    val += ad.huq[nu][(i, j)] * v[j];
                }
                val -= ad.dq[(nu, i)];
                for sigma in 0..k {
                    val -= ad.du[(sigma, i)] * ad.dq[(nu, m + sigma)];
                }
                b0[(i, nu)] = val;
            }
        }
        b0
    };
    let pieces = common_pieces(model, state, t, ad.du.clone())?;
    let tstar = t_star_derivs(model, state)?;
    let p = substituted_momenta(model, state, &pieces.v)?;
    let (n, m, k) = (model.n(), model.m(), model.k());

    let mut mass = tstar.huu.clone();
    for nu in 0..k {
        for i in 0..m {
            for r in 0..m {
                mass[(i, r)] -= p[nu] * ad.huu[nu][(i, r)];
            }
        }
    }
    let mut rhs = pieces.forces_projected.clone();
    for i in 0..m {
        for j in 0..n {
            rhs[i] -= tstar.huq[(i, j)] * pieces.v[j];
        }
        rhs[i] += tstar.grad_q[i];
        for nu in 0..k {
            rhs[i] += tstar.grad_q[m + nu] * ad.du[(nu, i)];
            rhs[i] += p[nu] * b0[(i, nu)];
        }
    }
    Ok(ReducedSystem {
        mass,
        rhs,
        formulation: Formulation::Voronec,
    })
}

/// Reduced equations for linear sets through the `β` coefficients.
pub fn assemble_voronec_linear(
    model: &SystemModel,
    state: &GeneralizedState,
    t: f64,
) -> Result<ReducedSystem> {
    assemble_beta_weighted(model, state, t, BetaVariant::Full)
}

/// The Čaplygin form: only the curl part of `β` remains in the correction.
///
/// Valid when the system actually satisfies the Čaplygin hypothesis, which is
/// verified numerically at the query state rather than declared by the caller.
pub fn assemble_caplygin(
    model: &SystemModel,
    state: &GeneralizedState,
    t: f64,
) -> Result<ReducedSystem> {
    caplygin_hypothesis(model, state)?;
    assemble_beta_weighted(model, state, t, BetaVariant::CurlOnly)
}

enum BetaVariant {
    Full,
    CurlOnly,
}

fn assemble_beta_weighted(
    model: &SystemModel,
    state: &GeneralizedState,
    t: f64,
    variant: BetaVariant,
) -> Result<ReducedSystem> {
    model.check_state(state)?;
    let (a, da) = linear_coeff_derivs(model, state.q.as_slice())?;
    let (n, m, k) = (model.n(), model.m(), model.k());
    let beta = match variant {
        BetaVariant::Full => beta_coefficients(model, state.q.as_slice())?.beta,
        BetaVariant::CurlOnly => {
            let mut curl = Tensor3::zeros(m, m, k);
            for nu in 0..k {
                for i in 0..m {
                    for j in (i + 1)..m {
                        let v = da.get(nu, i, j) - da.get(nu, j, i);
                        curl.set(i, j, nu, v);
                        curl.set(j, i, nu, -v);
                    }
                }
            }
            curl
        }
    };
    let pieces = common_pieces(model, state, t, a.clone())?;
    let tstar = t_star_derivs(model, state)?;
    let p = substituted_momenta(model, state, &pieces.v)?;

    let mass = tstar.huu.clone();
    let mut rhs = pieces.forces_projected.clone();
    for i in 0..m {
        for j in 0..n {
            rhs[i] -= tstar.huq[(i, j)] * pieces.v[j];
        }
        rhs[i] += tstar.grad_q[i];
        for nu in 0..k {
            rhs[i] += a[(nu, i)] * tstar.grad_q[m + nu];
            for j in 0..m {
                rhs[i] += beta.get(i, j, nu) * state.u[j] * p[nu];
            }
        }
    }
    Ok(ReducedSystem {
        mass,
        rhs,
        formulation: match variant {
            BetaVariant::Full => Formulation::VoronecLinear,
            BetaVariant::CurlOnly => Formulation::Caplygin,
        },
    })
}

/// Numerical Čaplygin hypothesis check at the query state: the kinetic
/// energy, every constraint coefficient and every force component must be
/// independent of the coordinates `q_1..q_m` (sampled partials below 1e-10).
pub fn caplygin_hypothesis(model: &SystemModel, state: &GeneralizedState) -> Result<()> {
    const TOL: f64 = 1e-10;
    model.check_state(state)?;
    if !model.constraints().is_linear() {
        return Err(Error::UnsupportedFormulation {
            formulation: "caplygin",
            detail: "the Caplygin reduction applies to linear constraint sets only",
        });
    }
    let m = model.m();
    let v = full_velocity(model, state)?;

    let jet = t_full_derivs(model, state.q.as_slice(), v.as_slice())?;
    for i in 0..m {
        if jet.grad_q[i].abs() > TOL {
            return Err(Error::NotCaplygin {
                detail: format!("kinetic energy depends on independent coordinate q{}", i + 1),
                value: jet.grad_q[i].abs(),
                tolerance: TOL,
            });
        }
    }

    let (_, da) = linear_coeff_derivs(model, state.q.as_slice())?;
    for nu in 0..model.k() {
        for i in 0..m {
            for j in 0..m {
                if da.get(nu, i, j).abs() > TOL {
                    return Err(Error::NotCaplygin {
                        detail: format!(
                            "constraint coefficient A[{},{}] depends on independent coordinate q{}",
                            nu + 1,
                            i + 1,
                            j + 1
                        ),
                        value: da.get(nu, i, j).abs(),
                        tolerance: TOL,
                    });
                }
            }
        }
    }

    let has_forces = model.forces().potential.is_some()
        || model.forces().applied.is_some()
        || model.forces().cartesian.is_some();
    if has_forces {
        let q: Vec<f64> = state.q.iter().copied().collect();
        let force_fn = |x: &[f64]| -> Vec<f64> {
            generalized_forces(model, &DVector::from_vec(x.to_vec()), &v, 0.0)
                .map(|f| f.iter().copied().collect())
                .unwrap_or_else(|_| vec![f64::NAN; model.n()])
        };
        for i in 0..m {
            for comp in 0..model.n() {
                let dfi = fd_entry_of_gradient(&force_fn, &q, comp, i, 1e-6);
                if dfi.abs() > TOL {
                    return Err(Error::NotCaplygin {
                        detail: format!(
                            "force component F{} depends on independent coordinate q{}",
                            comp + 1,
                            i + 1
                        ),
                        value: dfi.abs(),
                        tolerance: TOL,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Unreduced route: project the full-`T` Lagrange binomials by
/// `(I_m | ∂α/∂u)` and eliminate the dependent accelerations afterwards.
/// All partials of `T` are taken before any substitution.
pub fn assemble_voronec_direct(
    model: &SystemModel,
    state: &GeneralizedState,
    t: f64,
) -> Result<ReducedSystem> {
    model.check_state(state)?;
    let ad = alpha_derivs(model, state)?;
    let pieces = common_pieces(model, state, t, ad.du.clone())?;
    let jet = t_full_derivs(model, state.q.as_slice(), pieces.v.as_slice())?;
    let (n, m, k) = (model.n(), model.m(), model.k());

    // dependent accelerations: q̈_{m+σ} = c0_σ + Σ_r (∂α_σ/∂u_r) ü_r
    let mut c0 = DVector::zeros(k);
    for sigma in 0..k {
        let mut acc = 0.0;
        for j in 0..n {
            acc += ad.dq[(sigma, j)] * pieces.v[j];
        }
        c0[sigma] = acc;
    }

    // binomial_l = Σ_j H_vv[l,j] q̈_j + Σ_j H_vq[l,j] q̇_j − T_q[l]
    let mut mass = DMatrix::zeros(m, m);
    let mut rhs = pieces.forces_projected.clone();
    for i in 0..m {
        // projection weights Γ_{l i}: 1 at l = i, ∂α_σ/∂u_i at l = m+σ
        let gamma = |l: usize| -> f64 {
            if l < m {
                if l == i {
                    1.0
                } else {
                    0.0
                }
            } else {
                ad.du[(l - m, i)]
            }
        };
        for l in 0..n {
            let w = gamma(l);
            if w == 0.0 {
                continue;
            }
            for r in 0..m {
                let mut coeff = jet.h_qd_qd[(l, r)];
                for sigma in 0..k {
                    coeff += jet.h_qd_qd[(l, m + sigma)] * ad.du[(sigma, r)];
                }
                mass[(i, r)] += w * coeff;
            }
            let mut constant = -jet.grad_q[l];
            for sigma in 0..k {
                constant += jet.h_qd_qd[(l, m + sigma)] * c0[sigma];
            }
            for j in 0..n {
                constant += jet.h_qd_q[(l, j)] * pieces.v[j];
            }
            rhs[i] -= w * constant;
        }
    }
    Ok(ReducedSystem {
        mass,
        rhs,
        formulation: Formulation::VoronecDirect,
    })
}

/// Dependent accelerations along the motion: the total time derivative of
/// each constraint function,
/// `q̈_{m+σ} = Σ_j (∂α_σ/∂q_j) q̇_j + Σ_i (∂α_σ/∂u_i) ü_i`.
pub fn dependent_accelerations(
    model: &SystemModel,
    state: &GeneralizedState,
    uddot: &DVector<f64>,
) -> Result<DVector<f64>> {
    model.check_state(state)?;
    let ad = alpha_derivs(model, state)?;
    let v = full_velocity(model, state)?;
    let (n, m, k) = (model.n(), model.m(), model.k());
    let mut out = DVector::zeros(k);
    for sigma in 0..k {
        let mut acc = 0.0;
        for j in 0..n {
            acc += ad.dq[(sigma, j)] * v[j];
        }
        for i in 0..m {
            acc += ad.du[(sigma, i)] * uddot[i];
        }
        out[sigma] = acc;
    }
    Ok(out)
}
