//! Independent second formulation for fixed charts: the projected Newton form
//! with coefficients `C`, `D`, `E`, `G` built from the geometry tensors, and
//! the acceleration-energy identity that cross-checks it.
//!
//! For each `i = 1..m`,
//!
//! ```text
//! Σ_ν C_i^ν ü_ν + Σ_{ν,μ} D_i^{νμ} u_ν u_μ + Σ_ν E_i^ν u_ν + G_i
//!     = F^{(q_i)} + Σ_j (∂α_j/∂u_i) F^{(q_{m+j})}
//! ```
//!
//! where the coefficients contract `g` and `ξ` with the constraint partials.
//! `C` is the projection `Γᵀ g Γ` with `Γ = (I_m ; ∂α/∂u)`, hence symmetric
//! positive definite at admissible states.

use crate::autodiff::{self, Dual1};
use crate::error::{Error, Result};
use crate::geometry::mass_geometry;
use crate::linalg::Tensor3;
use crate::model::{
    alpha_derivs, full_velocity, generalized_forces, GeneralizedState, SystemModel,
};
use crate::voronec::{Formulation, ReducedSystem};
use nalgebra::{DMatrix, DVector};

/// Coefficients of the projected form at one state.
#[derive(Debug, Clone)]
pub struct ProjectedCoefficients {
    /// `m×m`, symmetric positive definite.
    pub c: DMatrix<f64>,
    /// `(i, ν, μ)`, `m×m×m`, contracts with `u_ν u_μ`.
    pub d: Tensor3,
    /// `m×m`, contracts with `u_ν`.
    pub e: DMatrix<f64>,
    /// `m`, velocity-independent remainder.
    pub g: DVector<f64>,
}

pub fn projected_coefficients(
    model: &SystemModel,
    state: &GeneralizedState,
) -> Result<ProjectedCoefficients> {
    model.check_state(state)?;
    let geo = mass_geometry(model, state.q.as_slice())?;
    let ad = alpha_derivs(model, state)?;
    let (m, k) = (model.m(), model.k());
    let gm = &geo.g;
    let xi = &geo.xi;

    let mut c = DMatrix::zeros(m, m);
    for i in 0..m {
        for nu in 0..m {
            let mut v = gm[(i, nu)];
            for r in 0..k {
                v += gm[(i, m + r)] * ad.du[(r, nu)];
                v += gm[(m + r, nu)] * ad.du[(r, i)];
                for s in 0..k {
                    v += gm[(m + s, m + r)] * ad.du[(s, i)] * ad.du[(r, nu)];
                }
            }
            c[(i, nu)] = v;
        }
    }

    let mut d = Tensor3::zeros(m, m, m);
    for i in 0..m {
        for nu in 0..m {
            for mu in 0..m {
                let mut v = xi.get(nu, mu, i);
                for r in 0..k {
                    v += xi.get(nu, mu, m + r) * ad.du[(r, i)];
                }
                d.set(i, nu, mu, v);
            }
        }
    }

    let mut e = DMatrix::zeros(m, m);
    for i in 0..m {
        for nu in 0..m {
            let mut v = 0.0;
            for r in 0..k {
                let mut curved = xi.get(nu, m + r, i);
                for s in 0..k {
                    curved += xi.get(nu, m + r, m + s) * ad.du[(s, i)];
                }
                v += 2.0 * curved * ad.value[r];

                let mut metric = gm[(m + r, i)];
                for s in 0..k {
                    metric += gm[(m + r, m + s)] * ad.du[(s, i)];
                }
                v += metric * ad.dq[(r, nu)];
            }
            e[(i, nu)] = v;
        }
    }

    let mut gvec = DVector::zeros(m);
    for i in 0..m {
        let mut v = 0.0;
        for r in 0..k {
            for s in 0..k {
                let mut curved = xi.get(m + r, m + s, i);
                for p in 0..k {
                    curved += xi.get(m + r, m + s, m + p) * ad.du[(p, i)];
                }
                v += curved * ad.value[r] * ad.value[s];
            }
            let mut metric = gm[(m + r, i)];
            for p in 0..k {
                metric += gm[(m + r, m + p)] * ad.du[(p, i)];
            }
            for s in 0..k {
                v += metric * ad.dq[(r, m + s)] * ad.value[s];
            }
        }
        gvec[i] = v;
    }

    Ok(ProjectedCoefficients {
        c,
        d,
        e,
        g: gvec,
    })
}

/// Assemble the projected system: `mass = C` and every velocity term moved to
/// the right-hand side together with the projected forces.
pub fn assemble_appell(
    model: &SystemModel,
    state: &GeneralizedState,
    t: f64,
) -> Result<ReducedSystem> {
    let coeffs = projected_coefficients(model, state)?;
    let ad = alpha_derivs(model, state)?;
    let v = full_velocity(model, state)?;
    let forces = generalized_forces(model, &state.q, &v, t)?;
    let (m, k) = (model.m(), model.k());

    let mut rhs = DVector::zeros(m);
    for i in 0..m {
        let mut acc = forces[i];
        for j in 0..k {
            acc += ad.du[(j, i)] * forces[m + j];
        }
        for nu in 0..m {
            for mu in 0..m {
                acc -= coeffs.d.get(i, nu, mu) * state.u[nu] * state.u[mu];
            }
            acc -= coeffs.e[(i, nu)] * state.u[nu];
        }
        acc -= coeffs.g[i];
        rhs[i] = acc;
    }
    Ok(ReducedSystem {
        mass: coeffs.c,
        rhs,
        formulation: Formulation::Appell,
    })
}

/// Acceleration energy `S = ½ Σ_p m_p |P̈_p|²` for a full `(q, q̇, q̈)`
/// triple, with the particle accelerations produced through the chart:
/// `P̈ = Σ_j (∂P/∂q_j) q̈_j + Σ_{jl} (∂²P/∂q_j∂q_l) q̇_j q̇_l`.
pub fn acceleration_energy(
    model: &SystemModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
) -> Result<f64> {
    let n = model.n();
    if q.len() != n || qdot.len() != n || qddot.len() != n {
        return Err(Error::DimensionMismatch {
            what: "acceleration_energy input",
            expected: n,
            got: q.len().max(qdot.len()).max(qddot.len()),
        });
    }
    autodiff::clear_fault();
    let out = model.chart_dyn().eval_d2(&autodiff::seed2(q.as_slice()));
    if let Some((primitive, argument)) = autodiff::take_fault() {
        return Err(Error::AdDomain {
            primitive,
            argument,
        });
    }
    let mut s = 0.0;
    for (c, y) in out.iter().enumerate() {
        if y.dx.is_empty() {
            continue;
        }
        let mut pddot = 0.0;
        for j in 0..n {
            pddot += y.dx[j] * qddot[j];
            for l in 0..n {
                pddot += *y.hess(j, l) * qdot[j] * qdot[l];
            }
        }
        s += 0.5 * model.masses()[c / 3] * pddot * pddot;
    }
    Ok(s)
}

/// Gradient of the acceleration energy with respect to the independent
/// accelerations, with the dependent accelerations expanded first through the
/// total derivative of the constraints. Reproduces the left side of the
/// projected equations at any trial `ü`; the identity suite checks this
/// against the `C`/`D`/`E`/`G` route.
pub fn acceleration_energy_gradient(
    model: &SystemModel,
    state: &GeneralizedState,
    uddot: &DVector<f64>,
) -> Result<DVector<f64>> {
    model.check_state(state)?;
    let (n, m, k) = (model.n(), model.m(), model.k());
    let ad = alpha_derivs(model, state)?;
    let v = full_velocity(model, state)?;

    autodiff::clear_fault();
    let chart = model.chart_dyn().eval_d2(&autodiff::seed2(state.q.as_slice()));
    if let Some((primitive, argument)) = autodiff::take_fault() {
        return Err(Error::AdDomain {
            primitive,
            argument,
        });
    }

    // trial accelerations as first-order duals seeded on ü
    let mut qddot: Vec<Dual1<f64>> = (0..m)
        .map(|i| Dual1::var(uddot[i], i, m))
        .collect();
    for sigma in 0..k {
        let mut dep = Dual1::constant(0.0, m);
        for j in 0..n {
            dep.re += ad.dq[(sigma, j)] * v[j];
        }
        for i in 0..m {
            let term = Dual1::var(uddot[i], i, m).scale(ad.du[(sigma, i)]);
            dep = dep + term;
        }
        qddot.push(dep);
    }

    let mut s = Dual1::constant(0.0, m);
    for (c, y) in chart.iter().enumerate() {
        if y.dx.is_empty() {
            continue;
        }
        let mut pddot = Dual1::constant(0.0, m);
        for j in 0..n {
            pddot = pddot + qddot[j].scale(y.dx[j]);
            let mut quad = 0.0;
            for l in 0..n {
                quad += *y.hess(j, l) * v[j] * v[l];
            }
            pddot.re += quad;
        }
        s = s + (pddot.clone() * pddot).scale(0.5 * model.masses()[c / 3]);
    }
    Ok(DVector::from_vec(s.dx))
}
