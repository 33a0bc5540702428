//! Batch property checks over sampled admissible states: the cross-formulation
//! agreement suite, ideality and reaction power, the linear reduction of the
//! nonlinear coefficients, and the acceleration-energy identity.
//!
//! Each check walks a batch of states, tracks the worst violation, and reports
//! it against the pinned tolerance. The CLI `verify` subcommand and the
//! acceptance suite both drive these functions.

use crate::appell::{acceleration_energy_gradient, assemble_appell, projected_coefficients};
use crate::error::Result;
use crate::model::{GeneralizedState, SystemModel};
use crate::oracle::{ideality_check, power_of_reactions, solve_with_multipliers};
use crate::voronec::{
    assemble_caplygin, assemble_voronec, assemble_voronec_direct, assemble_voronec_linear,
    b_coefficients, beta_coefficients, dependent_accelerations,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Result of one property check over a batch of states.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub samples: usize,
    pub max_violation: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.max_violation < self.tolerance
    }
}

/// Pairwise agreement of the independent accelerations across every
/// applicable formulation (reduced, linear-reduced, direct, projected) and
/// the multiplier oracle.
pub fn check_formulation_agreement(
    model: &SystemModel,
    states: &[GeneralizedState],
) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for st in states {
        let mut accs: Vec<DVector<f64>> = vec![
            assemble_voronec(model, st, 0.0)?.solve()?,
            assemble_voronec_direct(model, st, 0.0)?.solve()?,
            assemble_appell(model, st, 0.0)?.solve()?,
        ];
        if model.constraints().is_linear() {
            accs.push(assemble_voronec_linear(model, st, 0.0)?.solve()?);
        }
        let oracle = solve_with_multipliers(model, st, 0.0)?;
        accs.push(DVector::from_fn(model.m(), |i, _| oracle.qddot[i]));
        for a in 0..accs.len() {
            for b in (a + 1)..accs.len() {
                for i in 0..model.m() {
                    worst = worst.max((accs[a][i] - accs[b][i]).abs());
                }
            }
        }
    }
    Ok(CheckOutcome {
        name: "formulation-agreement",
        samples: states.len(),
        max_violation: worst,
        tolerance: 1e-9,
    })
}

/// Oracle reactions annihilate every admissible velocity variation.
pub fn check_ideality(model: &SystemModel, states: &[GeneralizedState]) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for st in states {
        let sol = solve_with_multipliers(model, st, 0.0)?;
        worst = worst.max(ideality_check(model, st, &sol.reaction)?);
    }
    Ok(CheckOutcome {
        name: "ideality",
        samples: states.len(),
        max_violation: worst,
        tolerance: 1e-10,
    })
}

/// Oracle reactions produce no power along the admissible velocity span.
pub fn check_reaction_power(
    model: &SystemModel,
    states: &[GeneralizedState],
) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for st in states {
        let sol = solve_with_multipliers(model, st, 0.0)?;
        worst = worst.max(power_of_reactions(model, st, &sol.reaction)?.abs());
    }
    Ok(CheckOutcome {
        name: "reaction-power",
        samples: states.len(),
        max_violation: worst,
        tolerance: 1e-10,
    })
}

/// For linear sets the generic coefficients must collapse onto the β route:
/// the velocity Hessian part vanishes identically and the assembled
/// right-hand sides coincide.
pub fn check_linear_reduction(
    model: &SystemModel,
    states: &[GeneralizedState],
) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for st in states {
        let b = b_coefficients(model, st)?;
        worst = worst.max(b.b1.iter().fold(0.0, |a, v| a.max(v.abs())));
        let beta = beta_coefficients(model, st.q.as_slice())?;
        for nu in 0..model.k() {
            for i in 0..model.m() {
                let mut via_beta = 0.0;
                for j in 0..model.m() {
                    via_beta += beta.get(i, j, nu) * st.u[j];
                }
                worst = worst.max((b.b0[(i, nu)] - via_beta).abs());
            }
        }
        let generic = assemble_voronec(model, st, 0.0)?;
        let linear = assemble_voronec_linear(model, st, 0.0)?;
        for i in 0..model.m() {
            worst = worst.max((generic.rhs[i] - linear.rhs[i]).abs());
            for r in 0..model.m() {
                worst = worst.max((generic.mass[(i, r)] - linear.mass[(i, r)]).abs());
            }
        }
    }
    Ok(CheckOutcome {
        name: "linear-reduction",
        samples: states.len(),
        max_violation: worst,
        tolerance: 1e-10,
    })
}

/// Largest β entry over the batch; zero for integrable constraint sets.
pub fn check_beta_zero(model: &SystemModel, states: &[GeneralizedState]) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for st in states {
        let beta = beta_coefficients(model, st.q.as_slice())?;
        worst = worst.max(beta.beta.iter().fold(0.0, |a, v| a.max(v.abs())));
    }
    Ok(CheckOutcome {
        name: "beta-zero",
        samples: states.len(),
        max_violation: worst,
        tolerance: 1e-12,
    })
}

/// Čaplygin assembly against the full reduced assembly. Errors with the
/// hypothesis diagnostics when the system is not a Čaplygin system.
pub fn check_caplygin(model: &SystemModel, states: &[GeneralizedState]) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for st in states {
        let a = assemble_caplygin(model, st, 0.0)?.solve()?;
        let b = assemble_voronec(model, st, 0.0)?.solve()?;
        for i in 0..model.m() {
            worst = worst.max((a[i] - b[i]).abs());
        }
    }
    Ok(CheckOutcome {
        name: "caplygin",
        samples: states.len(),
        max_violation: worst,
        tolerance: 1e-9,
    })
}

/// The gradient of the acceleration energy with respect to the independent
/// accelerations reproduces the projected left side at random trial
/// accelerations.
pub fn check_acceleration_energy_identity(
    model: &SystemModel,
    states: &[GeneralizedState],
    seed: u64,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xace1_ace1);
    let m = model.m();
    let mut worst = 0.0_f64;
    for st in states {
        let uddot = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let grad = acceleration_energy_gradient(model, st, &uddot)?;
        let co = projected_coefficients(model, st)?;
        for i in 0..m {
            let mut lhs = 0.0;
            for nu in 0..m {
                lhs += co.c[(i, nu)] * uddot[nu];
                for mu in 0..m {
                    lhs += co.d.get(i, nu, mu) * st.u[nu] * st.u[mu];
                }
                lhs += co.e[(i, nu)] * st.u[nu];
            }
            lhs += co.g[i];
            worst = worst.max((grad[i] - lhs).abs());
        }
    }
    Ok(CheckOutcome {
        name: "acceleration-energy-identity",
        samples: states.len(),
        max_violation: worst,
        tolerance: 1e-8,
    })
}

/// Dependent accelerations reconstructed from the reduced solution against
/// the oracle's dependent block.
pub fn check_dependent_accelerations(
    model: &SystemModel,
    states: &[GeneralizedState],
) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for st in states {
        let sol = solve_with_multipliers(model, st, 0.0)?;
        let uddot = DVector::from_fn(model.m(), |i, _| sol.qddot[i]);
        let dep = dependent_accelerations(model, st, &uddot)?;
        for sigma in 0..model.k() {
            worst = worst.max((dep[sigma] - sol.qddot[model.m() + sigma]).abs());
        }
    }
    Ok(CheckOutcome {
        name: "dependent-accelerations",
        samples: states.len(),
        max_violation: worst,
        tolerance: 1e-9,
    })
}

/// The standard battery: universal checks plus the linear-only reduction when
/// it applies. The Čaplygin and β-zero checks are system-specific facts and
/// run only on request.
pub fn run_standard(
    model: &SystemModel,
    states: &[GeneralizedState],
    seed: u64,
) -> Result<Vec<CheckOutcome>> {
    let mut out = vec![
        check_formulation_agreement(model, states)?,
        check_ideality(model, states)?,
        check_reaction_power(model, states)?,
        check_dependent_accelerations(model, states)?,
        check_acceleration_energy_identity(model, states, seed)?,
    ];
    if model.constraints().is_linear() {
        out.push(check_linear_reduction(model, states)?);
    }
    Ok(out)
}

/// Look up a check by its CLI name.
pub fn by_name(
    name: &str,
    model: &SystemModel,
    states: &[GeneralizedState],
    seed: u64,
) -> Option<Result<CheckOutcome>> {
    match name {
        "formulation-agreement" => Some(check_formulation_agreement(model, states)),
        "ideality" => Some(check_ideality(model, states)),
        "reaction-power" => Some(check_reaction_power(model, states)),
        "linear-reduction" => Some(check_linear_reduction(model, states)),
        "beta-zero" => Some(check_beta_zero(model, states)),
        "caplygin" => Some(check_caplygin(model, states)),
        "acceleration-energy-identity" => {
            Some(check_acceleration_energy_identity(model, states, seed))
        }
        "dependent-accelerations" => Some(check_dependent_accelerations(model, states)),
        _ => None,
    }
}

pub const CHECK_NAMES: [&str; 8] = [
    "formulation-agreement",
    "ideality",
    "reaction-power",
    "linear-reduction",
    "beta-zero",
    "caplygin",
    "acceleration-energy-identity",
    "dependent-accelerations",
];
