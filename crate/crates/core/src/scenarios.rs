//! Built-in, analytically auditable systems covering every constraint family
//! the engine handles: constant-coefficient linear, position-dependent linear
//! (integrable and not), and genuinely nonlinear with diagonal and
//! off-diagonal velocity curvature.
//!
//! Each scenario ships its model, a default initial state, a deterministic
//! admissible-state sampler (which stays clear of declared singular bands,
//! e.g. the sleigh's `|θ| → π/2`), and hand-derived reference facts that the
//! multiplier oracle reproduces.

use crate::autodiff::Real;
use crate::error::Result;
use crate::model::{
    Chart, ConstraintMap, ConstraintSet, ForceModel, GeneralizedState, LinearCoeffs,
    LinearPotential, SystemModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Identity chart on `n` coordinates, embedded as `⌈n/3⌉` unit slots of points
/// in 3-space (unused slots are constant zero and carry no mass geometry).
pub struct IdentityChart {
    pub n: usize,
}

impl Chart for IdentityChart {
    fn coords(&self) -> usize {
        self.n
    }
    fn points(&self) -> usize {
        self.n.div_ceil(3)
    }
    fn eval<S: Real>(&self, q: &[S]) -> Vec<S> {
        let mut out = q.to_vec();
        out.resize(3 * self.points(), S::zero());
        out
    }
}

/// Two rigidly linked planar points: `P₁ = (x, y)` and
/// `P₂ = (x + d cosθ, y + d sinθ)`, embedded with zero third coordinates.
/// Coordinate order is `(x, θ, y)` so that the knife-edge constraint can make
/// `y` the dependent coordinate.
pub struct SleighChart {
    pub d: f64,
}

impl Chart for SleighChart {
    fn coords(&self) -> usize {
        3
    }
    fn points(&self) -> usize {
        2
    }
    fn eval<S: Real>(&self, q: &[S]) -> Vec<S> {
        let (x, theta, y) = (&q[0], &q[1], &q[2]);
        vec![
            x.clone(),
            y.clone(),
            S::zero(),
            x.clone() + theta.cos().scale(self.d),
            y.clone() + theta.sin().scale(self.d),
            S::zero(),
        ]
    }
}

/// Constant linear constraint coefficients.
pub struct ConstCoeffs {
    pub rows: Vec<Vec<f64>>,
}

impl LinearCoeffs for ConstCoeffs {
    fn rows(&self) -> usize {
        self.rows.len()
    }
    fn cols(&self) -> usize {
        self.rows[0].len()
    }
    fn coeffs<S: Real>(&self, _q: &[S]) -> Vec<Vec<S>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|&c| S::from_f64(c)).collect())
            .collect()
    }
}

/// Knife-edge lateral constraint of the sleigh solved for `ẏ`:
/// `ẏ = tanθ · ẋ` over independent `(x, θ)`.
pub struct SleighCoeffs;

impl LinearCoeffs for SleighCoeffs {
    fn rows(&self) -> usize {
        1
    }
    fn cols(&self) -> usize {
        2
    }
    fn coeffs<S: Real>(&self, q: &[S]) -> Vec<Vec<S>> {
        vec![vec![q[1].tan(), S::zero()]]
    }
}

/// Integrable position-dependent coefficients `q̇₃ = q₂ q̇₁ + q₁ q̇₂`
/// (the differential of `f = q₁ q₂`).
pub struct ProductRuleCoeffs;

impl LinearCoeffs for ProductRuleCoeffs {
    fn rows(&self) -> usize {
        1
    }
    fn cols(&self) -> usize {
        2
    }
    fn coeffs<S: Real>(&self, q: &[S]) -> Vec<Vec<S>> {
        vec![vec![q[1].clone(), q[0].clone()]]
    }
}

/// `q̇₃ = q̇₁²` — quadratic in one independent velocity.
pub struct QuadraticAlpha;

impl ConstraintMap for QuadraticAlpha {
    fn count(&self) -> usize {
        1
    }
    fn eval<S: Real>(&self, _q: &[S], u: &[S]) -> Vec<S> {
        vec![u[0].clone() * u[0].clone()]
    }
}

/// `q̇₄ = q̇₁ q̇₂` — nonzero mixed velocity second partials.
pub struct CoupledAlpha;

impl ConstraintMap for CoupledAlpha {
    fn count(&self) -> usize {
        1
    }
    fn eval<S: Real>(&self, _q: &[S], u: &[S]) -> Vec<S> {
        vec![u[0].clone() * u[1].clone()]
    }
}

/// Hand-verified quantity a scenario is known to satisfy; reproduced by the
/// multiplier oracle in the test suites.
#[derive(Debug, Clone)]
pub struct ReferenceFact {
    pub name: &'static str,
    pub value: f64,
}

/// A ready-to-run system: model, default initial state, deterministic
/// admissible-state sampler and its declared safe box.
pub struct Scenario {
    pub id: &'static str,
    pub description: &'static str,
    pub model: SystemModel,
    pub initial: GeneralizedState,
    pub reference_facts: Vec<ReferenceFact>,
    q_ranges: Vec<(f64, f64)>,
    u_ranges: Vec<(f64, f64)>,
}

impl Scenario {
    /// One admissible state, uniform over the declared safe box. Any `(q, u)`
    /// there is admissible: the independent velocities are free and the
    /// dependent ones are reconstructed from the constraint.
    pub fn sample_state(&self, rng: &mut impl Rng) -> GeneralizedState {
        let q = self
            .q_ranges
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..hi))
            .collect();
        let u = self
            .u_ranges
            .iter()
            .map(|&(lo, hi)| rng.gen_range(lo..hi))
            .collect();
        GeneralizedState::new(q, u)
    }

    /// Deterministic batch of sampled states.
    pub fn sample_states(&self, seed: u64, count: usize) -> Vec<GeneralizedState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample_state(&mut rng)).collect()
    }
}

const BOX1: (f64, f64) = (-1.0, 1.0);

/// Unit-mass particle with identity chart and the constant integrable
/// constraint `q̇₃ = 0.5 q̇₁`; free motion is straight-line.
pub fn s1_free_linear() -> Scenario {
    let model = SystemModel::new(
        vec![1.0],
        IdentityChart { n: 3 },
        ConstraintSet::linear(ConstCoeffs {
            rows: vec![vec![0.5, 0.0]],
        }),
        ForceModel::none(),
    )
    .expect("static scenario");
    Scenario {
        id: "free-linear",
        description: "unit mass, identity chart, q3' = 0.5 q1' (integrable, constant)",
        model,
        initial: GeneralizedState::new(vec![0.0, 0.0, 0.0], vec![2.0, 1.0]),
        reference_facts: vec![ReferenceFact {
            name: "free motion acceleration",
            value: 0.0,
        }],
        q_ranges: vec![BOX1; 3],
        u_ranges: vec![BOX1; 2],
    }
}

/// Chaplygin sleigh as two linked point masses with the knife edge at `P₁`;
/// coordinates `(x, θ, y)`, dependent `y`, constraint `ẏ = tanθ ẋ`.
///
/// The `tanθ` parametrization degenerates at `θ = ±π/2`; the sampler stays
/// inside `|θ| ≤ π/2 − 0.1`.
pub fn s2_chaplygin_sleigh(m1: f64, m2: f64, d: f64) -> Scenario {
    let model = SystemModel::new(
        vec![m1, m2],
        SleighChart { d },
        ConstraintSet::linear(SleighCoeffs),
        ForceModel::none(),
    )
    .expect("static scenario");
    let band = std::f64::consts::FRAC_PI_2 - 0.1;
    Scenario {
        id: "sleigh",
        description: "knife-edge sleigh, linear nonintegrable constraint y' = tan(theta) x'",
        model,
        initial: GeneralizedState::new(vec![0.0, 0.2, 0.0], vec![0.6, 0.4]),
        reference_facts: vec![],
        q_ranges: vec![BOX1, (-band, band), BOX1],
        u_ranges: vec![BOX1; 2],
    }
}

/// Unit-mass particle with the nonlinear constraint `q̇₃ = q̇₁²` and an
/// optional vertical force `(0, 0, −gravity)` from the potential
/// `𝒰 = −gravity·q₃`.
pub fn s3_nonlinear_quadratic(gravity: f64) -> Scenario {
    let forces = if gravity == 0.0 {
        ForceModel::none()
    } else {
        ForceModel::none().with_potential(LinearPotential {
            coeffs: vec![0.0, 0.0, -gravity],
        })
    };
    let model = SystemModel::new(
        vec![1.0],
        IdentityChart { n: 3 },
        ConstraintSet::nonlinear(QuadraticAlpha),
        forces,
    )
    .expect("static scenario");
    // multiplier elimination at u = (1, 0): λ(1 + 4u₁²) = −gravity
    let lambda = -gravity / 5.0;
    Scenario {
        id: "nonlinear-quadratic",
        description: "unit mass, identity chart, q3' = q1'^2, optional vertical force",
        model,
        initial: GeneralizedState::new(vec![0.0, 0.0, 0.0], vec![1.0, 0.0]),
        reference_facts: vec![
            ReferenceFact {
                name: "lambda at u = (1, 0)",
                value: lambda,
            },
            ReferenceFact {
                name: "u1' at u = (1, 0)",
                value: 2.0 * lambda,
            },
            ReferenceFact {
                name: "q3'' at u = (1, 0)",
                value: 4.0 * lambda,
            },
        ],
        q_ranges: vec![BOX1; 3],
        u_ranges: vec![BOX1; 2],
    }
}

/// Unit-mass particle on four coordinates with `q̇₄ = q̇₁ q̇₂`, exercising the
/// off-diagonal velocity Hessian of the constraint.
pub fn s4_nonlinear_coupled() -> Scenario {
    let model = SystemModel::new(
        vec![1.0, 1.0],
        IdentityChart { n: 4 },
        ConstraintSet::nonlinear(CoupledAlpha),
        ForceModel::none(),
    )
    .expect("static scenario");
    Scenario {
        id: "nonlinear-coupled",
        description: "identity chart on R^4, q4' = q1' q2' (mixed velocity curvature)",
        model,
        initial: GeneralizedState::new(vec![0.0; 4], vec![0.7, 0.5, 0.3]),
        reference_facts: vec![ReferenceFact {
            name: "free motion acceleration",
            value: 0.0,
        }],
        q_ranges: vec![BOX1; 4],
        u_ranges: vec![BOX1; 3],
    }
}

/// Particle with the integrable position-dependent constraint
/// `q̇₃ = q₂ q̇₁ + q₁ q̇₂` (differential of `f = q₁ q₂`).
pub fn s5_integrable_nonconstant() -> Scenario {
    let model = SystemModel::new(
        vec![1.0],
        IdentityChart { n: 3 },
        ConstraintSet::linear(ProductRuleCoeffs),
        ForceModel::none(),
    )
    .expect("static scenario");
    Scenario {
        id: "integrable-product",
        description: "q3' = q2 q1' + q1 q2' (integrable with f = q1 q2)",
        model,
        // starts on the surface q₃ = q₁ q₂
        initial: GeneralizedState::new(vec![0.4, 0.3, 0.12], vec![0.5, -0.4]),
        reference_facts: vec![],
        q_ranges: vec![BOX1; 3],
        u_ranges: vec![BOX1; 2],
    }
}

/// Scenario-specific parameters settable from the CLI and config files.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioParams {
    pub gravity: f64,
    pub m1: f64,
    pub m2: f64,
    pub d: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        ScenarioParams {
            gravity: 1.0,
            m1: 1.0,
            m2: 1.0,
            d: 1.0,
        }
    }
}

pub const SCENARIO_IDS: [&str; 5] = [
    "free-linear",
    "sleigh",
    "nonlinear-quadratic",
    "nonlinear-coupled",
    "integrable-product",
];

/// Scenario lookup by CLI identifier.
pub fn by_id(id: &str, params: &ScenarioParams) -> Result<Scenario> {
    match id {
        "free-linear" => Ok(s1_free_linear()),
        "sleigh" => Ok(s2_chaplygin_sleigh(params.m1, params.m2, params.d)),
        "nonlinear-quadratic" => Ok(s3_nonlinear_quadratic(params.gravity)),
        "nonlinear-coupled" => Ok(s4_nonlinear_coupled()),
        "integrable-product" => Ok(s5_integrable_nonconstant()),
        other => Err(crate::error::Error::ModelInvalid(format!(
            "unknown scenario `{other}`; available: {}",
            SCENARIO_IDS.join(", ")
        ))),
    }
}

/// All five scenarios with the given parameters, in a stable order.
pub fn all(params: &ScenarioParams) -> Vec<Scenario> {
    SCENARIO_IDS
        .iter()
        .map(|id| by_id(id, params).expect("static ids"))
        .collect()
}
