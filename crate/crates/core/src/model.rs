//! Problem definition: point masses, configuration chart, kinematical
//! constraints in explicit form, applied forces, and the velocity-completion
//! map from independent velocities to the full generalized velocity.
//!
//! Charts, constraints and potentials are supplied as trait impls generic over
//! the AD scalar, so the same user code is evaluated at plain `f64`, at dual
//! numbers for Jacobians, at second-order duals for Hessians, and at nested
//! duals for energies differentiated through the chart.
//!
//! Convention used throughout: of the `n` generalized coordinates, the first
//! `m = n - k` velocities are independent; the last `k` velocities are
//! dependent and reconstructed as `q̇_{m+ν} = α_ν(q, u)`.

use crate::autodiff::{self, Dual1, Dual2, Real};
use crate::error::{Error, Result};
use crate::linalg::Tensor3;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

pub(crate) type D1 = Dual1<f64>;
pub(crate) type D2 = Dual2<f64>;
pub(crate) type D1D2 = Dual1<Dual2<f64>>;

/// Configuration chart `q ∈ ℝⁿ → X ∈ ℝ^{3N}`, written once, differentiated by
/// the engine at whatever order it needs.
pub trait Chart: Send + Sync + 'static {
    /// Number of generalized coordinates `n`.
    fn coords(&self) -> usize;
    /// Number of material points `N`; the chart output has length `3N`.
    fn points(&self) -> usize;
    fn eval<S: Real>(&self, q: &[S]) -> Vec<S>;
}

/// Explicit nonlinear constraint functions `α_ν(q, u)`, `ν = 1..k`.
pub trait ConstraintMap: Send + Sync + 'static {
    fn count(&self) -> usize;
    fn eval<S: Real>(&self, q: &[S], u: &[S]) -> Vec<S>;
}

/// Coefficient matrix `A(q) ∈ ℝ^{k×m}` of linear constraints
/// `q̇_{m+ν} = Σ_i A_{νi}(q) q̇_i`.
pub trait LinearCoeffs: Send + Sync + 'static {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// Row-major coefficient rows, one per constraint.
    fn coeffs<S: Real>(&self, q: &[S]) -> Vec<Vec<S>>;
}

/// Scalar potential `𝒰(q)`; the generalized force contribution is `+∇𝒰`
/// and the conserved energy diagnostic is `T* − 𝒰`.
pub trait Potential: Send + Sync + 'static {
    fn eval<S: Real>(&self, q: &[S]) -> S;
}

/// `𝒰(q) = Σ cᵢ qᵢ`, enough for uniform-gravity style forcing.
pub struct LinearPotential {
    pub coeffs: Vec<f64>,
}

impl Potential for LinearPotential {
    fn eval<S: Real>(&self, q: &[S]) -> S {
        let mut acc = S::zero();
        for (c, qi) in self.coeffs.iter().zip(q) {
            acc = acc + qi.scale(*c);
        }
        acc
    }
}

// Object-safe mirrors of the generic traits. `SystemModel` stores these;
// users never see them.

pub(crate) trait ChartDyn: Send + Sync {
    fn coords(&self) -> usize;
    fn points(&self) -> usize;
    fn eval_f64(&self, q: &[f64]) -> Vec<f64>;
    fn eval_d1(&self, q: &[D1]) -> Vec<D1>;
    fn eval_d2(&self, q: &[D2]) -> Vec<D2>;
    fn eval_d1d2(&self, q: &[D1D2]) -> Vec<D1D2>;
}

impl<C: Chart> ChartDyn for C {
    fn coords(&self) -> usize {
        Chart::coords(self)
    }
    fn points(&self) -> usize {
        Chart::points(self)
    }
    fn eval_f64(&self, q: &[f64]) -> Vec<f64> {
        self.eval(q)
    }
    fn eval_d1(&self, q: &[D1]) -> Vec<D1> {
        self.eval(q)
    }
    fn eval_d2(&self, q: &[D2]) -> Vec<D2> {
        self.eval(q)
    }
    fn eval_d1d2(&self, q: &[D1D2]) -> Vec<D1D2> {
        self.eval(q)
    }
}

pub(crate) trait ConstraintMapDyn: Send + Sync {
    fn count(&self) -> usize;
    fn eval_f64(&self, q: &[f64], u: &[f64]) -> Vec<f64>;
    fn eval_d1(&self, q: &[D1], u: &[D1]) -> Vec<D1>;
    fn eval_d2(&self, q: &[D2], u: &[D2]) -> Vec<D2>;
    fn eval_d1d2(&self, q: &[D1D2], u: &[D1D2]) -> Vec<D1D2>;
}

impl<A: ConstraintMap> ConstraintMapDyn for A {
    fn count(&self) -> usize {
        ConstraintMap::count(self)
    }
    fn eval_f64(&self, q: &[f64], u: &[f64]) -> Vec<f64> {
        self.eval(q, u)
    }
    fn eval_d1(&self, q: &[D1], u: &[D1]) -> Vec<D1> {
        self.eval(q, u)
    }
    fn eval_d2(&self, q: &[D2], u: &[D2]) -> Vec<D2> {
        self.eval(q, u)
    }
    fn eval_d1d2(&self, q: &[D1D2], u: &[D1D2]) -> Vec<D1D2> {
        self.eval(q, u)
    }
}

pub(crate) trait LinearCoeffsDyn: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn coeffs_f64(&self, q: &[f64]) -> Vec<Vec<f64>>;
    fn coeffs_d1(&self, q: &[D1]) -> Vec<Vec<D1>>;
    fn coeffs_d2(&self, q: &[D2]) -> Vec<Vec<D2>>;
    fn coeffs_d1d2(&self, q: &[D1D2]) -> Vec<Vec<D1D2>>;
}

impl<L: LinearCoeffs> LinearCoeffsDyn for L {
    fn rows(&self) -> usize {
        LinearCoeffs::rows(self)
    }
    fn cols(&self) -> usize {
        LinearCoeffs::cols(self)
    }
    fn coeffs_f64(&self, q: &[f64]) -> Vec<Vec<f64>> {
        self.coeffs(q)
    }
    fn coeffs_d1(&self, q: &[D1]) -> Vec<Vec<D1>> {
        self.coeffs(q)
    }
    fn coeffs_d2(&self, q: &[D2]) -> Vec<Vec<D2>> {
        self.coeffs(q)
    }
    fn coeffs_d1d2(&self, q: &[D1D2]) -> Vec<Vec<D1D2>> {
        self.coeffs(q)
    }
}

pub(crate) trait PotentialDyn: Send + Sync {
    fn eval_f64(&self, q: &[f64]) -> f64;
    fn eval_d1(&self, q: &[D1]) -> D1;
}

impl<P: Potential> PotentialDyn for P {
    fn eval_f64(&self, q: &[f64]) -> f64 {
        self.eval(q)
    }
    fn eval_d1(&self, q: &[D1]) -> D1 {
        self.eval(q)
    }
}

/// Internal dispatch from generic engine code onto the object-safe traits.
pub(crate) trait EvalScalar: Real {
    fn chart(c: &dyn ChartDyn, q: &[Self]) -> Vec<Self>;
    fn alpha_map(a: &dyn ConstraintMapDyn, q: &[Self], u: &[Self]) -> Vec<Self>;
    fn lin_coeffs(l: &dyn LinearCoeffsDyn, q: &[Self]) -> Vec<Vec<Self>>;
}

impl EvalScalar for f64 {
    fn chart(c: &dyn ChartDyn, q: &[Self]) -> Vec<Self> {
        c.eval_f64(q)
    }
    fn alpha_map(a: &dyn ConstraintMapDyn, q: &[Self], u: &[Self]) -> Vec<Self> {
        a.eval_f64(q, u)
    }
    fn lin_coeffs(l: &dyn LinearCoeffsDyn, q: &[Self]) -> Vec<Vec<Self>> {
        l.coeffs_f64(q)
    }
}

impl EvalScalar for D1 {
    fn chart(c: &dyn ChartDyn, q: &[Self]) -> Vec<Self> {
        c.eval_d1(q)
    }
    fn alpha_map(a: &dyn ConstraintMapDyn, q: &[Self], u: &[Self]) -> Vec<Self> {
        a.eval_d1(q, u)
    }
    fn lin_coeffs(l: &dyn LinearCoeffsDyn, q: &[Self]) -> Vec<Vec<Self>> {
        l.coeffs_d1(q)
    }
}

impl EvalScalar for D2 {
    fn chart(c: &dyn ChartDyn, q: &[Self]) -> Vec<Self> {
        c.eval_d2(q)
    }
    fn alpha_map(a: &dyn ConstraintMapDyn, q: &[Self], u: &[Self]) -> Vec<Self> {
        a.eval_d2(q, u)
    }
    fn lin_coeffs(l: &dyn LinearCoeffsDyn, q: &[Self]) -> Vec<Vec<Self>> {
        l.coeffs_d2(q)
    }
}

impl EvalScalar for D1D2 {
    fn chart(c: &dyn ChartDyn, q: &[Self]) -> Vec<Self> {
        c.eval_d1d2(q)
    }
    fn alpha_map(a: &dyn ConstraintMapDyn, q: &[Self], u: &[Self]) -> Vec<Self> {
        a.eval_d1d2(q, u)
    }
    fn lin_coeffs(l: &dyn LinearCoeffsDyn, q: &[Self]) -> Vec<Vec<Self>> {
        l.coeffs_d1d2(q)
    }
}

/// Kinematical constraint family. Linear sets keep their coefficient matrix
/// accessible (the β-based assemblies need it) but also answer the generic
/// `α(q, u) = Σ_i A_{νi}(q) u_i` interface, so every nonlinear code path
/// applies to them unchanged.
#[derive(Clone)]
pub enum ConstraintSet {
    Linear(Arc<dyn LinearCoeffsDyn>),
    Nonlinear(Arc<dyn ConstraintMapDyn>),
}

impl ConstraintSet {
    pub fn linear(coeffs: impl LinearCoeffs) -> Self {
        ConstraintSet::Linear(Arc::new(coeffs))
    }

    pub fn nonlinear(alphas: impl ConstraintMap) -> Self {
        ConstraintSet::Nonlinear(Arc::new(alphas))
    }

    pub fn count(&self) -> usize {
        match self {
            ConstraintSet::Linear(l) => l.rows(),
            ConstraintSet::Nonlinear(a) => a.count(),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, ConstraintSet::Linear(_))
    }

    pub(crate) fn alpha<S: EvalScalar>(&self, q: &[S], u: &[S]) -> Vec<S> {
        match self {
            ConstraintSet::Linear(l) => S::lin_coeffs(&**l, q)
                .into_iter()
                .map(|row| {
                    let mut acc = S::zero();
                    for (a, ui) in row.into_iter().zip(u) {
                        acc = acc + a * ui.clone();
                    }
                    acc
                })
                .collect(),
            ConstraintSet::Nonlinear(a) => S::alpha_map(&**a, q, u),
        }
    }

    /// Coefficient matrix of a linear set at `q`.
    pub(crate) fn coefficient_matrix(&self, q: &[f64]) -> Option<DMatrix<f64>> {
        match self {
            ConstraintSet::Linear(l) => {
                let rows = l.coeffs_f64(q);
                let k = l.rows();
                let m = l.cols();
                let mut a = DMatrix::zeros(k, m);
                for (nu, row) in rows.iter().enumerate() {
                    for (i, v) in row.iter().enumerate() {
                        a[(nu, i)] = *v;
                    }
                }
                Some(a)
            }
            ConstraintSet::Nonlinear(_) => None,
        }
    }
}

/// Applied forcing: optional potential, optional generalized force
/// `(q, q̇, t) → F ∈ ℝⁿ`, optional Cartesian per-particle force `(q, t) → ℝ^{3N}`
/// projected onto the chart tangent vectors.
#[derive(Clone, Default)]
pub struct ForceModel {
    pub(crate) potential: Option<Arc<dyn PotentialDyn>>,
    pub(crate) applied: Option<Arc<dyn Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync>>,
    pub(crate) cartesian: Option<Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>>,
}

impl ForceModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn with_potential(mut self, p: impl Potential) -> Self {
        self.potential = Some(Arc::new(p));
        self
    }

    pub fn with_applied(
        mut self,
        f: impl Fn(&[f64], &[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.applied = Some(Arc::new(f));
        self
    }

    pub fn with_cartesian(
        mut self,
        f: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.cartesian = Some(Arc::new(f));
        self
    }

    /// Energy diagnostics are only meaningful for potential-only forcing.
    pub fn is_conservative(&self) -> bool {
        self.applied.is_none() && self.cartesian.is_none()
    }
}

/// Phase point of the reduced dynamics: position `q ∈ ℝⁿ` and independent
/// velocities `u ∈ ℝᵐ`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedState {
    pub q: DVector<f64>,
    pub u: DVector<f64>,
}

impl GeneralizedState {
    pub fn new(q: Vec<f64>, u: Vec<f64>) -> Self {
        GeneralizedState {
            q: DVector::from_vec(q),
            u: DVector::from_vec(u),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|v| v.is_finite()) && self.u.iter().all(|v| v.is_finite())
    }
}

/// Complete problem definition: immutable after construction and safe to share
/// across threads.
#[derive(Clone)]
pub struct SystemModel {
    masses: Vec<f64>,
    chart: Arc<dyn ChartDyn>,
    constraints: ConstraintSet,
    forces: ForceModel,
    n: usize,
    m: usize,
    k: usize,
}

impl SystemModel {
    pub fn new(
        masses: Vec<f64>,
        chart: impl Chart,
        constraints: ConstraintSet,
        forces: ForceModel,
    ) -> Result<Self> {
        let n = chart.coords();
        let n_points = chart.points();
        let k = constraints.count();
        if masses.is_empty() {
            return Err(Error::ModelInvalid("at least one point mass required".into()));
        }
        if masses.len() != n_points {
            return Err(Error::ModelInvalid(format!(
                "chart declares {n_points} points but {} masses were given",
                masses.len()
            )));
        }
        if masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::ModelInvalid("masses must be positive and finite".into()));
        }
        if k == 0 || k >= n {
            return Err(Error::ModelInvalid(format!(
                "need 1 <= k < n, got k = {k}, n = {n}"
            )));
        }
        if let ConstraintSet::Linear(l) = &constraints {
            if l.cols() != n - k {
                return Err(Error::ModelInvalid(format!(
                    "linear coefficient matrix is {}x{}, expected {}x{}",
                    l.rows(),
                    l.cols(),
                    k,
                    n - k
                )));
            }
        }
        Ok(SystemModel {
            masses,
            chart: Arc::new(chart),
            constraints,
            forces,
            n,
            m: n - k,
            k,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn masses(&self) -> &[f64] {
        &self.masses
    }
    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }
    pub fn forces(&self) -> &ForceModel {
        &self.forces
    }
    pub(crate) fn chart_dyn(&self) -> &dyn ChartDyn {
        &*self.chart
    }

    pub(crate) fn check_state(&self, state: &GeneralizedState) -> Result<()> {
        if state.q.len() != self.n {
            return Err(Error::DimensionMismatch {
                what: "state.q",
                expected: self.n,
                got: state.q.len(),
            });
        }
        if state.u.len() != self.m {
            return Err(Error::DimensionMismatch {
                what: "state.u",
                expected: self.m,
                got: state.u.len(),
            });
        }
        Ok(())
    }

    /// Chart positions `X(q) ∈ ℝ^{3N}` with an output-length check.
    pub fn positions(&self, q: &[f64]) -> Result<Vec<f64>> {
        let x = self.chart.eval_f64(q);
        if x.len() != 3 * self.masses.len() {
            return Err(Error::ModelInvalid(format!(
                "chart returned {} components, expected {}",
                x.len(),
                3 * self.masses.len()
            )));
        }
        Ok(x)
    }
}

pub(crate) fn full_velocity_generic<S: EvalScalar>(
    constraints: &ConstraintSet,
    q: &[S],
    u: &[S],
) -> Vec<S> {
    let mut v: Vec<S> = u.to_vec();
    v.extend(constraints.alpha(q, u));
    v
}

/// Complete the independent velocities to the full generalized velocity:
/// `q̇_i = u_i` for `i ≤ m` and `q̇_{m+ν} = α_ν(q, u)`.
pub fn full_velocity(model: &SystemModel, state: &GeneralizedState) -> Result<DVector<f64>> {
    model.check_state(state)?;
    let v = full_velocity_generic::<f64>(
        &model.constraints,
        state.q.as_slice(),
        state.u.as_slice(),
    );
    Ok(DVector::from_vec(v))
}

/// Constraint residual of an arbitrary full velocity:
/// component `ν` is `q̇_{m+ν} − α_ν(q, q̇_1..q̇_m)`; zero iff `q̇` is admissible.
pub fn constraint_residual(
    model: &SystemModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<DVector<f64>> {
    if q.len() != model.n || qdot.len() != model.n {
        return Err(Error::DimensionMismatch {
            what: "constraint_residual input",
            expected: model.n,
            got: q.len().max(qdot.len()),
        });
    }
    let alpha = model
        .constraints
        .alpha::<f64>(q.as_slice(), &qdot.as_slice()[..model.m]);
    let mut r = DVector::zeros(model.k);
    for nu in 0..model.k {
        r[nu] = qdot[model.m + nu] - alpha[nu];
    }
    Ok(r)
}

/// Generalized force components `F^{(q)} ∈ ℝⁿ` at `(q, q̇, t)`: potential
/// gradient plus applied generalized forces plus projected Cartesian forces.
pub fn generalized_forces(
    model: &SystemModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let n = model.n();
    let mut f = DVector::zeros(n);
    if let Some(pot) = &model.forces.potential {
        let (_, grad) = autodiff::gradient(|qs| pot.eval_d1(qs), q.as_slice())?;
        f += grad;
    }
    if let Some(applied) = &model.forces.applied {
        let fa = applied(q.as_slice(), qdot.as_slice(), t);
        if fa.len() != n {
            return Err(Error::DimensionMismatch {
                what: "applied force",
                expected: n,
                got: fa.len(),
            });
        }
        f += DVector::from_vec(fa);
    }
    if let Some(cart) = &model.forces.cartesian {
        let fc = cart(q.as_slice(), t);
        if fc.len() != 3 * model.masses.len() {
            return Err(Error::DimensionMismatch {
                what: "cartesian force",
                expected: 3 * model.masses.len(),
                got: fc.len(),
            });
        }
        let jac = autodiff::jacobian(|qs| model.chart.eval_d1(qs), q.as_slice())?;
        for i in 0..n {
            let mut acc = 0.0;
            for (c, fcc) in fc.iter().enumerate() {
                acc += fcc * jac[(c, i)];
            }
            f[i] += acc;
        }
    }
    Ok(f)
}

/// Linear constraints in implicit form `Φ(q) q̇ = 0` with `Φ ∈ ℝ^{k×n}` of
/// full row rank.
#[derive(Clone)]
pub struct ImplicitLinearConstraints {
    pub phi: Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>,
}

/// Solve an implicit linear constraint matrix for an explicit partition.
///
/// Returns a coordinate permutation (original indices; independent coordinates
/// first, dependent last, each block in ascending order) and the coefficient
/// matrix `A(q)` expressing dependent velocities in terms of independent ones.
/// The dependent block is chosen by column-pivoted elimination, so a
/// well-conditioned `k×k` block ends up last.
pub fn implicit_to_explicit(
    imp: &ImplicitLinearConstraints,
    q: &[f64],
) -> Result<(Vec<usize>, DMatrix<f64>)> {
    let phi = (imp.phi)(q);
    let k = phi.nrows();
    let n = phi.ncols();
    if k == 0 || k >= n {
        return Err(Error::ModelInvalid(format!(
            "implicit constraint matrix must be k x n with 1 <= k < n, got {k} x {n}"
        )));
    }
    let scale = phi.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale;

    // Column-pivoted elimination; the pivot columns become the dependent block.
    let mut work = phi.clone();
    let mut pivot_cols: Vec<usize> = Vec::with_capacity(k);
    for step in 0..k {
        let mut best = (0usize, 0usize, -1.0_f64);
        for row in step..k {
            for col in 0..n {
                if pivot_cols.contains(&col) {
                    continue;
                }
                let v = work[(row, col)].abs();
                if v > best.2 {
                    best = (row, col, v);
                }
            }
        }
        if !(best.2 > tol) {
            return Err(Error::SingularConstraints {
                rank: step,
                expected: k,
            });
        }
        let (prow, pcol, _) = best;
        work.swap_rows(step, prow);
        pivot_cols.push(pcol);
        for row in 0..k {
            if row == step {
                continue;
            }
            let factor = work[(row, pcol)] / work[(step, pcol)];
            for col in 0..n {
                let v = work[(step, col)] * factor;
                work[(row, col)] -= v;
            }
        }
    }
    pivot_cols.sort_unstable();
    let independent: Vec<usize> = (0..n).filter(|c| !pivot_cols.contains(c)).collect();

    let phi_dep = phi.select_columns(pivot_cols.iter());
    let phi_ind = phi.select_columns(independent.iter());
    // Dependent velocities w solve Φ_D w = -Φ_I u, so A = -Φ_D⁻¹ Φ_I.
    let lu = phi_dep.lu();
    let mut a = DMatrix::zeros(k, n - k);
    for col in 0..independent.len() {
        let rhs = -phi_ind.column(col).clone_owned();
        let sol = lu.solve(&rhs).ok_or(Error::SingularConstraints {
            rank: k.saturating_sub(1),
            expected: k,
        })?;
        a.set_column(col, &sol);
    }

    let mut perm = independent;
    perm.extend(pivot_cols);
    Ok((perm, a))
}

/// First and second partial derivatives of the constraint functions at a
/// state, with the blocks every assembly needs.
pub(crate) struct AlphaDerivs {
    /// `α_ν(q, u)`.
    pub value: Vec<f64>,
    /// `∂α_ν/∂u_i`, `k×m`.
    pub du: DMatrix<f64>,
    /// `∂α_ν/∂q_j`, `k×n`.
    pub dq: DMatrix<f64>,
    /// Per constraint: `∂²α_ν/∂u_i∂u_r`, `m×m`.
    pub huu: Vec<DMatrix<f64>>,
    /// Per constraint: `∂²α_ν/∂u_i∂q_j`, `m×n`.
    pub huq: Vec<DMatrix<f64>>,
}

pub(crate) fn alpha_derivs(model: &SystemModel, state: &GeneralizedState) -> Result<AlphaDerivs> {
    let (n, m, k) = (model.n(), model.m(), model.k());
    let d = n + m;
    autodiff::clear_fault();
    let mut seeds: Vec<D2> = Vec::with_capacity(d);
    for (i, &qi) in state.q.iter().enumerate() {
        seeds.push(Dual2::var(qi, i, d));
    }
    for (i, &ui) in state.u.iter().enumerate() {
        seeds.push(Dual2::var(ui, n + i, d));
    }
    let alphas = model.constraints.alpha::<D2>(&seeds[..n], &seeds[n..]);

    let mut value = Vec::with_capacity(k);
    let mut du = DMatrix::zeros(k, m);
    let mut dq = DMatrix::zeros(k, n);
    let mut huu = Vec::with_capacity(k);
    let mut huq = Vec::with_capacity(k);
    for (nu, a) in alphas.into_iter().enumerate() {
        let a = if a.dx.is_empty() {
            Dual2::constant(a.re, d)
        } else {
            a
        };
        value.push(a.re);
        for j in 0..n {
            dq[(nu, j)] = a.dx[j];
        }
        for i in 0..m {
            du[(nu, i)] = a.dx[n + i];
        }
        let mut hu = DMatrix::zeros(m, m);
        for i in 0..m {
            for r in 0..m {
                hu[(i, r)] = *a.hess(n + i, n + r);
            }
        }
        let mut hq = DMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                hq[(i, j)] = *a.hess(n + i, j);
            }
        }
        huu.push(hu);
        huq.push(hq);
    }
    let fault = autodiff::take_fault();
    if let Some((primitive, argument)) = fault {
        return Err(Error::AdDomain {
            primitive,
            argument,
        });
    }
    let finite = value.iter().all(|v| v.is_finite())
        && du.iter().all(|v| v.is_finite())
        && dq.iter().all(|v| v.is_finite())
        && huu.iter().all(|h| h.iter().all(|v| v.is_finite()))
        && huq.iter().all(|h| h.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::NonFinite {
            context: "constraint derivatives",
        });
    }
    Ok(AlphaDerivs {
        value,
        du,
        dq,
        huu,
        huq,
    })
}

/// Jacobian of every linear coefficient with respect to `q`:
/// returns `A(q)` and the rank-3 array `∂A_{νi}/∂q_j`.
pub(crate) fn linear_coeff_derivs(
    model: &SystemModel,
    q: &[f64],
) -> Result<(DMatrix<f64>, Tensor3)> {
    let ConstraintSet::Linear(l) = &model.constraints else {
        return Err(Error::UnsupportedFormulation {
            formulation: "beta coefficients",
            detail: "the β-form applies to linear constraint sets only",
        });
    };
    let (k, m, n) = (model.k(), model.m(), model.n());
    autodiff::clear_fault();
    let seeds = autodiff::seed1(q);
    let rows = l.coeffs_d1(&seeds);
    let mut a = DMatrix::zeros(k, m);
    let mut da = Tensor3::zeros(k, m, n);
    for (nu, row) in rows.iter().enumerate() {
        for (i, entry) in row.iter().enumerate() {
            a[(nu, i)] = entry.re;
            if entry.dx.is_empty() {
                continue;
            }
            for j in 0..n {
                da.set(nu, i, j, entry.dx[j]);
            }
        }
    }
    if let Some((primitive, argument)) = autodiff::take_fault() {
        return Err(Error::AdDomain {
            primitive,
            argument,
        });
    }
    Ok((a, da))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn full_velocity_substitutes_linear_constraint() {
        let s = scenarios::s1_free_linear();
        let state = GeneralizedState::new(vec![0.0, 0.0, 0.0], vec![2.0, 1.0]);
        let v = full_velocity(&s.model, &state).unwrap();
        assert_eq!(v.as_slice(), &[2.0, 1.0, 1.0]);
    }

    #[test]
    fn full_velocity_substitutes_quadratic_constraint() {
        let s = scenarios::s3_nonlinear_quadratic(0.0);
        let state = GeneralizedState::new(vec![0.0, 0.0, 0.0], vec![3.0, 0.0]);
        let v = full_velocity(&s.model, &state).unwrap();
        assert_eq!(v.as_slice(), &[3.0, 0.0, 9.0]);
    }

    #[test]
    fn full_velocity_at_rest_vanishes_for_linear_sets() {
        for s in [scenarios::s1_free_linear(), scenarios::s5_integrable_nonconstant()] {
            let state = GeneralizedState::new(vec![0.3, -0.2, 0.9], vec![0.0, 0.0]);
            let v = full_velocity(&s.model, &state).unwrap();
            assert_eq!(v.as_slice(), &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn residual_vanishes_on_reconstructed_velocity() {
        let s = scenarios::s3_nonlinear_quadratic(1.0);
        let state = GeneralizedState::new(vec![0.1, 0.2, 0.3], vec![1.7, -0.4]);
        let v = full_velocity(&s.model, &state).unwrap();
        let r = constraint_residual(&s.model, &state.q, &v).unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn residual_measures_violation() {
        let s1 = scenarios::s1_free_linear();
        let q = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let qdot = DVector::from_vec(vec![2.0, 1.0, 1.5]);
        let r = constraint_residual(&s1.model, &q, &qdot).unwrap();
        assert_relative_eq!(r[0], 0.5, epsilon = 1e-15);

        let s3 = scenarios::s3_nonlinear_quadratic(0.0);
        let qdot = DVector::from_vec(vec![3.0, 0.0, 9.01]);
        let r = constraint_residual(&s3.model, &q, &qdot).unwrap();
        assert_relative_eq!(r[0], 0.01, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = scenarios::s1_free_linear();
        let state = GeneralizedState::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        assert!(matches!(
            full_velocity(&s.model, &state),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn implicit_single_row_solves_to_explicit() {
        let imp = ImplicitLinearConstraints {
            phi: Arc::new(|_q: &[f64]| DMatrix::from_row_slice(1, 3, &[0.5, 0.0, -1.0])),
        };
        let (perm, a) = implicit_to_explicit(&imp, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(perm, vec![0, 1, 2]);
        assert_relative_eq!(a[(0, 0)], 0.5, epsilon = 1e-15);
        assert_relative_eq!(a[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn implicit_sleigh_row_picks_lateral_coordinate() {
        // -sinθ q̇_x + cosθ q̇_y = 0 over coordinates (x, y, θ), at θ = 0.
        let theta = 0.0_f64;
        let imp = ImplicitLinearConstraints {
            phi: Arc::new(move |_q: &[f64]| {
                DMatrix::from_row_slice(1, 3, &[-theta.sin(), theta.cos(), 0.0])
            }),
        };
        let (perm, a) = implicit_to_explicit(&imp, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(perm, vec![0, 2, 1], "dependent coordinate must be y");
        assert_eq!(a[(0, 0)], 0.0);
        assert_eq!(a[(0, 1)], 0.0);
    }

    #[test]
    fn implicit_duplicate_rows_are_singular() {
        let imp = ImplicitLinearConstraints {
            phi: Arc::new(|_q: &[f64]| {
                DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0])
            }),
        };
        let err = implicit_to_explicit(&imp, &[0.0; 3]).unwrap_err();
        match err {
            Error::SingularConstraints { rank, expected } => {
                assert_eq!(rank, 1);
                assert_eq!(expected, 2);
            }
            other => panic!("expected SingularConstraints, got {other:?}"),
        }
    }

    #[test]
    fn implicit_round_trip_annihilates_admissible_velocities() {
        // Sleigh lateral constraint at a batch of random configurations: the
        // reconstructed Φ' = (A | -I) in permuted coordinates must annihilate
        // every completed velocity, and so must the original Φ.
        let imp = ImplicitLinearConstraints {
            phi: Arc::new(|q: &[f64]| {
                // coordinates (x, y, θ)
                DMatrix::from_row_slice(1, 3, &[-q[2].sin(), q[2].cos(), 0.0])
            }),
        };
        let sleigh = scenarios::s2_chaplygin_sleigh(1.0, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let theta = rng.gen_range(-1.2..1.2);
            let q_model = vec![rng.gen_range(-1.0..1.0), theta, rng.gen_range(-1.0..1.0)];
            let u = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let state = GeneralizedState::new(q_model.clone(), u);
            let v = full_velocity(&sleigh.model, &state).unwrap();

            // implicit chart orders coordinates (x, y, θ); model uses (x, θ, y)
            let q_imp = [q_model[0], q_model[2], q_model[1]];
            let (perm, a) = implicit_to_explicit(&imp, &q_imp).unwrap();
            assert_eq!(perm, vec![0, 2, 1]);
            // model full velocity in implicit coordinate order
            let v_imp = [v[0], v[2], v[1]];
            // permuted order: independent (x, θ), dependent (y)
            let w = v_imp[perm[2]];
            let recon = a[(0, 0)] * v_imp[perm[0]] + a[(0, 1)] * v_imp[perm[1]];
            assert!((w - recon).abs() < 1e-12);
            let phi = (imp.phi)(&q_imp);
            let dot = phi[(0, 0)] * v_imp[0] + phi[(0, 1)] * v_imp[1] + phi[(0, 2)] * v_imp[2];
            assert!(dot.abs() < 1e-12);
        }
    }

    #[test]
    fn linear_path_agrees_with_nonlinear_wrapper() {
        // Evaluate a genuinely q-dependent linear set both as coefficients and
        // through an equivalent nonlinear map.
        struct ProductAlpha;
        impl ConstraintMap for ProductAlpha {
            fn count(&self) -> usize {
                1
            }
            fn eval<S: Real>(&self, q: &[S], u: &[S]) -> Vec<S> {
                vec![q[1].clone() * u[0].clone() + q[0].clone() * u[1].clone()]
            }
        }
        let lin = scenarios::s5_integrable_nonconstant().model;
        let nl = SystemModel::new(
            vec![1.0],
            scenarios::IdentityChart { n: 3 },
            ConstraintSet::nonlinear(ProductAlpha),
            ForceModel::none(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let q = vec![
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let u = vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let a = lin.constraints().alpha::<f64>(&q, &u);
            let b = nl.constraints().alpha::<f64>(&q, &u);
            assert!((a[0] - b[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn generalized_forces_project_cartesian_gravity() {
        // Uniform Cartesian gravity on both sleigh particles must match the
        // hand-projected generalized force.
        let g = 9.81;
        let model = SystemModel::new(
            vec![1.5, 0.5],
            scenarios::SleighChart { d: 2.0 },
            ConstraintSet::linear(scenarios::SleighCoeffs),
            ForceModel::none().with_cartesian(move |_q, _t| {
                vec![0.0, -1.5 * g, 0.0, 0.0, -0.5 * g, 0.0]
            }),
        )
        .unwrap();
        let q = DVector::from_vec(vec![0.4, 0.9, -0.3]);
        let qd = DVector::zeros(3);
        let f = generalized_forces(&model, &q, &qd, 0.0).unwrap();
        // ∂y₁/∂x = 0, ∂y₂/∂x = 0 → F_x = 0; F_θ = -m₂ g d cosθ; F_y = -(m₁+m₂) g
        assert_relative_eq!(f[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(f[1], -0.5 * g * 2.0 * 0.9_f64.cos(), epsilon = 1e-12);
        assert_relative_eq!(f[2], -2.0 * g, epsilon = 1e-12);
    }
}
