//! Forward-mode automatic differentiation on dual numbers.
//!
//! Two carrier types are provided: [`Dual1`] propagates a value together with
//! first partials against a fixed seed basis, [`Dual2`] additionally carries a
//! packed symmetric Hessian. Both are generic over the underlying scalar, so
//! they nest: `Dual1<Dual2<f64>>` evaluates a directional derivative whose
//! coefficients are themselves second-order jets. The engine uses that nesting
//! to differentiate kinetic energies straight through a configuration chart.
//!
//! All rules are exact chain rules; nothing is finite-differenced. The Hessian
//! of [`Dual2`] is stored as a packed lower triangle, so symmetry is structural
//! rather than enforced after the fact.

use crate::error::{Error, Primitive, Result};
use nalgebra::{DMatrix, DVector};
use std::cell::Cell;
use std::ops::{Add, Div, Mul, Neg, Sub};

thread_local! {
    static FAULT: Cell<Option<(Primitive, f64)>> = const { Cell::new(None) };
}

/// Record a domain fault. Only the first fault of an evaluation is kept.
fn record_fault(primitive: Primitive, argument: f64) {
    FAULT.with(|slot| {
        if slot.get().is_none() {
            slot.set(Some((primitive, argument)));
        }
    });
}

/// Clear the fault slot before starting a fresh evaluation.
pub fn clear_fault() {
    FAULT.with(|slot| slot.set(None));
}

/// Take the pending fault, if any, leaving the slot clear.
pub fn take_fault() -> Option<(Primitive, f64)> {
    FAULT.with(|slot| slot.take())
}

fn fault_error(fault: Option<(Primitive, f64)>, context: &'static str) -> Error {
    match fault {
        Some((primitive, argument)) => Error::AdDomain {
            primitive,
            argument,
        },
        None => Error::NonFinite { context },
    }
}

/// Scalar usable in generic chart, constraint and energy expressions.
///
/// Implemented by `f64` and by the dual types over any `Real`, which is what
/// makes nested differentiation possible.
pub trait Real:
    Clone
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Underlying point value, with all derivative structure stripped.
    fn primal(&self) -> f64;
    /// Multiplication by a plain constant.
    fn scale(&self, c: f64) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn tan(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn powi(&self, n: i32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn primal(&self) -> f64 {
        *self
    }
    fn scale(&self, c: f64) -> Self {
        self * c
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn tan(&self) -> Self {
        if f64::cos(*self) == 0.0 {
            record_fault(Primitive::Tan, *self);
        }
        f64::tan(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        if *self <= 0.0 {
            record_fault(Primitive::Ln, *self);
        }
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        if *self < 0.0 {
            record_fault(Primitive::Sqrt, *self);
        }
        f64::sqrt(*self)
    }
    fn powi(&self, n: i32) -> Self {
        if *self == 0.0 && n < 0 {
            record_fault(Primitive::PowI, *self);
        }
        f64::powi(*self, n)
    }
}

/// First-order dual number: value plus partials against `d` seed directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual1<S: Real> {
    pub re: S,
    pub dx: Vec<S>,
}

impl<S: Real> Dual1<S> {
    pub fn constant(re: S, seeds: usize) -> Self {
        Dual1 {
            re,
            dx: vec![S::zero(); seeds],
        }
    }

    /// Variable seeded on basis direction `idx` of `seeds`.
    pub fn var(re: S, idx: usize, seeds: usize) -> Self {
        let mut dx = vec![S::zero(); seeds];
        dx[idx] = S::one();
        Dual1 { re, dx }
    }

    /// Variable with an arbitrary seed vector (used for directional nesting).
    pub fn with_seed(re: S, dx: Vec<S>) -> Self {
        Dual1 { re, dx }
    }

    fn seeds(&self) -> usize {
        self.dx.len()
    }

    /// f(self) given f(re) and f'(re).
    fn chain(&self, f: S, df: S) -> Self {
        Dual1 {
            re: f,
            dx: self.dx.iter().map(|d| df.clone() * d.clone()).collect(),
        }
    }
}

/// Broadcast zero-seed constants before combining two duals.
///
/// `Real::from_f64` cannot know the ambient seed dimension, so constants start
/// seedless and are widened here the first time they meet a seeded value.
fn broadcast1<S: Real>(a: Dual1<S>, b: Dual1<S>) -> (Dual1<S>, Dual1<S>) {
    match (a.dx.is_empty(), b.dx.is_empty()) {
        (true, false) => {
            let n = b.dx.len();
            (Dual1::constant(a.re, n), b)
        }
        (false, true) => {
            let n = a.dx.len();
            let bc = Dual1::constant(b.re, n);
            (a, bc)
        }
        _ => (a, b),
    }
}

impl<S: Real> Add for Dual1<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (a, b) = broadcast1(self, rhs);
        Dual1 {
            re: a.re + b.re,
            dx: a.dx.into_iter().zip(b.dx).map(|(x, y)| x + y).collect(),
        }
    }
}

impl<S: Real> Sub for Dual1<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let (a, b) = broadcast1(self, rhs);
        Dual1 {
            re: a.re - b.re,
            dx: a.dx.into_iter().zip(b.dx).map(|(x, y)| x - y).collect(),
        }
    }
}

impl<S: Real> Mul for Dual1<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = broadcast1(self, rhs);
        let dx = a
            .dx
            .iter()
            .zip(b.dx.iter())
            .map(|(x, y)| a.re.clone() * y.clone() + x.clone() * b.re.clone())
            .collect();
        Dual1 {
            re: a.re * b.re,
            dx,
        }
    }
}

impl<S: Real> Div for Dual1<S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let (a, b) = broadcast1(self, rhs);
        if b.re.primal() == 0.0 {
            record_fault(Primitive::Div, b.re.primal());
        }
        let q = a.re / b.re.clone();
        let dx = a
            .dx
            .iter()
            .zip(b.dx.iter())
            .map(|(x, y)| (x.clone() - q.clone() * y.clone()) / b.re.clone())
            .collect();
        Dual1 { re: q, dx }
    }
}

impl<S: Real> Neg for Dual1<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual1 {
            re: -self.re,
            dx: self.dx.into_iter().map(|d| -d).collect(),
        }
    }
}

impl<S: Real> Real for Dual1<S> {
    fn from_f64(v: f64) -> Self {
        // Seed dimension is fixed per evaluation; constants created through
        // `from_f64` carry no seeds and are broadcast on first combination.
        Dual1 {
            re: S::from_f64(v),
            dx: Vec::new(),
        }
    }
    fn primal(&self) -> f64 {
        self.re.primal()
    }
    fn scale(&self, c: f64) -> Self {
        Dual1 {
            re: self.re.scale(c),
            dx: self.dx.iter().map(|d| d.scale(c)).collect(),
        }
    }
    fn sin(&self) -> Self {
        self.chain(self.re.sin(), self.re.cos())
    }
    fn cos(&self) -> Self {
        self.chain(self.re.cos(), -self.re.sin())
    }
    fn tan(&self) -> Self {
        let t = self.re.tan();
        let sec2 = S::one() + t.clone() * t.clone();
        self.chain(t, sec2)
    }
    fn exp(&self) -> Self {
        let e = self.re.exp();
        self.chain(e.clone(), e)
    }
    fn ln(&self) -> Self {
        self.chain(self.re.ln(), S::one() / self.re.clone())
    }
    fn sqrt(&self) -> Self {
        let s = self.re.sqrt();
        let ds = S::one() / s.clone().scale(2.0);
        self.chain(s, ds)
    }
    fn powi(&self, n: i32) -> Self {
        match n {
            0 => Dual1::constant(S::one(), self.seeds()),
            1 => self.clone(),
            _ => {
                let f = self.re.powi(n);
                let df = self.re.powi(n - 1).scale(n as f64);
                self.chain(f, df)
            }
        }
    }
}

/// Second-order dual number: value, gradient and packed symmetric Hessian.
///
/// The Hessian stores only the lower triangle (`i >= j`), so the symmetric
/// matrix returned by [`hessian`] is symmetric by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual2<S: Real> {
    pub re: S,
    pub dx: Vec<S>,
    /// Packed lower triangle, entry `(i, j)` with `i >= j` at `i(i+1)/2 + j`.
    pub dxx: Vec<S>,
}

#[inline]
pub(crate) fn packed_index(i: usize, j: usize) -> usize {
    let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
    hi * (hi + 1) / 2 + lo
}

impl<S: Real> Dual2<S> {
    pub fn constant(re: S, seeds: usize) -> Self {
        Dual2 {
            re,
            dx: vec![S::zero(); seeds],
            dxx: vec![S::zero(); seeds * (seeds + 1) / 2],
        }
    }

    pub fn var(re: S, idx: usize, seeds: usize) -> Self {
        let mut out = Self::constant(re, seeds);
        out.dx[idx] = S::one();
        out
    }

    fn seeds(&self) -> usize {
        self.dx.len()
    }

    pub fn hess(&self, i: usize, j: usize) -> &S {
        &self.dxx[packed_index(i, j)]
    }

    /// f(self) given f, f', f'' at the inner value.
    fn chain(&self, f: S, df: S, ddf: S) -> Self {
        let n = self.seeds();
        let dx: Vec<S> = self
            .dx
            .iter()
            .map(|g| df.clone() * g.clone())
            .collect();
        let mut dxx = Vec::with_capacity(self.dxx.len());
        for i in 0..n {
            for j in 0..=i {
                dxx.push(
                    df.clone() * self.hess(i, j).clone()
                        + ddf.clone() * self.dx[i].clone() * self.dx[j].clone(),
                );
            }
        }
        Dual2 { re: f, dx, dxx }
    }
}

fn broadcast2<S: Real>(a: Dual2<S>, b: Dual2<S>) -> (Dual2<S>, Dual2<S>) {
    match (a.dx.is_empty(), b.dx.is_empty()) {
        (true, false) => {
            let n = b.dx.len();
            (Dual2::constant(a.re, n), b)
        }
        (false, true) => {
            let n = a.dx.len();
            let bc = Dual2::constant(b.re, n);
            (a, bc)
        }
        _ => (a, b),
    }
}

impl<S: Real> Add for Dual2<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let (a, b) = broadcast2(self, rhs);
        Dual2 {
            re: a.re + b.re,
            dx: a.dx.into_iter().zip(b.dx).map(|(x, y)| x + y).collect(),
            dxx: a.dxx.into_iter().zip(b.dxx).map(|(x, y)| x + y).collect(),
        }
    }
}

impl<S: Real> Sub for Dual2<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let (a, b) = broadcast2(self, rhs);
        Dual2 {
            re: a.re - b.re,
            dx: a.dx.into_iter().zip(b.dx).map(|(x, y)| x - y).collect(),
            dxx: a.dxx.into_iter().zip(b.dxx).map(|(x, y)| x - y).collect(),
        }
    }
}

impl<S: Real> Mul for Dual2<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = broadcast2(self, rhs);
        let n = a.seeds();
        let dx: Vec<S> = a
            .dx
            .iter()
            .zip(b.dx.iter())
            .map(|(x, y)| a.re.clone() * y.clone() + x.clone() * b.re.clone())
            .collect();
        let mut dxx = Vec::with_capacity(a.dxx.len());
        for i in 0..n {
            for j in 0..=i {
                dxx.push(
                    a.re.clone() * b.hess(i, j).clone()
                        + a.dx[i].clone() * b.dx[j].clone()
                        + a.dx[j].clone() * b.dx[i].clone()
                        + a.hess(i, j).clone() * b.re.clone(),
                );
            }
        }
        Dual2 {
            re: a.re * b.re,
            dx,
            dxx,
        }
    }
}

impl<S: Real> Div for Dual2<S> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let (a, b) = broadcast2(self, rhs);
        if b.re.primal() == 0.0 {
            record_fault(Primitive::Div, b.re.primal());
        }
        let n = a.seeds();
        let q = a.re / b.re.clone();
        let dq: Vec<S> = a
            .dx
            .iter()
            .zip(b.dx.iter())
            .map(|(x, y)| (x.clone() - q.clone() * y.clone()) / b.re.clone())
            .collect();
        let mut dxx = Vec::with_capacity(a.dxx.len());
        for i in 0..n {
            for j in 0..=i {
                let num = a.hess(i, j).clone()
                    - q.clone() * b.hess(i, j).clone()
                    - dq[i].clone() * b.dx[j].clone()
                    - dq[j].clone() * b.dx[i].clone();
                dxx.push(num / b.re.clone());
            }
        }
        Dual2 { re: q, dx: dq, dxx }
    }
}

impl<S: Real> Neg for Dual2<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual2 {
            re: -self.re,
            dx: self.dx.into_iter().map(|x| -x).collect(),
            dxx: self.dxx.into_iter().map(|x| -x).collect(),
        }
    }
}

impl<S: Real> Real for Dual2<S> {
    fn from_f64(v: f64) -> Self {
        Dual2 {
            re: S::from_f64(v),
            dx: Vec::new(),
            dxx: Vec::new(),
        }
    }
    fn primal(&self) -> f64 {
        self.re.primal()
    }
    fn scale(&self, c: f64) -> Self {
        Dual2 {
            re: self.re.scale(c),
            dx: self.dx.iter().map(|x| x.scale(c)).collect(),
            dxx: self.dxx.iter().map(|x| x.scale(c)).collect(),
        }
    }
    fn sin(&self) -> Self {
        let s = self.re.sin();
        self.chain(s.clone(), self.re.cos(), -s)
    }
    fn cos(&self) -> Self {
        let c = self.re.cos();
        self.chain(c.clone(), -self.re.sin(), -c)
    }
    fn tan(&self) -> Self {
        let t = self.re.tan();
        let sec2 = S::one() + t.clone() * t.clone();
        let ddf = t.clone().scale(2.0) * sec2.clone();
        self.chain(t, sec2, ddf)
    }
    fn exp(&self) -> Self {
        let e = self.re.exp();
        self.chain(e.clone(), e.clone(), e)
    }
    fn ln(&self) -> Self {
        let df = S::one() / self.re.clone();
        let ddf = -(df.clone() * df.clone());
        self.chain(self.re.ln(), df, ddf)
    }
    fn sqrt(&self) -> Self {
        let s = self.re.sqrt();
        let df = S::one() / s.clone().scale(2.0);
        let ddf = -(df.clone() * df.clone() * df.clone()).scale(0.5);
        // d²/dx² sqrt = -1/(4 x^{3/2}) = -(1/(2 sqrt x))³ / 2
        self.chain(s, df, ddf)
    }
    fn powi(&self, n: i32) -> Self {
        match n {
            0 => Dual2::constant(S::one(), self.seeds()),
            1 => self.clone(),
            _ => {
                let f = self.re.powi(n);
                let df = self.re.powi(n - 1).scale(n as f64);
                let ddf = self.re.powi(n - 2).scale((n as f64) * (n as f64 - 1.0));
                self.chain(f, df, ddf)
            }
        }
    }
}

// Dual1 ops accept zero-seed constants as well; route through the broadcast
// helper so expressions like `x + S::from_f64(2.0)` behave.
impl<S: Real> Dual1<S> {
    fn fix(self, seeds: usize) -> Self {
        if self.dx.is_empty() && seeds > 0 {
            Dual1::constant(self.re, seeds)
        } else {
            self
        }
    }
}

/// Seed a point for first-order differentiation of an `d`-variable function.
pub fn seed1(x: &[f64]) -> Vec<Dual1<f64>> {
    let d = x.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| Dual1::var(v, i, d))
        .collect()
}

/// Seed a point for second-order differentiation of an `d`-variable function.
pub fn seed2(x: &[f64]) -> Vec<Dual2<f64>> {
    let d = x.len();
    x.iter()
        .enumerate()
        .map(|(i, &v)| Dual2::var(v, i, d))
        .collect()
}

/// Value and exact gradient of a scalar function at `x`.
pub fn gradient<F>(f: F, x: &[f64]) -> Result<(f64, DVector<f64>)>
where
    F: FnOnce(&[Dual1<f64>]) -> Dual1<f64>,
{
    clear_fault();
    let out = f(&seed1(x)).fix(x.len());
    let value = out.re;
    let grad = DVector::from_vec(out.dx);
    let fault = take_fault();
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) || fault.is_some() {
        return Err(fault_error(fault, "gradient evaluation"));
    }
    Ok((value, grad))
}

/// Value, gradient and bitwise-symmetric Hessian of a scalar function at `x`.
pub fn hessian<F>(f: F, x: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>)>
where
    F: FnOnce(&[Dual2<f64>]) -> Dual2<f64>,
{
    clear_fault();
    let d = x.len();
    let mut out = f(&seed2(x));
    if out.dx.is_empty() {
        out = Dual2::constant(out.re, d);
    }
    let value = out.re;
    let grad = DVector::from_vec(out.dx.clone());
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            let v = out.dxx[packed_index(i, j)];
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    let finite =
        value.is_finite() && grad.iter().all(|g| g.is_finite()) && hess.iter().all(|h| h.is_finite());
    let fault = take_fault();
    if !finite || fault.is_some() {
        return Err(fault_error(fault, "hessian evaluation"));
    }
    Ok((value, grad, hess))
}

/// Exact Jacobian of a vector-valued function at `x` (row `i` is `∇F_i`).
pub fn jacobian<F>(f: F, x: &[f64]) -> Result<DMatrix<f64>>
where
    F: FnOnce(&[Dual1<f64>]) -> Vec<Dual1<f64>>,
{
    clear_fault();
    let d = x.len();
    let rows = f(&seed1(x));
    let mut jac = DMatrix::zeros(rows.len(), d);
    for (i, row) in rows.iter().enumerate() {
        let row = row.clone().fix(d);
        for j in 0..d {
            jac[(i, j)] = row.dx[j];
        }
    }
    let fault = take_fault();
    if jac.iter().any(|v| !v.is_finite()) || fault.is_some() {
        return Err(fault_error(fault, "jacobian evaluation"));
    }
    Ok(jac)
}
