//! Verification utilities: central finite differences, a randomized corpus of
//! smooth expression trees for exercising the AD kernel, and a reference
//! integrator for unconstrained Lagrangian systems.
//!
//! These are deliberately independent of the assembly code paths they are used
//! to check: finite differences only ever see closures over plain `f64`, and
//! the reference integrator builds its accelerations from the geometry tensors
//! of a bare chart.

use crate::autodiff::Real;
use crate::error::Result;
use crate::geometry::chart_geometry;
use crate::model::Chart;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central-difference gradient with per-coordinate step `h·max(1, |x_i|)`.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut grad = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let hi = h * x[i].abs().max(1.0);
        xp[i] = x[i] + hi;
        let fp = f(&xp);
        xp[i] = x[i] - hi;
        let fm = f(&xp);
        xp[i] = x[i];
        grad.push((fp - fm) / (2.0 * hi));
    }
    grad
}

/// Central difference of one component of a vector field:
/// `∂(F_comp)/∂x_j` with step `h·max(1, |x_j|)`.
pub fn fd_entry_of_gradient(
    f: &dyn Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    comp: usize,
    j: usize,
    h: f64,
) -> f64 {
    let hj = h * x[j].abs().max(1.0);
    let mut xp = x.to_vec();
    xp[j] = x[j] + hj;
    let fp = f(&xp)[comp];
    xp[j] = x[j] - hj;
    let fm = f(&xp)[comp];
    (fp - fm) / (2.0 * hj)
}

/// Scale-aware relative discrepancy used by the derivative comparisons.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Random smooth scalar function: an expression tree over the supported
/// primitives, paired with an evaluation point at a safe distance from every
/// primitive's domain boundary.
#[derive(Debug, Clone)]
pub enum Expr {
    Var(usize),
    Const(f64),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    PowI(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Tan(Box<Expr>),
    Exp(Box<Expr>),
    Ln(Box<Expr>),
    Sqrt(Box<Expr>),
}

impl Expr {
    pub fn eval<S: Real>(&self, x: &[S]) -> S {
        match self {
            Expr::Var(i) => x[*i].clone(),
            Expr::Const(c) => S::from_f64(*c),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::PowI(a, n) => a.eval(x).powi(*n),
            Expr::Sin(a) => a.eval(x).sin(),
            Expr::Cos(a) => a.eval(x).cos(),
            Expr::Tan(a) => a.eval(x).tan(),
            Expr::Exp(a) => a.eval(x).exp(),
            Expr::Ln(a) => a.eval(x).ln(),
            Expr::Sqrt(a) => a.eval(x).sqrt(),
        }
    }

    /// Evaluate at `x` while enforcing a safety margin around each primitive's
    /// domain boundary, so finite differencing near `x` stays well-posed.
    fn eval_guarded(&self, x: &[f64], margin: f64) -> Option<f64> {
        let v = match self {
            Expr::Var(i) => x[*i],
            Expr::Const(c) => *c,
            Expr::Add(a, b) => a.eval_guarded(x, margin)? + b.eval_guarded(x, margin)?,
            Expr::Sub(a, b) => a.eval_guarded(x, margin)? - b.eval_guarded(x, margin)?,
            Expr::Mul(a, b) => a.eval_guarded(x, margin)? * b.eval_guarded(x, margin)?,
            Expr::Div(a, b) => {
                let d = b.eval_guarded(x, margin)?;
                if d.abs() < margin {
                    return None;
                }
                a.eval_guarded(x, margin)? / d
            }
            Expr::PowI(a, n) => {
                let v = a.eval_guarded(x, margin)?;
                if *n < 0 && v.abs() < margin {
                    return None;
                }
                v.powi(*n)
            }
            Expr::Sin(a) => a.eval_guarded(x, margin)?.sin(),
            Expr::Cos(a) => a.eval_guarded(x, margin)?.cos(),
            Expr::Tan(a) => {
                let v = a.eval_guarded(x, margin)?;
                if v.cos().abs() < margin {
                    return None;
                }
                v.tan()
            }
            Expr::Exp(a) => {
                let v = a.eval_guarded(x, margin)?;
                if v > 8.0 {
                    return None;
                }
                v.exp()
            }
            Expr::Ln(a) => {
                let v = a.eval_guarded(x, margin)?;
                if v < margin {
                    return None;
                }
                v.ln()
            }
            Expr::Sqrt(a) => {
                let v = a.eval_guarded(x, margin)?;
                if v < margin {
                    return None;
                }
                v.sqrt()
            }
        };
        if v.is_finite() && v.abs() < 1e6 {
            Some(v)
        } else {
            None
        }
    }
}

fn random_expr(rng: &mut ChaCha8Rng, dim: usize, depth: usize) -> Expr {
    if depth == 0 || rng.gen_bool(0.25) {
        return if rng.gen_bool(0.75) {
            Expr::Var(rng.gen_range(0..dim))
        } else {
            Expr::Const(rng.gen_range(-2.0..2.0))
        };
    }
    match rng.gen_range(0..11) {
        0 => Expr::Add(
            Box::new(random_expr(rng, dim, depth - 1)),
            Box::new(random_expr(rng, dim, depth - 1)),
        ),
        1 => Expr::Sub(
            Box::new(random_expr(rng, dim, depth - 1)),
            Box::new(random_expr(rng, dim, depth - 1)),
        ),
        2 => Expr::Mul(
            Box::new(random_expr(rng, dim, depth - 1)),
            Box::new(random_expr(rng, dim, depth - 1)),
        ),
        3 => Expr::Div(
            Box::new(random_expr(rng, dim, depth - 1)),
            Box::new(random_expr(rng, dim, depth - 1)),
        ),
        4 => Expr::PowI(Box::new(random_expr(rng, dim, depth - 1)), rng.gen_range(2..=4)),
        5 => Expr::Sin(Box::new(random_expr(rng, dim, depth - 1))),
        6 => Expr::Cos(Box::new(random_expr(rng, dim, depth - 1))),
        7 => Expr::Tan(Box::new(random_expr(rng, dim, depth - 1))),
        8 => Expr::Exp(Box::new(random_expr(rng, dim, depth - 1))),
        9 => Expr::Ln(Box::new(random_expr(rng, dim, depth - 1))),
        _ => Expr::Sqrt(Box::new(random_expr(rng, dim, depth - 1))),
    }
}

/// Deterministic corpus of `count` (function, point) pairs. Every pair is
/// guaranteed evaluable with a 0.15 margin from domain boundaries, which keeps
/// central differences at h ≈ 1e-6 meaningful.
pub fn random_corpus(seed: u64, count: usize) -> Vec<(Expr, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let dim = rng.gen_range(1..=3);
        let expr = random_expr(&mut rng, dim, 4);
        // several point attempts per tree before regenerating it
        for _ in 0..8 {
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            if expr.eval_guarded(&x, 0.15).is_some() {
                out.push((expr.clone(), x));
                break;
            }
        }
    }
    out
}

/// Reference trajectory of a free (unforced) Lagrangian system on a bare
/// chart: `g(q) q̈ = −ξ-quadratic(q, q̇)`, integrated by fixed-step RK4.
///
/// Used to check that reduced constrained systems with an integrable
/// constraint reproduce the substituted holonomic dynamics.
pub fn integrate_free_lagrangian<C: Chart>(
    masses: &[f64],
    chart: &C,
    q0: &[f64],
    qd0: &[f64],
    t_end: f64,
    dt: f64,
) -> Result<Vec<(f64, Vec<f64>, Vec<f64>)>> {
    let n = chart.coords();
    let accel = |q: &[f64], qd: &[f64]| -> Result<DVector<f64>> {
        let geo = chart_geometry(masses, chart, q)?;
        let mut rhs = DVector::zeros(n);
        for i in 0..n {
            let mut c = 0.0;
            for j in 0..n {
                for l in 0..n {
                    c += geo.xi.get(j, l, i) * qd[j] * qd[l];
                }
            }
            rhs[i] = -c;
        }
        crate::linalg::solve_checked(&geo.g, &rhs, |cond| {
            crate::error::Error::SingularReduction { cond }
        })
    };

    let steps = (t_end / dt).round() as usize;
    let mut q = q0.to_vec();
    let mut qd = qd0.to_vec();
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push((0.0, q.clone(), qd.clone()));
    for step in 0..steps {
        let f = |q: &[f64], qd: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
            Ok((qd.to_vec(), accel(q, qd)?.iter().copied().collect()))
        };
        let (k1q, k1v) = f(&q, &qd)?;
        let q2: Vec<f64> = q.iter().zip(&k1q).map(|(a, b)| a + 0.5 * dt * b).collect();
        let v2: Vec<f64> = qd.iter().zip(&k1v).map(|(a, b)| a + 0.5 * dt * b).collect();
        let (k2q, k2v) = f(&q2, &v2)?;
        let q3: Vec<f64> = q.iter().zip(&k2q).map(|(a, b)| a + 0.5 * dt * b).collect();
        let v3: Vec<f64> = qd.iter().zip(&k2v).map(|(a, b)| a + 0.5 * dt * b).collect();
        let (k3q, k3v) = f(&q3, &v3)?;
        let q4: Vec<f64> = q.iter().zip(&k3q).map(|(a, b)| a + dt * b).collect();
        let v4: Vec<f64> = qd.iter().zip(&k3v).map(|(a, b)| a + dt * b).collect();
        let (k4q, k4v) = f(&q4, &v4)?;
        for i in 0..n {
            q[i] += dt / 6.0 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i]);
            qd[i] += dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        samples.push(((step + 1) as f64 * dt, q.clone(), qd.clone()));
    }
    Ok(samples)
}
