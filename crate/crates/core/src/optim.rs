//! Small dense solvers used throughout the crate.
//!
//! * [`maximize_concave`] does unconstrained concave maximisation by
//!   gradient ascent on central finite differences, with a diagonal
//!   curvature scaling and Armijo backtracking. Steps that leave a norm bound
//!   and still improve are reported as [`Error::Unbounded`].
//! * [`minimize_on_simplex`] runs exponentiated-gradient (entropic mirror)
//!   descent on the probability simplex with an adaptive or `c/√k` step,
//!   stopped on the Frank–Wolfe gap.

use crate::error::{Error, Result};

/// Options for [`maximize_concave`].
#[derive(Clone, Debug)]
pub struct AscentOptions {
    /// Stop once the sup-norm of the gradient falls below this.
    pub gradient_tolerance: f64,
    pub max_iterations: usize,
    /// Relative central-difference step.
    pub fd_step: f64,
    /// Relative step for the diagonal curvature estimate.
    pub curvature_step: f64,
    /// Divergence is declared when a trial beyond this sup-norm still improves
    /// the objective.
    pub divergence_bound: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            gradient_tolerance: 1e-9,
            max_iterations: 20_000,
            fd_step: 1e-6,
            curvature_step: 1e-4,
            divergence_bound: 1e6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Ascent {
    pub point: Vec<f64>,
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// The line search could not improve further although the gradient
    /// tolerance was not met; the iterate sits at the finite-difference noise
    /// floor.
    pub stalled: bool,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Central-difference gradient of `f` at `x`; the step for coordinate `i` is
/// `rel * max(1, |x_i|)`.
pub fn fd_gradient<F>(f: &mut F, x: &[f64], rel: f64, out: &mut [f64]) -> Result<()>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = rel * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let up = f(&probe)?;
        probe[i] = x[i] - h;
        let down = f(&probe)?;
        probe[i] = x[i];
        out[i] = (up - down) / (2.0 * h);
    }
    Ok(())
}

/// Maximise a concave function starting from `start`.
pub fn maximize_concave<F>(mut f: F, start: Vec<f64>, opts: &AscentOptions) -> Result<Ascent>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let n = start.len();
    let mut x = start;
    let mut fx = f(&x)?;
    if n == 0 {
        return Ok(Ascent { point: x, value: fx, gradient_norm: 0.0, iterations: 0, stalled: false });
    }
    let mut grad = vec![0.0; n];
    let mut curv = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut probe = x.clone();

    for iter in 0..opts.max_iterations {
        fd_gradient(&mut f, &x, opts.fd_step, &mut grad)?;
        let gnorm = sup_norm(&grad);
        if gnorm <= opts.gradient_tolerance {
            return Ok(Ascent { point: x, value: fx, gradient_norm: gnorm, iterations: iter, stalled: false });
        }

        // diagonal curvature, used only as a step scaling
        for i in 0..n {
            let h = opts.curvature_step * x[i].abs().max(1.0);
            probe[i] = x[i] + h;
            let up = f(&probe)?;
            probe[i] = x[i] - h;
            let down = f(&probe)?;
            probe[i] = x[i];
            curv[i] = -(up - 2.0 * fx + down) / (h * h);
        }
        let top = curv.iter().cloned().fold(0.0, f64::max);
        let floor = 1e-12 + 1e-8 * top;
        let dir: Vec<f64> = grad
            .iter()
            .zip(&curv)
            .map(|(g, c)| g / c.max(floor))
            .collect();
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..80 {
            for i in 0..n {
                trial[i] = x[i] + step * dir[i];
            }
            let ft = f(&trial)?;
            if sup_norm(&trial) > opts.divergence_bound {
                // an overshoot that loses value is just a step too long
                if ft.is_finite() && ft > fx {
                    let d = sup_norm(&dir);
                    return Err(Error::Unbounded {
                        bound: opts.divergence_bound,
                        direction: dir.iter().map(|v| v / d).collect(),
                    });
                }
                step *= 0.5;
                continue;
            }
            if ft.is_finite() && ft >= fx + 1e-4 * step * slope && ft > fx {
                x.copy_from_slice(&trial);
                fx = ft;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Ok(Ascent { point: x, value: fx, gradient_norm: gnorm, iterations: iter, stalled: true });
        }
        probe.copy_from_slice(&x);
    }
    let mut g = vec![0.0; n];
    fd_gradient(&mut f, &x, opts.fd_step, &mut g)?;
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual: sup_norm(&g),
        best_value: fx,
        best_point: x,
    })
}

/// Step-size schedule for [`minimize_on_simplex`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepRule {
    /// `scale / √k`, halved within an iteration until the objective does
    /// not increase.
    InverseSqrt { scale: f64 },
    Constant { step: f64 },
    /// Starts at `initial`, grows by half after every accepted step and is
    /// halved after every rejected one.
    Adaptive { initial: f64 },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Adaptive { initial: 1.0 }
    }
}

#[derive(Clone, Debug)]
pub struct SimplexOptions {
    /// Target for the Frank–Wolfe gap `λ·g − min g`, an upper bound on the
    /// suboptimality of a convex objective.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub step_rule: StepRule,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { tolerance: 1e-9, max_iterations: 100_000, step_rule: StepRule::default() }
    }
}

#[derive(Clone, Debug)]
pub struct SimplexSolution {
    pub value: f64,
    pub point: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
}

const MIN_WEIGHT: f64 = 1e-300;

/// Frank–Wolfe gap `λ·g - min g`.
fn simplex_gap(lambda: &[f64], grad: &[f64]) -> f64 {
    let gmin = grad.iter().cloned().fold(f64::INFINITY, f64::min);
    lambda.iter().zip(grad).map(|(l, g)| l * (g - gmin)).sum()
}

/// Minimise a convex function over the probability simplex.
///
/// `objective(λ, grad)` returns the value and writes a gradient into `grad`;
/// the gradient only matters up to an additive constant. The start point must
/// be strictly positive and is renormalised.
pub fn minimize_on_simplex<F>(mut objective: F, start: Vec<f64>, opts: &SimplexOptions) -> Result<SimplexSolution>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = start.len();
    if n == 0 {
        return Err(Error::Invalid("empty simplex".into()));
    }
    let total: f64 = start.iter().sum();
    if !(total > 0.0) || start.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Invalid("simplex start point must be strictly positive".into()));
    }
    let mut lambda: Vec<f64> = start.iter().map(|v| v / total).collect();
    let mut grad = vec![0.0; n];
    let mut value = objective(&lambda, &mut grad)?;
    if !value.is_finite() {
        return Err(Error::Domain("objective is not finite at the start point".into()));
    }
    let mut cand = vec![0.0; n];
    let mut cand_grad = vec![0.0; n];

    let mut adaptive = match opts.step_rule {
        StepRule::Adaptive { initial } => Some(initial),
        _ => None,
    };
    let mut k = 1usize;
    let mut gap = f64::INFINITY;
    for iter in 0..opts.max_iterations {
        let gmin = grad.iter().cloned().fold(f64::INFINITY, f64::min);
        gap = simplex_gap(&lambda, &grad);
        if gap <= opts.tolerance {
            return Ok(SimplexSolution { value, point: lambda, gap, iterations: iter });
        }
        let mut halvings = 0;
        let mut eta = match opts.step_rule {
            StepRule::InverseSqrt { scale } => scale / (k as f64).sqrt(),
            StepRule::Constant { step } => step,
            StepRule::Adaptive { .. } => adaptive.unwrap_or(1.0),
        };
        loop {
            let mut z = 0.0;
            for i in 0..n {
                let w = lambda[i] * (-eta * (grad[i] - gmin)).exp();
                cand[i] = w;
                z += w;
            }
            for c in cand.iter_mut() {
                *c = (*c / z).max(MIN_WEIGHT);
            }
            let v = objective(&cand, &mut cand_grad)?;
            let slack = 1e-15 * value.abs().max(1.0);
            // Near the optimum the value stops resolving progress. By
            // convexity, a non-positive slope at the candidate along the step
            // certifies that it did not overshoot.
            let progress = adaptive.is_none()
                || v < value - slack
                || {
                    let cmin = cand_grad.iter().cloned().fold(f64::INFINITY, f64::min);
                    cand.iter().zip(&lambda).zip(&cand_grad).map(|((c, l), g)| (c - l) * (g - cmin)).sum::<f64>() <= 0.0
                };
            if v.is_finite() && v <= value + slack && progress {
                std::mem::swap(&mut lambda, &mut cand);
                std::mem::swap(&mut grad, &mut cand_grad);
                value = v;
                k += 1;
                if adaptive.is_some() {
                    adaptive = Some((1.5 * eta).min(1e8));
                }
                break;
            }
            halvings += 1;
            eta *= 0.5;
            if halvings > 60 {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: gap,
                    best_value: value,
                    best_point: lambda,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual: gap,
        best_value: value,
        best_point: lambda,
    })
}

/// Golden-section maximisation of a unimodal function on `[lo, hi]`.
pub fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Root of a function with `f(lo) ≥ 0 ≥ f(hi)` or the reverse, by
/// bisection down to `tol` (or until the floating-point midpoint stalls).
pub fn bisect<F: FnMut(f64) -> Result<f64>>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let flo = f(lo)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    let fhi = f(hi)?;
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::Domain(format!("no sign change on [{lo}, {hi}]")));
    }
    let lo_sign = flo.signum();
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
