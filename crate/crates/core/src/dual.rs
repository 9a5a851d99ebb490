//! Convex duals of valuations.
//!
//! For a valuation `π_x` the dual is `π̃_x(λ) = sup_K { π_x(K) - λ·K }`,
//! finite only when `λ` is a probability on `x+`, and `π_x` is recovered as
//! `inf_λ { λ·K + π̃_x(λ) }`. Densities are stored over `x+` in pre-order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::families::entropic::{is_probability, relative_entropy};
use crate::families::EntropicFamily;
use crate::optim::{maximize_concave, minimize_on_simplex, AscentOptions, SimplexOptions, StepRule};
use crate::tree::{CashBalance, NodeId, Tree};
use crate::valuation::{OneStep, Valuation, ValuationFamily};

/// A probability density on `x+`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualDensity {
    support: NodeId,
    values: Vec<f64>,
}

impl DualDensity {
    /// `values` over `x+` in pre-order; must be non-negative and sum to one
    /// within `1e-9`.
    pub fn new(tree: &Tree, x: NodeId, values: Vec<f64>) -> Result<Self> {
        tree.check(x)?;
        let n = tree.descendants(x).len();
        if values.len() != n {
            return Err(Error::Invalid(format!(
                "density at `{}` needs {n} entries, got {}",
                tree.label(x),
                values.len()
            )));
        }
        if !is_probability(&values, 1e-9) {
            return Err(Error::Domain(format!(
                "density at `{}` is not a probability on the subtree",
                tree.label(x)
            )));
        }
        Ok(DualDensity { support: x, values })
    }

    /// From a node map; entries outside `x+` must vanish.
    pub fn from_map(tree: &Tree, x: NodeId, map: &BTreeMap<NodeId, f64>) -> Result<Self> {
        for (&y, &v) in map {
            tree.check(y)?;
            if v != 0.0 && !tree.is_descendant(x, y) {
                return Err(Error::Domain(format!(
                    "density charges `{}` outside the subtree of `{}`",
                    tree.label(y),
                    tree.label(x)
                )));
            }
        }
        let values = tree.descendants(x).iter().map(|y| map.get(y).copied().unwrap_or(0.0)).collect();
        DualDensity::new(tree, x, values)
    }

    /// `p_{⪰x} / p̄_x`.
    pub fn reference(tree: &Tree, x: NodeId) -> Self {
        let mass = tree.subtree_mass(x);
        let values = tree.descendants(x).iter().map(|&y| tree.weight(y) / mass).collect();
        DualDensity { support: x, values }
    }

    /// A strictly positive random density with log-weights uniform on
    /// `[-spread, spread]`.
    pub fn random<R: Rng + ?Sized>(tree: &Tree, x: NodeId, spread: f64, rng: &mut R) -> Self {
        let raw: Vec<f64> = tree.descendants(x).iter().map(|_| rng.gen_range(-spread..=spread).exp()).collect();
        let total: f64 = raw.iter().sum();
        DualDensity { support: x, values: raw.into_iter().map(|v| v / total).collect() }
    }

    pub fn support(&self) -> NodeId {
        self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, tree: &Tree, y: NodeId) -> f64 {
        tree.offset_in(self.support, y).map_or(0.0, |i| self.values[i])
    }

    pub fn to_map(&self, tree: &Tree) -> BTreeMap<NodeId, f64> {
        tree.descendants(self.support).iter().copied().zip(self.values.iter().copied()).collect()
    }

    /// `λ_{⪰z}` as a slice, for `z ∈ x+`.
    pub fn block(&self, tree: &Tree, z: NodeId) -> Option<&[f64]> {
        let start = tree.offset_in(self.support, z)?;
        Some(&self.values[start..start + tree.descendants(z).len()])
    }

    /// `λ̄_z`, the mass on `z+`.
    pub fn mass_below(&self, tree: &Tree, z: NodeId) -> f64 {
        self.block(tree, z).map_or(0.0, |b| b.iter().sum())
    }

    /// `λ_{⪰z} / λ̄_z`, or `None` when `λ̄_z = 0`.
    pub fn conditional(&self, tree: &Tree, z: NodeId) -> Option<DualDensity> {
        let block = self.block(tree, z)?;
        let mass: f64 = block.iter().sum();
        if mass <= 0.0 {
            return None;
        }
        Some(DualDensity { support: z, values: block.iter().map(|v| v / mass).collect() })
    }

    /// `(λ_x, λ̄_z for z ∈ x+1)`.
    pub fn one_step_marginal(&self, tree: &Tree) -> Vec<f64> {
        let mut m = vec![self.values[0]];
        m.extend(tree.children(self.support).iter().map(|&z| self.mass_below(tree, z)));
        m
    }
}

#[derive(Clone, Debug)]
pub struct DualSolverOptions {
    /// Duality-gap tolerance of the simplex descent.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub step_rule: StepRule,
    /// Options of the inner concave maximisation.
    pub ascent: AscentOptions,
}

impl Default for DualSolverOptions {
    fn default() -> Self {
        DualSolverOptions {
            tolerance: 1e-9,
            max_iterations: 100_000,
            step_rule: StepRule::default(),
            ascent: AscentOptions::default(),
        }
    }
}

impl DualSolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::Invalid(format!("solver tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Invalid("solver needs at least one iteration".into()));
        }
        Ok(())
    }

    fn simplex(&self) -> SimplexOptions {
        SimplexOptions { tolerance: self.tolerance, max_iterations: self.max_iterations, step_rule: self.step_rule }
    }
}

/// Result of maximising `π_x(K) - λ·K`.
#[derive(Clone, Debug)]
pub struct DualSup {
    /// `+∞` when the iterates diverged.
    pub value: f64,
    /// Maximiser over `x+` (the last iterate when divergent).
    pub maximizer: Vec<f64>,
    pub iterations: usize,
}

fn embed(tree: &Tree, x: NodeId, k: &[f64]) -> CashBalance {
    let mut cash = CashBalance::zeros(tree);
    for (&y, &v) in tree.descendants(x).iter().zip(k) {
        cash[y] = v;
    }
    cash
}

/// `sup` over cash balances supported on `x+` of `π_x(K) - λ·K`, starting
/// from `start`.
pub fn dual_sup(
    valuation: &dyn Valuation,
    x: NodeId,
    lambda: &[f64],
    start: Vec<f64>,
    opts: &AscentOptions,
) -> Result<DualSup> {
    let tree = valuation.tree();
    let objective = |k: &[f64]| -> Result<f64> {
        let cash = embed(tree, x, k);
        let pairing: f64 = k.iter().zip(lambda).map(|(a, b)| a * b).sum();
        Ok(valuation.value(x, &cash)? - pairing)
    };
    match maximize_concave(objective, start.clone(), opts) {
        Ok(a) => Ok(DualSup { value: a.value, maximizer: a.point, iterations: a.iterations }),
        Err(Error::Unbounded { .. }) => Ok(DualSup { value: f64::INFINITY, maximizer: start, iterations: opts.max_iterations }),
        Err(e) => Err(e),
    }
}

/// `π̃_x(λ)` computed numerically; `+∞` when the maximisation diverges.
pub fn dual_value(valuation: &dyn Valuation, x: NodeId, lambda: &DualDensity, opts: &DualSolverOptions) -> Result<f64> {
    opts.validate()?;
    let tree = valuation.tree();
    tree.check(x)?;
    if lambda.support() != x {
        return Err(Error::Domain(format!(
            "density is supported at `{}`, not `{}`",
            tree.label(lambda.support()),
            tree.label(x)
        )));
    }
    let n = lambda.values().len();
    Ok(dual_sup(valuation, x, lambda.values(), vec![0.0; n], &opts.ascent)?.value)
}

/// `sup_K { π_x(K) - λ·K }` over cash balances on the whole tree, for an
/// arbitrary signed vector `λ` indexed by node. Mass off `x+` or a total
/// different from one shows up as `+∞`.
pub fn dual_value_unrestricted(valuation: &dyn Valuation, x: NodeId, lambda: &[f64], opts: &AscentOptions) -> Result<f64> {
    let tree = valuation.tree();
    tree.check(x)?;
    if lambda.len() != tree.len() {
        return Err(Error::Invalid(format!("λ needs {} entries, got {}", tree.len(), lambda.len())));
    }
    let objective = |k: &[f64]| -> Result<f64> {
        let cash = CashBalance::from_values(tree, k.to_vec())?;
        let pairing: f64 = k.iter().zip(lambda).map(|(a, b)| a * b).sum();
        Ok(valuation.value(x, &cash)? - pairing)
    };
    match maximize_concave(objective, vec![0.0; tree.len()], opts) {
        Ok(a) => Ok(a.value),
        Err(Error::Unbounded { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// A convex function on the simplex over some finite set, `+∞` off it.
pub trait DualFunction {
    fn dimension(&self) -> usize;

    fn value(&mut self, lambda: &[f64]) -> Result<f64>;

    /// Value and a gradient; only differences between gradient entries
    /// matter.
    fn value_and_gradient(&mut self, lambda: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Wraps a value-only closure; gradients come from finite differences along
/// the simplex directions `e_i - λ`.
pub struct ClosureDual<F> {
    dimension: usize,
    f: F,
    step: f64,
}

impl<F: FnMut(&[f64]) -> Result<f64>> ClosureDual<F> {
    pub fn new(dimension: usize, f: F) -> Self {
        ClosureDual { dimension, f, step: 1e-7 }
    }
}

impl<F: FnMut(&[f64]) -> Result<f64>> DualFunction for ClosureDual<F> {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn value(&mut self, lambda: &[f64]) -> Result<f64> {
        (self.f)(lambda)
    }

    fn value_and_gradient(&mut self, lambda: &[f64], grad: &mut [f64]) -> Result<f64> {
        let v = (self.f)(lambda)?;
        let h = self.step;
        let mut probe = lambda.to_vec();
        for i in 0..lambda.len() {
            let mut along = |t: f64, probe: &mut Vec<f64>| -> Result<f64> {
                for (j, p) in probe.iter_mut().enumerate() {
                    let e = if i == j { 1.0 } else { 0.0 };
                    *p = lambda[j] + t * (e - lambda[j]);
                }
                (self.f)(probe)
            };
            let up = along(h, &mut probe)?;
            grad[i] = if lambda[i] * (1.0 + h) >= 2.0 * h {
                (up - along(-h, &mut probe)?) / (2.0 * h)
            } else {
                (up - v) / h
            };
        }
        Ok(v)
    }
}

/// The identically zero dual on the full simplex (worst case over all
/// densities).
pub struct ZeroDual(pub usize);

impl DualFunction for ZeroDual {
    fn dimension(&self) -> usize {
        self.0
    }

    fn value(&mut self, lambda: &[f64]) -> Result<f64> {
        Ok(if is_probability(lambda, 1e-9) { 0.0 } else { f64::INFINITY })
    }

    fn value_and_gradient(&mut self, lambda: &[f64], grad: &mut [f64]) -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        self.value(lambda)
    }
}

/// `h(λ | q) / γ` in closed form.
#[derive(Clone, Debug)]
pub struct EntropicDual {
    pub gamma: f64,
    pub reference: Vec<f64>,
}

impl EntropicDual {
    /// The dual of `family` at node `x`.
    pub fn at(family: &EntropicFamily, x: NodeId) -> Self {
        EntropicDual { gamma: family.gamma(), reference: family.reference_density(x) }
    }
}

impl DualFunction for EntropicDual {
    fn dimension(&self) -> usize {
        self.reference.len()
    }

    fn value(&mut self, lambda: &[f64]) -> Result<f64> {
        Ok(relative_entropy(lambda, &self.reference) / self.gamma)
    }

    fn value_and_gradient(&mut self, lambda: &[f64], grad: &mut [f64]) -> Result<f64> {
        for ((g, l), q) in grad.iter_mut().zip(lambda).zip(&self.reference) {
            *g = (l.max(1e-300) / q).ln() / self.gamma;
        }
        self.value(lambda)
    }
}

/// Pointwise sum of duals.
pub struct SumDual<'a>(pub Vec<Box<dyn DualFunction + 'a>>);

impl DualFunction for SumDual<'_> {
    fn dimension(&self) -> usize {
        self.0.first().map_or(0, |d| d.dimension())
    }

    fn value(&mut self, lambda: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for d in &mut self.0 {
            s += d.value(lambda)?;
        }
        Ok(s)
    }

    fn value_and_gradient(&mut self, lambda: &[f64], grad: &mut [f64]) -> Result<f64> {
        let mut s = 0.0;
        let mut g = vec![0.0; grad.len()];
        grad.iter_mut().for_each(|v| *v = 0.0);
        for d in &mut self.0 {
            s += d.value_and_gradient(lambda, &mut g)?;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok(s)
    }
}

/// Numerical dual of a valuation at one node; the gradient is `-K*` by the
/// envelope theorem. Maximisers are reused as warm starts.
pub struct NumericConjugate<'a> {
    valuation: &'a dyn Valuation,
    x: NodeId,
    opts: AscentOptions,
    warm: Vec<f64>,
    pub evaluations: usize,
}

impl<'a> NumericConjugate<'a> {
    pub fn new(valuation: &'a dyn Valuation, x: NodeId, opts: AscentOptions) -> Self {
        let n = valuation.tree().descendants(x).len();
        NumericConjugate { valuation, x, opts, warm: vec![0.0; n], evaluations: 0 }
    }

    /// The last maximiser found.
    pub fn maximizer(&self) -> &[f64] {
        &self.warm
    }

    fn solve(&mut self, lambda: &[f64]) -> Result<f64> {
        if !is_probability(lambda, 1e-9) {
            return Ok(f64::INFINITY);
        }
        self.evaluations += 1;
        let sup = dual_sup(self.valuation, self.x, lambda, self.warm.clone(), &self.opts)?;
        if sup.value.is_finite() {
            // TI leaves the maximiser free up to a constant; pin the mean
            let mean = sup.maximizer.iter().sum::<f64>() / sup.maximizer.len() as f64;
            self.warm = sup.maximizer.iter().map(|k| k - mean).collect();
        }
        Ok(sup.value)
    }
}

impl DualFunction for NumericConjugate<'_> {
    fn dimension(&self) -> usize {
        self.warm.len()
    }

    fn value(&mut self, lambda: &[f64]) -> Result<f64> {
        self.solve(lambda)
    }

    fn value_and_gradient(&mut self, lambda: &[f64], grad: &mut [f64]) -> Result<f64> {
        let v = self.solve(lambda)?;
        for (g, k) in grad.iter_mut().zip(&self.warm) {
            *g = -k;
        }
        Ok(v)
    }
}

/// `inf_λ λ·K + π̃(λ)` over the simplex.
#[derive(Clone, Debug)]
pub struct PrimalRecovery {
    pub value: f64,
    pub density: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
}

/// Minimise `λ·k + dual(λ)` by exponentiated-gradient descent, starting from
/// the uniform density.
pub fn primal_from_dual(dual: &mut dyn DualFunction, k: &[f64], opts: &DualSolverOptions) -> Result<PrimalRecovery> {
    let n = dual.dimension();
    primal_from_dual_from(dual, k, vec![1.0 / n as f64; n], opts)
}

/// As [`primal_from_dual`] with an explicit strictly positive start.
pub fn primal_from_dual_from(
    dual: &mut dyn DualFunction,
    k: &[f64],
    start: Vec<f64>,
    opts: &DualSolverOptions,
) -> Result<PrimalRecovery> {
    opts.validate()?;
    if k.len() != dual.dimension() {
        return Err(Error::Invalid(format!(
            "cash balance has {} entries, dual has dimension {}",
            k.len(),
            dual.dimension()
        )));
    }
    let sol = minimize_on_simplex(
        |l, g| {
            let v = dual.value_and_gradient(l, g)?;
            for (gi, ki) in g.iter_mut().zip(k) {
                *gi += ki;
            }
            Ok(v + l.iter().zip(k).map(|(a, b)| a * b).sum::<f64>())
        },
        start,
        &opts.simplex(),
    )?;
    Ok(PrimalRecovery { value: sol.value, density: sol.point, gap: sol.gap, iterations: sol.iterations })
}

/// Node duals and one-step duals, as needed by the dual recursion.
pub trait DualOracle {
    fn tree(&self) -> &Tree;

    /// `π̃_x(λ)`.
    fn node_dual(&self, lambda: &DualDensity) -> Result<f64>;

    /// `π̃_{x,x+1}(μ)` with `μ = (μ_x, μ_z for z ∈ x+1)`.
    fn one_step_dual(&self, x: NodeId, mu: &[f64]) -> Result<f64>;
}

/// Closed-form oracle of the relative-entropy family.
pub struct EntropicOracle<'a>(pub &'a EntropicFamily);

impl DualOracle for EntropicOracle<'_> {
    fn tree(&self) -> &Tree {
        self.0.shared_tree()
    }

    fn node_dual(&self, lambda: &DualDensity) -> Result<f64> {
        Ok(self.0.entropic_dual(lambda.support(), lambda.values()))
    }

    fn one_step_dual(&self, x: NodeId, mu: &[f64]) -> Result<f64> {
        let step = self.0.one_step(x);
        Ok(relative_entropy(mu, &step.weights) / self.0.gamma())
    }
}

/// Oracle computing every dual by numerical maximisation, except where a
/// one-step operator supplies its own conjugate.
pub struct NumericOracle<'a> {
    pub family: &'a ValuationFamily,
    pub opts: DualSolverOptions,
}

impl DualOracle for NumericOracle<'_> {
    fn tree(&self) -> &Tree {
        self.family.tree()
    }

    fn node_dual(&self, lambda: &DualDensity) -> Result<f64> {
        dual_value(self.family, lambda.support(), lambda, &self.opts)
    }

    fn one_step_dual(&self, x: NodeId, mu: &[f64]) -> Result<f64> {
        let step = self
            .family
            .one_step(x)
            .ok_or_else(|| Error::Invalid(format!("no one-step operator at `{}`", self.tree().label(x))))?;
        if let Some(c) = step.conjugate(mu) {
            return c.map(|(v, _)| v);
        }
        one_step_conjugate_numeric(step.as_ref(), mu, &self.opts.ascent)
    }
}

/// `sup_k π_{x,x+1}(k) - μ·k` by numerical maximisation.
pub fn one_step_conjugate_numeric(step: &dyn OneStep, mu: &[f64], opts: &AscentOptions) -> Result<f64> {
    if !is_probability(mu, 1e-9) {
        return Ok(f64::INFINITY);
    }
    let objective = |k: &[f64]| -> Result<f64> {
        Ok(step.evaluate(k[0], &k[1..])? - k.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>())
    };
    match maximize_concave(objective, vec![0.0; mu.len()], opts) {
        Ok(a) => Ok(a.value),
        Err(Error::Unbounded { .. }) => Ok(f64::INFINITY),
        Err(e) => Err(e),
    }
}

/// Both sides of the dual recursion at `x`.
#[derive(Clone, Debug)]
pub struct RecursionSides {
    pub lhs: f64,
    pub one_step: f64,
    pub children: f64,
}

impl RecursionSides {
    pub fn rhs(&self) -> f64 {
        self.one_step + self.children
    }

    pub fn residual(&self) -> f64 {
        if self.lhs == self.rhs() {
            0.0
        } else {
            (self.lhs - self.rhs()).abs()
        }
    }
}

/// `π̃_x(λ)` against `π̃_{x,x+1}(λ_x, λ̄_{x+1}) + Σ_z λ̄_z π̃_z(λ_{⪰z}/λ̄_z)`;
/// `λ` must be strictly positive.
pub fn dual_recursion_sides(oracle: &dyn DualOracle, lambda: &DualDensity) -> Result<RecursionSides> {
    let tree = oracle.tree();
    let x = lambda.support();
    if lambda.values().iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("the dual recursion check needs a strictly positive density".into()));
    }
    let lhs = oracle.node_dual(lambda)?;
    if tree.is_leaf(x) {
        return Ok(RecursionSides { lhs, one_step: 0.0, children: 0.0 });
    }
    let one_step = oracle.one_step_dual(x, &lambda.one_step_marginal(tree))?;
    let mut children = 0.0;
    for &z in tree.children(x) {
        let mass = lambda.mass_below(tree, z);
        let cond = lambda.conditional(tree, z).expect("positive density");
        children += mass * oracle.node_dual(&cond)?;
    }
    Ok(RecursionSides { lhs, one_step, children })
}

pub fn dual_recursion_residual(oracle: &dyn DualOracle, lambda: &DualDensity) -> Result<f64> {
    Ok(dual_recursion_sides(oracle, lambda)?.residual())
}

#[derive(Clone, Debug)]
pub struct DualPropertyReport {
    pub samples: usize,
    pub tolerance: f64,
    pub convex: bool,
    /// Largest `f((a+b)/2) - (f(a)+f(b))/2`, positive on violation.
    pub convexity_residual: f64,
    pub convexity_witness: Option<(Vec<f64>, Vec<f64>)>,
    /// Smallest sampled value, expected non-negative.
    pub min_sampled: f64,
    /// `inf_λ π̃(λ)` found by descent.
    pub infimum: f64,
    pub infimum_is_zero: bool,
    pub rejects_outside: bool,
}

impl DualPropertyReport {
    /// All three properties hold.
    pub fn passed(&self) -> bool {
        self.convex && self.infimum_is_zero && self.rejects_outside && self.min_sampled >= -self.tolerance
    }
}

/// Sample-based check of convexity, a zero infimum and `+∞` off the simplex.
pub fn check_dual_properties(
    dual: &mut dyn DualFunction,
    samples: usize,
    seed: u64,
    tolerance: f64,
    opts: &DualSolverOptions,
) -> Result<DualPropertyReport> {
    let n = dual.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0f64..3.0).exp()).collect();
        let t: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / t).collect()
    };
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    let mut min_sampled = f64::INFINITY;
    for _ in 0..samples {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let m: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect();
        let (fa, fb, fm) = (dual.value(&a)?, dual.value(&b)?, dual.value(&m)?);
        min_sampled = min_sampled.min(fa).min(fb);
        let r = fm - 0.5 * (fa + fb);
        if r > worst {
            worst = r;
            if r > tolerance {
                witness = Some((a, b));
            }
        }
    }
    let infimum = primal_from_dual(dual, &vec![0.0; n], opts)?.value;

    let mut rejects = true;
    let mut off = draw(&mut rng);
    off[0] += 0.5;
    let mut neg = draw(&mut rng);
    neg[0] -= 2.0 * neg[0] + 0.1;
    let rest: f64 = neg[1..].iter().sum::<f64>();
    let rescale = (1.0 - neg[0]) / rest;
    for v in neg[1..].iter_mut() {
        *v *= rescale;
    }
    for bad in [off, neg] {
        match dual.value(&bad) {
            Ok(v) if v == f64::INFINITY => {}
            Err(Error::Domain(_)) => {}
            _ => rejects = false,
        }
    }
    Ok(DualPropertyReport {
        samples,
        tolerance,
        convex: worst <= tolerance,
        convexity_residual: worst,
        convexity_witness: witness,
        min_sampled,
        infimum,
        infimum_is_zero: infimum.abs() <= tolerance.max(1e-8),
        rejects_outside: rejects,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::NodeRecord;
    use crate::valuation::LinearStep;
    use std::sync::Arc;

    fn three_node() -> EntropicFamily {
        let t = Tree::build(&[
            NodeRecord::new("r", None, 0.2),
            NodeRecord::new("u", Some("r"), 0.4),
            NodeRecord::new("d", Some("r"), 0.4),
        ])
        .unwrap();
        EntropicFamily::new(Arc::new(t), 1.0).unwrap()
    }

    #[test]
    fn density_validation() {
        let fam = three_node();
        let t = fam.shared_tree();
        assert!(matches!(DualDensity::new(t, t.root(), vec![0.5, 0.6, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(DualDensity::new(t, t.root(), vec![1.1, -0.1, 0.0]), Err(Error::Domain(_))));
        let u = t.node("u").unwrap();
        let mut m = BTreeMap::new();
        m.insert(t.node("d").unwrap(), 0.5);
        m.insert(u, 0.5);
        assert!(matches!(DualDensity::from_map(t, u, &m), Err(Error::Domain(_))));
    }

    #[test]
    fn numeric_dual_at_reference_vanishes() {
        let fam = three_node();
        let t = fam.shared_tree().clone();
        let lam = DualDensity::reference(&t, t.root());
        let v = dual_value(&fam, t.root(), &lam, &DualSolverOptions::default()).unwrap();
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn numeric_dual_matches_relative_entropy() {
        let fam = three_node();
        let t = fam.shared_tree().clone();
        let l = [0.2, 0.5, 0.3];
        let lam = DualDensity::new(&t, t.root(), l.to_vec()).unwrap();
        let v = dual_value(&fam, t.root(), &lam, &DualSolverOptions::default()).unwrap();
        let oracle = 0.2 * (0.2f64 / 0.2).ln() + 0.5 * (0.5f64 / 0.4).ln() + 0.3 * (0.3f64 / 0.4).ln();
        assert!((v - oracle).abs() < 1e-6, "{v} vs {oracle}");
    }

    #[test]
    fn linear_family_dual_diverges_off_its_density() {
        let t = Arc::new(Tree::regular(1, 2).unwrap());
        let fam = ValuationFamily::assemble(t.clone(), vec![Some(Arc::new(LinearStep::children_only(vec![0.5, 0.5]))), None, None]).unwrap();
        let lam = DualDensity::new(&t, t.root(), vec![0.0, 0.8, 0.2]).unwrap();
        assert_eq!(dual_value(&fam, t.root(), &lam, &DualSolverOptions::default()).unwrap(), f64::INFINITY);
        let own = DualDensity::new(&t, t.root(), vec![0.0, 0.5, 0.5]).unwrap();
        assert!(dual_value(&fam, t.root(), &own, &DualSolverOptions::default()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn mass_off_subtree_diverges() {
        let fam = three_node();
        let t = fam.shared_tree().clone();
        let u = t.node("u").unwrap();
        let mut lam = vec![0.0; 3];
        lam[u.0] = 0.7;
        lam[t.node("d").unwrap().0] = 0.3;
        let v = dual_value_unrestricted(&fam, u, &lam, &AscentOptions::default()).unwrap();
        assert_eq!(v, f64::INFINITY);
        lam = vec![0.0; 3];
        lam[u.0] = 1.0;
        assert!(dual_value_unrestricted(&fam, u, &lam, &AscentOptions::default()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn primal_recovery_examples() {
        let fam = three_node();
        let t = fam.shared_tree().clone();
        let opts = DualSolverOptions::default();
        let k = [0.3, 1.0, -1.0];
        let cash = CashBalance::from_values(&t, k.to_vec()).unwrap();
        let mut d = EntropicDual::at(&fam, t.root());
        let r = primal_from_dual(&mut d, &k, &opts).unwrap();
        assert!((r.value - fam.entropic_value(t.root(), &cash)).abs() < 1e-6);
        let r = primal_from_dual(&mut ZeroDual(3), &k, &opts).unwrap();
        assert!((r.value + 1.0).abs() < 1e-6);
        let mut d = EntropicDual::at(&fam, t.root());
        let r = primal_from_dual(&mut d, &[2.5; 3], &opts).unwrap();
        assert!((r.value - 2.5).abs() < 1e-9);
    }

    #[test]
    fn closure_dual_gradient_recovers_primal() {
        let fam = three_node();
        let t = fam.shared_tree().clone();
        let reference = fam.reference_density(t.root());
        let mut d = ClosureDual::new(3, |l: &[f64]| Ok(relative_entropy(l, &reference)));
        let k = [0.0, 0.4, -0.2];
        let cash = CashBalance::from_values(&t, k.to_vec()).unwrap();
        let r = primal_from_dual(&mut d, &k, &DualSolverOptions::default()).unwrap();
        assert!((r.value - fam.entropic_value(t.root(), &cash)).abs() < 1e-6);
    }

    #[test]
    fn recursion_on_depth_one_tree() {
        let fam = three_node();
        let t = fam.shared_tree().clone();
        let lam = DualDensity::new(&t, t.root(), vec![0.3, 0.3, 0.4]).unwrap();
        let s = dual_recursion_sides(&EntropicOracle(&fam), &lam).unwrap();
        assert!(s.children.abs() < 1e-15);
        assert!(s.residual() < 1e-15);
        let r = dual_recursion_residual(&EntropicOracle(&fam), &DualDensity::reference(&t, t.root())).unwrap();
        assert!(r < 1e-15);
    }

    #[test]
    fn recursion_closed_form_on_random_trees() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let depth = rng.gen_range(1..=4);
            let t = Arc::new(Tree::random(&mut rng, depth, 3).unwrap());
            let fam = EntropicFamily::new(t.clone(), rng.gen_range(0.2..3.0)).unwrap();
            for x in t.internal_nodes() {
                let lam = DualDensity::random(&t, x, 2.0, &mut rng);
                assert!(dual_recursion_residual(&EntropicOracle(&fam), &lam).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn dual_properties() {
        let fam = three_node();
        let t = fam.shared_tree().clone();
        let opts = DualSolverOptions::default();
        let rep = check_dual_properties(&mut EntropicDual::at(&fam, t.root()), 200, 1, 1e-12, &opts).unwrap();
        assert!(rep.passed(), "{rep:?}");

        let reference = fam.reference_density(t.root());
        let mut bent = ClosureDual::new(3, |l: &[f64]| {
            if !is_probability(l, 1e-9) {
                return Ok(f64::INFINITY);
            }
            Ok(relative_entropy(l, &reference) - 4.0 * l.iter().map(|v| v * v).sum::<f64>() + 4.0)
        });
        let rep = check_dual_properties(&mut bent, 200, 1, 1e-12, &opts).unwrap();
        assert!(!rep.convex && rep.convexity_witness.is_some());
    }
}
