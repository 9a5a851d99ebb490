//! Optimal risk sharing between subsidiaries.
//!
//! The firm value is the sup-convolution
//! `Π_x(K) = sup { Σ_j π^j_x(K^j) : Σ_j K^j = K }`, whose dual is the sum of
//! the subsidiaries' duals. Three evaluation paths are provided:
//!
//! * closed form for relative-entropy subsidiaries, where the aggregate is
//!   again entropic with risk aversion `Γ = (Σ_j 1/γ_j)^{-1}`;
//! * dual additivity, minimising `λ·K + Σ_j π̃^j_x(λ)` over the simplex;
//! * backward recursion of one-step sup-convolutions, which also handles a
//!   member without a smooth dual (a worst-case valuation, say).

use std::fmt;
use std::sync::Arc;

use crate::dual::{
    primal_from_dual, DualFunction, DualSolverOptions, EntropicDual, NumericConjugate, SumDual,
};
use crate::error::{Error, Result};
use crate::families::EntropicFamily;
use crate::optim::{maximize_concave, minimize_on_simplex, SimplexOptions};
use crate::tree::{CashBalance, NodeId, Tree};
use crate::valuation::{check_axioms, AxiomConfig, AxiomReport, Normalized, OneStep, Valuation, ValuationFamily};

/// One subsidiary: closed-form entropic parameters or a general family.
#[derive(Clone, Debug)]
pub enum Subsidiary {
    Entropic(EntropicFamily),
    Family(ValuationFamily),
}

impl Subsidiary {
    pub fn valuation(&self) -> &dyn Valuation {
        match self {
            Subsidiary::Entropic(f) => f,
            Subsidiary::Family(f) => f,
        }
    }

    pub fn tree(&self) -> &Tree {
        self.valuation().tree()
    }

    /// The family as assembled one-step operators.
    pub fn family(&self) -> Result<ValuationFamily> {
        match self {
            Subsidiary::Entropic(f) => f.assemble(),
            Subsidiary::Family(f) => Ok(f.clone()),
        }
    }

    pub fn as_entropic(&self) -> Option<&EntropicFamily> {
        match self {
            Subsidiary::Entropic(f) => Some(f),
            Subsidiary::Family(_) => None,
        }
    }
}

/// Subsidiaries on trees of one shape; each may carry its own weights.
#[derive(Clone, Debug)]
pub struct Subsidiaries {
    members: Vec<Subsidiary>,
}

impl Subsidiaries {
    pub fn new(members: Vec<Subsidiary>) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::Invalid("no subsidiaries given".into()))?;
        for m in &members[1..] {
            if !m.tree().same_shape(first.tree()) {
                return Err(Error::Invalid("subsidiaries are defined on different trees".into()));
            }
        }
        Ok(Subsidiaries { members })
    }

    pub fn entropic(families: Vec<EntropicFamily>) -> Result<Self> {
        Subsidiaries::new(families.into_iter().map(Subsidiary::Entropic).collect())
    }

    pub fn members(&self) -> &[Subsidiary] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn tree(&self) -> &Tree {
        self.members[0].tree()
    }

    pub fn valuations(&self) -> Vec<&dyn Valuation> {
        self.members.iter().map(|m| m.valuation()).collect()
    }

    /// All members as entropic parameters, if they all are.
    pub fn all_entropic(&self) -> Option<Vec<EntropicFamily>> {
        self.members.iter().map(|m| m.as_entropic().cloned()).collect()
    }

    /// The closed form when available, otherwise the recursion.
    pub fn preferred_method(&self) -> SharingMethod {
        if self.all_entropic().is_some() {
            SharingMethod::DualAdditivity
        } else {
            SharingMethod::Recursive
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SharingMethod {
    ClosedForm,
    DualAdditivity,
    Recursive,
}

impl fmt::Display for SharingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SharingMethod::ClosedForm => "closed-form",
            SharingMethod::DualAdditivity => "dual-additivity",
            SharingMethod::Recursive => "recursive",
        })
    }
}

/// `Σ_j π̃^j(λ)`.
pub fn share_dual(duals: &mut [Box<dyn DualFunction + '_>], lambda: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for d in duals.iter_mut() {
        if d.dimension() != lambda.len() {
            return Err(Error::Invalid(format!(
                "dual of dimension {} evaluated at a density with {} entries",
                d.dimension(),
                lambda.len()
            )));
        }
        total += d.value(lambda)?;
    }
    Ok(total)
}

/// Aggregate entropic parameters at a node.
#[derive(Clone, Debug)]
pub struct EntropicShareParams {
    pub gamma: f64,
    /// `P` over `x+` in pre-order.
    pub density: Vec<f64>,
    pub a: f64,
    /// `Π_x(0) = log(A)/Γ`.
    pub value_of_sharing: f64,
}

fn aggregate_gamma(families: &[EntropicFamily]) -> f64 {
    1.0 / families.iter().map(|f| 1.0 / f.gamma()).sum::<f64>()
}

fn check_entropic(families: &[EntropicFamily]) -> Result<()> {
    let first = families.first().ok_or_else(|| Error::Invalid("no subsidiaries given".into()))?;
    if families.iter().any(|f| !f.shared_tree().same_shape(first.shared_tree())) {
        return Err(Error::Invalid("subsidiaries are defined on different trees".into()));
    }
    Ok(())
}

pub fn entropic_share_params(families: &[EntropicFamily], x: NodeId) -> Result<EntropicShareParams> {
    check_entropic(families)?;
    let gamma = aggregate_gamma(families);
    let refs: Vec<Vec<f64>> = families.iter().map(|f| f.reference_density(x)).collect();
    let n = refs[0].len();
    let logs: Vec<f64> = (0..n)
        .map(|y| families.iter().zip(&refs).map(|(f, r)| gamma / f.gamma() * r[y].ln()).sum())
        .collect();
    let log_total = crate::families::log_sum_exp(logs.iter().copied());
    let density = logs.iter().map(|l| (l - log_total).exp()).collect();
    Ok(EntropicShareParams { gamma, density, a: (-log_total).exp(), value_of_sharing: -log_total / gamma })
}

/// The normalised sharing family `Π - Π(0)` as an entropic family with risk
/// aversion `Γ` and reference weights proportional to `Π_j (p^j)^{Γ/γ_j}`.
pub fn entropic_aggregate(families: &[EntropicFamily]) -> Result<EntropicFamily> {
    check_entropic(families)?;
    let gamma = aggregate_gamma(families);
    let tree = families[0].shared_tree();
    let logs: Vec<f64> = tree
        .nodes()
        .map(|y| families.iter().map(|f| gamma / f.gamma() * f.shared_tree().weight(y).ln()).sum())
        .collect();
    let lt = crate::families::log_sum_exp(logs.iter().copied());
    let weights: Vec<f64> = logs.iter().map(|l| (l - lt).exp()).collect();
    EntropicFamily::new(Arc::new(tree.with_weights(&weights)?), gamma)
}

/// The linear sharing rule
/// `K^j = (Γ/γ_j) K + (1/γ_j) log(p̃^j/P) + (Γ/γ_j) Π_x(0)` on `x+`, and
/// `(Γ/γ_j) K` elsewhere. The last member absorbs rounding so the shares
/// sum to `K` exactly.
pub fn entropic_allocation(families: &[EntropicFamily], x: NodeId, cash: &CashBalance) -> Result<Vec<CashBalance>> {
    let params = entropic_share_params(families, x)?;
    let tree = families[0].shared_tree();
    let desc = tree.descendants(x);
    let mut shares: Vec<CashBalance> = families
        .iter()
        .map(|f| {
            let w = params.gamma / f.gamma();
            let mut k = cash.scaled(w);
            let reference = f.reference_density(x);
            for (i, &y) in desc.iter().enumerate() {
                k[y] += (reference[i] / params.density[i]).ln() / f.gamma() + w * params.value_of_sharing;
            }
            k
        })
        .collect();
    let last = shares.len() - 1;
    for y in tree.nodes() {
        let others: f64 = shares[..last].iter().map(|s| s[y]).sum();
        shares[last][y] = cash[y] - others;
    }
    Ok(shares)
}

#[derive(Clone, Debug)]
pub struct SharingResult {
    pub node: NodeId,
    pub method: SharingMethod,
    /// `Π_x(K)`.
    pub value: f64,
    /// `Π_x(K) - Π_x(0)`.
    pub normalized: f64,
    /// `Π_x(0)`.
    pub value_of_sharing: f64,
    pub allocation: Vec<CashBalance>,
    /// Minimising density over `x+`, when the method produces one.
    pub density: Option<Vec<f64>>,
    /// `max_y |Σ_j K^j_y - K_y|` over `x+`.
    pub feasibility_residual: f64,
    /// `|Σ_j π^j_x(K^j) - Π_x(K)|`.
    pub value_residual: f64,
}

/// `Π_x(K)` by the preferred method.
pub fn share_value(subs: &Subsidiaries, x: NodeId, cash: &CashBalance, opts: &DualSolverOptions) -> Result<SharingResult> {
    share_value_with(subs, x, cash, subs.preferred_method(), opts)
}

pub fn share_value_with(
    subs: &Subsidiaries,
    x: NodeId,
    cash: &CashBalance,
    method: SharingMethod,
    opts: &DualSolverOptions,
) -> Result<SharingResult> {
    subs.tree().check(x)?;
    if cash.len() != subs.tree().len() {
        return Err(Error::Invalid("cash balance does not match the tree".into()));
    }
    let mut result = match method {
        SharingMethod::ClosedForm => share_closed_form(subs, x, cash)?,
        SharingMethod::DualAdditivity => share_dual_additivity(subs, x, cash, opts)?,
        SharingMethod::Recursive => share_recursive(subs, x, cash, opts)?,
    };
    let tree = subs.tree();
    let mut feas: f64 = 0.0;
    for &y in tree.descendants(x) {
        let s: f64 = result.allocation.iter().map(|k| k[y]).sum();
        feas = feas.max((s - cash[y]).abs());
    }
    let mut achieved = 0.0;
    for (m, k) in subs.members().iter().zip(&result.allocation) {
        achieved += m.valuation().value(x, k)?;
    }
    result.feasibility_residual = feas;
    result.value_residual = (achieved - result.value).abs();
    let scale = result.value.abs().max(1.0);
    if method != SharingMethod::ClosedForm && (feas > 1e-8 * scale || result.value_residual > 1e-6 * scale) {
        return Err(Error::NoConvergence {
            iterations: opts.max_iterations,
            residual: feas.max(result.value_residual),
            best_value: result.value,
            best_point: result.density.clone().unwrap_or_default(),
        });
    }
    Ok(result)
}

fn share_closed_form(subs: &Subsidiaries, x: NodeId, cash: &CashBalance) -> Result<SharingResult> {
    let fams = subs
        .all_entropic()
        .ok_or_else(|| Error::Invalid("the closed form needs entropic subsidiaries".into()))?;
    let params = entropic_share_params(&fams, x)?;
    let agg = entropic_aggregate(&fams)?;
    let normalized = agg.entropic_value(x, cash);
    let allocation = entropic_allocation(&fams, x, cash)?;
    Ok(SharingResult {
        node: x,
        method: SharingMethod::ClosedForm,
        value: normalized + params.value_of_sharing,
        normalized,
        value_of_sharing: params.value_of_sharing,
        allocation,
        density: Some(agg.tilted_density(x, cash)),
        feasibility_residual: 0.0,
        value_residual: 0.0,
    })
}

fn member_duals<'a>(subs: &'a Subsidiaries, x: NodeId, opts: &DualSolverOptions) -> Vec<Box<dyn DualFunction + 'a>> {
    subs.members()
        .iter()
        .map(|m| -> Box<dyn DualFunction + 'a> {
            match m {
                Subsidiary::Entropic(f) => Box::new(EntropicDual::at(f, x)),
                Subsidiary::Family(f) => Box::new(NumericConjugate::new(f, x, opts.ascent.clone())),
            }
        })
        .collect()
}

/// Shift shares by constants of minimal norm and spread the remaining
/// mismatch evenly so that they sum to `target`.
fn repair_feasibility(shares: &mut [Vec<f64>], target: &[f64]) {
    let j = shares.len() as f64;
    let n = target.len() as f64;
    let means: Vec<f64> = shares.iter().map(|s| s.iter().sum::<f64>() / n).collect();
    let residual: Vec<f64> = (0..target.len())
        .map(|y| target[y] - shares.iter().map(|s| s[y]).sum::<f64>())
        .collect();
    let rmean = residual.iter().sum::<f64>() / n;
    let common = (rmean + means.iter().sum::<f64>()) / j;
    for (s, m) in shares.iter_mut().zip(&means) {
        for (y, v) in s.iter_mut().enumerate() {
            *v += common - m + (residual[y] - rmean) / j;
        }
    }
    let last = shares.len() - 1;
    for y in 0..target.len() {
        let others: f64 = shares[..last].iter().map(|s| s[y]).sum();
        shares[last][y] = target[y] - others;
    }
}

fn share_dual_additivity(subs: &Subsidiaries, x: NodeId, cash: &CashBalance, opts: &DualSolverOptions) -> Result<SharingResult> {
    let tree = subs.tree();
    let k = cash.restrict(tree, x);
    let n = k.len();
    let mut sum = SumDual(member_duals(subs, x, opts));
    let sol = primal_from_dual(&mut sum, &k, opts)?;
    let zero = primal_from_dual(&mut SumDual(member_duals(subs, x, opts)), &vec![0.0; n], opts)?;

    let mut shares = Vec::with_capacity(subs.len());
    for m in subs.members() {
        match m {
            Subsidiary::Entropic(f) => shares.push(f.dual_maximizer(x, &sol.density)),
            Subsidiary::Family(f) => {
                let mut c = NumericConjugate::new(f, x, opts.ascent.clone());
                c.value(&sol.density)?;
                shares.push(c.maximizer().to_vec());
            }
        }
    }
    repair_feasibility(&mut shares, &k);
    let allocation = embed_shares(tree, x, cash, &shares, subs.len());
    Ok(SharingResult {
        node: x,
        method: SharingMethod::DualAdditivity,
        value: sol.value,
        normalized: sol.value - zero.value,
        value_of_sharing: zero.value,
        allocation,
        density: Some(sol.density),
        feasibility_residual: 0.0,
        value_residual: 0.0,
    })
}

/// Shares on `x+`, equal splits of `K` elsewhere.
fn embed_shares(tree: &Tree, x: NodeId, cash: &CashBalance, shares: &[Vec<f64>], j: usize) -> Vec<CashBalance> {
    shares
        .iter()
        .map(|s| {
            let mut k = cash.scaled(1.0 / j as f64);
            for (&y, &v) in tree.descendants(x).iter().zip(s) {
                k[y] = v;
            }
            k
        })
        .collect()
}

fn share_recursive(subs: &Subsidiaries, x: NodeId, cash: &CashBalance, opts: &DualSolverOptions) -> Result<SharingResult> {
    let members = subs.members().iter().map(|m| m.family()).collect::<Result<Vec<_>>>()?;
    let family = SharingFamily::new(members, opts.clone())?;
    let value = family.value(x, cash)?;
    let zero = family.value(x, &CashBalance::zeros(family.tree()))?;
    let allocation = family.allocate(x, cash)?;
    Ok(SharingResult {
        node: x,
        method: SharingMethod::Recursive,
        value,
        normalized: value - zero,
        value_of_sharing: zero,
        allocation,
        density: None,
        feasibility_residual: 0.0,
        value_residual: 0.0,
    })
}

fn clamp_density(mu: &[f64]) -> Vec<f64> {
    let v: Vec<f64> = mu.iter().map(|m| m.max(1e-300)).collect();
    let t: f64 = v.iter().sum();
    v.into_iter().map(|m| m / t).collect()
}

/// Conjugate and its gradient `-k*` of a one-step operator; numerical when
/// the operator has no closed form.
fn smooth_conjugate(step: &dyn OneStep, mu: &[f64], opts: &DualSolverOptions) -> Result<(f64, Vec<f64>)> {
    let mu = clamp_density(mu);
    if let Some(c) = step.conjugate(&mu) {
        return c;
    }
    let objective = |k: &[f64]| -> Result<f64> {
        Ok(step.evaluate(k[0], &k[1..])? - k.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>())
    };
    match maximize_concave(objective, vec![0.0; mu.len()], &opts.ascent) {
        Ok(a) => Ok((a.value, a.point.iter().map(|k| -k).collect())),
        Err(Error::Unbounded { .. }) => Ok((f64::INFINITY, vec![0.0; mu.len()])),
        Err(e) => Err(e),
    }
}

/// One-step shares: `shares[j]` holds `(own, children...)` for member `j`.
#[derive(Clone, Debug)]
pub struct StepShare {
    pub value: f64,
    pub density: Vec<f64>,
    pub shares: Vec<Vec<f64>>,
}

/// Sup-convolution of one-step operators. At most one member may lack a
/// smooth conjugate; it must then be a minimum of finitely many linear
/// pieces.
pub struct SupConvolutionStep {
    members: Vec<Arc<dyn OneStep>>,
    polyhedral: Option<(usize, Vec<Vec<f64>>)>,
    opts: DualSolverOptions,
}

impl fmt::Debug for SupConvolutionStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SupConvolutionStep")
            .field("members", &self.members.len())
            .field("polyhedral", &self.polyhedral.as_ref().map(|p| p.0))
            .finish()
    }
}

impl SupConvolutionStep {
    pub fn new(members: Vec<Arc<dyn OneStep>>, opts: DualSolverOptions) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Invalid("sup-convolution of no operators".into()));
        }
        let mut polyhedral = None;
        if members.len() > 1 {
            for (j, m) in members.iter().enumerate() {
                if let Some(pieces) = m.linear_pieces() {
                    if polyhedral.is_some() {
                        return Err(Error::Invalid(
                            "at most one member without a smooth dual can share risk".into(),
                        ));
                    }
                    polyhedral = Some((j, pieces));
                }
            }
        }
        Ok(SupConvolutionStep { members, polyhedral, opts })
    }

    fn simplex_options(&self) -> SimplexOptions {
        SimplexOptions {
            tolerance: self.opts.tolerance,
            max_iterations: self.opts.max_iterations,
            step_rule: self.opts.step_rule,
        }
    }

    /// Value, minimising density and the optimal shares at `k`.
    pub fn solve(&self, k: &[f64]) -> Result<StepShare> {
        let n = k.len();
        if self.members.len() == 1 {
            return Ok(StepShare {
                value: self.members[0].evaluate(k[0], &k[1..])?,
                density: Vec::new(),
                shares: vec![k.to_vec()],
            });
        }
        let smooth: Vec<usize> = (0..self.members.len())
            .filter(|j| self.polyhedral.as_ref().is_none_or(|(p, _)| p != j))
            .collect();
        let opts = &self.opts;
        let cost = |mu: &[f64], g: &mut [f64]| -> Result<f64> {
            let mut v: f64 = mu.iter().zip(k).map(|(a, b)| a * b).sum();
            g.copy_from_slice(k);
            for &j in &smooth {
                let (c, cg) = smooth_conjugate(self.members[j].as_ref(), mu, opts)?;
                v += c;
                g.iter_mut().zip(&cg).for_each(|(a, b)| *a += b);
            }
            Ok(v)
        };

        let (value, mu) = match &self.polyhedral {
            None => {
                let sol = minimize_on_simplex(cost, vec![1.0 / n as f64; n], &self.simplex_options())?;
                (sol.value, sol.point)
            }
            Some((_, pieces)) => {
                let combine = |w: &[f64]| -> Vec<f64> {
                    let mut mu = vec![0.0; n];
                    for (wi, p) in w.iter().zip(pieces) {
                        mu.iter_mut().zip(p).for_each(|(m, v)| *m += wi * v);
                    }
                    mu
                };
                let mut gmu = vec![0.0; n];
                let sol = minimize_on_simplex(
                    |w, gw| {
                        let mu = combine(w);
                        let v = cost(&mu, &mut gmu)?;
                        for (g, p) in gw.iter_mut().zip(pieces) {
                            *g = p.iter().zip(&gmu).map(|(a, b)| a * b).sum();
                        }
                        Ok(v)
                    },
                    vec![1.0 / pieces.len() as f64; pieces.len()],
                    &self.simplex_options(),
                )?;
                (sol.value, combine(&sol.point))
            }
        };

        let mut shares = vec![Vec::new(); self.members.len()];
        for &j in &smooth {
            let (_, g) = smooth_conjugate(self.members[j].as_ref(), &mu, opts)?;
            shares[j] = g.iter().map(|v| -v).collect();
        }
        match &self.polyhedral {
            Some((p, _)) => {
                let mut rest = k.to_vec();
                for &j in &smooth {
                    rest.iter_mut().zip(&shares[j]).for_each(|(r, s)| *r -= s);
                }
                shares[*p] = rest;
            }
            None => repair_feasibility(&mut shares, k),
        }
        Ok(StepShare { value, density: mu, shares })
    }
}

impl OneStep for SupConvolutionStep {
    fn evaluate(&self, own: f64, children: &[f64]) -> Result<f64> {
        let mut k = Vec::with_capacity(children.len() + 1);
        k.push(own);
        k.extend_from_slice(children);
        Ok(self.solve(&k)?.value)
    }

    fn describe(&self) -> String {
        format!("sup-convolution of {} operators", self.members.len())
    }
}

/// The sharing family assembled from one-step sup-convolutions.
#[derive(Clone, Debug)]
pub struct SharingFamily {
    members: Vec<ValuationFamily>,
    steps: Vec<Option<Arc<SupConvolutionStep>>>,
    aggregate: ValuationFamily,
}

impl SharingFamily {
    pub fn new(members: Vec<ValuationFamily>, opts: DualSolverOptions) -> Result<Self> {
        let first = members.first().ok_or_else(|| Error::Invalid("no subsidiaries given".into()))?;
        let tree = first.shared_tree().clone();
        if members.iter().any(|m| !m.tree().same_shape(&tree)) {
            return Err(Error::Invalid("subsidiaries are defined on different trees".into()));
        }
        let mut steps = Vec::with_capacity(tree.len());
        for x in tree.nodes() {
            if tree.is_leaf(x) {
                steps.push(None);
                continue;
            }
            let ops = members
                .iter()
                .map(|m| {
                    m.one_step(x)
                        .cloned()
                        .ok_or_else(|| Error::Invalid(format!("no one-step operator at `{}`", tree.label(x))))
                })
                .collect::<Result<Vec<_>>>()?;
            steps.push(Some(Arc::new(SupConvolutionStep::new(ops, opts.clone())?)));
        }
        let aggregate = ValuationFamily::assemble(
            tree,
            steps.iter().map(|s| s.clone().map(|s| s as Arc<dyn OneStep>)).collect(),
        )?;
        Ok(SharingFamily { members, steps, aggregate })
    }

    pub fn members(&self) -> &[ValuationFamily] {
        &self.members
    }

    /// Optimal shares of `K` on `x+`, built node by node; off `x+` the cash
    /// is split equally.
    pub fn allocate(&self, x: NodeId, cash: &CashBalance) -> Result<Vec<CashBalance>> {
        let tree = self.aggregate.shared_tree().clone();
        tree.check(x)?;
        let j = self.members.len();
        let values = self.aggregate.values(cash)?;
        let mut alloc: Vec<CashBalance> = (0..j).map(|_| cash.scaled(1.0 / j as f64)).collect();
        // targets[m] for the node on top of the stack
        let mut stack: Vec<(NodeId, Option<Vec<f64>>)> = vec![(x, None)];
        while let Some((node, targets)) = stack.pop() {
            if tree.is_leaf(node) {
                let t = targets.unwrap_or_else(|| vec![cash[node] / j as f64; j]);
                for (m, v) in t.into_iter().enumerate() {
                    alloc[m][node] = v;
                }
                continue;
            }
            let children = tree.children(node);
            let mut k = vec![cash[node]];
            k.extend(children.iter().map(|&z| values[z.0]));
            let step = self.steps[node.0].as_ref().expect("internal node");
            let share = step.solve(&k)?;
            let mut shift = vec![0.0; j];
            if let Some(t) = targets {
                for m in 0..j {
                    let s = &share.shares[m];
                    let own = self.members[m].one_step(node).expect("internal node").evaluate(s[0], &s[1..])?;
                    shift[m] = t[m] - own;
                }
                let mean = shift.iter().sum::<f64>() / j as f64;
                shift.iter_mut().for_each(|d| *d -= mean);
            }
            for m in 0..j {
                alloc[m][node] = share.shares[m][0] + shift[m];
            }
            let last = j - 1;
            let others: f64 = (0..last).map(|m| alloc[m][node]).sum();
            alloc[last][node] = cash[node] - others;
            for (i, &z) in children.iter().enumerate() {
                let t = (0..j).map(|m| share.shares[m][i + 1] + shift[m]).collect();
                stack.push((z, Some(t)));
            }
        }
        Ok(alloc)
    }
}

impl Valuation for SharingFamily {
    fn tree(&self) -> &Tree {
        self.aggregate.tree()
    }

    fn value(&self, x: NodeId, cash: &CashBalance) -> Result<f64> {
        self.aggregate.value(x, cash)
    }

    fn values(&self, cash: &CashBalance) -> Result<Vec<f64>> {
        self.aggregate.values(cash)
    }
}

/// Valuation after a prior commitment `K*`: `π_x(K + K*) - π_x(K*)`.
#[derive(Clone, Debug)]
pub struct Committed<V> {
    inner: V,
    commitment: CashBalance,
    base: Vec<f64>,
}

impl<V: Valuation> Committed<V> {
    pub fn new(inner: V, commitment: CashBalance) -> Result<Self> {
        if commitment.len() != inner.tree().len() {
            return Err(Error::Invalid("commitment does not match the tree".into()));
        }
        let base = inner.values(&commitment)?;
        Ok(Committed { inner, commitment, base })
    }

    pub fn commitment(&self) -> &CashBalance {
        &self.commitment
    }
}

impl<V: Valuation> Valuation for Committed<V> {
    fn tree(&self) -> &Tree {
        self.inner.tree()
    }

    fn value(&self, x: NodeId, cash: &CashBalance) -> Result<f64> {
        Ok(self.inner.value(x, &cash.add(&self.commitment))? - self.base[x.0])
    }

    fn values(&self, cash: &CashBalance) -> Result<Vec<f64>> {
        let v = self.inner.values(&cash.add(&self.commitment))?;
        Ok(v.iter().zip(&self.base).map(|(a, b)| a - b).collect())
    }
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub node: NodeId,
    /// `max_{y,j} |∂π^j_x/∂K_y - b_j p_y|`.
    pub residual: f64,
    /// Best proportionality constant `b_j` per member.
    pub scales: Vec<f64>,
}

/// Gradient proportionality of the members' valuations at `x` under
/// `allocation`, against the root shadow density (the average of the
/// members' root gradients).
pub fn stability_check(members: &[&dyn Valuation], allocation: &[CashBalance], x: NodeId) -> Result<StabilityReport> {
    if members.is_empty() || members.len() != allocation.len() {
        return Err(Error::Invalid("need one share per subsidiary".into()));
    }
    let tree = members[0].tree();
    tree.check(x)?;
    let root = tree.root();
    let mut shadow = vec![0.0; tree.len()];
    for (m, k) in members.iter().zip(allocation) {
        let g = m.gradient(root, k)?;
        shadow.iter_mut().zip(&g).for_each(|(s, v)| *s += v / members.len() as f64);
    }
    let start = tree.offset_in(root, x).expect("every node lies below the root");
    let p = &shadow[start..start + tree.descendants(x).len()];
    let pp: f64 = p.iter().map(|v| v * v).sum();
    let mut residual: f64 = 0.0;
    let mut scales = Vec::with_capacity(members.len());
    for (m, k) in members.iter().zip(allocation) {
        let g = m.gradient(x, k)?;
        let b = g.iter().zip(p).map(|(a, q)| a * q).sum::<f64>() / pp;
        for (a, q) in g.iter().zip(p) {
            residual = residual.max((a - b * q).abs());
        }
        scales.push(b);
    }
    Ok(StabilityReport { node: x, residual, scales })
}

/// The axiom suite on the normalised sharing family: the entropic closed
/// form when every member is entropic and `method` allows it, otherwise the
/// one-step recursion.
pub fn check_sharing_axioms(
    subs: &Subsidiaries,
    method: SharingMethod,
    cfg: &AxiomConfig,
    opts: &DualSolverOptions,
) -> Result<AxiomReport> {
    match (method, subs.all_entropic()) {
        (SharingMethod::ClosedForm, Some(fams)) | (SharingMethod::DualAdditivity, Some(fams)) => {
            check_axioms(&entropic_aggregate(&fams)?, cfg)
        }
        _ => {
            let members = subs.members().iter().map(|m| m.family()).collect::<Result<Vec<_>>>()?;
            let normalized = Normalized::new(SharingFamily::new(members, opts.clone())?)?;
            check_axioms(&normalized, cfg)
        }
    }
}
