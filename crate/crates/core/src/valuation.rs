//! One-step operators, backward-induction assembly and the axiom suite.
//!
//! A [`ValuationFamily`] is built from one [`OneStep`] operator per internal
//! node: leaves value a cash balance at its own level, and every internal
//! node applies its one-step operator to its own cash and the already
//! computed values of its children,
//!
//! ```text
//! π_x(K) = π_{x,x+1}(K_x, (π_z(K))_{z ∈ x+1}).
//! ```
//!
//! Anything that values cash balances node by node implements [`Valuation`],
//! and [`check_axioms`] fuzzes such an object against concavity, locality,
//! consistent localisation, monotonicity, dynamic consistency, translation
//! invariance and the zero level.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tree::{replace_after, CashBalance, NodeId, NodeValues, StoppingTime, Tree};

/// A single-period valuation `π_{x,x+1}(k_x, k_{x+1})`.
pub trait OneStep: Send + Sync + fmt::Debug {
    /// `children` follows the tree's child order.
    fn evaluate(&self, own: f64, children: &[f64]) -> Result<f64>;

    fn describe(&self) -> String {
        format!("{self:?}")
    }

    /// Closed-form convex dual on `x ∪ x+1` (`mu[0]` at `x`) with its
    /// gradient, when one is known.
    fn conjugate(&self, _mu: &[f64]) -> Option<Result<(f64, Vec<f64>)>> {
        None
    }

    /// For operators of the form `min_j ℓ_j · (k_x, k_{x+1})`, the pieces `ℓ_j`.
    fn linear_pieces(&self) -> Option<Vec<Vec<f64>>> {
        None
    }
}

/// Anything that assigns each node `x` a value `π_x(K)`.
pub trait Valuation: Sync {
    fn tree(&self) -> &Tree;

    fn value(&self, x: NodeId, cash: &CashBalance) -> Result<f64>;

    /// `π_x(K)` for every node, indexed by [`NodeId`].
    fn values(&self, cash: &CashBalance) -> Result<Vec<f64>> {
        self.tree().nodes().map(|x| self.value(x, cash)).collect()
    }

    /// `∂π_x/∂K_y` for `y ∈ x+` in pre-order; central differences unless
    /// overridden.
    fn gradient(&self, x: NodeId, cash: &CashBalance) -> Result<Vec<f64>> {
        let tree = self.tree();
        let mut probe = cash.clone();
        tree.descendants(x)
            .iter()
            .map(|&y| {
                let h = 1e-6 * cash[y].abs().max(1.0);
                probe[y] = cash[y] + h;
                let up = self.value(x, &probe)?;
                probe[y] = cash[y] - h;
                let down = self.value(x, &probe)?;
                probe[y] = cash[y];
                Ok((up - down) / (2.0 * h))
            })
            .collect()
    }
}

/// `π_τ(K)`: the value at each node of the stopping time's graph.
pub fn value_at(valuation: &dyn Valuation, tau: &StoppingTime, cash: &CashBalance) -> Result<NodeValues> {
    tau.nodes()
        .iter()
        .map(|&z| Ok((z, valuation.value(z, cash)?)))
        .collect()
}

/// Per-node operators assembled by backward induction.
#[derive(Clone)]
pub struct ValuationFamily {
    tree: Arc<Tree>,
    steps: Vec<Option<Arc<dyn OneStep>>>,
}

impl fmt::Debug for ValuationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ValuationFamily")
            .field("nodes", &self.tree.len())
            .field("horizon", &self.tree.horizon())
            .finish()
    }
}

impl ValuationFamily {
    /// `steps[x]` must be present for every internal node; entries for
    /// leaves are ignored.
    pub fn assemble(tree: Arc<Tree>, mut steps: Vec<Option<Arc<dyn OneStep>>>) -> Result<Self> {
        if steps.len() != tree.len() {
            return Err(Error::Invalid(format!(
                "{} one-step operators for {} nodes",
                steps.len(),
                tree.len()
            )));
        }
        for x in tree.nodes() {
            if tree.is_leaf(x) {
                steps[x.0] = None;
            } else if steps[x.0].is_none() {
                return Err(Error::Invalid(format!(
                    "missing one-step operator at node `{}`",
                    tree.label(x)
                )));
            }
        }
        Ok(ValuationFamily { tree, steps })
    }

    pub fn from_fn<F>(tree: Arc<Tree>, mut make: F) -> Result<Self>
    where
        F: FnMut(&Tree, NodeId) -> Result<Arc<dyn OneStep>>,
    {
        let steps = tree
            .nodes()
            .map(|x| if tree.is_leaf(x) { Ok(None) } else { make(&tree, x).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        Self::assemble(tree, steps)
    }

    pub fn shared_tree(&self) -> &Arc<Tree> {
        &self.tree
    }

    pub fn one_step(&self, x: NodeId) -> Option<&Arc<dyn OneStep>> {
        self.steps[x.0].as_ref()
    }

    /// Backward induction over `x+`, leaving `π_y(K)` in `out[y]` for every
    /// `y ∈ x+`.
    fn sweep(&self, x: NodeId, cash: &CashBalance, out: &mut [f64]) -> Result<()> {
        let mut kids = Vec::new();
        for &y in self.tree.descendants(x).iter().rev() {
            out[y.0] = match &self.steps[y.0] {
                None => cash[y],
                Some(step) => {
                    kids.clear();
                    kids.extend(self.tree.children(y).iter().map(|z| out[z.0]));
                    step.evaluate(cash[y], &kids)?
                }
            };
        }
        Ok(())
    }
}

impl Valuation for ValuationFamily {
    fn tree(&self) -> &Tree {
        &self.tree
    }

    fn value(&self, x: NodeId, cash: &CashBalance) -> Result<f64> {
        self.tree.check(x)?;
        let mut out = vec![0.0; self.tree.len()];
        self.sweep(x, cash, &mut out)?;
        Ok(out[x.0])
    }

    fn values(&self, cash: &CashBalance) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.tree.len()];
        self.sweep(self.tree.root(), cash, &mut out)?;
        Ok(out)
    }
}

/// `w_x k_x + Σ w_z k_z`; translation invariant when the weights sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearStep {
    pub own: f64,
    pub children: Vec<f64>,
}

impl LinearStep {
    pub fn children_only(weights: Vec<f64>) -> Self {
        LinearStep { own: 0.0, children: weights }
    }
}

impl OneStep for LinearStep {
    fn evaluate(&self, own: f64, children: &[f64]) -> Result<f64> {
        if children.len() != self.children.len() {
            return Err(Error::Invalid(format!(
                "linear step has {} weights, got {} children",
                self.children.len(),
                children.len()
            )));
        }
        Ok(self.own * own + self.children.iter().zip(children).map(|(w, k)| w * k).sum::<f64>())
    }

    fn conjugate(&self, mu: &[f64]) -> Option<Result<(f64, Vec<f64>)>> {
        let off = (mu[0] - self.own).abs()
            + mu[1..].iter().zip(&self.children).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let v = if off <= 1e-12 { 0.0 } else { f64::INFINITY };
        Some(Ok((v, vec![0.0; mu.len()])))
    }

    fn linear_pieces(&self) -> Option<Vec<Vec<f64>>> {
        let mut piece = vec![self.own];
        piece.extend_from_slice(&self.children);
        Some(vec![piece])
    }
}

/// `π_x(K) - π_x(0)`.
#[derive(Clone, Debug)]
pub struct Normalized<V> {
    inner: V,
    zero: Vec<f64>,
}

impl<V: Valuation> Normalized<V> {
    pub fn new(inner: V) -> Result<Self> {
        let zero = inner.values(&CashBalance::zeros(inner.tree()))?;
        Ok(Normalized { inner, zero })
    }

    /// `π_x(0)` per node.
    pub fn offsets(&self) -> &[f64] {
        &self.zero
    }

    pub fn inner(&self) -> &V {
        &self.inner
    }
}

impl<V: Valuation> Valuation for Normalized<V> {
    fn tree(&self) -> &Tree {
        self.inner.tree()
    }

    fn value(&self, x: NodeId, cash: &CashBalance) -> Result<f64> {
        Ok(self.inner.value(x, cash)? - self.zero[x.0])
    }

    fn values(&self, cash: &CashBalance) -> Result<Vec<f64>> {
        let v = self.inner.values(cash)?;
        Ok(v.iter().zip(&self.zero).map(|(a, b)| a - b).collect())
    }

    fn gradient(&self, x: NodeId, cash: &CashBalance) -> Result<Vec<f64>> {
        self.inner.gradient(x, cash)
    }
}

/// The axioms exercised by [`check_axioms`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axiom {
    Concavity,
    Locality,
    ConsistentLocalisation,
    Monotonicity,
    DynamicConsistency,
    TranslationInvariance,
    ZeroLevel,
}

impl Axiom {
    pub const ALL: [Axiom; 7] = [
        Axiom::Concavity,
        Axiom::Locality,
        Axiom::ConsistentLocalisation,
        Axiom::Monotonicity,
        Axiom::DynamicConsistency,
        Axiom::TranslationInvariance,
        Axiom::ZeroLevel,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Axiom::Concavity => "C",
            Axiom::Locality => "L",
            Axiom::ConsistentLocalisation => "CL",
            Axiom::Monotonicity => "M",
            Axiom::DynamicConsistency => "DC",
            Axiom::TranslationInvariance => "TI",
            Axiom::ZeroLevel => "Z",
        }
    }
}

impl fmt::Display for Axiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Inputs that produced the worst residual of a failing axiom.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub node: NodeId,
    pub cash: Vec<CashBalance>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxiomOutcome {
    pub axiom: Axiom,
    pub passed: bool,
    pub worst_residual: f64,
    pub checks: usize,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxiomReport {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub outcomes: Vec<AxiomOutcome>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn outcome(&self, axiom: Axiom) -> Option<&AxiomOutcome> {
        self.outcomes.iter().find(|o| o.axiom == axiom)
    }

    pub fn worst_residual(&self) -> f64 {
        self.outcomes.iter().map(|o| o.worst_residual).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct AxiomConfig {
    pub trials: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Cash values are drawn uniformly from `[-range, range]`.
    pub range: f64,
    /// Per-node stopping probability when sampling stopping times.
    pub stop_prob: f64,
}

impl AxiomConfig {
    pub fn new(trials: usize, seed: u64) -> Self {
        AxiomConfig { trials, seed, tolerance: 1e-9, range: 5.0, stop_prob: 0.4 }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }
}

struct Tally {
    axiom: Axiom,
    worst: f64,
    checks: usize,
    witness: Option<Witness>,
}

impl Tally {
    fn new(axiom: Axiom) -> Self {
        Tally { axiom, worst: 0.0, checks: 0, witness: None }
    }

    fn record(&mut self, residual: f64, witness: impl FnOnce() -> Witness) {
        self.checks += 1;
        let r = if residual.is_nan() { f64::INFINITY } else { residual.max(0.0) };
        if self.witness.is_none() || r > self.worst {
            self.worst = r;
            self.witness = Some(witness());
        }
    }

    fn finish(self, tol: f64) -> AxiomOutcome {
        let passed = self.worst <= tol;
        AxiomOutcome {
            axiom: self.axiom,
            passed,
            worst_residual: self.worst,
            checks: self.checks,
            witness: if passed { None } else { self.witness },
        }
    }
}

fn random_cash(tree: &Tree, range: f64, rng: &mut ChaCha8Rng) -> CashBalance {
    CashBalance::from_fn(tree, |_| rng.gen_range(-range..=range))
}

/// Fuzz a valuation against the seven axioms.
pub fn check_axioms(valuation: &dyn Valuation, cfg: &AxiomConfig) -> Result<AxiomReport> {
    if cfg.trials == 0 {
        return Err(Error::Invalid("at least one trial is required".into()));
    }
    let tree = valuation.tree();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut c = Tally::new(Axiom::Concavity);
    let mut l = Tally::new(Axiom::Locality);
    let mut cl = Tally::new(Axiom::ConsistentLocalisation);
    let mut m = Tally::new(Axiom::Monotonicity);
    let mut dc = Tally::new(Axiom::DynamicConsistency);
    let mut ti = Tally::new(Axiom::TranslationInvariance);
    let mut z = Tally::new(Axiom::ZeroLevel);

    let zero = CashBalance::zeros(tree);
    let at_zero = valuation.values(&zero)?;
    for x in tree.nodes() {
        z.record(at_zero[x.0].abs(), || Witness {
            node: x,
            cash: vec![zero.clone()],
            detail: format!("π_x(0) = {}", at_zero[x.0]),
        });
    }

    for _ in 0..cfg.trials {
        let k = random_cash(tree, cfg.range, &mut rng);
        let k2 = random_cash(tree, cfg.range, &mut rng);
        let vk = valuation.values(&k)?;
        let vk2 = valuation.values(&k2)?;

        let mid = k.lerp(&k2, 0.5);
        let vmid = valuation.values(&mid)?;
        for x in tree.nodes() {
            let gap = 0.5 * vk[x.0] + 0.5 * vk2[x.0] - vmid[x.0];
            c.record(gap, || Witness {
                node: x,
                cash: vec![k.clone(), k2.clone()],
                detail: format!("π(mid) = {}, mean = {}", vmid[x.0], 0.5 * (vk[x.0] + vk2[x.0])),
            });
        }

        let bump = CashBalance::from_fn(tree, |_| rng.gen_range(0.0..=cfg.range));
        let higher = k.add(&bump);
        let vhigh = valuation.values(&higher)?;
        for x in tree.nodes() {
            m.record(vk[x.0] - vhigh[x.0], || Witness {
                node: x,
                cash: vec![higher.clone(), k.clone()],
                detail: format!("π(K') = {} < π(K) = {}", vhigh[x.0], vk[x.0]),
            });
        }

        let x = NodeId(rng.gen_range(0..tree.len()));
        let a = rng.gen_range(-cfg.range..=cfg.range);
        let shifted = k.shifted_on(tree, x, a);
        let vs = valuation.value(x, &shifted)?;
        ti.record((vs - vk[x.0] - a).abs(), || Witness {
            node: x,
            cash: vec![k.clone()],
            detail: format!("shift a = {a}: π(K + a) = {vs}, π(K) + a = {}", vk[x.0] + a),
        });

        let mut off = k.clone();
        for y in tree.nodes() {
            if !tree.is_descendant(x, y) {
                off[y] = rng.gen_range(-cfg.range..=cfg.range);
            }
        }
        let voff = valuation.value(x, &off)?;
        l.record((voff - vk[x.0]).abs(), || Witness {
            node: x,
            cash: vec![k.clone(), off.clone()],
            detail: format!("perturbed off x+: {voff} vs {}", vk[x.0]),
        });

        let tau = StoppingTime::random(tree, cfg.stop_prob, &mut rng);
        let sigma = tau.random_refinement(tree, cfg.stop_prob, &mut rng);
        let at_tau = value_at(valuation, &tau, &k)?;
        let other = StoppingTime::random(tree, cfg.stop_prob, &mut rng);
        let at_other = value_at(valuation, &other, &k)?;
        for (node, v) in &at_tau {
            cl.record((v - vk[node.0]).abs(), || Witness {
                node: *node,
                cash: vec![k.clone()],
                detail: "π_τ disagrees with π_z at z ∈ τ".into(),
            });
            if let Some(w) = at_other.get(node) {
                cl.record((v - w).abs(), || Witness {
                    node: *node,
                    cash: vec![k.clone()],
                    detail: "π_τ and π_τ' disagree on {τ = τ'}".into(),
                });
            }
        }

        let at_sigma = value_at(valuation, &sigma, &k)?;
        let pasted = replace_after(tree, &k, &sigma, &at_sigma)?;
        for &node in tau.nodes() {
            let vp = valuation.value(node, &pasted)?;
            dc.record((vp - vk[node.0]).abs(), || Witness {
                node,
                cash: vec![k.clone(), pasted.clone()],
                detail: format!("π(K) = {}, π(pasted) = {vp}", vk[node.0]),
            });
        }
    }

    let tol = cfg.tolerance;
    Ok(AxiomReport {
        trials: cfg.trials,
        seed: cfg.seed,
        tolerance: tol,
        outcomes: vec![
            c.finish(tol),
            l.finish(tol),
            cl.finish(tol),
            m.finish(tol),
            dc.finish(tol),
            ti.finish(tol),
            z.finish(tol),
        ],
    })
}

/// Sample a one-step operator with `arity` children against (c), (m), (ti)
/// and (z).
pub fn check_one_step(step: &dyn OneStep, arity: usize, cfg: &AxiomConfig) -> Result<AxiomReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut c = Tally::new(Axiom::Concavity);
    let mut m = Tally::new(Axiom::Monotonicity);
    let mut ti = Tally::new(Axiom::TranslationInvariance);
    let mut z = Tally::new(Axiom::ZeroLevel);
    let r = cfg.range;
    let none = || Witness { node: NodeId(0), cash: Vec::new(), detail: String::new() };

    let v0 = step.evaluate(0.0, &vec![0.0; arity])?;
    z.record(v0.abs(), none);
    for _ in 0..cfg.trials {
        let draw = |rng: &mut ChaCha8Rng| -> (f64, Vec<f64>) {
            (rng.gen_range(-r..=r), (0..arity).map(|_| rng.gen_range(-r..=r)).collect())
        };
        let (a0, a) = draw(&mut rng);
        let (b0, b) = draw(&mut rng);
        let va = step.evaluate(a0, &a)?;
        let vb = step.evaluate(b0, &b)?;
        let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
        let vm = step.evaluate(0.5 * (a0 + b0), &mid)?;
        c.record(0.5 * (va + vb) - vm, none);

        let up0 = a0 + rng.gen_range(0.0..=r);
        let up: Vec<f64> = a.iter().map(|v| v + rng.gen_range(0.0..=r)).collect();
        m.record(va - step.evaluate(up0, &up)?, none);

        let s = rng.gen_range(-r..=r);
        let shifted: Vec<f64> = a.iter().map(|v| v + s).collect();
        ti.record((step.evaluate(a0 + s, &shifted)? - va - s).abs(), none);
    }
    let tol = cfg.tolerance;
    Ok(AxiomReport {
        trials: cfg.trials,
        seed: cfg.seed,
        tolerance: tol,
        outcomes: vec![c.finish(tol), m.finish(tol), ti.finish(tol), z.finish(tol)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::NodeRecord;

    fn three_node() -> Arc<Tree> {
        Arc::new(
            Tree::build(&[
                NodeRecord::new("r", None, 0.2),
                NodeRecord::new("u", Some("r"), 0.4),
                NodeRecord::new("d", Some("r"), 0.4),
            ])
            .unwrap(),
        )
    }

    fn halves(tree: Arc<Tree>) -> ValuationFamily {
        ValuationFamily::from_fn(tree, |t, x| {
            let n = t.children(x).len();
            Ok(Arc::new(LinearStep::children_only(vec![1.0 / n as f64; n])) as Arc<dyn OneStep>)
        })
        .unwrap()
    }

    #[test]
    fn linear_family_is_expectation() {
        let t = three_node();
        let fam = halves(t.clone());
        let k = CashBalance::from_values(&t, vec![0.0, 2.0, 4.0]).unwrap();
        assert_eq!(fam.value(t.root(), &k).unwrap(), 3.0);
    }

    #[test]
    fn constants_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t = Arc::new(Tree::random(&mut rng, 3, 3).unwrap());
        let fam = halves(t.clone());
        let vals = fam.values(&CashBalance::constant(&t, -1.25)).unwrap();
        assert!(vals.iter().all(|v| (v + 1.25).abs() < 1e-14));
    }

    #[test]
    fn missing_one_step_is_rejected() {
        let t = three_node();
        let err = ValuationFamily::assemble(t.clone(), vec![None; 3]).unwrap_err();
        assert!(matches!(err, Error::Invalid(m) if m.contains("missing one-step")));
    }

    #[test]
    fn value_at_examples() {
        let t = Arc::new(Tree::regular(2, 2).unwrap());
        let fam = halves(t.clone());
        let k = CashBalance::from_fn(&t, |x| x.0 as f64);
        let leaves = value_at(&fam, &StoppingTime::terminal(&t), &k).unwrap();
        for (z, v) in leaves {
            assert_eq!(v, k[z]);
        }
        let root = value_at(&fam, &StoppingTime::root(&t), &k).unwrap();
        assert_eq!(root.len(), 1);
        assert_eq!(root[&t.root()], fam.value(t.root(), &k).unwrap());
    }

    #[test]
    fn linear_family_passes_axioms_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = Arc::new(Tree::random(&mut rng, 3, 3).unwrap());
        let fam = halves(t);
        let report = check_axioms(&fam, &AxiomConfig::new(200, 1).with_tolerance(1e-12)).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[derive(Debug)]
    struct Broken;
    impl OneStep for Broken {
        fn evaluate(&self, own: f64, children: &[f64]) -> Result<f64> {
            Ok(children.iter().sum::<f64>() / children.len() as f64 + own * own)
        }
    }

    #[test]
    fn broken_one_step_fails_with_witnesses() {
        let t = Arc::new(Tree::regular(2, 2).unwrap());
        let fam = ValuationFamily::from_fn(t, |_, _| Ok(Arc::new(Broken) as Arc<dyn OneStep>)).unwrap();
        let report = check_axioms(&fam, &AxiomConfig::new(50, 3)).unwrap();
        for ax in [Axiom::Concavity, Axiom::TranslationInvariance] {
            let o = report.outcome(ax).unwrap();
            assert!(!o.passed, "{ax} should fail");
            assert!(o.witness.is_some());
        }
        let one = check_one_step(&Broken, 2, &AxiomConfig::new(50, 3)).unwrap();
        assert!(!one.outcome(Axiom::Concavity).unwrap().passed);
        assert!(!one.outcome(Axiom::TranslationInvariance).unwrap().passed);
    }

    #[test]
    fn zero_trials_rejected() {
        let fam = halves(three_node());
        assert!(check_axioms(&fam, &AxiomConfig::new(0, 1)).is_err());
    }
}
