//! Market access and state-price densities.
//!
//! Gains from trade are linear in the holdings: starting with zero wealth
//! at `x`, holding `θ_u` over the edges leaving `u` accumulates
//! `G_y = Σ_{u→v on x..y} θ_u·(S_v - S_u)`. With market access the value is
//! `Π_x(K) = sup_θ π_x(K + G(θ))`, normalised by the access value `Π_x(0)`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::optim::{maximize_concave, AscentOptions};
use crate::tree::{stopped_at, CashBalance, NodeId, StoppingTime, Tree};
use crate::valuation::{check_axioms, AxiomConfig, AxiomReport, Normalized, OneStep, Valuation, ValuationFamily};

/// Adapted asset prices on a tree, zero interest.
#[derive(Clone, Debug)]
pub struct Market {
    tree: Arc<Tree>,
    names: Vec<String>,
    /// `prices[a][y]`.
    prices: Vec<Vec<f64>>,
}

impl Market {
    pub fn new(tree: Arc<Tree>, names: Vec<String>, prices: Vec<Vec<f64>>) -> Result<Self> {
        if names.is_empty() || names.len() != prices.len() {
            return Err(Error::Invalid("a market needs at least one named asset".into()));
        }
        for (name, p) in names.iter().zip(&prices) {
            if p.len() != tree.len() || p.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid(format!("asset `{name}` needs a finite price at every node")));
            }
        }
        Ok(Market { tree, names, prices })
    }

    /// Prices keyed by node label.
    pub fn from_labels(tree: Arc<Tree>, assets: &[(String, BTreeMap<String, f64>)]) -> Result<Self> {
        let mut names = Vec::new();
        let mut prices = Vec::new();
        for (name, map) in assets {
            let mut p = vec![f64::NAN; tree.len()];
            for (label, &v) in map {
                p[tree.node(label)?.0] = v;
            }
            if let Some(y) = tree.nodes().find(|y| p[y.0].is_nan()) {
                return Err(Error::Invalid(format!("asset `{name}` has no price at `{}`", tree.label(y))));
            }
            names.push(name.clone());
            prices.push(p);
        }
        Market::new(tree, names, prices)
    }

    /// A single asset with multiplicative moves `up`/`down` from `s0` on a
    /// binary tree (first child up).
    pub fn binomial(tree: Arc<Tree>, s0: f64, up: f64, down: f64) -> Result<Self> {
        let mut p = vec![0.0; tree.len()];
        for &y in tree.preorder() {
            p[y.0] = match tree.parent(y) {
                None => s0,
                Some(u) => {
                    let first = tree.children(u)[0] == y;
                    p[u.0] * if first { up } else { down }
                }
            };
        }
        Market::new(tree, vec!["S".into()], vec![p])
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn shared_tree(&self) -> &Arc<Tree> {
        &self.tree
    }

    pub fn assets(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn price(&self, asset: usize, y: NodeId) -> f64 {
        self.prices[asset][y.0]
    }

    /// `S_z - S_x` per child `z`, per asset.
    pub fn increments(&self, x: NodeId) -> Vec<Vec<f64>> {
        self.tree
            .children(x)
            .iter()
            .map(|&z| (0..self.assets()).map(|a| self.prices[a][z.0] - self.prices[a][x.0]).collect())
            .collect()
    }

    /// Internal nodes of `x+` in pre-order: where holdings are chosen.
    pub fn trading_nodes(&self, x: NodeId) -> Vec<NodeId> {
        self.tree.descendants(x).iter().copied().filter(|&u| !self.tree.is_leaf(u)).collect()
    }

    pub fn strategy_dimension(&self, x: NodeId) -> usize {
        self.trading_nodes(x).len() * self.assets()
    }

    fn propagate(&self, x: NodeId, holdings: &dyn Fn(NodeId) -> Option<Vec<f64>>, out: &mut CashBalance) -> Result<()> {
        out[x] = 0.0;
        for &y in &self.tree.descendants(x)[1..] {
            let u = self.tree.parent(y).expect("descendant has a parent");
            let theta = holdings(u)
                .ok_or_else(|| Error::Invalid(format!("no holdings at `{}`", self.tree.label(u))))?;
            let step: f64 = (0..self.assets()).map(|a| theta[a] * (self.prices[a][y.0] - self.prices[a][u.0])).sum();
            out[y] = out[u] + step;
        }
        Ok(())
    }
}

/// Holdings per trading node, one entry per asset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Strategy {
    pub holdings: BTreeMap<NodeId, Vec<f64>>,
}

impl Strategy {
    pub fn zeros(market: &Market, x: NodeId) -> Self {
        Strategy {
            holdings: market.trading_nodes(x).into_iter().map(|u| (u, vec![0.0; market.assets()])).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(market: &Market, x: NodeId, scale: f64, rng: &mut R) -> Self {
        Strategy {
            holdings: market
                .trading_nodes(x)
                .into_iter()
                .map(|u| (u, (0..market.assets()).map(|_| rng.gen_range(-scale..=scale)).collect()))
                .collect(),
        }
    }

    /// Holdings laid out as trading nodes of `x+` in pre-order, assets
    /// innermost.
    pub fn from_flat(market: &Market, x: NodeId, flat: &[f64]) -> Result<Self> {
        let nodes = market.trading_nodes(x);
        let a = market.assets();
        if flat.len() != nodes.len() * a {
            return Err(Error::Invalid(format!("expected {} holdings, got {}", nodes.len() * a, flat.len())));
        }
        Ok(Strategy { holdings: nodes.into_iter().zip(flat.chunks(a)).map(|(u, c)| (u, c.to_vec())).collect() })
    }

    pub fn to_flat(&self, market: &Market, x: NodeId) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for u in market.trading_nodes(x) {
            let h = self
                .holdings
                .get(&u)
                .ok_or_else(|| Error::Invalid(format!("no holdings at `{}`", market.tree().label(u))))?;
            out.extend_from_slice(h);
        }
        Ok(out)
    }

    /// Pointwise `t·self + (1-t)·other` on common nodes.
    pub fn mix(&self, other: &Strategy, t: f64) -> Strategy {
        Strategy {
            holdings: self
                .holdings
                .iter()
                .filter_map(|(u, h)| {
                    other.holdings.get(u).map(|g| (*u, h.iter().zip(g).map(|(a, b)| t * a + (1.0 - t) * b).collect()))
                })
                .collect(),
        }
    }
}

/// Cumulative gains of `θ` from zero wealth at `x`; zero off `x+`.
pub fn gains(market: &Market, x: NodeId, theta: &Strategy) -> Result<CashBalance> {
    market.tree().check(x)?;
    let mut out = CashBalance::zeros(market.tree());
    market.propagate(x, &|u| theta.holdings.get(&u).cloned(), &mut out)?;
    Ok(out)
}

/// Gains from zero wealth at each node of `τ`; zero strictly before `τ`.
pub fn gains_from(market: &Market, tau: &StoppingTime, theta: &Strategy) -> Result<CashBalance> {
    let mut out = CashBalance::zeros(market.tree());
    for &z in tau.nodes() {
        market.propagate(z, &|u| theta.holdings.get(&u).cloned(), &mut out)?;
    }
    Ok(out)
}

fn gains_flat(market: &Market, x: NodeId, flat: &[f64], out: &mut CashBalance) {
    let a = market.assets();
    let nodes = market.trading_nodes(x);
    let index: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(i, &u)| (u, i)).collect();
    market
        .propagate(x, &|u| index.get(&u).map(|&i| flat[i * a..(i + 1) * a].to_vec()), out)
        .expect("flat strategy covers every trading node");
}

#[derive(Clone, Debug)]
pub struct GainsReport {
    pub trials: usize,
    pub convexity_residual: f64,
    pub localisation_residual: f64,
    pub decomposition_residual: f64,
    pub tolerance: f64,
}

impl GainsReport {
    pub fn passed(&self) -> bool {
        self.convexity_residual <= self.tolerance
            && self.localisation_residual <= self.tolerance
            && self.decomposition_residual <= self.tolerance
    }
}

/// Samples strategies and checks that gains are convex, restrict to
/// subtrees, and split into a part stopped at `σ` plus gains restarted at
/// `σ`.
pub fn check_gains_axioms(market: &Market, x: NodeId, trials: usize, seed: u64) -> Result<GainsReport> {
    let tree = market.tree();
    tree.check(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut conv, mut loc, mut dec): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let full = |rng: &mut ChaCha8Rng| Strategy::random(market, tree.root(), 3.0, rng);
    for _ in 0..trials {
        let t1 = full(&mut rng);
        let t2 = full(&mut rng);
        let t: f64 = rng.gen_range(0.0..=1.0);
        let mixed = gains(market, x, &t1.mix(&t2, t))?;
        let combo = gains(market, x, &t1)?.lerp(&gains(market, x, &t2)?, 1.0 - t);
        conv = conv.max(mixed.max_abs_diff(&combo));

        let tau = StoppingTime::hitting(tree, x)?.random_refinement(tree, 0.4, &mut rng);
        let g_tau = gains_from(market, &tau, &t1)?;
        let w = tau.nodes()[rng.gen_range(0..tau.nodes().len())];
        let restricted = CashBalance::from_fn(tree, |y| if tree.is_descendant(w, y) { g_tau[y] } else { 0.0 });
        let tau_w = StoppingTime::hitting(tree, w)?;
        loc = loc.max(restricted.max_abs_diff(&gains_from(market, &tau_w, &t1)?));

        let sigma = tau.random_refinement(tree, 0.4, &mut rng);
        let split = stopped_at(tree, &g_tau, &sigma).add(&gains_from(market, &sigma, &t1)?);
        dec = dec.max(split.max_abs_diff(&g_tau));
        // and the converse: pasting two strategies at σ gives gains from τ
        let pasted = Strategy {
            holdings: t1
                .holdings
                .iter()
                .map(|(&u, h)| {
                    let after = sigma.nodes().iter().any(|&s| tree.is_descendant(s, u));
                    (u, if after { t2.holdings[&u].clone() } else { h.clone() })
                })
                .collect(),
        };
        let joined = stopped_at(tree, &g_tau, &sigma).add(&gains_from(market, &sigma, &t2)?);
        dec = dec.max(joined.max_abs_diff(&gains_from(market, &tau, &pasted)?));
    }
    Ok(GainsReport {
        trials,
        convexity_residual: conv,
        localisation_residual: loc,
        decomposition_residual: dec,
        tolerance: 1e-12,
    })
}

#[derive(Clone, Debug)]
pub struct MarketValue {
    /// `Π_x(K)`.
    pub value: f64,
    /// `Π_x(K) - Π_x(0)`.
    pub normalized: f64,
    /// `Π_x(0)`.
    pub access_value: f64,
    pub strategy: Strategy,
    pub iterations: usize,
}

fn hedge_direct(valuation: &dyn Valuation, market: &Market, x: NodeId, cash: &CashBalance, opts: &AscentOptions) -> Result<(f64, Vec<f64>, usize)> {
    let dim = market.strategy_dimension(x);
    let mut g = CashBalance::zeros(market.tree());
    let objective = |theta: &[f64]| -> Result<f64> {
        gains_flat(market, x, theta, &mut g);
        valuation.value(x, &cash.add(&g))
    };
    let a = maximize_concave(objective, vec![0.0; dim], opts)?;
    Ok((a.value, a.point, a.iterations))
}

/// `sup_θ π_x(K + G(θ))` by gradient ascent over all holdings in `x+`.
/// Divergence of the holdings is reported as [`Error::Unbounded`] with the
/// ascent direction as an arbitrage certificate.
pub fn market_value(valuation: &dyn Valuation, market: &Market, x: NodeId, cash: &CashBalance, opts: &AscentOptions) -> Result<MarketValue> {
    if !valuation.tree().same_shape(market.tree()) {
        return Err(Error::Invalid("valuation and market are on different trees".into()));
    }
    market.tree().check(x)?;
    let (value, theta, iterations) = hedge_direct(valuation, market, x, cash, opts)?;
    let (access_value, _, _) = hedge_direct(valuation, market, x, &CashBalance::zeros(market.tree()), opts)?;
    Ok(MarketValue {
        value,
        normalized: value - access_value,
        access_value,
        strategy: Strategy::from_flat(market, x, &theta)?,
        iterations,
    })
}

/// One-step operator with market access:
/// `sup_θ π_{x,x+1}(k_x, k_z + θ·ΔS_z)`.
pub struct HedgedStep {
    inner: Arc<dyn OneStep>,
    increments: Vec<Vec<f64>>,
    opts: AscentOptions,
}

impl fmt::Debug for HedgedStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HedgedStep").field("inner", &self.inner).field("increments", &self.increments).finish()
    }
}

impl HedgedStep {
    pub fn new(inner: Arc<dyn OneStep>, increments: Vec<Vec<f64>>, opts: AscentOptions) -> Self {
        HedgedStep { inner, increments, opts }
    }

    /// Optimal value and holdings.
    pub fn hedge(&self, own: f64, children: &[f64]) -> Result<(f64, Vec<f64>)> {
        let a = self.increments.first().map_or(0, |v| v.len());
        if self.increments.iter().all(|d| d.iter().all(|v| *v == 0.0)) {
            return Ok((self.inner.evaluate(own, children)?, vec![0.0; a]));
        }
        let mut shifted = children.to_vec();
        let objective = |theta: &[f64]| -> Result<f64> {
            for (s, (c, d)) in shifted.iter_mut().zip(children.iter().zip(&self.increments)) {
                *s = c + theta.iter().zip(d).map(|(t, v)| t * v).sum::<f64>();
            }
            self.inner.evaluate(own, &shifted)
        };
        let r = maximize_concave(objective, vec![0.0; a], &self.opts)?;
        Ok((r.value, r.point))
    }
}

impl OneStep for HedgedStep {
    fn evaluate(&self, own: f64, children: &[f64]) -> Result<f64> {
        Ok(self.hedge(own, children)?.0)
    }

    fn describe(&self) -> String {
        format!("{} with market access", self.inner.describe())
    }
}

/// The market-access valuation `Π`, assembled from hedged one-step
/// operators. Trading at `x` only affects the continuation values through
/// translation invariance, so node-by-node hedging solves the joint problem.
#[derive(Clone, Debug)]
pub struct MarketFamily {
    market: Market,
    steps: Vec<Option<Arc<HedgedStep>>>,
    family: ValuationFamily,
}

impl MarketFamily {
    pub fn new(base: &ValuationFamily, market: Market, opts: AscentOptions) -> Result<Self> {
        let tree = base.shared_tree().clone();
        if !tree.same_shape(market.tree()) {
            return Err(Error::Invalid("valuation and market are on different trees".into()));
        }
        let mut steps = Vec::with_capacity(tree.len());
        for x in tree.nodes() {
            steps.push(base.one_step(x).map(|op| Arc::new(HedgedStep::new(op.clone(), market.increments(x), opts.clone()))));
        }
        let family = ValuationFamily::assemble(
            tree,
            steps.iter().map(|s| s.clone().map(|s| s as Arc<dyn OneStep>)).collect(),
        )?;
        Ok(MarketFamily { market, steps, family })
    }

    pub fn market(&self) -> &Market {
        &self.market
    }

    /// The optimal holdings at every trading node of `x+`.
    pub fn strategy(&self, x: NodeId, cash: &CashBalance) -> Result<Strategy> {
        let tree = self.family.tree();
        let values = self.family.values(cash)?;
        let mut holdings = BTreeMap::new();
        for u in self.market.trading_nodes(x) {
            let children: Vec<f64> = tree.children(u).iter().map(|z| values[z.0]).collect();
            let step = self.steps[u.0].as_ref().expect("trading nodes are internal");
            holdings.insert(u, step.hedge(cash[u], &children)?.1);
        }
        Ok(Strategy { holdings })
    }
}

impl Valuation for MarketFamily {
    fn tree(&self) -> &Tree {
        self.family.tree()
    }

    fn value(&self, x: NodeId, cash: &CashBalance) -> Result<f64> {
        self.family.value(x, cash)
    }

    fn values(&self, cash: &CashBalance) -> Result<Vec<f64>> {
        self.family.values(cash)
    }
}

/// The axiom suite on the normalised market-access family.
pub fn check_market_axioms(base: &ValuationFamily, market: &Market, cfg: &AxiomConfig, opts: &AscentOptions) -> Result<AxiomReport> {
    let fam = Normalized::new(MarketFamily::new(base, market.clone(), opts.clone())?)?;
    check_axioms(&fam, cfg)
}

/// One-step pricing weights: for each internal node, a weight per child.
pub type OneStepPrices = BTreeMap<NodeId, Vec<f64>>;

/// A strictly positive process with `ζ_root = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct StatePriceDensity {
    zeta: Vec<f64>,
}

/// `q(z|x) = L_z / L_x` for children `z` of `x`, with `L` the leaf mass.
pub fn conditional_reference(tree: &Tree, x: NodeId) -> Vec<f64> {
    let lx = tree.leaf_mass(x);
    tree.children(x).iter().map(|&z| tree.leaf_mass(z) / lx).collect()
}

impl StatePriceDensity {
    /// Normalises by the root value.
    pub fn new(tree: &Tree, zeta: Vec<f64>) -> Result<Self> {
        if zeta.len() != tree.len() {
            return Err(Error::Invalid(format!("expected {} values, got {}", tree.len(), zeta.len())));
        }
        if let Some(y) = tree.nodes().find(|y| !(zeta[y.0].is_finite() && zeta[y.0] > 0.0)) {
            return Err(Error::Arbitrage(format!(
                "state-price density must be strictly positive, got {} at `{}`",
                zeta[y.0],
                tree.label(y)
            )));
        }
        let z0 = zeta[tree.root().0];
        Ok(StatePriceDensity { zeta: zeta.into_iter().map(|v| v / z0).collect() })
    }

    pub fn values(&self) -> &[f64] {
        &self.zeta
    }

    pub fn get(&self, y: NodeId) -> f64 {
        self.zeta[y.0]
    }

    /// `w_x(z) = q(z|x) ζ_z / ζ_x`.
    pub fn one_step_prices(&self, tree: &Tree) -> OneStepPrices {
        tree.internal_nodes()
            .map(|x| {
                let q = conditional_reference(tree, x);
                let w = tree.children(x).iter().zip(&q).map(|(&z, q)| q * self.zeta[z.0] / self.zeta[x.0]).collect();
                (x, w)
            })
            .collect()
    }

    /// `E[ζ_T Y | F_s] / ζ_s` for a claim `Y` paid at the leaves.
    pub fn price(&self, tree: &Tree, s: NodeId, claim: &CashBalance) -> f64 {
        let ls = tree.leaf_mass(s);
        let mut total = 0.0;
        for &y in tree.descendants(s) {
            if tree.is_leaf(y) {
                total += tree.leaf_mass(y) / ls * self.zeta[y.0] * claim[y];
            }
        }
        total / self.zeta[s.0]
    }
}

/// `ζ_root = 1`, `ζ_z = ζ_x w_x(z) / q(z|x)`.
pub fn extract_state_price_density(tree: &Tree, prices: &OneStepPrices) -> Result<StatePriceDensity> {
    let mut zeta = vec![0.0; tree.len()];
    zeta[tree.root().0] = 1.0;
    for &x in tree.preorder() {
        if tree.is_leaf(x) {
            continue;
        }
        let w = prices
            .get(&x)
            .ok_or_else(|| Error::Invalid(format!("no one-step prices at `{}`", tree.label(x))))?;
        let children = tree.children(x);
        if w.len() != children.len() {
            return Err(Error::Invalid(format!(
                "`{}` has {} children but {} prices",
                tree.label(x),
                children.len(),
                w.len()
            )));
        }
        for ((&z, &wz), q) in children.iter().zip(w).zip(conditional_reference(tree, x)) {
            if !(wz.is_finite() && wz > 0.0) {
                return Err(Error::Arbitrage(format!(
                    "price {wz} for `{}` at `{}`: a claim paying only in that state would cost nothing",
                    tree.label(z),
                    tree.label(x)
                )));
            }
            zeta[z.0] = zeta[x.0] * wz / q;
        }
    }
    Ok(StatePriceDensity { zeta })
}

/// Largest gap between `prices` and the one-step prices induced by `spd`.
pub fn round_trip_residual(tree: &Tree, prices: &OneStepPrices, spd: &StatePriceDensity) -> f64 {
    let induced = spd.one_step_prices(tree);
    prices
        .iter()
        .flat_map(|(x, w)| w.iter().zip(&induced[x]).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{EntropicFamily, WorstCaseParams};
    use crate::optim::golden_section_max;
    use crate::tree::NodeRecord;

    fn one_period() -> (Arc<Tree>, Market) {
        let t = Arc::new(
            Tree::build(&[
                NodeRecord::new("r", None, 0.2),
                NodeRecord::new("u", Some("r"), 0.4),
                NodeRecord::new("d", Some("r"), 0.4),
            ])
            .unwrap(),
        );
        let m = Market::binomial(t.clone(), 1.0, 2.0, 0.5).unwrap();
        (t, m)
    }

    #[test]
    fn gains_examples() {
        let (t, m) = one_period();
        let theta = Strategy::from_flat(&m, t.root(), &[1.0]).unwrap();
        assert_eq!(gains(&m, t.root(), &theta).unwrap().values(), &[0.0, 1.0, -0.5]);
        let zero = Strategy::zeros(&m, t.root());
        assert_eq!(gains(&m, t.root(), &zero).unwrap().values(), &[0.0; 3]);
        let flat = Market::new(t.clone(), vec!["C".into()], vec![vec![3.0; 3]]).unwrap();
        assert_eq!(gains(&flat, t.root(), &theta).unwrap().values(), &[0.0; 3]);
        assert!(gains(&m, t.root(), &Strategy::default()).is_err());
    }

    #[test]
    fn gains_axioms_hold() {
        let t = Arc::new(Tree::regular(2, 2).unwrap());
        let m = Market::binomial(t.clone(), 1.0, 1.3, 0.8).unwrap();
        let rep = check_gains_axioms(&m, t.root(), 50, 3).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let (t1, m1) = one_period();
        assert!(check_gains_axioms(&m1, t1.root(), 20, 1).unwrap().passed());
    }

    #[test]
    fn access_value_matches_golden_section() {
        let (t, m) = one_period();
        let fam = EntropicFamily::new(t.clone(), 1.0).unwrap();
        let r = market_value(&fam, &m, t.root(), &CashBalance::zeros(&t), &AscentOptions::default()).unwrap();
        let (_, oracle) =
            golden_section_max(|th| -(0.2 + 0.4 * (-th).exp() + 0.4 * (th / 2.0).exp()).ln(), -10.0, 10.0, 1e-12);
        assert!(r.access_value > 0.0);
        assert!((r.access_value - oracle).abs() < 1e-10, "{} {oracle}", r.access_value);
        assert!(r.normalized.abs() < 1e-12);
        let rec = MarketFamily::new(&fam.assemble().unwrap(), m.clone(), AscentOptions::default()).unwrap();
        assert!((rec.value(t.root(), &CashBalance::zeros(&t)).unwrap() - oracle).abs() < 1e-10);
    }

    #[test]
    fn recursion_matches_direct_ascent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = Arc::new(Tree::random(&mut rng, 3, 2).unwrap());
        let m = Market::new(
            t.clone(),
            vec!["S".into()],
            vec![t.nodes().map(|_| rng.gen_range(0.5..1.5)).collect()],
        )
        .unwrap();
        let fam = EntropicFamily::new(t.clone(), 0.8).unwrap();
        let rec = MarketFamily::new(&fam.assemble().unwrap(), m.clone(), AscentOptions::default()).unwrap();
        let k = CashBalance::from_fn(&t, |_| rng.gen_range(-1.0..1.0));
        match market_value(&fam, &m, t.root(), &k, &AscentOptions::default()) {
            Ok(direct) => {
                assert!((direct.value - rec.value(t.root(), &k).unwrap()).abs() < 1e-8);
                let g = gains(&m, t.root(), &rec.strategy(t.root(), &k).unwrap()).unwrap();
                assert!((fam.value(t.root(), &k.add(&g)).unwrap() - direct.value).abs() < 1e-8);
            }
            Err(Error::Unbounded { .. }) => {
                assert!(rec.value(t.root(), &k).is_err());
            }
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn constant_prices_reduce_to_base() {
        let t = Arc::new(Tree::regular(2, 2).unwrap());
        let m = Market::new(t.clone(), vec!["C".into()], vec![vec![1.0; 7]]).unwrap();
        let fam = EntropicFamily::new(t.clone(), 1.0).unwrap();
        let k = CashBalance::from_fn(&t, |y| y.0 as f64 * 0.1);
        let r = market_value(&fam, &m, t.root(), &k, &AscentOptions::default()).unwrap();
        assert!((r.value - fam.entropic_value(t.root(), &k)).abs() < 1e-14);
        assert!(r.access_value.abs() < 1e-14);
    }

    #[test]
    fn hedgeable_claims_are_absorbed() {
        let t = Arc::new(Tree::regular(2, 2).unwrap());
        let m = Market::binomial(t.clone(), 1.0, 1.2, 0.9).unwrap();
        let fam = EntropicFamily::new(t.clone(), 1.0).unwrap();
        let theta = Strategy::from_flat(&m, t.root(), &[0.7, -1.1, 2.0]).unwrap();
        let k = gains(&m, t.root(), &theta).unwrap().scaled(-1.0);
        let r = market_value(&fam, &m, t.root(), &k, &AscentOptions::default()).unwrap();
        assert!((r.value - r.access_value).abs() < 1e-9);
        assert!(r.normalized.abs() < 1e-9);
    }

    #[test]
    fn arbitrage_is_flagged() {
        let (t, _) = one_period();
        let m = Market::new(t.clone(), vec!["S".into()], vec![vec![1.0, 2.0, 1.5]]).unwrap();
        let lin = WorstCaseParams::uniform(false).assemble(t.clone()).unwrap();
        let err = market_value(&lin, &m, t.root(), &CashBalance::zeros(&t), &AscentOptions::default()).unwrap_err();
        match err {
            Error::Unbounded { direction, .. } => assert!(direction[0] > 0.0),
            e => panic!("{e}"),
        }
        // the entropic value also charges cash at the root, so it stays bounded
        let fam = EntropicFamily::new(t.clone(), 1.0).unwrap();
        let r = market_value(&fam, &m, t.root(), &CashBalance::zeros(&t), &AscentOptions::default()).unwrap();
        assert!(r.access_value <= -(0.2f64).ln() + 1e-12);
    }

    #[test]
    fn market_axioms_entropic_and_worst() {
        let t = Arc::new(Tree::regular(2, 2).unwrap());
        let m = Market::binomial(t.clone(), 1.0, 1.25, 0.8).unwrap();
        let fam = EntropicFamily::new(t.clone(), 1.0).unwrap().assemble().unwrap();
        let rep = check_market_axioms(&fam, &m, &AxiomConfig::new(30, 5).with_tolerance(1e-5), &AscentOptions::default()).unwrap();
        assert!(rep.passed(), "{rep:?}");
        let worst = WorstCaseParams::uniform(true).assemble(t.clone()).unwrap();
        let cfg = AxiomConfig::new(10, 5).with_tolerance(1e-3);
        let _ = check_market_axioms(&worst, &m, &cfg, &AscentOptions::default());
    }

    #[test]
    fn state_price_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Tree::random(&mut rng, 3, 3).unwrap();
        let zeta: Vec<f64> = t.nodes().map(|_| rng.gen_range(0.2..3.0)).collect();
        let spd = StatePriceDensity::new(&t, zeta.clone()).unwrap();
        let prices = spd.one_step_prices(&t);
        let back = extract_state_price_density(&t, &prices).unwrap();
        for y in t.nodes() {
            assert!((back.get(y) - zeta[y.0] / zeta[t.root().0]).abs() < 1e-12);
        }
        assert!(round_trip_residual(&t, &prices, &back) < 1e-15);
        // pricing a terminal claim by iterated one-step prices
        let claim = CashBalance::from_fn(&t, |y| y.0 as f64);
        let mut v = claim.clone();
        for &x in t.preorder().iter().rev() {
            if !t.is_leaf(x) {
                v[x] = t.children(x).iter().zip(&prices[&x]).map(|(z, w)| w * v[*z]).sum();
            }
        }
        assert!((v[t.root()] - back.price(&t, t.root(), &claim)).abs() < 1e-10);
    }

    #[test]
    fn reference_prices_give_unit_density() {
        let t = Tree::regular(2, 3).unwrap();
        let prices: OneStepPrices = t.internal_nodes().map(|x| (x, conditional_reference(&t, x))).collect();
        let spd = extract_state_price_density(&t, &prices).unwrap();
        assert!(spd.values().iter().all(|z| (z - 1.0).abs() < 1e-15));
        let mut bad = prices.clone();
        bad.get_mut(&t.root()).unwrap()[1] = 0.0;
        assert!(matches!(extract_state_price_density(&t, &bad), Err(Error::Arbitrage(_))));
    }
}
