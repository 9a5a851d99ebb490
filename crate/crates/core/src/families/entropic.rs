//! Relative-entropy valuations.
//!
//! With reference weights `p` on every node and risk aversion `γ`,
//!
//! ```text
//! π_x(K)  = -(1/γ) log Σ_{y ∈ x+} (p_y / p̄_x) exp(-γ K_y)
//! π̃_x(λ) =  (1/γ) Σ_{y ∈ x+} λ_y log(λ_y p̄_x / p_y)
//! ```
//!
//! where `p̄_x` is the mass of the subtree `x+`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tree::{CashBalance, NodeId, Tree};
use crate::valuation::{OneStep, Valuation, ValuationFamily};

/// `log Σ exp(a_i)` with the maximum factored out.
pub fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.map(|a| (a - max).exp()).sum::<f64>().ln()
}

/// Relative entropy `Σ λ log(λ/q)` with `0 log 0 = 0`; infinite when `λ`
/// charges a point where `q` vanishes or is not a probability.
pub fn relative_entropy(lambda: &[f64], reference: &[f64]) -> f64 {
    if !is_probability(lambda, 1e-9) {
        return f64::INFINITY;
    }
    lambda
        .iter()
        .zip(reference)
        .map(|(&l, &q)| {
            if l == 0.0 {
                0.0
            } else if q <= 0.0 {
                f64::INFINITY
            } else {
                l * (l / q).ln()
            }
        })
        .sum()
}

pub(crate) fn is_probability(v: &[f64], tol: f64) -> bool {
    v.iter().all(|x| *x >= 0.0 && x.is_finite()) && (v.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// Parameters of the relative-entropy family: `γ > 0` and the tree's node
/// weights as reference distribution.
#[derive(Clone, Debug)]
pub struct EntropicFamily {
    tree: Arc<Tree>,
    gamma: f64,
}

impl EntropicFamily {
    pub fn new(tree: Arc<Tree>, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Invalid(format!("risk aversion must be positive, got {gamma}")));
        }
        let total = tree.total_weight();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Invalid(format!(
                "reference weights must sum to one over the tree, got {total}"
            )));
        }
        Ok(EntropicFamily { tree, gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn shared_tree(&self) -> &Arc<Tree> {
        &self.tree
    }

    /// `p_{⪰x} / p̄_x` in the pre-order of `x+`.
    pub fn reference_density(&self, x: NodeId) -> Vec<f64> {
        let mass = self.tree.subtree_mass(x);
        self.tree.descendants(x).iter().map(|&y| self.tree.weight(y) / mass).collect()
    }

    /// Closed-form `π_x(K)`.
    pub fn entropic_value(&self, x: NodeId, cash: &CashBalance) -> f64 {
        let t = &self.tree;
        let mass = t.subtree_mass(x).ln();
        let g = self.gamma;
        -log_sum_exp(t.descendants(x).iter().map(|&y| t.weight(y).ln() - mass - g * cash[y])) / g
    }

    /// Closed-form `π̃_x(λ)` for `λ` given on `x+` in pre-order.
    pub fn entropic_dual(&self, x: NodeId, lambda: &[f64]) -> f64 {
        if lambda.len() != self.tree.descendants(x).len() {
            return f64::INFINITY;
        }
        relative_entropy(lambda, &self.reference_density(x)) / self.gamma
    }

    /// Minimiser of `λ·K + π̃_x(λ)`, proportional to `p̃_y exp(-γK_y)`; also
    /// the gradient of `π_x` at `K`.
    pub fn tilted_density(&self, x: NodeId, cash: &CashBalance) -> Vec<f64> {
        let t = &self.tree;
        let g = self.gamma;
        let logs: Vec<f64> = t.descendants(x).iter().map(|&y| t.weight(y).ln() - g * cash[y]).collect();
        let lse = log_sum_exp(logs.iter().copied());
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    /// A maximiser of `π_x(K) - λ·K` for strictly positive `λ` (unique up to
    /// constants): `K_y = -(1/γ) log(λ_y / p̃_y)`.
    pub fn dual_maximizer(&self, x: NodeId, lambda: &[f64]) -> Vec<f64> {
        self.reference_density(x)
            .iter()
            .zip(lambda)
            .map(|(q, l)| -(l / q).ln() / self.gamma)
            .collect()
    }

    /// One-step operator at internal node `x`: own mass `p_x` and child
    /// subtree masses `p̄_z`, normalised by `p̄_x`.
    pub fn one_step(&self, x: NodeId) -> EntropicStep {
        let t = &self.tree;
        let mass = t.subtree_mass(x);
        let mut weights = vec![t.weight(x) / mass];
        weights.extend(t.children(x).iter().map(|&z| t.subtree_mass(z) / mass));
        EntropicStep { gamma: self.gamma, weights }
    }

    pub fn assemble(&self) -> Result<ValuationFamily> {
        ValuationFamily::from_fn(self.tree.clone(), |_, x| Ok(Arc::new(self.one_step(x)) as Arc<dyn OneStep>))
    }
}

impl Valuation for EntropicFamily {
    fn tree(&self) -> &Tree {
        &self.tree
    }

    fn value(&self, x: NodeId, cash: &CashBalance) -> Result<f64> {
        self.tree.check(x)?;
        Ok(self.entropic_value(x, cash))
    }

    fn gradient(&self, x: NodeId, cash: &CashBalance) -> Result<Vec<f64>> {
        Ok(self.tilted_density(x, cash))
    }
}

/// `-(1/γ) log(w_x e^{-γ k_x} + Σ w_z e^{-γ k_z})`.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropicStep {
    pub gamma: f64,
    /// Own weight first, then one per child.
    pub weights: Vec<f64>,
}

impl OneStep for EntropicStep {
    fn evaluate(&self, own: f64, children: &[f64]) -> Result<f64> {
        if children.len() + 1 != self.weights.len() {
            return Err(Error::Invalid(format!(
                "entropic step expects {} children, got {}",
                self.weights.len() - 1,
                children.len()
            )));
        }
        let g = self.gamma;
        let terms = std::iter::once(own)
            .chain(children.iter().copied())
            .zip(&self.weights)
            .map(move |(k, w)| w.ln() - g * k);
        Ok(-log_sum_exp(terms) / g)
    }

    fn conjugate(&self, mu: &[f64]) -> Option<Result<(f64, Vec<f64>)>> {
        let v = relative_entropy(mu, &self.weights) / self.gamma;
        let grad = mu
            .iter()
            .zip(&self.weights)
            .map(|(m, w)| ((m / w).ln() + 1.0) / self.gamma)
            .collect();
        Some(Ok((v, grad)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::NodeRecord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

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
    fn closed_form_value_examples() {
        let fam = three_node();
        let t = fam.shared_tree().clone();
        assert!((fam.entropic_value(t.root(), &CashBalance::constant(&t, 2.5)) - 2.5).abs() < 1e-14);
        let k = CashBalance::from_values(&t, vec![0.0, 1.0, -1.0]).unwrap();
        let direct = -(0.2 + 0.4 * (-1f64).exp() + 0.4 * 1f64.exp()).ln();
        assert!((fam.entropic_value(t.root(), &k) - direct).abs() < 1e-15);
        assert!((direct + 0.360792).abs() < 1e-6);
        let small = EntropicFamily::new(t.clone(), 1e-4).unwrap();
        assert!(small.entropic_value(t.root(), &k).abs() < 1e-3);
    }

    #[test]
    fn closed_form_dual_examples() {
        let fam = three_node();
        let root = fam.shared_tree().root();
        assert!(fam.entropic_dual(root, &fam.reference_density(root)).abs() < 1e-15);
        let l = [0.2, 0.5, 0.3];
        let direct = 0.5 * (0.5f64 / 0.4).ln() + 0.3 * (0.3f64 / 0.4).ln();
        assert!((fam.entropic_dual(root, &l) - direct).abs() < 1e-15);
        assert!((direct - 0.0252672).abs() < 1e-6);
        assert!((fam.entropic_dual(root, &[0.0, 1.0, 0.0]) + 0.4f64.ln()).abs() < 1e-15);
        assert_eq!(fam.entropic_dual(root, &[0.5, 0.6, -0.1]), f64::INFINITY);
    }

    #[test]
    fn assembly_reproduces_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let depth = rng.gen_range(1..=4);
            let t = Arc::new(Tree::random(&mut rng, depth, 3).unwrap());
            let fam = EntropicFamily::new(t.clone(), rng.gen_range(0.2..3.0)).unwrap();
            let assembled = fam.assemble().unwrap();
            let k = CashBalance::from_fn(&t, |_| rng.gen_range(-5.0..5.0));
            let vals = assembled.values(&k).unwrap();
            for x in t.nodes() {
                assert!((vals[x.0] - fam.entropic_value(x, &k)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn one_step_examples() {
        let fam = three_node();
        let step = fam.one_step(fam.shared_tree().root());
        assert!((step.evaluate(0.7, &[0.7, 0.7]).unwrap() - 0.7).abs() < 1e-15);
        assert!(step.evaluate(0.0, &[0.0, 0.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn large_exponents_do_not_overflow() {
        let fam = three_node();
        let t = fam.shared_tree().clone();
        let k = CashBalance::from_values(&t, vec![-800.0, -799.0, 900.0]).unwrap();
        let v = fam.entropic_value(t.root(), &k);
        assert!(v.is_finite() && v < -798.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let fam = three_node();
        assert!(EntropicFamily::new(fam.shared_tree().clone(), 0.0).is_err());
        let t = Tree::regular(1, 2).unwrap().with_weights(&[0.5, 0.5, 0.5]).unwrap();
        assert!(EntropicFamily::new(Arc::new(t), 1.0).is_err());
    }
}
