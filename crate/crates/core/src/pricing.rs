//! Eligible price systems, no-arbitrage certificates, consistent price
//! systems and the map between them and (measure, price) pairs.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::holdings::{add_holdings, Cells};
use crate::lp::{self, LinearProgram, LpStatus, MarginResult, Relation, Sense};
use crate::market::{dot, robust_na_check, Market};
use crate::par;
use crate::tree::{
    kahan_sum, xi_bar_node, AdaptedProcess, MeasureKind, MeasureQ, NodeIdx, ScenarioTree, Violation,
};

/// Tolerance on `S_{t,1} = 1`, on the price bound and on martingale
/// identities.
const PRICE_TOL: f64 = 1e-9;
/// Cash components of a consistent price system below this count as zero.
const ZERO_MASS: f64 = 1e-12;
/// Weight of the strictly consistent system mixed into a vertex that
/// leaves some subtree without mass.
const INTERIOR_PULL: f64 = 1e-3;

/// An adapted price process with cash as numéraire.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSystem {
    pub s: AdaptedProcess,
}

impl PriceSystem {
    pub fn new(tree: &ScenarioTree, values: Vec<Vec<f64>>) -> Result<Self> {
        Ok(Self {
            s: AdaptedProcess::new(tree, values)?,
        })
    }

    pub fn at(&self, n: NodeIdx) -> &[f64] {
        self.s.at(n)
    }

    /// `S_T·X` per leaf.
    pub fn terminal_payoff(&self, tree: &ScenarioTree, x: &crate::tree::Claim) -> Vec<f64> {
        tree.leaves()
            .iter()
            .zip(&x.values)
            .map(|(&leaf, v)| dot(self.at(leaf), v))
            .collect()
    }
}

/// Cash-normalization, dual-cone membership and the price bound, checked in
/// that order at every node.
pub fn validate_price_system(
    s: &PriceSystem,
    market: &Market,
) -> std::result::Result<(), Violation> {
    let tree = market.tree();
    let d = tree.assets();
    if s.s.values.len() != tree.len() || s.s.values.iter().any(|v| v.len() != d) {
        return Err(Violation::new("price system does not match the tree"));
    }
    for n in 0..tree.len() {
        if (s.at(n)[0] - 1.0).abs() > PRICE_TOL {
            return Err(Violation::at(tree.id(n), "cash component ≠ 1"));
        }
    }
    for n in 0..tree.len() {
        if !market.model().dual_contains(n, s.at(n)) {
            return Err(Violation::at(tree.id(n), "dual-cone membership fails"));
        }
    }
    let bounds = market
        .price_bounds()
        .map_err(|e| Violation::new(format!("price bound unavailable: {e}")))?;
    for n in 0..tree.len() {
        for (i, (&v, &b)) in s.at(n).iter().zip(bounds).enumerate().skip(1) {
            if v.abs() > b + PRICE_TOL {
                return Err(Violation::at(
                    tree.id(n),
                    format!("price of asset {} exceeds bound {b}", i + 1),
                ));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NaCertificate {
    pub holds: bool,
    /// Smallest leaf weight of the maximal-margin martingale measure.
    pub margin: Option<f64>,
    pub q: Option<MeasureQ>,
}

/// Equivalent martingale measure search on the whole tree.
pub fn na_check(s: &PriceSystem, tree: &ScenarioTree) -> Result<NaCertificate> {
    na_check_at(s, tree, tree.root())
}

/// Margin LP over node masses of the subtree at `n` with mass 1 at `n`,
/// one-step martingale rows for every risky asset and strict positivity of
/// leaf masses. The witness is returned on the whole tree only when `n` is
/// the root.
pub fn na_check_at(s: &PriceSystem, tree: &ScenarioTree, n: NodeIdx) -> Result<NaCertificate> {
    let d = tree.assets();
    let range = tree.subtree(n);
    let mut lp = LinearProgram::new(Sense::Minimize);
    let mass: Vec<usize> = range.clone().map(|_| lp.add_free(0.0)).collect();
    let var = |m: NodeIdx| mass[m - n];
    lp.add_row(vec![(var(n), 1.0)], Relation::Eq, 1.0);
    let mut strict = Vec::new();
    for m in range.clone() {
        let children = &tree.node(m).children;
        if children.is_empty() {
            strict.push(lp.add_row(vec![(var(m), 1.0)], Relation::Ge, 0.0));
            continue;
        }
        let mut flow = vec![(var(m), 1.0)];
        flow.extend(children.iter().map(|&c| (var(c), -1.0)));
        lp.add_row(flow, Relation::Eq, 0.0);
        for i in 1..d {
            let mut row = vec![(var(m), -s.at(m)[i])];
            row.extend(children.iter().map(|&c| (var(c), s.at(c)[i])));
            lp.add_row(row, Relation::Eq, 0.0);
        }
    }
    let res = lp::feasibility_with_margin(&lp, &strict)?;
    let q = match (&res.witness, res.feasible, n == tree.root()) {
        (Some(w), true, true) => {
            let weights: Vec<f64> = tree.leaves().iter().map(|&l| w[var(l)]).collect();
            Some(MeasureQ::from_unnormalized(tree, &weights)?)
        }
        _ => None,
    };
    Ok(NaCertificate {
        holds: res.feasible,
        margin: res.margin,
        q,
    })
}

/// Time-`t` certification: every time-t subtree admits an equivalent
/// martingale measure for `S`.
pub fn certify_from(s: &PriceSystem, tree: &ScenarioTree, t: usize) -> Result<bool> {
    tree.check_time(t)?;
    for &n in tree.nodes_at(t) {
        if !na_check_at(s, tree, n)?.holds {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Constraint template of the equivalent martingale measures of `S` over
/// terminal weights. Variables `0..num_leaves` are the leaf weights.
#[derive(Debug, Clone)]
pub struct EmmPolytope {
    pub lp: LinearProgram,
    pub normalization_row: usize,
    pub martingale_rows: Vec<usize>,
    /// Positivity rows `q_ω ≥ 0`, strict for equivalence.
    pub strict_rows: Vec<usize>,
}

impl EmmPolytope {
    /// Martingale rows with at least one nonzero coefficient.
    pub fn nontrivial_martingale_rows(&self) -> usize {
        self.martingale_rows
            .iter()
            .filter(|&&r| self.lp.rows[r].coeffs.iter().any(|&(_, a)| a.abs() > 1e-15))
            .count()
    }

    pub fn strict_feasibility(&self) -> Result<MarginResult> {
        Ok(lp::feasibility_with_margin(&self.lp, &self.strict_rows)?)
    }

    /// Membership of a weight vector, up to `tol`.
    pub fn contains(&self, q: &[f64], tol: f64) -> bool {
        self.lp.max_residual(q) <= tol
    }
}

pub fn emm_polytope(s: &PriceSystem, tree: &ScenarioTree) -> EmmPolytope {
    let d = tree.assets();
    let mut lp = LinearProgram::new(Sense::Minimize);
    let q: Vec<usize> = (0..tree.num_leaves()).map(|_| lp.add_free(0.0)).collect();
    let normalization_row = lp.add_row(q.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0);
    let mut martingale_rows = Vec::new();
    for m in 0..tree.len() {
        if tree.is_leaf(m) {
            continue;
        }
        for i in 1..d {
            let coeffs = tree
                .leaf_range(m)
                .map(|l| (q[l], s.at(tree.leaves()[l])[i] - s.at(m)[i]))
                .filter(|&(_, a)| a != 0.0)
                .collect();
            martingale_rows.push(lp.add_row(coeffs, Relation::Eq, 0.0));
        }
    }
    let strict_rows = q
        .iter()
        .map(|&v| lp.add_row(vec![(v, 1.0)], Relation::Ge, 0.0))
        .collect();
    EmmPolytope {
        lp,
        normalization_row,
        martingale_rows,
        strict_rows,
    }
}

/// An adapted P-martingale valued in the dual cones with `Z_{0,1} = 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistentPriceSystem {
    pub z: AdaptedProcess,
}

impl ConsistentPriceSystem {
    pub fn check(&self, market: &Market) -> std::result::Result<(), Violation> {
        let tree = market.tree();
        if (self.z.at(tree.root())[0] - 1.0).abs() > PRICE_TOL {
            return Err(Violation::at(tree.id(tree.root()), "cash component ≠ 1 at the root"));
        }
        for m in 0..tree.len() {
            if !market.model().dual_contains(m, self.z.at(m)) {
                return Err(Violation::at(tree.id(m), "dual-cone membership fails"));
            }
            if tree.is_leaf(m) {
                continue;
            }
            for i in 0..tree.assets() {
                let next = kahan_sum(
                    tree.node(m)
                        .children
                        .iter()
                        .map(|&c| tree.transition_prob(c) * self.z.at(c)[i]),
                );
                if (next - self.z.at(m)[i]).abs() > PRICE_TOL * (1.0 + next.abs()) {
                    return Err(Violation::at(tree.id(m), "not a P-martingale"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DualClass {
    /// Absolutely continuous measure.
    AbsolutelyContinuous,
    /// Equivalent measure.
    Equivalent,
    /// Equivalent martingale measure of `S` from time 0.
    EquivalentMartingale,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualPair {
    pub q: MeasureQ,
    pub s: PriceSystem,
    pub from_time: usize,
    pub class: DualClass,
}

impl DualPair {
    pub fn new(q: MeasureQ, s: PriceSystem, from_time: usize, tree: &ScenarioTree) -> Self {
        let class = if q.kind() != MeasureKind::Equivalent {
            DualClass::AbsolutelyContinuous
        } else if from_time == 0 && is_q_martingale(&q, &s, tree, 0) {
            DualClass::EquivalentMartingale
        } else {
            DualClass::Equivalent
        };
        Self {
            q,
            s,
            from_time,
            class,
        }
    }
}

/// `E_Q[S_{σ} | F_s] = S_s` at every node from time `from` where the
/// Q-mass is positive.
pub fn is_q_martingale(q: &MeasureQ, s: &PriceSystem, tree: &ScenarioTree, from: usize) -> bool {
    for m in 0..tree.len() {
        if tree.is_leaf(m) || tree.node(m).time < from || q.mass(tree, m) <= 0.0 {
            continue;
        }
        let qm = q.mass(tree, m);
        for i in 0..tree.assets() {
            let e = kahan_sum(
                tree.node(m)
                    .children
                    .iter()
                    .map(|&c| q.mass(tree, c) / qm * s.at(c)[i]),
            );
            if (e - s.at(m)[i]).abs() > 1e-8 * (1.0 + e.abs()) {
                return false;
            }
        }
    }
    true
}

/// `S_{s,i} = Z_{s,i} / Z_{s,1}` (1 where the cash component vanishes) and
/// `dQ/dP = Z_{T,1} / Z_{t,1}`, with Q agreeing with P on `F_t`.
pub fn cps_to_pair(z: &ConsistentPriceSystem, t: usize, tree: &ScenarioTree) -> Result<DualPair> {
    tree.check_time(t)?;
    let values = z
        .z
        .values
        .iter()
        .map(|v| {
            if v[0] > ZERO_MASS {
                let mut s: Vec<f64> = v.iter().map(|x| x / v[0]).collect();
                s[0] = 1.0;
                s
            } else {
                vec![1.0; v.len()]
            }
        })
        .collect();
    let s = PriceSystem::new(tree, values)?;
    let weights: Vec<f64> = tree
        .leaves()
        .iter()
        .map(|&leaf| {
            let a = tree.ancestor_at(leaf, t);
            let den = z.z.at(a)[0];
            let p = tree.node(leaf).prob;
            if den > ZERO_MASS {
                p * z.z.at(leaf)[0].max(0.0) / den
            } else {
                p
            }
        })
        .collect();
    let q = MeasureQ::from_unnormalized(tree, &weights)?;
    Ok(DualPair::new(q, s, t, tree))
}

/// `Z_s = ξ̄_{t,s}(Q) S_s` for `s ≥ t`, and the P-conditional expectation
/// of `Z_t` before `t`.
pub fn pair_to_cps(pair: &DualPair, t: usize, tree: &ScenarioTree) -> Result<ConsistentPriceSystem> {
    tree.check_time(t)?;
    let d = tree.assets();
    let mut values = vec![vec![0.0; d]; tree.len()];
    for m in 0..tree.len() {
        if tree.node(m).time >= t {
            let xi = xi_bar_node(&pair.q, tree, t, m);
            values[m] = pair.s.at(m).iter().map(|x| xi * x).collect();
        }
    }
    for m in 0..tree.len() {
        let tm = tree.node(m).time;
        if tm >= t {
            continue;
        }
        let pm = tree.node(m).prob;
        for i in 0..d {
            values[m][i] = kahan_sum(
                tree.nodes_at(t)
                    .iter()
                    .filter(|a| tree.subtree(m).contains(a))
                    .map(|&a| tree.node(a).prob / pm * pair.s.at(a)[i]),
            );
        }
    }
    Ok(ConsistentPriceSystem {
        z: AdaptedProcess::new(tree, values)?,
    })
}

/// One sampled price system with its certificates.
#[derive(Debug, Clone, Serialize)]
pub struct SampledSystem {
    pub index: usize,
    pub s: PriceSystem,
    pub z: ConsistentPriceSystem,
    pub pair: DualPair,
    pub certificate: NaCertificate,
}

/// Program over `w_ω = P(ω) Z_T(ω)` describing all consistent price
/// systems; returns the program and the variable index per (leaf, asset).
pub(crate) fn cps_program(market: &Market, root: NodeIdx) -> (LinearProgram, Vec<Vec<usize>>) {
    let tree = market.tree();
    let d = tree.assets();
    let mut lp = LinearProgram::new(Sense::Maximize);
    let w: Vec<Vec<usize>> = tree
        .leaf_range(root)
        .map(|_| (0..d).map(|_| lp.add_nonneg(0.0)).collect())
        .collect();
    lp.add_row(w.iter().map(|v| (v[0], 1.0)).collect(), Relation::Eq, 1.0);
    let first = tree.leaf_range(root).start;
    for m in tree.subtree(root) {
        for g in market.model().recession_generators(m) {
            if g.iter().all(|&x| x >= 0.0) {
                continue;
            }
            let mut coeffs = Vec::new();
            for l in tree.leaf_range(m) {
                for i in 0..d {
                    if g[i] != 0.0 {
                        coeffs.push((w[l - first][i], g[i]));
                    }
                }
            }
            lp.add_row(coeffs, Relation::Ge, 0.0);
        }
    }
    (lp, w)
}

/// Consistent price system from leaf variables of [`cps_program`] at the
/// root.
fn cps_from_leaf_weights(tree: &ScenarioTree, w: &[Vec<f64>]) -> Result<ConsistentPriceSystem> {
    let d = tree.assets();
    let values = (0..tree.len())
        .map(|m| {
            let pm = tree.node(m).prob;
            (0..d)
                .map(|i| kahan_sum(tree.leaf_range(m).map(|l| w[l][i])) / pm)
                .collect()
        })
        .collect();
    Ok(ConsistentPriceSystem {
        z: AdaptedProcess::new(tree, values)?,
    })
}

/// Vertices of the consistent-price-system polytope under seeded random
/// linear objectives, mapped to price systems. A vertex failing validation
/// or the no-arbitrage certificate (typically one with a massless subtree)
/// is moved [`INTERIOR_PULL`] of the way towards the strictly consistent
/// system of [`robust_na_check`] and kept if that passes. Duplicates
/// (values rounded to 9 decimals) keep their first index.
pub fn sample_price_systems(market: &Market, n: usize, seed: u64) -> Result<Vec<SampledSystem>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let tree = market.tree();
    let d = tree.assets();
    market.price_bounds()?;
    let (template, w) = cps_program(market, tree.root());
    let dim = tree.num_leaves() * d;
    // Leaf weights `P(ω) Z_T(ω)` of a strictly consistent system.
    let interior: Option<Vec<Vec<f64>>> = robust_na_check(market)?.witness.map(|z| {
        tree.leaves()
            .iter()
            .map(|&l| z.at(l).iter().map(|x| x * tree.node(l).prob).collect())
            .collect()
    });
    let accept = |leaf_w: &[Vec<f64>]| -> Result<Option<(ConsistentPriceSystem, DualPair, NaCertificate)>> {
        let z = cps_from_leaf_weights(tree, leaf_w)?;
        let pair = cps_to_pair(&z, 0, tree)?;
        if validate_price_system(&pair.s, market).is_err() {
            return Ok(None);
        }
        let certificate = na_check(&pair.s, tree)?;
        Ok(certificate.holds.then_some((z, pair, certificate)))
    };

    let drawn = par::try_map_indexed(n, |k| -> Result<Option<SampledSystem>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        dir.iter_mut().for_each(|x| *x /= norm);

        let mut lp = template.clone();
        for (l, vars) in w.iter().enumerate() {
            for (i, &v) in vars.iter().enumerate() {
                lp.objective[v] = dir[l * d + i];
            }
        }
        let sol = lp::solve(&lp)?;
        match sol.status {
            LpStatus::Optimal => {}
            LpStatus::Infeasible => {
                return Err(Error::Arbitrage("no consistent price system exists".into()))
            }
            _ => return Ok(None),
        }
        let leaf_w: Vec<Vec<f64>> = w
            .iter()
            .map(|vars| vars.iter().map(|&v| sol.primal[v].max(0.0)).collect())
            .collect();
        let mut found = accept(&leaf_w)?;
        if let (None, Some(inner)) = (&found, &interior) {
            let mixed: Vec<Vec<f64>> = leaf_w
                .iter()
                .zip(inner)
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (1.0 - INTERIOR_PULL) * x + INTERIOR_PULL * y)
                        .collect()
                })
                .collect();
            found = accept(&mixed)?;
        }
        let Some((z, pair, certificate)) = found else {
            return Ok(None);
        };
        Ok(Some(SampledSystem {
            index: k,
            s: pair.s.clone(),
            z,
            pair,
            certificate,
        }))
    })?;

    let mut seen = HashSet::new();
    Ok(drawn
        .into_iter()
        .flatten()
        .filter(|sys| seen.insert(rounded_key(&sys.s)))
        .collect())
}

fn rounded_key(s: &PriceSystem) -> String {
    let mut key = String::new();
    for v in &s.s.values {
        for x in v {
            let r = (x * 1e9).round() / 1e9;
            key.push_str(&format!("{:.9};", r + 0.0));
        }
    }
    key
}

/// `sup { |E_Q[S_T·X | F_t]| : ‖X‖_{K_T,t} ≤ 1 }` at every time-t node.
pub fn dual_norm(pair: &DualPair, t: usize, market: &Market) -> Result<Vec<f64>> {
    let tree = market.tree();
    tree.check_time(t)?;
    let d = tree.assets();
    let horizon = tree.horizon();
    let nodes = tree.nodes_at(t);
    par::try_map_indexed(nodes.len(), |k| -> Result<f64> {
        let n = nodes[k];
        let pn = tree.node(n).prob;
        let mut best: f64 = 0.0;
        for sign in [1.0, -1.0] {
            let mut lp = LinearProgram::new(Sense::Maximize);
            let x: Vec<Vec<usize>> = tree
                .leaf_range(n)
                .map(|l| {
                    let leaf = tree.leaves()[l];
                    let weight = tree.node(leaf).prob / pn * xi_bar_node(&pair.q, tree, t, leaf);
                    (0..d)
                        .map(|i| lp.add_free(sign * weight * pair.s.at(leaf)[i]))
                        .collect()
                })
                .collect();
            let cells = Cells::Recession(market.model());
            let upper = add_holdings(&mut lp, tree, n, horizon, &cells);
            let lower = add_holdings(&mut lp, tree, n, horizon, &cells);
            for (j, xv) in x.iter().enumerate() {
                for i in 0..d {
                    let cash = if i == 0 { 1.0 } else { 0.0 };
                    // e1 − X − H⁺ ≥ 0
                    let mut row: Vec<(usize, f64)> = upper[j][i].iter().map(|&(v, a)| (v, -a)).collect();
                    row.push((xv[i], -1.0));
                    lp.add_row(row, Relation::Ge, -cash);
                    // X + e1 − H⁻ ≥ 0
                    let mut row: Vec<(usize, f64)> = lower[j][i].iter().map(|&(v, a)| (v, -a)).collect();
                    row.push((xv[i], 1.0));
                    lp.add_row(row, Relation::Ge, -cash);
                }
            }
            let sol = lp::solve(&lp)?;
            if !sol.is_optimal() {
                return Err(Error::LpStatus {
                    status: sol.status,
                    context: "dual norm".into(),
                });
            }
            best = best.max(sol.value);
        }
        Ok(best)
    })
}
