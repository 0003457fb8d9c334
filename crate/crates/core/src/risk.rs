//! Risk measures: superhedging from acceptance sets, exact dual values over
//! consistent price systems, the frozen-price measures `π^S` and `φ^S`,
//! penalties, relevance and composed average value at risk.
//!
//! Every value is computed per node of the evaluation time as a separate
//! program over that node's subtree.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::holdings::{add_holdings, Cells};
use crate::lp::{self, LinearProgram, LpStatus, Relation, Sense};
use crate::market::{dot, Market, SolvencyModel};
use crate::par;
use crate::pricing::{na_check, pair_to_cps, DualPair, PriceSystem};
use crate::tree::{kahan_sum, xi_bar_node, Claim, NodeIdx, ScenarioTree};
use crate::value::Extended;

/// Smallest admissible AV@R level.
pub const LEVEL_FLOOR: f64 = 1e-3;

/// AV@R levels `λ^s` per step `s → s+1` (`s = 0..T-1`) and asset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvarLevels {
    levels: Vec<Vec<f64>>,
}

impl AvarLevels {
    pub fn new(levels: Vec<Vec<f64>>, horizon: usize, assets: usize) -> Result<Self> {
        if levels.len() != horizon {
            return Err(Error::Spec(format!(
                "expected {horizon} level vectors, got {}",
                levels.len()
            )));
        }
        for (s, l) in levels.iter().enumerate() {
            if l.len() != assets {
                return Err(Error::Spec(format!("levels at step {s} need {assets} entries")));
            }
            if let Some(v) = l.iter().find(|v| !(LEVEL_FLOOR..=1.0).contains(*v)) {
                return Err(Error::Spec(format!(
                    "level {v} at step {s} outside [{LEVEL_FLOOR}, 1]"
                )));
            }
        }
        Ok(Self { levels })
    }

    pub fn uniform(level: f64, horizon: usize, assets: usize) -> Result<Self> {
        Self::new(vec![vec![level; assets]; horizon], horizon, assets)
    }

    /// Levels used on the step leaving time `s`.
    pub fn at(&self, s: usize) -> &[f64] {
        &self.levels[s]
    }

    pub fn as_rows(&self) -> &[Vec<f64>] {
        &self.levels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum RiskSpec {
    /// Superhedging under proportional transaction costs (cone model).
    ShpProportional,
    /// Superhedging under polyhedral convex costs (region model).
    ShpConvex,
    /// Backward composition of one-step average value at risk.
    AvarComposed { levels: AvarLevels },
}

impl RiskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            RiskSpec::ShpProportional => "shp-proportional",
            RiskSpec::ShpConvex => "shp-convex",
            RiskSpec::AvarComposed { .. } => "avar-composed",
        }
    }

    pub fn is_coherent(&self) -> bool {
        !matches!(self, RiskSpec::ShpConvex)
    }

    pub fn is_superhedging(&self) -> bool {
        !matches!(self, RiskSpec::AvarComposed { .. })
    }

    /// The spec fits the market representation and its levels are valid.
    pub fn check(&self, market: &Market) -> Result<()> {
        match (self, market.model()) {
            (RiskSpec::ShpProportional, SolvencyModel::Cone(_))
            | (RiskSpec::ShpConvex, SolvencyModel::Region(_)) => Ok(()),
            (RiskSpec::AvarComposed { levels }, _) => {
                let tree = market.tree();
                AvarLevels::new(levels.levels.clone(), tree.horizon(), tree.assets()).map(|_| ())
            }
            (spec, _) => Err(Error::Spec(format!(
                "{} does not match a {} market",
                spec.name(),
                if market.model().is_conical() { "cone" } else { "region" }
            ))),
        }
    }
}

/// Values of a conditional risk measure at the nodes of one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskValue {
    pub time: usize,
    pub nodes: Vec<NodeIdx>,
    pub values: Vec<Extended>,
}

impl RiskValue {
    pub fn finite(&self) -> Option<Vec<f64>> {
        self.values.iter().map(|v| v.finite()).collect()
    }

    /// Finite values or a panic naming the flag; for tests and fixtures
    /// where infinity is a bug.
    pub fn expect_finite(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.unwrap_finite()).collect()
    }

    pub fn at_node(&self, n: NodeIdx) -> Option<Extended> {
        self.nodes.iter().position(|&m| m == n).map(|k| self.values[k])
    }

    /// Per-leaf vector of the values (each leaf gets its ancestor's value).
    pub fn lift(&self, tree: &ScenarioTree) -> Option<Vec<f64>> {
        Some(tree.lift_to_leaves(&self.finite()?, self.time))
    }
}

fn check_claim(x: &Claim, tree: &ScenarioTree) -> Result<()> {
    if x.num_leaves() != tree.num_leaves() || x.d != tree.assets() {
        return Err(Error::Dimension(format!(
            "claim with {} leaves of dimension {} on a tree with {} leaves and {} assets",
            x.num_leaves(),
            x.d,
            tree.num_leaves(),
            tree.assets()
        )));
    }
    Ok(())
}

fn per_node<F>(tree: &ScenarioTree, t: usize, f: F) -> Result<RiskValue>
where
    F: Fn(NodeIdx) -> Result<Extended> + Sync + Send,
{
    tree.check_time(t)?;
    let nodes = tree.nodes_at(t).to_vec();
    let values = par::try_map_indexed(nodes.len(), |k| f(nodes[k]))?;
    Ok(RiskValue {
        time: t,
        nodes,
        values,
    })
}

/// Minimal cash at each time-t node making `X` a sum of node-wise solvent
/// positions from `t` on.
pub fn rho_primal(x: &Claim, t: usize, spec: &RiskSpec, market: &Market) -> Result<RiskValue> {
    superhedging_only(spec, market)?;
    check_claim(x, market.tree())?;
    per_node(market.tree(), t, |n| rho_primal_node(x, n, market).map(Extended::Finite))
}

fn superhedging_only(spec: &RiskSpec, market: &Market) -> Result<()> {
    spec.check(market)?;
    if !spec.is_superhedging() {
        return Err(Error::Spec(
            "the acceptance-set program covers superhedging specs; composed AV@R is evaluated from price systems"
                .into(),
        ));
    }
    Ok(())
}

/// Superhedging value at a single node.
pub fn rho_primal_node(x: &Claim, n: NodeIdx, market: &Market) -> Result<f64> {
    let tree = market.tree();
    let d = tree.assets();
    let mut lp = LinearProgram::new(Sense::Minimize);
    let m = lp.add_free(1.0);
    let held = add_holdings(&mut lp, tree, n, tree.node(n).time, &Cells::Model(market.model()));
    for (k, l) in tree.leaf_range(n).enumerate() {
        for i in 0..d {
            // X + m e1 − H ≥ 0
            let mut row: Vec<(usize, f64)> = held[k][i].iter().map(|&(v, a)| (v, -a)).collect();
            if i == 0 {
                row.push((m, 1.0));
            }
            lp.add_row(row, Relation::Ge, -x.values[l][i]);
        }
    }
    let sol = lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.value),
        LpStatus::Infeasible | LpStatus::Unbounded => Err(Error::Assumption(format!(
            "superhedging program is {:?} at node {}",
            sol.status,
            tree.id(n)
        ))),
        status => Err(Error::LpStatus {
            status,
            context: format!("superhedging at node {}", tree.id(n)),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualOptions {
    /// Lower bound on the terminal cash density `Z_{T,1}` relative to the
    /// conditional reference probability; positive values restrict to
    /// equivalent measures.
    pub min_cash_density: f64,
}

/// Exact dual value: the supremum of `−E[Z_T·X | node]` over consistent
/// price systems of the subtree normalized to unit cash at the node.
pub fn rho_dual_exact(x: &Claim, t: usize, spec: &RiskSpec, market: &Market) -> Result<RiskValue> {
    rho_dual_exact_with(x, t, spec, market, DualOptions::default())
}

pub fn rho_dual_exact_with(
    x: &Claim,
    t: usize,
    spec: &RiskSpec,
    market: &Market,
    opts: DualOptions,
) -> Result<RiskValue> {
    superhedging_only(spec, market)?;
    check_claim(x, market.tree())?;
    per_node(market.tree(), t, |n| rho_dual_node(x, n, market, opts))
}

fn rho_dual_node(x: &Claim, n: NodeIdx, market: &Market, opts: DualOptions) -> Result<Extended> {
    let tree = market.tree();
    let d = tree.assets();
    let pn = tree.node(n).prob;
    let first = tree.leaf_range(n).start;
    let mut lp = LinearProgram::new(Sense::Maximize);
    // w_ω = P(ω | n) Z_T(ω)
    let w: Vec<Vec<usize>> = tree
        .leaf_range(n)
        .map(|l| (0..d).map(|i| lp.add_nonneg(-x.values[l][i])).collect())
        .collect();
    lp.add_row(w.iter().map(|v| (v[0], 1.0)).collect(), Relation::Eq, 1.0);
    if opts.min_cash_density > 0.0 {
        for (k, l) in tree.leaf_range(n).enumerate() {
            let p = tree.node(tree.leaves()[l]).prob / pn;
            lp.add_row(vec![(w[k][0], 1.0)], Relation::Ge, opts.min_cash_density * p);
        }
    }
    for m in tree.subtree(n) {
        let below = tree.leaf_range(m);
        match market.model() {
            SolvencyModel::Cone(cones) => {
                for g in &cones[m].generators {
                    if g.iter().all(|&a| a >= 0.0) {
                        continue;
                    }
                    let mut coeffs = Vec::new();
                    for l in below.clone() {
                        for i in 0..d {
                            if g[i] != 0.0 {
                                coeffs.push((w[l - first][i], g[i]));
                            }
                        }
                    }
                    lp.add_row(coeffs, Relation::Ge, 0.0);
                }
            }
            SolvencyModel::Region(regions) => {
                // Σ_{ω ≥ m} w_ω = Gᵀ μ with μ ≥ 0, paying μ·h.
                let r = &regions[m];
                let mu: Vec<usize> = r.h.iter().map(|&h| lp.add_nonneg(h)).collect();
                for i in 0..d {
                    let mut coeffs: Vec<(usize, f64)> =
                        below.clone().map(|l| (w[l - first][i], 1.0)).collect();
                    for (row, &v) in r.g.iter().zip(&mu) {
                        if row[i] != 0.0 {
                            coeffs.push((v, -row[i]));
                        }
                    }
                    lp.add_row(coeffs, Relation::Eq, 0.0);
                }
            }
        }
    }
    let sol = lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(Extended::Finite(sol.value)),
        LpStatus::Infeasible => Ok(Extended::NegInf),
        LpStatus::Unbounded => Ok(Extended::PosInf),
        status => Err(Error::LpStatus {
            status,
            context: format!("dual program at node {}", tree.id(n)),
        }),
    }
}

/// Frozen-price risk measure `π^S` for one price system, with the
/// no-arbitrage certificate and the node penalties computed once.
pub struct PiEngine<'a> {
    market: &'a Market,
    prices: &'a PriceSystem,
    spec: &'a RiskSpec,
    /// An equivalent martingale measure exists (superhedging specs).
    na: bool,
    /// `inf { S_m·z : z ∈ C_m }` per node.
    h_star: Vec<Extended>,
    /// Per node: the one-step AV@R constraint set from the node on admits an
    /// equivalent measure on the whole subtree.
    avar_equivalent: Vec<bool>,
}

impl<'a> PiEngine<'a> {
    pub fn new(market: &'a Market, prices: &'a PriceSystem, spec: &'a RiskSpec) -> Result<Self> {
        spec.check(market)?;
        let tree = market.tree();
        if prices.s.values.len() != tree.len() || prices.s.d != tree.assets() {
            return Err(Error::Dimension("price system does not match the tree".into()));
        }
        let (na, h_star, avar_equivalent) = match spec {
            RiskSpec::AvarComposed { levels } => {
                let ok = one_step_equivalence(tree, prices, levels);
                // Subtree flag: every internal node below admits positive weights.
                let mut sub = vec![true; tree.len()];
                for m in (0..tree.len()).rev() {
                    sub[m] = ok[m] && tree.node(m).children.iter().all(|&c| sub[c]);
                }
                (true, vec![Extended::Finite(0.0); tree.len()], sub)
            }
            _ => {
                let na = na_check(prices, tree)?.holds;
                let h = par::try_map_indexed(tree.len(), |m| {
                    market.model().support_at(m, prices.at(m))
                })?;
                (na, h, Vec::new())
            }
        };
        Ok(Self {
            market,
            prices,
            spec,
            na,
            h_star,
            avar_equivalent,
        })
    }

    pub fn no_arbitrage(&self) -> bool {
        self.na
    }

    pub fn prices(&self) -> &PriceSystem {
        self.prices
    }

    pub fn market(&self) -> &Market {
        self.market
    }

    /// `inf { S_m·z : z ∈ C_m }` per node (zeros for AV@R).
    pub fn h_star(&self) -> &[Extended] {
        &self.h_star
    }

    /// `π_t^S(X)` at every time-t node.
    pub fn pi(&self, x: &Claim, t: usize) -> Result<RiskValue> {
        check_claim(x, self.market.tree())?;
        let payoff = self.prices.terminal_payoff(self.market.tree(), x);
        self.phi(&payoff, t)
    }

    /// `φ_t^S(Z) = π_t^S(Z e1)` for a scalar terminal payoff.
    pub fn phi(&self, payoff: &[f64], t: usize) -> Result<RiskValue> {
        let tree = self.market.tree();
        if payoff.len() != tree.num_leaves() {
            return Err(Error::Dimension("payoff does not match the tree".into()));
        }
        per_node(tree, t, |n| self.phi_node(payoff, n))
    }

    /// `−β_t(Q,S)` contribution of the node penalties along each path below
    /// `n`; `None` if some penalty in the subtree is infinite.
    fn path_offsets(&self, n: NodeIdx) -> Option<Vec<f64>> {
        let tree = self.market.tree();
        let mut acc = vec![0.0; tree.subtree(n).len()];
        for m in tree.subtree(n) {
            let own = self.h_star[m].finite()?;
            let base = if m == n { 0.0 } else { acc[tree.node(m).parent.unwrap() - n] };
            acc[m - n] = base + own;
        }
        Some(tree.leaf_range(n).map(|l| acc[tree.leaves()[l] - n]).collect())
    }

    fn phi_node(&self, payoff: &[f64], n: NodeIdx) -> Result<Extended> {
        match self.spec {
            RiskSpec::AvarComposed { levels } => self.avar_node(payoff, n, levels),
            _ => self.shp_node(payoff, n),
        }
    }

    fn shp_node(&self, payoff: &[f64], n: NodeIdx) -> Result<Extended> {
        if !self.na {
            return Ok(Extended::NegInf);
        }
        let tree = self.market.tree();
        let Some(offsets) = self.path_offsets(n) else {
            return Ok(Extended::NegInf);
        };
        let first = tree.leaf_range(n).start;
        if tree.is_leaf(n) {
            return Ok(Extended::Finite(offsets[0] - payoff[first]));
        }
        let mut lp = LinearProgram::new(Sense::Maximize);
        let q: Vec<usize> = tree
            .leaf_range(n)
            .enumerate()
            .map(|(k, l)| lp.add_nonneg(offsets[k] - payoff[l]))
            .collect();
        lp.add_row(q.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0);
        for m in tree.subtree(n) {
            if tree.is_leaf(m) {
                continue;
            }
            for i in 1..tree.assets() {
                let sm = self.prices.at(m)[i];
                let coeffs = tree
                    .leaf_range(m)
                    .map(|l| (q[l - first], self.prices.at(tree.leaves()[l])[i] - sm))
                    .filter(|&(_, a)| a != 0.0)
                    .collect();
                lp.add_row(coeffs, Relation::Eq, 0.0);
            }
        }
        let sol = lp::solve(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(Extended::Finite(sol.value)),
            LpStatus::Infeasible => Ok(Extended::NegInf),
            status => Err(Error::LpStatus {
                status,
                context: format!("frozen-price program at node {}", tree.id(n)),
            }),
        }
    }

    /// Joint program over node masses of the subtree with the one-step
    /// constraints `λ S_{c,i} Q(c) ≤ p(c|m) S_{m,i} Q(m)`.
    fn avar_node(&self, payoff: &[f64], n: NodeIdx, levels: &AvarLevels) -> Result<Extended> {
        let tree = self.market.tree();
        if !self.avar_equivalent[n] {
            return Ok(Extended::NegInf);
        }
        let first = tree.leaf_range(n).start;
        if tree.is_leaf(n) {
            return Ok(Extended::Finite(-payoff[first]));
        }
        let mut lp = LinearProgram::new(Sense::Maximize);
        let mass: Vec<usize> = tree
            .subtree(n)
            .map(|m| {
                let cost = if tree.is_leaf(m) {
                    -payoff[tree.leaf_range(m).start]
                } else {
                    0.0
                };
                lp.add_nonneg(cost)
            })
            .collect();
        let var = |m: NodeIdx| mass[m - n];
        lp.add_row(vec![(var(n), 1.0)], Relation::Eq, 1.0);
        for m in tree.subtree(n) {
            let children = &tree.node(m).children;
            if children.is_empty() {
                continue;
            }
            let mut flow = vec![(var(m), 1.0)];
            flow.extend(children.iter().map(|&c| (var(c), -1.0)));
            lp.add_row(flow, Relation::Eq, 0.0);
            let lam = levels.at(tree.node(m).time);
            for &c in children {
                let pc = tree.transition_prob(c);
                for i in 0..tree.assets() {
                    let sc = self.prices.at(c)[i];
                    if sc == 0.0 {
                        continue;
                    }
                    lp.add_row(
                        vec![(var(c), lam[i] * sc), (var(m), -pc * self.prices.at(m)[i])],
                        Relation::Le,
                        0.0,
                    );
                }
            }
        }
        let sol = lp::solve(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(Extended::Finite(sol.value)),
            LpStatus::Infeasible => Ok(Extended::NegInf),
            status => Err(Error::LpStatus {
                status,
                context: format!("AV@R program at node {}", tree.id(n)),
            }),
        }
    }
}

/// Upper bounds on one-step conditional weights:
/// `q_c ≤ min_i p(c|m) S_{m,i} / (λ_i S_{c,i})`.
pub fn one_step_caps(tree: &ScenarioTree, prices: &PriceSystem, levels: &AvarLevels, m: NodeIdx) -> Vec<f64> {
    let lam = levels.at(tree.node(m).time);
    tree.node(m)
        .children
        .iter()
        .map(|&c| {
            let pc = tree.transition_prob(c);
            (0..tree.assets())
                .filter(|&i| prices.at(c)[i] != 0.0)
                .map(|i| pc * prices.at(m)[i] / (lam[i] * prices.at(c)[i]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn one_step_equivalence(tree: &ScenarioTree, prices: &PriceSystem, levels: &AvarLevels) -> Vec<bool> {
    (0..tree.len())
        .map(|m| {
            if tree.is_leaf(m) {
                return true;
            }
            let caps = one_step_caps(tree, prices, levels, m);
            caps.iter().all(|&u| u > 0.0) && kahan_sum(caps.iter().map(|u| u.min(1.0))) >= 1.0 - 1e-12
        })
        .collect()
}

/// `π_t^S(X)` at every time-t node.
pub fn pi_s(x: &Claim, prices: &PriceSystem, t: usize, spec: &RiskSpec, market: &Market) -> Result<RiskValue> {
    PiEngine::new(market, prices, spec)?.pi(x, t)
}

/// `φ_t^S(Z)` for a scalar terminal payoff.
pub fn phi_s(payoff: &[f64], prices: &PriceSystem, t: usize, spec: &RiskSpec, market: &Market) -> Result<RiskValue> {
    PiEngine::new(market, prices, spec)?.phi(payoff, t)
}

/// `β_t(Q,S)` at every time-t node.
pub fn penalty_beta(pair: &DualPair, t: usize, spec: &RiskSpec, market: &Market) -> Result<RiskValue> {
    spec.check(market)?;
    let tree = market.tree();
    tree.check_time(t)?;
    match spec {
        RiskSpec::ShpProportional => {
            let z = pair_to_cps(pair, t, tree)?;
            per_node(tree, t, |n| {
                let ok = tree
                    .subtree(n)
                    .all(|m| market.model().dual_contains(m, z.z.at(m)));
                Ok(if ok { Extended::Finite(0.0) } else { Extended::PosInf })
            })
        }
        RiskSpec::ShpConvex => {
            let mut sums: Vec<Option<Vec<f64>>> = vec![Some(Vec::new()); tree.nodes_at(t).len()];
            for s in t..=tree.horizon() {
                let sigma = crate::market::support_sigma(&pair.q, &pair.s.s, t, s, market)?;
                for (acc, v) in sums.iter_mut().zip(sigma) {
                    match (acc.as_mut(), v) {
                        (Some(terms), Extended::Finite(x)) => terms.push(x),
                        _ => *acc = None,
                    }
                }
            }
            Ok(RiskValue {
                time: t,
                nodes: tree.nodes_at(t).to_vec(),
                values: sums
                    .into_iter()
                    .map(|s| match s {
                        Some(terms) => Extended::Finite(-kahan_sum(terms) + 0.0),
                        None => Extended::PosInf,
                    })
                    .collect(),
            })
        }
        RiskSpec::AvarComposed { levels } => per_node(tree, t, |n| {
            for m in tree.subtree(n) {
                let lam = levels.at(tree.node(m).time.min(tree.horizon().saturating_sub(1)));
                for &c in &tree.node(m).children {
                    let xi = xi_bar_node(&pair.q, tree, tree.node(m).time, c);
                    for i in 0..tree.assets() {
                        let rhs = lam[i] * xi * pair.s.at(c)[i];
                        if pair.s.at(m)[i] < rhs - 1e-9 * (1.0 + rhs.abs()) {
                            return Ok(Extended::PosInf);
                        }
                    }
                }
            }
            Ok(Extended::Finite(0.0))
        }),
    }
}

/// Gap between a sampled lower bound and the exact value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub reference: RiskValue,
    /// `reference − sampled` per node, when both are finite.
    pub gaps: Vec<Option<f64>>,
    pub max_gap: Option<f64>,
    pub min_gap: Option<f64>,
}

/// Node-wise maximum of `π^S` over price systems, with the gap to the exact
/// dual value (superhedging) or to the backward composition (AV@R).
pub fn rho_from_samples(
    x: &Claim,
    t: usize,
    spec: &RiskSpec,
    market: &Market,
    samples: &[PriceSystem],
) -> Result<(RiskValue, GapReport)> {
    let value = max_over_samples(market, t, samples, |s| pi_s(x, s, t, spec, market))?;
    let reference = match spec {
        RiskSpec::AvarComposed { levels } => avar_composed(x, levels, t, market, samples)?,
        _ => rho_dual_exact(x, t, spec, market)?,
    };
    let gaps: Vec<Option<f64>> = reference
        .values
        .iter()
        .zip(&value.values)
        .map(|(r, v)| Some(r.finite()? - v.finite()?))
        .collect();
    let finite: Vec<f64> = gaps.iter().flatten().copied().collect();
    let max_gap = finite.iter().copied().reduce(f64::max);
    let min_gap = finite.iter().copied().reduce(f64::min);
    Ok((
        value,
        GapReport {
            reference,
            gaps,
            max_gap,
            min_gap,
        },
    ))
}

pub(crate) fn max_over_samples<F>(
    market: &Market,
    t: usize,
    samples: &[PriceSystem],
    f: F,
) -> Result<RiskValue>
where
    F: Fn(&PriceSystem) -> Result<RiskValue> + Sync + Send,
{
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let all = par::try_map_indexed(samples.len(), |k| f(&samples[k]))?;
    let tree = market.tree();
    let mut values = vec![Extended::NegInf; tree.nodes_at(t).len()];
    for rv in &all {
        for (acc, v) in values.iter_mut().zip(&rv.values) {
            *acc = acc.max(*v);
        }
    }
    Ok(RiskValue {
        time: t,
        nodes: tree.nodes_at(t).to_vec(),
        values,
    })
}

/// Outcome of the relevance search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Relevance {
    pub relevant: bool,
    /// Leaf whose losses are invisible to the risk measure.
    pub witness: Option<String>,
    pub epsilon: Option<f64>,
}

pub const DEFAULT_EPSILON_GRID: [f64; 3] = [1e-3, 1e-1, 1.0];

/// Checks `ρ_t(−ε 1_D e1) > ρ_t(0)` on the node containing `D` for every
/// leaf `D` and every `ε` in the grid.
pub fn relevance_check(t: usize, spec: &RiskSpec, market: &Market, eps_grid: &[f64]) -> Result<Relevance> {
    if !spec.is_superhedging() {
        return Err(Error::Unsupported(
            "relevance is checked through the acceptance-set program (superhedging specs)".into(),
        ));
    }
    superhedging_only(spec, market)?;
    let tree = market.tree();
    tree.check_time(t)?;
    let zero = Claim::zero(tree);
    let base = rho_primal(&zero, t, spec, market)?;
    let cases: Vec<(usize, f64)> = (0..tree.num_leaves())
        .flat_map(|l| eps_grid.iter().map(move |&e| (l, e)))
        .collect();
    let flags = par::try_map_indexed(cases.len(), |k| -> Result<bool> {
        let (l, eps) = cases[k];
        let mut amounts = vec![0.0; tree.num_leaves()];
        amounts[l] = -eps;
        let a = tree.ancestor_at(tree.leaves()[l], t);
        let v = rho_primal_node(&Claim::cash(tree, &amounts), a, market)?;
        let b = base.at_node(a).and_then(Extended::finite).unwrap_or(0.0);
        Ok(v > b + 1e-9)
    })?;
    Ok(match flags.iter().position(|&ok| !ok) {
        None => Relevance {
            relevant: true,
            witness: None,
            epsilon: None,
        },
        Some(k) => Relevance {
            relevant: false,
            witness: Some(tree.id(tree.leaves()[cases[k].0]).to_string()),
            epsilon: Some(cases[k].1),
        },
    })
}

/// Best one-step weights for values `v` under caps `u`: fill children in
/// decreasing value order. Returns `None` when the caps cannot reach mass 1.
pub fn one_step_greedy(values: &[f64], caps: &[f64]) -> Option<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut left = 1.0;
    let mut total = 0.0;
    for k in order {
        let take = caps[k].min(left).max(0.0);
        total += take * values[k];
        left -= take;
        if left <= 0.0 {
            return Some(total);
        }
    }
    (left <= 1e-12).then_some(total)
}

/// One-step AV@R value at node `m`: `max Σ q_c v_c` over conditional
/// weights with the level caps, solved as a program.
pub fn one_step_avar(
    tree: &ScenarioTree,
    prices: &PriceSystem,
    levels: &AvarLevels,
    m: NodeIdx,
    child_values: &[Extended],
) -> Result<Extended> {
    if child_values.iter().any(|v| !v.is_finite()) {
        return Ok(Extended::NegInf);
    }
    let caps = one_step_caps(tree, prices, levels, m);
    if caps.iter().any(|&u| u <= 0.0) {
        return Ok(Extended::NegInf);
    }
    let mut lp = LinearProgram::new(Sense::Maximize);
    let q: Vec<usize> = child_values
        .iter()
        .zip(&caps)
        .map(|(v, &u)| lp.add_var(0.0, u.min(1.0), v.unwrap_finite()))
        .collect();
    lp.add_row(q.iter().map(|&v| (v, 1.0)).collect(), Relation::Eq, 1.0);
    let sol = lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(Extended::Finite(sol.value)),
        LpStatus::Infeasible => Ok(Extended::NegInf),
        status => Err(Error::LpStatus {
            status,
            context: format!("one-step AV@R at node {}", tree.id(m)),
        }),
    }
}

/// Backward composition for one price system: `−S_T·X` at the leaves and
/// one-step AV@R values above, at every node from time `t` on.
pub fn avar_backward(
    x: &Claim,
    levels: &AvarLevels,
    t: usize,
    market: &Market,
    prices: &PriceSystem,
) -> Result<Vec<Extended>> {
    let tree = market.tree();
    let mut v = vec![Extended::NegInf; tree.len()];
    for (k, &leaf) in tree.leaves().iter().enumerate() {
        v[leaf] = Extended::Finite(-dot(prices.at(leaf), &x.values[k]));
    }
    for s in (t..tree.horizon()).rev() {
        for &m in tree.nodes_at(s) {
            let child: Vec<Extended> = tree.node(m).children.iter().map(|&c| v[c]).collect();
            v[m] = one_step_avar(tree, prices, levels, m, &child)?;
        }
    }
    Ok(v)
}

/// Composed AV@R: backward recursion per price system, then the node-wise
/// maximum over the systems.
pub fn avar_composed(
    x: &Claim,
    levels: &AvarLevels,
    t: usize,
    market: &Market,
    samples: &[PriceSystem],
) -> Result<RiskValue> {
    let tree = market.tree();
    AvarLevels::new(levels.levels.clone(), tree.horizon(), tree.assets())?;
    check_claim(x, tree)?;
    tree.check_time(t)?;
    max_over_samples(market, t, samples, |s| {
        let all = avar_backward(x, levels, t, market, s)?;
        Ok(RiskValue {
            time: t,
            nodes: tree.nodes_at(t).to_vec(),
            values: tree.nodes_at(t).iter().map(|&n| all[n]).collect(),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::pricing::{sample_price_systems, DualPair};
    use crate::tree::{MeasureKind, MeasureQ};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn up_indicator(m: &Market, amount: f64) -> Claim {
        let tree = m.tree();
        let amounts: Vec<f64> = tree
            .leaves()
            .iter()
            .map(|&l| if tree.id(l) == "u" { amount } else { 0.0 })
            .collect();
        Claim::cash(tree, &amounts)
    }

    #[test]
    fn superhedging_examples() {
        let shp = RiskSpec::ShpProportional;
        let a = fixtures::model_a();
        let cash = Claim::cash(a.tree(), &[2.5, 2.5]);
        assert_abs_diff_eq!(rho_primal(&cash, 0, &shp, &a).unwrap().expect_finite()[0], -2.5, epsilon = 1e-9);
        let short = Claim::constant(a.tree(), &[0.0, -1.0]);
        assert_abs_diff_eq!(rho_primal(&short, 0, &shp, &a).unwrap().expect_finite()[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rho_dual_exact(&short, 0, &shp, &a).unwrap().expect_finite()[0], 1.0, epsilon = 1e-9);

        let b = fixtures::model_b();
        let x = up_indicator(&b, -1.0);
        assert_abs_diff_eq!(rho_primal(&x, 0, &shp, &b).unwrap().expect_finite()[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(rho_dual_exact(&x, 0, &shp, &b).unwrap().expect_finite()[0], 0.5, epsilon = 1e-9);
        let zero = Claim::zero(b.tree());
        assert_abs_diff_eq!(rho_dual_exact(&zero, 0, &shp, &b).unwrap().expect_finite()[0], 0.0, epsilon = 1e-12);

        assert!(matches!(rho_primal(&x, 0, &RiskSpec::ShpConvex, &b), Err(Error::Spec(_))));
    }

    #[test]
    fn frozen_price_examples() {
        let shp = RiskSpec::ShpProportional;
        let a = fixtures::model_a();
        let s = fixtures::model_a_prices(&a);
        let x = up_indicator(&a, -1.0);
        assert_abs_diff_eq!(pi_s(&x, &s, 0, &shp, &a).unwrap().expect_finite()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi_s(&Claim::zero(a.tree()), &s, 0, &shp, &a).unwrap().expect_finite()[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi_s(&[-1.0, 0.0], &s, 0, &shp, &a).unwrap().expect_finite()[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi_s(&[4.0, 4.0], &s, 0, &shp, &a).unwrap().expect_finite()[0], -4.0, epsilon = 1e-12);

        let b = fixtures::model_b();
        let corner = fixtures::model_b_corner_prices(&b);
        let x = up_indicator(&b, -1.0);
        assert_abs_diff_eq!(pi_s(&x, &corner, 0, &shp, &b).unwrap().expect_finite()[0], 0.5, epsilon = 1e-12);

        // No martingale measure: −∞.
        let mut bad = s.clone();
        bad.s.values[0][1] = 2.5;
        assert_eq!(pi_s(&x, &bad, 0, &shp, &a).unwrap().values, vec![Extended::NegInf]);
    }

    #[test]
    fn penalty_examples() {
        let a = fixtures::model_a();
        let tree = a.tree();
        let s = fixtures::model_a_prices(&a);
        let q = MeasureQ::new(tree, vec![1.0 / 3.0, 2.0 / 3.0], MeasureKind::Equivalent).unwrap();
        let pair = DualPair::new(q, s.clone(), 0, tree);
        assert_eq!(penalty_beta(&pair, 0, &RiskSpec::ShpProportional, &a).unwrap().values, vec![Extended::Finite(0.0)]);

        let b = fixtures::model_b();
        let mut off = fixtures::model_b_corner_prices(&b);
        off.s.values[1][1] = 2.5;
        let pair = DualPair::new(MeasureQ::reference(b.tree()), off, 0, b.tree());
        assert_eq!(penalty_beta(&pair, 0, &RiskSpec::ShpProportional, &b).unwrap().values, vec![Extended::PosInf]);

        // Unit levels: only the reference measure keeps constant prices.
        let flat = PriceSystem::new(tree, vec![vec![1.0, 1.0]; 3]).unwrap();
        let spec = RiskSpec::AvarComposed { levels: AvarLevels::uniform(1.0, 1, 2).unwrap() };
        let p = DualPair::new(MeasureQ::reference(tree), flat.clone(), 0, tree);
        assert_eq!(penalty_beta(&p, 0, &spec, &a).unwrap().values, vec![Extended::Finite(0.0)]);
        let q = MeasureQ::new(tree, vec![0.4, 0.6], MeasureKind::Equivalent).unwrap();
        let p = DualPair::new(q, flat, 0, tree);
        assert_eq!(penalty_beta(&p, 0, &spec, &a).unwrap().values, vec![Extended::PosInf]);

        // Shifted region: one free unit of cash per node along the path.
        let shifted = fixtures::model_b_shifted_region();
        let corner = fixtures::model_b_corner_prices(&shifted);
        let q = MeasureQ::new(shifted.tree(), vec![0.5, 0.5], MeasureKind::Equivalent).unwrap();
        let p = DualPair::new(q, corner, 0, shifted.tree());
        let beta = penalty_beta(&p, 0, &RiskSpec::ShpConvex, &shifted).unwrap();
        assert_abs_diff_eq!(beta.expect_finite()[0], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn convex_superhedging_matches_dual_and_frozen_prices() {
        let m = fixtures::model_b_shifted_region();
        let spec = RiskSpec::ShpConvex;
        let x = up_indicator(&m, -1.0);
        let primal = rho_primal(&x, 0, &spec, &m).unwrap().expect_finite()[0];
        let dual = rho_dual_exact(&x, 0, &spec, &m).unwrap().expect_finite()[0];
        // Two free cash units along every path.
        assert_abs_diff_eq!(primal, 0.5 - 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(dual, primal, epsilon = 1e-9);
        let corner = fixtures::model_b_corner_prices(&m);
        assert_abs_diff_eq!(pi_s(&x, &corner, 0, &spec, &m).unwrap().expect_finite()[0], primal, epsilon = 1e-9);
    }

    #[test]
    fn sampled_supremum_examples() {
        let shp = RiskSpec::ShpProportional;
        let a = fixtures::model_a();
        let s = vec![fixtures::model_a_prices(&a)];
        let x = Claim::constant(a.tree(), &[0.3, -0.7]);
        let (_, gap) = rho_from_samples(&x, 0, &shp, &a, &s).unwrap();
        assert!(gap.max_gap.unwrap().abs() < 1e-9);

        let b = fixtures::model_b();
        let x = up_indicator(&b, -1.0);
        let corner = vec![fixtures::model_b_corner_prices(&b)];
        let (_, gap) = rho_from_samples(&x, 0, &shp, &b, &corner).unwrap();
        assert!(gap.max_gap.unwrap().abs() < 1e-9);
        let inner = vec![PriceSystem::new(b.tree(), vec![vec![1.0, 1.0], vec![1.0, 2.0], vec![1.0, 0.5]]).unwrap()];
        let (v, gap) = rho_from_samples(&x, 0, &shp, &b, &inner).unwrap();
        assert!(gap.min_gap.unwrap() > 1e-3);
        assert_abs_diff_eq!(v.expect_finite()[0], 1.0 / 3.0, epsilon = 1e-9);
        assert!(matches!(rho_from_samples(&x, 0, &shp, &b, &[]), Err(Error::EmptySamples)));
    }

    #[test]
    fn relevance_examples() {
        let shp = RiskSpec::ShpProportional;
        for m in [fixtures::model_a(), fixtures::model_b()] {
            let r = relevance_check(0, &shp, &m, &DEFAULT_EPSILON_GRID).unwrap();
            assert!(r.relevant && r.witness.is_none());
        }
        let r = relevance_check(0, &shp, &fixtures::irrelevant_market(), &DEFAULT_EPSILON_GRID).unwrap();
        assert!(!r.relevant);
        assert_eq!(r.witness.as_deref(), Some("d"));
    }

    #[test]
    fn equivalent_restriction_keeps_value_on_relevant_markets() {
        let shp = RiskSpec::ShpProportional;
        let b = fixtures::model_b();
        let x = up_indicator(&b, -1.0);
        let free = rho_dual_exact(&x, 0, &shp, &b).unwrap().expect_finite()[0];
        let strict = rho_dual_exact_with(&x, 0, &shp, &b, DualOptions { min_cash_density: 1e-8 })
            .unwrap()
            .expect_finite()[0];
        assert!((free - strict).abs() < 1e-6);
    }

    #[test]
    fn avar_examples() {
        let a = fixtures::model_a();
        let tree = a.tree();
        let levels = AvarLevels::uniform(0.5, 1, 2).unwrap();
        let s = vec![fixtures::model_a_prices(&a)];
        let x = Claim::constant(tree, &[0.2, -0.4]);
        let composed = avar_composed(&x, &levels, 0, &a, &s).unwrap().expect_finite()[0];
        // T = 1: a single one-step program.
        let child = [Extended::Finite(-0.2 + 0.8), Extended::Finite(-0.2 + 0.2)];
        let one = one_step_avar(tree, &s[0], &levels, 0, &child).unwrap().unwrap_finite();
        assert_eq!(composed, one);
        let caps = one_step_caps(tree, &s[0], &levels, 0);
        assert_abs_diff_eq!(one, one_step_greedy(&[0.6, 0.0], &caps).unwrap(), epsilon = 1e-12);

        let cash = Claim::cash(tree, &[1.5, 1.5]);
        assert_abs_diff_eq!(avar_composed(&cash, &levels, 0, &a, &s).unwrap().expect_finite()[0], -1.5, epsilon = 1e-12);

        assert!(AvarLevels::uniform(0.0, 1, 2).is_err());
        assert!(matches!(avar_composed(&cash, &levels, 0, &a, &[]), Err(Error::EmptySamples)));
    }

    #[test]
    fn avar_recursion_matches_joint_program() {
        let c = fixtures::model_c();
        let tree = c.tree();
        let levels = AvarLevels::new(vec![vec![0.7, 0.5], vec![0.4, 0.9]], 2, 2).unwrap();
        let spec = RiskSpec::AvarComposed { levels: levels.clone() };
        let samples: Vec<PriceSystem> = sample_price_systems(&c, 8, 5).unwrap().into_iter().map(|s| s.s).collect();
        let x = Claim::new(
            tree,
            (0..tree.num_leaves()).map(|k| vec![(k as f64) - 1.5, 0.3 * k as f64 - 0.2]).collect(),
        )
        .unwrap();
        for s in &samples {
            for t in 0..=2 {
                let joint = pi_s(&x, s, t, &spec, &c).unwrap();
                let all = avar_backward(&x, &levels, t, &c, s).unwrap();
                for (k, &n) in tree.nodes_at(t).iter().enumerate() {
                    match (joint.values[k], all[n]) {
                        (Extended::Finite(a), Extended::Finite(b)) => assert_abs_diff_eq!(a, b, epsilon = 1e-9),
                        (a, b) => assert_eq!(a, b),
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn greedy_matches_one_step_program(
            v in prop::collection::vec(-5.0f64..5.0, 2..5),
            caps in prop::collection::vec(0.05f64..1.0, 4),
        ) {
            let n = v.len();
            let caps = &caps[..n];
            let mut lp = LinearProgram::new(Sense::Maximize);
            let q: Vec<usize> = (0..n).map(|k| lp.add_var(0.0, caps[k], v[k])).collect();
            lp.add_row(q.iter().map(|&x| (x, 1.0)).collect(), Relation::Eq, 1.0);
            let sol = lp::solve(&lp).unwrap();
            match one_step_greedy(&v, caps) {
                Some(g) => prop_assert!((sol.value - g).abs() < 1e-9),
                None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
            }
        }
    }
}
