//! Solvency cones and regions, dual-cone tests, the K-norm, robust
//! no-arbitrage and the support function of convex solvency regions.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::holdings::{add_holdings, Cells};
use crate::lp::{self, LinearProgram, LpStatus, Relation, Sense};
use crate::par;
use crate::tree::{kahan_sum, AdaptedProcess, Claim, MeasureQ, NodeIdx, ScenarioTree, Violation};
use crate::value::Extended;

/// Slack allowed in dual-cone membership.
pub const DUAL_TOL: f64 = 1e-10;

/// Exchange of asset `j` into `rate` units of asset `i` (0-based indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossRate {
    pub i: usize,
    pub j: usize,
    pub rate: f64,
}

/// Bid and ask of assets 2..d in units of cash at one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidAsk {
    pub bid: Vec<f64>,
    pub ask: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cross: Vec<CrossRate>,
}

impl BidAsk {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.bid.len() != self.ask.len() {
            return Err("bid and ask lengths differ".into());
        }
        for (k, (&b, &a)) in self.bid.iter().zip(&self.ask).enumerate() {
            if !(b > 0.0 && a >= b && a.is_finite()) {
                return Err(format!("asset {} needs 0 < bid <= ask, got [{b}, {a}]", k + 2));
            }
        }
        let d = self.bid.len() + 1;
        for c in &self.cross {
            if c.i >= d || c.j >= d || c.i == c.j || !(c.rate > 0.0 && c.rate.is_finite()) {
                return Err(format!("invalid cross rate {c:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvencyCone {
    pub generators: Vec<Vec<f64>>,
}

impl SolvencyCone {
    /// `{e_1..e_d} ∪ {ask_i e_1 − e_i, e_i − bid_i e_1}` plus any cross
    /// generators `rate e_i − e_j`.
    pub fn from_bid_ask(spec: &BidAsk) -> Result<Self> {
        spec.validate().map_err(Error::Assumption)?;
        let d = spec.bid.len() + 1;
        let unit = |i: usize| {
            let mut v = vec![0.0; d];
            v[i] = 1.0;
            v
        };
        let mut generators: Vec<Vec<f64>> = (0..d).map(unit).collect();
        for i in 1..d {
            let mut sell = unit(i);
            sell.iter_mut().for_each(|x| *x = -*x);
            sell[0] = spec.ask[i - 1];
            let mut buy = unit(i);
            buy[0] = -spec.bid[i - 1];
            generators.push(sell);
            generators.push(buy);
        }
        for c in &spec.cross {
            let mut g = vec![0.0; d];
            g[c.i] += c.rate;
            g[c.j] -= 1.0;
            generators.push(g);
        }
        Ok(Self { generators })
    }

    pub fn dim(&self) -> usize {
        self.generators.first().map_or(0, Vec::len)
    }

    /// `w·g ≥ −1e-10` for every generator.
    pub fn dual_contains(&self, w: &[f64]) -> bool {
        self.generators.iter().all(|g| dot(w, g) >= -DUAL_TOL)
    }

    /// Membership of `x` by a feasibility LP over generator weights.
    pub fn contains(&self, x: &[f64]) -> Result<bool> {
        let mut lp = LinearProgram::new(Sense::Minimize);
        let vars: Vec<usize> = self.generators.iter().map(|_| lp.add_nonneg(0.0)).collect();
        for (i, &xi) in x.iter().enumerate() {
            let coeffs = vars
                .iter()
                .zip(&self.generators)
                .filter(|(_, g)| g[i] != 0.0)
                .map(|(&v, g)| (v, g[i]))
                .collect();
            lp.add_row(coeffs, Relation::Eq, xi);
        }
        Ok(lp::solve(&lp)?.status == LpStatus::Optimal)
    }

    /// Largest δ ≤ 1 with `x ± δ e_k` in the cone for every k.
    pub fn interior_margin(&self, x: &[f64]) -> Result<f64> {
        let d = x.len();
        let mut lp = LinearProgram::new(Sense::Maximize);
        let delta = lp.add_var(0.0, 1.0, 1.0);
        for k in 0..d {
            for sign in [1.0, -1.0] {
                let vars: Vec<usize> = self.generators.iter().map(|_| lp.add_nonneg(0.0)).collect();
                for i in 0..d {
                    let mut coeffs: Vec<(usize, f64)> = vars
                        .iter()
                        .zip(&self.generators)
                        .filter(|(_, g)| g[i] != 0.0)
                        .map(|(&v, g)| (v, g[i]))
                        .collect();
                    if i == k {
                        coeffs.push((delta, -sign));
                    }
                    lp.add_row(coeffs, Relation::Eq, x[i]);
                }
            }
        }
        let sol = lp::solve(&lp)?;
        Ok(if sol.is_optimal() { sol.value } else { 0.0 })
    }

    /// Generators whose negatives also lie in the cone.
    pub fn lineality_mask(&self) -> Result<Vec<bool>> {
        self.generators
            .iter()
            .map(|g| {
                let neg: Vec<f64> = g.iter().map(|x| -x).collect();
                self.contains(&neg)
            })
            .collect()
    }
}

/// Convenience wrapper matching the bid-ask construction.
pub fn cone_from_bid_ask(spec: &BidAsk) -> Result<SolvencyCone> {
    SolvencyCone::from_bid_ask(spec)
}

/// `w ∈ K^+` for the cone at a node.
pub fn in_dual_cone(w: &[f64], cone: &SolvencyCone) -> bool {
    cone.dual_contains(w)
}

/// Polyhedral convex solvency region `{x : G x ≥ h}` with explicit
/// recession-cone generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolvencyRegion {
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub recession: Vec<Vec<f64>>,
}

impl SolvencyRegion {
    /// `inf { y·z : z ∈ C }`, `NegInf` when unbounded below.
    pub fn support(&self, y: &[f64]) -> Result<Extended> {
        let mut lp = LinearProgram::new(Sense::Minimize);
        let vars: Vec<usize> = y.iter().map(|&c| lp.add_free(c)).collect();
        for (row, &h) in self.g.iter().zip(&self.h) {
            let coeffs = row
                .iter()
                .zip(&vars)
                .filter(|(a, _)| **a != 0.0)
                .map(|(&a, &v)| (v, a))
                .collect();
            lp.add_row(coeffs, Relation::Ge, h);
        }
        let sol = lp::solve(&lp)?;
        match sol.status {
            LpStatus::Optimal => Ok(Extended::Finite(sol.value)),
            LpStatus::Unbounded => Ok(Extended::NegInf),
            status => Err(Error::LpStatus {
                status,
                context: "support function of a solvency region".into(),
            }),
        }
    }

    /// The shifted cone `{x : x + shift ∈ K}` written as an H-polyhedron
    /// with the cone's facets.
    pub fn shifted_cone(facets: &[Vec<f64>], generators: &[Vec<f64>], shift: &[f64]) -> Self {
        let h = facets.iter().map(|a| -dot(a, shift)).collect();
        Self {
            g: facets.to_vec(),
            h,
            recession: generators.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolvencyModel {
    Cone(Vec<SolvencyCone>),
    Region(Vec<SolvencyRegion>),
}

impl SolvencyModel {
    pub fn is_conical(&self) -> bool {
        matches!(self, SolvencyModel::Cone(_))
    }

    pub fn len(&self) -> usize {
        match self {
            SolvencyModel::Cone(c) => c.len(),
            SolvencyModel::Region(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Generators of the cone at `n`, or of the recession cone for regions.
    pub fn recession_generators(&self, n: NodeIdx) -> &[Vec<f64>] {
        match self {
            SolvencyModel::Cone(c) => &c[n].generators,
            SolvencyModel::Region(r) => &r[n].recession,
        }
    }

    /// Dual membership against the (recession) cone at `n`.
    pub fn dual_contains(&self, n: NodeIdx, w: &[f64]) -> bool {
        self.recession_generators(n)
            .iter()
            .all(|g| dot(w, g) >= -DUAL_TOL)
    }

    /// `inf { y·z : z ∈ C_n }`: 0 or −∞ for cones.
    pub fn support_at(&self, n: NodeIdx, y: &[f64]) -> Result<Extended> {
        match self {
            SolvencyModel::Cone(c) => Ok(if c[n].dual_contains(y) {
                Extended::Finite(0.0)
            } else {
                Extended::NegInf
            }),
            SolvencyModel::Region(r) => r[n].support(y),
        }
    }
}

/// A scenario tree together with its solvency model.
#[derive(Debug)]
pub struct Market {
    tree: ScenarioTree,
    model: SolvencyModel,
    bounds: OnceLock<Vec<f64>>,
}

impl Clone for Market {
    fn clone(&self) -> Self {
        Self {
            tree: self.tree.clone(),
            model: self.model.clone(),
            bounds: OnceLock::new(),
        }
    }
}

impl Market {
    pub fn new(tree: ScenarioTree, model: SolvencyModel) -> Result<Self> {
        if model.len() != tree.len() {
            return Err(Error::Dimension(format!(
                "model has {} cells for {} nodes",
                model.len(),
                tree.len()
            )));
        }
        let d = tree.assets();
        let bad = |v: &Vec<f64>| v.len() != d || v.iter().any(|x| !x.is_finite());
        match &model {
            SolvencyModel::Cone(cells) => {
                for (n, c) in cells.iter().enumerate() {
                    if c.generators.is_empty() || c.generators.iter().any(bad) {
                        return Err(Error::Dimension(format!(
                            "cone at node {} needs finite generators of length {d}",
                            tree.id(n)
                        )));
                    }
                }
            }
            SolvencyModel::Region(cells) => {
                for (n, r) in cells.iter().enumerate() {
                    if r.g.len() != r.h.len()
                        || r.g.iter().any(bad)
                        || r.recession.is_empty()
                        || r.recession.iter().any(bad)
                        || r.h.iter().any(|x| !x.is_finite())
                    {
                        return Err(Error::Dimension(format!(
                            "region at node {} is malformed",
                            tree.id(n)
                        )));
                    }
                }
            }
        }
        Ok(Self {
            tree,
            model,
            bounds: OnceLock::new(),
        })
    }

    /// Proportional-cost market from per-node bid-ask data.
    pub fn from_bid_ask(tree: ScenarioTree, quotes: &[BidAsk]) -> Result<Self> {
        let cones = quotes
            .iter()
            .map(SolvencyCone::from_bid_ask)
            .collect::<Result<Vec<_>>>()?;
        Self::new(tree, SolvencyModel::Cone(cones))
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn model(&self) -> &SolvencyModel {
        &self.model
    }

    pub fn assets(&self) -> usize {
        self.tree.assets()
    }

    /// Per-asset bound `max{‖e_i‖_{K_T,0}, 1}` on eligible prices; the
    /// cash entry is 1.
    pub fn price_bounds(&self) -> Result<&[f64]> {
        if let Some(b) = self.bounds.get() {
            return Ok(b);
        }
        let d = self.assets();
        let horizon = self.tree.horizon();
        let mut bounds = vec![1.0];
        for i in 1..d {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            let claim = Claim::constant(&self.tree, &e);
            let norm = k_norm_between(&claim, horizon, 0, self)?[0];
            bounds.push(norm.max(1.0));
        }
        Ok(self.bounds.get_or_init(|| bounds))
    }

    /// Standing assumptions on the model: cones contain the nonnegative
    /// orthant, and at the horizon every unit vector is interior.
    pub fn check_assumptions(&self) -> Result<std::result::Result<(), Violation>> {
        let d = self.assets();
        let horizon = self.tree.horizon();
        for n in 0..self.tree.len() {
            let id = self.tree.id(n);
            if let SolvencyModel::Region(r) = &self.model {
                let r = &r[n];
                if r.h.iter().any(|&h| h > 1e-12) {
                    return Ok(Err(Violation::at(id, "region does not contain 0")));
                }
                for rec in &r.recession {
                    if r.g.iter().any(|a| dot(a, rec) < -1e-12) {
                        return Ok(Err(Violation::at(
                            id,
                            "recession generator is not a recession direction",
                        )));
                    }
                }
            }
            let cone = SolvencyCone {
                generators: self.model.recession_generators(n).to_vec(),
            };
            for i in 0..d {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                if !cone.contains(&e)? {
                    return Ok(Err(Violation::at(
                        id,
                        format!("cone does not contain e{}", i + 1),
                    )));
                }
                if self.tree.node(n).time == horizon
                    && cone.interior_margin(&e)? <= lp::STRICT_MARGIN
                {
                    return Ok(Err(Violation::at(
                        id,
                        format!("e{} is not interior to the terminal cone", i + 1),
                    )));
                }
            }
        }
        Ok(Ok(()))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    kahan_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// `‖X‖_{𝕂_t,t}` at every time-t node.
pub fn k_norm(x: &Claim, t: usize, market: &Market) -> Result<Vec<f64>> {
    k_norm_between(x, t, t, market)
}

/// Smallest time-`measurable_at` cash amount `c` with
/// `c e1 − X` and `X + c e1` both in `Σ_{s ≥ trade_from} L(K_s)`, per
/// time-`measurable_at` node. Region models use their recession cones.
pub fn k_norm_between(
    x: &Claim,
    trade_from: usize,
    measurable_at: usize,
    market: &Market,
) -> Result<Vec<f64>> {
    let tree = market.tree();
    tree.check_time(trade_from)?;
    if measurable_at > trade_from {
        return Err(Error::TimeOrder {
            t: measurable_at,
            s: trade_from,
        });
    }
    if x.num_leaves() != tree.num_leaves() || x.d != tree.assets() {
        return Err(Error::Dimension("claim does not match the tree".into()));
    }
    let nodes = tree.nodes_at(measurable_at);
    par::try_map_indexed(nodes.len(), |k| {
        k_norm_node(x, trade_from, nodes[k], market)
    })
}

fn k_norm_node(x: &Claim, trade_from: usize, n: NodeIdx, market: &Market) -> Result<f64> {
    let tree = market.tree();
    let d = tree.assets();
    let mut lp = LinearProgram::new(Sense::Minimize);
    let c = lp.add_free(1.0);
    let cells = Cells::Recession(market.model());
    let upper = add_holdings(&mut lp, tree, n, trade_from, &cells);
    let lower = add_holdings(&mut lp, tree, n, trade_from, &cells);
    for (k, l) in tree.leaf_range(n).enumerate() {
        for i in 0..d {
            let cash = if i == 0 { 1.0 } else { 0.0 };
            // c e1 − X − H⁺ ≥ 0
            let mut row: Vec<(usize, f64)> = upper[k][i].iter().map(|&(v, a)| (v, -a)).collect();
            if cash != 0.0 {
                row.push((c, cash));
            }
            lp.add_row(row, Relation::Ge, x.values[l][i]);
            // X + c e1 − H⁻ ≥ 0
            let mut row: Vec<(usize, f64)> = lower[k][i].iter().map(|&(v, a)| (v, -a)).collect();
            if cash != 0.0 {
                row.push((c, cash));
            }
            lp.add_row(row, Relation::Ge, -x.values[l][i]);
        }
    }
    let sol = lp::solve(&lp)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.value),
        status => Err(Error::LpStatus {
            status,
            context: format!("K-norm at node {}", tree.id(n)),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustNa {
    pub holds: bool,
    /// Smallest slack of the witness against the non-lineality generators.
    pub margin: Option<f64>,
    /// Strictly consistent price system when the check holds.
    #[serde(skip)]
    pub witness: Option<AdaptedProcess>,
}

/// Searches for an adapted P-martingale `Z` with `Z_{0,1} = 1` lying in the
/// relative interior of every (recession) dual cone.
pub fn robust_na_check(market: &Market) -> Result<RobustNa> {
    let tree = market.tree();
    let d = tree.assets();
    let model = market.model();
    let masks = par::try_map_indexed(tree.len(), |n| {
        SolvencyCone {
            generators: model.recession_generators(n).to_vec(),
        }
        .lineality_mask()
    })?;

    let mut lp = LinearProgram::new(Sense::Minimize);
    // w_ω = P(ω) Z_T(ω)
    let w: Vec<Vec<usize>> = (0..tree.num_leaves())
        .map(|_| (0..d).map(|_| lp.add_free(0.0)).collect())
        .collect();
    lp.add_row(w.iter().map(|v| (v[0], 1.0)).collect(), Relation::Eq, 1.0);
    let mut strict = Vec::new();
    for n in 0..tree.len() {
        let pn = tree.node(n).prob;
        for (g, &lineal) in model.recession_generators(n).iter().zip(&masks[n]) {
            let mut coeffs = Vec::new();
            for l in tree.leaf_range(n) {
                for i in 0..d {
                    if g[i] != 0.0 {
                        coeffs.push((w[l][i], g[i] / pn));
                    }
                }
            }
            let r = lp.add_row(coeffs, Relation::Ge, 0.0);
            if !lineal {
                strict.push(r);
            }
        }
    }
    let res = lp::feasibility_with_margin(&lp, &strict)?;
    let witness = match (&res.witness, res.feasible) {
        (Some(sol), true) => {
            let values = (0..tree.len())
                .map(|n| {
                    let pn = tree.node(n).prob;
                    (0..d)
                        .map(|i| kahan_sum(tree.leaf_range(n).map(|l| sol[w[l][i]])) / pn)
                        .collect()
                })
                .collect();
            Some(AdaptedProcess::new(tree, values)?)
        }
        _ => None,
    };
    Ok(RobustNa {
        holds: res.feasible,
        margin: res.margin,
        witness,
    })
}

/// `σ_t^s` of the dual vector `E[dQ/dP | F_s] S_s`, conditioned at each
/// time-t node with the Q-conditional weights of the time-s descendants.
pub fn support_sigma(
    q: &MeasureQ,
    s_proc: &AdaptedProcess,
    t: usize,
    s: usize,
    market: &Market,
) -> Result<Vec<Extended>> {
    let tree = market.tree();
    tree.check_time(s)?;
    if t > s {
        return Err(Error::TimeOrder { t, s });
    }
    let nodes = tree.nodes_at(t);
    par::try_map_indexed(nodes.len(), |k| {
        let n = nodes[k];
        let mut terms = Vec::new();
        for &m in tree.nodes_at(s) {
            if !tree.subtree(n).contains(&m) {
                continue;
            }
            let pm = tree.node(m).prob / tree.node(n).prob;
            let weight = pm * crate::tree::xi_bar_node(q, tree, t, m);
            if weight <= 0.0 {
                continue;
            }
            match market.model().support_at(m, s_proc.at(m))? {
                Extended::Finite(h) => terms.push(weight * h),
                _ => return Ok(Extended::NegInf),
            }
        }
        Ok(Extended::Finite(kahan_sum(terms)))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use approx::assert_abs_diff_eq;

    fn quotes(bid: f64, ask: f64) -> BidAsk {
        BidAsk {
            bid: vec![bid],
            ask: vec![ask],
            cross: Vec::new(),
        }
    }

    #[test]
    fn zero_spread_cone_is_a_halfspace() {
        let k = cone_from_bid_ask(&quotes(1.0, 1.0)).unwrap();
        assert_eq!(
            k.generators,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0]]
        );
        assert!(in_dual_cone(&[1.0, 1.0], &k));
        assert!(!in_dual_cone(&[1.0, 2.0], &k));
        assert!(k.contains(&[0.3, -0.3]).unwrap());
        assert!(!k.contains(&[0.3, -0.31]).unwrap());
    }

    #[test]
    fn bid_ask_generators_and_dual() {
        let k = cone_from_bid_ask(&quotes(0.9, 1.1)).unwrap();
        assert_eq!(k.generators[2], vec![1.1, -1.0]);
        assert_eq!(k.generators[3], vec![-0.9, 1.0]);
        assert!(k.contains(&[0.2, 0.0]).unwrap());
        for s in [0.5, 0.89, 0.9, 1.0, 1.1, 1.11, 1.5] {
            assert_eq!(in_dual_cone(&[1.0, s], &k), (0.9..=1.1).contains(&s), "s = {s}");
        }
        assert!(in_dual_cone(&[0.0, 0.0], &k));
    }

    #[test]
    fn dual_of_frictionless_cone_is_the_price_ray() {
        let k = cone_from_bid_ask(&quotes(1.3, 1.3)).unwrap();
        for a in 0..=20 {
            for b in 0..=20 {
                let w = [a as f64 * 0.1, b as f64 * 0.1];
                let on_ray = (w[1] - 1.3 * w[0]).abs() < 1e-12;
                assert_eq!(in_dual_cone(&w, &k), on_ray, "{w:?}");
            }
        }
    }

    #[test]
    fn k_norm_examples() {
        let m = fixtures::model_a();
        let tree = m.tree();
        let cash = Claim::cash(tree, &[-2.5, -2.5]);
        assert_abs_diff_eq!(k_norm(&cash, 0, &m).unwrap()[0], 2.5, epsilon = 1e-9);
        assert_abs_diff_eq!(k_norm(&Claim::zero(tree), 0, &m).unwrap()[0], 0.0, epsilon = 1e-12);
        let e2 = Claim::constant(tree, &[0.0, 1.0]);
        assert_abs_diff_eq!(k_norm_between(&e2, 1, 0, &m).unwrap()[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(k_norm(&e2, 0, &m).unwrap()[0], 1.0, epsilon = 1e-9);
        assert_eq!(m.price_bounds().unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn robust_na_examples() {
        let a = robust_na_check(&fixtures::model_a()).unwrap();
        assert!(a.holds);
        let z = a.witness.unwrap();
        // The unique normalized CPS of the frictionless market.
        assert_abs_diff_eq!(z.at(1)[0], 2.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(z.at(1)[1], 4.0 / 3.0, epsilon = 1e-9);

        let m = fixtures::model_b();
        let b = robust_na_check(&m).unwrap();
        assert!(b.holds && b.margin.unwrap() > 1e-9);
        let z = b.witness.unwrap();
        let SolvencyModel::Cone(cones) = m.model() else { unreachable!() };
        for (n, cone) in cones.iter().enumerate() {
            for g in &cone.generators {
                assert!(dot(z.at(n), g) > 1e-9);
            }
        }

        let bad = fixtures::arbitrage_market();
        let r = robust_na_check(&bad).unwrap();
        assert!(!r.holds && r.witness.is_none());
    }

    #[test]
    fn support_function_examples() {
        let m = fixtures::model_b();
        let tree = m.tree();
        let p = MeasureQ::reference(tree);
        let prices = fixtures::model_b_corner_prices(&m);
        let zero = AdaptedProcess::new(tree, vec![vec![0.0, 0.0]; tree.len()]).unwrap();
        for s in 0..=1 {
            assert_eq!(support_sigma(&p, &zero, 0, s, &m).unwrap(), vec![Extended::Finite(0.0)]);
            assert_eq!(support_sigma(&p, &prices.s, 0, s, &m).unwrap(), vec![Extended::Finite(0.0)]);
        }
        let mut outside = prices.clone();
        outside.s.values[1][1] = 2.5;
        assert_eq!(support_sigma(&p, &outside.s, 0, 1, &m).unwrap(), vec![Extended::NegInf]);

        let shifted = fixtures::model_b_shifted_region();
        for s in 0..=1 {
            let v = support_sigma(&p, &prices.s, 0, s, &shifted).unwrap();
            assert_abs_diff_eq!(v[0].unwrap_finite(), -1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn assumptions_hold_on_fixtures() {
        for m in [fixtures::model_a(), fixtures::model_b(), fixtures::model_c(), fixtures::model_b_shifted_region()] {
            assert_eq!(m.check_assumptions().unwrap(), Ok(()));
        }
        let v = fixtures::irrelevant_market().check_assumptions().unwrap().unwrap_err();
        assert!(v.message.contains("interior"), "{v}");
    }
}
