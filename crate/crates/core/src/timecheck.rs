//! Time-consistency checks: the π recursion per price system, the sampled ρ
//! recursion, the dual supermartingale property, the acceptance-set
//! decomposition, pasting stability and a seeded search for ρ-time
//! consistency failures.
//!
//! Thresholds: a violation is detected above [`DETECT_TOL`]; invariants
//! stated at certification level pass at or below [`PASS_TOL`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fixtures::{random_claim, structured_claims};
use crate::holdings::{add_holdings, add_holdings_between, Cells};
use crate::lp::{self, LinearProgram, LpStatus, Relation, Sense};
use crate::market::Market;
use crate::par;
use crate::pricing::{emm_polytope, DualPair, PriceSystem};
use crate::risk::{max_over_samples, penalty_beta, rho_primal, PiEngine, RiskSpec, RiskValue};
use crate::tree::{cond_expect, Claim, NodeIdx, ScenarioTree};
use crate::value::Extended;

pub const DETECT_TOL: f64 = 1e-6;
pub const PASS_TOL: f64 = 1e-7;
/// Slack on the premise `ρ_s(X) ≤ ρ_s(Y)` of a ρ-time consistency witness.
pub const PREMISE_TOL: f64 = 1e-9;

/// Data needed to reproduce a failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub claims: Vec<Claim>,
    pub t: usize,
    pub s: usize,
    pub node: String,
    /// Falsifier trial index, when found by search.
    pub trial: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TcReport {
    pub check: String,
    pub pass: bool,
    pub worst: f64,
    pub witness: Option<Witness>,
    pub note: Option<String>,
}

impl TcReport {
    fn from_worst(check: &str, worst: f64, tol: f64, witness: Option<Witness>) -> Self {
        let pass = worst <= tol;
        Self {
            check: check.into(),
            pass,
            worst,
            witness: if pass { None } else { witness },
            note: None,
        }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// One-line summary.
    pub fn line(&self) -> String {
        let mut out = format!(
            "{} {} worst={:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.check,
            self.worst
        );
        if let Some(w) = &self.witness {
            out.push_str(&format!(" witness: t={} s={} node={}", w.t, w.s, w.node));
        }
        if let Some(n) = &self.note {
            out.push_str(&format!(" ({n})"));
        }
        out
    }
}

/// Anything evaluating `π_t^S` node-wise; lets the checks run against
/// deliberately corrupted evaluators.
pub trait PiEval: Sync {
    fn tree(&self) -> &ScenarioTree;
    fn pi(&self, x: &Claim, t: usize) -> Result<RiskValue>;
}

impl PiEval for PiEngine<'_> {
    fn tree(&self) -> &ScenarioTree {
        self.market().tree()
    }

    fn pi(&self, x: &Claim, t: usize) -> Result<RiskValue> {
        PiEngine::pi(self, x, t)
    }
}

/// Corrupted evaluator adding `delta` to an inner one, at one time or at
/// all times, optionally only for nonzero claims.
pub struct ShiftedPi<'a, P: PiEval> {
    pub inner: &'a P,
    pub delta: f64,
    pub time: Option<usize>,
    pub nonzero_only: bool,
}

impl<P: PiEval> PiEval for ShiftedPi<'_, P> {
    fn tree(&self) -> &ScenarioTree {
        self.inner.tree()
    }

    fn pi(&self, x: &Claim, t: usize) -> Result<RiskValue> {
        let mut v = self.inner.pi(x, t)?;
        let zero = x.values.iter().flatten().all(|&a| a == 0.0);
        if self.time.is_none_or(|u| u == t) && !(self.nonzero_only && zero) {
            for e in v.values.iter_mut() {
                if let Extended::Finite(a) = e {
                    *a += self.delta;
                }
            }
        }
        Ok(v)
    }
}

fn gap(a: Extended, b: Extended) -> f64 {
    match (a, b) {
        (Extended::Finite(x), Extended::Finite(y)) => (x - y).abs(),
        (x, y) if x == y => 0.0,
        _ => f64::INFINITY,
    }
}

fn check_order(t: usize, s: usize, tree: &ScenarioTree) -> Result<()> {
    tree.check_time(s)?;
    if t > s {
        return Err(Error::TimeOrder { t, s });
    }
    Ok(())
}

/// `[π_s(0) − π_s(X)] e1` lifted to the leaves.
fn recursed_claim<P: PiEval>(eval: &P, x: &Claim, s: usize) -> Result<Option<Claim>> {
    let tree = eval.tree();
    let zero = eval.pi(&Claim::zero(tree), s)?;
    let px = eval.pi(x, s)?;
    let (Some(z), Some(p)) = (zero.finite(), px.finite()) else {
        return Ok(None);
    };
    let diff: Vec<f64> = z.iter().zip(&p).map(|(a, b)| a - b).collect();
    Ok(Some(Claim::cash(tree, &tree.lift_to_leaves(&diff, s))))
}

/// Largest node gap between two value vectors, with its node.
fn worst_gap(tree: &ScenarioTree, a: &RiskValue, b: &RiskValue) -> (f64, NodeIdx) {
    a.values
        .iter()
        .zip(&b.values)
        .zip(&a.nodes)
        .map(|((x, y), &n)| (gap(*x, *y), n))
        .fold((0.0, a.nodes.first().copied().unwrap_or(tree.root())), |acc, c| {
            if c.0 > acc.0 {
                c
            } else {
                acc
            }
        })
}

/// `π_t(X) = π_t([π_s(0) − π_s(X)] e1)` node-wise, within [`DETECT_TOL`].
pub fn pi_recursion_check(
    x: &Claim,
    prices: &PriceSystem,
    t: usize,
    s: usize,
    spec: &RiskSpec,
    market: &Market,
) -> Result<TcReport> {
    let engine = PiEngine::new(market, prices, spec)?;
    pi_recursion_check_with(x, &engine, t, s)
}

pub fn pi_recursion_check_with<P: PiEval>(x: &Claim, eval: &P, t: usize, s: usize) -> Result<TcReport> {
    let tree = eval.tree();
    check_order(t, s, tree)?;
    let lhs = eval.pi(x, t)?;
    let rhs = match recursed_claim(eval, x, s)? {
        Some(y) => eval.pi(&y, t)?,
        None => {
            // π_s infinite somewhere: both sides must be −∞ together.
            let mut v = lhs.clone();
            v.values.iter_mut().for_each(|e| *e = Extended::NegInf);
            v
        }
    };
    let (worst, node) = worst_gap(tree, &lhs, &rhs);
    let witness = Witness {
        claims: vec![x.clone()],
        t,
        s,
        node: tree.id(node).into(),
        trial: None,
    };
    Ok(TcReport::from_worst("pi-recursion", worst, DETECT_TOL, Some(witness)))
}

/// Node-wise maximum over samples of the recursed value against the
/// sampled `ρ_t(X)`. For coherent specs the recursion without the
/// `π_s(0)` term is compared as well.
pub fn rho_recursion_check(
    x: &Claim,
    t: usize,
    s: usize,
    spec: &RiskSpec,
    market: &Market,
    samples: &[PriceSystem],
) -> Result<TcReport> {
    let tree = market.tree();
    check_order(t, s, tree)?;
    let engines: Vec<PiEngine> = samples
        .iter()
        .map(|p| PiEngine::new(market, p, spec))
        .collect::<Result<_>>()?;
    let direct = max_over_samples(market, t, samples, |p| {
        engine_for(&engines, samples, p).pi(x, t)
    })?;
    let recursed = max_over_samples(market, t, samples, |p| {
        let e = engine_for(&engines, samples, p);
        match recursed_claim(e, x, s)? {
            Some(y) => e.pi(&y, t),
            None => e.pi(x, t).map(|mut v| {
                v.values.iter_mut().for_each(|e| *e = Extended::NegInf);
                v
            }),
        }
    })?;
    let (mut worst, mut node) = worst_gap(tree, &direct, &recursed);
    if spec.is_coherent() {
        let plain = max_over_samples(market, t, samples, |p| {
            let e = engine_for(&engines, samples, p);
            let ps = e.pi(x, s)?;
            match ps.finite() {
                Some(v) => {
                    let neg: Vec<f64> = v.iter().map(|a| -a).collect();
                    e.pi(&Claim::cash(tree, &tree.lift_to_leaves(&neg, s)), t)
                }
                None => e.pi(x, t).map(|mut v| {
                    v.values.iter_mut().for_each(|e| *e = Extended::NegInf);
                    v
                }),
            }
        })?;
        let (w, n) = worst_gap(tree, &recursed, &plain);
        if w > worst {
            (worst, node) = (w, n);
        }
    }
    let witness = Witness {
        claims: vec![x.clone()],
        t,
        s,
        node: tree.id(node).into(),
        trial: None,
    };
    Ok(TcReport::from_worst("rho-recursion", worst, DETECT_TOL, Some(witness)))
}

fn engine_for<'e, 'a>(engines: &'e [PiEngine<'a>], samples: &[PriceSystem], p: &PriceSystem) -> &'e PiEngine<'a> {
    let k = samples
        .iter()
        .position(|q| std::ptr::eq(q, p))
        .expect("sample belongs to the slice");
    &engines[k]
}

/// `V_t = π_t(X) + β_t(Q,S)` is a Q-supermartingale:
/// `E_Q[V_s | F_t] ≤ V_t + PASS_TOL` for all `t < s`.
pub fn supermartingale_check(x: &Claim, pair: &DualPair, spec: &RiskSpec, market: &Market) -> Result<TcReport> {
    let engine = PiEngine::new(market, &pair.s, spec)?;
    let tree = market.tree();
    let betas = (0..=tree.horizon())
        .map(|t| {
            let b = penalty_beta(pair, t, spec, market)?;
            b.finite()
                .ok_or_else(|| Error::Assumption(format!("penalty is infinite at time {t}")))
        })
        .collect::<Result<Vec<_>>>()?;
    supermartingale_check_with(x, pair, &engine, &betas)
}

/// Same check with a supplied evaluator and penalties per time.
pub fn supermartingale_check_with<P: PiEval>(
    x: &Claim,
    pair: &DualPair,
    eval: &P,
    betas: &[Vec<f64>],
) -> Result<TcReport> {
    let tree = eval.tree();
    let horizon = tree.horizon();
    let mut v = Vec::with_capacity(horizon + 1);
    for (t, beta) in betas.iter().enumerate().take(horizon + 1) {
        let pi = eval.pi(x, t)?;
        let Some(pi) = pi.finite() else {
            return Err(Error::Assumption(format!("π is infinite at time {t}")));
        };
        v.push(pi.iter().zip(beta).map(|(a, b)| a + b).collect::<Vec<f64>>());
    }
    let mut worst = 0.0f64;
    let mut at = (0, 0, tree.root());
    for s in 1..=horizon {
        let lifted = tree.lift_to_leaves(&v[s], s);
        for t in 0..s {
            let e = cond_expect(&pair.q, tree, &lifted, t)?;
            for (k, (&ev, &vt)) in e.iter().zip(&v[t]).enumerate() {
                let excess = ev - vt;
                if excess > worst {
                    worst = excess;
                    at = (t, s, tree.nodes_at(t)[k]);
                }
            }
        }
    }
    let witness = Witness {
        claims: vec![x.clone()],
        t: at.0,
        s: at.1,
        node: tree.id(at.2).into(),
        trial: None,
    };
    Ok(TcReport::from_worst("supermartingale", worst, PASS_TOL, Some(witness)))
}

/// `β_t = β_{t,s} + E_Q[β_s | F_t]` with the stepped penalty
/// `β_{t,s} = −Σ_{u=t}^{s−1} σ_t^u` (regions) or the dual-cone indicator
/// on times `t..s` (cones). Informational: mismatches are reported, and the
/// flag follows the gap.
pub fn beta_cocycle_check(pair: &DualPair, t: usize, s: usize, spec: &RiskSpec, market: &Market) -> Result<TcReport> {
    let tree = market.tree();
    check_order(t, s, tree)?;
    if !spec.is_superhedging() {
        return Err(Error::Unsupported("penalty cocycle is checked for superhedging specs".into()));
    }
    let bt = penalty_beta(pair, t, spec, market)?;
    let bs = penalty_beta(pair, s, spec, market)?;
    let stepped: Vec<Extended> = match spec {
        RiskSpec::ShpConvex => {
            let mut acc = vec![Extended::Finite(0.0); tree.nodes_at(t).len()];
            for u in t..s {
                let sigma = crate::market::support_sigma(&pair.q, &pair.s.s, t, u, market)?;
                for (a, v) in acc.iter_mut().zip(sigma) {
                    *a = match (*a, v) {
                        (Extended::Finite(x), Extended::Finite(y)) => Extended::Finite(x - y),
                        _ => Extended::PosInf,
                    };
                }
            }
            acc
        }
        _ => {
            let z = crate::pricing::pair_to_cps(pair, t, tree)?;
            tree.nodes_at(t)
                .iter()
                .map(|&n| {
                    let ok = tree
                        .subtree(n)
                        .filter(|&m| tree.node(m).time < s)
                        .all(|m| market.model().dual_contains(m, z.z.at(m)));
                    if ok {
                        Extended::Finite(0.0)
                    } else {
                        Extended::PosInf
                    }
                })
                .collect()
        }
    };
    let (Some(bs), Some(bt)) = (bs.finite(), bt.finite()) else {
        let pass = bt.values.iter().any(|v| !v.is_finite());
        return Ok(TcReport {
            check: "beta-cocycle".into(),
            pass,
            worst: if pass { 0.0 } else { f64::INFINITY },
            witness: None,
            note: Some("informational; infinite penalties".into()),
        });
    };
    let e = cond_expect(&pair.q, tree, &tree.lift_to_leaves(&bs, s), t)?;
    let mut worst = 0.0f64;
    let mut node = tree.nodes_at(t)[0];
    for (k, &n) in tree.nodes_at(t).iter().enumerate() {
        let g = match stepped[k] {
            Extended::Finite(a) => (bt[k] - a - e[k]).abs(),
            _ => f64::INFINITY,
        };
        if g > worst {
            worst = g;
            node = n;
        }
    }
    let witness = Witness {
        claims: Vec::new(),
        t,
        s,
        node: tree.id(node).into(),
        trial: None,
    };
    Ok(TcReport::from_worst("beta-cocycle", worst, DETECT_TOL, Some(witness)).with_note("informational"))
}

/// Split of `X + m e1` into a time-s measurable part built from positions
/// at dates `t..s` and a remainder accepted at `s`, with minimal `m` per
/// time-t node.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub m: Vec<f64>,
    pub x_ts: Claim,
    pub x_s: Claim,
}

/// Solves the split program for the frozen-price acceptance sets of `S`.
pub fn acceptance_split(x: &Claim, engine: &PiEngine, t: usize, s: usize) -> Result<Split> {
    let market = engine.market();
    let tree = market.tree();
    check_order(t, s, tree)?;
    let h = engine
        .h_star()
        .iter()
        .map(|v| v.finite())
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| Error::Assumption("price system leaves the solvency duals".into()))?;
    let d = tree.assets();
    let mut lp = LinearProgram::new(Sense::Minimize);
    let m: Vec<usize> = tree.nodes_at(t).iter().map(|_| lp.add_free(1.0)).collect();
    let xts: Vec<Vec<usize>> = tree
        .nodes_at(s)
        .iter()
        .map(|_| (0..d).map(|_| lp.add_free(0.0)).collect())
        .collect();
    let cells = Cells::Frictionless(&engine.prices().s);
    let held_t = add_holdings_between(&mut lp, tree, tree.root(), t..s, &cells);
    let held_s = add_holdings(&mut lp, tree, tree.root(), s, &cells);
    for (l, &leaf) in tree.leaves().iter().enumerate() {
        let path = tree.path(leaf, 0);
        let off_t: f64 = path.iter().filter(|&&u| (t..s).contains(&tree.node(u).time)).map(|&u| h[u]).sum();
        let off_s: f64 = path.iter().filter(|&&u| tree.node(u).time >= s).map(|&u| h[u]).sum();
        let a_t = tree.position_at_time(tree.ancestor_at(leaf, t));
        let a_s = tree.position_at_time(tree.ancestor_at(leaf, s));
        for i in 0..d {
            // X_ts − H_{t..s} ≥ offsets on t..s
            let mut row: Vec<(usize, f64)> = held_t[l][i].iter().map(|&(v, a)| (v, -a)).collect();
            row.push((xts[a_s][i], 1.0));
            lp.add_row(row, Relation::Ge, if i == 0 { off_t } else { 0.0 });
            // X + m e1 − X_ts − H_s ≥ offsets from s
            let mut row: Vec<(usize, f64)> = held_s[l][i].iter().map(|&(v, a)| (v, -a)).collect();
            row.push((xts[a_s][i], -1.0));
            if i == 0 {
                row.push((m[a_t], 1.0));
            }
            lp.add_row(row, Relation::Ge, (if i == 0 { off_s } else { 0.0 }) - x.values[l][i]);
        }
    }
    let sol = lp::solve(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::LpStatus {
            status: sol.status,
            context: "acceptance split".into(),
        });
    }
    let mv: Vec<f64> = m.iter().map(|&v| sol.primal[v]).collect();
    let mut ts_values = Vec::with_capacity(tree.num_leaves());
    let mut s_values = Vec::with_capacity(tree.num_leaves());
    for (l, &leaf) in tree.leaves().iter().enumerate() {
        let a_s = tree.position_at_time(tree.ancestor_at(leaf, s));
        let a_t = tree.position_at_time(tree.ancestor_at(leaf, t));
        let part: Vec<f64> = xts[a_s].iter().map(|&v| sol.primal[v]).collect();
        let mut rest: Vec<f64> = x.values[l].iter().zip(&part).map(|(a, b)| a - b).collect();
        rest[0] += mv[a_t];
        ts_values.push(part);
        s_values.push(rest);
    }
    Ok(Split {
        m: mv,
        x_ts: Claim::new(tree, ts_values)?,
        x_s: Claim::new(tree, s_values)?,
    })
}

/// `A_t = A_{t,s} + A_s` for the frozen-price acceptance sets, on the given
/// claims: the minimal split shift equals `π_t(X)` (so accepted claims
/// split and every split sum is accepted), the remainder is accepted at `s`
/// and, for coherent specs, the time-s part is accepted at `t`.
pub fn acceptance_decomposition_check(
    t: usize,
    s: usize,
    prices: &PriceSystem,
    spec: &RiskSpec,
    market: &Market,
    n_random: usize,
    seed: u64,
) -> Result<TcReport> {
    if !spec.is_superhedging() {
        return Err(Error::Unsupported(
            "the acceptance-set split is built from superhedging cells".into(),
        ));
    }
    let engine = PiEngine::new(market, prices, spec)?;
    let tree = market.tree();
    check_order(t, s, tree)?;
    if !engine.no_arbitrage() {
        return Err(Error::Arbitrage("price system admits arbitrage".into()));
    }
    let mut claims = vec![Claim::zero(tree)];
    claims.extend((0..n_random).map(|k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        random_claim(tree, &mut rng)
    }));
    let coherent = spec.is_coherent();
    let results = par::try_map_indexed(claims.len(), |k| -> Result<(f64, NodeIdx)> {
        let x = &claims[k];
        let split = acceptance_split(x, &engine, t, s)?;
        let pi_t = engine.pi(x, t)?.expect_finite();
        let accepted_ts = engine.pi(&split.x_ts, t)?.expect_finite();
        let accepted_s = engine.pi(&split.x_s, s)?.expect_finite();
        let mut worst = (0.0, tree.root());
        let mut bump = |v: f64, n: NodeIdx| {
            if v > worst.0 {
                worst = (v, n);
            }
        };
        for (j, &n) in tree.nodes_at(t).iter().enumerate() {
            bump((split.m[j] - pi_t[j]).abs(), n);
            if coherent {
                bump(accepted_ts[j], n);
            }
        }
        for (j, &n) in tree.nodes_at(s).iter().enumerate() {
            bump(accepted_s[j], n);
        }
        Ok(worst)
    })?;
    let (k, &(worst, node)) = results
        .iter()
        .enumerate()
        .fold((0, &(0.0, tree.root())), |acc, (k, r)| if r.0 > acc.1 .0 { (k, r) } else { acc });
    let witness = Witness {
        claims: vec![claims[k].clone()],
        t,
        s,
        node: tree.id(node).into(),
        trial: None,
    };
    Ok(TcReport::from_worst("acceptance-decomposition", worst, PASS_TOL, Some(witness)))
}

/// Order preservation of `π^S` on pairs `(X, Y)` with `Y` the cash claim
/// `[π_s(0) − π_s(X)] e1 − ε` (so `π_s(X) ≤ π_s(Y)`), in both orders.
pub fn pi_tc_pairs_check<P: PiEval>(eval: &P, claims: &[Claim], t: usize, s: usize, eps: f64) -> Result<TcReport> {
    let tree = eval.tree();
    check_order(t, s, tree)?;
    let rows = par::try_map_indexed(claims.len(), |k| -> Result<(f64, NodeIdx)> {
        let x = &claims[k];
        let Some(y) = recursed_claim(eval, x, s)? else {
            return Ok((0.0, tree.root()));
        };
        let down = y.add_cash(&vec![-eps; tree.num_leaves()]);
        let up = y.add_cash(&vec![eps; tree.num_leaves()]);
        let px = eval.pi(x, t)?;
        let mut worst = (0.0, tree.root());
        // π_s(X) ≤ π_s(down) ⇒ π_t(X) ≤ π_t(down); π_s(up) ≤ π_s(X) ⇒ π_t(up) ≤ π_t(X).
        for (lo, hi) in [(&px, &eval.pi(&down, t)?), (&eval.pi(&up, t)?, &px)] {
            for ((a, b), &n) in lo.values.iter().zip(&hi.values).zip(&lo.nodes) {
                if let (Extended::Finite(a), Extended::Finite(b)) = (a, b) {
                    if a - b > worst.0 {
                        worst = (a - b, n);
                    }
                }
            }
        }
        Ok(worst)
    })?;
    let (k, &(worst, node)) = rows
        .iter()
        .enumerate()
        .fold((0, &(0.0, tree.root())), |acc, (k, r)| if r.0 > acc.1 .0 { (k, r) } else { acc });
    let witness = claims.get(k).map(|x| Witness {
        claims: vec![x.clone()],
        t,
        s,
        node: tree.id(node).into(),
        trial: None,
    });
    Ok(TcReport::from_worst("pi-order", worst, PASS_TOL, witness))
}

/// `π_u(X) = φ_u(S_T·X)` at `u ∈ {t, s}`, so order violations transfer
/// between claim space and payoff space.
pub fn phi_pi_transfer_check(engine: &PiEngine, claims: &[Claim], t: usize, s: usize) -> Result<TcReport> {
    let tree = engine.market().tree();
    check_order(t, s, tree)?;
    let rows = par::try_map_indexed(claims.len(), |k| -> Result<(f64, usize, NodeIdx)> {
        let payoff = engine.prices().terminal_payoff(tree, &claims[k]);
        let mut worst = (0.0, t, tree.root());
        for u in [t, s] {
            let a = engine.pi(&claims[k], u)?;
            let b = engine.phi(&payoff, u)?;
            let (g, n) = worst_gap(tree, &a, &b);
            if g > worst.0 {
                worst = (g, u, n);
            }
        }
        Ok(worst)
    })?;
    let (k, &(worst, _, node)) = rows
        .iter()
        .enumerate()
        .fold((0, &(0.0, t, tree.root())), |acc, (k, r)| if r.0 > acc.1 .0 { (k, r) } else { acc });
    let witness = claims.get(k).map(|x| Witness {
        claims: vec![x.clone()],
        t,
        s,
        node: tree.id(node).into(),
        trial: None,
    });
    Ok(TcReport::from_worst("phi-pi-transfer", worst, PASS_TOL, witness))
}

/// Pastes pairs of equivalent martingale measures of `S` at random sets of
/// time-s nodes and checks membership of the result in the polytope.
pub fn stability_check(prices: &PriceSystem, tree: &ScenarioTree, pastings: usize, seed: u64) -> Result<TcReport> {
    let poly = emm_polytope(prices, tree);
    let strict = poly.strict_feasibility()?;
    let Some(center) = strict.witness.filter(|_| strict.feasible) else {
        return Err(Error::Arbitrage("no equivalent martingale measure".into()));
    };
    let nl = tree.num_leaves();
    let center: Vec<f64> = center[..nl].to_vec();
    let draw = |rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
        let mut lp = poly.lp.clone();
        for c in lp.objective.iter_mut().take(nl) {
            *c = rng.gen_range(-1.0..1.0);
        }
        let sol = lp::solve(&lp)?;
        if sol.status != LpStatus::Optimal {
            return Err(Error::LpStatus {
                status: sol.status,
                context: "vertex of the martingale polytope".into(),
            });
        }
        Ok((0..nl).map(|k| 0.5 * (sol.primal[k] + center[k])).collect())
    };
    let mass = |q: &[f64], n: NodeIdx| -> f64 { tree.leaf_range(n).map(|l| q[l]).sum() };
    let mut worst = 0.0f64;
    let mut witness = None;
    for k in 0..pastings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let q1 = draw(&mut rng)?;
        let q2 = draw(&mut rng)?;
        let s = rng.gen_range(0..=tree.horizon());
        let chosen: Vec<NodeIdx> = tree.nodes_at(s).iter().copied().filter(|_| rng.gen_bool(0.5)).collect();
        let mut pasted = q1.clone();
        for &n in &chosen {
            let (m1, m2) = (mass(&q1, n), mass(&q2, n));
            for l in tree.leaf_range(n) {
                pasted[l] = m1 * q2[l] / m2;
            }
        }
        let residual = poly.lp.max_residual(&pasted);
        let negative = pasted.iter().fold(0.0f64, |a, &v| a.max(-v));
        let v = residual.max(negative);
        if v > worst {
            worst = v;
            witness = Some(Witness {
                claims: Vec::new(),
                t: 0,
                s,
                node: chosen.first().map_or_else(|| tree.id(tree.root()).into(), |&n| tree.id(n).into()),
                trial: Some(k),
            });
        }
    }
    Ok(TcReport::from_worst("stability", worst, PASS_TOL, witness))
}

/// One falsifier candidate.
struct Candidate {
    claim: Claim,
    t: usize,
    s: usize,
    /// Put the cash image first.
    swap: bool,
}

fn time_pairs(horizon: usize) -> Vec<(usize, usize)> {
    (0..horizon).flat_map(|t| (t + 1..=horizon).map(move |s| (t, s))).collect()
}

/// Result of replaying a ρ-time consistency witness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Replay {
    /// `ρ_s(X) ≤ ρ_s(Y) + PREMISE_TOL` at every time-s node.
    pub premise: bool,
    /// `ρ_t(X) − ρ_t(Y)` at the witness node.
    pub magnitude: f64,
}

/// Recomputes a witness `(X, Y)` through the acceptance-set program.
pub fn replay_rho_witness(w: &Witness, spec: &RiskSpec, market: &Market) -> Result<Replay> {
    let [x, y] = &w.claims[..] else {
        return Err(Error::Spec("a ρ witness holds two claims".into()));
    };
    let tree = market.tree();
    let n = tree.lookup(&w.node)?;
    let xs = rho_primal(x, w.s, spec, market)?.expect_finite();
    let ys = rho_primal(y, w.s, spec, market)?.expect_finite();
    let premise = xs.iter().zip(&ys).all(|(a, b)| *a <= b + PREMISE_TOL);
    let xt = rho_primal(x, w.t, spec, market)?;
    let yt = rho_primal(y, w.t, spec, market)?;
    let magnitude = xt.at_node(n).map(Extended::unwrap_finite).unwrap_or(f64::NAN)
        - yt.at_node(n).map(Extended::unwrap_finite).unwrap_or(f64::NAN);
    Ok(Replay { premise, magnitude })
}

const FALSIFY_CHUNK: usize = 64;

/// Seeded search for `(X, Y)`, `t < s` with `ρ_s(X) ≤ ρ_s(Y)` everywhere and
/// `ρ_t(X) > ρ_t(Y) + DETECT_TOL` somewhere. Candidates pair a claim `C`
/// with its cash image `−ρ_s(C) e1` in either order; structured claims
/// (single assets on single subtrees) come first, then random ones. The
/// report passes when no witness is found.
pub fn rho_tc_falsify(spec: &RiskSpec, market: &Market, trials: usize, seed: u64) -> Result<TcReport> {
    if !spec.is_superhedging() {
        return Err(Error::Unsupported(
            "the falsifier evaluates ρ through the acceptance-set program".into(),
        ));
    }
    spec.check(market)?;
    let tree = market.tree();
    let pairs = time_pairs(tree.horizon());
    let structured = structured_claims(tree);
    let n_structured = pairs.len() * structured.len() * 2;
    let candidate = |k: usize| -> Candidate {
        if k < n_structured {
            let (p, rest) = (k / (structured.len() * 2), k % (structured.len() * 2));
            Candidate {
                claim: structured[rest / 2].clone(),
                t: pairs[p].0,
                s: pairs[p].1,
                swap: rest % 2 == 1,
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let (t, s) = pairs[rng.gen_range(0..pairs.len())];
            Candidate {
                claim: random_claim(tree, &mut rng),
                t,
                s,
                swap: rng.gen_bool(0.5),
            }
        }
    };
    let evaluate = |k: usize| -> Result<Option<(f64, Witness)>> {
        let c = candidate(k);
        let rc = rho_primal(&c.claim, c.s, spec, market)?.expect_finite();
        let neg: Vec<f64> = rc.iter().map(|a| -a).collect();
        let image = Claim::cash(tree, &tree.lift_to_leaves(&neg, c.s));
        let (x, y) = if c.swap { (image, c.claim) } else { (c.claim, image) };
        let xs = rho_primal(&x, c.s, spec, market)?.expect_finite();
        let ys = rho_primal(&y, c.s, spec, market)?.expect_finite();
        if xs.iter().zip(&ys).any(|(a, b)| *a > b + PREMISE_TOL) {
            return Ok(None);
        }
        let xt = rho_primal(&x, c.t, spec, market)?.expect_finite();
        let yt = rho_primal(&y, c.t, spec, market)?.expect_finite();
        let (j, excess) = xt
            .iter()
            .zip(&yt)
            .map(|(a, b)| a - b)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, e)| if e > acc.1 { (j, e) } else { acc });
        Ok((excess > DETECT_TOL).then(|| {
            (
                excess,
                Witness {
                    claims: vec![x, y],
                    t: c.t,
                    s: c.s,
                    node: tree.id(tree.nodes_at(c.t)[j]).into(),
                    trial: Some(k),
                },
            )
        }))
    };
    if pairs.is_empty() {
        return Ok(TcReport::from_worst("rho-time-consistency", 0.0, DETECT_TOL, None)
            .with_note("none found: single-date tree"));
    }
    let mut start = 0;
    while start < trials {
        let len = FALSIFY_CHUNK.min(trials - start);
        let found = par::try_map_indexed(len, |k| evaluate(start + k))?;
        if let Some((excess, w)) = found.into_iter().flatten().next() {
            let replay = replay_rho_witness(&w, spec, market)?;
            let note = format!(
                "witness at trial {}; replay premise {} magnitude {:.3e}",
                w.trial.unwrap_or(0),
                replay.premise,
                replay.magnitude
            );
            return Ok(TcReport::from_worst("rho-time-consistency", excess, DETECT_TOL, Some(w)).with_note(note));
        }
        start += len;
    }
    Ok(TcReport::from_worst("rho-time-consistency", 0.0, DETECT_TOL, None)
        .with_note(format!("none found in {trials} trials")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::pricing::sample_price_systems;
    use crate::tree::{MeasureKind, MeasureQ};

    fn sampled(m: &Market, n: usize) -> Vec<PriceSystem> {
        sample_price_systems(m, n, 11).unwrap().into_iter().map(|s| s.s).collect()
    }

    #[test]
    fn pi_recursion_passes_and_detects_corruption() {
        let c = fixtures::model_c();
        let spec = RiskSpec::ShpProportional;
        let s = fixtures::model_c_mid_prices(&c);
        let x = Claim::constant(c.tree(), &[0.2, -0.7]);
        for (t, s_) in [(0, 1), (0, 2), (1, 2), (1, 1)] {
            assert!(pi_recursion_check(&x, &s, t, s_, &spec, &c).unwrap().pass);
        }
        assert!(matches!(pi_recursion_check(&x, &s, 2, 1, &spec, &c), Err(Error::TimeOrder { .. })));

        let engine = PiEngine::new(&c, &s, &spec).unwrap();
        let bad = ShiftedPi {
            inner: &engine,
            delta: 1e-3,
            time: None,
            nonzero_only: true,
        };
        let r = pi_recursion_check_with(&x, &bad, 0, 1).unwrap();
        assert!(!r.pass);
        assert!((r.worst - 1e-3).abs() < 1e-9);
        let w = r.witness.unwrap();
        let again = pi_recursion_check_with(&w.claims[0], &bad, w.t, w.s).unwrap();
        assert!(again.worst >= 0.5 * r.worst);
    }

    #[test]
    fn rho_recursion_on_samples() {
        let spec = RiskSpec::ShpProportional;
        let a = fixtures::model_a();
        let x = Claim::constant(a.tree(), &[0.1, 0.4]);
        assert!(rho_recursion_check(&x, 0, 1, &spec, &a, &[fixtures::model_a_prices(&a)]).unwrap().pass);
        let c = fixtures::model_c();
        let samples = sampled(&c, 12);
        let x = Claim::constant(c.tree(), &[-0.3, 0.5]);
        assert!(rho_recursion_check(&x, 0, 2, &spec, &c, &samples).unwrap().pass);
        assert!(matches!(rho_recursion_check(&x, 0, 2, &spec, &c, &[]), Err(Error::EmptySamples)));
    }

    #[test]
    fn supermartingale_examples() {
        let a = fixtures::model_a();
        let spec = RiskSpec::ShpProportional;
        let s = fixtures::model_a_prices(&a);
        let q = MeasureQ::new(a.tree(), vec![1.0 / 3.0, 2.0 / 3.0], MeasureKind::Equivalent).unwrap();
        let pair = DualPair::new(q, s.clone(), 0, a.tree());
        let x = Claim::constant(a.tree(), &[0.5, -1.0]);
        let r = supermartingale_check(&x, &pair, &spec, &a).unwrap();
        assert!(r.pass && r.worst.abs() < 1e-12);
        let cash = Claim::cash(a.tree(), &[1.0, 3.0]);
        assert!(supermartingale_check(&cash, &pair, &spec, &a).unwrap().pass);

        let engine = PiEngine::new(&a, &s, &spec).unwrap();
        let bad = ShiftedPi {
            inner: &engine,
            delta: 1.0,
            time: Some(1),
            nonzero_only: false,
        };
        let r = supermartingale_check_with(&x, &pair, &bad, &[vec![0.0], vec![0.0, 0.0]]).unwrap();
        assert!(!r.pass && (r.worst - 1.0).abs() < 1e-9);

        let b = fixtures::model_b();
        let mut off = fixtures::model_b_corner_prices(&b);
        off.s.values[1][1] = 2.5;
        let pair = DualPair::new(MeasureQ::reference(b.tree()), off, 0, b.tree());
        assert!(matches!(supermartingale_check(&x, &pair, &spec, &b), Err(Error::Assumption(_))));
    }

    #[test]
    fn decomposition_examples() {
        let spec = RiskSpec::ShpProportional;
        let a = fixtures::model_a();
        let s = fixtures::model_a_prices(&a);
        assert!(acceptance_decomposition_check(0, 1, &s, &spec, &a, 10, 3).unwrap().pass);
        let engine = PiEngine::new(&a, &s, &spec).unwrap();
        let zero = acceptance_split(&Claim::zero(a.tree()), &engine, 0, 1).unwrap();
        assert!(zero.m[0].abs() < 1e-12);
        // Strictly rejected claim needs a positive shift.
        let x = Claim::cash(a.tree(), &[-0.25, -0.25]);
        assert!((acceptance_split(&x, &engine, 0, 1).unwrap().m[0] - 0.25).abs() < 1e-9);

        let c = fixtures::model_c();
        for p in sampled(&c, 4) {
            assert!(acceptance_decomposition_check(0, 1, &p, &spec, &c, 6, 9).unwrap().pass);
        }
        let r = fixtures::model_b_shifted_region();
        let corner = fixtures::model_b_corner_prices(&r);
        assert!(acceptance_decomposition_check(0, 1, &corner, &RiskSpec::ShpConvex, &r, 6, 1).unwrap().pass);
    }

    #[test]
    fn order_transfer_and_stability() {
        let c = fixtures::model_c();
        let spec = RiskSpec::ShpProportional;
        let claims = fixtures::structured_claims(c.tree());
        for p in sampled(&c, 3) {
            let engine = PiEngine::new(&c, &p, &spec).unwrap();
            assert!(pi_tc_pairs_check(&engine, &claims, 0, 1, 1e-4).unwrap().pass);
            assert!(phi_pi_transfer_check(&engine, &claims, 0, 2).unwrap().pass);
            assert!(stability_check(&p, c.tree(), 20, 4).unwrap().pass);
        }
    }

    #[test]
    fn falsifier_examples() {
        let spec = RiskSpec::ShpProportional;
        let c = fixtures::model_c();
        let r = rho_tc_falsify(&spec, &c, 10_000, 7).unwrap();
        assert!(!r.pass);
        let w = r.witness.clone().unwrap();
        let replay = replay_rho_witness(&w, &spec, &c).unwrap();
        assert!(replay.premise && replay.magnitude >= 0.5 * r.worst);

        let a = fixtures::model_a();
        let r = rho_tc_falsify(&spec, &a, 0, 7).unwrap();
        assert!(r.pass && r.witness.is_none());
        assert!(rho_tc_falsify(&spec, &a, 500, 7).unwrap().pass);
    }

    #[test]
    fn cocycle_is_exact_on_regions() {
        let r = fixtures::model_b_shifted_region();
        let corner = fixtures::model_b_corner_prices(&r);
        let q = MeasureQ::new(r.tree(), vec![0.5, 0.5], MeasureKind::Equivalent).unwrap();
        let pair = DualPair::new(q, corner, 0, r.tree());
        let rep = beta_cocycle_check(&pair, 0, 1, &RiskSpec::ShpConvex, &r).unwrap();
        assert!(rep.pass, "{}", rep.line());
    }
}
