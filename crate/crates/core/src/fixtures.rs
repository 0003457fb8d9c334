//! Reference markets used by tests, benches and the command line.
//!
//! * `model_a`: one period, two equally likely states, frictionless asset
//!   with price 1 moving to 2 or 0.5.
//! * `model_b`: the same tree with bid-ask quotes [0.9, 1.1] at the root,
//!   [1.8, 2.2] after an up move and [0.4, 0.6] after a down move.
//! * `model_c`: two-period binomial with mid prices 1 → (2, 0.5) →
//!   (4, 1, 1, 0.25) and quotes [0.9 m, 1.1 m].
//! * [`random_cone_market`]: seeded proportional-cost markets built around
//!   a martingale mid process, so robust no-arbitrage holds by construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::market::{BidAsk, Market, SolvencyCone, SolvencyModel, SolvencyRegion};
use crate::pricing::PriceSystem;
use crate::tree::{Claim, NodeSpec, ScenarioTree, TreeSpec};

fn node(id: &str, time: usize, parent: Option<&str>, p: Option<f64>) -> NodeSpec {
    NodeSpec {
        id: id.into(),
        time,
        parent: parent.map(Into::into),
        p,
    }
}

fn one_period_tree() -> ScenarioTree {
    ScenarioTree::from_spec(&TreeSpec {
        horizon: 1,
        assets: 2,
        nodes: vec![
            node("0", 0, None, None),
            node("u", 1, Some("0"), Some(0.5)),
            node("d", 1, Some("0"), Some(0.5)),
        ],
    })
    .expect("valid tree")
}

fn two_period_tree() -> ScenarioTree {
    let mut nodes = vec![
        node("0", 0, None, None),
        node("u", 1, Some("0"), None),
        node("d", 1, Some("0"), None),
    ];
    for a in ["u", "d"] {
        for b in ["u", "d"] {
            nodes.push(node(&format!("{a}{b}"), 2, Some(a), Some(0.25)));
        }
    }
    ScenarioTree::from_spec(&TreeSpec {
        horizon: 2,
        assets: 2,
        nodes,
    })
    .expect("valid tree")
}

fn quote(bid: f64, ask: f64) -> BidAsk {
    BidAsk {
        bid: vec![bid],
        ask: vec![ask],
        cross: Vec::new(),
    }
}

/// Mid prices by node id for the given tree, in node order.
fn by_id(tree: &ScenarioTree, f: impl Fn(&str) -> f64) -> Vec<f64> {
    (0..tree.len()).map(|n| f(tree.id(n))).collect()
}

fn model_a_mid(id: &str) -> f64 {
    match id {
        "0" => 1.0,
        "u" => 2.0,
        _ => 0.5,
    }
}

fn model_c_mid(id: &str) -> f64 {
    let ups = id.chars().filter(|&c| c == 'u').count() as i32;
    let downs = id.chars().filter(|&c| c == 'd').count() as i32;
    2f64.powi(ups) * 0.5f64.powi(downs)
}

pub fn model_a() -> Market {
    let tree = one_period_tree();
    let quotes: Vec<BidAsk> = by_id(&tree, model_a_mid).into_iter().map(|m| quote(m, m)).collect();
    Market::from_bid_ask(tree, &quotes).expect("valid market")
}

pub fn model_a_prices(market: &Market) -> PriceSystem {
    let tree = market.tree();
    PriceSystem::new(tree, by_id(tree, model_a_mid).into_iter().map(|m| vec![1.0, m]).collect())
        .expect("valid prices")
}

pub fn model_b() -> Market {
    let tree = one_period_tree();
    let quotes: Vec<BidAsk> = (0..tree.len())
        .map(|n| match tree.id(n) {
            "0" => quote(0.9, 1.1),
            "u" => quote(1.8, 2.2),
            _ => quote(0.4, 0.6),
        })
        .collect();
    Market::from_bid_ask(tree, &quotes).expect("valid market")
}

/// The price system 1.1 → (1.8, 0.4) attaining the superhedging price of
/// the up-state indicator.
pub fn model_b_corner_prices(market: &Market) -> PriceSystem {
    let tree = market.tree();
    let values = (0..tree.len())
        .map(|n| match tree.id(n) {
            "0" => vec![1.0, 1.1],
            "u" => vec![1.0, 1.8],
            _ => vec![1.0, 0.4],
        })
        .collect();
    PriceSystem::new(tree, values).expect("valid prices")
}

/// MODEL-B's cones shifted by one free unit of cash at every node:
/// `C = {x : x + e1 ∈ K}`.
pub fn model_b_shifted_region() -> Market {
    let b = model_b();
    let tree = b.tree().clone();
    let SolvencyModel::Cone(cones) = b.model() else {
        unreachable!("bid-ask market is conical")
    };
    let regions = (0..tree.len())
        .map(|n| {
            let (bid, ask) = match tree.id(n) {
                "0" => (0.9, 1.1),
                "u" => (1.8, 2.2),
                _ => (0.4, 0.6),
            };
            let facets = vec![vec![1.0, bid], vec![1.0, ask]];
            SolvencyRegion::shifted_cone(&facets, &cones[n].generators, &[1.0, 0.0])
        })
        .collect();
    Market::new(tree, SolvencyModel::Region(regions)).expect("valid market")
}

pub fn model_c() -> Market {
    let tree = two_period_tree();
    let quotes: Vec<BidAsk> = by_id(&tree, model_c_mid)
        .into_iter()
        .map(|m| quote(0.9 * m, 1.1 * m))
        .collect();
    Market::from_bid_ask(tree, &quotes).expect("valid market")
}

pub fn model_c_mid_prices(market: &Market) -> PriceSystem {
    let tree = market.tree();
    PriceSystem::new(tree, by_id(tree, model_c_mid).into_iter().map(|m| vec![1.0, m]).collect())
        .expect("valid prices")
}

/// MODEL-B's leaves with a root quote below every time-1 bid.
pub fn arbitrage_market() -> Market {
    let tree = one_period_tree();
    let quotes: Vec<BidAsk> = (0..tree.len())
        .map(|n| match tree.id(n) {
            "0" => quote(0.2, 0.3),
            "u" => quote(1.8, 2.2),
            _ => quote(0.4, 0.6),
        })
        .collect();
    Market::from_bid_ask(tree, &quotes).expect("valid market")
}

/// Cash at leaf `d` can be created and destroyed freely, so the risk
/// measure cannot see losses there.
pub fn irrelevant_market() -> Market {
    let tree = one_period_tree();
    let cones = (0..tree.len())
        .map(|n| match tree.id(n) {
            "0" => SolvencyCone::from_bid_ask(&quote(1.0, 1.0)),
            "u" => SolvencyCone::from_bid_ask(&quote(0.5, 0.5)),
            _ => Ok(SolvencyCone {
                generators: vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0]],
            }),
        })
        .collect::<crate::Result<Vec<_>>>()
        .expect("valid cones");
    Market::new(tree, SolvencyModel::Cone(cones)).expect("valid market")
}

/// Shape of a random market.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomShape {
    pub assets: usize,
    pub horizon: usize,
    pub branching: usize,
}

/// Seeded proportional-cost market: `assets ∈ {2, 3}`, `horizon ∈ {1, 2, 3}`,
/// `branching ∈ {2, 3}` (so at most 27 leaves). Mid prices are a martingale
/// under a random equivalent measure and relative spreads lie in
/// [0.01, 0.1].
pub fn random_cone_market(seed: u64) -> (Market, RandomShape) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = RandomShape {
        assets: rng.gen_range(2..=3),
        horizon: rng.gen_range(1..=3),
        branching: rng.gen_range(2..=3),
    };
    (random_cone_market_with(shape, &mut rng), shape)
}

pub fn random_cone_market_with(shape: RandomShape, rng: &mut ChaCha8Rng) -> Market {
    let RandomShape {
        assets: d,
        horizon,
        branching,
    } = shape;
    // Build ids breadth-first with transition weights for P and Q.
    struct Raw {
        id: String,
        time: usize,
        parent: Option<usize>,
        p: f64,
        q: f64,
    }
    let mut raw = vec![Raw {
        id: "r".into(),
        time: 0,
        parent: None,
        p: 1.0,
        q: 1.0,
    }];
    let mut frontier = vec![0usize];
    for t in 1..=horizon {
        let mut next = Vec::new();
        for &parent in &frontier {
            let pw: Vec<f64> = (0..branching).map(|_| rng.gen_range(0.2..1.0)).collect();
            let qw: Vec<f64> = (0..branching).map(|_| rng.gen_range(0.2..1.0)).collect();
            let (ps, qs): (f64, f64) = (pw.iter().sum(), qw.iter().sum());
            for k in 0..branching {
                raw.push(Raw {
                    id: format!("{}{k}", raw[parent].id),
                    time: t,
                    parent: Some(parent),
                    p: raw[parent].p * pw[k] / ps,
                    q: qw[k] / qs,
                });
                next.push(raw.len() - 1);
            }
        }
        frontier = next;
    }
    let mut mids = vec![vec![0.0; d]; raw.len()];
    for &leaf in &frontier {
        mids[leaf][0] = 1.0;
        for m in mids[leaf].iter_mut().skip(1) {
            *m = rng.gen_range(0.5..2.0);
        }
    }
    for k in (0..raw.len()).rev() {
        if let Some(p) = raw[k].parent {
            for i in 0..d {
                mids[p][i] += raw[k].q * mids[k][i];
            }
        }
    }
    let spec = TreeSpec {
        horizon,
        assets: d,
        nodes: raw
            .iter()
            .map(|r| NodeSpec {
                id: r.id.clone(),
                time: r.time,
                parent: r.parent.map(|p| raw[p].id.clone()),
                p: (r.time == horizon).then_some(r.p),
            })
            .collect(),
    };
    // Leaf probabilities are products of normalized weights; renormalize so
    // they sum to one to within the tree's tolerance.
    let mut spec = spec;
    let total: f64 = crate::tree::kahan_sum(spec.nodes.iter().filter_map(|n| n.p));
    for n in spec.nodes.iter_mut() {
        if let Some(p) = n.p.as_mut() {
            *p /= total;
        }
    }
    let tree = ScenarioTree::from_spec(&spec).expect("random tree is valid");
    let quotes: Vec<BidAsk> = (0..tree.len())
        .map(|n| {
            let k = raw.iter().position(|r| r.id == tree.id(n)).expect("id exists");
            let mut bid = Vec::new();
            let mut ask = Vec::new();
            for i in 1..d {
                let m = mids[k][i];
                bid.push(m * (1.0 - rng.gen_range(0.01..0.1)));
                ask.push(m * (1.0 + rng.gen_range(0.01..0.1)));
            }
            BidAsk {
                bid,
                ask,
                cross: Vec::new(),
            }
        })
        .collect();
    Market::from_bid_ask(tree, &quotes).expect("random market is valid")
}

/// Claim with independent entries uniform in [−1, 1].
pub fn random_claim<R: Rng + ?Sized>(tree: &ScenarioTree, rng: &mut R) -> Claim {
    let values = (0..tree.num_leaves())
        .map(|_| (0..tree.assets()).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    Claim::new(tree, values).expect("shape matches the tree")
}

/// Corner cases: `±e_i` on the whole tree and on every proper subtree.
pub fn structured_claims(tree: &ScenarioTree) -> Vec<Claim> {
    let mut out = Vec::new();
    for n in 0..tree.len() {
        let leaves = tree.leaf_range(n);
        for i in 0..tree.assets() {
            for sign in [1.0, -1.0] {
                let values = (0..tree.num_leaves())
                    .map(|l| {
                        let mut v = vec![0.0; tree.assets()];
                        if leaves.contains(&l) {
                            v[i] = sign;
                        }
                        v
                    })
                    .collect();
                out.push(Claim::new(tree, values).expect("shape matches the tree"));
            }
        }
    }
    out
}
