//! JSON formats keyed by node id.
//!
//! A model bundle holds the tree, one solvency cell per node (bid-ask
//! quotes, cone generators or a polyhedral region), and optionally named
//! claims and AV@R levels:
//!
//! ```json
//! {
//!   "tree": {"horizon": 1, "assets": 2, "nodes": [
//!     {"id": "0", "time": 0, "parent": null},
//!     {"id": "u", "time": 1, "parent": "0", "p": 0.5},
//!     {"id": "d", "time": 1, "parent": "0", "p": 0.5}]},
//!   "market": {"0": {"bid": [0.9], "ask": [1.1]},
//!              "u": {"bid": [1.8], "ask": [2.2]},
//!              "d": {"bid": [0.4], "ask": [0.6]}},
//!   "claims": {"X": {"u": [-1, 0], "d": [0, 0]}}
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::market::{BidAsk, Market, SolvencyCone, SolvencyModel, SolvencyRegion};
use crate::pricing::{NaCertificate, PriceSystem};
use crate::risk::{AvarLevels, RiskValue};
use crate::tree::{Claim, MeasureQ, ScenarioTree, TreeSpec};

/// Per-node solvency data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellSpec {
    Quotes(BidAsk),
    Cone(SolvencyCone),
    Region(SolvencyRegion),
}

/// Leaf id → d-vector.
pub type ClaimMap = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub tree: TreeSpec,
    pub market: BTreeMap<String, CellSpec>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub claims: BTreeMap<String, ClaimMap>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<Vec<f64>>>,
}

impl Bundle {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Builds the (pruned) tree and the market. Cells of pruned nodes are
    /// ignored; every remaining node needs a cell of the same kind.
    pub fn market(&self) -> Result<Market> {
        let tree = ScenarioTree::from_spec(&self.tree)?;
        market_from_cells(tree, &self.market)
    }

    pub fn levels(&self, tree: &ScenarioTree) -> Result<Option<AvarLevels>> {
        self.levels
            .as_ref()
            .map(|l| AvarLevels::new(l.clone(), tree.horizon(), tree.assets()))
            .transpose()
    }

    /// Named claims in name order.
    pub fn claims(&self, tree: &ScenarioTree) -> Result<Vec<(String, Claim)>> {
        self.claims
            .iter()
            .map(|(name, m)| Ok((name.clone(), claim_from_map(tree, m)?)))
            .collect()
    }
}

pub fn market_from_cells(tree: ScenarioTree, cells: &BTreeMap<String, CellSpec>) -> Result<Market> {
    let get = |n: usize| -> Result<&CellSpec> {
        let id = tree.id(n);
        cells
            .get(id)
            .ok_or_else(|| Error::UnknownNode(format!("{id} has no market data")))
    };
    let regional = matches!(get(tree.root())?, CellSpec::Region(_));
    let model = if regional {
        let regions = (0..tree.len())
            .map(|n| match get(n)? {
                CellSpec::Region(r) => Ok(r.clone()),
                _ => Err(Error::Spec(format!(
                    "node {} mixes cone data into a region market",
                    tree.id(n)
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        SolvencyModel::Region(regions)
    } else {
        let cones = (0..tree.len())
            .map(|n| match get(n)? {
                CellSpec::Quotes(q) => {
                    if q.bid.len() + 1 != tree.assets() {
                        return Err(Error::Dimension(format!(
                            "quotes at node {} cover {} assets",
                            tree.id(n),
                            q.bid.len() + 1
                        )));
                    }
                    SolvencyCone::from_bid_ask(q)
                }
                CellSpec::Cone(c) => Ok(c.clone()),
                CellSpec::Region(_) => Err(Error::Spec(format!(
                    "node {} mixes region data into a cone market",
                    tree.id(n)
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        SolvencyModel::Cone(cones)
    };
    Market::new(tree, model)
}

/// Generator or region cells for every node of a market.
pub fn cells_of(market: &Market) -> BTreeMap<String, CellSpec> {
    let tree = market.tree();
    (0..tree.len())
        .map(|n| {
            let cell = match market.model() {
                SolvencyModel::Cone(c) => CellSpec::Cone(c[n].clone()),
                SolvencyModel::Region(r) => CellSpec::Region(r[n].clone()),
            };
            (tree.id(n).to_string(), cell)
        })
        .collect()
}

/// Bundle describing a market, with optional claims.
pub fn bundle_of(market: &Market, claims: &[(String, Claim)]) -> Bundle {
    let tree = market.tree();
    Bundle {
        tree: tree.to_spec(),
        market: cells_of(market),
        claims: claims
            .iter()
            .map(|(name, c)| (name.clone(), claim_to_map(tree, c)))
            .collect(),
        levels: None,
    }
}

/// Every surviving leaf must be present; ids of pruned leaves are ignored.
pub fn claim_from_map(tree: &ScenarioTree, map: &ClaimMap) -> Result<Claim> {
    let values = tree
        .leaves()
        .iter()
        .map(|&l| {
            map.get(tree.id(l))
                .cloned()
                .ok_or_else(|| Error::UnknownNode(format!("claim has no entry for leaf {}", tree.id(l))))
        })
        .collect::<Result<Vec<_>>>()?;
    for id in map.keys() {
        if let Ok(n) = tree.lookup(id) {
            if !tree.is_leaf(n) {
                return Err(Error::Dimension(format!("claim entry {id} is not a leaf")));
            }
        }
    }
    Claim::new(tree, values)
}

pub fn claim_to_map(tree: &ScenarioTree, x: &Claim) -> ClaimMap {
    tree.leaves()
        .iter()
        .zip(&x.values)
        .map(|(&l, v)| (tree.id(l).to_string(), v.clone()))
        .collect()
}

/// Reads `{"X": {leaf: [..]}}`-style files; returns claims in name order.
pub fn read_claims(path: impl AsRef<Path>, tree: &ScenarioTree) -> Result<Vec<(String, Claim)>> {
    let maps: BTreeMap<String, ClaimMap> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    maps.iter()
        .map(|(name, m)| Ok((name.clone(), claim_from_map(tree, m)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceFile {
    #[serde(rename = "S")]
    pub s: BTreeMap<String, Vec<f64>>,
}

pub fn prices_from_file(file: &PriceFile, tree: &ScenarioTree) -> Result<PriceSystem> {
    let values = (0..tree.len())
        .map(|n| {
            file.s
                .get(tree.id(n))
                .cloned()
                .ok_or_else(|| Error::UnknownNode(format!("prices have no entry for node {}", tree.id(n))))
        })
        .collect::<Result<Vec<_>>>()?;
    PriceSystem::new(tree, values)
}

pub fn read_prices(path: impl AsRef<Path>, tree: &ScenarioTree) -> Result<PriceSystem> {
    let file: PriceFile = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    prices_from_file(&file, tree)
}

pub fn prices_to_file(prices: &PriceSystem, tree: &ScenarioTree) -> PriceFile {
    PriceFile {
        s: (0..tree.len())
            .map(|n| (tree.id(n).to_string(), prices.at(n).to_vec()))
            .collect(),
    }
}

/// `{node: {"value": .., "flag": ..}}`.
pub fn risk_value_json(tree: &ScenarioTree, v: &RiskValue) -> Value {
    Value::Object(
        v.nodes
            .iter()
            .zip(&v.values)
            .map(|(&n, e)| (tree.id(n).to_string(), json!(e)))
            .collect(),
    )
}

/// `{leaf: weight}`.
pub fn measure_json(tree: &ScenarioTree, q: &MeasureQ) -> Value {
    Value::Object(
        tree.leaves()
            .iter()
            .zip(q.weights())
            .map(|(&l, &w)| (tree.id(l).to_string(), json!(w)))
            .collect(),
    )
}

/// `{"holds": .., "margin": .., "q": {leaf: ..} | null}`.
pub fn certificate_json(tree: &ScenarioTree, c: &NaCertificate) -> Value {
    json!({
        "holds": c.holds,
        "margin": c.margin,
        "q": c.q.as_ref().map(|q| measure_json(tree, q)),
    })
}

/// Flattens a JSON report to `path,value` rows, with keys joined by `.`.
pub fn flatten_csv(v: &Value) -> String {
    fn walk(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
        let join = |k: &str| {
            if prefix.is_empty() {
                k.to_string()
            } else {
                format!("{prefix}.{k}")
            }
        };
        match v {
            Value::Object(m) => m.iter().for_each(|(k, x)| walk(&join(k), x, out)),
            Value::Array(a) => a
                .iter()
                .enumerate()
                .for_each(|(k, x)| walk(&join(&k.to_string()), x, out)),
            Value::String(s) => out.push((prefix.to_string(), s.clone())),
            Value::Null => out.push((prefix.to_string(), String::new())),
            other => out.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", v, &mut rows);
    let quote = |s: &str| {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    };
    let mut out = String::from("path,value\n");
    for (k, v) in rows {
        out.push_str(&format!("{},{}\n", quote(&k), quote(&v)));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::pricing::na_check;
    use crate::risk::{rho_primal, RiskSpec};

    const MODEL_B: &str = r#"{
      "tree": {"horizon": 1, "assets": 2, "nodes": [
        {"id": "0", "time": 0, "parent": null},
        {"id": "u", "time": 1, "parent": "0", "p": 0.5},
        {"id": "d", "time": 1, "parent": "0", "p": 0.5}]},
      "market": {"0": {"bid": [0.9], "ask": [1.1]},
                 "u": {"bid": [1.8], "ask": [2.2]},
                 "d": {"bid": [0.4], "ask": [0.6]}},
      "claims": {"X": {"u": [-1, 0], "d": [0, 0]}}
    }"#;

    #[test]
    fn bundle_round_trip() {
        let b: Bundle = serde_json::from_str(MODEL_B).unwrap();
        let m = b.market().unwrap();
        assert_eq!(m.model(), fixtures::model_b().model());
        let claims = b.claims(m.tree()).unwrap();
        let v = rho_primal(&claims[0].1, 0, &RiskSpec::ShpProportional, &m).unwrap();
        assert!((v.expect_finite()[0] - 0.5).abs() < 1e-9);

        let again: Bundle = serde_json::from_str(&serde_json::to_string(&bundle_of(&m, &claims)).unwrap()).unwrap();
        let m2 = again.market().unwrap();
        assert_eq!(m2.model(), m.model());
        assert_eq!(again.claims(m2.tree()).unwrap(), claims);

        let region = bundle_of(&fixtures::model_b_shifted_region(), &[]);
        let text = serde_json::to_string(&region).unwrap();
        assert!(text.contains("\"G\""));
        let back: Bundle = serde_json::from_str(&text).unwrap();
        assert!(!back.market().unwrap().model().is_conical());
    }

    #[test]
    fn missing_and_mixed_cells() {
        let mut b: Bundle = serde_json::from_str(MODEL_B).unwrap();
        b.market.remove("u");
        assert!(matches!(b.market(), Err(Error::UnknownNode(_))));
        let mut b: Bundle = serde_json::from_str(MODEL_B).unwrap();
        let r = cells_of(&fixtures::model_b_shifted_region()).remove("u").unwrap();
        b.market.insert("u".into(), r);
        assert!(matches!(b.market(), Err(Error::Spec(_))));
        let tree = fixtures::model_b().tree().clone();
        let mut m = ClaimMap::new();
        m.insert("u".into(), vec![1.0, 0.0]);
        assert!(claim_from_map(&tree, &m).is_err());
    }

    #[test]
    fn report_formats() {
        let a = fixtures::model_a();
        let tree = a.tree();
        let v = rho_primal(&Claim::zero(tree), 1, &RiskSpec::ShpProportional, &a).unwrap();
        let j = risk_value_json(tree, &v);
        assert_eq!(j["u"]["flag"], "finite");
        let c = na_check(&fixtures::model_a_prices(&a), tree).unwrap();
        let cj = certificate_json(tree, &c);
        assert!((cj["q"]["u"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-9);
        let csv = flatten_csv(&json!({"a": {"b": 1, "c": [true, null]}, "d": "x,y"}));
        assert_eq!(csv, "path,value\na.b,1\na.c.0,true\na.c.1,\nd,\"x,y\"\n");

        let p = fixtures::model_a_prices(&a);
        let f = prices_to_file(&p, tree);
        assert_eq!(prices_from_file(&f, tree).unwrap(), p);
    }
}
