use std::collections::BTreeSet;
use std::path::Path;

use anyhow::{bail, Context, Result};
use conerisk::io::{
    certificate_json, measure_json, prices_to_file, read_claims, read_prices, risk_value_json, Bundle,
};
use conerisk::market::{robust_na_check, Market, SolvencyModel};
use conerisk::pricing::{sample_price_systems, PriceSystem};
use conerisk::risk::{
    avar_composed, rho_dual_exact, rho_from_samples, rho_primal, AvarLevels, PiEngine, RiskSpec, RiskValue,
};
use conerisk::timecheck::{replay_rho_witness, rho_tc_falsify};
use conerisk::tree::{validate_tree, Claim};
use conerisk::Extended;
use serde_json::{json, Map, Value};

use crate::output::{num, witness_json, Sink};
use crate::{ClaimArgs, FalsifyArgs, ModelArgs, PiArgs, PriceArgs, SampleArgs, SpecArgs, SpecKind, Verdict};

pub fn load_bundle(path: &Path) -> Result<Bundle> {
    Bundle::from_path(path).with_context(|| format!("reading model {}", path.display()))
}

pub fn load_market(args: &ModelArgs) -> Result<(Bundle, Market)> {
    let bundle = load_bundle(&args.model)?;
    let market = bundle
        .market()
        .with_context(|| format!("building market from {}", args.model.display()))?;
    Ok((bundle, market))
}

pub fn resolve_spec(args: &SpecArgs, bundle: &Bundle, market: &Market) -> Result<RiskSpec> {
    let tree = market.tree();
    let conical = matches!(market.model(), SolvencyModel::Cone(_));
    let spec = match args.spec {
        SpecKind::Auto if conical => RiskSpec::ShpProportional,
        SpecKind::Auto => RiskSpec::ShpConvex,
        SpecKind::Shp => RiskSpec::ShpProportional,
        SpecKind::ShpConvex => RiskSpec::ShpConvex,
        SpecKind::Avar => {
            let levels = match &args.levels {
                Some(text) => match text.parse::<f64>() {
                    Ok(l) => AvarLevels::uniform(l, tree.horizon(), tree.assets())?,
                    Err(_) => {
                        let raw = std::fs::read_to_string(text)
                            .with_context(|| format!("reading levels {text}"))?;
                        let rows: Vec<Vec<f64>> = serde_json::from_str(&raw)
                            .with_context(|| format!("parsing levels {text}"))?;
                        AvarLevels::new(rows, tree.horizon(), tree.assets())?
                    }
                },
                None => match bundle.levels(tree)? {
                    Some(l) => l,
                    None => bail!("avar needs --levels or `levels` in the model bundle"),
                },
            };
            RiskSpec::AvarComposed { levels }
        }
    };
    spec.check(market)?;
    Ok(spec)
}

/// Named claims from `--claim` files, or the bundle's claims.
pub fn load_claims(args: &ClaimArgs, bundle: &Bundle, market: &Market) -> Result<Vec<(String, Claim)>> {
    let tree = market.tree();
    if args.claim.is_empty() {
        return Ok(bundle.claims(tree)?);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for path in &args.claim {
        for (name, c) in read_claims(path, tree).with_context(|| format!("reading claims {}", path.display()))? {
            if !seen.insert(name.clone()) {
                bail!("claim `{name}` is defined twice");
            }
            out.push((name, c));
        }
    }
    Ok(out)
}

fn require_claims(claims: &[(String, Claim)]) -> Result<()> {
    if claims.is_empty() {
        bail!("no claims: pass --claim or add `claims` to the model bundle");
    }
    Ok(())
}

pub fn validate(a: &ModelArgs, out: &Sink) -> Result<Verdict> {
    let bundle = load_bundle(&a.model)?;
    let mut checks = Vec::new();
    let mut push = |check: &str, pass: bool, detail: Value| {
        let mut row = Map::new();
        row.insert("check".into(), json!(check));
        row.insert("pass".into(), json!(pass));
        if let Value::Object(extra) = detail {
            row.extend(extra);
        }
        checks.push(Value::Object(row));
        pass
    };

    let mut pass = match validate_tree(&bundle.tree) {
        Ok(()) => push("tree", true, json!({})),
        Err(v) => push("tree", false, json!({ "violation": v })),
    };
    if pass {
        match bundle.market() {
            Err(e) => pass = push("market", false, json!({ "violation": { "node": null, "message": e.to_string() } })),
            Ok(market) => {
                push("market", true, json!({}));
                pass &= match market.check_assumptions()? {
                    Ok(()) => push("assumptions", true, json!({})),
                    Err(v) => push("assumptions", false, json!({ "violation": v })),
                };
                let na = robust_na_check(&market)?;
                let detail = if na.holds {
                    json!({ "margin": na.margin })
                } else {
                    json!({ "margin": na.margin, "violation": { "node": null, "message": "robust no-arbitrage fails" } })
                };
                pass &= push("robust-no-arbitrage", na.holds, detail);
            }
        }
    }
    for row in &checks {
        let status = if row["pass"] == json!(true) { "PASS" } else { "FAIL" };
        let mut line = format!("{status} {}", row["check"].as_str().unwrap_or_default());
        if let Some(msg) = row.pointer("/violation/message").and_then(Value::as_str) {
            line.push_str(&format!(": {msg}"));
            if let Some(node) = row.pointer("/violation/node").and_then(Value::as_str) {
                line.push_str(&format!(" (node {node})"));
            }
        }
        out.line(&line);
    }
    out.report(
        "validate",
        &json!({ "model": a.model.display().to_string(), "pass": pass, "checks": checks }),
    )?;
    Ok(if pass { Verdict::Pass } else { Verdict::Fail })
}

fn extended_gap(a: Extended, b: Extended) -> f64 {
    match (a, b) {
        (Extended::Finite(x), Extended::Finite(y)) => (x - y).abs(),
        (x, y) if x == y => 0.0,
        _ => f64::INFINITY,
    }
}

fn max_gap(a: &RiskValue, b: &RiskValue) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| extended_gap(*x, *y))
        .fold(0.0, f64::max)
}

pub fn price(a: &PriceArgs, out: &Sink) -> Result<Verdict> {
    let (bundle, market) = load_market(&a.model)?;
    let spec = resolve_spec(&a.spec, &bundle, &market)?;
    let claims = load_claims(&a.claims, &bundle, &market)?;
    require_claims(&claims)?;
    let tree = market.tree();
    tree.check_time(a.t)?;
    let systems: Vec<PriceSystem> = if a.samples > 0 {
        sample_price_systems(&market, a.samples, a.seed)?
            .into_iter()
            .map(|s| s.s)
            .collect()
    } else {
        Vec::new()
    };

    let mut verdict = Verdict::Pass;
    let mut report = Map::new();
    for (name, x) in &claims {
        let entry = match &spec {
            RiskSpec::AvarComposed { levels } => {
                if systems.is_empty() {
                    bail!("avar needs at least one sampled price system (--samples)");
                }
                let v = avar_composed(x, levels, a.t, &market, &systems)?;
                out.line(&format!("{name}: composed avar computed over {} price systems", systems.len()));
                json!({ "composed": risk_value_json(tree, &v) })
            }
            _ => {
                let primal = rho_primal(x, a.t, &spec, &market)?;
                let dual = rho_dual_exact(x, a.t, &spec, &market)?;
                let residual = max_gap(&primal, &dual);
                let ok = residual <= a.tol;
                if !ok {
                    verdict = Verdict::Fail;
                }
                out.line(&format!(
                    "{} {name}: primal-dual residual {residual:.3e}",
                    if ok { "PASS" } else { "FAIL" }
                ));
                let mut e = json!({
                    "rho_primal": risk_value_json(tree, &primal),
                    "rho_dual_exact": risk_value_json(tree, &dual),
                    "residual": num(residual),
                    "pass": ok,
                });
                if !systems.is_empty() {
                    let (sampled, gap) = rho_from_samples(x, a.t, &spec, &market, &systems)?;
                    e["sampled"] = risk_value_json(tree, &sampled);
                    e["sample_gap"] = json!(gap.max_gap);
                }
                e
            }
        };
        report.insert(name.clone(), entry);
    }
    out.report(
        "price",
        &json!({
            "spec": spec.name(),
            "t": a.t,
            "samples": systems.len(),
            "seed": a.seed,
            "tol": a.tol,
            "claims": report,
        }),
    )?;
    Ok(verdict)
}

pub fn pi(a: &PiArgs, out: &Sink) -> Result<Verdict> {
    let (bundle, market) = load_market(&a.model)?;
    let spec = resolve_spec(&a.spec, &bundle, &market)?;
    let claims = load_claims(&a.claims, &bundle, &market)?;
    require_claims(&claims)?;
    let tree = market.tree();
    tree.check_time(a.t)?;
    let prices = read_prices(&a.prices, tree).with_context(|| format!("reading prices {}", a.prices.display()))?;
    let engine = PiEngine::new(&market, &prices, &spec)?;
    let mut values = Map::new();
    for (name, x) in &claims {
        values.insert(name.clone(), risk_value_json(tree, &engine.pi(x, a.t)?));
    }
    out.line(&format!(
        "{} claims at t={}; price system {} arbitrage",
        claims.len(),
        a.t,
        if engine.no_arbitrage() { "is free of" } else { "admits" }
    ));
    out.report(
        "pi",
        &json!({
            "spec": spec.name(),
            "t": a.t,
            "prices": a.prices.display().to_string(),
            "no_arbitrage": engine.no_arbitrage(),
            "claims": values,
        }),
    )?;
    Ok(Verdict::Pass)
}

pub fn sample_prices(a: &SampleArgs, out: &Sink) -> Result<Verdict> {
    let (_, market) = load_market(&a.model)?;
    let tree = market.tree();
    let systems = sample_price_systems(&market, a.samples, a.seed)?;
    let mut rows = Vec::new();
    for sys in &systems {
        let file = prices_to_file(&sys.s, tree);
        let path = out.extra(&format!("prices-{}.json", sys.index), &json!(file))?;
        rows.push(json!({
            "index": sys.index,
            "file": path.map(|p| p.display().to_string()),
            "S": file.s,
            "q": measure_json(tree, &sys.pair.q),
            "certificate": certificate_json(tree, &sys.certificate),
        }));
    }
    out.line(&format!("{} distinct price systems from {} draws", systems.len(), a.samples));
    out.report(
        "sample-prices",
        &json!({ "requested": a.samples, "seed": a.seed, "distinct": systems.len(), "systems": rows }),
    )?;
    Ok(Verdict::Pass)
}

pub fn falsify(a: &FalsifyArgs, out: &Sink) -> Result<Verdict> {
    let (bundle, market) = load_market(&a.model)?;
    let spec = resolve_spec(&a.spec, &bundle, &market)?;
    let tree = market.tree();
    let report = rho_tc_falsify(&spec, &market, a.trials, a.seed)?;
    let mut body = json!({
        "spec": spec.name(),
        "trials": a.trials,
        "seed": a.seed,
        "found": report.witness.is_some(),
        "gap": num(report.worst),
        "note": report.note,
    });
    let verdict = match &report.witness {
        None => {
            out.line(&format!("none found in {} trials", a.trials));
            Verdict::Pass
        }
        Some(w) => {
            let replay = replay_rho_witness(w, &spec, &market)?;
            let wj = witness_json(tree, w);
            body["witness"] = wj.clone();
            body["replay"] = json!({ "premise": replay.premise, "magnitude": num(replay.magnitude) });
            let mut line = format!(
                "witness at trial {} (t={}, s={}, node {}): gap {:.4}, replay {:.4}",
                w.trial.map_or_else(|| "-".into(), |k| k.to_string()),
                w.t,
                w.s,
                w.node,
                report.worst,
                replay.magnitude
            );
            if let Some(path) = out.witness("falsifier", &wj)? {
                line.push_str(&format!(" -> {}", path.display()));
            }
            out.line(&line);
            Verdict::Fail
        }
    };
    out.report("falsify", &body)?;
    Ok(verdict)
}
