//! `audit`: every time-consistency check over sampled price systems, seeded
//! claims and time pairs, folded into one row per check.

use anyhow::{bail, Result};
use conerisk::fixtures::{random_claim, structured_claims};
use conerisk::pricing::sample_price_systems;
use conerisk::risk::{penalty_beta, PiEngine, RiskValue};
use conerisk::timecheck::{
    acceptance_decomposition_check, pi_recursion_check_with, replay_rho_witness, rho_recursion_check,
    rho_tc_falsify, supermartingale_check_with, PiEval, ShiftedPi, TcReport, Witness,
};
use conerisk::tree::{Claim, ScenarioTree};
use conerisk::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::commands::{load_claims, load_market, resolve_spec};
use crate::output::{num, witness_json, Sink};
use crate::{AuditArgs, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
enum Status {
    Pass,
    Fail,
    /// The check does not apply to this spec or these price systems.
    Skip,
    /// Reported, never fails the audit.
    Info,
}

struct Row {
    check: &'static str,
    status: Status,
    worst: f64,
    evaluations: usize,
    skipped: usize,
    witness: Option<Witness>,
    note: Option<String>,
}

/// Frozen-price evaluator, optionally corrupted at the horizon so the
/// π-based rows can be seen to fail.
enum Eval<'a> {
    Plain(&'a PiEngine<'a>),
    Shifted(ShiftedPi<'a, PiEngine<'a>>),
}

impl PiEval for Eval<'_> {
    fn tree(&self) -> &ScenarioTree {
        match self {
            Eval::Plain(e) => PiEval::tree(*e),
            Eval::Shifted(e) => e.tree(),
        }
    }

    fn pi(&self, x: &Claim, t: usize) -> conerisk::Result<RiskValue> {
        match self {
            Eval::Plain(e) => PiEval::pi(*e, x, t),
            Eval::Shifted(e) => e.pi(x, t),
        }
    }
}

fn not_applicable(e: &Error) -> bool {
    matches!(e, Error::Unsupported(_) | Error::Assumption(_))
}

fn fold(check: &'static str, results: Vec<conerisk::Result<TcReport>>, tol: Option<f64>) -> Result<Row> {
    let mut best: Option<TcReport> = None;
    let mut all_pass = true;
    let mut evaluations = 0;
    let mut skipped = 0;
    let mut skip_note = None;
    for r in results {
        match r {
            Ok(rep) => {
                evaluations += 1;
                all_pass &= rep.pass;
                if best.as_ref().is_none_or(|b| rep.worst > b.worst) {
                    best = Some(rep);
                }
            }
            Err(e) if not_applicable(&e) => {
                skipped += 1;
                skip_note.get_or_insert_with(|| e.to_string());
            }
            Err(e) => return Err(e.into()),
        }
    }
    let Some(best) = best else {
        return Ok(Row {
            check,
            status: Status::Skip,
            worst: 0.0,
            evaluations,
            skipped,
            witness: None,
            note: skip_note,
        });
    };
    let pass = match tol {
        Some(tol) => best.worst <= tol,
        None => all_pass,
    };
    Ok(Row {
        check,
        status: if pass { Status::Pass } else { Status::Fail },
        worst: best.worst,
        evaluations,
        skipped,
        witness: if pass { None } else { best.witness },
        note: skip_note.or(best.note),
    })
}

fn time_pairs(a: &AuditArgs, tree: &ScenarioTree) -> Result<Vec<(usize, usize)>> {
    let horizon = tree.horizon();
    match (a.t, a.s) {
        (Some(t), Some(s)) => {
            if !(t < s && s <= horizon) {
                bail!("need t < s <= {horizon}, got t = {t}, s = {s}");
            }
            Ok(vec![(t, s)])
        }
        _ => Ok((0..horizon)
            .flat_map(|t| (t + 1..=horizon).map(move |s| (t, s)))
            .collect()),
    }
}

pub fn run(a: &AuditArgs, out: &Sink) -> Result<Verdict> {
    let (bundle, market) = load_market(&a.model)?;
    let spec = resolve_spec(&a.spec, &bundle, &market)?;
    let tree = market.tree();
    let pairs = time_pairs(a, tree)?;

    let mut claims: Vec<Claim> = load_claims(&a.claims, &bundle, &market)?
        .into_iter()
        .map(|(_, c)| c)
        .collect();
    claims.extend(structured_claims(tree));
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    claims.extend((0..a.random_claims).map(|_| random_claim(tree, &mut rng)));

    let sampled = sample_price_systems(&market, a.samples, a.seed)?;
    if sampled.is_empty() {
        bail!("no price system could be sampled (--samples {})", a.samples);
    }
    let systems: Vec<_> = sampled.iter().map(|s| s.s.clone()).collect();
    let engines = sampled
        .iter()
        .map(|s| PiEngine::new(&market, &s.s, &spec))
        .collect::<conerisk::Result<Vec<_>>>()?;
    let evals: Vec<Eval> = engines
        .iter()
        .map(|e| match a.corrupt {
            Some(delta) => Eval::Shifted(ShiftedPi {
                inner: e,
                delta,
                time: Some(tree.horizon()),
                nonzero_only: true,
            }),
            None => Eval::Plain(e),
        })
        .collect();

    let (nc, np) = (claims.len(), pairs.len());
    let mut rows = Vec::new();

    let pi_rec = (0..evals.len() * nc * np)
        .into_par_iter()
        .map(|k| {
            let (t, s) = pairs[k % np];
            pi_recursion_check_with(&claims[(k / np) % nc], &evals[k / (np * nc)], t, s)
        })
        .collect();
    rows.push(fold("pi-recursion", pi_rec, a.tol)?);

    let rho_rec = (0..nc * np)
        .into_par_iter()
        .map(|k| {
            let (t, s) = pairs[k % np];
            rho_recursion_check(&claims[k / np], t, s, &spec, &market, &systems)
        })
        .collect();
    rows.push(fold("rho-recursion", rho_rec, a.tol)?);

    // Pairs with an infinite penalty somewhere are outside the check.
    let mut betas = Vec::with_capacity(sampled.len());
    for sys in &sampled {
        let b = (0..=tree.horizon())
            .map(|t| {
                penalty_beta(&sys.pair, t, &spec, &market)?
                    .finite()
                    .ok_or_else(|| format!("penalty is infinite at time {t}"))
                    .map_err(Error::Assumption)
            })
            .collect::<conerisk::Result<Vec<_>>>();
        betas.push(match b {
            Ok(b) => Ok(b),
            Err(Error::Assumption(m) | Error::Unsupported(m)) => Err(m),
            Err(e) => return Err(e.into()),
        });
    }
    let supermart = (0..evals.len() * nc)
        .into_par_iter()
        .map(|k| {
            let j = k / nc;
            match &betas[j] {
                Ok(b) => supermartingale_check_with(&claims[k % nc], &sampled[j].pair, &evals[j], b),
                Err(note) => Err(Error::Unsupported(format!("pair skipped: {note}"))),
            }
        })
        .collect();
    rows.push(fold("supermartingale", supermart, a.tol)?);

    let decomposition = (0..sampled.len() * np)
        .into_par_iter()
        .map(|k| {
            let (t, s) = pairs[k % np];
            let n_random = a.random_claims.min(50);
            acceptance_decomposition_check(t, s, &systems[k / np], &spec, &market, n_random, a.seed)
        })
        .collect();
    rows.push(fold("acceptance-decomposition", decomposition, a.tol)?);

    let falsifier = match rho_tc_falsify(&spec, &market, a.trials, a.seed) {
        Ok(rep) => {
            let note = match &rep.witness {
                Some(w) => {
                    let replay = replay_rho_witness(w, &spec, &market)?;
                    format!(
                        "witness found, replay gap {:.4}, premise {}",
                        replay.magnitude,
                        if replay.premise { "holds" } else { "fails" }
                    )
                }
                None => format!("none found in {} trials", a.trials),
            };
            Row {
                check: "rho-tc-falsifier",
                status: Status::Info,
                worst: rep.worst,
                evaluations: a.trials,
                skipped: 0,
                witness: rep.witness,
                note: Some(note),
            }
        }
        Err(e) if not_applicable(&e) => Row {
            check: "rho-tc-falsifier",
            status: Status::Skip,
            worst: 0.0,
            evaluations: 0,
            skipped: 1,
            witness: None,
            note: Some(e.to_string()),
        },
        Err(e) => return Err(e.into()),
    };
    rows.push(falsifier);

    let mut checks = Vec::new();
    for row in &rows {
        let wj = row.witness.as_ref().map(|w| witness_json(tree, w));
        let mut line = format!(
            "{} {} worst={:.3e} evaluations={}",
            serde_json::to_value(row.status)?.as_str().unwrap_or_default(),
            row.check,
            row.worst,
            row.evaluations
        );
        if let Some(note) = &row.note {
            line.push_str(&format!(" ({note})"));
        }
        if let Some(wj) = &wj {
            if let Some(path) = out.witness(row.check, wj)? {
                line.push_str(&format!(" witness: {}", path.display()));
            }
        }
        out.line(&line);
        checks.push(json!({
            "check": row.check,
            "status": row.status,
            "worst": num(row.worst),
            "evaluations": row.evaluations,
            "skipped": row.skipped,
            "note": row.note,
            "witness": wj,
        }));
    }
    let pass = rows.iter().all(|r| r.status != Status::Fail);
    out.report(
        "audit",
        &json!({
            "model": a.model.model.display().to_string(),
            "spec": spec.name(),
            "seed": a.seed,
            "price_systems": sampled.len(),
            "claims": nc,
            "time_pairs": pairs,
            "tol": a.tol,
            "pass": pass,
            "checks": checks,
        }),
    )?;
    Ok(if pass { Verdict::Pass } else { Verdict::Fail })
}
