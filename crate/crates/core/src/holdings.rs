//! Shared LP fragment: accumulated node-wise solvent positions along paths.
//!
//! For each node of a subtree at or after a given time, variables encode one
//! element of that node's cell; the returned expressions give, per leaf and
//! asset, the sum of those elements along the path to the leaf. Callers
//! always compare these sums with `≥` rows, so free disposal of nonnegative
//! positions at the leaves is implied and generators that are already
//! nonnegative can be skipped.

use std::ops::Range;

use crate::lp::{LinearProgram, Relation};
use crate::market::SolvencyModel;
use crate::tree::{AdaptedProcess, NodeIdx, ScenarioTree};

pub(crate) type Expr = Vec<(usize, f64)>;

pub(crate) enum Cells<'a> {
    /// The model's own cones or regions.
    Model(&'a SolvencyModel),
    /// Cones, or the recession cones of regions.
    Recession(&'a SolvencyModel),
    /// Frictionless halfspace `{x : S·x ≥ 0}` of a price system.
    Frictionless(&'a AdaptedProcess),
}

/// Returns `[leaf - first_leaf][asset]` expressions.
pub(crate) fn add_holdings(
    lp: &mut LinearProgram,
    tree: &ScenarioTree,
    root: NodeIdx,
    from_time: usize,
    cells: &Cells,
) -> Vec<Vec<Expr>> {
    add_holdings_between(lp, tree, root, from_time..usize::MAX, cells)
}

/// Same, with positions only at nodes whose time lies in `times`.
pub(crate) fn add_holdings_between(
    lp: &mut LinearProgram,
    tree: &ScenarioTree,
    root: NodeIdx,
    times: Range<usize>,
    cells: &Cells,
) -> Vec<Vec<Expr>> {
    let d = tree.assets();
    let range = tree.subtree(root);
    let mut acc: Vec<Vec<Expr>> = Vec::with_capacity(range.len());
    for m in range.clone() {
        let mut e = if m == root {
            vec![Vec::new(); d]
        } else {
            let p = tree.node(m).parent.expect("subtree node below root");
            acc[p - root].clone()
        };
        if times.contains(&tree.node(m).time) {
            add_cell(lp, m, d, cells, &mut e);
        }
        acc.push(e);
    }
    tree.leaf_range(root)
        .map(|l| std::mem::take(&mut acc[tree.leaves()[l] - root]))
        .collect()
}

fn add_generators<'g>(
    lp: &mut LinearProgram,
    gens: impl Iterator<Item = &'g [f64]>,
    e: &mut [Expr],
) {
    for g in gens {
        if g.iter().all(|&x| x >= 0.0) {
            continue;
        }
        let v = lp.add_nonneg(0.0);
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                e[i].push((v, gi));
            }
        }
    }
}

fn add_cell(lp: &mut LinearProgram, m: NodeIdx, d: usize, cells: &Cells, e: &mut [Expr]) {
    match cells {
        Cells::Recession(model) => {
            add_generators(lp, model.recession_generators(m).iter().map(Vec::as_slice), e)
        }
        Cells::Model(SolvencyModel::Cone(cones)) => {
            add_generators(lp, cones[m].generators.iter().map(Vec::as_slice), e)
        }
        Cells::Model(SolvencyModel::Region(regions)) => {
            let r = &regions[m];
            let k: Vec<usize> = (0..d).map(|_| lp.add_free(0.0)).collect();
            for (row, &h) in r.g.iter().zip(&r.h) {
                let coeffs = row
                    .iter()
                    .zip(&k)
                    .filter(|(a, _)| **a != 0.0)
                    .map(|(&a, &v)| (v, a))
                    .collect();
                lp.add_row(coeffs, Relation::Ge, h);
            }
            for (i, &v) in k.iter().enumerate() {
                e[i].push((v, 1.0));
            }
        }
        Cells::Frictionless(s) => {
            // {x : S·x ≥ 0} = cone{e1, ±(e_i − S_i e1)}
            let price = s.at(m);
            for i in 1..d {
                let v = lp.add_free(0.0);
                e[i].push((v, 1.0));
                e[0].push((v, -price[i]));
            }
        }
    }
}
