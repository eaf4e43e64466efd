//! Post-processing of noisy marginals.
//!
//! Two repairs alternate until they agree: tables that share attributes are
//! pulled onto a common, variance-weighted estimate of the shared
//! sub-marginal, and every table is projected onto the nonnegative counts
//! with a fixed total.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::MarginalTable;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupMember {
    /// Index into the table list.
    pub table: usize,
    pub rho: f64,
    /// Cells of the member that fold into one cell of the shared set.
    pub g: usize,
}

/// An attribute set estimated by several marginals at once.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedAttributeGroup {
    pub attrs: Vec<usize>,
    pub members: Vec<GroupMember>,
}

impl SharedAttributeGroup {
    /// Collects every table containing `attrs`.
    pub fn new(attrs: Vec<usize>, tables: &[MarginalTable], rhos: &[f64]) -> Self {
        let members = tables
            .iter()
            .zip(rhos)
            .enumerate()
            .filter(|(_, (t, _))| attrs.iter().all(|&a| t.spec().contains(a)))
            .map(|(i, (t, &rho))| {
                let sub: usize = t
                    .spec()
                    .attributes()
                    .iter()
                    .zip(t.spec().dims())
                    .filter(|(a, _)| attrs.contains(a))
                    .map(|(_, &k)| k)
                    .product();
                GroupMember {
                    table: i,
                    rho,
                    g: t.spec().cell_count() / sub,
                }
            })
            .collect();
        Self { attrs, members }
    }

    /// Minimum-variance weights `(ρ_i/g_i) / Σ ρ_j/g_j`.
    pub fn weights(&self) -> Vec<f64> {
        let raw: Vec<f64> = self.members.iter().map(|m| m.rho / m.g as f64).collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|r| r / sum).collect()
    }
}

/// Variance of a weighted average of estimates with variances `g_i/ρ_i`.
pub fn combined_variance(weights: &[f64], rhos: &[f64], g: &[usize]) -> f64 {
    weights
        .iter()
        .zip(rhos)
        .zip(g)
        .map(|((w, r), &g)| w * w * g as f64 / r)
        .sum()
}

/// Replaces every member's projection on the group's attributes with the
/// weighted average of those projections. Each member moves uniformly
/// within a fiber and keeps its own total.
pub fn weighted_average(group: &SharedAttributeGroup, tables: &mut [MarginalTable]) -> Result<()> {
    if group.members.len() < 2 {
        return Ok(());
    }
    let weights = group.weights();
    let projections = group
        .members
        .iter()
        .map(|m| tables[m.table].project(&group.attrs))
        .collect::<Result<Vec<_>>>()?;
    let cells = projections[0].counts().len();
    let mut avg = vec![0.0; cells];
    for (p, w) in projections.iter().zip(&weights) {
        for (a, c) in avg.iter_mut().zip(p.counts()) {
            *a += w * c;
        }
    }
    let avg_total: f64 = avg.iter().sum();

    for (m, proj) in group.members.iter().zip(&projections) {
        let table = &mut tables[m.table];
        let shift = (proj.total() - avg_total) / cells as f64;
        let delta: Vec<f64> = avg
            .iter()
            .zip(proj.counts())
            .map(|(a, c)| (a + shift - c) / m.g as f64)
            .collect();
        let map = table.spec().projection_map(proj.spec());
        for (c, &to) in table.counts_mut().iter_mut().zip(&map) {
            *c += delta[to];
        }
    }
    Ok(())
}

/// Closest table in ℓ2 with nonnegative counts summing to `target_total`.
///
/// Finds the shift `τ` with `Σ max(x_i − τ, 0) = target_total` by sorting.
pub fn project_valid(table: &MarginalTable, target_total: f64) -> Result<MarginalTable> {
    let counts = project_counts(table.counts(), target_total)?;
    MarginalTable::from_counts(table.spec().clone(), counts)
}

fn project_counts(x: &[f64], total: f64) -> Result<Vec<f64>> {
    if !(total >= 0.0 && total.is_finite()) {
        return Err(Error::param(format!("target total must be nonnegative, got {total}")));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    if total == 0.0 {
        return Ok(vec![0.0; x.len()]);
    }
    let mut sorted = x.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - total) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    Ok(x.iter().map(|v| (v - tau).max(0.0)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyParams {
    pub max_rounds: usize,
    /// Relative to the shared total.
    pub tolerance: f64,
}

impl Default for ConsistencyParams {
    fn default() -> Self {
        Self {
            max_rounds: 30,
            tolerance: 1e-6,
        }
    }
}

/// Shared total: average of the table totals weighted by `ρ_i / cells_i`.
pub fn estimate_total(tables: &[MarginalTable], rhos: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, r) in tables.iter().zip(rhos) {
        let w = r / t.spec().cell_count() as f64;
        num += w * t.total();
        den += w;
    }
    if den > 0.0 {
        (num / den).max(0.0)
    } else {
        0.0
    }
}

/// Pairwise intersections of the table specs, largest first.
pub fn shared_groups(tables: &[MarginalTable], rhos: &[f64]) -> Vec<SharedAttributeGroup> {
    let mut sets = BTreeSet::new();
    for (i, a) in tables.iter().enumerate() {
        for b in &tables[i + 1..] {
            let common = a.spec().intersection(b.spec());
            if !common.is_empty() {
                sets.insert(common);
            }
        }
    }
    let mut sets: Vec<Vec<usize>> = sets.into_iter().collect();
    sets.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    sets.into_iter()
        .map(|attrs| SharedAttributeGroup::new(attrs, tables, rhos))
        .filter(|g| g.members.len() >= 2)
        .collect()
}

/// Largest cell-wise gap between two members' projections over any group.
pub fn max_disagreement(tables: &[MarginalTable], groups: &[SharedAttributeGroup]) -> Result<f64> {
    let mut worst = 0.0f64;
    for g in groups {
        let projections = g
            .members
            .iter()
            .map(|m| tables[m.table].project(&g.attrs))
            .collect::<Result<Vec<_>>>()?;
        for cell in 0..projections[0].counts().len() {
            let (lo, hi) = projections.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let v = p.counts()[cell];
                (lo.min(v), hi.max(v))
            });
            worst = worst.max(hi - lo);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub target_total: f64,
    pub rounds: usize,
    pub disagreement: f64,
}

/// Alternates weighted averaging over every shared group with projection
/// of every table, until the tables agree or the round budget runs out.
pub fn make_consistent(
    tables: &[MarginalTable],
    rhos: &[f64],
    params: &ConsistencyParams,
) -> Result<(Vec<MarginalTable>, ConsistencyReport)> {
    if tables.len() != rhos.len() {
        return Err(Error::param(format!("{} tables but {} budgets", tables.len(), rhos.len())));
    }
    if let Some(r) = rhos.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(Error::param(format!("table budget must be positive and finite, got {r}")));
    }
    let target_total = estimate_total(tables, rhos);
    let groups = shared_groups(tables, rhos);
    let mut out = tables.to_vec();
    let mut rounds = 0;
    let mut disagreement = f64::INFINITY;
    while rounds < params.max_rounds.max(1) {
        rounds += 1;
        for g in &groups {
            weighted_average(g, &mut out)?;
        }
        for t in out.iter_mut() {
            *t = project_valid(t, target_total)?;
        }
        disagreement = max_disagreement(&out, &groups)?;
        if disagreement <= params.tolerance * target_total {
            break;
        }
    }
    log::debug!("consistency: {rounds} rounds, disagreement {disagreement:.3e}");
    Ok((
        out,
        ConsistencyReport {
            target_total,
            rounds,
            disagreement,
        },
    ))
}
