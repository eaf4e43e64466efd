//! Building a synthetic dataset that matches a set of marginals.
//!
//! GUM starts from records drawn from the one-way tables and repeatedly
//! nudges them toward each marginal, moving at most an `α` share of a cell
//! per step. MCF is the blunt baseline that matches each marginal fully via
//! a min-cost flow before moving to the next one.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{AttributeDomain, Dataset};
use crate::error::{Error, Result};
use crate::marginal::{MarginalSpec, MarginalTable};
use crate::privacy::{child_rng, SynthRng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Decay {
    /// `α₀ · k^⌊t/s⌋`
    Step { k: f64, s: usize },
    /// `α₀ · e^{−kt}`
    Exponential { k: f64 },
    /// `α₀ / (1 + kt)`
    Linear { k: f64 },
    /// `α₀ / √(1 + kt)`
    Sqrt { k: f64 },
}

impl Default for Decay {
    fn default() -> Self {
        Decay::Step { k: 0.5, s: 20 }
    }
}

/// Update rate at (0-based) iteration `t`.
pub fn decay_alpha(alpha0: f64, t: usize, decay: &Decay) -> f64 {
    let t = t as f64;
    match *decay {
        Decay::Step { k, s } => alpha0 * k.powf((t / s.max(1) as f64).floor()),
        Decay::Exponential { k } => alpha0 * (-k * t).exp(),
        Decay::Linear { k } => alpha0 / (1.0 + k * t),
        Decay::Sqrt { k } => alpha0 / (1.0 + k * t).sqrt(),
    }
}

/// How the records added to an under-counted cell are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    /// Rewrite the marginal's attributes of a victim record.
    Replace,
    /// Overwrite a victim with a copy of a record already in the cell.
    Duplicate,
    /// Duplicate half (rounded down), replace the rest.
    HalfHalf,
}

/// Record-update schedules. S4 to S6 switch modes at the switch iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Strategy {
    S1,
    S2,
    S3,
    S4,
    #[default]
    S5,
    S6,
}

impl Strategy {
    pub fn mode(self, t: usize, switch: usize) -> UpdateMode {
        use UpdateMode::*;
        let late = t >= switch;
        match self {
            Strategy::S1 => Replace,
            Strategy::S2 => Duplicate,
            Strategy::S3 => HalfHalf,
            Strategy::S4 => if late { Duplicate } else { Replace },
            Strategy::S5 => if late { Duplicate } else { HalfHalf },
            Strategy::S6 => if late { Replace } else { HalfHalf },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Gum,
    Mcf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Synthetic record count; defaults to the estimated total of the tables.
    pub n_s: Option<usize>,
    pub alpha0: f64,
    pub decay: Decay,
    pub iterations: usize,
    pub strategy: Strategy,
    /// Defaults to half the iterations.
    pub strategy_switch_iteration: Option<usize>,
    pub method: Method,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_s: None,
            alpha0: 1.0,
            decay: Decay::default(),
            iterations: 100,
            strategy: Strategy::default(),
            strategy_switch_iteration: None,
            method: Method::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0 && self.alpha0.is_finite()) {
            return Err(Error::param(format!("alpha0 must be positive, got {}", self.alpha0)));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations must be at least 1"));
        }
        let k = match self.decay {
            Decay::Step { k, s } => {
                if s == 0 {
                    return Err(Error::param("step decay needs s >= 1"));
                }
                k
            }
            Decay::Exponential { k } | Decay::Linear { k } | Decay::Sqrt { k } => k,
        };
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::param(format!("decay rate must be nonnegative, got {k}")));
        }
        Ok(())
    }

    pub fn switch_iteration(&self) -> usize {
        self.strategy_switch_iteration.unwrap_or(self.iterations / 2)
    }
}

/// Rounds nonnegative amounts to integers summing to `total`, handing the
/// leftover units to the largest fractional parts (ties to the lower index).
pub fn largest_remainder(values: &[f64], total: usize) -> Vec<usize> {
    let mut out: Vec<usize> = values.iter().map(|v| v.max(0.0).floor() as usize).collect();
    let mut given: usize = out.iter().sum();
    let frac = |i: usize| values[i].max(0.0) - out[i] as f64;
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| frac(b).total_cmp(&frac(a)));
    for &i in order.iter().cycle().take(values.len() * 2) {
        if given >= total {
            break;
        }
        out[i] += 1;
        given += 1;
    }
    for &i in order.iter().rev() {
        if given <= total {
            break;
        }
        if out[i] > 0 {
            out[i] -= 1;
            given -= 1;
        }
    }
    out
}

/// Smallest `β` with `Σ min(excess_c, β·size_c) = amount`.
fn solve_beta(excess: &[(f64, f64)], amount: f64) -> f64 {
    if amount <= 0.0 || excess.is_empty() {
        return 0.0;
    }
    let mut points: Vec<(f64, f64, f64)> = excess.iter().map(|&(e, s)| (e / s, e, s)).collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut slope: f64 = points.iter().map(|p| p.2).sum();
    let mut acc = 0.0;
    for &(r, e, s) in &points {
        if acc + r * slope >= amount {
            return (amount - acc) / slope;
        }
        acc += e;
        slope -= s;
    }
    points.last().map_or(0.0, |p| p.0)
}

fn cell_members(ds: &Dataset, spec: &MarginalSpec) -> Vec<Vec<usize>> {
    let mut members = vec![Vec::new(); spec.cell_count()];
    for (i, rec) in ds.records().take(ds.n()).enumerate() {
        members[spec.cell_of(rec)].push(i);
    }
    members
}

/// Target counts clipped at zero and rescaled to the dataset size.
fn scaled_target(target: &MarginalTable, n: usize) -> Option<Vec<f64>> {
    let clipped: Vec<f64> = target.counts().iter().map(|c| c.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    (total > 0.0).then(|| clipped.iter().map(|c| c * n as f64 / total).collect())
}

/// Outcome of one GUM step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumStep {
    pub beta: f64,
    pub moved: usize,
}

/// One GUM step toward `target`. Under-counted cells gain
/// `min(n^t − n^s, α·n^s)` records (an empty cell counts as one record for
/// the cap); over-counted cells lose `min(n^s − n^t, β·n^s)` with `β` set
/// so both sides balance. Amounts are rounded by largest remainder, and
/// victims are paired with under-counted cells by a min-cost flow.
pub fn gum_update<R: Rng + ?Sized>(
    ds: &mut Dataset,
    target: &MarginalTable,
    alpha: f64,
    mode: UpdateMode,
    rng: &mut R,
) -> Result<GumStep> {
    let spec = target.spec();
    check_spec(spec, ds)?;
    let Some(t) = scaled_target(target, ds.n()) else {
        return Ok(GumStep { beta: 0.0, moved: 0 });
    };
    let mut members = cell_members(ds, spec);
    let sizes: Vec<f64> = members.iter().map(|m| m.len() as f64).collect();

    let adds: Vec<f64> = t
        .iter()
        .zip(&sizes)
        .map(|(&nt, &ns)| if nt > ns { (nt - ns).min(alpha * ns.max(1.0)) } else { 0.0 })
        .collect();
    let amount: f64 = adds.iter().sum();
    let over: Vec<usize> = (0..t.len()).filter(|&c| sizes[c] > t[c]).collect();
    let beta = solve_beta(
        &over.iter().map(|&c| (sizes[c] - t[c], sizes[c])).collect::<Vec<_>>(),
        amount,
    );
    let removes: Vec<f64> = (0..t.len())
        .map(|c| if sizes[c] > t[c] { (sizes[c] - t[c]).min(beta * sizes[c]) } else { 0.0 })
        .collect();

    let k = (amount.round() as usize).min(over.iter().map(|&c| members[c].len()).sum());
    let add_int = largest_remainder(&adds, k);
    let mut rm_int = largest_remainder(&removes, k);
    for (r, m) in rm_int.iter_mut().zip(&members) {
        *r = (*r).min(m.len());
    }

    // Victims travel to under-counted cells along a min-cost flow, so each
    // moved record changes as few of the marginal's attributes as possible.
    let sources: Vec<usize> = (0..t.len()).filter(|&c| rm_int[c] > 0).collect();
    let sinks: Vec<usize> = (0..t.len()).filter(|&c| add_int[c] > 0).collect();
    let mut pools: Vec<Vec<usize>> = sources
        .iter()
        .map(|&c| members[c].partial_shuffle(rng, rm_int[c]).0.to_vec())
        .collect();
    let values: Vec<Vec<u32>> = (0..t.len()).map(|c| spec.cell_values(c)).collect();
    let flow = route(
        &sources.iter().map(|&c| (rm_int[c], values[c].as_slice())).collect::<Vec<_>>(),
        &sinks.iter().map(|&c| (add_int[c], values[c].as_slice())).collect::<Vec<_>>(),
    );
    let assigned: Vec<Vec<usize>> = (0..sinks.len())
        .map(|j| {
            let mut got = Vec::new();
            for (i, pool) in pools.iter_mut().enumerate() {
                got.extend(pool.drain(pool.len() - flow[i][j]..));
            }
            got.shuffle(rng);
            got
        })
        .collect();

    let mut moved = 0;
    for (&c, victims) in sinks.iter().zip(&assigned) {
        let count = victims.len();
        let dup = match mode {
            _ if members[c].is_empty() => 0,
            UpdateMode::Replace => 0,
            UpdateMode::Duplicate => count,
            UpdateMode::HalfHalf => count / 2,
        };
        for (u, &v) in victims.iter().enumerate() {
            if u < dup {
                let src = members[c][rng.random_range(0..members[c].len())];
                ds.copy_record(src, v);
            } else {
                spec.write_cell(c, ds.record_mut(v));
            }
            moved += 1;
        }
    }
    Ok(GumStep { beta, moved })
}

/// Largest `supply × demand` instance solved exactly; bigger ones are
/// matched greedily by increasing Hamming distance.
pub const EXACT_FLOW_LIMIT: usize = 16_384;

/// Transport plan between cells with unit cost equal to the number of
/// differing attribute values.
fn route(supply: &[(usize, &[u32])], demand: &[(usize, &[u32])]) -> Vec<Vec<usize>> {
    let cost: Vec<Vec<u32>> = supply
        .iter()
        .map(|(_, u)| demand.iter().map(|(_, v)| hamming(u, v)).collect())
        .collect();
    let amounts_s: Vec<usize> = supply.iter().map(|x| x.0).collect();
    let amounts_d: Vec<usize> = demand.iter().map(|x| x.0).collect();
    if supply.len() * demand.len() <= EXACT_FLOW_LIMIT {
        min_cost_transport(&amounts_s, &amounts_d, &cost)
    } else {
        greedy_transport(&amounts_s, &amounts_d, &cost)
    }
}

/// Fills the cheapest pairs first, scanning supplies and demands in order.
pub fn greedy_transport(supply: &[usize], demand: &[usize], cost: &[Vec<u32>]) -> Vec<Vec<usize>> {
    let mut flow = vec![vec![0usize; demand.len()]; supply.len()];
    let mut rem_s = supply.to_vec();
    let mut rem_d = demand.to_vec();
    let max_cost = cost.iter().flatten().copied().max().unwrap_or(0);
    for level in 0..=max_cost {
        for (i, row) in cost.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c == level && rem_s[i] > 0 && rem_d[j] > 0 {
                    let f = rem_s[i].min(rem_d[j]);
                    flow[i][j] += f;
                    rem_s[i] -= f;
                    rem_d[j] -= f;
                }
            }
        }
    }
    flow
}

/// Minimum-cost transportation plan by successive shortest paths.
///
/// `cost[i][j]` is the per-unit cost from supply `i` to demand `j`. Returns
/// the flow matrix; unmatched units are left over when totals differ.
pub fn min_cost_transport(supply: &[usize], demand: &[usize], cost: &[Vec<u32>]) -> Vec<Vec<usize>> {
    let (s, d) = (supply.len(), demand.len());
    let mut flow = vec![vec![0usize; d]; s];
    let mut rem_s = supply.to_vec();
    let mut rem_d = demand.to_vec();
    let mut pot = vec![0i64; s + d];
    const INF: i64 = i64::MAX / 4;

    while rem_s.iter().any(|&x| x > 0) && rem_d.iter().any(|&x| x > 0) {
        let mut dist = vec![INF; s + d];
        let mut prev = vec![usize::MAX; s + d];
        let mut done = vec![false; s + d];
        for i in 0..s {
            if rem_s[i] > 0 {
                dist[i] = 0;
            }
        }
        while let Some(u) = (0..s + d)
            .filter(|&v| !done[v] && dist[v] < INF)
            .min_by_key(|&v| dist[v])
        {
            done[u] = true;
            if u < s {
                for j in 0..d {
                    let nd = dist[u] + cost[u][j] as i64 + pot[u] - pot[s + j];
                    if nd < dist[s + j] {
                        dist[s + j] = nd;
                        prev[s + j] = u;
                    }
                }
            } else {
                let j = u - s;
                for i in 0..s {
                    if flow[i][j] > 0 {
                        let nd = dist[u] - cost[i][j] as i64 + pot[u] - pot[i];
                        if nd < dist[i] {
                            dist[i] = nd;
                            prev[i] = u;
                        }
                    }
                }
            }
        }
        let Some(end) = (0..d)
            .filter(|&j| rem_d[j] > 0 && dist[s + j] < INF)
            .min_by_key(|&j| dist[s + j])
        else {
            break;
        };
        let reach = dist[s + end];
        for v in 0..s + d {
            pot[v] += dist[v].min(reach);
        }

        // Walk back to the source supply, collecting the bottleneck.
        let mut path = vec![s + end];
        let mut v = s + end;
        while prev[v] != usize::MAX {
            v = prev[v];
            path.push(v);
        }
        let start = v;
        let mut amount = rem_s[start].min(rem_d[end]);
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from >= s {
                amount = amount.min(flow[to][from - s]);
            }
        }
        for w in path.windows(2) {
            let (to, from) = (w[0], w[1]);
            if from < s {
                flow[from][to - s] += amount;
            } else {
                flow[to][from - s] -= amount;
            }
        }
        rem_s[start] -= amount;
        rem_d[end] -= amount;
    }
    flow
}

fn hamming(a: &[u32], b: &[u32]) -> u32 {
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u32
}

/// Rewrites records so the dataset's marginal matches `target` (rounded to
/// whole records), moving records along a min-cost flow whose unit cost is
/// the number of attributes that change. Returns the number of records moved.
pub fn mcf_update<R: Rng + ?Sized>(ds: &mut Dataset, target: &MarginalTable, rng: &mut R) -> Result<usize> {
    let spec = target.spec();
    check_spec(spec, ds)?;
    let Some(t) = scaled_target(target, ds.n()) else {
        return Ok(0);
    };
    let t = largest_remainder(&t, ds.n());
    let mut members = cell_members(ds, spec);
    let mut sources = Vec::new();
    let mut sinks = Vec::new();
    for (c, m) in members.iter().enumerate() {
        match m.len().cmp(&t[c]) {
            std::cmp::Ordering::Greater => sources.push((c, m.len() - t[c])),
            std::cmp::Ordering::Less => sinks.push((c, t[c] - m.len())),
            std::cmp::Ordering::Equal => {}
        }
    }

    let mut moves: Vec<(usize, usize, usize)> = Vec::new();
    if spec.len() == 1 {
        // Every move costs the same, so any feasible pairing is optimal.
        let mut sinks_iter = sinks.iter().copied();
        let mut current = sinks_iter.next();
        for &(u, mut amount) in &sources {
            while amount > 0 {
                let Some((v, need)) = current.as_mut() else { break };
                let f = amount.min(*need);
                moves.push((u, *v, f));
                amount -= f;
                *need -= f;
                if *need == 0 {
                    current = sinks_iter.next();
                }
            }
        }
    } else {
        let values: Vec<Vec<u32>> = (0..spec.cell_count()).map(|c| spec.cell_values(c)).collect();
        let flow = route(
            &sources.iter().map(|&(u, a)| (a, values[u].as_slice())).collect::<Vec<_>>(),
            &sinks.iter().map(|&(v, a)| (a, values[v].as_slice())).collect::<Vec<_>>(),
        );
        for (i, row) in flow.iter().enumerate() {
            for (j, &f) in row.iter().enumerate() {
                if f > 0 {
                    moves.push((sources[i].0, sinks[j].0, f));
                }
            }
        }
    }

    let mut taken = vec![0usize; members.len()];
    for &(u, _) in &sources {
        members[u].shuffle(rng);
    }
    let mut moved = 0;
    for (u, v, f) in moves {
        for _ in 0..f {
            let rec = members[u][taken[u]];
            taken[u] += 1;
            spec.write_cell(v, ds.record_mut(rec));
            moved += 1;
        }
    }
    Ok(moved)
}

fn check_spec(spec: &MarginalSpec, ds: &Dataset) -> Result<()> {
    let sizes = ds.domain_sizes();
    let ok = spec
        .attributes()
        .iter()
        .zip(spec.dims())
        .all(|(&a, &k)| sizes.get(a) == Some(&k));
    if ok {
        Ok(())
    } else {
        Err(Error::SpecMismatch(format!(
            "marginal over {:?} does not fit the dataset's domains",
            spec.attributes()
        )))
    }
}

fn sampler(weights: &[f64]) -> WeightedIndex<f64> {
    let clipped: Vec<f64> = weights.iter().map(|w| w.max(0.0)).collect();
    WeightedIndex::new(&clipped).unwrap_or_else(|_| WeightedIndex::new(vec![1.0; weights.len()]).unwrap())
}

/// Draws `n_s` records whose attributes are independent, each following its
/// (clipped, normalized) one-way table; an all-zero table samples uniformly.
pub fn init_random<R: Rng + ?Sized>(
    one_way: &[MarginalTable],
    domains: &[AttributeDomain],
    n_s: usize,
    rng: &mut R,
) -> Result<Dataset> {
    if one_way.len() != domains.len() {
        return Err(Error::param(format!(
            "{} one-way tables for {} attributes",
            one_way.len(),
            domains.len()
        )));
    }
    let mut columns = Vec::with_capacity(domains.len());
    for (j, (t, dom)) in one_way.iter().zip(domains).enumerate() {
        if t.spec().attributes() != [j] || t.spec().dims() != [dom.size()] {
            return Err(Error::SpecMismatch(format!("one-way table {j} is over the wrong attribute")));
        }
        let pick = sampler(t.counts());
        columns.push((0..n_s).map(|_| pick.sample(rng) as u32).collect());
    }
    Dataset::from_columns(domains.to_vec(), &columns)
}

/// Mean over tables of the ℓ1 distance between the dataset's normalized
/// marginal and the table's normalized counts.
pub fn marginal_error(ds: &Dataset, tables: &[MarginalTable]) -> f64 {
    if tables.is_empty() {
        return 0.0;
    }
    let sum: f64 = tables
        .iter()
        .map(|t| {
            let actual = MarginalTable::compute(ds, t.spec()).frequencies();
            let clipped: Vec<f64> = t.counts().iter().map(|c| c.max(0.0)).collect();
            let total: f64 = clipped.iter().sum();
            actual
                .iter()
                .zip(&clipped)
                .map(|(a, c)| (a - if total > 0.0 { c / total } else { 0.0 }).abs())
                .sum::<f64>()
        })
        .sum();
    sum / tables.len() as f64
}

/// Runs the chosen update method from a random start and records the
/// average marginal error before the first pass and after every pass.
pub fn synthesize_traced<R: Rng + ?Sized>(
    method: Method,
    tables: &[MarginalTable],
    one_way: &[MarginalTable],
    domains: &[AttributeDomain],
    n_s: usize,
    config: &SynthConfig,
    rng: &mut R,
) -> Result<(Dataset, Vec<f64>)> {
    run(method, tables, one_way, domains, n_s, config, rng, true)
}

/// GUM from a random start, updating against every table in order per pass
/// and shuffling the records after each pass.
pub fn gum_synthesize<R: Rng + ?Sized>(
    tables: &[MarginalTable],
    one_way: &[MarginalTable],
    domains: &[AttributeDomain],
    n_s: usize,
    config: &SynthConfig,
    rng: &mut R,
) -> Result<Dataset> {
    Ok(run(Method::Gum, tables, one_way, domains, n_s, config, rng, false)?.0)
}

/// The min-cost-flow baseline with the same pass structure as GUM.
pub fn mcf_synthesize<R: Rng + ?Sized>(
    tables: &[MarginalTable],
    one_way: &[MarginalTable],
    domains: &[AttributeDomain],
    n_s: usize,
    config: &SynthConfig,
    rng: &mut R,
) -> Result<Dataset> {
    Ok(run(Method::Mcf, tables, one_way, domains, n_s, config, rng, false)?.0)
}

fn run<R: Rng + ?Sized>(
    method: Method,
    tables: &[MarginalTable],
    one_way: &[MarginalTable],
    domains: &[AttributeDomain],
    n_s: usize,
    config: &SynthConfig,
    rng: &mut R,
    trace: bool,
) -> Result<(Dataset, Vec<f64>)> {
    config.validate()?;
    let mut ds = init_random(one_way, domains, n_s, rng)?;
    for t in tables {
        check_spec(t.spec(), &ds)?;
    }
    let mut curve = Vec::new();
    if trace {
        curve.push(marginal_error(&ds, tables));
    }
    let switch = config.switch_iteration();
    for t in 0..config.iterations {
        let alpha = decay_alpha(config.alpha0, t, &config.decay);
        let mode = config.strategy.mode(t, switch);
        for table in tables {
            match method {
                Method::Gum => {
                    gum_update(&mut ds, table, alpha, mode, rng)?;
                }
                Method::Mcf => {
                    mcf_update(&mut ds, table, rng)?;
                }
            }
        }
        ds.shuffle(rng);
        if trace {
            curve.push(marginal_error(&ds, tables));
        }
    }
    Ok((ds, curve))
}

/// Conditional sampler for an appended attribute given one existing column.
#[derive(Debug, Clone)]
pub struct Pairing {
    /// Column of the partner attribute in the dataset being extended.
    pub column: usize,
    /// Weights over the new attribute's values, one row per partner value.
    pub rows: Vec<Vec<f64>>,
}

impl Pairing {
    /// Reads the conditional rows out of a two-way table over the new
    /// attribute and its partner (global attribute ids).
    pub fn from_table(table: &MarginalTable, new_attr: usize, partner: usize, column: usize) -> Result<Self> {
        let spec = table.spec();
        if spec.len() != 2 || !spec.contains(new_attr) || !spec.contains(partner) || new_attr == partner {
            return Err(Error::SpecMismatch(format!(
                "pairing table over {:?} does not join {new_attr} and {partner}",
                spec.attributes()
            )));
        }
        let new_first = spec.attributes()[0] == new_attr;
        let (kx, kp) = if new_first {
            (spec.dims()[0], spec.dims()[1])
        } else {
            (spec.dims()[1], spec.dims()[0])
        };
        let counts = table.counts();
        let rows = (0..kp)
            .map(|p| {
                (0..kx)
                    .map(|x| if new_first { counts[x * kp + p] } else { counts[p * kx + x] })
                    .collect()
            })
            .collect();
        Ok(Self { column, rows })
    }
}

#[derive(Debug, Clone)]
pub struct Appended {
    pub domain: AttributeDomain,
    pub one_way: Vec<f64>,
    pub pairing: Option<Pairing>,
}

/// Adds columns after synthesis. A paired attribute is drawn per record from
/// its conditional row given the partner value (falling back to the one-way
/// when the row is empty); an unpaired one is drawn independently.
pub fn append_attributes<R: Rng + ?Sized>(ds: &Dataset, extra: &[Appended], rng: &mut R) -> Result<Dataset> {
    let n = ds.n();
    let mut domains = ds.domains().to_vec();
    let mut columns: Vec<Vec<u32>> = (0..ds.d()).map(|j| ds.column(j)).collect();
    for a in extra {
        if a.one_way.len() != a.domain.size() {
            return Err(Error::SpecMismatch(format!("one-way for `{}` has the wrong size", a.domain.name())));
        }
        let fallback = sampler(&a.one_way);
        let col: Vec<u32> = match &a.pairing {
            Some(p) => {
                let partner = columns
                    .get(p.column)
                    .ok_or_else(|| Error::param(format!("no partner column {}", p.column)))?
                    .clone();
                let samplers: Vec<Option<WeightedIndex<f64>>> = p
                    .rows
                    .iter()
                    .map(|row| {
                        let clipped: Vec<f64> = row.iter().map(|w| w.max(0.0)).collect();
                        WeightedIndex::new(&clipped).ok()
                    })
                    .collect();
                partner
                    .iter()
                    .map(|&v| match samplers.get(v as usize) {
                        Some(Some(s)) => s.sample(rng) as u32,
                        _ => fallback.sample(rng) as u32,
                    })
                    .collect()
            }
            None => (0..n).map(|_| fallback.sample(rng) as u32).collect(),
        };
        domains.push(a.domain.clone());
        columns.push(col);
    }
    if columns.is_empty() {
        return Ok(Dataset::empty(domains));
    }
    Dataset::from_columns(domains, &columns)
}

/// How the tables are split between GUM components and appended columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthLayout {
    /// Attribute sets synthesized jointly, each with its table indices.
    pub components: Vec<(Vec<usize>, Vec<usize>)>,
    /// Attributes added afterwards, with the index of their pairing table.
    pub appended: Vec<(usize, Option<usize>)>,
}

/// An attribute found in exactly one table, a two-way table whose partner
/// stays covered by some other table, is appended instead of synthesized
/// (unless another appended attribute already leans on it).
/// Attributes in no table are appended independently. The remaining tables
/// are grouped into connected components over shared attributes.
pub fn plan_layout(tables: &[MarginalTable], d: usize) -> SynthLayout {
    let mut count = vec![0usize; d];
    for t in tables {
        for &a in t.spec().attributes() {
            count[a] += 1;
        }
    }
    let mut keep = vec![true; tables.len()];
    let mut is_partner = vec![false; d];
    let mut appended = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        let attrs = t.spec().attributes();
        if attrs.len() != 2 {
            continue;
        }
        for (x, p) in [(attrs[0], attrs[1]), (attrs[1], attrs[0])] {
            if count[x] == 1 && count[p] >= 2 && !is_partner[x] {
                keep[i] = false;
                is_partner[p] = true;
                count[x] -= 1;
                count[p] -= 1;
                appended.push((x, Some(i)));
                break;
            }
        }
    }

    // Union-find over attributes of the kept tables.
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while parent[r] != r {
            r = parent[r];
        }
        let mut c = x;
        while parent[c] != r {
            let next = parent[c];
            parent[c] = r;
            c = next;
        }
        r
    }
    let mut covered = vec![false; d];
    for (t, _) in tables.iter().zip(&keep).filter(|(_, &k)| k) {
        let attrs = t.spec().attributes();
        for &a in attrs {
            covered[a] = true;
            let (ra, r0) = (find(&mut parent, a), find(&mut parent, attrs[0]));
            parent[ra.max(r0)] = ra.min(r0);
        }
    }
    let mut components: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut slot = vec![usize::MAX; d];
    for a in 0..d {
        if !covered[a] {
            continue;
        }
        let r = find(&mut parent, a);
        if slot[r] == usize::MAX {
            slot[r] = components.len();
            components.push((Vec::new(), Vec::new()));
        }
        components[slot[r]].0.push(a);
    }
    for (i, t) in tables.iter().enumerate() {
        if keep[i] {
            if let Some(&a) = t.spec().attributes().first() {
                let r = find(&mut parent, a);
                components[slot[r]].1.push(i);
            }
        }
    }
    for a in 0..d {
        if !covered[a] && !appended.iter().any(|&(x, _)| x == a) {
            appended.push((a, None));
        }
    }
    appended.sort_unstable();
    SynthLayout { components, appended }
}

fn localize(table: &MarginalTable, attrs: &[usize], sizes: &[usize]) -> Result<MarginalTable> {
    let local: Vec<usize> = table
        .spec()
        .attributes()
        .iter()
        .map(|a| attrs.binary_search(a).expect("attribute in component"))
        .collect();
    MarginalTable::from_counts(MarginalSpec::new(local, sizes)?, table.counts().to_vec())
}

fn one_way_local(table: &MarginalTable, j: usize, local_sizes: &[usize]) -> Result<MarginalTable> {
    MarginalTable::from_counts(MarginalSpec::new(vec![j], local_sizes)?, table.counts().to_vec())
}

/// Synthesizes each connected component separately (stream = its smallest
/// attribute), shuffles each block's rows, joins the blocks column-wise and
/// finally appends the remaining attributes (stream = d + attribute).
pub fn separate_and_join(
    tables: &[MarginalTable],
    one_way: &[MarginalTable],
    domains: &[AttributeDomain],
    n_s: usize,
    config: &SynthConfig,
    seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    let d = domains.len();
    if one_way.len() != d {
        return Err(Error::param(format!("{} one-way tables for {d} attributes", one_way.len())));
    }
    let sizes: Vec<usize> = domains.iter().map(AttributeDomain::size).collect();
    for t in tables.iter().chain(one_way) {
        for (&a, &k) in t.spec().attributes().iter().zip(t.spec().dims()) {
            if sizes.get(a) != Some(&k) {
                return Err(Error::SpecMismatch(format!(
                    "table over {:?} does not fit the domains",
                    t.spec().attributes()
                )));
            }
        }
    }
    let layout = plan_layout(tables, d);

    let block = |(attrs, idx): &(Vec<usize>, Vec<usize>)| -> Result<Dataset> {
        let local_sizes: Vec<usize> = attrs.iter().map(|&a| sizes[a]).collect();
        let local_tables = idx
            .iter()
            .map(|&i| localize(&tables[i], attrs, &local_sizes))
            .collect::<Result<Vec<_>>>()?;
        let local_one_way = attrs
            .iter()
            .enumerate()
            .map(|(j, &a)| one_way_local(&one_way[a], j, &local_sizes))
            .collect::<Result<Vec<_>>>()?;
        let local_domains: Vec<AttributeDomain> = attrs.iter().map(|&a| domains[a].clone()).collect();
        let mut rng: SynthRng = child_rng(seed, attrs[0] as u64);
        let mut ds = match config.method {
            Method::Gum => gum_synthesize(&local_tables, &local_one_way, &local_domains, n_s, config, &mut rng)?,
            Method::Mcf => mcf_synthesize(&local_tables, &local_one_way, &local_domains, n_s, config, &mut rng)?,
        };
        ds.shuffle(&mut rng);
        Ok(ds)
    };

    #[cfg(feature = "parallel")]
    let blocks: Vec<Dataset> = {
        use rayon::prelude::*;
        layout.components.par_iter().map(block).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let blocks: Vec<Dataset> = layout.components.iter().map(block).collect::<Result<_>>()?;

    let mut columns: Vec<Option<Vec<u32>>> = vec![None; d];
    for ((attrs, _), ds) in layout.components.iter().zip(&blocks) {
        for (j, &a) in attrs.iter().enumerate() {
            columns[a] = Some(ds.column(j));
        }
    }

    let base_attrs: Vec<usize> = (0..d).filter(|&a| columns[a].is_some()).collect();
    let base_domains: Vec<AttributeDomain> = base_attrs.iter().map(|&a| domains[a].clone()).collect();
    let base_columns: Vec<Vec<u32>> = base_attrs.iter().map(|&a| columns[a].take().unwrap()).collect();
    let mut joined = if base_columns.is_empty() {
        Dataset::empty(Vec::new())
    } else {
        Dataset::from_columns(base_domains, &base_columns)?
    };
    let mut order = base_attrs.clone();

    for &(a, pairing) in &layout.appended {
        let pairing = match pairing {
            Some(i) => {
                let partner = *tables[i].spec().attributes().iter().find(|&&x| x != a).unwrap();
                let column = order.iter().position(|&x| x == partner).expect("partner synthesized first");
                Some(Pairing::from_table(&tables[i], a, partner, column)?)
            }
            None => None,
        };
        let extra = Appended {
            domain: domains[a].clone(),
            one_way: one_way[a].counts().to_vec(),
            pairing,
        };
        let mut rng: SynthRng = child_rng(seed, (d + a) as u64);
        joined = if joined.d() == 0 {
            let column: Vec<u32> = {
                let pick = sampler(&extra.one_way);
                (0..n_s).map(|_| pick.sample(&mut rng) as u32).collect()
            };
            Dataset::from_columns(vec![extra.domain], &[column])?
        } else {
            append_attributes(&joined, std::slice::from_ref(&extra), &mut rng)?
        };
        order.push(a);
    }

    let mut out_columns = vec![Vec::new(); d];
    for (j, &a) in order.iter().enumerate() {
        out_columns[a] = joined.column(j);
    }
    Dataset::from_columns(domains.to_vec(), &out_columns)
}
