//! Private marginal selection.
//!
//! Every attribute pair gets a noisy InDif score. A greedy loop then adds
//! pairs while the estimated total error (Gaussian noise on the chosen
//! tables plus the dependency left out by the rest) keeps dropping, with
//! the publishing budget split across chosen tables in proportion to the
//! 2/3 power of their cell counts. Finally, small cliques of chosen pairs
//! are folded into higher-way marginals.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data_model::Dataset;
use crate::error::{Error, Result};
use crate::marginal::{indif, MarginalSpec};
use crate::privacy::{close_shares, gauss_sigma};

/// Sensitivity of a single InDif score.
pub const INDIF_SENSITIVITY: f64 = 4.0;
/// Default cap on the cell count of a combined marginal.
pub const DEFAULT_GAMMA: usize = 5000;
/// Default cap on attributes a new clique may share with accepted ones.
pub const DEFAULT_MAX_SHARED: usize = 2;
/// Cliques larger than this are never formed.
pub const MAX_CLIQUE_SIZE: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScore {
    pub pair: (usize, usize),
    pub noisy_indif: f64,
    pub cell_count: usize,
}

impl PairScore {
    /// Dependency error used by the greedy loop: the noisy score, clipped at 0.
    pub fn dependency_error(&self) -> f64 {
        self.noisy_indif.max(0.0)
    }
}

/// All `d(d−1)/2` attribute pairs in lexicographic order.
pub fn attribute_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d)
        .flat_map(|a| (a + 1..d).map(move |b| (a, b)))
        .collect()
}

/// Publishes every pairwise InDif score with `N(0, 8m/ρ′)` noise, which
/// spends `rho_select` in total. An infinite budget disables the noise.
pub fn publish_indif<R: Rng + ?Sized>(
    dataset: &Dataset,
    rho_select: f64,
    rng: &mut R,
) -> Result<Vec<PairScore>> {
    let d = dataset.d();
    if d < 2 {
        return Err(Error::param("need at least two attributes to score pairs"));
    }
    let pairs = attribute_pairs(d);
    let sigma = gauss_sigma(INDIF_SENSITIVITY, rho_select / pairs.len() as f64)?;
    let sizes = dataset.domain_sizes();

    #[cfg(feature = "parallel")]
    let exact: Vec<f64> = {
        use rayon::prelude::*;
        pairs
            .par_iter()
            .map(|&(a, b)| indif(dataset, a, b))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let exact: Vec<f64> = pairs
        .iter()
        .map(|&(a, b)| indif(dataset, a, b))
        .collect::<Result<_>>()?;

    Ok(pairs
        .into_iter()
        .zip(exact)
        .map(|((a, b), score)| {
            let noise = if sigma > 0.0 {
                sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            PairScore {
                pair: (a, b),
                noisy_indif: score + noise,
                cell_count: sizes[a] * sizes[b],
            }
        })
        .collect())
}

/// Splits `rho` in proportion to `c_i^{2/3}`; the last share absorbs
/// rounding so the shares add up to `rho` exactly.
pub fn allocate_budget(cell_counts: &[usize], rho: f64) -> Result<Vec<f64>> {
    if cell_counts.is_empty() {
        return Err(Error::param("cannot allocate budget over no marginals"));
    }
    if cell_counts.contains(&0) {
        return Err(Error::param("cell counts must be at least 1"));
    }
    if !(rho > 0.0) {
        return Err(Error::param(format!("rho must be positive, got {rho}")));
    }
    let weights: Vec<f64> = cell_counts.iter().map(|&c| (c as f64).powf(2.0 / 3.0)).collect();
    let total: f64 = weights.iter().sum();
    let mut out: Vec<f64> = weights.iter().map(|w| w / total * rho).collect();
    close_shares(&mut out, rho);
    Ok(out)
}

/// Expected ℓ1 noise error of a `c`-cell table published under `rho_i`:
/// `c·√(1/(π·ρ_i))`.
pub fn noise_error(cell_count: usize, rho_i: f64) -> Result<f64> {
    if !(rho_i > 0.0) {
        return Err(Error::param(format!("rho must be positive, got {rho_i}")));
    }
    Ok(cell_count as f64 * (1.0 / (PI * rho_i)).sqrt())
}

/// Output of the greedy pair selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GreedySelection {
    /// Indices into the score list, in the order they were picked.
    pub chosen: Vec<usize>,
    /// Budget share of each chosen pair, same order.
    pub rhos: Vec<f64>,
    /// Estimated total error before the first pick and after each pick.
    pub trajectory: Vec<f64>,
}

/// Greedy pair selection. Each round evaluates every unchosen pair `i` with
/// the budget re-split over `X ∪ {i}` and keeps the one with the smallest
/// total error; the loop stops as soon as that error no longer drops.
/// Ties go to the lower pair index.
pub fn select_marginals(scores: &[PairScore], rho_publish: f64) -> Result<GreedySelection> {
    if !(rho_publish > 0.0) {
        return Err(Error::param(format!("rho must be positive, got {rho_publish}")));
    }
    if scores.iter().any(|s| s.cell_count == 0) {
        return Err(Error::param("cell counts must be at least 1"));
    }
    let phi: Vec<f64> = scores.iter().map(PairScore::dependency_error).collect();
    let weight: Vec<f64> = scores
        .iter()
        .map(|s| (s.cell_count as f64).powf(2.0 / 3.0))
        .collect();
    // Under the optimal split the summed noise error over a set Y is
    // (Σ_Y c^{2/3})^{3/2} / √(πρ).
    let scale = 1.0 / (PI * rho_publish).sqrt();

    let mut in_set = vec![false; scores.len()];
    let mut chosen = Vec::new();
    let mut weight_sum = 0.0;
    let mut current: f64 = phi.iter().sum();
    let mut trajectory = vec![current];

    loop {
        let rest: f64 = phi
            .iter()
            .zip(&in_set)
            .filter(|(_, &x)| !x)
            .map(|(p, _)| p)
            .sum();
        let mut best: Option<(usize, f64)> = None;
        for i in (0..scores.len()).filter(|&i| !in_set[i]) {
            let err = (weight_sum + weight[i]).powf(1.5) * scale + (rest - phi[i]);
            if best.is_none_or(|(_, e)| err < e) {
                best = Some((i, err));
            }
        }
        match best {
            Some((i, err)) if err < current => {
                in_set[i] = true;
                chosen.push(i);
                weight_sum += weight[i];
                current = err;
                trajectory.push(err);
            }
            _ => break,
        }
    }

    let rhos = if chosen.is_empty() {
        Vec::new()
    } else {
        let counts: Vec<usize> = chosen.iter().map(|&i| scores[i].cell_count).collect();
        allocate_budget(&counts, rho_publish)?
    };
    Ok(GreedySelection {
        chosen,
        rhos,
        trajectory,
    })
}

/// All cliques of size `3..=MAX_CLIQUE_SIZE` whose domain product stays
/// within `gamma`, each listed once with ascending members.
fn bounded_cliques(adj: &[BTreeSet<usize>], sizes: &[usize], gamma: usize) -> Vec<Vec<usize>> {
    fn extend(
        clique: &mut Vec<usize>,
        product: usize,
        candidates: &[usize],
        adj: &[BTreeSet<usize>],
        sizes: &[usize],
        gamma: usize,
        out: &mut Vec<Vec<usize>>,
        truncated: &mut bool,
    ) {
        if clique.len() >= 3 {
            out.push(clique.clone());
        }
        for (k, &v) in candidates.iter().enumerate() {
            let Some(p) = product.checked_mul(sizes[v]) else {
                continue;
            };
            if p > gamma {
                continue;
            }
            if clique.len() == MAX_CLIQUE_SIZE {
                *truncated = true;
                return;
            }
            let next: Vec<usize> = candidates[k + 1..]
                .iter()
                .copied()
                .filter(|u| adj[v].contains(u))
                .collect();
            clique.push(v);
            extend(clique, p, &next, adj, sizes, gamma, out, truncated);
            clique.pop();
        }
    }

    let mut out = Vec::new();
    let mut truncated = false;
    for v in 0..adj.len() {
        if sizes[v] > gamma {
            continue;
        }
        let candidates: Vec<usize> = adj[v].range(v + 1..).copied().collect();
        let mut clique = vec![v];
        extend(&mut clique, sizes[v], &candidates, adj, sizes, gamma, &mut out, &mut truncated);
    }
    if truncated {
        warn!("cliques above {MAX_CLIQUE_SIZE} attributes were skipped");
    }
    out
}

/// Folds cliques of selected pairs into multi-way marginals.
///
/// Cliques are scanned from the largest down to size 3 (lexicographic
/// within a size). A clique is accepted when its cell count is at most
/// `gamma` and it shares at most `max_shared` attributes with the ones
/// already accepted; its internal pairs are then dropped. Accepted cliques
/// come first in the output, followed by the surviving pairs in input order.
pub fn combine_marginals(
    pairs: &[MarginalSpec],
    domain_sizes: &[usize],
    gamma: usize,
    max_shared: usize,
) -> Result<Vec<MarginalSpec>> {
    let d = domain_sizes.len();
    let mut adj = vec![BTreeSet::new(); d];
    for p in pairs {
        match p.attributes() {
            &[a, b] if a < d && b < d => {
                adj[a].insert(b);
                adj[b].insert(a);
            }
            other => {
                return Err(Error::SpecMismatch(format!(
                    "combine expects two-way specs, got {other:?}"
                )))
            }
        }
    }

    let mut cliques = bounded_cliques(&adj, domain_sizes, gamma);
    cliques.sort_by(|x, y| y.len().cmp(&x.len()).then_with(|| x.cmp(y)));

    let mut selected_attrs: BTreeSet<usize> = BTreeSet::new();
    let mut accepted: Vec<Vec<usize>> = Vec::new();
    for c in cliques {
        let shared = c.iter().filter(|a| selected_attrs.contains(a)).count();
        let product: usize = c.iter().map(|&a| domain_sizes[a]).product();
        if shared <= max_shared && product <= gamma {
            selected_attrs.extend(c.iter().copied());
            accepted.push(c);
        }
    }

    let mut out = accepted
        .iter()
        .map(|c| MarginalSpec::new(c.clone(), domain_sizes))
        .collect::<Result<Vec<_>>>()?;
    for p in pairs {
        let covered = accepted
            .iter()
            .any(|c| p.attributes().iter().all(|a| c.contains(a)));
        if !covered && !out.contains(p) {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Parameters of the selection stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct SelectionParams {
    pub gamma: usize,
    pub max_shared: usize,
}

impl Default for SelectionParams {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            max_shared: DEFAULT_MAX_SHARED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResult {
    pub scores: Vec<PairScore>,
    /// Chosen pairs before combining, in pick order.
    pub chosen: Vec<MarginalSpec>,
    pub chosen_rho: Vec<f64>,
    pub trajectory: Vec<f64>,
    /// Marginals to publish after combining.
    pub combined: Vec<MarginalSpec>,
    /// Publishing budget re-split over the combined marginals.
    pub combined_rho: Vec<f64>,
}

/// Greedy selection, clique combining and the final budget split, from
/// already published scores.
pub fn select_and_combine(
    scores: Vec<PairScore>,
    domain_sizes: &[usize],
    rho_publish: f64,
    params: SelectionParams,
) -> Result<SelectionResult> {
    let greedy = select_marginals(&scores, rho_publish)?;
    let chosen = greedy
        .chosen
        .iter()
        .map(|&i| MarginalSpec::pair(scores[i].pair.0, scores[i].pair.1, domain_sizes))
        .collect::<Result<Vec<_>>>()?;
    let combined = combine_marginals(&chosen, domain_sizes, params.gamma, params.max_shared)?;
    let combined_rho = if combined.is_empty() {
        Vec::new()
    } else {
        let counts: Vec<usize> = combined.iter().map(MarginalSpec::cell_count).collect();
        allocate_budget(&counts, rho_publish)?
    };
    Ok(SelectionResult {
        scores,
        chosen,
        chosen_rho: greedy.rhos,
        trajectory: greedy.trajectory,
        combined,
        combined_rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::AttributeDomain;
    use crate::privacy::seeded_rng;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn score(pair: (usize, usize), phi: f64, c: usize) -> PairScore {
        PairScore {
            pair,
            noisy_indif: phi,
            cell_count: c,
        }
    }

    /// Step-by-step restatement of the greedy loop with an explicit budget
    /// split per candidate.
    fn oracle_greedy(scores: &[PairScore], rho: f64) -> (Vec<usize>, Vec<f64>) {
        let phi: Vec<f64> = scores.iter().map(|s| s.noisy_indif.max(0.0)).collect();
        let mut x: Vec<usize> = vec![];
        let mut prev: f64 = phi.iter().sum();
        let mut traj = vec![prev];
        loop {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..scores.len() {
                if x.contains(&i) {
                    continue;
                }
                let mut set = x.clone();
                set.push(i);
                let counts: Vec<usize> = set.iter().map(|&j| scores[j].cell_count).collect();
                let rhos = allocate_budget(&counts, rho).unwrap();
                let mut e = 0.0;
                for (&j, &r) in set.iter().zip(&rhos) {
                    e += noise_error(scores[j].cell_count, r).unwrap();
                }
                for j in 0..scores.len() {
                    if !set.contains(&j) {
                        e += phi[j];
                    }
                }
                if best.is_none() || e < best.unwrap().1 - 1e-12 {
                    best = Some((i, e));
                }
            }
            match best {
                Some((i, e)) if e < prev => {
                    x.push(i);
                    prev = e;
                    traj.push(e);
                }
                _ => return (x, traj),
            }
        }
    }

    #[test]
    fn allocation_cases() {
        let r = allocate_budget(&[1, 8], 1.0).unwrap();
        assert_relative_eq!(r[0], 0.2, max_relative = 1e-12);
        assert_relative_eq!(r[1], 0.8, max_relative = 1e-12);
        let u = allocate_budget(&[6, 6, 6, 6], 2.0).unwrap();
        for x in &u {
            assert_relative_eq!(*x, 0.5, max_relative = 1e-12);
        }
        assert!(allocate_budget(&[], 1.0).is_err());
        assert!(allocate_budget(&[0, 1], 1.0).is_err());
    }

    #[test]
    fn allocation_sums_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let k = rng.random_range(1..40);
            let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..500)).collect();
            let rho = rng.random_range(0.001..5.0);
            let r = allocate_budget(&counts, rho).unwrap();
            assert_eq!(r.iter().sum::<f64>(), rho);
            assert!(r.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn noise_error_cases() {
        assert_relative_eq!(noise_error(6, 1.0 / PI).unwrap(), 6.0, max_relative = 1e-12);
        assert_relative_eq!(
            noise_error(12, 0.3).unwrap(),
            2.0 * noise_error(6, 0.3).unwrap(),
            max_relative = 1e-12
        );
        assert!(noise_error(3, 0.0).is_err());
    }

    #[test]
    fn noise_error_matches_monte_carlo() {
        // E|N(0, σ²)| = σ√(2/π) per cell, σ = 1/√(2ρ).
        let (c, rho) = (5usize, 0.4f64);
        let sigma = 1.0 / (2.0 * rho).sqrt();
        let mut rng = seeded_rng(8);
        let draws = 100_000;
        let mut total = 0.0;
        for _ in 0..draws {
            for _ in 0..c {
                total += (sigma * rng.sample::<f64, _>(StandardNormal)).abs();
            }
        }
        let mc = total / draws as f64;
        let psi = noise_error(c, rho).unwrap();
        assert!((mc - psi).abs() / psi < 0.02, "mc {mc} vs {psi}");
    }

    #[test]
    fn zero_dependency_selects_nothing() {
        let scores = vec![score((0, 1), 0.0, 4), score((0, 2), -3.0, 4), score((1, 2), 0.0, 4)];
        let g = select_marginals(&scores, 1.0).unwrap();
        assert!(g.chosen.is_empty());
        assert!(g.rhos.is_empty());
    }

    #[test]
    fn one_strong_pair_is_selected() {
        let g = select_marginals(&[score((0, 1), 1e6, 4)], 1.0).unwrap();
        assert_eq!(g.chosen, vec![0]);
        assert_eq!(g.rhos, vec![1.0]);
    }

    #[test]
    fn greedy_matches_oracle_on_small_instances() {
        let fixed = vec![score((0, 1), 40.0, 4), score((0, 2), 15.0, 6), score((1, 2), 25.0, 6)];
        let g = select_marginals(&fixed, 0.5).unwrap();
        let (x, traj) = oracle_greedy(&fixed, 0.5);
        assert_eq!(g.chosen, x);
        for (a, b) in g.trajectory.iter().zip(&traj) {
            assert_relative_eq!(*a, *b, max_relative = 1e-10);
        }
        assert!(g.trajectory.windows(2).all(|w| w[1] < w[0]));

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let m = rng.random_range(1..9);
            let scores: Vec<PairScore> = (0..m)
                .map(|i| score((0, i + 1), rng.random_range(-5.0..80.0), rng.random_range(1..30)))
                .collect();
            let rho = rng.random_range(0.05..3.0);
            let g = select_marginals(&scores, rho).unwrap();
            let (x, traj) = oracle_greedy(&scores, rho);
            assert_eq!(g.chosen, x);
            assert_eq!(g.trajectory.len(), traj.len());
            assert!(g.trajectory.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let scores = vec![score((0, 1), 50.0, 4), score((0, 2), 50.0, 4)];
        let g = select_marginals(&scores, 10.0).unwrap();
        assert_eq!(g.chosen[0], 0);
    }

    fn pair_specs(pairs: &[(usize, usize)], sizes: &[usize]) -> Vec<MarginalSpec> {
        pairs
            .iter()
            .map(|&(a, b)| MarginalSpec::pair(a, b, sizes).unwrap())
            .collect()
    }

    #[test]
    fn triangle_combines_under_gamma() {
        let sizes = [2, 2, 2];
        let pairs = pair_specs(&[(0, 1), (1, 2), (0, 2)], &sizes);
        let out = combine_marginals(&pairs, &sizes, 5000, 2).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].attributes(), &[0, 1, 2]);

        let tight = combine_marginals(&pairs, &sizes, 7, 2).unwrap();
        assert_eq!(tight, pairs);
    }

    /// Lists every vertex subset of size ≥ 3 that is a clique.
    fn brute_cliques(pairs: &[(usize, usize)], d: usize) -> Vec<Vec<usize>> {
        let edge = |a: usize, b: usize| pairs.contains(&(a.min(b), a.max(b)));
        let mut out = vec![];
        for mask in 0u32..(1 << d) {
            let members: Vec<usize> = (0..d).filter(|&v| mask >> v & 1 == 1).collect();
            if members.len() >= 3
                && members.iter().all(|&a| members.iter().all(|&b| a == b || edge(a, b)))
            {
                out.push(members);
            }
        }
        out
    }

    #[test]
    fn two_triangles_sharing_an_edge() {
        let sizes = [2, 2, 2, 2];
        let edges = [(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)];
        let mut expected = brute_cliques(&edges, 4);
        expected.sort();
        assert_eq!(expected, vec![vec![0, 1, 2], vec![1, 2, 3]]);

        let out = combine_marginals(&pair_specs(&edges, &sizes), &sizes, 5000, 2).unwrap();
        let attrs: Vec<&[usize]> = out.iter().map(MarginalSpec::attributes).collect();
        assert_eq!(attrs, vec![&[0, 1, 2][..], &[1, 2, 3][..]]);
    }

    #[test]
    fn clique_enumeration_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let d = rng.random_range(3..9);
            let sizes: Vec<usize> = (0..d).map(|_| rng.random_range(1..5)).collect();
            let edges: Vec<(usize, usize)> = attribute_pairs(d)
                .into_iter()
                .filter(|_| rng.random_bool(0.5))
                .collect();
            let mut adj = vec![BTreeSet::new(); d];
            for &(a, b) in &edges {
                adj[a].insert(b);
                adj[b].insert(a);
            }
            let gamma = 40;
            let mut got = bounded_cliques(&adj, &sizes, gamma);
            got.sort();
            let mut want: Vec<Vec<usize>> = brute_cliques(&edges, d)
                .into_iter()
                .filter(|c| c.iter().map(|&a| sizes[a]).product::<usize>() <= gamma)
                .collect();
            want.sort();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn combined_output_covers_every_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let d = rng.random_range(3..10);
            let sizes: Vec<usize> = (0..d).map(|_| rng.random_range(2..6)).collect();
            let edges: Vec<(usize, usize)> = attribute_pairs(d)
                .into_iter()
                .filter(|_| rng.random_bool(0.4))
                .collect();
            let pairs = pair_specs(&edges, &sizes);
            let out = combine_marginals(&pairs, &sizes, 200, 2).unwrap();
            for p in &pairs {
                assert!(out.iter().any(|o| p.attributes().iter().all(|a| o.contains(*a))));
            }
            for o in &out {
                assert!(o.cell_count() <= 200 || o.len() == 2);
            }
            // Pass-through pairs are not duplicated.
            let mut seen = BTreeSet::new();
            assert!(out.iter().all(|o| seen.insert(o.attributes().to_vec())));
        }
    }

    fn doms(sizes: &[usize]) -> Vec<AttributeDomain> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                AttributeDomain::new(format!("a{i}"), (0..k).map(|v| v.to_string()).collect())
                    .unwrap()
            })
            .collect()
    }

    fn correlated(n: usize, sizes: &[usize], seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|_| {
                let base = rng.random_range(0..sizes[0] as u32);
                sizes
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| {
                        if j % 2 == 1 && rng.random_bool(0.8) {
                            base % k as u32
                        } else {
                            rng.random_range(0..k as u32)
                        }
                    })
                    .collect()
            })
            .collect();
        Dataset::from_rows(doms(sizes), &rows).unwrap()
    }

    #[test]
    fn publish_counts_and_noiseless_mode() {
        let ds = correlated(200, &[3, 3, 2], 1);
        let exact = publish_indif(&ds, f64::INFINITY, &mut seeded_rng(0)).unwrap();
        assert_eq!(exact.len(), 3);
        for s in &exact {
            assert_eq!(s.noisy_indif, indif(&ds, s.pair.0, s.pair.1).unwrap());
        }
        let noisy1 = publish_indif(&ds, 0.5, &mut seeded_rng(3)).unwrap();
        let noisy2 = publish_indif(&ds, 0.5, &mut seeded_rng(3)).unwrap();
        assert_eq!(noisy1, noisy2);
        assert!(publish_indif(&Dataset::empty(doms(&[2])), 1.0, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn indif_noise_scale() {
        // d = 5, ρ′ = 1: σ = √(8·10/1).
        let m = attribute_pairs(5).len();
        assert_eq!(m, 10);
        let sigma = gauss_sigma(INDIF_SENSITIVITY, 1.0 / m as f64).unwrap();
        assert_relative_eq!(sigma, 80f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(sigma, 8.944, epsilon = 1e-3);
    }

    #[test]
    fn noiseless_selection_is_permutation_equivariant() {
        let sizes = [3, 2, 4, 2, 3];
        let ds = correlated(400, &sizes, 5);
        let perm = [3usize, 0, 4, 1, 2]; // new column j holds old attribute perm[j]
        let new_sizes: Vec<usize> = perm.iter().map(|&o| sizes[o]).collect();
        let rows: Vec<Vec<u32>> = ds
            .records()
            .map(|r| perm.iter().map(|&o| r[o]).collect())
            .collect();
        let permuted = Dataset::from_rows(doms(&new_sizes), &rows).unwrap();

        let pick = |ds: &Dataset| {
            let s = publish_indif(ds, f64::INFINITY, &mut seeded_rng(0)).unwrap();
            let g = select_marginals(&s, 1.0).unwrap();
            g.chosen.iter().map(|&i| s[i].pair).collect::<Vec<_>>()
        };
        let mut original: Vec<(usize, usize)> = pick(&ds);
        let mut mapped: Vec<(usize, usize)> = pick(&permuted)
            .into_iter()
            .map(|(a, b)| {
                let (x, y) = (perm[a], perm[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        original.sort();
        mapped.sort();
        assert!(!original.is_empty());
        assert_eq!(original, mapped);
    }

    #[test]
    fn selection_result_budget_adds_up() {
        let ds = correlated(2000, &[3, 3, 2, 2, 4], 9);
        let scores = publish_indif(&ds, f64::INFINITY, &mut seeded_rng(0)).unwrap();
        let r = select_and_combine(scores, &ds.domain_sizes(), 0.8, SelectionParams::default()).unwrap();
        assert!(!r.combined.is_empty());
        assert_eq!(r.combined_rho.iter().sum::<f64>(), 0.8);
        assert!(r.combined_rho.iter().all(|&x| x > 0.0));
        serde_json::to_string(&r).unwrap();
    }
}
