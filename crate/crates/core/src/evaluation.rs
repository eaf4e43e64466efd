//! Utility metrics comparing a synthetic dataset with the original.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{AttributeDomain, Dataset};
use crate::error::{Error, Result};
use crate::marginal::{MarginalSpec, MarginalTable};
use crate::selection::attribute_pairs;

/// Default number of range queries per evaluation.
pub const DEFAULT_QUERIES: usize = 1000;

/// Inclusive interval of value indices on one attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub attribute: usize,
    pub lo: u32,
    pub hi: u32,
}

/// Conjunction of intervals on three distinct attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeQuery {
    pub intervals: [Interval; 3],
}

impl RangeQuery {
    pub fn matches(&self, record: &[u32]) -> bool {
        self.intervals
            .iter()
            .all(|iv| (iv.lo..=iv.hi).contains(&record[iv.attribute]))
    }

    /// Fraction of records inside the query; zero for an empty dataset.
    pub fn answer(&self, ds: &Dataset) -> f64 {
        if ds.n() == 0 {
            return 0.0;
        }
        let hits = ds.records().take(ds.n()).filter(|r| self.matches(r)).count();
        hits as f64 / ds.n() as f64
    }
}

/// ℓ1 distance between frequency-normalized two-way marginals, averaged
/// over all attribute pairs.
pub fn two_way_error(original: &Dataset, synthetic: &Dataset) -> Result<f64> {
    original.ensure_same_domains(synthetic)?;
    let d = original.d();
    if d < 2 {
        return Err(Error::param("two-way error needs at least two attributes"));
    }
    let sizes = original.domain_sizes();
    let pairs = attribute_pairs(d);
    let pair_error = |&(a, b): &(usize, usize)| -> f64 {
        let spec = MarginalSpec::pair(a, b, &sizes).expect("valid pair");
        let x = MarginalTable::compute(original, &spec).frequencies();
        let y = MarginalTable::compute(synthetic, &spec).frequencies();
        x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum()
    };
    #[cfg(feature = "parallel")]
    let total: f64 = {
        use rayon::prelude::*;
        pairs.par_iter().map(pair_error).collect::<Vec<_>>().iter().sum()
    };
    #[cfg(not(feature = "parallel"))]
    let total: f64 = pairs.iter().map(pair_error).sum();
    Ok(total / pairs.len() as f64)
}

/// Mean absolute difference of the fraction of records matching each query.
pub fn range_query_error(original: &Dataset, synthetic: &Dataset, queries: &[RangeQuery]) -> Result<f64> {
    original.ensure_same_domains(synthetic)?;
    for q in queries {
        for iv in &q.intervals {
            let size = original
                .domains()
                .get(iv.attribute)
                .map(AttributeDomain::size)
                .ok_or_else(|| Error::param(format!("query attribute {} out of range", iv.attribute)))?;
            if iv.lo > iv.hi || iv.hi as usize >= size {
                return Err(Error::param(format!("query interval {iv:?} outside the domain")));
            }
        }
    }
    if queries.is_empty() {
        return Ok(0.0);
    }
    let gap = |q: &RangeQuery| (q.answer(original) - q.answer(synthetic)).abs();
    #[cfg(feature = "parallel")]
    let total: f64 = {
        use rayon::prelude::*;
        queries.par_iter().map(gap).collect::<Vec<_>>().iter().sum()
    };
    #[cfg(not(feature = "parallel"))]
    let total: f64 = queries.iter().map(gap).sum();
    Ok(total / queries.len() as f64)
}

/// Draws queries over three distinct attributes chosen uniformly, each with
/// an interval whose two endpoints are uniform over the domain (then sorted).
pub fn sample_queries<R: Rng + ?Sized>(domains: &[AttributeDomain], count: usize, rng: &mut R) -> Result<Vec<RangeQuery>> {
    let d = domains.len();
    if d < 3 {
        return Err(Error::param(format!("range queries need at least 3 attributes, got {d}")));
    }
    Ok((0..count)
        .map(|_| {
            let mut attrs = sample(rng, d, 3).into_vec();
            attrs.sort_unstable();
            let intervals = std::array::from_fn(|i| {
                let k = domains[attrs[i]].size() as u32;
                let (x, y) = (rng.random_range(0..k), rng.random_range(0..k));
                Interval {
                    attribute: attrs[i],
                    lo: x.min(y),
                    hi: x.max(y),
                }
            });
            RangeQuery { intervals }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSettings {
    pub queries: usize,
    pub seed: u64,
}

/// Metrics report. `classifier_error` is left for externally computed
/// classification results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub two_way_error: f64,
    pub range_query_error: Option<f64>,
    pub classifier_error: Option<f64>,
    pub settings: EvaluationSettings,
}

/// Both metrics with queries drawn from `seed`. Range queries are skipped
/// (reported as null) when there are fewer than three attributes.
pub fn evaluate(original: &Dataset, synthetic: &Dataset, queries: usize, seed: u64) -> Result<EvaluationReport> {
    let two_way_error = two_way_error(original, synthetic)?;
    let range_query_error = if original.d() >= 3 {
        let mut rng = crate::privacy::seeded_rng(seed);
        let qs = sample_queries(original.domains(), queries, &mut rng)?;
        Some(range_query_error(original, synthetic, &qs)?)
    } else {
        None
    };
    Ok(EvaluationReport {
        two_way_error,
        range_query_error,
        classifier_error: None,
        settings: EvaluationSettings { queries, seed },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{correlated, domains};
    use crate::privacy::seeded_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pair_ds(rows: &[[u32; 2]]) -> Dataset {
        Dataset::from_rows(domains(&[2, 2]), rows).unwrap()
    }

    #[test]
    fn identical_datasets_score_zero() {
        let ds = correlated(&[3, 4, 2, 5], 500, 0.6, 1);
        assert_eq!(two_way_error(&ds, &ds).unwrap(), 0.0);
        let qs = sample_queries(ds.domains(), 100, &mut seeded_rng(2)).unwrap();
        assert_eq!(range_query_error(&ds, &ds, &qs).unwrap(), 0.0);
    }

    #[test]
    fn correlated_versus_independent_pair() {
        // [.5, 0, 0, .5] against [.25, .25, .25, .25].
        let corr = pair_ds(&[[0, 0], [0, 0], [1, 1], [1, 1]]);
        let indep = pair_ds(&[[0, 0], [0, 1], [1, 0], [1, 1]]);
        assert_abs_diff_eq!(two_way_error(&corr, &indep).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(two_way_error(&corr, &indep).unwrap(), two_way_error(&indep, &corr).unwrap());
    }

    #[test]
    fn mismatched_domains_are_rejected() {
        let a = correlated(&[3, 4], 10, 0.5, 1);
        let b = correlated(&[3, 5], 10, 0.5, 1);
        assert!(two_way_error(&a, &b).is_err());
        assert!(range_query_error(&a, &b, &[]).is_err());
    }

    #[test]
    fn hand_counted_query() {
        let doms = domains(&[3, 3, 3]);
        let a = Dataset::from_rows(doms.clone(), &[[0, 0, 0], [1, 1, 1], [2, 2, 2], [1, 2, 0], [0, 1, 2]]).unwrap();
        let b = Dataset::from_rows(doms, &[[0, 0, 0], [0, 0, 0], [2, 2, 2], [2, 2, 2], [1, 1, 1]]).unwrap();
        let q = RangeQuery {
            intervals: [
                Interval { attribute: 0, lo: 0, hi: 1 },
                Interval { attribute: 1, lo: 1, hi: 2 },
                Interval { attribute: 2, lo: 0, hi: 2 },
            ],
        };
        // Matches in a: rows 1, 3, 4. Matches in b: row 4.
        assert_eq!(q.answer(&a), 0.6);
        assert_eq!(q.answer(&b), 0.2);
        assert_abs_diff_eq!(range_query_error(&a, &b, &[q]).unwrap(), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn full_domain_queries_contribute_nothing() {
        let a = correlated(&[3, 4, 2], 200, 0.6, 1);
        let b = correlated(&[3, 4, 2], 200, 0.1, 2);
        let q = RangeQuery {
            intervals: [
                Interval { attribute: 0, lo: 0, hi: 2 },
                Interval { attribute: 1, lo: 0, hi: 3 },
                Interval { attribute: 2, lo: 0, hi: 1 },
            ],
        };
        assert_eq!(range_query_error(&a, &b, &[q]).unwrap(), 0.0);
    }

    #[test]
    fn query_sampling() {
        let doms = domains(&[3, 4, 2, 5, 6]);
        let a = sample_queries(&doms, 2000, &mut seeded_rng(7)).unwrap();
        let b = sample_queries(&doms, 2000, &mut seeded_rng(7)).unwrap();
        assert_eq!(a, b);
        let mut seen = [0usize; 5];
        for q in &a {
            let attrs: Vec<usize> = q.intervals.iter().map(|iv| iv.attribute).collect();
            assert!(attrs[0] < attrs[1] && attrs[1] < attrs[2]);
            for iv in &q.intervals {
                assert!(iv.lo <= iv.hi && (iv.hi as usize) < doms[iv.attribute].size());
                seen[iv.attribute] += 1;
            }
        }
        // Each attribute is in 3/5 of the queries.
        for s in seen {
            assert!((s as f64 / 2000.0 - 0.6).abs() < 0.05, "{seen:?}");
        }
        assert!(sample_queries(&doms[..2], 1, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn error_shrinks_with_sample_size() {
        let halves = |n: usize| {
            let ds = correlated(&[3, 4, 2, 5], 2 * n, 0.6, 3);
            let rows: Vec<Vec<u32>> = ds.records().map(|r| r.to_vec()).collect();
            let a = Dataset::from_rows(ds.domains().to_vec(), &rows[..n]).unwrap();
            let b = Dataset::from_rows(ds.domains().to_vec(), &rows[n..]).unwrap();
            two_way_error(&a, &b).unwrap()
        };
        assert!(halves(20_000) < halves(500));
    }

    #[test]
    fn report_keys() {
        let ds = correlated(&[3, 4, 2], 50, 0.6, 1);
        let report = evaluate(&ds, &ds, 10, 4).unwrap();
        let json = serde_json::to_value(&report).unwrap();
        let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["two_way_error", "range_query_error", "classifier_error", "settings"]);
        assert_eq!(json["settings"]["queries"], 10);
        assert_eq!(json["settings"]["seed"], 4);
        assert!(json["classifier_error"].is_null());
    }

    proptest! {
        #[test]
        fn metrics_are_bounded(seed in any::<u64>(), strength in 0.0f64..1.0) {
            let a = correlated(&[3, 2, 4], 60, 0.9, seed);
            let b = correlated(&[3, 2, 4], 40, strength, seed ^ 1);
            let e = two_way_error(&a, &b).unwrap();
            prop_assert!((0.0..=2.0).contains(&e));
            let qs = sample_queries(a.domains(), 50, &mut seeded_rng(seed)).unwrap();
            let r = range_query_error(&a, &b, &qs).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
