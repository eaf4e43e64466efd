//! Small built-in datasets for tests, examples and the demo.

use rand::Rng;

use crate::data_model::{AttributeDomain, Dataset};
use crate::privacy::seeded_rng;

fn labels(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|i| format!("{prefix}{i}")).collect()
}

/// 100 records over gender × age whose InDif is exactly 8.
pub fn gender_age() -> Dataset {
    let domains = vec![
        AttributeDomain::new("gender", vec!["male".into(), "female".into()]).unwrap(),
        AttributeDomain::new(
            "age",
            vec!["teenager".into(), "adult".into(), "elderly".into()],
        )
        .unwrap(),
    ];
    let cells = [(0u32, 0u32, 10), (0, 1, 10), (0, 2, 20), (1, 0, 10), (1, 1, 20), (1, 2, 30)];
    let mut rows = Vec::with_capacity(100);
    for (g, a, k) in cells {
        rows.extend(std::iter::repeat_n([g, a], k));
    }
    Dataset::from_rows(domains, &rows).unwrap()
}

/// Attributes named `a0, a1, ...` with values `v0, v1, ...`.
pub fn domains(sizes: &[usize]) -> Vec<AttributeDomain> {
    sizes
        .iter()
        .enumerate()
        .map(|(j, &k)| AttributeDomain::new(format!("a{j}"), labels("v", k)).unwrap())
        .collect()
}

/// A chain-correlated dataset: the first attribute is skewed, and each later
/// attribute copies a shifted version of its predecessor with probability
/// `strength`, otherwise draws uniformly.
pub fn correlated(sizes: &[usize], n: usize, strength: f64, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let d = sizes.len();
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let mut row = vec![0u32; d];
        for j in 0..d {
            let k = sizes[j] as u32;
            row[j] = if j == 0 {
                // Roughly geometric over the first domain.
                let mut v = 0;
                while v + 1 < k && rng.random_bool(0.55) {
                    v += 1;
                }
                v
            } else if rng.random_bool(strength) {
                (row[j - 1] + j as u32) % k
            } else {
                rng.random_range(0..k)
            };
        }
        rows.push(row);
    }
    Dataset::from_rows(domains(sizes), &rows).unwrap()
}
