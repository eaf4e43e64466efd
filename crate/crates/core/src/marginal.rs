//! Dense k-way marginal count tables and the InDif dependency score.
//!
//! Cells are laid out row-major over the spec's attributes in ascending
//! attribute order, so the last attribute varies fastest.

use serde::{Deserialize, Serialize};

use crate::data_model::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MarginalSpec {
    attributes: Vec<usize>,
    dims: Vec<usize>,
}

impl MarginalSpec {
    /// `domain_sizes` is indexed by attribute; the attribute list is sorted.
    pub fn new(mut attributes: Vec<usize>, domain_sizes: &[usize]) -> Result<Self> {
        attributes.sort_unstable();
        if attributes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::SpecMismatch(format!(
                "repeated attribute in {attributes:?}"
            )));
        }
        let dims = attributes
            .iter()
            .map(|&a| {
                domain_sizes.get(a).copied().ok_or_else(|| {
                    Error::SpecMismatch(format!(
                        "attribute {a} out of range for {} attributes",
                        domain_sizes.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if dims.contains(&0) {
            return Err(Error::SpecMismatch("zero-sized domain".into()));
        }
        Ok(Self { attributes, dims })
    }

    pub fn pair(a: usize, b: usize, domain_sizes: &[usize]) -> Result<Self> {
        Self::new(vec![a, b], domain_sizes)
    }

    pub fn attributes(&self) -> &[usize] {
        &self.attributes
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn contains(&self, attr: usize) -> bool {
        self.attributes.binary_search(&attr).is_ok()
    }

    /// Cell index of a full record.
    pub fn cell_of(&self, record: &[u32]) -> usize {
        self.attributes
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&a, &k)| acc * k + record[a] as usize)
    }

    /// Per-attribute values of a cell, in spec order.
    pub fn cell_values(&self, mut cell: usize) -> Vec<u32> {
        let mut out = vec![0u32; self.dims.len()];
        for (slot, &k) in out.iter_mut().zip(&self.dims).rev() {
            *slot = (cell % k) as u32;
            cell /= k;
        }
        out
    }

    /// Writes the cell's values into the spec's attribute positions.
    pub fn write_cell(&self, cell: usize, record: &mut [u32]) {
        for (&a, v) in self.attributes.iter().zip(self.cell_values(cell)) {
            record[a] = v;
        }
    }

    /// Sub-spec over the given attributes, which must all belong to this spec.
    pub fn sub_spec(&self, attrs: &[usize]) -> Result<MarginalSpec> {
        let mut attributes = attrs.to_vec();
        attributes.sort_unstable();
        attributes.dedup();
        let dims = attributes
            .iter()
            .map(|a| {
                self.attributes
                    .binary_search(a)
                    .map(|p| self.dims[p])
                    .map_err(|_| {
                        Error::SpecMismatch(format!("attribute {a} not in {:?}", self.attributes))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MarginalSpec { attributes, dims })
    }

    /// Attributes shared with another spec, ascending.
    pub fn intersection(&self, other: &MarginalSpec) -> Vec<usize> {
        self.attributes
            .iter()
            .copied()
            .filter(|a| other.contains(*a))
            .collect()
    }

    /// Maps every cell of `self` to its cell in `sub`.
    pub(crate) fn projection_map(&self, sub: &MarginalSpec) -> Vec<usize> {
        let positions: Vec<usize> = sub
            .attributes
            .iter()
            .map(|a| self.attributes.binary_search(a).expect("sub-spec attribute"))
            .collect();
        (0..self.cell_count())
            .map(|cell| {
                let vals = self.cell_values(cell);
                positions
                    .iter()
                    .zip(&sub.dims)
                    .fold(0, |acc, (&p, &k)| acc * k + vals[p] as usize)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalTable {
    spec: MarginalSpec,
    counts: Vec<f64>,
}

/// Portable JSON form: `{"attributes": [...], "counts": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalTableJson {
    pub attributes: Vec<usize>,
    pub counts: Vec<f64>,
}

impl MarginalTable {
    pub fn zeros(spec: MarginalSpec) -> Self {
        let counts = vec![0.0; spec.cell_count()];
        Self { spec, counts }
    }

    pub fn from_counts(spec: MarginalSpec, counts: Vec<f64>) -> Result<Self> {
        if counts.len() != spec.cell_count() {
            return Err(Error::SpecMismatch(format!(
                "{} counts for {} cells",
                counts.len(),
                spec.cell_count()
            )));
        }
        if counts.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("marginal counts must be finite"));
        }
        Ok(Self { spec, counts })
    }

    /// Exact count table of `dataset` over `spec`.
    pub fn compute(dataset: &Dataset, spec: &MarginalSpec) -> Self {
        let mut counts = vec![0.0; spec.cell_count()];
        for rec in dataset.records().take(dataset.n()) {
            counts[spec.cell_of(rec)] += 1.0;
        }
        Self {
            spec: spec.clone(),
            counts,
        }
    }

    pub fn spec(&self) -> &MarginalSpec {
        &self.spec
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub(crate) fn counts_mut(&mut self) -> &mut [f64] {
        &mut self.counts
    }

    pub fn into_counts(self) -> Vec<f64> {
        self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Sums out every attribute not in `attrs`.
    pub fn project(&self, attrs: &[usize]) -> Result<MarginalTable> {
        let sub = self.spec.sub_spec(attrs)?;
        let map = self.spec.projection_map(&sub);
        let mut counts = vec![0.0; sub.cell_count()];
        for (c, &target) in self.counts.iter().zip(&map) {
            counts[target] += c;
        }
        Ok(MarginalTable { spec: sub, counts })
    }

    /// Counts divided by the total; all zeros when the total is zero.
    pub fn frequencies(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0.0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|c| c / total).collect()
    }

    pub fn to_json(&self) -> MarginalTableJson {
        MarginalTableJson {
            attributes: self.spec.attributes.clone(),
            counts: self.counts.clone(),
        }
    }

    pub fn from_json(json: &MarginalTableJson, domain_sizes: &[usize]) -> Result<Self> {
        let spec = MarginalSpec::new(json.attributes.clone(), domain_sizes)?;
        if spec.attributes() != json.attributes.as_slice() {
            return Err(Error::SpecMismatch("attributes must be sorted ascending".into()));
        }
        Self::from_counts(spec, json.counts.clone())
    }
}

/// The two-way table implied by independence: `a[i]·b[j]/n`.
pub fn independent_product(a: &MarginalTable, b: &MarginalTable) -> Result<MarginalTable> {
    if a.spec.len() != 1 || b.spec.len() != 1 {
        return Err(Error::SpecMismatch("independent product needs one-way tables".into()));
    }
    let (ai, bi) = (a.spec.attributes[0], b.spec.attributes[0]);
    if ai == bi {
        return Err(Error::SpecMismatch("one-way tables share an attribute".into()));
    }
    let n = a.total();
    if !(n > 0.0) {
        return Err(Error::param("independent product of empty tables is undefined"));
    }
    let nb = b.total();
    if (n - nb).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::param(format!("one-way totals differ: {n} vs {nb}")));
    }
    // Order the product cells by ascending attribute index.
    let (lo, hi) = if ai < bi { (a, b) } else { (b, a) };
    let spec = MarginalSpec {
        attributes: vec![lo.spec.attributes[0], hi.spec.attributes[0]],
        dims: vec![lo.spec.dims[0], hi.spec.dims[0]],
    };
    let mut counts = Vec::with_capacity(spec.cell_count());
    for &x in &lo.counts {
        for &y in &hi.counts {
            counts.push(x * y / n);
        }
    }
    Ok(MarginalTable { spec, counts })
}

pub fn l1_distance(a: &MarginalTable, b: &MarginalTable) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::SpecMismatch(format!(
            "{:?} vs {:?}",
            a.spec.attributes, b.spec.attributes
        )));
    }
    Ok(a.counts
        .iter()
        .zip(&b.counts)
        .map(|(x, y)| (x - y).abs())
        .sum())
}

/// InDif of attributes `a` and `b`: the ℓ1 distance between their observed
/// two-way table and the product of their one-way tables. Zero on an empty
/// dataset.
pub fn indif(dataset: &Dataset, a: usize, b: usize) -> Result<f64> {
    if a == b {
        return Err(Error::param("InDif needs two distinct attributes"));
    }
    let sizes = dataset.domain_sizes();
    let joint = MarginalTable::compute(dataset, &MarginalSpec::pair(a, b, &sizes)?);
    if dataset.n() == 0 {
        return Ok(0.0);
    }
    let pa = joint.project(&[a])?;
    let pb = joint.project(&[b])?;
    l1_distance(&joint, &independent_product(&pa, &pb)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::AttributeDomain;
    use proptest::prelude::*;

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

    /// 100 records over gender × age.
    pub(crate) fn gender_age_fixture() -> Dataset {
        let cells = [(0u32, 0u32, 10), (0, 1, 10), (0, 2, 20), (1, 0, 10), (1, 1, 20), (1, 2, 30)];
        let mut rows = vec![];
        for (g, a, k) in cells {
            rows.extend(std::iter::repeat_n([g, a], k));
        }
        Dataset::from_rows(doms(&[2, 3]), &rows).unwrap()
    }

    #[test]
    fn one_way_counts() {
        let ds = gender_age_fixture();
        let t = MarginalTable::compute(&ds, &MarginalSpec::new(vec![0], &[2, 3]).unwrap());
        assert_eq!(t.counts(), &[40.0, 60.0]);
    }

    #[test]
    fn empty_and_constant_datasets() {
        let spec = MarginalSpec::new(vec![0, 1], &[2, 3]).unwrap();
        let empty = Dataset::empty(doms(&[2, 3]));
        assert!(MarginalTable::compute(&empty, &spec).counts().iter().all(|&c| c == 0.0));
        let same = Dataset::from_rows(doms(&[2, 3]), &[[1u32, 2]; 3]).unwrap();
        let t = MarginalTable::compute(&same, &spec);
        assert_eq!(t.counts()[spec.cell_of(&[1, 2])], 3.0);
        assert_eq!(t.total(), 3.0);
    }

    #[test]
    fn product_matches_independence_table() {
        let sizes = [2, 3];
        let a = MarginalTable::from_counts(MarginalSpec::new(vec![0], &sizes).unwrap(), vec![40.0, 60.0]).unwrap();
        let b = MarginalTable::from_counts(MarginalSpec::new(vec![1], &sizes).unwrap(), vec![20.0, 30.0, 50.0]).unwrap();
        let p = independent_product(&a, &b).unwrap();
        let expected = [8.0, 12.0, 20.0, 12.0, 18.0, 30.0];
        for (x, y) in p.counts().iter().zip(expected) {
            assert!((x - y).abs() < 1e-12);
        }
        // Argument order does not change the layout.
        assert_eq!(independent_product(&b, &a).unwrap(), p);
    }

    #[test]
    fn product_edge_cases() {
        let sizes = [2, 2];
        let one = |attr, c: Vec<f64>| {
            MarginalTable::from_counts(MarginalSpec::new(vec![attr], &sizes).unwrap(), c).unwrap()
        };
        let p = independent_product(&one(0, vec![7.0, 0.0]), &one(1, vec![7.0, 0.0])).unwrap();
        assert_eq!(p.counts(), &[7.0, 0.0, 0.0, 0.0]);
        let u = independent_product(&one(0, vec![50.0, 50.0]), &one(1, vec![50.0, 50.0])).unwrap();
        assert_eq!(u.counts(), &[25.0; 4]);
        assert!(independent_product(&one(0, vec![0.0, 0.0]), &one(1, vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn l1_cases() {
        let spec = MarginalSpec::new(vec![0], &[2]).unwrap();
        let a = MarginalTable::from_counts(spec.clone(), vec![1.0, 0.0]).unwrap();
        let b = MarginalTable::from_counts(spec, vec![0.0, 1.0]).unwrap();
        assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(l1_distance(&a, &b).unwrap(), 2.0);
        let other = MarginalTable::zeros(MarginalSpec::new(vec![1], &[2, 2]).unwrap());
        assert!(l1_distance(&a, &other).is_err());
    }

    #[test]
    fn indif_worked_examples() {
        let ds = gender_age_fixture();
        assert!((indif(&ds, 0, 1).unwrap() - 8.0).abs() < 1e-12);
        assert!(indif(&ds, 1, 1).is_err());

        // Exact product dataset: every cell of a 2×2 grid equally often.
        let ind = Dataset::from_rows(doms(&[2, 2]), &[[0u32, 0], [0, 1], [1, 0], [1, 1]]).unwrap();
        assert_eq!(indif(&ind, 0, 1).unwrap(), 0.0);

        // Perfectly correlated balanced pair, n = 100: brute force gives 100.
        let mut rows = vec![[0u32, 0]; 50];
        rows.extend(vec![[1u32, 1]; 50]);
        let cor = Dataset::from_rows(doms(&[2, 2]), &rows).unwrap();
        assert!((indif(&cor, 0, 1).unwrap() - 100.0).abs() < 1e-12);
    }

    #[test]
    fn cell_index_round_trip() {
        let spec = MarginalSpec::new(vec![3, 0, 2], &[2, 9, 3, 4]).unwrap();
        assert_eq!(spec.attributes(), &[0, 2, 3]);
        for cell in 0..spec.cell_count() {
            let mut rec = vec![0u32; 4];
            spec.write_cell(cell, &mut rec);
            assert_eq!(spec.cell_of(&rec), cell);
        }
    }

    #[test]
    fn json_form() {
        let t = gender_age_fixture();
        let m = MarginalTable::compute(&t, &MarginalSpec::new(vec![0, 1], &[2, 3]).unwrap());
        let text = serde_json::to_string(&m.to_json()).unwrap();
        assert_eq!(text, r#"{"attributes":[0,1],"counts":[10.0,10.0,20.0,10.0,20.0,30.0]}"#);
        let back: MarginalTableJson = serde_json::from_str(&text).unwrap();
        assert_eq!(MarginalTable::from_json(&back, &[2, 3]).unwrap(), m);
    }

    fn dataset_strategy() -> impl Strategy<Value = Dataset> {
        (prop::collection::vec(1usize..=4, 3), 0usize..40).prop_flat_map(|(sizes, n)| {
            let row = sizes.iter().map(|&k| 0u32..k as u32).collect::<Vec<_>>();
            prop::collection::vec(row, n)
                .prop_map(move |rows| Dataset::from_rows(doms(&sizes), &rows).unwrap())
        })
    }

    proptest! {
        #[test]
        fn indif_symmetric_and_bounded(ds in dataset_strategy()) {
            let ab = indif(&ds, 0, 1).unwrap();
            let ba = indif(&ds, 1, 0).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab >= 0.0);
            prop_assert!(ab <= 2.0 * ds.n() as f64 + 1e-9);
        }

        #[test]
        fn summing_out_matches_direct_count(ds in dataset_strategy(), drop in 0usize..3) {
            let sizes = ds.domain_sizes();
            let full = MarginalTable::compute(&ds, &MarginalSpec::new(vec![0, 1, 2], &sizes).unwrap());
            let keep: Vec<usize> = (0..3).filter(|&a| a != drop).collect();
            let direct = MarginalTable::compute(&ds, &MarginalSpec::new(keep.clone(), &sizes).unwrap());
            prop_assert_eq!(full.project(&keep).unwrap(), direct);
            prop_assert_eq!(full.total(), ds.n() as f64);
        }
    }
}
