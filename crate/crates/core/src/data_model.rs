//! Integer-encoded categorical datasets.
//!
//! A [`Dataset`] is an `n × d` matrix of value indices, one column per
//! [`AttributeDomain`]. Domains always come from an explicit sidecar file
//! (a JSON object mapping attribute name to its ordered list of labels) and
//! are never inferred from the private records.
//!
//! The module also holds the low-count value filter: values whose noisy
//! one-way count falls below `3σ` are either zeroed out or folded into a
//! single merged value, and [`unmerge`] undoes the folding after synthesis.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::MarginalTable;

/// Label given to the value that stands in for a group of low-count values.
pub const MERGED_LABEL: &str = "<merged>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDomain {
    name: String,
    values: Vec<String>,
}

impl AttributeDomain {
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Result<Self> {
        let name = name.into();
        if values.is_empty() {
            return Err(Error::Domain(format!("attribute `{name}` has no values")));
        }
        let mut seen = HashSet::with_capacity(values.len());
        for v in &values {
            if !seen.insert(v.as_str()) {
                return Err(Error::Domain(format!(
                    "attribute `{name}` lists value `{v}` twice"
                )));
            }
        }
        Ok(Self { name, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn size(&self) -> usize {
        self.values.len()
    }

    pub fn index_of(&self, label: &str) -> Option<u32> {
        self.values.iter().position(|v| v == label).map(|i| i as u32)
    }

    pub fn label(&self, index: u32) -> &str {
        &self.values[index as usize]
    }
}

/// Parses a domain spec: a JSON object `{attribute: [labels...]}`. Key order
/// fixes the column order of the encoded matrix.
pub fn parse_domain_spec(json: &str) -> Result<Vec<AttributeDomain>> {
    let value: serde_json::Value = serde_json::from_str(json)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Domain("top level must be a JSON object".into()))?;
    if obj.is_empty() {
        return Err(Error::Domain("no attributes declared".into()));
    }
    obj.iter()
        .map(|(name, labels)| {
            let arr = labels.as_array().ok_or_else(|| {
                Error::Domain(format!("attribute `{name}` must map to an array of labels"))
            })?;
            let values = arr
                .iter()
                .map(|l| match l {
                    serde_json::Value::String(s) => Ok(s.clone()),
                    serde_json::Value::Number(n) => Ok(n.to_string()),
                    serde_json::Value::Bool(b) => Ok(b.to_string()),
                    other => Err(Error::Domain(format!(
                        "attribute `{name}`: unsupported label {other}"
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            AttributeDomain::new(name.clone(), values)
        })
        .collect()
}

pub fn load_domain_spec(path: impl AsRef<Path>) -> Result<Vec<AttributeDomain>> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    parse_domain_spec(&text)
}

/// Serializes domains back into the sidecar format.
pub fn domain_spec_json(domains: &[AttributeDomain]) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for d in domains {
        map.insert(d.name.clone(), serde_json::json!(d.values));
    }
    serde_json::Value::Object(map)
}

/// Row-major matrix of value indices over a list of attribute domains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    domains: Vec<AttributeDomain>,
    data: Vec<u32>,
}

impl Dataset {
    pub fn empty(domains: Vec<AttributeDomain>) -> Self {
        Self {
            domains,
            data: Vec::new(),
        }
    }

    /// Builds a dataset from rows, checking every cell against its domain.
    pub fn from_rows<R: AsRef<[u32]>>(domains: Vec<AttributeDomain>, rows: &[R]) -> Result<Self> {
        let d = domains.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::RowLength {
                    row: i,
                    expected: d,
                    found: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v as usize >= domains[j].size() {
                    return Err(Error::DomainMismatch(format!(
                        "row {i}, attribute `{}`: index {v} outside domain of size {}",
                        domains[j].name,
                        domains[j].size()
                    )));
                }
            }
            data.extend_from_slice(row);
        }
        Ok(Self { domains, data })
    }

    /// Builds a dataset from equally long columns.
    pub fn from_columns(domains: Vec<AttributeDomain>, columns: &[Vec<u32>]) -> Result<Self> {
        if columns.len() != domains.len() {
            return Err(Error::DomainMismatch(format!(
                "{} columns for {} domains",
                columns.len(),
                domains.len()
            )));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::DomainMismatch("columns differ in length".into()));
        }
        let d = domains.len();
        let mut data = vec![0u32; n * d];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                if v as usize >= domains[j].size() {
                    return Err(Error::DomainMismatch(format!(
                        "column `{}` holds index {v} outside its domain",
                        domains[j].name
                    )));
                }
                data[i * d + j] = v;
            }
        }
        Ok(Self { domains, data })
    }

    pub fn domains(&self) -> &[AttributeDomain] {
        &self.domains
    }

    pub fn domain_sizes(&self) -> Vec<usize> {
        self.domains.iter().map(AttributeDomain::size).collect()
    }

    pub fn n(&self) -> usize {
        if self.domains.is_empty() {
            0
        } else {
            self.data.len() / self.domains.len()
        }
    }

    pub fn d(&self) -> usize {
        self.domains.len()
    }

    pub fn record(&self, i: usize) -> &[u32] {
        let d = self.d();
        &self.data[i * d..(i + 1) * d]
    }

    pub(crate) fn record_mut(&mut self, i: usize) -> &mut [u32] {
        let d = self.d();
        &mut self.data[i * d..(i + 1) * d]
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &[u32]> + '_ {
        self.data.chunks_exact(self.d().max(1))
    }

    pub fn value(&self, i: usize, attr: usize) -> u32 {
        self.data[i * self.d() + attr]
    }

    pub fn column(&self, attr: usize) -> Vec<u32> {
        self.records().map(|r| r[attr]).collect()
    }

    /// Overwrites record `dst` with a copy of record `src`.
    pub(crate) fn copy_record(&mut self, src: usize, dst: usize) {
        if src != dst {
            let d = self.d();
            self.data.copy_within(src * d..(src + 1) * d, dst * d);
        }
    }

    pub(crate) fn swap_records(&mut self, a: usize, b: usize) {
        if a != b {
            let d = self.d();
            for j in 0..d {
                self.data.swap(a * d + j, b * d + j);
            }
        }
    }

    /// Fisher–Yates shuffle of the record order.
    pub fn shuffle<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let n = self.n();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            self.swap_records(i, j);
        }
    }

    /// Checks that both datasets use the same attribute names and labels.
    pub fn ensure_same_domains(&self, other: &Dataset) -> Result<()> {
        if self.domains != other.domains {
            return Err(Error::DomainMismatch(
                "datasets declare different attributes or labels".into(),
            ));
        }
        Ok(())
    }
}

/// Reads a headered CSV and encodes it against `domains`. Extra CSV columns
/// are ignored; rows are reported 1-based counting the header as row 1.
pub fn read_csv<R: Read>(reader: R, domains: Vec<AttributeDomain>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::Empty("CSV has no header row".into()));
    }
    let positions = domains
        .iter()
        .map(|dom| {
            headers
                .iter()
                .position(|h| h.trim() == dom.name())
                .ok_or_else(|| Error::MissingColumn {
                    column: dom.name().to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut data = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() < headers.len() {
            return Err(Error::RowLength {
                row,
                expected: headers.len(),
                found: record.len(),
            });
        }
        for (dom, &pos) in domains.iter().zip(&positions) {
            let raw = record[pos].trim();
            let idx = dom.index_of(raw).ok_or_else(|| Error::UnknownValue {
                row,
                column: dom.name().to_string(),
                value: raw.to_string(),
            })?;
            data.push(idx);
        }
    }
    Ok(Dataset { domains, data })
}

pub fn load_csv(path: impl AsRef<Path>, domain_spec: impl AsRef<Path>) -> Result<Dataset> {
    let domains = load_domain_spec(domain_spec)?;
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, domains)
}

/// Writes the dataset with its original labels.
pub fn write_csv<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(dataset.domains.iter().map(AttributeDomain::name))?;
    for rec in dataset.records().take(dataset.n()) {
        wtr.write_record(
            rec.iter()
                .zip(&dataset.domains)
                .map(|(&v, dom)| dom.label(v)),
        )?;
    }
    wtr.flush().map_err(|source| Error::Io {
        path: "<csv writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(std::io::BufWriter::new(file), dataset)
}

/// How one attribute's values are rewritten by the low-count filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeMerge {
    /// Noisy one-way counts over the original values, kept for recovery.
    pub noisy_counts: Vec<f64>,
    /// Original values whose noisy count fell below the threshold.
    pub low: Vec<u32>,
    /// Post-merge index of the merged value, when one exists.
    pub merged_index: Option<u32>,
    /// Original index → post-merge index. Zeroed values point at the modal
    /// retained value.
    pub mapping: Vec<u32>,
    /// Post-merge index → original index, `None` for the merged value.
    pub inverse: Vec<Option<u32>>,
}

impl AttributeMerge {
    fn identity(noisy_counts: Vec<f64>) -> Self {
        let k = noisy_counts.len() as u32;
        Self {
            noisy_counts,
            low: Vec::new(),
            merged_index: None,
            mapping: (0..k).collect(),
            inverse: (0..k).map(Some).collect(),
        }
    }

    pub fn original_size(&self) -> usize {
        self.mapping.len()
    }

    pub fn merged_size(&self) -> usize {
        self.inverse.len()
    }

    pub fn is_identity(&self) -> bool {
        self.low.is_empty()
    }

    /// Low values folded into the merged value (empty when they were zeroed).
    pub fn represented(&self) -> &[u32] {
        if self.merged_index.is_some() {
            &self.low
        } else {
            &[]
        }
    }

    /// Low values that were assigned count zero.
    pub fn zeroed(&self) -> &[u32] {
        if self.merged_index.is_some() {
            &[]
        } else {
            &self.low
        }
    }

    /// Noisy one-way counts re-expressed over the post-merge domain.
    pub fn merged_counts(&self) -> Vec<f64> {
        self.inverse
            .iter()
            .map(|orig| match orig {
                Some(o) => self.noisy_counts[*o as usize],
                None => self.low.iter().map(|&v| self.noisy_counts[v as usize]).sum(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueMergePlan {
    pub threshold: f64,
    pub attributes: Vec<AttributeMerge>,
}

impl ValueMergePlan {
    pub fn is_identity(&self) -> bool {
        self.attributes.iter().all(AttributeMerge::is_identity)
    }

    pub fn merged_sizes(&self) -> Vec<usize> {
        self.attributes.iter().map(AttributeMerge::merged_size).collect()
    }

    /// Domains after merging; the merged value gets [`MERGED_LABEL`].
    pub fn merged_domains(&self, original: &[AttributeDomain]) -> Result<Vec<AttributeDomain>> {
        if original.len() != self.attributes.len() {
            return Err(Error::DomainMismatch(format!(
                "plan covers {} attributes, dataset has {}",
                self.attributes.len(),
                original.len()
            )));
        }
        original
            .iter()
            .zip(&self.attributes)
            .map(|(dom, m)| {
                if m.original_size() != dom.size() {
                    return Err(Error::DomainMismatch(format!(
                        "plan for `{}` built for {} values, domain has {}",
                        dom.name(),
                        m.original_size(),
                        dom.size()
                    )));
                }
                let values = m
                    .inverse
                    .iter()
                    .map(|o| match o {
                        Some(o) => dom.label(*o).to_string(),
                        None => MERGED_LABEL.to_string(),
                    })
                    .collect();
                AttributeDomain::new(dom.name(), values)
            })
            .collect()
    }
}

/// Builds the low-count merge plan from noisy one-way tables (one per
/// attribute, in attribute order) with threshold `θ = 3σ`.
///
/// Values with noisy count strictly below `θ` are low. If the low counts sum
/// to more than `θ` they become one merged value, otherwise they are zeroed.
/// An attribute with no retained value always gets a merged value.
pub fn filter_low_counts(noisy_one_way: &[MarginalTable], sigma: f64) -> Result<ValueMergePlan> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    let threshold = 3.0 * sigma;
    let attributes = noisy_one_way
        .iter()
        .enumerate()
        .map(|(attr, table)| {
            if table.spec().attributes() != [attr] {
                return Err(Error::SpecMismatch(format!(
                    "table {attr} is not the one-way marginal of attribute {attr}"
                )));
            }
            Ok(plan_attribute(table.counts().to_vec(), threshold))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueMergePlan {
        threshold,
        attributes,
    })
}

fn plan_attribute(noisy_counts: Vec<f64>, threshold: f64) -> AttributeMerge {
    let low: Vec<u32> = (0..noisy_counts.len() as u32)
        .filter(|&v| noisy_counts[v as usize] < threshold)
        .collect();
    if low.is_empty() {
        return AttributeMerge::identity(noisy_counts);
    }
    let retained: Vec<u32> = (0..noisy_counts.len() as u32)
        .filter(|&v| noisy_counts[v as usize] >= threshold)
        .collect();
    let low_sum: f64 = low.iter().map(|&v| noisy_counts[v as usize]).sum();
    let merged = low_sum > threshold || retained.is_empty();

    let mut mapping = vec![0u32; noisy_counts.len()];
    let mut inverse: Vec<Option<u32>> = Vec::with_capacity(retained.len() + 1);
    for (new, &orig) in retained.iter().enumerate() {
        mapping[orig as usize] = new as u32;
        inverse.push(Some(orig));
    }
    let merged_index = if merged {
        let idx = retained.len() as u32;
        inverse.push(None);
        for &v in &low {
            mapping[v as usize] = idx;
        }
        Some(idx)
    } else {
        // Modal retained value; first one wins ties.
        let modal = retained
            .iter()
            .copied()
            .fold(None::<u32>, |best, v| match best {
                Some(b) if noisy_counts[b as usize] >= noisy_counts[v as usize] => Some(b),
                _ => Some(v),
            })
            .expect("retained is non-empty when not merged");
        let modal_new = mapping[modal as usize];
        for &v in &low {
            mapping[v as usize] = modal_new;
        }
        None
    };
    AttributeMerge {
        noisy_counts,
        low,
        merged_index,
        mapping,
        inverse,
    }
}

/// Rewrites every record into the post-merge domains of `plan`.
pub fn apply_merge(dataset: &Dataset, plan: &ValueMergePlan) -> Result<Dataset> {
    let domains = plan.merged_domains(dataset.domains())?;
    let mut data = dataset.data.clone();
    let d = dataset.d();
    for (j, m) in plan.attributes.iter().enumerate() {
        if m.is_identity() {
            continue;
        }
        for i in 0..dataset.n() {
            let cell = &mut data[i * d + j];
            *cell = m.mapping[*cell as usize];
        }
    }
    Ok(Dataset { domains, data })
}

/// Maps a post-merge dataset back to the original domains. Records holding
/// a merged value draw one of the represented originals in proportion to
/// the (clipped nonnegative) noisy one-way counts, or uniformly when every
/// represented count is nonpositive.
pub fn unmerge<R: Rng + ?Sized>(
    dataset: &Dataset,
    plan: &ValueMergePlan,
    original: &[AttributeDomain],
    rng: &mut R,
) -> Result<Dataset> {
    let expected = plan.merged_domains(original)?;
    if dataset.domain_sizes() != expected.iter().map(AttributeDomain::size).collect::<Vec<_>>() {
        return Err(Error::DomainMismatch(
            "dataset is not expressed over the plan's merged domains".into(),
        ));
    }
    let samplers: Vec<Option<WeightedIndex<f64>>> = plan
        .attributes
        .iter()
        .map(|m| {
            m.merged_index.map(|_| {
                let weights: Vec<f64> = m
                    .low
                    .iter()
                    .map(|&v| m.noisy_counts[v as usize].max(0.0))
                    .collect();
                WeightedIndex::new(&weights)
                    .unwrap_or_else(|_| WeightedIndex::new(vec![1.0; weights.len()]).unwrap())
            })
        })
        .collect();

    let d = dataset.d();
    let mut data = dataset.data.clone();
    for i in 0..dataset.n() {
        for (j, m) in plan.attributes.iter().enumerate() {
            if m.is_identity() {
                continue;
            }
            let cell = &mut data[i * d + j];
            *cell = match m.inverse[*cell as usize] {
                Some(orig) => orig,
                None => {
                    let pick = samplers[j].as_ref().expect("merged value has a sampler");
                    m.low[pick.sample(rng)]
                }
            };
        }
    }
    Ok(Dataset {
        domains: original.to_vec(),
        data,
    })
}
