//! End-to-end private synthesis with exact budget bookkeeping.
//!
//! Stages, in order: noisy one-way tables, low-count merging, noisy pair
//! scores and greedy selection, combining into larger marginals, publishing
//! them, consistency post-processing, synthesis, and undoing the merge.
//! Only the first, third and fifth stages read the private data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::consistency::{make_consistent, ConsistencyParams};
use crate::data_model::{apply_merge, filter_low_counts, unmerge, Dataset, ValueMergePlan};
use crate::error::{Error, Result};
use crate::marginal::{MarginalSpec, MarginalTable};
use crate::privacy::{add_noise, child_rng, close_shares, gauss_sigma, BudgetSplit, PrivacyBudget};
use crate::selection::{publish_indif, select_and_combine, SelectionParams, SelectionResult, INDIF_SENSITIVITY};
use crate::synthesis::{plan_layout, separate_and_join, SynthConfig, SynthLayout};

// Child streams of the run seed.
const STREAM_ONE_WAY: u64 = 0;
const STREAM_SCORES: u64 = 1;
const STREAM_SYNTH: u64 = 2;
const STREAM_UNMERGE: u64 = 3;
const STREAM_PUBLISH: u64 = 1000;

/// Everything a run can be configured with besides the data and budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub synthesis: SynthConfig,
    pub seed: Option<u64>,
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub split: BudgetSplit,
    pub selection: SelectionParams,
    pub consistency: ConsistencyParams,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Default `δ = 1/n²` for an `n`-record dataset.
pub fn default_delta(n: usize) -> f64 {
    1.0 / (n as f64 * n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    OneWay,
    Scores,
    Publish,
}

/// One privacy expenditure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetEntry {
    pub stage: Stage,
    /// Attributes of the released table; empty for the pair scores.
    pub attributes: Vec<usize>,
    pub rho: f64,
    pub sensitivity: f64,
    pub sigma: f64,
}

/// Left-to-right sum, the order the log is audited in.
pub fn audit_total(audit: &[BudgetEntry]) -> f64 {
    audit.iter().fold(0.0, |acc, e| acc + e.rho)
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} failed: {source}")]
pub struct PipelineFailure {
    pub stage: &'static str,
    /// Expenditures made before the failure.
    pub audit: Vec<BudgetEntry>,
    #[source]
    pub source: Error,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub seed: u64,
    pub budget: PrivacyBudget,
    pub audit: Vec<BudgetEntry>,
    pub merge_plan: ValueMergePlan,
    pub selection: SelectionResult,
    /// Published marginals as released, before post-processing.
    pub noisy_tables: Vec<MarginalTable>,
    pub consistent_tables: Vec<MarginalTable>,
    pub consistent_one_way: Vec<MarginalTable>,
    pub consistency_rounds: usize,
    pub layout: SynthLayout,
    pub n_s: usize,
    pub synthetic: Dataset,
}

impl PipelineRun {
    /// JSON summary of the privacy-relevant choices of the run.
    pub fn selection_report(&self) -> serde_json::Value {
        let tables: Vec<serde_json::Value> = self
            .consistent_tables
            .iter()
            .map(|t| serde_json::json!(t.spec().attributes()))
            .collect();
        serde_json::json!({
            "seed": self.seed,
            "epsilon": self.budget.epsilon,
            "delta": self.budget.delta,
            "rho": self.budget.rho_total,
            "audit": self.audit,
            "audit_total": audit_total(&self.audit),
            "merge": self.merge_plan,
            "scores": self.selection.scores,
            "chosen": self.selection.chosen.iter().map(|s| s.attributes().to_vec()).collect::<Vec<_>>(),
            "chosen_rho": self.selection.chosen_rho,
            "trajectory": self.selection.trajectory,
            "published": tables,
            "layout": self.layout,
            "n_s": self.n_s,
        })
    }
}

/// Closes `shares` so that folding them onto `prefix` lands on `total`.
fn close_after(prefix: f64, shares: &mut [f64], total: f64) {
    let mut all = Vec::with_capacity(shares.len() + 1);
    all.push(prefix);
    all.extend_from_slice(shares);
    close_shares(&mut all, total);
    debug_assert_eq!(all[0], prefix);
    shares.copy_from_slice(&all[1..]);
}

/// Runs every stage with `(epsilon, delta)`; `delta` defaults to `1/n²`.
pub fn run(dataset: &Dataset, epsilon: f64, delta: Option<f64>, config: &PipelineConfig, seed: u64) -> std::result::Result<PipelineRun, PipelineFailure> {
    let mut audit = Vec::new();
    let fail = |stage: &'static str, audit: &Vec<BudgetEntry>| {
        let audit = audit.clone();
        move |source: Error| PipelineFailure { stage, audit, source }
    };

    let d = dataset.d();
    let n = dataset.n();
    let setup = || -> Result<PrivacyBudget> {
        if d < 2 {
            return Err(Error::param("need at least two attributes"));
        }
        if n == 0 {
            return Err(Error::Empty("dataset has no records".into()));
        }
        config.synthesis.validate()?;
        PrivacyBudget::new(epsilon, delta.unwrap_or_else(|| default_delta(n)), config.split)
    };
    let budget = setup().map_err(fail("setup", &audit))?;
    let [rho_one_way, rho_scores, rho_publish] = budget.phase_shares();
    let sizes = dataset.domain_sizes();

    // One-way tables, ρ₁/d each.
    let mut one_way_rho = vec![rho_one_way / d as f64; d];
    close_shares(&mut one_way_rho, rho_one_way);
    let sigma_one_way = gauss_sigma(1.0, one_way_rho[0]).map_err(fail("one-way", &audit))?;
    let mut rng = child_rng(seed, STREAM_ONE_WAY);
    let mut noisy_one_way = Vec::with_capacity(d);
    for (j, &rho) in one_way_rho.iter().enumerate() {
        let sigma = gauss_sigma(1.0, rho).map_err(fail("one-way", &audit))?;
        audit.push(BudgetEntry {
            stage: Stage::OneWay,
            attributes: vec![j],
            rho,
            sensitivity: 1.0,
            sigma,
        });
        let spec = MarginalSpec::new(vec![j], &sizes).map_err(fail("one-way", &audit))?;
        noisy_one_way.push(add_noise(&MarginalTable::compute(dataset, &spec), sigma, &mut rng));
    }

    let merge_plan = filter_low_counts(&noisy_one_way, sigma_one_way).map_err(fail("merge", &audit))?;
    let merged = apply_merge(dataset, &merge_plan).map_err(fail("merge", &audit))?;
    let merged_sizes = merged.domain_sizes();

    // Pair scores, ρ₂ in total.
    let pairs = d * (d - 1) / 2;
    let score_sigma = gauss_sigma(INDIF_SENSITIVITY, rho_scores / pairs as f64).map_err(fail("scores", &audit))?;
    audit.push(BudgetEntry {
        stage: Stage::Scores,
        attributes: Vec::new(),
        rho: rho_scores,
        sensitivity: INDIF_SENSITIVITY,
        sigma: score_sigma,
    });
    let scores = publish_indif(&merged, rho_scores, &mut child_rng(seed, STREAM_SCORES)).map_err(fail("scores", &audit))?;
    let mut selection =
        select_and_combine(scores, &merged_sizes, rho_publish, config.selection).map_err(fail("selection", &audit))?;

    // Published marginals, ρ₃ split by selection. With nothing selected the
    // publishing budget re-releases the one-way tables instead.
    let publish_specs: Vec<MarginalSpec> = if selection.combined.is_empty() {
        (0..d)
            .map(|j| MarginalSpec::new(vec![j], &merged_sizes))
            .collect::<Result<_>>()
            .map_err(fail("publish", &audit))?
    } else {
        selection.combined.clone()
    };
    let mut publish_rho = if selection.combined.is_empty() {
        vec![rho_publish / d as f64; d]
    } else {
        selection.combined_rho.clone()
    };
    close_after(audit_total(&audit), &mut publish_rho, budget.rho_total);
    selection.combined_rho = publish_rho.clone();
    let mut noisy_tables = Vec::with_capacity(publish_specs.len());
    for (i, (spec, &rho)) in publish_specs.iter().zip(&publish_rho).enumerate() {
        let sigma = gauss_sigma(1.0, rho).map_err(fail("publish", &audit))?;
        audit.push(BudgetEntry {
            stage: Stage::Publish,
            attributes: spec.attributes().to_vec(),
            rho,
            sensitivity: 1.0,
            sigma,
        });
        let mut rng = child_rng(seed, STREAM_PUBLISH + i as u64);
        noisy_tables.push(add_noise(&MarginalTable::compute(&merged, spec), sigma, &mut rng));
    }
    debug_assert_eq!(audit_total(&audit), budget.rho_total);

    // Post-processing only from here on.
    let post = || -> Result<_> {
        let merged_one_way: Vec<MarginalTable> = merge_plan
            .attributes
            .iter()
            .enumerate()
            .map(|(j, m)| MarginalTable::from_counts(MarginalSpec::new(vec![j], &merged_sizes)?, m.merged_counts()))
            .collect::<Result<_>>()?;
        let mut tables = noisy_tables.clone();
        tables.extend(merged_one_way);
        let mut rhos = publish_rho.clone();
        rhos.extend_from_slice(&one_way_rho);
        let (mut consistent, report) = make_consistent(&tables, &rhos, &config.consistency)?;
        let consistent_one_way = consistent.split_off(noisy_tables.len());
        let n_s = config
            .synthesis
            .n_s
            .unwrap_or_else(|| report.target_total.round() as usize)
            .max(1);
        let synth_tables: Vec<MarginalTable> = consistent.iter().filter(|t| t.spec().len() >= 2).cloned().collect();
        let layout = plan_layout(&synth_tables, d);
        let synth_seed: u64 = child_rng(seed, STREAM_SYNTH).random();
        let synthetic_merged = separate_and_join(
            &synth_tables,
            &consistent_one_way,
            merged.domains(),
            n_s,
            &config.synthesis,
            synth_seed,
        )?;
        let synthetic = unmerge(
            &synthetic_merged,
            &merge_plan,
            dataset.domains(),
            &mut child_rng(seed, STREAM_UNMERGE),
        )?;
        Ok((consistent, consistent_one_way, report.rounds, layout, n_s, synthetic))
    };
    let (consistent_tables, consistent_one_way, consistency_rounds, layout, n_s, synthetic) =
        post().map_err(fail("synthesis", &audit))?;

    Ok(PipelineRun {
        seed,
        budget,
        audit,
        merge_plan,
        selection,
        noisy_tables,
        consistent_tables,
        consistent_one_way,
        consistency_rounds,
        layout,
        n_s,
        synthetic,
    })
}

/// Baseline that spends the whole budget on the one-way tables and samples
/// every column independently.
pub fn independent_baseline(dataset: &Dataset, epsilon: f64, delta: Option<f64>, seed: u64) -> Result<Dataset> {
    let d = dataset.d();
    if d == 0 || dataset.n() == 0 {
        return Err(Error::Empty("dataset has no records or attributes".into()));
    }
    let rho = crate::privacy::dp_to_zcdp(epsilon, delta.unwrap_or_else(|| default_delta(dataset.n())))?;
    let sigma = gauss_sigma(1.0, rho / d as f64)?;
    let sizes = dataset.domain_sizes();
    let mut rng = child_rng(seed, STREAM_ONE_WAY);
    let mut tables = Vec::with_capacity(d);
    for j in 0..d {
        let spec = MarginalSpec::new(vec![j], &sizes)?;
        tables.push(add_noise(&MarginalTable::compute(dataset, &spec), sigma, &mut rng));
    }
    let total = tables.iter().map(|t| t.total()).sum::<f64>() / d as f64;
    let n_s = (total.round() as usize).max(1);
    crate::synthesis::init_random(&tables, dataset.domains(), n_s, &mut child_rng(seed, STREAM_SYNTH))
}
