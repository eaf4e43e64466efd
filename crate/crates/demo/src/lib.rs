//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every export returns a JSON string. The `*_json` functions hold the logic
//! so that they can be tested natively.

use margsynth::fixtures::correlated;
use margsynth::marginal::{MarginalSpec, MarginalTable};
use margsynth::privacy::{child_rng, gauss_sigma, BudgetSplit, PrivacyBudget};
use margsynth::selection::{attribute_pairs, noise_error, publish_indif, select_and_combine, SelectionParams, INDIF_SENSITIVITY};
use margsynth::synthesis::{synthesize_traced, Method, SynthConfig};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Domain sizes of the built-in demo dataset.
pub const DEMO_SIZES: [usize; 6] = [3, 4, 2, 5, 6, 3];
pub const DEMO_RECORDS: usize = 3000;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Budget split and noise scales for `d` attributes at `(ε, δ)`.
pub fn calibrate_json(epsilon: f64, delta: f64, d: usize, cells: usize) -> Result<String, String> {
    if d < 2 || cells == 0 {
        return Err("need d >= 2 and at least one cell".into());
    }
    let budget = PrivacyBudget::new(epsilon, delta, BudgetSplit::default()).map_err(err)?;
    let [one_way, select, publish] = budget.phase_shares();
    let pairs = d * (d - 1) / 2;
    Ok(json!({
        "rho": budget.rho_total,
        "one_way_rho": one_way,
        "select_rho": select,
        "publish_rho": publish,
        "one_way_sigma": gauss_sigma(1.0, one_way / d as f64).map_err(err)?,
        "threshold": 3.0 * gauss_sigma(1.0, one_way / d as f64).map_err(err)?,
        "indif_sigma": gauss_sigma(INDIF_SENSITIVITY, select / pairs as f64).map_err(err)?,
        "single_table_sigma": gauss_sigma(1.0, publish).map_err(err)?,
        "single_table_noise_error": noise_error(cells, publish).map_err(err)?,
    })
    .to_string())
}

/// Noisy pair scores and the marginals chosen on the demo dataset.
pub fn selection_json(epsilon: f64, seed: u64) -> Result<String, String> {
    let data = correlated(&DEMO_SIZES, DEMO_RECORDS, 0.8, 1);
    let n = data.n() as f64;
    let budget = PrivacyBudget::new(epsilon, 1.0 / (n * n), BudgetSplit::default()).map_err(err)?;
    let scores = publish_indif(&data, budget.select_rho(), &mut child_rng(seed, 0)).map_err(err)?;
    let exact = publish_indif(&data, f64::INFINITY, &mut child_rng(seed, 0)).map_err(err)?;
    let result = select_and_combine(scores, &data.domain_sizes(), budget.publish_rho(), SelectionParams::default())
        .map_err(err)?;
    let scores: Vec<_> = result
        .scores
        .iter()
        .zip(&exact)
        .map(|(s, e)| json!({"pair": [s.pair.0, s.pair.1], "noisy": s.noisy_indif, "exact": e.noisy_indif, "cells": s.cell_count}))
        .collect();
    let attrs = |specs: &[MarginalSpec]| specs.iter().map(|s| s.attributes().to_vec()).collect::<Vec<_>>();
    Ok(json!({
        "epsilon": epsilon,
        "rho": budget.rho_total,
        "scores": scores,
        "chosen": attrs(&result.chosen),
        "combined": attrs(&result.combined),
        "combined_rho": result.combined_rho,
        "trajectory": result.trajectory,
    })
    .to_string())
}

/// Error curves of GUM and MCF fitting exact pair marginals of a
/// four-attribute slice of the demo dataset.
pub fn convergence_json(iterations: usize, alpha0: f64, seed: u64) -> Result<String, String> {
    let sizes = &DEMO_SIZES[..4];
    let truth = correlated(sizes, 1000, 0.7, seed);
    let spec = |attrs: Vec<usize>| MarginalSpec::new(attrs, sizes).map_err(err);
    let mut tables = Vec::new();
    for (a, b) in attribute_pairs(sizes.len()) {
        tables.push(MarginalTable::compute(&truth, &spec(vec![a, b])?));
    }
    let mut one_way = Vec::new();
    for j in 0..sizes.len() {
        one_way.push(MarginalTable::compute(&truth, &spec(vec![j])?));
    }
    let config = SynthConfig {
        iterations,
        alpha0,
        ..Default::default()
    };
    let mut curves = Vec::new();
    for method in [Method::Gum, Method::Mcf] {
        let mut rng = child_rng(seed, 1);
        let (_, curve) =
            synthesize_traced(method, &tables, &one_way, truth.domains(), truth.n(), &config, &mut rng).map_err(err)?;
        curves.push(curve);
    }
    Ok(json!({"gum": curves[0], "mcf": curves[1]}).to_string())
}

#[wasm_bindgen]
pub fn calibrate(epsilon: f64, delta: f64, d: usize, cells: usize) -> Result<String, JsError> {
    calibrate_json(epsilon, delta, d, cells).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn selection(epsilon: f64, seed: u64) -> Result<String, JsError> {
    selection_json(epsilon, seed).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn convergence(iterations: usize, alpha0: f64, seed: u64) -> Result<String, JsError> {
    convergence_json(iterations, alpha0, seed).map_err(|e| JsError::new(&e))
}
