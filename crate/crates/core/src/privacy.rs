//! zCDP accounting and the Gaussian mechanism.
//!
//! All logarithms are natural. Gaussian noise is drawn with the ziggurat
//! sampler behind [`rand_distr::StandardNormal`] from a ChaCha20 stream, so
//! a seed fixes every noisy value bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marginal::MarginalTable;

/// Generator used for every random draw in the crate.
pub type SynthRng = ChaCha20Rng;

pub fn seeded_rng(seed: u64) -> SynthRng {
    SynthRng::seed_from_u64(seed)
}

/// Independent child generator: same key as `seed_from_u64(base)`, stream
/// number `stream`.
pub fn child_rng(base: u64, stream: u64) -> SynthRng {
    let mut rng = SynthRng::seed_from_u64(base);
    rng.set_stream(stream);
    rng
}

/// ρ such that ρ-zCDP implies (ε, δ)-DP: `√ρ = √(ln(1/δ) + ε) − √(ln(1/δ))`.
pub fn dp_to_zcdp(epsilon: f64, delta: f64) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
    }
    let log_inv = -delta.ln();
    // Rationalized form avoids cancellation when ln(1/δ) ≫ ε.
    let root = epsilon / ((log_inv + epsilon).sqrt() + log_inv.sqrt());
    Ok(root * root)
}

/// ε reached by ρ-zCDP at a given δ: `ρ + 2√(ρ ln(1/δ))`.
pub fn zcdp_to_dp(rho: f64, delta: f64) -> f64 {
    rho + 2.0 * (rho * -delta.ln()).sqrt()
}

/// Noise scale for a query with ℓ2 sensitivity Δ under ρ-zCDP: `Δ/√(2ρ)`.
pub fn gauss_sigma(sensitivity: f64, rho: f64) -> Result<f64> {
    if !(sensitivity >= 0.0) {
        return Err(Error::param(format!("sensitivity must be nonnegative, got {sensitivity}")));
    }
    if !(rho > 0.0) {
        return Err(Error::param(format!("rho must be positive, got {rho}")));
    }
    Ok(sensitivity / (2.0 * rho).sqrt())
}

/// Per-task σ when an (ε, δ) budget is split evenly over `m` Gaussian tasks
/// of sensitivity Δ, in closed form.
pub fn sigma_for_m_tasks(epsilon: f64, delta: f64, m: usize, sensitivity: f64) -> Result<f64> {
    if m == 0 {
        return Err(Error::param("number of tasks must be at least 1"));
    }
    // Validates ε and δ.
    dp_to_zcdp(epsilon, delta)?;
    if !(sensitivity >= 0.0) {
        return Err(Error::param("sensitivity must be nonnegative"));
    }
    let m = m as f64;
    let s2 = sensitivity * sensitivity;
    let log_inv = -delta.ln();
    let a = (2.0 * m * s2 * log_inv).sqrt();
    let b = (2.0 * m * s2 * log_inv + 2.0 * m * epsilon * s2).sqrt();
    Ok((a + b) / (2.0 * epsilon))
}

/// Adds i.i.d. `N(0, σ²)` to every cell.
pub fn add_noise<R: Rng + ?Sized>(table: &MarginalTable, sigma: f64, rng: &mut R) -> MarginalTable {
    let mut out = table.clone();
    if sigma > 0.0 {
        for c in out.counts_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *c += sigma * z;
        }
    }
    out
}

/// Sets the last share to what the others leave of `total`, so that the
/// left-to-right sum of `shares` equals `total` bit for bit. When no last
/// share can close the sum (a rounding tie), the one before it is nudged
/// down by an ulp and the search repeats.
pub(crate) fn close_shares(shares: &mut [f64], total: f64) {
    let k = shares.len();
    if k == 0 {
        return;
    }
    for _ in 0..64 {
        let spent: f64 = shares[..k - 1].iter().sum();
        let mut r = total - spent;
        for _ in 0..8 {
            let sum = spent + r;
            if sum == total {
                shares[k - 1] = r;
                return;
            }
            r = if sum < total { r.next_up() } else { r.next_down() };
        }
        if k < 2 {
            break;
        }
        shares[k - 2] = shares[k - 2].next_down();
    }
    shares[k - 1] = total - shares[..k - 1].iter().sum::<f64>();
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub one_way: f64,
    pub select: f64,
    pub publish: f64,
}

impl Default for BudgetSplit {
    fn default() -> Self {
        Self {
            one_way: 0.1,
            select: 0.1,
            publish: 0.8,
        }
    }
}

impl BudgetSplit {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.one_way, self.select, self.publish];
        if parts.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
            return Err(Error::param("budget fractions must be positive"));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("budget fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Total zCDP budget and its three-way split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
    pub rho_total: f64,
    pub split: BudgetSplit,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, split: BudgetSplit) -> Result<Self> {
        split.validate()?;
        Ok(Self {
            epsilon,
            delta,
            rho_total: dp_to_zcdp(epsilon, delta)?,
            split,
        })
    }

    /// Per-phase budgets `[one_way, select, publish]`. The publish share is
    /// whatever the first two leave, so the three add up to `rho_total`
    /// exactly.
    pub fn phase_shares(&self) -> [f64; 3] {
        let mut shares = [
            self.split.one_way * self.rho_total,
            self.split.select * self.rho_total,
            0.0,
        ];
        close_shares(&mut shares, self.rho_total);
        shares
    }

    pub fn one_way_rho(&self) -> f64 {
        self.phase_shares()[0]
    }

    pub fn select_rho(&self) -> f64 {
        self.phase_shares()[1]
    }

    pub fn publish_rho(&self) -> f64 {
        self.phase_shares()[2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sensitivity: f64,
    pub rho: f64,
    pub sigma: f64,
}

impl NoiseCalibration {
    pub fn new(sensitivity: f64, rho: f64) -> Result<Self> {
        Ok(Self {
            sensitivity,
            rho,
            sigma: gauss_sigma(sensitivity, rho)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marginal::MarginalSpec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn conversion_worked_example() {
        let rho = dp_to_zcdp(1.0, (-1.0f64).exp()).unwrap();
        assert_relative_eq!(rho, (2f64.sqrt() - 1.0).powi(2), max_relative = 1e-12);
        assert_relative_eq!(rho, 0.171573, epsilon = 1e-6);
        assert_relative_eq!(zcdp_to_dp(rho, (-1.0f64).exp()), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn conversion_degenerates_towards_epsilon() {
        let rho = dp_to_zcdp(1.0, 0.999).unwrap();
        assert!(rho < 1.0 && rho > 0.9, "rho = {rho}");
        assert_relative_eq!(zcdp_to_dp(rho, 0.999), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn conversion_is_monotone_and_validated() {
        let d = 1e-6;
        assert!(dp_to_zcdp(2.0, d).unwrap() > dp_to_zcdp(1.0, d).unwrap());
        assert!(dp_to_zcdp(0.0, d).is_err());
        assert!(dp_to_zcdp(1.0, 0.0).is_err());
        assert!(dp_to_zcdp(1.0, 1.0).is_err());
    }

    #[test]
    fn sigma_cases() {
        assert_eq!(gauss_sigma(1.0, 0.5).unwrap(), 1.0);
        assert_relative_eq!(gauss_sigma(4.0, 1.0).unwrap(), 4.0 / 2f64.sqrt(), max_relative = 1e-15);
        assert_eq!(gauss_sigma(0.0, 3.0).unwrap(), 0.0);
        assert!(gauss_sigma(1.0, 0.0).is_err());
        assert!(gauss_sigma(1.0, -1.0).is_err());
    }

    #[test]
    fn m_task_sigma_worked_example_and_scaling() {
        let d = (-1.0f64).exp();
        let s = sigma_for_m_tasks(1.0, d, 1, 1.0).unwrap();
        assert_relative_eq!(s, (2f64.sqrt() + 2.0) / 2.0, max_relative = 1e-12);
        let two_step = gauss_sigma(1.0, dp_to_zcdp(1.0, d).unwrap()).unwrap();
        assert_relative_eq!(s, two_step, max_relative = 1e-12);
        assert_relative_eq!(sigma_for_m_tasks(1.0, d, 4, 1.0).unwrap(), 2.0 * s, max_relative = 1e-12);
        assert_relative_eq!(sigma_for_m_tasks(1.0, d, 1, 2.0).unwrap(), 2.0 * s, max_relative = 1e-12);
        assert!(sigma_for_m_tasks(1.0, d, 0, 1.0).is_err());
    }

    #[test]
    fn zero_sigma_is_identity_and_seed_is_deterministic() {
        let t = MarginalTable::from_counts(MarginalSpec::new(vec![0], &[3]).unwrap(), vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(add_noise(&t, 0.0, &mut seeded_rng(1)), t);
        let a = add_noise(&t, 2.0, &mut seeded_rng(9));
        let b = add_noise(&t, 2.0, &mut seeded_rng(9));
        let bits = |t: &MarginalTable| t.counts().iter().map(|c| c.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(a, t);
    }

    #[test]
    fn noise_mean_is_centered() {
        let sigma = 3.0;
        let spec = MarginalSpec::new(vec![0], &[4]).unwrap();
        let zero = MarginalTable::zeros(spec);
        let mut rng = seeded_rng(21);
        let mut sums = [0.0; 4];
        let draws = 10_000;
        for _ in 0..draws {
            for (s, c) in sums.iter_mut().zip(add_noise(&zero, sigma, &mut rng).counts()) {
                *s += c;
            }
        }
        for s in sums {
            assert!((s / draws as f64).abs() < 4.0 * sigma / 100.0);
        }
    }

    #[test]
    fn child_streams_differ() {
        let a: u64 = rand::Rng::random(&mut child_rng(7, 0));
        let b: u64 = rand::Rng::random(&mut child_rng(7, 1));
        let a2: u64 = rand::Rng::random(&mut child_rng(7, 0));
        assert_ne!(a, b);
        assert_eq!(a, a2);
    }

    #[test]
    fn budget_shares_sum_exactly() {
        for eps in [0.1, 0.2, 0.7, 1.0, 2.0, 3.3, 8.0] {
            for delta in [1e-10, 1e-6, 1e-3, 0.05] {
                let b = PrivacyBudget::new(eps, delta, BudgetSplit::default()).unwrap();
                assert_eq!(b.one_way_rho() + b.select_rho() + b.publish_rho(), b.rho_total);
            }
        }
        let bad = BudgetSplit { one_way: 0.5, select: 0.5, publish: 0.5 };
        assert!(PrivacyBudget::new(1.0, 1e-5, bad).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_identity(eps in 1e-3f64..20.0, log_delta in -30.0f64..-0.01) {
            let delta = log_delta.exp();
            let rho = dp_to_zcdp(eps, delta).unwrap();
            prop_assert!((zcdp_to_dp(rho, delta) - eps).abs() <= 1e-9 * eps);
        }

        #[test]
        fn closed_form_matches_two_step(eps in 0.01f64..10.0, log_delta in -25.0f64..-0.1,
                                        m in 1usize..500, sens in 0.1f64..10.0) {
            let delta = log_delta.exp();
            let closed = sigma_for_m_tasks(eps, delta, m, sens).unwrap();
            let two = gauss_sigma(sens, dp_to_zcdp(eps, delta).unwrap() / m as f64).unwrap();
            prop_assert!((closed - two).abs() <= 1e-9 * two);
        }
    }
}
