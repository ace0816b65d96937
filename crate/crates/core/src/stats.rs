//! Paired significance testing: McNemar's test with Holm–Bonferroni
//! correction.

use serde::{Deserialize, Serialize};

/// Largest discordant count handled by the exact mid-p variant.
pub const EXACT_MAX_DISCORDANT: u64 = 25;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("p-value {0} is outside [0, 1]")]
    PValueRange(f64),
    #[error("alpha {0} is outside (0, 1)")]
    Alpha(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum McNemarVariant {
    ExactMidP,
    Chi2Corrected,
}

impl McNemarVariant {
    pub fn label(self) -> &'static str {
        match self {
            McNemarVariant::ExactMidP => "exact-mid-p",
            McNemarVariant::Chi2Corrected => "chi2-corrected",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// Pairs solved only by system A.
    pub b: u64,
    /// Pairs solved only by system B.
    pub c: u64,
    pub variant: McNemarVariant,
    /// Continuity-corrected χ² (`None` for the exact branch).
    pub statistic: Option<f64>,
    pub p_value: f64,
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
    }
    acc
}

/// Two-sided exact mid-p for `k = min(b, c)` successes out of `n = b + c`
/// under Binomial(n, 1/2): doubled lower tail with half weight on the
/// observed count, capped at 1.
pub fn exact_mid_p(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let k = b.min(c);
    let lower: u128 = (0..k).map(|i| binomial(n, i)).sum();
    // 2 * (lower + C(n,k)/2) / 2^n, kept in integers until the division.
    let numer = 2 * lower + binomial(n, k);
    (numer as f64 / (1u128 << n) as f64).min(1.0)
}

/// Upper tail of χ²(1) at `x`: `erfc(sqrt(x / 2))`.
pub fn chi2_1_upper_tail(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    statrs::function::erf::erfc((x / 2.0).sqrt())
}

pub fn mcnemar(b: u64, c: u64) -> McNemarResult {
    let n = b + c;
    if n <= EXACT_MAX_DISCORDANT {
        return McNemarResult {
            b,
            c,
            variant: McNemarVariant::ExactMidP,
            statistic: None,
            p_value: exact_mid_p(b, c),
        };
    }
    let diff = (b.abs_diff(c) as f64 - 1.0).max(0.0);
    let stat = diff * diff / n as f64;
    McNemarResult {
        b,
        c,
        variant: McNemarVariant::Chi2Corrected,
        statistic: Some(stat),
        p_value: chi2_1_upper_tail(stat).clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolmResult {
    pub raw: Vec<f64>,
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
    pub alpha: f64,
}

/// Holm–Bonferroni step-down adjustment; results are in input order.
pub fn holm_bonferroni(ps: &[f64], alpha: f64) -> Result<HolmResult, StatsError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Alpha(alpha));
    }
    if let Some(&bad) = ps.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(StatsError::PValueRange(bad));
    }
    let m = ps.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| ps[i].total_cmp(&ps[j]));

    let mut adjusted = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &i) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * ps[i]).min(1.0);
        running = running.max(scaled);
        adjusted[i] = running;
    }
    let rejected = adjusted.iter().map(|&p| p <= alpha).collect();
    Ok(HolmResult {
        raw: ps.to_vec(),
        adjusted,
        rejected,
        alpha,
    })
}
