//! Decision-focused ORPO.
//!
//! Tokens inside the decision window (the first `K` response tokens) get
//! weight `alpha`, all others weight 1. The weighted average log-probability
//! `l = sum(w_t * logp_t) / sum(w_t)` replaces the plain token average in
//! both the NLL term and the odds-ratio term:
//!
//! ```text
//! odds(y)  = p / (1 - p),            p = exp(l)
//! L_OR     = -log sigmoid(log odds(y_w) - log odds(y_l))
//! L        = -l(y_w) + beta * L_OR
//! ```
//!
//! With `alpha = 1` this is standard ORPO ([`orpo_loss`]).

mod checks;
mod toy;

pub use checks::{rebalance_table, run_property_suite, CheckOutcome, RebalanceRow, SuiteReport};
pub use toy::{evaluate, toy_align_loop, AlignRun, StepStats, TokenPair, ToyScorer};

use serde::{Deserialize, Serialize};

/// Largest weighted log-probability accepted by the odds computation.
pub const LOGP_CEILING: f64 = -1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DorpoError {
    #[error("response must have at least one token")]
    EmptyResponse,
    #[error("response start {start} outside 1..={len}")]
    StartOutOfRange { start: usize, len: usize },
    #[error("log-probability {value} at token {index} must be finite and <= 0")]
    InvalidLogProb { index: usize, value: f64 },
    #[error("invalid decision config: {0}")]
    Config(String),
    #[error("sequence log-probability {0} is too close to 0; odds are undefined")]
    Domain(f64),
    #[error("invalid lengths: {0}")]
    Lengths(String),
    #[error("token {token} at position {position} outside scorer table ({positions} x {vocab})")]
    TokenOutOfRange {
        token: usize,
        position: usize,
        positions: usize,
        vocab: usize,
    },
    #[error("loss became non-finite at step {step}")]
    Diverged { step: usize },
}

/// Per-token log-probabilities of one response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    logps: Vec<f64>,
    /// 1-based index of the first response token.
    start: usize,
}

impl ScoredResponse {
    pub fn new(logps: Vec<f64>, start: usize) -> Result<Self, DorpoError> {
        if logps.is_empty() {
            return Err(DorpoError::EmptyResponse);
        }
        if start == 0 || start > logps.len() {
            return Err(DorpoError::StartOutOfRange { start, len: logps.len() });
        }
        if let Some((index, &value)) = logps.iter().enumerate().find(|(_, v)| !v.is_finite() || **v > 0.0) {
            return Err(DorpoError::InvalidLogProb { index, value });
        }
        Ok(Self { logps, start })
    }

    /// Response starting at the first token.
    pub fn from_logps(logps: Vec<f64>) -> Result<Self, DorpoError> {
        Self::new(logps, 1)
    }

    pub fn logps(&self) -> &[f64] {
        &self.logps
    }

    pub fn len(&self) -> usize {
        self.logps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logps.is_empty()
    }

    pub fn start(&self) -> usize {
        self.start
    }
}

/// What the odds are computed from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OddsBasis {
    /// `p = exp(weighted average log-prob)`; the length-normalized surrogate.
    #[default]
    WeightedMean,
    /// `p = exp(sum_t w_t * logp_t)`, the raw (weighted) sequence log-prob.
    WeightedSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    /// Decision window size `K`.
    pub window: usize,
    /// Decision weight `alpha`.
    pub weight: f64,
    /// Odds-ratio coefficient `beta`.
    pub beta: f64,
    #[serde(default)]
    pub odds: OddsBasis,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            window: 8,
            weight: 2.0,
            beta: 0.1,
            odds: OddsBasis::WeightedMean,
        }
    }
}

impl DecisionConfig {
    pub fn new(window: usize, weight: f64, beta: f64) -> Result<Self, DorpoError> {
        let cfg = Self {
            window,
            weight,
            beta,
            odds: OddsBasis::WeightedMean,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), DorpoError> {
        if self.window == 0 {
            return Err(DorpoError::Config("window K must be >= 1".into()));
        }
        if !(self.weight.is_finite() && self.weight >= 1.0) {
            return Err(DorpoError::Config(format!("weight alpha must be >= 1, got {}", self.weight)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(DorpoError::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// `w_t = alpha` for `start <= t < start + window` (1-based, truncated at
/// `len`), otherwise 1.
pub fn token_weights(len: usize, start: usize, window: usize, alpha: f64) -> Result<Vec<f64>, DorpoError> {
    if start == 0 || start > len {
        return Err(DorpoError::StartOutOfRange { start, len });
    }
    if window == 0 || !(alpha >= 1.0) {
        return Err(DorpoError::Config(format!("need K >= 1 and alpha >= 1, got K={window}, alpha={alpha}")));
    }
    Ok((1..=len)
        .map(|t| if t >= start && t < start + window { alpha } else { 1.0 })
        .collect())
}

fn weights_for(resp: &ScoredResponse, cfg: &DecisionConfig) -> Vec<f64> {
    token_weights(resp.len(), resp.start, cfg.window, cfg.weight).expect("validated response and config")
}

/// Weighted average log-probability of a response.
pub fn weighted_avg_logprob(resp: &ScoredResponse, cfg: &DecisionConfig) -> f64 {
    let w = weights_for(resp, cfg);
    let total: f64 = w.iter().sum();
    w.iter().zip(&resp.logps).map(|(w, l)| w * l).sum::<f64>() / total
}

/// Sequence log-probability used for the odds and its derivative with
/// respect to every token log-probability.
fn odds_logprob(resp: &ScoredResponse, cfg: &DecisionConfig) -> (f64, Vec<f64>) {
    let w = weights_for(resp, cfg);
    let scale = match cfg.odds {
        OddsBasis::WeightedMean => 1.0 / w.iter().sum::<f64>(),
        OddsBasis::WeightedSum => 1.0,
    };
    let value = w.iter().zip(&resp.logps).map(|(w, l)| w * l).sum::<f64>() * scale;
    (value, w.into_iter().map(|w| w * scale).collect())
}

/// `log(p / (1 - p))` for `p = exp(logp)`, as `logp - log(-expm1(logp))`.
pub fn log_odds(logp: f64) -> Result<f64, DorpoError> {
    if !logp.is_finite() || logp >= LOGP_CEILING {
        return Err(DorpoError::Domain(logp));
    }
    Ok(logp - (-logp.exp_m1()).ln())
}

/// d log_odds / d logp = 1 / (1 - exp(logp)).
fn log_odds_slope(logp: f64) -> f64 {
    -1.0 / logp.exp_m1()
}

/// `-log sigmoid(x)`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Odds-ratio term for a preference pair.
pub fn or_loss(chosen: &ScoredResponse, rejected: &ScoredResponse, cfg: &DecisionConfig) -> Result<f64, DorpoError> {
    cfg.validate()?;
    let gap = log_odds(odds_logprob(chosen, cfg).0)? - log_odds(odds_logprob(rejected, cfg).0)?;
    Ok(neg_log_sigmoid(gap))
}

/// Log-odds gap `log odds(chosen) - log odds(rejected)`.
pub fn log_odds_gap(chosen: &ScoredResponse, rejected: &ScoredResponse, cfg: &DecisionConfig) -> Result<f64, DorpoError> {
    Ok(log_odds(odds_logprob(chosen, cfg).0)? - log_odds(odds_logprob(rejected, cfg).0)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub or_term: f64,
    pub total: f64,
    /// d total / d logp_t for the chosen response.
    pub grads_chosen: Vec<f64>,
    /// d total / d logp_t for the rejected response.
    pub grads_rejected: Vec<f64>,
}

/// Full objective with analytic gradients.
pub fn dorpo_loss(chosen: &ScoredResponse, rejected: &ScoredResponse, cfg: &DecisionConfig) -> Result<LossBreakdown, DorpoError> {
    cfg.validate()?;
    let w_chosen = weights_for(chosen, cfg);
    let w_sum: f64 = w_chosen.iter().sum();
    let mean_chosen = w_chosen.iter().zip(&chosen.logps).map(|(w, l)| w * l).sum::<f64>() / w_sum;
    let nll = -mean_chosen;

    let (seq_w, dseq_w) = odds_logprob(chosen, cfg);
    let (seq_l, dseq_l) = odds_logprob(rejected, cfg);
    let gap = log_odds(seq_w)? - log_odds(seq_l)?;
    let or_term = neg_log_sigmoid(gap);
    let total = nll + cfg.beta * or_term;

    // d(-log sigmoid(g))/dg = -sigmoid(-g)
    let dor_dgap = -sigmoid(-gap);
    let dgap_dseq_w = log_odds_slope(seq_w);
    let dgap_dseq_l = -log_odds_slope(seq_l);

    let grads_chosen = w_chosen
        .iter()
        .zip(&dseq_w)
        .map(|(w, ds)| -w / w_sum + cfg.beta * dor_dgap * dgap_dseq_w * ds)
        .collect();
    let grads_rejected = dseq_l
        .iter()
        .map(|ds| cfg.beta * dor_dgap * dgap_dseq_l * ds)
        .collect();

    Ok(LossBreakdown {
        nll,
        or_term,
        total,
        grads_chosen,
        grads_rejected,
    })
}

/// Standard ORPO with uniform token averaging.
pub fn orpo_loss(chosen_logps: &[f64], rejected_logps: &[f64], beta: f64) -> Result<f64, DorpoError> {
    if chosen_logps.is_empty() || rejected_logps.is_empty() {
        return Err(DorpoError::EmptyResponse);
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let (lw, ll) = (mean(chosen_logps), mean(rejected_logps));
    let ratio = log_odds(lw)? - log_odds(ll)?;
    Ok(-lw + beta * neg_log_sigmoid(ratio))
}

/// Share of weighted-mean gradient mass on the `K` window tokens:
/// `alpha*K / (alpha*K + (T - K))`.
pub fn decision_gradient_fraction(len: usize, window: usize, alpha: f64) -> Result<f64, DorpoError> {
    if window == 0 || window > len {
        return Err(DorpoError::Lengths(format!("need 1 <= K <= T, got K={window}, T={len}")));
    }
    if !(alpha >= 1.0) {
        return Err(DorpoError::Config(format!("alpha must be >= 1, got {alpha}")));
    }
    let ak = alpha * window as f64;
    Ok(ak / (ak + (len - window) as f64))
}

/// Decision-gradient imbalance between a refusal of length `refusal_len` and
/// a code response of length `code_len`:
/// `(alpha*K + T_c - K) / (alpha*K + T_r - K)`.
pub fn imbalance_ratio(code_len: usize, refusal_len: usize, window: usize, alpha: f64) -> Result<f64, DorpoError> {
    if !(code_len > refusal_len && refusal_len > window && window >= 1) {
        return Err(DorpoError::Lengths(format!(
            "need T_c > T_r > K >= 1, got T_c={code_len}, T_r={refusal_len}, K={window}"
        )));
    }
    if !(alpha >= 1.0) {
        return Err(DorpoError::Config(format!("alpha must be >= 1, got {alpha}")));
    }
    let ak = alpha * window as f64;
    Ok((ak + (code_len - window) as f64) / (ak + (refusal_len - window) as f64))
}
