//! Pass@k, sample-level outcome breakdowns and refusal metrics.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("invalid pass@k arguments: n={n}, c={c}, k={k}")]
    PassAtKArgs { n: usize, c: usize, k: usize },
    #[error("cannot aggregate an empty set of {0}")]
    Empty(&'static str),
    #[error("problem `{sample_id}` has n={n} < k={k}")]
    TooFewSamples { sample_id: String, n: usize, k: usize },
    #[error("inconsistent outcome for `{0}`: require c_func <= c_syntax <= n and refusals <= n")]
    InconsistentOutcome(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Normal,
    Anony,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Normal, Variant::Anony];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Normal => "Normal",
            Variant::Anony => "Anony",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Original,
    Mirage,
    Mismatch,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Original, Mode::Mirage, Mode::Mismatch];

    pub fn label(self) -> &'static str {
        match self {
            Mode::Original => "Original",
            Mode::Mirage => "Mirage",
            Mode::Mismatch => "Mismatch",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassKind {
    Syntax,
    Functional,
}

/// Tallies for one (sample, variant, mode) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemOutcome {
    pub sample_id: String,
    pub variant: Variant,
    pub mode: Mode,
    pub n: usize,
    pub c_syntax: usize,
    pub c_func: usize,
    pub refusals: usize,
}

impl ProblemOutcome {
    pub fn validate(&self) -> Result<(), MetricsError> {
        // A refusal is never a syntax pass, so passes and refusals share n.
        let ok = self.c_func <= self.c_syntax
            && self.c_syntax <= self.n
            && self.refusals <= self.n
            && self.c_syntax + self.refusals <= self.n;
        if ok {
            Ok(())
        } else {
            Err(MetricsError::InconsistentOutcome(self.sample_id.clone()))
        }
    }

    pub fn passes(&self, kind: PassKind) -> usize {
        match kind {
            PassKind::Syntax => self.c_syntax,
            PassKind::Functional => self.c_func,
        }
    }
}

/// Unbiased pass@k estimator `1 - C(n-c, k) / C(n, k)`.
///
/// Evaluated as `1 - prod_{i=n-c+1}^{n} (1 - k/i)`, which avoids large
/// binomials.
pub fn pass_at_k(n: usize, c: usize, k: usize) -> Result<f64, MetricsError> {
    if c > n || k == 0 || k > n {
        return Err(MetricsError::PassAtKArgs { n, c, k });
    }
    if n - c < k {
        return Ok(1.0);
    }
    let kf = k as f64;
    let miss: f64 = (n - c + 1..=n).map(|i| 1.0 - kf / i as f64).product();
    Ok(1.0 - miss)
}

/// Mean per-problem pass@k as a percentage (full precision).
pub fn aggregate_pass_at_k(outcomes: &[ProblemOutcome], k: usize, kind: PassKind) -> Result<f64, MetricsError> {
    if outcomes.is_empty() {
        return Err(MetricsError::Empty("problem outcomes"));
    }
    let mut sum = 0.0;
    for o in outcomes {
        if o.n < k {
            return Err(MetricsError::TooFewSamples {
                sample_id: o.sample_id.clone(),
                n: o.n,
                k,
            });
        }
        sum += pass_at_k(o.n, o.passes(kind), k)?;
    }
    Ok(100.0 * sum / outcomes.len() as f64)
}

/// Round half away from zero to two decimals, for report emission only.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub const DEFAULT_REFUSAL_KEY: &str = "i cannot accurately determine the verilog implementation";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalTemplateConfig {
    pub key_phrase: String,
}

impl Default for RefusalTemplateConfig {
    fn default() -> Self {
        Self {
            key_phrase: DEFAULT_REFUSAL_KEY.to_string(),
        }
    }
}

/// Lowercase and collapse whitespace runs into single spaces.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Template-match refusal detection.
pub fn detect_refusal(response: &str, cfg: &RefusalTemplateConfig) -> bool {
    let key = normalize_text(&cfg.key_phrase);
    !key.is_empty() && normalize_text(response).contains(&key)
}

/// Fractions of paired (Original, Mirage) outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub both: f64,
    pub original_only: f64,
    pub mirage_only: f64,
    pub neither: f64,
}

impl BreakdownRow {
    pub fn as_array(&self) -> [f64; 4] {
        [self.both, self.original_only, self.mirage_only, self.neither]
    }
}

pub fn outcome_breakdown(paired: &[(bool, bool)]) -> Result<BreakdownRow, MetricsError> {
    if paired.is_empty() {
        return Err(MetricsError::Empty("paired outcomes"));
    }
    let mut counts = [0usize; 4];
    for &(orig, mirage) in paired {
        let slot = match (orig, mirage) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        counts[slot] += 1;
    }
    let n = paired.len() as f64;
    Ok(BreakdownRow {
        both: counts[0] as f64 / n,
        original_only: counts[1] as f64 / n,
        mirage_only: counts[2] as f64 / n,
        neither: counts[3] as f64 / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefusalRecord {
    pub mode: Mode,
    pub refused: bool,
    /// Whether the input is a valid (matching) one. Only valid Original
    /// inputs count toward the false refusal rate.
    pub valid_input: bool,
}

/// Refusal rates in percent; `None` when the mode has no records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RefusalRates {
    pub frr: Option<f64>,
    pub rr: Option<f64>,
    pub mrr: Option<f64>,
}

pub fn refusal_rates(records: &[RefusalRecord]) -> RefusalRates {
    let rate = |pred: &dyn Fn(&RefusalRecord) -> bool| {
        let (mut total, mut refused) = (0usize, 0usize);
        for r in records.iter().filter(|r| pred(r)) {
            total += 1;
            refused += usize::from(r.refused);
        }
        (total > 0).then(|| 100.0 * refused as f64 / total as f64)
    };
    RefusalRates {
        frr: rate(&|r| r.mode == Mode::Original && r.valid_input),
        rr: rate(&|r| r.mode == Mode::Mirage),
        mrr: rate(&|r| r.mode == Mode::Mismatch),
    }
}
