//! A per-position categorical scorer small enough to train with plain
//! gradient descent, so the alignment loop can run end to end.

use serde::{Deserialize, Serialize};

use super::{dorpo_loss, log_odds_gap, weighted_avg_logprob, DecisionConfig, DorpoError, ScoredResponse};

/// Logit table of shape `positions x vocab`; position `t` scores token `t`
/// of a sequence by a softmax over its row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScorer {
    positions: usize,
    vocab: usize,
    logits: Vec<f64>,
}

impl ToyScorer {
    pub fn zeros(positions: usize, vocab: usize) -> Self {
        Self {
            positions,
            vocab,
            logits: vec![0.0; positions * vocab],
        }
    }

    pub fn from_logits(positions: usize, vocab: usize, logits: Vec<f64>) -> Result<Self, DorpoError> {
        if logits.len() != positions * vocab || logits.iter().any(|x| !x.is_finite()) {
            return Err(DorpoError::Lengths(format!(
                "expected {} finite logits for a {positions} x {vocab} table, got {}",
                positions * vocab,
                logits.len()
            )));
        }
        Ok(Self { positions, vocab, logits })
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    fn row(&self, t: usize) -> &[f64] {
        &self.logits[t * self.vocab..(t + 1) * self.vocab]
    }

    fn log_normalizer(&self, t: usize) -> f64 {
        let row = self.row(t);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
    }

    fn check(&self, tokens: &[usize]) -> Result<(), DorpoError> {
        if tokens.is_empty() {
            return Err(DorpoError::EmptyResponse);
        }
        for (position, &token) in tokens.iter().enumerate() {
            if position >= self.positions || token >= self.vocab {
                return Err(DorpoError::TokenOutOfRange {
                    token,
                    position,
                    positions: self.positions,
                    vocab: self.vocab,
                });
            }
        }
        Ok(())
    }

    /// Per-token log-probabilities of `tokens`, response starting at 1.
    pub fn score(&self, tokens: &[usize]) -> Result<ScoredResponse, DorpoError> {
        self.check(tokens)?;
        let logps = tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| (self.row(t)[tok] - self.log_normalizer(t)).min(0.0))
            .collect();
        ScoredResponse::from_logps(logps)
    }

    /// Accumulate `d loss / d logits` given `d loss / d logp_t`.
    fn backprop(&self, tokens: &[usize], dlogp: &[f64], grad: &mut [f64]) {
        for (t, (&tok, &g)) in tokens.iter().zip(dlogp).enumerate() {
            let lse = self.log_normalizer(t);
            let base = t * self.vocab;
            for v in 0..self.vocab {
                let p = (self.logits[base + v] - lse).exp();
                let indicator = if v == tok { 1.0 } else { 0.0 };
                grad[base + v] += g * (indicator - p);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenPair {
    pub chosen: Vec<usize>,
    pub rejected: Vec<usize>,
}

/// Batch means over all pairs at one parameter setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub total: f64,
    pub nll: f64,
    pub or_term: f64,
    /// Mean log-odds gap, chosen minus rejected.
    pub gap: f64,
    pub chosen_wlogp: f64,
    pub rejected_wlogp: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignRun {
    pub scorer: ToyScorer,
    /// Statistics before each update, one per step.
    pub trace: Vec<StepStats>,
    /// Statistics after the last update.
    pub final_stats: StepStats,
}

fn forward_backward(
    pairs: &[TokenPair],
    scorer: &ToyScorer,
    cfg: &DecisionConfig,
    step: usize,
    grad: Option<&mut [f64]>,
) -> Result<StepStats, DorpoError> {
    let b = pairs.len() as f64;
    let mut stats = StepStats {
        step,
        total: 0.0,
        nll: 0.0,
        or_term: 0.0,
        gap: 0.0,
        chosen_wlogp: 0.0,
        rejected_wlogp: 0.0,
    };
    let mut grad = grad;
    for pair in pairs {
        let chosen = scorer.score(&pair.chosen)?;
        let rejected = scorer.score(&pair.rejected)?;
        let loss = dorpo_loss(&chosen, &rejected, cfg)?;
        stats.total += loss.total / b;
        stats.nll += loss.nll / b;
        stats.or_term += loss.or_term / b;
        stats.gap += log_odds_gap(&chosen, &rejected, cfg)? / b;
        stats.chosen_wlogp += weighted_avg_logprob(&chosen, cfg) / b;
        stats.rejected_wlogp += weighted_avg_logprob(&rejected, cfg) / b;
        if let Some(g) = grad.as_deref_mut() {
            let scale = |v: &[f64]| v.iter().map(|x| x / b).collect::<Vec<_>>();
            scorer.backprop(&pair.chosen, &scale(&loss.grads_chosen), g);
            scorer.backprop(&pair.rejected, &scale(&loss.grads_rejected), g);
        }
    }
    if !stats.total.is_finite() {
        return Err(DorpoError::Diverged { step });
    }
    Ok(stats)
}

/// Batch statistics of `pairs` under `scorer`.
pub fn evaluate(pairs: &[TokenPair], scorer: &ToyScorer, cfg: &DecisionConfig) -> Result<StepStats, DorpoError> {
    forward_backward(pairs, scorer, cfg, 0, None)
}

/// Full-batch gradient descent on the objective. Each step scores both
/// responses of every pair, weights tokens, forms the weighted log-probs and
/// the loss, then updates the logit table.
pub fn toy_align_loop(
    pairs: &[TokenPair],
    scorer: ToyScorer,
    cfg: &DecisionConfig,
    steps: usize,
    lr: f64,
) -> Result<AlignRun, DorpoError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(DorpoError::Lengths("no preference pairs".into()));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(DorpoError::Config(format!("learning rate must be > 0, got {lr}")));
    }
    let mut scorer = scorer;
    let mut trace = Vec::with_capacity(steps);
    let mut grad = vec![0.0; scorer.logits.len()];
    for step in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let stats = forward_backward(pairs, &scorer, cfg, step, Some(&mut grad))?;
        trace.push(stats);
        for (w, g) in scorer.logits.iter_mut().zip(&grad) {
            *w -= lr * g;
        }
    }
    let mut final_stats = forward_backward(pairs, &scorer, cfg, steps, None)?;
    final_stats.step = steps;
    Ok(AlignRun {
        scorer,
        trace,
        final_stats,
    })
}
