//! Paired model comparison: McNemar per benchmark variant with one joint
//! Holm–Bonferroni correction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EvalReport, HarnessError};
use crate::metrics::{Mode, PassKind, Variant};
use crate::stats::{holm_bonferroni, mcnemar, McNemarResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub condition: Variant,
    /// Samples passing in A only.
    pub b: u64,
    /// Samples passing in B only.
    pub c: u64,
    pub test: McNemarResult,
    pub adjusted_p: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarTable {
    pub alpha: f64,
    pub kind: PassKind,
    pub mode: Mode,
    pub rows: Vec<ComparisonRow>,
}

fn first_outcomes(report: &EvalReport, variant: Variant, mode: Mode, kind: PassKind) -> BTreeMap<&str, bool> {
    report
        .cells
        .iter()
        .filter(|c| c.variant == variant && c.mode == mode)
        .map(|c| (c.sample_id.as_str(), c.first_pass(kind)))
        .collect()
}

/// Compare first-completion functional outcomes in Original mode.
pub fn compare_models(a: &EvalReport, b: &EvalReport, alpha: f64) -> Result<McNemarTable, HarnessError> {
    compare_models_with(a, b, alpha, PassKind::Functional, Mode::Original)
}

pub fn compare_models_with(
    a: &EvalReport,
    b: &EvalReport,
    alpha: f64,
    kind: PassKind,
    mode: Mode,
) -> Result<McNemarTable, HarnessError> {
    let mut counts = Vec::new();
    for variant in Variant::ALL {
        let (oa, ob) = (first_outcomes(a, variant, mode, kind), first_outcomes(b, variant, mode, kind));
        if oa.is_empty() && ob.is_empty() {
            continue;
        }
        if !oa.keys().eq(ob.keys()) {
            return Err(HarnessError::IdMismatch(variant));
        }
        let (mut only_a, mut only_b) = (0u64, 0u64);
        for (id, &pa) in &oa {
            let pb = ob[id];
            only_a += u64::from(pa && !pb);
            only_b += u64::from(pb && !pa);
        }
        counts.push((variant, mcnemar(only_a, only_b)));
    }
    let ps: Vec<f64> = counts.iter().map(|(_, t)| t.p_value).collect();
    let holm = holm_bonferroni(&ps, alpha)?;
    let rows = counts
        .into_iter()
        .enumerate()
        .map(|(i, (condition, test))| ComparisonRow {
            condition,
            b: test.b,
            c: test.c,
            test,
            adjusted_p: holm.adjusted[i],
            rejected: holm.rejected[i],
        })
        .collect();
    Ok(McNemarTable { alpha, kind, mode, rows })
}
