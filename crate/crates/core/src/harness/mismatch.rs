//! Repeated mismatch rounds: every sample is shown another sample's diagram,
//! and each round reports functional Pass@1 and the refusal rate.

use std::collections::BTreeMap;
use std::fs;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{judge_completion, BenchmarkManifest, HarnessError, RunConfig, Verdict};
use crate::metrics::Variant;
use crate::par;
use crate::toolchain::Toolchain;

/// Uniform random permutation of `0..n` without fixed points, by shuffling
/// until none remain.
pub fn derangement(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    assert!(n >= 2, "a derangement needs at least two elements");
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        p.shuffle(rng);
        if p.iter().enumerate().all(|(i, &j)| i != j) {
            return p;
        }
    }
}

/// One derangement per round from a single seeded stream.
pub fn mismatch_assignments(manifest: &BenchmarkManifest, rounds: usize, seed: u64) -> Result<Vec<Vec<usize>>, HarnessError> {
    let n = manifest.samples.len();
    if n < 2 {
        return Err(HarnessError::TooFewSamples(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..rounds).map(|_| derangement(n, &mut rng)).collect())
}

/// Supplies the completions a model produced for `sample_id` when shown
/// the diagram of `diagram_id` in a given (1-based) round.
pub trait CompletionProvider: Sync {
    fn completions(&self, round: usize, sample_id: &str, diagram_id: &str) -> Result<Vec<String>, HarnessError>;
}

/// One line of a mismatch-round completion file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MismatchCompletion {
    pub round: usize,
    pub sample_id: String,
    pub completion_index: usize,
    pub text: String,
}

/// Completions keyed by (round, sample id).
#[derive(Debug, Clone, Default)]
pub struct FileProvider {
    by_key: BTreeMap<(usize, String), Vec<(usize, String)>>,
}

impl FileProvider {
    pub fn new(records: Vec<MismatchCompletion>) -> Self {
        let mut by_key: BTreeMap<(usize, String), Vec<(usize, String)>> = BTreeMap::new();
        for r in records {
            by_key.entry((r.round, r.sample_id)).or_default().push((r.completion_index, r.text));
        }
        for v in by_key.values_mut() {
            v.sort_by_key(|(i, _)| *i);
        }
        Self { by_key }
    }
}

impl CompletionProvider for FileProvider {
    fn completions(&self, round: usize, sample_id: &str, _diagram_id: &str) -> Result<Vec<String>, HarnessError> {
        self.by_key
            .get(&(round, sample_id.to_string()))
            .map(|v| v.iter().map(|(_, t)| t.clone()).collect())
            .ok_or_else(|| HarnessError::MissingRoundCompletions {
                round,
                sample_id: sample_id.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagramAssignment {
    pub sample_id: String,
    pub diagram_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchRound {
    pub round: usize,
    pub assignment: Vec<DiagramAssignment>,
    /// Percent.
    pub functional_pass_at_1: f64,
    /// Percent of completions that refused.
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub seed: u64,
    pub rounds: Vec<MismatchRound>,
    pub avg_functional_pass_at_1: f64,
    pub avg_mrr: f64,
}

/// Judge the provider's completions for `rounds` seeded mismatch rounds on
/// the Normal variant.
pub fn run_mismatch_rounds(
    manifest: &BenchmarkManifest,
    provider: &dyn CompletionProvider,
    toolchain: &Toolchain,
    config: &RunConfig,
    rounds: usize,
    seed: u64,
) -> Result<MismatchReport, HarnessError> {
    manifest.validate()?;
    let plans = mismatch_assignments(manifest, rounds, seed)?;
    for s in &manifest.samples {
        let tb = manifest.resolve(&s.testbench_ref);
        if !tb.is_file() {
            return Err(HarnessError::MissingFile(tb));
        }
    }
    let _ = fs::create_dir_all(&toolchain.config().workdir);

    let mut out = Vec::with_capacity(rounds);
    for (r, plan) in plans.iter().enumerate() {
        let round = r + 1;
        let mut jobs = Vec::new();
        let mut assignment = Vec::with_capacity(plan.len());
        for (i, &j) in plan.iter().enumerate() {
            let (sample, diagram) = (&manifest.samples[i], &manifest.samples[j]);
            assignment.push(DiagramAssignment {
                sample_id: sample.id.clone(),
                diagram_id: diagram.id.clone(),
            });
            let texts = provider.completions(round, &sample.id, &diagram.id)?;
            if texts.is_empty() {
                return Err(HarnessError::MissingRoundCompletions {
                    round,
                    sample_id: sample.id.clone(),
                });
            }
            let n = texts.len();
            jobs.extend(texts.into_iter().map(|t| (i, n, t)));
        }
        let verdicts = par::with_jobs(config.jobs, || {
            par::map(config.execution, &jobs, |(i, _, text)| {
                let sample = &manifest.samples[*i];
                judge_completion(
                    toolchain,
                    sample.header_for(Variant::Normal),
                    text,
                    &manifest.resolve(&sample.testbench_ref),
                    &config.rule,
                    &config.refusal,
                )
            })
        });
        let (mut pass_sum, mut refusals) = (0.0, 0usize);
        for ((_, n, _), v) in jobs.iter().zip(verdicts) {
            let v: Verdict = v?;
            pass_sum += f64::from(u8::from(v.functional)) / *n as f64;
            refusals += usize::from(v.refused);
        }
        out.push(MismatchRound {
            round,
            assignment,
            functional_pass_at_1: 100.0 * pass_sum / plan.len() as f64,
            mrr: 100.0 * refusals as f64 / jobs.len() as f64,
        });
    }
    let mean = |f: fn(&MismatchRound) -> f64| {
        if out.is_empty() {
            0.0
        } else {
            out.iter().map(f).sum::<f64>() / out.len() as f64
        }
    };
    let (avg_functional_pass_at_1, avg_mrr) = (mean(|r| r.functional_pass_at_1), mean(|r| r.mrr));
    Ok(MismatchReport {
        seed,
        rounds: out,
        avg_functional_pass_at_1,
        avg_mrr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::fixture::*;

    struct Scripted(fn(&str) -> String);

    impl CompletionProvider for Scripted {
        fn completions(&self, _round: usize, sample_id: &str, _diagram: &str) -> Result<Vec<String>, HarnessError> {
            Ok(vec![(self.0)(sample_id)])
        }
    }

    fn four_samples(dir: &std::path::Path) -> BenchmarkManifest {
        let mut m = manifest(dir);
        let mut extra = m.samples[0].clone();
        extra.id = "and2_copy".into();
        m.samples.push(extra);
        m
    }

    #[test]
    fn no_fixed_points() {
        let tmp = tempfile::tempdir().unwrap();
        let m = four_samples(tmp.path());
        for seed in 0..50 {
            for plan in mismatch_assignments(&m, 5, seed).unwrap() {
                assert!(plan.iter().enumerate().all(|(i, &j)| i != j));
                let mut sorted = plan.clone();
                sorted.sort_unstable();
                assert_eq!(sorted, vec![0, 1, 2, 3]);
            }
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        let tmp = tempfile::tempdir().unwrap();
        let m = four_samples(tmp.path());
        assert_eq!(mismatch_assignments(&m, 5, 1).unwrap(), mismatch_assignments(&m, 5, 1).unwrap());
        let differs = (2..10).any(|s| mismatch_assignments(&m, 5, s).unwrap() != mismatch_assignments(&m, 5, 1).unwrap());
        assert!(differs);
    }

    #[test]
    fn single_sample_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut m = manifest(tmp.path());
        m.samples.truncate(1);
        assert!(matches!(mismatch_assignments(&m, 5, 1), Err(HarnessError::TooFewSamples(1))));
    }

    #[test]
    fn all_refusals_round() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(tmp.path());
        let tc = stub_toolchain(&tmp.path().join("work"));
        let provider = Scripted(|id| {
            let header = SAMPLES.iter().find(|s| s.0 == id).unwrap().1;
            refusal(header)
        });
        let rep = run_mismatch_rounds(&m, &provider, &tc, &RunConfig::default(), 5, 1).unwrap();
        assert_eq!(rep.rounds.len(), 5);
        for r in &rep.rounds {
            assert_eq!((r.functional_pass_at_1, r.mrr), (0.0, 100.0));
            assert!(r.assignment.iter().all(|a| a.sample_id != a.diagram_id));
        }
        assert_eq!((rep.avg_functional_pass_at_1, rep.avg_mrr), (0.0, 100.0));
    }

    #[test]
    fn correct_answers_ignore_the_diagram() {
        let tmp = tempfile::tempdir().unwrap();
        let m = manifest(tmp.path());
        let tc = stub_toolchain(&tmp.path().join("work"));
        let provider = Scripted(|id| fenced(SAMPLES.iter().find(|s| s.0 == id).unwrap().2));
        let rep = run_mismatch_rounds(&m, &provider, &tc, &RunConfig::default(), 2, 3).unwrap();
        assert!(rep.rounds.iter().all(|r| r.functional_pass_at_1 == 100.0 && r.mrr == 0.0));
    }

    #[test]
    fn file_provider_lookup() {
        let p = FileProvider::new(vec![
            MismatchCompletion {
                round: 1,
                sample_id: "a".into(),
                completion_index: 1,
                text: "second".into(),
            },
            MismatchCompletion {
                round: 1,
                sample_id: "a".into(),
                completion_index: 0,
                text: "first".into(),
            },
        ]);
        assert_eq!(p.completions(1, "a", "b").unwrap(), vec!["first", "second"]);
        assert!(p.completions(2, "a", "b").is_err());
    }
}
