//! Randomized property suite for the objective and the rebalancing theory,
//! runnable outside the test harness (`mirage dorpo check`).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    decision_gradient_fraction, dorpo_loss, imbalance_ratio, orpo_loss, weighted_avg_logprob, DecisionConfig,
    ScoredResponse,
};

/// Decision weights probed for monotone decrease of the imbalance ratio.
pub const ALPHA_GRID: [f64; 7] = [1.0, 1.5, 2.0, 3.0, 5.0, 10.0, 1e9];

/// Denominator floor for relative gradient error, so gradients of order
/// 1e-6 are compared at the finite-difference round-off scale.
pub const GRAD_REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub checks: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RebalanceRow {
    pub code_len: usize,
    pub refusal_len: usize,
    pub window: usize,
    pub alpha: f64,
    pub phi_code: f64,
    pub phi_refusal: f64,
    pub gamma: f64,
}

/// φ and Γ over a grid; combinations violating `T_c > T_r > K` are skipped.
pub fn rebalance_table(code_lens: &[usize], refusal_lens: &[usize], windows: &[usize], alphas: &[f64]) -> Vec<RebalanceRow> {
    let mut rows = Vec::new();
    for &code_len in code_lens {
        for &refusal_len in refusal_lens {
            for &window in windows {
                for &alpha in alphas {
                    let Ok(gamma) = imbalance_ratio(code_len, refusal_len, window, alpha) else {
                        continue;
                    };
                    rows.push(RebalanceRow {
                        code_len,
                        refusal_len,
                        window,
                        alpha,
                        phi_code: decision_gradient_fraction(code_len, window, alpha).expect("K < T_c"),
                        phi_refusal: decision_gradient_fraction(refusal_len, window, alpha).expect("K < T_r"),
                        gamma,
                    });
                }
            }
        }
    }
    rows
}

fn random_triple(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    let window = rng.gen_range(1..=32);
    let refusal_len = rng.gen_range(window + 1..=window + 100);
    let code_len = rng.gen_range(refusal_len + 1..=1000);
    (code_len, refusal_len, window)
}

fn random_response(rng: &mut ChaCha8Rng) -> ScoredResponse {
    let len = rng.gen_range(1..=40);
    let logps = (0..len).map(|_| rng.gen_range(-5.0..=-0.05)).collect();
    let start = rng.gen_range(1..=len);
    ScoredResponse::new(logps, start).expect("valid by construction")
}

fn random_config(rng: &mut ChaCha8Rng) -> DecisionConfig {
    DecisionConfig::new(rng.gen_range(1..=16), rng.gen_range(1.0..10.0), rng.gen_range(0.01..2.0))
        .expect("valid by construction")
}

fn check(name: &'static str, failures: usize, total: usize, worst: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: failures == 0,
        detail: format!("{} / {} cases ok, worst deviation {:.3e}", total - failures, total, worst),
    }
}

/// Central-difference gradient of the total loss.
fn numeric_grads(chosen: &ScoredResponse, rejected: &ScoredResponse, cfg: &DecisionConfig, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let total = |c: &[f64], r: &[f64]| {
        let c = ScoredResponse::new(c.to_vec(), chosen.start()).expect("perturbed response");
        let r = ScoredResponse::new(r.to_vec(), rejected.start()).expect("perturbed response");
        dorpo_loss(&c, &r, cfg).expect("in domain").total
    };
    let diff = |which: usize| -> Vec<f64> {
        let base = if which == 0 { chosen.logps() } else { rejected.logps() };
        (0..base.len())
            .map(|i| {
                let (mut up, mut dn) = (base.to_vec(), base.to_vec());
                up[i] += eps;
                dn[i] -= eps;
                let (fu, fd) = if which == 0 {
                    (total(&up, rejected.logps()), total(&dn, rejected.logps()))
                } else {
                    (total(chosen.logps(), &up), total(chosen.logps(), &dn))
                };
                (fu - fd) / (2.0 * eps)
            })
            .collect()
    };
    (diff(0), diff(1))
}

pub fn run_property_suite(seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let triples: Vec<_> = (0..1000).map(|_| random_triple(&mut rng)).collect();
    let (mut fail, mut worst) = (0, 0.0f64);
    for &(tc, tr, k) in &triples {
        let dev = (imbalance_ratio(tc, tr, k, 1.0).unwrap() - tc as f64 / tr as f64).abs();
        worst = worst.max(dev);
        fail += usize::from(dev > 1e-12);
    }
    checks.push(check("gamma(1) = T_c / T_r", fail, triples.len(), worst));

    let mut fail = 0;
    for &(tc, tr, k) in &triples {
        let g: Vec<f64> = ALPHA_GRID.iter().map(|&a| imbalance_ratio(tc, tr, k, a).unwrap()).collect();
        fail += usize::from(!g.windows(2).all(|w| w[1] < w[0]));
    }
    checks.push(check("gamma strictly decreasing in alpha", fail, triples.len(), 0.0));

    let (mut fail, mut worst) = (0, 0.0f64);
    for &(tc, tr, k) in &triples {
        let dev = (imbalance_ratio(tc, tr, k, 1e9).unwrap() - 1.0).abs();
        worst = worst.max(dev);
        fail += usize::from(dev > 1e-6);
    }
    checks.push(check("gamma(1e9) -> 1", fail, triples.len(), worst));

    let mut fail = 0;
    for &(tc, _, k) in &triples {
        let phi = |t: usize, k: usize, a: f64| decision_gradient_fraction(t, k, a).unwrap();
        let alpha_up = phi(tc, k, 2.0) > phi(tc, k, 1.0);
        let k_up = phi(tc, k + 1, 2.0) > phi(tc, k, 2.0);
        let t_down = phi(tc + 1, k, 2.0) < phi(tc, k, 2.0);
        fail += usize::from(!(alpha_up && k_up && t_down));
    }
    checks.push(check("phi monotone in alpha, K and T", fail, triples.len(), 0.0));

    let (mut fail, mut worst) = (0, 0.0f64);
    for _ in 0..100 {
        let (c, r) = (random_response(&mut rng), random_response(&mut rng));
        let mut cfg = random_config(&mut rng);
        cfg.weight = 1.0;
        let d = dorpo_loss(&c, &r, &cfg).unwrap().total;
        let o = orpo_loss(c.logps(), r.logps(), cfg.beta).unwrap();
        worst = worst.max((d - o).abs());
        fail += usize::from((d - o).abs() > 1e-12);
    }
    checks.push(check("alpha = 1 reduces to ORPO", fail, 100, worst));

    let (mut fail, mut worst) = (0, 0.0f64);
    for _ in 0..100 {
        let (c, r) = (random_response(&mut rng), random_response(&mut rng));
        let cfg = random_config(&mut rng);
        let analytic = dorpo_loss(&c, &r, &cfg).unwrap();
        let (nc, nr) = numeric_grads(&c, &r, &cfg, 1e-6);
        let case_worst = analytic
            .grads_chosen
            .iter()
            .zip(&nc)
            .chain(analytic.grads_rejected.iter().zip(&nr))
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(GRAD_REL_FLOOR))
            .fold(0.0f64, f64::max);
        worst = worst.max(case_worst);
        fail += usize::from(case_worst > 1e-6);
    }
    checks.push(check("analytic gradients match central differences", fail, 100, worst));

    let mut fail = 0;
    for _ in 0..200 {
        let r = random_response(&mut rng);
        let cfg = random_config(&mut rng);
        let m = weighted_avg_logprob(&r, &cfg);
        let lo = r.logps().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.logps().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        fail += usize::from(!(lo - 1e-12 <= m && m <= hi + 1e-12 && -m >= 0.0));
    }
    checks.push(check("weighted mean bounded, NLL non-negative", fail, 200, 0.0));

    SuiteReport { seed, checks }
}
