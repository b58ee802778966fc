//! The `verify` subcommand: seeded property suites over random small
//! networks, one machine-readable pass/fail line per property.

use tsens_core::grad::{min_abs_preactivation, param_gradient};
use tsens_core::network::{Network, HE_SCALE};
use tsens_core::sensitivity::{
    gradient_perturbation_gap, tangent_sensitivity_exact, ts_frobenius_norm, verify_lemma_relu,
    SensMethod,
};
use tsens_core::tensor::{sq_norm, RngState};
use tsens_core::training::{train, w_theta, Optimizer, Schedule, TrainOptions};
use tsens_core::{data::synth_blobs, error::Error};

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl SuiteResult {
    pub fn line(&self) -> String {
        format!(
            "{} {} {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

fn random_net(rng: &mut RngState, max_width: usize, biasless: bool) -> Network {
    let depth = 1 + rng.index(4);
    let mut dims = vec![1 + rng.index(8)];
    for _ in 0..depth - 1 {
        dims.push(1 + rng.index(max_width));
    }
    dims.push(1);
    Network::init(&dims, biasless, rng.next_u64(), HE_SCALE).unwrap()
}

fn boundary_safe_input(net: &Network, rng: &mut RngState, threshold: f64) -> Option<Vec<f64>> {
    for _ in 0..200 {
        let x = rng.gaussian_vector(net.n_in(), 0.0, 1.0);
        if min_abs_preactivation(net, &x).unwrap() > threshold {
            return Some(x);
        }
    }
    None
}

fn lemma_identity(rng: &mut RngState, trials: usize) -> SuiteResult {
    let mut max_resid = 0.0f64;
    for _ in 0..trials {
        let net = random_net(rng, 32, true);
        for _ in 0..10 {
            let x = rng.gaussian_vector(net.n_in(), 0.0, 1.0);
            match verify_lemma_relu(&net, &x, 0) {
                Ok(r) => max_resid = max_resid.max(r),
                Err(e) => {
                    return SuiteResult {
                        name: "lemma-identity",
                        passed: false,
                        detail: format!("unexpected error: {e}"),
                    }
                }
            }
        }
    }
    // a biased net must be rejected as not applicable, never silently checked
    let biased = Network::init(&[3, 4, 1], false, rng.next_u64(), HE_SCALE).unwrap();
    let rejected = matches!(
        verify_lemma_relu(&biased, &[1.0, 2.0, 3.0], 0),
        Err(Error::LemmaNotApplicable)
    );
    SuiteResult {
        name: "lemma-identity",
        passed: max_resid <= 1e-9 && rejected,
        detail: format!(
            "trials={trials} max_residual={max_resid:.3e} biased_net=not-applicable({})",
            if rejected { "ok" } else { "MISSED" }
        ),
    }
}

fn sensitivity_finite_difference(rng: &mut RngState, trials: usize) -> SuiteResult {
    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for _ in 0..trials {
        let net = random_net(rng, 8, true);
        let Some(x) = boundary_safe_input(&net, rng, 1e-2) else {
            continue;
        };
        checked += 1;
        let s = tangent_sensitivity_exact(&net, &x, 0).unwrap();
        let mat = s.matrix().unwrap();
        let h = 1e-5;
        for r in 0..net.n_in() {
            let mut xp = x.clone();
            xp[r] += h;
            let mut xm = x.clone();
            xm[r] -= h;
            let gp = param_gradient(&net, &xp, 0).unwrap();
            let gm = param_gradient(&net, &xm, 0).unwrap();
            for p in 0..mat.rows() {
                let fd = (gp.as_slice()[p] - gm.as_slice()[p]) / (2.0 * h);
                let exact = mat.get(p, r);
                let denom = exact.abs().max(fd.abs()).max(1e-6);
                max_rel = max_rel.max(((fd - exact) / denom).abs());
            }
        }
    }
    SuiteResult {
        name: "sensitivity-finite-difference",
        passed: max_rel <= 1e-4 && (trials == 0 || checked > 0),
        detail: format!("cases={checked} max_rel_err={max_rel:.3e}"),
    }
}

fn layerwise_equals_exact(rng: &mut RngState, trials: usize) -> SuiteResult {
    let mut max_rel = 0.0f64;
    for _ in 0..trials {
        let net = random_net(rng, 12, rng.next_u64() % 2 == 0);
        let x = rng.gaussian_vector(net.n_in(), 0.0, 1.0);
        let exact = ts_frobenius_norm(&net, &x, 0, &SensMethod::Exact).unwrap();
        let layer = ts_frobenius_norm(&net, &x, 0, &SensMethod::Layerwise).unwrap();
        if exact > 0.0 {
            max_rel = max_rel.max((exact - layer).abs() / exact);
        }
    }
    SuiteResult {
        name: "layerwise-vs-exact",
        passed: max_rel <= 1e-10,
        detail: format!("trials={trials} max_rel_err={max_rel:.3e}"),
    }
}

fn probe_unbiasedness(rng: &mut RngState, trials: usize) -> SuiteResult {
    let mut worst_sigmas = 0.0f64;
    for _ in 0..trials {
        let net = random_net(rng, 10, true);
        let x = rng.gaussian_vector(net.n_in(), 0.0, 1.0);
        let exact = ts_frobenius_norm(&net, &x, 0, &SensMethod::Exact).unwrap();
        if exact == 0.0 {
            continue;
        }
        let bank =
            tsens_core::sensitivity::ProbeBank::new(&net, 2000, rng.next_u64()).unwrap();
        let (mean_q, se_q) = bank.sq_norm_estimates(&net, &x, &[0]).unwrap()[0];
        if se_q > 0.0 {
            worst_sigmas = worst_sigmas.max((mean_q - exact * exact).abs() / se_q);
        }
    }
    SuiteResult {
        name: "probe-unbiasedness",
        passed: worst_sigmas <= 3.0,
        detail: format!("trials={trials} worst_deviation={worst_sigmas:.2}sigma"),
    }
}

fn perturbation_sandwich(rng: &mut RngState, trials: usize) -> SuiteResult {
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let net = random_net(rng, 12, true);
        let Some(x) = boundary_safe_input(&net, rng, 1e-2) else {
            continue;
        };
        let sigma = 1e-6 * sq_norm(&x);
        if sigma == 0.0 {
            continue;
        }
        let est = gradient_perturbation_gap(&net, &x, 0, sigma, 500, rng.next_u64()).unwrap();
        if est.region_preserved_fraction >= 0.95 && est.bound_value > 0.0 {
            checked += 1;
            worst = worst.max((est.mean_sq_gap - est.bound_value).abs() / est.bound_value);
        }
    }
    SuiteResult {
        name: "perturbation-sandwich",
        passed: worst <= 0.1 && (trials == 0 || checked > 0),
        detail: format!("cases={checked} worst_rel_dev={worst:.3}"),
    }
}

fn linear_class_bound(rng: &mut RngState, trials: usize) -> SuiteResult {
    let mut min_margin = f64::INFINITY;
    let mut all_pass = true;
    for _ in 0..trials {
        let m = 2 + rng.index(60);
        let dim = 1 + rng.index(12);
        let vs: Vec<Vec<f64>> = (0..m).map(|_| rng.gaussian_vector(dim, 0.0, 1.0)).collect();
        let check =
            tsens_core::bound::linear_class_bound_check(&vs, 2.0, 400, rng.next_u64()).unwrap();
        all_pass &= check.passes;
        min_margin = min_margin.min(check.margin);
    }
    SuiteResult {
        name: "linear-class-bound",
        passed: all_pass,
        detail: format!("trials={trials} min_margin={min_margin:.4}"),
    }
}

fn gd_displacement(rng: &mut RngState, trials: usize) -> SuiteResult {
    let mut worst = 0.0f64;
    for _ in 0..trials.max(1).min(8) {
        let dim = 2 + rng.index(4);
        let data = synth_blobs(15, dim, 2.5, rng.next_u64()).unwrap();
        let net0 = Network::init(&[dim, 8, 1], true, rng.next_u64(), HE_SCALE).unwrap();
        let record = match train(
            &net0,
            &data,
            None,
            &Schedule::constant(0.02, 40).unwrap(),
            &Optimizer::Gd,
            &TrainOptions {
                record_every: 40,
                tracked_outputs: vec![0],
                cts_method: None,
                abort_on_loss_increase: true,
            },
        ) {
            Ok(r) => r,
            Err(e) => {
                return SuiteResult {
                    name: "gd-displacement",
                    passed: false,
                    detail: format!("training failed: {e}"),
                }
            }
        };
        let theta_t = record.final_network().unwrap().flatten();
        let w = w_theta(&record).unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for ((t0, t1), wi) in record
            .theta0
            .as_slice()
            .iter()
            .zip(theta_t.as_slice())
            .zip(w.iter())
        {
            let diff = (t0 - t1) - wi;
            num += diff * diff;
            den += wi * wi;
        }
        if den > 0.0 {
            worst = worst.max((num / den).sqrt());
        }
    }
    SuiteResult {
        name: "gd-displacement",
        passed: worst <= 1e-10,
        detail: format!("worst_rel_err={worst:.3e}"),
    }
}

/// Runs every property suite. `trials = 0` yields a vacuous pass for each.
pub fn run_all(seed: u64, trials: usize) -> Vec<SuiteResult> {
    if trials == 0 {
        let names = [
            "lemma-identity",
            "sensitivity-finite-difference",
            "layerwise-vs-exact",
            "probe-unbiasedness",
            "perturbation-sandwich",
            "linear-class-bound",
            "gd-displacement",
        ];
        return names
            .iter()
            .map(|n| SuiteResult {
                name: n,
                passed: true,
                detail: "trials=0 vacuous".to_string(),
            })
            .collect();
    }
    let mut rng = RngState::new(seed);
    vec![
        lemma_identity(&mut rng, trials),
        sensitivity_finite_difference(&mut rng, trials),
        layerwise_equals_exact(&mut rng, trials),
        probe_unbiasedness(&mut rng, trials.min(20)),
        perturbation_sandwich(&mut rng, trials.min(12)),
        linear_class_bound(&mut rng, trials),
        gd_displacement(&mut rng, trials),
    ]
}
