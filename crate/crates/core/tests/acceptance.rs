//! Acceptance suite. Runs as a plain binary so every criterion reports a
//! PASS/FAIL line; exits nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use selbias::conjlm::{self, draw_posterior, elpd_loo_exact, loglik_matrix};
use selbias::gpd::fit_gpd;
use selbias::orderstats::{blom_max, halfnormal_sigma};
use selbias::psisloo::{elpd_diff, elpd_loo_psis, elpd_se};
use selbias::search::{correct_path, forward_search, stopping_rules, ExactLoo, KMode};
use selbias::sim::{self, ForwardConfig, ManyKConfig};
use selbias::special::neumaier_sum;
use selbias::weights::{prob_better_normal, pseudo_bma, pseudo_bma_plus};
use selbias::{Dataset, ElpdEstimate, PriorConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn max_diff_tracks_threshold() -> Outcome {
    let cfg = ManyKConfig {
        seed: 2022,
        replications: 100,
        n: 100,
        ks: vec![2, 5, 10, 25, 50, 100],
        beta_deltas: vec![0.0],
        n_test: 100,
        alpha: 0.5,
        prior: "diffuse".into(),
    };
    let res = sim::run_many_k(&cfg).expect("simulation runs");
    let mut pass = true;
    let mut parts = Vec::new();
    for s in &res.summary {
        let in_iqr = s.q25_max_diff <= s.predicted_threshold && s.predicted_threshold <= s.q75_max_diff;
        let rel = (s.mean_max_diff - s.predicted_threshold).abs() / s.predicted_threshold;
        pass &= in_iqr && rel < 0.35;
        parts.push(format!(
            "K={} pred={:.3} iqr=[{:.3},{:.3}] mean={:.3} rel={:.2}",
            s.k, s.predicted_threshold, s.q25_max_diff, s.q75_max_diff, s.mean_max_diff, rel
        ));
    }
    outcome(pass, parts.join("; "))
}

fn weight_anchors() -> Outcome {
    let bma = pseudo_bma(4.0f64);
    let better = prob_better_normal(4.0f64, 2.0).unwrap();
    let plus = pseudo_bma_plus(4.0f64, 2.0).unwrap();
    let pass = (bma - 0.98201).abs() <= 1e-4 && (better - 0.97725).abs() <= 1e-4 && plus > 0.90 && plus < 0.977;
    outcome(
        pass,
        format!("pseudo_bma={bma:.6} prob_better={better:.6} pseudo_bma_plus={plus:.6}"),
    )
}

fn regression_data(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let y = DVector::from_fn(n, |i, _| {
        let e: f64 = StandardNormal.sample(&mut rng);
        0.5 + (0..p).map(|j| beta[j] * x[(i, j)]).sum::<f64>() + e
    });
    Dataset::new(x, y, true).unwrap()
}

fn psis_matches_exact() -> Outcome {
    let mut hits = 0;
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let data = regression_data(50, 5, 100 + seed);
        let prior = PriorConfig::diffuse().prior_for(5, true);
        let exact = elpd_loo_exact(&data, &prior).unwrap();
        let fit = conjlm::fit(&data, &prior).unwrap();
        let draws = draw_posterior(&fit, 4000, 500 + seed);
        let psis = elpd_loo_psis(&loglik_matrix("m", &draws, &data).unwrap()).unwrap();
        let ratio = (psis.estimate - exact.estimate).abs() / exact.se;
        worst = worst.max(ratio);
        if ratio < 0.1 {
            hits += 1;
        }
    }
    outcome(hits >= 18, format!("{hits}/20 within 0.1 SE, worst {worst:.4} SE"))
}

fn gpd_sample(k: f64, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>();
            let u = 1.0 - u;
            if k == 0.0 {
                -u.ln()
            } else {
                (u.powf(-k) - 1.0) / k
            }
        })
        .collect()
}

fn gpd_recovery() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, &k) in [-0.2, 0.0, 0.3, 0.7].iter().enumerate() {
        let hits = (0..100u64)
            .filter(|&seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 * i as u64 + seed);
                let fit = fit_gpd(&gpd_sample(k, 2000, &mut rng)).unwrap();
                (fit.k_hat - k).abs() < 0.1
            })
            .count();
        pass &= hits >= 95;
        parts.push(format!("k={k}: {hits}/100"));
    }
    outcome(pass, parts.join(", "))
}

fn forward_properties() -> Outcome {
    let cfg = ForwardConfig::desk(77, 20, vec![100, 400], vec![0.0, 0.9]);
    let res = sim::run_forward_experiment(&cfg).expect("experiment runs");
    let small: Vec<_> = res.runs.iter().filter(|r| r.n == 100).collect();
    let optimistic = small
        .iter()
        .filter(|r| r.raw_mlpd_at_bulge > r.test_mlpd_at_bulge)
        .count();
    let a = optimistic as f64 / small.len() as f64;
    let total = res.runs.len() as f64;
    let near = res
        .runs
        .iter()
        .filter(|r| r.corrected_max_size.abs_diff(r.test_argmax_size) <= 3)
        .count() as f64
        / total;
    let bounded = res
        .runs
        .iter()
        .filter(|r| r.corrected_max_mlpd <= r.reference_test_mlpd + 2.0 * r.reference_test_se)
        .count() as f64
        / total;
    outcome(
        a >= 0.8 && near >= 0.7 && bounded >= 0.8,
        format!("(a) {a:.2} >= 0.80, (b) {near:.2} >= 0.70, (c) {bounded:.2} >= 0.80 over {total} runs"),
    )
}

fn multiplier_ordering() -> Outcome {
    let spec = sim::BlockDgpSpec::desk(100, 0.0, 31);
    let (train, _) = sim::gen_block(&spec).unwrap();
    let path = forward_search(&train, 20, &ExactLoo(PriorConfig::diffuse())).unwrap();
    let runs: Vec<_> = [1.0, 1.5, 2.0]
        .iter()
        .map(|&m| correct_path(&path, m, 0.5, KMode::Candidates).unwrap())
        .collect();
    let first_fired = runs[0].steps.iter().position(|s| s.corrected).map(|i| i + 1);
    let paths: Vec<Vec<f64>> = runs.iter().map(|p| p.corrected_path()).collect();
    let mut pass = first_fired.is_some();
    for (size, ((&a, &b), &c)) in paths[0].iter().zip(&paths[1]).zip(&paths[2]).enumerate() {
        pass &= a >= b && b >= c;
        if first_fired.is_some_and(|f| size >= f) {
            pass &= a > b && b > c;
        }
    }
    let fired = runs[0].steps.iter().filter(|s| s.corrected).count();
    outcome(pass, format!("{fired} corrected steps, first at size {first_fired:?}"))
}

fn invariant_suite() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_owned());
        }
    };
    let data = regression_data(60, 8, 9);
    let path = forward_search(&data, 8, &ExactLoo(PriorConfig::diffuse())).unwrap();
    let path = correct_path(&path, 1.5, 0.5, KMode::Candidates).unwrap();
    let mut terms = vec![path.base_elpd];
    let mut identity = true;
    for s in &path.steps {
        terms.push(s.corrected_diff);
        identity &= s.corrected_elpd_after == neumaier_sum(terms.iter().copied());
    }
    check("cumulative identity", identity);

    check("se constant", elpd_se(&[2.5f64, 2.5, 2.5]).unwrap() == 0.0);
    check("se (0,2)", (elpd_se(&[0.0f64, 2.0]).unwrap() - 2.0).abs() < 1e-15);
    check(
        "se (1,2,3)",
        (elpd_se(&[1.0f64, 2.0, 3.0]).unwrap() - 3f64.sqrt()).abs() < 1e-15,
    );

    let hn = halfnormal_sigma(&[-1.0f64, 0.0, 1.0, 2.0]).unwrap();
    check("halfnormal sqrt(1.25)", (hn.sigma_hat - 1.25f64.sqrt()).abs() < 1e-15);

    check("blom K=1", blom_max(1, 0.5f64) == 0.0);
    check("blom K=2", (blom_max(2, 0.5f64) - 0.6745).abs() < 5e-5);
    check("blom K=100", (blom_max(100, 0.5f64) - 2.5758).abs() < 5e-5);

    let a = ElpdEstimate::from_pointwise("a", vec![-1.0, -2.5, -0.5, -3.0]).unwrap();
    let b = ElpdEstimate::from_pointwise("b", vec![-1.5, -2.0, -0.25, -2.0]).unwrap();
    let ab = elpd_diff(&a, &b).unwrap();
    let ba = elpd_diff(&b, &a).unwrap();
    check(
        "diff antisymmetry",
        ab.estimate == -ba.estimate && ab.se_diff == ba.se_diff,
    );

    let diffs = [-3.0f64, -1.0, 0.5, 2.0, 4.5, -0.25];
    let base = halfnormal_sigma(&diffs).unwrap().sigma_hat;
    let shifted: Vec<f64> = diffs.iter().map(|d| d + 7.0).collect();
    let scaled: Vec<f64> = diffs.iter().map(|d| d * 3.0).collect();
    check(
        "sigma translation invariance",
        (halfnormal_sigma(&shifted).unwrap().sigma_hat - base).abs() < 1e-12,
    );
    check(
        "sigma scale equivariance",
        (halfnormal_sigma(&scaled).unwrap().sigma_hat - 3.0 * base).abs() < 1e-12,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sample = gpd_sample(0.3, 500, &mut rng);
    let f1 = fit_gpd(&sample).unwrap();
    let f2 = fit_gpd(&sample.iter().map(|x| 2.5 * x).collect::<Vec<_>>()).unwrap();
    check(
        "gpd scale equivariance",
        (f1.k_hat - f2.k_hat).abs() < 1e-9 && (2.5 * f1.sigma_hat - f2.sigma_hat).abs() < 1e-9,
    );

    let rerun = forward_search(&data, 8, &ExactLoo(PriorConfig::diffuse())).unwrap();
    let rerun = correct_path(&rerun, 1.5, 0.5, KMode::Candidates).unwrap();
    check("search determinism", rerun == path);
    let spec = sim::BlockDgpSpec::desk(50, 0.9, 12);
    check(
        "generator determinism",
        sim::gen_block(&spec).unwrap() == sim::gen_block(&spec).unwrap(),
    );

    let detail = if failures.is_empty() {
        "all checks hold".to_owned()
    } else {
        format!("failed: {}", failures.join(", "))
    };
    outcome(failures.is_empty(), detail)
}

fn sigma_delta_rules_stop_earlier() -> Outcome {
    let mut two = 0;
    let mut three = 0;
    for rep in 0..20u64 {
        let spec = sim::BlockDgpSpec {
            n_test: 1,
            ..sim::BlockDgpSpec::desk(100, 0.0, sim::derive_seed(8, &[rep]))
        };
        let (train, _) = sim::gen_block(&spec).unwrap();
        let path = forward_search(&train, 20, &ExactLoo(PriorConfig::diffuse())).unwrap();
        let path = correct_path(&path, 1.5, 0.5, KMode::Candidates).unwrap();
        let v = stopping_rules(&path).unwrap();
        two += usize::from(v.two_sigma_delta_size <= v.corrected_max_size);
        three += usize::from(v.three_sigma_delta_size <= v.corrected_max_size);
    }
    outcome(
        two >= 16 && three >= 16,
        format!("2σ_Δ ≤ corrected max in {two}/20, 3σ_Δ in {three}/20"),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 max-diff threshold tracks null simulation", max_diff_tracks_threshold),
        ("2 weight anchors", weight_anchors),
        ("3 PSIS-LOO vs exact LOO", psis_matches_exact),
        ("4 GPD shape recovery", gpd_recovery),
        ("5 corrected forward-search properties", forward_properties),
        ("6 multiplier ordering", multiplier_ordering),
        ("7 invariant suite", invariant_suite),
        ("8 sigma-delta rules stop no later", sigma_delta_rules_stop_earlier),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {name}: {verdict} ({:.1}s) {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
