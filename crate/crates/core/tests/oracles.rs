//! Monte Carlo and closed-form oracles checked against the analytic code paths.

use onebit_core::channel::{
    Agent, Batch, Channel, FeedbackMode, Query, SamplingMode, Transcript, VectorAgent,
    VectorDistribution,
};
use onebit_core::distributions::{gaussian, make_two_sided_pareto, Distribution, FamilyParams};
use onebit_core::harness::{
    acceptance_matrix, derive_seed, run_pac, stream_rng, ExperimentConfig, FixtureSpec,
};
use onebit_core::refine::{
    build_plan, estimate_region, region_moment, AllocationProfile, Estimator, TargetSpec,
};
use onebit_core::variants::{
    anytime_round_plan, multivariate_estimate, two_stage_estimate, ScaleGrid,
};
use onebit_core::Localizer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const N: usize = 1_000_000;

fn samples(d: &Distribution, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..N).map(|_| d.sample(&mut rng)).collect()
}

fn band(p: f64, n: f64) -> f64 {
    5.0 * (p * (1.0 - p) / n).sqrt() + 1e-12
}

fn fixtures() -> Vec<(String, Distribution)> {
    let mut out: Vec<_> = acceptance_matrix()
        .into_iter()
        .map(|e| (e.name.to_string(), e.distribution().unwrap()))
        .collect();
    out.push((
        "pareto-alpha3.5".into(),
        make_two_sided_pareto(2.0, 1.0, -0.4, 3.5).unwrap(),
    ));
    out.push(("gaussian-sd2".into(), gaussian(0.3, 2.0).unwrap()));
    out
}

#[test]
fn empirical_cdf_matches_analytic() {
    for (i, (name, d)) in fixtures().into_iter().enumerate() {
        let xs = samples(&d, 100 + i as u64);
        let mu = d.mean();
        for off in [-8.0, -2.0, -0.75, -0.3, 0.0, 0.3, 0.75, 2.0, 8.0] {
            let g = mu + off;
            let p = d.prob_le(g);
            let emp = xs.iter().filter(|&&x| x <= g).count() as f64 / N as f64;
            assert!(
                (emp - p).abs() <= band(p, N as f64),
                "{name} at {g}: {emp} vs {p}"
            );
        }
    }
}

#[test]
fn empirical_mean_matches_analytic() {
    for (i, (name, d)) in fixtures().into_iter().enumerate() {
        let var = d.abs_central_moment(2.0);
        if !var.is_finite() {
            continue;
        }
        let xs = samples(&d, 200 + i as u64);
        let mean = xs.iter().sum::<f64>() / N as f64;
        let tol = 5.0 * (var / N as f64).sqrt() + 1e-9 * d.mean().abs().max(1.0);
        assert!(
            (mean - d.mean()).abs() <= tol,
            "{name}: {mean} vs {}",
            d.mean()
        );
    }
}

#[test]
fn heavy_tail_median_and_clipped_mean() {
    // Infinite variance: compare a clipped mean, which has bounded variance.
    let d = make_two_sided_pareto(1.5, 1.0, 3.7, 1.9).unwrap();
    let xs = samples(&d, 7);
    let (lo, hi) = (-20.0, 30.0);
    let clipped = xs.iter().map(|x| x.clamp(lo, hi)).sum::<f64>() / N as f64;
    let tol = 5.0 * 25.0 / (N as f64).sqrt();
    assert!((clipped - d.clamped_mean(lo, hi)).abs() <= tol);
    let at_mu = xs.iter().filter(|&&x| x <= 3.7).count() as f64 / N as f64;
    assert!((at_mu - 0.5).abs() <= band(0.5, N as f64));
}

#[test]
fn markov_tail_bound_holds_analytically() {
    for e in acceptance_matrix() {
        let d = e.distribution().unwrap();
        let (k, sigma) = (e.params.k(), e.params.sigma());
        let mu = d.mean();
        for s in [0.5, 1.0, 2.0, 4.0, 16.0, 64.0] {
            let tail = d.prob_ge(mu + s * sigma) + d.prob_le(mu - s * sigma);
            assert!(tail <= s.powf(-k) + 1e-12, "{} s={s}: {tail}", e.name);
        }
    }
}

#[test]
fn complement_symmetry() {
    for (name, d) in fixtures() {
        for g in [-64.0, -10.3, -1.0, 0.0, 0.5, 1.7, 3.7, 20.5, 64.0] {
            let ge = Query::ThresholdGe(g).success_probability(&d).unwrap();
            let le = Query::ThresholdLe(g).success_probability(&d).unwrap();
            let atom = d.prob_closed_interval(g, g);
            assert!((ge + le - 1.0 - atom).abs() < 1e-12, "{name} at {g}");
            let iv = Query::Interval {
                low: g,
                high: f64::INFINITY,
            }
            .success_probability(&d)
            .unwrap();
            assert!((iv - ge).abs() < 1e-12);
        }
    }
}

#[test]
fn aggregated_counts_match_per_sample_counts() {
    let d = make_two_sided_pareto(1.5, 1.0, 0.2, 1.9).unwrap();
    let m = 400_000u64;
    let batches = [
        Batch::Repeat(Query::ThresholdGe(0.9)),
        Batch::Repeat(Query::Interval {
            low: -0.5,
            high: 1.0,
        }),
        Batch::UniformGe {
            low: 0.2,
            high: 2.2,
        },
        Batch::UniformLe {
            low: -3.0,
            high: -1.0,
        },
    ];
    for (i, batch) in batches.iter().enumerate() {
        let p = match batch {
            Batch::Repeat(q) => q.success_probability(&d).unwrap(),
            Batch::UniformGe { low, high } => d.uniform_threshold_ge(*low, *high),
            Batch::UniformLe { low, high } => d.uniform_threshold_le(*low, *high),
        };
        let mut counts = Vec::new();
        for mode in [SamplingMode::PerSample, SamplingMode::Aggregated] {
            let mut agent = Agent::from_seed(&d, 300 + i as u64).with_mode(mode);
            let mut learner = ChaCha8Rng::seed_from_u64(400 + i as u64);
            let mut tr = Transcript::counting();
            let ones = agent.count_ones(batch, m, &mut learner, &mut tr).unwrap();
            assert_eq!(tr.total(), m);
            let freq = ones as f64 / m as f64;
            assert!(
                (freq - p).abs() <= band(p, m as f64),
                "{batch:?} {mode:?}: {freq} vs {p}"
            );
            counts.push(freq);
        }
        assert!((counts[0] - counts[1]).abs() <= 2.0 * band(p, m as f64));
    }
}

#[test]
fn region_estimates_are_unbiased() {
    let params = FamilyParams::new(2.0, 64.0, 1.0).unwrap();
    let d = gaussian(0.4, 1.0).unwrap();
    let plan = build_plan(
        &params,
        &TargetSpec::new(0.25, 0.1).unwrap(),
        AllocationProfile::Empirical,
    )
    .unwrap()
    .unwrap();
    let center = -0.9;
    let runs = 4000;
    for region in plan.regions.iter().filter(|r| r.index.abs() <= 3) {
        let n = plan.allocation(region);
        let (_, _, exact) = region_moment(&d, region, center);
        if exact.abs() < 1e-3 {
            continue;
        }
        let mut agent = Agent::from_seed(&d, 9).with_mode(SamplingMode::Aggregated);
        let mut learner = ChaCha8Rng::seed_from_u64(10);
        let mut tr = Transcript::counting();
        let xs: Vec<f64> = (0..runs)
            .map(|_| {
                estimate_region(&mut agent, region, n, center, &mut learner, &mut tr)
                    .unwrap()
                    .mu_hat
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / runs as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (runs - 1) as f64;
        let tol = 4.0 * (var / runs as f64).sqrt() + 1e-12;
        assert!(
            (mean - exact).abs() <= tol,
            "region {}: {mean} vs {exact}",
            region.index
        );
    }
}

#[test]
fn two_stage_parity_with_median_localization() {
    for e in acceptance_matrix() {
        let eps = e.params.sigma() / 4.0;
        let target = TargetSpec::new(eps, 0.2).unwrap();
        let d = e.distribution().unwrap();
        let trials = 200;
        let mut wins = [0usize; 2];
        for trial in 0..trials {
            for (slot, localizer) in [Localizer::Median, Localizer::Gray].into_iter().enumerate() {
                let mut agent = Agent::from_seed(&d, derive_seed(5, "parity", trial, 0))
                    .with_mode(SamplingMode::Aggregated);
                let mut learner = stream_rng(5, "parity", trial, 1);
                let mut tr = Transcript::counting();
                let rep = if localizer == Localizer::Gray {
                    let r = two_stage_estimate(
                        &mut agent,
                        &e.params,
                        &target,
                        AllocationProfile::Empirical,
                        &mut learner,
                        &mut tr,
                    )
                    .unwrap();
                    assert_eq!(r.rounds_of_adaptivity, 2);
                    r
                } else {
                    Estimator::new(e.params, target)
                        .run(&mut agent, &mut learner, &mut tr)
                        .unwrap()
                };
                wins[slot] += usize::from((rep.mu_hat - d.mean()).abs() <= eps);
            }
        }
        let gap = (wins[0] as f64 - wins[1] as f64).abs() / trials as f64;
        assert!(gap <= 0.05, "{}: {wins:?}", e.name);
    }
}

#[test]
fn multivariate_gaussian_l2_accuracy() {
    let params = FamilyParams::new(2.0, 16.0, 1.0).unwrap();
    let target = TargetSpec::new(0.5, 0.2).unwrap();
    let v = VectorDistribution::new(vec![
        gaussian(1.25, 1.0).unwrap(),
        gaussian(-3.5, 0.8).unwrap(),
    ])
    .unwrap();
    let trials = 200;
    let mut hits = 0;
    for trial in 0..trials {
        let mut agent = VectorAgent::new(
            &v,
            derive_seed(11, "multi", trial, 0),
            FeedbackMode::OneBitPerSample,
        )
        .with_mode(SamplingMode::Aggregated);
        let mut learner = stream_rng(11, "multi", trial, 1);
        let rep = multivariate_estimate(
            &mut agent,
            &params,
            &target,
            AllocationProfile::Empirical,
            &mut learner,
            &mut Transcript::counting(),
        )
        .unwrap();
        let l2 = rep
            .mu_hat
            .iter()
            .zip(v.mean())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        hits += usize::from(l2 <= target.eps());
    }
    assert!(hits as f64 / trials as f64 >= 0.8, "{hits}/{trials}");
}

#[test]
fn anytime_round_costs_grow_geometrically() {
    for k in [1.5, 2.0, 3.0] {
        let params = FamilyParams::new(k, 64.0, 1.0).unwrap();
        let min_ratio = if k >= 2.0 {
            4.0
        } else {
            2f64.powf(k / (k - 1.0))
        };
        let costs: Vec<u64> = (1..=7)
            .map(|tau| {
                anytime_round_plan(&params, 0.2, tau, AllocationProfile::Empirical)
                    .unwrap()
                    .total_cost()
            })
            .collect();
        // The first rounds sit at the minimum cutoff, where rounding dominates.
        for w in costs[2..].windows(2) {
            assert!(
                w[1] as f64 >= 0.95 * min_ratio * w[0] as f64,
                "k={k}: {costs:?}"
            );
        }
    }
}

#[test]
fn scale_grid_ratio_is_constant() {
    let grid = ScaleGrid::new(0.5, 64.0, 0.3, 0.1).unwrap();
    for i in 0..=7 {
        assert!((grid.sigma(i) / grid.eps(i) - 6.0 / 0.3).abs() < 1e-9);
    }
}

#[test]
fn pac_csv_is_identical_across_thread_counts() {
    let params = FamilyParams::new(2.0, 32.0, 1.0).unwrap();
    let fixture: FixtureSpec = "pair-random:eps=0.125".parse().unwrap();
    let mut cfg = ExperimentConfig::new(fixture, params, 0.25, 0.2);
    cfg.trials = 24;
    cfg.seed = 77;
    let mut outputs = Vec::new();
    for threads in [1, 3, 8] {
        cfg.threads = Some(threads);
        let summary = run_pac(&cfg).unwrap();
        let mut buf = Vec::new();
        onebit_core::harness::write_csv(&mut buf, &summary.rows).unwrap();
        outputs.push(buf);
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}
