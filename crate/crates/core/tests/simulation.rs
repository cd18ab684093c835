use cowcka_core::montecarlo::{empirical_rate_inputs, PairCategory};
use cowcka_core::{
    compare_with_analytic, conference_key_rate, empirical_key_rate, folding_equivalence_stats,
    run_protocol, ExperimentParams, FreeParams,
};

fn desk_scale() -> (FreeParams, ExperimentParams) {
    let ep = ExperimentParams::baseline()
        .with_dark_count_rate(1e-4)
        .unwrap()
        .with_distance(50.0)
        .unwrap()
        .with_time_misalignment(0.001)
        .unwrap()
        .with_interference_misalignment(0.01)
        .unwrap();
    (FreeParams::new(0.5, 0.2).unwrap(), ep)
}

#[test]
fn desk_scale_estimates_within_three_sigma() {
    let (fp, ep) = desk_scale();
    let stats = run_protocol(&fp, &ep, 10_000_000, 2024).unwrap();
    for c in compare_with_analytic(&stats, &ep).unwrap() {
        println!(
            "{:<10} emp {:.6e} ± {:.2e}  analytic {:.6e}  z {:+.2}",
            c.quantity, c.empirical, c.std_error, c.analytic, c.z_score
        );
        assert!(c.within_3_sigma, "{c:?}");
    }
}

#[test]
fn empirical_rate_tracks_analytic() {
    let (fp, ep) = desk_scale();
    let stats = run_protocol(&fp, &ep, 10_000_000, 99).unwrap();
    let analytic = conference_key_rate(&fp, &ep);
    let empirical = empirical_rate_inputs(&stats, &ep).unwrap();
    // Both are negative at t = 0.5, so compare before clamping.
    let rel =
        (empirical.unclamped() - analytic.rate_unclamped).abs() / analytic.rate_unclamped.abs();
    assert!(rel < 0.10, "relative difference {rel}");
    assert_eq!(empirical_key_rate(&stats, &ep).unwrap(), analytic.rate);
}

#[test]
fn standard_errors_shrink_like_inverse_sqrt_n() {
    let (fp, ep) = desk_scale();
    let sizes = [100_000u64, 1_000_000, 10_000_000];
    let errs: Vec<_> = sizes
        .iter()
        .map(|&n| run_protocol(&fp, &ep, n, 11).unwrap().estimates().unwrap())
        .collect();
    let pick: [fn(&cowcka_core::montecarlo::EmpiricalEstimates) -> f64; 4] = [
        |e| e.q_0a.std_error,
        |e| e.q_aa.std_error,
        |e| e.visibility.std_error,
        |e| e.e_mu.std_error,
    ];
    for f in pick {
        for w in errs.windows(2) {
            let ratio = f(&w[0]) / f(&w[1]);
            assert!(
                (10f64.sqrt() * 0.8..10f64.sqrt() * 1.25).contains(&ratio),
                "ratio {ratio}"
            );
        }
    }
}

#[test]
fn category_frequencies_follow_send_probability() {
    let (_, ep) = desk_scale();
    let fp = FreeParams::new(0.2, 0.2).unwrap();
    let n = 2_000_000u64;
    let stats = run_protocol(&fp, &ep, n, 3).unwrap();
    let expect = [0.64, 0.16, 0.16, 0.04];
    for (c, p) in PairCategory::ALL.iter().zip(expect) {
        let got = stats.category(*c).sent as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((got - p).abs() < 4.0 * se, "{c:?} {got}");
    }
}

#[test]
fn folding_equivalence_at_desk_scale() {
    let (fp, ep) = desk_scale();
    let cmp = folding_equivalence_stats(&fp, &ep, 10_000_000, 7).unwrap();
    assert!(cmp.within_3_sigma, "{cmp:?}");
}

#[test]
fn folding_with_large_interference_misalignment() {
    let ep = ExperimentParams::baseline()
        .with_dark_count_rate(0.0)
        .unwrap()
        .with_interference_misalignment(0.05)
        .unwrap()
        .with_distance(20.0)
        .unwrap();
    let fp = FreeParams::new(0.5, 0.3).unwrap();
    let cmp = folding_equivalence_stats(&fp, &ep, 2_000_000, 8).unwrap();
    for v in [cmp.cka.visibility, cmp.cow.visibility] {
        assert!((v.value - 0.90).abs() <= 3.0 * v.std_error, "{v:?}");
    }
    assert!(cmp.within_3_sigma);
}
