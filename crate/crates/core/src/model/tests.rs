use super::*;
use approx::assert_relative_eq;
use proptest::prelude::*;

/// Brute-force Gram assembly: O(M P^2) direct summation of
/// conj(a_p[m]) a_q[m]; independent of the closed-form path.
fn gram_brute_force(doas: &[f64], m: usize, d0: f64) -> DMatrix<Complex<f64>> {
    let p = doas.len();
    let spacing = d0 / m as f64;
    let cols: Vec<Vec<Complex<f64>>> = doas
        .iter()
        .map(|&t| steering_vector(t, m, spacing, p).unwrap())
        .collect();
    DMatrix::from_fn(p, p, |r, c| {
        (0..m).map(|i| cols[r][i].conj() * cols[c][i]).sum()
    })
}

#[test]
fn steering_vector_broadside() {
    // sin 0 = 0: every entry is 1/sqrt(P)
    let v = steering_vector(0.0, 4, 0.5, 4).unwrap();
    for e in v {
        assert_relative_eq!(e.re, 0.5, epsilon = 1e-15);
        assert_relative_eq!(e.im, 0.0, epsilon = 1e-15);
    }
}

#[test]
fn steering_vector_endfire_alternates() {
    // theta = pi/2, d/lambda = 1/2: entry 1 is e^{-j pi} = -1
    let v = steering_vector(std::f64::consts::FRAC_PI_2, 2, 0.5, 1).unwrap();
    assert_relative_eq!(v[0].re, 1.0, epsilon = 1e-12);
    assert_relative_eq!(v[0].im, 0.0, epsilon = 1e-12);
    assert_relative_eq!(v[1].re, -1.0, epsilon = 1e-12);
    assert!(v[1].im.abs() < 1e-12);
}

#[test]
fn steering_vector_norm_identity() {
    let v = steering_vector(std::f64::consts::FRAC_PI_6, 8, 0.05, 12).unwrap();
    let norm2: f64 = v.iter().map(|e| e.norm_sqr()).sum();
    assert_relative_eq!(norm2, 8.0 / 12.0, epsilon = 1e-12);
}

#[test]
fn steering_vector_rejects_bad_arguments() {
    assert!(steering_vector(f64::NAN, 4, 0.5, 4).is_err());
    assert!(steering_vector(0.1, 0, 0.5, 4).is_err());
    assert!(steering_vector(0.1, 4, 0.0, 4).is_err());
    assert!(steering_vector(0.1, 4, 0.5, 0).is_err());
}

#[test]
fn single_direction_spectrum_is_m() {
    let s = build_steering_set(&[0.4], 32, 2.0).unwrap();
    assert_eq!(s.betas().len(), 1);
    assert_relative_eq!(s.betas()[0], 32.0, epsilon = 1e-10);
}

#[test]
fn trace_identity_half_wavelength_pair() {
    let s = build_steering_set(
        &[-std::f64::consts::FRAC_PI_4, std::f64::consts::FRAC_PI_4],
        64,
        32.0,
    )
    .unwrap();
    let trace: f64 = s.betas().iter().sum();
    assert_relative_eq!(trace, 64.0, epsilon = 1e-10);
}

#[test]
fn spectrum_matches_brute_force_gram() {
    // P=12 uniform grid, M=128, d0=4, against the O(M P^2) summation oracle
    let p = 12;
    let doas: Vec<f64> = (0..p)
        .map(|i| -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (i as f64 + 0.5) / p as f64)
        .collect();
    let s = build_steering_set(&doas, 128, 4.0).unwrap();
    let brute = gram_brute_force(&doas, 128, 4.0);
    let mut oracle: Vec<f64> = brute.symmetric_eigen().eigenvalues.iter().copied().collect();
    oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (got, want) in s.betas().iter().zip(oracle.iter()) {
        assert!(
            (got - want).abs() <= 1e-9 * want.abs().max(1.0),
            "eigenvalue mismatch: {got} vs {want}"
        );
    }
}

#[test]
fn duplicate_doas_flagged_singular_not_error() {
    let s = build_steering_set(&[0.3, 0.3, -0.5], 16, 4.0).unwrap();
    assert!(s.is_singular());
    assert!(s.betas().iter().any(|&b| b == 0.0));
    // trace survives: zero + the rest still sums to M
    let trace: f64 = s.betas().iter().sum();
    assert_relative_eq!(trace, 16.0, max_relative = 1e-9);
}

#[test]
fn more_directions_than_antennas_rejected() {
    assert!(build_steering_set(&[0.0, 0.1, 0.2], 2, 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn column_norm_and_trace_identities(
        seed in 0u64..5000,
        p in 2usize..8,
        d0 in 0.5f64..16.0,
    ) {
        let m = 8 * p;
        let doas = draw_doas(p, seed);
        let s = build_steering_set(&doas, m, d0).unwrap();
        for c in 0..p {
            let norm2: f64 = (0..m).map(|r| s.a()[(r, c)].norm_sqr()).sum();
            prop_assert!((norm2 - m as f64 / p as f64).abs() < 1e-10);
        }
        let trace: f64 = s.betas().iter().sum();
        prop_assert!((trace - m as f64).abs() < 1e-9 * m as f64);
    }
}

#[test]
fn doubling_antennas_halves_spacing() {
    let base = ScenarioConfig::unit_fading(64, 2, 4, 4.0, 10.0, 7);
    let doubled = ScenarioConfig {
        m: 128,
        ..base.clone()
    };
    assert_relative_eq!(base.spacing_ratio(), 2.0 * doubled.spacing_ratio());
    assert_relative_eq!(doubled.spacing_ratio(), 4.0 / 128.0);
}

#[test]
fn unit_mode_returns_ones_without_randomness() {
    let cfg = ScenarioConfig::unit_fading(16, 6, 8, 4.0, 10.0, 3);
    let mut rng = streams::rng(3, streams::PROFILE);
    let profile = sample_large_scale(&cfg, &mut rng).unwrap();
    assert_eq!(profile.zetas(), &[1.0; 6][..]);
    // the generator was not touched: next draw equals a fresh stream's first
    let next: u64 = rng.random();
    let fresh: u64 = streams::rng(3, streams::PROFILE).random();
    assert_eq!(next, fresh);
}

#[test]
fn zero_exponents_give_unit_gains() {
    let mut cfg = ScenarioConfig::unit_fading(16, 4, 8, 4.0, 10.0, 3);
    cfg.fading = FadingMode::PathlossShadowing;
    cfg.cell = CellGeometry {
        pathloss_exponent: 0.0,
        shadowing_sigma_db: 0.0,
        ..CellGeometry::default()
    };
    let mut rng = streams::rng(3, streams::PROFILE);
    let profile = sample_large_scale(&cfg, &mut rng).unwrap();
    for &z in profile.zetas() {
        assert_relative_eq!(z, 1.0, epsilon = 1e-12);
    }
    assert!(profile.distances().is_some());
}

#[test]
fn gain_at_reference_distance_is_pure_shadowing() {
    let cell = CellGeometry::default();
    assert_relative_eq!(large_scale_gain(cell.r_min_m, 6.0, &cell), 10f64.powf(0.6));
    assert_relative_eq!(large_scale_gain(cell.r_min_m, 0.0, &cell), 1.0);
}

#[test]
fn shadowing_generator_is_zero_mean_in_db() {
    // v = 0 removes the distance term, isolating the log-normal shadowing:
    // the dB-domain sample mean must vanish (law of large numbers).
    let mut cfg = ScenarioConfig::unit_fading(16, 4, 8, 4.0, 10.0, 11);
    cfg.fading = FadingMode::PathlossShadowing;
    cfg.cell = CellGeometry {
        pathloss_exponent: 0.0,
        shadowing_sigma_db: 8.0,
        ..CellGeometry::default()
    };
    let mut rng = streams::rng(11, streams::PROFILE);
    let draws = 100_000 / cfg.k;
    let mut sum_db = 0.0;
    for _ in 0..draws {
        let profile = sample_large_scale(&cfg, &mut rng).unwrap();
        sum_db += profile
            .zetas()
            .iter()
            .map(|z| 10.0 * z.log10())
            .sum::<f64>();
    }
    let mean_db = sum_db / (draws * cfg.k) as f64;
    assert!(mean_db.abs() < 0.1, "mean shadowing {mean_db} dB != 0");
}

#[test]
fn invalid_cell_geometry_rejected() {
    let mut cfg = ScenarioConfig::unit_fading(16, 4, 8, 4.0, 10.0, 3);
    cfg.fading = FadingMode::PathlossShadowing;
    cfg.cell.r_min_m = 2000.0;
    assert!(sample_large_scale(&cfg, &mut streams::rng(3, 0)).is_err());
}

#[test]
fn constraint_validation() {
    let mut cfg = ScenarioConfig::unit_fading(16, 4, 8, 4.0, 10.0, 3);
    assert!(cfg.validate().is_ok());
    cfg.k = 10; // K > P
    assert!(cfg.validate().is_err());
    cfg.k = 4;
    cfg.p = 20; // P > M
    assert!(cfg.validate().is_err());
    cfg.p = 8;
    cfg.doas = vec![0.0; 8];
    cfg.doas[0] = 2.0; // outside [-pi/2, pi/2]
    assert!(cfg.validate().is_err());
}

#[test]
fn forced_zero_small_scale_gives_zero_channel() {
    let s = build_steering_set(&[0.1, -0.4, 0.9], 8, 2.0).unwrap();
    let profile = LargeScaleProfile::unit(2);
    let h = DMatrix::<Complex<f64>>::zeros(3, 2);
    let ch = assemble_channel(&s, &profile, h).unwrap();
    assert!(ch.g().iter().all(|e| e.norm_sqr() == 0.0));
}

#[test]
fn channel_recomputable_from_parts() {
    let s = build_steering_set(&[0.1, -0.4, 0.9, 1.2], 16, 4.0).unwrap();
    let profile = LargeScaleProfile {
        zetas: vec![0.5, 2.0],
        distances: None,
    };
    let mut rng = streams::rng(5, streams::trial(0, 0));
    let ch = sample_channel(&s, &profile, &mut rng).unwrap();
    let mut expect = s.a() * ch.h();
    for (k, &z) in profile.zetas().iter().enumerate() {
        for r in 0..expect.nrows() {
            expect[(r, k)] *= Complex::new(z.sqrt(), 0.0);
        }
    }
    let err: f64 = (ch.g() - expect).iter().map(|e| e.norm_sqr()).sum();
    assert!(err == 0.0, "G must be assembled exactly as A H D^(1/2)");
}

#[test]
fn channel_moments_match_spectrum() {
    // E||g||^2 = sum beta = M and E|g1^H g2|^2 = sum beta^2 (unit fading)
    let doas = draw_doas(4, 99);
    let s = build_steering_set(&doas, 16, 2.0).unwrap();
    let profile = LargeScaleProfile::unit(2);
    let draws = 100_000;
    let mut norm2 = 0.0;
    let mut cross = 0.0;
    let mut rng = streams::rng(21, 0);
    for _ in 0..draws {
        let ch = sample_channel(&s, &profile, &mut rng).unwrap();
        let g = ch.g();
        let g1 = g.column(0);
        let g2 = g.column(1);
        norm2 += g1.iter().map(|e| e.norm_sqr()).sum::<f64>();
        let dot: Complex<f64> = g1.iter().zip(g2.iter()).map(|(a, b)| a.conj() * b).sum();
        cross += dot.norm_sqr();
    }
    norm2 /= draws as f64;
    cross /= draws as f64;
    let sum_b2: f64 = s.betas().iter().map(|b| b * b).sum();
    assert!(
        (norm2 - 16.0).abs() < 0.02 * 16.0,
        "E||g||^2 = {norm2}, want 16"
    );
    assert!(
        (cross - sum_b2).abs() < 0.03 * sum_b2,
        "E|g1^H g2|^2 = {cross}, want {sum_b2}"
    );
}

#[test]
fn trial_streams_are_deterministic_and_disjoint() {
    let a: u64 = streams::rng(42, streams::trial(7, 0)).random();
    let b: u64 = streams::rng(42, streams::trial(7, 0)).random();
    assert_eq!(a, b);
    let c: u64 = streams::rng(42, streams::trial(8, 0)).random();
    let d: u64 = streams::rng(42, streams::trial(7, 1)).random();
    assert_ne!(a, c);
    assert_ne!(a, d);
}
