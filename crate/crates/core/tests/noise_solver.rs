use sheclt::noise::*;
use sheclt::occupation::*;
use sheclt::solver::*;
use sheclt::spectral::CovarianceMeasure;

fn slices(weights: &SpectralWeights, dt: f64, count: u64, seed: u64) -> Vec<NoiseSlice> {
    (0..count)
        .map(|k| sample_noise_slice(weights, dt, RngStream::new(seed, 0, 0, k)))
        .collect()
}

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn dirac_cells_are_independent_with_variance_dt_over_dx() {
    let grid = Grid::new(1, 8.0, 64, 0.005).unwrap();
    let f = CovarianceMeasure::dirac(1, 1.0).unwrap();
    let w = spectral_weights(&grid, &f).unwrap();
    let cov = empirical_noise_covariance(&grid, &slices(&w, grid.dt, 400, 1), 3).unwrap();
    let expected = grid.dt / grid.dx;
    assert!((cov.spatial[0] - expected).abs() < 3.0 * cov.spatial_se[0], "{cov:?}");
    for lag in 1..=3 {
        assert!(cov.spatial[lag].abs() < 4.0 * cov.spatial_se[lag]);
    }
    assert!(!cov.degenerate);
}

#[test]
fn gaussian_noise_matches_lattice_covariance() {
    let grid = Grid::new(1, 16.0, 128, 0.005).unwrap();
    let f = CovarianceMeasure::gaussian(1, 1.0, 0.5).unwrap();
    let w = spectral_weights(&grid, &f).unwrap();
    let target = w.grid_covariance();
    let cov = empirical_noise_covariance(&grid, &slices(&w, grid.dt, 400, 2), 4).unwrap();
    for lag in 0..=4 {
        let expected = grid.dt * target[lag];
        assert!(
            (cov.spatial[lag] - expected).abs() < 4.0 * cov.spatial_se[lag],
            "lag {lag}: {} vs {expected}",
            cov.spatial[lag]
        );
        // White in time.
        assert!(cov.cross_time[lag].abs() < 4.0 * cov.cross_time_se[lag]);
    }
    // Positive lag-1 correlation for a smooth kernel.
    assert!(cov.spatial[1] > 0.3 * cov.spatial[0]);
}

#[test]
fn noise_is_stationary_across_the_grid() {
    let grid = Grid::new(1, 8.0, 64, 0.005).unwrap();
    let f = CovarianceMeasure::exponential(1, 1.0, 2.0).unwrap();
    let w = spectral_weights(&grid, &f).unwrap();
    let s = slices(&w, grid.dt, 600, 3);
    let var_at = |i: usize| {
        let xs: Vec<f64> = s.iter().map(|v| v.values[i] * v.values[i]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt();
        (m, sd / (xs.len() as f64).sqrt())
    };
    let (a, sa) = var_at(0);
    let (b, sb) = var_at(37);
    assert!((a - b).abs() < 4.0 * (sa * sa + sb * sb).sqrt(), "{a} vs {b}");
}

#[test]
fn slices_do_not_depend_on_thread_count() {
    let grid = Grid::new(2, 4.0, 16, 0.01).unwrap();
    let f = CovarianceMeasure::gaussian(2, 1.0, 1.0).unwrap();
    let w = spectral_weights(&grid, &f).unwrap();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| solve_replicas(&grid, &SigmaFunction::linear(1.0).unwrap(), &f, 0.1, 9, 1, 0..6).unwrap())
    };
    let (one, three) = (run(1), run(3));
    for (a, b) in one.iter().zip(&three) {
        assert_eq!(a.values, b.values);
    }
    assert_eq!(
        sample_noise_slice(&w, 0.01, RngStream::new(4, 0, 0, 0)).values,
        sample_noise_slice(&w, 0.01, RngStream::new(4, 0, 0, 0)).values
    );
}

#[test]
fn solution_keeps_mean_one() {
    let grid = Grid::sized_for(1, 0.125, 4.0, 0.5, None).unwrap();
    let f = CovarianceMeasure::dirac(1, 1.0).unwrap();
    let sigma = SigmaFunction::linear(1.0).unwrap();
    let fields = solve_replicas(&grid, &sigma, &f, 0.5, 5, 1, 0..300).unwrap();
    let stats = marginal_stats(&fields, &LipFunction::Identity, 0).unwrap();
    assert!((stats.mean - 1.0).abs() < 4.0 * stats.mean_se, "{stats:?}");
}

#[test]
fn lag_covariance_matches_integrated_heat_kernel() {
    // σ ≡ 1, white noise: Cov u(1,0), u(1,x) = ∫₀¹ p_{2s}(x) ds.
    let grid = Grid::sized_for(1, 0.125, 6.0, 1.0, None).unwrap();
    let f = CovarianceMeasure::dirac(1, 1.0).unwrap();
    let sigma = SigmaFunction::constant(1.0).unwrap();
    let fields = solve_replicas(&grid, &sigma, &f, 1.0, 6, 1, 0..400).unwrap();
    let stats = marginal_stats(&fields, &LipFunction::Identity, 8).unwrap();
    let exact = |x: f64| {
        let opts = sheclt::quad::QuadOptions::with_rel_tol(1e-10);
        sheclt::quad::integrate(|s| sheclt::spectral::heat_kernel(2.0 * s, &[x]), 0.0, 1.0, opts).value
    };
    for lag in [0usize, 4, 8] {
        let e = exact(lag as f64 * grid.dx);
        let got = stats.lag_covariance[lag];
        assert!((got - e).abs() < 0.1 * e, "lag {lag}: {got} vs {e}");
    }
}

#[test]
fn picard_agrees_with_euler_on_the_same_noise() {
    let grid = Grid::sized_for(1, 1.0 / 16.0, 4.0, 0.25, None).unwrap();
    let f = CovarianceMeasure::dirac(1, 1.0).unwrap();
    let sigma = SigmaFunction::linear(1.0).unwrap();
    let euler = solve(&grid, &sigma, &f, 0.25, 12, 0).unwrap();
    let (picard, diffs) = picard_iterates(&grid, &sigma, &f, 0.25, 12, 0, 8).unwrap();
    assert!(rel_l2(&picard.values, &euler.values) < 0.05);
    assert!(diffs.last().unwrap() < &diffs[0]);
}

fn euler_picard_gap(f: &CovarianceMeasure, dx: f64) -> f64 {
    let grid = Grid::sized_for(1, dx, 4.0, 0.25, None).unwrap();
    let sigma = SigmaFunction::linear(1.0).unwrap();
    let mut total = 0.0;
    for r in 0..4 {
        let euler = solve(&grid, &sigma, f, 0.25, 13, r).unwrap();
        let picard = picard_solve(&grid, &sigma, f, 0.25, 13, r, 12).unwrap();
        total += rel_l2(&euler.values, &picard.values);
    }
    total / 4.0
}

#[test]
fn scheme_gap_at_least_halves_with_dx_for_smooth_noise() {
    for f in [
        CovarianceMeasure::gaussian(1, 1.0, 0.5).unwrap(),
        CovarianceMeasure::exponential(1, 1.0, 2.0).unwrap(),
    ] {
        let coarse = euler_picard_gap(&f, 0.125);
        let fine = euler_picard_gap(&f, 0.0625);
        assert!(fine / coarse <= 0.65, "{}: {coarse} -> {fine}", f.name());
    }
}

#[test]
fn bt_estimate_for_constant_sigma_is_mass_times_t() {
    let grid = Grid::sized_for(1, 0.25, 16.0, 1.0, None).unwrap();
    let f = CovarianceMeasure::dirac(1, 1.0).unwrap();
    let sigma = SigmaFunction::constant(1.0).unwrap();
    let fields = solve_replicas(&grid, &sigma, &f, 1.0, 8, 1, 0..200).unwrap();
    let g = LipFunction::Identity;
    let est = estimate_bt(&fields, None, &g, &g, default_cutoff(1.0, &f)).unwrap();
    let exact = exact_bt_constant_sigma(1.0, 1.0, &f);
    assert!((est.value - exact).abs() < 0.1 * exact, "{est:?}");
}
