use neural_oscillator::excitation::{ExcitationSampler, WvSpectrum};
use neural_oscillator::oracles::{integrate, variance_by_quadrature, ModalModel};
use neural_oscillator::structsim::{extreme_process, BoucWen, BoucWenConfig, Outputs};
use neural_oscillator::{metrics, Trajectory};
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn linear() -> BoucWenConfig {
    BoucWenConfig { lambda: 1.0, ..BoucWenConfig::default() }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[test]
fn linear_limit_matches_modal_closed_form_under_sine() {
    let cfg = linear();
    let sys = BoucWen::<f64>::new(cfg.clone()).unwrap();
    let modal = ModalModel::new(&cfg);
    let (amp, w, dt, steps) = (3.0, 2.0 * std::f64::consts::PI * 1.5, 1e-3, 10_001);
    let x = sys.simulate_with(&|t: f64| amp * (w * t).sin(), dt, 0.0, steps, Outputs::Displacement).unwrap();
    let reference = modal.sine_response(amp, w, dt, steps).unwrap();
    let err: Vec<f64> = x.values().iter().zip(reference.values()).map(|(a, b)| a - b).collect();
    let rel = max_abs(&err) / max_abs(reference.values());
    assert!(rel < 1e-6, "relative deviation {rel}");
}

#[test]
fn linear_limit_matches_exact_piecewise_linear_integration() {
    let cfg = linear();
    let sys = BoucWen::<f64>::new(cfg.clone()).unwrap();
    let modal = ModalModel::new(&cfg);
    let sampler = ExcitationSampler::new(WvSpectrum::default(), 0.005, 1001).unwrap();
    let u = sampler.sample(17);
    let x = sys.simulate(&u, Outputs::Displacement).unwrap();
    let reference = modal.piecewise_linear_response(&u).unwrap();
    let err: Vec<f64> = x.values().iter().zip(reference.values()).map(|(a, b)| a - b).collect();
    let rel = max_abs(&err) / max_abs(reference.values());
    assert!(rel < 1e-4, "relative deviation {rel}");
}

#[test]
fn hysteretic_variable_saturates() {
    let cfg = BoucWenConfig::default();
    let z_ult = cfg.z_ultimate();
    let sys = BoucWen::<f64>::new(cfg).unwrap();
    let n = sys.n_dof();
    let sampler = ExcitationSampler::new(WvSpectrum::default(), 0.005, 2001).unwrap();
    let mut peak = 0.0f64;
    for seed in 0..4 {
        let full = sys.simulate(&sampler.sample(seed), Outputs::Full).unwrap();
        for c in 2 * n..3 * n {
            peak = peak.max(max_abs(full.channel(c)));
        }
    }
    assert!(peak <= z_ult * (1.0 + 1e-6), "peak |z| {peak} above {z_ult}");
    assert!(peak > 0.9 * z_ult, "excitation too weak to probe saturation: {peak}");
}

#[test]
fn free_vibration_energy_never_increases() {
    let cfg = linear();
    let sys = BoucWen::<f64>::new(cfg).unwrap();
    let mats = sys.matrices().clone();
    let n = sys.n_dof();
    let forcing = |t: f64| if t < 1.0 { 4.0 * (7.0 * t).sin() } else { 0.0 };
    let full = sys.simulate_with(&forcing, 1e-3, 0.0, 6001, Outputs::Full).unwrap();
    let energy = |i: usize| {
        let x: Vec<f64> = (0..n).map(|c| full.get(c, i)).collect();
        let v: Vec<f64> = (0..n).map(|c| full.get(n + c, i)).collect();
        let mut e = 0.0;
        for a in 0..n {
            for b in 0..n {
                e += 0.5 * (v[a] * mats.mass[(a, b)] * v[b] + x[a] * mats.stiffness[(a, b)] * x[b]);
            }
        }
        e
    };
    let start = 1001;
    let mut prev = energy(start);
    assert!(prev > 0.0);
    for i in start + 1..6001 {
        let e = energy(i);
        assert!(e <= prev * (1.0 + 1e-9), "energy grew at step {i}: {prev} -> {e}");
        prev = e;
    }
    assert!(prev < 0.5 * energy(start));
}

#[test]
fn simulation_is_deterministic() {
    let sys = BoucWen::<f64>::new(BoucWenConfig::default()).unwrap();
    let sampler = ExcitationSampler::new(WvSpectrum::default(), 0.01, 401).unwrap();
    let u = sampler.sample(5);
    let a = sys.simulate(&u, Outputs::Full).unwrap();
    let b = sys.simulate(&sampler.sample(5), Outputs::Full).unwrap();
    assert_eq!(a.values(), b.values());
}

#[test]
fn f32_simulation_tracks_f64() {
    let sampler = ExcitationSampler::new(WvSpectrum::default(), 0.01, 301).unwrap();
    let u = sampler.sample(2);
    let x64 = BoucWen::<f64>::new(BoucWenConfig::default()).unwrap().simulate(&u, Outputs::Displacement).unwrap();
    let x32 = BoucWen::<f32>::new(BoucWenConfig::default())
        .unwrap()
        .simulate(&u.cast::<f32>(), Outputs::Displacement)
        .unwrap();
    let scale = max_abs(x64.values());
    let dev = x64.values().iter().zip(x32.values()).fold(0.0f64, |m, (a, b)| m.max((a - *b as f64).abs()));
    assert!(dev < 1e-3 * scale, "{dev} vs scale {scale}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn linear_limit_is_homogeneous(c in -5.0f64..5.0, seed in 0u64..1000) {
        let sys = BoucWen::<f64>::new(linear()).unwrap();
        let sampler = ExcitationSampler::new(WvSpectrum::default(), 0.01, 201).unwrap();
        let u = sampler.sample(seed);
        let x = sys.simulate(&u, Outputs::Displacement).unwrap();
        let xc = sys.simulate(&u.map(|v| c * v).unwrap(), Outputs::Displacement).unwrap();
        let scale = max_abs(x.values()).max(1e-300);
        for (a, b) in x.values().iter().zip(xc.values()) {
            prop_assert!((c * a - b).abs() <= 1e-9 * scale * c.abs().max(1.0));
        }
    }

    #[test]
    fn extreme_process_is_monotone_and_dominates(seed in 0u64..1000) {
        let sys = BoucWen::<f64>::new(BoucWenConfig::default()).unwrap();
        let sampler = ExcitationSampler::new(WvSpectrum::default(), 0.01, 201).unwrap();
        let x = sys.simulate(&sampler.sample(seed), Outputs::Displacement).unwrap();
        let e = extreme_process(&x, 4).unwrap();
        let ch = x.channel(4);
        for i in 0..e.steps() {
            prop_assert!(e.get(0, i) >= ch[i].abs());
            if i > 0 { prop_assert!(e.get(0, i) >= e.get(0, i - 1)); }
        }
    }
}

// --- excitation ------------------------------------------------------------------

#[test]
fn discrete_variance_matches_quadrature() {
    let spec = WvSpectrum::default();
    let df = spec.f_max / spec.n_freq as f64;
    for t in [0.5, 1.0, 2.0, 5.0, 10.0] {
        let discrete: f64 = (0..spec.n_freq).map(|k| spec.value(t, (k as f64 + 0.5) * df) * df).sum();
        let band = integrate(&|f| spec.value(t, f), 0.0, spec.f_max, 1e-10);
        assert!((discrete - band).abs() / band < 1e-6, "t = {t}: {discrete} vs {band}");
        // The tail above f_max is what separates the band from the full variance.
        let exact = variance_by_quadrature(&spec, t);
        assert!((discrete - exact).abs() / exact < 1e-5, "t = {t}: {discrete} vs {exact}");
    }
}

/// Sample variances across a 4000-member ensemble.
fn ensemble_stats(dt: f64, steps: usize) -> (Vec<Trajectory<f64>>, Vec<f64>) {
    let sampler = ExcitationSampler::new(WvSpectrum::default(), dt, steps).unwrap();
    let ens = sampler.sample_many(123, 0..4000);
    let var = (0..steps)
        .map(|i| ens.iter().map(|u| u.get(0, i).powi(2)).sum::<f64>() / ens.len() as f64)
        .collect();
    (ens, var)
}

#[test]
fn ensemble_variance_follows_the_envelope() {
    let spec = WvSpectrum::default();
    let (_, var) = ensemble_stats(0.05, 101);
    for i in [10usize, 20, 40, 60, 100] {
        let t = i as f64 * 0.05;
        let exact = spec.variance(t).unwrap();
        // Four standard errors of a Gaussian variance estimate.
        let tol = 4.0 * (2.0f64 / 4000.0).sqrt();
        assert!((var[i] / exact - 1.0).abs() < tol, "t = {t}: {} vs {exact}", var[i]);
    }
    // The envelope A·t^{1/2}·e^{−ct} peaks at t = 1/(2c).
    let coarse: Vec<usize> = (1..=10).map(|k| k * 10).collect();
    let argmax = coarse.iter().copied().max_by(|a, b| var[*a].total_cmp(&var[*b])).unwrap();
    let t_star = 0.5 / spec.decay;
    assert!((argmax as f64 * 0.05 - t_star).abs() <= 0.5, "peak at {}", argmax as f64 * 0.05);
}

#[test]
fn marginals_are_gaussian() {
    let spec = WvSpectrum::default();
    let (ens, _) = ensemble_stats(0.05, 41);
    let sd = spec.variance(2.0).unwrap().sqrt();
    let x: Vec<f64> = ens.iter().map(|u| u.get(0, 40) / sd).collect();
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let skew = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n / m2.powf(1.5);
    let kurt = x.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n / (m2 * m2);
    assert!(mean.abs() < 4.0 / n.sqrt());
    assert!(skew.abs() < 4.0 * (6.0 / n).sqrt(), "skewness {skew}");
    assert!((kurt - 3.0).abs() < 4.0 * (24.0 / n).sqrt(), "kurtosis {kurt}");

    let cdf = metrics::EmpiricalCdf::new(&x).unwrap();
    let normal = Normal::standard();
    let d = cdf.sorted().iter().enumerate().fold(0.0f64, |m, (i, v)| {
        let f = normal.cdf(*v);
        m.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    });
    // 1% critical value of the one-sample KS statistic.
    assert!(d < 1.63 / n.sqrt(), "KS distance {d}");
}

#[test]
fn sample_seeds_are_reproducible_and_distinct() {
    let sampler = ExcitationSampler::new(WvSpectrum::default(), 0.02, 101).unwrap();
    let a = sampler.sample_many(9, 0..8);
    let b = sampler.sample_many(9, 4..8);
    assert_eq!(a[4..].to_vec(), b);
    assert_ne!(a[0].values(), a[1].values());
    assert!(ExcitationSampler::new(WvSpectrum::default(), 0.1, 10).is_err());
}
