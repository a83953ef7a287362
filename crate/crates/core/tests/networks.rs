use neural_oscillator::oracles::finite_difference_check;
use neural_oscillator::rng::CounterRng;
use neural_oscillator::training::Sample;
use neural_oscillator::{Activation, Dims, GammaInputs, Mlp, Mlp32, Oscillator, ParamGrads, Trajectory};
use proptest::prelude::*;

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn activation(prelu: bool) -> Activation<f64> {
    if prelu {
        Activation::prelu_default()
    } else {
        Activation::Relu
    }
}

fn randomize_biases(m: &mut Mlp, seed: u64, scale: f64) {
    let mut rng = CounterRng::new(seed);
    for l in m.layers_mut() {
        for b in l.bias.iter_mut() {
            *b = scale * (2.0 * rng.uniform() - 1.0);
        }
    }
}

proptest! {
    #[test]
    fn network_lipschitz_constant_bounds_l1_increments(
        seed in 0u64..10_000,
        hidden in prop::collection::vec(1usize..12, 0..3),
        prelu in any::<bool>(),
        x in prop::collection::vec(-3.0f64..3.0, 4),
        y in prop::collection::vec(-3.0f64..3.0, 4),
    ) {
        let mut layout = vec![4];
        layout.extend(&hidden);
        layout.push(3);
        let mut m = Mlp::init(seed, &layout, activation(prelu)).unwrap();
        randomize_biases(&mut m, seed ^ 7, 0.5);
        let fx = m.eval(&x).unwrap();
        let fy = m.eval(&y).unwrap();
        let d_out: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
        let d_in: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let lip = m.lipschitz();
        prop_assert!(l1(&d_out) <= lip.network * l1(&d_in) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn l1_norm_is_homogeneous_in_weights(seed in 0u64..10_000, c in -4.0f64..4.0) {
        let mut m = Mlp::init(seed, &[3, 5, 2], Activation::Relu).unwrap();
        randomize_biases(&mut m, seed, 1.0);
        let base = m.l1_norm();
        for l in m.layers_mut() {
            for v in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *v *= c;
            }
        }
        prop_assert!((m.l1_norm() - c.abs() * base).abs() <= 1e-12 * base.max(1.0));
    }

    #[test]
    fn vjp_matches_central_differences(seed in 0u64..10_000, prelu in any::<bool>()) {
        let mut m = Mlp::init(seed, &[3, 7, 6, 2], activation(prelu)).unwrap();
        randomize_biases(&mut m, seed + 1, 0.3);
        let mut rng = CounterRng::new(seed + 2);
        let x: Vec<f64> = (0..3).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let y_bar = [0.7, -1.3];
        let (_, cache) = m.forward(&x).unwrap();
        let (x_bar, _) = m.vjp(&cache, &y_bar).unwrap();
        let h = 1e-6;
        let obj = |x: &[f64]| { let y = m.eval(x).unwrap(); y[0] * y_bar[0] + y[1] * y_bar[1] };
        for i in 0..3 {
            let mut xp = x.clone(); xp[i] += h;
            let mut xm = x.clone(); xm[i] -= h;
            let fd = (obj(&xp) - obj(&xm)) / (2.0 * h);
            // Skip probes that cross a kink.
            let sig = |z: &[f64]| m.forward(z).unwrap().1.tape().iter().map(|v| *v > 0.0).collect::<Vec<_>>();
            if sig(&xp) != sig(&x) || sig(&xm) != sig(&x) { continue; }
            prop_assert!((fd - x_bar[i]).abs() <= 1e-6 * fd.abs().max(1.0), "{fd} vs {}", x_bar[i]);
        }
    }
}

#[test]
fn subgradient_of_l1_norm_is_the_sign_pattern() {
    let mut m = Mlp::init(5, &[2, 3, 1], Activation::prelu_default()).unwrap();
    randomize_biases(&mut m, 5, 1.0);
    let g: ParamGrads<f64> = m.l1_subgradient();
    let flat_p: Vec<f64> = m.blocks().concat();
    let flat_g: Vec<f64> = g.iter().copied().collect();
    assert_eq!(flat_p.len(), flat_g.len());
    // The PReLU slope is not part of the norm.
    let n = flat_p.len() - 1;
    for (p, s) in flat_p[..n].iter().zip(&flat_g[..n]) {
        assert_eq!(*s, p.signum() * f64::from(*p != 0.0));
    }
    assert_eq!(flat_g[n], 0.0);
    let dot: f64 = flat_p[..n].iter().zip(&flat_g[..n]).map(|(a, b)| a * b).sum();
    assert!((dot - m.l1_norm()).abs() < 1e-12);
}

#[test]
fn network_checkpoint_round_trips_bit_exactly() {
    let mut m = Mlp::init(11, &[4, 9, 3], Activation::prelu_default()).unwrap();
    randomize_biases(&mut m, 11, 1e-3);
    let mut buf = Vec::new();
    m.write_checkpoint(&mut buf, &[11, 12]).unwrap();
    let (back, header) = Mlp::read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back, m);
    assert_eq!(header.seed_lineage, vec![11, 12]);
    assert_eq!(header.layout, vec![4, 9, 3]);
    assert!(Mlp::read_checkpoint(&buf[..buf.len() - 3]).is_err());
}

#[test]
fn f32_instantiation_tracks_f64() {
    let m = Mlp::init(2, &[3, 16, 2], Activation::Relu).unwrap();
    let m32: Mlp32 = m.cast();
    let x = [0.3, -0.2, 0.9];
    let y = m.eval(&x).unwrap();
    let y32 = m32.eval(&[0.3f32, -0.2, 0.9]).unwrap();
    for (a, b) in y.iter().zip(&y32) {
        assert!((a - *b as f64).abs() < 1e-5);
    }
}

// --- oscillator ----------------------------------------------------------------

fn model(seed: u64, dims: Dims, prelu: bool) -> Oscillator {
    let mut m = Oscillator::init(seed, dims, &[8], &[6], activation(prelu), GammaInputs::default()).unwrap();
    randomize_biases(&mut m.gamma, seed + 100, 0.2);
    randomize_biases(&mut m.pi, seed + 200, 0.2);
    m
}

fn smooth_input(seed: u64, dt: f64, steps: usize, amp: f64) -> Trajectory<f64> {
    let mut rng = CounterRng::new(seed);
    let (w1, w2, ph) = (1.0 + 4.0 * rng.uniform(), 0.5 + 2.0 * rng.uniform(), 6.0 * rng.uniform());
    Trajectory::from_fn(dt, 0.0, 1, steps, |_, t| amp * (0.6 * (w1 * t + ph).sin() + 0.4 * (w2 * t).cos())).unwrap()
}

#[test]
fn state_bound_holds_over_random_trials() {
    let dims = Dims { p: 1, q: 2, r: 3 };
    for trial in 0..100u64 {
        let m = model(trial, dims, trial % 2 == 0);
        let u: Vec<_> = (0..3).map(|k| smooth_input(trial * 10 + k, 0.01, 301, 1.5)).collect();
        let rep = m.verify_state_bound(&u, 1.5).unwrap();
        assert!(rep.satisfied, "trial {trial}: {} > {}", rep.max_observed, rep.bound);
    }
}

#[test]
fn read_out_is_causal() {
    let dims = Dims { p: 1, q: 1, r: 2 };
    let m = model(4, dims, false);
    let u = smooth_input(1, 0.01, 200, 1.0);
    let y = m.predict(&u).unwrap();
    let mut v = u.values().to_vec();
    for x in &mut v[120..] {
        *x += 5.0;
    }
    let u2 = Trajectory::single(0.01, 0.0, v).unwrap();
    let y2 = m.predict(&u2).unwrap();
    for i in 0..120 {
        assert_eq!(y.get(0, i), y2.get(0, i), "step {i}");
    }
    assert_ne!(y.get(0, 199), y2.get(0, 199));
}

#[test]
fn heun_converges_at_second_order() {
    // The vector field is only piecewise smooth, so the order is estimated
    // from two successive halvings rather than asserted exactly.
    let dims = Dims { p: 1, q: 1, r: 2 };
    let m = model(9, dims, true);
    let horizon = 2.0;
    let run = |dt: f64| {
        let steps = (horizon / dt).round() as usize + 1;
        let u = Trajectory::from_fn(dt, 0.0, 1, steps, |_, t: f64| (2.0 * t).sin()).unwrap();
        let y = m.predict(&u).unwrap();
        y.get(0, steps - 1)
    };
    let reference = run(1.0 / 12800.0);
    let e1 = (run(0.02) - reference).abs();
    let e2 = (run(0.01) - reference).abs();
    let e3 = (run(0.005) - reference).abs();
    let order = ((e1 / e2).log2() + (e2 / e3).log2()) / 2.0;
    assert!(order > 1.6 && order < 2.6, "observed order {order} ({e1}, {e2}, {e3})");
}

#[test]
fn rollout_gradient_matches_finite_differences() {
    for (seed, prelu) in [(1u64, false), (2, true), (3, false)] {
        let dims = Dims { p: 1, q: 2, r: 2 };
        let m = model(seed, dims, prelu);
        let samples: Vec<Sample<f64>> = (0..3)
            .map(|k| {
                let u = smooth_input(seed * 7 + k, 0.05, 21, 1.0);
                let y = Trajectory::from_fn(0.05, 0.0, 2, 21, |c, t: f64| (c as f64 + 1.0) * (3.0 * t).sin()).unwrap();
                Sample::new(u, y).unwrap()
            })
            .collect();
        let batch: Vec<&Sample<f64>> = samples.iter().collect();
        let rep = finite_difference_check(&m, &batch, 1e-6).unwrap();
        assert!(rep.checked > rep.skipped, "{rep:?}");
        assert!(rep.max_rel_error < 1e-5, "seed {seed}: {rep:?}");
    }
}

#[test]
fn zero_networks_stay_at_rest() {
    let dims = Dims { p: 1, q: 3, r: 2 };
    let g = Mlp::zeros(&[5, 4, 2], Activation::Relu).unwrap();
    let p = Mlp::zeros(&[4, 4, 3], Activation::Relu).unwrap();
    let m = Oscillator::new(g, p, dims, GammaInputs::default()).unwrap();
    let y = m.predict(&smooth_input(0, 0.01, 50, 3.0)).unwrap();
    assert!(y.values().iter().all(|v| *v == 0.0));
}

#[test]
fn layout_mismatches_are_rejected() {
    let dims = Dims { p: 1, q: 1, r: 2 };
    let g = Mlp::zeros(&[4, 2], Activation::Relu).unwrap();
    let p = Mlp::zeros(&[4, 1], Activation::Relu).unwrap();
    assert!(Oscillator::new(g.clone(), p.clone(), dims, GammaInputs::default()).is_err());
    let narrow = GammaInputs { position: true, velocity: true, input: false };
    assert!(Oscillator::new(g, p, dims, narrow).is_ok());
}

#[test]
fn oscillator_checkpoint_round_trips() {
    let m = model(21, Dims { p: 1, q: 5, r: 3 }, true);
    let mut buf = Vec::new();
    m.write_checkpoint(&mut buf, &[21], serde_json::json!({"scale": 2.0})).unwrap();
    let (back, header) = Oscillator::read_checkpoint(&buf[..]).unwrap();
    assert_eq!(back, m);
    assert_eq!(header.meta["scale"], 2.0);
}
