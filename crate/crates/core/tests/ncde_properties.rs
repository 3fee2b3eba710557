use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajsurv::controlpath::{build_path, ControlPath, ObservationSeq, Scheme};
use trajsurv::ncde::{encode, EncoderParams, SolverConfig, SolverMethod};
use trajsurv::nn::Ffn;
use trajsurv::tensor::{Activation, Tensor};

fn random_times(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut t = vec![0.0];
    for _ in 1..n {
        let last = *t.last().unwrap();
        t.push(last + rng.gen_range(0.3..3.0));
    }
    t
}

/// Knots on whole hours, so every step halving refines every piece.
fn hourly_seq(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ObservationSeq {
    let mut times = vec![0.0];
    for _ in 1..n {
        let last = *times.last().unwrap();
        times.push(last + rng.gen_range(1..4) as f64);
    }
    let values = times.iter().map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    ObservationSeq::complete(times, values).unwrap()
}

fn random_seq(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ObservationSeq {
    let times = random_times(rng, n);
    let values = times.iter().map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    ObservationSeq::complete(times, values).unwrap()
}

fn constant_field_encoder(rng: &mut ChaCha8Rng, d: usize, dz: usize) -> EncoderParams {
    let q = d + 1;
    let g = Ffn::init(&[q, 8, dz], Activation::Tanh, Activation::Identity, 1.0, rng);
    let mut f = Ffn::init(&[dz, 8, dz * q], Activation::Tanh, Activation::Identity, 1.0, rng);
    let last = f.layers.last_mut().unwrap();
    last.weight = Tensor::zeros(last.weight.shape());
    let bias: Vec<f64> = (0..dz * q).map(|_| rng.gen_range(-1.0..1.0)).collect();
    last.bias = Tensor::vector(bias).unwrap();
    EncoderParams::from_networks(g, f).unwrap()
}

#[test]
fn constant_field_integrates_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let (d, dz) = (3, 4);
        let enc = constant_field_encoder(&mut rng, d, dz);
        let seq = random_seq(&mut rng, 5, d);
        let path = build_path(&seq, Scheme::CubicHermiteBackward).unwrap();
        let f = enc.vector_field(&vec![0.0; dz]).unwrap();
        // Simpson weights integrate the quadratic dX/dt exactly, so RK4 is exact here
        let traj = encode(&path, &enc, &SolverConfig::default()).unwrap();
        let z0 = traj.grid_states[0].clone();
        let x0 = path.start().to_vec();
        for (t, z) in traj.grid_times.iter().zip(&traj.grid_states) {
            let x = path.value(*t).unwrap();
            for i in 0..dz {
                let expect = z0[i] + (0..=d).map(|k| f[i * (d + 1) + k] * (x[k] - x0[k])).sum::<f64>();
                assert!((z[i] - expect).abs() < 1e-10, "t={t}: {} vs {expect}", z[i]);
            }
        }
    }
}

fn final_state(path: &ControlPath, enc: &EncoderParams, steps: usize) -> Vec<f64> {
    let cfg = SolverConfig {
        method: SolverMethod::Rk4,
        steps_per_hour: steps,
        grid_per_hour: 1,
    };
    encode(path, enc, &cfg).unwrap().last_state().to_vec()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn rk4_self_convergence_is_fourth_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let enc = EncoderParams::init(2, 3, 16, &mut rng);
        let seq = hourly_seq(&mut rng, 4, 2);
        let path = build_path(&seq, Scheme::CubicHermiteBackward).unwrap();
        let z: Vec<Vec<f64>> = [4, 8, 16, 32].iter().map(|&s| final_state(&path, &enc, s)).collect();
        let e: Vec<f64> = z.windows(2).map(|w| dist(&w[0], &w[1])).collect();
        for w in e.windows(2) {
            let ratio = w[0] / w[1];
            assert!((8.0..=32.0).contains(&ratio), "ratio {ratio} errors {e:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn future_observations_never_change_the_past(seed in 0u64..10_000, n in 3usize..7, cut in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 2;
        let enc = EncoderParams::init(d, 3, 8, &mut rng);
        let seq = random_seq(&mut rng, n, d);
        let cut = cut.min(n - 2);
        let t_cut = seq.times()[cut];
        let mut values: Vec<Vec<f64>> = seq.dense_values().unwrap();
        for row in values.iter_mut().skip(cut + 1) {
            for v in row.iter_mut() {
                *v += rng.gen_range(-2.0..2.0);
            }
        }
        let other = ObservationSeq::complete(seq.times().to_vec(), values).unwrap();
        let cfg = SolverConfig::default();
        let a = encode(&build_path(&seq, Scheme::CubicHermiteBackward).unwrap(), &enc, &cfg).unwrap();
        let b = encode(&build_path(&other, Scheme::CubicHermiteBackward).unwrap(), &enc, &cfg).unwrap();
        prop_assert_eq!(&a.grid_times, &b.grid_times);
        for (t, (x, y)) in a.grid_times.iter().zip(a.grid_states.iter().zip(&b.grid_states)) {
            if *t <= t_cut {
                prop_assert_eq!(x, y);
            }
        }
        for (t, (x, y)) in a.anchor_times.iter().zip(a.anchor_states.iter().zip(&b.anchor_states)) {
            if *t <= t_cut {
                prop_assert_eq!(x, y);
            }
        }
        prop_assert!(a.last_state() != b.last_state());
    }
}
