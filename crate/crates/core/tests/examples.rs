use dynhtm::causality::{ccm_skill, l_index, synchrony_test, Verdict};
use dynhtm::dynsys::{
    coupled_logistic, integrate, lorenz_deriv, observe, LogisticPair, Method, ObservationConfig, ParameterSchedule,
    State3, SystemParams,
};
use dynhtm::embedding::{delay_embed, estimate_k, estimate_tau, EmbeddingSpec, PointCloud, TimeSeries};
use dynhtm::forecast::{build_library, predict_next};
use dynhtm::stats;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lorenz(x0: State3, dt: f64, n: usize) -> Vec<State3> {
    integrate(
        &ParameterSchedule::constant(SystemParams::CLASSICAL),
        x0,
        dt,
        n,
        Method::Rk4,
    )
    .unwrap()
    .states
}

fn x_series(states: &[State3], dt: f64) -> TimeSeries {
    TimeSeries::new(dt, states.iter().map(|s| s.x).collect()).unwrap()
}

#[test]
fn derivative_matches_hand_substitution() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let s = State3 {
            x: rng.random_range(-50.0..50.0),
            y: rng.random_range(-50.0..50.0),
            z: rng.random_range(-10.0..90.0),
        };
        let p = SystemParams {
            sigma: rng.random_range(1.0..20.0),
            rho: rng.random_range(0.5..50.0),
            beta: rng.random_range(0.5..5.0),
        };
        let d = lorenz_deriv(s, p).unwrap();
        assert_eq!(d.x, p.sigma * (s.y - s.x));
        assert_eq!(d.y, s.x * (p.rho - s.z) - s.y);
        assert_eq!(d.z, s.x * s.y - p.beta * s.z);
    }
}

#[test]
fn fixed_points_are_stationary() {
    for rho in [2.0, 13.0, 28.0, 35.0] {
        let p = SystemParams::CLASSICAL.with_rho(rho);
        assert_eq!(
            lorenz_deriv(State3 { x: 0.0, y: 0.0, z: 0.0 }, p).unwrap(),
            State3 { x: 0.0, y: 0.0, z: 0.0 }
        );
        let r = (p.beta * (rho - 1.0)).sqrt();
        for sign in [1.0, -1.0] {
            let d = lorenz_deriv(
                State3 {
                    x: sign * r,
                    y: sign * r,
                    z: rho - 1.0,
                },
                p,
            )
            .unwrap();
            assert_eq!((d.x, d.y), (0.0, 0.0));
            assert!(d.z.abs() <= 4.0 * f64::EPSILON * rho, "z residual {} at rho {rho}", d.z);
        }
    }
}

#[test]
fn split_schedule_with_equal_params_is_identical() {
    let x0 = State3 { x: 1.0, y: 1.0, z: 1.0 };
    let p = SystemParams::CLASSICAL;
    let one = integrate(&ParameterSchedule::constant(p), x0, 0.01, 2000, Method::Rk4).unwrap();
    let two = integrate(
        &ParameterSchedule::new(vec![(0, p), (700, p)]).unwrap(),
        x0,
        0.01,
        2000,
        Method::Rk4,
    )
    .unwrap();
    assert_eq!(one.states, two.states);
}

#[test]
fn euler_converges_to_rk4_as_dt_shrinks() {
    let x0 = State3 { x: 1.0, y: 1.0, z: 1.0 };
    let sched = ParameterSchedule::constant(SystemParams::CLASSICAL);
    let horizon = 0.5;
    let gaps: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&dt| {
            let n = (horizon / dt) as usize;
            let e = integrate(&sched, x0, dt, n, Method::Euler).unwrap();
            let r = integrate(&sched, x0, dt, n, Method::Rk4).unwrap();
            e.states
                .iter()
                .zip(&r.states)
                .map(|(a, b)| a.max_abs_diff(b))
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
}

#[test]
fn noiseless_observation_is_linear() {
    let traj = integrate(
        &ParameterSchedule::constant(SystemParams::CLASSICAL),
        State3 { x: 1.0, y: 2.0, z: 3.0 },
        0.01,
        500,
        Method::Rk4,
    )
    .unwrap();
    let w = [0.5, -2.0, 0.25];
    let s = observe(
        &traj,
        &ObservationConfig {
            weights: w,
            noise_std: 0.0,
            seed: 9,
        },
    )
    .unwrap();
    for (v, st) in s.values.iter().zip(&traj.states) {
        assert_eq!(*v, w[0] * st.x + w[1] * st.y + w[2] * st.z);
    }
}

#[test]
fn lorenz_x_embeds_in_three_to_five_dimensions() {
    let states = lorenz(State3 { x: 1.0, y: 1.0, z: 1.0 }, 0.01, 12000);
    let series = x_series(&states[2000..], 0.01);
    let est = estimate_k(&series, 10, 10).unwrap();
    assert!((3..=5).contains(&est.k), "k = {} from {:?}", est.k, est.fractions);
    assert!(!est.saturated);
    assert_eq!(estimate_k(&series, 10, 10).unwrap(), est);
    assert_eq!(estimate_tau(&series, 50).unwrap(), estimate_tau(&series, 50).unwrap());
}

#[test]
fn cosine_lag_is_near_a_quarter_period() {
    let values: Vec<f64> = (0..4000)
        .map(|i| (2.0 * std::f64::consts::PI * i as f64 / 40.0).cos())
        .collect();
    let tau = estimate_tau(&TimeSeries::new(1.0, values).unwrap(), 30).unwrap();
    assert!((8..=12).contains(&tau), "tau = {tau}");
}

// On a flow whose displacement is A·p + b, the prediction error at q is
// A·Σ wᵢ (pᵢ − q) exactly, with wᵢ the normalised exp(−dᵢ/d̄) weights.
#[test]
fn affine_flow_error_follows_neighbour_offset() {
    let (c, s) = (0.995f64 * 0.05f64.cos(), 0.995f64 * 0.05f64.sin());
    let m = [[c, -s], [s, c]];
    let b = [0.02, -0.01];
    let mut p = [3.0, 0.0];
    let mut coords = Vec::new();
    for _ in 0..800 {
        coords.extend_from_slice(&p);
        p = [
            m[0][0] * p[0] + m[0][1] * p[1] + b[0],
            m[1][0] * p[0] + m[1][1] * p[1] + b[1],
        ];
    }
    let cloud = PointCloud::from_parts(2, coords, (0..800).collect()).unwrap();
    let lib = build_library(&cloud, 1).unwrap();
    let a = [[m[0][0] - 1.0, m[0][1]], [m[1][0], m[1][1] - 1.0]];
    for q in [[1.3, 0.4], [-0.7, 2.1], [0.2, -1.9]] {
        let pred = predict_next(&lib, &q, 4).unwrap();
        let d: Vec<f64> = pred
            .members
            .iter()
            .map(|&i| {
                let pi = lib.point(i);
                ((pi[0] - q[0]).powi(2) + (pi[1] - q[1]).powi(2)).sqrt()
            })
            .collect();
        let dbar = d.iter().sum::<f64>() / d.len() as f64;
        let raw: Vec<f64> = d.iter().map(|x| (-x / dbar).exp()).collect();
        let tot: f64 = raw.iter().sum();
        let mut off = [0.0; 2];
        for (&i, r) in pred.members.iter().zip(&raw) {
            off[0] += r / tot * (lib.point(i)[0] - q[0]);
            off[1] += r / tot * (lib.point(i)[1] - q[1]);
        }
        let truth = [
            q[0] + a[0][0] * q[0] + a[0][1] * q[1] + b[0],
            q[1] + a[1][0] * q[0] + a[1][1] * q[1] + b[1],
        ];
        let want = [a[0][0] * off[0] + a[0][1] * off[1], a[1][0] * off[0] + a[1][1] * off[1]];
        for j in 0..2 {
            assert!((pred.mean[j] - truth[j] - want[j]).abs() < 1e-9, "q {q:?} dim {j}");
        }
    }
}

#[test]
fn translation_flow_is_predicted_exactly() {
    let coords: Vec<f64> = (0..200).flat_map(|i| [0.5 * i as f64, -0.25 * i as f64]).collect();
    let lib = build_library(&PointCloud::from_parts(2, coords, (0..200).collect()).unwrap(), 3).unwrap();
    let pred = predict_next(&lib, &[10.1, -4.9], 5).unwrap();
    assert!((pred.mean[0] - 11.6).abs() < 1e-12 && (pred.mean[1] + 5.65).abs() < 1e-12);
}

#[test]
fn forecast_error_grows_with_horizon() {
    let horizons = [1, 5, 10, 25, 50];
    let mut sums = [0.0; 5];
    for trial in 0..20 {
        let x0 = State3 {
            x: 1.0 + 0.1 * trial as f64,
            y: 1.0,
            z: 1.0,
        };
        let states = lorenz(x0, 0.01, 6000);
        let series = x_series(&states[1000..], 0.01);
        let cloud = delay_embed(&series, EmbeddingSpec::new(10, 3).unwrap()).unwrap();
        let split = cloud.len() * 4 / 5;
        let train = cloud.select(&(0..split).collect::<Vec<_>>());
        for (h, sum) in horizons.iter().zip(&mut sums) {
            let lib = build_library(&train, *h).unwrap();
            let (mut pred, mut truth) = (Vec::new(), Vec::new());
            for i in split..cloud.len() - h {
                pred.push(predict_next(&lib, cloud.point(i), 6).unwrap().mean[0]);
                truth.push(cloud.point(i + h)[0]);
            }
            *sum += stats::rmse(&pred, &truth);
        }
    }
    assert!(sums.windows(2).all(|w| w[0] <= w[1]), "{sums:?}");
}

#[test]
fn cross_mapping_a_series_onto_itself_is_near_perfect() {
    let states = lorenz(State3 { x: 1.0, y: 1.0, z: 1.0 }, 0.01, 4000);
    let x = x_series(&states[1000..], 0.01);
    let curve = ccm_skill(&x, &x, EmbeddingSpec::new(10, 3).unwrap(), &[500, 1000, 2000], 4, 3).unwrap();
    for (l, s) in curve.library_sizes.iter().zip(&curve.skill) {
        assert!(*s > 0.999, "size {l}: {s}");
    }
    assert!(curve.skill.iter().all(|s| (-1.0..=1.0).contains(s)));
}

fn noise_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    delay_embed(&TimeSeries::new(1.0, v).unwrap(), EmbeddingSpec::new(1, 2).unwrap()).unwrap()
}

#[test]
fn theiler_window_barely_matters_on_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = noise_cloud(&mut rng, 600);
    let y = noise_cloud(&mut rng, 600);
    let a = l_index(&x, &y, 5, 0).unwrap();
    let b = l_index(&x, &y, 5, 2).unwrap();
    assert!(
        (a.l_xy - b.l_xy).abs() < 0.02 && (a.l_yx - b.l_yx).abs() < 0.02,
        "{a:?} {b:?}"
    );
}

#[test]
fn synchrony_recovers_logistic_drive() {
    let spec = EmbeddingSpec::new(1, 2).unwrap();
    let hits = (0..20)
        .filter(|&seed| {
            let (xs, ys) = coupled_logistic(LogisticPair::X_DRIVES_Y, 1000, 500, seed).unwrap();
            let (x, y) = PointCloud::align(&delay_embed(&xs, spec).unwrap(), &delay_embed(&ys, spec).unwrap());
            synchrony_test(&x, &y, 5, 2, 100 + seed).unwrap().verdict == Verdict::XDrivesY
        })
        .count();
    assert!(hits >= 18, "{hits}/20");
}

#[test]
fn synchrony_calls_independent_noise_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let hits = (0..20)
        .filter(|&seed| {
            let x = noise_cloud(&mut rng, 600);
            let y = noise_cloud(&mut rng, 600);
            synchrony_test(&x, &y, 5, 2, seed).unwrap().verdict == Verdict::Independent
        })
        .count();
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn readme_library_example() -> dynhtm::Result<()> {
    let sched = ParameterSchedule::constant(SystemParams::CLASSICAL);
    let traj = integrate(&sched, State3 { x: 1.0, y: 1.0, z: 1.0 }, 0.01, 10_000, Method::Rk4)?;
    let x = observe(&traj, &ObservationConfig::x_only())?;
    let k = estimate_k(&x, 10, 10)?.k;
    let cloud = delay_embed(&x, EmbeddingSpec::new(10, k)?)?;
    let lib = build_library(&cloud, 1)?;
    let next = predict_next(&lib, cloud.point(cloud.len() - 1), 8)?;
    assert_eq!(next.mean.len(), k);
    Ok(())
}
