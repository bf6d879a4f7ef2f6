use dynhtm::causality::l_index;
use dynhtm::embedding::{delay_embed, EmbeddingSpec, PointCloud, TimeSeries};
use dynhtm::forecast::{build_library, correction_vector, predict_multi, query_knn, track_regimes, RegimeTracker};
use dynhtm::knn::KdTree;
use dynhtm::sdr::{encode_scalar, kwta, ScalarEncoderConfig, Sdr, TmConfig, TransitionMemory};
use proptest::prelude::*;

fn brute_knn(points: &[f64], dim: usize, q: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = points
        .chunks(dim)
        .enumerate()
        .map(|(i, p)| (i, p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()))
        .collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

fn cloud(dim: usize, max_n: usize) -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1..max_n)
        .prop_flat_map(move |n| (Just(dim), prop::collection::vec(-5i32..5, n * dim)))
        .prop_map(|(d, v)| (d, v.into_iter().map(|x| x as f64 * 0.5).collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn kd_tree_matches_exhaustive_scan(
        (dim, pts) in (1usize..5).prop_flat_map(|d| cloud(d, 60)),
        q in prop::collection::vec(-3.0f64..3.0, 4),
        k in 1usize..12,
    ) {
        let q = &q[..dim];
        let got: Vec<(usize, f64)> = KdTree::build(&pts, dim).knn(q, k).iter().map(|n| (n.index, n.dist_sq)).collect();
        prop_assert_eq!(got, brute_knn(&pts, dim, q, k));
    }

    #[test]
    fn library_query_matches_exhaustive_scan(
        values in prop::collection::vec(-2.0f64..2.0, 20..120),
        tau in 1usize..4,
        k in 1usize..4,
        kn in 1usize..10,
        qi in 0usize..1000,
    ) {
        let series = TimeSeries::new(1.0, values).unwrap();
        let c = delay_embed(&series, EmbeddingSpec::new(tau, k).unwrap()).unwrap();
        prop_assume!(c.len() > 1);
        let lib = build_library(&c, 1).unwrap();
        let q = c.point(qi % c.len()).to_vec();
        let flat: Vec<f64> = (0..lib.len()).flat_map(|i| lib.point(i).to_vec()).collect();
        let want = brute_knn(&flat, k, &q, kn);
        let got = query_knn(&lib, &q, kn).unwrap();
        prop_assert_eq!(&got.indices, &want.iter().map(|w| w.0).collect::<Vec<_>>());
        for (d, w) in got.distances.iter().zip(&want) {
            prop_assert_eq!(*d, w.1.sqrt());
        }
        prop_assert_eq!(got.truncated, lib.len() < kn);
    }

    #[test]
    fn delay_embedding_round_trips(
        values in prop::collection::vec(-100.0f64..100.0, 1..80),
        tau in 1usize..6,
        k in 1usize..6,
    ) {
        let n = values.len();
        let series = TimeSeries::new(0.1, values.clone()).unwrap();
        let spec = EmbeddingSpec::new(tau, k).unwrap();
        let window = (k - 1) * tau + 1;
        match delay_embed(&series, spec) {
            Ok(c) => {
                prop_assert!(n >= window);
                prop_assert_eq!(c.len(), n - (k - 1) * tau);
                for i in 0..c.len() {
                    let t = c.source_index()[i];
                    for j in 0..k {
                        prop_assert_eq!(c.point(i)[j], values[t - j * tau]);
                    }
                }
            }
            Err(_) => prop_assert!(n < window),
        }
    }

    #[test]
    fn delay_embedding_is_translation_equivariant(
        values in prop::collection::vec(-10i32..10, 10..60),
        shift in -50i32..50,
    ) {
        let spec = EmbeddingSpec::new(2, 3).unwrap();
        let base = delay_embed(&TimeSeries::new(1.0, values.iter().map(|&v| v as f64).collect()).unwrap(), spec).unwrap();
        let moved = delay_embed(&TimeSeries::new(1.0, values.iter().map(|&v| (v + shift) as f64).collect()).unwrap(), spec).unwrap();
        for (a, b) in base.coords().iter().zip(moved.coords()) {
            prop_assert_eq!(a + shift as f64, *b);
        }
    }

    #[test]
    fn prediction_weights_and_modes_are_consistent(
        values in prop::collection::vec(-3.0f64..3.0, 40..150),
        kn in 1usize..12,
        gap in 1.5f64..6.0,
        qi in 0usize..1000,
    ) {
        let series = TimeSeries::new(1.0, values).unwrap();
        let c = delay_embed(&series, EmbeddingSpec::new(1, 2).unwrap()).unwrap();
        let lib = build_library(&c, 1).unwrap();
        let q = c.point(qi % c.len()).to_vec();
        let set = predict_multi(&lib, &q, kn, gap).unwrap();
        let total: f64 = set.modes.iter().map(|m| m.weight).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        let mut members: Vec<usize> = set.modes.iter().flat_map(|m| m.members.clone()).collect();
        members.sort_unstable();
        let mut expected = query_knn(&lib, &q, kn).unwrap().indices;
        expected.sort_unstable();
        prop_assert_eq!(members, expected);

        let actual: Vec<f64> = q.iter().map(|v| v + 0.3).collect();
        let corr = correction_vector(&set, &actual).unwrap();
        let norm = |m: &[f64]| actual.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let chosen = norm(&set.modes[corr.mode].mean);
        for m in &set.modes {
            prop_assert!(chosen <= norm(&m.mean));
        }
    }

    #[test]
    fn regime_credits_stay_in_unit_interval(
        decay in 0.001f64..1.0,
        stream in prop::collection::vec(0usize..4, 0..200),
    ) {
        let mut tracker = RegimeTracker::new(decay).unwrap();
        for &r in &stream {
            tracker = track_regimes(&tracker, r);
            for &c in tracker.credits().values() {
                prop_assert!((0.0..=1.0).contains(&c));
            }
        }
    }

    #[test]
    fn kwta_returns_the_sorted_argmax_set(
        scores in prop::collection::vec(-4i32..4, 1..200),
        k_frac in 0.0f64..1.0,
    ) {
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let k = 1 + ((scores.len() - 1) as f64 * k_frac) as usize;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let want = Sdr::new(scores.len(), order.into_iter().take(k)).unwrap();
        let got = kwta(&scores, k).unwrap();
        prop_assert_eq!(got.len(), k);
        prop_assert_eq!(got, want);
    }

    #[test]
    fn encoder_emits_w_contiguous_bits(v in -0.5f64..1.5) {
        let cfg = ScalarEncoderConfig { min: 0.0, max: 1.0, n: 400, w: 21 };
        let enc = encode_scalar(&cfg, v).unwrap();
        let bits = enc.sdr.active();
        prop_assert_eq!(bits.len(), 21);
        prop_assert_eq!(bits[20] - bits[0], 20);
        prop_assert_eq!(enc.clamped, !(0.0..=1.0).contains(&v));
    }

    #[test]
    fn l_index_is_rank_invariant(
        values in prop::collection::vec(-1000i32..1000, 60..120),
        scale in 0.01f64..100.0,
    ) {
        let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let ys: Vec<f64> = values.iter().rev().map(|&v| (v as f64).sin()).collect();
        let spec = EmbeddingSpec::new(1, 2).unwrap();
        let x = delay_embed(&TimeSeries::new(1.0, xs).unwrap(), spec).unwrap();
        let y = delay_embed(&TimeSeries::new(1.0, ys).unwrap(), spec).unwrap();
        let base = l_index(&x, &y, 4, 2).unwrap();
        let scaled = l_index(&x, &y.scaled(scale), 4, 2).unwrap();
        prop_assert_eq!(base.l_xy.to_bits(), scaled.l_xy.to_bits());
        prop_assert_eq!(base.l_yx.to_bits(), scaled.l_yx.to_bits());
        prop_assert!(base.l_xy.abs() <= 1.0 + 1e-12 && base.l_yx.abs() <= 1.0 + 1e-12);
    }
}

fn small_tm(seed: u64) -> TransitionMemory {
    TransitionMemory::new(TmConfig {
        columns: 128,
        cells_per_column: 4,
        activation_threshold: 3,
        learning_threshold: 2,
        new_synapse_count: 8,
        max_synapses_per_segment: 12,
        max_segments_per_cell: 4,
        seed,
        ..TmConfig::default()
    })
    .unwrap()
}

fn random_input(bits: &[u16]) -> Sdr {
    Sdr::new(128, bits.iter().map(|&b| b as usize % 128)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn permanences_stay_in_unit_interval(
        stream in prop::collection::vec(prop::collection::vec(any::<u16>(), 1..12), 1..60),
        seed in any::<u64>(),
    ) {
        let mut tm = small_tm(seed);
        for bits in &stream {
            let out = tm.step(&random_input(bits), true).unwrap();
            prop_assert!((0.0..=1.0).contains(&out.anomaly));
        }
        for s in tm.synapses() {
            prop_assert!((0.0..=1.0).contains(&s.permanence));
        }
    }

    #[test]
    fn identical_seeds_and_streams_give_identical_memories(
        stream in prop::collection::vec(prop::collection::vec(any::<u16>(), 1..12), 1..40),
        seed in any::<u64>(),
    ) {
        let mut a = small_tm(seed);
        let mut b = small_tm(seed);
        for bits in &stream {
            let input = random_input(bits);
            prop_assert_eq!(a.step(&input, true).unwrap(), b.step(&input, true).unwrap());
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn inference_without_learning_is_pure(
        stream in prop::collection::vec(prop::collection::vec(any::<u16>(), 1..12), 1..30),
        probe in prop::collection::vec(any::<u16>(), 1..12),
    ) {
        let mut tm = small_tm(7);
        for bits in &stream {
            tm.step(&random_input(bits), true).unwrap();
        }
        let frozen = tm.clone();
        let input = random_input(&probe);
        let mut a = frozen.clone();
        let mut b = frozen.clone();
        prop_assert_eq!(a.step(&input, false).unwrap(), b.step(&input, false).unwrap());
        prop_assert_eq!(a, b);
    }
}

#[test]
fn encoder_overlap_is_non_increasing_in_distance() {
    let cfg = ScalarEncoderConfig::default();
    let grid: Vec<f64> = (0..1000).map(|i| i as f64 / 999.0).collect();
    let anchor = encode_scalar(&cfg, grid[0]).unwrap().sdr;
    let mut last = usize::MAX;
    for &v in &grid {
        let o = dynhtm::sdr::overlap(&anchor, &encode_scalar(&cfg, v).unwrap().sdr).unwrap();
        assert!(o <= last, "overlap rose at {v}");
        last = o;
    }
    assert_eq!(last, 0);
}

#[test]
fn l_of_a_cloud_with_itself_is_one() {
    let values: Vec<f64> = (0..300).map(|i| ((i * 7919) % 1009) as f64).collect();
    let c = delay_embed(
        &TimeSeries::new(1.0, values).unwrap(),
        EmbeddingSpec::new(1, 3).unwrap(),
    )
    .unwrap();
    let r = l_index(&c, &c, 5, 3).unwrap();
    assert_eq!(r.l_xy, 1.0);
    assert_eq!(r.l_yx, 1.0);
}

#[test]
fn point_cloud_parts_round_trip() {
    let c = PointCloud::from_parts(2, vec![1.0, 2.0, 3.0, 4.0], vec![5, 6]).unwrap();
    assert_eq!(c.point(1), &[3.0, 4.0]);
    assert_eq!(c.position_of(6), Some(1));
}
