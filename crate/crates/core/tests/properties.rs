use proptest::collection::vec;
use proptest::prelude::*;

use oms_bench::eval::{self, EvalSetting, GroundTruth};
use oms_bench::stats::{self, SignedRanks};
use oms_bench::tensor_io::{decode_container, encode_container, TensorData};
use oms_bench::{
    fit, generate, MonitorConfig, MonitorKind, OodKind, ScoreVector, SynthConfig, Tensor, TensorContainer,
};

fn tensor_strategy() -> impl Strategy<Value = Tensor> {
    let shape = vec(0usize..4, 0..4);
    (shape, any::<bool>()).prop_flat_map(|(shape, is_f32)| {
        let n: usize = shape.iter().product();
        if is_f32 {
            vec(-1e6f32..1e6, n)
                .prop_map(move |v| Tensor::from_f32(shape.clone(), v).unwrap())
                .boxed()
        } else {
            vec(any::<i32>(), n)
                .prop_map(move |v| Tensor::from_i32(shape.clone(), v).unwrap())
                .boxed()
        }
    })
}

fn container_strategy() -> impl Strategy<Value = TensorContainer> {
    vec(("[a-z_.]{1,12}", tensor_strategy()), 0..6).prop_map(|entries| {
        let mut c = TensorContainer::new();
        for (name, t) in entries {
            let _ = c.insert(name, t);
        }
        c.set_meta(serde_json::json!({ "name": "p", "num_classes": 2 }));
        c
    })
}

fn synth_strategy() -> impl Strategy<Value = SynthConfig> {
    (
        any::<u64>(),
        2usize..5,
        0usize..3,
        5usize..30,
        2usize..10,
        0.5f64..5.0,
        0.1f64..2.0,
        prop_oneof![
            Just(OodKind::Novelty),
            Just(OodKind::Covariate),
            Just(OodKind::Adversarial)
        ],
        0.0f64..6.0,
        0.0f64..0.2,
    )
        .prop_map(
            |(seed, k, extra, n_train, n_test, sep, sigma, kind, shift, outliers)| SynthConfig {
                name: None,
                seed,
                num_classes: k,
                dim: k + extra,
                n_train,
                n_test,
                class_sep: sep,
                sigma,
                ood_kind: kind,
                ood_shift: shift,
                outlier_fraction: outliers,
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn container_round_trips(c in container_strategy()) {
        let bytes = encode_container(&c).unwrap();
        let back = decode_container(&bytes).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn corrupted_containers_never_panic(
        c in container_strategy(),
        flips in vec((any::<prop::sample::Index>(), any::<u8>()), 1..8),
        cut in any::<prop::sample::Index>(),
    ) {
        let mut bytes = encode_container(&c).unwrap();
        for (at, v) in flips {
            let i = at.index(bytes.len());
            bytes[i] = v;
        }
        let _ = decode_container(&bytes);
        let _ = decode_container(&bytes[..cut.index(bytes.len() + 1)]);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in vec(any::<u8>(), 0..256)) {
        let mut framed = b"OMSB\x01".to_vec();
        framed.extend_from_slice(&bytes);
        let _ = decode_container(&bytes);
        if let Ok(c) = decode_container(&framed) {
            let _ = oms_bench::load_bundle(&c);
        }
    }

    #[test]
    fn synth_predictions_match_head(cfg in synth_strategy()) {
        let b = generate(&cfg).unwrap();
        b.validate().unwrap();
        for split in [&b.train, &b.test_id, &b.ood] {
            for (i, x) in split.features.iter_rows().enumerate() {
                prop_assert_eq!(b.head.predict(x) as i32, split.predictions[i]);
            }
        }
        let misclassified = (0..b.train.len()).filter(|&i| !b.train.is_correct(i)).count();
        prop_assert!(misclassified >= cfg.outlier_count());
        let bytes = encode_container(&b.to_container().unwrap()).unwrap();
        prop_assert_eq!(oms_bench::load_bundle(&decode_container(&bytes).unwrap()).unwrap(), b);
    }

    #[test]
    fn optimal_threshold_beats_every_cut(
        data in vec((-3i32..3, any::<bool>()), 1..80),
    ) {
        let scores: Vec<f64> = data.iter().map(|&(s, _)| f64::from(s) * 0.5).collect();
        let truth = GroundTruth {
            setting: EvalSetting::Oms,
            positives: data.iter().map(|&(_, p)| p).collect(),
            n_id: data.len(),
            n_ood: 0,
        };
        let sv = ScoreVector { scores: scores.clone(), binary: false };
        let (tau, best) = eval::optimal_f1_threshold(&sv, &truth).unwrap();
        prop_assert_eq!(eval::evaluate_at(&sv, tau, &truth).unwrap(), best);
        let best_f1 = best.f1().unwrap_or(0.0);
        for cut in scores.iter().copied().chain([f64::NEG_INFINITY, f64::INFINITY]) {
            let c = eval::evaluate_at(&sv, cut, &truth).unwrap();
            prop_assert!(c.f1().unwrap_or(0.0) <= best_f1);
        }
    }

    #[test]
    fn wilcoxon_ignores_pair_order(
        pairs in vec((-100i32..100, -100i32..100), 1..30),
        seed in any::<u64>(),
    ) {
        let a: Vec<f64> = pairs.iter().map(|p| f64::from(p.0)).collect();
        let b: Vec<f64> = pairs.iter().map(|p| f64::from(p.1)).collect();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let pa: Vec<f64> = order.iter().map(|&i| a[i]).collect();
        let pb: Vec<f64> = order.iter().map(|&i| b[i]).collect();
        prop_assert_eq!(
            stats::wilcoxon_one_sided(&a, &b).unwrap(),
            stats::wilcoxon_one_sided(&pa, &pb).unwrap()
        );
    }

    #[test]
    fn exact_and_normal_tails_agree(
        n in 5usize..=25,
        signs in vec(any::<bool>(), 25),
    ) {
        let diffs: Vec<f64> = (1..=n)
            .map(|r| if signs[r - 1] { r as f64 } else { -(r as f64) })
            .collect();
        let ranks = SignedRanks::from_differences(&diffs);
        let exact = stats::exact_upper_tail(n, ranks.w_plus);
        let approx = stats::normal_upper_tail(&ranks);
        prop_assert!((exact - approx).abs() <= 0.02, "n={} w={} exact={} approx={}", n, ranks.w_plus, exact, approx);
    }

    #[test]
    fn tails_overlap_at_observed_statistic(n in 1usize..=25, w_frac in 0.0f64..=1.0) {
        let max = (n * (n + 1) / 2) as f64;
        let w = (w_frac * max).round();
        let upper = stats::exact_upper_tail(n, w);
        let lower = stats::exact_lower_tail(n, w);
        prop_assert!(upper + lower >= 1.0);
        prop_assert!((0.0..=1.0).contains(&upper) && (0.0..=1.0).contains(&lower));
    }

    #[test]
    fn otb_enlargement_only_removes_rejections(
        cfg in synth_strategy(),
        eps in 0.0f64..1.0,
        extra in 0.0f64..1.0,
        k in 1usize..4,
    ) {
        let b = generate(&cfg).unwrap();
        let mut mc = MonitorConfig::new(MonitorKind::Otb);
        mc.otb_clusters_per_class = k;
        mc.otb_enlargement = eps;
        let small = fit(&b, &mc).unwrap().score_evaluation_set(&b).unwrap();
        mc.otb_enlargement = eps + extra;
        let large = fit(&b, &mc).unwrap().score_evaluation_set(&b).unwrap();
        for (l, s) in large.scores.iter().zip(&small.scores) {
            prop_assert!(l <= s);
        }
    }
}

/// Covariate fixture where OOD and OMS disagree on the best monitor; kept as
/// a plain regression so any change to scoring or thresholds is noticed.
#[test]
fn setting_divergence_regression() {
    let cfg = SynthConfig {
        name: None,
        seed: 0,
        num_classes: 3,
        dim: 6,
        n_train: 100,
        n_test: 40,
        class_sep: 3.0,
        sigma: 1.0,
        ood_kind: OodKind::Covariate,
        ood_shift: 3.0,
        outlier_fraction: 0.02,
    };
    let b = generate(&cfg).unwrap();
    let recall = |kind: MonitorKind, setting: EvalSetting| {
        let m = fit(&b, &MonitorConfig::new(kind)).unwrap();
        let scores = m.score_evaluation_set(&b).unwrap();
        let truth = eval::label_ground_truth(&b, setting);
        eval::evaluate(kind.as_str(), &scores, &truth, &truth)
            .unwrap()
            .recall
            .unwrap()
    };
    let msp_ood = recall(MonitorKind::Msp, EvalSetting::Ood);
    let maha_ood = recall(MonitorKind::Mahalanobis, EvalSetting::Ood);
    let msp_oms = recall(MonitorKind::Msp, EvalSetting::Oms);
    let maha_oms = recall(MonitorKind::Mahalanobis, EvalSetting::Oms);
    assert!(msp_ood > maha_ood, "OOD: msp {msp_ood} vs mahalanobis {maha_ood}");
    assert!(maha_oms > msp_oms, "OMS: mahalanobis {maha_oms} vs msp {msp_oms}");
}

#[test]
fn clean_grid_gives_undefined_trick_p_value() {
    let text = include_str!("../configs/trick_study.json")
        .replace("\"outlier_fraction\": 0.02", "\"outlier_fraction\": 0.0")
        .replace("\"sigma\": 1.0", "\"sigma\": 0.1");
    let cfg = oms_bench::BenchmarkConfig::from_json(&text).unwrap();
    let bundles = oms_bench::pipeline::load_scenarios(&cfg, std::path::Path::new(".")).unwrap();
    for b in &bundles {
        assert!((0..b.train.len()).all(|i| b.train.is_correct(i)), "{}", b.name);
    }
    let study = oms_bench::pipeline::trick_study_on(&cfg, &bundles).unwrap();
    assert_eq!(study.recall_p, None);
    assert_eq!(study.all_data, study.only_correct);
    assert!(study.to_markdown().contains("NA"));
}

#[test]
fn tensor_data_kinds_survive_round_trip() {
    let mut c = TensorContainer::new();
    c.insert("a", Tensor::from_f32(vec![2], vec![1.5, -0.0]).unwrap())
        .unwrap();
    c.insert("b", Tensor::from_i32(vec![1, 1], vec![-7]).unwrap()).unwrap();
    let back = decode_container(&encode_container(&c).unwrap()).unwrap();
    assert!(matches!(back.get("b").unwrap().data(), TensorData::I32(v) if v == &[-7]));
    assert_eq!(
        back.get("a").unwrap().as_f32().unwrap()[1].to_bits(),
        (-0.0f32).to_bits()
    );
}

#[test]
fn tail_identities_hold_on_every_statistic() {
    for n in 1..=25usize {
        let max = n * (n + 1) / 2;
        for w in 0..=max {
            let w = w as f64;
            let upper = stats::exact_upper_tail(n, w);
            let lower = stats::exact_lower_tail(n, w);
            assert!(upper + lower >= 1.0, "n={n} w={w}");
            let mirrored = stats::exact_lower_tail(n, max as f64 - w);
            assert_eq!(upper, mirrored, "symmetry n={n} w={w}");
        }
    }
}

#[test]
fn normal_tail_stays_close_to_exact() {
    let mut worst = (0.0f64, 0usize, 0.0f64);
    for n in 5..=25usize {
        let max = n * (n + 1) / 2;
        for w in 0..=max {
            let ranks = SignedRanks {
                n,
                w_plus: w as f64,
                tie_groups: Vec::new(),
                ranks: (1..=n).map(|r| r as f64).collect(),
            };
            let gap = (stats::exact_upper_tail(n, w as f64) - stats::normal_upper_tail(&ranks)).abs();
            if gap > worst.0 {
                worst = (gap, n, w as f64);
            }
        }
    }
    assert!(
        worst.0 <= 0.02,
        "largest gap {} at n={} w={}",
        worst.0,
        worst.1,
        worst.2
    );
}
