//! Invariant properties, each checked on 1000 generated cases.

use super::mlp;
use gga_core::attacks::{boundary_proximal, csa, noise_attack, pgd, pgd_targeted, AttackConfig, Norm, Target};
use gga_core::container::Container;
use gga_core::data::gen_blobs;
use gga_core::eval::{evaluate_scores, AurocMode, DetectionReport, EvalOptions};
use gga_core::features::features;
use gga_core::landscape::{zeta_stats, ZetaClass, ZetaOptions};
use gga_core::loda::{calibrate, LodaConfig, LodaDetector};
use gga_core::metrics::{auroc, tnr_at_tpr, ScoredSet};
use gga_core::nn::{LossKind, Model};
use gga_core::saliency::{cosine, csm, csm_batch, CosineSimilarityMatrix, CsmOptions, SaliencyMap};
use gga_core::Tensor;
use proptest::prelude::*;

fn input(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, dim)
}

/// Small model plus an input for it.
fn model_and_input() -> impl Strategy<Value = (Model, Tensor)> {
    (2usize..7, 2usize..7, any::<bool>(), any::<u64>()).prop_flat_map(|(dim, classes, smooth, seed)| {
        input(dim).prop_map(move |x| (mlp(dim, 6, classes, smooth, seed), Tensor::from_vec(x)))
    })
}

fn sign_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(-1.0), Just(1.0)], d)
}

fn assert_csm_invariants(m: &CosineSimilarityMatrix) -> Result<(), TestCaseError> {
    let n = m.size();
    for i in 0..n {
        let diag = if m.degenerate_flags()[i] { 0.0 } else { 1.0 };
        prop_assert_eq!(m.get(i, i), diag);
        for j in 0..n {
            prop_assert_eq!(m.get(i, j), m.get(j, i));
            prop_assert!((-1.0..=1.0).contains(&m.get(i, j)));
        }
    }
    prop_assert_eq!(m.predicted_index(), 0);
    Ok(())
}

/// Rows follow descending softmax probability, ties by ascending class.
fn assert_ranked(m: &CosineSimilarityMatrix, model: &Model, x: &Tensor) -> Result<(), TestCaseError> {
    let probs = model.probabilities(x).unwrap();
    let ids = m.class_ids();
    for (i, &c) in ids.iter().enumerate() {
        prop_assert_eq!(m.probabilities()[i], probs[c]);
    }
    for w in ids.windows(2) {
        prop_assert!(probs[w[0]] > probs[w[1]] || (probs[w[0]] == probs[w[1]] && w[0] < w[1]));
    }
    for c in (0..probs.len()).filter(|c| !ids.contains(c)) {
        prop_assert!(probs[c] <= probs[*ids.last().unwrap()]);
    }
    Ok(())
}

fn brute_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let (mut wins, mut ties) = (0u64, 0u64);
    for n in neg {
        for p in pos {
            if n > p {
                wins += 1;
            } else if n == p {
                ties += 1;
            }
        }
    }
    100.0 * (2 * wins + ties) as f64 / (2 * pos.len() * neg.len()) as f64
}

fn scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop_oneof![
        prop::collection::vec(-5.0..5.0f64, 1..max_len),
        prop::collection::vec((-4i32..4).prop_map(f64::from), 1..max_len),
    ]
}

fn fitted_detector() -> impl Strategy<Value = (LodaDetector, Vec<Vec<f64>>)> {
    (1usize..5, 3usize..40, 1usize..6, 2usize..12, any::<bool>(), any::<u64>()).prop_flat_map(
        |(dim, n, projections, bins, standardize, seed)| {
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), n).prop_map(move |rows| {
                let cfg = LodaConfig { projections, bins, standardize, seed };
                (LodaDetector::fit(&rows, &cfg).unwrap(), rows)
            })
        },
    )
}

fn attack_config() -> impl Strategy<Value = AttackConfig> {
    (any::<bool>(), 0.01..0.5f64, 0.1..1.5f64, 1usize..12, any::<u64>(), any::<bool>()).prop_map(
        |(l2, eps, alpha, iterations, seed, random_start)| {
            let mut cfg = AttackConfig::linf(eps);
            cfg.norm = if l2 { Norm::L2 } else { Norm::Linf };
            cfg.step_size = alpha * eps;
            cfg.iterations = iterations;
            cfg.seed = seed;
            cfg.random_start = random_start;
            cfg.bisection_steps = 6;
            cfg
        },
    )
}

pub const CASES: u32 = 1000;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: CASES,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    fn csm_is_symmetric_with_unit_diagonal_and_bounded((model, x) in model_and_input()) {
        let m = csm(&model, &x, &CsmOptions::default()).unwrap();
        assert_csm_invariants(&m)?;
        assert_ranked(&m, &model, &x)?;
    }

    fn sign_cosine_matches_hamming_distance(d in 1usize..80, seed in any::<u64>()) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..d).map(|_| if rand::Rng::random_bool(rng, 0.5) { 1.0 } else { -1.0 }).collect()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let hamming = a.iter().zip(&b).filter(|(u, v)| u != v).count();
        let sa = SaliencyMap::from_gradient(0, &Tensor::from_vec(a)).unwrap();
        let sb = SaliencyMap::from_gradient(1, &Tensor::from_vec(b)).unwrap();
        let expected = (d as f64 - 2.0 * hamming as f64) / d as f64;
        prop_assert!((cosine(&sa, &sb).unwrap() - expected).abs() < 1e-12);
    }

    fn top_n_is_a_leading_submatrix((model, x) in model_and_input(), pick in 0usize..100) {
        let full = csm(&model, &x, &CsmOptions::default()).unwrap();
        let n = 2 + pick % (model.num_classes() - 1);
        let top = csm(&model, &x, &CsmOptions::top(n)).unwrap();
        assert_csm_invariants(&top)?;
        assert_ranked(&top, &model, &x)?;
        prop_assert_eq!(top.class_ids(), &full.class_ids()[..n]);
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(top.get(i, j), full.get(i, j));
            }
        }
    }

    fn batch_matches_single((model, x) in model_and_input(), extra in prop::collection::vec(input(6), 0..4)) {
        let dim = model.input_len();
        let mut xs = vec![x];
        xs.extend(extra.into_iter().map(|v| Tensor::from_vec(v[..dim].to_vec())));
        let batch = csm_batch(&model, &xs, &CsmOptions::default()).unwrap();
        for (x, m) in xs.iter().zip(&batch) {
            prop_assert_eq!(&csm(&model, x, &CsmOptions::default()).unwrap(), m);
        }
    }

    fn features_ignore_order_of_other_classes(
        maps in (3usize..8, 2usize..20).prop_flat_map(|(m, d)| prop::collection::vec(sign_vec(d), m)),
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let m = maps.len();
        let sal: Vec<SaliencyMap> = maps
            .iter()
            .enumerate()
            .map(|(c, v)| SaliencyMap::from_gradient(c, &Tensor::from_vec(v.clone())).unwrap())
            .collect();
        let probs: Vec<f64> = (0..m).map(|c| if c == 0 { 0.5 } else { 0.5 / (m - 1) as f64 }).collect();
        let base = features(&CosineSimilarityMatrix::from_maps(&sal, 0, probs.clone()).unwrap()).unwrap();
        let mut order: Vec<usize> = (1..m).collect();
        order.shuffle(&mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(perm_seed));
        let mut shuffled = vec![sal[0].clone()];
        shuffled.extend(order.iter().map(|&i| sal[i].clone()));
        let other = features(&CosineSimilarityMatrix::from_maps(&shuffled, 0, probs).unwrap()).unwrap();
        for (a, b) in base.to_array().iter().zip(other.to_array()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    fn calibration_is_the_smallest_threshold_reaching_tpr(s in scores(60), tpr in 0.01..=1.0f64) {
        let t = calibrate(&s, tpr).unwrap();
        prop_assert!(s.contains(&t));
        let n = s.len() as f64;
        let accepted = s.iter().filter(|&&v| v <= t).count() as f64;
        prop_assert!(accepted >= tpr * n - 1e-9);
        if let Some(below) = s.iter().copied().filter(|&v| v < t).reduce(f64::max) {
            let fewer = s.iter().filter(|&&v| v <= below).count() as f64;
            prop_assert!(fewer < tpr * n - 1e-9);
        }
    }

    fn adding_mass_never_raises_the_score((det, rows) in fitted_detector(), pick in any::<prop::sample::Index>(), j in any::<prop::sample::Index>(), shift in -1.0..1.0f64) {
        let f: Vec<f64> = pick.get(&rows).iter().map(|v| v + shift).collect();
        let before = det.score(&f).unwrap();
        let mut bumped = det.clone();
        let k = j.index(det.projections().len());
        let v = det.projected(&f).unwrap()[k];
        bumped.histograms_mut()[k].add(v);
        prop_assert!(bumped.score(&f).unwrap() <= before);
    }

    fn detector_round_trip_is_bit_exact((mut det, rows) in fitted_detector(), tpr in 0.5..1.0f64) {
        let clean = det.score_batch(&rows).unwrap();
        det.calibrate(&clean, tpr).unwrap();
        det.metadata.insert("top_n".into(), "5".into());
        let bytes = det.to_container().unwrap().to_bytes().unwrap();
        let back = LodaDetector::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        prop_assert_eq!(&back, &det);
        for r in &rows {
            let probe: Vec<f64> = r.iter().map(|v| v * 1.3 - 0.2).collect();
            prop_assert_eq!(back.score(&probe).unwrap().to_bits(), det.score(&probe).unwrap().to_bits());
        }
    }

    fn one_projection_ranks_like_a_histogram(
        data in prop::collection::vec(-5.0..5.0f64, 2..40),
        queries in prop::collection::vec(-6.0..6.0f64, 2..20),
        bins in 1usize..15,
        standardize in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let (min, max) = data.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
        prop_assume!(max - min > 1e-3);
        let lo = min - 0.05 * (max - min);
        let width = 1.1 * (max - min) / bins as f64;
        let near_edge = |v: f64| {
            let u = (v - lo) / width;
            (u - u.round()).abs() < 1e-6
        };
        prop_assume!(!data.iter().chain(&queries).any(|&v| near_edge(v)));
        let bin_of = |v: f64| -> Option<usize> {
            let u = ((v - lo) / width).floor();
            (u >= 0.0 && u < bins as f64).then_some(u as usize)
        };
        let mut counts = vec![0usize; bins];
        for &v in &data {
            counts[bin_of(v).unwrap()] += 1;
        }
        let oracle = |v: f64| -> f64 {
            let c = bin_of(v).map_or(0, |b| counts[b]);
            -((c as f64 + 1.0) / ((data.len() + bins) as f64 * width)).ln()
        };
        let rows: Vec<Vec<f64>> = data.iter().map(|&v| vec![v]).collect();
        let det = LodaDetector::fit(&rows, &LodaConfig { projections: 1, bins, standardize, seed }).unwrap();
        for &a in &queries {
            for &b in &queries {
                let got = det.score(&[a]).unwrap().partial_cmp(&det.score(&[b]).unwrap());
                prop_assert_eq!(got, oracle(a).partial_cmp(&oracle(b)), "a={} b={}", a, b);
            }
        }
    }

    fn attacks_respect_budget_and_domain((model, x) in model_and_input(), cfg in attack_config(), kind in 0usize..5) {
        let y = model.predict(&x).unwrap();
        let mut cfg = cfg;
        let result = match kind {
            0 => pgd(&model, &x, y, &cfg),
            1 => {
                cfg.target = Target::RandomNonTrue;
                pgd_targeted(&model, &x, y, &cfg)
            }
            2 => noise_attack(&model, &x, y, &cfg),
            3 => boundary_proximal(&model, &x, y, &cfg),
            _ => csa(&model.swap_activations(gga_core::nn::ActivationMode::Softplus, 10.0), &x, y, &cfg),
        }
        .unwrap();
        let delta: Vec<f64> = result.x_adv.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
        prop_assert!(cfg.norm.of(&delta) <= cfg.epsilon + 1e-9);
        prop_assert!(result.x_adv.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    fn auroc_equals_pairwise_enumeration(pos in scores(100), neg in scores(100)) {
        let got = auroc(&ScoredSet::new(pos.clone(), neg.clone())).unwrap();
        prop_assert_eq!(got, brute_auroc(&pos, &neg));
    }

    fn auroc_survives_monotone_transforms(
        pos in prop::collection::vec(-1000i32..1000, 1..60),
        neg in prop::collection::vec(-1000i32..1000, 1..60),
        which in 0usize..3,
    ) {
        let f = |v: i32| -> f64 {
            let v = f64::from(v);
            match which {
                0 => (v / 100.0).exp(),
                1 => v.powi(3) + 7.0,
                _ => (v / 300.0).atan() * 4.0 - 1.0,
            }
        };
        let raw = ScoredSet::new(pos.iter().map(|&v| f64::from(v)).collect(), neg.iter().map(|&v| f64::from(v)).collect());
        let mapped = ScoredSet::new(pos.iter().map(|&v| f(v)).collect(), neg.iter().map(|&v| f(v)).collect());
        prop_assert_eq!(auroc(&raw).unwrap(), auroc(&mapped).unwrap());
    }

    fn raising_a_negative_never_lowers_tnr(pos in scores(60), neg in scores(60), i in any::<prop::sample::Index>(), up in 0.0..4.0f64, tpr in 0.05..1.0f64) {
        let before = tnr_at_tpr(&ScoredSet::new(pos.clone(), neg.clone()), tpr).unwrap();
        let mut raised = neg.clone();
        raised[i.index(neg.len())] += up;
        let after = tnr_at_tpr(&ScoredSet::new(pos, raised), tpr).unwrap();
        prop_assert!(after >= before);
        prop_assert!((0.0..=100.0).contains(&after));
    }

    fn report_json_round_trips(
        clean in scores(40),
        sources in prop::collection::vec((prop::sample::select(vec!["pgd", "uniform-noise", "boundary", "rotation", "ood-svhn", "t-sce"]), scores(30)), 1..4),
        tpr in 0.5..1.0f64,
        per_source in any::<bool>(),
    ) {
        let sources: Vec<(String, Vec<f64>)> = sources.into_iter().map(|(t, s)| (t.to_string(), s)).collect();
        let mode = if per_source { AurocMode::PerSource } else { AurocMode::Pooled };
        let report = evaluate_scores(&clean, &sources, &EvalOptions { tpr, auroc_mode: mode }).unwrap();
        let back = DetectionReport::from_json(&report.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, report);
    }

    fn model_checkpoint_round_trip_is_bit_exact((model, x) in model_and_input()) {
        let bytes = model.to_container().unwrap().to_bytes().unwrap();
        let back = Model::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        let (a, b) = (model.forward(&x).unwrap(), back.forward(&x).unwrap());
        prop_assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    fn seeded_operations_are_deterministic((model, x) in model_and_input(), cfg in attack_config(), seed in any::<u64>()) {
        let y = model.predict(&x).unwrap();
        prop_assert_eq!(pgd(&model, &x, y, &cfg).unwrap(), pgd(&model, &x, y, &cfg).unwrap());
        let opts = ZetaOptions { sigma: 0.1, injections: 8, class: ZetaClass::Predicted, loss: LossKind::Sce, seed };
        prop_assert_eq!(format!("{:?}", zeta_stats(&model, &x, y, &opts)), format!("{:?}", zeta_stats(&model, &x, y, &opts)));
        let blobs = gen_blobs(12, 3, 2, 3.0, seed).unwrap();
        prop_assert_eq!(&blobs, &gen_blobs(12, 3, 2, 3.0, seed).unwrap());
        let rows: Vec<Vec<f64>> = blobs.inputs.iter().map(|t| t.data().to_vec()).collect();
        let cfg = LodaConfig { projections: 4, bins: 5, standardize: true, seed };
        prop_assert_eq!(LodaDetector::fit(&rows, &cfg).unwrap(), LodaDetector::fit(&rows, &cfg).unwrap());
    }

    fn zeta_stays_in_unit_interval((model, x) in model_and_input(), sigma in 0.001..1.0f64, seed in any::<u64>(), true_class in any::<bool>()) {
        let class = if true_class { ZetaClass::True } else { ZetaClass::Predicted };
        let opts = ZetaOptions { sigma, injections: 16, class, loss: LossKind::Sce, seed };
        match zeta_stats(&model, &x, 0, &opts) {
            Ok(s) => {
                prop_assert_eq!(s.values.len() + s.undefined, 16);
                prop_assert!(s.values.iter().all(|v| (-1.0..=1.0).contains(v)));
            }
            Err(e) => prop_assert!(matches!(e, gga_core::Error::Undefined(_)), "{}", e),
        }
    }
}

/// Every property with its name.
pub const ALL: &[(&str, fn())] = &[
    ("csm_is_symmetric_with_unit_diagonal_and_bounded", csm_is_symmetric_with_unit_diagonal_and_bounded),
    ("sign_cosine_matches_hamming_distance", sign_cosine_matches_hamming_distance),
    ("top_n_is_a_leading_submatrix", top_n_is_a_leading_submatrix),
    ("batch_matches_single", batch_matches_single),
    ("features_ignore_order_of_other_classes", features_ignore_order_of_other_classes),
    ("calibration_is_the_smallest_threshold_reaching_tpr", calibration_is_the_smallest_threshold_reaching_tpr),
    ("adding_mass_never_raises_the_score", adding_mass_never_raises_the_score),
    ("detector_round_trip_is_bit_exact", detector_round_trip_is_bit_exact),
    ("one_projection_ranks_like_a_histogram", one_projection_ranks_like_a_histogram),
    ("attacks_respect_budget_and_domain", attacks_respect_budget_and_domain),
    ("auroc_equals_pairwise_enumeration", auroc_equals_pairwise_enumeration),
    ("auroc_survives_monotone_transforms", auroc_survives_monotone_transforms),
    ("raising_a_negative_never_lowers_tnr", raising_a_negative_never_lowers_tnr),
    ("report_json_round_trips", report_json_round_trips),
    ("model_checkpoint_round_trip_is_bit_exact", model_checkpoint_round_trip_is_bit_exact),
    ("seeded_operations_are_deterministic", seeded_operations_are_deterministic),
    ("zeta_stays_in_unit_interval", zeta_stays_in_unit_interval),
];
