use irsbf_autograd::gradcheck::grad_check;
use irsbf_core::channel::effective_miso;
use irsbf_core::metrics::{wsr_effective, LinkBudget};
use irsbf_core::scenario::Scenario;
use irsbf_core::{ComplexMatrix, C64};
use irsbf_nets::dataset::generate_dataset_phase;
use irsbf_nets::features::stack_icsi;
use irsbf_nets::{build_feature_input, build_icsi_input, FeatureTensor, IaFnn, IaFnnConfig, LaClConfig, LaClGnn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_lacl() -> LaClConfig {
    LaClConfig { n: 4, m: 2, tau: 2, conv_channels: 2, kernel: 3, pool: 3, feature: 8, width: 12, layers: 2 }
}

fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> ComplexMatrix {
    ComplexMatrix::from_fn(r, c, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_features(cfg: &LaClConfig, rng: &mut ChaCha8Rng) -> FeatureTensor {
    let hist: Vec<_> = (0..cfg.tau).map(|_| random_matrix(cfg.n, cfg.m, rng)).collect();
    build_feature_input(&hist, cfg.tau).unwrap()
}

/// Fresh parameters drawn uniformly (including biases) so that no entry sits
/// at its special initial value.
fn perturb(params: &mut irsbf_autograd::ParamSet, rng: &mut ChaCha8Rng, scale: f64) {
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += scale * rng.random_range(-1.0..1.0);
        }
    }
}

#[test]
fn lacl_is_permutation_equivariant() {
    let cfg = LaClConfig::desk();
    let net = LaClGnn::new(cfg.clone(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, perm) in [(3, vec![2, 0, 1]), (4, vec![1, 3, 0, 2]), (5, vec![4, 3, 2, 1, 0])] {
        let feats: Vec<_> = (0..k).map(|_| random_features(&cfg, &mut rng)).collect();
        let permuted: Vec<_> = perm.iter().map(|p| feats[*p].clone()).collect();
        let a = net.forward(&feats, 1.0).unwrap();
        let b = net.forward(&permuted, 1.0).unwrap();
        for (x, y) in a.phases.phases().iter().zip(b.phases.phases()) {
            assert!((x - y).abs() < 1e-12, "phase {x} vs {y}");
        }
        let (wa, wb) = (a.aux_beams.matrix(), b.aux_beams.matrix());
        for (col, p) in perm.iter().enumerate() {
            assert!((wb.column(col) - wa.column(*p)).norm() < 1e-12);
        }
    }
}

#[test]
fn lacl_duplicate_users_get_identical_beams() {
    let cfg = tiny_lacl();
    let net = LaClGnn::new(cfg.clone(), 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_features(&cfg, &mut rng);
    let g = random_features(&cfg, &mut rng);
    let out = net.forward(&[f.clone(), g, f], 1.0).unwrap();
    let w = out.aux_beams.matrix();
    assert!((w.column(0) - w.column(2)).norm() == 0.0);
}

#[test]
fn lacl_parameter_count_is_independent_of_users() {
    let cfg = tiny_lacl();
    let net = LaClGnn::new(cfg.clone(), 13).unwrap();
    let before = net.to_bytes().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [2, 6] {
        let feats: Vec<_> = (0..k).map(|_| random_features(&cfg, &mut rng)).collect();
        net.forward(&feats, 1.0).unwrap();
        assert_eq!(net.to_bytes().unwrap(), before);
    }
}

#[test]
fn lacl_outputs_are_feasible_for_random_parameters() {
    let cfg = tiny_lacl();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..200 {
        let mut net = LaClGnn::new(cfg.clone(), seed).unwrap();
        perturb(net.params_mut(), &mut rng, 0.5);
        let k = rng.random_range(1..5);
        let feats: Vec<_> = (0..k).map(|_| random_features(&cfg, &mut rng)).collect();
        let out = net.forward(&feats, 2.5).unwrap();
        assert!((out.aux_beams.power() - 2.5).abs() < 1e-12);
        assert!(out.phases.phases().iter().all(|p| (0.0..std::f64::consts::TAU).contains(p)));
        for c in out.phases.coefficients() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn lacl_loss_matches_metrics_module() {
    let cfg = tiny_lacl();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut net = LaClGnn::new(cfg.clone(), 14).unwrap();
    perturb(net.params_mut(), &mut rng, 0.2);
    let k = 3;
    let budget = LinkBudget { noise_power: vec![0.4, 0.7, 0.2], weights: vec![1.0, 0.5, 2.0] };
    let power = 1.7;
    let examples: Vec<Vec<FeatureTensor>> = (0..4).map(|_| (0..k).map(|_| random_features(&cfg, &mut rng)).collect()).collect();
    // per example: the G and f that generate the cascaded target channels
    let (mut targets, mut truth) = (Vec::new(), Vec::new());
    for _ in 0..4 {
        let g = random_matrix(cfg.n, cfg.m, &mut rng);
        let fs: Vec<_> = (0..k).map(|_| random_matrix(cfg.n, 1, &mut rng)).collect();
        targets.push(fs.iter().map(|f| irsbf_core::channel::cascaded_los(f, &g).unwrap()).collect::<Vec<_>>());
        truth.push((g, fs));
    }
    let feats: Vec<_> = examples.iter().map(Vec::as_slice).collect();
    let tg: Vec<_> = targets.iter().map(Vec::as_slice).collect();
    let loss = net.loss(&feats, &tg, &budget, power).unwrap();

    let outs = net.forward_batch(&feats, power).unwrap();
    let mut expected = 0.0;
    for (out, (g, fs)) in outs.iter().zip(&truth) {
        let mut h = ComplexMatrix::zeros(k, cfg.m);
        for (u, f) in fs.iter().enumerate() {
            h.set_row(u, &effective_miso(f, &out.phases, g).unwrap().row(0));
        }
        expected += wsr_effective(&h, out.aux_beams.matrix(), &budget).unwrap();
    }
    expected /= 4.0;
    assert!((loss + expected).abs() < 1e-12 * expected.abs().max(1.0), "{loss} vs {expected}");

    let zeros = vec![vec![ComplexMatrix::zeros(cfg.n, cfg.m); k]; 4];
    let zs: Vec<_> = zeros.iter().map(Vec::as_slice).collect();
    assert_eq!(net.loss(&feats, &zs, &budget, power).unwrap(), 0.0);
}

#[test]
fn lacl_end_to_end_gradient() {
    let cfg = tiny_lacl();
    let scenario = Scenario::with_dimensions(2, 2, 2, 2);
    let data = generate_dataset_phase(&scenario, 2, 3, 7).unwrap();
    let net = LaClGnn::new(cfg, 15).unwrap();
    let feats: Vec<_> = data.examples.iter().map(|e| e.features.as_slice()).collect();
    let tg: Vec<_> = data.examples.iter().map(|e| e.cascaded.as_slice()).collect();
    let budget = scenario.budget();
    let err = grad_check(
        |_, vars| Ok(net.loss_vars(vars, &feats, &tg, &budget, scenario.power).unwrap()),
        net.params().tensors(),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn iafnn_is_permutation_equivariant() {
    let net = IaFnn::new(IaFnnConfig::new(4), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for (k, perm) in [(2, vec![1, 0]), (3, vec![2, 0, 1]), (6, vec![5, 1, 4, 0, 3, 2])] {
        let h = random_matrix(k, 4, &mut rng);
        let hp = ComplexMatrix::from_fn(k, 4, |r, c| h[(perm[r], c)]);
        let a = net.forward(&build_icsi_input(&h).unwrap(), 1.0).unwrap();
        let b = net.forward(&build_icsi_input(&hp).unwrap(), 1.0).unwrap();
        for (col, p) in perm.iter().enumerate() {
            assert!((b.matrix().column(col) - a.matrix().column(*p)).norm() < 1e-12);
        }
    }
}

#[test]
fn iafnn_outputs_are_feasible_for_random_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for seed in 0..200 {
        let mut net = IaFnn::new(IaFnnConfig::new(3), seed).unwrap();
        perturb(net.params_mut(), &mut rng, 0.5);
        let k = rng.random_range(1..6);
        let w = net.forward(&build_icsi_input(&random_matrix(k, 3, &mut rng)).unwrap(), 0.3).unwrap();
        assert!((w.power() - 0.3).abs() < 1e-12);
    }
}

#[test]
fn iafnn_loss_matches_metrics_module() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut net = IaFnn::new(IaFnnConfig { input_scale: 2.0, ..IaFnnConfig::new(3) }, 22).unwrap();
    perturb(net.params_mut(), &mut rng, 0.2);
    let budget = LinkBudget { noise_power: vec![0.5, 0.1], weights: vec![1.5, 1.0] };
    let hs: Vec<_> = (0..5).map(|_| random_matrix(2, 3, &mut rng)).collect();
    let xs: Vec<_> = hs.iter().map(|h| build_icsi_input(h).unwrap()).collect();
    let xr: Vec<_> = xs.iter().collect();
    let hr: Vec<_> = hs.iter().collect();
    let loss = net.loss(&xr, &hr, &budget, 2.0).unwrap();
    let beams = net.forward_batch(&xr, 2.0).unwrap();
    let expected: f64 =
        hs.iter().zip(&beams).map(|(h, w)| wsr_effective(h, w.matrix(), &budget).unwrap()).sum::<f64>() / 5.0;
    assert!((loss + expected).abs() < 1e-12 * expected.max(1.0), "{loss} vs {expected}");
}

#[test]
fn iafnn_end_to_end_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = IaFnn::new(IaFnnConfig::new(2), 23).unwrap();
    let budget = LinkBudget::uniform(2, 0.5);
    let hs: Vec<_> = (0..3).map(|_| random_matrix(2, 2, &mut rng)).collect();
    let est: Vec<_> = hs.iter().map(|h| h + random_matrix(2, 2, &mut rng).scale(0.2)).collect();
    let xs: Vec<_> = est.iter().map(|h| build_icsi_input(h).unwrap()).collect();
    let xr: Vec<_> = xs.iter().collect();
    let hr: Vec<_> = hs.iter().collect();
    let err = grad_check(|_, vars| Ok(net.loss_vars(vars, &xr, &hr, &budget, 1.0).unwrap()), net.params().tensors(), 1e-6)
        .unwrap();
    assert!(err < 1e-3, "max relative error {err}");
}

#[test]
fn icsi_batches_scale_inputs() {
    let h = ComplexMatrix::from_element(1, 2, C64::new(1.0, -2.0));
    let x = build_icsi_input(&h).unwrap();
    let (t, k) = stack_icsi(&[&x], 3.0).unwrap();
    assert_eq!(k, 1);
    // row = [Re ĥ, Im ĥ] with ĥ = conj(row of H)
    assert_eq!(t.data(), &[3.0, 3.0, 6.0, 6.0]);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn beam_network_spends_exactly_the_budget(
        seed in 0u64..1_000,
        k in 1usize..7,
        log_power in -3.0f64..3.0,
        scale in 0.01f64..3.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = IaFnn::new(IaFnnConfig::new(3), seed).unwrap();
        perturb(net.params_mut(), &mut rng, scale);
        let power = 10f64.powf(log_power);
        let w = net.forward(&build_icsi_input(&random_matrix(k, 3, &mut rng)).unwrap(), power).unwrap();
        proptest::prop_assert!((w.power() - power).abs() <= 1e-12 * power);
    }

    #[test]
    fn predicted_phases_stay_in_range(seed in 0u64..1_000, k in 1usize..5, scale in 0.01f64..3.0) {
        let cfg = tiny_lacl();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = LaClGnn::new(cfg.clone(), seed).unwrap();
        perturb(net.params_mut(), &mut rng, scale);
        let feats: Vec<_> = (0..k).map(|_| random_features(&cfg, &mut rng)).collect();
        let out = net.forward(&feats, 1.0).unwrap();
        proptest::prop_assert!(out.phases.phases().iter().all(|p| (0.0..std::f64::consts::TAU).contains(p)));
    }
}
