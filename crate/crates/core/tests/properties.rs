mod common;

use std::collections::BTreeSet;

use common::*;
use cran_core::linalg::{c, CMat};
use cran_core::network::{npc, user_rates, NetworkInstance};
use cran_core::precoder::PrecoderSet;
use cran_core::stage1::{init_precoders, solve_alternative_problem, InitScheme, Stage1Settings};
use cran_core::stage2::{extract_active_set, rln_weights_from_powers};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_precoders(inst: &NetworkInstance, seed: u64) -> PrecoderSet {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let users: Vec<usize> = (0..inst.num_users()).collect();
    let mut v = PrecoderSet::zeros(inst, &users, None);
    let (m, d) = (v.tx_antennas(), v.streams());
    for (_, b) in v.iter_mut() {
        let scale = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..1.0) };
        *b = CMat::from_fn(m, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))) * c(scale, 0.0);
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn instances_are_reproducible_and_round_trip(seed in any::<u64>(), i in 2usize..8, k in 1usize..5) {
        let cfg = small_config(i, k, 2.min(i), 1.0, seed);
        let a = instance(&cfg);
        let b = instance(&cfg);
        prop_assert_eq!(&a, &b);
        let back = NetworkInstance::from_json(&a.to_json().unwrap()).unwrap();
        prop_assert_eq!(&a, &back);
        for u in 0..k {
            prop_assert_eq!(a.candidate_rrhs[u].len(), 2.min(i));
        }
    }

    #[test]
    fn npc_terms_add_up(seed in any::<u64>(), pick in any::<u64>()) {
        let inst = instance(&small_config(5, 3, 3, 1.0, seed));
        let v = random_precoders(&inst, seed ^ 1);
        let active: BTreeSet<usize> = (0..5).filter(|i| pick >> i & 1 == 1).collect();
        let kept = v.restrict(&active);
        prop_assert!(kept.rrhs().is_subset(&active));
        let rates = user_rates(&inst, &kept);
        let n = npc(&inst, &kept, &rates, &active).unwrap();
        prop_assert!((n.objective_value - (n.amplifier_power + n.fronthaul_rate_power + n.active_circuit_power)).abs() < 1e-9);
        prop_assert!((n.full_npc - (n.objective_value + n.sleep_power + n.bbu_power)).abs() < 1e-9);
        let tx: f64 = active.iter().map(|&i| rrh_power(&kept, i)).sum();
        prop_assert!((n.transmit_power_total - tx).abs() < 1e-9);
        prop_assert!(rates.iter().all(|r| *r >= 0.0));
    }

    #[test]
    fn rln_weights_shrink_with_power(p in proptest::collection::vec(0.0f64..4.0, 4), loads in proptest::collection::vec(0usize..4, 4)) {
        let inst = instance(&small_config(4, 2, 2, 2.0, 0));
        let w = rln_weights_from_powers(&inst, &p, &loads, 1e-5);
        for i in 0..4 {
            prop_assert!(w.omega[i] > inst.power_model.eta(i));
            let mut more = p.clone();
            more[i] += 0.5;
            let w2 = rln_weights_from_powers(&inst, &more, &loads, 1e-5);
            prop_assert!(w2.omega[i] < w.omega[i]);
            prop_assert!((w.omega[i] - inst.power_model.eta(i) - w.p_tilde_c[i] / (p[i] + 1e-5)).abs() <= 1e-9 * w.omega[i]);
        }
    }

    #[test]
    fn extraction_is_a_strict_threshold(seed in any::<u64>(), theta in 1e-6f64..1.0) {
        let inst = instance(&small_config(5, 3, 3, 1.0, seed));
        let v = random_precoders(&inst, seed);
        let a = extract_active_set(&v, theta);
        for i in v.rrhs() {
            prop_assert_eq!(a.contains(&i), v.transmit_power(i) > theta);
        }
    }

    #[test]
    fn svd_init_fills_each_power_cap(seed in any::<u64>()) {
        let inst = instance(&small_config(4, 3, 2, 1.0, seed));
        let users = [0, 1, 2];
        let v = init_precoders(&inst, &users, InitScheme::SvdInitial, None);
        for i in v.rrhs() {
            prop_assert!((v.transmit_power(i) - inst.power_model.p_max(i)).abs() < 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn admission_objective_never_increases(seed in any::<u64>(), rate_min in 1.0f64..6.0) {
        let inst = instance(&small_config(4, 3, 2, rate_min, seed));
        let init = init_precoders(&inst, &[0, 1, 2], InitScheme::SvdInitial, None);
        let res = solve_alternative_problem(&inst, &init, &Stage1Settings::default()).unwrap();
        for w in res.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", res.objective_trace);
        }
        for (k, a) in &res.alphas {
            prop_assert!((0.0..=1.0).contains(a));
            if res.admitted_users.contains(k) {
                prop_assert!(*a >= 1.0 - 1e-4);
            }
        }
    }
}
