mod common;

use common::{gaussian, orthonormal, random_shared, rel_diff, rng, shared_reconstruct_loops};
use mha_tucker::linalg::orthonormality_defect;
use mha_tucker::tensor::{frobenius_norm, mode_n_product, relative_error, DenseTensor};
use mha_tucker::tucker::*;

/// `G ×_0 Q0 ×_1 Q1 … ` with random orthonormal `Q_n` and Gaussian `G`.
fn exact_tucker(shape: &[usize], ranks: &[usize], seed: u64) -> DenseTensor {
    let mut r = rng(seed);
    let mut t = gaussian(ranks, &mut r);
    for (mode, (&i, &k)) in shape.iter().zip(ranks).enumerate() {
        t = mode_n_product(&t, &orthonormal(i, k, &mut r), mode).unwrap();
    }
    t
}

#[test]
fn hosvd_recovers_exact_multilinear_rank() {
    let t = exact_tucker(&[5, 6, 4], &[2, 2, 2], 21);
    let f = hosvd(&t, &[2, 2, 2]).unwrap();
    assert!(relative_error(&t, &f.reconstruct()).unwrap() <= 1e-9);
    for u in &f.factors {
        assert!(orthonormality_defect(u) <= 1e-9);
    }
}

#[test]
fn hooi_recovers_exact_multilinear_rank_quickly() {
    let t = exact_tucker(&[7, 6, 5, 3], &[3, 2, 2, 2], 22);
    let (f, info) = hooi(&t, &[3, 2, 2, 2], &SolverOptions::default()).unwrap();
    assert!(relative_error(&t, &f.reconstruct()).unwrap() <= 1e-9);
    assert!(info.converged);
    assert!(info.iterations <= 2, "{info:?}");
}

#[test]
fn hooi_improves_on_hosvd_for_noisy_input() {
    for seed in 0..5 {
        let signal = exact_tucker(&[10, 8, 6], &[4, 3, 2], 100 + seed);
        let mut noise = gaussian(&[10, 8, 6], &mut rng(200 + seed));
        noise = noise.scaled(0.1 * frobenius_norm(&signal) / frobenius_norm(&noise));
        let t = signal.add(&noise).unwrap();
        let init = hosvd(&t, &[4, 3, 2]).unwrap();
        let init_fit = 1.0 - relative_error(&t, &init.reconstruct()).unwrap();
        let (f, info) = hooi(&t, &[4, 3, 2], &SolverOptions::default()).unwrap();
        let fit = 1.0 - relative_error(&t, &f.reconstruct()).unwrap();
        assert!(fit >= init_fit - 1e-12, "seed {seed}: {fit} < {init_fit}");
        assert!((info.fit_history[0] - init_fit).abs() < 1e-12);
        assert!((info.fit - fit).abs() < 1e-12);
    }
}

#[test]
fn shared_exact_structure_recovered() {
    let mut r = rng(23);
    let truth = random_shared([64, 16, 4, 8], [8, 4, 2], &mut r);
    let w = reconstruct_shared(&truth);
    let (st, info) = shared_factor_tucker(&w, RankSpec::new(8, 4, 2), &SolverOptions::default()).unwrap();
    assert!(relative_error(&w, &st.reconstruct()).unwrap() <= 1e-9);
    assert!(info.iterations <= 5);
    for u in st.factors() {
        assert!(orthonormality_defect(u) <= 1e-9);
    }
    assert_eq!(st.parameter_count(), 8 * 8 * 4 * 2 + 64 * 8 + 16 * 4 + 4 * 2);
}

#[test]
fn shared_full_ranks_lossless() {
    let w = gaussian(&[12, 4, 4, 3], &mut rng(24));
    let (st, _) = shared_factor_tucker(&w, RankSpec::new(12, 4, 4), &SolverOptions::default()).unwrap();
    assert!(relative_error(&w, &st.reconstruct()).unwrap() <= 1e-10);
}

#[test]
fn reconstruct_matches_elementwise_oracle() {
    let st = random_shared([64, 16, 4, 8], [8, 4, 2], &mut rng(25));
    let fast = reconstruct_shared(&st);
    let slow = shared_reconstruct_loops(&st);
    assert!(rel_diff(&slow, &fast) <= 1e-12);

    // and head by head through plain 3-way Tucker products
    for head in 0..st.heads() {
        let per_head = TuckerFactors {
            core: st.head_core(head).unwrap(),
            factors: vec![st.u1.clone(), st.u2.clone(), st.u3.clone()],
        }
        .reconstruct();
        assert!(rel_diff(&fast.slice_last(head).unwrap(), &per_head) <= 1e-12);
    }
}

#[test]
fn objective_forms_agree() {
    let mut r = rng(26);
    let st = random_shared([64, 16, 4, 8], [8, 4, 2], &mut r);
    let w = gaussian(&[64, 16, 4, 8], &mut r);
    let four_way = shared_objective(&w, &st).unwrap();
    let per_head = shared_objective_per_head(&w, &st).unwrap();
    assert!((four_way - per_head).abs() <= 1e-12 * four_way);

    let exact = reconstruct_shared(&st);
    assert!(shared_objective(&exact, &st).unwrap() <= 1e-18);
    let zero = SharedTucker::new(st.u1.clone(), st.u2.clone(), st.u3.clone(), DenseTensor::zeros(st.cores.shape())).unwrap();
    assert_eq!(shared_objective(&DenseTensor::zeros(&[64, 16, 4, 8]), &zero).unwrap(), 0.0);
}

#[test]
fn fit_sequences_are_monotone() {
    for seed in 0..10 {
        let w = gaussian(&[32, 8, 4, 4], &mut rng(300 + seed));
        let (_, info) = shared_factor_tucker(&w, RankSpec::new(4, 3, 2), &SolverOptions::default()).unwrap();
        assert!(info.fit_history.windows(2).all(|p| p[1] >= p[0] - 1e-12), "{:?}", info.fit_history);
        let (_, info) = hooi(&w, &[4, 3, 2, 3], &SolverOptions::default()).unwrap();
        assert!(info.fit_history.windows(2).all(|p| p[1] >= p[0] - 1e-12), "{:?}", info.fit_history);
    }
}

#[test]
fn sharing_never_beats_independent_heads() {
    for seed in 0..5 {
        let w = gaussian(&[16, 4, 4, 4], &mut rng(400 + seed));
        let ranks = RankSpec::new(4, 2, 2);
        let opts = SolverOptions::default();
        let (st, _) = shared_factor_tucker(&w, ranks, &opts).unwrap();
        let shared = shared_objective(&w, &st).unwrap();
        let mut independent = 0.0;
        for head in 0..4 {
            let w_i = w.slice_last(head).unwrap();
            let (f, _) = hooi(&w_i, &[4, 2, 2], &opts).unwrap();
            let e = frobenius_norm(&w_i.sub(&f.reconstruct()).unwrap());
            independent += 0.5 * e * e;
        }
        assert!(shared >= independent - 1e-9, "seed {seed}: {shared} < {independent}");
    }
}

#[test]
fn trawl_baseline() {
    let mut r = rng(27);
    let mats: Vec<_> = (0..4).map(|_| gaussian(&[16, 16], &mut r)).collect();
    let opts = SolverOptions::default();
    let (full, _) = trawl_stack_tucker(&mats[0], &mats[1], &mats[2], &mats[3], [16, 16, 4], &opts).unwrap();
    let stacked = DenseTensor::from_fn(&[16, 16, 4], |ix| mats[ix[2]].at(ix[0], ix[1]));
    assert!(relative_error(&stacked, &full.reconstruct()).unwrap() <= 1e-10);

    let (f, _) = trawl_stack_tucker(&mats[0], &mats[1], &mats[2], &mats[3], [8, 8, 2], &opts).unwrap();
    let (oracle, _) = hooi(&stacked, &[8, 8, 2], &opts).unwrap();
    let e1 = relative_error(&stacked, &f.reconstruct()).unwrap();
    let e2 = relative_error(&stacked, &oracle.reconstruct()).unwrap();
    assert!((e1 - e2).abs() <= 1e-9);
    assert_eq!(f.factors[0].shape(), &[16, 8]);
    assert_eq!(f.factors[1].shape(), &[16, 8]);
    assert_eq!(f.factors[2].shape(), &[4, 2]);
    assert!(trawl_stack_tucker(&mats[0], &mats[1], &mats[2], &mats[3], [8, 8, 5], &opts).is_err());
}
