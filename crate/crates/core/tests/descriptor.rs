mod common;

use common::*;
use proptest::prelude::*;
use refsr_core::data::procedural_texture;
use refsr_core::descriptor::*;
use refsr_core::{Error, ImageTensor};

fn small_matcher(kind: MatcherKind) -> Matcher {
    Matcher::new(EncoderConfig { channels: [4, 8, 8], dim: 8 }, kind, 3)
}

#[test]
fn lr_and_hr_training_crops_give_ten_and_forty_cells() {
    let m = small_matcher(MatcherKind::Student);
    let lr = procedural_texture(1, 40, 40);
    let g = m.input.extract(&m.store, &lr, Role::Lr).unwrap();
    assert_eq!((g.h, g.w, g.d, g.stride), (10, 10, 8, 4));
    // The student encodes the ×4 upsampled LR: one cell per LR pixel.
    let g = m.input_grid(&lr).unwrap();
    assert_eq!((g.h, g.w), (40, 40));
    let hr = procedural_texture(2, 160, 160);
    let g = m.ref_grid(&hr).unwrap();
    assert_eq!((g.h, g.w), (40, 40));
}

#[test]
fn extraction_is_deterministic() {
    let m = small_matcher(MatcherKind::Teacher);
    let img = procedural_texture(5, 24, 20);
    let a = m.ref_grid(&img).unwrap();
    let b = m.ref_grid(&img).unwrap();
    assert_eq!(a.data, b.data);
    assert!(a.data.iter().all(|v| v.is_finite()));
}

#[test]
fn branches_start_equal_but_do_not_share_weights() {
    let mut m = small_matcher(MatcherKind::Teacher);
    let img = procedural_texture(5, 16, 16);
    assert_eq!(m.input_grid(&img).unwrap().data, m.ref_grid(&img).unwrap().data);
    let before = m.ref_grid(&img).unwrap().data;
    let n = m.store.params().len();
    assert_eq!(n % 2, 0);
    for p in &mut m.store.params_mut()[..n / 2] {
        p.value.data_mut().iter_mut().for_each(|v| *v *= -1.5);
    }
    assert_ne!(m.input_grid(&img).unwrap().data, before);
    assert_eq!(m.ref_grid(&img).unwrap().data, before);
}

#[test]
fn channel_mismatch_is_configuration_error() {
    let m = small_matcher(MatcherKind::Teacher);
    assert!(matches!(m.input_grid(&ImageTensor::zeros(8, 8, 1)), Err(Error::Config(_))));
}

#[test]
fn patchify_radius_zero_is_identity() {
    let g = random_grid(&mut rng(1), 3, 4, 5);
    assert_eq!(patchify(&g, 0), g);
}

#[test]
fn patchify_interior_and_corner() {
    let g = random_grid(&mut rng(2), 4, 4, 3);
    let p = patchify(&g, 1);
    assert_eq!(p.d, 27);
    let centre = p.descriptor(1, 2);
    assert_eq!(&centre[4 * 3..5 * 3], g.descriptor(1, 2).as_slice());
    for (blk, (dx, dy)) in (0..9).map(|b| (b, (b % 3, b / 3))) {
        let want = g.descriptor(dx, 1 + dy);
        assert_eq!(&centre[blk * 3..blk * 3 + 3], want.as_slice());
    }
    let corner = p.descriptor(0, 0);
    let zero_blocks = (0..9).filter(|b| corner[b * 3..b * 3 + 3].iter().all(|&v| v == 0.0)).count();
    assert_eq!(zero_blocks, 5);
}

#[test]
fn self_match_and_shift() {
    let g = random_grid(&mut rng(3), 4, 5, 6);
    let f = match_descriptors(&g, &g).unwrap();
    for (p, t) in f.targets.iter().enumerate() {
        assert_eq!([p % 5, p / 5], *t);
    }
    // reference = lr circularly shifted one column to the right
    let n = g.cells();
    let mut data = vec![0.0; g.data.len()];
    for c in 0..g.d {
        for y in 0..4 {
            for x in 0..5 {
                data[c * n + y * 5 + (x + 1) % 5] = g.data[c * n + y * 5 + x];
            }
        }
    }
    let shifted = grid(4, 5, 6, data);
    let f = match_descriptors(&g, &shifted).unwrap();
    for (p, t) in f.targets.iter().enumerate() {
        assert_eq!([(p % 5 + 1) % 5, p / 5], *t);
    }
}

#[test]
fn match_equals_brute_force_on_4x4() {
    let mut r = rng(4);
    for _ in 0..20 {
        let a = random_grid(&mut r, 4, 4, 8);
        let b = random_grid(&mut r, 4, 4, 8);
        let f = match_descriptors(&a, &b).unwrap();
        for (p, (q, s)) in brute_match(&a, &b).into_iter().enumerate() {
            assert_eq!(f.targets[p], [q % 4, q / 4]);
            assert!((f.scores[p] - s).abs() < 1e-12);
        }
    }
}

#[test]
fn ties_go_to_lowest_index_and_zero_descriptors_score_zero() {
    let a = grid(1, 1, 2, vec![1.0, 0.0]);
    let b = grid(1, 3, 2, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    let f = match_descriptors(&a, &b).unwrap();
    assert_eq!(f.targets[0], [1, 0]);
    let z = grid(1, 1, 2, vec![0.0, 0.0]);
    let f = match_descriptors(&z, &b).unwrap();
    assert_eq!((f.targets[0], f.scores[0]), ([0, 0], 0.0));
}

#[test]
fn dim_mismatch_is_contract_violation() {
    let a = random_grid(&mut rng(5), 2, 2, 3);
    let b = random_grid(&mut rng(6), 2, 2, 4);
    assert!(matches!(match_descriptors(&a, &b), Err(Error::Contract(_))));
    assert!(matches!(correlation_volume(&a, &b, 0.15), Err(Error::Contract(_))));
}

#[test]
fn identical_descriptors_give_uniform_rows() {
    let a = grid(2, 2, 3, vec![0.3; 12]);
    let v = correlation_volume(&a, &a, DEFAULT_TEMPERATURE).unwrap();
    assert!(v.data.iter().all(|&x| (x - 0.25).abs() < 1e-15));
    assert_eq!(DEFAULT_TEMPERATURE, 0.15);
}

#[test]
fn volume_matches_direct_oracle() {
    let mut r = rng(7);
    let a = random_grid(&mut r, 2, 2, 4);
    let b = random_grid(&mut r, 2, 2, 4);
    let v = correlation_volume(&a, &b, 0.5).unwrap();
    for (x, y) in v.data.iter().zip(brute_volume(&a, &b, 0.5)) {
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn temperature_limit_sharpens_rows() {
    let mut r = rng(8);
    let a = random_grid(&mut r, 3, 3, 6);
    let b = random_grid(&mut r, 3, 3, 6);
    let f = match_descriptors(&a, &b).unwrap();
    let hot = correlation_volume(&a, &b, 1e-3).unwrap();
    let cold = correlation_volume(&a, &b, 1e-4).unwrap();
    for p in 0..a.cells() {
        let q = f.targets[p][1] * 3 + f.targets[p][0];
        assert!(cold.row(p)[q] >= hot.row(p)[q]);
        assert!(cold.row(p)[q] > 0.99);
    }
}

fn grid_strategy() -> impl Strategy<Value = (DescriptorGrid, DescriptorGrid)> {
    (1usize..=8, 1usize..=8, 1usize..=8, 1usize..=8, 1usize..=16).prop_flat_map(|(h, w, rh, rw, d)| {
        (prop::collection::vec(-1.0f32..1.0, h * w * d), prop::collection::vec(-1.0f32..1.0, rh * rw * d))
            .prop_map(move |(a, b)| (grid(h, w, d, a), grid(rh, rw, d, b)))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn match_equals_brute_force((a, b) in grid_strategy()) {
        let f = match_descriptors(&a, &b).unwrap();
        for (p, (q, _)) in brute_match(&a, &b).into_iter().enumerate() {
            prop_assert_eq!(f.targets[p], [q % b.w, q / b.w]);
            let t = f.targets[p];
            prop_assert!(t[0] < b.w && t[1] < b.h);
        }
    }

    #[test]
    fn rows_are_stochastic((a, b) in grid_strategy(), tau in 0.01f64..2.0) {
        let v = correlation_volume(&a, &b, tau).unwrap();
        for p in 0..v.n {
            let row = v.row(p);
            prop_assert!(row.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn positive_scaling_keeps_targets((a, b) in grid_strategy(), k in 1e-3f32..1e3, cell in 0usize..64) {
        let before = match_descriptors(&a, &b).unwrap();
        let mut scaled = b.clone();
        let (m, q) = (b.cells(), cell % b.cells());
        for c in 0..b.d {
            scaled.data[c * m + q] *= k;
        }
        let mut a2 = a.clone();
        let (n, p) = (a.cells(), cell % a.cells());
        for c in 0..a.d {
            a2.data[c * n + p] *= k;
        }
        let after = match_descriptors(&a2, &scaled).unwrap();
        prop_assert_eq!(&before.targets, &after.targets);
        for (x, y) in before.scores.iter().zip(&after.scores) {
            prop_assert!((x - y).abs() < 1e-6);
        }
    }
}
