mod common;

use common::checks::{unroll, MeanGap};
use framefill::frames::FrameIndexSet;
use framefill::sampler::{SamplingScheme, StageSource};
use framefill::schemes::{
    greedy_max_min, multi_start_greedy, plan_autoreg, plan_hierarchy2,
    select_diverse_conditioning, validate_scheme, AdaptiveHierarchy2, DownscaledGrayMse,
    FrameDistance, SchemePlanConfig,
};
use ndarray::{Array4, Axis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn plan_config(n: usize, p: usize, stride: usize, group: usize, max_cond: usize) -> SchemePlanConfig {
    SchemePlanConfig {
        stride,
        group_size: group,
        max_cond,
        ..SchemePlanConfig::new(n, FrameIndexSet::range(0, p))
    }
}

fn random_video(n: usize, rng: &mut ChaCha8Rng) -> Array4<f32> {
    Array4::from_shape_simple_fn((n, 2, 2, 1), || rng.random_range(-1.0f32..1.0))
}

fn min_pairwise(set: &[usize], d: &dyn Fn(usize, usize) -> f64) -> f64 {
    let mut m = f64::INFINITY;
    for (a, &i) in set.iter().enumerate() {
        for &j in &set[a + 1..] {
            m = m.min(d(i, j));
        }
    }
    m
}

fn config_strategy() -> impl Strategy<Value = (usize, usize, usize, usize, usize)> {
    (4usize..=12, 12usize..=64, 2usize..=12, 2usize..=12, 1usize..=12)
        .prop_map(|(p, n, stride, group, cond)| (n.max(p + 1), p, stride, group, cond))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn autoreg_plans_are_valid(cfg in config_strategy()) {
        let (n, p, stride, group, cond) = cfg;
        let scheme = plan_autoreg(&plan_config(n, p, stride, group, cond)).unwrap();
        prop_assert!(validate_scheme(&scheme).is_empty(), "{:?}", validate_scheme(&scheme));
        prop_assert_eq!(scheme.stages.len(), (n - p).div_ceil(stride));
        for s in &scheme.stages {
            let start = s.x.first().unwrap();
            prop_assert_eq!(s.y.clone(), FrameIndexSet::range(start.saturating_sub(cond), start));
        }
    }

    #[test]
    fn hierarchy2_plans_are_valid(cfg in config_strategy()) {
        let (n, p, stride, group, cond) = cfg;
        let scheme = plan_hierarchy2(&plan_config(n, p, stride, group, cond)).unwrap();
        prop_assert!(validate_scheme(&scheme).is_empty(), "{:?}", validate_scheme(&scheme));
        // one keyframe stage, ending on the last frame
        let keys = &scheme.stages[0].x;
        prop_assert_eq!(keys.len(), stride.min(n - p));
        prop_assert_eq!(keys.last(), Some(n - 1));
        prop_assert_eq!(scheme.stages[0].y.clone(), FrameIndexSet::range(p - cond.min(p), p));
        for s in &scheme.stages[1..] {
            prop_assert!(s.x.len() <= group);
            prop_assert!(s.x.is_disjoint(keys));
            let (lo, hi) = (s.x.first().unwrap(), s.x.last().unwrap());
            prop_assert_eq!(hi - lo + 1, s.x.len(), "gap groups are consecutive");
            prop_assert!(s.y.len() <= cond);
        }
    }

    #[test]
    fn adaptive_plans_are_valid(cfg in config_strategy(), seed in any::<u64>()) {
        let (n, p, stride, group, cond) = cfg;
        let config = plan_config(n, p, stride, group, cond.min(8));
        let fixed = plan_hierarchy2(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let video = random_video(n, &mut rng);
        let mut source = AdaptiveHierarchy2::new(config, &MeanGap).unwrap();
        let scheme = unroll(&mut source, &video);
        prop_assert!(validate_scheme(&scheme).is_empty(), "{:?}", validate_scheme(&scheme));
        let xs: Vec<_> = scheme.stages.iter().map(|s| s.x.clone()).collect();
        let fixed_xs: Vec<_> = fixed.stages.iter().map(|s| s.x.clone()).collect();
        prop_assert_eq!(xs, fixed_xs);
    }

    #[test]
    fn selection_ignores_candidate_order(
        indices in prop::collection::btree_set(0usize..20, 1..12),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let video = random_video(20, &mut rng);
        let forward: FrameIndexSet = indices.iter().copied().collect();
        let backward: FrameIndexSet = indices.iter().rev().copied().collect();
        let a = select_diverse_conditioning(&forward, &video, k, &MeanGap);
        let b = select_diverse_conditioning(&backward, &video, k, &MeanGap);
        prop_assert_eq!(a.len(), k.min(indices.len()));
        prop_assert!(a.is_subset(&forward));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn selector_matches_exhaustive_optimum() {
    common::checks::selector_oracle().unwrap();
}

#[test]
fn single_start_greedy_is_not_always_optimal() {
    // far pair (0, 1) blocks the only good triple {2, 3, 4}
    let n = 5;
    let mut t = vec![0.0; 25];
    let mut set = |i: usize, j: usize, v: f64| {
        t[i * n + j] = v;
        t[j * n + i] = v;
    };
    for i in 0..5 {
        for j in i + 1..5 {
            set(i, j, 0.1);
        }
    }
    set(0, 1, 10.0);
    set(2, 3, 5.0);
    set(2, 4, 5.0);
    set(3, 4, 5.0);
    let d = |i: usize, j: usize| t[i * n + j];
    assert_eq!(greedy_max_min(n, 3, d), vec![0, 1, 2]);
    assert_eq!(multi_start_greedy(n, 3, d), vec![2, 3, 4]);
}

#[test]
fn identical_frames_give_a_fixed_plan() {
    let config = plan_config(30, 10, 10, 10, 10);
    let video = Array4::from_elem((30, 4, 4, 3), 0.25f32);
    let distance = DownscaledGrayMse { size: 4 };
    let runs: Vec<SamplingScheme> = (0..2)
        .map(|_| unroll(&mut AdaptiveHierarchy2::new(config.clone(), &distance).unwrap(), &video))
        .collect();
    assert_eq!(runs[0], runs[1]);
    // every distance ties, so the lowest known indices win
    let mut known = FrameIndexSet::range(0, 10);
    for s in &runs[0].stages {
        let want: FrameIndexSet = known.iter().copied().take(10).collect();
        assert_eq!(s.y, want);
        known.extend_from(&s.x);
    }
}

#[test]
fn adaptive_conditioning_reaches_the_varied_block() {
    let mut video = Array4::zeros((30, 4, 4, 1));
    for i in 5..10 {
        video.index_axis_mut(Axis(0), i).fill(-1.0 + 0.4 * (i - 5) as f32);
    }
    let distance = DownscaledGrayMse { size: 4 };
    for max_cond in [3usize, 10] {
        let config = plan_config(30, 10, 10, 10, max_cond);
        let mut source = AdaptiveHierarchy2::new(config.clone(), &distance).unwrap();
        let y1 = source.next_stage(&FrameIndexSet::range(0, 10), &video).unwrap().unwrap().y;
        let fixed = plan_hierarchy2(&config).unwrap().stages[0].y.clone();
        assert_eq!(fixed, FrameIndexSet::range(10 - max_cond, 10));
        assert!(y1.iter().any(|&i| i >= 5), "{y1}");
        if max_cond == 3 {
            // the identical block contributes at most one frame
            assert!(y1.iter().filter(|&&i| i < 5).count() <= 1, "{y1}");
        }
    }
}

#[test]
fn adaptive_beats_nearest_neighbour_conditioning() {
    let distance = DownscaledGrayMse { size: 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..300 {
        let n = rng.random_range(4..=8usize);
        let p = rng.random_range(1..n);
        let config = plan_config(n, p, rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=6));
        let video = Array4::from_shape_simple_fn((n, 2, 2, 1), || rng.random_range(0..3) as f32 - 1.0);
        let fixed = plan_hierarchy2(&config).unwrap();
        let mut source = AdaptiveHierarchy2::new(config.clone(), &distance).unwrap();
        let mut known = config.observed.clone();
        for stage in &fixed.stages {
            let adaptive = source.next_stage(&known, &video).unwrap().unwrap();
            assert_eq!(adaptive.x, stage.x);
            assert!(known.len() <= 8);
            let d = |i: usize, j: usize| {
                distance.distance(video.index_axis(Axis(0), i), video.index_axis(Axis(0), j))
            };
            let a = min_pairwise(adaptive.y.as_slice(), &d);
            let h = min_pairwise(stage.y.as_slice(), &d);
            assert_eq!(adaptive.y.len(), stage.y.len());
            assert!(a >= h, "case {case}: adaptive {} ({a}) vs nearest {} ({h})", adaptive.y, stage.y);
            known.extend_from(&stage.x);
        }
        assert!(source.next_stage(&known, &video).unwrap().is_none());
    }
}
