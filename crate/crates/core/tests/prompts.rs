use promptseg::promptsim::*;
use promptseg::synthgen::{generate_cases, PhantomConfig, Preset};
use promptseg::volgrid::{BinaryMask, Geometry, ImageVolume, ProbabilityMap};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ellipsoid(shape: [usize; 3], c: [f64; 3], r: [f64; 3]) -> BinaryMask {
    BinaryMask::from_fn(Geometry::isotropic(shape), |z, y, x| {
        let d = [(z as f64 - c[0]) / r[0], (y as f64 - c[1]) / r[1], (x as f64 - c[2]) / r[2]];
        d.iter().map(|v| v * v).sum::<f64>() <= 1.0
    })
}

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (
        prop::array::uniform3(8.0..16.0f64),
        prop::array::uniform3(2.0..7.0f64),
    )
        .prop_map(|(c, r)| ellipsoid([24, 24, 24], c, r))
}

fn raster_inside(p: &Prompt, gt: &BinaryMask) -> bool {
    let r = rasterize_prompt(p, gt.geometry()).unwrap();
    r.data().iter().zip(gt.data()).all(|(&a, &b)| a == 0 || b != 0)
}

fn slice_fg_covered(mask: &BinaryMask, b: &BoxPrompt) -> f64 {
    let [_, _, w] = mask.shape();
    let s = mask.slice(b.slice);
    let (mut inside, mut total) = (0usize, 0usize);
    for (i, &v) in s.iter().enumerate() {
        if v != 0 {
            total += 1;
            let (y, x) = (i / w, i % w);
            if (b.min[0]..b.max[0]).contains(&y) && (b.min[1]..b.max[1]).contains(&x) {
                inside += 1;
            }
        }
    }
    inside as f64 / total as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_points_stay_inside(mask in mask_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = simulate_point_prompts(&mask, &mut rng, &GuidanceConfig::default()).unwrap();
        prop_assert!((1..=2).contains(&pts.len()));
        for p in &pts {
            let PromptKind::Point(pt) = &p.kind else { panic!("not a point") };
            prop_assert_eq!(p.polarity, Polarity::Positive);
            prop_assert!(mask.get(pt.center[0], pt.center[1], pt.center[2]));
        }
    }

    #[test]
    fn scribbles_stay_inside(mask in mask_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = simulate_scribble_prompt(&mask, &mut rng, &GuidanceConfig::default()).unwrap();
        prop_assert!(raster_inside(&p, &mask));
    }

    #[test]
    fn lassos_are_simple(mask in mask_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = simulate_lasso_prompt(&mask, &mut rng, &GuidanceConfig::default()).unwrap();
        let PromptKind::Lasso(l) = &p.kind else { panic!("not a lasso") };
        prop_assert!((4..=12).contains(&l.vertices.len()));
        prop_assert!(is_simple_polygon(&l.vertices));
        prop_assert!(polygon_area2(&l.vertices) != 0);
    }

    #[test]
    fn boxes_cover_slice_foreground(mask in mask_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = simulate_box_prompt(&mask, &mut rng, &GuidanceConfig::default()).unwrap();
        let PromptKind::Box(b) = &p.kind else { panic!("not a box") };
        prop_assert!(slice_fg_covered(&mask, b) >= 0.9);
    }

    #[test]
    fn guidance_merge_laws(mask in mask_strategy(), seed in any::<u64>(), per_type in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = if per_type { GuidanceLayout::PerType } else { GuidanceLayout::Shared };
        let cfg = GuidanceConfig { layout, ..Default::default() };
        let mut prompts = Vec::new();
        for t in [PromptType::Point, PromptType::Box, PromptType::Lasso, PromptType::Scribble] {
            prompts.extend(simulate_prompts(t, &mask, &mut rng, &cfg).unwrap());
        }
        prompts.push(Prompt::point([1, 1, 1], 1, Polarity::Negative));
        let img = ImageVolume::new(mask.geometry().clone(), vec![-3.0; mask.geometry().len()]).unwrap();
        let prev = ProbabilityMap::from(&mask);
        let s = encode_guidance(&prompts, Some(&prev), &img, &cfg).unwrap();
        prop_assert_eq!(s.channels(), if per_type { 10 } else { 4 });
        prop_assert!(s.data()[s.voxels()..].iter().all(|v| (0.0..=1.0).contains(v)));

        let doubled: Vec<Prompt> = prompts.iter().chain(&prompts).cloned().collect();
        prop_assert_eq!(&encode_guidance(&doubled, Some(&prev), &img, &cfg).unwrap(), &s);
        let mut shuffled = prompts.clone();
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(&encode_guidance(&shuffled, Some(&prev), &img, &cfg).unwrap(), &s);
    }
}

#[test]
fn phantom_draws_respect_ground_truth() {
    let cases = generate_cases(&PhantomConfig::preset(Preset::Easy, 32, 11), 0, 6).unwrap();
    let cfg = GuidanceConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in &cases {
        for _ in 0..40 {
            for p in simulate_point_prompts(&case.mask, &mut rng, &cfg).unwrap() {
                assert!(raster_inside(&p, &case.mask), "{}: point stamp leaves the mask", case.id);
            }
            let s = simulate_scribble_prompt(&case.mask, &mut rng, &cfg).unwrap();
            assert!(raster_inside(&s, &case.mask), "{}: scribble leaves the mask", case.id);
            let b = simulate_box_prompt(&case.mask, &mut rng, &cfg).unwrap();
            let PromptKind::Box(bb) = &b.kind else { unreachable!() };
            assert!(slice_fg_covered(&case.mask, bb) >= 0.9);
        }
    }
}

#[test]
fn slice_choice_follows_area() {
    let mask = ellipsoid([20, 16, 16], [9.5, 8.0, 8.0], [8.0, 5.0, 5.0]);
    let areas = mask.slice_areas();
    let total: usize = areas.iter().sum();
    let n = 100_000;
    let mut counts = vec![0usize; areas.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..n {
        counts[select_slice_weighted(&mask, &mut rng).unwrap()] += 1;
    }
    for (z, (&a, &c)) in areas.iter().zip(&counts).enumerate() {
        let p = a as f64 / total as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sigma + 1e-9, "slice {z}: {c} vs {}", n as f64 * p);
    }
}

#[test]
fn corrective_points_target_errors() {
    let gt = ellipsoid([16, 16, 16], [8.0; 3], [5.0; 3]);
    let pred = ellipsoid([16, 16, 16], [8.0, 8.0, 10.0], [5.0; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = GuidanceConfig::default();
    let pos = corrective_point(&gt, &pred, &mut rng, &cfg).unwrap().unwrap();
    let PromptKind::Point(p) = pos.kind else { unreachable!() };
    assert!(gt.get(p.center[0], p.center[1], p.center[2]) && !pred.get(p.center[0], p.center[1], p.center[2]));
    let neg = corrective_negative_point(&gt, &pred, &mut rng, &cfg).unwrap().unwrap();
    assert_eq!(neg.polarity, Polarity::Negative);
    assert!(corrective_point(&gt, &gt, &mut rng, &cfg).unwrap().is_none());
}
