use promptseg::evalkit::{dice, iou, mean_sd};
use promptseg::volgrid::{BinaryMask, Geometry};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn mask(shape: [usize; 3], data: Vec<u8>) -> BinaryMask {
    BinaryMask::new(Geometry::isotropic(shape), data).unwrap()
}

// Set-based reference: count voxel coordinates, no shared code with the library.
fn brute(a: &[u8], b: &[u8], n: usize) -> (f64, f64) {
    let (mut both, mut ca, mut cb) = (0u64, 0u64, 0u64);
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let i = (z * n + y) * n + x;
                let (ia, ib) = (a[i] == 1, b[i] == 1);
                ca += ia as u64;
                cb += ib as u64;
                both += (ia && ib) as u64;
            }
        }
    }
    let union = ca + cb - both;
    let d = if ca + cb == 0 { 1.0 } else { 2.0 * both as f64 / (ca + cb) as f64 };
    let j = if union == 0 { 1.0 } else { both as f64 / union as f64 };
    (d, j)
}

#[test]
fn matches_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let (pa, pb) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let a: Vec<u8> = (0..4096).map(|_| rng.random_bool(pa) as u8).collect();
        let b: Vec<u8> = (0..4096).map(|_| rng.random_bool(pb) as u8).collect();
        let (d0, j0) = brute(&a, &b, 16);
        let (ma, mb) = (mask([16; 3], a), mask([16; 3], b));
        let (d, j) = (dice(&ma, &mb).unwrap(), iou(&ma, &mb).unwrap());
        assert!((d - d0).abs() < 1e-12 && (j - j0).abs() < 1e-12);
        assert!((j - d / (2.0 - d)).abs() < 1e-12);
    }
}

#[test]
fn edge_cases() {
    let z = mask([2, 2, 2], vec![0; 8]);
    let o = mask([2, 2, 2], vec![1; 8]);
    assert_eq!(dice(&z, &z).unwrap(), 1.0);
    assert_eq!(iou(&z, &z).unwrap(), 1.0);
    assert_eq!(dice(&z, &o).unwrap(), 0.0);
    assert_eq!(dice(&o, &o).unwrap(), 1.0);
    assert!(dice(&z, &mask([2, 2, 1], vec![0; 4])).is_err());
    assert_eq!(mean_sd(&[0.5]), (0.5, 0.0));
    let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
    assert!((m - 2.5).abs() < 1e-15 && (s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
}

proptest! {
    #[test]
    fn symmetric_bounded_and_linked(
        a in prop::collection::vec(0u8..2, 125),
        b in prop::collection::vec(0u8..2, 125),
    ) {
        let (ma, mb) = (mask([5; 3], a), mask([5; 3], b));
        let d = dice(&ma, &mb).unwrap();
        let j = iou(&ma, &mb).unwrap();
        prop_assert_eq!(d, dice(&mb, &ma).unwrap());
        prop_assert_eq!(j, iou(&mb, &ma).unwrap());
        prop_assert!((0.0..=1.0).contains(&d) && j <= d + 1e-15);
        prop_assert!((j - d / (2.0 - d)).abs() < 1e-12);
        prop_assert_eq!(dice(&ma, &ma).unwrap(), 1.0);
    }
}
