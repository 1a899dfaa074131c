//! Randomised invariants of the channel model, the combinatorics and the
//! demodulator.

use std::f64::consts::TAU;

use num_complex::Complex64;
use proptest::prelude::*;

use phaseq::combinatorics::{
    binomial, canonicalize_output, enumerate_sx, enumerate_sz2, sorted_multiplicity, sx_cardinality,
};
use phaseq::demod::{glrt_demodulate, relative_gap, GlrtOptions};
use phaseq::sim::wilson_interval;
use phaseq::{quantize, SystemConfig, TransitionKernel};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Sector count, block length and SNR drawn from a small grid so that each
/// case builds its kernel quickly.
fn small_system() -> impl Strategy<Value = (usize, usize, f64, f64)> {
    (
        prop::sample::select(vec![4usize, 8, 12]),
        2usize..=4,
        prop::sample::select(vec![0.0, 6.0, 12.0]),
        0.0..TAU,
    )
}

fn kernel_for(k: usize, l: usize, snr: f64, theta0: f64) -> (SystemConfig, TransitionKernel) {
    let c = SystemConfig::new(4, k, l, snr).unwrap().with_theta0(theta0);
    let kernel = TransitionKernel::build(&c, 6 * k, 1e-12).unwrap();
    (c, kernel)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quantizer_rotation_shifts_sector(k in 1usize..40, frac in 0.02f64..0.98, n in 0usize..80, r in 0.1f64..10.0) {
        let sector = (frac * k as f64).floor() as usize;
        let angle = (sector as f64 + 0.5) * TAU / k as f64;
        let c = Complex64::from_polar(r, angle);
        prop_assert_eq!(quantize(c, k).unwrap(), sector);
        let rotated = c * Complex64::from_polar(1.0, n as f64 * TAU / k as f64);
        prop_assert_eq!(quantize(rotated, k).unwrap(), (sector + n) % k);
    }

    #[test]
    fn block_law_invariances(
        (k, l, snr, theta0) in small_system(),
        seed in any::<u64>(),
        shift in 0usize..12,
    ) {
        let (c, kernel) = kernel_for(k, l, snr, theta0);
        let mut s = seed;
        let mut next = |n: usize| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as usize) % n
        };
        let z: Vec<usize> = (0..l).map(|_| next(k)).collect();
        let x: Vec<usize> = (0..l).map(|_| next(4)).collect();
        let p = kernel.block_conditional(&z, &x).unwrap();

        let zs: Vec<usize> = z.iter().map(|&v| (v + shift * c.a()) % k).collect();
        let xs: Vec<usize> = x.iter().map(|&v| (v + shift) % 4).collect();
        prop_assert!(rel(p, kernel.block_conditional(&zs, &xs).unwrap()) < 1e-9);

        let zc: Vec<usize> = z.iter().map(|&v| (v + shift) % k).collect();
        prop_assert!(rel(p, kernel.block_conditional(&zc, &x).unwrap()) < 1e-9);

        let mut zr = z.clone();
        let mut xr = x.clone();
        zr.reverse();
        xr.reverse();
        prop_assert!(rel(p, kernel.block_conditional(&zr, &xr).unwrap()) < 1e-9);

        let z0: Vec<usize> = z.iter().zip(&x).map(|(&zl, &xl)| (zl + k - c.a() * xl) % k).collect();
        prop_assert!(rel(p, kernel.block_conditional(&z0, &vec![0; l]).unwrap()) < 1e-9);
    }

    #[test]
    fn canonical_output_is_a_class_fixed_point(k in 2usize..10, z in prop::collection::vec(0usize..10, 1..7), shift in 0usize..10) {
        let z: Vec<usize> = z.into_iter().map(|v| v % k).collect();
        let canon = canonicalize_output(&z, k);
        prop_assert_eq!(canon[0], 0);
        prop_assert!(canon[1..].windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(&canonicalize_output(&canon, k), &canon);
        let moved: Vec<usize> = z.iter().map(|&v| (v + shift) % k).collect();
        prop_assert_eq!(canonicalize_output(&moved, k), canon);
    }

    #[test]
    fn output_class_count_and_multiplicities(k in 2usize..9, l in 1usize..6) {
        let classes: Vec<_> = enumerate_sz2(k, l).unwrap().collect();
        prop_assert_eq!(classes.len() as u64, binomial((k + l - 2) as u64, (l - 1) as u64).unwrap());
        let total: u64 = classes.iter().map(|c| c.multiplicity).sum();
        prop_assert_eq!(total, (k as u64).pow(l as u32 - 1));
        for c in &classes {
            prop_assert_eq!(c.multiplicity, sorted_multiplicity(&c.representative[1..]).unwrap());
        }
    }

    #[test]
    fn input_class_weights_cover_all_inputs(z in prop::collection::vec(0usize..3, 1..7), m in 2usize..5) {
        let classes: Vec<_> = enumerate_sx(&z, m).unwrap().collect();
        prop_assert_eq!(classes.len() as u64, sx_cardinality(&z, m).unwrap());
        let total: u64 = classes.iter().map(|c| c.weight).sum();
        prop_assert_eq!(total, (m as u64).pow(z.len() as u32));
    }

    #[test]
    fn wilson_interval_brackets_the_estimate(n in 1u64..1_000_000, frac in 0.0f64..=1.0) {
        let s = ((n as f64) * frac).floor() as u64;
        let (lo, hi) = wilson_interval(s, n, 1.96);
        let p = s as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn glrt_commutes_with_output_shift((k, l, snr, theta0) in small_system(), z in prop::collection::vec(0usize..12, 4), n in 0usize..4) {
        let (c, kernel) = kernel_for(k, l, snr, theta0);
        let z: Vec<usize> = z[..l].iter().map(|&v| v % k).collect();
        let opts = GlrtOptions::fast();
        let base = glrt_demodulate(&z, &c, &kernel, &opts).unwrap();
        let zs: Vec<usize> = z.iter().map(|&v| (v + n * c.a()) % k).collect();
        let moved = glrt_demodulate(&zs, &c, &kernel, &opts).unwrap();
        prop_assert!(relative_gap(base.metric(), moved.metric()) < 1e-12);
        if !base.tie {
            let expected: Vec<usize> = base.winner.iter().map(|&v| (v + n) % 4).collect();
            prop_assert_eq!(moved.winner, expected);
        }
    }
}
