//! Invariant checks backing `phaseq verify`.
//!
//! Every check compares two independently computed quantities that the
//! channel symmetries say must be equal, and reports the largest relative
//! deviation over its instances.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::fmt;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::capacity::{
    brute_force_mutual_information, conditional_entropy, conditional_entropy_given, marginal_probability,
    mutual_information,
};
use crate::channel::SystemConfig;
use crate::combinatorics::{all_vectors, enumerate_sx, enumerate_sz2};
use crate::demod::{default_scan_points, glrt_demodulate, relative_gap, GlrtOptions};
use crate::error::Result;
use crate::transition::{
    block_conditional_direct, sector_probability, DitheredKernel, TransitionKernel, DEFAULT_QUADRATURE_TOL,
};

/// Grid size for the direct-quadrature route (a multiple of 8 and 12).
const DIRECT_GRID: usize = 96;

/// Relative agreement required of exact identities.
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub instances: usize,
    pub max_deviation: f64,
    pub threshold: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn deviation(name: &str, instances: usize, max_deviation: f64, threshold: f64) -> Self {
        CheckOutcome {
            name: name.into(),
            instances,
            max_deviation,
            threshold,
            passed: max_deviation < threshold,
            detail: String::new(),
        }
    }

    fn exact(name: &str, got: String, expected: String) -> Self {
        let passed = got == expected;
        CheckOutcome {
            name: name.into(),
            instances: 1,
            max_deviation: if passed { 0.0 } else { 1.0 },
            threshold: 0.5,
            passed,
            detail: format!("got {got}, expected {expected}"),
        }
    }
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} instances={} max_dev={:.3e} threshold={:.0e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.max_deviation,
            self.threshold
        )?;
        if !self.detail.is_empty() {
            write!(f, " ({})", self.detail)?;
        }
        Ok(())
    }
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_deviation(a: f64, b: f64) -> f64 {
    relative_gap(a, b)
}

/// The randomised parameter space of the symmetry checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetrySpace {
    pub m: usize,
    pub ks: Vec<usize>,
    pub ls: Vec<usize>,
    pub snrs: Vec<f64>,
    pub theta0: f64,
    pub instances: usize,
    pub seed: u64,
}

impl Default for SymmetrySpace {
    fn default() -> Self {
        SymmetrySpace {
            m: 4,
            ks: vec![8, 12],
            ls: vec![2, 3, 4],
            snrs: vec![0.0, 6.0, 12.0],
            theta0: 0.0,
            instances: 100,
            seed: 2024,
        }
    }
}

struct Instance {
    config: SystemConfig,
    key: (usize, u64),
}

struct Runner<'a> {
    space: &'a SymmetrySpace,
    rng: ChaCha8Rng,
    kernels: HashMap<(usize, u64), TransitionKernel>,
}

impl<'a> Runner<'a> {
    fn instance(&mut self) -> Result<Instance> {
        let k = *self.space.ks.choose(&mut self.rng).expect("nonempty K list");
        let l = *self.space.ls.choose(&mut self.rng).expect("nonempty L list");
        let snr = *self.space.snrs.choose(&mut self.rng).expect("nonempty SNR list");
        let config = SystemConfig::new(self.space.m, k, l, snr)?.with_theta0(self.space.theta0);
        let key = (k, snr.to_bits());
        if let std::collections::hash_map::Entry::Vacant(e) = self.kernels.entry(key) {
            let kernel = TransitionKernel::build_default(&config)?;
            e.insert(kernel);
        }
        Ok(Instance { config, key })
    }

    fn vec(&mut self, alphabet: usize, len: usize) -> Vec<usize> {
        (0..len).map(|_| self.rng.random_range(0..alphabet)).collect()
    }

    /// Run `body` on `instances` random configurations and keep the worst deviation.
    fn check<F>(&mut self, name: &str, mut body: F) -> Result<CheckOutcome>
    where
        F: FnMut(&mut Self, &Instance) -> Result<f64>,
    {
        let mut worst: f64 = 0.0;
        for _ in 0..self.space.instances {
            let inst = self.instance()?;
            worst = worst.max(body(self, &inst)?);
        }
        Ok(CheckOutcome::deviation(name, self.space.instances, worst, IDENTITY_TOL))
    }
}

fn brute_marginal(z: &[usize], m: usize, kernel: &TransitionKernel) -> Result<f64> {
    let mut acc = 0.0;
    let mut count = 0usize;
    for x in all_vectors(m, z.len()) {
        acc += kernel.block_conditional(z, &x)?;
        count += 1;
    }
    Ok(acc / count as f64)
}

/// Symbol, block and marginal symmetries on randomised instances.
pub fn symmetry_suite(space: &SymmetrySpace) -> Result<Vec<CheckOutcome>> {
    let mut r = Runner {
        space,
        rng: ChaCha8Rng::seed_from_u64(space.seed),
        kernels: HashMap::new(),
    };
    let mut out = Vec::new();

    out.push(r.check("symbol_sector_shift", |r, inst| {
        let c = &inst.config;
        let (z, x, i) = (r.rng.random_range(0..c.k()), r.rng.random_range(0..c.m()), r.rng.random_range(1..c.k()));
        let phi = r.rng.random::<f64>() * TAU;
        let a = sector_probability(z, x, phi, c)?;
        let b = sector_probability((z + i) % c.k(), x, phi + i as f64 * TAU / c.k() as f64, c)?;
        Ok(relative_deviation(a, b))
    })?);

    out.push(r.check("symbol_constellation_step", |r, inst| {
        let c = &inst.config;
        let (z, x, i) = (r.rng.random_range(0..c.k()), r.rng.random_range(0..c.m()), r.rng.random_range(1..c.m()));
        let phi = r.rng.random::<f64>() * TAU;
        let a = sector_probability(z, x, phi, c)?;
        let b = sector_probability((z + i * c.a()) % c.k(), (x + i) % c.m(), phi, c)?;
        Ok(relative_deviation(a, b))
    })?);

    out.push(r.check("symbol_reduce_to_zero_input", |r, inst| {
        let c = &inst.config;
        let (z, x) = (r.rng.random_range(0..c.k()), r.rng.random_range(0..c.m()));
        let phi = r.rng.random::<f64>() * TAU;
        let a = sector_probability(z, x, phi, c)?;
        let b = sector_probability((z + c.k() - c.a() * x) % c.k(), 0, phi, c)?;
        Ok(relative_deviation(a, b))
    })?);

    out.push(r.check("symbol_reduce_mod_a", |r, inst| {
        let c = &inst.config;
        let (z, x) = (r.rng.random_range(0..c.k()), r.rng.random_range(0..c.m()));
        let phi = r.rng.random::<f64>() * TAU;
        let a = sector_probability(z, x, phi, c)?;
        let b = sector_probability(z % c.a(), (x + c.m() - z / c.a()) % c.m(), phi, c)?;
        Ok(relative_deviation(a, b))
    })?);

    // block identities, on the kernel and on the direct-quadrature route
    type BlockMap = fn(&[usize], &[usize], &SystemConfig, &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>);
    let block_checks: [(&str, BlockMap); 4] = [
        ("block_constant_addition", |z, x, c, rng| {
            let i = rng.random_range(1..c.k());
            (z.iter().map(|&v| (v + i) % c.k()).collect(), x.to_vec())
        }),
        ("block_permutation", |z, x, _, rng| {
            let mut perm: Vec<usize> = (0..z.len()).collect();
            perm.shuffle(rng);
            (perm.iter().map(|&p| z[p]).collect(), perm.iter().map(|&p| x[p]).collect())
        }),
        ("block_reduce_to_zero_input", |z, x, c, _| {
            (
                z.iter().zip(x).map(|(&zl, &xl)| (zl + c.k() - c.a() * xl) % c.k()).collect(),
                vec![0; x.len()],
            )
        }),
        ("block_reduce_mod_a", |z, x, c, _| {
            (
                z.iter().map(|&v| v % c.a()).collect(),
                z.iter().zip(x).map(|(&zl, &xl)| (xl + c.m() - zl / c.a()) % c.m()).collect(),
            )
        }),
    ];
    for (name, map) in block_checks {
        out.push(r.check(name, |r, inst| {
            let c = &inst.config;
            let z = r.vec(c.k(), c.l());
            let x = r.vec(c.m(), c.l());
            let (z2, x2) = map(&z, &x, c, &mut r.rng);
            let kernel = &r.kernels[&inst.key];
            let on_grid = relative_deviation(kernel.block_conditional(&z, &x)?, kernel.block_conditional(&z2, &x2)?);
            let direct = relative_deviation(
                block_conditional_direct(&z, &x, c, DIRECT_GRID)?,
                block_conditional_direct(&z2, &x2, c, DIRECT_GRID)?,
            );
            Ok(on_grid.max(direct))
        })?);
    }

    out.push(r.check("marginal_constant_addition", |r, inst| {
        let c = &inst.config;
        let z = r.vec(c.k(), c.l());
        let i = r.rng.random_range(1..c.k());
        let shifted: Vec<usize> = z.iter().map(|&v| (v + i) % c.k()).collect();
        let kernel = &r.kernels[&inst.key];
        Ok(relative_deviation(brute_marginal(&z, c.m(), kernel)?, brute_marginal(&shifted, c.m(), kernel)?))
    })?);

    out.push(r.check("marginal_permutation", |r, inst| {
        let c = &inst.config;
        let z = r.vec(c.k(), c.l());
        let mut permuted = z.clone();
        permuted.shuffle(&mut r.rng);
        let kernel = &r.kernels[&inst.key];
        Ok(relative_deviation(brute_marginal(&z, c.m(), kernel)?, brute_marginal(&permuted, c.m(), kernel)?))
    })?);

    out.push(r.check("marginal_reduce_mod_a", |r, inst| {
        let c = &inst.config;
        let z = r.vec(c.k(), c.l());
        let reduced: Vec<usize> = z.iter().map(|&v| v % c.a()).collect();
        let kernel = &r.kernels[&inst.key];
        Ok(relative_deviation(
            brute_marginal(&z, c.m(), kernel)?,
            marginal_probability(&reduced, c, kernel)?,
        ))
    })?);

    Ok(out)
}

/// All output/input cardinality checks against their known values.
pub fn cardinality_checks() -> Result<Vec<CheckOutcome>> {
    let sizes: Vec<String> = (3..=7)
        .map(|l| enumerate_sz2(8, l).map(|it| it.count().to_string()))
        .collect::<Result<_>>()?;
    let worst = enumerate_sx(&[0, 0, 0, 0, 1, 1, 1, 1], 4)?.count();
    let weights: u64 = enumerate_sx(&[0, 0, 0, 0, 1, 1, 1, 1], 4)?.map(|c| c.weight).sum();
    Ok(vec![
        CheckOutcome::exact(
            "output_class_counts_k8_l3_to_7",
            format!("{{{}}}", sizes.join(",")),
            "{36,120,330,792,1716}".into(),
        ),
        CheckOutcome::exact("input_class_count_m4_l8_a2", worst.to_string(), "1225".into()),
        CheckOutcome::exact("input_class_weight_total", weights.to_string(), "65536".into()),
    ])
}

/// Checks specific to one configuration: normalisation, constant conditional
/// entropy, reduced versus brute-force information, and demodulator identities.
pub fn configuration_checks(config: &SystemConfig, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernel = TransitionKernel::build_default(config)?;
    let (m, k, l) = (config.m(), config.k(), config.l());
    let mut out = Vec::new();

    out.push(CheckOutcome::deviation(
        "kernel_row_sums",
        kernel.n_phi(),
        kernel.max_row_sum_deviation(),
        10.0 * DEFAULT_QUADRATURE_TOL,
    ));

    let small = (k as f64).powi(l as i32) * (m as f64).powi(l as i32) <= 5e6;
    if small {
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let x: Vec<usize> = (0..l).map(|_| rng.random_range(0..m)).collect();
            let total: f64 = all_vectors(k, l)
                .map(|z| kernel.block_conditional(&z, &x))
                .sum::<Result<f64>>()?;
            worst = worst.max((total - 1.0).abs());
        }
        out.push(CheckOutcome::deviation("block_normalisation", 5, worst, 1e-8));

        let reference = conditional_entropy(config, &kernel)?;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x: Vec<usize> = (0..l).map(|_| rng.random_range(0..m)).collect();
            worst = worst.max((conditional_entropy_given(&x, config, &kernel)? - reference).abs());
        }
        let mut c = CheckOutcome::deviation("conditional_entropy_constant", 20, worst, IDENTITY_TOL);
        c.detail = "absolute, bits".into();
        out.push(c);

        let reduced = mutual_information(config, &kernel)?;
        let brute = brute_force_mutual_information(config, &DitheredKernel::undithered(kernel.clone(), l))?;
        out.push(CheckOutcome::deviation(
            "reduced_vs_brute_information",
            1,
            relative_deviation(reduced.mi, brute.mi),
            IDENTITY_TOL,
        ));
    }

    let scan = TransitionKernel::build(config, default_scan_points(k), DEFAULT_QUADRATURE_TOL)?;
    let opts = GlrtOptions::fast();
    let a = config.a();
    let mut mismatches = 0usize;
    let mut worst_metric: f64 = 0.0;
    let trials = 100;
    for _ in 0..trials {
        let z: Vec<usize> = (0..l).map(|_| rng.random_range(0..k)).collect();
        let full = glrt_demodulate(&z, config, &scan, &opts)?;
        let r: Vec<usize> = z.iter().map(|&v| v % a).collect();
        let reduced = glrt_demodulate(&r, config, &scan, &opts)?;
        let lifted: Vec<usize> = reduced.winner.iter().zip(&z).map(|(&w, &zl)| (w + zl / a) % m).collect();
        mismatches += (lifted != full.winner) as usize;

        let x = &full.winner;
        for i in 1..m {
            let shifted: Vec<usize> = x.iter().map(|&v| (v + i) % m).collect();
            let p = |x: &[usize]| -> Result<f64> {
                let mut best: f64 = 0.0;
                for idx in 0..scan.n_phi() {
                    let mut prod = 1.0;
                    for (&zl, &xl) in z.iter().zip(x) {
                        prod *= scan.lookup(zl, xl, idx);
                    }
                    best = best.max(prod);
                }
                Ok(best)
            };
            worst_metric = worst_metric.max(relative_deviation(p(x)?, p(&shifted)?));
        }
    }
    let mut c = CheckOutcome::deviation("glrt_mod_a_reduction", trials, mismatches as f64, 0.5);
    c.detail = format!("{mismatches} mismatched winners");
    out.push(c);
    out.push(CheckOutcome::deviation("glrt_constant_addition_metric", trials, worst_metric, 1e-10));
    Ok(out)
}

/// The complete suite for `config`: randomised symmetries over the config's
/// own `(M, K, L, SNR)`, cardinalities and configuration checks.
pub fn full_suite(config: &SystemConfig, instances: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let space = SymmetrySpace {
        m: config.m(),
        ks: vec![config.k()],
        ls: vec![config.l()],
        snrs: vec![config.snr_db()],
        theta0: config.theta0(),
        instances,
        seed,
    };
    let mut out = symmetry_suite(&space)?;
    out.extend(cardinality_checks()?);
    out.extend(configuration_checks(config, seed)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configuration_passes() {
        let c = SystemConfig::new(4, 8, 3, 6.0).unwrap();
        let outcomes = full_suite(&c, 20, 1).unwrap();
        for o in &outcomes {
            assert!(o.passed, "{o}");
        }
        assert!(outcomes.iter().any(|o| o.detail.contains("{36,120,330,792,1716}")));
    }

    #[test]
    fn display_format() {
        let o = CheckOutcome::deviation("x", 3, 1e-12, 1e-9);
        assert_eq!(o.to_string(), "PASS x instances=3 max_dev=1.000e-12 threshold=1e-9");
        assert_eq!(relative_deviation(0.0, 0.0), 0.0);
    }
}
