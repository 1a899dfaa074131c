//! Mutual information `I(X; Z) = H(Z) - H(Z | X)` for i.i.d. uniform PSK input.
//!
//! Three engines are provided and cross-checked against each other:
//!
//! * **reduced**: `H(Z | X) = H(Z | x_0)` summed over the canonical output
//!   classes over `0..K`, and `H(Z)` summed over the canonical classes of the
//!   reduced alphabet `0..a`, each class standing for `a n(z) M^L` outputs.
//! * **brute**: direct sums over all `M^L` inputs and `K^L` outputs.
//! * **mc**: sample mean of `log2 P(z | x) / P(z)`, which also covers dithered
//!   constellations where the symmetry reductions do not apply.
//!
//! All probabilities come from the same phase grid, so the reduced and brute
//! engines agree to rounding error.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::channel::{sample_block, SystemConfig};
use crate::combinatorics::{all_vectors, enumerate_sx, enumerate_ztilde, next_nondecreasing, sx_cardinality};
use crate::error::{Error, Result};
use crate::sim::stream_rng;
use crate::transition::{dot, DitheredKernel, PrefixProducts, TransitionKernel};

/// Smallest accepted Monte Carlo trial count.
pub const MIN_MC_TRIALS: usize = 100;

/// Default Monte Carlo trial count.
pub const DEFAULT_MC_TRIALS: usize = 1_000_000;

/// Blocks per independently seeded Monte Carlo chunk.
pub const MC_CHUNK: usize = 4096;

/// Above this many input classes in total, `H(Z)` switches from the
/// input-class sums to the factorised per-phase form.
pub const INPUT_CLASS_BUDGET: u64 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Reduced,
    BruteForce,
    MonteCarlo,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Reduced => "reduced",
            Method::BruteForce => "brute",
            Method::MonteCarlo => "mc",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reduced" => Ok(Method::Reduced),
            "brute" => Ok(Method::BruteForce),
            "mc" => Ok(Method::MonteCarlo),
            other => Err(Error::Parse(format!(
                "unknown method {other:?} (expected reduced, brute or mc)"
            ))),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How `P(z)` is obtained for the reduced output entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputRoute {
    /// Weighted sums over the group-restricted input classes.
    InputClasses,
    /// `P(z) = E_phi prod_l (1/M) sum_m P(z_l | m, phi)`: the uniform average
    /// over inputs factorises per position once the phase is fixed.
    Factorized,
    /// Input classes unless their total count exceeds [`INPUT_CLASS_BUDGET`].
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult {
    pub snr_db: f64,
    pub l: usize,
    pub k: usize,
    pub m: usize,
    /// `H(Z | X)` in bits.
    pub h_cond: f64,
    /// `H(Z)` in bits.
    pub h_out: f64,
    /// `I(X; Z)` in bits per block.
    pub mi: f64,
    /// `mi / (L - 1)`; `None` for `L = 1`.
    pub per_symbol: Option<f64>,
    pub method: Method,
    /// Standard error of `mi` (Monte Carlo only).
    pub error_bar: f64,
}

impl CapacityResult {
    fn new(config: &SystemConfig, h_cond: f64, h_out: f64, mi: f64, method: Method, error_bar: f64) -> Self {
        let l = config.l();
        CapacityResult {
            snr_db: config.snr_db(),
            l,
            k: config.k(),
            m: config.m(),
            h_cond,
            h_out,
            mi,
            per_symbol: (l > 1).then(|| mi / (l - 1) as f64),
            method,
            error_bar,
        }
    }
}

fn neg_p_log2_p(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

fn check_kernel(config: &SystemConfig, kernel: &TransitionKernel) -> Result<()> {
    if config.is_dithered() {
        return Err(Error::DitheredUnsupported("the symmetry-reduced capacity"));
    }
    if kernel.k() != config.k() || kernel.m() != config.m() {
        return Err(Error::InvalidConfig(format!(
            "kernel built for M={}, K={} but config has M={}, K={}",
            kernel.m(),
            kernel.k(),
            config.m(),
            config.k()
        )));
    }
    if kernel.snr_db() != config.snr_db() || kernel.theta0() != config.theta0() {
        return Err(Error::InvalidConfig(
            "kernel SNR or constellation offset differs from the config".into(),
        ));
    }
    Ok(())
}

fn factorials(n: usize) -> Vec<f64> {
    let mut f = vec![1.0; n + 1];
    for i in 1..=n {
        f[i] = f[i - 1] * i as f64;
    }
    f
}

/// `(len)! / prod run!` for a sorted slice, using a factorial table.
fn sorted_multiplicity_f64(sorted: &[usize], fact: &[f64]) -> f64 {
    let mut denom = 1.0;
    let mut run = 1;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            denom *= fact[run];
            run = 1;
        }
    }
    if !sorted.is_empty() {
        denom *= fact[run];
    }
    fact[sorted.len()] / denom
}

/// `sum_c n(c) * (-P_c log2 P_c)` over the canonical classes of `0..alphabet`
/// with `P_c = (1/N) sum_i prod_l table[c_l][i]`.
///
/// Classes are split by their first two free components; partitions run in
/// parallel and are merged in a fixed order.
fn class_entropy_sum(table: &[f64], n: usize, alphabet: usize, l: usize) -> f64 {
    let fact = factorials(l);
    if l == 1 {
        let p = table[..n].iter().sum::<f64>() / n as f64;
        return neg_p_log2_p(p);
    }
    let free = l - 1;
    let depth = free.min(2);
    let mut prefixes = Vec::new();
    let mut prefix = vec![0; depth];
    loop {
        prefixes.push(prefix.clone());
        if !next_nondecreasing(&mut prefix, alphabet) {
            break;
        }
    }
    let partials: Vec<f64> = prefixes
        .par_iter()
        .map(|prefix| {
            let mut pp = PrefixProducts::new(table, n, l);
            let mut ids = vec![0; l];
            ids[1..=depth].copy_from_slice(prefix);
            let start = prefix[depth - 1];
            for v in &mut ids[depth + 1..] {
                *v = start;
            }
            let mut acc = 0.0;
            loop {
                let p = pp.sum(&ids) / n as f64;
                acc += sorted_multiplicity_f64(&ids[1..], &fact) * neg_p_log2_p(p);
                if !next_nondecreasing(&mut ids[depth + 1..], alphabet) {
                    break;
                }
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// `H(Z | X)` in bits from the canonical output classes over `0..K`.
pub fn conditional_entropy(config: &SystemConfig, kernel: &TransitionKernel) -> Result<f64> {
    check_kernel(config, kernel)?;
    let sum = class_entropy_sum(kernel.table_data(), kernel.n_phi(), config.k(), config.l());
    Ok(config.k() as f64 * sum)
}

/// `H(Z | X = x)` by summing over all `K^L` outputs.
pub fn conditional_entropy_given(x: &[usize], config: &SystemConfig, kernel: &TransitionKernel) -> Result<f64> {
    check_kernel(config, kernel)?;
    config.validate_input(x)?;
    let outputs: Vec<Vec<usize>> = all_vectors(config.k(), config.l()).collect();
    let terms: Vec<f64> = outputs
        .par_iter()
        .map(|z| kernel.block_conditional(z, x).map(neg_p_log2_p))
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

/// Per-position table `(1/M) sum_m P(r | m, phi_i)` for `r in 0..a`.
fn averaged_reduced_table(kernel: &TransitionKernel) -> Vec<f64> {
    let (n, m, a) = (kernel.n_phi(), kernel.m(), kernel.a());
    let mut out = vec![0.0; a * n];
    for r in 0..a {
        let dst = &mut out[r * n..(r + 1) * n];
        for x in 0..m {
            for (d, &s) in dst.iter_mut().zip(kernel.row(kernel.row_index(r, x))) {
                *d += s;
            }
        }
        dst.iter_mut().for_each(|d| *d /= m as f64);
    }
    out
}

/// `P(z) = (1/M^L) sum_{x in S_X} q(x) P(z | x)` for `z` with components in `0..a`.
pub fn marginal_probability(z: &[usize], config: &SystemConfig, kernel: &TransitionKernel) -> Result<f64> {
    check_kernel(config, kernel)?;
    config.validate_output(z)?;
    if let Some(&bad) = z.iter().find(|&&v| v >= config.a()) {
        return Err(Error::InvalidInput(format!(
            "reduced output component {bad} must be below a={}",
            config.a()
        )));
    }
    let n = kernel.n_phi();
    let mut pp = PrefixProducts::new(kernel.table_data(), n, z.len());
    let mut ids = vec![0; z.len()];
    let mut acc = 0.0;
    for class in enumerate_sx(z, config.m())? {
        for (slot, (&zl, &xl)) in ids.iter_mut().zip(z.iter().zip(&class.representative)) {
            *slot = kernel.row_index(zl, xl);
        }
        acc += class.weight as f64 * pp.sum(&ids);
    }
    Ok(acc / n as f64 / (config.m() as f64).powi(z.len() as i32))
}

/// `P(z)` through the per-phase factorisation; accepts any `z` in `0..K`.
pub fn marginal_probability_factorized(z: &[usize], config: &SystemConfig, kernel: &TransitionKernel) -> Result<f64> {
    check_kernel(config, kernel)?;
    config.validate_output(z)?;
    let reduced: Vec<usize> = z.iter().map(|&v| v % config.a()).collect();
    let table = averaged_reduced_table(kernel);
    let n = kernel.n_phi();
    let rows: Vec<&[f64]> = reduced.iter().map(|&r| &table[r * n..(r + 1) * n]).collect();
    Ok(crate::transition::grid_average_of_product(&rows, n))
}

fn total_input_classes(config: &SystemConfig) -> Result<u64> {
    let mut total = 0u64;
    for class in enumerate_ztilde(config.a(), config.l())? {
        total = total.saturating_add(sx_cardinality(&class.representative, config.m())?);
        if total > INPUT_CLASS_BUDGET {
            break;
        }
    }
    Ok(total)
}

/// `H(Z)` in bits using the route selected automatically.
pub fn output_entropy(config: &SystemConfig, kernel: &TransitionKernel) -> Result<f64> {
    output_entropy_with(config, kernel, OutputRoute::Auto)
}

/// `H(Z) = -M^L sum over reduced classes of a n(z) P(z) log2 P(z)`.
pub fn output_entropy_with(config: &SystemConfig, kernel: &TransitionKernel, route: OutputRoute) -> Result<f64> {
    check_kernel(config, kernel)?;
    let (a, l) = (config.a(), config.l());
    let scale = (config.m() as f64).powi(l as i32) * a as f64;
    let route = match route {
        OutputRoute::Auto if total_input_classes(config)? <= INPUT_CLASS_BUDGET => OutputRoute::InputClasses,
        OutputRoute::Auto => OutputRoute::Factorized,
        fixed => fixed,
    };
    match route {
        OutputRoute::Factorized => {
            let table = averaged_reduced_table(kernel);
            Ok(scale * class_entropy_sum(&table, kernel.n_phi(), a, l))
        }
        _ => {
            let classes: Vec<_> = enumerate_ztilde(a, l)?.collect();
            let terms: Vec<f64> = classes
                .par_iter()
                .map(|c| {
                    marginal_probability(&c.representative, config, kernel)
                        .map(|p| c.multiplicity as f64 * neg_p_log2_p(p))
                })
                .collect::<Result<_>>()?;
            Ok(scale * terms.iter().sum::<f64>())
        }
    }
}

/// Symmetry-reduced exact mutual information.
pub fn mutual_information(config: &SystemConfig, kernel: &TransitionKernel) -> Result<CapacityResult> {
    let h_cond = conditional_entropy(config, kernel)?;
    let h_out = output_entropy(config, kernel)?;
    Ok(CapacityResult::new(config, h_cond, h_out, h_out - h_cond, Method::Reduced, 0.0))
}

/// Mutual information by summing over every input and every output vector.
/// Works for dithered and undithered kernels alike.
pub fn brute_force_mutual_information(config: &SystemConfig, kernel: &DitheredKernel) -> Result<CapacityResult> {
    if kernel.k() != config.k() || kernel.m() != config.m() || kernel.l() != config.l() {
        return Err(Error::InvalidConfig("kernel does not match the configuration".into()));
    }
    let (m, k, l) = (config.m(), config.k(), config.l());
    let inputs: Vec<Vec<usize>> = all_vectors(m, l).collect();
    let outputs: Vec<Vec<usize>> = all_vectors(k, l).collect();
    let inv = 1.0 / inputs.len() as f64;
    let terms: Vec<(f64, f64)> = outputs
        .par_iter()
        .map(|z| {
            let mut p_out = 0.0;
            let mut cond = 0.0;
            for x in &inputs {
                let p = kernel.block_conditional(z, x)?;
                p_out += p;
                cond += neg_p_log2_p(p);
            }
            Ok((cond * inv, neg_p_log2_p(p_out * inv)))
        })
        .collect::<Result<_>>()?;
    let h_cond: f64 = terms.iter().map(|t| t.0).sum();
    let h_out: f64 = terms.iter().map(|t| t.1).sum();
    Ok(CapacityResult::new(config, h_cond, h_out, h_out - h_cond, Method::BruteForce, 0.0))
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: usize,
    cond: f64,
    out: f64,
    mi: f64,
    mi_sq: f64,
}

impl Moments {
    fn merge(mut self, o: Moments) -> Moments {
        self.count += o.count;
        self.cond += o.cond;
        self.out += o.out;
        self.mi += o.mi;
        self.mi_sq += o.mi_sq;
        self
    }
}

/// Monte Carlo estimate of `I(X; Z)` from `trials` channel draws.
///
/// `P(z | x)` and `P(z)` are evaluated exactly on the phase grid; the average
/// over all `M^L` inputs is done through the per-phase factorisation, so the
/// only randomness is the choice of draws. Chunk `c` uses stream `c` of
/// `seed`, which makes the estimate independent of the thread count.
pub fn mutual_information_mc(
    config: &SystemConfig,
    kernel: &DitheredKernel,
    trials: usize,
    seed: u64,
) -> Result<CapacityResult> {
    if trials < MIN_MC_TRIALS {
        return Err(Error::TooFewTrials {
            min: MIN_MC_TRIALS,
            got: trials,
        });
    }
    if kernel.k() != config.k() || kernel.m() != config.m() || kernel.l() != config.l() {
        return Err(Error::InvalidConfig("kernel does not match the configuration".into()));
    }
    if config.sigma() == 0.0 {
        return Err(Error::DegenerateNoise);
    }
    let (m, l, n) = (config.m(), config.l(), kernel.n_phi());
    let averaged = kernel.symbol_averaged_tables();
    let chunks = trials.div_ceil(MC_CHUNK);
    let parts: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let count = MC_CHUNK.min(trials - c * MC_CHUNK);
            let mut acc = Moments {
                count,
                ..Default::default()
            };
            let mut x = vec![0; l];
            let mut prod = vec![0.0; n];
            for _ in 0..count {
                x.iter_mut().for_each(|s| *s = rng.random_range(0..m));
                let draw = sample_block(&x, config, &mut rng)?;
                let p_cond = kernel.block_conditional(&draw.z, &x)?;
                prod.copy_from_slice(&averaged[0][draw.z[0] * n..(draw.z[0] + 1) * n]);
                let mut p_out = 0.0;
                for pos in 1..l {
                    let row = &averaged[pos][draw.z[pos] * n..(draw.z[pos] + 1) * n];
                    if pos + 1 == l {
                        p_out = dot(&prod, row);
                    } else {
                        prod.iter_mut().zip(row).for_each(|(p, &r)| *p *= r);
                    }
                }
                if l == 1 {
                    p_out = prod.iter().sum();
                }
                let p_out = p_out / n as f64;
                let sample = p_cond.log2() - p_out.log2();
                acc.cond -= p_cond.log2();
                acc.out -= p_out.log2();
                acc.mi += sample;
                acc.mi_sq += sample * sample;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let total = parts.into_iter().fold(Moments::default(), Moments::merge);
    let t = total.count as f64;
    let mean = total.mi / t;
    let var = ((total.mi_sq / t - mean * mean) * t / (t - 1.0)).max(0.0);
    Ok(CapacityResult::new(
        config,
        total.cond / t,
        total.out / t,
        mean,
        Method::MonteCarlo,
        (var / t).sqrt(),
    ))
}

/// Run the chosen engine on `config`, building the required kernel on an
/// `n_phi`-point grid.
pub fn compute(config: &SystemConfig, method: Method, n_phi: usize, trials: usize, seed: u64) -> Result<CapacityResult> {
    let tol = crate::transition::DEFAULT_QUADRATURE_TOL;
    match method {
        Method::Reduced => {
            let kernel = TransitionKernel::build(config, n_phi, tol)?;
            mutual_information(config, &kernel)
        }
        Method::BruteForce => {
            let kernel = DitheredKernel::build(config, n_phi, tol)?;
            brute_force_mutual_information(config, &kernel)
        }
        Method::MonteCarlo => {
            let kernel = DitheredKernel::build(config, n_phi, tol)?;
            mutual_information_mc(config, &kernel, trials, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DitherMode;
    use crate::transition::default_n_phi;

    fn setup(k: usize, l: usize, snr: f64) -> (SystemConfig, TransitionKernel) {
        let c = SystemConfig::new(4, k, l, snr).unwrap();
        let kernel = TransitionKernel::build_default(&c).unwrap();
        (c, kernel)
    }

    fn rel(a: f64, b: f64) -> f64 {
        if a == b {
            0.0
        } else {
            (a - b).abs() / a.abs().max(b.abs())
        }
    }

    #[test]
    fn single_symbol_blocks() {
        for snr in [0.0, 10.0] {
            let (c, kernel) = setup(8, 1, snr);
            let r = mutual_information(&c, &kernel).unwrap();
            assert!((r.h_cond - 3.0).abs() < 1e-10);
            assert!((r.h_out - 3.0).abs() < 1e-10);
            assert!(r.mi.abs() < 1e-10);
            assert_eq!(r.per_symbol, None);
        }
    }

    #[test]
    fn vanishing_snr() {
        let (c, kernel) = setup(8, 3, -40.0);
        let r = mutual_information(&c, &kernel).unwrap();
        assert!((r.h_cond - 9.0).abs() < 1e-2);
        assert!((r.h_out - 9.0).abs() < 1e-2);
        assert!(r.mi < 1e-2);
    }

    #[test]
    fn reduced_entropies_match_brute_force() {
        let (c, kernel) = setup(8, 3, 5.0);
        let brute = brute_force_mutual_information(&c, &DitheredKernel::undithered(kernel.clone(), 3)).unwrap();
        let hc = conditional_entropy(&c, &kernel).unwrap();
        let ho = output_entropy(&c, &kernel).unwrap();
        assert!(rel(hc, brute.h_cond) < 1e-9);
        assert!(rel(ho, brute.h_out) < 1e-9);
        let hx0 = conditional_entropy_given(&[0, 0, 0], &c, &kernel).unwrap();
        assert!(rel(hc, hx0) < 1e-9);
        let fact = output_entropy_with(&c, &kernel, OutputRoute::Factorized).unwrap();
        assert!(rel(fact, ho) < 1e-12);
    }

    #[test]
    fn mutual_information_at_10db_l2() {
        let (c, kernel) = setup(8, 2, 10.0);
        let reduced = mutual_information(&c, &kernel).unwrap();
        let brute = brute_force_mutual_information(&c, &DitheredKernel::undithered(kernel, 2)).unwrap();
        assert!((reduced.mi - brute.mi).abs() < 1e-9);
        assert!(reduced.mi > 0.0 && reduced.mi <= 4.0);
        assert!(reduced.h_cond <= reduced.h_out + 1e-9);
    }

    #[test]
    fn marginal_examples() {
        let (c, kernel) = setup(8, 4, 6.0);
        let reduced = marginal_probability(&[1, 1, 0, 0], &c, &kernel).unwrap();
        let full = marginal_probability_factorized(&[5, 7, 2, 4], &c, &kernel).unwrap();
        assert!(rel(reduced, full) < 1e-12);
        let brute: f64 = all_vectors(4, 4)
            .map(|x| kernel.block_conditional(&[5, 7, 2, 4], &x).unwrap())
            .sum::<f64>()
            / 256.0;
        assert!(rel(brute, reduced) < 1e-10);

        let (c1, k1) = setup(8, 1, 6.0);
        assert!((marginal_probability(&[0], &c1, &k1).unwrap() - 0.125).abs() < 1e-12);
        assert!(marginal_probability(&[2, 0, 0, 0], &c, &kernel).is_err());
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let (c, kernel) = setup(8, 2, 8.0);
        let exact = mutual_information(&c, &kernel).unwrap();
        let mc = mutual_information_mc(&c, &DitheredKernel::undithered(kernel, 2), 200_000, 5).unwrap();
        assert!((mc.mi - exact.mi).abs() < 3.0 * mc.error_bar, "{} vs {} ({})", mc.mi, exact.mi, mc.error_bar);
        assert!(matches!(
            mutual_information_mc(&c, &DitheredKernel::build_default(&c).unwrap(), 50, 1),
            Err(Error::TooFewTrials { .. })
        ));
    }

    #[test]
    fn dithering_raises_capacity_at_10db() {
        let plain = SystemConfig::new(4, 8, 2, 10.0).unwrap();
        let dithered = plain.clone().with_dither(DitherMode::Paper).unwrap();
        let undithered = compute(&plain, Method::Reduced, 2048, 0, 0).unwrap();
        let mc = compute(&dithered, Method::MonteCarlo, 2048, 200_000, 9).unwrap();
        assert!(mc.mi - undithered.mi > 3.0 * mc.error_bar);
        let exact_dithered = compute(&dithered, Method::BruteForce, 2048, 0, 0).unwrap();
        assert!((mc.mi - exact_dithered.mi).abs() < 4.0 * mc.error_bar);
    }

    #[test]
    fn rejects_mismatched_kernel() {
        let (c, kernel) = setup(8, 2, 10.0);
        let other = c.clone().with_snr_db(3.0).unwrap();
        assert!(conditional_entropy(&other, &kernel).is_err());
        let dithered = c.with_dither(DitherMode::Paper).unwrap();
        assert!(matches!(
            conditional_entropy(&dithered, &kernel),
            Err(Error::DitheredUnsupported(_))
        ));
        assert_eq!(default_n_phi(8), kernel.n_phi());
    }
}
