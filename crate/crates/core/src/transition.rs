//! Sector probabilities `P(z | x, phi)` and block probabilities `P(z | x)`.
//!
//! The scalar probability integrates the phase density of a unit phasor in
//! circular Gaussian noise over one sector. Block probabilities average the
//! product of scalar terms over a midpoint grid on `[0, 2pi)`.
//!
//! A [`TransitionKernel`] stores the `x = 0` slice on the grid. Every other
//! input is served by index arithmetic, `P(z | x, phi) = P(z - a x | 0, phi)`.
//! The grid size is a multiple of `K`, so a shift by one sector is a shift by
//! `N_phi / K` grid points and the kernel is invariant under it exactly.

use std::f64::consts::{PI, TAU};
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::channel::SystemConfig;
use crate::error::{Error, Result};
use crate::quadrature;

/// Absolute quadrature tolerance used for every sector integral by default.
pub const DEFAULT_QUADRATURE_TOL: f64 = 1e-12;

/// Nominal phase-grid size; rounded up to a multiple of `K`.
pub const NOMINAL_PHI_POINTS: usize = 2048;

/// Above this block length products are accumulated in the log domain.
pub const LOG_DOMAIN_THRESHOLD: usize = 16;

/// Smallest multiple of `k` that is at least `nominal`.
pub fn grid_size_for(k: usize, nominal: usize) -> usize {
    nominal.div_ceil(k) * k
}

pub fn default_n_phi(k: usize) -> usize {
    grid_size_for(k, NOMINAL_PHI_POINTS)
}

/// Density of `arg(1 + N) ` at offset `delta` from the signal phase, where `N`
/// is circular Gaussian and `rho = 1 / (2 sigma^2)`.
pub fn phase_density(delta: f64, rho: f64) -> f64 {
    let (s, c) = delta.sin_cos();
    let kappa = rho.sqrt();
    let base = (-rho).exp() / TAU;
    // Gaussian tail Q(-sqrt(2 rho) cos delta)
    let tail = 0.5 * libm::erfc(-kappa * c);
    let peak = kappa * c / PI.sqrt() * (-rho * s * s).exp() * tail;
    (base + peak).max(0.0)
}

/// Probability that the phase of `exp(j psi) + N` falls in `[lo + psi, lo + psi + width)`,
/// i.e. the mass of the phase density over `[lo, lo + width)` relative to the signal.
pub fn relative_sector_mass(lo: f64, width: f64, rho: f64, tol: f64) -> Result<f64> {
    // fold into [-pi, pi) so the peak at 0 is the only one that can be inside
    let lo = (lo + PI).rem_euclid(TAU) - PI;
    let hi = lo + width;
    let breaks: &[f64] = if lo < 0.0 && hi > 0.0 { &[0.0] } else { &[] };
    let mass = quadrature::integrate_with_breaks(
        |d| phase_density(d, rho),
        lo,
        hi,
        breaks,
        tol,
        quadrature::DEFAULT_LIMIT,
    )?;
    Ok(mass.clamp(0.0, 1.0))
}

/// `P(arg(exp(j psi) + N) in [2pi z / K, 2pi (z+1) / K))`.
pub fn sector_probability_at(z: usize, psi: f64, k: usize, rho: f64, tol: f64) -> Result<f64> {
    let width = TAU / k as f64;
    relative_sector_mass(z as f64 * width - psi, width, rho, tol)
}

fn rho_of(config: &SystemConfig) -> Result<f64> {
    let sigma = config.sigma();
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::DegenerateNoise);
    }
    Ok(1.0 / (2.0 * sigma * sigma))
}

/// `P(z | x, phi)` for the undithered constellation of `config`, by direct
/// quadrature (absolute error below [`DEFAULT_QUADRATURE_TOL`]).
pub fn sector_probability(z: usize, x: usize, phi: f64, config: &SystemConfig) -> Result<f64> {
    if z >= config.k() || x >= config.m() {
        return Err(Error::InvalidInput(format!(
            "sector {z} / symbol {x} out of range for K={}, M={}",
            config.k(),
            config.m()
        )));
    }
    let rho = rho_of(config)?;
    sector_probability_at(
        z,
        config.constellation_phase(x) + phi,
        config.k(),
        rho,
        DEFAULT_QUADRATURE_TOL,
    )
}

/// Tabulated `P(z | x = 0, phi_i)` on the midpoint grid `phi_i = (i + 1/2) 2pi / N`.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    snr_db: f64,
    k: usize,
    m: usize,
    n_phi: usize,
    theta0: f64,
    offset: f64,
    rho: f64,
    quadrature_tol: f64,
    source_dithered: bool,
    /// Row-major: `table[z * n_phi + i]`.
    table: Vec<f64>,
}

impl TransitionKernel {
    /// Kernel for the undithered constellation of `config`.
    pub fn build(config: &SystemConfig, n_phi: usize, quadrature_tol: f64) -> Result<Self> {
        let mut kernel = Self::build_with_offset(config, 0.0, n_phi, quadrature_tol)?;
        kernel.source_dithered = config.is_dithered();
        Ok(kernel)
    }

    /// Kernel with the default grid size and tolerance.
    pub fn build_default(config: &SystemConfig) -> Result<Self> {
        Self::build(config, default_n_phi(config.k()), DEFAULT_QUADRATURE_TOL)
    }

    /// Kernel for a constellation rotated by an extra `offset` radians.
    pub fn build_with_offset(
        config: &SystemConfig,
        offset: f64,
        n_phi: usize,
        quadrature_tol: f64,
    ) -> Result<Self> {
        let k = config.k();
        if n_phi == 0 || !n_phi.is_multiple_of(k) {
            return Err(Error::InvalidConfig(format!(
                "phase grid size {n_phi} must be a positive multiple of K={k}"
            )));
        }
        if !(quadrature_tol > 0.0) {
            return Err(Error::InvalidConfig("quadrature tolerance must be positive".into()));
        }
        let rho = rho_of(config)?;
        let theta0 = config.theta0();
        let width = TAU / k as f64;
        // Entry (z, i) has relative lower edge 2pi (z s - i - 1/2) / N - theta0 - offset
        // with s = N / K, so it only depends on (z s - i) mod N.
        let by_shift: Vec<f64> = (0..n_phi)
            .into_par_iter()
            .map(|n| {
                let lo = TAU * (n as f64 - 0.5) / n_phi as f64 - theta0 - offset;
                relative_sector_mass(lo, width, rho, quadrature_tol)
            })
            .collect::<Result<_>>()?;
        let step = n_phi / k;
        let mut table = vec![0.0; k * n_phi];
        for z in 0..k {
            let row = &mut table[z * n_phi..(z + 1) * n_phi];
            for (i, cell) in row.iter_mut().enumerate() {
                *cell = by_shift[(z * step + n_phi - i) % n_phi];
            }
        }
        Ok(TransitionKernel {
            snr_db: config.snr_db(),
            k,
            m: config.m(),
            n_phi,
            theta0,
            offset,
            rho,
            quadrature_tol,
            source_dithered: false,
            table,
        })
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn a(&self) -> usize {
        self.k / self.m
    }

    pub fn n_phi(&self) -> usize {
        self.n_phi
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn quadrature_tol(&self) -> f64 {
        self.quadrature_tol
    }

    /// Grid point `i`.
    pub fn phi(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * TAU / self.n_phi as f64
    }

    /// Grid points per sector.
    pub fn sector_step(&self) -> usize {
        self.n_phi / self.k
    }

    /// `P(z | 0, phi_i)` for all grid points.
    pub fn row(&self, z: usize) -> &[f64] {
        &self.table[z * self.n_phi..(z + 1) * self.n_phi]
    }

    pub(crate) fn table_data(&self) -> &[f64] {
        &self.table
    }

    pub fn table(&self, z: usize, i: usize) -> f64 {
        self.table[z * self.n_phi + i]
    }

    /// Row index serving `P(z | x, .)`.
    pub fn row_index(&self, z: usize, x: usize) -> usize {
        let a = self.a();
        (z + self.k - (a * x) % self.k) % self.k
    }

    /// `P(z | x, phi_i)` via `P(z - a x | 0, phi_i)`.
    pub fn lookup(&self, z: usize, x: usize, i: usize) -> f64 {
        self.table(self.row_index(z, x), i)
    }

    /// Direct quadrature at an arbitrary phase (not restricted to the grid).
    pub fn probability_at(&self, z: usize, x: usize, phi: f64) -> Result<f64> {
        let psi = self.theta0 + self.offset + x as f64 * TAU / self.m as f64 + phi;
        sector_probability_at(z, psi, self.k, self.rho, self.quadrature_tol)
    }

    /// Largest `|sum_z P(z | 0, phi_i) - 1|` over the grid.
    pub fn max_row_sum_deviation(&self) -> f64 {
        (0..self.n_phi)
            .map(|i| ((0..self.k).map(|z| self.table(z, i)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn check_block(&self, z: &[usize], x: &[usize]) -> Result<()> {
        if z.len() != x.len() || z.is_empty() {
            return Err(Error::InvalidInput(format!(
                "output ({}) and input ({}) blocks must be nonempty and equally long",
                z.len(),
                x.len()
            )));
        }
        if z.iter().any(|&v| v >= self.k) || x.iter().any(|&v| v >= self.m) {
            return Err(Error::InvalidInput("symbol out of range".into()));
        }
        Ok(())
    }

    /// `P(z | x) = (1/2pi) int prod_l P(z_l | x_l, phi) dphi` on the midpoint grid.
    pub fn block_conditional(&self, z: &[usize], x: &[usize]) -> Result<f64> {
        if self.source_dithered {
            return Err(Error::DitheredUnsupported("block_conditional"));
        }
        self.check_block(z, x)?;
        let rows: Vec<&[f64]> = z
            .iter()
            .zip(x)
            .map(|(&zl, &xl)| self.row(self.row_index(zl, xl)))
            .collect();
        Ok(grid_average_of_product(&rows, self.n_phi))
    }

    /// Write the table as CSV with columns `phi_index,z,probability`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "phi_index,z,probability")?;
        for i in 0..self.n_phi {
            for z in 0..self.k {
                writeln!(out, "{i},{z},{}", self.table(z, i))?;
            }
        }
        Ok(())
    }

    /// Read a table written by [`TransitionKernel::write_csv`]; `config` supplies
    /// the model parameters the table was computed for.
    pub fn read_csv<R: BufRead>(input: R, config: &SystemConfig, quadrature_tol: f64) -> Result<Self> {
        let rho = rho_of(config)?;
        let k = config.k();
        let mut cells: Vec<(usize, usize, f64)> = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("phi_index")) {
                continue;
            }
            let mut parts = line.split(',');
            let mut field = |name: &str| {
                parts
                    .next()
                    .map(str::trim)
                    .ok_or_else(|| Error::Parse(format!("line {}: missing {name}", lineno + 1)))
            };
            let i = field("phi_index")?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let z = field("z")?
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let p = field("probability")?
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if z >= k {
                return Err(Error::Parse(format!("line {}: sector {z} >= K={k}", lineno + 1)));
            }
            cells.push((i, z, p));
        }
        if cells.is_empty() || !cells.len().is_multiple_of(k) {
            return Err(Error::Parse(format!(
                "expected a multiple of K={k} rows, got {}",
                cells.len()
            )));
        }
        let n_phi = cells.len() / k;
        if !n_phi.is_multiple_of(k) {
            return Err(Error::Parse(format!("grid size {n_phi} is not a multiple of K={k}")));
        }
        let mut table = vec![f64::NAN; k * n_phi];
        for (i, z, p) in cells {
            if i >= n_phi {
                return Err(Error::Parse(format!("phi_index {i} >= {n_phi}")));
            }
            table[z * n_phi + i] = p;
        }
        if table.iter().any(|v| v.is_nan()) {
            return Err(Error::Parse("kernel CSV has missing cells".into()));
        }
        Ok(TransitionKernel {
            snr_db: config.snr_db(),
            k,
            m: config.m(),
            n_phi,
            theta0: config.theta0(),
            offset: 0.0,
            rho,
            quadrature_tol,
            source_dithered: config.is_dithered(),
            table,
        })
    }
}

/// `sum_i a[i] * b[i]` with eight independent accumulators so the loop vectorises.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Grid average of the elementwise product of `rows`.
pub(crate) fn grid_average_of_product(rows: &[&[f64]], n: usize) -> f64 {
    if rows.len() > LOG_DOMAIN_THRESHOLD {
        return log_domain_average(rows, n);
    }
    let mut acc = rows[0].to_vec();
    for row in &rows[1..] {
        for (a, &r) in acc.iter_mut().zip(row.iter()) {
            *a *= r;
        }
    }
    acc.iter().sum::<f64>() / n as f64
}

fn log_domain_average(rows: &[&[f64]], n: usize) -> f64 {
    let logs: Vec<f64> = (0..n)
        .map(|i| rows.iter().map(|r| r[i].ln()).sum::<f64>())
        .collect();
    let peak = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if peak == f64::NEG_INFINITY {
        return 0.0;
    }
    let s: f64 = logs.iter().map(|&v| (v - peak).exp()).sum();
    (peak + s.ln() - (n as f64).ln()).exp()
}

/// Per-position kernels for a dithered constellation: position `l` sees the
/// constellation rotated by `delta_l`.
#[derive(Debug, Clone)]
pub struct DitheredKernel {
    dither: Vec<f64>,
    kernels: Vec<TransitionKernel>,
    position: Vec<usize>,
}

impl DitheredKernel {
    pub fn build(config: &SystemConfig, n_phi: usize, quadrature_tol: f64) -> Result<Self> {
        let mut kernels: Vec<TransitionKernel> = Vec::new();
        let mut position = Vec::with_capacity(config.l());
        for &delta in config.dither() {
            match kernels.iter().position(|k| k.offset == delta) {
                Some(idx) => position.push(idx),
                None => {
                    kernels.push(TransitionKernel::build_with_offset(
                        config,
                        delta,
                        n_phi,
                        quadrature_tol,
                    )?);
                    position.push(kernels.len() - 1);
                }
            }
        }
        Ok(DitheredKernel {
            dither: config.dither().to_vec(),
            kernels,
            position,
        })
    }

    pub fn build_default(config: &SystemConfig) -> Result<Self> {
        Self::build(config, default_n_phi(config.k()), DEFAULT_QUADRATURE_TOL)
    }

    /// Wrap an undithered kernel for a block of `l` symbols.
    pub fn undithered(kernel: TransitionKernel, l: usize) -> Self {
        DitheredKernel {
            dither: vec![0.0; l],
            kernels: vec![kernel],
            position: vec![0; l],
        }
    }

    pub fn l(&self) -> usize {
        self.position.len()
    }

    pub fn dither(&self) -> &[f64] {
        &self.dither
    }

    /// Kernel serving position `l`.
    pub fn at(&self, l: usize) -> &TransitionKernel {
        &self.kernels[self.position[l]]
    }

    pub fn k(&self) -> usize {
        self.kernels[0].k
    }

    pub fn m(&self) -> usize {
        self.kernels[0].m
    }

    pub fn a(&self) -> usize {
        self.kernels[0].a()
    }

    pub fn n_phi(&self) -> usize {
        self.kernels[0].n_phi
    }

    pub fn is_dithered(&self) -> bool {
        self.dither.iter().any(|&d| d != 0.0)
    }

    /// `P(z_l | x_l, phi_i)` over the grid for position `l`.
    pub fn row(&self, l: usize, z: usize, x: usize) -> &[f64] {
        let kernel = self.at(l);
        kernel.row(kernel.row_index(z, x))
    }

    pub fn block_conditional(&self, z: &[usize], x: &[usize]) -> Result<f64> {
        if z.len() != self.l() {
            return Err(Error::InvalidInput(format!(
                "block of {} symbols, kernel expects L={}",
                z.len(),
                self.l()
            )));
        }
        self.kernels[0].check_block(z, x)?;
        let rows: Vec<&[f64]> = (0..self.l()).map(|l| self.row(l, z[l], x[l])).collect();
        Ok(grid_average_of_product(&rows, self.n_phi()))
    }

    /// Per-position tables of `(1/M) sum_m P(z | m, phi_i)`, laid out as
    /// `[l][z * n_phi + i]`. The uniform input average of `P(z | x, phi)`
    /// factorises over positions, so `P(z)` is the grid average of their product.
    pub fn symbol_averaged_tables(&self) -> Vec<Vec<f64>> {
        let (k, m, n) = (self.k(), self.m(), self.n_phi());
        (0..self.l())
            .map(|l| {
                let kernel = self.at(l);
                let mut out = vec![0.0; k * n];
                for z in 0..k {
                    let dst = &mut out[z * n..(z + 1) * n];
                    for x in 0..m {
                        let src = kernel.row(kernel.row_index(z, x));
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                    for d in dst.iter_mut() {
                        *d /= m as f64;
                    }
                }
                out
            })
            .collect()
    }
}

/// `P(z | x)` for a possibly dithered configuration, integrating the
/// per-symbol likelihoods at phase `theta_{x_l} + delta_l + phi` on an
/// `n_phi`-point grid.
pub fn block_conditional_dithered(
    z: &[usize],
    x: &[usize],
    config: &SystemConfig,
    n_phi: usize,
) -> Result<f64> {
    config.validate_output(z)?;
    config.validate_input(x)?;
    DitheredKernel::build(config, n_phi, DEFAULT_QUADRATURE_TOL)?.block_conditional(z, x)
}

/// `P(z | x)` on an `n_phi`-point midpoint grid with every factor computed by
/// direct quadrature instead of kernel lookup. Slow; an independent check of
/// the tabulated route.
pub fn block_conditional_direct(z: &[usize], x: &[usize], config: &SystemConfig, n_phi: usize) -> Result<f64> {
    config.validate_output(z)?;
    config.validate_input(x)?;
    let rho = rho_of(config)?;
    let mut acc = 0.0;
    for i in 0..n_phi {
        let phi = (i as f64 + 0.5) * TAU / n_phi as f64;
        let mut p = 1.0;
        for (l, (&zl, &xl)) in z.iter().zip(x).enumerate() {
            let psi = config.constellation_phase(xl) + config.dither()[l] + phi;
            p *= sector_probability_at(zl, psi, config.k(), rho, DEFAULT_QUADRATURE_TOL)?;
        }
        acc += p;
    }
    Ok(acc / n_phi as f64)
}

/// Sums `sum_i prod_j row(ids[j])[i]` for a sequence of id vectors, reusing the
/// partial products of the longest common prefix with the previous call.
pub(crate) struct PrefixProducts<'a> {
    table: &'a [f64],
    n: usize,
    ids: Vec<usize>,
    levels: Vec<Vec<f64>>,
    valid: usize,
}

impl<'a> PrefixProducts<'a> {
    pub(crate) fn new(table: &'a [f64], n: usize, len: usize) -> Self {
        PrefixProducts {
            table,
            n,
            ids: vec![usize::MAX; len],
            levels: vec![vec![0.0; n]; len.saturating_sub(1)],
            valid: 0,
        }
    }

    fn row(&self, id: usize) -> &'a [f64] {
        &self.table[id * self.n..(id + 1) * self.n]
    }

    pub(crate) fn sum(&mut self, ids: &[usize]) -> f64 {
        let len = ids.len();
        debug_assert_eq!(len, self.ids.len());
        if len == 1 {
            return self.row(ids[0]).iter().sum();
        }
        let mut p = 0;
        while p < self.valid && p < len - 1 && self.ids[p] == ids[p] {
            p += 1;
        }
        for d in p..len - 1 {
            let row = self.row(ids[d]);
            if d == 0 {
                self.levels[0].copy_from_slice(row);
            } else {
                let (before, after) = self.levels.split_at_mut(d);
                let prev = &before[d - 1];
                for ((dst, &a), &b) in after[0].iter_mut().zip(prev).zip(row) {
                    *dst = a * b;
                }
            }
            self.ids[d] = ids[d];
        }
        self.valid = len - 1;
        dot(&self.levels[len - 2], self.row(ids[len - 1]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_block_with_phase, DitherMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

    fn cfg(k: usize, l: usize, snr: f64) -> SystemConfig {
        SystemConfig::new(4, k, l, snr).unwrap()
    }

    #[test]
    fn density_is_normalised() {
        for &rho in &[1e-4, 0.5, 4.0, 100.0, 1e4] {
            let total = relative_sector_mass(-PI, TAU, rho, 1e-13).unwrap();
            assert!((total - 1.0).abs() < 1e-11, "rho={rho}: {total}");
        }
    }

    #[test]
    fn sector_symmetries_of_direct_quadrature() {
        let c = cfg(8, 1, 6.0);
        let step = TAU / 8.0;
        for &phi in &[0.0, 0.3, 1.7, 4.0] {
            for x in 0..4 {
                let p = sector_probability(3, x, phi, &c).unwrap();
                let shifted = sector_probability(4, x, phi + step, &c).unwrap();
                assert!((p - shifted).abs() <= 1e-14 * p.max(1e-300), "{p} {shifted}");
                let p2 = sector_probability(2, x, phi, &c).unwrap();
                let jumped = sector_probability(4, (x + 1) % 4, phi, &c).unwrap();
                assert!((p2 - jumped).abs() <= 1e-13 * p2);
            }
        }
    }

    #[test]
    fn limits() {
        // to first order in the amplitude sqrt(rho) the density is
        // 1/2pi + sqrt(rho) cos(delta) / (2 sqrt(pi))
        let low = cfg(8, 1, -40.0);
        let kappa = 0.01f64;
        for z in 0..8 {
            let p = sector_probability(z, 1, 0.7, &low).unwrap();
            let lo = z as f64 * TAU / 8.0 - (PI / 2.0 + 0.7);
            let first_order =
                0.125 + kappa / (2.0 * PI.sqrt()) * ((lo + TAU / 8.0).sin() - lo.sin());
            assert!((p - first_order).abs() < 1e-5, "z={z}: {p} vs {first_order}");
            assert!((p - 0.125).abs() < 2.5e-3);
        }
        let high = cfg(8, 1, 40.0);
        assert!(sector_probability(0, 0, FRAC_PI_8, &high).unwrap() >= 1.0 - 1e-6);
        let silent = cfg(8, 1, f64::INFINITY);
        assert!(matches!(
            sector_probability(0, 0, 0.0, &silent),
            Err(Error::DegenerateNoise)
        ));
    }

    #[test]
    fn matches_monte_carlo_at_6db() {
        let c = cfg(8, 1, 6.0);
        let p = sector_probability(0, 0, FRAC_PI_8, &c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000_000usize;
        let mut hits = 0usize;
        for _ in 0..draws {
            let d = sample_block_with_phase(&[0], &c, FRAC_PI_8, &mut rng).unwrap();
            hits += (d.z[0] == 0) as usize;
        }
        let est = hits as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((est - p).abs() < 3.0 * se, "quadrature {p}, monte carlo {est} (se {se})");
    }

    #[test]
    fn kernel_rows_and_index_arithmetic() {
        let c = cfg(8, 1, 6.0);
        let tol = 1e-12;
        let kernel = TransitionKernel::build(&c, 1024, tol).unwrap();
        assert!(kernel.max_row_sum_deviation() < 10.0 * tol);
        assert!(kernel.table_data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for i in [0, 17, 511, 1023] {
            assert_eq!(kernel.lookup(5, 1, i), kernel.table(3, i));
            let s = kernel.sector_step();
            assert_eq!(kernel.table(2, i), kernel.table(3, (i + s) % 1024));
        }
        // against direct quadrature at the grid points
        for &(z, x, i) in &[(0, 0, 0), (3, 2, 100), (7, 1, 999), (5, 3, 512)] {
            let direct = sector_probability(z, x, kernel.phi(i), &c).unwrap();
            assert!((direct - kernel.lookup(z, x, i)).abs() < tol);
        }
        assert!(TransitionKernel::build(&c, 1004, tol).is_err());
        assert_eq!(default_n_phi(12), 2052);
        assert_eq!(default_n_phi(8), 2048);
    }

    #[test]
    fn block_conditional_examples() {
        let c = cfg(8, 4, 6.0);
        let kernel = TransitionKernel::build_default(&c).unwrap();
        for z in 0..8 {
            for x in 0..4 {
                let p = kernel.block_conditional(&[z], &[x]).unwrap();
                assert!((p - 0.125).abs() < 1e-11);
            }
        }
        let x = [0, 3, 1, 2];
        let p1 = kernel.block_conditional(&[5, 7, 2, 4], &x).unwrap();
        let p2 = kernel.block_conditional(&[6, 0, 3, 5], &x).unwrap();
        assert!((p1 - p2).abs() <= 1e-12 * p1);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let z: Vec<usize> = (0..4).map(|_| rng.random_range(0..8)).collect();
            let x: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
            let perm = [2, 0, 3, 1];
            let pz: Vec<usize> = perm.iter().map(|&j| z[j]).collect();
            let px: Vec<usize> = perm.iter().map(|&j| x[j]).collect();
            let a = kernel.block_conditional(&z, &x).unwrap();
            let b = kernel.block_conditional(&pz, &px).unwrap();
            assert!((a - b).abs() <= 1e-10 * a);
        }
    }

    #[test]
    fn dithered_paths() {
        let plain = cfg(8, 2, 10.0);
        let kernel = TransitionKernel::build_default(&plain).unwrap();
        let wrapped = DitheredKernel::build_default(&plain).unwrap();
        for z in [[1, 0], [3, 3], [7, 2]] {
            for x in [[0, 0], [1, 3]] {
                let a = kernel.block_conditional(&z, &x).unwrap();
                let b = wrapped.block_conditional(&z, &x).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
        let dithered = plain.clone().with_dither(DitherMode::Paper).unwrap();
        assert!(matches!(
            TransitionKernel::build_default(&dithered)
                .unwrap()
                .block_conditional(&[0, 0], &[0, 0]),
            Err(Error::DitheredUnsupported(_))
        ));
        let single = SystemConfig::new(4, 8, 1, 5.0)
            .unwrap()
            .with_dither(DitherMode::Explicit(vec![0.3]))
            .unwrap();
        let p = block_conditional_dithered(&[6], &[1], &single, 2048).unwrap();
        assert!((p - 0.125).abs() < 1e-11);
    }

    #[test]
    fn dithered_matches_monte_carlo() {
        let c = cfg(8, 2, 10.0).with_dither(DitherMode::Paper).unwrap();
        let dk = DitheredKernel::build_default(&c).unwrap();
        let x = [0, 3];
        let z = [1, 0];
        let p = dk.block_conditional(&z, &x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let draws = 10_000_000usize;
        let mut hits = 0usize;
        for _ in 0..draws {
            let d = crate::channel::sample_block(&x, &c, &mut rng).unwrap();
            hits += (d.z == z) as usize;
        }
        let est = hits as f64 / draws as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((est - p).abs() < 3.0 * se, "grid {p}, monte carlo {est} (se {se})");
    }

    #[test]
    fn kernel_csv_round_trip() {
        let c = cfg(8, 2, 3.0).with_theta0(FRAC_PI_4);
        let kernel = TransitionKernel::build(&c, 64, 1e-12).unwrap();
        let mut buf = Vec::new();
        kernel.write_csv(&mut buf).unwrap();
        let back = TransitionKernel::read_csv(buf.as_slice(), &c, 1e-12).unwrap();
        assert_eq!(back.n_phi(), 64);
        assert_eq!(back.table_data(), kernel.table_data());
        assert!(TransitionKernel::read_csv("phi_index,z,probability\n0,0,1\n".as_bytes(), &c, 1e-12)
            .is_err());
    }

    #[test]
    fn prefix_products_match_direct_products() {
        let c = cfg(8, 3, 4.0);
        let kernel = TransitionKernel::build(&c, 256, 1e-12).unwrap();
        let mut pp = PrefixProducts::new(kernel.table_data(), 256, 3);
        for ids in [[0, 1, 2], [0, 1, 3], [0, 4, 4], [2, 1, 0], [2, 1, 0]] {
            let rows: Vec<&[f64]> = ids.iter().map(|&z| kernel.row(z)).collect();
            let direct = grid_average_of_product(&rows, 256) * 256.0;
            let got = pp.sum(&ids);
            assert!((direct - got).abs() <= 1e-14 * direct.abs());
        }
    }

    #[test]
    fn log_domain_agrees_with_linear() {
        let c = cfg(8, 18, 2.0);
        let kernel = TransitionKernel::build(&c, 256, 1e-12).unwrap();
        let rows: Vec<&[f64]> = (0..18).map(|l| kernel.row(l % 3)).collect();
        let log = log_domain_average(&rows, 256);
        let mut acc = vec![1.0; 256];
        for r in &rows {
            for (a, &v) in acc.iter_mut().zip(r.iter()) {
                *a *= v;
            }
        }
        let lin = acc.iter().sum::<f64>() / 256.0;
        assert!((log - lin).abs() <= 1e-12 * lin);
    }
}
