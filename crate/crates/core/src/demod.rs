//! GLRT block demodulation, `argmax_x max_phi P(z | x, phi)`.
//!
//! For a fixed phase the inner maximisation decouples into per-symbol coherent
//! decisions. The likelihood of sector `z_l` is symmetric and unimodal in the
//! angular distance between the received signal phase and the sector centre,
//! so the coherent decision is the constellation point nearest the centre.
//! That decision changes only at one crossover angle per symbol within every
//! `2pi/M` period. Sweeping the segments between sorted crossover angles
//! therefore yields every input that is coherently optimal for some phase,
//! and the outer maximisation only has to compare those few candidates.
//!
//! Outputs are first reduced modulo `a`: with `z = a q + r`, the winner for `z`
//! is the winner for `r` plus `q` (mod `M`).

use std::f64::consts::TAU;

use crate::channel::SystemConfig;
use crate::combinatorics::all_vectors;
use crate::error::{Error, Result};
use crate::transition::{grid_size_for, DitheredKernel, TransitionKernel};

/// Nominal number of phase points scanned per candidate.
pub const NOMINAL_SCAN_POINTS: usize = 720;

/// Scan grid size for `k` sectors: 720 rounded up to a multiple of `k`.
pub fn default_scan_points(k: usize) -> usize {
    grid_size_for(k, NOMINAL_SCAN_POINTS)
}

/// Angles closer than this are treated as one crossover.
const ANGLE_MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlrtOptions {
    /// Refine the best grid phase of each candidate by golden-section search
    /// on direct quadrature.
    pub refine: bool,
    /// Width of the final golden-section bracket, in radians.
    pub refine_tol: f64,
    /// Relative metric gap below which the top candidates count as tied.
    pub tie_tol: f64,
    /// Check each geometric crossover angle against a likelihood-equality root.
    pub validate_crossovers: bool,
}

impl Default for GlrtOptions {
    fn default() -> Self {
        GlrtOptions {
            refine: true,
            refine_tol: 1e-6,
            tie_tol: 1e-6,
            validate_crossovers: false,
        }
    }
}

impl GlrtOptions {
    /// Grid scan only; the setting used for bulk simulation.
    pub fn fast() -> Self {
        GlrtOptions {
            refine: false,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlrtCandidate {
    pub x: Vec<usize>,
    /// Phase in `[0, 2pi)` maximising `P(z | x, phi)`.
    pub phi_star: f64,
    /// `max_phi P(z | x, phi)`.
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlrtResult {
    pub winner: Vec<usize>,
    /// Index of the winner in `candidates`.
    pub winner_index: usize,
    pub candidates: Vec<GlrtCandidate>,
    /// Top two metrics agree within the tie tolerance.
    pub tie: bool,
    /// Indices of all candidates tied with the best one (including it).
    pub tied: Vec<usize>,
    /// Sorted distinct crossover angles in `[0, 2pi/M)`.
    pub crossover_angles: Vec<f64>,
    /// Largest `|root - alpha|` seen when crossover validation is enabled.
    pub crossover_validation: Option<f64>,
}

impl GlrtResult {
    pub fn metric(&self) -> f64 {
        self.candidates[self.winner_index].metric
    }
}

/// Per-position view of the tabulated likelihoods used by the demodulator.
struct Positions<'a> {
    kernels: Vec<&'a TransitionKernel>,
}

impl<'a> Positions<'a> {
    fn undithered(kernel: &'a TransitionKernel, l: usize) -> Self {
        Positions {
            kernels: vec![kernel; l],
        }
    }

    fn dithered(kernel: &'a DitheredKernel) -> Self {
        Positions {
            kernels: (0..kernel.l()).map(|l| kernel.at(l)).collect(),
        }
    }

    fn first(&self) -> &TransitionKernel {
        self.kernels[0]
    }

    fn len(&self) -> usize {
        self.kernels.len()
    }

    fn offset(&self, l: usize) -> f64 {
        self.kernels[l].offset()
    }
}

/// Centre of sector `z`.
fn sector_centre(z: usize, k: usize) -> f64 {
    TAU * (z as f64 + 0.5) / k as f64
}

/// Crossover angle of one symbol: the phase where the centre of sector `z`
/// sits midway between two adjacent constellation points.
fn crossover(z: usize, k: usize, m: usize, theta0: f64, delta: f64) -> f64 {
    let period = TAU / m as f64;
    (sector_centre(z, k) - theta0 - delta - 0.5 * period).rem_euclid(period)
}

fn sorted_distinct(mut angles: Vec<f64>, period: f64) -> Vec<f64> {
    angles.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(angles.len());
    for a in angles {
        match out.last() {
            Some(&last) if a - last < ANGLE_MERGE_TOL => {}
            _ => out.push(a),
        }
    }
    if out.len() > 1 && out[0] + period - out[out.len() - 1] < ANGLE_MERGE_TOL {
        out.pop();
    }
    out
}

/// Sorted distinct crossover angles in `[0, 2pi/M)` for output `z`.
///
/// Undithered configurations require `z` already reduced modulo `a`, which
/// bounds the count by `a`. Dithered configurations accept any `z`; each
/// position uses its own offset.
pub fn crossover_angles(z: &[usize], config: &SystemConfig) -> Result<Vec<f64>> {
    config.validate_output(z)?;
    if !config.is_dithered() {
        if let Some(&bad) = z.iter().find(|&&v| v >= config.a()) {
            return Err(Error::InvalidInput(format!(
                "reduce the output modulo a={} first (got component {bad})",
                config.a()
            )));
        }
    }
    let (k, m) = (config.k(), config.m());
    let angles = z
        .iter()
        .zip(config.dither())
        .map(|(&zl, &d)| crossover(zl, k, m, config.theta0(), d))
        .collect();
    Ok(sorted_distinct(angles, TAU / m as f64))
}

/// Root of `P(z | j, phi) - P(z | j + 1, phi)` near the geometric crossover
/// `alpha`, by bisection on direct quadrature. Returns the root.
pub fn crossover_root(z: usize, kernel: &TransitionKernel, alpha: f64) -> Result<f64> {
    let (k, m) = (kernel.k(), kernel.m());
    let period = TAU / m as f64;
    // the sector centre lies halfway between points j and j + 1 at phi = alpha
    let shift = sector_centre(z, k) - kernel.theta0() - kernel.offset() - alpha;
    let j = ((shift / period - 0.5).round() as i64).rem_euclid(m as i64) as usize;
    let g = |phi: f64| -> Result<f64> {
        Ok(kernel.probability_at(z, j, phi)? - kernel.probability_at(z, (j + 1) % m, phi)?)
    };
    let half = 0.25 * period;
    let (mut lo, mut hi) = (alpha - half, alpha + half);
    let mut g_lo = g(lo)?;
    let g_hi = g(hi)?;
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::InvalidInput(format!(
            "no likelihood crossover bracketed around {alpha}"
        )));
    }
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        let g_mid = g(mid)?;
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Coherent per-symbol decisions at phase `phi` for the reduced output `r`,
/// normalised so the first symbol is 0.
fn coherent_solution(r: &[usize], pos: &Positions, phi: f64) -> Vec<usize> {
    let kernel = pos.first();
    let (k, m) = (kernel.k(), kernel.m());
    let period = TAU / m as f64;
    let raw: Vec<usize> = r
        .iter()
        .enumerate()
        .map(|(l, &rl)| {
            let shift = sector_centre(rl, k) - kernel.theta0() - pos.offset(l) - phi;
            ((shift / period).round() as i64).rem_euclid(m as i64) as usize
        })
        .collect();
    let first = raw[0];
    raw.iter().map(|&v| (v + m - first) % m).collect()
}

/// `(metric, phi_star)` over the kernel grid.
fn grid_max(z: &[usize], x: &[usize], pos: &Positions, prod: &mut [f64]) -> (f64, usize) {
    let k0 = pos.kernels[0];
    prod.copy_from_slice(k0.row(k0.row_index(z[0], x[0])));
    for l in 1..z.len() {
        let kl = pos.kernels[l];
        let row = kl.row(kl.row_index(z[l], x[l]));
        prod.iter_mut().zip(row).for_each(|(p, &v)| *p *= v);
    }
    let mut best = (prod[0], 0);
    for (i, &v) in prod.iter().enumerate().skip(1) {
        if v > best.0 {
            best = (v, i);
        }
    }
    best
}

fn direct_likelihood(z: &[usize], x: &[usize], pos: &Positions, phi: f64) -> Result<f64> {
    let mut p = 1.0;
    for l in 0..z.len() {
        p *= pos.kernels[l].probability_at(z[l], x[l], phi)?;
    }
    Ok(p)
}

/// Golden-section maximisation of the direct likelihood on `[lo, hi]`.
fn golden_max(z: &[usize], x: &[usize], pos: &Positions, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let mut fc = direct_likelihood(z, x, pos, c)?;
    let mut fd = direct_likelihood(z, x, pos, d)?;
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = direct_likelihood(z, x, pos, c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = direct_likelihood(z, x, pos, d)?;
        }
    }
    Ok(if fc >= fd { (fc, c) } else { (fd, d) })
}

fn evaluate(z: &[usize], x: Vec<usize>, pos: &Positions, opts: &GlrtOptions, prod: &mut [f64]) -> Result<GlrtCandidate> {
    let kernel = pos.first();
    let (grid_metric, i) = grid_max(z, &x, pos, prod);
    let mut metric = grid_metric;
    let mut phi_star = kernel.phi(i);
    if opts.refine {
        let step = TAU / kernel.n_phi() as f64;
        let (refined, phi) = golden_max(z, &x, pos, phi_star - step, phi_star + step, opts.refine_tol)?;
        if refined > metric {
            metric = refined;
            phi_star = phi.rem_euclid(TAU);
        }
    }
    Ok(GlrtCandidate { x, phi_star, metric })
}

fn demodulate(z: &[usize], pos: &Positions, opts: &GlrtOptions) -> Result<GlrtResult> {
    let kernel = pos.first();
    let (k, m, a) = (kernel.k(), kernel.m(), kernel.a());
    if z.len() != pos.len() || z.is_empty() {
        return Err(Error::InvalidInput(format!(
            "output block has {} symbols, expected {}",
            z.len(),
            pos.len()
        )));
    }
    if let Some(&bad) = z.iter().find(|&&v| v >= k) {
        return Err(Error::InvalidInput(format!("sector index {bad} outside 0..{k}")));
    }
    let r: Vec<usize> = z.iter().map(|&v| v % a).collect();
    let q: Vec<usize> = z.iter().map(|&v| v / a).collect();
    let period = TAU / m as f64;

    let angles = sorted_distinct(
        r.iter()
            .enumerate()
            .map(|(l, &rl)| crossover(rl, k, m, kernel.theta0(), pos.offset(l)))
            .collect(),
        period,
    );
    let crossover_validation = if opts.validate_crossovers {
        let mut worst: f64 = 0.0;
        for (l, &rl) in r.iter().enumerate() {
            let alpha = crossover(rl, k, m, kernel.theta0(), pos.offset(l));
            let root = crossover_root(rl, pos.kernels[l], alpha)?;
            worst = worst.max((root - alpha).abs());
        }
        Some(worst)
    } else {
        None
    };

    let mut reduced: Vec<Vec<usize>> = Vec::with_capacity(angles.len());
    for (j, &start) in angles.iter().enumerate() {
        let end = angles.get(j + 1).copied().unwrap_or(angles[0] + period);
        let cand = coherent_solution(&r, pos, 0.5 * (start + end));
        if !reduced.contains(&cand) {
            reduced.push(cand);
        }
    }

    let mut prod = vec![0.0; kernel.n_phi()];
    let mut candidates = Vec::with_capacity(reduced.len());
    for cand in reduced {
        let x: Vec<usize> = cand.iter().zip(&q).map(|(&c, &ql)| (c + ql) % m).collect();
        candidates.push(evaluate(z, x, pos, opts, &mut prod)?);
    }

    let mut winner_index = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.metric > candidates[winner_index].metric {
            winner_index = i;
        }
    }
    let best = candidates[winner_index].metric;
    let tied: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| relative_gap(best, c.metric) < opts.tie_tol)
        .map(|(i, _)| i)
        .collect();
    Ok(GlrtResult {
        winner: candidates[winner_index].x.clone(),
        winner_index,
        tie: tied.len() > 1,
        tied,
        candidates,
        crossover_angles: angles,
        crossover_validation,
    })
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn check_undithered(config: &SystemConfig, kernel: &TransitionKernel) -> Result<()> {
    if config.is_dithered() {
        return Err(Error::DitheredUnsupported("glrt_demodulate"));
    }
    if kernel.k() != config.k() || kernel.m() != config.m() {
        return Err(Error::InvalidConfig("kernel does not match the configuration".into()));
    }
    Ok(())
}

/// GLRT demodulation for standard PSK. The kernel grid is the phase scan grid.
pub fn glrt_demodulate(
    z: &[usize],
    config: &SystemConfig,
    kernel: &TransitionKernel,
    opts: &GlrtOptions,
) -> Result<GlrtResult> {
    check_undithered(config, kernel)?;
    config.validate_output(z)?;
    demodulate(z, &Positions::undithered(kernel, config.l()), opts)
}

/// GLRT demodulation with per-symbol constellation offsets.
pub fn glrt_demodulate_dithered(
    z: &[usize],
    config: &SystemConfig,
    kernel: &DitheredKernel,
    opts: &GlrtOptions,
) -> Result<GlrtResult> {
    config.validate_output(z)?;
    if kernel.l() != config.l() || kernel.k() != config.k() || kernel.m() != config.m() {
        return Err(Error::InvalidConfig("kernel does not match the configuration".into()));
    }
    demodulate(z, &Positions::dithered(kernel), opts)
}

/// Brute-force GLRT over all `M^L` inputs: every input with its grid metric
/// (refined when requested), in lexicographic order of `x`.
pub fn glrt_brute_force(
    z: &[usize],
    config: &SystemConfig,
    kernel: &DitheredKernel,
    opts: &GlrtOptions,
) -> Result<Vec<GlrtCandidate>> {
    config.validate_output(z)?;
    let pos = Positions::dithered(kernel);
    let mut prod = vec![0.0; kernel.n_phi()];
    all_vectors(config.m(), config.l())
        .map(|x| evaluate(z, x, &pos, opts, &mut prod))
        .collect()
}

/// Shift `x` by a constant so that its first symbol is 0.
pub fn normalize_first(x: &[usize], m: usize) -> Vec<usize> {
    let first = x.first().copied().unwrap_or(0);
    x.iter().map(|&v| (v + m - first) % m).collect()
}
