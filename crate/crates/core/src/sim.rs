//! Monte Carlo symbol error rates for GLRT block demodulation.
//!
//! GLRT cannot tell `x` from `x + i` (mod `M`), so errors are counted after
//! removing that ambiguity. The default pilot convention fixes `x_0 = 0`,
//! rotates the decision so its first symbol is 0 and scores the other `L - 1`
//! symbols. The genie convention draws all symbols freely and scores all `L`
//! under the best rotation.
//!
//! Blocks are processed in fixed-size chunks. Chunk `c` at SNR `s` draws from
//! its own ChaCha8 stream derived from `(seed, s, c)`, and chunk results are
//! merged in index order. Results therefore do not depend on the thread count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{sample_block, SystemConfig};
use crate::demod::{default_scan_points, glrt_demodulate_dithered, normalize_first, GlrtOptions};
use crate::error::{Error, Result};
use crate::transition::{DitheredKernel, DEFAULT_QUADRATURE_TOL};

/// Blocks per chunk.
pub const CHUNK_BLOCKS: usize = 1000;

/// Normal quantile for the 95% Wilson interval.
pub const WILSON_Z: f64 = 1.96;

/// RNG for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser, used to derive per-SNR seeds.
fn mix(mut v: u64) -> u64 {
    v = v.wrapping_add(0x9e37_79b9_7f4a_7c15);
    v = (v ^ (v >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    v = (v ^ (v >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    v ^ (v >> 31)
}

fn point_seed(seed: u64, snr_db: f64) -> u64 {
    seed ^ mix(snr_db.to_bits())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convention {
    Pilot,
    Genie,
}

impl FromStr for Convention {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pilot" => Ok(Convention::Pilot),
            "genie" => Ok(Convention::Genie),
            other => Err(Error::Parse(format!(
                "unknown convention {other:?} (expected pilot or genie)"
            ))),
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Pilot => "pilot",
            Convention::Genie => "genie",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerOptions {
    pub trials: usize,
    pub seed: u64,
    pub convention: Convention,
    pub glrt: GlrtOptions,
    /// Phase scan grid; defaults to [`default_scan_points`].
    pub n_scan: Option<usize>,
}

impl SerOptions {
    pub fn new(trials: usize, seed: u64) -> Self {
        SerOptions {
            trials,
            seed,
            convention: Convention::Pilot,
            glrt: GlrtOptions::fast(),
            n_scan: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerPoint {
    pub snr_db: f64,
    pub l: usize,
    pub k: usize,
    pub m: usize,
    pub dither_mode: String,
    /// Blocks simulated.
    pub trials: usize,
    pub symbol_errors: u64,
    /// Symbols scored: `trials (L - 1)` under the pilot convention.
    pub symbols: u64,
    pub ser: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ties: u64,
    pub tie_rate: f64,
    pub seed: u64,
}

/// Wilson score interval for `successes` out of `n`.
pub fn wilson_interval(successes: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    errors: u64,
    symbols: u64,
    ties: u64,
}

fn simulate_chunk(
    config: &SystemConfig,
    kernel: &DitheredKernel,
    opts: &SerOptions,
    rng: &mut ChaCha8Rng,
    blocks: usize,
) -> Result<Tally> {
    let (m, l) = (config.m(), config.l());
    let mut tally = Tally::default();
    let mut x = vec![0; l];
    for _ in 0..blocks {
        let first_random = match opts.convention {
            Convention::Pilot => 1,
            Convention::Genie => 0,
        };
        x[0] = 0;
        for s in &mut x[first_random..] {
            *s = rng.random_range(0..m);
        }
        let draw = sample_block(&x, config, rng)?;
        let res = glrt_demodulate_dithered(&draw.z, config, kernel, &opts.glrt)?;
        let decision = if res.tie {
            tally.ties += 1;
            let pick = res.tied[rng.random_range(0..res.tied.len())];
            &res.candidates[pick].x
        } else {
            &res.winner
        };
        match opts.convention {
            Convention::Pilot => {
                let w = normalize_first(decision, m);
                tally.errors += w[1..].iter().zip(&x[1..]).filter(|(a, b)| a != b).count() as u64;
                tally.symbols += (l - 1) as u64;
            }
            Convention::Genie => {
                let best = (0..m)
                    .map(|i| decision.iter().zip(&x).filter(|(&w, &s)| (w + i) % m != s).count())
                    .min()
                    .unwrap_or(0);
                tally.errors += best as u64;
                tally.symbols += l as u64;
            }
        }
    }
    Ok(tally)
}

/// Simulate one SNR point with the SNR taken from `config`.
pub fn run_ser_point(config: &SystemConfig, opts: &SerOptions) -> Result<SerPoint> {
    if opts.trials == 0 {
        return Err(Error::InvalidInput("at least one trial is required".into()));
    }
    if opts.convention == Convention::Pilot && config.l() < 2 {
        return Err(Error::InvalidConfig(
            "the pilot convention needs L >= 2 (the first symbol is the pilot)".into(),
        ));
    }
    let n_scan = opts.n_scan.unwrap_or_else(|| default_scan_points(config.k()));
    let kernel = DitheredKernel::build(config, n_scan, DEFAULT_QUADRATURE_TOL)?;
    let seed = point_seed(opts.seed, config.snr_db());
    let chunks = opts.trials.div_ceil(CHUNK_BLOCKS);
    let tallies: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, c as u64);
            let blocks = CHUNK_BLOCKS.min(opts.trials - c * CHUNK_BLOCKS);
            simulate_chunk(config, &kernel, opts, &mut rng, blocks)
        })
        .collect::<Result<_>>()?;
    let total = tallies.iter().fold(Tally::default(), |a, t| Tally {
        errors: a.errors + t.errors,
        symbols: a.symbols + t.symbols,
        ties: a.ties + t.ties,
    });
    let (ci_low, ci_high) = wilson_interval(total.errors, total.symbols, WILSON_Z);
    Ok(SerPoint {
        snr_db: config.snr_db(),
        l: config.l(),
        k: config.k(),
        m: config.m(),
        dither_mode: config.dither_mode().label(),
        trials: opts.trials,
        symbol_errors: total.errors,
        symbols: total.symbols,
        ser: total.errors as f64 / total.symbols as f64,
        ci_low,
        ci_high,
        ties: total.ties,
        tie_rate: total.ties as f64 / opts.trials as f64,
        seed: opts.seed,
    })
}

/// SER at each SNR of `snr_list` (dB).
pub fn run_ser(config: &SystemConfig, snr_list: &[f64], opts: &SerOptions) -> Result<Vec<SerPoint>> {
    snr_list
        .iter()
        .map(|&snr| run_ser_point(&config.clone().with_snr_db(snr)?, opts))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TieCensus {
    pub snr_db: f64,
    pub trials: usize,
    pub ties: u64,
    pub tie_rate: f64,
    /// Wilson interval on the tie rate.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fraction of blocks whose top GLRT metrics tie, at one SNR.
pub fn run_tie_census(config: &SystemConfig, snr_db: f64, trials: usize, seed: u64) -> Result<TieCensus> {
    let cfg = config.clone().with_snr_db(snr_db)?;
    let mut opts = SerOptions::new(trials, seed);
    if cfg.l() < 2 {
        opts.convention = Convention::Genie;
    }
    let p = run_ser_point(&cfg, &opts)?;
    let (ci_low, ci_high) = wilson_interval(p.ties, trials as u64, WILSON_Z);
    Ok(TieCensus {
        snr_db,
        trials,
        ties: p.ties,
        tie_rate: p.tie_rate,
        ci_low,
        ci_high,
    })
}

/// SNR at which the SER curve first falls through `target`, interpolating
/// `log10(ser)` linearly in dB between the bracketing points. A zero-error
/// point is placed at half an error.
pub fn ser_crossing(points: &[SerPoint], target: f64) -> Option<f64> {
    let floor = |p: &SerPoint| {
        if p.symbol_errors == 0 {
            0.5 / p.symbols as f64
        } else {
            p.ser
        }
    };
    points.windows(2).find_map(|w| {
        let (a, b) = (floor(&w[0]), floor(&w[1]));
        if a >= target && b < target {
            let t = (a.log10() - target.log10()) / (a.log10() - b.log10());
            Some(w[0].snr_db + t * (w[1].snr_db - w[0].snr_db))
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DitherMode;

    #[test]
    fn guessing_at_vanishing_snr() {
        let c = SystemConfig::new(4, 8, 2, -40.0).unwrap();
        let p = run_ser_point(&c, &SerOptions::new(20_000, 3)).unwrap();
        assert!((p.ser - 0.75).abs() < 0.02, "{}", p.ser);
        assert!(p.ci_low <= p.ser && p.ser <= p.ci_high);
        assert_eq!(p.symbols, 20_000);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let c = SystemConfig::new(4, 12, 4, 8.0).unwrap();
        let opts = SerOptions::new(3500, 42);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_ser(&c, &[4.0, 8.0], &opts).unwrap())
        };
        let a = run(1);
        assert_eq!(a, run(3));
        assert_eq!(a, run_ser(&c, &[4.0, 8.0], &opts).unwrap());
        let other = run_ser(&c, &[4.0, 8.0], &SerOptions::new(3500, 43)).unwrap();
        assert_ne!(a[0].symbol_errors, other[0].symbol_errors);
    }

    #[test]
    fn dithered_high_snr_is_error_free() {
        let c = SystemConfig::new(4, 8, 4, 40.0)
            .unwrap()
            .with_dither(DitherMode::Paper)
            .unwrap();
        let p = run_ser_point(&c, &SerOptions::new(2000, 1)).unwrap();
        assert_eq!(p.symbol_errors, 0);
        assert_eq!(p.ties, 0);
    }

    #[test]
    fn genie_convention_and_wilson() {
        let c = SystemConfig::new(4, 12, 3, 30.0).unwrap();
        let mut opts = SerOptions::new(1000, 2);
        opts.convention = Convention::Genie;
        let p = run_ser_point(&c, &opts).unwrap();
        assert_eq!(p.symbols, 3000);
        assert!(p.ser < 0.01);
        let (lo, hi) = wilson_interval(0, 100, WILSON_Z);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.037).abs() < 1e-3);
        let (lo, hi) = wilson_interval(50, 100, WILSON_Z);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
        assert!(run_ser_point(&c.with_block_len(1).unwrap(), &SerOptions::new(10, 1)).is_err());
    }

    #[test]
    fn crossing_interpolation() {
        let mk = |snr: f64, ser: f64| SerPoint {
            snr_db: snr,
            l: 2,
            k: 8,
            m: 4,
            dither_mode: "none".into(),
            trials: 1000,
            symbol_errors: (ser * 1e6) as u64,
            symbols: 1_000_000,
            ser,
            ci_low: 0.0,
            ci_high: 1.0,
            ties: 0,
            tie_rate: 0.0,
            seed: 0,
        };
        let pts = [mk(0.0, 1e-1), mk(1.0, 1e-2), mk(2.0, 1e-4)];
        let s = ser_crossing(&pts, 1e-3).unwrap();
        assert!((s - 1.5).abs() < 1e-12);
        assert_eq!(ser_crossing(&pts, 1.0), None);
    }
}
