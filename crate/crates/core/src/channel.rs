//! System parameters, PSK mapping, phase quantizer and channel sampler.
//!
//! The received block is `Z_l = Q(exp(j(theta_{X_l} + delta_l + Phi)) + N_l)` where
//! `Phi` is uniform on `[0, 2pi)` and constant over the block, `N_l` is circular
//! Gaussian with variance `sigma^2` per dimension and `Q` maps a sample to the
//! index of the `2pi/K`-wide sector containing its phase.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Per-symbol constellation rotation schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum DitherMode {
    /// Standard PSK: identical constellation for all symbols.
    None,
    /// `delta_l = l * 2pi / (L K)`: rotate by one `L`-th of a sector per symbol.
    Paper,
    /// Arbitrary offsets in radians, one per symbol.
    Explicit(Vec<f64>),
}

impl DitherMode {
    /// The offsets for a block of `l` symbols with `k` sectors.
    pub fn offsets(&self, l: usize, k: usize) -> Result<Vec<f64>> {
        match self {
            DitherMode::None => Ok(vec![0.0; l]),
            DitherMode::Paper => Ok((0..l)
                .map(|i| i as f64 * TAU / (l as f64 * k as f64))
                .collect()),
            DitherMode::Explicit(v) => {
                if v.len() != l {
                    return Err(Error::InvalidConfig(format!(
                        "dither schedule has {} entries but the block length is {l}",
                        v.len()
                    )));
                }
                if v.iter().any(|d| !d.is_finite()) {
                    return Err(Error::InvalidConfig("dither offsets must be finite".into()));
                }
                Ok(v.clone())
            }
        }
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> String {
        match self {
            DitherMode::None => "none".into(),
            DitherMode::Paper => "paper".into(),
            DitherMode::Explicit(v) => {
                let parts: Vec<String> = v.iter().map(|d| d.to_string()).collect();
                format!("explicit[{}]", parts.join(" "))
            }
        }
    }
}

impl FromStr for DitherMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" | "" => Ok(DitherMode::None),
            "paper" => Ok(DitherMode::Paper),
            list => list
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("dither offset {t:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()
                .map(DitherMode::Explicit),
        }
    }
}

impl fmt::Display for DitherMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DitherMode::Explicit(v) => {
                let parts: Vec<String> = v.iter().map(|d| d.to_string()).collect();
                write!(f, "{}", parts.join(","))
            }
            other => write!(f, "{}", other.label()),
        }
    }
}

/// All model parameters.
///
/// Symbols have unit energy and the SNR is `Es/N0`, so the per-dimension noise
/// standard deviation is `sqrt(1 / (2 * 10^(snr_db / 10)))`. An SNR of `+inf`
/// gives the noise-free channel (useful for sampling only).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    m: usize,
    k: usize,
    l: usize,
    snr_db: f64,
    theta0: f64,
    dither_mode: DitherMode,
    dither: Vec<f64>,
}

impl SystemConfig {
    pub fn new(m: usize, k: usize, l: usize, snr_db: f64) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidConfig(format!("M must be at least 2, got {m}")));
        }
        if k < m || !k.is_multiple_of(m) {
            return Err(Error::InvalidConfig(format!(
                "K must be a positive multiple of M (K = aM), got M={m}, K={k}"
            )));
        }
        if l < 1 {
            return Err(Error::InvalidConfig("block length L must be at least 1".into()));
        }
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidConfig(format!("invalid SNR {snr_db} dB")));
        }
        Ok(SystemConfig {
            m,
            k,
            l,
            snr_db,
            theta0: 0.0,
            dither_mode: DitherMode::None,
            dither: vec![0.0; l],
        })
    }

    pub fn with_theta0(mut self, theta0: f64) -> Self {
        self.theta0 = theta0;
        self
    }

    pub fn with_dither(mut self, mode: DitherMode) -> Result<Self> {
        self.dither = mode.offsets(self.l, self.k)?;
        self.dither_mode = mode;
        Ok(self)
    }

    pub fn with_snr_db(mut self, snr_db: f64) -> Result<Self> {
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidConfig(format!("invalid SNR {snr_db} dB")));
        }
        self.snr_db = snr_db;
        Ok(self)
    }

    /// Same parameters with a different block length; the dither schedule is
    /// re-derived (explicit schedules must still match the new length).
    pub fn with_block_len(mut self, l: usize) -> Result<Self> {
        if l < 1 {
            return Err(Error::InvalidConfig("block length L must be at least 1".into()));
        }
        self.l = l;
        self.dither = self.dither_mode.offsets(l, self.k)?;
        Ok(self)
    }

    /// Same parameters with a different sector count (must stay a multiple of M).
    pub fn with_sectors(self, k: usize) -> Result<Self> {
        let fresh = SystemConfig::new(self.m, k, self.l, self.snr_db)?
            .with_theta0(self.theta0)
            .with_dither(self.dither_mode.clone())?;
        Ok(fresh)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Sectors per constellation step, `K / M`.
    pub fn a(&self) -> usize {
        self.k / self.m
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn snr_linear(&self) -> f64 {
        10f64.powf(self.snr_db / 10.0)
    }

    pub fn sigma(&self) -> f64 {
        (1.0 / (2.0 * self.snr_linear())).sqrt()
    }

    pub fn theta0(&self) -> f64 {
        self.theta0
    }

    pub fn dither_mode(&self) -> &DitherMode {
        &self.dither_mode
    }

    pub fn dither(&self) -> &[f64] {
        &self.dither
    }

    pub fn is_dithered(&self) -> bool {
        self.dither.iter().any(|&d| d != 0.0)
    }

    /// Phase of constellation point `x` (before dither and channel rotation).
    pub fn constellation_phase(&self, x: usize) -> f64 {
        self.theta0 + x as f64 * TAU / self.m as f64
    }

    pub fn validate_input(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.l {
            return Err(Error::InvalidInput(format!(
                "input vector has {} symbols, expected L={}",
                x.len(),
                self.l
            )));
        }
        if let Some(&bad) = x.iter().find(|&&s| s >= self.m) {
            return Err(Error::InvalidInput(format!("input symbol {bad} outside 0..{}", self.m)));
        }
        Ok(())
    }

    pub fn validate_output(&self, z: &[usize]) -> Result<()> {
        if z.len() != self.l {
            return Err(Error::InvalidInput(format!(
                "output vector has {} symbols, expected L={}",
                z.len(),
                self.l
            )));
        }
        if let Some(&bad) = z.iter().find(|&&s| s >= self.k) {
            return Err(Error::InvalidInput(format!("sector index {bad} outside 0..{}", self.k)));
        }
        Ok(())
    }

    /// Parse the plain-text `key=value` format (keys `M`, `K`, `L`, `snr_db`,
    /// `theta0`, `dither`). Blank lines and `#` comments are ignored.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut m = None;
        let mut k = None;
        let mut l = None;
        let mut snr_db = 0.0;
        let mut theta0 = 0.0;
        let mut dither = DitherMode::None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Parse(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            let value = value.trim();
            let int = |v: &str| {
                v.parse::<usize>()
                    .map_err(|e| Error::Parse(format!("line {}: {key}: {e}", lineno + 1)))
            };
            let float = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {key}: {e}", lineno + 1)))
            };
            match key.trim() {
                "M" => m = Some(int(value)?),
                "K" => k = Some(int(value)?),
                "L" => l = Some(int(value)?),
                "snr_db" => snr_db = float(value)?,
                "theta0" => theta0 = float(value)?,
                "dither" => dither = value.parse()?,
                other => {
                    return Err(Error::Parse(format!("line {}: unknown key {other:?}", lineno + 1)))
                }
            }
        }
        let missing = |name: &str| Error::Parse(format!("missing required key {name}"));
        SystemConfig::new(
            m.ok_or_else(|| missing("M"))?,
            k.ok_or_else(|| missing("K"))?,
            l.ok_or_else(|| missing("L"))?,
            snr_db,
        )?
        .with_theta0(theta0)
        .with_dither(dither)
    }

    pub fn to_kv_string(&self) -> String {
        format!(
            "M={}\nK={}\nL={}\nsnr_db={}\ntheta0={}\ndither={}\n",
            self.m, self.k, self.l, self.snr_db, self.theta0, self.dither_mode
        )
    }
}

/// One realisation of the block channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    pub phi: f64,
    pub x: Vec<usize>,
    pub z: Vec<usize>,
}

/// Sector index of a nonzero complex sample: `floor(arg(c) K / 2pi)` with
/// `arg` taken in `[0, 2pi)`. A boundary angle belongs to the sector above it.
pub fn quantize(c: Complex64, k: usize) -> Result<usize> {
    if c.re == 0.0 && c.im == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    let arg = c.im.atan2(c.re).rem_euclid(TAU);
    let sector = (arg / (TAU / k as f64)).floor() as usize;
    // rem_euclid can round up to exactly 2pi for tiny negative angles
    Ok(sector.min(k - 1))
}

/// Unit-magnitude transmit symbols, including the per-symbol dither.
pub fn modulate(x: &[usize], config: &SystemConfig) -> Result<Vec<Complex64>> {
    config.validate_input(x)?;
    Ok(x.iter()
        .zip(config.dither())
        .map(|(&s, &d)| Complex64::from_polar(1.0, config.constellation_phase(s) + d))
        .collect())
}

/// Draw `Phi`, the noise and the quantized observations for input `x`.
pub fn sample_block<R: Rng + ?Sized>(
    x: &[usize],
    config: &SystemConfig,
    rng: &mut R,
) -> Result<ChannelDraw> {
    let phi = rng.random::<f64>() * TAU;
    sample_block_with_phase(x, config, phi, rng)
}

/// As [`sample_block`] but with the channel phase supplied by the caller.
pub fn sample_block_with_phase<R: Rng + ?Sized>(
    x: &[usize],
    config: &SystemConfig,
    phi: f64,
    rng: &mut R,
) -> Result<ChannelDraw> {
    let symbols = modulate(x, config)?;
    let rotation = Complex64::from_polar(1.0, phi);
    let sigma = config.sigma();
    let mut z = Vec::with_capacity(symbols.len());
    for s in symbols {
        let clean = s * rotation;
        let sector = loop {
            let noise = if sigma > 0.0 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(sigma * re, sigma * im)
            } else {
                Complex64::new(0.0, 0.0)
            };
            match quantize(clean + noise, config.k()) {
                Ok(sector) => break sector,
                // zero-probability event: redraw the noise
                Err(Error::UndefinedPhase) if sigma > 0.0 => continue,
                Err(e) => return Err(e),
            }
        };
        z.push(sector);
    }
    Ok(ChannelDraw {
        phi: phi.rem_euclid(TAU),
        x: x.to_vec(),
        z,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};

    fn polar(arg: f64) -> Complex64 {
        Complex64::from_polar(1.0, arg)
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(quantize(polar(0.1), 8).unwrap(), 0);
        assert_eq!(quantize(polar(FRAC_PI_4), 8).unwrap(), 1);
        assert_eq!(quantize(polar(TAU - 1e-9), 12).unwrap(), 11);
        assert_eq!(quantize(polar(-1e-300), 12).unwrap(), 11);
        assert!(matches!(
            quantize(Complex64::new(0.0, 0.0), 8),
            Err(Error::UndefinedPhase)
        ));
    }

    #[test]
    fn quantize_rotation_by_one_sector() {
        let k = 12;
        let step = Complex64::from_polar(1.0, TAU / k as f64);
        for i in 0..500 {
            // stay away from boundaries so rounding cannot flip the sector
            let arg = (i as f64 + 0.37) * TAU / 500.0;
            let c = polar(arg) * 2.5;
            let q = quantize(c, k).unwrap();
            assert_eq!(quantize(c * step, k).unwrap(), (q + 1) % k);
        }
    }

    #[test]
    fn modulate_examples() {
        let cfg = SystemConfig::new(4, 8, 2, 10.0).unwrap();
        let s = modulate(&[0, 1], &cfg).unwrap();
        assert!((s[0].arg() - 0.0).abs() < 1e-15);
        assert!((s[1].arg() - FRAC_PI_2).abs() < 1e-15);

        let dithered = cfg.clone().with_dither(DitherMode::Paper).unwrap();
        assert!((dithered.dither()[1] - FRAC_PI_8).abs() < 1e-15);
        let s = modulate(&[0, 0], &dithered).unwrap();
        assert!((s[1].arg() - FRAC_PI_8).abs() < 1e-15);

        let rotated = SystemConfig::new(4, 8, 1, 10.0).unwrap().with_theta0(FRAC_PI_4);
        let s = modulate(&[3], &rotated).unwrap();
        assert!((s[0].arg().rem_euclid(TAU) - 7.0 * PI / 4.0).abs() < 1e-12);
        assert!(s.iter().all(|c| (c.norm() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn noise_free_sampling_hits_sector_centres() {
        let cfg = SystemConfig::new(4, 8, 1, f64::INFINITY).unwrap();
        assert_eq!(cfg.sigma(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = sample_block_with_phase(&[0], &cfg, FRAC_PI_8, &mut rng).unwrap();
        assert_eq!(d.z, vec![0]);
        let d = sample_block_with_phase(&[0], &cfg, 3.0 * FRAC_PI_8, &mut rng).unwrap();
        assert_eq!(d.z, vec![1]);
    }

    #[test]
    fn noise_free_lands_in_symbol_sector() {
        let cfg = SystemConfig::new(8, 24, 8, f64::INFINITY)
            .unwrap()
            .with_theta0(0.05)
            .with_dither(DitherMode::Paper)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = vec![0, 1, 2, 3, 4, 5, 6, 7];
        let d = sample_block_with_phase(&x, &cfg, 0.0, &mut rng).unwrap();
        for (l, &s) in x.iter().enumerate() {
            let phase = cfg.constellation_phase(s) + cfg.dither()[l];
            assert_eq!(d.z[l], quantize(polar(phase), 24).unwrap());
        }
    }

    #[test]
    fn equal_seeds_give_equal_draws() {
        let cfg = SystemConfig::new(4, 12, 6, 3.0).unwrap();
        let x = [0, 1, 2, 3, 0, 1];
        let a = sample_block(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = sample_block(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
        assert!(a.z.iter().all(|&z| z < 12));
        assert!((0.0..TAU).contains(&a.phi));
    }

    #[test]
    fn vanishing_snr_gives_uniform_sectors() {
        let cfg = SystemConfig::new(4, 8, 1, -40.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 1_000_000;
        let mut hist = [0usize; 8];
        for _ in 0..draws {
            let d = sample_block(&[0], &cfg, &mut rng).unwrap();
            hist[d.z[0]] += 1;
        }
        for &count in &hist {
            let frac = count as f64 / draws as f64;
            assert!((frac - 0.125).abs() < 0.01 * 0.125, "{hist:?}");
        }
    }

    #[test]
    fn config_rules() {
        assert!(SystemConfig::new(4, 10, 2, 0.0).is_err());
        assert!(SystemConfig::new(1, 4, 2, 0.0).is_err());
        assert!(SystemConfig::new(4, 8, 0, 0.0).is_err());
        let cfg = SystemConfig::new(4, 8, 3, 0.0).unwrap();
        assert!((cfg.sigma() - (0.5f64).sqrt()).abs() < 1e-15);
        assert!(cfg
            .clone()
            .with_dither(DitherMode::Explicit(vec![0.1, 0.2]))
            .is_err());
        assert!(!cfg.is_dithered());
    }

    #[test]
    fn kv_round_trip() {
        let text = "# example\nM=4\nK=12\nL=3\nsnr_db=6.5\ntheta0=0.25\ndither=0,0.1,0.2\n";
        let cfg = SystemConfig::from_kv_str(text).unwrap();
        assert_eq!((cfg.m(), cfg.k(), cfg.l(), cfg.a()), (4, 12, 3, 3));
        assert_eq!(cfg.dither(), &[0.0, 0.1, 0.2]);
        let again = SystemConfig::from_kv_str(&cfg.to_kv_string()).unwrap();
        assert_eq!(cfg, again);
        let paper = SystemConfig::from_kv_str("M=4\nK=8\nL=2\ndither=paper").unwrap();
        assert!(paper.is_dithered());
        assert!(SystemConfig::from_kv_str("M=4\nK=8").is_err());
        assert!(SystemConfig::from_kv_str("M=4\nK=8\nL=2\nfoo=1").is_err());
        assert!(SystemConfig::from_kv_str("M=4\nK=9\nL=2").is_err());
    }
}
