//! The `phaseq` command line.
//!
//! Every subcommand writes CSV to `--out` (or stdout) and a plain-text
//! `key=value` manifest next to it (`<out>.manifest`, or stderr when writing
//! to stdout).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::capacity::{self, CapacityResult, Method, DEFAULT_MC_TRIALS};
use crate::channel::{DitherMode, SystemConfig};
use crate::combinatorics::{enumerate_sx, enumerate_sz2, write_input_classes_csv, write_output_classes_csv};
use crate::demod::GlrtOptions;
use crate::error::{Error, Result};
use crate::sim::{run_ser, Convention, SerOptions, SerPoint};
use crate::transition::{default_n_phi, TransitionKernel, DEFAULT_QUADRATURE_TOL};
use crate::verify;

#[derive(Debug, Parser)]
#[command(name = "phaseq", version, about = "M-PSK over the phase-quantized block-noncoherent AWGN channel")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "PHASEQ_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mutual information and per-symbol capacity over an SNR grid.
    Capacity(CapacityArgs),
    /// Monte Carlo symbol error rate of GLRT block demodulation.
    Ser(SerArgs),
    /// Run the invariant suite and report pass/fail per check.
    Verify(VerifyArgs),
    /// Dump transition kernels or canonical class sets.
    Tables(TablesArgs),
}

/// Model parameters shared by all subcommands. Flags override `--config`.
#[derive(Debug, Clone, Args)]
pub struct SystemArgs {
    /// key=value file with M, K, L, snr_db, theta0, dither.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Constellation size.
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// Number of phase sectors (a multiple of M).
    #[arg(long = "K")]
    pub k: Option<usize>,
    /// Constellation offset in radians.
    #[arg(long)]
    pub theta0: Option<f64>,
    /// none, paper, or a comma-separated list of offsets in radians.
    #[arg(long)]
    pub dither: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output CSV path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Block length.
    #[arg(long = "L")]
    pub l: Option<usize>,
    /// SNR in dB: a value, a comma list, or start:stop:step (inclusive).
    #[arg(long)]
    pub snr: Option<String>,
    #[arg(long, default_value = "reduced")]
    pub method: String,
    /// Monte Carlo trials (method mc).
    #[arg(long, default_value_t = DEFAULT_MC_TRIALS)]
    pub trials: usize,
    /// Phase grid size (multiple of K); defaults to 2048 rounded up to a multiple of K.
    #[arg(long)]
    pub n_phi: Option<usize>,
    /// Also report the undithered reduced capacity at this many sectors.
    #[arg(long)]
    pub proxy_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SerArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Block length(s), comma separated.
    #[arg(long = "L")]
    pub l: Option<String>,
    #[arg(long)]
    pub snr: Option<String>,
    /// Blocks per SNR point.
    #[arg(long, default_value_t = 10_000)]
    pub trials: usize,
    #[arg(long, value_enum, default_value_t = ConventionArg::Pilot)]
    pub convention: ConventionArg,
    /// Refine each candidate phase by golden-section search.
    #[arg(long)]
    pub refine: bool,
    /// Phase scan grid size (multiple of K); defaults to 720 rounded up to a multiple of K.
    #[arg(long)]
    pub n_scan: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ConventionArg {
    Pilot,
    Genie,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long = "L")]
    pub l: Option<usize>,
    /// Single SNR in dB.
    #[arg(long)]
    pub snr: Option<f64>,
    /// Randomised instances per symmetry check.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TableKind {
    /// P(z | x = 0, phi_i) on the phase grid.
    Kernel,
    /// Canonical output classes over 0..K.
    OutputClasses,
    /// Canonical output classes over the reduced alphabet 0..a.
    ReducedClasses,
    /// Input classes for the output vector given by --z.
    InputClasses,
}

#[derive(Debug, Args)]
pub struct TablesArgs {
    #[arg(value_enum)]
    pub kind: TableKind,
    #[command(flatten)]
    pub system: SystemArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long = "L")]
    pub l: Option<usize>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub n_phi: Option<usize>,
    /// Output vector (comma separated) for input-classes.
    #[arg(long)]
    pub z: Option<String>,
}

/// Parse `v`, `v1,v2,...` or `start:stop:step` (inclusive).
pub fn parse_snr_spec(spec: &str) -> Result<Vec<f64>> {
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("SNR value {t:?}: {e}")))
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.len() {
        1 => spec.split(',').map(num).collect(),
        3 => {
            let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || stop < start {
                return Err(Error::Parse(format!(
                    "SNR range {spec:?} needs start <= stop and a positive step"
                )));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count)
                .map(|i| {
                    let v = start + i as f64 * step;
                    (v * 1e9).round() / 1e9
                })
                .collect())
        }
        _ => Err(Error::Parse(format!("cannot parse SNR specification {spec:?}"))),
    }
}

fn parse_usize_list(spec: &str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::Parse(format!("integer {t:?}: {e}")))
        })
        .collect()
}

/// Resolve the model from `--config` and the explicit flags.
fn resolve_config(sys: &SystemArgs, l: Option<usize>, snr: Option<f64>) -> Result<SystemConfig> {
    let base = match &sys.config {
        Some(path) => Some(SystemConfig::from_kv_str(&std::fs::read_to_string(path)?)?),
        None => None,
    };
    let m = sys.m.or(base.as_ref().map(|b| b.m())).unwrap_or(4);
    let k = sys.k.or(base.as_ref().map(|b| b.k())).unwrap_or(8);
    let l = l.or(base.as_ref().map(|b| b.l())).unwrap_or(2);
    let snr = snr.or(base.as_ref().map(|b| b.snr_db())).unwrap_or(0.0);
    let theta0 = sys.theta0.or(base.as_ref().map(|b| b.theta0())).unwrap_or(0.0);
    let dither = match &sys.dither {
        Some(d) => d.parse()?,
        None => base.as_ref().map(|b| b.dither_mode().clone()).unwrap_or(DitherMode::None),
    };
    SystemConfig::new(m, k, l, snr)?.with_theta0(theta0).with_dither(dither)
}

fn config_line(c: &SystemConfig) -> String {
    c.to_kv_string().trim_end().replace('\n', " ")
}

struct Sink {
    path: Option<PathBuf>,
    writer: Box<dyn Write>,
}

impl Sink {
    fn open(path: &Option<PathBuf>) -> Result<Self> {
        let writer: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout())),
        };
        Ok(Sink {
            path: path.clone(),
            writer,
        })
    }

    /// Flush the CSV and write the manifest.
    fn finish(mut self, command: &str, config: &str, seed: u64, started: Instant) -> Result<()> {
        self.writer.flush()?;
        let outputs = self
            .path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "-".into());
        let manifest = format!(
            "command={command}\nconfig={config}\nseed={seed}\nversion={}\noutputs={outputs}\nduration_s={:.3}\n",
            env!("CARGO_PKG_VERSION"),
            started.elapsed().as_secs_f64()
        );
        match &self.path {
            Some(p) => {
                let mut name = p.clone().into_os_string();
                name.push(".manifest");
                std::fs::write(PathBuf::from(name), manifest)?;
            }
            None => eprint!("{manifest}"),
        }
        Ok(())
    }
}

fn capacity_row(w: &mut dyn Write, r: &CapacityResult) -> Result<()> {
    let per = r
        .per_symbol
        .map(|v| v.to_string())
        .unwrap_or_else(|| "NA".into());
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{}",
        r.snr_db, r.m, r.k, r.l, r.method, r.h_cond, r.h_out, r.mi, per, r.error_bar
    )?;
    Ok(())
}

fn ser_row(w: &mut dyn Write, p: &SerPoint) -> Result<()> {
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        p.snr_db, p.m, p.k, p.l, p.dither_mode, p.trials, p.symbol_errors, p.ser, p.ci_low, p.ci_high, p.tie_rate, p.seed
    )?;
    Ok(())
}

fn cmd_capacity(args: &CapacityArgs, command: &str) -> Result<i32> {
    let started = Instant::now();
    let method: Method = args.method.parse()?;
    let base = resolve_config(&args.system, args.l, None)?;
    let snrs = match &args.snr {
        Some(s) => parse_snr_spec(s)?,
        None => vec![base.snr_db()],
    };
    if method == Method::Reduced && base.is_dithered() {
        return Err(Error::DitheredUnsupported(
            "method reduced (use --method mc or brute for dithered constellations)",
        ));
    }
    let proxy = match args.proxy_k {
        Some(k) => Some(
            SystemConfig::new(base.m(), k, base.l(), base.snr_db())?
                .with_theta0(base.theta0()),
        ),
        None => None,
    };
    let mut sink = Sink::open(&args.output.out)?;
    writeln!(
        sink.writer,
        "snr_db,M,K,L,method,h_cond_bits,h_out_bits,mi_bits,per_symbol_bits,stderr"
    )?;
    for &snr in &snrs {
        let cfg = base.clone().with_snr_db(snr)?;
        let n_phi = args.n_phi.unwrap_or_else(|| default_n_phi(cfg.k()));
        let r = capacity::compute(&cfg, method, n_phi, args.trials, args.output.seed)?;
        capacity_row(&mut *sink.writer, &r)?;
        if let Some(p) = &proxy {
            let pc = p.clone().with_snr_db(snr)?;
            let r = capacity::compute(&pc, Method::Reduced, default_n_phi(pc.k()), 0, 0)?;
            capacity_row(&mut *sink.writer, &r)?;
        }
    }
    let grid = snrs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let config = format!("{} method={method} snr_grid={grid}", config_line(&base));
    sink.finish(command, &config, args.output.seed, started)?;
    Ok(0)
}

fn cmd_ser(args: &SerArgs, command: &str) -> Result<i32> {
    let started = Instant::now();
    let ls = match &args.l {
        Some(s) => parse_usize_list(s)?,
        None => vec![resolve_config(&args.system, None, None)?.l()],
    };
    let base = resolve_config(&args.system, Some(ls[0]), None)?;
    let snrs = match &args.snr {
        Some(s) => parse_snr_spec(s)?,
        None => vec![base.snr_db()],
    };
    let mut opts = SerOptions::new(args.trials, args.output.seed);
    opts.convention = match args.convention {
        ConventionArg::Pilot => Convention::Pilot,
        ConventionArg::Genie => Convention::Genie,
    };
    opts.n_scan = args.n_scan;
    if args.refine {
        opts.glrt = GlrtOptions::default();
    }
    let mut sink = Sink::open(&args.output.out)?;
    writeln!(
        sink.writer,
        "snr_db,M,K,L,dither_mode,trials,errors,ser,ci_low,ci_high,tie_rate,seed"
    )?;
    for &l in &ls {
        let cfg = resolve_config(&args.system, Some(l), None)?;
        for p in run_ser(&cfg, &snrs, &opts)? {
            ser_row(&mut *sink.writer, &p)?;
        }
    }
    let grid = snrs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let block_lens = ls.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
    let config = format!(
        "{} L_list={block_lens} snr_grid={grid} trials={} convention={} refine={}",
        config_line(&base),
        args.trials,
        opts.convention,
        args.refine
    );
    sink.finish(command, &config, args.output.seed, started)?;
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs, command: &str) -> Result<i32> {
    let started = Instant::now();
    let mut cfg = resolve_config(&args.system, args.l, args.snr)?;
    if args.l.is_none() && args.system.config.is_none() {
        cfg = cfg.with_block_len(3)?;
    }
    if args.snr.is_none() && args.system.config.is_none() {
        cfg = cfg.with_snr_db(6.0)?;
    }
    let outcomes = verify::full_suite(&cfg, args.instances, args.output.seed)?;
    let mut sink = Sink::open(&args.output.out)?;
    for o in &outcomes {
        writeln!(sink.writer, "{o}")?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    writeln!(
        sink.writer,
        "{} checks, {} failed",
        outcomes.len(),
        failed
    )?;
    sink.finish(command, &config_line(&cfg), args.output.seed, started)?;
    Ok(if failed == 0 { 0 } else { 1 })
}

fn cmd_tables(args: &TablesArgs, command: &str) -> Result<i32> {
    let started = Instant::now();
    let cfg = resolve_config(&args.system, args.l, args.snr)?;
    let mut sink = Sink::open(&args.output.out)?;
    match args.kind {
        TableKind::Kernel => {
            let n = args.n_phi.unwrap_or_else(|| default_n_phi(cfg.k()));
            TransitionKernel::build(&cfg, n, DEFAULT_QUADRATURE_TOL)?.write_csv(&mut *sink.writer)?;
        }
        TableKind::OutputClasses => write_output_classes_csv(enumerate_sz2(cfg.k(), cfg.l())?, &mut *sink.writer)?,
        TableKind::ReducedClasses => write_output_classes_csv(enumerate_sz2(cfg.a(), cfg.l())?, &mut *sink.writer)?,
        TableKind::InputClasses => {
            let z = match &args.z {
                Some(s) => parse_usize_list(s)?,
                None => return Err(Error::InvalidInput("input-classes needs --z".into())),
            };
            write_input_classes_csv(enumerate_sx(&z, cfg.m())?, &mut *sink.writer)?;
        }
    }
    sink.finish(command, &config_line(&cfg), args.output.seed, started)?;
    Ok(0)
}

/// Run a parsed command line; returns the process exit status.
pub fn run(cli: Cli, command_line: &str) -> Result<i32> {
    if let Some(n) = cli.workers {
        // a second initialisation (e.g. in tests) keeps the existing pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match &cli.command {
        Command::Capacity(a) => cmd_capacity(a, command_line),
        Command::Ser(a) => cmd_ser(a, command_line),
        Command::Verify(a) => cmd_verify(a, command_line),
        Command::Tables(a) => cmd_tables(a, command_line),
    }
}

/// Entry point used by the binary.
pub fn main_entry() -> i32 {
    let argv: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    match run(cli, &argv.join(" ")) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_specs() {
        assert_eq!(parse_snr_spec("0:12:1").unwrap().len(), 13);
        assert_eq!(parse_snr_spec("0:20:2").unwrap().len(), 11);
        assert_eq!(parse_snr_spec("0:1:0.1").unwrap()[3], 0.3);
        assert_eq!(parse_snr_spec("10").unwrap(), vec![10.0]);
        assert_eq!(parse_snr_spec("4, 6,8").unwrap(), vec![4.0, 6.0, 8.0]);
        assert!(parse_snr_spec("5:1:1").is_err());
        assert!(parse_snr_spec("1:2").is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sys.cfg");
        std::fs::write(&path, "M=4\nK=12\nL=5\nsnr_db=3\ndither=paper\n").unwrap();
        let sys = SystemArgs {
            config: Some(path),
            m: None,
            k: Some(8),
            theta0: None,
            dither: None,
        };
        let c = resolve_config(&sys, None, None).unwrap();
        assert_eq!((c.k(), c.l(), c.snr_db()), (8, 5, 3.0));
        assert!(c.is_dithered());
    }
}
