//! `stereodc` command-line tool.
//!
//! Exit status is 0 on success, 1 for usage errors (bad flags, missing
//! input files) and 2 for data errors (unreadable images, corrupt streams,
//! codec failures). Errors go to stderr as a single `error:` line.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use stereodc::codec::bitstream::Bitstream;
use stereodc::codec::{
    decode_pair, default_qp_grid, encode_pair_detailed, rd_candidates, select_candidate, CodecConfig, RDPoint,
};
use stereodc::disparity::MatchParams;
use stereodc::image::{psnr, read_image, write_image, PlanarImage};
use stereodc_bench::bd::{bd_metrics, RDCurve};
use stereodc_bench::csv::fmt_g;
use stereodc_bench::metrics::ms_ssim;
use stereodc_bench::sweep::{load_dataset, rd_sweep, AllocationRow, SweepConfig, DEFAULT_LAMBDAS};

#[derive(Parser, Debug)]
#[command(name = "stereodc", version, about = "Disparity-compensated stereo image codec")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode a rectified stereo pair.
    Encode {
        left: PathBuf,
        right: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        codec: CodecArgs,
        /// Choose both steps by rate-distortion search with this multiplier.
        #[arg(long, conflicts_with_all = ["qp_r", "qp_l"])]
        lambda: Option<f64>,
        /// Write the decoded-side disparity map as a DMAP dump.
        #[arg(long)]
        dump_disparity: Option<PathBuf>,
    },
    /// Decode a stream into left and right images.
    Decode { input: PathBuf, left: PathBuf, right: PathBuf },
    /// PSNR between two images.
    Psnr { a: PathBuf, b: PathBuf },
    /// MS-SSIM between two images.
    Msssim { a: PathBuf, b: PathBuf },
    /// Bjontegaard deltas of a test curve against an anchor curve (CSV files
    /// with `bpp` and `psnr` columns).
    Bd { anchor: PathBuf, test: PathBuf },
    /// Rate-distortion sweep over a directory of `<name>_left/_right` pairs.
    Sweep {
        dataset: PathBuf,
        /// Output directory for CSVs and streams.
        #[arg(short, long, default_value = "results")]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_LAMBDAS.to_vec())]
        lambdas: Vec<f64>,
        /// Also run every ablation case.
        #[arg(long)]
        ablation: bool,
        /// Worker threads.
        #[arg(long, env = "STEREODC_JOBS")]
        jobs: Option<usize>,
        #[command(flatten)]
        codec: CodecArgs,
    },
}

#[derive(Args, Debug)]
struct CodecArgs {
    #[arg(long)]
    qp_r: Option<f64>,
    #[arg(long)]
    qp_l: Option<f64>,
    /// Disparity search range in pixels.
    #[arg(long, default_value_t = 64)]
    max_disp: usize,
    /// Code the views independently (Case 1).
    #[arg(long)]
    no_disparity: bool,
    /// Drop the cross-view prior (Case 2).
    #[arg(long)]
    no_prior: bool,
    /// Use the unaligned right view as prior (Case 3).
    #[arg(long)]
    no_align: bool,
    /// Skip prior refinement (Case 4).
    #[arg(long)]
    no_prn: bool,
    #[arg(long)]
    w_prior: Option<f64>,
    /// Step grid for rate-distortion search.
    #[arg(long, value_delimiter = ',')]
    qp_grid: Option<Vec<f64>>,
}

impl CodecArgs {
    /// Each `--no-*` flag also turns off the features that depend on it.
    fn config(&self) -> CodecConfig {
        let d = CodecConfig::default();
        let use_disparity = !self.no_disparity;
        let use_prior = use_disparity && !self.no_prior;
        let align_prior = use_prior && !self.no_align;
        CodecConfig {
            qp_r: self.qp_r.unwrap_or(d.qp_r),
            qp_l: self.qp_l.unwrap_or(d.qp_l),
            match_params: MatchParams::with_max_disparity(self.max_disp),
            use_disparity,
            use_prior,
            align_prior,
            use_prn: align_prior && !self.no_prn,
            w_prior: self.w_prior.unwrap_or(d.w_prior),
            ..d
        }
    }

    fn grid(&self) -> Vec<f64> {
        self.qp_grid.clone().unwrap_or_else(default_qp_grid)
    }
}

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn require(paths: &[&Path]) -> Result<(), Failure> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Failure::Usage(format!("no such file: {}", p.display()))),
        None => Ok(()),
    }
}

fn load(path: &Path) -> anyhow::Result<PlanarImage> {
    read_image(path).with_context(|| format!("reading {}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", if first.starts_with("error:") { first.to_string() } else { format!("error: {first}") });
            return ExitCode::from(1);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Encode { left, right, output, codec, lambda, dump_disparity } => {
            require(&[&left, &right])?;
            encode(&left, &right, &output, &codec, lambda, dump_disparity.as_deref())?;
        }
        Command::Decode { input, left, right } => {
            require(&[&input])?;
            let data = fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let bs = Bitstream::from_bytes(&data).context("parsing stream")?;
            let (l, r) = decode_pair(&bs).context("decoding")?;
            write_image(&l, &left).with_context(|| format!("writing {}", left.display()))?;
            write_image(&r, &right).with_context(|| format!("writing {}", right.display()))?;
        }
        Command::Psnr { a, b } => {
            require(&[&a, &b])?;
            println!("{}", fmt_g(psnr(&load(&a)?, &load(&b)?).map_err(anyhow::Error::from)?));
        }
        Command::Msssim { a, b } => {
            require(&[&a, &b])?;
            println!("{}", fmt_g(ms_ssim(&load(&a)?, &load(&b)?).map_err(anyhow::Error::from)?));
        }
        Command::Bd { anchor, test } => {
            require(&[&anchor, &test])?;
            let (rate, dpsnr) = bd_metrics(&read_curve(&anchor)?, &read_curve(&test)?).map_err(anyhow::Error::from)?;
            println!("bd_rate={} bd_psnr={}", fmt_g(rate), fmt_g(dpsnr));
        }
        Command::Sweep { dataset, out, lambdas, ablation, jobs, codec } => {
            if !dataset.is_dir() {
                return Err(Failure::Usage(format!("not a directory: {}", dataset.display())));
            }
            if jobs == Some(0) {
                return Err(Failure::Usage("--jobs must be at least 1".into()));
            }
            sweep(&dataset, &out, lambdas, ablation, jobs, &codec)?;
        }
    }
    Ok(())
}

fn encode(
    left: &Path,
    right: &Path,
    output: &Path,
    args: &CodecArgs,
    lambda: Option<f64>,
    dump: Option<&Path>,
) -> anyhow::Result<()> {
    let (l, r) = (load(left)?, load(right)?);
    let mut cfg = args.config();
    if let Some(lambda) = lambda {
        let pick = select_candidate(&rd_candidates(&l, &r, &cfg, &args.grid())?, lambda)?;
        cfg.qp_r = pick.qp_r;
        cfg.qp_l = pick.qp_l;
    }
    let enc = encode_pair_detailed(&l, &r, &cfg)?;
    fs::write(output, enc.bitstream.to_bytes()).with_context(|| format!("writing {}", output.display()))?;
    if let Some(path) = dump {
        let map = enc.disparity.as_ref().ok_or_else(|| anyhow!("no disparity map with --no-disparity"))?;
        fs::write(path, map.to_dmap_bytes()?).with_context(|| format!("writing {}", path.display()))?;
    }
    let point = enc.rd_point(&l, &r)?;
    let bs = &enc.bitstream;
    println!(
        "bpp={} psnr={} psnr_l={} psnr_r={} qp_r={} qp_l={} bytes_right={} bytes_disparity={} bytes_left={}",
        fmt_g(point.bpp),
        fmt_g(point.psnr),
        fmt_g(psnr(&l, &enc.left)?),
        fmt_g(psnr(&r, &enc.right)?),
        fmt_g(f64::from(bs.header.qp_r)),
        fmt_g(f64::from(bs.header.qp_l)),
        bs.right.len(),
        bs.disparity.len(),
        bs.left.len(),
    );
    Ok(())
}

/// Reads `bpp`/`psnr` columns (or `bpp_total`/`psnr_avg`) from a CSV.
fn read_curve(path: &Path) -> anyhow::Result<RDCurve> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> =
        lines.next().ok_or_else(|| anyhow!("{}: empty file", path.display()))?.split(',').map(str::trim).collect();
    let col = |names: &[&str]| {
        header
            .iter()
            .position(|h| names.contains(h))
            .ok_or_else(|| anyhow!("{}: no column named {}", path.display(), names[0]))
    };
    let (bi, pi) = (col(&["bpp", "bpp_total"])?, col(&["psnr", "psnr_avg"])?);
    let mut points = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let num = |i: usize| -> anyhow::Result<f64> {
            f.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| anyhow!("{}: bad value on data line {}", path.display(), n + 1))
        };
        points.push(RDPoint { bpp: num(bi)?, psnr: num(pi)? });
    }
    Ok(RDCurve::new(points)?)
}

fn sweep(
    dataset: &Path,
    out: &Path,
    lambdas: Vec<f64>,
    ablation: bool,
    jobs: Option<usize>,
    args: &CodecArgs,
) -> anyhow::Result<()> {
    let ds = load_dataset(dataset)?;
    let config = SweepConfig { lambdas, qp_grid: args.grid(), template: args.config(), ablation, jobs };
    let mut report = rd_sweep(&ds.pairs, &config)?;
    report.skipped = ds.skipped;
    report.write(out)?;
    println!("pairs={} skipped={}", ds.pairs.len(), report.skipped.len());
    for row in &report.rows {
        let fields = row.fields();
        let line: Vec<String> = AllocationRow::HEADER.iter().zip(&fields).map(|(h, v)| format!("{h}={v}")).collect();
        println!("{} {}", row.label, line.join(" "));
    }
    if ablation {
        for (case, bd) in report.ablation_bd() {
            if let Some((rate, dpsnr)) = bd {
                println!("{case} bd_rate={} bd_psnr={}", fmt_g(rate), fmt_g(dpsnr));
            }
        }
    }
    Ok(())
}
