//! Rate-distortion sweeps over a stereo dataset.
//!
//! For every pair and every configuration the candidate table of
//! [`rd_candidates`] is computed once; each multiplier then picks its
//! operating point from that table, and the pair is encoded and decoded at
//! that point. Work is spread over a thread pool per (pair, configuration);
//! results are reduced in dataset order, so the output does not depend on
//! the number of workers.

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use stereodc::codec::bitstream::HEADER_LEN;
use stereodc::codec::{
    decode_pair, default_qp_grid, encode_pair_detailed, rd_candidates, select_candidate, AblationCase, CodecConfig,
    RDPoint,
};
use stereodc::image::{psnr, read_image, PlanarImage};

use crate::bd::{bd_metrics, RDCurve};
use crate::csv::{self, fmt_g};
use crate::metrics::ms_ssim;
use crate::{BenchError, Result};

/// Default Lagrange multipliers for RD curves.
pub const DEFAULT_LAMBDAS: [f64; 5] = [0.001, 0.002, 0.005, 0.01, 0.02];

#[derive(Clone, Debug)]
pub struct StereoPair {
    pub name: String,
    pub left: PlanarImage,
    pub right: PlanarImage,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub pairs: Vec<StereoPair>,
    /// One message per pair that could not be loaded.
    pub skipped: Vec<String>,
}

/// Loads `<name>_left.{ppm,pgm}` / `<name>_right.{ppm,pgm}` pairs from a
/// directory, sorted by name. Unreadable or inconsistent pairs are skipped
/// with a warning.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(file) = path.file_name().and_then(|f| f.to_str()) else { continue };
        for ext in ["ppm", "pgm"] {
            if let Some(stem) = file.strip_suffix(&format!("_left.{ext}")) {
                names.push((stem.to_string(), path.clone()));
            }
        }
    }
    names.sort();
    let mut ds = Dataset::default();
    for (name, left_path) in names {
        let right_path = ["ppm", "pgm"].iter().map(|ext| dir.join(format!("{name}_right.{ext}"))).find(|p| p.exists());
        let loaded = match right_path {
            None => Err(format!("{name}: no matching right view")),
            Some(rp) => match (read_image(&left_path), read_image(&rp)) {
                (Ok(l), Ok(r)) if l.same_geometry(&r) => Ok(StereoPair { name: name.clone(), left: l, right: r }),
                (Ok(_), Ok(_)) => Err(format!("{name}: views differ in size or channels")),
                (Err(e), _) | (_, Err(e)) => Err(format!("{name}: {e}")),
            },
        };
        match loaded {
            Ok(p) => ds.pairs.push(p),
            Err(msg) => {
                warn!("skipping {msg}");
                ds.skipped.push(msg);
            }
        }
    }
    Ok(ds)
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub lambdas: Vec<f64>,
    pub qp_grid: Vec<f64>,
    /// Flags, weights and matching parameters of the main configuration.
    pub template: CodecConfig,
    /// Also run every ablation case.
    pub ablation: bool,
    /// Worker threads; `None` uses the pool default.
    pub jobs: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            qp_grid: default_qp_grid(),
            template: CodecConfig::default(),
            ablation: false,
            jobs: None,
        }
    }
}

/// One coded pair at one multiplier.
#[derive(Clone, Debug, PartialEq)]
pub struct PairOutcome {
    pub pair: String,
    pub label: String,
    pub lambda: f64,
    pub qp_r: f64,
    pub qp_l: f64,
    pub pixels: usize,
    pub bytes_right: usize,
    pub bytes_disparity: usize,
    pub bytes_left: usize,
    pub point: RDPoint,
    pub psnr_l: f64,
    pub psnr_r: f64,
    pub psnr_pred: f64,
    pub msssim: f64,
    pub bitstream: Vec<u8>,
}

impl PairOutcome {
    fn bpp(&self, bytes: usize) -> f64 {
        bytes as f64 * 8.0 / self.pixels as f64
    }
}

/// Averages over the dataset at one multiplier, in the rate-allocation
/// layout. Stream rates are per view (bits over one image's pixels); the
/// total is the two-view average including the header.
#[derive(Clone, Debug, PartialEq)]
pub struct AllocationRow {
    pub label: String,
    pub lambda: f64,
    pub bpp_total: f64,
    pub psnr_avg: f64,
    pub bpp_r: f64,
    pub psnr_r: f64,
    pub bpp_l: f64,
    pub psnr_l: f64,
    pub bpp_d: f64,
    pub psnr_pred: f64,
    pub msssim: f64,
}

impl AllocationRow {
    pub const HEADER: [&'static str; 9] =
        ["lambda", "bpp_total", "psnr_avg", "bpp_r", "psnr_r", "bpp_l", "psnr_l", "bpp_d", "psnr_pred"];

    pub fn fields(&self) -> Vec<String> {
        [
            self.lambda,
            self.bpp_total,
            self.psnr_avg,
            self.bpp_r,
            self.psnr_r,
            self.bpp_l,
            self.psnr_l,
            self.bpp_d,
            self.psnr_pred,
        ]
        .iter()
        .map(|&v| fmt_g(v))
        .collect()
    }

    pub fn rd_point(&self) -> RDPoint {
        RDPoint { bpp: self.bpp_total, psnr: self.psnr_avg }
    }
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    /// Label of the main configuration.
    pub main: String,
    /// Every coded pair, grouped by configuration, then pair, then lambda.
    pub outcomes: Vec<PairOutcome>,
    /// Averages per configuration, in run order.
    pub rows: Vec<AllocationRow>,
    pub skipped: Vec<String>,
}

/// Name used for a configuration in reports.
pub fn config_label(cfg: &CodecConfig) -> String {
    cfg.case().map_or_else(|| "custom".to_string(), |c| c.name().to_string())
}

fn code_pair(pair: &StereoPair, cfg: &CodecConfig, sweep: &SweepConfig) -> Result<Vec<PairOutcome>> {
    let label = config_label(cfg);
    let table = rd_candidates(&pair.left, &pair.right, cfg, &sweep.qp_grid)?;
    let mut out = Vec::with_capacity(sweep.lambdas.len());
    for &lambda in &sweep.lambdas {
        let pick = select_candidate(&table, lambda)?;
        let c = CodecConfig { qp_r: pick.qp_r, qp_l: pick.qp_l, ..cfg.clone() };
        let enc = encode_pair_detailed(&pair.left, &pair.right, &c)?;
        let (dl, dr) = decode_pair(&enc.bitstream)?;
        if dl != enc.left || dr != enc.right {
            return Err(BenchError::DecoderMismatch(format!("{} ({label}, lambda {lambda})", pair.name)));
        }
        let psnr_pred = match &enc.prediction {
            Some(p) => psnr(&pair.left, p)?,
            None => {
                psnr(&pair.left, &PlanarImage::filled(pair.left.width(), pair.left.height(), pair.left.channels(), 0)?)?
            }
        };
        let msssim = (ms_ssim(&pair.left, &dl)? + ms_ssim(&pair.right, &dr)?) / 2.0;
        out.push(PairOutcome {
            pair: pair.name.clone(),
            label: label.clone(),
            lambda,
            qp_r: c.qp_r,
            qp_l: c.qp_l,
            pixels: pair.left.width() * pair.left.height(),
            bytes_right: enc.bitstream.right.len(),
            bytes_disparity: enc.bitstream.disparity.len(),
            bytes_left: enc.bitstream.left.len(),
            point: enc.rd_point(&pair.left, &pair.right)?,
            psnr_l: psnr(&pair.left, &dl)?,
            psnr_r: psnr(&pair.right, &dr)?,
            psnr_pred,
            msssim,
            bitstream: enc.bitstream.to_bytes(),
        });
    }
    Ok(out)
}

fn average_rows(label: &str, lambdas: &[f64], outcomes: &[PairOutcome]) -> Vec<AllocationRow> {
    lambdas
        .iter()
        .map(|&lambda| {
            let sel: Vec<&PairOutcome> = outcomes.iter().filter(|o| o.label == label && o.lambda == lambda).collect();
            let n = sel.len() as f64;
            let mean = |f: &dyn Fn(&PairOutcome) -> f64| sel.iter().map(|o| f(o)).sum::<f64>() / n;
            AllocationRow {
                label: label.to_string(),
                lambda,
                bpp_total: mean(&|o| o.point.bpp),
                psnr_avg: mean(&|o| o.point.psnr),
                bpp_r: mean(&|o| o.bpp(o.bytes_right)),
                psnr_r: mean(&|o| o.psnr_r),
                bpp_l: mean(&|o| o.bpp(o.bytes_left)),
                psnr_l: mean(&|o| o.psnr_l),
                bpp_d: mean(&|o| o.bpp(o.bytes_disparity)),
                psnr_pred: mean(&|o| o.psnr_pred),
                msssim: mean(&|o| o.msssim),
            }
        })
        .collect()
}

/// Runs the sweep; the main configuration comes first, followed by the
/// remaining ablation cases when requested.
pub fn rd_sweep(pairs: &[StereoPair], sweep: &SweepConfig) -> Result<SweepReport> {
    if pairs.is_empty() {
        return Err(BenchError::EmptyDataset("no stereo pairs".into()));
    }
    if sweep.lambdas.is_empty() {
        return Err(BenchError::InvalidInput("no lambdas".into()));
    }
    if let Some(l) = sweep.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(BenchError::InvalidInput(format!("lambda must be >= 0, got {l}")));
    }
    sweep.template.validate()?;
    let mut configs = vec![sweep.template.clone()];
    if sweep.ablation {
        for case in AblationCase::ALL {
            let c = sweep.template.clone().with_case(case);
            if !configs.contains(&c) {
                configs.push(c);
            }
        }
    }
    let tasks: Vec<(usize, usize)> = (0..configs.len()).flat_map(|c| (0..pairs.len()).map(move |p| (c, p))).collect();
    let total = tasks.len();
    let run = || {
        tasks
            .par_iter()
            .enumerate()
            .map(|(i, &(c, p))| {
                let r = code_pair(&pairs[p], &configs[c], sweep);
                info!("[{}/{total}] {} {}", i + 1, config_label(&configs[c]), pairs[p].name);
                r
            })
            .collect::<Result<Vec<_>>>()
    };
    let results = match sweep.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| BenchError::InvalidInput(format!("thread pool: {e}")))?
            .install(run)?,
        None => run()?,
    };
    let outcomes: Vec<PairOutcome> = results.into_iter().flatten().collect();
    let mut rows = Vec::new();
    for c in &configs {
        rows.extend(average_rows(&config_label(c), &sweep.lambdas, &outcomes));
    }
    Ok(SweepReport { main: config_label(&sweep.template), outcomes, rows, skipped: Vec::new() })
}

impl SweepReport {
    pub fn rows_for(&self, label: &str) -> Vec<&AllocationRow> {
        self.rows.iter().filter(|r| r.label == label).collect()
    }

    fn has_ablation(&self) -> bool {
        AblationCase::ALL.iter().all(|c| self.rows.iter().any(|r| r.label == c.name()))
    }

    /// BD-rate and BD-PSNR of every case against Case 1, if computable.
    pub fn ablation_bd(&self) -> Vec<(String, Option<(f64, f64)>)> {
        let curve = |label: &str| RDCurve::new(self.rows_for(label).iter().map(|r| r.rd_point()).collect());
        let anchor = curve(AblationCase::Case1.name());
        AblationCase::ALL
            .iter()
            .map(|c| {
                let bd = match (&anchor, curve(c.name())) {
                    (Ok(a), Ok(t)) => bd_metrics(a, &t).ok(),
                    _ => None,
                };
                (c.name().to_string(), bd)
            })
            .collect()
    }

    /// Writes the CSV reports and every bitstream under `streams/`; returns
    /// the CSV paths.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(out_dir.join("streams"))?;
        let mut written = Vec::new();
        let main = self.rows_for(&self.main);

        let path = out_dir.join("rd_curve.csv");
        let rows: Vec<Vec<String>> = main
            .iter()
            .map(|r| vec![fmt_g(r.lambda), fmt_g(r.bpp_total), fmt_g(r.psnr_avg), fmt_g(r.msssim)])
            .collect();
        csv::write(&path, &["lambda", "bpp", "psnr", "msssim"], &rows)?;
        written.push(path);

        let path = out_dir.join("allocation.csv");
        let rows: Vec<Vec<String>> = main.iter().map(|r| r.fields()).collect();
        csv::write(&path, &AllocationRow::HEADER, &rows)?;
        written.push(path);

        let path = out_dir.join("per_pair.csv");
        let rows: Vec<Vec<String>> = self
            .outcomes
            .iter()
            .map(|o| {
                let mut f = vec![o.pair.clone(), o.label.clone()];
                f.extend([o.lambda, o.qp_r, o.qp_l].map(fmt_g));
                f.extend([o.bytes_right, o.bytes_disparity, o.bytes_left].map(|b| b.to_string()));
                f.extend([o.point.bpp, o.point.psnr, o.psnr_l, o.psnr_r, o.psnr_pred, o.msssim].map(fmt_g));
                f
            })
            .collect();
        csv::write(
            &path,
            &[
                "pair",
                "case",
                "lambda",
                "qp_r",
                "qp_l",
                "bytes_right",
                "bytes_disparity",
                "bytes_left",
                "bpp",
                "psnr",
                "psnr_l",
                "psnr_r",
                "psnr_pred",
                "msssim",
            ],
            &rows,
        )?;
        written.push(path);

        if self.has_ablation() {
            let path = out_dir.join("ablation.csv");
            let rows: Vec<Vec<String>> = AblationCase::ALL
                .iter()
                .flat_map(|c| self.rows_for(c.name()))
                .map(|r| vec![r.label.clone(), fmt_g(r.lambda), fmt_g(r.bpp_total), fmt_g(r.psnr_avg)])
                .collect();
            csv::write(&path, &["case", "lambda", "bpp", "psnr"], &rows)?;
            written.push(path);

            let path = out_dir.join("ablation_bd.csv");
            let rows: Vec<Vec<String>> = self
                .ablation_bd()
                .into_iter()
                .map(|(case, bd)| {
                    let (r, p) = bd.unwrap_or((f64::NAN, f64::NAN));
                    vec![case, AblationCase::Case1.name().to_string(), fmt_g(r), fmt_g(p)]
                })
                .collect();
            csv::write(&path, &["case", "anchor", "bd_rate", "bd_psnr"], &rows)?;
            written.push(path);
        }

        for o in &self.outcomes {
            let name = format!("{}_{}_lambda{}.dsc", o.pair, o.label, fmt_g(o.lambda));
            fs::write(out_dir.join("streams").join(name), &o.bitstream)?;
        }
        Ok(written)
    }
}

/// Header overhead in bits per pixel of one view.
pub fn header_bpp(pixels: usize) -> f64 {
    (HEADER_LEN * 8) as f64 / pixels as f64
}
