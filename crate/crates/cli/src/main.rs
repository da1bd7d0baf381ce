use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use ecco_core::calib::{calibrate_from_fits, fit_groups};
use ecco_core::codec2x::{self, CompressedBlock2x};
use ecco_core::codec4x::{compress_tensor, decode_block, group_mse, CompressedBlock4x, EncodeLog};
use ecco_core::format::{load_blob, load_meta, load_tensor, save_blob, save_meta, save_tensor, BlobFile, TensorFile};
use ecco_core::metrics::{efficiency_report, EfficiencyReport, B_REAL_2X, B_REAL_4X};
use ecco_core::pardec::parallel_decode;
use ecco_core::selftest::run_selftest;
use ecco_core::{
    calibrate, partition_groups, Config, DecoderKind, PatternIndexCoding, TensorF16, TensorMeta,
    GROUP_SIZE_2X, GROUP_SIZE_4X,
};

#[derive(Parser)]
#[command(name = "ecco", version, about = "Fixed-ratio entropy-coded cache-block compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Weight,
    Kv,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodingArg {
    Fixed,
    Huffman,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RatioArg {
    #[value(name = "4x")]
    X4,
    #[value(name = "2x")]
    X2,
}

#[derive(Clone, Copy, ValueEnum)]
enum DecoderArg {
    Reference,
    Parallel,
}

impl From<DecoderArg> for DecoderKind {
    fn from(d: DecoderArg) -> Self {
        match d {
            DecoderArg::Reference => DecoderKind::Reference,
            DecoderArg::Parallel => DecoderKind::Parallel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Fit shared patterns and Huffman codebooks for a tensor.
    Calibrate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "weight")]
        mode: ModeArg,
        /// Shared pattern count (default 64, or 16 in kv mode).
        #[arg(long)]
        s: Option<usize>,
        #[arg(long, default_value_t = 4)]
        h: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-column importance weights as an ECCT tensor with `cols` values.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "fixed")]
        pattern_index_coding: CodingArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress a tensor into 64-byte blocks.
    Compress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "4x")]
        ratio: RatioArg,
        /// Decoder used to measure the per-group error recorded in the log.
        #[arg(long, value_enum, default_value = "reference")]
        decoder: DecoderArg,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines encoder log, one record per group.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Restore a tensor from a compressed blob.
    Decompress {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "reference")]
        decoder: DecoderArg,
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines dump of the parallel decoder's leaves and merge stages.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Number of blocks to trace.
        #[arg(long, default_value_t = 1)]
        trace_limit: usize,
    },
    /// Error, entropy and bit-efficiency report for a reconstruction.
    Report {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        recon: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "4x")]
        ratio: RatioArg,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Sweep S and H and tabulate the round-trip error.
    Dse {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "4,16,64")]
        s: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "1,4")]
        h: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "weight")]
        mode: ModeArg,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Check that the parallel decoder matches the reference decoder.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        rounds: usize,
    },
}

fn init_threads() -> Result<()> {
    let n = match std::env::var("ECCO_THREADS") {
        Ok(v) => v.trim().parse::<usize>().with_context(|| format!("ECCO_THREADS={v:?} is not a count"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn load_2d(path: &Path) -> Result<(TensorFile, TensorF16)> {
    let file = load_tensor(path).with_context(|| format!("reading {}", path.display()))?;
    let t = file.to_tensor().with_context(|| format!("tensor in {}", path.display()))?;
    Ok((file, t))
}

fn base_config(mode: ModeArg, s: Option<usize>, h: usize, seed: u64) -> Config {
    let base = match mode {
        ModeArg::Weight => Config::default(),
        ModeArg::Kv => Config::kv(),
    };
    let s = s.unwrap_or(base.s);
    base.with_sh(s, h).with_seed(seed)
}

fn cmd_calibrate(
    input: &Path,
    mode: ModeArg,
    s: Option<usize>,
    h: usize,
    seed: u64,
    weights: Option<&Path>,
    coding: CodingArg,
    out: &Path,
) -> Result<()> {
    let (_, t) = load_2d(input)?;
    let mut cfg = base_config(mode, s, h, seed);
    cfg.pattern_index_coding = match coding {
        CodingArg::Fixed => PatternIndexCoding::Fixed,
        CodingArg::Huffman => PatternIndexCoding::Huffman,
    };
    if let Some(w) = weights {
        let wf = load_tensor(w).with_context(|| format!("reading {}", w.display()))?;
        cfg.importance_weights = Some(wf.values.iter().map(|v| v.to_f64()).collect());
    }
    let meta = calibrate(&t, &cfg)?;
    save_meta(out, &meta)?;
    eprintln!(
        "calibrated {}x{} tensor: S = {}, H = {}, s_t = 2^{}",
        t.rows(),
        t.cols(),
        meta.s(),
        meta.h,
        meta.s_t.exponent
    );
    Ok(())
}

#[derive(Serialize)]
struct LogRecord<'a> {
    #[serde(flatten)]
    log: &'a EncodeLog,
    mse: f64,
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in rows {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_compress(
    input: &Path,
    meta: Option<&Path>,
    ratio: RatioArg,
    decoder: DecoderArg,
    out: &Path,
    log: Option<&Path>,
) -> Result<()> {
    let (file, t) = load_2d(input)?;
    match ratio {
        RatioArg::X4 => {
            let meta_path = meta.context("4x compression needs --meta")?;
            let meta = load_meta(meta_path).with_context(|| format!("reading {}", meta_path.display()))?;
            let (blocks, logs) = compress_tensor(&t, &meta)?;
            save_blob(
                out,
                &BlobFile {
                    ratio: 4,
                    dims: file.dims.clone(),
                    pad: t.pad_count(GROUP_SIZE_4X) as u64,
                    blocks: blocks.iter().map(|b| b.0).collect(),
                },
            )?;
            if let Some(log_path) = log {
                let groups = partition_groups(&t)?;
                let kind = DecoderKind::from(decoder);
                let mses = groups
                    .iter()
                    .zip(&blocks)
                    .map(|(g, b)| Ok(group_mse(g, &decode_block(b, &meta, kind)?)))
                    .collect::<Result<Vec<f64>>>()?;
                write_jsonl(log_path, logs.iter().zip(mses).map(|(log, mse)| LogRecord { log, mse }))?;
            }
            eprintln!("compressed {} values into {} blocks (4x)", t.len(), blocks.len());
        }
        RatioArg::X2 => {
            ensure!(meta.is_none(), "2x compression takes no --meta");
            ensure!(log.is_none(), "the encoder log is only produced in 4x mode");
            let blocks = codec2x::compress_tensor_2x(&t)?;
            save_blob(
                out,
                &BlobFile {
                    ratio: 2,
                    dims: file.dims.clone(),
                    pad: t.pad_count(GROUP_SIZE_2X) as u64,
                    blocks: blocks.iter().map(|b| b.0).collect(),
                },
            )?;
            eprintln!("compressed {} values into {} blocks (2x)", t.len(), blocks.len());
        }
    }
    Ok(())
}

fn cmd_decompress(
    input: &Path,
    meta: Option<&Path>,
    decoder: DecoderArg,
    out: &Path,
    trace: Option<&Path>,
    trace_limit: usize,
) -> Result<()> {
    let blob = load_blob(input).with_context(|| format!("reading {}", input.display()))?;
    let (rows, cols) = TensorFile::shape_2d(&blob.dims);
    let recon = match blob.ratio {
        4 => {
            let meta_path = meta.context("4x blobs need --meta")?;
            let meta: TensorMeta = load_meta(meta_path).with_context(|| format!("reading {}", meta_path.display()))?;
            let blocks: Vec<CompressedBlock4x> = blob.blocks.iter().map(|b| CompressedBlock4x(*b)).collect();
            if let Some(path) = trace {
                let traces = blocks
                    .iter()
                    .take(trace_limit)
                    .enumerate()
                    .map(|(i, b)| {
                        let p = parallel_decode(b, &meta)?;
                        Ok(serde_json::json!({
                            "block": i,
                            "mask": p.mask,
                            "stream_end": p.stream_end,
                            "leaves": p.trace.leaves,
                            "stages": p.trace.stages,
                        }))
                    })
                    .collect::<Result<Vec<_>>>()?;
                write_jsonl(path, traces)?;
            }
            ecco_core::codec4x::decompress_tensor(&blocks, &meta, decoder.into(), rows, cols)
                .context("decoding blocks (does --meta match this blob?)")?
        }
        2 => {
            ensure!(meta.is_none(), "2x blobs carry their own scales; drop --meta");
            ensure!(trace.is_none(), "traces exist only for 4x blobs");
            let blocks: Vec<CompressedBlock2x> = blob.blocks.iter().map(|b| CompressedBlock2x(*b)).collect();
            let (t, reserved) = codec2x::decompress_tensor_2x(&blocks, rows, cols)?;
            if reserved {
                eprintln!("warning: reserved metadata bits are set in some 2x blocks");
            }
            t
        }
        r => bail!("unsupported ratio tag {r}"),
    };
    save_tensor(
        out,
        &TensorFile {
            dims: blob.dims.clone(),
            values: recon.values().to_vec(),
        },
    )?;
    Ok(())
}

fn read_logs(path: &Path) -> Result<Vec<EncodeLog>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|(i, l)| {
            let l = l?;
            serde_json::from_str(&l).with_context(|| format!("{} line {}", path.display(), i + 1))
        })
        .collect()
}

fn print_reports(rows: &[serde_json::Value], csv_header: &str, csv: Vec<String>, format: FormatArg) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match format {
        FormatArg::Csv => {
            writeln!(out, "{csv_header}")?;
            for r in csv {
                writeln!(out, "{r}")?;
            }
        }
        FormatArg::Json => {
            let v = if rows.len() == 1 { rows[0].clone() } else { serde_json::Value::from(rows.to_vec()) };
            writeln!(out, "{}", serde_json::to_string_pretty(&v)?)?;
        }
    }
    Ok(())
}

fn cmd_report(orig: &Path, recon: &Path, log: Option<&Path>, ratio: RatioArg, format: FormatArg) -> Result<()> {
    let a = load_tensor(orig).with_context(|| format!("reading {}", orig.display()))?;
    let b = load_tensor(recon).with_context(|| format!("reading {}", recon.display()))?;
    ensure!(a.dims == b.dims, "shape mismatch: {:?} vs {:?}", a.dims, b.dims);
    let logs = log.map(read_logs).transpose()?;
    let (group, b_real) = match ratio {
        RatioArg::X4 => (GROUP_SIZE_4X, B_REAL_4X),
        RatioArg::X2 => (GROUP_SIZE_2X, B_REAL_2X),
    };
    let rep = efficiency_report(&a.values, &b.values, group, logs.as_deref(), b_real)?;
    print_reports(&[serde_json::to_value(&rep)?], EfficiencyReport::CSV_HEADER, vec![rep.csv_row()], format)
}

#[derive(Serialize)]
struct DseRow {
    s: usize,
    h: usize,
    mse: f64,
    clip_ratio: f64,
    pad_ratio: f64,
    entropy_bits: f64,
    eta: f64,
}

fn cmd_dse(input: &Path, s_list: &[usize], h_list: &[usize], seed: u64, mode: ModeArg, format: FormatArg) -> Result<()> {
    let (_, t) = load_2d(input)?;
    ensure!(!s_list.is_empty() && !h_list.is_empty(), "empty sweep");
    // Per-group fits do not depend on S or H.
    let fits = fit_groups(&t, &base_config(mode, None, 1, seed))?;
    let mut rows = Vec::new();
    for &h in h_list {
        for &s in s_list {
            let cfg = base_config(mode, Some(s), h, seed);
            let meta = calibrate_from_fits(&fits, &cfg).with_context(|| format!("calibrating S = {s}, H = {h}"))?;
            let (blocks, logs) = compress_tensor(&t, &meta)?;
            let recon = ecco_core::codec4x::decompress_tensor(&blocks, &meta, DecoderKind::Reference, t.rows(), t.cols())?;
            let groups = partition_groups(&t)?;
            let per_group: Vec<Vec<half::f16>> =
                partition_groups(&recon)?.into_iter().map(|g| g.values).collect();
            let mse = groups.iter().zip(&per_group).map(|(g, r)| group_mse(g, r)).sum::<f64>() / groups.len() as f64;
            let rep = efficiency_report(t.values(), recon.values(), GROUP_SIZE_4X, Some(&logs), B_REAL_4X)?;
            rows.push(DseRow {
                s,
                h,
                mse,
                clip_ratio: rep.clip_ratio.unwrap_or(0.0),
                pad_ratio: rep.pad_ratio.unwrap_or(0.0),
                entropy_bits: rep.entropy_bits.unwrap_or(0.0),
                eta: rep.eta.unwrap_or(0.0),
            });
        }
    }
    let csv = rows
        .iter()
        .map(|r| format!("{},{},{:.9e},{:.6},{:.6},{:.6},{:.6}", r.s, r.h, r.mse, r.clip_ratio, r.pad_ratio, r.entropy_bits, r.eta))
        .collect();
    let json: Vec<serde_json::Value> = rows.iter().map(serde_json::to_value).collect::<Result<_, _>>()?;
    match format {
        FormatArg::Json => {
            println!("{}", serde_json::to_string_pretty(&json)?);
            Ok(())
        }
        FormatArg::Csv => print_reports(&json, "s,h,mse,clip_ratio,pad_ratio,entropy_bits,eta", csv, format),
    }
}

fn cmd_selftest(seed: u64, rounds: usize) -> Result<()> {
    let rep = run_selftest(seed, rounds)?;
    println!("{}", serde_json::to_string(&rep)?);
    ensure!(rep.passed(), "{} of {} blocks decode differently", rep.mismatches, rep.blocks + rep.random_tails);
    eprintln!("selftest passed: {} encoded blocks, {} random-tail blocks", rep.blocks, rep.random_tails);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Calibrate {
            input,
            mode,
            s,
            h,
            seed,
            weights,
            pattern_index_coding,
            out,
        } => cmd_calibrate(&input, mode, s, h, seed, weights.as_deref(), pattern_index_coding, &out),
        Command::Compress {
            input,
            meta,
            ratio,
            decoder,
            out,
            log,
        } => cmd_compress(&input, meta.as_deref(), ratio, decoder, &out, log.as_deref()),
        Command::Decompress {
            input,
            meta,
            decoder,
            out,
            trace,
            trace_limit,
        } => cmd_decompress(&input, meta.as_deref(), decoder, &out, trace.as_deref(), trace_limit),
        Command::Report {
            orig,
            recon,
            log,
            ratio,
            format,
        } => cmd_report(&orig, &recon, log.as_deref(), ratio, format),
        Command::Dse {
            input,
            s,
            h,
            seed,
            mode,
            format,
        } => cmd_dse(&input, &s, &h, seed, mode, format),
        Command::Selftest { seed, rounds } => cmd_selftest(seed, rounds),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
