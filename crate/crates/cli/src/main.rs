use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use busyquiet::bench::run_bench;
use busyquiet::bqn::{build_bqn, BqnConfig};
use busyquiet::check::run_all;
use busyquiet::disentangle::{busy_input, quiet_raw, segment_indices, DisentangleConfig};
use busyquiet::io::{export_visualization, load_frames, load_raw, save_raw, FrameSequenceSource, VizMode};
use busyquiet::kernels::{export_kernel, log_kernel, ExportFormat, NormMode};
use busyquiet::mbpm::{count_macs, count_params, MbpmConfig, MbpmParams};
use busyquiet::tensor::Shape;
use busyquiet::toy::{run_toy, ToyRun};
use busyquiet::{disentangle, Error, Result, VideoClip};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "bqn", version, about = "Busy/quiet video disentangling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a frame sequence into busy and quiet streams.
    Disentangle(DisentangleArgs),
    /// Export a Laplacian-of-Gaussian kernel bank.
    Kernel {
        #[arg(long, default_value_t = 1.1)]
        sigma: f64,
        #[arg(long, default_value_t = 9)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        channels: usize,
        #[arg(long, default_value = "sum1")]
        log_norm: NormMode,
        #[arg(long)]
        export: PathBuf,
        #[arg(long, default_value = "json")]
        format: ExportFormat,
    },
    /// Parameter and multiply-accumulate counts of the band-pass module.
    Flops {
        /// T,C,H,W
        #[arg(long, value_parser = parse_shape)]
        shape: Shape,
        #[arg(long, default_value_t = 9)]
        k: usize,
        #[arg(long, default_value_t = 3)]
        stride: usize,
        #[arg(long)]
        json: bool,
    },
    /// Oracle-equivalence, gradient and init-identity suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Separable versus direct timings.
    Bench {
        /// One or more T,C,H,W shapes.
        #[arg(long, value_parser = parse_shape, num_args = 1.., required = true)]
        shapes: Vec<Shape>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 9)]
        k: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the module and a linear head on moving squares.
    TrainToy {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 200)]
        clips: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the two-pathway network on a raw clip.
    Graph {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Quiet stream side; defaults to 5/8 of the clip height, capped at 160.
        #[arg(long, value_parser = parse_size)]
        quiet_size: Option<(usize, usize)>,
    },
}

#[derive(clap::Args, Debug)]
struct DisentangleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_busy: PathBuf,
    #[arg(long)]
    out_quiet: PathBuf,
    #[arg(long, default_value_t = 1.1)]
    sigma: f64,
    #[arg(long, default_value_t = 9)]
    k: usize,
    /// N or HxW.
    #[arg(long, value_parser = parse_size, default_value = "160")]
    quiet_size: (usize, usize),
    /// N or HxW; defaults to the input resolution.
    #[arg(long, value_parser = parse_size)]
    busy_size: Option<(usize, usize)>,
    #[arg(long, default_value = "sum1")]
    log_norm: NormMode,
    /// Sample this many 3-frame segments; defaults to every frame.
    #[arg(long)]
    segments: Option<usize>,
    /// Also write `quiet_raw.bqc`, the quiet stream before resizing.
    #[arg(long)]
    emit_quiet_raw: bool,
    /// Write PNG frames with this normalization (per-frame or global).
    #[arg(long)]
    viz: Option<VizMode>,
}

fn parse_shape(s: &str) -> std::result::Result<Shape, String> {
    let dims: Vec<usize> = s
        .split(',')
        .map(|d| d.trim().parse::<usize>().map_err(|e| format!("{d:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match dims[..] {
        [t, c, h, w] => Ok((t, c, h, w)),
        _ => Err(format!("expected T,C,H,W, got {s:?}")),
    }
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |d: &str| d.trim().parse::<usize>().map_err(|e| format!("{d:?}: {e}"));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn select_frames(clip: VideoClip, segments: Option<usize>) -> Result<(VideoClip, usize)> {
    let t = clip.t();
    let segments = match segments {
        Some(s) => s,
        None if t % 3 == 0 => t / 3,
        None => {
            return Err(Error::Validation(format!(
                "{t} frames is not a multiple of 3; pass --segments to sample"
            )))
        }
    };
    if t == 3 * segments {
        return Ok((clip, segments));
    }
    let idx = segment_indices(t, segments)?;
    let (_, c, h, w) = clip.shape();
    let data = idx.iter().flat_map(|&i| clip.frame(i).to_vec()).collect();
    Ok((VideoClip::new(idx.len(), c, h, w, data)?, segments))
}

fn run_disentangle(args: &DisentangleArgs) -> Result<()> {
    let clip = load_frames(&FrameSequenceSource::rgb(&args.input))?;
    let (clip, segments) = select_frames(clip, args.segments)?;
    let config = DisentangleConfig {
        mbpm: MbpmConfig {
            sigma: args.sigma,
            k: args.k,
            stride: 3,
            norm_mode: args.log_norm,
        },
        busy_size: args.busy_size,
        quiet_size: args.quiet_size,
        segments,
    };
    let params = MbpmParams::init(clip.c(), &config.mbpm, false)?;
    let pair = disentangle(&clip, &config, &params)?;
    create_dir(&args.out_busy)?;
    create_dir(&args.out_quiet)?;
    save_raw(&pair.busy, &args.out_busy.join("busy.bqc"))?;
    save_raw(&pair.quiet, &args.out_quiet.join("quiet.bqc"))?;
    if args.emit_quiet_raw {
        let raw = quiet_raw(&clip, &busy_input(&clip, &params)?)?;
        save_raw(&raw, &args.out_quiet.join("quiet_raw.bqc"))?;
    }
    if let Some(mode) = args.viz {
        export_visualization(&pair.busy, &args.out_busy, mode)?;
        export_visualization(&pair.quiet, &args.out_quiet, mode)?;
    }
    println!(
        "busy {:?}, quiet {:?}, {segments} segments",
        pair.busy.shape(),
        pair.quiet.shape()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Disentangle(args) => run_disentangle(&args),
        Command::Kernel {
            sigma,
            k,
            channels,
            log_norm,
            export,
            format,
        } => {
            let kernel = log_kernel(sigma, k, channels, log_norm)?;
            export_kernel(&kernel, &export, format)?;
            println!("wrote {}x{}x{channels} kernel to {}", k, k, export.display());
            Ok(())
        }
        Command::Flops { shape, k, stride, json } => {
            let params = MbpmParams::init(shape.1, &MbpmConfig { k, stride, ..MbpmConfig::BUSY }, false)?;
            let macs = count_macs(&params, shape)?;
            let n = count_params(&params);
            if json {
                println!("{}", json!({ "params": n, "macs": macs }));
            } else {
                println!("{:.3} GMACs, {n} params", macs as f64 / 1e9);
            }
            Ok(())
        }
        Command::Check { seed } => {
            let results = run_all(seed)?;
            for r in &results {
                println!(
                    "{} {}: worst {:.3e} (tolerance {:.0e}, {} cases)",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.worst,
                    r.tolerance,
                    r.cases
                );
            }
            match results.iter().filter(|r| !r.passed).count() {
                0 => Ok(()),
                n => Err(Error::Validation(format!("{n} suite(s) failed"))),
            }
        }
        Command::Bench { shapes, repeats, k, out } => {
            let report = run_bench(&shapes, repeats, k)?;
            for case in &report.cases {
                println!(
                    "{:?} {:?} k={}: {:.4}s median, {} MACs, {:.1} frames/s",
                    case.implementation, case.shape, case.k, case.median_seconds, case.macs, case.frames_per_second
                );
            }
            for s in &report.summaries {
                println!("{:?}: max diff {:.2e}, faster {:?}", s.shape, s.max_abs_diff, s.faster);
            }
            if let Some(path) = out {
                write_json(&path, &serde_json::to_value(&report).map_err(|e| Error::Format(e.to_string()))?)?;
            }
            if report.all_within_tolerance() {
                Ok(())
            } else {
                Err(Error::Validation("separable output drifted from the direct oracle".into()))
            }
        }
        Command::TrainToy {
            steps,
            lr,
            seed,
            k,
            clips,
            out,
        } => {
            let mut run = ToyRun {
                steps,
                lr,
                seed,
                ..ToyRun::default()
            };
            run.mbpm.k = k;
            run.task.clips = clips;
            let (report, params) = run_toy(&run)?;
            let first = report.loss_curve[0];
            let last = *report.loss_curve.last().expect("curve has steps + 1 entries");
            println!(
                "loss {first:.4} -> {last:.4}, accuracy {:.3} (from {:.3})",
                report.accuracy, report.initial_accuracy
            );
            if let Some(path) = out {
                let shape = (run.task.frames, 1, run.task.size, run.task.size);
                write_json(
                    &path,
                    &json!({
                        "params": count_params(&params),
                        "macs": count_macs(&params, shape)?,
                        "loss_curve": report.loss_curve,
                        "smoothed_loss_curve": report.smoothed_loss_curve,
                        "accuracy": report.accuracy,
                        "initial_accuracy": report.initial_accuracy,
                        "temporal_taps": params.temporal.taps(),
                    }),
                )?;
            }
            Ok(())
        }
        Command::Graph {
            config,
            input,
            scores,
            quiet_size,
        } => {
            let cfg = BqnConfig::from_json_file(&config)?;
            let graph = build_bqn(&cfg)?;
            let clip = load_raw(&input)?;
            let (clip, segments) = select_frames(clip, None)?;
            let quiet = quiet_size.unwrap_or_else(|| {
                let side = (clip.h().min(clip.w()) * 5 / 8).clamp(1, 160);
                (side, side)
            });
            let dcfg = DisentangleConfig {
                quiet_size: quiet,
                segments,
                ..DisentangleConfig::default()
            };
            let params = MbpmParams::init(clip.c(), &dcfg.mbpm, false)?;
            let pair = disentangle(&clip, &dcfg, &params)?;
            let s = graph.forward(&pair)?;
            write_json(&scores, &json!({ "scores": s, "classes": cfg.classes, "fusion": cfg.fusion }))?;
            println!("{} scores written to {}", s.len(), scores.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = busyquiet::init_threads_from_env() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
