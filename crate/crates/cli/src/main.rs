// SPDX-License-Identifier: Apache-2.0

//! `semfuse` command line: synth, run, eval, bench.
//!
//! Exit codes: 0 success, 1 usage or unwritable output, 2 unreadable or
//! malformed input, 3 contract violation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use semfuse_core::eval::{evaluate, range_binned_eval, render_text, EvalConfig};
use semfuse_core::formats::{
    read_boxes, read_json, write_bev, write_boxes, write_bytes, write_cloud, write_json, CloudFile,
};
use semfuse_core::pipeline::{
    bench, run, synthetic_settings, write_scene, FuserKind, PipelineConfig, PipelineInputs, ViewMode,
    MIN_BENCH_REPETITIONS,
};
use semfuse_core::synth::{oracle_detections, synthesize, Perturbation, SceneConfig, CATEGORY_NAMES};
use semfuse_core::{configure_threads, Error, THREADS_ENV};

#[derive(Parser, Debug)]
#[command(name = "semfuse", version, about = "Semantic LiDAR-camera BEV fusion pipeline")]
struct Cli {
    /// JSON config: scene config for synth, pipeline config for run and
    /// bench, eval config for eval.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// More logging; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Also write the intermediate stream grids and the painted cloud.
    #[arg(long, global = true)]
    dump_stages: bool,

    /// Worker threads; same as setting SEMFUSE_THREADS. Results do not
    /// depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a synthetic scene and a ready-to-run pipeline config.
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_objects: Option<usize>,
        /// Mean foreground fraction to engineer.
        #[arg(long)]
        target_fg: Option<f64>,
        /// Also write `oracle_dets.txt`: ground truth with this center noise (m).
        #[arg(long)]
        oracle_sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        oracle_seed: u64,
    },
    /// Run the fusion pipeline described by --config.
    Run {
        #[arg(long)]
        mode: Option<ViewMode>,
        #[arg(long)]
        fuser: Option<FuserKind>,
    },
    /// Score detections against ground truth.
    Eval {
        #[arg(long)]
        dets: PathBuf,
        #[arg(long)]
        gts: PathBuf,
    },
    /// Time masked against unmasked lifting.
    Bench {
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
    },
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult = Result<(), Failure>;

fn required<'a>(p: &'a Option<PathBuf>, flag: &str, cmd: &str) -> Result<&'a Path, Failure> {
    p.as_deref()
        .ok_or_else(|| Failure::Usage(format!("{cmd} needs --{flag}")))
}

fn cmd_synth(
    cli: &Cli,
    seed: Option<u64>,
    n_objects: Option<usize>,
    target_fg: Option<f64>,
    oracle_sigma: Option<f64>,
    oracle_seed: u64,
) -> CliResult {
    let out = required(&cli.out, "out", "synth")?;
    let mut cfg: SceneConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => SceneConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = n_objects {
        cfg.n_objects = n;
    }
    if target_fg.is_some() {
        cfg.target_fg_fraction = target_fg;
    }
    let scene = synthesize(&cfg)?;
    let census = write_scene(out, &scene, &synthetic_settings(scene.n_categories()))?;
    if let Some(sigma) = oracle_sigma {
        let perturb = Perturbation {
            sigma_center: sigma,
            ..Perturbation::default()
        };
        write_boxes(
            &out.join("oracle_dets.txt"),
            &oracle_detections(&scene, &perturb, oracle_seed)?,
        )?;
    }
    println!(
        "census objects={} points={} object_points={} foreground_fraction={:.6}",
        census.objects, census.points, census.object_points, census.foreground_fraction
    );
    println!("digest {}", scene.digest());
    Ok(())
}

fn cmd_run(cli: &Cli, mode: Option<ViewMode>, fuser: Option<FuserKind>) -> CliResult {
    let cfg_path = required(&cli.config, "config", "run")?;
    let out = required(&cli.out, "out", "run")?;
    let mut cfg = PipelineConfig::load(cfg_path)?;
    if let Some(m) = mode {
        cfg.settings.mode = m;
    }
    if let Some(f) = fuser {
        cfg.settings.fuser = f;
    }
    let inputs = PipelineInputs::load(&cfg)?;
    let result = run(&cfg.settings, &inputs)?;
    let r = &result.report;
    write_bev(&out.join("fused.bev"), &result.fused)?;
    write_json(&out.join("report.json"), r)?;
    if cli.dump_stages {
        write_bev(&out.join("camera.bev"), &result.camera_bev)?;
        write_bev(&out.join("lidar.bev"), &result.lidar_bev)?;
        write_cloud(&out.join("painted.bin"), &CloudFile::Painted(result.painted.clone()))?;
    }
    if let Some(dets) = &result.detections {
        write_boxes(&out.join("detections.txt"), dets)?;
    }
    println!("mode {}  fuser {}  cameras {}", r.mode, r.fuser, r.cameras);
    println!(
        "pseudo points {} -> {} (reduction {:.2}%), {} outside the grid",
        r.pseudo_points_lifted,
        r.pseudo_points_pooled,
        100.0 * r.reduction,
        r.pseudo_points_out_of_extent
    );
    println!("foreground fraction {:.4}", r.foreground_fraction);
    println!(
        "lidar points {} painted {} dropped {}",
        r.lidar_points, r.painted_points, r.pillar_dropped
    );
    for (stage, secs) in &r.stage_seconds {
        println!("stage {stage:<9} {:>10.3} ms", secs * 1e3);
    }
    if let Some(n) = r.detections {
        println!("detections {n}");
    }
    println!("fused digest {}", r.fused_digest);
    Ok(())
}

fn cmd_eval(cli: &Cli, dets: &Path, gts: &Path) -> CliResult {
    let cfg: EvalConfig = match &cli.config {
        Some(p) => read_json(p)?,
        None => EvalConfig::default(),
    };
    let d = read_boxes(dets)?;
    let g = read_boxes(gts)?;
    let summary = evaluate(&d, &g, &cfg)?;
    let bins = range_binned_eval(&d, &g, &cfg)?;
    let names: Vec<String> = CATEGORY_NAMES.iter().map(|s| s.to_string()).collect();
    let text = render_text(&summary, Some(&bins), &names);
    print!("{text}");
    if let Some(out) = &cli.out {
        write_json(&out.join("metrics.json"), &summary)?;
        write_json(&out.join("range_bins.json"), &bins)?;
        write_bytes(&out.join("metrics.txt"), text.as_bytes())?;
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, repetitions: usize) -> CliResult {
    if repetitions < MIN_BENCH_REPETITIONS {
        return Err(Failure::Usage(format!(
            "--repetitions must be at least {MIN_BENCH_REPETITIONS}, got {repetitions}"
        )));
    }
    let cfg = PipelineConfig::load(required(&cli.config, "config", "bench")?)?;
    let inputs = PipelineInputs::load(&cfg)?;
    let b = bench(&cfg.settings, &inputs, repetitions)?;
    println!("{} repetitions, masked mode {}", b.repetitions, b.masked_mode);
    println!(
        "{:<10} {:>14} {:>14} {:>14} {:>14}",
        "stage", "unmasked p50", "unmasked p95", "masked p50", "masked p95"
    );
    for s in &b.stages {
        println!(
            "{:<10} {:>11.3} ms {:>11.3} ms {:>11.3} ms {:>11.3} ms",
            s.stage,
            s.unmasked.median * 1e3,
            s.unmasked.p95 * 1e3,
            s.masked.median * 1e3,
            s.masked.p95 * 1e3
        );
    }
    println!(
        "pooled points {} unmasked, {} masked, ratio {:.4}",
        b.unmasked_pooled, b.masked_pooled, b.pooled_ratio
    );
    println!(
        "pooling throughput {:.3e} pts/s unmasked, {:.3e} pts/s masked",
        b.unmasked_throughput, b.masked_throughput
    );
    if let Some(out) = &cli.out {
        write_json(&out.join("bench.json"), &b)?;
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> CliResult {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        std::env::set_var(THREADS_ENV, t.to_string());
    }
    if let Some(t) = configure_threads()? {
        info!("using {t} worker threads");
    }
    match &cli.command {
        Cmd::Synth {
            seed,
            n_objects,
            target_fg,
            oracle_sigma,
            oracle_seed,
        } => cmd_synth(cli, *seed, *n_objects, *target_fg, *oracle_sigma, *oracle_seed),
        Cmd::Run { mode, fuser } => cmd_run(cli, *mode, *fuser),
        Cmd::Eval { dets, gts } => cmd_eval(cli, dets, gts),
        Cmd::Bench { repetitions } => cmd_bench(cli, *repetitions),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Write { .. } => 1,
        e if e.is_input_error() => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
