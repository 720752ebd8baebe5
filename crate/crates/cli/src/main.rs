use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use overtake_core::calibration::{calibrate_stereo, read_corner_file, BoardSpec};
use overtake_core::config::{load_config, PipelineConfig, SourceKind};
use overtake_core::pgm::{read_pgm, write_pgm};
use overtake_core::pipeline::{
    bench_latency, evaluate_error_table, format_frame_error, format_frame_result, parse_error_table, run_pipeline,
    DirectorySource, FrameSource, Pipeline, SyntheticSource,
};
use overtake_core::rectification::{load_calibration, save_calibration, StereoMaps};
use overtake_core::synthsim::{format_truth, read_scene, render_stereo};
use overtake_core::{Error, Result};

#[derive(Parser)]
#[command(name = "overtake", version, about = "Stereo ranging and overtake signaling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate a stereo rig from a corner file and write the calibration file.
    Calibrate(CalibrateArgs),
    /// Rectify a directory of frame pairs with a calibration file.
    Rectify(RectifyArgs),
    /// Run the full pipeline and print one result line per ranged target.
    Run(RunArgs),
    /// Render a scene file into frame pairs plus a truth file.
    Synth(SynthArgs),
    /// Distance error report from a table of actual and measured distances.
    Eval(EvalArgs),
    /// Per-stage latency report.
    Bench(BenchArgs),
}

#[derive(Args)]
struct CalibrateArgs {
    /// Corner file: `view_id camera grid_row grid_col x y` per line.
    corners: PathBuf,
    /// Inner corner grid, ROWSxCOLS.
    #[arg(long, value_parser = parse_size)]
    board: (usize, usize),
    /// Square edge length, cm.
    #[arg(long)]
    square: f64,
    /// Frame size, WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size, default_value = "640x480")]
    frame: (usize, usize),
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct RectifyArgs {
    #[arg(long)]
    calibration: PathBuf,
    /// Directory of left_NNNNNN.pgm / right_NNNNNN.pgm pairs.
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SourceArgs {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Frame directory (overrides the configured input).
    #[arg(long, conflicts_with = "scene")]
    input: Option<PathBuf>,
    /// Scene file to render as the frame source.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Number of synthetic frames.
    #[arg(long)]
    frames: Option<usize>,
    /// Calibration file (overrides the configured one).
    #[arg(long)]
    calibration: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Args)]
struct SynthArgs {
    scene: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    /// Number of identical frame pairs to write.
    #[arg(long, default_value_t = 1)]
    frames: usize,
}

#[derive(Args)]
struct EvalArgs {
    /// `actual measured` rows in cm; `-` reads stdin.
    table: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    source: SourceArgs,
    /// Frames to time (at least 10).
    #[arg(short = 'n', long, default_value_t = 100)]
    count: usize,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

fn config_err(e: Error) -> Error {
    if e.is_config_error() {
        e
    } else {
        Error::Config(e.to_string())
    }
}

fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let board = BoardSpec::new(args.board.0, args.board.1, args.square).map_err(config_err)?;
    let obs = read_corner_file(&args.corners, &board)?;
    let (result, summary) = calibrate_stereo(&board, &obs, args.frame)?;
    let maps = StereoMaps::from_rig(&result.rig(), args.frame)?;
    save_calibration(&args.output, &result, &maps)?;
    println!("views\t{}", result.view_poses.len());
    println!("iterations\t{}", summary.iterations);
    println!("rms_px\t{:.6}", result.rms_reprojection);
    for (name, c) in [("left", &result.left), ("right", &result.right)] {
        println!("{name}\tfx={:.4} fy={:.4} cx={:.4} cy={:.4}", c.fx, c.fy, c.cx, c.cy);
    }
    println!("baseline_cm\t{:.4}", result.baseline());
    Ok(())
}

fn load_maps(path: &Path) -> Result<StereoMaps> {
    load_calibration(path).map(|f| f.maps).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", path.display())),
        other => other,
    })
}

fn rectify(args: &RectifyArgs) -> Result<()> {
    let maps = load_maps(&args.calibration)?;
    std::fs::create_dir_all(&args.output)?;
    let mut source = DirectorySource::open(&args.input, 20.0)?;
    let mut count = 0;
    while let Some(frame) = source.next_frame() {
        let frame = frame.map_err(|e| e.error)?;
        let (l, r) = maps.rectify_pair(&frame.left, &frame.right)?;
        write_pgm(&DirectorySource::frame_path(&args.output, "left", frame.idx), &l)?;
        write_pgm(&DirectorySource::frame_path(&args.output, "right", frame.idx), &r)?;
        count += 1;
    }
    eprintln!("rectified {count} frame pairs");
    Ok(())
}

/// Configuration with command-line overrides applied, plus the maps it needs.
fn prepare(args: &SourceArgs) -> Result<(PipelineConfig, Option<StereoMaps>)> {
    let mut cfg = match &args.config {
        Some(p) => load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = &args.input {
        cfg.io.source = SourceKind::Directory;
        cfg.io.input = Some(p.clone());
    }
    if let Some(p) = &args.scene {
        cfg.io.source = SourceKind::Synthetic;
        cfg.io.input = Some(p.clone());
    }
    if let Some(n) = args.frames {
        cfg.io.frames = n;
    }
    if let Some(p) = &args.calibration {
        cfg.io.calibration = Some(p.clone());
    }
    let maps = cfg.io.calibration.as_deref().map(load_maps).transpose()?;
    Ok((cfg, maps))
}

fn open_source(cfg: &PipelineConfig) -> Result<Box<dyn FrameSource>> {
    let input = cfg
        .io
        .input
        .as_deref()
        .ok_or_else(|| Error::Config("no input: pass --input or --scene, or set io.input".into()))?;
    Ok(match cfg.io.source {
        SourceKind::Directory => Box::new(DirectorySource::open(input, cfg.target_fps)?),
        SourceKind::Synthetic => Box::new(SyntheticSource::new(
            read_scene(input)?,
            Some(cfg.io.frames as u64),
            cfg.target_fps,
        )),
    })
}

/// Returns whether every frame succeeded.
fn run(args: &RunArgs) -> Result<bool> {
    let (cfg, maps) = prepare(&args.source)?;
    let pipeline = Pipeline::from_config(&cfg, maps)?;
    let source = open_source(&cfg)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut all_ok = true;
    for record in run_pipeline(pipeline, source) {
        match record {
            Ok(r) => out.write_all(format_frame_result(&r).as_bytes())?,
            Err(e) => {
                all_ok = false;
                out.write_all(format_frame_error(&e).as_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(all_ok)
}

fn synth(args: &SynthArgs) -> Result<()> {
    let scene = read_scene(&args.scene)?;
    let rendered = render_stereo(&scene)?;
    std::fs::create_dir_all(&args.output)?;
    for idx in 0..args.frames as u64 {
        write_pgm(&DirectorySource::frame_path(&args.output, "left", idx), &rendered.left)?;
        write_pgm(
            &DirectorySource::frame_path(&args.output, "right", idx),
            &rendered.right,
        )?;
    }
    std::fs::write(args.output.join("truth.txt"), format_truth(&rendered.truth))?;
    // Re-read one frame so a broken write surfaces here rather than later.
    if args.frames > 0 {
        read_pgm(&DirectorySource::frame_path(&args.output, "left", 0))?;
    }
    eprintln!(
        "wrote {} frame pairs and truth.txt to {}",
        args.frames,
        args.output.display()
    );
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let text = if args.table.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        s
    } else {
        std::fs::read_to_string(&args.table)?
    };
    let report = evaluate_error_table(&parse_error_table(&text)?)?;
    print!("{}", report.to_text());
    Ok(())
}

fn bench(args: &BenchArgs) -> Result<()> {
    let (cfg, maps) = prepare(&args.source)?;
    let mut pipeline = Pipeline::from_config(&cfg, maps)?;
    let mut source = open_source(&cfg)?;
    let (report, _) = bench_latency(&mut pipeline, source.as_mut(), args.count)?;
    print!("{}", report.to_text());
    Ok(())
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_config_error() {
        ExitCode::from(1)
    } else {
        ExitCode::from(2)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match &cli.command {
        Command::Calibrate(a) => calibrate(a).map(|_| true),
        Command::Rectify(a) => rectify(a).map(|_| true),
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::Bench(a) => bench(a).map(|_| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
