//! `motionprobe` command-line tool.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 analysis failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motionprobe::image::Roi;
use motionprobe::motion::parse_grid;
use motionprobe::pipeline::{
    analyze_pair, ingest_frames, result_json, run_sweep, sweep_json, AnalysisParams, FrameStore,
};
use motionprobe::synth::{export_scene, SceneSpec};
use motionprobe::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "motionprobe", version, about = "Find what moved between two frames of shaky video")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one frame pair and print the result JSON.
    Analyze(AnalyzeArgs),
    /// Apply a grid of thresholds to one frame pair and print the sweep JSON.
    Sweep {
        #[command(flatten)]
        common: AnalyzeArgs,
        /// START:STEP:STOP, inclusive.
        #[arg(long, default_value = "0:0.5:10")]
        ts_grid: String,
    },
    /// Render a synthetic scene from a JSON spec into a frame directory.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a video (via $VIDEO_DECODER) or a frame directory into a frame store.
    Ingest {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Directory of frame_%06d.png files.
    #[arg(long)]
    frames: PathBuf,
    /// Earlier and later frame numbers (1-based).
    #[arg(long, required = true, num_args = 2, value_names = ["I", "J"])]
    pair: Vec<usize>,
    /// X,Y,W,H in pixels.
    #[arg(long)]
    roi: Option<Roi>,
    #[arg(long)]
    ts: Option<f64>,
    /// Arrow length multiplier.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    fps: Option<f64>,
    /// JSON analysis parameters; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root directory for run directories.
    #[arg(long)]
    out: PathBuf,
}

impl AnalyzeArgs {
    fn params(&self) -> Result<AnalysisParams, Error> {
        let mut params = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
                serde_json::from_str(&text)?
            }
            None => AnalysisParams::default(),
        };
        if self.roi.is_some() {
            params.roi = self.roi;
        }
        if let Some(ts) = self.ts {
            params.ts = ts;
        }
        if let Some(scale) = self.scale {
            params.arrow.scale = scale;
        }
        if let Some(seed) = self.seed {
            params.seed = seed;
        }
        params.validate()?;
        Ok(params)
    }

    fn store(&self) -> Result<FrameStore, Error> {
        let store = FrameStore::open(&self.frames)?;
        match self.fps {
            Some(fps) => store.with_fps(fps),
            None => Ok(store),
        }
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Analyze(args) => {
            let (params, store) = (args.params()?, args.store()?);
            let analysis = analyze_pair(&store, args.pair[0], args.pair[1], &params, &args.out)?;
            eprintln!(
                "run {} in {:.3} s: {} of {} vectors at ts = {}",
                analysis.run_dir.display(),
                analysis.duration.as_secs_f64(),
                analysis.result.filtered.len(),
                analysis.result.unfiltered.len(),
                params.ts
            );
            print!("{}", result_json(&analysis.result)?);
        }
        Command::Sweep { common, ts_grid } => {
            let grid = parse_grid(&ts_grid)?;
            let (params, store) = (common.params()?, common.store()?);
            let (report, run_dir) = run_sweep(&store, common.pair[0], common.pair[1], &params, &grid, &common.out)?;
            eprintln!("run {}", run_dir.display());
            print!("{}", sweep_json(&report)?);
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| io_error(&spec, e))?;
            let spec: SceneSpec = serde_json::from_str(&text)?;
            let truth = export_scene(&spec, &out)?;
            println!("{}", serde_json::to_string_pretty(&truth)?);
        }
        Command::Ingest { video, out } => {
            let store = ingest_frames(&video, &out)?;
            let (width, height) = store.dimensions();
            let summary = serde_json::json!({
                "frames_dir": store.dir(),
                "frame_count": store.frame_count(),
                "width": width,
                "height": height,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            let mut source = std::error::Error::source(&e);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            match e.kind() {
                ErrorKind::Data => ExitCode::from(3),
                ErrorKind::Analysis => ExitCode::from(4),
            }
        }
    }
}
