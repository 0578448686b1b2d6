//! `memsurf`: generate data, train features, track, run protocols, benchmark.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use memsurf::aer::write_recording;
use memsurf::pipeline::bench::bench_throughput;
use memsurf::pipeline::frames::build_frames;
use memsurf::pipeline::{fit_model, run, DatasetConfig, Experiment, ExperimentConfig, PipelineError, ProtocolConfig};
use memsurf::pool::{write_frames_csv, PoolMode};
use memsurf::skan::SkanNetwork;
use memsurf::surface::{write_snapshot_csv, MemorySurface};
use memsurf::synth::generate_suite;
use memsurf::tracker::{track, write_track_csv};
use memsurf::SurfaceKind;

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser)]
#[command(name = "memsurf", version, about = "Event-camera memory surfaces: tracking, features, classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML); defaults apply to anything left out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set trials=5 --set surface.kinds='["eis"]'`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic suite as `<out>/<class>/<id>.bin` plus manifest.json.
    Synth {
        #[command(flatten)]
        global: Global,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train (or draw at random) a feature network and write it as JSON.
    TrainFeatures {
        #[command(flatten)]
        global: Global,
        #[arg(long, default_value = "eis")]
        surface: SurfaceKind,
        #[arg(long)]
        out: PathBuf,
        /// Random widths with calibrated thresholds instead of training.
        #[arg(long)]
        random: bool,
        /// Also write the kernel-width matrices as CSV.
        #[arg(long)]
        widths: Option<PathBuf>,
    },
    /// Track every recording (or one) and write the trajectory CSV.
    Track {
        #[command(flatten)]
        global: Global,
        #[arg(long, default_value = "eis")]
        surface: SurfaceKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        recording: Option<String>,
    },
    /// Run a protocol: full, frame-balanced, velocity-segregated, feature-sweep.
    Run {
        #[command(flatten)]
        global: Global,
        protocol: String,
        /// Output directory for report.json, trials.csv and sweep.csv.
        #[arg(long)]
        out: PathBuf,
        /// Fit the first reported arm on all data and save the model.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Measure streaming throughput.
    Bench {
        #[command(flatten)]
        global: Global,
        #[arg(long, default_value = "eis")]
        surface: SurfaceKind,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a surface snapshot or a recording's pooled frame matrix.
    ExportSurface {
        #[command(flatten)]
        global: Global,
        #[arg(long, default_value = "eis")]
        surface: SurfaceKind,
        #[arg(long)]
        recording: String,
        /// Snapshot after all ON events up to this time (us); default: the end.
        #[arg(long)]
        at: Option<u64>,
        /// Snapshot CSV, one row per sensor row.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frame matrix CSV of the pooled frames.
        #[arg(long)]
        frames: Option<PathBuf>,
        /// Feature network for F frames (JSON from train-features).
        #[arg(long)]
        network: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("memsurf: {e}");
            ExitCode::from(if e.is_config() { EXIT_CONFIG } else { EXIT_DATA })
        }
    }
}

fn load_config(global: &Global) -> Result<ExperimentConfig, PipelineError> {
    let base = match &global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    base.with_overrides(&global.overrides)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn recording_index(exp: &Experiment, id: &str) -> Result<usize, PipelineError> {
    exp.data
        .ids
        .iter()
        .position(|r| r == id)
        .ok_or_else(|| PipelineError::Data(format!("no recording with id '{id}'")))
}

impl Command {
    fn global(&self) -> &Global {
        match self {
            Command::Synth { global, .. }
            | Command::TrainFeatures { global, .. }
            | Command::Track { global, .. }
            | Command::Run { global, .. }
            | Command::Bench { global, .. }
            | Command::ExportSurface { global, .. } => global,
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), PipelineError> {
    let config = load_config(cli.command.global())?;
    match &cli.command {
        Command::Synth { out, .. } => synth(&config, out),
        Command::TrainFeatures { surface, out, random, widths, .. } => {
            let exp = Experiment::prepare(config)?;
            let skan = exp.config.features.skan;
            let net = if *random { exp.random_network(*surface, skan)? } else { exp.train_network(*surface, skan)? };
            write_file(out, |w| w.write_all(net.to_json().as_bytes()))?;
            if let Some(path) = widths {
                write_file(path, |w| {
                    writeln!(w, "neuron,row,{}", (0..skan.side).map(|c| format!("c{c}")).collect::<Vec<_>>().join(","))?;
                    for k in 0..net.neurons() {
                        for (r, row) in net.width_matrix(k).iter().enumerate() {
                            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                            writeln!(w, "{k},{r},{}", cells.join(","))?;
                        }
                    }
                    Ok(())
                })?;
            }
            Ok(())
        }
        Command::Track { surface, out, recording, .. } => {
            let exp = Experiment::prepare(config)?;
            let selected: Vec<usize> = match recording {
                Some(id) => vec![recording_index(&exp, id)?],
                None => (0..exp.data.len()).collect(),
            };
            let sc = exp.surface_config(*surface);
            let mut tracks = Vec::with_capacity(selected.len());
            for &r in &selected {
                let t = track(&exp.data.recordings[r], sc, &exp.config.tracker).map_err(PipelineError::from)?;
                tracks.push((r, t));
            }
            write_file(out, |w| {
                for (n, (r, t)) in tracks.iter().enumerate() {
                    write_track_csv(w, &exp.data.ids[*r], t, n == 0)?;
                }
                Ok(())
            })
        }
        Command::Run { protocol, out, model_out, .. } => {
            let mut config = config;
            let wanted = ProtocolConfig::from_name(protocol)?;
            if wanted.name() != config.protocol.name() {
                config.protocol = wanted;
                config.validate()?;
            }
            let exp = Experiment::prepare(config)?;
            let report = run(&exp)?;
            fs::create_dir_all(out).map_err(io_err(out))?;
            write_file(&out.join("report.json"), |w| w.write_all(report.to_json().as_bytes()))?;
            write_file(&out.join("trials.csv"), |w| report.write_trials_csv(w))?;
            if !report.sweep.is_empty() {
                write_file(&out.join("sweep.csv"), |w| report.write_sweep_csv(w))?;
            }
            for a in &report.arms {
                info!(
                    "{} {} n={:?}: frame {:.4} ± {:.4}, drop {:.4} ± {:.4}",
                    a.surface.name(),
                    a.arm.name(),
                    a.frames_per_recording,
                    a.summary.mean_frame,
                    a.summary.std_frame,
                    a.summary.mean_drop,
                    a.summary.std_drop
                );
            }
            if let Some(path) = model_out {
                let first = report.arms.first().ok_or_else(|| PipelineError::Data("report has no arms".into()))?;
                let network = if first.arm.uses_features() {
                    exp.network(first.surface, exp.config.features.skan)?
                } else {
                    None
                };
                let frames = exp.build_all(first.surface, network.as_ref())?;
                let model = fit_model(&exp, &frames, first.arm, first.lambda_rel)?;
                write_file(path, |w| w.write_all(model.to_json().as_bytes()))?;
            }
            Ok(())
        }
        Command::Bench { surface, repeats, out, .. } => {
            let exp = Experiment::prepare(config)?;
            let net = exp.network(*surface, exp.config.features.skan)?.map_or_else(
                || SkanNetwork::new(exp.config.features.skan).map(SkanNetwork::frozen),
                Ok,
            )?;
            let result = bench_throughput(&exp.data.recordings, exp.surface_config(*surface), &exp.config.tracker, &net, *repeats)?;
            let json = serde_json::to_string_pretty(&result).expect("benchmark serializes");
            println!("{json}");
            if let Some(path) = out {
                write_file(path, |w| w.write_all(json.as_bytes()))?;
            }
            Ok(())
        }
        Command::ExportSurface { surface, recording, at, out, frames, network, .. } => {
            if out.is_none() && frames.is_none() {
                return Err(PipelineError::Config("export-surface needs --out and/or --frames".into()));
            }
            let exp = Experiment::prepare(config)?;
            let r = recording_index(&exp, recording)?;
            let rec = &exp.data.recordings[r];
            if let Some(path) = out {
                let sc = exp.surface_config(*surface);
                let mut s = MemorySurface::new(sc)?;
                let limit = at.unwrap_or(u64::MAX);
                let on = rec.on_events();
                let mut last = None;
                for e in on.events.iter().take_while(|e| e.t <= limit) {
                    s.absorb(e)?;
                    last = Some(e);
                }
                let now = match last {
                    Some(e) => sc.basis.instant(at.unwrap_or(e.t).max(e.t), e.i),
                    None => 0,
                };
                let grid = s.snapshot(now)?;
                write_file(path, |w| write_snapshot_csv(&grid, w))?;
            }
            if let Some(path) = frames {
                let net = match network {
                    Some(p) => {
                        let text = fs::read_to_string(p).map_err(io_err(p))?;
                        Some(SkanNetwork::from_json(&text)?.frozen())
                    }
                    None => None,
                };
                let rf = build_frames(rec, &exp.frame_settings(*surface), net.as_ref())?;
                let mode = if net.is_some() { PoolMode::F } else { PoolMode::E };
                let ff = rf.feature_frames(&exp.data.ids[r], exp.data.labels[r], mode);
                write_file(path, |w| write_frames_csv(w, &ff))?;
            }
            Ok(())
        }
    }
}

fn synth(config: &ExperimentConfig, out: &Path) -> Result<(), PipelineError> {
    let DatasetConfig::Synth { drops_per_class, with_flips, seed, sampler } = &config.dataset else {
        return Err(PipelineError::Config("synth needs dataset.source = \"synth\"".into()));
    };
    let suite = generate_suite(sampler, *drops_per_class, *with_flips, *seed)
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    for (rec, entry) in suite.recordings.iter().zip(&suite.manifest.entries) {
        let path = out.join(format!("{}.bin", entry.recording_id));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        write_recording(&path, rec)?;
    }
    let manifest = serde_json::to_string_pretty(&suite.manifest).expect("manifest serializes");
    write_file(&out.join("manifest.json"), |w| w.write_all(manifest.as_bytes()))?;
    info!("wrote {} recordings to {}", suite.recordings.len(), out.display());
    Ok(())
}

