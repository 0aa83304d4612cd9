use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result, bail};
use clap::{Parser, Subcommand, ValueEnum};

use pillartrack::backbone::{BackboneConfig, STAGES};
use pillartrack::dataset::{ingest_sequence, write_manifest, write_sequence};
use pillartrack::eval::{ope_report, read_frame_results, write_report_csv, write_report_json};
use pillartrack::flops::{CountingConvention, ablation, marginal_costs, model_flops};
use pillartrack::geometry::transform_cloud;
use pillartrack::harness::{RunConfig, run_sequences, write_track_rows};
use pillartrack::kitti::{Calibration, parse_tracking_labels, track_boxes};
use pillartrack::pepfe::{Perturbation, PyramidSpec, encode_cloud};
use pillartrack::pillar::GridSpec;
use pillartrack::synth::{SynthParams, car_like_cloud, synth_sequence};

#[derive(Parser)]
#[command(name = "pillartrack", version, about = "Pillar-based LiDAR single object tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track one or more sequences and write per-frame results as CSV.
    Track {
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON-Lines manifest; repeat for several sequences.
        #[arg(long, required = true)]
        manifest: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score per-frame results into a Success/Precision report.
    Eval {
        #[arg(long)]
        results: PathBuf,
        /// JSON report; a CSV with the same rows is written next to it.
        #[arg(long)]
        report: PathBuf,
    },
    /// Generate a synthetic sequence directory.
    Synth {
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the depth-ablation GFLOPs table as CSV.
    Flops {
        /// Reference depths the delta column is measured against.
        #[arg(long, value_delimiter = ',', default_value = "3,4,6,3")]
        depths: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Preset::PvtV2B2)]
        preset: Preset,
        #[arg(long, default_value_t = 128)]
        resolution: usize,
    },
    /// Per-channel feature histograms of plain and pyramid-encoded pillars.
    Encode {
        /// Use the built-in car-like cloud and perturbations.
        #[arg(long)]
        demo: bool,
        #[arg(long, default_value_t = 4000)]
        points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        bins: usize,
    },
    /// Convert one KITTI tracking track into a manifest.
    ConvertKitti {
        #[arg(long)]
        velodyne: PathBuf,
        #[arg(long)]
        label: PathBuf,
        #[arg(long)]
        calib: PathBuf,
        #[arg(long)]
        track_id: i64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Stage widths with mlp ratios [8, 8, 4, 8].
    Default,
    /// Stage widths with mlp ratios [8, 8, 4, 4].
    PvtV2B2,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<pillartrack::Error>() {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Track {
            config,
            manifest,
            out,
        } => track(config.as_deref(), &manifest, &out),
        Command::Eval { results, report } => eval(&results, &report),
        Command::Synth { params, out } => synth(params.as_deref(), &out),
        Command::Flops {
            depths,
            preset,
            resolution,
        } => flops(&depths, preset, resolution),
        Command::Encode {
            demo,
            points,
            seed,
            bins,
        } => {
            if !demo {
                bail!("only --demo is supported");
            }
            encode_demo(points, seed, bins)
        }
        Command::ConvertKitti {
            velodyne,
            label,
            calib,
            track_id,
            out,
        } => convert_kitti(&velodyne, &label, &calib, track_id, &out),
    }
}

fn track(config: Option<&Path>, manifests: &[PathBuf], out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let mut seqs = manifests
        .iter()
        .map(ingest_sequence)
        .collect::<pillartrack::Result<Vec<_>>>()?;
    for seq in &mut seqs {
        seq.reflectance_max = cfg.grid.reflectance_max;
    }
    let mut runs = Vec::new();
    for seq in &seqs {
        let spec = cfg.tracker_spec(&seq.category)?;
        runs.extend(run_sequences(std::slice::from_ref(seq), &spec)?);
    }
    write_track_rows(out, &runs)?;
    let frames: usize = runs.iter().map(|r| r.rows.len()).sum();
    eprintln!("tracked {} sequence(s), {frames} scored frame(s)", seqs.len());
    Ok(())
}

fn eval(results: &Path, report: &Path) -> Result<()> {
    let rows = read_frame_results(results)?;
    let summary = ope_report(&rows)?;
    write_report_json(report, &summary)?;
    write_report_csv(report.with_extension("csv"), &summary)?;
    for r in summary.rows() {
        println!("{:<14} {:>6} {:>7.2} {:>7.2}", r.category, r.frames, r.success, r.precision);
    }
    Ok(())
}

fn synth(params: Option<&Path>, out: &Path) -> Result<()> {
    let p: SynthParams = match params {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).map_err(|e| pillartrack::Error::Config(e.to_string()))?
        }
        None => SynthParams::default(),
    };
    let seq = synth_sequence(&p)?;
    let manifest = write_sequence(&seq, out)?;
    eprintln!("wrote {} frames to {}", seq.len(), manifest.display());
    Ok(())
}

fn flops(depths: &[usize], preset: Preset, resolution: usize) -> Result<()> {
    let reference: [usize; STAGES] = depths.try_into().context("--depths needs four values")?;
    let base = match preset {
        Preset::Default => BackboneConfig::default(),
        Preset::PvtV2B2 => BackboneConfig::pvt_v2_b2(),
    };
    let conv = CountingConvention {
        resolution,
        ..Default::default()
    };
    let rows = ablation(&base, &conv, reference)?;
    let reference_cfg = base.with_depths(reference);
    let marginal = marginal_costs(&reference_cfg, &conv)?;
    eprintln!("# {}", conv.descriptor());
    eprintln!(
        "# reference {reference:?}: {:.3} GFLOPs; per-block cost by stage {:?}",
        model_flops(&reference_cfg, &conv)?.gflops,
        marginal.map(|m| (m * 1e3).round() / 1e3)
    );
    let mut w = csv::Writer::from_writer(io::stdout());
    w.write_record(["depths", "reported_gflops", "gflops", "delta_gflops"])?;
    for r in rows {
        let d = r.depths.map(|v| v.to_string()).join(",");
        w.write_record([
            format!("[{d}]"),
            format!("{:.2}", r.reported),
            format!("{:.3}", r.report.gflops),
            format!("{:+.3}", r.delta),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn encode_demo(points: usize, seed: u64, bins: usize) -> Result<()> {
    if bins == 0 {
        bail!("--bins must be positive");
    }
    let grid = GridSpec::search_default();
    let spec = PyramidSpec::default();
    let cloud = car_like_cloud(points, seed);
    let mut variants = vec![("original", encode_cloud(&cloud, &grid, &spec)?)];
    for p in Perturbation::ALL {
        let moved = transform_cloud(&cloud, &p.transform(), None);
        variants.push((p.name(), encode_cloud(&moved, &grid, &spec)?));
    }
    let mut w = csv::Writer::from_writer(io::stdout());
    w.write_record(["encoder", "variant", "channel", "bin_lo", "bin_hi", "count"])?;
    for encoder in ["pfe", "pepfe"] {
        let rows = |e: &pillartrack::pepfe::EncodedCloud| {
            if encoder == "pfe" { e.pfe.clone() } else { e.pepfe.clone() }
        };
        let width = rows(&variants[0].1).first().map_or(0, Vec::len);
        for c in 0..width {
            let values: Vec<Vec<f64>> = variants
                .iter()
                .map(|(_, e)| rows(e).iter().map(|r| r[c]).collect())
                .collect();
            let lo = values.iter().flatten().fold(f64::INFINITY, |m, &v| m.min(v));
            let hi = values.iter().flatten().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let span = if hi > lo { hi - lo } else { 1.0 };
            for ((name, _), vals) in variants.iter().zip(&values) {
                let mut counts = vec![0usize; bins];
                for v in vals {
                    let b = (((v - lo) / span) * bins as f64) as usize;
                    counts[b.min(bins - 1)] += 1;
                }
                for (b, n) in counts.iter().enumerate() {
                    w.write_record([
                        encoder.to_string(),
                        name.to_string(),
                        c.to_string(),
                        format!("{:.6}", lo + span * b as f64 / bins as f64),
                        format!("{:.6}", lo + span * (b + 1) as f64 / bins as f64),
                        n.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    io::stdout().flush()?;
    Ok(())
}

fn convert_kitti(velodyne: &Path, label: &Path, calib: &Path, track_id: i64, out: &Path) -> Result<()> {
    let calib = Calibration::load(calib)?;
    let text = fs::read_to_string(label).with_context(|| format!("reading {}", label.display()))?;
    let boxes = track_boxes(&parse_tracking_labels(&text)?, track_id, &calib)?;
    if boxes.is_empty() {
        return Err(pillartrack::Error::EmptySequence).context(format!("track {track_id} has no labels"));
    }
    let velodyne = fs::canonicalize(velodyne)
        .with_context(|| format!("velodyne directory {}", velodyne.display()))?;
    let entries: Vec<_> = boxes
        .into_iter()
        .map(|(frame, category, b)| {
            let cloud = velodyne.join(format!("{frame:06}.bin"));
            (cloud.to_string_lossy().into_owned(), b, category)
        })
        .collect();
    write_manifest(out, &entries)?;
    eprintln!("wrote {} frames to {}", entries.len(), out.display());
    Ok(())
}
