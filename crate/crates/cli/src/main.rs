//! Command-line front end: scenario generation, single-cluster fitting, full
//! tracking runs, classifier training/scoring, and benchmark timing.
//!
//! Exit codes: 0 success, 2 bad input, 3 runtime failure. Errors print as a
//! JSON object on stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use boxtrack_core::classifier::{bin, canonicalize, score, train, FeatureGrid, LinearClassifier};
use boxtrack_core::config::RunConfig;
use boxtrack_core::covariance::{fallback_covariance, pose_covariance, Measurement};
use boxtrack_core::error::CoreError;
use boxtrack_core::filter::build_filter;
use boxtrack_core::frame_io::write_frames;
use boxtrack_core::optimizer::{fit_with_sensor, initialize_state};
use boxtrack_core::scan::{cluster_points, remove_ground, viewing_angle, Frame};
use boxtrack_core::synth::{render_sequence, ObjectKind, Scenario};
use boxtrack_core::timing::bench_frames;
use boxtrack_core::tracker::{Tracker, TrackRecord};

#[derive(Parser)]
#[command(name = "boxtrack", version, about = "Vehicle pose estimation and tracking from LADAR clusters")]
struct Cli {
    /// JSON config file; missing keys fall back to defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed override; echoed in output metadata.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Write the effective config to this path before running.
    #[arg(long, global = true)]
    dump_config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scenario file into a labeled frame sequence.
    Generate(GenerateArgs),
    /// Fit one cluster of one frame and print the result as JSON.
    Fit(FitArgs),
    /// Track a frame sequence, writing per-frame track states.
    Track(TrackArgs),
    /// Train the vehicle/clutter classifier from labeled frames.
    TrainClf(TrainArgs),
    /// Score tracked objects with a trained classifier.
    Discriminate(DiscriminateArgs),
    /// Time the measurement pipeline over a frame sequence.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    /// Output frame file (line-delimited JSON).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Frame file.
    #[arg(long)]
    frames: PathBuf,
    /// Frame to fit.
    #[arg(long, default_value_t = 0)]
    frame_id: u64,
    /// Cluster index within the frame (ordering: first point index).
    #[arg(long, default_value_t = 0)]
    cluster: usize,
    /// Optional output path; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump the fitted filter surface as a CSV grid for plotting.
    #[arg(long)]
    dump_filter_csv: Option<PathBuf>,
    /// Raster step for the filter dump (m).
    #[arg(long, default_value_t = 0.05)]
    dump_step: f64,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    frames: PathBuf,
    /// Output: one JSON object per frame.
    #[arg(long)]
    out: PathBuf,
    /// Optional CSV trace (frame, id, x, y, heading, speed, l, w).
    #[arg(long)]
    trace_csv: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled frame file(s) produced by `generate`.
    #[arg(long, required = true)]
    frames: Vec<PathBuf>,
    /// Scenario file(s) declaring which object ids are vehicles.
    #[arg(long, required = true)]
    scenario: Vec<PathBuf>,
    /// Output classifier JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiscriminateArgs {
    #[arg(long)]
    frames: PathBuf,
    /// Trained classifier JSON.
    #[arg(long)]
    clf: PathBuf,
    /// Output: one JSON object per track.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    frames: PathBuf,
    /// Minimum number of timed fits.
    #[arg(long, default_value_t = 1000)]
    min_fits: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (code, kind) = match err.downcast_ref::<BadInputMarker>() {
                Some(_) => (2u8, "bad_input"),
                None => (3u8, "runtime"),
            };
            let obj = serde_json::json!({
                "error": { "kind": kind, "message": format!("{err:#}") }
            });
            eprintln!("{obj}");
            ExitCode::from(code)
        }
    }
}

#[derive(Debug)]
struct BadInputMarker(String);

impl std::fmt::Display for BadInputMarker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for BadInputMarker {}

fn bad_input(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(BadInputMarker(msg.into()))
}

fn load_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| bad_input(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_json(&text)
                .map_err(|e| bad_input(format!("invalid config {}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(path) = &cli.dump_config {
        std::fs::write(path, cfg.to_json_pretty()?)?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Generate(args) => cmd_generate(args, &cfg, cli.seed),
        Command::Fit(args) => cmd_fit(args, &cfg),
        Command::Track(args) => cmd_track(args, &cfg),
        Command::TrainClf(args) => cmd_train_clf(args, &cfg),
        Command::Discriminate(args) => cmd_discriminate(args, &cfg),
        Command::Bench(args) => cmd_bench(args, &cfg),
    }
}

fn read_frames(path: &Path) -> anyhow::Result<Vec<Frame>> {
    boxtrack_core::frame_io::read_frames(path)
        .map_err(|e| bad_input(format!("cannot load frames {}: {e}", path.display())))
}

fn read_scenario(path: &Path, seed_override: u64, use_override: bool) -> anyhow::Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| bad_input(format!("cannot read scenario {}: {e}", path.display())))?;
    let mut scenario: Scenario = serde_json::from_str(&text)
        .map_err(|e| bad_input(format!("invalid scenario {}: {e}", path.display())))?;
    if use_override {
        scenario.seed = seed_override;
    }
    Ok(scenario)
}

fn cmd_generate(args: &GenerateArgs, cfg: &RunConfig, seed_flag: Option<u64>) -> anyhow::Result<()> {
    let _ = cfg;
    // The scenario's own seed wins unless --seed was given explicitly.
    let scenario = read_scenario(&args.scenario, seed_flag.unwrap_or_default(), seed_flag.is_some())?;
    let frames = render_sequence(&scenario)?;
    write_frames(&args.out, &frames)?;
    println!(
        "{}",
        serde_json::json!({
            "frames": frames.len(),
            "seed": scenario.seed,
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn frame_clusters(frame: &Frame, cfg: &RunConfig) -> anyhow::Result<Vec<boxtrack_core::scan::Cluster>> {
    let pts = remove_ground(frame, cfg.scan.ground_height, cfg.scan.ground_margin);
    Ok(cluster_points(&pts, cfg.scan.cluster_gap, cfg.scan.sigma)?)
}

fn cmd_fit(args: &FitArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let frames = read_frames(&args.frames)?;
    let frame = frames
        .iter()
        .find(|f| f.frame_id == args.frame_id)
        .ok_or_else(|| bad_input(format!("no frame with id {}", args.frame_id)))?;
    let clusters = frame_clusters(frame, cfg)?;
    let cluster = clusters
        .get(args.cluster)
        .ok_or_else(|| bad_input(format!("frame has {} clusters", clusters.len())))?;

    let phi = viewing_angle(cluster, &frame.sensor);
    let init = initialize_state(cluster, phi, &cfg.optimizer.size_bounds)?;
    let res = fit_with_sensor(cluster, &init, &frame.sensor, &cfg.optimizer, &cfg.filter)?;
    let covariance = match pose_covariance(&res.eval, cfg.sigma_p) {
        Ok(c) => c,
        Err(CoreError::SingularHessian { .. }) => fallback_covariance(),
        Err(e) => return Err(e.into()),
    };

    if let Some(path) = &args.dump_filter_csv {
        let spec = build_filter(&res.state, phi, &cfg.filter)?;
        dump_filter_csv(path, &spec, args.dump_step)?;
    }

    let cov_row_major: Vec<f64> = (0..3)
        .flat_map(|i| (0..3).map(move |j| covariance[(i, j)]))
        .collect();
    let out = serde_json::json!({
        "state": res.state,
        "score": res.score,
        "iterations": res.iterations,
        "converged": res.converged,
        "covariance": cov_row_major,
        "points": cluster.len(),
        "seed": cfg.seed,
    });
    emit(args.out.as_deref(), &out)
}

fn dump_filter_csv(path: &Path, spec: &boxtrack_core::filter::FilterSpec, step: f64) -> anyhow::Result<()> {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for r in &spec.rects {
        x0 = x0.min(r.xmin);
        x1 = x1.max(r.xmax);
        y0 = y0.min(r.ymin);
        y1 = y1.max(r.ymax);
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let nx = ((x1 - x0) / step).ceil() as usize + 1;
    let ny = ((y1 - y0) / step).ceil() as usize + 1;
    for j in 0..ny {
        let y = y0 + j as f64 * step;
        let row: Vec<String> = (0..nx)
            .map(|i| format!("{:.6}", spec.alpha * spec.value_at(x0 + i as f64 * step, y)))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn cmd_track(args: &TrackArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let frames = read_frames(&args.frames)?;
    if frames.is_empty() {
        return Err(bad_input("frame file is empty"));
    }
    let mut tracker = Tracker::new(cfg);
    let mut out = std::io::BufWriter::new(std::fs::File::create(&args.out)?);
    let mut trace: Option<std::io::BufWriter<std::fs::File>> = match &args.trace_csv {
        Some(p) => {
            let mut w = std::io::BufWriter::new(std::fs::File::create(p)?);
            writeln!(w, "frame_id,id,x,y,heading,speed,yaw_rate,l,w,status")?;
            Some(w)
        }
        None => None,
    };

    writeln!(out, "{}", serde_json::json!({"meta": {"seed": cfg.seed}}))?;
    for frame in &frames {
        tracker.step(frame)?;
        let records: Vec<TrackRecord> = tracker.records();
        let line = serde_json::json!({
            "frame_id": frame.frame_id,
            "tracks": records,
        });
        writeln!(out, "{line}")?;
        if let Some(w) = trace.as_mut() {
            for r in &records {
                writeln!(
                    w,
                    "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.3},{:.3},{:?}",
                    frame.frame_id, r.id, r.x, r.y, r.heading, r.speed, r.yaw_rate, r.l, r.w, r.status
                )?;
            }
        }
    }
    Ok(())
}

/// Per-track canonical feature grids and the majority label of the points
/// backing each observation.
type TrackGrids = Vec<(u64, Vec<FeatureGrid>, Vec<i64>)>;

/// Runs the tracker over labeled frames, collecting per-track canonical
/// feature grids (one per frame observation).
fn collect_track_grids(frames: &[Frame], cfg: &RunConfig) -> anyhow::Result<TrackGrids> {
    let mut tracker = Tracker::new(cfg);
    let mut per_track: std::collections::BTreeMap<u64, (Vec<FeatureGrid>, Vec<i64>)> =
        std::collections::BTreeMap::new();
    for frame in frames {
        let output = tracker.step(frame)?;
        for (track_id, meas) in &output.measurements {
            // Points belonging to this measurement: re-derive by proximity
            // to the fitted rectangle (points in the inflated footprint).
            let pts = points_in_box(frame, meas, cfg);
            if pts.is_empty() {
                continue;
            }
            let cloud = canonicalize(&pts, meas, &frame.sensor, cfg.scan.ground_height)?;
            let grid = bin(&cloud, &cfg.grid);
            let entry = per_track.entry(*track_id).or_default();
            entry.0.push(grid);
            if let Some(labels) = &frame.labels {
                // Majority label of the points inside the box.
                let mut counts: std::collections::BTreeMap<i64, usize> =
                    std::collections::BTreeMap::new();
                for p in &pts {
                    if let Some(idx) = frame
                        .points
                        .iter()
                        .position(|q| q.x == p.x && q.y == p.y && q.z == p.z)
                    {
                        *counts.entry(labels[idx]).or_default() += 1;
                    }
                }
                if let Some((&label, _)) = counts.iter().max_by_key(|(_, &n)| n) {
                    entry.1.push(label);
                }
            }
        }
    }
    Ok(per_track
        .into_iter()
        .map(|(id, (grids, labels))| (id, grids, labels))
        .collect())
}

fn points_in_box(
    frame: &Frame,
    meas: &Measurement,
    cfg: &RunConfig,
) -> Vec<boxtrack_core::scan::ScanPoint> {
    let state = &meas.state;
    let (s, c) = boxtrack_core::angles::sin_cos(state.t_theta);
    frame
        .points
        .iter()
        .filter(|p| {
            if p.z - cfg.scan.ground_height <= cfg.scan.ground_margin {
                return false;
            }
            let dx = p.x - state.tx;
            let dy = p.y - state.ty;
            let lx = c * dx + s * dy;
            let ly = -s * dx + c * dy;
            lx.abs() <= state.l / 2.0 + 0.5 && ly.abs() <= state.w / 2.0 + 0.5
        })
        .copied()
        .collect()
}

fn cmd_train_clf(args: &TrainArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let mut vehicle_ids = std::collections::BTreeSet::new();
    for path in &args.scenario {
        let scenario = read_scenario(path, 0, false)?;
        for obj in &scenario.objects {
            if obj.kind == ObjectKind::Vehicle {
                vehicle_ids.insert(obj.id);
            }
        }
    }

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for path in &args.frames {
        let frames = read_frames(path)?;
        for (_, grids, labels) in collect_track_grids(&frames, cfg)? {
            for (grid, label) in grids.into_iter().zip(labels) {
                if label >= 0 && vehicle_ids.contains(&label) {
                    positives.push(grid);
                } else if label >= 0 {
                    negatives.push(grid);
                }
            }
        }
    }
    if positives.is_empty() || negatives.is_empty() {
        return Err(bad_input(format!(
            "need both classes: {} vehicle grids, {} clutter grids",
            positives.len(),
            negatives.len()
        )));
    }
    let clf = train(&positives, &negatives, &cfg.train)?;
    std::fs::write(&args.out, serde_json::to_string_pretty(&clf)?)?;
    println!(
        "{}",
        serde_json::json!({
            "positives": positives.len(),
            "negatives": negatives.len(),
            "out": args.out.display().to_string(),
            "seed": cfg.seed,
        })
    );
    Ok(())
}

fn cmd_discriminate(args: &DiscriminateArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let frames = read_frames(&args.frames)?;
    let clf: LinearClassifier = serde_json::from_str(
        &std::fs::read_to_string(&args.clf)
            .map_err(|e| bad_input(format!("cannot read classifier: {e}")))?,
    )
    .map_err(|e| bad_input(format!("invalid classifier: {e}")))?;

    let mut lines = Vec::new();
    for (id, grids, _) in collect_track_grids(&frames, cfg)? {
        if grids.is_empty() {
            continue;
        }
        let mut total = 0.0;
        for g in &grids {
            total += score(g, &clf)?;
        }
        let mean = total / grids.len() as f64;
        lines.push(serde_json::json!({
            "track_id": id,
            "frames_observed": grids.len(),
            "mean_score": mean,
            "vehicle": mean > 0.0,
        }));
    }
    let text = lines
        .iter()
        .map(|l| l.to_string())
        .collect::<Vec<_>>()
        .join("\n");
    match &args.out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_bench(args: &BenchArgs, cfg: &RunConfig) -> anyhow::Result<()> {
    let frames = read_frames(&args.frames)?;
    let report = bench_frames(&frames, cfg, args.min_fits)?;
    let mut value = serde_json::to_value(&report)?;
    if let Some(obj) = value.as_object_mut() {
        obj.insert("seed".into(), serde_json::json!(cfg.seed));
    }
    emit(args.out.as_deref(), &value)
}

fn emit(path: Option<&Path>, value: &serde_json::Value) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}
