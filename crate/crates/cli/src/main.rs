//! `capmap`: batch front end for cap parameterization, cap harmonics,
//! synthetic surfaces, distortion metrics and remeshing.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use capmap::adaptive::{
    cap_map_distortion, parameterize_closed, parameterize_open, CapMap, EnergyMeasure, PipelineOptions, PipelineReport,
};
use capmap::harmonics::{ah_fit, ah_reconstruct, aspect_ratio, cap_samples, AHModel, AspectRatio};
use capmap::mesh::{load_mesh, load_mesh_parts, save_mesh, save_mesh_with_scalar};
use capmap::metrics::{face_area_deviation, surface_distance, DistortionReport, Image};
use capmap::omt::omt_log_csv;
use capmap::remesh::{cap_uniform_mesh, latlong_cap_mesh, pullback, PullbackSummary};
use capmap::{shapes, CapError, TriangleMesh, Vec3};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "capmap", version, about = "Adaptive area-preserving spherical-cap parameterization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parameterize a simply connected open surface onto a spherical cap.
    ParamOpen(ParamArgs),
    /// Parameterize a genus-0 closed surface onto a spherical cap.
    ParamClosed(ParamArgs),
    /// Fit cap-harmonic coefficients to a parameterized surface.
    AhFit(AhFitArgs),
    /// Reconstruct a surface from cap-harmonic coefficients.
    AhRecon(AhReconArgs),
    /// Generate a synthetic test surface.
    Gen(GenArgs),
    /// Distortion of a parameterization or of a mesh with the same connectivity.
    Metrics(MetricsArgs),
    /// Remesh a parameterized surface through a regular cap mesh.
    Remesh(RemeshArgs),
}

#[derive(Args)]
struct ParamArgs {
    /// Input surface (.obj, .off or .ply).
    input: PathBuf,
    /// Output mesh with every vertex on the cap.
    output: PathBuf,
    /// JSON report.
    report: PathBuf,
    /// JSON file of pipeline options; flags given on the command line win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the full parameterization (cap and planar positions) as JSON.
    #[arg(long)]
    map: Option<PathBuf>,
    /// CSV log of the final transport solve.
    #[arg(long)]
    omt_log: Option<PathBuf>,
    /// Beltrami scale of the authalic map (closed inputs only).
    #[arg(long)]
    lambda: Option<f64>,
    /// Radius search interval, as `lo,hi`.
    #[arg(long, value_parser = parse_pair)]
    radius_bounds: Option<[f64; 2]>,
    /// Absolute tolerance of the radius search.
    #[arg(long)]
    radius_tol: Option<f64>,
    /// Transport tolerance while searching.
    #[arg(long)]
    search_tol: Option<f64>,
    /// Transport tolerance of the final solve.
    #[arg(long)]
    final_tol: Option<f64>,
    #[arg(long)]
    max_omt_iter: Option<usize>,
    /// Local passes allowed to undo folds left by the transport.
    #[arg(long)]
    untangle_passes: Option<usize>,
    /// Skip the search and use this radius.
    #[arg(long)]
    fixed_radius: Option<f64>,
    /// Direction turned to +Z before puncturing, as `x,y,z`.
    #[arg(long, value_parser = parse_triple)]
    axis: Option<[f64; 3]>,
    /// Puncture quad thresholds (closed inputs only).
    #[arg(long)]
    max_side_ratio: Option<f64>,
    #[arg(long)]
    max_diagonal_ratio: Option<f64>,
    /// Where the radius search measures conformal distortion.
    #[arg(long, value_enum)]
    energy_measure: Option<Measure>,
    /// Run once per lambda in `a:b:step`; outputs get a `.lambda<value>` suffix.
    #[arg(long, value_parser = parse_sweep)]
    sweep_lambda: Option<Sweep>,
}

#[derive(Clone)]
struct Sweep(Vec<f64>);

#[derive(Clone, Copy, ValueEnum)]
enum Measure {
    Planar,
    Cap,
}

#[derive(Args)]
struct AhFitArgs {
    /// Surface whose vertex coordinates are fitted; may contain degenerate faces.
    mesh: PathBuf,
    /// Parameterization JSON written by `param-* --map`.
    map: PathBuf,
    /// Output coefficient JSON.
    output: PathBuf,
    #[arg(long, short = 'n', default_value_t = 4)]
    order: usize,
    /// JSON summary with the residual, condition number and aspect ratio.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct AhReconArgs {
    /// Coefficient JSON written by `ah-fit`.
    model: PathBuf,
    /// Parameterization JSON giving the sample positions.
    map: PathBuf,
    /// Reconstructed mesh.
    output: PathBuf,
    /// Original surface (same connectivity as the map) for the residual.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// JSON with the residual against `--mesh`.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    shape: Shape,
    /// Output mesh (.obj, .off or .ply).
    output: PathBuf,
    /// Approximate vertex count.
    #[arg(long, default_value_t = 5000)]
    n: usize,
    /// Polar half-angle of caps, in radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    half_angle: f64,
    /// Z scale of the stretched cap.
    #[arg(long, default_value_t = 2.0)]
    stretch: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subdivision level of the icosphere.
    #[arg(long, default_value_t = 3)]
    level: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Cap,
    StretchedCap,
    BumpySphere,
    Blob,
    Icosphere,
}

#[derive(Args)]
struct MetricsArgs {
    /// Source surface.
    mesh: PathBuf,
    /// Parameterization JSON; image areas are spherical.
    #[arg(long, conflicts_with = "image", required_unless_present = "image")]
    map: Option<PathBuf>,
    /// Image mesh with the source connectivity; image areas are flat.
    #[arg(long)]
    image: Option<PathBuf>,
    /// JSON summary (stdout if absent).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-face CSV of d_area and the three d_angle values.
    #[arg(long)]
    faces_csv: Option<PathBuf>,
    /// Histogram CSVs, written as `<prefix>_area.csv` and `<prefix>_angle.csv`.
    #[arg(long)]
    histograms: Option<PathBuf>,
}

#[derive(Args)]
struct RemeshArgs {
    /// Original surface.
    mesh: PathBuf,
    /// Parameterization JSON.
    map: PathBuf,
    /// Remeshed surface.
    output: PathBuf,
    /// JSON report with d_face and d_surface.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Vertex count of the uniform cap mesh.
    #[arg(long, default_value_t = 5000)]
    count: usize,
    /// Use a latitude/longitude grid `n_theta,n_phi` instead; the output
    /// must be PLY and carries a `theta` vertex channel.
    #[arg(long, value_parser = parse_grid)]
    latlong: Option<(usize, usize)>,
    /// Fail if more than 1% of the points fall outside the parameterized region.
    #[arg(long)]
    strict: bool,
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<CapError> for Failure {
    fn from(e: CapError) -> Self {
        let code = match e.root() {
            CapError::Format { .. } | CapError::Argument(_) | CapError::Io(_) => 2,
            CapError::Topology(_) | CapError::DegenerateGeometry { .. } => 3,
            CapError::Flip { .. } => 5,
            CapError::IllPosed { .. } => 6,
            _ => 4,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type Run<T = ()> = std::result::Result<T, Failure>;

fn parse_floats(s: &str, sep: char, n: usize) -> Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split(sep)
        .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}")))
        .collect::<Result<_, _>>()?;
    if v.len() != n {
        return Err(format!("expected {n} values separated by '{sep}'"));
    }
    Ok(v)
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v = parse_floats(s, ',', 2)?;
    Ok([v[0], v[1]])
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let v = parse_floats(s, ',', 3)?;
    Ok([v[0], v[1], v[2]])
}

fn parse_grid(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected n_theta,n_phi")?;
    let p = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_sweep(s: &str) -> Result<Sweep, String> {
    let v = parse_floats(s, ':', 3)?;
    let (a, b, step) = (v[0], v[1], v[2]);
    if !(step > 0.0) || !(b >= a) {
        return Err("need a <= b and step > 0".into());
    }
    let n = ((b - a) / step + 1e-9).floor() as usize;
    Ok(Sweep((0..=n).map(|k| ((a + k as f64 * step) * 1e12).round() / 1e12).collect()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Run<T> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Run {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    write_text(path, &(text + "\n"))
}

fn write_text(path: &Path, text: &str) -> Run {
    std::fs::write(path, text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Run<TriangleMesh> {
    load_mesh(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })
}

/// Loads a mesh without rejecting degenerate faces; cap-harmonic
/// reconstructions of open surfaces collapse the rim to a point.
fn load_lenient(path: &Path) -> Run<TriangleMesh> {
    let (v, f) = load_mesh_parts(path).map_err(|e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    })?;
    Ok(TriangleMesh::new_unchecked(v, f))
}

fn options(args: &ParamArgs) -> Run<PipelineOptions> {
    let mut o: PipelineOptions = match &args.config {
        Some(p) => read_json(p)?,
        None => PipelineOptions::default(),
    };
    macro_rules! set {
        ($($field:ident),*) => {$(if let Some(v) = args.$field { o.$field = v; })*};
    }
    set!(
        lambda,
        radius_bounds,
        radius_tol,
        search_tol,
        final_tol,
        max_omt_iter,
        untangle_passes,
        max_side_ratio,
        max_diagonal_ratio
    );
    if args.fixed_radius.is_some() {
        o.fixed_radius = args.fixed_radius;
    }
    if args.axis.is_some() {
        o.axis = args.axis;
    }
    if let Some(m) = args.energy_measure {
        o.energy_measure = match m {
            Measure::Planar => EnergyMeasure::Planar,
            Measure::Cap => EnergyMeasure::Cap,
        };
    }
    Ok(o)
}

#[derive(Serialize)]
struct ParamOutput<'a> {
    options: &'a PipelineOptions,
    #[serde(flatten)]
    report: &'a PipelineReport,
}

#[derive(Serialize)]
struct SweepEntry {
    lambda: f64,
    r_star: Option<f64>,
    z_star: Option<f64>,
    mean_abs_d_area: Option<f64>,
    mean_abs_d_angle: Option<f64>,
    error: Option<String>,
}

fn with_suffix(path: &Path, lambda: f64) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let name = match path.extension().and_then(|s| s.to_str()) {
        Some(ext) => format!("{stem}.lambda{lambda:.4}.{ext}"),
        None => format!("{stem}.lambda{lambda:.4}"),
    };
    path.with_file_name(name)
}

fn param_once(
    mesh: &TriangleMesh,
    closed: bool,
    opts: &PipelineOptions,
    args: &ParamArgs,
    output: &Path,
    map: Option<&Path>,
) -> Run<PipelineReport> {
    let (cap, report) = if closed {
        parameterize_closed(mesh, opts)?
    } else {
        parameterize_open(mesh, opts)?
    };
    let out = TriangleMesh::new(cap.positions.clone(), mesh.faces().to_vec())?;
    save_mesh(output, &out)?;
    if let Some(p) = map {
        write_json(p, &cap)?;
    }
    if let Some(p) = &args.omt_log {
        write_text(p, &omt_log_csv(&report.omt_log))?;
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(report)
}

fn cmd_param(args: &ParamArgs, closed: bool) -> Run {
    let mesh = load(&args.input)?;
    let opts = options(args)?;
    let Some(Sweep(lambdas)) = &args.sweep_lambda else {
        let report = param_once(&mesh, closed, &opts, args, &args.output, args.map.as_deref())?;
        return write_json(
            &args.report,
            &ParamOutput {
                options: &opts,
                report: &report,
            },
        );
    };
    if !closed {
        return Err(usage("--sweep-lambda applies to param-closed only"));
    }
    let mut entries = Vec::new();
    for &lambda in lambdas {
        let o = PipelineOptions { lambda, ..opts.clone() };
        let map = args.map.as_deref().map(|p| with_suffix(p, lambda));
        let entry = match param_once(&mesh, true, &o, args, &with_suffix(&args.output, lambda), map.as_deref()) {
            Ok(r) => SweepEntry {
                lambda,
                r_star: Some(r.r_star),
                z_star: Some(r.z_star),
                mean_abs_d_area: Some(r.mean_abs_d_area),
                mean_abs_d_angle: Some(r.mean_abs_d_angle),
                error: None,
            },
            Err(f) => SweepEntry {
                lambda,
                r_star: None,
                z_star: None,
                mean_abs_d_area: None,
                mean_abs_d_angle: None,
                error: Some(f.message),
            },
        };
        entries.push(entry);
    }
    write_json(&args.report, &entries)
}

fn load_map(path: &Path, mesh: &TriangleMesh) -> Run<CapMap> {
    let cap: CapMap = read_json(path)?;
    if cap.positions.len() != mesh.num_vertices() {
        return Err(usage(format!(
            "{} has {} positions for a mesh of {} vertices",
            path.display(),
            cap.positions.len(),
            mesh.num_vertices()
        )));
    }
    Ok(cap)
}

#[derive(Serialize)]
struct FitSummary {
    order: usize,
    coefficients_per_coordinate: usize,
    rms: f64,
    condition: f64,
    aspect_ratio: Option<AspectRatio>,
    /// Unit vectors paired with the order-1 reconstruction.
    aspect_directions: &'static str,
}

fn cmd_ah_fit(args: &AhFitArgs) -> Run {
    let mesh = load_lenient(&args.mesh)?;
    let cap = load_map(&args.map, &mesh)?;
    let samples = cap_samples(&cap.positions);
    let fit = ah_fit(mesh.vertices(), &samples, args.order, cap.spec.zstar)?;
    write_json(&args.output, &fit.model)?;
    if let Some(p) = &args.summary {
        let ratio = match ah_fit(mesh.vertices(), &samples, 1, cap.spec.zstar) {
            Ok(f1) => {
                let y = ah_reconstruct(&f1.model, &samples)?;
                let x: Vec<Vec3> = cap.positions.iter().map(|p| p.normalize()).collect();
                Some(aspect_ratio(&y, &x)?)
            }
            Err(_) => None,
        };
        let summary = FitSummary {
            order: args.order,
            coefficients_per_coordinate: fit.model.coefficients.len(),
            rms: fit.rms,
            condition: fit.condition,
            aspect_ratio: ratio,
            aspect_directions: "cap positions",
        };
        write_json(p, &summary)?;
    }
    println!("order {} rms {:.6e}", args.order, fit.rms);
    Ok(())
}

#[derive(Serialize)]
struct ReconReport {
    order: usize,
    rms: f64,
}

fn cmd_ah_recon(args: &AhReconArgs) -> Run {
    let model: AHModel = read_json(&args.model)?;
    let cap: CapMap = read_json(&args.map)?;
    let points = ah_reconstruct(&model, &cap_samples(&cap.positions))?;
    let faces = match args.mesh.as_deref().map(load_lenient).transpose()? {
        Some(m) => {
            if m.num_vertices() != points.len() {
                return Err(usage("mesh and map have different vertex counts"));
            }
            let rms = (points.iter().zip(m.vertices()).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / points.len() as f64).sqrt();
            println!("order {} rms {:.6e}", model.order, rms);
            if let Some(p) = &args.report {
                write_json(p, &ReconReport { order: model.order, rms })?;
            }
            m.faces().to_vec()
        }
        None if args.report.is_some() => return Err(usage("--report needs --mesh")),
        None => Vec::new(),
    };
    // Low orders can collapse faces; the connectivity is kept regardless.
    Ok(save_mesh(&args.output, &TriangleMesh::new_unchecked(points, faces))?)
}

fn cmd_gen(args: &GenArgs) -> Run {
    let min = 16;
    if args.n < min && !matches!(args.shape, Shape::Icosphere) {
        return Err(usage(format!("--n must be at least {min}")));
    }
    let mesh = match args.shape {
        Shape::Cap => shapes::geodesic_cap(args.half_angle, args.n)?,
        Shape::StretchedCap => shapes::stretched_cap(args.half_angle, args.n, args.stretch)?,
        Shape::BumpySphere => shapes::bumpy_sphere(args.seed, args.n),
        Shape::Blob => shapes::blob(args.seed, args.n),
        Shape::Icosphere => {
            if args.level > 7 {
                return Err(usage("--level must be at most 7"));
            }
            shapes::icosphere(args.level)
        }
    };
    mesh.validate_topology()?;
    Ok(save_mesh(&args.output, &mesh)?)
}

#[derive(Serialize)]
struct MetricsSummary {
    mean_abs_d_area: f64,
    mean_abs_d_angle: f64,
    d_face: f64,
    d_surface: Option<f64>,
}

fn cmd_metrics(args: &MetricsArgs) -> Run {
    let mesh = load(&args.mesh)?;
    let (report, d_face, d_surface) = match (&args.map, &args.image) {
        (Some(p), _) => {
            let cap = load_map(p, &mesh)?;
            let image = TriangleMesh::new_unchecked(cap.positions.clone(), mesh.faces().to_vec());
            (cap_map_distortion(&mesh, &cap)?, face_area_deviation(&image), None)
        }
        (None, Some(p)) => {
            let image = load(p)?;
            if image.faces() != mesh.faces() {
                return Err(usage("image mesh must share the source connectivity"));
            }
            let r = DistortionReport::compute(&mesh, Image::Surface(image.vertices()))?;
            (r, face_area_deviation(&image), Some(surface_distance(&image, &mesh)))
        }
        (None, None) => return Err(usage("give --map or --image")),
    };
    let summary = MetricsSummary {
        mean_abs_d_area: report.mean_abs_d_area,
        mean_abs_d_angle: report.mean_abs_d_angle,
        d_face,
        d_surface,
    };
    match &args.output {
        Some(p) => write_json(p, &summary)?,
        None => println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes")),
    }
    if let Some(p) = &args.faces_csv {
        write_text(p, &report.faces_csv())?;
    }
    if let Some(prefix) = &args.histograms {
        let name = |tag: &str| {
            let stem = prefix.file_name().and_then(|s| s.to_str()).unwrap_or("hist");
            prefix.with_file_name(format!("{stem}_{tag}.csv"))
        };
        write_text(&name("area"), &report.area_histogram.to_csv())?;
        write_text(&name("angle"), &report.angle_histogram.to_csv())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RemeshReport {
    vertices: usize,
    faces: usize,
    d_face: f64,
    mean_face_area: f64,
    d_surface: f64,
    bbox_diagonal: f64,
    #[serde(flatten)]
    pullback: PullbackSummary,
}

fn cmd_remesh(args: &RemeshArgs) -> Run {
    let mesh = load(&args.mesh)?;
    let cap = load_map(&args.map, &mesh)?;
    let (grid, theta) = match args.latlong {
        Some((nt, np)) => {
            let (m, t) = latlong_cap_mesh(&cap.spec, nt, np)?;
            (m, Some(t))
        }
        None => (cap_uniform_mesh(&cap.spec, args.count)?, None),
    };
    let back = pullback(&mesh, &cap, &grid, args.strict)?;
    match &theta {
        Some(t) => save_mesh_with_scalar(&args.output, &back.mesh, "theta", t)?,
        None => save_mesh(&args.output, &back.mesh)?,
    }
    let n = back.mesh.num_faces();
    let report = RemeshReport {
        vertices: back.mesh.num_vertices(),
        faces: n,
        d_face: face_area_deviation(&back.mesh),
        mean_face_area: back.mesh.total_area() / n as f64,
        d_surface: surface_distance(&back.mesh, &mesh),
        bbox_diagonal: mesh.bbox_diagonal(),
        pullback: back.summary(),
    };
    match &args.report {
        Some(p) => write_json(p, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
    }
}

fn configure_threads() -> Run {
    let Ok(v) = std::env::var("CAPMAP_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("CAPMAP_THREADS={v:?} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Run {
    configure_threads()?;
    match &cli.command {
        Command::ParamOpen(a) => cmd_param(a, false),
        Command::ParamClosed(a) => cmd_param(a, true),
        Command::AhFit(a) => cmd_ah_fit(a),
        Command::AhRecon(a) => cmd_ah_recon(a),
        Command::Gen(a) => cmd_gen(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Remesh(a) => cmd_remesh(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
