use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use qpat::acoustics::{simulate_forward, DetectorArray, Medium2D, SolverConfig, TimeSeries};
use qpat::eval::{self, MetricRow};
use qpat::grid::{PlaneGrid, Volume, VoxelGrid};
use qpat::phantom::{assign_properties, rasterize, sample_phantom, PhantomSpec, SamplerRanges};
use qpat::photon::{compute_p0, simulate_fluence, IlluminationGeometry, LightSource, TransportConfig};
use qpat::pipeline::{self, read_field, read_mask, write_field, Method, PipelineConfig};
use qpat::quant::{self, ChromophoreBasis, LinearMap, RegionKind, RegionSpec};
use qpat::recon::{reconstruct, ReconConfig, ReconImage};
use qpat::slab::{ad_inverse, DisMeasurement, InverseConfig};
use qpat::{QpatError, Result};

/// Quantitative photoacoustic imaging digital twin.
#[derive(Parser)]
#[command(name = "qpat", version)]
struct Cli {
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample phantom specs or rasterize one into a label map.
    Phantom(PhantomArgs),
    /// Monte Carlo fluence and initial pressure for one wavelength.
    Fluence(FluenceArgs),
    /// Forward acoustic simulation of an initial-pressure slice.
    Acoustic(AcousticArgs),
    /// Delay-and-sum reconstruction.
    Reconstruct(ReconstructArgs),
    /// Absorption estimate from a reconstruction.
    Estimate(EstimateArgs),
    /// sO2 from multi-wavelength absorption images.
    Unmix(UnmixArgs),
    /// Inverse adding-doubling of slab measurements.
    Iad(IadArgs),
    /// Region metrics of an estimate against a reference image.
    Evaluate(EvaluateArgs),
    /// Full chain from a pipeline config.
    Pipeline,
    /// Experiment reproduction scenarios.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct GridArgs {
    /// Voxels per side.
    #[arg(long, default_value_t = 160)]
    dims: usize,
    #[arg(long, default_value_t = 0.25)]
    spacing: f64,
}

impl GridArgs {
    fn grid(&self) -> Result<VoxelGrid> {
        VoxelGrid::centered([self.dims; 3], self.spacing)
    }
}

#[derive(Args)]
struct PhantomArgs {
    /// Rasterize this spec (writes labels.bin into --out).
    #[arg(long, conflicts_with = "count")]
    spec: Option<PathBuf>,
    /// Number of specs to sample into --out.
    #[arg(long)]
    count: Option<usize>,
    /// Sample without inclusions.
    #[arg(long)]
    homogeneous: bool,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct FluenceArgs {
    #[arg(long)]
    phantom: PathBuf,
    #[arg(long, default_value_t = 800.0)]
    wavelength: f64,
    /// Photon packets; scientific notation accepted.
    #[arg(long, default_value_t = 1e6)]
    photons: f64,
    /// Initial pressure output (default: p0.bin next to --out).
    #[arg(long)]
    p0: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args)]
struct AcousticArgs {
    /// Initial pressure volume; its central slice is simulated.
    #[arg(long)]
    p0: PathBuf,
    #[arg(long, default_value_t = 336)]
    grid_size: usize,
    #[arg(long, default_value_t = 0.25)]
    spacing: f64,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    ts: PathBuf,
    /// Beamforming sound speed, mm/µs.
    #[arg(long, default_value_t = qpat::phantom::WATER_SOUND_SPEED)]
    sos: f64,
    /// Also write a PGM preview next to the output.
    #[arg(long)]
    preview: bool,
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    method: Method,
    #[arg(long)]
    image: PathBuf,
    /// JSON with `slope` and `intercept` (and optionally `fit_r`).
    #[arg(long)]
    map: PathBuf,
    /// Fluence volume (gtphi only); its central slice is used.
    #[arg(long)]
    phi: Option<PathBuf>,
}

#[derive(Args)]
struct UnmixArgs {
    #[arg(long, num_args = 2.., required = true)]
    images: Vec<PathBuf>,
    #[arg(long, num_args = 2.., required = true)]
    wavelengths: Vec<f64>,
}

#[derive(Args)]
struct IadArgs {
    /// CSV with wavelength_nm, total_reflectance, diffuse_transmittance.
    #[arg(long)]
    meas: PathBuf,
    #[arg(long)]
    thickness: f64,
    #[arg(long, default_value_t = 0.7)]
    g: f64,
    #[arg(long, default_value_t = 1.4)]
    n: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Directory of mask rasters; names starting with `background` are
    /// background regions, all others inclusions.
    #[arg(long)]
    masks: PathBuf,
    #[arg(long, default_value = "phantom")]
    phantom_id: String,
    #[arg(long, default_value_t = 0.0)]
    wavelength: f64,
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario name.
    #[arg(value_parser = ["depth-decorrelation"])]
    name: String,
    #[arg(long, default_value_t = 10)]
    count: usize,
}

fn required_out(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| QpatError::Config("--out is required".into()))
}

fn read_config<T: for<'de> Deserialize<'de> + Default>(cli: &Cli) -> Result<T> {
    match &cli.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).map_err(qpat::io::with_path(p))?).map_err(|e| QpatError::Config(format!("{}: {e}", p.display()))),
        None => Ok(T::default()),
    }
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FluenceFile {
    source: Option<LightSource>,
    transport: TransportConfig,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AcousticFile {
    detectors: DetectorArray,
    solver: SolverConfig,
}

fn cmd_phantom(cli: &Cli, a: &PhantomArgs) -> Result<()> {
    let out = required_out(cli)?;
    std::fs::create_dir_all(out)?;
    if let Some(spec) = &a.spec {
        let spec = PhantomSpec::read(spec)?;
        let labels = rasterize(&spec, &a.grid.grid()?)?;
        labels.write(&out.join("labels.bin"))?;
        println!("{}: {} materials", spec.id, labels.materials.len());
        return Ok(());
    }
    let count = a.count.ok_or_else(|| QpatError::Config("either --spec or --count is required".into()))?;
    let ranges = if a.homogeneous { SamplerRanges::homogeneous() } else { read_config::<SamplerRanges>(cli)? };
    let seed = cli.seed.unwrap_or(0);
    for i in 0..count {
        let id = format!("phantom_{i:03}");
        let spec = sample_phantom(&id, pipeline::derive_seed(seed, &id), &ranges)?;
        spec.write(&out.join(format!("{id}.json")))?;
    }
    println!("wrote {count} phantom specs to {}", out.display());
    Ok(())
}

fn cmd_fluence(cli: &Cli, a: &FluenceArgs) -> Result<()> {
    let out = required_out(cli)?;
    let file: FluenceFile = read_config(cli)?;
    if !(a.photons >= 1.0 && a.photons.fract() == 0.0) {
        return Err(QpatError::Config("--photons must be a positive integer".into()));
    }
    let spec = PhantomSpec::read(&a.phantom)?;
    let grid = a.grid.grid()?;
    let labels = rasterize(&spec, &grid)?;
    let props = assign_properties(&labels, &spec.label_materials()?, a.wavelength)?;
    let source = file.source.unwrap_or(LightSource::Ring(IlluminationGeometry::default()));
    let run = simulate_fluence(&props, &source, a.photons as u64, cli.seed.unwrap_or(0), &file.transport)?;
    run.fluence.to_volume().write(out, "fluence_per_mm2")?;
    let p0 = compute_p0(&props.mu_a_volume(), &run.fluence, &props.gruneisen_volume())?;
    let p0_path = a.p0.clone().unwrap_or_else(|| out.with_file_name("p0.bin"));
    p0.to_volume().write(&p0_path, "initial_pressure")?;
    println!(
        "absorbed {:.4}, escaped {:.4}, energy defect {:.2e}",
        run.energy.absorbed / run.energy.launched,
        run.energy.escaped / run.energy.launched,
        run.energy.relative_defect()
    );
    Ok(())
}

fn cmd_acoustic(cli: &Cli, a: &AcousticArgs) -> Result<()> {
    let out = required_out(cli)?;
    let file: AcousticFile = read_config(cli)?;
    let p0 = Volume::read(&a.p0)?;
    let grid = PlaneGrid::square_centered(a.grid_size, a.spacing, file.detectors.center);
    let source = p0.slice_z(p0.grid.central_slice()).resample(grid);
    let ts = simulate_forward(&source, &Medium2D::water(grid), &file.detectors, &file.solver)?;
    ts.write(out)?;
    println!("{} elements x {} samples at {} us", ts.n_elements, ts.n_samples, ts.dt);
    Ok(())
}

fn cmd_reconstruct(cli: &Cli, a: &ReconstructArgs) -> Result<()> {
    let out = required_out(cli)?;
    let mut cfg: ReconConfig = read_config(cli)?;
    cfg.sound_speed = a.sos;
    let img = reconstruct(&TimeSeries::read(&a.ts)?, &cfg)?;
    img.write(out)?;
    if a.preview {
        img.write_pgm(&out.with_extension("pgm"))?;
    }
    Ok(())
}

fn cmd_estimate(cli: &Cli, a: &EstimateArgs) -> Result<()> {
    let out = required_out(cli)?;
    let map: LinearMap = qpat::io::read_json(&a.map)?;
    map.validate()?;
    let img = ReconImage::read(&a.image)?.image;
    let est = match a.method {
        Method::Cal => quant::apply_calibration(&img, &map),
        Method::Gtphi => {
            let phi = a.phi.as_ref().ok_or_else(|| QpatError::Config("gtphi needs --phi".into()))?;
            let phi = Volume::read(phi)?;
            let slice = phi.slice_z(phi.grid.central_slice()).resample(img.grid);
            quant::fluence_correct(&img, &slice, &map)?
        }
    };
    write_field(out, &est, "mu_a_per_cm")
}

fn cmd_unmix(cli: &Cli, a: &UnmixArgs) -> Result<()> {
    let out = required_out(cli)?;
    if a.images.len() != a.wavelengths.len() {
        return Err(QpatError::Config("one wavelength per image is required".into()));
    }
    let images = a.images.iter().map(|p| read_field(p)).collect::<Result<Vec<_>>>()?;
    let so2 = quant::linear_unmix_so2(&images, &ChromophoreBasis::hemoglobin(&a.wavelengths)?)?;
    write_field(out, &so2, "so2_fraction")
}

#[derive(Deserialize)]
struct MeasRow {
    wavelength_nm: f64,
    total_reflectance: f64,
    diffuse_transmittance: f64,
}

#[derive(Serialize)]
struct PropsRow {
    wavelength_nm: f64,
    mu_a: f64,
    mu_s_prime: f64,
    residual: f64,
}

fn cmd_iad(cli: &Cli, a: &IadArgs) -> Result<()> {
    let cfg: InverseConfig = read_config(cli)?;
    let rows: Vec<MeasRow> = eval::read_csv(&a.meas)?;
    let mut results = Vec::new();
    for r in rows {
        let meas = DisMeasurement { total_reflectance: r.total_reflectance, diffuse_transmittance: r.diffuse_transmittance, wavelength_nm: r.wavelength_nm };
        let fit = ad_inverse(&meas, a.thickness, a.g, a.n, &cfg)?;
        results.push(PropsRow { wavelength_nm: r.wavelength_nm, mu_a: fit.mu_a, mu_s_prime: fit.mu_s_prime, residual: fit.residual });
    }
    match &cli.out {
        Some(p) => eval::write_csv(p, &results),
        None => {
            println!("wavelength_nm,mu_a,mu_s_prime,residual");
            for r in &results {
                println!("{},{:.6},{:.6},{:.3e}", r.wavelength_nm, r.mu_a, r.mu_s_prime, r.residual);
            }
            Ok(())
        }
    }
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let out = required_out(cli)?;
    let pred = read_field(&a.pred)?;
    let reference = read_field(&a.reference)?;
    let mut masks: Vec<PathBuf> = std::fs::read_dir(&a.masks).map_err(qpat::io::with_path(&a.masks))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    masks.sort();
    if masks.is_empty() {
        return Err(QpatError::Config(format!("no mask rasters in {}", a.masks.display())));
    }
    let mut rows = Vec::new();
    for path in masks {
        let (grid, mask) = read_mask(&path)?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let kind = if id.starts_with("background") { RegionKind::Background } else { RegionKind::Inclusion };
        let est = quant::aggregate_region(&pred, &RegionSpec::new(grid, mask.clone(), kind)?)?;
        let r = quant::aggregate_region(&reference, &RegionSpec::new(grid, mask, RegionKind::Background)?)?;
        rows.push(MetricRow::new(&a.phantom_id, a.wavelength, &id, kind, est, r)?);
    }
    eval::write_csv(out, &rows)?;
    for agg in eval::summarize(&rows)?.aggregates {
        println!("{}: rel. error {:.1} %, abs. error {:.3} /cm", agg.kind.as_str(), agg.rel_err, agg.abs_err);
    }
    Ok(())
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_ref().ok_or_else(|| QpatError::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::read(path)?;
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.fluence.seed = s;
    }
    Ok(cfg)
}

fn cmd_pipeline(cli: &Cli) -> Result<()> {
    let outcome = pipeline::run_pipeline(&pipeline_config(cli)?)?;
    for m in &outcome.methods {
        for agg in &m.report.aggregates {
            println!("{} {}: rel. error {:.1} %, r {:?}", m.method.as_str(), agg.kind.as_str(), agg.rel_err, agg.pearson_r);
        }
        if let Some(g) = m.gcnr_summary {
            println!("{} gCNR {:.2}", m.method.as_str(), g);
        }
    }
    println!("manifest {} ({})", outcome.manifest_path.display(), outcome.manifest.content_hash()?);
    Ok(())
}

fn cmd_scenario(cli: &Cli, a: &ScenarioArgs) -> Result<()> {
    let cfg = pipeline_config(cli)?;
    let s = pipeline::scenario_depth_decorrelation(&cfg, a.count, cli.seed.unwrap_or(0))?;
    println!("depth_mm,pearson_r");
    for c in &s.correlations {
        println!("{},{:.4}", c.depth_mm, c.pearson_r);
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(QpatError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| QpatError::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Phantom(a) => cmd_phantom(cli, a),
        Command::Fluence(a) => cmd_fluence(cli, a),
        Command::Acoustic(a) => cmd_acoustic(cli, a),
        Command::Reconstruct(a) => cmd_reconstruct(cli, a),
        Command::Estimate(a) => cmd_estimate(cli, a),
        Command::Unmix(a) => cmd_unmix(cli, a),
        Command::Iad(a) => cmd_iad(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Pipeline => cmd_pipeline(cli),
        Command::Scenario(a) => cmd_scenario(cli, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
