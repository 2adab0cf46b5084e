//! `capmax` subcommands as library functions.
//!
//! Every command writes into one output directory and finishes by writing
//! `manifest.json`, which lists each file with its size and SHA-256.

// `!(a > b)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use capmax_core::capacity::{analyze, capacity_delta, CapacityDelta, CapacityReport, SnrParams};
use capmax_core::constants::angular;
use capmax_core::export::{self, FieldPart};
use capmax_core::optimizer::{maximize_with, starting_points, MultistartReport, OptRunReport};
use capmax_core::scene::{parse_scene, preset_source, FrequencySpec, Interval};
use capmax_core::{fixtures, DesignVector, ForwardModel, OptimizerConfig, Scene};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Largest gradcheck relative error that still exits 0.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Minimum ring population used by the phase-front metric.
pub const RING_MIN_CELLS: usize = 8;

#[derive(Debug, Parser)]
#[command(
    name = "capmax",
    version,
    about = "Sensing-capacity maximization for compressive antennas"
)]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "CAPMAX_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a scene and check every invariant.
    Validate(SceneArgs),
    /// Solve one transmitter at one frequency and export field maps.
    SolveField(SolveFieldArgs),
    /// Maximize sensing capacity from seeded random starts.
    Optimize(OptimizeArgs),
    /// Compare the analytic gradient with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Capacity diagnostics for one design.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SceneArgs {
    /// Scene file, or `preset:reflection`, `preset:transmission`, `preset:desk`.
    #[arg(long)]
    pub scene: String,
    /// Frequencies in Hz: `START:STOP:COUNT` or a comma list.
    #[arg(long)]
    pub freqs: Option<String>,
    /// Permittivity box `LO,HI`.
    #[arg(long)]
    pub bounds: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    #[arg(long, default_value = "capmax-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SolveFieldArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Design CSV (`pixel,ix,iy,eps_r,mu_r`); uniform `x = 1` when absent.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Transmitter index; the middle one when absent.
    #[arg(long)]
    pub transmitter: Option<usize>,
    /// Frequency index; the highest frequency when absent.
    #[arg(long)]
    pub freq_index: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OptimizeArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub starts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    /// Single run from the uniform design `x = 1` instead of random starts.
    #[arg(long)]
    pub uniform_start: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    /// Coordinates to check, drawn without replacement.
    #[arg(long, default_value_t = 5)]
    pub coords: usize,
    /// Relative finite-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `gradcheck.csv` and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub scene: SceneArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub design: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Check = 1,
    Input = 2,
    Runtime = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn input(e: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ExitKind::Input,
            error: e.into(),
        }
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ExitKind::Runtime,
            error: e.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

impl From<capmax_core::Error> for CliError {
    fn from(e: capmax_core::Error) -> Self {
        use capmax_core::Error as E;
        match e {
            E::Scene(_) | E::InvalidInput(_) | E::Format(_) | E::DimensionMismatch(_) => {
                Self::input(e)
            }
            E::Solver(_) | E::RankDeficient { .. } | E::Io(_) => Self::runtime(e),
        }
    }
}

impl From<capmax_core::scene::SceneError> for CliError {
    fn from(e: capmax_core::scene::SceneError) -> Self {
        Self::input(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

// ---------------------------------------------------------------------------
// Scene resolution

pub fn load_scene(args: &SceneArgs) -> CliResult<Scene> {
    let mut scene = match args.scene.strip_prefix("preset:") {
        Some("desk") => fixtures::desk_scene(false, true),
        Some(name) => {
            let text = preset_source(name)
                .ok_or_else(|| CliError::input(anyhow!("unknown preset {name:?}")))?;
            parse_scene(text).map_err(CliError::input)?
        }
        None => {
            let text = fs::read_to_string(&args.scene)
                .with_context(|| format!("reading {}", args.scene))
                .map_err(CliError::input)?;
            parse_scene(&text)
                .with_context(|| format!("in {}", args.scene))
                .map_err(CliError::input)?
        }
    };
    if let Some(f) = &args.freqs {
        scene = scene
            .with_frequencies(parse_freqs(f)?)
            .map_err(CliError::input)?;
    }
    if let Some(b) = &args.bounds {
        let (lo, hi) = parse_pair(b)?;
        scene = scene
            .with_eps_bounds(Interval::new(lo, hi))
            .map_err(CliError::input)?;
    }
    Ok(scene)
}

fn parse_freqs(s: &str) -> CliResult<FrequencySpec> {
    let bad = |m: String| CliError::input(anyhow!("--freqs {s:?}: {m}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
    let spec = if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected START:STOP:COUNT".into()));
        }
        let count = parts[2]
            .trim()
            .parse::<usize>()
            .map_err(|e| bad(e.to_string()))?;
        FrequencySpec::linspace_hz(num(parts[0])?, num(parts[1])?, count)
    } else {
        FrequencySpec::from_hz(s.split(',').map(num).collect::<CliResult<Vec<_>>>()?)
    };
    spec.map_err(CliError::input)
}

fn parse_pair(s: &str) -> CliResult<(f64, f64)> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(anyhow!("--bounds {s:?}: {e}")))?;
    match v[..] {
        [lo, hi] => Ok((lo, hi)),
        _ => Err(CliError::input(anyhow!("--bounds {s:?}: expected LO,HI"))),
    }
}

fn load_design(scene: &Scene, path: Option<&Path>) -> CliResult<DesignVector> {
    match path {
        None => Ok(DesignVector::uniform(scene, 1.0)),
        Some(p) => {
            let f = fs::File::open(p)
                .with_context(|| format!("opening {}", p.display()))
                .map_err(CliError::input)?;
            export::read_design_csv(scene, BufReader::new(f))
                .with_context(|| format!("in {}", p.display()))
                .map_err(CliError::input)
        }
    }
}

// ---------------------------------------------------------------------------
// Output directory and manifest

#[derive(Debug, Clone, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub scene: String,
    pub freqs: Option<String>,
    pub bounds: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub files: Vec<ManifestEntry>,
}

/// Collects files written under one directory.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<ManifestEntry>,
    manifest: RunManifest,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl OutputDir {
    pub fn create(
        root: &Path,
        command: &str,
        scene: &SceneArgs,
        seed: Option<u64>,
    ) -> CliResult<Self> {
        fs::create_dir_all(root)
            .with_context(|| format!("creating {}", root.display()))
            .map_err(CliError::runtime)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            manifest: RunManifest {
                command: command.into(),
                scene: scene.scene.clone(),
                freqs: scene.freqs.clone(),
                bounds: scene.bounds.clone(),
                seed,
                tool_version: env!("CARGO_PKG_VERSION").into(),
                started_unix: unix_now(),
                finished_unix: 0.0,
                files: Vec::new(),
            },
        })
    }

    /// Writes `name` from a closure over a buffered writer.
    pub fn write<F>(&mut self, name: &str, f: F) -> CliResult<()>
    where
        F: FnOnce(&mut dyn Write) -> capmax_core::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_vec_pretty(value).map_err(CliError::runtime)?;
        text.push(b'\n');
        self.write_bytes(name, &text)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.root.join(name);
        let mut w = BufWriter::new(
            fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(CliError::runtime)?,
        );
        w.write_all(bytes)
            .and_then(|_| w.flush())
            .map_err(CliError::runtime)?;
        self.files.push(ManifestEntry {
            path: name.into(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<RunManifest> {
        self.manifest.finished_unix = unix_now();
        self.manifest.files = std::mem::take(&mut self.files);
        let text = serde_json::to_vec_pretty(&self.manifest).map_err(CliError::runtime)?;
        fs::write(self.root.join("manifest.json"), text).map_err(CliError::runtime)?;
        Ok(self.manifest)
    }
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Debug, Clone, Serialize)]
pub struct ValidateSummary {
    pub grid: [usize; 2],
    pub cell_size: f64,
    pub pml_cells: usize,
    pub frequencies_hz: Vec<f64>,
    pub transmitters: usize,
    pub imaging_cells: usize,
    pub scatterer_pixels: usize,
    pub pec_cells: usize,
    pub channels: usize,
    pub variables: usize,
}

pub fn cmd_validate(args: &SceneArgs) -> CliResult<ValidateSummary> {
    let s = load_scene(args)?;
    Ok(ValidateSummary {
        grid: [s.grid().nx, s.grid().ny],
        cell_size: s.grid().cell_size,
        pml_cells: s.grid().pml_thickness,
        frequencies_hz: s.frequencies().hz().to_vec(),
        transmitters: s.transmitters().len(),
        imaging_cells: s.imaging().len(),
        scatterer_pixels: s.scatterers().len(),
        pec_cells: s.pec().len(),
        channels: s.num_channels(),
        variables: s.num_variables(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldReport {
    pub transmitter: usize,
    pub frequency_hz: f64,
    /// Ring-averaged circular variance of the phase over the imaging region.
    pub ring_phase_variance: f64,
    pub magnitude_scale: export::ImageScale,
    pub phase_scale: export::ImageScale,
}

/// Field of one transmitter at one frequency, plus the phase-front metric.
pub fn solve_field(
    scene: &Scene,
    x: &DesignVector,
    transmitter: Option<usize>,
    freq_index: Option<usize>,
) -> CliResult<(capmax_core::FieldMap, f64, usize, usize)> {
    let t = transmitter.unwrap_or(scene.transmitters().len() / 2);
    let k = freq_index.unwrap_or(scene.frequencies().len() - 1);
    let src = *scene.transmitters().get(t).ok_or_else(|| {
        CliError::input(anyhow!(
            "transmitter {t} does not exist (scene has {})",
            scene.transmitters().len()
        ))
    })?;
    let hz = *scene.frequencies().hz().get(k).ok_or_else(|| {
        CliError::input(anyhow!(
            "frequency index {k} does not exist (scene has {})",
            scene.frequencies().len()
        ))
    })?;
    let model = ForwardModel::new(scene)?;
    let sys = model.assemble(x, angular(hz))?;
    let field = sys.solve_multi(&[model.point_source_rhs(src)?])?.remove(0);
    let var = field.ring_phase_variance(src, scene.imaging(), RING_MIN_CELLS);
    Ok((field, var, t, k))
}

pub fn cmd_solve_field(args: &SolveFieldArgs) -> CliResult<FieldReport> {
    let scene = load_scene(&args.scene)?;
    let x = load_design(&scene, args.design.as_deref())?;
    let (field, variance, t, k) = solve_field(&scene, &x, args.transmitter, args.freq_index)?;
    let mut out = OutputDir::create(&args.out.out, "solve-field", &args.scene, None)?;
    out.write("field.csv", |w| export::write_field_csv(&field, w))?;
    let mut mag = None;
    out.write("magnitude.pgm", |w| {
        mag = Some(export::write_field_pgm(&field, FieldPart::Magnitude, w)?);
        Ok(())
    })?;
    let mut phase = None;
    out.write("phase.pgm", |w| {
        phase = Some(export::write_field_pgm(&field, FieldPart::Phase, w)?);
        Ok(())
    })?;
    let report = FieldReport {
        transmitter: t,
        frequency_hz: scene.frequencies().hz()[k],
        ring_phase_variance: variance,
        magnitude_scale: mag.expect("written"),
        phase_scale: phase.expect("written"),
    };
    out.write_json("field_report.json", &report)?;
    out.finish()?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub start: usize,
    pub termination: capmax_core::optimizer::Termination,
    pub iterations: usize,
    pub solves: usize,
    pub initial_capacity_bits: f64,
    pub final_capacity_bits: f64,
    pub initial_condition_number: f64,
    pub final_condition_number: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeSummary {
    pub best: usize,
    /// Uniform `x = 1` design: the unloaded antenna.
    pub baseline: CapacityReport,
    pub best_initial: CapacityReport,
    pub best_final: CapacityReport,
    /// Best final design relative to the baseline.
    pub delta_vs_baseline: CapacityDelta,
    /// Best final design relative to its own starting design.
    pub delta_vs_start: CapacityDelta,
    pub runs: Vec<RunSummary>,
}

pub struct OptimizeOutcome {
    pub summary: OptimizeSummary,
    pub report: MultistartReport,
    pub manifest: RunManifest,
}

pub fn cmd_optimize(args: &OptimizeArgs) -> CliResult<OptimizeOutcome> {
    let scene = load_scene(&args.scene)?;
    let cfg = OptimizerConfig {
        max_iters: args.max_iters,
        num_starts: args.starts,
        seed: args.seed,
        ..OptimizerConfig::default()
    };
    cfg.validate()?;
    let model = ForwardModel::new(&scene)?;
    let uniform = DesignVector::uniform(&scene, 1.0);
    let starts = if args.uniform_start {
        vec![uniform.clone()]
    } else {
        starting_points(&scene, cfg.num_starts, cfg.seed)
    };
    let runs: Vec<OptRunReport> =
        capmax_core::par::try_map(&starts, |x0| maximize_with(&model, x0, &cfg))?;
    let best = runs.iter().enumerate().fold(0, |b, (i, r)| {
        if r.final_report.logdet_gramian > runs[b].final_report.logdet_gramian {
            i
        } else {
            b
        }
    });
    let report = MultistartReport { runs, best };
    let baseline = analyze(&model.green(&uniform)?, SnrParams::default());
    let b = report.best_run();

    let mut out = OutputDir::create(&args.out.out, "optimize", &args.scene, Some(args.seed))?;
    out.write_bytes("scene.toml", scene.to_scene_string().as_bytes())?;
    out.write("singular_values_before.csv", |w| {
        baseline.write_singular_values_csv(w)
    })?;
    out.write("singular_values_after.csv", |w| {
        b.final_report.write_singular_values_csv(w)
    })?;
    for (i, r) in report.runs.iter().enumerate() {
        out.write(&format!("trace_{i}.csv"), |w| {
            export::write_trace_csv(&r.trace, w)
        })?;
    }
    out.write("design_final.csv", |w| {
        export::write_design_csv(&scene, &b.final_design, w)
    })?;
    out.write_bytes(
        "design_final.toml",
        design_fragment(&scene, &b.final_design).as_bytes(),
    )?;

    let summary = OptimizeSummary {
        best,
        baseline: baseline.clone(),
        best_initial: b.initial.clone(),
        best_final: b.final_report.clone(),
        delta_vs_baseline: capacity_delta(&baseline, &b.final_report)?,
        delta_vs_start: capacity_delta(&b.initial, &b.final_report)?,
        runs: report
            .runs
            .iter()
            .enumerate()
            .map(|(i, r)| RunSummary {
                start: i,
                termination: r.termination,
                iterations: r.iterations,
                solves: r.solves,
                initial_capacity_bits: r.initial.capacity_bits,
                final_capacity_bits: r.final_report.capacity_bits,
                initial_condition_number: r.initial.condition_number,
                final_condition_number: r.final_report.condition_number,
            })
            .collect(),
    };
    out.write_json("report.json", &summary)?;
    out.write_json("runs.json", &report)?;
    let manifest = out.finish()?;
    Ok(OptimizeOutcome {
        summary,
        report,
        manifest,
    })
}

/// Scene-format fragment listing the optimized pixel values.
pub fn design_fragment(scene: &Scene, x: &DesignVector) -> String {
    let mut s = String::from("# Optimized scatterer values, one entry per pixel: [ix, iy, eps_r, mu_r]\n[design]\npixels = [\n");
    for (p, &cell) in scene.scatterers().iter().enumerate() {
        let (ix, iy) = scene.grid().coords(cell);
        s.push_str(&format!(
            "  [{ix}, {iy}, {:?}, {:?}],\n",
            x.eps_r()[p],
            x.mu_r()[p]
        ));
    }
    s.push_str("]\n");
    s
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckRow {
    pub coordinate: usize,
    pub channel: String,
    pub pixel: usize,
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub rows: Vec<GradcheckRow>,
    pub max_relative_error: f64,
    pub passed: bool,
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> CliResult<GradcheckReport> {
    let scene = load_scene(&args.scene)?;
    if !(args.h > 0.0) {
        return Err(CliError::input(anyhow!("--h must be positive")));
    }
    let model = ForwardModel::new(&scene)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let (lo, hi) = DesignVector::flat_bounds(&scene);
    // Stay clear of the bounds so both difference points are feasible.
    let flat: Vec<f64> = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| l + (h - l) * rng.random_range(0.1..0.9))
        .collect();
    let x = DesignVector::uniform(&scene, 1.0).with_flat(&flat)?;
    let vars = DesignVector::variables(&scene);
    let mut coords: Vec<usize> = (0..vars.len()).collect();
    for i in 0..coords.len() {
        let j = rng.random_range(i..coords.len());
        coords.swap(i, j);
    }
    coords.truncate(args.coords.min(vars.len()));

    let grad = model.grad_logdet(&x)?;
    let rows = coords
        .iter()
        .map(|&l| {
            let step = args.h * flat[l].abs().max(1.0);
            let eval = |d: f64| {
                let mut v = flat.clone();
                v[l] = (v[l] + d).clamp(lo[l], hi[l]);
                let xv = x.with_flat(&v)?;
                Ok::<_, CliError>((model.objective(&xv)?, v[l]))
            };
            let ((fp, xp), (fm, xm)) = (eval(step)?, eval(-step)?);
            let fd = (fp - fm) / (xp - xm);
            let an = grad.gradient[l];
            Ok(GradcheckRow {
                coordinate: l,
                channel: format!("{:?}", vars[l].0).to_lowercase(),
                pixel: vars[l].1,
                analytic: an,
                finite_difference: fd,
                relative_error: (an - fd).abs() / fd.abs().max(an.abs()).max(f64::MIN_POSITIVE),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let max = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    let report = GradcheckReport {
        rows,
        max_relative_error: max,
        passed: max <= GRADCHECK_TOLERANCE,
    };
    if let Some(dir) = &args.out {
        let mut out = OutputDir::create(dir, "gradcheck", &args.scene, Some(args.seed))?;
        out.write_bytes("gradcheck.csv", gradcheck_table(&report).as_bytes())?;
        out.finish()?;
    }
    Ok(report)
}

pub fn gradcheck_table(r: &GradcheckReport) -> String {
    let mut s =
        String::from("coordinate,channel,pixel,analytic,finite_difference,relative_error\n");
    for row in &r.rows {
        s.push_str(&format!(
            "{},{},{},{:e},{:e},{:e}\n",
            row.coordinate,
            row.channel,
            row.pixel,
            row.analytic,
            row.finite_difference,
            row.relative_error
        ));
    }
    s
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<CapacityReport> {
    let scene = load_scene(&args.scene)?;
    let x = load_design(&scene, args.design.as_deref())?;
    let g = ForwardModel::new(&scene)?.green(&x)?;
    let report = analyze(&g, SnrParams::default());
    let mut out = OutputDir::create(&args.out.out, "evaluate", &args.scene, None)?;
    out.write_json("capacity.json", &report)?;
    out.write("singular_values.csv", |w| {
        report.write_singular_values_csv(w)
    })?;
    out.write("green.bin", |w| g.write_binary(w))?;
    out.finish()?;
    Ok(report)
}

/// Runs a parsed command line, printing human-readable results.
pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(CliError::runtime)?;
    }
    match &cli.command {
        Command::Validate(a) => {
            let s = cmd_validate(a)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&s).map_err(CliError::runtime)?
            );
            println!("scene is valid");
        }
        Command::SolveField(a) => {
            let r = cmd_solve_field(a)?;
            println!(
                "transmitter {} at {:.4} GHz: ring phase variance {:.6}",
                r.transmitter,
                r.frequency_hz / 1e9,
                r.ring_phase_variance
            );
            println!("wrote {}", a.out.out.display());
        }
        Command::Optimize(a) => {
            let o = cmd_optimize(a)?;
            let s = &o.summary;
            for r in &s.runs {
                println!(
                    "start {}: {:?} after {} iterations, capacity {:.2} -> {:.2} bits, condition {:.3e} -> {:.3e}",
                    r.start,
                    r.termination,
                    r.iterations,
                    r.initial_capacity_bits,
                    r.final_capacity_bits,
                    r.initial_condition_number,
                    r.final_condition_number
                );
            }
            println!(
                "best start {}: capacity delta {:+.2} bits vs uniform design, condition-number ratio {:.3}",
                s.best, s.delta_vs_baseline.bits, s.delta_vs_baseline.condition_ratio
            );
            println!("wrote {}", a.out.out.display());
        }
        Command::Gradcheck(a) => {
            let r = cmd_gradcheck(a)?;
            println!(
                "{:>6} {:>13} {:>6} {:>15} {:>15} {:>10}",
                "coord", "channel", "pixel", "analytic", "fd", "rel err"
            );
            for row in &r.rows {
                println!(
                    "{:>6} {:>13} {:>6} {:>15.8e} {:>15.8e} {:>10.2e}",
                    row.coordinate,
                    row.channel,
                    row.pixel,
                    row.analytic,
                    row.finite_difference,
                    row.relative_error
                );
            }
            println!(
                "max relative error {:.3e} (tolerance {GRADCHECK_TOLERANCE:e})",
                r.max_relative_error
            );
            if !r.passed {
                return Err(CliError {
                    kind: ExitKind::Check,
                    error: anyhow!("gradient check failed"),
                });
            }
        }
        Command::Evaluate(a) => {
            let r = cmd_evaluate(a)?;
            println!(
                "capacity {:.3} bits, ln det {:.4}, condition number {:.4e}{}",
                r.capacity_bits,
                r.logdet_gramian,
                r.condition_number,
                if r.rank_deficient {
                    " (rank deficient)"
                } else {
                    ""
                }
            );
        }
    }
    Ok(())
}
