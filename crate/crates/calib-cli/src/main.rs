//! `calib`: drive the calibration library from run-configuration files.
//!
//! Subcommands: `calibrate` (staged refinement), `simulate` (synthetic
//! scene + noisy correspondences + perturbed start), `remap` (pixel map
//! between two models, optional image warp), `evaluate` (score against
//! ground truth). Exit codes: 0 success, 1 configuration/parse/validation
//! failure, 2 numerical failure at runtime.

use calib_core::io::{
    load_calibration, load_correspondences, load_kitti_calib, load_raster, load_run_config,
    load_scene, save_calibration, save_calibration_with_trace, save_correspondences,
    save_raster, save_run_config, save_scene, CorrespondenceFrame, FileError, RunConfig,
};
use calib_core::metrics::evaluate_calibration;
use calib_core::nalgebra::Vector2;
use calib_core::pipeline::{run_refinement, RefinementErrorKind};
use calib_core::provider::{
    generate_scene, sample_perturbed_params, synthetic_correspondences, StaticProvider,
    SyntheticOracle,
};
use calib_core::remap::{build_remap, warp_image};
use calib_core::residuals::ParamBlock;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "calib",
    version,
    about = "Joint camera intrinsic + camera-LiDAR extrinsic calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Refine intrinsics and extrinsics from correspondences or a synthetic scene.
    Calibrate(CommonArgs),
    /// Generate a scene, per-iteration noisy correspondences, and a perturbed start.
    Simulate(CommonArgs),
    /// Build the pixel remap between two calibrations; optionally warp an image.
    Remap(CommonArgs),
    /// Score an estimated calibration against ground truth.
    Evaluate(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration progress on stderr.
    #[arg(long)]
    verbose: bool,
}

/// Failures are split by exit code: bad inputs (1) versus numerics that
/// gave up at runtime (2).
enum RunError {
    Usage(String),
    Numerical(String),
}

impl From<FileError> for RunError {
    fn from(e: FileError) -> Self {
        RunError::Usage(e.to_string())
    }
}

impl From<calib_core::remap::RemapError> for RunError {
    fn from(e: calib_core::remap::RemapError) -> Self {
        RunError::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Calibrate(args) => calibrate(args),
        Command::Simulate(args) => simulate(args),
        Command::Remap(args) => remap(args),
        Command::Evaluate(args) => evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(RunError::Numerical(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

/// Loads the config and applies command-line overrides.
fn effective_config(args: &CommonArgs) -> Result<RunConfig, RunError> {
    let mut config = load_run_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.output_dir = Some(out.clone());
    }
    Ok(config)
}

fn output_dir(config: &RunConfig) -> Result<&Path, RunError> {
    let dir = config
        .output_dir
        .as_deref()
        .ok_or_else(|| RunError::Usage("no output directory: set `output_dir` or pass --out".into()))?;
    std::fs::create_dir_all(dir)
        .map_err(|e| RunError::Usage(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

/// Ground truth may be a calibration JSON or a KITTI text file; pick by
/// extension.
fn load_params_auto(path: &Path, kitti_camera: u32) -> Result<ParamBlock, RunError> {
    let is_kitti = path.extension().is_some_and(|e| e == "txt");
    if is_kitti {
        let (intrinsics, pose) = load_kitti_calib(path, kitti_camera)?;
        Ok(ParamBlock::new(intrinsics, pose))
    } else {
        Ok(load_calibration(path)?.params)
    }
}

fn calibrate(args: &CommonArgs) -> Result<(), RunError> {
    let config = effective_config(args)?;
    config.validate_for_calibrate().map_err(RunError::Usage)?;
    let out = output_dir(&config)?.to_owned();

    let (initial, provider): (ParamBlock, Box<dyn calib_core::CorrespondenceProvider>) =
        if let Some(corr_path) = &config.correspondences {
            let frames = load_correspondences(corr_path)?;
            let batches: Vec<_> = frames.into_iter().map(|f| f.correspondences).collect();
            let initial = load_params_auto(
                config.initial_params.as_ref().expect("validated"),
                config.kitti_camera,
            )?;
            (initial, Box::new(StaticProvider { batches }))
        } else {
            let scene = load_scene(config.scene.as_ref().expect("validated"))?;
            let truth = load_params_auto(
                config.ground_truth.as_ref().expect("validated"),
                config.kitti_camera,
            )?;
            config
                .noise
                .validate(config.refinement.n_total)
                .map_err(|e| RunError::Usage(format!("noise schedule: {e}")))?;
            let initial = match &config.initial_params {
                Some(path) => load_params_auto(path, config.kitti_camera)?,
                None => sample_perturbed_params(&truth, &config.perturbation, config.seed)
                    .map_err(|e| RunError::Numerical(e.to_string()))?,
            };
            let oracle = SyntheticOracle {
                scene,
                truth,
                schedule: config.noise.clone(),
                seed: config.seed,
            };
            (initial, Box::new(oracle))
        };

    // The prior anchors the principal point at its starting estimate.
    let anchor = Vector2::new(initial.intrinsics.cx, initial.intrinsics.cy);
    let (params, trace) = run_refinement(&initial, &anchor, provider.as_ref(), &config.refinement)
        .map_err(|e| {
            let message = e.to_string();
            match e.kind {
                RefinementErrorKind::InvalidConfig(_) => RunError::Usage(message),
                _ => RunError::Numerical(message),
            }
        })?;

    if args.verbose {
        for (k, s) in trace.iterations.iter().enumerate() {
            eprintln!(
                "iteration {k}: objective {:.6e}, {} correspondences, {:?}",
                s.objective, s.correspondence_count, s.termination
            );
        }
    }
    let path = out.join("calibration.json");
    save_calibration_with_trace(&params, &trace, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn simulate(args: &CommonArgs) -> Result<(), RunError> {
    let config = effective_config(args)?;
    config.validate_for_simulate().map_err(RunError::Usage)?;
    let out = output_dir(&config)?.to_owned();
    let truth = load_params_auto(
        config.ground_truth.as_ref().expect("validated"),
        config.kitti_camera,
    )?;
    config
        .noise
        .validate(config.refinement.n_total)
        .map_err(|e| RunError::Usage(format!("noise schedule: {e}")))?;

    let scene = generate_scene(&truth, &config.scene_spec, config.seed);
    save_scene(&scene, out.join("scene.csv"))?;

    let mut frames = Vec::new();
    for iteration in 0..config.refinement.n_total {
        let correspondences =
            synthetic_correspondences(&scene, &truth, &config.noise, iteration, config.seed)
                .map_err(|e| RunError::Numerical(e.to_string()))?;
        if args.verbose {
            eprintln!("iteration {iteration}: {} correspondences", correspondences.len());
        }
        frames.push(CorrespondenceFrame { frame_id: iteration as u64, correspondences });
    }
    save_correspondences(&frames, out.join("correspondences.csv"))?;

    let initial = match &config.initial_params {
        Some(path) => load_params_auto(path, config.kitti_camera)?,
        None => sample_perturbed_params(&truth, &config.perturbation, config.seed)
            .map_err(|e| RunError::Numerical(e.to_string()))?,
    };
    save_calibration(&initial, None, out.join("initial_params.json"))?;
    save_calibration(&truth, None, out.join("ground_truth.json"))?;

    // A ready-to-run config pointing at the generated files. Calibration
    // replays the static batches; switch `correspondences` for `scene` to
    // re-predict through the synthetic matcher instead.
    let mut next = config.clone();
    next.correspondences = Some("correspondences.csv".into());
    next.scene = None;
    next.initial_params = Some("initial_params.json".into());
    next.ground_truth = Some("ground_truth.json".into());
    next.estimated = None;
    next.output_dir = None;
    save_run_config(&next, out.join("runconfig.json"))?;
    println!("{}", out.display());
    Ok(())
}

fn remap(args: &CommonArgs) -> Result<(), RunError> {
    let config = effective_config(args)?;
    config.validate_for_remap().map_err(RunError::Usage)?;
    let out = output_dir(&config)?.to_owned();
    let source =
        load_params_auto(config.source_params.as_ref().expect("validated"), config.kitti_camera)?;
    let target =
        load_params_auto(config.target_params.as_ref().expect("validated"), config.kitti_camera)?;

    let field = build_remap(&source.intrinsics, &target.intrinsics);
    let path = out.join("remap.rmap");
    let file = std::fs::File::create(&path)
        .map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
    field.write_to(std::io::BufWriter::new(file))?;
    if args.verbose {
        let total = field.width() as usize * field.height() as usize;
        eprintln!("valid cells: {} of {total}", field.valid_count());
    }

    if let Some(image_path) = &config.image {
        let image = load_raster(image_path)?;
        let warped = warp_image(&image, &field)?;
        save_raster(&warped, out.join("warped.png"))?;
    }
    println!("{}", path.display());
    Ok(())
}

fn evaluate(args: &CommonArgs) -> Result<(), RunError> {
    let config = effective_config(args)?;
    config.validate_for_evaluate().map_err(RunError::Usage)?;
    let estimated = load_calibration(config.estimated.as_ref().expect("validated"))?.params;
    let truth = load_params_auto(
        config.ground_truth.as_ref().expect("validated"),
        config.kitti_camera,
    )?;

    let report = evaluate_calibration(
        &estimated.intrinsics,
        &estimated.extrinsics,
        &truth.intrinsics,
        &truth.extrinsics,
        config.n_rays,
        config.seed,
    )
    .map_err(|e| RunError::Numerical(e.to_string()))?;

    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(dir) = &config.output_dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| RunError::Usage(format!("{}: {e}", dir.display())))?;
        let path = dir.join("error_report.json");
        std::fs::write(&path, format!("{text}\n"))
            .map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}
